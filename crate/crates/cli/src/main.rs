use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use watter_core::simharness::{
    audit_log, generate_workers, ingest_orders, read_events, report_from_log, simulate, synth_orders, write_events,
    write_order_rows, MetricsReport, SimConfig, SynthConfig, Timing,
};
use watter_core::strategy::{StrategyKind, ThresholdSource};
use watter_core::thresholdopt::{fit_em_bic, EmOptions, GmmModel};
use watter_core::valuelearn::{train, TrainConfig, ValueNet};

#[derive(Parser)]
#[command(name = "watter", version, about = "Order pooling with threshold-based dispatch")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation over an order file.
    Simulate {
        #[arg(long)]
        orders: PathBuf,
        /// JSON simulation config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        strategy: Option<StrategyArg>,
        /// Mixture model JSON for `expect` thresholds.
        #[arg(long)]
        gmm: Option<PathBuf>,
        /// Value-network checkpoint for `expect` thresholds (wins over --gmm).
        #[arg(long)]
        net: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        /// Add wall-clock timing to the report (makes it non-reproducible).
        #[arg(long)]
        timing: bool,
    },
    /// Fit a Gaussian mixture to the extra times of served orders in an event log.
    FitGmm {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value_t = 4)]
        k_max: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a value network on historical orders.
    TrainValue {
        #[arg(long)]
        orders: PathBuf,
        #[arg(long)]
        gmm: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// JSON training config; defaults apply when omitted.
        #[arg(long)]
        train_config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch statistics as JSON.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Summarize event logs.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        logs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic order file.
    Synth {
        #[arg(long, default_value_t = 5000)]
        orders: usize,
        #[arg(long, default_value_t = 3600.0)]
        duration_s: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// JSON generator config; flags above override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Online,
    Timeout,
    Expect,
}

impl From<StrategyArg> for StrategyKind {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Online => StrategyKind::Online,
            StrategyArg::Timeout => StrategyKind::Timeout,
            StrategyArg::Expect => StrategyKind::Threshold,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn sim_config(path: Option<&Path>) -> Result<SimConfig> {
    let cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            SimConfig::from_json(&text)?
        }
        None => SimConfig::default(),
    };
    Ok(cfg)
}

fn load_orders(path: &Path, cfg: &SimConfig) -> Result<Vec<watter_core::domain::Order>> {
    let model = cfg.travel_model()?;
    let (orders, stats) = ingest_orders(open(path)?, &model, cfg)?;
    if stats.malformed + stats.zero_cost > 0 {
        log::warn!("{}: skipped {} malformed and {} zero-cost rows", path.display(), stats.malformed, stats.zero_cost);
    }
    Ok(orders)
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    orders: &Path,
    config: Option<&Path>,
    strategy: Option<StrategyArg>,
    gmm: Option<&Path>,
    net: Option<&Path>,
    out: &Path,
    log_path: Option<&Path>,
    timing: bool,
) -> Result<()> {
    let mut cfg = sim_config(config)?;
    if let Some(s) = strategy {
        cfg.strategy = s.into();
    }
    let orders = load_orders(orders, &cfg)?;
    let source = match (net, gmm) {
        (Some(p), _) => Some(ThresholdSource::ValueNet(Box::new(ValueNet::load(open(p)?)?))),
        (None, Some(p)) => Some(ThresholdSource::GmmOptimal(read_json::<GmmModel>(p)?)),
        (None, None) => None,
    };
    if cfg.strategy == StrategyKind::Threshold && source.is_none() {
        bail!("the expect strategy needs --gmm or --net");
    }
    let model = cfg.travel_model()?;
    let start = Instant::now();
    let outcome = simulate(&orders, &model, &cfg, source)?;
    let wall = start.elapsed().as_secs_f64();
    audit_log(&outcome.events, &orders, cfg.weights())?;
    let mut report = outcome.report;
    if timing {
        report.timing = Some(Timing { wall_s: wall, per_order_s: wall / orders.len().max(1) as f64 });
    }
    let mut w = create(out)?;
    serde_json::to_writer_pretty(&mut w, &report)?;
    writeln!(w)?;
    if let Some(p) = log_path {
        write_events(&outcome.events, create(p)?)?;
    }
    log::info!("served {} of {} orders", report.served, report.orders);
    Ok(())
}

fn cmd_fit_gmm(log_path: &Path, k_max: usize, out: &Path) -> Result<()> {
    let rows = read_events(open(log_path)?)?;
    let extras: Vec<f64> = rows
        .iter()
        .filter(|r| r.event.cause().is_some())
        .filter_map(|r| r.t_e)
        .map(|ms| ms / 1000.0)
        .collect();
    if extras.is_empty() {
        bail!("{} has no dispatched orders", log_path.display());
    }
    let fit = fit_em_bic(&extras, 1..=k_max.max(1), &EmOptions::default())?;
    let mut w = create(out)?;
    serde_json::to_writer_pretty(&mut w, &fit.model)?;
    writeln!(w)?;
    log::info!("fitted {} components to {} samples", fit.model.weights.len(), extras.len());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    orders: &Path,
    gmm: Option<&Path>,
    config: Option<&Path>,
    train_config: Option<&Path>,
    epochs: Option<usize>,
    out: &Path,
    history: Option<&Path>,
) -> Result<()> {
    let cfg = sim_config(config)?;
    let mut tc: TrainConfig = match train_config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(e) = epochs {
        tc.epochs = e;
        tc.warm_epochs = tc.warm_epochs.min(e);
    }
    let orders = load_orders(orders, &cfg)?;
    let mixture = gmm.map(read_json::<GmmModel>).transpose()?;
    let model = cfg.travel_model()?;
    let workers = generate_workers(&orders, cfg.workers, cfg.max_capacity, cfg.seed)?;
    let trained = train(&orders, &workers, &model, &cfg, mixture.as_ref(), &tc)?;
    let mut w = create(out)?;
    trained.net.save(&mut w)?;
    w.flush()?;
    if let Some(p) = history {
        let mut w = create(p)?;
        serde_json::to_writer_pretty(&mut w, &trained.epochs)?;
        writeln!(w)?;
    }
    Ok(())
}

fn tradeoff(r: &MetricsReport) -> serde_json::Value {
    let total = r.mean_response_s + r.mean_detour_s;
    let share = if total > 0.0 { r.mean_response_s / total } else { 0.0 };
    json!({
        "mean_response_s": r.mean_response_s,
        "mean_detour_s": r.mean_detour_s,
        "response_share": share,
        "detour_share": if total > 0.0 { 1.0 - share } else { 0.0 },
    })
}

fn metric_rows(r: &MetricsReport) -> Vec<(&'static str, f64)> {
    vec![
        ("orders", r.orders as f64),
        ("served", r.served as f64),
        ("rejected", r.rejected as f64),
        ("service_rate", r.service_rate),
        ("mean_extra_time_s", r.mean_extra_time_s),
        ("total_extra_time_s", r.total_extra_time_s),
        ("unified_cost_s", r.unified_cost_s),
        ("worker_travel_s", r.worker_travel_s),
        ("mean_response_s", r.mean_response_s),
        ("mean_detour_s", r.mean_detour_s),
        ("groups", r.groups as f64),
        ("mean_group_size", r.mean_group_size),
        ("dispatch_online", r.dispatch_causes.online as f64),
        ("dispatch_timeout", r.dispatch_causes.timeout as f64),
        ("dispatch_threshold", r.dispatch_causes.threshold as f64),
    ]
}

fn cmd_report(logs: &[PathBuf], format: Format, out: Option<&Path>) -> Result<()> {
    let mut runs = Vec::with_capacity(logs.len());
    for p in logs {
        let rows = read_events(open(p)?)?;
        runs.push((p.display().to_string(), report_from_log(&rows)?));
    }
    let mut w: Box<dyn Write> = match out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    match format {
        Format::Json => {
            let items: Vec<_> =
                runs.iter().map(|(name, r)| json!({ "log": name, "report": r, "tradeoff": tradeoff(r) })).collect();
            serde_json::to_writer_pretty(&mut w, &json!({ "runs": items }))?;
            writeln!(w)?;
        }
        Format::Csv => {
            let mut csv = csv_writer(&mut w);
            csv.write_record(["log", "metric", "value"])?;
            for (name, r) in &runs {
                for (metric, value) in metric_rows(r) {
                    csv.write_record([name.as_str(), metric, &value.to_string()])?;
                }
            }
            csv.flush()?;
            drop(csv);
            writeln!(w)?;
            let mut csv = csv_writer(&mut w);
            csv.write_record(["log", "mean_response_s", "mean_detour_s", "response_share", "detour_share"])?;
            for (name, r) in &runs {
                let t = tradeoff(r);
                let f = |k: &str| t[k].as_f64().unwrap_or(0.0).to_string();
                csv.write_record([
                    name.clone(),
                    f("mean_response_s"),
                    f("mean_detour_s"),
                    f("response_share"),
                    f("detour_share"),
                ])?;
            }
            csv.flush()?;
        }
    }
    Ok(())
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().from_writer(w)
}

fn cmd_synth(orders: usize, duration_s: f64, seed: u64, config: Option<&Path>, out: &Path) -> Result<()> {
    let mut cfg: SynthConfig = match config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    cfg.orders = orders;
    cfg.duration_s = duration_s;
    cfg.seed = seed;
    write_order_rows(&synth_orders(&cfg), create(out)?)?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Simulate { orders, config, strategy, gmm, net, out, log, timing } => cmd_simulate(
            &orders,
            config.as_deref(),
            strategy,
            gmm.as_deref(),
            net.as_deref(),
            &out,
            log.as_deref(),
            timing,
        ),
        Command::FitGmm { log, k_max, out } => cmd_fit_gmm(&log, k_max, &out),
        Command::TrainValue { orders, gmm, config, train_config, epochs, out, history } => cmd_train(
            &orders,
            gmm.as_deref(),
            config.as_deref(),
            train_config.as_deref(),
            epochs,
            &out,
            history.as_deref(),
        ),
        Command::Report { logs, format, out } => cmd_report(&logs, format, out.as_deref()),
        Command::Synth { orders, duration_s, seed, config, out } => cmd_synth(orders, duration_s, seed, config.as_deref(), &out),
    }
}
