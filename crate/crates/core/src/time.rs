//! Integer-millisecond clock used throughout the engine.

/// Simulation time or duration in milliseconds.
pub type Millis = i64;

pub const MS_PER_SEC: Millis = 1_000;

pub fn secs_to_ms(secs: f64) -> Millis {
    (secs * MS_PER_SEC as f64).round() as Millis
}

pub fn ms_to_secs(ms: Millis) -> f64 {
    ms as f64 / MS_PER_SEC as f64
}

/// Converts a real-valued millisecond quantity (extra time, thresholds) to seconds.
pub fn fms_to_secs(ms: f64) -> f64 {
    ms / MS_PER_SEC as f64
}
