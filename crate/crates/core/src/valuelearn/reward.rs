//! Return of one order's decision sequence.

use crate::time::Millis;

/// How an order left the pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Dispatched { penalty: Millis, response: Millis, detour: Millis },
    Expired { penalty: Millis },
}

/// Discounted return in ms. A dispatched order pays `-slot` per whole slot
/// waited (discounted by `gamma^k`), then the remainder of its response time,
/// then collects `p - t_d`. An expired order returns `-p`.
///
/// At `gamma = 1` a dispatch returns `p - t_r - t_d`.
pub fn accumulated_reward(outcome: Outcome, gamma: f64, slot: Millis) -> f64 {
    match outcome {
        Outcome::Expired { penalty } => -(penalty as f64),
        Outcome::Dispatched { penalty, response, detour } => {
            let steps = response / slot;
            let rem = response - steps * slot;
            let mut total = 0.0;
            let mut disc = 1.0;
            for _ in 0..steps {
                total -= disc * slot as f64;
                disc *= gamma;
            }
            total - disc * rem as f64 + (penalty - detour) as f64
        }
    }
}
