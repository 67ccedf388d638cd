//! Human interventions and the mean time between them.

use chrono::Duration;
use serde::{Deserialize, Serialize};

use crate::time::{as_hours, Timestamp};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionCategory {
    /// Did not stop the robot from carrying on; excluded from MTBI.
    Minor,
    Serious,
    Fatal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterventionRecord {
    pub timestamp: Timestamp,
    pub category: InterventionCategory,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub operator: String,
}

/// Window length in hours divided by the number of non-minor interventions
/// inside `[start, start + window)`. `None` when there are none.
pub fn compute_mtbi(log: &[InterventionRecord], start: Timestamp, window: Duration) -> Option<f64> {
    if window <= Duration::zero() {
        return None;
    }
    let end = start + window;
    let counted = log
        .iter()
        .filter(|r| r.category != InterventionCategory::Minor)
        .filter(|r| r.timestamp >= start && r.timestamp < end)
        .count();
    (counted > 0).then(|| as_hours(window) / counted as f64)
}
