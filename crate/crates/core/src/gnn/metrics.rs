use serde::{Deserialize, Serialize};

/// Confusion counts with Security as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.fp + self.tn
    }

    pub fn record(&mut self, actual_security: bool, predicted_security: bool) {
        match (actual_security, predicted_security) {
            (true, true) => self.tp += 1,
            (true, false) => self.fn_ += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
        }
    }
}

/// Rates with a zero denominator are `None` (serialized as `null`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
    pub fnr: Option<f64>,
    pub fpr: Option<f64>,
    pub confusion: Confusion,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl Metrics {
    pub fn from_confusion(c: Confusion) -> Self {
        Metrics {
            accuracy: ratio(c.tp + c.tn, c.total()),
            f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
            fnr: ratio(c.fn_, c.tp + c.fn_),
            fpr: ratio(c.fp, c.fp + c.tn),
            confusion: c,
        }
    }
}
