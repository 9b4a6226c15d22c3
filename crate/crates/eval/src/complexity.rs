//! Operation counts of the transformer, as concrete numbers.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Infer,
    Train,
}

impl std::str::FromStr for Phase {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "infer" => Ok(Self::Infer),
            "train" => Ok(Self::Train),
            _ => Err(format!("unknown phase {s:?}, expected infer or train")),
        }
    }
}

/// infer = M(K·d² + K²·d) + K(2L+2)·d;
/// train = 2MBKd(d+K) + 2BK(2L+2)d.
pub fn theoretical_complexity(k: u64, l: u64, layers: u64, d: u64, batch: u64, phase: Phase) -> u64 {
    let input = k * (2 * l + 2) * d;
    match phase {
        Phase::Infer => layers * (k * d * d + k * k * d) + input,
        Phase::Train => 2 * layers * batch * k * d * (d + k) + 2 * batch * input,
    }
}
