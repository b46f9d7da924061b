//! Conversion of raw per-label logits into the vector representation the
//! mixture is fit on.
//!
//! Three representations are supported: log-probabilities (the default),
//! probabilities, and the untouched logits. Log-probabilities are computed
//! with the max-shifted log-sum-exp, so adding a constant to every logit
//! cancels in the shift itself.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Output format the mixture operates on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Representation {
    #[default]
    #[serde(rename = "log-prob")]
    LogProb,
    #[serde(rename = "prob")]
    Prob,
    #[serde(rename = "logits")]
    Logits,
}

impl Representation {
    pub fn as_str(self) -> &'static str {
        match self {
            Representation::LogProb => "log-prob",
            Representation::Prob => "prob",
            Representation::Logits => "logits",
        }
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Representation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "log-prob" | "logprob" => Ok(Representation::LogProb),
            "prob" => Ok(Representation::Prob),
            "logits" => Ok(Representation::Logits),
            other => Err(Error::InvalidConfig(format!(
                "unknown representation mode `{other}` (expected log-prob, prob or logits)"
            ))),
        }
    }
}

/// Unnormalized per-label scores over the task's label space.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    /// Validates that there are at least two labels and every score is finite.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidShape(format!(
                "logit vector needs at least 2 labels, got {}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "logit {} is not finite ({})",
                pos, values[pos]
            )));
        }
        Ok(LogitVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn n_classes(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for LogitVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// A logit vector mapped into one of the supported representations.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionVector {
    values: Vec<f64>,
    mode: Representation,
}

impl PredictionVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mode(&self) -> Representation {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

impl AsRef<[f64]> for PredictionVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// `log Σ exp(v)` using the max shift. Returns `-inf` for an empty slice or
/// when every entry is `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Log-softmax of the logits.
///
/// Each entry is `(o_n - max) - ln Σ exp(o_i - max)`. The only place a
/// constant offset enters is `o_n - max`, so any shift for which `o + c` is
/// exactly representable leaves the result bit-identical.
pub fn to_log_prob(logits: &LogitVector) -> PredictionVector {
    let o = logits.values();
    let max = o.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = o.iter().map(|v| v - max).collect();
    let log_norm = shifted.iter().map(|s| s.exp()).sum::<f64>().ln();
    PredictionVector {
        values: shifted.into_iter().map(|s| s - log_norm).collect(),
        mode: Representation::LogProb,
    }
}

pub fn to_representation(logits: &LogitVector, mode: Representation) -> PredictionVector {
    match mode {
        Representation::LogProb => to_log_prob(logits),
        Representation::Prob => {
            let lp = to_log_prob(logits);
            PredictionVector {
                values: lp.values.iter().map(|v| v.exp()).collect(),
                mode: Representation::Prob,
            }
        }
        Representation::Logits => PredictionVector {
            values: logits.values().to_vec(),
            mode: Representation::Logits,
        },
    }
}

/// Parses the mode name and converts; unknown names yield `InvalidConfig`.
pub fn to_representation_named(logits: &LogitVector, mode: &str) -> Result<PredictionVector> {
    Ok(to_representation(logits, mode.parse()?))
}
