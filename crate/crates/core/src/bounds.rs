//! Fat-shattering generalization bound for Lipschitz classifiers.
//!
//! With `D = (16 C)^ddim` bounding the fat-shattering dimension, a classifier
//! making `k` errors on `n` samples has, with probability `1 - delta`,
//! error at most
//!
//! ```text
//! k/n + sqrt( (2/n) * ( D log2(34 e n / D) log2(578 n) + log2(4/delta) ) )
//! ```
//!
//! provided `n >= D / (34 e)`.

use std::f64::consts::E;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::json::ext_float;
use crate::metric::MarginReport;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInput {
    pub n: u64,
    pub k: u64,
    pub delta: f64,
    pub ddim: f64,
    pub surrogate_c: f64,
}

impl BoundInput {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParameter("n must be positive".into()));
        }
        if self.k > self.n {
            return Err(Error::InvalidParameter(format!("k = {} exceeds n = {}", self.k, self.n)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidParameter(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.ddim >= 1.0 && self.ddim.is_finite()) {
            return Err(Error::InvalidParameter(format!("ddim must be >= 1, got {}", self.ddim)));
        }
        if !(self.surrogate_c > 0.0 && self.surrogate_c.is_finite()) {
            return Err(Error::InvalidParameter(format!("surrogate C must be finite and positive, got {}", self.surrogate_c)));
        }
        Ok(())
    }
}

/// `(16 C)^ddim`, with `overflow` set when the power is not finite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Surrogate {
    #[serde(with = "ext_float")]
    pub value: f64,
    pub overflow: bool,
}

pub fn fat_dim_surrogate(surrogate_c: f64, ddim: f64) -> Result<Surrogate> {
    if !(surrogate_c > 0.0) {
        return Err(Error::InvalidParameter(format!("surrogate C must be positive, got {surrogate_c}")));
    }
    let value = (16.0 * surrogate_c).powf(ddim);
    Ok(Surrogate {
        value,
        overflow: !value.is_finite(),
    })
}

/// Smallest `n` for which the bound applies: `D / (34 e)`.
pub fn required_n(d: f64) -> f64 {
    d / (34.0 * E)
}

/// The bound expression for a given `D` (no clamping). Fails with
/// `ConditionNotMet` when `n < D / (34 e)`.
pub fn bound_for_dimension(n: u64, k: u64, delta: f64, d: f64) -> Result<f64> {
    let nf = n as f64;
    let req = required_n(d);
    if !(nf >= req) {
        return Err(Error::ConditionNotMet { n, required_n: req });
    }
    let capacity = d * (34.0 * E * nf / d).log2() * (578.0 * nf).log2();
    Ok(k as f64 / nf + ((2.0 / nf) * (capacity + (4.0 / delta).log2())).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub input: BoundInput,
    pub surrogate: Surrogate,
    #[serde(with = "ext_float")]
    pub required_n: f64,
    pub raw: f64,
    pub clamped: f64,
    /// `raw > 1`: the bound says nothing.
    pub vacuous: bool,
}

pub fn generalization_bound(input: &BoundInput) -> Result<BoundResult> {
    input.validate()?;
    let surrogate = fat_dim_surrogate(input.surrogate_c, input.ddim)?;
    let raw = bound_for_dimension(input.n, input.k, input.delta, surrogate.value)?;
    Ok(BoundResult {
        input: *input,
        surrogate,
        required_n: required_n(surrogate.value),
        raw,
        clamped: raw.clamp(0.0, 1.0),
        vacuous: raw > 1.0,
    })
}

/// How `C` is derived from a margin report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurrogateMode {
    /// `C = L * diam_all`.
    Diam,
    /// `C = L * (diam_pos + diam_neg) + 2`.
    Intra,
}

impl std::str::FromStr for SurrogateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diam" => Ok(SurrogateMode::Diam),
            "intra" => Ok(SurrogateMode::Intra),
            other => Err(Error::InvalidParameter(format!("unknown C mode {other:?} (expected diam or intra)"))),
        }
    }
}

pub fn surrogate_from_report(report: &MarginReport, lip_constant: f64, mode: SurrogateMode) -> f64 {
    match mode {
        SurrogateMode::Diam => lip_constant * report.diam_all,
        SurrogateMode::Intra => lip_constant * (report.diam_pos + report.diam_neg) + 2.0,
    }
}
