//! Reference solver for tiny instances: projected subgradient descent on
//! `c * max_diam_pairs rho_M + sum_cross_pairs max(0, 2 - rho_M)` over the PSD
//! cone. Slow but structurally independent of the ADMM solver; used to check
//! it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::admm::Variant;
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::metric::{mahalanobis_distance, MetricMatrix};

pub const MAX_N: usize = 40;
pub const MAX_P: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Initial step length; step `t` moves `step_size / sqrt(t)` along the
    /// normalized subgradient.
    pub step_size: f64,
    pub iterations: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            step_size: 0.5,
            iterations: 100_000,
            restarts: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub metric: MetricMatrix,
    pub objective: f64,
    /// Frobenius norm of the subgradient at the returned metric.
    pub subgradient_norm: f64,
    pub restart_objectives: Vec<f64>,
}

struct Instance {
    p: usize,
    cross: Vec<Vec<f64>>,
    diam: Vec<Vec<f64>>,
}

fn instance(data: &LabeledDataset, variant: Variant) -> Result<Instance> {
    data.require_both_classes()?;
    let mut cross = Vec::new();
    let mut diam = Vec::new();
    for i in 0..data.n() {
        for j in i + 1..data.n() {
            let d: Vec<f64> = data.row(i).iter().zip(data.row(j)).map(|(a, b)| a - b).collect();
            let same = data.label(i) == data.label(j);
            if variant == Variant::LipD || same {
                diam.push(d.clone());
            }
            if !same {
                cross.push(d);
            }
        }
    }
    if diam.is_empty() {
        return Err(Error::NoSameLabelPairs);
    }
    Ok(Instance { p: data.p(), cross, diam })
}

fn quad(m: &[f64], d: &[f64], p: usize) -> f64 {
    let mut acc = 0.0;
    for i in 0..p {
        for j in 0..p {
            acc += d[i] * m[i * p + j] * d[j];
        }
    }
    acc
}

impl Instance {
    fn objective(&self, m: &[f64], c: f64) -> f64 {
        let dmax = self.diam.iter().map(|d| quad(m, d, self.p)).fold(0.0f64, f64::max);
        c * dmax + self.cross.iter().map(|d| (2.0 - quad(m, d, self.p)).max(0.0)).sum::<f64>()
    }

    /// Subgradient with the first maximizing diameter pair.
    fn subgradient(&self, m: &[f64], c: f64) -> Vec<f64> {
        let p = self.p;
        let mut g = vec![0.0; p * p];
        let mut best = (f64::NEG_INFINITY, 0);
        for (k, d) in self.diam.iter().enumerate() {
            let v = quad(m, d, p);
            if v > best.0 {
                best = (v, k);
            }
        }
        let add = |g: &mut Vec<f64>, d: &[f64], w: f64| {
            for i in 0..p {
                for j in 0..p {
                    g[i * p + j] += w * d[i] * d[j];
                }
            }
        };
        add(&mut g, &self.diam[best.1], c);
        for d in &self.cross {
            if quad(m, d, p) < 2.0 {
                add(&mut g, d, -1.0);
            }
        }
        g
    }
}

/// `c * max rho over diameter pairs + sum of hinges over cross pairs`,
/// straight from pairwise distances.
pub fn oracle_objective(data: &LabeledDataset, metric: &MetricMatrix, c: f64, variant: Variant) -> Result<f64> {
    data.require_both_classes()?;
    let mut dmax: Option<f64> = None;
    let mut slack = 0.0;
    for i in 0..data.n() {
        for j in i + 1..data.n() {
            let rho = mahalanobis_distance(metric, data.row(i), data.row(j))?;
            let same = data.label(i) == data.label(j);
            if variant == Variant::LipD || same {
                dmax = Some(dmax.map_or(rho, |d| d.max(rho)));
            }
            if !same {
                slack += (2.0 - rho).max(0.0);
            }
        }
    }
    let dmax = dmax.ok_or(Error::NoSameLabelPairs)?;
    Ok(c * dmax.max(0.0) + slack)
}

pub fn oracle_solve(data: &LabeledDataset, c: f64, variant: Variant, config: &OracleConfig) -> Result<OracleResult> {
    if data.n() > MAX_N || data.p() > MAX_P {
        return Err(Error::InstanceTooLarge(format!(
            "N = {}, p = {} (limits N <= {MAX_N}, p <= {MAX_P})",
            data.n(),
            data.p()
        )));
    }
    if !(config.step_size > 0.0) || config.iterations == 0 || config.restarts == 0 {
        return Err(Error::InvalidParameter("oracle step_size, iterations and restarts must be positive".into()));
    }
    if !(c > 0.0) {
        return Err(Error::InvalidParameter(format!("c must be positive, got {c}")));
    }
    let inst = instance(data, variant)?;
    let p = inst.p;

    let mut restart_objectives = Vec::with_capacity(config.restarts);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for r in 0..config.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ r as u64);
        let b: Vec<f64> = (0..p * p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut m = vec![0.0; p * p];
        for i in 0..p {
            for j in 0..p {
                m[i * p + j] = (0..p).map(|k| b[i * p + k] * b[j * p + k]).sum();
            }
        }
        let mut local = (inst.objective(&m, c), m.clone());
        for t in 1..=config.iterations {
            let g = inst.subgradient(&m, c);
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                break;
            }
            let step = config.step_size / (t as f64).sqrt() / norm;
            let moved: Vec<f64> = m.iter().zip(&g).map(|(a, b)| a - step * b).collect();
            m = linalg::psd_project(&moved, p)?;
            let obj = inst.objective(&m, c);
            if obj < local.0 {
                local = (obj, m.clone());
            }
        }
        restart_objectives.push(local.0);
        if best.as_ref().is_none_or(|b| local.0 < b.0) {
            best = Some(local);
        }
    }
    let (objective, m) = best.expect("at least one restart");
    let g = inst.subgradient(&m, c);
    Ok(OracleResult {
        metric: MetricMatrix::from_projection(p, m),
        objective,
        subgradient_norm: g.iter().map(|v| v * v).sum::<f64>().sqrt(),
        restart_objectives,
    })
}
