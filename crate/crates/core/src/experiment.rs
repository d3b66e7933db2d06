//! Repeated random-split evaluation: standardize on the training part, learn
//! a metric (or use the identity), classify the test part by 1-NN.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admm::{self, SolveReport, SolverConfig, Variant};
use crate::classifier::nn_error_rate;
use crate::dataset::{make_splits, LabeledDataset, Split, SplitPlan, Standardizer};
use crate::error::{Error, Result};
use crate::json::ext_float;
use crate::metric::MetricMatrix;

/// Largest fraction of failed splits an experiment tolerates.
pub const MAX_FAILURE_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "NN-Euclidean")]
    NnEuclidean,
    LipD,
    LipI,
}

impl Method {
    pub fn variant(self) -> Option<Variant> {
        match self {
            Method::NnEuclidean => None,
            Method::LipD => Some(Variant::LipD),
            Method::LipI => Some(Variant::LipI),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::NnEuclidean => "NN-Euclidean",
            Method::LipD => "LipD",
            Method::LipI => "LipI",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nn" | "nn-euclidean" => Ok(Method::NnEuclidean),
            "lipd" => Ok(Method::LipD),
            "lipi" => Ok(Method::LipI),
            other => Err(Error::InvalidParameter(format!("unknown variant {other:?} (expected nn, lipd or lipi)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub plan: SplitPlan,
    /// Shared by the learned variants; `variant` is set per method.
    pub solver: SolverConfig,
    pub standardize: bool,
    pub methods: Vec<Method>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            plan: SplitPlan::default(),
            solver: SolverConfig::default(),
            standardize: true,
            methods: vec![Method::NnEuclidean, Method::LipD, Method::LipI],
        }
    }
}

/// Everything learned from one training split.
#[derive(Debug, Clone)]
pub struct FittedSplit {
    pub standardizer: Standardizer,
    pub metric: MetricMatrix,
    pub solve: Option<SolveReport>,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

/// Standardizes with statistics of `split.train` only, then learns the metric
/// for `method` on the standardized training rows.
pub fn fit_split(data: &LabeledDataset, split: &Split, method: Method, config: &ExperimentConfig) -> Result<FittedSplit> {
    let raw_train = data.subset(&split.train)?;
    let raw_test = data.subset(&split.test)?;
    let standardizer = if config.standardize {
        Standardizer::fit(&raw_train)
    } else {
        Standardizer::identity(data.p())
    };
    let train = standardizer.apply(&raw_train)?;
    let test = standardizer.apply(&raw_test)?;
    let (metric, solve) = match method.variant() {
        None => (MetricMatrix::identity(data.p()), None),
        Some(variant) => {
            let report = admm::solve(&train, &SolverConfig { variant, ..config.solver })?;
            (report.chosen_metric().clone(), Some(report))
        }
    };
    Ok(FittedSplit {
        standardizer,
        metric,
        solve,
        train,
        test,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub repeat: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub accuracy: Option<f64>,
    pub solver_iterations: Option<usize>,
    pub solver_converged: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    /// Accuracies in [0, 1] of the successful splits, in repeat order.
    pub per_split_accuracy: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (divisor R - 1); NaN for a single split.
    #[serde(with = "ext_float")]
    pub std: f64,
    pub failed_repeats: Vec<usize>,
    pub splits: Vec<SplitRecord>,
}

/// Run-dependent information, excluded from reproducibility comparisons.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMetadata {
    pub timestamp: Option<String>,
    pub wall_ms: Vec<MethodTimings>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodTimings {
    pub method: Method,
    pub per_split_ms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub dataset: Option<String>,
    pub n: usize,
    pub p: usize,
    pub positives: usize,
    pub negatives: usize,
    pub config: ExperimentConfig,
    pub results: Vec<MethodResult>,
    pub metadata: RunMetadata,
}

impl ExperimentReport {
    pub fn result(&self, method: Method) -> Option<&MethodResult> {
        self.results.iter().find(|r| r.method == method)
    }

    /// JSON with the `metadata` field removed.
    pub fn reproducible_json(&self) -> Result<String> {
        let mut stripped = self.clone();
        stripped.metadata = RunMetadata::default();
        let mut value = serde_json::to_value(&stripped)?;
        if let Some(obj) = value.as_object_mut() {
            obj.remove("metadata");
        }
        crate::json::to_string(&value)
    }
}

pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        f64::NAN
    };
    (mean, std)
}

fn run_split(data: &LabeledDataset, repeat: usize, split: &Split, method: Method, config: &ExperimentConfig) -> (SplitRecord, f64) {
    let start = Instant::now();
    let outcome = fit_split(data, split, method, config).and_then(|f| {
        let err = nn_error_rate(&f.train, &f.metric, &f.test)?;
        Ok((1.0 - err, f.solve))
    });
    let ms = start.elapsed().as_secs_f64() * 1e3;
    let mut record = SplitRecord {
        repeat,
        n_train: split.train.len(),
        n_test: split.test.len(),
        accuracy: None,
        solver_iterations: None,
        solver_converged: None,
        error: None,
    };
    match outcome {
        Ok((acc, solve)) => {
            record.accuracy = Some(acc);
            record.solver_iterations = solve.as_ref().map(|s| s.iterations_used);
            record.solver_converged = solve.as_ref().map(|s| s.converged);
        }
        Err(e) => record.error = Some(e.to_string()),
    }
    (record, ms)
}

/// Evaluates every method on the same splits. Splits run in parallel;
/// results are collected in repeat order.
pub fn run_experiment(data: &LabeledDataset, config: &ExperimentConfig) -> Result<ExperimentReport> {
    if config.methods.is_empty() {
        return Err(Error::InvalidParameter("no methods selected".into()));
    }
    config.solver.validate()?;
    let splits = make_splits(data, &config.plan)?;
    let mut results = Vec::new();
    let mut timings = Vec::new();
    for &method in &config.methods {
        let runs: Vec<(SplitRecord, f64)> = splits
            .par_iter()
            .enumerate()
            .map(|(r, s)| run_split(data, r, s, method, config))
            .collect();
        let failed: Vec<&SplitRecord> = runs.iter().map(|(r, _)| r).filter(|r| r.error.is_some()).collect();
        if failed.len() as f64 >= MAX_FAILURE_FRACTION * splits.len() as f64 && !failed.is_empty() {
            return Err(Error::ExperimentAborted {
                method: method.to_string(),
                failed: failed.len(),
                repeats: splits.len(),
                first: failed[0].error.clone().unwrap_or_default(),
            });
        }
        let per_split_accuracy: Vec<f64> = runs.iter().filter_map(|(r, _)| r.accuracy).collect();
        let (mean, std) = mean_and_std(&per_split_accuracy);
        results.push(MethodResult {
            method,
            mean,
            std,
            failed_repeats: failed.iter().map(|r| r.repeat).collect(),
            per_split_accuracy,
            splits: runs.iter().map(|(r, _)| r.clone()).collect(),
        });
        timings.push(MethodTimings {
            method,
            per_split_ms: runs.iter().map(|(_, ms)| *ms).collect(),
        });
    }
    let (positives, negatives) = data.class_counts();
    Ok(ExperimentReport {
        dataset: None,
        n: data.n(),
        p: data.p(),
        positives,
        negatives,
        config: config.clone(),
        results,
        metadata: RunMetadata {
            timestamp: None,
            wall_ms: timings,
        },
    })
}

/// One row per split: `variant,repeat,accuracy,wall_ms`. Failed splits have an
/// empty accuracy.
pub fn write_results_csv(report: &ExperimentReport, out: impl Write) -> Result<()> {
    let to_err = |e: csv::Error| Error::InvalidDataset(format!("csv output: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["variant", "repeat", "accuracy", "wall_ms"]).map_err(to_err)?;
    for (res, tim) in report.results.iter().zip(&report.metadata.wall_ms) {
        for (rec, ms) in res.splits.iter().zip(&tim.per_split_ms) {
            let acc = rec.accuracy.map(|a| format!("{a:.16e}")).unwrap_or_default();
            w.write_record([res.method.to_string(), rec.repeat.to_string(), acc, format!("{ms:.3}")])
                .map_err(to_err)?;
        }
    }
    w.flush().map_err(|e| Error::InvalidDataset(format!("csv output: {e}")))?;
    Ok(())
}

pub fn write_results_csv_file(report: &ExperimentReport, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_results_csv(report, file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blobs(seed: u64, n: usize) -> LabeledDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let t: i8 = if i % 3 == 0 { -1 } else { 1 };
            rows.push(vec![rng.random_range(-1.0..1.0) + 1.5 * f64::from(t), rng.random_range(-4.0..4.0)]);
            labels.push(t);
        }
        LabeledDataset::from_rows(rows, labels).unwrap()
    }

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            plan: SplitPlan { train_fraction: 0.6, repeats: 4, seed: 7 },
            solver: SolverConfig { max_iter: 300, ..SolverConfig::default() },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn bookkeeping() {
        let data = blobs(1, 30);
        let rep = run_experiment(&data, &small_config()).unwrap();
        assert_eq!(rep.results.len(), 3);
        for r in &rep.results {
            assert_eq!(r.per_split_accuracy.len(), 4);
            let mean = r.per_split_accuracy.iter().sum::<f64>() / 4.0;
            assert!((mean - r.mean).abs() <= 1e-12);
            assert!(r.per_split_accuracy.iter().all(|a| (0.0..=1.0).contains(a)));
        }
        let mut csv = Vec::new();
        write_results_csv(&rep, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("variant,repeat,accuracy,wall_ms\n"));
        assert_eq!(text.lines().count(), 1 + 12);
    }

    #[test]
    fn reproducible_json_ignores_metadata() {
        let data = blobs(2, 24);
        let a = run_experiment(&data, &small_config()).unwrap();
        let b = run_experiment(&data, &small_config()).unwrap();
        assert_eq!(a.reproducible_json().unwrap(), b.reproducible_json().unwrap());
        assert!(!a.reproducible_json().unwrap().contains("metadata"));
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_and_std(&[0.5, 1.0]);
        assert_eq!(m, 0.75);
        assert!((s - (0.125f64).sqrt()).abs() < 1e-15);
        assert!(mean_and_std(&[0.3]).1.is_nan());
    }

    #[test]
    fn fitted_split_ignores_test_rows() {
        let data = blobs(3, 30);
        let config = small_config();
        let split = &make_splits(&data, &config.plan).unwrap()[0];
        let a = fit_split(&data, split, Method::LipD, &config).unwrap();
        let mut feats = data.features().to_vec();
        for &i in &split.test {
            feats[i * 2] += 100.0;
            feats[i * 2 + 1] *= -3.0;
        }
        let mutated = LabeledDataset::from_flat(feats, data.n(), data.p(), data.labels().to_vec()).unwrap();
        let b = fit_split(&mutated, split, Method::LipD, &config).unwrap();
        assert_eq!(a.standardizer, b.standardizer);
        assert_eq!(a.metric, b.metric);
    }

    #[test]
    fn rescaled_features_give_the_same_predictions() {
        let data = blobs(4, 30);
        let config = small_config();
        let scaled = LabeledDataset::from_flat(data.features().iter().map(|v| v * 8.0).collect(), data.n(), data.p(), data.labels().to_vec()).unwrap();
        let split = &make_splits(&data, &config.plan).unwrap()[1];
        let a = fit_split(&data, split, Method::LipD, &config).unwrap();
        let b = fit_split(&scaled, split, Method::LipD, &config).unwrap();
        let pa = crate::classifier::predict_nn_batch(&a.train, &a.metric, &a.test).unwrap();
        let pb = crate::classifier::predict_nn_batch(&b.train, &b.metric, &b.test).unwrap();
        assert_eq!(pa, pb);
    }

    #[test]
    fn full_training_fraction_is_rejected() {
        let data = blobs(5, 20);
        let mut config = small_config();
        config.plan = SplitPlan { train_fraction: 1.0, repeats: 1, seed: 1 };
        assert!(matches!(run_experiment(&data, &config), Err(Error::DegenerateSplit(_))));
    }

    #[test]
    fn too_many_failures_abort() {
        // Three-point dataset with one negative: LipI needs two same-label
        // points in training, which every 2-point training split lacks.
        let data = LabeledDataset::from_rows(vec![vec![0.0], vec![1.0], vec![2.0], vec![5.0]], vec![1, -1, 1, -1]).unwrap();
        let config = ExperimentConfig {
            plan: SplitPlan { train_fraction: 0.5, repeats: 5, seed: 3 },
            methods: vec![Method::LipI],
            ..small_config()
        };
        assert!(matches!(run_experiment(&data, &config), Err(Error::ExperimentAborted { .. })));
    }
}
