use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use lipmargin::admm::{self, SolveReport, SolverConfig, Variant};
use lipmargin::bounds::{self, BoundInput, BoundResult, SurrogateMode};
use lipmargin::classifier::{LipschitzModel, ModelDocument, Prediction};
use lipmargin::dataset::{load_dataset, LoadReport, Standardizer};
use lipmargin::experiment::{self, ExperimentConfig, Method};
use lipmargin::metric::{self, DistanceForm, MarginReport, MetricMatrix};
use lipmargin::oracle::{self, OracleConfig, OracleResult};
use lipmargin::{json, Error, LabeledDataset};

use crate::settings::Settings;
use crate::{Cli, Command};

/// Maps an error chain to the process exit code.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::EigenFailure { .. } | Error::FactorizationFailure | Error::BisectionBracketFailure { .. } | Error::ExperimentAborted { .. }) => 3,
        _ => 2,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let settings = Settings::resolve(&cli.global)?;
    match cli.command {
        Command::Fit { data, output, report } => fit(&settings, &data, &output, report),
        Command::Predict { data, model, output } => predict(&settings, &data, &model, output.as_deref()),
        Command::MarginReport {
            data,
            model,
            identity: _,
            local,
            form,
            output,
        } => margin(&settings, &data, model.as_deref(), &local, parse_form(&form)?, output.as_deref()),
        Command::Experiment { data, json, csv } => run_experiment(&settings, &data, json.as_deref(), csv.as_deref()),
        Command::Bound {
            n,
            k,
            surrogate_c,
            model,
            data,
            c_mode,
            squared,
            output,
        } => {
            let request = BoundRequest {
                n,
                k,
                surrogate_c,
                model,
                data,
                mode: c_mode.parse()?,
                form: if squared { DistanceForm::Squared } else { DistanceForm::Root },
            };
            bound(&settings, &request, output.as_deref())
        }
        Command::Oracle {
            data,
            iterations,
            restarts,
            step_size,
        } => run_oracle(&settings, &data, iterations, restarts, step_size),
    }
}

fn parse_form(s: &str) -> Result<DistanceForm> {
    match s {
        "squared" => Ok(DistanceForm::Squared),
        "root" => Ok(DistanceForm::Root),
        other => Err(Error::InvalidParameter(format!("unknown distance form {other:?} (expected squared or root)")).into()),
    }
}

fn emit<T: Serialize>(value: &T, output: Option<&Path>) -> Result<()> {
    match output {
        Some(path) => json::write_file(path, value)?,
        None => std::io::stdout().lock().write_all(json::to_string(value)?.as_bytes())?,
    }
    Ok(())
}

fn load(settings: &Settings, path: &Path) -> Result<(LabeledDataset, LoadReport)> {
    Ok(load_dataset(path, &settings.label_column, settings.has_header)?)
}

fn methods(settings: &Settings) -> Result<Vec<Method>> {
    match &settings.variants {
        None => Ok(ExperimentConfig::default().methods),
        Some(names) => names.iter().map(|s| s.parse::<Method>().map_err(Into::into)).collect(),
    }
}

fn single_method(settings: &Settings, default: Method) -> Result<Method> {
    match settings.variants.as_deref() {
        None => Ok(default),
        Some([one]) => Ok(one.parse()?),
        Some(_) => bail!(Error::InvalidParameter("this command takes a single --variant".into())),
    }
}

fn solver_for(settings: &Settings, variant: Variant) -> SolverConfig {
    SolverConfig { variant, ..settings.solver }
}

#[derive(Serialize)]
struct FitReport<'a> {
    dataset: String,
    load: &'a LoadReport,
    method: Method,
    standardized: bool,
    lip_constant: f64,
    coincident_cross_pairs: usize,
    converged: Option<bool>,
    warning: Option<String>,
    solve: Option<&'a SolveReport>,
}

fn default_report_path(model: &Path) -> PathBuf {
    let stem = model.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into());
    model.with_file_name(format!("{stem}.report.json"))
}

fn fit(settings: &Settings, data_path: &Path, output: &Path, report: Option<PathBuf>) -> Result<()> {
    let (raw, load_report) = load(settings, data_path)?;
    let method = single_method(settings, Method::LipD)?;
    let standardizer = settings.standardize.then(|| Standardizer::fit(&raw));
    let data = match &standardizer {
        Some(s) => s.apply(&raw)?,
        None => raw,
    };
    data.require_both_classes()?;
    let solve = match method.variant() {
        Some(v) => Some(admm::solve(&data, &solver_for(settings, v))?),
        None => None,
    };
    let metric = solve.as_ref().map_or_else(|| MetricMatrix::identity(data.p()), |s| s.chosen_metric().clone());
    let (lip_constant, conflicts) = lip_constant_for(&data, &metric)?;
    let values = data.labels().iter().map(|&t| f64::from(t)).collect();
    let model = LipschitzModel::new(&data, values, lip_constant, 0.5, metric, DistanceForm::Squared)?;
    json::write_file(output, &model.to_document(standardizer))?;

    let mut warnings: Vec<String> = solve.as_ref().and_then(|s| s.warning.clone()).into_iter().collect();
    if conflicts > 0 {
        warnings.push(format!(
            "{conflicts} differently labeled pairs coincide under the metric; L uses the smallest nonzero cross-class distance"
        ));
    }
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let warning = (!warnings.is_empty()).then(|| warnings.join("; "));
    let doc = FitReport {
        dataset: data_path.display().to_string(),
        load: &load_report,
        method,
        standardized: settings.standardize,
        lip_constant: model.lip_constant(),
        coincident_cross_pairs: conflicts,
        converged: solve.as_ref().map(|s| s.converged),
        warning,
        solve: solve.as_ref(),
    };
    let report_path = report.unwrap_or_else(|| default_report_path(output));
    json::write_file(&report_path, &doc)?;
    eprintln!("{method}: model written to {}, report to {}", output.display(), report_path.display());
    Ok(())
}

/// `2 / min cross-class distance`, skipping cross pairs at distance 0 (counted
/// and returned). Fails when every cross pair coincides.
fn lip_constant_for(data: &LabeledDataset, metric: &MetricMatrix) -> Result<(f64, usize)> {
    let mut min = f64::INFINITY;
    let mut conflicts = 0;
    for i in 0..data.n() {
        for j in i + 1..data.n() {
            if data.label(i) != data.label(j) {
                let d = metric.distance(data.row(i), data.row(j), DistanceForm::Squared)?;
                if d > 0.0 {
                    min = min.min(d);
                } else {
                    conflicts += 1;
                }
            }
        }
    }
    if !min.is_finite() {
        bail!(Error::InvalidDataset("every differently labeled pair coincides under the metric".into()));
    }
    Ok((2.0 / min, conflicts))
}

fn read_model(path: &Path) -> Result<(LipschitzModel, Option<Standardizer>)> {
    let doc: ModelDocument = json::read_file(path).with_context(|| format!("reading model {}", path.display()))?;
    Ok((LipschitzModel::from_document(&doc)?, doc.standardizer))
}

fn prepare(model: &LipschitzModel, standardizer: Option<&Standardizer>, data: LabeledDataset) -> Result<LabeledDataset> {
    if data.p() != model.p() {
        return Err(Error::DimensionMismatch {
            expected: model.p(),
            found: data.p(),
        }
        .into());
    }
    Ok(match standardizer {
        Some(s) => s.apply(&data)?,
        None => data,
    })
}

#[derive(Serialize)]
struct PredictOutput {
    n: usize,
    accuracy: f64,
    ties: usize,
    predictions: Vec<Prediction>,
}

fn predict(settings: &Settings, data_path: &Path, model_path: &Path, output: Option<&Path>) -> Result<()> {
    let (model, standardizer) = read_model(model_path)?;
    let (raw, _) = load(settings, data_path)?;
    let data = prepare(&model, standardizer.as_ref(), raw)?;
    let predictions = model.predict_batch(&data)?;
    let correct = predictions.iter().zip(data.labels()).filter(|(p, &t)| p.label == t).count();
    let out = PredictOutput {
        n: data.n(),
        accuracy: correct as f64 / data.n() as f64,
        ties: predictions.iter().filter(|p| p.tie).count(),
        predictions,
    };
    emit(&out, output)
}

#[derive(Serialize)]
struct MarginOutput {
    metric: &'static str,
    global: MarginReport,
    local: Option<MarginReport>,
}

fn margin(settings: &Settings, data_path: &Path, model_path: Option<&Path>, local: &[usize], form: DistanceForm, output: Option<&Path>) -> Result<()> {
    let (raw, _) = load(settings, data_path)?;
    let (data, metric, label) = match model_path {
        Some(path) => {
            let (model, standardizer) = read_model(path)?;
            let data = prepare(&model, standardizer.as_ref(), raw)?;
            (data, model.metric().clone(), "model")
        }
        None => {
            let data = if settings.standardize { Standardizer::fit(&raw).apply(&raw)? } else { raw };
            let p = data.p();
            (data, MetricMatrix::identity(p), "identity")
        }
    };
    let global = metric::margin_report_with(&data, &metric, form)?;
    let local = if local.is_empty() {
        None
    } else {
        Some(metric::local_margin_report(&data, local, &metric, form)?)
    };
    emit(&MarginOutput { metric: label, global, local }, output)
}

fn run_experiment(settings: &Settings, data_path: &Path, json_path: Option<&Path>, csv_path: Option<&Path>) -> Result<()> {
    let (data, _) = load(settings, data_path)?;
    let config = ExperimentConfig {
        plan: settings.plan,
        solver: settings.solver,
        standardize: settings.standardize,
        methods: methods(settings)?,
    };
    let mut report = experiment::run_experiment(&data, &config)?;
    report.dataset = Some(data_path.display().to_string());
    report.metadata.timestamp = Some(chrono::Utc::now().to_rfc3339());
    for r in &report.results {
        eprintln!(
            "{:<13} mean {:.4}  std {:.4}  failed {}",
            r.method.to_string(),
            r.mean,
            r.std,
            r.failed_repeats.len()
        );
    }
    if let Some(path) = csv_path {
        experiment::write_results_csv_file(&report, path)?;
    }
    emit(&report, json_path)
}

struct BoundRequest {
    n: Option<u64>,
    k: Option<u64>,
    surrogate_c: Option<f64>,
    model: Option<PathBuf>,
    data: Option<PathBuf>,
    mode: SurrogateMode,
    form: DistanceForm,
}

#[derive(Serialize)]
struct SurrogatePair {
    diam: f64,
    intra: f64,
}

#[derive(Serialize)]
struct BoundOutput {
    source: &'static str,
    mode: Option<SurrogateMode>,
    form: Option<DistanceForm>,
    margin_report: Option<MarginReport>,
    /// `D` under both surrogate modes when derived from data.
    fat_dim: Option<SurrogatePair>,
    valid: bool,
    required_n: Option<f64>,
    message: Option<String>,
    result: Option<BoundResult>,
}

fn bound(settings: &Settings, req: &BoundRequest, output: Option<&Path>) -> Result<()> {
    let mut out = BoundOutput {
        source: "flags",
        mode: None,
        form: None,
        margin_report: None,
        fat_dim: None,
        valid: true,
        required_n: None,
        message: None,
        result: None,
    };
    let (n, k, surrogate_c) = match (&req.data, req.surrogate_c) {
        (Some(data_path), _) => {
            let (raw, _) = load(settings, data_path)?;
            let (data, metric, errors) = match &req.model {
                Some(path) => {
                    let (model, standardizer) = read_model(path)?;
                    let data = prepare(&model, standardizer.as_ref(), raw)?;
                    let errors = model.predict_batch(&data)?.iter().zip(data.labels()).filter(|(p, &t)| p.label != t).count();
                    (data, model.metric().clone(), errors)
                }
                None => {
                    let data = if settings.standardize { Standardizer::fit(&raw).apply(&raw)? } else { raw };
                    let p = data.p();
                    (data, MetricMatrix::identity(p), 0)
                }
            };
            let report = metric::margin_report_with(&data, &metric, req.form)?;
            let l = report.l0;
            out.source = "margin_report";
            out.mode = Some(req.mode);
            out.form = Some(req.form);
            if !l.is_finite() {
                out.valid = false;
                out.message = Some("L0 is infinite: differently labeled points coincide under the metric".into());
                eprintln!("{}", out.message.as_deref().unwrap_or_default());
                out.margin_report = Some(report);
                return emit(&out, output);
            }
            let d_of = |mode| bounds::fat_dim_surrogate(bounds::surrogate_from_report(&report, l, mode), settings.ddim).map(|s| s.value);
            out.fat_dim = Some(SurrogatePair {
                diam: d_of(SurrogateMode::Diam)?,
                intra: d_of(SurrogateMode::Intra)?,
            });
            let c = bounds::surrogate_from_report(&report, l, req.mode);
            out.margin_report = Some(report);
            (req.n.unwrap_or(data.n() as u64), req.k.unwrap_or(errors as u64), c)
        }
        (None, Some(c)) => {
            let n = req.n.ok_or_else(|| Error::InvalidParameter("--n is required with --surrogate-c".into()))?;
            (n, req.k.unwrap_or(0), c)
        }
        (None, None) => bail!(Error::InvalidParameter("give --surrogate-c, or --data (with an optional --model)".into())),
    };
    let input = BoundInput {
        n,
        k,
        delta: settings.delta,
        ddim: settings.ddim,
        surrogate_c,
    };
    match bounds::generalization_bound(&input) {
        Ok(r) => out.result = Some(r),
        Err(e @ Error::ConditionNotMet { required_n, .. }) => {
            out.valid = false;
            out.required_n = Some(required_n);
            out.message = Some(e.to_string());
            eprintln!("{e}");
        }
        Err(e) => return Err(e.into()),
    }
    emit(&out, output)
}

#[derive(Serialize)]
struct OracleOutput {
    variant: Variant,
    c: f64,
    config: OracleConfig,
    result: OracleResult,
}

fn run_oracle(settings: &Settings, data_path: &Path, iterations: usize, restarts: usize, step_size: f64) -> Result<()> {
    let (raw, _) = load(settings, data_path)?;
    let data = if settings.standardize { Standardizer::fit(&raw).apply(&raw)? } else { raw };
    let variant = single_method(settings, Method::LipD)?
        .variant()
        .ok_or_else(|| Error::InvalidParameter("the oracle solves lipd or lipi".into()))?;
    let config = OracleConfig {
        step_size,
        iterations,
        restarts,
        seed: settings.plan.seed,
    };
    let c = settings.solver.c;
    let result = oracle::oracle_solve(&data, c, variant, &config)?;
    emit(&OracleOutput { variant, c, config, result }, None)
}
