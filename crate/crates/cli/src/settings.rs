//! Global options: command-line flags layered over an optional TOML file.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::Deserialize;

use lipmargin::admm::SolverConfig;
use lipmargin::dataset::{LabelColumn, SplitPlan};

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// Seed for split generation.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Key-value (TOML) file with defaults for any of these options.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Use raw features instead of z-scores fitted on the training data.
    #[arg(long, global = true)]
    pub no_standardize: bool,
    /// lipd, lipi or nn. `experiment` accepts a comma-separated list.
    #[arg(long, global = true, value_delimiter = ',')]
    pub variant: Vec<String>,
    /// Weight of the diameter term.
    #[arg(long, global = true)]
    pub c: Option<f64>,
    /// ADMM penalty parameter.
    #[arg(long, global = true)]
    pub mu: Option<f64>,
    #[arg(long, global = true)]
    pub max_iter: Option<usize>,
    /// Primal and dual residual tolerance.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[arg(long, global = true)]
    pub train_fraction: Option<f64>,
    #[arg(long, global = true)]
    pub repeats: Option<usize>,
    /// Doubling dimension used by `bound`.
    #[arg(long, global = true)]
    pub ddim: Option<f64>,
    /// Confidence parameter used by `bound`.
    #[arg(long, global = true)]
    pub delta: Option<f64>,
    /// Label column of CSV input: 0-based index, header name, or `last`.
    #[arg(long, global = true)]
    pub label_column: Option<String>,
    /// CSV input has no header row.
    #[arg(long, global = true)]
    pub no_header: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    standardize: Option<bool>,
    variant: Option<Vec<String>>,
    c: Option<f64>,
    mu: Option<f64>,
    max_iter: Option<usize>,
    tol: Option<f64>,
    train_fraction: Option<f64>,
    repeats: Option<usize>,
    ddim: Option<f64>,
    delta: Option<f64>,
    label_column: Option<String>,
    header: Option<bool>,
}

fn read_file_config(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

/// Effective settings after merging flags, file and built-in defaults.
#[derive(Debug, Clone)]
pub struct Settings {
    pub standardize: bool,
    pub variants: Option<Vec<String>>,
    pub solver: SolverConfig,
    pub plan: SplitPlan,
    pub ddim: f64,
    pub delta: f64,
    pub label_column: LabelColumn,
    pub has_header: bool,
}

impl Settings {
    pub fn resolve(args: &GlobalArgs) -> Result<Self> {
        let file = match &args.config {
            Some(p) => read_file_config(p)?,
            None => FileConfig::default(),
        };
        let solver_default = SolverConfig::default();
        let plan_default = SplitPlan::default();
        let tol = args.tol.or(file.tol);
        let solver = SolverConfig {
            c: args.c.or(file.c).unwrap_or(solver_default.c),
            mu: args.mu.or(file.mu).unwrap_or(solver_default.mu),
            max_iter: args.max_iter.or(file.max_iter).unwrap_or(solver_default.max_iter),
            tol_primal: tol.unwrap_or(solver_default.tol_primal),
            tol_dual: tol.unwrap_or(solver_default.tol_dual),
            ..solver_default
        };
        let plan = SplitPlan {
            train_fraction: args.train_fraction.or(file.train_fraction).unwrap_or(plan_default.train_fraction),
            repeats: args.repeats.or(file.repeats).unwrap_or(plan_default.repeats),
            seed: args.seed.or(file.seed).unwrap_or(plan_default.seed),
        };
        let variants = if args.variant.is_empty() { file.variant } else { Some(args.variant.clone()) };
        let label_column = args
            .label_column
            .clone()
            .or(file.label_column)
            .map(|s| s.parse().expect("infallible"))
            .unwrap_or(LabelColumn::Last);
        Ok(Self {
            standardize: if args.no_standardize { false } else { file.standardize.unwrap_or(true) },
            variants,
            solver,
            plan,
            ddim: args.ddim.or(file.ddim).unwrap_or(1.0),
            delta: args.delta.or(file.delta).unwrap_or(0.05),
            label_column,
            has_header: if args.no_header { false } else { file.header.unwrap_or(true) },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "c = 0.5\nmu = 2.0\nrepeats = 3\nstandardize = false\nvariant = [\"lipi\"]\n").unwrap();
        let args = GlobalArgs {
            config: Some(path),
            c: Some(4.0),
            ..GlobalArgs::default()
        };
        let s = Settings::resolve(&args).unwrap();
        assert_eq!(s.solver.c, 4.0);
        assert_eq!(s.solver.mu, 2.0);
        assert_eq!(s.plan.repeats, 3);
        assert_eq!(s.plan.seed, 42);
        assert!(!s.standardize);
        assert_eq!(s.variants, Some(vec!["lipi".to_string()]));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "learning_rate = 1\n").unwrap();
        let args = GlobalArgs {
            config: Some(path),
            ..GlobalArgs::default()
        };
        assert!(Settings::resolve(&args).is_err());
    }
}
