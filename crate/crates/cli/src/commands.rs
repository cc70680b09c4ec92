use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use svb_core::distributions::sample_data;
use svb_core::grid_oracle::{canonical_posterior, Axis};
use svb_core::{
    compare, fit, grid_posterior, AdamConfig, BatchSize, Comparison, Execution, FitResult,
    GridSpec, GridSummary, ModelKind, NaturalParams, PosteriorSummary, PriorSpec, TrainConfig,
};

use crate::error::{CliError, CliResult};
use crate::figure::{run_figure, FigureArgs};
use crate::io::{read_data, read_json, write_csv, write_data, write_json, RunManifest};

#[derive(Debug, Parser)]
#[command(
    name = "svb",
    version,
    about = "Stochastic variational Bayes with a grid-search reference"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw synthetic observations from a model.
    Generate(GenerateArgs),
    /// Fit the MVN approximate posterior.
    Fit(FitArgs),
    /// Evaluate the brute-force grid posterior.
    Grid(GridArgs),
    /// Compare a fit (or grid summary) against a grid summary.
    Compare(CompareArgs),
    /// Produce plot-ready data for one of the six reference figures.
    Figure(FigureArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Args, Clone)]
pub struct PriorArgs {
    /// Prior mean of (mu, log variance); one value is broadcast to both.
    #[arg(
        long,
        value_delimiter = ',',
        allow_negative_numbers = true,
        default_value = "0"
    )]
    pub prior_mean: Vec<f64>,
    /// Prior variance of (mu, log variance); one value is broadcast to both.
    #[arg(long, value_delimiter = ',', default_value = "100")]
    pub prior_var: Vec<f64>,
}

fn broadcast2(name: &str, v: &[f64]) -> CliResult<Vec<f64>> {
    match v {
        [x] => Ok(vec![*x, *x]),
        [a, b] => Ok(vec![*a, *b]),
        _ => Err(CliError::Usage(format!(
            "--{name} takes one or two values, got {}",
            v.len()
        ))),
    }
}

impl PriorArgs {
    pub fn resolve(&self) -> CliResult<PriorSpec> {
        let mean = broadcast2("prior-mean", &self.prior_mean)?;
        let var = broadcast2("prior-var", &self.prior_var)?;
        if var.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(CliError::Usage(format!(
                "--prior-var must be positive, got {var:?}"
            )));
        }
        Ok(PriorSpec::diagonal(mean, &var)?)
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value = "gaussian")]
    pub model: ModelKind,
    #[arg(long, allow_negative_numbers = true, default_value_t = 1.0)]
    pub mu: f64,
    #[arg(long, allow_negative_numbers = true, default_value_t = 4.0)]
    pub variance: f64,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; receives data.csv and the manifest.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// CSV file with header `y`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "gaussian")]
    pub model: ModelKind,
    #[command(flatten)]
    pub prior: PriorArgs,
    #[arg(long, default_value_t = 400)]
    pub epochs: usize,
    /// `full` or a batch size.
    #[arg(long, default_value = "full")]
    pub batch_size: BatchSize,
    /// Reparameterized samples per step.
    #[arg(long, default_value_t = 1)]
    pub mc_samples: usize,
    #[arg(long, default_value_t = AdamConfig::default().learning_rate)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Diagonal posterior covariance.
    #[arg(long)]
    pub no_correlation: bool,
    /// Reshuffle data before every epoch.
    #[arg(long)]
    pub shuffle: bool,
    #[arg(long, default_value_t = 1000)]
    pub final_fe_samples: usize,
    /// Output directory; receives fit.json, trace.csv and the manifest.
    #[arg(long)]
    pub out: PathBuf,
}

impl FitArgs {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            mc_samples: self.mc_samples,
            adam: AdamConfig::with_learning_rate(self.lr),
            seed: self.seed,
            correlation_enabled: !self.no_correlation,
            final_fe_samples: self.final_fe_samples,
            shuffle: self.shuffle,
            init: None,
            execution: Execution::Parallel,
        }
    }
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected `lo,hi`, got `{s}`"))?;
    let lo = a.trim().parse::<f64>().map_err(|e| format!("`{a}`: {e}"))?;
    let hi = b.trim().parse::<f64>().map_err(|e| format!("`{b}`: {e}"))?;
    Ok((lo, hi))
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "gaussian")]
    pub model: ModelKind,
    #[command(flatten)]
    pub prior: PriorArgs,
    /// `lo,hi` for mu; defaults depend on the model.
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
    pub mu_range: Option<(f64, f64)>,
    /// `lo,hi` for log variance; defaults depend on the model.
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
    pub logvar_range: Option<(f64, f64)>,
    /// Nodes per axis.
    #[arg(long, default_value_t = 201)]
    pub resolution: usize,
    /// Likelihood only.
    #[arg(long)]
    pub no_prior: bool,
    /// Output directory; receives grid.csv, grid_summary.json and the manifest.
    #[arg(long)]
    pub out: PathBuf,
}

impl GridArgs {
    pub fn spec(&self) -> GridSpec {
        let base = GridSpec::default_for(self.model);
        let (mlo, mhi) = self.mu_range.unwrap_or((base.mu.lo, base.mu.hi));
        let (llo, lhi) = self
            .logvar_range
            .unwrap_or((base.logvar.lo, base.logvar.hi));
        GridSpec {
            mu: Axis::new(mlo, mhi, self.resolution),
            logvar: Axis::new(llo, lhi, self.resolution),
            include_prior: !self.no_prior,
        }
    }
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// fit.json from `svb fit`, or a grid_summary.json.
    #[arg(long)]
    pub fit: PathBuf,
    /// grid_summary.json from `svb grid`.
    #[arg(long)]
    pub grid: PathBuf,
    /// Optional directory for comparison.json and the manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

/// Grid summary as written to disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSummaryFile {
    pub model: ModelKind,
    pub spec: GridSpec,
    #[serde(flatten)]
    pub summary: GridSummary,
}

#[derive(Debug, Serialize)]
pub struct GridRow {
    pub mu: f64,
    pub logvar: f64,
    pub mass: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ComparisonFile {
    pub model: ModelKind,
    pub fit: PosteriorSummary,
    pub grid: GridSummary,
    pub comparison: Comparison,
}

fn manifest_config<T: Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).expect("config serializes")
}

pub fn run(cli: Cli, args: &[String]) -> CliResult<()> {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a, args),
        Command::Fit(a) => cmd_fit(&a, args),
        Command::Grid(a) => cmd_grid(&a, args),
        Command::Compare(a) => cmd_compare(&a, args),
        Command::Figure(a) => run_figure(&a, args),
        Command::Replay(a) => cmd_replay(&a),
    }
}

pub fn cmd_generate(a: &GenerateArgs, args: &[String]) -> CliResult<()> {
    if !(a.variance > 0.0 && a.variance.is_finite()) {
        return Err(CliError::Usage(format!(
            "--variance must be positive, got {}",
            a.variance
        )));
    }
    if a.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let params = NaturalParams::from_variance(a.mu, a.variance)?;
    let data = sample_data(a.model, params, a.n, a.seed)?;

    crate::io::ensure_dir(&a.out)?;
    let out = a.out.join("data.csv");
    write_data(&out, &data)?;

    let config = serde_json::json!({
        "model": a.model, "mu": a.mu, "variance": a.variance, "n": a.n, "seed": a.seed,
    });
    let mut m = RunManifest::new("generate", args, config, Some(a.seed));
    m.outputs.push(out);
    m.write(&a.out)?;
    Ok(())
}

pub fn cmd_fit(a: &FitArgs, args: &[String]) -> CliResult<()> {
    let data = read_data(&a.data)?;
    a.model.validate_data(data.values()).map_err(|e| match e {
        svb_core::SvbError::Domain { detail, .. } => CliError::Engine(svb_core::SvbError::Domain {
            op: "data",
            detail: format!("{}: {detail}", a.data.display()),
        }),
        other => other.into(),
    })?;
    let prior = a.prior.resolve()?;
    let config = a.train_config();
    let result = fit(a.model, &data, &prior, &config)?;

    crate::io::ensure_dir(&a.out)?;
    let fit_path = a.out.join("fit.json");
    let trace_path = a.out.join("trace.csv");
    write_json(&fit_path, &result)?;
    write_csv(&trace_path, &result.trace.records)?;

    let cfg = serde_json::json!({ "model": a.model, "prior": prior, "train": config });
    let mut m = RunManifest::new("fit", args, manifest_config(&cfg), Some(a.seed));
    m.inputs.push(a.data.clone());
    m.outputs.extend([fit_path, trace_path]);
    m.write(&a.out)?;
    Ok(())
}

pub fn cmd_grid(a: &GridArgs, args: &[String]) -> CliResult<()> {
    let data = read_data(&a.data)?;
    let prior = a.prior.resolve()?;
    let spec = a.spec();
    let grid =
        grid_posterior(a.model, &data, Some(&prior), &spec, Execution::Parallel).map_err(|e| {
            match e {
                svb_core::SvbError::GridUnderflow => CliError::Engine(e),
                svb_core::SvbError::InvalidConfig(msg) => CliError::Usage(msg),
                other => other.into(),
            }
        })?;

    crate::io::ensure_dir(&a.out)?;
    let grid_path = a.out.join("grid.csv");
    let summary_path = a.out.join("grid_summary.json");
    write_csv(
        &grid_path,
        grid.triples()
            .map(|(mu, logvar, mass)| GridRow { mu, logvar, mass }),
    )?;
    write_json(
        &summary_path,
        &GridSummaryFile {
            model: a.model,
            spec,
            summary: grid.summary.clone(),
        },
    )?;

    let cfg = serde_json::json!({ "model": a.model, "prior": prior, "spec": spec });
    let mut m = RunManifest::new("grid", args, cfg, None);
    m.inputs.push(a.data.clone());
    m.outputs.extend([grid_path, summary_path]);
    m.write(&a.out)?;
    Ok(())
}

/// Loads either a fit result or a grid summary as a posterior summary.
fn load_posterior(path: &Path) -> CliResult<(ModelKind, PosteriorSummary)> {
    let value: serde_json::Value = read_json(path)?;
    if value.get("posterior").is_some() {
        let r: FitResult = serde_json::from_value(value).map_err(|e| CliError::parse(path, e))?;
        Ok((r.model, canonical_posterior(r.model, &r.posterior)))
    } else if value.get("means").is_some() {
        let g: GridSummaryFile =
            serde_json::from_value(value).map_err(|e| CliError::parse(path, e))?;
        Ok((g.model, g.summary.as_posterior()))
    } else {
        Err(CliError::parse(
            path,
            "neither a fit result nor a grid summary",
        ))
    }
}

pub fn compare_files(fit_path: &Path, grid_path: &Path) -> CliResult<ComparisonFile> {
    let (model, fit) = load_posterior(fit_path)?;
    let grid: GridSummaryFile = read_json(grid_path)?;
    if grid.model != model {
        return Err(CliError::Incompatible(format!(
            "fit is for model {model}, grid is for model {}",
            grid.model
        )));
    }
    let comparison =
        compare(&grid.summary, &fit).map_err(|e| CliError::Incompatible(e.to_string()))?;
    Ok(ComparisonFile {
        model,
        fit,
        grid: grid.summary,
        comparison,
    })
}

pub fn render_table(c: &ComparisonFile) -> String {
    let mut s = String::new();
    s.push_str(&format!("model: {}\n", c.model));
    s.push_str(&format!(
        "{:<10}{:>12}{:>12}{:>12}{:>16}\n",
        "parameter", "grid mean", "svb mean", "|diff|", "|var ratio-1|"
    ));
    for (i, name) in ["mu", "logvar"].iter().enumerate() {
        s.push_str(&format!(
            "{:<10}{:>12.5}{:>12.5}{:>12.5}{:>16.5}\n",
            name,
            c.grid.means[i],
            c.fit.m[i],
            c.comparison.mean_abs_diff[i],
            c.comparison.variance_ratio_error[i]
        ));
    }
    s.push_str(&format!(
        "rho: grid {:.5}  svb {:.5}  |diff| {:.5}  sign agrees: {}\n",
        c.comparison.rho_grid,
        c.comparison.rho_svb,
        c.comparison.rho_abs_diff,
        if c.comparison.rho_sign_agrees {
            "yes"
        } else {
            "no"
        }
    ));
    s
}

pub fn cmd_compare(a: &CompareArgs, args: &[String]) -> CliResult<()> {
    let report = compare_files(&a.fit, &a.grid)?;
    print!("{}", render_table(&report));
    if let Some(out) = &a.out {
        crate::io::ensure_dir(out)?;
        let path = out.join("comparison.json");
        write_json(&path, &report)?;
        let mut m = RunManifest::new("compare", args, serde_json::Value::Null, None);
        m.inputs.extend([a.fit.clone(), a.grid.clone()]);
        m.outputs.push(path);
        m.write(out)?;
    }
    Ok(())
}

pub fn cmd_replay(a: &ReplayArgs) -> CliResult<()> {
    let m: RunManifest = read_json(&a.manifest)?;
    let argv = std::iter::once("svb".to_string()).chain(m.args.iter().cloned());
    let cli = Cli::try_parse_from(argv).map_err(|e| CliError::parse(&a.manifest, e))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(CliError::Usage(
            "a manifest cannot replay another replay".into(),
        ));
    }
    run(cli, &m.args)
}

/// `FitResult` fields used by figure panels.
pub(crate) fn fit_with(
    model: ModelKind,
    data: &svb_core::Dataset,
    prior: &PriorSpec,
    config: &TrainConfig,
) -> CliResult<FitResult> {
    Ok(fit(model, data, prior, config)?)
}
