//! Plot-ready data for the six reference figures.
//!
//! Each figure id maps to a model and a batching strategy; every bundle
//! contains the data panel, the prior-free grid density, both sVB variants
//! evaluated on the same grid, and both free-energy traces.

use std::path::Path;

use clap::Args;
use serde::Serialize;
use svb_core::distributions::{pdf, sample_data};
use svb_core::grid_oracle::canonical_posterior;
use svb_core::{
    compare, grid_posterior, AdamConfig, BatchSize, Dataset, Execution, FitResult, GridResult,
    GridSpec, ModelKind, NaturalParams, PriorSpec, TrainConfig,
};

use crate::commands::{fit_with, ComparisonFile, GridSummaryFile};
use crate::error::CliResult;
use crate::io::{ensure_dir, write_csv, write_data, write_json, RunManifest};

const TRUE_MU: f64 = 1.0;
const TRUE_VARIANCE: f64 = 4.0;
const N_SAMPLES: usize = 100;
const EPOCHS: usize = 400;
const MINI_BATCH: usize = 10;
const PRIOR_VAR: f64 = 100.0;
const HIST_BINS: usize = 20;
const PDF_POINTS: usize = 200;

#[derive(Debug, Args)]
pub struct FigureArgs {
    /// Figure number, 1 to 6.
    #[arg(value_parser = clap::value_parser!(u8).range(1..=6))]
    pub id: u8,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Nodes per grid axis.
    #[arg(long, default_value_t = 201)]
    pub resolution: usize,
    #[arg(long)]
    pub out: std::path::PathBuf,
}

/// Model and batching used by a figure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FigureSetup {
    pub id: u8,
    pub model: ModelKind,
    pub batch_size: BatchSize,
}

impl FigureSetup {
    pub fn for_id(id: u8) -> Option<Self> {
        let (model, batch_size) = match id {
            1 | 2 => (ModelKind::Gaussian, BatchSize::Full),
            3 | 4 => (ModelKind::Gaussian, BatchSize::Size(MINI_BATCH)),
            5 => (ModelKind::FoldedNormal, BatchSize::Full),
            6 => (ModelKind::FoldedNormal, BatchSize::Size(MINI_BATCH)),
            _ => return None,
        };
        Some(FigureSetup {
            id,
            model,
            batch_size,
        })
    }
}

#[derive(Serialize)]
struct HistRow {
    bin_lo: f64,
    bin_hi: f64,
    count: usize,
    density: f64,
}

#[derive(Serialize)]
struct PdfRow {
    y: f64,
    pdf: f64,
}

#[derive(Serialize)]
struct DensityRow {
    mu: f64,
    logvar: f64,
    variance: f64,
    density: f64,
}

fn histogram(data: &[f64], bins: usize) -> Vec<HistRow> {
    let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo {
        (hi - lo) / bins as f64
    } else {
        1.0
    };
    let mut counts = vec![0usize; bins];
    for &y in data {
        let k = (((y - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let n = data.len() as f64;
    counts
        .into_iter()
        .enumerate()
        .map(|(k, count)| HistRow {
            bin_lo: lo + k as f64 * width,
            bin_hi: lo + (k + 1) as f64 * width,
            count,
            density: count as f64 / (n * width),
        })
        .collect()
}

fn true_pdf(model: ModelKind, params: NaturalParams, data: &[f64]) -> Vec<PdfRow> {
    let sd = params.variance().sqrt();
    let hi = data.iter().copied().fold(params.mu + 4.0 * sd, f64::max);
    let lo = match model {
        ModelKind::Gaussian => data.iter().copied().fold(params.mu - 4.0 * sd, f64::min),
        ModelKind::FoldedNormal => 0.0,
    };
    let h = (hi - lo) / (PDF_POINTS - 1) as f64;
    (0..PDF_POINTS)
        .map(|i| {
            let y = lo + i as f64 * h;
            PdfRow {
                y,
                pdf: pdf(model, y, params),
            }
        })
        .collect()
}

fn grid_density(grid: &GridResult) -> Vec<DensityRow> {
    let cell = |axis: &[f64]| {
        if axis.len() > 1 {
            axis[1] - axis[0]
        } else {
            1.0
        }
    };
    let area = cell(&grid.mu_axis) * cell(&grid.logvar_axis);
    grid.triples()
        .map(|(mu, logvar, mass)| DensityRow {
            mu,
            logvar,
            variance: logvar.exp(),
            density: mass / area,
        })
        .collect()
}

fn svb_density(grid: &GridResult, model: ModelKind, fit: &FitResult) -> CliResult<Vec<DensityRow>> {
    let post = canonical_posterior(model, &fit.posterior);
    grid.triples()
        .map(|(mu, logvar, _)| {
            Ok(DensityRow {
                mu,
                logvar,
                variance: logvar.exp(),
                density: post.log_density(&[mu, logvar])?.exp(),
            })
        })
        .collect()
}

fn write_variant(
    out: &Path,
    tag: &str,
    setup: FigureSetup,
    grid: &GridResult,
    fit: &FitResult,
) -> CliResult<Vec<std::path::PathBuf>> {
    let fit_path = out.join(format!("fit_{tag}.json"));
    let trace_path = out.join(format!("trace_{tag}.csv"));
    let density_path = out.join(format!("svb_{tag}.csv"));
    let cmp_path = out.join(format!("comparison_{tag}.json"));

    write_json(&fit_path, fit)?;
    write_csv(&trace_path, &fit.trace.records)?;
    write_csv(&density_path, svb_density(grid, setup.model, fit)?)?;
    let canonical = canonical_posterior(setup.model, &fit.posterior);
    let comparison = compare(&grid.summary, &canonical)?;
    write_json(
        &cmp_path,
        &ComparisonFile {
            model: setup.model,
            fit: canonical,
            grid: grid.summary.clone(),
            comparison,
        },
    )?;
    Ok(vec![fit_path, trace_path, density_path, cmp_path])
}

pub fn run_figure(a: &FigureArgs, args: &[String]) -> CliResult<()> {
    let setup = FigureSetup::for_id(a.id)
        .ok_or_else(|| crate::error::CliError::Usage(format!("no figure {}", a.id)))?;
    let truth = NaturalParams::from_variance(TRUE_MU, TRUE_VARIANCE)?;
    let data: Dataset = sample_data(setup.model, truth, N_SAMPLES, a.seed)?;
    let prior = PriorSpec::isotropic(2, 0.0, PRIOR_VAR)?;

    // Panel (b) reproduces the likelihood-only grid.
    let spec = GridSpec {
        include_prior: false,
        ..GridSpec::default_for(setup.model)
    }
    .with_resolution(a.resolution);
    let grid = grid_posterior(setup.model, &data, None, &spec, Execution::Parallel)?;

    let base = TrainConfig {
        epochs: EPOCHS,
        batch_size: setup.batch_size,
        adam: AdamConfig::default(),
        seed: a.seed,
        ..TrainConfig::default()
    };
    let no_corr = fit_with(
        setup.model,
        &data,
        &prior,
        &TrainConfig {
            correlation_enabled: false,
            ..base.clone()
        },
    )?;
    let corr = fit_with(setup.model, &data, &prior, &base)?;

    ensure_dir(&a.out)?;
    let mut outputs = Vec::new();
    let data_path = a.out.join("data.csv");
    write_data(&data_path, &data)?;
    outputs.push(data_path);

    let hist_path = a.out.join("histogram.csv");
    write_csv(&hist_path, histogram(data.values(), HIST_BINS))?;
    outputs.push(hist_path);

    let pdf_path = a.out.join("true_pdf.csv");
    write_csv(&pdf_path, true_pdf(setup.model, truth, data.values()))?;
    outputs.push(pdf_path);

    let grid_path = a.out.join("grid.csv");
    write_csv(&grid_path, grid_density(&grid))?;
    outputs.push(grid_path);

    let summary_path = a.out.join("grid_summary.json");
    write_json(
        &summary_path,
        &GridSummaryFile {
            model: setup.model,
            spec,
            summary: grid.summary.clone(),
        },
    )?;
    outputs.push(summary_path);

    outputs.extend(write_variant(
        &a.out,
        "no_correlation",
        setup,
        &grid,
        &no_corr,
    )?);
    outputs.extend(write_variant(&a.out, "correlation", setup, &grid, &corr)?);

    let cfg = serde_json::json!({
        "figure": setup,
        "truth": truth,
        "n": N_SAMPLES,
        "prior": prior,
        "grid": spec,
        "train": base,
    });
    let mut m = RunManifest::new("figure", args, cfg, Some(a.seed));
    m.outputs = outputs;
    m.write(&a.out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_counts_everything() {
        let data = [0.0, 0.5, 1.0, 1.0, 2.0];
        let h = histogram(&data, 4);
        assert_eq!(h.iter().map(|r| r.count).sum::<usize>(), 5);
        assert_eq!(h[3].count, 1);
        let area: f64 = h.iter().map(|r| r.density * (r.bin_hi - r.bin_lo)).sum();
        assert!((area - 1.0).abs() < 1e-12);
    }

    #[test]
    fn setups() {
        assert_eq!(
            FigureSetup::for_id(4).unwrap().batch_size,
            BatchSize::Size(10)
        );
        assert_eq!(
            FigureSetup::for_id(5).unwrap().model,
            ModelKind::FoldedNormal
        );
        assert!(FigureSetup::for_id(7).is_none());
    }
}
