//! Brute-force posterior over a regular 2D grid in `(mu, log variance)`.
//!
//! Used as the reference against which variational fits are judged. Every
//! node gets the unnormalized log posterior (log-likelihood, plus the log
//! prior when requested); the grid is then shifted by its maximum,
//! exponentiated, and normalized so the node masses sum to one. Cells are
//! uniformly weighted.

use serde::{Deserialize, Serialize};

use crate::distributions::{loglik_value, Dataset, ModelKind, ThetaVector};
use crate::error::{Result, SvbError};
use crate::parallel::{map_range, Execution};
use crate::posterior::{PosteriorSummary, PriorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub nodes: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, nodes: usize) -> Self {
        Axis { lo, hi, nodes }
    }

    /// A single node at `at`; pins the parameter.
    pub fn pinned(at: f64) -> Self {
        Axis {
            lo: at,
            hi: at,
            nodes: 1,
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite()) {
            return Err(SvbError::InvalidConfig(format!(
                "{name} range must be finite"
            )));
        }
        match self.nodes {
            0 => Err(SvbError::InvalidConfig(format!(
                "{name} axis needs at least one node"
            ))),
            1 if self.lo == self.hi => Ok(()),
            1 => Err(SvbError::InvalidConfig(format!(
                "{name} axis with one node must have lo == hi"
            ))),
            _ if self.lo < self.hi => Ok(()),
            _ => Err(SvbError::InvalidConfig(format!(
                "{name} range must satisfy lo < hi, got [{}, {}]",
                self.lo, self.hi
            ))),
        }
    }

    /// Node spacing; 0 for a pinned axis.
    pub fn step(&self) -> f64 {
        if self.nodes < 2 {
            0.0
        } else {
            (self.hi - self.lo) / (self.nodes - 1) as f64
        }
    }

    pub fn coords(&self) -> Vec<f64> {
        let h = self.step();
        (0..self.nodes)
            .map(|i| {
                if i + 1 == self.nodes {
                    self.hi
                } else {
                    self.lo + i as f64 * h
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub mu: Axis,
    pub logvar: Axis,
    pub include_prior: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            mu: Axis::new(-1.0, 3.0, 201),
            logvar: Axis::new(0.5f64.ln(), 16f64.ln(), 201),
            include_prior: true,
        }
    }
}

impl GridSpec {
    /// Default grid for `model`. The Folded Normal likelihood is symmetric
    /// under `mu -> -mu`, so its grid covers the identified half-plane
    /// `mu >= 0` only.
    pub fn default_for(model: ModelKind) -> Self {
        match model {
            ModelKind::Gaussian => Self::default(),
            ModelKind::FoldedNormal => GridSpec {
                mu: Axis::new(0.0, 4.0, 201),
                logvar: Axis::new(0.25f64.ln(), 32f64.ln(), 201),
                include_prior: true,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.mu.validate("mu")?;
        self.logvar.validate("logvar")
    }

    /// Same ranges with `nodes` per non-pinned axis.
    pub fn with_resolution(mut self, nodes: usize) -> Self {
        for axis in [&mut self.mu, &mut self.logvar] {
            if axis.nodes > 1 {
                axis.nodes = nodes;
            }
        }
        self
    }
}

/// Moments and mode of the normalized grid density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub means: [f64; 2],
    pub variances: [f64; 2],
    pub covariance: f64,
    pub map: [f64; 2],
    pub rho: f64,
}

impl GridSummary {
    /// The grid moments as an MVN summary, for side-by-side comparison.
    pub fn as_posterior(&self) -> PosteriorSummary {
        PosteriorSummary {
            m: self.means.to_vec(),
            cov: vec![
                vec![self.variances[0], self.covariance],
                vec![self.covariance, self.variances[1]],
            ],
            rho: self.rho,
            correlation_enabled: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub mu_axis: Vec<f64>,
    pub logvar_axis: Vec<f64>,
    /// Normalized masses, row-major with `mu` as the outer index.
    pub mass: Vec<f64>,
    pub summary: GridSummary,
}

impl GridResult {
    pub fn mass_at(&self, i_mu: usize, j_logvar: usize) -> f64 {
        self.mass[i_mu * self.logvar_axis.len() + j_logvar]
    }

    /// `(mu, logvar, mass)` for every node in storage order.
    pub fn triples(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let nl = self.logvar_axis.len();
        self.mass
            .iter()
            .enumerate()
            .map(move |(k, &w)| (self.mu_axis[k / nl], self.logvar_axis[k % nl], w))
    }
}

/// Evaluates the grid posterior. `prior` is required when
/// `spec.include_prior` is set.
pub fn grid_posterior(
    model: ModelKind,
    data: &Dataset,
    prior: Option<&PriorSpec>,
    spec: &GridSpec,
    exec: Execution,
) -> Result<GridResult> {
    spec.validate()?;
    model.validate_data(data.values())?;
    let prior = match (spec.include_prior, prior) {
        (true, Some(p)) if p.dim() != 2 => {
            return Err(SvbError::DimensionMismatch {
                expected: 2,
                got: p.dim(),
            })
        }
        (true, Some(p)) => Some(p),
        (true, None) => {
            return Err(SvbError::InvalidConfig(
                "grid requested with prior but no prior supplied".into(),
            ))
        }
        (false, _) => None,
    };

    let mu_axis = spec.mu.coords();
    let logvar_axis = spec.logvar.coords();
    let rows = map_range(exec, mu_axis.len(), |i| {
        logvar_axis
            .iter()
            .map(|&lv| {
                let theta = ThetaVector::new(mu_axis[i], lv);
                let mut lp = loglik_value(model, theta, data.values());
                if let Some(p) = prior {
                    lp += p.log_density(&[mu_axis[i], lv])?;
                }
                Ok(lp)
            })
            .collect::<Result<Vec<f64>>>()
    });
    let mut log_post = Vec::with_capacity(mu_axis.len() * logvar_axis.len());
    for row in rows {
        log_post.extend(row?);
    }
    normalize_log_grid(&log_post, mu_axis, logvar_axis)
}

/// Normalizes row-major log values into a [`GridResult`].
pub fn normalize_log_grid(
    log_post: &[f64],
    mu_axis: Vec<f64>,
    logvar_axis: Vec<f64>,
) -> Result<GridResult> {
    let (nm, nl) = (mu_axis.len(), logvar_axis.len());
    if log_post.len() != nm * nl {
        return Err(SvbError::DimensionMismatch {
            expected: nm * nl,
            got: log_post.len(),
        });
    }
    let max = log_post
        .iter()
        .copied()
        .filter(|x| !x.is_nan())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(SvbError::GridUnderflow);
    }
    let weights: Vec<f64> = log_post
        .iter()
        .map(|&l| if l.is_nan() { 0.0 } else { (l - max).exp() })
        .collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(SvbError::GridUnderflow);
    }
    let mass: Vec<f64> = weights.iter().map(|w| w / total).collect();

    let mut means = [0.0; 2];
    for (k, &w) in mass.iter().enumerate() {
        means[0] += w * mu_axis[k / nl];
        means[1] += w * logvar_axis[k % nl];
    }
    // A pinned axis has its node value as mean, exactly.
    if nm == 1 {
        means[0] = mu_axis[0];
    }
    if nl == 1 {
        means[1] = logvar_axis[0];
    }
    let mut variances = [0.0; 2];
    let mut covariance = 0.0;
    let mut best = (0usize, f64::NEG_INFINITY);
    for (k, &w) in mass.iter().enumerate() {
        let d0 = mu_axis[k / nl] - means[0];
        let d1 = logvar_axis[k % nl] - means[1];
        variances[0] += w * d0 * d0;
        variances[1] += w * d1 * d1;
        covariance += w * d0 * d1;
        if w > best.1 {
            best = (k, w);
        }
    }
    let denom = (variances[0] * variances[1]).sqrt();
    let rho = if denom > 0.0 { covariance / denom } else { 0.0 };
    let map = [mu_axis[best.0 / nl], logvar_axis[best.0 % nl]];

    Ok(GridResult {
        mu_axis,
        logvar_axis,
        mass,
        summary: GridSummary {
            means,
            variances,
            covariance,
            map,
            rho,
        },
    })
}

/// Discrepancies between a grid reference and a variational posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub mean_abs_diff: [f64; 2],
    /// `|var_svb / var_grid - 1|` per parameter.
    pub variance_ratio_error: [f64; 2],
    pub rho_grid: f64,
    pub rho_svb: f64,
    pub rho_abs_diff: f64,
    pub rho_sign_agrees: bool,
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Maps a posterior onto the half-plane the model's grid covers. For the
/// Folded Normal a fit with negative mean `mu` is reflected to `-mu`, which
/// flips the sign of the `(mu, logvar)` covariance; other models pass through.
pub fn canonical_posterior(model: ModelKind, fit: &PosteriorSummary) -> PosteriorSummary {
    let mut out = fit.clone();
    if model == ModelKind::FoldedNormal && out.m.first().is_some_and(|&m| m < 0.0) {
        out.m[0] = -out.m[0];
        for j in 1..out.cov.len() {
            out.cov[0][j] = -out.cov[0][j];
            out.cov[j][0] = -out.cov[j][0];
        }
        out.rho = -out.rho;
    }
    out
}

pub fn compare(grid: &GridSummary, fit: &PosteriorSummary) -> Result<Comparison> {
    if fit.m.len() != 2 || fit.cov.len() != 2 || fit.cov.iter().any(|r| r.len() != 2) {
        return Err(SvbError::DimensionMismatch {
            expected: 2,
            got: fit.m.len(),
        });
    }
    let mut mean_abs_diff = [0.0; 2];
    let mut variance_ratio_error = [0.0; 2];
    for i in 0..2 {
        mean_abs_diff[i] = (fit.m[i] - grid.means[i]).abs();
        variance_ratio_error[i] = (fit.cov[i][i] / grid.variances[i] - 1.0).abs();
    }
    Ok(Comparison {
        mean_abs_diff,
        variance_ratio_error,
        rho_grid: grid.rho,
        rho_svb: fit.rho,
        rho_abs_diff: (grid.rho - fit.rho).abs(),
        rho_sign_agrees: sign(grid.rho) == sign(fit.rho),
    })
}
