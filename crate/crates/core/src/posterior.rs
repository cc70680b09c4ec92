//! Multivariate-normal approximate posterior in Cholesky form.
//!
//! The covariance is `C = S Sᵀ` with `S` lower triangular, `S[i][i] = exp(v[i])`
//! and the strict lower triangle taken from `u` in row-major order
//! (`(1,0), (2,0), (2,1), ...`). With correlation disabled `S` is diagonal and
//! `u` is ignored.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::error::{Result, SvbError};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Number of strict lower-triangle entries for `p` parameters.
pub fn n_off_diagonal(p: usize) -> usize {
    p * p.saturating_sub(1) / 2
}

fn tri_index(i: usize, j: usize) -> usize {
    debug_assert!(i > j);
    i * (i - 1) / 2 + j
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if let Some(r) = rows.iter().find(|r| r.len() != n) {
        return Err(SvbError::DimensionMismatch {
            expected: n,
            got: r.len(),
        });
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// Log density of `MVN(mean, cov)` at `x`.
pub fn mvn_log_pdf(x: &[f64], mean: &[f64], cov: &[Vec<f64>]) -> Result<f64> {
    let p = mean.len();
    if x.len() != p {
        return Err(SvbError::DimensionMismatch {
            expected: p,
            got: x.len(),
        });
    }
    let c = from_rows(cov)?;
    let chol = c.cholesky().ok_or_else(|| SvbError::Domain {
        op: "mvn_log_pdf",
        detail: "covariance is not positive definite".into(),
    })?;
    let d = DVector::from_iterator(p, x.iter().zip(mean).map(|(a, b)| a - b));
    let z = chol
        .l()
        .solve_lower_triangular(&d)
        .expect("non-singular factor");
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok(-0.5 * (p as f64 * LN_2PI + log_det + z.norm_squared()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PriorRepr {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

/// MVN prior over the inference-space parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PriorRepr", into = "PriorRepr")]
pub struct PriorSpec {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
    precision: Vec<Vec<f64>>,
    log_det: f64,
}

impl TryFrom<PriorRepr> for PriorSpec {
    type Error = SvbError;

    fn try_from(r: PriorRepr) -> Result<Self> {
        PriorSpec::new(r.mean, r.cov)
    }
}

impl From<PriorSpec> for PriorRepr {
    fn from(p: PriorSpec) -> Self {
        PriorRepr {
            mean: p.mean,
            cov: p.cov,
        }
    }
}

impl PriorSpec {
    pub fn new(mean: Vec<f64>, cov: Vec<Vec<f64>>) -> Result<Self> {
        let p = mean.len();
        if p == 0 {
            return Err(SvbError::InvalidConfig(
                "prior must have at least one parameter".into(),
            ));
        }
        if cov.len() != p {
            return Err(SvbError::DimensionMismatch {
                expected: p,
                got: cov.len(),
            });
        }
        let c = from_rows(&cov)?;
        if c.iter().chain(mean.iter()).any(|x| !x.is_finite()) {
            return Err(SvbError::InvalidConfig(
                "prior contains non-finite values".into(),
            ));
        }
        for i in 0..p {
            for j in 0..i {
                let (a, b) = (c[(i, j)], c[(j, i)]);
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                    return Err(SvbError::InvalidConfig(
                        "prior covariance is not symmetric".into(),
                    ));
                }
            }
        }
        let chol = c.clone().cholesky().ok_or_else(|| {
            SvbError::InvalidConfig("prior covariance is not positive definite".into())
        })?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let precision = chol.inverse();
        Ok(PriorSpec {
            mean,
            cov,
            precision: to_rows(&precision),
            log_det,
        })
    }

    /// `MVN(mean * 1, variance * I)` in `p` dimensions.
    pub fn isotropic(p: usize, mean: f64, variance: f64) -> Result<Self> {
        let cov = (0..p)
            .map(|i| {
                (0..p)
                    .map(|j| if i == j { variance } else { 0.0 })
                    .collect()
            })
            .collect();
        Self::new(vec![mean; p], cov)
    }

    /// Per-coordinate means and variances, no correlation.
    pub fn diagonal(mean: Vec<f64>, variances: &[f64]) -> Result<Self> {
        let p = mean.len();
        if variances.len() != p {
            return Err(SvbError::DimensionMismatch {
                expected: p,
                got: variances.len(),
            });
        }
        let cov = (0..p)
            .map(|i| {
                (0..p)
                    .map(|j| if i == j { variances[i] } else { 0.0 })
                    .collect()
            })
            .collect();
        Self::new(mean, cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &[Vec<f64>] {
        &self.cov
    }

    pub fn precision(&self) -> &[Vec<f64>] {
        &self.precision
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn log_density(&self, theta: &[f64]) -> Result<f64> {
        mvn_log_pdf(theta, &self.mean, &self.cov)
    }
}

/// Hyper-parameters `(m, v, u)` of the approximate posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorParams {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub u: Vec<f64>,
    pub correlation_enabled: bool,
}

impl PosteriorParams {
    /// Mean at the prior mean, unit scale, no correlation.
    pub fn init_from_prior(prior: &PriorSpec, correlation_enabled: bool) -> Self {
        let p = prior.dim();
        PosteriorParams {
            m: prior.mean().to_vec(),
            v: vec![0.0; p],
            u: vec![0.0; n_off_diagonal(p)],
            correlation_enabled,
        }
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.dim();
        if p == 0 {
            return Err(SvbError::InvalidConfig(
                "posterior must have at least one parameter".into(),
            ));
        }
        if self.v.len() != p {
            return Err(SvbError::DimensionMismatch {
                expected: p,
                got: self.v.len(),
            });
        }
        if self.correlation_enabled && self.u.len() != n_off_diagonal(p) {
            return Err(SvbError::DimensionMismatch {
                expected: n_off_diagonal(p),
                got: self.u.len(),
            });
        }
        let used_u = if self.correlation_enabled {
            &self.u[..]
        } else {
            &[]
        };
        if self
            .m
            .iter()
            .chain(&self.v)
            .chain(used_u)
            .any(|x| !x.is_finite())
        {
            return Err(SvbError::InvalidConfig(
                "posterior parameters must be finite".into(),
            ));
        }
        Ok(())
    }

    /// Length of the optimized vector: `2P`, plus `P(P-1)/2` with correlation.
    pub fn zeta_len(&self) -> usize {
        let p = self.dim();
        if self.correlation_enabled {
            2 * p + n_off_diagonal(p)
        } else {
            2 * p
        }
    }

    /// Flattened `[m.., v.., u..]`; `u` only when correlation is enabled.
    pub fn to_zeta(&self) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.zeta_len());
        z.extend_from_slice(&self.m);
        z.extend_from_slice(&self.v);
        if self.correlation_enabled {
            z.extend_from_slice(&self.u);
        }
        z
    }

    pub fn set_zeta(&mut self, zeta: &[f64]) -> Result<()> {
        if zeta.len() != self.zeta_len() {
            return Err(SvbError::DimensionMismatch {
                expected: self.zeta_len(),
                got: zeta.len(),
            });
        }
        let p = self.dim();
        self.m.copy_from_slice(&zeta[..p]);
        self.v.copy_from_slice(&zeta[p..2 * p]);
        if self.correlation_enabled {
            self.u.copy_from_slice(&zeta[2 * p..]);
        }
        Ok(())
    }

    /// Records the hyper-parameters as tape leaves in `to_zeta` order.
    pub fn register(&self, tape: &mut Tape) -> Result<PosteriorNodes> {
        self.validate()?;
        let m = self
            .m
            .iter()
            .map(|&x| tape.var(x))
            .collect::<Result<Vec<_>>>()?;
        let v = self
            .v
            .iter()
            .map(|&x| tape.var(x))
            .collect::<Result<Vec<_>>>()?;
        let u = if self.correlation_enabled {
            self.u
                .iter()
                .map(|&x| tape.var(x))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        Ok(PosteriorNodes {
            m,
            v,
            u,
            correlation_enabled: self.correlation_enabled,
        })
    }

    /// Plain-number Cholesky factor.
    pub fn cholesky(&self) -> DMatrix<f64> {
        let p = self.dim();
        DMatrix::from_fn(p, p, |i, j| {
            if i == j {
                self.v[i].exp()
            } else if i > j && self.correlation_enabled {
                self.u[tri_index(i, j)]
            } else {
                0.0
            }
        })
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let s = self.cholesky();
        &s * s.transpose()
    }

    /// Plain-number `m + S eps`.
    pub fn sample(&self, eps: &[f64]) -> Result<Vec<f64>> {
        if eps.len() != self.dim() {
            return Err(SvbError::DimensionMismatch {
                expected: self.dim(),
                got: eps.len(),
            });
        }
        let s = self.cholesky();
        let e = DVector::from_column_slice(eps);
        let se = s * e;
        Ok(self.m.iter().zip(se.iter()).map(|(a, b)| a + b).collect())
    }
}

/// Tape leaves for a [`PosteriorParams`].
#[derive(Debug, Clone)]
pub struct PosteriorNodes {
    pub m: Vec<NodeId>,
    pub v: Vec<NodeId>,
    pub u: Vec<NodeId>,
    pub correlation_enabled: bool,
}

impl PosteriorNodes {
    pub fn dim(&self) -> usize {
        self.m.len()
    }

    /// Splits a flat `[m.., v.., u..]` node list, the inverse of [`Self::leaves`].
    pub fn from_leaves(leaves: &[NodeId], p: usize, correlation_enabled: bool) -> Result<Self> {
        let expected = if correlation_enabled {
            2 * p + n_off_diagonal(p)
        } else {
            2 * p
        };
        if leaves.len() != expected {
            return Err(SvbError::DimensionMismatch {
                expected,
                got: leaves.len(),
            });
        }
        Ok(PosteriorNodes {
            m: leaves[..p].to_vec(),
            v: leaves[p..2 * p].to_vec(),
            u: leaves[2 * p..].to_vec(),
            correlation_enabled,
        })
    }

    /// Leaves in `PosteriorParams::to_zeta` order.
    pub fn leaves(&self) -> Vec<NodeId> {
        self.m
            .iter()
            .chain(&self.v)
            .chain(&self.u)
            .copied()
            .collect()
    }
}

/// Lower-triangular factor on the tape; `None` marks a structural zero.
#[derive(Debug, Clone)]
pub struct CholeskyNodes {
    rows: Vec<Vec<Option<NodeId>>>,
}

impl CholeskyNodes {
    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<NodeId> {
        self.rows[i][j]
    }
}

#[allow(clippy::needless_range_loop)]
pub fn build_cholesky(tape: &mut Tape, params: &PosteriorNodes) -> Result<CholeskyNodes> {
    let p = params.dim();
    let mut rows = vec![vec![None; p]; p];
    for i in 0..p {
        rows[i][i] = Some(tape.exp(params.v[i])?);
        if params.correlation_enabled {
            for j in 0..i {
                rows[i][j] = Some(params.u[tri_index(i, j)]);
            }
        }
    }
    Ok(CholeskyNodes { rows })
}

/// `theta* = m + S eps` with `eps` recorded as constants.
pub fn reparam_sample(
    tape: &mut Tape,
    params: &PosteriorNodes,
    eps: &[f64],
) -> Result<Vec<NodeId>> {
    let s = build_cholesky(tape, params)?;
    reparam_with_factor(tape, params, &s, eps)
}

/// As [`reparam_sample`], reusing an already-recorded factor.
pub fn reparam_with_factor(
    tape: &mut Tape,
    params: &PosteriorNodes,
    s: &CholeskyNodes,
    eps: &[f64],
) -> Result<Vec<NodeId>> {
    let p = params.dim();
    if eps.len() != p {
        return Err(SvbError::DimensionMismatch {
            expected: p,
            got: eps.len(),
        });
    }
    let mut theta = Vec::with_capacity(p);
    for i in 0..p {
        let mut terms = vec![params.m[i]];
        for (j, &e) in eps.iter().enumerate().take(i + 1) {
            if let Some(sij) = s.get(i, j) {
                let c = tape.constant(e)?;
                terms.push(tape.mul(sij, c)?);
            }
        }
        theta.push(tape.sum_many(&terms)?);
    }
    Ok(theta)
}

/// Closed-form `KL(q || p)` for MVN `q` and `p`:
/// `½ [tr(C0⁻¹ C) - log(|C| / |C0|) - P + (m - m0)ᵀ C0⁻¹ (m - m0)]`,
/// with `log |C| = 2 Σ v`.
pub fn kl_to_prior(tape: &mut Tape, params: &PosteriorNodes, prior: &PriorSpec) -> Result<NodeId> {
    let s = build_cholesky(tape, params)?;
    kl_with_factor(tape, params, &s, prior)
}

/// As [`kl_to_prior`], reusing an already-recorded factor.
#[allow(clippy::needless_range_loop)]
pub fn kl_with_factor(
    tape: &mut Tape,
    params: &PosteriorNodes,
    s: &CholeskyNodes,
    prior: &PriorSpec,
) -> Result<NodeId> {
    let p = params.dim();
    if prior.dim() != p {
        return Err(SvbError::DimensionMismatch {
            expected: prior.dim(),
            got: p,
        });
    }
    let lam = prior.precision();

    // tr(Λ C) = Σ_i Λ_ii C_ii + 2 Σ_{i>j} Λ_ij C_ij, with C_ij = Σ_k S_ik S_jk.
    let mut trace_terms = Vec::new();
    for i in 0..p {
        for j in 0..=i {
            let mut prods = Vec::new();
            for k in 0..=j {
                if let (Some(a), Some(b)) = (s.get(i, k), s.get(j, k)) {
                    prods.push(if i == j {
                        tape.square(a)?
                    } else {
                        tape.mul(a, b)?
                    });
                }
            }
            if prods.is_empty() {
                continue;
            }
            let cij = tape.sum_many(&prods)?;
            let w = if i == j { lam[i][i] } else { 2.0 * lam[i][j] };
            trace_terms.push(tape.scale(cij, w)?);
        }
    }
    let trace = tape.sum_many(&trace_terms)?;

    let mut quad_terms = Vec::new();
    let mut diffs = Vec::with_capacity(p);
    for i in 0..p {
        let m0 = tape.constant(prior.mean()[i])?;
        diffs.push(tape.sub(params.m[i], m0)?);
    }
    for i in 0..p {
        for j in 0..=i {
            let prod = if i == j {
                tape.square(diffs[i])?
            } else {
                tape.mul(diffs[i], diffs[j])?
            };
            let w = if i == j { lam[i][i] } else { 2.0 * lam[i][j] };
            quad_terms.push(tape.scale(prod, w)?);
        }
    }
    let quad = tape.sum_many(&quad_terms)?;

    let sum_v = tape.sum_many(&params.v)?;
    let neg_log_det = tape.scale(sum_v, -2.0)?;
    let k = tape.constant(prior.log_det() - p as f64)?;
    let total = tape.sum_many(&[trace, neg_log_det, k, quad])?;
    tape.scale(total, 0.5)
}

/// Plain-number posterior moments, serialized as
/// `{"m": [...], "C": [[...]], "rho": r, "correlation_enabled": bool}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub m: Vec<f64>,
    #[serde(rename = "C")]
    pub cov: Vec<Vec<f64>>,
    pub rho: f64,
    pub correlation_enabled: bool,
}

impl PosteriorSummary {
    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn std_devs(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.cov[i][i].sqrt()).collect()
    }

    pub fn log_density(&self, theta: &[f64]) -> Result<f64> {
        mvn_log_pdf(theta, &self.m, &self.cov)
    }
}

/// Mean, covariance `S Sᵀ`, and the correlation between the first two
/// parameters (0 when correlation is disabled or `P < 2`).
pub fn extract_posterior(params: &PosteriorParams) -> PosteriorSummary {
    let c = params.covariance();
    let rho = if params.correlation_enabled && params.dim() >= 2 {
        c[(0, 1)] / (c[(0, 0)] * c[(1, 1)]).sqrt()
    } else {
        0.0
    };
    PosteriorSummary {
        m: params.m.clone(),
        cov: to_rows(&c),
        rho,
        correlation_enabled: params.correlation_enabled,
    }
}
