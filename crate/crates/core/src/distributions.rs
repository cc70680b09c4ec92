//! Likelihood models: plain-number densities for data generation and the
//! grid oracle, and tape-recorded log-likelihoods for the variational
//! objective.
//!
//! Both models are parameterized in inference space as
//! `theta = (mu, -log beta) = (mean, log variance)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::error::{Result, SvbError};
use crate::rng::SvbRng;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Gaussian,
    FoldedNormal,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Gaussian => "gaussian",
            ModelKind::FoldedNormal => "folded-normal",
        }
    }

    /// Checks that every value lies in the model's support.
    pub fn validate_data(self, data: &[f64]) -> Result<()> {
        if let Some(y) = data.iter().find(|y| !y.is_finite()) {
            return Err(SvbError::Domain {
                op: "data",
                detail: format!("non-finite observation {y}"),
            });
        }
        if self == ModelKind::FoldedNormal {
            if let Some((i, y)) = data.iter().enumerate().find(|(_, &y)| y <= 0.0) {
                return Err(SvbError::Domain {
                    op: "folded_normal",
                    detail: format!("observation {i} = {y} is outside the support y > 0"),
                });
            }
        }
        Ok(())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "gaussian" => Ok(ModelKind::Gaussian),
            "folded-normal" | "folded_normal" | "foldednormal" => Ok(ModelKind::FoldedNormal),
            other => Err(format!(
                "unknown model `{other}` (expected gaussian or folded-normal)"
            )),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Mean and precision of the generative distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NaturalParams {
    pub mu: f64,
    pub beta: f64,
}

impl NaturalParams {
    pub fn new(mu: f64, beta: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(SvbError::InvalidConfig(format!(
                "mean must be finite, got {mu}"
            )));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(SvbError::InvalidConfig(format!(
                "precision must be positive and finite, got {beta}"
            )));
        }
        Ok(NaturalParams { mu, beta })
    }

    pub fn from_variance(mu: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(SvbError::InvalidConfig(format!(
                "variance must be positive and finite, got {variance}"
            )));
        }
        Self::new(mu, 1.0 / variance)
    }

    pub fn variance(&self) -> f64 {
        1.0 / self.beta
    }

    pub fn to_theta(self) -> ThetaVector {
        ThetaVector {
            mu: self.mu,
            neg_log_beta: -self.beta.ln(),
        }
    }
}

/// Inference-space parameters `(mu, -log beta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaVector {
    pub mu: f64,
    pub neg_log_beta: f64,
}

impl ThetaVector {
    pub fn new(mu: f64, neg_log_beta: f64) -> Self {
        ThetaVector { mu, neg_log_beta }
    }

    pub fn to_natural(self) -> NaturalParams {
        NaturalParams {
            mu: self.mu,
            beta: (-self.neg_log_beta).exp(),
        }
    }

    pub fn as_array(self) -> [f64; 2] {
        [self.mu, self.neg_log_beta]
    }
}

/// Ordered real-valued observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    values: Vec<f64>,
}

impl Dataset {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(SvbError::EmptyBatch);
        }
        if let Some(y) = values.iter().find(|y| !y.is_finite()) {
            return Err(SvbError::Domain {
                op: "dataset",
                detail: format!("non-finite observation {y}"),
            });
        }
        Ok(Dataset { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }

    /// Unbiased sample variance (`n - 1` denominator); 0 for a single point.
    pub fn variance(&self) -> f64 {
        let n = self.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        self.values.iter().map(|y| (y - m).powi(2)).sum::<f64>() / (n - 1) as f64
    }
}

fn check_batch(batch: &[f64], n_total: usize) -> Result<()> {
    if batch.is_empty() {
        return Err(SvbError::EmptyBatch);
    }
    if n_total < batch.len() {
        return Err(SvbError::BatchSize {
            batch_size: batch.len(),
            n_total,
        });
    }
    Ok(())
}

fn check_theta(theta: &[NodeId]) -> Result<()> {
    if theta.len() != 2 {
        return Err(SvbError::DimensionMismatch {
            expected: 2,
            got: theta.len(),
        });
    }
    Ok(())
}

/// `(N/2) log(beta / 2π)` recorded on the tape, with `log beta = -theta[1]`.
fn record_normalizer(tape: &mut Tape, neg_log_beta: NodeId, n_total: usize) -> Result<NodeId> {
    let log_beta = tape.neg(neg_log_beta)?;
    let shifted = tape.add_const(log_beta, -LN_2PI)?;
    tape.scale(shifted, n_total as f64 / 2.0)
}

/// Gaussian log-likelihood of a batch, rescaled to the full data size:
/// `(N/2) log(beta/2π) - (N/M) (beta/2) Σ (y_m - mu)^2` with `M = batch.len()`.
pub fn gaussian_loglik(
    tape: &mut Tape,
    theta: &[NodeId],
    batch: &[f64],
    n_total: usize,
) -> Result<NodeId> {
    check_theta(theta)?;
    check_batch(batch, n_total)?;
    let (mu, neg_log_beta) = (theta[0], theta[1]);

    let mut squares = Vec::with_capacity(batch.len());
    for &y in batch {
        let c = tape.constant(y)?;
        let d = tape.sub(c, mu)?;
        squares.push(tape.square(d)?);
    }
    let ss = tape.sum_many(&squares)?;
    let log_beta = tape.neg(neg_log_beta)?;
    let beta = tape.exp(log_beta)?;
    let quad = tape.mul(beta, ss)?;
    let data_term = tape.scale(quad, n_total as f64 / (2.0 * batch.len() as f64))?;

    let norm = record_normalizer(tape, neg_log_beta, n_total)?;
    tape.sub(norm, data_term)
}

/// `log(e^a + e^b)` on the tape, factored around the larger argument.
fn record_log_add_exp(tape: &mut Tape, a: NodeId, b: NodeId) -> Result<NodeId> {
    let (hi, lo) = if tape.value(a) >= tape.value(b) {
        (a, b)
    } else {
        (b, a)
    };
    let gap = tape.sub(lo, hi)?;
    let e = tape.exp(gap)?;
    let one_plus = tape.add_const(e, 1.0)?;
    let l = tape.log(one_plus)?;
    tape.add(hi, l)
}

/// Folded Normal log-likelihood of a batch using the two-term density,
/// with the data-dependent sum rescaled by `N/M`:
/// `(N/2) log(beta/2π) + (N/M) Σ log(exp(-beta/2 (y-mu)^2) + exp(-beta/2 (y+mu)^2))`.
pub fn folded_normal_loglik(
    tape: &mut Tape,
    theta: &[NodeId],
    batch: &[f64],
    n_total: usize,
) -> Result<NodeId> {
    check_theta(theta)?;
    check_batch(batch, n_total)?;
    ModelKind::FoldedNormal.validate_data(batch)?;
    let (mu, neg_log_beta) = (theta[0], theta[1]);

    let log_beta = tape.neg(neg_log_beta)?;
    let beta = tape.exp(log_beta)?;
    let neg_half_beta = tape.scale(beta, -0.5)?;

    let mut terms = Vec::with_capacity(batch.len());
    for &y in batch {
        let c = tape.constant(y)?;
        let dm = tape.sub(c, mu)?;
        let dp = tape.add(c, mu)?;
        let sm = tape.square(dm)?;
        let sp = tape.square(dp)?;
        let a = tape.mul(neg_half_beta, sm)?;
        let b = tape.mul(neg_half_beta, sp)?;
        terms.push(record_log_add_exp(tape, a, b)?);
    }
    let s = tape.sum_many(&terms)?;
    let data_term = tape.scale(s, n_total as f64 / batch.len() as f64)?;

    let norm = record_normalizer(tape, neg_log_beta, n_total)?;
    tape.add(norm, data_term)
}

/// Dispatches to the model's tape log-likelihood.
pub fn record_loglik(
    kind: ModelKind,
    tape: &mut Tape,
    theta: &[NodeId],
    batch: &[f64],
    n_total: usize,
) -> Result<NodeId> {
    match kind {
        ModelKind::Gaussian => gaussian_loglik(tape, theta, batch, n_total),
        ModelKind::FoldedNormal => folded_normal_loglik(tape, theta, batch, n_total),
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Log density; `-inf` outside the support.
pub fn log_pdf(kind: ModelKind, y: f64, params: NaturalParams) -> f64 {
    let NaturalParams { mu, beta } = params;
    let norm = 0.5 * (beta.ln() - LN_2PI);
    match kind {
        ModelKind::Gaussian => norm - 0.5 * beta * (y - mu).powi(2),
        ModelKind::FoldedNormal => {
            if y <= 0.0 {
                return f64::NEG_INFINITY;
            }
            norm + log_add_exp(
                -0.5 * beta * (y - mu).powi(2),
                -0.5 * beta * (y + mu).powi(2),
            )
        }
    }
}

pub fn pdf(kind: ModelKind, y: f64, params: NaturalParams) -> f64 {
    log_pdf(kind, y, params).exp()
}

/// Two-term Folded Normal density written out directly.
pub fn folded_normal_pdf_two_term(y: f64, params: NaturalParams) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    let NaturalParams { mu, beta } = params;
    let k = (beta / (2.0 * PI)).sqrt();
    k * (-0.5 * beta * (y - mu).powi(2)).exp() + k * (-0.5 * beta * (y + mu).powi(2)).exp()
}

/// Equivalent hyperbolic-cosine form:
/// `sqrt(2 beta / π) exp(-beta (y^2 + mu^2) / 2) cosh(beta mu y)`.
pub fn folded_normal_pdf_cosh(y: f64, params: NaturalParams) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    let NaturalParams { mu, beta } = params;
    (2.0 * beta / PI).sqrt() * (-0.5 * beta * (y * y + mu * mu)).exp() * (beta * mu * y).cosh()
}

/// Full-data log-likelihood at plain-number `theta`.
pub fn loglik_value(kind: ModelKind, theta: ThetaVector, data: &[f64]) -> f64 {
    let params = theta.to_natural();
    data.iter().map(|&y| log_pdf(kind, y, params)).sum()
}

/// `n` i.i.d. draws. The Gaussian uses `mu + sigma * z`; the Folded Normal
/// takes the absolute value of a Gaussian draw (an exact zero is redrawn).
pub fn sample_data(kind: ModelKind, params: NaturalParams, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(SvbError::InvalidConfig(
            "sample count must be at least 1".into(),
        ));
    }
    let sigma = params.variance().sqrt();
    let mut rng = SvbRng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n);
    while values.len() < n {
        let y = params.mu + sigma * rng.std_normal();
        match kind {
            ModelKind::Gaussian => values.push(y),
            ModelKind::FoldedNormal if y != 0.0 => values.push(y.abs()),
            ModelKind::FoldedNormal => {}
        }
    }
    Dataset::new(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;

    fn theta_nodes(t: &mut Tape, mu: f64, nlb: f64) -> Vec<NodeId> {
        vec![t.var(mu).unwrap(), t.var(nlb).unwrap()]
    }

    #[test]
    fn gaussian_single_point_value() {
        // theta = (1, log 4): beta = 1/4, quadratic term vanishes.
        let mut t = Tape::new();
        let th = theta_nodes(&mut t, 1.0, 4f64.ln());
        let ll = gaussian_loglik(&mut t, &th, &[1.0], 1).unwrap();
        // 0.5 * ln(0.25 / 2π), evaluated independently.
        let expected = 0.5 * (0.25 / (2.0 * PI)).ln();
        assert!((t.value(ll) - expected).abs() < 1e-14);
        assert!((t.value(ll) - (-1.612_085_713_764_618)).abs() < 1e-12);
    }

    #[test]
    fn gaussian_batch_errors() {
        let mut t = Tape::new();
        let th = theta_nodes(&mut t, 0.0, 0.0);
        assert_eq!(
            gaussian_loglik(&mut t, &th, &[], 3),
            Err(SvbError::EmptyBatch)
        );
        assert!(matches!(
            gaussian_loglik(&mut t, &th, &[1.0, 2.0], 1),
            Err(SvbError::BatchSize { .. })
        ));
    }

    #[test]
    fn folded_rejects_non_positive() {
        let mut t = Tape::new();
        let th = theta_nodes(&mut t, 1.0, 0.0);
        assert!(matches!(
            folded_normal_loglik(&mut t, &th, &[1.0, -0.5], 2),
            Err(SvbError::Domain { .. })
        ));
        assert!(folded_normal_loglik(&mut t, &th, &[0.0], 1).is_err());
    }

    #[test]
    fn folded_at_zero_mean_is_twice_gaussian() {
        let p = NaturalParams::new(0.0, 0.7).unwrap();
        for y in [0.1, 0.5, 1.0, 3.0, 7.5] {
            let f = pdf(ModelKind::FoldedNormal, y, p);
            let g = pdf(ModelKind::Gaussian, y, p);
            assert!(
                (f - 2.0 * g).abs() <= 1e-14 * f.max(1e-300),
                "{y}: {f} vs {g}"
            );
        }
    }

    #[test]
    fn gaussian_peak_and_folded_support() {
        let p = NaturalParams::new(1.3, 2.5).unwrap();
        let peak = pdf(ModelKind::Gaussian, 1.3, p);
        assert!((peak - (2.5 / (2.0 * PI)).sqrt()).abs() < 1e-15);
        assert_eq!(pdf(ModelKind::FoldedNormal, -1.0, p), 0.0);
        assert_eq!(folded_normal_pdf_two_term(-1.0, p), 0.0);
    }

    #[test]
    fn tape_gradients_match_finite_differences() {
        let data = sample_data(
            ModelKind::Gaussian,
            NaturalParams::from_variance(1.0, 4.0).unwrap(),
            30,
            3,
        )
        .unwrap();
        for &(mu, nlb) in &[(0.3, 0.8), (1.7, -0.4), (-2.0, 2.1)] {
            let rep = finite_diff_check(
                |t, v| gaussian_loglik(t, v, data.values(), 30),
                &[mu, nlb],
                1e-5,
            )
            .unwrap();
            assert!(rep.passed, "gaussian {rep:?}");
        }
        let folded: Vec<f64> = data.values().iter().map(|y| y.abs()).collect();
        for &(mu, nlb) in &[(0.3, 0.8), (1.7, -0.4), (-2.0, 2.1), (0.0, 0.0)] {
            let rep = finite_diff_check(
                |t, v| folded_normal_loglik(t, v, &folded, 30),
                &[mu, nlb],
                1e-5,
            )
            .unwrap();
            assert!(rep.passed, "folded {rep:?}");
        }
    }

    #[test]
    fn full_tape_loglik_matches_log_pdf_sum() {
        let params = NaturalParams::from_variance(0.5, 2.0).unwrap();
        let theta = ThetaVector::new(0.8, 0.3);
        for kind in [ModelKind::Gaussian, ModelKind::FoldedNormal] {
            let data = sample_data(kind, params, 50, 9).unwrap();
            let mut t = Tape::new();
            let th = theta_nodes(&mut t, theta.mu, theta.neg_log_beta);
            let ll = record_loglik(kind, &mut t, &th, data.values(), data.len()).unwrap();
            let direct = loglik_value(kind, theta, data.values());
            assert!(
                ((t.value(ll) - direct) / direct).abs() < 1e-10,
                "{kind}: {} vs {direct}",
                t.value(ll)
            );
        }
    }

    #[test]
    fn theta_round_trip() {
        for &(mu, nlb) in &[(0.0, 0.0), (1.0, 4f64.ln()), (-3.2, -5.5), (7.0, 9.0)] {
            let th = ThetaVector::new(mu, nlb);
            let back = th.to_natural().to_theta();
            assert!((back.mu - mu).abs() < 1e-12);
            assert!((back.neg_log_beta - nlb).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_mean_within_bound_and_deterministic() {
        let p = NaturalParams::from_variance(1.0, 4.0).unwrap();
        let d = sample_data(ModelKind::Gaussian, p, 100, 42).unwrap();
        assert!((d.mean() - 1.0).abs() < 0.6, "mean {}", d.mean());
        let again = sample_data(ModelKind::Gaussian, p, 100, 42).unwrap();
        assert_eq!(d, again);
        let f = sample_data(ModelKind::FoldedNormal, p, 500, 42).unwrap();
        assert!(f.values().iter().all(|&y| y > 0.0));
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(NaturalParams::new(0.0, 0.0).is_err());
        assert!(NaturalParams::from_variance(0.0, -1.0).is_err());
        assert!(sample_data(
            ModelKind::Gaussian,
            NaturalParams::new(0.0, 1.0).unwrap(),
            0,
            1
        )
        .is_err());
    }

    #[test]
    fn model_kind_parsing() {
        assert_eq!(
            "gaussian".parse::<ModelKind>().unwrap(),
            ModelKind::Gaussian
        );
        assert_eq!(
            "folded-normal".parse::<ModelKind>().unwrap(),
            ModelKind::FoldedNormal
        );
        assert!("poisson".parse::<ModelKind>().is_err());
    }
}
