//! Free-energy objective and the stochastic optimization loop.
//!
//! The objective maximized is
//! `F = (1/L) Σ_l log p(y | m + S ε_l) - KL(q || p)`:
//! a Monte Carlo estimate of the expected log-likelihood through
//! reparameterized samples plus the closed-form KL term. Adam descends on
//! `-F`.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::autodiff::{NodeId, Tape};
use crate::distributions::{record_loglik, Dataset, ModelKind};
use crate::error::{Result, SvbError};
use crate::optimizer::{AdamConfig, AdamState};
use crate::parallel::{map_range, map_slice, Execution};
use crate::posterior::{
    build_cholesky, extract_posterior, kl_with_factor, reparam_with_factor, PosteriorNodes,
    PosteriorParams, PosteriorSummary, PriorSpec,
};
use crate::rng::SvbRng;

/// Per-step data used by the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BatchSize {
    #[default]
    Full,
    Size(usize),
}

impl BatchSize {
    pub fn resolve(self, n: usize) -> usize {
        match self {
            BatchSize::Full => n,
            BatchSize::Size(m) => m,
        }
    }
}

impl std::str::FromStr for BatchSize {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("full") {
            return Ok(BatchSize::Full);
        }
        s.parse::<usize>()
            .map(BatchSize::Size)
            .map_err(|_| format!("batch size must be `full` or a positive integer, got `{s}`"))
    }
}

impl std::fmt::Display for BatchSize {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BatchSize::Full => f.write_str("full"),
            BatchSize::Size(m) => write!(f, "{m}"),
        }
    }
}

impl Serialize for BatchSize {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            BatchSize::Full => s.serialize_str("full"),
            BatchSize::Size(m) => s.serialize_u64(*m as u64),
        }
    }
}

impl<'de> Deserialize<'de> for BatchSize {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Size(usize),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Size(m) => Ok(BatchSize::Size(m)),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: BatchSize,
    /// Reparameterized samples per step (`L`).
    pub mc_samples: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub correlation_enabled: bool,
    pub final_fe_samples: usize,
    /// Reshuffle the data before each epoch. Off by default: batches are
    /// fixed contiguous slices in data order.
    #[serde(default)]
    pub shuffle: bool,
    #[serde(default)]
    pub init: Option<PosteriorParams>,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 400,
            batch_size: BatchSize::Full,
            mc_samples: 1,
            adam: AdamConfig::default(),
            seed: 0,
            correlation_enabled: true,
            final_fe_samples: 1000,
            shuffle: false,
            init: None,
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(SvbError::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.mc_samples == 0 {
            return Err(SvbError::InvalidConfig(
                "mc_samples must be at least 1".into(),
            ));
        }
        if self.final_fe_samples < 2 {
            return Err(SvbError::InvalidConfig(
                "final_fe_samples must be at least 2 to estimate a standard error".into(),
            ));
        }
        if self.batch_size == BatchSize::Size(0) {
            return Err(SvbError::InvalidConfig(
                "batch size must be at least 1".into(),
            ));
        }
        self.adam.validate()
    }
}

/// One optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub epoch: usize,
    pub step: usize,
    #[serde(rename = "F")]
    pub free_energy: f64,
    pub kl: f64,
    pub mc_loglik: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FreeEnergyTrace {
    pub records: Vec<TraceRecord>,
}

impl FreeEnergyTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn free_energies(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.free_energy).collect()
    }

    /// Mean F of each epoch, indexed by epoch.
    pub fn epoch_means(&self) -> Vec<f64> {
        let n_epochs = self.records.iter().map(|r| r.epoch + 1).max().unwrap_or(0);
        let mut sums = vec![0.0; n_epochs];
        let mut counts = vec![0usize; n_epochs];
        for r in &self.records {
            sums[r.epoch] += r.free_energy;
            counts[r.epoch] += 1;
        }
        sums.iter()
            .zip(&counts)
            .map(|(s, &c)| s / c as f64)
            .collect()
    }
}

/// Mean and (n - 1)-denominator standard deviation.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalFreeEnergy {
    pub mean: f64,
    /// Sample standard deviation over `sqrt(samples)`.
    pub se: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: ModelKind,
    pub posterior: PosteriorSummary,
    /// Final hyper-parameters `(m, v, u)`.
    pub params: PosteriorParams,
    pub trace: FreeEnergyTrace,
    pub final_free_energy: FinalFreeEnergy,
    pub config: TrainConfig,
    pub steps: usize,
}

/// Tape nodes of one free-energy evaluation.
#[derive(Debug, Clone, Copy)]
pub struct FreeEnergyNodes {
    pub free_energy: NodeId,
    pub kl: NodeId,
    pub mc_loglik: NodeId,
}

/// Records `F = (1/L) Σ_l loglik(m + S ε_l) - KL(q || p)` for the given batch.
pub fn estimate_free_energy(
    tape: &mut Tape,
    model: ModelKind,
    batch: &[f64],
    n_total: usize,
    params: &PosteriorNodes,
    prior: &PriorSpec,
    epsilons: &[Vec<f64>],
) -> Result<FreeEnergyNodes> {
    if epsilons.is_empty() {
        return Err(SvbError::InvalidConfig(
            "at least one noise sample is required".into(),
        ));
    }
    let s = build_cholesky(tape, params)?;
    let mut logliks = Vec::with_capacity(epsilons.len());
    for eps in epsilons {
        let theta = reparam_with_factor(tape, params, &s, eps)?;
        logliks.push(record_loglik(model, tape, &theta, batch, n_total)?);
    }
    let total = tape.sum_many(&logliks)?;
    let mc_loglik = tape.scale(total, 1.0 / epsilons.len() as f64)?;
    let kl = kl_with_factor(tape, params, &s, prior)?;
    let free_energy = tape.sub(mc_loglik, kl)?;
    Ok(FreeEnergyNodes {
        free_energy,
        kl,
        mc_loglik,
    })
}

/// Contiguous batches in data order; the last one may be short.
pub fn make_batches(data: &[f64], batch_size: usize) -> Result<Vec<&[f64]>> {
    if batch_size == 0 || batch_size > data.len() {
        return Err(SvbError::BatchSize {
            batch_size,
            n_total: data.len(),
        });
    }
    Ok(data.chunks(batch_size).collect())
}

fn draw_epsilons(rng: &mut SvbRng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| (0..dim).map(|_| rng.std_normal()).collect())
        .collect()
}

fn shuffle(values: &mut [f64], rng: &mut SvbRng) {
    for i in (1..values.len()).rev() {
        let j = rng.below(i + 1);
        values.swap(i, j);
    }
}

const EPS_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;

/// Runs stochastic variational Bayes on `data`.
///
/// Each step draws fresh noise, records `F` on a new tape for the current
/// batch, back-propagates, and takes one Adam step on `-F`. After training,
/// `F` is re-estimated on the full data from `final_fe_samples` independent
/// single-sample draws.
pub fn fit(
    model: ModelKind,
    data: &Dataset,
    prior: &PriorSpec,
    config: &TrainConfig,
) -> Result<FitResult> {
    config.validate()?;
    model.validate_data(data.values())?;
    if prior.dim() != 2 {
        return Err(SvbError::DimensionMismatch {
            expected: 2,
            got: prior.dim(),
        });
    }
    let mut params = match &config.init {
        Some(init) => {
            let mut p = init.clone();
            p.correlation_enabled = config.correlation_enabled;
            if p.u.is_empty() {
                p.u = vec![0.0; crate::posterior::n_off_diagonal(p.dim())];
            }
            p
        }
        None => PosteriorParams::init_from_prior(prior, config.correlation_enabled),
    };
    params.validate()?;
    if params.dim() != prior.dim() {
        return Err(SvbError::DimensionMismatch {
            expected: prior.dim(),
            got: params.dim(),
        });
    }

    let n = data.len();
    let p = params.dim();
    let batch_size = config.batch_size.resolve(n);
    let mut order = data.values().to_vec();
    let steps_per_epoch = make_batches(&order, batch_size)?.len();

    let mut eps_rng = SvbRng::stream(config.seed, EPS_STREAM);
    let mut shuffle_rng = SvbRng::stream(config.seed, SHUFFLE_STREAM);
    let mut adam = AdamState::new(params.zeta_len(), config.adam)?;
    let mut zeta = params.to_zeta();
    let mut trace = FreeEnergyTrace {
        records: Vec::with_capacity(config.epochs * steps_per_epoch),
    };

    let mut global_step = 0;
    for epoch in 0..config.epochs {
        if config.shuffle {
            shuffle(&mut order, &mut shuffle_rng);
        }
        for (step, batch) in make_batches(&order, batch_size)?.into_iter().enumerate() {
            let diverged = |reason: String, zeta: &[f64]| SvbError::Divergence {
                step: global_step,
                reason,
                zeta: zeta.to_vec(),
            };
            let epsilons = draw_epsilons(&mut eps_rng, config.mc_samples, p);
            let mut tape = Tape::new();
            let nodes = params
                .register(&mut tape)
                .map_err(|e| diverged(e.to_string(), &zeta))?;
            let fe = estimate_free_energy(&mut tape, model, batch, n, &nodes, prior, &epsilons)
                .map_err(|e| diverged(e.to_string(), &zeta))?;
            let grad = tape.grad(fe.free_energy).collect(&nodes.leaves());
            let neg_grad: Vec<f64> = grad.iter().map(|g| -g).collect();

            trace.records.push(TraceRecord {
                epoch,
                step,
                free_energy: tape.value(fe.free_energy),
                kl: tape.value(fe.kl),
                mc_loglik: tape.value(fe.mc_loglik),
            });

            adam.step(&mut zeta, &neg_grad)
                .map_err(|e| diverged(e.to_string(), &zeta))?;
            if let Some(z) = zeta.iter().find(|z| !z.is_finite()) {
                return Err(diverged(format!("parameter became {z}"), &zeta));
            }
            params.set_zeta(&zeta)?;
            global_step += 1;
        }
    }

    let final_free_energy = final_free_energy(
        model,
        data,
        prior,
        &params,
        config.final_fe_samples,
        &mut eps_rng,
        config.execution,
    )
    .map_err(|e| SvbError::Divergence {
        step: global_step,
        reason: format!("final free energy: {e}"),
        zeta: zeta.clone(),
    })?;

    Ok(FitResult {
        model,
        posterior: extract_posterior(&params),
        params,
        trace,
        final_free_energy,
        config: config.clone(),
        steps: global_step,
    })
}

/// Full-data `F` at `params` averaged over `samples` independent
/// single-sample estimates. Noise is drawn up front from `rng`, so the result
/// does not depend on `exec`.
pub fn final_free_energy(
    model: ModelKind,
    data: &Dataset,
    prior: &PriorSpec,
    params: &PosteriorParams,
    samples: usize,
    rng: &mut SvbRng,
    exec: Execution,
) -> Result<FinalFreeEnergy> {
    let epsilons = draw_epsilons(rng, samples, params.dim());
    let values = map_slice(exec, &epsilons, |eps| {
        free_energy_value(
            model,
            data.values(),
            data.len(),
            prior,
            params,
            std::slice::from_ref(eps),
        )
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    let (mean, sd) = mean_sd(&values);
    Ok(FinalFreeEnergy {
        mean,
        se: sd / (samples as f64).sqrt(),
        samples,
    })
}

/// Plain-number value of the objective for fixed noise.
pub fn free_energy_value(
    model: ModelKind,
    batch: &[f64],
    n_total: usize,
    prior: &PriorSpec,
    params: &PosteriorParams,
    epsilons: &[Vec<f64>],
) -> Result<f64> {
    let mut tape = Tape::new();
    let nodes = params.register(&mut tape)?;
    let fe = estimate_free_energy(&mut tape, model, batch, n_total, &nodes, prior, epsilons)?;
    Ok(tape.value(fe.free_energy))
}

/// Independent fits, one per config, evaluated concurrently when `exec`
/// allows. Output order follows `configs`.
pub fn fit_many(
    model: ModelKind,
    data: &Dataset,
    prior: &PriorSpec,
    configs: &[TrainConfig],
    exec: Execution,
) -> Vec<Result<FitResult>> {
    map_range(exec, configs.len(), |i| {
        fit(model, data, prior, &configs[i])
    })
}
