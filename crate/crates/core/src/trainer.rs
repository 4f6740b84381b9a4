//! Deterministic minibatch training.
//!
//! Per step: Top-k forward with the warmup truncation, prefix-mixture
//! objective, Adam update on unfrozen units, then decoder columns projected
//! back to unit norm. Shuffles, prefix draws, and initialization each come from
//! their own seeded stream, so a run is a pure function of (config, data).

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, SweepState};
use crate::error::{invalid, OsaeError, Result};
use crate::rng::{stream, Purpose};
use crate::sae::{
    doubling_boundaries, n_groups, realize, Activation, GradBuffers, LossKind, LossSpec, PrefixDistribution, SaeModel,
    Streaming,
};

/// How a loss spec's prefix distribution is described in configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PrefixSpec {
    /// Uniform over `1..=K`.
    Uniform,
    /// `p(l)` proportional to `l^-alpha` over `1..=K`.
    Zipf { alpha: f64 },
    /// `count` nested groups (doubling sizes), equal mass.
    Groups { count: usize },
    /// `count` nested groups with mass proportional to `size^-alpha`.
    ZipfGroups { count: usize, alpha: f64 },
    /// Doubling groups starting at `K/32`, equal mass.
    Piecewise,
    Explicit { support: Vec<usize>, probs: Vec<f64> },
}

impl PrefixSpec {
    pub fn resolve(&self, k: usize) -> Result<PrefixDistribution> {
        match self {
            PrefixSpec::Uniform => PrefixDistribution::uniform(k),
            PrefixSpec::Zipf { alpha } => PrefixDistribution::zipf(k, *alpha),
            PrefixSpec::Groups { count } => PrefixDistribution::groups(n_groups(k, *count)),
            PrefixSpec::ZipfGroups { count, alpha } => PrefixDistribution::zipf_groups(n_groups(k, *count), *alpha),
            PrefixSpec::Piecewise => PrefixDistribution::groups(doubling_boundaries(k, k / 32)),
            PrefixSpec::Explicit { support, probs } => PrefixDistribution::new(support.clone(), probs.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
    #[serde(default = "default_prefix")]
    pub prefix: PrefixSpec,
    #[serde(default = "default_draws")]
    pub random_draws: usize,
}

fn default_prefix() -> PrefixSpec {
    PrefixSpec::Uniform
}

fn default_draws() -> usize {
    4
}

impl LossConfig {
    pub fn resolve(&self, k: usize) -> Result<LossSpec> {
        let spec = match self.kind {
            LossKind::Vanilla => LossSpec::vanilla(k),
            kind => LossSpec {
                kind,
                prefix_dist: self.prefix.resolve(k)?,
                random_draws: self.random_draws,
            },
        };
        spec.validate(k)?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub enabled: bool,
    pub burn_in_epochs: usize,
    /// Epochs between successive freezes.
    pub freeze_period: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            burn_in_epochs: 0,
            freeze_period: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Dictionary size `K`.
    pub k: usize,
    /// Target sparsity.
    pub m: usize,
    #[serde(default)]
    pub activation: Activation,
    /// Required input dimension; checked against the data when set.
    #[serde(default)]
    pub input_dim: Option<usize>,
    pub epochs: usize,
    /// Stop after this many optimizer steps even if epochs remain.
    #[serde(default)]
    pub max_steps: Option<u64>,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_eps")]
    pub adam_eps: f64,
    pub loss: LossConfig,
    pub k_init: usize,
    pub warmup_epochs: usize,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub l1_coeff: f64,
    pub seed: u64,
    /// Emit a checkpoint every this many steps; 0 keeps only the first and last.
    #[serde(default)]
    pub checkpoint_every: u64,
    #[serde(default)]
    pub center_inputs: bool,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl TrainConfig {
    /// A small, valid configuration; presets override what they need.
    pub fn new(k: usize, m: usize, loss: LossConfig) -> Self {
        Self {
            k,
            m,
            activation: Activation::Relu,
            input_dim: None,
            epochs: 10,
            max_steps: None,
            batch_size: 256,
            learning_rate: 1e-4,
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            adam_eps: default_eps(),
            loss,
            k_init: k,
            warmup_epochs: 0,
            sweep: SweepConfig::default(),
            l1_coeff: 0.0,
            seed: 0,
            checkpoint_every: 0,
            center_inputs: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.m == 0 || self.m > self.k {
            return Err(invalid(format!("need 1 <= m <= K, got m = {}, K = {}", self.m, self.k)));
        }
        if self.k_init < self.m {
            return Err(invalid(format!("k_init = {} is below m = {}", self.k_init, self.m)));
        }
        if self.sweep.freeze_period == 0 {
            return Err(invalid("freeze_period must be >= 1"));
        }
        if self.max_steps == Some(0) {
            return Err(invalid("max_steps must be >= 1 when set"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be >= 1"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(invalid("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(invalid("adam betas must lie in [0, 1)"));
        }
        if self.l1_coeff < 0.0 {
            return Err(invalid("l1_coeff must be >= 0"));
        }
        self.loss.resolve(self.k)?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Truncation size for `epoch`: linear from `k_init` to `m` over the warmup.
pub fn k_schedule(epoch: usize, config: &TrainConfig) -> usize {
    let (k0, m) = (config.k_init as f64, config.m as f64);
    let k = if epoch >= config.warmup_epochs {
        m
    } else {
        (k0 - (k0 - m) * epoch as f64 / config.warmup_epochs as f64).round()
    };
    (k as usize).clamp(config.m, config.k)
}

/// Number of frozen units at `epoch` under the clockwork schedule.
pub fn sweep_schedule(epoch: usize, config: &TrainConfig) -> usize {
    let s = &config.sweep;
    if !s.enabled || epoch < s.burn_in_epochs {
        return 0;
    }
    ((epoch - s.burn_in_epochs) / s.freeze_period + 1).min(config.k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
    pub effective_k: usize,
    pub frozen_count: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Step-0 initialization first, then periodic snapshots, then the final state.
    pub checkpoints: Vec<Checkpoint>,
    pub trace: Vec<TraceRow>,
}

impl TrainOutcome {
    pub fn final_checkpoint(&self) -> &Checkpoint {
        self.checkpoints.last().expect("at least the initial checkpoint")
    }

    pub fn final_model(&self) -> &SaeModel {
        &self.final_checkpoint().model
    }

    /// Mean loss over each epoch's steps.
    pub fn epoch_means(&self) -> Vec<f64> {
        let mut sums: Vec<(f64, usize)> = Vec::new();
        for row in &self.trace {
            if sums.len() <= row.epoch {
                sums.resize(row.epoch + 1, (0.0, 0));
            }
            sums[row.epoch].0 += row.loss;
            sums[row.epoch].1 += 1;
        }
        sums.into_iter().filter(|s| s.1 > 0).map(|(s, n)| s / n as f64).collect()
    }
}

pub fn write_trace_csv(trace: &[TraceRow], mut w: impl Write) -> Result<()> {
    writeln!(w, "step,epoch,loss,effective_k,frozen_count")?;
    for r in trace {
        writeln!(w, "{},{},{:e},{},{}", r.step, r.epoch, r.loss, r.effective_k, r.frozen_count)?;
    }
    Ok(())
}

pub fn save_trace_csv(trace: &[TraceRow], path: impl AsRef<Path>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_trace_csv(trace, std::io::BufWriter::new(f))
}

struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    lr: f64,
    t: i32,
    m_w: DMatrix<f64>,
    v_w: DMatrix<f64>,
    m_b: DVector<f64>,
    v_b: DVector<f64>,
    m_d: DMatrix<f64>,
    v_d: DMatrix<f64>,
}

impl Adam {
    fn new(config: &TrainConfig, d: usize, k: usize) -> Self {
        Self {
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            eps: config.adam_eps,
            lr: config.learning_rate,
            t: 0,
            m_w: DMatrix::zeros(d, k),
            v_w: DMatrix::zeros(d, k),
            m_b: DVector::zeros(k),
            v_b: DVector::zeros(k),
            m_d: DMatrix::zeros(d, k),
            v_d: DMatrix::zeros(d, k),
        }
    }

    /// Update units `first..K`. `enc_t` is the encoder transposed (`d x K`).
    fn step(&mut self, enc_t: &mut DMatrix<f64>, bias: &mut DVector<f64>, dec: &mut DMatrix<f64>, g: &GradBuffers, first: usize) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let d = enc_t.nrows();
        let k = enc_t.ncols();
        let lo = first * d;
        let hi = k * d;
        let upd = |p: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64], s: &Self| {
            for i in 0..p.len() {
                m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
                v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= s.lr * mh / (vh.sqrt() + s.eps);
            }
        };
        let mut m_w = std::mem::take(&mut self.m_w);
        let mut v_w = std::mem::take(&mut self.v_w);
        upd(
            &mut enc_t.as_mut_slice()[lo..hi],
            &mut m_w.as_mut_slice()[lo..hi],
            &mut v_w.as_mut_slice()[lo..hi],
            &g.enc_weights_t.as_slice()[lo..hi],
            self,
        );
        self.m_w = m_w;
        self.v_w = v_w;
        let mut m_d = std::mem::take(&mut self.m_d);
        let mut v_d = std::mem::take(&mut self.v_d);
        upd(
            &mut dec.as_mut_slice()[lo..hi],
            &mut m_d.as_mut_slice()[lo..hi],
            &mut v_d.as_mut_slice()[lo..hi],
            &g.decoder.as_slice()[lo..hi],
            self,
        );
        self.m_d = m_d;
        self.v_d = v_d;
        let mut m_b = std::mem::take(&mut self.m_b);
        let mut v_b = std::mem::take(&mut self.v_b);
        upd(
            &mut bias.as_mut_slice()[first..k],
            &mut m_b.as_mut_slice()[first..k],
            &mut v_b.as_mut_slice()[first..k],
            &g.enc_bias.as_slice()[first..k],
            self,
        );
        self.m_b = m_b;
        self.v_b = v_b;
    }
}

/// Train from scratch (or from `init`) on the columns of `x`.
pub fn train(config: &TrainConfig, x: &DMatrix<f64>, init: Option<SaeModel>) -> Result<TrainOutcome> {
    config.validate()?;
    let n = x.ncols();
    let d = x.nrows();
    if n == 0 || d == 0 {
        return Err(invalid("training data is empty"));
    }
    if let Some(want) = config.input_dim.filter(|&w| w != d) {
        return Err(invalid(format!("data has d = {d}, config expects input_dim = {want}")));
    }
    let k = config.k;
    let spec = config.loss.resolve(k)?;
    let mut model = match init {
        Some(m) => {
            if m.d() != d || m.k() != k {
                return Err(invalid(format!(
                    "initial model is {}x{} (d x K), data and config need {d}x{k}",
                    m.d(),
                    m.k()
                )));
            }
            m
        }
        None => SaeModel::init(d, k, config.m, config.activation, config.seed)?,
    };
    model.m = config.m;
    if config.center_inputs && model.input_center.is_none() {
        model.input_center = Some(x.column_mean());
    }

    let mut sweep = SweepState::default();
    let snapshot = |model: &SaeModel, sweep: &SweepState, step: u64, epoch: usize, k_eff: usize| Checkpoint {
        model: model.clone(),
        sweep: sweep.clone(),
        step,
        epoch,
        seed: config.seed,
        effective_k: k_eff,
        loss: Some(spec.clone()),
    };
    let mut checkpoints = vec![snapshot(&model, &sweep, 0, 0, k_schedule(0, config))];
    let mut trace = Vec::new();
    let mut adam = Adam::new(config, d, k);
    let mut grads = GradBuffers::zeros(d, k);
    let mut enc_t = model.enc_weights.transpose();
    let mut order: Vec<usize> = (0..n).collect();
    let mut step: u64 = 0;
    let mut k_eff = k_schedule(0, config);
    let mut xb = DMatrix::zeros(d, config.batch_size.min(n));

    let max_steps = config.max_steps.unwrap_or(u64::MAX);
    let mut last_epoch = 0;
    for epoch in 0..config.epochs {
        if step >= max_steps {
            break;
        }
        last_epoch = epoch;
        k_eff = k_schedule(epoch, config);
        let frozen = sweep_schedule(epoch, config);
        if frozen > sweep.frozen_count {
            let newly = sweep.frozen_count..frozen;
            model.decoder.renormalize(newly.clone());
            for _ in newly {
                sweep.freeze_epochs.push(epoch);
            }
            sweep.frozen_count = frozen;
        }

        order.sort_unstable();
        order.shuffle(&mut stream(config.seed, Purpose::Shuffle, epoch as u64));
        for batch in order.chunks(config.batch_size) {
            if step >= max_steps {
                break;
            }
            if xb.ncols() != batch.len() {
                xb = DMatrix::zeros(d, batch.len());
            }
            for (c, &i) in batch.iter().enumerate() {
                xb.column_mut(c).copy_from(&x.column(i));
            }
            let prefixes = realize(&spec, k, &mut stream(config.seed, Purpose::PrefixDraw, step))?;
            let tail = prefixes.tail(k);
            grads.reset();
            let loss = Streaming::new(&model, &tail, k_eff, config.l1_coeff).loss_and_grad(&xb, &mut grads);
            if !loss.is_finite() {
                return Err(OsaeError::NonFinite {
                    step,
                    diagnostic: Box::new(snapshot(&model, &sweep, step, epoch, k_eff)),
                });
            }
            adam.step(
                &mut enc_t,
                &mut model.enc_bias,
                model.decoder.atoms_mut(),
                &grads,
                sweep.frozen_count,
            );
            model.enc_weights = enc_t.transpose();
            model.decoder.renormalize(sweep.frozen_count..k);
            step += 1;
            trace.push(TraceRow {
                step,
                epoch,
                loss,
                effective_k: k_eff,
                frozen_count: sweep.frozen_count,
            });
            if config.checkpoint_every > 0 && step.is_multiple_of(config.checkpoint_every) {
                checkpoints.push(snapshot(&model, &sweep, step, epoch, k_eff));
            }
        }
    }
    if checkpoints.last().map(|c| c.step) != Some(step) || step == 0 {
        let epoch = last_epoch;
        if step == 0 {
            checkpoints.clear();
        }
        checkpoints.push(snapshot(&model, &sweep, step, epoch, k_eff));
    }
    Ok(TrainOutcome { checkpoints, trace })
}
