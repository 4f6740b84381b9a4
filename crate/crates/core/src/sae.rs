//! Sparse autoencoder forward pass, prefix objectives, and gradients.
//!
//! Every objective here is a mixture of prefix losses
//! `L_l = (1/B) ||X - D Lambda_l Top_m(Z)||_F^2` with weights `p(l)`:
//!
//! * vanilla: point mass on `l = K`
//! * fixed Matryoshka: all groups of a prefix distribution, every call
//! * random Matryoshka: a few groups drawn per call, equally weighted
//! * nested dropout: every prefix in `1..=K`
//!
//! All four are evaluated by one streaming pass. For a sample whose active
//! atoms are `j_1 < ... < j_s`, the prefix residual is piecewise constant in
//! `l`, so the mixture collapses to `sum_t w_t ||r_t||^2` where `r_t` is the
//! residual after adding the first `t` active atoms and `w_t` is the prefix
//! mass on `[j_t, j_{t+1})`. The cost is `O(m d)` per sample regardless of how
//! many prefixes carry weight.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::{stream, Purpose};
use crate::synthgen::{sample_without_replacement, Dictionary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Linear => v,
        }
    }

    #[inline]
    fn slope(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

/// Linear encoder with bias, unit-norm linear decoder, Top-m truncation.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeModel {
    /// `K x d`.
    pub enc_weights: DMatrix<f64>,
    /// Length `K`.
    pub enc_bias: DVector<f64>,
    pub decoder: Dictionary,
    pub activation: Activation,
    pub m: usize,
    /// Optional fixed offset subtracted before encoding and added after decoding.
    pub input_center: Option<DVector<f64>>,
}

impl SaeModel {
    pub fn new(
        enc_weights: DMatrix<f64>,
        enc_bias: DVector<f64>,
        decoder: Dictionary,
        activation: Activation,
        m: usize,
    ) -> Result<Self> {
        let model = Self {
            enc_weights,
            enc_bias,
            decoder,
            activation,
            m,
            input_center: None,
        };
        model.validate()?;
        Ok(model)
    }

    /// Random unit-norm decoder from the `ModelInit` stream of `seed`,
    /// encoder tied to its transpose, zero bias.
    pub fn init(d: usize, k: usize, m: usize, activation: Activation, seed: u64) -> Result<Self> {
        use rand_distr::{Distribution, StandardNormal};
        if d == 0 || k == 0 {
            return Err(invalid("model needs d >= 1 and K >= 1"));
        }
        let mut rng = stream(seed, Purpose::ModelInit, 0);
        let raw = DMatrix::from_fn(d, k, |_, _| StandardNormal.sample(&mut rng));
        let decoder = Dictionary::from_unnormalized(raw)?;
        let enc = decoder.atoms().transpose();
        Self::new(enc, DVector::zeros(k), decoder, activation, m)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.decoder.len();
        let d = self.decoder.dim();
        if self.enc_weights.nrows() != k || self.enc_weights.ncols() != d {
            return Err(invalid(format!(
                "encoder is {}x{}, expected {k}x{d}",
                self.enc_weights.nrows(),
                self.enc_weights.ncols()
            )));
        }
        if self.enc_bias.len() != k {
            return Err(invalid(format!("encoder bias has length {}, expected {k}", self.enc_bias.len())));
        }
        if self.m == 0 || self.m > k {
            return Err(invalid(format!("sparsity m = {} outside 1..={k}", self.m)));
        }
        if let Some(c) = &self.input_center {
            if c.len() != d {
                return Err(invalid("input center length differs from d"));
            }
        }
        Ok(())
    }

    /// Dictionary size `K`.
    pub fn k(&self) -> usize {
        self.decoder.len()
    }

    /// Input dimension `d`.
    pub fn d(&self) -> usize {
        self.decoder.dim()
    }

    fn check_input(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.nrows() != self.d() {
            return Err(invalid(format!("input has {} rows, model expects d = {}", x.nrows(), self.d())));
        }
        Ok(())
    }

    fn centered(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.input_center {
            Some(c) => {
                let mut out = x.clone();
                for mut col in out.column_iter_mut() {
                    col -= c;
                }
                out
            }
            None => x.clone(),
        }
    }

    fn preactivations(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut pre = &self.enc_weights * x;
        for mut col in pre.column_iter_mut() {
            col += &self.enc_bias;
        }
        pre
    }
}

/// `Z = act(W X + b)`.
pub fn encode(model: &SaeModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    model.check_input(x)?;
    let act = model.activation;
    let mut z = model.preactivations(&model.centered(x));
    z.apply(|v| *v = act.apply(*v));
    Ok(z)
}

/// Indices of the `m` largest-magnitude entries, ascending. Ties go to the lower index.
pub(crate) fn select_top(values: &[f64], m: usize, order: &mut Vec<usize>) {
    order.clear();
    order.extend(0..values.len());
    if m < values.len() {
        let cmp = |a: &usize, b: &usize| values[*b].abs().total_cmp(&values[*a].abs()).then(a.cmp(b));
        if m > 0 {
            order.select_nth_unstable_by(m - 1, cmp);
        }
        order.truncate(m);
        order.sort_unstable();
    }
}

/// Keep the `m` largest-magnitude entries of each column.
pub fn top_m(z: &DMatrix<f64>, m: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(z.nrows(), z.ncols());
    let mut order = Vec::new();
    for (src, mut dst) in z.column_iter().zip(out.column_iter_mut()) {
        select_top(src.as_slice(), m, &mut order);
        for &j in &order {
            dst[j] = src[j];
        }
    }
    out
}

/// Zero rows `ell..K` (multiplication by `Lambda_ell`).
pub fn prefix_mask(z: &DMatrix<f64>, ell: usize) -> Result<DMatrix<f64>> {
    let k = z.nrows();
    if ell == 0 || ell > k {
        return Err(invalid(format!("prefix length {ell} outside 1..={k}")));
    }
    let mut out = z.clone();
    out.rows_mut(ell, k - ell).fill(0.0);
    Ok(out)
}

/// `D Top_m(Z)`, plus the input center if the model has one.
pub fn decode(model: &SaeModel, codes: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if codes.nrows() != model.k() {
        return Err(invalid("code rows differ from K"));
    }
    let mut x = model.decoder.atoms() * codes;
    if let Some(c) = &model.input_center {
        for mut col in x.column_iter_mut() {
            col += c;
        }
    }
    Ok(x)
}

/// A distribution over prefix lengths in `1..=K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixDistribution {
    support: Vec<usize>,
    probs: Vec<f64>,
}

impl PrefixDistribution {
    pub fn new(support: Vec<usize>, probs: Vec<f64>) -> Result<Self> {
        if support.is_empty() {
            return Err(invalid("prefix distribution has empty support"));
        }
        if support.len() != probs.len() {
            return Err(invalid("support and probabilities differ in length"));
        }
        if support[0] == 0 || support.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("prefix support must be strictly increasing and start at 1 or above"));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(invalid("prefix probabilities must be finite and nonnegative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("prefix probabilities sum to {total}, expected 1")));
        }
        Ok(Self { support, probs })
    }

    /// Normalize raw nonnegative weights.
    pub fn from_weights(support: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(invalid("prefix weights must have positive finite mass"));
        }
        Self::new(support, weights.into_iter().map(|w| w / total).collect())
    }

    pub fn point_mass(ell: usize) -> Result<Self> {
        Self::new(vec![ell], vec![1.0])
    }

    pub fn uniform(k: usize) -> Result<Self> {
        Self::from_weights((1..=k).collect(), vec![1.0; k])
    }

    /// `p(l)` proportional to `l^-alpha` over `1..=K`.
    pub fn zipf(k: usize, alpha: f64) -> Result<Self> {
        Self::from_weights((1..=k).collect(), (1..=k).map(|l| (l as f64).powf(-alpha)).collect())
    }

    /// Uniform mass over the given nested group sizes.
    pub fn groups(boundaries: Vec<usize>) -> Result<Self> {
        let n = boundaries.len();
        Self::from_weights(boundaries, vec![1.0; n])
    }

    /// Group sizes from a prior: boundaries at every atom, mass on each
    /// prefix proportional to `l^-alpha`, restricted to `boundaries`.
    pub fn zipf_groups(boundaries: Vec<usize>, alpha: f64) -> Result<Self> {
        let w = boundaries.iter().map(|&l| (l as f64).powf(-alpha)).collect();
        Self::from_weights(boundaries, w)
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn max_prefix(&self) -> usize {
        *self.support.last().expect("nonempty support")
    }

    /// `tail[j] = P(l > j)`: probability that 0-based atom `j` is inside the prefix.
    pub fn tail(&self, k: usize) -> Vec<f64> {
        prefix_tail(&self.support, &self.probs, k)
    }
}

fn prefix_tail(support: &[usize], weights: &[f64], k: usize) -> Vec<f64> {
    let mut mass = vec![0.0; k + 1];
    for (&l, &p) in support.iter().zip(weights) {
        mass[l.min(k)] += p;
    }
    // tail[j] = sum_{l >= j + 1} mass[l]
    let mut tail = vec![0.0; k];
    let mut acc = 0.0;
    for j in (0..k).rev() {
        acc += mass[j + 1];
        tail[j] = acc;
    }
    tail
}

/// Geometric-doubling group boundaries ending at `K`, starting at `first`.
pub fn doubling_boundaries(k: usize, first: usize) -> Vec<usize> {
    let mut b = Vec::new();
    let mut g = first.max(1);
    while g < k {
        b.push(g);
        g *= 2;
    }
    b.push(k);
    b
}

/// `n` nested groups ending at `K`: doubling sizes when `K` is large enough
/// to give `n` distinct groups, evenly spaced sizes otherwise.
pub fn n_groups(k: usize, n: usize) -> Vec<usize> {
    let n = n.clamp(1, k.max(1));
    let mut b: Vec<usize> = (0..n)
        .map(|i| {
            let denom = 1usize << (n - 1 - i).min(62);
            ((k as f64) / denom as f64).round().max(1.0) as usize
        })
        .collect();
    b.dedup();
    if b.len() < n {
        b = (1..=n).map(|i| ((k * i) as f64 / n as f64).round() as usize).collect();
        b.dedup();
    }
    b
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Vanilla,
    #[serde(alias = "msae-fixed")]
    MsaeFixed,
    #[serde(alias = "msae-random")]
    MsaeRandom,
    /// The ordered objective; `"osae"` is accepted in configs.
    #[serde(alias = "osae")]
    NestedDropout,
}

impl LossKind {
    pub fn label(self) -> &'static str {
        match self {
            LossKind::Vanilla => "Vanilla SAE",
            LossKind::MsaeFixed => "Fixed MSAE",
            LossKind::MsaeRandom => "Random MSAE",
            LossKind::NestedDropout => "OSAE",
        }
    }

    /// Short lowercase name for file and directory names.
    pub fn slug(self) -> &'static str {
        match self {
            LossKind::Vanilla => "vanilla",
            LossKind::MsaeFixed => "msae-fixed",
            LossKind::MsaeRandom => "msae-random",
            LossKind::NestedDropout => "osae",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub prefix_dist: PrefixDistribution,
    /// Prefixes drawn per call; only used by `msae_random`.
    pub random_draws: usize,
}

impl LossSpec {
    pub fn vanilla(k: usize) -> Self {
        Self {
            kind: LossKind::Vanilla,
            prefix_dist: PrefixDistribution::point_mass(k).expect("K >= 1"),
            random_draws: 1,
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        let dist = &self.prefix_dist;
        if dist.max_prefix() > k {
            return Err(invalid(format!("prefix {} exceeds K = {k}", dist.max_prefix())));
        }
        match self.kind {
            LossKind::NestedDropout if dist.max_prefix() != k => {
                Err(invalid("nested dropout needs positive mass on the full prefix K"))
            }
            LossKind::NestedDropout => {
                let full = dist.probs()[dist.support().len() - 1];
                if full > 0.0 {
                    Ok(())
                } else {
                    Err(invalid("nested dropout needs positive mass on the full prefix K"))
                }
            }
            LossKind::MsaeRandom if self.random_draws == 0 || self.random_draws > dist.support().len() => {
                Err(invalid(format!(
                    "random_draws = {} must lie in 1..={}",
                    self.random_draws,
                    dist.support().len()
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Prefix lengths and weights actually used by one objective evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizedPrefixes {
    pub prefixes: Vec<usize>,
    pub weights: Vec<f64>,
}

impl RealizedPrefixes {
    pub fn tail(&self, k: usize) -> Vec<f64> {
        prefix_tail(&self.prefixes, &self.weights, k)
    }
}

/// Resolve the prefix mixture for one call. Only `msae_random` consumes randomness.
pub fn realize<R: Rng + ?Sized>(spec: &LossSpec, k: usize, rng: &mut R) -> Result<RealizedPrefixes> {
    spec.validate(k)?;
    let dist = &spec.prefix_dist;
    Ok(match spec.kind {
        LossKind::Vanilla => RealizedPrefixes {
            prefixes: vec![k],
            weights: vec![1.0],
        },
        LossKind::MsaeFixed | LossKind::NestedDropout => RealizedPrefixes {
            prefixes: dist.support().to_vec(),
            weights: dist.probs().to_vec(),
        },
        LossKind::MsaeRandom => {
            let mut idx = sample_without_replacement(dist.probs(), spec.random_draws, rng);
            idx.sort_unstable();
            let r = idx.len() as f64;
            RealizedPrefixes {
                prefixes: idx.iter().map(|&i| dist.support()[i]).collect(),
                weights: vec![1.0 / r; idx.len()],
            }
        }
    })
}

/// Gradients with the same shapes as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientRecord {
    pub enc_weights: DMatrix<f64>,
    pub enc_bias: DVector<f64>,
    pub decoder: DMatrix<f64>,
    pub loss: f64,
    pub prefixes: RealizedPrefixes,
}

/// Loss value plus the prefix set it was computed over.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    pub loss: f64,
    pub prefixes: RealizedPrefixes,
}

/// `(1/B) ||X - D Lambda_ell Top_m(E(X))||_F^2`.
pub fn prefix_loss(model: &SaeModel, x: &DMatrix<f64>, ell: usize) -> Result<f64> {
    let k = model.k();
    if ell == 0 || ell > k {
        return Err(invalid(format!("prefix length {ell} outside 1..={k}")));
    }
    model.check_input(x)?;
    let tail = prefix_tail(&[ell], &[1.0], k);
    Ok(Streaming::new(model, &tail, model.m, 0.0).loss(x))
}

pub fn objective_loss<R: Rng + ?Sized>(
    model: &SaeModel,
    x: &DMatrix<f64>,
    spec: &LossSpec,
    rng: &mut R,
) -> Result<ObjectiveValue> {
    model.check_input(x)?;
    let prefixes = realize(spec, model.k(), rng)?;
    let tail = prefixes.tail(model.k());
    let loss = Streaming::new(model, &tail, model.m, 0.0).loss(x);
    Ok(ObjectiveValue { loss, prefixes })
}

/// Exact gradients of [`objective_loss`] with the Top-m selection held fixed.
/// Uses the same random draw as `objective_loss` given an identically seeded `rng`.
pub fn gradients<R: Rng + ?Sized>(
    model: &SaeModel,
    x: &DMatrix<f64>,
    spec: &LossSpec,
    rng: &mut R,
) -> Result<GradientRecord> {
    gradients_with(model, x, spec, rng, model.m, 0.0)
}

/// [`gradients`] with an explicit truncation `k_eff` and an L1 penalty on the kept codes.
pub fn gradients_with<R: Rng + ?Sized>(
    model: &SaeModel,
    x: &DMatrix<f64>,
    spec: &LossSpec,
    rng: &mut R,
    k_eff: usize,
    l1: f64,
) -> Result<GradientRecord> {
    model.check_input(x)?;
    let prefixes = realize(spec, model.k(), rng)?;
    let tail = prefixes.tail(model.k());
    let mut grads = GradBuffers::zeros(model.d(), model.k());
    let loss = Streaming::new(model, &tail, k_eff, l1).loss_and_grad(x, &mut grads);
    Ok(GradientRecord {
        enc_weights: grads.enc_weights_t.transpose(),
        enc_bias: grads.enc_bias,
        decoder: grads.decoder,
        loss,
        prefixes,
    })
}

/// Gradient accumulators. The encoder gradient is kept transposed (`d x K`)
/// so each latent's row is contiguous.
#[derive(Debug, Clone)]
pub(crate) struct GradBuffers {
    pub enc_weights_t: DMatrix<f64>,
    pub enc_bias: DVector<f64>,
    pub decoder: DMatrix<f64>,
}

impl GradBuffers {
    pub fn zeros(d: usize, k: usize) -> Self {
        Self {
            enc_weights_t: DMatrix::zeros(d, k),
            enc_bias: DVector::zeros(k),
            decoder: DMatrix::zeros(d, k),
        }
    }

    pub fn reset(&mut self) {
        self.enc_weights_t.fill(0.0);
        self.enc_bias.fill(0.0);
        self.decoder.fill(0.0);
    }
}

/// Columns per forward chunk; bounds the `K x chunk` preactivation buffer.
const CHUNK: usize = 4096;

/// The streaming prefix-mixture evaluator.
pub(crate) struct Streaming<'a> {
    model: &'a SaeModel,
    tail: &'a [f64],
    k_eff: usize,
    l1: f64,
}

impl<'a> Streaming<'a> {
    pub fn new(model: &'a SaeModel, tail: &'a [f64], k_eff: usize, l1: f64) -> Self {
        Self {
            model,
            tail,
            k_eff: k_eff.clamp(1, model.k()),
            l1,
        }
    }

    /// Mixture weight of the residual after the `t`-th active atom (0 = none).
    #[inline]
    fn segment_weight(&self, active: &[usize], t: usize) -> f64 {
        let upper = if t == 0 { 1.0 } else { self.tail[active[t - 1]] };
        let lower = active.get(t).map_or(0.0, |&j| self.tail[j]);
        upper - lower
    }

    pub fn loss(&self, x: &DMatrix<f64>) -> f64 {
        let n = x.ncols();
        if n == 0 {
            return 0.0;
        }
        let d = self.model.d();
        let atoms = self.model.decoder.atoms().as_slice();
        let act = self.model.activation;
        let mut total = 0.0;
        let mut order = Vec::new();
        let mut r = vec![0.0; d];
        let mut start = 0;
        while start < n {
            let len = CHUNK.min(n - start);
            let xb = self.model.centered(&x.columns(start, len).into_owned());
            let pre = self.model.preactivations(&xb);
            let mut acts = vec![0.0; self.model.k()];
            for i in 0..len {
                for (a, &p) in acts.iter_mut().zip(pre.column(i).iter()) {
                    *a = act.apply(p);
                }
                select_top(&acts, self.k_eff, &mut order);
                r.copy_from_slice(xb.column(i).as_slice());
                let mut sample = self.segment_weight(&order, 0) * sq_norm(&r);
                for t in 0..order.len() {
                    let j = order[t];
                    let z = acts[j];
                    if z != 0.0 {
                        axpy(-z, &atoms[j * d..(j + 1) * d], &mut r);
                    }
                    sample += self.segment_weight(&order, t + 1) * sq_norm(&r);
                    sample += self.l1 * z.abs();
                }
                total += sample;
            }
            start += len;
        }
        // same rounding as `loss_and_grad`
        total * (1.0 / n as f64)
    }

    /// Loss, with gradients added into `grads` (scaled by `1/B`).
    pub fn loss_and_grad(&self, x: &DMatrix<f64>, grads: &mut GradBuffers) -> f64 {
        let n = x.ncols();
        if n == 0 {
            return 0.0;
        }
        let d = self.model.d();
        let k = self.model.k();
        let atoms = self.model.decoder.atoms().as_slice();
        let act = self.model.activation;
        let scale = 1.0 / n as f64;
        let mut total = 0.0;
        let mut order = Vec::new();
        let mut acts = vec![0.0; k];
        let mut residuals = vec![0.0; (self.k_eff + 1) * d];
        let mut suffix = vec![0.0; d];
        let mut start = 0;
        while start < n {
            let len = CHUNK.min(n - start);
            let xb = self.model.centered(&x.columns(start, len).into_owned());
            let pre = self.model.preactivations(&xb);
            for i in 0..len {
                let pre_col = pre.column(i);
                for (a, &p) in acts.iter_mut().zip(pre_col.iter()) {
                    *a = act.apply(p);
                }
                select_top(&acts, self.k_eff, &mut order);
                let s = order.len();
                let xi = xb.column(i);
                residuals[..d].copy_from_slice(xi.as_slice());
                let mut sample = self.segment_weight(&order, 0) * sq_norm(&residuals[..d]);
                for t in 0..s {
                    let j = order[t];
                    let (prev, next) = residuals.split_at_mut((t + 1) * d);
                    let next = &mut next[..d];
                    next.copy_from_slice(&prev[t * d..]);
                    let z = acts[j];
                    if z != 0.0 {
                        axpy(-z, &atoms[j * d..(j + 1) * d], next);
                    }
                    sample += self.segment_weight(&order, t + 1) * sq_norm(next);
                    sample += self.l1 * z.abs();
                }
                total += sample;

                // Backward: suffix = sum_{u >= t} w_u r_u, built from the last atom down.
                suffix.fill(0.0);
                for t in (1..=s).rev() {
                    let w = self.segment_weight(&order, t);
                    if w != 0.0 {
                        axpy(w, &residuals[t * d..(t + 1) * d], &mut suffix);
                    }
                    let j = order[t - 1];
                    let z = acts[j];
                    let atom = &atoms[j * d..(j + 1) * d];
                    let mut g_code = -2.0 * dot(&suffix, atom);
                    if self.l1 != 0.0 {
                        g_code += self.l1 * sign(z);
                    }
                    if z != 0.0 {
                        let col = &mut grads.decoder.as_mut_slice()[j * d..(j + 1) * d];
                        axpy(-2.0 * z * scale, &suffix, col);
                    }
                    let g_pre = g_code * act.slope(pre_col[j]) * scale;
                    if g_pre != 0.0 {
                        grads.enc_bias[j] += g_pre;
                        let row = &mut grads.enc_weights_t.as_mut_slice()[j * d..(j + 1) * d];
                        axpy(g_pre, xi.as_slice(), row);
                    }
                }
            }
            start += len;
        }
        total * scale
    }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn sq_norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::gen_dictionary;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn top_m_examples() {
        let z = top_m(&col(&[3.0, -1.0, 2.0, 0.0]), 2);
        assert_eq!(z.as_slice(), &[3.0, 0.0, 2.0, 0.0]);
        let z = top_m(&col(&[1.0, 1.0, 0.0]), 1);
        assert_eq!(z.as_slice(), &[1.0, 0.0, 0.0]);
        let dense = col(&[0.3, -2.0, 1.0]);
        assert_eq!(top_m(&dense, 3), dense);
        let z = top_m(&col(&[-5.0, 4.0, 1.0]), 1);
        assert_eq!(z.as_slice(), &[-5.0, 0.0, 0.0]);
    }

    #[test]
    fn prefix_mask_examples() {
        let z = col(&[3.0, 0.0, 2.0, 0.0]);
        assert_eq!(prefix_mask(&z, 4).unwrap(), z);
        assert_eq!(prefix_mask(&z, 2).unwrap().as_slice(), &[3.0, 0.0, 0.0, 0.0]);
        assert!(prefix_mask(&z, 0).is_err());
        assert!(prefix_mask(&z, 5).is_err());
    }

    #[test]
    fn encode_examples() {
        let dict = gen_dictionary(4, 3, 1).unwrap();
        let zero = SaeModel::new(DMatrix::zeros(3, 4), DVector::zeros(3), dict, Activation::Relu, 2).unwrap();
        let x = DMatrix::from_fn(4, 5, |r, c| (r * 5 + c) as f64 - 7.0);
        assert!(encode(&zero, &x).unwrap().iter().all(|&v| v == 0.0));
        assert!(encode(&zero, &DMatrix::zeros(3, 1)).is_err());

        let eye = Dictionary::new(DMatrix::identity(4, 4)).unwrap();
        let ortho = SaeModel::new(DMatrix::identity(4, 4), DVector::zeros(4), eye, Activation::Linear, 1).unwrap();
        let z = encode(&ortho, &DMatrix::identity(4, 4).columns(2, 1).into_owned()).unwrap();
        assert_eq!(z.as_slice(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn encode_matches_loops() {
        let mut model = SaeModel::init(5, 7, 3, Activation::Relu, 9).unwrap();
        model.enc_bias = DVector::from_fn(7, |i, _| 0.1 * i as f64 - 0.3);
        let x = DMatrix::from_fn(5, 4, |r, c| ((r * 31 + c * 17) % 11) as f64 / 5.0 - 1.0);
        let z = encode(&model, &x).unwrap();
        for j in 0..7 {
            for i in 0..4 {
                let mut acc = model.enc_bias[j];
                for r in 0..5 {
                    acc += model.enc_weights[(j, r)] * x[(r, i)];
                }
                assert!((z[(j, i)] - acc.max(0.0)).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn loss_spec_validation() {
        let dist = PrefixDistribution::groups(vec![2, 4]).unwrap();
        let mut spec = LossSpec {
            kind: LossKind::MsaeRandom,
            prefix_dist: dist.clone(),
            random_draws: 3,
        };
        assert!(spec.validate(4).is_err());
        spec.random_draws = 2;
        assert!(spec.validate(4).is_ok());
        assert!(spec.validate(3).is_err());
        let nd = LossSpec {
            kind: LossKind::NestedDropout,
            prefix_dist: PrefixDistribution::groups(vec![1, 2]).unwrap(),
            random_draws: 1,
        };
        assert!(nd.validate(4).is_err());
        assert!(PrefixDistribution::new(vec![], vec![]).is_err());
        assert!(PrefixDistribution::new(vec![2, 2], vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn doubling_groups() {
        assert_eq!(doubling_boundaries(4096, 128), vec![128, 256, 512, 1024, 2048, 4096]);
        assert_eq!(n_groups(100, 5), vec![6, 13, 25, 50, 100]);
        assert_eq!(n_groups(32, 8), vec![4, 8, 12, 16, 20, 24, 28, 32]);
        assert_eq!(n_groups(3, 5), vec![1, 2, 3]);
    }

    #[test]
    fn random_draws_are_reproducible_and_distinct() {
        let spec = LossSpec {
            kind: LossKind::MsaeRandom,
            prefix_dist: PrefixDistribution::uniform(10).unwrap(),
            random_draws: 4,
        };
        let a = realize(&spec, 10, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = realize(&spec, 10, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.prefixes.len(), 4);
        assert!(a.prefixes.windows(2).all(|w| w[0] < w[1]));
    }

    proptest! {
        #[test]
        fn top_m_is_sparse_and_idempotent(vals in proptest::collection::vec(-5.0f64..5.0, 1..12), m in 1usize..12) {
            let k = vals.len();
            let m = m.min(k);
            let z = col(&vals);
            let t = top_m(&z, m);
            prop_assert!(t.iter().filter(|&&v| v != 0.0).count() <= m);
            prop_assert_eq!(top_m(&t, m), t);
        }

        #[test]
        fn masks_compose(vals in proptest::collection::vec(-5.0f64..5.0, 1..10), a in 1usize..10, b in 1usize..10) {
            let k = vals.len();
            let (a, b) = (a.min(k), b.min(k));
            let z = col(&vals);
            let lhs = prefix_mask(&prefix_mask(&z, a).unwrap(), b).unwrap();
            prop_assert_eq!(lhs, prefix_mask(&z, a.min(b)).unwrap());
        }
    }
}
