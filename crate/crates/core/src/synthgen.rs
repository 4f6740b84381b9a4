//! Synthetic sparse-dictionary data with a known feature ordering.
//!
//! Atoms are Gaussian directions normalized to the unit sphere. Each sample
//! activates `m` atoms drawn without replacement from a nonincreasing support
//! prior, so low-index atoms fire more often and the ground truth carries an
//! ordering that a learned dictionary can be compared against.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, OsaeError, Result};
use crate::rng::{stream, Purpose};

/// Columns must have unit Euclidean norm to within this tolerance.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// A `d x K` matrix with unit-norm columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: DMatrix<f64>,
}

impl Dictionary {
    /// Wrap a matrix whose columns are already unit norm.
    pub fn new(atoms: DMatrix<f64>) -> Result<Self> {
        if atoms.nrows() == 0 || atoms.ncols() == 0 {
            return Err(invalid("dictionary needs d >= 1 and K >= 1"));
        }
        for (j, col) in atoms.column_iter().enumerate() {
            let n = col.norm();
            if (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(invalid(format!("atom {j} has norm {n}, expected 1")));
            }
        }
        Ok(Self { atoms })
    }

    /// Normalize every column. Zero columns are rejected.
    pub fn from_unnormalized(mut atoms: DMatrix<f64>) -> Result<Self> {
        if atoms.nrows() == 0 || atoms.ncols() == 0 {
            return Err(invalid("dictionary needs d >= 1 and K >= 1"));
        }
        for (j, mut col) in atoms.column_iter_mut().enumerate() {
            let n = col.norm();
            if n == 0.0 || !n.is_finite() {
                return Err(invalid(format!("atom {j} cannot be normalized (norm {n})")));
            }
            col /= n;
        }
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.atoms
    }

    /// Raw mutable access. The unit-norm invariant is suspended until the
    /// caller runs [`Dictionary::renormalize`]; objectives and gradients
    /// accept off-sphere atoms, which finite-difference checks rely on.
    pub fn atoms_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.atoms
    }

    /// Project the listed columns back onto the unit sphere.
    pub fn renormalize(&mut self, columns: impl Iterator<Item = usize>) {
        for j in columns {
            let mut col = self.atoms.column_mut(j);
            let n = col.norm();
            if n > 0.0 {
                col /= n;
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn len(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.ncols() == 0
    }

    /// First `p` atoms as a new dictionary.
    pub fn prefix(&self, p: usize) -> Result<Dictionary> {
        if p == 0 || p > self.len() {
            return Err(invalid(format!("prefix {p} outside 1..={}", self.len())));
        }
        Ok(Self {
            atoms: self.atoms.columns(0, p).into_owned(),
        })
    }

    /// Column `j` moved to position `i` for every `(i, j)` in `order`.
    pub fn permuted(&self, order: &[usize]) -> Result<Dictionary> {
        if order.len() != self.len() {
            return Err(invalid("permutation length differs from atom count"));
        }
        Ok(Self {
            atoms: DMatrix::from_fn(self.dim(), self.len(), |r, c| self.atoms[(r, order[c])]),
        })
    }
}

/// A nonincreasing probability vector over atom indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportPrior {
    weights: Vec<f64>,
}

impl SupportPrior {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(invalid("support prior needs at least one atom"));
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(invalid("support prior weights must be finite and strictly positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("support prior sums to {total}, expected 1")));
        }
        if weights.windows(2).any(|w| w[1] > w[0]) {
            return Err(invalid("support prior must be nonincreasing"));
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Zipf prior with `pi_j` proportional to `j^-alpha` for `j = 1..=k`.
pub fn zipf_prior(k: usize, alpha: f64) -> Result<SupportPrior> {
    if k == 0 {
        return Err(invalid("zipf prior needs K >= 1"));
    }
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(invalid(format!("zipf exponent must be >= 0, got {alpha}")));
    }
    let raw: Vec<f64> = (1..=k).map(|j| (j as f64).powf(-alpha)).collect();
    let total: f64 = raw.iter().sum();
    SupportPrior::new(raw.into_iter().map(|w| w / total).collect())
}

/// Draw a `d x K` dictionary: i.i.d. `N(0, I/d)` columns, normalized.
pub fn gen_dictionary(d: usize, k: usize, seed: u64) -> Result<Dictionary> {
    if d == 0 || k == 0 {
        return Err(invalid("dictionary needs d >= 1 and K >= 1"));
    }
    let normal = Normal::new(0.0, (1.0 / d as f64).sqrt()).expect("valid std");
    let mut rng = stream(seed, Purpose::Dictionary, 0);
    let raw = DMatrix::from_fn(d, k, |_, _| normal.sample(&mut rng));
    Dictionary::from_unnormalized(raw)
}

/// `K x N` sparse codes with exactly `m` nonzeros per column.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeMatrix {
    pub codes: DMatrix<f64>,
    pub m: usize,
    pub nonneg: bool,
}

impl CodeMatrix {
    pub fn new(codes: DMatrix<f64>, m: usize, nonneg: bool) -> Result<Self> {
        for (i, col) in codes.column_iter().enumerate() {
            let nnz = col.iter().filter(|&&v| v != 0.0).count();
            if nnz > m {
                return Err(invalid(format!("column {i} has {nnz} nonzeros, limit {m}")));
            }
            if nonneg && col.iter().any(|&v| v < 0.0) {
                return Err(invalid(format!("column {i} has a negative entry")));
            }
        }
        Ok(Self { codes, m, nonneg })
    }

    /// Number of samples activating each atom.
    pub fn row_activation_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.codes.nrows()];
        for col in self.codes.column_iter() {
            for (j, &v) in col.iter().enumerate() {
                if v != 0.0 {
                    counts[j] += 1;
                }
            }
        }
        counts
    }
}

/// Weighted sampling of `m` distinct indices by sequential draws with
/// renormalization over the remaining mass.
pub fn sample_without_replacement<R: Rng + ?Sized>(weights: &[f64], m: usize, rng: &mut R) -> Vec<usize> {
    let mut remaining: Vec<f64> = weights.to_vec();
    let mut picked = Vec::with_capacity(m);
    for _ in 0..m {
        let total: f64 = remaining.iter().sum();
        let target = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        // Fall back to the last positive entry if rounding overshoots.
        let mut choice = remaining.iter().rposition(|&w| w > 0.0).expect("mass remains");
        for (j, &w) in remaining.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            acc += w;
            if target < acc {
                choice = j;
                break;
            }
        }
        picked.push(choice);
        remaining[choice] = 0.0;
    }
    picked
}

/// Draw `n` code columns; column `i` uses its own stream keyed by `(seed, i)`.
pub fn gen_codes(prior: &SupportPrior, m: usize, n: usize, nonneg: bool, seed: u64) -> Result<CodeMatrix> {
    let k = prior.len();
    if m > k {
        return Err(invalid(format!("sparsity m = {m} exceeds K = {k}")));
    }
    if n == 0 {
        return Err(invalid("need at least one sample"));
    }
    let mut codes = DMatrix::zeros(k, n);
    for (i, mut col) in codes.column_iter_mut().enumerate() {
        let mut rng = stream(seed, Purpose::Codes, i as u64);
        for j in sample_without_replacement(prior.weights(), m, &mut rng) {
            let z: f64 = StandardNormal.sample(&mut rng);
            col[j] = if nonneg { z.abs() } else { z };
        }
    }
    Ok(CodeMatrix { codes, m, nonneg })
}

/// `X = D Y`.
pub fn assemble_data(dict: &Dictionary, codes: &CodeMatrix) -> Result<DMatrix<f64>> {
    assemble_from_matrix(dict, &codes.codes)
}

pub(crate) fn assemble_from_matrix(dict: &Dictionary, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if dict.len() != y.nrows() {
        return Err(invalid(format!(
            "dictionary has {} atoms but codes have {} rows",
            dict.len(),
            y.nrows()
        )));
    }
    let d = dict.dim();
    let atoms = dict.atoms();
    let mut x = DMatrix::zeros(d, y.ncols());
    for (mut xc, yc) in x.column_iter_mut().zip(y.column_iter()) {
        for (j, &v) in yc.iter().enumerate() {
            if v != 0.0 {
                xc.axpy(v, &atoms.column(j), 1.0);
            }
        }
    }
    Ok(x)
}

/// Default cap on the number of column subsets inspected by
/// [`spark_certificate`] before it falls back to mutual coherence.
pub const DEFAULT_SPARK_BUDGET: u64 = 250_000;

/// Smallest singular value below this marks a subset as linearly dependent.
pub const RANK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum SparkBound {
    /// A dependent subset of this size was found and none smaller exists.
    Exact(usize),
    /// No dependent subset of size below this value exists.
    LowerBound(usize),
    /// Enumeration was out of budget; this is the mutual coherence.
    CoherenceBound(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparkCertificate {
    pub bound: SparkBound,
    pub m: usize,
    /// Whether the certificate guarantees uniqueness of `m`-sparse codes
    /// (`spark > 2m`, or `mu (m - 1) < 1` for the coherence surrogate).
    pub satisfied_2m: bool,
}

/// Largest absolute inner product between distinct atoms.
pub fn mutual_coherence(dict: &Dictionary) -> f64 {
    let gram = dict.atoms().transpose() * dict.atoms();
    let k = dict.len();
    let mut mu: f64 = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            mu = mu.max(gram[(i, j)].abs());
        }
    }
    mu
}

pub fn spark_certificate(dict: &Dictionary, m: usize, t_max: usize) -> SparkCertificate {
    spark_certificate_with_budget(dict, m, t_max, DEFAULT_SPARK_BUDGET)
}

/// Certify `spark(D) > 2m` by enumerating column subsets of size up to
/// `min(2m, t_max)`, or fall back to mutual coherence when that enumeration
/// cannot reach a verdict within `budget` subsets.
pub fn spark_certificate_with_budget(dict: &Dictionary, m: usize, t_max: usize, budget: u64) -> SparkCertificate {
    let k = dict.len();
    let d = dict.dim();
    let limit = (2 * m).min(t_max).min(k);
    let cost: u64 = (1..=limit).map(|t| binomial(k as u64, t as u64)).fold(0u64, u64::saturating_add);

    if cost <= budget {
        for t in 1..=limit {
            let dependent = if t > d {
                true
            } else {
                (0..k).combinations(t).any(|cols| {
                    let sub = DMatrix::from_fn(d, t, |r, c| dict.atoms()[(r, cols[c])]);
                    smallest_singular_value(sub) < RANK_TOL
                })
            };
            if dependent {
                return SparkCertificate {
                    bound: SparkBound::Exact(t),
                    m,
                    satisfied_2m: t > 2 * m,
                };
            }
        }
        if limit == 2 * m {
            return SparkCertificate {
                bound: SparkBound::LowerBound(2 * m + 1),
                m,
                satisfied_2m: true,
            };
        }
        log::warn!(
            "spark enumeration stopped at subset size {limit} < 2m = {}; using coherence bound",
            2 * m
        );
    } else {
        log::warn!("spark enumeration needs {cost} subsets (budget {budget}); using coherence bound");
    }
    let mu = mutual_coherence(dict);
    SparkCertificate {
        bound: SparkBound::CoherenceBound(mu),
        m,
        satisfied_2m: mu * (m.saturating_sub(1) as f64) < 1.0,
    }
}

fn smallest_singular_value(sub: DMatrix<f64>) -> f64 {
    let sv: DVector<f64> = sub.singular_values();
    sv.iter().copied().fold(f64::INFINITY, f64::min)
}

fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = match acc.checked_mul(n - i) {
            Some(v) => v / (i + 1),
            None => return u64::MAX,
        };
    }
    acc
}

impl From<SupportPrior> for Vec<f64> {
    fn from(p: SupportPrior) -> Self {
        p.weights
    }
}

impl TryFrom<Vec<f64>> for SupportPrior {
    type Error = OsaeError;
    fn try_from(w: Vec<f64>) -> Result<Self> {
        SupportPrior::new(w)
    }
}
