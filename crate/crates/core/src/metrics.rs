//! Dictionary comparison metrics.
//!
//! Stability matches atoms of two dictionaries with an optimal assignment on
//! cosine similarity and averages the matched similarities. Orderedness is the
//! Spearman correlation between atom indices and their matched indices. The
//! activation-stream variants do the same on Pearson correlations between
//! code rows. FIFR error scores per-feature reconstruction after aligning
//! atoms on absolute cosine.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, OsaeError, Result};
use crate::sae::{SaeModel, Streaming};
use crate::synthgen::Dictionary;

/// A bijection `j -> perm[j]` with its mean matched score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub perm: Vec<usize>,
    pub score: f64,
}

/// Optimal linear assignment on a square score matrix.
///
/// With `maximize`, returns the permutation maximizing `sum_j s[j, perm[j]]`;
/// otherwise minimizes. With `absolute`, scores are replaced by their absolute
/// values first. `score` is the mean of the (possibly absolute) matched entries.
pub fn hungarian(scores: &DMatrix<f64>, maximize: bool, absolute: bool) -> Result<Assignment> {
    let n = scores.nrows();
    if n != scores.ncols() {
        return Err(invalid(format!("score matrix is {}x{}, must be square", n, scores.ncols())));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(invalid("score matrix has non-finite entries"));
    }
    if n == 0 {
        return Ok(Assignment {
            perm: Vec::new(),
            score: 0.0,
        });
    }
    let value = |i: usize, j: usize| {
        let v = scores[(i, j)];
        if absolute {
            v.abs()
        } else {
            v
        }
    };
    let cost = |i: usize, j: usize| if maximize { -value(i, j) } else { value(i, j) };

    // Shortest augmenting paths with row/column potentials; 1-based with a
    // virtual column 0.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0usize; n];
    for j in 1..=n {
        perm[p[j] - 1] = j - 1;
    }
    let score = perm.iter().enumerate().map(|(i, &j)| value(i, j)).sum::<f64>() / n as f64;
    Ok(Assignment { perm, score })
}

/// Cosine similarity between every column of `a` and every column of `b`.
pub fn cosine_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let normalize = |m: &DMatrix<f64>| {
        let mut out = m.clone();
        for mut c in out.column_iter_mut() {
            let n = c.norm();
            if n > 0.0 {
                c /= n;
            }
        }
        out
    };
    normalize(a).transpose() * normalize(b)
}

fn check_same_shape(a: &Dictionary, b: &Dictionary) -> Result<()> {
    if a.dim() != b.dim() || a.len() != b.len() {
        return Err(invalid(format!(
            "dictionaries are {}x{} and {}x{}",
            a.dim(),
            a.len(),
            b.dim(),
            b.len()
        )));
    }
    Ok(())
}

/// Optimal signed-cosine matching of `a`'s atoms onto `b`'s.
pub fn match_dictionaries(a: &Dictionary, b: &Dictionary) -> Result<Assignment> {
    check_same_shape(a, b)?;
    hungarian(&cosine_matrix(a.atoms(), b.atoms()), true, false)
}

/// Mean matched cosine similarity under the optimal matching.
pub fn stab(a: &Dictionary, b: &Dictionary) -> Result<f64> {
    Ok(match_dictionaries(a, b)?.score)
}

/// Spearman correlation between `1..K` and the matched indices of `a` in `b`.
pub fn ord(a: &Dictionary, b: &Dictionary) -> Result<f64> {
    spearman_permutation(&match_dictionaries(a, b)?.perm)
}

/// Both metrics from one matching.
pub fn stab_ord(a: &Dictionary, b: &Dictionary) -> Result<(f64, Option<f64>)> {
    let asg = match_dictionaries(a, b)?;
    let o = spearman_permutation(&asg.perm).ok();
    Ok((asg.score, o))
}

/// `1 - 6 sum (j - perm[j])^2 / (K (K^2 - 1))`.
pub fn spearman_permutation(perm: &[usize]) -> Result<f64> {
    let k = perm.len();
    if k < 2 {
        return Err(OsaeError::UndefinedMetric(format!("orderedness needs K >= 2, got K = {k}")));
    }
    let ssd: f64 = perm
        .iter()
        .enumerate()
        .map(|(j, &p)| {
            let diff = j as f64 - p as f64;
            diff * diff
        })
        .sum();
    let kf = k as f64;
    Ok(1.0 - 6.0 * ssd / (kf * (kf * kf - 1.0)))
}

/// Pearson correlation between every row of `a` and every row of `b`.
/// Rows with zero variance correlate 0 with everything; their indices are returned.
pub fn pearson_rows(a: &DMatrix<f64>, b: &DMatrix<f64>) -> (DMatrix<f64>, Vec<usize>, Vec<usize>) {
    fn standardize(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<usize>) {
        let n = m.ncols() as f64;
        let mut out = m.clone();
        let mut dead = Vec::new();
        for (r, mut row) in out.row_iter_mut().enumerate() {
            let mean = row.sum() / n;
            row.add_scalar_mut(-mean);
            let norm = row.norm();
            if norm > 0.0 && norm.is_finite() {
                row /= norm;
            } else {
                row.fill(0.0);
                dead.push(r);
            }
        }
        (out, dead)
    }
    let (sa, dead_a) = standardize(a);
    let (sb, dead_b) = standardize(b);
    (&sa * sb.transpose(), dead_a, dead_b)
}

/// Activation-stream stability and orderedness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationMatch {
    pub stab: f64,
    pub ord: Option<f64>,
    pub perm: Vec<usize>,
    /// True when matching used absolute correlations.
    pub absolute: bool,
    /// Rows of either input with zero variance (correlation defined as 0).
    pub zero_variance_rows: usize,
}

/// Hungarian matching on row-wise Pearson correlation of two code matrices.
/// `absolute = false` is the signed definition.
pub fn stab_z(z: &DMatrix<f64>, z2: &DMatrix<f64>, absolute: bool) -> Result<ActivationMatch> {
    if z.shape() != z2.shape() {
        return Err(invalid(format!("code matrices have shapes {:?} and {:?}", z.shape(), z2.shape())));
    }
    let (corr, dead_a, dead_b) = pearson_rows(z, z2);
    if !dead_a.is_empty() || !dead_b.is_empty() {
        log::warn!(
            "{} zero-variance code rows; their correlations are set to 0",
            dead_a.len() + dead_b.len()
        );
    }
    let asg = hungarian(&corr, true, absolute)?;
    let stab = if absolute {
        asg.score
    } else {
        asg.perm.iter().enumerate().map(|(i, &j)| corr[(i, j)]).sum::<f64>() / asg.perm.len().max(1) as f64
    };
    Ok(ActivationMatch {
        stab,
        ord: spearman_permutation(&asg.perm).ok(),
        perm: asg.perm,
        absolute,
        zero_variance_rows: dead_a.len() + dead_b.len(),
    })
}

/// Orderedness of the activation-stream matching.
pub fn ord_z(z: &DMatrix<f64>, z2: &DMatrix<f64>) -> Result<f64> {
    let m = stab_z(z, z2, false)?;
    m.ord
        .ok_or_else(|| OsaeError::UndefinedMetric("orderedness needs K >= 2".into()))
}

/// Frequency-invariant feature reconstruction error.
///
/// `true_atoms` and `learned_atoms` are `d x K`; `true_codes` and
/// `inferred_codes` are `K x N` with rows indexed like the atoms.
pub fn fifr(
    true_atoms: &DMatrix<f64>,
    true_codes: &DMatrix<f64>,
    learned_atoms: &DMatrix<f64>,
    inferred_codes: &DMatrix<f64>,
) -> Result<f64> {
    const EPS: f64 = 1e-12;
    let (d, k) = true_atoms.shape();
    if learned_atoms.shape() != (d, k) {
        return Err(invalid(format!(
            "atom matrices have shapes {:?} and {:?}",
            true_atoms.shape(),
            learned_atoms.shape()
        )));
    }
    if true_codes.nrows() != k || inferred_codes.nrows() != k || true_codes.ncols() != inferred_codes.ncols() {
        return Err(invalid("code matrices must both be K x N"));
    }
    let asg = hungarian(&cosine_matrix(true_atoms, learned_atoms), true, true)?;
    let mut diff = vec![0.0; d];
    let mut total = 0.0;
    let mut features = 0usize;
    for j in 0..k {
        let pj = asg.perm[j];
        let a_true = true_atoms.column(j);
        let a_hat = learned_atoms.column(pj);
        let mut err = 0.0;
        let mut energy = 0.0;
        let mut support = 0usize;
        for i in 0..true_codes.ncols() {
            let s = true_codes[(j, i)];
            if s == 0.0 {
                continue;
            }
            support += 1;
            let f = inferred_codes[(pj, i)];
            for r in 0..d {
                diff[r] = s * a_true[r] - f * a_hat[r];
            }
            err += diff.iter().map(|v| v * v).sum::<f64>();
            energy += a_true.iter().map(|v| (s * v) * (s * v)).sum::<f64>();
        }
        if support > 0 {
            let n = support as f64;
            total += (err / n) / (energy / n + EPS);
            features += 1;
        }
    }
    if features == 0 {
        return Err(OsaeError::UndefinedMetric("every feature has empty support".into()));
    }
    Ok(total / features as f64)
}

/// Mean squared reconstruction error with Top-`m` codes over the full prefix.
pub fn recon_mse(model: &SaeModel, x: &DMatrix<f64>, m: usize) -> Result<f64> {
    if x.nrows() != model.d() {
        return Err(invalid(format!("input has {} rows, model expects d = {}", x.nrows(), model.d())));
    }
    if m == 0 || m > model.k() {
        return Err(invalid(format!("m = {m} outside 1..={}", model.k())));
    }
    let k = model.k();
    let tail = vec![1.0; k];
    Ok(Streaming::new(model, &tail, m, 0.0).loss(x))
}

/// Which two things a report compares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Provenance {
    Pair { seed_a: u64, seed_b: u64 },
    VsGroundTruth { seed: u64 },
    VsInitialization { seed: u64, step: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub provenance: Provenance,
    pub stab_dd: Option<f64>,
    pub ord_dd: Option<f64>,
    pub stab_dstar: Option<f64>,
    pub ord_dstar: Option<f64>,
    /// Signed Pearson matching.
    pub stab_z: Option<f64>,
    pub ord_z: Option<f64>,
    /// Absolute Pearson matching.
    pub stab_z_abs: Option<f64>,
    pub ord_z_abs: Option<f64>,
    pub zero_variance_rows: usize,
    pub fifr: Option<f64>,
    /// Squared error per sample, summed over coordinates.
    pub recon_mse: Option<f64>,
    /// The same error averaged over coordinates as well (`recon_mse / d`).
    pub recon_mse_per_dim: Option<f64>,
}

impl MetricsReport {
    pub fn empty(provenance: Provenance) -> Self {
        Self {
            provenance,
            stab_dd: None,
            ord_dd: None,
            stab_dstar: None,
            ord_dstar: None,
            stab_z: None,
            ord_z: None,
            stab_z_abs: None,
            ord_z_abs: None,
            zero_variance_rows: 0,
            fifr: None,
            recon_mse: None,
            recon_mse_per_dim: None,
        }
    }

    /// Check value ranges.
    pub fn validate(&self) -> Result<()> {
        let unit = [
            ("stab_dd", self.stab_dd),
            ("ord_dd", self.ord_dd),
            ("stab_dstar", self.stab_dstar),
            ("ord_dstar", self.ord_dstar),
            ("stab_z", self.stab_z),
            ("ord_z", self.ord_z),
            ("stab_z_abs", self.stab_z_abs),
            ("ord_z_abs", self.ord_z_abs),
        ];
        for (name, v) in unit {
            if let Some(v) = v {
                if !(-1.0 - 1e-9..=1.0 + 1e-9).contains(&v) {
                    return Err(invalid(format!("{name} = {v} outside [-1, 1]")));
                }
            }
        }
        for (name, v) in [
            ("fifr", self.fifr),
            ("recon_mse", self.recon_mse),
            ("recon_mse_per_dim", self.recon_mse_per_dim),
        ] {
            if let Some(v) = v {
                if !(v >= 0.0) {
                    return Err(invalid(format!("{name} = {v} is negative")));
                }
            }
        }
        Ok(())
    }

    /// `(name, value)` for every populated metric, in a fixed order.
    pub fn values(&self) -> Vec<(&'static str, f64)> {
        [
            ("stab_dd", self.stab_dd),
            ("ord_dd", self.ord_dd),
            ("stab_dstar", self.stab_dstar),
            ("ord_dstar", self.ord_dstar),
            ("stab_z", self.stab_z),
            ("ord_z", self.ord_z),
            ("stab_z_abs", self.stab_z_abs),
            ("ord_z_abs", self.ord_z_abs),
            ("fifr", self.fifr),
            ("recon_mse", self.recon_mse),
            ("recon_mse_per_dim", self.recon_mse_per_dim),
        ]
        .into_iter()
        .filter_map(|(n, v)| v.map(|v| (n, v)))
        .collect()
    }
}
