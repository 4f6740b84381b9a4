//! Independent reference implementations shared by the integration tests.
//! Nothing here calls the library's objective, matching, or correlation code.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use osae_core::sae::{Activation, SaeModel};
use osae_core::Dictionary;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Random model with a normalized decoder and a small random bias.
pub fn random_model(d: usize, k: usize, m: usize, act: Activation, rng: &mut ChaCha8Rng) -> SaeModel {
    let w = gaussian(k, d, rng);
    let b = DVector::from_fn(k, |_, _| 0.1 * rng.sample::<f64, _>(StandardNormal));
    let dec = Dictionary::from_unnormalized(gaussian(d, k, rng)).unwrap();
    SaeModel::new(w, b, dec, act, m).unwrap()
}

/// `act(W x + b)` by explicit loops.
pub fn dense_codes(model: &SaeModel, x: &DMatrix<f64>) -> DMatrix<f64> {
    let (k, d) = model.enc_weights.shape();
    DMatrix::from_fn(k, x.ncols(), |j, i| {
        let mut s = model.enc_bias[j];
        for t in 0..d {
            s += model.enc_weights[(j, t)] * x[(t, i)];
        }
        match model.activation {
            Activation::Relu => s.max(0.0),
            Activation::Linear => s,
        }
    })
}

/// Full sort by (|value| descending, index ascending); keep the first `m`.
pub fn sorted_top_m(z: &DMatrix<f64>, m: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(z.nrows(), z.ncols());
    for i in 0..z.ncols() {
        let mut idx: Vec<usize> = (0..z.nrows()).collect();
        idx.sort_by(|&a, &b| z[(b, i)].abs().partial_cmp(&z[(a, i)].abs()).unwrap().then(a.cmp(&b)));
        for &j in idx.iter().take(m) {
            out[(j, i)] = z[(j, i)];
        }
    }
    out
}

/// `(1/B) ||X - D Lambda_ell Top_m(Z)||_F^2` with every matrix materialized.
pub fn dense_prefix_loss(model: &SaeModel, x: &DMatrix<f64>, ell: usize, k_eff: usize) -> f64 {
    let mut codes = sorted_top_m(&dense_codes(model, x), k_eff);
    for j in ell..codes.nrows() {
        codes.row_mut(j).fill(0.0);
    }
    let recon = model.decoder.atoms() * codes;
    (x - recon).norm_squared() / x.ncols() as f64
}

/// Weighted sum of dense prefix losses.
pub fn dense_mixture(model: &SaeModel, x: &DMatrix<f64>, prefixes: &[usize], weights: &[f64], k_eff: usize) -> f64 {
    prefixes
        .iter()
        .zip(weights)
        .map(|(&ell, &w)| w * dense_prefix_loss(model, x, ell, k_eff))
        .sum()
}

/// Smallest gap, over all columns, between the k_eff-th and (k_eff+1)-th
/// largest magnitudes, and smallest |pre-activation| among the kept entries.
pub fn selection_margin(model: &SaeModel, x: &DMatrix<f64>, k_eff: usize) -> f64 {
    let pre = {
        let mut linear = model.clone();
        linear.activation = Activation::Linear;
        dense_codes(&linear, x)
    };
    let z = dense_codes(model, x);
    let mut margin = f64::INFINITY;
    for i in 0..z.ncols() {
        let mut mags: Vec<f64> = z.column(i).iter().map(|v| v.abs()).collect();
        mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if k_eff < mags.len() {
            margin = margin.min(mags[k_eff - 1] - mags[k_eff]);
        }
        for j in 0..z.nrows() {
            if model.activation == Activation::Relu {
                margin = margin.min(pre[(j, i)].abs());
            }
        }
    }
    margin
}

/// All permutations of `0..n` (Heap's algorithm).
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        heap(k - 1, a, out);
        for i in 0..k - 1 {
            if k.is_multiple_of(2) {
                a.swap(i, k - 1);
            } else {
                a.swap(0, k - 1);
            }
            heap(k - 1, a, out);
        }
    }
    let mut a: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    heap(n, &mut a, &mut out);
    out
}

/// Best total score over all permutations, by enumeration.
pub fn brute_force_assignment(scores: &DMatrix<f64>, maximize: bool) -> f64 {
    let n = scores.nrows();
    let totals = permutations(n)
        .into_iter()
        .map(|p| p.iter().enumerate().map(|(i, &j)| scores[(i, j)]).sum::<f64>());
    if maximize {
        totals.fold(f64::NEG_INFINITY, f64::max)
    } else {
        totals.fold(f64::INFINITY, f64::min)
    }
}

/// Spearman correlation between two samples via average ranks and Pearson.
pub fn spearman_by_ranks(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap());
        let mut r = vec![0.0; v.len()];
        let mut s = 0;
        while s < idx.len() {
            let mut e = s;
            while e + 1 < idx.len() && v[idx[e + 1]] == v[idx[s]] {
                e += 1;
            }
            let avg = (s + e) as f64 / 2.0;
            for &i in &idx[s..=e] {
                r[i] = avg;
            }
            s = e + 1;
        }
        r
    }
    pearson(&ranks(a), &ranks(b))
}

/// Textbook two-pass Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}
