mod common;

use common::*;
use nalgebra::DMatrix;
use osae_core::metrics::{fifr, hungarian, ord, spearman_permutation, stab, stab_ord, stab_z};
use osae_core::{Dictionary, OsaeError};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn hungarian_trivial_cases() {
    let eye = DMatrix::<f64>::identity(5, 5);
    let a = hungarian(&eye, true, false).unwrap();
    assert_eq!(a.perm, vec![0, 1, 2, 3, 4]);
    assert_eq!(a.score, 1.0);

    let swap = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
    let a = hungarian(&swap, true, false).unwrap();
    assert_eq!(a.perm, vec![1, 0]);
    assert_eq!(a.score, 1.0);
}

#[test]
fn hungarian_rejects_bad_input() {
    assert!(matches!(
        hungarian(&DMatrix::zeros(2, 3), true, false),
        Err(OsaeError::InvalidParameter(_))
    ));
    let mut m = DMatrix::zeros(3, 3);
    m[(1, 1)] = f64::NAN;
    assert!(matches!(hungarian(&m, true, false), Err(OsaeError::InvalidParameter(_))));
}

#[test]
fn hungarian_matches_enumeration_6x6() {
    let mut r = rng(66);
    let s = gaussian(6, 6, &mut r);
    let a = hungarian(&s, true, false).unwrap();
    let total: f64 = a.perm.iter().enumerate().map(|(i, &j)| s[(i, j)]).sum();
    assert!((total - brute_force_assignment(&s, true)).abs() <= 1e-12);
    assert_eq!(permutations(6).len(), 720);
}

#[test]
fn hungarian_matches_enumeration_random_sizes() {
    let mut r = rng(7);
    for trial in 0..100 {
        let n = r.gen_range(1..=7);
        let maximize = trial % 2 == 0;
        let absolute = trial % 3 == 0;
        let s = gaussian(n, n, &mut r);
        let eff = if absolute { s.abs() } else { s.clone() };
        let a = hungarian(&s, maximize, absolute).unwrap();
        let mut seen = vec![false; n];
        for &j in &a.perm {
            assert!(!seen[j]);
            seen[j] = true;
        }
        let total: f64 = a.perm.iter().enumerate().map(|(i, &j)| eff[(i, j)]).sum();
        let best = brute_force_assignment(&eff, maximize);
        assert!((total - best).abs() <= 1e-12, "trial {trial}: {total} vs {best}");
    }
}

#[test]
fn hungarian_on_integer_scores_is_exact() {
    let mut r = rng(8);
    for _ in 0..50 {
        let n = r.gen_range(2..=7);
        let s = DMatrix::from_fn(n, n, |_, _| r.gen_range(-20..=20) as f64);
        let a = hungarian(&s, true, false).unwrap();
        let total: f64 = a.perm.iter().enumerate().map(|(i, &j)| s[(i, j)]).sum();
        assert_eq!(total, brute_force_assignment(&s, true));
    }
}

fn random_dict(d: usize, k: usize, seed: u64) -> Dictionary {
    Dictionary::from_unnormalized(gaussian(d, k, &mut rng(seed))).unwrap()
}

#[test]
fn stab_and_ord_self_and_permuted() {
    let d = random_dict(10, 8, 1);
    assert!((stab(&d, &d).unwrap() - 1.0).abs() <= 1e-12);
    assert!((ord(&d, &d).unwrap() - 1.0).abs() <= 1e-12);
    let order = [3, 0, 7, 1, 6, 2, 5, 4];
    let p = d.permuted(&order).unwrap();
    assert!((stab(&d, &p).unwrap() - 1.0).abs() <= 1e-12);
    let rev: Vec<usize> = (0..8).rev().collect();
    let r = d.permuted(&rev).unwrap();
    assert!((ord(&d, &r).unwrap() + 1.0).abs() <= 1e-12);
}

#[test]
fn spearman_closed_form_examples() {
    assert_eq!(spearman_permutation(&[0, 1, 2, 3]).unwrap(), 1.0);
    assert!((spearman_permutation(&[3, 2, 1, 0]).unwrap() + 1.0).abs() <= 1e-15);
    assert!((spearman_permutation(&[0, 2, 1]).unwrap() - 0.5).abs() <= 1e-15);
    assert!(matches!(spearman_permutation(&[0]), Err(OsaeError::UndefinedMetric(_))));
    let one = random_dict(4, 1, 2);
    assert!(matches!(ord(&one, &one), Err(OsaeError::UndefinedMetric(_))));
}

#[test]
fn stab_rejects_shape_mismatch() {
    assert!(stab(&random_dict(5, 4, 1), &random_dict(5, 3, 2)).is_err());
    assert!(stab(&random_dict(5, 4, 1), &random_dict(6, 4, 2)).is_err());
}

/// Stab equals the best mean cosine over all permutations.
#[test]
fn stab_matches_enumeration() {
    for seed in 0..20 {
        let a = random_dict(6, 6, seed);
        let b = random_dict(6, 6, seed + 100);
        let cos = a.atoms().transpose() * b.atoms();
        let want = brute_force_assignment(&cos, true) / 6.0;
        assert!((stab(&a, &b).unwrap() - want).abs() <= 1e-12);
    }
}

#[test]
fn stab_z_matches_enumeration_with_textbook_pearson() {
    let mut r = rng(31);
    for _ in 0..20 {
        let z = gaussian(4, 10, &mut r);
        let z2 = gaussian(4, 10, &mut r);
        let rows = |m: &DMatrix<f64>, i: usize| m.row(i).iter().copied().collect::<Vec<_>>();
        let corr = DMatrix::from_fn(4, 4, |i, j| pearson(&rows(&z, i), &rows(&z2, j)));
        let want = brute_force_assignment(&corr, true) / 4.0;
        let got = stab_z(&z, &z2, false).unwrap();
        assert!((got.stab - want).abs() <= 1e-12);
        let want_abs = brute_force_assignment(&corr.abs(), true) / 4.0;
        assert!((stab_z(&z, &z2, true).unwrap().stab - want_abs).abs() <= 1e-12);
        // ord is Spearman on the matched index sequence
        let idx: Vec<f64> = (0..4).map(|i| i as f64).collect();
        let mu: Vec<f64> = got.perm.iter().map(|&j| j as f64).collect();
        assert!((got.ord.unwrap() - spearman_by_ranks(&idx, &mu)).abs() <= 1e-12);
    }
}

#[test]
fn stab_z_self_and_row_scaling() {
    let mut r = rng(32);
    let z = gaussian(6, 30, &mut r);
    let m = stab_z(&z, &z, false).unwrap();
    assert!((m.stab - 1.0).abs() <= 1e-12);
    assert_eq!(m.ord, Some(1.0));
    let mut scaled = z.clone();
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row *= 0.5 + i as f64;
    }
    assert!((stab_z(&z, &scaled, false).unwrap().stab - 1.0).abs() <= 1e-12);
}

#[test]
fn stab_z_flags_zero_variance_rows() {
    let mut r = rng(33);
    let mut z = gaussian(3, 12, &mut r);
    z.row_mut(1).fill(2.0);
    let m = stab_z(&z, &z, false).unwrap();
    assert_eq!(m.zero_variance_rows, 2);
    assert!((m.stab - 2.0 / 3.0).abs() <= 1e-12);
}

/// Ground truth, its codes, and an exact learned copy.
fn fifr_instance(seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut r = rng(seed);
    let atoms = Dictionary::from_unnormalized(gaussian(8, 6, &mut r)).unwrap().into_inner();
    let codes = DMatrix::from_fn(6, 40, |_, _| if r.gen_bool(0.3) { r.gen_range(0.1..2.0) } else { 0.0 });
    (atoms, codes)
}

#[test]
fn fifr_exact_recovery_is_zero() {
    let (a, s) = fifr_instance(1);
    assert!(fifr(&a, &s, &a, &s).unwrap() <= 1e-10);
}

#[test]
fn fifr_zeroed_output_is_one() {
    let (a, s) = fifr_instance(2);
    let zero = DMatrix::zeros(s.nrows(), s.ncols());
    assert!((fifr(&a, &s, &a, &zero).unwrap() - 1.0).abs() <= 1e-10);
}

#[test]
fn fifr_is_scale_and_permutation_invariant() {
    let (a, s) = fifr_instance(3);
    let mut r = rng(4);
    let noisy_f = s.map(|v| if v != 0.0 { v * r.gen_range(0.7..1.3) } else { 0.0 });
    let noisy_a = Dictionary::from_unnormalized(&a + gaussian(8, 6, &mut r) * 0.1).unwrap().into_inner();
    let base = fifr(&a, &s, &noisy_a, &noisy_f).unwrap();
    assert!(base > 0.0);

    // global rescaling of data and codes together
    let c = 3.7;
    let scaled = fifr(&a, &(&s * c), &noisy_a, &(&noisy_f * c)).unwrap();
    assert!((scaled - base).abs() <= 1e-10);

    // relabel the learned features
    let order = [4, 2, 0, 5, 1, 3];
    let pa = DMatrix::from_fn(8, 6, |t, j| noisy_a[(t, order[j])]);
    let pf = DMatrix::from_fn(6, 40, |j, i| noisy_f[(order[j], i)]);
    assert!((fifr(&a, &s, &pa, &pf).unwrap() - base).abs() <= 1e-10);
}

#[test]
fn fifr_ignores_feature_frequency() {
    // one feature fires often, the other rarely; both are reconstructed at
    // the same per-firing relative error, so the macro average equals it
    let atoms = DMatrix::<f64>::identity(2, 2);
    let mut s = DMatrix::zeros(2, 100);
    for i in 0..100 {
        s[(0, i)] = 1.0;
    }
    s[(1, 0)] = 1.0;
    let f = &s * 0.5;
    assert!((fifr(&atoms, &s, &atoms, &f).unwrap() - 0.25).abs() <= 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn stab_is_symmetric_and_bounded(seed in 0u64..10_000, d in 2usize..8, k in 2usize..8) {
        let a = random_dict(d, k, seed);
        let b = random_dict(d, k, seed ^ 0xabcdef);
        let (s1, o1) = stab_ord(&a, &b).unwrap();
        let (s2, _) = stab_ord(&b, &a).unwrap();
        prop_assert!((s1 - s2).abs() <= 1e-12);
        prop_assert!((-1.0..=1.0 + 1e-12).contains(&s1));
        let o1 = o1.unwrap();
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&o1));
    }

    #[test]
    fn hungarian_returns_a_permutation(seed in 0u64..10_000, n in 1usize..12) {
        let s = gaussian(n, n, &mut rng(seed));
        let a = hungarian(&s, seed % 2 == 0, seed % 3 == 0).unwrap();
        let mut sorted = a.perm.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn spearman_matches_rank_oracle(perm in Just((0..9).collect::<Vec<usize>>()).prop_shuffle()) {
        let idx: Vec<f64> = (0..perm.len()).map(|i| i as f64).collect();
        let mu: Vec<f64> = perm.iter().map(|&j| j as f64).collect();
        let got = spearman_permutation(&perm).unwrap();
        prop_assert!((got - spearman_by_ranks(&idx, &mu)).abs() <= 1e-12);
    }
}
