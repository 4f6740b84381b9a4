use nalgebra::{DMatrix, DVector};
use osae_core::sae::{Activation, SaeModel};
use osae_core::stitching::{stitch_all, StitchClass, DEFAULT_TAU};
use osae_core::synthgen::{assemble_data, gen_codes, zipf_prior, CodeMatrix};
use osae_core::Dictionary;

/// Tied encoder/decoder on the chosen coordinate axes of `R^d`.
fn axis_model(d: usize, axes: &[usize], m: usize) -> SaeModel {
    let atoms = DMatrix::from_fn(d, axes.len(), |t, j| if t == axes[j] { 1.0 } else { 0.0 });
    SaeModel::new(
        atoms.transpose(),
        DVector::zeros(axes.len()),
        Dictionary::new(atoms).unwrap(),
        Activation::Relu,
        m,
    )
    .unwrap()
}

fn eval_data(d: usize, m: usize) -> DMatrix<f64> {
    let codes: CodeMatrix = gen_codes(&zipf_prior(d, 0.5).unwrap(), m, 400, true, 3).unwrap();
    assemble_data(&Dictionary::new(DMatrix::identity(d, d)).unwrap(), &codes).unwrap()
}

#[test]
fn missing_ground_truth_atom_is_novel() {
    let (d, m) = (6, 2);
    let x = eval_data(d, m);
    let small = axis_model(d, &[0, 1, 3, 4, 5], m);
    let large = axis_model(d, &[0, 1, 2, 3, 4, 5], m);
    let rep = stitch_all(&small, &large, &x, DEFAULT_TAU).unwrap();
    // a duplicate can crowd out a weaker unit under Top-m, so present atoms
    // may hurt; only the missing one can help
    for rec in &rep.records {
        let novel = rec.class == StitchClass::Novel;
        assert_eq!(novel, rec.source_index == 2, "latent {}: {:?}", rec.source_index, rec.class);
    }
    assert!(rep.records[2].delta < 0.0);
    assert!((rep.novel_pct - 100.0 / 6.0).abs() <= 1e-12);
}

#[test]
fn self_stitch_is_never_novel() {
    let (d, m) = (6, 2);
    let x = eval_data(d, m);
    let model = axis_model(d, &[0, 1, 2, 3, 4, 5], m);
    let rep = stitch_all(&model, &model, &x, DEFAULT_TAU).unwrap();
    assert_eq!(rep.novel_pct, 0.0);
    assert!(rep.records.iter().all(|r| r.delta >= 0.0));
    assert!(rep.records.iter().all(|r| r.mse_before == rep.records[0].mse_before));
}

#[test]
fn percentages_partition_active_latents() {
    let x = eval_data(6, 2);
    let small = SaeModel::init(6, 4, 2, Activation::Relu, 1).unwrap();
    let large = SaeModel::init(6, 9, 2, Activation::Relu, 2).unwrap();
    let rep = stitch_all(&small, &large, &x, DEFAULT_TAU).unwrap();
    assert_eq!(rep.records.len(), 9);
    let active = rep.records.iter().filter(|r| r.class != StitchClass::NonActivating).count();
    if active > 0 {
        let total = rep.novel_pct + rep.reconstruction_pct + rep.no_change_pct;
        assert!((total - 100.0).abs() <= 1e-9);
    }
    for r in &rep.records {
        let rel = if r.mse_before > 0.0 { r.delta / r.mse_before } else { r.delta };
        assert_eq!(r.relative_delta, rel);
    }
}
