//! Latent stitching: append one latent of a larger SAE to a smaller one and
//! classify it by the change in reconstruction error.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::sae::{encode, select_top, SaeModel};
use crate::synthgen::Dictionary;

/// Default deadband on the relative MSE change.
pub const DEFAULT_TAU: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StitchClass {
    Novel,
    Reconstruction,
    NoChange,
    NonActivating,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StitchRecord {
    pub source_index: usize,
    pub mse_before: f64,
    pub mse_after: f64,
    /// `mse_after - mse_before`.
    pub delta: f64,
    /// `delta / mse_before`, or `delta` when `mse_before` is zero. Compared against the deadband.
    pub relative_delta: f64,
    /// Eval samples on which the stitched latent's activation is nonzero.
    pub activation_count: usize,
    pub class: StitchClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StitchReport {
    pub tau: f64,
    pub records: Vec<StitchRecord>,
    /// Percentages over activating latents.
    pub novel_pct: f64,
    pub reconstruction_pct: f64,
    pub no_change_pct: f64,
    /// Percentage of all stitched latents that never activate.
    pub non_activating_pct: f64,
}

/// Deadband classification of one stitched latent.
pub fn classify(relative_delta: f64, tau: f64, activation_count: usize) -> StitchClass {
    if activation_count == 0 {
        StitchClass::NonActivating
    } else if relative_delta < -tau {
        StitchClass::Novel
    } else if relative_delta > tau {
        StitchClass::Reconstruction
    } else {
        StitchClass::NoChange
    }
}

/// The small model with latent `j` of `large` appended as latent `K_small`.
pub fn augmented_model(small: &SaeModel, large: &SaeModel, j: usize) -> Result<SaeModel> {
    check_pair(small, large, j)?;
    let (d, k) = (small.d(), small.k());
    let mut dec = small.decoder.atoms().clone().resize_horizontally(k + 1, 0.0);
    dec.set_column(k, &large.decoder.atoms().column(j));
    let mut enc = small.enc_weights.clone().resize_vertically(k + 1, 0.0);
    enc.set_row(k, &large.enc_weights.row(j));
    let mut bias = small.enc_bias.clone().resize_vertically(k + 1, 0.0);
    bias[k] = large.enc_bias[j];
    debug_assert_eq!(dec.nrows(), d);
    let mut model = SaeModel::new(enc, bias, Dictionary::new(dec)?, small.activation, small.m)?;
    model.input_center = small.input_center.clone();
    Ok(model)
}

fn check_pair(small: &SaeModel, large: &SaeModel, j: usize) -> Result<()> {
    if small.d() != large.d() {
        return Err(invalid(format!("models have d = {} and d = {}", small.d(), large.d())));
    }
    if j >= large.k() {
        return Err(invalid(format!("latent {j} outside 0..{}", large.k())));
    }
    Ok(())
}

/// Activations of the small model, computed once and shared by every trial.
struct Baseline<'a> {
    small: &'a SaeModel,
    x: DMatrix<f64>,
    acts: DMatrix<f64>,
    mse: f64,
}

impl<'a> Baseline<'a> {
    fn new(small: &'a SaeModel, x_eval: &DMatrix<f64>) -> Result<Self> {
        let acts = encode(small, x_eval)?;
        let x = match &small.input_center {
            Some(c) => {
                let mut x = x_eval.clone();
                for mut col in x.column_iter_mut() {
                    col -= c;
                }
                x
            }
            None => x_eval.clone(),
        };
        let mut base = Self { small, x, acts, mse: 0.0 };
        base.mse = base.mse_with(None);
        Ok(base)
    }

    /// Top-m reconstruction MSE, optionally with one extra latent (activations, atom).
    fn mse_with(&self, extra: Option<(&[f64], &[f64])>) -> f64 {
        let n = self.x.ncols();
        if n == 0 {
            return 0.0;
        }
        let k = self.small.k();
        let d = self.small.d();
        let atoms = self.small.decoder.atoms().as_slice();
        let width = k + usize::from(extra.is_some());
        let mut vals = vec![0.0; width];
        let mut order = Vec::new();
        let mut r = vec![0.0; d];
        let mut total = 0.0;
        for i in 0..n {
            vals[..k].copy_from_slice(self.acts.column(i).as_slice());
            if let Some((a, _)) = extra {
                vals[k] = a[i];
            }
            select_top(&vals, self.small.m, &mut order);
            r.copy_from_slice(self.x.column(i).as_slice());
            for &j in &order {
                let z = vals[j];
                if z == 0.0 {
                    continue;
                }
                let atom = if j < k { &atoms[j * d..(j + 1) * d] } else { extra.unwrap().1 };
                for (ri, ai) in r.iter_mut().zip(atom) {
                    *ri -= z * ai;
                }
            }
            total += r.iter().map(|v| v * v).sum::<f64>();
        }
        total / n as f64
    }

    fn trial(&self, large: &SaeModel, j: usize, tau: f64) -> StitchRecord {
        let row = large.enc_weights.row(j);
        let b = large.enc_bias[j];
        let act: Vec<f64> = (0..self.x.ncols())
            .map(|i| {
                let pre = row.dot(&self.x.column(i).transpose()) + b;
                match self.small.activation {
                    crate::sae::Activation::Relu => pre.max(0.0),
                    crate::sae::Activation::Linear => pre,
                }
            })
            .collect();
        let activation_count = act.iter().filter(|&&v| v != 0.0).count();
        let atom = large.decoder.atoms().column(j).into_owned();
        let mse_after = self.mse_with(Some((&act, atom.as_slice())));
        let delta = mse_after - self.mse;
        let relative_delta = if self.mse > 0.0 { delta / self.mse } else { delta };
        StitchRecord {
            source_index: j,
            mse_before: self.mse,
            mse_after,
            delta,
            relative_delta,
            activation_count,
            class: classify(relative_delta, tau, activation_count),
        }
    }
}

/// Stitch latent `j` of `large` into `small` and classify it.
pub fn stitch_one(small: &SaeModel, large: &SaeModel, j: usize, x_eval: &DMatrix<f64>, tau: f64) -> Result<StitchRecord> {
    check_pair(small, large, j)?;
    if x_eval.nrows() != small.d() {
        return Err(invalid(format!("eval data has {} rows, models expect d = {}", x_eval.nrows(), small.d())));
    }
    Ok(Baseline::new(small, x_eval)?.trial(large, j, tau))
}

/// Stitch every latent of `large`, one at a time, each into the unmodified `small`.
pub fn stitch_all(small: &SaeModel, large: &SaeModel, x_eval: &DMatrix<f64>, tau: f64) -> Result<StitchReport> {
    if small.d() != large.d() {
        return Err(invalid(format!("models have d = {} and d = {}", small.d(), large.d())));
    }
    if x_eval.nrows() != small.d() {
        return Err(invalid(format!("eval data has {} rows, models expect d = {}", x_eval.nrows(), small.d())));
    }
    let base = Baseline::new(small, x_eval)?;
    let records: Vec<StitchRecord> = (0..large.k()).into_par_iter().map(|j| base.trial(large, j, tau)).collect();
    Ok(summarize(tau, records))
}

pub fn summarize(tau: f64, records: Vec<StitchRecord>) -> StitchReport {
    let count = |c: StitchClass| records.iter().filter(|r| r.class == c).count() as f64;
    let inactive = count(StitchClass::NonActivating);
    let active = records.len() as f64 - inactive;
    let pct = |n: f64, of: f64| if of > 0.0 { 100.0 * n / of } else { 0.0 };
    StitchReport {
        tau,
        novel_pct: pct(count(StitchClass::Novel), active),
        reconstruction_pct: pct(count(StitchClass::Reconstruction), active),
        no_change_pct: pct(count(StitchClass::NoChange), active),
        non_activating_pct: pct(inactive, records.len() as f64),
        records,
    }
}

impl StitchReport {
    pub fn write_csv(&self, mut w: impl std::io::Write) -> Result<()> {
        writeln!(w, "source_index,mse_before,mse_after,delta,relative_delta,activation_count,class")?;
        for r in &self.records {
            let class = serde_json::to_value(r.class)?;
            writeln!(
                w,
                "{},{:e},{:e},{:e},{:e},{},{}",
                r.source_index,
                r.mse_before,
                r.mse_after,
                r.delta,
                r.relative_delta,
                r.activation_count,
                class.as_str().unwrap_or_default()
            )?;
        }
        Ok(())
    }

    /// Aggregate block without the per-latent records.
    pub fn aggregate_json(&self) -> serde_json::Value {
        serde_json::json!({
            "tau": self.tau,
            "latents": self.records.len(),
            "novel_pct": self.novel_pct,
            "reconstruction_pct": self.reconstruction_pct,
            "no_change_pct": self.no_change_pct,
            "non_activating_pct": self.non_activating_pct,
        })
    }
}
