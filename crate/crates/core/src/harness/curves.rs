use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::config::ComparisonMode;
use super::run::{summarize, ReportBundle, TrackRow};
use crate::checkpoint::Checkpoint;
use crate::error::{invalid, OsaeError, Result};
use crate::metrics::stab_ord;
use crate::synthgen::Dictionary;

/// Powers of two from 2 below `k`, then `k` itself.
pub fn default_prefix_grid(k: usize) -> Vec<usize> {
    let mut grid = Vec::new();
    let mut p = 2;
    while p < k {
        grid.push(p);
        p *= 2;
    }
    grid.push(k);
    grid
}

/// Truncated metrics at one prefix length. `ord` is `None` below two atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub p: usize,
    pub stab: f64,
    pub ord: Option<f64>,
}

/// Stab and Ord restricted to the first `p` atoms of both dictionaries.
pub fn prefix_curve(a: &Dictionary, b: &Dictionary, grid: &[usize]) -> Result<Vec<CurvePoint>> {
    let limit = a.len().min(b.len());
    grid.iter()
        .map(|&p| {
            if p == 0 || p > limit {
                return Err(invalid(format!("prefix {p} outside 1..={limit}")));
            }
            let (stab, ord) = stab_ord(&a.prefix(p)?, &b.prefix(p)?)?;
            if ord.is_none() {
                log::debug!("ord skipped at prefix {p}: needs at least two atoms");
            }
            Ok(CurvePoint { p, stab, ord })
        })
        .collect()
}

/// Aggregated curve over a comparison set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub scope: String,
    pub p: usize,
    pub n: usize,
    pub stab_mean: f64,
    pub stab_std: f64,
    pub stab_ci95: f64,
    pub ord_mean: Option<f64>,
    pub ord_std: Option<f64>,
}

fn aggregate_curves(scope: &str, curves: &[Vec<CurvePoint>], grid: &[usize]) -> Vec<CurveRow> {
    if curves.is_empty() {
        return Vec::new();
    }
    grid.iter()
        .enumerate()
        .map(|(i, &p)| {
            let stabs: Vec<f64> = curves.iter().map(|c| c[i].stab).collect();
            let ords: Vec<f64> = curves.iter().filter_map(|c| c[i].ord).collect();
            let (stab_mean, stab_std, stab_ci95) = summarize(&stabs);
            let (ord_mean, ord_std) = if ords.is_empty() {
                (None, None)
            } else {
                let (m, s, _) = summarize(&ords);
                (Some(m), Some(s))
            };
            CurveRow {
                scope: scope.into(),
                p,
                n: curves.len(),
                stab_mean,
                stab_std,
                stab_ci95,
                ord_mean,
                ord_std,
            }
        })
        .collect()
}

/// Prefix curves for every seed pair (scope `pairs`) and, when the generating
/// dictionary is available and the sizes agree, for every seed against it
/// (scope `vs_ground_truth`).
pub fn prefix_curves(bundle: &ReportBundle, grid: &[usize]) -> Result<Vec<CurveRow>> {
    let runs = &bundle.runs;
    if runs.is_empty() {
        return Err(OsaeError::Empty("bundle holds no trained models".into()));
    }
    let mut pair_curves = Vec::new();
    for i in 0..runs.len() {
        for j in i + 1..runs.len() {
            pair_curves.push(prefix_curve(&runs[i].final_model().decoder, &runs[j].final_model().decoder, grid)?);
        }
    }
    let mut rows = aggregate_curves("pairs", &pair_curves, grid);
    if let Some(dstar) = bundle.dstar.as_ref().filter(|d| d.len() == runs[0].final_model().k()) {
        let truth: Vec<_> = runs
            .iter()
            .map(|r| prefix_curve(&r.final_model().decoder, dstar, grid))
            .collect::<Result<_>>()?;
        rows.extend(aggregate_curves("vs_ground_truth", &truth, grid));
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackStep {
    pub step: u64,
    pub curve: Vec<CurvePoint>,
}

/// Prefix curves at each shared checkpoint step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub steps: Vec<TrackStep>,
    /// Steps present in only one of the two sequences.
    pub dropped_steps: Vec<u64>,
}

impl Track {
    pub fn rows(&self, mode: ComparisonMode, seed_a: u64, seed_b: u64) -> Vec<TrackRow> {
        self.steps
            .iter()
            .flat_map(|s| {
                s.curve.iter().map(move |c| TrackRow {
                    mode,
                    seed_a,
                    seed_b,
                    step: s.step,
                    p: c.p,
                    stab: c.stab,
                    ord: c.ord,
                })
            })
            .collect()
    }
}

/// Compare two checkpoint sequences step by step, or with `b = None`, each
/// checkpoint of `a` against `a`'s first (initialization) checkpoint.
pub fn track_over_checkpoints(a: &[Checkpoint], b: Option<&[Checkpoint]>, grid: &[usize]) -> Result<Track> {
    let first = a.first().ok_or_else(|| OsaeError::Empty("checkpoint sequence is empty".into()))?;
    let Some(b) = b else {
        if first.step != 0 {
            log::warn!("reference checkpoint is at step {}, not an initialization", first.step);
        }
        let steps = a
            .iter()
            .map(|c| {
                Ok(TrackStep {
                    step: c.step,
                    curve: prefix_curve(&c.model.decoder, &first.model.decoder, grid)?,
                })
            })
            .collect::<Result<_>>()?;
        return Ok(Track {
            steps,
            dropped_steps: Vec::new(),
        });
    };
    let sa: BTreeSet<u64> = a.iter().map(|c| c.step).collect();
    let sb: BTreeSet<u64> = b.iter().map(|c| c.step).collect();
    let dropped: Vec<u64> = sa.symmetric_difference(&sb).copied().collect();
    if !dropped.is_empty() {
        log::warn!("checkpoint step grids differ; comparing {} shared steps", sa.intersection(&sb).count());
    }
    let mut steps = Vec::new();
    for ca in a.iter().filter(|c| sb.contains(&c.step)) {
        let cb = b.iter().find(|c| c.step == ca.step).expect("step is shared");
        steps.push(TrackStep {
            step: ca.step,
            curve: prefix_curve(&ca.model.decoder, &cb.model.decoder, grid)?,
        });
    }
    Ok(Track {
        steps,
        dropped_steps: dropped,
    })
}
