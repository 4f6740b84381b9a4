use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ComparisonMode, ExperimentConfig, GeneratorParams};
use super::curves::{default_prefix_grid, prefix_curves, track_over_checkpoints, CurveRow};
use crate::checkpoint::Checkpoint;
use crate::error::Result;
use crate::matfile::{DType, Tensor};
use crate::metrics::{fifr, recon_mse, stab_ord, stab_z, MetricsReport, Provenance};
use crate::rng::{stream, Purpose};
use crate::sae::{encode, top_m, LossKind, SaeModel};
use crate::synthgen::{assemble_data, gen_codes, gen_dictionary, zipf_prior, CodeMatrix, Dictionary};
use crate::trainer::{train, TraceRow};

/// Code seed offset for the second dataset of cross-run comparisons.
const CROSS_RUN_CODE_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Generated data with its held-out split.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dstar: Dictionary,
    pub codes: CodeMatrix,
    pub x_train: DMatrix<f64>,
    pub x_eval: DMatrix<f64>,
    /// Ground-truth codes of the held-out columns.
    pub codes_eval: DMatrix<f64>,
    /// Column indices (into the full data) of the held-out split, ascending.
    pub eval_index: Vec<usize>,
    /// Hex SHA-256 of the dictionary in OSAE-MAT f64 encoding.
    pub dstar_sha256: String,
}

pub fn dictionary_sha256(dict: &Dictionary) -> String {
    let bytes = Tensor::from_matrix(dict.atoms(), DType::F64).encode();
    hex::encode(Sha256::digest(bytes))
}

fn build_dataset(gen: &GeneratorParams, dstar: Dictionary, code_seed: u64, split_seed: u64, n_eval: usize) -> Result<Dataset> {
    let prior = zipf_prior(gen.k, gen.alpha)?;
    let codes = gen_codes(&prior, gen.m, gen.n, gen.nonneg, code_seed)?;
    let x = assemble_data(&dstar, &codes)?;
    let mut perm: Vec<usize> = (0..gen.n).collect();
    perm.shuffle(&mut stream(split_seed, Purpose::Split, 0));
    let mut eval_index = perm[..n_eval].to_vec();
    let mut train_index = perm[n_eval..].to_vec();
    eval_index.sort_unstable();
    train_index.sort_unstable();
    let x_train = x.select_columns(&train_index);
    let x_eval = x.select_columns(&eval_index);
    let codes_eval = codes.codes.select_columns(&eval_index);
    Ok(Dataset {
        dstar_sha256: dictionary_sha256(&dstar),
        dstar,
        codes,
        x_train,
        x_eval,
        codes_eval,
        eval_index,
    })
}

/// Draw `D*`, `Y*`, and `X` from `data_seed` and hold out `n_eval` columns.
pub fn make_dataset(gen: &GeneratorParams, data_seed: u64, n_eval: usize) -> Result<Dataset> {
    gen.validate()?;
    if n_eval == 0 || n_eval >= gen.n {
        return Err(crate::error::invalid(format!("held-out size {n_eval} must lie in 1..{}", gen.n)));
    }
    let dstar = gen_dictionary(gen.d, gen.k, data_seed)?;
    build_dataset(gen, dstar, data_seed, data_seed, n_eval)
}

/// Checkpoints and loss trace of one successful training run.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub seed: u64,
    pub checkpoints: Vec<Checkpoint>,
    pub trace: Vec<TraceRow>,
}

impl RunArtifacts {
    pub fn final_model(&self) -> &SaeModel {
        &self.checkpoints.last().expect("runs keep at least one checkpoint").model
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedStatus {
    pub seed: u64,
    pub ok: bool,
    pub error: Option<String>,
    pub steps: u64,
    pub final_loss: Option<f64>,
}

/// Mean, sample standard deviation, and 95% half-width over one comparison set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub scope: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    /// `1.96 * std / sqrt(n)`.
    pub ci95: f64,
}

/// One point of a metric-over-checkpoints series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRow {
    pub mode: ComparisonMode,
    pub seed_a: u64,
    pub seed_b: u64,
    pub step: u64,
    pub p: usize,
    pub stab: f64,
    pub ord: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportBundle {
    pub name: String,
    pub method: LossKind,
    pub config: ExperimentConfig,
    pub dstar_sha256: String,
    pub seeds: Vec<SeedStatus>,
    /// One report per successful seed against the generating dictionary.
    pub truth: Vec<MetricsReport>,
    /// One report per pair of successful seeds on the same data.
    pub pairs: Vec<MetricsReport>,
    /// Same seed, different dataset.
    pub cross_runs: Vec<MetricsReport>,
    /// Final state against the step-0 initialization.
    pub vs_init: Vec<MetricsReport>,
    pub aggregates: Vec<Aggregate>,
    pub curves: Vec<CurveRow>,
    pub tracks: Vec<TrackRow>,
    pub notes: Vec<String>,
    #[serde(skip)]
    pub runs: Vec<RunArtifacts>,
    #[serde(skip)]
    pub cross_artifacts: Vec<RunArtifacts>,
    #[serde(skip)]
    pub dstar: Option<Dictionary>,
}

impl ReportBundle {
    pub fn aggregate(&self, scope: &str, metric: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.scope == scope && a.metric == metric)
    }

    pub fn failed_seeds(&self) -> Vec<u64> {
        self.seeds.iter().filter(|s| !s.ok).map(|s| s.seed).collect()
    }

    /// Every number the bundle reports, labeled, in a fixed order.
    pub fn numeric_content(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for (scope, reports) in [
            ("truth", &self.truth),
            ("pairs", &self.pairs),
            ("cross_runs", &self.cross_runs),
            ("vs_init", &self.vs_init),
        ] {
            for (i, r) in reports.iter().enumerate() {
                for (name, v) in r.values() {
                    out.push((format!("{scope}[{i}].{name}"), v));
                }
            }
        }
        for a in &self.aggregates {
            let key = format!("{}.{}", a.scope, a.metric);
            out.push((format!("{key}.mean"), a.mean));
            out.push((format!("{key}.std"), a.std));
            out.push((format!("{key}.ci95"), a.ci95));
        }
        for c in &self.curves {
            out.push((format!("curve.{}.{}.stab", c.scope, c.p), c.stab_mean));
            if let Some(o) = c.ord_mean {
                out.push((format!("curve.{}.{}.ord", c.scope, c.p), o));
            }
        }
        for t in &self.tracks {
            out.push((format!("track.{}.{}.{}.stab", t.seed_a, t.step, t.p), t.stab));
        }
        out
    }
}

/// `(mean, sample std, 1.96 * std / sqrt(n))`; std is 0 for a single value.
pub fn summarize(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let std = var.sqrt();
    (mean, std, 1.96 * std / (n as f64).sqrt())
}

fn aggregate_reports(scope: &str, reports: &[MetricsReport], out: &mut Vec<Aggregate>) {
    let mut by_metric: BTreeMap<&'static str, Vec<f64>> = BTreeMap::new();
    let mut order: Vec<&'static str> = Vec::new();
    for r in reports {
        for (name, v) in r.values() {
            if !by_metric.contains_key(name) {
                order.push(name);
            }
            by_metric.entry(name).or_default().push(v);
        }
    }
    for name in order {
        let values = &by_metric[name];
        let (mean, std, ci95) = summarize(values);
        out.push(Aggregate {
            scope: scope.into(),
            metric: name.into(),
            n: values.len(),
            mean,
            std,
            ci95,
        });
    }
}

fn codes_of(model: &SaeModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(top_m(&encode(model, x)?, model.m))
}

/// Compare one model with the generating dictionary. Reconstruction is always
/// measured on `x_eval`; dictionary, activation, and FIFR metrics need equal
/// sizes, and the activation ones also need the true codes of `x_eval`.
pub fn evaluate_against_truth(
    seed: u64,
    model: &SaeModel,
    dstar: &Dictionary,
    x_eval: &DMatrix<f64>,
    codes_eval: Option<&DMatrix<f64>>,
) -> Result<MetricsReport> {
    let mut r = MetricsReport::empty(Provenance::VsGroundTruth { seed });
    let mse = recon_mse(model, x_eval, model.m)?;
    r.recon_mse = Some(mse);
    r.recon_mse_per_dim = Some(mse / model.d() as f64);
    if model.k() != dstar.len() {
        return Ok(r);
    }
    let (s, o) = stab_ord(&model.decoder, dstar)?;
    r.stab_dstar = Some(s);
    r.ord_dstar = o;
    if let Some(truth) = codes_eval {
        let codes = codes_of(model, x_eval)?;
        let signed = stab_z(&codes, truth, false)?;
        let abs = stab_z(&codes, truth, true)?;
        r.stab_z = Some(signed.stab);
        r.ord_z = signed.ord;
        r.stab_z_abs = Some(abs.stab);
        r.ord_z_abs = abs.ord;
        r.zero_variance_rows = signed.zero_variance_rows;
        r.fifr = fifr(dstar.atoms(), truth, model.decoder.atoms(), &codes).ok();
    }
    Ok(r)
}

/// Compare two models' dictionaries and, when `x_eval` is given, their
/// activation streams on it.
pub fn evaluate_pair(
    provenance: Provenance,
    a: &SaeModel,
    b: &SaeModel,
    x_eval: Option<&DMatrix<f64>>,
) -> Result<MetricsReport> {
    let codes = match x_eval {
        Some(x) => Some((codes_of(a, x)?, codes_of(b, x)?)),
        None => None,
    };
    pair_report(provenance, a, b, codes.as_ref().map(|(ca, cb)| (ca, cb)))
}

fn pair_report(
    provenance: Provenance,
    a: &SaeModel,
    b: &SaeModel,
    codes: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
) -> Result<MetricsReport> {
    let mut r = MetricsReport::empty(provenance);
    let (s, o) = stab_ord(&a.decoder, &b.decoder)?;
    r.stab_dd = Some(s);
    r.ord_dd = o;
    if let Some((ca, cb)) = codes {
        let signed = stab_z(ca, cb, false)?;
        let abs = stab_z(ca, cb, true)?;
        r.stab_z = Some(signed.stab);
        r.ord_z = signed.ord;
        r.stab_z_abs = Some(abs.stab);
        r.ord_z_abs = abs.ord;
        r.zero_variance_rows = signed.zero_variance_rows;
    }
    Ok(r)
}

fn train_seeds(
    cfg: &ExperimentConfig,
    x: &DMatrix<f64>,
    label: &str,
    notes: &mut Vec<String>,
) -> (Vec<SeedStatus>, Vec<RunArtifacts>) {
    let results: Vec<_> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut t = cfg.train.clone();
            t.seed = seed;
            (seed, train(&t, x, None))
        })
        .collect();
    let mut statuses = Vec::new();
    let mut runs = Vec::new();
    for (seed, result) in results {
        match result {
            Ok(out) => {
                statuses.push(SeedStatus {
                    seed,
                    ok: true,
                    error: None,
                    steps: out.final_checkpoint().step,
                    final_loss: out.trace.last().map(|t| t.loss),
                });
                runs.push(RunArtifacts {
                    seed,
                    checkpoints: out.checkpoints,
                    trace: out.trace,
                });
            }
            Err(e) => {
                log::warn!("{label} seed {seed} failed: {e}");
                notes.push(format!("{label} seed {seed} failed and is excluded from aggregates: {e}"));
                statuses.push(SeedStatus {
                    seed,
                    ok: false,
                    error: Some(e.to_string()),
                    steps: 0,
                    final_loss: None,
                });
            }
        }
    }
    (statuses, runs)
}

/// Generate data once, train every seed, and compute the requested comparisons.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ReportBundle> {
    cfg.validate()?;
    let data = make_dataset(&cfg.generator, cfg.data_seed, cfg.n_eval())?;
    let mut notes = Vec::new();
    let (seeds, runs) = train_seeds(cfg, &data.x_train, "training", &mut notes);
    let grid = cfg.prefix_grid.clone().unwrap_or_else(|| default_prefix_grid(cfg.train.k));

    let codes: Vec<DMatrix<f64>> = if cfg.wants(ComparisonMode::SameDatasetPairs) {
        runs.par_iter()
            .map(|r| codes_of(r.final_model(), &data.x_eval))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    let mut truth = Vec::new();
    if cfg.wants(ComparisonMode::VsGroundTruth) {
        if cfg.train.k != data.dstar.len() {
            notes.push(format!(
                "model K = {} differs from generator K = {}; only reconstruction is compared to ground truth",
                cfg.train.k,
                data.dstar.len()
            ));
        }
        truth = runs
            .par_iter()
            .map(|r| evaluate_against_truth(r.seed, r.final_model(), &data.dstar, &data.x_eval, Some(&data.codes_eval)))
            .collect::<Result<_>>()?;
    }

    let mut pairs = Vec::new();
    if cfg.wants(ComparisonMode::SameDatasetPairs) {
        let index: Vec<(usize, usize)> = (0..runs.len())
            .flat_map(|i| (i + 1..runs.len()).map(move |j| (i, j)))
            .collect();
        pairs = index
            .par_iter()
            .map(|&(i, j)| {
                let provenance = Provenance::Pair {
                    seed_a: runs[i].seed,
                    seed_b: runs[j].seed,
                };
                pair_report(provenance, runs[i].final_model(), runs[j].final_model(), Some((&codes[i], &codes[j])))
            })
            .collect::<Result<_>>()?;
    }

    let mut tracks = Vec::new();
    let mut cross_runs = Vec::new();
    let mut cross_artifacts = Vec::new();
    if cfg.wants(ComparisonMode::CrossRunPairs) {
        let other = build_dataset(
            &cfg.generator,
            data.dstar.clone(),
            cfg.data_seed ^ CROSS_RUN_CODE_SALT,
            cfg.data_seed,
            cfg.n_eval(),
        )?;
        let (_, other_runs) = train_seeds(cfg, &other.x_train, "cross-run training", &mut notes);
        for b in &other_runs {
            let Some(a) = runs.iter().find(|a| a.seed == b.seed) else {
                continue;
            };
            let provenance = Provenance::Pair {
                seed_a: a.seed,
                seed_b: b.seed,
            };
            cross_runs.push(evaluate_pair(provenance, a.final_model(), b.final_model(), Some(&data.x_eval))?);
            let track = track_over_checkpoints(&a.checkpoints, Some(&b.checkpoints), &grid)?;
            if !track.dropped_steps.is_empty() {
                notes.push(format!(
                    "seed {}: {} checkpoint steps not shared by both runs were skipped",
                    a.seed,
                    track.dropped_steps.len()
                ));
            }
            tracks.extend(track.rows(ComparisonMode::CrossRunPairs, a.seed, b.seed));
        }
        cross_artifacts = other_runs;
    }

    let mut vs_init = Vec::new();
    if cfg.wants(ComparisonMode::VsInitialization) {
        for r in &runs {
            let init = &r.checkpoints[0];
            let last = r.checkpoints.last().expect("nonempty");
            let mut rep = MetricsReport::empty(Provenance::VsInitialization {
                seed: r.seed,
                step: last.step,
            });
            let (s, o) = stab_ord(&last.model.decoder, &init.model.decoder)?;
            rep.stab_dd = Some(s);
            rep.ord_dd = o;
            vs_init.push(rep);
            let track = track_over_checkpoints(&r.checkpoints, None, &grid)?;
            tracks.extend(track.rows(ComparisonMode::VsInitialization, r.seed, r.seed));
        }
    }

    let mut aggregates = Vec::new();
    aggregate_reports("vs_ground_truth", &truth, &mut aggregates);
    aggregate_reports("pairs", &pairs, &mut aggregates);
    aggregate_reports("cross_run", &cross_runs, &mut aggregates);
    aggregate_reports("vs_initialization", &vs_init, &mut aggregates);

    let mut bundle = ReportBundle {
        name: cfg.name.clone(),
        method: cfg.train.loss.kind,
        config: cfg.clone(),
        dstar_sha256: data.dstar_sha256.clone(),
        seeds,
        truth,
        pairs,
        cross_runs,
        vs_init,
        aggregates,
        curves: Vec::new(),
        tracks,
        notes,
        runs,
        cross_artifacts,
        dstar: Some(data.dstar),
    };
    if !bundle.runs.is_empty() {
        bundle.curves = prefix_curves(&bundle, &grid)?;
    }
    Ok(bundle)
}
