use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::sae::{Activation, LossKind};
use crate::trainer::{LossConfig, PrefixSpec, SweepConfig, TrainConfig};

/// Parameters of the synthetic generator `X = D* Y*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorParams {
    pub d: usize,
    pub k: usize,
    pub m: usize,
    pub n: usize,
    /// Zipf exponent of the support prior.
    pub alpha: f64,
    #[serde(default = "default_true")]
    pub nonneg: bool,
}

fn default_true() -> bool {
    true
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.k == 0 {
            return Err(invalid("generator needs d >= 1 and K >= 1"));
        }
        if self.m == 0 || self.m > self.k {
            return Err(invalid(format!("generator needs 1 <= m <= K, got m = {}, K = {}", self.m, self.k)));
        }
        if self.n < 2 {
            return Err(invalid("generator needs at least 2 samples"));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(invalid(format!("alpha = {} must be finite and >= 0", self.alpha)));
        }
        Ok(())
    }
}

/// What an experiment compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparisonMode {
    /// Every pair of seeds trained on the same data.
    SameDatasetPairs,
    /// Every seed against the generating dictionary and codes.
    VsGroundTruth,
    /// Each seed against the same seed trained on a second dataset drawn with
    /// the same dictionary but fresh codes.
    CrossRunPairs,
    /// Each seed's checkpoints against its own step-0 initialization.
    VsInitialization,
}

fn default_eval_fraction() -> f64 {
    0.05
}

fn default_comparisons() -> Vec<ComparisonMode> {
    vec![ComparisonMode::VsGroundTruth, ComparisonMode::SameDatasetPairs]
}

/// A fully resolved experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub generator: GeneratorParams,
    /// Training settings shared by all seeds; the `seed` field is replaced per run.
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    /// Seed for the dictionary, codes, and the held-out split.
    #[serde(default)]
    pub data_seed: u64,
    #[serde(default = "default_eval_fraction")]
    pub eval_fraction: f64,
    /// Prefix lengths for truncated curves; defaults to powers of two plus K.
    #[serde(default)]
    pub prefix_grid: Option<Vec<usize>>,
    #[serde(default = "default_comparisons")]
    pub comparisons: Vec<ComparisonMode>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(invalid(format!("experiment name {:?} is not a plain directory name", self.name)));
        }
        self.generator.validate()?;
        self.train.validate()?;
        if let Some(d) = self.train.input_dim.filter(|&d| d != self.generator.d) {
            return Err(invalid(format!("train.input_dim = {d} but the generator has d = {}", self.generator.d)));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seed list is empty"));
        }
        let distinct: HashSet<_> = self.seeds.iter().collect();
        if distinct.len() != self.seeds.len() {
            return Err(invalid("seed list has duplicates"));
        }
        if !(self.eval_fraction > 0.0 && self.eval_fraction <= 0.5) {
            return Err(invalid(format!("eval_fraction = {} must lie in (0, 0.5]", self.eval_fraction)));
        }
        let n_eval = self.n_eval();
        if n_eval >= self.generator.n {
            return Err(invalid("held-out split leaves no training data"));
        }
        if let Some(grid) = &self.prefix_grid {
            if let Some(&p) = grid.iter().find(|&&p| p == 0 || p > self.train.k) {
                return Err(invalid(format!("prefix {p} outside 1..={}", self.train.k)));
            }
        }
        if self.comparisons.is_empty() {
            return Err(invalid("no comparison modes requested"));
        }
        Ok(())
    }

    /// Size of the held-out split.
    pub fn n_eval(&self) -> usize {
        ((self.generator.n as f64 * self.eval_fraction).round() as usize).max(1)
    }

    pub fn wants(&self, mode: ComparisonMode) -> bool {
        self.comparisons.contains(&mode)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        ExperimentFile::from_json(text)?.resolve()
    }
}

/// The on-disk experiment config: either a preset with optional overrides or
/// a complete description.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub preset: Option<String>,
    /// Loss family for a preset; defaults to the ordered objective.
    pub method: Option<LossKind>,
    /// Zipf exponent for presets that sweep it.
    pub alpha: Option<f64>,
    pub name: Option<String>,
    pub generator: Option<GeneratorParams>,
    pub train: Option<TrainConfig>,
    pub seeds: Option<Vec<u64>>,
    pub data_seed: Option<u64>,
    pub eval_fraction: Option<f64>,
    pub prefix_grid: Option<Vec<usize>>,
    pub comparisons: Option<Vec<ComparisonMode>>,
}

impl ExperimentFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn resolve(self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.preset {
            Some(name) => preset(name, self.method.unwrap_or(LossKind::NestedDropout), self.alpha)?,
            None => {
                let (Some(generator), Some(train), Some(seeds)) = (self.generator.clone(), self.train.clone(), self.seeds.clone())
                else {
                    return Err(invalid("config without a preset needs generator, train, and seeds"));
                };
                if self.method.is_some() || self.alpha.is_some() {
                    return Err(invalid("method and alpha only apply to presets"));
                }
                ExperimentConfig {
                    name: self.name.clone().unwrap_or_else(|| "experiment".into()),
                    generator,
                    train,
                    seeds,
                    data_seed: 0,
                    eval_fraction: default_eval_fraction(),
                    prefix_grid: None,
                    comparisons: default_comparisons(),
                }
            }
        };
        if let Some(v) = self.name {
            cfg.name = v;
        }
        if let Some(v) = self.generator {
            cfg.generator = v;
        }
        if let Some(v) = self.train {
            cfg.train = v;
        }
        if let Some(v) = self.seeds {
            cfg.seeds = v;
        }
        if let Some(v) = self.data_seed {
            cfg.data_seed = v;
        }
        if let Some(v) = self.eval_fraction {
            cfg.eval_fraction = v;
        }
        if let Some(v) = self.prefix_grid {
            cfg.prefix_grid = Some(v);
        }
        if let Some(v) = self.comparisons {
            cfg.comparisons = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub const PRESET_NAMES: &[&str] = &["toy", "toy-ci", "size-10-2", "size-30-3", "size-50-5", "zipfian"];

/// Number of nested groups used by the Matryoshka baselines on the toy model.
const TOY_GROUPS: usize = 5;

/// Loss settings for one method on a toy-style preset.
pub fn method_loss(kind: LossKind) -> LossConfig {
    let prefix = match kind {
        LossKind::Vanilla | LossKind::NestedDropout => PrefixSpec::Uniform,
        LossKind::MsaeFixed | LossKind::MsaeRandom => PrefixSpec::Groups { count: TOY_GROUPS },
    };
    LossConfig {
        kind,
        prefix,
        // one group sampled per step
        random_draws: 1,
    }
}

fn toy_train(k: usize, m: usize, kind: LossKind) -> TrainConfig {
    let mut t = TrainConfig::new(k, m, method_loss(kind));
    t.epochs = 40;
    t.batch_size = 256;
    t.learning_rate = 1e-3;
    t.k_init = k;
    // lowest validation reconstruction for every method over
    // lr {1e-3, 3e-4} x warmup {5, 10, 15, 20, 25}
    t.warmup_epochs = 15;
    t.sweep = SweepConfig {
        enabled: true,
        burn_in_epochs: 20,
        freeze_period: 1,
    };
    t
}

fn zipfian(kind: LossKind, alpha: f64) -> ExperimentConfig {
    let (k, m) = (32, 3);
    let prefix = PrefixSpec::Zipf { alpha };
    let loss = match kind {
        LossKind::Vanilla => LossConfig {
            kind,
            prefix: PrefixSpec::Uniform,
            random_draws: 1,
        },
        LossKind::NestedDropout => LossConfig {
            kind,
            prefix,
            random_draws: 1,
        },
        LossKind::MsaeFixed => LossConfig {
            kind,
            prefix: PrefixSpec::ZipfGroups { count: 8, alpha },
            random_draws: 1,
        },
        LossKind::MsaeRandom => LossConfig {
            kind,
            prefix,
            random_draws: 4,
        },
    };
    let mut train = TrainConfig::new(k, m, loss);
    train.learning_rate = 1e-4;
    train.l1_coeff = 0.01;
    train.batch_size = 256;
    train.max_steps = Some(30_000);
    // enough passes for the step budget to bind
    train.epochs = 1_000;
    train.k_init = k;
    train.warmup_epochs = 0;
    ExperimentConfig {
        name: format!("zipfian-{}-a{alpha}", kind.slug()),
        generator: GeneratorParams {
            d: 16,
            k,
            m,
            n: 50_000,
            alpha,
            nonneg: true,
        },
        train,
        seeds: (1..=5).collect(),
        data_seed: 0,
        eval_fraction: default_eval_fraction(),
        prefix_grid: None,
        comparisons: default_comparisons(),
    }
}

/// Build a named preset for one loss family. `alpha` overrides the Zipf
/// exponent of the data (and, for `zipfian`, of the prefix weights).
pub fn preset(name: &str, kind: LossKind, alpha: Option<f64>) -> Result<ExperimentConfig> {
    if name == "zipfian" {
        let cfg = zipfian(kind, alpha.unwrap_or(0.1));
        cfg.validate()?;
        return Ok(cfg);
    }
    let (d, k, m, n, seeds) = match name {
        "toy" => (80, 100, 5, 100_000, 10),
        "toy-ci" => (80, 100, 5, 20_000, 3),
        "size-10-2" => (80, 10, 2, 100_000, 10),
        "size-30-3" => (80, 30, 3, 100_000, 10),
        "size-50-5" => (80, 50, 5, 100_000, 10),
        other => {
            return Err(invalid(format!("unknown preset {other:?}; known: {}", PRESET_NAMES.join(", "))));
        }
    };
    let mut train = toy_train(k, m, kind);
    if name == "toy-ci" {
        // a fifth of the data, so more passes; schedules stretch with them
        train.epochs = 100;
        train.warmup_epochs = 37;
        train.sweep.burn_in_epochs = 50;
    }
    let cfg = ExperimentConfig {
        name: format!("{name}-{}", kind.slug()),
        generator: GeneratorParams {
            d,
            k,
            m,
            n,
            alpha: alpha.unwrap_or(1.2),
            nonneg: true,
        },
        train: TrainConfig {
            activation: Activation::Relu,
            ..train
        },
        seeds: (1..=seeds).collect(),
        data_seed: 0,
        eval_fraction: default_eval_fraction(),
        prefix_grid: None,
        comparisons: default_comparisons(),
    };
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_resolve() {
        for name in PRESET_NAMES {
            for kind in [LossKind::NestedDropout, LossKind::Vanilla, LossKind::MsaeFixed, LossKind::MsaeRandom] {
                preset(name, kind, None).unwrap();
            }
        }
        let toy = preset("toy", LossKind::NestedDropout, None).unwrap();
        assert_eq!((toy.generator.d, toy.generator.k, toy.generator.m, toy.generator.n), (80, 100, 5, 100_000));
        assert_eq!(toy.seeds.len(), 10);
        assert!(toy.train.sweep.enabled);
        assert!(toy.train.warmup_epochs > 0);
        let z = preset("zipfian", LossKind::MsaeRandom, Some(0.5)).unwrap();
        assert_eq!((z.generator.d, z.train.k, z.train.m), (16, 32, 3));
        assert_eq!(z.train.loss.random_draws, 4);
        assert_eq!(z.train.max_steps, Some(30_000));
        assert!(preset("nope", LossKind::Vanilla, None).is_err());
    }

    #[test]
    fn file_overrides_and_rejects_typos() {
        let cfg = ExperimentConfig::from_json(r#"{"preset": "toy-ci", "method": "vanilla", "seeds": [7]}"#).unwrap();
        assert_eq!(cfg.seeds, vec![7]);
        assert_eq!(cfg.train.loss.kind, LossKind::Vanilla);
        assert!(ExperimentConfig::from_json(r#"{"preset": "toy", "seedz": [1]}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"preset": "toy", "seeds": []}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"preset": "toy", "seeds": [1, 1]}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"preset": "toy", "eval_fraction": 0.7}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"seeds": [1]}"#).is_err());
    }

    #[test]
    fn full_config_round_trips() {
        let cfg = preset("size-10-2", LossKind::MsaeFixed, None).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let file: ExperimentFile = serde_json::from_str(&format!(
            r#"{{"name": {:?}, "generator": {}, "train": {}, "seeds": {}}}"#,
            cfg.name,
            serde_json::to_string(&cfg.generator).unwrap(),
            serde_json::to_string(&cfg.train).unwrap(),
            serde_json::to_string(&cfg.seeds).unwrap()
        ))
        .unwrap();
        assert_eq!(file.resolve().unwrap(), cfg);
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
