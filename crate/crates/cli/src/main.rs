//! `osae`: generate toy data, train ordered and baseline SAEs, and compare them.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use osae_core::checkpoint::{load_checkpoint, Checkpoint};
use osae_core::harness::{self, ExperimentConfig, ReportBundle};
use osae_core::matfile::{load_matrix, save_matrix, DType};
use osae_core::metrics::{MetricsReport, Provenance};
use osae_core::stitching::{stitch_all, DEFAULT_TAU};
use osae_core::trainer::{save_trace_csv, train, TrainConfig};
use osae_core::{save_checkpoint, Dictionary, LossKind, OsaeError};

#[derive(Parser)]
#[command(name = "osae", version, about = "Ordered sparse autoencoder experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Osae,
    Vanilla,
    MsaeFixed,
    MsaeRandom,
}

impl From<Method> for LossKind {
    fn from(m: Method) -> Self {
        match m {
            Method::Osae => LossKind::NestedDropout,
            Method::Vanilla => LossKind::Vanilla,
            Method::MsaeFixed => LossKind::MsaeFixed,
            Method::MsaeRandom => LossKind::MsaeRandom,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write D*, Y*, and X (plus the held-out split) as OSAE-MAT files.
    Gen {
        /// Experiment config JSON (a preset reference or a full description).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Preset name, used when no config is given.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Data seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one model: config JSON mirroring the training settings, data as OSAE-MAT.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score checkpoints against ground truth or against each other.
    Eval {
        /// One checkpoint, or two for a pairwise comparison.
        #[arg(long = "checkpoint", required = true, num_args = 1..=2)]
        checkpoints: Vec<PathBuf>,
        /// Generating dictionary (OSAE-MAT, d x K).
        #[arg(long)]
        against_truth: Option<PathBuf>,
        /// Evaluation inputs (d x N).
        #[arg(long)]
        data: Option<PathBuf>,
        /// True codes of the evaluation inputs (K x N).
        #[arg(long)]
        codes: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Pairwise comparison of every final checkpoint found under a directory.
    Pairs {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Stitch every latent of a larger model into a smaller one.
    Stitch {
        #[arg(long)]
        small: PathBuf,
        #[arg(long)]
        large: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Summarize one or more experiment directories.
    Report {
        #[arg(long = "dir", required = true)]
        dirs: Vec<PathBuf>,
        /// Without a format, print the summary table.
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Generate, train every seed, compare, and write reports.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long, value_enum)]
        method: Option<Method>,
        #[arg(long)]
        out: PathBuf,
        /// Run only this training seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

enum CliError {
    Usage(String),
    Core(OsaeError),
}

impl From<OsaeError> for CliError {
    fn from(e: OsaeError) -> Self {
        match &e {
            OsaeError::Json(j) if j.to_string().contains("unknown field") => CliError::Usage(e.to_string()),
            _ => CliError::Core(e),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        OsaeError::from(e).into()
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn print_error(kind: &str, message: &str) {
    let line = serde_json::json!({ "error": kind, "message": message.lines().next().unwrap_or("") });
    eprintln!("{line}");
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            print_error("usage", e.to_string().trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            print_error("usage", &msg);
            ExitCode::from(2)
        }
        Err(CliError::Core(e)) => {
            print_error(e.kind(), &e.to_string());
            ExitCode::from(1)
        }
    }
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Gen {
            config,
            preset,
            out,
            seed,
        } => gen(experiment(config, preset, None, None)?, &out, seed),
        Command::Train { config, data, out, seed } => train_cmd(&config, &data, &out, seed),
        Command::Eval {
            checkpoints,
            against_truth,
            data,
            codes,
            format,
        } => eval(&checkpoints, against_truth, data, codes, format),
        Command::Pairs { dir, data, format } => pairs(&dir, data, format),
        Command::Stitch {
            small,
            large,
            data,
            tau,
            format,
        } => stitch(&small, &large, &data, tau, format),
        Command::Report { dirs, format } => report(&dirs, format),
        Command::Run {
            config,
            preset,
            method,
            out,
            seed,
        } => run(experiment(config, preset, method, seed)?, &out),
    }
}

fn experiment(
    config: Option<PathBuf>,
    preset: Option<String>,
    method: Option<Method>,
    seed: Option<u64>,
) -> CliResult<ExperimentConfig> {
    let mut file = match (&config, &preset) {
        (Some(path), None) => harness::ExperimentFile::from_json(&fs::read_to_string(path)?)?,
        (None, Some(name)) => harness::ExperimentFile {
            preset: Some(name.clone()),
            ..Default::default()
        },
        _ => return Err(CliError::Usage("give exactly one of --config or --preset".into())),
    };
    if let Some(m) = method {
        if file.preset.is_none() {
            return Err(CliError::Usage("--method applies to presets only".into()));
        }
        file.method = Some(m.into());
    }
    if let Some(s) = seed {
        file.seeds = Some(vec![s]);
    }
    Ok(file.resolve()?)
}

fn gen(mut cfg: ExperimentConfig, out: &Path, seed: Option<u64>) -> CliResult<()> {
    if let Some(s) = seed {
        cfg.data_seed = s;
    }
    let data = harness::make_dataset(&cfg.generator, cfg.data_seed, cfg.n_eval())?;
    fs::create_dir_all(out)?;
    save_matrix(out.join("dstar.mat"), data.dstar.atoms(), DType::F64)?;
    save_matrix(out.join("codes.mat"), &data.codes.codes, DType::F64)?;
    let x = osae_core::synthgen::assemble_data(&data.dstar, &data.codes)?;
    save_matrix(out.join("x.mat"), &x, DType::F64)?;
    save_matrix(out.join("x_train.mat"), &data.x_train, DType::F64)?;
    save_matrix(out.join("x_eval.mat"), &data.x_eval, DType::F64)?;
    save_matrix(out.join("codes_eval.mat"), &data.codes_eval, DType::F64)?;
    let meta = serde_json::json!({
        "generator": cfg.generator,
        "data_seed": cfg.data_seed,
        "n_eval": data.eval_index.len(),
        "dstar_sha256": data.dstar_sha256,
    });
    fs::write(out.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    println!("{}", out.display());
    Ok(())
}

fn train_cmd(config: &Path, data: &Path, out: &Path, seed: Option<u64>) -> CliResult<()> {
    let mut cfg = TrainConfig::from_json(&fs::read_to_string(config)?)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let x = load_matrix(data)?;
    let outcome = train(&cfg, &x, None)?;
    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    for c in &outcome.checkpoints {
        save_checkpoint(c, ckpt_dir.join(format!("step-{:08}.ckpt", c.step)))?;
    }
    save_trace_csv(&outcome.trace, out.join("trace.csv"))?;
    let last = outcome.final_checkpoint();
    println!(
        "{}",
        serde_json::json!({
            "checkpoints": outcome.checkpoints.len(),
            "steps": last.step,
            "final_loss": outcome.trace.last().map(|t| t.loss),
        })
    );
    Ok(())
}

fn emit_reports(reports: &[MetricsReport], format: Format) -> CliResult<()> {
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(reports)?),
        Format::Csv => {
            println!("provenance,metric,value");
            for r in reports {
                let prov = match &r.provenance {
                    Provenance::Pair { seed_a, seed_b } => format!("pair:{seed_a}:{seed_b}"),
                    Provenance::VsGroundTruth { seed } => format!("truth:{seed}"),
                    Provenance::VsInitialization { seed, step } => format!("init:{seed}:{step}"),
                };
                for (name, v) in r.values() {
                    println!("{prov},{name},{v:e}");
                }
            }
        }
    }
    Ok(())
}

fn eval(
    paths: &[PathBuf],
    against_truth: Option<PathBuf>,
    data: Option<PathBuf>,
    codes: Option<PathBuf>,
    format: Format,
) -> CliResult<()> {
    let ckpts: Vec<Checkpoint> = paths.iter().map(load_checkpoint).collect::<Result<_, _>>()?;
    let x = data.as_deref().map(load_matrix).transpose()?;
    let mut reports = Vec::new();
    if let Some(truth) = against_truth {
        let Some(x) = x.as_ref() else {
            return Err(CliError::Usage("--against-truth needs --data for reconstruction".into()));
        };
        let dstar = Dictionary::new(load_matrix(truth)?)?;
        let codes = codes.as_deref().map(load_matrix).transpose()?;
        for c in &ckpts {
            reports.push(harness::evaluate_against_truth(c.seed, &c.model, &dstar, x, codes.as_ref())?);
        }
    } else if codes.is_some() {
        return Err(CliError::Usage("--codes needs --against-truth".into()));
    }
    if let [a, b] = ckpts.as_slice() {
        let provenance = Provenance::Pair {
            seed_a: a.seed,
            seed_b: b.seed,
        };
        reports.push(harness::evaluate_pair(provenance, &a.model, &b.model, x.as_ref())?);
    } else if reports.is_empty() {
        return Err(CliError::Usage(
            "one checkpoint needs --against-truth; pass two checkpoints for a pair".into(),
        ));
    }
    emit_reports(&reports, format)
}

/// The last checkpoint of every run under `dir`: either `*.ckpt` files in
/// `dir` itself or one `checkpoints/` directory per seed subdirectory.
fn final_checkpoints(dir: &Path) -> CliResult<Vec<Checkpoint>> {
    let mut direct: Vec<PathBuf> = Vec::new();
    let mut runs: Vec<PathBuf> = Vec::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    entries.sort();
    for p in entries {
        if p.extension().is_some_and(|e| e == "ckpt") {
            direct.push(p);
        } else if p.join("checkpoints").is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(p.join("checkpoints"))?
                .map(|e| e.map(|e| e.path()))
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .filter(|f| f.extension().is_some_and(|e| e == "ckpt"))
                .collect();
            files.sort();
            if let Some(last) = files.pop() {
                runs.push(last);
            }
        }
    }
    direct.extend(runs);
    Ok(direct.iter().map(load_checkpoint).collect::<Result<_, _>>()?)
}

fn pairs(dir: &Path, data: Option<PathBuf>, format: Format) -> CliResult<()> {
    let ckpts = final_checkpoints(dir)?;
    if ckpts.len() < 2 {
        return Err(CliError::Core(OsaeError::Empty(format!(
            "{} holds {} checkpoint(s); pairs need at least 2",
            dir.display(),
            ckpts.len()
        ))));
    }
    let x = data.as_deref().map(load_matrix).transpose()?;
    let mut reports = Vec::new();
    for i in 0..ckpts.len() {
        for j in i + 1..ckpts.len() {
            let provenance = Provenance::Pair {
                seed_a: ckpts[i].seed,
                seed_b: ckpts[j].seed,
            };
            reports.push(harness::evaluate_pair(provenance, &ckpts[i].model, &ckpts[j].model, x.as_ref())?);
        }
    }
    match format {
        Format::Csv => {
            println!("seed_a,seed_b,stab_dd,ord_dd,stab_z,ord_z");
            let opt = |v: Option<f64>| v.map(|v| format!("{v:e}")).unwrap_or_default();
            for r in &reports {
                if let Provenance::Pair { seed_a, seed_b } = r.provenance {
                    println!(
                        "{seed_a},{seed_b},{},{},{},{}",
                        opt(r.stab_dd),
                        opt(r.ord_dd),
                        opt(r.stab_z),
                        opt(r.ord_z)
                    );
                }
            }
        }
        Format::Json => {
            let stabs: Vec<f64> = reports.iter().filter_map(|r| r.stab_dd).collect();
            let ords: Vec<f64> = reports.iter().filter_map(|r| r.ord_dd).collect();
            let (sm, ss, sc) = harness::summarize(&stabs);
            let (om, os, oc) = harness::summarize(&ords);
            let out = serde_json::json!({
                "pairs": reports,
                "aggregate": {
                    "n": reports.len(),
                    "stab_dd": {"mean": sm, "std": ss, "ci95": sc},
                    "ord_dd": {"mean": om, "std": os, "ci95": oc},
                }
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
    }
    Ok(())
}

fn stitch(small: &Path, large: &Path, data: &Path, tau: f64, format: Format) -> CliResult<()> {
    let small = load_checkpoint(small)?;
    let large = load_checkpoint(large)?;
    let x = load_matrix(data)?;
    let report = stitch_all(&small.model, &large.model, &x, tau)?;
    match format {
        Format::Csv => report.write_csv(std::io::stdout().lock())?,
        Format::Json => println!("{}", serde_json::to_string_pretty(&report.aggregate_json())?),
    }
    Ok(())
}

fn report(dirs: &[PathBuf], format: Option<Format>) -> CliResult<()> {
    let bundles: Vec<ReportBundle> = dirs.iter().map(|d| harness::load_bundle(d)).collect::<Result<_, _>>()?;
    let refs: Vec<&ReportBundle> = bundles.iter().collect();
    match format {
        None => print!("{}", harness::table_text(&refs)),
        Some(Format::Csv) => print!("{}", harness::report_csv(&refs)),
        Some(Format::Json) => {
            let value = if let [one] = bundles.as_slice() {
                serde_json::to_value(one)?
            } else {
                serde_json::to_value(&bundles)?
            };
            println!("{}", serde_json::to_string_pretty(&value)?);
        }
    }
    Ok(())
}

fn run(cfg: ExperimentConfig, out: &Path) -> CliResult<()> {
    let bundle = harness::run_experiment(&cfg)?;
    let dir = harness::write_run_dirs(out, &bundle)?;
    harness::write_bundle(&dir, &bundle)?;
    print!("{}", harness::table_text(&[&bundle]));
    Ok(())
}
