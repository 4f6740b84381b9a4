use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::run::{ReportBundle, RunArtifacts};
use crate::checkpoint::save_checkpoint;
use crate::error::{OsaeError, Result};
use crate::trainer::save_trace_csv;

fn write_runs(dir: &Path, runs: &[RunArtifacts], suffix: &str) -> Result<()> {
    for run in runs {
        let seed_dir = dir.join(format!("{}{suffix}", run.seed));
        let ckpt_dir = seed_dir.join("checkpoints");
        fs::create_dir_all(&ckpt_dir)?;
        for c in &run.checkpoints {
            save_checkpoint(c, ckpt_dir.join(format!("step-{:08}.ckpt", c.step)))?;
        }
        save_trace_csv(&run.trace, seed_dir.join("trace.csv"))?;
    }
    Ok(())
}

/// Write `<out>/<name>/<seed>/{checkpoints,trace.csv}` for every retained run.
/// Cross-run partners go under `<seed>-cross`.
pub fn write_run_dirs(out: &Path, bundle: &ReportBundle) -> Result<PathBuf> {
    let dir = out.join(&bundle.name);
    fs::create_dir_all(&dir)?;
    write_runs(&dir, &bundle.runs, "")?;
    write_runs(&dir, &bundle.cross_artifacts, "-cross")?;
    Ok(dir)
}

/// Write `report.json`, `report.csv`, and `report.txt` into `dir`.
pub fn write_bundle(dir: &Path, bundle: &ReportBundle) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(bundle)?)?;
    fs::write(dir.join("report.csv"), report_csv(&[bundle]))?;
    fs::write(dir.join("report.txt"), table_text(&[bundle]))?;
    Ok(())
}

/// Read a bundle from a `report.json` file or a directory containing one.
pub fn load_bundle(path: &Path) -> Result<ReportBundle> {
    let file = if path.is_dir() { path.join("report.json") } else { path.to_path_buf() };
    if !file.exists() {
        return Err(OsaeError::Empty(format!("no report.json under {}", path.display())));
    }
    let bundle: ReportBundle = serde_json::from_str(&fs::read_to_string(&file)?)?;
    if bundle.seeds.is_empty() {
        return Err(OsaeError::Empty(format!("{} lists no seeds", file.display())));
    }
    Ok(bundle)
}

/// One row per aggregate: `experiment,method,scope,metric,n,mean,std,ci95`.
pub fn report_csv(bundles: &[&ReportBundle]) -> String {
    let mut s = String::from("experiment,method,scope,metric,n,mean,std,ci95\n");
    for b in bundles {
        for a in &b.aggregates {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{:e},{:e},{:e}",
                b.name,
                b.method.slug(),
                a.scope,
                a.metric,
                a.n,
                a.mean,
                a.std,
                a.ci95
            );
        }
    }
    s
}

/// Three significant digits, the way the summary table prints them.
fn sig3(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let decimals = (2 - x.abs().log10().floor() as i32).max(0) as usize;
    format!("{x:.decimals$}")
}

fn cell(b: &ReportBundle, scope: &str, metric: &str) -> String {
    match b.aggregate(scope, metric) {
        Some(a) => format!("{} ({})", sig3(a.mean), sig3(a.std)),
        None => "-".into(),
    }
}

/// Summary table: one row per bundle, `mean (std)` cells.
pub fn table_text(bundles: &[&ReportBundle]) -> String {
    let header = [
        "Model",
        "Stab(D,D')",
        "Stab(D,D*)",
        "Ord(D,D*)",
        "Recon loss (per dim)",
        "Recon loss (per sample)",
    ];
    let rows: Vec<Vec<String>> = bundles
        .iter()
        .map(|b| {
            vec![
                b.method.label().to_string(),
                cell(b, "pairs", "stab_dd"),
                cell(b, "vs_ground_truth", "stab_dstar"),
                cell(b, "vs_ground_truth", "ord_dstar"),
                cell(b, "vs_ground_truth", "recon_mse_per_dim"),
                cell(b, "vs_ground_truth", "recon_mse"),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: Vec<&str>| -> String {
        let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut s = line(header.to_vec());
    s += &line(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(|x| x.as_str()).collect());
    for r in &rows {
        s += &line(r.iter().map(|x| x.as_str()).collect());
    }
    for b in bundles {
        let failed = b.failed_seeds();
        if !failed.is_empty() {
            let _ = writeln!(s, "{}: failed seeds excluded: {failed:?}", b.name);
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_significant_digits() {
        assert_eq!(sig3(0.664), "0.664");
        assert_eq!(sig3(0.0191), "0.0191");
        assert_eq!(sig3(0.000746), "0.000746");
        assert_eq!(sig3(12.345), "12.3");
        assert_eq!(sig3(-0.0162), "-0.0162");
    }
}
