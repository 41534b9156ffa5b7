//! `report`: best value per compute budget across completed runs.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use replaylab_core::report::{
    budget_table, read_curve, write_budget_csv, write_budget_table, RunCurve,
};

use crate::config::{key, Config, KeySpec};
use crate::{write_file, CliError, Stats, MANIFEST_FILE};

pub const SCHEMA: &[KeySpec] = &[
    key(
        "curve",
        "curve_s0.csv",
        "curve file read from every run directory",
    ),
    key("metric", "mean_reward", "column compared across runs"),
    key("seed", "0", "unused; accepted for uniform flags"),
    key("seeds", "1", "unused; accepted for uniform flags"),
];

fn run_name(dir: &Path) -> String {
    dir.file_name().map_or_else(
        || dir.display().to_string(),
        |n| n.to_string_lossy().into_owned(),
    )
}

pub fn run(cfg: &Config, inputs: &[PathBuf], out: &Path) -> Result<Stats, CliError> {
    if inputs.is_empty() {
        return Err(CliError::Invalid(
            "report needs at least one run directory".into(),
        ));
    }
    let mut curves: Vec<RunCurve> = Vec::with_capacity(inputs.len());
    for dir in inputs {
        if !dir.join(MANIFEST_FILE).exists() {
            return Err(CliError::Failed(format!(
                "{} is not a completed run",
                dir.display()
            )));
        }
        let path = dir.join(cfg.str("curve"));
        let file = fs::File::open(&path).map_err(|e| CliError::io(&path, e))?;
        curves.push(read_curve(
            &run_name(dir),
            BufReader::new(file),
            cfg.str("metric"),
        )?);
    }
    let rows = budget_table(&curves)?;
    write_file(out, "report.csv", |f| write_budget_csv(f, &rows))?;
    write_file(out, "report.txt", |f| write_budget_table(f, &rows))?;
    Ok(vec![
        ("runs".into(), curves.len().to_string()),
        (
            "frontier_rows".into(),
            rows.iter().filter(|r| r.frontier).count().to_string(),
        ),
    ])
}
