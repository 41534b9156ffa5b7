//! Accuracy-versus-compute comparison across runs and Pareto extraction.

use std::io::{BufRead, Write};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReportError {
    #[error("no runs to compare")]
    NoRuns,
    #[error("run {run} reports columns {found:?}, expected {expected:?}")]
    IncompatibleMetrics {
        run: String,
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("column {column:?} missing from {run}")]
    MissingColumn { run: String, column: String },
    #[error("{run} line {line}: {message}")]
    Parse {
        run: String,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunCurve {
    pub name: String,
    pub columns: Vec<String>,
    /// `(compute, value)` pairs.
    pub points: Vec<(f64, f64)>,
}

/// Reads a CSV curve with a header row, keeping the `compute` column and
/// `value_column`.
pub fn read_curve<R: BufRead>(
    name: &str,
    input: R,
    value_column: &str,
) -> Result<RunCurve, ReportError> {
    let mut lines = input.lines().enumerate();
    let parse_err = |line: usize, message: String| ReportError::Parse {
        run: name.to_string(),
        line,
        message,
    };
    let header = match lines.next() {
        Some((_, Ok(h))) => h,
        Some((_, Err(e))) => return Err(parse_err(1, e.to_string())),
        None => return Err(parse_err(1, "empty file".into())),
    };
    let columns: Vec<String> = header.trim().split(',').map(str::to_string).collect();
    let find = |col: &str| {
        columns
            .iter()
            .position(|c| c == col)
            .ok_or_else(|| ReportError::MissingColumn {
                run: name.to_string(),
                column: col.to_string(),
            })
    };
    let (ci, vi) = (find("compute")?, find(value_column)?);
    let mut points = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| parse_err(i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != columns.len() {
            return Err(parse_err(
                i + 1,
                format!("expected {} fields, found {}", columns.len(), fields.len()),
            ));
        }
        let num = |k: usize| {
            fields[k]
                .parse::<f64>()
                .map_err(|_| parse_err(i + 1, format!("bad number {:?}", fields[k])))
        };
        points.push((num(ci)?, num(vi)?));
    }
    Ok(RunCurve {
        name: name.to_string(),
        columns,
        points,
    })
}

/// Indices of the points no other point dominates (cheaper-or-equal and
/// at-least-as-good, strictly better in one), ordered by compute.
pub fn pareto_frontier(points: &[(f64, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .0
            .total_cmp(&points[b].0)
            .then(points[b].1.total_cmp(&points[a].1))
            .then(a.cmp(&b))
    });
    let mut best = f64::NEG_INFINITY;
    let mut out = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let compute = points[order[i]].0;
        let top = points[order[i]].1;
        let mut j = i;
        while j < order.len() && points[order[j]].0 == compute {
            if points[order[j]].1 == top && top > best {
                out.push(order[j]);
            }
            j += 1;
        }
        best = best.max(top);
        i = j;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetRow {
    pub budget: f64,
    pub best_value: f64,
    pub best_run: String,
    /// Some point at exactly this compute lies on the Pareto frontier.
    pub frontier: bool,
}

/// Best value reachable at each compute level present in any run.
pub fn budget_table(runs: &[RunCurve]) -> Result<Vec<BudgetRow>, ReportError> {
    let first = runs.first().ok_or(ReportError::NoRuns)?;
    for run in &runs[1..] {
        if run.columns != first.columns {
            return Err(ReportError::IncompatibleMetrics {
                run: run.name.clone(),
                expected: first.columns.clone(),
                found: run.columns.clone(),
            });
        }
    }
    let all: Vec<(f64, f64, usize)> = runs
        .iter()
        .enumerate()
        .flat_map(|(r, run)| run.points.iter().map(move |&(c, v)| (c, v, r)))
        .collect();
    let flat: Vec<(f64, f64)> = all.iter().map(|&(c, v, _)| (c, v)).collect();
    let mut on_frontier = vec![false; flat.len()];
    for i in pareto_frontier(&flat) {
        on_frontier[i] = true;
    }
    let mut idx: Vec<usize> = (0..all.len()).collect();
    idx.sort_by(|&a, &b| all[a].0.total_cmp(&all[b].0).then(a.cmp(&b)));
    let mut rows: Vec<BudgetRow> = Vec::new();
    let mut best: Option<(f64, usize)> = None;
    for &i in &idx {
        let (c, v, r) = all[i];
        if best.is_none_or(|(bv, _)| v > bv) {
            best = Some((v, r));
        }
        let (bv, br) = best.expect("set above");
        match rows.last_mut() {
            Some(row) if row.budget == c => {
                row.best_value = bv;
                row.best_run = runs[br].name.clone();
                row.frontier |= on_frontier[i];
            }
            _ => rows.push(BudgetRow {
                budget: c,
                best_value: bv,
                best_run: runs[br].name.clone(),
                frontier: on_frontier[i],
            }),
        }
    }
    Ok(rows)
}

pub fn write_budget_csv<W: Write>(mut out: W, rows: &[BudgetRow]) -> std::io::Result<()> {
    writeln!(out, "budget,best_value,best_run,frontier")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.budget,
            r.best_value,
            r.best_run,
            u8::from(r.frontier)
        )?;
    }
    Ok(())
}

pub fn write_budget_table<W: Write>(mut out: W, rows: &[BudgetRow]) -> std::io::Result<()> {
    writeln!(
        out,
        "{:>14}  {:>12}  {:<24} frontier",
        "budget", "best", "run"
    )?;
    for r in rows {
        writeln!(
            out,
            "{:>14.4}  {:>12.6}  {:<24} {}",
            r.budget,
            r.best_value,
            r.best_run,
            if r.frontier { "*" } else { "" }
        )?;
    }
    Ok(())
}
