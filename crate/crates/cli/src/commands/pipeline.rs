//! `simulate-async`: pipeline simulations over a (W, T) x N grid.

use std::path::Path;

use rayon::prelude::*;
use replaylab_core::async_sim::{
    measured_mu, simulate, stall_report, steady_replay_ratio, steady_state_replay_ratio,
    PipelineConfig, RunTrace, Transfer,
};
use replaylab_core::metrics::{
    replay_ratio_values, staleness_values, steps_since_last_use, steps_since_values, summarize,
    write_histogram_table, write_ledger, MetricSummary,
};
use replaylab_core::rng::{streams, SeedStream};

use super::{retention, strategy};
use crate::config::{key, Config, KeySpec};
use crate::{replicate_seed, write_file, CliError, Stats};

pub const SCHEMA: &[KeySpec] = &[
    key("pairs", "6:2", "W:T pairs"),
    key("mus", "5.34", "mu per pair, same order as pairs"),
    key("ns", "252", "buffer capacities N (buffer transfer)"),
    key("transfer", "buffer", "buffer | queue"),
    key("queue_capacity", "auto", "auto (2B) | unbounded | integer"),
    key(
        "strategy",
        "uniform",
        "uniform | without-replacement | unused-first",
    ),
    key("retention", "fifo", "fifo | positive"),
    key("delta", "0.5", "positive-bias share of correct slots"),
    key("batch", "60", "global batch B"),
    key("group", "12", "rollouts per generation G"),
    key(
        "weight_sync_every",
        "1",
        "trainer steps between worker weight refreshes",
    ),
    key("horizon", "2000", "trainer steps to simulate"),
    key(
        "service_cv",
        "0.3",
        "coefficient of variation of generation times",
    ),
    key("step_cost", "1", "trainer-step cost C"),
    key("correct_prob", "0.5", "probability a rollout is correct"),
    key("seed", "0", "master seed"),
    key("seeds", "1", "replicates per cell"),
];

struct Cell {
    name: String,
    config: PipelineConfig,
    seed_index: u64,
}

struct CellResult {
    trace: RunTrace,
    metrics: Vec<(&'static str, MetricSummary)>,
}

fn cells(cfg: &Config) -> Result<Vec<Cell>, CliError> {
    let pairs = cfg.pair_list("pairs")?;
    let mus = cfg.f64_list("mus")?;
    if pairs.is_empty() || mus.len() != pairs.len() {
        return Err(cfg
            .invalid(
                "mus",
                format!(
                    "need one mu per pair ({} pairs, {} mus)",
                    pairs.len(),
                    mus.len()
                ),
            )
            .into());
    }
    let batch = cfg.usize("batch")?;
    let transfers: Vec<(String, Transfer)> = match cfg.choice("transfer", &["buffer", "queue"])? {
        "buffer" => {
            let (strategy, retention) = (strategy(cfg)?, retention(cfg)?);
            cfg.usize_list("ns")?
                .into_iter()
                .map(|n| {
                    (
                        format!("n{n}"),
                        Transfer::Buffer {
                            capacity: n,
                            strategy,
                            retention,
                        },
                    )
                })
                .collect()
        }
        _ => {
            let capacity = match cfg.str("queue_capacity") {
                "auto" => Some(2 * batch),
                "unbounded" => None,
                _ => Some(cfg.usize("queue_capacity")?),
            };
            vec![("queue".into(), Transfer::Queue { capacity })]
        }
    };
    let (seed, seeds) = (cfg.u64("seed")?, cfg.u64("seeds")?);
    let mut out = Vec::new();
    for (&(w, t), &mu) in pairs.iter().zip(&mus) {
        for (tag, transfer) in &transfers {
            for s in 0..seeds {
                let config = PipelineConfig {
                    workers: w,
                    trainers: t,
                    mu,
                    step_cost: cfg.f64("step_cost")?,
                    service_cv: cfg.f64("service_cv")?,
                    transfer: transfer.clone(),
                    batch,
                    group: cfg.usize("group")?,
                    weight_sync_every: cfg.u64("weight_sync_every")?,
                    horizon: cfg.u64("horizon")?,
                    correct_prob: cfg.f64("correct_prob")?,
                    seed: replicate_seed(seed, s),
                };
                config.validate()?;
                out.push(Cell {
                    name: format!("w{w}_t{t}_{tag}_s{s}"),
                    config,
                    seed_index: s,
                });
            }
        }
    }
    Ok(out)
}

/// Staleness, replay-ratio and steps-since-last-use summaries; metrics
/// with no observations are omitted.
pub fn cell_metrics(trace: &RunTrace, seed: u64) -> Vec<(&'static str, MetricSummary)> {
    let events = trace.ledger.events();
    let mut rng = SeedStream::new(seed).rng(streams::METRICS);
    let since = steps_since_values(&steps_since_last_use(events, &mut rng));
    let series: [(&'static str, Vec<f64>); 3] = [
        ("staleness", staleness_values(events).unwrap_or_default()),
        ("replay_ratio", replay_ratio_values(&trace.ledger, true)),
        ("steps_since_last_use", since),
    ];
    series
        .into_iter()
        .filter_map(|(name, values)| summarize(&values).ok().map(|s| (name, s)))
        .collect()
}

pub fn run(cfg: &Config, out: &Path) -> Result<Stats, CliError> {
    let cells = cells(cfg)?;
    let results = cells
        .par_iter()
        .map(|cell| {
            let trace = simulate(&cell.config)?;
            let metrics = cell_metrics(&trace, cell.config.seed);
            Ok(CellResult { trace, metrics })
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    for (cell, res) in cells.iter().zip(&results) {
        write_file(out, &format!("{}.events", cell.name), |f| {
            res.trace.write_events(f)
        })?;
        write_file(out, &format!("{}.ledger.tsv", cell.name), |f| {
            write_ledger(f, res.trace.ledger.events())
        })?;
        let rows: Vec<(&str, &MetricSummary)> = res.metrics.iter().map(|(n, s)| (*n, s)).collect();
        write_file(out, &format!("{}.hist.csv", cell.name), |f| {
            write_histogram_table(f, &rows)
        })?;
    }

    write_file(out, "summary.csv", |f| {
        writeln!(f, "cell,W,T,mu,seed_index,metric,mean,median,q25,q75,count")?;
        for (cell, res) in cells.iter().zip(&results) {
            let c = &cell.config;
            for (name, s) in &res.metrics {
                writeln!(
                    f,
                    "{},{},{},{},{},{name},{},{},{},{},{}",
                    cell.name,
                    c.workers,
                    c.trainers,
                    c.mu,
                    cell.seed_index,
                    s.mean,
                    s.median,
                    s.iqr.0,
                    s.iqr.1,
                    s.count
                )?;
            }
        }
        Ok(())
    })?;

    write_file(out, "stalls.csv", |f| {
        writeln!(
            f,
            "cell,actor,window,waiting_on_empty,waiting_on_full,stall_fraction"
        )?;
        for (cell, res) in cells.iter().zip(&results) {
            for row in stall_report(&res.trace) {
                writeln!(
                    f,
                    "{},{},{},{},{},{}",
                    cell.name,
                    row.actor,
                    row.window,
                    row.waiting_on_empty,
                    row.waiting_on_full,
                    row.stall_fraction()
                )?;
            }
        }
        Ok(())
    })?;

    write_file(out, "compute.csv", |f| {
        writeln!(
            f,
            "cell,steps,records,trainer_units,inference_units,per_update,measured_mu,steady_replay_ratio,closed_form_replay_ratio,end_time"
        )?;
        for (cell, res) in cells.iter().zip(&results) {
            let (t, c) = (&res.trace, &res.trace.compute);
            let mu_hat = measured_mu(t).map_or_else(|_| "nan".to_string(), |m| m.to_string());
            let steady =
                steady_replay_ratio(t).map_or_else(|| "nan".to_string(), |r| r.to_string());
            writeln!(
                f,
                "{},{},{},{},{},{},{mu_hat},{steady},{},{}",
                cell.name,
                c.steps,
                c.records_generated,
                c.trainer_units,
                c.inference_units,
                c.per_update(),
                steady_state_replay_ratio(
                    cell.config.workers,
                    cell.config.trainers,
                    cell.config.mu
                ),
                t.end_time
            )?;
        }
        Ok(())
    })?;

    let end_time = results.iter().map(|r| r.trace.end_time).fold(0.0, f64::max);
    Ok(vec![
        ("cells".into(), cells.len().to_string()),
        ("virtual_time_end".into(), end_time.to_string()),
    ])
}
