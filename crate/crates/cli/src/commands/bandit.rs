//! `train-bandit`: GRPO / AsymRE on a prompt-conditioned bandit.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use replaylab_core::rl_toy::{train, BanditTask, LossKind, LossSpec, TrainConfig, TrainTransfer};
use replaylab_core::rng::{streams, SeedStream};

use super::{retention, strategy};
use crate::config::{key, Config, KeySpec};
use crate::{replicate_seed, write_file, CliError, Stats};

pub const SCHEMA: &[KeySpec] = &[
    key(
        "task_file",
        "",
        "task definition file; empty draws a random task",
    ),
    key("prompts", "10", "prompts in a random task"),
    key("arms", "8", "arms per prompt in a random task"),
    key(
        "max_correct",
        "2",
        "most correct arms per prompt in a random task",
    ),
    key("loss", "grpo", "grpo | asymre"),
    key("eps_low", "0.2", "GRPO lower clip"),
    key("eps_high", "0.2", "GRPO upper clip"),
    key("delta_v", "-0.1", "AsymRE baseline shift"),
    key("group", "16", "rollouts per prompt group G"),
    key("transfer", "queue", "queue | buffer"),
    key("capacity", "128", "buffer capacity N"),
    key(
        "strategy",
        "uniform",
        "uniform | without-replacement | unused-first",
    ),
    key("retention", "fifo", "fifo | positive"),
    key("delta", "0.5", "positive-bias share of correct slots"),
    key("workers", "6", "emulated inference workers W"),
    key("trainers", "1", "emulated trainers T"),
    key("mu", "6", "rollout cost ratio"),
    key("batch", "64", "batch size B"),
    key("eta", "1", "step size"),
    key("steps", "2000", "updates"),
    key("seed", "0", "master seed"),
    key("seeds", "1", "replicates"),
];

fn task(cfg: &Config) -> Result<BanditTask, CliError> {
    let path = cfg.str("task_file");
    if path.is_empty() {
        let mut rng = SeedStream::new(cfg.u64("seed")?).rng(streams::TASK);
        return Ok(BanditTask::random(
            cfg.usize("prompts")?,
            cfg.usize("arms")?,
            cfg.usize("max_correct")?,
            &mut rng,
        )?);
    }
    let path = PathBuf::from(path);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    Ok(BanditTask::parse(&text)?)
}

pub fn train_config(cfg: &Config) -> Result<TrainConfig, CliError> {
    let kind = match cfg.choice("loss", &["grpo", "asymre"])? {
        "grpo" => LossKind::Grpo {
            eps_low: cfg.f64("eps_low")?,
            eps_high: cfg.f64("eps_high")?,
        },
        _ => LossKind::AsymRe {
            delta_v: cfg.f64("delta_v")?,
        },
    };
    let transfer = match cfg.choice("transfer", &["queue", "buffer"])? {
        "queue" => TrainTransfer::Queue,
        _ => TrainTransfer::Buffer {
            capacity: cfg.usize("capacity")?,
            strategy: strategy(cfg)?,
            retention: retention(cfg)?,
        },
    };
    let config = TrainConfig {
        task: task(cfg)?,
        loss: LossSpec {
            kind,
            group: cfg.usize("group")?,
        },
        transfer,
        workers: cfg.u32("workers")?,
        trainers: cfg.u32("trainers")?,
        mu: cfg.f64("mu")?,
        batch: cfg.usize("batch")?,
        eta: cfg.f64("eta")?,
        steps: cfg.u64("steps")?,
        seed: cfg.u64("seed")?,
    };
    config.validate()?;
    Ok(config)
}

pub fn run(cfg: &Config, out: &Path) -> Result<Stats, CliError> {
    let base = train_config(cfg)?;
    let seeds = cfg.u64("seeds")?;
    if seeds == 0 {
        return Err(cfg.invalid("seeds", "need at least one replicate").into());
    }
    let outcomes = (0..seeds)
        .into_par_iter()
        .map(|s| {
            train(&TrainConfig {
                seed: replicate_seed(base.seed, s),
                ..base.clone()
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    write_file(out, "task.txt", |f| {
        f.write_all(base.task.to_text().as_bytes())
    })?;
    for (s, o) in outcomes.iter().enumerate() {
        write_file(out, &format!("curve_s{s}.csv"), |f| o.write_csv(f))?;
    }
    write_file(out, "summary.csv", |f| {
        writeln!(
            f,
            "seed_index,final_reward,per_update_compute,rollouts_generated,steps"
        )?;
        for (s, o) in outcomes.iter().enumerate() {
            writeln!(
                f,
                "{s},{},{},{},{}",
                o.final_reward(),
                o.per_update_compute(),
                o.rollouts_generated,
                o.steps
            )?;
        }
        Ok(())
    })?;
    let mut finals: Vec<f64> = outcomes.iter().map(|o| o.final_reward()).collect();
    finals.sort_by(f64::total_cmp);
    let median = finals[finals.len().div_ceil(2) - 1];
    Ok(vec![
        ("median_final_reward".into(), median.to_string()),
        (
            "per_update_compute".into(),
            outcomes[0].per_update_compute().to_string(),
        ),
        ("steps".into(), base.steps.to_string()),
    ])
}
