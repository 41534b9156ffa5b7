//! Fixtures shared by the criterion benches.

use rand::{Rng as _, SeedableRng};
use replaylab_core::async_sim::{PipelineConfig, Transfer};
use replaylab_core::rl_toy::{BanditTask, LossKind, LossSpec, TrainConfig, TrainTransfer};
use replaylab_core::{Retention, Rng, RolloutRecord, SamplingStrategy, ShardedReplayBuffer};

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// `count` records created at consecutive steps, about half of them correct.
pub fn records(count: u64, seed: u64) -> Vec<RolloutRecord> {
    let mut rng = rng(seed);
    (0..count)
        .map(|i| {
            let correct = rng.random_bool(0.5);
            RolloutRecord::new(i, i / 16)
                .with_prompt(i % 10, i / 16)
                .with_reward(if correct { 1.0 } else { 0.0 }, correct)
        })
        .collect()
}

/// A buffer already at capacity.
pub fn full_buffer(
    capacity: usize,
    shards: usize,
    strategy: SamplingStrategy,
    retention: Retention,
) -> ShardedReplayBuffer {
    let mut buffer =
        ShardedReplayBuffer::new(capacity, shards, strategy, retention).expect("valid buffer");
    for r in records(2 * capacity as u64, 1) {
        buffer.push(r).expect("push");
    }
    buffer
}

pub fn pipeline(
    workers: u32,
    trainers: u32,
    mu: f64,
    transfer: Transfer,
    horizon: u64,
) -> PipelineConfig {
    PipelineConfig {
        workers,
        trainers,
        mu,
        step_cost: 1.0,
        service_cv: 0.3,
        transfer,
        batch: 60,
        group: 12,
        weight_sync_every: 1,
        horizon,
        correct_prob: 0.5,
        seed: 5,
    }
}

pub fn bandit(buffer: bool, steps: u64) -> TrainConfig {
    let (transfer, workers) = if buffer {
        (
            TrainTransfer::Buffer {
                capacity: 128,
                strategy: SamplingStrategy::UniformWithReplacement,
                retention: Retention::PlainFifo,
            },
            3,
        )
    } else {
        (TrainTransfer::Queue, 6)
    };
    TrainConfig {
        task: BanditTask::random(10, 8, 2, &mut rng(99)).expect("task"),
        loss: LossSpec {
            kind: LossKind::grpo(),
            group: 16,
        },
        transfer,
        workers,
        trainers: 1,
        mu: 6.0,
        batch: 64,
        eta: 1.0,
        steps,
        seed: 0,
    }
}
