//! Replay-buffer machinery for asynchronous RL fine-tuning: buffers and
//! sampling, compute accounting, buffered-SGD theory, a pipeline simulator
//! and the synthetic workloads used to check them.

pub mod async_sim;
pub mod buffer;
pub mod compute;
pub mod design;
pub mod metrics;
pub mod report;
pub mod rl_toy;
pub mod rng;
pub mod sgd_lab;

pub use async_sim::{PipelineConfig, RunTrace, SimError, Transfer};
pub use buffer::{
    BatchTag, BufferError, Retention, RolloutRecord, SamplingStrategy, ShardedReplayBuffer,
    TransferQueue,
};
pub use compute::{compute_ratio, ComputeParams};
pub use design::{DesignParams, DesignSolution, NoiseProfile};
pub use metrics::{UseEvent, UseLedger};
pub use report::{budget_table, pareto_frontier, RunCurve};
pub use rl_toy::{BanditTask, LossKind, LossSpec, PolicyParams, TrainConfig, TrainTransfer};
pub use rng::{Rng, SeedStream};
