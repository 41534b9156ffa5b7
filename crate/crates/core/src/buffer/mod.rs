//! Rollout storage: the consume-once transfer queue and the sharded FIFO
//! replay buffer.

mod dump;
mod queue;
mod record;
mod sharded;

pub use dump::{read_records, write_records, DUMP_HEADER};
pub use queue::{BackPressure, TransferQueue};
pub use record::RolloutRecord;
pub use sharded::{
    shard_route, BatchTag, Retention, SampledBatch, SamplingStrategy, ShardedReplayBuffer,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BufferError {
    #[error("shard {shard} not ready: {available} records available, {required} required")]
    NotReady {
        shard: usize,
        available: usize,
        required: usize,
    },
    #[error("rollout {0} is already stored")]
    DuplicateRollout(u64),
    #[error("batch of {requested} exceeds occupancy {available} of shard {shard}")]
    BatchExceedsOccupancy {
        shard: usize,
        requested: usize,
        available: usize,
    },
    #[error("invalid buffer configuration: {0}")]
    InvalidConfig(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}
