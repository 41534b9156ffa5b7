use std::collections::{HashSet, VecDeque};

use rand::seq::index;
use rand::Rng as _;

use super::{BufferError, RolloutRecord};
use crate::metrics::UseEvent;
use crate::rng::Rng;

/// How a shard assembles its part of a training batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SamplingStrategy {
    #[default]
    UniformWithReplacement,
    UniformWithoutReplacement,
    /// Never-used records first (freshest first), remainder uniformly
    /// without replacement.
    UnusedFirstWithoutReplacement,
}

impl SamplingStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            Self::UniformWithReplacement => "uniform",
            Self::UniformWithoutReplacement => "without-replacement",
            Self::UnusedFirstWithoutReplacement => "unused-first",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "uniform" => Some(Self::UniformWithReplacement),
            "without-replacement" => Some(Self::UniformWithoutReplacement),
            "unused-first" => Some(Self::UnusedFirstWithoutReplacement),
            _ => None,
        }
    }
}

/// Eviction rule applied when a shard overflows.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Retention {
    #[default]
    PlainFifo,
    /// Keep the freshest `(1 - delta)` share of the shard plus the freshest
    /// correct records outside that window.
    PositiveBias { delta: f64 },
}

impl Retention {
    /// `(fresh_slots, correct_slots)` for a shard of `capacity` records.
    pub fn slot_split(&self, capacity: usize) -> (usize, usize) {
        match *self {
            Retention::PlainFifo => (capacity, 0),
            Retention::PositiveBias { delta } => {
                // floor(delta * n), tolerant to representation error
                let correct = ((delta * capacity as f64) + 1e-9).floor() as usize;
                let correct = correct.min(capacity);
                (capacity - correct, correct)
            }
        }
    }
}

/// Identifies the optimizer step a sampled batch is applied at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchTag {
    pub use_step: u64,
    pub batch_id: u64,
}

/// Result of one `sample` call across all shards.
#[derive(Debug, Clone, Default)]
pub struct SampledBatch {
    /// Snapshots taken after the use counter was incremented.
    pub records: Vec<RolloutRecord>,
    pub events: Vec<UseEvent>,
}

/// Round-robin shard assignment for the `arrival`-th routed record.
pub fn shard_route(arrival: u64, shards: usize) -> usize {
    assert!(shards >= 1, "shard count must be positive");
    (arrival % shards as u64) as usize
}

/// `T` FIFO shards with total capacity `N`.
///
/// Sampling is non-destructive: only use counters change.
#[derive(Debug, Clone)]
pub struct ShardedReplayBuffer {
    shards: Vec<VecDeque<RolloutRecord>>,
    capacity_per_shard: usize,
    strategy: SamplingStrategy,
    retention: Retention,
    arrivals: u64,
    present: HashSet<u64>,
}

impl ShardedReplayBuffer {
    pub fn new(
        capacity_total: usize,
        shards: usize,
        strategy: SamplingStrategy,
        retention: Retention,
    ) -> Result<Self, BufferError> {
        if shards == 0 || capacity_total == 0 || !capacity_total.is_multiple_of(shards) {
            return Err(BufferError::InvalidConfig(format!(
                "capacity {capacity_total} must be a positive multiple of the shard count {shards}"
            )));
        }
        if let Retention::PositiveBias { delta } = retention {
            if !(0.0..=1.0).contains(&delta) {
                return Err(BufferError::InvalidConfig(format!(
                    "positive-bias delta {delta} outside [0, 1]"
                )));
            }
        }
        let per = capacity_total / shards;
        Ok(Self {
            shards: (0..shards)
                .map(|_| VecDeque::with_capacity(per + 1))
                .collect(),
            capacity_per_shard: per,
            strategy,
            retention,
            arrivals: 0,
            present: HashSet::new(),
        })
    }

    /// Single-shard uniform FIFO buffer.
    pub fn fifo(capacity: usize) -> Self {
        Self::new(
            capacity,
            1,
            SamplingStrategy::default(),
            Retention::PlainFifo,
        )
        .expect("positive capacity")
    }

    pub fn shard_count(&self) -> usize {
        self.shards.len()
    }

    pub fn capacity_total(&self) -> usize {
        self.capacity_per_shard * self.shards.len()
    }

    pub fn capacity_per_shard(&self) -> usize {
        self.capacity_per_shard
    }

    pub fn strategy(&self) -> SamplingStrategy {
        self.strategy
    }

    pub fn retention(&self) -> Retention {
        self.retention
    }

    pub fn len(&self) -> usize {
        self.shards.iter().map(VecDeque::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records of one shard, oldest first.
    pub fn shard(&self, index: usize) -> &VecDeque<RolloutRecord> {
        &self.shards[index]
    }

    pub fn shard_lens(&self) -> Vec<usize> {
        self.shards.iter().map(VecDeque::len).collect()
    }

    pub fn min_shard_len(&self) -> usize {
        self.shards.iter().map(VecDeque::len).min().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = &RolloutRecord> {
        self.shards.iter().flatten()
    }

    pub fn contains(&self, rollout_id: u64) -> bool {
        self.present.contains(&rollout_id)
    }

    /// Routes `record` to its shard, evicting per the retention rule when
    /// the shard is full.
    pub fn push(&mut self, record: RolloutRecord) -> Result<Option<RolloutRecord>, BufferError> {
        if self.present.contains(&record.rollout_id()) {
            return Err(BufferError::DuplicateRollout(record.rollout_id()));
        }
        let shard_index = shard_route(self.arrivals, self.shards.len());
        self.arrivals += 1;
        self.present.insert(record.rollout_id());

        let cap = self.capacity_per_shard;
        let shard = &mut self.shards[shard_index];
        shard.push_back(record);
        if shard.len() <= cap {
            return Ok(None);
        }
        let victim = match self.retention {
            Retention::PlainFifo => 0,
            Retention::PositiveBias { .. } => {
                let (fresh, _) = self.retention.slot_split(cap);
                positive_bias_victim(shard, fresh)
            }
        };
        let evicted = shard.remove(victim).expect("victim index in range");
        self.present.remove(&evicted.rollout_id());
        Ok(Some(evicted))
    }

    /// Draws `batch_per_shard` records from every shard.
    pub fn sample(
        &mut self,
        batch_per_shard: usize,
        tag: BatchTag,
        rng: &mut Rng,
    ) -> Result<SampledBatch, BufferError> {
        if batch_per_shard == 0 {
            return Err(BufferError::InvalidConfig(
                "batch per shard must be positive".into(),
            ));
        }
        for (i, shard) in self.shards.iter().enumerate() {
            if shard.is_empty() {
                return Err(BufferError::NotReady {
                    shard: i,
                    available: 0,
                    required: 1,
                });
            }
            if self.strategy != SamplingStrategy::UniformWithReplacement
                && batch_per_shard > shard.len()
            {
                return Err(BufferError::BatchExceedsOccupancy {
                    shard: i,
                    requested: batch_per_shard,
                    available: shard.len(),
                });
            }
        }

        let mut out = SampledBatch {
            records: Vec::with_capacity(batch_per_shard * self.shards.len()),
            events: Vec::with_capacity(batch_per_shard * self.shards.len()),
        };
        for shard in &mut self.shards {
            let picks = pick_indices(shard, batch_per_shard, self.strategy, rng);
            for idx in picks {
                let record = &mut shard[idx];
                record.mark_used();
                out.events.push(UseEvent {
                    rollout_id: record.rollout_id(),
                    creation_step: record.creation_step(),
                    use_step: tag.use_step,
                    batch_id: tag.batch_id,
                    within_batch_rank: out.events.len() as u32,
                });
                out.records.push(record.clone());
            }
        }
        Ok(out)
    }

    /// Rebuilds a buffer from dumped shard contents (oldest first per
    /// shard) and the arrival counter.
    pub fn restore(
        capacity_total: usize,
        strategy: SamplingStrategy,
        retention: Retention,
        shards: Vec<Vec<RolloutRecord>>,
        arrivals: u64,
    ) -> Result<Self, BufferError> {
        let mut buffer = Self::new(capacity_total, shards.len(), strategy, retention)?;
        for (i, contents) in shards.into_iter().enumerate() {
            if contents.len() > buffer.capacity_per_shard {
                return Err(BufferError::InvalidConfig(format!(
                    "shard {i} holds {} records, capacity is {}",
                    contents.len(),
                    buffer.capacity_per_shard
                )));
            }
            for record in contents {
                if !buffer.present.insert(record.rollout_id()) {
                    return Err(BufferError::DuplicateRollout(record.rollout_id()));
                }
                buffer.shards[i].push_back(record);
            }
        }
        buffer.arrivals = arrivals;
        Ok(buffer)
    }

    pub fn arrivals(&self) -> u64 {
        self.arrivals
    }
}

/// Index of the record to evict from an overfull positive-bias shard.
///
/// The shard holds `capacity + 1` records oldest-first. The last `fresh`
/// are always retained; the rest compete on (correct, recency), so the
/// victim is the oldest incorrect record outside the fresh window, or the
/// oldest record if all of them are correct.
fn positive_bias_victim(shard: &VecDeque<RolloutRecord>, fresh: usize) -> usize {
    let outside = shard.len() - fresh.min(shard.len());
    if outside == 0 {
        return 0;
    }
    shard
        .iter()
        .take(outside)
        .position(|r| !r.is_correct())
        .unwrap_or(0)
}

fn pick_indices(
    shard: &VecDeque<RolloutRecord>,
    n: usize,
    strategy: SamplingStrategy,
    rng: &mut Rng,
) -> Vec<usize> {
    let len = shard.len();
    match strategy {
        SamplingStrategy::UniformWithReplacement => {
            (0..n).map(|_| rng.random_range(0..len)).collect()
        }
        SamplingStrategy::UniformWithoutReplacement => index::sample(rng, len, n).into_vec(),
        SamplingStrategy::UnusedFirstWithoutReplacement => {
            let mut picks: Vec<usize> = (0..len)
                .rev()
                .filter(|&i| shard[i].use_count() == 0)
                .take(n)
                .collect();
            if picks.len() < n {
                let rest: Vec<usize> = (0..len).filter(|i| !picks.contains(i)).collect();
                let extra = index::sample(rng, rest.len(), n - picks.len());
                picks.extend(extra.into_iter().map(|k| rest[k]));
            }
            picks
        }
    }
}
