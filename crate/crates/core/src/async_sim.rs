//! Discrete-event simulation of the asynchronous actor-learner pipeline.
//!
//! `W` inference workers generate groups of rollouts and hand them to the
//! trainers through either a LIFO transfer queue or a sharded replay
//! buffer. The `T` trainers act as one data-parallel group: a global step
//! takes `C / T` virtual time and consumes a batch of `B` records. A
//! group of `G` rollouts takes `C * mu * G / B` on average to generate, so
//! production and consumption balance exactly when `W / T = mu`.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::io::Write;

use rand::Rng as _;
use rand_distr::{Distribution, LogNormal};
use thiserror::Error;

use crate::buffer::{
    BatchTag, BufferError, Retention, RolloutRecord, SamplingStrategy, ShardedReplayBuffer,
    TransferQueue,
};
use crate::compute::{estimate_mu, ComputeError};
use crate::metrics::{UseEvent, UseLedger};
use crate::rng::{streams, Rng, SeedStream};

pub const TRAINER_ACTOR: u32 = 0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid pipeline configuration: {0}")]
    InvalidConfig(String),
    #[error("deadlock at time {time} after {step} steps: {}", describe(actors))]
    Deadlock {
        time: f64,
        step: u64,
        actors: Vec<ActorState>,
    },
    #[error("conservation violated at time {time}: produced {produced}, queued {queued}, consumed {consumed}")]
    Conservation {
        time: f64,
        produced: u64,
        queued: u64,
        consumed: u64,
    },
    #[error(transparent)]
    Buffer(#[from] BufferError),
}

fn describe(actors: &[ActorState]) -> String {
    actors
        .iter()
        .map(|a| format!("actor {} {:?}", a.actor, a.status))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActorStatus {
    Busy,
    WaitingOnEmpty,
    WaitingOnFull,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActorState {
    pub actor: u32,
    pub status: ActorStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Transfer {
    /// LIFO queue; `None` is unbounded.
    Queue { capacity: Option<usize> },
    Buffer {
        capacity: usize,
        strategy: SamplingStrategy,
        retention: Retention,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub workers: u32,
    pub trainers: u32,
    pub mu: f64,
    pub step_cost: f64,
    /// Coefficient of variation of group generation times.
    pub service_cv: f64,
    pub transfer: Transfer,
    pub batch: usize,
    pub group: usize,
    pub weight_sync_every: u64,
    pub horizon: u64,
    /// Probability that a generated rollout is correct.
    pub correct_prob: f64,
    pub seed: u64,
}

impl PipelineConfig {
    /// Queue capacity default of `2 B`.
    pub fn default_queue(batch: usize) -> Transfer {
        Transfer::Queue {
            capacity: Some(2 * batch),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if self.workers == 0 || self.trainers == 0 {
            return bad("W and T must be at least 1".into());
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return bad(format!("mu must be positive, got {}", self.mu));
        }
        if !(self.step_cost > 0.0 && self.step_cost.is_finite()) {
            return bad(format!(
                "step cost must be positive, got {}",
                self.step_cost
            ));
        }
        if !(self.service_cv >= 0.0 && self.service_cv.is_finite()) {
            return bad(format!(
                "service cv must be non-negative, got {}",
                self.service_cv
            ));
        }
        if self.batch == 0 || self.group == 0 || self.horizon == 0 || self.weight_sync_every == 0 {
            return bad("batch, group, horizon and weight_sync_every must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.correct_prob) {
            return bad(format!(
                "correct_prob must lie in [0, 1], got {}",
                self.correct_prob
            ));
        }
        if let Transfer::Buffer { capacity, .. } = self.transfer {
            let t = self.trainers as usize;
            if !self.batch.is_multiple_of(t) {
                return bad(format!("batch {} not divisible by T = {t}", self.batch));
            }
            if capacity % t != 0 || capacity == 0 {
                return bad(format!(
                    "buffer capacity {capacity} not a positive multiple of T = {t}"
                ));
            }
        }
        if let Transfer::Queue { capacity: Some(0) } = self.transfer {
            return bad("queue capacity must be positive".into());
        }
        Ok(())
    }

    fn step_time(&self) -> f64 {
        self.step_cost / f64::from(self.trainers)
    }

    fn mean_generation_time(&self) -> f64 {
        self.step_cost * self.mu * self.group as f64 / self.batch as f64
    }
}

/// `mu T / W`: average uses per rollout once the buffer is in steady state.
pub fn steady_state_replay_ratio(workers: u32, trainers: u32, mu: f64) -> f64 {
    mu * f64::from(trainers) / f64::from(workers)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateEvent {
    pub step: u64,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StallInterval {
    pub actor: u32,
    pub cause: ActorStatus,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightSync {
    pub time: f64,
    pub step: u64,
    pub version: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ComputeLedger {
    pub steps: u64,
    pub records_generated: u64,
    pub trainer_units: f64,
    pub inference_units: f64,
}

impl ComputeLedger {
    pub fn per_update(&self) -> f64 {
        (self.trainer_units + self.inference_units) / self.steps.max(1) as f64
    }
}

/// Residence of one rollout in the replay buffer, in global steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lifetime {
    pub rollout_id: u64,
    pub inserted_step: u64,
    pub evicted_step: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub updates: Vec<UpdateEvent>,
    pub stalls: Vec<StallInterval>,
    pub compute: ComputeLedger,
    pub ledger: UseLedger,
    pub weight_syncs: Vec<WeightSync>,
    pub lifetimes: Vec<Lifetime>,
    /// Start time of the first update.
    pub warmup_end: f64,
    /// Step at which the buffer first reached capacity (buffer mode).
    pub buffer_full_step: Option<u64>,
    pub end_time: f64,
    pub workers: u32,
    pub trainers: u32,
    pub batch: usize,
    /// Event boundaries at which record conservation was checked.
    pub conservation_checks: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActorUtilization {
    pub actor: u32,
    /// Observation window after warm-up.
    pub window: f64,
    pub waiting_on_empty: f64,
    pub waiting_on_full: f64,
}

impl ActorUtilization {
    pub fn stall_fraction(&self) -> f64 {
        if self.window <= 0.0 {
            0.0
        } else {
            (self.waiting_on_empty + self.waiting_on_full) / self.window
        }
    }
}

/// Stalled share of the post-warm-up window for every actor, trainer
/// group first.
pub fn stall_report(trace: &RunTrace) -> Vec<ActorUtilization> {
    let (from, to) = (trace.warmup_end, trace.end_time);
    let mut rows: Vec<ActorUtilization> = (0..=trace.workers)
        .map(|actor| ActorUtilization {
            actor,
            window: (to - from).max(0.0),
            waiting_on_empty: 0.0,
            waiting_on_full: 0.0,
        })
        .collect();
    for s in &trace.stalls {
        let overlap = (s.end.min(to) - s.start.max(from)).max(0.0);
        let row = &mut rows[s.actor as usize];
        match s.cause {
            ActorStatus::WaitingOnEmpty => row.waiting_on_empty += overlap,
            ActorStatus::WaitingOnFull => row.waiting_on_full += overlap,
            ActorStatus::Busy => {}
        }
    }
    rows
}

/// `mu` recovered from processed counts: trainer samples `steps * B` and
/// generated records over the same run.
pub fn measured_mu(trace: &RunTrace) -> Result<f64, ComputeError> {
    estimate_mu(
        trace.compute.steps * trace.batch as u64,
        trace.trainers,
        trace.compute.records_generated,
        trace.workers,
    )
}

/// Staleness of every use, `use_step - creation_step`.
pub fn staleness_distribution(trace: &RunTrace) -> Vec<u64> {
    trace
        .ledger
        .events()
        .iter()
        .map(|e| e.use_step - e.creation_step)
        .collect()
}

/// Mean use count of rollouts inserted after the buffer first filled and
/// evicted before the run ended.
pub fn steady_replay_ratio(trace: &RunTrace) -> Option<f64> {
    let start = trace.buffer_full_step?;
    let mut counts: HashMap<u64, u64> = HashMap::new();
    for e in trace.ledger.events() {
        *counts.entry(e.rollout_id).or_insert(0) += 1;
    }
    let mut total = 0u64;
    let mut n = 0u64;
    for l in &trace.lifetimes {
        if l.inserted_step >= start && l.evicted_step.is_some() {
            total += counts.get(&l.rollout_id).copied().unwrap_or(0);
            n += 1;
        }
    }
    (n > 0).then(|| total as f64 / n as f64)
}

impl RunTrace {
    /// Line-delimited event log.
    pub fn write_events<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "#kind\tfields")?;
        for u in &self.updates {
            writeln!(out, "update\t{}\t{}\t{}", u.step, u.start, u.end)?;
        }
        for s in &self.stalls {
            writeln!(
                out,
                "stall\t{}\t{:?}\t{}\t{}",
                s.actor, s.cause, s.start, s.end
            )?;
        }
        for w in &self.weight_syncs {
            writeln!(out, "sync\t{}\t{}\t{}", w.time, w.step, w.version)?;
        }
        let c = &self.compute;
        writeln!(
            out,
            "compute\t{}\t{}\t{}\t{}",
            c.steps, c.records_generated, c.trainer_units, c.inference_units
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum EventKind {
    StepDone,
    GenerationDone,
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    actor: u32,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // reversed so the max-heap pops the earliest event
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.actor.cmp(&self.actor))
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

enum Store {
    Queue(TransferQueue),
    Buffer(ShardedReplayBuffer),
}

struct Worker {
    status: ActorStatus,
    since: f64,
    weights_step: u64,
    version: u64,
    pending: Vec<RolloutRecord>,
}

struct Sim<'a> {
    cfg: &'a PipelineConfig,
    now: f64,
    seq: u64,
    agenda: BinaryHeap<Event>,
    store: Store,
    step: u64,
    trainer_status: ActorStatus,
    trainer_since: f64,
    workers: Vec<Worker>,
    service: Option<LogNormal<f64>>,
    service_rng: Rng,
    sampling_rng: Rng,
    task_rng: Rng,
    next_rollout: u64,
    next_group: u64,
    produced: u64,
    consumed: u64,
    inserted_at: HashMap<u64, usize>,
    trace: RunTrace,
}

impl<'a> Sim<'a> {
    fn schedule(&mut self, delay: f64, actor: u32, kind: EventKind) {
        self.seq += 1;
        self.agenda.push(Event {
            time: self.now + delay,
            actor,
            seq: self.seq,
            kind,
        });
    }

    fn generation_time(&mut self) -> f64 {
        match &self.service {
            None => self.cfg.mean_generation_time(),
            Some(d) => d.sample(&mut self.service_rng),
        }
    }

    fn start_generation(&mut self, w: usize) {
        let k = self.cfg.weight_sync_every;
        let version = self.step / k;
        let worker = &mut self.workers[w];
        worker.weights_step = version * k;
        worker.version = version;
        worker.status = ActorStatus::Busy;
        worker.since = self.now;
        let dt = self.generation_time();
        self.schedule(dt, w as u32 + 1, EventKind::GenerationDone);
    }

    fn make_group(&mut self, w: usize) -> Vec<RolloutRecord> {
        let group_id = self.next_group;
        self.next_group += 1;
        let (creation, version) = (self.workers[w].weights_step, self.workers[w].version);
        let correct: Vec<bool> = (0..self.cfg.group)
            .map(|_| self.task_rng.random_bool(self.cfg.correct_prob))
            .collect();
        let mean = correct.iter().filter(|c| **c).count() as f64 / correct.len() as f64;
        correct
            .into_iter()
            .map(|c| {
                let id = self.next_rollout;
                self.next_rollout += 1;
                RolloutRecord::new(id, creation)
                    .with_prompt(group_id, group_id)
                    .with_policy_version(version)
                    .with_reward(if c { 1.0 } else { 0.0 }, c)
                    .with_advantage(0.0, mean)
            })
            .collect()
    }

    /// Moves a worker's pending records into the transfer structure.
    /// Returns whether everything was delivered.
    fn deliver(&mut self, w: usize) -> Result<bool, SimError> {
        let pending = std::mem::take(&mut self.workers[w].pending);
        let mut rest = pending.into_iter();
        for record in rest.by_ref() {
            let id = record.rollout_id();
            match &mut self.store {
                Store::Queue(q) => {
                    if let Err(back) = q.push(record) {
                        let mut left = back.0;
                        left.extend(rest);
                        self.workers[w].pending = left;
                        return Ok(false);
                    }
                }
                Store::Buffer(b) => {
                    if let Some(evicted) = b.push(record)? {
                        let idx = self.inserted_at[&evicted.rollout_id()];
                        self.trace.lifetimes[idx].evicted_step = Some(self.step);
                    }
                    self.inserted_at.insert(id, self.trace.lifetimes.len());
                    self.trace.lifetimes.push(Lifetime {
                        rollout_id: id,
                        inserted_step: self.step,
                        evicted_step: None,
                    });
                    if self.trace.buffer_full_step.is_none() && b.len() == b.capacity_total() {
                        self.trace.buffer_full_step = Some(self.step);
                    }
                }
            }
            self.produced += 1;
            self.trace.ledger.record_generated(id);
        }
        Ok(true)
    }

    fn trainer_can_start(&self) -> bool {
        match &self.store {
            Store::Queue(q) => q.len() >= self.cfg.batch,
            Store::Buffer(b) => b.min_shard_len() >= self.cfg.batch / self.cfg.trainers as usize,
        }
    }

    fn start_step(&mut self) -> Result<(), SimError> {
        let tag = BatchTag {
            use_step: self.step,
            batch_id: self.step,
        };
        let events: Vec<UseEvent> = match &mut self.store {
            Store::Queue(q) => {
                let batch = q.pop_batch(self.cfg.batch)?;
                self.consumed += batch.len() as u64;
                batch
                    .iter()
                    .enumerate()
                    .map(|(rank, r)| UseEvent {
                        rollout_id: r.rollout_id(),
                        creation_step: r.creation_step(),
                        use_step: tag.use_step,
                        batch_id: tag.batch_id,
                        within_batch_rank: rank as u32,
                    })
                    .collect()
            }
            Store::Buffer(b) => {
                let per_shard = self.cfg.batch / self.cfg.trainers as usize;
                b.sample(per_shard, tag, &mut self.sampling_rng)?.events
            }
        };
        self.trace.ledger.extend_uses(events);
        if self.trace.updates.is_empty() {
            self.trace.warmup_end = self.now;
        }
        self.trace.updates.push(UpdateEvent {
            step: self.step,
            start: self.now,
            end: self.now + self.cfg.step_time(),
        });
        self.set_trainer(ActorStatus::Busy);
        self.schedule(self.cfg.step_time(), TRAINER_ACTOR, EventKind::StepDone);
        Ok(())
    }

    fn set_trainer(&mut self, status: ActorStatus) {
        if self.trainer_status != ActorStatus::Busy && self.now > self.trainer_since {
            self.trace.stalls.push(StallInterval {
                actor: TRAINER_ACTOR,
                cause: self.trainer_status,
                start: self.trainer_since,
                end: self.now,
            });
        }
        self.trainer_status = status;
        self.trainer_since = self.now;
    }

    fn close_worker_stall(&mut self, w: usize) {
        let worker = &self.workers[w];
        if worker.status != ActorStatus::Busy && self.now > worker.since {
            self.trace.stalls.push(StallInterval {
                actor: w as u32 + 1,
                cause: worker.status,
                start: worker.since,
                end: self.now,
            });
        }
    }

    /// Lets blocked workers push into freed queue slots, in worker order.
    fn unblock_workers(&mut self) -> Result<(), SimError> {
        for w in 0..self.workers.len() {
            if self.workers[w].status == ActorStatus::WaitingOnFull && self.deliver(w)? {
                self.close_worker_stall(w);
                self.start_generation(w);
            }
        }
        Ok(())
    }

    fn try_start_trainer(&mut self) -> Result<(), SimError> {
        if self.trainer_status != ActorStatus::Busy
            && self.step < self.cfg.horizon
            && self.trainer_can_start()
        {
            self.start_step()?;
            if matches!(self.store, Store::Queue(_)) {
                self.unblock_workers()?;
            }
        }
        Ok(())
    }

    fn check_conservation(&mut self) -> Result<(), SimError> {
        if let Store::Queue(q) = &self.store {
            self.trace.conservation_checks += 1;
            if self.produced != q.len() as u64 + self.consumed {
                return Err(SimError::Conservation {
                    time: self.now,
                    produced: self.produced,
                    queued: q.len() as u64,
                    consumed: self.consumed,
                });
            }
        }
        Ok(())
    }

    fn handle(&mut self, event: Event) -> Result<(), SimError> {
        self.now = event.time;
        match event.kind {
            EventKind::StepDone => {
                self.step += 1;
                if self.step.is_multiple_of(self.cfg.weight_sync_every) {
                    self.trace.weight_syncs.push(WeightSync {
                        time: self.now,
                        step: self.step,
                        version: self.step / self.cfg.weight_sync_every,
                    });
                }
                self.set_trainer(ActorStatus::WaitingOnEmpty);
                self.try_start_trainer()?;
            }
            EventKind::GenerationDone => {
                let w = (event.actor - 1) as usize;
                let group = self.make_group(w);
                self.workers[w].pending = group;
                if self.deliver(w)? {
                    self.start_generation(w);
                } else {
                    self.workers[w].status = ActorStatus::WaitingOnFull;
                    self.workers[w].since = self.now;
                }
                self.try_start_trainer()?;
            }
        }
        self.check_conservation()
    }

    fn actor_states(&self) -> Vec<ActorState> {
        std::iter::once(ActorState {
            actor: TRAINER_ACTOR,
            status: self.trainer_status,
        })
        .chain(
            self.workers
                .iter()
                .enumerate()
                .map(|(w, worker)| ActorState {
                    actor: w as u32 + 1,
                    status: worker.status,
                }),
        )
        .collect()
    }
}

pub fn simulate(cfg: &PipelineConfig) -> Result<RunTrace, SimError> {
    cfg.validate()?;
    let seeds = SeedStream::new(cfg.seed);
    let store = match &cfg.transfer {
        Transfer::Queue { capacity: None } => Store::Queue(TransferQueue::unbounded()),
        Transfer::Queue { capacity: Some(c) } => Store::Queue(TransferQueue::bounded(*c)),
        Transfer::Buffer {
            capacity,
            strategy,
            retention,
        } => Store::Buffer(ShardedReplayBuffer::new(
            *capacity,
            cfg.trainers as usize,
            *strategy,
            *retention,
        )?),
    };
    let service = if cfg.service_cv > 0.0 {
        Some(
            LogNormal::from_mean_cv(cfg.mean_generation_time(), cfg.service_cv)
                .map_err(|e| SimError::InvalidConfig(format!("service-time law: {e}")))?,
        )
    } else {
        None
    };
    let mut sim = Sim {
        cfg,
        now: 0.0,
        seq: 0,
        agenda: BinaryHeap::new(),
        store,
        step: 0,
        trainer_status: ActorStatus::WaitingOnEmpty,
        trainer_since: 0.0,
        workers: (0..cfg.workers)
            .map(|_| Worker {
                status: ActorStatus::Busy,
                since: 0.0,
                weights_step: 0,
                version: 0,
                pending: Vec::new(),
            })
            .collect(),
        service,
        service_rng: seeds.rng(streams::SERVICE_TIMES),
        sampling_rng: seeds.rng(streams::SAMPLING),
        task_rng: seeds.rng(streams::TASK),
        next_rollout: 0,
        next_group: 0,
        produced: 0,
        consumed: 0,
        inserted_at: HashMap::new(),
        trace: RunTrace {
            updates: Vec::with_capacity(cfg.horizon as usize),
            stalls: Vec::new(),
            compute: ComputeLedger::default(),
            ledger: UseLedger::new(),
            weight_syncs: Vec::new(),
            lifetimes: Vec::new(),
            warmup_end: 0.0,
            buffer_full_step: None,
            end_time: 0.0,
            workers: cfg.workers,
            trainers: cfg.trainers,
            batch: cfg.batch,
            conservation_checks: 0,
        },
    };
    for w in 0..cfg.workers as usize {
        sim.start_generation(w);
    }

    while sim.step < cfg.horizon {
        let Some(event) = sim.agenda.pop() else {
            return Err(SimError::Deadlock {
                time: sim.now,
                step: sim.step,
                actors: sim.actor_states(),
            });
        };
        sim.handle(event)?;
    }

    // close open stall intervals at the end of the run
    sim.set_trainer(ActorStatus::Busy);
    for w in 0..sim.workers.len() {
        sim.close_worker_stall(w);
    }
    let mut trace = sim.trace;
    trace.end_time = sim.now;
    trace.compute = ComputeLedger {
        steps: sim.step,
        records_generated: sim.produced,
        trainer_units: sim.step as f64 * cfg.step_cost,
        inference_units: sim.produced as f64 / cfg.batch as f64 * cfg.step_cost * cfg.mu,
    };
    Ok(trace)
}
