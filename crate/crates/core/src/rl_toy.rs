//! Prompt-conditioned bandit testbed for group-relative policy gradients.
//!
//! A policy is a table of logits, one softmax row per prompt. Rollouts are
//! single arm pulls with binary reward, so GRPO and AsymRE reduce to exact
//! per-record expressions and pass@k has a closed form.

use std::io::Write;

use log::warn;
use rand::Rng as _;
use thiserror::Error;

use crate::buffer::{
    BatchTag, BufferError, Retention, RolloutRecord, SamplingStrategy, ShardedReplayBuffer,
    TransferQueue,
};
use crate::compute::{compute_ratio, ComputeError, ComputeParams};
use crate::metrics::{UseEvent, UseLedger};
use crate::rng::{streams, Rng, SeedStream};

/// Degenerate-group threshold on the population standard deviation.
pub const STD_FLOOR: f64 = 1e-8;
pub const DIVERGENCE_LOGIT: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ToyError {
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("task file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("logits diverged at step {step}")]
    Diverged { step: u64 },
    #[error(transparent)]
    Buffer(#[from] BufferError),
    #[error(transparent)]
    Compute(#[from] ComputeError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BanditTask {
    arms: usize,
    correct: Vec<Vec<bool>>,
}

impl BanditTask {
    /// Every prompt needs at least one correct and one incorrect arm.
    pub fn new(correct: Vec<Vec<bool>>) -> Result<Self, ToyError> {
        let task = Self::unchecked(correct)?;
        for (p, row) in task.correct.iter().enumerate() {
            if row.iter().all(|c| *c) || row.iter().all(|c| !*c) {
                return Err(ToyError::InvalidTask(format!(
                    "prompt {p} needs both a correct and an incorrect arm"
                )));
            }
        }
        Ok(task)
    }

    /// Task where every arm of every prompt pays `reward_correct`; all
    /// groups are degenerate.
    pub fn constant(prompts: usize, arms: usize, reward_correct: bool) -> Result<Self, ToyError> {
        Self::unchecked(vec![vec![reward_correct; arms]; prompts])
    }

    fn unchecked(correct: Vec<Vec<bool>>) -> Result<Self, ToyError> {
        let arms = correct.first().map_or(0, Vec::len);
        if correct.is_empty() || arms == 0 {
            return Err(ToyError::InvalidTask(
                "need at least one prompt and one arm".into(),
            ));
        }
        if correct.iter().any(|row| row.len() != arms) {
            return Err(ToyError::InvalidTask(
                "every prompt must have the same arm count".into(),
            ));
        }
        Ok(Self { arms, correct })
    }

    /// Random task with between 1 and `max_correct` correct arms per prompt.
    pub fn random(
        prompts: usize,
        arms: usize,
        max_correct: usize,
        rng: &mut Rng,
    ) -> Result<Self, ToyError> {
        if arms < 2 || max_correct == 0 || max_correct >= arms {
            return Err(ToyError::InvalidTask(format!(
                "need 1 <= max_correct < arms, got max_correct={max_correct}, arms={arms}"
            )));
        }
        let rows = (0..prompts)
            .map(|_| {
                let k = rng.random_range(1..=max_correct);
                let mut row = vec![false; arms];
                for arm in rand::seq::index::sample(rng, arms, k) {
                    row[arm] = true;
                }
                row
            })
            .collect();
        Self::new(rows)
    }

    /// Parses `arms K` followed by one line per prompt listing its correct
    /// arms, comma separated. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, ToyError> {
        let mut arms = None;
        let mut rows = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| ToyError::Parse {
                line: line_no,
                message,
            };
            let Some(k) = arms else {
                let value = line
                    .strip_prefix("arms")
                    .ok_or_else(|| err("expected `arms K` first".into()))?
                    .trim();
                let k: usize = value
                    .parse()
                    .map_err(|_| err(format!("bad arm count {value:?}")))?;
                arms = Some(k);
                continue;
            };
            let mut row = vec![false; k];
            for field in line.split(',') {
                let field = field.trim();
                let arm: usize = field
                    .parse()
                    .map_err(|_| err(format!("bad arm {field:?}")))?;
                if arm >= k {
                    return Err(err(format!("arm {arm} out of range for {k} arms")));
                }
                row[arm] = true;
            }
            rows.push(row);
        }
        Self::new(rows)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("arms {}\n", self.arms);
        for row in &self.correct {
            let arms: Vec<String> = (0..self.arms)
                .filter(|&a| row[a])
                .map(|a| a.to_string())
                .collect();
            out.push_str(&arms.join(","));
            out.push('\n');
        }
        out
    }

    pub fn prompts(&self) -> usize {
        self.correct.len()
    }

    pub fn arms(&self) -> usize {
        self.arms
    }

    pub fn is_correct(&self, prompt: usize, arm: usize) -> bool {
        self.correct[prompt][arm]
    }

    pub fn reward(&self, prompt: usize, arm: usize) -> f64 {
        if self.is_correct(prompt, arm) {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    prompts: usize,
    arms: usize,
    logits: Vec<f64>,
    pub temperature_train: f64,
    pub temperature_eval: f64,
}

fn log_softmax(row: &[f64], temperature: f64) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max) / temperature;
    let lse = max
        + row
            .iter()
            .map(|z| (z / temperature - max).exp())
            .sum::<f64>()
            .ln();
    row.iter().map(|z| z / temperature - lse).collect()
}

impl PolicyParams {
    pub fn uniform(prompts: usize, arms: usize) -> Self {
        Self {
            prompts,
            arms,
            logits: vec![0.0; prompts * arms],
            temperature_train: 1.0,
            temperature_eval: 0.1,
        }
    }

    pub fn from_logits(prompts: usize, arms: usize, logits: Vec<f64>) -> Result<Self, ToyError> {
        if logits.len() != prompts * arms {
            return Err(ToyError::InvalidConfig(format!(
                "expected {} logits, got {}",
                prompts * arms,
                logits.len()
            )));
        }
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(ToyError::InvalidConfig("logits must be finite".into()));
        }
        Ok(Self {
            logits,
            ..Self::uniform(prompts, arms)
        })
    }

    pub fn prompts(&self) -> usize {
        self.prompts
    }

    pub fn arms(&self) -> usize {
        self.arms
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn row(&self, prompt: usize) -> &[f64] {
        &self.logits[prompt * self.arms..(prompt + 1) * self.arms]
    }

    pub fn probs_at(&self, prompt: usize, temperature: f64) -> Vec<f64> {
        log_softmax(self.row(prompt), temperature)
            .into_iter()
            .map(f64::exp)
            .collect()
    }

    pub fn probs(&self, prompt: usize) -> Vec<f64> {
        self.probs_at(prompt, self.temperature_train)
    }

    pub fn log_prob(&self, prompt: usize, arm: usize) -> f64 {
        log_softmax(self.row(prompt), self.temperature_train)[arm]
    }

    /// Gradient step on the flattened logit table.
    pub fn apply(&mut self, direction: &[f64], scale: f64) {
        for (z, d) in self.logits.iter_mut().zip(direction) {
            *z += scale * d;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Grpo { eps_low: f64, eps_high: f64 },
    AsymRe { delta_v: f64 },
}

impl LossKind {
    pub fn grpo() -> Self {
        Self::Grpo {
            eps_low: 0.2,
            eps_high: 0.2,
        }
    }

    pub fn asymre() -> Self {
        Self::AsymRe { delta_v: -0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    pub group: usize,
}

impl LossSpec {
    pub fn validate(&self) -> Result<(), ToyError> {
        if self.group < 2 {
            return Err(ToyError::InvalidConfig(format!(
                "group size must be at least 2, got {}",
                self.group
            )));
        }
        match self.kind {
            LossKind::Grpo { eps_low, eps_high } if !(eps_low >= 0.0 && eps_high >= 0.0) => {
                Err(ToyError::InvalidConfig(format!(
                    "clip bounds must be non-negative, got {eps_low}, {eps_high}"
                )))
            }
            LossKind::AsymRe { delta_v } if !delta_v.is_finite() => {
                Err(ToyError::InvalidConfig("delta_v must be finite".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Group-normalized advantages with the population standard deviation.
pub fn advantage(rewards: &[f64]) -> Vec<f64> {
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < STD_FLOOR {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - mean) / std).collect()
}

fn sample_categorical(probs: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Allocates rollout and group ids.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IdSource {
    pub next_rollout: u64,
    pub next_group: u64,
}

/// `G` pulls for one prompt at the training temperature with frozen
/// behavior log-probabilities and advantages.
pub fn rollout_group(
    policy: &PolicyParams,
    task: &BanditTask,
    prompt: usize,
    group: usize,
    creation_step: u64,
    ids: &mut IdSource,
    rng: &mut Rng,
) -> Vec<RolloutRecord> {
    let logp = log_softmax(policy.row(prompt), policy.temperature_train);
    let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
    let arms: Vec<usize> = (0..group)
        .map(|_| sample_categorical(&probs, rng))
        .collect();
    let rewards: Vec<f64> = arms.iter().map(|&a| task.reward(prompt, a)).collect();
    let adv = advantage(&rewards);
    let mean = rewards.iter().sum::<f64>() / group as f64;
    let group_id = ids.next_group;
    ids.next_group += 1;
    arms.iter()
        .zip(&rewards)
        .zip(&adv)
        .map(|((&arm, &r), &a)| {
            let id = ids.next_rollout;
            ids.next_rollout += 1;
            RolloutRecord::new(id, creation_step)
                .with_prompt(prompt as u64, group_id)
                .with_policy_version(creation_step)
                .with_reward(r, task.is_correct(prompt, arm))
                .with_behavior_logprob(logp[arm])
                .with_action(arm as u32)
                .with_advantage(a, mean)
        })
        .collect()
}

/// Surrogate objective (to be maximized) and the gradient of its negation
/// with respect to the logit table.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub objective: f64,
    pub grad: Vec<f64>,
    /// Records dropped for a non-finite importance ratio.
    pub excluded: usize,
}

/// Adds `coef * d log pi(arm | prompt) / d logits` into `grad`.
fn add_score(policy: &PolicyParams, prompt: usize, arm: usize, coef: f64, grad: &mut [f64]) {
    let t = policy.temperature_train;
    let probs = policy.probs(prompt);
    let base = prompt * policy.arms;
    for (j, p) in probs.iter().enumerate() {
        let indicator = if j == arm { 1.0 } else { 0.0 };
        grad[base + j] += coef * (indicator - p) / t;
    }
}

pub fn grpo_loss_grad(
    policy: &PolicyParams,
    batch: &[RolloutRecord],
    eps_low: f64,
    eps_high: f64,
) -> LossGrad {
    let mut grad = vec![0.0; policy.logits.len()];
    let mut total = 0.0;
    let mut excluded = 0;
    let mut kept = 0usize;
    let mut terms = Vec::with_capacity(batch.len());
    for r in batch {
        let (prompt, arm) = (r.prompt_id() as usize, r.action() as usize);
        let ratio = (policy.log_prob(prompt, arm) - r.behavior_logprob()).exp();
        if !ratio.is_finite() {
            excluded += 1;
            continue;
        }
        let a = r.advantage();
        let unclipped = ratio * a;
        let clipped = ratio.clamp(1.0 - eps_low, 1.0 + eps_high) * a;
        total += unclipped.min(clipped);
        kept += 1;
        if unclipped <= clipped {
            terms.push((prompt, arm, ratio * a));
        }
    }
    if excluded > 0 {
        warn!("{excluded} records with non-finite importance ratio excluded");
    }
    if kept == 0 {
        return LossGrad {
            objective: 0.0,
            grad,
            excluded,
        };
    }
    let scale = 1.0 / kept as f64;
    for (prompt, arm, coef) in terms {
        add_score(policy, prompt, arm, -coef * scale, &mut grad);
    }
    LossGrad {
        objective: total * scale,
        grad,
        excluded,
    }
}

pub fn asymre_loss_grad(policy: &PolicyParams, batch: &[RolloutRecord], delta_v: f64) -> LossGrad {
    let mut grad = vec![0.0; policy.logits.len()];
    if batch.is_empty() {
        return LossGrad {
            objective: 0.0,
            grad,
            excluded: 0,
        };
    }
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for r in batch {
        let (prompt, arm) = (r.prompt_id() as usize, r.action() as usize);
        let coef = r.reward() - (r.group_mean_reward() + delta_v);
        total += coef * policy.log_prob(prompt, arm);
        add_score(policy, prompt, arm, -coef * scale, &mut grad);
    }
    LossGrad {
        objective: total * scale,
        grad,
        excluded: 0,
    }
}

pub fn loss_grad(policy: &PolicyParams, batch: &[RolloutRecord], kind: LossKind) -> LossGrad {
    match kind {
        LossKind::Grpo { eps_low, eps_high } => grpo_loss_grad(policy, batch, eps_low, eps_high),
        LossKind::AsymRe { delta_v } => asymre_loss_grad(policy, batch, delta_v),
    }
}

/// Entropy of the training-temperature softmax at `prompt`.
pub fn policy_entropy(policy: &PolicyParams, prompt: usize) -> f64 {
    log_softmax(policy.row(prompt), policy.temperature_train)
        .iter()
        .map(|l| if l.is_finite() { -l.exp() * l } else { 0.0 })
        .sum()
}

pub fn mean_entropy(policy: &PolicyParams) -> f64 {
    (0..policy.prompts)
        .map(|p| policy_entropy(policy, p))
        .sum::<f64>()
        / policy.prompts as f64
}

/// Probability mass on correct arms at `temperature`.
pub fn correct_mass(
    policy: &PolicyParams,
    task: &BanditTask,
    prompt: usize,
    temperature: f64,
) -> f64 {
    policy
        .probs_at(prompt, temperature)
        .iter()
        .enumerate()
        .filter(|(a, _)| task.is_correct(prompt, *a))
        .map(|(_, p)| p)
        .sum()
}

/// Prompt-averaged `1 - (1 - p_correct)^k` at `temperature`.
pub fn pass_at_k_at(policy: &PolicyParams, task: &BanditTask, k: u32, temperature: f64) -> f64 {
    let total: f64 = (0..task.prompts())
        .map(|p| 1.0 - (1.0 - correct_mass(policy, task, p, temperature)).powi(k as i32))
        .sum();
    total / task.prompts() as f64
}

/// Pass@k at the evaluation temperature.
pub fn pass_at_k(policy: &PolicyParams, task: &BanditTask, k: u32) -> f64 {
    pass_at_k_at(policy, task, k, policy.temperature_eval)
}

/// Sampled pass@k; each draw picks a prompt uniformly and pulls `k` arms.
pub fn pass_at_k_monte_carlo(
    policy: &PolicyParams,
    task: &BanditTask,
    k: u32,
    temperature: f64,
    draws: usize,
    rng: &mut Rng,
) -> f64 {
    let probs: Vec<Vec<f64>> = (0..task.prompts())
        .map(|p| policy.probs_at(p, temperature))
        .collect();
    let mut hits = 0usize;
    for _ in 0..draws {
        let p = rng.random_range(0..task.prompts());
        if (0..k).any(|_| task.is_correct(p, sample_categorical(&probs[p], rng))) {
            hits += 1;
        }
    }
    hits as f64 / draws as f64
}

/// Expected reward of the training-temperature policy, averaged over prompts.
pub fn expected_reward(policy: &PolicyParams, task: &BanditTask) -> f64 {
    pass_at_k_at(policy, task, 1, policy.temperature_train)
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainTransfer {
    /// On-policy: each update consumes `B` fresh rollouts exactly once.
    Queue,
    Buffer {
        capacity: usize,
        strategy: SamplingStrategy,
        retention: Retention,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub task: BanditTask,
    pub loss: LossSpec,
    pub transfer: TrainTransfer,
    /// Emulated worker and trainer counts; fresh rollouts per update are
    /// `R = B W / (T mu)`.
    pub workers: u32,
    pub trainers: u32,
    pub mu: f64,
    pub batch: usize,
    pub eta: f64,
    pub steps: u64,
    pub seed: u64,
}

impl TrainConfig {
    /// Fresh rollouts generated per update.
    pub fn rollouts_per_step(&self) -> Result<usize, ToyError> {
        let exact =
            self.batch as f64 * f64::from(self.workers) / (f64::from(self.trainers) * self.mu);
        let r = exact.round();
        if (exact - r).abs() > 1e-9 * exact.max(1.0) || r < 1.0 {
            return Err(ToyError::InvalidConfig(format!(
                "B W / (T mu) = {exact} is not a positive integer"
            )));
        }
        let r = r as usize;
        if !r.is_multiple_of(self.loss.group) {
            return Err(ToyError::InvalidConfig(format!(
                "rollouts per step {r} not a multiple of group size {}",
                self.loss.group
            )));
        }
        Ok(r)
    }

    pub fn compute_params(&self) -> Result<ComputeParams, ToyError> {
        Ok(ComputeParams::new(self.workers, self.trainers, self.mu)?)
    }

    pub fn validate(&self) -> Result<(), ToyError> {
        self.loss.validate()?;
        self.compute_params()?;
        if self.batch == 0 || self.steps == 0 {
            return Err(ToyError::InvalidConfig(
                "batch and steps must be positive".into(),
            ));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(ToyError::InvalidConfig(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        let r = self.rollouts_per_step()?;
        match &self.transfer {
            TrainTransfer::Queue if r != self.batch => Err(ToyError::InvalidConfig(format!(
                "queue mode needs W / T = mu (fresh rollouts {r} != batch {})",
                self.batch
            ))),
            TrainTransfer::Buffer { capacity, .. } if *capacity < self.batch.max(r) => {
                Err(ToyError::InvalidConfig(format!(
                    "buffer capacity {capacity} below batch or per-step rollouts"
                )))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub step: u64,
    /// Cumulative compute in baseline-update units.
    pub compute: f64,
    pub mean_reward: f64,
    pub entropy: f64,
    pub pass1: f64,
    pub pass4: f64,
    pub pass16: f64,
    /// Mean surprisal `-log pi(a | q)` of the training batch under the
    /// parameters it is applied to.
    pub batch_entropy: f64,
    pub batch_correct_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub curve: Vec<CurvePoint>,
    pub policy: PolicyParams,
    pub ledger: UseLedger,
    pub trainer_units: f64,
    pub inference_units: f64,
    pub rollouts_generated: u64,
    pub steps: u64,
}

impl TrainOutcome {
    /// Ledger compute per update in units of `C`.
    pub fn per_update_compute(&self) -> f64 {
        (self.trainer_units + self.inference_units) / self.steps.max(1) as f64
    }

    pub fn final_reward(&self) -> f64 {
        self.curve.last().map_or(0.0, |c| c.mean_reward)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "step,compute,mean_reward,entropy,pass1,pass4,pass16,batch_entropy,batch_correct_fraction"
        )?;
        for c in &self.curve {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                c.step,
                c.compute,
                c.mean_reward,
                c.entropy,
                c.pass1,
                c.pass4,
                c.pass16,
                c.batch_entropy,
                c.batch_correct_fraction
            )?;
        }
        Ok(())
    }
}

enum TrainStore {
    Queue(TransferQueue),
    Buffer(ShardedReplayBuffer),
}

/// Synchronous emulation of the pipeline: every update generates `R`
/// fresh rollouts with the current policy, hands them to the transfer
/// structure and trains on a batch of `B`.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome, ToyError> {
    cfg.validate()?;
    let r = cfg.rollouts_per_step()?;
    let params = cfg.compute_params()?;
    // baseline update = (1 + mu) C; buffer update = (1 + W/T) C
    let per_update = compute_ratio(&params);
    let seeds = SeedStream::new(cfg.seed);
    let mut gen_rng = seeds.rng(streams::TRAINING);
    let mut sample_rng = seeds.rng(streams::SAMPLING);
    let task = &cfg.task;
    let mut policy = PolicyParams::uniform(task.prompts(), task.arms());
    let mut ids = IdSource::default();
    let mut ledger = UseLedger::new();
    let mut store = match &cfg.transfer {
        TrainTransfer::Queue => TrainStore::Queue(TransferQueue::unbounded()),
        TrainTransfer::Buffer {
            capacity,
            strategy,
            retention,
        } => TrainStore::Buffer(ShardedReplayBuffer::new(
            *capacity, 1, *strategy, *retention,
        )?),
    };
    let mut generated = 0u64;
    let mut curve = Vec::with_capacity(cfg.steps as usize);

    let mut generate =
        |policy: &PolicyParams, step: u64, store: &mut TrainStore, ledger: &mut UseLedger| {
            let mut fresh = Vec::with_capacity(r);
            for _ in 0..r / cfg.loss.group {
                let prompt = gen_rng.random_range(0..task.prompts());
                fresh.extend(rollout_group(
                    policy,
                    task,
                    prompt,
                    cfg.loss.group,
                    step,
                    &mut ids,
                    &mut gen_rng,
                ));
            }
            generated += fresh.len() as u64;
            for rec in fresh {
                ledger.record_generated(rec.rollout_id());
                match store {
                    TrainStore::Queue(q) => q
                        .push(rec)
                        .map_err(|_| BufferError::InvalidConfig("queue full".into()))?,
                    TrainStore::Buffer(b) => {
                        b.push(rec)?;
                    }
                }
            }
            Ok::<(), ToyError>(())
        };

    // warm-up: fill to one batch before the first update
    loop {
        let ready = match &store {
            TrainStore::Queue(q) => q.len() >= cfg.batch,
            TrainStore::Buffer(b) => b.len() >= cfg.batch,
        };
        if ready {
            break;
        }
        generate(&policy, 0, &mut store, &mut ledger)?;
    }

    for step in 0..cfg.steps {
        if step > 0 {
            generate(&policy, step, &mut store, &mut ledger)?;
        }
        let tag = BatchTag {
            use_step: step,
            batch_id: step,
        };
        let batch: Vec<RolloutRecord> = match &mut store {
            TrainStore::Queue(q) => {
                let batch = q.pop_batch(cfg.batch)?;
                ledger.extend_uses(batch.iter().enumerate().map(|(rank, rec)| UseEvent {
                    rollout_id: rec.rollout_id(),
                    creation_step: rec.creation_step(),
                    use_step: step,
                    batch_id: step,
                    within_batch_rank: rank as u32,
                }));
                batch
            }
            TrainStore::Buffer(b) => {
                let sampled = b.sample(cfg.batch, tag, &mut sample_rng)?;
                ledger.extend_uses(sampled.events);
                sampled.records
            }
        };
        let n = batch.len() as f64;
        let batch_entropy = batch
            .iter()
            .map(|rec| -policy.log_prob(rec.prompt_id() as usize, rec.action() as usize))
            .sum::<f64>()
            / n;
        let batch_correct_fraction = batch.iter().filter(|rec| rec.is_correct()).count() as f64 / n;

        let lg = loss_grad(&policy, &batch, cfg.loss.kind);
        policy.apply(&lg.grad, -cfg.eta);
        if policy
            .logits
            .iter()
            .any(|z| !z.is_finite() || z.abs() > DIVERGENCE_LOGIT)
        {
            return Err(ToyError::Diverged { step });
        }

        curve.push(CurvePoint {
            step: step + 1,
            compute: (step + 1) as f64 * per_update,
            mean_reward: expected_reward(&policy, task),
            entropy: mean_entropy(&policy),
            pass1: pass_at_k(&policy, task, 1),
            pass4: pass_at_k_at(&policy, task, 4, policy.temperature_train),
            pass16: pass_at_k_at(&policy, task, 16, policy.temperature_train),
            batch_entropy,
            batch_correct_fraction,
        });
    }

    Ok(TrainOutcome {
        curve,
        policy,
        ledger,
        trainer_units: cfg.steps as f64,
        inference_units: generated as f64 / cfg.batch as f64 * cfg.mu,
        rollouts_generated: generated,
        steps: cfg.steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> Rng {
        Rng::seed_from_u64(seed)
    }

    fn random_policy(prompts: usize, arms: usize, rng: &mut Rng) -> PolicyParams {
        let logits = (0..prompts * arms)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        PolicyParams::from_logits(prompts, arms, logits).unwrap()
    }

    #[test]
    fn task_validation_and_parse() {
        assert!(BanditTask::new(vec![vec![true, true]]).is_err());
        assert!(BanditTask::new(vec![vec![true, false], vec![false, true, false]]).is_err());
        let task = BanditTask::parse("# demo\narms 4\n0,2\n3 # trailing\n").unwrap();
        assert_eq!(task.prompts(), 2);
        assert!(task.is_correct(0, 2) && !task.is_correct(1, 0));
        assert_eq!(BanditTask::parse(&task.to_text()).unwrap(), task);
        match BanditTask::parse("arms 3\n0,7\n") {
            Err(ToyError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn deterministic_policy_repeats_arm() {
        let mut logits = vec![0.0; 4];
        logits[2] = 50.0;
        let policy = PolicyParams::from_logits(1, 4, logits).unwrap();
        let task = BanditTask::new(vec![vec![true, false, false, false]]).unwrap();
        let group = rollout_group(
            &policy,
            &task,
            0,
            16,
            0,
            &mut IdSource::default(),
            &mut rng(1),
        );
        assert!(group.iter().all(|r| r.action() == 2));
        assert!(group.iter().all(|r| r.advantage() == 0.0));
    }

    #[test]
    fn uniform_policy_frequencies() {
        let policy = PolicyParams::uniform(1, 4);
        let task = BanditTask::new(vec![vec![true, false, false, false]]).unwrap();
        let group = rollout_group(
            &policy,
            &task,
            0,
            10_000,
            0,
            &mut IdSource::default(),
            &mut rng(2),
        );
        for arm in 0..4 {
            let f = group.iter().filter(|r| r.action() == arm).count() as f64 / 1e4;
            assert!((f - 0.25).abs() <= 0.02, "arm {arm}: {f}");
        }
    }

    #[test]
    fn advantage_examples() {
        assert_eq!(advantage(&[1.0, 0.0, 1.0, 0.0]), vec![1.0, -1.0, 1.0, -1.0]);
        assert_eq!(advantage(&[0.7; 5]), vec![0.0; 5]);
    }

    #[test]
    fn clip_example() {
        let policy = PolicyParams::uniform(1, 2);
        // ratio = 0.5 / (1/3) = 1.5
        let rec = RolloutRecord::new(0, 0)
            .with_behavior_logprob((1.0f64 / 3.0).ln())
            .with_advantage(1.0, 0.5);
        let lg = grpo_loss_grad(&policy, &[rec], 0.2, 0.2);
        assert!((lg.objective - 1.2).abs() < 1e-12);
        assert!(lg.grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn on_policy_grpo_is_reinforce() {
        let mut g = rng(3);
        let policy = random_policy(2, 3, &mut g);
        let task =
            BanditTask::new(vec![vec![true, false, false], vec![false, true, true]]).unwrap();
        let mut ids = IdSource::default();
        let mut batch = rollout_group(&policy, &task, 0, 4, 0, &mut ids, &mut g);
        batch.extend(rollout_group(&policy, &task, 1, 4, 0, &mut ids, &mut g));
        let lg = grpo_loss_grad(&policy, &batch, 0.2, 0.2);
        let mean_adv = batch.iter().map(|r| r.advantage()).sum::<f64>() / 8.0;
        assert!((lg.objective - mean_adv).abs() < 1e-12);
        let mut reinforce = vec![0.0; 6];
        for r in &batch {
            add_score(
                &policy,
                r.prompt_id() as usize,
                r.action() as usize,
                -r.advantage() / 8.0,
                &mut reinforce,
            );
        }
        for (a, b) in lg.grad.iter().zip(&reinforce) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_ratio_is_excluded() {
        let policy = PolicyParams::uniform(1, 2);
        let bad = RolloutRecord::new(0, 0)
            .with_behavior_logprob(f64::NEG_INFINITY)
            .with_advantage(1.0, 0.0);
        let lg = grpo_loss_grad(&policy, &[bad], 0.2, 0.2);
        assert_eq!(lg.excluded, 1);
        assert_eq!(lg.objective, 0.0);
    }

    #[test]
    fn asymre_examples() {
        let policy = PolicyParams::uniform(1, 3);
        let zero = RolloutRecord::new(0, 0)
            .with_reward(0.4, false)
            .with_advantage(0.0, 0.5);
        let lg = asymre_loss_grad(&policy, &[zero], -0.1);
        assert!(lg.grad.iter().all(|g| g.abs() < 1e-15));

        let rec = RolloutRecord::new(0, 0)
            .with_action(1)
            .with_reward(1.0, true)
            .with_advantage(0.0, 0.5);
        let lg = asymre_loss_grad(&policy, &[rec], 0.0);
        let mut score = vec![0.0; 3];
        add_score(&policy, 0, 1, 1.0, &mut score);
        for (g, s) in lg.grad.iter().zip(&score) {
            assert!((g + 0.5 * s).abs() < 1e-15);
        }
    }

    #[test]
    fn entropy_and_pass_at_k() {
        let policy = PolicyParams::uniform(1, 8);
        assert!((policy_entropy(&policy, 0) - 8f64.ln()).abs() < 1e-12);
        let task = BanditTask::new(vec![vec![true, false]]).unwrap();
        let half = PolicyParams::uniform(1, 2);
        assert!((pass_at_k(&half, &task, 2) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn pass_at_k_matches_sampling() {
        let mut g = rng(5);
        let task = BanditTask::random(10, 8, 2, &mut g).unwrap();
        let policy = random_policy(10, 8, &mut g);
        for (k, t) in [(1, 1.0), (4, 1.0), (1, 0.5)] {
            let exact = pass_at_k_at(&policy, &task, k, t);
            let mc = pass_at_k_monte_carlo(&policy, &task, k, t, 100_000, &mut g);
            assert!((exact - mc).abs() <= 0.005, "k={k}: {exact} vs {mc}");
        }
    }

    #[test]
    fn frozen_advantage_survives_updates() {
        let mut g = rng(6);
        let task = BanditTask::random(2, 4, 1, &mut g).unwrap();
        let mut policy = PolicyParams::uniform(2, 4);
        let group = rollout_group(&policy, &task, 0, 8, 0, &mut IdSource::default(), &mut g);
        let mut buffer = ShardedReplayBuffer::fifo(16);
        for r in group.clone() {
            buffer.push(r).unwrap();
        }
        let lg = grpo_loss_grad(&policy, &group, 0.2, 0.2);
        policy.apply(&lg.grad, -5.0);
        for (stored, original) in buffer.iter().zip(&group) {
            assert_eq!(stored.advantage(), original.advantage());
            assert_eq!(stored.behavior_logprob(), original.behavior_logprob());
        }
    }

    fn quick_cfg(transfer: TrainTransfer, workers: u32) -> TrainConfig {
        TrainConfig {
            task: BanditTask::random(4, 4, 1, &mut rng(7)).unwrap(),
            loss: LossSpec {
                kind: LossKind::grpo(),
                group: 8,
            },
            transfer,
            workers,
            trainers: 1,
            mu: 4.0,
            batch: 32,
            eta: 1.0,
            steps: 100,
            seed: 11,
        }
    }

    #[test]
    fn constant_task_leaves_logits_unchanged() {
        for kind in [LossKind::grpo(), LossKind::AsymRe { delta_v: 0.0 }] {
            let mut cfg = quick_cfg(TrainTransfer::Queue, 4);
            cfg.task = BanditTask::constant(4, 4, true).unwrap();
            cfg.loss.kind = kind;
            let out = train(&cfg).unwrap();
            assert!(out.policy.logits().iter().all(|z| *z == 0.0));
        }
    }

    #[test]
    fn training_improves_and_rows_normalize() {
        let out = train(&quick_cfg(TrainTransfer::Queue, 4)).unwrap();
        assert!(out.final_reward() > out.curve[0].mean_reward);
        for p in 0..4 {
            let s: f64 = out.policy.probs(p).iter().sum();
            assert!((s - 1.0).abs() <= 1e-12);
        }
        assert_eq!(out.rollouts_generated, 32 * 100);
        assert!((out.per_update_compute() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn buffer_mode_charges_less() {
        let cfg = quick_cfg(
            TrainTransfer::Buffer {
                capacity: 64,
                strategy: SamplingStrategy::UniformWithReplacement,
                retention: Retention::PlainFifo,
            },
            2,
        );
        let out = train(&cfg).unwrap();
        // (1 + W/T) C plus one warm-up round
        let expect = 3.0 + 16.0 / 32.0 * 4.0 / 100.0;
        assert!((out.per_update_compute() - expect).abs() < 1e-12);
        assert!((out.curve.last().unwrap().compute - 60.0).abs() < 1e-9);
        assert_eq!(train(&cfg).unwrap(), out);
    }

    #[test]
    fn queue_needs_balance() {
        assert!(matches!(
            train(&quick_cfg(TrainTransfer::Queue, 2)),
            Err(ToyError::InvalidConfig(_))
        ));
    }

    /// Central differences on the negated objective.
    fn fd_grad(policy: &PolicyParams, f: impl Fn(&PolicyParams) -> f64) -> Vec<f64> {
        let h = 1e-5;
        (0..policy.logits().len())
            .map(|i| {
                let mut plus = policy.clone();
                let mut minus = policy.clone();
                plus.logits[i] += h;
                minus.logits[i] -= h;
                -(f(&plus) - f(&minus)) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
        diff / scale.max(1e-12)
    }

    fn random_batch(policy: &PolicyParams, g: &mut Rng) -> Vec<RolloutRecord> {
        (0..8)
            .map(|i| {
                let prompt = g.random_range(0..policy.prompts());
                let arm = g.random_range(0..policy.arms());
                let r = if g.random_bool(0.5) { 1.0 } else { 0.0 };
                RolloutRecord::new(i, 0)
                    .with_prompt(prompt as u64, 0)
                    .with_action(arm as u32)
                    .with_reward(r, r > 0.5)
                    .with_behavior_logprob(policy.log_prob(prompt, arm) + g.random_range(-0.5..0.5))
                    .with_advantage(g.random_range(-2.0..2.0), g.random_range(0.0..1.0))
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn advantage_normalizes(rewards in prop::collection::vec(0.0f64..1.0, 2..40)) {
            let a = advantage(&rewards);
            let n = rewards.len() as f64;
            let mean = rewards.iter().sum::<f64>() / n;
            let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
            prop_assume!(std >= STD_FLOOR);
            for (x, r) in a.iter().zip(&rewards) {
                prop_assert!((x - (r - mean) / std).abs() <= 1e-12);
            }
            let m = a.iter().sum::<f64>() / n;
            let v = a.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
            prop_assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        }

        #[test]
        fn grpo_matches_finite_differences(seed in 0u64..1000) {
            let mut g = rng(seed);
            let policy = random_policy(2, 3, &mut g);
            let batch: Vec<RolloutRecord> = random_batch(&policy, &mut g)
                .into_iter()
                .filter(|r| {
                    let ratio = (policy.log_prob(r.prompt_id() as usize, r.action() as usize) - r.behavior_logprob()).exp();
                    (ratio - 0.8).abs() > 1e-3 && (ratio - 1.2).abs() > 1e-3
                })
                .collect();
            prop_assume!(!batch.is_empty());
            let lg = grpo_loss_grad(&policy, &batch, 0.2, 0.2);
            let fd = fd_grad(&policy, |p| grpo_loss_grad(p, &batch, 0.2, 0.2).objective);
            if fd.iter().all(|x| x.abs() < 1e-12) {
                prop_assert!(lg.grad.iter().all(|x| x.abs() < 1e-12));
            } else {
                prop_assert!(rel_err(&lg.grad, &fd) <= 1e-5, "{:?} vs {:?}", lg.grad, fd);
            }
        }

        #[test]
        fn asymre_matches_finite_differences(seed in 0u64..1000) {
            let mut g = rng(seed);
            let policy = random_policy(2, 3, &mut g);
            let batch = random_batch(&policy, &mut g);
            let lg = asymre_loss_grad(&policy, &batch, -0.1);
            let fd = fd_grad(&policy, |p| asymre_loss_grad(p, &batch, -0.1).objective);
            prop_assert!(rel_err(&lg.grad, &fd) <= 1e-5);
        }
    }
}
