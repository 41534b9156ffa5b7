/// One generated trajectory.
///
/// The advantage, behavior log-probability and group mean reward are fixed
/// when the rollout is generated and cannot be changed afterwards; only the
/// use counter moves while the record sits in a buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutRecord {
    rollout_id: u64,
    prompt_id: u64,
    group_id: u64,
    creation_step: u64,
    policy_version: u64,
    reward: f64,
    is_correct: bool,
    behavior_logprob: f64,
    advantage: f64,
    use_count: u64,
    action: u32,
    group_mean_reward: f64,
}

impl RolloutRecord {
    pub fn new(rollout_id: u64, creation_step: u64) -> Self {
        Self {
            rollout_id,
            prompt_id: 0,
            group_id: 0,
            creation_step,
            policy_version: 0,
            reward: 0.0,
            is_correct: false,
            behavior_logprob: 0.0,
            advantage: 0.0,
            use_count: 0,
            action: 0,
            group_mean_reward: 0.0,
        }
    }

    pub fn with_prompt(mut self, prompt_id: u64, group_id: u64) -> Self {
        self.prompt_id = prompt_id;
        self.group_id = group_id;
        self
    }

    pub fn with_policy_version(mut self, version: u64) -> Self {
        self.policy_version = version;
        self
    }

    pub fn with_reward(mut self, reward: f64, is_correct: bool) -> Self {
        self.reward = reward;
        self.is_correct = is_correct;
        self
    }

    pub fn with_behavior_logprob(mut self, logprob: f64) -> Self {
        self.behavior_logprob = logprob;
        self
    }

    pub fn with_advantage(mut self, advantage: f64, group_mean_reward: f64) -> Self {
        self.advantage = advantage;
        self.group_mean_reward = group_mean_reward;
        self
    }

    pub fn with_action(mut self, action: u32) -> Self {
        self.action = action;
        self
    }

    pub(crate) fn with_use_count(mut self, use_count: u64) -> Self {
        self.use_count = use_count;
        self
    }

    pub fn rollout_id(&self) -> u64 {
        self.rollout_id
    }
    pub fn prompt_id(&self) -> u64 {
        self.prompt_id
    }
    pub fn group_id(&self) -> u64 {
        self.group_id
    }
    pub fn creation_step(&self) -> u64 {
        self.creation_step
    }
    pub fn policy_version(&self) -> u64 {
        self.policy_version
    }
    pub fn reward(&self) -> f64 {
        self.reward
    }
    pub fn is_correct(&self) -> bool {
        self.is_correct
    }
    pub fn behavior_logprob(&self) -> f64 {
        self.behavior_logprob
    }
    pub fn advantage(&self) -> f64 {
        self.advantage
    }
    pub fn use_count(&self) -> u64 {
        self.use_count
    }
    /// Arm chosen by the generating policy (bandit workloads).
    pub fn action(&self) -> u32 {
        self.action
    }
    /// Mean reward of the record's generation group.
    pub fn group_mean_reward(&self) -> f64 {
        self.group_mean_reward
    }

    pub(crate) fn mark_used(&mut self) {
        self.use_count += 1;
    }
}
