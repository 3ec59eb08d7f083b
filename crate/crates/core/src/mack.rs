//! Tabular multi-agent actor-critic: softmax policies over observations,
//! centralized baselines `V_i(s, a_{-i})`, k-step advantages and
//! natural-gradient steps with the exact categorical Fisher.

use serde::{Deserialize, Serialize};

use crate::error::{check_index, Error, Result};
use crate::game::{Dynamics, JointActionSpace, MarkovGame};
use crate::policy::{AgentPolicy, JointPolicy, ObservationMap};
use crate::trajectory::{sample_trajectory, RngConfig, Trajectory};

/// Logit assigned to zero-probability actions when starting from a policy.
pub const MIN_LOGIT: f64 = -20.0;

/// Per-agent logit tables `θ_i[o_i * |A_i| + a_i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    logits: Vec<Vec<f64>>,
    action_counts: Vec<usize>,
    observations: ObservationMap,
}

impl PolicyParams {
    pub fn zeros(observations: ObservationMap, action_counts: &[usize]) -> Self {
        let logits = action_counts
            .iter()
            .enumerate()
            .map(|(i, &n)| vec![0.0; observations.count(i) * n])
            .collect();
        Self {
            logits,
            action_counts: action_counts.to_vec(),
            observations,
        }
    }

    /// Log-probabilities of `policy`, re-centered per row.
    pub fn from_policy(policy: &JointPolicy) -> Self {
        let mut out = Self::zeros(
            policy.observations().clone(),
            &policy.agents().iter().map(AgentPolicy::num_actions).collect::<Vec<_>>(),
        );
        for (i, agent) in policy.agents().iter().enumerate() {
            for (theta, p) in out.logits[i].iter_mut().zip(agent.table()) {
                *theta = if *p > 0.0 { p.ln().max(MIN_LOGIT) } else { MIN_LOGIT };
            }
            let n = agent.num_actions();
            for row in out.logits[i].chunks_mut(n) {
                recenter(row);
            }
        }
        out
    }

    pub fn num_agents(&self) -> usize {
        self.logits.len()
    }

    pub fn observations(&self) -> &ObservationMap {
        &self.observations
    }

    pub fn agent_logits(&self, agent: usize) -> &[f64] {
        &self.logits[agent]
    }

    pub fn agent_logits_mut(&mut self, agent: usize) -> &mut [f64] {
        &mut self.logits[agent]
    }

    pub fn agent_policy(&self, agent: usize) -> AgentPolicy {
        AgentPolicy::softmax(self.observations.count(agent), self.action_counts[agent], &self.logits[agent])
    }

    pub fn to_policy(&self) -> JointPolicy {
        let agents = (0..self.num_agents()).map(|i| self.agent_policy(i)).collect();
        JointPolicy::new(agents, self.observations.clone()).expect("softmax rows are distributions")
    }
}

fn recenter(row: &mut [f64]) {
    let mean = row.iter().sum::<f64>() / row.len() as f64;
    for x in row {
        *x -= mean;
    }
}

fn softmax_row(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = p.iter().sum();
    for x in &mut p {
        *x /= total;
    }
    p
}

/// `V_i[s * |A_{-i}| + a_{-i}]` for each agent.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineTable {
    pub values: Vec<Vec<f64>>,
    others: Vec<usize>,
}

impl BaselineTable {
    pub fn zeros(num_states: usize, space: &JointActionSpace) -> Self {
        let others: Vec<usize> = (0..space.num_agents()).map(|i| space.others_size(i)).collect();
        Self {
            values: others.iter().map(|&o| vec![0.0; num_states * o]).collect(),
            others,
        }
    }

    pub fn cell(&self, agent: usize, state: usize, others: usize) -> usize {
        state * self.others[agent] + others
    }

    pub fn get(&self, agent: usize, state: usize, others: usize) -> f64 {
        self.values[agent][self.cell(agent, state, others)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MackConfig {
    /// Advantage horizon.
    pub k: usize,
    pub policy_lr: f64,
    pub baseline_lr: f64,
    /// Decay both rates linearly to zero over `iterations`.
    pub lr_decay: bool,
    /// Trajectories per iteration.
    pub batch_size: usize,
    pub horizon: usize,
    pub iterations: usize,
    pub entropy_coef: f64,
    pub fisher_damping: f64,
}

impl Default for MackConfig {
    fn default() -> Self {
        Self {
            k: 5,
            policy_lr: 0.5,
            baseline_lr: 0.5,
            lr_decay: true,
            batch_size: 10,
            horizon: 50,
            iterations: 200,
            entropy_coef: 0.0,
            fisher_damping: 1e-3,
        }
    }
}

impl MackConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("MACK config: {what}")));
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if !(self.policy_lr >= 0.0) || !(self.baseline_lr >= 0.0) {
            return bad("learning rates must be non-negative");
        }
        if self.batch_size == 0 || self.horizon < 2 {
            return bad("batch_size must be positive and horizon at least 2");
        }
        if !(self.fisher_damping > 0.0) {
            return bad("fisher_damping must be positive");
        }
        if !(self.entropy_coef >= 0.0) {
            return bad("entropy_coef must be non-negative");
        }
        Ok(())
    }

    /// Rate multiplier at iteration `iter`.
    pub fn schedule(&self, iter: usize) -> f64 {
        if self.lr_decay && self.iterations > 0 {
            1.0 - iter as f64 / self.iterations as f64
        } else {
            1.0
        }
    }
}

/// Trajectories with one reward per agent per step, `rewards[n][t * N + i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardedBatch {
    pub trajectories: Vec<Trajectory>,
    pub rewards: Vec<Vec<f64>>,
}

impl RewardedBatch {
    pub fn num_agents(&self) -> usize {
        self.trajectories.first().map_or(0, Trajectory::num_agents)
    }

    pub fn reward(&self, traj: usize, t: usize, agent: usize) -> f64 {
        self.rewards[traj][t * self.num_agents() + agent]
    }

    /// Attaches `reward(state, joint action)` to every step.
    pub fn label<F>(trajectories: Vec<Trajectory>, space: &JointActionSpace, mut reward: F) -> Self
    where
        F: FnMut(usize, usize, &mut [f64]),
    {
        let n = space.num_agents();
        let rewards = trajectories
            .iter()
            .map(|traj| {
                let mut out = vec![0.0; traj.len() * n];
                for (t, (s, a)) in traj.steps().enumerate() {
                    reward(s, space.encode(a), &mut out[t * n..(t + 1) * n]);
                }
                out
            })
            .collect();
        Self {
            trajectories,
            rewards,
        }
    }

    /// Mean discounted return of each agent over the batch.
    pub fn mean_returns(&self, discount: f64) -> Vec<f64> {
        let n = self.num_agents();
        let mut out = vec![0.0; n];
        for (k, traj) in self.trajectories.iter().enumerate() {
            let mut disc = 1.0;
            for t in 0..traj.len() {
                for (i, o) in out.iter_mut().enumerate() {
                    *o += disc * self.reward(k, t, i);
                }
                disc *= discount;
            }
        }
        let m = self.trajectories.len().max(1) as f64;
        out.iter().map(|x| x / m).collect()
    }
}

/// Advantages and baseline regression targets for the steps that have at
/// least one reward ahead of their bootstrap state; `[n][t * N + i]` with
/// `t < len - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Advantages {
    pub advantages: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    num_agents: usize,
}

impl Advantages {
    pub fn get(&self, traj: usize, t: usize, agent: usize) -> f64 {
        self.advantages[traj][t * self.num_agents + agent]
    }

    pub fn target(&self, traj: usize, t: usize, agent: usize) -> f64 {
        self.targets[traj][t * self.num_agents + agent]
    }

    pub fn valid_steps(&self, traj: usize) -> usize {
        self.advantages[traj].len() / self.num_agents
    }

    pub fn total_steps(&self) -> usize {
        (0..self.advantages.len()).map(|k| self.valid_steps(k)).sum()
    }
}

/// `A_i(t) = Σ_{j<n} γ^j r_i(t+j) + γ^n V_i(s_{t+n}, a_{-i,t}) - V_i(s_t, a_{-i,t})`
/// with `n = min(k, len - 1 - t)`; the final step of each trajectory only
/// serves as a bootstrap state.
pub fn compute_advantages(
    batch: &RewardedBatch,
    space: &JointActionSpace,
    baselines: &BaselineTable,
    k: usize,
    discount: f64,
) -> Result<Advantages> {
    let n_agents = space.num_agents();
    let mut advantages = Vec::with_capacity(batch.trajectories.len());
    let mut targets = Vec::with_capacity(batch.trajectories.len());
    for (b, traj) in batch.trajectories.iter().enumerate() {
        let len = traj.len();
        if k > len {
            return Err(Error::InvalidArgument(format!(
                "advantage horizon {k} exceeds trajectory length {len}"
            )));
        }
        let steps = len.saturating_sub(1);
        let mut adv = vec![0.0; steps * n_agents];
        let mut tgt = vec![0.0; steps * n_agents];
        for t in 0..steps {
            let n = k.min(len - 1 - t);
            let joint = space.encode(traj.actions(t));
            for i in 0..n_agents {
                let others = space.others_index(joint, i);
                let mut ret = 0.0;
                let mut disc = 1.0;
                for j in 0..n {
                    ret += disc * batch.reward(b, t + j, i);
                    disc *= discount;
                }
                ret += disc * baselines.get(i, traj.state(t + n), others);
                tgt[t * n_agents + i] = ret;
                adv[t * n_agents + i] = ret - baselines.get(i, traj.state(t), others);
            }
        }
        advantages.push(adv);
        targets.push(tgt);
    }
    Ok(Advantages {
        advantages,
        targets,
        num_agents: n_agents,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineFit {
    /// Mean of `(V(cell) - target)^2` over samples, after the step.
    pub mse: f64,
    /// Mean of `(V(cell) - mean target of the cell)^2` over samples, after
    /// the step; zero at the regression fixed point.
    pub excess: f64,
}

/// One step per visited `(s, a_{-i})` cell toward the cell's mean target:
/// `V <- V + lr (mean - V)`. Returns the fit for agent `agent`.
pub fn update_baselines(
    baselines: &mut BaselineTable,
    batch: &RewardedBatch,
    space: &JointActionSpace,
    advantages: &Advantages,
    agent: usize,
    lr: f64,
) -> BaselineFit {
    let cells = baselines.values[agent].len();
    let mut sum = vec![0.0; cells];
    let mut count = vec![0usize; cells];
    let mut samples = Vec::with_capacity(advantages.total_steps());
    for (b, traj) in batch.trajectories.iter().enumerate() {
        for t in 0..advantages.valid_steps(b) {
            let joint = space.encode(traj.actions(t));
            let c = baselines.cell(agent, traj.state(t), space.others_index(joint, agent));
            let y = advantages.target(b, t, agent);
            sum[c] += y;
            count[c] += 1;
            samples.push((c, y));
        }
    }
    let table = &mut baselines.values[agent];
    for c in 0..cells {
        if count[c] > 0 {
            let mean = sum[c] / count[c] as f64;
            table[c] += lr * (mean - table[c]);
        }
    }
    let m = samples.len().max(1) as f64;
    let mse = samples.iter().map(|&(c, y)| (table[c] - y).powi(2)).sum::<f64>() / m;
    let excess = samples
        .iter()
        .map(|&(c, _)| (table[c] - sum[c] / count[c] as f64).powi(2))
        .sum::<f64>()
        / m;
    BaselineFit { mse, excess }
}

/// Surrogate `(1/T) Σ_t A_i(t) ln π_i(a_{i,t} | o_i(s_t))` over valid steps.
pub fn surrogate(
    logits: &[f64],
    num_actions: usize,
    observations: &ObservationMap,
    agent: usize,
    batch: &RewardedBatch,
    advantages: &Advantages,
) -> f64 {
    let mut total = 0.0;
    for (b, traj) in batch.trajectories.iter().enumerate() {
        for t in 0..advantages.valid_steps(b) {
            let o = observations.observe(agent, traj.state(t));
            let row = &logits[o * num_actions..(o + 1) * num_actions];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
            total += advantages.get(b, t, agent) * (row[traj.actions(t)[agent]] - lse);
        }
    }
    total / advantages.total_steps().max(1) as f64
}

/// Gradient of [`surrogate`] with respect to the logits:
/// `(1/T) Σ_t A_i(t) (e_{a_t} - π(· | o_t))` per row.
pub fn surrogate_gradient(
    logits: &[f64],
    num_actions: usize,
    observations: &ObservationMap,
    agent: usize,
    batch: &RewardedBatch,
    advantages: &Advantages,
) -> Vec<f64> {
    let mut grad = vec![0.0; logits.len()];
    let probs: Vec<Vec<f64>> = logits.chunks(num_actions).map(softmax_row).collect();
    let scale = 1.0 / advantages.total_steps().max(1) as f64;
    for (b, traj) in batch.trajectories.iter().enumerate() {
        for t in 0..advantages.valid_steps(b) {
            let o = observations.observe(agent, traj.state(t));
            let a = advantages.get(b, t, agent) * scale;
            let g = &mut grad[o * num_actions..(o + 1) * num_actions];
            for (x, p) in g.iter_mut().zip(&probs[o]) {
                *x -= a * p;
            }
            g[traj.actions(t)[agent]] += a;
        }
    }
    grad
}

/// Solves `(diag(p) - p pᵀ + ε I) x = g` by Sherman-Morrison.
pub fn damped_fisher_solve(p: &[f64], g: &[f64], damping: f64) -> Vec<f64> {
    let d: Vec<f64> = p.iter().map(|pi| pi + damping).collect();
    let dg: Vec<f64> = g.iter().zip(&d).map(|(g, d)| g / d).collect();
    let dp: Vec<f64> = p.iter().zip(&d).map(|(p, d)| p / d).collect();
    let p_dg: f64 = p.iter().zip(&dg).map(|(a, b)| a * b).sum();
    let p_dp: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
    let c = p_dg / (1.0 - p_dp);
    dg.iter().zip(&dp).map(|(x, y)| x + c * y).collect()
}

/// One natural-gradient step on agent `agent`'s logits; rows are
/// re-centered to mean zero afterwards.
pub fn natural_policy_step(
    params: &mut PolicyParams,
    agent: usize,
    batch: &RewardedBatch,
    advantages: &Advantages,
    lr: f64,
    damping: f64,
) -> Result<()> {
    check_index("agent", agent, params.num_agents())?;
    let n = params.action_counts[agent];
    let grad = surrogate_gradient(&params.logits[agent], n, &params.observations, agent, batch, advantages);
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("policy gradient"));
    }
    let logits = &mut params.logits[agent];
    for (row, g) in logits.chunks_mut(n).zip(grad.chunks(n)) {
        if g.iter().all(|&x| x == 0.0) {
            recenter(row);
            continue;
        }
        let p = softmax_row(row);
        let step = damped_fisher_solve(&p, g, damping);
        for (theta, s) in row.iter_mut().zip(step) {
            *theta += lr * s;
        }
        recenter(row);
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("policy logits"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MackLogRow {
    pub iter: usize,
    pub agent: usize,
    pub mean_return: f64,
    pub surrogate: f64,
    pub baseline_mse: f64,
    pub lr: f64,
}

pub const MACK_LOG_HEADER: &str = "iter,agent,mean_return,surrogate,baseline_mse,lr";

impl MackLogRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{:.12e},{:.12e},{:.12e},{:.12e}",
            self.iter, self.agent, self.mean_return, self.surrogate, self.baseline_mse, self.lr
        )
    }
}

/// Actor-critic state shared by forward RL and the adversarial loop.
#[derive(Debug, Clone)]
pub struct Mack {
    pub config: MackConfig,
    pub params: PolicyParams,
    pub baselines: BaselineTable,
    /// Agents whose policies are updated; the rest stay frozen.
    pub trainable: Vec<bool>,
    iteration: usize,
}

impl Mack {
    pub fn new(dynamics: &Dynamics, initial: &JointPolicy, config: MackConfig) -> Result<Self> {
        config.validate()?;
        initial.check_against(dynamics)?;
        Ok(Self {
            params: PolicyParams::from_policy(initial),
            baselines: BaselineTable::zeros(dynamics.num_states(), dynamics.actions()),
            trainable: vec![true; dynamics.num_agents()],
            config,
            iteration: 0,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn policy(&self) -> JointPolicy {
        self.params.to_policy()
    }

    /// `batch_size` rollouts of the current policy from the iteration's own
    /// stream.
    pub fn sample(&self, dynamics: &Dynamics, rng: &RngConfig) -> Vec<Trajectory> {
        let policy = self.policy();
        let mut r = rng.child(format_args!("iter/{}", self.iteration)).rng();
        (0..self.config.batch_size)
            .map(|_| sample_trajectory(dynamics, &policy, self.config.horizon, &mut r))
            .collect()
    }

    /// Baseline regression and one natural step per trainable agent.
    pub fn update(&mut self, dynamics: &Dynamics, mut batch: RewardedBatch) -> Result<Vec<MackLogRow>> {
        let space = dynamics.actions();
        let n = space.num_agents();
        if self.config.entropy_coef > 0.0 {
            let policy = self.policy();
            for (b, traj) in batch.trajectories.iter().enumerate() {
                for (t, (s, a)) in traj.steps().enumerate() {
                    for i in 0..n {
                        let p = policy.agent_prob(i, s, a[i]);
                        batch.rewards[b][t * n + i] -= self.config.entropy_coef * p.ln();
                    }
                }
            }
        }
        let scale = self.config.schedule(self.iteration);
        let (policy_lr, baseline_lr) = (self.config.policy_lr * scale, self.config.baseline_lr * scale);
        let gamma = dynamics.discount();
        let adv = compute_advantages(&batch, space, &self.baselines, self.config.k, gamma)?;
        let returns = batch.mean_returns(gamma);
        let mut log = Vec::with_capacity(n);
        for i in 0..n {
            let fit = update_baselines(&mut self.baselines, &batch, space, &adv, i, baseline_lr);
            let na = space.count(i);
            let sur = surrogate(self.params.agent_logits(i), na, &self.params.observations, i, &batch, &adv);
            if self.trainable[i] {
                natural_policy_step(&mut self.params, i, &batch, &adv, policy_lr, self.config.fisher_damping)?;
            }
            log.push(MackLogRow {
                iter: self.iteration,
                agent: i,
                mean_return: returns[i],
                surrogate: sur,
                baseline_mse: fit.mse,
                lr: policy_lr,
            });
        }
        self.iteration += 1;
        Ok(log)
    }
}

/// Forward RL on the game's true rewards from a uniform start over
/// `observations`.
pub fn train_mack(
    game: &MarkovGame,
    observations: &ObservationMap,
    config: &MackConfig,
    rng: &RngConfig,
) -> Result<(JointPolicy, Vec<MackLogRow>)> {
    game.validate().into_result()?;
    let start = JointPolicy::uniform(observations.clone(), game.actions().counts());
    let dynamics = game.dynamics();
    let mut mack = Mack::new(dynamics, &start, config.clone())?;
    let mut log = Vec::new();
    for _ in 0..config.iterations {
        let trajectories = mack.sample(dynamics, rng);
        let batch = RewardedBatch::label(trajectories, game.actions(), |s, j, out| {
            for (i, r) in out.iter_mut().enumerate() {
                *r = game.reward(i, s, j);
            }
        });
        log.extend(mack.update(dynamics, batch)?);
    }
    Ok((mack.policy(), log))
}
