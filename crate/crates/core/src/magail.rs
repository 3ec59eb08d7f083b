//! Imitation from demonstrations: behavior cloning, the adversarial loop
//! under each reward prior, the per-agent GAIL baseline and true-reward
//! evaluation.
//!
//! Training entry points take [`Dynamics`], which carries no rewards, so the
//! true reward tables cannot leak into learning.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::discriminator::{DiscBatch, DiscriminatorParams, PriorKind, PriorVariant};
use crate::error::{Error, Result};
use crate::game::{Dynamics, MarkovGame};
use crate::mack::{Mack, MackConfig, RewardedBatch};
use crate::policy::{AgentPolicy, JointPolicy, ObservationMap};
use crate::solvers::expected_returns;
use crate::trajectory::{sample_trajectory, DemonstrationSet, RngConfig, Trajectory};

/// Maximum-likelihood policy `(count(o, a) + α) / (count(o) + α |A_i|)`;
/// unvisited observations get the uniform row.
pub fn behavior_cloning(
    demos: &DemonstrationSet,
    observations: &ObservationMap,
    action_counts: &[usize],
    alpha: f64,
) -> Result<JointPolicy> {
    if demos.num_pairs() == 0 {
        return Err(Error::InvalidArgument("behavior cloning needs at least one demonstration step".into()));
    }
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!("smoothing {alpha} must be a non-negative number")));
    }
    let n = action_counts.len();
    if observations.num_agents() != n || demos.meta.num_agents != n {
        return Err(Error::DimensionMismatch(format!(
            "{} action sets, {} observation maps, demonstrations for {} agents",
            n,
            observations.num_agents(),
            demos.meta.num_agents
        )));
    }
    let mut counts: Vec<Vec<f64>> = (0..n).map(|i| vec![0.0; observations.count(i) * action_counts[i]]).collect();
    for traj in &demos.trajectories {
        for (s, a) in traj.steps() {
            if s >= observations.num_states() {
                return Err(Error::IndexOutOfRange {
                    what: "state",
                    index: s,
                    limit: observations.num_states(),
                });
            }
            for i in 0..n {
                if a[i] >= action_counts[i] {
                    return Err(Error::IndexOutOfRange {
                        what: "action",
                        index: a[i],
                        limit: action_counts[i],
                    });
                }
                counts[i][observations.observe(i, s) * action_counts[i] + a[i]] += 1.0;
            }
        }
    }
    let agents = counts
        .into_iter()
        .enumerate()
        .map(|(i, mut table)| {
            let m = action_counts[i];
            for row in table.chunks_mut(m) {
                let total: f64 = row.iter().sum::<f64>() + alpha * m as f64;
                if total > 0.0 {
                    row.iter_mut().for_each(|c| *c = (*c + alpha) / total);
                } else {
                    row.iter_mut().for_each(|c| *c = 1.0 / m as f64);
                }
            }
            AgentPolicy::new(observations.count(i), m, table)
        })
        .collect::<Result<Vec<_>>>()?;
    JointPolicy::new(agents, observations.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MagailConfig {
    pub prior: PriorKind,
    /// Agent rewarded by the zero-sum head.
    pub agent_one: usize,
    /// Generator settings; `batch_size` is `B`, and the rate schedule runs
    /// over the outer `iterations`.
    pub mack: MackConfig,
    pub disc_lr: f64,
    pub disc_steps: usize,
    pub iterations: usize,
    pub bc_pretrain: bool,
    pub bc_smoothing: f64,
    /// Weight decay on the zero-sum value head.
    pub zero_sum_l2: f64,
    /// Evaluate every this many iterations (0: final policy only).
    pub eval_every: usize,
}

impl Default for MagailConfig {
    fn default() -> Self {
        Self {
            prior: PriorKind::Centralized,
            agent_one: 0,
            mack: MackConfig::default(),
            disc_lr: 2.0,
            disc_steps: 20,
            iterations: 100,
            bc_pretrain: true,
            bc_smoothing: 0.1,
            zero_sum_l2: 1.0,
            eval_every: 0,
        }
    }
}

impl MagailConfig {
    pub fn validate(&self) -> Result<()> {
        self.mack.validate()?;
        if !(self.disc_lr > 0.0) || self.disc_steps == 0 {
            return Err(Error::InvalidArgument("discriminator rate and steps must be positive".into()));
        }
        if !(self.bc_smoothing >= 0.0) || !(self.zero_sum_l2 >= 0.0) {
            return Err(Error::InvalidArgument("smoothing and weight decay must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterRecord {
    pub iter: usize,
    pub agent: usize,
    pub disc_obj: f64,
    pub gen_reward_mean: f64,
    pub true_return_mean: Option<f64>,
    pub true_return_std: Option<f64>,
}

pub const RUN_LOG_HEADER: &str = "iter,agent,disc_obj,gen_reward_mean,true_return_mean,true_return_std";

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub method: String,
    pub seed: u64,
    pub config: MagailConfig,
    pub rows: Vec<IterRecord>,
    pub policy: JointPolicy,
    /// Per-agent `(mean, std)` of the final policy, when an evaluator ran.
    pub final_eval: Option<Vec<(f64, f64)>>,
    pub notes: Vec<String>,
}

impl RunRecord {
    pub fn csv(&self) -> String {
        let opt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:.12e}"));
        let mut out = String::from(RUN_LOG_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{:.12e},{:.12e},{},{}",
                r.iter,
                r.agent,
                r.disc_obj,
                r.gen_reward_mean,
                opt(r.true_return_mean),
                opt(r.true_return_std)
            );
        }
        out
    }
}

/// Called with the current policy; returns per-agent `(mean, std)` of the
/// true return. Only evaluation code should hold the true rewards.
pub type Evaluator<'a> = dyn FnMut(&JointPolicy) -> Result<Vec<(f64, f64)>> + 'a;

struct Loop<'a> {
    dynamics: &'a Dynamics,
    cfg: &'a MagailConfig,
    variant: PriorVariant,
    trainable: Vec<bool>,
    reported: Vec<usize>,
    experts: Option<&'a JointPolicy>,
}

fn all_pairs(dynamics: &Dynamics, trajectories: &[Trajectory]) -> Vec<(usize, usize)> {
    let space = dynamics.actions();
    trajectories
        .iter()
        .flat_map(|t| t.steps().map(|(s, a)| (s, space.encode(a))))
        .collect()
}

impl Loop<'_> {
    fn run(
        &self,
        init: &JointPolicy,
        expert_pool: &[(usize, usize)],
        rng: &RngConfig,
        evaluator: &mut Option<&mut Evaluator<'_>>,
        rows: &mut Vec<IterRecord>,
        notes: &mut Vec<String>,
    ) -> Result<JointPolicy> {
        let dynamics = self.dynamics;
        let space = dynamics.actions();
        let n = space.num_agents();
        let cfg = self.cfg;
        let mack_cfg = MackConfig {
            iterations: cfg.iterations,
            ..cfg.mack.clone()
        };
        let mut mack = Mack::new(dynamics, init, mack_cfg)?;
        mack.trainable = self.trainable.clone();
        let mut disc = DiscriminatorParams::zeros(self.variant.clone(), space, dynamics.num_states())?;
        if matches!(self.variant, PriorVariant::ZeroSum { .. }) && self.experts.is_none() {
            notes.push("zero-sum head trained on expert demonstrations versus learner rollouts".into());
        }
        let generator = rng.child("generator");
        for iter in 0..cfg.iterations {
            let trajectories = mack.sample(dynamics, &generator);
            let policy_pairs = all_pairs(dynamics, &trajectories);
            let mut pick = rng.child(format_args!("expert/{iter}")).rng();
            let expert_pairs: Vec<(usize, usize)> = (0..policy_pairs.len())
                .map(|_| expert_pool[pick.gen_range(0..expert_pool.len())])
                .collect();

            let disc_obj = match self.variant {
                PriorVariant::ZeroSum { agent_one } => {
                    let (side_a, side_b) = match self.experts {
                        Some(experts) => {
                            let learner = mack.policy();
                            let a = experts.compose(1 - agent_one, &learner)?;
                            let b = experts.compose(agent_one, &learner)?;
                            let mut r = rng.child(format_args!("pairing/{iter}")).rng();
                            let rollouts = |p: &JointPolicy, r: &mut rand_chacha::ChaCha8Rng| {
                                (0..cfg.mack.batch_size)
                                    .map(|_| sample_trajectory(dynamics, p, cfg.mack.horizon, r))
                                    .collect::<Vec<_>>()
                            };
                            let ta = rollouts(&a, &mut r);
                            let tb = rollouts(&b, &mut r);
                            (all_pairs(dynamics, &ta), all_pairs(dynamics, &tb))
                        }
                        None => (expert_pairs, policy_pairs),
                    };
                    let gap = disc.zero_sum_update(&side_a, &side_b, cfg.disc_lr, cfg.disc_steps, cfg.zero_sum_l2)?;
                    vec![gap; n]
                }
                _ => {
                    let batch = DiscBatch {
                        policy: policy_pairs,
                        expert: expert_pairs,
                    };
                    disc.update(&batch, cfg.disc_lr, cfg.disc_steps)?
                }
            };

            let mut failure = None;
            let batch = RewardedBatch::label(trajectories, space, |s, j, out| {
                if let Err(e) = disc.policy_reward(s, j, out) {
                    failure.get_or_insert(e);
                }
            });
            if let Some(e) = failure {
                return Err(e);
            }
            let steps = batch.rewards.iter().map(Vec::len).sum::<usize>() / n;
            let gen_mean: Vec<f64> = (0..n)
                .map(|i| batch.rewards.iter().flat_map(|r| r.iter().skip(i).step_by(n)).sum::<f64>() / steps as f64)
                .collect();
            mack.update(dynamics, batch)?;

            let due = cfg.eval_every > 0 && ((iter + 1) % cfg.eval_every == 0 || iter + 1 == cfg.iterations);
            let eval = match evaluator.as_mut() {
                Some(f) if due => Some(f(&mack.policy())?),
                _ => None,
            };
            for &i in &self.reported {
                rows.push(IterRecord {
                    iter,
                    agent: i,
                    disc_obj: disc_obj[i],
                    gen_reward_mean: gen_mean[i],
                    true_return_mean: eval.as_ref().map(|e| e[i].0),
                    true_return_std: eval.as_ref().map(|e| e[i].1),
                });
            }
        }
        Ok(mack.policy())
    }
}

fn prepare(
    dynamics: &Dynamics,
    observations: &ObservationMap,
    demos: &DemonstrationSet,
    cfg: &MagailConfig,
) -> Result<(JointPolicy, Vec<(usize, usize)>)> {
    cfg.validate()?;
    dynamics.validate().into_result()?;
    demos.check_against(dynamics)?;
    if observations.num_agents() != dynamics.num_agents() || observations.num_states() != dynamics.num_states() {
        return Err(Error::DimensionMismatch("observation map does not match the game".into()));
    }
    let counts = dynamics.actions().counts();
    let init = if cfg.bc_pretrain {
        behavior_cloning(demos, observations, counts, cfg.bc_smoothing)?
    } else {
        JointPolicy::uniform(observations.clone(), counts)
    };
    let pool = all_pairs(dynamics, &demos.trajectories);
    if pool.is_empty() {
        return Err(Error::InvalidArgument("demonstration set is empty".into()));
    }
    Ok((init, pool))
}

fn variant_for(cfg: &MagailConfig, observations: &ObservationMap, n: usize) -> Result<PriorVariant> {
    Ok(match cfg.prior {
        PriorKind::Centralized => PriorVariant::Centralized,
        PriorKind::Decentralized => PriorVariant::Decentralized(observations.clone()),
        PriorKind::ZeroSum => {
            if n != 2 {
                return Err(Error::InvalidArgument(format!("zero-sum prior needs 2 agents, got {n}")));
            }
            PriorVariant::ZeroSum {
                agent_one: cfg.agent_one,
            }
        }
    })
}

/// Adversarial imitation under `cfg.prior`. `experts` supplies the expert
/// policies for zero-sum side pairing; without them the zero-sum head
/// contrasts demonstrations with learner rollouts.
pub fn train_magail(
    dynamics: &Dynamics,
    observations: &ObservationMap,
    demos: &DemonstrationSet,
    cfg: &MagailConfig,
    experts: Option<&JointPolicy>,
    rng: &RngConfig,
    mut evaluator: Option<&mut Evaluator<'_>>,
) -> Result<RunRecord> {
    let (init, pool) = prepare(dynamics, observations, demos, cfg)?;
    let n = dynamics.num_agents();
    let variant = variant_for(cfg, observations, n)?;
    if let Some(e) = experts {
        e.check_against(dynamics)?;
    }
    let mut rows = Vec::new();
    let mut notes = Vec::new();
    let lp = Loop {
        dynamics,
        cfg,
        variant,
        trainable: vec![true; n],
        reported: (0..n).collect(),
        experts,
    };
    let policy = lp.run(&init, &pool, rng, &mut evaluator, &mut rows, &mut notes)?;
    let final_eval = evaluator.as_mut().map(|f| f(&policy)).transpose()?;
    Ok(RunRecord {
        method: format!("magail_{:?}", cfg.prior).to_lowercase(),
        seed: rng.seed,
        config: cfg.clone(),
        rows,
        policy,
        final_eval,
        notes,
    })
}

/// Per-agent GAIL: each agent learns against its own decentralized
/// discriminator while the others stay at their cloned policies; the
/// separately trained agents are then assembled. `cfg.prior` is ignored.
pub fn train_gail_baseline(
    dynamics: &Dynamics,
    observations: &ObservationMap,
    demos: &DemonstrationSet,
    cfg: &MagailConfig,
    rng: &RngConfig,
    mut evaluator: Option<&mut Evaluator<'_>>,
) -> Result<RunRecord> {
    let cfg = MagailConfig {
        prior: PriorKind::Decentralized,
        ..cfg.clone()
    };
    let (init, pool) = prepare(dynamics, observations, demos, &cfg)?;
    let n = dynamics.num_agents();
    let mut rows = Vec::new();
    let mut notes = Vec::new();
    let mut assembled = init.clone();
    for i in 0..n {
        let mut trainable = vec![false; n];
        trainable[i] = true;
        let lp = Loop {
            dynamics,
            cfg: &cfg,
            variant: PriorVariant::Decentralized(observations.clone()),
            trainable,
            reported: vec![i],
            experts: None,
        };
        let trained = lp.run(&init, &pool, &rng.child(format_args!("agent/{i}")), &mut evaluator, &mut rows, &mut notes)?;
        assembled = assembled.with_agent_policy(i, trained.agent(i).clone())?;
    }
    let final_eval = evaluator.as_mut().map(|f| f(&assembled)).transpose()?;
    Ok(RunRecord {
        method: "gail".into(),
        seed: rng.seed,
        config: cfg,
        rows,
        policy: assembled,
        final_eval,
        notes,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub mean: Vec<f64>,
    /// Sample standard deviation across episodes.
    pub std: Vec<f64>,
    pub episodes: usize,
    /// Exact infinite-horizon expected return.
    pub exact: Vec<f64>,
}

impl Evaluation {
    pub fn standard_error(&self, agent: usize) -> f64 {
        self.std[agent] / (self.episodes as f64).sqrt()
    }

    pub fn summary(&self) -> Vec<(f64, f64)> {
        self.mean.iter().copied().zip(self.std.iter().copied()).collect()
    }
}

/// Monte-Carlo discounted returns over `episodes` rollouts of length
/// `horizon`, plus the exact occupancy-based return.
pub fn evaluate_policy(
    game: &MarkovGame,
    policy: &JointPolicy,
    episodes: usize,
    horizon: usize,
    rng: &RngConfig,
) -> Result<Evaluation> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("evaluation needs at least one episode".into()));
    }
    let exact = expected_returns(game, policy)?;
    let n = game.num_agents();
    let gamma = game.discount();
    let mut r = rng.rng();
    let mut returns = vec![Vec::with_capacity(episodes); n];
    for _ in 0..episodes {
        let traj = sample_trajectory(game.dynamics(), policy, horizon, &mut r);
        let mut g = vec![0.0; n];
        let mut disc = 1.0;
        for (s, a) in traj.steps() {
            let j = game.actions().encode(a);
            for (i, gi) in g.iter_mut().enumerate() {
                *gi += disc * game.reward(i, s, j);
            }
            disc *= gamma;
        }
        for (i, gi) in g.into_iter().enumerate() {
            returns[i].push(gi);
        }
    }
    let (mut mean, mut std) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for xs in &returns {
        let m = xs.iter().sum::<f64>() / episodes as f64;
        let var = if episodes > 1 {
            xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (episodes - 1) as f64
        } else {
            0.0
        };
        mean.push(m);
        std.push(var.sqrt());
    }
    Ok(Evaluation {
        mean,
        std,
        episodes,
        exact,
    })
}
