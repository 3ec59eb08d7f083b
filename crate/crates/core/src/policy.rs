//! Observation maps and stochastic policies.

use crate::error::{check_index, Error, Result};
use crate::game::{Dynamics, JointActionSpace};

/// Tolerance on policy rows.
pub const ROW_TOL: f64 = 1e-12;

/// Per-agent deterministic projection `o_i(s)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationMap {
    maps: Vec<Vec<usize>>,
    counts: Vec<usize>,
}

impl ObservationMap {
    pub fn new(maps: Vec<Vec<usize>>, counts: Vec<usize>) -> Result<Self> {
        if maps.len() != counts.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} observation maps, {} observation counts",
                maps.len(),
                counts.len()
            )));
        }
        let num_states = maps.first().map_or(0, Vec::len);
        for (map, &count) in maps.iter().zip(&counts) {
            if map.len() != num_states {
                return Err(Error::DimensionMismatch(
                    "observation maps cover different state counts".into(),
                ));
            }
            for &o in map {
                check_index("observation", o, count)?;
            }
        }
        Ok(Self { maps, counts })
    }

    /// Every agent observes the full state.
    pub fn identity(num_agents: usize, num_states: usize) -> Self {
        Self {
            maps: vec![(0..num_states).collect(); num_agents],
            counts: vec![num_states; num_agents],
        }
    }

    pub fn num_agents(&self) -> usize {
        self.maps.len()
    }

    pub fn num_states(&self) -> usize {
        self.maps.first().map_or(0, Vec::len)
    }

    pub fn observe(&self, agent: usize, state: usize) -> usize {
        self.maps[agent][state]
    }

    pub fn count(&self, agent: usize) -> usize {
        self.counts[agent]
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn agent_map(&self, agent: usize) -> &[usize] {
        &self.maps[agent]
    }

    pub fn is_identity(&self, agent: usize) -> bool {
        self.counts[agent] == self.num_states()
            && self.maps[agent].iter().enumerate().all(|(s, &o)| s == o)
    }

    /// Copy of `self` with agent `agent`'s projection taken from `donor`.
    pub fn with_agent_from(&self, agent: usize, donor: &ObservationMap) -> Self {
        let mut out = self.clone();
        out.maps[agent] = donor.maps[agent].clone();
        out.counts[agent] = donor.counts[agent];
        out
    }
}

/// Table `π_i(a | o)` with one probability row per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentPolicy {
    num_obs: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

impl AgentPolicy {
    /// Row-major probabilities; every row must be a distribution.
    pub fn new(num_obs: usize, num_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != num_obs * num_actions || num_actions == 0 {
            return Err(Error::DimensionMismatch(format!(
                "policy table has {} entries, expected {} x {}",
                probs.len(),
                num_obs,
                num_actions
            )));
        }
        let policy = Self {
            num_obs,
            num_actions,
            probs,
        };
        for o in 0..num_obs {
            let row = policy.row(o);
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > ROW_TOL {
                return Err(Error::InvalidArgument(format!(
                    "policy row {o} is not a distribution (sum {sum})"
                )));
            }
        }
        Ok(policy)
    }

    pub fn uniform(num_obs: usize, num_actions: usize) -> Self {
        Self {
            num_obs,
            num_actions,
            probs: vec![1.0 / num_actions as f64; num_obs * num_actions],
        }
    }

    /// One-hot rows, `actions[o]` chosen at observation `o`.
    pub fn deterministic(actions: &[usize], num_actions: usize) -> Self {
        let mut probs = vec![0.0; actions.len() * num_actions];
        for (o, &a) in actions.iter().enumerate() {
            probs[o * num_actions + a] = 1.0;
        }
        Self {
            num_obs: actions.len(),
            num_actions,
            probs,
        }
    }

    /// Row-wise softmax of a logit table.
    pub fn softmax(num_obs: usize, num_actions: usize, logits: &[f64]) -> Self {
        let mut probs = vec![0.0; num_obs * num_actions];
        for o in 0..num_obs {
            let row = &logits[o * num_actions..(o + 1) * num_actions];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let out = &mut probs[o * num_actions..(o + 1) * num_actions];
            let mut total = 0.0;
            for (p, &l) in out.iter_mut().zip(row) {
                *p = (l - max).exp();
                total += *p;
            }
            for p in out.iter_mut() {
                *p /= total;
            }
        }
        Self {
            num_obs,
            num_actions,
            probs,
        }
    }

    pub fn num_obs(&self) -> usize {
        self.num_obs
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn row(&self, obs: usize) -> &[f64] {
        &self.probs[obs * self.num_actions..(obs + 1) * self.num_actions]
    }

    pub fn prob(&self, obs: usize, action: usize) -> f64 {
        self.probs[obs * self.num_actions + action]
    }

    pub fn table(&self) -> &[f64] {
        &self.probs
    }

    /// Draws an action from row `obs` with a uniform variate `u`.
    pub fn sample(&self, obs: usize, u: f64) -> usize {
        sample_index(self.row(obs), u)
    }
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = k;
        if u < acc {
            return k;
        }
    }
    last
}

/// Product policy `π(a | s) = Π_i π_i(a_i | o_i(s))`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPolicy {
    agents: Vec<AgentPolicy>,
    observations: ObservationMap,
}

impl JointPolicy {
    pub fn new(agents: Vec<AgentPolicy>, observations: ObservationMap) -> Result<Self> {
        if agents.len() != observations.num_agents() {
            return Err(Error::DimensionMismatch(format!(
                "{} agent policies for {} observation maps",
                agents.len(),
                observations.num_agents()
            )));
        }
        for (i, p) in agents.iter().enumerate() {
            if p.num_obs() != observations.count(i) {
                return Err(Error::DimensionMismatch(format!(
                    "agent {i} policy has {} rows but {} observations",
                    p.num_obs(),
                    observations.count(i)
                )));
            }
        }
        Ok(Self {
            agents,
            observations,
        })
    }

    /// Uniform play over every agent's actions.
    pub fn uniform(observations: ObservationMap, action_counts: &[usize]) -> Self {
        let agents = action_counts
            .iter()
            .enumerate()
            .map(|(i, &n)| AgentPolicy::uniform(observations.count(i), n))
            .collect();
        Self {
            agents,
            observations,
        }
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn agent(&self, i: usize) -> &AgentPolicy {
        &self.agents[i]
    }

    pub fn agents(&self) -> &[AgentPolicy] {
        &self.agents
    }

    pub fn observations(&self) -> &ObservationMap {
        &self.observations
    }

    /// `π_i(· | o_i(s))`.
    pub fn agent_row(&self, agent: usize, state: usize) -> &[f64] {
        self.agents[agent].row(self.observations.observe(agent, state))
    }

    pub fn agent_prob(&self, agent: usize, state: usize, action: usize) -> f64 {
        self.agent_row(agent, state)[action]
    }

    /// Probability of a joint action given as per-agent indices.
    pub fn prob(&self, state: usize, actions: &[usize]) -> Result<f64> {
        check_index("state", state, self.observations.num_states())?;
        if actions.len() != self.agents.len() {
            return Err(Error::DimensionMismatch(format!(
                "joint action has {} components for {} agents",
                actions.len(),
                self.agents.len()
            )));
        }
        let mut p = 1.0;
        for (i, &a) in actions.iter().enumerate() {
            check_index("action", a, self.agents[i].num_actions())?;
            p *= self.agent_prob(i, state, a);
        }
        Ok(p)
    }

    /// Probability of mixed-radix joint action `joint`.
    pub fn joint_prob(&self, space: &JointActionSpace, state: usize, joint: usize) -> f64 {
        (0..self.agents.len())
            .map(|i| self.agent_prob(i, state, space.component(joint, i)))
            .product()
    }

    /// Fills `out[joint] = π(joint | state)` for every joint action.
    pub fn joint_distribution(&self, space: &JointActionSpace, state: usize, out: &mut [f64]) {
        out[0] = 1.0;
        let mut filled = 1;
        // Expand agent by agent; agent 0 is the most significant digit.
        for i in 0..self.agents.len() {
            let row = self.agent_row(i, state);
            let n = row.len();
            for k in (0..filled).rev() {
                let base = out[k];
                for a in (0..n).rev() {
                    out[k * n + a] = base * row[a];
                }
            }
            filled *= n;
        }
        debug_assert_eq!(filled, space.size());
    }

    /// Dense `π(joint | s)` for all states, laid out `[s][joint]`.
    pub fn joint_table(&self, space: &JointActionSpace) -> Vec<f64> {
        let n = self.observations.num_states();
        let j = space.size();
        let mut out = vec![0.0; n * j];
        for s in 0..n {
            self.joint_distribution(space, s, &mut out[s * j..(s + 1) * j]);
        }
        out
    }

    /// Probability that agents other than `agent` play `others` (mixed-radix
    /// index over the remaining agents).
    pub fn others_prob(&self, space: &JointActionSpace, state: usize, agent: usize, others: usize) -> f64 {
        let joint = space.joint_with(agent, 0, others);
        (0..self.agents.len())
            .filter(|&k| k != agent)
            .map(|k| self.agent_prob(k, state, space.component(joint, k)))
            .product()
    }

    /// Agent `agent` replaced by `policy` (same observation projection).
    pub fn with_agent_policy(&self, agent: usize, policy: AgentPolicy) -> Result<Self> {
        check_index("agent", agent, self.agents.len())?;
        if policy.num_obs() != self.agents[agent].num_obs()
            || policy.num_actions() != self.agents[agent].num_actions()
        {
            return Err(Error::DimensionMismatch(format!(
                "replacement policy for agent {agent} has shape {}x{}, expected {}x{}",
                policy.num_obs(),
                policy.num_actions(),
                self.agents[agent].num_obs(),
                self.agents[agent].num_actions()
            )));
        }
        let mut out = self.clone();
        out.agents[agent] = policy;
        Ok(out)
    }

    /// `(π_i, π'_{-i})`: agent `agent` (policy and projection) from `own`,
    /// everyone else from `self`.
    pub fn compose(&self, agent: usize, own: &JointPolicy) -> Result<Self> {
        check_index("agent", agent, self.agents.len())?;
        if own.num_agents() != self.num_agents()
            || own.agents[agent].num_actions() != self.agents[agent].num_actions()
            || own.observations.num_states() != self.observations.num_states()
        {
            return Err(Error::DimensionMismatch(format!(
                "cannot compose agent {agent}: incompatible joint policies"
            )));
        }
        Ok(Self {
            agents: self
                .agents
                .iter()
                .enumerate()
                .map(|(k, p)| if k == agent { own.agents[agent].clone() } else { p.clone() })
                .collect(),
            observations: self.observations.with_agent_from(agent, &own.observations),
        })
    }

    /// Checks the policy against a game's shape.
    pub fn check_against(&self, dynamics: &Dynamics) -> Result<()> {
        if self.num_agents() != dynamics.num_agents()
            || self.observations.num_states() != dynamics.num_states()
        {
            return Err(Error::DimensionMismatch(format!(
                "policy covers {} agents / {} states, game has {} / {}",
                self.num_agents(),
                self.observations.num_states(),
                dynamics.num_agents(),
                dynamics.num_states()
            )));
        }
        for (i, p) in self.agents.iter().enumerate() {
            if p.num_actions() != dynamics.actions().count(i) {
                return Err(Error::DimensionMismatch(format!(
                    "agent {i} policy has {} actions, game has {}",
                    p.num_actions(),
                    dynamics.actions().count(i)
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_agents(p0: AgentPolicy, p1: AgentPolicy) -> JointPolicy {
        JointPolicy::new(vec![p0, p1], ObservationMap::identity(2, 1)).unwrap()
    }

    #[test]
    fn deterministic_agents_give_probability_one() {
        let pi = two_agents(
            AgentPolicy::deterministic(&[1], 2),
            AgentPolicy::deterministic(&[0], 3),
        );
        assert_eq!(pi.prob(0, &[1, 0]).unwrap(), 1.0);
        assert_eq!(pi.prob(0, &[0, 0]).unwrap(), 0.0);
    }

    #[test]
    fn uniform_pair_gives_quarter() {
        let pi = two_agents(AgentPolicy::uniform(1, 2), AgentPolicy::uniform(1, 2));
        assert_eq!(pi.prob(0, &[1, 0]).unwrap(), 0.25);
    }

    #[test]
    fn uniform_times_deterministic_gives_half() {
        let pi = two_agents(AgentPolicy::uniform(1, 2), AgentPolicy::deterministic(&[1], 2));
        assert_eq!(pi.prob(0, &[0, 1]).unwrap(), 0.5);
    }

    #[test]
    fn out_of_range_indices_error() {
        let pi = two_agents(AgentPolicy::uniform(1, 2), AgentPolicy::uniform(1, 2));
        assert!(pi.prob(0, &[2, 0]).is_err());
        assert!(pi.prob(1, &[0, 0]).is_err());
        assert!(pi.prob(0, &[0]).is_err());
    }

    #[test]
    fn joint_distribution_matches_products() {
        let p0 = AgentPolicy::new(1, 2, vec![0.3, 0.7]).unwrap();
        let p1 = AgentPolicy::new(1, 3, vec![0.2, 0.5, 0.3]).unwrap();
        let pi = two_agents(p0, p1);
        let space = JointActionSpace::new(vec![2, 3]);
        let mut out = vec![0.0; 6];
        pi.joint_distribution(&space, 0, &mut out);
        for j in 0..6 {
            let a = space.decode(j);
            assert!((out[j] - pi.prob(0, &a).unwrap()).abs() < 1e-15);
            assert!((out[j] - pi.joint_prob(&space, 0, j)).abs() < 1e-15);
        }
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn compose_with_self_is_identity() {
        let p0 = AgentPolicy::new(1, 2, vec![0.3, 0.7]).unwrap();
        let pi = two_agents(p0, AgentPolicy::uniform(1, 2));
        assert_eq!(pi.compose(1, &pi).unwrap(), pi);
    }

    #[test]
    fn bad_rows_are_rejected() {
        assert!(AgentPolicy::new(1, 2, vec![0.5, 0.6]).is_err());
        assert!(AgentPolicy::new(1, 2, vec![-0.1, 1.1]).is_err());
        assert!(AgentPolicy::new(2, 2, vec![0.5, 0.5]).is_err());
    }
}
