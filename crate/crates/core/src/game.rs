//! Finite N-agent Markov games.
//!
//! A game is split into reward-free [`Dynamics`] (states, action sets,
//! transitions, initial distribution, discount) and the per-agent reward
//! tables. Learners that must not see rewards are handed only the dynamics.

use std::fmt;

use crate::error::{check_index, Error, Result};

/// Tolerance on probability vectors (transition rows, initial distribution).
pub const PROB_TOL: f64 = 1e-12;

/// Mixed-radix indexing of joint actions.
///
/// Agent 0 is the most significant digit, so joint actions enumerate in
/// lexicographic order of `(a_0, ..., a_{N-1})`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointActionSpace {
    counts: Vec<usize>,
    strides: Vec<usize>,
    size: usize,
}

impl JointActionSpace {
    pub fn new(counts: Vec<usize>) -> Self {
        let mut strides = vec![1; counts.len()];
        let mut size = 1usize;
        for i in (0..counts.len()).rev() {
            strides[i] = size;
            size *= counts[i];
        }
        Self {
            counts,
            strides,
            size,
        }
    }

    pub fn num_agents(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn count(&self, agent: usize) -> usize {
        self.counts[agent]
    }

    /// Number of joint actions.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn encode(&self, actions: &[usize]) -> usize {
        actions
            .iter()
            .zip(&self.strides)
            .map(|(a, stride)| a * stride)
            .sum()
    }

    pub fn try_encode(&self, actions: &[usize]) -> Result<usize> {
        if actions.len() != self.counts.len() {
            return Err(Error::DimensionMismatch(format!(
                "joint action has {} components, game has {} agents",
                actions.len(),
                self.counts.len()
            )));
        }
        for (&a, &n) in actions.iter().zip(&self.counts) {
            check_index("action", a, n)?;
        }
        Ok(self.encode(actions))
    }

    pub fn decode_into(&self, joint: usize, out: &mut [usize]) {
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = (joint / self.strides[i]) % self.counts[i];
        }
    }

    pub fn decode(&self, joint: usize) -> Vec<usize> {
        let mut out = vec![0; self.counts.len()];
        self.decode_into(joint, &mut out);
        out
    }

    /// Action of `agent` inside joint action `joint`.
    pub fn component(&self, joint: usize, agent: usize) -> usize {
        (joint / self.strides[agent]) % self.counts[agent]
    }

    /// Number of joint actions of the agents other than `agent`.
    pub fn others_size(&self, agent: usize) -> usize {
        self.size / self.counts[agent]
    }

    /// Mixed-radix index of `a_{-i}` (remaining agents in their original order).
    pub fn others_index(&self, joint: usize, agent: usize) -> usize {
        let high = joint / (self.strides[agent] * self.counts[agent]);
        let low = joint % self.strides[agent];
        high * self.strides[agent] + low
    }

    /// Inverse of [`others_index`](Self::others_index): splice `action` for
    /// `agent` into the others' index.
    pub fn joint_with(&self, agent: usize, action: usize, others: usize) -> usize {
        let stride = self.strides[agent];
        let high = others / stride;
        let low = others % stride;
        high * stride * self.counts[agent] + action * stride + low
    }
}

/// Sparse transition tensor `T(s' | s, a)` in compressed rows, one row per
/// `(state, joint action)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTable {
    num_states: usize,
    num_joint: usize,
    offsets: Vec<usize>,
    targets: Vec<usize>,
    probs: Vec<f64>,
}

impl TransitionTable {
    /// Builds the table by asking `row(s, joint)` for the successor
    /// distribution. Entries with zero probability are dropped and repeated
    /// successors are merged.
    pub fn from_fn<F>(num_states: usize, num_joint: usize, mut row: F) -> Self
    where
        F: FnMut(usize, usize) -> Vec<(usize, f64)>,
    {
        let mut offsets = Vec::with_capacity(num_states * num_joint + 1);
        let mut targets = Vec::new();
        let mut probs = Vec::new();
        offsets.push(0);
        for s in 0..num_states {
            for j in 0..num_joint {
                let mut entries = row(s, j);
                entries.sort_by_key(|e| e.0);
                let start = targets.len();
                for (next, p) in entries {
                    if p == 0.0 {
                        continue;
                    }
                    if targets.len() > start && *targets.last().unwrap() == next {
                        *probs.last_mut().unwrap() += p;
                    } else {
                        targets.push(next);
                        probs.push(p);
                    }
                }
                offsets.push(targets.len());
            }
        }
        Self {
            num_states,
            num_joint,
            offsets,
            targets,
            probs,
        }
    }

    /// Dense input laid out as `[s][joint][s']`.
    pub fn from_dense(num_states: usize, num_joint: usize, dense: &[f64]) -> Result<Self> {
        if dense.len() != num_states * num_joint * num_states {
            return Err(Error::DimensionMismatch(format!(
                "dense transition tensor has {} entries, expected {}",
                dense.len(),
                num_states * num_joint * num_states
            )));
        }
        Ok(Self::from_fn(num_states, num_joint, |s, j| {
            let base = (s * num_joint + j) * num_states;
            (0..num_states).map(|n| (n, dense[base + n])).collect()
        }))
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_joint(&self) -> usize {
        self.num_joint
    }

    /// Successors `(s', p)` of `(state, joint)`.
    pub fn row(&self, state: usize, joint: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = state * self.num_joint + joint;
        let range = self.offsets[r]..self.offsets[r + 1];
        self.targets[range.clone()]
            .iter()
            .copied()
            .zip(self.probs[range].iter().copied())
    }

    pub fn prob(&self, state: usize, joint: usize, next: usize) -> f64 {
        self.row(state, joint)
            .find(|&(n, _)| n == next)
            .map_or(0.0, |(_, p)| p)
    }

    /// Scales every probability in one row. Only useful for building
    /// deliberately broken games.
    pub fn scale_row(&mut self, state: usize, joint: usize, factor: f64) {
        let r = state * self.num_joint + joint;
        for p in &mut self.probs[self.offsets[r]..self.offsets[r + 1]] {
            *p *= factor;
        }
    }

    pub fn nnz(&self) -> usize {
        self.targets.len()
    }
}

/// Everything about a game except its rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct Dynamics {
    num_states: usize,
    actions: JointActionSpace,
    transition: TransitionTable,
    initial: Vec<f64>,
    discount: f64,
}

impl Dynamics {
    pub fn new(
        num_states: usize,
        actions: JointActionSpace,
        transition: TransitionTable,
        initial: Vec<f64>,
        discount: f64,
    ) -> Result<Self> {
        if transition.num_states() != num_states || transition.num_joint() != actions.size() {
            return Err(Error::DimensionMismatch(format!(
                "transition table is {}x{}, game is {}x{}",
                transition.num_states(),
                transition.num_joint(),
                num_states,
                actions.size()
            )));
        }
        if initial.len() != num_states {
            return Err(Error::DimensionMismatch(format!(
                "initial distribution has {} entries for {} states",
                initial.len(),
                num_states
            )));
        }
        Ok(Self {
            num_states,
            actions,
            transition,
            initial,
            discount,
        })
    }

    pub fn num_agents(&self) -> usize {
        self.actions.num_agents()
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn actions(&self) -> &JointActionSpace {
        &self.actions
    }

    pub fn num_joint(&self) -> usize {
        self.actions.size()
    }

    pub fn transition(&self) -> &TransitionTable {
        &self.transition
    }

    pub fn transition_mut(&mut self) -> &mut TransitionTable {
        &mut self.transition
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    fn collect_violations(&self, out: &mut Vec<Violation>) {
        let n = self.num_states;
        for s in 0..n {
            for j in 0..self.num_joint() {
                let mut sum = 0.0;
                for (next, p) in self.transition.row(s, j) {
                    if p < 0.0 || !p.is_finite() {
                        out.push(Violation::new("transition", vec![s, j, next], p));
                    }
                    if next >= n {
                        out.push(Violation::new("transition_target", vec![s, j, next], next as f64));
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > PROB_TOL {
                    out.push(Violation::new("transition_row_sum", vec![s, j], sum));
                }
            }
        }
        let mut sum = 0.0;
        for (s, &p) in self.initial.iter().enumerate() {
            if p < 0.0 || !p.is_finite() {
                out.push(Violation::new("initial", vec![s], p));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > PROB_TOL {
            out.push(Violation::new("initial_sum", vec![], sum));
        }
        if !(0.0..1.0).contains(&self.discount) {
            out.push(Violation::new("discount", vec![], self.discount));
        }
        if self.actions.counts().contains(&0) || self.num_states == 0 {
            out.push(Violation::new("dimensions", vec![], 0.0));
        }
    }

    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        self.collect_violations(&mut violations);
        ValidationReport { violations }
    }

    /// Samples a successor of `(state, joint)` from a uniform draw `u`.
    pub fn sample_next(&self, state: usize, joint: usize, u: f64) -> usize {
        let mut acc = 0.0;
        let mut last = state;
        for (next, p) in self.transition.row(state, joint) {
            acc += p;
            last = next;
            if u < acc {
                return next;
            }
        }
        last
    }
}

/// One failed invariant: which field, where, and the offending value.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: &'static str,
    pub index: Vec<usize>,
    pub magnitude: f64,
}

impl Violation {
    fn new(field: &'static str, index: Vec<usize>, magnitude: f64) -> Self {
        Self {
            field,
            index,
            magnitude,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(Error::InvalidGame(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "ok");
        }
        for (k, v) in self.violations.iter().take(8).enumerate() {
            if k > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{} at {:?} = {}", v.field, v.index, v.magnitude)?;
        }
        if self.violations.len() > 8 {
            write!(f, "; ... {} more", self.violations.len() - 8)?;
        }
        Ok(())
    }
}

/// A finite Markov game with per-agent rewards `r_i(s, a)` on joint actions.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovGame {
    id: String,
    dynamics: Dynamics,
    /// `rewards[i][s * |A| + joint]`
    rewards: Vec<Vec<f64>>,
    reward_bound: f64,
}

impl MarkovGame {
    /// Assembles a game without checking invariants; see [`validate`](Self::validate).
    pub fn new(
        id: impl Into<String>,
        dynamics: Dynamics,
        rewards: Vec<Vec<f64>>,
        reward_bound: f64,
    ) -> Result<Self> {
        let cells = dynamics.num_states() * dynamics.num_joint();
        if rewards.len() != dynamics.num_agents() || rewards.iter().any(|r| r.len() != cells) {
            return Err(Error::DimensionMismatch(format!(
                "reward tables must be {} x {}",
                dynamics.num_agents(),
                cells
            )));
        }
        Ok(Self {
            id: id.into(),
            dynamics,
            rewards,
            reward_bound,
        })
    }

    /// Like [`new`](Self::new) with `R_max` taken as the largest reward magnitude.
    pub fn with_tight_bound(
        id: impl Into<String>,
        dynamics: Dynamics,
        rewards: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let bound = rewards
            .iter()
            .flatten()
            .fold(0.0f64, |m, r| m.max(r.abs()));
        Self::new(id, dynamics, rewards, bound)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    pub fn dynamics_mut(&mut self) -> &mut Dynamics {
        &mut self.dynamics
    }

    pub fn num_agents(&self) -> usize {
        self.dynamics.num_agents()
    }

    pub fn num_states(&self) -> usize {
        self.dynamics.num_states()
    }

    pub fn num_joint(&self) -> usize {
        self.dynamics.num_joint()
    }

    pub fn actions(&self) -> &JointActionSpace {
        self.dynamics.actions()
    }

    pub fn discount(&self) -> f64 {
        self.dynamics.discount()
    }

    pub fn reward_bound(&self) -> f64 {
        self.reward_bound
    }

    pub fn reward(&self, agent: usize, state: usize, joint: usize) -> f64 {
        self.rewards[agent][state * self.num_joint() + joint]
    }

    pub fn reward_table(&self, agent: usize) -> &[f64] {
        &self.rewards[agent]
    }

    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        self.dynamics.collect_violations(&mut violations);
        let joint = self.num_joint();
        for (i, table) in self.rewards.iter().enumerate() {
            for (cell, &r) in table.iter().enumerate() {
                if !r.is_finite() || r.abs() > self.reward_bound {
                    violations.push(Violation::new("reward", vec![i, cell / joint, cell % joint], r));
                }
            }
        }
        ValidationReport { violations }
    }

    /// True when every agent's reward table equals agent 0's entrywise.
    pub fn first_reward_mismatch(&self) -> Option<(usize, usize, usize)> {
        let joint = self.num_joint();
        for i in 1..self.num_agents() {
            for (cell, (&a, &b)) in self.rewards[0].iter().zip(&self.rewards[i]).enumerate() {
                if a != b {
                    return Some((i, cell / joint, cell % joint));
                }
            }
        }
        None
    }
}
