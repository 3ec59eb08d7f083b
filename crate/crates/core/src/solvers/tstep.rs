//! Unrolled (t-step) Nash constraints and the Lagrangian dual built on them.
//!
//! Prefixes are lists of `(state, own action)` pairs. [`tstep_q`] and
//! [`tstep_nash_check`] count pairs (`t = 1` is the one-step `q̂`), while the
//! dual functions count transitions (`t = 0` is a single pair).

use crate::error::{check_index, Error, Result};
use crate::game::MarkovGame;
use crate::policy::JointPolicy;
use crate::solvers::values::{bellman_values_unchecked, q_values_unchecked, QTable, ValueTable};

/// Largest number of prefixes any enumeration here will visit.
pub const PREFIX_BUDGET: u128 = 10_000_000;

/// Agent-`i` view of one transition with the other agents marginalized out:
/// `mass(s, a_i, s') = Σ_{a_{-i}} π_{-i}(a_{-i}|s) T(s'|s, a)` and the
/// posterior-mean reward given that `s'` was reached.
struct StepModel {
    num_states: usize,
    num_actions: usize,
    mass: Vec<f64>,
    reward: Vec<f64>,
}

impl StepModel {
    fn new(game: &MarkovGame, others: &JointPolicy, agent: usize) -> Self {
        let space = game.actions();
        let ns = game.num_states();
        let na = space.count(agent);
        let t = game.dynamics().transition();
        let mut mass = vec![0.0; ns * na * ns];
        let mut reward = vec![0.0; ns * na * ns];
        for s in 0..ns {
            for o in 0..space.others_size(agent) {
                let w = others.others_prob(space, s, agent, o);
                if w == 0.0 {
                    continue;
                }
                for a in 0..na {
                    let joint = space.joint_with(agent, a, o);
                    let r = game.reward(agent, s, joint);
                    for (next, p) in t.row(s, joint) {
                        let k = (s * na + a) * ns + next;
                        mass[k] += w * p;
                        reward[k] += w * p * r;
                    }
                }
            }
        }
        for (r, m) in reward.iter_mut().zip(&mass) {
            *r = if *m > 0.0 { *r / m } else { 0.0 };
        }
        Self {
            num_states: ns,
            num_actions: na,
            mass,
            reward,
        }
    }

    fn index(&self, s: usize, a: usize, next: usize) -> usize {
        (s * self.num_actions + a) * self.num_states + next
    }
}

fn check_budget(required: u128) -> Result<()> {
    if required > PREFIX_BUDGET {
        Err(Error::BudgetExceeded {
            required,
            budget: PREFIX_BUDGET,
        })
    } else {
        Ok(())
    }
}

fn saturating_pow(base: u128, exp: usize) -> u128 {
    (0..exp).fold(1u128, |acc, _| acc.saturating_mul(base))
}

/// `Q_i^(t)` for one prefix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TStepValue {
    pub value: f64,
    /// False when some transition along the prefix has probability zero
    /// under `π_{-i}`; those steps then contribute nothing.
    pub reachable: bool,
}

/// Expected discounted return of agent `agent` conditioned on visiting the
/// states of `prefix` while playing its actions, others following `π_{-i}`,
/// then `π` after the last pair:
/// `Σ_{j<t-1} γ^j E[r_i(s^j, a^j) | s^j, a_i^j, s^{j+1}] + γ^{t-1} q̂_i(s^{t-1}, a_i^{t-1})`.
pub fn tstep_q(
    game: &MarkovGame,
    policy: &JointPolicy,
    agent: usize,
    prefix: &[(usize, usize)],
) -> Result<TStepValue> {
    game.validate().into_result()?;
    policy.check_against(game.dynamics())?;
    check_index("agent", agent, game.num_agents())?;
    if prefix.is_empty() {
        return Err(Error::InvalidArgument("t-step prefix must hold at least one pair".into()));
    }
    for &(s, a) in prefix {
        check_index("state", s, game.num_states())?;
        check_index("action", a, game.actions().count(agent))?;
    }
    let v = bellman_values_unchecked(game, policy);
    let q = q_values_unchecked(game, policy, &v);
    let model = StepModel::new(game, policy, agent);
    let gamma = game.discount();
    let mut value = 0.0;
    let mut reachable = true;
    let mut discount = 1.0;
    for w in prefix.windows(2) {
        let k = model.index(w[0].0, w[0].1, w[1].0);
        if model.mass[k] > 0.0 {
            value += discount * model.reward[k];
        } else {
            reachable = false;
        }
        discount *= gamma;
    }
    let &(s, a) = prefix.last().expect("non-empty");
    value += discount * q.get(agent, s, a);
    Ok(TStepValue { value, reachable })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TStepReport {
    pub is_nash: bool,
    /// `max Q_i^(t)(τ_i) - v̂_i(s^0)` over reachable prefixes.
    pub max_violation: f64,
    /// Worst `(agent, prefix)`, set when the policy is not Nash.
    pub witness: Option<(usize, Vec<(usize, usize)>)>,
    pub prefixes_checked: u64,
    pub unreachable_skipped: u64,
}

struct CheckSearch<'a> {
    model: &'a StepModel,
    q: &'a QTable,
    agent: usize,
    t: usize,
    gamma: f64,
    v0: f64,
    path: Vec<(usize, usize)>,
    best: f64,
    best_path: Vec<(usize, usize)>,
    checked: u64,
    skipped: u64,
}

impl CheckSearch<'_> {
    fn visit(&mut self, acc: f64, discount: f64) {
        let &(s, a) = self.path.last().expect("non-empty path");
        if self.path.len() == self.t {
            self.checked += 1;
            let gap = acc + discount * self.q.get(self.agent, s, a) - self.v0;
            if gap > self.best {
                self.best = gap;
                self.best_path = self.path.clone();
            }
            return;
        }
        for next in 0..self.model.num_states {
            let k = self.model.index(s, a, next);
            if self.model.mass[k] == 0.0 {
                self.skipped += 1;
                continue;
            }
            let acc = acc + discount * self.model.reward[k];
            for a_next in 0..self.model.num_actions {
                self.path.push((next, a_next));
                self.visit(acc, discount * self.gamma);
                self.path.pop();
            }
        }
    }
}

/// Checks `v̂_i(s^0) >= Q_i^(t)(τ_i) - tol` for every agent and every
/// reachable length-`t` prefix. Unreachable prefixes are skipped.
pub fn tstep_nash_check(game: &MarkovGame, policy: &JointPolicy, t: usize, tol: f64) -> Result<TStepReport> {
    game.validate().into_result()?;
    policy.check_against(game.dynamics())?;
    if t == 0 {
        return Err(Error::InvalidArgument("t must be at least 1".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let joint = game.num_joint() as u128;
    check_budget(saturating_pow((game.num_states() as u128).saturating_mul(joint), t))?;

    let v = bellman_values_unchecked(game, policy);
    let q = q_values_unchecked(game, policy, &v);
    let mut worst = f64::NEG_INFINITY;
    let mut witness = (0, Vec::new());
    let (mut checked, mut skipped) = (0, 0);
    for agent in 0..game.num_agents() {
        let model = StepModel::new(game, policy, agent);
        for s0 in 0..game.num_states() {
            for a0 in 0..model.num_actions {
                let mut search = CheckSearch {
                    model: &model,
                    q: &q,
                    agent,
                    t,
                    gamma: game.discount(),
                    v0: v.get(agent, s0),
                    path: vec![(s0, a0)],
                    best: f64::NEG_INFINITY,
                    best_path: Vec::new(),
                    checked: 0,
                    skipped: 0,
                };
                search.visit(0.0, 1.0);
                checked += search.checked;
                skipped += search.skipped;
                if search.best > worst {
                    worst = search.best;
                    witness = (agent, search.best_path);
                }
            }
        }
    }
    let is_nash = worst <= tol;
    Ok(TStepReport {
        is_nash,
        max_violation: worst,
        witness: (!is_nash).then_some(witness),
        prefixes_checked: checked,
        unreachable_skipped: skipped,
    })
}

/// Path weights `λ*(τ_i)` over agent-`i` prefixes of `t` transitions, for
/// the mixed process where agent `i` follows `π_i` and the others `π*_{-i}`.
/// Zero-weight prefixes are omitted.
#[derive(Debug, Clone, PartialEq)]
pub struct DualWeights {
    pub agent: usize,
    pub t: usize,
    pub prefixes: Vec<Vec<(usize, usize)>>,
    pub weights: Vec<f64>,
}

impl DualWeights {
    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn weight(&self, prefix: &[(usize, usize)]) -> f64 {
        self.prefixes
            .iter()
            .position(|p| p == prefix)
            .map_or(0.0, |k| self.weights[k])
    }
}

/// Walks every positive-weight prefix of the mixed process. `leaf` receives
/// the prefix, its weight, and `Σ_{j<t} γ^j E[r_i | transition j]` computed
/// under the others' policy.
fn walk_mixed<F>(
    game: &MarkovGame,
    own: &JointPolicy,
    model: &StepModel,
    agent: usize,
    t: usize,
    leaf: &mut F,
) where
    F: FnMut(&[(usize, usize)], f64, f64),
{
    struct Walk<'a, F> {
        own: &'a JointPolicy,
        model: &'a StepModel,
        agent: usize,
        t: usize,
        gamma: f64,
        path: Vec<(usize, usize)>,
        leaf: &'a mut F,
    }
    impl<F: FnMut(&[(usize, usize)], f64, f64)> Walk<'_, F> {
        fn go(&mut self, weight: f64, acc: f64, discount: f64) {
            if self.path.len() == self.t + 1 {
                (self.leaf)(&self.path, weight, acc);
                return;
            }
            let (s, a) = *self.path.last().expect("non-empty");
            for next in 0..self.model.num_states {
                let k = self.model.index(s, a, next);
                let m = self.model.mass[k];
                if m == 0.0 {
                    continue;
                }
                let acc = acc + discount * self.model.reward[k];
                for (a_next, &p) in self.own.agent_row(self.agent, next).iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    self.path.push((next, a_next));
                    self.go(weight * m * p, acc, discount * self.gamma);
                    self.path.pop();
                }
            }
        }
    }
    let mut walk = Walk {
        own,
        model,
        agent,
        t,
        gamma: game.discount(),
        path: Vec::with_capacity(t + 1),
        leaf,
    };
    for (s0, &eta) in game.dynamics().initial().iter().enumerate() {
        if eta == 0.0 {
            continue;
        }
        for (a0, &p) in own.agent_row(agent, s0).iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            walk.path.push((s0, a0));
            walk.go(eta * p, 0.0, 1.0);
            walk.path.pop();
        }
    }
}

fn dual_budget(game: &MarkovGame, t: usize) -> Result<()> {
    let total = (0..game.num_agents()).fold(0u128, |acc, i| {
        let per = (game.num_states() * game.actions().count(i)) as u128;
        acc.saturating_add(saturating_pow(per, t + 1))
    });
    check_budget(total)
}

/// `λ*(τ_i) = η(s^0) π_i(a^0|s^0) Π_{j=1..t} π_i(a^j|s^j) Σ_{a_{-i}} T(s^j|s^{j-1}, a^{j-1}) π*_{-i}(a_{-i}|s^{j-1})`.
pub fn build_dual_weights(
    game: &MarkovGame,
    policy: &JointPolicy,
    reference: &JointPolicy,
    agent: usize,
    t: usize,
) -> Result<DualWeights> {
    game.validate().into_result()?;
    policy.check_against(game.dynamics())?;
    reference.check_against(game.dynamics())?;
    check_index("agent", agent, game.num_agents())?;
    let per = (game.num_states() * game.actions().count(agent)) as u128;
    check_budget(saturating_pow(per, t + 1))?;
    let model = StepModel::new(game, reference, agent);
    let mut out = DualWeights {
        agent,
        t,
        prefixes: Vec::new(),
        weights: Vec::new(),
    };
    walk_mixed(game, policy, &model, agent, t, &mut |path, w, _| {
        out.prefixes.push(path.to_vec());
        out.weights.push(w);
    });
    Ok(out)
}

/// `L^(t+1)(π*, λ*_π) = Σ_i Σ_{τ_i} λ*_π(τ_i) (Q_i^(t)(τ_i; π*) - v̂_i(s^0; π*))`,
/// with `τ_i` of `t` transitions. Tends to
/// `Σ_i E_{π_i, π*_{-i}}[r_i] - Σ_i E_{π*}[r_i]` as `t` grows.
pub fn dual_value(game: &MarkovGame, reference: &JointPolicy, policy: &JointPolicy, t: usize) -> Result<f64> {
    game.validate().into_result()?;
    policy.check_against(game.dynamics())?;
    reference.check_against(game.dynamics())?;
    dual_budget(game, t)?;
    let v = bellman_values_unchecked(game, reference);
    let q = q_values_unchecked(game, reference, &v);
    Ok(dual_value_with(game, reference, policy, t, &v, &q))
}

/// [`dual_value`] for `t = 0..=max_t` sharing one evaluation of `π*`.
pub fn dual_values(
    game: &MarkovGame,
    reference: &JointPolicy,
    policy: &JointPolicy,
    max_t: usize,
) -> Result<Vec<f64>> {
    game.validate().into_result()?;
    policy.check_against(game.dynamics())?;
    reference.check_against(game.dynamics())?;
    dual_budget(game, max_t)?;
    let v = bellman_values_unchecked(game, reference);
    let q = q_values_unchecked(game, reference, &v);
    Ok((0..=max_t)
        .map(|t| dual_value_with(game, reference, policy, t, &v, &q))
        .collect())
}

fn dual_value_with(
    game: &MarkovGame,
    reference: &JointPolicy,
    policy: &JointPolicy,
    t: usize,
    v: &ValueTable,
    q: &QTable,
) -> f64 {
    let tail = game.discount().powi(t as i32);
    let mut total = 0.0;
    for agent in 0..game.num_agents() {
        let model = StepModel::new(game, reference, agent);
        walk_mixed(game, policy, &model, agent, t, &mut |path, w, acc| {
            let (s0, _) = path[0];
            let &(s, a) = path.last().expect("non-empty");
            total += w * (acc + tail * q.get(agent, s, a) - v.get(agent, s0));
        });
    }
    total
}
