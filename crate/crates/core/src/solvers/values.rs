//! Policy evaluation and the one-step Nash constraint system.

use crate::error::{Error, Result};
use crate::game::MarkovGame;
use crate::policy::JointPolicy;
use crate::solvers::linear::{policy_rows, residual, solve_discounted};

/// `v̂_i(s)` for every agent.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub values: Vec<Vec<f64>>,
    /// Max-norm Bellman residual of the solution.
    pub residual: f64,
}

impl ValueTable {
    pub fn agent(&self, i: usize) -> &[f64] {
        &self.values[i]
    }

    pub fn get(&self, agent: usize, state: usize) -> f64 {
        self.values[agent][state]
    }
}

/// `q̂_i(s, a_i)`, laid out `[agent][s * |A_i| + a_i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub q: Vec<Vec<f64>>,
    pub action_counts: Vec<usize>,
}

impl QTable {
    pub fn get(&self, agent: usize, state: usize, action: usize) -> f64 {
        self.q[agent][state * self.action_counts[agent] + action]
    }

    pub fn row(&self, agent: usize, state: usize) -> &[f64] {
        let n = self.action_counts[agent];
        &self.q[agent][state * n..(state + 1) * n]
    }
}

fn check(game: &MarkovGame, policy: &JointPolicy) -> Result<()> {
    game.validate().into_result()?;
    policy.check_against(game.dynamics())
}

/// Solves `v̂_i = r_π,i + γ P_π v̂_i` for all agents by a direct solve.
pub fn bellman_values(game: &MarkovGame, policy: &JointPolicy) -> Result<ValueTable> {
    check(game, policy)?;
    Ok(bellman_values_unchecked(game, policy))
}

pub(crate) fn bellman_values_unchecked(game: &MarkovGame, policy: &JointPolicy) -> ValueTable {
    let joint = policy.joint_table(game.actions());
    let rows = policy_rows(game.dynamics(), &joint);
    let j = game.num_joint();
    let rhs: Vec<Vec<f64>> = (0..game.num_agents())
        .map(|i| {
            let r = game.reward_table(i);
            (0..game.num_states())
                .map(|s| (0..j).map(|a| joint[s * j + a] * r[s * j + a]).sum())
                .collect()
        })
        .collect();
    let gamma = game.discount();
    let values = solve_discounted(&rows, gamma, &rhs, false, "Bellman equations")
        // I - γP is strictly diagonally dominant for γ < 1 on a valid game.
        .expect("Bellman system is nonsingular for a valid game");
    let res = values
        .iter()
        .zip(&rhs)
        .map(|(v, b)| residual(&rows, gamma, b, v, false))
        .fold(0.0, f64::max);
    ValueTable {
        values,
        residual: res,
    }
}

/// `r_i(s, a) + γ Σ_{s'} T(s' | s, a) v_i(s')` for every `(s, joint)`.
pub fn backup_table(game: &MarkovGame, agent: usize, values: &[f64]) -> Vec<f64> {
    let j = game.num_joint();
    let t = game.dynamics().transition();
    let gamma = game.discount();
    let mut out = vec![0.0; game.num_states() * j];
    for s in 0..game.num_states() {
        for a in 0..j {
            let ev: f64 = t.row(s, a).map(|(n, p)| p * values[n]).sum();
            out[s * j + a] = game.reward(agent, s, a) + gamma * ev;
        }
    }
    out
}

/// `q̂_i(s, a_i) = E_{π_{-i}}[r_i(s, a) + γ Σ T(s'|s, a) v_i(s')]`.
pub fn q_values(game: &MarkovGame, policy: &JointPolicy, values: &ValueTable) -> Result<QTable> {
    policy.check_against(game.dynamics())?;
    if values.values.len() != game.num_agents()
        || values.values.iter().any(|v| v.len() != game.num_states())
    {
        return Err(Error::DimensionMismatch(
            "value table does not match the game".into(),
        ));
    }
    Ok(q_values_unchecked(game, policy, values))
}

pub(crate) fn q_values_unchecked(game: &MarkovGame, policy: &JointPolicy, values: &ValueTable) -> QTable {
    let space = game.actions();
    let j = space.size();
    let counts = space.counts().to_vec();
    let q = (0..game.num_agents())
        .map(|i| {
            let backup = backup_table(game, i, values.agent(i));
            let n = counts[i];
            let mut qi = vec![0.0; game.num_states() * n];
            for s in 0..game.num_states() {
                for a in 0..j {
                    let w = policy.others_prob(space, s, i, space.others_index(a, i));
                    qi[s * n + space.component(a, i)] += w * backup[s * j + a];
                }
            }
            qi
        })
        .collect();
    QTable {
        q,
        action_counts: counts,
    }
}

/// `f_r(π, v̂) = Σ_i Σ_s (v̂_i(s) - E_{a_i ~ π_i} q̂_i(s, a_i))` at the policy's
/// own values. Zero for every policy up to round-off; the return value is
/// the numerical residual.
pub fn nash_residual(game: &MarkovGame, policy: &JointPolicy) -> Result<f64> {
    check(game, policy)?;
    let v = bellman_values_unchecked(game, policy);
    let q = q_values_unchecked(game, policy, &v);
    let mut total = 0.0;
    for i in 0..game.num_agents() {
        for s in 0..game.num_states() {
            let expected: f64 = policy
                .agent_row(i, s)
                .iter()
                .zip(q.row(i, s))
                .map(|(p, q)| p * q)
                .sum();
            total += v.get(i, s) - expected;
        }
    }
    Ok(total)
}

/// Worst one-step constraint `(agent, state, action)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Witness {
    pub agent: usize,
    pub state: usize,
    pub action: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NashReport {
    pub is_nash: bool,
    /// `max_{i,s,a_i} q̂_i(s, a_i) - v̂_i(s)`.
    pub max_violation: f64,
    /// Set when the policy is not Nash.
    pub witness: Option<Witness>,
}

/// Checks `v̂_i(s) >= q̂_i(s, a_i) - tol` for every agent, state and action.
pub fn nash_check(game: &MarkovGame, policy: &JointPolicy, tol: f64) -> Result<NashReport> {
    check(game, policy)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let v = bellman_values_unchecked(game, policy);
    let q = q_values_unchecked(game, policy, &v);
    let mut worst = f64::NEG_INFINITY;
    let mut at = Witness {
        agent: 0,
        state: 0,
        action: 0,
    };
    for i in 0..game.num_agents() {
        for s in 0..game.num_states() {
            for (a, &qa) in q.row(i, s).iter().enumerate() {
                let gap = qa - v.get(i, s);
                if gap > worst {
                    worst = gap;
                    at = Witness {
                        agent: i,
                        state: s,
                        action: a,
                    };
                }
            }
        }
    }
    let is_nash = worst <= tol;
    Ok(NashReport {
        is_nash,
        max_violation: worst,
        witness: (!is_nash).then_some(at),
    })
}
