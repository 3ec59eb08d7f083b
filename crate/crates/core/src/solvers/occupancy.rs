//! Discounted occupancy measures and the quantities built on them.

use crate::error::{check_index, Error, Result};
use crate::game::{Dynamics, MarkovGame};
use crate::policy::JointPolicy;
use crate::solvers::linear::{policy_rows, residual, solve_discounted};

/// `ρ_π(s, a)` over `(state, joint action)`, total mass `1 / (1 - γ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyTable {
    pub num_states: usize,
    pub num_joint: usize,
    /// `[s * num_joint + joint]`
    pub values: Vec<f64>,
    /// Discounted state visitation `d(s) = Σ_a ρ(s, a)`.
    pub state_visits: Vec<f64>,
    pub discount: f64,
    /// Max-norm residual of the flow equations.
    pub residual: f64,
}

impl OccupancyTable {
    pub fn get(&self, state: usize, joint: usize) -> f64 {
        self.values[state * self.num_joint + joint]
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// `ρ · (1 - γ)`, a probability distribution over `(s, a)`.
    pub fn normalized(&self) -> Vec<f64> {
        self.values.iter().map(|v| v * (1.0 - self.discount)).collect()
    }

    /// Per-agent marginal `ρ_i(s, a_i)`, laid out `[s * |A_i| + a_i]`.
    pub fn agent_marginal(&self, dynamics: &Dynamics, agent: usize) -> Vec<f64> {
        let space = dynamics.actions();
        let n = space.count(agent);
        let mut out = vec![0.0; self.num_states * n];
        for s in 0..self.num_states {
            for a in 0..self.num_joint {
                out[s * n + space.component(a, agent)] += self.get(s, a);
            }
        }
        out
    }
}

/// Solves `d = η + γ P_πᵀ d` and sets `ρ(s, a) = d(s) π(a | s)`.
pub fn occupancy_measure(game: &MarkovGame, policy: &JointPolicy) -> Result<OccupancyTable> {
    occupancy_of_dynamics(game.dynamics(), policy)
}

/// Reward-free variant, usable by learners that only see the dynamics.
pub fn occupancy_of_dynamics(dynamics: &Dynamics, policy: &JointPolicy) -> Result<OccupancyTable> {
    dynamics.validate().into_result()?;
    policy.check_against(dynamics)?;
    let joint = policy.joint_table(dynamics.actions());
    let rows = policy_rows(dynamics, &joint);
    let eta = dynamics.initial().to_vec();
    let gamma = dynamics.discount();
    let d = solve_discounted(&rows, gamma, std::slice::from_ref(&eta), true, "occupancy flow")?
        .pop()
        .expect("one right-hand side");
    let res = residual(&rows, gamma, &eta, &d, true);
    let j = dynamics.num_joint();
    let values = (0..dynamics.num_states())
        .flat_map(|s| {
            let ds = d[s];
            joint[s * j..(s + 1) * j].iter().map(move |p| ds * p).collect::<Vec<_>>()
        })
        .collect();
    Ok(OccupancyTable {
        num_states: dynamics.num_states(),
        num_joint: j,
        values,
        state_visits: d,
        discount: gamma,
        residual: res,
    })
}

/// `E_π[r_i] = Σ_{s,a} ρ_π(s, a) r_i(s, a)`.
pub fn expected_return(game: &MarkovGame, policy: &JointPolicy, agent: usize) -> Result<f64> {
    check_index("agent", agent, game.num_agents())?;
    Ok(expected_returns(game, policy)?[agent])
}

/// [`expected_return`] for every agent from a single occupancy solve.
pub fn expected_returns(game: &MarkovGame, policy: &JointPolicy) -> Result<Vec<f64>> {
    game.validate().into_result()?;
    let rho = occupancy_measure(game, policy)?;
    Ok(returns_from_occupancy(game, &rho))
}

pub fn returns_from_occupancy(game: &MarkovGame, rho: &OccupancyTable) -> Vec<f64> {
    (0..game.num_agents())
        .map(|i| {
            rho.values
                .iter()
                .zip(game.reward_table(i))
                .map(|(p, r)| p * r)
                .sum()
        })
        .collect()
}

fn neg_log_term(weight: f64, p: f64) -> f64 {
    if weight == 0.0 || p == 0.0 {
        0.0
    } else {
        -weight * p.ln()
    }
}

/// `H(π) = Σ_{s,a} ρ_π(s, a) (-ln π(a | s))`.
pub fn causal_entropy(game: &MarkovGame, policy: &JointPolicy) -> Result<f64> {
    let rho = occupancy_measure(game, policy)?;
    let space = game.actions();
    let mut h = 0.0;
    for s in 0..game.num_states() {
        for a in 0..space.size() {
            h += neg_log_term(rho.get(s, a), policy.joint_prob(space, s, a));
        }
    }
    Ok(h)
}

/// `H_i(π_i) = Σ_{s,a} ρ_{(π_i, π_{-i})}(s, a) (-ln π_i(a_i | o_i(s)))`, where
/// agent `agent` comes from `own` and everyone else from `others`.
pub fn agent_causal_entropy(
    game: &MarkovGame,
    own: &JointPolicy,
    others: &JointPolicy,
    agent: usize,
) -> Result<f64> {
    let mixed = others.compose(agent, own)?;
    let rho = occupancy_measure(game, &mixed)?;
    let marginal = rho.agent_marginal(game.dynamics(), agent);
    let n = game.actions().count(agent);
    let mut h = 0.0;
    for s in 0..game.num_states() {
        let row = mixed.agent_row(agent, s);
        for a in 0..n {
            h += neg_log_term(marginal[s * n + a], row[a]);
        }
    }
    Ok(h)
}

/// Closed-form `max_D E_b[ln D] + E_a[ln(1 - D)]`, attained at
/// `D* = b / (a + b)`. Both inputs are normalized to unit mass first, so
/// occupancy tables and distributions give the same answer. Equals
/// `2 JS(a, b) - 2 ln 2`.
pub fn psi_star_ga(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "occupancy tables of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let norm = |x: &[f64]| -> Result<f64> {
        if x.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("occupancy entries must be non-negative".into()));
        }
        let total: f64 = x.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidArgument("occupancy table has zero mass".into()));
        }
        Ok(total)
    };
    let (ta, tb) = (norm(a)?, norm(b)?);
    let mut value = 0.0;
    for (&pa, &pb) in a.iter().zip(b) {
        let (pa, pb) = (pa / ta, pb / tb);
        let m = pa + pb;
        if pb > 0.0 {
            value += pb * (pb / m).ln();
        }
        if pa > 0.0 {
            value += pa * (pa / m).ln();
        }
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::policy::{AgentPolicy, ObservationMap};
    use crate::trajectory::{sample_trajectory, RngConfig};
    use rand::Rng;
    use std::f64::consts::LN_2;

    fn uniform(game: &MarkovGame) -> JointPolicy {
        JointPolicy::uniform(
            ObservationMap::identity(game.num_agents(), game.num_states()),
            game.actions().counts(),
        )
    }

    #[test]
    fn single_state_single_action_mass() {
        let g = fixtures::constant_reward(1.0, 0.5);
        let rho = occupancy_measure(&g, &uniform(&g)).unwrap();
        assert!((rho.get(0, 0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mass_and_self_consistency() {
        let mut rng = RngConfig::new(21, "occ").rng();
        for _ in 0..10 {
            let g = fixtures::random_game(&mut rng, 2, 5, &[3, 2], 0.9);
            let pi = fixtures::random_policy(&mut rng, &g);
            let rho = occupancy_measure(&g, &pi).unwrap();
            assert!((rho.total() - 10.0).abs() < 1e-9);
            assert!(rho.residual < 1e-10);
            for s in 0..5 {
                let d: f64 = (0..6).map(|a| rho.get(s, a)).sum();
                for a in 0..6 {
                    let p = pi.joint_prob(g.actions(), s, a);
                    assert!((rho.get(s, a) - p * d).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn monte_carlo_visitation_matches() {
        let mut rng = RngConfig::new(22, "occ-mc").rng();
        let g = fixtures::random_game(&mut rng, 2, 3, &[2, 2], 0.9);
        let pi = fixtures::random_policy(&mut rng, &g);
        let rho = occupancy_measure(&g, &pi).unwrap().normalized();
        let mut counts = vec![0.0; rho.len()];
        let episodes = 100_000;
        let mut sampler = RngConfig::new(22, "rollouts").rng();
        for _ in 0..episodes {
            // geometric stopping time gives an unbiased draw from ρ (1 - γ)
            let mut t = 0;
            while sampler.gen::<f64>() < 0.9 {
                t += 1;
            }
            let traj = sample_trajectory(g.dynamics(), &pi, t + 1, &mut sampler);
            let joint = g.actions().encode(traj.actions(t));
            counts[traj.state(t) * 4 + joint] += 1.0;
        }
        let tv: f64 = rho
            .iter()
            .zip(&counts)
            .map(|(p, c)| (p - c / episodes as f64).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.02, "tv {tv}");
    }

    #[test]
    fn returns_for_reference_games() {
        let g = fixtures::matching_pennies(0.7);
        let pi = uniform(&g);
        assert!(expected_return(&g, &pi, 0).unwrap().abs() < 1e-12);
        assert!(expected_return(&g, &pi, 1).unwrap().abs() < 1e-12);

        let g = fixtures::coordination(0.5);
        let zero = JointPolicy::new(
            vec![AgentPolicy::deterministic(&[0], 2), AgentPolicy::deterministic(&[0], 2)],
            ObservationMap::identity(2, 1),
        )
        .unwrap();
        assert!((expected_return(&g, &zero, 0).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_return_matches() {
        let mut rng = RngConfig::new(23, "ret").rng();
        let g = fixtures::random_game(&mut rng, 2, 3, &[2, 2], 0.9);
        let pi = fixtures::random_policy(&mut rng, &g);
        let exact = expected_return(&g, &pi, 0).unwrap();
        let mut sampler = RngConfig::new(23, "mc").rng();
        let n = 100_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let traj = sample_trajectory(g.dynamics(), &pi, 200, &mut sampler);
            let ret: f64 = traj
                .steps()
                .enumerate()
                .map(|(t, (s, a))| 0.9f64.powi(t as i32) * g.reward(0, s, g.actions().encode(a)))
                .sum();
            sum += ret;
            sq += ret * ret;
        }
        let mean = sum / n as f64;
        let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - exact).abs() <= 3.0 * se, "mean {mean} exact {exact} se {se}");
    }

    #[test]
    fn entropy_closed_forms() {
        let g = fixtures::coordination(0.5);
        let det = JointPolicy::new(
            vec![AgentPolicy::deterministic(&[1], 2), AgentPolicy::deterministic(&[0], 2)],
            ObservationMap::identity(2, 1),
        )
        .unwrap();
        assert_eq!(causal_entropy(&g, &det).unwrap(), 0.0);
        let h = causal_entropy(&g, &uniform(&g)).unwrap();
        assert!((h - 4.0 * LN_2).abs() < 1e-12);
        let h1 = agent_causal_entropy(&g, &uniform(&g), &det, 0).unwrap();
        assert!((h1 - 2.0 * LN_2).abs() < 1e-12);
        assert_eq!(agent_causal_entropy(&g, &det, &uniform(&g), 1).unwrap(), 0.0);
    }

    #[test]
    fn agent_entropy_reduces_to_joint_for_one_agent() {
        let mut rng = RngConfig::new(24, "h").rng();
        let g = fixtures::random_game(&mut rng, 1, 4, &[3], 0.8);
        let pi = fixtures::random_policy(&mut rng, &g);
        let a = agent_causal_entropy(&g, &pi, &pi, 0).unwrap();
        let b = causal_entropy(&g, &pi).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn entropy_monte_carlo() {
        let mut rng = RngConfig::new(25, "h").rng();
        let g = fixtures::random_game(&mut rng, 2, 3, &[2, 3], 0.9);
        let pi = fixtures::random_policy(&mut rng, &g);
        let exact = causal_entropy(&g, &pi).unwrap();
        let mut sampler = RngConfig::new(25, "mc").rng();
        let n = 50_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let traj = sample_trajectory(g.dynamics(), &pi, 200, &mut sampler);
            let x: f64 = traj
                .steps()
                .enumerate()
                .map(|(t, (s, a))| -0.9f64.powi(t as i32) * pi.prob(s, a).unwrap().ln())
                .sum();
            sum += x;
            sq += x * x;
        }
        let mean = sum / n as f64;
        let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - exact).abs() <= 3.0 * se, "mean {mean} exact {exact} se {se}");
    }

    #[test]
    fn psi_star_reference_values() {
        let p = [0.2, 0.3, 0.5];
        assert!((psi_star_ga(&p, &p).unwrap() + 2.0 * LN_2).abs() < 1e-12);
        assert_eq!(psi_star_ga(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        // scale invariance: occupancy tables vs distributions
        let q = [2.0, 3.0, 5.0];
        assert!((psi_star_ga(&q, &p).unwrap() + 2.0 * LN_2).abs() < 1e-12);
        assert!(psi_star_ga(&[1.0], &[1.0, 2.0]).is_err());
        assert!(psi_star_ga(&[0.0, 0.0], &[1.0, 2.0]).is_err());
    }

    // Numeric inner maximization over a tabular discriminator.
    fn numeric_psi(a: &[f64], b: &[f64]) -> f64 {
        let (ta, tb): (f64, f64) = (a.iter().sum(), b.iter().sum());
        let clamp = |d: f64| d.clamp(1e-8, 1.0 - 1e-8);
        let mut total = 0.0;
        for (&pa, &pb) in a.iter().zip(b) {
            let (pa, pb) = (pa / ta, pb / tb);
            let m = pa + pb;
            if m == 0.0 {
                continue;
            }
            let mut w = 0.0f64;
            for _ in 0..20_000 {
                let d = 1.0 / (1.0 + (-w).exp());
                // gradient of the cell objective divided by its mass
                w += 2.0 * (pb / m - d);
                w = w.clamp(-30.0, 30.0);
            }
            let d = clamp(1.0 / (1.0 + (-w).exp()));
            total += pb * d.ln() + pa * (1.0 - d).ln();
        }
        total
    }

    #[test]
    fn psi_star_matches_numeric_maximization() {
        let mut rng = RngConfig::new(26, "psi").rng();
        for _ in 0..20 {
            let n = rng.gen_range(2..8);
            let a: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let closed = psi_star_ga(&a, &b).unwrap();
            assert!((closed - numeric_psi(&a, &b)).abs() < 1e-4);
            assert!(closed >= -2.0 * LN_2 - 1e-12);
            assert!((closed - psi_star_ga(&b, &a).unwrap()).abs() < 1e-12);
        }
    }
}
