//! Seeded property sweeps over the exact solvers, reported as
//! `check_name,instance_id,value,bound,pass` rows.

use std::fmt::Write as _;

use rand::Rng;

use crate::envs::{build, preset, TAGS};
use crate::equilibria::{solve_matrix_game, solve_team_vi, solve_zero_sum_shapley, MatrixGame};
use crate::error::{Error, Result};
use crate::fixtures;
use crate::game::MarkovGame;
use crate::policy::{AgentPolicy, JointPolicy, ObservationMap};
use crate::solvers::{
    bellman_values, dual_values, expected_returns, nash_check, nash_residual, occupancy_measure, psi_star_ga,
    q_values, tstep_nash_check,
};
use crate::trajectory::RngConfig;

pub const THEORY_HEADER: &str = "check_name,instance_id,value,bound,pass";

/// Tolerance on one-step and t-step Nash verdicts.
pub const VERDICT_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub check: &'static str,
    pub instance: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

impl CheckRow {
    /// Passes when `value <= bound`.
    pub fn at_most(check: &'static str, instance: impl Into<String>, value: f64, bound: f64) -> Self {
        Self {
            check,
            instance: instance.into(),
            value,
            bound,
            pass: value <= bound,
        }
    }

    pub fn csv(&self) -> String {
        format!("{},{},{:.12e},{:.12e},{}", self.check, self.instance, self.value, self.bound, self.pass)
    }
}

pub fn rows_csv(rows: &[CheckRow]) -> String {
    let mut out = String::from(THEORY_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.csv());
    }
    out
}

/// `|nash_residual| <= 1e-8` and `E_{π_i}[q̂_i(s, ·)] = v̂_i(s)` on random
/// `(game, policy)` pairs with `N <= 3`, `|S| <= 5`, `|A_i| <= 3`.
pub fn residual_rows(seed: u64, count: usize) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::with_capacity(2 * count);
    for k in 0..count {
        let mut rng = RngConfig::new(seed, format!("residual/{k}")).rng();
        let n = rng.gen_range(1..=3);
        let s = rng.gen_range(1..=5);
        let counts: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=3)).collect();
        let g = fixtures::random_game(&mut rng, n, s, &counts, 0.9);
        let pi = fixtures::random_policy(&mut rng, &g);
        let id = format!("g{k}");
        rows.push(CheckRow::at_most("nash_residual", id.clone(), nash_residual(&g, &pi)?.abs(), 1e-8));
        let v = bellman_values(&g, &pi)?;
        let q = q_values(&g, &pi, &v)?;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for st in 0..s {
                let e: f64 = q.row(i, st).iter().zip(pi.agent_row(i, st)).map(|(q, p)| q * p).sum();
                worst = worst.max((e - v.get(i, st)).abs());
            }
        }
        rows.push(CheckRow::at_most("q_consistency", id, worst, 1e-9));
    }
    Ok(rows)
}

/// Instances for the t-step equivalence sweep: certified equilibria first,
/// then policies that are not equilibria.
pub fn tstep_instances(seed: u64) -> Result<Vec<(String, MarkovGame, JointPolicy)>> {
    let mut out = Vec::new();
    let mp = fixtures::matching_pennies(0.9);
    out.push(("pennies_uniform".into(), mp.clone(), JointPolicy::uniform(ObservationMap::identity(2, 1), &[2, 2])));
    let heads = JointPolicy::new(
        vec![AgentPolicy::deterministic(&[0], 2), AgentPolicy::deterministic(&[0], 2)],
        ObservationMap::identity(2, 1),
    )?;
    let coord = fixtures::coordination(0.9);
    out.push(("coordination_opt".into(), coord, heads.clone()));
    let mut rng = RngConfig::new(seed, "tstep/team").rng();
    let team = fixtures::random_team_game(&mut rng, 2, 3, &[2, 2], 0.9, true);
    let (team_pi, _) = solve_team_vi(&team, 1e-12)?;
    out.push(("team_vi".into(), team, team_pi));
    let mut rng = RngConfig::new(seed, "tstep/zs").rng();
    let zs = fixtures::random_zero_sum_game(&mut rng, 1, [3, 2], 0.9);
    let (zs_pi, _) = solve_zero_sum_shapley(&zs, 1e-10)?;
    out.push(("zero_sum_1state".into(), zs, zs_pi));

    out.push(("pennies_heads".into(), mp, heads));
    for k in 0..5 {
        let mut rng = RngConfig::new(seed, format!("tstep/random/{k}")).rng();
        let g = fixtures::random_game(&mut rng, 2, 3, &[2, 2], 0.9);
        let pi = fixtures::random_policy(&mut rng, &g);
        out.push((format!("random{k}"), g, pi));
    }
    Ok(out)
}

/// One-step verdict against t-step verdicts for `t = 2, 3`.
pub fn tstep_rows(seed: u64, count: usize) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    for (id, g, pi) in tstep_instances(seed)?.into_iter().take(count) {
        let one = nash_check(&g, &pi, VERDICT_TOL)?;
        rows.push(CheckRow {
            check: "tstep_verdict_1",
            instance: id.clone(),
            value: one.max_violation,
            bound: VERDICT_TOL,
            pass: true,
        });
        for t in [2, 3] {
            let rep = tstep_nash_check(&g, &pi, t, VERDICT_TOL)?;
            rows.push(CheckRow {
                check: if t == 2 { "tstep_agree_2" } else { "tstep_agree_3" },
                instance: id.clone(),
                value: rep.max_violation,
                bound: VERDICT_TOL,
                pass: rep.is_nash == one.is_nash,
            });
        }
    }
    Ok(rows)
}

/// Per-instance dual errors `e_t = |dual(t) - gap|` for `t = 0..=max_t`,
/// the mixed-vs-reference gap and `R_max`.
pub struct DualTrace {
    pub id: String,
    pub num_agents: usize,
    pub reward_bound: f64,
    pub discount: f64,
    pub gap: f64,
    pub duals: Vec<f64>,
    pub at_reference: Vec<f64>,
}

impl DualTrace {
    pub fn error(&self, t: usize) -> f64 {
        (self.duals[t] - self.gap).abs()
    }

    pub fn bound(&self, t: usize) -> f64 {
        2.0 * self.num_agents as f64 * self.reward_bound * self.discount.powi(t as i32) / (1.0 - self.discount)
    }
}

/// `Σ_i E_{π_i, π*_{-i}}[r_i] - Σ_i E_{π*}[r_i]` by occupancy solves.
pub fn mixed_gap(g: &MarkovGame, reference: &JointPolicy, policy: &JointPolicy) -> Result<f64> {
    let base: f64 = expected_returns(g, reference)?.iter().sum();
    let mut mixed = 0.0;
    for i in 0..g.num_agents() {
        mixed += expected_returns(g, &reference.compose(i, policy)?)?[i];
    }
    Ok(mixed - base)
}

pub fn dual_traces(seed: u64, count: usize, max_t: usize) -> Result<Vec<DualTrace>> {
    (0..count)
        .map(|k| {
            let mut rng = RngConfig::new(seed, format!("dual/{k}")).rng();
            let g = fixtures::random_game(&mut rng, 2, 2, &[2, 2], 0.9);
            let reference = fixtures::random_policy(&mut rng, &g);
            let policy = fixtures::random_policy(&mut rng, &g);
            Ok(DualTrace {
                id: format!("pair{k}"),
                num_agents: g.num_agents(),
                reward_bound: g.reward_bound(),
                discount: g.discount(),
                gap: mixed_gap(&g, &reference, &policy)?,
                duals: dual_values(&g, &reference, &policy, max_t)?,
                at_reference: dual_values(&g, &reference, &reference, max_t)?,
            })
        })
        .collect()
}

/// Dual convergence for `t = 1..=max_t`: the `γ^t` envelope, errors
/// non-increasing over that range (slack `1e-9`) and a zero dual at the
/// reference policy.
pub fn dual_rows(seed: u64, count: usize, max_t: usize) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    for tr in dual_traces(seed, count, max_t)? {
        for t in 1..=max_t {
            let id = format!("{}/t{t}", tr.id);
            rows.push(CheckRow::at_most("dual_envelope", id.clone(), tr.error(t), tr.bound(t)));
            if t >= 2 {
                rows.push(CheckRow::at_most("dual_monotone", id.clone(), tr.error(t) - tr.error(t - 1), 1e-9));
            }
            rows.push(CheckRow::at_most("dual_at_reference", id, tr.at_reference[t].abs(), 1e-10));
        }
    }
    Ok(rows)
}

/// Per-cell `max_D b ln D + a ln(1 - D)` by bisection on the derivative,
/// with `D` clamped to `[1e-8, 1 - 1e-8]`.
pub fn psi_numeric(a: &[f64], b: &[f64]) -> f64 {
    let ta: f64 = a.iter().sum();
    let tb: f64 = b.iter().sum();
    let (lo_d, hi_d) = (1e-8, 1.0 - 1e-8);
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let (p, q) = (x / ta, y / tb);
            let f = |d: f64| q * d.ln() + p * (1.0 - d).ln();
            let (mut lo, mut hi) = (lo_d, hi_d);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if q / mid - p / (1.0 - mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            f(0.5 * (lo + hi)).max(f(lo_d)).max(f(hi_d))
        })
        .sum()
}

/// Closed form against the numeric maximization, the identical-input value
/// and the expert minimizer on a solved team game.
pub fn psi_rows(seed: u64, count: usize) -> Result<Vec<CheckRow>> {
    let floor = -2.0 * 2f64.ln();
    let mut rows = Vec::new();
    for k in 0..count {
        let mut rng = RngConfig::new(seed, format!("psi/{k}")).rng();
        let len = rng.gen_range(2..=12);
        let a: Vec<f64> = (0..len).map(|_| rng.gen::<f64>()).collect();
        let b: Vec<f64> = (0..len).map(|_| rng.gen::<f64>()).collect();
        let closed = psi_star_ga(&a, &b)?;
        let id = format!("pair{k}");
        rows.push(CheckRow::at_most("psi_numeric", id.clone(), (closed - psi_numeric(&a, &b)).abs(), 1e-4));
        rows.push(CheckRow::at_most("psi_identical", id.clone(), (psi_star_ga(&a, &a)? - floor).abs(), 1e-12));
        rows.push(CheckRow::at_most("psi_symmetric", id, (closed - psi_star_ga(&b, &a)?).abs(), 1e-12));
    }

    let mut rng = RngConfig::new(seed, "psi/expert").rng();
    let g = fixtures::random_team_game(&mut rng, 2, 3, &[2, 3], 0.9, false);
    let (expert, _) = solve_team_vi(&g, 1e-12)?;
    let rho_e = occupancy_measure(&g, &expert)?;
    for i in 0..2 {
        rows.push(CheckRow::at_most("psi_expert_min", format!("agent{i}"), (psi_star_ga(&rho_e.values, &rho_e.values)? - floor).abs(), 1e-12));
        let mut lowest = f64::INFINITY;
        for _ in 0..50 {
            let w = rng.gen_range(0.05..1.0);
            let own = fixtures::perturb_agent(&mut rng, expert.agent(i), w);
            let mixed = expert.with_agent_policy(i, own)?;
            let rho = occupancy_measure(&g, &mixed)?;
            lowest = lowest.min(psi_star_ga(&rho.values, &rho_e.values)?);
        }
        rows.push(CheckRow {
            check: "psi_perturbed_higher",
            instance: format!("agent{i}"),
            value: lowest,
            bound: floor,
            pass: lowest > floor,
        });
    }
    Ok(rows)
}

/// Occupancy mass `(1 - γ) Σρ = 1` under the uniform policy of every
/// preset environment.
pub fn occupancy_rows() -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    for tag in TAGS {
        let env = build(tag, &preset(tag)?)?;
        let rho = occupancy_measure(&env.game, &env.uniform_policy())?;
        let mass = rho.total() * (1.0 - env.game.discount());
        rows.push(CheckRow::at_most("occupancy_mass", tag, (mass - 1.0).abs(), 1e-9));
    }
    Ok(rows)
}

/// Validation of the sweep's own fixtures; `corrupt` breaks one transition
/// row so that the check fails.
pub fn validation_rows(seed: u64, corrupt: bool) -> Vec<CheckRow> {
    let mut rng = RngConfig::new(seed, "validation").rng();
    let mut g = fixtures::random_game(&mut rng, 2, 3, &[2, 2], 0.9);
    if corrupt {
        g.dynamics_mut().transition_mut().scale_row(0, 0, 0.5);
    }
    let report = g.validate();
    vec![CheckRow {
        check: "game_valid",
        instance: if corrupt { "corrupted".into() } else { "random".into() },
        value: report.violations.len() as f64,
        bound: 0.0,
        pass: report.is_ok(),
    }]
}

/// Matching pennies through the matrix solver: value and marginals.
pub fn matrix_rows() -> Result<Vec<CheckRow>> {
    let m = MatrixGame::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]])?;
    let sol = solve_matrix_game(&m, 1e-9, 1_000_000)?;
    let off = sol.row.iter().chain(&sol.col).map(|p| (p - 0.5).abs()).fold(0.0, f64::max);
    Ok(vec![
        CheckRow::at_most("pennies_value", "matrix", sol.value.abs(), 0.01),
        CheckRow::at_most("pennies_marginals", "matrix", off, 0.01),
    ])
}

/// Instance counts of the full suite.
pub const FULL_SUITE: [(&str, usize); 4] = [("residual", 100), ("tstep", 10), ("dual", 10), ("psi", 20)];

#[derive(Debug, Clone)]
pub struct TheoryRun {
    pub rows: Vec<CheckRow>,
    /// Set when the budget cut some family short.
    pub partial: bool,
}

impl TheoryRun {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

/// Runs every family with at most `budget` instances each.
pub fn run_suite(seed: u64, budget: usize, corrupt: bool) -> Result<TheoryRun> {
    if budget == 0 {
        return Err(Error::InvalidArgument("budget must allow at least one instance per check".into()));
    }
    let cap = |name: &str| {
        let full = FULL_SUITE.iter().find(|(n, _)| *n == name).map_or(0, |x| x.1);
        full.min(budget)
    };
    let mut rows = validation_rows(seed, corrupt);
    rows.extend(residual_rows(seed, cap("residual"))?);
    rows.extend(tstep_rows(seed, cap("tstep"))?);
    rows.extend(dual_rows(seed, cap("dual"), 8)?);
    rows.extend(psi_rows(seed, cap("psi"))?);
    rows.extend(occupancy_rows()?);
    rows.extend(matrix_rows()?);
    let partial = FULL_SUITE.iter().any(|&(_, n)| n > budget);
    if partial {
        rows.push(CheckRow {
            check: "partial_run",
            instance: "budget".into(),
            value: budget as f64,
            bound: FULL_SUITE.iter().map(|x| x.1).max().unwrap_or(0) as f64,
            pass: true,
        });
    }
    Ok(TheoryRun { rows, partial })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_psi_matches_closed_form() {
        let a = [0.2, 0.3, 0.5];
        let b = [0.5, 0.0, 0.5];
        assert!((psi_numeric(&a, &b) - psi_star_ga(&a, &b).unwrap()).abs() < 1e-6);
        assert!((psi_numeric(&a, &a) + 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn small_suite_passes_and_is_flagged() {
        let run = run_suite(3, 2, false).unwrap();
        assert!(run.partial);
        assert!(run.all_pass(), "{:?}", run.rows.iter().filter(|r| !r.pass).collect::<Vec<_>>());
        assert!(run_suite(3, 0, false).is_err());
    }

    #[test]
    fn corruption_fails_validation() {
        let rows = validation_rows(1, true);
        assert!(!rows[0].pass);
        assert!(validation_rows(1, false)[0].pass);
    }

    #[test]
    fn tstep_instances_cover_both_verdicts() {
        let inst = tstep_instances(0).unwrap();
        let verdicts: Vec<bool> = inst.iter().map(|(_, g, p)| nash_check(g, p, VERDICT_TOL).unwrap().is_nash).collect();
        assert!(verdicts.iter().filter(|v| **v).count() >= 3);
        assert!(verdicts.iter().filter(|v| !**v).count() >= 3);
    }
}
