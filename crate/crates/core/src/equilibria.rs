//! Expert construction: joint value iteration for team games, regret
//! matching for matrix games and Shapley iteration for two-player zero-sum
//! Markov games.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::game::MarkovGame;
use crate::policy::{AgentPolicy, JointPolicy, ObservationMap};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub iterations: usize,
    /// Final Bellman residual (team, Shapley) or exploitability (matrix).
    pub residual: f64,
    pub tolerance: f64,
    /// `E_η[V_k]` after each sweep, where tracked.
    pub value_history: Vec<f64>,
}

impl SolverReport {
    /// Tolerance at which the returned policy is certified by `nash_check`.
    pub fn certified_tolerance(&self, discount: f64) -> f64 {
        10.0 * self.tolerance / (1.0 - discount)
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn expect_value(game: &MarkovGame, agent: usize, s: usize, joint: usize, v: &[f64]) -> f64 {
    let ev: f64 = game
        .dynamics()
        .transition()
        .row(s, joint)
        .map(|(n, p)| p * v[n])
        .sum();
    game.reward(agent, s, joint) + game.discount() * ev
}

/// Value iteration on the joint-action MDP of a team game. The greedy joint
/// action (lowest index on ties) is split into one deterministic policy per
/// agent over full-state observations.
pub fn solve_team_vi(game: &MarkovGame, tol: f64) -> Result<(JointPolicy, SolverReport)> {
    game.validate().into_result()?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    if let Some((agent, state, joint)) = game.first_reward_mismatch() {
        return Err(Error::NotCooperative { agent, state, joint });
    }
    let ns = game.num_states();
    let nj = game.num_joint();
    let eta = game.dynamics().initial();
    // Starting below every achievable value makes the iterates monotone.
    let floor = -game.reward_bound() / (1.0 - game.discount());
    let mut v = vec![floor; ns];
    let mut history = Vec::new();
    let mut iterations = 0;
    let residual = loop {
        iterations += 1;
        let next: Vec<f64> = (0..ns)
            .map(|s| {
                (0..nj)
                    .map(|a| expect_value(game, 0, s, a, &v))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let delta = max_abs_diff(&next, &v);
        v = next;
        history.push(eta.iter().zip(&v).map(|(p, x)| p * x).sum());
        if delta <= tol {
            break delta;
        }
    };

    let space = game.actions();
    let mut actions = vec![vec![0; ns]; game.num_agents()];
    for s in 0..ns {
        let mut best = 0;
        let mut best_value = f64::NEG_INFINITY;
        for a in 0..nj {
            let x = expect_value(game, 0, s, a, &v);
            if x > best_value {
                best = a;
                best_value = x;
            }
        }
        for (i, row) in actions.iter_mut().enumerate() {
            row[s] = space.component(best, i);
        }
    }
    let agents = actions
        .iter()
        .enumerate()
        .map(|(i, a)| AgentPolicy::deterministic(a, space.count(i)))
        .collect();
    let policy = JointPolicy::new(agents, ObservationMap::identity(game.num_agents(), ns))?;
    Ok((
        policy,
        SolverReport {
            iterations,
            residual,
            tolerance: tol,
            value_history: history,
        },
    ))
}

/// Two-player zero-sum matrix game; the row player receives `payoff`, the
/// column player its negation.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixGame {
    rows: usize,
    cols: usize,
    payoff: Vec<f64>,
}

impl MatrixGame {
    pub fn new(rows: usize, cols: usize, payoff: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || payoff.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} matrix game with {} payoffs",
                payoff.len()
            )));
        }
        if payoff.iter().any(|u| !u.is_finite()) {
            return Err(Error::NonFinite("matrix game payoffs"));
        }
        Ok(Self { rows, cols, payoff })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("ragged payoff rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn payoff(&self, row: usize, col: usize) -> f64 {
        self.payoff[row * self.cols + col]
    }

    /// Row payoff of every row action against a column mixture.
    pub fn row_payoffs(&self, col: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| (0..self.cols).map(|c| self.payoff(r, c) * col[c]).sum())
            .collect()
    }

    /// Row payoff of every column action against a row mixture.
    pub fn col_payoffs(&self, row: &[f64]) -> Vec<f64> {
        (0..self.cols)
            .map(|c| (0..self.rows).map(|r| self.payoff(r, c) * row[r]).sum())
            .collect()
    }

    pub fn value_of(&self, row: &[f64], col: &[f64]) -> f64 {
        row.iter().zip(self.row_payoffs(col)).map(|(x, u)| x * u).sum()
    }

    /// Duality gap `max_r u(r, y) - min_c u(x, c)`.
    pub fn exploitability(&self, row: &[f64], col: &[f64]) -> f64 {
        let best_row = self.row_payoffs(col).into_iter().fold(f64::NEG_INFINITY, f64::max);
        let worst_col = self.col_payoffs(row).into_iter().fold(f64::INFINITY, f64::min);
        best_row - worst_col
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSolution {
    pub row: Vec<f64>,
    pub col: Vec<f64>,
    pub value: f64,
    pub report: SolverReport,
}

fn normalize_or_uniform(x: &[f64]) -> Vec<f64> {
    let total: f64 = x.iter().sum();
    if total > 0.0 {
        x.iter().map(|v| v / total).collect()
    } else {
        vec![1.0 / x.len() as f64; x.len()]
    }
}

const CHECK_EVERY: usize = 16;

/// Predictive regret matching+ self-play with alternating updates and
/// quadratically weighted averages, stopped once the averaged pair is
/// `tol`-exploitable.
pub fn solve_matrix_game(m: &MatrixGame, tol: f64, max_iters: usize) -> Result<MatrixSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let (nr, nc) = (m.rows, m.cols);
    let mut regret_r = vec![0.0; nr];
    let mut regret_c = vec![0.0; nc];
    let mut last_r = vec![0.0; nr];
    let mut last_c = vec![0.0; nc];
    let mut avg_r = vec![0.0; nr];
    let mut avg_c = vec![0.0; nc];
    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    let predicted = |regret: &[f64], last: &[f64]| -> Vec<f64> {
        let x: Vec<f64> = regret.iter().zip(last).map(|(r, l)| (r + l).max(0.0)).collect();
        normalize_or_uniform(&x)
    };
    let mut y = predicted(&regret_c, &last_c);
    for it in 1..=max_iters {
        let weight = (it * it) as f64;
        let x = predicted(&regret_r, &last_r);
        let u_rows = m.row_payoffs(&y);
        let ev: f64 = x.iter().zip(&u_rows).map(|(p, u)| p * u).sum();
        for ((r, l), u) in regret_r.iter_mut().zip(&mut last_r).zip(&u_rows) {
            *l = u - ev;
            *r = (*r + *l).max(0.0);
        }
        for (a, p) in avg_r.iter_mut().zip(&x) {
            *a += weight * p;
        }
        // column player responds to the current row strategy
        y = predicted(&regret_c, &last_c);
        let u_cols = m.col_payoffs(&x);
        let ev: f64 = y.iter().zip(&u_cols).map(|(p, u)| p * u).sum();
        for ((r, l), u) in regret_c.iter_mut().zip(&mut last_c).zip(&u_cols) {
            *l = ev - u;
            *r = (*r + *l).max(0.0);
        }
        for (a, p) in avg_c.iter_mut().zip(&y) {
            *a += weight * p;
        }
        y = predicted(&regret_c, &last_c);

        if it % CHECK_EVERY == 0 || it == max_iters {
            let xr = normalize_or_uniform(&avg_r);
            let yc = normalize_or_uniform(&avg_c);
            let gap = m.exploitability(&xr, &yc);
            if best.as_ref().is_none_or(|b| gap < b.0) {
                best = Some((gap, xr, yc));
            }
            let b = best.as_ref().expect("just set");
            if b.0 > tol {
                if let Some(p) = polish(m, &b.1, &b.2, b.0) {
                    if p.0 < b.0 {
                        best = Some(p);
                    }
                }
            }
            let b = best.as_ref().expect("just set");
            if b.0 <= tol {
                return Ok(solution(m, b, it, tol));
            }
        }
    }
    let b = match best {
        Some(b) => b,
        None => {
            let (x, y) = (vec![1.0 / nr as f64; nr], vec![1.0 / nc as f64; nc]);
            (m.exploitability(&x, &y), x, y)
        }
    };
    Err(Error::NotConverged {
        iterations: max_iters,
        exploitability: b.0,
        tolerance: tol,
        best: Box::new(solution(m, &b, max_iters, tol)),
    })
}

/// Solves `Σ_{k∈support} x_k u(k, e) = v` for every `e` in `equalize` with
/// `Σ x = 1` in least squares; `u(k, e)` is `payoff(k, e)` for the row
/// player and `payoff(e, k)` for the column player.
fn indifference(
    m: &MatrixGame,
    support: &[usize],
    equalize: &[usize],
    row_player: bool,
    size: usize,
) -> Option<Vec<f64>> {
    let (nk, ne) = (support.len(), equalize.len());
    let mut a = DMatrix::<f64>::zeros(ne + 1, nk + 1);
    let mut b = DVector::<f64>::zeros(ne + 1);
    for (row, &e) in equalize.iter().enumerate() {
        for (col, &k) in support.iter().enumerate() {
            a[(row, col)] = if row_player { m.payoff(k, e) } else { m.payoff(e, k) };
        }
        a[(row, nk)] = -1.0;
    }
    for col in 0..nk {
        a[(ne, col)] = 1.0;
    }
    b[ne] = 1.0;
    let sol = a.svd(true, true).solve(&b, 1e-12).ok()?;
    let mut x = vec![0.0; size];
    for (col, &k) in support.iter().enumerate() {
        x[k] = sol[col].max(0.0);
    }
    let total: f64 = x.iter().sum();
    (total > 0.0 && total.is_finite()).then(|| x.iter().map(|v| v / total).collect())
}

/// Exact refinement on the approximate best-response supports of an
/// averaged pair.
fn polish(m: &MatrixGame, x: &[f64], y: &[f64], gap: f64) -> Option<(f64, Vec<f64>, Vec<f64>)> {
    let rows = m.row_payoffs(y);
    let cols = m.col_payoffs(x);
    let top = rows.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bottom = cols.iter().copied().fold(f64::INFINITY, f64::min);
    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    for scale in [1.0, 10.0, 100.0] {
        let delta = scale * gap;
        let r: Vec<usize> = (0..m.rows).filter(|&k| rows[k] >= top - delta).collect();
        let c: Vec<usize> = (0..m.cols).filter(|&k| cols[k] <= bottom + delta).collect();
        let (Some(px), Some(py)) = (
            indifference(m, &r, &c, true, m.rows),
            indifference(m, &c, &r, false, m.cols),
        ) else {
            continue;
        };
        let g = m.exploitability(&px, &py);
        if best.as_ref().is_none_or(|b| g < b.0) {
            best = Some((g, px, py));
        }
    }
    best
}

fn solution(m: &MatrixGame, best: &(f64, Vec<f64>, Vec<f64>), iterations: usize, tol: f64) -> MatrixSolution {
    MatrixSolution {
        value: m.value_of(&best.1, &best.2),
        row: best.1.clone(),
        col: best.2.clone(),
        report: SolverReport {
            iterations,
            residual: best.0,
            tolerance: tol,
            value_history: Vec::new(),
        },
    }
}

/// Iteration cap for each per-state matrix subgame.
pub const SUBGAME_MAX_ITERS: usize = 1_000_000;

/// Checks that `game` is a two-player game with `r_1 = -r_2` entrywise.
pub fn check_zero_sum(game: &MarkovGame) -> Result<()> {
    if game.num_agents() != 2 {
        return Err(Error::NotZeroSum(format!("{} agents", game.num_agents())));
    }
    let (r1, r2) = (game.reward_table(0), game.reward_table(1));
    if let Some(k) = (0..r1.len()).find(|&k| r1[k] != -r2[k]) {
        let nj = game.num_joint();
        return Err(Error::NotZeroSum(format!(
            "r_1 + r_2 = {} at state {}, joint action {}",
            r1[k] + r2[k],
            k / nj,
            k % nj
        )));
    }
    Ok(())
}

fn stage_game(game: &MarkovGame, s: usize, v: &[f64]) -> MatrixGame {
    let space = game.actions();
    let (nr, nc) = (space.count(0), space.count(1));
    let payoff = (0..nr)
        .flat_map(|r| (0..nc).map(move |c| (r, c)))
        .map(|(r, c)| expect_value(game, 0, s, space.encode(&[r, c]), v))
        .collect();
    MatrixGame::new(nr, nc, payoff).expect("finite stage payoffs")
}

/// Shapley iteration: per state, solve the matrix game
/// `r_1(s, a) + γ E[v(s')]` and repeat until the value residual is `tol`.
/// Subgames are solved to exploitability `tol (1 - γ)`.
pub fn solve_zero_sum_shapley(game: &MarkovGame, tol: f64) -> Result<(JointPolicy, SolverReport)> {
    game.validate().into_result()?;
    check_zero_sum(game)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let ns = game.num_states();
    let sub_tol = tol * (1.0 - game.discount());
    let eta = game.dynamics().initial();
    let mut v = vec![0.0; ns];
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut strategies: Vec<(Vec<f64>, Vec<f64>)>;
    let residual = loop {
        iterations += 1;
        let solved = (0..ns)
            .map(|s| solve_matrix_game(&stage_game(game, s, &v), sub_tol, SUBGAME_MAX_ITERS))
            .collect::<Result<Vec<_>>>()?;
        let next: Vec<f64> = solved.iter().map(|m| m.value).collect();
        let delta = max_abs_diff(&next, &v);
        v = next;
        strategies = solved.into_iter().map(|m| (m.row, m.col)).collect();
        history.push(eta.iter().zip(&v).map(|(p, x)| p * x).sum());
        if delta <= tol {
            break delta;
        }
    };
    let space = game.actions();
    let row: Vec<f64> = strategies.iter().flat_map(|(x, _)| x.iter().copied()).collect();
    let col: Vec<f64> = strategies.iter().flat_map(|(_, y)| y.iter().copied()).collect();
    let policy = JointPolicy::new(
        vec![
            AgentPolicy::new(ns, space.count(0), row)?,
            AgentPolicy::new(ns, space.count(1), col)?,
        ],
        ObservationMap::identity(2, ns),
    )?;
    Ok((
        policy,
        SolverReport {
            iterations,
            residual,
            tolerance: tol,
            value_history: history,
        },
    ))
}
