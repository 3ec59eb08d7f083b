//! Discounted linear systems `x = b + γ M x` for a row-stochastic `M`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::game::Dynamics;

/// Largest system solved by dense LU; bigger ones use fixed-point sweeps.
pub const DENSE_LIMIT: usize = 1024;

const ITER_TOL: f64 = 1e-14;
const MAX_SWEEPS: usize = 200_000;

/// Sparse rows of `P_π(s' | s) = Σ_a π(a | s) T(s' | s, a)`.
pub fn policy_rows(dynamics: &Dynamics, joint_table: &[f64]) -> Vec<Vec<(usize, f64)>> {
    let j = dynamics.num_joint();
    let t = dynamics.transition();
    (0..dynamics.num_states())
        .map(|s| {
            let mut entries: Vec<(usize, f64)> = Vec::new();
            for a in 0..j {
                let p = joint_table[s * j + a];
                if p == 0.0 {
                    continue;
                }
                entries.extend(t.row(s, a).map(|(n, q)| (n, p * q)));
            }
            entries.sort_by_key(|e| e.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
            for (n, p) in entries {
                match merged.last_mut() {
                    Some(last) if last.0 == n => last.1 += p,
                    _ => merged.push((n, p)),
                }
            }
            merged
        })
        .collect()
}

fn apply(rows: &[Vec<(usize, f64)>], x: &[f64], transpose: bool, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    if transpose {
        for (s, row) in rows.iter().enumerate() {
            for &(n, p) in row {
                out[n] += p * x[s];
            }
        }
    } else {
        for (s, row) in rows.iter().enumerate() {
            out[s] = row.iter().map(|&(n, p)| p * x[n]).sum();
        }
    }
}

/// Max-norm residual of `x - b - γ M x`.
pub fn residual(rows: &[Vec<(usize, f64)>], discount: f64, b: &[f64], x: &[f64], transpose: bool) -> f64 {
    let mut mx = vec![0.0; x.len()];
    apply(rows, x, transpose, &mut mx);
    x.iter()
        .zip(b)
        .zip(&mx)
        .map(|((x, b), m)| (x - b - discount * m).abs())
        .fold(0.0, f64::max)
}

/// Solves `x = b + γ M x` (or `γ Mᵀ x` when `transpose`) for each right-hand side.
pub fn solve_discounted(
    rows: &[Vec<(usize, f64)>],
    discount: f64,
    rhs: &[Vec<f64>],
    transpose: bool,
    what: &'static str,
) -> Result<Vec<Vec<f64>>> {
    let n = rows.len();
    if n <= DENSE_LIMIT {
        let mut a = DMatrix::<f64>::identity(n, n);
        for (s, row) in rows.iter().enumerate() {
            for &(next, p) in row {
                if transpose {
                    a[(next, s)] -= discount * p;
                } else {
                    a[(s, next)] -= discount * p;
                }
            }
        }
        let lu = a.lu();
        rhs.iter()
            .map(|b| {
                let b = nalgebra::DVector::from_column_slice(b);
                lu.solve(&b)
                    .map(|x| x.as_slice().to_vec())
                    .ok_or(Error::SingularSystem(what))
            })
            .collect()
    } else {
        rhs.iter()
            .map(|b| {
                let mut x = b.clone();
                let mut mx = vec![0.0; n];
                for _ in 0..MAX_SWEEPS {
                    apply(rows, &x, transpose, &mut mx);
                    let mut delta = 0.0f64;
                    let mut scale = 1.0f64;
                    for k in 0..n {
                        let next = b[k] + discount * mx[k];
                        delta = delta.max((next - x[k]).abs());
                        scale = scale.max(next.abs());
                        x[k] = next;
                    }
                    if delta <= ITER_TOL * scale {
                        return Ok(x);
                    }
                }
                Err(Error::SingularSystem(what))
            })
            .collect()
    }
}
