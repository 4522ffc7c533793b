//! Exhaustive reference solver for tiny instances.
//!
//! Every exclusive assignment is enumerated and its concave power problem is
//! solved by a primal log-barrier Newton method, independently of the
//! multiplier-based solvers used elsewhere in this module.

use std::f64::consts::LN_2;

use nalgebra::{DMatrix, DVector};

use super::{AllocationProblem, PowerAllocation};
use crate::error::{Error, Result};

pub const ORACLE_MAX_SUBCARRIERS: usize = 6;
pub const ORACLE_MAX_USERS: usize = 2;

/// Best allocation over all `K^N` assignments.
pub fn brute_force_oracle(problem: &AllocationProblem) -> Result<(PowerAllocation, f64)> {
    problem.validate()?;
    let (k_users, n) = (problem.k(), problem.n());
    if n > ORACLE_MAX_SUBCARRIERS || k_users > ORACLE_MAX_USERS {
        return Err(Error::TooLarge(format!(
            "oracle handles N <= {ORACLE_MAX_SUBCARRIERS}, K <= {ORACLE_MAX_USERS}; got N = {n}, K = {k_users}"
        )));
    }
    let mut best = (PowerAllocation::zeros(k_users, n), 0.0);
    let combos = k_users.pow(n as u32);
    for code in 0..combos {
        let mut c = code;
        let assignment: Vec<usize> = (0..n)
            .map(|_| {
                let k = c % k_users;
                c /= k_users;
                k
            })
            .collect();
        let power = barrier_solve(problem, &assignment)?;
        let owners = assignment
            .iter()
            .zip(&power)
            .map(|(&k, &p)| (p > 0.0).then_some(k))
            .collect();
        let mut alloc = PowerAllocation::from_assignment(k_users, owners, &power);
        alloc.project_feasible(problem);
        let value = alloc.throughput(problem);
        if value > best.1 {
            best = (alloc, value);
        }
    }
    Ok(best)
}

/// Maximizes the sum rate for a full assignment by a barrier method.
fn barrier_solve(problem: &AllocationProblem, assignment: &[usize]) -> Result<Vec<f64>> {
    let n = problem.n();
    let floor = problem.noise_floor;
    let vars: Vec<usize> = (0..n)
        .filter(|&sc| problem.gains[assignment[sc]][sc] > 0.0 && problem.power_caps[assignment[sc]] > 0.0)
        .collect();
    let mut power = vec![0.0; n];
    if vars.is_empty() || problem.margin == 0.0 {
        return Ok(power);
    }
    let m = vars.len();
    let g: Vec<f64> = vars.iter().map(|&sc| problem.gains[assignment[sc]][sc]).collect();
    let owner: Vec<usize> = vars.iter().map(|&sc| assignment[sc]).collect();
    let users: Vec<usize> = {
        let mut u = owner.clone();
        u.sort_unstable();
        u.dedup();
        u
    };
    let budget = n as f64 * problem.margin;

    // Strictly interior start.
    let mut x: Vec<f64> = (0..m)
        .map(|i| {
            let share = owner.iter().filter(|&&o| o == owner[i]).count() as f64;
            0.5 * (problem.power_caps[owner[i]] / share).min(budget / (m as f64 * g[i]))
        })
        .collect();

    let slacks = |x: &[f64]| -> Option<(Vec<f64>, f64)> {
        let caps: Vec<f64> = users
            .iter()
            .map(|&k| {
                problem.power_caps[k]
                    - x.iter().zip(&owner).filter(|(_, &o)| o == k).map(|(p, _)| p).sum::<f64>()
            })
            .collect();
        let margin = budget - x.iter().zip(&g).map(|(p, g)| p * g).sum::<f64>();
        let ok = x.iter().all(|&p| p > 0.0) && caps.iter().all(|&s| s > 0.0) && margin > 0.0;
        ok.then_some((caps, margin))
    };
    let objective = |x: &[f64], t: f64| -> Option<f64> {
        let (caps, margin) = slacks(x)?;
        let rate: f64 = x.iter().zip(&g).map(|(p, g)| (p * g / floor).ln_1p() / LN_2).sum();
        let barrier = x.iter().map(|p| p.ln()).sum::<f64>()
            + caps.iter().map(|s| s.ln()).sum::<f64>()
            + margin.ln();
        Some(t * rate + barrier)
    };

    let constraints = (m + users.len() + 1) as f64;
    let mut t = 1.0;
    while constraints / t > 1e-11 {
        for _ in 0..200 {
            let (caps, margin) = slacks(&x).expect("iterate stays interior");
            let mut grad = DVector::<f64>::zeros(m);
            let mut hess = DMatrix::<f64>::zeros(m, m);
            for i in 0..m {
                let d = floor + x[i] * g[i];
                grad[i] = t * g[i] / (d * LN_2) + 1.0 / x[i] - g[i] / margin;
                hess[(i, i)] -= t * g[i] * g[i] / (d * d * LN_2) + 1.0 / (x[i] * x[i]);
                for j in 0..m {
                    hess[(i, j)] -= g[i] * g[j] / (margin * margin);
                }
            }
            for (ui, &k) in users.iter().enumerate() {
                let s = caps[ui];
                for i in (0..m).filter(|&i| owner[i] == k) {
                    grad[i] -= 1.0 / s;
                    for j in (0..m).filter(|&j| owner[j] == k) {
                        hess[(i, j)] -= 1.0 / (s * s);
                    }
                }
            }
            let neg = -hess;
            let step = neg
                .cholesky()
                .ok_or_else(|| Error::Numerical("barrier Hessian lost definiteness".into()))?
                .solve(&grad);
            let decrement = grad.dot(&step);
            if decrement < 1e-14 {
                break;
            }
            let f0 = objective(&x, t).expect("interior");
            let mut s = 1.0;
            loop {
                let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + s * b).collect();
                if let Some(f1) = objective(&trial, t) {
                    if f1 >= f0 + 0.25 * s * decrement {
                        x = trial;
                        break;
                    }
                }
                s *= 0.5;
                if s < 1e-16 {
                    break;
                }
            }
            if s < 1e-16 {
                break;
            }
        }
        t *= 8.0;
    }
    for (i, &sc) in vars.iter().enumerate() {
        power[sc] = x[i];
    }
    Ok(power)
}
