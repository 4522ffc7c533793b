//! Exact power allocation for a fixed subcarrier assignment.
//!
//! With ownership fixed the problem is concave: maximize
//! `sum log2(1 + p g / floor)` subject to one power budget per user and the
//! shared interference budget. The optimum has the stationary form
//! `p = [1/((lambda_k + delta g) ln 2) - floor/g]^+`; `delta` is found by a
//! monotone root search on the mean interference, and for each `delta` every
//! `lambda_k` by a root search on that user's power.

use std::f64::consts::LN_2;

use super::{AllocationProblem, PowerAllocation};
use crate::error::Result;

/// Optimal powers for a fixed assignment together with their multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignedSolution {
    pub allocation: PowerAllocation,
    pub delta: f64,
    pub lambdas: Vec<f64>,
    pub throughput: f64,
}

const ROOT_ITERATIONS: usize = 200;
const ROOT_RTOL: f64 = 1e-15;

/// Root of a nonincreasing `f` on `[lo, hi]` with `f(lo) >= 0 >= f(hi)`,
/// by the Illinois variant of regula falsi with a bisection safeguard.
fn decreasing_root(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut f_lo = f(lo);
    let mut f_hi = f(hi);
    let mut side = 0i8;
    for _ in 0..ROOT_ITERATIONS {
        if hi - lo <= ROOT_RTOL * hi.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        let mut x = if f_lo.is_finite() && f_hi.is_finite() && f_lo != f_hi {
            (lo * f_hi - hi * f_lo) / (f_hi - f_lo)
        } else {
            0.5 * (lo + hi)
        };
        let width = hi - lo;
        if !(x > lo + 1e-3 * width && x < hi - 1e-3 * width) {
            x = 0.5 * (lo + hi);
        }
        let fx = f(x);
        if fx == 0.0 {
            return x;
        }
        if fx > 0.0 {
            lo = x;
            f_lo = fx;
            if side == 1 {
                f_hi *= 0.5;
            }
            side = 1;
        } else {
            hi = x;
            f_hi = fx;
            if side == -1 {
                f_lo *= 0.5;
            }
            side = -1;
        }
    }
    // `hi` keeps the constraint satisfied.
    hi
}

struct UserSlice {
    /// `(subcarrier, gain)` pairs with positive gain.
    carriers: Vec<(usize, f64)>,
    cap: f64,
    max_gain: f64,
}

fn stationary(lambda: f64, delta: f64, g: f64, floor: f64) -> f64 {
    let price = lambda + delta * g;
    if price > 0.0 {
        (1.0 / (price * LN_2) - floor / g).max(0.0)
    } else {
        f64::INFINITY
    }
}

impl UserSlice {
    fn power(&self, lambda: f64, delta: f64, floor: f64) -> f64 {
        self.carriers
            .iter()
            .map(|&(_, g)| stationary(lambda, delta, g, floor))
            .sum()
    }

    fn interference(&self, lambda: f64, delta: f64, floor: f64) -> f64 {
        self.carriers
            .iter()
            .map(|&(_, g)| stationary(lambda, delta, g, floor) * g)
            .sum()
    }

    /// Smallest `lambda >= 0` meeting the power cap at this `delta`.
    fn lambda(&self, delta: f64, floor: f64) -> f64 {
        if self.carriers.is_empty() || self.cap <= 0.0 {
            return 0.0;
        }
        if delta > 0.0 && self.power(0.0, delta, floor) <= self.cap {
            return 0.0;
        }
        // At this price every stationary power is zero.
        let hi = self.max_gain / (floor * LN_2);
        decreasing_root(|l| self.power(l, delta, floor) - self.cap, 0.0, hi)
    }
}

/// Solves the power problem for the given ownership of subcarriers.
///
/// Unowned subcarriers and owned subcarriers with zero gain get no power.
pub fn optimal_powers_for_assignment(
    problem: &AllocationProblem,
    assignment: &[Option<usize>],
) -> Result<AssignedSolution> {
    problem.validate()?;
    let (k_users, n) = (problem.k(), problem.n());
    if assignment.len() != n {
        return Err(crate::error::Error::DimensionMismatch {
            what: "assignment length",
            expected: n,
            actual: assignment.len(),
        });
    }
    let floor = problem.noise_floor;
    let mut users: Vec<UserSlice> = (0..k_users)
        .map(|k| UserSlice {
            carriers: Vec::new(),
            cap: problem.power_caps[k],
            max_gain: 0.0,
        })
        .collect();
    for (sc, owner) in assignment.iter().enumerate() {
        if let Some(k) = *owner {
            if k >= k_users {
                return Err(crate::error::invalid(format!(
                    "subcarrier {sc} assigned to unknown user {k}"
                )));
            }
            let g = problem.gains[k][sc];
            if g > 0.0 {
                users[k].carriers.push((sc, g));
                users[k].max_gain = users[k].max_gain.max(g);
            }
        }
    }
    let budget = n as f64 * problem.margin;
    let interference_at = |delta: f64| -> f64 {
        users
            .iter()
            .map(|u| {
                if u.cap <= 0.0 {
                    0.0
                } else {
                    u.interference(u.lambda(delta, floor), delta, floor)
                }
            })
            .sum()
    };

    let delta = if problem.margin <= 0.0 {
        // Nothing may be transmitted; any price that zeroes every power.
        1.0 / (floor * LN_2)
    } else if interference_at(0.0) <= budget {
        0.0
    } else {
        decreasing_root(|d| interference_at(d) - budget, 0.0, 1.0 / (floor * LN_2))
    };

    let mut power = vec![0.0; n];
    let mut lambdas = vec![0.0; k_users];
    let mut owners = vec![None; n];
    for (k, user) in users.iter().enumerate() {
        if user.cap <= 0.0 {
            continue;
        }
        let lambda = user.lambda(delta, floor);
        lambdas[k] = lambda;
        for &(sc, g) in &user.carriers {
            let p = stationary(lambda, delta, g, floor);
            if p > 0.0 && p.is_finite() {
                power[sc] = p;
                owners[sc] = Some(k);
            }
        }
    }
    let mut allocation = PowerAllocation::from_assignment(k_users, owners, &power);
    allocation.project_feasible(problem);
    let throughput = allocation.throughput(problem);
    Ok(AssignedSolution {
        allocation,
        delta,
        lambdas,
        throughput,
    })
}
