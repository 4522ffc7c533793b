//! Closed-form special cases: pure water-filling when only the power caps
//! bind, and channel inversion when only the interference margin binds.

use std::f64::consts::LN_2;

use super::{AllocationProblem, PowerAllocation};
use crate::error::{invalid, Result};

/// Single-user water-filling result.
#[derive(Debug, Clone, PartialEq)]
pub struct WaterFill {
    pub powers: Vec<f64>,
    /// Common level `w` with `p_n = [w - floor/g_n]^+`.
    pub water_level: f64,
    /// A positive cap could not be spent because every gain is zero.
    pub infeasible_spend: bool,
}

/// Water-filling of one user's cap over its subcarriers.
///
/// The level is found exactly by sorting the inverse gains, so the active
/// set and `sum p = cap` hold up to rounding.
pub fn solve_p2_waterfill(gains: &[f64], cap: f64, noise_floor: f64) -> Result<WaterFill> {
    if !(cap >= 0.0) || !cap.is_finite() {
        return Err(invalid("power cap must be finite and nonnegative"));
    }
    if !(noise_floor > 0.0) {
        return Err(invalid("noise floor must be positive"));
    }
    if gains.iter().any(|&g| !(g >= 0.0) || !g.is_finite()) {
        return Err(invalid("channel gains must be finite and nonnegative"));
    }
    let mut levels: Vec<f64> = gains
        .iter()
        .filter(|&&g| g > 0.0)
        .map(|&g| noise_floor / g)
        .collect();
    let zero = || WaterFill {
        powers: vec![0.0; gains.len()],
        water_level: 0.0,
        infeasible_spend: false,
    };
    if cap == 0.0 {
        return Ok(zero());
    }
    if levels.is_empty() {
        return Ok(WaterFill {
            infeasible_spend: true,
            ..zero()
        });
    }
    levels.sort_by(f64::total_cmp);
    let mut prefix = 0.0;
    let mut water_level = levels[0] + cap;
    for (m, &a) in levels.iter().enumerate() {
        prefix += a;
        let w = (cap + prefix) / (m + 1) as f64;
        water_level = w;
        match levels.get(m + 1) {
            Some(&next) if w > next => continue,
            _ => break,
        }
    }
    let powers = gains
        .iter()
        .map(|&g| {
            if g > 0.0 {
                (water_level - noise_floor / g).max(0.0)
            } else {
                0.0
            }
        })
        .collect();
    Ok(WaterFill {
        powers,
        water_level,
        infeasible_spend: false,
    })
}

/// Channel-inversion result.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelInverse {
    pub allocation: PowerAllocation,
    /// Sum rate in bits per OFDMA symbol.
    pub throughput: f64,
    /// Subcarriers with at least one nonzero gain.
    pub active_subcarriers: usize,
    /// Some subcarriers had no usable user, so the rate uses fewer than `N`
    /// subcarriers and differs from `N log2(1 + T/floor)`.
    pub reduced: bool,
}

/// Equal received power `p g` on every usable subcarrier, spending the whole
/// interference margin and ignoring the power caps.
///
/// Each subcarrier goes to its strongest user (lowest index on ties); the
/// rate does not depend on that choice.
pub fn solve_p3_channel_inverse(problem: &AllocationProblem) -> Result<ChannelInverse> {
    problem.validate()?;
    let (k_users, n) = (problem.k(), problem.n());
    let mut assignment = vec![None; n];
    for (sc, owner) in assignment.iter_mut().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for k in 0..k_users {
            let g = problem.gains[k][sc];
            if g > 0.0 && best.is_none_or(|(_, b)| g > b) {
                best = Some((k, g));
            }
        }
        *owner = best.map(|(k, _)| k);
    }
    let active = assignment.iter().flatten().count();
    if problem.margin == 0.0 || active == 0 {
        return Ok(ChannelInverse {
            allocation: PowerAllocation::zeros(k_users, n),
            throughput: 0.0,
            active_subcarriers: active,
            reduced: active < n,
        });
    }
    let received = problem.margin * n as f64 / active as f64;
    let mut power = vec![0.0; n];
    for (sc, owner) in assignment.iter().enumerate() {
        if let Some(k) = *owner {
            power[sc] = received / problem.gains[k][sc];
        }
    }
    let allocation = PowerAllocation::from_assignment(k_users, assignment, &power);
    let throughput = active as f64 * (received / problem.noise_floor).ln_1p() / LN_2;
    Ok(ChannelInverse {
        allocation,
        throughput,
        active_subcarriers: active,
        reduced: active < n,
    })
}
