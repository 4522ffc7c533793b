//! Large-system SINR predictions, supportable loads and interference margins.
//!
//! The matched-filter results are closed forms. The MMSE results are
//! fixed points of Stieltjes-transform equations: a coupled per-user system
//! when the CDMA channels are known, and a single scalar equation once the
//! per-user channel power concentrates (rich multipath).

use crate::cdma::{InterferenceProfile, Receiver};
use crate::channel::ChannelSet;
use crate::error::{invalid, Error, Result};

/// Supportable load and the interference margin left at a given load.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginResult {
    pub alpha_star: f64,
    /// Tolerable mean OFDMA interference power `T`; zero when infeasible.
    pub margin: f64,
    pub receiver: Receiver,
    pub feasible: bool,
}

/// Successive-substitution settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointOptions {
    /// Stop once the largest relative change of an iterate falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Common starting value; defaults to the interference-free SINR.
    pub start: Option<f64>,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 10_000,
            start: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointSolution {
    pub values: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

impl FixedPointSolution {
    /// The scalar solution (first value).
    pub fn value(&self) -> f64 {
        self.values[0]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len().max(1) as f64
    }
}

fn check_powers(q: f64, sigma2: f64) -> Result<()> {
    if !(q > 0.0) {
        return Err(invalid("q must be positive"));
    }
    if !(sigma2 > 0.0) {
        return Err(invalid("sigma2 must be positive"));
    }
    Ok(())
}

fn relative_change(new: f64, old: f64) -> f64 {
    let scale = new.abs().max(old.abs());
    if scale == 0.0 {
        0.0
    } else {
        (new - old).abs() / scale
    }
}

/// Per-user MF SINR limit for known CDMA channels.
pub fn mf_asymptotic_selective(
    channels: &ChannelSet,
    q: f64,
    profile: &InterferenceProfile,
    sigma2: f64,
) -> Result<Vec<f64>> {
    let rows: Vec<&[f64]> = (0..channels.cdma.len()).map(|u| channels.cdma_gains(u)).collect();
    mf_asymptotic_from_gains(&rows, q, profile, sigma2)
}

/// Same as [`mf_asymptotic_selective`] on raw `|lambda_{u,n}|^2` rows.
pub fn mf_asymptotic_from_gains(
    gains: &[&[f64]],
    q: f64,
    profile: &InterferenceProfile,
    sigma2: f64,
) -> Result<Vec<f64>> {
    if gains.is_empty() {
        return Err(invalid("at least one CDMA user is required"));
    }
    let n = profile.len();
    if let Some(row) = gains.iter().find(|r| r.len() != n) {
        return Err(Error::DimensionMismatch {
            what: "channel gains per user",
            expected: n,
            actual: row.len(),
        });
    }
    let nf = n as f64;
    let mut load = vec![0.0; n];
    for row in gains {
        for (acc, g) in load.iter_mut().zip(row.iter()) {
            *acc += q * g;
        }
    }
    let sigma = profile.per_subcarrier();
    Ok(gains
        .iter()
        .map(|row| {
            let power = row.iter().sum::<f64>() / nf;
            let mai = row
                .iter()
                .zip(&load)
                .map(|(g, l)| g * (l - q * g))
                .sum::<f64>()
                / (nf * nf);
            let colored = row.iter().zip(sigma).map(|(g, s)| g * s).sum::<f64>() / nf;
            q * power * power / (mai + colored + power * sigma2)
        })
        .collect())
}

/// MF SINR limit under flat fading with per-user gains `|lambda_u|^2`.
pub fn mf_asymptotic_flat(
    gains: &[f64],
    n: usize,
    q: f64,
    mean_interference: f64,
    sigma2: f64,
) -> Vec<f64> {
    let total: f64 = gains.iter().map(|g| q * g).sum();
    gains
        .iter()
        .map(|g| q * g / ((total - q * g) / n as f64 + mean_interference + sigma2))
        .collect()
}

/// MF SINR limit with AWGN CDMA channels and `users` finite users.
pub fn mf_asymptotic_awgn(
    users: usize,
    n: usize,
    q: f64,
    mean_interference: f64,
    sigma2: f64,
) -> f64 {
    let others = users.saturating_sub(1) as f64;
    q / (others * q / n as f64 + mean_interference + sigma2)
}

/// Channel-independent MF SINR `q / (alpha q + mean_interference + sigma2)`.
pub fn mf_asymptotic_uniform(alpha: f64, q: f64, mean_interference: f64, sigma2: f64) -> f64 {
    q / (alpha * q + mean_interference + sigma2)
}

/// Jacobi iteration of the coupled per-user MMSE equations.
fn coupled_fixed_point(
    gains: &[&[f64]],
    q: f64,
    profile: &InterferenceProfile,
    sigma2: f64,
    opts: &FixedPointOptions,
) -> Result<FixedPointSolution> {
    check_powers(q, sigma2)?;
    if gains.is_empty() {
        return Err(invalid("at least one CDMA user is required"));
    }
    let n = profile.len();
    if let Some(row) = gains.iter().find(|r| r.len() != n) {
        return Err(Error::DimensionMismatch {
            what: "channel gains per user",
            expected: n,
            actual: row.len(),
        });
    }
    let nf = n as f64;
    let floor: Vec<f64> = profile.per_subcarrier().iter().map(|s| s + sigma2).collect();
    let mut x: Vec<f64> = match opts.start {
        Some(s) => vec![s; gains.len()],
        None => gains
            .iter()
            .map(|row| row.iter().zip(&floor).map(|(g, f)| q * g / f).sum::<f64>() / nf)
            .collect(),
    };
    let mut denom = vec![0.0; n];
    for it in 1..=opts.max_iterations {
        denom.copy_from_slice(&floor);
        for (row, xi) in gains.iter().zip(&x) {
            let w = q / (nf * (1.0 + xi));
            for (d, g) in denom.iter_mut().zip(row.iter()) {
                *d += w * g;
            }
        }
        let mut residual: f64 = 0.0;
        for (row, xu) in gains.iter().zip(x.iter_mut()) {
            let next = row.iter().zip(&denom).map(|(g, d)| q * g / d).sum::<f64>() / nf;
            residual = residual.max(relative_change(next, *xu));
            *xu = next;
        }
        if residual <= opts.tolerance {
            return Ok(FixedPointSolution {
                values: x,
                iterations: it,
                residual,
            });
        }
        if it == opts.max_iterations {
            return Err(Error::NonConvergence {
                what: "coupled MMSE fixed point",
                iterations: it,
                residual,
            });
        }
    }
    Err(Error::NonConvergence {
        what: "coupled MMSE fixed point",
        iterations: 0,
        residual: f64::INFINITY,
    })
}

/// One Jacobi sweep of the coupled MMSE equations at the iterate `x`.
pub fn mmse_selective_map(
    channels: &ChannelSet,
    q: f64,
    profile: &InterferenceProfile,
    sigma2: f64,
    x: &[f64],
) -> Result<Vec<f64>> {
    check_powers(q, sigma2)?;
    let users = channels.cdma.len();
    if x.len() != users {
        return Err(Error::DimensionMismatch {
            what: "iterate length vs. CDMA users",
            expected: users,
            actual: x.len(),
        });
    }
    let n = profile.len();
    if channels.n != n {
        return Err(Error::DimensionMismatch {
            what: "interference profile length",
            expected: channels.n,
            actual: n,
        });
    }
    let nf = n as f64;
    let mut denom: Vec<f64> = profile.per_subcarrier().iter().map(|s| s + sigma2).collect();
    for (u, xu) in x.iter().enumerate() {
        let w = q / (nf * (1.0 + xu));
        for (d, g) in denom.iter_mut().zip(channels.cdma_gains(u)) {
            *d += w * g;
        }
    }
    Ok((0..users)
        .map(|u| {
            channels
                .cdma_gains(u)
                .iter()
                .zip(&denom)
                .map(|(g, d)| q * g / d)
                .sum::<f64>()
                / nf
        })
        .collect())
}

/// Per-user MMSE SINR limit for known CDMA channels.
pub fn mmse_fixed_point_selective(
    channels: &ChannelSet,
    q: f64,
    profile: &InterferenceProfile,
    sigma2: f64,
    opts: &FixedPointOptions,
) -> Result<FixedPointSolution> {
    let rows: Vec<&[f64]> = (0..channels.cdma.len()).map(|u| channels.cdma_gains(u)).collect();
    coupled_fixed_point(&rows, q, profile, sigma2, opts)
}

/// Per-user MMSE SINR limit under flat fading with gains `|lambda_u|^2`.
pub fn mmse_fixed_point_flat(
    gains: &[f64],
    q: f64,
    profile: &InterferenceProfile,
    sigma2: f64,
    opts: &FixedPointOptions,
) -> Result<FixedPointSolution> {
    let n = profile.len();
    let rows: Vec<Vec<f64>> = gains.iter().map(|&g| vec![g; n]).collect();
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    coupled_fixed_point(&refs, q, profile, sigma2, opts)
}

/// Right-hand side of the scalar MMSE equation, `E_n[q / (alpha q/(1+x) + sigma_n^2 + sigma2)]`.
pub fn mmse_uniform_map(x: f64, alpha: f64, q: f64, profile: &InterferenceProfile, sigma2: f64) -> f64 {
    let mai = alpha * q / (1.0 + x);
    let sigma = profile.per_subcarrier();
    sigma.iter().map(|s| q / (mai + s + sigma2)).sum::<f64>() / sigma.len() as f64
}

/// Common MMSE SINR limit of all users under rich multipath.
pub fn mmse_fixed_point_uniform(
    alpha: f64,
    q: f64,
    profile: &InterferenceProfile,
    sigma2: f64,
    opts: &FixedPointOptions,
) -> Result<FixedPointSolution> {
    check_powers(q, sigma2)?;
    if !(alpha >= 0.0) {
        return Err(invalid("load alpha must be nonnegative"));
    }
    if profile.is_empty() {
        return Err(invalid("interference profile must cover at least one subcarrier"));
    }
    let mut x = opts.start.unwrap_or(q / sigma2);
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iterations {
        let next = mmse_uniform_map(x, alpha, q, profile, sigma2);
        residual = relative_change(next, x);
        x = next;
        if residual <= opts.tolerance {
            return Ok(FixedPointSolution {
                values: vec![x],
                iterations: it,
                residual,
            });
        }
    }
    Err(Error::NonConvergence {
        what: "scalar MMSE fixed point",
        iterations: opts.max_iterations,
        residual,
    })
}

/// Channel-independent SINR prediction of `receiver` under `profile`.
pub fn asymptotic_sinr(
    receiver: Receiver,
    alpha: f64,
    q: f64,
    profile: &InterferenceProfile,
    sigma2: f64,
) -> Result<f64> {
    match receiver {
        Receiver::Mf => Ok(mf_asymptotic_uniform(alpha, q, profile.mean(), sigma2)),
        Receiver::Mmse => {
            mmse_fixed_point_uniform(alpha, q, profile, sigma2, &FixedPointOptions::default())
                .map(|s| s.value())
        }
    }
}

/// Largest CDMA load meeting `beta_star` without OFDMA interference.
///
/// A non-positive result means the target is unreachable at this SNR.
pub fn supportable_load(q: f64, sigma2: f64, beta_star: f64, receiver: Receiver) -> f64 {
    let mf = 1.0 / beta_star - sigma2 / q;
    match receiver {
        Receiver::Mf => mf,
        Receiver::Mmse => mf * (1.0 + beta_star),
    }
}

/// Mean OFDMA interference the CDMA system tolerates at load `alpha`.
///
/// For MMSE this is the margin of the Jensen-reinforced constraint.
pub fn interference_margin(
    alpha: f64,
    q: f64,
    sigma2: f64,
    beta_star: f64,
    receiver: Receiver,
) -> MarginResult {
    let alpha_star = supportable_load(q, sigma2, beta_star, receiver);
    let raw = match receiver {
        Receiver::Mf => (alpha_star - alpha) * q,
        Receiver::Mmse => (alpha_star - alpha) * q / (1.0 + beta_star),
    };
    let feasible = alpha < alpha_star && raw > 0.0;
    MarginResult {
        alpha_star,
        margin: if feasible { raw } else { 0.0 },
        receiver,
        feasible,
    }
}

/// Relative slack granted to the target comparison, so that a profile built
/// exactly at the margin is accepted despite rounding.
pub const TARGET_RTOL: f64 = 1e-12;

/// Decides whether the MMSE SINR limit under `profile` reaches `beta_star`
/// without solving the fixed point.
pub fn proposition1_check(
    beta_star: f64,
    alpha: f64,
    q: f64,
    sigma2: f64,
    profile: &InterferenceProfile,
) -> bool {
    let lhs = mmse_uniform_map(beta_star, alpha, q, profile, sigma2);
    lhs >= beta_star * (1.0 - TARGET_RTOL)
}

/// Both sides of the concavity bound
/// `E_n[q/(a + sigma_n^2 + sigma2)] >= q/(a + mean + sigma2)`, `a = alpha q/(1+beta)`.
pub fn jensen_reinforcement_gap(
    beta: f64,
    alpha: f64,
    q: f64,
    sigma2: f64,
    profile: &InterferenceProfile,
) -> (f64, f64) {
    let lhs = mmse_uniform_map(beta, alpha, q, profile, sigma2);
    let rhs = q / (alpha * q / (1.0 + beta) + profile.mean() + sigma2);
    (lhs, rhs)
}

/// Large-system SINR of an OFDMA user on one subcarrier.
pub fn ofdma_asymptotic_sinr(p: f64, g: f64, alpha: f64, q: f64, sigma2: f64) -> f64 {
    p * g / (alpha * q + sigma2)
}
