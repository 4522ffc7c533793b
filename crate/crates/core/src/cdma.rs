//! CDMA uplink receivers under OFDMA interference.
//!
//! Spreading codes live in the chip domain; everything downstream works on
//! frequency-domain effective signatures `e_u = Lambda_u W s_u`. The exact
//! finite-`N` SINR of the matched filter and the linear MMSE receiver are
//! evaluated from the signatures and the diagonal OFDMA interference
//! covariance. [`simulate_uplink_frame`] is an independent symbol-level path:
//! it transmits through time-domain convolutions with cyclic prefix and
//! measures SINR at the filter output.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::allocator::PowerAllocation;
use crate::channel::{ChannelSet, SystemConfig};
use crate::error::{invalid, Error, Result};
use crate::rng::complex_gaussian;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Linear CDMA receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Receiver {
    #[default]
    Mf,
    Mmse,
}

impl fmt::Display for Receiver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Receiver::Mf => "mf",
            Receiver::Mmse => "mmse",
        })
    }
}

impl FromStr for Receiver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mf" => Ok(Receiver::Mf),
            "mmse" => Ok(Receiver::Mmse),
            other => Err(invalid(format!("unknown receiver '{other}'"))),
        }
    }
}

/// Where a SINR value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SinrSource {
    ExactFormula,
    SymbolLevel,
    Asymptotic,
}

/// Random antipodal spreading codes, one row per user.
#[derive(Debug, Clone, PartialEq)]
pub struct SpreadingCodeSet {
    n: usize,
    codes: Vec<Vec<f64>>,
}

impl SpreadingCodeSet {
    /// Wraps explicit codes; each must have length `n` and nonzero norm.
    pub fn from_codes(n: usize, codes: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(c) = codes.iter().find(|c| c.len() != n) {
            return Err(Error::DimensionMismatch {
                what: "spreading code length",
                expected: n,
                actual: c.len(),
            });
        }
        Ok(Self { n, codes })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn code(&self, u: usize) -> &[f64] {
        &self.codes[u]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.codes.iter().map(Vec::as_slice)
    }
}

/// Draws `users` codes with i.i.d. equiprobable chips `+-1/sqrt(N)`.
pub fn gen_spreading_codes<R: Rng + ?Sized>(
    users: usize,
    n: usize,
    rng: &mut R,
) -> Result<SpreadingCodeSet> {
    if n == 0 {
        return Err(invalid("spreading gain N must be at least 1"));
    }
    let chip = 1.0 / (n as f64).sqrt();
    let codes = (0..users)
        .map(|_| {
            (0..n)
                .map(|_| if rng.random::<bool>() { chip } else { -chip })
                .collect()
        })
        .collect();
    Ok(SpreadingCodeSet { n, codes })
}

/// Frequency-domain effective signatures, stored as the columns of an
/// `N x U` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveSignatures {
    matrix: DMatrix<Complex64>,
}

impl EffectiveSignatures {
    pub fn from_matrix(matrix: DMatrix<Complex64>) -> Self {
        Self { matrix }
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn len(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.ncols() == 0
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn signature(&self, u: usize) -> Vec<Complex64> {
        self.matrix.column(u).iter().copied().collect()
    }

    /// `||e_u||^2`.
    pub fn energy(&self, u: usize) -> f64 {
        self.matrix.column(u).iter().map(|z| z.norm_sqr()).sum()
    }

    /// Copy with signature `u` multiplied by `c`.
    pub fn scaled(&self, u: usize, c: Complex64) -> Self {
        let mut matrix = self.matrix.clone();
        for z in matrix.column_mut(u).iter_mut() {
            *z *= c;
        }
        Self { matrix }
    }
}

/// Unitary DFT `W x` of a real chip sequence.
fn unitary_dft(fft: &dyn rustfft::Fft<f64>, chips: &[f64]) -> Vec<Complex64> {
    let scale = 1.0 / (chips.len() as f64).sqrt();
    let mut buf: Vec<Complex64> = chips.iter().map(|&c| Complex64::new(c, 0.0)).collect();
    fft.process(&mut buf);
    for z in &mut buf {
        *z *= scale;
    }
    buf
}

/// `e_u = Lambda_u W s_u` for every CDMA user.
pub fn effective_signatures(
    codes: &SpreadingCodeSet,
    channels: &ChannelSet,
) -> Result<EffectiveSignatures> {
    if codes.n() != channels.n {
        return Err(Error::DimensionMismatch {
            what: "spreading gain vs. subcarrier count",
            expected: channels.n,
            actual: codes.n(),
        });
    }
    if codes.len() != channels.cdma.len() {
        return Err(Error::DimensionMismatch {
            what: "CDMA users with codes vs. with channels",
            expected: channels.cdma.len(),
            actual: codes.len(),
        });
    }
    let n = codes.n();
    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut matrix = DMatrix::from_element(n, codes.len(), ZERO);
    for (u, code) in codes.iter().enumerate() {
        let spread = unitary_dft(fft.as_ref(), code);
        let lambda = &channels.cdma[u].response.values;
        for (row, (s, l)) in spread.iter().zip(lambda).enumerate() {
            matrix[(row, u)] = l * s;
        }
    }
    Ok(EffectiveSignatures { matrix })
}

/// Per-subcarrier OFDMA interference power seen by the CDMA receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct InterferenceProfile {
    per_subcarrier: Vec<f64>,
    mean: f64,
}

impl InterferenceProfile {
    pub fn new(per_subcarrier: Vec<f64>) -> Result<Self> {
        if per_subcarrier.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(invalid("interference powers must be finite and nonnegative"));
        }
        let mean = if per_subcarrier.is_empty() {
            0.0
        } else {
            per_subcarrier.iter().sum::<f64>() / per_subcarrier.len() as f64
        };
        Ok(Self {
            per_subcarrier,
            mean,
        })
    }

    pub fn zero(n: usize) -> Self {
        Self {
            per_subcarrier: vec![0.0; n],
            mean: 0.0,
        }
    }

    pub fn uniform(n: usize, level: f64) -> Result<Self> {
        Self::new(vec![level; n])
    }

    /// `sigma_n^2 = sum_k p_{k,n} g_{k,n}`.
    pub fn from_allocation(alloc: &PowerAllocation, gains: &[Vec<f64>]) -> Result<Self> {
        Self::new(alloc.interference(gains)?)
    }

    pub fn per_subcarrier(&self) -> &[f64] {
        &self.per_subcarrier
    }

    /// `(1/N) sum_n sigma_n^2`.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn len(&self) -> usize {
        self.per_subcarrier.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_subcarrier.is_empty()
    }
}

/// Per-user SINR values together with summary statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SinrReport {
    pub per_user: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
    pub receiver: Receiver,
    pub source: SinrSource,
    /// Standard error of each per-user value; empty unless measured.
    pub std_errors: Vec<f64>,
}

impl SinrReport {
    pub fn new(per_user: Vec<f64>, receiver: Receiver, source: SinrSource) -> Self {
        let (mean, variance) = mean_variance(&per_user);
        Self {
            per_user,
            mean,
            variance,
            receiver,
            source,
            std_errors: Vec::new(),
        }
    }
}

pub(crate) fn mean_variance(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let variance = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, variance)
}

fn check_inputs(
    sigs: &EffectiveSignatures,
    q: f64,
    profile: &InterferenceProfile,
    sigma2: f64,
) -> Result<()> {
    if sigs.is_empty() {
        return Err(invalid("at least one CDMA user is required"));
    }
    if profile.len() != sigs.n() {
        return Err(Error::DimensionMismatch {
            what: "interference profile length",
            expected: sigs.n(),
            actual: profile.len(),
        });
    }
    if !(q > 0.0) {
        return Err(invalid("q must be positive"));
    }
    if !(sigma2 > 0.0) {
        return Err(invalid("sigma2 must be positive"));
    }
    Ok(())
}

/// Exact matched-filter SINR of every user.
pub fn mf_sinr_exact(
    sigs: &EffectiveSignatures,
    q: f64,
    profile: &InterferenceProfile,
    sigma2: f64,
) -> Result<SinrReport> {
    check_inputs(sigs, q, profile, sigma2)?;
    let e = sigs.matrix();
    let gram = e.ad_mul(e);
    let users = sigs.len();
    let per_user = (0..users)
        .map(|u| {
            let energy = gram[(u, u)].re;
            if !(energy > 0.0) {
                return Err(Error::DegenerateUser(u));
            }
            let mai: f64 = (0..users)
                .filter(|&i| i != u)
                .map(|i| gram[(u, i)].norm_sqr())
                .sum();
            let colored: f64 = e
                .column(u)
                .iter()
                .zip(profile.per_subcarrier())
                .map(|(z, s)| z.norm_sqr() * (s + sigma2))
                .sum();
            Ok(q * energy * energy / (q * mai + colored))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SinrReport::new(per_user, Receiver::Mf, SinrSource::ExactFormula))
}

/// Output SINR of user `u` for an arbitrary linear filter `w`.
///
/// The matched filter is `w = e_u`; any nonzero multiple of a filter gives
/// the same value.
pub fn filter_sinr(
    sigs: &EffectiveSignatures,
    u: usize,
    w: &[Complex64],
    q: f64,
    profile: &InterferenceProfile,
    sigma2: f64,
) -> Result<f64> {
    check_inputs(sigs, q, profile, sigma2)?;
    if u >= sigs.len() {
        return Err(invalid("user index out of range"));
    }
    if w.len() != sigs.n() {
        return Err(Error::DimensionMismatch {
            what: "filter length",
            expected: sigs.n(),
            actual: w.len(),
        });
    }
    let e = sigs.matrix();
    let project = |i: usize| -> Complex64 {
        w.iter().zip(e.column(i).iter()).map(|(a, b)| a.conj() * b).sum()
    };
    let signal = q * project(u).norm_sqr();
    if !(signal > 0.0) {
        return Err(Error::DegenerateUser(u));
    }
    let mai: f64 = (0..sigs.len())
        .filter(|&i| i != u)
        .map(|i| project(i).norm_sqr())
        .sum();
    let colored: f64 = w
        .iter()
        .zip(profile.per_subcarrier())
        .map(|(z, s)| z.norm_sqr() * (s + sigma2))
        .sum();
    Ok(signal / (q * mai + colored))
}

/// `sum_i q e_i e_i^H + diag(sigma_n^2) + sigma2 I`.
fn total_covariance(
    e: &DMatrix<Complex64>,
    q: f64,
    profile: &InterferenceProfile,
    sigma2: f64,
) -> DMatrix<Complex64> {
    let mut r = e * e.adjoint();
    r *= Complex64::new(q, 0.0);
    for (n, s) in profile.per_subcarrier().iter().enumerate() {
        r[(n, n)] += Complex64::new(s + sigma2, 0.0);
    }
    r
}

fn factor(
    r: DMatrix<Complex64>,
) -> Result<(nalgebra::Cholesky<Complex64, nalgebra::Dyn>, DMatrix<Complex64>)> {
    let chol = r
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("receiver covariance is not positive definite".into()))?;
    // Backward-error probe on the all-ones right-hand side.
    let probe = DVector::from_element(r.nrows(), Complex64::new(1.0, 0.0));
    let x = chol.solve(&probe);
    let residual = (&r * &x - &probe).norm() / (r.norm() * x.norm()).max(f64::MIN_POSITIVE);
    if residual > 1e-10 {
        return Err(Error::Numerical(format!(
            "covariance solve residual {residual:e} exceeds 1e-10"
        )));
    }
    Ok((chol, r))
}

/// Exact linear MMSE SINR of every user.
///
/// The filter is built from the full covariance (own signature included);
/// the reported SINR is the standard self-excluded value
/// `q e_u^H (R_{-u} + Sigma + sigma2 I)^{-1} e_u`, obtained from the
/// self-included quadratic form `t` as `t / (1 - t)`.
pub fn mmse_sinr_exact(
    sigs: &EffectiveSignatures,
    q: f64,
    profile: &InterferenceProfile,
    sigma2: f64,
) -> Result<SinrReport> {
    check_inputs(sigs, q, profile, sigma2)?;
    let e = sigs.matrix();
    for u in 0..sigs.len() {
        if !(sigs.energy(u) > 0.0) {
            return Err(Error::DegenerateUser(u));
        }
    }
    let (chol, _) = factor(total_covariance(e, q, profile, sigma2))?;
    let mut whitened = e.clone();
    chol.l_dirty().solve_lower_triangular_mut(&mut whitened);
    let per_user = (0..sigs.len())
        .map(|u| {
            let t = q * whitened.column(u).iter().map(|z| z.norm_sqr()).sum::<f64>();
            if !(t < 1.0) {
                return Err(Error::Numerical(format!(
                    "self-included MMSE quadratic form {t} is not below one for user {u}"
                )));
            }
            Ok(t / (1.0 - t))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SinrReport::new(per_user, Receiver::Mmse, SinrSource::ExactFormula))
}

/// Dispatches to the exact SINR of `receiver`.
pub fn sinr_exact(
    receiver: Receiver,
    sigs: &EffectiveSignatures,
    q: f64,
    profile: &InterferenceProfile,
    sigma2: f64,
) -> Result<SinrReport> {
    match receiver {
        Receiver::Mf => mf_sinr_exact(sigs, q, profile, sigma2),
        Receiver::Mmse => mmse_sinr_exact(sigs, q, profile, sigma2),
    }
}

/// Inserts a cyclic prefix of `cp` samples, convolves with `taps` and
/// strips the prefix again. The preceding block is `prev` (same length as
/// the prefixed block), so inter-block leakage is modelled explicitly.
fn through_channel(
    block: &[Complex64],
    prev: &[Complex64],
    cp: usize,
    taps: &[Complex64],
) -> Vec<Complex64> {
    let n = block.len();
    let mut tx: Vec<Complex64> = Vec::with_capacity(2 * (n + cp));
    tx.extend_from_slice(prev);
    let start = tx.len();
    tx.extend_from_slice(&block[n - cp..]);
    tx.extend_from_slice(block);
    (start + cp..start + cp + n)
        .map(|t| {
            taps.iter()
                .enumerate()
                .filter(|&(l, _)| l <= t)
                .map(|(l, h)| h * tx[t - l])
                .sum()
        })
        .collect()
}

fn with_prefix(block: &[Complex64], cp: usize) -> Vec<Complex64> {
    let n = block.len();
    let mut out = Vec::with_capacity(n + cp);
    out.extend_from_slice(&block[n - cp..]);
    out.extend_from_slice(block);
    out
}

/// Symbol-level uplink simulation over `slots` consecutive symbol periods.
///
/// CDMA symbols are `CN(0, q)`, OFDMA symbols `CN(0, p_{k,n})` and noise
/// `CN(0, sigma2)`. All users transmit cyclic-prefixed blocks through their
/// time-domain taps; the receiver strips the prefix, applies the unitary DFT
/// and the MF or MMSE filter. Each user's output is split into the
/// contribution of its own transmitted symbol and the residual; the reported
/// SINR is the ratio of their sample powers, with delta-method standard
/// errors in [`SinrReport::std_errors`].
pub fn simulate_uplink_frame<R: Rng + ?Sized>(
    cfg: &SystemConfig,
    codes: &SpreadingCodeSet,
    channels: &ChannelSet,
    alloc: &PowerAllocation,
    receiver: Receiver,
    slots: usize,
    rng: &mut R,
) -> Result<SinrReport> {
    measure_uplink_frame(cfg, codes, channels, alloc, receiver, slots, rng).map(|m| m.report)
}

/// Raw sample powers behind a symbol-level SINR measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMeasurement {
    pub report: SinrReport,
    /// Mean power of each user's own-symbol contribution at the filter output.
    pub signal_power: Vec<f64>,
    /// Mean power of everything else at the filter output.
    pub residual_power: Vec<f64>,
}

/// Same as [`simulate_uplink_frame`] but also returns the sample powers.
pub fn measure_uplink_frame<R: Rng + ?Sized>(
    cfg: &SystemConfig,
    codes: &SpreadingCodeSet,
    channels: &ChannelSet,
    alloc: &PowerAllocation,
    receiver: Receiver,
    slots: usize,
    rng: &mut R,
) -> Result<FrameMeasurement> {
    let n = cfg.n;
    if channels.n != n || codes.n() != n {
        return Err(Error::DimensionMismatch {
            what: "subcarrier count",
            expected: n,
            actual: channels.n.min(codes.n()),
        });
    }
    if alloc.k() != channels.ofdma.len() {
        return Err(Error::DimensionMismatch {
            what: "OFDMA users in allocation",
            expected: channels.ofdma.len(),
            actual: alloc.k(),
        });
    }
    if alloc.k() > 0 && alloc.n() != n {
        return Err(Error::DimensionMismatch {
            what: "allocation subcarriers",
            expected: n,
            actual: alloc.n(),
        });
    }
    alloc.check_exclusive()?;
    if slots < 2 {
        return Err(invalid("at least two symbol slots are required"));
    }
    if !(cfg.q > 0.0) || !(cfg.sigma2 >= 0.0) {
        return Err(invalid("q must be positive and sigma2 nonnegative"));
    }
    let cp = cfg.cp_len;
    let longest = channels
        .cdma
        .iter()
        .chain(&channels.ofdma)
        .map(|c| c.taps.len())
        .max()
        .unwrap_or(1);
    if cp + 1 < longest || cp > n {
        return Err(invalid(format!(
            "cyclic prefix {cp} cannot absorb {longest} channel taps on an {n}-chip block"
        )));
    }

    let sigs = effective_signatures(codes, channels)?;
    let gains = channels.ofdma_gain_matrix();
    let profile = if alloc.k() > 0 {
        InterferenceProfile::from_allocation(alloc, &gains)?
    } else {
        InterferenceProfile::zero(n)
    };
    let e = sigs.matrix();
    let filters = match receiver {
        Receiver::Mf => e.clone(),
        Receiver::Mmse => {
            let (chol, _) = factor(total_covariance(e, cfg.q, &profile, cfg.sigma2))?;
            chol.solve(e) * Complex64::new(cfg.q, 0.0)
        }
    };

    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let scale = 1.0 / (n as f64).sqrt();
    let users = codes.len();

    // Received chip block of each CDMA user for a unit symbol, after CP removal.
    let silent = vec![ZERO; n + cp];
    let cdma_rx: Vec<Vec<Complex64>> = (0..users)
        .map(|u| {
            let chips: Vec<Complex64> = codes.code(u).iter().map(|&c| Complex64::new(c, 0.0)).collect();
            through_channel(&chips, &silent, cp, &channels.cdma[u].taps.0)
        })
        .collect();
    // Filter response to each user's own unit-symbol block.
    let own_gain: Vec<Complex64> = (0..users)
        .map(|u| {
            let mut buf = cdma_rx[u].clone();
            fwd.process(&mut buf);
            filters
                .column(u)
                .iter()
                .zip(&buf)
                .map(|(f, r)| f.conj() * r * scale)
                .sum()
        })
        .collect();

    let mut prev_ofdma: Vec<Vec<Complex64>> = vec![silent.clone(); alloc.k()];
    let mut sig_sum = vec![0.0; users];
    let mut res_sum = vec![0.0; users];
    let mut sig_sq = vec![0.0; users];
    let mut res_sq = vec![0.0; users];
    let mut cross = vec![0.0; users];
    let mut symbols = vec![ZERO; users];
    let mut rx = vec![ZERO; n];

    for _ in 0..slots {
        rx.iter_mut().for_each(|z| *z = ZERO);
        for (u, a) in symbols.iter_mut().enumerate() {
            *a = complex_gaussian(rng, cfg.q);
            for (z, c) in rx.iter_mut().zip(&cdma_rx[u]) {
                *z += c * *a;
            }
        }
        for (k, prev) in prev_ofdma.iter_mut().enumerate() {
            let mut block: Vec<Complex64> = (0..n)
                .map(|sc| complex_gaussian(rng, alloc.powers[k][sc]))
                .collect();
            inv.process(&mut block);
            for z in &mut block {
                *z *= scale;
            }
            let received = through_channel(&block, prev, cp, &channels.ofdma[k].taps.0);
            for (z, y) in rx.iter_mut().zip(&received) {
                *z += y;
            }
            *prev = with_prefix(&block, cp);
        }
        if cfg.sigma2 > 0.0 {
            for z in rx.iter_mut() {
                *z += complex_gaussian(rng, cfg.sigma2);
            }
        }
        fwd.process(&mut rx);
        for z in rx.iter_mut() {
            *z *= scale;
        }
        for u in 0..users {
            let y: Complex64 = filters
                .column(u)
                .iter()
                .zip(&rx)
                .map(|(f, r)| f.conj() * r)
                .sum();
            let wanted = own_gain[u] * symbols[u];
            let s = wanted.norm_sqr();
            let r = (y - wanted).norm_sqr();
            sig_sum[u] += s;
            res_sum[u] += r;
            sig_sq[u] += s * s;
            res_sq[u] += r * r;
            cross[u] += s * r;
        }
    }

    let m = slots as f64;
    let mut per_user = Vec::with_capacity(users);
    let mut std_errors = Vec::with_capacity(users);
    let mut signal_power = Vec::with_capacity(users);
    let mut residual_power = Vec::with_capacity(users);
    for u in 0..users {
        let (sx, sy) = (sig_sum[u] / m, res_sum[u] / m);
        signal_power.push(sx);
        residual_power.push(sy);
        let vx = (sig_sq[u] / m - sx * sx).max(0.0);
        let vy = (res_sq[u] / m - sy * sy).max(0.0);
        let cxy = cross[u] / m - sx * sy;
        let ratio = sx / sy;
        let var = (vx / (sy * sy) + sx * sx * vy / sy.powi(4) - 2.0 * sx * cxy / sy.powi(3)) / m;
        per_user.push(ratio);
        std_errors.push(var.max(0.0).sqrt());
    }
    let mut report = SinrReport::new(per_user, receiver, SinrSource::SymbolLevel);
    report.std_errors = std_errors;
    Ok(FrameMeasurement {
        report,
        signal_power,
        residual_power,
    })
}
