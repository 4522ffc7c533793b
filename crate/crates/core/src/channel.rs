//! Multipath channel realizations and their frequency responses.
//!
//! Taps follow a uniform power delay profile: `L` independent
//! circularly-symmetric complex Gaussian taps of variance `1/L`, so the
//! ensemble mean of the total tap power is one. The frequency response of a
//! user is the eigenvalue sequence of its circulant channel matrix, i.e. the
//! unnormalized `N`-point DFT of the zero-padded taps; with the unitary
//! transform `W` this gives `C = W^H diag(lambda) W` and the Parseval identity
//! `(1/N) sum |lambda_n|^2 = sum |h_l|^2`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::complex_gaussian;

/// Converts a power ratio in dB to linear scale.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Scalar system parameters shared by both the CDMA and the OFDMA side.
///
/// All powers are linear and expressed in the same unit as `sigma2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Spreading gain of the CDMA system and FFT size of the OFDMA system.
    pub n: usize,
    /// Number of CDMA users `U`.
    pub users: usize,
    /// Number of OFDMA users `K`.
    pub k: usize,
    /// Multipath count `L`.
    pub paths: usize,
    /// Cyclic-prefix length `G` in chips.
    pub cp_len: usize,
    /// CDMA per-user receive power.
    pub q: f64,
    /// Noise power.
    pub sigma2: f64,
    /// CDMA target SINR (linear).
    pub beta_star: f64,
    /// Per-OFDMA-user maximum transmit power, one entry per user.
    pub power_caps: Vec<f64>,
    /// Licensed bandwidth in Hz. Informational only.
    pub bandwidth_hz: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        let n = 256;
        let paths = n / 8;
        Self {
            n,
            users: (0.2 * n as f64).round() as usize,
            k: 2,
            paths,
            cp_len: paths - 1,
            q: db_to_linear(20.0),
            sigma2: 1.0,
            beta_star: db_to_linear(2.0),
            power_caps: vec![db_to_linear(30.0); 2],
            bandwidth_hz: 3.84e6,
        }
    }
}

impl SystemConfig {
    /// CDMA load `U / N`.
    pub fn alpha(&self) -> f64 {
        self.users as f64 / self.n as f64
    }

    /// Sets the number of CDMA users to the nearest integer to `alpha * N`.
    pub fn with_load(mut self, alpha: f64) -> Self {
        self.users = (alpha * self.n as f64).round().max(0.0) as usize;
        self
    }

    /// Receive SNR `q / sigma2` (linear).
    pub fn receive_snr(&self) -> f64 {
        self.q / self.sigma2
    }

    /// Interference-plus-noise floor seen by every OFDMA subcarrier.
    pub fn noise_floor(&self) -> f64 {
        self.alpha() * self.q + self.sigma2
    }

    /// Chip duration `1/W` in seconds.
    pub fn chip_period(&self) -> f64 {
        1.0 / self.bandwidth_hz
    }

    /// Symbol duration `N/W` in seconds.
    pub fn symbol_period(&self) -> f64 {
        self.n as f64 / self.bandwidth_hz
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(invalid("N must be at least 1"));
        }
        if self.paths < 1 || self.paths > self.n {
            return Err(invalid(format!(
                "multipath count L = {} must satisfy 1 <= L <= N = {}",
                self.paths, self.n
            )));
        }
        if self.cp_len + 1 < self.paths {
            return Err(invalid(format!(
                "cyclic prefix G = {} must satisfy G >= L - 1 = {}",
                self.cp_len,
                self.paths - 1
            )));
        }
        if !(self.q > 0.0) {
            return Err(invalid("q must be positive"));
        }
        if !(self.sigma2 > 0.0) {
            return Err(invalid("sigma2 must be positive"));
        }
        if !(self.beta_star > 0.0) {
            return Err(invalid("beta_star must be positive"));
        }
        if self.power_caps.len() != self.k {
            return Err(Error::DimensionMismatch {
                what: "power caps per OFDMA user",
                expected: self.k,
                actual: self.power_caps.len(),
            });
        }
        if self.power_caps.iter().any(|&p| !(p >= 0.0)) {
            return Err(invalid("every power cap must be nonnegative"));
        }
        Ok(())
    }
}

/// Small-scale fading model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ChannelModel {
    /// `L`-tap frequency-selective Rayleigh fading.
    #[default]
    Selective,
    /// One Rayleigh tap per user: a constant response across subcarriers.
    Flat,
    /// Unit response on every subcarrier.
    Awgn,
}

impl fmt::Display for ChannelModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelModel::Selective => "selective",
            ChannelModel::Flat => "flat",
            ChannelModel::Awgn => "awgn",
        })
    }
}

impl FromStr for ChannelModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "selective" => Ok(ChannelModel::Selective),
            "flat" => Ok(ChannelModel::Flat),
            "awgn" => Ok(ChannelModel::Awgn),
            other => Err(invalid(format!("unknown channel model '{other}'"))),
        }
    }
}

/// Time-domain impulse response of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTaps(pub Vec<Complex64>);

impl ChannelTaps {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Total tap power `sum |h_l|^2`.
    pub fn power(&self) -> f64 {
        self.0.iter().map(|h| h.norm_sqr()).sum()
    }
}

/// Per-subcarrier response `lambda_n` of one user together with `|lambda_n|^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyResponse {
    pub values: Vec<Complex64>,
    pub gains: Vec<f64>,
}

impl FrequencyResponse {
    fn from_values(values: Vec<Complex64>) -> Self {
        let gains = values.iter().map(|v| v.norm_sqr()).collect();
        Self { values, gains }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `(1/N) sum_n |lambda_n|^2`.
    pub fn mean_gain(&self) -> f64 {
        if self.gains.is_empty() {
            return 0.0;
        }
        self.gains.iter().sum::<f64>() / self.gains.len() as f64
    }
}

/// Draws `L` i.i.d. `CN(0, 1/L)` taps.
pub fn gen_multipath_taps<R: Rng + ?Sized>(paths: usize, rng: &mut R) -> Result<ChannelTaps> {
    if paths == 0 {
        return Err(invalid("multipath count L must be at least 1"));
    }
    let var = 1.0 / paths as f64;
    Ok(ChannelTaps(
        (0..paths).map(|_| complex_gaussian(rng, var)).collect(),
    ))
}

/// Plans an `N`-point forward DFT once and reuses it across users.
#[derive(Clone)]
pub(crate) struct ResponsePlan {
    n: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl ResponsePlan {
    pub(crate) fn new(n: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(n);
        Self { n, fft }
    }

    pub(crate) fn response(&self, taps: &ChannelTaps) -> Result<FrequencyResponse> {
        if taps.len() > self.n {
            return Err(invalid(format!(
                "{} taps do not fit an N = {} point transform",
                taps.len(),
                self.n
            )));
        }
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n];
        buf[..taps.len()].copy_from_slice(&taps.0);
        self.fft.process(&mut buf);
        Ok(FrequencyResponse::from_values(buf))
    }
}

/// Frequency response of `taps` on an `N`-subcarrier grid.
pub fn freq_response(taps: &ChannelTaps, n: usize) -> Result<FrequencyResponse> {
    if n == 0 {
        return Err(invalid("N must be at least 1"));
    }
    ResponsePlan::new(n).response(taps)
}

/// Taps and frequency response of a single user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserChannel {
    pub taps: ChannelTaps,
    pub response: FrequencyResponse,
}

/// Channel realizations for all CDMA and OFDMA users of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub model: ChannelModel,
    pub n: usize,
    pub cdma: Vec<UserChannel>,
    pub ofdma: Vec<UserChannel>,
}

impl ChannelSet {
    /// Builds a flat set from explicit per-user scalar responses.
    pub fn flat(n: usize, cdma: &[Complex64], ofdma: &[Complex64]) -> Result<Self> {
        let plan = ResponsePlan::new(n);
        let build = |v: &[Complex64]| -> Result<Vec<UserChannel>> {
            v.iter()
                .map(|&h| {
                    let taps = ChannelTaps(vec![h]);
                    let response = plan.response(&taps)?;
                    Ok(UserChannel { taps, response })
                })
                .collect()
        };
        Ok(Self {
            model: ChannelModel::Flat,
            n,
            cdma: build(cdma)?,
            ofdma: build(ofdma)?,
        })
    }

    /// All-ones responses for `users` CDMA and `k` OFDMA users.
    pub fn awgn(n: usize, users: usize, k: usize) -> Self {
        let one = UserChannel {
            taps: ChannelTaps(vec![Complex64::new(1.0, 0.0)]),
            response: FrequencyResponse::from_values(vec![Complex64::new(1.0, 0.0); n]),
        };
        Self {
            model: ChannelModel::Awgn,
            n,
            cdma: vec![one.clone(); users],
            ofdma: vec![one; k],
        }
    }

    /// `|lambda_{u,n}|^2` of CDMA user `u`.
    pub fn cdma_gains(&self, u: usize) -> &[f64] {
        &self.cdma[u].response.gains
    }

    /// `g_{k,n}` matrix of the OFDMA users, one row per user.
    pub fn ofdma_gain_matrix(&self) -> Vec<Vec<f64>> {
        self.ofdma.iter().map(|c| c.response.gains.clone()).collect()
    }
}

fn gen_users<R: Rng + ?Sized>(
    count: usize,
    paths: usize,
    plan: &ResponsePlan,
    rng: &mut R,
) -> Result<Vec<UserChannel>> {
    (0..count)
        .map(|_| {
            let taps = gen_multipath_taps(paths, rng)?;
            let response = plan.response(&taps)?;
            Ok(UserChannel { taps, response })
        })
        .collect()
}

/// Draws independent channels for the `U` CDMA and `K` OFDMA users of `cfg`.
///
/// CDMA users are drawn first, then OFDMA users, from the same stream.
pub fn gen_channel_set<R: Rng + ?Sized>(
    cfg: &SystemConfig,
    model: ChannelModel,
    rng: &mut R,
) -> Result<ChannelSet> {
    cfg.validate()?;
    let paths = match model {
        ChannelModel::Awgn => return Ok(ChannelSet::awgn(cfg.n, cfg.users, cfg.k)),
        ChannelModel::Flat => 1,
        ChannelModel::Selective => cfg.paths,
    };
    let plan = ResponsePlan::new(cfg.n);
    let cdma = gen_users(cfg.users, paths, &plan, rng)?;
    let ofdma = gen_users(cfg.k, paths, &plan, rng)?;
    Ok(ChannelSet {
        model,
        n: cfg.n,
        cdma,
        ofdma,
    })
}

/// Draws `count` selective (or flat/AWGN) user channels on an `n`-point grid.
pub fn gen_user_channels<R: Rng + ?Sized>(
    count: usize,
    n: usize,
    paths: usize,
    model: ChannelModel,
    rng: &mut R,
) -> Result<Vec<UserChannel>> {
    let plan = ResponsePlan::new(n);
    match model {
        ChannelModel::Awgn => Ok(ChannelSet::awgn(n, count, 0).cdma),
        ChannelModel::Flat => gen_users(count, 1, &plan, rng),
        ChannelModel::Selective => {
            if paths == 0 || paths > n {
                return Err(invalid(format!("multipath count {paths} outside 1..={n}")));
            }
            gen_users(count, paths, &plan, rng)
        }
    }
}
