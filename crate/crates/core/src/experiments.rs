//! Desk-scale evaluation studies: load and receive-SNR sweeps, solver
//! convergence traces, allocation snapshots and a check of the large-system
//! SINR predictions against finite-size Monte Carlo.
//!
//! Randomness is organized as common random numbers: trial `t` of every grid
//! point draws its OFDMA channels, CDMA channels and spreading codes from the
//! same labelled substreams, and users are drawn sequentially, so grid points
//! differ only in the parameter being swept.
//!
//! The allocator sees only the CDMA load, target and receive SNR (through the
//! margin); the empirical CDMA evaluation sees only the resulting
//! interference profile.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::allocator::{solve_p1, AllocationProblem, IterationRecord, SolveOutcome, SolverOptions};
use crate::asymptotics::{
    asymptotic_sinr, interference_margin, mf_asymptotic_awgn, mf_asymptotic_selective,
    mmse_fixed_point_selective, mmse_fixed_point_uniform, FixedPointOptions, MarginResult,
};
use crate::cdma::{
    effective_signatures, gen_spreading_codes, mean_variance, sinr_exact, InterferenceProfile,
    Receiver,
};
use crate::channel::{db_to_linear, gen_user_channels, ChannelModel, ChannelSet, SystemConfig, UserChannel};
use crate::error::{invalid, Error, Result};
use crate::rng::substream;

const STREAM_OFDMA: u64 = 1;
const STREAM_CDMA_CHANNELS: u64 = 2;
const STREAM_CODES: u64 = 3;

/// Parameter varied along a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweptParameter {
    /// CDMA load `U / N`.
    Alpha,
    /// CDMA receive SNR `q / sigma2` in dB.
    ReceiveSnrDb,
}

impl fmt::Display for SweptParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Alpha => "alpha",
            Self::ReceiveSnrDb => "receive_snr_db",
        })
    }
}

impl FromStr for SweptParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(Self::Alpha),
            "receive_snr_db" => Ok(Self::ReceiveSnrDb),
            other => Err(invalid(format!("unknown swept parameter `{other}`"))),
        }
    }
}

/// A one-dimensional Monte Carlo sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub swept: SweptParameter,
    pub grid: Vec<f64>,
    pub receiver: Receiver,
    /// Everything not swept. For load sweeps `users` is overwritten per point.
    pub fixed: SystemConfig,
    pub trials: usize,
    pub seed: u64,
    pub solver: SolverOptions,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        self.fixed.validate()?;
        if self.grid.is_empty() {
            return Err(invalid("sweep grid must be nonempty"));
        }
        if self.grid.iter().any(|v| !v.is_finite()) {
            return Err(invalid("sweep grid values must be finite"));
        }
        if self.grid.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("sweep grid must be sorted in increasing order"));
        }
        if self.trials < 1 {
            return Err(invalid("trials must be at least 1"));
        }
        if self.swept == SweptParameter::Alpha {
            let smallest = 0.5 / self.fixed.n as f64;
            if self.grid[0] < smallest {
                return Err(invalid(format!(
                    "every load must give at least one CDMA user (alpha >= {smallest})"
                )));
            }
        }
        Ok(())
    }

    /// System configuration at one grid value.
    pub fn config_at(&self, value: f64) -> SystemConfig {
        match self.swept {
            SweptParameter::Alpha => self.fixed.clone().with_load(value),
            SweptParameter::ReceiveSnrDb => SystemConfig {
                q: self.fixed.sigma2 * db_to_linear(value),
                ..self.fixed.clone()
            },
        }
    }
}

/// Trial-averaged outcome at one grid value.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    /// Effective load `U / N` after rounding the user count.
    pub alpha: f64,
    pub receive_snr_db: f64,
    pub users: usize,
    pub alpha_star: f64,
    pub margin: f64,
    pub feasible: bool,
    pub ofdma_throughput: f64,
    pub ofdma_throughput_std: f64,
    /// Mean over trials of the realized `(1/N) sum p g`.
    pub mean_interference: f64,
    pub cdma_sinr_theory: f64,
    pub cdma_sinr_empirical_mean: f64,
    /// Standard deviation across trials of the per-trial user-average SINR.
    pub cdma_sinr_empirical_std: f64,
    pub solver_iterations: f64,
    /// Fraction of trials whose solver met the gap tolerance.
    pub converged_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub swept: SweptParameter,
    pub receiver: Receiver,
    pub points: Vec<SweepPoint>,
}

/// Channels and codes of one trial, shared by every grid point.
struct TrialDraw {
    ofdma: Vec<UserChannel>,
    cdma: Vec<UserChannel>,
    codes: Vec<Vec<f64>>,
}

fn draw_trial(cfg: &SystemConfig, users: usize, seed: u64, trial: u64) -> Result<TrialDraw> {
    let ofdma = gen_user_channels(
        cfg.k,
        cfg.n,
        cfg.paths,
        ChannelModel::Selective,
        &mut substream(seed, &[trial, STREAM_OFDMA]),
    )?;
    let cdma = gen_user_channels(
        users,
        cfg.n,
        cfg.paths,
        ChannelModel::Selective,
        &mut substream(seed, &[trial, STREAM_CDMA_CHANNELS]),
    )?;
    let codes = gen_spreading_codes(users, cfg.n, &mut substream(seed, &[trial, STREAM_CODES]))?;
    Ok(TrialDraw {
        ofdma,
        cdma,
        codes: codes.iter().map(<[f64]>::to_vec).collect(),
    })
}

struct TrialOutcome {
    throughput: f64,
    mean_interference: f64,
    theory: f64,
    empirical: f64,
    iterations: usize,
    converged: bool,
}

/// Builds and solves the allocation problem the CDMA margin allows.
pub fn allocate_under_margin(
    cfg: &SystemConfig,
    margin: &MarginResult,
    gains: Vec<Vec<f64>>,
    solver: &SolverOptions,
) -> Result<Option<(AllocationProblem, SolveOutcome)>> {
    if !margin.feasible {
        return Ok(None);
    }
    let problem = AllocationProblem::new(gains, cfg.noise_floor(), margin.margin, cfg.power_caps.clone())?;
    let outcome = solve_p1(&problem, solver)?;
    Ok(Some((problem, outcome)))
}

fn run_trial(
    cfg: &SystemConfig,
    receiver: Receiver,
    draw: &TrialDraw,
    solver: &SolverOptions,
) -> Result<TrialOutcome> {
    let users = cfg.users;
    let alpha = cfg.alpha();
    let margin = interference_margin(alpha, cfg.q, cfg.sigma2, cfg.beta_star, receiver);
    let gains: Vec<Vec<f64>> = draw.ofdma.iter().map(|c| c.response.gains.clone()).collect();
    let (profile, throughput, iterations, converged) =
        match allocate_under_margin(cfg, &margin, gains, solver)? {
            Some((problem, out)) => (
                InterferenceProfile::from_allocation(&out.allocation, &problem.gains)?,
                out.throughput,
                out.dual.iteration,
                out.converged,
            ),
            None => (InterferenceProfile::zero(cfg.n), 0.0, 0, true),
        };
    let theory = asymptotic_sinr(receiver, alpha, cfg.q, &profile, cfg.sigma2)?;
    let channels = ChannelSet {
        model: ChannelModel::Selective,
        n: cfg.n,
        cdma: draw.cdma[..users].to_vec(),
        ofdma: draw.ofdma.clone(),
    };
    let codes = crate::cdma::SpreadingCodeSet::from_codes(cfg.n, draw.codes[..users].to_vec())?;
    let sigs = effective_signatures(&codes, &channels)?;
    let empirical = sinr_exact(receiver, &sigs, cfg.q, &profile, cfg.sigma2)?.mean;
    Ok(TrialOutcome {
        throughput,
        mean_interference: profile.mean(),
        theory,
        empirical,
        iterations,
        converged,
    })
}

fn sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let configs: Vec<SystemConfig> = spec.grid.iter().map(|&v| spec.config_at(v)).collect();
    for cfg in &configs {
        cfg.validate()?;
        if cfg.users == 0 {
            return Err(invalid("every grid point needs at least one CDMA user"));
        }
    }
    let max_users = configs.iter().map(|c| c.users).max().unwrap_or(0);
    let mut outcomes: Vec<Vec<TrialOutcome>> = configs.iter().map(|_| Vec::new()).collect();
    for trial in 0..spec.trials as u64 {
        let draw = draw_trial(&spec.fixed, max_users, spec.seed, trial)?;
        for (cfg, acc) in configs.iter().zip(outcomes.iter_mut()) {
            acc.push(run_trial(cfg, spec.receiver, &draw, &spec.solver)?);
        }
    }
    let points = spec
        .grid
        .iter()
        .zip(&configs)
        .zip(&outcomes)
        .map(|((&value, cfg), trials)| summarize(value, cfg, spec.receiver, trials))
        .collect();
    Ok(SweepResult {
        swept: spec.swept,
        receiver: spec.receiver,
        points,
    })
}

fn summarize(value: f64, cfg: &SystemConfig, receiver: Receiver, trials: &[TrialOutcome]) -> SweepPoint {
    let m = trials.len() as f64;
    let mean_of = |f: fn(&TrialOutcome) -> f64| trials.iter().map(f).sum::<f64>() / m;
    let throughputs: Vec<f64> = trials.iter().map(|t| t.throughput).collect();
    let empirical: Vec<f64> = trials.iter().map(|t| t.empirical).collect();
    let (thr_mean, thr_var) = mean_variance(&throughputs);
    let (emp_mean, emp_var) = mean_variance(&empirical);
    let margin = interference_margin(cfg.alpha(), cfg.q, cfg.sigma2, cfg.beta_star, receiver);
    SweepPoint {
        value,
        alpha: cfg.alpha(),
        receive_snr_db: 10.0 * cfg.receive_snr().log10(),
        users: cfg.users,
        alpha_star: margin.alpha_star,
        margin: margin.margin,
        feasible: margin.feasible,
        ofdma_throughput: thr_mean,
        ofdma_throughput_std: thr_var.sqrt(),
        mean_interference: mean_of(|t| t.mean_interference),
        cdma_sinr_theory: mean_of(|t| t.theory),
        cdma_sinr_empirical_mean: emp_mean,
        cdma_sinr_empirical_std: emp_var.sqrt(),
        solver_iterations: mean_of(|t| t.iterations as f64),
        converged_fraction: trials.iter().filter(|t| t.converged).count() as f64 / m,
    }
}

/// Sweeps the CDMA load.
pub fn run_load_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    if spec.swept != SweptParameter::Alpha {
        return Err(invalid("a load sweep must sweep `alpha`"));
    }
    sweep(spec)
}

/// Sweeps the CDMA receive SNR at fixed load.
pub fn run_snr_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    if spec.swept != SweptParameter::ReceiveSnrDb {
        return Err(invalid("an SNR sweep must sweep `receive_snr_db`"));
    }
    sweep(spec)
}

/// Light or heavy CDMA load, selecting which OFDMA constraint binds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoadRegime {
    Light,
    Heavy,
}

impl LoadRegime {
    /// Load used for this regime with the matched filter at 20 dB receive SNR.
    pub fn alpha(self) -> f64 {
        match self {
            Self::Light => 0.05,
            Self::Heavy => 0.6,
        }
    }
}

impl fmt::Display for LoadRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Light => "light",
            Self::Heavy => "heavy",
        })
    }
}

impl FromStr for LoadRegime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "light" => Ok(Self::Light),
            "heavy" => Ok(Self::Heavy),
            other => Err(invalid(format!("unknown load regime `{other}`"))),
        }
    }
}

/// One solver run on a single channel draw.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeRun {
    pub regime: LoadRegime,
    pub config: SystemConfig,
    pub margin: MarginResult,
    pub problem: AllocationProblem,
    pub outcome: SolveOutcome,
}

fn regime_run(
    cfg: &SystemConfig,
    regime: LoadRegime,
    receiver: Receiver,
    seed: u64,
    solver: &SolverOptions,
) -> Result<RegimeRun> {
    let config = cfg.clone().with_load(regime.alpha());
    config.validate()?;
    let margin = interference_margin(config.alpha(), config.q, config.sigma2, config.beta_star, receiver);
    if !margin.feasible {
        return Err(invalid(format!(
            "load {} is infeasible for the {receiver} receiver at this SNR",
            config.alpha()
        )));
    }
    let ofdma = gen_user_channels(
        config.k,
        config.n,
        config.paths,
        ChannelModel::Selective,
        &mut substream(seed, &[0, STREAM_OFDMA]),
    )?;
    let gains = ofdma.iter().map(|c| c.response.gains.clone()).collect();
    let (problem, outcome) = allocate_under_margin(&config, &margin, gains, solver)?
        .expect("feasibility checked above");
    Ok(RegimeRun {
        regime,
        config,
        margin,
        problem,
        outcome,
    })
}

/// Per-iteration solver history in one load regime.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTrace {
    pub run: RegimeRun,
}

impl ConvergenceTrace {
    pub fn records(&self) -> &[IterationRecord] {
        &self.run.outcome.trace
    }
}

pub fn run_convergence_trace(
    cfg: &SystemConfig,
    regime: LoadRegime,
    receiver: Receiver,
    seed: u64,
    solver: &SolverOptions,
) -> Result<ConvergenceTrace> {
    let solver = SolverOptions {
        record_trace: true,
        ..solver.clone()
    };
    Ok(ConvergenceTrace {
        run: regime_run(cfg, regime, receiver, seed, &solver)?,
    })
}

/// One subcarrier of an allocation snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotRow {
    pub subcarrier: usize,
    pub owner: Option<usize>,
    pub power: f64,
    /// Gain of the owner, zero when unowned.
    pub gain: f64,
    /// `p g` on this subcarrier.
    pub received: f64,
    /// Gain of every OFDMA user.
    pub user_gains: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationSnapshot {
    pub run: RegimeRun,
    pub rows: Vec<SnapshotRow>,
}

pub fn run_allocation_snapshot(
    cfg: &SystemConfig,
    regime: LoadRegime,
    receiver: Receiver,
    seed: u64,
    solver: &SolverOptions,
) -> Result<AllocationSnapshot> {
    let run = regime_run(cfg, regime, receiver, seed, solver)?;
    let rows = snapshot_rows(&run.problem, &run.outcome.allocation);
    Ok(AllocationSnapshot { run, rows })
}

/// Per-subcarrier view of an allocation.
pub fn snapshot_rows(problem: &AllocationProblem, alloc: &crate::allocator::PowerAllocation) -> Vec<SnapshotRow> {
    let gains = &problem.gains;
    (0..problem.n())
        .map(|sc| {
            let owner = alloc.assignment[sc];
            let (power, gain) = owner.map_or((0.0, 0.0), |k| (alloc.powers[k][sc], gains[k][sc]));
            SnapshotRow {
                subcarrier: sc,
                owner,
                power,
                gain,
                received: power * gain,
                user_gains: gains.iter().map(|row| row[sc]).collect(),
            }
        })
        .collect()
}

/// Theory-vs-simulation comparison for one receiver and channel model.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationRow {
    pub receiver: Receiver,
    pub model: ChannelModel,
    pub n: usize,
    pub users: usize,
    pub alpha: f64,
    pub trials: usize,
    pub theory: f64,
    pub empirical_mean: f64,
    /// Standard deviation across trials of the per-trial user-average SINR.
    pub empirical_std: f64,
    pub relative_error: f64,
    pub std_over_mean: f64,
}

/// Compares exact finite-size SINRs with their large-system limits for both
/// receivers and every channel model, without OFDMA interference.
///
/// Faded channels are compared with the limit for the realized channel
/// gains, averaged over users and trials; AWGN with the channel-free limit.
pub fn run_sinr_validation(cfg: &SystemConfig, trials: usize, seed: u64) -> Result<Vec<ValidationRow>> {
    let mut rows = Vec::new();
    for model in [ChannelModel::Selective, ChannelModel::Flat, ChannelModel::Awgn] {
        for receiver in [Receiver::Mf, Receiver::Mmse] {
            rows.push(validate_one(cfg, receiver, model, trials, seed)?);
        }
    }
    Ok(rows)
}

/// One row of [`run_sinr_validation`].
pub fn validate_one(
    cfg: &SystemConfig,
    receiver: Receiver,
    model: ChannelModel,
    trials: usize,
    seed: u64,
) -> Result<ValidationRow> {
    cfg.validate()?;
    if trials < 1 {
        return Err(invalid("trials must be at least 1"));
    }
    if cfg.users < 1 {
        return Err(invalid("validation needs at least one CDMA user"));
    }
    let profile = InterferenceProfile::zero(cfg.n);
    let alpha = cfg.alpha();
    let uniform = match receiver {
        Receiver::Mf => crate::asymptotics::mf_asymptotic_uniform(alpha, cfg.q, 0.0, cfg.sigma2),
        Receiver::Mmse => {
            mmse_fixed_point_uniform(alpha, cfg.q, &profile, cfg.sigma2, &FixedPointOptions::default())?
                .value()
        }
    };
    let mut theory = Vec::with_capacity(trials);
    let mut empirical = Vec::with_capacity(trials);
    for trial in 0..trials as u64 {
        let cdma = gen_user_channels(
            cfg.users,
            cfg.n,
            cfg.paths,
            model,
            &mut substream(seed, &[trial, STREAM_CDMA_CHANNELS]),
        )?;
        let codes = gen_spreading_codes(cfg.users, cfg.n, &mut substream(seed, &[trial, STREAM_CODES]))?;
        let channels = ChannelSet {
            model,
            n: cfg.n,
            cdma,
            ofdma: Vec::new(),
        };
        let per_user = match (model, receiver) {
            (ChannelModel::Awgn, Receiver::Mf) => {
                vec![mf_asymptotic_awgn(cfg.users, cfg.n, cfg.q, 0.0, cfg.sigma2)]
            }
            (ChannelModel::Awgn, Receiver::Mmse) => vec![uniform],
            (_, Receiver::Mf) => mf_asymptotic_selective(&channels, cfg.q, &profile, cfg.sigma2)?,
            (_, Receiver::Mmse) => {
                mmse_fixed_point_selective(&channels, cfg.q, &profile, cfg.sigma2, &FixedPointOptions::default())?
                    .values
            }
        };
        let predicted = per_user.iter().sum::<f64>() / per_user.len() as f64;
        let sigs = effective_signatures(&codes, &channels)?;
        empirical.push(sinr_exact(receiver, &sigs, cfg.q, &profile, cfg.sigma2)?.mean);
        theory.push(predicted);
    }
    let theory = theory.iter().sum::<f64>() / trials as f64;
    let (mean, var) = mean_variance(&empirical);
    let std = var.sqrt();
    Ok(ValidationRow {
        receiver,
        model,
        n: cfg.n,
        users: cfg.users,
        alpha,
        trials,
        theory,
        empirical_mean: mean,
        empirical_std: std,
        relative_error: (mean - theory).abs() / theory,
        std_over_mean: if mean != 0.0 { std / mean } else { f64::INFINITY },
    })
}

/// Asymptotic SINR excess over the target at a load close to the boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct OverProtection {
    pub n: usize,
    pub alpha: f64,
    /// Mean over trials of `SINR_limit - beta_star` under the allocated profile.
    pub excess: f64,
}

/// Measures how much the reinforced margin over-protects the CDMA users as
/// the number of subcarriers grows, at `fraction` of the supportable load.
pub fn run_over_protection(
    cfg: &SystemConfig,
    receiver: Receiver,
    fraction: f64,
    sizes: &[usize],
    trials: usize,
    seed: u64,
    solver: &SolverOptions,
) -> Result<Vec<OverProtection>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(invalid("fraction of the supportable load must lie in (0, 1)"));
    }
    sizes
        .iter()
        .map(|&n| {
            let base = SystemConfig {
                n,
                paths: (n / 8).max(1),
                cp_len: (n / 8).max(1) - 1,
                ..cfg.clone()
            };
            let alpha_star =
                crate::asymptotics::supportable_load(base.q, base.sigma2, base.beta_star, receiver);
            let sized = base.with_load(fraction * alpha_star);
            let alpha = sized.alpha();
            let margin = interference_margin(alpha, sized.q, sized.sigma2, sized.beta_star, receiver);
            let mut excess = 0.0;
            for trial in 0..trials as u64 {
                let ofdma = gen_user_channels(
                    sized.k,
                    n,
                    sized.paths,
                    ChannelModel::Selective,
                    &mut substream(seed, &[trial, STREAM_OFDMA]),
                )?;
                let gains = ofdma.iter().map(|c| c.response.gains.clone()).collect();
                let profile = match allocate_under_margin(&sized, &margin, gains, solver)? {
                    Some((problem, out)) => {
                        InterferenceProfile::from_allocation(&out.allocation, &problem.gains)?
                    }
                    None => InterferenceProfile::zero(n),
                };
                excess += asymptotic_sinr(receiver, alpha, sized.q, &profile, sized.sigma2)?
                    - sized.beta_star;
            }
            Ok(OverProtection {
                n,
                alpha,
                excess: excess / trials.max(1) as f64,
            })
        })
        .collect()
}
