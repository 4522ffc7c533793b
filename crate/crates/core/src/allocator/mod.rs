//! OFDMA uplink subcarrier and power allocation under an average
//! interference margin and per-user power caps.
//!
//! The problem is non-convex because of subcarrier exclusivity. It is solved
//! in the dual domain: for fixed multipliers the Lagrangian separates into
//! `N` independent per-subcarrier problems, each of which picks the user with
//! the best price-adjusted rate; the multipliers are driven by subgradient
//! steps. Primal solutions are recovered by fixing the assignment suggested
//! by the duals and solving the remaining convex power problem exactly.
//!
//! Multiplier convention: `delta` prices the total received interference
//! `sum_{k,n} p_{k,n} g_{k,n}` against `N T`, so the per-subcarrier stationary
//! power is `[1/((lambda_k + delta g) ln 2) - floor/g]^+` and the interference
//! component of the subgradient is reported as `T - (1/N) sum p g`.

mod oracle;
mod refine;
mod special;

pub use oracle::brute_force_oracle;
pub use refine::{optimal_powers_for_assignment, AssignedSolution};
pub use special::{solve_p2_waterfill, solve_p3_channel_inverse, ChannelInverse, WaterFill};

use std::f64::consts::LN_2;

use crate::error::{invalid, Error, Result};

/// One instance of the OFDMA allocation problem.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationProblem {
    /// `g_{k,n}`, one row per OFDMA user.
    pub gains: Vec<Vec<f64>>,
    /// CDMA-plus-noise floor `alpha q + sigma2` seen on every subcarrier.
    pub noise_floor: f64,
    /// Interference margin `T` on the mean interference `(1/N) sum p g`.
    pub margin: f64,
    /// Per-user power caps.
    pub power_caps: Vec<f64>,
}

impl AllocationProblem {
    pub fn new(
        gains: Vec<Vec<f64>>,
        noise_floor: f64,
        margin: f64,
        power_caps: Vec<f64>,
    ) -> Result<Self> {
        let p = Self {
            gains,
            noise_floor,
            margin,
            power_caps,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.gains.is_empty() {
            return Err(invalid("at least one OFDMA user is required"));
        }
        let n = self.gains[0].len();
        if n == 0 {
            return Err(invalid("at least one subcarrier is required"));
        }
        if let Some(row) = self.gains.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                what: "subcarriers per gain row",
                expected: n,
                actual: row.len(),
            });
        }
        if self.power_caps.len() != self.gains.len() {
            return Err(Error::DimensionMismatch {
                what: "power caps per OFDMA user",
                expected: self.gains.len(),
                actual: self.power_caps.len(),
            });
        }
        if self.gains.iter().flatten().any(|&g| !(g >= 0.0) || !g.is_finite()) {
            return Err(invalid("channel gains must be finite and nonnegative"));
        }
        if !(self.noise_floor > 0.0) {
            return Err(invalid("noise floor must be positive"));
        }
        if !(self.margin >= 0.0) || !self.margin.is_finite() {
            return Err(invalid("interference margin must be finite and nonnegative"));
        }
        if self.power_caps.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(invalid("power caps must be finite and nonnegative"));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.gains.len()
    }

    pub fn n(&self) -> usize {
        self.gains[0].len()
    }

    /// Achievable rate `log2(1 + p g / floor)` of one subcarrier.
    pub fn rate(&self, p: f64, g: f64) -> f64 {
        (p * g / self.noise_floor).ln_1p() / LN_2
    }

    /// Largest power any feasible allocation can put on `(k, n)`.
    fn power_box(&self, k: usize, g: f64) -> f64 {
        let by_margin = if g > 0.0 {
            self.n() as f64 * self.margin / g
        } else {
            f64::INFINITY
        };
        self.power_caps[k].min(by_margin)
    }
}

/// `K x N` transmit powers with at most one active user per subcarrier.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    pub powers: Vec<Vec<f64>>,
    /// Owning user of each subcarrier, if any.
    pub assignment: Vec<Option<usize>>,
}

impl PowerAllocation {
    pub fn zeros(k: usize, n: usize) -> Self {
        Self {
            powers: vec![vec![0.0; n]; k],
            assignment: vec![None; n],
        }
    }

    /// Places `power[n]` on the owner of subcarrier `n`.
    pub fn from_assignment(k: usize, assignment: Vec<Option<usize>>, power: &[f64]) -> Self {
        let n = assignment.len();
        let mut powers = vec![vec![0.0; n]; k];
        for (sc, owner) in assignment.iter().enumerate() {
            if let Some(user) = owner {
                powers[*user][sc] = power[sc];
            }
        }
        Self { powers, assignment }
    }

    pub fn k(&self) -> usize {
        self.powers.len()
    }

    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    /// `sum_n p_{k,n}`.
    pub fn user_power(&self, k: usize) -> f64 {
        self.powers[k].iter().sum()
    }

    pub fn user_powers(&self) -> Vec<f64> {
        (0..self.k()).map(|k| self.user_power(k)).collect()
    }

    /// Per-subcarrier received interference `sum_k p_{k,n} g_{k,n}`.
    pub fn interference(&self, gains: &[Vec<f64>]) -> Result<Vec<f64>> {
        if gains.len() != self.k() {
            return Err(Error::DimensionMismatch {
                what: "gain rows vs. allocation users",
                expected: self.k(),
                actual: gains.len(),
            });
        }
        let n = self.n();
        let mut out = vec![0.0; n];
        for (prow, grow) in self.powers.iter().zip(gains) {
            if grow.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "gain row length",
                    expected: n,
                    actual: grow.len(),
                });
            }
            for ((o, p), g) in out.iter_mut().zip(prow).zip(grow) {
                *o += p * g;
            }
        }
        Ok(out)
    }

    /// `(1/N) sum_{k,n} p_{k,n} g_{k,n}`.
    pub fn mean_interference(&self, gains: &[Vec<f64>]) -> f64 {
        let total: f64 = self
            .powers
            .iter()
            .zip(gains)
            .map(|(p, g)| p.iter().zip(g).map(|(a, b)| a * b).sum::<f64>())
            .sum();
        total / self.n().max(1) as f64
    }

    /// Sum rate in bits per OFDMA symbol.
    pub fn throughput(&self, problem: &AllocationProblem) -> f64 {
        self.powers
            .iter()
            .zip(&problem.gains)
            .map(|(p, g)| p.iter().zip(g).map(|(&a, &b)| problem.rate(a, b)).sum::<f64>())
            .sum()
    }

    /// Fails if any subcarrier carries positive power from two users.
    pub fn check_exclusive(&self) -> Result<()> {
        for sc in 0..self.n() {
            let active = self.powers.iter().filter(|row| row[sc] > 0.0).count();
            if active > 1 {
                return Err(Error::InvalidInput(format!(
                    "subcarrier {sc} is shared by {active} users"
                )));
            }
            if let Some(owner) = self.assignment[sc] {
                if self.powers.iter().enumerate().any(|(k, row)| k != owner && row[sc] > 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "subcarrier {sc} carries power from a user other than its owner {owner}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Scales each user down to its cap, then everything down to the margin.
    pub fn project_feasible(&mut self, problem: &AllocationProblem) {
        for (k, row) in self.powers.iter_mut().enumerate() {
            let total: f64 = row.iter().sum();
            let cap = problem.power_caps[k];
            if total > cap {
                let s = if total > 0.0 { cap / total } else { 0.0 };
                row.iter_mut().for_each(|p| *p *= s);
            }
        }
        let mean = self.mean_interference(&problem.gains);
        if mean > problem.margin {
            let s = problem.margin / mean;
            self.powers.iter_mut().flatten().for_each(|p| *p *= s);
        }
        for (sc, owner) in self.assignment.iter_mut().enumerate() {
            if let Some(user) = *owner {
                if self.powers[user][sc] <= 0.0 {
                    *owner = None;
                }
            }
        }
    }
}

/// Stationary power of one user on one subcarrier for the given prices.
pub fn power_candidate(delta: f64, lambda_k: f64, g: f64, noise_floor: f64) -> Result<f64> {
    if !(g > 0.0) {
        return Ok(0.0);
    }
    let price = lambda_k + delta * g;
    if !(price > 0.0) {
        return Err(Error::UnboundedCandidate);
    }
    Ok((1.0 / (price * LN_2) - noise_floor / g).max(0.0))
}

/// Price-adjusted rate `r - lambda p - delta p g` of a candidate.
pub fn candidate_score(p: f64, g: f64, noise_floor: f64, lambda_k: f64, delta: f64) -> f64 {
    (p * g / noise_floor).ln_1p() / LN_2 - lambda_k * p - delta * p * g
}

/// Picks the user with the highest score on one subcarrier.
///
/// Ties go to the lowest user index. Returns `None` when no candidate has
/// positive power.
pub fn assign_subcarrier(
    candidates: &[f64],
    gains: &[f64],
    noise_floor: f64,
    delta: f64,
    lambdas: &[f64],
) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, (&p, &g)) in candidates.iter().zip(gains).enumerate() {
        if !(p > 0.0) {
            continue;
        }
        let score = candidate_score(p, g, noise_floor, lambdas[k], delta);
        if score > 0.0 && best.is_none_or(|(_, s)| score > s) {
            best = Some((k, score));
        }
    }
    best.map(|(k, _)| k)
}

/// Multipliers of the dual problem and the solver's bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    /// Interference multiplier.
    pub delta: f64,
    /// Power multipliers, one per user.
    pub lambdas: Vec<f64>,
    /// Number of subgradient steps taken.
    pub iteration: usize,
    /// Relative duality gap after each iteration.
    pub gap_trace: Vec<f64>,
    /// Step scale `c` of the `c / sqrt(t)` schedule.
    pub step_scale: f64,
}

impl DualState {
    pub fn new(k: usize, options: &SolverOptions) -> Self {
        Self {
            delta: options.init_delta,
            lambdas: vec![options.init_lambda; k],
            iteration: 0,
            gap_trace: Vec::new(),
            step_scale: options.step_scale,
        }
    }
}

/// Below this fraction of its initial value a multiplier moves additively.
const DUAL_FLOOR: f64 = 1e-3;

/// One projected subgradient step on the multipliers.
///
/// Each subgradient component is normalized by its constraint budget
/// (`T` or the user's cap) and clipped to `[-1, 1]`; the step `c / sqrt(t)`
/// is applied relative to the current multiplier magnitude, so the
/// multipliers move on a log scale far from zero and additively near it.
/// Results are projected onto the nonnegative orthant.
pub fn subgradient_step(
    state: &DualState,
    alloc: &PowerAllocation,
    problem: &AllocationProblem,
    options: &SolverOptions,
) -> DualState {
    let t = state.iteration + 1;
    let step = state.step_scale / (t as f64).sqrt();
    let update = |mu: f64, residual: f64, budget: f64, init: f64| {
        let normalized = if budget > 0.0 {
            (residual / budget).clamp(-1.0, 1.0)
        } else {
            if residual < 0.0 { -1.0 } else { 0.0 }
        };
        let magnitude = mu.max(DUAL_FLOOR * init);
        (mu - step * magnitude * normalized).max(0.0)
    };
    let interference_residual = problem.margin - alloc.mean_interference(&problem.gains);
    let delta = update(
        state.delta,
        interference_residual,
        problem.margin,
        options.init_delta,
    );
    let lambdas = state
        .lambdas
        .iter()
        .enumerate()
        .map(|(k, &l)| {
            let residual = problem.power_caps[k] - alloc.user_power(k);
            update(l, residual, problem.power_caps[k], options.init_lambda)
        })
        .collect();
    DualState {
        delta,
        lambdas,
        iteration: t,
        gap_trace: state.gap_trace.clone(),
        step_scale: state.step_scale,
    }
}

/// Subgradient `[T - (1/N) sum p g; P_1 - sum_n p_1n; ...]` at an allocation.
pub fn subgradient(alloc: &PowerAllocation, problem: &AllocationProblem) -> Vec<f64> {
    let mut d = Vec::with_capacity(problem.k() + 1);
    d.push(problem.margin - alloc.mean_interference(&problem.gains));
    d.extend((0..problem.k()).map(|k| problem.power_caps[k] - alloc.user_power(k)));
    d
}

/// Dual-solver settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Stop once the relative duality gap drops below this.
    pub gap_tolerance: f64,
    /// `c` in the `c / sqrt(t)` step schedule.
    pub step_scale: f64,
    pub init_lambda: f64,
    pub init_delta: f64,
    /// Primal recovery runs every this many iterations.
    pub recover_every: usize,
    /// Keep a per-iteration trace.
    pub record_trace: bool,
    /// Instances with at most this many subcarriers get a final single-swap
    /// search over the assignment, which closes residual duality gaps that
    /// matter on very small problems.
    pub local_search_max_n: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 5000,
            gap_tolerance: 1e-4,
            step_scale: 0.5,
            init_lambda: 0.1,
            init_delta: 0.01,
            recover_every: 25,
            record_trace: false,
            local_search_max_n: 16,
        }
    }
}

/// Snapshot of one solver iteration, taken before the multiplier update.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Relative gap between the best dual bound and the best feasible primal.
    pub relative_gap: f64,
    pub delta: f64,
    pub lambdas: Vec<f64>,
    /// Sum rate of the unprojected per-subcarrier maximizer.
    pub throughput: f64,
    /// Mean interference of the unprojected maximizer.
    pub mean_interference: f64,
    /// Per-user total power of the unprojected maximizer.
    pub user_power: Vec<f64>,
}

/// Result of [`solve_p1`].
#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    /// Best feasible allocation found.
    pub allocation: PowerAllocation,
    pub dual: DualState,
    /// Sum rate of `allocation` in bits per OFDMA symbol.
    pub throughput: f64,
    /// Best dual bound.
    pub dual_bound: f64,
    pub relative_gap: f64,
    /// Gap fell below the tolerance before the iteration cap.
    pub converged: bool,
    /// Margin and all caps were zero; the zero allocation is returned as is.
    pub trivial: bool,
    pub trace: Vec<IterationRecord>,
}

/// Per-subcarrier maximization of the Lagrangian.
struct Inner {
    alloc: PowerAllocation,
    /// `sum_n f_n + sum_k lambda_k P_k + delta N T`.
    dual_value: f64,
}

fn lagrangian_max(problem: &AllocationProblem, delta: f64, lambdas: &[f64]) -> Inner {
    let (k_users, n) = (problem.k(), problem.n());
    let floor = problem.noise_floor;
    let mut assignment = vec![None; n];
    let mut power = vec![0.0; n];
    let mut total = 0.0;
    for sc in 0..n {
        let mut best: Option<(usize, f64, f64)> = None;
        for k in 0..k_users {
            let g = problem.gains[k][sc];
            if !(g > 0.0) {
                continue;
            }
            let price = lambdas[k] + delta * g;
            let unconstrained = if price > 0.0 {
                1.0 / (price * LN_2) - floor / g
            } else {
                f64::INFINITY
            };
            let p = unconstrained.clamp(0.0, problem.power_box(k, g));
            if !(p > 0.0) {
                continue;
            }
            let score = candidate_score(p, g, floor, lambdas[k], delta);
            if score > 0.0 && best.is_none_or(|(_, _, s)| score > s) {
                best = Some((k, p, score));
            }
        }
        if let Some((k, p, s)) = best {
            assignment[sc] = Some(k);
            power[sc] = p;
            total += s;
        }
    }
    let dual_value = total
        + lambdas
            .iter()
            .zip(&problem.power_caps)
            .map(|(l, p)| l * p)
            .sum::<f64>()
        + delta * n as f64 * problem.margin;
    Inner {
        alloc: PowerAllocation::from_assignment(k_users, assignment, &power),
        dual_value,
    }
}

/// Value of the Lagrangian dual function at the given multipliers.
pub fn dual_function(problem: &AllocationProblem, delta: f64, lambdas: &[f64]) -> f64 {
    lagrangian_max(problem, delta, lambdas).dual_value
}

fn relative_gap(dual: f64, primal: f64) -> f64 {
    if dual <= 0.0 {
        return 0.0;
    }
    ((dual - primal) / dual).max(0.0)
}

struct Incumbent {
    allocation: PowerAllocation,
    throughput: f64,
}

impl Incumbent {
    fn offer(&mut self, mut alloc: PowerAllocation, problem: &AllocationProblem) {
        alloc.project_feasible(problem);
        let throughput = alloc.throughput(problem);
        if throughput > self.throughput {
            self.allocation = alloc;
            self.throughput = throughput;
        }
    }
}

/// Solves the allocation problem by dual decomposition.
pub fn solve_p1(problem: &AllocationProblem, options: &SolverOptions) -> Result<SolveOutcome> {
    problem.validate()?;
    let (k_users, n) = (problem.k(), problem.n());
    let mut state = DualState::new(k_users, options);
    let zero = PowerAllocation::zeros(k_users, n);

    let nothing_to_spend = problem.margin == 0.0
        || problem.power_caps.iter().all(|&p| p == 0.0)
        || problem.gains.iter().flatten().all(|&g| g == 0.0);
    if nothing_to_spend {
        return Ok(SolveOutcome {
            allocation: zero,
            dual: state,
            throughput: 0.0,
            dual_bound: 0.0,
            relative_gap: 0.0,
            converged: true,
            trivial: true,
            trace: Vec::new(),
        });
    }

    let mut best = Incumbent {
        allocation: zero,
        throughput: 0.0,
    };
    let mut dual_bound = f64::INFINITY;
    let mut dual_point = (state.delta, state.lambdas.clone());
    let mut trace = Vec::new();
    let mut window: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut converged = false;
    let mut gap;

    for t in 1..=options.max_iterations {
        let inner = lagrangian_max(problem, state.delta, &state.lambdas);
        if inner.dual_value < dual_bound {
            dual_bound = inner.dual_value;
            dual_point = (state.delta, state.lambdas.clone());
        }
        best.offer(inner.alloc.clone(), problem);

        window.push((state.delta, state.lambdas.clone()));
        let keep = (t / 10).max(1);
        if window.len() > keep {
            let excess = window.len() - keep;
            window.drain(..excess);
        }

        if t % options.recover_every == 0 || t == options.max_iterations || t == 1 {
            let mut points = vec![(state.delta, state.lambdas.clone())];
            points.push(average_duals(&window));
            for (delta, lambdas) in points {
                let assignment = lagrangian_max(problem, delta, &lambdas).alloc.assignment;
                let solved = optimal_powers_for_assignment(problem, &assignment)?;
                let value = dual_function(problem, solved.delta, &solved.lambdas);
                if value < dual_bound {
                    dual_bound = value;
                    dual_point = (solved.delta, solved.lambdas.clone());
                }
                best.offer(solved.allocation, problem);
            }
        }

        gap = relative_gap(dual_bound, best.throughput);
        state.gap_trace.push(gap);
        if options.record_trace {
            trace.push(IterationRecord {
                iteration: t,
                relative_gap: gap,
                delta: state.delta,
                lambdas: state.lambdas.clone(),
                throughput: inner.alloc.throughput(problem),
                mean_interference: inner.alloc.mean_interference(&problem.gains),
                user_power: inner.alloc.user_powers(),
            });
        }
        if gap <= options.gap_tolerance {
            converged = true;
            state.iteration = t;
            break;
        }
        let gaps = std::mem::take(&mut state.gap_trace);
        state = subgradient_step(&state, &inner.alloc, problem, options);
        state.gap_trace = gaps;
    }

    // Optimal powers for the winning assignment; an incumbent taken from a
    // projected argmax is feasible but need not satisfy the KKT conditions.
    let mut polished = optimal_powers_for_assignment(problem, &best.allocation.assignment)?.allocation;
    polished.project_feasible(problem);
    let polished_rate = polished.throughput(problem);
    if polished_rate >= best.throughput * (1.0 - 1e-12) {
        best.throughput = polished_rate.max(best.throughput);
        best.allocation = polished;
    }
    gap = relative_gap(dual_bound, best.throughput);

    if n <= options.local_search_max_n && gap > options.gap_tolerance {
        local_search(problem, &mut best)?;
        gap = relative_gap(dual_bound, best.throughput);
    }
    // Report the multipliers that certify the returned bound.
    state.delta = dual_point.0;
    state.lambdas = dual_point.1;

    let mut allocation = best.allocation;
    allocation.project_feasible(problem);
    let throughput = allocation.throughput(problem);
    Ok(SolveOutcome {
        allocation,
        dual: state,
        throughput,
        dual_bound,
        relative_gap: gap,
        converged,
        trivial: false,
        trace,
    })
}

/// Reassigns single subcarriers, or exchanges the owners of two, while that
/// improves the rate.
fn local_search(problem: &AllocationProblem, best: &mut Incumbent) -> Result<()> {
    let (k_users, n) = (problem.k(), problem.n());
    let mut assignment: Vec<Option<usize>> = best.allocation.assignment.clone();
    let usable = |k: Option<usize>, sc: usize| k.is_none_or(|k| problem.gains[k][sc] > 0.0);
    loop {
        let mut moves: Vec<Vec<Option<usize>>> = Vec::new();
        for sc in 0..n {
            for k in 0..k_users {
                if assignment[sc] != Some(k) && usable(Some(k), sc) {
                    let mut trial = assignment.clone();
                    trial[sc] = Some(k);
                    moves.push(trial);
                }
            }
            for other in sc + 1..n {
                if assignment[sc] != assignment[other]
                    && usable(assignment[other], sc)
                    && usable(assignment[sc], other)
                {
                    let mut trial = assignment.clone();
                    trial.swap(sc, other);
                    moves.push(trial);
                }
            }
        }
        let mut improved = false;
        for trial in moves {
            let solved = optimal_powers_for_assignment(problem, &trial)?;
            if solved.throughput > best.throughput * (1.0 + 1e-12) {
                best.allocation = solved.allocation;
                best.throughput = solved.throughput;
                assignment = trial;
                improved = true;
                break;
            }
        }
        if !improved {
            return Ok(());
        }
    }
}

fn average_duals(window: &[(f64, Vec<f64>)]) -> (f64, Vec<f64>) {
    let m = window.len().max(1) as f64;
    let k = window.first().map_or(0, |w| w.1.len());
    let delta = window.iter().map(|w| w.0).sum::<f64>() / m;
    let lambdas = (0..k)
        .map(|i| window.iter().map(|w| w.1[i]).sum::<f64>() / m)
        .collect();
    (delta, lambdas)
}
