use std::f64::consts::LN_2;

use proptest::prelude::*;
use rand::Rng;
use refarm::allocator::{
    assign_subcarrier, brute_force_oracle, dual_function, optimal_powers_for_assignment,
    power_candidate, solve_p1, solve_p2_waterfill, solve_p3_channel_inverse, subgradient,
    subgradient_step, AllocationProblem, DualState, PowerAllocation, SolverOptions,
};
use refarm::channel::{gen_channel_set, ChannelModel, SystemConfig};
use refarm::rng::substream;
use refarm::Error;

const FEAS_TOL: f64 = 1e-9;

fn rate(p: f64, g: f64, floor: f64) -> f64 {
    (1.0 + p * g / floor).log2()
}

fn ofdma_gains(seed: u64, k: usize, n: usize, paths: usize) -> Vec<Vec<f64>> {
    let cfg = SystemConfig {
        n,
        users: 0,
        k,
        paths,
        cp_len: paths - 1,
        power_caps: vec![1.0; k],
        ..SystemConfig::default()
    };
    gen_channel_set(&cfg, ChannelModel::Selective, &mut substream(seed, &[0]))
        .unwrap()
        .ofdma_gain_matrix()
}

fn assert_feasible(alloc: &PowerAllocation, problem: &AllocationProblem) {
    alloc.check_exclusive().unwrap();
    for n in 0..problem.n() {
        let owners = (0..problem.k()).filter(|&k| alloc.powers[k][n] > 0.0).count();
        assert!(owners <= 1);
    }
    for k in 0..problem.k() {
        assert!(alloc.user_power(k) <= problem.power_caps[k] + FEAS_TOL);
        assert!(alloc.powers[k].iter().all(|&p| p >= 0.0));
    }
    assert!(alloc.mean_interference(&problem.gains) <= problem.margin + FEAS_TOL);
}

#[test]
fn power_candidate_examples() {
    let p = power_candidate(0.0, 0.1, 1.0, 1.0).unwrap();
    assert!((p - (1.0 / (0.1 * LN_2) - 1.0)).abs() < 1e-12);
    assert!((p - 13.4270).abs() < 5e-5);
    assert_eq!(power_candidate(0.0, 10.0, 1.0, 1.0).unwrap(), 0.0);
    assert_eq!(power_candidate(0.1, 0.1, 0.0, 1.0).unwrap(), 0.0);
    assert!(matches!(power_candidate(0.0, 0.0, 1.0, 1.0), Err(Error::UnboundedCandidate)));
    // Pure interference pricing gives equal received power on every carrier.
    let received: Vec<f64> = [0.01, 0.02, 0.05]
        .iter()
        .map(|&g| g * power_candidate(0.1, 0.0, g, 0.01).unwrap())
        .collect();
    for r in &received {
        assert!((r - received[0]).abs() < 1e-12);
    }
}

#[test]
fn assignment_examples() {
    let floor = 1.0;
    let lambdas = [0.1];
    let c = power_candidate(0.0, 0.1, 2.0, floor).unwrap();
    assert_eq!(assign_subcarrier(&[c], &[2.0], floor, 0.0, &lambdas), Some(0));
    assert_eq!(assign_subcarrier(&[0.0], &[2.0], floor, 0.0, &lambdas), None);
    let lambdas = [0.1, 0.1];
    let gains = [2.0, 1.0];
    let cands: Vec<f64> = (0..2).map(|k| power_candidate(0.0, lambdas[k], gains[k], floor).unwrap()).collect();
    assert_eq!(assign_subcarrier(&cands, &gains, floor, 0.0, &lambdas), Some(0));
    let gains = [1.0, 2.0];
    let cands: Vec<f64> = (0..2).map(|k| power_candidate(0.0, lambdas[k], gains[k], floor).unwrap()).collect();
    assert_eq!(assign_subcarrier(&cands, &gains, floor, 0.0, &lambdas), Some(1));
    let gains = [1.5, 1.5];
    let cands: Vec<f64> = (0..2).map(|k| power_candidate(0.0, lambdas[k], gains[k], floor).unwrap()).collect();
    assert_eq!(assign_subcarrier(&cands, &gains, floor, 0.0, &lambdas), Some(0));
}

#[test]
fn subgradient_signs() {
    let problem = AllocationProblem::new(vec![vec![1.0; 4], vec![1.0; 4]], 1.0, 2.0, vec![1.0, 1.0]).unwrap();
    let opts = SolverOptions::default();
    let state = DualState::new(2, &opts);
    // Slack interference, user 0 over its cap, user 1 idle.
    let mut alloc = PowerAllocation::zeros(2, 4);
    alloc.powers[0][0] = 1.5;
    alloc.assignment[0] = Some(0);
    let d = subgradient(&alloc, &problem);
    assert!((d[0] - (2.0 - 1.5 / 4.0)).abs() < 1e-15);
    assert!((d[1] + 0.5).abs() < 1e-15);
    assert!((d[2] - 1.0).abs() < 1e-15);
    let next = subgradient_step(&state, &alloc, &problem, &opts);
    assert!(next.delta < state.delta && next.delta >= 0.0);
    assert!(next.lambdas[0] > state.lambdas[0]);
    assert!(next.lambdas[1] < state.lambdas[1]);
    assert_eq!(next.iteration, 1);
    // Repeated slack drives a multiplier toward zero but never below it.
    let mut s = state;
    for _ in 0..2000 {
        s = subgradient_step(&s, &alloc, &problem, &opts);
        assert!(s.delta >= 0.0 && s.lambdas.iter().all(|&l| l >= 0.0));
    }
    assert!(s.delta < 1e-4);
}

#[test]
fn waterfill_examples() {
    let w = solve_p2_waterfill(&[1.0; 8], 4.0, 1.0).unwrap();
    for p in &w.powers {
        assert!((p - 0.5).abs() < 1e-12);
    }
    let w = solve_p2_waterfill(&[1.0, 0.1], 2.0, 1.0).unwrap();
    assert_eq!(w.powers, vec![2.0, 0.0]);
    assert!((w.water_level - 3.0).abs() < 1e-12);
    let w = solve_p2_waterfill(&[1.0, 0.1], 20.0, 1.0).unwrap();
    assert!((w.powers[0] - w.powers[1] - 9.0).abs() < 1e-12);
    assert!((w.powers.iter().sum::<f64>() - 20.0).abs() < 1e-12);
    assert!(solve_p2_waterfill(&[1.0, 2.0], 0.0, 1.0).unwrap().powers.iter().all(|&p| p == 0.0));
    let dead = solve_p2_waterfill(&[0.0, 0.0], 1.0, 1.0).unwrap();
    assert!(dead.infeasible_spend && dead.powers.iter().all(|&p| p == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn waterfill_satisfies_kkt(
        gains in prop::collection::vec(prop_oneof![Just(0.0), 1e-3f64..10.0], 1..40),
        cap in 0.01f64..100.0, floor in 0.1f64..10.0,
    ) {
        prop_assume!(gains.iter().any(|&g| g > 0.0));
        let w = solve_p2_waterfill(&gains, cap, floor).unwrap();
        let total: f64 = w.powers.iter().sum();
        prop_assert!((total - cap).abs() <= 1e-9 * cap.max(1.0));
        for (&p, &g) in w.powers.iter().zip(&gains) {
            prop_assert!(p >= 0.0);
            if g == 0.0 {
                prop_assert_eq!(p, 0.0);
            } else if p > 0.0 {
                prop_assert!((p + floor / g - w.water_level).abs() <= 1e-9 * w.water_level);
            } else {
                prop_assert!(floor / g >= w.water_level * (1.0 - 1e-12));
            }
        }
    }

    #[test]
    fn channel_inverse_is_gain_independent(seed in any::<u64>(), k in 1usize..4, t in 0.01f64..100.0, floor in 0.1f64..50.0) {
        let gains = ofdma_gains(seed, k, 64, 8);
        let problem = AllocationProblem::new(gains, floor, t, vec![1e9; k]).unwrap();
        let ci = solve_p3_channel_inverse(&problem).unwrap();
        let closed = 64.0 * (1.0 + t / floor).log2();
        prop_assert!(!ci.reduced);
        prop_assert!((ci.throughput - closed).abs() <= 1e-9 * closed);
        prop_assert!((ci.allocation.mean_interference(&problem.gains) - t).abs() <= 1e-9 * t);
        let received: Vec<f64> = (0..64).map(|n| (0..k).map(|u| ci.allocation.powers[u][n] * problem.gains[u][n]).sum()).collect();
        for r in &received {
            prop_assert!((r - t).abs() <= 1e-9 * t);
        }
        prop_assert!((ci.allocation.throughput(&problem) - closed).abs() <= 1e-9 * closed);
    }

    #[test]
    fn solver_output_is_exclusive_and_feasible(
        seed in any::<u64>(), k in 1usize..4, n in 2usize..48, t in 1e-3f64..50.0,
        cap_scale in 0.01f64..100.0, floor in 0.5f64..50.0,
    ) {
        let gains = ofdma_gains(seed, k, n, 1.max(n / 8));
        let caps: Vec<f64> = (0..k).map(|i| cap_scale * (1.0 + i as f64)).collect();
        let problem = AllocationProblem::new(gains, floor, t, caps).unwrap();
        let opts = SolverOptions { max_iterations: 400, ..SolverOptions::default() };
        let out = solve_p1(&problem, &opts).unwrap();
        assert_feasible(&out.allocation, &problem);
        prop_assert!((out.allocation.throughput(&problem) - out.throughput).abs() <= 1e-9 * out.throughput.max(1.0));
        prop_assert!(out.dual_bound >= out.throughput * (1.0 - 1e-12));
        prop_assert!(out.dual.delta >= 0.0 && out.dual.lambdas.iter().all(|&l| l >= 0.0));
        // Weak duality at the reported multipliers.
        let bound = dual_function(&problem, out.dual.delta, &out.dual.lambdas);
        prop_assert!(bound >= out.throughput * (1.0 - 1e-9));
    }
}

#[test]
fn channel_inverse_examples() {
    let gains = ofdma_gains(5, 2, 256, 32);
    let problem = AllocationProblem::new(gains, 21.0, 42.096, vec![1e6; 2]).unwrap();
    let ci = solve_p3_channel_inverse(&problem).unwrap();
    assert!((ci.throughput - 256.0 * (1.0 + 42.096 / 21.0f64).log2()).abs() < 1e-9 * ci.throughput);
    assert!((ci.throughput - 406.3).abs() < 0.05, "{}", ci.throughput);
    let other = AllocationProblem { gains: ofdma_gains(6, 2, 256, 32), ..problem.clone() };
    assert_eq!(solve_p3_channel_inverse(&other).unwrap().throughput, ci.throughput);
    let zero = AllocationProblem { margin: 0.0, ..problem.clone() };
    assert_eq!(solve_p3_channel_inverse(&zero).unwrap().throughput, 0.0);
    let mut holes = problem.clone();
    for row in &mut holes.gains {
        row[3] = 0.0;
    }
    let reduced = solve_p3_channel_inverse(&holes).unwrap();
    assert!(reduced.reduced);
    assert_eq!(reduced.active_subcarriers, 255);
    assert!(reduced.allocation.assignment[3].is_none());
}

#[test]
fn oracle_examples() {
    // One variable with the margin binding.
    let single = AllocationProblem::new(vec![vec![2.0]], 3.0, 1.5, vec![100.0]).unwrap();
    let (alloc, c) = brute_force_oracle(&single).unwrap();
    assert!((alloc.powers[0][0] - 0.75).abs() < 1e-7);
    assert!((c - rate(0.75, 2.0, 3.0)).abs() < 1e-8);
    // Symmetric users and subcarriers: each user takes one carrier.
    let sym = AllocationProblem::new(vec![vec![1.0, 1.0]; 2], 1.0, 100.0, vec![1.0, 1.0]).unwrap();
    let (alloc, c) = brute_force_oracle(&sym).unwrap();
    assert!((c - 2.0 * rate(1.0, 1.0, 1.0)).abs() < 1e-7);
    assert!(alloc.assignment[0] != alloc.assignment[1]);
    let big = AllocationProblem::new(vec![vec![1.0; 7]], 1.0, 1.0, vec![1.0]).unwrap();
    assert!(matches!(brute_force_oracle(&big), Err(Error::TooLarge(_))));
}

#[test]
fn solver_tracks_oracle_on_tiny_instances() {
    let mut rng = substream(51, &[0]);
    for _ in 0..25 {
        let gains: Vec<Vec<f64>> = (0..2).map(|_| (0..4).map(|_| rng.random_range(0.05..3.0)).collect()).collect();
        let problem = AllocationProblem::new(
            gains,
            rng.random_range(0.5..5.0),
            rng.random_range(0.1..3.0),
            vec![rng.random_range(0.5..5.0), rng.random_range(0.5..5.0)],
        )
        .unwrap();
        let (_, best) = brute_force_oracle(&problem).unwrap();
        let out = solve_p1(&problem, &SolverOptions::default()).unwrap();
        assert!(out.throughput >= best * 0.99, "{} vs {best}", out.throughput);
        assert!(out.throughput <= best * (1.0 + 1e-6));
    }
}

#[test]
fn fixed_assignment_solution_meets_constraints() {
    let gains = ofdma_gains(52, 2, 32, 4);
    let problem = AllocationProblem::new(gains, 5.0, 0.5, vec![2.0, 3.0]).unwrap();
    let assignment: Vec<Option<usize>> = (0..32).map(|n| Some(n % 2)).collect();
    let sol = optimal_powers_for_assignment(&problem, &assignment).unwrap();
    assert_feasible(&sol.allocation, &problem);
    assert!((sol.allocation.throughput(&problem) - sol.throughput).abs() < 1e-9 * sol.throughput);
    for n in 0..32 {
        assert_eq!(sol.allocation.powers[(n + 1) % 2][n], 0.0);
    }
}

#[test]
fn single_user_light_load_is_waterfilling() {
    let gains = ofdma_gains(53, 1, 128, 16);
    let floor = 21.0;
    let cap = 100.0;
    let wf = solve_p2_waterfill(&gains[0], cap, floor).unwrap();
    let wf_rate: f64 = wf.powers.iter().zip(&gains[0]).map(|(&p, &g)| rate(p, g, floor)).sum();
    let problem = AllocationProblem::new(gains, floor, 1e6, vec![cap]).unwrap();
    let out = solve_p1(&problem, &SolverOptions::default()).unwrap();
    assert!((out.throughput - wf_rate).abs() <= 1e-4 * wf_rate, "{} vs {wf_rate}", out.throughput);
    assert!((out.allocation.user_power(0) - cap).abs() <= 1e-6 * cap);
}

#[test]
fn zero_budgets_give_the_trivial_allocation() {
    let problem = AllocationProblem::new(vec![vec![1.0; 4]; 2], 1.0, 0.0, vec![0.0, 0.0]).unwrap();
    let out = solve_p1(&problem, &SolverOptions::default()).unwrap();
    assert!(out.trivial);
    assert_eq!(out.throughput, 0.0);
    assert!(out.allocation.powers.iter().flatten().all(|&p| p == 0.0));
}

#[test]
fn throughput_grows_with_budgets() {
    let gains = ofdma_gains(54, 2, 64, 8);
    let opts = SolverOptions::default();
    // Each returned value is within the gap tolerance of the optimum, so
    // monotonicity is checked to that tolerance.
    let slack = 1.0 - 2.0 * opts.gap_tolerance;
    let mut prev = 0.0;
    for t in [0.01, 0.05, 0.2, 1.0, 5.0, 20.0, 100.0] {
        let p = AllocationProblem::new(gains.clone(), 10.0, t, vec![50.0, 50.0]).unwrap();
        let c = solve_p1(&p, &opts).unwrap().throughput;
        assert!(c >= prev * slack, "T = {t}: {c} < {prev}");
        prev = c;
    }
    let mut prev = 0.0;
    for cap in [0.1, 1.0, 5.0, 20.0, 100.0, 1000.0] {
        let p = AllocationProblem::new(gains.clone(), 10.0, 2.0, vec![cap, 10.0]).unwrap();
        let c = solve_p1(&p, &opts).unwrap().throughput;
        assert!(c >= prev * slack, "cap = {cap}: {c} < {prev}");
        prev = c;
    }
}

#[test]
fn some_constraint_family_always_binds() {
    // Far from the transition only one family binds. In between, both can
    // hold at once: the caps are spent in full while power shifts toward
    // weaker subcarriers to meet the margin.
    let mut rng = substream(55, &[0]);
    let mut both = 0;
    for trial in 0..30u64 {
        let gains = ofdma_gains(trial, 2, 128, 16);
        let t: f64 = 10f64.powf(rng.random_range(-1.5..2.0));
        let problem = AllocationProblem::new(gains, 21.0, t, vec![100.0, 100.0]).unwrap();
        let out = solve_p1(&problem, &SolverOptions::default()).unwrap();
        let sigma = out.allocation.mean_interference(&problem.gains);
        let margin_binds = (sigma - t).abs() <= 1e-4 * t;
        let caps_bind = (0..2).all(|k| (out.allocation.user_power(k) - 100.0).abs() <= 1e-6 * 100.0);
        assert!(margin_binds || caps_bind, "T = {t}: sigma {sigma}, powers {:?}", out.allocation.user_powers());
        both += usize::from(margin_binds && caps_bind);
    }
    assert!(both < 30);
    for (t, margin_only) in [(0.01, true), (1e4, false)] {
        let problem = AllocationProblem::new(ofdma_gains(99, 2, 128, 16), 21.0, t, vec![100.0, 100.0]).unwrap();
        let out = solve_p1(&problem, &SolverOptions::default()).unwrap();
        let sigma = out.allocation.mean_interference(&problem.gains);
        let caps_bind = (0..2).all(|k| (out.allocation.user_power(k) - 100.0).abs() <= 1e-6 * 100.0);
        if margin_only {
            assert!((sigma - t).abs() <= 1e-4 * t && !caps_bind);
        } else {
            assert!(sigma < t && caps_bind);
        }
    }
}
