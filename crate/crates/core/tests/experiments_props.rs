use refarm::allocator::SolverOptions;
use refarm::cdma::Receiver;
use refarm::channel::{linear_to_db, ChannelModel, SystemConfig};
use refarm::experiments::{
    run_allocation_snapshot, run_convergence_trace, run_load_sweep, run_over_protection,
    run_snr_sweep, validate_one, LoadRegime, SweepSpec, SweptParameter,
};

fn reference() -> SystemConfig {
    SystemConfig::default()
}

fn spec(swept: SweptParameter, grid: Vec<f64>, receiver: Receiver, n: usize, trials: usize) -> SweepSpec {
    let paths = n / 8;
    SweepSpec {
        swept,
        grid,
        receiver,
        fixed: SystemConfig { n, paths, cp_len: paths - 1, ..reference() }.with_load(0.2),
        trials,
        seed: 77,
        solver: SolverOptions::default(),
    }
}

#[test]
fn light_load_trace_spends_full_power() {
    let trace = run_convergence_trace(&reference(), LoadRegime::Light, Receiver::Mf, 3, &SolverOptions::default()).unwrap();
    let run = &trace.run;
    let out = &run.outcome;
    assert!(out.relative_gap < 1e-3);
    assert!(!trace.records().is_empty());
    assert!(out.dual.lambdas.iter().all(|&l| l > 0.0));
    assert!(out.dual.delta < 1e-3 * out.dual.lambdas[0]);
    for (k, cap) in run.problem.power_caps.iter().enumerate() {
        assert!((out.allocation.user_power(k) - cap).abs() <= 1e-6 * cap);
    }
    assert!(out.allocation.mean_interference(&run.problem.gains) < run.margin.margin);
    let last = trace.records().last().unwrap();
    assert_eq!(last.lambdas.len(), 2);
    assert_eq!(last.user_power.len(), 2);
}

#[test]
fn heavy_load_trace_reaches_the_margin() {
    let trace = run_convergence_trace(&reference(), LoadRegime::Heavy, Receiver::Mf, 3, &SolverOptions::default()).unwrap();
    let run = &trace.run;
    let out = &run.outcome;
    assert!(out.relative_gap < 1e-3);
    assert!(out.dual.delta > 0.0);
    assert!(out.dual.lambdas.iter().all(|&l| l < 1e-3 * out.dual.delta));
    let sigma = out.allocation.mean_interference(&run.problem.gains);
    assert!((sigma - run.margin.margin).abs() <= 1e-4 * run.margin.margin);
    for (k, cap) in run.problem.power_caps.iter().enumerate() {
        assert!(out.allocation.user_power(k) < *cap);
    }
    // Gap history recorded per iteration and nonincreasing.
    let gaps: Vec<f64> = trace.records().iter().map(|r| r.relative_gap).collect();
    assert!(gaps.windows(2).all(|w| w[1] <= w[0] + 1e-15));
}

#[test]
fn heavy_snapshot_inverts_the_channel() {
    let snap = run_allocation_snapshot(&reference(), LoadRegime::Heavy, Receiver::Mf, 4, &SolverOptions::default()).unwrap();
    assert_eq!(snap.rows.len(), 256);
    let received: Vec<f64> = snap.rows.iter().filter(|r| r.owner.is_some() && r.power > 0.0).map(|r| r.received).collect();
    assert!(received.len() > 200);
    let mean = received.iter().sum::<f64>() / received.len() as f64;
    let sd = (received.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / received.len() as f64).sqrt();
    assert!(sd / mean < 0.01, "cv {}", sd / mean);
    for row in &snap.rows {
        if let Some(k) = row.owner {
            assert_eq!(row.gain, row.user_gains[k]);
            assert!((row.received - row.power * row.gain).abs() <= 1e-12 * row.received.max(1e-300));
        }
    }
}

#[test]
fn light_snapshot_waterfills_per_user() {
    let snap = run_allocation_snapshot(&reference(), LoadRegime::Light, Receiver::Mf, 4, &SolverOptions::default()).unwrap();
    for k in 0..2 {
        let mut mine: Vec<(f64, f64)> = snap.rows.iter().filter(|r| r.owner == Some(k) && r.power > 0.0).map(|r| (r.gain, r.power)).collect();
        assert!(!mine.is_empty());
        mine.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!(mine.windows(2).all(|w| w[1].1 >= w[0].1 - 1e-9), "user {k}");
        // Common water level among the user's active subcarriers.
        let floor = snap.run.problem.noise_floor;
        let levels: Vec<f64> = mine.iter().map(|(g, p)| p + floor / g).collect();
        let spread = levels.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - levels.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread <= 1e-6 * levels[0], "user {k}: spread {spread}");
    }
}

#[test]
fn load_sweep_is_deterministic_and_ordered() {
    let s = spec(SweptParameter::Alpha, vec![0.1, 0.3, 0.5, 0.9], Receiver::Mf, 64, 4);
    let a = run_load_sweep(&s).unwrap();
    let b = run_load_sweep(&s).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.points.len(), 4);
    let last = &a.points[3];
    assert!(!last.feasible);
    assert_eq!(last.ofdma_throughput, 0.0);
    assert_eq!(last.margin, 0.0);
    for w in a.points.windows(2) {
        assert!(w[1].ofdma_throughput <= w[0].ofdma_throughput + 1e-9);
    }
    for p in a.points.iter().filter(|p| p.feasible) {
        assert!(p.cdma_sinr_theory > 0.0 && p.cdma_sinr_empirical_mean > 0.0);
        assert_eq!(p.users, (p.value * 64.0).round() as usize);
    }
    assert!(run_snr_sweep(&s).is_err());
}

#[test]
fn snr_sweep_sinr_grows_and_tracks_theory() {
    let s = spec(SweptParameter::ReceiveSnrDb, (0..=8).map(|i| 4.0 * i as f64).collect(), Receiver::Mmse, 256, 3);
    let r = run_snr_sweep(&s).unwrap();
    for w in r.points.windows(2) {
        assert!(w[1].cdma_sinr_theory >= w[0].cdma_sinr_theory * (1.0 - 1e-9));
        assert!(w[1].cdma_sinr_empirical_mean >= w[0].cdma_sinr_empirical_mean * (1.0 - 1e-3));
    }
    for p in &r.points {
        let gap = (linear_to_db(p.cdma_sinr_empirical_mean) - linear_to_db(p.cdma_sinr_theory)).abs();
        assert!(gap < 0.5, "{} dB: gap {gap} dB", p.value);
    }
    assert!(run_load_sweep(&s).is_err());
}

#[test]
fn concentration_improves_with_size() {
    let ratio = |n: usize, receiver| {
        let cfg = SystemConfig { n, paths: n / 8, cp_len: n / 8 - 1, ..reference() }.with_load(0.2);
        validate_one(&cfg, receiver, ChannelModel::Selective, 100, 5).unwrap()
    };
    for receiver in [Receiver::Mf, Receiver::Mmse] {
        let small = ratio(256, receiver);
        let large = ratio(512, receiver);
        assert!(small.std_over_mean < 0.10, "{receiver}: {}", small.std_over_mean);
        assert!(large.std_over_mean < small.std_over_mean, "{receiver}: {} vs {}", large.std_over_mean, small.std_over_mean);
        assert!(small.relative_error < 0.10);
    }
}

#[test]
fn mmse_over_protection_is_negligible() {
    // Near the boundary the margin binds and the allocation is close to
    // channel inversion, so the profile is nearly uniform and the reinforced
    // constraint costs almost nothing at every size.
    let beta = reference().beta_star;
    let rows = run_over_protection(&reference(), Receiver::Mmse, 0.95, &[32, 128, 512], 4, 6, &SolverOptions::default()).unwrap();
    assert_eq!(rows.len(), 3);
    for r in &rows {
        assert!(r.excess >= -1e-9, "{r:?}");
        assert!(r.excess < 1e-3 * beta, "{r:?}");
    }
}
