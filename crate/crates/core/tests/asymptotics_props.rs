use proptest::prelude::*;
use rand::Rng;
use refarm::asymptotics::{
    asymptotic_sinr, interference_margin, jensen_reinforcement_gap, mf_asymptotic_awgn,
    mf_asymptotic_flat, mf_asymptotic_selective, mf_asymptotic_uniform, mmse_fixed_point_flat,
    mmse_fixed_point_selective, mmse_fixed_point_uniform, mmse_selective_map, mmse_uniform_map,
    proposition1_check, supportable_load, FixedPointOptions,
};
use refarm::cdma::{InterferenceProfile, Receiver};
use refarm::channel::{db_to_linear, gen_channel_set, ChannelModel, ChannelSet, SystemConfig};
use refarm::rng::substream;
use num_complex::Complex64;

fn profile_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..100.0, 1..64)
}

fn uniform_fp(alpha: f64, q: f64, profile: &InterferenceProfile, sigma2: f64, start: Option<f64>) -> f64 {
    let opts = FixedPointOptions { tolerance: 1e-13, start, ..FixedPointOptions::default() };
    mmse_fixed_point_uniform(alpha, q, profile, sigma2, &opts).unwrap().value()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn jensen_lower_bound_holds(
        sigma in profile_strategy(), beta in 0.01f64..50.0, alpha in 0.0f64..3.0,
        q in 0.1f64..1000.0, sigma2 in 0.01f64..10.0,
    ) {
        let p = InterferenceProfile::new(sigma).unwrap();
        let (lhs, rhs) = jensen_reinforcement_gap(beta, alpha, q, sigma2, &p);
        prop_assert!(lhs >= rhs * (1.0 - 1e-12), "{lhs} < {rhs}");
    }

    #[test]
    fn jensen_is_tight_for_uniform_profiles(
        level in 0.0f64..100.0, n in 1usize..64, beta in 0.01f64..50.0,
        alpha in 0.0f64..3.0, q in 0.1f64..1000.0,
    ) {
        let p = InterferenceProfile::uniform(n, level).unwrap();
        let (lhs, rhs) = jensen_reinforcement_gap(beta, alpha, q, 1.0, &p);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs);
    }

    #[test]
    fn sufficient_condition_matches_fixed_point(
        sigma in profile_strategy(), beta_db in -5.0f64..15.0, alpha in 0.01f64..2.0,
        snr_db in 0.0f64..30.0,
    ) {
        let q = db_to_linear(snr_db);
        let beta = db_to_linear(beta_db);
        let p = InterferenceProfile::new(sigma).unwrap();
        let fp = uniform_fp(alpha, q, &p, 1.0, None);
        prop_assume!((fp - beta).abs() > 1e-8 * beta);
        prop_assert_eq!(proposition1_check(beta, alpha, q, 1.0, &p), fp >= beta);
    }

    #[test]
    fn fixed_point_is_unique(
        sigma in profile_strategy(), alpha in 0.01f64..3.0, snr_db in -5.0f64..30.0,
    ) {
        let q = db_to_linear(snr_db);
        let p = InterferenceProfile::new(sigma).unwrap();
        let low = uniform_fp(alpha, q, &p, 1.0, Some(1e-3));
        let high = uniform_fp(alpha, q, &p, 1.0, Some(q));
        prop_assert!((low - high).abs() <= 1e-8 * high, "{low} vs {high}");
        prop_assert!((mmse_uniform_map(low, alpha, q, &p, 1.0) - low).abs() <= 1e-10 * low);
        // f(x)/x strictly decreases.
        let mut prev = f64::INFINITY;
        for i in 0..40 {
            let x = 1e-3 * 1.5f64.powi(i);
            let ratio = mmse_uniform_map(x, alpha, q, &p, 1.0) / x;
            prop_assert!(ratio < prev);
            prev = ratio;
        }
    }

    #[test]
    fn mmse_limit_dominates_mf_limit(
        sigma in profile_strategy(), alpha in 0.0f64..3.0, snr_db in -5.0f64..30.0,
    ) {
        let q = db_to_linear(snr_db);
        let p = InterferenceProfile::new(sigma).unwrap();
        let mf = asymptotic_sinr(Receiver::Mf, alpha, q, &p, 1.0).unwrap();
        let mmse = asymptotic_sinr(Receiver::Mmse, alpha, q, &p, 1.0).unwrap();
        prop_assert!(mmse >= mf * (1.0 - 1e-10));
    }

    #[test]
    fn margin_is_consistent_with_the_limits(
        snr_db in 5.0f64..30.0, beta_db in -3.0f64..8.0, frac in 0.0f64..0.999,
    ) {
        let q = db_to_linear(snr_db);
        let beta = db_to_linear(beta_db);
        for rx in [Receiver::Mf, Receiver::Mmse] {
            let star = supportable_load(q, 1.0, beta, rx);
            prop_assume!(star > 0.0);
            let alpha = frac * star;
            let m = interference_margin(alpha, q, 1.0, beta, rx);
            prop_assert!(m.feasible);
            // Spending exactly the margin as uniform interference lands on the target.
            let p = InterferenceProfile::uniform(8, m.margin).unwrap();
            let sinr = asymptotic_sinr(rx, alpha, q, &p, 1.0).unwrap();
            prop_assert!((sinr - beta).abs() <= 1e-8 * beta, "{rx}: {sinr} vs {beta}");
            // Linear in q at fixed loads.
            let m2 = interference_margin(alpha, 2.0 * q, 1.0, beta, rx);
            let star2 = supportable_load(2.0 * q, 1.0, beta, rx);
            let expect = match rx {
                Receiver::Mf => (star2 - alpha) * 2.0 * q,
                Receiver::Mmse => (star2 - alpha) * 2.0 * q / (1.0 + beta),
            };
            prop_assert!((m2.margin - expect).abs() <= 1e-9 * expect);
            let beyond = interference_margin(star * 1.01 + 1e-3, q, 1.0, beta, rx);
            prop_assert!(!beyond.feasible);
            prop_assert_eq!(beyond.margin, 0.0);
        }
    }
}

#[test]
fn jensen_over_a_thousand_profiles() {
    let mut rng = substream(41, &[0]);
    for _ in 0..1000 {
        let n = rng.random_range(1..128);
        let sigma: Vec<f64> = (0..n).map(|_| 50.0 * rng.random::<f64>().powi(3)).collect();
        let p = InterferenceProfile::new(sigma).unwrap();
        let beta = db_to_linear(rng.random_range(-5.0..15.0));
        let alpha = rng.random_range(0.0..2.0);
        let (lhs, rhs) = jensen_reinforcement_gap(beta, alpha, 100.0, 1.0, &p);
        assert!(lhs >= rhs * (1.0 - 1e-12));
    }
}

#[test]
fn known_awgn_channels_reduce_to_the_uniform_limits() {
    let ch = ChannelSet::awgn(64, 20, 0);
    let p = InterferenceProfile::new((0..64).map(|i| (i % 5) as f64).collect()).unwrap();
    let mf = mf_asymptotic_selective(&ch, 50.0, &p, 1.0).unwrap();
    let awgn = mf_asymptotic_awgn(20, 64, 50.0, p.mean(), 1.0);
    for v in &mf {
        assert!((v - awgn).abs() <= 1e-12 * awgn);
    }
    let opts = FixedPointOptions { tolerance: 1e-13, ..FixedPointOptions::default() };
    let coupled = mmse_fixed_point_selective(&ch, 50.0, &p, 1.0, &opts).unwrap();
    let scalar = uniform_fp(20.0 / 64.0, 50.0, &p, 1.0, None);
    for v in &coupled.values {
        assert!((v - scalar).abs() <= 1e-10 * scalar, "{v} vs {scalar}");
    }
}

#[test]
fn flat_channels_reduce_to_the_flat_formulas() {
    let amps = [Complex64::new(1.5, 0.0), Complex64::new(0.0, 0.5), Complex64::new(0.8, -0.6)];
    let ch = ChannelSet::flat(16, &amps, &[]).unwrap();
    let gains: Vec<f64> = amps.iter().map(|a| a.norm_sqr()).collect();
    let p = InterferenceProfile::uniform(16, 0.7).unwrap();
    let general = mf_asymptotic_selective(&ch, 30.0, &p, 1.0).unwrap();
    let flat = mf_asymptotic_flat(&gains, 16, 30.0, 0.7, 1.0);
    for (a, b) in general.iter().zip(&flat) {
        assert!((a - b).abs() <= 1e-12 * b);
    }
    let opts = FixedPointOptions::default();
    let coupled = mmse_fixed_point_selective(&ch, 30.0, &p, 1.0, &opts).unwrap();
    let direct = mmse_fixed_point_flat(&gains, 30.0, &p, 1.0, &opts).unwrap();
    for (a, b) in coupled.values.iter().zip(&direct.values) {
        assert!((a - b).abs() <= 1e-9 * b);
    }
    // Stronger users see a better SINR.
    assert!(direct.values[0] > direct.values[2] && direct.values[2] > direct.values[1]);
}

#[test]
fn single_user_limits() {
    let p = InterferenceProfile::uniform(32, 2.0).unwrap();
    assert!((mf_asymptotic_awgn(1, 32, 10.0, 2.0, 1.0) - 10.0 / 3.0).abs() < 1e-14);
    assert!((mf_asymptotic_uniform(0.0, 10.0, 2.0, 1.0) - 10.0 / 3.0).abs() < 1e-14);
    assert!((uniform_fp(0.0, 10.0, &p, 1.0, None) - 10.0 / 3.0).abs() < 1e-10);
}

#[test]
fn coupled_iteration_is_monotone_from_zero() {
    let cfg = SystemConfig { n: 64, users: 24, paths: 8, cp_len: 7, k: 0, power_caps: vec![], ..SystemConfig::default() };
    let ch = gen_channel_set(&cfg, ChannelModel::Selective, &mut substream(42, &[0])).unwrap();
    let p = InterferenceProfile::new((0..64).map(|i| 0.1 * i as f64).collect()).unwrap();
    let mut x = vec![0.0; 24];
    for _ in 0..200 {
        let next = mmse_selective_map(&ch, 100.0, &p, 1.0, &x).unwrap();
        for (a, b) in next.iter().zip(&x) {
            assert!(*a >= *b * (1.0 - 1e-14));
        }
        x = next;
    }
    let solved = mmse_fixed_point_selective(&ch, 100.0, &p, 1.0, &FixedPointOptions::default()).unwrap();
    for (a, b) in x.iter().zip(&solved.values) {
        assert!((a - b).abs() <= 1e-8 * b, "{a} vs {b}");
    }
}

#[test]
fn uniform_profile_at_the_margin_sits_on_the_target() {
    let q = 100.0;
    let beta = db_to_linear(2.0);
    let m = interference_margin(0.2, q, 1.0, beta, Receiver::Mmse);
    let p = InterferenceProfile::uniform(256, m.margin).unwrap();
    let fp = uniform_fp(0.2, q, &p, 1.0, None);
    assert!((fp - beta).abs() <= 1e-8 * beta);
    let reference = (79.0 + 6641f64.sqrt()) / 2.0;
    let zero = InterferenceProfile::zero(256);
    assert!((uniform_fp(0.2, q, &zero, 1.0, None) - reference).abs() <= 1e-8 * reference);
}
