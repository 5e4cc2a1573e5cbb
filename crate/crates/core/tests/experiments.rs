use itrdma::channel::{generate_synthetic, ChannelSpec};
use itrdma::experiments::{
    ensemble_stats, estimate_half_strength_distance, focusing_profile, per_seed, profile_traces, sweep_displacement,
    sweep_speed, ExperimentConfig, HalfStrength,
};
use itrdma::link::{equivalent_channel, sinr};
use itrdma::precoder::PrecoderSet;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn itrdma_profile_lowers_side_lobes_and_spends_peak() {
    let cfg = ExperimentConfig::default();
    let traces = per_seed(&cfg.seeds, 0, |seed| {
        let h = cfg.channel.generate(seed)?;
        profile_traces(&h, 0, 50, cfg.epsilon)
    })
    .unwrap();
    let pick = |n: usize, f: fn(&itrdma::experiments::ProfileTrace) -> f64| -> Vec<f64> {
        traces
            .iter()
            .map(|ts| ts.iter().find(|t| t.user == 0 && t.iterations == n).map(f).unwrap())
            .collect()
    };
    let tr_side = median(pick(0, |t| t.max_side_lobe()));
    let it_side = median(pick(50, |t| t.max_side_lobe()));
    assert!(it_side <= tr_side, "ITRDMA side lobe {it_side} vs TR {tr_side}");
    let tr_peak = pick(0, |t| t.peak_amplitude());
    let it_peak = pick(50, |t| t.peak_amplitude());
    for (a, b) in it_peak.iter().zip(&tr_peak) {
        assert!(a <= b, "ITRDMA peak {a} above TR peak {b}");
    }
}

#[test]
fn profile_csv_covers_users_and_displacements() {
    let cfg = ExperimentConfig {
        displacement_grid: vec![0.0, 0.05],
        ..ExperimentConfig::default()
    };
    let p = focusing_profile(&cfg).unwrap();
    // two kinds at every user for d = 0, two kinds on the target for d > 0
    assert_eq!(p.traces.len(), 2 * 2 + 2);
    let csv = p.to_csv("x");
    assert!(csv.lines().any(|l| l.starts_with("0,ITRDMA(50),50,1,")));
    assert!(csv.lines().any(|l| l.starts_with("0.05,TR,0,0,")));
}

#[test]
fn sinr_decays_until_first_null() {
    let cfg = ExperimentConfig::default();
    let sweep = sweep_displacement(&cfg, 0).unwrap();
    let null = cfg.channel.carrier_wavelength / 2.0;
    for &n in &cfg.mobility_iterations {
        let curve: Vec<f64> = sweep
            .points
            .iter()
            .filter(|p| p.iterations == n && p.displacement <= null)
            .map(|p| p.mean_sinr_db)
            .collect();
        for w in curve.windows(2) {
            assert!(w[1] <= w[0], "kind {n}: {curve:?}");
        }
    }
}

#[test]
fn tr_suffices_at_large_speed_and_gap_shrinks_with_noise() {
    let cfg = ExperimentConfig::default();
    let sweep = sweep_speed(&cfg, 0).unwrap();
    let v_max = *cfg.speed_grid.last().unwrap();
    for &snr in &cfg.speed_snr_db {
        let tr = sweep.point(v_max, snr, 0).unwrap().mean_sinr_db;
        let it = sweep.point(v_max, snr, 50).unwrap().mean_sinr_db;
        assert!(tr >= it - 1.0, "snr {snr}: TR {tr} vs ITRDMA(50) {it}");
    }
    let gap = |snr| sweep.point(0.0, snr, 50).unwrap().mean_sinr_db - sweep.point(0.0, snr, 0).unwrap().mean_sinr_db;
    assert!(gap(2.0) < gap(10.0));
}

#[test]
fn half_strength_distance_scales_with_coherence_multiplier() {
    let cfg = ExperimentConfig {
        coherence_multiplier: 1.47,
        mobility_iterations: vec![0],
        ..ExperimentConfig::default()
    };
    let step = cfg.displacement_grid[1];
    match sweep_displacement(&cfg, 0).unwrap().half_strength().unwrap() {
        HalfStrength::Reached { distance } => assert!((distance - 0.0452 * 1.47).abs() <= step, "{distance}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn half_strength_not_reached_on_short_grid() {
    let cfg = ExperimentConfig {
        mobility_iterations: vec![0],
        displacement_grid: vec![0.0, 0.01, 0.02],
        ..ExperimentConfig::default()
    };
    let sweep = sweep_displacement(&cfg, 0).unwrap();
    assert!(matches!(sweep.half_strength().unwrap(), HalfStrength::NotReached { .. }));
    assert!(sweep.to_csv("x").contains("not reached"));
    let (d, a) = sweep.amplitude_curve(0);
    assert_eq!(estimate_half_strength_distance(&d, &a).unwrap(), sweep.half_strength().unwrap());
}

/// Mean TR SIR with flat Rayleigh taps follows `M / N` once side lobes on
/// the intended user count as interference.
#[test]
fn rayleigh_tr_sir_follows_antenna_to_user_ratio() {
    let mean_sir_db = |n_users: usize, n_antennas: usize| {
        let sirs = per_seed(&(1..=100).collect::<Vec<_>>(), 0, |seed| {
            let h = generate_synthetic(&ChannelSpec {
                n_users,
                n_antennas,
                n_taps: 256,
                decay_taps: f64::INFINITY,
                seed,
            })?;
            let eq = equivalent_channel(&h, &PrecoderSet::tr(&h)?)?;
            Ok((0..n_users).map(|i| sinr(&eq, i, 0.0).unwrap()).sum::<f64>() / n_users as f64)
        })
        .unwrap();
        ensemble_stats(&sirs).0
    };
    for (n, m) in [(1, 1), (2, 2), (2, 1), (2, 4)] {
        let want = 10.0 * (m as f64 / n as f64).log10();
        let got = mean_sir_db(n, m);
        assert!((got - want).abs() < 0.3, "N={n} M={m}: {got} dB vs {want} dB");
    }
}
