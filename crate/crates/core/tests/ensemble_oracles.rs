use std::f64::consts::PI;

use num_complex::Complex64;
use wtlab::dynamics::{IntegratorConfig, WaveState};
use wtlab::ensemble::{
    factorization_error, intensity_moment, ks_uniformity, pair_cumulant, phase_harmonic, run_ensemble,
    run_ensemble_with, Divergence, IntensityLaw, RpaSampler, StatsAccumulator, StatsLayout,
};
use wtlab::error::Error;
use wtlab::ks::ks_test;
use wtlab::modegrid::{Dispersion, InteractionModel, ModeSet, TriadTable};
use wtlab::rng;

fn table(lmax: u32) -> TriadTable {
    let ms = ModeSet::new(2.0 * PI, 1, lmax).unwrap();
    TriadTable::build(
        &ms,
        Dispersion::new(1.0, 1.5).unwrap(),
        &InteractionModel::Constant { v0: Complex64::new(1.0, 0.0) },
    )
}

#[test]
fn ks_null_rejection_rate_is_nominal() {
    let trials = 1000;
    let mut below = 0;
    for trial in 0..trials {
        let layout = StatsLayout {
            times: vec![0.0],
            hist_max: vec![1.0],
            joint_tuples: vec![],
            keep_phases: true,
        };
        let mut acc = StatsAccumulator::new(layout, 1);
        let mut r = rng::stream(2024, trial, 0);
        for _ in 0..200 {
            let theta = 2.0 * PI * rng::uniform(&mut r);
            acc.record(0, &WaveState::new(0.0, vec![Complex64::from_polar(1.0, theta)]));
        }
        if ks_uniformity(&acc, 0, 0).unwrap() < 0.05 {
            below += 1;
        }
    }
    let frac = below as f64 / trials as f64;
    assert!((frac - 0.05).abs() <= 0.02, "rejection fraction {frac}");
}

#[test]
fn product_measure_factorizes_within_null() {
    let s = RpaSampler::new(IntensityLaw::Exponential(vec![1.0, 2.0, 0.5]), 9).unwrap();
    let mut layout = StatsLayout::for_sampler(&s, vec![0.0]);
    layout.joint_tuples = vec![vec![0, 1], vec![0, 1, 2]];
    let mut acc = StatsAccumulator::new(layout, 3);
    for m in 0..20_000 {
        acc.record(0, &s.sample_initial(m));
    }
    for (tuple, bins) in [(0, 8), (1, 4)] {
        let r = factorization_error(&acc, 0, tuple, bins, 200, 3).unwrap();
        assert!(r.error <= r.null_q95, "tuple {tuple}: {} > {}", r.error, r.null_q95);
    }
}

#[test]
fn correlated_amplitudes_fail_factorization() {
    let s = RpaSampler::new(IntensityLaw::Exponential(vec![1.0, 1.0]), 9).unwrap();
    let mut layout = StatsLayout::for_sampler(&s, vec![0.0]);
    layout.joint_tuples = vec![vec![0, 1]];
    let mut acc = StatsAccumulator::new(layout, 2);
    for m in 0..20_000 {
        let mut st = s.sample_initial(m);
        // copy mode 0's intensity into mode 1
        st.a[1] = Complex64::from_polar(st.a[0].norm(), st.a[1].arg());
        acc.record(0, &st);
    }
    let r = factorization_error(&acc, 0, 0, 8, 200, 3).unwrap();
    assert!(r.error > 10.0 * r.null_q95, "{r:?}");
}

fn ensemble_with_threads(threads: usize) -> StatsAccumulator {
    let tbl = table(4);
    let s = RpaSampler::new(IntensityLaw::Exponential(vec![1.0; tbl.mode_count()]), 77).unwrap();
    let cfg = IntegratorConfig::new(0.02, 0.1).unwrap();
    let mut layout = StatsLayout::for_sampler(&s, vec![0.0, 1.0, 2.0]);
    layout.joint_tuples = vec![vec![0, 3]];
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| run_ensemble(&s, &tbl, &cfg, &layout, 300).unwrap())
}

#[test]
fn accumulator_is_thread_count_independent() {
    let a = ensemble_with_threads(1);
    let b = ensemble_with_threads(8);
    assert_eq!(a, b);
    assert_eq!(a.members(), 300);
}

#[test]
fn linear_dynamics_leave_statistics_unchanged() {
    let tbl = table(3);
    let s = RpaSampler::new(IntensityLaw::Exponential(vec![1.5; tbl.mode_count()]), 5).unwrap();
    let cfg = IntegratorConfig::new(0.05, 0.0).unwrap();
    let mut layout = StatsLayout::for_sampler(&s, vec![0.0, 3.0, 10.0]);
    layout.joint_tuples = vec![vec![0, 1]];
    let acc = run_ensemble(&s, &tbl, &cfg, &layout, 500).unwrap();
    for k in 1..3 {
        let (a, b) = (&acc.snapshots[0], &acc.snapshots[k]);
        assert_eq!(a.psi, b.psi);
        assert_eq!(a.s_pow, b.s_pow);
        assert_eq!(a.pairs, b.pairs);
        assert_eq!(a.hist, b.hist);
        assert_eq!(a.joint, b.joint);
        assert_eq!(a.phases, b.phases);
        for j in 0..tbl.mode_count() {
            assert_eq!(phase_harmonic(&acc, 0, j, 1).unwrap(), phase_harmonic(&acc, k, j, 1).unwrap());
            assert_eq!(intensity_moment(&acc, 0, j, 2).unwrap(), intensity_moment(&acc, k, j, 2).unwrap());
        }
        assert_eq!(pair_cumulant(&acc, 0, 0, 1).unwrap(), pair_cumulant(&acc, k, 0, 1).unwrap());
    }
}

#[test]
fn exponential_draws_pass_ks_against_their_law() {
    let n = 1.7;
    let s = RpaSampler::new(IntensityLaw::Exponential(vec![n]), 11).unwrap();
    let draws: Vec<f64> = (0..100_000).map(|m| s.sample_initial(m).intensity(0)).collect();
    let p = ks_test(&draws, |x| 1.0 - (-x / n).exp());
    assert!(p > 0.01, "p = {p}");
    // and fails against a law with the wrong mean
    let q = ks_test(&draws, |x| 1.0 - (-x / (1.05 * n)).exp());
    assert!(q < 1e-6, "q = {q}");
}

#[test]
fn initial_phases_are_uniform_to_sampling_error() {
    let tbl = table(3);
    let s = RpaSampler::new(IntensityLaw::Exponential(vec![1.0; tbl.mode_count()]), 21).unwrap();
    let cfg = IntegratorConfig::new(0.05, 0.0).unwrap();
    let layout = StatsLayout::for_sampler(&s, vec![0.0]);
    let members = 20_000u64;
    let acc = run_ensemble(&s, &tbl, &cfg, &layout, members).unwrap();
    for j in 0..tbl.mode_count() {
        for mu in 1..=3 {
            let e = phase_harmonic(&acc, 0, j, mu).unwrap();
            assert!(e.value.norm() < 4.0 / (members as f64).sqrt(), "j {j} mu {mu}: {}", e.value);
        }
        let c = pair_cumulant(&acc, 0, j, (j + 1) % tbl.mode_count()).unwrap();
        assert!(c.value.abs() < 4.0 * c.stderr, "{c:?}");
    }
}

#[test]
fn diverging_members_are_excluded_or_abort() {
    // member 34 of this ensemble hits an explosive triad near t = 21
    let tbl = table(8);
    let s = RpaSampler::new(IntensityLaw::Exponential(vec![1.0; 16]), 2025).unwrap();
    let cfg = IntegratorConfig::new(0.02, 0.1).unwrap();
    let layout = StatsLayout::for_sampler(&s, vec![0.0, 10.0, 22.0]);
    let acc = run_ensemble_with(&s, &tbl, &cfg, &layout, 40, Divergence::Exclude).unwrap();
    assert!(acc.excluded.contains(&34), "{:?}", acc.excluded);
    assert!(acc.excluded.windows(2).all(|w| w[0] < w[1]));
    for snap in &acc.snapshots {
        assert_eq!(snap.count + acc.excluded.len() as u64, 40);
    }
    match run_ensemble(&s, &tbl, &cfg, &layout, 40) {
        Err(Error::Member { member, source }) => {
            assert!(acc.excluded.contains(&member));
            assert!(matches!(*source, Error::BlowUp { .. }));
        }
        other => panic!("expected a member failure, got {:?}", other.map(|a| a.members())),
    }
}
