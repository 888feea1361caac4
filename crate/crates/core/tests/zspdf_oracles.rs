use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;
use wtlab::kinetics::kinetic_coeffs;
use wtlab::modegrid::{broadened_delta, Dispersion, InteractionModel, ModeSet, TriadTable};
use wtlab::zspdf::{zs_flux, zs_step, Closure, JointPdfGrid, ZsOperator};

fn table(lmax: u32, alpha: f64) -> TriadTable {
    let ms = ModeSet::new(2.0 * PI, 1, lmax).unwrap();
    TriadTable::build(
        &ms,
        Dispersion::new(1.0, alpha).unwrap(),
        &InteractionModel::Constant { v0: Complex64::new(1.0, 0.0) },
    )
}

fn positions(tbl: &TriadTable, ks: &[i32]) -> Vec<usize> {
    ks.iter().map(|&k| tbl.modes().position([k, 0]).unwrap()).collect()
}

fn max_ratio(g: &JointPdfGrid, tbl: &TriadTable) -> f64 {
    g.modes
        .iter()
        .map(|&j| {
            let f = zs_flux(g, j, tbl, 0.1, 20.0).unwrap();
            f.max_abs() / f.max_scale()
        })
        .fold(0.0, f64::max)
}

#[test]
fn thermodynamic_product_is_stationary() {
    let tbl = table(3, 1.0);
    let modes = positions(&tbl, &[1, 2, 3]);
    for cells in [16, 32, 64] {
        let g = JointPdfGrid::thermodynamic(modes.clone(), cells, 12.0, &tbl, 1.0).unwrap();
        let r = max_ratio(&g, &tbl);
        assert!(r < 1e-8, "cells {cells}: {r}");
        let op = ZsOperator::new(&g, &tbl, 0.1, 20.0, &Closure::Drop).unwrap();
        let rate = op.rate(&g).unwrap();
        let pmax = g.p.iter().fold(0.0f64, |a, b| a.max(*b));
        let rmax = rate.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        assert!(rmax < 1e-12 * pmax / op.cfl_limit(), "cells {cells}: rate {rmax}");
    }
}

#[test]
fn kz_like_product_carries_flux_under_refinement() {
    let tbl = table(3, 1.0);
    let modes = positions(&tbl, &[1, 2, 3]);
    let n: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|w| w.powf(-4.0 / 3.0)).collect();
    let r: Vec<f64> = [16, 32, 64]
        .iter()
        .map(|&c| {
            let g = JointPdfGrid::exponential_product(modes.clone(), c, 12.0, &n).unwrap();
            max_ratio(&g, &tbl)
        })
        .collect();
    assert!(r.iter().all(|x| *x > 0.05), "{r:?}");
    assert!((r[2] - r[1]).abs() < 0.1 * r[2], "{r:?}");
}

/// Kinetic right-hand side for the modes of `g` at its marginal means,
/// with outside modes held at `outside`.
fn kinetic_rates(g: &JointPdfGrid, tbl: &TriadTable, outside: &[f64]) -> Vec<f64> {
    let mut n = outside.to_vec();
    for (a, &j) in g.modes.iter().enumerate() {
        n[j] = g.mean(a);
    }
    let c = kinetic_coeffs(&n, tbl, 0.1, 20.0).unwrap();
    let rhs = c.rhs(&n);
    g.modes.iter().map(|&j| rhs[j]).collect()
}

fn zs_mean_rates(g: &JointPdfGrid, op: &ZsOperator) -> Vec<f64> {
    let r = op.rate(g).unwrap();
    let mut h = g.clone();
    h.p = r;
    (0..g.dims()).map(|a| h.mean(a)).collect()
}

#[test]
fn first_moments_follow_the_kinetic_equation() {
    let tbl = table(3, 1.0);
    let modes = positions(&tbl, &[1, 2, 3]);
    let n = [1.0, 0.8, 0.5];
    let closed = tbl.cluster(&modes);
    let err = |cells: usize| {
        let g = JointPdfGrid::exponential_product(modes.clone(), cells, 12.0, &n).unwrap();
        let op = ZsOperator::new(&g, &tbl, 0.1, 20.0, &Closure::Drop).unwrap();
        let zs = zs_mean_rates(&g, &op);
        let kin = kinetic_rates(&g, &closed, &vec![0.0; tbl.mode_count()]);
        let scale = kin.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        zs.iter().zip(&kin).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale
    };
    let (e1, e2) = (err(32), err(64));
    // second-order convergence; the residual sits at the s = 0 edges
    assert!(e2 < 0.03, "{e1} {e2}");
    assert!(e1 / e2 > 3.0, "{e1} {e2}");
}

#[test]
fn mean_field_closure_matches_full_kinetics() {
    let tbl = table(3, 1.0);
    let modes = positions(&tbl, &[1, 2]);
    let mut outside = vec![0.0; tbl.mode_count()];
    for (j, v) in outside.iter_mut().enumerate() {
        *v = 0.3 + 0.1 * j as f64;
    }
    let err = |cells: usize| {
        let g = JointPdfGrid::exponential_product(modes.clone(), cells, 14.0, &[1.0, 0.8]).unwrap();
        let op = ZsOperator::new(&g, &tbl, 0.1, 20.0, &Closure::MeanField(outside.clone())).unwrap();
        let zs = zs_mean_rates(&g, &op);
        let kin = kinetic_rates(&g, &tbl, &outside);
        let scale = kin.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        zs.iter().zip(&kin).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale
    };
    let (e1, e2) = (err(32), err(64));
    assert!(e2 < 0.03 && e1 / e2 > 3.0, "{e1} {e2}");
}

/// Largest deviation of the marginalized axis-0 flux from the one-mode flux,
/// relative to the one-mode flux's size.
fn marginal_mismatch(cells: usize) -> f64 {
    // s_u carries a non-exponential law; the summands are exponential
    let tbl = table(3, 1.0);
    let modes = positions(&tbl, &[3, 1, 2]);
    let (n1, n2) = (0.9, 0.6);
    let closed = tbl.cluster(&modes);
    let g = JointPdfGrid::from_fn(modes.clone(), cells, 12.0, |s| {
        s[0] * (-s[0] / 1.2).exp() * (-s[1] / n1).exp() * (-s[2] / n2).exp()
    })
    .unwrap();
    // only the (3; 1, 2) channel touches axis 0
    let f = zs_flux(&g, modes[0], &tbl, 0.1, 20.0).unwrap();
    let marg = f.marginal(g.ds);
    let mut n = vec![0.0; tbl.mode_count()];
    n[modes[1]] = g.mean(1);
    n[modes[2]] = g.mean(2);
    let c = kinetic_coeffs(&n, &closed, 0.1, 20.0).unwrap();
    let (eta, gamma) = (c.eta[modes[0]], c.gamma[modes[0]]);
    let pu = g.marginal(0);
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for k in 1..cells {
        let s = k as f64 * g.ds;
        let pf = 0.5 * (pu[k - 1] + pu[k]);
        let dp = (pu[k] - pu[k - 1]) / g.ds;
        let one = -s * (gamma * pf + eta * dp);
        worst = worst.max((marg[k] - one).abs());
        scale = scale.max(one.abs());
    }
    worst / scale
}

#[test]
fn marginal_flux_reproduces_one_mode_flux() {
    let (e1, e2) = (marginal_mismatch(32), marginal_mismatch(64));
    assert!(e2 < 0.03 && e1 / e2 > 3.0, "{e1} {e2}");
}

#[test]
fn flux_matches_hand_evaluation_on_one_face() {
    // cluster {1, 2, 3}: channels (2; 1, 1) and (3; 1, 2); flux of mode 1
    let tbl = table(3, 1.5);
    let modes = positions(&tbl, &[1, 2, 3]);
    let cells = 6;
    let ds = 0.5;
    let g = JointPdfGrid::from_fn(modes.clone(), cells, ds * cells as f64, |s| {
        (1.0 + s[0] * s[1] + 0.3 * s[2] * s[2]) * (-(s[0] + s[1] + s[2])).exp()
    })
    .unwrap();
    let p = |i: i64, j: i64, k: i64| g.p[(i * 36 + j * 6 + k) as usize];
    let w = tbl.omega();
    let (o1, o2, o3) = (w[modes[0]], w[modes[1]], w[modes[2]]);
    let eps = 0.2;
    let tb = 3.0;
    let k_deg = 4.0 * PI * eps * eps * broadened_delta(o2 - 2.0 * o1, tb);
    let k_full = 16.0 * PI * eps * eps * broadened_delta(o3 - o1 - o2, tb);
    // face between cells (2,2,3) and (3,2,3) along axis 0
    let (s1, s2, s3) = (3.0 * ds, 2.5 * ds, 3.5 * ds);
    // directional differences along e = (−2, 1, 0) and (−1, −1, 1), averaged over both cells
    let d_deg = |i: i64| (p(i - 2, 3, 3) - p(i + 2, 1, 3)) / (2.0 * ds);
    let d_full = |i: i64| (p(i - 1, 1, 4) - p(i + 1, 3, 2)) / (2.0 * ds);
    let g_deg = 0.5 * (d_deg(2) + d_deg(3));
    let g_full = 0.5 * (d_full(2) + d_full(3));
    let want = -0.5 * (-2.0) * k_deg * s2 * s1 * s1 * g_deg - 0.5 * (-1.0) * k_full * s3 * s1 * s2 * g_full;
    let f = zs_flux(&g, modes[0], &tbl, eps, tb).unwrap();
    // face index (3, 2, 3) in a 7 × 6 × 6 layout
    let got = f.values[3 * 36 + 2 * 6 + 3];
    assert!((got - want).abs() < 1e-12 * want.abs(), "{got} vs {want}");
}

#[test]
fn thermodynamic_covariance_rate_vanishes() {
    let tbl = table(3, 1.0);
    let modes = positions(&tbl, &[1, 2, 3]);
    let g = JointPdfGrid::thermodynamic(modes, 32, 12.0, &tbl, 1.0).unwrap();
    let op = ZsOperator::new(&g, &tbl, 0.1, 20.0, &Closure::Drop).unwrap();
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        assert!(op.covariance_rate(&g, a, b).unwrap().abs() < 1e-14);
    }
}

#[test]
fn step_rejects_unstable_dt() {
    let tbl = table(3, 1.0);
    let modes = positions(&tbl, &[1, 2, 3]);
    let g = JointPdfGrid::exponential_product(modes, 16, 12.0, &[1.0, 0.5, 0.3]).unwrap();
    let op = ZsOperator::new(&g, &tbl, 0.1, 20.0, &Closure::Drop).unwrap();
    assert!(zs_step(&g, &tbl, 0.1, 20.0, 1.01 * op.cfl_limit()).is_err());
    assert!(zs_step(&g, &tbl, 0.1, 20.0, op.cfl_limit()).is_ok());
}

#[test]
fn evolution_is_thread_count_independent() {
    let tbl = table(3, 1.0);
    let modes = positions(&tbl, &[1, 2, 3]);
    let g = JointPdfGrid::exponential_product(modes, 24, 12.0, &[1.0, 0.5, 0.3]).unwrap();
    let op = ZsOperator::new(&g, &tbl, 0.1, 20.0, &Closure::Drop).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| op.evolve(&g, 50.0 * op.cfl_limit(), op.cfl_limit(), 10).unwrap())
    };
    assert_eq!(run(1), run(4));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn steps_conserve_mass_and_positivity(seed in 0u64..10_000, frac in 0.0f64..1.0, mf in any::<bool>()) {
        let tbl = table(3, 1.5);
        let modes = positions(&tbl, &[1, 2, 3]);
        let s = std::cell::Cell::new(seed);
        let g = JointPdfGrid::from_fn(modes, 12, 8.0, |_| {
            s.set(s.get().wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407));
            (s.get() >> 11) as f64 / (1u64 << 53) as f64
        }).unwrap();
        let closure = if mf { Closure::MeanField(vec![0.7; tbl.mode_count()]) } else { Closure::Drop };
        let op = ZsOperator::new(&g, &tbl, 0.3, 5.0, &closure).unwrap();
        let h = op.step(&g, frac * op.cfl_limit()).unwrap();
        prop_assert!((h.mass() - g.mass()).abs() < 1e-12);
        prop_assert!(h.p.iter().all(|x| *x >= 0.0));
    }
}
