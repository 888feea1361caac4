use std::f64::consts::PI;

use num_complex::Complex64;
use wtlab::dynamics::{hamiltonian, integrate, momentum, rhs, IntegratorConfig, Rk4, WaveState};
use wtlab::modegrid::{symmetric_coefficient, Dispersion, InteractionModel, ModeSet, TriadTable};

/// O(N²) evaluation of the equations of motion straight from the ordered
/// double sum, with coefficients and mismatches recomputed from scratch.
fn brute_force_rhs(
    ms: &ModeSet,
    disp: &Dispersion,
    model: &InteractionModel,
    a: &[Complex64],
    t: f64,
    eps: f64,
) -> Vec<Complex64> {
    let n = ms.len();
    let w: Vec<f64> = (0..n).map(|i| disp.omega(ms.wavenumber(i))).collect();
    let idx = ms.indices();
    let add = |x: [i32; 2], y: [i32; 2]| [x[0] + y[0], x[1] + y[1]];
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for l in 0..n {
        let mut acc = Complex64::new(0.0, 0.0);
        for m in 0..n {
            for nn in 0..n {
                if idx[l] == add(idx[m], idx[nn]) {
                    let v = symmetric_coefficient(model, ms.wavevector(l), ms.wavevector(m), ms.wavevector(nn));
                    let om = w[l] - w[m] - w[nn];
                    acc += v * a[m] * a[nn] * Complex64::from_polar(1.0, om * t);
                }
                if idx[m] == add(idx[l], idx[nn]) {
                    let v = symmetric_coefficient(model, ms.wavevector(m), ms.wavevector(l), ms.wavevector(nn));
                    let om = w[m] - w[l] - w[nn];
                    acc += 2.0 * v.conj() * a[nn].conj() * a[m] * Complex64::from_polar(1.0, -om * t);
                }
            }
        }
        out[l] = Complex64::new(0.0, -eps) * acc;
    }
    out
}

/// Small deterministic generator so the oracle does not share the crate's RNG.
struct Lcg(u64);
impl Lcg {
    fn next(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }
    fn complex(&mut self) -> Complex64 {
        Complex64::new(2.0 * self.next() - 1.0, 2.0 * self.next() - 1.0)
    }
}

fn setup(d: usize, lmax: u32, alpha: f64, model: InteractionModel) -> (ModeSet, Dispersion, TriadTable) {
    let ms = ModeSet::new(2.0 * PI, d, lmax).unwrap();
    let disp = Dispersion::new(1.0, alpha).unwrap();
    let tbl = TriadTable::build(&ms, disp, &model);
    (ms, disp, tbl)
}

fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum::<f64>().sqrt();
    num / den
}

#[test]
fn rhs_matches_brute_force() {
    let models = [
        InteractionModel::Constant { v0: Complex64::new(1.0, 0.0) },
        InteractionModel::PowerLaw { v0: Complex64::new(0.3, -0.8), beta: 0.75 },
    ];
    let mut rng = Lcg(7);
    for model in models {
        for &(d, lmax) in &[(1, 4), (1, 32), (2, 1), (2, 2), (2, 3)] {
            let (ms, disp, tbl) = setup(d, lmax, 1.5, model);
            assert!(ms.len() <= 64);
            for _ in 0..3 {
                let a: Vec<Complex64> = (0..ms.len()).map(|_| rng.complex()).collect();
                let t = 10.0 * rng.next();
                let st = WaveState::new(t, a.clone());
                let fast = rhs(&st, &tbl, 0.37).unwrap();
                let slow = brute_force_rhs(&ms, &disp, &model, &a, t, 0.37);
                let e = rel_err(&fast, &slow);
                assert!(e < 1e-13, "d={d} lmax={lmax}: relative error {e}");
            }
        }
    }
}

#[test]
fn table_is_exhaustive() {
    for &(d, lmax) in &[(1, 5), (1, 32), (2, 2), (2, 3)] {
        let (ms, _, tbl) = setup(d, lmax, 1.5, InteractionModel::Constant { v0: Complex64::new(1.0, 0.0) });
        let idx = ms.indices();
        let mut expected = Vec::new();
        for m in 0..ms.len() {
            for n in m..ms.len() {
                let s = [idx[m][0] + idx[n][0], idx[m][1] + idx[n][1]];
                if let Some(l) = idx.iter().position(|x| *x == s) {
                    expected.push((l, m, n));
                }
            }
        }
        let mut got: Vec<_> = tbl.entries().iter().map(|t| (t.l, t.m, t.n)).collect();
        expected.sort();
        got.sort();
        assert_eq!(got, expected);
    }
}

#[test]
fn coefficients_symmetric_in_lower_slots() {
    struct Lopsided;
    impl wtlab::modegrid::Interaction for Lopsided {
        fn raw(&self, kl: [f64; 2], km: [f64; 2], kn: [f64; 2]) -> Complex64 {
            Complex64::new(kl[0] + 2.0 * km[0] - kn[1], km[1] * kn[0])
        }
    }
    let ms = ModeSet::new(3.0, 2, 2).unwrap();
    let tbl = TriadTable::build(&ms, Dispersion::new(1.0, 1.5).unwrap(), &Lopsided);
    for t in tbl.entries() {
        let swapped = symmetric_coefficient(&Lopsided, ms.wavevector(t.l), ms.wavevector(t.n), ms.wavevector(t.m));
        assert_eq!(t.v, swapped);
    }
}

fn random_state(n: usize, amp: f64, seed: u64) -> WaveState {
    let mut rng = Lcg(seed);
    WaveState::new(
        0.0,
        (0..n).map(|_| Complex64::from_polar(amp, 2.0 * PI * rng.next())).collect(),
    )
}

fn conservation_drift(h: f64) -> (f64, f64) {
    let (ms, _, tbl) = setup(1, 4, 1.5, InteractionModel::Constant { v0: Complex64::new(1.0, 0.0) });
    let eps = 0.1;
    let st = random_state(ms.len(), 1.0, 3);
    let cfg = IntegratorConfig::new(h, eps).unwrap();
    let t_end = 100.0 / tbl.omega_max();
    let out = integrate(&st, &tbl, &cfg, t_end).unwrap();
    let h0 = hamiltonian(&st, &tbl, eps);
    let h1 = hamiltonian(&out, &tbl, eps);
    let p0 = momentum(&st, &ms)[0];
    let p1 = momentum(&out, &ms)[0];
    let scale: f64 = st.a.iter().map(|z| z.norm_sqr()).sum::<f64>() * ms.k_max();
    ((h1 - h0).abs() / h0.abs(), (p1 - p0).abs() / scale)
}

#[test]
fn energy_and_momentum_conserved() {
    let (dh, dp) = conservation_drift(0.01);
    assert!(dh < 1e-8, "energy drift {dh}");
    assert!(dp < 1e-8, "momentum drift {dp}");
    let (dh2, _) = conservation_drift(0.005);
    assert!(dh / dh2 > 10.0, "drift ratio {}", dh / dh2);
}

#[test]
fn fourth_order_convergence() {
    let (_, _, tbl) = setup(1, 4, 1.5, InteractionModel::Constant { v0: Complex64::new(1.0, 0.0) });
    let st = random_state(tbl.mode_count(), 1.0, 11);
    let eps = 0.2;
    let t_end = 3.0;
    let run = |h: f64| integrate(&st, &tbl, &IntegratorConfig::new(h, eps).unwrap(), t_end).unwrap();
    let h = 0.04;
    let reference = run(h / 8.0);
    let e1 = rel_err(&run(h).a, &reference.a);
    let e2 = rel_err(&run(h / 2.0).a, &reference.a);
    let ratio = e1 / e2;
    assert!((12.0..20.0).contains(&ratio), "error ratio {ratio}");
}

#[test]
fn time_reversal_recovers_initial_state() {
    let (_, _, tbl) = setup(1, 4, 1.5, InteractionModel::Constant { v0: Complex64::new(1.0, 0.0) });
    let st = random_state(tbl.mode_count(), 1.0, 5);
    let eps = 0.1;
    let h = 0.01;
    let steps = 500;
    let mut stepper = Rk4::new(&tbl, eps);
    let mut a = st.a.clone();
    for i in 0..steps {
        stepper.step(i as f64 * h, &mut a, h);
    }
    for i in (1..=steps).rev() {
        stepper.step(i as f64 * h, &mut a, -h);
    }
    let e = rel_err(&a, &st.a);
    assert!(e < 1e-8, "reversal error {e}");
}

#[test]
fn integration_is_deterministic() {
    let (_, _, tbl) = setup(1, 4, 1.5, InteractionModel::Constant { v0: Complex64::new(1.0, 0.0) });
    let st = random_state(tbl.mode_count(), 1.0, 9);
    let cfg = IntegratorConfig::new(0.01, 0.1).unwrap();
    let a = integrate(&st, &tbl, &cfg, 5.123).unwrap();
    let b = integrate(&st, &tbl, &cfg, 5.123).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.t, 5.123);
}
