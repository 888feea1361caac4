//! Direct integration of the three-wave equations in the interaction
//! representation,
//!
//! ```text
//! i da_l/dt = ε Σ_{m,n} ( V^l_{mn} a_m a_n e^{iΩ^l_{mn} t} δ^l_{m+n}
//!                         + 2 conj(V^m_{ln}) conj(a_n) a_m e^{-iΩ^m_{ln} t} δ^m_{l+n} ),
//! ```
//!
//! with classical fixed-step RK4 and the oscillatory factors evaluated at the
//! exact stage times.

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::modegrid::{ModeSet, TriadTable};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Amplitudes above `BLOWUP_FACTOR` times the initial rms abort integration.
pub const BLOWUP_FACTOR: f64 = 1e6;

/// Largest admissible `h · ω_max`.
pub const MAX_PHASE_STEP: f64 = 0.5;

/// Complex amplitudes at one time instant, aligned with the mode ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveState {
    pub t: f64,
    pub a: Vec<Complex64>,
}

impl WaveState {
    pub fn new(t: f64, a: Vec<Complex64>) -> Self {
        Self { t, a }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(0.0, vec![Complex64::new(0.0, 0.0); n])
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn intensity(&self, j: usize) -> f64 {
        self.a[j].norm_sqr()
    }

    /// Phase factor `ψ_j = a_j / |a_j|`; `None` for a vanishing amplitude.
    pub fn phase_factor(&self, j: usize) -> Option<Complex64> {
        let r = self.a[j].norm();
        (r > 0.0).then(|| self.a[j] / r)
    }

    pub fn rms(&self) -> f64 {
        if self.a.is_empty() {
            return 0.0;
        }
        (self.a.iter().map(|z| z.norm_sqr()).sum::<f64>() / self.a.len() as f64).sqrt()
    }

    fn check_len(&self, tbl: &TriadTable) -> Result<()> {
        if self.a.len() != tbl.mode_count() {
            return Err(Error::DimensionMismatch {
                expected: tbl.mode_count(),
                got: self.a.len(),
            });
        }
        Ok(())
    }
}

/// Fixed-step RK4 settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub h: f64,
    pub epsilon: f64,
}

impl IntegratorConfig {
    pub fn new(h: f64, epsilon: f64) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(invalid("dynamics.h", format!("must be positive, got {h}")));
        }
        if !epsilon.is_finite() {
            return Err(invalid("dynamics.epsilon", "must be finite"));
        }
        Ok(Self { h, epsilon })
    }

    /// Checks `h · ω_max ≤ 0.5` for the given table.
    pub fn validate_for(&self, tbl: &TriadTable) -> Result<()> {
        let wmax = tbl.omega_max();
        if self.h * wmax > MAX_PHASE_STEP {
            return Err(invalid(
                "dynamics.h",
                format!(
                    "h·ω_max = {} exceeds {MAX_PHASE_STEP} (ω_max = {wmax})",
                    self.h * wmax
                ),
            ));
        }
        Ok(())
    }
}

/// `exp(i x)`.
#[inline]
fn cis(x: f64) -> Complex64 {
    let (s, c) = x.sin_cos();
    Complex64::new(c, s)
}

/// Accumulates `da/dt` given the per-triad factors `e^{iΩt}`.
fn rhs_with_phases(
    a: &[Complex64],
    tbl: &TriadTable,
    phases: &[Complex64],
    epsilon: f64,
    out: &mut [Complex64],
) {
    out.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
    for (tr, &p) in tbl.entries().iter().zip(phases) {
        let q = tr.v * p;
        let qc = q.conj();
        let (al, am, an) = (a[tr.l], a[tr.m], a[tr.n]);
        if tr.m == tr.n {
            out[tr.l] += q * am * am;
            out[tr.m] += 2.0 * qc * al * am.conj();
        } else {
            out[tr.l] += 2.0 * q * am * an;
            out[tr.m] += 2.0 * qc * al * an.conj();
            out[tr.n] += 2.0 * qc * al * am.conj();
        }
    }
    let scale = -I * epsilon;
    out.iter_mut().for_each(|z| *z *= scale);
}

/// Right-hand side `da/dt` at `state.t`.
pub fn rhs(state: &WaveState, tbl: &TriadTable, epsilon: f64) -> Result<Vec<Complex64>> {
    state.check_len(tbl)?;
    let phases: Vec<Complex64> = tbl
        .entries()
        .iter()
        .map(|tr| cis(tr.mismatch * state.t))
        .collect();
    let mut out = vec![Complex64::new(0.0, 0.0); state.len()];
    rhs_with_phases(&state.a, tbl, &phases, epsilon, &mut out);
    Ok(out)
}

/// Reusable RK4 stepper with scratch buffers and cached stage rotations.
pub struct Rk4<'a> {
    tbl: &'a TriadTable,
    epsilon: f64,
    cached_h: f64,
    rot_half: Vec<Complex64>,
    rot_full: Vec<Complex64>,
    p0: Vec<Complex64>,
    p_half: Vec<Complex64>,
    p_full: Vec<Complex64>,
    k: [Vec<Complex64>; 4],
    tmp: Vec<Complex64>,
}

impl<'a> Rk4<'a> {
    pub fn new(tbl: &'a TriadTable, epsilon: f64) -> Self {
        let nt = tbl.len();
        let n = tbl.mode_count();
        let zero = Complex64::new(0.0, 0.0);
        Self {
            tbl,
            epsilon,
            cached_h: f64::NAN,
            rot_half: vec![zero; nt],
            rot_full: vec![zero; nt],
            p0: vec![zero; nt],
            p_half: vec![zero; nt],
            p_full: vec![zero; nt],
            k: std::array::from_fn(|_| vec![zero; n]),
            tmp: vec![zero; n],
        }
    }

    fn prepare(&mut self, t: f64, h: f64) {
        if h != self.cached_h {
            for (i, tr) in self.tbl.entries().iter().enumerate() {
                self.rot_half[i] = cis(tr.mismatch * 0.5 * h);
                self.rot_full[i] = cis(tr.mismatch * h);
            }
            self.cached_h = h;
        }
        for (i, tr) in self.tbl.entries().iter().enumerate() {
            let p = cis(tr.mismatch * t);
            self.p0[i] = p;
            self.p_half[i] = p * self.rot_half[i];
            self.p_full[i] = p * self.rot_full[i];
        }
    }

    /// Advances `a` from `t` to `t + h` (any sign of `h`).
    pub fn step(&mut self, t: f64, a: &mut [Complex64], h: f64) {
        self.prepare(t, h);
        let eps = self.epsilon;
        let [k1, k2, k3, k4] = &mut self.k;
        rhs_with_phases(a, self.tbl, &self.p0, eps, k1);
        for ((x, &ai), &ki) in self.tmp.iter_mut().zip(a.iter()).zip(k1.iter()) {
            *x = ai + 0.5 * h * ki;
        }
        rhs_with_phases(&self.tmp, self.tbl, &self.p_half, eps, k2);
        for ((x, &ai), &ki) in self.tmp.iter_mut().zip(a.iter()).zip(k2.iter()) {
            *x = ai + 0.5 * h * ki;
        }
        rhs_with_phases(&self.tmp, self.tbl, &self.p_half, eps, k3);
        for ((x, &ai), &ki) in self.tmp.iter_mut().zip(a.iter()).zip(k3.iter()) {
            *x = ai + h * ki;
        }
        rhs_with_phases(&self.tmp, self.tbl, &self.p_full, eps, k4);
        let w = h / 6.0;
        for i in 0..a.len() {
            a[i] += w * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
}

/// Integrates `state` to `t_end` with fixed steps `cfg.h` and a final partial
/// step when `t_end − t` is not a multiple of `h`.
pub fn integrate(
    state: &WaveState,
    tbl: &TriadTable,
    cfg: &IntegratorConfig,
    t_end: f64,
) -> Result<WaveState> {
    let mut out = state.clone();
    let mut stepper = Rk4::new(tbl, cfg.epsilon);
    advance(&mut stepper, &mut out, cfg.h, t_end, state.rms())?;
    Ok(out)
}

/// Advances in place with an existing stepper; `rms0` sets the blow-up threshold.
pub fn advance(
    stepper: &mut Rk4<'_>,
    state: &mut WaveState,
    h: f64,
    t_end: f64,
    rms0: f64,
) -> Result<()> {
    state.check_len(stepper.tbl)?;
    if t_end < state.t {
        return Err(invalid(
            "t_end",
            format!("{t_end} precedes the state time {}", state.t),
        ));
    }
    if stepper.epsilon == 0.0 {
        state.t = t_end;
        return Ok(());
    }
    let limit = BLOWUP_FACTOR * rms0;
    let t0 = state.t;
    let span = t_end - t0;
    let full = (span / h).floor() as u64;
    // Times are t0 + i·h rather than accumulated sums so the step grid does not drift.
    for i in 0..full {
        let t = t0 + i as f64 * h;
        stepper.step(t, &mut state.a, h);
        check_growth(&state.a, limit, t + h)?;
    }
    let t_last = t0 + full as f64 * h;
    let rest = t_end - t_last;
    if rest > 1e-12 * h {
        stepper.step(t_last, &mut state.a, rest);
        check_growth(&state.a, limit, t_end)?;
    }
    state.t = t_end;
    Ok(())
}

fn check_growth(a: &[Complex64], limit: f64, t: f64) -> Result<()> {
    let bad = a.iter().any(|z| {
        let r = z.norm();
        !r.is_finite() || (limit > 0.0 && r > limit)
    });
    if bad {
        return Err(Error::BlowUp { t });
    }
    Ok(())
}

/// Lab-frame energy `Σ ω|a|² + ε Σ_{ordered m,n} (V ā_l a_m a_n e^{iΩt} + c.c.)`.
pub fn hamiltonian(state: &WaveState, tbl: &TriadTable, epsilon: f64) -> f64 {
    let quad: f64 = state
        .a
        .iter()
        .zip(tbl.omega())
        .map(|(z, w)| w * z.norm_sqr())
        .sum();
    let cubic: f64 = tbl
        .entries()
        .iter()
        .map(|tr| {
            let z = tr.v * state.a[tr.l].conj() * state.a[tr.m] * state.a[tr.n] * cis(tr.mismatch * state.t);
            2.0 * tr.multiplicity() * z.re
        })
        .sum();
    quad + epsilon * cubic
}

/// Momentum `Σ k_l |a_l|²`, one component per spatial dimension.
pub fn momentum(state: &WaveState, modes: &ModeSet) -> Vec<f64> {
    let mut p = vec![0.0; modes.dim()];
    for (i, z) in state.a.iter().enumerate() {
        let k = modes.wavevector(i);
        for (c, pc) in p.iter_mut().enumerate() {
            *pc += k[c] * z.norm_sqr();
        }
    }
    p
}
