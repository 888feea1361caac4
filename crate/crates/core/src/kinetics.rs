//! Kinetic closure: the coefficients η_j and γ_j on broadened resonance
//! manifolds, the kinetic equation `ṅ = η − γn`, and the one-mode
//! amplitude PDF equation `∂_t P + ∂_s F = 0` with `F = −s(γP + η ∂_s P)`.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::modegrid::{broadened_delta, TriadTable};
use crate::quad::gauss_legendre;

/// Waveaction spectrum at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumState {
    pub t: f64,
    pub n: Vec<f64>,
}

impl SpectrumState {
    pub fn new(t: f64, n: Vec<f64>) -> Result<Self> {
        if n.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(invalid("n", "spectrum must be finite and non-negative"));
        }
        Ok(Self { t, n })
    }

    /// Rayleigh-Jeans spectrum `n_j = temperature / ω_j`.
    pub fn thermodynamic(tbl: &TriadTable, temperature: f64) -> Result<Self> {
        Self::new(0.0, tbl.omega().iter().map(|w| temperature / w).collect())
    }

    /// `Σ ω_j n_j`.
    pub fn energy(&self, tbl: &TriadTable) -> f64 {
        self.n.iter().zip(tbl.omega()).map(|(n, w)| n * w).sum()
    }
}

/// Per-mode kinetic coefficients and the broadening time that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct KineticCoeffs {
    pub eta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub t_b: f64,
}

impl KineticCoeffs {
    /// `η_j − γ_j n_j`.
    pub fn rhs(&self, n: &[f64]) -> Vec<f64> {
        self.eta.iter().zip(&self.gamma).zip(n).map(|((e, g), n)| e - g * n).collect()
    }

    /// `1/max_j |γ_j|`.
    pub fn nonlinear_time(&self) -> f64 {
        1.0 / self.gamma.iter().fold(0.0f64, |a, g| a.max(g.abs()))
    }

    /// Modes whose damping came out negative.
    pub fn negative_gamma_modes(&self) -> Vec<usize> {
        (0..self.gamma.len()).filter(|&j| self.gamma[j] < 0.0).collect()
    }
}

/// `(η_j, γ_j)` as lattice sums over the table's triads touching `j`.
///
/// Mode `j` enters a triad `(u; p, q)` either as the sum mode `u` or as a
/// summand `p`/`q`; each role contributes the corresponding term of the
/// collision integral with `δ(Ω)` replaced by [`broadened_delta`].
pub fn mode_coeffs(j: usize, n: &[f64], tbl: &TriadTable, epsilon: f64, t_b: f64) -> (f64, f64) {
    let base = 8.0 * PI * epsilon * epsilon * tbl.modes().measure();
    let (mut eta, mut gamma) = (0.0, 0.0);
    for t in tbl.entries().iter().filter(|t| t.contains(j)) {
        let k = base * t.v.norm_sqr() * broadened_delta(t.mismatch, t_b);
        if t.l == j {
            if t.is_degenerate() {
                eta += 0.5 * k * n[t.m] * n[t.m];
                gamma += k * n[t.m];
            } else {
                eta += k * n[t.m] * n[t.n];
                gamma += k * (n[t.m] + n[t.n]);
            }
        }
        // a summand leg; a degenerate entry counts once
        let legs = if t.is_degenerate() { 1 } else { 2 };
        for &(leg, other) in [(t.m, t.n), (t.n, t.m)].iter().take(legs) {
            if leg == j {
                eta += k * n[other] * n[t.l];
                gamma += k * (n[other] - n[t.l]);
            }
        }
    }
    (eta, gamma)
}

/// Source term η_j; non-negative for `n ≥ 0`.
pub fn eta(j: usize, n: &SpectrumState, tbl: &TriadTable, epsilon: f64, t_b: f64) -> f64 {
    mode_coeffs(j, &n.n, tbl, epsilon, t_b).0
}

/// Damping rate γ_j; may be negative for contrived spectra.
pub fn gamma(j: usize, n: &SpectrumState, tbl: &TriadTable, epsilon: f64, t_b: f64) -> f64 {
    mode_coeffs(j, &n.n, tbl, epsilon, t_b).1
}

/// All coefficients, evaluated in parallel over modes.
pub fn kinetic_coeffs(n: &[f64], tbl: &TriadTable, epsilon: f64, t_b: f64) -> Result<KineticCoeffs> {
    if n.len() != tbl.mode_count() {
        return Err(Error::DimensionMismatch {
            expected: tbl.mode_count(),
            got: n.len(),
        });
    }
    if !(t_b > 0.0) {
        return Err(invalid("kinetics.T_b", "broadening time must be positive"));
    }
    let (eta, gamma): (Vec<f64>, Vec<f64>) = (0..n.len())
        .into_par_iter()
        .map(|j| mode_coeffs(j, n, tbl, epsilon, t_b))
        .unzip();
    let c = KineticCoeffs { eta, gamma, t_b };
    let neg = c.negative_gamma_modes();
    if !neg.is_empty() {
        log::debug!("negative damping on modes {neg:?}");
    }
    Ok(c)
}

const MAX_HALVINGS: u32 = 10;

/// RK4 on `ṅ = η − γn` with coefficients supplied by `coeffs(t, n)`.
/// Returns the state after every step, starting with `n0`. A step that
/// would make some `n_j` negative is retried with smaller sub-steps; if
/// that fails the offending values are floored at zero with a warning.
pub fn evolve_with<F>(n0: &SpectrumState, t_end: f64, dt: f64, coeffs: F) -> Result<Vec<SpectrumState>>
where
    F: Fn(f64, &[f64]) -> Result<KineticCoeffs>,
{
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid("kinetics.dt", "step must be positive"));
    }
    if !(t_end >= n0.t) {
        return Err(invalid("t_end", "must not precede the initial time"));
    }
    let rate = |t: f64, n: &[f64]| -> Result<Vec<f64>> {
        let c = coeffs(t, n)?;
        let r = c.rhs(n);
        if r.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteCoefficients { t });
        }
        Ok(r)
    };
    let rk4 = |t: f64, n: &[f64], h: f64| -> Result<Vec<f64>> {
        let shift = |a: &[f64], k: &[f64], c: f64| -> Vec<f64> { a.iter().zip(k).map(|(x, y)| x + c * y).collect() };
        let k1 = rate(t, n)?;
        let k2 = rate(t + 0.5 * h, &shift(n, &k1, 0.5 * h))?;
        let k3 = rate(t + 0.5 * h, &shift(n, &k2, 0.5 * h))?;
        let k4 = rate(t + h, &shift(n, &k3, h))?;
        Ok((0..n.len())
            .map(|i| n[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect())
    };
    let mut out = vec![n0.clone()];
    let steps = ((t_end - n0.t) / dt).ceil() as u64;
    let mut n = n0.n.clone();
    for i in 0..steps {
        let t = n0.t + i as f64 * dt;
        let h = (t_end - t).min(dt);
        let mut next = None;
        for halving in 0..=MAX_HALVINGS {
            let parts = 1u64 << halving;
            let sub = h / parts as f64;
            let mut trial = n.clone();
            let mut ok = true;
            for p in 0..parts {
                trial = rk4(t + p as f64 * sub, &trial, sub)?;
                if trial.iter().any(|x| *x < 0.0) {
                    ok = false;
                    break;
                }
            }
            if ok {
                next = Some(trial);
                break;
            }
        }
        n = match next {
            Some(v) => v,
            None => {
                let mut v = rk4(t, &n, h)?;
                log::warn!("negative waveaction at t = {}; flooring at zero", t + h);
                v.iter_mut().for_each(|x| *x = x.max(0.0));
                v
            }
        };
        out.push(SpectrumState {
            t: if i + 1 == steps { t_end } else { t + h },
            n: n.clone(),
        });
    }
    Ok(out)
}

/// Kinetic equation with self-consistent coefficients at fixed broadening `t_b`.
pub fn evolve_spectrum(
    n0: &SpectrumState,
    tbl: &TriadTable,
    epsilon: f64,
    t_b: f64,
    t_end: f64,
    dt: f64,
) -> Result<Vec<SpectrumState>> {
    evolve_with(n0, t_end, dt, |_, n| kinetic_coeffs(n, tbl, epsilon, t_b))
}

/// Cell averages of the one-mode intensity PDF on `[0, s_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PdfGrid1D {
    pub mode: usize,
    pub s_max: f64,
    pub ds: f64,
    pub p: Vec<f64>,
    /// Probability that has left through `s_max` so far.
    pub outflux: f64,
}

pub const DEFAULT_CELLS: usize = 512;
pub const DEFAULT_RANGE: f64 = 20.0;

impl PdfGrid1D {
    pub fn zeros(mode: usize, s_max: f64, cells: usize) -> Result<Self> {
        if !(s_max > 0.0 && s_max.is_finite()) {
            return Err(invalid("kinetics.s_max", "must be positive"));
        }
        if cells < 2 {
            return Err(invalid("kinetics.cells", "need at least 2 cells"));
        }
        Ok(Self {
            mode,
            s_max,
            ds: s_max / cells as f64,
            p: vec![0.0; cells],
            outflux: 0.0,
        })
    }

    /// Grid with `s_max = 20·n_max` and 512 cells.
    pub fn default_for(mode: usize, n_max: f64) -> Result<Self> {
        Self::zeros(mode, DEFAULT_RANGE * n_max, DEFAULT_CELLS)
    }

    /// Exact cell averages of `(1/n)e^{−s/n}`, renormalized to unit mass on the grid.
    pub fn exponential(mode: usize, n: f64, s_max: f64, cells: usize) -> Result<Self> {
        let mut g = Self::zeros(mode, s_max, cells)?;
        if !(n > 0.0) {
            return Err(invalid("n", "mean intensity must be positive"));
        }
        g.p = exponential_cells(n, g.ds, cells);
        g.normalize();
        Ok(g)
    }

    /// All mass in the cell containing `s0`.
    pub fn delta_like(mode: usize, s0: f64, s_max: f64, cells: usize) -> Result<Self> {
        let mut g = Self::zeros(mode, s_max, cells)?;
        if !(0.0..s_max).contains(&s0) {
            return Err(invalid("s0", "must lie inside the grid"));
        }
        let i = ((s0 / g.ds) as usize).min(cells - 1);
        g.p[i] = 1.0 / g.ds;
        Ok(g)
    }

    pub fn cells(&self) -> usize {
        self.p.len()
    }

    pub fn center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.ds
    }

    pub fn mass(&self) -> f64 {
        self.p.iter().sum::<f64>() * self.ds
    }

    /// `⟨s⟩` by the midpoint rule.
    pub fn mean(&self) -> f64 {
        self.p.iter().enumerate().map(|(i, p)| self.center(i) * p).sum::<f64>() * self.ds
    }

    pub fn normalize(&mut self) {
        let m = self.mass();
        if m > 0.0 {
            self.p.iter_mut().for_each(|x| *x /= m);
        }
    }

    /// `Σ |P_i − Q_i| Δs`.
    pub fn l1_distance(&self, q: &[f64]) -> f64 {
        self.p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>() * self.ds
    }

    /// Stable step bound for given coefficients.
    pub fn cfl_limit(&self, eta: f64, gamma: f64) -> f64 {
        let rate = (2.0 * eta / (self.ds * self.ds) + gamma.abs() / self.ds) * self.s_max;
        if rate > 0.0 {
            1.0 / rate
        } else {
            f64::INFINITY
        }
    }

    /// Face fluxes `F` at `s = 0, Δs, …, s_max`. The first is zero; the last
    /// uses an empty ghost cell beyond `s_max`. Faces are centred unless the
    /// cell Péclet number `|γ|Δs/η` exceeds 2, where the drift is upwinded.
    pub fn face_fluxes(&self, eta: f64, gamma: f64) -> Vec<f64> {
        let n = self.cells();
        let upwind = gamma.abs() * self.ds > 2.0 * eta;
        let mut f = vec![0.0; n + 1];
        for (k, fk) in f.iter_mut().enumerate().skip(1) {
            let s = k as f64 * self.ds;
            let left = self.p[k - 1];
            let right = if k < n { self.p[k] } else { 0.0 };
            // drift velocity is −γs
            let face = if !upwind {
                0.5 * (left + right)
            } else if gamma > 0.0 {
                right
            } else {
                left
            };
            *fk = -s * (gamma * face + eta * (right - left) / self.ds);
        }
        f
    }
}

/// Exact cell averages of `(1/n)e^{−s/n}` on cells of width `ds` from zero.
pub(crate) fn exponential_cells(n: f64, ds: f64, cells: usize) -> Vec<f64> {
    let shrink = (-ds / n).exp();
    let first = -(-ds / n).exp_m1() / ds;
    let mut v = Vec::with_capacity(cells);
    let mut c = first;
    for _ in 0..cells {
        v.push(c);
        c *= shrink;
    }
    v
}

/// One forward-Euler finite-volume step of `∂_t P + ∂_s F = 0`.
pub fn pdf_step(grid: &PdfGrid1D, eta: f64, gamma: f64, dt: f64) -> Result<PdfGrid1D> {
    if !(eta >= 0.0 && eta.is_finite() && gamma.is_finite()) {
        return Err(invalid("eta", "coefficients must be finite with η ≥ 0"));
    }
    let limit = grid.cfl_limit(eta, gamma);
    if !(dt >= 0.0) || dt > limit {
        return Err(Error::CflViolation { dt, limit });
    }
    let f = grid.face_fluxes(eta, gamma);
    let mut out = grid.clone();
    let r = dt / grid.ds;
    for (i, p) in out.p.iter_mut().enumerate() {
        *p -= r * (f[i + 1] - f[i]);
    }
    out.outflux += dt * f[grid.cells()];
    Ok(out)
}

/// Steady one-mode PDF carrying a constant probability flux `F`.
///
/// Solves `γP + ηP′ = −F/s` on `[s0, s_max]`:
/// `P(s) = C e^{−s/n} − (F/η) G(s)` with `n = η/γ` and
/// `G(s) = ∫_{s0}^{s} e^{(σ−s)/n} σ^{-1} dσ`, `C` chosen so that
/// `∫_{s0}^{s_max} P ds = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyFluxPdf {
    pub n: f64,
    pub eta: f64,
    pub flux: f64,
    pub s0: f64,
    pub s_max: f64,
    pub c: f64,
}

impl SteadyFluxPdf {
    /// `G(s)`, integrated in `u = ln σ` where the integrand is smooth.
    pub fn g(&self, s: f64) -> f64 {
        if s <= self.s0 {
            return 0.0;
        }
        let (a, b) = (self.s0.ln(), s.ln());
        let panels = (((b - a) / 0.25).ceil() as usize).max(((s - self.s0) / (0.5 * self.n)).ceil() as usize);
        let n = self.n;
        gauss_legendre(|u| ((u.exp() - s) / n).exp(), a, b, panels.max(1))
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.c * (-s / self.n).exp() - self.flux / self.eta * self.g(s)
    }

    /// `(s, P(s))` at `points` equally spaced abscissae from `s0` to `s_max`.
    pub fn curve(&self, points: usize) -> Vec<(f64, f64)> {
        let points = points.max(2);
        (0..points)
            .map(|i| {
                let s = self.s0 + (self.s_max - self.s0) * i as f64 / (points - 1) as f64;
                (s, self.eval(s))
            })
            .collect()
    }
}

/// Builds the normalized constant-flux solution for mean intensity `n = η/γ`.
pub fn steady_pdf_with_flux(n: f64, eta: f64, flux: f64, s0: f64, s_max: f64) -> Result<SteadyFluxPdf> {
    if !(n > 0.0 && n.is_finite()) {
        return Err(invalid("n", "mean intensity must be positive"));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(invalid("eta", "must be positive"));
    }
    if !flux.is_finite() {
        return Err(invalid("flux", "must be finite"));
    }
    if !(s0 > 0.0) {
        return Err(Error::NonIntegrable(format!(
            "s0 = {s0}: the forcing F/s is not integrable at s = 0"
        )));
    }
    if !(s_max > s0 && s_max.is_finite()) {
        return Err(invalid("s_max", "must exceed s0"));
    }
    let mut sol = SteadyFluxPdf {
        n,
        eta,
        flux,
        s0,
        s_max,
        c: 0.0,
    };
    // G′ = −G/n + 1/s integrates to ∫G = n(ln(s_max/s0) − G(s_max))
    let int_g = n * ((s_max / s0).ln() - sol.g(s_max));
    let int_e = n * ((-s0 / n).exp() - (-s_max / n).exp());
    sol.c = (1.0 + flux / eta * int_g) / int_e;
    if flux != 0.0 {
        let probe = sol.curve(2001);
        if let Some(&(s, p)) = probe.iter().find(|(_, p)| *p < 0.0) {
            return Err(Error::NonIntegrable(format!(
                "density turns negative (P({s}) = {p}); no normalizable solution on [{s0}, {s_max}]"
            )));
        }
    }
    Ok(sol)
}
