//! Weak-nonlinearity expansion `a(T) = a⁽⁰⁾ + ε a⁽¹⁾ + ε² a⁽²⁾` in closed form.
//!
//! Both time kernels are divided differences of the exponential:
//!
//! ```text
//! Δ_T(x)   = ∫₀ᵀ e^{ixt} dt                 = T  · exp[0, ixT]
//! E_T(x,y) = ∫₀ᵀ Δ_t(x−y) e^{iyt} dt        = T² · exp[0, iyT, ixT]
//! ```
//!
//! which are evaluated without cancellation near coinciding arguments.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::modegrid::TriadTable;

const I: Complex64 = Complex64::new(0.0, 1.0);
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// `sinh(z)/z`.
fn sinhc(z: Complex64) -> Complex64 {
    if z.norm() < 0.1 {
        let z2 = z * z;
        let mut term = Complex64::new(1.0, 0.0);
        let mut sum = term;
        for k in 1..10 {
            term *= z2 / ((2 * k) as f64 * (2 * k + 1) as f64);
            sum += term;
        }
        sum
    } else {
        z.sinh() / z
    }
}

/// First divided difference `exp[a, b]`.
pub fn exp_dd1(a: Complex64, b: Complex64) -> Complex64 {
    ((a + b) * 0.5).exp() * sinhc((b - a) * 0.5)
}

/// Second divided difference `exp[a, b, c]`.
pub fn exp_dd2(a: Complex64, b: Complex64, c: Complex64) -> Complex64 {
    let dab = (a - b).norm();
    let dbc = (b - c).norm();
    let dac = (a - c).norm();
    let spread = dab.max(dbc).max(dac);
    if spread < 1.0 {
        // Taylor series about the centroid: Σ_k h_k(w)/(k+2)! with h_k the
        // complete homogeneous symmetric polynomials of the shifted nodes.
        let w = (a + b + c) / 3.0;
        let (x, y, z) = (a - w, b - w, c - w);
        let mut hx = Complex64::new(1.0, 0.0); // h_k(x)
        let mut hxy = hx; // h_k(x, y)
        let mut hxyz = hx; // h_k(x, y, z)
        let mut fact = 2.0; // (k+2)!
        let mut sum = hxyz / fact;
        // shifted nodes have modulus < 2/3, so 30 terms reach machine precision
        for k in 1..30 {
            hx *= x;
            hxy = hx + y * hxy;
            hxyz = hxy + z * hxyz;
            fact *= (k + 2) as f64;
            sum += hxyz / fact;
        }
        return w.exp() * sum;
    }
    // Divide by the widest gap; the remaining node sits between.
    if dac >= dab && dac >= dbc {
        (exp_dd1(b, c) - exp_dd1(a, b)) / (c - a)
    } else if dab >= dbc {
        (exp_dd1(c, b) - exp_dd1(a, c)) / (b - a)
    } else {
        (exp_dd1(a, c) - exp_dd1(b, a)) / (c - b)
    }
}

/// `Δ_t(x) = (e^{ixt} − 1)/(ix)`, equal to `t` at `x = 0`.
pub fn delta_kernel(x: f64, t: f64) -> Complex64 {
    t * exp_dd1(ZERO, Complex64::new(0.0, x * t))
}

/// `E_T(x, y) = ∫₀ᵀ Δ_t(x − y) e^{iyt} dt = (Δ_T(x) − Δ_T(y)) / (i(x − y))`.
pub fn e_kernel(x: f64, y: f64, t: f64) -> Complex64 {
    t * t * exp_dd2(ZERO, Complex64::new(0.0, y * t), Complex64::new(0.0, x * t))
}

/// Amplitude factor of a right-hand-side term.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Factor {
    Plain(usize),
    Conj(usize),
}

/// One term `g e^{iφt} u v` of `i da_target/dt`.
#[derive(Debug, Clone, Copy)]
struct RhsTerm {
    target: usize,
    g: Complex64,
    freq: f64,
    u: Factor,
    v: Factor,
}

fn rhs_terms(tbl: &TriadTable) -> Vec<RhsTerm> {
    let mut out = Vec::with_capacity(3 * tbl.len());
    for tr in tbl.entries() {
        let vc = tr.v.conj();
        out.push(RhsTerm {
            target: tr.l,
            g: tr.v * tr.multiplicity(),
            freq: tr.mismatch,
            u: Factor::Plain(tr.m),
            v: Factor::Plain(tr.n),
        });
        out.push(RhsTerm {
            target: tr.m,
            g: 2.0 * vc,
            freq: -tr.mismatch,
            u: Factor::Plain(tr.l),
            v: Factor::Conj(tr.n),
        });
        if tr.m != tr.n {
            out.push(RhsTerm {
                target: tr.n,
                g: 2.0 * vc,
                freq: -tr.mismatch,
                u: Factor::Plain(tr.l),
                v: Factor::Conj(tr.m),
            });
        }
    }
    out
}

fn value(f: Factor, a: &[Complex64]) -> Complex64 {
    match f {
        Factor::Plain(j) => a[j],
        Factor::Conj(j) => a[j].conj(),
    }
}

/// `a⁽¹⁾_j(t) = Σ_k c_k Δ_t(z_k)`: coefficient and frequency of each term.
type FirstOrderTerms = Vec<Vec<(Complex64, f64)>>;

fn first_order_terms(a0: &[Complex64], terms: &[RhsTerm], n: usize) -> FirstOrderTerms {
    let mut out = vec![Vec::new(); n];
    for t in terms {
        let c = -I * t.g * value(t.u, a0) * value(t.v, a0);
        out[t.target].push((c, t.freq));
    }
    out
}

fn check(a0: &[Complex64], tbl: &TriadTable) -> Result<()> {
    if a0.len() != tbl.mode_count() {
        return Err(Error::DimensionMismatch {
            expected: tbl.mode_count(),
            got: a0.len(),
        });
    }
    Ok(())
}

/// First iterate: `a⁽¹⁾_l = −i Σ (V^l_{mn} a_m a_n Δ^l_{mn} + 2 V̄^m_{ln} a_m ā_n Δ̄^m_{ln})`.
pub fn first_order(a0: &[Complex64], tbl: &TriadTable, t: f64) -> Result<Vec<Complex64>> {
    check(a0, tbl)?;
    let terms = first_order_terms(a0, &rhs_terms(tbl), a0.len());
    Ok(terms
        .iter()
        .map(|list| list.iter().map(|&(c, z)| c * delta_kernel(z, t)).sum())
        .collect())
}

/// Second iterate. Each right-hand-side term `g e^{iφt} u v` contributes
/// `−i g (u⁽¹⁾ v + u v⁽¹⁾)` integrated against `e^{iφt}`, which turns every
/// `Δ_t(z)` of the first iterate into `E_T(z + φ, φ)`. Grouped by the
/// outer coefficient this reproduces the four bracketed groups (decay into
/// `l`, and the `ā⁽¹⁾ a`, `ā a⁽¹⁾` pieces of the merging term).
pub fn second_order(a0: &[Complex64], tbl: &TriadTable, t: f64) -> Result<Vec<Complex64>> {
    check(a0, tbl)?;
    let terms = rhs_terms(tbl);
    let first = first_order_terms(a0, &terms, a0.len());
    let inner = |f: Factor, phi: f64| -> Complex64 {
        match f {
            Factor::Plain(j) => first[j]
                .iter()
                .map(|&(c, z)| c * e_kernel(z + phi, phi, t))
                .sum(),
            Factor::Conj(j) => first[j]
                .iter()
                .map(|&(c, z)| c.conj() * e_kernel(-z + phi, phi, t))
                .sum(),
        }
    };
    let mut out = vec![ZERO; a0.len()];
    for term in &terms {
        let du = inner(term.u, term.freq) * value(term.v, a0);
        let dv = value(term.u, a0) * inner(term.v, term.freq);
        out[term.target] += -I * term.g * (du + dv);
    }
    Ok(out)
}

/// Zeroth, first and second iterates at elapsed time `t`.
#[derive(Debug, Clone)]
pub struct ExpansionResult {
    pub a0: Vec<Complex64>,
    pub a1: Vec<Complex64>,
    pub a2: Vec<Complex64>,
    pub t: f64,
}

impl ExpansionResult {
    pub fn compute(a0: &[Complex64], tbl: &TriadTable, t: f64) -> Result<Self> {
        Ok(Self {
            a0: a0.to_vec(),
            a1: first_order(a0, tbl, t)?,
            a2: second_order(a0, tbl, t)?,
            t,
        })
    }

    /// `a⁰ + ε a¹ + ε² a²`.
    pub fn evaluate(&self, epsilon: f64) -> Vec<Complex64> {
        self.a0
            .iter()
            .zip(&self.a1)
            .zip(&self.a2)
            .map(|((&x0, &x1), &x2)| x0 + epsilon * x1 + epsilon * epsilon * x2)
            .collect()
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}
