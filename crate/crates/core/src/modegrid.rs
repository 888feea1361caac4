//! Periodic Fourier lattice, dispersion, interaction coefficients and the
//! resonant-triad table shared by every other module.
//!
//! Wavevectors live on the lattice `k_l = 2π l / L` with integer index
//! vectors `l` in the box `[-lmax, lmax]^d`, the zero mode excluded. Modes are
//! stored in lexicographic order of their index vectors and referred to by
//! their position in that order everywhere else in the crate.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Integer lattice index. One-dimensional sets leave the second component at 0.
pub type LatticeIndex = [i32; 2];

/// The finite set of Fourier modes `B_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSet {
    box_len: f64,
    dim: usize,
    lmax: i32,
    modes: Vec<LatticeIndex>,
    lookup: Vec<Option<usize>>,
}

impl ModeSet {
    /// Builds the lattice for a box of side `box_len` in `dim` dimensions.
    pub fn new(box_len: f64, dim: usize, lmax: u32) -> Result<Self> {
        if !(box_len.is_finite() && box_len > 0.0) {
            return Err(invalid("grid.L", format!("must be positive, got {box_len}")));
        }
        if dim != 1 && dim != 2 {
            return Err(invalid("grid.d", format!("must be 1 or 2, got {dim}")));
        }
        if lmax == 0 {
            return Err(invalid("grid.lmax", "must be at least 1 (mode set would be empty)"));
        }
        if lmax > 4096 {
            return Err(invalid("grid.lmax", format!("{lmax} exceeds 4096")));
        }
        let lmax = lmax as i32;
        let mut modes = Vec::new();
        let second: Vec<i32> = if dim == 2 { (-lmax..=lmax).collect() } else { vec![0] };
        for a in -lmax..=lmax {
            for &b in &second {
                if a == 0 && b == 0 {
                    continue;
                }
                modes.push([a, b]);
            }
        }
        let side = (2 * lmax + 1) as usize;
        let mut lookup = vec![None; side * side];
        for (i, l) in modes.iter().enumerate() {
            let slot = Self::slot_of(lmax, l);
            lookup[slot] = Some(i);
        }
        Ok(Self {
            box_len,
            dim,
            lmax,
            modes,
            lookup,
        })
    }

    fn slot_of(lmax: i32, l: &LatticeIndex) -> usize {
        let side = 2 * lmax + 1;
        ((l[0] + lmax) * side + (l[1] + lmax)) as usize
    }

    pub fn box_len(&self) -> f64 {
        self.box_len
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lmax(&self) -> u32 {
        self.lmax as u32
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn indices(&self) -> &[LatticeIndex] {
        &self.modes
    }

    pub fn index(&self, i: usize) -> LatticeIndex {
        self.modes[i]
    }

    /// Position of a lattice index in the mode ordering, if it belongs to the set.
    pub fn position(&self, l: LatticeIndex) -> Option<usize> {
        if self.dim == 1 && l[1] != 0 {
            return None;
        }
        if l[0].abs() > self.lmax || l[1].abs() > self.lmax {
            return None;
        }
        self.lookup[Self::slot_of(self.lmax, &l)]
    }

    /// Wavevector of mode `i`.
    pub fn wavevector(&self, i: usize) -> [f64; 2] {
        let f = 2.0 * PI / self.box_len;
        let l = self.modes[i];
        [f * l[0] as f64, f * l[1] as f64]
    }

    pub fn wavenumber(&self, i: usize) -> f64 {
        let k = self.wavevector(i);
        k[0].hypot(k[1])
    }

    pub fn k_max(&self) -> f64 {
        2.0 * PI * self.lmax as f64 / self.box_len
    }

    /// Lattice measure `(2π/L)^d` standing in for `dk` in wavevector integrals.
    pub fn measure(&self) -> f64 {
        (2.0 * PI / self.box_len).powi(self.dim as i32)
    }
}

/// Power-law dispersion `ω(k) = c |k|^α`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dispersion {
    pub c: f64,
    pub alpha: f64,
}

impl Dispersion {
    pub fn new(c: f64, alpha: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(invalid("dispersion.c", format!("must be positive, got {c}")));
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(invalid("dispersion.alpha", format!("must be positive, got {alpha}")));
        }
        Ok(Self { c, alpha })
    }

    pub fn omega(&self, k: f64) -> f64 {
        self.c * k.abs().powf(self.alpha)
    }
}

/// A pluggable interaction coefficient `V^l_{mn}` evaluated on wavevectors.
///
/// Implementations need not be symmetric; [`TriadTable`] symmetrizes in the
/// two lower slots.
pub trait Interaction: Sync {
    fn raw(&self, kl: [f64; 2], km: [f64; 2], kn: [f64; 2]) -> Complex64;
}

/// Built-in interaction families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum InteractionModel {
    /// `V = V₀`.
    Constant { v0: Complex64 },
    /// `V = V₀ (|k_l| |k_m| |k_n|)^β`.
    PowerLaw { v0: Complex64, beta: f64 },
}

fn norm(k: [f64; 2]) -> f64 {
    k[0].hypot(k[1])
}

impl Interaction for InteractionModel {
    fn raw(&self, kl: [f64; 2], km: [f64; 2], kn: [f64; 2]) -> Complex64 {
        match *self {
            InteractionModel::Constant { v0 } => v0,
            InteractionModel::PowerLaw { v0, beta } => {
                v0 * (norm(kl) * norm(km) * norm(kn)).powf(beta)
            }
        }
    }
}

/// Symmetrized coefficient `(raw(l,m,n) + raw(l,n,m)) / 2`.
pub fn symmetric_coefficient(
    model: &dyn Interaction,
    kl: [f64; 2],
    km: [f64; 2],
    kn: [f64; 2],
) -> Complex64 {
    (model.raw(kl, km, kn) + model.raw(kl, kn, km)) * 0.5
}

/// One lattice triad `k_l = k_m + k_n` in canonical order `m ≤ n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triad {
    pub l: usize,
    pub m: usize,
    pub n: usize,
    pub v: Complex64,
    /// Frequency mismatch `ω_l − ω_m − ω_n`.
    pub mismatch: f64,
}

impl Triad {
    /// Number of ordered `(m, n)` pairs this canonical entry stands for.
    pub fn multiplicity(&self) -> f64 {
        if self.m == self.n {
            1.0
        } else {
            2.0
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.m == self.n
    }

    pub fn contains(&self, j: usize) -> bool {
        self.l == j || self.m == j || self.n == j
    }
}

/// Exhaustive list of canonical lattice triads with cached coefficients.
#[derive(Debug, Clone)]
pub struct TriadTable {
    modes: ModeSet,
    dispersion: Dispersion,
    omega: Vec<f64>,
    entries: Vec<Triad>,
}

impl TriadTable {
    /// Enumerates every triad of the mode set, sorted by `(l, m, n)`.
    pub fn build(modes: &ModeSet, dispersion: Dispersion, model: &dyn Interaction) -> Self {
        let omega: Vec<f64> = (0..modes.len())
            .map(|i| dispersion.omega(modes.wavenumber(i)))
            .collect();
        let mut entries = Vec::new();
        for m in 0..modes.len() {
            let lm = modes.index(m);
            for n in m..modes.len() {
                let ln = modes.index(n);
                let sum = [lm[0] + ln[0], lm[1] + ln[1]];
                let Some(l) = modes.position(sum) else {
                    continue;
                };
                let v = symmetric_coefficient(
                    model,
                    modes.wavevector(l),
                    modes.wavevector(m),
                    modes.wavevector(n),
                );
                entries.push(Triad {
                    l,
                    m,
                    n,
                    v,
                    mismatch: omega[l] - omega[m] - omega[n],
                });
            }
        }
        entries.sort_by_key(|t| (t.l, t.m, t.n));
        Self {
            modes: modes.clone(),
            dispersion,
            omega,
            entries,
        }
    }

    pub fn modes(&self) -> &ModeSet {
        &self.modes
    }

    pub fn dispersion(&self) -> Dispersion {
        self.dispersion
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn omega_max(&self) -> f64 {
        self.omega.iter().cloned().fold(0.0, f64::max)
    }

    pub fn entries(&self) -> &[Triad] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    /// Sub-table keeping only triads whose three legs all lie in `members`.
    pub fn cluster(&self, members: &[usize]) -> Self {
        let inside = |j: usize| members.contains(&j);
        Self {
            modes: self.modes.clone(),
            dispersion: self.dispersion,
            omega: self.omega.clone(),
            entries: self
                .entries
                .iter()
                .filter(|t| inside(t.l) && inside(t.m) && inside(t.n))
                .copied()
                .collect(),
        }
    }

    /// Sub-table of the given entries, same mode set.
    pub fn with_entries(&self, entries: Vec<Triad>) -> Self {
        Self {
            modes: self.modes.clone(),
            dispersion: self.dispersion,
            omega: self.omega.clone(),
            entries,
        }
    }

    /// Writes the table as CSV: index vectors, `Re V`, `Im V`, mismatch.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.modes.dim();
        let mut header: Vec<String> = Vec::new();
        for leg in ["l", "m", "n"] {
            if d == 1 {
                header.push(leg.to_string());
            } else {
                header.push(format!("{leg}_x"));
                header.push(format!("{leg}_y"));
            }
        }
        header.extend(["re_v", "im_v", "mismatch"].map(String::from));
        w.write_record(&header)?;
        for t in &self.entries {
            let mut row: Vec<String> = Vec::with_capacity(header.len());
            for leg in [t.l, t.m, t.n] {
                let idx = self.modes.index(leg);
                row.extend(idx[..d].iter().map(|c| c.to_string()));
            }
            row.push(fmt_f64(t.v.re));
            row.push(fmt_f64(t.v.im));
            row.push(fmt_f64(t.mismatch));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shortest round-trip decimal representation.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

/// Finite-time frequency kernel `|Δ_T(x)|² / (2πT) = T/(2π) · sinc²(xT/2)`.
///
/// Non-negative, unit mass on the real line, and tends to `δ(x)` as `T → ∞`.
pub fn broadened_delta(x: f64, t: f64) -> f64 {
    let u = 0.5 * x * t;
    let sinc = if u == 0.0 { 1.0 } else { u.sin() / u };
    t / (2.0 * PI) * sinc * sinc
}
