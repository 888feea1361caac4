//! Joint amplitude PDF of a few participating modes evolved by the
//! Zaslavski-Sagdeev operator.
//!
//! Each triad `(u; p, q)` moves probability along its Manley-Rowe direction
//! `e` (`+1` on `s_u`, `−1` on `s_p` and `s_q`, or `−2` on a doubled leg):
//!
//! `∂_t P = ½ ∂_e (D (∂_e P − βP))`, `D = w s_u s_p s_q`, `∂_e = e·∇_s`,
//!
//! with `w = 16πε²|V|²δ_T(Ω)` per unit lattice measure (`4π…` for a doubled
//! leg) and `β = 0` for a closed cluster. The operator vanishes on any product
//! of exponentials whose inverse means satisfy `e·(1/n) = 0`, in particular
//! on the thermodynamic product at exact resonance.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::kinetics::exponential_cells;
use crate::modegrid::{broadened_delta, TriadTable};

pub const MAX_MODES: usize = 4;
pub const MAX_CELLS: usize = 64;

/// How triads with legs outside the participating set are treated.
#[derive(Debug, Clone, PartialEq)]
pub enum Closure {
    /// Ignore them: the participating modes form a closed cluster.
    Drop,
    /// Integrate the outside legs against independent exponential laws with
    /// the given mean intensities (one entry per mode of the table).
    MeanField(Vec<f64>),
}

/// Cell averages of the joint PDF of `s_j` for the participating modes on
/// `[0, s_max]^N`, with the same cell width on every axis.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPdfGrid {
    pub t: f64,
    pub modes: Vec<usize>,
    pub cells: usize,
    pub ds: f64,
    /// Row-major, first axis slowest.
    pub p: Vec<f64>,
    /// Probability that has left the grid (zero for the reflecting edges used here).
    pub outflux: f64,
}

impl JointPdfGrid {
    pub fn zeros(modes: Vec<usize>, cells: usize, s_max: f64) -> Result<Self> {
        if modes.is_empty() || modes.len() > MAX_MODES {
            return Err(invalid("zspdf.modes", format!("need 1 to {MAX_MODES} participating modes")));
        }
        let mut sorted = modes.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != modes.len() {
            return Err(invalid("zspdf.modes", "participating modes must be distinct"));
        }
        if !(2..=MAX_CELLS).contains(&cells) {
            return Err(invalid("zspdf.cells", format!("cells per axis must be in 2..={MAX_CELLS}")));
        }
        if !(s_max > 0.0 && s_max.is_finite()) {
            return Err(invalid("zspdf.s_max", "must be positive"));
        }
        let len = cells.pow(modes.len() as u32);
        Ok(Self {
            t: 0.0,
            modes,
            cells,
            ds: s_max / cells as f64,
            p: vec![0.0; len],
            outflux: 0.0,
        })
    }

    /// Product of exponential laws with means `n[a]` per axis, as exact cell
    /// averages renormalized to unit mass on the grid.
    pub fn exponential_product(modes: Vec<usize>, cells: usize, s_max: f64, n: &[f64]) -> Result<Self> {
        let mut g = Self::zeros(modes, cells, s_max)?;
        if n.len() != g.dims() || n.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(invalid("n", "one positive mean per participating mode"));
        }
        let axes: Vec<Vec<f64>> = n.iter().map(|&m| exponential_cells(m, g.ds, cells)).collect();
        let dims = g.dims();
        let mut idx = vec![0usize; dims];
        for v in g.p.iter_mut() {
            *v = idx.iter().enumerate().map(|(a, &i)| axes[a][i]).product();
            increment(&mut idx, cells);
        }
        g.normalize();
        Ok(g)
    }

    /// Thermodynamic product `Π ω e^{−ω s}` for the participating modes.
    pub fn thermodynamic(modes: Vec<usize>, cells: usize, s_max: f64, tbl: &TriadTable, temperature: f64) -> Result<Self> {
        let n: Vec<f64> = modes.iter().map(|&j| temperature / tbl.omega()[j]).collect();
        Self::exponential_product(modes, cells, s_max, &n)
    }

    /// Cell values sampled from `f` at cell centres, then normalized.
    pub fn from_fn<F: Fn(&[f64]) -> f64>(modes: Vec<usize>, cells: usize, s_max: f64, f: F) -> Result<Self> {
        let mut g = Self::zeros(modes, cells, s_max)?;
        let dims = g.dims();
        let mut idx = vec![0usize; dims];
        let mut s = vec![0.0; dims];
        for i in 0..g.p.len() {
            for a in 0..dims {
                s[a] = (idx[a] as f64 + 0.5) * g.ds;
            }
            g.p[i] = f(&s).max(0.0);
            increment(&mut idx, cells);
        }
        g.normalize();
        Ok(g)
    }

    pub fn dims(&self) -> usize {
        self.modes.len()
    }

    pub fn s_max(&self) -> f64 {
        self.ds * self.cells as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.ds.powi(self.dims() as i32)
    }

    pub fn axis_of(&self, mode: usize) -> Option<usize> {
        self.modes.iter().position(|&m| m == mode)
    }

    fn stride(&self, axis: usize) -> usize {
        self.cells.pow((self.dims() - 1 - axis) as u32)
    }

    pub fn mass(&self) -> f64 {
        self.p.iter().sum::<f64>() * self.cell_volume()
    }

    pub fn normalize(&mut self) {
        let m = self.mass();
        if m > 0.0 {
            self.p.iter_mut().for_each(|x| *x /= m);
        }
    }

    /// One-mode marginal along `axis`.
    pub fn marginal(&self, axis: usize) -> Vec<f64> {
        let stride = self.stride(axis);
        let mut out = vec![0.0; self.cells];
        for (i, v) in self.p.iter().enumerate() {
            out[(i / stride) % self.cells] += v;
        }
        let w = self.cell_volume() / self.ds;
        out.iter_mut().for_each(|x| *x *= w);
        out
    }

    /// `⟨s_a⟩` by the midpoint rule.
    pub fn mean(&self, axis: usize) -> f64 {
        self.marginal(axis)
            .iter()
            .enumerate()
            .map(|(i, p)| (i as f64 + 0.5) * self.ds * p)
            .sum::<f64>()
            * self.ds
    }

    /// `⟨s_a s_b⟩ − ⟨s_a⟩⟨s_b⟩`.
    pub fn covariance(&self, a: usize, b: usize) -> f64 {
        let (sa, sb) = (self.stride(a), self.stride(b));
        let mut m = 0.0;
        for (i, v) in self.p.iter().enumerate() {
            let x = ((i / sa) % self.cells) as f64 + 0.5;
            let y = ((i / sb) % self.cells) as f64 + 0.5;
            m += x * y * v;
        }
        m * self.ds * self.ds * self.cell_volume() - self.mean(a) * self.mean(b)
    }

    /// Little-endian record: dims, cells, ds, t, mode indices, then the tensor.
    pub fn write_tensor<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(&(self.dims() as u64).to_le_bytes())?;
        out.write_all(&(self.cells as u64).to_le_bytes())?;
        out.write_all(&self.ds.to_le_bytes())?;
        out.write_all(&self.t.to_le_bytes())?;
        for &m in &self.modes {
            out.write_all(&(m as u64).to_le_bytes())?;
        }
        for v in &self.p {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

fn increment(idx: &mut [usize], cells: usize) {
    for d in (0..idx.len()).rev() {
        idx[d] += 1;
        if idx[d] < cells {
            return;
        }
        idx[d] = 0;
    }
}

/// One triad's action on the participating axes.
#[derive(Debug, Clone, PartialEq)]
struct Channel {
    /// `(axis, e_a, power of s_a in D)`.
    legs: Vec<(usize, i32, i32)>,
    /// Index offset of the lattice shift `e`.
    offset: isize,
    weight: f64,
    beta: f64,
}

impl Channel {
    fn d_at(&self, s: impl Fn(usize) -> f64) -> f64 {
        self.legs
            .iter()
            .fold(self.weight, |acc, &(a, _, pw)| acc * s(a).powi(pw))
    }

    /// `∂²_e D`.
    fn d2_along(&self, s: impl Fn(usize) -> f64) -> f64 {
        let legs = &self.legs;
        let mut total = 0.0;
        for (i, &(a, ea, pa)) in legs.iter().enumerate() {
            for (k, &(b, eb, pb)) in legs.iter().enumerate() {
                let coef = if i == k {
                    (pa * (pa - 1) * ea * ea) as f64
                } else {
                    (pa * pb * ea * eb) as f64
                };
                if coef == 0.0 {
                    continue;
                }
                let mut term = coef;
                for (m, &(c, _, pc)) in legs.iter().enumerate() {
                    let drop = (m == i) as i32 + (m == k) as i32;
                    term *= s(c).powi(pc - drop);
                }
                let _ = (a, b);
                total += term;
            }
        }
        self.weight * total
    }
}

/// Flux field of one axis on the faces normal to it: `cells + 1` faces
/// along that axis, cell centres along the others, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxField {
    pub axis: usize,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    /// Magnitude of the individual terms before cancellation, same layout.
    pub scale: Vec<f64>,
}

impl FluxField {
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, b| a.max(b.abs()))
    }

    pub fn max_scale(&self) -> f64 {
        self.scale.iter().fold(0.0, |a, b| a.max(*b))
    }

    /// Sum over all but the flux axis, times the transverse cell volume.
    pub fn marginal(&self, ds: f64) -> Vec<f64> {
        let dims = self.shape.len();
        let faces = self.shape[self.axis];
        let stride: usize = self.shape[self.axis + 1..].iter().product();
        let mut out = vec![0.0; faces];
        for (i, v) in self.values.iter().enumerate() {
            out[(i / stride) % faces] += v;
        }
        let w = ds.powi(dims as i32 - 1);
        out.iter_mut().for_each(|x| *x *= w);
        out
    }
}

/// Discrete ZS operator for a fixed grid shape.
#[derive(Debug, Clone)]
pub struct ZsOperator {
    modes: Vec<usize>,
    cells: usize,
    ds: f64,
    channels: Vec<Channel>,
    limit: f64,
}

impl ZsOperator {
    pub fn new(grid: &JointPdfGrid, tbl: &TriadTable, epsilon: f64, t_b: f64, closure: &Closure) -> Result<Self> {
        if !(t_b > 0.0) {
            return Err(invalid("kinetics.T_b", "broadening time must be positive"));
        }
        if let Some(&bad) = grid.modes.iter().find(|&&m| m >= tbl.mode_count()) {
            return Err(invalid("zspdf.modes", format!("mode {bad} not in the mode set")));
        }
        if let Closure::MeanField(n) = closure {
            if n.len() != tbl.mode_count() {
                return Err(Error::DimensionMismatch {
                    expected: tbl.mode_count(),
                    got: n.len(),
                });
            }
        }
        let measure = tbl.modes().measure();
        let dims = grid.dims();
        let mut channels = Vec::new();
        for t in tbl.entries() {
            let legs: Vec<(usize, i32, i32)> = if t.is_degenerate() {
                vec![(t.l, 1, 1), (t.m, -2, 2)]
            } else {
                vec![(t.l, 1, 1), (t.m, -1, 1), (t.n, -1, 1)]
            };
            let base = if t.is_degenerate() { 4.0 } else { 16.0 };
            let mut weight = measure * base * PI * epsilon * epsilon * t.v.norm_sqr() * broadened_delta(t.mismatch, t_b);
            let mut beta = 0.0;
            let mut inside = Vec::new();
            let mut outside = false;
            for &(mode, e, pw) in &legs {
                match grid.axis_of(mode) {
                    Some(a) => inside.push((a, e, pw)),
                    None => {
                        outside = true;
                        if let Closure::MeanField(n) = closure {
                            let nm = n[mode];
                            // ⟨s^a⟩ = a! n^a for the exponential law
                            weight *= (1..=pw).map(f64::from).product::<f64>() * nm.powi(pw);
                            beta += if nm > 0.0 { e as f64 / nm } else { 0.0 };
                        }
                    }
                }
            }
            if inside.is_empty() || weight == 0.0 || (outside && *closure == Closure::Drop) {
                continue;
            }
            let offset = inside
                .iter()
                .map(|&(a, e, _)| e as isize * grid.stride(a) as isize)
                .sum();
            channels.push(Channel {
                legs: inside,
                offset,
                weight,
                beta,
            });
        }
        let mut op = Self {
            modes: grid.modes.clone(),
            cells: grid.cells,
            ds: grid.ds,
            channels,
            limit: f64::INFINITY,
        };
        op.limit = op.compute_limit(dims);
        Ok(op)
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    /// Largest stable (and positivity-preserving) forward-Euler step.
    pub fn cfl_limit(&self) -> f64 {
        self.limit
    }

    fn check(&self, grid: &JointPdfGrid) -> Result<()> {
        if grid.modes != self.modes || grid.cells != self.cells || grid.ds != self.ds {
            return Err(invalid("grid", "grid shape differs from the operator's"));
        }
        Ok(())
    }

    fn upwind(&self, ch: &Channel) -> bool {
        ch.beta.abs() * self.ds > 2.0
    }

    fn shifted(&self, idx: &[usize], ch: &Channel, sign: i32) -> bool {
        ch.legs.iter().all(|&(a, e, _)| {
            let v = idx[a] as i64 + (sign * e) as i64;
            (0..self.cells as i64).contains(&v)
        })
    }

    /// Bond from cell `x` to `x + e`: the flux `½D(∂_e P − βP)` at the midpoint.
    fn bond(&self, ch: &Channel, x_idx: &[usize], px: f64, py: f64) -> f64 {
        let ds = self.ds;
        let d = self.bond_d(ch, x_idx);
        let p_mid = if !self.upwind(ch) {
            0.5 * (px + py)
        } else if ch.beta > 0.0 {
            px
        } else {
            py
        };
        0.5 * d * ((py - px) / ds - ch.beta * p_mid)
    }

    fn compute_limit(&self, dims: usize) -> f64 {
        let len = self.cells.pow(dims as u32);
        let mut idx = vec![0usize; dims];
        let mut back = vec![0usize; dims];
        let mut worst = 0.0f64;
        for _ in 0..len {
            let mut rate = 0.0;
            for ch in &self.channels {
                let drift = 1.0 + 0.5 * ch.beta.abs() * self.ds;
                if self.shifted(&idx, ch, 1) {
                    rate += self.bond_d(ch, &idx) * drift;
                }
                if self.shifted(&idx, ch, -1) {
                    back.copy_from_slice(&idx);
                    for &(a, e, _) in &ch.legs {
                        back[a] = (back[a] as i64 - e as i64) as usize;
                    }
                    rate += self.bond_d(ch, &back) * drift;
                }
            }
            worst = worst.max(rate / (2.0 * self.ds * self.ds));
            increment(&mut idx, self.cells);
        }
        if worst > 0.0 {
            1.0 / worst
        } else {
            f64::INFINITY
        }
    }

    /// Bond diffusivity `D − (Δs²/24)∂²_e D` at the midpoint. `D` is at most
    /// cubic along `e`, so the correction makes the discrete first moments
    /// reproduce `½⟨∂_e D⟩` away from the edges; it stays positive on every bond.
    fn bond_d(&self, ch: &Channel, x_idx: &[usize]) -> f64 {
        let s = |a: usize| {
            let e = ch.legs.iter().find(|l| l.0 == a).map_or(0, |l| l.1);
            (x_idx[a] as f64 + 0.5 + 0.5 * e as f64) * self.ds
        };
        ch.d_at(s) - self.ds * self.ds / 24.0 * ch.d2_along(s)
    }

    /// `∂_t P` on every cell. Each bond is evaluated identically from both of
    /// its cells, so the update conserves mass to rounding.
    pub fn rate(&self, grid: &JointPdfGrid) -> Result<Vec<f64>> {
        self.check(grid)?;
        let dims = grid.dims();
        let slab = grid.stride(0);
        let mut out = vec![0.0; grid.p.len()];
        out.par_chunks_mut(slab).enumerate().for_each(|(c0, chunk)| {
            let mut idx = vec![0usize; dims];
            idx[0] = c0;
            let mut back = vec![0usize; dims];
            for (k, v) in chunk.iter_mut().enumerate() {
                let i = c0 * slab + k;
                let mut acc = 0.0;
                for ch in &self.channels {
                    if self.shifted(&idx, ch, 1) {
                        let j = (i as isize + ch.offset) as usize;
                        acc += self.bond(ch, &idx, grid.p[i], grid.p[j]);
                    }
                    if self.shifted(&idx, ch, -1) {
                        let j = (i as isize - ch.offset) as usize;
                        back.copy_from_slice(&idx);
                        for &(a, e, _) in &ch.legs {
                            back[a] = (back[a] as i64 - e as i64) as usize;
                        }
                        acc -= self.bond(ch, &back, grid.p[j], grid.p[i]);
                    }
                }
                *v = acc / self.ds;
                increment(&mut idx[1..], self.cells);
            }
        });
        Ok(out)
    }

    /// One forward-Euler step. Rounding-level negative cells are clipped and
    /// anything below −1e−12 is reported in the log.
    pub fn step(&self, grid: &JointPdfGrid, dt: f64) -> Result<JointPdfGrid> {
        if !(dt >= 0.0) || dt > self.limit * (1.0 + 1e-12) {
            return Err(Error::CflViolation { dt, limit: self.limit });
        }
        let r = self.rate(grid)?;
        let mut out = grid.clone();
        let mut worst = 0.0f64;
        for (p, d) in out.p.iter_mut().zip(&r) {
            *p += dt * d;
            if *p < 0.0 {
                worst = worst.min(*p);
                *p = 0.0;
            }
        }
        if worst < -1e-12 {
            log::warn!("clipped negative density {worst:e} at t = {}", grid.t + dt);
        }
        out.t = grid.t + dt;
        Ok(out)
    }

    /// Advances to `t_end` with steps of at most `dt`, recording the grid
    /// every `every` steps and at the end.
    pub fn evolve(&self, grid: &JointPdfGrid, t_end: f64, dt: f64, every: usize) -> Result<Vec<JointPdfGrid>> {
        let steps = ((t_end - grid.t) / dt).ceil().max(0.0) as usize;
        let mut cur = grid.clone();
        let mut out = vec![cur.clone()];
        let t0 = grid.t;
        for k in 0..steps {
            let target = if k + 1 == steps { t_end } else { t0 + (k + 1) as f64 * dt };
            let mut next = self.step(&cur, target - cur.t)?;
            next.t = target;
            cur = next;
            if (k + 1) % every.max(1) == 0 || k + 1 == steps {
                out.push(cur.clone());
            }
        }
        Ok(out)
    }

    /// Face fluxes of one axis from centred directional derivatives.
    pub fn flux(&self, grid: &JointPdfGrid, axis: usize) -> Result<FluxField> {
        self.check(grid)?;
        let dims = grid.dims();
        if axis >= dims {
            return Err(invalid("axis", format!("{axis} out of range")));
        }
        let nc = self.cells;
        let ds = self.ds;
        let mut shape = vec![nc; dims];
        shape[axis] = nc + 1;
        let len: usize = shape.iter().product();
        let mut values = vec![0.0; len];
        let mut scale = vec![0.0; len];
        let relevant: Vec<&Channel> = self
            .channels
            .iter()
            .filter(|ch| ch.legs.iter().any(|l| l.0 == axis))
            .collect();
        let cell_index = |idx: &[usize]| idx.iter().fold(0usize, |acc, &i| acc * nc + i);
        let at = |idx: &[usize], a: usize, d: i64| -> Option<f64> {
            let v = idx[a] as i64 + d;
            if (0..nc as i64).contains(&v) {
                let mut j = idx.to_vec();
                j[a] = v as usize;
                Some(grid.p[cell_index(&j)])
            } else {
                None
            }
        };
        // centred derivative along e (one-sided at the edges)
        let dir = |idx: &[usize], ch: &Channel| -> f64 {
            let shift = |sign: i64| -> Option<f64> {
                let mut j = idx.to_vec();
                for &(a, e, _) in &ch.legs {
                    let v = idx[a] as i64 + sign * e as i64;
                    if !(0..nc as i64).contains(&v) {
                        return None;
                    }
                    j[a] = v as usize;
                }
                Some(grid.p[cell_index(&j)])
            };
            let here = grid.p[cell_index(idx)];
            match (shift(1), shift(-1)) {
                (Some(f), Some(b)) => (f - b) / (2.0 * ds),
                (Some(f), None) => (f - here) / ds,
                (None, Some(b)) => (here - b) / ds,
                (None, None) => 0.0,
            }
        };
        let partial = |idx: &[usize], a: usize| -> f64 {
            let here = grid.p[cell_index(idx)];
            match (at(idx, a, 1), at(idx, a, -1)) {
                (Some(f), Some(b)) => (f - b) / (2.0 * ds),
                (Some(f), None) => (f - here) / ds,
                (None, Some(b)) => (here - b) / ds,
                (None, None) => 0.0,
            }
        };
        let mut face = vec![0usize; dims];
        for k in 0..len {
            let fj = face[axis];
            let mut adjacent = Vec::with_capacity(2);
            if fj > 0 {
                let mut c = face.clone();
                c[axis] = fj - 1;
                adjacent.push(c);
            }
            if fj < nc {
                adjacent.push(face.clone());
            }
            let w = 1.0 / adjacent.len() as f64;
            let s = |a: usize| {
                if a == axis {
                    fj as f64 * ds
                } else {
                    (face[a] as f64 + 0.5) * ds
                }
            };
            let p_face: f64 = adjacent.iter().map(|c| grid.p[cell_index(c)]).sum::<f64>() * w;
            let (mut f, mut sc) = (0.0, 0.0);
            for ch in &relevant {
                let e_axis = ch.legs.iter().find(|l| l.0 == axis).map_or(0, |l| l.1) as f64;
                let d = ch.d_at(s);
                let g: f64 = adjacent.iter().map(|c| dir(c, ch)).sum::<f64>() * w;
                f += -0.5 * e_axis * d * (g - ch.beta * p_face);
                let parts: f64 = ch
                    .legs
                    .iter()
                    .map(|&(a, e, _)| (e as f64).abs() * adjacent.iter().map(|c| partial(c, a).abs()).sum::<f64>() * w)
                    .sum();
                sc += 0.5 * e_axis.abs() * d * (parts + ch.beta.abs() * p_face);
            }
            values[k] = f;
            scale[k] = sc;
            // advance the face multi-index in row-major order over `shape`
            for d in (0..dims).rev() {
                face[d] += 1;
                if face[d] < shape[d] {
                    break;
                }
                face[d] = 0;
            }
        }
        Ok(FluxField {
            axis,
            shape,
            values,
            scale,
        })
    }

    /// Instantaneous `d/dt (⟨s_a s_b⟩ − ⟨s_a⟩⟨s_b⟩)`.
    pub fn covariance_rate(&self, grid: &JointPdfGrid, a: usize, b: usize) -> Result<f64> {
        let r = self.rate(grid)?;
        let (sa, sb) = (grid.stride(a), grid.stride(b));
        let nc = grid.cells;
        let (mut dab, mut da, mut db) = (0.0, 0.0, 0.0);
        for (i, v) in r.iter().enumerate() {
            let x = (((i / sa) % nc) as f64 + 0.5) * grid.ds;
            let y = (((i / sb) % nc) as f64 + 0.5) * grid.ds;
            dab += x * y * v;
            da += x * v;
            db += y * v;
        }
        let vol = grid.cell_volume();
        Ok(vol * (dab - grid.mean(a) * db - grid.mean(b) * da))
    }
}

/// Face fluxes of mode `j` for a closed cluster.
pub fn zs_flux(grid: &JointPdfGrid, j: usize, tbl: &TriadTable, epsilon: f64, t_b: f64) -> Result<FluxField> {
    let axis = grid
        .axis_of(j)
        .ok_or_else(|| invalid("j", format!("mode {j} does not participate")))?;
    ZsOperator::new(grid, tbl, epsilon, t_b, &Closure::Drop)?.flux(grid, axis)
}

/// One step for a closed cluster. Builds the operator on every call; use
/// [`ZsOperator`] directly in loops.
pub fn zs_step(grid: &JointPdfGrid, tbl: &TriadTable, epsilon: f64, t_b: f64, dt: f64) -> Result<JointPdfGrid> {
    ZsOperator::new(grid, tbl, epsilon, t_b, &Closure::Drop)?.step(grid, dt)
}

/// Covariance of two participating modes along a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovariancePoint {
    pub t: f64,
    pub covariance: f64,
    /// Finite-difference rate (centred in the interior).
    pub rate: f64,
}

/// Covariance `⟨s_{j1}s_{j2}⟩ − ⟨s_{j1}⟩⟨s_{j2}⟩` and its rate along `traj`.
pub fn moment_rates(traj: &[JointPdfGrid], j1: usize, j2: usize) -> Result<Vec<CovariancePoint>> {
    let first = traj.first().ok_or_else(|| invalid("trajectory", "empty"))?;
    let a = first.axis_of(j1).ok_or_else(|| invalid("j1", "mode does not participate"))?;
    let b = first.axis_of(j2).ok_or_else(|| invalid("j2", "mode does not participate"))?;
    if a == b {
        return Err(invalid("pair", "j1 = j2"));
    }
    let cov: Vec<(f64, f64)> = traj.iter().map(|g| (g.t, g.covariance(a, b))).collect();
    let n = cov.len();
    Ok((0..n)
        .map(|i| {
            let (lo, hi) = (i.saturating_sub(1), (i + 1).min(n - 1));
            let rate = if hi > lo {
                (cov[hi].1 - cov[lo].1) / (cov[hi].0 - cov[lo].0)
            } else {
                0.0
            };
            CovariancePoint {
                t: cov[i].0,
                covariance: cov[i].1,
                rate,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modegrid::{Dispersion, InteractionModel, ModeSet};
    use num_complex::Complex64;

    fn linear_table() -> TriadTable {
        let ms = ModeSet::new(2.0 * PI, 1, 3).unwrap();
        TriadTable::build(
            &ms,
            Dispersion::new(1.0, 1.0).unwrap(),
            &InteractionModel::Constant { v0: Complex64::new(1.0, 0.0) },
        )
    }

    fn cluster(tbl: &TriadTable) -> Vec<usize> {
        let ms = tbl.modes();
        [1, 2, 3].iter().map(|&k| ms.position([k, 0]).unwrap()).collect()
    }

    #[test]
    fn grid_limits_enforced() {
        assert!(JointPdfGrid::zeros(vec![0, 1, 2, 3, 4], 8, 1.0).is_err());
        assert!(JointPdfGrid::zeros(vec![0, 1], 65, 1.0).is_err());
        assert!(JointPdfGrid::zeros(vec![1, 1], 8, 1.0).is_err());
    }

    #[test]
    fn zero_epsilon_gives_zero_flux() {
        let tbl = linear_table();
        let g = JointPdfGrid::exponential_product(cluster(&tbl), 12, 10.0, &[1.0, 0.7, 0.4]).unwrap();
        let f = zs_flux(&g, g.modes[0], &tbl, 0.0, 10.0).unwrap();
        assert_eq!(f.max_abs(), 0.0);
    }

    #[test]
    fn flux_vanishes_on_origin_face() {
        let tbl = linear_table();
        let g = JointPdfGrid::exponential_product(cluster(&tbl), 12, 10.0, &[1.0, 0.7, 0.4]).unwrap();
        for a in 0..3 {
            let f = zs_flux(&g, g.modes[a], &tbl, 0.1, 10.0).unwrap();
            let stride: usize = f.shape[a + 1..].iter().product();
            for (k, v) in f.values.iter().enumerate() {
                if (k / stride) % f.shape[a] == 0 {
                    assert_eq!(*v, 0.0);
                }
            }
            assert!(f.max_abs() > 0.0);
        }
    }

    #[test]
    fn closed_cluster_keeps_two_channels() {
        let tbl = linear_table();
        let g = JointPdfGrid::zeros(cluster(&tbl), 8, 10.0).unwrap();
        let op = ZsOperator::new(&g, &tbl, 0.1, 10.0, &Closure::Drop).unwrap();
        assert_eq!(op.channel_count(), 2);
        let mf = ZsOperator::new(&g, &tbl, 0.1, 10.0, &Closure::MeanField(vec![1.0; 6])).unwrap();
        assert!(mf.channel_count() > 2);
    }

    #[test]
    fn factorized_start_has_zero_covariance() {
        let tbl = linear_table();
        let g = JointPdfGrid::exponential_product(cluster(&tbl), 16, 10.0, &[1.0, 0.7, 0.4]).unwrap();
        assert!(g.covariance(0, 1).abs() < 1e-14);
        let pts = moment_rates(&[g.clone()], g.modes[0], g.modes[1]).unwrap();
        assert!(pts[0].covariance.abs() < 1e-14);
    }
}
