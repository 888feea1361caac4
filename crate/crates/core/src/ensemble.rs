//! Random-phase ensembles, many-trajectory runs and the statistics used to
//! test whether phase randomness and amplitude independence survive the
//! nonlinear evolution.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::dynamics::{advance, IntegratorConfig, Rk4, WaveState};
use crate::error::{invalid, Error, Result};
use crate::ks::ks_test;
use crate::modegrid::TriadTable;
use crate::rng;

/// Members per accumulation block. Fixes the shape of the reduction tree.
pub const BLOCK: u64 = 64;

/// Bins per axis of intensity histograms.
pub const HIST_BINS: usize = 32;

/// Highest harmonic tracked by [`phase_harmonic`].
pub const MAX_HARMONIC: usize = 3;

/// Per-mode intensity law of an essentially-RPA ensemble.
#[derive(Debug, Clone, PartialEq)]
pub enum IntensityLaw {
    /// `s_j ~ Exp(mean n_j)`: the Gaussian-field law.
    Exponential(Vec<f64>),
    /// `s_j` fixed.
    Deterministic(Vec<f64>),
}

impl IntensityLaw {
    pub fn len(&self) -> usize {
        match self {
            IntensityLaw::Exponential(v) | IntensityLaw::Deterministic(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn means(&self) -> &[f64] {
        match self {
            IntensityLaw::Exponential(v) | IntensityLaw::Deterministic(v) => v,
        }
    }
}

/// Independent uniform phases and independent intensities, reproducible per
/// `(seed, member, mode)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RpaSampler {
    pub law: IntensityLaw,
    pub seed: u64,
}

impl RpaSampler {
    pub fn new(law: IntensityLaw, seed: u64) -> Result<Self> {
        if law.means().iter().any(|&s| !(s.is_finite() && s >= 0.0)) {
            return Err(invalid("ensemble.n", "intensities must be finite and non-negative"));
        }
        Ok(Self { law, seed })
    }

    /// Draws member `member`: `a_j = √s_j e^{iθ_j}`.
    pub fn sample_initial(&self, member: u64) -> WaveState {
        let a = (0..self.law.len())
            .map(|j| {
                let mut r = rng::stream(self.seed, member, j as u64);
                let theta = 2.0 * PI * rng::uniform(&mut r);
                let s = match &self.law {
                    IntensityLaw::Exponential(n) => -n[j] * (1.0 - rng::uniform(&mut r)).ln(),
                    IntensityLaw::Deterministic(s) => s[j],
                };
                Complex64::from_polar(s.sqrt(), theta)
            })
            .collect();
        WaveState::new(0.0, a)
    }
}

/// What to record at each snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsLayout {
    pub times: Vec<f64>,
    /// Upper edge of each mode's intensity histogram.
    pub hist_max: Vec<f64>,
    /// Mode tuples (1 to 3 modes) with joint intensity histograms.
    pub joint_tuples: Vec<Vec<usize>>,
    /// Keep raw phase angles for KS tests.
    pub keep_phases: bool,
}

impl StatsLayout {
    /// Histogram ranges of ten means (exponential) or twice the value.
    pub fn for_sampler(sampler: &RpaSampler, times: Vec<f64>) -> Self {
        let hist_max = match &sampler.law {
            IntensityLaw::Exponential(n) => n.iter().map(|&x| 10.0 * x.max(f64::MIN_POSITIVE)).collect(),
            IntensityLaw::Deterministic(s) => s.iter().map(|&x| 2.0 * x.max(f64::MIN_POSITIVE)).collect(),
        };
        Self {
            times,
            hist_max,
            joint_tuples: Vec::new(),
            keep_phases: true,
        }
    }

    pub fn validate(&self, modes: usize) -> Result<()> {
        if self.times.is_empty() {
            return Err(invalid("dynamics.snapshots", "at least one snapshot time required"));
        }
        if self.times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || self.times.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("dynamics.snapshots", "times must be finite, non-negative and sorted"));
        }
        if self.hist_max.len() != modes || self.hist_max.iter().any(|h| !(*h > 0.0)) {
            return Err(invalid("ensemble.hist_max", "one positive range per mode required"));
        }
        for tup in &self.joint_tuples {
            if tup.is_empty() || tup.len() > 3 || tup.iter().any(|&j| j >= modes) {
                return Err(invalid("ensemble.joint_tuples", "tuples must hold 1 to 3 valid modes"));
            }
        }
        Ok(())
    }
}

/// Running sums at one snapshot time.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotStats {
    pub t: f64,
    pub count: u64,
    /// Σ ψ_j^μ for μ = 1..=3.
    pub psi: Vec<[Complex64; MAX_HARMONIC]>,
    /// Number of members with a defined phase (non-zero amplitude).
    pub psi_count: Vec<u64>,
    /// Σ s_j^q for q = 1..=6.
    pub s_pow: Vec<[f64; 6]>,
    /// Σ s₁s₂, Σ s₁²s₂, Σ s₁s₂², Σ s₁²s₂² for every pair j₁ < j₂.
    pub pairs: Vec<[f64; 4]>,
    pub hist: Vec<Vec<u64>>,
    pub joint: Vec<Vec<u64>>,
    pub phases: Vec<Vec<f64>>,
}

fn pair_index(n: usize, j1: usize, j2: usize) -> usize {
    debug_assert!(j1 < j2);
    j1 * (2 * n - j1 - 1) / 2 + (j2 - j1 - 1)
}

fn bin(s: f64, max: f64) -> usize {
    ((s / max * HIST_BINS as f64) as usize).min(HIST_BINS - 1)
}

impl SnapshotStats {
    fn new(t: f64, n: usize, layout: &StatsLayout) -> Self {
        Self {
            t,
            count: 0,
            psi: vec![[Complex64::new(0.0, 0.0); MAX_HARMONIC]; n],
            psi_count: vec![0; n],
            s_pow: vec![[0.0; 6]; n],
            pairs: vec![[0.0; 4]; n * n.saturating_sub(1) / 2],
            hist: vec![vec![0; HIST_BINS]; n],
            joint: layout
                .joint_tuples
                .iter()
                .map(|tup| vec![0; HIST_BINS.pow(tup.len() as u32)])
                .collect(),
            phases: if layout.keep_phases { vec![Vec::new(); n] } else { Vec::new() },
        }
    }

    pub fn modes(&self) -> usize {
        self.s_pow.len()
    }

    fn record(&mut self, state: &WaveState, layout: &StatsLayout) {
        let n = state.len();
        self.count += 1;
        let s: Vec<f64> = state.a.iter().map(|z| z.norm_sqr()).collect();
        for j in 0..n {
            if let Some(psi) = state.phase_factor(j) {
                let mut p = psi;
                for mu in 0..MAX_HARMONIC {
                    self.psi[j][mu] += p;
                    p *= psi;
                }
                self.psi_count[j] += 1;
                if layout.keep_phases {
                    self.phases[j].push(state.a[j].arg().rem_euclid(2.0 * PI));
                }
            }
            let mut q = 1.0;
            for slot in self.s_pow[j].iter_mut() {
                q *= s[j];
                *slot += q;
            }
            self.hist[j][bin(s[j], layout.hist_max[j])] += 1;
        }
        for j1 in 0..n {
            for j2 in j1 + 1..n {
                let p = &mut self.pairs[pair_index(n, j1, j2)];
                let (x, y) = (s[j1], s[j2]);
                p[0] += x * y;
                p[1] += x * x * y;
                p[2] += x * y * y;
                p[3] += x * x * y * y;
            }
        }
        for (h, tup) in self.joint.iter_mut().zip(&layout.joint_tuples) {
            let mut idx = 0;
            for &j in tup {
                idx = idx * HIST_BINS + bin(s[j], layout.hist_max[j]);
            }
            h[idx] += 1;
        }
    }

    fn merge(&mut self, other: &SnapshotStats) {
        self.count += other.count;
        for (a, b) in self.psi.iter_mut().zip(&other.psi) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.psi_count.iter_mut().zip(&other.psi_count) {
            *a += b;
        }
        for (a, b) in self.s_pow.iter_mut().zip(&other.s_pow) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.pairs.iter_mut().zip(&other.pairs) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.hist.iter_mut().chain(self.joint.iter_mut()).zip(other.hist.iter().chain(&other.joint)) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.phases.iter_mut().zip(&other.phases) {
            a.extend_from_slice(b);
        }
    }
}

/// Ensemble statistics at every snapshot time.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsAccumulator {
    pub layout: StatsLayout,
    pub snapshots: Vec<SnapshotStats>,
    /// Members left out under [`Divergence::Exclude`], in increasing order.
    pub excluded: Vec<u64>,
}

impl StatsAccumulator {
    pub fn new(layout: StatsLayout, modes: usize) -> Self {
        let snapshots = layout.times.iter().map(|&t| SnapshotStats::new(t, modes, &layout)).collect();
        Self {
            layout,
            snapshots,
            excluded: Vec::new(),
        }
    }

    pub fn members(&self) -> u64 {
        self.snapshots.first().map_or(0, |s| s.count)
    }

    /// Records one trajectory's state at snapshot `k`.
    pub fn record(&mut self, k: usize, state: &WaveState) {
        let layout = &self.layout;
        self.snapshots[k].record(state, layout);
    }

    /// Adds `other` into `self`. Phase samples are appended in order.
    pub fn merge(&mut self, other: &StatsAccumulator) {
        for (a, b) in self.snapshots.iter_mut().zip(&other.snapshots) {
            a.merge(b);
        }
        self.excluded.extend_from_slice(&other.excluded);
    }

    /// Index of the snapshot recorded at time `t`.
    pub fn snapshot_at(&self, t: f64) -> Option<usize> {
        self.snapshots.iter().position(|s| s.t == t)
    }
}

/// Pairwise reduction `((0+1)+(2+3))+...` whose shape depends only on the
/// number of parts.
pub fn tree_merge(mut parts: Vec<StatsAccumulator>) -> Option<StatsAccumulator> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                a.merge(&b);
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop()
}

/// What to do with a member whose amplitudes diverge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Divergence {
    /// Fail the whole run with [`Error::Member`].
    #[default]
    Abort,
    /// Drop the member from every snapshot and list it in
    /// [`StatsAccumulator::excluded`]. Statistics are then conditional on
    /// survival to the last snapshot.
    Exclude,
}

/// Runs `members` independent trajectories and accumulates statistics at the
/// layout's snapshot times, aborting on the first diverging member.
pub fn run_ensemble(
    sampler: &RpaSampler,
    tbl: &TriadTable,
    cfg: &IntegratorConfig,
    layout: &StatsLayout,
    members: u64,
) -> Result<StatsAccumulator> {
    run_ensemble_with(sampler, tbl, cfg, layout, members, Divergence::Abort)
}

/// [`run_ensemble`] with an explicit divergence policy. Blocks of [`BLOCK`]
/// members are accumulated sequentially and then merged by [`tree_merge`], so
/// the result does not depend on the number of worker threads.
pub fn run_ensemble_with(
    sampler: &RpaSampler,
    tbl: &TriadTable,
    cfg: &IntegratorConfig,
    layout: &StatsLayout,
    members: u64,
    policy: Divergence,
) -> Result<StatsAccumulator> {
    if members == 0 {
        return Err(invalid("ensemble.members", "must be at least 1"));
    }
    let n = tbl.mode_count();
    if sampler.law.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: sampler.law.len(),
        });
    }
    layout.validate(n)?;
    let blocks = members.div_ceil(BLOCK);
    let parts: Vec<StatsAccumulator> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = StatsAccumulator::new(layout.clone(), n);
            let mut stepper = Rk4::new(tbl, cfg.epsilon);
            let mut frames = Vec::with_capacity(layout.times.len());
            for member in b * BLOCK..((b + 1) * BLOCK).min(members) {
                let mut state = sampler.sample_initial(member);
                let rms0 = state.rms();
                frames.clear();
                let mut diverged = false;
                for &t in &layout.times {
                    match advance(&mut stepper, &mut state, cfg.h, t, rms0) {
                        Ok(()) => frames.push(state.clone()),
                        Err(Error::BlowUp { .. }) if policy == Divergence::Exclude => {
                            diverged = true;
                            break;
                        }
                        Err(e) => {
                            return Err(Error::Member {
                                member,
                                source: Box::new(e),
                            })
                        }
                    }
                }
                if diverged {
                    acc.excluded.push(member);
                    continue;
                }
                for (k, f) in frames.iter().enumerate() {
                    acc.record(k, f);
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    Ok(tree_merge(parts).expect("at least one block"))
}

/// A mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate<T> {
    pub value: T,
    pub stderr: f64,
}

fn snapshot(acc: &StatsAccumulator, k: usize) -> Result<&SnapshotStats> {
    acc.snapshots
        .get(k)
        .ok_or_else(|| invalid("snapshot", format!("index {k} out of range")))
}

fn mode_check(snap: &SnapshotStats, j: usize) -> Result<()> {
    if j >= snap.modes() {
        return Err(invalid("mode", format!("index {j} out of range")));
    }
    Ok(())
}

/// Empirical `⟨ψ_j^μ⟩` at snapshot `k`.
pub fn phase_harmonic(acc: &StatsAccumulator, k: usize, j: usize, mu: usize) -> Result<Estimate<Complex64>> {
    let snap = snapshot(acc, k)?;
    mode_check(snap, j)?;
    if mu == 0 {
        return Ok(Estimate {
            value: Complex64::new(1.0, 0.0),
            stderr: 0.0,
        });
    }
    if mu > MAX_HARMONIC {
        return Err(invalid("mu", format!("harmonic {mu} not tracked (max {MAX_HARMONIC})")));
    }
    let m = snap.psi_count[j] as f64;
    if m < 2.0 {
        return Err(Error::InsufficientSamples(format!("mode {j} has {m} defined phases")));
    }
    let mean = snap.psi[j][mu - 1] / m;
    // |ψ^μ| = 1 for every defined phase
    let var = ((m - m * mean.norm_sqr()) / (m - 1.0)).max(0.0);
    Ok(Estimate {
        value: mean,
        stderr: (var / m).sqrt(),
    })
}

/// Empirical `⟨A_j^{2p}⟩ = ⟨s_j^p⟩`, `p ∈ {1, 2, 3}`.
pub fn intensity_moment(acc: &StatsAccumulator, k: usize, j: usize, p: usize) -> Result<Estimate<f64>> {
    let snap = snapshot(acc, k)?;
    mode_check(snap, j)?;
    if !(1..=3).contains(&p) {
        return Err(invalid("p", format!("moment order {p} not in 1..=3")));
    }
    let m = snap.count as f64;
    let mean = snap.s_pow[j][p - 1] / m;
    let second = snap.s_pow[j][2 * p - 1] / m;
    let var = if m > 1.0 { (second - mean * mean).max(0.0) * m / (m - 1.0) } else { 0.0 };
    Ok(Estimate {
        value: mean,
        stderr: (var / m).sqrt(),
    })
}

/// `⟨A²_{j1} A²_{j2}⟩ − ⟨A²_{j1}⟩⟨A²_{j2}⟩` with a delta-method standard error.
pub fn pair_cumulant(acc: &StatsAccumulator, k: usize, j1: usize, j2: usize) -> Result<Estimate<f64>> {
    if j1 == j2 {
        return Err(invalid("pair", "j1 = j2 is not a pair cumulant"));
    }
    let snap = snapshot(acc, k)?;
    mode_check(snap, j1)?;
    mode_check(snap, j2)?;
    let (a, b) = if j1 < j2 { (j1, j2) } else { (j2, j1) };
    let n = snap.modes();
    let m = snap.count as f64;
    let p = snap.pairs[pair_index(n, a, b)];
    let (ma, mb) = (snap.s_pow[a][0] / m, snap.s_pow[b][0] / m);
    let (qa, qb) = (snap.s_pow[a][1] / m, snap.s_pow[b][1] / m);
    let exy = p[0] / m;
    let value = exy - ma * mb;
    // E[((x−μx)(y−μy))²] from raw moments
    let e_sq = p[3] / m - 2.0 * mb * p[1] / m - 2.0 * ma * p[2] / m + mb * mb * qa + ma * ma * qb
        + 4.0 * ma * mb * exy
        - 3.0 * ma * ma * mb * mb;
    let var = (e_sq - value * value).max(0.0);
    Ok(Estimate {
        value,
        stderr: (var / m).sqrt(),
    })
}

/// KS p-value for uniformity of mode `j`'s phase angle on `[0, 2π)`.
pub fn ks_uniformity(acc: &StatsAccumulator, k: usize, j: usize) -> Result<f64> {
    let snap = snapshot(acc, k)?;
    mode_check(snap, j)?;
    let phases = snap
        .phases
        .get(j)
        .ok_or_else(|| Error::InsufficientSamples("phase samples were not kept".into()))?;
    if phases.len() < 5 {
        return Err(Error::InsufficientSamples(format!("{} phase samples", phases.len())));
    }
    Ok(ks_test(phases, |x| (x / (2.0 * PI)).clamp(0.0, 1.0)))
}

/// Outcome of a factorization test.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizationReport {
    /// L1 distance between the joint histogram and the product of its marginals.
    pub error: f64,
    /// 95% quantile of the same distance for samples drawn from the product law.
    pub null_q95: f64,
    pub null_mean: f64,
    pub bins_per_axis: usize,
}

fn coarsen(counts: &[u64], dims: usize, factor: usize) -> Vec<u64> {
    let fine = HIST_BINS;
    let coarse = fine / factor;
    let mut out = vec![0u64; coarse.pow(dims as u32)];
    for (idx, &c) in counts.iter().enumerate() {
        let mut rem = idx;
        let mut digits = vec![0usize; dims];
        for d in (0..dims).rev() {
            digits[d] = rem % fine;
            rem /= fine;
        }
        let cidx = digits.iter().fold(0, |acc, &g| acc * coarse + g / factor);
        out[cidx] += c;
    }
    out
}

fn l1_to_product(counts: &[u64], dims: usize, bins: usize) -> (f64, Vec<f64>) {
    let total: u64 = counts.iter().sum();
    let total = total as f64;
    let mut marg = vec![vec![0.0; bins]; dims];
    for (idx, &c) in counts.iter().enumerate() {
        let mut rem = idx;
        for d in (0..dims).rev() {
            marg[d][rem % bins] += c as f64 / total;
            rem /= bins;
        }
    }
    let mut product = Vec::with_capacity(counts.len());
    let mut err = 0.0;
    for (idx, &c) in counts.iter().enumerate() {
        let mut rem = idx;
        let mut p = 1.0;
        for d in (0..dims).rev() {
            p *= marg[d][rem % bins];
            rem /= bins;
        }
        product.push(p);
        err += (c as f64 / total - p).abs();
    }
    (err, product)
}

/// L1 factorization error of joint histogram `tuple` at snapshot `k`, with a
/// parametric-bootstrap null distribution from the product of marginals.
/// `bins_per_axis` must divide 32; at least 5 samples per bin on average are
/// required.
pub fn factorization_error(
    acc: &StatsAccumulator,
    k: usize,
    tuple: usize,
    bins_per_axis: usize,
    resamples: usize,
    seed: u64,
) -> Result<FactorizationReport> {
    let snap = snapshot(acc, k)?;
    let counts = snap
        .joint
        .get(tuple)
        .ok_or_else(|| invalid("tuple", format!("joint histogram {tuple} not recorded")))?;
    let dims = acc.layout.joint_tuples[tuple].len();
    if bins_per_axis == 0 || HIST_BINS % bins_per_axis != 0 {
        return Err(invalid("bins_per_axis", format!("{bins_per_axis} does not divide {HIST_BINS}")));
    }
    let counts = coarsen(counts, dims, HIST_BINS / bins_per_axis);
    let total: u64 = counts.iter().sum();
    let cells = counts.len();
    if (total as f64) < 5.0 * cells as f64 {
        return Err(Error::InsufficientSamples(format!(
            "{total} samples for {cells} bins (< 5 expected per bin)"
        )));
    }
    let (error, product) = l1_to_product(&counts, dims, bins_per_axis);
    let mut cdf = Vec::with_capacity(cells);
    let mut run = 0.0;
    for p in &product {
        run += p;
        cdf.push(run);
    }
    let mut nulls: Vec<f64> = (0..resamples)
        .map(|r| {
            let mut g = rng::stream(seed, r as u64, 0);
            let mut sample = vec![0u64; cells];
            for _ in 0..total {
                let u = rng::uniform(&mut g) * run;
                let i = cdf.partition_point(|&c| c <= u).min(cells - 1);
                sample[i] += 1;
            }
            l1_to_product(&sample, dims, bins_per_axis).0
        })
        .collect();
    nulls.sort_by(f64::total_cmp);
    let null_mean = nulls.iter().sum::<f64>() / nulls.len().max(1) as f64;
    let null_q95 = if nulls.is_empty() {
        f64::NAN
    } else {
        nulls[((0.95 * nulls.len() as f64).ceil() as usize).clamp(1, nulls.len()) - 1]
    };
    Ok(FactorizationReport {
        error,
        null_q95,
        null_mean,
        bins_per_axis,
    })
}
