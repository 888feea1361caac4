//! Run configuration: TOML text with one table per block.
//!
//! Every key has a default, listed in [`RunConfig::default`] and the block
//! `Default` impls below. Keys left unset that depend on other blocks are
//! filled in by [`RunConfig::resolve`], and the resolved form is what gets
//! hashed and echoed into outputs.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use wtlab::ensemble::IntensityLaw;
use wtlab::modegrid::{Dispersion, InteractionModel, ModeSet, TriadTable};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

fn bad(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

/// A lattice index written as `3` (1D) or `[1, -2]` (2D).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModeRef {
    Scalar(i32),
    Vector([i32; 2]),
}

impl ModeRef {
    fn index(self) -> [i32; 2] {
        match self {
            ModeRef::Scalar(x) => [x, 0],
            ModeRef::Vector(v) => v,
        }
    }

    /// Position of this mode in `ms`.
    pub fn locate(self, ms: &ModeSet, field: &str) -> Result<usize, ConfigError> {
        if ms.dim() == 2 && matches!(self, ModeRef::Scalar(_)) {
            return Err(bad(field, "2D lattices need [x, y] mode indices"));
        }
        ms.position(self.index())
            .ok_or_else(|| bad(field, format!("{self} is not a mode of the lattice")))
    }
}

impl fmt::Display for ModeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModeRef::Scalar(x) => write!(f, "{x}"),
            ModeRef::Vector([x, y]) => write!(f, "[{x}, {y}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Box side.
    #[serde(rename = "L")]
    pub box_len: f64,
    pub d: usize,
    pub lmax: u32,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            box_len: 2.0 * PI,
            d: 1,
            lmax: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DispersionConfig {
    pub c: f64,
    pub alpha: f64,
}

impl Default for DispersionConfig {
    fn default() -> Self {
        Self { c: 1.0, alpha: 1.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Constant,
    PowerLaw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InteractionConfig {
    pub family: Family,
    pub v0: f64,
    pub v0_im: f64,
    pub beta: f64,
}

impl Default for InteractionConfig {
    fn default() -> Self {
        Self {
            family: Family::Constant,
            v0: 1.0,
            v0_im: 0.0,
            beta: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsConfig {
    pub epsilon: f64,
    pub h: f64,
    pub t_end: f64,
    /// Snapshot times; 11 evenly spaced points on `[0, t_end]` when unset.
    pub snapshots: Option<Vec<f64>>,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            h: 0.02,
            t_end: 10.0,
            snapshots: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Law {
    Exponential,
    Deterministic,
}

/// Handling of members whose amplitudes diverge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceMode {
    Abort,
    Exclude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    pub law: Law,
    /// Mean intensity of the lowest-frequency mode.
    pub n0: f64,
    /// `n_j = n0 (ω_j / ω_min)^(−exponent)`.
    pub exponent: f64,
    pub members: u64,
    pub seed: u64,
    /// Mode tuples (up to 3 modes) with joint intensity histograms.
    pub joint_tuples: Vec<Vec<ModeRef>>,
    /// Bins per axis for factorization errors; must divide 32.
    pub factor_bins: usize,
    pub divergence: DivergenceMode,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            law: Law::Exponential,
            n0: 1.0,
            exponent: 0.0,
            members: 1000,
            seed: 0,
            joint_tuples: Vec::new(),
            factor_bins: 8,
            divergence: DivergenceMode::Abort,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KineticsConfig {
    /// Broadening time; `dynamics.t_end` when unset.
    pub t_b: Option<f64>,
    pub dt: f64,
    /// Spectrum evolution horizon; `dynamics.t_end` when unset.
    pub t_end: Option<f64>,
    /// Mode whose one-mode PDF is solved; the first lattice mode when unset.
    pub pdf_mode: Option<ModeRef>,
    /// `20 · max n` when unset.
    pub s_max: Option<f64>,
    pub cells: usize,
    /// Relaxation time of the PDF solve in units of `1/γ`.
    pub relax: f64,
    /// Constant probability flux for the steady F ≠ 0 curve (0 to skip).
    pub flux: f64,
    pub s0: f64,
}

impl Default for KineticsConfig {
    fn default() -> Self {
        Self {
            t_b: None,
            dt: 0.1,
            t_end: None,
            pdf_mode: None,
            s_max: None,
            cells: 512,
            relax: 10.0,
            flux: 0.0,
            s0: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosureMode {
    Drop,
    MeanField,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZspdfConfig {
    pub modes: Vec<ModeRef>,
    pub cells: usize,
    /// `10 · max n` when unset.
    pub s_max: Option<f64>,
    pub closure: ClosureMode,
    /// Initial means per participating mode; the ensemble spectrum when unset.
    pub n: Option<Vec<f64>>,
    /// Start from the thermodynamic product at this temperature instead.
    pub temperature: Option<f64>,
    /// Horizon; half a kinetic nonlinear time when unset.
    pub t_end: Option<f64>,
    /// Step; 0.9 of the stability limit when unset.
    pub dt: Option<f64>,
    pub frames: usize,
}

impl Default for ZspdfConfig {
    fn default() -> Self {
        Self {
            modes: vec![ModeRef::Scalar(1), ModeRef::Scalar(2), ModeRef::Scalar(3)],
            cells: 32,
            s_max: None,
            closure: ClosureMode::Drop,
            n: None,
            temperature: None,
            t_end: None,
            dt: None,
            frames: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpandConfig {
    pub epsilons: Vec<f64>,
    pub t: f64,
    pub h: f64,
    /// Initial amplitude modulus of every mode (phases random from the seed).
    pub amplitude: f64,
}

impl Default for ExpandConfig {
    fn default() -> Self {
        Self {
            epsilons: vec![1e-3, 2e-3, 4e-3, 8e-3],
            t: 5.0,
            h: 1e-3,
            amplitude: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub dispersion: DispersionConfig,
    pub interaction: InteractionConfig,
    pub dynamics: DynamicsConfig,
    pub ensemble: EnsembleConfig,
    pub kinetics: KineticsConfig,
    pub zspdf: ZspdfConfig,
    pub expand: ExpandConfig,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn positive(field: &str, x: f64) -> Result<(), ConfigError> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(bad(field, format!("must be positive and finite, got {x}")))
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            line: e.span().map_or(0, |s| line_of(text, s.start)),
            message: e.message().to_string(),
        })
    }

    /// Parses, resolves and validates.
    pub fn load(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::parse(text)?;
        cfg.validate()?;
        cfg.resolve()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Fills every unset dependent key.
    pub fn resolve(&mut self) -> Result<(), ConfigError> {
        let t_end = self.dynamics.t_end;
        if self.dynamics.snapshots.is_none() {
            self.dynamics.snapshots = Some((0..=10).map(|i| t_end * i as f64 / 10.0).collect());
        }
        self.kinetics.t_b.get_or_insert(t_end);
        self.kinetics.t_end.get_or_insert(t_end);
        let tbl = self.table()?;
        let n = self.spectrum(&tbl);
        let nmax = n.iter().fold(0.0f64, |a, &b| a.max(b));
        if self.kinetics.pdf_mode.is_none() {
            let l = tbl.modes().index(0);
            self.kinetics.pdf_mode = Some(if self.grid.d == 1 {
                ModeRef::Scalar(l[0])
            } else {
                ModeRef::Vector(l)
            });
        }
        self.kinetics.s_max.get_or_insert(20.0 * nmax);
        if self.zspdf.n.is_none() && self.zspdf.temperature.is_none() {
            let idx = self.zspdf_modes(&tbl)?;
            self.zspdf.n = Some(idx.iter().map(|&j| n[j]).collect());
        }
        if self.zspdf.s_max.is_none() {
            let m = match (&self.zspdf.n, self.zspdf.temperature) {
                (_, Some(temp)) => {
                    let idx = self.zspdf_modes(&tbl)?;
                    idx.iter().map(|&j| temp / tbl.omega()[j]).fold(0.0, f64::max)
                }
                (Some(v), None) => v.iter().copied().fold(0.0, f64::max),
                (None, None) => nmax,
            };
            self.zspdf.s_max = Some(10.0 * m);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let g = &self.grid;
        positive("grid.L", g.box_len)?;
        if !(g.d == 1 || g.d == 2) {
            return Err(bad("grid.d", format!("must be 1 or 2, got {}", g.d)));
        }
        if g.lmax == 0 {
            return Err(bad("grid.lmax", "must be at least 1"));
        }
        if g.lmax > 64 {
            return Err(bad("grid.lmax", "must be at most 64"));
        }
        positive("dispersion.c", self.dispersion.c)?;
        if !(self.dispersion.alpha.is_finite() && self.dispersion.alpha > 0.0) {
            return Err(bad("dispersion.alpha", "must be positive"));
        }
        let i = &self.interaction;
        for (f, x) in [("interaction.v0", i.v0), ("interaction.v0_im", i.v0_im), ("interaction.beta", i.beta)] {
            if !x.is_finite() {
                return Err(bad(f, "must be finite"));
            }
        }
        let d = &self.dynamics;
        if !(d.epsilon.is_finite() && d.epsilon >= 0.0) {
            return Err(bad("dynamics.epsilon", "must be non-negative and finite"));
        }
        positive("dynamics.h", d.h)?;
        if !(d.t_end.is_finite() && d.t_end >= 0.0) {
            return Err(bad("dynamics.t_end", "must be non-negative"));
        }
        if let Some(s) = &d.snapshots {
            if s.is_empty() {
                return Err(bad("dynamics.snapshots", "need at least one time"));
            }
            if s.iter().any(|t| !(t.is_finite() && *t >= 0.0 && *t <= d.t_end)) {
                return Err(bad("dynamics.snapshots", "times must lie in [0, t_end]"));
            }
            if s.windows(2).any(|w| w[1] <= w[0]) {
                return Err(bad("dynamics.snapshots", "times must be strictly increasing"));
            }
        }
        let e = &self.ensemble;
        positive("ensemble.n0", e.n0)?;
        if !e.exponent.is_finite() {
            return Err(bad("ensemble.exponent", "must be finite"));
        }
        if e.members == 0 {
            return Err(bad("ensemble.members", "must be at least 1"));
        }
        if e.joint_tuples.iter().any(|t| t.is_empty() || t.len() > 3) {
            return Err(bad("ensemble.joint_tuples", "tuples hold 1 to 3 modes"));
        }
        if e.factor_bins == 0 || 32 % e.factor_bins != 0 {
            return Err(bad("ensemble.factor_bins", "must divide 32"));
        }
        let k = &self.kinetics;
        if let Some(t) = k.t_b {
            positive("kinetics.t_b", t)?;
        }
        positive("kinetics.dt", k.dt)?;
        if let Some(t) = k.t_end {
            if !(t.is_finite() && t >= 0.0) {
                return Err(bad("kinetics.t_end", "must be non-negative"));
            }
        }
        if let Some(s) = k.s_max {
            positive("kinetics.s_max", s)?;
        }
        if k.cells < 2 {
            return Err(bad("kinetics.cells", "must be at least 2"));
        }
        positive("kinetics.relax", k.relax)?;
        if !k.flux.is_finite() {
            return Err(bad("kinetics.flux", "must be finite"));
        }
        positive("kinetics.s0", k.s0)?;
        if let Some(s) = k.s_max {
            if k.s0 >= s {
                return Err(bad("kinetics.s0", "must be below kinetics.s_max"));
            }
        }
        let z = &self.zspdf;
        if z.modes.is_empty() || z.modes.len() > wtlab::zspdf::MAX_MODES {
            return Err(bad("zspdf.modes", format!("need 1 to {} modes", wtlab::zspdf::MAX_MODES)));
        }
        if !(2..=wtlab::zspdf::MAX_CELLS).contains(&z.cells) {
            return Err(bad("zspdf.cells", format!("must be in 2..={}", wtlab::zspdf::MAX_CELLS)));
        }
        if let Some(s) = z.s_max {
            positive("zspdf.s_max", s)?;
        }
        if let Some(n) = &z.n {
            if n.len() != z.modes.len() {
                return Err(bad("zspdf.n", "one mean per participating mode"));
            }
            for &x in n {
                positive("zspdf.n", x)?;
            }
        }
        if let Some(t) = z.temperature {
            positive("zspdf.temperature", t)?;
        }
        if let Some(t) = z.t_end {
            if !(t.is_finite() && t >= 0.0) {
                return Err(bad("zspdf.t_end", "must be non-negative"));
            }
        }
        if let Some(t) = z.dt {
            positive("zspdf.dt", t)?;
        }
        if z.frames == 0 {
            return Err(bad("zspdf.frames", "must be at least 1"));
        }
        let x = &self.expand;
        if x.epsilons.len() < 2 {
            return Err(bad("expand.epsilons", "need at least two values for a slope"));
        }
        for &v in &x.epsilons {
            positive("expand.epsilons", v)?;
        }
        positive("expand.t", x.t)?;
        positive("expand.h", x.h)?;
        positive("expand.amplitude", x.amplitude)?;
        Ok(())
    }

    pub fn modeset(&self) -> Result<ModeSet, ConfigError> {
        ModeSet::new(self.grid.box_len, self.grid.d, self.grid.lmax).map_err(|e| bad("grid", e.to_string()))
    }

    pub fn table(&self) -> Result<TriadTable, ConfigError> {
        let ms = self.modeset()?;
        let disp = Dispersion::new(self.dispersion.c, self.dispersion.alpha).map_err(|e| bad("dispersion", e.to_string()))?;
        let v0 = Complex64::new(self.interaction.v0, self.interaction.v0_im);
        let model = match self.interaction.family {
            Family::Constant => InteractionModel::Constant { v0 },
            Family::PowerLaw => InteractionModel::PowerLaw {
                v0,
                beta: self.interaction.beta,
            },
        };
        Ok(TriadTable::build(&ms, disp, &model))
    }

    /// Initial mean intensities `n0 (ω_j/ω_min)^(−exponent)`.
    pub fn spectrum(&self, tbl: &TriadTable) -> Vec<f64> {
        let w = tbl.omega();
        let wmin = w.iter().copied().fold(f64::INFINITY, f64::min);
        w.iter().map(|&x| self.ensemble.n0 * (x / wmin).powf(-self.ensemble.exponent)).collect()
    }

    pub fn law(&self, tbl: &TriadTable) -> IntensityLaw {
        let n = self.spectrum(tbl);
        match self.ensemble.law {
            Law::Exponential => IntensityLaw::Exponential(n),
            Law::Deterministic => IntensityLaw::Deterministic(n),
        }
    }

    pub fn zspdf_modes(&self, tbl: &TriadTable) -> Result<Vec<usize>, ConfigError> {
        let idx = self
            .zspdf
            .modes
            .iter()
            .map(|m| m.locate(tbl.modes(), "zspdf.modes"))
            .collect::<Result<Vec<_>, _>>()?;
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != idx.len() {
            return Err(bad("zspdf.modes", "modes must be distinct"));
        }
        Ok(idx)
    }

    pub fn snapshots(&self) -> Vec<f64> {
        self.dynamics.snapshots.clone().unwrap_or_else(|| vec![0.0, self.dynamics.t_end])
    }
}
