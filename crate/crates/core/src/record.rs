//! Binary snapshot records and trajectory CSV.
//!
//! A record is little-endian throughout:
//!
//! ```text
//! b"WTLB"  u32 version  u32 kind
//! u64 N    u64 d        f64 L
//! u64 len  [len bytes of UTF-8 config text]
//! payload
//! ```
//!
//! Trajectory payload: `u64 frames`, then per frame `f64 t` followed by
//! `N` pairs `(Re a_l, Im a_l)` in mode order. Tensor payload: the output of
//! [`JointPdfGrid::write_tensor`].

use std::io::{Read, Write};

use num_complex::Complex64;

use crate::dynamics::WaveState;
use crate::error::{invalid, Error, Result};
use crate::modegrid::{fmt_f64, ModeSet};
use crate::zspdf::JointPdfGrid;

pub const MAGIC: &[u8; 4] = b"WTLB";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum RecordKind {
    Trajectory = 1,
    Tensor = 2,
}

/// Common header of every record.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordHeader {
    pub kind: RecordKind,
    pub modes: u64,
    pub dim: u64,
    pub box_len: f64,
    pub config: String,
}

fn write_header<W: Write>(out: &mut W, kind: RecordKind, ms: &ModeSet, config: &str) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(kind as u32).to_le_bytes())?;
    out.write_all(&(ms.len() as u64).to_le_bytes())?;
    out.write_all(&(ms.dim() as u64).to_le_bytes())?;
    out.write_all(&ms.box_len().to_le_bytes())?;
    out.write_all(&(config.len() as u64).to_le_bytes())?;
    out.write_all(config.as_bytes())?;
    Ok(())
}

/// Writes a trajectory record.
pub fn write_trajectory<W: Write>(mut out: W, ms: &ModeSet, config: &str, frames: &[WaveState]) -> Result<()> {
    if let Some(f) = frames.iter().find(|f| f.len() != ms.len()) {
        return Err(Error::DimensionMismatch {
            expected: ms.len(),
            got: f.len(),
        });
    }
    write_header(&mut out, RecordKind::Trajectory, ms, config)?;
    out.write_all(&(frames.len() as u64).to_le_bytes())?;
    for f in frames {
        out.write_all(&f.t.to_le_bytes())?;
        for z in &f.a {
            out.write_all(&z.re.to_le_bytes())?;
            out.write_all(&z.im.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Writes a joint-PDF tensor record.
pub fn write_tensor<W: Write>(mut out: W, ms: &ModeSet, config: &str, grid: &JointPdfGrid) -> Result<()> {
    write_header(&mut out, RecordKind::Tensor, ms, config)?;
    grid.write_tensor(out)
}

struct Cursor<R: Read>(R);

impl<R: Read> Cursor<R> {
    fn bytes<const K: usize>(&mut self) -> Result<[u8; K]> {
        let mut b = [0u8; K];
        self.0.read_exact(&mut b)?;
        Ok(b)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn len(&mut self, what: &'static str) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n)
            .ok()
            .filter(|&n| n < 1 << 40)
            .ok_or_else(|| invalid(what, format!("implausible length {n}")))
    }
}

fn read_header<R: Read>(c: &mut Cursor<R>) -> Result<RecordHeader> {
    if &c.bytes::<4>()? != MAGIC {
        return Err(invalid("record", "bad magic"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(invalid("record", format!("unsupported version {version}")));
    }
    let kind = match c.u32()? {
        1 => RecordKind::Trajectory,
        2 => RecordKind::Tensor,
        k => return Err(invalid("record", format!("unknown kind {k}"))),
    };
    let modes = c.u64()?;
    let dim = c.u64()?;
    let box_len = c.f64()?;
    let len = c.len("record.config")?;
    let mut cfg = vec![0u8; len];
    c.0.read_exact(&mut cfg)?;
    let config = String::from_utf8(cfg).map_err(|_| invalid("record.config", "not UTF-8"))?;
    Ok(RecordHeader {
        kind,
        modes,
        dim,
        box_len,
        config,
    })
}

/// Reads a trajectory record back.
pub fn read_trajectory<R: Read>(input: R) -> Result<(RecordHeader, Vec<WaveState>)> {
    let mut c = Cursor(input);
    let h = read_header(&mut c)?;
    if h.kind != RecordKind::Trajectory {
        return Err(invalid("record", "not a trajectory record"));
    }
    let frames = c.len("record.frames")?;
    let n = h.modes as usize;
    let mut out = Vec::with_capacity(frames.min(1 << 16));
    for _ in 0..frames {
        let t = c.f64()?;
        let a = (0..n)
            .map(|_| Ok(Complex64::new(c.f64()?, c.f64()?)))
            .collect::<Result<Vec<_>>>()?;
        out.push(WaveState::new(t, a));
    }
    Ok((h, out))
}

/// Reads a tensor record back.
pub fn read_tensor<R: Read>(input: R) -> Result<(RecordHeader, JointPdfGrid)> {
    let mut c = Cursor(input);
    let h = read_header(&mut c)?;
    if h.kind != RecordKind::Tensor {
        return Err(invalid("record", "not a tensor record"));
    }
    let dims = c.len("record.dims")?;
    let cells = c.len("record.cells")?;
    let ds = c.f64()?;
    let t = c.f64()?;
    let modes = (0..dims).map(|_| c.len("record.modes")).collect::<Result<Vec<_>>>()?;
    let mut g = JointPdfGrid::zeros(modes, cells, ds * cells as f64)?;
    g.ds = ds;
    g.t = t;
    for v in g.p.iter_mut() {
        *v = c.f64()?;
    }
    Ok((h, g))
}

/// Column label of mode `i`: its lattice index, `x` or `x_y`.
pub fn mode_label(ms: &ModeSet, i: usize) -> String {
    let l = ms.index(i);
    if ms.dim() == 1 {
        l[0].to_string()
    } else {
        format!("{}_{}", l[0], l[1])
    }
}

/// Trajectory CSV: `t`, then `re_<l>`, `im_<l>` per mode.
pub fn write_trajectory_csv<W: Write>(out: W, ms: &ModeSet, frames: &[WaveState]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    for i in 0..ms.len() {
        let l = mode_label(ms, i);
        header.push(format!("re_{l}"));
        header.push(format!("im_{l}"));
    }
    w.write_record(&header)?;
    for f in frames {
        let mut row = Vec::with_capacity(header.len());
        row.push(fmt_f64(f.t));
        for z in &f.a {
            row.push(fmt_f64(z.re));
            row.push(fmt_f64(z.im));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
