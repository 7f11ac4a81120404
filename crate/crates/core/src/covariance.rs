//! Per-frequency covariance statistics between two microphone groups.
//!
//! A [`CovariancePair`] holds, for every STFT bin, the group-A
//! auto-covariance `P_AA = E{m_A m_A^H}` and the cross-covariance
//! `P_BA = E{m_B m_A^H}`. These are the only statistics any relative
//! transfer matrix estimator needs, and for mutually independent sources
//! they are additive, which is what makes covariance subtraction work.

use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{Complex64, ComplexMatrix};
use crate::persist;
use crate::stft::SpectralFrames;

/// Threshold, relative to `trace(P_AA)`, below which a negative eigenvalue
/// after subtraction is reported as a conditioning warning.
pub const NEGATIVE_EIGENVALUE_WARNING: f64 = 1e-6;

const MAGIC: &[u8; 8] = b"RETMCOV\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CovariancePair {
    p_aa: Vec<ComplexMatrix>,
    p_ba: Vec<ComplexMatrix>,
    frame_count: usize,
    /// Bins where subtraction left `P_AA` noticeably indefinite.
    warnings: Vec<usize>,
}

impl CovariancePair {
    /// Assembles a pair from per-bin matrices. `P_AA` is symmetrized.
    pub fn from_parts(p_aa: Vec<ComplexMatrix>, p_ba: Vec<ComplexMatrix>, frame_count: usize) -> Result<Self> {
        if p_aa.len() != p_ba.len() || p_aa.is_empty() {
            return Err(Error::contract(format!(
                "covariance pair needs matching nonempty bin lists, got {} and {}",
                p_aa.len(),
                p_ba.len()
            )));
        }
        if frame_count == 0 {
            return Err(Error::contract("covariance pair averaged over zero frames"));
        }
        let (qa, qb) = (p_aa[0].rows(), p_ba[0].rows());
        for (f, (aa, ba)) in p_aa.iter().zip(&p_ba).enumerate() {
            if aa.shape() != (qa, qa) || ba.shape() != (qb, qa) {
                return Err(Error::contract(format!(
                    "bin {f}: P_AA {:?} / P_BA {:?} inconsistent with Q_A={qa}, Q_B={qb}",
                    aa.shape(),
                    ba.shape()
                )));
            }
        }
        let p_aa = p_aa
            .iter()
            .map(ComplexMatrix::hermitian_part)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            p_aa,
            p_ba,
            frame_count,
            warnings: Vec::new(),
        })
    }

    pub fn zeros(bins: usize, q_a: usize, q_b: usize) -> Self {
        Self {
            p_aa: vec![ComplexMatrix::zeros(q_a, q_a); bins],
            p_ba: vec![ComplexMatrix::zeros(q_b, q_a); bins],
            frame_count: 1,
            warnings: Vec::new(),
        }
    }

    pub fn bins(&self) -> usize {
        self.p_aa.len()
    }

    pub fn q_a(&self) -> usize {
        self.p_aa[0].rows()
    }

    pub fn q_b(&self) -> usize {
        self.p_ba[0].rows()
    }

    /// Number of STFT frames averaged. Analytic pairs count as one exact
    /// observation; sums and differences keep the smaller operand count.
    pub fn frame_count(&self) -> usize {
        self.frame_count
    }

    pub fn p_aa(&self, bin: usize) -> &ComplexMatrix {
        &self.p_aa[bin]
    }

    pub fn p_ba(&self, bin: usize) -> &ComplexMatrix {
        &self.p_ba[bin]
    }

    pub fn conditioning_warnings(&self) -> &[usize] {
        &self.warnings
    }

    fn check_compatible(&self, other: &Self, what: &str) -> Result<()> {
        if self.bins() != other.bins() || self.q_a() != other.q_a() || self.q_b() != other.q_b() {
            return Err(Error::contract(format!(
                "cannot {what} covariance pairs of shape {}x({},{}) and {}x({},{})",
                self.bins(),
                self.q_a(),
                self.q_b(),
                other.bins(),
                other.q_a(),
                other.q_b()
            )));
        }
        Ok(())
    }

    /// Bin-wise sum.
    pub fn add(&self, other: &Self) -> Result<Self> {
        add(self, other)
    }

    /// Bin-wise difference, see [`subtract`].
    pub fn subtract(&self, other: &Self) -> Result<Self> {
        subtract(self, other)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let io = |e| Error::io("<covariance stream>", e);
        w.write_all(MAGIC).map_err(io)?;
        for v in [VERSION, self.bins() as u32, self.q_a() as u32, self.q_b() as u32] {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        w.write_all(&(self.frame_count as u64).to_le_bytes()).map_err(io)?;
        for (aa, ba) in self.p_aa.iter().zip(&self.p_ba) {
            persist::write_matrix(&mut w, aa).map_err(io)?;
            persist::write_matrix(&mut w, ba).map_err(io)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let bad = |what: &str| Error::input(format!("covariance file: {what}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("missing header"))?;
        if &magic != MAGIC {
            return Err(bad("not a covariance file"));
        }
        let version = persist::read_u32(&mut r).map_err(|_| bad("truncated header"))?;
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let bins = persist::read_u32(&mut r).map_err(|_| bad("truncated header"))? as usize;
        let qa = persist::read_u32(&mut r).map_err(|_| bad("truncated header"))? as usize;
        let qb = persist::read_u32(&mut r).map_err(|_| bad("truncated header"))? as usize;
        let frames = persist::read_u64(&mut r).map_err(|_| bad("truncated header"))? as usize;
        let mut p_aa = Vec::with_capacity(bins);
        let mut p_ba = Vec::with_capacity(bins);
        for _ in 0..bins {
            p_aa.push(persist::read_matrix(&mut r, qa, qa).map_err(|_| bad("truncated data"))?);
            p_ba.push(persist::read_matrix(&mut r, qb, qa).map_err(|_| bad("truncated data"))?);
        }
        Self::from_parts(p_aa, p_ba, frames)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file))
            .map_err(|e| Error::input(format!("{}: {e}", path.display())))
    }
}

fn stack_frames(frames: &SpectralFrames, bin: usize, range: &Range<usize>) -> DMatrix<Complex64> {
    DMatrix::from_fn(frames.channels(), range.len(), |c, t| {
        frames.get(c, bin, range.start + t)
    })
}

/// Sample covariances over `frame_range`:
/// `P_AA = (1/T) sum_t m_A m_A^H`, `P_BA = (1/T) sum_t m_B m_A^H`.
pub fn estimate(frames_a: &SpectralFrames, frames_b: &SpectralFrames, frame_range: Range<usize>) -> Result<CovariancePair> {
    if !frames_a.same_layout(frames_b) || frames_a.sample_rate != frames_b.sample_rate {
        return Err(Error::contract(format!(
            "group frames misaligned: {} bins x {} frames vs {} bins x {} frames",
            frames_a.bins(),
            frames_a.frames(),
            frames_b.bins(),
            frames_b.frames()
        )));
    }
    if frame_range.is_empty() || frame_range.end > frames_a.frames() {
        return Err(Error::contract(format!(
            "frame range {frame_range:?} invalid for {} frames",
            frames_a.frames()
        )));
    }
    if frames_a.channels() == 0 || frames_b.channels() == 0 {
        return Err(Error::contract("microphone group is empty"));
    }
    let t = frame_range.len() as f64;
    let (p_aa, p_ba): (Vec<_>, Vec<_>) = (0..frames_a.bins())
        .into_par_iter()
        .map(|f| {
            let xa = stack_frames(frames_a, f, &frame_range);
            let xb = stack_frames(frames_b, f, &frame_range);
            let xa_h = xa.adjoint();
            let aa = ComplexMatrix::from_nalgebra((&xa * &xa_h) / Complex64::new(t, 0.0));
            let ba = ComplexMatrix::from_nalgebra((&xb * &xa_h) / Complex64::new(t, 0.0));
            (aa, ba)
        })
        .unzip();
    CovariancePair::from_parts(p_aa, p_ba, frame_range.len())
}

/// Estimates over all frames.
pub fn estimate_all(frames_a: &SpectralFrames, frames_b: &SpectralFrames) -> Result<CovariancePair> {
    estimate(frames_a, frames_b, 0..frames_a.frames())
}

/// Bin-wise difference `full - part`.
///
/// `P_AA` is re-symmetrized. Bins whose difference has an eigenvalue below
/// `-1e-6 * trace` are recorded in [`CovariancePair::conditioning_warnings`];
/// the difference itself is returned unmodified.
pub fn subtract(full: &CovariancePair, part: &CovariancePair) -> Result<CovariancePair> {
    full.check_compatible(part, "subtract")?;
    let rows: Vec<(ComplexMatrix, ComplexMatrix, bool)> = (0..full.bins())
        .into_par_iter()
        .map(|f| {
            let aa = full.p_aa[f].sub(&part.p_aa[f])?.hermitian_part()?;
            let ba = full.p_ba[f].sub(&part.p_ba[f])?;
            let trace = aa.trace().re.abs();
            let min_eig = aa.hermitian_eigenvalues()?.first().copied().unwrap_or(0.0);
            let warn = trace > 0.0 && min_eig < -NEGATIVE_EIGENVALUE_WARNING * trace;
            Ok((aa, ba, warn))
        })
        .collect::<Result<_>>()?;
    let mut warnings = Vec::new();
    let mut p_aa = Vec::with_capacity(rows.len());
    let mut p_ba = Vec::with_capacity(rows.len());
    for (f, (aa, ba, warn)) in rows.into_iter().enumerate() {
        if warn {
            warnings.push(f);
        }
        p_aa.push(aa);
        p_ba.push(ba);
    }
    if !warnings.is_empty() {
        log::warn!(
            "covariance subtraction left {} of {} bins indefinite",
            warnings.len(),
            p_aa.len()
        );
    }
    Ok(CovariancePair {
        p_aa,
        p_ba,
        frame_count: full.frame_count.min(part.frame_count),
        warnings,
    })
}

/// Bin-wise sum `a + b`.
pub fn add(a: &CovariancePair, b: &CovariancePair) -> Result<CovariancePair> {
    a.check_compatible(b, "add")?;
    let p_aa = a
        .p_aa
        .iter()
        .zip(&b.p_aa)
        .map(|(x, y)| x.add(y)?.hermitian_part())
        .collect::<Result<Vec<_>>>()?;
    let p_ba = a
        .p_ba
        .iter()
        .zip(&b.p_ba)
        .map(|(x, y)| x.add(y))
        .collect::<Result<Vec<_>>>()?;
    let mut warnings: Vec<usize> = a.warnings.iter().chain(&b.warnings).copied().collect();
    warnings.sort_unstable();
    warnings.dedup();
    Ok(CovariancePair {
        p_aa,
        p_ba,
        frame_count: a.frame_count.min(b.frame_count),
        warnings,
    })
}

/// Sum of a nonempty list of pairs.
pub fn sum(parts: &[CovariancePair]) -> Result<CovariancePair> {
    let (first, rest) = parts
        .split_first()
        .ok_or_else(|| Error::contract("cannot sum an empty list of covariance pairs"))?;
    rest.iter().try_fold(first.clone(), |acc, p| add(&acc, p))
}
