//! Relative transfer matrix (ReTM) estimators.
//!
//! A ReTM maps the group-B microphone spectrum to the group-A spectrum for
//! a given set of active sources: `m_A(f,t) = R(f) m_B(f,t)`. It depends
//! only on the room and positions, not on what the sources emit, and can
//! be estimated from covariances as `R = P_AA P_BA^+`.
//!
//! Because the covariances of independent sources add, the ReTM of any
//! subset of sources can be estimated by adding and subtracting covariance
//! pairs recorded under different activity patterns, even when the subset
//! is never active on its own. ReTMs themselves do not add:
//! `R_speech + R_noise != R_total` in general (see [`check_nonadditivity`]).
//!
//! Every estimator works bin by bin. A bin whose pseudoinverse fails is
//! flagged and holds a zero matrix; when more than half of the bins fail
//! the whole estimate is rejected with a numerical error.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{self, CovariancePair};
use crate::error::{Error, Result};
use crate::linalg::{default_tolerance, pseudoinverse, relative_difference, ComplexMatrix};
use crate::persist;

const MAGIC: &[u8; 8] = b"RETMRTM\0";
const VERSION: u32 = 1;

/// Where an estimate came from, kept so reports and persisted calibrations
/// can be attributed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: String,
    /// Free-form labels of the covariance inputs (segment names, ranges).
    #[serde(default)]
    pub inputs: Vec<String>,
    #[serde(default)]
    pub scenario: Option<String>,
    #[serde(default)]
    pub tolerance: Option<f64>,
    /// Bins where a covariance subtraction produced an indefinite `P_AA`.
    #[serde(default)]
    pub conditioning_warnings: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retm {
    matrices: Vec<ComplexMatrix>,
    failed: Vec<bool>,
    pub provenance: Provenance,
}

impl Retm {
    pub fn from_matrices(matrices: Vec<ComplexMatrix>, provenance: Provenance) -> Result<Self> {
        let failed = vec![false; matrices.len()];
        Self::with_failures(matrices, failed, provenance)
    }

    fn with_failures(matrices: Vec<ComplexMatrix>, failed: Vec<bool>, provenance: Provenance) -> Result<Self> {
        let shape = matrices
            .first()
            .ok_or_else(|| Error::contract("ReTM needs at least one bin"))?
            .shape();
        if let Some(f) = matrices.iter().position(|m| m.shape() != shape) {
            return Err(Error::contract(format!("ReTM bin {f} has inconsistent shape")));
        }
        if let Some(f) = matrices.iter().position(|m| !m.is_finite()) {
            return Err(Error::numerical(format!("ReTM bin {f}"), "non-finite entries"));
        }
        Ok(Self {
            matrices,
            failed,
            provenance,
        })
    }

    pub fn zeros(bins: usize, q_a: usize, q_b: usize) -> Self {
        Self {
            matrices: vec![ComplexMatrix::zeros(q_a, q_b); bins],
            failed: vec![false; bins],
            provenance: Provenance {
                method: "zero".into(),
                ..Provenance::default()
            },
        }
    }

    pub fn bins(&self) -> usize {
        self.matrices.len()
    }

    pub fn q_a(&self) -> usize {
        self.matrices[0].rows()
    }

    pub fn q_b(&self) -> usize {
        self.matrices[0].cols()
    }

    /// The matrix for one bin. Failed bins hold zeros, which makes them pass
    /// group-A signals through unchanged during separation.
    pub fn matrix(&self, bin: usize) -> &ComplexMatrix {
        &self.matrices[bin]
    }

    pub fn is_failed(&self, bin: usize) -> bool {
        self.failed[bin]
    }

    pub fn failed_bins(&self) -> Vec<usize> {
        self.failed
            .iter()
            .enumerate()
            .filter_map(|(f, &bad)| bad.then_some(f))
            .collect()
    }

    /// Per-bin `||self - other||_F / ||other||_F`.
    pub fn relative_error_to(&self, other: &Retm) -> Result<Vec<f64>> {
        if self.bins() != other.bins() {
            return Err(Error::contract("ReTMs differ in bin count"));
        }
        self.matrices
            .iter()
            .zip(&other.matrices)
            .map(|(a, b)| relative_difference(a, b))
            .collect()
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let io = |e| Error::io("<retm stream>", e);
        w.write_all(MAGIC).map_err(io)?;
        for v in [VERSION, self.bins() as u32, self.q_a() as u32, self.q_b() as u32] {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        let prov = serde_json::to_vec(&self.provenance).expect("provenance serializes");
        w.write_all(&(prov.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&prov).map_err(io)?;
        let flags: Vec<u8> = self.failed.iter().map(|&b| b as u8).collect();
        w.write_all(&flags).map_err(io)?;
        for m in &self.matrices {
            persist::write_matrix(&mut w, m).map_err(io)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let bad = |what: &str| Error::input(format!("ReTM file: {what}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("missing header"))?;
        if &magic != MAGIC {
            return Err(bad("not a ReTM file"));
        }
        let mut header = [0u32; 5];
        for h in &mut header {
            *h = persist::read_u32(&mut r).map_err(|_| bad("truncated header"))?;
        }
        let [version, bins, qa, qb, prov_len] = header.map(|v| v as usize);
        if version != VERSION as usize {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let mut prov = vec![0u8; prov_len];
        r.read_exact(&mut prov).map_err(|_| bad("truncated provenance"))?;
        let provenance: Provenance =
            serde_json::from_slice(&prov).map_err(|e| bad(&format!("provenance: {e}")))?;
        let mut flags = vec![0u8; bins];
        r.read_exact(&mut flags).map_err(|_| bad("truncated flags"))?;
        let matrices = (0..bins)
            .map(|_| persist::read_matrix(&mut r, qa, qb).map_err(|_| bad("truncated data")))
            .collect::<Result<Vec<_>>>()?;
        Self::with_failures(matrices, flags.iter().map(|&b| b != 0).collect(), provenance)
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

/// `R = P_AA P_BA^+` per bin, the plain covariance estimator.
///
/// `tol` is the pseudoinverse's relative singular-value cutoff; `None`
/// selects [`crate::linalg::default_tolerance`].
pub fn estimate_direct(cov: &CovariancePair, tol: Option<f64>) -> Result<Retm> {
    estimate_with(cov, tol, "direct", None)
}

/// Per-bin absolute singular-value floor for a covariance assembled by
/// adding and subtracting `operands`. Rounding leaves residue of order
/// `eps * sum ||P_BA||` in directions that no remaining source excites,
/// which the pseudoinverse must not invert.
fn cancellation_floor(operands: &[&CovariancePair]) -> Vec<f64> {
    let first = operands[0];
    let eps = default_tolerance(first.q_b(), first.q_a());
    (0..first.bins())
        .map(|f| eps * operands.iter().map(|c| c.p_ba(f).frobenius_norm()).sum::<f64>())
        .collect()
}

fn estimate_with(cov: &CovariancePair, tol: Option<f64>, method: &str, floor: Option<&[f64]>) -> Result<Retm> {
    let results: Vec<Option<ComplexMatrix>> = (0..cov.bins())
        .into_par_iter()
        .map(|f| {
            let p_ba = cov.p_ba(f);
            // an explicit tolerance is honored as given
            let rel = match (tol, floor) {
                (None, Some(floor)) => {
                    let top = p_ba.singular_values().first().copied().unwrap_or(0.0);
                    let base = default_tolerance(p_ba.rows(), p_ba.cols());
                    Some(if top > 0.0 { base.max(floor[f] / top) } else { base })
                }
                _ => tol,
            };
            pseudoinverse(p_ba, rel)
                .and_then(|pinv| cov.p_aa(f).matmul(&pinv))
                .ok()
                .filter(ComplexMatrix::is_finite)
        })
        .collect();
    let (qa, qb) = (cov.q_a(), cov.q_b());
    let failed: Vec<bool> = results.iter().map(Option::is_none).collect();
    let n_failed = failed.iter().filter(|&&b| b).count();
    if 2 * n_failed > cov.bins() {
        return Err(Error::numerical(
            format!("{method} ReTM estimation"),
            format!("{n_failed} of {} bins failed", cov.bins()),
        ));
    }
    if n_failed > 0 {
        log::warn!("{method} ReTM: {n_failed} of {} bins failed and were zeroed", cov.bins());
    }
    let matrices = results
        .into_iter()
        .map(|m| m.unwrap_or_else(|| ComplexMatrix::zeros(qa, qb)))
        .collect();
    Retm::with_failures(
        matrices,
        failed,
        Provenance {
            method: method.into(),
            tolerance: tol,
            conditioning_warnings: cov.conditioning_warnings().to_vec(),
            ..Provenance::default()
        },
    )
}

/// ReTM of the sources left after removing `noise` from `full`:
/// `R_S = (P_AA - P_AA^N)(P_BA - P_BA^N)^+`.
pub fn estimate_by_subtraction(full: &CovariancePair, noise: &CovariancePair, tol: Option<f64>) -> Result<Retm> {
    let speech = covariance::subtract(full, noise)?;
    estimate_with(&speech, tol, "subtraction", Some(&cancellation_floor(&[full, noise])))
}

/// ReTM of the background noise from noise-only statistics.
pub fn estimate_noise_retm(noise: &CovariancePair, tol: Option<f64>) -> Result<Retm> {
    estimate_with(noise, tol, "noise", None)
}

/// ReTM of the union of independent source subsets whose covariance pairs
/// are given separately: `(sum P_AA^l)(sum P_BA^l)^+`.
pub fn estimate_subset(parts: &[CovariancePair], tol: Option<f64>) -> Result<Retm> {
    let total = covariance::sum(parts)?;
    estimate_with(&total, tol, "subset", None)
}

/// ReTM of everything except speaker `target`, assembled from calibration
/// recordings of the noise alone and of the noise plus each single speaker.
///
/// Each speaker's own covariance is recovered as `P^(N,l) - P^(N)`; those of
/// all non-target speakers are summed and the noise covariance is added back
/// once.
pub fn estimate_undesired_for_speaker(
    noise_only: &CovariancePair,
    noise_plus: &[CovariancePair],
    target: usize,
    tol: Option<f64>,
) -> Result<Retm> {
    let covariance = undesired_covariance(noise_only, noise_plus, target)?;
    let mut operands = vec![noise_only];
    for (l, pair) in noise_plus.iter().enumerate() {
        if l != target {
            operands.extend([pair, noise_only]);
        }
    }
    estimate_with(&covariance, tol, "training", Some(&cancellation_floor(&operands)))
}

/// The covariance pair behind [`estimate_undesired_for_speaker`].
pub fn undesired_covariance(
    noise_only: &CovariancePair,
    noise_plus: &[CovariancePair],
    target: usize,
) -> Result<CovariancePair> {
    if target >= noise_plus.len() {
        return Err(Error::contract(format!(
            "target speaker {target} out of range for {} speakers",
            noise_plus.len()
        )));
    }
    let mut acc = noise_only.clone();
    for (l, pair) in noise_plus.iter().enumerate() {
        if l != target {
            let speech = covariance::subtract(pair, noise_only)?;
            acc = covariance::add(&acc, &speech)?;
        }
    }
    Ok(acc)
}

/// Per-bin `||(R_S + R_N) - R_total||_F / ||R_total||_F`.
///
/// For generic source geometries this stays well away from zero.
pub fn check_nonadditivity(r_s: &Retm, r_n: &Retm, r_total: &Retm) -> Result<Vec<f64>> {
    if r_s.bins() != r_n.bins() || r_s.bins() != r_total.bins() {
        return Err(Error::contract("ReTMs differ in bin count"));
    }
    (0..r_total.bins())
        .map(|f| {
            let sum = r_s.matrix(f).add(r_n.matrix(f))?;
            relative_difference(&sum, r_total.matrix(f))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Complex64;
    use crate::model::TransferSet;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn max(v: &[f64]) -> f64 {
        v.iter().copied().fold(0.0, f64::max)
    }

    #[test]
    fn scalar_case_is_the_classic_ratio() {
        let ha = Complex64::new(0.3, -0.8);
        let hb = Complex64::new(-1.2, 0.4);
        let set = TransferSet::new(
            vec![ComplexMatrix::from_row_slice(1, 1, &[ha]).unwrap()],
            vec![ComplexMatrix::from_row_slice(1, 1, &[hb]).unwrap()],
        )
        .unwrap();
        let r = estimate_direct(&set.covariance(&[2.5]).unwrap(), None).unwrap();
        assert!((r.matrix(0).get(0, 0) - ha / hb).norm() < 1e-14);
    }

    #[test]
    fn direct_matches_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let set = TransferSet::random(8, 4, 5, 4, &mut rng);
        let r = estimate_direct(&set.covariance(&[1.0, 1.0, 1.0, 1.0]).unwrap(), None).unwrap();
        let truth = set.retm().unwrap();
        for f in 0..8 {
            let hb_r = r.matrix(f).matmul(set.h_b(f)).unwrap();
            assert!(relative_difference(&hb_r, set.h_a(f)).unwrap() < 1e-8);
        }
        assert!(max(&r.relative_error_to(&truth).unwrap()) < 1e-8);
    }

    #[test]
    fn zero_noise_subtraction_equals_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let set = TransferSet::random(4, 3, 4, 2, &mut rng);
        let cov = set.covariance(&[1.0, 3.0]).unwrap();
        let zero = CovariancePair::zeros(4, 3, 4);
        let a = estimate_by_subtraction(&cov, &zero, None).unwrap();
        let b = estimate_direct(&cov, None).unwrap();
        for f in 0..4 {
            assert_eq!(a.matrix(f), b.matrix(f));
        }
    }

    #[test]
    fn rank_one_noise_handled() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let set = TransferSet::random(3, 2, 4, 1, &mut rng);
        let r = estimate_noise_retm(&set.covariance(&[0.5]).unwrap(), None).unwrap();
        assert!(r.failed_bins().is_empty());
        for f in 0..3 {
            let pred = r.matrix(f).matmul(set.h_b(f)).unwrap();
            assert!(relative_difference(&pred, set.h_a(f)).unwrap() < 1e-8);
        }
    }

    #[test]
    fn single_speaker_training_reduces_to_noise_retm() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let set = TransferSet::random(3, 2, 4, 2, &mut rng);
        let noise = set.select_sources(&[1]).covariance(&[1.0]).unwrap();
        let plus = set.covariance(&[1.0, 1.0]).unwrap();
        let r = estimate_undesired_for_speaker(&noise, &[plus], 0, None).unwrap();
        let n = estimate_noise_retm(&noise, None).unwrap();
        for f in 0..3 {
            assert_eq!(r.matrix(f), n.matrix(f));
        }
    }

    #[test]
    fn training_target_out_of_range() {
        let z = CovariancePair::zeros(2, 1, 1);
        let err = estimate_undesired_for_speaker(&z, &[z.clone()], 1, None).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn single_part_subset_equals_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let cov = TransferSet::random(3, 3, 4, 3, &mut rng).covariance(&[1.0, 2.0, 3.0]).unwrap();
        let a = estimate_subset(std::slice::from_ref(&cov), None).unwrap();
        let b = estimate_direct(&cov, None).unwrap();
        for f in 0..3 {
            assert_eq!(a.matrix(f), b.matrix(f));
        }
        assert!(estimate_subset(&[], None).is_err());
    }

    #[test]
    fn nonadditivity_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let set = TransferSet::random(3, 2, 3, 2, &mut rng);
        let total = set.retm().unwrap();
        let zero = Retm::zeros(3, 2, 3);
        let d = check_nonadditivity(&total, &zero, &total).unwrap();
        assert!(d.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn nonadditivity_generic_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let set = TransferSet::random(16, 3, 4, 3, &mut rng);
        let p = [1.0, 1.0, 1.0];
        let full = set.covariance(&p).unwrap();
        let noise = set.select_sources(&[2]).covariance(&p[2..]).unwrap();
        let r_s = estimate_by_subtraction(&full, &noise, None).unwrap();
        let r_n = estimate_noise_retm(&noise, None).unwrap();
        let r_t = estimate_direct(&full, None).unwrap();
        let d = check_nonadditivity(&r_s, &r_n, &r_t).unwrap();
        assert!(d.iter().filter(|&&x| x > 0.1).count() >= 15);
    }

    #[test]
    fn mostly_failed_estimate_is_error() {
        let mut m = ComplexMatrix::identity(2);
        m.set(0, 0, Complex64::new(f64::NAN, 0.0));
        // bypass from_parts validation: NaN in P_BA only
        let p_aa = vec![ComplexMatrix::identity(2); 3];
        let mut p_ba = vec![m.clone(), m, ComplexMatrix::identity(2)];
        let cov = CovariancePair::from_parts(p_aa.clone(), p_ba.clone(), 10).unwrap();
        let err = estimate_direct(&cov, None).unwrap_err();
        assert_eq!(err.exit_code(), 2);

        p_ba[1] = ComplexMatrix::identity(2);
        let cov = CovariancePair::from_parts(p_aa, p_ba, 10).unwrap();
        let r = estimate_direct(&cov, None).unwrap();
        assert_eq!(r.failed_bins(), vec![0]);
        assert_eq!(r.matrix(0), &ComplexMatrix::zeros(2, 2));
    }

    #[test]
    fn binary_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut r = TransferSet::random(4, 2, 3, 2, &mut rng).retm().unwrap();
        r.failed[2] = true;
        r.provenance.inputs = vec!["noise-only".into(), "frames 0..233".into()];
        r.provenance.scenario = Some("desk".into());
        let mut bytes = Vec::new();
        r.write_to(&mut bytes).unwrap();
        assert_eq!(Retm::read_from(&bytes[..]).unwrap(), r);
        assert!(Retm::read_from(&bytes[..40]).is_err());
        assert!(Retm::read_from(&b"RETMCOV\0xxxx"[..]).is_err());
    }
}
