//! Separation quality in the BSS-eval sense.
//!
//! An estimate is split into orthogonal parts: the target component (its
//! projection onto time-shifted copies of the target reference), the
//! interference component (the additional part explained by shifted copies
//! of all references) and the artifact residual. SIR and SDR are energy
//! ratios of those parts.
//!
//! All projections are computed in the zero-padded space of length
//! `N + filter_len - 1`, where shifted references are exact, so the three
//! components are orthogonal up to solver precision.

use std::io::Write;
use std::ops::Range;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Complex64;

/// Distortion filter length at 16 kHz.
pub const DEFAULT_FILTER_LEN: usize = 512;
/// Reported ratios are clamped to `[-CAP_DB, CAP_DB]`.
pub const CAP_DB: f64 = 100.0;
/// Schema version written as the first column of every report row.
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Decomposition {
    pub target: Vec<f64>,
    pub interference: Vec<f64>,
    pub artifact: Vec<f64>,
    /// The projection system was singular and needed diagonal loading.
    pub regularized: bool,
}

impl Decomposition {
    /// Zero-padded estimate: the sum of the three components.
    pub fn estimate(&self) -> Vec<f64> {
        self.target
            .iter()
            .zip(&self.interference)
            .zip(&self.artifact)
            .map(|((a, b), c)| a + b + c)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ratios {
    pub sir_db: f64,
    pub sdr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub speaker: usize,
    pub sir_db: f64,
    pub sdr_db: f64,
    pub sir_improvement_db: f64,
    pub sdr_improvement_db: f64,
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn ratio_db(num: f64, den: f64) -> f64 {
    if den <= 0.0 {
        return CAP_DB;
    }
    if num <= 0.0 {
        return -CAP_DB;
    }
    (10.0 * (num / den).log10()).clamp(-CAP_DB, CAP_DB)
}

struct Spectra {
    nfft: usize,
    refs: Vec<Vec<Complex64>>,
    planner: RealFftPlanner<f64>,
}

impl Spectra {
    fn new(references: &[&[f64]], len: usize, filter_len: usize) -> Self {
        let nfft = (len + filter_len).next_power_of_two();
        let mut planner = RealFftPlanner::<f64>::new();
        let refs = references.iter().map(|r| forward(&mut planner, r, nfft)).collect();
        Self { nfft, refs, planner }
    }

    /// `sum_n x[n] y[n + k]` for `k` in `0..lags` and, via the second
    /// vector, `k` in `-(lags-1)..=0` stored as `neg[j] = xcorr[-j]`.
    fn xcorr(&mut self, x: &[Complex64], y: &[Complex64], lags: usize) -> (Vec<f64>, Vec<f64>) {
        let mut prod: Vec<Complex64> = x.iter().zip(y).map(|(a, b)| a.conj() * b).collect();
        let full = inverse(&mut self.planner, &mut prod, self.nfft);
        let pos = full[..lags].to_vec();
        let neg = (0..lags).map(|j| full[(self.nfft - j) % self.nfft]).collect();
        (pos, neg)
    }
}

fn forward(planner: &mut RealFftPlanner<f64>, x: &[f64], nfft: usize) -> Vec<Complex64> {
    let fft = planner.plan_fft_forward(nfft);
    let mut buf = vec![0.0; nfft];
    buf[..x.len()].copy_from_slice(x);
    let mut out = fft.make_output_vec();
    fft.process(&mut buf, &mut out).expect("planner-sized buffers");
    out
}

fn inverse(planner: &mut RealFftPlanner<f64>, spec: &mut [Complex64], nfft: usize) -> Vec<f64> {
    let ifft = planner.plan_fft_inverse(nfft);
    spec[0].im = 0.0;
    let last = spec.len() - 1;
    spec[last].im = 0.0;
    let mut out = ifft.make_output_vec();
    ifft.process(spec, &mut out).expect("planner-sized buffers");
    let scale = 1.0 / nfft as f64;
    out.iter_mut().for_each(|v| *v *= scale);
    out
}

/// Least-squares projection of the estimate onto shifts `0..filter_len` of
/// the selected references. Returns the projection in the padded space.
fn project(
    spectra: &mut Spectra,
    est_spec: &[Complex64],
    selected: &[usize],
    filter_len: usize,
    out_len: usize,
) -> Result<(Vec<f64>, bool)> {
    let n = selected.len() * filter_len;
    let mut gram = DMatrix::<f64>::zeros(n, n);
    for (bi, &i) in selected.iter().enumerate() {
        for (bj, &j) in selected.iter().enumerate().skip(bi) {
            let (pos, neg) = spectra.xcorr(&spectra.refs[i].clone(), &spectra.refs[j].clone(), filter_len);
            // <S_a r_i, S_b r_j> = xcorr_ij[a - b]
            for a in 0..filter_len {
                for b in 0..filter_len {
                    let v = if a >= b { pos[a - b] } else { neg[b - a] };
                    gram[(bi * filter_len + a, bj * filter_len + b)] = v;
                    gram[(bj * filter_len + b, bi * filter_len + a)] = v;
                }
            }
        }
    }
    let mut rhs = DVector::<f64>::zeros(n);
    for (bi, &i) in selected.iter().enumerate() {
        let (pos, _) = spectra.xcorr(&spectra.refs[i].clone(), est_spec, filter_len);
        for a in 0..filter_len {
            rhs[bi * filter_len + a] = pos[a];
        }
    }

    let (coef, regularized) = solve_spd(gram, &rhs)?;

    // sum_i r_i * c_i, all in the frequency domain
    let mut acc = vec![Complex64::new(0.0, 0.0); spectra.nfft / 2 + 1];
    for (bi, &i) in selected.iter().enumerate() {
        let taps: Vec<f64> = coef.rows(bi * filter_len, filter_len).iter().copied().collect();
        let h = forward(&mut spectra.planner, &taps, spectra.nfft);
        for ((a, r), hk) in acc.iter_mut().zip(&spectra.refs[i]).zip(&h) {
            *a += r * hk;
        }
    }
    let nfft = spectra.nfft;
    let mut full = inverse(&mut spectra.planner, &mut acc, nfft);
    full.truncate(out_len);
    Ok((full, regularized))
}

fn solve_spd(gram: DMatrix<f64>, rhs: &DVector<f64>) -> Result<(DVector<f64>, bool)> {
    if let Some(ch) = gram.clone().cholesky() {
        return Ok((ch.solve(rhs), false));
    }
    let n = gram.nrows();
    let scale = gram.trace() / n as f64;
    let mut load = 1e-12;
    while load <= 1e-2 {
        let mut loaded = gram.clone();
        for k in 0..n {
            loaded[(k, k)] += load * scale;
        }
        if let Some(ch) = loaded.cholesky() {
            return Ok((ch.solve(rhs), true));
        }
        load *= 10.0;
    }
    Err(Error::numerical(
        "BSS-eval projection",
        "reference shifts are linearly dependent beyond repair",
    ))
}

/// Splits `estimate` into target, interference and artifact components.
///
/// `references` are the clean per-source signals at the evaluation
/// microphone, all of the estimate's length.
pub fn decompose(estimate: &[f64], references: &[&[f64]], target: usize, filter_len: usize) -> Result<Decomposition> {
    if target >= references.len() {
        return Err(Error::contract(format!(
            "target {target} out of range for {} references",
            references.len()
        )));
    }
    if filter_len == 0 {
        return Err(Error::contract("distortion filter needs at least one tap"));
    }
    if let Some(r) = references.iter().find(|r| r.len() != estimate.len()) {
        return Err(Error::contract(format!(
            "reference of {} samples vs estimate of {}",
            r.len(),
            estimate.len()
        )));
    }
    let out_len = estimate.len() + filter_len - 1;
    let mut spectra = Spectra::new(references, estimate.len(), filter_len);
    let est_spec = forward(&mut spectra.planner, estimate, spectra.nfft);

    let (target_part, reg_t) = project(&mut spectra, &est_spec, &[target], filter_len, out_len)?;
    let all: Vec<usize> = (0..references.len()).collect();
    let (all_part, reg_a) = project(&mut spectra, &est_spec, &all, filter_len, out_len)?;

    let mut padded = estimate.to_vec();
    padded.resize(out_len, 0.0);
    let interference = all_part.iter().zip(&target_part).map(|(a, t)| a - t).collect();
    let artifact = padded.iter().zip(&all_part).map(|(e, a)| e - a).collect();
    Ok(Decomposition {
        target: target_part,
        interference,
        artifact,
        regularized: reg_t || reg_a,
    })
}

/// SIR and SDR of a decomposition, clamped to +/-100 dB.
pub fn sir_sdr(d: &Decomposition) -> Result<Ratios> {
    let e_total = energy(&d.estimate());
    if e_total == 0.0 {
        return Err(Error::UndefinedMetric("estimate is silent".into()));
    }
    let s = energy(&d.target);
    let i = energy(&d.interference);
    let noise: Vec<f64> = d.interference.iter().zip(&d.artifact).map(|(a, b)| a + b).collect();
    Ok(Ratios {
        sir_db: ratio_db(s, i),
        sdr_db: ratio_db(s, energy(&noise)),
    })
}

/// Scores an estimate and the unprocessed mixture over `interior` and
/// reports both the absolute values and the improvement.
pub fn evaluate(
    speaker: usize,
    estimate: &[f64],
    unprocessed: &[f64],
    references: &[&[f64]],
    interior: Range<usize>,
    filter_len: usize,
) -> Result<EvalResult> {
    if interior.is_empty() || interior.end > estimate.len() || interior.end > unprocessed.len() {
        return Err(Error::contract(format!(
            "evaluation range {interior:?} does not fit signals of {} / {} samples",
            estimate.len(),
            unprocessed.len()
        )));
    }
    let refs: Vec<&[f64]> = references
        .iter()
        .map(|r| r.get(interior.clone()).ok_or_else(|| Error::contract("reference too short")))
        .collect::<Result<_>>()?;
    let est = sir_sdr(&decompose(&estimate[interior.clone()], &refs, speaker, filter_len)?)?;
    let mix = sir_sdr(&decompose(&unprocessed[interior], &refs, speaker, filter_len)?)?;
    Ok(EvalResult {
        speaker,
        sir_db: est.sir_db,
        sdr_db: est.sdr_db,
        sir_improvement_db: est.sir_db - mix.sir_db,
        sdr_improvement_db: est.sdr_db - mix.sdr_db,
    })
}

/// One line of the evaluation CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub version: u32,
    pub scenario: String,
    pub snr_db: f64,
    pub speaker: usize,
    pub method: String,
    pub sir_db: f64,
    pub sdr_db: f64,
    pub sir_improvement_db: f64,
    pub sdr_improvement_db: f64,
    /// Intelligibility is not computed; the column keeps the layout
    /// comparable with SIR/SDR/STOI tables.
    pub stoi: Option<f64>,
}

pub const REPORT_HEADER: [&str; 10] = [
    "version",
    "scenario",
    "snr_db",
    "speaker",
    "method",
    "sir_db",
    "sdr_db",
    "sir_improvement_db",
    "sdr_improvement_db",
    "stoi",
];

pub fn write_report_to(w: impl Write, rows: &[ReportRow]) -> Result<()> {
    let csv_err = |e: csv::Error| Error::input(format!("CSV: {e}"));
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wtr.write_record(REPORT_HEADER).map_err(csv_err)?;
    for r in rows {
        wtr.serialize(r).map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn write_report(path: impl AsRef<Path>, rows: &[ReportRow]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_report_to(file, rows)
}

pub fn read_report(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
    rdr.deserialize()
        .collect::<std::result::Result<Vec<ReportRow>, _>>()
        .map_err(|e| Error::input(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn perfect_estimate_hits_the_cap() {
        let s = noise(4000, 1);
        let n = noise(4000, 2);
        let d = decompose(&s, &[&s, &n], 0, 32).unwrap();
        assert!(energy(&d.interference) < 1e-20 * energy(&s));
        assert!(energy(&d.artifact) < 1e-20 * energy(&s));
        let r = sir_sdr(&d).unwrap();
        assert_eq!(r.sir_db, CAP_DB);
        assert_eq!(r.sdr_db, CAP_DB);
    }

    #[test]
    fn pure_interferer_hits_the_floor() {
        // disjoint supports, further apart than the filter, are orthogonal
        // under every allowed shift
        let len = 4000;
        let mut s = noise(len, 3);
        let mut n = noise(len, 4);
        s[2000..].iter_mut().for_each(|v| *v = 0.0);
        n[..2100].iter_mut().for_each(|v| *v = 0.0);
        let d = decompose(&n, &[&s, &n], 0, 64).unwrap();
        let r = sir_sdr(&d).unwrap();
        assert_eq!(r.sir_db, -CAP_DB);
    }

    #[test]
    fn constructed_twenty_db_mixture() {
        let len = 1 << 16;
        let s = noise(len, 5);
        let n = noise(len, 6);
        // closed form: interferer scaled by 0.1 carries 1/100 of the power
        let want = 10.0 * (energy(&s) / (0.01 * energy(&n))).log10();
        let est: Vec<f64> = s.iter().zip(&n).map(|(a, b)| a + 0.1 * b).collect();
        let r = sir_sdr(&decompose(&est, &[&s, &n], 0, 512).unwrap()).unwrap();
        assert!((r.sir_db - want).abs() < 0.1, "{} vs {want}", r.sir_db);
        assert!(r.sdr_db <= r.sir_db);
    }

    #[test]
    fn silent_estimate_is_undefined() {
        let s = noise(1000, 7);
        let z = vec![0.0; 1000];
        let d = decompose(&z, &[&s], 0, 16).unwrap();
        assert!(matches!(sir_sdr(&d), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn energy_is_conserved() {
        let len = 8000;
        let s = noise(len, 8);
        let n = noise(len, 9);
        let junk = noise(len, 10);
        let est: Vec<f64> = (0..len).map(|i| 0.8 * s[i] + 0.3 * n[i] + 0.2 * junk[i]).collect();
        let d = decompose(&est, &[&s, &n], 0, 128).unwrap();
        let parts = energy(&d.target) + energy(&d.interference) + energy(&d.artifact);
        assert!(((energy(&est) - parts) / energy(&est)).abs() < 1e-9);
        assert!(!d.regularized);
    }

    #[test]
    fn delayed_filtered_target_counts_as_target() {
        let len = 6000;
        let mut s = noise(len, 11);
        // keep the delayed copy inside the window
        s[len - 16..].iter_mut().for_each(|v| *v = 0.0);
        let n = noise(len, 12);
        let mut est = vec![0.0; len];
        for i in 3..len {
            est[i] = -0.2 * s[i - 3];
            if i >= 5 {
                est[i] += 0.7 * s[i - 5];
            }
        }
        let d = decompose(&est, &[&s, &n], 0, 16).unwrap();
        let r = sir_sdr(&d).unwrap();
        assert!(r.sdr_db > 60.0, "{r:?} reg={}", d.regularized);
    }

    #[test]
    fn argument_checks() {
        let s = noise(100, 1);
        assert!(decompose(&s, &[&s], 1, 8).is_err());
        assert!(decompose(&s, &[&s[..50]], 0, 8).is_err());
        assert!(decompose(&s, &[&s], 0, 0).is_err());
    }

    #[test]
    fn duplicate_references_are_regularized() {
        let s = noise(2000, 13);
        let est: Vec<f64> = s.iter().map(|v| 0.5 * v).collect();
        let d = decompose(&est, &[&s, &s], 0, 8).unwrap();
        assert!(d.regularized);
    }

    #[test]
    fn empty_report_has_only_header() {
        let mut out = Vec::new();
        write_report_to(&mut out, &[]).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "version,scenario,snr_db,speaker,method,sir_db,sdr_db,sir_improvement_db,sdr_improvement_db,stoi\n"
        );
    }

    #[test]
    fn report_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let rows = vec![ReportRow {
            version: REPORT_VERSION,
            scenario: "desk".into(),
            snr_db: -5.0,
            speaker: 1,
            method: "training".into(),
            sir_db: 25.5,
            sdr_db: 3.25,
            sir_improvement_db: 25.0,
            sdr_improvement_db: 8.0,
            stoi: None,
        }];
        write_report(&path, &rows).unwrap();
        assert_eq!(read_report(&path).unwrap(), rows);
    }
}
