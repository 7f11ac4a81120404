//! Analytic signal model: per-bin transfer matrices from sources to the two
//! microphone groups.
//!
//! With known `H_A`, `H_B` and independent sources of power `p_l`, the
//! covariances are exactly `P_AA = H_A diag(p) H_A^H` and
//! `P_BA = H_B diag(p) H_A^H`, and the relative transfer matrix is defined
//! as `R = H_A H_B^+`. Tests and examples use these closed forms as ground
//! truth for the estimators, which only ever see covariances.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use realfft::RealFftPlanner;

use crate::covariance::CovariancePair;
use crate::error::{Error, Result};
use crate::linalg::{pseudoinverse, Complex64, ComplexMatrix};
use crate::retm::{Provenance, Retm};

/// Per-bin transfer matrices `H_A (Q_A x L)` and `H_B (Q_B x L)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferSet {
    h_a: Vec<ComplexMatrix>,
    h_b: Vec<ComplexMatrix>,
}

impl TransferSet {
    pub fn new(h_a: Vec<ComplexMatrix>, h_b: Vec<ComplexMatrix>) -> Result<Self> {
        if h_a.is_empty() || h_a.len() != h_b.len() {
            return Err(Error::contract("transfer set needs matching nonempty bin lists"));
        }
        let (qa, qb, l) = (h_a[0].rows(), h_b[0].rows(), h_a[0].cols());
        if h_a.iter().any(|m| m.shape() != (qa, l)) || h_b.iter().any(|m| m.shape() != (qb, l)) {
            return Err(Error::contract("transfer matrices change shape across bins"));
        }
        Ok(Self { h_a, h_b })
    }

    /// Independent circular complex Gaussian entries of unit variance.
    pub fn random(bins: usize, q_a: usize, q_b: usize, sources: usize, rng: &mut impl Rng) -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut draw = |rows, cols| {
            ComplexMatrix::from_fn(rows, cols, |_, _| {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                Complex64::new(re * s, im * s)
            })
        };
        let h_a = (0..bins).map(|_| draw(q_a, sources)).collect();
        let h_b = (0..bins).map(|_| draw(q_b, sources)).collect();
        Self { h_a, h_b }
    }

    /// Frequency responses of room impulse responses, `rirs[source][mic]`,
    /// sampled on the bins of a `window_len`-point real FFT.
    pub fn from_impulse_responses(
        rirs: &[Vec<Vec<f64>>],
        group_a: &[usize],
        group_b: &[usize],
        window_len: usize,
    ) -> Result<Self> {
        if rirs.is_empty() {
            return Err(Error::contract("no sources"));
        }
        let mut planner = RealFftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(window_len);
        let bins = window_len / 2 + 1;
        // spectra[source][mic][bin]
        let mut spectra = Vec::with_capacity(rirs.len());
        for per_mic in rirs {
            let mut row = Vec::with_capacity(per_mic.len());
            for h in per_mic {
                if h.len() > window_len {
                    return Err(Error::contract(format!(
                        "impulse response of {} taps exceeds the {window_len}-point transform",
                        h.len()
                    )));
                }
                let mut buf = vec![0.0; window_len];
                buf[..h.len()].copy_from_slice(h);
                let mut spec = fft.make_output_vec();
                fft.process(&mut buf, &mut spec).expect("planner-sized buffers");
                row.push(spec);
            }
            spectra.push(row);
        }
        let n_mics = spectra[0].len();
        if let Some(&bad) = group_a.iter().chain(group_b).find(|&&m| m >= n_mics) {
            return Err(Error::contract(format!("microphone {bad} out of range")));
        }
        let build = |group: &[usize], f: usize| {
            ComplexMatrix::from_fn(group.len(), rirs.len(), |i, l| spectra[l][group[i]][f])
        };
        let h_a = (0..bins).map(|f| build(group_a, f)).collect();
        let h_b = (0..bins).map(|f| build(group_b, f)).collect();
        Self::new(h_a, h_b)
    }

    pub fn bins(&self) -> usize {
        self.h_a.len()
    }

    pub fn q_a(&self) -> usize {
        self.h_a[0].rows()
    }

    pub fn q_b(&self) -> usize {
        self.h_b[0].rows()
    }

    pub fn sources(&self) -> usize {
        self.h_a[0].cols()
    }

    pub fn h_a(&self, bin: usize) -> &ComplexMatrix {
        &self.h_a[bin]
    }

    pub fn h_b(&self, bin: usize) -> &ComplexMatrix {
        &self.h_b[bin]
    }

    /// Transfer set restricted to a subset of sources.
    pub fn select_sources(&self, sources: &[usize]) -> Self {
        Self {
            h_a: self.h_a.iter().map(|m| m.select_columns(sources)).collect(),
            h_b: self.h_b.iter().map(|m| m.select_columns(sources)).collect(),
        }
    }

    /// Exact covariances for independent sources with the given powers.
    pub fn covariance(&self, powers: &[f64]) -> Result<CovariancePair> {
        if powers.len() != self.sources() {
            return Err(Error::contract(format!(
                "{} powers for {} sources",
                powers.len(),
                self.sources()
            )));
        }
        let p = ComplexMatrix::from_diagonal(
            &powers.iter().map(|&x| Complex64::new(x, 0.0)).collect::<Vec<_>>(),
        );
        let mut p_aa = Vec::with_capacity(self.bins());
        let mut p_ba = Vec::with_capacity(self.bins());
        for (ha, hb) in self.h_a.iter().zip(&self.h_b) {
            let p_ha = p.matmul(&ha.conj_transpose())?;
            p_aa.push(ha.matmul(&p_ha)?);
            p_ba.push(hb.matmul(&p_ha)?);
        }
        CovariancePair::from_parts(p_aa, p_ba, 1)
    }

    /// The defining relation `R = H_A H_B^+`, independent of any covariance.
    pub fn retm(&self) -> Result<Retm> {
        let matrices = self
            .h_a
            .iter()
            .zip(&self.h_b)
            .map(|(ha, hb)| ha.matmul(&pseudoinverse(hb, None)?))
            .collect::<Result<Vec<_>>>()?;
        Retm::from_matrices(
            matrices,
            Provenance {
                method: "transfer-function definition".into(),
                ..Provenance::default()
            },
        )
    }

    /// Microphone signals `(M_A, M_B)` for one bin and source vector.
    pub fn observe(&self, bin: usize, sources: &[Complex64]) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
        Ok((self.h_a[bin].apply(sources)?, self.h_b[bin].apply(sources)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn impulse_responses_become_bin_spectra() {
        // a pure delay of d samples has response exp(-2 pi i k d / N)
        let n = 16;
        let mut rir = vec![0.0; 5];
        rir[3] = 0.5;
        let set = TransferSet::from_impulse_responses(&[vec![rir.clone(), rir]], &[0], &[1], n).unwrap();
        assert_eq!(set.bins(), 9);
        for k in 0..9 {
            let want = Complex64::from_polar(0.5, -2.0 * std::f64::consts::PI * (3 * k) as f64 / n as f64);
            assert!((set.h_a(k).get(0, 0) - want).norm() < 1e-14);
        }
    }

    #[test]
    fn long_response_rejected() {
        let r = TransferSet::from_impulse_responses(&[vec![vec![0.0; 20]]], &[0], &[0], 16);
        assert!(r.is_err());
    }

    #[test]
    fn covariance_power_count_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let set = TransferSet::random(2, 2, 3, 2, &mut rng);
        assert!(set.covariance(&[1.0]).is_err());
        let cov = set.covariance(&[1.0, 1.0]).unwrap();
        assert!(cov.p_aa(0).is_hermitian());
    }
}
