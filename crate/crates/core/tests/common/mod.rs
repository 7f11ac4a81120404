#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use retm::linalg::{Complex64, ComplexMatrix};
use retm::model::TransferSet;
use retm::stft::SpectralFrames;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Circular complex Gaussian with the given variance.
pub fn cn(rng: &mut ChaCha8Rng, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * s, im * s)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |_, _| cn(rng, 1.0))
}

/// Window length whose real FFT has `bins` bins.
pub fn window_for(bins: usize) -> usize {
    2 * (bins - 1)
}

/// Group-A and group-B frames of independent Gaussian sources with the
/// given powers seen through `set`, plus white sensor noise of variance
/// `sensor`.
pub fn observe(set: &TransferSet, powers: &[f64], frames: usize, sensor: f64, seed: u64) -> (SpectralFrames, SpectralFrames) {
    let mut r = rng(seed);
    let w = window_for(set.bins());
    let mut a = SpectralFrames::zeros(set.q_a(), frames, 16000, w, w / 2);
    let mut b = SpectralFrames::zeros(set.q_b(), frames, 16000, w, w / 2);
    for f in 0..set.bins() {
        for t in 0..frames {
            let s: Vec<Complex64> = powers.iter().map(|&p| cn(&mut r, p)).collect();
            let (ma, mb) = set.observe(f, &s).unwrap();
            for (c, v) in ma.into_iter().enumerate() {
                let n = if sensor > 0.0 { cn(&mut r, sensor) } else { Complex64::new(0.0, 0.0) };
                a.set(c, f, t, v + n);
            }
            for (c, v) in mb.into_iter().enumerate() {
                let n = if sensor > 0.0 { cn(&mut r, sensor) } else { Complex64::new(0.0, 0.0) };
                b.set(c, f, t, v + n);
            }
        }
    }
    (a, b)
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}
