//! Deterministic stand-ins for recorded source signals.
//!
//! `speech_like` produces voiced syllables (a glottal pulse train through
//! three formant resonators) separated by pauses, with occasional fricative
//! bursts, so the signal is nonstationary and has a speech-shaped long-term
//! spectrum. `noise` is stationary white Gaussian noise. Both are
//! normalized to an RMS of 0.1.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const TARGET_RMS: f64 = 0.1;

/// Two-pole resonator with unit peak gain.
struct Resonator {
    a1: f64,
    a2: f64,
    gain: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new() -> Self {
        Self { a1: 0.0, a2: 0.0, gain: 0.0, y1: 0.0, y2: 0.0 }
    }

    fn tune(&mut self, freq: f64, bandwidth: f64, fs: f64) {
        let r = (-std::f64::consts::PI * bandwidth / fs).exp();
        let theta = 2.0 * std::f64::consts::PI * freq / fs;
        self.a1 = 2.0 * r * theta.cos();
        self.a2 = -r * r;
        self.gain = 1.0 - r;
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.gain * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

fn normalize(mut x: Vec<f64>) -> Vec<f64> {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v *= TARGET_RMS / rms);
    }
    x
}

pub fn noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    normalize((0..len).map(|_| StandardNormal.sample(&mut rng)).collect())
}

pub fn speech_like(len: usize, sample_rate: u32, seed: u64) -> Vec<f64> {
    let fs = f64::from(sample_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base_f0: f64 = rng.random_range(95.0..230.0);
    let mut formants = [Resonator::new(), Resonator::new(), Resonator::new()];
    let mut out = vec![0.0; len];

    let mut t = 0;
    let mut phase = 0.0;
    while t < len {
        // pause
        let long = rng.random_bool(0.1);
        let pause = if long { rng.random_range(0.3..0.8) } else { rng.random_range(0.04..0.2) };
        t += (pause * fs) as usize;
        if t >= len {
            break;
        }

        let dur = ((rng.random_range(0.12..0.38)) * fs) as usize;
        let end = (t + dur).min(len);
        let fricative = rng.random_bool(0.2);
        let f: [f64; 3] = [
            rng.random_range(300.0..850.0),
            rng.random_range(900.0..2400.0),
            rng.random_range(2400.0..3400.0),
        ];
        for (res, (&freq, bw)) in formants.iter_mut().zip(f.iter().zip([80.0, 120.0, 180.0])) {
            res.tune(freq.min(0.45 * fs), bw, fs);
        }
        let f0_start = base_f0 * rng.random_range(0.85..1.15);
        let f0_end = base_f0 * rng.random_range(0.8..1.1);
        let level: f64 = rng.random_range(0.5..1.0);

        for (k, sample) in out[t..end].iter_mut().enumerate() {
            let u = k as f64 / (end - t).max(1) as f64;
            let env = (std::f64::consts::PI * u).sin().powf(0.6) * level;
            let excitation = if fricative {
                let n: f64 = StandardNormal.sample(&mut rng);
                0.3 * n
            } else {
                let f0 = f0_start + (f0_end - f0_start) * u;
                phase += f0 / fs;
                let jitter: f64 = StandardNormal.sample(&mut rng);
                if phase >= 1.0 {
                    phase -= 1.0;
                    1.0 + 0.05 * jitter
                } else {
                    0.02 * jitter
                }
            };
            let y: f64 = if fricative {
                // high-frequency hiss mostly from the top resonator
                formants[2].step(excitation) + 0.2 * formants[1].step(excitation)
            } else {
                formants.iter_mut().map(|r| r.step(excitation)).sum()
            };
            *sample = env * y;
        }
        t = end;
    }
    normalize(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_normalized() {
        let a = speech_like(32000, 16000, 3);
        assert_eq!(a, speech_like(32000, 16000, 3));
        assert_ne!(a, speech_like(32000, 16000, 4));
        let rms = (a.iter().map(|v| v * v).sum::<f64>() / a.len() as f64).sqrt();
        assert!((rms - TARGET_RMS).abs() < 1e-12);
        assert!(a.iter().all(|v| v.is_finite()));
        let n = noise(1000, 1);
        assert_eq!(n, noise(1000, 1));
    }

    #[test]
    fn speech_like_has_pauses() {
        let x = speech_like(16000 * 10, 16000, 9);
        let quiet = x.chunks(160).filter(|c| c.iter().all(|v| v.abs() < 1e-3)).count();
        assert!(quiet > 10, "only {quiet} quiet 10 ms blocks");
    }
}
