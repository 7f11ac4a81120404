//! Short-time Fourier transform with a periodic square-root Hann window.
//!
//! Analysis and synthesis both apply the square-root window, so the
//! effective overlap-add window is a periodic Hann, which sums to a
//! constant for any hop of the form `window_len / 2^k`, `k >= 1`.
//! The transform assumes the room response is shorter than the window;
//! longer responses break the multiplicative transfer-function model that
//! the per-bin estimators rely on.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::linalg::Complex64;

/// Multichannel STFT coefficients indexed by (channel, bin, frame).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFrames {
    channels: usize,
    bins: usize,
    frames: usize,
    pub sample_rate: u32,
    pub window_len: usize,
    pub hop: usize,
    data: Vec<Complex64>,
}

impl SpectralFrames {
    pub fn zeros(channels: usize, frames: usize, sample_rate: u32, window_len: usize, hop: usize) -> Self {
        let bins = window_len / 2 + 1;
        Self {
            channels,
            bins,
            frames,
            sample_rate,
            window_len,
            hop,
            data: vec![Complex64::new(0.0, 0.0); channels * bins * frames],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    fn offset(&self, channel: usize, bin: usize) -> usize {
        (channel * self.bins + bin) * self.frames
    }

    pub fn get(&self, channel: usize, bin: usize, frame: usize) -> Complex64 {
        self.data[self.offset(channel, bin) + frame]
    }

    pub fn set(&mut self, channel: usize, bin: usize, frame: usize, value: Complex64) {
        let o = self.offset(channel, bin);
        self.data[o + frame] = value;
    }

    /// All frames of one (channel, bin) cell.
    pub fn series(&self, channel: usize, bin: usize) -> &[Complex64] {
        let o = self.offset(channel, bin);
        &self.data[o..o + self.frames]
    }

    pub fn series_mut(&mut self, channel: usize, bin: usize) -> &mut [Complex64] {
        let o = self.offset(channel, bin);
        let n = self.frames;
        &mut self.data[o..o + n]
    }

    /// Channel vector at one time-frequency point.
    pub fn vector(&self, bin: usize, frame: usize) -> Vec<Complex64> {
        (0..self.channels).map(|c| self.get(c, bin, frame)).collect()
    }

    pub fn select_channels(&self, idx: &[usize]) -> Result<Self> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.channels) {
            return Err(Error::contract(format!(
                "channel {bad} out of range for {} channels",
                self.channels
            )));
        }
        let mut out = Self::zeros(idx.len(), self.frames, self.sample_rate, self.window_len, self.hop);
        for (new, &old) in idx.iter().enumerate() {
            for b in 0..self.bins {
                out.series_mut(new, b).copy_from_slice(self.series(old, b));
            }
        }
        Ok(out)
    }

    /// Frames `[start, end)` of every channel.
    pub fn slice_frames(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.frames {
            return Err(Error::contract(format!(
                "frame range {start}..{end} invalid for {} frames",
                self.frames
            )));
        }
        let mut out = Self::zeros(self.channels, end - start, self.sample_rate, self.window_len, self.hop);
        for c in 0..self.channels {
            for b in 0..self.bins {
                out.series_mut(c, b).copy_from_slice(&self.series(c, b)[start..end]);
            }
        }
        Ok(out)
    }

    pub fn scale(&self, alpha: Complex64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|z| *z *= alpha);
        out
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.bins == other.bins
            && self.frames == other.frames
            && self.window_len == other.window_len
            && self.hop == other.hop
    }

    /// Bin-wise sum of two frame sets with identical layout.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if !self.same_layout(other) || self.channels != other.channels {
            return Err(Error::contract("cannot add spectral frames of different shape"));
        }
        let mut out = self.clone();
        out.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        Ok(out)
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Periodic square-root Hann window of length `n`.
pub fn sqrt_hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| (0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).sqrt())
        .collect()
}

/// Reusable forward/inverse transform for one window length and hop.
#[derive(Clone)]
pub struct Stft {
    window_len: usize,
    hop: usize,
    window: Vec<f64>,
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft")
            .field("window_len", &self.window_len)
            .field("hop", &self.hop)
            .finish()
    }
}

impl Stft {
    pub fn new(window_len: usize, hop: usize) -> Result<Self> {
        if window_len < 2 || !window_len.is_power_of_two() {
            return Err(Error::contract(format!(
                "window length {window_len} is not a power of two"
            )));
        }
        if hop == 0 || hop > window_len {
            return Err(Error::contract(format!(
                "hop {hop} must lie in 1..={window_len}"
            )));
        }
        let mut planner = RealFftPlanner::<f64>::new();
        Ok(Self {
            window_len,
            hop,
            window: sqrt_hann(window_len),
            forward: planner.plan_fft_forward(window_len),
            inverse: planner.plan_fft_inverse(window_len),
        })
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Periodic Hann overlap-adds to a constant only for hops that split the
    /// window into at least two equal parts.
    pub fn is_cola(&self) -> bool {
        self.hop < self.window_len && self.window_len.is_multiple_of(self.hop)
    }

    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.window_len {
            0
        } else {
            (len - self.window_len) / self.hop + 1
        }
    }

    /// Length of the signal produced by [`Stft::synthesize`] for `frames`
    /// frames.
    pub fn synthesis_len(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop + self.window_len
        }
    }

    fn analyze_channel(&self, x: &[f64], frames: usize) -> Vec<Vec<Complex64>> {
        let bins = self.bins();
        let mut per_bin = vec![vec![Complex64::new(0.0, 0.0); frames]; bins];
        let mut buf = self.forward.make_input_vec();
        let mut spec = self.forward.make_output_vec();
        let mut scratch = self.forward.make_scratch_vec();
        for t in 0..frames {
            let start = t * self.hop;
            for (i, slot) in buf.iter_mut().enumerate() {
                *slot = x[start + i] * self.window[i];
            }
            self.forward
                .process_with_scratch(&mut buf, &mut spec, &mut scratch)
                .expect("buffer sizes come from the planner");
            for (b, z) in spec.iter().enumerate() {
                per_bin[b][t] = *z;
            }
        }
        per_bin
    }

    /// Windowed forward transform of every channel. Frames start at sample
    /// `t * hop` and no padding is applied.
    pub fn analyze(&self, audio: &AudioBuffer) -> Result<SpectralFrames> {
        if audio.len() < self.window_len {
            return Err(Error::contract(format!(
                "audio of {} samples is shorter than one {}-sample window",
                audio.len(),
                self.window_len
            )));
        }
        let frames = self.frame_count(audio.len());
        let per_channel: Vec<Vec<Vec<Complex64>>> = audio
            .channels
            .par_iter()
            .map(|x| self.analyze_channel(x, frames))
            .collect();
        let mut out = SpectralFrames::zeros(audio.num_channels(), frames, audio.sample_rate, self.window_len, self.hop);
        for (c, bins) in per_channel.into_iter().enumerate() {
            for (b, series) in bins.into_iter().enumerate() {
                out.series_mut(c, b).copy_from_slice(&series);
            }
        }
        Ok(out)
    }

    fn synthesize_channel(&self, frames: &SpectralFrames, channel: usize) -> Vec<f64> {
        let n = frames.frames();
        let mut out = vec![0.0; self.synthesis_len(n)];
        let mut spec = self.inverse.make_input_vec();
        let mut buf = self.inverse.make_output_vec();
        let mut scratch = self.inverse.make_scratch_vec();
        // inverse FFT is unnormalized; Hann overlap sums to window_len / (2 hop)
        let gain = 2.0 * self.hop as f64 / (self.window_len as f64 * self.window_len as f64);
        for t in 0..n {
            for (b, slot) in spec.iter_mut().enumerate() {
                *slot = frames.get(channel, b, t);
            }
            // the inverse real FFT requires purely real DC and Nyquist bins
            spec[0].im = 0.0;
            let last = spec.len() - 1;
            spec[last].im = 0.0;
            self.inverse
                .process_with_scratch(&mut spec, &mut buf, &mut scratch)
                .expect("buffer sizes come from the planner");
            let start = t * self.hop;
            for i in 0..self.window_len {
                out[start + i] += buf[i] * self.window[i] * gain;
            }
        }
        out
    }

    /// Overlap-add resynthesis. Output length is `(frames - 1) * hop + window_len`.
    pub fn synthesize(&self, frames: &SpectralFrames) -> Result<AudioBuffer> {
        if frames.window_len != self.window_len || frames.hop != self.hop {
            return Err(Error::contract(format!(
                "frames use window {}/hop {}, transform uses {}/{}",
                frames.window_len, frames.hop, self.window_len, self.hop
            )));
        }
        if !self.is_cola() {
            return Err(Error::contract(format!(
                "hop {} with a {}-sample sqrt-Hann window does not overlap-add to a constant",
                self.hop, self.window_len
            )));
        }
        let channels: Vec<Vec<f64>> = (0..frames.channels())
            .into_par_iter()
            .map(|c| self.synthesize_channel(frames, c))
            .collect();
        Ok(AudioBuffer {
            sample_rate: frames.sample_rate,
            channels,
        })
    }
}

/// One-shot analysis; see [`Stft::analyze`].
pub fn analyze(audio: &AudioBuffer, window_len: usize, hop: usize) -> Result<SpectralFrames> {
    Stft::new(window_len, hop)?.analyze(audio)
}

/// One-shot synthesis using the frames' own window length and hop.
pub fn synthesize(frames: &SpectralFrames) -> Result<AudioBuffer> {
    Stft::new(frames.window_len, frames.hop)?.synthesize(frames)
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

    fn interior_error(x: &[f64], y: &[f64], n: usize) -> f64 {
        let end = y.len().min(x.len()) - n;
        let num: f64 = (n..end).map(|i| (x[i] - y[i]).powi(2)).sum();
        let den: f64 = (n..end).map(|i| x[i].powi(2)).sum();
        (num / den).sqrt()
    }

    /// Direct O(N^2) DFT, independent of the FFT path.
    fn dft(x: &[f64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n / 2 + 1)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(i, &v)| Complex64::from_polar(v, -2.0 * PI * (k * i) as f64 / n as f64))
                    .sum()
            })
            .collect()
    }

    #[test]
    fn frame_count_and_bins() {
        let stft = Stft::new(64, 32).unwrap();
        let audio = AudioBuffer::mono(16_000, vec![0.0; 200]).unwrap();
        let f = stft.analyze(&audio).unwrap();
        assert_eq!(f.bins(), 33);
        assert_eq!(f.frames(), (200 - 64) / 32 + 1);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(Stft::new(100, 50).is_err());
        assert!(Stft::new(64, 0).is_err());
        assert!(Stft::new(64, 65).is_err());
        let short = AudioBuffer::mono(16_000, vec![0.0; 10]).unwrap();
        assert!(matches!(analyze(&short, 64, 32), Err(Error::Contract(_))));
    }

    #[test]
    fn non_cola_synthesis_rejected() {
        let stft = Stft::new(64, 64).unwrap();
        let f = stft.analyze(&AudioBuffer::mono(8000, vec![0.0; 128]).unwrap()).unwrap();
        assert!(matches!(stft.synthesize(&f), Err(Error::Contract(_))));
    }

    #[test]
    fn zeros_in_zeros_out() {
        let f = analyze(&AudioBuffer::silence(16_000, 2, 1024), 256, 128).unwrap();
        assert_eq!(f.energy(), 0.0);
        let y = synthesize(&SpectralFrames::zeros(2, 5, 16_000, 256, 128)).unwrap();
        assert!(y.channels.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn impulse_at_frame_start_gives_window_spectrum() {
        let n = 128;
        let mut x = vec![0.0; n];
        x[0] = 1.0;
        let f = analyze(&AudioBuffer::mono(16_000, x).unwrap(), n, n / 2).unwrap();
        // window[0] = 0 for periodic sqrt-Hann, so shift the impulse inside
        let mut x2 = vec![0.0; n];
        x2[10] = 1.0;
        let f2 = analyze(&AudioBuffer::mono(16_000, x2).unwrap(), n, n / 2).unwrap();
        let w = sqrt_hann(n);
        let mut delta = vec![0.0; n];
        delta[10] = w[10];
        let want = dft(&delta);
        for b in 0..f2.bins() {
            assert!((f.get(0, b, 0)).norm() < 1e-15);
            assert!((f2.get(0, b, 0) - want[b]).norm() < 1e-12);
        }
    }

    #[test]
    fn bin_centred_tone_matches_closed_form() {
        let n = 1024;
        let k0 = 100;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * PI * (k0 * i) as f64 / n as f64).cos())
            .collect();
        let f = analyze(&AudioBuffer::mono(16_000, x.clone()).unwrap(), n, n / 2).unwrap();
        let w = sqrt_hann(n);
        let windowed: Vec<f64> = x.iter().zip(&w).map(|(a, b)| a * b).collect();
        let want = dft(&windowed);
        let peak = (0..f.bins())
            .max_by(|&a, &b| f.get(0, a, 0).norm().total_cmp(&f.get(0, b, 0).norm()))
            .unwrap();
        assert_eq!(peak, k0);
        for b in 0..f.bins() {
            assert!((f.get(0, b, 0) - want[b]).norm() < 1e-9);
        }
        // far sidelobes of the sine-shaped window fall off as 1/k^2
        let total: f64 = (0..f.bins()).map(|b| f.get(0, b, 0).norm_sqr()).sum();
        let far: f64 = (0..f.bins())
            .filter(|&b| (b as i64 - k0 as i64).abs() >= 48)
            .map(|b| f.get(0, b, 0).norm_sqr())
            .sum();
        assert!(10.0 * (far / total).log10() < -60.0);
    }

    #[test]
    fn white_noise_round_trip() {
        let x = noise(16_384, 1);
        let stft = Stft::new(1024, 512).unwrap();
        let a = AudioBuffer::mono(16_000, x.clone()).unwrap();
        let y = stft.synthesize(&stft.analyze(&a).unwrap()).unwrap();
        assert!(interior_error(&x, &y.channels[0], 1024) < 1e-6);
    }

    #[test]
    fn chirp_round_trip_quarter_hop() {
        let fs = 16_000.0;
        let x: Vec<f64> = (0..32_000)
            .map(|i| {
                let t = i as f64 / fs;
                (2.0 * PI * (100.0 * t + 1_800.0 * t * t)).sin()
            })
            .collect();
        let stft = Stft::new(2048, 512).unwrap();
        let y = stft
            .synthesize(&stft.analyze(&AudioBuffer::mono(16_000, x.clone()).unwrap()).unwrap())
            .unwrap();
        assert!(interior_error(&x, &y.channels[0], 2048) < 1e-6);
    }

    #[test]
    fn parseval_per_frame() {
        let n = 512;
        let x = noise(4 * n, 7);
        let f = analyze(&AudioBuffer::mono(16_000, x.clone()).unwrap(), n, n / 2).unwrap();
        let w = sqrt_hann(n);
        for t in 0..f.frames() {
            let time: f64 = (0..n).map(|i| (x[t * n / 2 + i] * w[i]).powi(2)).sum();
            let mut spec = 0.0;
            for b in 0..f.bins() {
                let weight = if b == 0 || b == n / 2 { 1.0 } else { 2.0 };
                spec += weight * f.get(0, b, t).norm_sqr();
            }
            spec /= n as f64;
            assert!(((time - spec) / time).abs() < 1e-9);
        }
    }

    #[test]
    fn linear_in_the_input() {
        let a = noise(2048, 2);
        let b = noise(2048, 3);
        let s: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let fa = analyze(&AudioBuffer::mono(16_000, a).unwrap(), 256, 128).unwrap();
        let fb = analyze(&AudioBuffer::mono(16_000, b).unwrap(), 256, 128).unwrap();
        let fs = analyze(&AudioBuffer::mono(16_000, s).unwrap(), 256, 128).unwrap();
        let sum = fa.add(&fb).unwrap();
        for bin in 0..fs.bins() {
            for t in 0..fs.frames() {
                assert!((fs.get(0, bin, t) - sum.get(0, bin, t)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn channel_selection_and_slicing() {
        let audio = AudioBuffer::new(16_000, vec![noise(1024, 1), noise(1024, 2), noise(1024, 3)]).unwrap();
        let f = analyze(&audio, 256, 128).unwrap();
        let sel = f.select_channels(&[2, 0]).unwrap();
        assert_eq!(sel.series(0, 5), f.series(2, 5));
        assert_eq!(sel.series(1, 9), f.series(0, 9));
        assert!(f.select_channels(&[3]).is_err());
        let sl = f.slice_frames(1, 4).unwrap();
        assert_eq!(sl.frames(), 3);
        assert_eq!(sl.get(1, 7, 0), f.get(1, 7, 1));
        assert!(f.slice_frames(4, 4).is_err());
    }
}
