use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use super::scenario::{Scenario, SignalSpec, SourceKind};
use super::{generate_rirs, synth};
use crate::audio::{read_wav, resample, AudioBuffer};
use crate::error::{Error, Result};
use crate::model::TransferSet;

/// What a rendered recording contains. Source indices refer to the
/// scenario's source list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "source", rename_all = "snake_case")]
pub enum SegmentKind {
    /// All sources; the recording to be separated.
    Mixture,
    /// Noise sources only.
    NoiseOnly,
    /// Noise sources plus one speaker.
    NoisePlus(usize),
    /// Every source except the given speaker.
    UndesiredOnly(usize),
    /// Arbitrary source set, used for solo renders.
    Custom(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub active: Vec<usize>,
    pub samples: usize,
}

impl Segment {
    pub fn custom(active: Vec<usize>, samples: usize, stream: u64) -> Self {
        Self { kind: SegmentKind::Custom(stream), active, samples }
    }

    pub fn label(&self) -> String {
        match self.kind {
            SegmentKind::Mixture => "mixture".into(),
            SegmentKind::NoiseOnly => "noise_only".into(),
            SegmentKind::NoisePlus(s) => format!("noise_plus_{s}"),
            SegmentKind::UndesiredOnly(s) => format!("undesired_{s}"),
            SegmentKind::Custom(id) => format!("custom_{id}"),
        }
    }

    /// Independent signal excerpts per segment kind.
    fn stream(&self) -> u64 {
        match self.kind {
            SegmentKind::Mixture => 0,
            SegmentKind::NoiseOnly => 1,
            SegmentKind::NoisePlus(s) => 0x100 + s as u64,
            SegmentKind::UndesiredOnly(s) => 0x200 + s as u64,
            SegmentKind::Custom(id) => id,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Rendered {
    pub segment: Segment,
    /// Clean reverberant image of each active source, all microphones.
    pub images: Vec<(usize, AudioBuffer)>,
    pub sensor_noise: AudioBuffer,
    pub mixture: AudioBuffer,
}

impl Rendered {
    pub fn image(&self, source: usize) -> Option<&AudioBuffer> {
        self.images.iter().find(|(s, _)| *s == source).map(|(_, b)| b)
    }

    /// Sum of the images of `sources` that are active here.
    pub fn image_sum(&self, sources: &[usize]) -> AudioBuffer {
        let mut out = AudioBuffer::silence(self.mixture.sample_rate, self.mixture.num_channels(), self.mixture.len());
        for (s, img) in &self.images {
            if sources.contains(s) {
                for (o, c) in out.channels.iter_mut().zip(&img.channels) {
                    o.iter_mut().zip(c).for_each(|(a, b)| *a += b);
                }
            }
        }
        out
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5EED, |acc, &p| splitmix(acc ^ splitmix(p)))
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

/// Full linear convolution.
pub fn convolve(signal: &[f64], kernel: &[f64]) -> Vec<f64> {
    if signal.is_empty() || kernel.is_empty() {
        return Vec::new();
    }
    let out_len = signal.len() + kernel.len() - 1;
    convolve_many(signal, &[kernel.to_vec()], out_len).pop().unwrap()
}

/// Convolves one signal with several kernels, keeping `out_len` samples.
fn convolve_many(signal: &[f64], kernels: &[Vec<f64>], out_len: usize) -> Vec<Vec<f64>> {
    let max_k = kernels.iter().map(Vec::len).max().unwrap_or(1);
    let nfft = (signal.len() + max_k - 1).max(out_len).next_power_of_two();
    let mut planner = RealFftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(nfft);
    let inv = planner.plan_fft_inverse(nfft);
    let spectrum = |x: &[f64]| {
        let mut buf = vec![0.0; nfft];
        buf[..x.len()].copy_from_slice(x);
        let mut out = fwd.make_output_vec();
        fwd.process(&mut buf, &mut out).expect("planner-sized buffers");
        out
    };
    let sig = spectrum(signal);
    kernels
        .par_iter()
        .map(|k| {
            let mut prod: Vec<_> = spectrum(k).iter().zip(&sig).map(|(a, b)| a * b).collect();
            let last = prod.len() - 1;
            prod[0].im = 0.0;
            prod[last].im = 0.0;
            let mut out = inv.make_output_vec();
            inv.process(&mut prod, &mut out).expect("planner-sized buffers");
            out.truncate(out_len);
            let scale = 1.0 / nfft as f64;
            out.iter_mut().for_each(|v| *v *= scale);
            out
        })
        .collect()
}

/// Renders recordings of a scenario. Impulse responses, noise-source gain
/// and sensor-noise levels are fixed at construction, so every segment
/// shares the same acoustic setup.
#[derive(Debug, Clone)]
pub struct Simulator {
    scenario: Scenario,
    rirs: Vec<Vec<Vec<f64>>>,
    files: Vec<Option<Vec<f64>>>,
    noise_gain: f64,
    sensor_std: Vec<f64>,
}

impl Simulator {
    pub fn new(scenario: Scenario) -> Result<Self> {
        scenario.validate()?;
        let positions: Vec<_> = scenario.sources.iter().map(|s| s.position).collect();
        let rirs = generate_rirs(&scenario.room, &positions, &scenario.microphones, scenario.sample_rate)?;
        let files = scenario
            .sources
            .iter()
            .map(|s| match &s.signal {
                SignalSpec::File { path } => {
                    let path = scenario.resolve(path);
                    let wav = read_wav(&path)?;
                    if wav.num_channels() != 1 {
                        return Err(Error::input(format!(
                            "{}: source signals must be mono, found {} channels",
                            path.display(),
                            wav.num_channels()
                        )));
                    }
                    let wav = resample(&wav, scenario.sample_rate)?;
                    Ok(Some(wav.channels.into_iter().next().unwrap()))
                }
                SignalSpec::Synthetic { .. } => Ok(None),
            })
            .collect::<Result<Vec<_>>>()?;

        let mut sim = Self {
            sensor_std: vec![0.0; scenario.microphones.len()],
            scenario,
            rirs,
            files,
            noise_gain: 1.0,
        };
        sim.calibrate()?;
        Ok(sim)
    }

    fn calibrate(&mut self) -> Result<()> {
        let seg = self.segment(SegmentKind::Mixture);
        let images = self.images(&seg)?;
        let speakers = self.scenario.speakers();
        let noises = self.scenario.noises();
        let sum = |set: &[usize], q: usize| -> Vec<f64> {
            let mut out = vec![0.0; seg.samples];
            for (s, img) in &images {
                if set.contains(s) {
                    out.iter_mut().zip(&img[q]).for_each(|(a, b)| *a += b);
                }
            }
            out
        };
        let mics = self.scenario.microphones.len();
        if !speakers.is_empty() && !noises.is_empty() {
            let mut mean_db = 0.0;
            for q in 0..mics {
                let (ps, pn) = (power(&sum(&speakers, q)), power(&sum(&noises, q)));
                if ps <= 0.0 || pn <= 0.0 {
                    return Err(Error::Infeasible(format!("microphone {q} receives no speech or no noise")));
                }
                mean_db += 10.0 * (ps / pn).log10() / mics as f64;
            }
            self.noise_gain = 10f64.powf((mean_db - self.scenario.snr_db) / 20.0);
        }
        let sensor = self.scenario.sensor_noise_snr_db;
        if sensor.is_finite() {
            for q in 0..mics {
                let s = sum(&speakers, q);
                let n = sum(&noises, q);
                let total: Vec<f64> = s.iter().zip(&n).map(|(a, b)| a + self.noise_gain * b).collect();
                self.sensor_std[q] = (power(&total) / 10f64.powf(sensor / 10.0)).sqrt();
            }
        }
        Ok(())
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    /// `rirs()[source][mic]`.
    pub fn rirs(&self) -> &[Vec<Vec<f64>>] {
        &self.rirs
    }

    pub fn rir_len(&self) -> usize {
        self.rirs.iter().flatten().map(Vec::len).max().unwrap_or(0)
    }

    /// Amplitude applied to every noise source.
    pub fn noise_gain(&self) -> f64 {
        self.noise_gain
    }

    pub fn sensor_noise_std(&self) -> &[f64] {
        &self.sensor_std
    }

    /// Exact per-bin transfer matrices of the simulated room, with the
    /// noise gain folded into the noise sources' columns.
    pub fn transfer_set(&self, window_len: usize) -> Result<TransferSet> {
        let scaled: Vec<Vec<Vec<f64>>> = self
            .rirs
            .iter()
            .zip(&self.scenario.sources)
            .map(|(per_mic, src)| {
                let g = self.gain_of(src.kind);
                per_mic.iter().map(|h| h.iter().map(|v| v * g).collect()).collect()
            })
            .collect();
        TransferSet::from_impulse_responses(&scaled, &self.scenario.group_a, &self.scenario.group_b, window_len)
    }

    fn gain_of(&self, kind: SourceKind) -> f64 {
        match kind {
            SourceKind::Speech => 1.0,
            SourceKind::Noise => self.noise_gain,
        }
    }

    /// Standard segment of the given kind with the scenario's durations.
    pub fn segment(&self, kind: SegmentKind) -> Segment {
        let sc = &self.scenario;
        let all: Vec<usize> = (0..sc.sources.len()).collect();
        let noises = sc.noises();
        let with = |extra: usize| {
            let mut v = noises.clone();
            v.push(extra);
            v.sort_unstable();
            v
        };
        let active = match kind {
            SegmentKind::Mixture => all,
            SegmentKind::NoiseOnly => noises.clone(),
            SegmentKind::NoisePlus(s) => with(s),
            SegmentKind::UndesiredOnly(s) => all.into_iter().filter(|&i| i != s).collect(),
            SegmentKind::Custom(_) => all,
        };
        let secs = if kind == SegmentKind::Mixture { sc.mixture_seconds } else { sc.calibration_seconds };
        Segment {
            kind,
            active,
            samples: (secs * f64::from(sc.sample_rate)).round() as usize,
        }
    }

    /// Calibration segments: noise only, noise plus each speaker, and
    /// every-source-but-one for each speaker.
    pub fn calibration_plan(&self) -> Vec<Segment> {
        let speakers = self.scenario.speakers();
        let mut plan = vec![self.segment(SegmentKind::NoiseOnly)];
        plan.extend(speakers.iter().map(|&s| self.segment(SegmentKind::NoisePlus(s))));
        plan.extend(speakers.iter().map(|&s| self.segment(SegmentKind::UndesiredOnly(s))));
        plan
    }

    /// Dry signal of a source for one segment.
    pub fn source_signal(&self, source: usize, segment: &Segment) -> Result<Vec<f64>> {
        let spec = self
            .scenario
            .sources
            .get(source)
            .ok_or_else(|| Error::contract(format!("source {source} out of range")))?;
        let n = segment.samples;
        match (&spec.signal, &self.files[source]) {
            (SignalSpec::Synthetic { seed }, _) => {
                let s = derive_seed(&[self.scenario.seed, *seed, segment.stream()]);
                Ok(match spec.kind {
                    SourceKind::Speech => synth::speech_like(n, self.scenario.sample_rate, s),
                    SourceKind::Noise => synth::noise(n, s),
                })
            }
            (SignalSpec::File { path }, Some(data)) => {
                // the mixture reads from the start; calibration recordings
                // follow it in the file
                let offset = if segment.kind == SegmentKind::Mixture {
                    0
                } else {
                    (self.scenario.mixture_seconds * f64::from(self.scenario.sample_rate)).round() as usize
                };
                data.get(offset..offset + n).map(<[f64]>::to_vec).ok_or_else(|| {
                    Error::input(format!(
                        "{}: {} samples available, segment '{}' needs {} from offset {offset}",
                        self.scenario.resolve(path).display(),
                        data.len(),
                        segment.label(),
                        n
                    ))
                })
            }
            (SignalSpec::File { .. }, None) => unreachable!("file sources are loaded at construction"),
        }
    }

    /// Unscaled images `[mic][sample]` of each active source.
    fn images(&self, segment: &Segment) -> Result<Vec<(usize, Vec<Vec<f64>>)>> {
        segment
            .active
            .iter()
            .map(|&s| {
                let sig = self.source_signal(s, segment)?;
                Ok((s, convolve_many(&sig, &self.rirs[s], segment.samples)))
            })
            .collect()
    }

    pub fn render(&self, segment: &Segment) -> Result<Rendered> {
        if let Some(&bad) = segment.active.iter().find(|&&s| s >= self.scenario.sources.len()) {
            return Err(Error::contract(format!("source {bad} out of range")));
        }
        let fs = self.scenario.sample_rate;
        let mics = self.scenario.microphones.len();
        let n = segment.samples;

        let mut images = Vec::with_capacity(segment.active.len());
        for (s, mut img) in self.images(segment)? {
            let g = self.gain_of(self.scenario.sources[s].kind);
            if g != 1.0 {
                img.iter_mut().flatten().for_each(|v| *v *= g);
            }
            images.push((s, AudioBuffer::new(fs, img)?));
        }

        let stream = segment.stream();
        let sensor: Vec<Vec<f64>> = (0..mics)
            .into_par_iter()
            .map(|q| {
                let sigma = self.sensor_std[q];
                if sigma == 0.0 {
                    return vec![0.0; n];
                }
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[self.scenario.seed, stream, q as u64, 0x5E45]));
                (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        sigma * z
                    })
                    .collect::<Vec<f64>>()
            })
            .collect();
        let sensor_noise = AudioBuffer::new(fs, sensor)?;

        let mut mixture = AudioBuffer::silence(fs, mics, n);
        for (_, img) in &images {
            for (o, c) in mixture.channels.iter_mut().zip(&img.channels) {
                o.iter_mut().zip(c).for_each(|(a, b)| *a += b);
            }
        }
        if self.sensor_std.iter().any(|&s| s > 0.0) {
            for (o, c) in mixture.channels.iter_mut().zip(&sensor_noise.channels) {
                o.iter_mut().zip(c).for_each(|(a, b)| *a += b);
            }
        }
        Ok(Rendered { segment: segment.clone(), images, sensor_noise, mixture })
    }

    /// The full mixture recording.
    pub fn render_mixture(&self) -> Result<Rendered> {
        self.render(&self.segment(SegmentKind::Mixture))
    }
}

/// Mean over microphones of the per-microphone speech-to-noise power
/// ratio in dB, recomputed from rendered images.
pub fn measured_snr_db(r: &Rendered, speakers: &[usize], noises: &[usize]) -> f64 {
    let s = r.image_sum(speakers);
    let n = r.image_sum(noises);
    let q = s.num_channels();
    (0..q)
        .map(|c| 10.0 * (power(s.channel(c)) / power(n.channel(c))).log10())
        .sum::<f64>()
        / q as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roomsim::scenario::SourceSpec;
    use crate::roomsim::Room;

    fn scenario(t60: f64, sensor: f64) -> Scenario {
        Scenario {
            name: "test".into(),
            description: String::new(),
            room: Room::new([4.0, 5.0, 3.0], t60),
            sources: vec![
                SourceSpec { kind: SourceKind::Speech, position: [1.0, 1.5, 1.2], signal: SignalSpec::Synthetic { seed: 1 } },
                SourceSpec { kind: SourceKind::Noise, position: [3.2, 4.1, 1.8], signal: SignalSpec::Synthetic { seed: 2 } },
            ],
            microphones: vec![[2.0, 2.5, 1.0], [2.2, 2.4, 1.1], [2.4, 2.7, 1.3]],
            group_a: vec![0],
            group_b: vec![1, 2],
            snr_db: 0.0,
            sensor_noise_snr_db: sensor,
            sample_rate: 8000,
            seed: 11,
            mixture_seconds: 1.0,
            calibration_seconds: 1.0,
            base_dir: Default::default(),
        }
    }

    #[test]
    fn convolution_matches_direct_sum() {
        let x = [1.0, -2.0, 0.5, 3.0];
        let h = [0.25, 0.0, -1.0];
        let mut want = vec![0.0; 6];
        for (i, a) in x.iter().enumerate() {
            for (j, b) in h.iter().enumerate() {
                want[i + j] += a * b;
            }
        }
        let got = convolve(&x, &h);
        assert!(got.iter().zip(&want).all(|(g, w)| (g - w).abs() < 1e-12));
    }

    #[test]
    fn snr_is_reproduced_from_images() {
        for snr in [0.0, -7.5] {
            let mut sc = scenario(0.2, 40.0);
            sc.snr_db = snr;
            let sim = Simulator::new(sc).unwrap();
            let r = sim.render_mixture().unwrap();
            let got = measured_snr_db(&r, &[0], &[1]);
            assert!((got - snr).abs() < 0.1, "{got} vs {snr}");
        }
    }

    #[test]
    fn sensor_noise_level() {
        let sim = Simulator::new(scenario(0.2, 40.0)).unwrap();
        let r = sim.render_mixture().unwrap();
        let clean = r.image_sum(&[0, 1]);
        for q in 0..3 {
            let ratio = 10.0 * (power(clean.channel(q)) / power(r.sensor_noise.channel(q))).log10();
            assert!((ratio - 40.0).abs() < 0.2, "mic {q}: {ratio}");
        }
    }

    #[test]
    fn joint_render_is_sum_of_solo_renders() {
        let sim = Simulator::new(scenario(0.2, f64::INFINITY)).unwrap();
        let joint = sim.render(&Segment::custom(vec![0, 1], 4000, 9)).unwrap();
        let a = sim.render(&Segment::custom(vec![0], 4000, 9)).unwrap();
        let b = sim.render(&Segment::custom(vec![1], 4000, 9)).unwrap();
        for q in 0..3 {
            let sum: Vec<f64> = a.mixture.channel(q).iter().zip(b.mixture.channel(q)).map(|(x, y)| x + y).collect();
            assert_eq!(joint.mixture.channel(q), &sum[..]);
        }
    }

    #[test]
    fn anechoic_single_source_is_delayed_copy() {
        let mut sc = scenario(0.0, f64::INFINITY);
        sc.sources.truncate(1);
        sc.group_b = vec![1, 2];
        let sim = Simulator::new(sc.clone()).unwrap();
        let seg = sim.segment(SegmentKind::Mixture);
        let dry = sim.source_signal(0, &seg).unwrap();
        let r = sim.render(&seg).unwrap();
        for (q, m) in sc.microphones.iter().enumerate() {
            let d = super::super::distance(&sc.sources[0].position, m);
            let delay = (d * 8000.0 / 343.0).round() as usize;
            let amp = 1.0 / (4.0 * std::f64::consts::PI * d);
            let got = r.mixture.channel(q);
            assert!(got[..delay].iter().all(|v| v.abs() < 1e-12));
            for t in delay..got.len() {
                assert!((got[t] - amp * dry[t - delay]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_rendering() {
        let a = Simulator::new(scenario(0.2, 40.0)).unwrap().render_mixture().unwrap();
        let b = Simulator::new(scenario(0.2, 40.0)).unwrap().render_mixture().unwrap();
        assert_eq!(a.mixture, b.mixture);
    }

    #[test]
    fn segments_use_independent_excerpts() {
        let sim = Simulator::new(scenario(0.2, 40.0)).unwrap();
        let a = sim.source_signal(0, &sim.segment(SegmentKind::Mixture)).unwrap();
        let b = sim.source_signal(0, &sim.segment(SegmentKind::NoisePlus(0))).unwrap();
        assert_ne!(a, b);
        let plan = sim.calibration_plan();
        let labels: Vec<_> = plan.iter().map(Segment::label).collect();
        assert_eq!(labels, ["noise_only", "noise_plus_0", "undesired_0"]);
        assert_eq!(plan[2].active, vec![1]);
    }

    #[test]
    fn short_source_file_named_in_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.wav");
        crate::audio::write_wav(&path, &AudioBuffer::mono(8000, vec![0.1; 100]).unwrap(), Default::default()).unwrap();
        let mut sc = scenario(0.2, 40.0);
        sc.sources[1].signal = SignalSpec::File { path: path.clone() };
        let err = Simulator::new(sc).unwrap_err().to_string();
        assert!(err.contains("short.wav"), "{err}");
    }
}
