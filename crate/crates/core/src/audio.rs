//! WAV input/output and sample-rate conversion.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

/// Multichannel audio in double precision, one `Vec` per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub sample_rate: u32,
    pub channels: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WavFormat {
    Pcm16,
    #[default]
    Float32,
}

impl AudioBuffer {
    /// Builds a buffer, checking that channels agree in length and hold only
    /// finite samples.
    pub fn new(sample_rate: u32, channels: Vec<Vec<f64>>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::contract("audio buffer needs at least one channel"));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::contract("audio channels differ in length"));
        }
        if channels.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::contract("audio buffer contains non-finite samples"));
        }
        Ok(Self {
            sample_rate,
            channels,
        })
    }

    pub fn mono(sample_rate: u32, samples: Vec<f64>) -> Result<Self> {
        Self::new(sample_rate, vec![samples])
    }

    pub fn silence(sample_rate: u32, channels: usize, len: usize) -> Self {
        Self {
            sample_rate,
            channels: vec![vec![0.0; len]; channels.max(1)],
        }
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn channel(&self, idx: usize) -> &[f64] {
        &self.channels[idx]
    }

    /// New buffer holding only the listed channels.
    pub fn select_channels(&self, idx: &[usize]) -> Result<Self> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.num_channels()) {
            return Err(Error::contract(format!(
                "channel {bad} out of range for {}-channel audio",
                self.num_channels()
            )));
        }
        Ok(Self {
            sample_rate: self.sample_rate,
            channels: idx.iter().map(|&i| self.channels[i].clone()).collect(),
        })
    }

    /// Interleaved frame-major sample order, as stored in WAV files.
    pub fn interleaved(&self) -> Vec<f64> {
        let n = self.num_channels();
        let mut out = Vec::with_capacity(self.len() * n);
        for t in 0..self.len() {
            out.extend(self.channels.iter().map(|c| c[t]));
        }
        out
    }
}

fn wav_error(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e) => Error::io(path, e),
        hound::Error::Unsupported => Error::input(format!(
            "{}: unsupported WAV codec {}",
            path.display(),
            sniff_codec(path).unwrap_or_else(|| "(unknown)".into())
        )),
        other => Error::input(format!("{}: {other}", path.display())),
    }
}

/// Reads the `fmt ` chunk's format tag to give unsupported-codec errors a name.
fn sniff_codec(path: &Path) -> Option<String> {
    let mut bytes = Vec::new();
    File::open(path).ok()?.take(4096).read_to_end(&mut bytes).ok()?;
    let pos = bytes.windows(4).position(|w| w == b"fmt ")?;
    let tag = u16::from_le_bytes([*bytes.get(pos + 8)?, *bytes.get(pos + 9)?]);
    let name = match tag {
        0x0001 => "PCM",
        0x0002 => "MS-ADPCM",
        0x0003 => "IEEE float",
        0x0006 => "A-law",
        0x0007 => "mu-law",
        0x0011 => "IMA-ADPCM",
        0x0055 => "MPEG layer 3",
        0xFFFE => "extensible",
        _ => "",
    };
    Some(format!("{name} (format tag 0x{tag:04x})"))
}

/// Reads an integer-PCM or float32 WAV file into double precision.
///
/// Integer samples are scaled by `2^(bits-1)` so full scale maps to
/// `[-1, 1)`.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    // the file opened, so short reads past this point mean a truncated file
    let wav_error = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::input(format!("{}: truncated file ({io})", path.display())),
        other => wav_error(path, other),
    };
    let reader = WavReader::new(BufReader::new(
        File::open(path).map_err(|e| Error::io(path, e))?,
    ))
    .map_err(wav_error)?;
    let spec = reader.spec();
    let n_ch = spec.channels as usize;
    if n_ch == 0 {
        return Err(Error::input(format!("{}: zero channels", path.display())));
    }

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_error)?,
        (SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(wav_error)?
        }
        (fmt, bits) => {
            return Err(Error::input(format!(
                "{}: unsupported WAV codec {fmt:?} {bits}-bit",
                path.display()
            )))
        }
    };
    if !interleaved.len().is_multiple_of(n_ch) {
        return Err(Error::input(format!("{}: truncated sample data", path.display())));
    }
    let len = interleaved.len() / n_ch;
    let mut channels = vec![Vec::with_capacity(len); n_ch];
    for frame in interleaved.chunks_exact(n_ch) {
        for (c, &x) in channels.iter_mut().zip(frame) {
            c.push(x);
        }
    }
    if channels.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::input(format!("{}: non-finite samples", path.display())));
    }
    Ok(AudioBuffer {
        sample_rate: spec.sample_rate,
        channels,
    })
}

/// Writes a RIFF/WAVE file. PCM16 clips to full scale; float32 is lossless
/// for values representable in single precision.
pub fn write_wav(path: impl AsRef<Path>, buffer: &AudioBuffer, format: WavFormat) -> Result<()> {
    let path = path.as_ref();
    if buffer.channels.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::contract(format!(
            "{}: refusing to write non-finite samples",
            path.display()
        )));
    }
    let spec = WavSpec {
        channels: buffer.num_channels() as u16,
        sample_rate: buffer.sample_rate,
        bits_per_sample: match format {
            WavFormat::Pcm16 => 16,
            WavFormat::Float32 => 32,
        },
        sample_format: match format {
            WavFormat::Pcm16 => SampleFormat::Int,
            WavFormat::Float32 => SampleFormat::Float,
        },
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for x in buffer.interleaved() {
        match format {
            WavFormat::Pcm16 => {
                let q = (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                writer.write_sample(q)
            }
            WavFormat::Float32 => writer.write_sample(x as f32),
        }
        .map_err(|e| wav_error(path, e))?;
    }
    writer.finalize().map_err(|e| wav_error(path, e))
}

/// Zeroth-order modified Bessel function of the first kind, by power series.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..200 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Kaiser shape parameter for roughly 80 dB stopband attenuation.
const KAISER_BETA: f64 = 7.857;
/// Filter half-length in zero crossings of the lower of the two rates.
const SINC_ZERO_CROSSINGS: f64 = 48.0;
/// Passband edge as a fraction of the lower Nyquist frequency.
const SINC_CUTOFF: f64 = 0.92;

/// Band-limited resampling with a Kaiser-windowed sinc kernel.
///
/// Returns the input unchanged when the rates already match.
pub fn resample(buffer: &AudioBuffer, target_rate: u32) -> Result<AudioBuffer> {
    if target_rate == 0 {
        return Err(Error::contract("target sample rate must be positive"));
    }
    if buffer.sample_rate == target_rate {
        return Ok(buffer.clone());
    }
    let ratio = target_rate as f64 / buffer.sample_rate as f64;
    // cutoff in cycles per input sample
    let fc = 0.5 * SINC_CUTOFF * ratio.min(1.0);
    let half_width = SINC_ZERO_CROSSINGS / (2.0 * fc) / 2.0;
    let i0_beta = bessel_i0(KAISER_BETA);
    let out_len = (buffer.len() as f64 * ratio).round() as usize;

    let channels = buffer
        .channels
        .iter()
        .map(|x| {
            (0..out_len)
                .map(|n| {
                    let t = n as f64 / ratio;
                    let lo = (t - half_width).ceil().max(0.0) as usize;
                    let hi = ((t + half_width).floor() as usize).min(x.len().saturating_sub(1));
                    let mut acc = 0.0;
                    for (k, &xk) in x.iter().enumerate().take(hi + 1).skip(lo) {
                        let d = t - k as f64;
                        let r = d / half_width;
                        let w = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / i0_beta;
                        let arg = 2.0 * fc * d;
                        let sinc = if arg.abs() < 1e-12 {
                            1.0
                        } else {
                            (std::f64::consts::PI * arg).sin() / (std::f64::consts::PI * arg)
                        };
                        acc += xk * 2.0 * fc * sinc * w;
                    }
                    acc
                })
                .collect()
        })
        .collect();
    Ok(AudioBuffer {
        sample_rate: target_rate,
        channels,
    })
}
