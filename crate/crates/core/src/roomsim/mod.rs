//! Shoebox room acoustics: image-source impulse responses, scenario files
//! and SNR-calibrated multichannel rendering.

mod render;
mod scenario;
pub mod synth;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use render::{convolve, measured_snr_db, Rendered, Segment, SegmentKind, Simulator};
pub use scenario::{Scenario, SignalSpec, SourceKind, SourceSpec};

pub type Position = [f64; 3];

fn default_speed_of_sound() -> f64 {
    343.0
}

/// Rectangular room with uniformly absorbing walls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub dimensions: [f64; 3],
    /// Reverberation time in seconds; zero means free field.
    pub t60: f64,
    #[serde(default = "default_speed_of_sound")]
    pub speed_of_sound: f64,
    /// Cap on the total number of wall reflections per image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_reflection_order: Option<u32>,
}

impl Room {
    pub fn new(dimensions: [f64; 3], t60: f64) -> Self {
        Self {
            dimensions,
            t60,
            speed_of_sound: default_speed_of_sound(),
            max_reflection_order: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimensions.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::contract(format!("room dimensions {:?} must be positive", self.dimensions)));
        }
        if !(self.t60 >= 0.0 && self.t60.is_finite()) {
            return Err(Error::contract(format!("T60 {} must be finite and nonnegative", self.t60)));
        }
        if !(self.speed_of_sound > 0.0 && self.speed_of_sound.is_finite()) {
            return Err(Error::contract("speed of sound must be positive"));
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        self.dimensions.iter().product()
    }

    pub fn surface(&self) -> f64 {
        let [x, y, z] = self.dimensions;
        2.0 * (x * y + x * z + y * z)
    }

    /// Sabine absorption `0.161 V / (S T60)`, or 1 for a free field.
    pub fn absorption(&self) -> f64 {
        if self.t60 == 0.0 {
            1.0
        } else {
            0.161 * self.volume() / (self.surface() * self.t60)
        }
    }

    /// Pressure reflection coefficient `sqrt(1 - alpha)` shared by all walls.
    pub fn reflection_coefficient(&self) -> Result<f64> {
        self.validate()?;
        let alpha = self.absorption();
        if alpha > 1.0 {
            return Err(Error::Infeasible(format!(
                "T60 of {} s is too short for a {:?} m room (Sabine absorption {alpha:.3} > 1)",
                self.t60, self.dimensions
            )));
        }
        Ok((1.0 - alpha).sqrt())
    }

    pub fn contains(&self, p: &Position) -> bool {
        p.iter().zip(&self.dimensions).all(|(&x, &d)| x > 0.0 && x < d)
    }

    fn check_inside(&self, p: &Position, what: &str) -> Result<()> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(Error::contract(format!(
                "{what} at {p:?} is not strictly inside the {:?} m room",
                self.dimensions
            )))
        }
    }
}

fn distance(a: &Position, b: &Position) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Image-source impulse response from `source` to `mic`.
///
/// Each image contributes `beta^k / (4 pi d)` at the nearest sample to
/// `d / c`, where `k` is its number of wall reflections. The response is
/// `ceil(t60 * fs)` samples long, extended if needed to hold the direct path.
pub fn generate_rir(room: &Room, source: &Position, mic: &Position, sample_rate: u32) -> Result<Vec<f64>> {
    let (mut h, reverberant) = image_sum(room, source, mic, sample_rate)?;
    if reverberant {
        highpass(&mut h, f64::from(sample_rate));
    }
    Ok(h)
}

/// Unfiltered image sum; the flag is false for a lone direct path.
fn image_sum(room: &Room, source: &Position, mic: &Position, sample_rate: u32) -> Result<(Vec<f64>, bool)> {
    let beta = room.reflection_coefficient()?;
    room.check_inside(source, "source")?;
    room.check_inside(mic, "microphone")?;
    let direct_distance = distance(source, mic);
    if direct_distance < 1e-6 {
        return Err(Error::contract(format!("source and microphone coincide at {source:?}")));
    }

    let fs = f64::from(sample_rate);
    let c = room.speed_of_sound;
    let direct = (direct_distance * fs / c).round() as usize;
    let len = ((room.t60 * fs).ceil() as usize).max(direct + 1);
    let mut h = vec![0.0; len];

    if beta == 0.0 || room.max_reflection_order == Some(0) {
        h[direct] = 1.0 / (4.0 * std::f64::consts::PI * direct_distance);
        return Ok((h, false));
    }

    // farthest image that still rounds into the response
    let reach = (len as f64 - 0.5) * c / fs;
    let span = |k: usize| (reach / (2.0 * room.dimensions[k])).ceil() as i64 + 1;

    // per-axis candidates: (offset from mic, reflection count)
    let axis = |k: usize| -> Vec<(f64, u32)> {
        let n = span(k);
        let l = room.dimensions[k];
        let mut out = Vec::with_capacity((4 * n + 2) as usize);
        for m in -n..=n {
            for p in 0..2i64 {
                let x = (1 - 2 * p) as f64 * source[k] + 2.0 * m as f64 * l;
                let refl = ((m - p).abs() + m.abs()) as u32;
                out.push((x - mic[k], refl));
            }
        }
        out
    };
    let (ax, ay, az) = (axis(0), axis(1), axis(2));
    let reach2 = reach * reach;
    let max_order = room.max_reflection_order.unwrap_or(u32::MAX);

    for &(dx, rx) in &ax {
        if dx * dx > reach2 {
            continue;
        }
        for &(dy, ry) in &ay {
            let dxy = dx * dx + dy * dy;
            if dxy > reach2 {
                continue;
            }
            for &(dz, rz) in &az {
                let d2 = dxy + dz * dz;
                let order = rx + ry + rz;
                if d2 > reach2 || order > max_order {
                    continue;
                }
                let d = d2.sqrt();
                let t = (d * fs / c).round() as usize;
                if t < len {
                    h[t] += beta.powi(order as i32) / (4.0 * std::f64::consts::PI * d);
                }
            }
        }
    }
    Ok((h, true))
}

/// Second-order high-pass at 100 Hz from the original image-method
/// formulation; removes the DC build-up of the all-positive image sum.
fn highpass(h: &mut [f64], fs: f64) {
    let w = 2.0 * std::f64::consts::PI * 100.0 / fs;
    let r1 = (-w).exp();
    let (b1, b2, a1) = (2.0 * r1 * w.cos(), -r1 * r1, -(1.0 + r1));
    let (mut y1, mut y2) = (0.0, 0.0);
    for v in h.iter_mut() {
        let y0 = b1 * y1 + b2 * y2 + *v;
        *v = y0 + a1 * y1 + r1 * y2;
        y2 = y1;
        y1 = y0;
    }
}

/// All responses `rirs[source][mic]`, computed in parallel.
pub fn generate_rirs(room: &Room, sources: &[Position], mics: &[Position], sample_rate: u32) -> Result<Vec<Vec<Vec<f64>>>> {
    sources
        .par_iter()
        .map(|s| mics.par_iter().map(|m| generate_rir(room, s, m, sample_rate)).collect())
        .collect()
}

/// Reverberation time from Schroeder backward integration, extrapolated
/// from the -5 to -25 dB portion of the decay curve.
pub fn schroeder_t60(rir: &[f64], sample_rate: u32) -> Option<f64> {
    let mut edc = vec![0.0; rir.len()];
    let mut acc = 0.0;
    for (i, v) in rir.iter().enumerate().rev() {
        acc += v * v;
        edc[i] = acc;
    }
    let total = edc.first().copied().filter(|&e| e > 0.0)?;
    let (mut n, mut st, mut sy, mut stt, mut sty) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, e) in edc.iter().enumerate() {
        let db = 10.0 * (e / total).log10();
        if (-25.0..=-5.0).contains(&db) {
            let t = i as f64 / f64::from(sample_rate);
            n += 1.0;
            st += t;
            sy += db;
            stt += t * t;
            sty += t * db;
        }
    }
    if n < 2.0 {
        return None;
    }
    let slope = (n * sty - st * sy) / (n * stt - st * st);
    (slope < 0.0).then(|| -60.0 / slope)
}
