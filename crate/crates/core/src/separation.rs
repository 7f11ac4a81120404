//! Speaker extraction by cancelling the undesired sources' group-A image.
//!
//! Given the ReTM `R` of every source except the target, the group-B
//! observation predicts what those sources contribute at group A, and
//! `S_hat = M_A - R M_B` leaves the target alone, filtered by
//! `h_A - R h_B`. No post-filter is applied to that distortion.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::Complex64;
use crate::retm::Retm;
use crate::stft::{SpectralFrames, Stft};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReconstructMode {
    /// The first group-A channel.
    #[default]
    Reference,
    /// Mean over all group-A channels.
    Average,
}

#[derive(Debug, Clone)]
pub struct SeparationOutput {
    /// `Q_A` copies of the target estimate, same layout as `M_A`.
    pub frames: SpectralFrames,
    /// Per-bin output energy over input (`M_A`) energy.
    pub bin_energy_ratio: Vec<f64>,
    /// Bins where the ReTM was flagged and the mixture passed through.
    pub passthrough_bins: Vec<usize>,
}

/// `S_hat(f,t) = M_A(f,t) - R(f) M_B(f,t)` for every bin and frame.
pub fn extract(frames_a: &SpectralFrames, frames_b: &SpectralFrames, undesired: &Retm) -> Result<SeparationOutput> {
    if !frames_a.same_layout(frames_b) {
        return Err(Error::contract(format!(
            "group frames misaligned: {}x{} vs {}x{}",
            frames_a.bins(),
            frames_a.frames(),
            frames_b.bins(),
            frames_b.frames()
        )));
    }
    let (qa, qb) = (frames_a.channels(), frames_b.channels());
    if undesired.bins() != frames_a.bins() || undesired.q_a() != qa || undesired.q_b() != qb {
        return Err(Error::contract(format!(
            "ReTM of {} bins x {}x{} does not fit {} bins with Q_A={qa}, Q_B={qb}",
            undesired.bins(),
            undesired.q_a(),
            undesired.q_b(),
            frames_a.bins()
        )));
    }
    let frames = frames_a.frames();
    let per_bin: Vec<(Vec<Vec<Complex64>>, f64)> = (0..frames_a.bins())
        .into_par_iter()
        .map(|f| {
            let r = undesired.matrix(f);
            let mut out: Vec<Vec<Complex64>> = (0..qa).map(|i| frames_a.series(i, f).to_vec()).collect();
            let input_energy: f64 = out.iter().flatten().map(|z| z.norm_sqr()).sum();
            if !undesired.is_failed(f) {
                for (j, mb) in (0..qb).map(|j| (j, frames_b.series(j, f))) {
                    for (i, row) in out.iter_mut().enumerate() {
                        let rij = r.get(i, j);
                        if rij != Complex64::new(0.0, 0.0) {
                            for (o, b) in row.iter_mut().zip(mb) {
                                *o -= rij * b;
                            }
                        }
                    }
                }
            }
            let output_energy: f64 = out.iter().flatten().map(|z| z.norm_sqr()).sum();
            let ratio = if input_energy > 0.0 {
                output_energy / input_energy
            } else {
                0.0
            };
            (out, ratio)
        })
        .collect();

    let mut spec = SpectralFrames::zeros(qa, frames, frames_a.sample_rate, frames_a.window_len, frames_a.hop);
    let mut bin_energy_ratio = Vec::with_capacity(per_bin.len());
    for (f, (rows, ratio)) in per_bin.into_iter().enumerate() {
        for (i, row) in rows.into_iter().enumerate() {
            spec.series_mut(i, f).copy_from_slice(&row);
        }
        bin_energy_ratio.push(ratio);
    }
    Ok(SeparationOutput {
        frames: spec,
        bin_energy_ratio,
        passthrough_bins: undesired.failed_bins(),
    })
}

/// Runs [`extract`] once per target, with `undesired[l]` the ReTM of all
/// sources other than speaker `l`.
pub fn extract_all(frames_a: &SpectralFrames, frames_b: &SpectralFrames, undesired: &[Retm]) -> Result<Vec<SeparationOutput>> {
    undesired
        .iter()
        .map(|r| extract(frames_a, frames_b, r))
        .collect()
}

/// Time-domain estimate of one speaker from its separated frames.
pub fn reconstruct(output: &SeparationOutput, mode: ReconstructMode) -> Result<Vec<f64>> {
    let frames = &output.frames;
    let stft = Stft::new(frames.window_len, frames.hop)?;
    let mono = match mode {
        ReconstructMode::Reference => frames.select_channels(&[0])?,
        ReconstructMode::Average => {
            let mut avg = frames.select_channels(&[0])?;
            let scale = 1.0 / frames.channels() as f64;
            for f in 0..frames.bins() {
                let dst = avg.series_mut(0, f);
                for (t, z) in dst.iter_mut().enumerate() {
                    *z = (0..frames.channels()).map(|c| frames.get(c, f, t)).sum::<Complex64>() * scale;
                }
            }
            avg
        }
    };
    Ok(stft.synthesize(&mono)?.channels.swap_remove(0))
}
