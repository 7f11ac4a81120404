//! A speaker's spatial covariance recovered by subtracting a noise-only
//! recording from a noise-plus-speaker recording, compared with the
//! covariance of the speaker recorded alone.
//!
//! Every recording uses its own signal excerpt, so the two estimates agree
//! only as far as 30 s of speech and noise pin down their statistics.

use retm::covariance::{self, CovariancePair};
use retm::linalg::relative_difference;
use retm::roomsim::{Scenario, Segment, SegmentKind, Simulator};
use retm::stft::Stft;

const DESK: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/desk.toml");

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut scenario = Scenario::load(DESK)?;
    scenario.mixture_seconds = 1.0;
    scenario.calibration_seconds = 30.0;
    let (group_a, group_b) = (scenario.group_a.clone(), scenario.group_b.clone());
    let sim = Simulator::new(scenario)?;
    let stft = Stft::new(2048, 1024)?;

    let cov = |segment: &Segment| -> Result<CovariancePair, Box<dyn std::error::Error>> {
        let audio = sim.render(segment)?.mixture;
        let a = stft.analyze(&audio.select_channels(&group_a)?)?;
        let b = stft.analyze(&audio.select_channels(&group_b)?)?;
        Ok(covariance::estimate_all(&a, &b)?)
    };
    let noise = cov(&sim.segment(SegmentKind::NoiseOnly))?;
    let noise_plus = cov(&sim.segment(SegmentKind::NoisePlus(0)))?;
    let samples = sim.segment(SegmentKind::NoiseOnly).samples;
    let solo = cov(&Segment::custom(vec![0], samples, 0x1000))?;

    let recovered = covariance::subtract(&noise_plus, &noise)?;
    println!("{} of {} bins left indefinite by the subtraction", recovered.conditioning_warnings().len(), recovered.bins());

    // speech band, where the speaker has energy
    let (lo, hi) = (20, 400);
    let mut errs: Vec<f64> = (lo..hi)
        .map(|f| relative_difference(recovered.p_ba(f), solo.p_ba(f)))
        .collect::<Result<_, _>>()?;
    errs.sort_by(f64::total_cmp);
    println!(
        "P_BA, bins {lo}..{hi}: median relative error {:.3}, 90th percentile {:.3}",
        errs[errs.len() / 2],
        errs[errs.len() * 9 / 10]
    );
    let gap = (lo..hi)
        .map(|f| relative_difference(noise_plus.p_ba(f), solo.p_ba(f)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut gap = gap;
    gap.sort_by(f64::total_cmp);
    println!("without subtracting the noise: median {:.3}", gap[gap.len() / 2]);
    Ok(())
}
