//! Render the desk scenario at several SNRs and confirm the calibrated
//! noise gain hits each target.

use retm::pipeline;
use retm::roomsim::Scenario;

const DESK: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/desk.toml");

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let mut scenario = Scenario::load(DESK)?;
    scenario.mixture_seconds = 3.0;
    scenario.calibration_seconds = 1.0;
    for v in pipeline::snr_variants(&scenario, &[0.0, -5.0, -10.0, -15.0, -20.0]) {
        let out = dir.path().join(pipeline::snr_dir_name(v.snr_db));
        let m = pipeline::simulate(&v, &out)?;
        println!("target {:>6.1} dB  achieved {:>7.3} dB  noise gain {:.3}", m.snr_db, m.achieved_snr_db, m.noise_gain);
    }
    Ok(())
}
