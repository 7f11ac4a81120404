//! Estimate ReTMs once from calibration recordings, persist them, and
//! separate again from the stored files without re-estimation.

use retm::pipeline::{self, Inputs, Method, PipelineConfig};
use retm::retm::Retm;
use retm::roomsim::Scenario;

const DESK: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/desk.toml");

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let mut scenario = Scenario::load(DESK)?;
    scenario.mixture_seconds = 4.0;
    scenario.calibration_seconds = 10.0;

    let sim_dir = dir.path().join("sim");
    let manifest = pipeline::simulate(&scenario, &sim_dir)?;
    let inputs = Inputs::from_manifest(&manifest, &sim_dir.join("manifest.json"));
    let cfg = PipelineConfig {
        window_len: 4096,
        hop: 2048,
        ..PipelineConfig::default()
    };
    let settings = cfg.settings(Method::Training);

    let first = dir.path().join("first");
    let sep = pipeline::separate(&inputs, &settings, None, Some(&first))?;
    pipeline::write_separation(&sep, &first)?;
    for entry in std::fs::read_dir(first.join("retm"))? {
        let path = entry?.path();
        let r = Retm::load(&path)?;
        println!(
            "{}: {} bins, {}x{}, method {}",
            path.file_name().unwrap().to_string_lossy(),
            r.bins(),
            r.q_a(),
            r.q_b(),
            r.provenance.method
        );
    }

    let again = pipeline::separate(&inputs, &settings, Some(&first), None)?;
    println!("reused stored calibration: {}", again.reused);
    for (x, y) in sep.estimates.iter().zip(&again.estimates) {
        println!("estimates identical: {}", x == y);
    }
    Ok(())
}
