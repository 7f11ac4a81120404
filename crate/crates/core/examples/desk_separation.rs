//! Simulate the bundled desk scenario, separate both talkers with the
//! calibration-based and the direct estimator, and score them.
//!
//! `cargo run --release --example desk_separation -- [output dir]`

use retm::pipeline::{self, Method, PipelineConfig};

const DESK: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/desk.toml");

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "desk-out".into());
    let cfg = PipelineConfig {
        scenario: Some(DESK.into()),
        methods: vec![Method::Training, Method::Direct],
        output_dir: out.into(),
        ..PipelineConfig::default()
    };
    let summary = pipeline::run(&cfg)?;
    println!("{:<12} {:>7} {:>8} {:>8} {:>8} {:>8}", "method", "speaker", "SIR", "SDR", "dSIR", "dSDR");
    for r in &summary.rows {
        println!(
            "{:<12} {:>7} {:>8.2} {:>8.2} {:>8.2} {:>8.2}",
            r.method, r.speaker, r.sir_db, r.sdr_db, r.sir_improvement_db, r.sdr_improvement_db
        );
    }
    println!("report: {}", summary.report.display());
    Ok(())
}
