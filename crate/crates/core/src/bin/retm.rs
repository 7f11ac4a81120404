use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use retm::error::Error;
use retm::metrics::write_report;
use retm::pipeline::{self, Inputs, Method, PipelineConfig, SegmentRef};
use retm::roomsim::Scenario;
use retm::separation::ReconstructMode;

const SWEEP: [f64; 5] = [0.0, -5.0, -10.0, -15.0, -20.0];

/// Speaker separation with relative transfer matrices.
///
/// Set RETM_WORKERS to cap the number of worker threads.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scenario: mixture, clean images, calibration recordings.
    Simulate {
        scenario: PathBuf,
        #[arg(short, long, default_value = "out")]
        output_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, allow_negative_numbers = true)]
        snr_db: Option<f64>,
        /// Render once per SNR in {0, -5, -10, -15, -20} dB.
        #[arg(long)]
        snr_sweep: bool,
    },
    /// Estimate ReTMs from calibration recordings and extract each speaker.
    Separate(#[command(flatten)] ConfigArgs),
    /// Score separated speakers against the clean images.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory written by `separate`.
        #[arg(long)]
        estimates: PathBuf,
        #[arg(short, long, default_value = "report.csv")]
        output: PathBuf,
    },
    /// simulate, separate and evaluate in one go.
    Pipeline {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, allow_negative_numbers = true)]
        snr_db: Option<f64>,
        /// Run at every SNR in {0, -5, -10, -15, -20} dB.
        #[arg(long)]
        snr_sweep: bool,
    },
}

/// Flags mirroring the pipeline configuration file; flags win.
#[derive(Args)]
struct ConfigArgs {
    /// TOML pipeline configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// direct, subtraction, subset or training; repeatable.
    #[arg(long, value_parser = parse_method)]
    method: Vec<Method>,
    #[arg(long)]
    window_len: Option<usize>,
    #[arg(long)]
    hop: Option<usize>,
    /// Relative singular-value cutoff of the pseudoinverse.
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
    #[arg(long, value_parser = parse_reconstruct)]
    reconstruct: Option<ReconstructMode>,
    /// Mixture recording, `path` or `path@START:END` (seconds).
    #[arg(long, value_parser = parse_segment)]
    mixture: Option<SegmentRef>,
    #[arg(long, value_parser = parse_segment)]
    noise_only: Option<SegmentRef>,
    /// Noise plus one speaker; once per speaker, in order.
    #[arg(long, value_parser = parse_segment)]
    noise_plus: Vec<SegmentRef>,
    /// All sources but one speaker; once per speaker, in order.
    #[arg(long, value_parser = parse_segment)]
    undesired: Vec<SegmentRef>,
    #[arg(long, value_delimiter = ',')]
    group_a: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    group_b: Vec<usize>,
    /// Load ReTMs persisted by an earlier run from this directory.
    #[arg(long)]
    reuse_calibration: Option<PathBuf>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_segment(s: &str) -> Result<SegmentRef, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_reconstruct(s: &str) -> Result<ReconstructMode, String> {
    match s {
        "reference" => Ok(ReconstructMode::Reference),
        "average" => Ok(ReconstructMode::Average),
        _ => Err(format!("unknown mode '{s}' (reference, average)")),
    }
}

impl ConfigArgs {
    fn resolve(self) -> Result<PipelineConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if self.manifest.is_some() {
            cfg.manifest = self.manifest;
        }
        if !self.method.is_empty() {
            cfg.methods = self.method;
        }
        if let Some(v) = self.window_len {
            cfg.window_len = v;
        }
        if let Some(v) = self.hop {
            cfg.hop = v;
        }
        if self.tolerance.is_some() {
            cfg.tolerance = self.tolerance;
        }
        if let Some(v) = self.output_dir {
            cfg.output_dir = v;
        }
        if let Some(v) = self.reconstruct {
            cfg.reconstruct = v;
        }
        let c = &mut cfg.calibration;
        if self.mixture.is_some() {
            c.mixture = self.mixture;
        }
        if self.noise_only.is_some() {
            c.noise_only = self.noise_only;
        }
        if !self.noise_plus.is_empty() {
            c.noise_plus = self.noise_plus;
        }
        if !self.undesired.is_empty() {
            c.undesired = self.undesired;
        }
        if !self.group_a.is_empty() {
            cfg.group_a = self.group_a;
        }
        if !self.group_b.is_empty() {
            cfg.group_b = self.group_b;
        }
        if self.reuse_calibration.is_some() {
            cfg.reuse_calibration = self.reuse_calibration;
        }
        Ok(cfg)
    }
}

fn simulate(scenario: PathBuf, out: PathBuf, seed: Option<u64>, snr: Option<f64>, sweep: bool) -> Result<(), Error> {
    let mut sc = Scenario::load(&scenario)?;
    if let Some(s) = seed {
        sc.seed = s;
    }
    if let Some(s) = snr {
        sc.snr_db = s;
    }
    if sweep {
        for v in pipeline::snr_variants(&sc, &SWEEP) {
            let dir = out.join(pipeline::snr_dir_name(v.snr_db));
            let m = pipeline::simulate(&v, &dir)?;
            println!("{}: achieved SNR {:.2} dB", dir.join("manifest.json").display(), m.achieved_snr_db);
        }
    } else {
        let m = pipeline::simulate(&sc, &out)?;
        println!("{}: achieved SNR {:.2} dB", out.join("manifest.json").display(), m.achieved_snr_db);
    }
    Ok(())
}

fn separate(cfg: PipelineConfig) -> Result<(), Error> {
    let inputs = Inputs::resolve(&cfg)?;
    for &method in &cfg.methods {
        let dir = if cfg.methods.len() > 1 { cfg.output_dir.join(method.as_str()) } else { cfg.output_dir.clone() };
        let _lock = pipeline::DirLock::acquire(&dir)?;
        let sep = pipeline::separate(&inputs, &cfg.settings(method), cfg.reuse_calibration.as_deref(), Some(&dir))?;
        let index = pipeline::write_separation(&sep, &dir)?;
        for e in &index.estimates {
            println!("{}", dir.join(&e.path).display());
            if !e.failed_bins.is_empty() {
                eprintln!("speaker {}: {} bins passed through unprocessed", e.speaker, e.failed_bins.len());
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate { scenario, output_dir, seed, snr_db, snr_sweep } => {
            simulate(scenario, output_dir, seed, snr_db, snr_sweep)
        }
        Command::Separate(args) => separate(args.resolve()?),
        Command::Evaluate { manifest, estimates, output } => {
            let rows = pipeline::evaluate_dir(&manifest, &estimates)?;
            write_report(&output, &rows)?;
            println!("{}: {} rows", output.display(), rows.len());
            Ok(())
        }
        Command::Pipeline { config, scenario, seed, snr_db, snr_sweep } => {
            let mut cfg = config.resolve()?;
            if scenario.is_some() {
                cfg.scenario = scenario;
            }
            if seed.is_some() {
                cfg.seed = seed;
            }
            if snr_db.is_some() {
                cfg.snr_db = snr_db;
            }
            if snr_sweep {
                cfg.snr_sweep = SWEEP.to_vec();
            }
            let summary = pipeline::run(&cfg)?;
            for r in &summary.rows {
                println!(
                    "snr {:>6.1} speaker {} {:<12} SIR {:7.2} SDR {:7.2} (+{:.2} / +{:.2})",
                    r.snr_db, r.speaker, r.method, r.sir_db, r.sdr_db, r.sir_improvement_db, r.sdr_improvement_db
                );
            }
            println!("{}", summary.report.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Ok(v) = std::env::var("RETM_WORKERS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    log::warn!("RETM_WORKERS ignored: {e}");
                }
            }
            _ => log::warn!("RETM_WORKERS={v} is not a positive integer; ignored"),
        }
    }

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
