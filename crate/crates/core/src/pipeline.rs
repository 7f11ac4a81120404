//! End-to-end orchestration: simulate a scenario, estimate calibration
//! ReTMs, separate every speaker and score the result.
//!
//! Each stage reads and writes plain files so stages can be run on their
//! own. `simulate` writes a `manifest.json` next to the rendered WAVs;
//! `separate` reads either that manifest or explicit segment references
//! and writes estimates, covariances and ReTMs; `evaluate` compares the
//! estimates against the clean images listed in the manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, write_wav, AudioBuffer, WavFormat};
use crate::covariance::{self, CovariancePair};
use crate::error::{Error, Result};
use crate::metrics::{self, ReportRow, REPORT_VERSION};
use crate::retm::{self, Retm};
use crate::roomsim::{measured_snr_db, Scenario, SegmentKind, Simulator, SourceKind};
use crate::separation::{self, ReconstructMode};
use crate::stft::Stft;

pub const MANIFEST_VERSION: u32 = 1;
const LOCK_NAME: &str = ".retm.lock";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Covariances of a recording where only the undesired sources are active.
    Direct,
    /// Mixture covariance minus the target speaker's calibrated covariance.
    Subtraction,
    /// Sum of separately calibrated noise and per-speaker covariances.
    Subset,
    /// Noise-only and noise-plus-speaker calibration recordings.
    Training,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Direct, Method::Subtraction, Method::Subset, Method::Training];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Direct => "direct",
            Method::Subtraction => "subtraction",
            Method::Subset => "subset",
            Method::Training => "training",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::input(format!("unknown method '{s}' (direct, subtraction, subset, training)")))
    }
}

/// A recording or a time range of one, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRef {
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_s: Option<f64>,
}

impl SegmentRef {
    pub fn file(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into(), start_s: None, end_s: None }
    }

    pub fn load(&self, base: &Path) -> Result<AudioBuffer> {
        let path = if self.path.is_absolute() { self.path.clone() } else { base.join(&self.path) };
        let wav = read_wav(&path)?;
        if self.start_s.is_none() && self.end_s.is_none() {
            return Ok(wav);
        }
        let fs = f64::from(wav.sample_rate);
        let start = (self.start_s.unwrap_or(0.0) * fs).round() as usize;
        let end = self.end_s.map_or(wav.len(), |e| (e * fs).round() as usize);
        if start >= end || end > wav.len() {
            return Err(Error::input(format!(
                "{}: range {start}..{end} outside {} samples",
                path.display(),
                wav.len()
            )));
        }
        AudioBuffer::new(wav.sample_rate, wav.channels.iter().map(|c| c[start..end].to_vec()).collect())
    }

    fn label(&self) -> String {
        match (self.start_s, self.end_s) {
            (None, None) => self.path.display().to_string(),
            (s, e) => format!("{}@{}:{}", self.path.display(), s.unwrap_or(0.0), e.map_or(String::new(), |e| e.to_string())),
        }
    }
}

impl FromStr for SegmentRef {
    type Err = Error;

    /// `path` or `path@START:END` with times in seconds; either bound may
    /// be empty.
    fn from_str(s: &str) -> Result<Self> {
        let Some((path, range)) = s.rsplit_once('@') else {
            return Ok(Self::file(s));
        };
        let (a, b) = range
            .split_once(':')
            .ok_or_else(|| Error::input(format!("segment '{s}': expected path@START:END")))?;
        let parse = |x: &str| -> Result<Option<f64>> {
            if x.is_empty() {
                Ok(None)
            } else {
                x.parse().map(Some).map_err(|_| Error::input(format!("segment '{s}': bad time '{x}'")))
            }
        };
        Ok(Self { path: path.into(), start_s: parse(a)?, end_s: parse(b)? })
    }
}

/// Recordings available to the separation stage. `noise_plus` and
/// `undesired` have one entry per speaker, in speaker order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub mixture: Option<SegmentRef>,
    #[serde(default)]
    pub noise_only: Option<SegmentRef>,
    #[serde(default)]
    pub noise_plus: Vec<SegmentRef>,
    #[serde(default)]
    pub undesired: Vec<SegmentRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(Method),
    Many(Vec<Method>),
}

fn methods_de<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<Method>, D::Error> {
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(m) => vec![m],
        OneOrMany::Many(v) => v,
    })
}

fn default_methods() -> Vec<Method> {
    vec![Method::Training]
}

fn default_window() -> usize {
    8192
}

fn default_hop() -> usize {
    4096
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub scenario: Option<PathBuf>,
    /// Manifest written by `simulate`; supplies recordings and groups.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default = "default_methods", deserialize_with = "methods_de", rename = "method")]
    pub methods: Vec<Method>,
    #[serde(default = "default_window")]
    pub window_len: usize,
    #[serde(default = "default_hop")]
    pub hop: usize,
    /// Relative singular-value cutoff of the pseudoinverse.
    #[serde(default)]
    pub tolerance: Option<f64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Overrides the scenario seed.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Overrides the scenario SNR.
    #[serde(default)]
    pub snr_db: Option<f64>,
    #[serde(default)]
    pub snr_sweep: Vec<f64>,
    #[serde(default)]
    pub reconstruct: ReconstructMode,
    /// Explicit recordings, used instead of (or on top of) the manifest.
    #[serde(default)]
    pub calibration: Calibration,
    #[serde(default)]
    pub group_a: Vec<usize>,
    #[serde(default)]
    pub group_b: Vec<usize>,
    /// Directory holding ReTMs from an earlier run to load instead of
    /// re-estimating.
    #[serde(default)]
    pub reuse_calibration: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
        // relative paths in a config file are relative to the file
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.scenario, &mut cfg.manifest, &mut cfg.reuse_calibration].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        let c = &mut cfg.calibration;
        for seg in c.mixture.iter_mut().chain(c.noise_only.iter_mut()).chain(&mut c.noise_plus).chain(&mut c.undesired) {
            if seg.path.is_relative() {
                seg.path = base.join(&seg.path);
            }
        }
        Ok(cfg)
    }

    pub fn settings(&self, method: Method) -> Settings {
        Settings {
            method,
            window_len: self.window_len,
            hop: self.hop,
            tolerance: self.tolerance,
            reconstruct: self.reconstruct,
        }
    }
}

/// Signal-processing parameters of one separation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub method: Method,
    pub window_len: usize,
    pub hop: usize,
    pub tolerance: Option<f64>,
    pub reconstruct: ReconstructMode,
}

impl Default for Settings {
    fn default() -> Self {
        PipelineConfig::default().settings(Method::Training)
    }
}

/// Exclusive use of an output directory for the lifetime of the guard.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_NAME);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                use std::io::Write;
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::input(format!(
                "{} is in use by another run (remove {} if that run is gone)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub source: usize,
    pub kind: SourceKind,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentEntry {
    pub label: String,
    pub kind: SegmentKind,
    pub active: Vec<usize>,
    pub path: PathBuf,
}

/// Everything `simulate` produced, with paths relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub scenario: Scenario,
    pub seed: u64,
    pub sample_rate: u32,
    pub snr_db: f64,
    pub achieved_snr_db: f64,
    pub noise_gain: f64,
    pub sensor_noise_std: Vec<f64>,
    pub rir_len: usize,
    pub group_a: Vec<usize>,
    pub group_b: Vec<usize>,
    pub speakers: Vec<usize>,
    pub mixture: PathBuf,
    pub images: Vec<ImageEntry>,
    pub segments: Vec<SegmentEntry>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::input(format!("{}: manifest version {} unsupported", path.display(), m.version)));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Recordings for the separation stage.
    pub fn calibration(&self) -> Calibration {
        let find = |kind: SegmentKind| {
            self.segments.iter().find(|s| s.kind == kind).map(|s| SegmentRef::file(&s.path))
        };
        Calibration {
            mixture: Some(SegmentRef::file(&self.mixture)),
            noise_only: find(SegmentKind::NoiseOnly),
            noise_plus: self.speakers.iter().filter_map(|&s| find(SegmentKind::NoisePlus(s))).collect(),
            undesired: self.speakers.iter().filter_map(|&s| find(SegmentKind::UndesiredOnly(s))).collect(),
        }
    }
}

fn write_float(path: &Path, audio: &AudioBuffer) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_wav(path, audio, WavFormat::Float32)
}

/// Renders the mixture, clean images and every calibration recording of a
/// scenario into `out_dir` and writes `manifest.json` there.
pub fn simulate(scenario: &Scenario, out_dir: &Path) -> Result<Manifest> {
    let _lock = DirLock::acquire(out_dir)?;
    let sim = Simulator::new(scenario.clone())?;
    log::info!(
        "{}: RIRs up to {} taps, noise gain {:.4}",
        scenario.name,
        sim.rir_len(),
        sim.noise_gain()
    );

    let mix = sim.render_mixture()?;
    let achieved = if scenario.noises().is_empty() || scenario.speakers().is_empty() {
        f64::NAN
    } else {
        measured_snr_db(&mix, &scenario.speakers(), &scenario.noises())
    };
    let mixture = PathBuf::from("mixture.wav");
    write_float(&out_dir.join(&mixture), &mix.mixture)?;
    let mut images = Vec::new();
    for (s, img) in &mix.images {
        let path = PathBuf::from(format!("images/source_{s}.wav"));
        write_float(&out_dir.join(&path), img)?;
        images.push(ImageEntry { source: *s, kind: scenario.sources[*s].kind, path });
    }
    drop(mix);

    let mut segments = Vec::new();
    for seg in sim.calibration_plan() {
        let label = seg.label();
        let path = PathBuf::from(format!("calibration/{label}.wav"));
        let rec = sim.render(&seg)?;
        write_float(&out_dir.join(&path), &rec.mixture)?;
        log::info!("rendered {label} ({} samples)", seg.samples);
        segments.push(SegmentEntry { label, kind: seg.kind, active: seg.active.clone(), path });
    }

    let manifest = Manifest {
        version: MANIFEST_VERSION,
        scenario: scenario.clone(),
        seed: scenario.seed,
        sample_rate: scenario.sample_rate,
        snr_db: scenario.snr_db,
        achieved_snr_db: achieved,
        noise_gain: sim.noise_gain(),
        sensor_noise_std: sim.sensor_noise_std().to_vec(),
        rir_len: sim.rir_len(),
        group_a: scenario.group_a.clone(),
        group_b: scenario.group_b.clone(),
        speakers: scenario.speakers(),
        mixture,
        images,
        segments,
    };
    manifest.save(out_dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Scenario copies at each SNR.
pub fn snr_variants(scenario: &Scenario, snrs: &[f64]) -> Vec<Scenario> {
    snrs.iter()
        .map(|&snr| {
            let mut s = scenario.clone();
            s.snr_db = snr;
            s
        })
        .collect()
}

pub fn snr_dir_name(snr: f64) -> String {
    format!("snr_{snr:+}db")
}

/// Inputs of the separation stage after resolving a manifest and/or
/// explicit segment references.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub base_dir: PathBuf,
    pub calibration: Calibration,
    pub group_a: Vec<usize>,
    pub group_b: Vec<usize>,
    /// Names for the speakers, in calibration order.
    pub speakers: Vec<usize>,
    pub rir_len: Option<usize>,
}

impl Inputs {
    pub fn from_manifest(manifest: &Manifest, manifest_path: &Path) -> Self {
        Self {
            base_dir: manifest_path.parent().unwrap_or(Path::new("")).to_path_buf(),
            calibration: manifest.calibration(),
            group_a: manifest.group_a.clone(),
            group_b: manifest.group_b.clone(),
            speakers: manifest.speakers.clone(),
            rir_len: Some(manifest.rir_len),
        }
    }

    /// Manifest inputs overridden by whatever the config specifies.
    pub fn resolve(cfg: &PipelineConfig) -> Result<Self> {
        let mut inputs = match &cfg.manifest {
            Some(p) => Self::from_manifest(&Manifest::load(p)?, p),
            None => Self {
                base_dir: PathBuf::new(),
                calibration: Calibration::default(),
                group_a: Vec::new(),
                group_b: Vec::new(),
                speakers: Vec::new(),
                rir_len: None,
            },
        };
        let c = &cfg.calibration;
        if c.mixture.is_some() {
            inputs.calibration.mixture = c.mixture.clone();
        }
        if c.noise_only.is_some() {
            inputs.calibration.noise_only = c.noise_only.clone();
        }
        if !c.noise_plus.is_empty() {
            inputs.calibration.noise_plus = c.noise_plus.clone();
        }
        if !c.undesired.is_empty() {
            inputs.calibration.undesired = c.undesired.clone();
        }
        if !cfg.group_a.is_empty() {
            inputs.group_a = cfg.group_a.clone();
        }
        if !cfg.group_b.is_empty() {
            inputs.group_b = cfg.group_b.clone();
        }
        let n = inputs.calibration.noise_plus.len().max(inputs.calibration.undesired.len());
        if inputs.speakers.len() != n {
            inputs.speakers = (0..n).collect();
        }
        Ok(inputs)
    }

    fn check(&self, method: Method) -> Result<()> {
        let c = &self.calibration;
        if c.mixture.is_none() {
            return Err(Error::input("no mixture recording given"));
        }
        if self.group_a.is_empty() || self.group_b.is_empty() {
            return Err(Error::input("microphone groups A and B must be given"));
        }
        if self.speakers.is_empty() {
            return Err(Error::input("no speakers: give calibration recordings"));
        }
        let n = self.speakers.len();
        let missing = match method {
            Method::Direct => (c.undesired.len() != n).then_some("one undesired-only recording per speaker"),
            Method::Training | Method::Subset | Method::Subtraction => {
                if c.noise_only.is_none() {
                    Some("a noise-only recording")
                } else if c.noise_plus.len() != n {
                    Some("one noise-plus-speaker recording per speaker")
                } else {
                    None
                }
            }
        };
        match missing {
            Some(what) => Err(Error::input(format!("method {method} needs {what}"))),
            None => Ok(()),
        }
    }
}

/// What one separation run produced.
#[derive(Debug, Clone)]
pub struct Separation {
    pub settings: Settings,
    pub speakers: Vec<usize>,
    /// Time-domain estimates, same length as the mixture.
    pub estimates: Vec<Vec<f64>>,
    pub retms: Vec<Retm>,
    pub sample_rate: u32,
    /// ReTMs loaded from an earlier run rather than estimated.
    pub reused: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateEntry {
    pub speaker: usize,
    pub path: PathBuf,
    pub retm: PathBuf,
    pub failed_bins: Vec<usize>,
    pub conditioning_warnings: Vec<usize>,
}

/// Index written by [`write_separation`], read by [`evaluate_dir`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationIndex {
    pub version: u32,
    pub settings: Settings,
    pub reused_calibration: bool,
    pub estimates: Vec<EstimateEntry>,
}

struct Analyzer {
    stft: Stft,
    group_a: Vec<usize>,
    group_b: Vec<usize>,
}

impl Analyzer {
    fn frames(&self, audio: &AudioBuffer) -> Result<(crate::stft::SpectralFrames, crate::stft::SpectralFrames)> {
        let needed = self.group_a.iter().chain(&self.group_b).max().copied().unwrap_or(0);
        if needed >= audio.num_channels() {
            return Err(Error::input(format!(
                "recording has {} channels, groups need microphone {needed}",
                audio.num_channels()
            )));
        }
        Ok((
            self.stft.analyze(&audio.select_channels(&self.group_a)?)?,
            self.stft.analyze(&audio.select_channels(&self.group_b)?)?,
        ))
    }

    fn covariance(&self, seg: &SegmentRef, base: &Path) -> Result<CovariancePair> {
        let (a, b) = self.frames(&seg.load(base)?)?;
        covariance::estimate_all(&a, &b)
    }
}

fn retm_path(dir: &Path, speaker: usize) -> PathBuf {
    dir.join("retm").join(format!("speaker_{speaker}.retm"))
}

/// Estimates the undesired-source ReTM for every speaker and extracts
/// each speaker from the mixture. Covariances and ReTMs are written under
/// `artifacts` when given.
pub fn separate(inputs: &Inputs, settings: &Settings, reuse: Option<&Path>, artifacts: Option<&Path>) -> Result<Separation> {
    inputs.check(settings.method)?;
    let analyzer = Analyzer {
        stft: Stft::new(settings.window_len, settings.hop)?,
        group_a: inputs.group_a.clone(),
        group_b: inputs.group_b.clone(),
    };
    if let Some(len) = inputs.rir_len.filter(|&l| l > settings.window_len) {
        log::warn!(
            "impulse responses ({len} taps) are longer than the {}-sample window; the multiplicative transfer model is approximate",
            settings.window_len
        );
    }
    let base = &inputs.base_dir;
    let mixture = inputs.calibration.mixture.as_ref().expect("checked").load(base)?;
    let (mix_a, mix_b) = analyzer.frames(&mixture)?;

    let cached: Option<Vec<Retm>> = match reuse {
        Some(dir) => {
            let paths: Vec<PathBuf> = inputs.speakers.iter().map(|&s| retm_path(dir, s)).collect();
            if paths.iter().all(|p| p.exists()) {
                let retms = paths.iter().map(Retm::load).collect::<Result<Vec<_>>>()?;
                if let Some(r) = retms.iter().find(|r| r.provenance.method != settings.method.as_str()) {
                    return Err(Error::input(format!(
                        "{}: persisted ReTM was estimated with '{}', not '{}'",
                        dir.display(),
                        r.provenance.method,
                        settings.method
                    )));
                }
                Some(retms)
            } else {
                log::warn!("{}: no complete ReTM set to reuse, estimating", dir.display());
                None
            }
        }
        None => None,
    };
    let reused = cached.is_some();

    let retms = match cached {
        Some(r) => r,
        None => {
            let save_cov = |name: &str, cov: &CovariancePair| -> Result<()> {
                if let Some(dir) = artifacts {
                    let d = dir.join("covariance");
                    fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
                    cov.save(d.join(format!("{name}.cov")))?;
                }
                Ok(())
            };
            let c = &inputs.calibration;
            let tol = settings.tolerance;
            let mut retms = Vec::with_capacity(inputs.speakers.len());
            match settings.method {
                Method::Direct => {
                    for (seg, &s) in c.undesired.iter().zip(&inputs.speakers) {
                        let cov = analyzer.covariance(seg, base)?;
                        save_cov(&format!("undesired_{s}"), &cov)?;
                        let mut r = retm::estimate_direct(&cov, tol)?;
                        r.provenance.inputs = vec![seg.label()];
                        retms.push(r);
                    }
                }
                method => {
                    let noise_seg = c.noise_only.as_ref().expect("checked");
                    let noise = analyzer.covariance(noise_seg, base)?;
                    save_cov("noise_only", &noise)?;
                    let mut plus = Vec::with_capacity(c.noise_plus.len());
                    for (seg, &s) in c.noise_plus.iter().zip(&inputs.speakers) {
                        let cov = analyzer.covariance(seg, base)?;
                        save_cov(&format!("noise_plus_{s}"), &cov)?;
                        plus.push(cov);
                    }
                    let mix_cov = if method == Method::Subtraction {
                        let cov = covariance::estimate_all(&mix_a, &mix_b)?;
                        save_cov("mixture", &cov)?;
                        Some(cov)
                    } else {
                        None
                    };
                    for target in 0..plus.len() {
                        let mut r = match method {
                            Method::Training => retm::estimate_undesired_for_speaker(&noise, &plus, target, tol)?,
                            Method::Subset => {
                                let mut parts = vec![noise.clone()];
                                for (l, p) in plus.iter().enumerate() {
                                    if l != target {
                                        parts.push(covariance::subtract(p, &noise)?);
                                    }
                                }
                                retm::estimate_subset(&parts, tol)?
                            }
                            Method::Subtraction => {
                                let own = covariance::subtract(&plus[target], &noise)?;
                                retm::estimate_by_subtraction(mix_cov.as_ref().expect("computed"), &own, tol)?
                            }
                            Method::Direct => unreachable!(),
                        };
                        r.provenance.method = method.as_str().into();
                        r.provenance.inputs = std::iter::once(noise_seg.label())
                            .chain(c.noise_plus.iter().map(SegmentRef::label))
                            .collect();
                        retms.push(r);
                    }
                }
            }
            retms
        }
    };

    if let Some(dir) = artifacts.filter(|_| !reused) {
        for (r, &s) in retms.iter().zip(&inputs.speakers) {
            let p = retm_path(dir, s);
            fs::create_dir_all(p.parent().unwrap()).map_err(|e| Error::io(&p, e))?;
            r.save(&p)?;
        }
    }

    let mut estimates = Vec::with_capacity(retms.len());
    for r in &retms {
        let out = separation::extract(&mix_a, &mix_b, r)?;
        let mut est = separation::reconstruct(&out, settings.reconstruct)?;
        est.resize(mixture.len(), 0.0);
        estimates.push(est);
    }
    Ok(Separation {
        settings: *settings,
        speakers: inputs.speakers.clone(),
        estimates,
        retms,
        sample_rate: mixture.sample_rate,
        reused,
    })
}

/// Writes estimates as `estimates/speaker_<s>.wav` plus `separation.json`.
pub fn write_separation(sep: &Separation, dir: &Path) -> Result<SeparationIndex> {
    let mut entries = Vec::new();
    for ((est, r), &s) in sep.estimates.iter().zip(&sep.retms).zip(&sep.speakers) {
        let path = PathBuf::from(format!("estimates/speaker_{s}.wav"));
        write_float(&dir.join(&path), &AudioBuffer::mono(sep.sample_rate, est.clone())?)?;
        entries.push(EstimateEntry {
            speaker: s,
            path,
            retm: retm_path(Path::new(""), s),
            failed_bins: r.failed_bins(),
            conditioning_warnings: r.provenance.conditioning_warnings.clone(),
        });
    }
    let index = SeparationIndex {
        version: MANIFEST_VERSION,
        settings: sep.settings,
        reused_calibration: sep.reused,
        estimates: entries,
    };
    let path = dir.join("separation.json");
    fs::write(&path, serde_json::to_string_pretty(&index).expect("index serializes")).map_err(|e| Error::io(&path, e))?;
    Ok(index)
}

/// Scores estimates against the manifest's clean images at the first
/// group-A microphone. Adds one `unprocessed` row per evaluated speaker.
pub fn evaluate(
    manifest: &Manifest,
    manifest_dir: &Path,
    estimates: &[(usize, Vec<f64>)],
    method: &str,
    window_len: usize,
) -> Result<Vec<ReportRow>> {
    if estimates.is_empty() {
        return Ok(Vec::new());
    }
    let mixture = read_wav(manifest_dir.join(&manifest.mixture))?;
    let ref_mic = manifest.group_a[0];
    let unprocessed = mixture.channel(ref_mic);
    let refs: Vec<Vec<f64>> = manifest
        .images
        .iter()
        .map(|img| read_wav(manifest_dir.join(&img.path)).map(|b| b.channel(ref_mic).to_vec()))
        .collect::<Result<_>>()?;
    let sources: Vec<usize> = manifest.images.iter().map(|i| i.source).collect();
    let ref_slices: Vec<&[f64]> = refs.iter().map(Vec::as_slice).collect();

    let n = mixture.len();
    let interior = if n > 4 * window_len { window_len..n - window_len } else { 0..n };
    let row = |speaker: usize, method: &str, sir, sdr, dsir, dsdr| ReportRow {
        version: REPORT_VERSION,
        scenario: manifest.scenario.name.clone(),
        snr_db: manifest.snr_db,
        speaker,
        method: method.into(),
        sir_db: sir,
        sdr_db: sdr,
        sir_improvement_db: dsir,
        sdr_improvement_db: dsdr,
        stoi: None,
    };

    let mut rows = Vec::new();
    for (speaker, est) in estimates {
        if est.len() != n {
            return Err(Error::input(format!(
                "estimate for speaker {speaker} has {} samples, the mixture has {n}",
                est.len()
            )));
        }
        let target = sources
            .iter()
            .position(|&s| s == *speaker)
            .ok_or_else(|| Error::input(format!("speaker {speaker} is not a source of the manifest")))?;
        let window: Vec<&[f64]> = ref_slices.iter().map(|x| &x[interior.clone()]).collect();
        let score = |x: &[f64]| {
            metrics::decompose(&x[interior.clone()], &window, target, metrics::DEFAULT_FILTER_LEN)
                .and_then(|d| metrics::sir_sdr(&d))
        };
        let base = score(unprocessed)?;
        let out = score(est)?;
        rows.push(row(*speaker, "unprocessed", base.sir_db, base.sdr_db, 0.0, 0.0));
        rows.push(row(
            *speaker,
            method,
            out.sir_db,
            out.sdr_db,
            out.sir_db - base.sir_db,
            out.sdr_db - base.sdr_db,
        ));
    }
    Ok(rows)
}

/// [`evaluate`] on a directory written by [`write_separation`].
pub fn evaluate_dir(manifest_path: &Path, separation_dir: &Path) -> Result<Vec<ReportRow>> {
    let manifest = Manifest::load(manifest_path)?;
    let index_path = separation_dir.join("separation.json");
    let text = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
    let index: SeparationIndex =
        serde_json::from_str(&text).map_err(|e| Error::input(format!("{}: {e}", index_path.display())))?;
    let estimates = index
        .estimates
        .iter()
        .map(|e| read_wav(separation_dir.join(&e.path)).map(|b| (e.speaker, b.channels[0].clone())))
        .collect::<Result<Vec<_>>>()?;
    evaluate(
        &manifest,
        manifest_path.parent().unwrap_or(Path::new("")),
        &estimates,
        index.settings.method.as_str(),
        index.settings.window_len,
    )
}

/// Result of [`run`]: the report rows and where each stage wrote.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub rows: Vec<ReportRow>,
    pub manifests: Vec<PathBuf>,
    pub report: PathBuf,
}

/// simulate, separate and evaluate for every SNR and method in `cfg`.
pub fn run(cfg: &PipelineConfig) -> Result<RunSummary> {
    let scenario_path = cfg
        .scenario
        .as_ref()
        .ok_or_else(|| Error::input("pipeline needs a scenario file"))?;
    let mut scenario = Scenario::load(scenario_path)?;
    if let Some(seed) = cfg.seed {
        scenario.seed = seed;
    }
    if let Some(snr) = cfg.snr_db {
        scenario.snr_db = snr;
    }
    let variants = if cfg.snr_sweep.is_empty() {
        vec![(None, scenario)]
    } else {
        snr_variants(&scenario, &cfg.snr_sweep)
            .into_iter()
            .map(|s| (Some(snr_dir_name(s.snr_db)), s))
            .collect()
    };

    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let mut rows = Vec::new();
    let mut manifests = Vec::new();
    for (sub, sc) in variants {
        let root = match &sub {
            Some(s) => cfg.output_dir.join(s),
            None => cfg.output_dir.clone(),
        };
        let sim_dir = root.join("simulation");
        let manifest = simulate(&sc, &sim_dir)?;
        let manifest_path = sim_dir.join("manifest.json");
        manifests.push(manifest_path.clone());
        let mut inputs = Inputs::from_manifest(&manifest, &manifest_path);
        if !cfg.group_a.is_empty() {
            inputs.group_a = cfg.group_a.clone();
        }
        if !cfg.group_b.is_empty() {
            inputs.group_b = cfg.group_b.clone();
        }
        for &method in &cfg.methods {
            let dir = root.join(method.as_str());
            let _lock = DirLock::acquire(&dir)?;
            let sep = separate(&inputs, &cfg.settings(method), cfg.reuse_calibration.as_deref(), Some(&dir))?;
            write_separation(&sep, &dir)?;
            let est: Vec<(usize, Vec<f64>)> = sep.speakers.iter().copied().zip(sep.estimates).collect();
            let mut r = evaluate(&manifest, &sim_dir, &est, method.as_str(), cfg.window_len)?;
            // one unprocessed row per speaker and SNR is enough
            if rows.iter().any(|x: &ReportRow| x.method == "unprocessed" && x.snr_db == manifest.snr_db) {
                r.retain(|x| x.method != "unprocessed");
            }
            rows.extend(r);
        }
    }
    let report = cfg.output_dir.join("report.csv");
    metrics::write_report(&report, &rows)?;
    Ok(RunSummary { rows, manifests, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("eq4".parse::<Method>().is_err());
    }

    #[test]
    fn segment_ref_syntax() {
        let s: SegmentRef = "a/b.wav@1.5:61.5".parse().unwrap();
        assert_eq!(s.path, PathBuf::from("a/b.wav"));
        assert_eq!((s.start_s, s.end_s), (Some(1.5), Some(61.5)));
        let s: SegmentRef = "x.wav@:10".parse().unwrap();
        assert_eq!((s.start_s, s.end_s), (None, Some(10.0)));
        assert_eq!("x.wav".parse::<SegmentRef>().unwrap(), SegmentRef::file("x.wav"));
        assert!("x.wav@3".parse::<SegmentRef>().is_err());
    }

    #[test]
    fn config_accepts_one_or_many_methods() {
        let one: PipelineConfig = toml::from_str("method = \"direct\"").unwrap();
        assert_eq!(one.methods, vec![Method::Direct]);
        let many: PipelineConfig = toml::from_str("method = [\"direct\", \"training\"]").unwrap();
        assert_eq!(many.methods, vec![Method::Direct, Method::Training]);
        let d = PipelineConfig::default();
        assert_eq!((d.window_len, d.hop, d.methods.clone()), (8192, 4096, vec![Method::Training]));
        assert!(toml::from_str::<PipelineConfig>("windowlen = 3").is_err());
    }

    #[test]
    fn method_requirements() {
        let inputs = Inputs {
            base_dir: PathBuf::new(),
            calibration: Calibration {
                mixture: Some(SegmentRef::file("m.wav")),
                noise_only: None,
                noise_plus: vec![],
                undesired: vec![SegmentRef::file("u0.wav"), SegmentRef::file("u1.wav")],
            },
            group_a: vec![0],
            group_b: vec![1, 2],
            speakers: vec![0, 1],
            rir_len: None,
        };
        assert!(inputs.check(Method::Direct).is_ok());
        for m in [Method::Training, Method::Subset, Method::Subtraction] {
            let err = inputs.check(m).unwrap_err().to_string();
            assert!(err.contains("noise-only"), "{err}");
        }
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let lock = DirLock::acquire(dir.path()).unwrap();
        assert!(DirLock::acquire(dir.path()).is_err());
        drop(lock);
        assert!(DirLock::acquire(dir.path()).is_ok());
    }
}
