use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Position, Room};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Speech,
    Noise,
}

/// Where a source's dry signal comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SignalSpec {
    /// Mono WAV, resampled to the scenario rate. Relative paths resolve
    /// against the scenario file's directory.
    File { path: PathBuf },
    /// Generated signal of the source's kind.
    Synthetic { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub kind: SourceKind,
    pub position: Position,
    pub signal: SignalSpec,
}

fn default_sensor_snr() -> f64 {
    40.0
}

fn default_sample_rate() -> u32 {
    16000
}

fn default_mixture_seconds() -> f64 {
    20.0
}

fn default_calibration_seconds() -> f64 {
    60.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub room: Room,
    pub sources: Vec<SourceSpec>,
    pub microphones: Vec<Position>,
    pub group_a: Vec<usize>,
    pub group_b: Vec<usize>,
    /// Mean over microphones of the per-microphone speech-to-noise-source
    /// power ratio.
    pub snr_db: f64,
    /// White sensor noise level relative to each microphone's signal power;
    /// `inf` disables it.
    #[serde(default = "default_sensor_snr")]
    pub sensor_noise_snr_db: f64,
    #[serde(default = "default_sample_rate")]
    pub sample_rate: u32,
    pub seed: u64,
    #[serde(default = "default_mixture_seconds")]
    pub mixture_seconds: f64,
    #[serde(default = "default_calibration_seconds")]
    pub calibration_seconds: f64,
    /// Directory for resolving relative signal paths; not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::input(format!("scenario: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut s: Scenario =
            toml::from_str(&text).map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
        s.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario is always representable")
    }

    pub fn speakers(&self) -> Vec<usize> {
        self.indices(SourceKind::Speech)
    }

    pub fn noises(&self) -> Vec<usize> {
        self.indices(SourceKind::Noise)
    }

    fn indices(&self, kind: SourceKind) -> Vec<usize> {
        (0..self.sources.len()).filter(|&i| self.sources[i].kind == kind).collect()
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.room.validate()?;
        self.room.reflection_coefficient()?;
        if self.sources.is_empty() {
            return Err(Error::input("scenario has no sources"));
        }
        if self.microphones.is_empty() {
            return Err(Error::input("scenario has no microphones"));
        }
        for (i, s) in self.sources.iter().enumerate() {
            if !self.room.contains(&s.position) {
                return Err(Error::input(format!("source {i} at {:?} is outside the room", s.position)));
            }
        }
        for (i, m) in self.microphones.iter().enumerate() {
            if !self.room.contains(m) {
                return Err(Error::input(format!("microphone {i} at {m:?} is outside the room")));
            }
        }

        let a: BTreeSet<usize> = self.group_a.iter().copied().collect();
        let b: BTreeSet<usize> = self.group_b.iter().copied().collect();
        if a.len() != self.group_a.len() || b.len() != self.group_b.len() {
            return Err(Error::input("microphone groups contain duplicates"));
        }
        if a.is_empty() || b.is_empty() {
            return Err(Error::input("both microphone groups need at least one microphone"));
        }
        if let Some(m) = a.intersection(&b).next() {
            return Err(Error::input(format!("microphone {m} is in both groups")));
        }
        let all: BTreeSet<usize> = a.union(&b).copied().collect();
        if all != (0..self.microphones.len()).collect() {
            return Err(Error::input(format!(
                "groups must partition microphones 0..{}",
                self.microphones.len()
            )));
        }

        // each speaker's undesired set is every other source
        let undesired = self.sources.len() - 1;
        if !self.speakers().is_empty() && self.group_b.len() < undesired {
            return Err(Error::input(format!(
                "group B has {} microphones but {undesired} undesired sources must be inverted",
                self.group_b.len()
            )));
        }

        if self.sample_rate == 0 {
            return Err(Error::input("sample rate must be positive"));
        }
        if !self.snr_db.is_finite() {
            return Err(Error::input("snr_db must be finite"));
        }
        if self.sensor_noise_snr_db.is_nan() {
            return Err(Error::input("sensor_noise_snr_db must be a number or inf"));
        }
        for (what, secs) in [("mixture", self.mixture_seconds), ("calibration", self.calibration_seconds)] {
            if !(secs > 0.0 && secs.is_finite()) {
                return Err(Error::input(format!("{what} duration must be positive")));
            }
        }
        Ok(())
    }
}
