use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::atom::{self, AtomParams, DetectionModel};
use crate::blockade::{BlockadeModel, TwoAtomParams};
use crate::dynamics::DEFAULT_DT_MAX;
use crate::error::{Error, Result};
use crate::noise::{Mode, NoiseConfig};
use crate::pulse::{Decoherence, DopplerScope, Preset, SequenceParams, SystemModel};

use super::catalog;

/// Uniform scan grid, endpoints included.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanGrid {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl ScanGrid {
    pub fn new(start: f64, stop: f64, points: usize) -> Self {
        Self { start, stop, points }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points == 0 {
            return Err(Error::Config("scan.points must be >= 1".into()));
        }
        if !(self.start.is_finite() && self.stop.is_finite()) || self.start < 0.0 {
            return Err(Error::Config("scan start/stop must be finite and >= 0".into()));
        }
        if self.stop < self.start || (self.points > 1 && self.stop == self.start) {
            return Err(Error::Config("scan.stop must exceed scan.start".into()));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.start];
        }
        let step = (self.stop - self.start) / (self.points - 1) as f64;
        (0..self.points)
            .map(|i| {
                if i == self.points - 1 {
                    self.stop
                } else {
                    self.start + step * i as f64
                }
            })
            .collect()
    }
}

/// Model switches that are not physical constants.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOptions {
    pub blockade: BlockadeModel,
    pub decoherence: Decoherence,
    pub crosstalk_fraction: f64,
    pub doppler_scope: DopplerScope,
}

/// One experiment run, as read from a TOML file.
///
/// Omitted sections take the preset defaults; [`ExperimentConfig::resolved`]
/// fills them in so the manifest echo is complete.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_shots: Option<usize>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default = "default_dt")]
    pub dt_max_us: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanGrid>,
    #[serde(default)]
    pub atom: AtomParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub two_atom: Option<TwoAtomParams>,
    #[serde(default)]
    pub detection: DetectionModel,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence: Option<SequenceParams>,
    #[serde(default)]
    pub model: ModelOptions,
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

fn default_dt() -> f64 {
    DEFAULT_DT_MAX
}

impl ExperimentConfig {
    /// Defaults for a preset with every optional section filled in.
    pub fn for_preset(preset: Preset) -> Self {
        Self {
            preset: preset.name().to_string(),
            n_shots: None,
            mode: Mode::Expectation,
            master_seed: 0,
            output: default_output().join(preset.name()),
            dt_max_us: DEFAULT_DT_MAX,
            scan: None,
            atom: AtomParams::default(),
            two_atom: None,
            detection: DetectionModel::default(),
            noise: NoiseConfig::default(),
            sequence: None,
            model: ModelOptions::default(),
        }
        .resolved()
        .expect("preset defaults are valid")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let msg = e.to_string();
            Error::Config(msg.trim_end().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn preset(&self) -> Result<Preset> {
        self.preset.parse()
    }

    /// Fills omitted sections from the preset catalog and the atom
    /// parameters, then validates.
    pub fn resolved(&self) -> Result<Self> {
        let preset = self.preset()?;
        let info = catalog::info(preset);
        let mut out = self.clone();
        out.scan.get_or_insert(info.default_scan.clone());
        out.n_shots.get_or_insert(info.default_shots);
        if out.two_atom.is_none() {
            out.two_atom = Some(TwoAtomParams::from_atom(&self.atom));
        }
        if out.sequence.is_none() {
            out.sequence = Some(SequenceParams {
                rabi_mhz: atom::two_photon_rabi(&self.atom)?,
                ..SequenceParams::default()
            });
        }
        out.validate()?;
        Ok(out)
    }

    /// Checks everything a run needs before any computation starts.
    pub fn validate(&self) -> Result<()> {
        let preset = self.preset()?;
        let scan = self.scan.as_ref().ok_or_else(|| Error::Config("missing scan grid".into()))?;
        scan.validate()?;
        match self.n_shots {
            Some(n) if n >= 1 => {}
            _ => return Err(Error::Config("n_shots must be >= 1".into())),
        }
        if !(self.dt_max_us > 0.0 && self.dt_max_us.is_finite()) {
            return Err(Error::Config("dt_max_us must be > 0".into()));
        }
        let system = self.system()?;
        system.validate()?;
        self.detection.validate()?;
        self.noise.validate()?;
        let seq = self.sequence_params()?;
        seq.validate()?;
        if preset.n_atoms() == 2 && !(system.two_atom.interaction_u_mhz > 0.0) {
            return Err(Error::Config(format!(
                "preset {preset} needs two_atom.interaction_u_mhz > 0"
            )));
        }
        if matches!(preset, Preset::PhaseGateEcho | Preset::ParityScan) {
            if seq.light_shift_mhz == 0.0 {
                return Err(Error::Config(format!("preset {preset} needs a nonzero light shift")));
            }
            if scan.stop > seq.echo_arm_us {
                return Err(Error::Config(format!(
                    "gate times up to {} us do not fit in the {} us echo arm",
                    scan.stop, seq.echo_arm_us
                )));
            }
        }
        // every scan point must produce a valid sequence
        for x in [scan.start, scan.stop] {
            preset.sequence(x, &seq)?;
        }
        Ok(())
    }

    pub fn system(&self) -> Result<SystemModel> {
        let two_atom = self
            .two_atom
            .clone()
            .unwrap_or_else(|| TwoAtomParams::from_atom(&self.atom));
        Ok(SystemModel {
            atom: self.atom.clone(),
            two_atom,
            blockade: self.model.blockade,
            decoherence: self.model.decoherence.clone(),
            crosstalk_fraction: self.model.crosstalk_fraction,
            doppler_scope: self.model.doppler_scope,
        })
    }

    pub fn sequence_params(&self) -> Result<SequenceParams> {
        match &self.sequence {
            Some(s) => Ok(s.clone()),
            None => Ok(SequenceParams {
                rabi_mhz: atom::two_photon_rabi(&self.atom)?,
                ..SequenceParams::default()
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scan_values_include_endpoints() {
        let g = ScanGrid::new(0.0, 1.0, 11);
        let v = g.values();
        assert_eq!(v.len(), 11);
        assert_eq!(v[10], 1.0);
        assert!((v[3] - 0.3).abs() < 1e-15);
        assert_eq!(ScanGrid::new(2.0, 2.0, 1).values(), vec![2.0]);
        assert!(ScanGrid::new(1.0, 0.0, 3).validate().is_err());
        assert!(ScanGrid::new(0.0, 1.0, 0).validate().is_err());
    }

    #[test]
    fn minimal_config_resolves() {
        let c = ExperimentConfig::from_toml("preset = \"rabi\"\n").unwrap();
        let r = c.resolved().unwrap();
        assert!(r.scan.is_some() && r.n_shots.is_some() && r.sequence.is_some());
        assert_eq!(r.sequence.unwrap().rabi_mhz, 2.0);
    }

    #[test]
    fn resolved_config_round_trips() {
        for p in Preset::ALL {
            let c = ExperimentConfig::for_preset(p);
            let text = c.to_toml().unwrap();
            let back = ExperimentConfig::from_toml(&text).unwrap();
            assert_eq!(back, c, "{text}");
        }
    }

    #[test]
    fn validation_errors() {
        assert!(matches!(
            ExperimentConfig::from_toml("preset = \"rabbi\"\n").unwrap().resolved(),
            Err(Error::UnknownPreset { .. })
        ));
        assert!(ExperimentConfig::from_toml("preset = \"rabi\"\nbogus = 1\n").is_err());
        let c = ExperimentConfig::from_toml("preset = \"w_echo\"\n[two_atom]\ninteraction_u_mhz = 0.0\n").unwrap();
        assert!(c.resolved().is_err());
        let c = ExperimentConfig::from_toml("preset = \"parity_scan\"\n[scan]\nstart = 0.0\nstop = 2.0\npoints = 5\n")
            .unwrap();
        assert!(c.resolved().is_err());
        let c = ExperimentConfig::from_toml("preset = \"rabi\"\nn_shots = 0\n").unwrap();
        assert!(c.resolved().is_err());
    }
}
