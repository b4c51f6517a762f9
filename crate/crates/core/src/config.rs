//! Experiment description, read from and written to TOML.
//!
//! ```toml
//! [model]
//! kind = "atom-photo"
//! omega_damping_units = 20.0
//!
//! [[channels]]
//! efficiency = 0.5
//!
//! [initial_state]
//! kind = "maximally-mixed"
//!
//! [numerics]
//! dt_damping_units = 0.002
//! t_final_damping_units = 30.0
//! sample_stride = 50
//!
//! [ensemble]
//! n_traj = 256
//! seed = 1
//!
//! [output]
//! estimators = ["O1", "O11"]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analytics::Estimator;
use crate::densmat::{DensityMatrix, C64};
use crate::engine::{ChannelConfig, ChannelScheme, ModelSpec};
use crate::error::{Error, Result};
use crate::models;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    AtomPhoto,
    AtomHomodyne,
    AtomHomodyneDiffusive,
    QbmFock,
    QbmCat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    Photodetection,
    Homodyne,
    HomodyneDiffusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialKind {
    MaximallyMixed,
    Ground,
    Excited,
    Coherent,
    Cat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_damping_units: Option<f64>,
    /// local-oscillator amplitude R for finite-amplitude homodyne
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oscillator_amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_trunc: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub efficiency: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_rad: Option<f64>,
    /// only read for `qbm-fock`; the atom kinds fix the scheme
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<SchemeKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub kind: InitialKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_re: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_im: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_damping_units: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_final_damping_units: Option<f64>,
    /// rescaled-time step of the reduced cat model
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dtau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_final: Option<f64>,
    #[serde(default = "default_stride")]
    pub sample_stride: usize,
    /// validate every matrix after every step
    #[serde(default)]
    pub check_invariants: bool,
}

fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub n_traj: u64,
    pub seed: u64,
    /// worker threads; absent means all available cores
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub estimators: Vec<String>,
    #[serde(default = "default_true")]
    pub oracle: bool,
    /// waiting-time histograms for jump channels
    #[serde(default)]
    pub waiting_times: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    #[serde(default)]
    pub channels: Vec<ChannelSection>,
    pub initial_state: InitialSection,
    pub numerics: NumericsSection,
    pub ensemble: EnsembleSection,
    pub output: OutputSection,
}

/// Validated time grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub dt: f64,
    pub n_steps: usize,
    pub stride: usize,
}

impl TimeGrid {
    pub fn t_final(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }

    /// Step indices at which states are sampled, 0 included.
    pub fn sample_steps(&self) -> impl Iterator<Item = usize> + '_ {
        (0..=self.n_steps).step_by(self.stride)
    }

    pub fn sample_times(&self) -> Vec<f64> {
        self.sample_steps().map(|k| k as f64 * self.dt).collect()
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn efficiencies(&self) -> Vec<f64> {
        self.channels.iter().map(|c| c.efficiency).collect()
    }

    pub fn estimators(&self) -> Result<Vec<Estimator>> {
        if self.output.estimators.is_empty() {
            return Err(Error::config("output.estimators", "at least one estimator is required"));
        }
        let n = self.channels.len();
        self.output
            .estimators
            .iter()
            .map(|name| {
                let e = Estimator::parse(name)?;
                if e.channels().iter().any(|&c| c >= n) {
                    return Err(Error::config(
                        "output.estimators",
                        format!("{name} refers to a channel beyond the {n} configured"),
                    ));
                }
                Ok(e)
            })
            .collect()
    }

    fn omega(&self) -> Result<f64> {
        let omega = self.model.omega_damping_units.unwrap_or(0.0);
        if !(omega.is_finite() && omega >= 0.0) {
            return Err(Error::config(
                "model.omega_damping_units",
                "must be finite and non-negative",
            ));
        }
        Ok(omega)
    }

    fn n_trunc(&self) -> Result<usize> {
        self.model
            .n_trunc
            .ok_or_else(|| Error::config("model.n_trunc", "required for qbm-fock"))
    }

    fn phase(&self, i: usize) -> Result<f64> {
        let phi = self.channels[i].phase_rad.unwrap_or(0.0);
        if !phi.is_finite() {
            return Err(Error::config(format!("channels[{i}].phase_rad"), "must be finite"));
        }
        Ok(phi)
    }

    fn check_efficiencies(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::config("channels", "at least one channel is required"));
        }
        let mut total = 0.0;
        for (i, ch) in self.channels.iter().enumerate() {
            if !(0.0..=1.0).contains(&ch.efficiency) {
                return Err(Error::config(format!("channels[{i}].efficiency"), "must lie in [0, 1]"));
            }
            total += ch.efficiency;
        }
        if total > 1.0 + 1e-12 {
            return Err(Error::config("channels", format!("efficiencies sum to {total} > 1")));
        }
        Ok(())
    }

    /// Engine model for the trajectory kinds; `None` for `qbm-cat`.
    pub fn model_spec(&self) -> Result<Option<ModelSpec>> {
        self.check_efficiencies()?;
        let omega = self.omega()?;
        let phases = || {
            (0..self.channels.len())
                .map(|i| self.phase(i))
                .collect::<Result<Vec<_>>>()
        };
        let pairs = || -> Result<Vec<(f64, f64)>> { Ok(self.efficiencies().into_iter().zip(phases()?).collect()) };
        let spec = match self.model.kind {
            ModelKind::AtomPhoto => models::build_atom_photodetection(omega, &self.efficiencies())?,
            ModelKind::AtomHomodyneDiffusive => models::build_atom_homodyne(omega, &pairs()?, true, None)?,
            ModelKind::AtomHomodyne => {
                let r = self
                    .model
                    .oscillator_amplitude
                    .ok_or_else(|| Error::config("model.oscillator_amplitude", "required for atom-homodyne"))?;
                models::build_atom_homodyne(omega, &pairs()?, false, Some(r))?
            }
            ModelKind::QbmFock => {
                let r = self.model.oscillator_amplitude;
                let channels = self
                    .channels
                    .iter()
                    .enumerate()
                    .map(|(i, ch)| {
                        let phi = self.phase(i)?;
                        Ok(match ch.scheme.unwrap_or(SchemeKind::HomodyneDiffusive) {
                            SchemeKind::Photodetection => ChannelConfig::photodetection(ch.efficiency),
                            SchemeKind::HomodyneDiffusive => ChannelConfig::homodyne_diffusive(ch.efficiency, phi),
                            SchemeKind::Homodyne => ChannelConfig {
                                efficiency: ch.efficiency,
                                scheme: ChannelScheme::Homodyne {
                                    amplitude: r.ok_or_else(|| {
                                        Error::config("model.oscillator_amplitude", "required for homodyne channels")
                                    })?,
                                    phase: phi,
                                },
                            },
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                models::build_qbm(omega, self.n_trunc()?, channels)?
            }
            ModelKind::QbmCat => return Ok(None),
        };
        Ok(Some(spec))
    }

    fn z(&self) -> Result<C64> {
        match (self.initial_state.z_re, self.initial_state.z_im) {
            (None, None) => Err(Error::config(
                "initial_state.z_re",
                "coherent and cat states need an amplitude",
            )),
            (re, im) => {
                let z = C64::new(re.unwrap_or(0.0), im.unwrap_or(0.0));
                if !(z.re.is_finite() && z.im.is_finite()) {
                    return Err(Error::config("initial_state.z_re", "must be finite"));
                }
                Ok(z)
            }
        }
    }

    /// Initial state of every observer, in the model's Hilbert space.
    pub fn initial_density(&self) -> Result<DensityMatrix> {
        let field = "initial_state.kind";
        let kind = self.initial_state.kind;
        match self.model.kind {
            ModelKind::AtomPhoto | ModelKind::AtomHomodyne | ModelKind::AtomHomodyneDiffusive => match kind {
                InitialKind::MaximallyMixed => Ok(DensityMatrix::maximally_mixed(2)),
                InitialKind::Excited => DensityMatrix::basis_state(2, 0),
                InitialKind::Ground => DensityMatrix::basis_state(2, 1),
                _ => Err(Error::config(
                    field,
                    "the atom accepts maximally-mixed, ground or excited",
                )),
            },
            ModelKind::QbmFock => {
                let n = self.n_trunc()?;
                match kind {
                    InitialKind::MaximallyMixed => Ok(DensityMatrix::maximally_mixed(n)),
                    InitialKind::Ground => DensityMatrix::basis_state(n, 0),
                    InitialKind::Coherent => models::coherent_state(n, self.z()?),
                    InitialKind::Cat => models::cat_state(n, self.z()?),
                    InitialKind::Excited => Err(Error::config(field, "the oscillator has no single excited state")),
                }
            }
            ModelKind::QbmCat => match kind {
                InitialKind::Cat => Ok(DensityMatrix::maximally_mixed(2)),
                _ => Err(Error::config(field, "the reduced cat model starts from a balanced cat")),
            },
        }
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        let n = &self.numerics;
        let (dt, t_final, names) = if self.model.kind == ModelKind::QbmCat {
            (n.dtau, n.tau_final, ("numerics.dtau", "numerics.tau_final"))
        } else {
            (
                n.dt_damping_units,
                n.t_final_damping_units,
                ("numerics.dt_damping_units", "numerics.t_final_damping_units"),
            )
        };
        let dt = dt.ok_or_else(|| Error::config(names.0, "required"))?;
        let t_final = t_final.ok_or_else(|| Error::config(names.1, "required"))?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::config(names.0, "must be positive"));
        }
        if !(t_final >= 0.0 && t_final.is_finite()) {
            return Err(Error::config(names.1, "must be finite and non-negative"));
        }
        let steps = t_final / dt;
        let n_steps = steps.round() as usize;
        if (steps - n_steps as f64).abs() > 1e-6 * steps.max(1.0) {
            return Err(Error::config(names.1, "must be a whole number of steps"));
        }
        if n.sample_stride == 0 {
            return Err(Error::config("numerics.sample_stride", "must be at least 1"));
        }
        Ok(TimeGrid {
            dt,
            n_steps,
            stride: n.sample_stride,
        })
    }

    /// Checks everything a run needs before any trajectory starts.
    pub fn validate(&self) -> Result<()> {
        if self.ensemble.n_traj == 0 {
            return Err(Error::config("ensemble.n_traj", "must be at least 1"));
        }
        if self.ensemble.threads == Some(0) {
            return Err(Error::config("ensemble.threads", "must be at least 1"));
        }
        self.check_efficiencies()?;
        self.estimators()?;
        let grid = self.time_grid()?;
        self.initial_density()?;
        match self.model_spec()? {
            Some(spec) => {
                crate::engine::Engine::new(spec, grid.dt)?;
            }
            None => {
                let eta: f64 = self.efficiencies().iter().sum();
                if eta * grid.dt > models::MAX_CAT_DRIFT_STEP {
                    return Err(Error::config(
                        "numerics.dtau",
                        format!("η·dτ must not exceed {}", models::MAX_CAT_DRIFT_STEP),
                    ));
                }
            }
        }
        if self.output.waiting_times && self.is_diffusive() {
            return Err(Error::config(
                "output.waiting_times",
                "diffusive channels record no detections",
            ));
        }
        Ok(())
    }

    pub fn is_diffusive(&self) -> bool {
        match self.model.kind {
            ModelKind::AtomHomodyneDiffusive => true,
            ModelKind::QbmFock => self
                .channels
                .iter()
                .any(|c| c.scheme.unwrap_or(SchemeKind::HomodyneDiffusive) == SchemeKind::HomodyneDiffusive),
            ModelKind::QbmCat => true,
            _ => false,
        }
    }
}
