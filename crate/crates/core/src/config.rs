//! Declarative model configuration.
//!
//! Every physical constant of the forward model lives in a TOML document; the
//! defaults are compiled in from `config/defaults.toml` and any file given by
//! the user is layered on top of them key by key.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chem::{CaProfile, ChemSystem, RateTable, SpeciesState, N_SPECIES};
use crate::error::{Error, Result};

pub const DEFAULTS_TOML: &str = include_str!("../config/defaults.toml");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub cell_radius: f64,
    pub outer_radius: f64,
    pub tip_radius: f64,
    pub tip_distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerSide {
    pub interior: [f64; N_SPECIES],
    pub exterior: [f64; N_SPECIES],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FastRates {
    /// Forward rates are `1/eps`, `1/eps'`.
    Reciprocal,
    /// Forward rates are `eps`, `eps'` as printed.
    Literal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesConfig {
    pub k1: f64,
    pub k_minus1: f64,
    pub eps: f64,
    pub eps_prime: f64,
    pub fast_rates: FastRates,
    pub k2_equilibrium: f64,
    pub kha_interior: f64,
    pub kha_exterior: f64,
}

impl RatesConfig {
    pub fn table(&self) -> RateTable {
        let (k2, k3) = match self.fast_rates {
            FastRates::Reciprocal => (1.0 / self.eps, 1.0 / self.eps_prime),
            FastRates::Literal => (self.eps, self.eps_prime),
        };
        RateTable {
            k1: self.k1,
            k_m1: self.k_minus1,
            k2,
            k3,
            k2_eq: self.k2_equilibrium,
            kha_interior: self.kha_interior,
            kha_exterior: self.kha_exterior,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaConfig {
    pub interior: f64,
    pub surface: f64,
    pub layer_thickness: f64,
}

/// Reference values used to map the dimensionless unknowns to physical units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    pub lambda0: f64,
    pub ca_reference: f64,
    pub gamma0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub interior_nodes: usize,
    pub exterior_nodes: usize,
    pub interior_grading: f64,
    pub exterior_grading: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coupling {
    OneWay,
    TwoWay,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    pub initial_step: f64,
    pub max_steps: usize,
    pub negative_tolerance: f64,
    /// Interpolate output frames instead of stepping onto each of them.
    pub dense_output: bool,
    pub coupling: Coupling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementConfig {
    pub duration: f64,
    pub sample_interval: f64,
    pub precision: f64,
    pub ph0: f64,
    /// Standard deviation of optional Gaussian pH noise added before quantization.
    pub noise_std: f64,
}

impl MeasurementConfig {
    pub fn n_samples(&self) -> usize {
        (self.duration / self.sample_interval).round() as usize + 1
    }
}

/// Complete forward-model configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardConfig {
    pub geometry: GeometryConfig,
    pub diffusion: PerSide,
    pub initial: PerSide,
    pub rates: RatesConfig,
    pub ca: CaConfig,
    pub scaling: ScalingConfig,
    pub mesh: MeshConfig,
    pub integrator: IntegratorConfig,
    pub measurement: MeasurementConfig,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        toml::from_str(DEFAULTS_TOML).expect("built-in defaults parse")
    }
}

impl ForwardConfig {
    /// Parses a full or partial TOML document layered over the defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut base: toml::Value = toml::from_str(DEFAULTS_TOML).expect("built-in defaults parse");
        let overlay: toml::Value =
            toml::from_str(text).map_err(|e| Error::config(format!("invalid TOML: {e}")))?;
        merge(&mut base, overlay);
        let cfg: ForwardConfig = base
            .try_into()
            .map_err(|e| Error::config(format!("invalid configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML serialization, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.to_toml_string().as_bytes());
        hex::encode(h.finalize())
    }

    pub fn chem(&self) -> ChemSystem {
        ChemSystem {
            rates: self.rates.table(),
            ca: CaProfile {
                interior: self.ca.interior,
                surface: self.ca.surface,
                delta: self.ca.layer_thickness,
            },
            diffusion_interior: self.diffusion.interior,
            diffusion_exterior: self.diffusion.exterior,
            initial_interior: SpeciesState(self.initial.interior),
            initial_exterior: SpeciesState(self.initial.exterior),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.geometry;
        if !(g.cell_radius > 0.0 && g.cell_radius < g.outer_radius) {
            return Err(Error::config("need 0 < cell_radius < outer_radius"));
        }
        if !(g.tip_radius > 0.0 && g.tip_distance > 0.0) {
            return Err(Error::config("electrode tip radius and distance must be positive"));
        }
        self.chem().validate()?;
        let m = &self.mesh;
        if m.interior_nodes < 3 || m.exterior_nodes < 3 {
            return Err(Error::config("each domain needs at least 3 nodes"));
        }
        if !(m.interior_grading >= 1.0 && m.exterior_grading >= 1.0) {
            return Err(Error::config("mesh grading factors must be >= 1"));
        }
        let i = &self.integrator;
        if !(i.rtol > 0.0 && i.atol > 0.0 && i.initial_step > 0.0 && i.negative_tolerance >= 0.0) {
            return Err(Error::config("integrator tolerances must be positive"));
        }
        let s = &self.measurement;
        if !(s.duration > 0.0 && s.sample_interval > 0.0 && s.precision > 0.0) {
            return Err(Error::config("measurement timing and precision must be positive"));
        }
        if !(s.noise_std >= 0.0) {
            return Err(Error::config("noise_std must be >= 0"));
        }
        let ratio = s.duration / s.sample_interval;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(Error::config("duration must be a multiple of the sample interval"));
        }
        let sc = &self.scaling;
        if !(sc.lambda0 > 0.0 && sc.ca_reference > 0.0 && sc.gamma0 > 0.0) {
            return Err(Error::config("scaling constants must be positive"));
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
