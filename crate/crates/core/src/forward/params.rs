use serde::{Deserialize, Serialize};

use crate::config::ScalingConfig;
use crate::error::{Error, Result};

/// Dimensionless unknowns `(ξ_λ, ξ_A, ξ_γ)`, each in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(pub [f64; 3]);

impl ParamVector {
    pub fn new(xi_lambda: f64, xi_a: f64, xi_gamma: f64) -> Self {
        ParamVector([xi_lambda, xi_a, xi_gamma])
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in ["xi_lambda", "xi_A", "xi_gamma"].iter().zip(self.0) {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::domain(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Membrane permeability (μm/s), compartment CA factor and quenching factor (μm/s).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub lambda: f64,
    pub a0: f64,
    pub gamma: f64,
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::domain(format!("permeability {} < 0", self.lambda)));
        }
        if !(self.a0 >= 1.0) {
            return Err(Error::domain(format!("compartment CA factor {} < 1", self.a0)));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::domain(format!("quenching factor {} < 0", self.gamma)));
        }
        Ok(())
    }
}

/// Maps the dimensionless unknowns to physical units:
/// `λ = ξ_λ λ0`, `A⁰ = ξ_A A`, `γ = γ0 · 10^(−0.5 ξ_γ + (1 − ξ_γ))`.
pub fn map_params(xi: &ParamVector, scaling: &ScalingConfig) -> Result<PhysicalParams> {
    xi.validate()?;
    let [xl, xa, xg] = xi.0;
    let p = PhysicalParams {
        lambda: xl * scaling.lambda0,
        a0: xa * scaling.ca_reference,
        gamma: scaling.gamma0 * 10f64.powf(-0.5 * xg + (1.0 - xg)),
    };
    p.validate()?;
    Ok(p)
}

/// Inverse of [`map_params`]; used to report estimates in both unit systems.
pub fn unmap_params(p: &PhysicalParams, scaling: &ScalingConfig) -> ParamVector {
    ParamVector([
        p.lambda / scaling.lambda0,
        p.a0 / scaling.ca_reference,
        (1.0 - (p.gamma / scaling.gamma0).log10()) / 1.5,
    ])
}
