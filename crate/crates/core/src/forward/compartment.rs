//! Well-mixed micro-compartment between the electrode tip and the membrane.

use super::mesh::Geometry;
use super::params::PhysicalParams;
use crate::chem::{net_rate_jacobian, net_rate_unchecked, ReactionRates, SpeciesState, CO2, N_SPECIES};
use crate::error::Result;

/// `du⁰/dt` given the interior (`u⁻`) and exterior (`u⁺`) membrane states.
///
/// The compartment loses or gains CO₂ through the membrane under the tip at
/// rate `λ/h` and exchanges every species with the free exterior at rate
/// `2γ/P`, `P` being the tip radius. Reactions use the exterior rate
/// constants with CA factor `A⁰`.
pub fn compartment_rhs(
    u0: &SpeciesState,
    u_minus: &SpeciesState,
    u_plus: &SpeciesState,
    params: &PhysicalParams,
    geometry: &Geometry,
    rates: &ReactionRates,
) -> Result<[f64; N_SPECIES]> {
    u0.validate()?;
    u_minus.validate()?;
    u_plus.validate()?;
    params.validate()?;
    geometry.validate()?;
    Ok(compartment_rhs_unchecked(&u0.0, &u_minus.0, &u_plus.0, params, geometry, rates))
}

#[inline]
pub(crate) fn compartment_rhs_unchecked(
    u0: &[f64; N_SPECIES],
    u_minus: &[f64; N_SPECIES],
    u_plus: &[f64; N_SPECIES],
    params: &PhysicalParams,
    geometry: &Geometry,
    rates: &ReactionRates,
) -> [f64; N_SPECIES] {
    let mut d = net_rate_unchecked(u0, rates, params.a0);
    let quench = 2.0 * params.gamma / geometry.w;
    for s in 0..N_SPECIES {
        d[s] += quench * (u_plus[s] - u0[s]);
    }
    d[CO2] -= params.lambda / geometry.h * (u0[CO2] - u_minus[CO2]);
    d
}

pub(crate) struct CompartmentJacobian {
    pub d_self: [[f64; N_SPECIES]; N_SPECIES],
    /// `∂(du⁰_CO₂/dt)/∂u⁻_CO₂`.
    pub d_interior_co2: f64,
    /// `∂(du⁰_n/dt)/∂u⁺_n`, the same for every species.
    pub d_exterior: f64,
}

pub(crate) fn compartment_jacobian(
    u0: &[f64; N_SPECIES],
    params: &PhysicalParams,
    geometry: &Geometry,
    rates: &ReactionRates,
) -> CompartmentJacobian {
    let mut d_self = net_rate_jacobian(u0, rates, params.a0);
    let quench = 2.0 * params.gamma / geometry.w;
    for (s, row) in d_self.iter_mut().enumerate() {
        row[s] -= quench;
    }
    let perm = params.lambda / geometry.h;
    d_self[CO2][CO2] -= perm;
    CompartmentJacobian { d_self, d_interior_co2: perm, d_exterior: quench }
}
