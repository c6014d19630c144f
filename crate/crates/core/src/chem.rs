//! Carbonate/buffer reaction network with carbonic-anhydrase enhancement.
//!
//! Species are indexed `0..6` as CO₂, H₂CO₃, HCO₃⁻, H⁺, HA, A⁻ and all
//! concentrations are in mM. Reactions, in flux order:
//!
//! ```text
//! φ1, φ2 : CO₂ + H₂O ⇌ H₂CO₃          (CA accelerated)
//! φ3, φ4 : H₂CO₃ ⇌ HCO₃⁻ + H⁺
//! φ5, φ6 : HA ⇌ A⁻ + H⁺
//! ```

use crate::error::{Error, Result};

pub const N_SPECIES: usize = 6;
pub const N_FLUXES: usize = 6;

pub const CO2: usize = 0;
pub const H2CO3: usize = 1;
pub const HCO3: usize = 2;
pub const H: usize = 3;
pub const HA: usize = 4;
pub const A: usize = 5;

pub const SPECIES_NAMES: [&str; N_SPECIES] = ["CO2", "H2CO3", "HCO3", "H", "HA", "A"];

/// Stoichiometric matrix `S[species][flux]`.
pub const STOICHIOMETRY: [[i8; N_FLUXES]; N_SPECIES] = [
    [-1, 1, 0, 0, 0, 0],
    [1, -1, -1, 1, 0, 0],
    [0, 0, 1, -1, 0, 0],
    [0, 0, 1, -1, 1, -1],
    [0, 0, 0, 0, -1, 1],
    [0, 0, 0, 0, 1, -1],
];

/// Which side of the membrane a point lies on. The sensor compartment is
/// exterior fluid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Interior,
    Exterior,
}

/// Concentrations of the six species, mM.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct SpeciesState(pub [f64; N_SPECIES]);

impl SpeciesState {
    pub fn new(u: [f64; N_SPECIES]) -> Self {
        SpeciesState(u)
    }

    /// pH from the proton concentration; mM is converted to mol/L.
    pub fn ph(&self) -> f64 {
        ph_from_mm(self.0[H])
    }

    pub fn total_carbonate(&self) -> f64 {
        self.0[CO2] + self.0[H2CO3] + self.0[HCO3]
    }

    pub fn total_buffer(&self) -> f64 {
        self.0[HA] + self.0[A]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, &v) in SPECIES_NAMES.iter().zip(self.0.iter()) {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::domain(format!("concentration of {name} is {v}")));
            }
        }
        Ok(())
    }
}

/// `pH = −log10([H⁺] in mol/L)` for a proton concentration given in mM.
pub fn ph_from_mm(h_mm: f64) -> f64 {
    -(h_mm * 1e-3).log10()
}

/// Inverse of [`ph_from_mm`].
pub fn mm_from_ph(ph: f64) -> f64 {
    10f64.powf(-ph) * 1e3
}

/// Rate constants of one side of the membrane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReactionRates {
    pub k1: f64,
    pub k_m1: f64,
    pub k2: f64,
    pub k_m2: f64,
    pub k3: f64,
    pub k_m3: f64,
}

/// Rate table for both sides. Only the buffer dissociation constant differs
/// between the interior and the exterior.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateTable {
    pub k1: f64,
    pub k_m1: f64,
    pub k2: f64,
    pub k3: f64,
    /// Bicarbonate dissociation constant K2, mM.
    pub k2_eq: f64,
    pub kha_interior: f64,
    pub kha_exterior: f64,
}

impl RateTable {
    pub fn k_m2(&self) -> f64 {
        self.k2 / self.k2_eq
    }

    pub fn kha(&self, side: Side) -> f64 {
        match side {
            Side::Interior => self.kha_interior,
            Side::Exterior => self.kha_exterior,
        }
    }

    pub fn side(&self, side: Side) -> ReactionRates {
        ReactionRates {
            k1: self.k1,
            k_m1: self.k_m1,
            k2: self.k2,
            k_m2: self.k_m2(),
            k3: self.k3,
            k_m3: self.k3 / self.kha(side),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.k1,
            self.k_m1,
            self.k2,
            self.k3,
            self.k2_eq,
            self.kha_interior,
            self.kha_exterior,
        ];
        if all.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::config("all rate and equilibrium constants must be positive"));
        }
        Ok(())
    }
}

/// Carbonic-anhydrase acceleration factors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CaProfile {
    /// Factor inside the cell.
    pub interior: f64,
    /// Factor in the enriched layer `R < r < R + delta` of the free surface.
    pub surface: f64,
    /// CA layer thickness, μm.
    pub delta: f64,
}

impl CaProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.interior >= 1.0) || !(self.surface >= 1.0) {
            return Err(Error::config("CA acceleration factors must be >= 1"));
        }
        if !(self.delta > 0.0) {
            return Err(Error::config("CA layer thickness must be positive"));
        }
        Ok(())
    }
}

/// Mass-action fluxes `φ1..φ6` (mM/s). `ca` multiplies reactions 1 and −1.
pub fn mass_action_fluxes(
    state: &SpeciesState,
    rates: &ReactionRates,
    ca: f64,
) -> Result<[f64; N_FLUXES]> {
    state.validate()?;
    if !(ca >= 1.0) {
        return Err(Error::domain(format!("CA factor {ca} < 1")));
    }
    Ok(fluxes_unchecked(&state.0, rates, ca))
}

#[inline]
pub(crate) fn fluxes_unchecked(u: &[f64; N_SPECIES], r: &ReactionRates, ca: f64) -> [f64; N_FLUXES] {
    [
        ca * r.k1 * u[CO2],
        ca * r.k_m1 * u[H2CO3],
        r.k2 * u[H2CO3],
        r.k_m2 * u[HCO3] * u[H],
        r.k3 * u[HA],
        r.k_m3 * u[A] * u[H],
    ]
}

/// Net production rate `S·φ` of every species, mM/s.
pub fn net_species_rate(
    state: &SpeciesState,
    rates: &ReactionRates,
    ca: f64,
) -> Result<[f64; N_SPECIES]> {
    let phi = mass_action_fluxes(state, rates, ca)?;
    Ok(apply_stoichiometry(&phi))
}

#[inline]
pub(crate) fn apply_stoichiometry(phi: &[f64; N_FLUXES]) -> [f64; N_SPECIES] {
    // Written out so the conservation sums cancel exactly in floating point.
    let r1 = phi[0] - phi[1];
    let r2 = phi[2] - phi[3];
    let r3 = phi[4] - phi[5];
    [-r1, r1 - r2, r2, r2 + r3, -r3, r3]
}

/// Reaction rates without input validation; used inside the integrator where
/// small negative undershoots are tolerated.
#[inline]
pub(crate) fn net_rate_unchecked(u: &[f64; N_SPECIES], r: &ReactionRates, ca: f64) -> [f64; N_SPECIES] {
    apply_stoichiometry(&fluxes_unchecked(u, r, ca))
}

/// Jacobian `∂(S·φ)/∂u`, row-major `[species][species]`.
#[inline]
pub(crate) fn net_rate_jacobian(
    u: &[f64; N_SPECIES],
    r: &ReactionRates,
    ca: f64,
) -> [[f64; N_SPECIES]; N_SPECIES] {
    let mut j = [[0.0; N_SPECIES]; N_SPECIES];
    // d(r1)/du, r1 = ca k1 u0 - ca km1 u1
    let dr1 = [ca * r.k1, -ca * r.k_m1, 0.0, 0.0, 0.0, 0.0];
    // r2 = k2 u1 - km2 u2 u3
    let dr2 = [0.0, r.k2, -r.k_m2 * u[H], -r.k_m2 * u[HCO3], 0.0, 0.0];
    // r3 = k3 u4 - km3 u5 u3
    let dr3 = [0.0, 0.0, 0.0, -r.k_m3 * u[A], r.k3, -r.k_m3 * u[H]];
    for c in 0..N_SPECIES {
        j[CO2][c] = -dr1[c];
        j[H2CO3][c] = dr1[c] - dr2[c];
        j[HCO3][c] = dr2[c];
        j[H][c] = dr2[c] + dr3[c];
        j[HA][c] = -dr3[c];
        j[A][c] = dr3[c];
    }
    j
}

/// The reaction network of one experiment: rates, CA profile, diffusivities
/// and the initial (far-field) concentrations of each side.
#[derive(Clone, Debug, PartialEq)]
pub struct ChemSystem {
    pub rates: RateTable,
    pub ca: CaProfile,
    /// Diffusion coefficients, μm²/s.
    pub diffusion_interior: [f64; N_SPECIES],
    pub diffusion_exterior: [f64; N_SPECIES],
    pub initial_interior: SpeciesState,
    pub initial_exterior: SpeciesState,
}

impl ChemSystem {
    pub fn diffusion(&self, side: Side) -> &[f64; N_SPECIES] {
        match side {
            Side::Interior => &self.diffusion_interior,
            Side::Exterior => &self.diffusion_exterior,
        }
    }

    pub fn initial(&self, side: Side) -> &SpeciesState {
        match side {
            Side::Interior => &self.initial_interior,
            Side::Exterior => &self.initial_exterior,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.rates.validate()?;
        self.ca.validate()?;
        self.initial_interior.validate()?;
        self.initial_exterior.validate()?;
        for &k in self.diffusion_interior.iter().chain(self.diffusion_exterior.iter()) {
            if !(k > 0.0) {
                return Err(Error::config("diffusion coefficients must be positive"));
            }
        }
        Ok(())
    }

    /// A state of exact chemical equilibrium on `side` with the given pH,
    /// bicarbonate and buffer-base concentrations. The remaining species
    /// follow from the three equilibrium relations.
    pub fn stationary_state(&self, side: Side, ph: f64, bicarbonate: f64, base: f64) -> SpeciesState {
        let r = self.rates.side(side);
        let h = mm_from_ph(ph);
        let h2co3 = bicarbonate * h * r.k_m2 / r.k2;
        let co2 = h2co3 * r.k_m1 / r.k1;
        let ha = base * h * r.k_m3 / r.k3;
        SpeciesState([co2, h2co3, bicarbonate, h, ha, base])
    }
}
