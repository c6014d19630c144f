//! Semidiscrete spherical reaction–diffusion system.
//!
//! Linear finite elements in `r` with the `r²` weight integrated exactly,
//! a lumped (row-sum) mass matrix and nodal quadrature for the reaction
//! terms. The unknowns are ordered node by node with the six species
//! contiguous, so the bulk Jacobian has three 6×6 block diagonals; the six
//! compartment concentrations are appended at the end and handled as a
//! bordered block.

use nalgebra::{Matrix6, Vector6};

use super::banded::{BandLu, BandMatrix};
use super::compartment::{compartment_jacobian, compartment_rhs_unchecked};
use super::integrate::StiffProblem;
use super::mesh::{Geometry, RadialMesh};
use super::params::PhysicalParams;
use crate::chem::{net_rate_jacobian, net_rate_unchecked, ChemSystem, ReactionRates, Side, SpeciesState, CO2, N_SPECIES};
use crate::config::Coupling;
use crate::error::{Error, Result};

const NS: usize = N_SPECIES;

#[derive(Clone, Debug)]
pub struct SemidiscreteSystem {
    pub geometry: Geometry,
    pub params: PhysicalParams,
    pub coupling: Coupling,
    rates_in: ReactionRates,
    rates_out: ReactionRates,
    kappa_in: [f64; NS],
    kappa_out: [f64; NS],
    /// Radii of the unknown nodes: interior `[0, R]`, then exterior `[R, R_inf)`.
    pub radius: Vec<f64>,
    n_interior: usize,
    /// Lumped mass `∫ ψ_g r² dr`.
    pub mass: Vec<f64>,
    /// Diagonal of the geometric stiffness `∫ ψ_g' ψ_g' r² dr`.
    k_diag: Vec<f64>,
    /// Coupling between node `g` and `g + 1` (zero across the membrane).
    k_next: Vec<f64>,
    /// Coupling of the last unknown node to the Dirichlet node.
    k_dirichlet: f64,
    dirichlet: [f64; NS],
    /// Effective CA factor per node.
    ca: Vec<f64>,
    free_membrane_weight: f64,
    // linear algebra workspace
    lu: Option<BandLu>,
    border_lu: Option<nalgebra::LU<f64, nalgebra::U6, nalgebra::U6>>,
    /// `E`: compartment rows against bulk columns, `(row, col, value)`.
    e_entries: Vec<(usize, usize, f64)>,
    /// `B⁻¹C` columns when the compartment feeds back into the bulk.
    z_cols: Option<Vec<Vec<f64>>>,
}

impl SemidiscreteSystem {
    pub fn assemble(
        geometry: &Geometry,
        mesh: &RadialMesh,
        chem: &ChemSystem,
        params: &PhysicalParams,
        coupling: Coupling,
    ) -> Result<Self> {
        geometry.validate()?;
        mesh.validate(geometry)?;
        chem.validate()?;
        params.validate()?;
        if mesh.nodes_in_layer(geometry.r, chem.ca.delta) < 2 {
            return Err(Error::config(format!(
                "mesh does not resolve the CA layer: fewer than 2 exterior nodes within {} um of the membrane",
                chem.ca.delta
            )));
        }

        let ni = mesh.interior.len();
        let ne = mesh.exterior.len();
        let n_nodes = ni + ne - 1;
        let mut radius = Vec::with_capacity(n_nodes);
        radius.extend_from_slice(&mesh.interior);
        radius.extend_from_slice(&mesh.exterior[..ne - 1]);

        let mut mass = vec![0.0; n_nodes];
        let mut k_diag = vec![0.0; n_nodes];
        let mut k_next = vec![0.0; n_nodes];
        let mut ca_num = vec![0.0; n_nodes];
        let mut k_dirichlet = 0.0;
        let layer_end = geometry.r + chem.ca.delta;

        let mut element = |g_a: usize, a: f64, b: f64, side: Side, last: bool| {
            let h = b - a;
            let s = (b * b * b - a * a * a) / (3.0 * h * h);
            let (ma, mb) = weighted_hat_integrals(a, b, a, b);
            // CA-weighted parts of the same integrals
            let (ca_a, ca_b) = match side {
                Side::Interior => (chem.ca.interior * ma, chem.ca.interior * mb),
                Side::Exterior => {
                    let split = layer_end.clamp(a, b);
                    let (la, lb) = weighted_hat_integrals(a, b, a, split);
                    let (oa, ob) = weighted_hat_integrals(a, b, split, b);
                    (chem.ca.surface * la + oa, chem.ca.surface * lb + ob)
                }
            };
            mass[g_a] += ma;
            ca_num[g_a] += ca_a;
            k_diag[g_a] += s;
            if last {
                k_dirichlet = -s;
            } else {
                mass[g_a + 1] += mb;
                ca_num[g_a + 1] += ca_b;
                k_diag[g_a + 1] += s;
                k_next[g_a] = -s;
            }
        };
        for e in 0..ni - 1 {
            element(e, mesh.interior[e], mesh.interior[e + 1], Side::Interior, false);
        }
        for e in 0..ne - 1 {
            element(ni + e, mesh.exterior[e], mesh.exterior[e + 1], Side::Exterior, e == ne - 2);
        }
        let ca: Vec<f64> = ca_num.iter().zip(&mass).map(|(c, m)| c / m).collect();

        let r2 = geometry.r * geometry.r;
        let free_membrane_weight = match coupling {
            Coupling::OneWay => r2,
            Coupling::TwoWay => r2 - geometry.w * geometry.w / 4.0,
        };

        Ok(SemidiscreteSystem {
            geometry: *geometry,
            params: *params,
            coupling,
            rates_in: chem.rates.side(Side::Interior),
            rates_out: chem.rates.side(Side::Exterior),
            kappa_in: chem.diffusion_interior,
            kappa_out: chem.diffusion_exterior,
            radius,
            n_interior: ni,
            mass,
            k_diag,
            k_next,
            k_dirichlet,
            dirichlet: chem.initial_exterior.0,
            ca,
            free_membrane_weight,
            lu: None,
            border_lu: None,
            e_entries: Vec::new(),
            z_cols: None,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.radius.len()
    }

    pub fn n_interior(&self) -> usize {
        self.n_interior
    }

    /// Node index of the interior membrane node `r = R⁻`.
    pub fn membrane_interior(&self) -> usize {
        self.n_interior - 1
    }

    /// Node index of the exterior membrane node `r = R⁺`.
    pub fn membrane_exterior(&self) -> usize {
        self.n_interior
    }

    pub fn compartment_offset(&self) -> usize {
        NS * self.n_nodes()
    }

    pub fn dirichlet_values(&self) -> &[f64; NS] {
        &self.dirichlet
    }

    pub fn side(&self, node: usize) -> Side {
        if node < self.n_interior {
            Side::Interior
        } else {
            Side::Exterior
        }
    }

    pub fn ca_factor(&self, node: usize) -> f64 {
        self.ca[node]
    }

    /// State vector with each domain uniform and the compartment given.
    pub fn uniform_state(&self, interior: &SpeciesState, exterior: &SpeciesState, compartment: &SpeciesState) -> Vec<f64> {
        let mut y = Vec::with_capacity(self.dim());
        for g in 0..self.n_nodes() {
            let s = if g < self.n_interior { interior } else { exterior };
            y.extend_from_slice(&s.0);
        }
        y.extend_from_slice(&compartment.0);
        y
    }

    /// Override the far-field boundary values (defaults to the exterior initial state).
    pub fn set_dirichlet(&mut self, values: [f64; NS]) {
        self.dirichlet = values;
    }

    #[inline]
    fn kappa(&self, node: usize) -> &[f64; NS] {
        if node < self.n_interior {
            &self.kappa_in
        } else {
            &self.kappa_out
        }
    }

    #[inline]
    fn rates(&self, node: usize) -> &ReactionRates {
        if node < self.n_interior {
            &self.rates_in
        } else {
            &self.rates_out
        }
    }

    /// Net CO₂ flux density across the free membrane, positive into the cell.
    pub fn membrane_flux(&self, y: &[f64]) -> f64 {
        let ui = y[NS * self.membrane_interior() + CO2];
        let ue = y[NS * self.membrane_exterior() + CO2];
        self.params.lambda * (ue - ui)
    }

    /// `Σ_g m_g Σ_{n∈species} u_{g,n}` over the interior nodes, i.e. `∫ u r² dr`.
    pub fn interior_integral(&self, y: &[f64], species: &[usize]) -> f64 {
        (0..self.n_interior)
            .map(|g| self.mass[g] * species.iter().map(|&n| y[NS * g + n]).sum::<f64>())
            .sum()
    }

    pub fn exterior_integral(&self, y: &[f64], species: &[usize]) -> f64 {
        (self.n_interior..self.n_nodes())
            .map(|g| self.mass[g] * species.iter().map(|&n| y[NS * g + n]).sum::<f64>())
            .sum()
    }

    /// Geometric stiffness times a nodal field: `(K u)_g` without the
    /// diffusion coefficient. Used by tests of the assembly.
    pub fn stiffness_apply(&self, u: &[f64], dirichlet: f64) -> Vec<f64> {
        let n = self.n_nodes();
        (0..n)
            .map(|g| {
                let mut v = self.k_diag[g] * u[g];
                if g + 1 < n {
                    v += self.k_next[g] * u[g + 1];
                } else {
                    v += self.k_dirichlet * dirichlet;
                }
                if g > 0 {
                    v += self.k_next[g - 1] * u[g - 1];
                }
                v
            })
            .collect()
    }

    fn node_slice(y: &[f64], g: usize) -> [f64; NS] {
        let mut u = [0.0; NS];
        u.copy_from_slice(&y[NS * g..NS * g + NS]);
        u
    }
}

/// `(∫_lo^hi ψ_a r² dr, ∫_lo^hi ψ_b r² dr)` for the hat functions of element
/// `[a, b]`; two-point Gauss is exact for the cubic integrands.
fn weighted_hat_integrals(a: f64, b: f64, lo: f64, hi: f64) -> (f64, f64) {
    if hi <= lo {
        return (0.0, 0.0);
    }
    let h = b - a;
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let off = half / 3f64.sqrt();
    let mut ia = 0.0;
    let mut ib = 0.0;
    for r in [mid - off, mid + off] {
        let w = half * r * r;
        ia += w * (b - r) / h;
        ib += w * (r - a) / h;
    }
    (ia, ib)
}

impl StiffProblem for SemidiscreteSystem {
    fn dim(&self) -> usize {
        NS * self.n_nodes() + NS
    }

    fn rhs(&self, y: &[f64], dy: &mut [f64]) {
        let n = self.n_nodes();
        for g in 0..n {
            let u = Self::node_slice(y, g);
            let react = net_rate_unchecked(&u, self.rates(g), self.ca[g]);
            let kappa = self.kappa(g);
            let inv_m = 1.0 / self.mass[g];
            for s in 0..NS {
                let mut ku = self.k_diag[g] * u[s];
                if g + 1 < n {
                    ku += self.k_next[g] * y[NS * (g + 1) + s];
                } else {
                    ku += self.k_dirichlet * self.dirichlet[s];
                }
                if g > 0 {
                    ku += self.k_next[g - 1] * y[NS * (g - 1) + s];
                }
                dy[NS * g + s] = react[s] - kappa[s] * ku * inv_m;
            }
        }
        let gi = self.membrane_interior();
        let ge = self.membrane_exterior();
        let flux = self.free_membrane_weight * self.membrane_flux(y);
        dy[NS * gi + CO2] += flux / self.mass[gi];
        dy[NS * ge + CO2] -= flux / self.mass[ge];

        let c = self.compartment_offset();
        let u_in = Self::node_slice(y, gi);
        let u_out = Self::node_slice(y, ge);
        let mut u0 = [0.0; NS];
        u0.copy_from_slice(&y[c..c + NS]);
        let d0 = compartment_rhs_unchecked(&u0, &u_in, &u_out, &self.params, &self.geometry, &self.rates_out);
        dy[c..c + NS].copy_from_slice(&d0);

        if self.coupling == Coupling::TwoWay {
            let g = &self.geometry;
            let w_in = g.w * g.w / 4.0 * self.params.lambda;
            dy[NS * gi + CO2] -= w_in * (u_in[CO2] - u0[CO2]) / self.mass[gi];
            let w_out = g.w * g.h / 2.0 * self.params.gamma;
            for s in 0..NS {
                dy[NS * ge + s] -= w_out * (u_out[s] - u0[s]) / self.mass[ge];
            }
        }
    }

    fn factor(&mut self, y: &[f64], shift: f64) -> Result<()> {
        let n = self.n_nodes();
        let nb = NS * n;
        let mut band = BandMatrix::zeros(nb, NS, NS);
        for g in 0..n {
            let u = Self::node_slice(y, g);
            let jr = net_rate_jacobian(&u, self.rates(g), self.ca[g]);
            let kappa = self.kappa(g);
            let inv_m = 1.0 / self.mass[g];
            for a in 0..NS {
                for b in 0..NS {
                    let v = -jr[a][b];
                    if v != 0.0 {
                        band.add(NS * g + a, NS * g + b, v);
                    }
                }
                band.add(NS * g + a, NS * g + a, shift + kappa[a] * self.k_diag[g] * inv_m);
                if g + 1 < n {
                    band.add(NS * g + a, NS * (g + 1) + a, kappa[a] * self.k_next[g] * inv_m);
                }
                if g > 0 {
                    band.add(NS * g + a, NS * (g - 1) + a, kappa[a] * self.k_next[g - 1] * inv_m);
                }
            }
        }
        let gi = self.membrane_interior();
        let ge = self.membrane_exterior();
        let wl = self.free_membrane_weight * self.params.lambda;
        let (ri, re) = (NS * gi + CO2, NS * ge + CO2);
        band.add(ri, ri, wl / self.mass[gi]);
        band.add(ri, re, -wl / self.mass[gi]);
        band.add(re, re, wl / self.mass[ge]);
        band.add(re, ri, -wl / self.mass[ge]);

        let c = self.compartment_offset();
        let mut u0 = [0.0; NS];
        u0.copy_from_slice(&y[c..c + NS]);
        let cj = compartment_jacobian(&u0, &self.params, &self.geometry, &self.rates_out);
        let mut f = Matrix6::<f64>::zeros();
        for a in 0..NS {
            for b in 0..NS {
                f[(a, b)] = -cj.d_self[a][b];
            }
            f[(a, a)] += shift;
        }
        self.e_entries.clear();
        self.e_entries.push((CO2, ri, -cj.d_interior_co2));
        for s in 0..NS {
            self.e_entries.push((s, NS * ge + s, -cj.d_exterior));
        }

        if self.coupling == Coupling::TwoWay {
            let g = &self.geometry;
            let w_in = g.w * g.w / 4.0 * self.params.lambda / self.mass[gi];
            let w_out = g.w * g.h / 2.0 * self.params.gamma / self.mass[ge];
            band.add(ri, ri, w_in);
            for s in 0..NS {
                band.add(NS * ge + s, NS * ge + s, w_out);
            }
            let lu = band.factor()?;
            // border columns C: bulk rows against compartment columns
            let mut zs = Vec::with_capacity(NS);
            for col in 0..NS {
                let mut z = vec![0.0; nb];
                if col == CO2 {
                    z[ri] = -w_in;
                }
                z[NS * ge + col] = -w_out;
                lu.solve(&mut z);
                zs.push(z);
            }
            for (row, j, v) in &self.e_entries {
                for (col, z) in zs.iter().enumerate() {
                    f[(*row, col)] -= v * z[*j];
                }
            }
            self.lu = Some(lu);
            self.z_cols = Some(zs);
        } else {
            self.lu = Some(band.factor()?);
            self.z_cols = None;
        }
        let flu = f.lu();
        if !flu.is_invertible() {
            return Err(Error::Invariant("singular compartment block".into()));
        }
        self.border_lu = Some(flu);
        Ok(())
    }

    fn solve(&self, b: &mut [f64]) {
        let c = self.compartment_offset();
        let (bulk, comp) = b.split_at_mut(c);
        let lu = self.lu.as_ref().expect("factor() before solve()");
        lu.solve(bulk);
        let mut s = Vector6::from_column_slice(comp);
        for (row, j, v) in &self.e_entries {
            s[*row] -= v * bulk[*j];
        }
        let yc = self.border_lu.as_ref().unwrap().solve(&s).expect("invertible compartment block");
        if let Some(zs) = &self.z_cols {
            for (col, z) in zs.iter().enumerate() {
                let yv = yc[col];
                if yv != 0.0 {
                    for (x, zi) in bulk.iter_mut().zip(z) {
                        *x -= zi * yv;
                    }
                }
            }
        }
        comp.copy_from_slice(yc.as_slice());
    }
}
