//! Forward model: spherical cell with a reacting membrane layer and the
//! electrode micro-compartment.

pub mod banded;
pub mod compartment;
pub mod integrate;
pub mod mesh;
pub mod params;
pub mod system;

use std::io::Write;

pub use compartment::compartment_rhs;
pub use integrate::{integrate, IntegrationStats, StepControl, StiffProblem};
pub use mesh::{Geometry, RadialMesh};
pub use params::{map_params, unmap_params, ParamVector, PhysicalParams};
pub use system::SemidiscreteSystem;

use crate::chem::{ph_from_mm, ChemSystem, SpeciesState, H, N_SPECIES, SPECIES_NAMES};
use crate::config::ForwardConfig;
use crate::error::Result;

/// Output of one simulation, sampled every `dt` seconds.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub dt: f64,
    pub compartment: Vec<SpeciesState>,
    /// Full state vectors per frame, if requested.
    pub snapshots: Option<Vec<Vec<f64>>>,
    pub stats: IntegrationStats,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.compartment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.compartment.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| k as f64 * self.dt).collect()
    }

    /// Compartment pH per frame.
    pub fn ph(&self) -> Vec<f64> {
        self.compartment.iter().map(|s| ph_from_mm(s.0[H])).collect()
    }

    /// CSV with columns `t, pH` and optionally the six compartment species.
    pub fn write_csv<W: Write>(&self, mut w: W, species: bool) -> Result<()> {
        write!(w, "t,pH")?;
        if species {
            for name in SPECIES_NAMES {
                write!(w, ",{name}")?;
            }
        }
        writeln!(w)?;
        for (k, s) in self.compartment.iter().enumerate() {
            write!(w, "{},{}", k as f64 * self.dt, ph_from_mm(s.0[H]))?;
            if species {
                for v in s.0 {
                    write!(w, ",{v:e}")?;
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Reusable setup of the forward model for one configuration.
#[derive(Clone, Debug)]
pub struct Simulator {
    pub config: ForwardConfig,
    pub geometry: Geometry,
    pub mesh: RadialMesh,
    pub chem: ChemSystem,
}

impl Simulator {
    pub fn new(config: &ForwardConfig) -> Result<Self> {
        config.validate()?;
        let geometry = Geometry::from_config(&config.geometry)?;
        let mesh = RadialMesh::graded(&geometry, &config.mesh)?;
        let chem = config.chem();
        chem.validate()?;
        Ok(Simulator { config: config.clone(), geometry, mesh, chem })
    }

    pub fn system(&self, params: &PhysicalParams) -> Result<SemidiscreteSystem> {
        SemidiscreteSystem::assemble(&self.geometry, &self.mesh, &self.chem, params, self.config.integrator.coupling)
    }

    pub fn step_control(&self) -> StepControl {
        let c = &self.config.integrator;
        StepControl {
            rtol: c.rtol,
            atol: c.atol,
            initial_step: c.initial_step,
            max_steps: c.max_steps,
            negative_tolerance: c.negative_tolerance,
            nonnegative: None,
            dense_output: c.dense_output,
        }
    }

    /// Initial state: each domain uniform at its table values, the
    /// compartment at the exterior values.
    pub fn initial_state(&self, system: &SemidiscreteSystem) -> Vec<f64> {
        let e = &self.chem.initial_exterior;
        system.uniform_state(&self.chem.initial_interior, e, e)
    }

    /// Simulates the standard experiment for dimensionless parameters `xi`.
    pub fn simulate(&self, xi: &ParamVector) -> Result<Trajectory> {
        let p = map_params(xi, &self.config.scaling)?;
        self.simulate_physical(&p, false)
    }

    pub fn simulate_physical(&self, params: &PhysicalParams, keep_snapshots: bool) -> Result<Trajectory> {
        let mut system = self.system(params)?;
        let y0 = self.initial_state(&system);
        self.run(&mut system, &y0, keep_snapshots)
    }

    /// Integrates `system` from `y0` over the configured measurement window.
    pub fn run(&self, system: &mut SemidiscreteSystem, y0: &[f64], keep_snapshots: bool) -> Result<Trajectory> {
        let m = &self.config.measurement;
        let n_out = m.n_samples();
        let off = system.compartment_offset();
        let mut compartment = Vec::with_capacity(n_out);
        let mut snapshots = keep_snapshots.then(|| Vec::with_capacity(n_out));
        let stats = integrate(system, y0, m.sample_interval, n_out, &self.step_control(), |_, y| {
            let mut u = [0.0; N_SPECIES];
            u.copy_from_slice(&y[off..off + N_SPECIES]);
            compartment.push(SpeciesState(u));
            if let Some(s) = snapshots.as_mut() {
                s.push(y.to_vec());
            }
        })?;
        log::debug!("forward solve: {stats:?}");
        Ok(Trajectory { dt: m.sample_interval, compartment, snapshots, stats })
    }
}
