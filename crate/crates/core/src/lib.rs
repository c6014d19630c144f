//! CO₂-driven surface pH of a spherical cell and Bayesian dictionary-based
//! estimation of its membrane parameters.

pub mod chem;
pub mod config;
pub mod dictionary;
pub mod error;
pub mod estimate;
pub mod forward;
pub mod measure;
pub mod sparse;

pub use chem::{ChemSystem, SpeciesState};
pub use config::ForwardConfig;
pub use error::{Error, Result};
pub use forward::{map_params, ParamVector, PhysicalParams, Simulator, Trajectory};

/// Sizes the global worker pool used by dictionary generation and DCE
/// sampling. Must be called before any parallel work starts.
pub fn init_workers(n: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size worker pool: {e}")))
}
