//! Non-negative least squares and sparsity-promoting Bayesian solvers.

pub mod cgls;
pub mod ias;

pub use cgls::{nnls_cgls, nnls_cgls_damped, CglsStatus, CglsStop, NnlsReport};
pub use ias::{ias, ias_hybrid, sensitivity_scales, HyperParams, Hyperprior, IasConfig, IasResult, ThetaRule};
