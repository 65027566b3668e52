//! Engineered reservoirs and their quantum-trajectory unravellings.
//!
//! - [`qstate`]: layouts, state vectors, density matrices and operators.
//! - [`liouville`]: Lindblad models and a fixed-step RK4 integrator.
//! - [`unraveller`]: jump channel sets, unitary mixing and seeded ensembles.
//! - [`atom_reservoir`]: a beam of three-level atoms as a thermal reservoir.
//! - [`purcell_reservoir`]: a Purcell-engineered reservoir and its effective qubit model.
//! - [`entanglement`]: concurrence and monitored Bell-pair protection.
//! - [`output`]: CSV time series.
//!
//! ```
//! use cavity_unravel::liouville::{integrate, Channel, LindbladModel};
//! use cavity_unravel::qstate::{qubit_layout, sigma_minus, DensityMatrix};
//!
//! let model = LindbladModel::dissipative(qubit_layout(), vec![Channel::new(1.0, sigma_minus())])?;
//! let rho0 = DensityMatrix::basis(qubit_layout(), 1)?;
//! let states = integrate(&model, &rho0, &[0.0, 1.0], 1e-3)?;
//! assert!((states[1].population(1) - (-1.0f64).exp()).abs() < 1e-10);
//! # Ok::<(), cavity_unravel::Error>(())
//! ```

pub mod atom_reservoir;
pub mod entanglement;
pub mod error;
pub mod liouville;
pub mod output;
pub mod purcell_reservoir;
pub mod qstate;
pub mod unraveller;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

// The guide's and README's code blocks run as doctests through these modules.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/states.md")]
    mod states {}
    #[doc = include_str!("../../../book/src/master-equations.md")]
    mod master_equations {}
    #[doc = include_str!("../../../book/src/trajectories.md")]
    mod trajectories {}
    #[doc = include_str!("../../../book/src/atom-reservoir.md")]
    mod atom_reservoir {}
    #[doc = include_str!("../../../book/src/purcell-reservoir.md")]
    mod purcell_reservoir {}
    #[doc = include_str!("../../../book/src/entanglement.md")]
    mod entanglement {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../README.md")]
    mod readme {}
}
