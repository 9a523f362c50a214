//! Numerical construction of inertial manifolds for stochastic evolution
//! equations driven by alpha-stable Levy noise.
//!
//! The equation is handled pathwise: the driving noise `L^alpha_t = W(S^alpha_t)`
//! (Brownian motion time-changed by an `alpha/2`-stable subordinator) feeds a
//! stationary Ornstein-Uhlenbeck process `z`, the conjugation `u = e^{-z} v`
//! turns the stochastic equation into a random ODE, and the manifold graph
//! `psi` is the fixed point of a Lyapunov-Perron integral operator on a
//! weighted backward history space. Scenarios for different `alpha` generated
//! from one seed share the Brownian path, which is what makes the
//! `alpha -> 2` comparison experiments meaningful.
//!
//! Modules follow the pipeline: [`noise`] (paths), [`ou`] (the conjugation
//! variable), [`spectral`] (the operator and gap condition), [`dynamics`]
//! (integration of the conjugated equation), [`manifold`] (the graph solver),
//! [`metrics`] (path distances), [`experiments`] (the reproducible runners
//! behind the CLI).

pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod manifold;
pub mod metrics;
pub mod noise;
pub mod ou;
pub mod path;
pub mod spectral;
pub mod state;

pub use error::{Error, Result};
pub use noise::NoiseScenario;
pub use path::{CadlagPath, PathKind};
pub use spectral::{GapReport, Part, Spectrum};
pub use state::StateVec;
