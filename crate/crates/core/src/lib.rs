//! Numerical laboratory for the singular horn metric `4dξ² + ξ⁶dθ²`, its
//! products with flat and hyperbolic factors, and their metric completion.

pub mod actions;
pub mod asymptotics;
pub mod error;
pub mod geodesic;
pub mod hyperbolic;
pub mod isometry;
pub mod linalg;
pub mod metric;
pub mod ode;
pub mod optimize;
pub mod paths;
pub mod quadrature;
pub mod scalar;
pub mod space;
pub mod warped;

pub use error::{GeometryError, Result};
pub use scalar::Real;
pub use space::XI_SNAP;

pub type SpaceSpec = space::SpaceSpec<f64>;
pub type FactorSpec = space::FactorSpec<f64>;
pub type CompletionPoint = space::CompletionPoint<f64>;
pub type Block = space::Block<f64>;
pub type HornBlock = space::HornBlock<f64>;
pub type TangentVector = space::TangentVector<f64>;
