pub mod agents;
pub mod baselines;
pub mod efld;
pub mod eid;
pub mod ergodic;
pub mod error;
pub mod field;
pub mod sim;
pub mod smoke;

pub use error::{Error, Result};
pub use field::{make_uncertainty_map, Domain, GaussianPeak, Point, ScalarField};
