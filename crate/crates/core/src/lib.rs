//! Thermal field simulation for a simplified power transformer, a
//! physics-informed neural network surrogate of that field, and exact
//! mixed-integer placement of temperature sensors at its stable points.

pub mod error;
pub mod io;
pub mod nn;
pub mod optim;
pub mod physics;
pub mod pinn;
pub mod placement;
pub mod solver;

pub use error::{Error, Result};
pub use physics::{DriveSample, DriveSeries, PhysicsSpec};
pub use solver::{FieldSeries, GridSpec};
pub use io::RunConfig;
pub use pinn::{Pinn, TrainConfig};
pub use placement::{PlacementConfig, PlacementGrid, PlacementSolution, ScoreField};
