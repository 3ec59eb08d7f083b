//! Tabular multi-agent generative adversarial imitation learning on finite
//! Markov games, with exact solvers for values, Nash constraints, occupancy
//! measures and the Lagrangian dual.

pub mod envs;
pub mod equilibria;
pub mod error;
pub mod fixtures;
pub mod discriminator;
pub mod game;
pub mod io;
pub mod magail;
pub mod mack;
pub mod policy;
pub mod solvers;
pub mod theory;
pub mod trajectory;

pub use error::{Error, Result};
pub use game::{Dynamics, JointActionSpace, MarkovGame, TransitionTable, ValidationReport, Violation};
pub use policy::{AgentPolicy, JointPolicy, ObservationMap};
pub use trajectory::{DemonstrationSet, RngConfig, Trajectory};
