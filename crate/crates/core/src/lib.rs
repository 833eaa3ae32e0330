//! Random walks in i.i.d. Dirichlet environments on the integers with bounded
//! jumps: model parameters, trap exponents, exact quenched solves, simulation
//! and the statistical checks that tie them together.

pub mod environment;
pub mod graphs;
pub mod kappa;
pub mod model;
pub mod solver;
pub mod stats;
pub mod verify;
pub mod walk;

pub use environment::{EnvError, Environment, RngStream};
pub use graphs::{DivergenceReport, GraphError, WeightedDigraph};
pub use kappa::{Kappa0Result, Regime, RegimeTag, SearchOptions, Strategy, TrapSet};
pub use model::{DerivedParams, DirichletParams, ModelError};
pub use solver::{EscapeBracket, HittingProblem, SolverError};
pub use stats::{KsReport, MeanSe};
pub use walk::{StopReason, Trajectory, VelocityEstimate, VelocityMethod, WalkError, WalkStats};
