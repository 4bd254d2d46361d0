//! Numerical library for stochastic differential games of impulse control
//! and stopping on jump-diffusions: closed-form solvers for the two worked
//! problems, a finite-difference double-obstacle solver driven by policy
//! iteration, a Monte Carlo policy simulator, and checkers for the
//! verification-theorem conditions and equilibrium properties.

pub mod closedform;
pub mod config;
pub mod grid;
pub mod model;
pub mod num;
pub mod operators;
pub mod qvi;
pub mod simulate;
pub mod verify;

pub use grid::{Axis, BoundaryPolicy, Grid, GridFunction};
pub use model::{
    GamePayoffs, GameSpec, InterventionSpec, JumpAtom, LevyDiffusionSpec, PlayerObjective, Sense,
    SolvencyBox, State, StopPolicy, ThresholdImpulsePolicy, ValidationConfig, ValidationReport,
};
