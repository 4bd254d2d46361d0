//! Exact and semi-analytic solvers for the two worked problems: the
//! geometric-Brownian controller-stopper game and the investor's
//! capital-injection / market-exit problem.

pub mod example1;
pub mod investor;

pub use example1::{Example1Params, Example1Solution};
pub use investor::{Example2Params, Example2Solution};
