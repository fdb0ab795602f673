//! Equilibrium verification effort in markets where an agent resells answers
//! from upstream language models that sometimes hallucinate.
//!
//! * [`model`]: primitives and closed forms (hallucination rate, prices,
//!   lifetime values, welfare, activity threshold).
//! * [`solver`]: the welfare-maximizing model, effort and price.
//! * [`sim`]: seeded Monte Carlo of user relationships.
//! * [`scenario`], [`sweep`], [`chart`]: scenario files, parameter sweeps,
//!   CSV and SVG output.
//!
//! ```
//! use halluc_market::model::baseline;
//! use halluc_market::solver::{solve, SolverConfig};
//!
//! let r = solve(
//!     &baseline::catalog(),
//!     &baseline::population(0.1),
//!     &baseline::cost(),
//!     &baseline::params(0.95),
//!     &SolverConfig::default(),
//! )?;
//! assert_eq!(r.model_id(), "A");
//! # Ok::<(), halluc_market::error::ModelError>(())
//! ```

pub mod chart;
pub mod error;
pub mod model;
mod numeric;
pub mod scenario;
pub mod sim;
pub mod solver;
pub mod sweep;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/pricing.md")]
    mod pricing {}
    #[doc = include_str!("../../../book/src/equilibrium.md")]
    mod equilibrium {}
    #[doc = include_str!("../../../book/src/comparative-statics.md")]
    mod comparative_statics {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
