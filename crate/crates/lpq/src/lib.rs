//! Numerical toolkit for contractive projections on finite `l_p(l_q)`
//! sequence spaces: norm calculus with analytic first and second
//! derivatives, the second-derivative disjointness probe, structural checks
//! for projection operators (semi-band preservation, averaging form, block
//! bases, support-family laws), and the characterization of 1-complemented
//! subspaces with a projection synthesizer and a randomized counterexample
//! hunter.

pub mod curve;
pub mod disjoint;
pub mod error;
pub mod operator;
pub mod report;
pub mod sample;
pub mod space;
pub mod subspace;

pub use error::{Error, Result};
pub use space::{disjoint, norming_functional, Element, Functional, SpaceSpec};

/// Library version embedded in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
