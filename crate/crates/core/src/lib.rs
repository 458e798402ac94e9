//! Decides whether a linear system `A(x) φ(x) = γ(x)` with semialgebraic
//! coefficients admits a continuous solution on a compact box domain, and
//! builds one when it does.
//!
//! The pipeline: parse the system ([`expr`]), sample the domain and attach to
//! every sample the affine solution set of the pointwise system ([`bundle`]),
//! iteratively shrink those fibers to the subset reachable as a limit from
//! neighboring fibers (the stable bundle), then select a value in every fiber
//! so that the selection varies continuously ([`section`]). Solvability is
//! equivalent to the stable bundle having no empty fiber. [`verify`] holds
//! slow reference oracles that never share code with the fast paths.

#![forbid(unsafe_code)]

pub mod affine;
pub mod bundle;
pub mod expr;
pub mod section;
pub mod verify;

pub use affine::AffineSubspace;
pub use bundle::{Bundle, DomainSpec, RefineParams, SampleSet};
pub use expr::{Polynomial, SemialgFn, SystemSpec};
pub use section::{Cover, SampleSubset, Section, SectionParams};
