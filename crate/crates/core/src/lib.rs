//! Unfitted P1 finite elements for a conserved scalar in a moving 2D domain.
//!
//! The domain is the negative set of a level set function sampled on a fixed
//! background triangulation. Each time step solves on the elements near the
//! current domain, stabilized by a ghost penalty on the facets of a strip
//! around the interface, so that the previous solution is defined wherever
//! the new time derivative needs it.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod assembly;
pub mod cases;
pub mod cli;
pub mod expr;
pub mod fespace;
pub mod geometry;
pub mod linalg;
pub mod mesh;
pub mod par;
pub mod quadrature;
pub mod stepper;

pub use analysis::{error_norms, mass_trace, EocTable, ErrorReport, Norm};
pub use assembly::{FormVariant, GhostVariant};
pub use cases::{builtin_case, load_case, ProblemCase};
pub use mesh::{BackgroundMesh, Point, Rect};
pub use par::Exec;
pub use stepper::{run, Scheme, SolutionTrace, StepConfig};
