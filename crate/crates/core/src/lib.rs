//! Discrete center-manifold construction for Q-sheeted graph currents.
//!
//! The crate covers the whole pipeline: sheet currents sampled on a
//! lattice over `[-4,4]^m`, excess and height, dyadic Whitney refinement,
//! smoothing and gluing of local interpolants into a center manifold, the
//! normal approximation over it, and numerical checks of the estimates
//! that accompany the construction.

pub mod current;
pub mod diag;
pub mod error;
pub mod geom;
pub mod grid;
pub mod interp;
pub mod normal;
pub mod qvalued;
pub mod scenario;
pub mod whitney;

pub use error::{Error, Result};
pub use geom::{plane_distance, FrameTriple, GraphPatch, Plane, Rotation2D, RotationType};
pub use grid::{GridSpec, SampledMap};
pub use qvalued::{eta, g_dist, sep_to_mean, QField, QPoint};
pub use current::{AmbientManifold, RegionSpec, SheetCurrent};
pub use scenario::{AmbientSpec, Generator, ScenarioSpec};
pub use whitney::{DyadicCube, Params, StopReason, WhitneyDecomposition};
pub use interp::{build_center_manifold, CenterManifold, Cutoff, Mollifier};
pub use normal::{normal_approximation, project, NormalApprox, Projection};
pub use diag::{Report, StripeDecomposition};
