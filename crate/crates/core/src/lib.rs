//! Numerical construction of the coordinate `y = log(psit / psi)` attached
//! to a holomorphic potential on a horizontal strip, together with the
//! geometric and analytic checks it is expected to pass.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod expr;
pub mod geometry;
pub mod hyperbolic;
pub mod liouville;
pub mod ode;

pub use expr::{ExprError, PoleProximity, PotentialExpr};
pub use geometry::{check_hypothesis, GeometryError, GridSpec, HypothesisReport, Strip};
pub use hyperbolic::{ExtC, HyperbolicError, Mobius, QcConstants};
pub use liouville::{
    construct_map, write_map_csv, DisplacementCheck, EmbeddingReport, GaugeReport, LiouvilleError,
    LiouvilleMap, MapOptions,
};
pub use num_complex::Complex64;
pub use ode::{integrate, HillState, IntegratorConfig, OdeError, PathPolyline, Trajectory};
