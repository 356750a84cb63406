//! Numerical Morse theory: invariant manifolds by the graph transform, stable
//! foliations with radial functions, the boundary flow on unstable manifolds,
//! flow juxtaposition and sampled cell maps.

pub mod boundaryflow;
pub mod cellmap;
pub mod counterexample;
pub mod examples;
pub mod expr;
pub mod extreal;
pub mod flow;
pub mod foliation;
pub mod graphtransform;
pub mod hyperbolic;
pub mod juxtapose;
pub mod linalg;
pub mod transversality;

pub use expr::{EvalError, ExprError, Expression};
pub use extreal::ExtReal;
pub use flow::{FlowError, FlowSystem, Termination, Trajectory, VectorField};
pub use graphtransform::{GraphTransformError, LipGraph, ManifoldSettings};
pub use hyperbolic::{HyperbolicError, HyperbolicPoint};
pub use transversality::{Subspace, TransversalityError};
