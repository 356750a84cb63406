//! Continuation of a boundary family of leaves over the local stable disk.

use nalgebra::DVector;

use super::FoliationError;
use crate::flow::{Crossing, FlowSystem};
use crate::graphtransform::{graph_transform, LipGraph};
use crate::hyperbolic::HyperbolicPoint;

/// Leaves over `D^u(2r)` indexed by `q ∈ D^s(r)`, obtained by transporting the boundary
/// leaves with the graph transform: `σ_q = Γ(τ(q), σ_{φ^{−τ(q)}(q)})`.
#[derive(Clone, Debug)]
pub struct LeafFamily {
    sys: FlowSystem,
    owner: HyperbolicPoint,
    radius: f64,
    boundary: Vec<(DVector<f64>, LipGraph)>,
    manifold: LipGraph,
}

/// Builds the family from leaves based on `∂D^s(r)` (stable adapted coordinates) and the
/// local unstable manifold, which is the leaf of `x` itself.
pub fn extend_foliation_over_unstable(
    sys: &FlowSystem,
    h: &HyperbolicPoint,
    boundary_leaves: Vec<(DVector<f64>, LipGraph)>,
    manifold: LipGraph,
) -> Result<LeafFamily, FoliationError> {
    let Some((q0, _)) = boundary_leaves.first() else {
        return Err(FoliationError::NoBoundaryLeaves);
    };
    let radius = q0.norm();
    for (index, (_, leaf)) in boundary_leaves.iter().enumerate() {
        let lipschitz = leaf.lipschitz();
        if lipschitz > 0.5 + 1e-12 {
            return Err(FoliationError::SteepLeaf { index, lipschitz });
        }
    }
    Ok(LeafFamily { sys: sys.clone(), owner: h.clone(), radius, boundary: boundary_leaves, manifold })
}

impl LeafFamily {
    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn manifold(&self) -> &LipGraph {
        &self.manifold
    }

    /// Backward time to reach `∂D^s(r)` from a point of `W^s_loc`, and the stable
    /// coordinate where it lands.
    pub fn entry_time(&self, point: &[f64]) -> Result<(f64, DVector<f64>), FoliationError> {
        let h = &self.owner;
        let norm = |y: &[f64]| h.chart_inverse(y).1.norm();
        if norm(point) >= self.radius {
            return Ok((0.0, h.chart_inverse(point).1));
        }
        let r = self.radius;
        match self.sys.hit_time(point, |y| norm(y) - r, Crossing::Either, -self.sys.settings.t_max_guard)? {
            Some((t, y)) => Ok((-t, h.chart_inverse(y.as_slice()).1)),
            None => Err(FoliationError::GuardExceeded),
        }
    }

    /// The leaf through a point of the local stable manifold; `σ_∞` at `x` itself.
    pub fn leaf_at(&self, point: &[f64]) -> Result<LipGraph, FoliationError> {
        let h = &self.owner;
        if h.chart_inverse(point).1.norm() == 0.0 {
            return Ok(self.manifold.clone());
        }
        let (tau, qb) = self.entry_time(point)?;
        // Nearest supplied boundary leaf; exact when the stable disk is an interval.
        let (_, leaf) = self
            .boundary
            .iter()
            .min_by(|a, b| (&a.0 - &qb).norm().total_cmp(&(&b.0 - &qb).norm()))
            .expect("non-empty boundary family");
        let chunk = 0.5 / h.rate;
        let mut graph = leaf.clone();
        let mut left = tau;
        while left > 0.0 {
            let dt = left.min(chunk);
            graph = graph_transform(&self.sys, &graph, dt)?;
            left -= dt;
        }
        Ok(graph)
    }
}
