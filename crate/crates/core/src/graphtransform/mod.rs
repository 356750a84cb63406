//! The graph transform on grid-discretized Lipschitz graphs, its fixed point (the local
//! unstable manifold), tangent spaces along it and convergence diagnostics.

mod grid;

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::flow::{Crossing, FlowError, FlowSystem};
use crate::hyperbolic::{classify, HyperbolicError, HyperbolicPoint};
use crate::transversality::{principal_angles, Subspace};

pub use grid::Grid;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphTransformError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Hyperbolic(#[from] HyperbolicError),
    #[error("node {node}: preimage leaves the unstable disk (sup-norm {norm:e} > radius {radius:e})")]
    CoverageFailure { node: usize, norm: f64, radius: f64 },
    #[error("node {node}: Newton inversion stalled at residual {residual:e}")]
    InversionFailure { node: usize, residual: f64 },
    #[error("no convergence after {iterations} iterations (last change {change:e})")]
    NoConvergence { iterations: usize, change: f64 },
    #[error("central-difference stencil leaves the grid")]
    BoundaryStencil,
    #[error("sequence point {index} could not be traced back to the local unstable manifold")]
    UnresolvedOrbit { index: usize },
    #[error("negative transform time {0}")]
    NegativeTime(f64),
}

/// A map from the unstable cube `[-r, r]^k` (adapted coordinates) to stable adapted
/// coordinates, stored on a uniform grid.
#[derive(Clone, Debug)]
pub struct LipGraph {
    owner: HyperbolicPoint,
    grid: Grid,
    values: Vec<f64>,
    lipschitz: f64,
}

impl LipGraph {
    pub fn from_fn<F>(owner: &HyperbolicPoint, radius: f64, nodes: usize, f: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64>,
    {
        let grid = Grid::new(owner.index, nodes, radius);
        let width = owner.stable_dim();
        let mut values = Vec::with_capacity(grid.len() * width);
        for i in 0..grid.len() {
            let v = f(&grid.node(i));
            values.extend_from_slice(&v.as_slice()[..width]);
        }
        Self::from_values(owner.clone(), grid, values)
    }

    pub fn zero(owner: &HyperbolicPoint, radius: f64, nodes: usize) -> Self {
        let s = owner.stable_dim();
        Self::from_fn(owner, radius, nodes, |_| DVector::zeros(s))
    }

    fn from_values(owner: HyperbolicPoint, grid: Grid, values: Vec<f64>) -> Self {
        let mut g = LipGraph { owner, grid, values, lipschitz: 0.0 };
        g.lipschitz = g.grid_lipschitz();
        g
    }

    pub fn owner(&self) -> &HyperbolicPoint {
        &self.owner
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn radius(&self) -> f64 {
        self.grid.radius
    }

    pub fn width(&self) -> usize {
        self.owner.stable_dim()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn node_value(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.values[i * w..(i + 1) * w]
    }

    /// Lipschitz estimate from neighbouring grid differences.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Largest value norm; membership in `D^s(r)` requires it to be at most `r`.
    pub fn max_value_norm(&self) -> f64 {
        (0..self.grid.len()).map(|i| crate::linalg::norm(self.node_value(i))).fold(0.0, f64::max)
    }

    pub fn eval(&self, u: &[f64]) -> DVector<f64> {
        self.grid.interpolate(&self.values, self.width(), u)
    }

    pub fn eval_with_gradient(&self, u: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        self.grid.interpolate_with_gradient(&self.values, self.width(), u)
    }

    /// Ambient point of the graph over `u`.
    pub fn point(&self, u: &[f64]) -> DVector<f64> {
        self.owner.chart(u, self.eval(u).as_slice())
    }

    pub fn node_point(&self, i: usize) -> DVector<f64> {
        self.owner.chart(self.grid.node(i).as_slice(), self.node_value(i))
    }

    /// Largest node-wise distance between the values of two graphs on the same grid.
    pub fn sup_distance(&self, other: &LipGraph) -> f64 {
        let w = self.width();
        (0..self.grid.len())
            .map(|i| crate::linalg::dist(&self.values[i * w..(i + 1) * w], &other.values[i * w..(i + 1) * w]))
            .fold(0.0, f64::max)
    }

    /// Largest Frobenius distance of central-difference derivatives over interior nodes.
    pub fn derivative_distance(&self, other: &LipGraph) -> f64 {
        let h = self.grid.spacing();
        self.grid
            .interior()
            .into_iter()
            .map(|i| {
                let u = self.grid.node(i);
                let a = self.grid.central_difference(&self.values, self.width(), u.as_slice(), h);
                let b = other.grid.central_difference(&other.values, other.width(), u.as_slice(), h);
                (a - b).norm()
            })
            .fold(0.0, f64::max)
    }

    fn grid_lipschitz(&self) -> f64 {
        let h = self.grid.spacing();
        if h == 0.0 {
            return 0.0;
        }
        self.grid
            .edges()
            .into_iter()
            .map(|(i, j)| crate::linalg::dist(self.node_value(i), self.node_value(j)) / h)
            .fold(0.0, f64::max)
    }

    /// CSV table: adapted unstable coordinates, stable values and the ambient point.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let k = self.grid.axes;
        let mut header: Vec<String> = (1..=k).map(|i| format!("u{i}")).collect();
        header.extend((1..=self.width()).map(|i| format!("s{i}")));
        header.extend((1..=self.owner.ambient_dim()).map(|i| format!("x{i}")));
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.grid.len() {
            let mut row: Vec<String> = self.grid.node(i).iter().map(|v| v.to_string()).collect();
            row.extend(self.node_value(i).iter().map(|v| v.to_string()));
            row.extend(self.node_point(i).iter().map(|v| v.to_string()));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// A transformed graph with the per-node preimages found by the inversion.
#[derive(Clone, Debug)]
pub struct TransformOutput {
    pub graph: LipGraph,
    pub preimages: Vec<DVector<f64>>,
    pub max_newton_iterations: usize,
}

const NEWTON_MAX_ITER: usize = 50;
const COVERAGE_SLACK: f64 = 1e-9;

struct NodeSolve {
    preimage: DVector<f64>,
    value: DVector<f64>,
    iterations: usize,
}

enum NodeFailure {
    Flow(FlowError),
    Coverage(f64),
    Inversion(f64),
}

impl From<FlowError> for NodeFailure {
    fn from(e: FlowError) -> Self {
        NodeFailure::Flow(e)
    }
}

fn flow_with_jacobian(sys: &FlowSystem, p: &DVector<f64>, t: f64) -> Result<(DVector<f64>, DMatrix<f64>), FlowError> {
    if t == 0.0 {
        let n = p.len();
        return Ok((p.clone(), DMatrix::identity(n, n)));
    }
    sys.flow_jacobian(p.as_slice(), t)
}

/// Solves `P^u φ^t(X(w, σ(w))) = u` by damped Newton and returns the preimage and value.
fn invert_node(sys: &FlowSystem, sigma: &LipGraph, split: &DMatrix<f64>, u: &DVector<f64>, t: f64) -> Result<NodeSolve, NodeFailure> {
    let h = sigma.owner();
    let k = h.index;
    let s = h.stable_dim();
    let r = sigma.radius();
    let a_u = split.rows(0, k);
    let a_s = split.rows(k, s);
    let residual_of = |y: &DVector<f64>| -> DVector<f64> { u - a_u * (y - &h.location) };
    let image = |w: &DVector<f64>| -> Result<DVector<f64>, FlowError> {
        let x = sigma.point(w.as_slice());
        if t == 0.0 {
            return Ok(x);
        }
        sys.flow_map(x.as_slice(), t)
    };
    // Chord Newton: the Jacobian is refreshed only when a chord step fails to reduce the residual.
    let jacobian_at = |w: &DVector<f64>| -> Result<(DVector<f64>, DMatrix<f64>), FlowError> {
        let (sv, ds) = sigma.eval_with_gradient(w.as_slice());
        let x = h.chart(w.as_slice(), sv.as_slice());
        let mut da = DMatrix::zeros(k + s, k);
        da.view_mut((0, 0), (k, k)).fill_with_identity();
        da.view_mut((k, 0), (s, k)).copy_from(&ds);
        let dx = h.chart_differential(w.as_slice(), sv.as_slice(), &da);
        let (y, d) = flow_with_jacobian(sys, &x, t)?;
        Ok((y, a_u * d * dx))
    };

    let mut w = if t == 0.0 {
        u.clone()
    } else {
        let back = sys.flow_map(sigma.point(u.as_slice()).as_slice(), -t)?;
        a_u * (back - &h.location)
    };
    let tol = 1e-12 * r.max(1e-3);
    let floor = 1e-9 * r.max(1e-3);
    let (mut y, jac) = jacobian_at(&w)?;
    let mut lu = jac.lu();
    let mut fresh = true;
    let mut res = residual_of(&y);
    let mut iterations = 0;
    while res.norm() > tol {
        if iterations >= NEWTON_MAX_ITER {
            if res.norm() > floor {
                return Err(NodeFailure::Inversion(res.norm()));
            }
            break;
        }
        iterations += 1;
        let Some(step) = lu.solve(&res) else {
            return Err(NodeFailure::Inversion(res.norm()));
        };
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..if fresh { 12 } else { 1 } {
            let trial = &w + &step * lambda;
            let ty = image(&trial)?;
            let tres = residual_of(&ty);
            if tres.norm() < res.norm() {
                w = trial;
                y = ty;
                res = tres;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if accepted {
            fresh = false;
            continue;
        }
        if !fresh {
            let (_, jac) = jacobian_at(&w)?;
            lu = jac.lu();
            fresh = true;
            continue;
        }
        // Noise floor of the integrator reached.
        if res.norm() <= floor {
            break;
        }
        return Err(NodeFailure::Inversion(res.norm()));
    }
    let sup = w.amax();
    if sup > r * (1.0 + COVERAGE_SLACK) {
        return Err(NodeFailure::Coverage(sup));
    }
    let value = a_s * (&y - &h.location);
    Ok(NodeSolve { preimage: w, value, iterations })
}

/// Γ(t, σ) with per-node preimage data.
pub fn graph_transform_detailed(sys: &FlowSystem, sigma: &LipGraph, t: f64) -> Result<TransformOutput, GraphTransformError> {
    if t < 0.0 {
        return Err(GraphTransformError::NegativeTime(t));
    }
    let grid = sigma.grid().clone();
    let width = sigma.width();
    if width == 0 || sigma.owner().index == 0 {
        // Trivial graph: no stable factor, or the single node over the stationary point.
        let preimages = (0..grid.len()).map(|i| grid.node(i)).collect();
        let graph = LipGraph::from_values(sigma.owner.clone(), grid, vec![0.0; sigma.values.len()]);
        return Ok(TransformOutput { graph, preimages, max_newton_iterations: 0 });
    }
    let split = sigma.owner().split_matrix_adapted();
    let solved: Vec<Result<NodeSolve, NodeFailure>> =
        (0..grid.len()).into_par_iter().map(|i| invert_node(sys, sigma, &split, &grid.node(i), t)).collect();
    let mut values = Vec::with_capacity(grid.len() * width);
    let mut preimages = Vec::with_capacity(grid.len());
    let mut max_iter = 0;
    for (node, r) in solved.into_iter().enumerate() {
        match r {
            Ok(ns) => {
                values.extend_from_slice(ns.value.as_slice());
                preimages.push(ns.preimage);
                max_iter = max_iter.max(ns.iterations);
            }
            Err(NodeFailure::Flow(e)) => return Err(e.into()),
            Err(NodeFailure::Coverage(norm)) => {
                return Err(GraphTransformError::CoverageFailure { node, norm, radius: grid.radius })
            }
            Err(NodeFailure::Inversion(residual)) => return Err(GraphTransformError::InversionFailure { node, residual }),
        }
    }
    let graph = LipGraph::from_values(sigma.owner.clone(), grid, values);
    Ok(TransformOutput { graph, preimages, max_newton_iterations: max_iter })
}

/// Γ(t, σ).
pub fn graph_transform(sys: &FlowSystem, sigma: &LipGraph, t: f64) -> Result<LipGraph, GraphTransformError> {
    graph_transform_detailed(sys, sigma, t).map(|o| o.graph)
}

/// Parameters of the fixed-point iteration for the local unstable manifold.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldSettings {
    pub radius: f64,
    /// Nodes per axis; `None` picks 65 for up to two axes, 17 for three and 9 beyond.
    pub nodes: Option<usize>,
    /// Transform time per iteration; `None` uses `0.5 / rate`.
    pub step_t: Option<f64>,
    pub tol_c0: f64,
    pub tol_c1: f64,
    pub max_iterations: usize,
    /// Radius halvings allowed on coverage, inversion or convergence failure.
    pub max_halvings: usize,
}

impl Default for ManifoldSettings {
    fn default() -> Self {
        ManifoldSettings {
            radius: 0.5,
            nodes: None,
            step_t: None,
            tol_c0: 1e-10,
            tol_c1: 1e-8,
            max_iterations: 300,
            max_halvings: 6,
        }
    }
}

impl ManifoldSettings {
    pub fn nodes_for(&self, axes: usize) -> usize {
        self.nodes.unwrap_or(match axes {
            0..=2 => 65,
            3 => 17,
            _ => 9,
        })
    }
}

/// The computed fixed point with its iteration trace.
#[derive(Clone, Debug)]
pub struct ManifoldRun {
    pub graph: LipGraph,
    pub halvings: usize,
    pub step_t: f64,
    pub iterations: usize,
    /// Sup-norm change per iteration.
    pub changes_c0: Vec<f64>,
    pub changes_c1: Vec<f64>,
    /// Distances of each iterate to the final graph.
    pub distances_c0: Vec<f64>,
    pub distances_c1: Vec<f64>,
    pub lipschitz: Vec<f64>,
}

fn iterate_fixed_point(
    sys: &FlowSystem,
    h: &HyperbolicPoint,
    radius: f64,
    nodes: usize,
    step_t: f64,
    settings: &ManifoldSettings,
) -> Result<(Vec<LipGraph>, Vec<f64>, Vec<f64>), GraphTransformError> {
    let mut history = vec![LipGraph::zero(h, radius, nodes)];
    let (mut c0, mut c1) = (Vec::new(), Vec::new());
    if h.index == 0 || h.stable_dim() == 0 {
        return Ok((history, c0, c1));
    }
    for _ in 0..settings.max_iterations {
        let prev = history.last().expect("non-empty history");
        let next = graph_transform(sys, prev, step_t)?;
        let d0 = next.sup_distance(prev);
        let d1 = next.derivative_distance(prev);
        c0.push(d0);
        c1.push(d1);
        history.push(next);
        if d0 < settings.tol_c0 && d1 < settings.tol_c1 {
            return Ok((history, c0, c1));
        }
    }
    Err(GraphTransformError::NoConvergence { iterations: settings.max_iterations, change: c0.last().copied().unwrap_or(0.0) })
}

/// Iterates Γ(step_t, ·) from σ ≡ 0 until the C⁰ and C¹ changes drop below tolerance,
/// halving the radius on failure.
pub fn unstable_manifold_local(sys: &FlowSystem, h: &HyperbolicPoint, settings: &ManifoldSettings) -> Result<ManifoldRun, GraphTransformError> {
    let nodes = settings.nodes_for(h.index);
    let step_t = settings.step_t.unwrap_or(0.5 / h.rate);
    let mut radius = settings.radius.min(h.r_max);
    let mut halvings = 0;
    loop {
        match iterate_fixed_point(sys, h, radius, nodes, step_t, settings) {
            Ok((history, changes_c0, changes_c1)) => {
                let fin = history.last().expect("non-empty history").clone();
                let distances_c0 = history.iter().map(|g| g.sup_distance(&fin)).collect();
                let distances_c1 = history.iter().map(|g| g.derivative_distance(&fin)).collect();
                let lipschitz = history.iter().map(LipGraph::lipschitz).collect();
                return Ok(ManifoldRun {
                    graph: fin,
                    halvings,
                    step_t,
                    iterations: history.len() - 1,
                    changes_c0,
                    changes_c1,
                    distances_c0,
                    distances_c1,
                    lipschitz,
                });
            }
            Err(
                e @ (GraphTransformError::CoverageFailure { .. }
                | GraphTransformError::InversionFailure { .. }
                | GraphTransformError::NoConvergence { .. }
                | GraphTransformError::Flow(_)),
            ) => {
                if halvings >= settings.max_halvings {
                    return Err(e);
                }
                halvings += 1;
                radius *= 0.5;
            }
            Err(e) => return Err(e),
        }
    }
}

/// The local stable manifold: the unstable one of the time-reversed system.
pub fn stable_manifold_local(sys: &FlowSystem, h: &HyperbolicPoint, settings: &ManifoldSettings) -> Result<ManifoldRun, GraphTransformError> {
    let rev = sys.reversed();
    let hr = classify(&rev, h.location.as_slice())?;
    unstable_manifold_local(&rev, &hr, settings)
}

/// Tangent space of the graph at `u`, from central differences with the grid spacing.
pub fn tangent_space_at(sigma: &LipGraph, u: &[f64]) -> Result<Subspace, GraphTransformError> {
    let owner = sigma.owner();
    let k = owner.index;
    let s = owner.stable_dim();
    if k == 0 {
        return Ok(Subspace::from_spanning(&DMatrix::zeros(owner.ambient_dim(), 0)));
    }
    let hstep = sigma.grid().spacing();
    if !sigma.grid().has_stencil(u, hstep) {
        return Err(GraphTransformError::BoundaryStencil);
    }
    let ds = sigma.grid().central_difference(sigma.values(), s, u, hstep);
    let mut da = DMatrix::zeros(k + s, k);
    da.view_mut((0, 0), (k, k)).fill_with_identity();
    da.view_mut((k, 0), (s, k)).copy_from(&ds);
    let sv = sigma.eval(u);
    Ok(Subspace::from_spanning(&owner.chart_differential(u, sv.as_slice(), &da)))
}

/// Sup-norm of Γ(s+t, σ) − Γ(s, Γ(t, σ)) over the grid.
pub fn semigroup_residual(sys: &FlowSystem, sigma: &LipGraph, s: f64, t: f64) -> Result<f64, GraphTransformError> {
    let joint = graph_transform(sys, sigma, s + t)?;
    let inner = graph_transform(sys, sigma, t)?;
    let composed = graph_transform(sys, &inner, s)?;
    Ok(joint.sup_distance(&composed))
}

/// Largest angle between finite-difference tangent planes of Γ(t, σ) and the tangent
/// planes of σ pushed forward by dφ^t.
pub fn tangential_consistency(sys: &FlowSystem, sigma: &LipGraph, t: f64) -> Result<f64, GraphTransformError> {
    let out = graph_transform_detailed(sys, sigma, t)?;
    let hstep = sigma.grid().spacing();
    let nodes = out.graph.grid().interior();
    let angles: Vec<Result<f64, GraphTransformError>> = nodes
        .into_par_iter()
        .filter(|&i| sigma.grid().has_stencil(out.preimages[i].as_slice(), hstep))
        .map(|i| {
            let u = out.graph.grid().node(i);
            let left = tangent_space_at(&out.graph, u.as_slice())?;
            let w = &out.preimages[i];
            let base = tangent_space_at(sigma, w.as_slice())?;
            let (_, d) = flow_with_jacobian(sys, &sigma.point(w.as_slice()), t)?;
            let right = Subspace::from_spanning(&(d * base.basis()));
            let pa = principal_angles(&left, &right).map_err(|_| GraphTransformError::BoundaryStencil)?;
            Ok(pa.last().copied().unwrap_or(0.0))
        })
        .collect();
    let mut worst = 0.0f64;
    for a in angles {
        worst = worst.max(a?);
    }
    Ok(worst)
}

/// Pulls `p` back along the flow into the inner half of the local unstable graph domain
/// of its owner; returns the pulled-back point and the elapsed (positive) time.
fn trace_to_local(sys: &FlowSystem, graph: &LipGraph, p: &[f64], index: usize) -> Result<(DVector<f64>, f64), GraphTransformError> {
    let owner = graph.owner().clone();
    let inner = 0.5 * graph.radius();
    let event = move |q: &[f64]| owner.chart_inverse(q).0.amax() - inner;
    if event(p) <= 0.0 {
        return Ok((DVector::from_column_slice(p), 0.0));
    }
    match sys.hit_time(p, event, Crossing::Falling, -sys.settings.t_max_guard)? {
        Some((t, q)) => Ok((q, -t)),
        None => Err(GraphTransformError::UnresolvedOrbit { index }),
    }
}

/// Tangent space of `W^u(x)` at a point of the global unstable manifold, by pushing the
/// local tangent plane forward along the orbit.
pub fn evolved_tangent_space(sys: &FlowSystem, local: &LipGraph, p: &[f64], index: usize) -> Result<Subspace, GraphTransformError> {
    let (q, t) = trace_to_local(sys, local, p, index)?;
    let (u, _) = local.owner().chart_inverse(q.as_slice());
    let base = tangent_space_at(local, u.as_slice())?;
    let (_, d) = flow_with_jacobian(sys, &q, t)?;
    Ok(Subspace::from_spanning(&(d * base.basis())))
}

/// For each `p_h` in `W^u(x)`, the distance from `T_{p_h} W^u(x)` to the tangent space
/// of `W^u(y)` at the limit point: the largest of the first `ind(y)` principal angles.
pub fn serve_check(
    sys: &FlowSystem,
    x: &HyperbolicPoint,
    y: &HyperbolicPoint,
    sequence: &[Vec<f64>],
    settings: &ManifoldSettings,
) -> Result<Vec<f64>, GraphTransformError> {
    let mx = unstable_manifold_local(sys, x, settings)?.graph;
    let my = unstable_manifold_local(sys, y, settings)?.graph;
    let Some(last) = sequence.last() else {
        return Ok(Vec::new());
    };
    let (u_p, _) = y.chart_inverse(last);
    let target = tangent_space_at(&my, u_p.as_slice())?;
    let results: Vec<Result<f64, GraphTransformError>> = sequence
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let v = evolved_tangent_space(sys, &mx, p, i)?;
            let pa = principal_angles(&v, &target).map_err(|_| GraphTransformError::BoundaryStencil)?;
            if pa.is_empty() {
                return Ok(0.0);
            }
            Ok(pa[y.index.clamp(1, pa.len()) - 1])
        })
        .collect();
    results.into_iter().collect()
}
