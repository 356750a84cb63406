//! Stable foliations near hyperbolic points: the product structure `[p, q]`, the time
//! functions τ^u and τ^s, sphere leaves, the radial function ρ and leaf continuation by
//! the graph transform.

mod cubic;
mod extend;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::extreal::ExtReal;
use crate::flow::{Crossing, FlowError, FlowSystem};
use crate::graphtransform::GraphTransformError;
use crate::hyperbolic::{sphere_directions, HyperbolicPoint};

pub use cubic::{cubic_leaf, cubic_leaf_offset, cubic_unit_field, integrate_cubic_field};
pub use extend::{extend_foliation_over_unstable, LeafFamily};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FoliationError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Transform(#[from] GraphTransformError),
    #[error("leaf iteration did not contract: residual {residual:e} after {iterations} iterations")]
    NoContraction { residual: f64, iterations: usize },
    #[error("orbit did not cross the disk boundary within the time guard")]
    GuardExceeded,
    #[error("(p, a) lies outside Λ: τ^u(p) = {tau_u} is not below a = {a}")]
    OutsideLambda { tau_u: ExtReal, a: f64 },
    #[error("point lies outside the chart domain")]
    OutsideDomain,
    #[error("boundary leaf {index} has Lipschitz estimate {lipschitz} above 1/2")]
    SteepLeaf { index: usize, lipschitz: f64 },
    #[error("no boundary leaves supplied")]
    NoBoundaryLeaves,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Analytic,
    Constructed,
}

/// Tubular-neighbourhood data of one stationary point `y` of index `i`: the stable
/// foliation with its leaf projection `π^u`, the time functions and the radial function.
///
/// All maps are in ambient coordinates. Points outside the domain `U_y` have `ρ = +∞`.
pub trait StableFoliationChart: Send + Sync {
    fn name(&self) -> String;
    /// Location of `y`.
    fn owner(&self) -> &DVector<f64>;
    fn index(&self) -> usize;
    /// Dimension of the phase space.
    fn phase_dim(&self) -> usize;
    fn leaf_dim(&self) -> usize {
        self.phase_dim() - self.index()
    }
    fn provenance(&self) -> Provenance;
    /// Membership in `U_y`.
    fn contains(&self, p: &[f64]) -> bool;
    /// `π^u(p) ∈ W^u(y)`, the base of the stable leaf through `p`.
    fn leaf_projection(&self, p: &[f64]) -> Option<DVector<f64>>;
    /// τ^u of the leaf base `π^u(p)`.
    fn tau_u(&self, p: &[f64]) -> Option<ExtReal>;
    /// The sphere parameter `a(p)`: τ^s of the stable-manifold coordinate of `p`.
    fn sphere_parameter(&self, p: &[f64]) -> Option<ExtReal>;
    /// `ρ(p) = exp(−a + bump(a − τ^u))`, `+∞` off the domain.
    fn rho(&self, p: &[f64]) -> ExtReal {
        if !self.contains(p) {
            return ExtReal::PosInf;
        }
        match (self.sphere_parameter(p), self.tau_u(p)) {
            (Some(a), Some(u)) => radial_function(a, u, default_bump),
            _ => ExtReal::PosInf,
        }
    }
    /// Orthonormal basis (columns) of the tangent space of the stable leaf through `p`.
    fn leaf_tangent(&self, p: &[f64]) -> DMatrix<f64>;
    /// Nearest point to `p` on the stable leaf through `leaf_of`.
    fn project_to_leaf(&self, p: &[f64], leaf_of: &[f64]) -> DVector<f64>;
    /// Leafwise gradient of `ln ρ` when known in closed form.
    fn log_rho_leaf_gradient(&self, _p: &[f64]) -> Option<DVector<f64>> {
        None
    }
    /// Samples of the sphere leaf `S(p, a) = {[p, q] : τ^s(q) = a}` for `p ∈ W^u(y)`.
    fn sphere_leaf(&self, p: &[f64], a: f64, n_samples: usize) -> Result<Vec<DVector<f64>>, FoliationError>;
}

/// Default bump `((1 − s)⁺)³ / s`: diverges at `0⁺`, vanishes for `s ≥ 1`.
pub fn default_bump(s: f64) -> f64 {
    if s >= 1.0 {
        0.0
    } else {
        (1.0 - s).powi(3) / s
    }
}

/// Derivative of [`default_bump`] for `s > 0`.
pub fn default_bump_derivative(s: f64) -> f64 {
    if s >= 1.0 {
        0.0
    } else {
        -(1.0 - s).powi(2) * (1.0 + 2.0 * s) / (s * s)
    }
}

/// Quintic smoothstep `6s⁵ − 15s⁴ + 10s³` clamped to `[0, 1]`.
pub fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

/// `exp(−τ^s + bump(τ^s − τ^u))`, with `+∞` where `τ^s ≤ τ^u`.
pub fn radial_function<B: Fn(f64) -> f64>(tau_s: ExtReal, tau_u: ExtReal, bump: B) -> ExtReal {
    let s = match tau_s {
        ExtReal::PosInf => return ExtReal::Finite(0.0),
        ExtReal::NegInf => return ExtReal::PosInf,
        ExtReal::Finite(s) => s,
    };
    let exponent = match tau_u {
        ExtReal::NegInf => -s,
        ExtReal::PosInf => return ExtReal::PosInf,
        ExtReal::Finite(u) => {
            let d = s - u;
            if d <= 0.0 {
                return ExtReal::PosInf;
            }
            -s + bump(d)
        }
    };
    let v = exponent.exp();
    if v.is_finite() {
        ExtReal::Finite(v)
    } else {
        ExtReal::PosInf
    }
}

/// Membership in `V(r) = {τ^u(p) < τ^s(q) + ln r}` for `r ∈ (0, 1]`.
pub fn in_invariant_neighborhood(tau_u: ExtReal, tau_s: ExtReal, r: f64) -> bool {
    let lr = r.ln();
    match (tau_u, tau_s) {
        (ExtReal::PosInf, _) | (_, ExtReal::NegInf) => false,
        (ExtReal::NegInf, _) | (_, ExtReal::PosInf) => true,
        (ExtReal::Finite(u), ExtReal::Finite(s)) => u < s + lr,
    }
}

/// The predicate of `V(r)` for a chart.
pub fn invariant_neighborhood(chart: &dyn StableFoliationChart, r: f64) -> impl Fn(&[f64]) -> bool + '_ {
    move |p: &[f64]| {
        if !chart.contains(p) {
            return false;
        }
        match (chart.tau_u(p), chart.sphere_parameter(p)) {
            (Some(u), Some(s)) => in_invariant_neighborhood(u, s, r),
            _ => false,
        }
    }
}

/// Signed time at which the orbit of `p` crosses `{norm(p) = r}` and the corresponding
/// time-function value `−t_hit`.
fn crossing_time<N>(sys: &FlowSystem, p: &[f64], norm: N, r: f64, forward: bool) -> Result<ExtReal, FoliationError>
where
    N: Fn(&[f64]) -> f64,
{
    let g0 = norm(p) - r;
    if g0 == 0.0 {
        return Ok(ExtReal::Finite(0.0));
    }
    let horizon = if forward { sys.settings.t_max_guard } else { -sys.settings.t_max_guard };
    match sys.hit_time(p, |y| norm(y) - r, Crossing::Either, horizon)? {
        Some((t, _)) => Ok(ExtReal::Finite(-t)),
        None => Err(FoliationError::GuardExceeded),
    }
}

/// τ^u of a point of `W^u(x)`: zero on `∂D^u(r)`, additive under the flow, `−∞` at `x`.
pub fn tau_u(sys: &FlowSystem, h: &HyperbolicPoint, p: &[f64], r: f64) -> Result<ExtReal, FoliationError> {
    let norm = |y: &[f64]| h.chart_inverse(y).0.norm();
    let n0 = norm(p);
    if n0 == 0.0 {
        return Ok(ExtReal::NegInf);
    }
    crossing_time(sys, p, norm, r, n0 < r)
}

/// τ^s of a point of `W^s(x)`: zero on `∂D^s(r)`, additive under the flow, `+∞` at `x`.
pub fn tau_s(sys: &FlowSystem, h: &HyperbolicPoint, q: &[f64], r: f64) -> Result<ExtReal, FoliationError> {
    let norm = |y: &[f64]| h.chart_inverse(y).1.norm();
    let n0 = norm(q);
    if n0 == 0.0 {
        return Ok(ExtReal::PosInf);
    }
    crossing_time(sys, q, norm, r, n0 > r)
}

/// A graph family `(base, argument) -> value` in adapted coordinates.
pub type LeafMap = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Local product structure at a hyperbolic point in adapted coordinates.
///
/// `unstable(q, u)` is the unstable leaf through `q ∈ D^s(r)` as a graph over `D^u(r)`;
/// `stable(p, s)` is the stable leaf through `p ∈ D^u(r)` as a graph over `D^s(r)`. Both
/// are ½-Lipschitz in their argument and pass through their base at argument zero.
#[derive(Clone)]
pub struct ProductStructure {
    owner: HyperbolicPoint,
    radius: f64,
    unstable: LeafMap,
    stable: LeafMap,
}

impl std::fmt::Debug for ProductStructure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProductStructure").field("owner", &self.owner.location).field("radius", &self.radius).finish()
    }
}

/// The point `[p, q]` with the fixed-point iteration trace.
#[derive(Clone, Debug, PartialEq)]
pub struct LeafIntersection {
    pub u: DVector<f64>,
    pub s: DVector<f64>,
    pub point: DVector<f64>,
    /// `|u_{j+1} − u_j|` per iteration.
    pub residuals: Vec<f64>,
}

const LEAF_TOL: f64 = 1e-10;
const LEAF_MAX_ITER: usize = 200;

impl ProductStructure {
    pub fn new(owner: &HyperbolicPoint, radius: f64, unstable: LeafMap, stable: LeafMap) -> Self {
        ProductStructure { owner: owner.clone(), radius, unstable, stable }
    }

    /// Leaves parallel to the adapted coordinate planes.
    pub fn flat(owner: &HyperbolicPoint, radius: f64) -> Self {
        Self::new(owner, radius, Arc::new(|q, _| q.clone()), Arc::new(|p, _| p.clone()))
    }

    pub fn owner(&self) -> &HyperbolicPoint {
        &self.owner
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn unstable_leaf(&self, q: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (self.unstable)(q, u)
    }

    pub fn stable_leaf(&self, p: &DVector<f64>, s: &DVector<f64>) -> DVector<f64> {
        (self.stable)(p, s)
    }

    /// `[p, q]`: the intersection of the stable leaf based at `p` with the unstable leaf
    /// based at `q`, by iterating `u ← σ^s_p(σ^u_q(u))`.
    pub fn leaf_intersection(&self, p: &[f64], q: &[f64]) -> Result<LeafIntersection, FoliationError> {
        let p = DVector::from_column_slice(p);
        let q = DVector::from_column_slice(q);
        let mut u = p.clone();
        let mut residuals = Vec::new();
        loop {
            let s = self.unstable_leaf(&q, &u);
            let next = self.stable_leaf(&p, &s);
            let res = (&next - &u).norm();
            residuals.push(res);
            u = next;
            if res < LEAF_TOL {
                let s = self.unstable_leaf(&q, &u);
                let point = self.owner.chart(u.as_slice(), s.as_slice());
                return Ok(LeafIntersection { u, s, point, residuals });
            }
            if residuals.len() >= LEAF_MAX_ITER || !res.is_finite() {
                return Err(FoliationError::NoContraction { residual: res, iterations: residuals.len() });
            }
        }
    }

    /// Inverse of `[·,·]`: the bases `(p, q)` of the leaves through a point with adapted
    /// coordinates `(a_u, a_s)`, by alternating projection along the leaves.
    pub fn decompose(&self, a_u: &[f64], a_s: &[f64]) -> Result<(DVector<f64>, DVector<f64>), FoliationError> {
        let au = DVector::from_column_slice(a_u);
        let as_ = DVector::from_column_slice(a_s);
        let mut p = au.clone();
        let mut q = as_.clone();
        for it in 0..LEAF_MAX_ITER {
            let dp = &au - self.stable_leaf(&p, &as_);
            let dq = &as_ - self.unstable_leaf(&q, &au);
            p += &dp;
            q += &dq;
            let res = dp.norm().max(dq.norm());
            if res < LEAF_TOL {
                return Ok((p, q));
            }
            if !res.is_finite() {
                return Err(FoliationError::NoContraction { residual: res, iterations: it + 1 });
            }
        }
        Err(FoliationError::NoContraction { residual: f64::NAN, iterations: LEAF_MAX_ITER })
    }
}

/// Samples `S(p, a) = {[p, q] : τ^s(q) = a}` by flowing points of `∂D^s(r)` for time `a`.
pub fn sphere_leaf(sys: &FlowSystem, ps: &ProductStructure, p: &[f64], a: f64, n_samples: usize) -> Result<Vec<DVector<f64>>, FoliationError> {
    let h = ps.owner();
    let r = ps.radius();
    let zero_s = vec![0.0; h.stable_dim()];
    let base = ps.leaf_intersection(p, &zero_s)?.point;
    let tu = tau_u(sys, h, base.as_slice(), r)?;
    if tu >= ExtReal::Finite(a) {
        return Err(FoliationError::OutsideLambda { tau_u: tu, a });
    }
    let k = h.stable_dim();
    let extra = n_samples.saturating_sub(2 * k);
    let zero_u = vec![0.0; h.index];
    let mut out = Vec::new();
    for dir in sphere_directions(k, extra).into_iter().take(n_samples.max(2)) {
        let q0: Vec<f64> = dir.iter().map(|c| c * r).collect();
        let y0 = ps.leaf_intersection(&zero_u, &q0)?.point;
        let y = if a == 0.0 { y0 } else { sys.flow_map(y0.as_slice(), a)? };
        let (_, q) = h.chart_inverse(y.as_slice());
        out.push(ps.leaf_intersection(p, q.as_slice())?.point);
    }
    Ok(out)
}

/// A chart assembled from a numerical product structure; time functions are evaluated by
/// event location along orbits.
#[derive(Clone, Debug)]
pub struct ProductChart {
    sys: FlowSystem,
    ps: ProductStructure,
}

impl ProductChart {
    pub fn new(sys: &FlowSystem, ps: ProductStructure) -> Self {
        ProductChart { sys: sys.clone(), ps }
    }

    pub fn structure(&self) -> &ProductStructure {
        &self.ps
    }

    fn bases(&self, p: &[f64]) -> Option<(DVector<f64>, DVector<f64>)> {
        let h = self.ps.owner();
        let (au, as_) = h.chart_inverse(p);
        let (pb, qb) = self.ps.decompose(au.as_slice(), as_.as_slice()).ok()?;
        let r = self.ps.radius() * (1.0 + 1e-12);
        (pb.norm() <= r && qb.norm() <= r).then_some((pb, qb))
    }

    fn point(&self, p: &DVector<f64>, q: &DVector<f64>) -> Option<DVector<f64>> {
        self.ps.leaf_intersection(p.as_slice(), q.as_slice()).ok().map(|li| li.point)
    }
}

impl StableFoliationChart for ProductChart {
    fn name(&self) -> String {
        format!("product{:?}", self.ps.owner().location.as_slice())
    }

    fn owner(&self) -> &DVector<f64> {
        &self.ps.owner().location
    }

    fn index(&self) -> usize {
        self.ps.owner().index
    }

    fn phase_dim(&self) -> usize {
        self.ps.owner().dim()
    }

    fn provenance(&self) -> Provenance {
        Provenance::Constructed
    }

    fn contains(&self, p: &[f64]) -> bool {
        self.bases(p).is_some()
    }

    fn leaf_projection(&self, p: &[f64]) -> Option<DVector<f64>> {
        let (pb, _) = self.bases(p)?;
        self.point(&pb, &DVector::zeros(self.ps.owner().stable_dim()))
    }

    fn tau_u(&self, p: &[f64]) -> Option<ExtReal> {
        let base = self.leaf_projection(p)?;
        tau_u(&self.sys, self.ps.owner(), base.as_slice(), self.ps.radius()).ok()
    }

    fn sphere_parameter(&self, p: &[f64]) -> Option<ExtReal> {
        let (_, qb) = self.bases(p)?;
        let on_ws = self.point(&DVector::zeros(self.ps.owner().index), &qb)?;
        tau_s(&self.sys, self.ps.owner(), on_ws.as_slice(), self.ps.radius()).ok()
    }

    fn leaf_tangent(&self, p: &[f64]) -> DMatrix<f64> {
        let h = self.ps.owner();
        let (au, as_) = h.chart_inverse(p);
        let pb = self.bases(p).map(|b| b.0).unwrap_or(au);
        let k = h.stable_dim();
        let eps = 1e-6;
        let mut cols = DMatrix::zeros(h.ambient_dim(), k);
        for j in 0..k {
            let mut sp = as_.clone();
            let mut sm = as_.clone();
            sp[j] += eps;
            sm[j] -= eps;
            let xp = h.chart(self.ps.stable_leaf(&pb, &sp).as_slice(), sp.as_slice());
            let xm = h.chart(self.ps.stable_leaf(&pb, &sm).as_slice(), sm.as_slice());
            cols.set_column(j, &((xp - xm) / (2.0 * eps)));
        }
        crate::linalg::orthonormal_columns(&cols, 1e-12)
    }

    fn project_to_leaf(&self, p: &[f64], leaf_of: &[f64]) -> DVector<f64> {
        let h = self.ps.owner();
        let Some((pb, _)) = self.bases(leaf_of) else {
            return DVector::from_column_slice(p);
        };
        let (_, as_) = h.chart_inverse(p);
        h.chart(self.ps.stable_leaf(&pb, &as_).as_slice(), as_.as_slice())
    }

    fn sphere_leaf(&self, p: &[f64], a: f64, n_samples: usize) -> Result<Vec<DVector<f64>>, FoliationError> {
        let (au, _) = self.ps.owner().chart_inverse(p);
        sphere_leaf(&self.sys, &self.ps, au.as_slice(), a, n_samples)
    }
}
