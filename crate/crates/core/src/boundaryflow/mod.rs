//! The boundary flow θ on `W^u(x) ∖ {x}`: a vector field `Y = Σ χ_i Y_i` assembled from
//! the radial functions of the lower-index stationary points, integrated with leaf
//! re-projection, and its limit map ω_θ onto the boundary of the cell.
//!
//! `W^u(x)` is taken to be open in phase space (the top cell of a surface or plane flow),
//! so points are handled in ambient coordinates and the metric is the Euclidean one.

use std::cell::RefCell;
use std::io::{self, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::examples::{charts::analytic_charts, ReferenceSystem};
use crate::expr::EvalError;
use crate::extreal::ExtReal;
use crate::flow::ode::integrate;
use crate::flow::{FlowError, FlowSystem, Hooks, Termination};
use crate::foliation::{smoothstep, StableFoliationChart};
use crate::linalg::{complement, orthonormal_columns};
use crate::hyperbolic::HyperbolicPoint;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundaryFlowError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("chart {chart} has a degenerate leafwise gradient of ln ρ at {point:?}")]
    DegenerateGradient { chart: String, point: Vec<f64> },
    #[error("point {point:?} is not in any chart domain of class {class}")]
    OutsideChart { class: usize, point: Vec<f64> },
    #[error("chart {chart} has index {index}, not below the target index {target}")]
    ChartIndex { chart: String, index: usize, target: usize },
    #[error("point {point:?} lies outside the closure of V (min ρ = {rho})")]
    NotInClosure { point: Vec<f64>, rho: f64 },
    #[error("no convergence after time {time}: ρ = {rho:e}, base drift {drift:e}")]
    NoConvergence { time: f64, rho: f64, drift: f64 },
    #[error("integration stopped early: {0:?}")]
    Integration(Termination),
}

/// Vector field data on the unstable manifold of a target point `x` of index `k`.
#[derive(Clone)]
pub struct BoundaryFlowAssembly {
    sys: FlowSystem,
    target: HyperbolicPoint,
    /// Charts grouped by index `i < k`.
    classes: Vec<Vec<Arc<dyn StableFoliationChart>>>,
    pub t_on: f64,
    pub t_off: f64,
    /// Upper end of the band `[t_off, t_far]` over which `Y_i` is progressively shielded
    /// from changing `ρ_j`, `j > i`; shielding is off when `t_far ≤ t_off`.
    pub t_far: f64,
}

impl std::fmt::Debug for BoundaryFlowAssembly {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let names: Vec<Vec<String>> = self.classes.iter().map(|c| c.iter().map(|ch| ch.name()).collect()).collect();
        f.debug_struct("BoundaryFlowAssembly").field("target", &self.target.location).field("classes", &names).finish()
    }
}

/// ω_θ(p) with the chart whose unstable manifold contains it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundaryLimit {
    pub point: Vec<f64>,
    pub class: usize,
    pub chart: String,
    /// θ-time at which convergence was declared.
    pub time: f64,
    pub rho: f64,
}

/// `ψ_i` and `χ_i = ψ_i Π_{j>i}(1 − ψ_j)` from the class radial functions.
pub fn partition_weights(rhos: &[ExtReal], t_on: f64, t_off: f64) -> (Vec<f64>, Vec<f64>) {
    let psi: Vec<f64> = rhos
        .iter()
        .map(|r| match r {
            ExtReal::Finite(v) => smoothstep((t_off - v) / (t_off - t_on)),
            ExtReal::NegInf => 1.0,
            ExtReal::PosInf => 0.0,
        })
        .collect();
    let chi = (0..psi.len()).map(|i| psi[i] * psi[i + 1..].iter().map(|p| 1.0 - p).product::<f64>()).collect();
    (psi, chi)
}

const DEGENERATE_GRADIENT: f64 = 1e-10;
const OMEGA_CHUNK: f64 = 1.0;
const OMEGA_GUARD: f64 = 200.0;

impl BoundaryFlowAssembly {
    pub fn new(sys: &FlowSystem, target: &HyperbolicPoint, charts: Vec<Arc<dyn StableFoliationChart>>) -> Result<Self, BoundaryFlowError> {
        let k = target.index;
        let mut classes: Vec<Vec<Arc<dyn StableFoliationChart>>> = vec![Vec::new(); k];
        for chart in charts {
            let i = chart.index();
            if i >= k {
                return Err(BoundaryFlowError::ChartIndex { chart: chart.name(), index: i, target: k });
            }
            classes[i].push(chart);
        }
        Ok(BoundaryFlowAssembly { sys: sys.clone(), target: target.clone(), classes, t_on: 1.0, t_off: 1.5, t_far: 2.0 })
    }

    /// Assembly from the analytic charts registered for a built-in system.
    pub fn analytic(reference: &ReferenceSystem, target: &HyperbolicPoint) -> Result<Self, BoundaryFlowError> {
        Self::new(&reference.system, target, analytic_charts(&reference.name))
    }

    pub fn system(&self) -> &FlowSystem {
        &self.sys
    }

    pub fn target(&self) -> &HyperbolicPoint {
        &self.target
    }

    pub fn classes(&self) -> usize {
        self.classes.len()
    }

    pub fn charts(&self, class: usize) -> &[Arc<dyn StableFoliationChart>] {
        &self.classes[class]
    }

    /// `ρ_i(p)`: the minimum over the charts of class `i`, with the minimizing chart.
    pub fn class_rho(&self, class: usize, p: &[f64]) -> (ExtReal, Option<usize>) {
        let mut best = (ExtReal::PosInf, None);
        for (j, chart) in self.classes[class].iter().enumerate() {
            let r = chart.rho(p);
            if r < best.0 {
                best = (r, Some(j));
            }
        }
        best
    }

    pub fn rhos(&self, p: &[f64]) -> Vec<ExtReal> {
        (0..self.classes.len()).map(|i| self.class_rho(i, p).0).collect()
    }

    /// `min_i ρ_i(p)` with its class; `V = {min ρ < 1}`.
    pub fn min_rho(&self, p: &[f64]) -> (ExtReal, Option<usize>) {
        self.rhos(p).into_iter().enumerate().fold((ExtReal::PosInf, None), |acc, (i, r)| if r < acc.0 { (r, Some(i)) } else { acc })
    }

    pub fn in_v(&self, p: &[f64]) -> bool {
        self.min_rho(p).0 < ExtReal::Finite(1.0)
    }

    /// χ weights at `p`.
    pub fn chi_partition(&self, p: &[f64]) -> Vec<f64> {
        partition_weights(&self.rhos(p), self.t_on, self.t_off).1
    }

    fn chart_at(&self, class: usize, p: &[f64]) -> Result<&Arc<dyn StableFoliationChart>, BoundaryFlowError> {
        match self.class_rho(class, p) {
            (_, Some(j)) => Ok(&self.classes[class][j]),
            _ => Err(BoundaryFlowError::OutsideChart { class, point: p.to_vec() }),
        }
    }

    /// Leafwise gradient of `ln ρ` for one chart, analytic when available, otherwise by
    /// central differences along the leaf tangent.
    fn log_rho_gradient(&self, chart: &dyn StableFoliationChart, p: &[f64]) -> DVector<f64> {
        if let Some(g) = chart.log_rho_leaf_gradient(p) {
            return g;
        }
        let basis = chart.leaf_tangent(p);
        let x = DVector::from_column_slice(p);
        let h = 1e-6 * x.norm().max(1.0);
        let lr = |y: DVector<f64>| chart.rho(chart.project_to_leaf(y.as_slice(), p).as_slice()).to_f64().ln();
        let mut g = DVector::zeros(p.len());
        let here = lr(x.clone());
        for c in basis.column_iter() {
            let e = c.into_owned();
            let (fp, fm) = (lr(&x + &e * h), lr(&x - &e * h));
            let d = match (fp.is_finite(), fm.is_finite()) {
                (true, true) => (fp - fm) / (2.0 * h),
                (true, false) => (fp - here) / h,
                (false, true) => (here - fm) / h,
                _ => 0.0,
            };
            g += e * d;
        }
        g
    }

    /// `Y_i(p)`: a leafwise field with `dρ_i[Y_i] = −ρ_i`.
    ///
    /// Away from higher classes it is the leafwise gradient direction. Where some `ρ_j`,
    /// `j > i`, is below `t_far`, the metric is tilted so that `Y_i` also keeps `ρ_j`
    /// constant (exactly once `ρ_j ≤ t_off`). Otherwise `Y_i` could push orbits back out of
    /// the cutoff band of class `j`, creating a repelling ridge that makes ω_θ numerically
    /// discontinuous.
    pub fn y_field(&self, class: usize, p: &[f64]) -> Result<DVector<f64>, BoundaryFlowError> {
        let chart = self.chart_at(class, p)?;
        let mut g = self.log_rho_gradient(chart.as_ref(), p);
        let surface = self.sys.tangent_basis(p).ok().filter(|b| b.ncols() < p.len());
        if let Some(basis) = &surface {
            g = basis * (basis.transpose() * g);
        }
        let n2 = g.norm_squared();
        if !(n2.sqrt() >= DEGENERATE_GRADIENT) {
            return Err(BoundaryFlowError::DegenerateGradient { chart: chart.name(), point: p.to_vec() });
        }
        Ok(self.shielded(class, p, &g, chart.as_ref(), surface.as_ref()).unwrap_or(-g / n2))
    }

    fn shielded(
        &self,
        class: usize,
        p: &[f64],
        g: &DVector<f64>,
        chart: &dyn StableFoliationChart,
        surface: Option<&DMatrix<f64>>,
    ) -> Option<DVector<f64>> {
        if self.t_far <= self.t_off {
            return None;
        }
        let weights: Vec<(usize, f64)> = (class + 1..self.classes.len())
            .filter_map(|j| match self.class_rho(j, p).0 {
                ExtReal::Finite(r) => Some((j, smoothstep((self.t_far - r) / (self.t_far - self.t_off)))),
                _ => None,
            })
            .filter(|&(_, w)| w > 0.0)
            .collect();
        if weights.is_empty() {
            return None;
        }
        let mut leaf = chart.leaf_tangent(p);
        if let Some(b) = surface {
            leaf = b * (b.transpose() * leaf);
        }
        let basis = orthonormal_columns(&leaf, 1e-8);
        let c = basis.transpose() * g;
        let m = basis.ncols();
        let x = DVector::from_column_slice(p);
        let h = 1e-7 * x.norm().max(1.0);
        let mut hard = Vec::new();
        let mut soft = Vec::new();
        for (j, w) in weights {
            let lr = |y: DVector<f64>| self.class_rho(j, y.as_slice()).0.to_f64().ln();
            let grad: Option<Vec<f64>> = basis
                .column_iter()
                .map(|e| {
                    let d = (lr(&x + e * h) - lr(&x - e * h)) / (2.0 * h);
                    d.is_finite().then_some(d)
                })
                .collect();
            let Some(grad) = grad else { continue };
            let grad = DVector::from_vec(grad);
            if w >= 1.0 - 1e-12 {
                hard.push(grad);
            } else {
                soft.push((grad, w / (1.0 - w)));
            }
        }
        let null = if hard.is_empty() {
            DMatrix::identity(m, m)
        } else {
            let span = orthonormal_columns(&DMatrix::from_columns(&hard), 1e-10);
            complement(&span)
        };
        if null.ncols() == 0 {
            return None;
        }
        let cn = null.transpose() * &c;
        if cn.norm() < 1e-8 * c.norm() {
            return None;
        }
        let mut a = DMatrix::identity(null.ncols(), null.ncols());
        for (grad, lambda) in &soft {
            let v = null.transpose() * grad;
            a += &v * v.transpose() * *lambda;
        }
        let ainv_c = a.lu().solve(&cn)?;
        let denom = cn.dot(&ainv_c);
        (denom > 0.0).then(|| basis * (null * (-ainv_c / denom)))
    }

    /// `Y = Σ χ_i Y_i`.
    pub fn boundary_field(&self, p: &[f64]) -> Result<DVector<f64>, BoundaryFlowError> {
        let chi = self.chi_partition(p);
        let mut y = DVector::zeros(p.len());
        for (i, w) in chi.iter().enumerate() {
            if *w > 0.0 {
                y += self.y_field(i, p)? * *w;
            }
        }
        Ok(y)
    }

    /// Smallest active class at `p`: its leaves contain those of every higher active class,
    /// so the θ-orbit stays in its leaf.
    pub fn leaf_class(&self, p: &[f64]) -> Option<usize> {
        self.chi_partition(p).iter().position(|w| *w > 0.0)
    }

    /// The whole θ-trajectory for time `t` of either sign.
    pub fn theta_trajectory(&self, p: &[f64], t: f64, record: bool) -> Result<crate::flow::Trajectory, BoundaryFlowError> {
        let sign = if t < 0.0 { -1.0 } else { 1.0 };
        let failure: RefCell<Option<BoundaryFlowError>> = RefCell::new(None);
        let rhs = |y: &[f64], out: &mut [f64]| -> Result<(), EvalError> {
            match self.boundary_field(y) {
                Ok(v) => {
                    out.iter_mut().zip(v.iter()).for_each(|(o, vi)| *o = sign * vi);
                    Ok(())
                }
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    Err(EvalError::Domain { op: "boundary field", value: f64::NAN })
                }
            }
        };
        let mut hooks = LeafLock { asm: self, prev: p.to_vec() };
        let traj = integrate(rhs, p, t.abs(), &self.sys.settings, &mut hooks, record);
        if let Some(e) = failure.into_inner() {
            if traj.is_err() || traj.as_ref().is_ok_and(|tr| tr.termination != Termination::ReachedT) {
                return Err(e);
            }
        }
        let mut traj = traj.map_err(FlowError::from)?;
        if traj.termination != Termination::ReachedT {
            return Err(BoundaryFlowError::Integration(traj.termination));
        }
        if t < 0.0 {
            traj.times.iter_mut().for_each(|s| *s = -*s);
        }
        Ok(traj)
    }

    /// `θ^t(p)`.
    pub fn theta_flow(&self, p: &[f64], t: f64) -> Result<DVector<f64>, BoundaryFlowError> {
        Ok(DVector::from_column_slice(self.theta_trajectory(p, t, false)?.last()))
    }

    /// ω_θ(p) for `p ∈ cl(V)`: the base of the leaf the θ-orbit converges into.
    pub fn omega_theta(&self, p: &[f64], tol: f64) -> Result<BoundaryLimit, BoundaryFlowError> {
        let (r0, _) = self.min_rho(p);
        if r0 > ExtReal::Finite(1.0 + 1e-9) {
            return Err(BoundaryFlowError::NotInClosure { point: p.to_vec(), rho: r0.to_f64() });
        }
        let mut state = DVector::from_column_slice(p);
        let mut time = 0.0;
        let mut prev_base: Option<DVector<f64>> = None;
        let mut drift = f64::INFINITY;
        let mut rho = r0.to_f64();
        while time < OMEGA_GUARD {
            state = self.theta_flow(state.as_slice(), OMEGA_CHUNK)?;
            time += OMEGA_CHUNK;
            let (r, class) = self.min_rho(state.as_slice());
            let class = class.ok_or_else(|| BoundaryFlowError::OutsideChart { class: 0, point: state.as_slice().to_vec() })?;
            let chart = self.chart_at(class, state.as_slice())?;
            let base = chart
                .leaf_projection(state.as_slice())
                .ok_or_else(|| BoundaryFlowError::OutsideChart { class, point: state.as_slice().to_vec() })?;
            rho = r.to_f64();
            if let Some(pb) = &prev_base {
                drift = (&base - pb).norm() / OMEGA_CHUNK;
            }
            // ρ can saturate in double precision (square4 needs 1 − x ~ ρ⁴), so closeness
            // to the leaf base also counts as convergence.
            let gap = (&base - &state).norm();
            if (rho < tol || gap < tol) && drift < tol / 10.0 {
                return Ok(BoundaryLimit { point: base.as_slice().to_vec(), class, chart: chart.name(), time, rho });
            }
            prev_base = Some(base);
        }
        Err(BoundaryFlowError::NoConvergence { time, rho, drift })
    }
}

/// Re-projects each accepted state onto the stable leaf, of the smallest active class,
/// through the previous state.
struct LeafLock<'a> {
    asm: &'a BoundaryFlowAssembly,
    prev: Vec<f64>,
}

impl Hooks for LeafLock<'_> {
    fn project(&mut self, y: &mut [f64]) {
        if let Some(class) = self.asm.leaf_class(&self.prev) {
            if let Ok(chart) = self.asm.chart_at(class, &self.prev) {
                let q = chart.project_to_leaf(y, &self.prev);
                y.copy_from_slice(q.as_slice());
            }
        }
        self.asm.sys.project(y);
        self.prev.copy_from_slice(y);
    }
}

/// Writes `seed, limit point, class, chart` rows.
pub fn write_limits_csv<W: Write>(mut out: W, rows: &[(Vec<f64>, BoundaryLimit)]) -> io::Result<()> {
    let Some((seed, limit)) = rows.first() else {
        return Ok(());
    };
    let mut header: Vec<String> = (0..seed.len()).map(|i| format!("seed{i}")).collect();
    header.extend((0..limit.point.len()).map(|i| format!("limit{i}")));
    header.extend(["class".to_string(), "chart".to_string()]);
    writeln!(out, "{}", header.join(","))?;
    for (seed, limit) in rows {
        let nums: Vec<String> = seed.iter().chain(&limit.point).map(|v| format!("{v:.12e}")).collect();
        writeln!(out, "{},{},\"{}\"", nums.join(","), limit.class, limit.chart)?;
    }
    Ok(())
}
