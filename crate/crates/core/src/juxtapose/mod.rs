//! Local flows with entrance times into an open set `V`, and the juxtaposition
//! `ψ = φ #_V θ` that follows φ outside `V` and θ inside it.

use std::sync::Arc;

use nalgebra::DVector;
use thiserror::Error;

use crate::boundaryflow::{BoundaryFlowAssembly, BoundaryFlowError};
use crate::extreal::ExtReal;
use crate::flow::{Crossing, FlowError, FlowSystem};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum JuxtaposeError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Boundary(#[from] BoundaryFlowError),
    #[error("time {t} is outside the domain of the flow at {point:?}")]
    OutOfDomain { t: f64, point: Vec<f64> },
    #[error("{point:?} flows out of the region after time {t}: not strictly positively invariant")]
    NotInvariant { point: Vec<f64>, t: f64 },
}

pub type Evaluator = Arc<dyn Fn(f64, &[f64]) -> Result<DVector<f64>, JuxtaposeError> + Send + Sync>;
pub type TimeDomain = Arc<dyn Fn(f64, &[f64]) -> bool + Send + Sync>;
/// First time, within a signed horizon, at which the orbit of `x` changes membership.
pub type EntranceFinder = Arc<dyn Fn(&[f64], &Region, f64) -> Result<Option<f64>, JuxtaposeError> + Send + Sync>;

/// Width of the band around `{margin = 0}` treated as the boundary.
pub const BOUNDARY_BAND: f64 = 1e-9;

/// An open set given by a continuous signed margin: inside iff `margin < 0`.
#[derive(Clone)]
pub struct Region {
    margin: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Region")
    }
}

impl Region {
    pub fn new<F: Fn(&[f64]) -> f64 + Send + Sync + 'static>(margin: F) -> Self {
        Region { margin: Arc::new(margin) }
    }

    /// `V = {min_i ρ_i < 1}` of a boundary-flow assembly, with margin `min ρ − 1` capped
    /// at 10 so it stays finite off the charts.
    pub fn from_assembly(asm: &BoundaryFlowAssembly) -> Self {
        let asm = asm.clone();
        Region::new(move |x| (asm.min_rho(x).0.to_f64() - 1.0).min(10.0))
    }

    pub fn margin(&self, x: &[f64]) -> f64 {
        (self.margin)(x)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.margin(x) < 0.0
    }

    pub fn on_boundary(&self, x: &[f64]) -> bool {
        self.margin(x).abs() <= BOUNDARY_BAND
    }

    /// Membership in the closure, up to the boundary band.
    pub fn closure_contains(&self, x: &[f64]) -> bool {
        self.margin(x) <= BOUNDARY_BAND
    }
}

/// A local flow `(t, x) ↦ flow^t(x)` with its time domain.
#[derive(Clone)]
pub struct LocalFlow {
    pub dim: usize,
    evaluator: Evaluator,
    domain: TimeDomain,
    entrance: Option<EntranceFinder>,
    pub positively_complete: bool,
    pub negatively_complete: bool,
    /// Step of the generic entrance-time scan.
    pub scan_step: f64,
}

impl std::fmt::Debug for LocalFlow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LocalFlow")
            .field("dim", &self.dim)
            .field("positively_complete", &self.positively_complete)
            .field("negatively_complete", &self.negatively_complete)
            .finish()
    }
}

impl LocalFlow {
    pub fn new<E, D>(dim: usize, evaluator: E, domain: D) -> Self
    where
        E: Fn(f64, &[f64]) -> Result<DVector<f64>, JuxtaposeError> + Send + Sync + 'static,
        D: Fn(f64, &[f64]) -> bool + Send + Sync + 'static,
    {
        LocalFlow {
            dim,
            evaluator: Arc::new(evaluator),
            domain: Arc::new(domain),
            entrance: None,
            positively_complete: false,
            negatively_complete: false,
            scan_step: 0.1,
        }
    }

    /// A global flow defined for all times.
    pub fn complete<E>(dim: usize, evaluator: E) -> Self
    where
        E: Fn(f64, &[f64]) -> Result<DVector<f64>, JuxtaposeError> + Send + Sync + 'static,
    {
        let mut f = Self::new(dim, evaluator, |_, _| true);
        f.positively_complete = true;
        f.negatively_complete = true;
        f
    }

    /// The flow of a vector field, with event location for entrance times.
    pub fn from_system(sys: &FlowSystem) -> Self {
        let s = sys.clone();
        let mut f = Self::complete(sys.dim(), move |t, x| Ok(s.flow_map(x, t)?));
        let s = sys.clone();
        f.entrance = Some(Arc::new(move |x, region, horizon| {
            let hit = s.hit_time(x, |y| region.margin(y), Crossing::Either, horizon)?;
            Ok(hit.map(|(t, _)| t))
        }));
        f
    }

    /// The boundary flow θ of an assembly.
    pub fn from_boundary_flow(asm: &BoundaryFlowAssembly) -> Self {
        let a = asm.clone();
        let mut f = Self::complete(asm.system().dim(), move |t, x| Ok(a.theta_flow(x, t)?));
        f.scan_step = 0.25;
        f
    }

    pub fn with_entrance_finder(mut self, finder: EntranceFinder) -> Self {
        self.entrance = Some(finder);
        self
    }

    pub fn in_domain(&self, t: f64, x: &[f64]) -> bool {
        (self.domain)(t, x)
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> Result<DVector<f64>, JuxtaposeError> {
        if t == 0.0 {
            return Ok(DVector::from_column_slice(x));
        }
        if !self.in_domain(t, x) {
            return Err(JuxtaposeError::OutOfDomain { t, point: x.to_vec() });
        }
        (self.evaluator)(t, x)
    }
}

/// Bisection on `[0, h]` (signed `h`) for the change of membership along `flow^s(y)`.
fn bisect_crossing(flow: &LocalFlow, region: &Region, y: &[f64], h: f64) -> Result<f64, JuxtaposeError> {
    let inside0 = region.contains(y);
    let (mut lo, mut hi) = (0.0f64, h);
    for _ in 0..200 {
        if (hi - lo).abs() < 1e-13 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if region.contains(flow.eval(mid, y)?.as_slice()) == inside0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Generic scan in steps of `flow.scan_step` along the orbit, in the direction of `horizon`,
/// for the first change of membership; then bisection inside the bracketing step.
fn scan_crossing(flow: &LocalFlow, region: &Region, x: &[f64], horizon: f64) -> Result<Option<f64>, JuxtaposeError> {
    let dir = horizon.signum();
    let inside0 = region.contains(x);
    let mut y = DVector::from_column_slice(x);
    let mut t = 0.0f64;
    while t.abs() < horizon.abs() {
        let h = dir * flow.scan_step.min(horizon.abs() - t.abs());
        let next = flow.eval(h, y.as_slice())?;
        if region.contains(next.as_slice()) != inside0 {
            return Ok(Some(t + bisect_crossing(flow, region, y.as_slice(), h)?));
        }
        y = next;
        t += h;
    }
    Ok(None)
}

/// The entrance time `inf{t : flow^t(x) ∈ V}` of a strictly positively invariant `V`.
///
/// Zero on `∂V`; negative inside `V` (the backward exit time), `−∞` when the backward orbit
/// stays in `V` beyond the horizon; `+∞` when the forward orbit never enters within it.
pub fn entrance_time(flow: &LocalFlow, region: &Region, x: &[f64], horizon: f64) -> Result<ExtReal, JuxtaposeError> {
    if region.on_boundary(x) {
        return Ok(ExtReal::Finite(0.0));
    }
    let inside = region.contains(x);
    let signed = if inside { -horizon.abs() } else { horizon.abs() };
    let found = match &flow.entrance {
        Some(finder) => finder(x, region, signed)?,
        None => scan_crossing(flow, region, x, signed)?,
    };
    Ok(match found {
        Some(t) => ExtReal::Finite(t),
        None if inside => ExtReal::NegInf,
        None => ExtReal::PosInf,
    })
}

/// `ψ = φ #_V θ`.
#[derive(Clone, Debug)]
pub struct Juxtaposition {
    pub phi: LocalFlow,
    pub theta: LocalFlow,
    pub region: Region,
    /// Search horizon for entrance times.
    pub horizon: f64,
}

fn pos(a: f64) -> f64 {
    a.max(0.0)
}

fn neg(a: f64) -> f64 {
    (-a).max(0.0)
}

impl Juxtaposition {
    pub fn new(phi: LocalFlow, theta: LocalFlow, region: Region, horizon: f64) -> Self {
        Juxtaposition { phi, theta, region, horizon }
    }

    /// τ: entrance time of φ.
    pub fn tau(&self, x: &[f64]) -> Result<ExtReal, JuxtaposeError> {
        entrance_time(&self.phi, &self.region, x, self.horizon)
    }

    /// σ: entrance time of θ.
    pub fn sigma(&self, x: &[f64]) -> Result<ExtReal, JuxtaposeError> {
        entrance_time(&self.theta, &self.region, x, self.horizon)
    }

    /// The V^c branch `θ^{(t−τ)⁺} ∘ φ^{t∧τ}`.
    pub fn outside_branch(&self, t: f64, x: &[f64]) -> Result<DVector<f64>, JuxtaposeError> {
        let tau = self.tau(x)?.to_f64();
        let y = self.phi.eval(t.min(tau), x)?;
        self.theta.eval(pos(t - tau), y.as_slice())
    }

    /// The cl(V) branch `φ^{−(t−σ)⁻} ∘ θ^{t∨σ}`.
    pub fn inside_branch(&self, t: f64, x: &[f64]) -> Result<DVector<f64>, JuxtaposeError> {
        let sigma = self.sigma(x)?.to_f64();
        let y = self.theta.eval(t.max(sigma), x)?;
        self.phi.eval(-neg(t - sigma), y.as_slice())
    }

    /// `ψ^t(x)`.
    pub fn eval(&self, t: f64, x: &[f64]) -> Result<DVector<f64>, JuxtaposeError> {
        if t == 0.0 {
            return Ok(DVector::from_column_slice(x));
        }
        if self.region.closure_contains(x) {
            self.inside_branch(t, x)
        } else {
            self.outside_branch(t, x)
        }
    }

    /// `ψ` as a local flow.
    pub fn to_local_flow(&self) -> LocalFlow {
        let me = self.clone();
        let mut f = LocalFlow::complete(self.phi.dim, move |t, x| me.eval(t, x));
        f.positively_complete = self.theta.positively_complete;
        f.negatively_complete = self.phi.negatively_complete;
        f
    }

    /// Spot check of strict positive invariance of `V` for both flows: samples of `cl(V)`
    /// must be inside `V` after `t`.
    pub fn check_invariance(&self, samples: &[DVector<f64>], t: f64) -> Result<(), JuxtaposeError> {
        for x in samples.iter().filter(|x| self.region.closure_contains(x.as_slice())) {
            for flow in [&self.phi, &self.theta] {
                let y = flow.eval(t, x.as_slice())?;
                if !self.region.contains(y.as_slice()) {
                    return Err(JuxtaposeError::NotInvariant { point: x.as_slice().to_vec(), t });
                }
            }
        }
        Ok(())
    }
}

/// `φ #_V θ`, after spot-checking the invariance precondition on `samples`.
pub fn juxtapose(phi: LocalFlow, theta: LocalFlow, region: Region, horizon: f64, samples: &[DVector<f64>]) -> Result<Juxtaposition, JuxtaposeError> {
    let j = Juxtaposition::new(phi, theta, region, horizon);
    j.check_invariance(samples, 1e-3)?;
    Ok(j)
}

/// `|ψ^{s+t}(x) − ψ^s(ψ^t(x))|`.
pub fn group_law_residual(psi: &LocalFlow, x: &[f64], s: f64, t: f64) -> Result<f64, JuxtaposeError> {
    let direct = psi.eval(s + t, x)?;
    let composed = psi.eval(s, psi.eval(t, x)?.as_slice())?;
    Ok((direct - composed).norm())
}
