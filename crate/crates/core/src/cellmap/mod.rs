//! Sampled cell maps `cl(Bᵏ) → cl(Wᵘ(x))` built from the juxtaposed flow
//! `ψ = φ #_V θ` and its boundary limit `ω_ψ`.

mod export;
mod report;

use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::boundaryflow::{BoundaryFlowAssembly, BoundaryFlowError, BoundaryLimit};
use crate::extreal::ExtReal;
use crate::flow::FlowSystem;
use crate::hyperbolic::HyperbolicPoint;
use crate::juxtapose::{JuxtaposeError, Juxtaposition, LocalFlow, Region};

pub use export::{write_csv, write_mesh, write_svg, SvgOptions};
pub use report::{continuity_report, hausdorff_distance, ring_jumps, BandJump, ContinuityReport, RefinementLaw};

/// Search horizon for entrance times of ψ.
pub const PSI_HORIZON: f64 = 60.0;
/// Convergence tolerance for ω_θ at boundary samples.
pub const OMEGA_TOL: f64 = 1e-7;
/// Clamp of the radial parameter away from the ends of `(0, 1)`.
pub const CHI_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CellMapError {
    #[error(transparent)]
    Juxtapose(#[from] JuxtaposeError),
    #[error(transparent)]
    Boundary(#[from] BoundaryFlowError),
    #[error("cell maps are sampled for k = 1, 2, 3 only, got k = {0}")]
    UnsupportedIndex(usize),
    #[error("the orbit of {point:?} never enters V within the horizon")]
    NeverEnters { point: Vec<f64> },
    #[error("ψ moves the stationary point by {residual:e}")]
    NotStationary { residual: f64 },
    #[error("ψ differs from φ by {gap:e} at {point:?}, t = {t}")]
    PhiMismatch { point: Vec<f64>, t: f64, gap: f64 },
    #[error("backward ψ-orbit of {point:?} does not approach the stationary point")]
    NoBackwardConvergence { point: Vec<f64> },
}

/// `g: ∂Bᵏ → Wᵘ(x)`, a parametrized sphere around `x` inside its unstable manifold.
#[derive(Clone)]
pub struct SphereParam {
    k: usize,
    map: Arc<dyn Fn(&[f64]) -> DVector<f64> + Send + Sync>,
}

impl std::fmt::Debug for SphereParam {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SphereParam(k = {})", self.k)
    }
}

impl SphereParam {
    pub fn new<F: Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static>(k: usize, map: F) -> Self {
        SphereParam { k, map: Arc::new(map) }
    }

    /// `∂Dᵘ(r)` in the linear chart at `x`, projected onto the phase space.
    pub fn linear(sys: &FlowSystem, x: &HyperbolicPoint, radius: f64) -> Self {
        let (sys, x) = (sys.clone(), x.clone());
        let zeros = vec![0.0; x.stable_dim()];
        SphereParam::new(x.index, move |u| {
            let a: Vec<f64> = u.iter().map(|v| radius * v).collect();
            let mut p = x.chart(&a, &zeros);
            sys.project(p.as_mut_slice());
            p
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn eval(&self, u: &[f64]) -> DVector<f64> {
        (self.map)(u)
    }
}

/// Radial reparametrization `χ(r) = tan((2πr − π)/2)` with `r` clamped to
/// `[CHI_CLAMP, 1 − CHI_CLAMP]`.
pub fn chi(r: f64) -> f64 {
    let r = r.clamp(CHI_CLAMP, 1.0 - CHI_CLAMP);
    (std::f64::consts::PI * r - std::f64::consts::FRAC_PI_2).tan()
}

/// Unit directions on `∂Bᵏ`: `±1` for `k = 1`, `n` equally spaced angles for `k = 2`, a
/// Fibonacci sphere of `n` points for `k = 3`.
pub fn ball_directions(k: usize, n: usize) -> Result<Vec<DVector<f64>>, CellMapError> {
    match k {
        1 => Ok(vec![DVector::from_vec(vec![-1.0]), DVector::from_vec(vec![1.0])]),
        2 => Ok((0..n)
            .map(|j| {
                let a = std::f64::consts::TAU * j as f64 / n as f64;
                DVector::from_vec(vec![a.cos(), a.sin()])
            })
            .collect()),
        3 => Ok(crate::hyperbolic::sphere_directions(3, n).split_off(6)),
        _ => Err(CellMapError::UnsupportedIndex(k)),
    }
}

/// Pairs of domain-adjacent directions: consecutive angles for `k = 2`, six nearest
/// neighbours for `k = 3`.
pub fn direction_neighbors(k: usize, dirs: &[DVector<f64>]) -> Vec<(usize, usize)> {
    let n = dirs.len();
    match k {
        2 if n > 1 => (0..n).map(|j| (j, (j + 1) % n)).collect(),
        3 => {
            let mut pairs = Vec::new();
            for i in 0..n {
                let mut by_dist: Vec<(f64, usize)> = (0..n).filter(|&j| j != i).map(|j| ((&dirs[i] - &dirs[j]).norm(), j)).collect();
                by_dist.sort_by(|a, b| a.0.total_cmp(&b.0));
                for &(_, j) in by_dist.iter().take(6) {
                    pairs.push((i.min(j), i.max(j)));
                }
            }
            pairs.sort_unstable();
            pairs.dedup();
            pairs
        }
        _ => Vec::new(),
    }
}

/// `ψ = φ #_V θ` on `Wᵘ(x)`, with `V = ∪ Vᵢ` from the assembly.
///
/// Checks on a small sphere around `x` that `x` is stationary, that `ψ = φ` there for
/// `t ≤ 0`, that backward ψ-orbits approach `x` and that `V` is positively invariant at
/// the entrance points.
pub fn build_psi(sys: &FlowSystem, x: &HyperbolicPoint, asm: &BoundaryFlowAssembly) -> Result<Juxtaposition, CellMapError> {
    let psi = Juxtaposition::new(LocalFlow::from_system(sys), LocalFlow::from_boundary_flow(asm), Region::from_assembly(asm), PSI_HORIZON);
    let center = x.location.as_slice();
    for t in [-1.0, 1.0] {
        let residual = (psi.eval(t, center)? - &x.location).norm();
        if residual > 1e-12 {
            return Err(CellMapError::NotStationary { residual });
        }
    }
    let g = SphereParam::linear(sys, x, 1e-2);
    let mut entries = Vec::new();
    for u in ball_directions(x.index, 8)? {
        let p = g.eval(u.as_slice());
        if psi.region.closure_contains(p.as_slice()) {
            continue;
        }
        for t in [-5.0, -2.5, -1.0] {
            let gap = (psi.eval(t, p.as_slice())? - psi.phi.eval(t, p.as_slice())?).norm();
            if gap > 1e-8 {
                return Err(CellMapError::PhiMismatch { point: p.as_slice().to_vec(), t, gap });
            }
        }
        if (psi.eval(-10.0, p.as_slice())? - &x.location).norm() >= (&p - &x.location).norm() {
            return Err(CellMapError::NoBackwardConvergence { point: p.as_slice().to_vec() });
        }
        if let ExtReal::Finite(tau) = psi.tau(p.as_slice())? {
            entries.push(psi.phi.eval(tau, p.as_slice())?);
        }
    }
    psi.check_invariance(&entries, 1e-3)?;
    Ok(psi)
}

/// `ω_ψ(p) = ω_θ(φ^τ(p))` for `p ∈ Wᵘ(x) ∖ {x}`.
pub fn omega_psi(psi: &Juxtaposition, asm: &BoundaryFlowAssembly, p: &[f64]) -> Result<BoundaryLimit, CellMapError> {
    let entry = match psi.tau(p)? {
        ExtReal::PosInf => return Err(CellMapError::NeverEnters { point: p.to_vec() }),
        ExtReal::Finite(t) if t > 0.0 => psi.phi.eval(t, p)?,
        _ => DVector::from_column_slice(p),
    };
    Ok(asm.omega_theta(entry.as_slice(), OMEGA_TOL)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Center,
    Interior,
    Boundary,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Center => "center",
            Regime::Interior => "interior",
            Regime::Boundary => "boundary",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Sample {
    pub ring: usize,
    pub dir: usize,
    pub regime: Regime,
    /// Image point, absent when the evaluation failed.
    pub point: Option<Vec<f64>>,
    pub failure: Option<String>,
}

/// Polar samples of the cell map: ring 0 is the center, ring `n_r` the boundary sphere.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellMap {
    pub k: usize,
    pub center: Vec<f64>,
    pub radii: Vec<f64>,
    pub directions: Vec<Vec<f64>>,
    pub samples: Vec<Sample>,
}

impl CellMap {
    pub fn n_rings(&self) -> usize {
        self.radii.len() - 1
    }

    pub fn index(&self, ring: usize, dir: usize) -> usize {
        if ring == 0 {
            0
        } else {
            1 + (ring - 1) * self.directions.len() + dir
        }
    }

    pub fn sample(&self, ring: usize, dir: usize) -> &Sample {
        &self.samples[self.index(ring, dir)]
    }

    pub fn ring(&self, ring: usize) -> Vec<&Sample> {
        (0..self.directions.len()).map(|d| self.sample(ring, d)).collect()
    }

    pub fn failures(&self) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.failure.is_some()).collect()
    }

    /// Domain point `r·u` of a sample.
    pub fn domain_point(&self, s: &Sample) -> Vec<f64> {
        if s.ring == 0 {
            return vec![0.0; self.k];
        }
        self.directions[s.dir].iter().map(|v| v * self.radii[s.ring]).collect()
    }
}

fn sample_at(psi: &Juxtaposition, asm: &BoundaryFlowAssembly, g: &SphereParam, r: f64, ring: usize, dir: usize, u: &[f64], last: usize) -> Sample {
    let regime = if ring == last { Regime::Boundary } else { Regime::Interior };
    let start = g.eval(u);
    let image = match regime {
        Regime::Boundary => omega_psi(psi, asm, start.as_slice()).map(|l| l.point),
        _ => psi.eval(chi(r), start.as_slice()).map(|p| p.as_slice().to_vec()).map_err(CellMapError::from),
    };
    match image {
        Ok(p) => Sample { ring, dir, regime, point: Some(p), failure: None },
        Err(e) => Sample { ring, dir, regime, point: None, failure: Some(e.to_string()) },
    }
}

/// `φ(ru) = ψ^{χ(r)}(g(u))` on `n_r − 1` interior rings, `φ(0) = x` and `φ(u) = ω_ψ(g(u))`
/// on the boundary ring; `n_theta` directions per ring (ignored for `k = 1`).
pub fn cell_map(psi: &Juxtaposition, asm: &BoundaryFlowAssembly, g: &SphereParam, n_r: usize, n_theta: usize) -> Result<CellMap, CellMapError> {
    let k = g.k();
    let dirs = ball_directions(k, n_theta)?;
    let n_r = n_r.max(2);
    let radii: Vec<f64> = (0..=n_r).map(|i| i as f64 / n_r as f64).collect();
    let center = asm.target().location.as_slice().to_vec();
    let jobs: Vec<(usize, usize)> = (1..=n_r).flat_map(|i| (0..dirs.len()).map(move |j| (i, j))).collect();
    let mut samples = vec![Sample { ring: 0, dir: 0, regime: Regime::Center, point: Some(center.clone()), failure: None }];
    samples.extend(
        jobs.into_par_iter()
            .map(|(i, j)| sample_at(psi, asm, g, radii[i], i, j, dirs[j].as_slice(), n_r))
            .collect::<Vec<_>>(),
    );
    Ok(CellMap {
        k,
        center,
        radii,
        directions: dirs.iter().map(|d| d.as_slice().to_vec()).collect(),
        samples,
    })
}

/// Boundary images of `u(α) = (cos α, sin α)`, refined by bisection wherever consecutive
/// images are farther apart than `gap_tol`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RefinedBoundary {
    pub angles: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    /// Gaps left above `gap_tol` once the angular step fell below `min_step`.
    pub unresolved: usize,
    pub max_gap: f64,
}

pub fn refine_boundary(
    psi: &Juxtaposition,
    asm: &BoundaryFlowAssembly,
    g: &SphereParam,
    n_theta: usize,
    gap_tol: f64,
    min_step: f64,
) -> Result<RefinedBoundary, CellMapError> {
    if g.k() != 2 {
        return Err(CellMapError::UnsupportedIndex(g.k()));
    }
    let image = |a: f64| -> Result<Vec<f64>, CellMapError> { Ok(omega_psi(psi, asm, g.eval(&[a.cos(), a.sin()]).as_slice())?.point) };
    let eval_all = |angles: &[f64]| -> Result<Vec<Vec<f64>>, CellMapError> { angles.par_iter().map(|&a| image(a)).collect() };
    let mut angles: Vec<f64> = (0..n_theta).map(|j| std::f64::consts::TAU * j as f64 / n_theta as f64).collect();
    let mut points = eval_all(&angles)?;
    let gap = |p: &[f64], q: &[f64]| crate::linalg::dist(p, q);
    loop {
        let n = angles.len();
        let mut mids = Vec::new();
        for j in 0..n {
            let (a0, a1) = (angles[j], if j + 1 < n { angles[j + 1] } else { angles[0] + std::f64::consts::TAU });
            if gap(&points[j], &points[(j + 1) % n]) > gap_tol && a1 - a0 > min_step {
                mids.push((j, 0.5 * (a0 + a1)));
            }
        }
        if mids.is_empty() {
            break;
        }
        let mid_angles: Vec<f64> = mids.iter().map(|m| m.1).collect();
        let mid_points = eval_all(&mid_angles)?;
        let mut na = Vec::with_capacity(n + mids.len());
        let mut np = Vec::with_capacity(n + mids.len());
        let mut m = 0;
        for j in 0..n {
            na.push(angles[j]);
            np.push(points[j].clone());
            if m < mids.len() && mids[m].0 == j {
                na.push(mid_angles[m]);
                np.push(mid_points[m].clone());
                m += 1;
            }
        }
        angles = na;
        points = np;
    }
    let n = angles.len();
    let gaps: Vec<f64> = (0..n).map(|j| gap(&points[j], &points[(j + 1) % n])).collect();
    Ok(RefinedBoundary {
        unresolved: gaps.iter().filter(|&&d| d > gap_tol).count(),
        max_gap: gaps.iter().copied().fold(0.0, f64::max),
        angles,
        points,
    })
}
