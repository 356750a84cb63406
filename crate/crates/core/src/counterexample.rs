//! The explicit ℝ³ gradient flow whose unstable-manifold closures fail to be cells after a
//! small perturbation, with its closed-form certificates and the non-cell witness.

use std::f64::consts::E;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::examples::ReferenceSystem;
use crate::expr::{EvalError, Expression};
use crate::flow::{FlowError, FlowSystem, GradientField, IntegratorSettings, Termination, Trajectory, VectorField};

pub const POTENTIAL: &str = "z*exp(8/(x^2+y^2+z^2+3))";
/// Same function in the meridian half-plane, `x = r`, `y = z`.
pub const POTENTIAL_RZ: &str = "y*exp(8/(x^2+y^2+3))";

/// Critical values `f(0,0,1) = e²` and `f(0,0,3) = 3e^{2/3}`.
pub fn alpha() -> f64 {
    E * E
}

pub fn beta() -> f64 {
    3.0 * (2.0f64 / 3.0).exp()
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CounterexampleError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("trajectory comes within {margin:.3e} of the singular set r²+z² = 1")]
    SingularProximity { margin: f64 },
    #[error("bump supports overlap: minimum separation {separation:.4} <= {limit:.4}")]
    SupportOverlap { separation: f64, limit: f64 },
    #[error("perturbed field is not gradient-like: df[v] = {value:e} at {point:?}")]
    LyapunovViolation { value: f64, point: Vec<f64> },
    #[error("orbit from p_{k} did not resolve to a stationary point")]
    UnresolvedOrbit { k: usize },
}

fn settings() -> IntegratorSettings {
    IntegratorSettings { rtol: 1e-13, atol: 1e-15, max_step: 0.2, t_max_guard: 2000.0, escape_radius: 60.0, ..Default::default() }
}

/// The potential `f` and the flow of `−∇f`.
pub fn build_f3d() -> (Expression, FlowSystem) {
    let f = Expression::parse(POTENTIAL, 3).expect("static potential");
    let sys = FlowSystem::new(Arc::new(GradientField::new(f.clone()))).with_settings(settings());
    (f, sys)
}

pub fn critical_points() -> Vec<(DVector<f64>, usize)> {
    [(-3.0, 1), (-1.0, 0), (1.0, 3), (3.0, 2)].iter().map(|&(z, k)| (DVector::from_vec(vec![0.0, 0.0, z]), k)).collect()
}

pub fn noncell_reference() -> ReferenceSystem {
    let (f, system) = build_f3d();
    let seeds = [-3.3, -2.7, -1.2, -0.8, 0.8, 1.2, 2.7, 3.3].iter().map(|&z| vec![0.01, -0.02, z]).collect();
    ReferenceSystem { name: "noncell".into(), system, potential: Some(f), expected: critical_points(), seeds }
}

/// `ĝ(r, z) = r (r² + z² − 9) / (r² + z² − 1)`, constant along flow lines.
pub fn g_hat(r: f64, z: f64) -> f64 {
    let s = r * r + z * z;
    r * (s - 9.0) / (s - 1.0)
}

pub fn cylindrical(p: &[f64]) -> (f64, f64) {
    (p[0].hypot(p[1]), p[2])
}

/// `‖∇f̂ − ρF‖` at `(r, z)` with the closed-form factors.
pub fn factorization_residual(r: f64, z: f64) -> Result<f64, EvalError> {
    let fhat = Expression::parse(POTENTIAL_RZ, 2).expect("static");
    let g = fhat.gradient(&[r, z])?;
    let s = r * r + z * z + 3.0;
    let rho = (8.0 / s).exp() / (s * s);
    let s0 = r * r + z * z;
    let f = [-16.0 * r * z, (s0 + 4.0 * z + 3.0) * (s0 - 4.0 * z + 3.0)];
    Ok(((g[0] - rho * f[0]).powi(2) + (g[1] - rho * f[1]).powi(2)).sqrt())
}

/// Hessian of `f̂` in the meridian half-plane.
pub fn restricted_hessian(r: f64, z: f64) -> Result<DMatrix<f64>, EvalError> {
    Expression::parse(POTENTIAL_RZ, 2).expect("static").hessian(&[r, z])
}

/// Largest deviation of `ĝ` from its initial value along a trajectory.
pub fn g_invariance_drift(traj: &Trajectory) -> Result<f64, CounterexampleError> {
    let (r0, z0) = cylindrical(&traj.states[0]);
    let g0 = g_hat(r0, z0);
    let mut worst: f64 = 0.0;
    for s in &traj.states {
        let (r, z) = cylindrical(s);
        let margin = (r * r + z * z - 1.0).abs();
        if margin < 0.1 {
            return Err(CounterexampleError::SingularProximity { margin });
        }
        worst = worst.max((g_hat(r, z) - g0).abs());
    }
    Ok(worst)
}

/// Bump sites along the meridians through `p_k`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PerturbationSpec {
    pub k_max: usize,
    pub eps: f64,
    pub delta: f64,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        PerturbationSpec { k_max: 8, eps: 0.05, delta: 0.02 }
    }
}

/// `p_k = (3 cos(1/k), 3 sin(1/k), 0)` on the invariant sphere of radius 3.
pub fn p_k(k: usize) -> DVector<f64> {
    let a = 1.0 / k as f64;
    DVector::from_vec(vec![3.0 * a.cos(), 3.0 * a.sin(), 0.0])
}

/// `(1 − (s/δ)²)³` for `s < δ`.
pub fn bump_profile(s: f64, delta: f64) -> f64 {
    if s >= delta {
        0.0
    } else {
        let u = 1.0 - (s / delta).powi(2);
        u * u * u
    }
}

/// `−∇f` plus inward pushes `ε·b(|x − q_k|)·(−q_k/|q_k|)` at even sites.
pub struct PerturbedField {
    base: GradientField,
    centers: Vec<DVector<f64>>,
    eps: f64,
    delta: f64,
}

impl PerturbedField {
    pub fn centers(&self) -> &[DVector<f64>] {
        &self.centers
    }
}

impl VectorField for PerturbedField {
    fn dim(&self) -> usize {
        3
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        self.base.eval(x, out)?;
        for q in &self.centers {
            let d: f64 = (0..3).map(|i| (x[i] - q[i]).powi(2)).sum::<f64>().sqrt();
            if d < self.delta {
                let w = self.eps * bump_profile(d, self.delta) / q.norm();
                (0..3).for_each(|i| out[i] -= w * q[i]);
            }
        }
        Ok(())
    }

    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>, EvalError> {
        let mut j = self.base.jacobian(x)?;
        for q in &self.centers {
            let diff: Vec<f64> = (0..3).map(|i| x[i] - q[i]).collect();
            let d2: f64 = diff.iter().map(|v| v * v).sum();
            let dl2 = self.delta * self.delta;
            if d2 < dl2 {
                // d/dx (1 − d²/δ²)³ = −6 (1 − d²/δ²)² (x − q)/δ².
                let u = 1.0 - d2 / dl2;
                let scale = -self.eps / q.norm();
                for r in 0..3 {
                    for c in 0..3 {
                        j[(r, c)] += scale * q[r] * (-6.0 * u * u * diff[c] / dl2);
                    }
                }
            }
        }
        Ok(j)
    }
}

/// Verified margins of a perturbation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PerturbationReport {
    pub centers: Vec<Vec<f64>>,
    /// Smallest distance between distinct bump centers.
    pub center_separation: f64,
    /// Smallest distance from a bump center to an odd-index unperturbed orbit.
    pub odd_orbit_clearance: f64,
    /// Largest `df[v]` found on the Lyapunov samples (negative means gradient-like).
    pub max_lyapunov_derivative: f64,
    pub lyapunov_samples: usize,
}

fn orbit_samples(sys: &FlowSystem, start: &DVector<f64>, t: f64) -> Result<Vec<Vec<f64>>, FlowError> {
    let tr = sys.trajectory(start.as_slice(), t)?;
    let mut pts = Vec::new();
    for w in tr.states.windows(2) {
        for j in 0..8 {
            let s = j as f64 / 8.0;
            pts.push(w[0].iter().zip(&w[1]).map(|(a, b)| a + s * (b - a)).collect());
        }
    }
    pts.push(tr.last().to_vec());
    Ok(pts)
}

/// Builds the perturbed system and verifies support disjointness and gradient-likeness.
pub fn build_perturbed(spec: &PerturbationSpec) -> Result<(FlowSystem, PerturbationReport), CounterexampleError> {
    let (f, base) = build_f3d();
    let mut centers = Vec::new();
    for k in (2..=spec.k_max).step_by(2) {
        centers.push(base.flow_map(p_k(k).as_slice(), 1.0)?);
    }
    let mut sep = f64::INFINITY;
    for a in 0..centers.len() {
        for b in a + 1..centers.len() {
            sep = sep.min((&centers[a] - &centers[b]).norm());
        }
    }
    if centers.len() > 1 && sep <= 2.0 * spec.delta {
        return Err(CounterexampleError::SupportOverlap { separation: sep, limit: 2.0 * spec.delta });
    }
    let mut clearance = f64::INFINITY;
    for k in (1..=spec.k_max).step_by(2) {
        for p in orbit_samples(&base, &p_k(k), 40.0)? {
            for c in &centers {
                clearance = clearance.min(crate::linalg::dist(&p, c.as_slice()));
            }
        }
    }
    if !centers.is_empty() && clearance <= 2.0 * spec.delta {
        return Err(CounterexampleError::SupportOverlap { separation: clearance, limit: 2.0 * spec.delta });
    }
    let field = PerturbedField { base: GradientField::new(f.clone()), centers: centers.clone(), eps: spec.eps, delta: spec.delta };
    let sys = FlowSystem::new(Arc::new(field)).with_settings(settings());

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let crit = critical_points();
    let n_samples = 1000;
    let mut worst = f64::NEG_INFINITY;
    let mut worst_at = Vec::new();
    let mut checked = 0;
    while checked < n_samples {
        let x: Vec<f64> = if checked % 2 == 0 && !centers.is_empty() {
            let c = &centers[(checked / 2) % centers.len()];
            let mut v;
            loop {
                v = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
                if crate::linalg::norm(&v) <= 1.0 {
                    break;
                }
            }
            (0..3).map(|i| c[i] + spec.delta * v[i]).collect()
        } else {
            (0..3).map(|_| rng.gen_range(-4.5..4.5)).collect()
        };
        if crit.iter().any(|(p, _)| crate::linalg::dist(p.as_slice(), &x) < 1e-6) {
            continue;
        }
        checked += 1;
        let g = f.gradient(&x)?;
        let v = sys.velocity(&x)?;
        let df = g.dot(&v);
        if df > worst {
            worst = df;
            worst_at = x;
        }
    }
    if worst >= 0.0 {
        return Err(CounterexampleError::LyapunovViolation { value: worst, point: worst_at });
    }
    let report = PerturbationReport {
        centers: centers.iter().map(|c| c.iter().copied().collect()).collect(),
        center_separation: sep,
        odd_orbit_clearance: clearance,
        max_lyapunov_derivative: worst,
        lyapunov_samples: n_samples,
    };
    Ok((sys, report))
}

/// Capture radius for ω-limit detection at the saddles reached along their stable spheres.
pub const LIMIT_CAPTURE: f64 = 5e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LimitRow {
    pub k: usize,
    pub start: Vec<f64>,
    pub limit: Vec<f64>,
    pub f_value: f64,
    /// Distance from the final state to the identified stationary point.
    pub distance: f64,
    pub time: f64,
}

/// Stationary point reached forward from `start`, labelled `k` in the row and in errors.
pub fn omega_limit(sys: &FlowSystem, f: &Expression, k: usize, start: &DVector<f64>) -> Result<LimitRow, CounterexampleError> {
    let crit = critical_points();
    let targets: Vec<(DVector<f64>, f64)> = crit.iter().map(|(p, _)| (p.clone(), LIMIT_CAPTURE)).collect();
    let traj = sys.run_to_limit(start.as_slice(), &targets, false)?;
    let end = traj.last().to_vec();
    let idx = match traj.termination {
        Termination::Captured(i) => i,
        Termination::ConvergedToPoint => crit
            .iter()
            .position(|(p, _)| crate::linalg::dist(p.as_slice(), &end) < 1e-5)
            .ok_or(CounterexampleError::UnresolvedOrbit { k })?,
        _ => return Err(CounterexampleError::UnresolvedOrbit { k }),
    };
    let limit = crit[idx].0.clone();
    Ok(LimitRow {
        k,
        start: start.iter().copied().collect(),
        limit: limit.iter().copied().collect(),
        f_value: f.eval(limit.as_slice())?,
        distance: crate::linalg::dist(limit.as_slice(), &end),
        time: traj.end_time(),
    })
}

/// Forward ω-limits of `p_1, …, p_K` under `sys`, sorted by `k`.
pub fn limits_from_pk(sys: &FlowSystem, k_max: usize) -> Result<Vec<LimitRow>, CounterexampleError> {
    let (f, _) = build_f3d();
    (1..=k_max).into_par_iter().map(|k| omega_limit(sys, &f, k, &p_k(k))).collect()
}

/// Forward limits under the perturbed flow.
pub fn alternating_limits(spec: &PerturbationSpec) -> Result<Vec<LimitRow>, CounterexampleError> {
    let (sys, _) = build_perturbed(spec)?;
    limits_from_pk(&sys, spec.k_max)
}

/// Backward limits (α-limits) of the `p_k` under the given flow.
pub fn backward_limits(sys: &FlowSystem, k_max: usize) -> Result<Vec<LimitRow>, CounterexampleError> {
    limits_from_pk(&sys.reversed(), k_max)
}

/// Certificate that the closure of the perturbed unstable manifold of `(0,0,3)` admits no
/// continuous cell parametrization.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NonCellReport {
    pub spec: PerturbationSpec,
    pub perturbation: PerturbationReport,
    /// Limit of the starting points `p_k` as `k → ∞`.
    pub accumulation_point: Vec<f64>,
    pub distance_to_accumulation: f64,
    pub perturbed: Vec<LimitRow>,
    pub control: Vec<LimitRow>,
    pub backward: Vec<LimitRow>,
    /// Values of `f` at the limits along even and odd subsequences.
    pub accumulation_values: [f64; 2],
    pub gap: f64,
    pub alternates: bool,
    pub control_alternates: bool,
}

fn alternation(rows: &[LimitRow]) -> bool {
    let even: Vec<f64> = rows.iter().filter(|r| r.k % 2 == 0).map(|r| r.f_value).collect();
    let odd: Vec<f64> = rows.iter().filter(|r| r.k % 2 == 1).map(|r| r.f_value).collect();
    let same = |v: &[f64]| v.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-9);
    same(&even) && same(&odd) && !even.is_empty() && !odd.is_empty() && (even[0] - odd[0]).abs() > 1e-3
}

pub fn noncell_witness(spec: &PerturbationSpec) -> Result<NonCellReport, CounterexampleError> {
    let (sys, perturbation) = build_perturbed(spec)?;
    let (_, base) = build_f3d();
    let perturbed = limits_from_pk(&sys, spec.k_max)?;
    let control = limits_from_pk(&base, spec.k_max)?;
    let backward = backward_limits(&sys, spec.k_max)?;
    let accumulation_point = vec![3.0, 0.0, 0.0];
    let far = p_k(10_000_000);
    let distance_to_accumulation = crate::linalg::dist(far.as_slice(), &accumulation_point);
    let even = perturbed.iter().find(|r| r.k % 2 == 0).map_or(f64::NAN, |r| r.f_value);
    let odd = perturbed.iter().find(|r| r.k % 2 == 1).map_or(f64::NAN, |r| r.f_value);
    Ok(NonCellReport {
        spec: spec.clone(),
        perturbation,
        accumulation_point,
        distance_to_accumulation,
        alternates: alternation(&perturbed),
        control_alternates: alternation(&control),
        perturbed,
        control,
        backward,
        accumulation_values: [even, odd],
        gap: (even - odd).abs(),
    })
}

/// `3(sin c cos ϑ, sin c sin ϑ, cos c)`: a circle of polar angle `c` around `(0,0,3)` on the
/// invariant sphere of radius 3.
pub fn cap_circle(cap: f64, theta: f64) -> DVector<f64> {
    DVector::from_vec(vec![3.0 * cap.sin() * theta.cos(), 3.0 * cap.sin() * theta.sin(), 3.0 * cap.cos()])
}

/// Forward limit of one point on the cap circle.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CapSample {
    pub theta: f64,
    pub limit: Vec<f64>,
    pub f_value: f64,
}

/// The boundary map `ϑ ↦ ω(g(ϑ))` on a cap circle: the naive candidate for the attaching
/// map of the 2-cell at `(0,0,3)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NaiveBoundaryMap {
    pub cap: f64,
    pub n_theta: usize,
    pub samples: Vec<CapSample>,
    /// Largest jump between consecutive samples.
    pub max_jump: f64,
    /// Largest jump within `window` of each `ϑ = 1/k` and nearer to it than to other sites.
    pub site_jumps: Vec<(usize, f64)>,
}

/// Samples `n_theta` equally spaced angles together with the meridians `ϑ = 1/k` and their
/// neighbours `1/k ± step/2`, so every bump site is resolved at every grid size.
pub fn naive_boundary_map(sys: &FlowSystem, cap: f64, n_theta: usize, k_max: usize, window: f64) -> Result<NaiveBoundaryMap, CounterexampleError> {
    let (f, _) = build_f3d();
    let step = std::f64::consts::TAU / n_theta as f64;
    let mut thetas: Vec<f64> = (0..n_theta).map(|j| step * j as f64).collect();
    for k in 1..=k_max {
        let a = 1.0 / k as f64;
        thetas.extend([a - 0.5 * step, a, a + 0.5 * step]);
    }
    thetas.sort_by(f64::total_cmp);
    thetas.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    let samples = thetas
        .par_iter()
        .enumerate()
        .map(|(i, &theta)| {
            let row = omega_limit(sys, &f, i, &cap_circle(cap, theta))?;
            Ok(CapSample { theta, limit: row.limit, f_value: row.f_value })
        })
        .collect::<Result<Vec<_>, CounterexampleError>>()?;
    // A jump is attributed through its endpoint that leaves the generic limit `(0,0,-3)`.
    let generic = [0.0, 0.0, -3.0];
    let n = samples.len();
    let jumps: Vec<(f64, f64)> = (0..n)
        .map(|j| {
            let (a, b) = (&samples[j], &samples[(j + 1) % n]);
            let anchor = if crate::linalg::dist(&a.limit, &generic) > crate::linalg::dist(&b.limit, &generic) { a } else { b };
            (anchor.theta, crate::linalg::dist(&a.limit, &b.limit))
        })
        .collect();
    let nearest_site = |t: f64| (1..=k_max).min_by(|&a, &b| (t - 1.0 / a as f64).abs().total_cmp(&(t - 1.0 / b as f64).abs()));
    let mut site_jumps: Vec<(usize, f64)> = (1..=k_max).map(|k| (k, 0.0)).collect();
    for &(t, d) in &jumps {
        if let Some(k) = nearest_site(t).filter(|&k| (t - 1.0 / k as f64).abs() < window) {
            site_jumps[k - 1].1 = site_jumps[k - 1].1.max(d);
        }
    }
    Ok(NaiveBoundaryMap {
        cap,
        n_theta,
        max_jump: jumps.iter().map(|j| j.1).fold(0.0, f64::max),
        site_jumps,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn critical_values_and_oddness() {
        let (f, _) = build_f3d();
        assert!((f.eval(&[0.0, 0.0, 1.0]).unwrap() - alpha()).abs() < 1e-12);
        assert!((f.eval(&[0.0, 0.0, -3.0]).unwrap() + beta()).abs() < 1e-12);
        for p in [[0.3, -1.2, 0.7], [2.0, 0.1, -0.4]] {
            let q = [-p[0], -p[1], -p[2]];
            assert!((f.eval(&p).unwrap() + f.eval(&q).unwrap()).abs() < 1e-13);
        }
    }

    #[test]
    fn factorization_at_known_points() {
        assert!(factorization_residual(1.0, 0.0).unwrap() < 1e-12);
        assert!(factorization_residual(0.0, 3.0).unwrap() < 1e-12);
    }

    #[test]
    fn bump_is_compactly_supported() {
        assert_eq!(bump_profile(0.0, 0.02), 1.0);
        assert_eq!(bump_profile(0.02, 0.02), 0.0);
        assert!(bump_profile(0.01, 0.02) > 0.0);
    }

    #[test]
    fn perturbed_jacobian_matches_differences() {
        let (sys, report) = build_perturbed(&PerturbationSpec::default()).unwrap();
        let c = &report.centers[0];
        let x = [c[0] + 0.004, c[1] - 0.003, c[2] + 0.005];
        let j = sys.velocity_jacobian(&x).unwrap();
        let h = 1e-7;
        for col in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[col] += h;
            xm[col] -= h;
            let d = (sys.velocity(&xp).unwrap() - sys.velocity(&xm).unwrap()) / (2.0 * h);
            for r in 0..3 {
                assert!((d[r] - j[(r, col)]).abs() < 1e-6, "{r} {col}");
            }
        }
    }
}
