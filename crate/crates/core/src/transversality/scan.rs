//! Sampling heteroclinic orbits and evaluating the transversality measure along them.

use nalgebra::DVector;
use rayon::prelude::*;

use super::{transversality_measure, Subspace};
use crate::flow::{FlowSystem, Mode, Termination};
use crate::graphtransform::{evolved_tangent_space, stable_manifold_local, unstable_manifold_local, GraphTransformError, LipGraph, ManifoldSettings};
use crate::hyperbolic::{sphere_directions, HyperbolicPoint, CAPTURE_RADIUS, SAMPLE_RADIUS};
use crate::linalg::dist;

/// One sampled point of `W^u(from) ∩ W^s(to)` with its measure.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanRecord {
    pub from: usize,
    pub to: usize,
    pub sample: usize,
    pub point: Vec<f64>,
    pub measure: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanReport {
    pub records: Vec<ScanRecord>,
    /// Minimum measure over all records (π/2 when there are none).
    pub minimum: f64,
    pub witness: Option<ScanRecord>,
    /// `(from, sample)` pairs whose orbit or tangent data could not be resolved.
    pub unresolved: Vec<(usize, usize)>,
}

/// The point of a recorded orbit farthest from both of its end points.
fn midpoint(states: &[Vec<f64>], a: &DVector<f64>, b: &DVector<f64>) -> Vec<f64> {
    let score = |q: &Vec<f64>| dist(q, a.as_slice()).min(dist(q, b.as_slice()));
    states.iter().max_by(|p, q| score(p).total_cmp(&score(q))).cloned().expect("non-empty orbit")
}

enum Outcome {
    Record(ScanRecord),
    Unresolved(usize, usize),
    NoConnection,
}

/// Samples `n_samples` orbits leaving each point with positive index, and evaluates 𝒯 of
/// the unstable and stable tangent spaces at one interior point of each heteroclinic orbit.
pub fn transversality_scan(
    sys: &FlowSystem,
    points: &[HyperbolicPoint],
    n_samples: usize,
    settings: &ManifoldSettings,
) -> Result<ScanReport, GraphTransformError> {
    let rev = sys.reversed();
    let mut unstable: Vec<Option<LipGraph>> = Vec::with_capacity(points.len());
    let mut stable: Vec<Option<LipGraph>> = Vec::with_capacity(points.len());
    for h in points {
        unstable.push(if h.index > 0 { Some(unstable_manifold_local(sys, h, settings)?.graph) } else { None });
        stable.push(if h.stable_dim() > 0 { Some(stable_manifold_local(sys, h, settings)?.graph) } else { None });
    }
    let targets: Vec<(DVector<f64>, f64)> = points.iter().map(|p| (p.location.clone(), CAPTURE_RADIUS)).collect();
    let mut jobs = Vec::new();
    for (i, h) in points.iter().enumerate() {
        if h.index == 0 {
            continue;
        }
        let extra = n_samples.saturating_sub(2 * h.index);
        for (j, dir) in sphere_directions(h.index, extra).into_iter().take(n_samples.max(1)).enumerate() {
            jobs.push((i, j, dir));
        }
    }
    let outcomes: Vec<Result<Outcome, GraphTransformError>> = jobs
        .par_iter()
        .map(|(i, j, dir)| {
            let (i, j) = (*i, *j);
            let local = unstable[i].as_ref().expect("positive index has an unstable graph");
            // Start on the linear chart close to the point so the orbit tracks W^u.
            let u: Vec<f64> = dir.iter().map(|c| c * SAMPLE_RADIUS).collect();
            let start = points[i].chart(&u, &vec![0.0; points[i].stable_dim()]);
            let traj = match sys.run_to_limit(start.as_slice(), &targets, true) {
                Ok(t) => t,
                Err(_) => return Ok(Outcome::Unresolved(i, j)),
            };
            let to = match traj.termination {
                Termination::Captured(t) => t,
                Termination::ConvergedToPoint => {
                    match points.iter().position(|q| dist(q.location.as_slice(), traj.last()) < 1e-4) {
                        Some(t) => t,
                        None => return Ok(Outcome::Unresolved(i, j)),
                    }
                }
                _ => return Ok(Outcome::Unresolved(i, j)),
            };
            if to == i {
                return Ok(Outcome::NoConnection);
            }
            let p = midpoint(&traj.states, &points[i].location, &points[to].location);
            let v = evolved_tangent_space(sys, local, &p, j);
            let w = match stable[to].as_ref() {
                Some(g) => evolved_tangent_space(&rev, g, &p, j),
                None => return Ok(Outcome::NoConnection),
            };
            match (v, w) {
                (Ok(v), Ok(w)) => {
                    let (v, w) = match sys.mode() {
                        Mode::Ambient => (v, w),
                        Mode::Surface(_) => {
                            // Measure inside the tangent space of the phase surface.
                            let b = sys.tangent_basis(&p)?;
                            (Subspace::from_spanning(&(b.transpose() * v.basis())), Subspace::from_spanning(&(b.transpose() * w.basis())))
                        }
                    };
                    let measure = transversality_measure(&v, &w).unwrap_or(0.0);
                    Ok(Outcome::Record(ScanRecord { from: i, to, sample: j, point: p, measure }))
                }
                (Err(GraphTransformError::UnresolvedOrbit { .. } | GraphTransformError::Flow(_)), _)
                | (_, Err(GraphTransformError::UnresolvedOrbit { .. } | GraphTransformError::Flow(_))) => {
                    Ok(Outcome::Unresolved(i, j))
                }
                (Err(e), _) | (_, Err(e)) => Err(e),
            }
        })
        .collect();
    let mut records = Vec::new();
    let mut unresolved = Vec::new();
    for o in outcomes {
        match o? {
            Outcome::Record(r) => records.push(r),
            Outcome::Unresolved(i, j) => unresolved.push((i, j)),
            Outcome::NoConnection => {}
        }
    }
    let witness = records.iter().min_by(|a, b| a.measure.total_cmp(&b.measure)).cloned();
    let minimum = witness.as_ref().map_or(std::f64::consts::FRAC_PI_2, |w| w.measure);
    Ok(ScanReport { records, minimum, witness, unresolved })
}
