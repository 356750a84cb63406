use rayon::prelude::*;
use serde::Serialize;

use super::{direction_neighbors, CellMap, Regime};
use crate::linalg::dist;

/// Largest image jumps between domain-adjacent samples of one ring.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BandJump {
    pub ring: usize,
    pub radius: f64,
    /// Between neighbouring directions on this ring.
    pub angular: f64,
    /// Between this ring and the next one inwards.
    pub radial: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContinuityReport {
    pub bands: Vec<BandJump>,
    /// Angular jump on the boundary ring.
    pub boundary_max: f64,
    /// Largest jump among interior rings.
    pub interior_max: f64,
    /// Interior samples that are not domain-adjacent but whose images nearly coincide.
    pub collisions: Vec<(usize, usize)>,
    pub failures: usize,
}

/// Two interior samples collide when their images are closer than this fraction of the
/// smaller local sample spacing (the distance to the nearest domain-adjacent image).
pub const COLLISION_REL: f64 = 1e-2;
/// Absolute floor for the collision distance.
pub const COLLISION_ABS: f64 = 1e-14;

/// Distances between consecutive points, closing the loop when `cyclic`.
pub fn ring_jumps(points: &[Vec<f64>], cyclic: bool) -> Vec<f64> {
    let n = points.len();
    let m = if cyclic { n } else { n.saturating_sub(1) };
    (0..m).map(|j| dist(&points[j], &points[(j + 1) % n])).collect()
}

fn jump(cm: &CellMap, a: usize, b: usize) -> Option<f64> {
    match (&cm.samples[a].point, &cm.samples[b].point) {
        (Some(p), Some(q)) => Some(dist(p, q)),
        _ => None,
    }
}

/// Empirical modulus of continuity by radius band, plus the interior collision check.
pub fn continuity_report(cm: &CellMap) -> ContinuityReport {
    let n_dir = cm.directions.len();
    let dirs: Vec<_> = cm.directions.iter().map(|d| nalgebra::DVector::from_column_slice(d)).collect();
    let neighbors = direction_neighbors(cm.k, &dirs);
    let n_r = cm.n_rings();
    let mut bands = Vec::with_capacity(n_r);
    for ring in 1..=n_r {
        let angular = neighbors
            .iter()
            .filter_map(|&(a, b)| jump(cm, cm.index(ring, a), cm.index(ring, b)))
            .fold(0.0, f64::max);
        let radial = (0..n_dir)
            .filter_map(|d| jump(cm, cm.index(ring, d), cm.index(ring - 1, d)))
            .fold(0.0, f64::max);
        bands.push(BandJump { ring, radius: cm.radii[ring], angular, radial });
    }
    let boundary_max = bands.last().map_or(0.0, |b| b.angular);
    let interior_max = bands
        .iter()
        .filter(|b| b.ring < n_r)
        .map(|b| b.angular.max(b.radial))
        .fold(0.0, f64::max);
    ContinuityReport {
        bands,
        boundary_max,
        interior_max,
        collisions: collisions(cm, &neighbors),
        failures: cm.failures().len(),
    }
}

fn collisions(cm: &CellMap, neighbors: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let adjacent_dirs: std::collections::HashSet<(usize, usize)> = neighbors.iter().copied().collect();
    let adjacent = |a: usize, b: usize| {
        let (sa, sb) = (&cm.samples[a], &cm.samples[b]);
        let same_dir = sa.dir == sb.dir || adjacent_dirs.contains(&(sa.dir.min(sb.dir), sa.dir.max(sb.dir)));
        sa.ring.abs_diff(sb.ring) <= 1 && same_dir
    };
    let mut spacing = vec![f64::INFINITY; cm.samples.len()];
    for ring in 1..cm.n_rings() {
        for &(a, b) in neighbors {
            let (ia, ib) = (cm.index(ring, a), cm.index(ring, b));
            if let Some(d) = jump(cm, ia, ib) {
                spacing[ia] = spacing[ia].min(d);
                spacing[ib] = spacing[ib].min(d);
            }
        }
        for d in 0..cm.directions.len() {
            let (ia, ib) = (cm.index(ring, d), cm.index(ring - 1, d));
            if let Some(j) = jump(cm, ia, ib) {
                spacing[ia] = spacing[ia].min(j);
            }
        }
    }
    let tol = |a: usize, b: usize| {
        let s = spacing[a].min(spacing[b]);
        if s.is_finite() { (COLLISION_REL * s).max(COLLISION_ABS) } else { COLLISION_ABS }
    };
    let mut interior: Vec<(usize, &Vec<f64>)> = cm
        .samples
        .iter()
        .enumerate()
        .filter(|(_, s)| s.regime == Regime::Interior)
        .filter_map(|(i, s)| s.point.as_ref().map(|p| (i, p)))
        .collect();
    interior.sort_by(|a, b| a.1[0].total_cmp(&b.1[0]).then(a.0.cmp(&b.0)));
    let window = interior.iter().map(|&(i, _)| tol(i, i)).fold(COLLISION_ABS, f64::max);
    let mut out = Vec::new();
    for (i, &(a, p)) in interior.iter().enumerate() {
        for &(b, q) in &interior[i + 1..] {
            if q[0] - p[0] >= window {
                break;
            }
            if dist(p, q) < tol(a, b) && !adjacent(a, b) {
                out.push((a.min(b), a.max(b)));
            }
        }
    }
    out.sort_unstable();
    out
}

/// Refinement law for the boundary band: halving the angular step must not increase the
/// largest jump, and for a continuous map should halve it up to a factor of 4.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RefinementLaw {
    pub coarse: f64,
    pub fine: f64,
    pub ratio: f64,
    pub non_increasing: bool,
    pub within_factor: bool,
    /// The jump does not shrink under refinement: the signature of a discontinuity.
    pub persistent: bool,
}

impl RefinementLaw {
    pub const FACTOR: f64 = 4.0;

    pub fn compare(coarse: f64, fine: f64) -> Self {
        let half = coarse / 2.0;
        let ratio = if coarse > 0.0 { fine / coarse } else { 0.0 };
        RefinementLaw {
            coarse,
            fine,
            ratio,
            non_increasing: fine <= coarse * (1.0 + 1e-9) + 1e-15,
            within_factor: fine <= Self::FACTOR * half && fine >= half / Self::FACTOR,
            persistent: coarse > 0.0 && ratio > 0.75,
        }
    }

    pub fn holds(&self) -> bool {
        self.non_increasing && self.within_factor
    }
}

/// Symmetric Hausdorff distance between two finite point sets.
pub fn hausdorff_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let directed = |from: &[Vec<f64>], to: &[Vec<f64>]| {
        from.par_iter()
            .map(|p| to.iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min))
            .reduce(|| 0.0, f64::max)
    };
    directed(a, b).max(directed(b, a))
}
