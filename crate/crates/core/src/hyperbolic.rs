//! Stationary points: location, hyperbolic splitting, Morse index, adapted norm and
//! the empirical connection graph between points.

use std::collections::BTreeMap;

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::flow::{FlowError, FlowSystem, Mode, Termination};
use crate::linalg::{canonical_signs, complement, orthonormal_columns};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HyperbolicError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("point is not stationary: |field| = {residual:e}")]
    NotStationary { residual: f64 },
    #[error("non-hyperbolic: eigenvalue with |Re| = {min_real:e}")]
    NonHyperbolic { min_real: f64 },
    #[error("adapted norm verification failed down to rate {rate:e}")]
    AdaptedNorm { rate: f64 },
    #[error("orbit from point {from}, sample {sample} did not resolve before the time guard")]
    UnresolvedOrbit { from: usize, sample: usize },
    #[error("singular linear algebra: {0}")]
    Singular(&'static str),
}

/// Inner-product norms on the two invariant factors, combined by max.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptedNorm {
    /// Upper-triangular factor with `‖a‖_u = |r_u a|` on unstable basis coordinates.
    pub r_u: DMatrix<f64>,
    pub r_s: DMatrix<f64>,
    pub rate: f64,
}

/// A hyperbolic stationary point with its linear data.
#[derive(Clone, Debug)]
pub struct HyperbolicPoint {
    pub location: DVector<f64>,
    /// Jacobian of the effective field (ambient coordinates).
    pub linearization: DMatrix<f64>,
    /// Orthonormal basis of the phase-space tangent space at the point.
    pub tangent: DMatrix<f64>,
    pub unstable: DMatrix<f64>,
    pub stable: DMatrix<f64>,
    pub index: usize,
    pub rate: f64,
    pub eigenvalues: Vec<Complex<f64>>,
    pub norm: AdaptedNorm,
    pub r_max: f64,
    /// Level function for surface systems; charts are graphs over the tangent plane.
    level: Option<crate::expr::Expression>,
    // [Bu Bs]^{-1} in ambient coordinates (rows: unstable then stable coordinates).
    split_matrix: DMatrix<f64>,
}

impl HyperbolicPoint {
    pub fn dim(&self) -> usize {
        self.tangent.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.location.len()
    }

    pub fn stable_dim(&self) -> usize {
        self.dim() - self.index
    }

    /// Unstable and stable basis coordinates of an ambient displacement.
    pub fn basis_coords(&self, v: &[f64]) -> (DVector<f64>, DVector<f64>) {
        let c = &self.split_matrix * DVector::from_column_slice(v);
        let k = self.index;
        (c.rows(0, k).into_owned(), c.rows(k, self.stable_dim()).into_owned())
    }

    /// Adapted coordinates `(a_u, a_s)` of an ambient displacement.
    pub fn split(&self, v: &[f64]) -> (DVector<f64>, DVector<f64>) {
        let (cu, cs) = self.basis_coords(v);
        (&self.norm.r_u * cu, &self.norm.r_s * cs)
    }

    /// Ambient displacement with adapted coordinates `(a_u, a_s)`.
    pub fn join(&self, a_u: &[f64], a_s: &[f64]) -> DVector<f64> {
        let cu = solve_upper(&self.norm.r_u, a_u);
        let cs = solve_upper(&self.norm.r_s, a_s);
        &self.unstable * cu + &self.stable * cs
    }

    /// Linear map from adapted coordinates (u then s) to ambient displacements.
    pub fn join_matrix(&self) -> DMatrix<f64> {
        let n = self.ambient_dim();
        let d = self.dim();
        let mut m = DMatrix::zeros(n, d);
        for j in 0..d {
            let mut e = vec![0.0; d];
            e[j] = 1.0;
            let col = self.join(&e[..self.index], &e[self.index..]);
            m.set_column(j, &col);
        }
        m
    }

    /// Linear map from ambient displacements to adapted coordinates (u then s).
    pub fn split_matrix_adapted(&self) -> DMatrix<f64> {
        let d = self.dim();
        let n = self.ambient_dim();
        let mut m = DMatrix::zeros(d, n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let (u, s) = self.split(&e);
            for i in 0..self.index {
                m[(i, j)] = u[i];
            }
            for i in 0..self.stable_dim() {
                m[(self.index + i, j)] = s[i];
            }
        }
        m
    }

    pub fn adapted_norm(&self, v: &[f64]) -> f64 {
        let (u, s) = self.split(v);
        u.norm().max(s.norm())
    }

    /// Projector onto E^u along E^s (ambient).
    pub fn p_u(&self) -> DMatrix<f64> {
        let k = self.index;
        &self.unstable * self.split_matrix.rows(0, k)
    }

    pub fn p_s(&self) -> DMatrix<f64> {
        let k = self.index;
        &self.stable * self.split_matrix.rows(k, self.stable_dim())
    }

    /// Chart point `X(u, s)` near the stationary point in adapted coordinates.
    ///
    /// For surface systems the tangent-plane point is lifted to the level set along the
    /// normal at the stationary point, so `chart_inverse` is exact.
    pub fn chart(&self, a_u: &[f64], a_s: &[f64]) -> DVector<f64> {
        let mut p = &self.location + self.join(a_u, a_s);
        if let Some(level) = &self.level {
            let nu = complement(&self.tangent).column(0).into_owned();
            for _ in 0..30 {
                let (Ok(val), Ok(g)) = (level.eval(p.as_slice()), level.gradient(p.as_slice())) else {
                    break;
                };
                let dn = g.dot(&nu);
                if dn.abs() < 1e-14 {
                    break;
                }
                let step = val / dn;
                p -= &nu * step;
                if step.abs() < 1e-16 {
                    break;
                }
            }
        }
        p
    }

    pub fn chart_inverse(&self, p: &[f64]) -> (DVector<f64>, DVector<f64>) {
        let v: Vec<f64> = p.iter().zip(self.location.iter()).map(|(a, b)| a - b).collect();
        self.split(&v)
    }

    /// Differential of `chart` at `(a_u, a_s)` applied to the adapted-coordinate
    /// displacements in the columns of `da` (rows: u then s).
    pub fn chart_differential(&self, a_u: &[f64], a_s: &[f64], da: &DMatrix<f64>) -> DMatrix<f64> {
        let dq = self.join_matrix() * da;
        let Some(level) = &self.level else {
            return dq;
        };
        let p = self.chart(a_u, a_s);
        let Ok(g) = level.gradient(p.as_slice()) else {
            return dq;
        };
        let nu = complement(&self.tangent).column(0).into_owned();
        let gn = g.dot(&nu);
        if gn.abs() < 1e-14 {
            return dq;
        }
        let corr = g.transpose() * &dq / gn;
        dq - nu * corr
    }
}

fn solve_upper(r: &DMatrix<f64>, b: &[f64]) -> DVector<f64> {
    let b = DVector::from_column_slice(b);
    if r.nrows() == 0 {
        return b;
    }
    r.solve_upper_triangular(&b).expect("adapted-norm factor is invertible")
}

/// Result of a Newton search from a list of seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticalSearch {
    /// Converged, deduplicated roots in lexicographic order.
    pub points: Vec<DVector<f64>>,
    /// Indices of seeds whose iteration failed.
    pub failed: Vec<usize>,
}

pub const DEDUP_RADIUS: f64 = 1e-6;

fn residual(sys: &FlowSystem, x: &[f64]) -> Result<DVector<f64>, FlowError> {
    let v = sys.velocity(x)?;
    match sys.mode() {
        Mode::Ambient => Ok(v),
        Mode::Surface(level) => {
            let mut r = v.iter().copied().collect::<Vec<_>>();
            r.push(level.eval(x)?);
            Ok(DVector::from_vec(r))
        }
    }
}

fn residual_jacobian(sys: &FlowSystem, x: &[f64]) -> Result<DMatrix<f64>, FlowError> {
    let j = sys.velocity_jacobian(x)?;
    match sys.mode() {
        Mode::Ambient => Ok(j),
        Mode::Surface(level) => {
            let n = x.len();
            let g = level.gradient(x)?;
            let mut m = DMatrix::zeros(n + 1, n);
            m.rows_mut(0, n).copy_from(&j);
            m.row_mut(n).copy_from(&g.transpose());
            Ok(m)
        }
    }
}

fn newton(sys: &FlowSystem, seed: &[f64]) -> Option<DVector<f64>> {
    let mut x = DVector::from_column_slice(seed);
    let mut r = residual(sys, x.as_slice()).ok()?;
    for _ in 0..200 {
        let rn = r.norm();
        if rn < 1e-14 {
            break;
        }
        let j = residual_jacobian(sys, x.as_slice()).ok()?;
        let step = j.svd(true, true).solve(&r, 1e-14).ok()?;
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial = &x - &step * alpha;
            if let Ok(rt) = residual(sys, trial.as_slice()) {
                if rt.norm() < (1.0 - 1e-4 * alpha) * rn || rt.norm() < 1e-15 {
                    x = trial;
                    r = rt;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let v = sys.velocity(x.as_slice()).ok()?;
    let level_ok = match sys.mode() {
        Mode::Ambient => true,
        Mode::Surface(level) => level.eval(x.as_slice()).map(|v| v.abs() < 1e-12).unwrap_or(false),
    };
    (v.norm() < 1e-10 && level_ok && x.iter().all(|c| c.is_finite())).then_some(x)
}

/// Damped Newton from each seed; roots within [`DEDUP_RADIUS`] are merged.
pub fn find_critical_points(sys: &FlowSystem, seeds: &[Vec<f64>]) -> CriticalSearch {
    let results: Vec<Option<DVector<f64>>> = seeds.par_iter().map(|s| newton(sys, s)).collect();
    let mut points: Vec<DVector<f64>> = Vec::new();
    let mut failed = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Some(p) => {
                if !points.iter().any(|q| (q - &p).norm() < DEDUP_RADIUS) {
                    points.push(p);
                }
            }
            None => failed.push(i),
        }
    }
    // Lexicographic with coordinates closer than the dedup radius treated as equal.
    points.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .find(|(x, y)| (*x - *y).abs() >= DEDUP_RADIUS)
            .map_or(std::cmp::Ordering::Equal, |(x, y)| x.total_cmp(y))
    });
    CriticalSearch { points, failed }
}

/// Matrix sign function by scaled Newton iteration.
pub fn matrix_sign(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let d = a.nrows();
    if d == 0 {
        return Some(a.clone());
    }
    let mut s = a.clone();
    for _ in 0..100 {
        let inv = s.clone().try_inverse()?;
        let det = s.determinant().abs();
        let mu = if det > 0.0 && det.is_finite() { det.powf(-1.0 / d as f64) } else { 1.0 };
        let next = (&s * mu + inv / mu) * 0.5;
        let diff = (&next - &s).norm();
        s = next;
        if diff < 1e-14 * s.norm() {
            break;
        }
    }
    // Polish without scaling.
    for _ in 0..3 {
        let inv = s.clone().try_inverse()?;
        s = (&s + inv) * 0.5;
    }
    Some(s)
}

/// Solves `Aᵀ Q + Q A = −I` via the Kronecker-product linear system.
fn lyapunov(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let m = a.nrows();
    let id = DMatrix::<f64>::identity(m, m);
    let at = a.transpose();
    let big = id.kronecker(&at) + at.kronecker(&id);
    let rhs = -DVector::from_column_slice(id.as_slice());
    let q = big.lu().solve(&rhs)?;
    let q = DMatrix::from_column_slice(m, m, q.as_slice());
    Some((&q + q.transpose()) * 0.5)
}

/// Cholesky factor `R` (upper) of an inner product making `e^{tM}` an `e^{-λt}` contraction.
fn contraction_factor(m: &DMatrix<f64>, rate: f64) -> Option<DMatrix<f64>> {
    let d = m.nrows();
    if d == 0 {
        return Some(DMatrix::zeros(0, 0));
    }
    let sym = (m + m.transpose()) * 0.5;
    let top = sym.symmetric_eigenvalues().max();
    if top <= -rate {
        return Some(DMatrix::identity(d, d));
    }
    let a = m + DMatrix::identity(d, d) * rate;
    let q = lyapunov(&a)?;
    let top = q.symmetric_eigenvalues().max();
    let q = q / top;
    let l = q.cholesky()?.l();
    Some(l.transpose())
}

fn verify_contraction(m: &DMatrix<f64>, r: &DMatrix<f64>, rate: f64, rng: &mut ChaCha8Rng) -> bool {
    let d = m.nrows();
    if d == 0 {
        return true;
    }
    for step in 1..=20 {
        let t = 0.1 * step as f64;
        let e = (m * t).exp();
        for _ in 0..100 {
            let v = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
            let lhs = (r * &e * &v).norm();
            let rhs = (-rate * t).exp() * (r * &v).norm();
            if lhs > rhs * (1.0 + 1e-10) + 1e-14 {
                return false;
            }
        }
    }
    true
}

/// Hyperbolicity, splitting, index and adapted norm at a stationary point.
pub fn classify(sys: &FlowSystem, x: &[f64]) -> Result<HyperbolicPoint, HyperbolicError> {
    let v = sys.velocity(x)?;
    if v.norm() >= 1e-8 {
        return Err(HyperbolicError::NotStationary { residual: v.norm() });
    }
    let jac = sys.velocity_jacobian(x)?;
    let tangent = sys.tangent_basis(x)?;
    let lt = tangent.transpose() * &jac * &tangent;
    let d = lt.nrows();
    let eigenvalues: Vec<Complex<f64>> = lt.complex_eigenvalues().iter().copied().collect();
    let min_real = eigenvalues.iter().map(|e| e.re.abs()).fold(f64::INFINITY, f64::min);
    if min_real < 1e-6 {
        return Err(HyperbolicError::NonHyperbolic { min_real });
    }
    let index = eigenvalues.iter().filter(|e| e.re > 0.0).count();
    let sign = matrix_sign(&lt).ok_or(HyperbolicError::Singular("matrix sign iteration"))?;
    let id = DMatrix::<f64>::identity(d, d);
    let pu = (&id + &sign) * 0.5;
    let ps = (&id - &sign) * 0.5;
    let mut vu = orthonormal_columns(&pu, 1e-6);
    let mut vs = orthonormal_columns(&ps, 1e-6);
    if vu.ncols() != index || vs.ncols() != d - index {
        return Err(HyperbolicError::Singular("invariant subspace rank"));
    }
    canonical_signs(&mut vu);
    canonical_signs(&mut vs);
    let mut unstable = &tangent * &vu;
    let mut stable = &tangent * &vs;
    canonical_signs(&mut unstable);
    canonical_signs(&mut stable);
    let vu = tangent.transpose() * &unstable;
    let vs = tangent.transpose() * &stable;

    let mut both = DMatrix::zeros(d, d);
    both.columns_mut(0, index).copy_from(&vu);
    both.columns_mut(index, d - index).copy_from(&vs);
    let inv = both.clone().try_inverse().ok_or(HyperbolicError::Singular("splitting basis"))?;
    let split_matrix = &inv * tangent.transpose();

    let mu_block = vu.transpose() * &lt * &vu;
    let ms_block = vs.transpose() * &lt * &vs;
    let mut rate = 0.9 * min_real;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let norm = loop {
        let ru = contraction_factor(&(-&mu_block), rate);
        let rs = contraction_factor(&ms_block, rate);
        if let (Some(ru), Some(rs)) = (ru, rs) {
            if verify_contraction(&(-&mu_block), &ru, rate, &mut rng) && verify_contraction(&ms_block, &rs, rate, &mut rng) {
                break AdaptedNorm { r_u: ru, r_s: rs, rate };
            }
        }
        rate *= 0.5;
        if rate < 1e-3 * min_real {
            return Err(HyperbolicError::AdaptedNorm { rate });
        }
    };
    let level = match sys.mode() {
        Mode::Ambient => None,
        Mode::Surface(level) => Some(level.clone()),
    };
    Ok(HyperbolicPoint {
        location: DVector::from_column_slice(x),
        linearization: jac,
        tangent,
        unstable,
        stable,
        index,
        rate: norm.rate,
        eigenvalues,
        norm,
        r_max: 1.0,
        level,
        split_matrix,
    })
}

/// Unit directions in ℝᵏ: the signed coordinate axes first, then `extra` generic ones.
pub fn sphere_directions(k: usize, extra: usize) -> Vec<DVector<f64>> {
    let mut dirs = Vec::new();
    for i in 0..k {
        for s in [1.0, -1.0] {
            let mut v = DVector::zeros(k);
            v[i] = s;
            dirs.push(v);
        }
    }
    match k {
        0 => {}
        1 => {}
        2 => {
            for j in 0..extra {
                let a = std::f64::consts::TAU * (j as f64 + 0.5) / extra as f64;
                dirs.push(DVector::from_vec(vec![a.cos(), a.sin()]));
            }
        }
        _ => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            for j in 0..extra {
                let z = 1.0 - 2.0 * (j as f64 + 0.5) / extra as f64;
                let r = (1.0 - z * z).sqrt();
                let a = golden * j as f64;
                let mut v = DVector::zeros(k);
                v[0] = r * a.cos();
                v[1] = r * a.sin();
                v[2] = z;
                dirs.push(v.normalize());
            }
        }
    }
    dirs
}

/// Observed heteroclinic connections between classified points.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ConnectionGraph {
    /// `(from, to) -> number of samples` realizing the connection.
    pub edges: BTreeMap<(usize, usize), usize>,
    /// `(from, sample)` pairs whose orbit left every bounded region.
    pub escaped: Vec<(usize, usize)>,
    /// Edges that fail to decrease the Morse index.
    pub index_violations: Vec<(usize, usize)>,
}

impl ConnectionGraph {
    pub fn targets(&self, from: usize) -> Vec<usize> {
        self.edges.keys().filter(|(a, _)| *a == from).map(|(_, b)| *b).collect()
    }
}

pub const SAMPLE_RADIUS: f64 = 1e-5;
pub const CAPTURE_RADIUS: f64 = 1e-6;

/// Integrates samples from small spheres in every unstable space and records which
/// stationary point each orbit reaches.
pub fn connection_graph(sys: &FlowSystem, points: &[HyperbolicPoint], n_samples: usize) -> Result<ConnectionGraph, HyperbolicError> {
    let targets: Vec<(DVector<f64>, f64)> = points.iter().map(|p| (p.location.clone(), CAPTURE_RADIUS)).collect();
    let mut jobs = Vec::new();
    for (i, p) in points.iter().enumerate() {
        if p.index == 0 {
            continue;
        }
        for (j, dir) in sphere_directions(p.index, n_samples).into_iter().enumerate() {
            jobs.push((i, j, dir));
        }
    }
    let outcomes: Vec<Result<(usize, usize, Option<usize>), HyperbolicError>> = jobs
        .par_iter()
        .map(|(i, j, dir)| {
            let p = &points[*i];
            let a_u: Vec<f64> = dir.iter().map(|c| c * SAMPLE_RADIUS).collect();
            let zeros = vec![0.0; p.stable_dim()];
            let start = p.chart(&a_u, &zeros);
            let traj = sys.run_to_limit(start.as_slice(), &targets, false)?;
            let end = DVector::from_column_slice(traj.last());
            let hit = match traj.termination {
                Termination::Captured(t) => Some(t),
                Termination::ConvergedToPoint => {
                    let near = points.iter().position(|q| (&q.location - &end).norm() < 1e-4);
                    match near {
                        Some(t) => Some(t),
                        None => return Err(HyperbolicError::UnresolvedOrbit { from: *i, sample: *j }),
                    }
                }
                Termination::Escaped => None,
                _ => return Err(HyperbolicError::UnresolvedOrbit { from: *i, sample: *j }),
            };
            Ok((*i, *j, hit))
        })
        .collect();
    let mut graph = ConnectionGraph::default();
    for o in outcomes {
        let (i, j, hit) = o?;
        match hit {
            Some(t) => {
                *graph.edges.entry((i, t)).or_insert(0) += 1;
            }
            None => graph.escaped.push((i, j)),
        }
    }
    graph.index_violations = graph.edges.keys().filter(|(a, b)| points[*a].index <= points[*b].index).copied().collect();
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotational_source() {
        let sys = FlowSystem::from_exprs(&["x - 5*y", "5*x + y"]).unwrap();
        let h = classify(&sys, &[0.0, 0.0]).unwrap();
        assert_eq!(h.index, 2);
        assert!((h.rate - 0.9).abs() < 1e-12);
        assert_eq!(h.norm.r_u, DMatrix::identity(2, 2));
    }

    #[test]
    fn diagonal_saddle_has_identity_norm() {
        let sys = FlowSystem::from_exprs(&["2*x", "-3*y"]).unwrap();
        let h = classify(&sys, &[0.0, 0.0]).unwrap();
        assert_eq!(h.index, 1);
        assert_eq!(h.unstable, DMatrix::from_column_slice(2, 1, &[1.0, 0.0]));
        assert_eq!(h.stable, DMatrix::from_column_slice(2, 1, &[0.0, 1.0]));
        assert!((h.rate - 1.8).abs() < 1e-12);
        let pu = h.p_u();
        let ps = h.p_s();
        assert!((&pu + &ps - DMatrix::identity(2, 2)).norm() < 1e-14);
        assert!((&pu * &ps).norm() < 1e-14);
        assert_eq!(h.adapted_norm(&[0.3, -0.5]), 0.5);
    }

    #[test]
    fn non_normal_stable_block_needs_lyapunov_norm() {
        let sys = FlowSystem::from_exprs(&["-x + 20*y", "-y"]).unwrap();
        let h = classify(&sys, &[0.0, 0.0]).unwrap();
        assert_eq!(h.index, 0);
        assert!(h.norm.r_s != DMatrix::identity(2, 2));
    }

    #[test]
    fn non_hyperbolic_is_rejected() {
        let sys = FlowSystem::from_exprs(&["-y", "x"]).unwrap();
        assert!(matches!(classify(&sys, &[0.0, 0.0]), Err(HyperbolicError::NonHyperbolic { .. })));
    }

    #[test]
    fn join_inverts_split() {
        let sys = FlowSystem::from_exprs(&["x + y", "-2*y + 0.5*x*0"]).unwrap();
        let h = classify(&sys, &[0.0, 0.0]).unwrap();
        let v = [0.7, -0.2];
        let (u, s) = h.split(&v);
        let back = h.join(u.as_slice(), s.as_slice());
        assert!((back[0] - v[0]).abs() < 1e-14 && (back[1] - v[1]).abs() < 1e-14);
    }
}
