//! Principal angles, the transversality measure and heteroclinic transversality scans.

mod scan;

use std::f64::consts::FRAC_PI_2;

use nalgebra::DMatrix;
use rand::Rng;
use thiserror::Error;

use crate::linalg::orthonormal_columns;

pub use scan::{transversality_scan, ScanRecord, ScanReport};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransversalityError {
    #[error("subspaces live in different ambient dimensions ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("dimensions {dv} + {dw} fall short of the ambient dimension {n}")]
    DimensionDeficit { dv: usize, dw: usize, n: usize },
}

/// A linear subspace given by an orthonormal basis (columns).
#[derive(Clone, Debug, PartialEq)]
pub struct Subspace {
    basis: DMatrix<f64>,
}

impl Subspace {
    /// Orthonormalizes the columns of `spanning`, dropping dependent ones.
    pub fn from_spanning(spanning: &DMatrix<f64>) -> Self {
        Subspace { basis: orthonormal_columns(spanning, 1e-12) }
    }

    pub fn full(n: usize) -> Self {
        Subspace { basis: DMatrix::identity(n, n) }
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn ambient(&self) -> usize {
        self.basis.nrows()
    }

    pub fn random<R: Rng>(rng: &mut R, n: usize, d: usize) -> Self {
        loop {
            let m = DMatrix::from_fn(n, d, |_, _| gaussian(rng));
            let s = Subspace::from_spanning(&m);
            if s.dim() == d {
                return s;
            }
        }
    }
}

pub(crate) fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    // Box–Muller; one variate per call keeps call sites simple.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn lex_greater(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    for (x, y) in a.iter().zip(b.iter()) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Greater => return true,
            std::cmp::Ordering::Less => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    false
}

/// Ascending principal angles, `min(dim V, dim W)` of them.
pub fn principal_angles(v: &Subspace, w: &Subspace) -> Result<Vec<f64>, TransversalityError> {
    if v.ambient() != w.ambient() {
        return Err(TransversalityError::DimensionMismatch(v.ambient(), w.ambient()));
    }
    // Order the pair canonically so the result is exactly symmetric.
    let (big, small) = if v.dim() > w.dim() || (v.dim() == w.dim() && !lex_greater(v.basis(), w.basis())) { (v, w) } else { (w, v) };
    let count = small.dim();
    if count == 0 {
        return Ok(Vec::new());
    }
    let qb = big.basis();
    let qs = small.basis();
    let overlap = qb.transpose() * qs;
    let mut cosines: Vec<f64> = overlap.singular_values().iter().map(|s| s.clamp(0.0, 1.0)).collect();
    cosines.sort_by(|a, b| b.total_cmp(a));
    cosines.truncate(count);
    let residual = qs - qb * &overlap;
    let mut sines: Vec<f64> = residual.singular_values().iter().map(|s| s.clamp(0.0, 1.0)).collect();
    sines.sort_by(|a, b| a.total_cmp(b));
    Ok(cosines
        .iter()
        .zip(&sines)
        .map(|(&c, &s)| if c > 0.99 { s.asin() } else { c.acos() })
        .collect())
}

/// The max–min angle over complementary-dimensional subspace pairs, evaluated in closed
/// form as the `(m+1)`-th smallest principal angle with `m = dim V + dim W − n`.
pub fn transversality_measure(v: &Subspace, w: &Subspace) -> Result<f64, TransversalityError> {
    let n = v.ambient();
    if n != w.ambient() {
        return Err(TransversalityError::DimensionMismatch(n, w.ambient()));
    }
    if v.dim() + w.dim() < n {
        return Err(TransversalityError::DimensionDeficit { dv: v.dim(), dw: w.dim(), n });
    }
    let m = v.dim() + w.dim() - n;
    let angles = principal_angles(v, w)?;
    Ok(angles.get(m).copied().unwrap_or(FRAC_PI_2))
}

fn min_angle(a: &Subspace, b: &Subspace) -> f64 {
    if a.dim() == 0 || b.dim() == 0 {
        return FRAC_PI_2;
    }
    principal_angles(a, b).map(|v| v[0]).unwrap_or(0.0)
}

/// Brute-force lower bound for the max–min: random subspace pairs of complementary
/// dimensions, followed by a local random-search polish of the best candidates.
pub fn oracle_measure<R: Rng>(rng: &mut R, v: &Subspace, w: &Subspace, samples: usize, polish_rounds: usize) -> f64 {
    let n = v.ambient();
    let lo = n.saturating_sub(w.dim());
    let hi = v.dim().min(n);
    if lo > hi {
        return 0.0;
    }
    let mut best: Vec<(f64, DMatrix<f64>, DMatrix<f64>)> = Vec::new();
    for i in 0..samples {
        let dv0 = lo + i % (hi - lo + 1);
        let dw0 = n - dv0;
        let cv = DMatrix::from_fn(v.dim(), dv0, |_, _| gaussian(rng));
        let cw = DMatrix::from_fn(w.dim(), dw0, |_, _| gaussian(rng));
        let score = min_angle(&Subspace::from_spanning(&(v.basis() * &cv)), &Subspace::from_spanning(&(w.basis() * &cw)));
        best.push((score, cv, cw));
        if best.len() > 64 {
            best.sort_by(|a, b| b.0.total_cmp(&a.0));
            best.truncate(16);
        }
    }
    best.sort_by(|a, b| b.0.total_cmp(&a.0));
    best.truncate(8);
    let mut top = best.first().map_or(0.0, |b| b.0);
    for (mut score, mut cv, mut cw) in best {
        let mut step = 0.3;
        for _ in 0..polish_rounds {
            let tv = &cv + DMatrix::from_fn(cv.nrows(), cv.ncols(), |_, _| step * gaussian(rng));
            let tw = &cw + DMatrix::from_fn(cw.nrows(), cw.ncols(), |_, _| step * gaussian(rng));
            let s = min_angle(&Subspace::from_spanning(&(v.basis() * &tv)), &Subspace::from_spanning(&(w.basis() * &tw)));
            if s > score {
                score = s;
                cv = tv;
                cw = tw;
            } else {
                step *= 0.97;
            }
            step = step.max(1e-6);
        }
        top = top.max(score);
    }
    top
}
