//! Small dense linear-algebra helpers shared by the numerical modules.

use nalgebra::{DMatrix, DVector};

/// Modified Gram–Schmidt over the columns in order, dropping columns whose residual
/// norm falls below `tol` (relative to the largest column norm).
pub fn orthonormal_columns(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let scale = m.column_iter().map(|c| c.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for c in m.column_iter() {
        let mut v: DVector<f64> = c.into_owned();
        for _ in 0..2 {
            for b in &basis {
                let d = b.dot(&v);
                v.axpy(-d, b, 1.0);
            }
        }
        let nv = v.norm();
        if nv > tol * scale {
            basis.push(v / nv);
        }
    }
    if basis.is_empty() {
        return DMatrix::zeros(m.nrows(), 0);
    }
    DMatrix::from_columns(&basis)
}

/// Orthonormal basis of the orthogonal complement of the column span of `q` (orthonormal).
pub fn complement(q: &DMatrix<f64>) -> DMatrix<f64> {
    let n = q.nrows();
    let p = DMatrix::identity(n, n) - q * q.transpose();
    orthonormal_columns(&p, 1e-8)
}

/// Flips each column so that its entry of largest magnitude is positive.
pub fn canonical_signs(m: &mut DMatrix<f64>) {
    for mut c in m.column_iter_mut() {
        let (mut best, mut idx) = (0.0, 0);
        for (i, v) in c.iter().enumerate() {
            if v.abs() > best + 1e-12 {
                best = v.abs();
                idx = i;
            }
        }
        if c[idx] < 0.0 {
            c.neg_mut();
        }
    }
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gram_schmidt_drops_dependent_columns() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let q = orthonormal_columns(&m, 1e-10);
        assert_eq!(q.ncols(), 2);
        assert!((q.transpose() * &q - DMatrix::identity(2, 2)).norm() < 1e-14);
        let c = complement(&q);
        assert_eq!(c.ncols(), 1);
        assert!((c[(2, 0)].abs() - 1.0).abs() < 1e-14);
    }
}
