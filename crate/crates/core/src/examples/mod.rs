//! Built-in reference systems with hand-derived data.

pub mod charts;

use nalgebra::{DMatrix, DVector};

use crate::expr::Expression;
use crate::flow::{FlowSystem, GradientField, IntegratorSettings};
use std::sync::Arc;

/// A named system with its expected stationary points and Morse indices.
#[derive(Clone, Debug)]
pub struct ReferenceSystem {
    pub name: String,
    pub system: FlowSystem,
    /// Lyapunov function decreasing along orbits, when one is known in closed form.
    pub potential: Option<Expression>,
    pub expected: Vec<(DVector<f64>, usize)>,
    pub seeds: Vec<Vec<f64>>,
}

impl ReferenceSystem {
    pub fn expected_index(&self, p: &DVector<f64>, tol: f64) -> Option<usize> {
        self.expected.iter().find(|(q, _)| (q - p).norm() < tol).map(|(_, k)| *k)
    }
}

pub const BUILTIN_NAMES: [&str; 5] = ["linear_saddle", "quad_saddle", "square4", "sphere_height", "noncell"];

pub fn builtin(name: &str) -> Option<ReferenceSystem> {
    Some(match name {
        "linear_saddle" => linear_saddle(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]))),
        "quad_saddle" => quad_saddle(),
        "square4" => square4(),
        "sphere_height" => sphere_height(),
        "noncell" => crate::counterexample::noncell_reference(),
        _ => return None,
    })
}

fn linear_exprs(l: &DMatrix<f64>) -> Vec<String> {
    (0..l.nrows())
        .map(|i| {
            let terms: Vec<String> = (0..l.ncols())
                .filter(|&j| l[(i, j)] != 0.0)
                .map(|j| format!("{:?}*x{}", l[(i, j)], j + 1))
                .collect();
            if terms.is_empty() {
                "0".to_string()
            } else {
                terms.join(" + ")
            }
        })
        .collect()
}

/// `ẋ = Lx`.
pub fn linear_saddle(l: &DMatrix<f64>) -> ReferenceSystem {
    let n = l.nrows();
    let exprs = linear_exprs(l);
    let refs: Vec<&str> = exprs.iter().map(|s| s.as_str()).collect();
    let comps = refs.iter().map(|s| Expression::parse(s, n)).collect::<Result<Vec<_>, _>>().expect("generated linear field parses");
    let system = FlowSystem::new(Arc::new(crate::flow::ExprField::new(comps)));
    let index = l.complex_eigenvalues().iter().filter(|e| e.re > 0.0).count();
    ReferenceSystem {
        name: "linear_saddle".into(),
        system,
        potential: None,
        expected: vec![(DVector::zeros(n), index)],
        seeds: vec![vec![0.1; n], vec![-0.2; n]],
    }
}

/// `ẋ = x, ẏ = −y + x²`; the unstable manifold of the origin is the graph of `x²/3`.
pub fn quad_saddle() -> ReferenceSystem {
    ReferenceSystem {
        name: "quad_saddle".into(),
        system: FlowSystem::from_exprs(&["x", "-y + x^2"]).expect("static field"),
        potential: None,
        expected: vec![(DVector::zeros(2), 1)],
        seeds: vec![vec![0.1, 0.1], vec![-0.3, 0.2]],
    }
}

pub const SQUARE4_POTENTIAL: &str = "-x^2 - y^2 + (x^4 + y^4)/2";

/// Negative gradient of `-x² - y² + (x⁴ + y⁴)/2`: `ẋ = 2x(1 − x²)`, `ẏ = 2y(1 − y²)`.
pub fn square4() -> ReferenceSystem {
    let mut expected = Vec::new();
    for x in [-1.0, 0.0, 1.0] {
        for y in [-1.0, 0.0, 1.0] {
            let k = usize::from(x == 0.0) + usize::from(y == 0.0);
            expected.push((DVector::from_vec(vec![x, y]), k));
        }
    }
    let mut seeds = Vec::new();
    for i in 0..7 {
        for j in 0..7 {
            seeds.push(vec![-1.2 + 0.4 * i as f64, -1.2 + 0.4 * j as f64]);
        }
    }
    ReferenceSystem {
        name: "square4".into(),
        system: FlowSystem::from_exprs(&["2*x*(1 - x^2)", "2*y*(1 - y^2)"]).expect("static field"),
        potential: Some(Expression::parse(SQUARE4_POTENTIAL, 2).expect("static potential")),
        expected,
        seeds,
    }
}

/// Height function `z` on the unit sphere, flowing downhill.
pub fn sphere_height() -> ReferenceSystem {
    let level = Expression::parse("x^2 + y^2 + z^2 - 1", 3).expect("static level");
    let system = FlowSystem::new(Arc::new(GradientField::new(Expression::parse("z", 3).expect("static"))))
        .with_surface(level)
        .with_settings(IntegratorSettings { t_max_guard: 200.0, ..Default::default() });
    ReferenceSystem {
        name: "sphere_height".into(),
        system,
        potential: Some(Expression::parse("z", 3).expect("static")),
        expected: vec![(DVector::from_vec(vec![0.0, 0.0, -1.0]), 0), (DVector::from_vec(vec![0.0, 0.0, 1.0]), 2)],
        seeds: vec![vec![0.1, 0.0, 0.99], vec![0.0, 0.1, -0.99], vec![0.0, 0.0, 1.2], vec![0.05, -0.05, -0.8]],
    }
}

/// Time coordinate of the 1D flow `ẋ = 2x(1 − x²)`: `T(x) = ¼ ln(x² / |1 − x²|)`, so `T' = 1/(2x(1−x²))`.
pub fn square_time(x: f64) -> f64 {
    0.25 * (x * x / (1.0 - x * x).abs()).ln()
}

/// Inverse of [`square_time`] on `(0, 1)`.
pub fn square_time_inv_inner(c: f64) -> f64 {
    let e = (4.0 * c).exp();
    (e / (1.0 + e)).sqrt()
}

/// Inverse of [`square_time`] on `(1, ∞)`.
pub fn square_time_inv_outer(c: f64) -> f64 {
    let e = (4.0 * c).exp();
    (e / (e - 1.0)).sqrt()
}

/// Closed-form solution of `ẋ = 2x(1 − x²)`.
pub fn square_orbit(x0: f64, t: f64) -> f64 {
    if x0 == 0.0 {
        return 0.0;
    }
    let e = (4.0 * t).exp();
    let x2 = x0 * x0 * e / (1.0 - x0 * x0 + x0 * x0 * e);
    x0.signum() * x2.sqrt()
}

/// Points along `∂([−1, 1]²) = cl(Wᵘ(0)) ∖ Wᵘ(0)` for square4, at most `spacing` apart.
pub fn square4_boundary(spacing: f64) -> Vec<Vec<f64>> {
    let m = (2.0 / spacing).ceil() as usize;
    let mut pts = Vec::with_capacity(4 * m);
    for i in 0..m {
        let s = -1.0 + 2.0 * i as f64 / m as f64;
        pts.extend([vec![s, -1.0], vec![1.0, s], vec![-s, 1.0], vec![-1.0, -s]]);
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_time_is_additive() {
        for &x in &[0.1, 0.5, 0.9, 1.3] {
            let y = square_orbit(x, 0.37);
            assert!((square_time(y) - square_time(x) - 0.37).abs() < 1e-12);
        }
        assert!((square_time_inv_inner(square_time(0.3)) - 0.3).abs() < 1e-14);
        assert!((square_time_inv_outer(square_time(1.7)) - 1.7).abs() < 1e-13);
    }

    #[test]
    fn square4_closed_form_orbit() {
        let sys = square4().system;
        let y = sys.flow_map(&[0.5, 0.5], 12.0).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-6 && (y[1] - 1.0).abs() < 1e-6);
        let y = sys.flow_map(&[0.3, -0.2], 0.8).unwrap();
        assert!((y[0] - square_orbit(0.3, 0.8)).abs() < 1e-9);
        assert!((y[1] - square_orbit(-0.2, 0.8)).abs() < 1e-9);
    }
}
