//! The foliation of the plane by the cubics `y = (x − x₀)³`, whose unit tangent field is
//! continuous but not uniquely integrable through points of the x-axis.

use crate::expr::EvalError;
use crate::flow::ode::integrate;
use crate::flow::{Hooks, IntegratorSettings, NoHooks};

pub fn cubic_leaf(x0: f64, x: f64) -> f64 {
    (x - x0).powi(3)
}

/// The offset `x₀` of the leaf through `p`.
pub fn cubic_leaf_offset(p: &[f64]) -> f64 {
    p[0] - p[1].cbrt()
}

/// Unit tangent `(1, 3(x − x₀)²)/|·|` of the leaf through `p`, oriented to the right.
pub fn cubic_unit_field(p: &[f64]) -> [f64; 2] {
    let slope = 3.0 * p[1].cbrt().powi(2);
    let n = (1.0 + slope * slope).sqrt();
    [1.0 / n, slope / n]
}

struct OnLeaf {
    x0: f64,
}

impl Hooks for OnLeaf {
    fn project(&mut self, y: &mut [f64]) {
        y[1] = cubic_leaf(self.x0, y[0]);
    }
}

/// Integrates the unit field for time `t` from `start`. With `leaf_constrained` every
/// accepted step is projected back onto the leaf through `start`.
pub fn integrate_cubic_field(start: [f64; 2], t: f64, leaf_constrained: bool) -> Result<[f64; 2], EvalError> {
    let rhs = |y: &[f64], out: &mut [f64]| {
        let v = cubic_unit_field(y);
        out.copy_from_slice(&v);
        Ok(())
    };
    let settings = IntegratorSettings { max_step: 0.01, ..Default::default() };
    let traj = if leaf_constrained {
        let mut hooks = OnLeaf { x0: cubic_leaf_offset(&start) };
        integrate(rhs, &start, t, &settings, &mut hooks, false)?
    } else {
        integrate(rhs, &start, t, &settings, &mut NoHooks, false)?
    };
    let y = traj.last();
    Ok([y[0], y[1]])
}
