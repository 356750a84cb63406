//! Numerical flows of vector fields on ℝⁿ or on a level-set surface.

pub mod ode;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::expr::{EvalError, Expression};
pub use ode::{Control, Hooks, IntegratorSettings, NoHooks, StepView, Termination, Trajectory};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("integration failed: step size underflow at t = {t}")]
    StepFailure { t: f64 },
    #[error("requested time {t} exceeds the guard {guard}")]
    GuardExceeded { t: f64, guard: f64 },
    #[error("orbit escaped the escape ball at t = {t}")]
    Escaped { t: f64 },
    #[error("level-set gradient vanishes at the current state")]
    DegenerateLevelSet,
}

/// A smooth vector field with its Jacobian.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<(), EvalError>;
    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>, EvalError>;
}

/// Componentwise expression field.
#[derive(Clone, Debug)]
pub struct ExprField {
    comps: Vec<Expression>,
}

impl ExprField {
    pub fn new(comps: Vec<Expression>) -> Self {
        ExprField { comps }
    }

    pub fn parse(sources: &[&str]) -> Result<Self, crate::expr::ExprError> {
        let n = sources.len();
        Ok(ExprField { comps: sources.iter().map(|s| Expression::parse(s, n)).collect::<Result<_, _>>()? })
    }

    pub fn components(&self) -> &[Expression] {
        &self.comps
    }
}

impl VectorField for ExprField {
    fn dim(&self) -> usize {
        self.comps.len()
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        for (o, e) in out.iter_mut().zip(&self.comps) {
            *o = e.eval(x)?;
        }
        Ok(())
    }
    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>, EvalError> {
        crate::expr::jacobian(&self.comps, x)
    }
}

/// Negative gradient of a potential, `-∇f`.
#[derive(Clone, Debug)]
pub struct GradientField {
    potential: Expression,
}

impl GradientField {
    pub fn new(potential: Expression) -> Self {
        GradientField { potential }
    }

    pub fn potential(&self) -> &Expression {
        &self.potential
    }
}

impl VectorField for GradientField {
    fn dim(&self) -> usize {
        self.potential.dim()
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        let d = self.potential.dual(x)?;
        for (o, g) in out.iter_mut().zip(&d.grad) {
            *o = -g;
        }
        Ok(())
    }
    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>, EvalError> {
        Ok(-self.potential.hessian(x)?)
    }
}

#[derive(Clone, Debug)]
pub enum Mode {
    Ambient,
    /// Flow restricted to `{level = 0}` by tangential projection.
    Surface(Expression),
}

/// A vector field together with its integration settings; generates the flow.
#[derive(Clone)]
pub struct FlowSystem {
    field: Arc<dyn VectorField>,
    mode: Mode,
    reversed: bool,
    pub settings: IntegratorSettings,
}

impl std::fmt::Debug for FlowSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FlowSystem")
            .field("dim", &self.dim())
            .field("mode", &self.mode)
            .field("reversed", &self.reversed)
            .finish()
    }
}

impl FlowSystem {
    pub fn new(field: Arc<dyn VectorField>) -> Self {
        FlowSystem { field, mode: Mode::Ambient, reversed: false, settings: IntegratorSettings::default() }
    }

    pub fn from_exprs(sources: &[&str]) -> Result<Self, crate::expr::ExprError> {
        Ok(FlowSystem::new(Arc::new(ExprField::parse(sources)?)))
    }

    pub fn with_surface(mut self, level: Expression) -> Self {
        self.mode = Mode::Surface(level);
        self
    }

    pub fn with_settings(mut self, settings: IntegratorSettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn settings(&self) -> &IntegratorSettings {
        &self.settings
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    pub fn mode(&self) -> &Mode {
        &self.mode
    }

    pub fn field(&self) -> &Arc<dyn VectorField> {
        &self.field
    }

    pub fn is_reversed(&self) -> bool {
        self.reversed
    }

    /// The same field with time running backwards.
    pub fn reversed(&self) -> Self {
        let mut s = self.clone();
        s.reversed = !s.reversed;
        s
    }

    fn sign(&self) -> f64 {
        if self.reversed {
            -1.0
        } else {
            1.0
        }
    }

    /// Effective velocity: the field, projected tangentially in surface mode.
    pub fn velocity_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), FlowError> {
        self.field.eval(x, out)?;
        let s = self.sign();
        out.iter_mut().for_each(|v| *v *= s);
        if let Mode::Surface(level) = &self.mode {
            let g = level.gradient(x)?;
            let gn2 = g.norm_squared();
            if gn2 < 1e-24 {
                return Err(FlowError::DegenerateLevelSet);
            }
            let dot: f64 = g.iter().zip(out.iter()).map(|(a, b)| a * b).sum::<f64>() / gn2;
            out.iter_mut().zip(g.iter()).for_each(|(o, gi)| *o -= dot * gi);
        }
        Ok(())
    }

    pub fn velocity(&self, x: &[f64]) -> Result<DVector<f64>, FlowError> {
        let mut out = vec![0.0; self.dim()];
        self.velocity_into(x, &mut out)?;
        Ok(DVector::from_vec(out))
    }

    /// Jacobian of the effective velocity.
    pub fn velocity_jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>, FlowError> {
        let j = self.field.jacobian(x)? * self.sign();
        let Mode::Surface(level) = &self.mode else {
            return Ok(j);
        };
        let n = self.dim();
        let g = level.gradient(x)?;
        let gn = g.norm();
        if gn < 1e-12 {
            return Err(FlowError::DegenerateLevelSet);
        }
        let nu = &g / gn;
        let mut v = vec![0.0; n];
        self.field.eval(x, &mut v)?;
        let v = DVector::from_vec(v) * self.sign();
        let p = DMatrix::identity(n, n) - &nu * nu.transpose();
        let dnu = &p * level.hessian(x)? / gn;
        let nv = nu.dot(&v);
        Ok(&p * j - dnu.clone() * nv - &nu * (v.transpose() * dnu))
    }

    /// One Newton step back onto the level set; identity in ambient mode.
    pub fn project(&self, x: &mut [f64]) {
        if let Mode::Surface(level) = &self.mode {
            if let (Ok(val), Ok(g)) = (level.eval(x), level.gradient(x)) {
                let gn2 = g.norm_squared();
                if gn2 > 1e-24 {
                    x.iter_mut().zip(g.iter()).for_each(|(xi, gi)| *xi -= val * gi / gn2);
                }
            }
        }
    }

    /// Tangent space basis of the phase space at `x` (columns): ℝⁿ or the level-set tangent plane.
    pub fn tangent_basis(&self, x: &[f64]) -> Result<DMatrix<f64>, FlowError> {
        let n = self.dim();
        match &self.mode {
            Mode::Ambient => Ok(DMatrix::identity(n, n)),
            Mode::Surface(level) => {
                let g = level.gradient(x)?;
                let gn = g.norm();
                if gn < 1e-12 {
                    return Err(FlowError::DegenerateLevelSet);
                }
                let nu = g / gn;
                let p = DMatrix::identity(n, n) - &nu * nu.transpose();
                Ok(crate::linalg::orthonormal_columns(&p, 1e-8))
            }
        }
    }

    fn oriented(&self, t: f64) -> FlowSystem {
        if t < 0.0 {
            self.reversed()
        } else {
            self.clone()
        }
    }

    /// Integrates from `x0` for time `t` (either sign), with optional hooks and recording.
    pub fn run<H: Hooks + ?Sized>(&self, x0: &[f64], t: f64, hooks: &mut H, record: bool) -> Result<Trajectory, FlowError> {
        if t.abs() > self.settings.t_max_guard {
            return Err(FlowError::GuardExceeded { t, guard: self.settings.t_max_guard });
        }
        let sys = self.oriented(t);
        let mut wrapped = Projecting { sys: &sys, inner: hooks };
        let rhs = |y: &[f64], out: &mut [f64]| sys.velocity_into(y, out).map_err(to_eval);
        let mut traj = ode::integrate(rhs, x0, t.abs(), &self.settings, &mut wrapped, record)?;
        if t < 0.0 {
            traj.times.iter_mut().for_each(|s| *s = -*s);
            traj.derivs.iter_mut().for_each(|d| d.iter_mut().for_each(|v| *v = -*v));
        }
        Ok(traj)
    }

    pub fn trajectory(&self, x0: &[f64], t: f64) -> Result<Trajectory, FlowError> {
        self.run(x0, t, &mut NoHooks, true)
    }

    /// φ^t(x0).
    pub fn flow_map(&self, x0: &[f64], t: f64) -> Result<DVector<f64>, FlowError> {
        let traj = self.run(x0, t, &mut NoHooks, false)?;
        check_termination(&traj)?;
        Ok(DVector::from_column_slice(traj.last()))
    }

    /// (φ^t(x0), dφ^t(x0)) from the variational equations.
    pub fn flow_jacobian(&self, x0: &[f64], t: f64) -> Result<(DVector<f64>, DMatrix<f64>), FlowError> {
        let n = self.dim();
        if t.abs() > self.settings.t_max_guard {
            return Err(FlowError::GuardExceeded { t, guard: self.settings.t_max_guard });
        }
        let sys = self.oriented(t);
        let mut y0 = vec![0.0; n + n * n];
        y0[..n].copy_from_slice(x0);
        for i in 0..n {
            y0[n + i * n + i] = 1.0;
        }
        let rhs = |y: &[f64], out: &mut [f64]| -> Result<(), EvalError> {
            sys.velocity_into(&y[..n], &mut out[..n]).map_err(to_eval)?;
            let j = sys.velocity_jacobian(&y[..n]).map_err(to_eval)?;
            let m = DMatrix::from_column_slice(n, n, &y[n..]);
            let jm = j * m;
            out[n..].copy_from_slice(jm.as_slice());
            Ok(())
        };
        let mut hooks = VariationalProjection { sys: &sys, n };
        let traj = ode::integrate(rhs, &y0, t.abs(), &self.settings, &mut hooks, false)?;
        check_termination(&traj)?;
        let y = traj.last();
        Ok((DVector::from_column_slice(&y[..n]), DMatrix::from_column_slice(n, n, &y[n..])))
    }

    /// First time the scalar `event` crosses zero in the given direction within `horizon`.
    ///
    /// A negative horizon searches backwards in time.
    pub fn hit_time<G>(&self, x0: &[f64], event: G, direction: Crossing, horizon: f64) -> Result<Option<(f64, DVector<f64>)>, FlowError>
    where
        G: Fn(&[f64]) -> f64,
    {
        let sys = self.oriented(horizon);
        let mut finder = CrossingFinder { event: &event, direction, bracket: None };
        let t_abs = horizon.abs().min(self.settings.t_max_guard);
        let mut wrapped = Projecting { sys: &sys, inner: &mut finder };
        let rhs = |y: &[f64], out: &mut [f64]| sys.velocity_into(y, out).map_err(to_eval);
        let traj = ode::integrate(rhs, x0, t_abs, &self.settings, &mut wrapped, false)?;
        let Some((t0, y0, f0, h)) = finder.bracket else {
            return match traj.termination {
                Termination::StepFailure => Err(FlowError::StepFailure { t: traj.end_time() }),
                _ => Ok(None),
            };
        };
        let mut rhs = |y: &[f64], out: &mut [f64]| sys.velocity_into(y, out).map_err(to_eval);
        let mut state_at = |s: f64| -> Result<Vec<f64>, EvalError> {
            if s == 0.0 {
                return Ok(y0.clone());
            }
            let (mut y, _, _) = ode::dp_step(&mut rhs, &y0, &f0, s)?;
            sys.project(&mut y);
            Ok(y)
        };
        let (mut a, mut b) = (0.0, h);
        let (mut ga, mut gb) = (event(&y0), event(&state_at(h)?));
        let mut best = (b, gb);
        let mut side = 0i32;
        for _ in 0..200 {
            if gb.abs() < best.1.abs() {
                best = (b, gb);
            }
            if ga.abs() < best.1.abs() {
                best = (a, ga);
            }
            if best.1.abs() < 1e-14 || (b - a).abs() < 1e-15 * (1.0 + t0.abs()) {
                break;
            }
            // Illinois-modified regula falsi.
            let c = (a * gb - b * ga) / (gb - ga);
            let c = if c.is_finite() && c > a.min(b) && c < a.max(b) { c } else { 0.5 * (a + b) };
            let gc = event(&state_at(c)?);
            if gc.abs() < best.1.abs() {
                best = (c, gc);
            }
            if (gc > 0.0) == (gb > 0.0) {
                b = c;
                gb = gc;
                if side == -1 {
                    ga *= 0.5;
                }
                side = -1;
            } else {
                a = b;
                ga = gb;
                b = c;
                gb = gc;
                if side == 1 {
                    gb *= 0.5;
                }
                side = 1;
            }
        }
        let s = best.0;
        let y = state_at(s)?;
        let t = t0 + s;
        Ok(Some((if horizon < 0.0 { -t } else { t }, DVector::from_vec(y))))
    }

    /// Integrates forward until the orbit settles at a stationary point, enters one of the
    /// capture balls, escapes, or exhausts the time guard.
    pub fn run_to_limit(&self, x0: &[f64], targets: &[(DVector<f64>, f64)], record: bool) -> Result<Trajectory, FlowError> {
        let mut hooks = LimitDetector::new(self, targets);
        self.run(x0, self.settings.t_max_guard, &mut hooks, record).map(|mut tr| {
            if tr.termination == Termination::ReachedT {
                tr.termination = Termination::GuardExceeded;
            }
            tr
        })
    }
}

fn to_eval(e: FlowError) -> EvalError {
    match e {
        FlowError::Eval(e) => e,
        _ => EvalError::Domain { op: "degenerate level set", value: 0.0 },
    }
}

fn check_termination(traj: &Trajectory) -> Result<(), FlowError> {
    match traj.termination {
        Termination::StepFailure => Err(FlowError::StepFailure { t: traj.end_time() }),
        Termination::GuardExceeded => Err(FlowError::GuardExceeded { t: traj.end_time(), guard: f64::NAN }),
        Termination::Escaped => Err(FlowError::Escaped { t: traj.end_time() }),
        _ => Ok(()),
    }
}

struct Projecting<'a, H: ?Sized> {
    sys: &'a FlowSystem,
    inner: &'a mut H,
}

impl<H: Hooks + ?Sized> Hooks for Projecting<'_, H> {
    fn project(&mut self, y: &mut [f64]) {
        self.sys.project(y);
        self.inner.project(y);
    }
    fn after_step(&mut self, step: &StepView<'_>) -> Control {
        self.inner.after_step(step)
    }
}

struct VariationalProjection<'a> {
    sys: &'a FlowSystem,
    n: usize,
}

impl Hooks for VariationalProjection<'_> {
    fn project(&mut self, y: &mut [f64]) {
        self.sys.project(&mut y[..self.n]);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Crossing {
    Rising,
    Falling,
    Either,
}

impl Crossing {
    fn matches(self, g0: f64, g1: f64) -> bool {
        match self {
            Crossing::Rising => g0 < 0.0 && g1 >= 0.0,
            Crossing::Falling => g0 > 0.0 && g1 <= 0.0,
            Crossing::Either => (g0 < 0.0 && g1 >= 0.0) || (g0 > 0.0 && g1 <= 0.0),
        }
    }
}

type Bracket = (f64, Vec<f64>, Vec<f64>, f64);

struct CrossingFinder<'a, G> {
    event: &'a G,
    direction: Crossing,
    bracket: Option<Bracket>,
}

impl<G: Fn(&[f64]) -> f64> Hooks for CrossingFinder<'_, G> {
    fn after_step(&mut self, step: &StepView<'_>) -> Control {
        let (g0, g1) = ((self.event)(step.y0), (self.event)(step.y1));
        if self.direction.matches(g0, g1) {
            self.bracket = Some((step.t0, step.y0.to_vec(), step.f0.to_vec(), step.t1 - step.t0));
            return Control::Stop(Termination::EventHit);
        }
        Control::Continue
    }
}

/// Stopping rule for ω-limit detection.
pub struct LimitDetector<'a> {
    targets: &'a [(DVector<f64>, f64)],
    quiet_steps: usize,
}

impl<'a> LimitDetector<'a> {
    pub const FIELD_TOL: f64 = 1e-10;
    pub const STEP_TOL: f64 = 1e-12;
    pub const QUIET_STEPS: usize = 5;

    pub fn new(_sys: &FlowSystem, targets: &'a [(DVector<f64>, f64)]) -> Self {
        LimitDetector { targets, quiet_steps: 0 }
    }
}

impl Hooks for LimitDetector<'_> {
    fn after_step(&mut self, step: &StepView<'_>) -> Control {
        for (i, (p, r)) in self.targets.iter().enumerate() {
            let d2: f64 = p.iter().zip(step.y1).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < r * r {
                return Control::Stop(Termination::Captured(i));
            }
        }
        let fnorm = step.f1.iter().map(|v| v * v).sum::<f64>().sqrt();
        let disp = step.y0.iter().zip(step.y1).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if fnorm < Self::FIELD_TOL && disp < Self::STEP_TOL {
            self.quiet_steps += 1;
            if self.quiet_steps >= Self::QUIET_STEPS {
                return Control::Stop(Termination::ConvergedToPoint);
            }
        } else {
            self.quiet_steps = 0;
        }
        Control::Continue
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_growth_matches_exponential() {
        let sys = FlowSystem::from_exprs(&["x"]).unwrap();
        let y = sys.flow_map(&[1.0], 1.0).unwrap();
        assert!((y[0] - std::f64::consts::E).abs() < 1e-9);
        let y = sys.flow_map(&[1.0], -1.0).unwrap();
        assert!((y[0] - (-1.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn variational_flow_of_diagonal_system() {
        let sys = FlowSystem::from_exprs(&["2*x", "-3*y"]).unwrap();
        let (_, m) = sys.flow_jacobian(&[0.0, 0.0], 1.0).unwrap();
        assert!((m[(0, 0)] - 2f64.exp()).abs() < 1e-8);
        assert!((m[(1, 1)] - (-3f64).exp()).abs() < 1e-10);
        assert!(m[(0, 1)].abs() < 1e-14 && m[(1, 0)].abs() < 1e-14);
        let (_, id) = sys.flow_jacobian(&[0.3, 0.2], 0.0).unwrap();
        assert_eq!(id, DMatrix::identity(2, 2));
    }

    #[test]
    fn event_crossing_of_decay() {
        let sys = FlowSystem::from_exprs(&["-x"]).unwrap();
        let (t, y) = sys.hit_time(&[2.0], |x| x[0] - 1.0, Crossing::Falling, 10.0).unwrap().unwrap();
        assert!((t - 2f64.ln()).abs() < 1e-10, "{t}");
        assert!((y[0] - 1.0).abs() < 1e-12);
        assert!(sys.hit_time(&[2.0], |x| x[0] - 3.0, Crossing::Falling, 10.0).unwrap().is_none());
    }

    #[test]
    fn surface_flow_stays_on_sphere() {
        let level = Expression::parse("x^2+y^2+z^2-1", 3).unwrap();
        let sys = FlowSystem::from_exprs(&["0", "0", "-1"]).unwrap().with_surface(level.clone());
        let x0 = [0.6, 0.0, 0.8];
        let tr = sys.trajectory(&x0, 5.0).unwrap();
        for s in &tr.states {
            assert!(level.eval(s).unwrap().abs() < 1e-8);
        }
        let z = tr.last()[2];
        // artanh(z) decreases at unit rate.
        assert!((z.atanh() - (0.8f64.atanh() - 5.0)).abs() < 1e-6);
    }

    #[test]
    fn projected_jacobian_matches_differences() {
        let level = Expression::parse("x^2+y^2+z^2-1", 3).unwrap();
        let sys = FlowSystem::from_exprs(&["y*z", "x^2", "-1+x"]).unwrap().with_surface(level);
        let x = [0.3, -0.4, 0.5];
        let j = sys.velocity_jacobian(&x).unwrap();
        let h = 1e-6;
        for c in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[c] += h;
            xm[c] -= h;
            let d = (sys.velocity(&xp).unwrap() - sys.velocity(&xm).unwrap()) / (2.0 * h);
            for r in 0..3 {
                assert!((d[r] - j[(r, c)]).abs() < 1e-7);
            }
        }
    }
}
