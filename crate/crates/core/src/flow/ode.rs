//! Dormand–Prince 5(4) with step-size control, FSAL and cubic Hermite dense output.

use crate::expr::EvalError;

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratorSettings {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    /// Largest admissible |t| for one integration.
    pub t_max_guard: f64,
    /// Orbits leaving this ball terminate as escaped.
    pub escape_radius: f64,
    pub max_steps: usize,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        IntegratorSettings {
            rtol: 1e-11,
            atol: 1e-13,
            max_step: 0.25,
            t_max_guard: 1e4,
            escape_radius: 1e8,
            max_steps: 2_000_000,
        }
    }
}

/// Why an integration stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    ReachedT,
    EventHit,
    ConvergedToPoint,
    /// Entered the capture ball of the indexed target point.
    Captured(usize),
    Escaped,
    StepFailure,
    GuardExceeded,
}

/// One accepted step, as seen by hooks.
pub struct StepView<'a> {
    pub t0: f64,
    pub y0: &'a [f64],
    pub f0: &'a [f64],
    pub t1: f64,
    pub y1: &'a [f64],
    pub f1: &'a [f64],
}

pub enum Control {
    Continue,
    Stop(Termination),
}

/// Callbacks invoked by [`integrate`].
pub trait Hooks {
    /// Corrects an accepted state in place (e.g. re-projection onto a constraint).
    fn project(&mut self, _y: &mut [f64]) {}
    fn after_step(&mut self, _step: &StepView<'_>) -> Control {
        Control::Continue
    }
}

pub struct NoHooks;
impl Hooks for NoHooks {}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub derivs: Vec<Vec<f64>>,
    pub termination: Termination,
}

impl Trajectory {
    pub fn last(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least the initial state")
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().expect("non-empty")
    }

    /// Cubic Hermite interpolation between recorded steps.
    pub fn state_at(&self, t: f64) -> Option<Vec<f64>> {
        let n = self.times.len();
        if n == 0 {
            return None;
        }
        let forward = n < 2 || self.times[n - 1] >= self.times[0];
        let key = |s: f64| if forward { s } else { -s };
        let (lo, hi) = (key(self.times[0]), key(self.times[n - 1]));
        if key(t) < lo - 1e-14 || key(t) > hi + 1e-14 {
            return None;
        }
        let i = self.times.partition_point(|&s| key(s) <= key(t)).clamp(1, n.max(2) - 1);
        if n == 1 {
            return Some(self.states[0].clone());
        }
        let (ta, tb) = (self.times[i - 1], self.times[i]);
        let h = tb - ta;
        if h == 0.0 {
            return Some(self.states[i].clone());
        }
        Some(hermite(&self.states[i - 1], &self.derivs[i - 1], &self.states[i], &self.derivs[i], h, (t - ta) / h))
    }
}

pub fn hermite(ya: &[f64], fa: &[f64], yb: &[f64], fb: &[f64], h: f64, s: f64) -> Vec<f64> {
    let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
    let h10 = s * (1.0 - s) * (1.0 - s);
    let h01 = s * s * (3.0 - 2.0 * s);
    let h11 = s * s * (s - 1.0);
    (0..ya.len()).map(|k| h00 * ya[k] + h10 * h * fa[k] + h01 * yb[k] + h11 * h * fb[k]).collect()
}

/// Single explicit step of size `h` from `y` with `f = rhs(y)`; returns the 5th-order
/// solution and the embedded error vector.
pub fn dp_step<R>(rhs: &mut R, y: &[f64], f: &[f64], h: f64) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), EvalError>
where
    R: FnMut(&[f64], &mut [f64]) -> Result<(), EvalError>,
{
    let n = y.len();
    let mut k: Vec<Vec<f64>> = Vec::with_capacity(7);
    k.push(f.to_vec());
    let mut tmp = vec![0.0; n];
    for s in 1..7 {
        for i in 0..n {
            let mut acc = 0.0;
            for (j, kj) in k.iter().enumerate() {
                acc += A[s][j] * kj[i];
            }
            tmp[i] = y[i] + h * acc;
        }
        let mut ks = vec![0.0; n];
        rhs(&tmp, &mut ks)?;
        k.push(ks);
    }
    // Stage 7 was evaluated at the 5th-order solution (FSAL).
    let y_new = {
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..6 {
                acc += A[6][j] * k[j][i];
            }
            out[i] = y[i] + h * acc;
        }
        out
    };
    let err: Vec<f64> = (0..n).map(|i| h * (0..7).map(|j| E[j] * k[j][i]).sum::<f64>()).collect();
    let f_new = k.pop().expect("seven stages");
    Ok((y_new, err, f_new))
}

fn error_norm(err: &[f64], y0: &[f64], y1: &[f64], s: &IntegratorSettings) -> f64 {
    let n = err.len() as f64;
    let sum: f64 = err
        .iter()
        .zip(y0.iter().zip(y1))
        .map(|(e, (a, b))| {
            let sc = s.atol + s.rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}

fn initial_step(f: &[f64], y: &[f64], s: &IntegratorSettings) -> f64 {
    let d0 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let d1 = f.iter().map(|v| v * v).sum::<f64>().sqrt();
    let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-3 } else { 0.01 * d0 / d1 };
    h.min(s.max_step).max(1e-8)
}

/// Integrates the autonomous system `y' = rhs(y)` from `t = 0` to `t_end ≥ 0`.
///
/// States are recorded only when `record` is set; the last state is always kept.
pub fn integrate<R, H>(
    mut rhs: R,
    y0: &[f64],
    t_end: f64,
    settings: &IntegratorSettings,
    hooks: &mut H,
    record: bool,
) -> Result<Trajectory, EvalError>
where
    R: FnMut(&[f64], &mut [f64]) -> Result<(), EvalError>,
    H: Hooks + ?Sized,
{
    debug_assert!(t_end >= 0.0);
    let n = y0.len();
    let mut y = y0.to_vec();
    hooks.project(&mut y);
    let mut f = vec![0.0; n];
    rhs(&y, &mut f)?;
    let mut traj = Trajectory { times: vec![0.0], states: vec![y.clone()], derivs: vec![f.clone()], termination: Termination::ReachedT };
    let mut t = 0.0;
    if t_end == 0.0 {
        return Ok(traj);
    }
    let mut h = initial_step(&f, &y, settings);
    let mut steps = 0usize;
    let mut reject_streak = 0usize;
    let termination = loop {
        if t >= t_end {
            break Termination::ReachedT;
        }
        if steps >= settings.max_steps {
            break Termination::GuardExceeded;
        }
        h = h.min(settings.max_step);
        let last = t + h >= t_end * (1.0 - 1e-15) || t + h >= t_end;
        if last {
            h = t_end - t;
        }
        let (mut y_new, err, mut f_new) = match dp_step(&mut rhs, &y, &f, h) {
            Ok(v) => v,
            Err(_) if reject_streak < 40 => {
                h *= 0.25;
                reject_streak += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let en = error_norm(&err, &y, &y_new, settings);
        if !en.is_finite() || en > 1.0 {
            let fac = if en.is_finite() { (0.9 * en.powf(-0.2)).max(0.1) } else { 0.1 };
            h *= fac;
            reject_streak += 1;
            if h < 1e-14 * t.abs().max(1.0) || reject_streak > 200 {
                break Termination::StepFailure;
            }
            continue;
        }
        reject_streak = 0;
        steps += 1;
        let t_new = if last { t_end } else { t + h };
        let before = y_new.clone();
        hooks.project(&mut y_new);
        if y_new != before {
            rhs(&y_new, &mut f_new)?;
        }
        let view = StepView { t0: t, y0: &y, f0: &f, t1: t_new, y1: &y_new, f1: &f_new };
        let control = hooks.after_step(&view);
        t = t_new;
        y = y_new;
        f = f_new;
        if record {
            traj.times.push(t);
            traj.states.push(y.clone());
            traj.derivs.push(f.clone());
        }
        if let Control::Stop(term) = control {
            break term;
        }
        if y.iter().map(|v| v * v).sum::<f64>().sqrt() > settings.escape_radius {
            break Termination::Escaped;
        }
        let fac = if en == 0.0 { 5.0 } else { (0.9 * en.powf(-0.2)).clamp(0.2, 5.0) };
        h *= fac;
    };
    if !record {
        traj.times = vec![t];
        traj.states = vec![y];
        traj.derivs = vec![f];
    }
    traj.termination = termination;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_growth() {
        let traj = integrate(
            |y: &[f64], out: &mut [f64]| {
                out[0] = y[0];
                Ok(())
            },
            &[1.0],
            1.0,
            &IntegratorSettings::default(),
            &mut NoHooks,
            false,
        )
        .unwrap();
        assert_eq!(traj.termination, Termination::ReachedT);
        assert!((traj.last()[0] - std::f64::consts::E).abs() < 1e-9);
    }

    #[test]
    fn dense_output_on_harmonic_oscillator() {
        let traj = integrate(
            |y: &[f64], out: &mut [f64]| {
                out[0] = y[1];
                out[1] = -y[0];
                Ok(())
            },
            &[1.0, 0.0],
            3.0,
            &IntegratorSettings { max_step: 0.05, ..Default::default() },
            &mut NoHooks,
            true,
        )
        .unwrap();
        let mid = traj.state_at(1.2345).unwrap();
        assert!((mid[0] - 1.2345f64.cos()).abs() < 1e-7);
        assert!((mid[1] + 1.2345f64.sin()).abs() < 1e-7);
    }
}
