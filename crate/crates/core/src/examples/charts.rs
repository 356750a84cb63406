//! Analytic stable-foliation charts for the built-in systems.
//!
//! square4 decouples into two copies of `ẋ = 2x(1 − x²)` with time coordinate
//! `T(x) = ¼ ln(x²/|1 − x²|)`, so every time function is a shifted `T`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{square_time, square_time_inv_inner, square_time_inv_outer};
use crate::extreal::ExtReal;
use crate::foliation::{
    default_bump, default_bump_derivative, radial_function, smoothstep, FoliationError, Provenance, StableFoliationChart,
};
use crate::linalg::complement;

/// Stable and unstable disk radii of the square4 saddle charts.
pub const SADDLE_RADIUS: f64 = 0.4;
/// Half-width of the blending band of the sink charts; below the gap
/// `T(1 − r_s) − T(r_u)` so saddle leaves lie in sink sphere leaves where they overlap.
pub const SINK_BLEND: f64 = 0.25;
/// Scale of the sink radial function, `ρ = C e^{−m}`.
pub const SINK_SCALE: f64 = std::f64::consts::E;

/// `T'(x) = 1 / (2x(1 − x²))`.
fn square_time_derivative(x: f64) -> f64 {
    1.0 / (2.0 * x * (1.0 - x * x))
}

fn extended_time(x: f64) -> ExtReal {
    if x == 1.0 {
        ExtReal::PosInf
    } else {
        ExtReal::Finite(square_time(x))
    }
}

/// Chart of a square4 saddle: stable leaves are the lines parallel to its stable axis.
#[derive(Clone, Debug)]
pub struct SquareSaddleChart {
    location: DVector<f64>,
    /// Coordinate along the stable direction.
    axis: usize,
    sign: f64,
    r_u: f64,
    r_s: f64,
}

impl SquareSaddleChart {
    pub fn new(axis: usize, sign: f64) -> Self {
        let mut location = DVector::zeros(2);
        location[axis] = sign;
        SquareSaddleChart { location, axis, sign, r_u: SADDLE_RADIUS, r_s: SADDLE_RADIUS }
    }

    fn coords(&self, p: &[f64]) -> (f64, f64) {
        (self.sign * p[self.axis], p[1 - self.axis])
    }

    fn stable_time(&self, cs: f64) -> Option<ExtReal> {
        if cs <= 0.0 || !cs.is_finite() {
            return None;
        }
        Some(match cs.partial_cmp(&1.0)? {
            std::cmp::Ordering::Equal => ExtReal::PosInf,
            std::cmp::Ordering::Less => ExtReal::Finite(square_time(cs) - square_time(1.0 - self.r_s)),
            std::cmp::Ordering::Greater => ExtReal::Finite(square_time(cs) - square_time(1.0 + self.r_s)),
        })
    }

    fn unstable_time(&self, cu: f64) -> Option<ExtReal> {
        let a = cu.abs();
        if a >= 1.0 || !a.is_finite() {
            return None;
        }
        Some(if a == 0.0 { ExtReal::NegInf } else { ExtReal::Finite(square_time(a) - square_time(self.r_u)) })
    }
}

impl StableFoliationChart for SquareSaddleChart {
    fn name(&self) -> String {
        format!("saddle({}, {})", self.location[0], self.location[1])
    }

    fn owner(&self) -> &DVector<f64> {
        &self.location
    }

    fn index(&self) -> usize {
        1
    }

    fn phase_dim(&self) -> usize {
        2
    }

    fn provenance(&self) -> Provenance {
        Provenance::Analytic
    }

    fn contains(&self, p: &[f64]) -> bool {
        let (cs, cu) = self.coords(p);
        match (self.stable_time(cs), self.unstable_time(cu)) {
            (Some(a), Some(u)) => radial_function(a, u, default_bump).is_finite(),
            _ => false,
        }
    }

    fn leaf_projection(&self, p: &[f64]) -> Option<DVector<f64>> {
        let mut b = DVector::from_column_slice(p);
        b[self.axis] = self.sign;
        Some(b)
    }

    fn tau_u(&self, p: &[f64]) -> Option<ExtReal> {
        self.unstable_time(self.coords(p).1)
    }

    fn sphere_parameter(&self, p: &[f64]) -> Option<ExtReal> {
        self.stable_time(self.coords(p).0)
    }

    fn leaf_tangent(&self, _p: &[f64]) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(2, 1);
        b[(self.axis, 0)] = 1.0;
        b
    }

    fn project_to_leaf(&self, p: &[f64], leaf_of: &[f64]) -> DVector<f64> {
        let mut q = DVector::from_column_slice(p);
        q[1 - self.axis] = leaf_of[1 - self.axis];
        q
    }

    fn log_rho_leaf_gradient(&self, p: &[f64]) -> Option<DVector<f64>> {
        let (cs, cu) = self.coords(p);
        let a = self.stable_time(cs)?.finite()?;
        let slope = match self.unstable_time(cu)? {
            ExtReal::Finite(u) => -1.0 + default_bump_derivative(a - u),
            _ => -1.0,
        };
        let mut g = DVector::zeros(2);
        g[self.axis] = self.sign * slope * square_time_derivative(cs);
        Some(g)
    }

    fn sphere_leaf(&self, p: &[f64], a: f64, _n_samples: usize) -> Result<Vec<DVector<f64>>, FoliationError> {
        let tu = self.unstable_time(self.coords(p).1).ok_or(FoliationError::OutsideDomain)?;
        if tu >= ExtReal::Finite(a) {
            return Err(FoliationError::OutsideLambda { tau_u: tu, a });
        }
        let inner = square_time_inv_inner(a + square_time(1.0 - self.r_s));
        // Beyond 1 the time coordinate is positive, so low levels have no outer point.
        let outer_level = a + square_time(1.0 + self.r_s);
        let outer = (outer_level > 0.0).then(|| square_time_inv_outer(outer_level));
        Ok(std::iter::once(inner)
            .chain(outer)
            .map(|cs| {
                let mut q = DVector::from_column_slice(p);
                q[self.axis] = self.sign * cs;
                q
            })
            .collect())
    }
}

/// Smooth replacement of `min(d, 0)`: equal to `d` below `−D`, to `0` above `D`, with
/// slope `1 − smoothstep((d + D)/2D)` in between.
pub fn smooth_min_offset(d: f64, width: f64) -> f64 {
    if d <= -width {
        return d;
    }
    if d >= width {
        return 0.0;
    }
    let s = (d + width) / (2.0 * width);
    d - 2.0 * width * (s.powi(6) - 3.0 * s.powi(5) + 2.5 * s.powi(4))
}

fn smooth_min_slope(d: f64, width: f64) -> f64 {
    1.0 - smoothstep((d + width) / (2.0 * width))
}

/// Chart of a square4 sink: one leaf (the open quadrant), sphere leaves are level sets of
/// the smoothed minimum `m(A, B) = B + g(A − B)` of the two 1D times.
#[derive(Clone, Debug)]
pub struct SquareSinkChart {
    location: DVector<f64>,
    signs: [f64; 2],
}

impl SquareSinkChart {
    pub fn new(sx: f64, sy: f64) -> Self {
        SquareSinkChart { location: DVector::from_vec(vec![sx, sy]), signs: [sx, sy] }
    }

    fn local(&self, p: &[f64]) -> Option<(f64, f64)> {
        let (a, b) = (self.signs[0] * p[0], self.signs[1] * p[1]);
        (a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()).then_some((a, b))
    }

    /// `m(A, B)` with explicit infinities on the stable axes of the sink.
    fn level(&self, p: &[f64]) -> Option<ExtReal> {
        let (a, b) = self.local(p)?;
        Some(match (extended_time(a), extended_time(b)) {
            (ExtReal::Finite(ta), ExtReal::Finite(tb)) => ExtReal::Finite(tb + smooth_min_offset(ta - tb, SINK_BLEND)),
            (ExtReal::PosInf, tb) => tb,
            (ta, ExtReal::PosInf) => ta,
            _ => return None,
        })
    }
}

impl StableFoliationChart for SquareSinkChart {
    fn name(&self) -> String {
        format!("sink({}, {})", self.location[0], self.location[1])
    }

    fn owner(&self) -> &DVector<f64> {
        &self.location
    }

    fn index(&self) -> usize {
        0
    }

    fn phase_dim(&self) -> usize {
        2
    }

    fn provenance(&self) -> Provenance {
        Provenance::Analytic
    }

    fn contains(&self, p: &[f64]) -> bool {
        self.local(p).is_some()
    }

    fn leaf_projection(&self, p: &[f64]) -> Option<DVector<f64>> {
        self.local(p).map(|_| self.location.clone())
    }

    fn tau_u(&self, p: &[f64]) -> Option<ExtReal> {
        self.local(p).map(|_| ExtReal::NegInf)
    }

    fn sphere_parameter(&self, p: &[f64]) -> Option<ExtReal> {
        self.level(p).map(|m| m.add(-SINK_SCALE.ln()))
    }

    fn leaf_tangent(&self, _p: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(2, 2)
    }

    fn project_to_leaf(&self, p: &[f64], _leaf_of: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(p)
    }

    fn log_rho_leaf_gradient(&self, p: &[f64]) -> Option<DVector<f64>> {
        let (a, b) = self.local(p)?;
        if a == 1.0 || b == 1.0 {
            return None;
        }
        let w = smooth_min_slope(square_time(a) - square_time(b), SINK_BLEND);
        let ga = if w == 0.0 { 0.0 } else { w * square_time_derivative(a) };
        let gb = if w == 1.0 { 0.0 } else { (1.0 - w) * square_time_derivative(b) };
        Some(DVector::from_vec(vec![-self.signs[0] * ga, -self.signs[1] * gb]))
    }

    fn sphere_leaf(&self, _p: &[f64], a: f64, n_samples: usize) -> Result<Vec<DVector<f64>>, FoliationError> {
        let target = a + SINK_SCALE.ln();
        let n = n_samples.max(1);
        let mut out = Vec::with_capacity(n);
        for j in 0..n {
            let ang = std::f64::consts::TAU * (j as f64 + 0.5) / n as f64;
            let dir = [ang.cos(), ang.sin()];
            let at = |s: f64| vec![self.location[0] + s * dir[0], self.location[1] + s * dir[1]];
            let m_at = |s: f64| self.level(&at(s)).map(ExtReal::to_f64).unwrap_or(f64::NEG_INFINITY);
            // m decreases away from the sink along every ray.
            let mut hi = 1e-3;
            while m_at(hi) > target && hi < 50.0 {
                hi *= 2.0;
            }
            if m_at(hi) > target {
                continue;
            }
            let mut lo = 0.0;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if m_at(mid) > target {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-15 {
                    break;
                }
            }
            out.push(DVector::from_vec(at(0.5 * (lo + hi))));
        }
        Ok(out)
    }
}

/// Chart of the south pole of the height function on the unit sphere:
/// `ρ = C·sqrt((1 + z)/(1 − z))`, sphere leaves are the circles of latitude.
#[derive(Clone, Debug)]
pub struct SphereSouthChart {
    location: DVector<f64>,
    scale: f64,
}

impl Default for SphereSouthChart {
    fn default() -> Self {
        SphereSouthChart { location: DVector::from_vec(vec![0.0, 0.0, -1.0]), scale: 1.0 }
    }
}

impl SphereSouthChart {
    fn height(p: &[f64]) -> Option<f64> {
        let n = crate::linalg::norm(p);
        (n > 0.0).then(|| (p[2] / n).clamp(-1.0, 1.0))
    }

    /// `(1 + z, 1 − z)` without cancellation near either pole, via `1 − z² = r_xy²/|p|²`.
    fn height_gaps(p: &[f64]) -> Option<(f64, f64)> {
        let len = crate::linalg::norm(p);
        if len == 0.0 {
            return None;
        }
        let z = (p[2] / len).clamp(-1.0, 1.0);
        let across = (p[0] * p[0] + p[1] * p[1]) / (len * len);
        Some(if z <= 0.0 { (across / (1.0 - z), 1.0 - z) } else { (1.0 + z, across / (1.0 + z)) })
    }
}

impl StableFoliationChart for SphereSouthChart {
    fn name(&self) -> String {
        "south".into()
    }

    fn owner(&self) -> &DVector<f64> {
        &self.location
    }

    fn index(&self) -> usize {
        0
    }

    fn phase_dim(&self) -> usize {
        2
    }

    fn provenance(&self) -> Provenance {
        Provenance::Analytic
    }

    fn contains(&self, p: &[f64]) -> bool {
        Self::height_gaps(p).is_some_and(|(_, below)| below > 0.0)
    }

    fn leaf_projection(&self, p: &[f64]) -> Option<DVector<f64>> {
        self.contains(p).then(|| self.location.clone())
    }

    fn tau_u(&self, p: &[f64]) -> Option<ExtReal> {
        self.contains(p).then_some(ExtReal::NegInf)
    }

    fn sphere_parameter(&self, p: &[f64]) -> Option<ExtReal> {
        let (above, below) = Self::height_gaps(p)?;
        if below == 0.0 {
            return None;
        }
        if above == 0.0 {
            return Some(ExtReal::PosInf);
        }
        Some(ExtReal::Finite(-0.5 * (above / below).ln() - self.scale.ln()))
    }

    fn leaf_tangent(&self, p: &[f64]) -> DMatrix<f64> {
        let n = DVector::from_column_slice(p).normalize();
        complement(&DMatrix::from_column_slice(3, 1, n.as_slice()))
    }

    fn project_to_leaf(&self, p: &[f64], _leaf_of: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(p).normalize()
    }

    fn log_rho_leaf_gradient(&self, p: &[f64]) -> Option<DVector<f64>> {
        let (above, below) = Self::height_gaps(p)?;
        if above == 0.0 || below == 0.0 {
            return None;
        }
        let z = Self::height(p)?;
        let len = crate::linalg::norm(p);
        let n = DVector::from_column_slice(p) / len;
        let mut g = -n * z;
        g[2] += 1.0;
        Some(g / (len * above * below))
    }

    fn sphere_leaf(&self, _p: &[f64], a: f64, n_samples: usize) -> Result<Vec<DVector<f64>>, FoliationError> {
        let z = (-a - self.scale.ln()).tanh();
        let r = (1.0 - z * z).sqrt();
        let n = n_samples.max(1);
        Ok((0..n)
            .map(|j| {
                let ang = std::f64::consts::TAU * j as f64 / n as f64;
                DVector::from_vec(vec![r * ang.cos(), r * ang.sin(), z])
            })
            .collect())
    }
}

/// Analytic charts registered for a built-in system (empty when none are known).
pub fn analytic_charts(name: &str) -> Vec<Arc<dyn StableFoliationChart>> {
    match name {
        "square4" => {
            let mut charts: Vec<Arc<dyn StableFoliationChart>> = Vec::new();
            for (axis, sign) in [(0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0)] {
                charts.push(Arc::new(SquareSaddleChart::new(axis, sign)));
            }
            for (sx, sy) in [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)] {
                charts.push(Arc::new(SquareSinkChart::new(sx, sy)));
            }
            charts
        }
        "sphere_height" => vec![Arc::new(SphereSouthChart::default())],
        _ => Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_min_offset_is_c1() {
        let w = SINK_BLEND;
        assert_eq!(smooth_min_offset(-1.0, w), -1.0);
        assert_eq!(smooth_min_offset(1.0, w), 0.0);
        assert!(smooth_min_offset(w, w).abs() < 1e-15);
        let h = 1e-6;
        for d in [-0.2, -0.05, 0.0, 0.1, 0.24] {
            let fd = (smooth_min_offset(d + h, w) - smooth_min_offset(d - h, w)) / (2.0 * h);
            assert!((fd - smooth_min_slope(d, w)).abs() < 1e-8);
        }
    }

    #[test]
    fn saddle_leaves_are_sink_sphere_leaves_on_overlaps() {
        // On the saddle domain A − B exceeds the blending band, so m depends on y only.
        let gap = square_time(1.0 - SADDLE_RADIUS) - square_time(SADDLE_RADIUS);
        assert!(gap > SINK_BLEND);
        let saddle = SquareSaddleChart::new(0, 1.0);
        let sink = SquareSinkChart::new(1.0, 1.0);
        for p in [[0.9, 0.3], [0.99, 0.8], [1.05, 0.5]] {
            assert!(saddle.contains(&p) && sink.contains(&p));
            let g = sink.log_rho_leaf_gradient(&p).unwrap();
            assert_eq!(g[0], 0.0);
        }
    }
}
