use std::sync::Arc;

use morse_cells::boundaryflow::*;
use morse_cells::examples::{self, charts::SquareSaddleChart};
use morse_cells::foliation::{FoliationError, Provenance, StableFoliationChart};
use morse_cells::hyperbolic::classify;
use morse_cells::ExtReal;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn square() -> BoundaryFlowAssembly {
    let r = examples::square4();
    let x = classify(&r.system, &[0.0, 0.0]).unwrap();
    BoundaryFlowAssembly::analytic(&r, &x).unwrap()
}

fn sphere() -> BoundaryFlowAssembly {
    let r = examples::sphere_height();
    let x = classify(&r.system, &[0.0, 0.0, 1.0]).unwrap();
    BoundaryFlowAssembly::analytic(&r, &x).unwrap()
}

fn rho_at(asm: &BoundaryFlowAssembly, class: usize, p: &DVector<f64>) -> f64 {
    asm.class_rho(class, p.as_slice()).0.to_f64()
}

/// Central difference of `ρ_class` along `v` at `p`.
fn directional(asm: &BoundaryFlowAssembly, class: usize, p: &DVector<f64>, v: &DVector<f64>, h: f64) -> f64 {
    (rho_at(asm, class, &(p + v * h)) - rho_at(asm, class, &(p - v * h))) / (2.0 * h)
}

fn sample_square(rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_vec(vec![rng.gen_range(-0.999..0.999), rng.gen_range(-0.999..0.999)])
}

fn sample_in_closure(asm: &BoundaryFlowAssembly, rng: &mut ChaCha8Rng, draw: fn(&mut ChaCha8Rng) -> DVector<f64>) -> DVector<f64> {
    loop {
        let p = draw(rng);
        if asm.min_rho(p.as_slice()).0 <= ExtReal::Finite(1.0) {
            return p;
        }
    }
}

fn sample_sphere(rng: &mut ChaCha8Rng) -> DVector<f64> {
    loop {
        let v = DVector::from_vec(vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

#[test]
fn partition_examples() {
    let one = |v: f64| ExtReal::Finite(v);
    let (_, chi) = partition_weights(&[one(0.5)], 1.0, 1.5);
    assert_eq!(chi, vec![1.0]);
    let (_, chi) = partition_weights(&[one(0.5), one(0.5)], 1.0, 1.5);
    assert_eq!(chi, vec![0.0, 1.0]);
    let (psi, chi) = partition_weights(&[one(0.5), one(1.25)], 1.0, 1.5);
    assert!(psi[1] > 0.0 && psi[1] < 1.0);
    assert_eq!(psi[1], 0.5);
    assert_eq!(chi, vec![1.0 - psi[1], psi[1]]);
    let (_, chi) = partition_weights(&[ExtReal::PosInf, one(2.0)], 1.0, 1.5);
    assert_eq!(chi, vec![0.0, 0.0]);
}

#[test]
fn partition_properties_on_samples() {
    let asm = square();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..2000 {
        let p = sample_square(&mut rng);
        let rhos = asm.rhos(p.as_slice());
        let chi = asm.chi_partition(p.as_slice());
        for i in 0..rhos.len() {
            if rhos[i] == ExtReal::PosInf {
                assert_eq!(chi[i], 0.0);
            }
            if rhos[i + 1..].iter().any(|r| *r <= ExtReal::Finite(1.0)) {
                assert_eq!(chi[i], 0.0, "{p}");
            }
            let higher_closed = rhos[i + 1..].iter().any(|r| *r <= ExtReal::Finite(1.0));
            if rhos[i] <= ExtReal::Finite(1.0) && !higher_closed {
                assert!(chi[i] > 0.0, "{p}");
            }
        }
    }
}

#[test]
fn charts_cover_the_punctured_cell() {
    let asm = square();
    for i in -40..=40 {
        for j in -40..=40 {
            if i == 0 && j == 0 {
                continue;
            }
            let p = [i as f64 / 40.5, j as f64 / 40.5];
            assert!(asm.rhos(&p).iter().any(|r| r.is_finite()), "{p:?}");
        }
    }
    let sph = sphere();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..500 {
        let p = sample_sphere(&mut rng);
        if p[2] < 1.0 - 1e-9 {
            assert!(sph.rhos(p.as_slice())[0].is_finite());
        }
    }
}

#[test]
fn rho_is_continuous_into_infinity_across_the_chart_edge() {
    let asm = square();
    // Along y = 0.5 the saddle (1, 0) domain ends where a meets τ^u.
    let mut last = 0.0;
    let mut x = 0.99;
    while asm.class_rho(1, &[x, 0.5]).0.is_finite() {
        last = asm.class_rho(1, &[x, 0.5]).0.to_f64();
        x -= 1e-5;
    }
    assert!(last > 1e3, "{last}");
    assert_eq!(asm.class_rho(1, &[x - 0.01, 0.5]).0, ExtReal::PosInf);
}

#[test]
fn y_field_identity_on_saddle_chart() {
    let asm = square();
    for p in [[0.8, 0.2], [0.95, -0.4], [-0.9, 0.1], [0.3, 0.97], [0.7, 0.0]] {
        let p = DVector::from_vec(p.to_vec());
        let y = asm.y_field(1, p.as_slice()).unwrap();
        let d = directional(&asm, 1, &p, &y, 1e-5);
        let r = rho_at(&asm, 1, &p);
        assert!((d + r).abs() < 1e-8, "{p}: {d} vs {}", -r);
        // Horizontal leaves for the x-axis saddles, vertical for the y-axis ones.
        let axis = if p[0].abs() > p[1].abs() { 1 } else { 0 };
        assert_eq!(y[axis], 0.0);
    }
}

#[test]
fn y_field_on_sphere_points_south() {
    let asm = sphere();
    for p in [[0.6, 0.0, -0.8], [0.0, 0.8, 0.6], [0.3, -0.4, (1.0f64 - 0.25).sqrt()]] {
        let p = DVector::from_vec(p.to_vec());
        let y = asm.y_field(0, p.as_slice()).unwrap();
        assert!(y[2] < 0.0);
        assert!(y.dot(&p).abs() < 1e-14);
        let d = directional(&asm, 0, &p, &y, 1e-5);
        let r = rho_at(&asm, 0, &p);
        assert!((d + r).abs() < 1e-8, "{p}: {d} vs {}", -r);
    }
}

/// A chart with `ρ` doubled and no closed-form gradient.
struct Doubled(Arc<dyn StableFoliationChart>);

impl StableFoliationChart for Doubled {
    fn name(&self) -> String {
        format!("2·{}", self.0.name())
    }
    fn owner(&self) -> &DVector<f64> {
        self.0.owner()
    }
    fn index(&self) -> usize {
        self.0.index()
    }
    fn phase_dim(&self) -> usize {
        self.0.phase_dim()
    }
    fn provenance(&self) -> Provenance {
        self.0.provenance()
    }
    fn contains(&self, p: &[f64]) -> bool {
        self.0.contains(p)
    }
    fn leaf_projection(&self, p: &[f64]) -> Option<DVector<f64>> {
        self.0.leaf_projection(p)
    }
    fn tau_u(&self, p: &[f64]) -> Option<ExtReal> {
        self.0.tau_u(p)
    }
    fn sphere_parameter(&self, p: &[f64]) -> Option<ExtReal> {
        self.0.sphere_parameter(p)
    }
    fn rho(&self, p: &[f64]) -> ExtReal {
        match self.0.rho(p) {
            ExtReal::Finite(v) => ExtReal::Finite(2.0 * v),
            other => other,
        }
    }
    fn leaf_tangent(&self, p: &[f64]) -> DMatrix<f64> {
        self.0.leaf_tangent(p)
    }
    fn project_to_leaf(&self, p: &[f64], leaf_of: &[f64]) -> DVector<f64> {
        self.0.project_to_leaf(p, leaf_of)
    }
    fn sphere_leaf(&self, p: &[f64], a: f64, n: usize) -> Result<Vec<DVector<f64>>, FoliationError> {
        self.0.sphere_leaf(p, a, n)
    }
}

#[test]
fn doubling_rho_keeps_the_field() {
    let r = examples::square4();
    let x = classify(&r.system, &[0.0, 0.0]).unwrap();
    let saddle: Arc<dyn StableFoliationChart> = Arc::new(SquareSaddleChart::new(0, 1.0));
    let single = BoundaryFlowAssembly::new(&r.system, &x, vec![saddle.clone()]).unwrap();
    let doubled = BoundaryFlowAssembly::new(&r.system, &x, vec![Arc::new(Doubled(saddle))]).unwrap();
    for p in [[0.8, 0.2], [0.9, -0.5]] {
        let p = DVector::from_vec(p.to_vec());
        let y1 = single.y_field(1, p.as_slice()).unwrap();
        let y2 = doubled.y_field(1, p.as_slice()).unwrap();
        assert!((&y1 - &y2).norm() < 1e-6 * y1.norm(), "{y1} {y2}");
        let d = directional(&doubled, 1, &p, &y2, 1e-5);
        assert!((d + rho_at(&doubled, 1, &p)).abs() < 1e-6);
    }
}

#[test]
fn single_chart_region_uses_its_field() {
    let asm = square();
    let p = [0.999, 0.2];
    assert_eq!(asm.chi_partition(&p), vec![0.0, 1.0]);
    assert_eq!(asm.boundary_field(&p).unwrap(), asm.y_field(1, &p).unwrap());
}

#[test]
fn radial_functions_decay_at_the_partition_rate() {
    let asm = square();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = [0usize; 2];
    let mut flat = 0;
    for k in 0..600 {
        // Every third sample is drawn near a corner, where the sink classes matter.
        let p = if k % 3 == 0 {
            let c = DVector::from_vec(vec![if rng.gen_bool(0.5) { 1.0 } else { -1.0 }, if rng.gen_bool(0.5) { 1.0 } else { -1.0 }]);
            c.component_mul(&DVector::from_vec(vec![rng.gen_range(0.97..0.9999), rng.gen_range(0.97..0.9999)]))
        } else {
            sample_square(&mut rng)
        };
        let rhos = asm.rhos(p.as_slice());
        let chi = asm.chi_partition(p.as_slice());
        let y = asm.boundary_field(p.as_slice()).unwrap();
        for i in 0..rhos.len() {
            if rhos[i] <= ExtReal::Finite(1.0) {
                let r = rhos[i].to_f64();
                let d = directional(&asm, i, &p, &y, 1e-6);
                assert!((d + chi[i] * r).abs() < 1e-5, "{p} class {i}: {d} vs {}", -chi[i] * r);
                checked[i] += 1;
                for j in 0..i {
                    if chi[j] == 0.0 && rhos[j].is_finite() {
                        let dj = directional(&asm, j, &p, &y, 1e-6);
                        assert!(dj.abs() < 1e-6, "{p}: dρ_{j}[Y] = {dj}");
                        flat += 1;
                    }
                }
            }
        }
    }
    assert!(checked[0] > 5 && checked[1] > 20 && flat > 5, "{checked:?} {flat}");
}

#[test]
fn theta_orbit_stays_on_its_horizontal_leaf() {
    let asm = square();
    let idle = asm.theta_flow(&[0.5, 0.2], 3.0).unwrap();
    assert_eq!(idle.as_slice(), &[0.5, 0.2]);
    let p = [0.8, 0.2];
    let r0 = asm.class_rho(1, &p).0.to_f64();
    let traj = asm.theta_trajectory(&p, 5.0, true).unwrap();
    for (t, s) in traj.times.iter().zip(&traj.states) {
        assert!((s[1] - 0.2).abs() < 1e-8);
        // ln ρ falls at unit rate until 1 − x nears the integrator tolerance.
        if *t <= 2.0 {
            let r = asm.class_rho(1, s).0.to_f64();
            assert!((r.ln() - (r0.ln() - t)).abs() < 1e-6, "t={t}");
        }
    }
}

#[test]
fn theta_decay_is_monotone_and_bounded() {
    let asm = square();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..30 {
        let p = sample_in_closure(&asm, &mut rng, sample_square);
        let traj = asm.theta_trajectory(p.as_slice(), 4.0, true).unwrap();
        for i in 0..asm.classes() {
            if asm.class_rho(i, p.as_slice()).0 > ExtReal::Finite(1.0) {
                continue;
            }
            let rs: Vec<f64> = traj.states.iter().map(|s| asm.class_rho(i, s).0.to_f64()).collect();
            for k in 1..rs.len() {
                assert!(rs[k] <= rs[k - 1] * (1.0 + 1e-9), "{p}: class {i}");
                let dt = traj.times[k] - traj.times[k - 1];
                assert!(rs[k] >= rs[k - 1] * (-dt).exp() * (1.0 - 1e-5), "{p}: class {i}");
            }
        }
    }
}

#[test]
fn boundary_points_enter_v_strictly() {
    let asm = square();
    for y in [0.1, 0.4, -0.6] {
        let rho = |x: f64| asm.min_rho(&[x, y]).0.to_f64();
        let (mut lo, mut hi) = (0.3, 0.999);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if rho(mid) > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let p = [hi, y];
        assert!((rho(hi) - 1.0).abs() < 1e-9);
        let q = asm.theta_flow(&p, 0.01).unwrap();
        assert!(asm.in_v(q.as_slice()), "{q}");
    }
}

#[test]
fn omega_theta_closed_forms() {
    let asm = square();
    let w = asm.omega_theta(&[0.999, 0.2], 1e-8).unwrap();
    assert_eq!(w.class, 1);
    assert!((w.point[0] - 1.0).abs() < 1e-5 && (w.point[1] - 0.2).abs() < 1e-5, "{w:?}");
    let w = asm.omega_theta(&[-0.3, -0.9995], 1e-8).unwrap();
    assert!((w.point[0] + 0.3).abs() < 1e-5 && (w.point[1] + 1.0).abs() < 1e-5, "{w:?}");
    let w = asm.omega_theta(&[0.995, 0.995], 1e-8).unwrap();
    assert_eq!(w.class, 0);
    assert!((w.point[0] - 1.0).abs() < 1e-5 && (w.point[1] - 1.0).abs() < 1e-5, "{w:?}");
    assert!(matches!(asm.omega_theta(&[0.3, 0.1], 1e-8), Err(BoundaryFlowError::NotInClosure { .. })));

    let sph = sphere();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let p = sample_in_closure(&sph, &mut rng, sample_sphere);
        let w = sph.omega_theta(p.as_slice(), 1e-8).unwrap();
        assert!((DVector::from_vec(w.point) - DVector::from_vec(vec![0.0, 0.0, -1.0])).norm() < 1e-6);
    }
}

#[test]
fn omega_theta_is_continuous_and_confined() {
    let asm = square();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut pairs = 0;
    while pairs < 100 {
        let p = sample_in_closure(&asm, &mut rng, sample_square);
        let ang: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let q = &p + DVector::from_vec(vec![ang.cos(), ang.sin()]) * 1e-3;
        if asm.min_rho(q.as_slice()).0 > ExtReal::Finite(1.0) {
            continue;
        }
        let wp = asm.omega_theta(p.as_slice(), 1e-8).unwrap();
        let wq = asm.omega_theta(q.as_slice(), 1e-8).unwrap();
        let jump = (DVector::from_vec(wp.point.clone()) - DVector::from_vec(wq.point.clone())).norm();
        assert!(jump < 1e-2, "{p} → {:?}, {q} → {:?}", wp.point, wq.point);
        // The orbit tail lies on the limiting leaf.
        let tail = asm.theta_flow(p.as_slice(), wp.time).unwrap();
        let chart = asm.charts(wp.class).iter().find(|c| c.name() == wp.chart).unwrap();
        let on_leaf = chart.project_to_leaf(tail.as_slice(), &wp.point);
        assert!((on_leaf - &tail).norm() < 1e-8);
        pairs += 1;
    }
}

#[test]
fn theta_is_positively_complete_on_the_closure() {
    for (asm, draw) in [(square(), sample_square as fn(&mut ChaCha8Rng) -> DVector<f64>), (sphere(), sample_sphere)] {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let p = sample_in_closure(&asm, &mut rng, draw);
            let w = asm.omega_theta(p.as_slice(), 1e-6);
            assert!(w.is_ok(), "{p}: {w:?}");
        }
    }
}

#[test]
fn backward_theta_leaves_v() {
    for (asm, draw) in [(square(), sample_square as fn(&mut ChaCha8Rng) -> DVector<f64>), (sphere(), sample_sphere)] {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let p = loop {
                let p = sample_in_closure(&asm, &mut rng, draw);
                if asm.in_v(p.as_slice()) {
                    break p;
                }
            };
            let mut state = p.clone();
            let mut exited = false;
            for _ in 0..20 {
                state = asm.theta_flow(state.as_slice(), -1.0).unwrap();
                if !asm.in_v(state.as_slice()) {
                    exited = true;
                    break;
                }
            }
            assert!(exited, "{p} stays in V backward");
        }
    }
}

#[test]
fn limits_export_as_csv() {
    let asm = square();
    let w = asm.omega_theta(&[0.999, 0.2], 1e-8).unwrap();
    let mut buf = Vec::new();
    write_limits_csv(&mut buf, &[(vec![0.999, 0.2], w)]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "seed0,seed1,limit0,limit1,class,chart");
    assert!(lines.next().unwrap().ends_with(",1,\"saddle(1, 0)\""));
}
