use morse_cells::boundaryflow::BoundaryFlowAssembly;
use morse_cells::examples;
use morse_cells::hyperbolic::classify;
use morse_cells::juxtapose::*;
use morse_cells::ExtReal;
use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn shift(speed: f64) -> LocalFlow {
    LocalFlow::complete(1, move |t, x| Ok(DVector::from_vec(vec![x[0] + speed * t])))
}

fn half_line() -> Region {
    Region::new(|x| -x[0])
}

fn pair() -> Juxtaposition {
    Juxtaposition::new(shift(1.0), shift(2.0), half_line(), 100.0)
}

#[test]
fn entrance_time_of_a_translation() {
    let phi = shift(1.0);
    let v = half_line();
    assert_eq!(entrance_time(&phi, &v, &[0.0], 10.0).unwrap(), ExtReal::Finite(0.0));
    let t = entrance_time(&phi, &v, &[-1.0], 10.0).unwrap().to_f64();
    assert!((t - 1.0).abs() < 1e-12, "{t}");
    let t = entrance_time(&phi, &v, &[0.7], 10.0).unwrap().to_f64();
    assert!((t + 0.7).abs() < 1e-12, "{t}");
    assert_eq!(entrance_time(&phi, &v, &[-20.0], 10.0).unwrap(), ExtReal::PosInf);
    assert_eq!(entrance_time(&phi, &v, &[20.0], 10.0).unwrap(), ExtReal::NegInf);
}

#[test]
fn juxtaposition_of_two_translations() {
    let psi = pair();
    assert!((psi.eval(3.0, &[-1.0]).unwrap()[0] - 4.0).abs() < 1e-12);
    // Inside V backwards: θ until the exit at σ = −1/2, then φ.
    assert!((psi.eval(-2.0, &[1.0]).unwrap()[0] + 1.5).abs() < 1e-12);
    assert!((psi.eval(-0.25, &[1.0]).unwrap()[0] - 0.5).abs() < 1e-12);
    assert_eq!(psi.eval(0.0, &[-3.0]).unwrap()[0], -3.0);
    // φ = θ gives back φ.
    let same = Juxtaposition::new(shift(1.0), shift(1.0), half_line(), 100.0);
    for (t, x) in [(3.0, -1.0), (-2.0, 0.5), (0.4, -0.1)] {
        assert!((same.eval(t, &[x]).unwrap()[0] - (x + t)).abs() < 1e-12);
    }
    // Both branches agree on the boundary.
    for t in [-1.0, 0.5, 2.0] {
        let a = psi.outside_branch(t, &[0.0]).unwrap();
        let b = psi.inside_branch(t, &[0.0]).unwrap();
        assert!((a - b).norm() < 1e-8);
    }
    let flow = psi.to_local_flow();
    assert_eq!(group_law_residual(&flow, &[-2.0], 0.0, 1.3).unwrap(), 0.0);
}

#[test]
fn juxtaposition_precondition_is_checked() {
    // V = (−∞, 0) is not positively invariant for x ↦ x + t.
    let bad = Region::new(|x| x[0]);
    let samples = vec![DVector::from_vec(vec![-1e-4])];
    let err = juxtapose(shift(1.0), shift(2.0), bad, 10.0, &samples).unwrap_err();
    assert!(matches!(err, JuxtaposeError::NotInvariant { .. }));
    assert!(juxtapose(shift(1.0), shift(2.0), half_line(), 10.0, &samples).is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn translation_pair_obeys_the_group_law(x in -5.0f64..5.0, s in -5.0f64..5.0, t in -5.0f64..5.0) {
        let flow = pair().to_local_flow();
        prop_assert!(group_law_residual(&flow, &[x], s, t).unwrap() < 1e-9);
    }

    #[test]
    fn switch_point_is_continuous(x in -5.0f64..-0.01) {
        let psi = pair();
        let tau = psi.tau(&[x]).unwrap().to_f64();
        let before = psi.eval(tau - 1e-9, &[x]).unwrap()[0];
        let after = psi.eval(tau + 1e-9, &[x]).unwrap()[0];
        prop_assert!((after - before).abs() < 1e-8);
        // Outside V and before entering, ψ is φ.
        prop_assert!((psi.eval(0.5 * tau, &[x]).unwrap()[0] - (x + 0.5 * tau)).abs() < 1e-12);
    }
}

fn square_psi() -> (Juxtaposition, BoundaryFlowAssembly) {
    let r = examples::square4();
    let x = classify(&r.system, &[0.0, 0.0]).unwrap();
    let asm = BoundaryFlowAssembly::analytic(&r, &x).unwrap();
    let psi = Juxtaposition::new(LocalFlow::from_system(&r.system), LocalFlow::from_boundary_flow(&asm), Region::from_assembly(&asm), 60.0);
    (psi, asm)
}

fn sample_cell(rng: &mut ChaCha8Rng) -> DVector<f64> {
    loop {
        let p = DVector::from_vec(vec![rng.gen_range(-0.95..0.95), rng.gen_range(-0.95..0.95)]);
        if p.norm() > 0.05 {
            return p;
        }
    }
}

#[test]
fn square4_entrance_time_is_continuous() {
    let (psi, _) = square_psi();
    let t0 = psi.tau(&[0.3, 0.1]).unwrap().to_f64();
    assert!(t0 > 0.0);
    // 100 consecutive seeds along a short arc, spacing about 1e-4.
    let seeds: Vec<[f64; 2]> = (0..100)
        .map(|k| {
            let a = k as f64 * std::f64::consts::TAU / 100.0;
            [0.3 + 1.6e-3 * a.cos(), 0.1 + 1.6e-3 * a.sin()]
        })
        .collect();
    let taus: Vec<f64> = seeds.iter().map(|q| psi.tau(q).unwrap().to_f64()).collect();
    let worst = taus.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0f64, f64::max);
    assert!(worst < 1e-2, "{worst}");
    // Negative inside V, zero on its boundary.
    let inside = [0.999, 0.2];
    assert!(psi.tau(&inside).unwrap().to_f64() < 0.0);
    let y = psi.phi.eval(t0, &[0.3, 0.1]).unwrap();
    assert!(psi.region.margin(y.as_slice()).abs() < 1e-8);
}

#[test]
fn square4_branches_agree_on_the_boundary() {
    let (psi, _) = square_psi();
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..10 {
        let x = sample_cell(&mut rng);
        let tau = psi.tau(x.as_slice()).unwrap().to_f64();
        if !tau.is_finite() || tau <= 0.0 {
            continue;
        }
        let b = psi.phi.eval(tau, x.as_slice()).unwrap();
        for t in [-0.5, 0.7] {
            let out = psi.outside_branch(t, b.as_slice()).unwrap();
            let ins = psi.inside_branch(t, b.as_slice()).unwrap();
            assert!((out - ins).norm() < 1e-6, "{b}");
        }
    }
}

#[test]
fn square4_juxtaposition_obeys_the_group_law() {
    let (psi, _) = square_psi();
    let flow = psi.to_local_flow();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let x = sample_cell(&mut rng);
        let s = rng.gen_range(-1.5..1.5);
        let t = rng.gen_range(-1.5..1.5);
        let r = group_law_residual(&flow, x.as_slice(), s, t).unwrap();
        worst = worst.max(r);
        assert!(r < 1e-5, "x={x} s={s} t={t}: {r:e}");
    }
    println!("worst group-law residual {worst:e}");
}
