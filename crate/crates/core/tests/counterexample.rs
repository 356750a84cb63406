use morse_cells::counterexample::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn factorization_holds_on_random_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let (r, z): (f64, f64) = loop {
            let r = rng.gen_range(0.0..5.0);
            let z = rng.gen_range(-5.0..5.0);
            if r * r + z * z < 25.0 {
                break (r, z);
            }
        };
        assert!(factorization_residual(r, z).unwrap() < 1e-10);
    }
}

#[test]
fn restricted_hessians() {
    let b = (2.0f64 / 3.0).exp() / 3.0;
    let h3 = restricted_hessian(0.0, 3.0).unwrap();
    let h1 = restricted_hessian(0.0, 1.0).unwrap();
    let e2 = alpha();
    for (got, want) in [(h3[(0, 0)], -b), (h3[(1, 1)], b), (h1[(0, 0)], -e2), (h1[(1, 1)], -e2)] {
        assert!((got - want).abs() < 1e-8, "{got} vs {want}");
    }
    assert!(h3[(0, 1)].abs() < 1e-12 && h1[(0, 1)].abs() < 1e-12);
}

#[test]
fn g_hat_is_invariant_and_sphere_is_invariant() {
    let (_, sys) = build_f3d();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut done = 0;
    while done < 20 {
        let p: Vec<f64> = (0..3).map(|_| rng.gen_range(-4.5..4.5)).collect();
        let n = morse_cells::linalg::norm(&p);
        if !(1.5..4.5).contains(&n) {
            continue;
        }
        let traj = sys.trajectory(&p, 3.0).unwrap();
        match g_invariance_drift(&traj) {
            Ok(d) => {
                assert!(d < 1e-6, "drift {d}");
                done += 1;
            }
            Err(CounterexampleError::SingularProximity { .. }) => continue,
            Err(e) => panic!("{e}"),
        }
    }
    let traj = sys.trajectory(p_k(3).as_slice(), 5.0).unwrap();
    for s in &traj.states {
        assert!((morse_cells::linalg::norm(s) - 3.0).abs() < 1e-6);
    }
}

#[test]
fn witness_alternates() {
    let report = noncell_witness(&PerturbationSpec::default()).unwrap();
    for row in &report.perturbed {
        let want = if row.k % 2 == 0 { -1.0 } else { -3.0 };
        assert!(row.limit[2] == want && row.distance < 1e-5, "{row:?}");
    }
    assert!(report.control.iter().all(|r| r.limit[2] == -3.0));
    assert!(report.backward.iter().all(|r| r.limit[2] == 3.0));
    assert!(report.alternates && !report.control_alternates);
    assert!((report.accumulation_values[0] + alpha()).abs() < 1e-12);
    assert!((report.accumulation_values[1] + beta()).abs() < 1e-12);
    assert!(report.distance_to_accumulation < 1e-6);
}

#[test]
fn naive_boundary_map_jumps_at_even_sites() {
    let (sys, _) = build_perturbed(&PerturbationSpec::default()).unwrap();
    let coarse = naive_boundary_map(&sys, 0.05, 180, 8, 0.05).unwrap();
    let fine = naive_boundary_map(&sys, 0.05, 360, 8, 0.05).unwrap();
    for m in [&coarse, &fine] {
        for &(k, jump) in &m.site_jumps {
            if k % 2 == 0 {
                assert!((jump - 2.0).abs() < 1e-9, "k = {k}: {jump}");
            } else {
                assert_eq!(jump, 0.0, "k = {k}");
            }
        }
        let at_site = |k: usize| m.samples.iter().find(|s| s.theta == 1.0 / k as f64).unwrap();
        assert_eq!(at_site(2).limit, vec![0.0, 0.0, -1.0]);
        assert_eq!(at_site(3).limit, vec![0.0, 0.0, -3.0]);
    }
    assert_eq!(coarse.max_jump, fine.max_jump);
}

#[test]
fn unperturbed_boundary_map_is_constant() {
    let (_, base) = build_f3d();
    let m = naive_boundary_map(&base, 0.05, 90, 8, 0.05).unwrap();
    assert_eq!(m.max_jump, 0.0);
    assert!(m.samples.iter().all(|s| s.limit == vec![0.0, 0.0, -3.0] && (s.f_value + beta()).abs() < 1e-12));
}

#[test]
fn cap_circle_lies_on_the_invariant_sphere() {
    for t in [0.0, 0.5, 2.0] {
        let p = cap_circle(0.05, t);
        assert!((p.norm() - 3.0).abs() < 1e-14);
        assert!((p[2] - 3.0 * 0.05f64.cos()).abs() < 1e-15);
    }
}
