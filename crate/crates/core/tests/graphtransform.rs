use morse_cells::counterexample;
use morse_cells::examples;
use morse_cells::graphtransform::*;
use morse_cells::hyperbolic::classify;
use morse_cells::transversality::principal_angles;
use nalgebra::{DMatrix, DVector};

fn quad() -> (morse_cells::FlowSystem, morse_cells::HyperbolicPoint) {
    let r = examples::quad_saddle();
    let h = classify(&r.system, &[0.0, 0.0]).unwrap();
    (r.system, h)
}

fn eventually_monotone(seq: &[f64]) -> bool {
    let start = seq.len() / 5;
    seq[start..].windows(2).all(|w| w[1] <= w[0])
}

#[test]
fn quad_saddle_semigroup() {
    let (sys, h) = quad();
    let sigma = LipGraph::zero(&h, 0.5, 65);
    let res = semigroup_residual(&sys, &sigma, 0.5, 0.5).unwrap();
    assert!(res < 1e-5, "semigroup residual {res:e}");
    assert!(semigroup_residual(&sys, &sigma, 0.0, 0.5).unwrap() < 1e-12);
}

#[test]
fn quad_saddle_transform_matches_closed_form() {
    // Γ(t, 0)(u) = u²(1 − e^{−3t})/3 for ẋ = x, ẏ = −y + x².
    let (sys, h) = quad();
    let sigma = LipGraph::zero(&h, 0.5, 65);
    let out = graph_transform(&sys, &sigma, 1.0).unwrap();
    let c = (1.0 - (-3.0f64).exp()) / 3.0;
    for i in 0..out.grid().len() {
        let u = out.grid().node(i)[0];
        assert!((out.node_value(i)[0] - c * u * u).abs() < 1e-9);
    }
}

#[test]
fn quad_saddle_transform_matches_point_cloud_oracle() {
    // Evolve a dense cloud on graph σ ≡ 0 and refit it as a graph by linear interpolation.
    let (sys, h) = quad();
    let sigma = LipGraph::zero(&h, 0.5, 65);
    let out = graph_transform(&sys, &sigma, 1.0).unwrap();
    let mut cloud: Vec<(f64, f64)> = (0..=4000)
        .map(|i| {
            let w = -0.5 + i as f64 / 4000.0;
            let p = sys.flow_map(&[w, 0.0], 1.0).unwrap();
            (p[0], p[1])
        })
        .collect();
    cloud.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut worst = 0.0f64;
    for i in 0..out.grid().len() {
        let u = out.grid().node(i)[0];
        let j = cloud.partition_point(|p| p.0 < u).clamp(1, cloud.len() - 1);
        let (a, b) = (cloud[j - 1], cloud[j]);
        let y = a.1 + (b.1 - a.1) * (u - a.0) / (b.0 - a.0);
        worst = worst.max((out.node_value(i)[0] - y).abs());
    }
    assert!(worst < 2e-4, "oracle distance {worst:e}");
}

#[test]
fn quad_saddle_unstable_manifold() {
    let (sys, h) = quad();
    let settings = ManifoldSettings { radius: 0.5, nodes: Some(65), ..Default::default() };
    let run = unstable_manifold_local(&sys, &h, &settings).unwrap();
    assert_eq!(run.halvings, 0);
    let g = &run.graph;
    let mut worst = 0.0f64;
    for i in 0..g.grid().len() {
        let u = g.grid().node(i)[0];
        worst = worst.max((g.node_value(i)[0] - u * u / 3.0).abs());
    }
    assert!(worst < 1e-4, "sup error {worst:e}");
    let n = run.distances_c0.len();
    assert!(run.distances_c0[n - 2] < 1e-6 && run.distances_c1[n - 2] < 1e-4);
    assert!(eventually_monotone(&run.distances_c0), "{:?}", run.distances_c0);
    assert!(eventually_monotone(&run.distances_c1), "{:?}", run.distances_c1);
    assert!(run.lipschitz.iter().all(|&l| l <= 1.0));
    // Invariance equation σ'(x)·x + σ(x) − x² = 0 at interior nodes; differencing
    // amplifies the node-to-node interpolation noise by roughly 1/h.
    let hstep = g.grid().spacing();
    for i in g.grid().interior() {
        let u = g.grid().node(i)[0];
        let d = g.grid().central_difference(g.values(), 1, &[u], hstep)[(0, 0)];
        let r = (d * u + g.node_value(i)[0] - u * u).abs();
        assert!(r < 5e-4, "u = {u}: {r:e}");
    }
}

#[test]
fn quad_saddle_fixed_point_is_invariant_for_other_times() {
    // Needs a grid whose interpolation error is below the C⁰ tolerance.
    let (sys, h) = quad();
    let settings = ManifoldSettings { radius: 0.5, nodes: Some(257), tol_c0: 1e-6, tol_c1: 1e-4, ..Default::default() };
    let run = unstable_manifold_local(&sys, &h, &settings).unwrap();
    for t in [0.5, 1.0, 2.0] {
        let moved = graph_transform(&sys, &run.graph, t).unwrap();
        let d = moved.sup_distance(&run.graph);
        assert!(d < 2.0 * settings.tol_c0, "t = {t}: {d:e}");
    }
}

#[test]
fn quad_saddle_tangents() {
    let (sys, h) = quad();
    let run = unstable_manifold_local(&sys, &h, &ManifoldSettings { nodes: Some(65), ..Default::default() }).unwrap();
    for u in [-0.3, 0.0, 0.1, 0.4] {
        let t = tangent_space_at(&run.graph, &[u]).unwrap();
        let want = morse_cells::Subspace::from_spanning(&DMatrix::from_column_slice(2, 1, &[1.0, 2.0 * u / 3.0]));
        let a = principal_angles(&t, &want).unwrap()[0];
        assert!(a < 1e-3, "u = {u}: {a:e}");
    }
    let at0 = tangent_space_at(&run.graph, &[0.0]).unwrap();
    let eu = morse_cells::Subspace::from_spanning(&h.unstable);
    assert!(principal_angles(&at0, &eu).unwrap()[0] < 1e-6);
    assert!(matches!(tangent_space_at(&run.graph, &[0.5]), Err(GraphTransformError::BoundaryStencil)));
}

#[test]
fn quad_saddle_tangential_consistency() {
    let (sys, h) = quad();
    let sigma = LipGraph::from_fn(&h, 0.5, 65, |u| DVector::from_element(1, u[0] * u[0] / 4.0));
    let a = tangential_consistency(&sys, &sigma, 1.0).unwrap();
    assert!(a < 1e-3, "{a:e}");
    assert!(tangential_consistency(&sys, &sigma, 0.0).unwrap() < 1e-10);
}

#[test]
fn quad_saddle_stable_manifold_is_vertical_axis() {
    let (sys, h) = quad();
    let run = stable_manifold_local(&sys, &h, &ManifoldSettings { nodes: Some(33), ..Default::default() }).unwrap();
    assert!(run.graph.max_value_norm() < 1e-10);
}

#[test]
fn linear_saddle_graphs() {
    let r = examples::linear_saddle(&DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -2.0]));
    let h = classify(&r.system, &[0.0, 0.0]).unwrap();
    let run = unstable_manifold_local(&r.system, &h, &ManifoldSettings { nodes: Some(17), ..Default::default() }).unwrap();
    assert!(run.graph.max_value_norm() < 1e-12);
    let sigma = LipGraph::from_fn(&h, 0.5, 17, |_| DVector::from_element(1, 0.1));
    assert!(semigroup_residual(&r.system, &sigma, 0.3, 0.7).unwrap() < 1e-10);
    assert!(tangential_consistency(&r.system, &sigma, 0.8).unwrap() < 1e-10);
    let st = stable_manifold_local(&r.system, &h, &ManifoldSettings { nodes: Some(17), ..Default::default() }).unwrap();
    assert!(st.graph.max_value_norm() < 1e-12);
    let t = tangent_space_at(&run.graph, &[0.2]).unwrap();
    let eu = morse_cells::Subspace::from_spanning(&h.unstable);
    assert!(principal_angles(&t, &eu).unwrap()[0] < 1e-12);
}

#[test]
fn sphere_height_south_pole_stable_disk_is_full() {
    let r = examples::sphere_height();
    let south = classify(&r.system, &[0.0, 0.0, -1.0]).unwrap();
    assert_eq!(south.index, 0);
    let run = stable_manifold_local(&r.system, &south, &ManifoldSettings { nodes: Some(9), ..Default::default() }).unwrap();
    assert_eq!(run.graph.owner().index, 2);
    assert_eq!(run.graph.width(), 0);
    assert_eq!(run.iterations, 0);
}

#[test]
fn noncell_top_saddle_manifold_lies_on_sphere() {
    let (_, sys) = counterexample::build_f3d();
    let sys = sys.with_settings(Default::default());
    let h = classify(&sys, &[0.0, 0.0, 3.0]).unwrap();
    assert_eq!(h.index, 2);
    // Grid spacing 1/128 keeps the multilinear error of the curved graph below 1e-5.
    let settings = ManifoldSettings { radius: 0.0625, nodes: Some(17), tol_c0: 1e-9, tol_c1: 1e-6, ..Default::default() };
    let run = unstable_manifold_local(&sys, &h, &settings).unwrap();
    let g = &run.graph;
    for i in 0..g.grid().len() {
        let p = g.node_point(i);
        assert!((p.norm() - 3.0).abs() < 1e-5, "{p}");
    }
}

#[test]
fn serve_check_on_square4() {
    let r = examples::square4();
    let x = classify(&r.system, &[0.0, 0.0]).unwrap();
    let y = classify(&r.system, &[1.0, 0.0]).unwrap();
    let seq: Vec<Vec<f64>> = (1..=16).map(|h| vec![1.0 - 2f64.powi(-h), 2f64.powi(-h - 3)]).collect();
    let settings = ManifoldSettings { nodes: Some(33), ..Default::default() };
    let angles = serve_check(&r.system, &x, &y, &seq, &settings).unwrap();
    for (p, a) in seq.iter().zip(&angles) {
        if morse_cells::linalg::dist(p, &[1.0, 0.0]) < 1e-4 {
            assert!(*a < 1e-3, "{p:?}: {a:e}");
        }
    }
}

#[test]
fn csv_export_has_header_and_rows() {
    let (_, h) = quad();
    let sigma = LipGraph::zero(&h, 0.5, 5);
    let mut buf = Vec::new();
    sigma.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "u1,s1,x1,x2");
    assert_eq!(lines.len(), 6);
}
