use morse_cells::boundaryflow::BoundaryFlowAssembly;
use morse_cells::cellmap::{self, SphereParam, SvgOptions};
use morse_cells::counterexample::{self, LimitRow, PerturbationSpec};
use morse_cells::graphtransform::{stable_manifold_local, tangent_space_at, unstable_manifold_local, ManifoldSettings};
use morse_cells::hyperbolic::connection_graph;
use morse_cells::juxtapose::{group_law_residual, Juxtaposition};
use morse_cells::transversality::transversality_scan;
use morse_cells::HyperbolicPoint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::{Format, ManifoldKind, RunConfig};
use crate::error::CliError;
use crate::output::{cell, cells, ext, ext_vec, Sink};
use crate::system::Loaded;

/// Everything a command needs: parsed config, loaded system, seed and output sink.
pub struct Context<'a> {
    pub cfg: &'a RunConfig,
    pub loaded: Loaded,
    pub seed: u64,
    pub sink: Sink,
    pub verbose: bool,
}

impl Context<'_> {
    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn meta(&self, command: &str) -> Value {
        json!({ "command": command, "system": self.loaded.name, "seed": self.seed })
    }
}

fn section<'a, T>(s: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
    s.as_ref().ok_or_else(|| CliError::validation(format!("config has no {name:?} section")))
}

fn point_json(p: &HyperbolicPoint) -> Value {
    json!({
        "location": ext_vec(p.location.as_slice()),
        "index": p.index,
        "rate": ext(p.rate),
        "r_max": ext(p.r_max),
        "eigenvalues": p.eigenvalues.iter().map(|e| json!([ext(e.re), ext(e.im)])).collect::<Vec<_>>(),
    })
}

fn coord_header(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

pub fn analyze(ctx: &mut Context) -> Result<(), CliError> {
    let sec = section(&ctx.cfg.critical, "critical")?;
    let points = ctx.loaded.classified()?;
    ctx.log(format!("{} stationary points", points.len()));
    let graph = connection_graph(&ctx.loaded.system, &points, sec.connection_samples).map_err(CliError::numerical)?;
    let potential = ctx.loaded.reference.as_ref().and_then(|r| r.potential.clone());
    let f_values: Vec<Option<f64>> = points
        .iter()
        .map(|p| potential.as_ref().and_then(|f| f.eval(p.location.as_slice()).ok()))
        .collect();

    let dim = ctx.loaded.system.dim();
    let mut header = vec!["id".to_string()];
    header.extend(coord_header("x", dim));
    header.extend(["index", "rate", "r_max", "f"].map(String::from));
    let rows: Vec<Vec<String>> = points
        .iter()
        .zip(&f_values)
        .enumerate()
        .map(|(i, (p, f))| {
            let mut r = vec![i.to_string()];
            r.extend(cells(p.location.as_slice()));
            r.extend([p.index.to_string(), cell(p.rate), cell(p.r_max), f.map(cell).unwrap_or_default()]);
            r
        })
        .collect();
    ctx.sink.csv("critical.csv", &header, &rows)?;
    let edge_rows: Vec<Vec<String>> = graph.edges.iter().map(|((a, b), n)| vec![a.to_string(), b.to_string(), n.to_string()]).collect();
    ctx.sink.csv("connections.csv", &["from", "to", "samples"].map(String::from), &edge_rows)?;

    let mut out = ctx.meta("analyze");
    out["points"] = points
        .iter()
        .zip(&f_values)
        .map(|(p, f)| {
            let mut v = point_json(p);
            v["f"] = f.map_or(Value::Null, ext);
            v
        })
        .collect();
    out["connections"] = graph.edges.iter().map(|((a, b), n)| json!({ "from": a, "to": b, "samples": n })).collect();
    out["escaped"] = json!(graph.escaped);
    out["index_violations"] = json!(graph.index_violations);
    ctx.sink.json("critical.json", &out)
}

pub fn manifold(ctx: &mut Context) -> Result<(), CliError> {
    let sec = section(&ctx.cfg.manifold, "manifold")?;
    let x = ctx.loaded.stationary_at("manifold.point", &sec.point)?;
    let settings = ManifoldSettings { radius: sec.r, nodes: sec.grid, step_t: sec.step_t, ..Default::default() };
    let sys = &ctx.loaded.system;
    let run = match sec.kind {
        ManifoldKind::Unstable => unstable_manifold_local(sys, &x, &settings),
        ManifoldKind::Stable => stable_manifold_local(sys, &x, &settings),
    }
    .map_err(|e| CliError::numerical_with(&e, json!({ "point": ext_vec(x.location.as_slice()), "index": x.index })))?;
    ctx.log(format!("converged after {} iterations, {} halvings", run.iterations, run.halvings));
    let graph = &run.graph;
    ctx.sink.emit(Format::Csv, "manifold.csv", |w| graph.write_csv(w))?;

    let header = ["iteration", "change_c0", "change_c1", "distance_c0", "distance_c1", "lipschitz"].map(String::from);
    let rows: Vec<Vec<String>> = (0..=run.iterations)
        .map(|i| {
            let change = |v: &[f64]| if i == 0 { String::new() } else { cell(v[i - 1]) };
            vec![
                i.to_string(),
                change(&run.changes_c0),
                change(&run.changes_c1),
                cell(run.distances_c0[i]),
                cell(run.distances_c1[i]),
                cell(run.lipschitz[i]),
            ]
        })
        .collect();
    ctx.sink.csv("trace.csv", &header, &rows)?;

    let k = graph.grid().axes;
    let n = sec.tangent_samples;
    let mut tangents = Vec::new();
    for i in 0..n {
        let a = if n > 1 { graph.radius() * 0.8 * (2.0 * i as f64 / (n - 1) as f64 - 1.0) } else { 0.0 };
        let mut u = vec![0.0; k];
        if k > 0 {
            u[0] = a;
        }
        let space = tangent_space_at(graph, &u).map_err(CliError::numerical)?;
        let basis = space.basis();
        tangents.push(json!({
            "u": ext_vec(&u),
            "point": ext_vec(graph.point(&u).as_slice()),
            "basis": (0..basis.ncols()).map(|c| ext_vec(basis.column(c).as_slice())).collect::<Vec<_>>(),
        }));
    }
    let mut out = ctx.meta("manifold");
    out["kind"] = json!(match sec.kind {
        ManifoldKind::Unstable => "unstable",
        ManifoldKind::Stable => "stable",
    });
    out["point"] = point_json(&x);
    out["radius"] = ext(graph.radius());
    out["nodes_per_axis"] = json!(settings.nodes_for(k));
    out["halvings"] = json!(run.halvings);
    out["iterations"] = json!(run.iterations);
    out["step_t"] = ext(run.step_t);
    out["final_change_c0"] = run.changes_c0.last().map_or(Value::Null, |&v| ext(v));
    out["final_change_c1"] = run.changes_c1.last().map_or(Value::Null, |&v| ext(v));
    out["lipschitz"] = ext(graph.lipschitz());
    out["tangent_samples"] = Value::Array(tangents);
    ctx.sink.json("manifold.json", &out)
}

pub fn transversality(ctx: &mut Context) -> Result<(), CliError> {
    let sec = section(&ctx.cfg.transversality, "transversality")?;
    let points = ctx.loaded.classified()?;
    let settings = ManifoldSettings { radius: sec.r, ..Default::default() };
    let report = transversality_scan(&ctx.loaded.system, &points, sec.samples, &settings).map_err(CliError::numerical)?;
    ctx.log(format!("{} records, minimum {:e}", report.records.len(), report.minimum));
    let dim = ctx.loaded.system.dim();
    let mut header = ["from", "to", "sample"].map(String::from).to_vec();
    header.extend(coord_header("x", dim));
    header.push("measure".into());
    let rows: Vec<Vec<String>> = report
        .records
        .iter()
        .map(|r| {
            let mut row = vec![r.from.to_string(), r.to.to_string(), r.sample.to_string()];
            row.extend(cells(&r.point));
            row.push(cell(r.measure));
            row
        })
        .collect();
    ctx.sink.csv("transversality.csv", &header, &rows)?;
    let mut out = ctx.meta("transversality");
    out["points"] = points.iter().map(point_json).collect();
    out["records"] = json!(report.records.len());
    out["minimum"] = ext(report.minimum);
    out["witness"] = report.witness.as_ref().map_or(Value::Null, |w| {
        json!({ "from": w.from, "to": w.to, "sample": w.sample, "point": ext_vec(&w.point), "measure": ext(w.measure) })
    });
    out["unresolved"] = json!(report.unresolved);
    ctx.sink.json("transversality.json", &out)
}

fn psi_setup(ctx: &Context, command: &str, point: &[f64]) -> Result<(HyperbolicPoint, BoundaryFlowAssembly, Juxtaposition), CliError> {
    let reference = ctx.loaded.analytic_reference(command)?;
    let x = ctx.loaded.stationary_at(&format!("{command}.point"), point)?;
    if x.index == 0 {
        return Err(CliError::validation(format!("{command}.point is a sink; its cell is the point itself")));
    }
    let asm = BoundaryFlowAssembly::analytic(reference, &x).map_err(CliError::numerical)?;
    let psi = cellmap::build_psi(&reference.system, &x, &asm).map_err(CliError::numerical)?;
    Ok((x, asm, psi))
}

pub fn cellmap(ctx: &mut Context) -> Result<(), CliError> {
    let sec = section(&ctx.cfg.cellmap, "cellmap")?;
    let (x, asm, psi) = psi_setup(ctx, "cellmap", &sec.point)?;
    let g = SphereParam::linear(&ctx.loaded.system, &x, sec.sphere_radius);
    let cm = cellmap::cell_map(&psi, &asm, &g, sec.n_r, sec.n_theta).map_err(CliError::numerical)?;
    let report = cellmap::continuity_report(&cm);
    ctx.log(format!("boundary jump {:e}, {} failures", report.boundary_max, report.failures));
    ctx.sink.emit(Format::Csv, "cellmap.csv", |w| cellmap::write_csv(&cm, w))?;
    ctx.sink.emit(Format::Mesh, "cellmap.mesh", |w| cellmap::write_mesh(&cm, w))?;
    if cm.k == 2 && ctx.loaded.system.dim() >= 2 {
        let opts = SvgOptions { field: (ctx.loaded.system.dim() == 2).then(|| ctx.loaded.system.clone()), ..Default::default() };
        ctx.sink.emit(Format::Svg, "cellmap.svg", |w| cellmap::write_svg(&cm, &opts, w))?;
    }
    let mut out = ctx.meta("cellmap");
    out["point"] = point_json(&x);
    out["n_r"] = json!(sec.n_r);
    out["n_theta"] = json!(cm.directions.len());
    out["samples"] = json!(cm.samples.len());
    out["continuity"] = serde_json::to_value(&report).map_err(|e| CliError::numerical(format!("report serialization: {e}")))?;
    out["failed_samples"] = cm
        .failures()
        .iter()
        .map(|s| json!({ "ring": s.ring, "dir": s.dir, "error": s.failure }))
        .collect();
    if let Some(refine) = &sec.refine {
        let rb = cellmap::refine_boundary(&psi, &asm, &g, sec.n_theta, refine.gap_tol, refine.min_step).map_err(CliError::numerical)?;
        let dim = ctx.loaded.system.dim();
        let mut header = vec!["angle".to_string()];
        header.extend(coord_header("x", dim));
        let rows: Vec<Vec<String>> = rb
            .angles
            .iter()
            .zip(&rb.points)
            .map(|(a, p)| {
                let mut r = vec![cell(*a)];
                r.extend(cells(p));
                r
            })
            .collect();
        ctx.sink.csv("boundary.csv", &header, &rows)?;
        out["refined_boundary"] = json!({ "samples": rb.angles.len(), "max_gap": ext(rb.max_gap), "unresolved": rb.unresolved });
    }
    ctx.sink.json("cellmap.json", &out)
}

fn limit_rows(run: &str, rows: &[LimitRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            let mut row = vec![run.to_string(), r.k.to_string()];
            row.extend(cells(&r.start));
            row.extend(cells(&r.limit));
            row.extend([cell(r.f_value), cell(r.distance), cell(r.time)]);
            row
        })
        .collect()
}

pub fn counterexample(ctx: &mut Context) -> Result<(), CliError> {
    let sec = section(&ctx.cfg.counterexample, "counterexample")?;
    if !matches!(&ctx.loaded.reference, Some(r) if r.name == "noncell") {
        return Err(CliError::validation(format!("counterexample runs on builtin:noncell, got {}", ctx.loaded.name)));
    }
    let spec = PerturbationSpec { k_max: sec.k_max, eps: sec.eps, delta: sec.delta };
    let report = counterexample::noncell_witness(&spec).map_err(|e| CliError::numerical_with(&e, json!({ "spec": spec })))?;
    ctx.log(format!("alternates: {}, gap {:.6}", report.alternates, report.gap));

    let mut header = ["run", "k"].map(String::from).to_vec();
    header.extend(coord_header("start", 3));
    header.extend(coord_header("limit", 3));
    header.extend(["f", "distance", "time"].map(String::from));
    let mut rows = limit_rows("perturbed", &report.perturbed);
    rows.extend(limit_rows("control", &report.control));
    rows.extend(limit_rows("backward", &report.backward));
    ctx.sink.csv("limits.csv", &header, &rows)?;

    let (f, _) = counterexample::build_f3d();
    let mut out = ctx.meta("counterexample");
    out["critical_points"] = counterexample::critical_points()
        .iter()
        .map(|(p, k)| json!({ "location": ext_vec(p.as_slice()), "index": k, "f": f.eval(p.as_slice()).map_or(Value::Null, ext) }))
        .collect();
    out["witness"] = serde_json::to_value(&report).map_err(|e| CliError::numerical(format!("report serialization: {e}")))?;

    if sec.n_theta > 0 {
        let (sys, _) = counterexample::build_perturbed(&spec).map_err(CliError::numerical)?;
        let map = counterexample::naive_boundary_map(&sys, sec.cap, sec.n_theta, sec.k_max, 0.05).map_err(CliError::numerical)?;
        let header = ["theta", "limit1", "limit2", "limit3", "f"].map(String::from);
        let rows: Vec<Vec<String>> = map
            .samples
            .iter()
            .map(|s| {
                let mut r = vec![cell(s.theta)];
                r.extend(cells(&s.limit));
                r.push(cell(s.f_value));
                r
            })
            .collect();
        ctx.sink.csv("boundary_map.csv", &header, &rows)?;
        out["naive_boundary_map"] = json!({
            "cap": ext(map.cap),
            "n_theta": map.n_theta,
            "samples": map.samples.len(),
            "max_jump": ext(map.max_jump),
            "site_jumps": map.site_jumps.iter().map(|(k, j)| json!({ "k": k, "jump": ext(*j) })).collect::<Vec<_>>(),
        });
    }
    ctx.sink.json("counterexample.json", &out)
}

pub fn juxt(ctx: &mut Context) -> Result<(), CliError> {
    let sec = section(&ctx.cfg.juxt, "juxt")?;
    let (x, _, psi) = psi_setup(ctx, "juxt", &sec.point)?;
    let g = SphereParam::linear(&ctx.loaded.system, &x, sec.sphere_radius);
    let dirs = cellmap::ball_directions(x.index, 64).map_err(CliError::numerical)?;
    let flow = psi.to_local_flow();
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let jobs: Vec<(usize, f64, f64, f64)> = (0..sec.samples)
        .map(|_| (rng.gen_range(0..dirs.len()), rng.gen_range(-1.0..2.0), rng.gen_range(-sec.span..=sec.span), rng.gen_range(-sec.span..=sec.span)))
        .collect();
    let dim = ctx.loaded.system.dim();
    let mut rows = Vec::with_capacity(jobs.len());
    let mut worst = (0.0f64, 0usize);
    for (i, &(d, a, s, t)) in jobs.iter().enumerate() {
        let start = g.eval(dirs[d].as_slice());
        let p = psi.eval(a, start.as_slice()).map_err(|e| CliError::numerical_with(&e, json!({ "sample": i })))?;
        let tau = psi.tau(p.as_slice()).map_err(CliError::numerical)?;
        let residual = group_law_residual(&flow, p.as_slice(), s, t).map_err(|e| CliError::numerical_with(&e, json!({ "sample": i, "s": s, "t": t })))?;
        if residual > worst.0 {
            worst = (residual, i);
        }
        let mut row = vec![i.to_string()];
        row.extend(cells(p.as_slice()));
        row.extend([cell(s), cell(t), cell(tau.to_f64()), cell(residual)]);
        rows.push(row);
    }
    ctx.log(format!("max group-law residual {:e}", worst.0));
    let mut header = vec!["sample".to_string()];
    header.extend(coord_header("x", dim));
    header.extend(["s", "t", "tau", "residual"].map(String::from));
    ctx.sink.csv("group_law.csv", &header, &rows)?;
    let mut out = ctx.meta("juxt");
    out["point"] = point_json(&x);
    out["samples"] = json!(sec.samples);
    out["span"] = ext(sec.span);
    out["max_residual"] = ext(worst.0);
    out["worst_sample"] = json!(worst.1);
    let probe = psi.tau(x.location.as_slice()).map_err(CliError::numerical)?;
    out["tau_at_center"] = ext(probe.to_f64());
    ctx.sink.json("juxt.json", &out)
}
