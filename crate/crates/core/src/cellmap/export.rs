use std::io::{self, Write};

use super::CellMap;
use crate::flow::FlowSystem;

fn num(v: f64) -> String {
    format!("{v:.12e}")
}

/// One row per sample: `ring, dir, r, u…, x…, regime, status`. Failed samples leave the
/// image columns empty.
pub fn write_csv<W: Write>(cm: &CellMap, mut out: W) -> io::Result<()> {
    let dim = cm.center.len();
    let mut header = vec!["ring".to_string(), "dir".to_string(), "r".to_string()];
    header.extend((0..cm.k).map(|i| format!("u{i}")));
    header.extend((0..dim).map(|i| format!("x{i}")));
    header.extend(["regime".to_string(), "status".to_string()]);
    writeln!(out, "{}", header.join(","))?;
    for s in &cm.samples {
        let mut row = vec![s.ring.to_string(), s.dir.to_string(), num(cm.radii[s.ring])];
        row.extend(cm.domain_point(s).into_iter().map(num));
        match &s.point {
            Some(p) => row.extend(p.iter().map(|&v| num(v))),
            None => row.extend((0..dim).map(|_| String::new())),
        }
        row.push(s.regime.as_str().to_string());
        row.push(if s.failure.is_some() { "failed" } else { "ok" }.to_string());
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// ASCII mesh: a `v` line per sample (in sample order) and, for `k = 2`, `f` lines
/// (1-based) over the polar triangulation. Failed samples are written at the center and
/// excluded from faces.
pub fn write_mesh<W: Write>(cm: &CellMap, mut out: W) -> io::Result<()> {
    for s in &cm.samples {
        let p = s.point.as_ref().unwrap_or(&cm.center);
        let coords: Vec<String> = p.iter().map(|&v| num(v)).collect();
        writeln!(out, "v {}", coords.join(" "))?;
    }
    if cm.k != 2 {
        return Ok(());
    }
    let n = cm.directions.len();
    let ok = |i: usize| cm.samples[i].point.is_some();
    let face = |out: &mut W, a: usize, b: usize, c: usize| -> io::Result<()> {
        if ok(a) && ok(b) && ok(c) {
            writeln!(out, "f {} {} {}", a + 1, b + 1, c + 1)?;
        }
        Ok(())
    };
    for j in 0..n {
        face(&mut out, 0, cm.index(1, j), cm.index(1, (j + 1) % n))?;
    }
    for ring in 1..cm.n_rings() {
        for j in 0..n {
            let j1 = (j + 1) % n;
            let (a, b) = (cm.index(ring, j), cm.index(ring, j1));
            let (c, d) = (cm.index(ring + 1, j), cm.index(ring + 1, j1));
            face(&mut out, a, c, d)?;
            face(&mut out, a, d, b)?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct SvgOptions {
    /// Planar field drawn as a direction grid beneath the samples.
    pub field: Option<FlowSystem>,
    pub size: f64,
    pub arrows: usize,
}

impl Default for SvgOptions {
    fn default() -> Self {
        SvgOptions { field: None, size: 640.0, arrows: 21 }
    }
}

/// Phase-portrait overlay of a 2-cell: field directions, ring polylines, boundary samples
/// and the center, in the first two image coordinates.
pub fn write_svg<W: Write>(cm: &CellMap, opts: &SvgOptions, mut out: W) -> io::Result<()> {
    let pts: Vec<&Vec<f64>> = cm.samples.iter().filter_map(|s| s.point.as_ref()).filter(|p| p.len() >= 2).collect();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &pts {
        for i in 0..2 {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
    }
    if !lo[0].is_finite() {
        lo = [-1.0, -1.0];
        hi = [1.0, 1.0];
    }
    let pad = 0.05 * (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-3);
    let (x0, y0) = (lo[0] - pad, lo[1] - pad);
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]) + 2.0 * pad;
    let s = opts.size / span;
    let px = |x: f64, y: f64| (s * (x - x0), opts.size - s * (y - y0));
    writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{0:.0}" height="{0:.0}" viewBox="0 0 {0:.0} {0:.0}">"#, opts.size)?;
    writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#)?;
    if let Some(sys) = opts.field.as_ref().filter(|f| f.dim() == 2) {
        let m = opts.arrows.max(2);
        let len = 0.4 * opts.size / m as f64;
        for i in 0..m {
            for j in 0..m {
                let x = x0 + span * (i as f64 + 0.5) / m as f64;
                let y = y0 + span * (j as f64 + 0.5) / m as f64;
                let Ok(v) = sys.velocity(&[x, y]) else { continue };
                let nv = v.norm();
                if nv < 1e-12 {
                    continue;
                }
                let (a, b) = px(x, y);
                let (dx, dy) = (len * v[0] / nv, -len * v[1] / nv);
                writeln!(out, r##"<line x1="{a:.2}" y1="{b:.2}" x2="{:.2}" y2="{:.2}" stroke="#bbbbbb" stroke-width="1"/>"##, a + dx, b + dy)?;
                writeln!(out, r##"<circle cx="{:.2}" cy="{:.2}" r="1.2" fill="#999999"/>"##, a + dx, b + dy)?;
            }
        }
    }
    let n = cm.directions.len();
    for ring in 1..=cm.n_rings() {
        let boundary = ring == cm.n_rings();
        let coords: Vec<String> = (0..n)
            .filter_map(|d| cm.sample(ring, d).point.as_ref())
            .map(|p| {
                let (a, b) = px(p[0], p[1]);
                format!("{a:.2},{b:.2}")
            })
            .collect();
        let (color, width) = if boundary { ("#c0392b", 2.0) } else { ("#2e86c1", 0.8) };
        if boundary {
            for c in &coords {
                let (a, b) = c.split_once(',').unwrap_or(("0", "0"));
                writeln!(out, r#"<circle cx="{a}" cy="{b}" r="1.5" fill="{color}"/>"#)?;
            }
        } else if cm.k == 2 {
            writeln!(out, r#"<polygon points="{}" fill="none" stroke="{color}" stroke-width="{width}"/>"#, coords.join(" "))?;
        }
    }
    if cm.center.len() >= 2 {
        let (a, b) = px(cm.center[0], cm.center[1]);
        writeln!(out, r##"<circle cx="{a:.2}" cy="{b:.2}" r="4" fill="#17202a"/>"##)?;
    }
    writeln!(out, "</svg>")
}
