use std::path::PathBuf;

use serde::Deserialize;

use crate::error::CliError;

/// Top-level run configuration. Unknown keys are rejected at every level.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSpec,
    /// Newton seeds for the stationary-point search; built-in systems supply defaults.
    #[serde(default)]
    pub seeds: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub critical: Option<CriticalSection>,
    #[serde(default)]
    pub manifold: Option<ManifoldSection>,
    #[serde(default)]
    pub transversality: Option<TransversalitySection>,
    #[serde(default)]
    pub cellmap: Option<CellmapSection>,
    #[serde(default)]
    pub counterexample: Option<CounterexampleSection>,
    #[serde(default)]
    pub juxt: Option<JuxtSection>,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub tolerances: Tolerances,
}

/// `"builtin:<name>"` or an explicit field.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum SystemSpec {
    Builtin(String),
    Custom(CustomSystem),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSystem {
    pub dimension: usize,
    /// One expression per component, in the variables `x, y, z` or `x1 … xn`.
    #[serde(default)]
    pub field: Option<Vec<String>>,
    /// Potential `f`; the flow is `−∇f`. Exclusive with `field`.
    #[serde(default)]
    pub potential: Option<String>,
    #[serde(default)]
    pub mode: SystemMode,
    /// Level function of the invariant surface in `surface` mode.
    #[serde(default)]
    pub level: Option<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemMode {
    #[default]
    Ambient,
    Surface,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticalSection {
    /// Orbits sampled per unstable sphere for the connection graph.
    #[serde(default = "defaults::connection_samples")]
    pub connection_samples: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManifoldKind {
    #[default]
    Unstable,
    Stable,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldSection {
    pub point: Vec<f64>,
    #[serde(default = "defaults::radius")]
    pub r: f64,
    /// Nodes per axis.
    #[serde(default)]
    pub grid: Option<usize>,
    #[serde(default)]
    pub step_t: Option<f64>,
    #[serde(default)]
    pub kind: ManifoldKind,
    /// Tangent spaces reported at this many nodes along the first axis.
    #[serde(default = "defaults::tangent_samples")]
    pub tangent_samples: usize,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransversalitySection {
    #[serde(default = "defaults::scan_samples")]
    pub samples: usize,
    #[serde(default = "defaults::radius")]
    pub r: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellmapSection {
    pub point: Vec<f64>,
    #[serde(default = "defaults::n_r")]
    pub n_r: usize,
    #[serde(default = "defaults::n_theta")]
    pub n_theta: usize,
    /// Radius of the linear sphere `g` around the stationary point.
    #[serde(default = "defaults::sphere_radius")]
    pub sphere_radius: f64,
    /// Adaptive bisection of the boundary curve (k = 2 only).
    #[serde(default)]
    pub refine: Option<RefineSection>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineSection {
    pub gap_tol: f64,
    #[serde(default = "defaults::min_step")]
    pub min_step: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterexampleSection {
    #[serde(rename = "K", default = "defaults::k_max")]
    pub k_max: usize,
    #[serde(default = "defaults::eps")]
    pub eps: f64,
    #[serde(default = "defaults::delta")]
    pub delta: f64,
    /// Polar angle of the circle around `(0,0,3)` used for the naive boundary map.
    #[serde(default = "defaults::cap")]
    pub cap: f64,
    /// Angular samples of the naive boundary map; 0 skips it.
    #[serde(default = "defaults::n_theta")]
    pub n_theta: usize,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JuxtSection {
    pub point: Vec<f64>,
    #[serde(default = "defaults::juxt_samples")]
    pub samples: usize,
    /// Times `s, t` are drawn from `[−span, span]`.
    #[serde(default = "defaults::span")]
    pub span: f64,
    #[serde(default = "defaults::sphere_radius")]
    pub sphere_radius: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Mesh,
    Svg,
}

impl Format {
    pub const ALL: [Format; 4] = [Format::Csv, Format::Json, Format::Mesh, Format::Svg];

    pub fn parse(name: &str) -> Result<Format, CliError> {
        match name.trim() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "mesh" => Ok(Format::Mesh),
            "svg" => Ok(Format::Svg),
            other => Err(CliError::validation(format!("unknown format {other:?}; expected csv, json, mesh or svg"))),
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub directory: Option<PathBuf>,
    #[serde(default)]
    pub formats: Option<Vec<Format>>,
}

/// Integrator overrides applied on top of the system's own settings.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default)]
    pub rtol: Option<f64>,
    #[serde(default)]
    pub atol: Option<f64>,
    #[serde(default)]
    pub max_step: Option<f64>,
    #[serde(default)]
    pub t_max_guard: Option<f64>,
}

mod defaults {
    pub fn connection_samples() -> usize {
        8
    }
    pub fn radius() -> f64 {
        0.5
    }
    pub fn tangent_samples() -> usize {
        5
    }
    pub fn scan_samples() -> usize {
        8
    }
    pub fn n_r() -> usize {
        12
    }
    pub fn n_theta() -> usize {
        720
    }
    pub fn sphere_radius() -> f64 {
        0.05
    }
    pub fn min_step() -> f64 {
        1e-12
    }
    pub fn k_max() -> usize {
        8
    }
    pub fn eps() -> f64 {
        0.05
    }
    pub fn delta() -> f64 {
        0.02
    }
    pub fn cap() -> f64 {
        0.05
    }
    pub fn juxt_samples() -> usize {
        100
    }
    pub fn span() -> f64 {
        1.5
    }
}

/// Parses the raw JSON, rejecting unknown keys and empty analysis sections.
pub fn parse(text: &str) -> Result<RunConfig, CliError> {
    let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| CliError::validation(format!("config is not valid JSON: {e}")))?;
    if let Some(obj) = raw.as_object() {
        for key in ["critical", "manifold", "transversality", "cellmap", "counterexample", "juxt"] {
            if obj.get(key).and_then(|v| v.as_object()).is_some_and(|m| m.is_empty()) {
                return Err(CliError::validation(format!("analysis section {key:?} is empty")));
            }
        }
    }
    let cfg: RunConfig = serde_json::from_value(raw).map_err(|e| CliError::validation(format!("invalid config: {e}")))?;
    cfg.check()?;
    Ok(cfg)
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(CliError::validation(format!("{name} must be a positive finite number, got {v}")))
    }
}

fn at_least(name: &str, v: usize, min: usize) -> Result<(), CliError> {
    if v >= min {
        Ok(())
    } else {
        Err(CliError::validation(format!("{name} must be at least {min}, got {v}")))
    }
}

impl RunConfig {
    fn check(&self) -> Result<(), CliError> {
        if let SystemSpec::Custom(c) = &self.system {
            at_least("system.dimension", c.dimension, 1)?;
            match (&c.field, &c.potential) {
                (Some(f), None) if f.len() != c.dimension => {
                    return Err(CliError::validation(format!("system.field has {} components for dimension {}", f.len(), c.dimension)))
                }
                (Some(_), Some(_)) => return Err(CliError::validation("system.field and system.potential are exclusive")),
                (None, None) => return Err(CliError::validation("system needs a field or a potential")),
                _ => {}
            }
            if (c.mode == SystemMode::Surface) != c.level.is_some() {
                return Err(CliError::validation("system.level is required in surface mode and only there"));
            }
        }
        if let Some(m) = &self.manifold {
            positive("manifold.r", m.r)?;
            if let Some(g) = m.grid {
                at_least("manifold.grid", g, 3)?;
            }
            if let Some(t) = m.step_t {
                positive("manifold.step_t", t)?;
            }
        }
        if let Some(t) = &self.transversality {
            positive("transversality.r", t.r)?;
            at_least("transversality.samples", t.samples, 1)?;
        }
        if let Some(c) = &self.cellmap {
            at_least("cellmap.n_r", c.n_r, 2)?;
            at_least("cellmap.n_theta", c.n_theta, 3)?;
            positive("cellmap.sphere_radius", c.sphere_radius)?;
            if let Some(r) = &c.refine {
                positive("cellmap.refine.gap_tol", r.gap_tol)?;
                positive("cellmap.refine.min_step", r.min_step)?;
            }
        }
        if let Some(c) = &self.counterexample {
            at_least("counterexample.K", c.k_max, 1)?;
            positive("counterexample.delta", c.delta)?;
            positive("counterexample.cap", c.cap)?;
            if !(c.eps.is_finite() && c.eps >= 0.0) {
                return Err(CliError::validation("counterexample.eps must be non-negative"));
            }
        }
        if let Some(j) = &self.juxt {
            at_least("juxt.samples", j.samples, 1)?;
            positive("juxt.span", j.span)?;
            positive("juxt.sphere_radius", j.sphere_radius)?;
        }
        let t = &self.tolerances;
        for (name, v) in [("rtol", t.rtol), ("atol", t.atol), ("max_step", t.max_step), ("t_max_guard", t.t_max_guard)] {
            if let Some(v) = v {
                positive(&format!("tolerances.{name}"), v)?;
            }
        }
        Ok(())
    }
}
