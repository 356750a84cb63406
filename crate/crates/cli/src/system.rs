use std::sync::Arc;

use morse_cells::examples::{self, ReferenceSystem};
use morse_cells::flow::GradientField;
use morse_cells::hyperbolic::{classify, find_critical_points};
use morse_cells::{Expression, FlowSystem, HyperbolicPoint};

use crate::config::{CustomSystem, RunConfig, SystemMode, SystemSpec, Tolerances};
use crate::error::CliError;

/// The configured flow with its seeds and, for built-ins, the reference data.
pub struct Loaded {
    pub name: String,
    pub system: FlowSystem,
    pub seeds: Vec<Vec<f64>>,
    pub reference: Option<ReferenceSystem>,
}

fn apply(sys: FlowSystem, tol: &Tolerances) -> FlowSystem {
    let mut s = sys.settings().clone();
    if let Some(v) = tol.rtol {
        s.rtol = v;
    }
    if let Some(v) = tol.atol {
        s.atol = v;
    }
    if let Some(v) = tol.max_step {
        s.max_step = v;
    }
    if let Some(v) = tol.t_max_guard {
        s.t_max_guard = v;
    }
    sys.with_settings(s)
}

fn parse_expr(what: &str, src: &str, dim: usize) -> Result<Expression, CliError> {
    Expression::parse(src, dim).map_err(|e| CliError::validation(format!("{what}: {e} in {src:?}")))
}

fn custom(c: &CustomSystem) -> Result<FlowSystem, CliError> {
    let n = c.dimension;
    let mut sys = match (&c.field, &c.potential) {
        (Some(field), _) => {
            let comps = field.iter().map(|s| parse_expr("system.field", s, n)).collect::<Result<Vec<_>, _>>()?;
            FlowSystem::new(Arc::new(morse_cells::flow::ExprField::new(comps)))
        }
        (None, Some(p)) => FlowSystem::new(Arc::new(GradientField::new(parse_expr("system.potential", p, n)?))),
        (None, None) => return Err(CliError::validation("system needs a field or a potential")),
    };
    if c.mode == SystemMode::Surface {
        let level = c.level.as_deref().ok_or_else(|| CliError::validation("surface mode needs system.level"))?;
        sys = sys.with_surface(parse_expr("system.level", level, n)?);
    }
    Ok(sys)
}

pub fn load(cfg: &RunConfig) -> Result<Loaded, CliError> {
    let mut loaded = match &cfg.system {
        SystemSpec::Builtin(spec) => {
            let name = spec
                .strip_prefix("builtin:")
                .ok_or_else(|| CliError::validation(format!("system {spec:?} must be \"builtin:<name>\" or an object")))?;
            let mut reference = examples::builtin(name).ok_or_else(|| {
                CliError::validation(format!("unknown built-in system {name:?}; known: {}", examples::BUILTIN_NAMES.join(", ")))
            })?;
            reference.system = apply(reference.system, &cfg.tolerances);
            Loaded { name: name.to_string(), system: reference.system.clone(), seeds: reference.seeds.clone(), reference: Some(reference) }
        }
        SystemSpec::Custom(c) => Loaded { name: "custom".into(), system: apply(custom(c)?, &cfg.tolerances), seeds: Vec::new(), reference: None },
    };
    if let Some(seeds) = &cfg.seeds {
        loaded.seeds = seeds.clone();
    }
    let dim = loaded.system.dim();
    if let Some(bad) = loaded.seeds.iter().find(|s| s.len() != dim) {
        return Err(CliError::validation(format!("seed {bad:?} does not have dimension {dim}")));
    }
    Ok(loaded)
}

pub fn check_point(what: &str, p: &[f64], dim: usize) -> Result<(), CliError> {
    if p.len() != dim || p.iter().any(|v| !v.is_finite()) {
        return Err(CliError::validation(format!("{what} {p:?} must be {dim} finite coordinates")));
    }
    Ok(())
}

impl Loaded {
    /// Stationary points found from the seeds, classified, in lexicographic order.
    pub fn classified(&self) -> Result<Vec<HyperbolicPoint>, CliError> {
        if self.seeds.is_empty() {
            return Err(CliError::validation("no seeds: provide \"seeds\" for a custom system"));
        }
        let search = find_critical_points(&self.system, &self.seeds);
        if search.points.is_empty() {
            return Err(CliError::numerical_with("no stationary point found", serde_json::json!({ "failed_seeds": search.failed })));
        }
        search
            .points
            .iter()
            .map(|p| classify(&self.system, p.as_slice()).map_err(CliError::numerical))
            .collect()
    }

    /// The stationary point nearest to `p`, refined by Newton and classified.
    pub fn stationary_at(&self, what: &str, p: &[f64]) -> Result<HyperbolicPoint, CliError> {
        check_point(what, p, self.system.dim())?;
        let search = find_critical_points(&self.system, &[p.to_vec()]);
        let x = search
            .points
            .first()
            .ok_or_else(|| CliError::numerical_with(format!("{what}: Newton did not converge to a stationary point"), serde_json::json!({ "point": p })))?;
        classify(&self.system, x.as_slice()).map_err(CliError::numerical)
    }

    /// Built-in systems with registered analytic foliation charts.
    pub fn analytic_reference(&self, command: &str) -> Result<&ReferenceSystem, CliError> {
        match &self.reference {
            Some(r) if !examples::charts::analytic_charts(&r.name).is_empty() => Ok(r),
            _ => Err(CliError::validation(format!(
                "{command} needs a built-in system with analytic foliation charts (square4 or sphere_height), got {}",
                self.name
            ))),
        }
    }
}
