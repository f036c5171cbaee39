//! TOML run configuration. Every key is consumed explicitly; anything left
//! over is reported as an unknown key with its full path.

use std::path::{Path, PathBuf};

use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::estimates::EstimateKind;
use crate::flow::{check_closed, DtPolicy, FlowConfig, FlowState, Scheme, Variant};
use crate::grid::{Grid, StencilOrder};
use crate::presets::{build, Preset, PresetSpec};
use crate::tensor::MetricField;
use crate::verify::Quantity;

pub const DEFAULT_CFL: f64 = 0.1;
pub const DEFAULT_SNAPSHOT_EVERY: usize = 1;

/// Background metric for the gauged flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Background {
    Flat,
    Initial,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSettings {
    pub variant: Variant,
    pub scheme: Scheme,
    pub dt_policy: DtPolicy,
    pub t_end: f64,
    pub stencil_order: StencilOrder,
    pub snapshot_every: usize,
    pub background: Option<Background>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputPaths {
    pub dir: PathBuf,
    pub snapshots: PathBuf,
    pub metrics: PathBuf,
    pub csv: PathBuf,
    pub report: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BbsSpec {
    pub m: usize,
    pub alpha: f64,
    pub k: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MonitorSpec {
    pub max_principle: bool,
    pub bbs: Vec<BbsSpec>,
    pub equivalence_t0: Option<f64>,
    pub inequalities: bool,
}

impl MonitorSpec {
    pub fn kinds(&self) -> Vec<EstimateKind> {
        let mut out = Vec::new();
        if self.max_principle {
            out.push(EstimateKind::MaxPrinciple);
        }
        if !self.bbs.is_empty() {
            out.push(EstimateKind::Bbs);
        }
        if self.equivalence_t0.is_some() {
            out.push(EstimateKind::Equivalence);
        }
        if self.inequalities {
            out.extend([EstimateKind::RmInequality, EstimateKind::HInequality]);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: PresetSpec,
    pub flow: FlowSettings,
    pub output: OutputPaths,
    pub verify: Vec<Quantity>,
    pub monitor: MonitorSpec,
}

/// Command-line overrides applied before validation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub resolution: Option<usize>,
    pub snapshot_every: Option<usize>,
}

impl RunConfig {
    /// Initial state of the configured preset.
    pub fn initial_state(&self) -> Result<FlowState> {
        build(&self.preset, self.flow.stencil_order)
    }

    /// Integrator settings, attaching the background metric when gauged.
    pub fn flow_config(&self, initial: &FlowState) -> Result<FlowConfig> {
        let f = &self.flow;
        let mut cfg = FlowConfig::new(f.variant, f.dt_policy, f.t_end);
        cfg.scheme = f.scheme;
        cfg.stencil_order = f.stencil_order;
        cfg.snapshot_every = f.snapshot_every;
        match f.background {
            Some(Background::Flat) => cfg.with_background(&MetricField::flat(self.preset.grid)),
            Some(Background::Initial) => cfg.with_background(&initial.g),
            None => Ok(cfg),
        }
    }

    /// Output paths made absolute against `base` (the config file's directory).
    pub fn resolve_paths(&mut self, base: &Path) {
        let out = &mut self.output;
        for p in [&mut out.dir, &mut out.snapshots, &mut out.metrics, &mut out.csv, &mut out.report] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

fn config_err<T>(key: &str, message: impl Into<String>) -> Result<T> {
    Err(Error::Config { key: key.to_string(), message: message.into() })
}

/// A table whose keys are removed as they are read.
struct Section {
    path: String,
    table: Table,
}

impl Section {
    fn new(path: &str, table: Table) -> Self {
        Section { path: path.to_string(), table }
    }

    fn key(&self, name: &str) -> String {
        if self.path.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.path)
        }
    }

    fn take(&mut self, name: &str) -> Option<Value> {
        self.table.remove(name)
    }

    fn section(&mut self, name: &str, required: bool) -> Result<Section> {
        let key = self.key(name);
        match self.take(name) {
            Some(Value::Table(t)) => Ok(Section::new(&key, t)),
            Some(_) => config_err(&key, "expected a table"),
            None if required => config_err(&key, "missing required section"),
            None => Ok(Section::new(&key, Table::new())),
        }
    }

    fn float(&mut self, name: &str) -> Result<Option<f64>> {
        let key = self.key(name);
        match self.take(name) {
            None => Ok(None),
            Some(Value::Float(f)) => Ok(Some(f)),
            Some(Value::Integer(i)) => Ok(Some(i as f64)),
            Some(_) => config_err(&key, "expected a number"),
        }
    }

    fn uint(&mut self, name: &str) -> Result<Option<usize>> {
        let key = self.key(name);
        match self.take(name) {
            None => Ok(None),
            Some(Value::Integer(i)) if i >= 0 => Ok(Some(i as usize)),
            Some(_) => config_err(&key, "expected a nonnegative integer"),
        }
    }

    fn string(&mut self, name: &str) -> Result<Option<String>> {
        let key = self.key(name);
        match self.take(name) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(_) => config_err(&key, "expected a string"),
        }
    }

    fn boolean(&mut self, name: &str) -> Result<Option<bool>> {
        let key = self.key(name);
        match self.take(name) {
            None => Ok(None),
            Some(Value::Boolean(b)) => Ok(Some(b)),
            Some(_) => config_err(&key, "expected true or false"),
        }
    }

    fn strings(&mut self, name: &str) -> Result<Vec<String>> {
        let key = self.key(name);
        match self.take(name) {
            None => Ok(Vec::new()),
            Some(Value::Array(items)) => items
                .into_iter()
                .map(|v| match v {
                    Value::String(s) => Ok(s),
                    _ => config_err(&key, "expected an array of strings"),
                })
                .collect(),
            Some(_) => config_err(&key, "expected an array of strings"),
        }
    }

    /// Reject keys outside `allowed` before any value is interpreted.
    fn allow(&self, allowed: &[&str]) -> Result<()> {
        match self.table.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => config_err(&self.key(k), "unknown key"),
            None => Ok(()),
        }
    }

    fn finish(self) -> Result<()> {
        match self.table.keys().next() {
            Some(k) => {
                let key = if self.path.is_empty() { k.clone() } else { format!("{}.{k}", self.path) };
                config_err(&key, "unknown key")
            }
            None => Ok(()),
        }
    }
}

fn required_float(s: &mut Section, name: &str) -> Result<f64> {
    match s.float(name)? {
        Some(v) => Ok(v),
        None => config_err(&s.key(name), "missing required key"),
    }
}

fn positive_finite(key: &str, v: f64) -> Result<f64> {
    if !(v > 0.0 && v.is_finite()) {
        return config_err(key, format!("must be positive, got {v}"));
    }
    Ok(v)
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_with(text, Overrides::default())
}

pub fn parse_config_with(text: &str, overrides: Overrides) -> Result<RunConfig> {
    let table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config { key: "<document>".into(), message: e.message().to_string() })?;
    let mut root = Section::new("", table);
    root.allow(&["grid", "preset", "flow", "verify", "monitor", "output"])?;

    let mut grid_s = root.section("grid", true)?;
    grid_s.allow(&["dim", "n"])?;
    let dim = match grid_s.uint("dim")? {
        Some(d) => d,
        None => return config_err("grid.dim", "missing required key"),
    };
    let n = match (overrides.resolution, grid_s.uint("n")?) {
        (Some(n), _) | (None, Some(n)) => n,
        (None, None) => return config_err("grid.n", "missing required key"),
    };
    grid_s.finish()?;
    let grid = Grid::new(dim, n).or_else(|e| {
        let key = if e.to_string().contains("resolution") { "grid.n" } else { "grid.dim" };
        config_err(key, strip_prefix(&e))
    })?;

    let mut preset_s = root.section("preset", true)?;
    let name = match preset_s.string("name")? {
        Some(n) => n,
        None => return config_err("preset.name", "missing required key"),
    };
    let preset = parse_preset(&mut preset_s, &name)?;
    preset_s.finish()?;
    let preset = PresetSpec::new(preset, grid).or_else(|e| config_err("preset", strip_prefix(&e)))?;

    let mut flow_s = root.section("flow", true)?;
    flow_s.allow(&[
        "variant",
        "scheme",
        "dt_policy",
        "cfl",
        "dt",
        "t_end",
        "stencil_order",
        "snapshot_every",
        "background",
    ])?;
    let flow = parse_flow(&mut flow_s, overrides)?;
    flow_s.finish()?;

    let mut verify_s = root.section("verify", false)?;
    verify_s.allow(&["checks"])?;
    let mut verify = Vec::new();
    for name in verify_s.strings("checks")? {
        match Quantity::parse(&name) {
            Some(q) => verify.push(q),
            None => return config_err("verify.checks", format!("unknown check `{name}`")),
        }
    }
    verify_s.finish()?;

    let mut monitor_s = root.section("monitor", false)?;
    monitor_s.allow(&["max_principle", "inequalities", "equivalence_t0", "bbs_m", "bbs_alpha", "bbs_k"])?;
    let monitor = parse_monitor(&mut monitor_s)?;
    monitor_s.finish()?;

    let mut out_s = root.section("output", false)?;
    out_s.allow(&["dir", "snapshots", "metrics", "csv", "report"])?;
    let dir = PathBuf::from(out_s.string("dir")?.unwrap_or_else(|| "grflab-out".into()));
    let mut file = |name: &str, default: &str| -> Result<PathBuf> {
        Ok(dir.join(out_s.string(name)?.unwrap_or_else(|| default.into())))
    };
    let output = OutputPaths {
        snapshots: file("snapshots", "snapshots")?,
        metrics: file("metrics", "metrics.ndjson")?,
        csv: file("csv", "metrics.csv")?,
        report: file("report", "report.txt")?,
        dir,
    };
    out_s.finish()?;
    root.finish()?;

    let cfg = RunConfig { preset, flow, output, verify, monitor };
    validate_combination(&cfg)?;
    Ok(cfg)
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Argument(m) | Error::Precondition(m) => m.clone(),
        other => other.to_string(),
    }
}

fn parse_preset(s: &mut Section, name: &str) -> Result<Preset> {
    let params: &[&str] = match name {
        "t3_constant_form" => &["a0", "k"],
        "conformal_t2" => &["epsilon", "wavevector"],
        "perturbed_metric" => &["epsilon", "seed", "form_amplitude"],
        "extended_maxwell" => &["epsilon"],
        _ => &[],
    };
    if ["flat", "t3_constant_form", "conformal_t2", "perturbed_metric", "extended_maxwell"].contains(&name) {
        s.allow(params)?;
    }
    Ok(match name {
        "flat" => Preset::Flat,
        "t3_constant_form" => Preset::T3ConstantForm {
            a0: s.float("a0")?.unwrap_or(1.0),
            k: s.float("k")?.unwrap_or(1.0),
        },
        "conformal_t2" => {
            let key = s.key("wavevector");
            let wavevector = match s.take("wavevector") {
                None => [1, 0],
                Some(Value::Array(v)) if v.len() == 2 => {
                    let mut w = [0i64; 2];
                    for (slot, item) in w.iter_mut().zip(v) {
                        *slot = match item {
                            Value::Integer(i) => i,
                            _ => return config_err(&key, "expected two integers"),
                        };
                    }
                    w
                }
                Some(_) => return config_err(&key, "expected two integers"),
            };
            Preset::ConformalT2 { epsilon: s.float("epsilon")?.unwrap_or(0.1), wavevector }
        }
        "perturbed_metric" => {
            let key = s.key("seed");
            let seed = match s.take("seed") {
                None => 0,
                Some(Value::Integer(i)) if i >= 0 => i as u64,
                Some(_) => return config_err(&key, "expected a nonnegative integer"),
            };
            Preset::PerturbedMetric {
                epsilon: s.float("epsilon")?.unwrap_or(0.1),
                seed,
                form_amplitude: s.float("form_amplitude")?.unwrap_or(0.0),
            }
        }
        "extended_maxwell" => Preset::ExtendedMaxwell { epsilon: s.float("epsilon")?.unwrap_or(0.1) },
        other => return config_err("preset.name", format!("unknown preset `{other}`")),
    })
}

fn parse_flow(s: &mut Section, overrides: Overrides) -> Result<FlowSettings> {
    let variant_name = match s.string("variant")? {
        Some(v) => v,
        None => return config_err("flow.variant", "missing required key"),
    };
    let variant = Variant::parse(&variant_name)
        .map_or_else(|| config_err("flow.variant", format!("unknown variant `{variant_name}`")), Ok)?;
    let scheme = match s.string("scheme")? {
        None => Scheme::Rk4,
        Some(name) => {
            Scheme::parse(&name).map_or_else(|| config_err("flow.scheme", format!("unknown scheme `{name}`")), Ok)?
        }
    };
    let t_end = required_float(s, "t_end")?;
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return config_err("flow.t_end", format!("must be nonnegative, got {t_end}"));
    }
    let policy = s.string("dt_policy")?.unwrap_or_else(|| "cfl".into());
    let cfl = s.float("cfl")?;
    let dt = s.float("dt")?;
    let dt_policy = match policy.as_str() {
        "cfl" => {
            if dt.is_some() {
                return config_err("flow.dt", "only used with dt_policy = \"fixed\"");
            }
            let c = cfl.unwrap_or(DEFAULT_CFL);
            if !(c > 0.0 && c <= 0.5) {
                return config_err("flow.cfl", format!("must lie in (0, 0.5], got {c}"));
            }
            DtPolicy::Cfl(c)
        }
        "fixed" => {
            if cfl.is_some() {
                return config_err("flow.cfl", "only used with dt_policy = \"cfl\"");
            }
            match dt {
                Some(v) => DtPolicy::Fixed(positive_finite("flow.dt", v)?),
                None => return config_err("flow.dt", "missing required key for dt_policy = \"fixed\""),
            }
        }
        other => return config_err("flow.dt_policy", format!("expected \"cfl\" or \"fixed\", got `{other}`")),
    };
    let stencil_order = match s.uint("stencil_order")? {
        None | Some(4) => StencilOrder::Fourth,
        Some(2) => StencilOrder::Second,
        Some(o) => return config_err("flow.stencil_order", format!("must be 2 or 4, got {o}")),
    };
    let snapshot_every = match (overrides.snapshot_every, s.uint("snapshot_every")?) {
        (Some(k), _) | (None, Some(k)) => k,
        (None, None) => DEFAULT_SNAPSHOT_EVERY,
    };
    let background = match (variant, s.string("background")?) {
        (Variant::Deturck, None) => Some(Background::Flat),
        (Variant::Deturck, Some(b)) => Some(match b.as_str() {
            "flat" => Background::Flat,
            "initial" => Background::Initial,
            other => return config_err("flow.background", format!("expected \"flat\" or \"initial\", got `{other}`")),
        }),
        (_, Some(_)) => return config_err("flow.background", "only used with variant = \"deturck\""),
        (_, None) => None,
    };
    Ok(FlowSettings { variant, scheme, dt_policy, t_end, stencil_order, snapshot_every, background })
}

fn parse_monitor(s: &mut Section) -> Result<MonitorSpec> {
    let mut spec = MonitorSpec {
        max_principle: s.boolean("max_principle")?.unwrap_or(false),
        inequalities: s.boolean("inequalities")?.unwrap_or(false),
        equivalence_t0: s.float("equivalence_t0")?,
        bbs: Vec::new(),
    };
    let key = s.key("bbs_m");
    let orders: Vec<usize> = match s.take("bbs_m") {
        None => Vec::new(),
        Some(Value::Array(items)) => items
            .into_iter()
            .map(|v| match v {
                Value::Integer(m) if (1..=3).contains(&m) => Ok(m as usize),
                _ => config_err(&key, "expected integers in 1..=3"),
            })
            .collect::<Result<_>>()?,
        Some(_) => return config_err(&key, "expected an array of integers"),
    };
    let alpha = s.float("bbs_alpha")?;
    let k = s.float("bbs_k")?;
    if !orders.is_empty() {
        let alpha = positive_finite("monitor.bbs_alpha", alpha.unwrap_or(1.0))?;
        let k = positive_finite("monitor.bbs_k", k.unwrap_or(1.0))?;
        spec.bbs = orders.into_iter().map(|m| BbsSpec { m, alpha, k }).collect();
    } else if alpha.is_some() || k.is_some() {
        return config_err("monitor.bbs_m", "bbs_alpha and bbs_k need bbs_m");
    }
    Ok(spec)
}

/// Cross-section rules that need the built initial state.
fn validate_combination(cfg: &RunConfig) -> Result<()> {
    let variant = cfg.flow.variant;
    let initial = cfg.initial_state().or_else(|e| config_err("preset", strip_prefix(&e)))?;
    let closed = check_closed(&initial.h, cfg.flow.stencil_order).is_ok();
    if variant == Variant::Rgrf && !closed {
        return config_err("flow.variant", "rgrf needs a closed initial H for the chosen preset");
    }
    if variant == Variant::Extended && !initial.is_extended() {
        return config_err("flow.variant", "extended needs a preset with potentials A and B");
    }
    for &q in &cfg.verify {
        let ok = match q {
            Quantity::RiemannEvolution | Quantity::RicciEvolution | Quantity::ScalarEvolution => {
                matches!(variant, Variant::Grf | Variant::Rgrf)
            }
            Quantity::Closedness => matches!(variant, Variant::Rgrf | Variant::Extended) || closed,
            Quantity::RgrfEqualsGrf => closed,
            Quantity::DeturckConsistency => variant == Variant::Deturck,
            Quantity::ExtendedF | Quantity::ExtendedH => variant == Variant::Extended,
            _ => true,
        };
        if !ok {
            return config_err("verify.checks", format!("`{}` does not apply to variant {}", q.name(), variant.name()));
        }
    }
    let time_differenced = cfg.verify.iter().any(|q| {
        matches!(
            q,
            Quantity::RiemannEvolution
                | Quantity::RicciEvolution
                | Quantity::ScalarEvolution
                | Quantity::ExtendedF
                | Quantity::ExtendedH
        )
    }) || cfg.monitor.inequalities;
    if time_differenced {
        if !matches!(cfg.flow.dt_policy, DtPolicy::Fixed(_)) {
            return config_err("flow.dt_policy", "time-differenced checks need dt_policy = \"fixed\"");
        }
        if cfg.flow.snapshot_every == 0 {
            return config_err("flow.snapshot_every", "time-differenced checks need snapshot_every ≥ 1");
        }
    }
    Ok(())
}

/// Template written by `init`; parses as is.
pub const TEMPLATE: &str = r#"# grflab run configuration

[grid]
dim = 3
n = 16

[preset]
# flat | t3_constant_form | conformal_t2 | perturbed_metric | extended_maxwell
name = "t3_constant_form"
a0 = 1.0
k = 1.0

[flow]
# grf | rgrf | deturck | extended
variant = "grf"
# euler | rk2 | rk4
scheme = "rk4"
# fixed (set dt) or cfl (dt = cfl * h^2 / max(1, |Rm|, |H|^2, |F|^2));
# the evolution checks difference snapshots in time and need fixed
dt_policy = "fixed"
dt = 0.002
t_end = 0.02
stencil_order = 4
snapshot_every = 1

[verify]
checks = ["riemann_evolution", "ricci_evolution", "scalar_evolution", "trace_identity"]

[monitor]
max_principle = true
bbs_m = [1, 2]
bbs_alpha = 1.0
bbs_k = 3.0
equivalence_t0 = 0.0
inequalities = false

[output]
dir = "grflab-out"
"#;

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[grid]
dim = 3
n = 32
[preset]
name = "flat"
[flow]
variant = "grf"
t_end = 0.1
"#;

    fn key_of(r: Result<RunConfig>) -> String {
        match r {
            Err(Error::Config { key, .. }) => key,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_uses_documented_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.flow.scheme, Scheme::Rk4);
        assert_eq!(c.flow.dt_policy, DtPolicy::Cfl(0.1));
        assert_eq!(c.flow.stencil_order, StencilOrder::Fourth);
        assert_eq!(c.flow.snapshot_every, 1);
        assert_eq!(c.preset.grid, Grid::new(3, 32).unwrap());
        assert!(c.verify.is_empty() && c.monitor.kinds().is_empty());
    }

    #[test]
    fn template_parses_unmodified() {
        let c = parse_config(TEMPLATE).unwrap();
        assert_eq!(c.preset.preset, Preset::T3ConstantForm { a0: 1.0, k: 1.0 });
        assert_eq!(c.monitor.bbs.len(), 2);
    }

    #[test]
    fn low_resolution_is_rejected() {
        let text = MINIMAL.replace("n = 32", "n = 7");
        match parse_config(&text) {
            Err(Error::Config { key, message }) => {
                assert_eq!(key, "grid.n");
                assert!(message.contains("resolution must be ≥ 8"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_name_their_path() {
        assert_eq!(key_of(parse_config(&MINIMAL.replace("t_end", "tend"))), "flow.tend");
        assert_eq!(key_of(parse_config(&format!("{MINIMAL}\n[extra]\n"))), "extra");
        let t = MINIMAL.replace("name = \"flat\"", "name = \"flat\"\na0 = 2.0");
        assert_eq!(key_of(parse_config(&t)), "preset.a0");
        assert_eq!(key_of(parse_config(&MINIMAL.replace("dim = 3\n", ""))), "grid.dim");
    }

    #[test]
    fn out_of_range_values_are_rejected() {
        assert_eq!(key_of(parse_config(&MINIMAL.replace("t_end = 0.1", "t_end = -1.0"))), "flow.t_end");
        let t = MINIMAL.replace("t_end = 0.1", "t_end = 0.1\ncfl = 0.9");
        assert_eq!(key_of(parse_config(&t)), "flow.cfl");
        let t = MINIMAL.replace("t_end = 0.1", "t_end = 0.1\ndt_policy = \"fixed\"");
        assert_eq!(key_of(parse_config(&t)), "flow.dt");
        let t = MINIMAL.replace("t_end = 0.1", "t_end = 0.1\nstencil_order = 3");
        assert_eq!(key_of(parse_config(&t)), "flow.stencil_order");
    }

    #[test]
    fn refined_variant_needs_closed_form() {
        let t = MINIMAL
            .replace("name = \"flat\"", "name = \"t3_constant_form\"")
            .replace("n = 32", "n = 8")
            .replace("\"grf\"", "\"rgrf\"");
        assert_eq!(parse_config(&t).unwrap().flow.variant, Variant::Rgrf);
        let t = MINIMAL.replace("\"grf\"", "\"extended\"").replace("n = 32", "n = 8");
        assert_eq!(key_of(parse_config(&t)), "flow.variant");
    }

    #[test]
    fn evolution_checks_need_fixed_steps() {
        let t = format!("{MINIMAL}\n[verify]\nchecks = [\"ricci_evolution\"]\n");
        assert_eq!(key_of(parse_config(&t)), "flow.dt_policy");
    }

    #[test]
    fn checks_must_fit_the_variant() {
        let t = format!("{MINIMAL}\n[verify]\nchecks = [\"extended_f\"]\n");
        assert_eq!(key_of(parse_config(&t)), "verify.checks");
        let t = format!("{MINIMAL}\n[verify]\nchecks = [\"nonsense\"]\n");
        assert_eq!(key_of(parse_config(&t)), "verify.checks");
    }

    #[test]
    fn overrides_apply_before_validation() {
        let o = Overrides { resolution: Some(7), snapshot_every: None };
        assert_eq!(key_of(parse_config_with(MINIMAL, o)), "grid.n");
        let o = Overrides { resolution: Some(8), snapshot_every: Some(5) };
        let c = parse_config_with(MINIMAL, o).unwrap();
        assert_eq!(c.preset.grid.resolution(), 8);
        assert_eq!(c.flow.snapshot_every, 5);
    }

    #[test]
    fn paths_resolve_against_base() {
        let mut c = parse_config(MINIMAL).unwrap();
        c.resolve_paths(Path::new("/tmp/x"));
        assert_eq!(c.output.metrics, PathBuf::from("/tmp/x/grflab-out/metrics.ndjson"));
    }
}
