//! Right-hand sides of the flow variants and explicit time integration.

use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::geometry::{
    codifferential, covariant_derivative, curvature, curvature_from, exterior_derivative,
    f_tensor, h_tensor, hodge_laplacian, neg_d_codifferential, Connection, GeometryCache,
};
use crate::grid::{Grid, StencilOrder};
use crate::tensor::{lower, sup_norm_g, MetricField, TensorField};

/// Which system is integrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// `∂t g = −2Ric + ½h`, `∂t H = □H`.
    Grf,
    /// Same metric equation, `∂t H = −dd*H`.
    Rgrf,
    /// GRF plus the Lie derivative along the DeTurck field `V`.
    Deturck,
    /// Potentials `A`, `B` evolve; `F = dA`, `H = dB`.
    Extended,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Grf => "grf",
            Variant::Rgrf => "rgrf",
            Variant::Deturck => "deturck",
            Variant::Extended => "extended",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "grf" => Some(Variant::Grf),
            "rgrf" => Some(Variant::Rgrf),
            "deturck" => Some(Variant::Deturck),
            "extended" => Some(Variant::Extended),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Euler,
    Rk2,
    Rk4,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Euler => "euler",
            Scheme::Rk2 => "rk2",
            Scheme::Rk4 => "rk4",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "euler" => Some(Scheme::Euler),
            "rk2" => Some(Scheme::Rk2),
            "rk4" => Some(Scheme::Rk4),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DtPolicy {
    Fixed(f64),
    /// `dt = c·h² / max(1, sup|Rm|, sup|H|², sup|F|²)`.
    Cfl(f64),
}

/// Time-dependent unknowns. In extended mode `h` is always `dB`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub time: f64,
    pub g: MetricField,
    pub h: TensorField,
    pub a: Option<TensorField>,
    pub b: Option<TensorField>,
}

impl FlowState {
    pub fn new(time: f64, g: MetricField, h: TensorField) -> Result<Self> {
        check_form(&h, 3, g.grid(), "H")?;
        Ok(FlowState { time, g, h, a: None, b: None })
    }

    /// Extended-mode state; `H` is derived from `B`.
    pub fn with_potentials(
        time: f64,
        g: MetricField,
        a: TensorField,
        b: TensorField,
        order: StencilOrder,
    ) -> Result<Self> {
        check_form(&a, 1, g.grid(), "A")?;
        check_form(&b, 2, g.grid(), "B")?;
        let h = exterior_derivative(&b, order)?;
        Ok(FlowState { time, g, h, a: Some(a), b: Some(b) })
    }

    pub fn grid(&self) -> &Grid {
        self.g.grid()
    }

    pub fn is_extended(&self) -> bool {
        self.a.is_some() && self.b.is_some()
    }

    /// `F = dA` when a potential is present.
    pub fn field_strength(&self, order: StencilOrder) -> Result<Option<TensorField>> {
        self.a.as_ref().map(|a| exterior_derivative(a, order)).transpose()
    }
}

fn check_form(t: &TensorField, p: usize, grid: &Grid, what: &str) -> Result<()> {
    if t.grid() != grid {
        return arg(format!("{what} lives on a different grid than g"));
    }
    if t.rank() != p || !t.is_covariant() {
        return arg(format!("{what} must be a covariant {p}-form"));
    }
    t.check_antisymmetric(what)
}

/// Time derivatives of the unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct Rates {
    pub g: TensorField,
    /// Rate of `H`; in extended mode this is `d(∂t B)`.
    pub h: TensorField,
    pub a: Option<TensorField>,
    pub b: Option<TensorField>,
}

impl Rates {
    fn combine(terms: &[(f64, &Rates)]) -> Result<Rates> {
        let (w0, r0) = terms[0];
        let mut out = Rates {
            g: r0.g.scaled(w0),
            h: r0.h.scaled(w0),
            a: r0.a.as_ref().map(|a| a.scaled(w0)),
            b: r0.b.as_ref().map(|b| b.scaled(w0)),
        };
        for &(w, r) in &terms[1..] {
            out.g.axpy(w, &r.g)?;
            out.h.axpy(w, &r.h)?;
            if let (Some(x), Some(y)) = (out.a.as_mut(), r.a.as_ref()) {
                x.axpy(w, y)?;
            }
            if let (Some(x), Some(y)) = (out.b.as_mut(), r.b.as_ref()) {
                x.axpy(w, y)?;
            }
        }
        Ok(out)
    }
}

/// `−2Ric + ½h` from a computed geometry.
pub fn metric_rate(geom: &GeometryCache, h: &TensorField) -> Result<TensorField> {
    let mut rate = geom.ricci.scaled(-2.0);
    rate.axpy(0.5, &h_tensor(h, geom.metric())?)?;
    Ok(rate)
}

pub fn grf_rhs(s: &FlowState, order: StencilOrder) -> Result<Rates> {
    let geom = curvature(&s.g, order)?;
    grf_rates(s, &geom)
}

fn grf_rates(s: &FlowState, geom: &GeometryCache) -> Result<Rates> {
    Ok(Rates {
        g: metric_rate(geom, &s.h)?,
        h: hodge_laplacian(&s.h, &geom.conn)?,
        a: None,
        b: None,
    })
}

/// Largest `|dH|` entry; zero for top-degree forms.
pub fn closedness_defect(h: &TensorField, order: StencilOrder) -> Result<f64> {
    if h.rank() >= h.dim() {
        return Ok(0.0);
    }
    Ok(exterior_derivative(h, order)?.sup_norm())
}

/// Absolute bound on `sup|dH|` accepted as closed.
pub const CLOSED_TOLERANCE: f64 = 1e-10;

pub fn check_closed(h: &TensorField, order: StencilOrder) -> Result<()> {
    let defect = closedness_defect(h, order)?;
    if defect > CLOSED_TOLERANCE * h.sup_norm().max(1.0) {
        return Err(Error::Precondition(format!(
            "H is not closed: sup|dH| = {defect:e}"
        )));
    }
    Ok(())
}

pub fn rgrf_rhs(s: &FlowState, order: StencilOrder) -> Result<Rates> {
    check_closed(&s.h, order)?;
    let geom = curvature(&s.g, order)?;
    rgrf_rates(s, &geom)
}

fn rgrf_rates(s: &FlowState, geom: &GeometryCache) -> Result<Rates> {
    Ok(Rates {
        g: metric_rate(geom, &s.h)?,
        h: neg_d_codifferential(&s.h, &geom.conn)?,
        a: None,
        b: None,
    })
}

/// DeTurck field `V_i = g_ik g^bc (Γ^k_bc − Γ̃^k_bc)`.
pub fn deturck_field(conn: &Connection, background: &Connection) -> Result<TensorField> {
    let g = &conn.metric;
    if background.grid() != conn.grid() {
        return arg("background metric lives on a different grid");
    }
    let dim = g.dim();
    let gam = &conn.christoffel;
    let bg = &background.christoffel;
    Ok(TensorField::from_fn(*g.grid(), lower(1), |node, out| {
        let gi = g.inv_at(node);
        let gl = g.g_at(node);
        let (c, cb) = (gam.at(node), bg.at(node));
        let mut w = [0.0; 4];
        for (k, wk) in w.iter_mut().enumerate().take(dim) {
            for b in 0..dim {
                for cc in 0..dim {
                    let idx = (k * dim + b) * dim + cc;
                    *wk += gi[b * dim + cc] * (c[idx] - cb[idx]);
                }
            }
        }
        for i in 0..dim {
            out[i] = (0..dim).map(|k| gl[i * dim + k] * w[k]).sum();
        }
    }))
}

/// `∇i Vj + ∇j Vi`.
pub fn deturck_correction(conn: &Connection, background: &Connection) -> Result<TensorField> {
    let v = deturck_field(conn, background)?;
    let dv = covariant_derivative(&v, conn)?;
    dv.add(&dv.transpose(0, 1)?)
}

pub fn deturck_rhs(s: &FlowState, background: &Connection, order: StencilOrder) -> Result<Rates> {
    let geom = curvature(&s.g, order)?;
    deturck_rates(s, &geom, background)
}

fn deturck_rates(s: &FlowState, geom: &GeometryCache, background: &Connection) -> Result<Rates> {
    let mut rates = grf_rates(s, geom)?;
    rates.g.axpy(1.0, &deturck_correction(&geom.conn, background)?)?;
    Ok(rates)
}

/// Metric rate of the gauged flow in expanded quasilinear form, written
/// with background covariant derivatives `∇̃` and background curvature `R̃`:
///
/// ```text
/// g^ab ∇̃a∇̃b g_ij − g^ab g_ip g̃^pq R̃_jaqb − g^ab g_jp g̃^pq R̃_iaqb
///   + ½ g^ab g^pq ( ∇̃i g_pa ∇̃j g_qb + 2 ∇̃a g_jp ∇̃q g_ib − 2 ∇̃a g_jp ∇̃b g_iq
///                  − 2 ∇̃j g_pa ∇̃b g_iq − 2 ∇̃i g_pa ∇̃b g_jq ) + ½ h_ij
/// ```
pub fn deturck_expanded_metric_rate(s: &FlowState, background: &GeometryCache) -> Result<TensorField> {
    let g = &s.g;
    let bconn = &background.conn;
    if bconn.grid() != g.grid() {
        return arg("background metric lives on a different grid");
    }
    let dim = g.dim();
    let d1 = covariant_derivative(g.value(), bconn)?;
    let d2 = covariant_derivative(&d1, bconn)?;
    let ht = h_tensor(&s.h, g)?;
    let rt = &background.riemann;
    let bg = background.metric();
    let n2 = dim * dim;
    let n3 = n2 * dim;
    Ok(TensorField::from_fn(*g.grid(), lower(2), |node, out| {
        let gi = g.inv_at(node);
        let gl = g.g_at(node);
        let gbi = bg.inv_at(node);
        let r = rt.at(node);
        let a1 = d1.at(node);
        let a2 = d2.at(node);
        let ginv = |a: usize, b: usize| gi[a * dim + b];
        // D(a, i, j) = ∇̃a g_ij
        let dd = |a: usize, i: usize, j: usize| a1[a * n2 + i * dim + j];
        let rm = |i: usize, j: usize, k: usize, l: usize| r[i * n3 + j * n2 + k * dim + l];
        for i in 0..dim {
            for j in 0..dim {
                let mut acc = 0.0;
                for a in 0..dim {
                    for b in 0..dim {
                        let gab = ginv(a, b);
                        acc += gab * a2[a * n3 + b * n2 + i * dim + j];
                        let mut curv = 0.0;
                        for p in 0..dim {
                            for q in 0..dim {
                                let w = gbi[p * dim + q];
                                curv += gl[i * dim + p] * w * rm(j, a, q, b)
                                    + gl[j * dim + p] * w * rm(i, a, q, b);
                            }
                        }
                        acc -= gab * curv;
                        let mut quad = 0.0;
                        for p in 0..dim {
                            for q in 0..dim {
                                quad += ginv(p, q)
                                    * (dd(i, p, a) * dd(j, q, b)
                                        + 2.0 * dd(a, j, p) * dd(q, i, b)
                                        - 2.0 * dd(a, j, p) * dd(b, i, q)
                                        - 2.0 * dd(j, p, a) * dd(b, i, q)
                                        - 2.0 * dd(i, p, a) * dd(b, j, q));
                            }
                        }
                        acc += 0.5 * gab * quad;
                    }
                }
                out[i * dim + j] = acc + 0.5 * ht.at(node)[i * dim + j];
            }
        }
    }))
}

fn missing_potentials<T>() -> Result<T> {
    Err(Error::Config {
        key: "preset".into(),
        message: "extended flow needs potentials A and B (use the extended_maxwell preset)".into(),
    })
}

pub fn extended_rhs(s: &FlowState, order: StencilOrder) -> Result<Rates> {
    if !s.is_extended() {
        return missing_potentials();
    }
    let geom = curvature(&s.g, order)?;
    extended_rates(s, &geom)
}

fn extended_rates(s: &FlowState, geom: &GeometryCache) -> Result<Rates> {
    let (Some(_), Some(_)) = (&s.a, &s.b) else {
        return missing_potentials();
    };
    let order = geom.conn.order;
    let f = s.field_strength(order)?.expect("checked above");
    let mut g = metric_rate(geom, &s.h)?;
    g.axpy(2.0, &f_tensor(&f, geom.metric())?)?;
    let da = codifferential(&f, &geom.conn)?.scaled(-1.0);
    let db = codifferential(&s.h, &geom.conn)?.scaled(-1.0);
    let h = exterior_derivative(&db, order)?;
    Ok(Rates { g, h, a: Some(da), b: Some(db) })
}

/// Integration settings.
#[derive(Debug, Clone)]
pub struct FlowConfig {
    pub variant: Variant,
    pub scheme: Scheme,
    pub dt_policy: DtPolicy,
    pub t_end: f64,
    pub stencil_order: StencilOrder,
    /// Background metric and its curvature (DeTurck only).
    pub background: Option<GeometryCache>,
    /// Keep every `k`-th step as a snapshot; 0 keeps only the endpoints.
    pub snapshot_every: usize,
}

impl FlowConfig {
    pub fn new(variant: Variant, dt_policy: DtPolicy, t_end: f64) -> Self {
        FlowConfig {
            variant,
            scheme: Scheme::Rk4,
            dt_policy,
            t_end,
            stencil_order: StencilOrder::Fourth,
            background: None,
            snapshot_every: 1,
        }
    }

    /// Attach a background metric for the gauged flow.
    pub fn with_background(mut self, g: &MetricField) -> Result<Self> {
        self.background = Some(curvature(g, self.stencil_order)?);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        match self.dt_policy {
            DtPolicy::Fixed(dt) if !(dt > 0.0 && dt.is_finite()) => {
                return arg(format!("dt must be positive, got {dt}"));
            }
            DtPolicy::Cfl(c) if !(c > 0.0 && c <= 0.5) => {
                return arg(format!("CFL coefficient must lie in (0, 0.5], got {c}"));
            }
            _ => {}
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return arg(format!("t_end must be nonnegative, got {}", self.t_end));
        }
        if self.variant == Variant::Deturck && self.background.is_none() {
            return arg("deturck variant needs a background metric");
        }
        Ok(())
    }
}

/// Evaluate the configured right side, returning the geometry it used.
pub fn evaluate(s: &FlowState, cfg: &FlowConfig) -> Result<(Rates, GeometryCache)> {
    let geom = curvature_from(Connection::new(s.g.clone(), cfg.stencil_order)?)?;
    let rates = match cfg.variant {
        Variant::Grf => grf_rates(s, &geom)?,
        Variant::Rgrf => rgrf_rates(s, &geom)?,
        Variant::Deturck => {
            let bg = cfg
                .background
                .as_ref()
                .ok_or_else(|| Error::Argument("deturck variant needs a background metric".into()))?;
            deturck_rates(s, &geom, &bg.conn)?
        }
        Variant::Extended => extended_rates(s, &geom)?,
    };
    Ok((rates, geom))
}

/// `s + c·k`, re-symmetrizing and re-validating the metric.
fn advance(s: &FlowState, k: &Rates, c: f64, order: StencilOrder) -> Result<FlowState> {
    let mut gv = s.g.value().clone();
    gv.axpy(c, &k.g)?;
    let g = MetricField::new(gv.symmetrized(0, 1)?)?;
    let time = s.time + c;
    if let (Some(a), Some(b), Some(ka), Some(kb)) = (&s.a, &s.b, &k.a, &k.b) {
        let mut a = a.clone();
        a.axpy(c, ka)?;
        let mut b = b.clone();
        b.axpy(c, kb)?;
        return FlowState::with_potentials(time, g, a, b, order);
    }
    let mut h = s.h.clone();
    h.axpy(c, &k.h)?;
    Ok(FlowState { time, g, h, a: None, b: None })
}

/// One explicit step of size `dt` given the rates `k1` already evaluated at `s`.
fn step_from(s: &FlowState, k1: &Rates, dt: f64, cfg: &FlowConfig) -> Result<FlowState> {
    let order = cfg.stencil_order;
    let f = |st: &FlowState| evaluate(st, cfg).map(|r| r.0);
    let mut next = match cfg.scheme {
        Scheme::Euler => advance(s, k1, dt, order)?,
        Scheme::Rk2 => {
            let k2 = f(&advance(s, k1, 0.5 * dt, order)?)?;
            advance(s, &k2, dt, order)?
        }
        Scheme::Rk4 => {
            let k2 = f(&advance(s, k1, 0.5 * dt, order)?)?;
            let k3 = f(&advance(s, &k2, 0.5 * dt, order)?)?;
            let k4 = f(&advance(s, &k3, dt, order)?)?;
            let k = Rates::combine(&[
                (1.0 / 6.0, k1),
                (1.0 / 3.0, &k2),
                (1.0 / 3.0, &k3),
                (1.0 / 6.0, &k4),
            ])?;
            advance(s, &k, dt, order)?
        }
    };
    next.time = s.time + dt;
    Ok(next)
}

/// One explicit step of size `dt`.
pub fn step(s: &FlowState, cfg: &FlowConfig, dt: f64) -> Result<FlowState> {
    if !(dt > 0.0) {
        return arg(format!("dt must be positive, got {dt}"));
    }
    let (k1, _) = evaluate(s, cfg)?;
    step_from(s, &k1, dt, cfg)
}

/// Pointwise sup-norms recorded after every step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub t: f64,
    /// Size of the step that produced this state; 0 for the initial state.
    pub dt: f64,
    pub sup_rm: f64,
    pub sup_h: f64,
    pub sup_f: f64,
    pub min_eig_g: f64,
}

pub fn diagnostics(s: &FlowState, geom: &GeometryCache, step: usize, dt: f64) -> Result<StepDiagnostics> {
    let g = &s.g;
    let sup_f = match s.field_strength(geom.conn.order)? {
        Some(f) => sup_norm_g(&f, g)?,
        None => 0.0,
    };
    Ok(StepDiagnostics {
        step,
        t: s.time,
        dt,
        sup_rm: sup_norm_g(&geom.riemann, g)?,
        sup_h: sup_norm_g(&s.h, g)?,
        sup_f,
        min_eig_g: g.min_eigenvalue().0,
    })
}

/// How a run ended early.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub step: usize,
    pub time: f64,
    pub node: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub variant: Variant,
    pub stencil_order: StencilOrder,
    pub snapshots: Vec<FlowState>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub failure: Option<Failure>,
}

impl Trajectory {
    pub fn last(&self) -> &FlowState {
        self.snapshots.last().expect("trajectory holds the initial state")
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.time).collect()
    }

    /// Common spacing of consecutive snapshots, if uniform to round-off.
    pub fn uniform_spacing(&self) -> Option<f64> {
        let t = self.times();
        if t.len() < 2 {
            return None;
        }
        let dt = t[1] - t[0];
        let ok = t.windows(2).all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-9 * dt.abs().max(1e-300));
        (ok && dt > 0.0).then_some(dt)
    }
}

fn cfl_dt(c: f64, grid: &Grid, d: &StepDiagnostics) -> f64 {
    let h = grid.spacing();
    let scale = 1f64.max(d.sup_rm).max(d.sup_h * d.sup_h).max(d.sup_f * d.sup_f);
    c * h * h / scale
}

/// Integrate from `initial` to `cfg.t_end`. Degeneration ends the run early and
/// is recorded in [`Trajectory::failure`]; other errors are returned.
pub fn run(initial: &FlowState, cfg: &FlowConfig) -> Result<Trajectory> {
    cfg.validate()?;
    if cfg.variant == Variant::Rgrf {
        check_closed(&initial.h, cfg.stencil_order)?;
    }
    if cfg.variant == Variant::Extended && !initial.is_extended() {
        return missing_potentials();
    }
    let grid = *initial.grid();
    let t0 = initial.time;
    let t_end = t0 + cfg.t_end;
    let mut traj = Trajectory {
        variant: cfg.variant,
        stencil_order: cfg.stencil_order,
        snapshots: vec![initial.clone()],
        diagnostics: Vec::new(),
        failure: None,
    };
    let mut state = initial.clone();
    let mut n = 0usize;
    let mut last_dt = 0.0;
    loop {
        let (k1, geom) = evaluate(&state, cfg)?;
        let diag = diagnostics(&state, &geom, n, last_dt)?;
        traj.diagnostics.push(diag);
        let remaining = t_end - state.time;
        let nominal = match cfg.dt_policy {
            DtPolicy::Fixed(dt) => dt,
            DtPolicy::Cfl(c) => cfl_dt(c, &grid, &diag),
        };
        if remaining <= 1e-9 * nominal {
            break;
        }
        let final_step = remaining <= nominal * (1.0 + 1e-9);
        let dt = if final_step { remaining } else { nominal };
        match step_from(&state, &k1, dt, cfg) {
            Ok(mut next) => {
                n += 1;
                next.time = match (final_step, cfg.dt_policy) {
                    (true, _) => t_end,
                    (false, DtPolicy::Fixed(h)) => t0 + n as f64 * h,
                    (false, DtPolicy::Cfl(_)) => next.time,
                };
                last_dt = dt;
                state = next;
                let keep = cfg.snapshot_every > 0 && n % cfg.snapshot_every == 0;
                if keep || final_step {
                    traj.snapshots.push(state.clone());
                }
            }
            Err(Error::Degenerate { node, reason }) => {
                traj.failure = Some(Failure {
                    step: n + 1,
                    time: state.time,
                    node: Some(node),
                    message: format!("metric degenerated at node {node}: {reason}"),
                });
                if traj.snapshots.last().map(|s| s.time) != Some(state.time) {
                    traj.snapshots.push(state.clone());
                }
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{build, volume_3form, Preset, PresetSpec};

    const O4: StencilOrder = StencilOrder::Fourth;

    fn preset(p: Preset, dim: usize, n: usize) -> FlowState {
        build(&PresetSpec::new(p, Grid::new(dim, n).unwrap()).unwrap(), O4).unwrap()
    }

    fn flat_extended(grid: Grid) -> FlowState {
        let a = TensorField::from_fn(grid, lower(1), |_, o| o[0] = 0.3);
        let b = TensorField::from_fn(grid, lower(2), |_, o| {
            o[1] = 0.2;
            o[3] = -0.2;
        });
        FlowState::with_potentials(0.0, MetricField::flat(grid), a, b, O4).unwrap()
    }

    #[test]
    fn flat_state_is_stationary_for_every_variant() {
        let grid = Grid::new(3, 8).unwrap();
        let flat = preset(Preset::Flat, 3, 8);
        for variant in [Variant::Grf, Variant::Rgrf, Variant::Deturck, Variant::Extended] {
            let mut cfg = FlowConfig::new(variant, DtPolicy::Fixed(1e-3), 0.1);
            cfg.snapshot_every = 0;
            if variant == Variant::Deturck {
                cfg = cfg.with_background(&MetricField::flat(grid)).unwrap();
            }
            let init = if variant == Variant::Extended { flat_extended(grid) } else { flat.clone() };
            let traj = run(&init, &cfg).unwrap();
            assert_eq!(traj.diagnostics.len(), 101);
            let last = traj.last();
            assert!((last.time - 0.1).abs() < 1e-15);
            assert_eq!(last.g.value().max_abs_diff(init.g.value()).unwrap(), 0.0);
            assert_eq!(last.h, init.h);
            assert_eq!(last.a, init.a);
        }
    }

    #[test]
    fn t3_rates() {
        let s = preset(Preset::T3ConstantForm { a0: 2.0, k: 1.5 }, 3, 8);
        let r = grf_rhs(&s, O4).unwrap();
        let expect = 1.5f64.powi(2) / 4.0;
        for node in 0..s.grid().len() {
            let v = r.g.at(node);
            for i in 0..3 {
                for j in 0..3 {
                    let e = if i == j { expect } else { 0.0 };
                    assert!((v[i * 3 + j] - e).abs() < 1e-14);
                }
            }
        }
        assert_eq!(r.h.sup_norm(), 0.0);
        let unit = preset(Preset::T3ConstantForm { a0: 1.0, k: 1.0 }, 3, 8);
        let r = grf_rhs(&unit, O4).unwrap();
        assert_eq!(&r.g.at(0)[..3], &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_form_reduces_to_ricci_flow() {
        let s = preset(Preset::ConformalT2 { epsilon: 0.1, wavevector: [1, 1] }, 2, 16);
        let r = grf_rhs(&s, O4).unwrap();
        let ric = curvature(&s.g, O4).unwrap().ricci.scaled(-2.0);
        assert_eq!(r.g.max_abs_diff(&ric).unwrap(), 0.0);
    }

    #[test]
    fn rgrf_on_closed_forms() {
        let flat = MetricField::flat(Grid::new(4, 8).unwrap());
        let s = FlowState::new(0.0, flat, volume_3form(Grid::new(4, 8).unwrap(), 2.0)).unwrap();
        assert_eq!(rgrf_rhs(&s, O4).unwrap().h.sup_norm(), 0.0);

        let s = preset(Preset::PerturbedMetric { epsilon: 0.2, seed: 3, form_amplitude: 0.3 }, 4, 8);
        let r = rgrf_rhs(&s, O4).unwrap();
        assert!(r.h.sup_norm() > 1e-3);
        assert!(exterior_derivative(&r.h, O4).unwrap().sup_norm() < 1e-13);
        let full = grf_rhs(&s, O4).unwrap();
        assert!(full.h.max_abs_diff(&r.h).unwrap() < 1e-13);
    }

    #[test]
    fn rgrf_rejects_open_forms() {
        let grid = Grid::new(4, 8).unwrap();
        let h = TensorField::from_fn(grid, lower(3), |node, o| {
            let v = grid.position(node)[3].sin();
            let s = volume_3form(grid, v);
            o.copy_from_slice(s.at(0));
        });
        let s = FlowState::new(0.0, MetricField::flat(grid), h).unwrap();
        assert!(matches!(rgrf_rhs(&s, O4), Err(Error::Precondition(_))));
        let cfg = FlowConfig::new(Variant::Rgrf, DtPolicy::Fixed(1e-3), 1e-3);
        assert!(matches!(run(&s, &cfg), Err(Error::Precondition(_))));
    }

    #[test]
    fn deturck_with_matching_background_is_grf() {
        let s = preset(Preset::PerturbedMetric { epsilon: 0.2, seed: 5, form_amplitude: 0.2 }, 3, 8);
        let bg = Connection::new(s.g.clone(), O4).unwrap();
        let v = deturck_field(&Connection::new(s.g.clone(), O4).unwrap(), &bg).unwrap();
        assert_eq!(v.sup_norm(), 0.0);
        assert_eq!(deturck_rhs(&s, &bg, O4).unwrap(), grf_rhs(&s, O4).unwrap());
        let flat = preset(Preset::Flat, 3, 8);
        let fb = Connection::new(flat.g.clone(), O4).unwrap();
        assert_eq!(deturck_rhs(&flat, &fb, O4).unwrap().g.sup_norm(), 0.0);
    }

    fn expanded_gap(n: usize, background: impl Fn(Grid) -> MetricField) -> f64 {
        let s = preset(Preset::PerturbedMetric { epsilon: 0.2, seed: 11, form_amplitude: 0.2 }, 3, n);
        let bg = curvature(&background(*s.grid()), O4).unwrap();
        let assembled = deturck_rhs(&s, &bg.conn, O4).unwrap().g;
        let expanded = deturck_expanded_metric_rate(&s, &bg).unwrap();
        assert!(assembled.sup_norm() > 1e-2, "{}", assembled.sup_norm());
        assembled.max_abs_diff(&expanded).unwrap()
    }

    #[test]
    fn expanded_gauge_form_matches_assembly() {
        let flat = |g: Grid| MetricField::flat(g);
        let (e1, e2) = (expanded_gap(12, flat), expanded_gap(24, flat));
        assert!((e1 / e2).log2() > 3.2, "{e1} {e2}");
        // a curved background exercises the curvature terms and their sign
        let curved = |g: Grid| {
            let u = g.sample(|x| 0.15 * (x[0] + 2.0 * x[2]).sin());
            MetricField::conformal(g, &u).unwrap()
        };
        let (e1, e2) = (expanded_gap(12, curved), expanded_gap(24, curved));
        assert!((e1 / e2).log2() > 3.2, "curved {e1} {e2}");
    }

    #[test]
    fn extended_rates() {
        let grid = Grid::new(3, 8).unwrap();
        let r = extended_rhs(&flat_extended(grid), O4).unwrap();
        assert_eq!(r.g.sup_norm(), 0.0);
        assert_eq!(r.a.unwrap().sup_norm(), 0.0);
        assert_eq!(r.b.unwrap().sup_norm(), 0.0);

        let eps = 0.2;
        let grid = Grid::new(3, 32).unwrap();
        let a = TensorField::from_fn(grid, lower(1), |node, o| o[1] = eps * grid.position(node)[0].sin());
        let s = FlowState::with_potentials(0.0, MetricField::flat(grid), a, TensorField::zeros(grid, lower(2)), O4)
            .unwrap();
        let r = extended_rhs(&s, O4).unwrap();
        let da = r.a.unwrap();
        let h4 = grid.spacing().powi(4);
        for node in 0..grid.len() {
            let x = grid.position(node)[0];
            assert!(da.at(node)[0].abs() < 1e-14 && da.at(node)[2].abs() < 1e-14);
            assert!((da.at(node)[1] + eps * x.sin()).abs() < eps * h4);
        }
        // f_ij = diag(ε²cos², ε²cos², 0) enters with weight 2
        let node = grid.node_at(&[0, 5, 7]);
        assert!((r.g.at(node)[0] - 2.0 * eps * eps).abs() < eps * eps * h4);
        assert!(r.g.at(node)[8].abs() < 1e-12);

        let plain = preset(Preset::Flat, 3, 8);
        assert!(matches!(extended_rhs(&plain, O4), Err(Error::Config { .. })));
        let cfg = FlowConfig::new(Variant::Extended, DtPolicy::Fixed(1e-3), 1e-3);
        assert!(matches!(run(&plain, &cfg), Err(Error::Config { .. })));
    }

    #[test]
    fn extended_run_keeps_fields_exact() {
        let s = preset(Preset::ExtendedMaxwell { epsilon: 0.1 }, 3, 8);
        let cfg = FlowConfig::new(Variant::Extended, DtPolicy::Cfl(0.1), 0.02);
        let traj = run(&s, &cfg).unwrap();
        for snap in &traj.snapshots {
            let dh = exterior_derivative(snap.b.as_ref().unwrap(), O4).unwrap();
            assert_eq!(dh, snap.h);
        }
        assert!(traj.diagnostics[0].sup_f > 0.0);
    }

    #[test]
    fn t3_short_run_tracks_exact_solution() {
        let s = preset(Preset::T3ConstantForm { a0: 1.0, k: 1.0 }, 3, 8);
        let mut cfg = FlowConfig::new(Variant::Grf, DtPolicy::Fixed(1e-2), 0.1);
        cfg.snapshot_every = 5;
        let traj = run(&s, &cfg).unwrap();
        assert_eq!(traj.snapshots.len(), 3);
        for snap in &traj.snapshots {
            let exact = (1.0 + 3.0 * snap.time).cbrt();
            assert!((snap.g.g_at(0)[0] / exact - 1.0).abs() < 1e-8);
        }
        for d in &traj.diagnostics {
            let exact = (6.0 / (1.0 + 3.0 * d.t)).sqrt();
            assert!((d.sup_h / exact - 1.0).abs() < 1e-8);
        }
        assert_eq!(traj.uniform_spacing().map(|h| (h - 0.05).abs() < 1e-12), Some(true));
    }

    #[test]
    fn schemes_have_expected_order() {
        let s = preset(Preset::T3ConstantForm { a0: 1.0, k: 1.0 }, 3, 8);
        let exact = 1.6f64.cbrt();
        for (scheme, order) in [(Scheme::Euler, 1.0), (Scheme::Rk2, 2.0), (Scheme::Rk4, 4.0)] {
            let err = |dt: f64| {
                let mut cfg = FlowConfig::new(Variant::Grf, DtPolicy::Fixed(dt), 0.2);
                cfg.scheme = scheme;
                cfg.snapshot_every = 0;
                (run(&s, &cfg).unwrap().last().g.g_at(0)[0] - exact).abs()
            };
            let slope = (err(0.05) / err(0.025)).log2();
            assert!((slope - order).abs() < 0.3, "{scheme:?}: {slope}");
        }
    }

    #[test]
    fn zero_length_run_keeps_initial_state() {
        let s = preset(Preset::Flat, 2, 8);
        let traj = run(&s, &FlowConfig::new(Variant::Grf, DtPolicy::Fixed(0.1), 0.0)).unwrap();
        assert_eq!(traj.snapshots.len(), 1);
        assert_eq!(traj.diagnostics.len(), 1);
        assert!(traj.failure.is_none());
    }

    #[test]
    fn degeneration_is_recorded() {
        let s = preset(Preset::ConformalT2 { epsilon: 0.3, wavevector: [1, 0] }, 2, 16);
        let mut cfg = FlowConfig::new(Variant::Grf, DtPolicy::Fixed(5.0), 10.0);
        cfg.scheme = Scheme::Euler;
        let traj = run(&s, &cfg).unwrap();
        let f = traj.failure.expect("run should degenerate");
        assert_eq!(f.step, 1);
        assert!(f.node.is_some());
        assert_eq!(traj.snapshots.len(), 1);
        assert!(matches!(step(&s, &cfg, 5.0), Err(Error::Degenerate { .. })));
    }

    #[test]
    fn cfl_policy_bounds_dt() {
        let s = preset(Preset::T3ConstantForm { a0: 1.0, k: 1.0 }, 3, 8);
        let cfg = FlowConfig::new(Variant::Grf, DtPolicy::Cfl(0.1), 0.01);
        let traj = run(&s, &cfg).unwrap();
        let h = s.grid().spacing();
        for w in traj.diagnostics.windows(2) {
            let bound = 0.1 * h * h / w[0].sup_h.powi(2).max(1.0);
            assert!(w[1].dt <= bound * (1.0 + 1e-12));
        }
        assert!((traj.last().time - 0.01).abs() < 1e-15);
        let mut bad = cfg.clone();
        bad.dt_policy = DtPolicy::Cfl(0.6);
        assert!(bad.validate().is_err());
        bad.dt_policy = DtPolicy::Fixed(-1.0);
        assert!(bad.validate().is_err());
        let gauge = FlowConfig::new(Variant::Deturck, DtPolicy::Fixed(0.1), 1.0);
        assert!(gauge.validate().is_err());
    }
}
