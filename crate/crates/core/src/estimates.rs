//! Monitors for the a-priori estimates: the maximum principle for `|H|`
//! (and `|F|`), the derivative smoothing quantities `Q_m`, uniform metric
//! equivalence, and fitted constants for the schematic inequalities.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Result};
use crate::flow::{FlowState, Trajectory};
use crate::geometry::{covariant_derivative, covariant_derivative_n, curvature, rough_laplacian, GeometryCache};
use crate::grid::StencilOrder;
use crate::par;
use crate::tensor::{norm, sup_norm_g, sym_eigenvalues, TensorField};
use crate::tolerances as tol;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateKind {
    MaxPrinciple,
    Bbs,
    Equivalence,
    RmInequality,
    HInequality,
}

impl EstimateKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimateKind::MaxPrinciple => "max_principle",
            EstimateKind::Bbs => "bbs",
            EstimateKind::Equivalence => "equivalence",
            EstimateKind::RmInequality => "rm_inequality",
            EstimateKind::HInequality => "h_inequality",
        }
    }
}

/// Parameters a report was computed from; unused entries stay `None`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimateInputs {
    pub k1: Option<f64>,
    pub k2: Option<f64>,
    pub k3: Option<f64>,
    pub k: Option<f64>,
    pub alpha: Option<f64>,
    pub m: Option<usize>,
    pub t0: Option<f64>,
    pub c_bar: Option<f64>,
    pub c_n: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub kind: EstimateKind,
    pub inputs: EstimateInputs,
    pub fitted_constant: f64,
    pub bound_satisfied: bool,
    /// Smallest slack between bound and observation over the run.
    pub margin: f64,
    /// False when the run does not meet the estimate's hypotheses; the
    /// bound is then not judged.
    pub hypotheses_hold: bool,
    /// Observed `(t, value)` pairs the report was built from.
    pub series: Vec<(f64, f64)>,
}

/// `sup|H(t)| ≤ K₂ e^{C K₁ t}` with `K₁ = max sup|Rm|`, `K₂ = sup|H(0)|`, and the
/// same for `F` with `K₃ = sup|F(0)|` on extended runs. Uses the per-step
/// diagnostics, so every accepted step is checked.
pub fn max_principle_check(traj: &Trajectory) -> Result<EstimateReport> {
    max_principle_check_with(traj, tol::MAX_PRINCIPLE_C)
}

pub fn max_principle_check_with(traj: &Trajectory, c_n: f64) -> Result<EstimateReport> {
    let diags = &traj.diagnostics;
    if diags.is_empty() {
        return arg("maximum-principle check needs a trajectory with diagnostics");
    }
    let t0 = diags[0].t;
    let k1 = diags.iter().map(|d| d.sup_rm).fold(0.0, f64::max);
    let k2 = diags[0].sup_h;
    let k3 = diags[0].sup_f;
    let extended = traj.variant == crate::flow::Variant::Extended;
    let mut margin = f64::INFINITY;
    let mut fitted = 0.0_f64;
    let mut series = Vec::with_capacity(diags.len());
    let mut judge = |k0: f64, observed: f64, dt: f64| {
        let bound = k0 * (c_n * k1 * dt).exp();
        margin = margin.min(bound - observed);
        // smallest C with observed ≤ k0 e^{C K₁ t}; round-off growth is ignored
        if observed > k0 * (1.0 + 1e-12) {
            if k1 > 0.0 && dt > 0.0 && k0 > 0.0 {
                fitted = fitted.max((observed / k0).ln() / (k1 * dt));
            } else {
                fitted = f64::MAX;
            }
        }
    };
    for d in diags {
        let dt = d.t - t0;
        judge(k2, d.sup_h, dt);
        if extended {
            judge(k3, d.sup_f, dt);
        }
        series.push((d.t, d.sup_h));
    }
    Ok(EstimateReport {
        kind: EstimateKind::MaxPrinciple,
        inputs: EstimateInputs {
            k1: Some(k1),
            k2: Some(k2),
            k3: extended.then_some(k3),
            c_n: Some(c_n),
            ..Default::default()
        },
        fitted_constant: fitted,
        bound_satisfied: margin >= 0.0,
        margin,
        hypotheses_hold: true,
        series,
    })
}

/// Sup-norms `(|∇^{m−1}Rm|, |∇^m H|, |∇^m F|)` at one state.
pub fn derivative_norms(s: &FlowState, geom: &GeometryCache, m: usize) -> Result<(f64, f64, f64)> {
    let g = &s.g;
    let conn = &geom.conn;
    let rm = sup_norm_g(&covariant_derivative_n(&geom.riemann, conn, m - 1)?, g)?;
    let h = sup_norm_g(&covariant_derivative_n(&s.h, conn, m)?, g)?;
    let f = match s.field_strength(conn.order)? {
        Some(f) => sup_norm_g(&covariant_derivative_n(&f, conn, m)?, g)?,
        None => 0.0,
    };
    Ok((rm, h, f))
}

/// `Q_m(t) = t^{m/2} (sup|∇^{m−1}Rm| + sup|∇^m H| [+ sup|∇^m F|])` at every
/// snapshot, with `t` measured from the first snapshot. The hypotheses are
/// `sup|Rm| ≤ K` over the run, `sup|H(0)| ≤ K` and a horizon within `α/K`.
/// Boundedness is judged by non-growth across the final quartile of the run.
pub fn bbs_monitor(traj: &Trajectory, m: usize, alpha: f64, k: f64) -> Result<EstimateReport> {
    if !(1..=3).contains(&m) {
        return arg(format!("m must lie in 1..=3, got {m}"));
    }
    if !(k > 0.0 && alpha > 0.0) {
        return arg("K and α must be positive");
    }
    let first = traj.snapshots.first().ok_or_else(|| crate::Error::Argument("empty trajectory".into()))?;
    let t0 = first.time;
    let horizon = traj.last().time - t0;
    let sup_rm = traj.diagnostics.iter().map(|d| d.sup_rm).fold(0.0, f64::max);
    let sup_h0 = traj.diagnostics.first().map_or(0.0, |d| d.sup_h);
    let hypotheses_hold = sup_rm <= k && sup_h0 <= k && horizon <= alpha / k * (1.0 + 1e-12);
    let order = traj.stencil_order;
    let mut series = Vec::with_capacity(traj.snapshots.len());
    for s in &traj.snapshots {
        let geom = curvature(&s.g, order)?;
        let (a, b, c) = derivative_norms(s, &geom, m)?;
        let t = s.time - t0;
        series.push((s.time, t.powf(0.5 * m as f64) * (a + b + c)));
    }
    let fitted = series.iter().map(|p| p.1).fold(0.0, f64::max);
    let cut = t0 + 0.75 * horizon;
    let start = series.iter().position(|p| p.0 >= cut).unwrap_or(series.len() - 1);
    let margin = series[start].1 - series[series.len() - 1].1;
    // zero series stay exactly zero; allow round-off on nonzero ones
    let slack = 1e-12 * fitted;
    Ok(EstimateReport {
        kind: EstimateKind::Bbs,
        inputs: EstimateInputs { k: Some(k), alpha: Some(alpha), m: Some(m), ..Default::default() },
        fitted_constant: fitted,
        bound_satisfied: margin >= -slack,
        margin,
        hypotheses_hold,
        series,
    })
}

/// Generalized eigenvalues of `a` with respect to the positive-definite `b`,
/// through Cholesky whitening `L⁻¹ a L⁻ᵀ` with `b = L Lᵀ`.
pub fn generalized_eigenvalues(dim: usize, a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let bm = DMatrix::from_row_slice(dim, dim, b);
    let chol = bm
        .cholesky()
        .ok_or_else(|| crate::Error::Argument("reference metric is not positive definite".into()))?;
    let l = chol.l();
    let am = DMatrix::from_row_slice(dim, dim, a);
    let y = l
        .solve_lower_triangular(&am)
        .expect("Cholesky factor is invertible");
    let w = l
        .solve_lower_triangular(&y.transpose())
        .expect("Cholesky factor is invertible");
    let sym = 0.5 * (&w + w.transpose());
    Ok(sym_eigenvalues(dim, sym.as_slice()))
}

/// Checks `e^{−C̄|t−t₀|} ≤ λ ≤ e^{C̄|t−t₀|}` for the generalized eigenvalues of
/// `g(t)` against `g(t₀)` at every node and snapshot, where
/// `C̄ = sup_t (2 sup|Rc| + c sup|H|²)` bounds `|∂t g|` in operator norm.
pub fn equivalence_check(traj: &Trajectory, t0: f64) -> Result<EstimateReport> {
    let times = traj.times();
    let i0 = times
        .iter()
        .position(|&t| (t - t0).abs() <= 1e-12 * t0.abs().max(1.0))
        .ok_or_else(|| crate::Error::Argument(format!("t0 = {t0} is not a snapshot time")))?;
    let order = traj.stencil_order;
    let mut c_bar = 0.0_f64;
    for s in &traj.snapshots {
        c_bar = c_bar.max(metric_speed(s, order)?);
    }
    let reference = &traj.snapshots[i0].g;
    let dim = reference.dim();
    let mut margin = f64::INFINITY;
    let mut fitted = 0.0_f64;
    let mut series = Vec::with_capacity(times.len());
    for s in &traj.snapshots {
        let dt = (s.time - t0).abs();
        let upper = (c_bar * dt).exp();
        let lower = (-c_bar * dt).exp();
        let extremes = par::map_collect(reference.grid().len(), |node| {
            generalized_eigenvalues(dim, s.g.g_at(node), reference.g_at(node))
                .map(|ev| (ev[0], ev[dim - 1]))
        });
        let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
        for e in extremes {
            let (a, b) = e?;
            lo = lo.min(a);
            hi = hi.max(b);
        }
        margin = margin.min((lo - lower).min(upper - hi));
        if dt > 0.0 {
            fitted = fitted.max(lo.ln().abs().max(hi.ln().abs()) / dt);
        }
        series.push((s.time, hi.ln().abs().max(lo.ln().abs())));
    }
    Ok(EstimateReport {
        kind: EstimateKind::Equivalence,
        inputs: EstimateInputs {
            t0: Some(t0),
            c_bar: Some(c_bar),
            c_n: Some(tol::EQUIVALENCE_H_COEFF),
            ..Default::default()
        },
        fitted_constant: fitted,
        bound_satisfied: margin >= -tol::EQUIVALENCE_MARGIN,
        margin,
        hypotheses_hold: true,
        series,
    })
}

/// `2 sup|Rc| + c sup|H|²` at one state.
pub fn metric_speed(s: &FlowState, order: StencilOrder) -> Result<f64> {
    let geom = curvature(&s.g, order)?;
    let rc = sup_norm_g(&geom.ricci, &s.g)?;
    let h = sup_norm_g(&s.h, &s.g)?;
    Ok(2.0 * rc + tol::EQUIVALENCE_H_COEFF * h * h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitModel {
    /// `value = c t^{−p}`
    PowerLaw,
    /// `value = c e^{a t}`
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub coefficient: f64,
    /// `p` for the power law, `a` for the exponential.
    pub exponent: f64,
    /// Root-mean-square residual of the fit in `ln(value)`.
    pub rms: f64,
}

/// Least-squares fit on logarithms.
pub fn fit_constants(series: &[(f64, f64)], model: FitModel) -> Result<Fit> {
    if series.len() < 4 {
        return arg(format!("fit needs at least 4 points, got {}", series.len()));
    }
    if let Some(&(t, v)) = series.iter().find(|p| !(p.1 > 0.0) || !p.1.is_finite()) {
        return arg(format!("fit needs positive values, got {v} at t = {t}"));
    }
    if model == FitModel::PowerLaw && series.iter().any(|p| !(p.0 > 0.0)) {
        return arg("power-law fit needs positive times");
    }
    let xs: Vec<f64> = series
        .iter()
        .map(|p| match model {
            FitModel::PowerLaw => p.0.ln(),
            FitModel::Exponential => p.0,
        })
        .collect();
    let ys: Vec<f64> = series.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return arg("fit needs at least two distinct times");
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rms = (xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum::<f64>() / n).sqrt();
    let exponent = match model {
        FitModel::PowerLaw => -slope,
        FitModel::Exponential => slope,
    };
    Ok(Fit { coefficient: intercept.exp(), exponent, rms })
}

/// Pointwise pieces of the `l = 0` evolution inequalities at one state.
struct InequalityTerms {
    rm2: TensorField,
    h2: TensorField,
    rm: Vec<f64>,
    h: Vec<f64>,
    lap_rm2: TensorField,
    lap_h2: TensorField,
    grad_rm2: Vec<f64>,
    grad_h: Vec<f64>,
    hess_h: Vec<f64>,
}

fn inequality_terms(s: &FlowState, order: StencilOrder) -> Result<InequalityTerms> {
    let geom = curvature(&s.g, order)?;
    let g = &s.g;
    let conn = &geom.conn;
    let rm = norm(&geom.riemann, g)?;
    let h = norm(&s.h, g)?;
    let sq = |t: &TensorField| TensorField::scalar(*g.grid(), t.data().iter().map(|v| v * v).collect());
    let rm2 = sq(&rm)?;
    let h2 = sq(&h)?;
    let lap_rm2 = rough_laplacian(&rm2, conn)?;
    let lap_h2 = rough_laplacian(&h2, conn)?;
    let grad_rm = norm(&covariant_derivative(&geom.riemann, conn)?, g)?;
    let dh = covariant_derivative(&s.h, conn)?;
    let grad_h = norm(&dh, g)?;
    let hess_h = norm(&covariant_derivative(&dh, conn)?, g)?;
    Ok(InequalityTerms {
        rm: rm.data().to_vec(),
        h: h.data().to_vec(),
        grad_rm2: grad_rm.data().iter().map(|v| v * v).collect(),
        grad_h: grad_h.data().to_vec(),
        hess_h: hess_h.data().to_vec(),
        rm2,
        h2,
        lap_rm2,
        lap_h2,
    })
}

/// Smallest constants `C` making the `l = 0` evolution inequalities
///
/// ```text
/// ∂t|Rm|² ≤ Δ|Rm|² − 2|∇Rm|² + C(|Rm|³ + |H|²|Rm|² + (2|H||∇²H| + |∇H|²)|Rm|)
/// ∂t|H|²  ≤ Δ|H|²  − 2|∇H|²  + C |Rm||H|²
/// ```
///
/// hold at every interior snapshot and node, with centered time differences.
/// Nodes whose curvature factor is below `1e-3` of its maximum are skipped,
/// since there the quotient only measures discretization error.
pub fn inequality_constants(traj: &Trajectory) -> Result<(EstimateReport, EstimateReport)> {
    let n = traj.snapshots.len();
    if n < 3 {
        return arg("inequality fit needs at least three snapshots");
    }
    let dt = traj
        .uniform_spacing()
        .ok_or_else(|| crate::Error::Argument("snapshots are not uniformly spaced in time".into()))?;
    let order = traj.stencil_order;
    let terms: Vec<InequalityTerms> = traj
        .snapshots
        .iter()
        .map(|s| inequality_terms(s, order))
        .collect::<Result<_>>()?;
    let mut c_rm = 0.0_f64;
    let mut c_h = 0.0_f64;
    let mut series_rm = Vec::new();
    let mut series_h = Vec::new();
    for k in 1..n - 1 {
        let (prev, cur, next) = (&terms[k - 1], &terms[k], &terms[k + 1]);
        let len = cur.rm.len();
        let mut den_rm = vec![0.0; len];
        let mut den_h = vec![0.0; len];
        let mut num_rm = vec![0.0; len];
        let mut num_h = vec![0.0; len];
        for i in 0..len {
            let (r, h) = (cur.rm[i], cur.h[i]);
            den_rm[i] = r.powi(3) + h * h * r * r + (2.0 * h * cur.hess_h[i] + cur.grad_h[i].powi(2)) * r;
            den_h[i] = r * h * h;
            let drm2 = (next.rm2.data()[i] - prev.rm2.data()[i]) / (2.0 * dt);
            let dh2 = (next.h2.data()[i] - prev.h2.data()[i]) / (2.0 * dt);
            num_rm[i] = drm2 - cur.lap_rm2.data()[i] + 2.0 * cur.grad_rm2[i];
            num_h[i] = dh2 - cur.lap_h2.data()[i] + 2.0 * cur.grad_h[i].powi(2);
        }
        let fit = |num: &[f64], den: &[f64]| {
            let floor = 1e-3 * den.iter().fold(0.0_f64, |m, v| m.max(*v));
            num.iter()
                .zip(den)
                .filter(|(_, d)| **d > floor && **d > 0.0)
                .map(|(a, d)| a / d)
                .fold(0.0_f64, f64::max)
        };
        let a = fit(&num_rm, &den_rm);
        let b = fit(&num_h, &den_h);
        let t = traj.snapshots[k].time;
        series_rm.push((t, a));
        series_h.push((t, b));
        c_rm = c_rm.max(a);
        c_h = c_h.max(b);
    }
    let report = |kind, c: f64, series| EstimateReport {
        kind,
        inputs: EstimateInputs::default(),
        fitted_constant: c,
        bound_satisfied: c.is_finite(),
        margin: 0.0,
        hypotheses_hold: true,
        series,
    };
    Ok((
        report(EstimateKind::RmInequality, c_rm, series_rm),
        report(EstimateKind::HInequality, c_h, series_h),
    ))
}
