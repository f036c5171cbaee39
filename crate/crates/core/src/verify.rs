//! Residual checks of the curvature evolution equations and related
//! identities, plus closed-form oracles.
//!
//! Conventions follow [`crate::geometry`]. With `v = ∂t g = −2Ric + ½h` the
//! checked right sides are
//!
//! ```text
//! ∂t R_ijkl = ΔR_ijkl + 2(B_ijkl − B_ijlk − B_iljk + B_ikjl)
//!           − g^pq (R_pjkl R_qi + R_ipkl R_qj + R_ijpl R_qk + R_ijkp R_ql)
//!           + ¼(−∇i∇k h_jl + ∇i∇l h_jk + ∇j∇k h_il − ∇j∇l h_ik)
//!           + ¼ g^pq (R_ijkp h_ql + R_ijpl h_qk),
//! B_ijkl    = g^pr g^qs R_piqj R_rksl,
//!
//! ∂t R_ik   = ΔR_ik + 2 R_piqk R^pq − 2 R_ip R^p_k − ¼ h^lq R_ilkq + ¼ R_ip h^p_k
//!           + ¼(−∇i∇k|H|² + ∇i∇^j h_jk + ∇^j∇k h_ij − Δh_ik),
//!
//! ∂t R      = ΔR + 2|Ric|² − ½Δ|H|² − ½⟨h, Ric⟩ + ½∇^i∇^j h_ij.
//! ```
//!
//! The Ricci and scalar forms include the `h` part of `∂t g⁻¹ = −g⁻¹ v g⁻¹`
//! when tracing, which is where the `h∗Rm` coefficients come from.

use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::flow::{
    closedness_defect, deturck_correction, deturck_expanded_metric_rate, grf_rhs, metric_rate,
    rgrf_rhs, FlowState, Trajectory, Variant,
};
use crate::geometry::{
    covariant_derivative, covariant_derivative_n, curvature, curvature_action, exterior_derivative,
    h_tensor, hodge_laplacian, rough_laplacian, weitzenbock_term, Connection, GeometryCache,
};
use crate::grid::{Grid, StencilOrder};
use crate::tensor::{lower, MetricField, TensorField};
use crate::tolerances as tol;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    RiemannEvolution,
    RicciEvolution,
    ScalarEvolution,
    Commutator,
    Bochner,
    RgrfEqualsGrf,
    Closedness,
    FirstVariation,
    TraceIdentity,
    DeturckConsistency,
    ExtendedF,
    ExtendedH,
}

impl Quantity {
    pub fn name(self) -> &'static str {
        match self {
            Quantity::RiemannEvolution => "riemann_evolution",
            Quantity::RicciEvolution => "ricci_evolution",
            Quantity::ScalarEvolution => "scalar_evolution",
            Quantity::Commutator => "commutator",
            Quantity::Bochner => "bochner",
            Quantity::RgrfEqualsGrf => "rgrf_equals_grf",
            Quantity::Closedness => "closedness",
            Quantity::FirstVariation => "first_variation",
            Quantity::TraceIdentity => "trace_identity",
            Quantity::DeturckConsistency => "deturck_consistency",
            Quantity::ExtendedF => "extended_f",
            Quantity::ExtendedH => "extended_h",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        ALL_QUANTITIES.iter().copied().find(|q| q.name() == s)
    }
}

pub const ALL_QUANTITIES: [Quantity; 12] = [
    Quantity::RiemannEvolution,
    Quantity::RicciEvolution,
    Quantity::ScalarEvolution,
    Quantity::Commutator,
    Quantity::Bochner,
    Quantity::RgrfEqualsGrf,
    Quantity::Closedness,
    Quantity::FirstVariation,
    Quantity::TraceIdentity,
    Quantity::DeturckConsistency,
    Quantity::ExtendedF,
    Quantity::ExtendedH,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    NotApplicable,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn passed(self) -> bool {
        self != Verdict::Fail
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub quantity: Quantity,
    pub sup_residual: f64,
    /// Sup-norm of the reference side, for scale.
    pub reference: f64,
    pub expected_order: f64,
    /// Spatial order from a two-resolution comparison.
    pub measured_order: Option<f64>,
    /// Temporal order from the same comparison (joint `h`, `dt` refinement).
    pub measured_dt_order: Option<f64>,
    pub tolerance: f64,
    pub h: f64,
    pub dt: Option<f64>,
    pub verdict: Verdict,
}

impl ResidualReport {
    fn new(quantity: Quantity, sup_residual: f64, reference: f64, expected_order: f64, tolerance: f64, h: f64, dt: Option<f64>) -> Self {
        ResidualReport {
            quantity,
            sup_residual,
            reference,
            expected_order,
            measured_order: None,
            measured_dt_order: None,
            tolerance,
            h,
            dt,
            verdict: Verdict::from_bool(sup_residual <= tolerance),
        }
    }

    fn not_applicable(mut self) -> Self {
        self.verdict = Verdict::NotApplicable;
        self
    }
}

/// Combine a coarse and a fine report of the same check into the fine report
/// with measured orders. The verdict stays the fine run's tolerance verdict;
/// order thresholds are the caller's to judge.
pub fn with_refinement(coarse: &ResidualReport, fine: &ResidualReport) -> Result<ResidualReport> {
    if coarse.quantity != fine.quantity {
        return arg("refinement needs two reports of the same quantity");
    }
    if !(fine.h < coarse.h) {
        return arg("refinement needs a finer second resolution");
    }
    let ratio = coarse.sup_residual / fine.sup_residual;
    let mut out = fine.clone();
    out.measured_order = Some(ratio.ln() / (coarse.h / fine.h).ln());
    if let (Some(dc), Some(df)) = (coarse.dt, fine.dt) {
        if df < dc {
            out.measured_dt_order = Some(ratio.ln() / (dc / df).ln());
        }
    }
    Ok(out)
}

/// Whether a refined report reaches `expected_order − slack` in `h` and, when
/// a time step was refined too, `2 − slack` in `dt`.
pub fn meets_order(r: &ResidualReport, slack: f64) -> bool {
    let h_ok = r.measured_order.is_some_and(|p| p >= r.expected_order - slack);
    let t_ok = r.measured_dt_order.is_none_or(|p| p >= 2.0 - slack);
    h_ok && t_ok
}

fn order_of(o: StencilOrder) -> f64 {
    o.order() as f64
}

fn spatial(h: f64, o: StencilOrder) -> f64 {
    h.powi(o.order() as i32)
}

/// `h_ij` and `∇a∇b h_cd` for a state.
fn h_blocks(s: &FlowState, geom: &GeometryCache) -> Result<(TensorField, TensorField)> {
    let hh = h_tensor(&s.h, &s.g)?;
    let d2h = covariant_derivative_n(&hh, &geom.conn, 2)?;
    Ok((hh, d2h))
}

#[inline]
fn i4(d: usize, i: usize, j: usize, k: usize, l: usize) -> usize {
    ((i * d + j) * d + k) * d + l
}

/// `g^pq T_qk` at one node.
fn mixed(gi: &[f64], t: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for p in 0..d {
        for k in 0..d {
            out[p * d + k] = (0..d).map(|q| gi[p * d + q] * t[q * d + k]).sum();
        }
    }
    out
}

/// `g^pa g^qb T_ab` at one node.
fn both_up(gi: &[f64], t: &[f64], d: usize) -> Vec<f64> {
    let m = mixed(gi, t, d);
    let mut out = vec![0.0; d * d];
    for p in 0..d {
        for q in 0..d {
            out[p * d + q] = (0..d).map(|b| m[p * d + b] * gi[b * d + q]).sum();
        }
    }
    out
}

/// Right side of the Riemann evolution equation from precomputed blocks.
pub fn riemann_rhs_from(
    geom: &GeometryCache,
    hh: &TensorField,
    lap_rm: &TensorField,
    d2h: &TensorField,
) -> TensorField {
    let g = geom.metric();
    let d = g.dim();
    TensorField::from_fn(*g.grid(), lower(4), |node, out| {
        let r = geom.riemann.at(node);
        let gi = g.inv_at(node);
        let ricm = mixed(gi, geom.ricci.at(node), d);
        let hm = mixed(gi, hh.at(node), d);
        let lap = lap_rm.at(node);
        let d2 = d2h.at(node);
        // rup[r][i][s][j] = g^rp g^sq R_piqj
        let mut rup = vec![0.0; d * d * d * d];
        for (c, v) in rup.iter_mut().enumerate() {
            let (rr, i, ss, j) = (c / (d * d * d), (c / (d * d)) % d, (c / d) % d, c % d);
            let mut acc = 0.0;
            for p in 0..d {
                for q in 0..d {
                    acc += gi[rr * d + p] * gi[ss * d + q] * r[i4(d, p, i, q, j)];
                }
            }
            *v = acc;
        }
        let mut b = vec![0.0; d * d * d * d];
        for (c, v) in b.iter_mut().enumerate() {
            let (i, j, k, l) = (c / (d * d * d), (c / (d * d)) % d, (c / d) % d, c % d);
            let mut acc = 0.0;
            for rr in 0..d {
                for ss in 0..d {
                    acc += rup[i4(d, rr, i, ss, j)] * r[i4(d, rr, k, ss, l)];
                }
            }
            *v = acc;
        }
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    for l in 0..d {
                        let mut v = lap[i4(d, i, j, k, l)];
                        v += 2.0
                            * (b[i4(d, i, j, k, l)] - b[i4(d, i, j, l, k)] - b[i4(d, i, l, j, k)]
                                + b[i4(d, i, k, j, l)]);
                        for p in 0..d {
                            v -= r[i4(d, p, j, k, l)] * ricm[p * d + i]
                                + r[i4(d, i, p, k, l)] * ricm[p * d + j]
                                + r[i4(d, i, j, p, l)] * ricm[p * d + k]
                                + r[i4(d, i, j, k, p)] * ricm[p * d + l];
                            v += 0.25
                                * (r[i4(d, i, j, k, p)] * hm[p * d + l]
                                    + r[i4(d, i, j, p, l)] * hm[p * d + k]);
                        }
                        v += 0.25
                            * (-d2[i4(d, i, k, j, l)] + d2[i4(d, i, l, j, k)] + d2[i4(d, j, k, i, l)]
                                - d2[i4(d, j, l, i, k)]);
                        out[i4(d, i, j, k, l)] = v;
                    }
                }
            }
        }
    })
}

/// Right side of the Ricci evolution equation from precomputed blocks.
pub fn ricci_rhs_from(
    geom: &GeometryCache,
    hh: &TensorField,
    lap_ric: &TensorField,
    d2h: &TensorField,
) -> TensorField {
    let g = geom.metric();
    let d = g.dim();
    TensorField::from_fn(*g.grid(), lower(2), |node, out| {
        let r = geom.riemann.at(node);
        let gi = g.inv_at(node);
        let ric = geom.ricci.at(node);
        let ricm = mixed(gi, ric, d);
        let ricup = both_up(gi, ric, d);
        let hm = mixed(gi, hh.at(node), d);
        let hup = both_up(gi, hh.at(node), d);
        let d2 = d2h.at(node);
        for i in 0..d {
            for k in 0..d {
                let mut v = lap_ric.at(node)[i * d + k];
                for p in 0..d {
                    for q in 0..d {
                        v += 2.0 * r[i4(d, p, i, q, k)] * ricup[p * d + q];
                        v -= 0.25 * hup[p * d + q] * r[i4(d, i, p, k, q)];
                    }
                    v -= 2.0 * ric[i * d + p] * ricm[p * d + k];
                    v += 0.25 * ric[i * d + p] * hm[p * d + k];
                }
                let mut second = 0.0;
                for a in 0..d {
                    for bb in 0..d {
                        let w = gi[a * d + bb];
                        second += w
                            * (-d2[i4(d, i, k, a, bb)] + d2[i4(d, i, a, bb, k)] + d2[i4(d, a, k, i, bb)]
                                - d2[i4(d, a, bb, i, k)]);
                    }
                }
                out[i * d + k] = v + 0.25 * second;
            }
        }
    })
}

/// Right side of the scalar curvature evolution equation from precomputed blocks.
pub fn scalar_rhs_from(geom: &GeometryCache, hh: &TensorField, lap_r: &TensorField, d2h: &TensorField) -> TensorField {
    let g = geom.metric();
    let d = g.dim();
    TensorField::from_fn(*g.grid(), Vec::new(), |node, out| {
        let gi = g.inv_at(node);
        let ric = geom.ricci.at(node);
        let ricup = both_up(gi, ric, d);
        let hup = both_up(gi, hh.at(node), d);
        let d2 = d2h.at(node);
        let ric2: f64 = ricup.iter().zip(ric).map(|(a, b)| a * b).sum();
        let h_ric: f64 = hup.iter().zip(ric).map(|(a, b)| a * b).sum();
        let (mut lap_h2, mut divdiv) = (0.0, 0.0);
        for a in 0..d {
            for b in 0..d {
                for c in 0..d {
                    for e in 0..d {
                        let v = d2[i4(d, a, b, c, e)];
                        lap_h2 += gi[a * d + b] * gi[c * d + e] * v;
                        divdiv += gi[a * d + c] * gi[b * d + e] * v;
                    }
                }
            }
        }
        out[0] = lap_r.data()[node] + 2.0 * ric2 - 0.5 * lap_h2 - 0.5 * h_ric + 0.5 * divdiv;
    })
}

/// Right side of the Riemann evolution equation for a GRF state.
pub fn riemann_rhs(s: &FlowState, geom: &GeometryCache) -> Result<TensorField> {
    let (hh, d2h) = h_blocks(s, geom)?;
    let lap = rough_laplacian(&geom.riemann, &geom.conn)?;
    Ok(riemann_rhs_from(geom, &hh, &lap, &d2h))
}

pub fn ricci_rhs(s: &FlowState, geom: &GeometryCache) -> Result<TensorField> {
    let (hh, d2h) = h_blocks(s, geom)?;
    let lap = rough_laplacian(&geom.ricci, &geom.conn)?;
    Ok(ricci_rhs_from(geom, &hh, &lap, &d2h))
}

pub fn scalar_rhs(s: &FlowState, geom: &GeometryCache) -> Result<TensorField> {
    let (hh, d2h) = h_blocks(s, geom)?;
    let lap = rough_laplacian(&geom.scalar, &geom.conn)?;
    Ok(scalar_rhs_from(geom, &hh, &lap, &d2h))
}

/// Variation of the lower Riemann tensor along `∂g = v`:
/// `−½(∇i∇k v_lj − ∇i∇l v_jk − ∇j∇k v_il + ∇j∇l v_ik) + ½ g^pq (R_ijkp v_ql + R_ijpl v_qk)`.
pub fn first_variation_rhs(geom: &GeometryCache, v: &TensorField) -> Result<TensorField> {
    let g = geom.metric();
    if v.rank() != 2 || !v.is_covariant() {
        return arg("variation must be a covariant 2-tensor");
    }
    let d = g.dim();
    let d2v = covariant_derivative_n(v, &geom.conn, 2)?;
    Ok(TensorField::from_fn(*g.grid(), lower(4), |node, out| {
        let r = geom.riemann.at(node);
        let vm = mixed(g.inv_at(node), v.at(node), d);
        let dd = d2v.at(node);
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    for l in 0..d {
                        let mut val = -0.5
                            * (dd[i4(d, i, k, l, j)] - dd[i4(d, i, l, j, k)] - dd[i4(d, j, k, i, l)]
                                + dd[i4(d, j, l, i, k)]);
                        for p in 0..d {
                            val += 0.5
                                * (r[i4(d, i, j, k, p)] * vm[p * d + l]
                                    + r[i4(d, i, j, p, l)] * vm[p * d + k]);
                        }
                        out[i4(d, i, j, k, l)] = val;
                    }
                }
            }
        }
    }))
}

/// Which curvature quantity a trajectory residual refers to.
fn evolved(geom: &GeometryCache, q: Quantity) -> &TensorField {
    match q {
        Quantity::RiemannEvolution => &geom.riemann,
        Quantity::RicciEvolution => &geom.ricci,
        _ => &geom.scalar,
    }
}

fn tolerance_prefactor(q: Quantity) -> f64 {
    match q {
        Quantity::RiemannEvolution => tol::C_RIEMANN,
        Quantity::RicciEvolution => tol::C_RICCI,
        Quantity::ScalarEvolution => tol::C_SCALAR,
        Quantity::Commutator => tol::C_COMMUTATOR,
        Quantity::Bochner => tol::C_BOCHNER,
        Quantity::RgrfEqualsGrf => tol::C_RGRF_GRF,
        Quantity::FirstVariation => tol::C_FIRST_VARIATION,
        Quantity::DeturckConsistency => tol::C_DETURCK,
        Quantity::ExtendedF | Quantity::ExtendedH => tol::C_EXTENDED,
        Quantity::Closedness | Quantity::TraceIdentity => 1.0,
    }
}

fn uniform_dt(traj: &Trajectory) -> Result<f64> {
    if traj.snapshots.len() < 3 {
        return arg("residual needs at least three snapshots");
    }
    traj.uniform_spacing()
        .ok_or_else(|| Error::Argument("snapshots are not uniformly spaced in time".into()))
}

/// Compare centered time differences of a curvature quantity with the
/// assembled right side at every interior snapshot.
pub fn evolution_residual(traj: &Trajectory, which: Quantity) -> Result<ResidualReport> {
    if !matches!(
        which,
        Quantity::RiemannEvolution | Quantity::RicciEvolution | Quantity::ScalarEvolution
    ) {
        return arg(format!("{} is not an evolution quantity", which.name()));
    }
    let dt = uniform_dt(traj)?;
    let order = traj.stencil_order;
    let h = traj.snapshots[0].grid().spacing();
    let tolerance = tolerance_prefactor(which) * (spatial(h, order) + dt * dt);
    let geoms: Vec<GeometryCache> = traj
        .snapshots
        .iter()
        .map(|s| curvature(&s.g, order))
        .collect::<Result<_>>()?;
    let (mut worst, mut reference) = (0.0_f64, 0.0_f64);
    for m in 1..traj.snapshots.len() - 1 {
        let mut lhs = evolved(&geoms[m + 1], which).sub(evolved(&geoms[m - 1], which))?;
        lhs = lhs.scaled(0.5 / dt);
        let s = &traj.snapshots[m];
        let rhs = match which {
            Quantity::RiemannEvolution => riemann_rhs(s, &geoms[m])?,
            Quantity::RicciEvolution => ricci_rhs(s, &geoms[m])?,
            _ => scalar_rhs(s, &geoms[m])?,
        };
        worst = worst.max(lhs.max_abs_diff(&rhs)?);
        reference = reference.max(rhs.sup_norm());
    }
    let report = ResidualReport::new(which, worst, reference, order_of(order), tolerance, h, Some(dt));
    // the equations are derived for the ungauged metric equation without Maxwell terms
    Ok(match traj.variant {
        Variant::Grf | Variant::Rgrf => report,
        Variant::Deturck | Variant::Extended => report.not_applicable(),
    })
}

/// Trace of the Riemann right side (with the `∂t g⁻¹` correction) against the
/// Ricci right side, both assembled from the same discrete blocks. The
/// residual is relative, nodewise, and must vanish to round-off.
pub fn trace_identity(s: &FlowState, order: StencilOrder) -> Result<ResidualReport> {
    let geom = curvature(&s.g, order)?;
    let (hh, d2h) = h_blocks(s, &geom)?;
    let lap_rm = rough_laplacian(&geom.riemann, &geom.conn)?;
    let rm_rhs = riemann_rhs_from(&geom, &hh, &lap_rm, &d2h);
    let v = metric_rate(&geom, &s.h)?;
    let g = &s.g;
    let d = g.dim();
    let trace_jl = |t: &TensorField| {
        TensorField::from_fn(*g.grid(), lower(2), |node, out| {
            let gi = g.inv_at(node);
            let x = t.at(node);
            for i in 0..d {
                for k in 0..d {
                    let mut acc = 0.0;
                    for j in 0..d {
                        for l in 0..d {
                            acc += gi[j * d + l] * x[i4(d, i, j, k, l)];
                        }
                    }
                    out[i * d + k] = acc;
                }
            }
        })
    };
    let lap_ric = trace_jl(&lap_rm);
    let direct = ricci_rhs_from(&geom, &hh, &lap_ric, &d2h);
    let traced_main = trace_jl(&rm_rhs);
    let traced = TensorField::from_fn(*g.grid(), lower(2), |node, out| {
        let gi = g.inv_at(node);
        let vup = both_up(gi, v.at(node), d);
        let r = geom.riemann.at(node);
        for i in 0..d {
            for k in 0..d {
                let mut acc = traced_main.at(node)[i * d + k];
                for j in 0..d {
                    for l in 0..d {
                        acc -= vup[j * d + l] * r[i4(d, i, j, k, l)];
                    }
                }
                out[i * d + k] = acc;
            }
        }
    });
    let scale = direct.sup_norm().max(f64::MIN_POSITIVE);
    let mut worst = 0.0_f64;
    for node in 0..g.grid().len() {
        let a = direct.at(node);
        let b = traced.at(node);
        let local = a.iter().chain(b).fold(0.0_f64, |m, x| m.max(x.abs())).max(1e-3 * scale);
        let diff = a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
        worst = worst.max(diff / local);
    }
    let h = g.grid().spacing();
    Ok(ResidualReport::new(Quantity::TraceIdentity, worst, scale, 0.0, tol::ALGEBRAIC, h, None))
}

/// `∇(ΔA) − Δ(∇A)` against the explicit curvature expression
/// `g^bc ([∇a,∇b]∇A)_{c…} + g^bc ∇b([∇a,∇c]A)`, the last term expanded by
/// the Leibniz rule into `∇Rm∗A + Rm∗∇A`.
pub fn commutator_residual(g: &MetricField, a: &TensorField, order: StencilOrder) -> Result<ResidualReport> {
    if a.rank() > 2 || !a.is_covariant() {
        return arg("commutator check supports covariant tensors of rank ≤ 2");
    }
    let geom = curvature(g, order)?;
    let conn = &geom.conn;
    let d = g.dim();
    let rank = a.rank();
    let na = covariant_derivative(a, conn)?;
    let lhs = covariant_derivative(&rough_laplacian(a, conn)?, conn)?.sub(&rough_laplacian(&na, conn)?)?;
    // g^bc C(∇A)_{a b c I}
    let c_na = curvature_action(&na, &geom.riemann, g)?;
    let drm = covariant_derivative(&geom.riemann, conn)?;
    let w = a.width();
    let rhs = TensorField::from_fn(*g.grid(), lower(rank + 1), |node, out| {
        let gi = g.inv_at(node);
        let c = c_na.at(node);
        let r = geom.riemann.at(node);
        let dr = drm.at(node);
        let an = a.at(node);
        let dan = na.at(node);
        let w1 = w * d;
        let mut idx = [0usize; 3];
        for (f, o) in out.iter_mut().enumerate() {
            // f = (x, I)
            let x = f / w;
            let inner = f % w;
            let mut acc = 0.0;
            for b in 0..d {
                for cc in 0..d {
                    let gbc = gi[b * d + cc];
                    if gbc == 0.0 {
                        continue;
                    }
                    // C(∇A)_{x b cc I}
                    acc += gbc * c[(x * d + b) * w1 + cc * w + inner];
                    // −Σ_t g^mk [(∇_b Rm)_{x cc k i_t} A_{..m..} + R_{x cc k i_t} (∇_b A)_{..m..}]
                    for t in 0..rank {
                        let mut rest = inner;
                        for s in (0..rank).rev() {
                            idx[s] = rest % d;
                            rest /= d;
                        }
                        let it = idx[t];
                        for m in 0..d {
                            let mut k_sum_dr = 0.0;
                            let mut k_sum_r = 0.0;
                            for k in 0..d {
                                let gmk = gi[m * d + k];
                                k_sum_dr += gmk * dr[b * d * d * d * d + i4(d, x, cc, k, it)];
                                k_sum_r += gmk * r[i4(d, x, cc, k, it)];
                            }
                            idx[t] = m;
                            let off = idx[..rank].iter().fold(0, |acc2, &v| acc2 * d + v);
                            idx[t] = it;
                            acc -= gbc * (k_sum_dr * an[off] + k_sum_r * dan[b * w + off]);
                        }
                    }
                }
            }
            *o = acc;
        }
    });
    let h = g.grid().spacing();
    let tolerance = tol::C_COMMUTATOR * spatial(h, order);
    Ok(ResidualReport::new(
        Quantity::Commutator,
        lhs.max_abs_diff(&rhs)?,
        rhs.sup_norm().max(lhs.sup_norm()),
        order_of(order),
        tolerance,
        h,
        None,
    ))
}

/// Centered difference of `Rm(g + εv)` in `ε`, Richardson-extrapolated over
/// `ε` and `ε/2`, against the variation formula.
pub fn first_variation_residual(
    g: &MetricField,
    v: &TensorField,
    eps: f64,
    order: StencilOrder,
) -> Result<ResidualReport> {
    if v.symmetry_defect(0, 1)? > 1e-12 * v.sup_norm().max(1.0) {
        return arg("variation must be symmetric");
    }
    if !(eps > 0.0) {
        return arg("ε must be positive");
    }
    let rm_at = |e: f64| -> Result<TensorField> {
        let mut val = g.value().clone();
        val.axpy(e, v)?;
        let m = MetricField::new(val).map_err(|err| match err {
            Error::Degenerate { node, reason } => Error::Argument(format!(
                "g + {e}·v is not positive definite at node {node}: {reason}"
            )),
            other => other,
        })?;
        Ok(curvature(&m, order)?.riemann)
    };
    let centered = |e: f64| -> Result<TensorField> { Ok(rm_at(e)?.sub(&rm_at(-e)?)?.scaled(0.5 / e)) };
    let d1 = centered(eps)?;
    let d2 = centered(0.5 * eps)?;
    let mut extrapolated = d2.scaled(4.0 / 3.0);
    extrapolated.axpy(-1.0 / 3.0, &d1)?;
    let geom = curvature(g, order)?;
    let rhs = first_variation_rhs(&geom, v)?;
    let h = g.grid().spacing();
    let tolerance = tol::C_FIRST_VARIATION * (spatial(h, order) + eps.powi(4));
    Ok(ResidualReport::new(
        Quantity::FirstVariation,
        extrapolated.max_abs_diff(&rhs)?,
        rhs.sup_norm(),
        order_of(order),
        tolerance,
        h,
        None,
    ))
}

/// Largest `sup|dH|` over all snapshots. Judged only for runs whose
/// equations preserve closedness by construction.
pub fn closedness_check(traj: &Trajectory) -> Result<ResidualReport> {
    let mut worst = 0.0_f64;
    for s in &traj.snapshots {
        worst = worst.max(closedness_defect(&s.h, traj.stencil_order)?);
    }
    let h = traj.snapshots[0].grid().spacing();
    let reference = traj.snapshots.iter().map(|s| s.h.sup_norm()).fold(0.0, f64::max);
    let report = ResidualReport::new(Quantity::Closedness, worst, reference, 0.0, tol::CLOSEDNESS, h, None);
    Ok(match traj.variant {
        Variant::Rgrf | Variant::Extended => report,
        Variant::Grf | Variant::Deturck => report.not_applicable(),
    })
}

/// `−dd*H` against `□H` on one state with closed `H`.
pub fn rgrf_grf_agreement(s: &FlowState, order: StencilOrder) -> Result<ResidualReport> {
    let refined = rgrf_rhs(s, order)?;
    let full = grf_rhs(s, order)?;
    let h = s.grid().spacing();
    Ok(ResidualReport::new(
        Quantity::RgrfEqualsGrf,
        refined.h.max_abs_diff(&full.h)?,
        full.h.sup_norm(),
        order_of(order),
        tol::C_RGRF_GRF * spatial(h, order),
        h,
        None,
    ))
}

/// Hodge minus rough Laplacian against the Weitzenböck curvature term.
pub fn bochner_residual(omega: &TensorField, g: &MetricField, order: StencilOrder) -> Result<ResidualReport> {
    let geom = curvature(g, order)?;
    let lhs = hodge_laplacian(omega, &geom.conn)?.sub(&rough_laplacian(omega, &geom.conn)?)?;
    let rhs = weitzenbock_term(omega, &geom)?;
    let h = g.grid().spacing();
    Ok(ResidualReport::new(
        Quantity::Bochner,
        lhs.max_abs_diff(&rhs)?,
        rhs.sup_norm(),
        order_of(order),
        tol::C_BOCHNER * spatial(h, order),
        h,
        None,
    ))
}

/// Expanded quasilinear gauge-fixed metric rate against
/// `−2Ric + ½h + ∇V + ∇V`.
pub fn deturck_consistency(s: &FlowState, background: &MetricField, order: StencilOrder) -> Result<ResidualReport> {
    let bg = curvature(background, order)?;
    let geom = curvature(&s.g, order)?;
    let mut assembled = metric_rate(&geom, &s.h)?;
    assembled.axpy(1.0, &deturck_correction(&geom.conn, &bg.conn)?)?;
    let expanded = deturck_expanded_metric_rate(s, &bg)?;
    let h = s.grid().spacing();
    Ok(ResidualReport::new(
        Quantity::DeturckConsistency,
        assembled.max_abs_diff(&expanded)?,
        assembled.sup_norm(),
        order_of(order),
        tol::C_DETURCK * spatial(h, order),
        h,
        None,
    ))
}

/// Centered time differences of `F = dA` (or `H = dB`) along an extended run
/// against `ΔF + W(F)`, the rough Laplacian plus Weitzenböck term.
pub fn extended_residual(traj: &Trajectory, which: Quantity) -> Result<ResidualReport> {
    if !matches!(which, Quantity::ExtendedF | Quantity::ExtendedH) {
        return arg(format!("{} is not an extended-mode quantity", which.name()));
    }
    if traj.variant != Variant::Extended {
        return arg("extended residual needs an extended trajectory");
    }
    let dt = uniform_dt(traj)?;
    let order = traj.stencil_order;
    let field = |s: &FlowState| -> Result<TensorField> {
        match which {
            Quantity::ExtendedF => Ok(s.field_strength(order)?.expect("extended state")),
            _ => Ok(s.h.clone()),
        }
    };
    let (mut worst, mut reference) = (0.0_f64, 0.0_f64);
    for m in 1..traj.snapshots.len() - 1 {
        let lhs = field(&traj.snapshots[m + 1])?.sub(&field(&traj.snapshots[m - 1])?)?.scaled(0.5 / dt);
        let s = &traj.snapshots[m];
        let geom = curvature(&s.g, order)?;
        let f = field(s)?;
        let mut rhs = rough_laplacian(&f, &geom.conn)?;
        rhs.axpy(1.0, &weitzenbock_term(&f, &geom)?)?;
        worst = worst.max(lhs.max_abs_diff(&rhs)?);
        reference = reference.max(rhs.sup_norm());
    }
    let h = traj.snapshots[0].grid().spacing();
    let tolerance = tol::C_EXTENDED * (spatial(h, order) + dt * dt);
    Ok(ResidualReport::new(which, worst, reference, order_of(order), tolerance, h, Some(dt)))
}

/// Conformal factor `a(t) = (a0³ + 3k²t)^{1/3}` of the constant-form T³ solution.
pub fn exact_t3_solution(a0: f64, k: f64, t: f64) -> f64 {
    (a0.powi(3) + 3.0 * k * k * t).cbrt()
}

/// `|H|²` along the constant-form T³ solution.
pub fn exact_t3_form_norm_sq(a0: f64, k: f64, t: f64) -> f64 {
    6.0 * k * k / (a0.powi(3) + 3.0 * k * k * t)
}

/// Scalar curvature of `e^{2u} δ` on T²: `R = −2 e^{−2u} Δu`.
pub fn conformal_oracle(grid: &Grid, u: &[f64]) -> Result<Vec<f64>> {
    if grid.dim() != 2 {
        return arg("conformal oracle needs dim = 2");
    }
    let o = StencilOrder::Fourth;
    let mut lap = vec![0.0; u.len()];
    for axis in 0..2 {
        let d1 = grid.partial(u, 1, axis, o)?;
        let d2 = grid.partial(&d1, 1, axis, o)?;
        lap.iter_mut().zip(&d2).for_each(|(l, v)| *l += v);
    }
    Ok(u.iter().zip(&lap).map(|(u, l)| -2.0 * (-2.0 * u).exp() * l).collect())
}

/// Exterior derivative of a state's `H` when it has one below top degree.
pub fn form_derivative(s: &FlowState, order: StencilOrder) -> Result<Option<TensorField>> {
    if s.h.rank() >= s.h.dim() {
        return Ok(None);
    }
    exterior_derivative(&s.h, order).map(Some)
}

/// Recomputes the connection of `g` and checks `∇g = 0` to the given bound.
pub fn metric_compatibility(g: &MetricField, order: StencilOrder) -> Result<f64> {
    let conn = Connection::new(g.clone(), order)?;
    Ok(covariant_derivative(g.value(), &conn)?.sup_norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{run, DtPolicy, FlowConfig};
    use crate::geometry::tests::{wavy_form, wavy_metric};
    use crate::presets::{build, Preset, PresetSpec};

    const O4: StencilOrder = StencilOrder::Fourth;

    fn preset(p: Preset, dim: usize, n: usize) -> FlowState {
        build(&PresetSpec::new(p, Grid::new(dim, n).unwrap()).unwrap(), O4).unwrap()
    }

    fn perturbed(dim: usize, n: usize, form: f64) -> FlowState {
        preset(Preset::PerturbedMetric { epsilon: 0.1, seed: 7, form_amplitude: form }, dim, n)
    }

    fn grf_run(s: &FlowState, dt: f64, steps: usize) -> Trajectory {
        run(s, &FlowConfig::new(Variant::Grf, DtPolicy::Fixed(dt), dt * steps as f64)).unwrap()
    }

    fn symmetric_variation(grid: Grid) -> TensorField {
        let d = grid.dim();
        TensorField::from_fn(grid, lower(2), |node, o| {
            let x = grid.position(node);
            for i in 0..d {
                for j in i..d {
                    let v = ((i + j) as f64 + x[j % d] + 2.0 * x[i]).cos() * 0.5;
                    o[i * d + j] = v;
                    o[j * d + i] = v;
                }
            }
        })
    }

    /// Symmetric field with wavenumbers at most 2, the range the commutator
    /// prefactor was calibrated on.
    fn gentle_symmetric(grid: Grid) -> TensorField {
        let d = grid.dim();
        TensorField::from_fn(grid, lower(2), |node, o| {
            let x = grid.position(node);
            for i in 0..d {
                for j in 0..d {
                    o[i * d + j] = 0.5 * ((i + j) as f64 + x[i] + x[j]).cos();
                }
            }
        })
    }

    #[test]
    fn t3_solution_satisfies_its_ode() {
        let (a0, k) = (1.3, 0.7);
        assert_eq!(exact_t3_solution(a0, k, 0.0), a0);
        for &t in &[0.0, 0.4, 2.0] {
            let e = 1e-5;
            let da = (exact_t3_solution(a0, k, t + e) - exact_t3_solution(a0, k, t - e)) / (2.0 * e);
            let a = exact_t3_solution(a0, k, t);
            // ∂t a = ½ h_00 / δ_00 with h = 2k²a⁻² δ
            assert!((da - k * k / (a * a)).abs() < 1e-8);
            assert!((exact_t3_form_norm_sq(a0, k, t) - 6.0 * k * k / a.powi(3)).abs() < 1e-12);
        }
    }

    #[test]
    fn t3_form_norm_matches_discrete_state() {
        let s = preset(Preset::T3ConstantForm { a0: 1.7, k: 0.9 }, 3, 8);
        let hh = h_tensor(&s.h, &s.g).unwrap();
        let trace: f64 = (0..3).map(|i| hh.at(0)[i * 3 + i] * s.g.inv_at(0)[i * 3 + i]).sum();
        assert!((trace - exact_t3_form_norm_sq(1.7, 0.9, 0.0)).abs() < 1e-12);
    }

    fn conformal(n: usize) -> (Vec<f64>, MetricField) {
        let grid = Grid::new(2, n).unwrap();
        let u = grid.sample(|x| 0.1 * (x[0] + x[1]).sin());
        let g = MetricField::conformal(grid, &u).unwrap();
        (u, g)
    }

    #[test]
    fn conformal_oracle_closed_form_and_convergence() {
        let grid = Grid::new(2, 64).unwrap();
        let u = grid.sample(|x| 0.1 * x[0].sin());
        let node = grid.node_at(&[16, 0]);
        let r = conformal_oracle(&grid, &u).unwrap()[node];
        assert!((r - 0.2 * (-0.2f64).exp()).abs() < 1e-5, "{r}");
        assert!(conformal_oracle(&grid, &vec![0.0; grid.len()]).unwrap().iter().all(|&v| v == 0.0));
        let mut diffs = Vec::new();
        for n in [32, 64] {
            let (u, g) = conformal(n);
            let r = curvature(&g, O4).unwrap().scalar;
            let oracle = conformal_oracle(g.grid(), &u).unwrap();
            diffs.push(r.data().iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        }
        assert!((diffs[0] / diffs[1]).log2() > 3.9, "{diffs:?}");
        assert!(conformal_oracle(&Grid::new(3, 8).unwrap(), &vec![0.0; 512]).is_err());
    }

    #[test]
    fn trace_identity_holds_to_round_off() {
        for s in [perturbed(3, 8, 0.3), perturbed(2, 12, 0.0), perturbed(4, 8, 0.3)] {
            let r = trace_identity(&s, O4).unwrap();
            assert_eq!(r.verdict, Verdict::Pass, "{r:?}");
            assert!(r.sup_residual < 1e-11);
        }
    }

    #[test]
    fn first_variation_along_metric_gives_riemann() {
        let g = wavy_metric(Grid::new(3, 16).unwrap(), 0.3);
        let geom = curvature(&g, O4).unwrap();
        let var = first_variation_rhs(&geom, g.value()).unwrap();
        let diff = var.max_abs_diff(&geom.riemann).unwrap();
        assert!(diff < 1e-3 * geom.riemann.sup_norm(), "diff {diff}");
        let zero = first_variation_rhs(&geom, &g.value().scaled(0.0)).unwrap();
        assert_eq!(zero.sup_norm(), 0.0);
    }

    #[test]
    fn first_variation_residual_converges() {
        let mut reports = Vec::new();
        for n in [32, 64] {
            let (_, g) = conformal(n);
            let v = symmetric_variation(*g.grid());
            reports.push(first_variation_residual(&g, &v, 1e-2, O4).unwrap());
        }
        let r = with_refinement(&reports[0], &reports[1]).unwrap();
        assert!(r.measured_order.unwrap() > 3.8, "{r:?}");
        assert_eq!(r.verdict, Verdict::Pass, "{r:?}");
    }

    #[test]
    fn first_variation_rejects_indefinite_perturbation() {
        let g = MetricField::flat(Grid::new(2, 8).unwrap());
        let v = g.value().scaled(-2.0);
        match first_variation_residual(&g, &v, 1.0, O4) {
            Err(Error::Argument(m)) => assert!(m.contains("positive definite"), "{m}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn commutator_residual_converges() {
        for p in [1, 2] {
            let mut reports = Vec::new();
            for n in [32, 64] {
                let (_, g) = conformal(n);
                let a = if p == 1 { wavy_form(*g.grid(), 1, 0.5) } else { gentle_symmetric(*g.grid()) };
                reports.push(commutator_residual(&g, &a, O4).unwrap());
            }
            let r = with_refinement(&reports[0], &reports[1]).unwrap();
            assert!(r.measured_order.unwrap() > 3.8, "rank {p}: {r:?}");
            assert_eq!(r.verdict, Verdict::Pass, "rank {p}: {r:?}");
            assert!(r.reference > 100.0 * r.sup_residual, "rank {p}: {r:?}");
        }
    }

    #[test]
    fn commutator_vanishes_on_flat_metric_and_for_the_metric() {
        let g = MetricField::flat(Grid::new(3, 12).unwrap());
        let a = wavy_form(*g.grid(), 1, 0.5);
        let r = commutator_residual(&g, &a, O4).unwrap();
        assert!(r.sup_residual <= 1e-12, "{r:?}");
        let (_, g) = conformal(32);
        let r = commutator_residual(&g, g.value(), O4).unwrap();
        assert_eq!(r.verdict, Verdict::Pass, "{r:?}");
    }

    #[test]
    fn evolution_residuals_converge_on_conformal_torus() {
        let spec = |n| preset(Preset::ConformalT2 { epsilon: 0.1, wavevector: [1, 1] }, 2, n);
        for q in [Quantity::RiemannEvolution, Quantity::RicciEvolution, Quantity::ScalarEvolution] {
            let mut reports = Vec::new();
            for (n, steps) in [(16, 4), (32, 16)] {
                let h = Grid::new(2, n).unwrap().spacing();
                let traj = grf_run(&spec(n), 0.05 * h * h, steps);
                reports.push(evolution_residual(&traj, q).unwrap());
            }
            let r = with_refinement(&reports[0], &reports[1]).unwrap();
            assert!(r.measured_order.unwrap() > 3.5, "{r:?}");
            assert!(r.measured_dt_order.unwrap() > 1.75, "{r:?}");
            assert_eq!(r.verdict, Verdict::Pass, "{r:?}");
        }
    }

    #[test]
    fn evolution_residuals_with_form_in_three_dimensions() {
        let s = perturbed(3, 12, 0.3);
        let h = s.grid().spacing();
        let traj = grf_run(&s, 0.02 * h * h, 2);
        for q in [Quantity::RiemannEvolution, Quantity::RicciEvolution, Quantity::ScalarEvolution] {
            let r = evolution_residual(&traj, q).unwrap();
            assert_eq!(r.verdict, Verdict::Pass, "{r:?}");
        }
    }

    #[test]
    fn printed_scalar_coefficient_is_inconsistent() {
        // +½⟨h, Ric⟩ in place of −½⟨h, Ric⟩ leaves a residual of ⟨h, Ric⟩
        let grid = Grid::new(3, 16).unwrap();
        let u = grid.sample(|x| 0.3 * (x[0] + x[1]).sin());
        let b = TensorField::from_fn(grid, lower(2), |node, o| {
            let v = grid.position(node)[1].sin();
            o[2] = v;
            o[6] = -v;
        });
        let hf = exterior_derivative(&b, O4).unwrap();
        let s = FlowState::new(0.0, MetricField::conformal(grid, &u).unwrap(), hf).unwrap();
        let h = grid.spacing();
        let dt = 0.01 * h * h;
        let traj = grf_run(&s, dt, 2);
        let mid = &traj.snapshots[1];
        let geom = curvature(&mid.g, O4).unwrap();
        let scalar = |k: usize| curvature(&traj.snapshots[k].g, O4).unwrap().scalar;
        let lhs = scalar(2).sub(&scalar(0)).unwrap().scaled(0.5 / dt);
        let rhs = scalar_rhs(mid, &geom).unwrap();
        let hh = h_tensor(&mid.h, &mid.g).unwrap();
        let (mut corrected, mut printed) = (0.0_f64, 0.0_f64);
        for node in 0..mid.grid().len() {
            let up = both_up(mid.g.inv_at(node), hh.at(node), 3);
            let h_ric: f64 = up.iter().zip(geom.ricci.at(node)).map(|(a, b)| a * b).sum();
            let e = lhs.data()[node] - rhs.data()[node];
            corrected = corrected.max(e.abs());
            printed = printed.max((e - h_ric).abs());
        }
        assert!(printed > 20.0 * corrected, "printed {printed} vs corrected {corrected}");
    }

    #[test]
    fn evolution_residual_rejects_nonuniform_snapshots() {
        let s = perturbed(2, 8, 0.0);
        let mut traj = grf_run(&s, 1e-4, 3);
        traj.snapshots[2].time += 3e-5;
        assert!(matches!(evolution_residual(&traj, Quantity::ScalarEvolution), Err(Error::Argument(_))));
        traj.snapshots.truncate(2);
        assert!(evolution_residual(&traj, Quantity::ScalarEvolution).is_err());
        assert!(evolution_residual(&grf_run(&s, 1e-4, 3), Quantity::Commutator).is_err());
    }

    #[test]
    fn gauged_and_extended_runs_are_not_judged() {
        let s = preset(Preset::ExtendedMaxwell { epsilon: 0.1 }, 3, 8);
        let traj = run(&s, &FlowConfig::new(Variant::Extended, DtPolicy::Fixed(1e-3), 3e-3)).unwrap();
        let r = evolution_residual(&traj, Quantity::ScalarEvolution).unwrap();
        assert_eq!(r.verdict, Verdict::NotApplicable);
        assert!(r.verdict.passed());
    }

    #[test]
    fn closedness_is_judged_for_refined_runs_only() {
        let s = perturbed(4, 8, 0.3);
        let cfg = FlowConfig::new(Variant::Rgrf, DtPolicy::Fixed(1e-4), 2e-4);
        let r = closedness_check(&run(&s, &cfg).unwrap()).unwrap();
        assert_eq!(r.verdict, Verdict::Pass, "{r:?}");
        assert!(r.reference > 0.0);
        let g = closedness_check(&grf_run(&s, 1e-4, 1)).unwrap();
        assert_eq!(g.verdict, Verdict::NotApplicable);
    }

    #[test]
    fn refined_and_full_form_rates_agree() {
        let r = rgrf_grf_agreement(&perturbed(3, 10, 0.3), O4).unwrap();
        assert_eq!(r.verdict, Verdict::Pass, "{r:?}");
        assert!(r.sup_residual < 1e-10 * r.reference.max(1.0));
    }

    #[test]
    fn bochner_and_deturck_reports_pass() {
        let g = wavy_metric(Grid::new(3, 16).unwrap(), 0.3);
        let omega = wavy_form(*g.grid(), 2, 0.5);
        let b = bochner_residual(&omega, &g, O4).unwrap();
        assert_eq!(b.verdict, Verdict::Pass, "{b:?}");
        let s = perturbed(3, 16, 0.2);
        let bg = wavy_metric(*s.grid(), 0.2);
        let r = deturck_consistency(&s, &bg, O4).unwrap();
        assert_eq!(r.verdict, Verdict::Pass, "{r:?}");
    }

    #[test]
    fn extended_residuals_pass() {
        let mut reports = Vec::new();
        for (n, steps) in [(12, 4), (24, 16)] {
            let s = preset(Preset::ExtendedMaxwell { epsilon: 0.1 }, 3, n);
            let h = s.grid().spacing();
            let dt = 0.05 * h * h;
            let traj = run(&s, &FlowConfig::new(Variant::Extended, DtPolicy::Fixed(dt), dt * steps as f64)).unwrap();
            reports.push((extended_residual(&traj, Quantity::ExtendedF).unwrap(), extended_residual(&traj, Quantity::ExtendedH).unwrap()));
        }
        for r in [&reports[1].0, &reports[1].1] {
            assert_eq!(r.verdict, Verdict::Pass, "{r:?}");
        }
        let f = with_refinement(&reports[0].0, &reports[1].0).unwrap();
        assert_eq!(f.verdict, Verdict::Pass, "{f:?}");
    }

    #[test]
    fn refinement_requires_matching_reports() {
        let a = ResidualReport::new(Quantity::Bochner, 1.0, 1.0, 4.0, 10.0, 0.2, None);
        let b = ResidualReport::new(Quantity::Commutator, 0.1, 1.0, 4.0, 10.0, 0.1, None);
        assert!(with_refinement(&a, &b).is_err());
        assert!(with_refinement(&a, &a).is_err());
        let fine = ResidualReport::new(Quantity::Bochner, 1.0 / 16.0, 1.0, 4.0, 10.0, 0.1, None);
        let r = with_refinement(&a, &fine).unwrap();
        assert!((r.measured_order.unwrap() - 4.0).abs() < 1e-12);
        assert!(meets_order(&r, 0.1));
        assert!(!meets_order(&fine, 0.1));
        assert_eq!(r.verdict, Verdict::Pass);
    }

    #[test]
    fn quantity_names_round_trip() {
        for q in ALL_QUANTITIES {
            assert_eq!(Quantity::parse(q.name()), Some(q));
            assert_eq!(serde_json::to_string(&q).unwrap(), format!("\"{}\"", q.name()));
        }
    }
}
