//! Orchestration behind the command-line subcommands: run a configuration,
//! reload its artifacts, and evaluate the configured checks and monitors.

use std::fs;

use crate::error::{Error, Result};
use crate::estimates::{bbs_monitor, equivalence_check, inequality_constants, max_principle_check, EstimateReport};
use crate::flow::{metric_rate, run, Trajectory, Variant};
use crate::geometry::curvature;
use crate::io::config::{Background, RunConfig};
use crate::io::metrics::{emit_csv, emit_metrics, read_metrics, step_records, MetricRecord};
use crate::io::snapshot::{list_snapshots, read_snapshot, snapshot_path, write_snapshot};
use crate::tensor::MetricField;
use crate::verify::{
    bochner_residual, closedness_check, commutator_residual, deturck_consistency, evolution_residual,
    extended_residual, first_variation_residual, rgrf_grf_agreement, trace_identity, Quantity, ResidualReport,
};

/// Perturbation size for the first-variation check on stored states.
const FIRST_VARIATION_EPS: f64 = 0.02;

/// Integrate the configured run and write snapshots, NDJSON and CSV metrics.
pub fn execute_run(cfg: &RunConfig) -> Result<Trajectory> {
    let initial = cfg.initial_state()?;
    let flow = cfg.flow_config(&initial)?;
    let traj = run(&initial, &flow)?;
    let dir = &cfg.output.snapshots;
    if dir.exists() {
        for old in list_snapshots(dir)? {
            fs::remove_file(old)?;
        }
    }
    for (i, s) in traj.snapshots.iter().enumerate() {
        write_snapshot(s, traj.variant, traj.stencil_order, &snapshot_path(dir, i))?;
    }
    emit_metrics(&traj.diagnostics, &[], &[], &cfg.output.metrics)?;
    emit_csv(&traj.diagnostics, &cfg.output.csv)?;
    Ok(traj)
}

/// Rebuild a trajectory from stored snapshots and step records.
pub fn load_run(cfg: &RunConfig) -> Result<Trajectory> {
    let paths = list_snapshots(&cfg.output.snapshots)?;
    if paths.is_empty() {
        return Err(Error::Argument(format!("no snapshots in {}", cfg.output.snapshots.display())));
    }
    let mut snapshots = Vec::with_capacity(paths.len());
    let mut header = None;
    for p in &paths {
        let snap = read_snapshot(p)?;
        match header {
            None => header = Some((snap.variant, snap.stencil_order)),
            Some(h) if h != (snap.variant, snap.stencil_order) => {
                return Err(Error::Format(format!("{} belongs to a different run", p.display())));
            }
            _ => {}
        }
        snapshots.push(snap.state);
    }
    let (variant, stencil_order) = header.expect("at least one snapshot");
    let diagnostics = step_records(&read_metrics(&cfg.output.metrics)?);
    Ok(Trajectory { variant, stencil_order, snapshots, diagnostics, failure: None })
}

fn background(cfg: &RunConfig, traj: &Trajectory) -> MetricField {
    match cfg.flow.background {
        Some(Background::Initial) => traj.snapshots[0].g.clone(),
        _ => MetricField::flat(cfg.preset.grid),
    }
}

/// Evaluate every enabled residual check on a stored trajectory.
pub fn verify_suite(cfg: &RunConfig, traj: &Trajectory) -> Result<Vec<ResidualReport>> {
    let order = traj.stencil_order;
    let last = traj.last();
    let mut out = Vec::with_capacity(cfg.verify.len());
    for &q in &cfg.verify {
        let report = match q {
            Quantity::RiemannEvolution | Quantity::RicciEvolution | Quantity::ScalarEvolution => {
                evolution_residual(traj, q)?
            }
            Quantity::ExtendedF | Quantity::ExtendedH => extended_residual(traj, q)?,
            Quantity::Closedness => closedness_check(traj)?,
            Quantity::TraceIdentity => trace_identity(last, order)?,
            Quantity::RgrfEqualsGrf => rgrf_grf_agreement(last, order)?,
            Quantity::Bochner => bochner_residual(&last.h, &last.g, order)?,
            Quantity::DeturckConsistency => deturck_consistency(last, &background(cfg, traj), order)?,
            Quantity::Commutator => {
                let geom = curvature(&last.g, order)?;
                commutator_residual(&last.g, &geom.ricci, order)?
            }
            Quantity::FirstVariation => {
                let geom = curvature(&last.g, order)?;
                let v = metric_rate(&geom, &last.h)?;
                let scale = v.sup_norm();
                let v = if scale > 1.0 { v.scaled(1.0 / scale) } else { v };
                first_variation_residual(&last.g, &v, FIRST_VARIATION_EPS, order)?
            }
        };
        out.push(report);
    }
    Ok(out)
}

/// Evaluate every enabled estimate monitor on a stored trajectory.
pub fn monitor_suite(cfg: &RunConfig, traj: &Trajectory) -> Result<Vec<EstimateReport>> {
    let m = &cfg.monitor;
    let mut out = Vec::new();
    if m.max_principle {
        out.push(max_principle_check(traj)?);
    }
    for b in &m.bbs {
        out.push(bbs_monitor(traj, b.m, b.alpha, b.k)?);
    }
    if let Some(t0) = m.equivalence_t0 {
        out.push(equivalence_check(traj, t0)?);
    }
    if m.inequalities {
        let (rm, h) = inequality_constants(traj)?;
        out.extend([rm, h]);
    }
    Ok(out)
}

/// An estimate passes when its bound holds or its hypotheses fail.
pub fn estimate_passed(r: &EstimateReport) -> bool {
    r.bound_satisfied || !r.hypotheses_hold
}

/// Replace stored reports of one kind, keeping step records and the other kind.
pub fn store_reports(
    cfg: &RunConfig,
    residuals: Option<&[ResidualReport]>,
    estimates: Option<&[EstimateReport]>,
) -> Result<()> {
    let records = read_metrics(&cfg.output.metrics)?;
    let steps = step_records(&records);
    let old_res: Vec<ResidualReport> = records
        .iter()
        .filter_map(|r| if let MetricRecord::Residual(x) = r { Some(x.clone()) } else { None })
        .collect();
    let old_est: Vec<EstimateReport> = records
        .iter()
        .filter_map(|r| if let MetricRecord::Estimate(x) = r { Some(x.clone()) } else { None })
        .collect();
    emit_metrics(
        &steps,
        residuals.unwrap_or(&old_res),
        estimates.unwrap_or(&old_est),
        &cfg.output.metrics,
    )
}

/// Plain-text summary of a metrics file.
pub fn render_report(records: &[MetricRecord]) -> (String, bool) {
    let steps = step_records(records);
    let mut out = String::from("grflab run report\n\n");
    let mut all_pass = true;
    match (steps.first(), steps.last()) {
        (Some(a), Some(b)) => {
            out.push_str(&format!("steps       {}\n", b.step));
            out.push_str(&format!("time        {} .. {}\n", a.t, b.t));
            out.push_str(&format!("sup|Rm|     {:.6e} -> {:.6e}\n", a.sup_rm, b.sup_rm));
            out.push_str(&format!("sup|H|      {:.6e} -> {:.6e}\n", a.sup_h, b.sup_h));
            if steps.iter().any(|s| s.sup_f > 0.0) {
                out.push_str(&format!("sup|F|      {:.6e} -> {:.6e}\n", a.sup_f, b.sup_f));
            }
            let min_eig = steps.iter().map(|s| s.min_eig_g).fold(f64::INFINITY, f64::min);
            out.push_str(&format!("min eig g   {min_eig:.6e}\n"));
        }
        _ => out.push_str("no step records\n"),
    }
    let residuals: Vec<&ResidualReport> = records
        .iter()
        .filter_map(|r| if let MetricRecord::Residual(x) = r { Some(x) } else { None })
        .collect();
    if !residuals.is_empty() {
        out.push_str("\nresidual checks\n");
        for r in residuals {
            all_pass &= r.verdict.passed();
            out.push_str(&format!(
                "  {:<20} {:<14} residual {:.3e}  tolerance {:.3e}\n",
                r.quantity.name(),
                format!("{:?}", r.verdict).to_lowercase(),
                r.sup_residual,
                r.tolerance
            ));
        }
    }
    let estimates: Vec<&EstimateReport> = records
        .iter()
        .filter_map(|r| if let MetricRecord::Estimate(x) = r { Some(x) } else { None })
        .collect();
    if !estimates.is_empty() {
        out.push_str("\nestimate monitors\n");
        for r in estimates {
            let pass = estimate_passed(r);
            all_pass &= pass;
            let status = match (r.hypotheses_hold, r.bound_satisfied) {
                (false, _) => "unjudged",
                (true, true) => "pass",
                (true, false) => "fail",
            };
            let label = match r.inputs.m {
                Some(m) => format!("{} m={m}", r.kind.name()),
                None => r.kind.name().to_string(),
            };
            out.push_str(&format!(
                "  {:<20} {:<14} constant {:.3e}  margin {:.3e}\n",
                label, status, r.fitted_constant, r.margin
            ));
        }
    }
    out.push_str(&format!("\noverall {}\n", if all_pass { "pass" } else { "fail" }));
    (out, all_pass)
}

/// Whether the gauge-free curvature equations apply to a variant.
pub fn ungauged(variant: Variant) -> bool {
    matches!(variant, Variant::Grf | Variant::Rgrf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::config::parse_config;
    use crate::verify::{exact_t3_form_norm_sq, Verdict};

    fn t3_config(dir: &std::path::Path) -> RunConfig {
        let text = format!(
            r#"
[grid]
dim = 3
n = 8
[preset]
name = "t3_constant_form"
[flow]
variant = "grf"
dt_policy = "fixed"
dt = 0.01
t_end = 0.05
[verify]
checks = ["riemann_evolution", "ricci_evolution", "scalar_evolution", "trace_identity", "commutator", "first_variation", "bochner", "rgrf_equals_grf"]
[monitor]
max_principle = true
bbs_m = [1, 2]
bbs_k = 3.0
bbs_alpha = 1.0
equivalence_t0 = 0.0
[output]
dir = "{}"
"#,
            dir.display()
        );
        let mut cfg = parse_config(&text).unwrap();
        cfg.resolve_paths(dir);
        cfg
    }

    #[test]
    fn t3_run_verifies_and_reports() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = t3_config(dir.path());
        let traj = execute_run(&cfg).unwrap();
        assert_eq!(traj.snapshots.len(), 6);
        for d in &traj.diagnostics {
            let expect = exact_t3_form_norm_sq(1.0, 1.0, d.t).sqrt();
            assert!((d.sup_h - expect).abs() <= 1e-6, "{} vs {expect}", d.sup_h);
        }
        let loaded = load_run(&cfg).unwrap();
        assert_eq!(loaded.snapshots, traj.snapshots);
        assert_eq!(loaded.diagnostics, traj.diagnostics);
        let residuals = verify_suite(&cfg, &loaded).unwrap();
        assert_eq!(residuals.len(), 8);
        for r in &residuals {
            assert_eq!(r.verdict, Verdict::Pass, "{r:?}");
        }
        let estimates = monitor_suite(&cfg, &loaded).unwrap();
        assert!(estimates.iter().all(estimate_passed), "{estimates:?}");
        store_reports(&cfg, Some(&residuals), None).unwrap();
        store_reports(&cfg, None, Some(&estimates)).unwrap();
        let records = read_metrics(&cfg.output.metrics).unwrap();
        assert_eq!(records.len(), traj.diagnostics.len() + residuals.len() + estimates.len());
        let (text, pass) = render_report(&records);
        assert!(pass, "{text}");
        assert!(text.contains("riemann_evolution"));
    }

    #[test]
    fn reruns_are_bit_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let text = |d: &std::path::Path| {
            format!(
                "[grid]\ndim = 3\nn = 8\n[preset]\nname = \"perturbed_metric\"\nseed = 11\nform_amplitude = 0.1\n\
                 [flow]\nvariant = \"grf\"\nt_end = 0.01\n[output]\ndir = \"{}\"\n",
                d.display()
            )
        };
        for d in [a.path(), b.path()] {
            execute_run(&parse_config(&text(d)).unwrap()).unwrap();
        }
        let la = list_snapshots(&a.path().join("snapshots")).unwrap();
        let lb = list_snapshots(&b.path().join("snapshots")).unwrap();
        assert_eq!(la.len(), lb.len());
        for (x, y) in la.iter().zip(&lb) {
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
        }
    }

    #[test]
    fn empty_report_renders() {
        let (text, pass) = render_report(&[]);
        assert!(pass && text.contains("no step records"));
    }
}
