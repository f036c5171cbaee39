//! NDJSON metrics with a CSV mirror of the per-step table.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::estimates::EstimateReport;
use crate::flow::StepDiagnostics;
use crate::verify::ResidualReport;

/// One NDJSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum MetricRecord {
    Step(StepDiagnostics),
    Residual(ResidualReport),
    Estimate(EstimateReport),
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Write step records followed by report records.
pub fn emit_metrics(
    steps: &[StepDiagnostics],
    residuals: &[ResidualReport],
    estimates: &[EstimateReport],
    path: &Path,
) -> Result<()> {
    let mut out = create(path)?;
    let records = steps
        .iter()
        .cloned()
        .map(MetricRecord::Step)
        .chain(residuals.iter().cloned().map(MetricRecord::Residual))
        .chain(estimates.iter().cloned().map(MetricRecord::Estimate));
    for r in records {
        serde_json::to_writer(&mut out, &r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Append records to an existing metrics file.
pub fn append_metrics(records: &[MetricRecord], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(fs::OpenOptions::new().create(true).append(true).open(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn emit_csv(steps: &[StepDiagnostics], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    if steps.is_empty() {
        w.write_record(["step", "t", "dt", "sup_rm", "sup_h", "sup_f", "min_eig_g"])?;
    }
    for s in steps {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub fn step_records(records: &[MetricRecord]) -> Vec<StepDiagnostics> {
    records
        .iter()
        .filter_map(|r| match r {
            MetricRecord::Step(s) => Some(*s),
            _ => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimates::{EstimateInputs, EstimateKind};
    use crate::verify::{Quantity, Verdict};

    fn step(i: usize) -> StepDiagnostics {
        StepDiagnostics { step: i, t: 0.1 * i as f64, dt: 0.1, sup_rm: 1.0 / 3.0, sup_h: 2.0, sup_f: 0.0, min_eig_g: 1.0 }
    }

    #[test]
    fn empty_trajectory_gives_empty_valid_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ndjson");
        emit_metrics(&[], &[], &[], &p).unwrap();
        assert!(read_metrics(&p).unwrap().is_empty());
        let csv = dir.path().join("m.csv");
        emit_csv(&[], &csv).unwrap();
        assert!(fs::read_to_string(csv).unwrap().starts_with("step,t,dt"));
    }

    #[test]
    fn records_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ndjson");
        let residual: ResidualReport = serde_json::from_value(serde_json::json!({
            "quantity": "riemann_evolution", "sup_residual": 1.5e-7, "reference": 0.25,
            "expected_order": 4.0, "measured_order": 3.97, "measured_dt_order": null,
            "tolerance": 1e-5, "h": 0.19634954084936207, "dt": 0.001, "verdict": "pass"
        }))
        .unwrap();
        assert_eq!(residual.quantity, Quantity::RiemannEvolution);
        assert_eq!(residual.verdict, Verdict::Pass);
        let estimate = EstimateReport {
            kind: EstimateKind::Bbs,
            inputs: EstimateInputs { k: Some(2.0), m: Some(1), ..Default::default() },
            fitted_constant: 0.7,
            bound_satisfied: true,
            margin: 1e-3,
            hypotheses_hold: false,
            series: vec![(0.0, 0.0), (0.5, 0.1)],
        };
        let steps: Vec<_> = (0..3).map(step).collect();
        emit_metrics(&steps, &[residual.clone()], &[estimate.clone()], &p).unwrap();
        let back = read_metrics(&p).unwrap();
        assert_eq!(back.len(), 5);
        assert_eq!(step_records(&back), steps);
        assert_eq!(back[3], MetricRecord::Residual(residual));
        assert_eq!(back[4], MetricRecord::Estimate(estimate));
        let first = fs::read_to_string(&p).unwrap();
        assert!(first.lines().next().unwrap().starts_with("{\"record\":\"step\""));
    }

    #[test]
    fn csv_mirrors_steps() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        emit_csv(&[step(0), step(1)], &p).unwrap();
        let mut r = csv::Reader::from_path(&p).unwrap();
        let rows: Vec<StepDiagnostics> = r.deserialize().collect::<std::result::Result<_, _>>().unwrap();
        assert_eq!(rows, vec![step(0), step(1)]);
    }
}
