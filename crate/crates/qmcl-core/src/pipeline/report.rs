//! Delimited-text export of prediction reports: space-time field grids,
//! final-snapshot profiles, RMSE series, and an aggregate summary.
//!
//! Grid tables are headerless `(horizon+1) × M` CSV, one row per coarse
//! time, one column per cell. Floats are written in Rust's shortest
//! round-trip form, so identical reports export byte-identically.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::pipeline::persist::{sha256_file, write_manifest};
use crate::pipeline::predict::{FieldSeries, PredictionReport};

#[derive(Debug, Serialize, Deserialize)]
struct ExportedFile {
    file: String,
    rows: usize,
    columns: usize,
    sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ExportManifest {
    delta: Option<f64>,
    horizon: usize,
    num_cells: usize,
    files: Vec<ExportedFile>,
}

/// Write every table for a report into `dir`; returns the file names.
pub fn export_report(report: &PredictionReport, dir: &Path) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();

    let mut write_grid = |name: &str, grid: &Array2<f64>| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, grid_csv(grid))?;
        files.push(ExportedFile {
            file: name.to_string(),
            rows: grid.nrows(),
            columns: grid.ncols(),
            sha256: sha256_file(&path)?,
        });
        Ok(())
    };

    let series: [(&str, &FieldSeries); 3] = [
        ("predicted", &report.predicted),
        ("zero_closure", &report.zero_closure),
        ("surrogate_flux", &report.surrogate_flux),
    ];
    for (name, s) in series {
        write_grid(&format!("{name}_h.csv"), &s.h)?;
        write_grid(&format!("{name}_q.csv"), &s.q)?;
    }
    if let Some(truth) = &report.truth {
        write_grid("truth_h.csv", &truth.h)?;
        write_grid("truth_q.csv", &truth.q)?;
    }
    if let Some(tf) = &report.true_flux {
        write_grid("true_flux_h.csv", &tf.h)?;
        write_grid("true_flux_q.csv", &tf.q)?;
    }

    // Final-snapshot spatial profiles.
    {
        let path = dir.join("final_profile.csv");
        std::fs::write(&path, final_profile_csv(report))?;
        files.push(ExportedFile {
            file: "final_profile.csv".into(),
            rows: report.num_cells() + 1,
            columns: 0,
            sha256: sha256_file(&path)?,
        });
    }

    if report.truth.is_some() {
        let path = dir.join("rmse.csv");
        std::fs::write(&path, rmse_csv(report))?;
        files.push(ExportedFile {
            file: "rmse.csv".into(),
            rows: report.horizon() + 2,
            columns: 6,
            sha256: sha256_file(&path)?,
        });

        let path = dir.join("summary.csv");
        std::fs::write(&path, summary_csv(report))?;
        files.push(ExportedFile {
            file: "summary.csv".into(),
            rows: 5,
            columns: 4,
            sha256: sha256_file(&path)?,
        });
    }

    let names: Vec<String> = files.iter().map(|f| f.file.clone()).collect();
    write_manifest(
        &dir.join("export_manifest.toml"),
        &ExportManifest {
            delta: report.delta,
            horizon: report.horizon(),
            num_cells: report.num_cells(),
            files,
        },
    )?;
    Ok(names)
}

fn grid_csv(grid: &Array2<f64>) -> String {
    let mut out = String::new();
    for row in grid.rows() {
        let mut first = true;
        for &value in row.iter() {
            if !first {
                out.push(',');
            }
            let _ = write!(out, "{value}");
            first = false;
        }
        out.push('\n');
    }
    out
}

fn final_profile_csv(report: &PredictionReport) -> String {
    let last = report.horizon();
    let mut out = String::from("cell");
    let mut columns: Vec<(&str, &Array2<f64>)> = vec![
        ("predicted_h", &report.predicted.h),
        ("predicted_q", &report.predicted.q),
        ("zero_closure_h", &report.zero_closure.h),
        ("zero_closure_q", &report.zero_closure.q),
        ("surrogate_g_h", &report.surrogate_flux.h),
        ("surrogate_g_q", &report.surrogate_flux.q),
    ];
    if let Some(truth) = &report.truth {
        columns.push(("truth_h", &truth.h));
        columns.push(("truth_q", &truth.q));
    }
    if let Some(tf) = &report.true_flux {
        columns.push(("true_g_h", &tf.h));
        columns.push(("true_g_q", &tf.q));
    }
    for (name, _) in &columns {
        let _ = write!(out, ",{name}");
    }
    out.push('\n');
    for cell in 0..report.num_cells() {
        let _ = write!(out, "{cell}");
        for (_, grid) in &columns {
            let _ = write!(out, ",{}", grid[(last, cell)]);
        }
        out.push('\n');
    }
    out
}

fn rmse_csv(report: &PredictionReport) -> String {
    let mut out = String::from("step,time,rmse_qmcl_h,rmse_zero_h,rmse_qmcl_q,rmse_zero_q\n");
    for step in 0..=report.horizon() {
        let time = step as f64 * report.coarse_dt;
        let _ = writeln!(
            out,
            "{step},{time},{},{},{},{}",
            report.rmse_predicted_h[step],
            report.rmse_zero_h[step],
            report.rmse_predicted_q[step],
            report.rmse_zero_q[step],
        );
    }
    out
}

fn summary_csv(report: &PredictionReport) -> String {
    let truth = report.truth.as_ref().expect("summary needs truth");
    let aggregate = |pred: &Array2<f64>, t: &Array2<f64>| -> (f64, f64) {
        let mse: f64 = pred
            .iter()
            .zip(t.iter())
            .map(|(&p, &x)| (p - x) * (p - x))
            .sum::<f64>()
            / pred.len() as f64;
        (mse.sqrt(), PredictionReport::normalized_rmse(pred, t))
    };
    let rows = [
        ("h", "qmcl", aggregate(&report.predicted.h, &truth.h)),
        ("h", "zero_closure", aggregate(&report.zero_closure.h, &truth.h)),
        ("q", "qmcl", aggregate(&report.predicted.q, &truth.q)),
        ("q", "zero_closure", aggregate(&report.zero_closure.q, &truth.q)),
    ];
    let mut out = String::from("field,model,rmse,normalized_rmse\n");
    for (field, model, (rmse, nrmse)) in rows {
        let _ = writeln!(out, "{field},{model},{rmse},{nrmse}");
    }
    out
}
