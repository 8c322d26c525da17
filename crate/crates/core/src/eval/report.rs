//! CSV and plain-text rendering of evaluation reports.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use super::rank1::{ConditionReport, EvaluationReport, GalleryColumn};
use crate::embedding::write_file;
use crate::error::Result;

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{:.1}", 100.0 * x))
        .unwrap_or_else(|| "-".into())
}

/// Probe views as rows, gallery columns ascending, accuracies as fractions;
/// the last column holds the per-view mean and the last row the grand mean.
pub fn condition_csv(c: &ConditionReport) -> String {
    let mut out = String::from("probe_view");
    for col in &c.columns {
        out.push_str(&format!(",{col}"));
    }
    out.push_str(",mean,probes\n");
    for (i, v) in c.probe_views.iter().enumerate() {
        out.push_str(&v.to_string());
        for cell in &c.cells[i] {
            out.push_str(&format!(",{}", opt(cell.map(|c| c.accuracy()))));
        }
        out.push_str(&format!(
            ",{},{}\n",
            opt(c.view_means[i]),
            c.probe_counts[i]
        ));
    }
    out.push_str("mean");
    for _ in &c.columns {
        out.push(',');
    }
    out.push_str(&format!(
        ",{},{}\n",
        opt(c.mean),
        c.probe_counts.iter().sum::<usize>()
    ));
    out
}

/// Summary laid out with probe conditions as rows and probe views as
/// columns (percent, one decimal), followed by each condition's full matrix.
pub fn report_text(r: &EvaluationReport) -> String {
    let views: BTreeSet<u32> = r
        .conditions
        .iter()
        .flat_map(|c| c.probe_views.iter().copied())
        .collect();
    let mut out = String::from("Rank-1 accuracy (%), identical views excluded\n\n");
    out.push_str(&format!("{:<8}", "Probe"));
    for v in &views {
        out.push_str(&format!("{:>7}", format!("{v}")));
    }
    out.push_str(&format!("{:>7}\n", "Mean"));
    for c in &r.conditions {
        out.push_str(&format!("{:<8}", c.name.to_uppercase()));
        for v in &views {
            let m = c
                .probe_views
                .iter()
                .position(|p| p == v)
                .and_then(|i| c.view_means[i]);
            out.push_str(&format!("{:>7}", pct(m)));
        }
        out.push_str(&format!("{:>7}\n", pct(c.mean)));
    }
    for c in &r.conditions {
        out.push_str(&format!(
            "\n{} (rows: probe view, columns: gallery)\n{:<8}",
            c.name.to_uppercase(),
            ""
        ));
        for col in &c.columns {
            out.push_str(&format!("{:>7}", col.to_string()));
        }
        out.push('\n');
        for (i, v) in c.probe_views.iter().enumerate() {
            out.push_str(&format!("{:<8}", v));
            for (j, cell) in c.cells[i].iter().enumerate() {
                let s = pct(cell.map(|c| c.accuracy()));
                let s = if c.columns[j] == GalleryColumn::View(*v) {
                    format!("({s})")
                } else {
                    s
                };
                out.push_str(&format!("{s:>7}"));
            }
            out.push('\n');
        }
        let absent = c.absent_cells();
        if !absent.is_empty() {
            let list: Vec<String> = absent.iter().map(|(p, g)| format!("{p}->{g}")).collect();
            out.push_str(&format!(
                "absent cells (empty gallery): {}\n",
                list.join(", ")
            ));
        }
    }
    out
}

/// Writes `rank1_<condition>.csv` per condition, `rank1_summary.csv` and
/// `rank1.txt` into `dir`; returns the written paths.
pub fn emit_report(r: &EvaluationReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| crate::GaitError::io(dir, e))?;
    let mut paths = Vec::new();
    let mut summary = String::from("condition,mean,probes\n");
    for c in &r.conditions {
        let p = dir.join(format!("rank1_{}.csv", c.name));
        write_file(&p, condition_csv(c).as_bytes())?;
        paths.push(p);
        summary.push_str(&format!(
            "{},{},{}\n",
            c.name,
            opt(c.mean),
            c.probe_counts.iter().sum::<usize>()
        ));
    }
    let p = dir.join("rank1_summary.csv");
    write_file(&p, summary.as_bytes())?;
    paths.push(p);
    let p = dir.join("rank1.txt");
    write_file(&p, report_text(r).as_bytes())?;
    paths.push(p);
    Ok(paths)
}
