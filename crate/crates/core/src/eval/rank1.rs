//! Cross-view rank-1 accuracy.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::{GalleryViews, Protocol};
use crate::error::{GaitError, Result};
use crate::gda::DistanceMatrix;

/// Gallery restriction of one evaluation column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GalleryColumn {
    View(u32),
    /// Every gallery view except the probe's.
    AllOther,
}

impl std::fmt::Display for GalleryColumn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GalleryColumn::View(v) => write!(f, "{v}"),
            GalleryColumn::AllOther => write!(f, "all"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub correct: usize,
    pub total: usize,
}

impl Cell {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

/// Results for one probe set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub name: String,
    pub probe_views: Vec<u32>,
    pub columns: Vec<GalleryColumn>,
    /// `cells[i][j]` for probe view `i` and column `j`; `None` when the
    /// restricted gallery is empty.
    pub cells: Vec<Vec<Option<Cell>>>,
    /// Mean accuracy per probe view over present cells other than the
    /// identical view; `None` if there are none.
    pub view_means: Vec<Option<f64>>,
    pub mean: Option<f64>,
    pub probe_counts: Vec<usize>,
}

impl ConditionReport {
    pub fn absent_cells(&self) -> Vec<(u32, GalleryColumn)> {
        let mut out = Vec::new();
        for (i, row) in self.cells.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                if c.is_none() {
                    out.push((self.probe_views[i], self.columns[j]));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub conditions: Vec<ConditionReport>,
}

impl EvaluationReport {
    pub fn condition(&self, name: &str) -> Option<&ConditionReport> {
        self.conditions.iter().find(|c| c.name == name)
    }

    /// Mean over conditions of their grand means (conditions without one
    /// are skipped).
    pub fn overall_mean(&self) -> Option<f64> {
        let means: Vec<f64> = self.conditions.iter().filter_map(|c| c.mean).collect();
        (!means.is_empty()).then(|| means.iter().sum::<f64>() / means.len() as f64)
    }
}

fn labels(meta: &[crate::model::SequenceMeta], what: &str) -> Result<Vec<(String, u32)>> {
    meta.iter()
        .enumerate()
        .map(|(i, m)| match (&m.subject, m.view) {
            (Some(s), Some(v)) => Ok((s.clone(), v)),
            _ => Err(GaitError::Input(format!(
                "{what} {i} lacks a subject or view label"
            ))),
        })
        .collect()
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Evaluates the probe rows `rows` of `d` as one probe set.
pub fn evaluate_condition(
    d: &DistanceMatrix,
    name: &str,
    rows: &[usize],
    mode: GalleryViews,
) -> Result<ConditionReport> {
    let probe_labels = labels(d.row_meta(), "probe")?;
    let gallery_labels = labels(d.col_meta(), "gallery item")?;
    let probe_views: Vec<u32> = rows
        .iter()
        .map(|&r| probe_labels[r].1)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let gallery_views: BTreeSet<u32> = gallery_labels.iter().map(|g| g.1).collect();
    let columns: Vec<GalleryColumn> = match mode {
        GalleryViews::PerView => gallery_views
            .iter()
            .map(|&v| GalleryColumn::View(v))
            .collect(),
        GalleryViews::AllOther => vec![GalleryColumn::AllOther],
    };

    let mut cells = Vec::with_capacity(probe_views.len());
    let mut view_means = Vec::with_capacity(probe_views.len());
    let mut probe_counts = Vec::with_capacity(probe_views.len());
    for &vp in &probe_views {
        let probes: Vec<usize> = rows
            .iter()
            .copied()
            .filter(|&r| probe_labels[r].1 == vp)
            .collect();
        probe_counts.push(probes.len());
        let mut row = Vec::with_capacity(columns.len());
        for col in &columns {
            let allowed: Vec<usize> = (0..d.cols())
                .filter(|&c| match col {
                    GalleryColumn::View(v) => gallery_labels[c].1 == *v,
                    GalleryColumn::AllOther => gallery_labels[c].1 != vp,
                })
                .collect();
            if allowed.is_empty() {
                row.push(None);
                continue;
            }
            let mut correct = 0;
            for &r in &probes {
                let dist = d.row(r);
                let mut best = allowed[0];
                for &c in &allowed[1..] {
                    if dist[c] < dist[best] {
                        best = c;
                    }
                }
                correct += usize::from(gallery_labels[best].0 == probe_labels[r].0);
            }
            row.push(Some(Cell {
                correct,
                total: probes.len(),
            }));
        }
        let m = mean(
            columns
                .iter()
                .zip(&row)
                .filter(|(col, _)| **col != GalleryColumn::View(vp))
                .filter_map(|(_, c)| c.map(|c| c.accuracy())),
        );
        view_means.push(m);
        cells.push(row);
    }
    let grand = mean(view_means.iter().flatten().copied());
    Ok(ConditionReport {
        name: name.to_string(),
        probe_views,
        columns,
        cells,
        view_means,
        mean: grand,
        probe_counts,
    })
}

/// Evaluates every probe set of `protocol`; probe rows are matched by their
/// condition and sequence number.
pub fn rank1_evaluate(d: &DistanceMatrix, protocol: &Protocol) -> Result<EvaluationReport> {
    let mut conditions = Vec::new();
    for set in &protocol.probes {
        let rows: Vec<usize> = (0..d.rows())
            .filter(|&r| set.select.iter().any(|s| s.matches(&d.row_meta()[r])))
            .collect();
        if rows.is_empty() {
            log::warn!(
                "probe set `{}` has no rows in the distance matrix",
                set.name
            );
            continue;
        }
        conditions.push(evaluate_condition(
            d,
            &set.name,
            &rows,
            protocol.gallery_views,
        )?);
    }
    if conditions.is_empty() {
        return Err(GaitError::Input(
            "no probe rows match the protocol's probe sets".into(),
        ));
    }
    Ok(EvaluationReport { conditions })
}
