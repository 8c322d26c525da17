//! Pipeline glue shared by the command-line tool and the experiment tests:
//! loading splits, embedding, GDA-on/off evaluation, the block/t ablation and
//! the adjustment-subject sweep.

use serde::{Deserialize, Serialize};

use crate::data::{load_entries, DatasetIndex, Protocol, Split};
use crate::embedding::{embed_sequences, EmbeddingSet};
use crate::error::{GaitError, Result};
use crate::eval::{rank1_evaluate, EvaluationReport};
use crate::gda::{distance_matrix, refine_distances, AdjustmentSet, DistanceMatrix, GdaConfig};
use crate::model::{ModelConfig, SfeParams, SilhouetteSequence};
use crate::training::{train, TrainConfig, TrainOutcome, TrainingSet};

/// Where unlabeled adjustment sequences come from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdjustmentSource {
    /// The held-out test sequences themselves (gallery and probes).
    #[default]
    Test,
    /// Subjects the protocol marks as unlabeled.
    Unlabeled,
}

pub fn load_split(index: &DatasetIndex, split: &Split) -> Result<Vec<SilhouetteSequence>> {
    load_entries(&index.select(split))
}

/// Every probe set's sequences, in protocol order.
pub fn load_probes(index: &DatasetIndex) -> Result<Vec<SilhouetteSequence>> {
    let mut out = Vec::new();
    for p in &index.protocol.probes {
        out.extend(load_split(index, &Split::Probe(p.name.clone()))?);
    }
    Ok(out)
}

pub fn load_adjustment(
    index: &DatasetIndex,
    source: AdjustmentSource,
) -> Result<Vec<SilhouetteSequence>> {
    match source {
        AdjustmentSource::Test => load_entries(&index.test_entries()),
        AdjustmentSource::Unlabeled => load_split(index, &Split::Unlabeled),
    }
}

pub fn training_set(index: &DatasetIndex) -> Result<TrainingSet> {
    let seqs = load_split(index, &Split::Train)?;
    if seqs.is_empty() {
        return Err(GaitError::Input("the training split is empty".into()));
    }
    TrainingSet::new(seqs)
}

/// Rows of `set` belonging to its first `n` distinct subjects (by order of
/// first appearance).
pub fn first_subjects(set: &EmbeddingSet, n: usize) -> EmbeddingSet {
    let mut seen: Vec<Option<String>> = Vec::new();
    set.filter(|_, m| {
        if seen.contains(&m.subject) {
            return true;
        }
        if seen.len() < n {
            seen.push(m.subject.clone());
            return true;
        }
        false
    })
}

pub fn distinct_subjects(set: &EmbeddingSet) -> usize {
    let mut s: Vec<&Option<String>> = set.meta().iter().map(|m| &m.subject).collect();
    s.sort();
    s.dedup();
    s.len()
}

/// Plain and GDA-refined evaluations of one probe/gallery pair.
#[derive(Debug, Clone)]
pub struct GdaComparison {
    pub plain: EvaluationReport,
    pub refined: EvaluationReport,
    pub plain_matrix: DistanceMatrix,
    pub refined_matrix: DistanceMatrix,
}

pub fn compare_gda(
    probes: &EmbeddingSet,
    gallery: &EmbeddingSet,
    rs: &AdjustmentSet,
    cfg: &GdaConfig,
    protocol: &Protocol,
) -> Result<GdaComparison> {
    let plain_matrix = distance_matrix(probes, gallery)?;
    let refined_matrix = refine_distances(&plain_matrix, probes, gallery, rs, cfg)?;
    Ok(GdaComparison {
        plain: rank1_evaluate(&plain_matrix, protocol)?,
        refined: rank1_evaluate(&refined_matrix, protocol)?,
        plain_matrix,
        refined_matrix,
    })
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub subjects: usize,
    pub sequences: usize,
    pub report: EvaluationReport,
}

/// Rank-1 with adjustment sets built from the first `n` subjects of `rs`
/// for each `n` in `counts`.
pub fn adjustment_sweep(
    probes: &EmbeddingSet,
    gallery: &EmbeddingSet,
    rs: &AdjustmentSet,
    counts: &[usize],
    cfg: &GdaConfig,
    protocol: &Protocol,
) -> Result<Vec<SweepPoint>> {
    let d = distance_matrix(probes, gallery)?;
    let available = distinct_subjects(&rs.features);
    counts
        .iter()
        .map(|&n| {
            if n == 0 || n > available {
                return Err(GaitError::Config(format!(
                    "adjustment sweep asks for {n} subjects; the set has {available}"
                )));
            }
            let subset = AdjustmentSet::new(first_subjects(&rs.features, n), rs.source.clone())?;
            let refined = refine_distances(&d, probes, gallery, &subset, cfg)?;
            Ok(SweepPoint {
                subjects: n,
                sequences: subset.len(),
                report: rank1_evaluate(&refined, protocol)?,
            })
        })
        .collect()
}

fn cond_names(reports: &[&EvaluationReport]) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for r in reports {
        for c in &r.conditions {
            if !names.contains(&c.name) {
                names.push(c.name.clone());
            }
        }
    }
    names
}

fn cond_cells(r: &EvaluationReport, names: &[String]) -> String {
    names
        .iter()
        .map(|n| {
            r.condition(n)
                .and_then(|c| c.mean)
                .map(|m| m.to_string())
                .unwrap_or_default()
        })
        .collect::<Vec<_>>()
        .join(",")
}

/// `subjects,sequences,<condition means...>,mean` with `subjects = 0` for
/// the unrefined baseline when given.
pub fn sweep_csv(baseline: Option<&EvaluationReport>, points: &[SweepPoint]) -> String {
    let mut all: Vec<&EvaluationReport> = points.iter().map(|p| &p.report).collect();
    all.extend(baseline);
    let names = cond_names(&all);
    let mut out = format!("subjects,sequences,{},mean\n", names.join(","));
    let opt = |v: Option<f64>| v.map(|m| m.to_string()).unwrap_or_default();
    if let Some(b) = baseline {
        out.push_str(&format!(
            "0,0,{},{}\n",
            cond_cells(b, &names),
            opt(b.overall_mean())
        ));
    }
    for p in points {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.subjects,
            p.sequences,
            cond_cells(&p.report, &names),
            opt(p.report.overall_mean())
        ));
    }
    out
}

/// One trained variant of the block/t study.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub label: String,
    pub blocks: Vec<usize>,
    /// GDA exponent, `None` for the unrefined evaluation.
    pub t: Option<u32>,
    pub report: EvaluationReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub gda: GdaConfig,
    pub adjustment: AdjustmentSource,
    /// FFE variants, each a list of per-layer block counts.
    pub block_variants: Vec<Vec<usize>>,
    /// Exponents evaluated on the `reference_blocks` model.
    pub t_values: Vec<u32>,
    pub reference_blocks: Vec<usize>,
}

/// Trains one model per block variant, evaluates without GDA, then applies
/// GDA with each `t` to the reference variant.
pub fn ablation(index: &DatasetIndex, cfg: &AblationConfig) -> Result<Vec<AblationRow>> {
    let set = training_set(index)?;
    let gallery_seqs = load_split(index, &Split::Gallery)?;
    let probe_seqs = load_probes(index)?;
    let adjust_seqs = load_adjustment(index, cfg.adjustment)?;
    if !cfg.block_variants.contains(&cfg.reference_blocks) && !cfg.t_values.is_empty() {
        return Err(GaitError::Config(
            "reference_blocks must be one of block_variants".into(),
        ));
    }
    let mut rows = Vec::new();
    let mut reference = None;
    for blocks in &cfg.block_variants {
        let model = ModelConfig {
            ffe_layers: blocks.clone(),
            ..cfg.model.clone()
        };
        let TrainOutcome { checkpoint, .. } = train(&set, &model, None, &cfg.train, None)?;
        let gallery = embed_sequences(&gallery_seqs, &checkpoint.params)?;
        let probes = embed_sequences(&probe_seqs, &checkpoint.params)?;
        let report = rank1_evaluate(&distance_matrix(&probes, &gallery)?, &index.protocol)?;
        let label = blocks
            .iter()
            .map(|b| format!("{b}blocks"))
            .collect::<Vec<_>>()
            .join("+");
        log::info!("ablation {label}: mean {:?}", report.overall_mean());
        rows.push(AblationRow {
            label,
            blocks: blocks.clone(),
            t: None,
            report,
        });
        if blocks == &cfg.reference_blocks {
            reference = Some((checkpoint.params, gallery, probes));
        }
    }
    if let Some((params, gallery, probes)) = reference {
        let rs = AdjustmentSet::new(embed_sequences(&adjust_seqs, &params)?, None)?;
        let d = distance_matrix(&probes, &gallery)?;
        for &t in &cfg.t_values {
            let gda = GdaConfig { t, ..cfg.gda };
            let refined = refine_distances(&d, &probes, &gallery, &rs, &gda)?;
            let label = format!(
                "{}+gda_t{t}",
                rows.iter()
                    .find(|r| r.blocks == cfg.reference_blocks)
                    .unwrap()
                    .label
            );
            rows.push(AblationRow {
                label,
                blocks: cfg.reference_blocks.clone(),
                t: Some(t),
                report: rank1_evaluate(&refined, &index.protocol)?,
            });
        }
    }
    Ok(rows)
}

/// Table with one checkmark column per block variant and per GDA
/// probability, then the per-condition means.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut variants: Vec<Vec<usize>> = Vec::new();
    let mut ts: Vec<u32> = Vec::new();
    for r in rows {
        if !variants.contains(&r.blocks) {
            variants.push(r.blocks.clone());
        }
        if let Some(t) = r.t {
            if !ts.contains(&t) {
                ts.push(t);
            }
        }
    }
    let names = cond_names(&rows.iter().map(|r| &r.report).collect::<Vec<_>>());
    let mut header = vec!["row".to_string()];
    header.extend(variants.iter().map(|v| {
        format!(
            "ffe_{}",
            v.iter()
                .map(|b| b.to_string())
                .collect::<Vec<_>>()
                .join("+")
        )
    }));
    header.extend(
        ts.iter()
            .map(|t| format!("gda_{}", 10f64.powi(-(*t as i32)))),
    );
    header.extend(names.iter().cloned());
    header.push("mean".into());
    let mut out = header.join(",") + "\n";
    for (i, r) in rows.iter().enumerate() {
        let mut cells = vec![if i < 26 {
            ((b'a' + i as u8) as char).to_string()
        } else {
            i.to_string()
        }];
        cells.extend(variants.iter().map(|v| {
            if *v == r.blocks {
                "x".into()
            } else {
                String::new()
            }
        }));
        cells.extend(ts.iter().map(|t| {
            if r.t == Some(*t) {
                "x".into()
            } else {
                String::new()
            }
        }));
        cells.push(cond_cells(&r.report, &names));
        cells.push(
            r.report
                .overall_mean()
                .map(|m| m.to_string())
                .unwrap_or_default(),
        );
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Mean distance between same-subject and different-subject pairs of `set`.
pub fn pair_distance_means(set: &EmbeddingSet) -> Option<(f64, f64)> {
    let (mut same, mut ns, mut diff, mut nd) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..set.len() {
        for j in i + 1..set.len() {
            let d = crate::gda::distance::euclidean(set.row(i), set.row(j));
            if set.meta()[i].subject == set.meta()[j].subject {
                same += d;
                ns += 1;
            } else {
                diff += d;
                nd += 1;
            }
        }
    }
    (ns > 0 && nd > 0).then(|| (same / ns as f64, diff / nd as f64))
}

/// Embeds a split with a trained model.
pub fn embed_split(
    index: &DatasetIndex,
    split: &Split,
    params: &SfeParams<f32>,
) -> Result<EmbeddingSet> {
    embed_sequences(&load_split(index, split)?, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SequenceMeta;

    fn set_with_subjects(subjects: &[&str]) -> EmbeddingSet {
        let meta: Vec<SequenceMeta> = subjects
            .iter()
            .map(|s| SequenceMeta::labeled(s, "nm", 1, 0))
            .collect();
        let rows = (0..subjects.len()).map(|i| vec![i as f32]).collect();
        EmbeddingSet::from_rows(rows, meta).unwrap()
    }

    #[test]
    fn first_subjects_keeps_all_rows_of_chosen_subjects() {
        let s = set_with_subjects(&["b", "a", "b", "c", "a"]);
        let f = first_subjects(&s, 2);
        assert_eq!(f.len(), 4);
        assert_eq!(distinct_subjects(&f), 2);
        assert_eq!(distinct_subjects(&s), 3);
    }

    #[test]
    fn pair_means() {
        let s = set_with_subjects(&["a", "a", "b"]);
        // same: |0-1| = 1; different: |0-2|, |1-2| -> 1.5
        assert_eq!(pair_distance_means(&s), Some((1.0, 1.5)));
    }
}
