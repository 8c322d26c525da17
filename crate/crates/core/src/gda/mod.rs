//! Global Distance Alignment: post-hoc refinement of probe-gallery distances
//! against benchmarks drawn from an unlabeled adjustment set.
//!
//! For a feature `f`, the similar set is the κ nearest adjustment features
//! (κ = max(k_min, ceil(|rs| / 10^t)), capped at |rs|), its benchmark `f_b`
//! the elementwise (max + mean + median) / 3 of that set, and the refined
//! distance `d'(g, q) = d(g, q) - (λ_g·d(f_g, f_b(g)) + λ_q·d(f_q, f_b(q)))`.

pub mod distance;

use serde::{Deserialize, Serialize};

use crate::embedding::{embed_sequences, EmbeddingSet};
use crate::error::{GaitError, Result};
use crate::model::{SfeParams, SilhouetteSequence};
use crate::parallel;
use distance::euclidean;
pub use distance::{distance_matrix, DistanceMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GdaMode {
    /// Only the probe term; never changes the order within a probe row.
    ProbeOnly,
    ProbeAndGallery,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GdaConfig {
    /// Similar features are the closest 10^-t fraction of the adjustment set.
    pub t: u32,
    pub lambda_g: f64,
    pub lambda_q: f64,
    pub mode: GdaMode,
    pub k_min: usize,
}

impl Default for GdaConfig {
    fn default() -> Self {
        GdaConfig {
            t: 3,
            lambda_g: 0.5,
            lambda_q: 0.5,
            mode: GdaMode::ProbeAndGallery,
            k_min: 1,
        }
    }
}

impl GdaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t == 0 {
            return Err(GaitError::Config(
                "t must be at least 1 (selection probability below 1)".into(),
            ));
        }
        for (name, l) in [("lambda_g", self.lambda_g), ("lambda_q", self.lambda_q)] {
            if !(l.is_finite() && l >= 0.0) {
                return Err(GaitError::Config(format!(
                    "{name} must be finite and non-negative, got {l}"
                )));
            }
        }
        if self.k_min == 0 {
            return Err(GaitError::Config("k_min must be at least 1".into()));
        }
        Ok(())
    }

    /// Size of the similar set drawn from `n` adjustment features.
    pub fn kappa(&self, n: usize) -> usize {
        let n64 = n as u64;
        let ceil = match 10u64.checked_pow(self.t) {
            Some(p) => n64.div_ceil(p),
            None => u64::from(n64 > 0),
        };
        (ceil as usize).max(self.k_min).min(n)
    }
}

/// Embeddings of unlabeled sequences used only for refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustmentSet {
    pub features: EmbeddingSet,
    pub source: Option<String>,
}

impl AdjustmentSet {
    pub fn new(features: EmbeddingSet, source: Option<String>) -> Result<Self> {
        if features.is_empty() {
            return Err(GaitError::Input("the adjustment set is empty".into()));
        }
        Ok(AdjustmentSet { features, source })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }
}

/// One embedding per unlabeled sequence, in input order.
pub fn build_adjustment_set(
    sequences: &[SilhouetteSequence],
    params: &SfeParams<f32>,
    source: Option<String>,
) -> Result<AdjustmentSet> {
    if sequences.is_empty() {
        return Err(GaitError::Input(
            "cannot build an adjustment set from zero sequences".into(),
        ));
    }
    AdjustmentSet::new(embed_sequences(sequences, params)?, source)
}

/// Indices of the κ adjustment features nearest to `f`, nearest first; equal
/// distances go to the lower index.
pub fn select_similar(f: &[f32], rs: &AdjustmentSet, cfg: &GdaConfig) -> Result<Vec<usize>> {
    if rs.is_empty() {
        return Err(GaitError::Input("the adjustment set is empty".into()));
    }
    if f.len() != rs.dim() {
        return Err(GaitError::Shape(format!(
            "feature of dimension {} vs adjustment set {}",
            f.len(),
            rs.dim()
        )));
    }
    let mut order: Vec<(f64, usize)> = rs
        .features
        .rows()
        .map(|r| euclidean(f, r))
        .zip(0..)
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(order
        .into_iter()
        .take(cfg.kappa(rs.len()))
        .map(|(_, i)| i)
        .collect())
}

/// Elementwise (max + mean + median) / 3 of the members; an even count's
/// median is the mean of the two middle values.
pub fn compute_benchmark(members: &[&[f32]]) -> Result<Vec<f64>> {
    let first = members
        .first()
        .ok_or_else(|| GaitError::Input("benchmark of an empty similar set".into()))?;
    let dim = first.len();
    if members.iter().any(|m| m.len() != dim) {
        return Err(GaitError::Shape(
            "similar-set members differ in dimension".into(),
        ));
    }
    let n = members.len();
    let mut column = vec![0f64; n];
    let mut out = Vec::with_capacity(dim);
    for k in 0..dim {
        for (c, m) in column.iter_mut().zip(members) {
            *c = m[k] as f64;
        }
        column.sort_by(f64::total_cmp);
        let max = column[n - 1];
        let mean = column.iter().sum::<f64>() / n as f64;
        let median = if n % 2 == 1 {
            column[n / 2]
        } else {
            (column[n / 2 - 1] + column[n / 2]) / 2.0
        };
        out.push((max + mean + median) / 3.0);
    }
    Ok(out)
}

/// Benchmark of one feature against the adjustment set.
pub fn feature_benchmark(f: &[f32], rs: &AdjustmentSet, cfg: &GdaConfig) -> Result<Vec<f64>> {
    let similar = select_similar(f, rs, cfg)?;
    let members: Vec<&[f32]> = similar.iter().map(|&i| rs.features.row(i)).collect();
    compute_benchmark(&members)
}

/// `d(f, f_b(f))` for every row of `set`.
pub fn benchmark_distances(
    set: &EmbeddingSet,
    rs: &AdjustmentSet,
    cfg: &GdaConfig,
) -> Result<Vec<f64>> {
    let idx: Vec<usize> = (0..set.len()).collect();
    parallel::try_map(&idx, |&i| {
        let f = set.row(i);
        let fb = feature_benchmark(f, rs, cfg)?;
        Ok(f.iter()
            .zip(&fb)
            .map(|(&x, &b)| (x as f64 - b) * (x as f64 - b))
            .sum::<f64>()
            .sqrt())
    })
}

/// Applies precomputed benchmark distances; `gallery` is ignored in
/// probe-only mode.
pub fn refine_with_offsets(
    d: &DistanceMatrix,
    gallery: &[f64],
    probes: &[f64],
    cfg: &GdaConfig,
) -> Result<DistanceMatrix> {
    cfg.validate()?;
    if probes.len() != d.rows()
        || (cfg.mode == GdaMode::ProbeAndGallery && gallery.len() != d.cols())
    {
        return Err(GaitError::Shape(
            "benchmark distances do not match the matrix".into(),
        ));
    }
    let mut values = Vec::with_capacity(d.values().len());
    for (r, &bq) in probes.iter().enumerate() {
        for (c, &dist) in d.row(r).iter().enumerate() {
            let g_term = match cfg.mode {
                GdaMode::ProbeAndGallery => cfg.lambda_g * gallery[c],
                GdaMode::ProbeOnly => 0.0,
            };
            values.push(dist - (g_term + cfg.lambda_q * bq));
        }
    }
    DistanceMatrix::new(values, d.row_meta().to_vec(), d.col_meta().to_vec())
}

/// Refines `d` (rows `probes`, columns `gallery`) against the adjustment set.
pub fn refine_distances(
    d: &DistanceMatrix,
    probes: &EmbeddingSet,
    gallery: &EmbeddingSet,
    rs: &AdjustmentSet,
    cfg: &GdaConfig,
) -> Result<DistanceMatrix> {
    cfg.validate()?;
    if d.rows() != probes.len() || d.cols() != gallery.len() {
        return Err(GaitError::Shape(format!(
            "{} x {} matrix for {} probes and {} gallery items",
            d.rows(),
            d.cols(),
            probes.len(),
            gallery.len()
        )));
    }
    if probes.dim() != rs.dim() || gallery.dim() != rs.dim() {
        return Err(GaitError::Shape(
            "adjustment set dimension differs from the embeddings".into(),
        ));
    }
    let bq = benchmark_distances(probes, rs, cfg)?;
    let bg = match cfg.mode {
        GdaMode::ProbeAndGallery => benchmark_distances(gallery, rs, cfg)?,
        GdaMode::ProbeOnly => Vec::new(),
    };
    refine_with_offsets(d, &bg, &bq, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SequenceMeta;

    fn rs(rows: Vec<Vec<f32>>) -> AdjustmentSet {
        let meta = vec![SequenceMeta::default(); rows.len()];
        AdjustmentSet::new(EmbeddingSet::from_rows(rows, meta).unwrap(), None).unwrap()
    }

    fn cfg(t: u32) -> GdaConfig {
        GdaConfig {
            t,
            ..GdaConfig::default()
        }
    }

    #[test]
    fn kappa_values() {
        assert_eq!(cfg(3).kappa(1000), 1);
        assert_eq!(cfg(2).kappa(5000), 50);
        assert_eq!(cfg(3).kappa(1001), 2);
        assert_eq!(cfg(3).kappa(7), 1);
        assert_eq!(cfg(1).kappa(7), 1);
        assert_eq!(cfg(40).kappa(7), 1);
        assert_eq!(
            GdaConfig {
                k_min: 10,
                ..cfg(1)
            }
            .kappa(7),
            7
        );
    }

    #[test]
    fn config_validation() {
        assert!(cfg(0).validate().is_err());
        assert!(GdaConfig {
            lambda_q: -0.1,
            ..cfg(3)
        }
        .validate()
        .is_err());
        assert!(GdaConfig {
            lambda_g: f64::NAN,
            ..cfg(3)
        }
        .validate()
        .is_err());
        assert!(GdaConfig { k_min: 0, ..cfg(3) }.validate().is_err());
        assert!(GdaConfig::default().validate().is_ok());
    }

    #[test]
    fn nearest_with_index_tie_break() {
        let set = rs(vec![vec![2.0], vec![-1.0], vec![1.0], vec![5.0]]);
        let c = GdaConfig { k_min: 3, ..cfg(3) };
        assert_eq!(select_similar(&[0.0], &set, &c).unwrap(), [1, 2, 0]);
        assert!(select_similar(&[0.0, 1.0], &set, &c).is_err());
    }

    #[test]
    fn benchmark_cases() {
        assert_eq!(
            compute_benchmark(&[&[0.0], &[1.0], &[2.0]]).unwrap(),
            [4.0 / 3.0]
        );
        assert_eq!(compute_benchmark(&[&[0.25, -3.0]]).unwrap(), [0.25, -3.0]);
        // Even count: values {0, 1, 2, 5}: max 5, mean 2, median 1.5.
        assert_eq!(
            compute_benchmark(&[&[0.0], &[5.0], &[1.0], &[2.0]]).unwrap(),
            [8.5 / 3.0]
        );
        assert!(compute_benchmark(&[]).is_err());
    }

    #[test]
    fn refinement_spot_check() {
        let d = DistanceMatrix::new(
            vec![1.0],
            vec![SequenceMeta::default()],
            vec![SequenceMeta::default()],
        )
        .unwrap();
        let out = refine_with_offsets(&d, &[0.4], &[0.6], &GdaConfig::default()).unwrap();
        assert_eq!(out.get(0, 0), 0.5);
        let probe_only = GdaConfig {
            mode: GdaMode::ProbeOnly,
            ..GdaConfig::default()
        };
        assert_eq!(
            refine_with_offsets(&d, &[], &[0.6], &probe_only)
                .unwrap()
                .get(0, 0),
            0.7
        );
    }

    #[test]
    fn refine_end_to_end_small() {
        let probes =
            EmbeddingSet::from_rows(vec![vec![0.0, 0.0]], vec![SequenceMeta::default()]).unwrap();
        let gallery =
            EmbeddingSet::from_rows(vec![vec![3.0, 4.0]], vec![SequenceMeta::default()]).unwrap();
        let adj = rs(vec![vec![0.0, 1.0], vec![3.0, 0.0]]);
        let d = distance_matrix(&probes, &gallery).unwrap();
        // kappa = 1: probe's nearest is (0,1) at 1; gallery's nearest is (3,0) at 4.
        let out = refine_distances(&d, &probes, &gallery, &adj, &GdaConfig::default()).unwrap();
        assert_eq!(out.get(0, 0), 5.0 - (0.5 * 4.0 + 0.5 * 1.0));
        let wrong = rs(vec![vec![0.0]]);
        assert!(refine_distances(&d, &probes, &gallery, &wrong, &GdaConfig::default()).is_err());
    }
}
