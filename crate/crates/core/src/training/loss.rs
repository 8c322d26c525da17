//! Separate batch-hard triplet loss.
//!
//! For every strip independently: each anchor takes its farthest positive and
//! nearest negative under squared Euclidean distance, and contributes
//! `max(m + d+ - d-, 0)`. A strip's loss is the mean over anchors with a
//! positive hinge (zero when there are none); the batch loss is the mean over
//! strips.

use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};
use crate::numerics::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TripletLossConfig {
    pub margin: f64,
}

impl Default for TripletLossConfig {
    fn default() -> Self {
        TripletLossConfig { margin: 0.2 }
    }
}

impl TripletLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(GaitError::Config(format!(
                "triplet margin must be positive, got {}",
                self.margin
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LossOutput<T> {
    pub loss: T,
    /// Gradient with respect to each input embedding (flat layout).
    pub grads: Vec<Vec<T>>,
    /// Anchors with a positive hinge, per strip.
    pub active: Vec<usize>,
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Batch-hard loss over `embeddings` (each `n_strips * strip_dim` long) with
/// subject `labels`.
pub fn hard_triplet_loss<T: Scalar>(
    embeddings: &[&[T]],
    labels: &[usize],
    n_strips: usize,
    strip_dim: usize,
    cfg: &TripletLossConfig,
) -> Result<LossOutput<T>> {
    cfg.validate()?;
    let n = embeddings.len();
    if labels.len() != n {
        return Err(GaitError::Input(format!(
            "{n} embeddings but {} labels",
            labels.len()
        )));
    }
    if let Some(e) = embeddings.iter().find(|e| e.len() != n_strips * strip_dim) {
        return Err(GaitError::Shape(format!(
            "embedding of length {} is not {n_strips} x {strip_dim}",
            e.len()
        )));
    }
    let first = labels.first().copied();
    if labels.iter().all(|&l| Some(l) == first) {
        return Err(GaitError::Input(
            "triplet loss needs at least two subjects (no negatives)".into(),
        ));
    }
    let has_positive: Vec<bool> = (0..n)
        .map(|i| (0..n).any(|j| j != i && labels[j] == labels[i]))
        .collect();
    if !has_positive.iter().any(|&p| p) {
        return Err(GaitError::Input(
            "triplet loss needs two samples of some subject (no positives)".into(),
        ));
    }

    let margin = T::of(cfg.margin);
    let two = T::of(2.0);
    let strip_weight = T::one() / T::of(n_strips as f64);
    let mut grads = vec![vec![T::zero(); n_strips * strip_dim]; n];
    let mut total = T::zero();
    let mut active = Vec::with_capacity(n_strips);

    for s in 0..n_strips {
        let range = s * strip_dim..(s + 1) * strip_dim;
        let strip = |i: usize| &embeddings[i][range.clone()];
        let mut dist = vec![T::zero(); n * n];
        for i in 0..n {
            for j in i + 1..n {
                let d = sq_dist(strip(i), strip(j));
                dist[i * n + j] = d;
                dist[j * n + i] = d;
            }
        }
        let mut hinges = Vec::new();
        for i in (0..n).filter(|&i| has_positive[i]) {
            let mut pos: Option<usize> = None;
            let mut neg: Option<usize> = None;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let d = dist[i * n + j];
                if labels[j] == labels[i] {
                    if pos.is_none_or(|p| d > dist[i * n + p]) {
                        pos = Some(j);
                    }
                } else if neg.is_none_or(|q| d < dist[i * n + q]) {
                    neg = Some(j);
                }
            }
            let (p, q) = (
                pos.expect("anchor has a positive"),
                neg.expect("batch has a negative"),
            );
            let hinge = margin + dist[i * n + p] - dist[i * n + q];
            if hinge > T::zero() {
                hinges.push((i, p, q, hinge));
            }
        }
        active.push(hinges.len());
        if hinges.is_empty() {
            continue;
        }
        let scale = strip_weight / T::of(hinges.len() as f64);
        let mut strip_sum = T::zero();
        for &(a, p, q, hinge) in &hinges {
            strip_sum += hinge;
            for k in range.clone() {
                let xa = embeddings[a][k];
                let dp = two * (xa - embeddings[p][k]) * scale;
                let dn = two * (xa - embeddings[q][k]) * scale;
                grads[a][k] += dp - dn;
                grads[p][k] = grads[p][k] - dp;
                grads[q][k] += dn;
            }
        }
        total += strip_sum * scale;
    }
    Ok(LossOutput {
        loss: total,
        grads,
        active,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive (anchor, positive, negative) enumeration for one strip layout.
    fn brute_force(emb: &[Vec<f64>], labels: &[usize], n_strips: usize, dim: usize, m: f64) -> f64 {
        let n = emb.len();
        let mut total = 0.0;
        for s in 0..n_strips {
            let d = |a: usize, b: usize| -> f64 {
                (0..dim)
                    .map(|k| (emb[a][s * dim + k] - emb[b][s * dim + k]).powi(2))
                    .sum()
            };
            let mut sum = 0.0;
            let mut count = 0;
            for a in 0..n {
                let mut worst: Option<f64> = None;
                for p in 0..n {
                    for q in 0..n {
                        if p != a && labels[p] == labels[a] && labels[q] != labels[a] {
                            let v = m + d(a, p) - d(a, q);
                            worst = Some(worst.map_or(v, |w: f64| w.max(v)));
                        }
                    }
                }
                if let Some(w) = worst {
                    if w > 0.0 {
                        sum += w;
                        count += 1;
                    }
                }
            }
            if count > 0 {
                total += sum / count as f64;
            }
        }
        total / n_strips as f64
    }

    #[test]
    fn anchor_hinge_values_through_the_loss() {
        // Two anchors only have positives: subject 0 = {0, 1}; subject 1 = {2}.
        // Anchor 0: d+ = 0.8, d- = 0.7 -> 0.3. Anchor 1 (mirror): d+ = 0.8,
        // d- = |sqrt(.8) + sqrt(.7)|^2 large -> 0.
        let emb = [vec![0.0], vec![0.8f64.sqrt()], vec![-(0.7f64.sqrt())]];
        let refs: Vec<&[f64]> = emb.iter().map(Vec::as_slice).collect();
        let out =
            hard_triplet_loss(&refs, &[0, 0, 1], 1, 1, &TripletLossConfig::default()).unwrap();
        assert!((out.loss - 0.3).abs() < 1e-12);
        assert_eq!(out.active, [1]);

        let emb = [vec![0.0], vec![0.5f64.sqrt()], vec![-(0.9f64.sqrt())]];
        let refs: Vec<&[f64]> = emb.iter().map(Vec::as_slice).collect();
        let out =
            hard_triplet_loss(&refs, &[0, 0, 1], 1, 1, &TripletLossConfig::default()).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grads.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let subjects = rng.gen_range(2..=4);
            let per = rng.gen_range(1..=4);
            let mut labels: Vec<usize> = (0..subjects)
                .flat_map(|s| std::iter::repeat_n(s, per))
                .collect();
            if per == 1 {
                labels.push(0);
            }
            let (strips, dim) = (rng.gen_range(1..=3), rng.gen_range(1..=4));
            let emb: Vec<Vec<f64>> = labels
                .iter()
                .map(|_| {
                    (0..strips * dim)
                        .map(|_| rng.gen_range(-0.5..0.5))
                        .collect()
                })
                .collect();
            let refs: Vec<&[f64]> = emb.iter().map(Vec::as_slice).collect();
            let out = hard_triplet_loss(&refs, &labels, strips, dim, &TripletLossConfig::default())
                .unwrap();
            let oracle = brute_force(&emb, &labels, strips, dim, 0.2);
            assert!(
                (out.loss - oracle).abs() < 1e-12,
                "{} vs {oracle}",
                out.loss
            );
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let labels = [0, 0, 1, 1, 2, 2];
        let (strips, dim) = (2, 3);
        let flat: Vec<f64> = (0..labels.len() * strips * dim)
            .map(|_| rng.gen_range(-0.3..0.3))
            .collect();
        let report = finite_diff_check(
            |v: &[f64]| {
                let refs: Vec<&[f64]> = v.chunks(strips * dim).collect();
                let out =
                    hard_triplet_loss(&refs, &labels, strips, dim, &TripletLossConfig::default())
                        .unwrap();
                (out.loss, out.grads.concat())
            },
            &flat,
            1e-6,
        );
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn degenerate_batches_rejected() {
        let e = [vec![0.0f64], vec![1.0]];
        let refs: Vec<&[f64]> = e.iter().map(Vec::as_slice).collect();
        assert!(hard_triplet_loss(&refs, &[0, 0], 1, 1, &TripletLossConfig::default()).is_err());
        assert!(hard_triplet_loss(&refs, &[0, 1], 1, 1, &TripletLossConfig::default()).is_err());
        assert!(
            hard_triplet_loss(&refs, &[0, 1], 1, 1, &TripletLossConfig { margin: 0.0 }).is_err()
        );
    }
}
