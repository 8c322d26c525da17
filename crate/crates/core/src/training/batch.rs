use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};
use crate::model::SilhouetteSequence;

/// P x K sampling parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatchSpec {
    /// Subjects per batch.
    pub p: usize,
    /// Sequences per subject.
    pub k: usize,
    pub frames_per_seq: usize,
}

impl Default for BatchSpec {
    fn default() -> Self {
        BatchSpec {
            p: 8,
            k: 16,
            frames_per_seq: 50,
        }
    }
}

impl BatchSpec {
    /// Reduced sampling for CI-sized synthetic runs.
    pub fn desk() -> Self {
        BatchSpec {
            p: 4,
            k: 4,
            frames_per_seq: 30,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 2 || self.k < 2 {
            return Err(GaitError::Config(format!(
                "batch needs p >= 2 and k >= 2, got {}x{}",
                self.p, self.k
            )));
        }
        if self.frames_per_seq == 0 {
            return Err(GaitError::Config("frames_per_seq must be positive".into()));
        }
        Ok(())
    }
}

/// Labeled training sequences grouped by subject.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    sequences: Vec<SilhouetteSequence>,
    /// `(subject id, indices into sequences)` in subject order.
    subjects: Vec<(String, Vec<usize>)>,
}

impl TrainingSet {
    pub fn new(sequences: Vec<SilhouetteSequence>) -> Result<Self> {
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, s) in sequences.iter().enumerate() {
            let subject = s.meta.subject.clone().ok_or_else(|| {
                GaitError::Input(format!("training sequence {i} has no subject label"))
            })?;
            groups.entry(subject).or_default().push(i);
        }
        Ok(TrainingSet {
            sequences,
            subjects: groups.into_iter().collect(),
        })
    }

    pub fn sequences(&self) -> &[SilhouetteSequence] {
        &self.sequences
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn subject_ids(&self) -> impl Iterator<Item = &str> {
        self.subjects.iter().map(|(s, _)| s.as_str())
    }
}

/// One sampled sequence: which sequence, its subject index, and the frames drawn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchItem {
    pub sequence: usize,
    pub label: usize,
    pub frames: Vec<usize>,
}

/// Draw `count` frame indices from a sequence of `len` frames: a sorted
/// random subset when long enough, otherwise a wrap-around run from a random
/// start.
fn sample_frames<R: Rng>(len: usize, count: usize, rng: &mut R) -> Vec<usize> {
    if len >= count {
        let mut idx = index::sample(rng, len, count).into_vec();
        idx.sort_unstable();
        idx
    } else {
        let start = rng.gen_range(0..len);
        (0..count).map(|i| (start + i) % len).collect()
    }
}

/// P distinct subjects, K sequences each (with replacement when a subject
/// has fewer than K), each cut to `frames_per_seq` frames.
pub fn sample_batch<R: Rng>(
    set: &TrainingSet,
    spec: &BatchSpec,
    rng: &mut R,
) -> Result<Vec<BatchItem>> {
    spec.validate()?;
    if set.n_subjects() < spec.p {
        return Err(GaitError::Input(format!(
            "batch needs {} subjects but the training set has {}",
            spec.p,
            set.n_subjects()
        )));
    }
    let mut subjects = index::sample(rng, set.n_subjects(), spec.p).into_vec();
    subjects.sort_unstable();
    let mut items = Vec::with_capacity(spec.p * spec.k);
    for label in subjects {
        let pool = &set.subjects[label].1;
        let picks: Vec<usize> = if pool.len() >= spec.k {
            index::sample(rng, pool.len(), spec.k)
                .into_iter()
                .map(|i| pool[i])
                .collect()
        } else {
            (0..spec.k)
                .map(|_| pool[rng.gen_range(0..pool.len())])
                .collect()
        };
        for sequence in picks {
            let frames = sample_frames(set.sequences[sequence].len(), spec.frames_per_seq, rng);
            items.push(BatchItem {
                sequence,
                label,
                frames,
            });
        }
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{SequenceMeta, FRAME_HEIGHT, FRAME_WIDTH};
    use crate::numerics::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_set(subjects: usize, seqs: usize, frames: usize) -> TrainingSet {
        let mut all = Vec::new();
        for s in 0..subjects {
            for q in 0..seqs {
                let f = (0..frames)
                    .map(|i| {
                        Tensor::full(&[1, FRAME_HEIGHT, FRAME_WIDTH], i as f32 / frames as f32)
                    })
                    .collect();
                all.push(
                    SilhouetteSequence::new(
                        f,
                        SequenceMeta::labeled(&format!("{s:03}"), "nm", q as u32 + 1, 90),
                    )
                    .unwrap(),
                );
            }
        }
        TrainingSet::new(all).unwrap()
    }

    #[test]
    fn paper_batch_has_128_sequences() {
        let set = toy_set(10, 2, 60);
        let batch = sample_batch(
            &set,
            &BatchSpec::default(),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(batch.len(), 128);
        assert!(batch.iter().all(|b| b.frames.len() == 50));
        let mut labels: Vec<_> = batch.iter().map(|b| b.label).collect();
        labels.dedup();
        assert_eq!(labels.len(), 8);
    }

    #[test]
    fn single_sequence_subject_repeats_with_distinct_frames() {
        let set = toy_set(3, 1, 40);
        let spec = BatchSpec {
            p: 2,
            k: 4,
            frames_per_seq: 10,
        };
        let batch = sample_batch(&set, &spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let first = &batch[..4];
        assert!(first.iter().all(|b| b.sequence == first[0].sequence));
        assert!(first.windows(2).any(|w| w[0].frames != w[1].frames));
    }

    #[test]
    fn short_sequences_wrap_around() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let idx = sample_frames(4, 10, &mut rng);
        assert_eq!(idx.len(), 10);
        for w in idx.windows(2) {
            assert_eq!(w[1], (w[0] + 1) % 4);
        }
    }

    #[test]
    fn seeded_and_validated() {
        let set = toy_set(5, 3, 20);
        let spec = BatchSpec::desk();
        let a = sample_batch(&set, &spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_batch(&set, &spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert!(sample_batch(
            &set,
            &BatchSpec { p: 6, ..spec },
            &mut ChaCha8Rng::seed_from_u64(9)
        )
        .is_err());
        assert!(BatchSpec { k: 1, ..spec }.validate().is_err());
    }
}
