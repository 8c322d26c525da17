use serde::{Deserialize, Serialize};

use super::params::{FRAME_HEIGHT, FRAME_WIDTH};
use crate::error::{GaitError, Result};
use crate::numerics::Tensor;

/// Identity labels of a sequence or embedding; all optional so unlabeled
/// data shares the type.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub subject: Option<String>,
    pub condition: Option<String>,
    pub seq: Option<u32>,
    /// Camera view in degrees.
    pub view: Option<u32>,
}

impl SequenceMeta {
    pub fn labeled(subject: &str, condition: &str, seq: u32, view: u32) -> Self {
        SequenceMeta {
            subject: Some(subject.to_string()),
            condition: Some(condition.to_string()),
            seq: Some(seq),
            view: Some(view),
        }
    }
}

/// Ordered preprocessed frames of one walk, each `[1, 64, 44]` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SilhouetteSequence {
    frames: Vec<Tensor<f32>>,
    pub meta: SequenceMeta,
}

impl SilhouetteSequence {
    pub fn new(frames: Vec<Tensor<f32>>, meta: SequenceMeta) -> Result<Self> {
        if frames.is_empty() {
            return Err(GaitError::Input(
                "a sequence needs at least one frame".into(),
            ));
        }
        if let Some(bad) = frames
            .iter()
            .find(|f| f.shape() != [1, FRAME_HEIGHT, FRAME_WIDTH])
        {
            return Err(GaitError::Shape(format!(
                "frames must be [1, {FRAME_HEIGHT}, {FRAME_WIDTH}], got {:?}",
                bad.shape()
            )));
        }
        Ok(SilhouetteSequence { frames, meta })
    }

    pub fn frames(&self) -> &[Tensor<f32>] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// A sequence made of the frames at `indices` (repeats allowed).
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let frames = indices
            .iter()
            .map(|&i| {
                self.frames.get(i).cloned().ok_or_else(|| {
                    GaitError::Input(format!(
                        "frame index {i} out of range {}",
                        self.frames.len()
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        SilhouetteSequence::new(frames, self.meta.clone())
    }
}
