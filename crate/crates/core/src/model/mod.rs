//! The SFE network: per-frame FEM, temporal max fusion (TFF), block-wise
//! fine-grained convolution (FFE), width pooling and per-strip heads.

pub mod checkpoint;
pub mod forward;
pub mod params;
pub mod sequence;

pub use checkpoint::Checkpoint;
pub use forward::{
    fem_forward, ffe_forward, separate_fc, sfe_backward, sfe_embed, sfe_forward_traced, tff_fuse,
    tff_fuse_traced, Fused, SequenceTrace, StripEmbedding,
};
pub use params::{
    InitScheme, ModelConfig, SfeParams, FEATURE_WIDTH, FRAME_HEIGHT, FRAME_WIDTH, N_STRIPS,
};
pub use sequence::{SequenceMeta, SilhouetteSequence};

/// Embeds a preprocessed sequence with all of its frames.
pub fn embed_sequence(
    seq: &SilhouetteSequence,
    params: &SfeParams<f32>,
) -> crate::Result<StripEmbedding<f32>> {
    sfe_embed(seq.frames(), params)
}
