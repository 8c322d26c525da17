//! Dataset layout, split protocols, silhouette preprocessing and the
//! synthetic walker generator.

pub mod index;
pub mod preprocess;
pub mod protocol;
pub mod synth;

pub use index::{index_dataset, load_entries, DatasetIndex, IndexEntry, IndexIssue};
pub use preprocess::{frame_files, load_frame, load_sequence, normalize_mask};
pub use protocol::{
    GalleryViews, ProbeSet, Protocol, SeqSelector, Split, SubjectGroup, SubjectRole,
};
pub use synth::{
    render_silhouette, subject_latents, synth_generate, Condition, ConditionSpec, SubjectLatents,
    SynthSpec,
};
