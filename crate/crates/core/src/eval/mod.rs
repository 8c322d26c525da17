//! Cross-view rank-1 evaluation and report output.

pub mod rank1;
pub mod report;

pub use crate::gda::distance_matrix;
pub use rank1::{
    evaluate_condition, rank1_evaluate, Cell, ConditionReport, EvaluationReport, GalleryColumn,
};
pub use report::{condition_csv, emit_report, report_text};
