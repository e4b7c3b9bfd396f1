//! Evaluation: annotation oracle, segmentation accuracy, the
//! forward-looking protocol, and report rendering.

mod metrics;
mod oracle;
mod protocol;
mod report;

pub use metrics::{mean_std, seg_accuracy, SegAccuracy};
pub use oracle::{GroundTruthOracle, QueryRecord};
pub use protocol::{protocol1_evaluate, EvalEntry, EvalMatrix, GtEntry};
pub use report::{render_report, ReportFormat};
