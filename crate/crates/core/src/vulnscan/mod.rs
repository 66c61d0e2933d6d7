//! Uncertainty scoring and failure breakdowns for a trained solver.

mod report;
mod uncertainty;

pub use report::{
    analyze, emit_report, report_json, CharBucket, ConfusablePair, SampleBucket, SampleOutcome,
    VulnReport, GRAY_BUCKET_LEVELS, GRAY_CSV, PEPPER_BUCKET_WIDTH, PEPPER_CSV, REPORT_JSON,
    ROTATION_BUCKET_DEG, ROTATION_CSV, TOP_PAIRS,
};
pub use uncertainty::{head_ratio, uncertainty, UncertaintyScore};
