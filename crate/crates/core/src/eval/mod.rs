//! Metrics, leave-one-out experiments, ablations and report tables.

mod experiment;
mod metrics;
mod report;

pub use experiment::{
    ablate, ablation_cells, leave_one_out, AblationAxis, AblationRow, AblationTable, ExperimentResult, Fold,
    ForgettingRow, LooContext, PoolFold, Scheme, SubjectResult, Summary, TEMPERATURES,
};
pub use metrics::{accuracy_on, compute_metrics, predict_samples, Counts, Metrics};
pub use report::{
    ablation_csv, ablation_markdown, emit_ablation, emit_report, parse_report_csv, report_rows, result_csv,
    result_markdown, rows_markdown, write_report, write_rows_csv, ReportFormat, ReportRow, ABLATION_CSV_HEADER, CSV_HEADER,
};
