//! Consistency scoring, benchmark orchestration and report files.

mod bench;
mod cscore;
mod report;

pub use bench::{run_knn_bench, run_memory_bench, LatencyTable, MemoryCell, MemoryReport, SlopeFit};
pub use cscore::{cscore, CScoreReport, KindScores};
pub use report::{
    emit_report, read_report, read_report_from, write_report_to, Report, ReportFormat, ReportRow, REPORT_SCHEMA_VERSION,
};
