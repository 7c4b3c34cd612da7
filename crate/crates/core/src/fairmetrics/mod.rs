//! Subgroup accuracy, demographic parity and audit reports.

mod metrics;
mod report;

pub use metrics::{
    demographic_parity, join_predictions, subgroup_accuracy, wilson_interval, DisparityRow,
    JoinedRow, JoinedSet, SubgroupMetrics, WILSON_Z,
};
pub use report::{
    build_report, canonicalize, emit_comparison, emit_report, parse_audit_csv, AuditReport,
    ParsedAuditRow, ReportFormat, AUDIT_SCHEMA, COMPARISON_SCHEMA, PLOTDATA_SCHEMA,
};
