//! File formats shared with the extractor: ATF tensors, run manifests, reports.

pub mod atf;
pub mod manifest;
pub mod report;

pub use atf::{read_atf, read_atf_header, read_atf_with, write_atf, AtfHeader, Dtype, NonFinitePolicy};
pub use manifest::{load_run, write_manifest, ManifestFile, Run, RunManifest};
pub use report::{emit_report, read_report_json, write_report, Report, ReportFormat, TrajectoryRow};
