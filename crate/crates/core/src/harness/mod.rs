//! Experiment orchestration: sampling, prompting, scoring, persistence and
//! reporting.

mod plan;
mod record;
mod report;
mod run;
mod sample;

use std::path::PathBuf;

use thiserror::Error;

use crate::alignment::AlignmentError;
use crate::attribution::AttributionError;
use crate::data::DataError;
use crate::gateway::GatewayError;
use crate::models::{ConfusionCell, ModelError};
use crate::prompt::PromptError;

pub use plan::{BaseModelRef, EvalPlan, GridSpec, LlmTarget, SampleSpec, BOT_PROVIDER, RQ2_K_OUT};
pub use record::{
    arm_id, journal_path, manifest_path, read_records, records_path, write_records, EvalRecord, RunManifest,
    RECORD_SCHEMA_VERSION,
};
pub use report::{
    build_report, report_from_dir, ArmHealth, MetricsRow, NonPerfectOverlapRow, OverlapGrid, OverlapGridRow, Report,
    Spread, TauCell, TauRow,
};
pub use run::{run_rq1, run_rq2, RunOutput, METRICS_FILE};
pub use sample::{stratified_sample, SampledInstance, CELLS};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("plan: {0}")]
    Plan(String),
    #[error("confusion cell {cell:?} has {count} members, {needed} needed")]
    UndersizedCell {
        cell: ConfusionCell,
        count: usize,
        needed: usize,
    },
    #[error("no records to report")]
    EmptyRecords,
    #[error("record format: {0}")]
    Format(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Attribution(#[from] AttributionError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Alignment(#[from] AlignmentError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
