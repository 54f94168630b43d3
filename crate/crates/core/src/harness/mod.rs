//! Experiment configuration, single runs, ablation suites and reports.

pub mod config;
mod inspect;
mod report;
pub mod run;
pub mod suite;
mod table;

pub use config::{ExperimentConfig, RawConfig};
pub use inspect::{gradcam_from_checkpoint, restore, Restored};
pub use report::{emit_report, REPORT_MD};
pub use run::{prepare_data, run_experiment, run_with_data, EpochRecord, FinalRecord, RunOutput, RunReport};
pub use suite::{cells, run_suite, Cell, CellStatus, Suite, SuiteIndex, SuiteOptions};
pub use table::Table;

/// Dataset root: the explicit value, else `MSVP_DATA_DIR`, else `data`.
pub fn data_dir(explicit: Option<&std::path::Path>) -> std::path::PathBuf {
    explicit
        .map(|p| p.to_path_buf())
        .or_else(|| std::env::var_os("MSVP_DATA_DIR").map(Into::into))
        .unwrap_or_else(|| "data".into())
}
