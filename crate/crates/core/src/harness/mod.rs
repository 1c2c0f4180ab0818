//! Run configuration, the multi-copy ensemble runner, parameter sweeps and
//! spectrum export.

mod config;
mod runner;
mod sweep;

pub use config::{BandPlan, PilotKind, RunConfig, SystemParams};
pub use runner::{
    auto_ranged_detector, build_calibration, build_transmitter, phase_error_study, run_psd, run_single, tx_spur_study,
    PsdStage, RunDiagnostics, RunOutput, SpurReport, TxArtifacts,
};
pub use sweep::{load_sweep_spec, run_sweep, SweepAxis, SweepRow, SweepSpec, CSV_HEADER};
