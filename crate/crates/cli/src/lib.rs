//! Batch pipeline over the `lingscrub-core` analyses: one JSON config, seven
//! resumable stages, deterministic CSV outputs.

pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod report;
pub mod synth;

pub use config::PipelineConfig;
pub use error::{PipelineError, Result};
pub use pipeline::{run_pipeline, RunSummary, Stage};
pub use report::emit_report;
pub use synth::write_synth_dataset;

pub const THREADS_ENV: &str = "LINGSCRUB_THREADS";

/// Size the global thread pool from `LINGSCRUB_THREADS` when set. Has no
/// effect once the pool exists.
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| PipelineError::Validation(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}
