//! Configuration, file formats and commands of the `meetsep` tool.

pub mod config;
pub mod eval;
pub mod meeting;
pub mod recognize;
pub mod run;
pub mod synth;
pub mod train;

pub use config::{ActivitySource, ChannelPolicy, GssMode, MaskSource, PipelineConfig};
pub use eval::{cmd_eval, EvalReport};
pub use run::{cmd_run, separate, RunOutput};
pub use synth::cmd_synth;
pub use train::{cmd_train_toy, ToyTrainingConfig};

/// Builds the global thread pool from `MEETSEP_THREADS`, if set.
pub fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("MEETSEP_THREADS") {
        let n: usize = v.parse().map_err(|_| anyhow::anyhow!("MEETSEP_THREADS={v} is not a number"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}
