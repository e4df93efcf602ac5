use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};
use meetsep::config::{GssMode, MaskSource, PipelineConfig};
use meetsep::eval::write_report;
use meetsep::{cmd_eval, cmd_run, cmd_synth, cmd_train_toy, init_threads};

#[derive(Parser)]
#[command(name = "meetsep", version, about = "Joint diarization and separation of synthetic meetings")]
struct Cli {
    /// JSON configuration; missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a meeting directory.
    Synth {
        out: PathBuf,
        #[arg(long)]
        channels: Option<usize>,
        #[arg(long)]
        speakers: Option<usize>,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        overlap: Option<f64>,
    },
    /// Separate a meeting directory into per-speaker signals and an RTTM.
    Run {
        meeting: PathBuf,
        out: PathBuf,
        /// Use only the first N microphones.
        #[arg(long)]
        channels: Option<usize>,
        /// `oracle` or the path of a SEP checkpoint.
        #[arg(long)]
        mask_source: Option<String>,
        #[arg(long, value_enum)]
        gss: Option<GssMode>,
        /// Score the output against the meeting and write the report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Score a hypothesis directory against a reference directory.
    Eval {
        reference: PathBuf,
        hypothesis: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Two-stage toy training; writes checkpoints and loss curves.
    TrainToy { out: PathBuf },
}

fn print_report(report: &meetsep::EvalReport, path: Option<&PathBuf>) -> Result<()> {
    match path {
        Some(p) => write_report(p, report),
        None => {
            println!("{}", serde_json::to_string_pretty(report)?);
            Ok(())
        }
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    init_threads()?;
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.synth.seed = seed;
    }
    match cli.command {
        Command::Synth { out, channels, speakers, duration, overlap } => {
            let mut spec = cfg.synth.clone();
            spec.num_channels = channels.unwrap_or(spec.num_channels);
            spec.num_speakers = speakers.unwrap_or(spec.num_speakers);
            spec.duration_secs = duration.unwrap_or(spec.duration_secs);
            spec.target_overlap_ratio = overlap.unwrap_or(spec.target_overlap_ratio);
            let manifest = cmd_synth(&spec, cfg.corpus_utterances_per_speaker, &out)?;
            eprintln!("wrote {} ({} speakers, overlap {:.3})", out.display(), manifest.speakers, manifest.overlap_ratio);
        }
        Command::Run { meeting, out, channels, mask_source, gss, report } => {
            if channels.is_some() {
                cfg.max_channels = channels;
            }
            if let Some(src) = mask_source {
                cfg.mask_source = if src == "oracle" { MaskSource::Oracle } else { MaskSource::Model { checkpoint: src.into() } };
            }
            if let Some(mode) = gss {
                cfg.gss_mode = mode;
            }
            let output = cmd_run(&cfg, &meeting, &out)?;
            eprintln!("wrote {} segments to {}", output.segments.len(), out.display());
            if let Some(path) = report {
                print_report(&cmd_eval(&meeting, &out, cfg.collar)?, Some(&path))?;
            }
        }
        Command::Eval { reference, hypothesis, report } => {
            print_report(&cmd_eval(&reference, &hypothesis, cfg.collar)?, report.as_ref())?;
        }
        Command::TrainToy { out } => {
            let ckpt = cmd_train_toy(&cfg.training, cfg.seed, &out)?;
            eprintln!("trained {} parameters; curves in {}", ckpt.model.parameter_count(), out.display());
        }
    }
    Ok(())
}
