use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use violindiff::config::PipelineConfig;
use violindiff::neural::Stage;
use violindiff::Result;
use violindiff_cli::pipeline::{self, BendSource, TrainOptions, VibratoSource};
use violindiff_cli::{error_json, exit_code};

#[derive(Parser)]
#[command(name = "violindiff", version, about = "Two-stage diffusion violin synthesis")]
struct Cli {
    /// Pipeline configuration (JSON). Falls back to $VIOLINDIFF_CONFIG, then defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus (MIDI, WAV, manifest.json).
    GenData { out_dir: PathBuf },
    /// Encode a MIDI file into a 4 x P x T roll tensor.
    Encode { midi_in: PathBuf, rolls_out: PathBuf },
    /// Train one stage on a corpus directory.
    Train {
        stage: Stage,
        data_dir: PathBuf,
        ckpt_out: PathBuf,
        /// Synthesis stage without bend-roll input (baseline).
        #[arg(long)]
        no_bend: bool,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Sample a bend roll for a MIDI file with a bend-stage checkpoint.
    EstimateBend {
        ckpt: PathBuf,
        midi_in: PathBuf,
        bend_out: PathBuf,
        #[arg(long)]
        performer: Option<String>,
    },
    /// Render a MIDI file to WAV with a synthesis-stage checkpoint.
    Synthesize {
        ckpt: PathBuf,
        midi_in: PathBuf,
        performer_id: String,
        wav_out: PathBuf,
        /// Withhold the bend roll.
        #[arg(long, conflicts_with = "bend_from")]
        no_bend: bool,
        /// Bend tensor file, or `stage1` to run stage 1 in-process.
        #[arg(long)]
        bend_from: Option<String>,
        /// Bend-stage checkpoint used by `--bend-from stage1`.
        #[arg(long)]
        bend_ckpt: Option<PathBuf>,
    },
    /// Score generated clips against a corpus; writes JSON and a per-note CSV.
    Evaluate {
        corpus_dir: PathBuf,
        generated_dir: PathBuf,
        report_out: PathBuf,
        /// audio, bend or auto.
        #[arg(long, default_value = "auto")]
        vibrato_source: VibratoSource,
    },
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = PipelineConfig::resolve(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.cmd {
        Command::GenData { out_dir } => {
            pipeline::gen_data(&cfg, &out_dir)?;
        }
        Command::Encode { midi_in, rolls_out } => {
            pipeline::encode(&cfg, &midi_in, &rolls_out)?;
        }
        Command::Train {
            stage,
            data_dir,
            ckpt_out,
            no_bend,
            steps,
        } => {
            let recs = pipeline::train_stage(&cfg, stage, &data_dir, &ckpt_out, &TrainOptions { no_bend, steps })?;
            if let (Some(first), Some(last)) = (recs.first(), recs.last()) {
                println!(
                    "{}",
                    serde_json::json!({ "steps": recs.len(), "first_loss": first.loss, "last_loss": last.loss })
                );
            }
        }
        Command::EstimateBend {
            ckpt,
            midi_in,
            bend_out,
            performer,
        } => {
            pipeline::estimate_bend(&cfg, &ckpt, &midi_in, &bend_out, performer.as_deref())?;
        }
        Command::Synthesize {
            ckpt,
            midi_in,
            performer_id,
            wav_out,
            no_bend,
            bend_from,
            bend_ckpt,
        } => {
            let source = match (no_bend, bend_from.as_deref()) {
                (true, _) => BendSource::Withheld,
                (false, None) => BendSource::Midi,
                (false, Some("stage1")) => BendSource::Stage1(bend_ckpt.ok_or_else(|| {
                    violindiff::Error::InvalidInput("--bend-from stage1 needs --bend-ckpt".into())
                })?),
                (false, Some(path)) => BendSource::File(path.into()),
            };
            pipeline::synthesize(&cfg, &ckpt, &midi_in, &performer_id, &wav_out, &source)?;
        }
        Command::Evaluate {
            corpus_dir,
            generated_dir,
            report_out,
            vibrato_source,
        } => {
            let r = pipeline::evaluate(&cfg, &corpus_dir, &generated_dir, &report_out, vibrato_source)?;
            println!(
                "{}",
                serde_json::json!({
                    "fad_all": r.fad_all.value,
                    "fad_performer": r.fad_performer.value,
                    "fad_piece": r.fad_piece.value,
                    "vibrato_f1": r.vibrato_f1,
                    "perf_mae": r.perf_mae,
                })
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
