//! `instructforge`: corpus-to-instructions pipeline driver.
//!
//! Every stage reads JSON Lines in and writes JSON Lines/JSON out. Exit
//! codes: 0 on success, 1 on validation failure, 2 on I/O or provider
//! errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use instructforge::corpus::Split;
use instructforge::llmclient::{CacheMode, ClientError};
use instructforge::synth::TaskKind;
use instructforge::trainprep::{ConfigVariant, TrainStage};

use commands::Ctx;
use config::{parse_overrides, ProjectConfig};

#[derive(Parser)]
#[command(name = "instructforge", version, about = "Corpus-to-instructions pipeline")]
struct Cli {
    /// Project configuration file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker cap for provider calls.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    /// Machine-readable diagnostics on stderr.
    #[arg(long, global = true)]
    json: bool,

    /// Print planned counts without writing outputs.
    #[arg(long, global = true)]
    dry_run: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ModeArgs {
    /// Serve provider responses from the cache only (offline).
    #[arg(long, conflicts_with_all = ["record", "live"])]
    replay: bool,
    /// Call the provider and persist responses into the cache.
    #[arg(long, conflicts_with = "live")]
    record: bool,
    /// Call the provider without caching.
    #[arg(long)]
    live: bool,
}

impl ModeArgs {
    fn mode(&self) -> CacheMode {
        if self.record {
            CacheMode::Record
        } else if self.live {
            CacheMode::Live
        } else {
            CacheMode::Replay
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Read raw corpus files into documents.jsonl.
    Ingest,
    /// Cut documents into segments and filter short ones.
    Segment,
    /// Assign train/validation/test splits to segments.
    Split,
    /// Generate instructions from segments through the cached client.
    Gen {
        /// Restrict to one task (summary|titling|mcqa|factual_qa|factual_summary_of).
        #[arg(long)]
        task: Option<TaskKind>,
        #[command(flatten)]
        mode: ModeArgs,
    },
    /// Apply the context-reference curation filter.
    Curate,
    /// Build patron instructions from the dictionaries.
    Patron,
    /// Build long instructions: combos and inverted summaries.
    Longgen,
    /// Assemble a run mix and export the chat-format dataset.
    Mix {
        #[arg(long)]
        run: String,
    },
    /// Corpus and instruction statistics.
    Stats,
    /// Pack segments into training windows with per-document EOS.
    Pack {
        /// train|validation|test|all
        #[arg(long, default_value = "train")]
        split: String,
        #[arg(long, default_value_t = 8192)]
        window: usize,
        /// Also write the binary sidecar.
        #[arg(long)]
        binary: bool,
    },
    /// Render records through the chat template.
    Render {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        template: Option<PathBuf>,
        /// Use the whitespace-friendly spaced template.
        #[arg(long)]
        spaced: bool,
    },
    /// Build masked batches and verify the loss-mask invariants.
    Maskcheck {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 8192)]
        window: usize,
        #[arg(long)]
        template: Option<PathBuf>,
        #[arg(long)]
        spaced: bool,
    },
    /// Score model answers against an eval item set.
    Eval {
        #[arg(long)]
        items: PathBuf,
        #[arg(long)]
        answers: PathBuf,
        #[command(flatten)]
        mode: ModeArgs,
    },
    /// Competition ranking over a score matrix CSV.
    Rank {
        #[arg(long)]
        scores: PathBuf,
        /// Published ranks CSV to verify (tasks columns plus mean_rank).
        #[arg(long)]
        printed: Option<PathBuf>,
    },
    /// Energy and emission estimates.
    Carbon {
        #[command(subcommand)]
        which: CarbonCommand,
    },
    /// Emit the training parameter files and the offload configuration.
    EmitConfig {
        #[arg(long)]
        stage: TrainStage,
        /// full (reference files) or inline (short preset).
        #[arg(long, default_value = "full")]
        variant: String,
        /// key=value overrides.
        #[arg(long = "set")]
        sets: Vec<String>,
    },
    /// Export a builtin grammar as JSON.
    ExportGrammar {
        #[arg(long)]
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum CarbonCommand {
    /// GPU-time estimate: kWh = hours x watts / 1000 x PUE.
    Train {
        #[arg(long)]
        gpu_hours: f64,
        #[arg(long)]
        power_w: f64,
        #[arg(long, default_value_t = 1.0)]
        pue: f64,
        #[arg(long)]
        intensity: Option<f64>,
        /// paper-fr-training | paper-no-generation
        #[arg(long)]
        preset: Option<String>,
    },
    /// Token-based estimate; `--preset paper` applies the calibration.
    Gen {
        #[arg(long)]
        tokens: u64,
        #[arg(long)]
        kwh_per_token: Option<f64>,
        #[arg(long)]
        intensity: Option<f64>,
        #[arg(long)]
        preset: Option<String>,
    },
}

fn require_config(cli: &Cli) -> anyhow::Result<ProjectConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("this command needs --config"))?;
    ProjectConfig::load(path)
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let ctx = |cfg: ProjectConfig| Ctx {
        config: cfg,
        jobs: cli.jobs,
        dry_run: cli.dry_run,
        quiet_json: cli.json,
    };
    match &cli.command {
        Command::Ingest => commands::cmd_ingest(&ctx(require_config(cli)?)),
        Command::Segment => commands::cmd_segment(&ctx(require_config(cli)?)),
        Command::Split => commands::cmd_split(&ctx(require_config(cli)?)),
        Command::Gen { task, mode } => {
            commands::cmd_gen(&ctx(require_config(cli)?), *task, mode.mode())
        }
        Command::Curate => commands::cmd_curate(&ctx(require_config(cli)?)),
        Command::Patron => commands::cmd_patron(&ctx(require_config(cli)?)),
        Command::Longgen => commands::cmd_longgen(&ctx(require_config(cli)?)),
        Command::Mix { run } => commands::cmd_mix(&ctx(require_config(cli)?), run),
        Command::Stats => commands::cmd_stats(&ctx(require_config(cli)?)),
        Command::Pack {
            split,
            window,
            binary,
        } => {
            let split = match split.as_str() {
                "train" => Some(Split::Train),
                "validation" => Some(Split::Validation),
                "test" => Some(Split::Test),
                "all" => None,
                other => anyhow::bail!("unknown split {other:?}"),
            };
            commands::cmd_pack(&ctx(require_config(cli)?), split, *window, *binary)
        }
        Command::Render {
            input,
            template,
            spaced,
        } => commands::cmd_render(&ctx(require_config(cli)?), input, template.as_deref(), *spaced),
        Command::Maskcheck {
            input,
            window,
            template,
            spaced,
        } => commands::cmd_maskcheck(
            &ctx(require_config(cli)?),
            input,
            *window,
            template.as_deref(),
            *spaced,
        ),
        Command::Eval {
            items,
            answers,
            mode,
        } => commands::cmd_eval(&ctx(require_config(cli)?), items, answers, mode.mode()),
        Command::Rank { scores, printed } => {
            commands::cmd_rank(&ctx(require_config(cli)?), scores, printed.as_deref())
        }
        Command::Carbon { which } => match which {
            CarbonCommand::Train {
                gpu_hours,
                power_w,
                pue,
                intensity,
                preset,
            } => commands::cmd_carbon_train(*gpu_hours, *power_w, *pue, *intensity, preset.as_deref()),
            CarbonCommand::Gen {
                tokens,
                kwh_per_token,
                intensity,
                preset,
            } => commands::cmd_carbon_gen(*tokens, *kwh_per_token, *intensity, preset.as_deref()),
        },
        Command::EmitConfig {
            stage,
            variant,
            sets,
        } => {
            let variant = match variant.as_str() {
                "full" => ConfigVariant::Full,
                "inline" => ConfigVariant::Inline,
                other => anyhow::bail!("unknown variant {other:?}"),
            };
            commands::cmd_emit_config(
                &ctx(require_config(cli)?),
                *stage,
                variant,
                &parse_overrides(sets)?,
            )
        }
        Command::ExportGrammar { name, out } => commands::cmd_export_grammar(name, out.as_deref()),
    }
}

/// I/O and provider problems exit 2, validation problems exit 1.
fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
        if let Some(client) = cause.downcast_ref::<ClientError>() {
            return match client {
                ClientError::SchemaViolation(_) => 1,
                _ => 2,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = classify(&err);
            if cli.json {
                eprintln!(
                    "{}",
                    serde_json::json!({"error": format!("{err:#}"), "exit_code": code})
                );
            } else {
                eprintln!("error: {err:#}");
            }
            ExitCode::from(code)
        }
    }
}
