//! `crebench` — continual relation-extraction workbench CLI.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crebench::exec;
use crebench::harness::{
    cmd_ablate, cmd_analyze, cmd_gen_synth, cmd_memory_sweep, cmd_rep_dump, cmd_retrieval,
    cmd_run, AcaMode, ExperimentConfig, HarnessError, Overrides,
};

#[derive(Parser)]
#[command(version, about = "Continual relation extraction workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output / archive directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Task-sequence seeds, comma separated (e.g. 1,2,3,4,5).
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,

    /// Worker threads for independent jobs.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Augmentation arm selection.
    #[arg(long, global = true, value_parser = ["on", "off", "paired"])]
    aca: Option<String>,

    /// Disable augmentation parts in the augmented arm.
    #[arg(long, global = true, value_parser = ["none", "no_hybrid", "no_reversed", "no_both"])]
    ablate: Option<String>,

    /// Replay memory size per relation.
    #[arg(long, global = true)]
    memory_size: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus files (instances.jsonl, relations.json,
    /// splits.json).
    GenSynth,
    /// Seed sweep with baseline and/or augmented arms.
    Run,
    /// Four-arm augmentation ablation over shared seeds.
    Ablate,
    /// Paired runs across several replay memory sizes.
    MemorySweep(MemorySweepArgs),
    /// Forgetting-rate groups, bad cases, and similarity reports from an
    /// archive.
    Analyze(ArchiveArgs),
    /// Retrieval test over the archive's forgetting relations.
    Retrieval(ArchiveArgs),
    /// Dump test-instance encodings of two relations at their introduction
    /// checkpoints.
    RepDump(RepDumpArgs),
}

#[derive(Args)]
struct MemorySweepArgs {
    /// Memory sizes to sweep, comma separated.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
}

#[derive(Args)]
struct ArchiveArgs {
    /// Archive directory produced by `run` / `ablate` / `memory-sweep`.
    archive: PathBuf,
}

#[derive(Args)]
struct RepDumpArgs {
    archive: PathBuf,
    /// The two relation names, comma separated (e.g. pair00_fwd,pair00_rev).
    #[arg(long, value_delimiter = ',')]
    relations: Vec<String>,
}

fn parse_aca(s: &str) -> AcaMode {
    match s {
        "on" => AcaMode::On,
        "off" => AcaMode::Off,
        _ => AcaMode::Paired,
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, HarnessError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| HarnessError::Config("--config <path> is required".into()))?;
    let overrides = Overrides {
        out: cli.out.clone(),
        seeds: cli.seeds.clone(),
        aca: cli.aca.as_deref().map(parse_aca),
        ablate: cli.ablate.clone(),
        memory_size: cli.memory_size,
    };
    overrides.apply(ExperimentConfig::from_file(path)?)
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf, HarnessError> {
    cfg.out_dir
        .clone()
        .ok_or_else(|| HarnessError::Config("no output directory (--out or out_dir)".into()))
}

fn dispatch(cli: &Cli) -> Result<(), HarnessError> {
    match &cli.command {
        Command::GenSynth => {
            let cfg = load_config(cli)?;
            let out = out_dir(&cfg)?;
            cmd_gen_synth(&cfg, &out)
        }
        Command::Run => {
            let cfg = load_config(cli)?;
            let out = out_dir(&cfg)?;
            cmd_run(&cfg, &out).map(|_| ())
        }
        Command::Ablate => {
            let cfg = load_config(cli)?;
            let out = out_dir(&cfg)?;
            cmd_ablate(&cfg, &out).map(|_| ())
        }
        Command::MemorySweep(args) => {
            let cfg = load_config(cli)?;
            let out = out_dir(&cfg)?;
            let sizes = args.sizes.clone().unwrap_or_else(|| cfg.memory_sizes.clone());
            cmd_memory_sweep(&cfg, &sizes, &out).map(|_| ())
        }
        Command::Analyze(args) => cmd_analyze(&args.archive).map(|_| ()),
        Command::Retrieval(args) => cmd_retrieval(&args.archive).map(|_| ()),
        Command::RepDump(args) => {
            if args.relations.len() != 2 {
                return Err(HarnessError::Config(
                    "--relations needs exactly two names".into(),
                ));
            }
            let use_aca = cli.aca.as_deref() == Some("on");
            cmd_rep_dump(&args.archive, &args.relations[0], &args.relations[1], use_aca)
                .map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let jobs = cli.jobs;
    match exec::with_jobs(jobs, || dispatch(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
