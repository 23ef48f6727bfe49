use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use idclip_core::datagen::Violation;
use idclip_core::pipeline::{
    cmd_eval, cmd_gen, cmd_search, cmd_train, reports_csv, EpochRecord, EvalRequest, SearchRequest, TrainPhase,
};
use idclip_core::{ExpansionStrategy, PipelineError, RunConfig, Task, TemplatePolicy};

#[derive(Parser)]
#[command(name = "idclip", version, about = "Identity-aware image retrieval with face tokens")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the run seed (the dataset seed for `gen`).
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides paths.manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Overrides paths.run_dir.
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and print its validation report.
    Gen(Common),
    /// Pretrain the backbone and/or train the face projector and prompts.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = PhaseArg::All)]
        phase: PhaseArg,
        /// Backbone checkpoint for the idclip phase [default: RUN_DIR/backbone.ckpt].
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a checkpoint; writes reports.json and reports.csv.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Repeatable; replaces eval.strategies.
        #[arg(long, value_parser = parse_strategy)]
        strategy: Vec<ExpansionStrategy>,
        /// Repeatable; replaces eval.template_policies.
        #[arg(long, value_enum)]
        template_policy: Vec<PolicyArg>,
        /// Repeatable; replaces eval.tasks.
        #[arg(long, value_enum)]
        task: Vec<TaskArg>,
        /// Report directory [default: RUN_DIR].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank the eval split for one compound query.
    Search {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Caption containing [ENTITY].
        #[arg(long)]
        query: String,
        /// Gallery name substituted for [ENTITY].
        #[arg(long)]
        name: String,
        #[arg(long, value_parser = parse_strategy, default_value = "tok")]
        strategy: ExpansionStrategy,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PhaseArg {
    Pretrain,
    Idclip,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    T1,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    /// Entity-in-context.
    Context,
    /// Entity-only.
    Entity,
}

fn parse_strategy(s: &str) -> Result<ExpansionStrategy, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn load_config(common: &Common, gen: bool) -> Result<RunConfig, PipelineError> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        if gen {
            cfg.data.seed = seed;
        } else {
            cfg.seed = seed;
        }
    }
    if let Some(m) = &common.manifest {
        cfg.paths.manifest = m.clone();
    }
    if let Some(r) = &common.run_dir {
        cfg.paths.run_dir = r.clone();
    }
    cfg.check()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Gen(common) => {
            let cfg = load_config(&common, true)?;
            let out = cmd_gen(&cfg)?;
            let (data, _) = idclip_core::pipeline::load_dataset(&out.manifest)?;
            let c = data.manifest.counts();
            println!(
                "identities {} contexts {} images {} captions {} templates {}",
                c.identities, c.contexts, c.images, c.captions, c.templates
            );
            println!("validation: clean ({} invariants checked)", Violation::INVARIANTS.len());
            println!("wrote {} and {}", out.manifest.display(), out.tensors.display());
        }
        Command::Train { common, phase, checkpoint } => {
            let cfg = load_config(&common, false)?;
            let phase = match phase {
                PhaseArg::Pretrain => TrainPhase::Pretrain,
                PhaseArg::Idclip => TrainPhase::Idclip,
                PhaseArg::All => TrainPhase::All,
            };
            let start = Instant::now();
            let mut progress = |r: &EpochRecord| {
                let val = match (r.val_context_r1, r.val_rsum) {
                    (Some(v), _) => format!("val context R@1 {v:.2}"),
                    (_, Some(v)) => format!("val Rsum {v:.2}"),
                    _ => String::new(),
                };
                eprintln!(
                    "{:?} epoch {} loss {:.4} {val} ({:.1}s)",
                    r.phase,
                    r.epoch,
                    r.mean_loss,
                    start.elapsed().as_secs_f64()
                );
            };
            let out = cmd_train(&cfg, phase, checkpoint.as_deref(), &mut progress)?;
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            if let Some(e) = out.best_epoch {
                println!("best epoch {e}");
            }
        }
        Command::Eval {
            common,
            checkpoint,
            strategy,
            template_policy,
            task,
            out,
        } => {
            let mut cfg = load_config(&common, false)?;
            if !strategy.is_empty() {
                cfg.eval.strategies = strategy;
            }
            if !template_policy.is_empty() {
                cfg.eval.template_policies = template_policy
                    .into_iter()
                    .map(|p| match p {
                        PolicyArg::T1 => TemplatePolicy::Single(1),
                        PolicyArg::All => TemplatePolicy::AllTemplatesAvg,
                    })
                    .collect();
            }
            if !task.is_empty() {
                cfg.eval.tasks = task
                    .into_iter()
                    .map(|t| match t {
                        TaskArg::Context => Task::EntityInContext,
                        TaskArg::Entity => Task::EntityOnly,
                    })
                    .collect();
            }
            let req = EvalRequest {
                checkpoint,
                out_dir: out.unwrap_or_else(|| cfg.paths.run_dir.clone()),
            };
            let reports = cmd_eval(&cfg, &req)?;
            print!("{}", reports_csv(&reports));
        }
        Command::Search {
            common,
            checkpoint,
            query,
            name,
            strategy,
            k,
        } => {
            let cfg = load_config(&common, false)?;
            let req = SearchRequest {
                checkpoint,
                query,
                name,
                strategy,
                k,
            };
            let hits = cmd_search(&cfg, &req)?;
            println!("rank\timage\tcontext\tidentity\tsimilarity");
            for h in hits {
                println!("{}\t{}\t{}\t{}\t{:.6}", h.rank, h.image_id, h.context_id, h.identity_id, h.similarity);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
