//! Operator entry point: run experiments, inspect and export memory banks,
//! validate configs, templates, and worlds.

use clap::{Args, Parser, Subcommand, ValueEnum};
use membank::agent::WorldSuite;
use membank::config::{BackendSpec, EmbeddingSpec, RunConfig};
use membank::gateway::{Backend, HttpBackend, ScriptedBackend, TemplateStore};
use membank::harness::{load_checkpoint, RunOutput, Runner, TaskStream};
use membank::memory::MemoryBank;
use membank::retrieval::{CachingEmbedder, EmbeddingProvider, HashEmbedder, HttpEmbedder};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "membank", version, about = "Agent memory experiment driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a task stream through the closed loop and write a report.
    Run(RunArgs),
    /// Inspect, export, or summarize a memory bank file.
    Memory(MemoryArgs),
    /// Validate a config: templates, worlds, stream, and backend script.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long, default_value = "configs/demo.toml")]
    config: PathBuf,
    /// Resume an interrupted run from its run directory (uses the config
    /// snapshot stored there; other flags are ignored).
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Override: memory loop on/off.
    #[arg(long, value_enum)]
    memory: Option<Toggle>,
    /// Override: scaling mode.
    #[arg(long, value_enum)]
    mode: Option<CliMode>,
    /// Override: scaling factor k.
    #[arg(long)]
    k: Option<usize>,
    /// Override: aggregate scaled rollouts into one extraction.
    #[arg(long)]
    aggregate: Option<bool>,
    /// Override: retrieval top-k.
    #[arg(long)]
    retrieval_k: Option<usize>,
    /// Override: per-episode step limit.
    #[arg(long)]
    max_steps: Option<usize>,
    /// Override: run seed.
    #[arg(long)]
    run_seed: Option<u64>,
    /// Override: task stream file.
    #[arg(long)]
    stream: Option<PathBuf>,
    /// Override: starting bank file.
    #[arg(long)]
    bank: Option<PathBuf>,
    /// Override: parent directory for run artifacts.
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliMode {
    None,
    Parallel,
    Sequential,
}

#[derive(Args)]
struct MemoryArgs {
    #[command(subcommand)]
    command: MemoryCommand,
}

#[derive(Subcommand)]
enum MemoryCommand {
    /// Print every record with its verdict and item titles.
    Inspect {
        #[arg(long)]
        bank: PathBuf,
    },
    /// Write the two-file compatibility layout (pool + embeddings).
    Export {
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
    },
    /// Print size, items-per-record histogram, and verdict counts.
    Stats {
        #[arg(long)]
        bank: PathBuf,
    },
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, default_value = "configs/demo.toml")]
    config: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Memory(args) => cmd_memory(args),
        Command::Validate(args) => cmd_validate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

fn apply_overrides(config: &mut RunConfig, args: &RunArgs) {
    if let Some(memory) = args.memory {
        config.memory = matches!(memory, Toggle::On);
    }
    if let Some(mode) = args.mode {
        config.scaling.mode = match mode {
            CliMode::None => membank::scaling::ScalingMode::None,
            CliMode::Parallel => membank::scaling::ScalingMode::Parallel,
            CliMode::Sequential => membank::scaling::ScalingMode::Sequential,
        };
    }
    if let Some(k) = args.k {
        config.scaling.k = k;
    }
    if let Some(aggregate) = args.aggregate {
        config.scaling.aggregate = aggregate;
    }
    if let Some(k) = args.retrieval_k {
        config.retrieval_k = k;
    }
    if let Some(steps) = args.max_steps {
        config.max_steps = steps;
    }
    if let Some(seed) = args.run_seed {
        config.seeds.run = seed;
    }
    if let Some(stream) = &args.stream {
        config.paths.stream = stream.clone();
    }
    if let Some(bank) = &args.bank {
        config.paths.bank = Some(bank.clone());
    }
    if let Some(run_dir) = &args.run_dir {
        config.paths.run_dir = run_dir.clone();
    }
}

struct Components {
    backend: Box<dyn Backend>,
    provider: Box<dyn EmbeddingProvider>,
    templates: TemplateStore,
    suite: WorldSuite,
    stream: TaskStream,
}

fn build_components(config: &RunConfig) -> Result<Components, String> {
    let templates =
        TemplateStore::load(&config.paths.templates).map_err(|e| format!("templates: {e}"))?;
    let suite = WorldSuite::load(&config.paths.worlds).map_err(|e| e.to_string())?;
    let stream = TaskStream::load(&config.paths.stream).map_err(|e| e.to_string())?;
    let backend: Box<dyn Backend> = match &config.backend {
        BackendSpec::Scripted { script } => Box::new(
            ScriptedBackend::from_script_file(script).map_err(|e| e.to_string())?,
        ),
        BackendSpec::Http(http) => Box::new(HttpBackend::new(http.clone())),
    };
    let provider: Box<dyn EmbeddingProvider> = match &config.embedding {
        EmbeddingSpec::Hash { dimension, seed } => {
            let inner = HashEmbedder::new(*dimension, *seed);
            match &config.paths.embedding_cache {
                Some(path) => Box::new(CachingEmbedder::with_cache_file(inner, path.clone())),
                None => Box::new(inner),
            }
        }
        EmbeddingSpec::Http(http) => {
            let inner = HttpEmbedder::new(http.clone());
            match &config.paths.embedding_cache {
                Some(path) => Box::new(CachingEmbedder::with_cache_file(inner, path.clone())),
                // Real backends always get at least the in-memory cache, which
                // also guarantees the determinism contract per process.
                None => Box::new(CachingEmbedder::new(inner)),
            }
        }
    };
    Ok(Components { backend, provider, templates, suite, stream })
}

fn unique_run_dir(parent: &Path, digest: &str) -> PathBuf {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut candidate = parent.join(format!("{secs}-{digest}"));
    let mut counter = 1;
    while candidate.exists() {
        candidate = parent.join(format!("{secs}-{digest}-{counter}"));
        counter += 1;
    }
    candidate
}

fn cmd_run(args: RunArgs) -> Result<(), String> {
    let (config, run_dir, state) = match &args.resume {
        Some(run_dir) => {
            let config = RunConfig::load(&run_dir.join("config.toml"))
                .map_err(|e| format!("resume config: {e}"))?;
            let state = load_checkpoint(run_dir).map_err(|e| format!("resume checkpoint: {e}"))?;
            println!(
                "resuming {} at task index {}",
                run_dir.display(),
                state.completed.len()
            );
            (config, run_dir.clone(), state)
        }
        None => {
            let mut config = RunConfig::load(&args.config).map_err(|e| e.to_string())?;
            apply_overrides(&mut config, &args);
            config.validate().map_err(|e| e.to_string())?;
            let run_dir = unique_run_dir(&config.paths.run_dir, &config.digest());
            std::fs::create_dir_all(&run_dir).map_err(|e| e.to_string())?;
            std::fs::write(
                run_dir.join("config.toml"),
                toml::to_string_pretty(&config).map_err(|e| e.to_string())?,
            )
            .map_err(|e| e.to_string())?;
            let state = match &config.paths.bank {
                Some(path) => membank::harness::RunState {
                    bank: MemoryBank::load(path).map_err(|e| e.to_string())?,
                    completed: Vec::new(),
                },
                None => membank::harness::RunState::default(),
            };
            (config, run_dir, state)
        }
    };

    let components = build_components(&config)?;
    let runner = Runner {
        config: &config,
        backend: &components.backend,
        provider: &components.provider,
        templates: &components.templates,
        suite: &components.suite,
        artifacts: Some(&run_dir),
    };
    let RunOutput { report, bank } = runner
        .resume_stream(&components.stream, state)
        .map_err(|e| format!("run aborted (checkpoint kept in {}): {e}", run_dir.display()))?;

    let agg = &report.aggregates;
    println!("tasks: {}", agg.tasks);
    println!("success_rate: {:.3}", agg.success_rate);
    if let Some(acc) = agg.judge_accuracy {
        println!("judge_accuracy: {acc:.3}");
    }
    print!("avg_steps: {:.3}", agg.avg_steps);
    match (agg.avg_steps_on_success, agg.avg_steps_on_failure) {
        (Some(s), Some(f)) => println!(" (success {s:.3} / failure {f:.3})"),
        (Some(s), None) => println!(" (success {s:.3})"),
        (None, Some(f)) => println!(" (failure {f:.3})"),
        (None, None) => println!(),
    }
    println!("pass@1: {:.3}  best_of_n: {:.3}", agg.pass_at_1, agg.best_of_n);
    if agg.pass_at_k.len() > 1 {
        let rendered: Vec<String> = agg.pass_at_k.iter().map(|v| format!("{v:.3}")).collect();
        println!("pass@k: [{}]", rendered.join(", "));
    }
    println!("bank: {} records -> {}", bank.len(), run_dir.join("bank.json").display());
    println!("report: {}", run_dir.join("report.json").display());
    Ok(())
}

fn cmd_memory(args: MemoryArgs) -> Result<(), String> {
    match args.command {
        MemoryCommand::Inspect { bank } => {
            let bank = MemoryBank::load(&bank).map_err(|e| e.to_string())?;
            for record in bank.records() {
                println!(
                    "#{} {} [{}] ({} steps)",
                    record.created_seq(),
                    record.task_id(),
                    record.verdict().label.as_str(),
                    record.trajectory().step_count(),
                );
                println!("  query: {}", record.query());
                for item in record.items() {
                    println!("  - {}: {}", item.title(), item.description());
                }
            }
            if bank.is_empty() {
                println!("(empty bank)");
            }
            Ok(())
        }
        MemoryCommand::Export { bank, pool, embeddings } => {
            let bank = MemoryBank::load(&bank).map_err(|e| e.to_string())?;
            bank.export_compat(&pool, &embeddings).map_err(|e| e.to_string())?;
            println!("pool: {}", pool.display());
            println!("embeddings: {}", embeddings.display());
            Ok(())
        }
        MemoryCommand::Stats { bank } => {
            let bank = MemoryBank::load(&bank).map_err(|e| e.to_string())?;
            println!("size: {}", bank.len());
            let mut histogram = [0usize; 4];
            let mut successes = 0usize;
            for record in bank.records() {
                histogram[record.items().len().min(3)] += 1;
                if record.verdict().label == membank::judgment::VerdictLabel::Success {
                    successes += 1;
                }
            }
            for (count, tasks) in histogram.iter().enumerate().skip(1) {
                println!("records with {count} item(s): {tasks}");
            }
            println!("success records: {successes}");
            println!("failure records: {}", bank.len() - successes);
            Ok(())
        }
    }
}

fn cmd_validate(args: ValidateArgs) -> Result<(), String> {
    let config = RunConfig::load(&args.config).map_err(|e| e.to_string())?;
    println!("config: ok ({})", args.config.display());

    TemplateStore::load(&config.paths.templates).map_err(|e| format!("templates: {e}"))?;
    println!("templates: ok ({})", config.paths.templates.display());

    let suite = WorldSuite::load(&config.paths.worlds).map_err(|e| e.to_string())?;
    let task_count: usize = suite.worlds.iter().map(|w| w.tasks.len()).sum();
    println!(
        "worlds: ok ({} world(s), {} task(s), goals reachable)",
        suite.worlds.len(),
        task_count
    );

    let stream = TaskStream::load(&config.paths.stream).map_err(|e| e.to_string())?;
    for entry in &stream.entries {
        suite
            .resolve(&entry.world_ref)
            .map_err(|e| format!("stream entry {}: {e}", entry.task_id))?;
    }
    println!("stream: ok ({} task(s), all world refs resolve)", stream.entries.len());

    if let BackendSpec::Scripted { script } = &config.backend {
        ScriptedBackend::from_script_file(script).map_err(|e| e.to_string())?;
        println!("script: ok ({})", script.display());
    }
    Ok(())
}
