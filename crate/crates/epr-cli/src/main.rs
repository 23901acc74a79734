use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use epr::experiment::{
    cross_validate, discover_run_dirs, emit_plots, emit_report, load_config, read_snapshot_manifest,
    run_experiment, ExperimentConfig, ReportFormat,
};
use epr::trainer::MethodConfig;

#[derive(Parser)]
#[command(name = "epr", about = "Continual-learning experiments with patch-packed replay memories", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured methods over all seeds and write run directories.
    Run(ConfigArgs),
    /// Grid-search the learning rate on the held-out leading tasks.
    Cv(ConfigArgs),
    /// Print the summary table recomputed from finished run directories.
    Report(ReportArgs),
    /// Render the standard figures from finished run directories.
    Plot(OutArg),
    /// List the contents of a run's stored memory.
    InspectMemory(InspectArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON config file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// "synthetic" or a dataset directory.
    #[arg(long)]
    dataset: Option<String>,
    /// Comma-separated method names.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    n_sc: Option<f64>,
    #[arg(long)]
    epf: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    lr: Option<f32>,
    /// Comma-separated seeds.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct OutArg {
    /// Experiment output directory holding the run directories.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Table format: md or csv.
    #[arg(long, default_value = "md")]
    format: String,
}

#[derive(Args)]
struct InspectArgs {
    /// A single run directory (containing memory_snapshot/).
    #[arg(long)]
    run: PathBuf,
}

impl ConfigArgs {
    fn resolve(&self) -> epr::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => load_config(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.dataset {
            cfg.dataset = v.clone();
        }
        if let Some(v) = &self.method {
            cfg.methods = v.split(',').map(|s| s.trim().to_string()).collect();
        }
        if let Some(v) = self.n_sc {
            cfg.n_sc = v;
        }
        if let Some(v) = self.epf {
            cfg.epf = v;
        }
        if let Some(v) = self.stride {
            cfg.stride = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = &self.seeds {
            cfg.seeds = v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<u64>()
                        .map_err(|e| epr::Error::Config(format!("bad seed '{s}': {e}")))
                })
                .collect::<epr::Result<_>>()?;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        Ok(cfg)
    }
}

fn cmd_run(args: &ConfigArgs) -> epr::Result<()> {
    let cfg = args.resolve()?;
    let summary = run_experiment(&cfg)?;
    println!(
        "{} runs ({} failed) -> {}",
        summary.records.len() + summary.failures.len(),
        summary.failures.len(),
        summary.out_dir.display()
    );
    let md = emit_report(&summary.run_dirs, ReportFormat::Md)?;
    print!("{md}");
    Ok(())
}

fn cmd_cv(args: &ConfigArgs) -> epr::Result<()> {
    let cfg = args.resolve()?;
    if cfg.cv_tasks == 0 {
        return Err(epr::Error::Config(
            "set cv_tasks >= 1 in the config to reserve leading tasks for selection".into(),
        ));
    }
    let (cv_stream, _) = cfg.build_streams()?;
    let cv_stream = cv_stream.expect("cv stream present when cv_tasks >= 1");
    let lrs: Vec<f32> = if cfg.lr_grid.is_empty() {
        vec![cfg.lr]
    } else {
        cfg.lr_grid.clone()
    };
    let seed = cfg.seeds.first().copied().unwrap_or(0);
    let mut grid: Vec<MethodConfig> = Vec::new();
    for method in cfg.parsed_methods()? {
        for &lr in &lrs {
            let mut mc = cfg.method_config(method, seed);
            mc.lr = lr;
            grid.push(mc);
        }
    }
    let best = cross_validate(&grid, &cv_stream, cfg.arch()?)?;
    println!("best: method={} lr={}", best.method, best.lr);
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> epr::Result<()> {
    let dirs = discover_run_dirs(&args.out)?;
    let format: ReportFormat = args.format.parse()?;
    print!("{}", emit_report(&dirs, format)?);
    Ok(())
}

fn cmd_plot(args: &OutArg) -> epr::Result<()> {
    let dirs = discover_run_dirs(&args.out)?;
    let written = emit_plots(&dirs, &args.out.join("plots"))?;
    for path in written {
        println!("{}", path.display());
    }
    Ok(())
}

fn cmd_inspect(args: &InspectArgs) -> epr::Result<()> {
    let entries = read_snapshot_manifest(&args.run.join("memory_snapshot"))?;
    if entries.is_empty() {
        println!("memory is empty");
        return Ok(());
    }
    println!("{:>4}  {:>4} {:>5}  {:>8}  {:>5} {:>5} {:>4}  path", "#", "task", "class", "tier", "x", "y", "w");
    for (i, e) in entries.iter().enumerate() {
        println!(
            "{i:>4}  {:>4} {:>5}  {:>8}  {:>5} {:>5} {:>4}  {}",
            e.task,
            e.class,
            e.tier.as_deref().unwrap_or("-"),
            e.x_cord.map_or("-".into(), |v| v.to_string()),
            e.y_cord.map_or("-".into(), |v| v.to_string()),
            e.w_p.map_or("-".into(), |v| v.to_string()),
            e.path,
        );
    }
    let stored: Vec<&str> = entries.iter().filter_map(|e| e.tier.as_deref()).collect();
    if !stored.is_empty() {
        for tier in ["correct", "top3", "other"] {
            let n = stored.iter().filter(|&&t| t == tier).count();
            println!("{tier}: {n}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    // Rust ignores SIGPIPE by default, turning `epr report | head` into a
    // panic on the first print after the reader exits; restore the default
    // so the process ends quietly instead.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Cv(args) => cmd_cv(args),
        Command::Report(args) => cmd_report(args),
        Command::Plot(args) => cmd_plot(args),
        Command::InspectMemory(args) => cmd_inspect(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
