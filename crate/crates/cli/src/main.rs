//! `trdrl`: demos, training runs, sweeps, ablations and aggregation.
//!
//! Exit codes: 0 on success, 1 on a usage or configuration error, 2 when a
//! run fails.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use trdrl::envs::{EnvId, Task};
use trdrl::metrics::{aggregate, aggregate_csv, RunCollection, Series, Stat};
use trdrl::replay::{generate_demos, DemoFile};
use trdrl::shaping::LabelScheme;
use trdrl::trainer::{evaluate_agents, load_agents, read_run_dir, train, write_run_dir, RunConfig, RunMetrics};

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Parser, Debug)]
#[command(name = "trdrl", version, about = "Time-reversal symmetry enhanced SAC on reversible task pairs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Roll out the scripted expert and write its successful trajectories.
    GenDemos {
        /// Task id, e.g. peg-insert or door-inward-open.
        #[arg(long)]
        env: String,
        /// Number of trajectories.
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Seed of the first rollout's reset.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file [default: <env>.demos].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train both tasks of a pair once and write a run directory.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Run directory [default: runs/<pair>/<method>/seed<seed>].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-evaluate the checkpoints of a run directory.
    Eval {
        /// Run directory written by `train`.
        #[arg(long)]
        run: PathBuf,
        /// Evaluation episodes per task [default: the run's eval_episodes].
        #[arg(long)]
        episodes: Option<usize>,
        /// Seed of the evaluation resets [default: the run's seed].
        #[arg(long)]
        seed: Option<u64>,
    },
    /// One run per filter threshold and seed.
    SweepBeta {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        grid: GridArgs,
        /// Comma-separated filter thresholds.
        #[arg(long, value_delimiter = ',', default_value = "0.01,0.001,0.0001")]
        values: Vec<f64>,
        /// Output root [default: runs/sweep-beta].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One run per potential labeling scheme and seed.
    AblatePotential {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        grid: GridArgs,
        /// Comma-separated schemes: linear, triangular, geom-orig, geom.
        #[arg(long, value_delimiter = ',', default_value = "linear,triangular,geom-orig,geom")]
        values: Vec<String>,
        /// Output root [default: runs/ablate-potential].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Baseline, +aug, +shaping and both, for every seed.
    AblateComponents {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        grid: GridArgs,
        /// Output root [default: runs/ablate-components].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate every run directory found under the given roots.
    Aggregate {
        /// Run directories or roots searched recursively.
        #[arg(required = true)]
        roots: Vec<PathBuf>,
        /// iqm or mean-std.
        #[arg(long, default_value = "iqm")]
        stat: String,
        /// Output CSV [default: stdout].
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// Flat `key = value` config file applied over the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Environment pair (peg, door-inward, door-outward) or one of its tasks.
    #[arg(long)]
    env: Option<String>,
    /// single, task-cond or multi-head.
    #[arg(long)]
    mode: Option<String>,
    /// Run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Training episodes per task.
    #[arg(long)]
    episodes: Option<usize>,
    /// Filter threshold as a fraction of the state range.
    #[arg(long)]
    beta: Option<f64>,
    /// Potential labeling scheme: linear, triangular, geom-orig or geom.
    #[arg(long)]
    scheme: Option<String>,
    /// Disable reversal augmentation.
    #[arg(long)]
    no_aug: bool,
    /// Keep every reversed candidate instead of filtering.
    #[arg(long)]
    no_filter: bool,
    /// Disable reward shaping.
    #[arg(long)]
    no_shaping: bool,
    /// Override any config key, e.g. `--set horizon=50`; applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug, Clone)]
struct GridArgs {
    /// Comma-separated seeds [default: the config's `seeds`].
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Runs executed concurrently.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

impl RunArgs {
    fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage(format!("config not found: {} ({e})", path.display())))?;
            cfg.apply_text(&text).map_err(usage)?;
        }
        let mut set = |k: &str, v: String| cfg.set(k, &v).map_err(usage);
        if let Some(v) = &self.env {
            set("env", v.clone())?;
        }
        if let Some(v) = &self.mode {
            set("mode", v.clone())?;
        }
        if let Some(v) = self.seed {
            set("seed", v.to_string())?;
        }
        if let Some(v) = self.episodes {
            set("episodes", v.to_string())?;
        }
        if let Some(v) = self.beta {
            set("beta", v.to_string())?;
        }
        if let Some(v) = &self.scheme {
            set("scheme", v.clone())?;
        }
        if self.no_aug {
            set("augmentation", "false".into())?;
        }
        if self.no_filter {
            set("filter", "false".into())?;
        }
        if self.no_shaping {
            set("shaping", "false".into())?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k, v).map_err(usage)?;
        }
        cfg.validate().map_err(usage)?;
        Ok(cfg)
    }
}

struct Job {
    label: String,
    dir: PathBuf,
    cfg: RunConfig,
}

struct Done {
    label: String,
    cfg: RunConfig,
    metrics: RunMetrics,
}

fn run_one(job: &Job) -> CliResult<Done> {
    let trained = train(&job.cfg, None).map_err(|e| runtime(format!("{}: {e}", job.dir.display())))?;
    write_run_dir(&job.dir, &job.cfg, &trained).map_err(|e| runtime(format!("{}: {e}", job.dir.display())))?;
    eprintln!("finished {}", job.dir.display());
    Ok(Done {
        label: job.label.clone(),
        cfg: job.cfg.clone(),
        metrics: trained.metrics,
    })
}

fn run_jobs(jobs: Vec<Job>, workers: usize) -> CliResult<Vec<Done>> {
    if workers == 0 {
        return Err(usage("--workers must be positive"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(runtime)?;
    pool.install(|| jobs.par_iter().map(run_one).collect())
}

/// `label,seed,task-id,episodes-to-full-success,final-success-rate`.
fn summary_csv(done: &[Done]) -> String {
    let mut o = String::from("label,seed,task-id,episodes-to-full-success,final-success-rate\n");
    for d in done {
        for (k, id) in d.cfg.env.tasks().into_iter().enumerate() {
            let last = d.metrics.series(k).last().map(|p| p.1).unwrap_or(0.0);
            writeln!(o, "{},{},{id},{},{last}", d.label, d.cfg.seed, d.metrics.episodes_to_full_success(k)).unwrap();
        }
    }
    o
}

fn series_of(done: &[Done]) -> CliResult<RunCollection> {
    let mut series = Vec::new();
    for d in done {
        for (k, env) in d.cfg.env.tasks().into_iter().enumerate() {
            series.push(Series {
                method: d.label.clone(),
                env,
                seed: d.cfg.seed,
                horizon: d.cfg.horizon,
                points: d.metrics.series(k),
            });
        }
    }
    RunCollection::new(series).map_err(runtime)
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| runtime(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

/// Runs `arms × seeds`, then writes `summary.csv` and a mean-std
/// `comparison.csv` under `root`.
fn grid(root: &Path, arms: Vec<(String, RunConfig)>, seeds: &[u64], workers: usize) -> CliResult<()> {
    if seeds.is_empty() {
        return Err(usage("no seeds given"));
    }
    let mut jobs = Vec::new();
    for (label, cfg) in arms {
        for &seed in seeds {
            let mut cfg = cfg.clone();
            cfg.seed = seed;
            jobs.push(Job {
                dir: root.join(&label).join(format!("seed{seed}")),
                label: label.clone(),
                cfg,
            });
        }
    }
    let done = run_jobs(jobs, workers)?;
    write_file(&root.join("summary.csv"), &summary_csv(&done))?;
    let rows = aggregate(&series_of(&done)?, Stat::MeanStd).map_err(runtime)?;
    write_file(&root.join("comparison.csv"), &aggregate_csv(&rows))?;
    println!("{}", root.display());
    Ok(())
}

fn seeds_of(grid: &GridArgs, cfg: &RunConfig) -> Vec<u64> {
    grid.seeds.clone().unwrap_or_else(|| cfg.seeds.clone())
}

fn find_run_dirs(root: &Path, out: &mut Vec<PathBuf>) -> CliResult<()> {
    if root.join("config.resolved").is_file() && root.join("metrics.csv").is_file() {
        out.push(root.to_path_buf());
        return Ok(());
    }
    let entries = std::fs::read_dir(root).map_err(|e| usage(format!("{}: {e}", root.display())))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for d in dirs {
        find_run_dirs(&d, out)?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenDemos { env, count, seed, out } => {
            let id: EnvId = env.parse().map_err(usage)?;
            let task = Task::new(id);
            let demos = generate_demos(&task, count, seed).map_err(runtime)?;
            let path = out.unwrap_or_else(|| PathBuf::from(format!("{id}.demos")));
            let file = DemoFile::new(&task, demos);
            write_file(&path, &file.to_text())?;
            println!("{} {} trajectories -> {}", id, file.trajectories.len(), path.display());
        }
        Command::Train { run, out } => {
            let cfg = run.resolve()?;
            let dir = out.unwrap_or_else(|| {
                PathBuf::from("runs")
                    .join(cfg.env.as_str())
                    .join(cfg.method_tag().replace(':', "-"))
                    .join(format!("seed{}", cfg.seed))
            });
            let done = run_one(&Job {
                label: cfg.method_tag(),
                dir: dir.clone(),
                cfg,
            })?;
            for (k, id) in done.cfg.env.tasks().into_iter().enumerate() {
                println!("{id} episodes-to-full-success {}", done.metrics.episodes_to_full_success(k));
            }
            println!("{}", dir.display());
        }
        Command::Eval { run, episodes, seed } => {
            let rd = read_run_dir(&run).map_err(usage)?;
            let agents = load_agents(&run, &rd.config).map_err(usage)?;
            let episodes = episodes.unwrap_or(rd.config.eval_episodes);
            let rates = evaluate_agents(&rd.config, &agents, episodes, seed.unwrap_or(rd.config.seed))
                .map_err(runtime)?;
            for (id, rate) in rd.config.env.tasks().into_iter().zip(rates) {
                println!("{id} {rate}");
            }
        }
        Command::SweepBeta { run, grid: g, values, out } => {
            let cfg = run.resolve()?;
            let mut arms = Vec::new();
            for beta in values {
                let mut c = cfg.clone();
                c.set("beta", &beta.to_string()).map_err(usage)?;
                c.validate().map_err(usage)?;
                arms.push((format!("beta-{beta}"), c));
            }
            let seeds = g.seeds.clone().unwrap_or_else(|| vec![cfg.seed]);
            grid(&out.unwrap_or_else(|| "runs/sweep-beta".into()), arms, &seeds, g.workers)?;
        }
        Command::AblatePotential { run, grid: g, values, out } => {
            let cfg = run.resolve()?;
            let mut arms = Vec::new();
            for scheme in values {
                let tag = LabelScheme::parse(scheme.trim(), cfg.gamma).map_err(usage)?.tag();
                let mut c = cfg.clone();
                c.scheme = tag.to_owned();
                c.shaping = true;
                arms.push((format!("scheme-{tag}"), c));
            }
            grid(&out.unwrap_or_else(|| "runs/ablate-potential".into()), arms, &seeds_of(&g, &cfg), g.workers)?;
        }
        Command::AblateComponents { run, grid: g, out } => {
            let cfg = run.resolve()?;
            let arms = [(false, false), (true, false), (false, true), (true, true)]
                .into_iter()
                .map(|(aug, shaping)| {
                    let mut c = cfg.clone();
                    c.augmentation = aug;
                    c.shaping = shaping;
                    (c.method_tag().replace(':', "-"), c)
                })
                .collect();
            grid(&out.unwrap_or_else(|| "runs/ablate-components".into()), arms, &seeds_of(&g, &cfg), g.workers)?;
        }
        Command::Aggregate { roots, stat, out } => {
            let stat: Stat = stat.parse().map_err(usage)?;
            let mut dirs = Vec::new();
            for r in &roots {
                find_run_dirs(r, &mut dirs)?;
            }
            if dirs.is_empty() {
                return Err(usage("no run directories found"));
            }
            let runs = dirs
                .iter()
                .map(|d| read_run_dir(d).map_err(|e| runtime(format!("{}: {e}", d.display()))))
                .collect::<CliResult<Vec<_>>>()?;
            let rows = aggregate(&RunCollection::from_run_dirs(&runs).map_err(runtime)?, stat).map_err(runtime)?;
            let csv = aggregate_csv(&rows);
            match out {
                Some(path) => write_file(&path, &csv)?,
                None => print!("{csv}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Usage(m) => eprintln!("error: {m}"),
                CliError::Runtime(m) => eprintln!("run failed: {m}"),
            }
            ExitCode::from(e.code())
        }
    }
}
