//! Directory-per-run output: `config.resolved`, `metrics.csv`,
//! `demos.ref` (plus the demo files it names), `summary.txt` and
//! `checkpoints/`.

use std::fmt::Write as _;
use std::path::Path;

use super::{EvalPoint, RunConfig, Trained};
use crate::sac::{MultiTaskMode, SacAgent};
use crate::envs::Task;
use crate::replay::DemoFile;
use crate::{Error, Result};

pub const METRICS_HEADER: &str =
    "episode,task-id,success-rate,loss-h,loss-g,loss-phi-own,loss-phi-rev,filter-accept-rate,shaping-mean";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn metrics_csv(points: &[EvalPoint]) -> String {
    let mut o = String::from(METRICS_HEADER);
    o.push('\n');
    for p in points {
        writeln!(
            o,
            "{},{},{},{},{},{},{},{},{}",
            p.episode,
            p.env,
            p.success_rate,
            opt(p.loss_h),
            opt(p.loss_g),
            opt(p.loss_phi_own),
            opt(p.loss_phi_rev),
            opt(p.filter_accept_rate),
            opt(p.shaping_mean)
        )
        .unwrap();
    }
    o
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<EvalPoint>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == METRICS_HEADER => {}
        other => return Err(Error::Parse(format!("metrics header mismatch: {other:?}"))),
    }
    let field = |line: usize, name: &str, v: &str| -> Result<Option<f64>> {
        if v.is_empty() {
            return Ok(None);
        }
        v.parse()
            .map(Some)
            .map_err(|_| Error::Parse(format!("metrics line {line}: bad {name} `{v}`")))
    };
    let mut points = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let n = i + 2;
        let cols: Vec<&str> = line.trim().split(',').collect();
        if cols.len() != 9 {
            return Err(Error::Parse(format!("metrics line {n}: expected 9 columns, got {}", cols.len())));
        }
        let episode = cols[0]
            .parse()
            .map_err(|_| Error::Parse(format!("metrics line {n}: bad episode `{}`", cols[0])))?;
        let success_rate = field(n, "success-rate", cols[2])?
            .ok_or_else(|| Error::Parse(format!("metrics line {n}: missing success-rate")))?;
        if !(0.0..=1.0).contains(&success_rate) {
            return Err(Error::Parse(format!("metrics line {n}: success-rate {success_rate} outside [0, 1]")));
        }
        points.push(EvalPoint {
            episode,
            env: cols[1].parse()?,
            success_rate,
            loss_h: field(n, "loss-h", cols[3])?,
            loss_g: field(n, "loss-g", cols[4])?,
            loss_phi_own: field(n, "loss-phi-own", cols[5])?,
            loss_phi_rev: field(n, "loss-phi-rev", cols[6])?,
            filter_accept_rate: field(n, "filter-accept-rate", cols[7])?,
            shaping_mean: field(n, "shaping-mean", cols[8])?,
        });
    }
    Ok(points)
}

/// Writes every artefact of `trained` under `dir`, creating it.
pub fn write_run_dir(dir: &Path, cfg: &RunConfig, trained: &Trained) -> Result<()> {
    std::fs::create_dir_all(dir.join("demos"))?;
    std::fs::write(dir.join("config.resolved"), cfg.to_text())?;
    std::fs::write(dir.join("metrics.csv"), metrics_csv(&trained.metrics.points))?;

    let mut demo_ref = String::new();
    for (k, id) in cfg.env.tasks().into_iter().enumerate() {
        let name = format!("demos/{id}.demos");
        DemoFile::new(&Task::new(id), trained.demos[k].clone()).save(&dir.join(&name))?;
        writeln!(demo_ref, "{id} {} {name}", trained.demos[k].len()).unwrap();
    }
    std::fs::write(dir.join("demos.ref"), demo_ref)?;

    let m = &trained.metrics;
    let mut summary = String::new();
    for (k, id) in cfg.env.tasks().into_iter().enumerate() {
        writeln!(summary, "episodes-to-full-success {id} {}", m.episodes_to_full_success(k)).unwrap();
        writeln!(summary, "env-steps {id} {}", m.env_steps[k]).unwrap();
        writeln!(summary, "train-successes {id} {}", m.train_successes[k]).unwrap();
    }
    writeln!(summary, "filter-accept-rate {}", opt(m.filter_accept_rate)).unwrap();
    writeln!(summary, "wall-clock-secs {:.3}", m.wall_clock_secs).unwrap();
    std::fs::write(dir.join("summary.txt"), summary)?;

    for (i, agent) in trained.agents.iter().enumerate() {
        agent.save(&dir.join("checkpoints").join(format!("agent{i}")))?;
    }
    Ok(())
}

/// The parts of a run directory needed for aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunDir {
    pub config: RunConfig,
    pub points: Vec<EvalPoint>,
}

pub fn read_run_dir(dir: &Path) -> Result<RunDir> {
    let config = RunConfig::load(&dir.join("config.resolved"))?;
    let points = parse_metrics_csv(&std::fs::read_to_string(dir.join("metrics.csv"))?)?;
    Ok(RunDir { config, points })
}

/// The agents checkpointed in a run directory written for `cfg`.
pub fn load_agents(dir: &Path, cfg: &RunConfig) -> Result<Vec<SacAgent>> {
    let count = if cfg.mode == MultiTaskMode::Single { 2 } else { 1 };
    (0..count)
        .map(|i| SacAgent::load(&dir.join("checkpoints").join(format!("agent{i}")), cfg.sac_config()))
        .collect()
}
