//! The alternating two-task training loop, deterministic evaluation and
//! directory-per-run output.
//!
//! Each task of the pair owns its environment, replay buffer, success
//! dataset and random streams. Per environment step of a task, the loop
//! pushes the transition, updates the shared dynamics models and the task's
//! potentials, builds the SAC minibatch from its own buffer plus reversed
//! (and filtered) transitions of the paired task, shapes the rewards and
//! takes one SAC step. Switching a component off skips its work entirely,
//! so with everything off the loop is plain per-task SAC.

mod config;
mod output;
mod reference;

use std::time::Instant;

use rand::Rng;

pub use config::{Alternation, RunConfig};
pub use output::{load_agents, metrics_csv, parse_metrics_csv, read_run_dir, write_run_dir, RunDir, METRICS_HEADER};
pub use reference::run_plain_sac;

use crate::dynamics::{augment_minibatch, DynamicsModels, FilterConfig};
use crate::envs::{clamp_unit, Env, EnvId, PairId, Task, ACTION_DIM};
use crate::replay::{generate_demos, ReplayBuffer, SuccessDataset, Trajectory, Transition};
use crate::rng::{episode_seed, stream_with_index, RunRng, Stream};
use crate::sac::{ActionMode, MultiTaskMode, SacAgent};
use crate::shaping::PotentialPair;
use crate::{Error, Result};

/// Salt separating evaluation resets from training resets.
const EVAL_SALT: u64 = 0x5EED_E7A1;

/// `Init` stream indices of the three model families.
const INIT_AGENTS: u64 = 0;
const INIT_DYNAMICS: u64 = 1;
const INIT_POTENTIALS: u64 = 2;

/// One evaluation of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPoint {
    /// Training episodes the task had completed.
    pub episode: usize,
    pub env: EnvId,
    pub success_rate: f64,
    /// Means over the task's learner steps since its previous evaluation;
    /// `None` when the component did not run.
    pub loss_h: Option<f64>,
    pub loss_g: Option<f64>,
    pub loss_phi_own: Option<f64>,
    pub loss_phi_rev: Option<f64>,
    pub filter_accept_rate: Option<f64>,
    pub shaping_mean: Option<f64>,
}

impl EvalPoint {
    pub fn task(&self) -> usize {
        self.env.task_index()
    }
}

#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub pair: PairId,
    pub episodes: usize,
    pub horizon: usize,
    pub points: Vec<EvalPoint>,
    pub env_steps: [u64; 2],
    /// Training episodes that ended in success.
    pub train_successes: [usize; 2],
    /// Accepted over proposed reversed transitions for the whole run.
    pub filter_accept_rate: Option<f64>,
    pub wall_clock_secs: f64,
}

/// Wall-clock time is not part of a run's identity.
impl PartialEq for RunMetrics {
    fn eq(&self, other: &Self) -> bool {
        self.pair == other.pair
            && self.episodes == other.episodes
            && self.horizon == other.horizon
            && self.points == other.points
            && self.env_steps == other.env_steps
            && self.train_successes == other.train_successes
            && self.filter_accept_rate == other.filter_accept_rate
    }
}

impl RunMetrics {
    /// `(episode, success rate)` of one task in evaluation order.
    pub fn series(&self, task: usize) -> Vec<(usize, f64)> {
        self.points
            .iter()
            .filter(|p| p.task() == task)
            .map(|p| (p.episode, p.success_rate))
            .collect()
    }

    pub fn episodes_to_full_success(&self, task: usize) -> usize {
        episodes_to_full_success(&self.series(task), self.episodes)
    }

    /// Mean over both tasks of the episodes each needed to reach 100%.
    pub fn mean_episodes_to_full_success(&self) -> f64 {
        0.5 * (self.episodes_to_full_success(0) + self.episodes_to_full_success(1)) as f64
    }
}

/// Episode of the first evaluation with success rate 1.0, or `cap`.
pub fn episodes_to_full_success(series: &[(usize, f64)], cap: usize) -> usize {
    series
        .iter()
        .find(|(_, rate)| *rate >= 1.0)
        .map_or(cap, |(episode, _)| *episode)
}

/// [`episodes_to_full_success`] for rates taken every `interval` episodes.
pub fn episodes_to_full_success_every(rates: &[f64], interval: usize, cap: usize) -> usize {
    let series: Vec<(usize, f64)> = rates.iter().enumerate().map(|(i, &r)| ((i + 1) * interval, r)).collect();
    episodes_to_full_success(&series, cap)
}

/// Fraction of `episodes` deterministic rollouts of `policy` that reach
/// the goal. Resets come from fixed evaluation seeds, so every call with
/// the same arguments sees the same initial states.
pub fn evaluate(
    task: &Task,
    episodes: usize,
    seed: u64,
    mut policy: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<f64> {
    if episodes == 0 {
        return Err(Error::InvalidConfig("evaluation needs at least one episode".into()));
    }
    let task_index = task.id().task_index();
    let mut successes = 0;
    for i in 0..episodes {
        let mut env = Env::new(task.clone(), episode_seed(seed ^ EVAL_SALT, task_index, i as u64));
        loop {
            let a = policy(&env.state().full())?;
            let out = env.step(&a);
            if out.success {
                successes += 1;
            }
            if out.done {
                break;
            }
        }
    }
    Ok(successes as f64 / episodes as f64)
}

/// What SAC is about to consume: the minibatch and its (shaped) rewards.
#[derive(Debug)]
pub struct UpdateEvent<'a> {
    pub task: usize,
    pub batch: &'a [Transition],
    pub rewards: &'a [f64],
}

pub type Observer<'a> = &'a mut dyn FnMut(&UpdateEvent<'_>);

/// A finished run.
#[derive(Debug, Clone)]
pub struct Trained {
    pub metrics: RunMetrics,
    /// One agent per task in single-task mode, one shared agent otherwise.
    pub agents: Vec<SacAgent>,
    pub demos: [Vec<Trajectory>; 2],
    pub buffer_lens: [usize; 2],
}

pub(crate) fn build_agents(cfg: &RunConfig, tasks: &[Task; 2]) -> Result<Vec<SacAgent>> {
    let mut rng = stream_with_index(cfg.seed, Stream::Init, INIT_AGENTS);
    let spec = tasks[0].spec();
    let sac = cfg.sac_config();
    let count = if cfg.mode == MultiTaskMode::Single { 2 } else { 1 };
    let per_agent = if count == 2 { 1 } else { 2 };
    (0..count)
        .map(|_| SacAgent::new(spec.state_dim, spec.action_dim, cfg.mode, per_agent, sac.clone(), &mut rng))
        .collect()
}

/// `(agent index, task index as that agent knows it)` for pair task `k`:
/// one agent per task, or one agent for both.
pub(crate) fn serving(agents: usize, k: usize) -> (usize, usize) {
    if agents == 2 {
        (k, 0)
    } else {
        (0, k)
    }
}

/// Deterministic success rate of each task of `cfg.env` under `agents`
/// (as built or loaded for `cfg`), over `episodes` rollouts per task.
pub fn evaluate_agents(cfg: &RunConfig, agents: &[SacAgent], episodes: usize, seed: u64) -> Result<[f64; 2]> {
    let expected = if cfg.mode == MultiTaskMode::Single { 2 } else { 1 };
    if agents.len() != expected {
        return Err(Error::InvalidConfig(format!(
            "{} mode needs {expected} agent(s), got {}",
            cfg.mode,
            agents.len()
        )));
    }
    let tasks = build_tasks(cfg);
    let mut rates = [0.0; 2];
    for (k, task) in tasks.iter().enumerate() {
        let (i, at) = serving(agents.len(), k);
        let mut scratch = stream_with_index(seed, Stream::EnvReset, k as u64);
        rates[k] = evaluate(task, episodes, seed, |s| {
            agents[i].select_action(s, at, ActionMode::Deterministic, &mut scratch)
        })?;
    }
    Ok(rates)
}

pub(crate) fn build_tasks(cfg: &RunConfig) -> [Task; 2] {
    cfg.env.tasks().map(|id| Task::with_horizon(id, cfg.horizon))
}

/// Demo trajectories for both tasks, rolled out at the environments'
/// default horizon so a short training horizon cannot starve the expert.
pub(crate) fn build_demos(cfg: &RunConfig) -> Result<[Vec<Trajectory>; 2]> {
    let [a, b] = cfg.env.tasks();
    Ok([generate_demos(&Task::new(a), cfg.demos, cfg.seed)?, generate_demos(&Task::new(b), cfg.demos, cfg.seed)?])
}

pub(crate) fn uniform_action(rng: &mut RunRng) -> Vec<f64> {
    (0..ACTION_DIM).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

#[derive(Debug, Clone, Copy, Default)]
struct Mean {
    sum: f64,
    n: usize,
}

impl Mean {
    fn add(&mut self, v: f64) {
        self.sum += v;
        self.n += 1;
    }

    fn take(&mut self) -> Option<f64> {
        let out = (self.n > 0).then(|| self.sum / self.n as f64);
        *self = Mean::default();
        out
    }
}

#[derive(Debug, Default)]
struct Diagnostics {
    loss_h: Mean,
    loss_g: Mean,
    phi_own: Mean,
    phi_rev: Mean,
    accepted: usize,
    candidates: usize,
    shaping: Mean,
}

struct Slot {
    task: Task,
    env: Env,
    buffer: ReplayBuffer,
    successes: SuccessDataset,
    current: Vec<Transition>,
    episodes: usize,
    successes_seen: usize,
    steps: u64,
    explore: RunRng,
    replay: RunRng,
    noise: RunRng,
    augment: RunRng,
    dynamics: RunRng,
    potential: RunRng,
    diag: Diagnostics,
}

impl Slot {
    fn new(cfg: &RunConfig, task: Task, k: usize, demos: &[Trajectory]) -> Result<Self> {
        let mut buffer = ReplayBuffer::new(cfg.buffer_capacity)?;
        let mut successes = SuccessDataset::new(task.spec().object_dim, cfg.success_cap());
        for d in demos {
            for t in &d.transitions {
                buffer.push(t.clone());
            }
            successes.record_trajectory(d);
        }
        let idx = k as u64;
        let env = Env::new(task.clone(), episode_seed(cfg.seed, k, 0));
        Ok(Self {
            task,
            env,
            buffer,
            successes,
            current: Vec::new(),
            episodes: 0,
            successes_seen: 0,
            steps: 0,
            explore: stream_with_index(cfg.seed, Stream::Exploration, idx),
            replay: stream_with_index(cfg.seed, Stream::Replay, idx),
            noise: stream_with_index(cfg.seed, Stream::SacNoise, idx),
            augment: stream_with_index(cfg.seed, Stream::Augment, idx),
            dynamics: stream_with_index(cfg.seed, Stream::Dynamics, idx),
            potential: stream_with_index(cfg.seed, Stream::Potential, idx),
            diag: Diagnostics::default(),
        })
    }
}

struct Run<'o> {
    cfg: RunConfig,
    slots: [Slot; 2],
    agents: Vec<SacAgent>,
    dynamics: Option<DynamicsModels>,
    potentials: Option<PotentialPair>,
    filters: [FilterConfig; 2],
    points: Vec<EvalPoint>,
    accepted: usize,
    candidates: usize,
    observer: Option<Observer<'o>>,
}

impl Run<'_> {
    fn agent_index(&self, k: usize) -> usize {
        serving(self.agents.len(), k).0
    }

    fn agent_task(&self, k: usize) -> usize {
        serving(self.agents.len(), k).1
    }

    fn finished(&self, k: usize) -> bool {
        self.slots[k].episodes >= self.cfg.episodes
    }

    /// One environment step of task `k` plus its learner updates; returns
    /// whether the episode ended.
    fn step(&mut self, k: usize) -> Result<bool> {
        let (ai, at) = (self.agent_index(k), self.agent_task(k));
        let slot = &mut self.slots[k];
        let s = slot.env.state().full();
        let a = if slot.steps < self.cfg.warmup as u64 {
            uniform_action(&mut slot.explore)
        } else {
            self.agents[ai].select_action(&s, at, ActionMode::Stochastic, &mut slot.explore)?
        };
        let out = slot.env.step(&a);
        let t = Transition {
            s,
            a: clamp_unit(&a),
            r: out.reward,
            s_next: out.state.full(),
            done: out.success,
            success: out.success,
            task: k,
        };
        slot.buffer.push(t.clone());
        slot.current.push(t);
        let learn = slot.steps >= self.cfg.warmup as u64;
        slot.steps += 1;
        if learn {
            self.learn(k).map_err(|e| self.abort(k, e))?;
        }
        if out.done {
            self.end_episode(k)?;
        }
        Ok(out.done)
    }

    fn abort(&self, k: usize, source: Error) -> Error {
        let slot = &self.slots[k];
        let agent = &self.agents[self.agent_index(k)];
        Error::Aborted {
            at: format!(
                "{} episode {} env step {} (sac updates {}, alpha {:.3e}, buffer {})",
                slot.task.id(),
                slot.episodes,
                slot.steps,
                agent.updates(),
                agent.alpha(),
                slot.buffer.len()
            ),
            source: Box::new(source),
        }
    }

    fn learn(&mut self, k: usize) -> Result<()> {
        let b = self.cfg.batch_size;
        let [s0, s1] = &mut self.slots;
        let (own, other) = if k == 0 { (s0, &*s1) } else { (s1, &*s0) };

        if let Some(dyn_models) = self.dynamics.as_mut() {
            let batch = own.buffer.sample_minibatch(b, &mut own.dynamics)?;
            if let Some((lh, lg)) = dyn_models.train_dynamics_step(&batch)? {
                own.diag.loss_h.add(lh);
                own.diag.loss_g.add(lg);
            }
        }
        if let Some(pot) = self.potentials.as_mut() {
            let (lo, lr) = pot.train_potential_step(k, &own.successes, &other.successes, &mut own.potential)?;
            if let Some(v) = lo {
                own.diag.phi_own.add(v);
            }
            if let Some(v) = lr {
                own.diag.phi_rev.add(v);
            }
        }

        let mut batch = own.buffer.sample_minibatch(b, &mut own.replay)?;
        if let Some(dyn_models) = self.dynamics.as_ref() {
            let d_b = other.buffer.sample_minibatch(b, &mut own.augment)?;
            let filter = self.cfg.filter.then_some(&self.filters[k]);
            let (aug, stats) = augment_minibatch(dyn_models, dyn_models, &d_b, filter, &own.task, k)?;
            own.diag.accepted += stats.accepted;
            own.diag.candidates += stats.candidates;
            self.accepted += stats.accepted;
            self.candidates += stats.candidates;
            batch.extend(aug);
        }
        let rewards = match self.potentials.as_ref() {
            Some(pot) => {
                let shaped = pot.shape_batch(&batch, self.cfg.gamma)?;
                let extra: f64 = shaped.iter().zip(&batch).map(|(s, t)| s - t.r).sum();
                own.diag.shaping.add(extra / batch.len() as f64);
                shaped
            }
            None => batch.iter().map(|t| t.r).collect(),
        };
        if let Some(obs) = self.observer.as_mut() {
            obs(&UpdateEvent {
                task: k,
                batch: &batch,
                rewards: &rewards,
            });
        }
        let ai = if self.agents.len() == 2 { k } else { 0 };
        self.agents[ai].update(&batch, &rewards, &mut own.noise)?;
        Ok(())
    }

    fn end_episode(&mut self, k: usize) -> Result<()> {
        let slot = &mut self.slots[k];
        let traj = Trajectory {
            transitions: std::mem::take(&mut slot.current),
        };
        if slot.successes.record_trajectory(&traj) {
            slot.successes_seen += 1;
        }
        slot.episodes += 1;
        let e = slot.episodes;
        slot.env.reset(episode_seed(self.cfg.seed, k, e as u64));
        if e % self.cfg.eval_interval == 0 || e == self.cfg.episodes {
            self.eval_point(k)?;
        }
        Ok(())
    }

    fn eval_point(&mut self, k: usize) -> Result<()> {
        let agent = &self.agents[self.agent_index(k)];
        let at = self.agent_task(k);
        let mut scratch = stream_with_index(self.cfg.seed, Stream::EnvReset, k as u64);
        let task = &self.slots[k].task;
        let rate = evaluate(task, self.cfg.eval_episodes, self.cfg.seed, |s| {
            agent.select_action(s, at, ActionMode::Deterministic, &mut scratch)
        })?;
        let slot = &mut self.slots[k];
        let d = &mut slot.diag;
        let accept = (d.candidates > 0).then(|| d.accepted as f64 / d.candidates as f64);
        d.accepted = 0;
        d.candidates = 0;
        self.points.push(EvalPoint {
            episode: slot.episodes,
            env: slot.task.id(),
            success_rate: rate,
            loss_h: d.loss_h.take(),
            loss_g: d.loss_g.take(),
            loss_phi_own: d.phi_own.take(),
            loss_phi_rev: d.phi_rev.take(),
            filter_accept_rate: accept,
            shaping_mean: d.shaping.take(),
        });
        Ok(())
    }
}

/// Trains both tasks of `cfg.env` and reports every evaluation.
pub fn train(cfg: &RunConfig, observer: Option<Observer<'_>>) -> Result<Trained> {
    cfg.validate()?;
    let started = Instant::now();
    let tasks = build_tasks(cfg);
    let demos = build_demos(cfg)?;
    let agents = build_agents(cfg, &tasks)?;
    let spec = tasks[0].spec().clone();
    let dynamics = if cfg.augmentation {
        let mut rng = stream_with_index(cfg.seed, Stream::Init, INIT_DYNAMICS);
        Some(DynamicsModels::new(spec.state_dim, spec.action_dim, &cfg.dynamics_config(), &mut rng)?)
    } else {
        None
    };
    let potentials = if cfg.shaping {
        let mut rng = stream_with_index(cfg.seed, Stream::Init, INIT_POTENTIALS);
        Some(PotentialPair::new(spec.object_dim, cfg.mode, 2, cfg.potential_config(), &mut rng)?)
    } else {
        None
    };
    let filters = [
        FilterConfig::for_task(&tasks[0], cfg.beta, cfg.filter_norm)?,
        FilterConfig::for_task(&tasks[1], cfg.beta, cfg.filter_norm)?,
    ];
    let [ta, tb] = tasks;
    let slots = [Slot::new(cfg, ta, 0, &demos[0])?, Slot::new(cfg, tb, 1, &demos[1])?];
    let mut run = Run {
        cfg: cfg.clone(),
        slots,
        agents,
        dynamics,
        potentials,
        filters,
        points: Vec::new(),
        accepted: 0,
        candidates: 0,
        observer,
    };

    match cfg.alternation {
        Alternation::Step => {
            while !(run.finished(0) && run.finished(1)) {
                for k in 0..2 {
                    if !run.finished(k) {
                        run.step(k)?;
                    }
                }
            }
        }
        Alternation::Episode => {
            while !(run.finished(0) && run.finished(1)) {
                for k in 0..2 {
                    if !run.finished(k) {
                        while !run.step(k)? {}
                    }
                }
            }
        }
    }

    let metrics = RunMetrics {
        pair: cfg.env,
        episodes: cfg.episodes,
        horizon: cfg.horizon,
        points: run.points,
        env_steps: [run.slots[0].steps, run.slots[1].steps],
        train_successes: [run.slots[0].successes_seen, run.slots[1].successes_seen],
        filter_accept_rate: (run.candidates > 0).then(|| run.accepted as f64 / run.candidates as f64),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok(Trained {
        metrics,
        agents: run.agents,
        demos,
        buffer_lens: [run.slots[0].buffer.len(), run.slots[1].buffer.len()],
    })
}

pub fn run_training(cfg: &RunConfig) -> Result<RunMetrics> {
    Ok(train(cfg, None)?.metrics)
}
