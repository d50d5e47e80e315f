//! Soft actor-critic with twin critics, target critics and a trainable
//! temperature, plus the two multi-task variants.
//!
//! In `task-cond` mode every network input is extended with a one-hot task
//! embedding; in `multi-head` mode inputs are unchanged and each network's
//! output layer carries one head per task.

use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use ndarray::{s, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::nn::{
    batch_from_rows, row, Activation, AdamConfig, AdamState, DenseNet, LogStdBounds,
    SquashedGaussian,
};
use crate::replay::Transition;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MultiTaskMode {
    Single,
    TaskConditioned,
    MultiHead,
}

impl MultiTaskMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MultiTaskMode::Single => "single",
            MultiTaskMode::TaskConditioned => "task-cond",
            MultiTaskMode::MultiHead => "multi-head",
        }
    }

    pub fn input_dim(self, base: usize, tasks: usize) -> usize {
        match self {
            MultiTaskMode::TaskConditioned => base + tasks,
            _ => base,
        }
    }

    pub fn output_dim(self, base: usize, tasks: usize) -> usize {
        match self {
            MultiTaskMode::MultiHead => base * tasks,
            _ => base,
        }
    }

    /// Network input for `s` on `task`.
    pub fn condition_input(self, s: &[f64], task: usize, tasks: usize) -> Vec<f64> {
        let mut v = s.to_vec();
        if self == MultiTaskMode::TaskConditioned {
            v.extend(TaskEmbedding::new(task, tasks).one_hot());
        }
        v
    }

    /// Output components belonging to `task`.
    pub fn head(self, task: usize, base: usize) -> Range<usize> {
        match self {
            MultiTaskMode::MultiHead => task * base..(task + 1) * base,
            _ => 0..base,
        }
    }
}

impl fmt::Display for MultiTaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MultiTaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(MultiTaskMode::Single),
            "task-cond" => Ok(MultiTaskMode::TaskConditioned),
            "multi-head" => Ok(MultiTaskMode::MultiHead),
            _ => Err(Error::Parse(format!(
                "unknown mode `{s}` (expected single, task-cond or multi-head)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskEmbedding {
    pub task: usize,
    pub tasks: usize,
}

impl TaskEmbedding {
    pub fn new(task: usize, tasks: usize) -> Self {
        assert!(task < tasks, "task {task} out of range for {tasks} tasks");
        Self { task, tasks }
    }

    pub fn one_hot(&self) -> Vec<f64> {
        (0..self.tasks).map(|i| if i == self.task { 1.0 } else { 0.0 }).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SacConfig {
    pub hidden_dim: usize,
    pub depth: usize,
    pub lr: f64,
    pub lr_alpha: f64,
    pub gamma: f64,
    pub tau: f64,
    pub init_temperature: f64,
    /// Defaults to `-action_dim`.
    pub target_entropy: Option<f64>,
    pub actor_update_freq: u64,
    pub target_update_freq: u64,
    pub log_std_bounds: LogStdBounds,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            depth: 2,
            lr: 1e-3,
            lr_alpha: 1e-3,
            gamma: 0.99,
            tau: 0.01,
            init_temperature: 0.1,
            target_entropy: None,
            actor_update_freq: 2,
            target_update_freq: 2,
            log_std_bounds: LogStdBounds::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    Stochastic,
    Deterministic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticLoss {
    pub losses: [f64; 2],
    pub grads: [Vec<f64>; 2],
    pub targets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorLoss {
    pub loss: f64,
    pub grads: Vec<f64>,
    pub log_probs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: Option<f64>,
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct SacAgent {
    state_dim: usize,
    action_dim: usize,
    mode: MultiTaskMode,
    tasks: usize,
    cfg: SacConfig,
    target_entropy: f64,
    pub actor: DenseNet,
    pub critics: [DenseNet; 2],
    pub targets: [DenseNet; 2],
    pub log_alpha: f64,
    actor_opt: AdamState,
    critic_opt: [AdamState; 2],
    alpha_opt: AdamState,
    updates: u64,
}

fn normal_rows<R: Rng + ?Sized>(rng: &mut R, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect()
}

impl SacAgent {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        mode: MultiTaskMode,
        tasks: usize,
        cfg: SacConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if tasks == 0 || (mode != MultiTaskMode::Single && tasks < 2) {
            return Err(Error::InvalidConfig(format!("{mode} mode with {tasks} tasks")));
        }
        if !(cfg.tau > 0.0 && cfg.tau <= 1.0) {
            return Err(Error::InvalidConfig(format!("tau must lie in (0, 1], got {}", cfg.tau)));
        }
        if cfg.init_temperature <= 0.0 {
            return Err(Error::InvalidConfig("initial temperature must be positive".into()));
        }
        let s_in = mode.input_dim(state_dim, tasks);
        let actor = DenseNet::mlp(
            s_in,
            cfg.hidden_dim,
            cfg.depth,
            mode.output_dim(2 * action_dim, tasks),
            Activation::Identity,
            rng,
        )?;
        let q_out = mode.output_dim(1, tasks);
        let mut critic = || {
            DenseNet::mlp(s_in + action_dim, cfg.hidden_dim, cfg.depth, q_out, Activation::Identity, rng)
        };
        let critics = [critic()?, critic()?];
        let targets = critics.clone();
        let adam = AdamConfig::with_lr(cfg.lr);
        Ok(Self {
            state_dim,
            action_dim,
            mode,
            tasks,
            target_entropy: cfg.target_entropy.unwrap_or(-(action_dim as f64)),
            actor_opt: AdamState::new(actor.num_params(), adam),
            critic_opt: [
                AdamState::new(critics[0].num_params(), adam),
                AdamState::new(critics[1].num_params(), adam),
            ],
            alpha_opt: AdamState::new(1, AdamConfig::with_lr(cfg.lr_alpha)),
            log_alpha: cfg.init_temperature.ln(),
            actor,
            critics,
            targets,
            cfg,
            updates: 0,
        })
    }

    pub fn config(&self) -> &SacConfig {
        &self.cfg
    }

    pub fn mode(&self) -> MultiTaskMode {
        self.mode
    }

    pub fn tasks(&self) -> usize {
        self.tasks
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn target_entropy(&self) -> f64 {
        self.target_entropy
    }

    /// Completed calls to [`SacAgent::update`].
    pub fn updates(&self) -> u64 {
        self.updates
    }

    fn task_of(&self, t: &Transition) -> usize {
        if self.tasks == 1 {
            0
        } else {
            t.task
        }
    }

    pub fn condition_input(&self, s: &[f64], task: usize) -> Vec<f64> {
        self.mode.condition_input(s, task, self.tasks)
    }

    fn check_state(&self, s: &[f64], task: usize) -> Result<()> {
        if s.len() != self.state_dim {
            return Err(Error::dims("SacAgent (state)", self.state_dim, s.len()));
        }
        if task >= self.tasks {
            return Err(Error::OutOfBounds(format!("task {task} with {} tasks", self.tasks)));
        }
        Ok(())
    }

    /// Raw actor output for `task`'s head.
    pub fn actor_raw(&self, s: &[f64], task: usize) -> Result<Vec<f64>> {
        self.check_state(s, task)?;
        let out = self.actor.forward(&self.condition_input(s, task))?;
        Ok(out[self.mode.head(task, 2 * self.action_dim)].to_vec())
    }

    pub fn policy(&self, s: &[f64], task: usize, noise: &[f64]) -> Result<SquashedGaussian> {
        SquashedGaussian::forward(&self.actor_raw(s, task)?, noise, self.cfg.log_std_bounds)
    }

    pub fn select_action<R: Rng + ?Sized>(
        &self,
        s: &[f64],
        task: usize,
        mode: ActionMode,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        match mode {
            ActionMode::Deterministic => {
                let zeros = vec![0.0; self.action_dim];
                Ok(self.policy(s, task, &zeros)?.output.deterministic())
            }
            ActionMode::Stochastic => {
                let noise = normal_rows(rng, 1, self.action_dim).remove(0);
                Ok(self.policy(s, task, &noise)?.output.sample)
            }
        }
    }

    fn critic_inputs(&self, states: &[&[f64]], actions: &[&[f64]], tasks: &[usize]) -> Array2<f64> {
        let rows: Vec<Vec<f64>> = states
            .iter()
            .zip(actions)
            .zip(tasks)
            .map(|((s, a), &k)| {
                let mut v = self.condition_input(s, k);
                v.extend_from_slice(a);
                v
            })
            .collect();
        batch_from_rows(rows.iter().map(Vec::as_slice), self.mode.input_dim(self.state_dim, self.tasks) + self.action_dim)
    }

    fn q_column(&self, out: &Array2<f64>, tasks: &[usize]) -> Vec<f64> {
        tasks
            .iter()
            .enumerate()
            .map(|(i, &k)| out[[i, self.mode.head(k, 1).start]])
            .collect()
    }

    /// Squashed samples for `states` under the current actor.
    fn sample_batch(
        &self,
        states: &[&[f64]],
        tasks: &[usize],
        noise: &[Vec<f64>],
    ) -> Result<(Vec<SquashedGaussian>, ndarray::Array2<f64>, crate::nn::Tape)> {
        let rows: Vec<Vec<f64>> = states.iter().zip(tasks).map(|(s, &k)| self.condition_input(s, k)).collect();
        let input = batch_from_rows(rows.iter().map(Vec::as_slice), self.actor.input_dim());
        let tape = self.actor.forward_tape(input.view())?;
        let head = 2 * self.action_dim;
        let heads = tasks
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let r = self.mode.head(k, head);
                let raw = &row(tape.output(), i)[r];
                SquashedGaussian::forward(raw, &noise[i], self.cfg.log_std_bounds)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((heads, input, tape))
    }

    /// Per-critic mean squared Bellman error with twin-target bootstrapping.
    /// `next_noise` drives the next-action samples.
    pub fn critic_loss(&self, batch: &[Transition], rewards: &[f64], next_noise: &[Vec<f64>]) -> Result<CriticLoss> {
        if batch.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        if rewards.len() != batch.len() || next_noise.len() != batch.len() {
            return Err(Error::dims("SacAgent::critic_loss", batch.len(), rewards.len().min(next_noise.len())));
        }
        let n = batch.len() as f64;
        let tasks: Vec<usize> = batch.iter().map(|t| self.task_of(t)).collect();
        let next_states: Vec<&[f64]> = batch.iter().map(|t| t.s_next.as_slice()).collect();
        let (next_pi, _, _) = self.sample_batch(&next_states, &tasks, next_noise)?;
        let next_actions: Vec<&[f64]> = next_pi.iter().map(|p| p.output.sample.as_slice()).collect();
        let next_in = self.critic_inputs(&next_states, &next_actions, &tasks);
        let tq0 = self.q_column(&self.targets[0].forward_batch(next_in.view())?, &tasks);
        let tq1 = self.q_column(&self.targets[1].forward_batch(next_in.view())?, &tasks);
        let alpha = self.alpha();
        let targets: Vec<f64> = batch
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if t.done {
                    rewards[i]
                } else {
                    let v = tq0[i].min(tq1[i]) - alpha * next_pi[i].output.log_prob;
                    rewards[i] + self.cfg.gamma * v
                }
            })
            .collect();

        let states: Vec<&[f64]> = batch.iter().map(|t| t.s.as_slice()).collect();
        let actions: Vec<&[f64]> = batch.iter().map(|t| t.a.as_slice()).collect();
        let input = self.critic_inputs(&states, &actions, &tasks);
        let mut losses = [0.0; 2];
        let mut grads = [Vec::new(), Vec::new()];
        for j in 0..2 {
            let tape = self.critics[j].forward_tape(input.view())?;
            let q = self.q_column(tape.output(), &tasks);
            let mut up = Array2::zeros(tape.output().dim());
            let mut loss = 0.0;
            for i in 0..batch.len() {
                let d = q[i] - targets[i];
                loss += d * d / n;
                up[[i, self.mode.head(tasks[i], 1).start]] = 2.0 * d / n;
            }
            let mut g = self.critics[j].zero_grads();
            self.critics[j].backward_tape(&tape, up.view(), &mut g)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite { model: format!("critic{j} loss") });
            }
            losses[j] = loss;
            grads[j] = g;
        }
        Ok(CriticLoss { losses, grads, targets })
    }

    /// `mean(alpha * log pi(a|s) - min_j Q_j(s, a))` over reparameterized
    /// samples driven by `noise`, with its gradient on the actor parameters.
    pub fn actor_loss(&self, batch: &[Transition], noise: &[Vec<f64>]) -> Result<ActorLoss> {
        if batch.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        if noise.len() != batch.len() {
            return Err(Error::dims("SacAgent::actor_loss", batch.len(), noise.len()));
        }
        let n = batch.len() as f64;
        let alpha = self.alpha();
        let tasks: Vec<usize> = batch.iter().map(|t| self.task_of(t)).collect();
        let states: Vec<&[f64]> = batch.iter().map(|t| t.s.as_slice()).collect();
        let (pi, _, actor_tape) = self.sample_batch(&states, &tasks, noise)?;
        let actions: Vec<&[f64]> = pi.iter().map(|p| p.output.sample.as_slice()).collect();
        let input = self.critic_inputs(&states, &actions, &tasks);
        let tapes = [
            self.critics[0].forward_tape(input.view())?,
            self.critics[1].forward_tape(input.view())?,
        ];
        let q = [self.q_column(tapes[0].output(), &tasks), self.q_column(tapes[1].output(), &tasks)];

        let mut loss = 0.0;
        let mut ups = [Array2::zeros(tapes[0].output().dim()), Array2::zeros(tapes[1].output().dim())];
        let mut chosen = vec![0usize; batch.len()];
        for i in 0..batch.len() {
            let j = if q[0][i] <= q[1][i] { 0 } else { 1 };
            chosen[i] = j;
            loss += (alpha * pi[i].output.log_prob - q[j][i]) / n;
            ups[j][[i, self.mode.head(tasks[i], 1).start]] = 1.0;
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite { model: "actor loss".into() });
        }
        // d min(Q) / d a through whichever critic is smaller per sample
        let mut dq_da = Array2::<f64>::zeros((batch.len(), self.action_dim));
        let a_cols = input.ncols() - self.action_dim..input.ncols();
        for j in 0..2 {
            let mut sink = self.critics[j].zero_grads();
            let dx = self.critics[j].backward_tape(&tapes[j], ups[j].view(), &mut sink)?;
            for i in 0..batch.len() {
                if chosen[i] == j {
                    dq_da.row_mut(i).assign(&dx.slice(s![i, a_cols.clone()]));
                }
            }
        }
        let head = 2 * self.action_dim;
        let mut up = Array2::zeros(actor_tape.output().dim());
        for i in 0..batch.len() {
            let d_sample: Vec<f64> = dq_da.row(i).iter().map(|g| -g / n).collect();
            let g_raw = pi[i].backward(&d_sample, alpha / n);
            let r = self.mode.head(tasks[i], head);
            for (k, c) in r.enumerate() {
                up[[i, c]] = g_raw[k];
            }
        }
        let mut grads = self.actor.zero_grads();
        self.actor.backward_tape(&actor_tape, up.view(), &mut grads)?;
        Ok(ActorLoss {
            loss,
            grads,
            log_probs: pi.iter().map(|p| p.output.log_prob).collect(),
        })
    }

    /// `mean(-exp(log_alpha) * (log_prob + target_entropy))` on detached
    /// log-probabilities, and its derivative in `log_alpha`.
    pub fn temperature_loss(&self, log_probs: &[f64]) -> (f64, f64) {
        let alpha = self.alpha();
        let n = log_probs.len().max(1) as f64;
        let loss = log_probs
            .iter()
            .map(|lp| -alpha * (lp + self.target_entropy))
            .sum::<f64>()
            / n;
        (loss, loss)
    }

    pub fn soft_update_targets(&mut self, tau: f64) -> Result<()> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::InvalidConfig(format!("tau must lie in (0, 1], got {tau}")));
        }
        for j in 0..2 {
            self.targets[j].soft_update_from(&self.critics[j], tau)?;
        }
        Ok(())
    }

    /// One learner step on `batch` with (already shaped) `rewards`: critics
    /// every call, actor and temperature every `actor_update_freq` calls,
    /// targets every `target_update_freq` calls.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &[Transition], rewards: &[f64], rng: &mut R) -> Result<UpdateStats> {
        let next_noise = normal_rows(rng, batch.len(), self.action_dim);
        let critic = self.critic_loss(batch, rewards, &next_noise)?;
        for j in 0..2 {
            self.critic_opt[j].step(self.critics[j].params_mut(), &critic.grads[j], &format!("critic{j}"))?;
        }
        self.updates += 1;
        let mut stats = UpdateStats {
            critic_loss: 0.5 * (critic.losses[0] + critic.losses[1]),
            actor_loss: None,
            alpha: self.alpha(),
        };
        if self.updates % self.cfg.actor_update_freq.max(1) == 0 {
            let noise = normal_rows(rng, batch.len(), self.action_dim);
            let actor = self.actor_loss(batch, &noise)?;
            self.actor_opt.step(self.actor.params_mut(), &actor.grads, "actor")?;
            let (_, g_alpha) = self.temperature_loss(&actor.log_probs);
            let mut la = [self.log_alpha];
            self.alpha_opt.step(&mut la, &[g_alpha], "log_alpha")?;
            self.log_alpha = la[0];
            stats.actor_loss = Some(actor.loss);
            stats.alpha = self.alpha();
        }
        if self.updates % self.cfg.target_update_freq.max(1) == 0 {
            self.soft_update_targets(self.cfg.tau)?;
        }
        Ok(stats)
    }

    /// Writes `actor.txt`, `critic{0,1}.txt`, `target{0,1}.txt` and a
    /// `manifest.txt` with the temperature and counters.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.actor.save(&dir.join("actor.txt"))?;
        for j in 0..2 {
            self.critics[j].save(&dir.join(format!("critic{j}.txt")))?;
            self.targets[j].save(&dir.join(format!("target{j}.txt")))?;
        }
        let manifest = format!(
            "sac 1\nstate_dim {}\naction_dim {}\nmode {}\ntasks {}\nlog_alpha {:?}\ntarget_entropy {:?}\nupdates {}\n\
             files actor.txt critic0.txt critic1.txt target0.txt target1.txt\n",
            self.state_dim, self.action_dim, self.mode, self.tasks, self.log_alpha, self.target_entropy, self.updates
        );
        std::fs::write(dir.join("manifest.txt"), manifest)?;
        Ok(())
    }

    /// Restores networks, temperature and counters saved by
    /// [`SacAgent::save`]; optimizer moments restart from zero.
    pub fn load(dir: &Path, cfg: SacConfig) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join("manifest.txt"))?;
        let field = |key: &str| -> Result<String> {
            text.lines()
                .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(' ')))
                .map(str::to_owned)
                .ok_or_else(|| Error::Parse(format!("manifest lacks `{key}`")))
        };
        let num = |key: &str| -> Result<f64> {
            field(key)?.parse::<f64>().map_err(|e| Error::Parse(format!("{key}: {e}")))
        };
        let state_dim = num("state_dim")? as usize;
        let action_dim = num("action_dim")? as usize;
        let mode: MultiTaskMode = field("mode")?.parse()?;
        let tasks = num("tasks")? as usize;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut agent = Self::new(state_dim, action_dim, mode, tasks, cfg, &mut rng)?;
        agent.actor = DenseNet::load(&dir.join("actor.txt"))?;
        for j in 0..2 {
            agent.critics[j] = DenseNet::load(&dir.join(format!("critic{j}.txt")))?;
            agent.targets[j] = DenseNet::load(&dir.join(format!("target{j}.txt")))?;
        }
        agent.log_alpha = num("log_alpha")?;
        agent.target_entropy = num("target_entropy")?;
        agent.updates = num("updates")? as u64;
        Ok(agent)
    }
}
