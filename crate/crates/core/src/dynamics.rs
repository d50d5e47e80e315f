//! Shared forward and inverse dynamics models, trajectory reversal and the
//! dynamics-aware filter.
//!
//! Both networks work on state differences scaled by `delta_scale`:
//! the inverse model sees `(s, (s' - s) / delta_scale)` and the forward
//! model predicts `s + delta_scale * net(s, a)`. Both are fixed linear
//! reparametrisations of `h(s, s')` and `g(s, a)`.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;

use crate::envs::{clamp_unit, Task};
use crate::nn::{batch_from_rows, row, Activation, AdamConfig, AdamState, DenseNet};
use crate::replay::Transition;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorNorm {
    #[default]
    Euclidean,
    Max,
}

impl ErrorNorm {
    pub fn tag(self) -> &'static str {
        match self {
            ErrorNorm::Euclidean => "l2",
            ErrorNorm::Max => "max",
        }
    }

    pub fn of(self, a: &[f64], b: &[f64]) -> f64 {
        let diffs = a.iter().zip(b).map(|(x, y)| (x - y).abs());
        match self {
            ErrorNorm::Euclidean => diffs.map(|d| d * d).sum::<f64>().sqrt(),
            ErrorNorm::Max => diffs.fold(0.0, f64::max),
        }
    }
}

impl fmt::Display for ErrorNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ErrorNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(ErrorNorm::Euclidean),
            "max" => Ok(ErrorNorm::Max),
            _ => Err(Error::Parse(format!("unknown filter norm `{s}` (expected l2 or max)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    pub beta: f64,
    /// Norm of `s_max - s_min`, taken in `norm`.
    pub range_norm: f64,
    pub norm: ErrorNorm,
}

impl FilterConfig {
    pub fn new(beta: f64, range_norm: f64, norm: ErrorNorm) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidConfig(format!("beta must be positive, got {beta}")));
        }
        if !(range_norm > 0.0) {
            return Err(Error::InvalidConfig(format!("state range norm must be positive, got {range_norm}")));
        }
        Ok(Self { beta, range_norm, norm })
    }

    /// Filter for `task`'s state bounds.
    pub fn for_task(task: &Task, beta: f64, norm: ErrorNorm) -> Result<Self> {
        let spec = task.spec();
        Self::new(beta, norm.of(&spec.s_max, &spec.s_min), norm)
    }

    pub fn threshold(&self) -> f64 {
        self.beta * self.range_norm
    }

    /// Strict: an error equal to the threshold is rejected.
    pub fn accepts(&self, error: f64) -> bool {
        error < self.threshold()
    }
}

pub trait ForwardModel {
    fn predict_batch(&self, states: &[&[f64]], actions: &[&[f64]]) -> Result<Vec<Vec<f64>>>;

    fn predict(&self, s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        Ok(self.predict_batch(&[s], &[a])?.remove(0))
    }
}

pub trait InverseModel {
    fn infer_batch(&self, states: &[&[f64]], next_states: &[&[f64]]) -> Result<Vec<Vec<f64>>>;

    fn infer(&self, s: &[f64], s_next: &[f64]) -> Result<Vec<f64>> {
        Ok(self.infer_batch(&[s], &[s_next])?.remove(0))
    }
}

/// The true transition map as a forward model.
pub struct AnalyticForward<'a>(pub &'a Task);

impl ForwardModel for AnalyticForward<'_> {
    fn predict_batch(&self, states: &[&[f64]], actions: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        Ok(states.iter().zip(actions).map(|(s, a)| self.0.transition(s, a)).collect())
    }
}

/// Best single reversing action found by search on the true dynamics.
pub struct AnalyticInverse<'a>(pub &'a Task);

impl InverseModel for AnalyticInverse<'_> {
    fn infer_batch(&self, states: &[&[f64]], next_states: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        // the action that moves s to s' is the one that reverses s' -> s
        Ok(states
            .iter()
            .zip(next_states)
            .map(|(s, n)| self.0.best_reversal(n, s).action)
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsConfig {
    pub hidden_dim: usize,
    pub depth: usize,
    pub lr: f64,
    pub delta_scale: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            depth: 2,
            lr: 1e-3,
            delta_scale: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DynamicsModels {
    state_dim: usize,
    action_dim: usize,
    delta_scale: f64,
    pub h: DenseNet,
    pub g: DenseNet,
    h_opt: AdamState,
    g_opt: AdamState,
    skipped: u64,
}

impl DynamicsModels {
    pub fn new<R: rand::Rng + ?Sized>(state_dim: usize, action_dim: usize, cfg: &DynamicsConfig, rng: &mut R) -> Result<Self> {
        if !(cfg.delta_scale > 0.0) {
            return Err(Error::InvalidConfig("dynamics delta_scale must be positive".into()));
        }
        let h = DenseNet::mlp(2 * state_dim, cfg.hidden_dim, cfg.depth, action_dim, Activation::Identity, rng)?;
        let g = DenseNet::mlp(state_dim + action_dim, cfg.hidden_dim, cfg.depth, state_dim, Activation::Identity, rng)?;
        let adam = AdamConfig::with_lr(cfg.lr);
        Ok(Self {
            state_dim,
            action_dim,
            delta_scale: cfg.delta_scale,
            h_opt: AdamState::new(h.num_params(), adam),
            g_opt: AdamState::new(g.num_params(), adam),
            h,
            g,
            skipped: 0,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// Updates skipped because a loss or gradient was non-finite.
    pub fn skipped_steps(&self) -> u64 {
        self.skipped
    }

    pub fn h_input(&self, s: &[f64], s_next: &[f64]) -> Vec<f64> {
        let mut v = s.to_vec();
        v.extend(s.iter().zip(s_next).map(|(a, b)| (b - a) / self.delta_scale));
        v
    }

    pub fn g_input(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let mut v = s.to_vec();
        v.extend_from_slice(a);
        v
    }

    fn h_batch(&self, states: &[&[f64]], next_states: &[&[f64]]) -> Array2<f64> {
        let rows: Vec<Vec<f64>> = states.iter().zip(next_states).map(|(s, n)| self.h_input(s, n)).collect();
        batch_from_rows(rows.iter().map(Vec::as_slice), 2 * self.state_dim)
    }

    fn g_batch(&self, states: &[&[f64]], actions: &[&[f64]]) -> Array2<f64> {
        let rows: Vec<Vec<f64>> = states.iter().zip(actions).map(|(s, a)| self.g_input(s, a)).collect();
        batch_from_rows(rows.iter().map(Vec::as_slice), self.state_dim + self.action_dim)
    }

    /// `(L_h, L_g)` on `batch` with their parameter gradients.
    pub fn losses_and_grads(&self, batch: &[Transition]) -> Result<((f64, Vec<f64>), (f64, Vec<f64>))> {
        if batch.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let n = batch.len() as f64;
        let states: Vec<&[f64]> = batch.iter().map(|t| t.s.as_slice()).collect();
        let next: Vec<&[f64]> = batch.iter().map(|t| t.s_next.as_slice()).collect();
        let actions: Vec<&[f64]> = batch.iter().map(|t| t.a.as_slice()).collect();

        let h_tape = self.h.forward_tape(self.h_batch(&states, &next).view())?;
        let mut h_up = Array2::zeros(h_tape.output().dim());
        let mut loss_h = 0.0;
        for (i, t) in batch.iter().enumerate() {
            for k in 0..self.action_dim {
                let d = h_tape.output()[[i, k]] - t.a[k];
                loss_h += d * d / n;
                h_up[[i, k]] = 2.0 * d / n;
            }
        }
        let mut h_grads = self.h.zero_grads();
        self.h.backward_tape(&h_tape, h_up.view(), &mut h_grads)?;

        let g_tape = self.g.forward_tape(self.g_batch(&states, &actions).view())?;
        let mut g_up = Array2::zeros(g_tape.output().dim());
        let mut loss_g = 0.0;
        for (i, t) in batch.iter().enumerate() {
            for k in 0..self.state_dim {
                let pred = t.s[k] + self.delta_scale * g_tape.output()[[i, k]];
                let d = pred - t.s_next[k];
                loss_g += d * d / n;
                g_up[[i, k]] = 2.0 * d * self.delta_scale / n;
            }
        }
        let mut g_grads = self.g.zero_grads();
        self.g.backward_tape(&g_tape, g_up.view(), &mut g_grads)?;
        Ok(((loss_h, h_grads), (loss_g, g_grads)))
    }

    /// One Adam step on each model. A non-finite loss or gradient skips
    /// the step and returns `None`.
    pub fn train_dynamics_step(&mut self, batch: &[Transition]) -> Result<Option<(f64, f64)>> {
        let ((lh, gh), (lg, gg)) = self.losses_and_grads(batch)?;
        let finite = lh.is_finite() && lg.is_finite() && gh.iter().chain(&gg).all(|v| v.is_finite());
        if !finite {
            self.skipped += 1;
            return Ok(None);
        }
        self.h_opt.step(self.h.params_mut(), &gh, "inverse dynamics h")?;
        self.g_opt.step(self.g.params_mut(), &gg, "forward dynamics g")?;
        Ok(Some((lh, lg)))
    }

    /// Sets the Adam step size of both models.
    pub fn set_lr(&mut self, lr: f64) {
        self.h_opt.config.lr = lr;
        self.g_opt.config.lr = lr;
    }
}

impl ForwardModel for DynamicsModels {
    fn predict_batch(&self, states: &[&[f64]], actions: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        if states.is_empty() {
            return Ok(Vec::new());
        }
        let out = self.g.forward_batch(self.g_batch(states, actions).view())?;
        Ok(states
            .iter()
            .enumerate()
            .map(|(i, s)| s.iter().zip(row(&out, i)).map(|(x, d)| x + self.delta_scale * d).collect())
            .collect())
    }
}

impl InverseModel for DynamicsModels {
    fn infer_batch(&self, states: &[&[f64]], next_states: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        if states.is_empty() {
            return Ok(Vec::new());
        }
        let out = self.h.forward_batch(self.h_batch(states, next_states).view())?;
        Ok((0..states.len()).map(|i| row(&out, i)).collect())
    }
}

fn relabel(source: &Transition, action: Vec<f64>, oracle: &Task, task_id: usize) -> Result<Transition> {
    let spec = oracle.spec();
    let (r, success) = oracle.reward_oracle(&source.s[..spec.object_dim])?;
    Ok(Transition {
        s: source.s_next.clone(),
        a: clamp_unit(&action),
        r,
        s_next: source.s.clone(),
        done: success,
        success,
        task: task_id,
    })
}

/// `(s', h(s', s), s)` with reward and success from `oracle` (the current
/// task) evaluated on the object part of `s`.
pub fn reverse_transition<H: InverseModel + ?Sized>(
    h: &H,
    t: &Transition,
    oracle: &Task,
    task_id: usize,
) -> Result<Transition> {
    relabel(t, h.infer(&t.s_next, &t.s)?, oracle, task_id)
}

/// Replay error `||s' - g(s, a)||` of a candidate.
pub fn filter_error<G: ForwardModel + ?Sized>(g: &G, candidate: &Transition, norm: ErrorNorm) -> Result<f64> {
    Ok(norm.of(&candidate.s_next, &g.predict(&candidate.s, &candidate.a)?))
}

pub fn filter_reversed<G: ForwardModel + ?Sized>(g: &G, candidate: &Transition, cfg: &FilterConfig) -> Result<bool> {
    Ok(cfg.accepts(filter_error(g, candidate, cfg.norm)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AugmentStats {
    pub candidates: usize,
    pub accepted: usize,
    /// Mean replay error over all candidates.
    pub mean_error: f64,
}

impl AugmentStats {
    pub fn accept_rate(&self) -> Option<f64> {
        (self.candidates > 0).then(|| self.accepted as f64 / self.candidates as f64)
    }
}

/// Reverses every transition of `d_b` (sampled from the paired task) and
/// keeps the candidates the filter accepts; `filter = None` keeps all.
pub fn augment_minibatch<H, G>(
    h: &H,
    g: &G,
    d_b: &[Transition],
    filter: Option<&FilterConfig>,
    oracle: &Task,
    task_id: usize,
) -> Result<(Vec<Transition>, AugmentStats)>
where
    H: InverseModel + ?Sized,
    G: ForwardModel + ?Sized,
{
    if d_b.is_empty() {
        return Ok((Vec::new(), AugmentStats::default()));
    }
    let next: Vec<&[f64]> = d_b.iter().map(|t| t.s_next.as_slice()).collect();
    let prev: Vec<&[f64]> = d_b.iter().map(|t| t.s.as_slice()).collect();
    let actions = h.infer_batch(&next, &prev)?;
    let candidates = d_b
        .iter()
        .zip(actions)
        .map(|(t, a)| relabel(t, a, oracle, task_id))
        .collect::<Result<Vec<_>>>()?;
    let norm = filter.map(|f| f.norm).unwrap_or_default();
    let cs: Vec<&[f64]> = candidates.iter().map(|c| c.s.as_slice()).collect();
    let ca: Vec<&[f64]> = candidates.iter().map(|c| c.a.as_slice()).collect();
    let predicted = g.predict_batch(&cs, &ca)?;
    let errors: Vec<f64> = candidates.iter().zip(&predicted).map(|(c, p)| norm.of(&c.s_next, p)).collect();
    let mut stats = AugmentStats {
        candidates: candidates.len(),
        accepted: 0,
        mean_error: errors.iter().sum::<f64>() / errors.len() as f64,
    };
    let kept: Vec<Transition> = candidates
        .into_iter()
        .zip(&errors)
        .filter(|(_, &e)| filter.is_none_or(|f| f.accepts(e)))
        .map(|(c, _)| c)
        .collect();
    stats.accepted = kept.len();
    Ok((kept, stats))
}
