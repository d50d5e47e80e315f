//! Potential models and potential-based reward shaping.
//!
//! Each task of a pair owns two potentials over the object state `x`:
//! `own`, fitted to the task's own successful trajectories, and `rev`,
//! fitted to the paired task's successful trajectories with time-reversed
//! labels. The shaping term is the mean of the two models'
//! `gamma * phi(x') - phi(x)`; a model with no data yet is identically zero.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;

use crate::nn::{batch_from_rows, Activation, AdamConfig, AdamState, DenseNet};
use crate::replay::{SuccessDataset, Transition};
use crate::sac::MultiTaskMode;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LabelScheme {
    Linear,
    Triangular,
    GeometricOriginal { gamma: f64 },
    Geometric { gamma: f64 },
}

impl LabelScheme {
    pub fn tag(&self) -> &'static str {
        match self {
            LabelScheme::Linear => "linear",
            LabelScheme::Triangular => "triangular",
            LabelScheme::GeometricOriginal { .. } => "geom-orig",
            LabelScheme::Geometric { .. } => "geom",
        }
    }

    /// Parses a scheme tag; geometric schemes take `gamma`.
    pub fn parse(tag: &str, gamma: f64) -> Result<Self> {
        match tag {
            "linear" => Ok(LabelScheme::Linear),
            "triangular" => Ok(LabelScheme::Triangular),
            "geom-orig" => Ok(LabelScheme::GeometricOriginal { gamma }),
            "geom" => Ok(LabelScheme::Geometric { gamma }),
            _ => Err(Error::Parse(format!(
                "unknown labeling scheme `{tag}` (expected linear, triangular, geom-orig or geom)"
            ))),
        }
    }

    /// Label of step `t` in a successful trajectory of length `n`.
    ///
    /// The geometric scheme is `0/0` for `n = 1`; that case is defined as
    /// the linear labels `[0, 1]`.
    pub fn label(&self, t: usize, n: usize) -> f64 {
        let (t_f, n_f) = (t as f64, n as f64);
        match *self {
            LabelScheme::Linear => t_f / n_f,
            LabelScheme::Triangular => t_f * (t_f + 1.0) / (n_f * (n_f + 1.0)),
            LabelScheme::GeometricOriginal { gamma } => gamma.powi((n - t) as i32),
            LabelScheme::Geometric { gamma } => {
                if n == 1 {
                    return t_f;
                }
                let base = gamma.powi((n - 1) as i32);
                (gamma.powi((n - t) as i32) - base) / (1.0 - base)
            }
        }
    }
}

impl fmt::Display for LabelScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// The `n + 1` labels of a trajectory of length `n`.
pub fn label_potentials(n: usize, scheme: LabelScheme) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Degenerate("trajectory of length 0 has no potential labels".into()));
    }
    Ok((0..=n).map(|t| scheme.label(t, n)).collect())
}

/// How paired-task trajectories are labeled for the `rev` potential.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RevLabels {
    /// State `t` of a paired trajectory gets `label(n - t)`: high where the
    /// paired task starts, which is where this task succeeds.
    #[default]
    Reversed,
    /// State `t` gets `label(t)`, as on the task's own trajectories.
    Forward,
}

impl RevLabels {
    pub fn tag(self) -> &'static str {
        match self {
            RevLabels::Reversed => "reversed",
            RevLabels::Forward => "forward",
        }
    }
}

impl FromStr for RevLabels {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reversed" => Ok(RevLabels::Reversed),
            "forward" => Ok(RevLabels::Forward),
            _ => Err(Error::Parse(format!("unknown rev-label reading `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialConfig {
    pub hidden_dim: usize,
    pub depth: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub scheme: LabelScheme,
    pub rev_labels: RevLabels,
}

impl Default for PotentialConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            depth: 2,
            lr: 1e-3,
            batch_size: 128,
            scheme: LabelScheme::Linear,
            rev_labels: RevLabels::Reversed,
        }
    }
}

/// One potential family (own or rev) for every task of a pair. Separate
/// networks per task in single mode, one shared network otherwise.
#[derive(Debug, Clone)]
pub struct PotentialModel {
    mode: MultiTaskMode,
    tasks: usize,
    nets: Vec<DenseNet>,
    opts: Vec<AdamState>,
    active: Vec<bool>,
}

impl PotentialModel {
    pub fn new<R: Rng + ?Sized>(
        object_dim: usize,
        mode: MultiTaskMode,
        tasks: usize,
        cfg: &PotentialConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let count = if mode == MultiTaskMode::Single { tasks } else { 1 };
        let nets = (0..count)
            .map(|_| {
                DenseNet::mlp(
                    mode.input_dim(object_dim, tasks),
                    cfg.hidden_dim,
                    cfg.depth,
                    mode.output_dim(1, tasks),
                    Activation::Sigmoid,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let opts = nets
            .iter()
            .map(|n| AdamState::new(n.num_params(), AdamConfig::with_lr(cfg.lr)))
            .collect();
        Ok(Self {
            mode,
            tasks,
            nets,
            opts,
            active: vec![false; tasks],
        })
    }

    fn slot(&self, task: usize) -> usize {
        if self.mode == MultiTaskMode::Single {
            task
        } else {
            0
        }
    }

    pub fn net(&self, task: usize) -> &DenseNet {
        &self.nets[self.slot(task)]
    }

    pub fn net_mut(&mut self, task: usize) -> &mut DenseNet {
        let k = self.slot(task);
        &mut self.nets[k]
    }

    /// Whether `task`'s potential has seen data.
    pub fn is_active(&self, task: usize) -> bool {
        self.active[task]
    }

    pub fn set_active(&mut self, task: usize, on: bool) {
        self.active[task] = on;
    }

    fn input(&self, x: &[f64], task: usize) -> Vec<f64> {
        self.mode.condition_input(x, task, self.tasks)
    }

    /// Raw network value, ignoring the activity flag.
    pub fn raw_value(&self, task: usize, x: &[f64]) -> Result<f64> {
        let out = self.net(task).forward(&self.input(x, task))?;
        Ok(out[self.mode.head(task, 1).start])
    }

    /// `phi_task(x)`, zero while inactive.
    pub fn value(&self, task: usize, x: &[f64]) -> Result<f64> {
        if !self.active[task] {
            return Ok(0.0);
        }
        self.raw_value(task, x)
    }

    /// Batched [`PotentialModel::value`].
    pub fn values(&self, task: usize, xs: &[&[f64]]) -> Result<Vec<f64>> {
        if !self.active[task] || xs.is_empty() {
            return Ok(vec![0.0; xs.len()]);
        }
        let rows: Vec<Vec<f64>> = xs.iter().map(|x| self.input(x, task)).collect();
        let net = self.net(task);
        let out = net.forward_batch(batch_from_rows(rows.iter().map(Vec::as_slice), net.input_dim()).view())?;
        let c = self.mode.head(task, 1).start;
        Ok((0..xs.len()).map(|i| out[[i, c]]).collect())
    }

    /// Mean squared error on `(x, label)` pairs and its parameter gradient.
    pub fn loss_and_grad(&self, task: usize, samples: &[(Vec<f64>, f64)]) -> Result<(f64, Vec<f64>)> {
        let net = self.net(task);
        let rows: Vec<Vec<f64>> = samples.iter().map(|(x, _)| self.input(x, task)).collect();
        let tape = net.forward_tape(batch_from_rows(rows.iter().map(Vec::as_slice), net.input_dim()).view())?;
        let c = self.mode.head(task, 1).start;
        let n = samples.len() as f64;
        let mut up = Array2::zeros(tape.output().dim());
        let mut loss = 0.0;
        for (i, (_, label)) in samples.iter().enumerate() {
            let d = tape.output()[[i, c]] - label;
            loss += d * d / n;
            up[[i, c]] = 2.0 * d / n;
        }
        let mut grads = net.zero_grads();
        net.backward_tape(&tape, up.view(), &mut grads)?;
        Ok((loss, grads))
    }

    /// One Adam step on `samples`; returns the pre-step loss.
    pub fn train_step(&mut self, task: usize, samples: &[(Vec<f64>, f64)], name: &str) -> Result<Option<f64>> {
        if samples.is_empty() {
            return Ok(None);
        }
        let (loss, grads) = self.loss_and_grad(task, samples)?;
        let k = self.slot(task);
        self.opts[k].step(self.nets[k].params_mut(), &grads, name)?;
        self.active[task] = true;
        Ok(Some(loss))
    }
}

/// Draws `batch` labelled object states: a uniform trajectory, then a
/// uniform index along it.
pub fn sample_labels<R: Rng + ?Sized>(
    dataset: &SuccessDataset,
    scheme: LabelScheme,
    reversed: bool,
    batch: usize,
    rng: &mut R,
) -> Vec<(Vec<f64>, f64)> {
    let trajs: Vec<&Vec<Vec<f64>>> = dataset.trajectories().filter(|t| t.len() >= 2).collect();
    if trajs.is_empty() {
        return Vec::new();
    }
    (0..batch)
        .map(|_| {
            let xs = trajs[rng.random_range(0..trajs.len())];
            let n = xs.len() - 1;
            let t = rng.random_range(0..=n);
            let label = if reversed { scheme.label(n - t, n) } else { scheme.label(t, n) };
            (xs[t].clone(), label)
        })
        .collect()
}

/// Own and reversed potentials for both tasks of a pair.
#[derive(Debug, Clone)]
pub struct PotentialPair {
    pub own: PotentialModel,
    pub rev: PotentialModel,
    cfg: PotentialConfig,
    object_dim: usize,
}

impl PotentialPair {
    pub fn new<R: Rng + ?Sized>(
        object_dim: usize,
        mode: MultiTaskMode,
        tasks: usize,
        cfg: PotentialConfig,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            own: PotentialModel::new(object_dim, mode, tasks, &cfg, rng)?,
            rev: PotentialModel::new(object_dim, mode, tasks, &cfg, rng)?,
            cfg,
            object_dim,
        })
    }

    pub fn config(&self) -> &PotentialConfig {
        &self.cfg
    }

    /// One step of each of `task`'s potentials: `own` on `own_data` with
    /// forward labels, `rev` on `rev_data` (the paired task's successes)
    /// with reversed labels. An empty dataset leaves its model untouched.
    pub fn train_potential_step<R: Rng + ?Sized>(
        &mut self,
        task: usize,
        own_data: &SuccessDataset,
        rev_data: &SuccessDataset,
        rng: &mut R,
    ) -> Result<(Option<f64>, Option<f64>)> {
        let scheme = self.cfg.scheme;
        let own = sample_labels(own_data, scheme, false, self.cfg.batch_size, rng);
        let rev = sample_labels(
            rev_data,
            scheme,
            self.cfg.rev_labels == RevLabels::Reversed,
            self.cfg.batch_size,
            rng,
        );
        let lo = self.own.train_step(task, &own, "potential-own")?;
        let lr = self.rev.train_step(task, &rev, "potential-rev")?;
        Ok((lo, lr))
    }

    /// Two-model mean potential of `task` at `x`.
    pub fn mean_potential(&self, task: usize, x: &[f64]) -> Result<f64> {
        Ok(0.5 * (self.own.value(task, x)? + self.rev.value(task, x)?))
    }

    /// `r + mean_m (gamma * phi_m(x') - phi_m(x))`.
    pub fn shape_reward(&self, t: &Transition, task: usize, gamma: f64) -> Result<f64> {
        let x = &t.s[..self.object_dim];
        let x_next = &t.s_next[..self.object_dim];
        Ok(t.r + gamma * self.mean_potential(task, x_next)? - self.mean_potential(task, x)?)
    }

    /// [`PotentialPair::shape_reward`] over a batch, using each
    /// transition's own task id.
    pub fn shape_batch(&self, batch: &[Transition], gamma: f64) -> Result<Vec<f64>> {
        let mut out: Vec<f64> = batch.iter().map(|t| t.r).collect();
        for task in 0..self.own.tasks {
            let idx: Vec<usize> = (0..batch.len()).filter(|&i| batch[i].task == task).collect();
            if idx.is_empty() {
                continue;
            }
            let xs: Vec<&[f64]> = idx.iter().map(|&i| &batch[i].s[..self.object_dim]).collect();
            let xn: Vec<&[f64]> = idx.iter().map(|&i| &batch[i].s_next[..self.object_dim]).collect();
            for model in [&self.own, &self.rev] {
                let (p, pn) = (model.values(task, &xs)?, model.values(task, &xn)?);
                for (k, &i) in idx.iter().enumerate() {
                    out[i] += 0.5 * (gamma * pn[k] - p[k]);
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::replay::Trajectory;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pair(seed: u64, object_dim: usize) -> PotentialPair {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = PotentialConfig {
            hidden_dim: 16,
            batch_size: 32,
            ..PotentialConfig::default()
        };
        PotentialPair::new(object_dim, MultiTaskMode::Single, 2, cfg, &mut rng).unwrap()
    }

    fn trajectory(xs: &[Vec<f64>]) -> Trajectory {
        let n = xs.len() - 1;
        Trajectory {
            transitions: (0..n)
                .map(|t| Transition {
                    s: xs[t].clone(),
                    a: vec![0.0],
                    r: f64::from(t + 1 == n),
                    s_next: xs[t + 1].clone(),
                    done: t + 1 == n,
                    success: t + 1 == n,
                    task: 0,
                })
                .collect(),
        }
    }

    fn constant(model: &mut PotentialModel, task: usize, c: f64) {
        let net = model.net_mut(task);
        let n = net.num_params();
        net.params_mut().iter_mut().for_each(|p| *p = 0.0);
        // sigmoid(logit(c)) == c
        net.params_mut()[n - 1] = (c / (1.0 - c)).ln();
        model.set_active(task, true);
    }

    #[test]
    fn linear_and_triangular_labels() {
        assert_eq!(label_potentials(4, LabelScheme::Linear).unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let tri = label_potentials(2, LabelScheme::Triangular).unwrap();
        assert_eq!(tri[0], 0.0);
        assert!((tri[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(tri[2], 1.0);
        assert!(label_potentials(0, LabelScheme::Linear).is_err());
    }

    #[test]
    fn endpoints() {
        for n in [1, 2, 5, 17] {
            for s in [LabelScheme::Linear, LabelScheme::Triangular, LabelScheme::Geometric { gamma: 0.99 }] {
                let l = label_potentials(n, s).unwrap();
                assert!((l[n] - 1.0).abs() < 1e-12, "{s} n={n}");
            }
            let g = label_potentials(n, LabelScheme::GeometricOriginal { gamma: 0.9 }).unwrap();
            assert_eq!(g[n], 1.0);
            assert_eq!(g[0], 0.9f64.powi(n as i32));
        }
    }

    #[test]
    fn scheme_tags_parse() {
        for tag in ["linear", "triangular", "geom-orig", "geom"] {
            assert_eq!(LabelScheme::parse(tag, 0.99).unwrap().tag(), tag);
        }
        assert!(LabelScheme::parse("cubic", 0.99).is_err());
    }

    #[test]
    fn constant_potentials_shape_by_discount_gap() {
        let mut p = pair(0, 1);
        constant(&mut p.own, 0, 0.5);
        constant(&mut p.rev, 0, 0.5);
        let t = &trajectory(&[vec![0.1], vec![0.2]]).transitions[0];
        let t = Transition { r: 0.0, ..t.clone() };
        assert!((p.shape_reward(&t, 0, 0.99).unwrap() - (-0.005)).abs() < 1e-12);
    }

    #[test]
    fn inactive_potentials_do_not_shape() {
        let p = pair(1, 1);
        let t = trajectory(&[vec![0.1], vec![0.2]]).transitions[0].clone();
        assert_eq!(p.shape_reward(&t, 0, 0.99).unwrap(), t.r);
    }

    #[test]
    fn zero_to_one_potential_gives_one_point_nine_nine() {
        // phi(x) = sigmoid(800 * x): 0 at x = -1, 1 at x = 1
        let mut p = pair(3, 1);
        for m in [&mut p.own, &mut p.rev] {
            let net = m.net_mut(0);
            let dims = net.dims().to_vec();
            net.params_mut().iter_mut().for_each(|v| *v = 0.0);
            let params = net.params_mut();
            // pass x through the first unit of each tanh layer
            let mut offset = 0;
            for w in dims.windows(2) {
                params[offset] = if offset + w[0] * w[1] + w[1] == params.len() { 800.0 } else { 5.0 };
                offset += w[0] * w[1] + w[1];
            }
            m.set_active(0, true);
        }
        let t = Transition {
            s: vec![-1.0],
            a: vec![0.0],
            r: 1.0,
            s_next: vec![1.0],
            done: true,
            success: true,
            task: 0,
        };
        assert_eq!(p.mean_potential(0, &[-1.0]).unwrap(), 0.0);
        assert_eq!(p.mean_potential(0, &[1.0]).unwrap(), 1.0);
        assert!((p.shape_reward(&t, 0, 0.99).unwrap() - 1.99).abs() < 1e-12);
    }

    #[test]
    fn constant_state_trajectory_regresses_to_half() {
        let mut p = pair(4, 1);
        let xs = vec![vec![0.3]; 11];
        let mut own = SuccessDataset::new(1, None);
        own.record_trajectory(&trajectory(&xs));
        let empty = SuccessDataset::new(1, None);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1500 {
            p.train_potential_step(0, &own, &empty, &mut rng).unwrap();
        }
        let v = p.own.value(0, &[0.3]).unwrap();
        assert!((v - 0.5).abs() < 0.05, "{v}");
        assert!(!p.rev.is_active(0));
    }

    #[test]
    fn single_trajectory_is_interpolated() {
        let mut p = pair(5, 1);
        let xs: Vec<Vec<f64>> = (0..=10).map(|t| vec![-1.0 + 0.2 * t as f64]).collect();
        let mut own = SuccessDataset::new(1, None);
        own.record_trajectory(&trajectory(&xs));
        let mut rev = SuccessDataset::new(1, None);
        rev.record_trajectory(&trajectory(&xs));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            p.train_potential_step(0, &own, &rev, &mut rng).unwrap();
        }
        let labels = label_potentials(10, LabelScheme::Linear).unwrap();
        for (t, x) in xs.iter().enumerate() {
            let own_err = (p.own.value(0, x).unwrap() - labels[t]).abs();
            let rev_err = (p.rev.value(0, x).unwrap() - labels[10 - t]).abs();
            assert!(own_err < 0.05 && rev_err < 0.05, "t={t}: {own_err} {rev_err}");
        }
    }

    #[test]
    fn empty_own_dataset_leaves_own_model() {
        let mut p = pair(6, 1);
        let before = p.own.net(0).clone();
        let empty = SuccessDataset::new(1, None);
        let mut rev = SuccessDataset::new(1, None);
        rev.record_trajectory(&trajectory(&[vec![0.0], vec![0.5]]));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (lo, lr) = p.train_potential_step(0, &empty, &rev, &mut rng).unwrap();
        assert!(lo.is_none() && lr.is_some());
        assert_eq!(p.own.net(0), &before);
    }

    #[test]
    fn batch_shaping_matches_per_transition() {
        for mode in [MultiTaskMode::Single, MultiTaskMode::TaskConditioned, MultiTaskMode::MultiHead] {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let mut p = PotentialPair::new(2, mode, 2, PotentialConfig { hidden_dim: 8, ..Default::default() }, &mut rng).unwrap();
            for task in 0..2 {
                p.own.set_active(task, true);
            }
            p.rev.set_active(1, true);
            let batch: Vec<Transition> = (0..6)
                .map(|i| Transition {
                    s: vec![0.1 * i as f64, -0.2, 0.0],
                    a: vec![0.0],
                    r: f64::from(i % 2 == 0),
                    s_next: vec![0.1 * i as f64 + 0.05, 0.3, 1.0],
                    done: false,
                    success: false,
                    task: i % 2,
                })
                .collect();
            let shaped = p.shape_batch(&batch, 0.97).unwrap();
            for (t, v) in batch.iter().zip(&shaped) {
                assert!((p.shape_reward(t, t.task, 0.97).unwrap() - v).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn telescoping_sum(seed in 0u64..1000, len in 1usize..40, gamma in 0.5f64..1.0) {
            let mut p = pair(seed, 2);
            p.own.set_active(0, true);
            p.rev.set_active(0, seed % 3 != 0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xs: Vec<Vec<f64>> = (0..=len).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
            let traj = trajectory(&xs);
            let mut lhs = 0.0;
            for (t, tr) in traj.transitions.iter().enumerate() {
                lhs += gamma.powi(t as i32) * (p.shape_reward(tr, 0, gamma).unwrap() - tr.r);
            }
            let rhs = gamma.powi(len as i32) * p.mean_potential(0, &xs[len]).unwrap() - p.mean_potential(0, &xs[0]).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-9, "{} vs {}", lhs, rhs);
        }
    }
}
