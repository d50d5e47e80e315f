//! Replay storage, the success-trajectory dataset behind the potential
//! models, and expert demonstrations.
//!
//! Demo file layout (text, one record per line):
//!
//! ```text
//! demos 1
//! env peg-insert
//! dims 5 3
//! count 10
//! <traj> <s[state_dim]> <a[action_dim]> <r> <s'[state_dim]> <done 0|1> <success 0|1>
//! ...
//! ```
//!
//! Reals use shortest round-trip formatting, so files reload bit-exactly.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::envs::{EnvId, Task};
use crate::rng::{self, Stream};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    /// Environment reward; never shaped.
    pub r: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
    pub success: bool,
    pub task: usize,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    data: Vec<Transition>,
    next: usize,
    pushes: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            data: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
            pushes: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Total number of pushes since creation.
    pub fn pushes(&self) -> u64 {
        self.pushes
    }

    pub fn push(&mut self, t: Transition) {
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
        self.pushes += 1;
    }

    /// Stored transitions, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.data.len() < self.capacity { 0 } else { self.next };
        self.data[split..].iter().chain(self.data[..split].iter())
    }

    /// `n` uniform draws with replacement.
    pub fn sample_minibatch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Transition>> {
        if self.data.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        Ok((0..n)
            .map(|_| self.data[rng.random_range(0..self.data.len())].clone())
            .collect())
    }
}

/// One complete episode.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn succeeded(&self) -> bool {
        self.transitions.last().is_some_and(|t| t.success)
    }

    /// The `n + 1` object states `x_0..x_n`.
    pub fn object_states(&self, object_dim: usize) -> Vec<Vec<f64>> {
        let mut xs: Vec<Vec<f64>> = self
            .transitions
            .iter()
            .map(|t| t.s[..object_dim].to_vec())
            .collect();
        if let Some(last) = self.transitions.last() {
            xs.push(last.s_next[..object_dim].to_vec());
        }
        xs
    }
}

/// Object-state sequences of successful episodes, newest last.
#[derive(Debug, Clone)]
pub struct SuccessDataset {
    object_dim: usize,
    cap: Option<usize>,
    trajectories: VecDeque<Vec<Vec<f64>>>,
    skipped: u64,
}

pub const DEFAULT_SUCCESS_CAP: usize = 50;

impl SuccessDataset {
    /// `cap = None` keeps every trajectory.
    pub fn new(object_dim: usize, cap: Option<usize>) -> Self {
        Self {
            object_dim,
            cap,
            trajectories: VecDeque::new(),
            skipped: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Failed trajectories seen and dropped.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    pub fn trajectories(&self) -> impl Iterator<Item = &Vec<Vec<f64>>> {
        self.trajectories.iter()
    }

    /// Stores the object states of `traj` if it ended in success.
    pub fn record_trajectory(&mut self, traj: &Trajectory) -> bool {
        if !traj.succeeded() {
            self.skipped += 1;
            return false;
        }
        self.trajectories.push_back(traj.object_states(self.object_dim));
        if let Some(cap) = self.cap {
            while self.trajectories.len() > cap {
                self.trajectories.pop_front();
            }
        }
        true
    }
}

/// Rolls out `task`'s scripted expert `k` times from demo-stream resets.
/// Every rollout must succeed within the horizon.
pub fn generate_demos(task: &Task, k: usize, seed: u64) -> Result<Vec<Trajectory>> {
    let mut seeds = rng::stream_with_index(seed, Stream::Demos, task.id().task_index() as u64);
    let task_index = task.id().task_index();
    (0..k)
        .map(|i| {
            let reset_seed: u64 = seeds.random();
            let traj = rollout(task, reset_seed, task_index, |s| task.scripted_expert(s));
            if traj.succeeded() {
                Ok(traj)
            } else {
                Err(Error::ExpertFailure {
                    env: task.id().to_string(),
                    detail: format!("demo {i} (reset seed {reset_seed}) ended without success after {} steps", traj.len()),
                })
            }
        })
        .collect()
}

/// One episode from `reset(seed)` under `policy`.
pub fn rollout(task: &Task, seed: u64, task_index: usize, mut policy: impl FnMut(&[f64]) -> Vec<f64>) -> Trajectory {
    let mut state = task.reset(seed);
    let mut transitions = Vec::new();
    for t in 0..task.spec().horizon {
        let s = state.full();
        let a = policy(&s);
        let out = task.step(&state, &a, t);
        let s_next = out.state.full();
        transitions.push(Transition {
            s,
            a: crate::envs::clamp_unit(&a),
            r: out.reward,
            s_next,
            done: out.done,
            success: out.success,
            task: task_index,
        });
        state = out.state;
        if out.done {
            break;
        }
    }
    Trajectory { transitions }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoFile {
    pub env: EnvId,
    pub state_dim: usize,
    pub action_dim: usize,
    pub trajectories: Vec<Trajectory>,
}

impl DemoFile {
    pub fn new(task: &Task, trajectories: Vec<Trajectory>) -> Self {
        Self {
            env: task.id(),
            state_dim: task.spec().state_dim,
            action_dim: task.spec().action_dim,
            trajectories,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "demos 1").unwrap();
        writeln!(out, "env {}", self.env).unwrap();
        writeln!(out, "dims {} {}", self.state_dim, self.action_dim).unwrap();
        writeln!(out, "count {}", self.trajectories.len()).unwrap();
        for (i, traj) in self.trajectories.iter().enumerate() {
            for t in &traj.transitions {
                let mut fields = vec![i.to_string()];
                fields.extend(t.s.iter().map(|v| format!("{v:?}")));
                fields.extend(t.a.iter().map(|v| format!("{v:?}")));
                fields.push(format!("{:?}", t.r));
                fields.extend(t.s_next.iter().map(|v| format!("{v:?}")));
                fields.push(u8::from(t.done).to_string());
                fields.push(u8::from(t.success).to_string());
                writeln!(out, "{}", fields.join(" ")).unwrap();
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Parse(format!("demo file: {m}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let mut header = |key: &str| -> Result<Vec<String>> {
            let line = lines.next().ok_or_else(|| bad(format!("missing `{key}` line")))?;
            let mut tok = line.split_whitespace();
            if tok.next() != Some(key) {
                return Err(bad(format!("expected `{key}`, got `{line}`")));
            }
            Ok(tok.map(str::to_owned).collect())
        };
        if header("demos")? != ["1"] {
            return Err(bad("unsupported version".into()));
        }
        let env: EnvId = header("env")?
            .first()
            .ok_or_else(|| bad("missing env id".into()))?
            .parse()?;
        let dims = header("dims")?;
        let parse_usize = |s: &str| s.parse::<usize>().map_err(|e| bad(format!("`{s}`: {e}")));
        if dims.len() != 2 {
            return Err(bad("dims needs state and action dimension".into()));
        }
        let (sd, ad) = (parse_usize(&dims[0])?, parse_usize(&dims[1])?);
        let count = parse_usize(
            header("count")?
                .first()
                .ok_or_else(|| bad("missing count".into()))?,
        )?;
        let width = 1 + 2 * sd + ad + 3;
        let task = env.task_index();
        let mut trajectories = vec![Trajectory::default(); count];
        for line in lines {
            let tok: Vec<&str> = line.split_whitespace().collect();
            if tok.len() != width {
                return Err(Error::dims("DemoFile::from_text", width, tok.len()));
            }
            let idx = parse_usize(tok[0])?;
            if idx >= count {
                return Err(bad(format!("trajectory index {idx} >= count {count}")));
            }
            let reals = tok[1..width - 2]
                .iter()
                .map(|t| t.parse::<f64>().map_err(|e| bad(format!("`{t}`: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            let flag = |t: &str| match t {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(bad(format!("bad flag `{t}`"))),
            };
            trajectories[idx].transitions.push(Transition {
                s: reals[..sd].to_vec(),
                a: reals[sd..sd + ad].to_vec(),
                r: reals[sd + ad],
                s_next: reals[sd + ad + 1..].to_vec(),
                done: flag(tok[width - 2])?,
                success: flag(tok[width - 1])?,
                task,
            });
        }
        Ok(Self {
            env,
            state_dim: sd,
            action_dim: ad,
            trajectories,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}
