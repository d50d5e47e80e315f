//! Reversible task pairs.
//!
//! Each environment id names one task; tasks come in pairs that share their
//! dynamics and swap initial and goal conditions:
//!
//! | pair           | forward task          | reversed task          | regime  |
//! |----------------|-----------------------|------------------------|---------|
//! | `peg`          | `peg-insert`          | `peg-remove`           | full    |
//! | `door-outward` | `door-outward-open`   | `door-outward-close`   | full    |
//! | `door-inward`  | `door-inward-open`    | `door-inward-close`    | partial |
//!
//! States are `s = (x, y)`: the object part `x` first (door angle or peg
//! position), then the agent part `y` (effector position and grasp flag).
//! Dynamics are deterministic; rewards are sparse (1 on the step that
//! reaches the goal, which also ends the episode).

pub mod door;
pub mod peg;

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::replay::Transition;
use crate::{Error, Result};
pub use door::{Door, DoorVariant};
pub use peg::Peg;

/// Effector displacement per unit action.
pub const STEP_SCALE: f64 = 0.15;
pub const GRASP_RADIUS: f64 = 0.1;
pub const ACTION_DIM: usize = 3;
pub const DEFAULT_HORIZON: usize = 100;
/// Replay error below which a reversal counts as exact.
pub const EXACT_TOLERANCE: f64 = 1e-9;

pub fn clamp_unit(a: &[f64]) -> Vec<f64> {
    a.iter().map(|v| v.clamp(-1.0, 1.0)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Forward,
    Reversed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PairId {
    DoorInward,
    DoorOutward,
    Peg,
}

impl PairId {
    pub const ALL: [PairId; 3] = [PairId::DoorInward, PairId::DoorOutward, PairId::Peg];

    pub fn as_str(self) -> &'static str {
        match self {
            PairId::DoorInward => "door-inward",
            PairId::DoorOutward => "door-outward",
            PairId::Peg => "peg",
        }
    }

    /// `[forward, reversed]`; index is the task id used throughout a run.
    pub fn tasks(self) -> [EnvId; 2] {
        match self {
            PairId::DoorInward => [EnvId::DoorInwardOpen, EnvId::DoorInwardClose],
            PairId::DoorOutward => [EnvId::DoorOutwardOpen, EnvId::DoorOutwardClose],
            PairId::Peg => [EnvId::PegInsert, EnvId::PegRemove],
        }
    }
}

impl fmt::Display for PairId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PairId {
    type Err = Error;

    /// Accepts a pair id or the id of either of its tasks.
    fn from_str(s: &str) -> Result<Self> {
        PairId::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .or_else(|| s.parse::<EnvId>().ok().map(EnvId::pair))
            .ok_or_else(|| Error::Parse(format!("unknown environment pair `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvId {
    DoorInwardOpen,
    DoorInwardClose,
    DoorOutwardOpen,
    DoorOutwardClose,
    PegInsert,
    PegRemove,
}

impl EnvId {
    pub const ALL: [EnvId; 6] = [
        EnvId::DoorInwardOpen,
        EnvId::DoorInwardClose,
        EnvId::DoorOutwardOpen,
        EnvId::DoorOutwardClose,
        EnvId::PegInsert,
        EnvId::PegRemove,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvId::DoorInwardOpen => "door-inward-open",
            EnvId::DoorInwardClose => "door-inward-close",
            EnvId::DoorOutwardOpen => "door-outward-open",
            EnvId::DoorOutwardClose => "door-outward-close",
            EnvId::PegInsert => "peg-insert",
            EnvId::PegRemove => "peg-remove",
        }
    }

    pub fn pair(self) -> PairId {
        match self {
            EnvId::DoorInwardOpen | EnvId::DoorInwardClose => PairId::DoorInward,
            EnvId::DoorOutwardOpen | EnvId::DoorOutwardClose => PairId::DoorOutward,
            EnvId::PegInsert | EnvId::PegRemove => PairId::Peg,
        }
    }

    pub fn direction(self) -> Direction {
        match self {
            EnvId::DoorInwardOpen | EnvId::DoorOutwardOpen | EnvId::PegInsert => Direction::Forward,
            _ => Direction::Reversed,
        }
    }

    /// Position within the pair: 0 for the forward task, 1 for the reversed.
    pub fn task_index(self) -> usize {
        match self.direction() {
            Direction::Forward => 0,
            Direction::Reversed => 1,
        }
    }

    /// The other task of the pair.
    pub fn paired(self) -> EnvId {
        let [a, b] = self.pair().tasks();
        if a == self {
            b
        } else {
            a
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvId::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown environment `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GoalPredicate {
    AngleAtLeast(f64),
    AngleAtMost(f64),
    WithinDisc { center: [f64; 2], radius: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub id: EnvId,
    pub state_dim: usize,
    /// Leading `object_dim` components of the state form `x`.
    pub object_dim: usize,
    pub action_dim: usize,
    pub s_min: Vec<f64>,
    pub s_max: Vec<f64>,
    pub horizon: usize,
    pub goal: GoalPredicate,
}

impl EnvSpec {
    pub fn pair(&self) -> PairId {
        self.id.pair()
    }

    pub fn direction(&self) -> Direction {
        self.id.direction()
    }

    /// `||s_max - s_min||_2`.
    pub fn range_norm(&self) -> f64 {
        self.s_max
            .iter()
            .zip(&self.s_min)
            .map(|(hi, lo)| (hi - lo) * (hi - lo))
            .sum::<f64>()
            .sqrt()
    }

    pub fn object_part<'a>(&self, s: &'a [f64]) -> &'a [f64] {
        &s[..self.object_dim]
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(" ");
        let goal = match self.goal {
            GoalPredicate::AngleAtLeast(a) => format!("angle >= {a}"),
            GoalPredicate::AngleAtMost(a) => format!("angle <= {a}"),
            GoalPredicate::WithinDisc { center, radius } => {
                format!("|x - ({}, {})| < {radius}", center[0], center[1])
            }
        };
        format!(
            "id: {}\npair: {}\ndirection: {}\nstate_dim: {}\nobject_dim: {}\naction_dim: {}\n\
             s_min: {}\ns_max: {}\naction_bounds: [-1, 1]\nhorizon: {}\ngoal: {}\n",
            self.id,
            self.pair(),
            match self.direction() {
                Direction::Forward => "forward",
                Direction::Reversed => "reversed",
            },
            self.state_dim,
            self.object_dim,
            self.action_dim,
            join(&self.s_min),
            join(&self.s_max),
            self.horizon,
            goal
        )
    }
}

/// A state split into its object part `x` and agent part `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskState {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl TaskState {
    pub fn from_full(s: &[f64], object_dim: usize) -> Self {
        Self {
            x: s[..object_dim].to_vec(),
            y: s[object_dim..].to_vec(),
        }
    }

    pub fn full(&self) -> Vec<f64> {
        let mut s = self.x.clone();
        s.extend_from_slice(&self.y);
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: TaskState,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Mechanics {
    Door(Door),
    Peg(Peg),
}

/// Best single action for undoing a transition, and how far it lands
/// from the original state.
#[derive(Debug, Clone, PartialEq)]
pub struct Reversal {
    pub action: Vec<f64>,
    pub error: f64,
}

/// One task: spec plus deterministic dynamics. Stateless; see [`Env`] for
/// an episode-tracking instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    spec: EnvSpec,
    mechanics: Mechanics,
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

impl Task {
    pub fn new(id: EnvId) -> Self {
        Self::with_horizon(id, DEFAULT_HORIZON)
    }

    pub fn with_horizon(id: EnvId, horizon: usize) -> Self {
        let direction = id.direction();
        let (mechanics, s_min, s_max, goal) = match id.pair() {
            PairId::DoorInward | PairId::DoorOutward => {
                let variant = if id.pair() == PairId::DoorInward {
                    DoorVariant::Inward
                } else {
                    DoorVariant::Outward
                };
                let goal = match direction {
                    Direction::Forward => GoalPredicate::AngleAtLeast(door::OPEN_GOAL),
                    Direction::Reversed => GoalPredicate::AngleAtMost(door::CLOSED_GOAL),
                };
                (
                    Mechanics::Door(Door { variant, direction }),
                    vec![0.0, -1.0, -1.0, 0.0],
                    vec![FRAC_PI_2, 1.0, 1.0, 1.0],
                    goal,
                )
            }
            PairId::Peg => {
                let peg = Peg { direction };
                (
                    Mechanics::Peg(peg),
                    vec![-1.0, -1.0, -1.0, -1.0, 0.0],
                    vec![1.0, 1.0, 1.0, 1.0, 1.0],
                    GoalPredicate::WithinDisc {
                        center: peg.goal(),
                        radius: peg::SLOT_TOLERANCE,
                    },
                )
            }
        };
        let object_dim = if matches!(mechanics, Mechanics::Door(_)) { 1 } else { 2 };
        Self {
            spec: EnvSpec {
                id,
                state_dim: s_min.len(),
                object_dim,
                action_dim: ACTION_DIM,
                s_min,
                s_max,
                horizon: horizon.max(1),
                goal,
            },
            mechanics,
        }
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn id(&self) -> EnvId {
        self.spec.id
    }

    pub fn door(&self) -> Option<&Door> {
        match &self.mechanics {
            Mechanics::Door(d) => Some(d),
            Mechanics::Peg(_) => None,
        }
    }

    /// Initial state, deterministic per seed.
    pub fn reset(&self, seed: u64) -> TaskState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = match &self.mechanics {
            Mechanics::Door(d) => d.reset(&mut rng),
            Mechanics::Peg(p) => p.reset(&mut rng),
        };
        TaskState::from_full(&s, self.spec.object_dim)
    }

    /// Deterministic transition map on full state vectors. Actions are
    /// clamped to `[-1, 1]`.
    pub fn transition(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        debug_assert_eq!(s.len(), self.spec.state_dim);
        debug_assert_eq!(a.len(), self.spec.action_dim);
        match &self.mechanics {
            Mechanics::Door(d) => d.transition(s, a),
            Mechanics::Peg(p) => p.transition(s, a),
        }
    }

    fn goal_holds(&self, x: &[f64]) -> bool {
        match &self.mechanics {
            Mechanics::Door(d) => d.goal_reached(x[0]),
            Mechanics::Peg(p) => p.goal_reached([x[0], x[1]]),
        }
    }

    /// Sparse reward and success flag as a function of the object state
    /// only; the same predicate `step` uses.
    pub fn reward_oracle(&self, x: &[f64]) -> Result<(f64, bool)> {
        if x.len() != self.spec.object_dim {
            return Err(Error::dims("Task::reward_oracle", self.spec.object_dim, x.len()));
        }
        let within = x.iter().enumerate().all(|(i, v)| {
            v.is_finite() && *v >= self.spec.s_min[i] - 1e-12 && *v <= self.spec.s_max[i] + 1e-12
        });
        if !within {
            return Err(Error::OutOfBounds(format!(
                "object state {x:?} outside the bounds of {}",
                self.spec.id
            )));
        }
        let success = self.goal_holds(x);
        Ok((if success { 1.0 } else { 0.0 }, success))
    }

    /// One step from `s` after `elapsed` steps of the current episode.
    pub fn step(&self, s: &TaskState, a: &[f64], elapsed: usize) -> StepOutcome {
        let next = self.transition(&s.full(), a);
        let state = TaskState::from_full(&next, self.spec.object_dim);
        let success = self.goal_holds(&state.x);
        StepOutcome {
            state,
            reward: if success { 1.0 } else { 0.0 },
            done: success || elapsed + 1 >= self.spec.horizon,
            success,
        }
    }

    pub fn scripted_expert(&self, s: &[f64]) -> Vec<f64> {
        match &self.mechanics {
            Mechanics::Door(d) => d.expert(s),
            Mechanics::Peg(p) => p.expert(s),
        }
    }

    pub fn in_bounds(&self, s: &[f64]) -> bool {
        s.iter()
            .zip(self.spec.s_min.iter().zip(&self.spec.s_max))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// Searches for the single action that best undoes `s -> s_next`: the
    /// analytic reverse actions of each phase (grasped turn, attached
    /// carry, free motion, grasp toggle) plus a dense 21 x 21 x 2 grid.
    pub fn best_reversal(&self, s: &[f64], s_next: &[f64]) -> Reversal {
        let analytic = match &self.mechanics {
            Mechanics::Door(d) => d.reverse_candidates(s, s_next),
            Mechanics::Peg(p) => p.reverse_candidates(s, s_next),
        };
        let grid = (0..21).flat_map(|i| {
            (0..21).flat_map(move |j| {
                let ax = -1.0 + 0.1 * i as f64;
                let ay = -1.0 + 0.1 * j as f64;
                [vec![ax, ay, -1.0], vec![ax, ay, 1.0]]
            })
        });
        let mut best = Reversal {
            action: vec![0.0; ACTION_DIM],
            error: f64::INFINITY,
        };
        for a in analytic.into_iter().chain(grid) {
            let a = clamp_unit(&a);
            let err = euclid(&self.transition(s_next, &a), s);
            if err < best.error {
                best = Reversal { action: a, error: err };
            }
        }
        best
    }

    /// Whether some single action takes `t.s_next` back to `t.s` with
    /// replay error below `tolerance`.
    pub fn analytic_reversibility_label(&self, t: &Transition, tolerance: f64) -> bool {
        self.best_reversal(&t.s, &t.s_next).error < tolerance
    }
}

/// A task plus the current episode's state.
#[derive(Debug, Clone)]
pub struct Env {
    task: Task,
    state: TaskState,
    elapsed: usize,
}

impl Env {
    pub fn new(task: Task, seed: u64) -> Self {
        let state = task.reset(seed);
        Self {
            task,
            state,
            elapsed: 0,
        }
    }

    pub fn task(&self) -> &Task {
        &self.task
    }

    pub fn state(&self) -> &TaskState {
        &self.state
    }

    pub fn elapsed(&self) -> usize {
        self.elapsed
    }

    pub fn reset(&mut self, seed: u64) -> TaskState {
        self.state = self.task.reset(seed);
        self.elapsed = 0;
        self.state.clone()
    }

    pub fn step(&mut self, a: &[f64]) -> StepOutcome {
        let out = self.task.step(&self.state, a, self.elapsed);
        self.state = out.state.clone();
        self.elapsed += 1;
        out
    }
}
