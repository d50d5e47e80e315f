#![allow(dead_code)]

use std::f64::consts::FRAC_PI_2;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use trdrl::dynamics::{
    filter_reversed, reverse_transition, DynamicsConfig, DynamicsModels, ErrorNorm, FilterConfig, ForwardModel, InverseModel,
};
use trdrl::envs::{PairId, Task};
use trdrl::replay::{rollout, Transition};

#[derive(Debug, Clone, Copy)]
enum Behaviour {
    Expert,
    Noisy,
    Random,
    /// Grasps the handle and turns it towards targets redrawn at random.
    Wander,
}

/// Transitions from both door-inward tasks under a mix of expert, noisy
/// expert, uniform-random and wandering episodes.
pub fn door_inward_transitions(episodes: usize, seed: u64) -> Vec<Transition> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.4).unwrap();
    let tasks = PairId::DoorInward.tasks().map(Task::new);
    let mut out = Vec::new();
    for ep in 0..episodes {
        let k = ep % 2;
        let task = &tasks[k];
        let behaviour = *[Behaviour::Expert, Behaviour::Noisy, Behaviour::Random, Behaviour::Wander]
            .choose(&mut rng)
            .unwrap();
        let reset = rng.random();
        let mut policy_rng = ChaCha8Rng::seed_from_u64(rng.random());
        let mut target = policy_rng.random_range(0.0..FRAC_PI_2);
        let traj = rollout(task, reset, k, |s| match behaviour {
            Behaviour::Expert => task.scripted_expert(s),
            Behaviour::Noisy => {
                let mut a = task.scripted_expert(s);
                for v in a.iter_mut().take(2) {
                    *v += noise.sample(&mut policy_rng);
                }
                a
            }
            Behaviour::Random => (0..3).map(|_| policy_rng.random_range(-1.0..1.0)).collect(),
            Behaviour::Wander => {
                if policy_rng.random_bool(0.15) {
                    target = policy_rng.random_range(0.0..FRAC_PI_2);
                }
                let mut a = task.door().unwrap().grasp_towards(s, target);
                for v in a.iter_mut().take(2) {
                    *v += 0.5 * noise.sample(&mut policy_rng);
                }
                a
            }
        });
        out.extend(traj.transitions);
    }
    out
}

/// Dynamics models fitted on uniform minibatches of `data`. The step size
/// drops tenfold for the last quarter of the steps.
pub fn fit_dynamics(data: &[Transition], cfg: &DynamicsConfig, steps: usize, batch: usize, seed: u64) -> DynamicsModels {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (sd, ad) = (data[0].s.len(), data[0].a.len());
    let mut models = DynamicsModels::new(sd, ad, cfg, &mut rng).unwrap();
    for step in 0..steps {
        if step == steps * 3 / 4 {
            models.set_lr(0.1 * cfg.lr);
        }
        let b: Vec<Transition> = (0..batch).map(|_| data[rng.random_range(0..data.len())].clone()).collect();
        models.train_dynamics_step(&b).unwrap();
    }
    models
}

/// Dynamics models for the door-inward pair, trained on 1000 mixed
/// episodes.
pub fn door_inward_models(seed: u64) -> DynamicsModels {
    let data = door_inward_transitions(1000, seed);
    let cfg = DynamicsConfig { depth: 4, ..DynamicsConfig::default() };
    fit_dynamics(&data, &cfg, 60_000, 128, seed + 1)
}

/// Free-effector push that turned the door.
pub fn is_push(t: &Transition) -> bool {
    t.s[3] < 0.5 && t.s_next[3] < 0.5 && t.s_next[0] != t.s[0]
}

/// Grasped step that turned the door.
pub fn is_grasped_turn(t: &Transition) -> bool {
    t.s[3] > 0.5 && t.s_next[3] > 0.5 && t.s_next[0] != t.s[0]
}

/// Fraction of `data` where the filter's verdict on the reversed candidate
/// (built with `h`, replayed with `g`) matches the analytic label at the
/// filter threshold.
pub fn filter_agreement<H, G>(pair: PairId, h: &H, g: &G, data: &[Transition], beta: f64) -> f64
where
    H: InverseModel + ?Sized,
    G: ForwardModel + ?Sized,
{
    let tasks = pair.tasks().map(Task::new);
    let agree = data
        .iter()
        .filter(|t| {
            let oracle = &tasks[1 - t.task];
            let cfg = FilterConfig::for_task(oracle, beta, ErrorNorm::Euclidean).unwrap();
            let cand = reverse_transition(h, t, oracle, 1 - t.task).unwrap();
            filter_reversed(g, &cand, &cfg).unwrap() == oracle.analytic_reversibility_label(t, cfg.threshold())
        })
        .count();
    agree as f64 / data.len() as f64
}
