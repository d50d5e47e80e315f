//! Plain per-task SAC with nothing borrowed from the paired task. Used as
//! the reference the full loop must reduce to when every component is off.

use super::{build_agents, build_demos, build_tasks, serving, uniform_action, Alternation, Observer, RunConfig, UpdateEvent};
use crate::envs::{clamp_unit, Env};
use crate::replay::{ReplayBuffer, Transition};
use crate::rng::{episode_seed, stream_with_index, Stream};
use crate::sac::{ActionMode, SacAgent};
use crate::{Error, Result};

/// Runs SAC on both tasks of `cfg.env` with the same seeding and
/// alternation as [`super::train`], ignoring the augmentation, filter and
/// shaping toggles.
pub fn run_plain_sac(cfg: &RunConfig, mut observer: Option<Observer<'_>>) -> Result<Vec<SacAgent>> {
    if cfg.alternation != Alternation::Step {
        return Err(Error::InvalidConfig("the plain SAC reference alternates per step".into()));
    }
    let tasks = build_tasks(cfg);
    let demos = build_demos(cfg)?;
    let mut agents = build_agents(cfg, &tasks)?;

    let mut envs = Vec::new();
    let mut buffers = Vec::new();
    let mut explore = Vec::new();
    let mut replay = Vec::new();
    let mut noise = Vec::new();
    for k in 0..2 {
        envs.push(Env::new(tasks[k].clone(), episode_seed(cfg.seed, k, 0)));
        let mut buf = ReplayBuffer::new(cfg.buffer_capacity)?;
        demos[k].iter().flat_map(|d| d.transitions.iter()).for_each(|t| buf.push(t.clone()));
        buffers.push(buf);
        explore.push(stream_with_index(cfg.seed, Stream::Exploration, k as u64));
        replay.push(stream_with_index(cfg.seed, Stream::Replay, k as u64));
        noise.push(stream_with_index(cfg.seed, Stream::SacNoise, k as u64));
    }
    let mut episodes = [0usize; 2];
    let mut steps = [0u64; 2];

    while episodes.iter().any(|&e| e < cfg.episodes) {
        for k in 0..2 {
            if episodes[k] >= cfg.episodes {
                continue;
            }
            let (agent, at) = serving(agents.len(), k);
            let s = envs[k].state().full();
            let a = if steps[k] < cfg.warmup as u64 {
                uniform_action(&mut explore[k])
            } else {
                agents[agent].select_action(&s, at, ActionMode::Stochastic, &mut explore[k])?
            };
            let out = envs[k].step(&a);
            buffers[k].push(Transition {
                s,
                a: clamp_unit(&a),
                r: out.reward,
                s_next: out.state.full(),
                done: out.success,
                success: out.success,
                task: k,
            });
            if steps[k] >= cfg.warmup as u64 {
                let batch = buffers[k].sample_minibatch(cfg.batch_size, &mut replay[k])?;
                let rewards: Vec<f64> = batch.iter().map(|t| t.r).collect();
                if let Some(obs) = observer.as_mut() {
                    obs(&UpdateEvent {
                        task: k,
                        batch: &batch,
                        rewards: &rewards,
                    });
                }
                agents[agent].update(&batch, &rewards, &mut noise[k])?;
            }
            steps[k] += 1;
            if out.done {
                episodes[k] += 1;
                envs[k].reset(episode_seed(cfg.seed, k, episodes[k] as u64));
            }
        }
    }
    Ok(agents)
}
