//! Episodic training loop and greedy rollouts.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::actor_critic::{ActorCritic, AgentDims, AgentKind};
use super::AgentError;
use crate::config::AgentConfig;
use crate::env::{OffloadEnv, StepInfo};
use crate::nn::{ReplayBuffer, Transition};

/// Summary of one episode. Cost fields average the non-overload steps and are
/// NaN when the first decision already overloaded a server.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub reward: f64,
    pub steps: usize,
    pub cost: f64,
    pub latency: f64,
    pub energy: f64,
    pub utilization: f64,
    pub overloaded: bool,
}

#[derive(Default)]
struct CostAccumulator {
    n: usize,
    cost: f64,
    latency: f64,
    energy: f64,
    utilization: f64,
}

impl CostAccumulator {
    fn add(&mut self, info: &StepInfo) {
        if let StepInfo::Cost(c) = info {
            self.n += 1;
            self.cost += c.cost;
            self.latency += c.latency;
            self.energy += c.energy;
            self.utilization += c.mean_utilization();
        }
    }

    fn record(&self, episode: usize, reward: f64, steps: usize, overloaded: bool) -> EpisodeRecord {
        let n = self.n as f64;
        let mean = |v: f64| if self.n == 0 { f64::NAN } else { v / n };
        EpisodeRecord {
            episode,
            reward,
            steps,
            cost: mean(self.cost),
            latency: mean(self.latency),
            energy: mean(self.energy),
            utilization: mean(self.utilization),
            overloaded,
        }
    }
}

/// Seeds for episode resets, derived from the run seed.
pub fn episode_seeds(seed: u64) -> impl Iterator<Item = u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    std::iter::repeat_with(move || rng.next_u64())
}

pub fn dims_for(env: &OffloadEnv) -> AgentDims {
    AgentDims {
        state: env.observation_len(),
        n_blocks: env.n_mecs(),
        block_width: env.block_width(),
    }
}

/// Builds an agent sized for `env` and trains it.
pub fn train(
    kind: AgentKind,
    env: &mut OffloadEnv,
    config: &AgentConfig,
    episodes: usize,
    seed: u64,
) -> Result<(ActorCritic, Vec<EpisodeRecord>), AgentError> {
    let mut agent = ActorCritic::new(kind, dims_for(env), config.clone(), *env.scaling(), seed);
    let curve = train_agent(&mut agent, env, episodes, seed)?;
    Ok((agent, curve))
}

/// Runs `episodes` exploratory episodes, storing every transition and
/// updating once per step as soon as the buffer holds a full batch.
pub fn train_agent(
    agent: &mut ActorCritic,
    env: &mut OffloadEnv,
    episodes: usize,
    seed: u64,
) -> Result<Vec<EpisodeRecord>, AgentError> {
    let expected = dims_for(env);
    if agent.dims != expected {
        return Err(AgentError::Dimension {
            what: "env/agent",
            expected: expected.state + expected.action(),
            got: agent.dims.state + agent.dims.action(),
        });
    }
    let mut buffer = ReplayBuffer::new(agent.config.buffer_capacity);
    let mut curve = Vec::with_capacity(episodes);
    let mut t: u64 = 0;
    for (episode, episode_seed) in episode_seeds(seed).take(episodes).enumerate() {
        let mut state = env.reset(episode_seed)?.features(&agent.scaling);
        let mut total = 0.0;
        let mut acc = CostAccumulator::default();
        let mut overloaded = false;
        loop {
            let action = agent.select_action(&state, true)?;
            let out = env.step(&action)?;
            let next = out.next_state.features(&agent.scaling);
            total += out.reward;
            acc.add(&out.info);
            overloaded |= matches!(out.info, StepInfo::Overload(_));
            buffer.push(Transition {
                state: std::mem::replace(&mut state, next.clone()),
                action,
                next_state: next,
                reward: out.reward,
                done: out.done,
            });
            t += 1;
            if buffer.len() >= agent.config.batch_size {
                agent.update(&buffer, t)?;
            }
            if out.done {
                break;
            }
        }
        curve.push(acc.record(episode, total, env.steps(), overloaded));
    }
    Ok(curve)
}

/// Noise-free episode from `env`'s current state. `env` must be freshly reset.
pub fn greedy_episode(agent: &ActorCritic, env: &mut OffloadEnv, episode: usize) -> Result<EpisodeRecord, AgentError> {
    let mut state = env.state().ok_or(crate::env::EnvError::NotReset)?.features(&agent.scaling);
    let mut total = 0.0;
    let mut acc = CostAccumulator::default();
    let mut overloaded = false;
    while !env.is_done() {
        let out = env.step(&agent.greedy_action(&state)?)?;
        total += out.reward;
        acc.add(&out.info);
        overloaded |= matches!(out.info, StepInfo::Overload(_));
        state = out.next_state.features(&agent.scaling);
    }
    Ok(acc.record(episode, total, env.steps(), overloaded))
}
