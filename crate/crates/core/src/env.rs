//! Episodic environment around the cost model.
//!
//! Observation: arrivals, server capacities, link rates and the previous
//! step's system latency and energy. Action: one real block per MEC, mapped
//! to offloading ratios by a softmax. An episode ends after `max_steps`
//! decisions or as soon as a decision overloads any server.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{EnvConfig, RewardMode, SimConfig};
use crate::model::{resample_vehicles, sample_arrivals, ModelError, Topology, TrafficProfile};
use crate::queueing::{
    check_constraints, downlink_rate, system_cost, uniform_policy, uplink_rate, CostBreakdown, CostWeights,
    OffloadDecision, QueueError, Violation,
};

pub const ACTION_MIN: f64 = -1.0;
pub const ACTION_MAX: f64 = 1.0;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("step called on a finished episode; call reset first")]
    StepAfterDone,
    #[error("step called before reset")]
    NotReset,
    #[error("action has {got} entries, expected {expected}")]
    ActionShape { got: usize, expected: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Cost(#[from] QueueError),
}

/// Flat observation `[lambda, mu_mec, mu_fog, B_down, B_up, L_sys, E_sys]`
/// of length `2N + 3NM + 2`, in physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub values: Vec<f64>,
    pub n_mecs: usize,
    pub fogs_per_mec: usize,
}

pub fn observation_len(n_mecs: usize, fogs_per_mec: usize) -> usize {
    2 * n_mecs + 3 * n_mecs * fogs_per_mec + 2
}

impl EnvState {
    fn build(topology: &Topology, arrivals: &[f64], latency: f64, energy: f64) -> Self {
        let n = topology.n_mecs();
        let m = topology.fogs_per_mec;
        let mut values = Vec::with_capacity(observation_len(n, m));
        values.extend_from_slice(arrivals);
        values.extend(topology.mecs.iter().map(|s| s.service_rate));
        values.extend(topology.fogs.iter().map(|f| f.service_rate));
        for i in 0..n {
            values.extend((0..m).map(|k| downlink_rate(topology, i, k)));
        }
        for i in 0..n {
            values.extend((0..m).map(|k| uplink_rate(topology, i, k)));
        }
        values.push(latency);
        values.push(energy);
        Self {
            values,
            n_mecs: n,
            fogs_per_mec: m,
        }
    }

    pub fn latency(&self) -> f64 {
        self.values[self.values.len() - 2]
    }

    pub fn energy(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Observation divided feature-wise by the fixed scaling constants.
    pub fn features(&self, scaling: &FeatureScaling) -> Vec<f64> {
        let n = self.n_mecs;
        let nm = n * self.fogs_per_mec;
        let len = self.values.len();
        self.values
            .iter()
            .enumerate()
            .map(|(idx, &v)| {
                let scale = if idx < 2 * n + nm {
                    scaling.rate
                } else if idx < len - 2 {
                    scaling.link
                } else if idx == len - 2 {
                    scaling.latency
                } else {
                    scaling.energy
                };
                v / scale
            })
            .collect()
    }
}

/// Fixed per-feature divisors, derived from the configured ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub rate: f64,
    pub link: f64,
    pub latency: f64,
    pub energy: f64,
}

impl FeatureScaling {
    pub fn new(topology: &Topology, profile: &TrafficProfile, guard: f64) -> Self {
        let mec_max = topology.mecs.iter().map(|s| s.service_rate).fold(0.0, f64::max);
        let mec_min = topology.mecs.iter().map(|s| s.service_rate).fold(f64::INFINITY, f64::min);
        let fog_max = topology
            .fogs
            .iter()
            .map(|f| f64::from(topology.b_max) * f.per_vehicle_rate)
            .fold(0.0, f64::max);
        let rate = mec_max.max(fog_max).max(profile.max_rate());
        let link = (0..topology.n_mecs())
            .flat_map(|i| (0..topology.fogs_per_mec).map(move |k| (i, k)))
            .map(|(i, k)| downlink_rate(topology, i, k).max(uplink_rate(topology, i, k)))
            .fold(0.0, f64::max);
        let energy_per_rate = topology
            .fogs
            .iter()
            .map(|f| f.cpu_cycles_per_bit * f.energy_per_cycle * topology.packet_size)
            .fold(0.0, f64::max);
        Self {
            rate,
            link: if link > 0.0 { link } else { 1.0 },
            latency: 1.0 / ((1.0 - guard) * mec_min),
            energy: (energy_per_rate * profile.max_rate()).max(f64::MIN_POSITIVE),
        }
    }
}

/// Per-MEC softmax over the `1 + h + q` entries of each block.
pub fn normalize_action(raw: &[f64], h: usize, q: usize) -> OffloadDecision {
    softmax_decision(raw, h, q, 1.0)
}

/// Per-MEC softmax of `logits / temperature`.
pub fn softmax_decision(logits: &[f64], h: usize, q: usize, temperature: f64) -> OffloadDecision {
    let width = 1 + h + q;
    assert_eq!(logits.len() % width, 0, "action length must be a multiple of the block width");
    let mut ratios = Vec::with_capacity(logits.len());
    for block in logits.chunks(width) {
        let peak = block.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = block.iter().map(|a| ((a - peak) / temperature).exp()).collect();
        let total: f64 = exps.iter().sum();
        ratios.extend(exps.iter().map(|e| e / total));
    }
    OffloadDecision::from_flat(h, q, ratios)
}

/// Clips every entry to `[ACTION_MIN, ACTION_MAX]`.
pub fn clip_action(raw: &[f64]) -> Vec<f64> {
    raw.iter().map(|a| a.clamp(ACTION_MIN, ACTION_MAX)).collect()
}

/// Reward for cost `cost` after previous cost `previous`.
pub fn reward(cost: f64, previous: f64, reward_scale: f64, mode: RewardMode) -> f64 {
    match mode {
        RewardMode::Verbatim if cost <= previous => cost / reward_scale,
        RewardMode::Verbatim | RewardMode::NegativeCost => -cost / reward_scale,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepInfo {
    Cost(CostBreakdown),
    Overload(Vec<Violation>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: EnvState,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone)]
pub struct OffloadEnv {
    base: Topology,
    profile: TrafficProfile,
    weights: CostWeights,
    config: EnvConfig,
    guard: f64,
    scaling: FeatureScaling,
    topology: Topology,
    arrivals: Vec<f64>,
    steps: usize,
    previous_cost: f64,
    state: Option<EnvState>,
    done: bool,
}

impl OffloadEnv {
    pub fn new(topology: Topology, profile: TrafficProfile, weights: CostWeights, config: EnvConfig, guard: f64) -> Self {
        let scaling = FeatureScaling::new(&topology, &profile, guard);
        Self {
            arrivals: vec![0.0; topology.n_mecs()],
            topology: topology.clone(),
            base: topology,
            profile,
            weights,
            config,
            guard,
            scaling,
            steps: 0,
            previous_cost: f64::INFINITY,
            state: None,
            done: true,
        }
    }

    pub fn from_config(config: &SimConfig, topology: Topology) -> Result<Self, ModelError> {
        Ok(Self::new(
            topology,
            TrafficProfile::from_config(&config.traffic)?,
            CostWeights::new(config.cost.sigma, config.env.reward_scale),
            config.env.clone(),
            config.cost.stability_guard,
        ))
    }

    pub fn observation_len(&self) -> usize {
        observation_len(self.base.n_mecs(), self.base.fogs_per_mec)
    }

    /// Length of the joint raw action.
    pub fn action_len(&self) -> usize {
        self.base.n_mecs() * self.base.block_width()
    }

    pub fn block_width(&self) -> usize {
        self.base.block_width()
    }

    pub fn n_mecs(&self) -> usize {
        self.base.n_mecs()
    }

    pub fn scaling(&self) -> &FeatureScaling {
        &self.scaling
    }

    pub fn weights(&self) -> &CostWeights {
        &self.weights
    }

    pub fn guard(&self) -> f64 {
        self.guard
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn base_topology(&self) -> &Topology {
        &self.base
    }

    /// Topology of the current episode, after the vehicle resample.
    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn arrivals(&self) -> &[f64] {
        &self.arrivals
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn previous_cost(&self) -> f64 {
        self.previous_cost
    }

    /// Starts an episode with freshly drawn arrivals and vehicle counts.
    pub fn reset(&mut self, seed: u64) -> Result<EnvState, EnvError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arrivals = sample_arrivals(&self.profile, self.base.n_mecs(), rng.next_u64())?;
        let topology = resample_vehicles(&self.base, rng.next_u64());
        Ok(self.reset_to(topology, arrivals))
    }

    /// Starts an episode on a fixed snapshot.
    pub fn reset_to(&mut self, topology: Topology, arrivals: Vec<f64>) -> EnvState {
        assert_eq!(arrivals.len(), topology.n_mecs());
        self.topology = topology;
        self.arrivals = arrivals;
        self.steps = 0;
        self.done = false;
        self.previous_cost = self.uniform_cost();
        let state = EnvState::build(&self.topology, &self.arrivals, 0.0, 0.0);
        self.state = Some(state.clone());
        state
    }

    /// Cost of the equal split on the current snapshot; infinite when that
    /// split overloads a server.
    pub fn uniform_cost(&self) -> f64 {
        self.decision_cost(&uniform_policy(&self.topology))
            .map(|c| c.cost)
            .unwrap_or(f64::INFINITY)
    }

    /// Cost breakdown of `decision` on the current snapshot, or `None` when it
    /// violates a constraint.
    pub fn decision_cost(&self, decision: &OffloadDecision) -> Option<CostBreakdown> {
        if !check_constraints(decision, &self.arrivals, &self.topology, self.guard).is_empty() {
            return None;
        }
        system_cost(decision, &self.arrivals, &self.topology, &self.weights).ok()
    }

    pub fn state(&self) -> Option<&EnvState> {
        self.state.as_ref()
    }

    /// Decision applied for a raw action: clip, then softmax.
    pub fn normalize(&self, raw: &[f64]) -> OffloadDecision {
        softmax_decision(&clip_action(raw), self.base.h_neighbors, self.base.q_fogs, self.config.action_temperature)
    }

    pub fn step(&mut self, raw: &[f64]) -> Result<StepOutcome, EnvError> {
        if self.state.is_none() {
            return Err(EnvError::NotReset);
        }
        if self.done {
            return Err(EnvError::StepAfterDone);
        }
        if raw.len() != self.action_len() {
            return Err(EnvError::ActionShape {
                got: raw.len(),
                expected: self.action_len(),
            });
        }
        let decision = self.normalize(raw);
        self.apply(&decision)
    }

    /// Steps with an explicit decision instead of a raw action.
    pub fn step_decision(&mut self, decision: &OffloadDecision) -> Result<StepOutcome, EnvError> {
        if self.state.is_none() {
            return Err(EnvError::NotReset);
        }
        if self.done {
            return Err(EnvError::StepAfterDone);
        }
        if decision.as_slice().len() != self.action_len() {
            return Err(EnvError::ActionShape {
                got: decision.as_slice().len(),
                expected: self.action_len(),
            });
        }
        self.apply(decision)
    }

    fn apply(&mut self, decision: &OffloadDecision) -> Result<StepOutcome, EnvError> {
        self.steps += 1;
        let violations = check_constraints(decision, &self.arrivals, &self.topology, self.guard);
        if !violations.is_empty() {
            self.done = true;
            let state = self.state.clone().expect("checked above");
            return Ok(StepOutcome {
                next_state: state,
                reward: self.config.overload_penalty,
                done: true,
                info: StepInfo::Overload(violations),
            });
        }
        let breakdown = system_cost(decision, &self.arrivals, &self.topology, &self.weights)?;
        let r = reward(breakdown.cost, self.previous_cost, self.weights.reward_scale, self.config.reward_mode);
        self.previous_cost = breakdown.cost;
        self.done = self.steps >= self.config.max_steps;
        let state = EnvState::build(&self.topology, &self.arrivals, breakdown.latency, breakdown.energy);
        self.state = Some(state.clone());
        Ok(StepOutcome {
            next_state: state,
            reward: r,
            done: self.done,
            info: StepInfo::Cost(breakdown),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::generate_topology;

    fn desk_env() -> OffloadEnv {
        let cfg = SimConfig::desk();
        let topology = generate_topology(&cfg.topology, 1).unwrap();
        OffloadEnv::from_config(&cfg, topology).unwrap()
    }

    #[test]
    fn reset_is_deterministic() {
        let mut a = desk_env();
        let mut b = desk_env();
        assert_eq!(a.reset(3).unwrap(), b.reset(3).unwrap());
        assert_eq!(a.steps(), 0);
        let s = a.reset(4).unwrap();
        assert_eq!(s.latency(), 0.0);
        assert_eq!(s.energy(), 0.0);
    }

    #[test]
    fn observation_length() {
        assert_eq!(observation_len(4, 5), 70);
        let cfg = SimConfig::default();
        let t = generate_topology(&cfg.topology, 0).unwrap();
        let mut env = OffloadEnv::from_config(&cfg, t).unwrap();
        assert_eq!(env.reset(0).unwrap().values.len(), 70);
        assert_eq!(env.action_len(), 4 * 9);
    }

    #[test]
    fn softmax_examples() {
        let d = normalize_action(&[0.3; 8], 1, 2);
        assert!(d.as_slice().iter().all(|&r| (r - 0.25).abs() < 1e-15));
        let d = normalize_action(&[50.0, -50.0, -50.0, -50.0], 1, 2);
        assert!(d.local(0) > 1.0 - 1e-12);
        assert!(d.row(0)[1..].iter().all(|&r| r > 0.0 && r < 1e-40));
        let d = normalize_action(&[1.0, -1.0, -1.0, -1.0, 0.2, 0.9, -0.4, 0.0], 1, 2);
        for i in 0..2 {
            assert!((d.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn env_clips_before_softmax() {
        let env = desk_env();
        let d = env.normalize(&[50.0, -50.0, -50.0, -50.0, 0.0, 0.0, 0.0, 0.0]);
        let e2 = 2f64.exp();
        assert!((d.local(0) - e2 / (e2 + 3.0)).abs() < 1e-12);
    }

    #[test]
    fn reward_branches() {
        assert!((reward(10.0, 12.0, 100.0, RewardMode::Verbatim) - 0.10).abs() < 1e-12);
        assert!((reward(12.0, 10.0, 100.0, RewardMode::Verbatim) + 0.12).abs() < 1e-12);
        assert_eq!(reward(5.0, 5.0, 100.0, RewardMode::Verbatim), 0.05);
        assert_eq!(reward(5.0, 9.0, 100.0, RewardMode::NegativeCost), -0.05);
    }

    /// Action that keeps most traffic away from the MECs' own queues.
    fn spread_action(env: &OffloadEnv) -> Vec<f64> {
        let w = env.block_width();
        (0..env.action_len()).map(|i| if i % w == 0 { 0.3 } else { 0.0 }).collect()
    }

    #[test]
    fn ten_valid_steps_then_done() {
        let mut env = desk_env();
        let cfg = SimConfig::desk();
        let t = generate_topology(&cfg.topology, 1).unwrap();
        let arrivals = vec![40e6, 40e6];
        env.reset_to(t, arrivals);
        let a = spread_action(&env);
        for step in 1..=10 {
            let out = env.step(&a).unwrap();
            assert!(matches!(out.info, StepInfo::Cost(_)), "step {step} overloaded");
            assert_eq!(out.done, step == 10);
            if step > 1 {
                // Same decision, same cost: non-increasing branch.
                assert!(out.reward > 0.0);
            }
        }
        assert!(matches!(env.step(&a), Err(EnvError::StepAfterDone)));
    }

    #[test]
    fn overload_terminates() {
        let mut env = desk_env();
        let cfg = SimConfig::desk();
        let mut t = generate_topology(&cfg.topology, 1).unwrap();
        t.fogs[0].set_vehicle_count(1);
        env.reset_to(t, vec![80e6, 40e6]);
        // MEC 0 routes nearly everything to its first fog.
        let a = vec![-1.0, -1.0, 1.0, -1.0, 0.0, 0.0, 0.0, 0.0];
        let out = env.step(&a).unwrap();
        assert!(out.done);
        assert_eq!(out.reward, -1.0);
        match out.info {
            StepInfo::Overload(v) => assert!(!v.is_empty()),
            other => panic!("expected overload, got {other:?}"),
        }
        assert!(matches!(env.step(&a), Err(EnvError::StepAfterDone)));
    }

    #[test]
    fn step_requires_reset_and_shape() {
        let mut env = desk_env();
        assert!(matches!(env.step(&[0.0; 8]), Err(EnvError::NotReset)));
        env.reset(0).unwrap();
        assert!(matches!(env.step(&[0.0; 3]), Err(EnvError::ActionShape { got: 3, expected: 8 })));
    }

    #[test]
    fn trajectory_reproducible() {
        let run = || {
            let mut env = desk_env();
            let mut out = vec![env.reset(9).unwrap().values];
            for t in 0..10 {
                let a: Vec<f64> = (0..8).map(|i| ((i * 7 + t * 3) % 5) as f64 / 5.0 - 0.4).collect();
                let o = env.step(&a).unwrap();
                out.push(o.next_state.values.clone());
                out.push(vec![o.reward]);
                if o.done {
                    break;
                }
            }
            out
        };
        let a = run();
        let b = run();
        assert_eq!(
            a.iter().flatten().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.iter().flatten().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn features_are_moderate() {
        let mut env = desk_env();
        let s = env.reset(2).unwrap();
        let f = s.features(env.scaling());
        assert_eq!(f.len(), s.values.len());
        assert!(f.iter().all(|x| x.is_finite() && x.abs() <= 10.0));
    }
}
