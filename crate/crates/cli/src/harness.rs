//! Runs experiment specs: one independent replica per (algorithm, seed),
//! merged in a fixed order so outputs do not depend on scheduling.

use std::path::{Path, PathBuf};

use mecvf::agents::{
    dims_for, episode_seeds, greedy_episode, pso_optimize, sa_optimize, train, uniform_policy, ActorCritic, EpisodeRecord,
    SnapshotOracle,
};
use mecvf::config::SimConfig;
use mecvf::env::{reward, OffloadEnv, StepInfo};
use mecvf::model::{generate_topology, Topology};
use mecvf::queueing::OffloadDecision;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{io_error, HarnessError};
use crate::output::{write_outputs, OutputFiles};
use crate::spec::{Algorithm, ExperimentKind, ExperimentSpec};

/// One sample point of one replica.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub experiment: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub x: f64,
    pub reward: f64,
    pub cost: f64,
    pub latency: f64,
    pub energy: f64,
    pub utilization: f64,
    /// Fraction of the averaged episodes that ended in an overload.
    pub overload_rate: f64,
}

/// A policy that can be rolled out on a snapshot.
#[derive(Debug, Clone)]
pub enum Policy {
    Agent(Box<ActorCritic>),
    Uniform,
    /// Runs SA or PSO on every snapshot with the given evaluation budget.
    Search { algorithm: Algorithm, evaluations: usize },
}

/// Rolls out a fixed decision until the episode ends.
pub fn static_episode(env: &mut OffloadEnv, decision: &OffloadDecision, episode: usize) -> Result<EpisodeRecord, HarnessError> {
    let mut total = 0.0;
    let mut n = 0usize;
    let (mut cost, mut latency, mut energy, mut utilization) = (0.0, 0.0, 0.0, 0.0);
    let mut overloaded = false;
    while !env.is_done() {
        let out = env.step_decision(decision)?;
        total += out.reward;
        match &out.info {
            StepInfo::Cost(c) => {
                n += 1;
                cost += c.cost;
                latency += c.latency;
                energy += c.energy;
                utilization += c.mean_utilization();
            }
            StepInfo::Overload(_) => overloaded = true,
        }
    }
    let mean = |v: f64| if n == 0 { f64::NAN } else { v / n as f64 };
    Ok(EpisodeRecord {
        episode,
        reward: total,
        steps: env.steps(),
        cost: mean(cost),
        latency: mean(latency),
        energy: mean(energy),
        utilization: mean(utilization),
        overloaded,
    })
}

/// Greedy rollout of `policy` on the snapshot `env` was just reset to.
pub fn rollout(policy: &Policy, env: &mut OffloadEnv, sim: &SimConfig, seed: u64, episode: usize) -> Result<EpisodeRecord, HarnessError> {
    match policy {
        Policy::Agent(agent) => Ok(greedy_episode(agent, env, episode)?),
        Policy::Uniform => {
            let decision = uniform_policy(env.topology());
            static_episode(env, &decision, episode)
        }
        Policy::Search { algorithm, evaluations } => {
            let oracle = SnapshotOracle::new(
                env.topology().clone(),
                env.arrivals().to_vec(),
                *env.weights(),
                env.guard(),
                sim.metaheuristic.penalty_factor,
            );
            let result = match algorithm {
                Algorithm::Pso => pso_optimize(&oracle, &sim.metaheuristic, *evaluations, seed),
                _ => sa_optimize(&oracle, &sim.metaheuristic, *evaluations, seed),
            };
            static_episode(env, &result.best, episode)
        }
    }
}

/// Snapshot for grid point `x`: arrivals and vehicles drawn from
/// `snapshot_seed`, then the swept quantity overridden.
fn reset_for_point(env: &mut OffloadEnv, kind: ExperimentKind, x: f64, snapshot_seed: u64) -> Result<(), HarnessError> {
    env.reset(snapshot_seed)?;
    let mut topology = env.topology().clone();
    let mut arrivals = env.arrivals().to_vec();
    match kind {
        ExperimentKind::TrafficSweep | ExperimentKind::Evaluate => arrivals.iter_mut().for_each(|a| *a = x * 1e6),
        ExperimentKind::VehicleSweep => set_vehicles(&mut topology, x as u32),
        _ => {}
    }
    env.reset_to(topology, arrivals);
    Ok(())
}

fn set_vehicles(topology: &mut Topology, count: u32) {
    for fog in &mut topology.fogs {
        fog.set_vehicle_count(count);
    }
}

/// Seeds of the evaluation snapshots for replica `seed`, disjoint from the
/// training episode seeds.
pub fn evaluation_seeds(seed: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    (0..count).map(|_| rng.next_u64()).collect()
}

/// Averages episodes into one row; cost columns skip overloaded episodes.
fn average_row(spec_id: &str, algorithm: Algorithm, seed: u64, x: f64, records: &[EpisodeRecord]) -> MetricsRow {
    let n = records.len() as f64;
    let valid: Vec<&EpisodeRecord> = records.iter().filter(|r| !r.cost.is_nan()).collect();
    let mean = |f: fn(&EpisodeRecord) -> f64| {
        if valid.is_empty() {
            f64::NAN
        } else {
            valid.iter().map(|r| f(r)).sum::<f64>() / valid.len() as f64
        }
    };
    MetricsRow {
        experiment: spec_id.to_string(),
        algorithm,
        seed,
        x,
        reward: records.iter().map(|r| r.reward).sum::<f64>() / n,
        cost: mean(|r| r.cost),
        latency: mean(|r| r.latency),
        energy: mean(|r| r.energy),
        utilization: mean(|r| r.utilization),
        overload_rate: records.iter().filter(|r| r.overloaded).count() as f64 / n,
    }
}

/// Evaluates `policy` at every grid point over the given snapshot seeds; one
/// row per point.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_policy(
    policy: &Policy,
    env: &mut OffloadEnv,
    sim: &SimConfig,
    spec_id: &str,
    algorithm: Algorithm,
    seed: u64,
    kind: ExperimentKind,
    grid: &[f64],
    snapshot_seeds: &[u64],
) -> Result<Vec<MetricsRow>, HarnessError> {
    if let Policy::Agent(agent) = policy {
        let expected = dims_for(env);
        if agent.dims != expected {
            return Err(mecvf::agents::AgentError::Dimension {
                what: "checkpoint/topology",
                expected: expected.state + expected.action(),
                got: agent.dims.state + agent.dims.action(),
            }
            .into());
        }
    }
    grid.iter()
        .map(|&x| {
            let records = snapshot_seeds
                .iter()
                .enumerate()
                .map(|(e, &s)| {
                    reset_for_point(env, kind, x, s)?;
                    rollout(policy, env, sim, s, e)
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(average_row(spec_id, algorithm, seed, x, &records))
        })
        .collect()
}

fn curve_rows(spec_id: &str, algorithm: Algorithm, seed: u64, curve: &[EpisodeRecord]) -> Vec<MetricsRow> {
    curve
        .iter()
        .map(|r| MetricsRow {
            experiment: spec_id.to_string(),
            algorithm,
            seed,
            x: r.episode as f64,
            reward: r.reward,
            cost: r.cost,
            latency: r.latency,
            energy: r.energy,
            utilization: r.utilization,
            overload_rate: if r.overloaded { 1.0 } else { 0.0 },
        })
        .collect()
}

/// Result of one (algorithm, seed) replica.
#[derive(Debug, Clone)]
pub struct Replica {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
    pub agents: Vec<(String, ActorCritic)>,
}

fn build_env(sim: &SimConfig, seed: u64) -> Result<OffloadEnv, HarnessError> {
    let topology = generate_topology(&sim.topology, seed)?;
    Ok(OffloadEnv::from_config(sim, topology)?)
}

fn convergence_replica(spec: &ExperimentSpec, algorithm: Algorithm, seed: u64) -> Result<Replica, HarnessError> {
    let e = &spec.experiment;
    let sim = &spec.sim;
    let mut env = build_env(sim, seed)?;
    let mut replica = Replica {
        algorithm,
        seed,
        rows: Vec::new(),
        agents: Vec::new(),
    };
    match algorithm.agent_kind() {
        Some(kind) => {
            let (agent, curve) = train(kind, &mut env, &sim.agent, e.drl_episodes, seed)?;
            replica.rows = curve_rows(&e.id, algorithm, seed, &curve);
            replica.agents.push((format!("{}_{}_seed{}", e.id, algorithm.name(), seed), agent));
        }
        None if algorithm == Algorithm::Uniform => {
            let curve = episode_seeds(seed)
                .take(e.drl_episodes)
                .enumerate()
                .map(|(ep, s)| {
                    env.reset(s)?;
                    rollout(&Policy::Uniform, &mut env, sim, s, ep)
                })
                .collect::<Result<Vec<_>, HarnessError>>()?;
            replica.rows = curve_rows(&e.id, algorithm, seed, &curve);
        }
        None => {
            let first = episode_seeds(seed).next().expect("infinite");
            env.reset(first)?;
            let oracle = SnapshotOracle::new(
                env.topology().clone(),
                env.arrivals().to_vec(),
                *env.weights(),
                env.guard(),
                sim.metaheuristic.penalty_factor,
            );
            let result = if algorithm == Algorithm::Pso {
                pso_optimize(&oracle, &sim.metaheuristic, e.search_evaluations, seed)
            } else {
                sa_optimize(&oracle, &sim.metaheuristic, e.search_evaluations, seed)
            };
            let c0 = env.previous_cost();
            let last = result.trace.len().saturating_sub(1);
            replica.rows = result
                .trace
                .iter()
                .enumerate()
                .filter(|(i, _)| (i + 1) % e.trace_stride == 0 || *i == last)
                .map(|(i, &cost)| {
                    let feasible = cost < oracle.penalty;
                    MetricsRow {
                        experiment: e.id.clone(),
                        algorithm,
                        seed,
                        x: (i + 1) as f64,
                        reward: static_reward(sim, feasible.then_some(cost), c0),
                        cost: if feasible { cost } else { f64::NAN },
                        latency: f64::NAN,
                        energy: f64::NAN,
                        utilization: f64::NAN,
                        overload_rate: if feasible { 0.0 } else { 1.0 },
                    }
                })
                .collect();
        }
    }
    Ok(replica)
}

/// Episode reward of holding one decision with cost `cost` (`None` when it
/// overloads) for a whole episode that starts from `previous`.
pub fn static_reward(sim: &SimConfig, cost: Option<f64>, previous: f64) -> f64 {
    match cost {
        None => sim.env.overload_penalty,
        Some(c) => {
            let scale = sim.env.reward_scale;
            let mode = sim.env.reward_mode;
            reward(c, previous, scale, mode) + (sim.env.max_steps - 1) as f64 * reward(c, c, scale, mode)
        }
    }
}

fn sweep_grid(spec: &ExperimentSpec) -> Vec<f64> {
    let e = &spec.experiment;
    match e.kind {
        ExperimentKind::SigmaSweep => e.sigma_grid.clone(),
        ExperimentKind::TrafficSweep | ExperimentKind::Evaluate => e.traffic_grid_mpps.clone(),
        ExperimentKind::VehicleSweep => e.vehicle_grid.iter().map(|&v| f64::from(v)).collect(),
        _ => Vec::new(),
    }
}

/// Simulator config specialised to grid point `x` for per-point training.
fn sim_for_point(sim: &SimConfig, kind: ExperimentKind, x: f64) -> SimConfig {
    let mut sim = sim.clone();
    match kind {
        ExperimentKind::SigmaSweep => sim.cost.sigma = x,
        ExperimentKind::TrafficSweep => match sim.traffic.kind {
            mecvf::model::TrafficKind::Normal => sim.traffic.normal_rates_mpps = vec![x],
            mecvf::model::TrafficKind::Hotspot => sim.traffic.hotspot_rates_mpps = vec![x],
        },
        ExperimentKind::VehicleSweep => {
            sim.topology.b_min = x as u32;
            sim.topology.b_max = x as u32;
        }
        _ => {}
    }
    sim
}

fn sweep_replica(spec: &ExperimentSpec, algorithm: Algorithm, seed: u64) -> Result<Replica, HarnessError> {
    let e = &spec.experiment;
    let grid = sweep_grid(spec);
    let snapshots = evaluation_seeds(seed, e.eval_episodes);
    let mut replica = Replica {
        algorithm,
        seed,
        rows: Vec::new(),
        agents: Vec::new(),
    };
    let search_policy = Policy::Search {
        algorithm,
        evaluations: e.search_evaluations,
    };
    // Sigma changes the objective itself, so every point gets its own policy.
    let per_point = e.kind == ExperimentKind::SigmaSweep || e.retrain_per_point;
    let trained_once = match (algorithm.agent_kind(), per_point) {
        (Some(kind), false) => {
            let mut env = build_env(&spec.sim, seed)?;
            let (agent, _) = train(kind, &mut env, &spec.sim.agent, e.drl_episodes, seed)?;
            replica.agents.push((format!("{}_{}_seed{}", e.id, algorithm.name(), seed), agent.clone()));
            Some(Policy::Agent(Box::new(agent)))
        }
        _ => None,
    };
    for &x in &grid {
        let sim = sim_for_point(&spec.sim, e.kind, x);
        let mut env = build_env(&sim, seed)?;
        let policy = match (algorithm.agent_kind(), &trained_once) {
            (Some(_), Some(p)) => p.clone(),
            (Some(kind), None) => {
                let (agent, _) = train(kind, &mut env, &sim.agent, e.drl_episodes, seed)?;
                Policy::Agent(Box::new(agent))
            }
            (None, _) if algorithm == Algorithm::Uniform => Policy::Uniform,
            (None, _) => search_policy.clone(),
        };
        let rows = evaluate_policy(&policy, &mut env, &sim, &e.id, algorithm, seed, e.kind, &[x], &snapshots)?;
        replica.rows.extend(rows);
    }
    Ok(replica)
}

fn evaluate_replica(spec: &ExperimentSpec, agent: &ActorCritic, seed: u64) -> Result<Replica, HarnessError> {
    let e = &spec.experiment;
    let algorithm = match agent.kind {
        mecvf::agents::AgentKind::Dtd3 => Algorithm::Dtd3,
        mecvf::agents::AgentKind::Td3 => Algorithm::Td3,
        mecvf::agents::AgentKind::Ddpg => Algorithm::Ddpg,
    };
    let mut env = build_env(&spec.sim, seed)?;
    let policy = Policy::Agent(Box::new(agent.clone()));
    let rows = evaluate_policy(
        &policy,
        &mut env,
        &spec.sim,
        &e.id,
        algorithm,
        seed,
        e.kind,
        &e.traffic_grid_mpps,
        &evaluation_seeds(seed, e.eval_episodes),
    )?;
    Ok(Replica {
        algorithm,
        seed,
        rows,
        agents: Vec::new(),
    })
}

/// Every replica of `spec`, in (algorithm, seed) order.
pub fn run_replicas(spec: &ExperimentSpec) -> Result<Vec<Replica>, HarnessError> {
    let e = &spec.experiment;
    if e.kind == ExperimentKind::Evaluate {
        let path = e.checkpoint.as_ref().expect("validated");
        let agent = ActorCritic::load(path)?;
        return e.seeds.par_iter().map(|&seed| evaluate_replica(spec, &agent, seed)).collect();
    }
    let mut algorithms = e.algorithms.clone();
    algorithms.sort();
    algorithms.dedup();
    let jobs: Vec<(Algorithm, u64)> = algorithms
        .iter()
        .flat_map(|&a| e.seeds.iter().map(move |&s| (a, s)))
        .collect();
    jobs.par_iter()
        .map(|&(algorithm, seed)| {
            if e.kind.is_sweep() {
                sweep_replica(spec, algorithm, seed)
            } else {
                convergence_replica(spec, algorithm, seed)
            }
        })
        .collect()
}

/// Runs `spec` on `workers` threads and writes its CSV, summary, plot data,
/// checkpoints and manifest under `output_dir`.
pub fn run_experiment(spec: &ExperimentSpec, output_dir: &Path, workers: usize) -> Result<OutputFiles, HarnessError> {
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool");
    let replicas = pool.install(|| run_replicas(spec))?;
    std::fs::create_dir_all(output_dir).map_err(io_error(output_dir))?;
    let mut checkpoints: Vec<PathBuf> = Vec::new();
    for replica in &replicas {
        for (name, agent) in &replica.agents {
            let dir = output_dir.join("checkpoints");
            std::fs::create_dir_all(&dir).map_err(io_error(&dir))?;
            let path = dir.join(format!("{name}.json"));
            agent.save(&path)?;
            checkpoints.push(path);
        }
    }
    let rows: Vec<MetricsRow> = replicas.into_iter().flat_map(|r| r.rows).collect();
    write_outputs(spec, &rows, &checkpoints, output_dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::{ExperimentSection, Preset};

    fn quick(kind: ExperimentKind, algorithms: Vec<Algorithm>) -> ExperimentSpec {
        let mut spec = ExperimentSpec::new(ExperimentSection {
            id: "t".into(),
            kind,
            preset: Preset::Desk,
            algorithms,
            drl_episodes: 4,
            search_evaluations: 60,
            seeds: vec![0, 1],
            eval_episodes: 2,
            trace_stride: 10,
            ..ExperimentSection::default()
        });
        spec.sim.agent.hidden = vec![8, 8];
        spec.sim.agent.batch_size = 8;
        spec
    }

    #[test]
    fn uniform_evaluation_repeats() {
        let spec = quick(ExperimentKind::TrafficSweep, vec![Algorithm::Uniform]);
        let a = run_replicas(&spec).unwrap();
        let b = run_replicas(&spec).unwrap();
        assert_eq!(a.len(), 2);
        // Overloaded points carry NaN, so compare printed forms.
        assert_eq!(format!("{:?}", a[0].rows), format!("{:?}", b[0].rows));
        assert_eq!(a[0].rows.len(), 6);
    }

    #[test]
    fn static_reward_matches_env_rollout() {
        let sim = SimConfig::desk();
        let mut env = build_env(&sim, 3).unwrap();
        env.reset_to(env.base_topology().clone(), vec![40e6, 40e6]);
        let c0 = env.previous_cost();
        let d = uniform_policy(env.topology());
        let r = static_episode(&mut env, &d, 0).unwrap();
        assert!(!r.overloaded);
        assert_eq!(r.steps, 10);
        let cost = env.decision_cost(&d).unwrap().cost;
        let expected = static_reward(&sim, Some(cost), c0);
        assert!((r.reward - expected).abs() < 1e-12, "{} vs {}", r.reward, expected);
    }

    #[test]
    fn cost_recombines_from_latency_and_energy() {
        let spec = quick(ExperimentKind::SigmaSweep, vec![Algorithm::Uniform, Algorithm::Sa]);
        for replica in run_replicas(&spec).unwrap() {
            for row in replica.rows.iter().filter(|r| !r.cost.is_nan()) {
                let recombined = row.x * row.latency + (1.0 - row.x) * row.energy;
                assert!((row.cost - recombined).abs() <= 1e-9 * row.cost.abs().max(1.0));
            }
        }
    }

    #[test]
    fn checkpoint_dimension_mismatch_is_reported() {
        let sim = SimConfig::desk();
        let mut env = build_env(&sim, 0).unwrap();
        let mut other = sim.clone();
        other.topology.fogs_per_mec = 3;
        let other_env = build_env(&other, 0).unwrap();
        let agent = ActorCritic::new(
            mecvf::agents::AgentKind::Td3,
            dims_for(&other_env),
            sim.agent.clone(),
            *other_env.scaling(),
            0,
        );
        let err = evaluate_policy(
            &Policy::Agent(Box::new(agent)),
            &mut env,
            &sim,
            "t",
            Algorithm::Td3,
            0,
            ExperimentKind::Evaluate,
            &[40.0],
            &[1],
        )
        .unwrap_err();
        assert_eq!(err.class(), "dimension");
    }
}
