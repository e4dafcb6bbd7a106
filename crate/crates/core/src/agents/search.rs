//! Simulated annealing and particle swarm search over static decisions.
//!
//! Both work on unconstrained logits, one block per MEC, and map every
//! candidate to a valid decision with a per-block softmax before scoring.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::MetaheuristicConfig;
use crate::env::softmax_decision;
use crate::model::Topology;
use crate::queueing::{check_constraints, fog_energy, system_cost, uniform_policy, CostWeights, OffloadDecision};

/// Anything that scores a decision; lower is better.
pub trait CostOracle {
    fn n_mecs(&self) -> usize;
    fn h(&self) -> usize;
    fn q(&self) -> usize;
    fn cost(&self, decision: &OffloadDecision) -> f64;

    fn width(&self) -> usize {
        1 + self.h() + self.q()
    }
}

/// Cost of decisions on one fixed (topology, arrivals) snapshot. Decisions
/// that violate a constraint score `penalty`.
#[derive(Debug, Clone)]
pub struct SnapshotOracle {
    pub topology: Topology,
    pub arrivals: Vec<f64>,
    pub weights: CostWeights,
    pub guard: f64,
    pub penalty: f64,
}

impl SnapshotOracle {
    /// Penalty is `penalty_factor` times the uniform-split cost, or times a
    /// coarse upper bound on any feasible cost when the uniform split itself
    /// overloads a server.
    pub fn new(topology: Topology, arrivals: Vec<f64>, weights: CostWeights, guard: f64, penalty_factor: f64) -> Self {
        let mut oracle = Self {
            topology,
            arrivals,
            weights,
            guard,
            penalty: f64::INFINITY,
        };
        let base = oracle
            .feasible_cost(&uniform_policy(&oracle.topology))
            .unwrap_or_else(|| oracle.cost_bound());
        oracle.penalty = penalty_factor * base;
        oracle
    }

    pub fn feasible_cost(&self, decision: &OffloadDecision) -> Option<f64> {
        if !check_constraints(decision, &self.arrivals, &self.topology, self.guard).is_empty() {
            return None;
        }
        system_cost(decision, &self.arrivals, &self.topology, &self.weights)
            .ok()
            .map(|c| c.cost)
    }

    /// Latency at the guard utilization of the slowest MEC combined with the
    /// energy of sending all traffic to the most expensive fog.
    fn cost_bound(&self) -> f64 {
        let min_mu = self
            .topology
            .mecs
            .iter()
            .map(|m| m.service_rate)
            .fold(f64::INFINITY, f64::min);
        let latency = 1.0 / ((1.0 - self.guard).max(1e-6) * min_mu);
        let per_rate = (0..self.topology.n_mecs())
            .flat_map(|i| self.topology.selected_fogs().map(move |k| (i, k)))
            .filter_map(|(i, k)| fog_energy(&self.topology, i, k, 1.0).ok())
            .map(|e| e.total())
            .fold(0.0, f64::max);
        let lambda = self.arrivals.iter().copied().fold(0.0, f64::max);
        self.weights.combine(latency, per_rate * lambda).max(f64::MIN_POSITIVE)
    }
}

impl CostOracle for SnapshotOracle {
    fn n_mecs(&self) -> usize {
        self.topology.n_mecs()
    }

    fn h(&self) -> usize {
        self.topology.h_neighbors
    }

    fn q(&self) -> usize {
        self.topology.q_fogs
    }

    fn cost(&self, decision: &OffloadDecision) -> f64 {
        self.feasible_cost(decision).unwrap_or(self.penalty)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: OffloadDecision,
    pub best_cost: f64,
    /// Incumbent cost after each evaluation.
    pub trace: Vec<f64>,
}

fn decode<O: CostOracle + ?Sized>(oracle: &O, logits: &[f64]) -> OffloadDecision {
    softmax_decision(logits, oracle.h(), oracle.q(), 1.0)
}

fn score<O: CostOracle + ?Sized>(oracle: &O, logits: &[f64]) -> f64 {
    oracle.cost(&decode(oracle, logits))
}

/// Metropolis search starting from the uniform split. The starting point
/// counts as the first evaluation; with zero evaluations the uniform split is
/// returned with an empty trace.
pub fn sa_optimize<O: CostOracle + ?Sized>(
    oracle: &O,
    config: &MetaheuristicConfig,
    evaluations: usize,
    seed: u64,
) -> SearchResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = oracle.n_mecs() * oracle.width();
    let mut current = vec![0.0; dim];
    let mut current_cost = score(oracle, &current);
    let mut best = current.clone();
    let mut best_cost = current_cost;
    let mut trace = Vec::with_capacity(evaluations);
    if evaluations == 0 {
        return SearchResult {
            best: decode(oracle, &best),
            best_cost,
            trace,
        };
    }
    trace.push(best_cost);
    let step = Normal::new(0.0, config.sa_step).expect("positive step");
    let mut temperature = current_cost.abs().max(f64::MIN_POSITIVE);
    for _ in 1..evaluations {
        let candidate: Vec<f64> = current.iter().map(|x| x + step.sample(&mut rng)).collect();
        let cost = score(oracle, &candidate);
        let accept = cost <= current_cost || rng.random::<f64>() < (-(cost - current_cost) / temperature).exp();
        if accept {
            current = candidate;
            current_cost = cost;
            if cost < best_cost {
                best_cost = cost;
                best.clone_from(&current);
            }
        }
        temperature *= config.sa_cooling;
        trace.push(best_cost);
    }
    SearchResult {
        best: decode(oracle, &best),
        best_cost,
        trace,
    }
}

/// Largest per-coordinate velocity, in logit units.
const PSO_VMAX: f64 = 4.0;
/// Initial particles other than the first are drawn from `[-R, R]`.
const PSO_INIT_RANGE: f64 = 2.0;

/// Global-best PSO. Particle 0 starts at the uniform split; all velocities
/// start at zero. Evaluations are spent particle by particle.
pub fn pso_optimize<O: CostOracle + ?Sized>(
    oracle: &O,
    config: &MetaheuristicConfig,
    evaluations: usize,
    seed: u64,
) -> SearchResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = oracle.n_mecs() * oracle.width();
    let particles = config.pso_particles.max(1);
    let mut positions: Vec<Vec<f64>> = (0..particles)
        .map(|p| {
            if p == 0 {
                vec![0.0; dim]
            } else {
                (0..dim).map(|_| rng.random_range(-PSO_INIT_RANGE..=PSO_INIT_RANGE)).collect()
            }
        })
        .collect();
    let mut velocities = vec![vec![0.0; dim]; particles];
    let mut personal = positions.clone();
    let mut personal_cost = vec![f64::INFINITY; particles];
    let mut global = positions[0].clone();
    let mut global_cost = f64::INFINITY;
    let mut trace = Vec::with_capacity(evaluations);

    let mut used = 0;
    'search: for round in 0.. {
        for p in 0..particles {
            if used == evaluations {
                break 'search;
            }
            if round > 0 {
                for d in 0..dim {
                    let r1: f64 = rng.random();
                    let r2: f64 = rng.random();
                    let v = config.pso_inertia * velocities[p][d]
                        + config.pso_cognitive * r1 * (personal[p][d] - positions[p][d])
                        + config.pso_social * r2 * (global[d] - positions[p][d]);
                    velocities[p][d] = v.clamp(-PSO_VMAX, PSO_VMAX);
                    positions[p][d] += velocities[p][d];
                }
            }
            let cost = score(oracle, &positions[p]);
            used += 1;
            if cost < personal_cost[p] {
                personal_cost[p] = cost;
                personal[p].clone_from(&positions[p]);
            }
            if cost < global_cost {
                global_cost = cost;
                global.clone_from(&positions[p]);
            }
            trace.push(global_cost);
        }
    }
    if evaluations == 0 {
        global_cost = score(oracle, &global);
    }
    SearchResult {
        best: decode(oracle, &global),
        best_cost: global_cost,
        trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Quadratic bowl over a 1 x 2 simplex with its minimum at `(0.7, 0.3)`.
    struct Bowl;

    impl CostOracle for Bowl {
        fn n_mecs(&self) -> usize {
            1
        }
        fn h(&self) -> usize {
            0
        }
        fn q(&self) -> usize {
            1
        }
        fn cost(&self, d: &OffloadDecision) -> f64 {
            1.0 + (d.local(0) - 0.7).powi(2)
        }
    }

    fn grid_optimum() -> f64 {
        (0..=50)
            .map(|k| {
                let x = f64::from(k) * 0.02;
                Bowl.cost(&OffloadDecision::from_flat(0, 1, vec![x, 1.0 - x]))
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn non_increasing(trace: &[f64]) -> bool {
        trace.windows(2).all(|w| w[1] <= w[0])
    }

    #[test]
    fn zero_evaluations_return_uniform() {
        let cfg = MetaheuristicConfig::default();
        let sa = sa_optimize(&Bowl, &cfg, 0, 1);
        assert_eq!(sa.best.as_slice(), &[0.5, 0.5]);
        assert!(sa.trace.is_empty());
        let pso = pso_optimize(&Bowl, &cfg, 0, 1);
        assert_eq!(pso.best.as_slice(), &[0.5, 0.5]);
        assert!(pso.trace.is_empty());
    }

    #[test]
    fn sa_reaches_bowl_minimum() {
        let r = sa_optimize(&Bowl, &MetaheuristicConfig::default(), 3000, 4);
        assert_eq!(r.trace.len(), 3000);
        assert!(non_increasing(&r.trace));
        assert!(r.best_cost <= grid_optimum() * 1.05);
        assert!((r.best.local(0) - 0.7).abs() < 0.05);
    }

    #[test]
    fn pso_reaches_bowl_minimum() {
        let r = pso_optimize(&Bowl, &MetaheuristicConfig::default(), 3000, 4);
        assert_eq!(r.trace.len(), 3000);
        assert!(non_increasing(&r.trace));
        assert!(r.best_cost <= grid_optimum() * 1.05);
    }

    #[test]
    fn frozen_single_particle_stays_put() {
        let cfg = MetaheuristicConfig {
            pso_particles: 1,
            pso_inertia: 0.0,
            pso_cognitive: 0.0,
            pso_social: 0.0,
            ..MetaheuristicConfig::default()
        };
        let r = pso_optimize(&Bowl, &cfg, 100, 2);
        assert_eq!(r.best.as_slice(), &[0.5, 0.5]);
        assert!(r.trace.iter().all(|&c| c == r.trace[0]));
    }

    #[test]
    fn seeded_runs_repeat() {
        let cfg = MetaheuristicConfig::default();
        assert_eq!(sa_optimize(&Bowl, &cfg, 500, 8), sa_optimize(&Bowl, &cfg, 500, 8));
        assert_eq!(pso_optimize(&Bowl, &cfg, 500, 8), pso_optimize(&Bowl, &cfg, 500, 8));
    }
}
