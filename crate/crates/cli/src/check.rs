//! Independent oracles and the acceptance checks built on them.
//!
//! Each oracle recomputes a quantity by a different route than the library.
//! Erlang C comes from birth-death balance and M/M/1 from a Lindley
//! simulation. Backprop is checked against central differences.

use std::time::{Duration, Instant};

use mecvf::agents::{greedy_episode, pso_optimize, sa_optimize, train, CostOracle, SnapshotOracle};
use mecvf::config::{RewardMode, SimConfig, TopologyConfig};
use mecvf::env::{clip_action, normalize_action, reward, OffloadEnv};
use mecvf::model::{generate_topology, Topology};
use mecvf::nn::{Activation, Mlp};
use mecvf::queueing::{
    check_constraints, erlang_c, mm1_sojourn, system_cost, uniform_policy, ConstraintId, CostWeights, OffloadDecision,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::harness::{run_replicas, run_experiment};
use crate::spec::{Algorithm, ExperimentKind, ExperimentSection, ExperimentSpec, Preset};

// ---------------------------------------------------------------------------
// Oracles

/// Waiting probability of M/M/c from the stationary distribution, built by
/// iterating the birth-death balance `p(n+1) = p(n) lambda / (min(n+1, c) mu)`
/// until the tail is negligible.
pub fn erlang_c_birth_death(servers: u32, lambda: f64, mu: f64) -> f64 {
    let c = servers as usize;
    let mut p = 1.0;
    let mut total = 1.0;
    let mut waiting = if c == 0 { 1.0 } else { 0.0 };
    let mut n = 0usize;
    loop {
        let rate = (n + 1).min(c) as f64 * mu;
        p *= lambda / rate;
        n += 1;
        total += p;
        if n >= c {
            waiting += p;
        }
        if n > c && p < 1e-18 * total {
            break;
        }
    }
    waiting / total
}

/// Mean sojourn over `arrivals` customers of a FIFO M/M/1 queue, simulated
/// with the Lindley recursion `W(n+1) = max(0, W(n) + S(n) - A(n+1))`.
pub fn simulate_mm1_sojourn(lambda: f64, mu: f64, arrivals: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inter = Exp::new(lambda).expect("positive rate");
    let service = Exp::new(mu).expect("positive rate");
    let mut wait = 0.0;
    let mut total = 0.0;
    for _ in 0..arrivals {
        let s = service.sample(&mut rng);
        total += wait + s;
        wait = (wait + s - inter.sample(&mut rng)).max(0.0);
    }
    total / arrivals as f64
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Erlang C from its factorial form.
fn erlang_c_factorial(b: u32, rho: f64) -> f64 {
    let a = f64::from(b) * rho;
    let sum: f64 = (0..b).map(|k| a.powi(k as i32) / factorial(k)).sum();
    1.0 / (1.0 + (1.0 - rho) * (factorial(b) / a.powi(b as i32)) * sum)
}

const LIGHT_SPEED: f64 = 3.0e8;

/// `(L_sys, E_sys, C_sys)` recomputed term by term from the topology data;
/// `None` when a server is overloaded.
pub fn reference_cost(decision: &OffloadDecision, arrivals: &[f64], topo: &Topology, sigma: f64) -> Option<(f64, f64, f64)> {
    let n = topo.n_mecs();
    let h = topo.h_neighbors;
    let q = topo.q_fogs;
    let w = 1 + h + q;
    let p = decision.as_slice();
    let local_ratio = |i: usize| p[i * w];
    let horiz_ratio = |i: usize, s: usize| p[i * w + 1 + s];
    let vert_ratio = |i: usize, k: usize| p[i * w + 1 + h + k];

    let mec_load: Vec<f64> = (0..n)
        .map(|i| {
            let inflow: f64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    (0..h)
                        .filter(|&s| topo.neighbors[j][s] == i)
                        .map(|s| horiz_ratio(j, s) * arrivals[j])
                        .sum::<f64>()
                })
                .sum();
            local_ratio(i) * arrivals[i] + inflow
        })
        .collect();
    let mec_latency = |j: usize| -> Option<f64> {
        let mu = topo.mecs[j].service_rate;
        let lam = mec_load[j];
        (lam < mu).then(|| lam / (mu * (mu - lam)) + 1.0 / mu)
    };
    let rate = |power: f64, gain: f64| topo.bandwidth * (1.0 + power * gain * gain / (topo.noise_density * topo.bandwidth)).log2();

    let mut latencies = Vec::with_capacity(n);
    let mut energies = Vec::with_capacity(n);
    for i in 0..n {
        let local = if local_ratio(i) > 0.0 { local_ratio(i) * mec_latency(i)? } else { 0.0 };
        let mut horizontal: f64 = 0.0;
        for s in 0..h {
            let j = topo.neighbors[i][s];
            if horiz_ratio(i, s) > 0.0 {
                let l = mec_latency(j)? + 2.0 * topo.distances[i][j] / LIGHT_SPEED;
                horizontal = horizontal.max(horiz_ratio(i, s) * l);
            }
        }
        let mut vertical: f64 = 0.0;
        let mut energy = 0.0;
        for k in 0..q {
            let fog = &topo.fogs[i * topo.fogs_per_mec + k];
            let lam = vert_ratio(i, k) * arrivals[i];
            if lam == 0.0 {
                continue;
            }
            let mu = fog.per_vehicle_rate;
            let b = fog.vehicle_count;
            let rho = lam / (f64::from(b) * mu);
            if rho >= 1.0 {
                return None;
            }
            let down = rate(topo.mecs[i].tx_power, fog.channel_gain);
            let up = rate(fog.tx_power, fog.channel_gain);
            let l = lam / down + erlang_c_factorial(b, rho) / (f64::from(b) * mu - lam) + 1.0 / mu + lam * fog.return_ratio / up;
            vertical = vertical.max(vert_ratio(i, k) * l);
            let bits = lam * topo.packet_size;
            energy += fog.cpu_cycles_per_bit * fog.energy_per_cycle * bits
                + topo.mecs[i].tx_power * bits / down
                + fog.tx_power * bits * fog.return_ratio / up;
        }
        latencies.push(local.max(horizontal).max(vertical));
        energies.push(energy);
    }
    let l_sys = latencies.iter().sum::<f64>() / n as f64;
    let e_sys = energies.iter().sum::<f64>() / n as f64;
    Some((l_sys, e_sys, sigma * l_sys + (1.0 - sigma) * e_sys))
}

fn apply(act: Activation, v: f64) -> f64 {
    match act {
        Activation::Relu => v.max(0.0),
        Activation::Tanh => v.tanh(),
        Activation::Identity => v,
    }
}

fn layer_activation(mlp: &Mlp, idx: usize) -> Activation {
    if idx + 1 == mlp.layers.len() {
        mlp.output_activation
    } else {
        mlp.hidden_activation
    }
}

/// Forward pass written with plain loops; returns pre-activations and
/// activations of every layer, input first in the activation list.
fn reference_forward(mlp: &Mlp, input: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut pre = Vec::with_capacity(mlp.layers.len());
    let mut acts = vec![input.to_vec()];
    for (idx, layer) in mlp.layers.iter().enumerate() {
        let (fan_in, fan_out) = layer.weight.dim();
        let a = acts.last().expect("input");
        let z: Vec<f64> = (0..fan_out)
            .map(|j| (0..fan_in).fold(layer.bias[j], |acc, i| acc + a[i] * layer.weight[[i, j]]))
            .collect();
        acts.push(z.iter().map(|&v| apply(layer_activation(mlp, idx), v)).collect());
        pre.push(z);
    }
    (pre, acts)
}

/// Loss after moving pre-activation `unit` of layer `layer` by `dz`. Only the
/// change is pushed through the later layers, which is exact up to rounding
/// and turns the per-coordinate cost from the whole net into its tail.
fn shifted_loss(mlp: &Mlp, pre: &[Vec<f64>], acts: &[Vec<f64>], layer: usize, unit: usize, dz: f64, upstream: &[f64]) -> f64 {
    let act = layer_activation(mlp, layer);
    let mut delta: Vec<(usize, f64)> = vec![(unit, apply(act, pre[layer][unit] + dz) - acts[layer + 1][unit])];
    let mut current = acts[layer + 1].clone();
    current[unit] += delta[0].1;
    for k in layer + 1..mlp.layers.len() {
        let w = &mlp.layers[k].weight;
        let act = layer_activation(mlp, k);
        let mut z = pre[k].clone();
        for &(i, d) in &delta {
            for (j, zj) in z.iter_mut().enumerate() {
                *zj += w[[i, j]] * d;
            }
        }
        current = z.iter().map(|&v| apply(act, v)).collect();
        delta = current.iter().zip(&acts[k + 1]).map(|(n, o)| n - o).enumerate().collect();
    }
    current.iter().zip(upstream).map(|(o, g)| o * g).sum()
}

/// Compares analytic gradients of `sum(mlp(x) * upstream)` with central
/// differences over every parameter and input coordinate. A coordinate
/// passes when its error is within `rel_tol` relative or `abs_floor`
/// absolute. Returns the failing count, the largest absolute error and the
/// number of coordinates checked.
pub fn gradient_check(mlp: &Mlp, input: &[f64], upstream: &[f64], step: f64, rel_tol: f64, abs_floor: f64) -> (usize, f64, usize) {
    let x = Array2::from_shape_vec((1, input.len()), input.to_vec()).expect("row");
    let u = Array2::from_shape_vec((1, upstream.len()), upstream.to_vec()).expect("row");
    let cache = mlp.forward_batch(x.view()).expect("shape");
    let (grads, d_input) = mlp.backward(&cache, u.view()).expect("shape");
    let (pre, acts) = reference_forward(mlp, input);

    let mut failures = 0;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut compare = |analytic: f64, numeric: f64| {
        checked += 1;
        let err = (analytic - numeric).abs();
        worst = worst.max(err);
        if err > rel_tol * analytic.abs().max(numeric.abs()) && err > abs_floor {
            failures += 1;
        }
    };
    for l in 0..mlp.layers.len() {
        let (fan_in, fan_out) = mlp.layers[l].weight.dim();
        for j in 0..fan_out {
            for i in 0..fan_in {
                let a = acts[l][i];
                let plus = shifted_loss(mlp, &pre, &acts, l, j, step * a, upstream);
                let minus = shifted_loss(mlp, &pre, &acts, l, j, -step * a, upstream);
                compare(grads.weights[l][[i, j]], (plus - minus) / (2.0 * step));
            }
            let plus = shifted_loss(mlp, &pre, &acts, l, j, step, upstream);
            let minus = shifted_loss(mlp, &pre, &acts, l, j, -step, upstream);
            compare(grads.biases[l][j], (plus - minus) / (2.0 * step));
        }
    }
    let loss = |inp: &[f64]| -> f64 {
        let (_, a) = reference_forward(mlp, inp);
        a.last().expect("output").iter().zip(upstream).map(|(o, g)| o * g).sum()
    };
    let mut inp = input.to_vec();
    for i in 0..inp.len() {
        let orig = inp[i];
        inp[i] = orig + step;
        let plus = loss(&inp);
        inp[i] = orig - step;
        let minus = loss(&inp);
        inp[i] = orig;
        compare(d_input[[0, i]], (plus - minus) / (2.0 * step));
    }
    (failures, worst, checked)
}

/// Smallest oracle cost over the simplex grid with spacing `1 / divisions`
/// in every MEC block.
pub fn grid_search_optimum<O: CostOracle + ?Sized>(oracle: &O, divisions: u32) -> (f64, OffloadDecision) {
    fn compositions(total: u32, parts: usize, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if parts == 1 {
            prefix.push(total);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for first in 0..=total {
            prefix.push(first);
            compositions(total - first, parts - 1, prefix, out);
            prefix.pop();
        }
    }
    let w = oracle.width();
    let mut blocks = Vec::new();
    compositions(divisions, w, &mut Vec::new(), &mut blocks);
    let blocks: Vec<Vec<f64>> = blocks
        .into_iter()
        .map(|b| b.into_iter().map(|k| f64::from(k) / f64::from(divisions)).collect())
        .collect();
    let n = oracle.n_mecs();
    let mut index = vec![0usize; n];
    let mut best = (f64::INFINITY, OffloadDecision::from_flat(oracle.h(), oracle.q(), vec![0.0; n * w]));
    let mut flat = vec![0.0; n * w];
    loop {
        for (i, &b) in index.iter().enumerate() {
            flat[i * w..(i + 1) * w].copy_from_slice(&blocks[b]);
        }
        let d = OffloadDecision::from_flat(oracle.h(), oracle.q(), flat.clone());
        let c = oracle.cost(&d);
        if c < best.0 {
            best = (c, d);
        }
        let mut pos = 0;
        loop {
            if pos == n {
                return best;
            }
            index[pos] += 1;
            if index[pos] < blocks.len() {
                break;
            }
            index[pos] = 0;
            pos += 1;
        }
    }
}

// ---------------------------------------------------------------------------
// Acceptance checks

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
    pub budget: Duration,
}

impl CheckOutcome {
    fn finish(id: u8, name: &'static str, budget: Duration, start: Instant, passed: bool, detail: String) -> Self {
        let elapsed = start.elapsed();
        Self {
            id,
            name,
            passed: passed && elapsed <= budget,
            detail,
            elapsed,
            budget,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "[{}] {:>2} {} ({:.2?} of {:.0?}): {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.elapsed,
            self.budget,
            self.detail
        )
    }
}

pub fn check_erlang_c() -> CheckOutcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut single_exact = true;
    for c in 1..=5u32 {
        for step in 1..=9 {
            let rho = f64::from(step) / 10.0;
            let mu = 1.0;
            let lambda = rho * f64::from(c) * mu;
            let value = erlang_c(c, lambda, mu).expect("stable");
            worst = worst.max((value - erlang_c_birth_death(c, lambda, mu)).abs());
            if c == 1 && value != lambda / mu {
                single_exact = false;
            }
        }
    }
    CheckOutcome::finish(
        1,
        "erlang-c vs birth-death oracle",
        Duration::from_secs(1),
        start,
        worst <= 1e-9 && single_exact,
        format!("max abs error {worst:.2e}, single-server exact: {single_exact}"),
    )
}

pub fn check_mm1_simulation(arrivals: usize) -> CheckOutcome {
    let start = Instant::now();
    let analytic = mm1_sojourn(15.0, 30.0).expect("stable");
    let simulated = simulate_mm1_sojourn(15.0, 30.0, arrivals, 2024);
    let rel = (simulated - analytic).abs() / analytic;
    CheckOutcome::finish(
        2,
        "m/m/1 sojourn vs simulation",
        Duration::from_secs(30),
        start,
        rel <= 0.02 && arrivals >= 1_000_000,
        format!("analytic {analytic:.6}, simulated {simulated:.6} over {arrivals} arrivals, rel {rel:.2e}"),
    )
}

/// A random topology with `N <= 3`, `M <= 2`, arrivals and a stable decision.
fn random_instance(rng: &mut ChaCha8Rng) -> (Topology, Vec<f64>, OffloadDecision, f64) {
    loop {
        let n = rng.random_range(1..=3usize);
        let m = rng.random_range(1..=2usize);
        let b_min = rng.random_range(1..=30u32);
        let cfg = TopologyConfig {
            n_mecs: n,
            fogs_per_mec: m,
            b_min,
            b_max: b_min + rng.random_range(0..=20u32),
            h_neighbors: Some(rng.random_range(0..n)),
            q_fogs: Some(rng.random_range(1..=m)),
            return_ratio: rng.random_range(0.0..0.5),
            channel_gain: rng.random_range(0.5..2.0),
            ..TopologyConfig::default()
        };
        let topo = generate_topology(&cfg, rng.random()).expect("valid config");
        let arrivals: Vec<f64> = (0..n).map(|_| rng.random_range(1e6..60e6)).collect();
        let w = topo.block_width();
        let mut ratios = Vec::with_capacity(n * w);
        for _ in 0..n {
            let raw: Vec<f64> = (0..w)
                .map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..1.0) })
                .collect();
            let total: f64 = raw.iter().sum();
            if total == 0.0 {
                ratios.extend(std::iter::once(1.0).chain(std::iter::repeat_n(0.0, w - 1)));
            } else {
                ratios.extend(raw.iter().map(|r| r / total));
            }
        }
        let decision = OffloadDecision::from_flat(topo.h_neighbors, topo.q_fogs, ratios);
        let sigma = rng.random_range(0.0..=1.0);
        if system_cost(&decision, &arrivals, &topo, &CostWeights::new(sigma, 1.0)).is_ok() {
            return (topo, arrivals, decision, sigma);
        }
    }
}

pub fn check_cost_model(instances: usize) -> CheckOutcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut worst: f64 = 0.0;
    let mut missing = 0;
    for _ in 0..instances {
        let (topo, arrivals, decision, sigma) = random_instance(&mut rng);
        let got = system_cost(&decision, &arrivals, &topo, &CostWeights::new(sigma, 1.0)).expect("stable");
        match reference_cost(&decision, &arrivals, &topo, sigma) {
            Some((l, e, c)) => {
                for (a, b) in [(got.latency, l), (got.energy, e), (got.cost, c)] {
                    let scale = a.abs().max(b.abs());
                    if scale > 0.0 {
                        worst = worst.max((a - b).abs() / scale);
                    }
                }
            }
            None => missing += 1,
        }
    }
    CheckOutcome::finish(
        3,
        "cost model vs second implementation",
        Duration::from_secs(5),
        start,
        worst <= 1e-9 && missing == 0,
        format!("{instances} instances, max rel error {worst:.2e}, oracle rejections {missing}"),
    )
}

pub fn check_constraint_suite() -> CheckOutcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut simplex_ok = true;
    for _ in 0..1000 {
        let h = rng.random_range(0..4usize);
        let q = rng.random_range(1..6usize);
        let n = rng.random_range(1..5usize);
        let raw: Vec<f64> = (0..n * (1 + h + q)).map(|_| rng.random_range(-3.0..3.0)).collect();
        let d = normalize_action(&clip_action(&raw), h, q);
        for i in 0..n {
            let row = d.row(i);
            simplex_ok &= (row.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
            simplex_ok &= row.iter().all(|r| (0.0..=1.0).contains(r));
        }
    }

    // Hand-built violations on a two-MEC, one-fog topology.
    let cfg = TopologyConfig {
        n_mecs: 2,
        fogs_per_mec: 1,
        b_min: 10,
        b_max: 10,
        ..TopologyConfig::default()
    };
    let topo = generate_topology(&cfg, 0).expect("valid");
    let arrivals = [20e6, 20e6];
    let ok_row = vec![0.5, 0.25, 0.25];
    let cases: Vec<(ConstraintId, Vec<f64>, [f64; 2])> = vec![
        (ConstraintId::SimplexSum, vec![0.5, 0.2, 0.2], arrivals),
        (ConstraintId::RatioBounds, vec![1.2, -0.3, 0.1], arrivals),
        (ConstraintId::TrafficConservation, vec![0.6, 0.3, 0.3], arrivals),
        (ConstraintId::MecStability, vec![1.0, 0.0, 0.0], [40e6, 1e6]),
        (ConstraintId::FogStability, vec![0.0, 0.0, 1.0], [20e6, 1e6]),
    ];
    let mut flagged = Vec::new();
    let mut all_flagged = true;
    for (id, row, arr) in cases {
        let rows = [row, ok_row.clone()];
        let d = OffloadDecision::from_rows(topo.h_neighbors, topo.q_fogs, &rows);
        let found = check_constraints(&d, &arr, &topo, 0.999).iter().any(|v| v.constraint == id);
        all_flagged &= found;
        flagged.push(format!("{id:?}:{found}"));
    }
    let clean = check_constraints(&uniform_policy(&topo), &[10e6, 10e6], &topo, 0.999).is_empty();
    CheckOutcome::finish(
        4,
        "constraint suite",
        Duration::from_secs(1),
        start,
        simplex_ok && all_flagged && clean,
        format!("1000 softmax outputs valid: {simplex_ok}; flagged {}; clean decision passes: {clean}", flagged.join(" ")),
    )
}

pub fn check_gradients(nets: usize) -> CheckOutcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for k in 0..nets {
        let input = rng.random_range(1..=8usize);
        let output = rng.random_range(1..=8usize);
        // The first two nets hit the size limit.
        let hidden = if k < 2 {
            vec![256, 256]
        } else {
            vec![rng.random_range(1..=256usize), rng.random_range(1..=256usize)]
        };
        let out_act = if k % 2 == 0 { Activation::Identity } else { Activation::Tanh };
        let mlp = Mlp::new(input, &hidden, output, Activation::Tanh, out_act, &mut rng);
        let x: Vec<f64> = (0..input).map(|_| rng.random_range(-1.0..1.0)).collect();
        let u: Vec<f64> = (0..output).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (f, w, c) = gradient_check(&mlp, &x, &u, 1e-5, 1e-4, 1e-8);
        failures += f;
        worst = worst.max(w);
        checked += c;
    }
    CheckOutcome::finish(
        5,
        "mlp gradients vs central differences",
        Duration::from_secs(60),
        start,
        failures == 0,
        format!("{nets} nets, {checked} coordinates, {failures} failures, max abs error {worst:.2e} (relative 1e-4 or absolute 1e-8)"),
    )
}

pub fn check_reward_contract() -> CheckOutcome {
    let start = Instant::now();
    let v = RewardMode::Verbatim;
    let table = [
        (reward(10.0, 12.0, 100.0, v), 0.10),
        (reward(12.0, 10.0, 100.0, v), -0.12),
        (reward(11.0, 11.0, 100.0, v), 0.11),
    ];
    let table_ok = table.iter().all(|(got, want)| (got - want).abs() <= 1e-12);

    // Rewards of a fixed action set at one state under several scales.
    let sim = SimConfig::desk();
    let topo = generate_topology(&sim.topology, 6).expect("valid");
    let mut env = OffloadEnv::from_config(&sim, topo).expect("valid");
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let actions: Vec<Vec<f64>> = (0..40)
        .map(|_| (0..env.action_len()).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let arrivals = vec![40e6, 60e6];
    let mut argmax = Vec::new();
    let mut signs = Vec::new();
    for scale in [1.0, 1e3, 1e13, 1e20] {
        let mut s = sim.clone();
        s.env.reward_scale = scale;
        env = OffloadEnv::from_config(&s, env.base_topology().clone()).expect("valid");
        let rewards: Vec<f64> = actions
            .iter()
            .map(|a| {
                env.reset_to(env.base_topology().clone(), arrivals.clone());
                env.step(a).expect("fresh episode").reward
            })
            .collect();
        // Overload rewards are a fixed penalty, so compare the feasible ones.
        let feasible: Vec<(usize, f64)> = rewards
            .iter()
            .enumerate()
            .filter(|(i, _)| env.decision_cost(&env.normalize(&actions[*i])).is_some())
            .map(|(i, &r)| (i, r))
            .collect();
        signs.push(feasible.iter().map(|(_, r)| r.signum()).collect::<Vec<_>>());
        argmax.push(
            feasible
                .iter()
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(i, _)| *i),
        );
    }
    let invariant = signs.windows(2).all(|w| w[0] == w[1]) && argmax.windows(2).all(|w| w[0] == w[1]) && !signs[0].is_empty();
    CheckOutcome::finish(
        6,
        "reward sign/magnitude contract",
        Duration::from_secs(1),
        start,
        table_ok && invariant,
        format!(
            "table exact: {table_ok}; signs and argmax invariant over scales 1..1e20: {invariant} ({} feasible actions)",
            signs[0].len()
        ),
    )
}

/// Per-seed outcome of the learning smoke test.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningSeed {
    pub seed: u64,
    pub first_mean: f64,
    pub last_mean: f64,
    pub greedy_cost: f64,
    pub uniform_cost: f64,
}

impl LearningSeed {
    pub fn improved(&self) -> bool {
        self.last_mean > self.first_mean
    }

    pub fn beats_uniform(&self) -> bool {
        self.greedy_cost <= self.uniform_cost
    }
}

/// Trains DTD3 on the desk preset and compares the greedy policy with the
/// uniform split on the seed's topology with every MEC at the lowest hotspot
/// rate (the snapshot on which the uniform split is stable).
pub fn learning_seed(sim: &SimConfig, episodes: usize, window: usize, seed: u64) -> LearningSeed {
    let topo = generate_topology(&sim.topology, seed).expect("valid");
    let mut env = OffloadEnv::from_config(sim, topo).expect("valid");
    let (agent, curve) = train(mecvf::agents::AgentKind::Dtd3, &mut env, &sim.agent, episodes, seed).expect("dims agree");
    let mean = |s: &[mecvf::agents::EpisodeRecord]| s.iter().map(|r| r.reward).sum::<f64>() / s.len() as f64;
    let window = window.min(curve.len() / 2).max(1);
    let rate = sim.traffic.hotspot_rates_mpps.iter().copied().fold(f64::INFINITY, f64::min) * 1e6;
    let arrivals = vec![rate; env.n_mecs()];
    env.reset_to(env.base_topology().clone(), arrivals);
    let uniform_cost = env.uniform_cost();
    let record = greedy_episode(&agent, &mut env, 0).expect("fresh episode");
    LearningSeed {
        seed,
        first_mean: mean(&curve[..window]),
        last_mean: mean(&curve[curve.len() - window..]),
        greedy_cost: if record.overloaded || record.cost.is_nan() { f64::INFINITY } else { record.cost },
        uniform_cost,
    }
}

pub fn check_learning(episodes: usize, seeds: &[u64]) -> (CheckOutcome, Vec<LearningSeed>) {
    let start = Instant::now();
    let sim = SimConfig::desk();
    let results: Vec<LearningSeed> = seeds.iter().map(|&s| learning_seed(&sim, episodes, 200, s)).collect();
    let improved = results.iter().filter(|r| r.improved()).count();
    let beats = results.iter().filter(|r| r.beats_uniform()).count();
    let need = (2 * seeds.len()).div_ceil(3);
    let detail = results
        .iter()
        .map(|r| {
            format!(
                "seed {}: reward {:.3} -> {:.3}, greedy C {:.4e} vs uniform {:.4e}",
                r.seed, r.first_mean, r.last_mean, r.greedy_cost, r.uniform_cost
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    let outcome = CheckOutcome::finish(
        7,
        "dtd3 learning smoke test",
        Duration::from_secs(600),
        start,
        improved >= need && beats >= need,
        format!("(a) improved {improved}/{} (b) greedy<=uniform {beats}/{} [{detail}]", seeds.len(), seeds.len()),
    );
    (outcome, results)
}

/// The frozen two-MEC, one-fog snapshot used by the metaheuristic check.
pub fn metaheuristic_snapshot() -> SnapshotOracle {
    let sim = SimConfig::default();
    let cfg = TopologyConfig {
        n_mecs: 2,
        fogs_per_mec: 1,
        b_min: 25,
        b_max: 25,
        ..sim.topology.clone()
    };
    let topo = generate_topology(&cfg, 8).expect("valid");
    SnapshotOracle::new(
        topo,
        vec![40e6, 40e6],
        CostWeights::new(sim.cost.sigma, sim.env.reward_scale),
        sim.cost.stability_guard,
        sim.metaheuristic.penalty_factor,
    )
}

pub fn check_metaheuristics(evaluations: usize) -> CheckOutcome {
    let start = Instant::now();
    let oracle = metaheuristic_snapshot();
    let (grid, _) = grid_search_optimum(&oracle, 50);
    let cfg = SimConfig::default().metaheuristic;
    let sa = sa_optimize(&oracle, &cfg, evaluations, 11);
    let pso = pso_optimize(&oracle, &cfg, evaluations, 11);
    let monotone = |t: &[f64]| t.windows(2).all(|w| w[1] <= w[0]);
    let ok = sa.best_cost <= 1.05 * grid && pso.best_cost <= 1.05 * grid && monotone(&sa.trace) && monotone(&pso.trace);
    CheckOutcome::finish(
        8,
        "sa/pso vs 0.02 grid optimum",
        Duration::from_secs(120),
        start,
        ok,
        format!(
            "grid {grid:.6e}, sa {:.6e} ({:+.2}%), pso {:.6e} ({:+.2}%), traces non-increasing: {}",
            sa.best_cost,
            100.0 * (sa.best_cost / grid - 1.0),
            pso.best_cost,
            100.0 * (pso.best_cost / grid - 1.0),
            monotone(&sa.trace) && monotone(&pso.trace)
        ),
    )
}

fn sigma_spec() -> ExperimentSpec {
    let mut spec = ExperimentSpec::new(ExperimentSection {
        id: "sigma".into(),
        kind: ExperimentKind::SigmaSweep,
        preset: Preset::Desk,
        algorithms: vec![Algorithm::Uniform, Algorithm::Sa, Algorithm::Pso],
        search_evaluations: 400,
        seeds: vec![0, 1],
        eval_episodes: 3,
        ..ExperimentSection::default()
    });
    spec.sim.traffic.kind = mecvf::model::TrafficKind::Normal;
    spec
}

pub fn check_sigma_endpoints() -> CheckOutcome {
    let start = Instant::now();
    let spec = sigma_spec();
    let rows: Vec<_> = run_replicas(&spec)
        .expect("sweep runs")
        .into_iter()
        .flat_map(|r| r.rows)
        .collect();
    let finite: Vec<_> = rows.iter().filter(|r| !r.cost.is_nan()).collect();
    let at_one = finite.iter().filter(|r| r.x == 1.0).all(|r| r.cost == r.latency);
    let at_zero = finite.iter().filter(|r| r.x == 0.0).all(|r| r.cost == r.energy);
    let endpoints = finite.iter().filter(|r| r.x == 0.0 || r.x == 1.0).count();

    // Along the segment between two observed (L, E) pairs, at a fixed sigma,
    // the cost must move monotonically.
    let mut monotone = true;
    for pair in finite.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        for sigma in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let w = CostWeights::new(sigma, 1.0);
            let path: Vec<f64> = (0..=20)
                .map(|t| {
                    let t = f64::from(t) / 20.0;
                    w.combine((1.0 - t) * a.latency + t * b.latency, (1.0 - t) * a.energy + t * b.energy)
                })
                .collect();
            let up = path.windows(2).all(|p| p[1] >= p[0] - 1e-9 * p[0].abs());
            let down = path.windows(2).all(|p| p[1] <= p[0] + 1e-9 * p[0].abs());
            monotone &= up || down;
        }
    }
    CheckOutcome::finish(
        9,
        "sigma endpoint identity",
        Duration::from_secs(60),
        start,
        at_one && at_zero && endpoints > 0 && monotone,
        format!("C=L at 1: {at_one}, C=E at 0: {at_zero} over {endpoints} endpoint rows; monotone segments: {monotone}"),
    )
}

/// Small five-algorithm comparison used by the determinism check.
pub fn determinism_spec() -> ExperimentSpec {
    let mut spec = ExperimentSpec::new(ExperimentSection {
        id: "determinism".into(),
        kind: ExperimentKind::Convergence,
        preset: Preset::Desk,
        algorithms: Algorithm::ALL.to_vec(),
        drl_episodes: 30,
        search_evaluations: 500,
        seeds: vec![0, 1],
        trace_stride: 50,
        ..ExperimentSection::default()
    });
    spec.sim.agent.hidden = vec![32, 32];
    spec.sim.agent.batch_size = 32;
    spec
}

pub fn check_determinism(dir_a: &std::path::Path, dir_b: &std::path::Path) -> CheckOutcome {
    let start = Instant::now();
    let spec = determinism_spec();
    let a = run_experiment(&spec, dir_a, 2).expect("first run");
    let b = run_experiment(&spec, dir_b, 1).expect("second run");
    let read = |p: &std::path::Path| std::fs::read(p).expect("written");
    let same = [
        (a.metrics.as_path(), b.metrics.as_path()),
        (a.summary.as_path(), b.summary.as_path()),
        (a.plot.as_path(), b.plot.as_path()),
    ]
    .iter()
    .all(|(x, y)| read(x) == read(y));
    let rows = read(&a.metrics).iter().filter(|&&c| c == b'\n').count();
    CheckOutcome::finish(
        10,
        "compare determinism",
        Duration::from_secs(300),
        start,
        same && rows > 1,
        format!("byte-identical csv bodies across runs with 2 and 1 workers: {same} ({rows} lines)"),
    )
}

/// Runs the fast checks (everything except the learning smoke test unless
/// `full` is set).
pub fn run_checks(full: bool, scratch: &std::path::Path) -> Vec<CheckOutcome> {
    let mut out = vec![
        check_erlang_c(),
        check_mm1_simulation(1_000_000),
        check_cost_model(100),
        check_constraint_suite(),
        check_gradients(20),
        check_reward_contract(),
    ];
    if full {
        out.push(check_learning(2000, &[0, 1, 2]).0);
    }
    out.push(check_metaheuristics(20_000));
    out.push(check_sigma_endpoints());
    out.push(check_determinism(&scratch.join("run_a"), &scratch.join("run_b")));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn birth_death_oracle_known_values() {
        // M/M/2 with offered load 1: P(wait) = 1/3.
        assert!((erlang_c_birth_death(2, 1.0, 1.0) - 1.0 / 3.0).abs() < 1e-12);
        assert!((erlang_c_birth_death(1, 0.4, 1.0) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn factorial_form_matches_recursion() {
        for b in [1u32, 3, 10, 40, 70] {
            for rho in [0.1, 0.5, 0.95] {
                let lam = rho * f64::from(b);
                let rec = erlang_c(b, lam, 1.0).unwrap();
                assert!((erlang_c_factorial(b, rho) - rec).abs() < 1e-10, "b={b} rho={rho}");
            }
        }
    }

    #[test]
    fn short_simulation_is_close() {
        let s = simulate_mm1_sojourn(1.0, 2.0, 200_000, 1);
        assert!((s - 1.0).abs() < 0.05);
    }

    #[test]
    fn grid_search_on_a_bowl() {
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
                (d.local(0) - 0.31).powi(2)
            }
        }
        let (c, d) = grid_search_optimum(&Bowl, 50);
        assert!((d.local(0) - 0.3).abs() < 1e-12 || (d.local(0) - 0.32).abs() < 1e-12);
        assert!(c <= 1e-4 + 1e-12);
    }

    #[test]
    fn gradient_check_flags_a_wrong_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::new(3, &[5], 2, Activation::Tanh, Activation::Identity, &mut rng);
        let (fails, _, checked) = gradient_check(&mlp, &[0.1, -0.2, 0.3], &[1.0, -0.5], 1e-5, 1e-4, 1e-8);
        assert_eq!(fails, 0);
        assert_eq!(checked, mlp.parameter_count() + 3);
        // Tight tolerance with a huge step must fail somewhere.
        let (fails, _, _) = gradient_check(&mlp, &[0.1, -0.2, 0.3], &[1.0, -0.5], 0.5, 1e-9, 0.0);
        assert!(fails > 0);
    }
}
