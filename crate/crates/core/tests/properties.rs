use mecvf::config::{RewardMode, SimConfig, TopologyConfig};
use mecvf::env::{clip_action, normalize_action, reward, OffloadEnv};
use mecvf::model::{generate_topology, Topology};
use mecvf::nn::{Activation, Mlp, ReplayBuffer, Transition};
use mecvf::queueing::{
    check_constraints, erlang_c, fog_load, local_load, mm1_sojourn, system_cost, CostWeights, OffloadDecision,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_topology(n: usize, m: usize, seed: u64) -> Topology {
    let cfg = TopologyConfig {
        n_mecs: n,
        fogs_per_mec: m,
        b_min: 40,
        b_max: 60,
        ..TopologyConfig::default()
    };
    generate_topology(&cfg, seed).unwrap()
}

fn decision_from_logits(topo: &Topology, logits: &[f64]) -> OffloadDecision {
    let w = topo.block_width();
    normalize_action(&logits[..topo.n_mecs() * w], topo.h_neighbors, topo.q_fogs)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn softmax_always_yields_a_simplex(raw in prop::collection::vec(-50.0f64..50.0, 1..40), h in 0usize..4, q in 1usize..5) {
        let w = 1 + h + q;
        let n = raw.len() / w;
        prop_assume!(n > 0);
        for input in [raw[..n * w].to_vec(), clip_action(&raw[..n * w])] {
            let d = normalize_action(&input, h, q);
            for i in 0..n {
                let row = d.row(i);
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                prop_assert!(row.iter().all(|r| (0.0..=1.0).contains(r)));
            }
        }
    }

    #[test]
    fn mm1_is_monotone(lambda in 0.0f64..100.0, gap in 0.1f64..100.0, bump in 0.01f64..1.0) {
        let mu = lambda + gap;
        let base = mm1_sojourn(lambda, mu).unwrap();
        prop_assert_eq!(base, 1.0 / (mu - lambda));
        let more_load = mm1_sojourn((lambda + bump * gap).min(mu - 1e-3), mu).unwrap();
        prop_assert!(more_load > base);
        prop_assert!(mm1_sojourn(lambda, mu + bump).unwrap() < base);
    }

    #[test]
    fn erlang_c_is_a_probability_increasing_in_load(c in 1u32..30, r1 in 0.01f64..0.98, dr in 0.001f64..0.01) {
        let r2 = (r1 + dr).min(0.999);
        let lo = erlang_c(c, r1 * f64::from(c), 1.0).unwrap();
        let hi = erlang_c(c, r2 * f64::from(c), 1.0).unwrap();
        prop_assert!(lo > 0.0 && lo <= 1.0);
        prop_assert!(hi > lo);
        if c == 1 {
            prop_assert_eq!(lo, r1);
        }
    }

    #[test]
    fn assigned_load_equals_offered_load(seed in 0u64..1000, logits in prop::collection::vec(-3.0f64..3.0, 24)) {
        let topo = small_topology(3, 2, seed);
        let d = decision_from_logits(&topo, &logits);
        let arrivals = [12e6, 25e6, 7e6];
        let mut assigned = 0.0;
        for i in 0..3 {
            assigned += local_load(&d, &arrivals, &topo, i);
            for k in topo.selected_fogs() {
                assigned += fog_load(&d, &arrivals, &topo, i, k);
            }
        }
        let offered: f64 = arrivals.iter().sum();
        prop_assert!((assigned - offered).abs() <= 1e-6 * offered);
    }

    #[test]
    fn cost_is_invariant_under_mec_permutation(seed in 0u64..1000, logits in prop::collection::vec(-1.0f64..1.0, 24), perm_id in 0usize..6) {
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let perm = perms[perm_id];
        let topo = small_topology(3, 2, seed);
        let d = decision_from_logits(&topo, &logits);
        let arrivals = vec![10e6, 15e6, 20e6];
        let weights = CostWeights::new(0.5, 1.0);
        let base = system_cost(&d, &arrivals, &topo, &weights);
        prop_assume!(base.is_ok());
        let base = base.unwrap();
        let p_topo = topo.permuted(&perm);
        let p_arrivals: Vec<f64> = perm.iter().map(|&o| arrivals[o]).collect();
        let rows: Vec<Vec<f64>> = perm.iter().map(|&o| d.row(o).to_vec()).collect();
        // Horizontal slots follow each MEC's neighbor list, which the
        // permutation keeps in nearest-first order, so rows carry over as is.
        let p_d = OffloadDecision::from_rows(topo.h_neighbors, topo.q_fogs, &rows);
        let permuted = system_cost(&p_d, &p_arrivals, &p_topo, &weights).unwrap();
        prop_assert!((base.cost - permuted.cost).abs() <= 1e-9 * base.cost.abs());
    }

    #[test]
    fn no_vertical_traffic_means_no_energy(seed in 0u64..1000, local in 0.0f64..1.0) {
        let topo = small_topology(2, 2, seed);
        let w = topo.block_width();
        let mut row = vec![0.0; w];
        row[0] = local;
        row[1] = 1.0 - local;
        let d = OffloadDecision::from_rows(topo.h_neighbors, topo.q_fogs, &[row.clone(), row]);
        let c = system_cost(&d, &[5e6, 5e6], &topo, &CostWeights::new(0.3, 1.0)).unwrap();
        prop_assert_eq!(c.energy, 0.0);
    }

    #[test]
    fn reward_scale_never_changes_sign_or_order(c in prop::collection::vec(1.0f64..1e12, 2..20), prev in 1.0f64..1e12, s1 in 1.0f64..1e15, s2 in 1.0f64..1e15) {
        let r1: Vec<f64> = c.iter().map(|&x| reward(x, prev, s1, RewardMode::Verbatim)).collect();
        let r2: Vec<f64> = c.iter().map(|&x| reward(x, prev, s2, RewardMode::Verbatim)).collect();
        for i in 0..c.len() {
            prop_assert_eq!(r1[i].signum(), r2[i].signum());
            prop_assert_eq!(r1[i] > 0.0, c[i] <= prev);
            for j in 0..c.len() {
                prop_assert_eq!(r1[i] < r1[j], r2[i] < r2[j]);
            }
        }
    }

    #[test]
    fn soft_update_contracts_geometrically(seed in 0u64..1000, tau in 0.001f64..0.5, n in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let source = Mlp::new(3, &[4, 4], 2, Activation::Relu, Activation::Tanh, &mut rng);
        let mut target = Mlp::new(3, &[4, 4], 2, Activation::Relu, Activation::Tanh, &mut rng);
        let dist = |a: &Mlp, b: &Mlp| a.parameters().zip(b.parameters()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let d0 = dist(&target, &source);
        for _ in 0..n {
            target.soft_update(&source, tau).unwrap();
        }
        let expected = (1.0 - tau).powi(n as i32) * d0;
        prop_assert!((dist(&target, &source) - expected).abs() <= 1e-9 * d0);
    }

    #[test]
    fn replay_keeps_the_newest(capacity in 1usize..50, pushes in 0usize..200) {
        let mut buffer = ReplayBuffer::new(capacity);
        for t in 0..pushes {
            buffer.push(Transition { state: vec![t as f64], action: vec![], next_state: vec![], reward: 0.0, done: false });
            prop_assert!(buffer.len() <= capacity);
        }
        let mut kept: Vec<f64> = (0..buffer.len()).map(|i| buffer.get(i).unwrap().state[0]).collect();
        kept.sort_by(f64::total_cmp);
        let first = pushes.saturating_sub(capacity);
        let expected: Vec<f64> = (first..pushes).map(|t| t as f64).collect();
        prop_assert_eq!(kept, expected);
    }

    #[test]
    fn env_trajectories_are_reproducible(seed in 0u64..200, actions in prop::collection::vec(-1.0f64..1.0, 80)) {
        let sim = SimConfig::desk();
        let run = || {
            let topo = generate_topology(&sim.topology, seed).unwrap();
            let mut env = OffloadEnv::from_config(&sim, topo).unwrap();
            let mut trace = vec![env.reset(seed).unwrap().features(env.scaling())];
            let len = env.action_len();
            let mut rewards = Vec::new();
            for chunk in actions.chunks(len) {
                if env.is_done() || chunk.len() < len {
                    break;
                }
                let out = env.step(chunk).unwrap();
                rewards.push(out.reward.to_bits());
                trace.push(out.next_state.features(env.scaling()));
            }
            (trace, rewards, env.steps())
        };
        let (a, b) = (run(), run());
        prop_assert!(a.2 <= 10);
        prop_assert_eq!(format!("{:?}", a.0), format!("{:?}", b.0));
        prop_assert_eq!(a.1, b.1);
    }

    #[test]
    fn applied_decisions_pass_the_simplex_constraints(seed in 0u64..200, raw in prop::collection::vec(-5.0f64..5.0, 8)) {
        let sim = SimConfig::desk();
        let topo = generate_topology(&sim.topology, seed).unwrap();
        let env = OffloadEnv::from_config(&sim, topo).unwrap();
        let d = env.normalize(&raw);
        // Tiny arrivals, so only the simplex rules can fire.
        let v = check_constraints(&d, &[1.0, 1.0], env.topology(), 0.999);
        prop_assert!(v.is_empty(), "{:?}", v);
    }
}
