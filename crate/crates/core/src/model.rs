//! Two-tier network description: MEC sites on top, parked-vehicle fogs below.
//!
//! Rates are stored in packets per second, powers in watts, distances in
//! meters. Generators are pure functions of `(config, seed)`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{TopologyConfig, TrafficConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("traffic profile has an empty rate set")]
    EmptyRateSet,
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ModelError {
    ModelError::InvalidConfig {
        field,
        reason: reason.into(),
    }
}

/// Converts a power level in dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MecSite {
    pub id: usize,
    /// Single-server service rate, packets/s.
    pub service_rate: f64,
    /// Transmit power towards its fogs, watts.
    pub tx_power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicularFog {
    pub id: usize,
    pub owner_mec: usize,
    pub vehicle_count: u32,
    /// Service rate of one vehicle, packets/s.
    pub per_vehicle_rate: f64,
    /// Aggregate capacity, always `vehicle_count * per_vehicle_rate`.
    pub service_rate: f64,
    pub cpu_cycles_per_bit: f64,
    pub energy_per_cycle: f64,
    pub return_ratio: f64,
    pub tx_power: f64,
    pub channel_gain: f64,
}

impl VehicularFog {
    pub fn set_vehicle_count(&mut self, count: u32) {
        self.vehicle_count = count;
        self.service_rate = f64::from(count) * self.per_vehicle_rate;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub mecs: Vec<MecSite>,
    /// Row-major `n_mecs x fogs_per_mec`; fog `k` of MEC `i` is at `i * fogs_per_mec + k`.
    pub fogs: Vec<VehicularFog>,
    pub fogs_per_mec: usize,
    /// Symmetric, zero diagonal, meters.
    pub distances: Vec<Vec<f64>>,
    pub bandwidth: f64,
    pub noise_density: f64,
    pub packet_size: f64,
    pub h_neighbors: usize,
    pub q_fogs: usize,
    pub b_min: u32,
    pub b_max: u32,
    /// For each MEC, the `h_neighbors` peers it may offload to, nearest first.
    pub neighbors: Vec<Vec<usize>>,
}

impl Topology {
    pub fn n_mecs(&self) -> usize {
        self.mecs.len()
    }

    pub fn fog(&self, mec: usize, k: usize) -> &VehicularFog {
        &self.fogs[mec * self.fogs_per_mec + k]
    }

    pub fn fogs_of(&self, mec: usize) -> &[VehicularFog] {
        let start = mec * self.fogs_per_mec;
        &self.fogs[start..start + self.fogs_per_mec]
    }

    /// Offload targets per MEC: one local slot, `h` peers, `q` fogs.
    pub fn block_width(&self) -> usize {
        1 + self.h_neighbors + self.q_fogs
    }

    /// Fog indices (within the owner) that receive vertical traffic. The first
    /// `q_fogs` fogs are selected.
    pub fn selected_fogs(&self) -> std::ops::Range<usize> {
        0..self.q_fogs
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.n_mecs();
        if n == 0 {
            return Err(invalid("n_mecs", "need at least one MEC"));
        }
        if self.fogs.len() != n * self.fogs_per_mec {
            return Err(invalid("fogs", "fog list does not match n_mecs x fogs_per_mec"));
        }
        if self.h_neighbors >= n {
            return Err(invalid("h_neighbors", format!("{} >= n_mecs {}", self.h_neighbors, n)));
        }
        if self.q_fogs > self.fogs_per_mec {
            return Err(invalid("q_fogs", "exceeds fogs_per_mec"));
        }
        if self.neighbors.len() != n || self.neighbors.iter().any(|l| l.len() != self.h_neighbors) {
            return Err(invalid("neighbors", "neighbor lists must have h_neighbors entries per MEC"));
        }
        for (i, row) in self.distances.iter().enumerate() {
            if row.len() != n || row[i] != 0.0 {
                return Err(invalid("distances", "matrix must be n x n with zero diagonal"));
            }
            for (j, &d) in row.iter().enumerate() {
                if d != self.distances[j][i] || d < 0.0 {
                    return Err(invalid("distances", "matrix must be symmetric and non-negative"));
                }
            }
        }
        Ok(())
    }

    /// Applies a permutation `perm[new] = old` to MEC indices.
    pub fn permuted(&self, perm: &[usize]) -> Topology {
        let n = self.n_mecs();
        let mut inverse = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let mecs = perm
            .iter()
            .enumerate()
            .map(|(new, &old)| MecSite { id: new, ..self.mecs[old].clone() })
            .collect();
        let mut fogs = Vec::with_capacity(self.fogs.len());
        for (new, &old) in perm.iter().enumerate() {
            for (k, fog) in self.fogs_of(old).iter().enumerate() {
                fogs.push(VehicularFog {
                    id: new * self.fogs_per_mec + k,
                    owner_mec: new,
                    ..fog.clone()
                });
            }
        }
        let distances = perm
            .iter()
            .map(|&a| perm.iter().map(|&b| self.distances[a][b]).collect())
            .collect();
        let neighbors = perm
            .iter()
            .map(|&old| self.neighbors[old].iter().map(|&j| inverse[j]).collect())
            .collect();
        Topology {
            mecs,
            fogs,
            distances,
            neighbors,
            ..self.clone()
        }
    }
}

/// Nearest-first peer lists, ties broken by index.
pub fn nearest_neighbors(distances: &[Vec<f64>], h: usize) -> Vec<Vec<usize>> {
    (0..distances.len())
        .map(|i| {
            let mut peers: Vec<usize> = (0..distances.len()).filter(|&j| j != i).collect();
            peers.sort_by(|&a, &b| distances[i][a].total_cmp(&distances[i][b]).then(a.cmp(&b)));
            peers.truncate(h);
            peers
        })
        .collect()
}

pub fn generate_topology(config: &TopologyConfig, seed: u64) -> Result<Topology, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = config.n_mecs;
    let m = config.fogs_per_mec;

    let mut distances = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = rng.random_range(config.distance_km_min..=config.distance_km_max) * 1000.0;
            distances[i][j] = d;
            distances[j][i] = d;
        }
    }

    let mecs = (0..n)
        .map(|id| MecSite {
            id,
            service_rate: config.mec_rate_mpps * 1e6,
            tx_power: dbm_to_watts(config.mec_tx_power_dbm),
        })
        .collect();

    let mut fogs = Vec::with_capacity(n * m);
    for i in 0..n {
        for k in 0..m {
            let mut fog = VehicularFog {
                id: i * m + k,
                owner_mec: i,
                vehicle_count: 0,
                per_vehicle_rate: config.per_vehicle_rate_mpps * 1e6,
                service_rate: 0.0,
                cpu_cycles_per_bit: config.cpu_cycles_per_bit,
                energy_per_cycle: config.energy_per_cycle,
                return_ratio: config.return_ratio,
                tx_power: dbm_to_watts(config.vf_tx_power_dbm),
                channel_gain: config.channel_gain,
            };
            fog.set_vehicle_count(rng.random_range(config.b_min..=config.b_max));
            fogs.push(fog);
        }
    }

    let h = config.h_neighbors.unwrap_or(n - 1);
    let q = config.q_fogs.unwrap_or(m);
    let topology = Topology {
        mecs,
        fogs,
        fogs_per_mec: m,
        neighbors: nearest_neighbors(&distances, h),
        distances,
        bandwidth: config.bandwidth_mhz * 1e6,
        noise_density: dbm_to_watts(config.noise_dbm_per_hz),
        packet_size: config.packet_size_bits,
        h_neighbors: h,
        q_fogs: q,
        b_min: config.b_min,
        b_max: config.b_max,
    };
    topology.validate()?;
    Ok(topology)
}

/// Redraws every fog's vehicle count uniformly in `[b_min, b_max]`.
pub fn resample_vehicles(topology: &Topology, seed: u64) -> Topology {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = topology.clone();
    for fog in &mut out.fogs {
        fog.set_vehicle_count(rng.random_range(topology.b_min..=topology.b_max));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrafficKind {
    Normal,
    Hotspot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficProfile {
    /// Candidate mean arrival rates, packets/s.
    pub rate_set: Vec<f64>,
    pub kind: TrafficKind,
}

impl TrafficProfile {
    pub fn new(rate_set: Vec<f64>, kind: TrafficKind) -> Result<Self, ModelError> {
        if rate_set.is_empty() {
            return Err(ModelError::EmptyRateSet);
        }
        if rate_set.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(invalid("rate_set", "rates must be positive and finite"));
        }
        Ok(Self { rate_set, kind })
    }

    pub fn from_config(config: &TrafficConfig) -> Result<Self, ModelError> {
        let rates = match config.kind {
            TrafficKind::Normal => &config.normal_rates_mpps,
            TrafficKind::Hotspot => &config.hotspot_rates_mpps,
        };
        Self::new(rates.iter().map(|r| r * 1e6).collect(), config.kind)
    }

    pub fn max_rate(&self) -> f64 {
        self.rate_set.iter().copied().fold(0.0, f64::max)
    }
}

/// Draws one mean arrival rate per MEC from the profile's rate set.
pub fn sample_arrivals(profile: &TrafficProfile, n_mecs: usize, seed: u64) -> Result<Vec<f64>, ModelError> {
    if profile.rate_set.is_empty() {
        return Err(ModelError::EmptyRateSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_mecs)
        .map(|_| profile.rate_set[rng.random_range(0..profile.rate_set.len())])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn standard() -> TopologyConfig {
        TopologyConfig::default()
    }

    #[test]
    fn seed_determinism() {
        let a = generate_topology(&standard(), 7).unwrap();
        let b = generate_topology(&standard(), 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_mecs(), 4);
        assert_eq!(a.fogs.len(), 20);
        let c = generate_topology(&standard(), 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn vehicle_counts_in_range_and_capacity_consistent() {
        for seed in 0..20 {
            let t = generate_topology(&standard(), seed).unwrap();
            for fog in &t.fogs {
                assert!((5..=25).contains(&fog.vehicle_count));
                assert_eq!(fog.service_rate, f64::from(fog.vehicle_count) * fog.per_vehicle_rate);
            }
        }
    }

    #[test]
    fn fog_capacity_spans_three_to_fifteen_mpps() {
        let mut t = generate_topology(&standard(), 1).unwrap();
        t.fogs[0].set_vehicle_count(5);
        t.fogs[1].set_vehicle_count(25);
        assert!((t.fogs[0].service_rate - 3e6).abs() < 1e-6);
        assert!((t.fogs[1].service_rate - 15e6).abs() < 1e-6);
    }

    #[test]
    fn distances_symmetric_and_in_range() {
        let t = generate_topology(&standard(), 3).unwrap();
        for i in 0..4 {
            assert_eq!(t.distances[i][i], 0.0);
            for j in 0..4 {
                assert_eq!(t.distances[i][j], t.distances[j][i]);
                if i != j {
                    assert!((1000.0..=10000.0).contains(&t.distances[i][j]));
                }
            }
        }
    }

    #[test]
    fn dbm_conversion() {
        let w = dbm_to_watts(24.0);
        assert!(((w - 0.2512) / 0.2512).abs() < 1e-4);
        assert!((dbm_to_watts(30.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn invalid_configs_name_the_field() {
        let mut cfg = standard();
        cfg.mec_rate_mpps = 0.0;
        match generate_topology(&cfg, 0) {
            Err(ModelError::InvalidConfig { field, .. }) => assert_eq!(field, "mec_rate_mpps"),
            other => panic!("unexpected {other:?}"),
        }
        let mut cfg = standard();
        cfg.h_neighbors = Some(4);
        match generate_topology(&cfg, 0) {
            Err(ModelError::InvalidConfig { field, .. }) => assert_eq!(field, "h_neighbors"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn neighbors_are_nearest_first() {
        let mut cfg = standard();
        cfg.h_neighbors = Some(2);
        let t = generate_topology(&cfg, 11).unwrap();
        for i in 0..4 {
            let nb = &t.neighbors[i];
            assert_eq!(nb.len(), 2);
            let excluded = (0..4).find(|&j| j != i && !nb.contains(&j)).unwrap();
            for &j in nb {
                assert!(t.distances[i][j] <= t.distances[i][excluded]);
            }
        }
    }

    #[test]
    fn arrivals_drawn_from_set() {
        let p = TrafficProfile::new(vec![40e6, 60e6, 80e6], TrafficKind::Hotspot).unwrap();
        let a = sample_arrivals(&p, 4, 5).unwrap();
        assert_eq!(a.len(), 4);
        assert!(a.iter().all(|x| p.rate_set.contains(x)));
        assert_eq!(a, sample_arrivals(&p, 4, 5).unwrap());

        let single = TrafficProfile::new(vec![10e6], TrafficKind::Normal).unwrap();
        assert!(sample_arrivals(&single, 6, 0).unwrap().iter().all(|&x| x == 10e6));

        assert_eq!(TrafficProfile::new(vec![], TrafficKind::Normal), Err(ModelError::EmptyRateSet));
        let empty = TrafficProfile { rate_set: vec![], kind: TrafficKind::Normal };
        assert_eq!(sample_arrivals(&empty, 2, 0), Err(ModelError::EmptyRateSet));
    }

    #[test]
    fn resample_degenerate_interval() {
        let mut cfg = standard();
        cfg.b_min = 10;
        cfg.b_max = 10;
        let t = generate_topology(&cfg, 0).unwrap();
        let r = resample_vehicles(&t, 99);
        for fog in &r.fogs {
            assert_eq!(fog.vehicle_count, 10);
            assert_eq!(fog.service_rate, 10.0 * fog.per_vehicle_rate);
        }
    }

    #[test]
    fn resample_is_deterministic_and_consistent() {
        let t = generate_topology(&standard(), 0).unwrap();
        let a = resample_vehicles(&t, 42);
        assert_eq!(a, resample_vehicles(&t, 42));
        for fog in &a.fogs {
            assert!((5..=25).contains(&fog.vehicle_count));
            assert_eq!(fog.service_rate, f64::from(fog.vehicle_count) * fog.per_vehicle_rate);
        }
    }

    #[test]
    fn permutation_round_trip() {
        let t = generate_topology(&standard(), 2).unwrap();
        let perm = [2, 0, 3, 1];
        let p = t.permuted(&perm);
        p.validate().unwrap();
        assert_eq!(p.mecs.len(), 4);
        assert_eq!(p.fog(0, 3).vehicle_count, t.fog(2, 3).vehicle_count);
        assert_eq!(p.distances[0][1], t.distances[2][0]);
    }
}
