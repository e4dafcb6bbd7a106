//! Closed-form latency and energy model.
//!
//! Every MEC site is an M/M/1 queue, every vehicular fog an M/M/c queue with
//! one server per parked vehicle. An MEC splits its arrivals into a local
//! share, shares for `h` peer MECs and shares for `q` of its own fogs. Branch
//! latencies are ratio-weighted sojourn times; an MEC's latency is the worst
//! branch and the system figures are means over MECs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Topology;

pub const SPEED_OF_LIGHT: f64 = 3.0e8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueueError {
    #[error("{server} overloaded: arrival rate {lambda} >= capacity {capacity}")]
    Overload {
        server: Server,
        lambda: f64,
        capacity: f64,
    },
    #[error("zero-rate link to fog {fog} of MEC {mec} carrying {lambda} packets/s")]
    DegenerateLink { mec: usize, fog: usize, lambda: f64 },
    #[error("decision shape {got:?} does not match topology {expected:?}")]
    Shape {
        got: (usize, usize),
        expected: (usize, usize),
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Server {
    Mec(usize),
    Fog { mec: usize, fog: usize },
    /// A bare queue evaluated outside any topology.
    Queue,
}

impl std::fmt::Display for Server {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Server::Mec(i) => write!(f, "MEC {i}"),
            Server::Fog { mec, fog } => write!(f, "fog {fog} of MEC {mec}"),
            Server::Queue => write!(f, "queue"),
        }
    }
}

/// Mean sojourn time of an M/M/1 queue, `1 / (mu - lambda)`.
pub fn mm1_sojourn(lambda: f64, mu: f64) -> Result<f64, QueueError> {
    if !(lambda < mu) {
        return Err(QueueError::Overload {
            server: Server::Queue,
            lambda,
            capacity: mu,
        });
    }
    // lambda / (mu (mu - lambda)) + 1 / mu, simplified.
    Ok(1.0 / (mu - lambda))
}

/// Probability that an arrival waits in an M/M/c queue with `servers`
/// servers of rate `mu_per_server`.
///
/// Uses the Erlang-B recursion and `C = B / (1 - rho (1 - B))`, which stays
/// finite for large server counts where the factorial form overflows.
pub fn erlang_c(servers: u32, lambda: f64, mu_per_server: f64) -> Result<f64, QueueError> {
    assert!(servers >= 1, "erlang_c needs at least one server");
    let c = f64::from(servers);
    let offered = lambda / mu_per_server;
    let rho = offered / c;
    if !(rho < 1.0) {
        return Err(QueueError::Overload {
            server: Server::Queue,
            lambda,
            capacity: c * mu_per_server,
        });
    }
    if servers == 1 {
        // A single server waits with probability rho.
        return Ok(rho);
    }
    let mut b = 1.0;
    for n in 1..=servers {
        b = offered * b / (f64::from(n) + offered * b);
    }
    Ok(b / (1.0 - rho * (1.0 - b)))
}

/// Shannon rate `W log2(1 + F G^2 / (omega W))` in bits/s.
pub fn channel_rate(bandwidth: f64, power: f64, gain: f64, noise_density: f64) -> f64 {
    bandwidth * (1.0 + power * gain * gain / (noise_density * bandwidth)).log2()
}

/// MEC-to-fog rate, driven by the MEC's transmit power.
pub fn downlink_rate(topology: &Topology, mec: usize, fog: usize) -> f64 {
    let f = topology.fog(mec, fog);
    channel_rate(topology.bandwidth, topology.mecs[mec].tx_power, f.channel_gain, topology.noise_density)
}

/// Fog-to-MEC rate, driven by the fog's transmit power.
pub fn uplink_rate(topology: &Topology, mec: usize, fog: usize) -> f64 {
    let f = topology.fog(mec, fog);
    channel_rate(topology.bandwidth, f.tx_power, f.channel_gain, topology.noise_density)
}

/// Per-MEC offloading ratios: `[local, horizontal.., vertical..]` rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffloadDecision {
    h: usize,
    q: usize,
    ratios: Vec<f64>,
}

impl OffloadDecision {
    /// Builds a decision from a flat row-major buffer of width `1 + h + q`.
    pub fn from_flat(h: usize, q: usize, ratios: Vec<f64>) -> Self {
        assert_eq!(ratios.len() % (1 + h + q), 0, "ratio buffer not a multiple of the row width");
        Self { h, q, ratios }
    }

    pub fn from_rows(h: usize, q: usize, rows: &[Vec<f64>]) -> Self {
        let mut ratios = Vec::with_capacity(rows.len() * (1 + h + q));
        for row in rows {
            assert_eq!(row.len(), 1 + h + q);
            ratios.extend_from_slice(row);
        }
        Self { h, q, ratios }
    }

    /// Everything executed at the host MEC.
    pub fn all_local(topology: &Topology) -> Self {
        let w = topology.block_width();
        let mut ratios = vec![0.0; topology.n_mecs() * w];
        for row in ratios.chunks_mut(w) {
            row[0] = 1.0;
        }
        Self::from_flat(topology.h_neighbors, topology.q_fogs, ratios)
    }

    pub fn n_mecs(&self) -> usize {
        self.ratios.len() / self.width()
    }

    pub fn width(&self) -> usize {
        1 + self.h + self.q
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn row(&self, mec: usize) -> &[f64] {
        let w = self.width();
        &self.ratios[mec * w..(mec + 1) * w]
    }

    pub fn row_mut(&mut self, mec: usize) -> &mut [f64] {
        let w = self.width();
        &mut self.ratios[mec * w..(mec + 1) * w]
    }

    pub fn local(&self, mec: usize) -> f64 {
        self.row(mec)[0]
    }

    /// Ratios aligned with `topology.neighbors[mec]`.
    pub fn horizontal(&self, mec: usize) -> &[f64] {
        &self.row(mec)[1..1 + self.h]
    }

    /// Ratios aligned with `topology.selected_fogs()`.
    pub fn vertical(&self, mec: usize) -> &[f64] {
        &self.row(mec)[1 + self.h..]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.ratios
    }

    fn check_shape(&self, topology: &Topology) -> Result<(), QueueError> {
        let expected = (topology.n_mecs(), topology.block_width());
        let got = (self.n_mecs(), self.width());
        if got != expected || self.h != topology.h_neighbors || self.q != topology.q_fogs {
            return Err(QueueError::Shape { got, expected });
        }
        Ok(())
    }
}

/// Equal split over all `1 + h + q` targets of every MEC.
pub fn uniform_policy(topology: &Topology) -> OffloadDecision {
    let w = topology.block_width();
    OffloadDecision::from_flat(
        topology.h_neighbors,
        topology.q_fogs,
        vec![1.0 / w as f64; topology.n_mecs() * w],
    )
}

/// Total arrival rate at MEC `mec`: its own local share plus horizontal
/// inflow from every peer that lists it as a neighbor.
pub fn local_load(decision: &OffloadDecision, arrivals: &[f64], topology: &Topology, mec: usize) -> f64 {
    let mut load = decision.local(mec) * arrivals[mec];
    for (j, peers) in topology.neighbors.iter().enumerate() {
        if j == mec {
            continue;
        }
        for (slot, &target) in peers.iter().enumerate() {
            if target == mec {
                load += decision.horizontal(j)[slot] * arrivals[j];
            }
        }
    }
    load
}

/// Arrival rate at fog `fog` of MEC `mec`; zero for unselected fogs.
pub fn fog_load(decision: &OffloadDecision, arrivals: &[f64], topology: &Topology, mec: usize, fog: usize) -> f64 {
    if topology.selected_fogs().contains(&fog) {
        decision.vertical(mec)[fog] * arrivals[mec]
    } else {
        0.0
    }
}

fn mec_sojourn(load: f64, topology: &Topology, mec: usize) -> Result<f64, QueueError> {
    let mu = topology.mecs[mec].service_rate;
    mm1_sojourn(load, mu).map_err(|_| QueueError::Overload {
        server: Server::Mec(mec),
        lambda: load,
        capacity: mu,
    })
}

/// Ratio-weighted sojourn of the locally kept share.
pub fn local_latency(decision: &OffloadDecision, arrivals: &[f64], topology: &Topology, mec: usize) -> Result<f64, QueueError> {
    let ratio = decision.local(mec);
    if ratio == 0.0 {
        return Ok(0.0);
    }
    let load = local_load(decision, arrivals, topology, mec);
    Ok(ratio * mec_sojourn(load, topology, mec)?)
}

/// Worst ratio-weighted latency over the peers `mec` offloads to, including
/// the round-trip propagation delay.
pub fn horizontal_latency(decision: &OffloadDecision, arrivals: &[f64], topology: &Topology, mec: usize) -> Result<f64, QueueError> {
    let mut worst: f64 = 0.0;
    for (&j, &ratio) in topology.neighbors[mec].iter().zip(decision.horizontal(mec)) {
        if ratio == 0.0 {
            continue;
        }
        let load = local_load(decision, arrivals, topology, j);
        let propagation = topology.distances[mec][j] / SPEED_OF_LIGHT;
        worst = worst.max(ratio * (mec_sojourn(load, topology, j)? + 2.0 * propagation));
    }
    Ok(worst)
}

/// Unweighted latency of fog `fog` of MEC `mec` carrying `lambda` packets/s:
/// the M/M/c sojourn plus both transfer legs.
pub fn fog_latency(topology: &Topology, mec: usize, fog: usize, lambda: f64) -> Result<f64, QueueError> {
    let f = topology.fog(mec, fog);
    let capacity = f.service_rate;
    let overload = QueueError::Overload {
        server: Server::Fog { mec, fog },
        lambda,
        capacity,
    };
    if !(lambda < capacity) {
        return Err(overload);
    }
    let down = downlink_rate(topology, mec, fog);
    let up = uplink_rate(topology, mec, fog);
    if lambda > 0.0 && (down <= 0.0 || (up <= 0.0 && f.return_ratio > 0.0)) {
        return Err(QueueError::DegenerateLink { mec, fog, lambda });
    }
    let wait_probability = erlang_c(f.vehicle_count, lambda, f.per_vehicle_rate).map_err(|_| overload)?;
    let transfer_down = if lambda > 0.0 { lambda / down } else { 0.0 };
    let transfer_up = if lambda > 0.0 && f.return_ratio > 0.0 { lambda * f.return_ratio / up } else { 0.0 };
    let compute = wait_probability / (capacity - lambda) + 1.0 / f.per_vehicle_rate;
    Ok(transfer_down + compute + transfer_up)
}

/// Worst ratio-weighted latency over the fogs `mec` offloads to.
pub fn vertical_latency(decision: &OffloadDecision, arrivals: &[f64], topology: &Topology, mec: usize) -> Result<f64, QueueError> {
    let mut worst: f64 = 0.0;
    for (k, &ratio) in decision.vertical(mec).iter().enumerate() {
        if ratio == 0.0 {
            continue;
        }
        let lambda = ratio * arrivals[mec];
        worst = worst.max(ratio * fog_latency(topology, mec, k, lambda)?);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FogEnergy {
    pub compute: f64,
    pub downlink: f64,
    pub uplink: f64,
}

impl FogEnergy {
    pub fn total(&self) -> f64 {
        self.downlink + self.compute + self.uplink
    }
}

/// Energy drawn by fog `fog` of MEC `mec` for `lambda` packets/s.
pub fn fog_energy(topology: &Topology, mec: usize, fog: usize, lambda: f64) -> Result<FogEnergy, QueueError> {
    if lambda == 0.0 {
        return Ok(FogEnergy::default());
    }
    let f = topology.fog(mec, fog);
    let bits = lambda * topology.packet_size;
    let down = downlink_rate(topology, mec, fog);
    let up = uplink_rate(topology, mec, fog);
    if down <= 0.0 || (up <= 0.0 && f.return_ratio > 0.0) {
        return Err(QueueError::DegenerateLink { mec, fog, lambda });
    }
    Ok(FogEnergy {
        compute: f.cpu_cycles_per_bit * f.energy_per_cycle * bits,
        downlink: topology.mecs[mec].tx_power * bits / down,
        uplink: if f.return_ratio > 0.0 { f.tx_power * bits * f.return_ratio / up } else { 0.0 },
    })
}

/// Per-fog energies of MEC `mec` (all `M` fogs) and their sum.
pub fn vf_energy(decision: &OffloadDecision, arrivals: &[f64], topology: &Topology, mec: usize) -> Result<(Vec<FogEnergy>, f64), QueueError> {
    let per_fog = (0..topology.fogs_per_mec)
        .map(|k| fog_energy(topology, mec, k, fog_load(decision, arrivals, topology, mec, k)))
        .collect::<Result<Vec<_>, _>>()?;
    let total = per_fog.iter().map(FogEnergy::total).sum();
    Ok((per_fog, total))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    /// Latency weight; energy gets `1 - sigma`.
    pub sigma: f64,
    /// Reward divisor Ω.
    pub reward_scale: f64,
}

impl CostWeights {
    pub fn new(sigma: f64, reward_scale: f64) -> Self {
        assert!((0.0..=1.0).contains(&sigma), "sigma must lie in [0, 1]");
        assert!(reward_scale > 0.0, "reward scale must be positive");
        Self { sigma, reward_scale }
    }

    pub fn combine(&self, latency: f64, energy: f64) -> f64 {
        self.sigma * latency + (1.0 - self.sigma) * energy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MecCost {
    pub local: f64,
    pub horizontal: f64,
    pub vertical: f64,
    /// Worst of the three branches.
    pub latency: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub per_mec: Vec<MecCost>,
    pub latency: f64,
    pub energy: f64,
    pub cost: f64,
    pub mec_utilization: Vec<f64>,
    /// Row-major like `Topology::fogs`.
    pub fog_utilization: Vec<f64>,
}

impl CostBreakdown {
    /// Mean utilization over every MEC and fog server.
    pub fn mean_utilization(&self) -> f64 {
        let n = self.mec_utilization.len() + self.fog_utilization.len();
        (self.mec_utilization.iter().sum::<f64>() + self.fog_utilization.iter().sum::<f64>()) / n as f64
    }
}

pub fn system_cost(
    decision: &OffloadDecision,
    arrivals: &[f64],
    topology: &Topology,
    weights: &CostWeights,
) -> Result<CostBreakdown, QueueError> {
    decision.check_shape(topology)?;
    let n = topology.n_mecs();
    assert_eq!(arrivals.len(), n, "one arrival rate per MEC");

    let mut mec_utilization = Vec::with_capacity(n);
    for i in 0..n {
        let load = local_load(decision, arrivals, topology, i);
        let mu = topology.mecs[i].service_rate;
        if !(load < mu) {
            return Err(QueueError::Overload {
                server: Server::Mec(i),
                lambda: load,
                capacity: mu,
            });
        }
        mec_utilization.push(load / mu);
    }
    let mut fog_utilization = Vec::with_capacity(topology.fogs.len());
    for i in 0..n {
        for k in 0..topology.fogs_per_mec {
            let lambda = fog_load(decision, arrivals, topology, i, k);
            let capacity = topology.fog(i, k).service_rate;
            if !(lambda < capacity) {
                return Err(QueueError::Overload {
                    server: Server::Fog { mec: i, fog: k },
                    lambda,
                    capacity,
                });
            }
            fog_utilization.push(lambda / capacity);
        }
    }

    let per_mec = (0..n)
        .map(|i| {
            let local = local_latency(decision, arrivals, topology, i)?;
            let horizontal = horizontal_latency(decision, arrivals, topology, i)?;
            let vertical = vertical_latency(decision, arrivals, topology, i)?;
            let (_, energy) = vf_energy(decision, arrivals, topology, i)?;
            Ok(MecCost {
                local,
                horizontal,
                vertical,
                latency: local.max(horizontal).max(vertical),
                energy,
            })
        })
        .collect::<Result<Vec<_>, QueueError>>()?;

    let latency = per_mec.iter().map(|c| c.latency).sum::<f64>() / n as f64;
    let energy = per_mec.iter().map(|c| c.energy).sum::<f64>() / n as f64;
    Ok(CostBreakdown {
        cost: weights.combine(latency, energy),
        per_mec,
        latency,
        energy,
        mec_utilization,
        fog_utilization,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintId {
    /// Ratios of one MEC sum to one.
    SimplexSum,
    /// Every ratio lies in `[0, 1]`.
    RatioBounds,
    /// Assigned traffic does not exceed the MEC's arrivals.
    TrafficConservation,
    /// MEC load below capacity, host or receiving peer.
    MecStability,
    /// Fog load below capacity.
    FogStability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: ConstraintId,
    pub entity: Server,
    /// How far past the limit, in the constraint's own units.
    pub margin: f64,
}

pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Collects every violated constraint. Stability requires utilization at or
/// below `guard` (strictly below one).
pub fn check_constraints(decision: &OffloadDecision, arrivals: &[f64], topology: &Topology, guard: f64) -> Vec<Violation> {
    if let Err(e) = decision.check_shape(topology) {
        panic!("{e}");
    }
    let mut out = Vec::new();
    let n = topology.n_mecs();
    for i in 0..n {
        let row = decision.row(i);
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            out.push(Violation {
                constraint: ConstraintId::SimplexSum,
                entity: Server::Mec(i),
                margin: sum - 1.0,
            });
        }
        for &r in row {
            if !(0.0..=1.0).contains(&r) {
                out.push(Violation {
                    constraint: ConstraintId::RatioBounds,
                    entity: Server::Mec(i),
                    margin: if r < 0.0 { -r } else { r - 1.0 },
                });
            }
        }
        let assigned: f64 = row.iter().map(|r| r * arrivals[i]).sum();
        if assigned > arrivals[i] * (1.0 + SIMPLEX_TOLERANCE) {
            out.push(Violation {
                constraint: ConstraintId::TrafficConservation,
                entity: Server::Mec(i),
                margin: assigned - arrivals[i],
            });
        }
    }
    for i in 0..n {
        let load = local_load(decision, arrivals, topology, i);
        let limit = guard * topology.mecs[i].service_rate;
        if !(load <= limit && load < topology.mecs[i].service_rate) {
            out.push(Violation {
                constraint: ConstraintId::MecStability,
                entity: Server::Mec(i),
                margin: load - limit,
            });
        }
    }
    for i in 0..n {
        for k in 0..topology.fogs_per_mec {
            let lambda = fog_load(decision, arrivals, topology, i, k);
            let capacity = topology.fog(i, k).service_rate;
            let limit = guard * capacity;
            if !(lambda <= limit && lambda < capacity) {
                out.push(Violation {
                    constraint: ConstraintId::FogStability,
                    entity: Server::Fog { mec: i, fog: k },
                    margin: lambda - limit,
                });
            }
        }
    }
    out
}
