//! TOML configuration. Every field defaults to the standard scenario
//! (4 MECs, 5 fogs each, hotspot traffic).
//!
//! Rates are written in MPPS and powers in dBm; conversion to packets/s and
//! watts happens when the topology is built.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{ModelError, TrafficKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    pub n_mecs: usize,
    pub fogs_per_mec: usize,
    pub b_min: u32,
    pub b_max: u32,
    pub per_vehicle_rate_mpps: f64,
    pub mec_rate_mpps: f64,
    pub distance_km_min: f64,
    pub distance_km_max: f64,
    pub bandwidth_mhz: f64,
    pub noise_dbm_per_hz: f64,
    pub mec_tx_power_dbm: f64,
    pub vf_tx_power_dbm: f64,
    pub cpu_cycles_per_bit: f64,
    pub energy_per_cycle: f64,
    pub packet_size_bits: f64,
    pub return_ratio: f64,
    pub channel_gain: f64,
    /// Peers each MEC may offload to; `None` means all `n_mecs - 1`.
    pub h_neighbors: Option<usize>,
    /// Fogs each MEC may offload to; `None` means all `fogs_per_mec`.
    pub q_fogs: Option<usize>,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            n_mecs: 4,
            fogs_per_mec: 5,
            b_min: 5,
            b_max: 25,
            per_vehicle_rate_mpps: 0.6,
            mec_rate_mpps: 30.0,
            distance_km_min: 1.0,
            distance_km_max: 10.0,
            bandwidth_mhz: 50.0,
            noise_dbm_per_hz: -110.0,
            mec_tx_power_dbm: 24.0,
            vf_tx_power_dbm: 24.0,
            cpu_cycles_per_bit: 1900.0,
            energy_per_cycle: 0.1,
            packet_size_bits: 1000.0,
            return_ratio: 0.2,
            channel_gain: 1.0,
            h_neighbors: None,
            q_fogs: None,
        }
    }
}

fn positive(field: &'static str, value: f64) -> Result<(), ModelError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(ModelError::InvalidConfig {
            field,
            reason: format!("must be positive, got {value}"),
        })
    }
}

impl TopologyConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |field, reason: String| Err(ModelError::InvalidConfig { field, reason });
        if self.n_mecs == 0 {
            return bad("n_mecs", "need at least one MEC".into());
        }
        if self.fogs_per_mec == 0 {
            return bad("fogs_per_mec", "need at least one fog per MEC".into());
        }
        if self.b_min == 0 || self.b_min > self.b_max {
            return bad("b_min", format!("need 1 <= b_min <= b_max, got {}..{}", self.b_min, self.b_max));
        }
        positive("per_vehicle_rate_mpps", self.per_vehicle_rate_mpps)?;
        positive("mec_rate_mpps", self.mec_rate_mpps)?;
        positive("distance_km_min", self.distance_km_min)?;
        positive("distance_km_max", self.distance_km_max)?;
        if self.distance_km_min > self.distance_km_max {
            return bad("distance_km_min", "exceeds distance_km_max".into());
        }
        positive("bandwidth_mhz", self.bandwidth_mhz)?;
        positive("packet_size_bits", self.packet_size_bits)?;
        positive("cpu_cycles_per_bit", self.cpu_cycles_per_bit)?;
        positive("energy_per_cycle", self.energy_per_cycle)?;
        if !(0.0..=1.0).contains(&self.return_ratio) {
            return bad("return_ratio", format!("must lie in [0, 1], got {}", self.return_ratio));
        }
        if !(self.channel_gain.is_finite() && self.channel_gain >= 0.0) {
            return bad("channel_gain", "must be non-negative".into());
        }
        if let Some(h) = self.h_neighbors {
            if h >= self.n_mecs {
                return bad("h_neighbors", format!("{h} must be below n_mecs {}", self.n_mecs));
            }
        }
        if let Some(q) = self.q_fogs {
            if q == 0 || q > self.fogs_per_mec {
                return bad("q_fogs", format!("{q} must lie in 1..={}", self.fogs_per_mec));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficConfig {
    pub kind: TrafficKind,
    pub normal_rates_mpps: Vec<f64>,
    pub hotspot_rates_mpps: Vec<f64>,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            kind: TrafficKind::Hotspot,
            normal_rates_mpps: vec![10.0, 20.0, 30.0],
            hotspot_rates_mpps: vec![40.0, 60.0, 80.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConfig {
    pub sigma: f64,
    /// Largest admissible utilization of any server.
    pub stability_guard: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            sigma: 0.65,
            stability_guard: 0.999,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// `+C/Ω` when cost did not increase, `-C/Ω` otherwise.
    Verbatim,
    /// Always `-C/Ω`.
    NegativeCost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Reward divisor Ω.
    pub reward_scale: f64,
    pub overload_penalty: f64,
    pub max_steps: usize,
    pub reward_mode: RewardMode,
    /// Softmax temperature applied to clipped raw actions.
    pub action_temperature: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            reward_scale: 1e13,
            overload_penalty: -1.0,
            max_steps: 10,
            reward_mode: RewardMode::Verbatim,
            action_temperature: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub tau: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub exploration_noise: f64,
    pub target_noise: f64,
    pub noise_clip: f64,
    pub policy_delay: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            learning_rate: 3e-4,
            tau: 0.005,
            gamma: 0.99,
            batch_size: 100,
            buffer_capacity: 100_000,
            exploration_noise: 0.1,
            target_noise: 0.2,
            noise_clip: 0.5,
            policy_delay: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaheuristicConfig {
    pub sa_cooling: f64,
    pub sa_step: f64,
    pub pso_particles: usize,
    pub pso_inertia: f64,
    pub pso_cognitive: f64,
    pub pso_social: f64,
    /// Overload cost as a multiple of the uniform-decision cost.
    pub penalty_factor: f64,
}

impl Default for MetaheuristicConfig {
    fn default() -> Self {
        Self {
            sa_cooling: 0.995,
            sa_step: 0.3,
            pso_particles: 30,
            pso_inertia: 0.72,
            pso_cognitive: 1.49,
            pso_social: 1.49,
            penalty_factor: 10.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub topology: TopologyConfig,
    pub traffic: TrafficConfig,
    pub cost: CostConfig,
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub metaheuristic: MetaheuristicConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Invalid(#[from] ModelError),
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: SimConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.topology.validate()?;
        let bad = |field, reason: &str| {
            Err(ModelError::InvalidConfig {
                field,
                reason: reason.to_string(),
            })
        };
        if !(0.0..=1.0).contains(&self.cost.sigma) {
            return bad("sigma", "must lie in [0, 1]");
        }
        if !(self.cost.stability_guard > 0.0 && self.cost.stability_guard < 1.0) {
            return bad("stability_guard", "must lie in (0, 1)");
        }
        if !(self.env.reward_scale > 0.0) {
            return bad("reward_scale", "must be positive");
        }
        if !(self.env.action_temperature > 0.0) {
            return bad("action_temperature", "must be positive");
        }
        if self.env.max_steps == 0 {
            return bad("max_steps", "must be positive");
        }
        let a = &self.agent;
        if a.batch_size == 0 || a.buffer_capacity < a.batch_size {
            return bad("batch_size", "need 0 < batch_size <= buffer_capacity");
        }
        if a.policy_delay == 0 {
            return bad("policy_delay", "must be positive");
        }
        if a.hidden.is_empty() || a.hidden.contains(&0) {
            return bad("hidden", "need at least one non-empty hidden layer");
        }
        let rates = match self.traffic.kind {
            TrafficKind::Normal => &self.traffic.normal_rates_mpps,
            TrafficKind::Hotspot => &self.traffic.hotspot_rates_mpps,
        };
        if rates.is_empty() || rates.iter().any(|r| !(*r > 0.0)) {
            return bad("traffic", "selected rate set must be non-empty and positive");
        }
        Ok(())
    }

    /// Small two-MEC scenario for quick experiments. Fogs hold 50-70
    /// vehicles so that hotspot traffic admits stable decisions, and the
    /// networks are narrower to keep single-core training short.
    pub fn desk() -> Self {
        let mut cfg = SimConfig::default();
        cfg.topology.n_mecs = 2;
        cfg.topology.fogs_per_mec = 2;
        cfg.topology.b_min = 50;
        cfg.topology.b_max = 70;
        cfg.agent.hidden = vec![64, 64];
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = SimConfig::default();
        let text = cfg.to_toml_string();
        assert_eq!(SimConfig::from_toml_str(&text).unwrap(), cfg);
        assert_eq!(SimConfig::from_toml_str("").unwrap(), cfg);
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let cfg = SimConfig::from_toml_str("[topology]\nn_mecs = 2\n[cost]\nsigma = 0.5\n").unwrap();
        assert_eq!(cfg.topology.n_mecs, 2);
        assert_eq!(cfg.topology.fogs_per_mec, 5);
        assert_eq!(cfg.cost.sigma, 0.5);
        assert_eq!(cfg.agent.hidden, vec![256, 256]);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(SimConfig::from_toml_str("[cost]\nsigma = 1.5\n").is_err());
        assert!(SimConfig::from_toml_str("[topology]\nmec_rate_mpps = -1.0\n").is_err());
        assert!(SimConfig::from_toml_str("[topology]\nbogus = 1\n").is_err());
    }
}
