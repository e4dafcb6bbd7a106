//! Experiment specification files.
//!
//! A spec file holds an `[experiment]` table plus any simulator sections
//! (`[topology]`, `[traffic]`, ...). Simulator sections are layered over the
//! chosen preset, so a spec only needs to list what it changes.

use std::path::{Path, PathBuf};

use mecvf::agents::AgentKind;
use mecvf::config::SimConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    SigmaSweep,
    Convergence,
    TrafficSweep,
    VehicleSweep,
    SingleTrain,
    Evaluate,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::SigmaSweep => "sigma_sweep",
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::TrafficSweep => "traffic_sweep",
            ExperimentKind::VehicleSweep => "vehicle_sweep",
            ExperimentKind::SingleTrain => "single_train",
            ExperimentKind::Evaluate => "evaluate",
        }
    }

    /// Header of the x column in this kind's CSV schema.
    pub fn x_label(self) -> &'static str {
        match self {
            ExperimentKind::SigmaSweep => "sigma",
            ExperimentKind::Convergence | ExperimentKind::SingleTrain => "episode",
            ExperimentKind::TrafficSweep | ExperimentKind::Evaluate => "traffic_mpps",
            ExperimentKind::VehicleSweep => "vehicles",
        }
    }

    pub fn is_sweep(self) -> bool {
        matches!(
            self,
            ExperimentKind::SigmaSweep | ExperimentKind::TrafficSweep | ExperimentKind::VehicleSweep | ExperimentKind::Evaluate
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Dtd3,
    Td3,
    Ddpg,
    Sa,
    Pso,
    Uniform,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Dtd3,
        Algorithm::Td3,
        Algorithm::Ddpg,
        Algorithm::Sa,
        Algorithm::Pso,
        Algorithm::Uniform,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Dtd3 => "dtd3",
            Algorithm::Td3 => "td3",
            Algorithm::Ddpg => "ddpg",
            Algorithm::Sa => "sa",
            Algorithm::Pso => "pso",
            Algorithm::Uniform => "uniform",
        }
    }

    pub fn agent_kind(self) -> Option<AgentKind> {
        match self {
            Algorithm::Dtd3 => Some(AgentKind::Dtd3),
            Algorithm::Td3 => Some(AgentKind::Td3),
            Algorithm::Ddpg => Some(AgentKind::Ddpg),
            Algorithm::Sa | Algorithm::Pso | Algorithm::Uniform => None,
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown algorithm `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Four MECs with five fogs each.
    Standard,
    /// Two MECs with two fogs each.
    Desk,
}

impl Preset {
    pub fn config(self) -> SimConfig {
        match self {
            Preset::Standard => SimConfig::default(),
            Preset::Desk => SimConfig::desk(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub id: String,
    pub kind: ExperimentKind,
    pub preset: Preset,
    pub algorithms: Vec<Algorithm>,
    /// Training episodes per DRL replica.
    pub drl_episodes: usize,
    /// Cost evaluations per SA / PSO run.
    pub search_evaluations: usize,
    /// Replica seeds; each seed also fixes the replica's topology.
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub sigma_grid: Vec<f64>,
    pub traffic_grid_mpps: Vec<f64>,
    pub vehicle_grid: Vec<u32>,
    /// Snapshots per grid point and seed in sweeps and evaluations.
    pub eval_episodes: usize,
    /// Retrain DRL agents at every traffic / vehicle grid point instead of
    /// evaluating one policy across the grid.
    pub retrain_per_point: bool,
    /// SA / PSO rows are written every `trace_stride` evaluations.
    pub trace_stride: usize,
    /// Checkpoint evaluated by `evaluate` experiments.
    pub checkpoint: Option<PathBuf>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            id: "experiment".into(),
            kind: ExperimentKind::Convergence,
            preset: Preset::Standard,
            algorithms: Algorithm::ALL.to_vec(),
            drl_episodes: 10_000,
            search_evaluations: 100_000,
            seeds: (0..10).collect(),
            output_dir: PathBuf::from("results"),
            sigma_grid: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            traffic_grid_mpps: vec![10.0, 20.0, 30.0, 40.0, 60.0, 80.0],
            vehicle_grid: vec![5, 10, 15, 20, 25],
            eval_episodes: 10,
            retrain_per_point: false,
            trace_stride: 100,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub experiment: ExperimentSection,
    pub sim: SimConfig,
}

fn invalid(field: &'static str, reason: impl Into<String>) -> HarnessError {
    HarnessError::InvalidSpec {
        field,
        reason: reason.into(),
    }
}

/// Recursively overlays `top` onto `base`.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

impl ExperimentSpec {
    pub fn new(experiment: ExperimentSection) -> Self {
        let sim = experiment.preset.config();
        Self { experiment, sim }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| HarnessError::Parse(e.to_string()))?;
        let experiment: ExperimentSection = match table.remove("experiment") {
            Some(value) => value.try_into().map_err(|e: toml::de::Error| HarnessError::Parse(e.to_string()))?,
            None => ExperimentSection::default(),
        };
        let mut base = toml::Table::try_from(experiment.preset.config()).expect("config serializes to a table");
        merge(&mut base, table);
        let sim: SimConfig = base.try_into().map_err(|e: toml::de::Error| HarnessError::Parse(e.to_string()))?;
        let spec = Self { experiment, sim };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Full resolved spec; parsing it back yields an equal spec.
    pub fn to_toml_string(&self) -> String {
        let mut table = toml::Table::try_from(&self.sim).expect("config serializes to a table");
        table.insert(
            "experiment".into(),
            toml::Value::try_from(&self.experiment).expect("experiment serializes"),
        );
        toml::to_string(&table).expect("table serializes")
    }

    /// SHA-256 of the resolved spec, hex encoded.
    pub fn config_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml_string().as_bytes()))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let e = &self.experiment;
        self.sim.validate()?;
        if e.id.is_empty() || !e.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(invalid("id", "use letters, digits, '-' or '_'"));
        }
        if e.seeds.is_empty() {
            return Err(invalid("seeds", "need at least one seed"));
        }
        if e.algorithms.is_empty() {
            return Err(invalid("algorithms", "need at least one algorithm"));
        }
        let uses_drl = e.algorithms.iter().any(|a| a.agent_kind().is_some());
        let uses_search = e.algorithms.iter().any(|a| matches!(a, Algorithm::Sa | Algorithm::Pso));
        if uses_drl && e.drl_episodes == 0 && e.kind != ExperimentKind::Evaluate {
            return Err(invalid("drl_episodes", "must be positive"));
        }
        if uses_search && e.search_evaluations == 0 {
            return Err(invalid("search_evaluations", "must be positive"));
        }
        if e.eval_episodes == 0 {
            return Err(invalid("eval_episodes", "must be positive"));
        }
        if e.trace_stride == 0 {
            return Err(invalid("trace_stride", "must be positive"));
        }
        match e.kind {
            ExperimentKind::SigmaSweep => {
                if e.sigma_grid.is_empty() || e.sigma_grid.iter().any(|s| !(0.0..=1.0).contains(s)) {
                    return Err(invalid("sigma_grid", "need values in [0, 1]"));
                }
            }
            ExperimentKind::TrafficSweep | ExperimentKind::Evaluate => {
                if e.traffic_grid_mpps.is_empty() || e.traffic_grid_mpps.iter().any(|r| !(*r > 0.0)) {
                    return Err(invalid("traffic_grid_mpps", "need positive rates"));
                }
            }
            ExperimentKind::VehicleSweep => {
                if e.vehicle_grid.is_empty() || e.vehicle_grid.contains(&0) {
                    return Err(invalid("vehicle_grid", "need positive vehicle counts"));
                }
            }
            ExperimentKind::SingleTrain => {
                if !uses_drl || e.algorithms.iter().any(|a| a.agent_kind().is_none()) {
                    return Err(invalid("algorithms", "single_train takes DRL algorithms only"));
                }
            }
            ExperimentKind::Convergence => {}
        }
        if e.kind == ExperimentKind::Evaluate && e.checkpoint.is_none() {
            return Err(invalid("checkpoint", "evaluate needs a checkpoint path"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_is_overlaid() {
        let spec = ExperimentSpec::from_toml_str(
            "[experiment]\nid = \"x\"\npreset = \"desk\"\nseeds = [1]\n[cost]\nsigma = 0.25\n",
        )
        .unwrap();
        assert_eq!(spec.sim.topology.n_mecs, 2);
        assert_eq!(spec.sim.topology.b_min, 50);
        assert_eq!(spec.sim.cost.sigma, 0.25);
        assert_eq!(spec.sim.cost.stability_guard, 0.999);
    }

    #[test]
    fn resolved_spec_round_trips() {
        let spec = ExperimentSpec::from_toml_str("[experiment]\nkind = \"sigma_sweep\"\n[topology]\nn_mecs = 3\n").unwrap();
        let again = ExperimentSpec::from_toml_str(&spec.to_toml_string()).unwrap();
        assert_eq!(again, spec);
        assert_eq!(again.config_hash(), spec.config_hash());
        assert_eq!(spec.config_hash().len(), 64);
    }

    #[test]
    fn invalid_fields_are_named() {
        let err = ExperimentSpec::from_toml_str("[experiment]\nseeds = []\n").unwrap_err();
        assert!(matches!(err, HarnessError::InvalidSpec { field: "seeds", .. }));
        let err = ExperimentSpec::from_toml_str("[experiment]\nkind = \"sigma_sweep\"\nsigma_grid = [1.5]\n").unwrap_err();
        assert!(matches!(err, HarnessError::InvalidSpec { field: "sigma_grid", .. }));
        assert!(matches!(
            ExperimentSpec::from_toml_str("[experiment]\nbogus = 1\n"),
            Err(HarnessError::Parse(_))
        ));
        assert!(matches!(
            ExperimentSpec::from_toml_str("[experiment]\nkind = \"evaluate\"\n"),
            Err(HarnessError::InvalidSpec { field: "checkpoint", .. })
        ));
    }

    #[test]
    fn algorithm_names_parse() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert!("ppo".parse::<Algorithm>().is_err());
    }
}
