use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::AgentParams;
use crate::error::{usage, Error, Result};
use crate::momdp::{make_random_tabular_momdp, Environment, TabularEnv, TabularMomdp, TrafficConfig, TrafficQueueEnv};
use crate::reduction::{Ablation, AeParams, IpcaParams, NpcaParams, OursParams, ReducerKind, ReducerParams};

/// Which environment to train on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EnvConfig {
    Traffic(TrafficConfig),
    Tabular(TabularConfig),
}

/// Tabular instance description. `instance = "three_point_front"` is the
/// two-objective bandit with a known three-point front; `"random"` draws a
/// MOMDP from `instance_seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TabularConfig {
    pub instance: String,
    pub instance_seed: u64,
    pub states: usize,
    pub actions: usize,
    pub objectives: usize,
    pub gamma: f64,
    pub horizon: usize,
}

impl Default for TabularConfig {
    fn default() -> Self {
        Self {
            instance: "three_point_front".into(),
            instance_seed: 0,
            states: 3,
            actions: 2,
            objectives: 3,
            gamma: 0.9,
            horizon: 100,
        }
    }
}

impl TabularConfig {
    pub fn momdp(&self) -> Result<TabularMomdp> {
        match self.instance.as_str() {
            "three_point_front" => TabularMomdp::three_point_front(self.gamma),
            "random" => make_random_tabular_momdp(self.instance_seed, self.states, self.actions, self.objectives, self.gamma),
            other => Err(Error::Config(format!("unknown tabular instance `{other}`"))),
        }
    }
}

impl EnvConfig {
    pub fn build(&self, seed: u64) -> Result<Box<dyn Environment>> {
        Ok(match self {
            Self::Traffic(c) => Box::new(TrafficQueueEnv::new(c.clone(), seed)?),
            Self::Tabular(c) => Box::new(TabularEnv::new(c.momdp()?, c.horizon, seed)),
        })
    }

    /// Whether repeated evaluation rollouts can differ.
    pub fn is_stochastic(&self) -> Result<bool> {
        Ok(match self {
            Self::Traffic(_) => true,
            Self::Tabular(c) => {
                let m = c.momdp()?;
                let det = |row: &[f64]| row.iter().filter(|&&p| p > 0.0).count() == 1;
                !(det(m.initial())
                    && (0..m.num_states()).all(|s| (0..m.num_actions()).all(|a| det(m.transition(s, a)))))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReducerSection {
    pub kind: ReducerKind,
    /// Reduced dimension; defaults to the objective count for `none`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    /// Comma-separated ablation flags for `ours`, e.g. `"+bias,-dropout"`.
    #[serde(default = "no_ablation")]
    pub ablation: String,
    #[serde(default)]
    pub ours: OursParams,
    #[serde(default)]
    pub ipca: IpcaParams,
    #[serde(default)]
    pub npca: NpcaParams,
    #[serde(default)]
    pub ae: AeParams,
}

impl ReducerSection {
    /// Defaults for every reducer, with the given kind and dimension.
    pub fn new(kind: ReducerKind, m: Option<usize>) -> Self {
        let p = ReducerParams::default();
        Self { kind, m, ablation: no_ablation(), ours: p.ours, ipca: p.ipca, npca: p.npca, ae: p.ae }
    }

    pub fn params(&self) -> ReducerParams {
        ReducerParams { ours: self.ours.clone(), ipca: self.ipca.clone(), npca: self.npca.clone(), ae: self.ae.clone() }
    }
}

fn no_ablation() -> String {
    "none".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub total_steps: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { total_steps: 52_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Lattice divisions of the reduced preference simplex.
    pub divisions: usize,
    /// Rollouts per preference; deterministic environments always use one.
    pub n_eval: usize,
    /// Lattice divisions of the K-dimensional preference set used by EUM.
    pub eum_divisions: usize,
    /// Hypervolume reference point; a single value is broadcast to K entries.
    pub reference_point: Vec<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { divisions: 4, n_eval: 3, eum_divisions: 5, reference_point: vec![-1e4] }
    }
}

/// Everything needed to reproduce a run, loaded from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub env: EnvConfig,
    pub reducer: ReducerSection,
    pub agent: AgentParams,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// Built-in starting points:
    /// - `traffic`: the full hyperparameters on the synthetic intersection;
    /// - `traffic-desk`: the same with a smaller Q-network and sparser
    ///   gradient updates so a 50k-step run fits a single CPU core;
    /// - `tabular`: the three-point-front bandit with reducer `none`.
    pub fn profile(name: &str) -> Result<Self> {
        let traffic = Self {
            name: "traffic".into(),
            env: EnvConfig::Traffic(TrafficConfig::default()),
            reducer: ReducerSection::new(ReducerKind::Ours, Some(4)),
            agent: AgentParams { reward_scale: 0.1, ..AgentParams::default() },
            train: TrainSection::default(),
            eval: EvalSection::default(),
            seeds: (0..8).collect(),
            output_dir: PathBuf::from("runs"),
        };
        match name {
            "traffic" => Ok(traffic),
            "traffic-desk" => Ok(Self {
                name: "traffic-desk".into(),
                agent: AgentParams { hidden: vec![64, 64], train_freq: 4, ..traffic.agent.clone() },
                train: TrainSection { total_steps: 50_000 },
                ..traffic
            }),
            "tabular" => Ok(Self {
                name: "tabular".into(),
                env: EnvConfig::Tabular(TabularConfig::default()),
                reducer: ReducerSection::new(ReducerKind::None, None),
                agent: AgentParams {
                    hidden: vec![32, 32],
                    buffer_size: 50_000,
                    gamma: 0.9,
                    ..AgentParams::default()
                },
                train: TrainSection { total_steps: 50_000 },
                eval: EvalSection { reference_point: vec![0.0], ..EvalSection::default() },
                seeds: (0..5).collect(),
                ..traffic
            }),
            other => Err(Error::Config(format!("unknown profile `{other}` (expected traffic, traffic-desk or tabular)"))),
        }
    }

    /// Parses TOML. An optional top-level `profile = "..."` selects the
    /// built-in base whose values the file then overrides key by key; unknown
    /// keys anywhere are errors.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut overrides: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let config = match overrides.remove("profile") {
            Some(toml::Value::String(name)) => {
                let base = toml::Table::try_from(Self::profile(&name)?).map_err(|e| Error::Config(e.to_string()))?;
                let mut merged = toml::Value::Table(base);
                merge(&mut merged, toml::Value::Table(overrides));
                merged.try_into::<Self>()
            }
            Some(_) => return Err(Error::Config("`profile` must be a string".into())),
            None => toml::Value::Table(overrides).try_into::<Self>(),
        }
        .map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn num_objectives(&self) -> Result<usize> {
        Ok(match &self.env {
            EnvConfig::Traffic(_) => crate::momdp::NUM_LANES,
            EnvConfig::Tabular(c) => c.momdp()?.num_objectives(),
        })
    }

    pub fn reduced_dim(&self) -> Result<usize> {
        let k = self.num_objectives()?;
        Ok(match self.reducer.kind {
            ReducerKind::None => self.reducer.m.unwrap_or(k),
            _ => self.reducer.m.ok_or_else(|| Error::Config("reducer.m is required unless reducer.kind = \"none\"".into()))?,
        })
    }

    pub fn ablation(&self) -> Result<Ablation> {
        self.reducer.ablation.parse().map_err(|e: Error| Error::Config(e.to_string()))
    }

    /// Reference point expanded to K entries.
    pub fn reference_point(&self) -> Result<Vec<f64>> {
        let k = self.num_objectives()?;
        match self.eval.reference_point.len() {
            1 => Ok(vec![self.eval.reference_point[0]; k]),
            n if n == k => Ok(self.eval.reference_point.clone()),
            n => Err(Error::Config(format!("reference point has {n} entries, expected 1 or {k}"))),
        }
    }

    /// Rollouts per evaluation preference.
    pub fn rollouts_per_preference(&self) -> Result<usize> {
        Ok(if self.env.is_stochastic()? { self.eval.n_eval } else { 1 })
    }

    pub fn validate(&self) -> Result<()> {
        if let EnvConfig::Traffic(c) = &self.env {
            c.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        let k = self.num_objectives()?;
        let m = self.reduced_dim()?;
        if self.reducer.kind == ReducerKind::None && m != k {
            return Err(Error::Config(format!("reducer `none` requires m = K = {k}, got {m}")));
        }
        if self.reducer.kind != ReducerKind::None && !(2..k).contains(&m) {
            return Err(Error::Config(format!("reduced dimension must satisfy 2 <= m < K = {k}, got {m}")));
        }
        let ablation = self.ablation()?;
        if self.reducer.kind != ReducerKind::Ours && !ablation.is_none() {
            return Err(Error::Config("ablation flags apply only to reducer `ours`".into()));
        }
        self.reference_point()?;
        let a = &self.agent;
        if a.batch_size == 0 || a.train_freq == 0 || a.target_sync == 0 || a.buffer_size == 0 {
            return Err(Error::Config("agent batch_size, train_freq, target_sync and buffer_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&a.gamma) {
            return Err(Error::Config(format!("agent.gamma {} outside [0, 1)", a.gamma)));
        }
        if !(a.reward_scale > 0.0 && a.reward_scale.is_finite()) {
            return Err(Error::Config(format!("agent.reward_scale {} must be positive", a.reward_scale)));
        }
        let p = &self.reducer;
        if [p.ours.update_interval, p.ours.batch_size, p.ipca.refresh_interval, p.npca.update_interval, p.ae.update_interval, p.ae.batch_size]
            .contains(&0)
        {
            return Err(Error::Config("reducer intervals and batch sizes must be positive".into()));
        }
        if self.eval.divisions == 0 || self.eval.n_eval == 0 || self.eval.eum_divisions == 0 {
            return Err(Error::Config("eval divisions, n_eval and eum_divisions must be positive".into()));
        }
        if self.train.total_steps == 0 {
            return Err(Error::Config("train.total_steps must be positive".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_string(self)?;
        Ok(hex::encode(Sha256::digest(json.as_bytes())))
    }

    /// Copy with a different reducer, keeping everything else.
    pub fn with_reducer(&self, kind: ReducerKind, ablation: Ablation) -> Result<Self> {
        let mut out = self.clone();
        out.reducer.kind = kind;
        out.reducer.ablation = ablation.to_string();
        if kind == ReducerKind::None {
            out.reducer.m = None;
        } else if out.reducer.m.is_none() {
            return Err(usage("set reducer.m before switching to a reducing method"));
        }
        out.validate()?;
        Ok(out)
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (key, value) in o {
                match b.get_mut(&key) {
                    // a different env kind replaces the whole section
                    Some(slot) if key != "env" || same_kind(slot, &value) => merge(slot, value),
                    _ => {
                        b.insert(key, value);
                    }
                }
            }
        }
        (slot, value) => *slot = value,
    }
}

fn same_kind(a: &toml::Value, b: &toml::Value) -> bool {
    match b.get("kind") {
        Some(kind) => a.get("kind") == Some(kind),
        None => true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_validate_and_round_trip() {
        for name in ["traffic", "traffic-desk", "tabular"] {
            let c = ExperimentConfig::profile(name).unwrap();
            c.validate().unwrap();
            let text = c.to_toml_string().unwrap();
            assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), c, "{name}");
        }
    }

    #[test]
    fn profile_overrides_use_dotted_keys() {
        let c = ExperimentConfig::from_toml_str(
            "profile = \"traffic-desk\"\nseeds = [3]\nreducer.kind = \"ipca\"\nagent.lr = 1e-3\neval.reference_point = [-5000.0]\n",
        )
        .unwrap();
        assert_eq!(c.reducer.kind, ReducerKind::Ipca);
        assert_eq!(c.agent.lr, 1e-3);
        assert_eq!(c.agent.hidden, vec![64, 64]);
        assert_eq!(c.seeds, vec![3]);
        assert_eq!(c.reference_point().unwrap(), vec![-5000.0; 16]);
    }

    #[test]
    fn unknown_keys_are_errors() {
        for text in [
            "profile = \"traffic\"\nagent.learning_rate = 1e-3\n",
            "profile = \"traffic\"\nreducer.ours.dropuot = 0.5\n",
            "profile = \"traffic\"\nenv.arrival_rate = 1.0\n",
            "profile = \"traffic\"\nbogus = 1\n",
        ] {
            assert!(matches!(ExperimentConfig::from_toml_str(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn env_kind_switch_replaces_section() {
        let c = ExperimentConfig::from_toml_str("profile = \"traffic\"\nreducer.kind = \"none\"\nreducer.m = 2\n[env]\nkind = \"tabular\"\n")
            .unwrap();
        assert!(matches!(c.env, EnvConfig::Tabular(_)));
        assert_eq!(c.num_objectives().unwrap(), 2);
    }

    #[test]
    fn dimension_rules() {
        let base = ExperimentConfig::profile("traffic").unwrap();
        assert!(base.with_reducer(ReducerKind::None, Ablation::default()).is_ok());
        let mut bad = base.clone();
        bad.reducer.m = Some(16);
        assert!(bad.validate().is_err());
        let mut bad = base.clone();
        bad.eval.reference_point = vec![0.0; 3];
        assert!(bad.validate().is_err());
        let mut bad = base;
        bad.reducer.kind = ReducerKind::Ipca;
        bad.reducer.ablation = "+bias".into();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::profile("traffic").unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.seeds.push(99);
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 64);
    }

    #[test]
    fn tabular_determinism_detection() {
        assert!(!ExperimentConfig::profile("tabular").unwrap().env.is_stochastic().unwrap());
        assert!(ExperimentConfig::profile("traffic").unwrap().env.is_stochastic().unwrap());
    }
}
