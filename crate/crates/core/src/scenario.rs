//! JSON scenario files.
//!
//! ```json
//! {
//!   "plant":   { "preset": "constant_velocity", "T": 0.25 },
//!   "sensors": [ { "type": "position" }, { "type": "velocity", "R": [[5, 0], [0, 5]] } ],
//!   "graph":   { "edges": [[1, 2], [2, 1]] },
//!   "design":  { "policy": "distributed" },
//!   "run":     { "l": 10, "horizon": 200, "trials": 1000, "seed": 7,
//!                "x0": [1, 1, 1, 1], "P0": [[10, 0, 0, 0], ...] }
//! }
//! ```
//!
//! Matrices are row-major nested arrays. Graph edges are `[from, to]` pairs
//! with sensors numbered from 1. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::consensus::{DistributedMu, MuTable};
use crate::graph::DiGraph;
use crate::linalg::{matrix_from_rows, matrix_to_rows};
use crate::model::{PlantModel, Sensor, SensorSuite};
use crate::sim::{InitialDraw, MuPolicy, ScenarioConfig};
use crate::{Error, Result, Vector};

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub plant: PlantSpec,
    pub sensors: Vec<SensorSpec>,
    pub graph: GraphSpec,
    #[serde(default)]
    pub design: DesignSpec,
    pub run: RunSpec,
}

/// Either `preset` + `T`, or explicit `A` and `Q`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<PlantPreset>,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Rows>,
    #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Rows>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantPreset {
    ConstantVelocity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    Position,
    Velocity,
    Custom,
}

/// `position` and `velocity` observe the constant-velocity state and default
/// to `R = I` and `R = 5 I`; `custom` requires both `C` and `R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    #[serde(rename = "type")]
    pub kind: SensorKind,
    #[serde(rename = "C", default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Rows>,
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Rows>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub edges: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    #[default]
    Distributed,
    Unified,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    #[serde(default)]
    pub policy: PolicyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slack: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_table: Option<Rows>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    #[default]
    Shared,
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub l: usize,
    pub horizon: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    pub x0: Vec<f64>,
    #[serde(rename = "P0")]
    pub p0: Rows,
    #[serde(default)]
    pub initial: InitialKind,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub anchor_own: bool,
}

fn default_trials() -> usize {
    crate::sim::DEFAULT_TRIALS
}

fn field<T>(value: Result<T>, path: &str) -> Result<T> {
    value.map_err(|e| match e {
        Error::Dimension(m) => Error::Dimension(format!("{path}: {m}")),
        Error::InvalidModel(m) => Error::InvalidModel(format!("{path}: {m}")),
        Error::NotSquare { rows, cols } => {
            Error::Dimension(format!("{path}: must be square, got {rows}x{cols}"))
        }
        other => other,
    })
}

fn matrix(rows: &Rows, path: &str) -> Result<crate::Matrix> {
    field(matrix_from_rows(rows), path)
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Builds and validates the config. Dimension and value errors name the
    /// offending field.
    pub fn to_config(&self) -> Result<ScenarioConfig> {
        let plant = self.plant.build()?;
        let sensors = self
            .sensors
            .iter()
            .enumerate()
            .map(|(i, s)| s.build(&format!("sensors[{i}]")))
            .collect::<Result<Vec<_>>>()?;
        let suite = field(SensorSuite::new(sensors), "sensors")?;
        let n_sensors = suite.len();

        let mut edges = Vec::with_capacity(self.graph.edges.len());
        for (e, &[from, to]) in self.graph.edges.iter().enumerate() {
            if from == 0 || to == 0 || from > n_sensors || to > n_sensors {
                return Err(Error::InvalidModel(format!(
                    "graph.edges[{e}]: sensors are numbered 1..={n_sensors}, got [{from}, {to}]"
                )));
            }
            edges.push((from - 1, to - 1));
        }
        let graph = field(DiGraph::from_edges(n_sensors, &edges), "graph.edges")?;
        let mu_policy = self.design.build()?;

        let run = &self.run;
        let cfg = ScenarioConfig {
            plant,
            suite,
            graph,
            mu_policy,
            fusion_steps: run.l,
            horizon: run.horizon,
            trials: run.trials,
            seed: run.seed,
            x0: Vector::from_vec(run.x0.clone()),
            p0: matrix(&run.p0, "run.P0")?,
            initial: match run.initial {
                InitialKind::Shared => InitialDraw::Shared,
                InitialKind::Independent => InitialDraw::Independent,
            },
            anchor_own: run.anchor_own,
        };
        field(cfg.validate(), "run")?;
        Ok(cfg)
    }

    /// Fully explicit file for `cfg` (plant as `A`/`Q`, sensors as `custom`).
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        let (policy, slack, shift, mu_table) = match &cfg.mu_policy {
            MuPolicy::Distributed(rule) => (PolicyKind::Distributed, Some(rule.slack), Some(rule.shift), None),
            MuPolicy::Unified => (PolicyKind::Unified, None, None, None),
            MuPolicy::Explicit(t) => (PolicyKind::Explicit, None, None, Some(t.rows().to_vec())),
        };
        Self {
            plant: PlantSpec {
                preset: None,
                dt: None,
                a: Some(matrix_to_rows(cfg.plant.a())),
                q: Some(matrix_to_rows(cfg.plant.q())),
            },
            sensors: cfg
                .suite
                .sensors()
                .iter()
                .map(|s| SensorSpec {
                    kind: SensorKind::Custom,
                    c: Some(matrix_to_rows(s.c())),
                    r: Some(matrix_to_rows(s.r())),
                })
                .collect(),
            graph: GraphSpec {
                edges: cfg.graph.edges().iter().map(|&(f, t)| [f + 1, t + 1]).collect(),
            },
            design: DesignSpec {
                policy,
                slack,
                shift,
                mu_table,
            },
            run: RunSpec {
                l: cfg.fusion_steps,
                horizon: cfg.horizon,
                trials: cfg.trials,
                seed: cfg.seed,
                x0: cfg.x0.iter().copied().collect(),
                p0: matrix_to_rows(&cfg.p0),
                initial: match cfg.initial {
                    InitialDraw::Shared => InitialKind::Shared,
                    InitialDraw::Independent => InitialKind::Independent,
                },
                anchor_own: cfg.anchor_own,
            },
        }
    }
}

impl PlantSpec {
    fn build(&self) -> Result<PlantModel> {
        match (&self.preset, &self.a, &self.q) {
            (Some(PlantPreset::ConstantVelocity), None, None) => {
                let dt = self
                    .dt
                    .ok_or_else(|| Error::InvalidModel("plant.T is required by the constant_velocity preset".into()))?;
                field(PlantModel::constant_velocity(dt), "plant.T")
            }
            (None, Some(a), Some(q)) if self.dt.is_none() => {
                let a = matrix(a, "plant.A")?;
                let q = matrix(q, "plant.Q")?;
                field(PlantModel::new(a, q), "plant")
            }
            _ => Err(Error::InvalidModel(
                "plant: give either {preset, T} or {A, Q}".into(),
            )),
        }
    }
}

impl SensorSpec {
    fn build(&self, path: &str) -> Result<Sensor> {
        let preset = match self.kind {
            SensorKind::Position => Some(Sensor::position()),
            SensorKind::Velocity => Some(Sensor::velocity()),
            SensorKind::Custom => None,
        };
        let c = match (&self.c, &preset) {
            (Some(_), Some(_)) => {
                return Err(Error::InvalidModel(format!(
                    "{path}.C: only custom sensors take an observation matrix"
                )))
            }
            (Some(rows), None) => matrix(rows, &format!("{path}.C"))?,
            (None, Some(p)) => p.c().clone(),
            (None, None) => return Err(Error::InvalidModel(format!("{path}.C is required for custom sensors"))),
        };
        let r = match (&self.r, &preset) {
            (Some(rows), _) => matrix(rows, &format!("{path}.R"))?,
            (None, Some(p)) => p.r().clone(),
            (None, None) => return Err(Error::InvalidModel(format!("{path}.R is required for custom sensors"))),
        };
        field(Sensor::new(c, r), path)
    }
}

impl DesignSpec {
    fn build(&self) -> Result<MuPolicy> {
        let has_rule = self.slack.is_some() || self.shift.is_some();
        match self.policy {
            PolicyKind::Distributed if self.mu_table.is_none() => {
                let d = DistributedMu::default();
                Ok(MuPolicy::Distributed(DistributedMu {
                    slack: self.slack.unwrap_or(d.slack),
                    shift: self.shift.unwrap_or(d.shift),
                }))
            }
            PolicyKind::Unified if !has_rule && self.mu_table.is_none() => Ok(MuPolicy::Unified),
            PolicyKind::Explicit if !has_rule => {
                let rows = self
                    .mu_table
                    .as_ref()
                    .ok_or_else(|| Error::InvalidModel("design.mu_table is required by the explicit policy".into()))?;
                Ok(MuPolicy::Explicit(field(MuTable::new(rows.clone()), "design.mu_table")?))
            }
            _ => Err(Error::InvalidModel(
                "design: slack/shift belong to the distributed policy, mu_table to the explicit policy".into(),
            )),
        }
    }
}
