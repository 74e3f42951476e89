//! Built-in systems with their reference data.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{momentum_name, parse_expr, parse_system, Expr, SystemSpec};
use crate::presym::ExprGraph;
use crate::Error;

#[derive(Debug, Error)]
pub enum PresetError {
    #[error("unknown preset '{0}' (known: {known})", known = IDS.join(", "))]
    Unknown(String),
    #[error("preset '{id}' has malformed reference data: {msg}")]
    Facts { id: String, msg: String },
}

pub const IDS: [&str; 7] = ["tq_pendulum", "so3_rigid_body", "capri_kobayashi", "martinet", "plate_ball", "skinner_rusk_demo", "lie_algebra_affine"];

fn sources(id: &str) -> Option<(&'static str, &'static str)> {
    macro_rules! embed {
        ($name:literal) => {
            (include_str!(concat!("data/", $name, ".amech")), include_str!(concat!("data/", $name, ".json")))
        };
    }
    Some(match id {
        "tq_pendulum" => embed!("tq_pendulum"),
        "so3_rigid_body" => embed!("so3_rigid_body"),
        "capri_kobayashi" => embed!("capri_kobayashi"),
        "martinet" => embed!("martinet"),
        "plate_ball" => embed!("plate_ball"),
        "skinner_rusk_demo" => embed!("skinner_rusk_demo"),
        "lie_algebra_affine" => embed!("lie_algebra_affine"),
        _ => return None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PendulumKind {
    Martinet,
    PlateBall,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimDefaults {
    pub t1: f64,
    pub dt: f64,
}

impl Default for SimDefaults {
    fn default() -> Self {
        SimDefaults { t1: 10.0, dt: 1e-3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFacts {
    pub fixed: BTreeMap<String, String>,
    pub free: Vec<String>,
    pub h: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SideFacts {
    pub final_level: usize,
    pub rank: usize,
    pub zero_set: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintFacts {
    pub lagrangian: SideFacts,
    pub hamiltonian: SideFacts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SodeFacts {
    pub xi_x: BTreeMap<String, String>,
    pub xi_v: BTreeMap<String, String>,
    pub conserved: String,
}

/// Reference data shipped with a preset. Expressions are stored as text
/// and use the preset's coordinate, velocity, momentum and parameter names.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Facts {
    pub regular: bool,
    #[serde(default)]
    pub domain: BTreeMap<String, [f64; 2]>,
    #[serde(default)]
    pub init: BTreeMap<String, f64>,
    #[serde(default)]
    pub simulate: SimDefaults,
    #[serde(default)]
    pub monitors: Vec<String>,
    #[serde(default)]
    pub pendulum: Option<PendulumKind>,
    #[serde(default)]
    pub pendulum_params: BTreeMap<String, f64>,
    #[serde(default)]
    pub casimir: Option<String>,
    #[serde(default)]
    pub cost: Option<String>,
    #[serde(default)]
    pub hamiltonian_graph: Option<GraphFacts>,
    #[serde(default)]
    pub constraints: Option<ConstraintFacts>,
    #[serde(default)]
    pub sode: Option<SodeFacts>,
    #[serde(default)]
    pub h_w1: Option<String>,
    #[serde(default)]
    pub dependent_momenta: BTreeMap<String, String>,
    #[serde(default)]
    pub rhs: BTreeMap<String, String>,
    #[serde(default)]
    pub bracket_table: Vec<(String, String, String)>,
}

#[derive(Clone, Debug)]
pub struct Preset {
    pub id: &'static str,
    pub dsl: &'static str,
    pub facts: Facts,
    pub spec: SystemSpec,
}

pub fn load(id: &str) -> Result<Preset, Error> {
    let (dsl, json) = sources(id).ok_or_else(|| PresetError::Unknown(id.to_string()))?;
    let id = IDS.iter().copied().find(|k| *k == id).expect("listed id");
    let facts: Facts = serde_json::from_str(json).map_err(|e| PresetError::Facts { id: id.into(), msg: e.to_string() })?;
    let spec = parse_system(dsl)?;
    Ok(Preset { id, dsl, facts, spec })
}

pub fn all() -> Vec<Preset> {
    IDS.iter().map(|id| load(id).expect("built-in presets load")).collect()
}

impl Preset {
    /// Sampling interval for a named variable; `[-1, 1]` unless listed.
    pub fn domain(&self, name: &str) -> (f64, f64) {
        self.facts.domain.get(name).map_or((-1.0, 1.0), |[a, b]| (*a, *b))
    }

    /// A uniform random point of the domain box for the given names.
    pub fn sample<R: Rng>(&self, names: &[String], rng: &mut R) -> Vec<f64> {
        names
            .iter()
            .map(|n| {
                let (a, b) = self.domain(n);
                rng.gen_range(a..=b)
            })
            .collect()
    }

    /// Parses a reference expression.
    pub fn expr(&self, src: &str) -> Result<Expr, Error> {
        Ok(parse_expr(src)?)
    }

    /// The Hamiltonian-side submanifold and Hamiltonian, if provided.
    pub fn hamiltonian_graph(&self) -> Result<Option<(ExprGraph, Vec<String>)>, Error> {
        let Some(g) = &self.facts.hamiltonian_graph else {
            return Ok(None);
        };
        let momenta = self.spec.momenta();
        let index = |name: &str| -> Result<usize, Error> {
            momenta.iter().position(|p| p == name).ok_or_else(|| PresetError::Facts { id: self.id.into(), msg: format!("unknown momentum '{name}'") }.into())
        };
        let free = g.free.iter().map(|n| index(n)).collect::<Result<Vec<_>, _>>()?;
        let mut fixed = BTreeMap::new();
        for (name, src) in &g.fixed {
            fixed.insert(index(name)?, parse_expr(src)?);
        }
        let h = parse_expr(&g.h)?;
        let graph = ExprGraph::new(self.spec.n(), &self.spec.base, free, &momenta, &fixed, &h, &self.spec.params)?;
        let mut labels = self.spec.base.clone();
        labels.extend(g.free.iter().cloned());
        Ok(Some((graph, labels)))
    }
}

/// Names of the vakonomic state `(x, y^a, p_α)`.
pub fn vakonomic_labels(spec: &SystemSpec) -> Vec<String> {
    let n = spec.n();
    let constrained = spec.vakonomic.as_ref().map(|v| v.constrained.clone()).unwrap_or_default();
    let mut labels = spec.base.clone();
    labels.extend((0..n).filter(|a| !constrained.contains(a)).map(|a| spec.fiber[a].clone()));
    labels.extend(constrained.iter().map(|a| momentum_name(&spec.fiber[*a])));
    labels
}
