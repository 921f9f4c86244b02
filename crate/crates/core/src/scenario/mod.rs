//! JSON scenario files: parsing with path-qualified errors, and assembly
//! into an [`OperatorSystem`] with named payoffs.

mod run;

pub use run::{run, Command, RunOptions, RunOutput, Suite};

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamic::OperatorSystem;
use crate::error::{Error, Result};
use crate::operator::{BoundPair, DensityPolytope, PolyhedralOperator};
use crate::prob::{FilteredSpace, RandomVariable};
use crate::subspace::Subspace;

pub const SCHEMA_VERSION: &str = "1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub space: SpaceSpec,
    /// Levels on the time grid; all levels when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<usize>>,
    /// Generators of `L_t` per grid level; levels not listed use the full space.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub subspaces: Vec<SubspaceSpec>,
    pub operators: Vec<OperatorSpec>,
    pub bounds: Vec<BoundSpec>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub payoffs: BTreeMap<String, Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tasks: Vec<Task>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refine: Option<RefineSpec>,
    /// Sample count for randomised checks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSpec {
    pub probs: Vec<f64>,
    pub partitions: Vec<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_labels: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponent: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubspaceSpec {
    pub level: usize,
    pub generators: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSpec {
    pub from: usize,
    pub to: usize,
    pub pieces: Vec<PieceSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceSpec {
    pub density: Vec<f64>,
    /// Zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty: Option<Vec<f64>>,
}

/// A number applied to every atom, or one value per atom.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Values {
    Constant(f64),
    PerAtom(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundSpec {
    Linear {
        from: usize,
        to: usize,
        m0: Values,
        #[serde(rename = "M0")]
        big_m0: Values,
    },
    Polyhedral {
        from: usize,
        to: usize,
        lower_kernels: Vec<Vec<f64>>,
        upper_kernels: Vec<Vec<f64>>,
    },
}

impl BoundSpec {
    fn pair(&self) -> (usize, usize) {
        match self {
            BoundSpec::Linear { from, to, .. } | BoundSpec::Polyhedral { from, to, .. } => (*from, *to),
        }
    }
}

/// A payoff by name or inline, one value per atom.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PayoffRef {
    Named(String),
    Inline(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case", deny_unknown_fields)]
pub enum Task {
    Price {
        from: usize,
        to: usize,
        payoff: PayoffRef,
        /// Expected value per atom, compared within the run tolerance.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        expect: Option<Values>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineSpec {
    pub coarse_grid: Vec<usize>,
}

fn at(path: impl Into<String>, e: impl std::fmt::Display) -> Error {
    Error::Scenario {
        path: path.into(),
        message: e.to_string(),
    }
}

impl Scenario {
    /// Parses and checks the schema version; errors carry the JSON path of
    /// the first offending value.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let sc: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            at(if path.is_empty() { ".".into() } else { path }, e.into_inner())
        })?;
        if sc.schema_version != SCHEMA_VERSION {
            return Err(at("schema_version", format!("unsupported version {:?}, expected {SCHEMA_VERSION:?}", sc.schema_version)));
        }
        Ok(sc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialises")
    }

    pub fn build(&self) -> Result<Built> {
        build(self)
    }
}

/// An assembled scenario.
#[derive(Clone, Debug)]
pub struct Built {
    pub system: OperatorSystem,
    pub payoffs: BTreeMap<String, RandomVariable>,
}

impl Built {
    pub fn space(&self) -> &Arc<FilteredSpace> {
        self.system.space()
    }

    pub fn payoff(&self, p: &PayoffRef) -> Result<RandomVariable> {
        match p {
            PayoffRef::Named(name) => self.payoffs.get(name).cloned().ok_or_else(|| at("payoff", format!("no payoff named {name:?}"))),
            PayoffRef::Inline(v) => vector(self.space(), v, "payoff"),
        }
    }
}

fn vector(space: &FilteredSpace, v: &[f64], path: &str) -> Result<RandomVariable> {
    if v.len() != space.n_atoms() {
        return Err(at(path, format!("expected {} values (one per atom), got {}", space.n_atoms(), v.len())));
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(at(format!("{path}[{i}]"), "value is not finite"));
    }
    RandomVariable::new(space, v.to_vec(), space.measurability_level(v)).map_err(|e| at(path, e))
}

fn values(space: &FilteredSpace, v: &Values, path: &str) -> Result<RandomVariable> {
    match v {
        Values::Constant(c) => vector(space, &vec![*c; space.n_atoms()], path),
        Values::PerAtom(v) => vector(space, v, path),
    }
}

fn build(sc: &Scenario) -> Result<Built> {
    let sp = &sc.space;
    let n_levels = sp.partitions.len();
    let labels = sp.time_labels.clone().unwrap_or_else(|| (0..n_levels).map(|l| l as f64).collect());
    let mut space = FilteredSpace::new(sp.probs.clone(), sp.partitions.clone(), labels).map_err(|e| at("space", e))?;
    if let Some(p) = sp.exponent {
        space = space.with_exponent(p).map_err(|e| at("space.exponent", e))?;
    }
    let space = Arc::new(space);
    let grid = sc.grid.clone().unwrap_or_else(|| (0..n_levels).collect());
    if grid.len() < 2 || grid.windows(2).any(|w| w[0] >= w[1]) || grid.iter().any(|&g| g >= n_levels) {
        return Err(at("grid", format!("expected increasing levels below {n_levels}, got {grid:?}")));
    }

    // L_t is closed under indicators of the preceding grid level
    let mut domains: BTreeMap<usize, Subspace> = BTreeMap::new();
    for w in grid.windows(2) {
        let (prev, t) = (w[0], w[1]);
        let spec = sc.subspaces.iter().enumerate().find(|(_, s)| s.level == t);
        let dom = match spec {
            Some((i, s)) => {
                let path = format!("subspaces[{i}]");
                let gens = s
                    .generators
                    .iter()
                    .enumerate()
                    .map(|(k, g)| vector(&space, g, &format!("{path}.generators[{k}]")))
                    .collect::<Result<Vec<_>>>()?;
                Subspace::span_closure(space.clone(), t, prev, &gens).map_err(|e| at(path, e))?
            }
            None => Subspace::full(space.clone(), t, prev).map_err(|e| at(format!("grid level {t}"), e))?,
        };
        domains.insert(t, dom);
    }
    if let Some((i, s)) = sc.subspaces.iter().enumerate().find(|(_, s)| !domains.contains_key(&s.level)) {
        return Err(at(format!("subspaces[{i}].level"), format!("level {} is not a positive grid level", s.level)));
    }

    let mut one_step: Vec<Option<PolyhedralOperator>> = vec![None; grid.len() - 1];
    let mut long_ops = BTreeMap::new();
    for (i, o) in sc.operators.iter().enumerate() {
        let path = format!("operators[{i}]");
        let (Some(a), Some(b)) = (grid.iter().position(|&g| g == o.from), grid.iter().position(|&g| g == o.to)) else {
            return Err(at(path, format!("pair ({}, {}) is not on the grid {grid:?}", o.from, o.to)));
        };
        if a >= b {
            return Err(at(path, format!("pair ({}, {}) is not increasing", o.from, o.to)));
        }
        let mut dom = domains[&o.to].clone();
        if b != a + 1 {
            dom = dom.with_level_a(o.from).map_err(|e| at(&path, e))?;
        }
        let mut pieces = Vec::with_capacity(o.pieces.len());
        for (k, p) in o.pieces.iter().enumerate() {
            let pp = format!("{path}.pieces[{k}]");
            let f = vector(&space, &p.density, &format!("{pp}.density"))?;
            let c = match &p.penalty {
                Some(c) => vector(&space, c, &format!("{pp}.penalty"))?,
                None => RandomVariable::constant(&space, 0.0, 0),
            };
            pieces.push((f.into_values(), c.into_values()));
        }
        let op = PolyhedralOperator::from_vectors(dom, pieces).map_err(|e| at(&path, e))?;
        if b == a + 1 {
            if one_step[a].is_some() {
                return Err(at(path, format!("duplicate operator for ({}, {})", o.from, o.to)));
            }
            one_step[a] = Some(op);
        } else if long_ops.insert((o.from, o.to), op).is_some() {
            return Err(at(path, format!("duplicate operator for ({}, {})", o.from, o.to)));
        }
    }
    let one_step = one_step
        .into_iter()
        .enumerate()
        .map(|(a, op)| op.ok_or_else(|| at("operators", format!("no operator for adjacent pair ({}, {})", grid[a], grid[a + 1]))))
        .collect::<Result<Vec<_>>>()?;

    let mut bounds = BTreeMap::new();
    for (i, b) in sc.bounds.iter().enumerate() {
        let path = format!("bounds[{i}]");
        let (s, t) = b.pair();
        let pair = match b {
            BoundSpec::Linear { m0, big_m0, .. } => BoundPair::linear(
                &space,
                s,
                t,
                values(&space, m0, &format!("{path}.m0"))?,
                values(&space, big_m0, &format!("{path}.M0"))?,
            ),
            BoundSpec::Polyhedral {
                lower_kernels, upper_kernels, ..
            } => {
                let kernels = |ks: &[Vec<f64>], name: &str| -> Result<Vec<RandomVariable>> {
                    ks.iter()
                        .enumerate()
                        .map(|(k, v)| vector(&space, v, &format!("{path}.{name}[{k}]")))
                        .collect()
                };
                BoundPair::polyhedral(&space, s, t, kernels(lower_kernels, "lower_kernels")?, kernels(upper_kernels, "upper_kernels")?)
            }
        }
        .map_err(|e| at(&path, e))?;
        if bounds.insert((s, t), pair).is_some() {
            return Err(at(path, format!("duplicate bounds for ({s}, {t})")));
        }
    }

    let mut payoffs = BTreeMap::new();
    for (name, v) in &sc.payoffs {
        payoffs.insert(name.clone(), vector(&space, v, &format!("payoffs.{name}"))?);
    }
    // an empty density set admits no operator at all: structural, not a check
    for (&(s, t), b) in &bounds {
        DensityPolytope::new(&space, b).map_err(|e| Error::AtPair { s, t, source: Box::new(e) })?;
    }
    let system = OperatorSystem::new(space, grid, one_step, long_ops, bounds)?;
    Ok(Built { system, payoffs })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) const TREE_LINEAR: &str = r#"{
        "schema_version": "1",
        "name": "binomial, conditional expectations",
        "space": {
            "probs": [0.25, 0.25, 0.25, 0.25],
            "partitions": [[[0, 1, 2, 3]], [[0, 1], [2, 3]], [[0], [1], [2], [3]]]
        },
        "operators": [
            {"from": 0, "to": 1, "pieces": [{"density": [1, 1, 1, 1]}]},
            {"from": 1, "to": 2, "pieces": [{"density": [1, 1, 1, 1]}]}
        ],
        "bounds": [
            {"kind": "linear", "from": 0, "to": 1, "m0": 0.5, "M0": 2},
            {"kind": "linear", "from": 1, "to": 2, "m0": 0.5, "M0": 2},
            {"kind": "linear", "from": 0, "to": 2, "m0": 0.25, "M0": 4}
        ],
        "payoffs": {"uu": [1, 0, 0, 0]},
        "tasks": [{"command": "price", "from": 0, "to": 2, "payoff": "uu", "expect": 0.25}]
    }"#;

    #[test]
    fn parses_and_builds() {
        let sc = Scenario::from_json(TREE_LINEAR).unwrap();
        let b = sc.build().unwrap();
        assert_eq!(b.system.grid(), &[0, 1, 2]);
        assert_eq!(b.payoffs["uu"].values(), &[1.0, 0.0, 0.0, 0.0]);
        // echo round-trips
        assert_eq!(Scenario::from_json(&sc.to_json()).unwrap(), sc);
    }

    #[test]
    fn errors_carry_paths() {
        let bad = TREE_LINEAR.replace(r#""m0": 0.5, "M0": 2},"#, r#""m0": "x", "M0": 2},"#);
        match Scenario::from_json(&bad) {
            Err(Error::Scenario { path, .. }) => assert!(path.starts_with("bounds[0]"), "{path}"),
            other => panic!("{other:?}"),
        }
        let bad = TREE_LINEAR.replace(r#""schema_version": "1""#, r#""schema_version": "2""#);
        assert!(matches!(Scenario::from_json(&bad), Err(Error::Scenario { path, .. }) if path == "schema_version"));
        let bad = TREE_LINEAR.replace("[1, 0, 0, 0]", "[1, 0, 0]");
        let sc = Scenario::from_json(&bad).unwrap();
        assert!(matches!(sc.build(), Err(Error::Scenario { path, .. }) if path == "payoffs.uu"));
        let bad = TREE_LINEAR.replace(r#"{"from": 1, "to": 2, "pieces": [{"density": [1, 1, 1, 1]}]}"#, r#"{"from": 1, "to": 2, "pieces": [{"density": [1, 1, 1]}]}"#);
        let sc = Scenario::from_json(&bad).unwrap();
        assert!(matches!(sc.build(), Err(Error::Scenario { path, .. }) if path == "operators[1].pieces[0].density"));
    }
}
