//! Flat `key = value` experiment configuration.
//!
//! ```text
//! # comment
//! name = demo
//! seed = 7
//! graph = generated            # or: file
//! graph.n = 8
//! graph.extra_edges = 4,10,18  # one run per entry, nested under one seed
//! graph.path = ring.edges      # when graph = file
//! objective = logistic         # or: quadratic
//! objective.dim = 5            # features for logistic, dimension for quadratic
//! objective.samples_per_agent = 10
//! objective.xi = 1
//! objective.regularize_bias = true
//! objective.data = data.csv    # optional logistic dataset instead of random draws
//! solvers = ab,row-stochastic,subgradient-push,eq4
//! eta.ab = 0.02                # or: theorem1
//! iterations = 3000
//! output = out
//! certify = false
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::solvers::SUBGRADIENT_PUSH_ETA0;

#[derive(Debug, Clone, PartialEq)]
pub enum GraphSpec {
    /// Seeded strongly connected graphs, one per `extra_edges` entry.
    Generated {
        n: usize,
        extra_edges: Vec<usize>,
    },
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ObjectiveSpec {
    Logistic {
        features: usize,
        samples_per_agent: usize,
        xi: f64,
        regularize_bias: bool,
        data: Option<PathBuf>,
    },
    Quadratic {
        dim: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SolverKind {
    Ab,
    RowStochastic,
    SubgradientPush,
    Eq4,
}

impl SolverKind {
    pub const ALL: [SolverKind; 4] = [
        SolverKind::Ab,
        SolverKind::RowStochastic,
        SolverKind::SubgradientPush,
        SolverKind::Eq4,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Ab => "ab",
            SolverKind::RowStochastic => "row-stochastic",
            SolverKind::SubgradientPush => "subgradient-push",
            SolverKind::Eq4 => "eq4",
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SolverKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown solver '{s}' (expected one of ab, row-stochastic, subgradient-push, eq4)"
            ))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    Fixed(f64),
    /// Half the certified upper bound.
    Theorem1,
}

impl fmt::Display for StepSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepSize::Fixed(v) => write!(f, "{v}"),
            StepSize::Theorem1 => f.write_str("theorem1"),
        }
    }
}

impl FromStr for StepSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "theorem1" {
            return Ok(StepSize::Theorem1);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| Error::Config(format!("step size '{s}' is neither a number nor theorem1")))?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Config(format!("step size {v} must be positive")));
        }
        Ok(StepSize::Fixed(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSpec {
    pub kind: SolverKind,
    /// For subgradient-push this is the base of the `eta0 / sqrt(k+1)` schedule.
    pub eta: StepSize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub graph: GraphSpec,
    pub objective: ObjectiveSpec,
    pub solvers: Vec<SolverSpec>,
    pub iterations: usize,
    pub output: PathBuf,
    /// Attach the convergence certificate to the `ab` run even at a fixed step.
    pub certify: bool,
}

pub const DEFAULT_ETA: f64 = 0.01;

impl ExperimentConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse_with(&text, path, base, &[])
    }

    /// Like [`ExperimentConfig::from_file`] with `key=value` overrides applied
    /// on top of the file contents.
    pub fn from_file_with(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse_with(&text, path, base, overrides)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with(text, Path::new("<config>"), Path::new(""), &[])
    }

    pub fn parse_with(text: &str, origin: &Path, base: &Path, overrides: &[String]) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = split_pair(line).map_err(|msg| Error::Parse {
                path: origin.to_path_buf(),
                line: idx + 1,
                msg,
            })?;
            if map.insert(k.clone(), v).is_some() {
                return Err(Error::Parse {
                    path: origin.to_path_buf(),
                    line: idx + 1,
                    msg: format!("duplicate key '{k}'"),
                });
            }
        }
        for o in overrides {
            let (k, v) = split_pair(o).map_err(|msg| Error::Config(format!("override '{o}': {msg}")))?;
            map.insert(k, v);
        }
        Self::from_map(map, base)
    }

    fn from_map(mut map: BTreeMap<String, String>, base: &Path) -> Result<Self> {
        let mut take = |key: &str| map.remove(key);
        let resolve = |p: String| {
            let p = PathBuf::from(p);
            if p.is_relative() {
                base.join(p)
            } else {
                p
            }
        };
        let name = take("name").unwrap_or_else(|| "experiment".into());
        if name.is_empty() || name.contains(['/', '\\']) {
            return Err(Error::Config(format!("name '{name}' must be a plain file stem")));
        }
        let seed = parse_or(take("seed"), "seed", 0u64)?;
        let graph_kind = take("graph").unwrap_or_else(|| "generated".into());
        let graph_n = take("graph.n");
        let graph_extra = take("graph.extra_edges");
        let graph_path = take("graph.path");
        let graph = match graph_kind.as_str() {
            "generated" => {
                if graph_path.is_some() {
                    return Err(Error::Config("graph.path requires graph = file".into()));
                }
                let n = parse_or(graph_n, "graph.n", 8usize)?;
                let extra_edges = match graph_extra {
                    Some(v) => v
                        .split(',')
                        .map(|s| parse_value::<usize>(s.trim(), "graph.extra_edges"))
                        .collect::<Result<Vec<_>>>()?,
                    None => vec![0],
                };
                GraphSpec::Generated { n, extra_edges }
            }
            "file" => {
                if graph_n.is_some() || graph_extra.is_some() {
                    return Err(Error::Config(
                        "graph.n and graph.extra_edges require graph = generated".into(),
                    ));
                }
                let p = graph_path.ok_or_else(|| Error::Config("graph = file needs graph.path".into()))?;
                GraphSpec::File(resolve(p))
            }
            other => return Err(Error::Config(format!("graph '{other}' must be generated or file"))),
        };
        let family = take("objective").unwrap_or_else(|| "logistic".into());
        let dim = take("objective.dim");
        let spa = take("objective.samples_per_agent");
        let xi = take("objective.xi");
        let reg = take("objective.regularize_bias");
        let data = take("objective.data");
        let objective = match family.as_str() {
            "logistic" => ObjectiveSpec::Logistic {
                features: parse_or(dim, "objective.dim", 5usize)?,
                samples_per_agent: parse_or(spa, "objective.samples_per_agent", 10usize)?,
                xi: parse_or(xi, "objective.xi", 1.0f64)?,
                regularize_bias: parse_or(reg, "objective.regularize_bias", true)?,
                data: data.map(resolve),
            },
            "quadratic" => {
                if spa.is_some() || xi.is_some() || reg.is_some() || data.is_some() {
                    return Err(Error::Config(
                        "logistic-only objective keys set for a quadratic objective".into(),
                    ));
                }
                ObjectiveSpec::Quadratic {
                    dim: parse_or(dim, "objective.dim", 5usize)?,
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "objective '{other}' must be logistic or quadratic"
                )))
            }
        };
        let solver_list = take("solvers").unwrap_or_else(|| "ab".into());
        let mut solvers = Vec::new();
        for s in solver_list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let kind: SolverKind = s.parse()?;
            if solvers.iter().any(|x: &SolverSpec| x.kind == kind) {
                return Err(Error::Config(format!("solver '{s}' listed twice")));
            }
            let default = match kind {
                SolverKind::SubgradientPush => StepSize::Fixed(SUBGRADIENT_PUSH_ETA0),
                _ => StepSize::Fixed(DEFAULT_ETA),
            };
            let eta = match take(&format!("eta.{}", kind.name())) {
                Some(v) => v.parse()?,
                None => default,
            };
            solvers.push(SolverSpec { kind, eta });
        }
        let iterations = parse_or(take("iterations"), "iterations", 1000usize)?;
        let output = resolve(take("output").unwrap_or_else(|| "out".into()));
        let certify = parse_or(take("certify"), "certify", false)?;
        if let Some(k) = map.keys().next() {
            return Err(Error::Config(format!("unknown or unused key '{k}'")));
        }
        let cfg = ExperimentConfig {
            name,
            seed,
            graph,
            objective,
            solvers,
            iterations,
            output,
            certify,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.solvers.is_empty() {
            return Err(Error::Config("at least one solver is required".into()));
        }
        for s in &self.solvers {
            match s.eta {
                StepSize::Fixed(v) if !(v > 0.0 && v.is_finite()) => {
                    return Err(Error::Config(format!("eta.{} = {v} must be positive", s.kind)));
                }
                StepSize::Theorem1 if s.kind != SolverKind::Ab => {
                    return Err(Error::Config(format!(
                        "eta.{} = theorem1: the certificate only covers ab",
                        s.kind
                    )));
                }
                _ => {}
            }
        }
        if let GraphSpec::Generated { n, extra_edges } = &self.graph {
            if *n == 0 || extra_edges.is_empty() {
                return Err(Error::Config("graph.n and graph.extra_edges must be nonempty".into()));
            }
        }
        match &self.objective {
            ObjectiveSpec::Logistic {
                features,
                samples_per_agent,
                xi,
                data,
                ..
            } => {
                if data.is_none() && (*features == 0 || *samples_per_agent == 0) {
                    return Err(Error::Config("objective.dim and samples_per_agent must be >= 1".into()));
                }
                if !(*xi > 0.0) {
                    return Err(Error::Config(format!("objective.xi = {xi} must be positive")));
                }
            }
            ObjectiveSpec::Quadratic { dim } if *dim == 0 => {
                return Err(Error::Config("objective.dim must be >= 1".into()));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn graph_count(&self) -> usize {
        match &self.graph {
            GraphSpec::Generated { extra_edges, .. } => extra_edges.len(),
            GraphSpec::File(_) => 1,
        }
    }

    pub fn solver(&self, kind: SolverKind) -> Option<&SolverSpec> {
        self.solvers.iter().find(|s| s.kind == kind)
    }

    /// Whether the `ab` run carries the certificate.
    pub fn wants_certificate(&self) -> bool {
        self.solver(SolverKind::Ab)
            .is_some_and(|s| self.certify || s.eta == StepSize::Theorem1)
    }

    /// Canonical text form; parsing it yields the same config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        kv("name", self.name.clone());
        kv("seed", self.seed.to_string());
        match &self.graph {
            GraphSpec::Generated { n, extra_edges } => {
                kv("graph", "generated".into());
                kv("graph.n", n.to_string());
                let list: Vec<String> = extra_edges.iter().map(|e| e.to_string()).collect();
                kv("graph.extra_edges", list.join(","));
            }
            GraphSpec::File(p) => {
                kv("graph", "file".into());
                kv("graph.path", p.display().to_string());
            }
        }
        match &self.objective {
            ObjectiveSpec::Logistic {
                features,
                samples_per_agent,
                xi,
                regularize_bias,
                data,
            } => {
                kv("objective", "logistic".into());
                kv("objective.dim", features.to_string());
                kv("objective.samples_per_agent", samples_per_agent.to_string());
                kv("objective.xi", format!("{xi:?}"));
                kv("objective.regularize_bias", regularize_bias.to_string());
                if let Some(d) = data {
                    kv("objective.data", d.display().to_string());
                }
            }
            ObjectiveSpec::Quadratic { dim } => {
                kv("objective", "quadratic".into());
                kv("objective.dim", dim.to_string());
            }
        }
        let names: Vec<&str> = self.solvers.iter().map(|s| s.kind.name()).collect();
        kv("solvers", names.join(","));
        for s in &self.solvers {
            let v = match s.eta {
                StepSize::Fixed(v) => format!("{v:?}"),
                StepSize::Theorem1 => "theorem1".into(),
            };
            kv(&format!("eta.{}", s.kind), v);
        }
        kv("iterations", self.iterations.to_string());
        kv("output", self.output.display().to_string());
        kv("certify", self.certify.to_string());
        out
    }
}

fn split_pair(line: &str) -> std::result::Result<(String, String), String> {
    let (k, v) = line
        .split_once('=')
        .ok_or_else(|| format!("expected key = value, got '{line}'"))?;
    let (k, v) = (k.trim(), v.trim());
    if k.is_empty() {
        return Err("empty key".into());
    }
    Ok((k.to_string(), v.to_string()))
}

fn parse_value<T: FromStr>(v: &str, key: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

fn parse_or<T: FromStr>(v: Option<String>, key: &str, default: T) -> Result<T> {
    match v {
        Some(s) => parse_value(&s, key),
        None => Ok(default),
    }
}
