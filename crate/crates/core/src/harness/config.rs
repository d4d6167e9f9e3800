//! Line-oriented `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. Method-specific settings use a
//! `<method>.<key>` prefix, e.g. `al2sgd_plus.rho = 1/m`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::SplitMode;
use crate::error::{Error, Result};
use crate::solvers::{CommModel, Method};

/// Parsed key/value pairs in file order, with line numbers for errors.
#[derive(Clone, Debug, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            let key = k.trim().to_string();
            if entries.insert(key.clone(), (i + 1, v.trim().to_string())).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", i + 1)));
            }
        }
        Ok(Self { entries })
    }

    /// `key=value` pairs separated by commas or whitespace.
    pub fn parse_inline(text: &str) -> Result<Self> {
        Self::parse(&text.split([',', ' ', '\n']).collect::<Vec<_>>().join("\n"))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub(crate) fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|(_, v)| v)
    }

    pub(crate) fn take_parsed<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("line {line}: bad value `{v}` for `{key}`"))),
        }
    }

    pub(crate) fn require<T: FromStr>(&mut self, key: &str) -> Result<T> {
        self.take_parsed(key)?
            .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
    }

    pub fn finish(self) -> Result<()> {
        match self.entries.iter().next() {
            None => Ok(()),
            Some((k, (line, _))) => Err(Error::Config(format!("line {line}: unknown key `{k}`"))),
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{key}` expects true or false, got `{v}`"))),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProblemSource {
    /// random per-client quadratics with spectrum in `[mu, smoothness]`
    Quadratic { clients: usize, dim: usize, smoothness: f64, instance_seed: u64 },
    /// quadratics read from an instance file
    Instance { path: PathBuf },
    /// logistic regression on a LIBSVM file
    Libsvm {
        path: PathBuf,
        clients: usize,
        split: SplitMode,
        rows: Option<usize>,
        normalize: bool,
        /// use a synthetic mushroom-like table when the file is missing
        synthetic_fallback: bool,
    },
    /// logistic regression on the synthetic mushroom-like table
    SyntheticLogistic { clients: usize, split: SplitMode, rows: usize },
    /// the two-group lower-bound instance
    LowerBound { clients: usize, half_dim: usize, smoothness: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum LambdaRule {
    Values(Vec<f64>),
    /// one over the number of summands per client
    InverseM,
}

/// A probability setting that may depend on the problem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProbRule {
    /// method default
    Auto,
    Value(f64),
    InverseM,
    /// `p(1−p)` of the resolved p
    PTimesOneMinusP,
}

impl FromStr for ProbRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Self::Auto),
            "1/m" => Ok(Self::InverseM),
            "p(1-p)" => Ok(Self::PTimesOneMinusP),
            _ => s
                .parse()
                .map(Self::Value)
                .map_err(|_| Error::Config(format!("bad probability `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleChoice {
    Practical,
    Theory,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MethodSpec {
    pub method: Method,
    pub p: ProbRule,
    pub rho: ProbRule,
    pub comm_model: Option<CommModel>,
    pub max_iters: Option<u64>,
    pub inner_iters: Option<usize>,
    pub schedule: Option<ScheduleChoice>,
    pub prox_tol: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetMetric {
    RelSubopt,
    /// squared distance to the optimum relative to the start
    RelDist,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub source: ProblemSource,
    pub lambda: LambdaRule,
    /// strong convexity (quadratics) or ridge weight (logistic)
    pub mu: f64,
    pub methods: Vec<MethodSpec>,
    pub max_comm: u64,
    pub target: Option<f64>,
    pub target_metric: TargetMetric,
    pub seed: u64,
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let cfg = Self::from_key_values(KeyValues::read(path)?)?;
        Ok(cfg.relative_to(path.parent().unwrap_or(Path::new("."))))
    }

    /// Resolves relative data paths against `dir`.
    fn relative_to(mut self, dir: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        match &mut self.source {
            ProblemSource::Instance { path } | ProblemSource::Libsvm { path, .. } => fix(path),
            _ => {}
        }
        if let Some(out) = &mut self.output {
            fix(out);
        }
        self
    }

    pub fn from_key_values(mut kv: KeyValues) -> Result<Self> {
        let source_kind: String = kv.require("source")?;
        let split = |kv: &mut KeyValues| -> Result<SplitMode> {
            Ok(kv.take_parsed::<String>("split")?.map(|s| s.parse()).transpose()?.unwrap_or(SplitMode::Homogeneous))
        };
        let source = match source_kind.as_str() {
            "quadratic" => ProblemSource::Quadratic {
                clients: kv.require("clients")?,
                dim: kv.require("dim")?,
                smoothness: kv.take_parsed("smoothness")?.unwrap_or(1.0),
                instance_seed: kv.take_parsed("instance_seed")?.unwrap_or(0),
            },
            "instance" => ProblemSource::Instance { path: kv.require::<String>("path")?.into() },
            "libsvm" => {
                let normalize = match kv.take("normalize") {
                    Some(v) => parse_bool("normalize", &v)?,
                    None => true,
                };
                let synthetic_fallback = match kv.take("fallback") {
                    None => false,
                    Some(v) if v == "synthetic" => true,
                    Some(v) if v == "none" => false,
                    Some(v) => return Err(Error::Config(format!("`fallback` expects synthetic or none, got `{v}`"))),
                };
                ProblemSource::Libsvm {
                    path: kv.require::<String>("path")?.into(),
                    clients: kv.require("clients")?,
                    split: split(&mut kv)?,
                    rows: kv.take_parsed("rows")?,
                    normalize,
                    synthetic_fallback,
                }
            }
            "synthetic_logistic" => ProblemSource::SyntheticLogistic {
                clients: kv.require("clients")?,
                split: split(&mut kv)?,
                rows: kv.take_parsed("rows")?.unwrap_or(500),
            },
            "lowerbound" => ProblemSource::LowerBound {
                clients: kv.require("clients")?,
                half_dim: kv.require("half_dim")?,
                smoothness: kv.require("smoothness")?,
            },
            other => return Err(Error::Config(format!("unknown source `{other}`"))),
        };
        let lambda = match kv.take("lambda") {
            None => return Err(Error::Config("missing required key `lambda`".into())),
            Some(v) if v == "1/m" => LambdaRule::InverseM,
            Some(v) => LambdaRule::Values(
                v.split(',')
                    .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad lambda `{s}`"))))
                    .collect::<Result<_>>()?,
            ),
        };
        let mu = kv.take_parsed("mu")?.unwrap_or(1e-4);
        let names: String = kv.require("methods")?;
        let mut methods = Vec::new();
        for name in names.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let method: Method = name.parse()?;
            let pre = |k: &str| format!("{name}.{k}");
            let schedule = match kv.take(&pre("schedule")) {
                None => None,
                Some(v) if v == "practical" => Some(ScheduleChoice::Practical),
                Some(v) if v == "theory" => Some(ScheduleChoice::Theory),
                Some(v) => return Err(Error::Config(format!("unknown schedule `{v}`"))),
            };
            let comm_model = match kv.take(&pre("comm_model")) {
                None => None,
                Some(v) if v == "flip" => Some(CommModel::Flip),
                Some(v) if v == "per_event" => Some(CommModel::PerEvent),
                Some(v) => return Err(Error::Config(format!("unknown comm_model `{v}`"))),
            };
            methods.push(MethodSpec {
                method,
                p: kv.take_parsed(&pre("p"))?.unwrap_or(ProbRule::Auto),
                rho: kv.take_parsed(&pre("rho"))?.unwrap_or(ProbRule::Auto),
                comm_model,
                max_iters: kv.take_parsed(&pre("max_iters"))?,
                inner_iters: kv.take_parsed(&pre("inner_iters"))?,
                schedule,
                prox_tol: kv.take_parsed(&pre("prox_tol"))?,
            });
        }
        if methods.is_empty() {
            return Err(Error::Config("`methods` lists no method".into()));
        }
        let target_metric = match kv.take("target_metric").as_deref() {
            None | Some("rel_subopt") => TargetMetric::RelSubopt,
            Some("rel_dist") => TargetMetric::RelDist,
            Some(v) => return Err(Error::Config(format!("unknown target_metric `{v}`"))),
        };
        let cfg = Self {
            source,
            lambda,
            mu,
            methods,
            max_comm: kv.require("max_comm")?,
            target: kv.take_parsed("target")?,
            target_metric,
            seed: kv.take_parsed("seed")?.unwrap_or(0),
            output: kv.take("output").map(PathBuf::from),
        };
        kv.finish()?;
        Ok(cfg)
    }
}
