//! Problem and run files, and trajectory export.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::benchmarks::BuiltinPlant;
use crate::engine::{Adaptation, Ceilings, RunConfig, Trajectory};
use crate::error::{Error, Result};
use crate::model::{
    BoxBounds, DecisionVector, LipschitzData, LipschitzInput, NumericalConstraint, ProblemSpec,
    TargetRule,
};

/// Target as written in a file: a point, `"box_center"`, or
/// `"file:<path>"` naming a JSON file with a point or a list of points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetSpec {
    Point(Vec<f64>),
    Named(String),
}

impl Default for TargetSpec {
    fn default() -> Self {
        Self::Named("box_center".into())
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TargetFile {
    Point(Vec<f64>),
    Sequence(Vec<Vec<f64>>),
}

impl TargetSpec {
    /// Resolve relative file paths against `base`.
    pub fn resolve(&self, base: &Path) -> Result<TargetRule> {
        match self {
            Self::Point(p) => Ok(TargetRule::Fixed(DecisionVector::new(p.clone())?)),
            Self::Named(s) if s == "box_center" => Ok(TargetRule::BoxCenter),
            Self::Named(s) => {
                let Some(path) = s.strip_prefix("file:") else {
                    return Err(Error::InvalidArgument(format!(
                        "target must be a vector, \"box_center\" or \"file:<path>\", got {s:?}"
                    )));
                };
                let text = std::fs::read_to_string(base.join(path))?;
                match serde_json::from_str::<TargetFile>(&text)? {
                    TargetFile::Point(p) => Ok(TargetRule::Fixed(DecisionVector::new(p)?)),
                    TargetFile::Sequence(ps) => Ok(TargetRule::Sequence(
                        ps.into_iter()
                            .map(DecisionVector::new)
                            .collect::<Result<_>>()?,
                    )),
                }
            }
        }
    }

    /// Parse a command-line target: `box_center`, `file:<path>` or a
    /// comma-separated point.
    pub fn parse_arg(s: &str) -> Result<Self> {
        if s == "box_center" || s.starts_with("file:") {
            return Ok(Self::Named(s.to_string()));
        }
        s.split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("target entry {v:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Self::Point)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlantSource {
    Builtin(BuiltinPlant),
    /// Measurements come from the other end of a line stream.
    Stdio,
}

impl PlantSource {
    pub fn parse(s: &str) -> Result<Self> {
        if s == "stdio" {
            Ok(Self::Stdio)
        } else if let Some(name) = s.strip_prefix("builtin:") {
            Ok(Self::Builtin(name.parse()?))
        } else {
            Err(Error::InvalidArgument(format!(
                "plant must be \"builtin:<name>\" or \"stdio\", got {s:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemFile {
    #[serde(default)]
    pub name: Option<String>,
    pub n_u: usize,
    pub bounds: BoxBounds,
    pub lipschitz: LipschitzInput,
    pub u0: Vec<f64>,
    #[serde(default)]
    pub target: TargetSpec,
    pub plant: String,
    #[serde(default)]
    pub numerical_constraints: Vec<NumericalConstraint>,
    #[serde(default)]
    pub ceilings: Option<Ceilings>,
}

#[derive(Debug, Clone)]
pub struct LoadedProblem {
    pub spec: ProblemSpec,
    pub plant: PlantSource,
    pub ceilings: Option<Ceilings>,
}

impl ProblemFile {
    /// The number of experimental constraints is the row count of `kappa_p`.
    pub fn into_problem(self, base: &Path) -> Result<LoadedProblem> {
        let plant = PlantSource::parse(&self.plant)?;
        let n_gp = self.lipschitz.kappa_p.len();
        if self.bounds.dim() != self.n_u {
            return Err(Error::Dimension(format!(
                "bounds have {} entries but n_u = {}",
                self.bounds.dim(),
                self.n_u
            )));
        }
        if let PlantSource::Builtin(b) = plant {
            let reference = b.spec();
            if reference.n_u() != self.n_u || reference.n_gp() != n_gp {
                return Err(Error::Dimension(format!(
                    "builtin {} has n_u = {} and {} experimental constraints",
                    b.name(),
                    reference.n_u(),
                    reference.n_gp()
                )));
            }
        }
        let lipschitz = LipschitzData::new(
            self.lipschitz,
            self.n_u,
            n_gp,
            self.numerical_constraints.len(),
        )?;
        let target = self.target.resolve(base)?;
        let name = self.name.unwrap_or_else(|| self.plant.clone());
        let spec = ProblemSpec::new(
            name,
            self.bounds,
            n_gp,
            self.numerical_constraints,
            lipschitz,
            DecisionVector::new(self.u0)?,
            target,
        )?;
        if let Some(c) = &self.ceilings {
            c.check(spec.n_gp(), spec.n_g())?;
        }
        Ok(LoadedProblem {
            spec,
            plant,
            ceilings: self.ceilings,
        })
    }

    /// Problem file equivalent to a builtin plant.
    pub fn from_builtin(plant: BuiltinPlant) -> Self {
        let spec = plant.spec();
        let lip = spec.lipschitz();
        Self {
            name: Some(plant.name().to_string()),
            n_u: spec.n_u(),
            bounds: spec.bounds().clone(),
            lipschitz: LipschitzInput {
                kappa_p: lip.kappa_p().to_vec(),
                kappa: lip.kappa().to_vec(),
                m_phi: lip.m_phi().to_vec(),
                m_g: lip.m_g().to_vec(),
                m_gp: lip.m_gp().to_vec(),
                gamma: Some(lip.gamma().to_vec()),
                gamma_phi: Some(lip.gamma_phi()),
            },
            u0: spec.u0().to_vec(),
            target: match spec.target() {
                TargetRule::Fixed(p) => TargetSpec::Point(p.to_vec()),
                _ => TargetSpec::default(),
            },
            plant: format!("builtin:{}", plant.name()),
            numerical_constraints: spec.numerical_constraints().to_vec(),
            ceilings: Some(plant.ceilings()),
        }
    }
}

pub fn load_problem(path: &Path) -> Result<LoadedProblem> {
    let text = std::fs::read_to_string(path)?;
    let file: ProblemFile = serde_json::from_str(&text)?;
    file.into_problem(path.parent().unwrap_or(Path::new(".")))
}

fn default_budget() -> usize {
    200
}

/// Run settings as written in a file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunFile {
    #[serde(default = "default_budget")]
    pub budget: usize,
    /// Halving limit for adaptive parameters (default 10).
    #[serde(default)]
    pub max_halvings: Option<u32>,
    /// Disables adaptation and pins the parameters at this level.
    #[serde(default)]
    pub fixed_level: Option<u32>,
    #[serde(default)]
    pub ceilings: Option<Ceilings>,
    #[serde(default)]
    pub target: Option<TargetSpec>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl RunFile {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn adaptation(&self) -> Adaptation {
        match self.fixed_level {
            Some(level) => Adaptation::Fixed { level },
            None => Adaptation::Adaptive {
                max_halvings: self.max_halvings.unwrap_or(10),
            },
        }
    }

    pub fn into_config(self, ceilings: Ceilings, base: &Path) -> Result<RunConfig> {
        let mut config = RunConfig::new(self.budget, ceilings).with_adaptation(self.adaptation());
        if let Some(t) = &self.target {
            config = config.with_target(t.resolve(base)?);
        }
        Ok(config)
    }
}

fn push_real(out: &mut String, v: f64) {
    // Debug formatting of f64 is the shortest round-trip decimal.
    let _ = write!(out, ",{v:?}");
}

/// CSV with one row per record:
/// `k, u1.., phi, g_p1.., g1.., K, level, status`.
pub fn trajectory_csv(spec: &ProblemSpec, traj: &Trajectory) -> String {
    let mut out = String::from("k");
    for i in 1..=spec.n_u() {
        let _ = write!(out, ",u{i}");
    }
    out.push_str(",phi");
    for j in 1..=spec.n_gp() {
        let _ = write!(out, ",g_p{j}");
    }
    for j in 1..=spec.n_g() {
        let _ = write!(out, ",g{j}");
    }
    out.push_str(",K,level,status\n");
    for r in &traj.records {
        let _ = write!(out, "{}", r.k);
        for v in r.u.iter() {
            push_real(&mut out, *v);
        }
        push_real(&mut out, r.measurement.phi);
        for v in r.measurement.g_p.iter().chain(&r.g_values) {
            push_real(&mut out, *v);
        }
        match r.gain {
            Some(k) => push_real(&mut out, k),
            None => out.push(','),
        }
        let _ = writeln!(out, ",{},{}", r.params_level, r.status.as_str());
    }
    out
}

pub fn trajectory_json(traj: &Trajectory) -> Result<String> {
    Ok(serde_json::to_string_pretty(traj)?)
}
