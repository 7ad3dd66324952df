//! Built-in analytic plants, reference optima and trajectory summaries.
//!
//! Two plants are provided:
//!
//! - `constrained_quadratic`: a quadratic cost over a nonconvex region cut
//!   out by two experimental constraints and one numerical constraint.
//! - `rosenbrock`: the Rosenbrock function over the unit box.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::{Ceilings, StepStatus, StopReason, Trajectory};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{
    AnalyticPlant, BoxBounds, DecisionVector, LipschitzData, LipschitzInput, Measurement,
    NumericalConstraint, ProblemSpec, TargetRule,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinPlant {
    ConstrainedQuadratic,
    Rosenbrock,
}

impl FromStr for BuiltinPlant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constrained_quadratic" => Ok(Self::ConstrainedQuadratic),
            "rosenbrock" => Ok(Self::Rosenbrock),
            other => Err(Error::UnknownBuiltin(other.to_string())),
        }
    }
}

impl BuiltinPlant {
    pub const ALL: [BuiltinPlant; 2] = [Self::ConstrainedQuadratic, Self::Rosenbrock];

    pub fn name(self) -> &'static str {
        match self {
            Self::ConstrainedQuadratic => "constrained_quadratic",
            Self::Rosenbrock => "rosenbrock",
        }
    }

    /// Upper bounds on the projection parameters for this plant.
    pub fn ceilings(self) -> Ceilings {
        match self {
            Self::ConstrainedQuadratic => Ceilings {
                eps_p: vec![4.0, 2.0],
                eps: vec![1.0],
                delta_gp: vec![4.0, 2.0],
                delta_g: vec![1.0],
                delta_phi: 1.0,
            },
            Self::Rosenbrock => Ceilings {
                eps_p: vec![],
                eps: vec![],
                delta_gp: vec![],
                delta_g: vec![],
                delta_phi: 1.0,
            },
        }
    }

    /// Problem specification with the plant's reference constants.
    pub fn spec(self) -> ProblemSpec {
        match self {
            Self::ConstrainedQuadratic => {
                let bounds = BoxBounds::new(vec![-0.5, 0.0], vec![0.5, 0.8]).unwrap();
                // kappa_p and M_phi are the reference constants; the
                // numerical-constraint and g_p curvature constants only feed
                // the diagnostics and are chosen just above the analytic
                // suprema over the box.
                let lip = LipschitzData::new(
                    LipschitzInput {
                        kappa_p: vec![vec![10.0, 2.0], vec![3.0, 2.0]],
                        kappa: vec![vec![1.5, 1.5]],
                        m_phi: vec![vec![3.0, 1.0], vec![1.0, 3.0]],
                        m_g: vec![vec![vec![2.5, 0.5], vec![0.5, 2.5]]],
                        m_gp: vec![
                            vec![vec![13.0, 0.5], vec![0.5, 0.5]],
                            vec![vec![5.0, 0.5], vec![0.5, 0.5]],
                        ],
                        gamma: None,
                        gamma_phi: None,
                    },
                    2,
                    2,
                    1,
                )
                .unwrap();
                ProblemSpec::new(
                    self.name(),
                    bounds,
                    2,
                    vec![NumericalConstraint::ExcludedDisk {
                        center: vec![0.0, 0.15],
                        radius: 0.1,
                    }],
                    lip,
                    DecisionVector::new(vec![-0.45, 0.05]).unwrap(),
                    TargetRule::BoxCenter,
                )
                .unwrap()
            }
            Self::Rosenbrock => {
                let bounds = BoxBounds::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
                let lip = LipschitzData::new(
                    LipschitzInput {
                        m_phi: vec![vec![1500.0, 500.0], vec![500.0, 300.0]],
                        ..Default::default()
                    },
                    2,
                    0,
                    0,
                )
                .unwrap();
                ProblemSpec::new(
                    self.name(),
                    bounds,
                    0,
                    vec![],
                    lip,
                    DecisionVector::new(vec![0.0, 0.0]).unwrap(),
                    TargetRule::Fixed(DecisionVector::new(vec![1.0, 1.0]).unwrap()),
                )
                .unwrap()
            }
        }
    }
}

impl AnalyticPlant for BuiltinPlant {
    fn evaluate(&self, u: &[f64]) -> Measurement {
        let (x, y) = (u[0], u[1]);
        match self {
            Self::ConstrainedQuadratic => Measurement {
                phi: (x - 0.5).powi(2) + (y - 0.4).powi(2),
                g_p: vec![
                    -6.0 * x * x - 3.5 * x + y - 0.6,
                    2.0 * x * x + 0.5 * x + y - 0.75,
                ],
                grad_phi: vec![2.0 * (x - 0.5), 2.0 * (y - 0.4)],
                grad_g_p: vec![vec![-12.0 * x - 3.5, 1.0], vec![4.0 * x + 0.5, 1.0]],
            },
            Self::Rosenbrock => {
                let w = y - x * x;
                Measurement {
                    phi: (1.0 - x).powi(2) + 100.0 * w * w,
                    g_p: vec![],
                    grad_phi: vec![-2.0 * (1.0 - x) - 400.0 * x * w, 200.0 * w],
                    grad_g_p: vec![],
                }
            }
        }
    }

    fn hessian_phi(&self, u: &[f64]) -> Vec<Vec<f64>> {
        let (x, y) = (u[0], u[1]);
        match self {
            Self::ConstrainedQuadratic => vec![vec![2.0, 0.0], vec![0.0, 2.0]],
            Self::Rosenbrock => vec![
                vec![2.0 - 400.0 * y + 1200.0 * x * x, -400.0 * x],
                vec![-400.0 * x, 200.0],
            ],
        }
    }

    fn hessians_g_p(&self, _u: &[f64]) -> Vec<Vec<Vec<f64>>> {
        match self {
            Self::ConstrainedQuadratic => vec![
                vec![vec![-12.0, 0.0], vec![0.0, 0.0]],
                vec![vec![4.0, 0.0], vec![0.0, 0.0]],
            ],
            Self::Rosenbrock => vec![],
        }
    }
}

/// Look up a built-in plant by name and return its problem and plant.
pub fn builtin(name: &str) -> Result<(ProblemSpec, BuiltinPlant)> {
    let plant: BuiltinPlant = name.parse()?;
    Ok((plant.spec(), plant))
}

/// Every constraint value (experimental then numerical) at `u`.
fn constraint_values(spec: &ProblemSpec, plant: &dyn AnalyticPlant, u: &[f64]) -> Vec<f64> {
    let m = plant.evaluate(u);
    let mut out = m.g_p;
    out.extend(spec.numerical_constraints().iter().map(|c| c.value(u)));
    out
}

fn constraint_gradients(
    spec: &ProblemSpec,
    plant: &dyn AnalyticPlant,
    u: &[f64],
) -> Vec<Vec<f64>> {
    let m = plant.evaluate(u);
    let mut out = m.grad_g_p;
    out.extend(spec.numerical_constraints().iter().map(|c| c.gradient(u)));
    out
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (hi - lo).abs() <= 1e-13 {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Root of `f` on `[lo, hi]` nearest to `near`, located by scanning for a
/// sign change and refining by bisection.
fn nearest_root(lo: f64, hi: f64, near: f64, f: impl Fn(f64) -> f64) -> Option<f64> {
    const SAMPLES: usize = 400;
    let xs: Vec<f64> = (0..=SAMPLES)
        .map(|i| lo + (hi - lo) * i as f64 / SAMPLES as f64)
        .collect();
    let fs: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let mut best: Option<(f64, f64)> = None;
    for i in 0..SAMPLES {
        if fs[i] == 0.0 || (fs[i] > 0.0) != (fs[i + 1] > 0.0) {
            let mid = 0.5 * (xs[i] + xs[i + 1]);
            let d = (mid - near).abs();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((if fs[i] == 0.0 { xs[i] } else { bisect(xs[i], xs[i + 1], &f) }, d));
            }
        }
    }
    best.map(|(x, _)| x)
}

/// Reference local optimum of a two-variable analytic problem.
///
/// A brute-force argmin over the feasible grid (step `resolution`) is
/// polished by substituting the near-active constraint or bound into the
/// cost and root-finding the reduced stationarity condition by bisection.
pub fn derived_optimum(
    spec: &ProblemSpec,
    plant: &dyn AnalyticPlant,
    resolution: f64,
) -> Result<DecisionVector> {
    if spec.n_u() != 2 {
        return Err(Error::InvalidArgument(
            "derived_optimum handles two decision variables".into(),
        ));
    }
    if !(resolution > 0.0) {
        return Err(Error::InvalidArgument("resolution must be positive".into()));
    }
    let b = spec.bounds();
    let (lo, hi) = (b.lower(), b.upper());
    let steps: Vec<usize> = (0..2)
        .map(|i| ((hi[i] - lo[i]) / resolution).round().max(1.0) as usize)
        .collect();
    let coord = |i: usize, k: usize| {
        if k == steps[i] {
            hi[i]
        } else {
            lo[i] + (hi[i] - lo[i]) * k as f64 / steps[i] as f64
        }
    };
    let mut best: Option<(Vec<f64>, f64)> = None;
    for a in 0..=steps[0] {
        for c in 0..=steps[1] {
            let u = [coord(0, a), coord(1, c)];
            if constraint_values(spec, plant, &u).iter().any(|&g| g > 0.0) {
                continue;
            }
            let phi = plant.evaluate(&u).phi;
            if best.as_ref().is_none_or(|(_, bp)| phi < *bp) {
                best = Some((u.to_vec(), phi));
            }
        }
    }
    let (grid, _) = best.ok_or_else(|| Error::InvalidArgument("no feasible grid point".into()))?;

    let h = resolution;
    let at_lower: Vec<bool> = (0..2).map(|i| (grid[i] - lo[i]).abs() <= 0.5 * h).collect();
    let at_upper: Vec<bool> = (0..2).map(|i| (hi[i] - grid[i]).abs() <= 0.5 * h).collect();
    let bound_active: Vec<bool> = (0..2).map(|i| at_lower[i] || at_upper[i]).collect();
    let values = constraint_values(spec, plant, &grid);
    let grads = constraint_gradients(spec, plant, &grid);
    let near: Vec<usize> = (0..values.len())
        .filter(|&c| values[c] >= -2.0 * h * grads[c].iter().map(|g| g.abs()).sum::<f64>())
        .collect();

    let n_bounds = bound_active.iter().filter(|&&a| a).count();
    let window = |i: usize, center: f64| {
        (
            (center - 25.0 * h).max(lo[i]),
            (center + 25.0 * h).min(hi[i]),
        )
    };
    let cval = |c: usize, u: &[f64]| constraint_values(spec, plant, u)[c];
    let cgrad = |c: usize, u: &[f64]| constraint_gradients(spec, plant, u)[c].clone();

    let polished: Option<Vec<f64>> = match (n_bounds, near.as_slice()) {
        (2, _) => Some(
            (0..2)
                .map(|i| if at_lower[i] { lo[i] } else { hi[i] })
                .collect(),
        ),
        (1, []) => {
            let fixed = if bound_active[0] { 0 } else { 1 };
            let free = 1 - fixed;
            let fixed_val = if at_lower[fixed] { lo[fixed] } else { hi[fixed] };
            let (a, z) = window(free, grid[free]);
            let point = |t: f64| {
                let mut u = [0.0; 2];
                u[fixed] = fixed_val;
                u[free] = t;
                u
            };
            nearest_root(a, z, grid[free], |t| plant.evaluate(&point(t)).grad_phi[free])
                .map(|t| point(t).to_vec())
        }
        (1, [c, ..]) => {
            let fixed = if bound_active[0] { 0 } else { 1 };
            let free = 1 - fixed;
            let fixed_val = if at_lower[fixed] { lo[fixed] } else { hi[fixed] };
            let (a, z) = window(free, grid[free]);
            let point = |t: f64| {
                let mut u = [0.0; 2];
                u[fixed] = fixed_val;
                u[free] = t;
                u
            };
            nearest_root(a, z, grid[free], |t| cval(*c, &point(t))).map(|t| point(t).to_vec())
        }
        (0, [c]) => {
            // Solve the constraint for the coordinate it depends on most and
            // follow the boundary curve in the other one.
            let g0 = cgrad(*c, &grid);
            let solved = if g0[1].abs() >= g0[0].abs() { 1 } else { 0 };
            let free = 1 - solved;
            let (sa, sz) = window(solved, grid[solved]);
            let lift = |t: f64| -> Option<[f64; 2]> {
                let mut u = [0.0; 2];
                u[free] = t;
                let base = u;
                let r = nearest_root(sa, sz, grid[solved], |s| {
                    let mut v = base;
                    v[solved] = s;
                    cval(*c, &v)
                })?;
                u[solved] = r;
                Some(u)
            };
            let (fa, fz) = window(free, grid[free]);
            let reduced = |t: f64| match lift(t) {
                Some(u) => {
                    let gphi = plant.evaluate(&u).grad_phi;
                    let gc = cgrad(*c, &u);
                    gphi[free] * gc[solved] - gphi[solved] * gc[free]
                }
                None => f64::NAN,
            };
            nearest_root(fa, fz, grid[free], reduced)
                .and_then(lift)
                .map(|u| u.to_vec())
        }
        (0, []) => {
            let mut u = grid.clone();
            for _ in 0..50 {
                let g = plant.evaluate(&u).grad_phi;
                let hm = plant.hessian_phi(&u);
                let flat = [hm[0][0], hm[0][1], hm[1][0], hm[1][1]];
                let Some(step) = linalg::solve(&flat, &g) else {
                    break;
                };
                u = linalg::sub(&u, &step);
                if linalg::norm(&step) < 1e-15 {
                    break;
                }
            }
            (b.contains(&u) && linalg::distance(&u, &grid) <= 2.0 * h).then_some(u)
        }
        _ => None,
    };
    let chosen = polished
        .filter(|u| linalg::distance(u, &grid) <= 3.0 * h && u.iter().all(|v| v.is_finite()))
        .unwrap_or(grid);
    DecisionVector::new(chosen)
}

/// Numbers behind the cost and path plots of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    /// Experiments actually run (the initial point plus every step).
    pub experiments: usize,
    pub stepped: usize,
    pub final_cost: f64,
    pub initial_cost: f64,
    /// Largest experimental-constraint value seen along the chain.
    pub max_g_p: Option<f64>,
    pub max_g: Option<f64>,
    pub stop: Option<StopReason>,
    pub final_level: Option<u32>,
    pub terminal: Option<DecisionVector>,
    pub cost_series: Vec<f64>,
    pub distance_series: Option<Vec<f64>>,
    pub path: Vec<DecisionVector>,
}

pub fn summarize(traj: &Trajectory, reference: Option<&[f64]>) -> Result<Summary> {
    let first = traj
        .records
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty trajectory".into()))?;
    let experiments: Vec<_> = traj
        .records
        .iter()
        .filter(|r| matches!(r.status, StepStatus::Initial | StepStatus::Stepped))
        .collect();
    let max_of = |vals: Vec<f64>| vals.into_iter().reduce(f64::max);
    Ok(Summary {
        experiments: experiments.len(),
        stepped: experiments
            .iter()
            .filter(|r| r.status == StepStatus::Stepped)
            .count(),
        final_cost: traj.records.last().unwrap().measurement.phi,
        initial_cost: first.measurement.phi,
        max_g_p: max_of(traj.records.iter().flat_map(|r| r.measurement.g_p.clone()).collect()),
        max_g: max_of(traj.records.iter().flat_map(|r| r.g_values.clone()).collect()),
        stop: traj.stop,
        final_level: traj.records.last().map(|r| r.params_level),
        terminal: traj.terminal.clone(),
        cost_series: experiments.iter().map(|r| r.measurement.phi).collect(),
        distance_series: reference
            .map(|x| experiments.iter().map(|r| linalg::distance(&r.u, x)).collect()),
        path: experiments.iter().map(|r| r.u.clone()).collect(),
    })
}
