//! The project-and-filter iteration.
//!
//! Every step starts from a feasible experiment `u_k`:
//!
//! 1. pick projection parameters: start at the ceilings and halve them all
//!    until the local halfspace system becomes feasible, or give up and
//!    declare `u_k` a fixed point;
//! 2. project the target onto the halfspaces (descent for the cost, descent
//!    into the constraints that are within `eps` of activity) and the box;
//! 3. choose the largest filter gain `K` allowed by the Lipschitz bounds and
//!    run the next experiment at `u_k + K (u_bar - u_k)`.

use serde::{Deserialize, Serialize};

use crate::bounds::{linear_growth, quadratic_growth};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{
    evaluate_numerical, validate_initial_point, AnalyticPlant, DecisionVector, Measurement,
    PlantOracle, ProblemSpec, TargetRule,
};
use crate::qp::{lp_feasible, qp_project, Feasibility, HalfspaceSet};

/// Largest values of the projection parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ceilings {
    #[serde(default)]
    pub eps_p: Vec<f64>,
    #[serde(default)]
    pub eps: Vec<f64>,
    #[serde(default)]
    pub delta_gp: Vec<f64>,
    #[serde(default)]
    pub delta_g: Vec<f64>,
    pub delta_phi: f64,
}

impl Ceilings {
    pub fn check(&self, n_gp: usize, n_g: usize) -> Result<()> {
        let lens = [
            ("eps_p", self.eps_p.len(), n_gp),
            ("eps", self.eps.len(), n_g),
            ("delta_gp", self.delta_gp.len(), n_gp),
            ("delta_g", self.delta_g.len(), n_g),
        ];
        for (name, got, want) in lens {
            if got != want {
                return Err(Error::Dimension(format!(
                    "ceiling {name} has {got} entries, expected {want}"
                )));
            }
        }
        let all = self
            .eps_p
            .iter()
            .chain(&self.eps)
            .chain(&self.delta_gp)
            .chain(&self.delta_g)
            .chain([&self.delta_phi]);
        for v in all {
            if !(v.is_finite() && *v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "projection ceilings must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Ceilings sized to the function ranges over the box: `-min g` for each
    /// constraint and `phi(u0) - min phi` for the cost, with the minima
    /// taken over a grid of step `resolution` per axis.
    pub fn from_grid_minima(
        spec: &ProblemSpec,
        plant: &dyn AnalyticPlant,
        resolution: f64,
    ) -> Result<Self> {
        if !(resolution > 0.0) {
            return Err(Error::InvalidArgument("resolution must be positive".into()));
        }
        let b = spec.bounds();
        let steps: Vec<usize> = b
            .ranges()
            .iter()
            .map(|r| (r / resolution).round().max(1.0) as usize)
            .collect();
        let total = steps
            .iter()
            .try_fold(1usize, |acc, s| acc.checked_mul(s + 1))
            .filter(|t| *t <= 4_000_000)
            .ok_or_else(|| Error::InvalidArgument("ceiling grid too large".into()))?;
        let m0 = plant.evaluate(spec.u0());
        let (g0, _) = evaluate_numerical(spec, spec.u0())?;
        let mut min_gp = m0.g_p.clone();
        let mut min_g = g0;
        let mut min_phi = m0.phi;
        let mut u = vec![0.0; spec.n_u()];
        for idx in 0..total {
            let mut rest = idx;
            for (i, s) in steps.iter().enumerate() {
                let k = rest % (s + 1);
                rest /= s + 1;
                u[i] = b.lower()[i] + b.ranges()[i] * k as f64 / *s as f64;
            }
            let m = plant.evaluate(&u);
            for (lo, v) in min_gp.iter_mut().zip(&m.g_p) {
                *lo = lo.min(*v);
            }
            for (lo, c) in min_g.iter_mut().zip(spec.numerical_constraints()) {
                *lo = lo.min(c.value(&u));
            }
            min_phi = min_phi.min(m.phi);
        }
        let neg: Vec<f64> = min_gp.iter().map(|v| -v).collect();
        let neg_g: Vec<f64> = min_g.iter().map(|v| -v).collect();
        let ceilings = Ceilings {
            eps_p: neg.clone(),
            eps: neg_g.clone(),
            delta_gp: neg,
            delta_g: neg_g,
            delta_phi: m0.phi - min_phi,
        };
        ceilings.check(spec.n_gp(), spec.n_g())?;
        Ok(ceilings)
    }
}

/// Projection parameters at one level: every ceiling divided by `2^level`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectionParams {
    pub eps_p: Vec<f64>,
    pub eps: Vec<f64>,
    pub delta_gp: Vec<f64>,
    pub delta_g: Vec<f64>,
    pub delta_phi: f64,
    pub level: u32,
}

impl ProjectionParams {
    pub fn at_level(ceilings: &Ceilings, level: u32) -> Self {
        let f = 0.5_f64.powi(level as i32);
        let scale = |v: &[f64]| v.iter().map(|x| x * f).collect::<Vec<_>>();
        Self {
            eps_p: scale(&ceilings.eps_p),
            eps: scale(&ceilings.eps),
            delta_gp: scale(&ceilings.delta_gp),
            delta_g: scale(&ceilings.delta_g),
            delta_phi: ceilings.delta_phi * f,
            level,
        }
    }
}

/// How projection parameters are chosen before each experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adaptation {
    /// Reset to the ceilings and halve until the projection is feasible;
    /// terminate once `delta_phi` has dropped below `ceiling / 2^max_halvings`.
    Adaptive { max_halvings: u32 },
    /// Always use one level; an infeasible projection ends the run.
    Fixed { level: u32 },
}

impl Default for Adaptation {
    fn default() -> Self {
        Self::Adaptive { max_halvings: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Maximum number of experiments after the initial one.
    pub budget: usize,
    #[serde(default)]
    pub adaptation: Adaptation,
    pub ceilings: Ceilings,
    /// Overrides the problem's target rule.
    #[serde(default)]
    pub target: Option<TargetRule>,
}

impl RunConfig {
    pub fn new(budget: usize, ceilings: Ceilings) -> Self {
        Self {
            budget,
            adaptation: Adaptation::default(),
            ceilings,
            target: None,
        }
    }

    pub fn with_adaptation(mut self, adaptation: Adaptation) -> Self {
        self.adaptation = adaptation;
        self
    }

    pub fn with_target(mut self, target: TargetRule) -> Self {
        self.target = Some(target);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    /// The initial experiment.
    Initial,
    Stepped,
    /// A fixed-level projection was infeasible; the run stops here.
    ProjectionInfeasible,
    /// Every level up to the halving limit was infeasible; `u` is a fixed
    /// point.
    Terminated,
}

impl StepStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Initial => "initial",
            Self::Stepped => "stepped",
            Self::ProjectionInfeasible => "projection_infeasible",
            Self::Terminated => "terminated",
        }
    }

    pub fn is_final(self) -> bool {
        matches!(self, Self::ProjectionInfeasible | Self::Terminated)
    }
}

/// One entry of the experiment chain. The step fields (`target`,
/// `projected_target`, `gain`, `params_level`) describe the step that
/// produced `u`; final records repeat the last experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateRecord {
    pub k: usize,
    pub u: DecisionVector,
    pub measurement: Measurement,
    pub g_values: Vec<f64>,
    pub target: Option<DecisionVector>,
    pub projected_target: Option<DecisionVector>,
    #[serde(rename = "K")]
    pub gain: Option<f64>,
    pub params_level: u32,
    pub status: StepStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Terminated,
    BudgetExhausted,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub records: Vec<IterateRecord>,
    /// The fixed point when the run terminated, or the last experiment when
    /// it ran out of budget.
    pub terminal: Option<DecisionVector>,
    pub stop: Option<StopReason>,
}

impl Trajectory {
    pub fn last(&self) -> Option<&IterateRecord> {
        self.records.last()
    }

    /// Number of experiments run after the initial one.
    pub fn stepped(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.status == StepStatus::Stepped)
            .count()
    }

    pub fn terminated(&self) -> bool {
        self.stop == Some(StopReason::Terminated)
    }
}

/// A run that stopped on an error, with everything recorded before it.
#[derive(Debug, thiserror::Error)]
#[error("run aborted after {} records: {error}", trajectory.records.len())]
pub struct RunFailure {
    pub trajectory: Trajectory,
    #[source]
    pub error: Error,
}

/// Indices of the experimental and numerical constraints within `eps` of
/// activity (boundary inclusive).
pub fn epsilon_active(
    g_p: &[f64],
    g: &[f64],
    params: &ProjectionParams,
) -> (Vec<usize>, Vec<usize>) {
    let pick = |vals: &[f64], eps: &[f64]| {
        vals.iter()
            .zip(eps)
            .enumerate()
            .filter(|(_, (v, e))| **v >= -**e)
            .map(|(j, _)| j)
            .collect::<Vec<_>>()
    };
    (pick(g_p, &params.eps_p), pick(g, &params.eps))
}

/// Halfspace system of the projection at `state` with `params`.
pub fn assemble_projection(
    spec: &ProblemSpec,
    state: &IterateRecord,
    params: &ProjectionParams,
) -> Result<HalfspaceSet> {
    let m = &state.measurement;
    let (active_p, active_g) = epsilon_active(&m.g_p, &state.g_values, params);
    let (_, grads_g) = evaluate_numerical(spec, &state.u)?;
    let mut normals = Vec::new();
    let mut offsets = Vec::new();
    for &j in &active_p {
        normals.push(m.grad_g_p[j].clone());
        offsets.push(-params.delta_gp[j]);
    }
    for &j in &active_g {
        normals.push(grads_g[j].clone());
        offsets.push(-params.delta_g[j]);
    }
    normals.push(m.grad_phi.clone());
    offsets.push(-params.delta_phi);
    HalfspaceSet::new(normals, offsets, state.u.clone(), spec.bounds().clone())
}

/// Outcome of the parameter search before one experiment.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq)]
pub enum AdaptOutcome {
    Feasible {
        params: ProjectionParams,
        halfspaces: HalfspaceSet,
        witness: DecisionVector,
    },
    /// No level up to the limit admits a projection; `level` is the last
    /// level tested.
    Terminate { level: u32 },
}

fn levels(adaptation: Adaptation) -> std::ops::RangeInclusive<u32> {
    match adaptation {
        // Halving past max_halvings would drop delta_phi below its floor.
        Adaptation::Adaptive { max_halvings } => 0..=max_halvings,
        Adaptation::Fixed { level } => level..=level,
    }
}

pub fn adapt_parameters(
    spec: &ProblemSpec,
    state: &IterateRecord,
    ceilings: &Ceilings,
    adaptation: Adaptation,
) -> Result<AdaptOutcome> {
    let range = levels(adaptation);
    let last = *range.end();
    if state.measurement.grad_phi.iter().all(|v| *v == 0.0) {
        // No descent halfspace exists at a stationary point.
        return Ok(AdaptOutcome::Terminate { level: *range.start() });
    }
    for level in range {
        let params = ProjectionParams::at_level(ceilings, level);
        let halfspaces = assemble_projection(spec, state, &params)?;
        match lp_feasible(&halfspaces)? {
            Feasibility::Feasible(witness) => {
                log::debug!("k={} feasible at level {level}", state.k);
                return Ok(AdaptOutcome::Feasible {
                    params,
                    halfspaces,
                    witness,
                });
            }
            Feasibility::Infeasible => {
                log::trace!("k={} infeasible at level {level}", state.k);
            }
        }
    }
    Ok(AdaptOutcome::Terminate { level: last })
}

/// Filter gain and the bounds that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FilterGain {
    pub gain: f64,
    /// Smallest closed-form cap from the experimental constraints.
    pub constraint_cap: f64,
    /// Closed-form cap from the cost, infinite when the quadratic term is 0.
    pub cost_cap: f64,
    /// Guaranteed-safe gain for the numerical constraints.
    pub numerical_floor: f64,
    /// Whether the numerical constraints forced a bisection.
    pub bisected: bool,
}

fn numerical_ok(spec: &ProblemSpec, u_k: &[f64], delta: &[f64], k: f64) -> bool {
    let mut u = u_k.to_vec();
    linalg::axpy(k, delta, &mut u);
    spec.numerical_constraints().iter().all(|c| c.value(&u) <= 0.0)
}

/// Largest gain in `(0, 1]` meeting the experimental-constraint and cost
/// bounds in closed form and the numerical constraints by direct evaluation.
pub fn filter_gain_search(
    spec: &ProblemSpec,
    state: &IterateRecord,
    u_bar: &[f64],
) -> Result<FilterGain> {
    let lip = spec.lipschitz();
    let u_k = state.u.as_slice();
    let delta = linalg::sub(u_bar, u_k);
    if delta.iter().all(|d| *d == 0.0) {
        return Err(Error::Numerical("projected target equals the current point"));
    }
    let m = &state.measurement;

    let mut constraint_cap = f64::INFINITY;
    for (j, g) in m.g_p.iter().enumerate() {
        let lin = linear_growth(&lip.kappa_p()[j], u_k, u_bar);
        constraint_cap = constraint_cap.min(-g / lin);
    }
    let slope = linalg::dot(&m.grad_phi, &delta);
    let q = quadratic_growth(lip.m_phi(), u_k, u_bar);
    let cost_cap = if q > 0.0 { -slope / q } else { f64::INFINITY };

    // Each numerical constraint is safe up to the larger of its linear-growth
    // and descent-curvature caps.
    let (_, grads_g) = evaluate_numerical(spec, u_k)?;
    let mut numerical_floor = 1.0_f64;
    for (j, g) in state.g_values.iter().enumerate() {
        let lin_cap = -g / linear_growth(&lip.kappa()[j], u_k, u_bar);
        let dir = linalg::dot(&grads_g[j], &delta);
        let quad = quadratic_growth(&lip.m_g()[j], u_k, u_bar);
        let quad_cap = if dir < 0.0 { -dir / quad } else { 0.0 };
        numerical_floor = numerical_floor.min(lin_cap.max(quad_cap));
    }

    let candidate = 1.0_f64.min(constraint_cap).min(cost_cap);
    let (gain, bisected) = if numerical_ok(spec, u_k, &delta, candidate) {
        (candidate, false)
    } else {
        let mut lo = numerical_floor.min(candidate);
        if !numerical_ok(spec, u_k, &delta, lo) {
            return Err(Error::LipschitzViolated(format!(
                "numerical constraint violated at its guaranteed gain {lo:e} (k = {})",
                state.k
            )));
        }
        let mut hi = candidate;
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            if numerical_ok(spec, u_k, &delta, mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (lo, true)
    };
    if !(gain > 0.0) {
        return Err(Error::Numerical("filter gain collapsed to zero"));
    }
    Ok(FilterGain {
        gain,
        constraint_cap,
        cost_cap,
        numerical_floor,
        bisected,
    })
}

/// `u_k + K (u_bar - u_k)`, clamped into `bounds` against rounding.
pub fn apply_filter(
    u_k: &[f64],
    u_bar: &[f64],
    gain: f64,
    bounds: &crate::model::BoxBounds,
) -> Vec<f64> {
    let u: Vec<f64> = u_k
        .iter()
        .zip(u_bar)
        .map(|(a, b)| a + gain * (b - a))
        .collect();
    bounds.clamp(&u)
}

fn check_feasible(spec: &ProblemSpec, rec: &IterateRecord) -> Result<()> {
    let m = &rec.measurement;
    if let Some((j, v)) = m.g_p.iter().enumerate().find(|(_, v)| !(**v < 0.0)) {
        return Err(Error::LipschitzViolated(format!(
            "g_p[{j}] = {v:e} at experiment {}",
            rec.k
        )));
    }
    if let Some((j, v)) = rec.g_values.iter().enumerate().find(|(_, v)| !(**v <= 0.0)) {
        return Err(Error::LipschitzViolated(format!(
            "g[{j}] = {v:e} at experiment {}",
            rec.k
        )));
    }
    if !spec.bounds().contains(&rec.u) {
        return Err(Error::LipschitzViolated(format!(
            "experiment {} left the box",
            rec.k
        )));
    }
    Ok(())
}

fn measure<O: PlantOracle>(
    spec: &ProblemSpec,
    oracle: &mut O,
    k: usize,
    u: &[f64],
) -> Result<(Measurement, Vec<f64>)> {
    let m = oracle.measure(k, u)?;
    m.validate(spec.n_u(), spec.n_gp())
        .map_err(|e| Error::Oracle {
            k,
            message: e.to_string(),
        })?;
    let (g, _) = evaluate_numerical(spec, u)?;
    Ok((m, g))
}

/// Measure `u0`, check it and wrap it as the first record.
pub fn initial_record<O: PlantOracle>(
    spec: &ProblemSpec,
    oracle: &mut O,
) -> Result<IterateRecord> {
    let (measurement, g_values) = measure(spec, oracle, 0, spec.u0())?;
    validate_initial_point(spec, &measurement)?.into_result()?;
    Ok(IterateRecord {
        k: 0,
        u: spec.u0().clone(),
        measurement,
        g_values,
        target: None,
        projected_target: None,
        gain: None,
        params_level: 0,
        status: StepStatus::Initial,
    })
}

/// One project-and-filter step from `state`. Final states are fixed points
/// and are returned unchanged.
pub fn step<O: PlantOracle>(
    spec: &ProblemSpec,
    oracle: &mut O,
    state: &IterateRecord,
    config: &RunConfig,
) -> Result<IterateRecord> {
    if state.status.is_final() {
        return Ok(state.clone());
    }
    let rule = config.target.as_ref().unwrap_or(spec.target());
    let target = DecisionVector::new(rule.target(state.k, spec.bounds()))?;
    let (params, halfspaces) =
        match adapt_parameters(spec, state, &config.ceilings, config.adaptation)? {
            AdaptOutcome::Feasible {
                params, halfspaces, ..
            } => (params, halfspaces),
            AdaptOutcome::Terminate { level } => {
                let status = match config.adaptation {
                    Adaptation::Adaptive { .. } => StepStatus::Terminated,
                    Adaptation::Fixed { .. } => StepStatus::ProjectionInfeasible,
                };
                return Ok(IterateRecord {
                    k: state.k + 1,
                    target: Some(target),
                    projected_target: None,
                    gain: None,
                    params_level: level,
                    status,
                    ..state.clone()
                });
            }
        };
    let projection = qp_project(&target, &halfspaces)?;
    let u_bar = projection.point;
    let fg = filter_gain_search(spec, state, &u_bar)?;
    let u_next = apply_filter(&state.u, &u_bar, fg.gain, spec.bounds());
    let k = state.k + 1;
    let (measurement, g_values) = measure(spec, oracle, k, &u_next)?;
    let rec = IterateRecord {
        k,
        u: DecisionVector::new(u_next)?,
        measurement,
        g_values,
        target: Some(target),
        projected_target: Some(u_bar),
        gain: Some(fg.gain),
        params_level: params.level,
        status: StepStatus::Stepped,
    };
    check_feasible(spec, &rec)?;
    if !(rec.measurement.phi < state.measurement.phi) {
        return Err(Error::LipschitzViolated(format!(
            "cost rose from {:e} to {:e} at experiment {k}",
            state.measurement.phi, rec.measurement.phi
        )));
    }
    log::debug!(
        "k={k} level={} K={:.3e} phi={:.6e}",
        params.level,
        fg.gain,
        rec.measurement.phi
    );
    Ok(rec)
}

/// Run the experiment chain until a fixed point or the budget is reached.
pub fn run<O: PlantOracle>(
    spec: &ProblemSpec,
    mut oracle: O,
    config: &RunConfig,
) -> std::result::Result<Trajectory, RunFailure> {
    let mut traj = Trajectory::default();
    let fail = |trajectory: Trajectory, error: Error| RunFailure { trajectory, error };
    if let Err(e) = config.ceilings.check(spec.n_gp(), spec.n_g()) {
        return Err(fail(traj, e));
    }
    match initial_record(spec, &mut oracle) {
        Ok(rec) => traj.records.push(rec),
        Err(e) => return Err(fail(traj, e)),
    }
    let mut steps = 0;
    loop {
        let state = traj.records.last().unwrap();
        if steps >= config.budget {
            traj.terminal = Some(state.u.clone());
            traj.stop = Some(StopReason::BudgetExhausted);
            return Ok(traj);
        }
        match step(spec, &mut oracle, state, config) {
            Ok(rec) => {
                let done = rec.status.is_final();
                let u = rec.u.clone();
                traj.records.push(rec);
                if done {
                    traj.terminal = Some(u);
                    traj.stop = Some(StopReason::Terminated);
                    return Ok(traj);
                }
                steps += 1;
            }
            Err(e) => return Err(fail(traj, e)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::{builtin, BuiltinPlant};
    use crate::bounds::{filter_gain_floor, worst_case_growth};
    use crate::model::Simulated;
    use approx::assert_relative_eq;

    fn record_at(spec: &ProblemSpec, plant: BuiltinPlant, u: &[f64]) -> IterateRecord {
        let (g_values, _) = evaluate_numerical(spec, u).unwrap();
        IterateRecord {
            k: 0,
            u: DecisionVector::new(u.to_vec()).unwrap(),
            measurement: plant.evaluate(u),
            g_values,
            target: None,
            projected_target: None,
            gain: None,
            params_level: 0,
            status: StepStatus::Initial,
        }
    }

    fn params(eps_p: Vec<f64>, eps: Vec<f64>) -> ProjectionParams {
        let n_p = eps_p.len();
        let n_g = eps.len();
        ProjectionParams::at_level(
            &Ceilings {
                eps_p,
                eps,
                delta_gp: vec![1.0; n_p],
                delta_g: vec![1.0; n_g],
                delta_phi: 1.0,
            },
            0,
        )
    }

    #[test]
    fn epsilon_activity_examples() {
        let g_p = [-0.19, -0.52];
        assert_eq!(
            epsilon_active(&g_p, &[], &params(vec![4.0, 4.0], vec![])),
            (vec![0, 1], vec![])
        );
        assert_eq!(
            epsilon_active(&g_p, &[], &params(vec![0.1, 0.1], vec![])),
            (vec![], vec![])
        );
        assert_eq!(
            epsilon_active(&[], &[-0.05], &params(vec![], vec![0.05])),
            (vec![], vec![0])
        );
    }

    #[test]
    fn level_scaling_is_uniform() {
        let c = BuiltinPlant::ConstrainedQuadratic.ceilings();
        let p = ProjectionParams::at_level(&c, 3);
        assert_eq!(p.eps_p, vec![0.5, 0.25]);
        assert_eq!(p.delta_g, vec![0.125]);
        assert_eq!(p.delta_phi, 0.125);
    }

    #[test]
    fn projection_rows() {
        let (rosen, plant) = builtin("rosenbrock").unwrap();
        let rec = record_at(&rosen, plant, &[0.0, 0.0]);
        let p = ProjectionParams::at_level(&plant.ceilings(), 0);
        let hs = assemble_projection(&rosen, &rec, &p).unwrap();
        assert_eq!(hs.normals(), &[vec![-2.0, 0.0]]);
        assert_eq!(hs.offsets(), &[-1.0]);

        let (spec, plant) = builtin("constrained_quadratic").unwrap();
        let rec = record_at(&spec, plant, &[-0.45, 0.05]);
        let p = ProjectionParams::at_level(&plant.ceilings(), 0);
        let hs = assemble_projection(&spec, &rec, &p).unwrap();
        assert_eq!(hs.len(), 4);
        assert_eq!(hs.offsets(), &[-4.0, -2.0, -1.0, -1.0]);

        let far = params(vec![0.01, 0.01], vec![0.01]);
        let hs = assemble_projection(&spec, &rec, &far).unwrap();
        assert_eq!(hs.len(), 1);
    }

    #[test]
    fn zero_gradient_on_active_constraint_is_an_error() {
        let (spec, plant) = builtin("constrained_quadratic").unwrap();
        let mut rec = record_at(&spec, plant, &[-0.45, 0.05]);
        rec.measurement.grad_g_p[0] = vec![0.0, 0.0];
        let p = ProjectionParams::at_level(&plant.ceilings(), 0);
        assert!(matches!(
            assemble_projection(&spec, &rec, &p),
            Err(Error::ZeroRow(0))
        ));
    }

    #[test]
    fn filter_examples() {
        let b = crate::model::BoxBounds::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        assert_eq!(apply_filter(&[0.0, 0.0], &[0.4, 0.8], 0.0, &b), vec![0.0, 0.0]);
        assert_eq!(apply_filter(&[0.0, 0.0], &[0.4, 0.8], 1.0, &b), vec![0.4, 0.8]);
        let u = apply_filter(&[0.0, 0.0], &[0.4, 0.8], 0.25, &b);
        assert_relative_eq!(u[0], 0.1);
        assert_relative_eq!(u[1], 0.2);
    }

    #[test]
    fn constraint_cap_matches_hand_value() {
        let (spec, plant) = builtin("constrained_quadratic").unwrap();
        let mut rec = record_at(&spec, plant, &[-0.45, 0.05]);
        rec.measurement.g_p = vec![-0.19, -10.0];
        let fg = filter_gain_search(&spec, &rec, &[-0.35, 0.15]).unwrap();
        assert_relative_eq!(fg.constraint_cap, 0.19 / 1.2, epsilon = 1e-12);
        assert!(fg.gain <= fg.constraint_cap);
    }

    #[test]
    fn constraint_cap_is_the_bisection_boundary() {
        let (spec, plant) = builtin("constrained_quadratic").unwrap();
        let rec = record_at(&spec, plant, &[-0.45, 0.05]);
        let u_bar = [-0.1, 0.3];
        let fg = filter_gain_search(&spec, &rec, &u_bar).unwrap();
        let lip = spec.lipschitz();
        let violated = |k: f64| {
            (0..2).any(|j| {
                rec.measurement.g_p[j]
                    + k * linear_growth(&lip.kappa_p()[j], &rec.u, &u_bar)
                    > 0.0
            })
        };
        let (mut lo, mut hi) = (0.0, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if violated(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        assert!((fg.constraint_cap - lo).abs() <= 1e-10);
    }

    #[test]
    fn rosenbrock_first_gain_respects_cost_cap() {
        let (spec, plant) = builtin("rosenbrock").unwrap();
        let rec = record_at(&spec, plant, &[0.0, 0.0]);
        let p = ProjectionParams::at_level(&plant.ceilings(), 0);
        let hs = assemble_projection(&spec, &rec, &p).unwrap();
        let u_bar = qp_project(&[1.0, 1.0], &hs).unwrap().point;
        let fg = filter_gain_search(&spec, &rec, &u_bar).unwrap();
        let delta = linalg::sub(&u_bar, &rec.u);
        let q = 2.0 * quadratic_growth(spec.lipschitz().m_phi(), &rec.u, &u_bar);
        let slope = linalg::dot(&rec.measurement.grad_phi, &delta);
        assert!(slope <= -1.0 + 1e-12);
        assert!(fg.gain <= 2.0 * -slope / q + 1e-15);
        assert!(fg.gain >= 2.0 / 2800.0);
        let next = apply_filter(&rec.u, &u_bar, fg.gain, spec.bounds());
        assert!(spec.bounds().contains(&next));
    }

    #[test]
    fn first_step_on_constrained_quadratic_descends() {
        let (spec, plant) = builtin("constrained_quadratic").unwrap();
        let mut oracle = Simulated(plant);
        let rec = initial_record(&spec, &mut oracle).unwrap();
        assert_relative_eq!(rec.measurement.phi, 1.025, epsilon = 1e-12);
        let config = RunConfig::new(1, plant.ceilings());
        let next = step(&spec, &mut oracle, &rec, &config).unwrap();
        assert_eq!(next.status, StepStatus::Stepped);
        assert!(next.measurement.phi < 1.025);
        assert!(next.measurement.g_p.iter().all(|v| *v < 0.0));
        assert!(next.g_values.iter().all(|v| *v < 0.0));
        let k = next.gain.unwrap();
        assert!(k > 0.0 && k <= 1.0);
    }

    #[test]
    fn terminated_state_is_a_fixed_point() {
        let (spec, plant) = builtin("rosenbrock").unwrap();
        let mut oracle = Simulated(plant);
        let mut rec = initial_record(&spec, &mut oracle).unwrap();
        rec.status = StepStatus::Terminated;
        let config = RunConfig::new(1, plant.ceilings());
        assert_eq!(step(&spec, &mut oracle, &rec, &config).unwrap(), rec);
    }

    #[test]
    fn zero_budget_keeps_only_the_initial_record() {
        let (spec, plant) = builtin("constrained_quadratic").unwrap();
        let traj = run(&spec, Simulated(plant), &RunConfig::new(0, plant.ceilings())).unwrap();
        assert_eq!(traj.records.len(), 1);
        assert_eq!(traj.stop, Some(StopReason::BudgetExhausted));
    }

    #[test]
    fn invalid_start_is_refused() {
        let (spec, plant) = builtin("constrained_quadratic").unwrap();
        let spec = spec
            .with_u0(DecisionVector::new(vec![0.5, 0.5]).unwrap())
            .unwrap();
        let err = run(&spec, Simulated(plant), &RunConfig::new(5, plant.ceilings())).unwrap_err();
        assert!(err.trajectory.records.is_empty());
        assert!(matches!(err.error, Error::InitialPoint(ref v) if v == &["g_p[1] < 0"]));
    }

    #[test]
    fn adaptation_stops_at_the_first_feasible_level() {
        let (spec, plant) = builtin("constrained_quadratic").unwrap();
        let rec = record_at(&spec, plant, &[0.35, 0.32]);
        let ceilings = plant.ceilings();
        let outcome =
            adapt_parameters(&spec, &rec, &ceilings, Adaptation::Adaptive { max_halvings: 30 })
                .unwrap();
        let AdaptOutcome::Feasible { params, .. } = outcome else {
            panic!("expected a feasible level");
        };
        assert!(params.level > 0);
        for level in 0..params.level {
            let p = ProjectionParams::at_level(&ceilings, level);
            let hs = assemble_projection(&spec, &rec, &p).unwrap();
            assert!(!lp_feasible(&hs).unwrap().is_feasible());
        }
    }

    #[test]
    fn exhausted_levels_terminate() {
        let (spec, plant) = builtin("constrained_quadratic").unwrap();
        let rec = record_at(&spec, plant, &[0.35, 0.32]);
        let outcome = adapt_parameters(
            &spec,
            &rec,
            &plant.ceilings(),
            Adaptation::Adaptive { max_halvings: 0 },
        )
        .unwrap();
        assert_eq!(outcome, AdaptOutcome::Terminate { level: 0 });
    }

    #[test]
    fn short_run_respects_invariants_and_gain_floor() {
        let (spec, plant) = builtin("constrained_quadratic").unwrap();
        let ceilings = plant.ceilings();
        let traj = run(&spec, Simulated(plant), &RunConfig::new(40, ceilings.clone())).unwrap();
        let gb = worst_case_growth(spec.lipschitz(), spec.bounds());
        let g0 = traj.records[0].measurement.g_p.clone();
        for w in traj.records.windows(2) {
            let next = &w[1];
            if next.status != StepStatus::Stepped {
                continue;
            }
            assert!(next.measurement.phi < w[0].measurement.phi);
            let p = ProjectionParams::at_level(&ceilings, next.params_level);
            let floor = filter_gain_floor(&p, &gb, spec.lipschitz(), &g0).unwrap();
            assert!(next.gain.unwrap() >= floor);
            let u_bar = next.projected_target.as_ref().unwrap();
            let again = apply_filter(&w[0].u, u_bar, next.gain.unwrap(), spec.bounds());
            for (a, b) in again.iter().zip(next.u.iter()) {
                assert!((a - b).abs() <= 1e-15);
            }
        }
    }
}
