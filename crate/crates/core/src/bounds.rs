//! Lipschitz-bound arithmetic.
//!
//! Pointwise growth bounds limit how much a constraint can rise, or a cost
//! can exceed its linearization, between two points. Their worst cases over
//! the box feed three convergence diagnostics: a floor on the filter gain, a
//! floor on the distance of every iterate from the experimental constraints,
//! and an upper bound on the number of feasible projections.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::engine::{Ceilings, ProjectionParams};
use crate::error::{Error, Result};
use crate::model::{AnalyticPlant, BoxBounds, LipschitzData, ProblemSpec, ValidationReport};

/// Worst-case growth over the whole box.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthBounds {
    /// `sum_i kappa_p[j][i] * range_i` per experimental constraint.
    #[serde(rename = "L_p")]
    pub l_p: Vec<f64>,
    #[serde(rename = "L")]
    pub l: Vec<f64>,
    /// `sum_i1 sum_i2 M[i1][i2] * range_i1 * range_i2`, no factor one half.
    #[serde(rename = "Q_phi")]
    pub q_phi: f64,
    #[serde(rename = "Q_g")]
    pub q_g: Vec<f64>,
    #[serde(rename = "Q_gp")]
    pub q_gp: Vec<f64>,
}

/// `sum_i kappa_i |to_i - from_i|`.
pub fn linear_growth(kappa_row: &[f64], from: &[f64], to: &[f64]) -> f64 {
    kappa_row
        .iter()
        .zip(from.iter().zip(to))
        .map(|(k, (a, b))| k * (b - a).abs())
        .sum()
}

/// `1/2 sum_i1 sum_i2 M[i1][i2] |d_i1 d_i2|` with `d = to - from`.
pub fn quadratic_growth(m: &[Vec<f64>], from: &[f64], to: &[f64]) -> f64 {
    let d: Vec<f64> = to.iter().zip(from).map(|(b, a)| (b - a).abs()).collect();
    0.5 * quadratic_form(m, &d)
}

fn quadratic_form(m: &[Vec<f64>], d: &[f64]) -> f64 {
    m.iter()
        .zip(d)
        .map(|(row, di)| di * row.iter().zip(d).map(|(mij, dj)| mij * dj).sum::<f64>())
        .sum()
}

pub fn worst_case_growth(lip: &LipschitzData, bounds: &BoxBounds) -> GrowthBounds {
    let r = bounds.ranges();
    let lin = |rows: &[Vec<f64>]| -> Vec<f64> {
        rows.iter()
            .map(|k| k.iter().zip(&r).map(|(a, b)| a * b).sum())
            .collect()
    };
    GrowthBounds {
        l_p: lin(lip.kappa_p()),
        l: lin(lip.kappa()),
        q_phi: quadratic_form(lip.m_phi(), &r),
        q_g: lip.m_g().iter().map(|m| quadratic_form(m, &r)).collect(),
        q_gp: lip.m_gp().iter().map(|m| quadratic_form(m, &r)).collect(),
    }
}

fn check_start(g_p_at_u0: &[f64]) -> Result<()> {
    if let Some((j, v)) = g_p_at_u0.iter().enumerate().find(|(_, v)| !(**v < 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "g_p[{j}](u0) = {v} is not strictly negative"
        )));
    }
    Ok(())
}

/// Guaranteed lower bound on `-g_p,j(u_k)` while the projection parameters
/// stay fixed.
pub fn constraint_floor(
    lip: &LipschitzData,
    params: &ProjectionParams,
    gb: &GrowthBounds,
    g_p_at_u0: &[f64],
    j: usize,
) -> f64 {
    let slack = 1.0 - lip.gamma()[j];
    let delta = params.delta_gp[j];
    (slack * params.eps_p[j])
        .min(2.0 * slack * delta * delta / gb.q_gp[j])
        .min(-g_p_at_u0[j])
}

/// Lower bound on the filter gain accepted at every step taken with
/// `params`.
pub fn filter_gain_floor(
    params: &ProjectionParams,
    gb: &GrowthBounds,
    lip: &LipschitzData,
    g_p_at_u0: &[f64],
) -> Result<f64> {
    check_start(g_p_at_u0)?;
    let mut floor = 2.0 * params.delta_phi / gb.q_phi;
    for j in 0..gb.l.len() {
        floor = floor
            .min(params.eps[j] / gb.l[j])
            .min(2.0 * params.delta_g[j] / gb.q_g[j]);
    }
    for j in 0..gb.l_p.len() {
        floor = floor.min(constraint_floor(lip, params, gb, g_p_at_u0, j) / gb.l_p[j]);
    }
    Ok(floor)
}

/// Upper bound on the number of feasible projections (and hence stepped
/// experiments) with fixed parameters, given a lower bound `phi_lower` on
/// the cost over the feasible set.
pub fn max_feasible_iterations(
    k_floor: f64,
    lip: &LipschitzData,
    gb: &GrowthBounds,
    delta_phi: f64,
    phi_u0: f64,
    phi_lower: f64,
) -> Result<f64> {
    if !(k_floor > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "filter-gain floor {k_floor} must be positive"
        )));
    }
    if phi_lower > phi_u0 {
        return Err(Error::InvalidArgument(format!(
            "cost lower bound {phi_lower} exceeds phi(u0) = {phi_u0}"
        )));
    }
    let gamma_phi = lip.gamma_phi();
    let per_step = k_floor * (0.5 * k_floor * gamma_phi * gb.q_phi - delta_phi);
    let tail = 2.0 * (gamma_phi - 1.0) * delta_phi * delta_phi / gb.q_phi;
    let denom = per_step.max(tail);
    if !(denom < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "guaranteed decrease per step is {denom}, not negative"
        )));
    }
    Ok((phi_lower - phi_u0) / denom)
}

fn sample_box(rng: &mut ChaCha8Rng, bounds: &BoxBounds) -> Vec<f64> {
    bounds
        .lower()
        .iter()
        .zip(bounds.upper())
        .map(|(l, u)| rng.gen_range(*l..=*u))
        .collect()
}

/// Empirical check of the strict Lipschitz constants against the analytic
/// derivatives of `plant`, at every box corner plus `samples` random points.
///
/// One item per constant; its value is the worst observed ratio of the
/// derivative magnitude to the constant, which must stay below one.
pub fn validate_lipschitz(
    spec: &ProblemSpec,
    plant: &dyn AnalyticPlant,
    samples: usize,
    seed: u64,
) -> ValidationReport {
    let n = spec.n_u();
    let bounds = spec.bounds();
    let lip = spec.lipschitz();
    let mut points: Vec<Vec<f64>> = (0..1usize << n.min(16))
        .map(|mask| {
            (0..n)
                .map(|i| {
                    if mask >> i & 1 == 1 {
                        bounds.upper()[i]
                    } else {
                        bounds.lower()[i]
                    }
                })
                .collect()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    points.extend((0..samples).map(|_| sample_box(&mut rng, bounds)));

    let mut kp = vec![vec![0.0_f64; n]; spec.n_gp()];
    let mut k = vec![vec![0.0_f64; n]; spec.n_g()];
    let mut mphi = vec![vec![0.0_f64; n]; n];
    let mut mg = vec![vec![vec![0.0_f64; n]; n]; spec.n_g()];
    let mut mgp = vec![vec![vec![0.0_f64; n]; n]; spec.n_gp()];
    let worst = |acc: &mut [Vec<f64>], h: &[Vec<f64>], bound: &[Vec<f64>]| {
        for i in 0..acc.len() {
            for c in 0..acc[i].len() {
                acc[i][c] = acc[i][c].max(h[i][c].abs() / bound[i][c]);
            }
        }
    };
    for u in &points {
        let m = plant.evaluate(u);
        worst(&mut kp, &m.grad_g_p, lip.kappa_p());
        let num = spec.numerical_constraints();
        let grads: Vec<Vec<f64>> = num.iter().map(|c| c.gradient(u)).collect();
        worst(&mut k, &grads, lip.kappa());
        worst(&mut mphi, &plant.hessian_phi(u), lip.m_phi());
        for (j, c) in num.iter().enumerate() {
            worst(&mut mg[j], &c.hessian(u), &lip.m_g()[j]);
        }
        for (j, h) in plant.hessians_g_p(u).iter().enumerate() {
            worst(&mut mgp[j], h, &lip.m_gp()[j]);
        }
    }

    let mut report = ValidationReport::default();
    let mut emit = |name: &str, m: &[Vec<f64>]| {
        for (i, row) in m.iter().enumerate() {
            for (c, ratio) in row.iter().enumerate() {
                report.push(format!("{name}[{i}][{c}]"), *ratio, *ratio < 1.0);
            }
        }
    };
    emit("kappa_p", &kp);
    emit("kappa", &k);
    emit("M_phi", &mphi);
    for (j, m) in mg.iter().enumerate() {
        emit(&format!("M_g[{j}]"), m);
    }
    for (j, m) in mgp.iter().enumerate() {
        emit(&format!("M_gp[{j}]"), m);
    }
    report
}

/// Diagnostics at one parameter level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelDiagnostics {
    pub level: u32,
    pub delta_phi: f64,
    pub filter_gain_floor: f64,
    pub constraint_floors: Vec<f64>,
    /// Present when a lower bound on the cost is known.
    pub max_feasible_iterations: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    pub growth: GrowthBounds,
    pub phi_u0: f64,
    pub phi_lower: Option<f64>,
    pub levels: Vec<LevelDiagnostics>,
}

/// Growth bounds plus per-level diagnostics for levels `0..=max_level`.
pub fn bounds_report(
    spec: &ProblemSpec,
    ceilings: &Ceilings,
    g_p_at_u0: &[f64],
    phi_u0: f64,
    phi_lower: Option<f64>,
    max_level: u32,
) -> Result<BoundsReport> {
    let lip = spec.lipschitz();
    let growth = worst_case_growth(lip, spec.bounds());
    let mut levels = Vec::new();
    for level in 0..=max_level {
        let params = ProjectionParams::at_level(ceilings, level);
        let k_floor = filter_gain_floor(&params, &growth, lip, g_p_at_u0)?;
        let constraint_floors = (0..spec.n_gp())
            .map(|j| constraint_floor(lip, &params, &growth, g_p_at_u0, j))
            .collect();
        let max_feasible_iterations = phi_lower
            .map(|lower| {
                max_feasible_iterations(k_floor, lip, &growth, params.delta_phi, phi_u0, lower)
            })
            .transpose()?;
        levels.push(LevelDiagnostics {
            level,
            delta_phi: params.delta_phi,
            filter_gain_floor: k_floor,
            constraint_floors,
            max_feasible_iterations,
        });
    }
    Ok(BoundsReport {
        growth,
        phi_u0,
        phi_lower,
        levels,
    })
}
