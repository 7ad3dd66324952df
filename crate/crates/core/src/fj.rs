//! Fritz John stationarity error.
//!
//! With multipliers `mu = (mu_phi, mu_p, mu_g, zeta_L, zeta_U) >= 0` the
//! Lagrangian gradient is
//!
//! ```text
//!     grad L = mu_phi grad phi + sum mu_p,j grad g_p,j + sum mu_j grad g_j
//!              - sum zeta_L,i e_i + sum zeta_U,i e_i
//! ```
//!
//! and the error of a multiplier vector is `|grad L|^2` plus the squared
//! complementarity products `(mu_i s_i)^2`, where `s` stacks the constraint
//! values and the bound slacks `u_L - u`, `u - u_U`. This is the quadratic
//! form `mu^T Psi mu` with `Psi = G^T G + diag(s^2)`.
//!
//! Two normalizations are offered. [`Normalization::UnitSphere`] minimizes
//! over unit-norm multipliers. [`Normalization::FixedCostMultiplier`] fixes
//! `mu_phi = 1`, pins the multipliers of inactive constraints and bounds to
//! zero, and solves a nonnegative least-squares problem for the rest.

use serde::{Deserialize, Serialize};

use crate::engine::{ProjectionParams, Trajectory};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{evaluate_numerical, DecisionVector, Measurement, ProblemSpec};

/// Default activity tolerance for constraints (absolute) and bounds
/// (relative to the box range).
pub const ACTIVITY_TOL: f64 = 1e-9;

/// Largest multiplier count handled by the support enumeration.
pub const MAX_SPHERE_DIM: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    UnitSphere,
    FixedCostMultiplier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    pub cost: f64,
    pub g_p: Vec<f64>,
    pub g: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Multipliers {
    fn from_flat(v: &[f64], n_gp: usize, n_g: usize, n_u: usize) -> Self {
        let mut it = v.iter().copied();
        let mut take = |n: usize| it.by_ref().take(n).collect::<Vec<_>>();
        let cost = take(1)[0];
        Self {
            cost,
            g_p: take(n_gp),
            g: take(n_g),
            lower: take(n_u),
            upper: take(n_u),
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.cost];
        v.extend(&self.g_p);
        v.extend(&self.g);
        v.extend(&self.lower);
        v.extend(&self.upper);
        v
    }
}

/// Indices treated as active when pinning multipliers.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveSets {
    pub g_p: Vec<usize>,
    pub g: Vec<usize>,
    pub lower: Vec<usize>,
    pub upper: Vec<usize>,
}

impl ActiveSets {
    /// Constraints with value `>= -tol`, bounds within `tol * range`.
    pub fn by_tolerance(g_p: &[f64], g: &[f64], u: &[f64], spec: &ProblemSpec, tol: f64) -> Self {
        let b = spec.bounds();
        let r = b.ranges();
        let within = |vals: &[f64]| {
            (0..vals.len())
                .filter(|&j| vals[j] >= -tol)
                .collect::<Vec<_>>()
        };
        Self {
            g_p: within(g_p),
            g: within(g),
            lower: (0..u.len())
                .filter(|&i| u[i] - b.lower()[i] <= tol * r[i])
                .collect(),
            upper: (0..u.len())
                .filter(|&i| b.upper()[i] - u[i] <= tol * r[i])
                .collect(),
        }
    }

    /// Constraints within their projection `eps`, bounds by tolerance.
    pub fn by_epsilon(
        g_p: &[f64],
        g: &[f64],
        u: &[f64],
        spec: &ProblemSpec,
        params: &ProjectionParams,
    ) -> Self {
        let (g_p_act, g_act) = crate::engine::epsilon_active(g_p, g, params);
        Self {
            g_p: g_p_act,
            g: g_act,
            ..Self::by_tolerance(&[], &[], u, spec, ACTIVITY_TOL)
        }
    }

    fn mask(&self, n_gp: usize, n_g: usize, n_u: usize) -> Vec<bool> {
        let mut m = vec![false; 1 + n_gp + n_g + 2 * n_u];
        m[0] = true;
        for &j in &self.g_p {
            m[1 + j] = true;
        }
        for &j in &self.g {
            m[1 + n_gp + j] = true;
        }
        for &i in &self.lower {
            m[1 + n_gp + n_g + i] = true;
        }
        for &i in &self.upper {
            m[1 + n_gp + n_g + n_u + i] = true;
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FjCertificate {
    pub point: DecisionVector,
    pub error: f64,
    pub multipliers: Multipliers,
    pub normalization: Normalization,
    pub active_sets: ActiveSets,
    /// Parameter level of the terminal record, when certifying a run.
    pub level: Option<u32>,
}

/// Columns of `G` (one per multiplier, each of length `n_u`) and the slack
/// vector `s`.
pub fn fj_system(
    u: &[f64],
    spec: &ProblemSpec,
    m: &Measurement,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let n = spec.n_u();
    m.validate(n, spec.n_gp())?;
    let (g, grads_g) = evaluate_numerical(spec, u)?;
    let b = spec.bounds();
    let mut cols = vec![m.grad_phi.clone()];
    let mut s = vec![0.0];
    cols.extend(m.grad_g_p.iter().cloned());
    s.extend(&m.g_p);
    cols.extend(grads_g);
    s.extend(&g);
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = -1.0;
        cols.push(e);
        s.push(b.lower()[i] - u[i]);
    }
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        cols.push(e);
        s.push(u[i] - b.upper()[i]);
    }
    Ok((cols, s))
}

/// `Psi = G^T G + diag(s^2)`, row-major `d x d`.
pub fn fj_form(cols: &[Vec<f64>], s: &[f64]) -> Vec<f64> {
    let d = cols.len();
    let mut psi = vec![0.0; d * d];
    for a in 0..d {
        for c in 0..d {
            psi[a * d + c] = linalg::dot(&cols[a], &cols[c]);
        }
        psi[a * d + a] += s[a] * s[a];
    }
    psi
}

fn quad(psi: &[f64], d: usize, x: &[f64]) -> f64 {
    (0..d)
        .map(|a| x[a] * (0..d).map(|c| psi[a * d + c] * x[c]).sum::<f64>())
        .sum()
}

/// Minimum of `x^T Psi x` over `x >= 0`, `|x| = 1`, with its minimizer.
///
/// At a minimizer with support `S`, `x_S` is a positive eigenvector of the
/// principal submatrix `Psi_SS`; every support is enumerated and every
/// sign-definite eigenvector is scored.
pub fn min_orthant_rayleigh(psi: &[f64], d: usize) -> Result<(f64, Vec<f64>)> {
    if d == 0 || d > MAX_SPHERE_DIM {
        return Err(Error::InvalidArgument(format!(
            "support enumeration handles 1..={MAX_SPHERE_DIM} multipliers, got {d}"
        )));
    }
    let mut best = (f64::INFINITY, vec![0.0; d]);
    let mut idx = Vec::with_capacity(d);
    let mut sub = Vec::with_capacity(d * d);
    for mask in 1u32..(1u32 << d) {
        idx.clear();
        idx.extend((0..d).filter(|i| mask >> i & 1 == 1));
        let k = idx.len();
        sub.clear();
        for &a in &idx {
            for &c in &idx {
                sub.push(psi[a * d + c]);
            }
        }
        let (_, vecs) = linalg::symmetric_eigen(&sub, k);
        for v in vecs {
            let sign = if v.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
            if v.iter().any(|x| sign * x < -1e-12) {
                continue;
            }
            let mut x = vec![0.0; d];
            for (&i, vi) in idx.iter().zip(&v) {
                x[i] = (sign * vi).max(0.0);
            }
            let nrm = linalg::norm(&x);
            if nrm == 0.0 {
                continue;
            }
            x.iter_mut().for_each(|xi| *xi /= nrm);
            let val = quad(psi, d, &x).max(0.0);
            if val < best.0 {
                best = (val, x);
            }
        }
    }
    Ok(best)
}

/// FJ error at `u` with the default activity tolerance.
pub fn fj_error(
    u: &[f64],
    spec: &ProblemSpec,
    m: &Measurement,
    mode: Normalization,
) -> Result<FjCertificate> {
    let (g, _) = evaluate_numerical(spec, u)?;
    let active = ActiveSets::by_tolerance(&m.g_p, &g, u, spec, ACTIVITY_TOL);
    fj_error_with_activity(u, spec, m, mode, active)
}

/// FJ error at `u`; `active` only matters for the fixed-cost-multiplier
/// normalization.
pub fn fj_error_with_activity(
    u: &[f64],
    spec: &ProblemSpec,
    m: &Measurement,
    mode: Normalization,
    active: ActiveSets,
) -> Result<FjCertificate> {
    let (cols, s) = fj_system(u, spec, m)?;
    let (n_u, n_gp, n_g) = (spec.n_u(), spec.n_gp(), spec.n_g());
    let d = cols.len();
    let (error, flat) = match mode {
        Normalization::UnitSphere => min_orthant_rayleigh(&fj_form(&cols, &s), d)?,
        Normalization::FixedCostMultiplier => {
            let mask = active.mask(n_gp, n_g, n_u);
            let free: Vec<usize> = (1..d).filter(|&i| mask[i]).collect();
            // Rows: n_u Lagrangian components, then one slack row per free
            // multiplier. Target: -grad phi, 0.
            let rows = n_u + free.len();
            let p = free.len();
            let mut bmat = vec![0.0; rows * p];
            for (c, &i) in free.iter().enumerate() {
                for r in 0..n_u {
                    bmat[r * p + c] = cols[i][r];
                }
                bmat[(n_u + c) * p + c] = s[i];
            }
            let mut y = vec![0.0; rows];
            for r in 0..n_u {
                y[r] = -cols[0][r];
            }
            let sol = if p == 0 {
                Vec::new()
            } else {
                linalg::nnls(&bmat, rows, p, &y).ok_or(Error::Numerical("nonnegative least squares"))?
            };
            let mut flat = vec![0.0; d];
            flat[0] = 1.0;
            for (&i, v) in free.iter().zip(&sol) {
                flat[i] = *v;
            }
            let psi = fj_form(&cols, &s);
            (quad(&psi, d, &flat).max(0.0), flat)
        }
    };
    Ok(FjCertificate {
        point: DecisionVector::new(u.to_vec())?,
        error,
        multipliers: Multipliers::from_flat(&flat, n_gp, n_g, n_u),
        normalization: mode,
        active_sets: active,
        level: None,
    })
}

/// FJ error at the terminal point of a run.
pub fn certify_terminal(
    traj: &Trajectory,
    spec: &ProblemSpec,
    mode: Normalization,
) -> Result<FjCertificate> {
    let terminal = traj
        .terminal
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("trajectory has no terminal point".into()))?;
    let rec = traj
        .records
        .iter()
        .rev()
        .find(|r| r.u == *terminal)
        .ok_or_else(|| Error::InvalidArgument("terminal point has no measurement".into()))?;
    let mut cert = fj_error(terminal, spec, &rec.measurement, mode)?;
    cert.level = traj.records.last().map(|r| r.params_level);
    Ok(cert)
}
