//! Dense solvers for the small convex subproblems of each step.
//!
//! Both work on a [`HalfspaceSet`]: rows `a_i^T (u - anchor) <= b_i`
//! intersected with a box. [`lp_feasible`] decides emptiness with a phase-1
//! simplex; [`qp_project`] computes the Euclidean projection of a target
//! onto the set with a primal active-set method.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{BoxBounds, DecisionVector};

/// Tolerance on the phase-1 optimum below which a set counts as nonempty.
pub const FEASIBILITY_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawHalfspaceSet")]
pub struct HalfspaceSet {
    normals: Vec<Vec<f64>>,
    offsets: Vec<f64>,
    anchor: DecisionVector,
    bounds: BoxBounds,
}

#[derive(Deserialize)]
struct RawHalfspaceSet {
    normals: Vec<Vec<f64>>,
    offsets: Vec<f64>,
    anchor: DecisionVector,
    bounds: BoxBounds,
}

impl TryFrom<RawHalfspaceSet> for HalfspaceSet {
    type Error = Error;

    fn try_from(raw: RawHalfspaceSet) -> Result<Self> {
        HalfspaceSet::new(raw.normals, raw.offsets, raw.anchor, raw.bounds)
    }
}

impl HalfspaceSet {
    pub fn new(
        normals: Vec<Vec<f64>>,
        offsets: Vec<f64>,
        anchor: DecisionVector,
        bounds: BoxBounds,
    ) -> Result<Self> {
        let n = bounds.dim();
        if anchor.len() != n {
            return Err(Error::Dimension(format!("anchor must have {n} entries")));
        }
        if normals.len() != offsets.len() {
            return Err(Error::Dimension(format!(
                "{} normals but {} offsets",
                normals.len(),
                offsets.len()
            )));
        }
        for (i, a) in normals.iter().enumerate() {
            if a.len() != n {
                return Err(Error::Dimension(format!("row {i} must have {n} entries")));
            }
            if a.iter().chain([&offsets[i]]).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("halfspace row {i}")));
            }
            if linalg::norm(a) == 0.0 {
                return Err(Error::ZeroRow(i));
            }
        }
        Ok(Self {
            normals,
            offsets,
            anchor,
            bounds,
        })
    }

    pub fn normals(&self) -> &[Vec<f64>] {
        &self.normals
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn anchor(&self) -> &DecisionVector {
        &self.anchor
    }

    pub fn bounds(&self) -> &BoxBounds {
        &self.bounds
    }

    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    /// `a_i^T (u - anchor) - b_i` for every row; nonpositive when satisfied.
    pub fn residuals(&self, u: &[f64]) -> Vec<f64> {
        let d = linalg::sub(u, &self.anchor);
        self.normals
            .iter()
            .zip(&self.offsets)
            .map(|(a, b)| linalg::dot(a, &d) - b)
            .collect()
    }

    /// Largest violation of any row or bound, zero when `u` is in the set.
    pub fn max_violation(&self, u: &[f64]) -> f64 {
        let rows = self.residuals(u).into_iter().fold(0.0_f64, f64::max);
        let lo = self.bounds.lower();
        let hi = self.bounds.upper();
        (0..u.len()).fold(rows, |acc, i| acc.max(lo[i] - u[i]).max(u[i] - hi[i]))
    }

    /// Rows as `g^T u <= h` in absolute coordinates.
    fn absolute_rows(&self) -> (Vec<Vec<f64>>, Vec<f64>) {
        let h = self
            .normals
            .iter()
            .zip(&self.offsets)
            .map(|(a, b)| b + linalg::dot(a, &self.anchor))
            .collect();
        (self.normals.clone(), h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Feasibility {
    Feasible(DecisionVector),
    Infeasible,
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Self::Feasible(_))
    }

    pub fn witness(&self) -> Option<&DecisionVector> {
        match self {
            Self::Feasible(u) => Some(u),
            Self::Infeasible => None,
        }
    }
}

/// Dense simplex tableau in canonical form with respect to `basis`.
struct Tableau {
    /// `rows x (cols + 1)`, last column is the right-hand side.
    t: Vec<Vec<f64>>,
    cost: Vec<f64>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.t[r][c];
        for v in self.t[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i != r {
                let f = row[c];
                if f != 0.0 {
                    for (v, pv) in row.iter_mut().zip(&pivot_row) {
                        *v -= f * pv;
                    }
                }
            }
        }
        let f = self.cost[c];
        if f != 0.0 {
            for (v, pv) in self.cost.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
        }
        self.basis[r] = c;
    }

    /// Minimize with Bland's rule until optimal. `cost` holds reduced costs,
    /// its last entry minus the objective value.
    fn minimize(&mut self, cap: usize) -> Result<()> {
        for _ in 0..cap {
            let Some(c) = (0..self.cols).find(|&j| self.cost[j] < -PIVOT_TOL) else {
                return Ok(());
            };
            let mut best: Option<(usize, f64)> = None;
            for (i, row) in self.t.iter().enumerate() {
                if row[c] > PIVOT_TOL {
                    let ratio = row[self.cols] / row[c];
                    let better = match best {
                        None => true,
                        Some((bi, br)) => {
                            ratio < br - 1e-14
                                || (ratio <= br + 1e-14 && self.basis[i] < self.basis[bi])
                        }
                    };
                    if better {
                        best = Some((i, ratio));
                    }
                }
            }
            let Some((r, _)) = best else {
                return Err(Error::Numerical("phase-1 simplex unbounded"));
            };
            self.pivot(r, c);
        }
        Err(Error::IterationCap {
            solver: "phase-1 simplex",
            cap,
        })
    }
}

/// Phase-1 simplex decision of whether the halfspace set is nonempty.
pub fn lp_feasible(hs: &HalfspaceSet) -> Result<Feasibility> {
    let n = hs.bounds.dim();
    if hs.is_empty() {
        return Ok(Feasibility::Feasible(DecisionVector::from(
            hs.bounds.center().as_slice(),
        )));
    }
    let lo = hs.bounds.lower();
    let width = hs.bounds.ranges();
    let (g, h) = hs.absolute_rows();
    let m = g.len();
    // u = lo + y, 0 <= y <= width. Rows are scaled to unit normals.
    // Columns: y (n), row slacks (m), width slacks (n), artificials.
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::with_capacity(m + n);
    for (a, hi) in g.iter().zip(&h) {
        let s = linalg::norm(a);
        let rhs = (hi - linalg::dot(a, lo)) / s;
        rows.push((a.iter().map(|v| v / s).collect(), rhs));
    }
    let needs_art: Vec<usize> = (0..m).filter(|&i| rows[i].1 < 0.0).collect();
    let cols = n + m + n + needs_art.len();
    let mut t = Vec::with_capacity(m + n);
    let mut basis = Vec::with_capacity(m + n);
    let mut cost = vec![0.0; cols + 1];
    for (i, (a, rhs)) in rows.iter().enumerate() {
        let mut row = vec![0.0; cols + 1];
        let sign = if *rhs < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            row[j] = sign * a[j];
        }
        row[n + i] = sign;
        row[cols] = sign * rhs;
        if let Some(k) = needs_art.iter().position(|&r| r == i) {
            let col = n + m + n + k;
            row[col] = 1.0;
            basis.push(col);
            for (c, v) in cost.iter_mut().zip(&row) {
                *c -= v;
            }
            cost[col] = 0.0;
        } else {
            basis.push(n + i);
        }
        t.push(row);
    }
    for j in 0..n {
        let mut row = vec![0.0; cols + 1];
        row[j] = 1.0;
        row[n + m + j] = 1.0;
        row[cols] = width[j];
        basis.push(n + m + j);
        t.push(row);
    }
    let mut tab = Tableau {
        t,
        cost,
        basis,
        cols,
    };
    tab.minimize(50 * (cols + m + n) + 100)?;
    let infeasibility = -tab.cost[cols];
    if infeasibility > FEASIBILITY_TOL {
        return Ok(Feasibility::Infeasible);
    }
    let mut y = vec![0.0; n];
    for (r, &b) in tab.basis.iter().enumerate() {
        if b < n {
            y[b] = tab.t[r][cols];
        }
    }
    let u: Vec<f64> = lo.iter().zip(&y).map(|(l, v)| l + v).collect();
    Ok(Feasibility::Feasible(DecisionVector::from(
        hs.bounds.clamp(&u).as_slice(),
    )))
}

/// Result of a projection with its KKT multipliers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Projection {
    pub point: DecisionVector,
    /// One per halfspace row.
    pub multipliers: Vec<f64>,
    pub lower_multipliers: Vec<f64>,
    pub upper_multipliers: Vec<f64>,
}

/// Euclidean projection of `target` onto the halfspace set.
///
/// Fails with [`Error::Infeasible`] when the set is empty.
pub fn qp_project(target: &[f64], hs: &HalfspaceSet) -> Result<Projection> {
    let n = hs.bounds.dim();
    if target.len() != n {
        return Err(Error::Dimension(format!("target must have {n} entries")));
    }
    let m = hs.len();
    let zero = |len| vec![0.0; len];
    if hs.max_violation(target) == 0.0 {
        return Ok(Projection {
            point: DecisionVector::new(target.to_vec())?,
            multipliers: zero(m),
            lower_multipliers: zero(n),
            upper_multipliers: zero(n),
        });
    }

    // Constraint system G x <= h: halfspace rows, then upper and lower bounds.
    let (mut g, mut h) = hs.absolute_rows();
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        g.push(e);
        h.push(hs.bounds.upper()[i]);
    }
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = -1.0;
        g.push(e);
        h.push(-hs.bounds.lower()[i]);
    }
    let total = g.len();
    let scale = 1.0 + target.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let tol = 1e-12 * scale;

    let clamped = hs.bounds.clamp(target);
    let mut x = if hs.max_violation(&clamped) <= FEASIBILITY_TOL {
        clamped
    } else {
        match lp_feasible(hs)? {
            Feasibility::Feasible(w) => w.into_inner(),
            Feasibility::Infeasible => return Err(Error::Infeasible),
        }
    };

    let mut working: Vec<usize> = Vec::new();
    let cap = 20 * (total + n) + 100;
    for _ in 0..cap {
        let r = linalg::sub(target, &x);
        let k = working.len();
        let lambda = if k == 0 {
            Vec::new()
        } else {
            let mut gram = vec![0.0; k * k];
            let mut rhs = vec![0.0; k];
            for (a, &wa) in working.iter().enumerate() {
                for (b, &wb) in working.iter().enumerate() {
                    gram[a * k + b] = linalg::dot(&g[wa], &g[wb]);
                }
                rhs[a] = linalg::dot(&g[wa], &r);
            }
            linalg::solve(&gram, &rhs).ok_or(Error::Numerical("active-set projection"))?
        };
        let p = null_space_step(&working, &g, &r);
        if linalg::norm(&p) <= tol {
            let most_negative = lambda
                .iter()
                .enumerate()
                .filter(|(_, l)| **l < -tol)
                .min_by(|a, b| a.1.total_cmp(b.1));
            match most_negative {
                Some((pos, _)) => {
                    working.remove(pos);
                    continue;
                }
                None => {
                    let mut mu = vec![0.0; total];
                    for (&w, l) in working.iter().zip(&lambda) {
                        mu[w] = l.max(0.0);
                    }
                    // Box rows are exact unit vectors, so factor them first.
                    let mut order = working.clone();
                    order.sort_by_key(|&w| w < m);
                    if let Some(polished) = polish(&order, &g, &h, target) {
                        if hs.max_violation(&polished) <= hs.max_violation(&x).max(tol) {
                            x = polished;
                        }
                    }
                    let point = hs.bounds.clamp(&x);
                    return Ok(Projection {
                        point: DecisionVector::new(point)?,
                        multipliers: mu[..m].to_vec(),
                        upper_multipliers: mu[m..m + n].to_vec(),
                        lower_multipliers: mu[m + n..].to_vec(),
                    });
                }
            }
        }
        let mut alpha = 1.0;
        let mut blocking = None;
        for i in 0..total {
            if working.contains(&i) {
                continue;
            }
            let gp = linalg::dot(&g[i], &p);
            if gp > tol * linalg::norm(&g[i]) {
                let step = ((h[i] - linalg::dot(&g[i], &x)) / gp).max(0.0);
                if step < alpha {
                    alpha = step;
                    blocking = Some(i);
                }
            }
        }
        linalg::axpy(alpha, &p, &mut x);
        if let Some(i) = blocking {
            working.push(i);
        }
    }
    Err(Error::IterationCap {
        solver: "active-set projection",
        cap,
    })
}

/// Component of `r` orthogonal to the rows of `g` listed in `working`, via
/// twice-iterated modified Gram-Schmidt.
fn null_space_step(working: &[usize], g: &[Vec<f64>], r: &[f64]) -> Vec<f64> {
    let n = r.len();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(working.len());
    for &w in working {
        let mut v = g[w].clone();
        let start = linalg::norm(&v);
        for _ in 0..2 {
            for q in &basis {
                let c = linalg::dot(q, &v);
                linalg::axpy(-c, q, &mut v);
            }
        }
        let nv = linalg::norm(&v);
        if nv > 1e-12 * start {
            v.iter_mut().for_each(|x| *x /= nv);
            basis.push(v);
        }
    }
    if basis.len() >= n {
        return vec![0.0; n];
    }
    let mut p = r.to_vec();
    for _ in 0..2 {
        for q in &basis {
            let c = linalg::dot(q, &p);
            linalg::axpy(-c, q, &mut p);
        }
    }
    p
}

/// Closest point to `target` on the intersection of the working rows,
/// solved from an orthogonal factorization of those rows so the error
/// scales with their conditioning rather than that of their Gram matrix.
fn polish(working: &[usize], g: &[Vec<f64>], h: &[f64], target: &[f64]) -> Option<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(working.len());
    let mut z: Vec<f64> = Vec::with_capacity(working.len());
    for &w in working {
        // Row w = sum_b c_b q_b + nv q_new, so q_new . (x - t) follows by
        // forward substitution from the row's residual at the target.
        let mut v = g[w].clone();
        let mut coeffs = vec![0.0; basis.len()];
        for _ in 0..2 {
            for (q, c) in basis.iter().zip(coeffs.iter_mut()) {
                let d = linalg::dot(q, &v);
                *c += d;
                linalg::axpy(-d, q, &mut v);
            }
        }
        let nv = linalg::norm(&v);
        let residual = h[w] - linalg::dot(&g[w], target);
        let known: f64 = coeffs.iter().zip(&z).map(|(c, zb)| c * zb).sum();
        if nv <= 1e-12 * linalg::norm(&g[w]) {
            // Dependent row: consistent only if already satisfied.
            let scale = 1.0 + residual.abs();
            if (residual - known).abs() > 1e-9 * scale {
                return None;
            }
            continue;
        }
        v.iter_mut().for_each(|x| *x /= nv);
        basis.push(v);
        z.push((residual - known) / nv);
    }
    let mut x = target.to_vec();
    for (q, zb) in basis.iter().zip(&z) {
        linalg::axpy(*zb, q, &mut x);
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Largest violations of the projection's optimality conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }
}

pub fn kkt_residuals(target: &[f64], hs: &HalfspaceSet, proj: &Projection) -> KktResiduals {
    let x = &proj.point;
    let mut grad = linalg::sub(x, target);
    for (a, mu) in hs.normals.iter().zip(&proj.multipliers) {
        linalg::axpy(*mu, a, &mut grad);
    }
    for ((gi, up), lo) in grad.iter_mut().zip(&proj.upper_multipliers).zip(&proj.lower_multipliers) {
        *gi += up - lo;
    }
    let all_mu = proj
        .multipliers
        .iter()
        .chain(&proj.lower_multipliers)
        .chain(&proj.upper_multipliers);
    let dual = all_mu.fold(0.0_f64, |a, mu| a.max(-mu));
    let res = hs.residuals(x);
    let mut comp = res
        .iter()
        .zip(&proj.multipliers)
        .fold(0.0_f64, |a, (r, mu)| a.max((r * mu).abs()));
    for i in 0..x.len() {
        comp = comp
            .max((proj.lower_multipliers[i] * (hs.bounds.lower()[i] - x[i])).abs())
            .max((proj.upper_multipliers[i] * (x[i] - hs.bounds.upper()[i])).abs());
    }
    KktResiduals {
        stationarity: grad.iter().fold(0.0_f64, |a, v| a.max(v.abs())),
        primal: hs.max_violation(x),
        dual,
        complementarity: comp,
    }
}
