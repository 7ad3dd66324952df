//! Problem data and the plant-oracle contract.
//!
//! The problem is
//!
//! ```text
//!     minimize    phi_p(u)
//!     subject to  g_p,j(u) <= 0    j = 1..n_gp   (experimental)
//!                 g_j(u)   <= 0    j = 1..n_g    (numerical)
//!                 u_L <= u <= u_U
//! ```
//!
//! where the `_p` functions are only available through a [`PlantOracle`].

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Default strictness coefficient used when none is supplied.
pub const DEFAULT_STRICTNESS: f64 = 0.95;

/// A point in the space of decision variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DecisionVector(Vec<f64>);

impl DecisionVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("decision vector".into()));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for DecisionVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<&[f64]> for DecisionVector {
    /// Unchecked conversion; callers own finiteness.
    fn from(v: &[f64]) -> Self {
        Self(v.to_vec())
    }
}

/// The experimental space `u_L <= u <= u_U`, with `u_L < u_U` strictly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox")]
pub struct BoxBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Deserialize)]
struct RawBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<RawBox> for BoxBounds {
    type Error = Error;

    fn try_from(raw: RawBox) -> Result<Self> {
        BoxBounds::new(raw.lower, raw.upper)
    }
}

impl BoxBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::InvalidBox(format!(
                "lower has {} entries, upper has {}",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !l.is_finite() || !u.is_finite() || l >= u {
                return Err(Error::InvalidBox(format!("need lower < upper at index {i}")));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn ranges(&self) -> Vec<f64> {
        self.upper.iter().zip(&self.lower).map(|(u, l)| u - l).collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.upper
            .iter()
            .zip(&self.lower)
            .map(|(u, l)| 0.5 * (u + l))
            .collect()
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        u.len() == self.dim()
            && u
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (l, h))| l <= x && x <= h)
    }

    pub fn clamp(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(x, (l, h))| x.clamp(*l, *h))
            .collect()
    }
}

/// Raw, unvalidated Lipschitz constants as they appear in a problem file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LipschitzInput {
    #[serde(default)]
    pub kappa_p: Vec<Vec<f64>>,
    #[serde(default)]
    pub kappa: Vec<Vec<f64>>,
    #[serde(rename = "M_phi")]
    pub m_phi: Vec<Vec<f64>>,
    #[serde(rename = "M_g", default)]
    pub m_g: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "M_gp", default)]
    pub m_gp: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub gamma: Option<Vec<f64>>,
    #[serde(default)]
    pub gamma_phi: Option<f64>,
}

/// Strict Lipschitz constants of the plant and numerical functions.
///
/// `kappa_p[j][i]` strictly bounds `|d g_p,j / d u_i|` on the box, `kappa`
/// does the same for the numerical constraints, and the `m_*` matrices bound
/// the second derivatives entrywise. The `m_*` matrices are symmetrized on
/// construction. `gamma` and `gamma_phi` are strictness coefficients; they
/// only enter the convergence diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LipschitzData {
    kappa_p: Vec<Vec<f64>>,
    kappa: Vec<Vec<f64>>,
    m_phi: Vec<Vec<f64>>,
    m_g: Vec<Vec<Vec<f64>>>,
    m_gp: Vec<Vec<Vec<f64>>>,
    gamma: Vec<f64>,
    gamma_phi: f64,
}

fn check_positive_matrix(name: &str, m: &[Vec<f64>], rows: usize, cols: usize) -> Result<()> {
    if m.len() != rows || m.iter().any(|r| r.len() != cols) {
        return Err(Error::InvalidLipschitz(format!(
            "{name} must be {rows} x {cols}"
        )));
    }
    for (i, row) in m.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if !(v.is_finite() && *v > 0.0) {
                return Err(Error::InvalidLipschitz(format!(
                    "{name}[{i}][{j}] = {v} is not strictly positive"
                )));
            }
        }
    }
    Ok(())
}

fn symmetrize(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = m.len();
    (0..n)
        .map(|i| (0..n).map(|j| 0.5 * (m[i][j] + m[j][i])).collect())
        .collect()
}

impl LipschitzData {
    pub fn new(input: LipschitzInput, n_u: usize, n_gp: usize, n_g: usize) -> Result<Self> {
        check_positive_matrix("kappa_p", &input.kappa_p, n_gp, n_u)?;
        check_positive_matrix("kappa", &input.kappa, n_g, n_u)?;
        check_positive_matrix("M_phi", &input.m_phi, n_u, n_u)?;
        if input.m_g.len() != n_g {
            return Err(Error::InvalidLipschitz(format!("M_g needs {n_g} matrices")));
        }
        if input.m_gp.len() != n_gp {
            return Err(Error::InvalidLipschitz(format!("M_gp needs {n_gp} matrices")));
        }
        for (j, m) in input.m_g.iter().enumerate() {
            check_positive_matrix(&format!("M_g[{j}]"), m, n_u, n_u)?;
        }
        for (j, m) in input.m_gp.iter().enumerate() {
            check_positive_matrix(&format!("M_gp[{j}]"), m, n_u, n_u)?;
        }
        let gamma = input.gamma.unwrap_or_else(|| vec![DEFAULT_STRICTNESS; n_gp]);
        if gamma.len() != n_gp {
            return Err(Error::InvalidLipschitz(format!(
                "gamma needs {n_gp} entries, got {}",
                gamma.len()
            )));
        }
        if let Some(g) = gamma.iter().find(|g| !(**g > 0.0 && **g < 1.0)) {
            return Err(Error::InvalidLipschitz(format!("gamma entry {g} outside (0, 1)")));
        }
        let gamma_phi = input.gamma_phi.unwrap_or(DEFAULT_STRICTNESS);
        if !(0.0..1.0).contains(&gamma_phi) {
            return Err(Error::InvalidLipschitz(format!(
                "gamma_phi = {gamma_phi} outside [0, 1)"
            )));
        }
        Ok(Self {
            kappa_p: input.kappa_p,
            kappa: input.kappa,
            m_phi: symmetrize(&input.m_phi),
            m_g: input.m_g.iter().map(|m| symmetrize(m)).collect(),
            m_gp: input.m_gp.iter().map(|m| symmetrize(m)).collect(),
            gamma,
            gamma_phi,
        })
    }

    pub fn kappa_p(&self) -> &[Vec<f64>] {
        &self.kappa_p
    }

    pub fn kappa(&self) -> &[Vec<f64>] {
        &self.kappa
    }

    pub fn m_phi(&self) -> &[Vec<f64>] {
        &self.m_phi
    }

    pub fn m_g(&self) -> &[Vec<Vec<f64>>] {
        &self.m_g
    }

    pub fn m_gp(&self) -> &[Vec<Vec<f64>>] {
        &self.m_gp
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn gamma_phi(&self) -> f64 {
        self.gamma_phi
    }

    /// Copy with every first- and second-order constant multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let s1 = |m: &[Vec<f64>]| -> Vec<Vec<f64>> {
            m.iter().map(|r| r.iter().map(|v| v * factor).collect()).collect()
        };
        let n_u = self.m_phi.len();
        Self::new(
            LipschitzInput {
                kappa_p: s1(&self.kappa_p),
                kappa: s1(&self.kappa),
                m_phi: s1(&self.m_phi),
                m_g: self.m_g.iter().map(|m| s1(m)).collect(),
                m_gp: self.m_gp.iter().map(|m| s1(m)).collect(),
                gamma: Some(self.gamma.clone()),
                gamma_phi: Some(self.gamma_phi),
            },
            n_u,
            self.kappa_p.len(),
            self.kappa.len(),
        )
    }
}

/// One experiment's worth of plant information at a point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub phi: f64,
    pub g_p: Vec<f64>,
    pub grad_phi: Vec<f64>,
    pub grad_g_p: Vec<Vec<f64>>,
}

impl Measurement {
    /// Checks shapes against `n_u`/`n_gp` and that every entry is finite.
    pub fn validate(&self, n_u: usize, n_gp: usize) -> Result<()> {
        if self.g_p.len() != n_gp {
            return Err(Error::Dimension(format!(
                "g_p has {} entries, expected {n_gp}",
                self.g_p.len()
            )));
        }
        if self.grad_phi.len() != n_u {
            return Err(Error::Dimension(format!(
                "grad_phi has {} entries, expected {n_u}",
                self.grad_phi.len()
            )));
        }
        if self.grad_g_p.len() != n_gp || self.grad_g_p.iter().any(|r| r.len() != n_u) {
            return Err(Error::Dimension(format!(
                "grad_g_p must be {n_gp} x {n_u}"
            )));
        }
        let finite = self.phi.is_finite()
            && self.g_p.iter().all(|v| v.is_finite())
            && self.grad_phi.iter().all(|v| v.is_finite())
            && self.grad_g_p.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("measurement".into()));
        }
        Ok(())
    }
}

/// Source of experimental measurements.
///
/// Implementations must be repeatable: measuring twice at the same point
/// returns the same [`Measurement`]. `k` is the experiment counter and is
/// informational only.
pub trait PlantOracle {
    fn measure(&mut self, k: usize, u: &[f64]) -> Result<Measurement>;
}

impl<T: PlantOracle + ?Sized> PlantOracle for &mut T {
    fn measure(&mut self, k: usize, u: &[f64]) -> Result<Measurement> {
        (**self).measure(k, u)
    }
}

/// A plant with closed-form derivatives, used for simulation and for the
/// Lipschitz validators.
pub trait AnalyticPlant {
    fn evaluate(&self, u: &[f64]) -> Measurement;
    fn hessian_phi(&self, u: &[f64]) -> Vec<Vec<f64>>;
    fn hessians_g_p(&self, u: &[f64]) -> Vec<Vec<Vec<f64>>>;
}

/// Any analytic plant is trivially an oracle.
pub struct Simulated<P>(pub P);

impl<P: AnalyticPlant> PlantOracle for Simulated<P> {
    fn measure(&mut self, _k: usize, u: &[f64]) -> Result<Measurement> {
        Ok(self.0.evaluate(u))
    }
}

/// Constraints that can be evaluated without running an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NumericalConstraint {
    /// `r^2 - ||u - c||^2 <= 0`: keep out of the open disk (ball) around `c`.
    ExcludedDisk { center: Vec<f64>, radius: f64 },
    /// `a^T u - b <= 0`.
    Halfspace { normal: Vec<f64>, offset: f64 },
}

impl NumericalConstraint {
    fn dim(&self) -> usize {
        match self {
            Self::ExcludedDisk { center, .. } => center.len(),
            Self::Halfspace { normal, .. } => normal.len(),
        }
    }

    pub fn value(&self, u: &[f64]) -> f64 {
        match self {
            Self::ExcludedDisk { center, radius } => {
                radius * radius
                    - u.iter()
                        .zip(center)
                        .map(|(x, c)| (x - c) * (x - c))
                        .sum::<f64>()
            }
            Self::Halfspace { normal, offset } => linalg::dot(normal, u) - offset,
        }
    }

    pub fn gradient(&self, u: &[f64]) -> Vec<f64> {
        match self {
            Self::ExcludedDisk { center, .. } => {
                u.iter().zip(center).map(|(x, c)| -2.0 * (x - c)).collect()
            }
            Self::Halfspace { normal, .. } => normal.clone(),
        }
    }

    pub fn hessian(&self, u: &[f64]) -> Vec<Vec<f64>> {
        let n = u.len();
        let diag = match self {
            Self::ExcludedDisk { .. } => -2.0,
            Self::Halfspace { .. } => 0.0,
        };
        (0..n)
            .map(|i| (0..n).map(|j| if i == j { diag } else { 0.0 }).collect())
            .collect()
    }
}

/// Rule producing the optimization target `u*_{k+1}` before each step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetRule {
    BoxCenter,
    Fixed(DecisionVector),
    /// Target for step `k` is entry `min(k, len - 1)`.
    Sequence(Vec<DecisionVector>),
}

impl TargetRule {
    pub fn target(&self, k: usize, bounds: &BoxBounds) -> Vec<f64> {
        match self {
            Self::BoxCenter => bounds.center(),
            Self::Fixed(t) => t.to_vec(),
            Self::Sequence(ts) => ts[k.min(ts.len() - 1)].to_vec(),
        }
    }

    fn check(&self, n_u: usize) -> Result<()> {
        let ok = match self {
            Self::BoxCenter => true,
            Self::Fixed(t) => t.len() == n_u,
            Self::Sequence(ts) => !ts.is_empty() && ts.iter().all(|t| t.len() == n_u),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension(format!("target must have {n_u} entries")))
        }
    }
}

/// Static description of one experimental optimization problem.
#[derive(Debug, Clone, Serialize)]
pub struct ProblemSpec {
    name: String,
    bounds: BoxBounds,
    n_gp: usize,
    numerical: Vec<NumericalConstraint>,
    lipschitz: LipschitzData,
    u0: DecisionVector,
    target: TargetRule,
}

impl ProblemSpec {
    pub fn new(
        name: impl Into<String>,
        bounds: BoxBounds,
        n_gp: usize,
        numerical: Vec<NumericalConstraint>,
        lipschitz: LipschitzData,
        u0: DecisionVector,
        target: TargetRule,
    ) -> Result<Self> {
        let n_u = bounds.dim();
        if u0.len() != n_u {
            return Err(Error::Dimension(format!("u0 must have {n_u} entries")));
        }
        if numerical.iter().any(|c| c.dim() != n_u) {
            return Err(Error::Dimension(format!(
                "numerical constraints must act on {n_u} variables"
            )));
        }
        if lipschitz.kappa_p().len() != n_gp
            || lipschitz.kappa().len() != numerical.len()
            || lipschitz.m_phi().len() != n_u
        {
            return Err(Error::Dimension(
                "Lipschitz data does not match the problem dimensions".into(),
            ));
        }
        target.check(n_u)?;
        Ok(Self {
            name: name.into(),
            bounds,
            n_gp,
            numerical,
            lipschitz,
            u0,
            target,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_u(&self) -> usize {
        self.bounds.dim()
    }

    pub fn n_gp(&self) -> usize {
        self.n_gp
    }

    pub fn n_g(&self) -> usize {
        self.numerical.len()
    }

    pub fn bounds(&self) -> &BoxBounds {
        &self.bounds
    }

    pub fn numerical_constraints(&self) -> &[NumericalConstraint] {
        &self.numerical
    }

    pub fn lipschitz(&self) -> &LipschitzData {
        &self.lipschitz
    }

    pub fn u0(&self) -> &DecisionVector {
        &self.u0
    }

    pub fn target(&self) -> &TargetRule {
        &self.target
    }

    pub fn with_target(mut self, target: TargetRule) -> Result<Self> {
        target.check(self.n_u())?;
        self.target = target;
        Ok(self)
    }

    pub fn with_lipschitz(mut self, lipschitz: LipschitzData) -> Result<Self> {
        if lipschitz.kappa_p().len() != self.n_gp || lipschitz.kappa().len() != self.n_g() {
            return Err(Error::Dimension("Lipschitz data shape".into()));
        }
        self.lipschitz = lipschitz;
        Ok(self)
    }

    pub fn with_u0(mut self, u0: DecisionVector) -> Result<Self> {
        if u0.len() != self.n_u() {
            return Err(Error::Dimension("u0 length".into()));
        }
        self.u0 = u0;
        Ok(self)
    }
}

/// One pass/fail line of a validation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckItem {
    pub label: String,
    pub value: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub items: Vec<CheckItem>,
}

impl ValidationReport {
    pub fn push(&mut self, label: impl Into<String>, value: f64, passed: bool) {
        self.items.push(CheckItem {
            label: label.into(),
            value,
            passed,
        });
    }

    pub fn passed(&self) -> bool {
        self.items.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckItem> {
        self.items.iter().filter(|c| !c.passed)
    }

    /// `Err(Error::InitialPoint)` listing every failed label.
    pub fn into_result(self) -> Result<Self> {
        if self.passed() {
            Ok(self)
        } else {
            Err(Error::InitialPoint(
                self.failures().map(|c| c.label.clone()).collect(),
            ))
        }
    }
}

/// Values and gradients of every numerical constraint at `u`.
pub fn evaluate_numerical(spec: &ProblemSpec, u: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if u.len() != spec.n_u() {
        return Err(Error::Dimension(format!("u must have {} entries", spec.n_u())));
    }
    let values: Vec<f64> = spec.numerical.iter().map(|c| c.value(u)).collect();
    let grads: Vec<Vec<f64>> = spec.numerical.iter().map(|c| c.gradient(u)).collect();
    if values.iter().chain(grads.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("numerical constraint".into()));
    }
    Ok((values, grads))
}

/// Strict feasibility of the initial experiment: `g_p(u0) < 0`,
/// `g(u0) <= 0` and `u0` inside the box (bounds may be active).
pub fn validate_initial_point(spec: &ProblemSpec, m0: &Measurement) -> Result<ValidationReport> {
    m0.validate(spec.n_u(), spec.n_gp())?;
    let u0 = spec.u0();
    let mut report = ValidationReport::default();
    for (j, v) in m0.g_p.iter().enumerate() {
        report.push(format!("g_p[{j}] < 0"), *v, *v < 0.0);
    }
    let (g, _) = evaluate_numerical(spec, u0)?;
    for (j, v) in g.iter().enumerate() {
        report.push(format!("g[{j}] <= 0"), *v, *v <= 0.0);
    }
    let b = spec.bounds();
    for i in 0..spec.n_u() {
        report.push(
            format!("u_L[{i}] <= u0[{i}] <= u_U[{i}]"),
            u0[i],
            b.lower()[i] <= u0[i] && u0[i] <= b.upper()[i],
        );
    }
    Ok(report)
}
