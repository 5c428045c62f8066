//! Parametrized measure models `x ↦ p(x) = p̄(x, ·) μ` over an open box.
//!
//! A model couples a parameter box, a sample space, a reference measure `μ`
//! and a density potential `p̄`. Potentials come from expressions, per-atom
//! expression lists, or a catalog of built-in families that ship exact
//! log-derivatives; composite potentials (reparametrization, scaling,
//! pushforward, kernel lifts) are built from existing models.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::expr::{central_difference, DiffConfig, Expression};
use crate::lattice::{Lattice, LatticeConfig, ParamBox};
use crate::markov::Statistic;
use crate::quadrature::Integral;
use crate::spaces::{Measure, Point, SampleSpace};

/// Mass tolerance for models flagged as statistical.
const STATISTICAL_MASS_TOL: f64 = 1e-9;
/// Default bound on the relative jump of `L^k` norms between lattice neighbours.
pub const DEFAULT_CONTINUITY_THRESHOLD: f64 = 0.5;

/// A density potential `p̄(x, ω)`.
pub trait Potential: Send + Sync {
    fn value(&self, x: &[f64], p: &Point) -> Result<f64>;

    fn ln_value(&self, x: &[f64], p: &Point) -> Result<f64> {
        let v = self.value(x, p)?;
        if v > 0.0 {
            Ok(v.ln())
        } else {
            Err(Error::NonPositiveDensity {
                value: v,
                at: p.to_string(),
            })
        }
    }

    /// Exact `∂_V ln p̄`, when the potential knows it.
    fn exact_dlog(&self, _x: &[f64], _v: &[f64], _p: &Point) -> Option<Result<f64>> {
        None
    }

    /// Points of the first interval coordinate where `p̄` may jump.
    fn breaks(&self) -> Vec<f64> {
        Vec::new()
    }

    fn describe(&self) -> String;
}

#[derive(Clone)]
pub struct ParametrizedModel {
    name: String,
    param_box: ParamBox,
    reference: Measure,
    potential: Arc<dyn Potential>,
    statistical: bool,
    diff: DiffConfig,
}

impl fmt::Debug for ParametrizedModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParametrizedModel")
            .field("name", &self.name)
            .field("param_box", &self.param_box)
            .field("space", self.space())
            .field("potential", &self.potential.describe())
            .field("statistical", &self.statistical)
            .finish()
    }
}

/// Both evaluations of `∂_V ∫ dp(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MassDerivative {
    /// `∫ ∂_V ln p̄ dp(x)`.
    pub value: f64,
    /// Central difference of the mass.
    pub finite_difference: f64,
}

impl ParametrizedModel {
    /// Builds a model and spot-checks positivity (and unit mass when
    /// `statistical`) on a coarse lattice.
    pub fn new(
        name: impl Into<String>,
        param_box: ParamBox,
        reference: Measure,
        potential: Arc<dyn Potential>,
        statistical: bool,
    ) -> Result<ParametrizedModel> {
        let model = ParametrizedModel {
            name: name.into(),
            param_box,
            reference,
            potential,
            statistical,
            diff: DiffConfig::default(),
        };
        model.spot_check()?;
        Ok(model)
    }

    fn spot_check(&self) -> Result<()> {
        if self.reference.is_signed() {
            return Err(invalid("reference measure must be nonnegative"));
        }
        let lattice = Lattice::for_box(
            &self.param_box,
            &LatticeConfig {
                ranges: None,
                points_per_axis: Some(if self.dim() <= 4 { 3 } else { 2 }),
            },
        )?;
        let probes = self.space().sample_points();
        for x in lattice.points() {
            for p in &probes {
                let ln = self.potential.ln_value(&x, p)?;
                if ln.is_nan() || ln == f64::INFINITY {
                    return Err(Error::NonPositiveDensity {
                        value: ln,
                        at: p.to_string(),
                    });
                }
            }
            if self.statistical {
                let mass = self.mass(&x)?;
                if (mass - 1.0).abs() > STATISTICAL_MASS_TOL {
                    return Err(invalid(format!(
                        "model `{}` is flagged statistical but has mass {mass} at {x:?}",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn with_diff(mut self, diff: DiffConfig) -> ParametrizedModel {
        self.diff = diff;
        self
    }

    pub fn renamed(mut self, name: impl Into<String>) -> ParametrizedModel {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.param_box.dim()
    }

    pub fn param_box(&self) -> &ParamBox {
        &self.param_box
    }

    pub fn space(&self) -> &SampleSpace {
        self.reference.space()
    }

    pub fn reference(&self) -> &Measure {
        &self.reference
    }

    pub fn potential(&self) -> &Arc<dyn Potential> {
        &self.potential
    }

    pub fn is_statistical(&self) -> bool {
        self.statistical
    }

    pub fn diff(&self) -> &DiffConfig {
        &self.diff
    }

    pub fn check_x(&self, x: &[f64]) -> Result<()> {
        self.param_box.check(x)
    }

    /// `p̄(x, ω)`.
    pub fn potential_value(&self, x: &[f64], p: &Point) -> Result<f64> {
        let v = self.potential.value(x, p)?;
        if v < 0.0 || v.is_nan() {
            return Err(Error::NonPositiveDensity {
                value: v,
                at: p.to_string(),
            });
        }
        Ok(v)
    }

    /// Density of `p(x)` against the base measure of the space.
    pub fn density_value(&self, x: &[f64], p: &Point) -> Result<f64> {
        let r = self.reference.density(p)?;
        if r == 0.0 {
            return Ok(0.0);
        }
        Ok(r * self.potential_value(x, p)?)
    }

    /// The measure `p(x)`.
    pub fn density_at(&self, x: &[f64]) -> Result<Measure> {
        self.check_x(x)?;
        let space = self.space().clone();
        if let Some(_) = space.atom_count() {
            let weights = space
                .atoms()?
                .iter()
                .map(|p| {
                    let v = self.density_value(x, p)?;
                    if v > 0.0 || self.reference.density(p)? == 0.0 {
                        Ok(v)
                    } else {
                        Err(Error::NonPositiveDensity {
                            value: v,
                            at: p.to_string(),
                        })
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            return Ok(Measure::from_weights(space, weights)?.with_breaks(self.breaks()));
        }
        let me = self.clone();
        let x = x.to_vec();
        Ok(Measure::from_density(space, move |p| me.density_value(&x, p)).with_breaks(self.breaks()))
    }

    pub fn breaks(&self) -> Vec<f64> {
        let mut b = self.reference.breaks().to_vec();
        b.extend(self.potential.breaks());
        b
    }

    /// `∂_V ln p̄(x, ω)`; exact callbacks take precedence over central differences.
    pub fn log_derivative(&self, x: &[f64], v: &[f64], p: &Point) -> Result<f64> {
        if v.len() != self.dim() {
            return Err(invalid(format!("direction has {} entries, model dimension is {}", v.len(), self.dim())));
        }
        if v.iter().all(|c| *c == 0.0) {
            return Ok(0.0);
        }
        if let Some(exact) = self.potential.exact_dlog(x, v, p) {
            return exact;
        }
        self.fd_log_derivative(x, v, p)
    }

    /// Central-difference `∂_V ln p̄`, ignoring exact callbacks.
    pub fn fd_log_derivative(&self, x: &[f64], v: &[f64], p: &Point) -> Result<f64> {
        central_difference(|y| self.potential.ln_value(y, p), x, v, &self.diff)
    }

    /// `∫ F(∂_{V_1} ln p̄, …, ∂_{V_r} ln p̄) dp(x)` for a vector-valued `F`.
    ///
    /// `combine` receives the log-derivatives along `dirs` at a sample point
    /// and writes the integrand components. Points where `p(x)` has zero
    /// density (underflow) contribute nothing.
    pub fn integrate_dlogs(
        &self,
        x: &[f64],
        dirs: &[Vec<f64>],
        dim: usize,
        mut combine: impl FnMut(&Point, &[f64], &mut [f64]),
    ) -> Result<Vec<Integral>> {
        self.check_x(x)?;
        let breaks = self.breaks();
        let mut dl = vec![0.0; dirs.len()];
        self.space().integrate_vec(dim, &breaks, |p, out| {
            let d = self.density_value(x, p)?;
            if d == 0.0 {
                return Ok(());
            }
            for (slot, v) in dl.iter_mut().zip(dirs) {
                *slot = self.log_derivative(x, v, p)?;
            }
            combine(p, &dl, out);
            out.iter_mut().for_each(|o| *o *= d);
            Ok(())
        })
    }

    /// `∫ dp(x)`.
    pub fn mass(&self, x: &[f64]) -> Result<f64> {
        Ok(self.integrate_dlogs(x, &[], 1, |_, _, out| out[0] = 1.0)?[0].value)
    }

    /// `∂_V ∫ dp(x)`, as `∫ ∂_V ln p̄ dp(x)` and by central differences.
    pub fn mass_derivative(&self, x: &[f64], v: &[f64]) -> Result<MassDerivative> {
        let value = self.integrate_dlogs(x, &[v.to_vec()], 1, |_, dl, out| out[0] = dl[0])?[0].value;
        let finite_difference = central_difference(|y| self.mass(y), x, v, &self.diff)?;
        Ok(MassDerivative {
            value,
            finite_difference,
        })
    }
}

fn basis(d: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; d];
    e[i] = 1.0;
    e
}

/// Standard basis directions of `R^d`.
pub fn basis_directions(d: usize) -> Vec<Vec<f64>> {
    (0..d).map(|i| basis(d, i)).collect()
}

// ---------------------------------------------------------------------------
// Expression potentials

/// `p̄` given by a single expression in `x1..xd` and `w1[, w2]`.
pub struct ExprPotential {
    expr: Expression,
}

impl ExprPotential {
    pub fn new(expr: Expression) -> ExprPotential {
        ExprPotential { expr }
    }
}

impl Potential for ExprPotential {
    fn value(&self, x: &[f64], p: &Point) -> Result<f64> {
        Ok(self.expr.eval(x, p.w())?)
    }

    fn ln_value(&self, x: &[f64], p: &Point) -> Result<f64> {
        Ok(self.expr.eval_ln(x, p.w())?)
    }

    fn describe(&self) -> String {
        self.expr.to_string()
    }
}

/// One expression in `x1..xd` per atom of a discrete space.
pub struct AtomPotential {
    space: SampleSpace,
    exprs: Vec<Expression>,
}

impl AtomPotential {
    pub fn new(space: SampleSpace, exprs: Vec<Expression>) -> Result<AtomPotential> {
        let n = space
            .atom_count()
            .ok_or_else(|| invalid("per-atom potentials need a discrete space"))?;
        if exprs.len() != n {
            return Err(invalid(format!("expected {n} atom expressions, got {}", exprs.len())));
        }
        Ok(AtomPotential { space, exprs })
    }

    fn expr(&self, p: &Point) -> Result<&Expression> {
        let i = self
            .space
            .atom_index(p)
            .ok_or_else(|| invalid(format!("{p} is not an atom")))?;
        Ok(&self.exprs[i])
    }
}

impl Potential for AtomPotential {
    fn value(&self, x: &[f64], p: &Point) -> Result<f64> {
        Ok(self.expr(p)?.eval(x, p.w())?)
    }

    fn ln_value(&self, x: &[f64], p: &Point) -> Result<f64> {
        Ok(self.expr(p)?.eval_ln(x, p.w())?)
    }

    fn describe(&self) -> String {
        let parts: Vec<String> = self.exprs.iter().map(|e| e.to_string()).collect();
        format!("[{}]", parts.join(", "))
    }
}

/// Model from a single expression potential.
pub fn expression_model(
    name: &str,
    param_box: ParamBox,
    reference: Measure,
    expr: Expression,
    statistical: bool,
) -> Result<ParametrizedModel> {
    expr.check_dims(param_box.dim(), reference.space().sample_dim())?;
    ParametrizedModel::new(name, param_box, reference, Arc::new(ExprPotential::new(expr)), statistical)
}

/// Model on a discrete space with one expression per atom.
pub fn atom_model(
    name: &str,
    param_box: ParamBox,
    reference: Measure,
    exprs: Vec<Expression>,
    statistical: bool,
) -> Result<ParametrizedModel> {
    for e in &exprs {
        e.check_dims(param_box.dim(), reference.space().sample_dim())?;
    }
    let pot = AtomPotential::new(reference.space().clone(), exprs)?;
    ParametrizedModel::new(name, param_box, reference, Arc::new(pot), statistical)
}

// ---------------------------------------------------------------------------
// Built-in families

/// `p = (x_1, …, x_{n−1}, 1 − Σ x_i)` on `Finite(n)` with counting reference.
pub struct CategoricalPotential {
    n: usize,
}

impl CategoricalPotential {
    fn atom(&self, p: &Point) -> Result<usize> {
        p.first_atom()
            .filter(|&i| i < self.n)
            .ok_or_else(|| invalid(format!("{p} is not an atom of Finite({})", self.n)))
    }
}

impl Potential for CategoricalPotential {
    fn value(&self, x: &[f64], p: &Point) -> Result<f64> {
        let i = self.atom(p)?;
        Ok(if i + 1 < self.n { x[i] } else { 1.0 - x.iter().sum::<f64>() })
    }

    fn exact_dlog(&self, x: &[f64], v: &[f64], p: &Point) -> Option<Result<f64>> {
        Some(self.atom(p).map(|i| {
            if i + 1 < self.n {
                v[i] / x[i]
            } else {
                -v.iter().sum::<f64>() / (1.0 - x.iter().sum::<f64>())
            }
        }))
    }

    fn describe(&self) -> String {
        format!("categorical({})", self.n)
    }
}

/// Categorical distributions on `n ≥ 2` atoms in mixture coordinates over
/// the box `(0, 1/(n−1))^{n−1}`, which keeps every atom positive.
pub fn categorical(n: usize) -> Result<ParametrizedModel> {
    if n < 2 {
        return Err(invalid("categorical family needs at least two atoms"));
    }
    let space = SampleSpace::finite(n)?;
    let pbox = ParamBox::cube(n - 1, 0.0, 1.0 / (n - 1) as f64)?;
    ParametrizedModel::new(
        if n == 2 { "bernoulli".to_string() } else { format!("categorical({n})") },
        pbox,
        Measure::base(space),
        Arc::new(CategoricalPotential { n }),
        true,
    )
}

/// `p(x) = (x, 1 − x)` on `Finite(2)`, `x ∈ (0, 1)`.
pub fn bernoulli() -> Result<ParametrizedModel> {
    categorical(2)
}

/// `ln p̄(x, ω) = Σ x_i h_i(ω) − ψ(x)` against given atom weights.
pub struct ExpFamilyPotential {
    stats: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl ExpFamilyPotential {
    fn log_partition_and_mean(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let n = self.weights.len();
        let theta: Vec<f64> = (0..n)
            .map(|a| x.iter().zip(&self.stats).map(|(xi, h)| xi * h[a]).sum())
            .collect();
        let top = theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let terms: Vec<f64> = (0..n).map(|a| self.weights[a] * (theta[a] - top).exp()).collect();
        let z: f64 = terms.iter().sum();
        let mean = self
            .stats
            .iter()
            .map(|h| h.iter().zip(&terms).map(|(ha, t)| ha * t).sum::<f64>() / z)
            .collect();
        (top + z.ln(), mean)
    }

    fn atom(&self, p: &Point) -> Result<usize> {
        p.first_atom()
            .filter(|&a| a < self.weights.len())
            .ok_or_else(|| invalid(format!("{p} is not an atom")))
    }
}

impl Potential for ExpFamilyPotential {
    fn value(&self, x: &[f64], p: &Point) -> Result<f64> {
        Ok(self.ln_value(x, p)?.exp())
    }

    fn ln_value(&self, x: &[f64], p: &Point) -> Result<f64> {
        let a = self.atom(p)?;
        let (psi, _) = self.log_partition_and_mean(x);
        Ok(x.iter().zip(&self.stats).map(|(xi, h)| xi * h[a]).sum::<f64>() - psi)
    }

    fn exact_dlog(&self, x: &[f64], v: &[f64], p: &Point) -> Option<Result<f64>> {
        Some(self.atom(p).map(|a| {
            let (_, mean) = self.log_partition_and_mean(x);
            v.iter()
                .zip(&self.stats)
                .zip(&mean)
                .map(|((vi, h), m)| vi * (h[a] - m))
                .sum()
        }))
    }

    fn describe(&self) -> String {
        format!("exponential family with {} statistics", self.stats.len())
    }
}

/// Exponential family on `Finite(n)` with sufficient statistics `stats[i][ω]`
/// against reference weights; parameters range over `R^d`.
pub fn exponential_family(weights: Vec<f64>, stats: Vec<Vec<f64>>) -> Result<ParametrizedModel> {
    let n = weights.len();
    if stats.is_empty() || stats.iter().any(|h| h.len() != n) {
        return Err(invalid("each statistic needs one value per atom"));
    }
    if weights.iter().any(|w| !(*w > 0.0)) {
        return Err(invalid("exponential family reference weights must be positive"));
    }
    let d = stats.len();
    let space = SampleSpace::finite(n)?;
    let reference = Measure::from_weights(space, weights.clone())?;
    ParametrizedModel::new(
        "exponential-family",
        ParamBox::real_line(d)?,
        reference,
        Arc::new(ExpFamilyPotential { stats, weights }),
        true,
    )
}

/// `p̄(t, ω) = t`, so `p(t) = t·μ`.
pub struct ScalingPotential;

impl Potential for ScalingPotential {
    fn value(&self, x: &[f64], _p: &Point) -> Result<f64> {
        Ok(x[0])
    }

    fn exact_dlog(&self, x: &[f64], v: &[f64], _p: &Point) -> Option<Result<f64>> {
        Some(Ok(v[0] / x[0]))
    }

    fn describe(&self) -> String {
        "t".into()
    }
}

/// The scaling family `t ↦ t·μ`, `t ∈ (0, ∞)`.
pub fn scaling(reference: Measure) -> Result<ParametrizedModel> {
    ParametrizedModel::new(
        "scaling",
        ParamBox::interval(0.0, f64::INFINITY)?,
        reference,
        Arc::new(ScalingPotential),
        false,
    )
}

/// `p̄(x, t) = exp(−x² t^{−1/k})` on `(0, 1)`.
pub struct RootExponentialPotential {
    k: u32,
}

impl RootExponentialPotential {
    fn coord(p: &Point) -> f64 {
        p.w()[0]
    }
}

impl Potential for RootExponentialPotential {
    fn value(&self, x: &[f64], p: &Point) -> Result<f64> {
        Ok(self.ln_value(x, p)?.exp())
    }

    fn ln_value(&self, x: &[f64], p: &Point) -> Result<f64> {
        let t = Self::coord(p);
        Ok(-x[0] * x[0] * t.powf(-1.0 / self.k as f64))
    }

    fn exact_dlog(&self, x: &[f64], v: &[f64], p: &Point) -> Option<Result<f64>> {
        let t = Self::coord(p);
        Some(Ok(-2.0 * x[0] * v[0] * t.powf(-1.0 / self.k as f64)))
    }

    fn describe(&self) -> String {
        format!("exp(-x1^2 / w1^(1/{}))", self.k)
    }
}

/// The family `x ↦ exp(−x²/t^{1/k}) dt` on `(0, 1)`, `x ∈ R`, `k ∈ 2..=6`.
///
/// Every `p(x)` with `x ≠ 0` has all moments of `∂_x ln p̄ = −2x t^{−1/k}`
/// below order `2k − 1`, while `p(0) = dt`; `dt` and `p(x)` are not similar.
pub fn root_exponential_family(k: u32) -> Result<ParametrizedModel> {
    if !(2..=6).contains(&k) {
        return Err(invalid(format!("root-exponential family needs k in 2..=6, got {k}")));
    }
    ParametrizedModel::new(
        format!("root-exponential(k={k})"),
        ParamBox::real_line(1)?,
        Measure::base(SampleSpace::grid(0.0, 1.0)?),
        Arc::new(RootExponentialPotential { k }),
        false,
    )
}

/// `ln p̄(x, ω) = (x − x₀)·τ_{κ(ω)}`.
pub struct StepPotential {
    statistic: Statistic,
    tau: Vec<f64>,
    x0: f64,
}

impl StepPotential {
    fn tau_at(&self, p: &Point) -> Result<f64> {
        let class = self.statistic.class_index(p)?;
        Ok(self.tau[class])
    }
}

impl Potential for StepPotential {
    fn value(&self, x: &[f64], p: &Point) -> Result<f64> {
        Ok(self.ln_value(x, p)?.exp())
    }

    fn ln_value(&self, x: &[f64], p: &Point) -> Result<f64> {
        Ok((x[0] - self.x0) * self.tau_at(p)?)
    }

    fn exact_dlog(&self, _x: &[f64], v: &[f64], p: &Point) -> Option<Result<f64>> {
        Some(self.tau_at(p).map(|t| v[0] * t))
    }

    fn breaks(&self) -> Vec<f64> {
        self.statistic.cuts().to_vec()
    }

    fn describe(&self) -> String {
        format!("step(tau={:?}, x0={})", self.tau, self.x0)
    }
}

/// One-parameter model on `(0, 1)` with `p(x₀) = μ` and
/// `∂_x ln p̄ = Σ τ_i χ_{D_i}`, where `D_i` are the classes of `κ`.
pub fn make_step_model(mu: &Measure, kappa: &Statistic, tau: Vec<f64>, x0: f64) -> Result<ParametrizedModel> {
    if kappa.source() != mu.space() {
        return Err(Error::PartitionMismatch("statistic is not defined on the measure's space".into()));
    }
    let classes = kappa
        .class_count()
        .ok_or_else(|| Error::PartitionMismatch("step models need a statistic with finitely many classes".into()))?;
    if tau.len() != classes {
        return Err(Error::PartitionMismatch(format!(
            "{} coefficients for {classes} classes",
            tau.len()
        )));
    }
    if !(x0 > 0.0 && x0 < 1.0) {
        return Err(invalid(format!("anchor {x0} must lie in (0, 1)")));
    }
    ParametrizedModel::new(
        "step",
        ParamBox::interval(0.0, 1.0)?,
        mu.clone(),
        Arc::new(StepPotential {
            statistic: kappa.clone(),
            tau,
            x0,
        }),
        false,
    )
}

// ---------------------------------------------------------------------------
// Composite models

/// `p̄_N(y, ω) = p̄_M(f(y), ω)`.
pub struct ReparamPotential {
    base: ParametrizedModel,
    map: Vec<Expression>,
    diff: DiffConfig,
}

impl ReparamPotential {
    fn image(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.map.iter().map(|f| Ok(f.eval(y, &[])?)).collect()
    }
}

impl Potential for ReparamPotential {
    fn value(&self, y: &[f64], p: &Point) -> Result<f64> {
        self.base.potential_value(&self.image(y)?, p)
    }

    fn ln_value(&self, y: &[f64], p: &Point) -> Result<f64> {
        self.base.potential().ln_value(&self.image(y)?, p)
    }

    fn exact_dlog(&self, y: &[f64], v: &[f64], p: &Point) -> Option<Result<f64>> {
        let run = || -> Result<f64> {
            let x = self.image(y)?;
            let pushed = map_differential(&self.map, y, v, &self.diff)?;
            self.base.log_derivative(&x, &pushed, p)
        };
        Some(run())
    }

    fn breaks(&self) -> Vec<f64> {
        self.base.potential().breaks()
    }

    fn describe(&self) -> String {
        let parts: Vec<String> = self.map.iter().map(|e| e.to_string()).collect();
        format!("{} o ({})", self.base.potential().describe(), parts.join(", "))
    }
}

/// `J_f(y)·V` for a map given by expressions in `x1..xd`.
///
/// Along a single axis the realized stencil points are used as the step, so
/// linear maps are differentiated exactly.
pub fn map_differential(map: &[Expression], y: &[f64], v: &[f64], diff: &DiffConfig) -> Result<Vec<f64>> {
    let scale = v.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 {
        return Ok(vec![0.0; map.len()]);
    }
    let unit: Vec<f64> = v.iter().map(|c| c / scale).collect();
    let h = diff.step(y, &unit);
    let plus: Vec<f64> = y.iter().zip(&unit).map(|(a, u)| a + h * u).collect();
    let minus: Vec<f64> = y.iter().zip(&unit).map(|(a, u)| a - h * u).collect();
    let active: Vec<usize> = (0..unit.len()).filter(|&i| unit[i] != 0.0).collect();
    let denom = if let [i] = active[..] {
        (plus[i] - minus[i]) / unit[i]
    } else {
        2.0 * h
    };
    map.iter()
        .map(|f| Ok(scale * (f.eval(&plus, &[])? - f.eval(&minus, &[])?) / denom))
        .collect()
}

/// Pulls a model back along `f: N-box → M-box` given by one expression per
/// coordinate of `M` in the variables `x1..x_{dim N}`. `f` is checked to map
/// the default lattice of `N` into the box of `M`.
pub fn reparametrize(m: &ParametrizedModel, map: Vec<Expression>, n_box: ParamBox) -> Result<ParametrizedModel> {
    if map.len() != m.dim() {
        return Err(invalid(format!("map has {} components, model dimension is {}", map.len(), m.dim())));
    }
    for f in &map {
        f.check_dims(n_box.dim(), 0)?;
    }
    let lattice = Lattice::for_box(&n_box, &LatticeConfig::default())?;
    for y in lattice.points() {
        let x: Vec<f64> = map.iter().map(|f| f.eval(&y, &[])).collect::<std::result::Result<_, _>>()?;
        m.check_x(&x)?;
    }
    let pot = ReparamPotential {
        base: m.clone(),
        map,
        diff: m.diff().clone(),
    };
    ParametrizedModel::new(
        format!("{} (reparametrized)", m.name()),
        n_box,
        m.reference().clone(),
        Arc::new(pot),
        m.is_statistical(),
    )
}

/// `p̄((x, t), ω) = t·p̄(x, ω)`.
pub struct ScaledPotential {
    base: ParametrizedModel,
}

impl Potential for ScaledPotential {
    fn value(&self, x: &[f64], p: &Point) -> Result<f64> {
        let (inner, t) = x.split_at(x.len() - 1);
        Ok(t[0] * self.base.potential_value(inner, p)?)
    }

    fn ln_value(&self, x: &[f64], p: &Point) -> Result<f64> {
        let (inner, t) = x.split_at(x.len() - 1);
        Ok(t[0].ln() + self.base.potential().ln_value(inner, p)?)
    }

    fn exact_dlog(&self, x: &[f64], v: &[f64], p: &Point) -> Option<Result<f64>> {
        let (inner, t) = x.split_at(x.len() - 1);
        let (vi, vt) = v.split_at(v.len() - 1);
        Some(self.base.log_derivative(inner, vi, p).map(|d| d + vt[0] / t[0]))
    }

    fn breaks(&self) -> Vec<f64> {
        self.base.potential().breaks()
    }

    fn describe(&self) -> String {
        format!("t * {}", self.base.potential().describe())
    }
}

/// `(x, t) ↦ t·p(x)` over `M × (0, ∞)`.
pub fn scale_model(m: &ParametrizedModel) -> Result<ParametrizedModel> {
    let mut lo = m.param_box().lo.clone();
    let mut hi = m.param_box().hi.clone();
    lo.push(0.0);
    hi.push(f64::INFINITY);
    ParametrizedModel::new(
        format!("{} (scaled)", m.name()),
        ParamBox::new(lo, hi)?,
        m.reference().clone(),
        Arc::new(ScaledPotential { base: m.clone() }),
        false,
    )
}

/// `κ_*(p̄)(x, y) = dκ_*p(x) / dκ_*μ` evaluated by fiber integrals.
pub struct PushforwardPotential {
    base: ParametrizedModel,
    statistic: Statistic,
}

impl PushforwardPotential {
    /// `(∫_fiber p̄ dμ, ∫_fiber ∂_V ln p̄ · p̄ dμ)`.
    fn fiber_moments(&self, x: &[f64], v: Option<&[f64]>, y: &Point) -> Result<(f64, f64)> {
        let breaks = self.base.breaks();
        let r = self.statistic.fiber_integrate_vec(y, 2, &breaks, |p, out| {
            let d = self.base.density_value(x, p)?;
            if d == 0.0 {
                return Ok(());
            }
            out[0] = d;
            if let Some(v) = v {
                out[1] = d * self.base.log_derivative(x, v, p)?;
            }
            Ok(())
        })?;
        Ok((r[0].value, r[1].value))
    }

    fn reference_mass(&self, y: &Point) -> Result<f64> {
        let reference = self.base.reference();
        let r = self
            .statistic
            .fiber_integrate_vec(y, 1, reference.breaks(), |p, out| {
                out[0] = reference.density(p)?;
                Ok(())
            })?;
        Ok(r[0].value)
    }
}

impl Potential for PushforwardPotential {
    fn value(&self, x: &[f64], y: &Point) -> Result<f64> {
        let (num, _) = self.fiber_moments(x, None, y)?;
        let den = self.reference_mass(y)?;
        if den == 0.0 {
            return Err(Error::ZeroDenominator { at: y.to_string() });
        }
        Ok(num / den)
    }

    fn exact_dlog(&self, x: &[f64], v: &[f64], y: &Point) -> Option<Result<f64>> {
        Some(self.fiber_moments(x, Some(v), y).and_then(|(mass, moment)| {
            if mass == 0.0 {
                Err(Error::ZeroDenominator { at: y.to_string() })
            } else {
                Ok(moment / mass)
            }
        }))
    }

    fn describe(&self) -> String {
        format!("pushforward of {}", self.base.potential().describe())
    }
}

/// The model `x ↦ κ_*p(x)` on the target of `κ`, with reference `κ_*μ`.
pub fn pushforward_model(m: &ParametrizedModel, kappa: &Statistic) -> Result<ParametrizedModel> {
    if kappa.source() != m.space() {
        return Err(Error::SpaceMismatch(format!(
            "statistic source {} vs model space {}",
            kappa.source(),
            m.space()
        )));
    }
    if kappa.is_identity() {
        return Ok(m.clone());
    }
    let reference = kappa.pushforward(m.reference())?;
    ParametrizedModel::new(
        format!("{} (pushforward)", m.name()),
        m.param_box().clone(),
        reference,
        Arc::new(PushforwardPotential {
            base: m.clone(),
            statistic: kappa.clone(),
        }),
        m.is_statistical(),
    )
    .map(|pm| pm.with_diff(m.diff().clone()))
}

// ---------------------------------------------------------------------------
// k-integrability

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum IntegrabilityVerdict {
    Pass,
    /// Norm jump between lattice neighbours above the continuity threshold.
    Fail {
        point: Vec<f64>,
        neighbor: Vec<f64>,
        direction: usize,
        jump: f64,
    },
    Divergent {
        point: Vec<f64>,
        direction: usize,
        evidence: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergentEntry {
    pub point: Vec<f64>,
    pub direction: usize,
    pub evidence: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegrabilityReport {
    pub k: u32,
    pub points: Vec<Vec<f64>>,
    /// `‖∂_{e_i} ln p̄‖_{L^k(p(x))}` per point and basis direction; `None` if divergent.
    pub norms: Vec<Vec<Option<f64>>>,
    /// Largest neighbour jump relative to the largest norm in that direction.
    pub max_jump: f64,
    pub continuity_threshold: f64,
    pub divergent: Vec<DivergentEntry>,
    pub verdict: IntegrabilityVerdict,
}

impl IntegrabilityReport {
    pub fn passed(&self) -> bool {
        self.verdict == IntegrabilityVerdict::Pass
    }

    pub fn divergent_at(&self, x: &[f64]) -> bool {
        self.divergent.iter().any(|d| d.point == x)
    }
}

/// Evaluates `(∫ |∂_{e_i} ln p̄|^k dp(x))^{1/k}` over a lattice, flags
/// divergent integrals and checks the bounded-jump continuity proxy.
pub fn check_k_integrability(
    m: &ParametrizedModel,
    k: u32,
    lattice: &Lattice,
    continuity_threshold: f64,
) -> Result<IntegrabilityReport> {
    if k == 0 {
        return Err(invalid("integrability order must be at least 1"));
    }
    let d = m.dim();
    let dirs = basis_directions(d);
    let points = lattice.points();
    let mut norms = Vec::with_capacity(points.len());
    let mut divergent = Vec::new();
    for x in &points {
        let mut row = Vec::with_capacity(d);
        for (i, v) in dirs.iter().enumerate() {
            let r = m.integrate_dlogs(x, std::slice::from_ref(v), 1, |_, dl, out| {
                out[0] = dl[0].abs().powi(k as i32);
            });
            match r {
                Ok(vals) => row.push(Some(vals[0].value.powf(1.0 / k as f64))),
                Err(Error::DivergentIntegral { level, evidence }) => {
                    divergent.push(DivergentEntry {
                        point: x.clone(),
                        direction: i,
                        evidence: format!("level {level}: {evidence}"),
                    });
                    row.push(None);
                }
                Err(e) => return Err(e),
            }
        }
        norms.push(row);
    }

    let mut max_jump = 0.0f64;
    let mut worst: Option<(usize, usize, usize, f64)> = None;
    for i in 0..d {
        let scale = norms
            .iter()
            .filter_map(|r| r[i])
            .fold(0.0f64, f64::max);
        if scale == 0.0 {
            continue;
        }
        for (a, b) in lattice.neighbor_pairs() {
            if let (Some(na), Some(nb)) = (norms[a][i], norms[b][i]) {
                let jump = (na - nb).abs() / scale;
                if jump > max_jump {
                    max_jump = jump;
                    worst = Some((a, b, i, jump));
                }
            }
        }
    }

    let verdict = if let Some(first) = divergent.first() {
        IntegrabilityVerdict::Divergent {
            point: first.point.clone(),
            direction: first.direction,
            evidence: first.evidence.clone(),
        }
    } else {
        match worst {
            Some((a, b, i, jump)) if jump > continuity_threshold => IntegrabilityVerdict::Fail {
                point: points[a].clone(),
                neighbor: points[b].clone(),
                direction: i,
                jump,
            },
            _ => IntegrabilityVerdict::Pass,
        }
    };
    Ok(IntegrabilityReport {
        k,
        points,
        norms,
        max_jump,
        continuity_threshold,
        divergent,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::Statistic;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn bernoulli_density() {
        let m = bernoulli().unwrap();
        let mu = m.density_at(&[0.25]).unwrap();
        assert_eq!(mu.weights().unwrap(), &[0.25, 0.75]);
        assert!(matches!(m.density_at(&[1.0]), Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn scaling_model_density_and_mass() {
        let mu = Measure::uniform(SampleSpace::finite(3).unwrap()).unwrap();
        let m = scaling(mu.clone()).unwrap();
        let half = m.density_at(&[0.5]).unwrap();
        for (a, b) in half.weights().unwrap().iter().zip(mu.weights().unwrap()) {
            assert!((a - 0.5 * b).abs() < 1e-15);
        }
        assert!(close(m.mass(&[0.7]).unwrap(), 0.7, 1e-14));
        let md = m.mass_derivative(&[0.7], &[1.0]).unwrap();
        assert!(close(md.value, 1.0, 1e-14));
        assert!(close(md.finite_difference, 1.0, 1e-8));
    }

    #[test]
    fn root_exponential_at_zero_is_lebesgue() {
        let m = root_exponential_family(3).unwrap();
        let p = m.density_at(&[0.0]).unwrap();
        for t in [0.01, 0.5, 0.99] {
            assert_eq!(p.density(&Point::real(t)).unwrap(), 1.0);
        }
        assert!(close(m.mass(&[0.0]).unwrap(), 1.0, 1e-12));
    }

    #[test]
    fn log_derivative_examples() {
        let cat = bernoulli().unwrap();
        let d = cat.log_derivative(&[0.5], &[1.0], &Point::atom(1)).unwrap();
        assert!(close(d, -2.0, 1e-15));
        assert_eq!(cat.log_derivative(&[0.5], &[0.0], &Point::atom(0)).unwrap(), 0.0);

        let mu = Measure::uniform(SampleSpace::finite(3).unwrap()).unwrap();
        let kappa = Statistic::from_classes(mu.space().clone(), &[vec![0], vec![1, 2]]).unwrap();
        let step = make_step_model(&mu, &kappa, vec![2.0, -1.0], 0.5).unwrap();
        for x in [0.1, 0.5, 0.9] {
            assert_eq!(step.log_derivative(&[x], &[1.0], &Point::atom(0)).unwrap(), 2.0);
            assert_eq!(step.log_derivative(&[x], &[1.0], &Point::atom(2)).unwrap(), -1.0);
        }
    }

    #[test]
    fn step_model_anchors_at_reference() {
        let mu = Measure::uniform(SampleSpace::finite(3).unwrap()).unwrap();
        let kappa = Statistic::from_classes(mu.space().clone(), &[vec![0], vec![1, 2]]).unwrap();
        let step = make_step_model(&mu, &kappa, vec![1.0, -1.0], 0.5).unwrap();
        assert_eq!(step.density_at(&[0.5]).unwrap().weights(), mu.weights());
        assert!(make_step_model(&mu, &kappa, vec![1.0], 0.5).is_err());
    }

    #[test]
    fn statistical_flag_is_checked() {
        let sp = SampleSpace::finite(2).unwrap();
        let bad = atom_model(
            "bad",
            ParamBox::interval(0.0, 1.0).unwrap(),
            Measure::base(sp),
            vec!["x1".parse().unwrap(), "1".parse().unwrap()],
            true,
        );
        assert!(bad.is_err());
    }

    #[test]
    fn positivity_is_checked() {
        let sp = SampleSpace::finite(2).unwrap();
        let bad = atom_model(
            "bad",
            ParamBox::interval(0.0, 2.0).unwrap(),
            Measure::base(sp),
            vec!["x1".parse().unwrap(), "1 - x1".parse().unwrap()],
            true,
        );
        assert!(bad.is_err());
    }

    #[test]
    fn mass_derivative_identity_on_catalog() {
        let mu = Measure::from_weights(SampleSpace::finite(3).unwrap(), vec![0.2, 0.5, 1.0]).unwrap();
        let kappa = Statistic::from_classes(mu.space().clone(), &[vec![0, 2], vec![1]]).unwrap();
        let models = vec![
            (bernoulli().unwrap(), vec![0.3]),
            (categorical(4).unwrap(), vec![0.1, 0.2, 0.25]),
            (
                exponential_family(vec![1.0, 2.0, 0.5], vec![vec![1.0, -1.0, 0.5]]).unwrap(),
                vec![0.4],
            ),
            (scaling(mu.clone()).unwrap(), vec![1.3]),
            (make_step_model(&mu, &kappa, vec![0.7, -2.0], 0.4).unwrap(), vec![0.6]),
            (root_exponential_family(3).unwrap(), vec![0.8]),
        ];
        for (m, x) in models {
            let v = vec![1.0; m.dim()];
            let md = m.mass_derivative(&x, &v).unwrap();
            assert!(
                (md.finite_difference - md.value).abs() <= 1e-6 * (1.0 + md.value.abs()),
                "{}: {md:?}",
                m.name()
            );
            if m.is_statistical() {
                assert!(md.value.abs() < 1e-8);
                assert!(close(m.mass(&x).unwrap(), 1.0, 1e-12));
            }
        }
    }

    #[test]
    fn exact_derivatives_agree_with_differences() {
        let models = vec![
            categorical(3).unwrap(),
            exponential_family(vec![1.0, 2.0, 0.5], vec![vec![1.0, -1.0, 0.5], vec![0.0, 2.0, 1.0]]).unwrap(),
            root_exponential_family(2).unwrap(),
        ];
        for m in models {
            let lattice = Lattice::for_box(m.param_box(), &LatticeConfig::default()).unwrap();
            for x in lattice.points() {
                for p in m.space().sample_points() {
                    for v in basis_directions(m.dim()) {
                        let exact = m.log_derivative(&x, &v, &p).unwrap();
                        let fd = m.fd_log_derivative(&x, &v, &p).unwrap();
                        assert!(
                            (exact - fd).abs() <= 1e-6 * exact.abs().max(1e-3),
                            "{} at {x:?}, {p}: {exact} vs {fd}",
                            m.name()
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn reparametrization() {
        let b = bernoulli().unwrap();
        let logistic = reparametrize(
            &b,
            vec!["1 / (1 + exp(-x1))".parse().unwrap()],
            ParamBox::interval(-10.0, 10.0).unwrap(),
        )
        .unwrap();
        // d/dθ ln σ(θ) = 1 − σ(θ)
        let theta: f64 = 0.7;
        let s = 1.0 / (1.0 + (-theta).exp());
        let d = logistic.log_derivative(&[theta], &[1.0], &Point::atom(0)).unwrap();
        assert!(close(d, 1.0 - s, 1e-8));

        let ident = reparametrize(&b, vec!["x1".parse().unwrap()], ParamBox::interval(0.0, 1.0).unwrap()).unwrap();
        for x in [0.1, 0.25, 0.9] {
            for a in 0..2 {
                let p = Point::atom(a);
                assert_eq!(
                    ident.log_derivative(&[x], &[1.0], &p).unwrap(),
                    b.log_derivative(&[x], &[1.0], &p).unwrap()
                );
            }
        }

        let constant = reparametrize(&b, vec!["0.3".parse().unwrap()], ParamBox::interval(0.0, 1.0).unwrap()).unwrap();
        assert_eq!(constant.log_derivative(&[0.6], &[1.0], &Point::atom(0)).unwrap(), 0.0);

        let escapes = reparametrize(&b, vec!["2 * x1".parse().unwrap()], ParamBox::interval(0.0, 1.0).unwrap());
        assert!(matches!(escapes, Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn bounded_log_density_is_integrable_for_all_orders() {
        let m = categorical(3).unwrap();
        let lattice = Lattice::uniform(&[(0.1, 0.4), (0.1, 0.4)], 7).unwrap();
        let r = check_k_integrability(&m, 8, &lattice, DEFAULT_CONTINUITY_THRESHOLD).unwrap();
        assert!(r.passed(), "{:?}", r.verdict);
    }

    /// Γ(s, z) for integer s ≤ 1 by downward recurrence from Γ(0, z) = E1(z).
    fn upper_gamma(s: i32, z: f64) -> f64 {
        let mut e1 = -0.577_215_664_901_532_9 - z.ln();
        let mut term = 1.0;
        for n in 1..200 {
            term *= -z / n as f64;
            e1 -= term / n as f64;
        }
        let mut g = if s == 1 { (-z).exp() } else { e1 };
        let mut k = 0;
        while k > s {
            // Γ(k−1, z) = (Γ(k, z) − z^{k−1} e^{−z}) / (k−1)
            g = (g - z.powi(k - 1) * (-z).exp()) / (k - 1) as f64;
            k -= 1;
        }
        g
    }

    fn root_exp_moment(k: i32, j: i32, x: f64) -> f64 {
        // substitute u = x² t^{−1/k}
        k as f64 * 2f64.powi(j) * x.abs().powi(2 * k - j) * upper_gamma(j - k, x * x)
    }

    #[test]
    fn root_exponential_square_integrable() {
        let m = root_exponential_family(3).unwrap();
        let lattice = Lattice::uniform(&[(-1.0, 1.0)], 21).unwrap();
        let r = check_k_integrability(&m, 2, &lattice, DEFAULT_CONTINUITY_THRESHOLD).unwrap();
        assert!(r.passed(), "{:?}", r.verdict);
        for (x, norm) in r.points.iter().zip(&r.norms) {
            let i2 = norm[0].unwrap().powi(2);
            if x[0] == 0.0 {
                assert_eq!(i2, 0.0);
                continue;
            }
            let oracle = root_exp_moment(3, 2, x[0]);
            assert!((i2 - oracle).abs() <= 1e-7 * oracle, "x={}: {i2} vs {oracle}", x[0]);
            // the exponential factor is only bounded by 1, not 1/e
            assert!(i2 <= (2.0 * x[0]).powi(2) * 3.0 * (1.0 + 1e-9));
        }
    }

    #[test]
    fn one_over_e_bound_needs_unit_distance() {
        // exp(−x² t^{−1/k}) ≤ 1/e needs t ≤ x^{2k}, which covers (0,1) only for |x| ≥ 1
        let bound = |x: f64| (2.0 * x).powi(2) / std::f64::consts::E * 3.0;
        for x in [1.0, 1.5, 3.0] {
            assert!(root_exp_moment(3, 2, x) <= bound(x));
        }
        assert!(root_exp_moment(3, 2, 0.6) > bound(0.6));
    }

    #[test]
    fn root_exponential_high_order_diverges_near_zero() {
        // moments up to order 5 are finite everywhere; the order-7 norm blows
        // up as x → 0, which shows as a continuity jump between neighbours
        let m = root_exponential_family(3).unwrap();
        let lattice = Lattice::from_axes(vec![vec![1e-3, 0.5]]).unwrap();
        let r = check_k_integrability(&m, 7, &lattice, DEFAULT_CONTINUITY_THRESHOLD).unwrap();
        assert!(!r.passed());
    }
}
