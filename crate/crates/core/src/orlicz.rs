//! Orlicz norms, membership in the exponential tangent space, the
//! similarity preorder `μ′ ≼ μ` and related diagnostics.
//!
//! Membership questions quantify over an exponent (`t ≠ 0` or `p > 1`), so
//! they are answered by a witness search on a geometric grid. Each trial is
//! an integral judged by the quadrature divergence detector; a trial that
//! neither converges nor is flagged divergent makes the verdict inconclusive.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::models::ParametrizedModel;
use crate::quadrature::{Integral, LevelTrace};
use crate::spaces::{Measure, Point, SampleSpace};

/// Bisection stops when the bracket is this narrow relative to its top.
pub const NORM_RTOL: f64 = 1e-10;
/// Bracket search gives up beyond `2^64` times the starting scale.
const BRACKET_DOUBLINGS: i32 = 64;
/// Exponential tangent search: `t = 2^0, 2^-1, …, 2^-20`.
const TANGENT_STEPS: i32 = 20;
/// Preorder search: `p = 1 + 2^0, 1 + 2^-1, …, 1 + 2^-14`.
const PREORDER_STEPS: i32 = 14;
/// A trial only asks whether the integral is finite, so a bounded refinement
/// sequence within this relative error counts as converged.
const FINITE_RTOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum YoungBase {
    CoshMinusOne,
    PowerP { p: f64 },
    ExpAbsMinusLinear,
}

/// `φ(t) = base(λ·t)^q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct YoungFunction {
    pub base: YoungBase,
    pub stretch: f64,
    pub power: f64,
}

impl YoungFunction {
    pub fn new(base: YoungBase) -> Result<YoungFunction> {
        if let YoungBase::PowerP { p } = base {
            if !(p > 1.0 && p.is_finite()) {
                return Err(invalid(format!("power Young function needs p > 1, got {p}")));
            }
        }
        Ok(YoungFunction {
            base,
            stretch: 1.0,
            power: 1.0,
        })
    }

    pub fn cosh_minus_one() -> YoungFunction {
        YoungFunction::new(YoungBase::CoshMinusOne).expect("valid base")
    }

    pub fn power_p(p: f64) -> Result<YoungFunction> {
        YoungFunction::new(YoungBase::PowerP { p })
    }

    pub fn exp_abs_minus_linear() -> YoungFunction {
        YoungFunction::new(YoungBase::ExpAbsMinusLinear).expect("valid base")
    }

    /// `t ↦ φ(λt)`.
    pub fn stretched(mut self, lambda: f64) -> Result<YoungFunction> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(invalid(format!("stretch must be positive, got {lambda}")));
        }
        self.stretch *= lambda;
        Ok(self)
    }

    /// `t ↦ φ(t)^q`.
    pub fn powered(mut self, q: f64) -> Result<YoungFunction> {
        if !(q >= 1.0 && q.is_finite()) {
            return Err(invalid(format!("power must be at least 1, got {q}")));
        }
        self.power *= q;
        Ok(self)
    }

    /// Bases growing like `e^{|t|}`, whose Orlicz space is the exponential
    /// tangent space.
    pub fn is_exponential(&self) -> bool {
        !matches!(self.base, YoungBase::PowerP { .. })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let s = (self.stretch * t).abs();
        let b = match self.base {
            // 2 sinh²(s/2) keeps precision near zero
            YoungBase::CoshMinusOne => 2.0 * (0.5 * s).sinh().powi(2),
            YoungBase::PowerP { p } => s.powf(p),
            YoungBase::ExpAbsMinusLinear => {
                if s < 1e-4 {
                    s * s * (0.5 + s / 6.0)
                } else {
                    s.exp_m1() - s
                }
            }
        };
        if self.power == 1.0 {
            b
        } else {
            b.powf(self.power)
        }
    }
}

/// `∫ φ(f/a) dμ`.
fn modular(f: &dyn Fn(&Point) -> Result<f64>, mu: &Measure, phi: &YoungFunction, a: f64) -> Result<Integral> {
    mu.integrate(|p| {
        let v = phi.eval(f(p)? / a);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::DivergentIntegral {
                level: 0,
                evidence: format!("φ(f/{a:e}) overflows at {p}"),
            })
        }
    })
}

/// Whether `∫ φ(f/a) dμ ≤ 1`; divergent or unconverged modulars count as `> 1`.
fn modular_at_most_one(f: &dyn Fn(&Point) -> Result<f64>, mu: &Measure, phi: &YoungFunction, a: f64) -> Result<bool> {
    match modular(f, mu, phi, a) {
        Ok(i) => Ok(i.converged && i.value <= 1.0),
        Err(Error::DivergentIntegral { .. }) => Ok(false),
        Err(e) => Err(e),
    }
}

/// `inf { a > 0 : ∫ φ(f/a) dμ ≤ 1 }` by bracketing and bisection.
pub fn orlicz_norm(f: &dyn Fn(&Point) -> Result<f64>, mu: &Measure, phi: &YoungFunction) -> Result<f64> {
    if mu.is_signed() {
        return Err(invalid("Orlicz norms need a nonnegative measure"));
    }
    let l1 = match mu.integrate(|p| Ok(f(p)?.abs())) {
        Ok(i) => i.value,
        Err(Error::DivergentIntegral { .. }) => {
            return Err(Error::NotInOrliczSpace { limit: f64::INFINITY });
        }
        Err(e) => return Err(e),
    };
    if l1 == 0.0 {
        return Ok(0.0);
    }
    if phi.is_exponential() && !in_exponential_tangent(f, mu)?.holds() {
        // exponential-type φ share their space with e^{t|f|} ∈ L¹; the
        // bracket search alone cannot see blow-up below quadrature resolution
        return Err(Error::NotInOrliczSpace { limit: f64::INFINITY });
    }
    let scale = l1 / mu.mass()?.max(f64::MIN_POSITIVE);
    let mut hi = scale;
    let mut doublings = 0;
    while !modular_at_most_one(f, mu, phi, hi)? {
        doublings += 1;
        if doublings > BRACKET_DOUBLINGS {
            return Err(Error::NotInOrliczSpace { limit: hi });
        }
        hi *= 2.0;
    }
    let mut lo = hi / 2.0;
    while modular_at_most_one(f, mu, phi, lo)? {
        hi = lo;
        lo /= 2.0;
        if lo < scale * 2f64.powi(-BRACKET_DOUBLINGS) {
            return Ok(hi);
        }
    }
    while hi - lo > NORM_RTOL * hi {
        let mid = 0.5 * (lo + hi);
        if modular_at_most_one(f, mu, phi, mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StretchCheck {
    pub lambda: f64,
    /// `‖f‖_{φ(λ·)}`.
    pub stretched_norm: f64,
    /// `λ‖f‖_φ`.
    pub scaled_norm: f64,
    pub residual: f64,
}

/// Compares `‖f‖_{φ(λ·)}` with `λ‖f‖_φ` by two independent bisections.
pub fn stretch_equivalence_check(
    f: &dyn Fn(&Point) -> Result<f64>,
    mu: &Measure,
    phi: &YoungFunction,
    lambda: f64,
) -> Result<StretchCheck> {
    let stretched_norm = orlicz_norm(f, mu, &phi.stretched(lambda)?)?;
    let scaled_norm = lambda * orlicz_norm(f, mu, phi)?;
    Ok(StretchCheck {
        lambda,
        stretched_norm,
        scaled_norm,
        residual: (stretched_norm - scaled_norm).abs(),
    })
}

// ---------------------------------------------------------------------------
// Verdicts

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum OrliczStatus {
    Holds { witness: f64 },
    Fails,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialOutcome {
    Converged,
    Divergent,
    Unconverged,
    /// `μ′` charges a set where `μ` vanishes.
    NotAbsolutelyContinuous,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentTrial {
    pub exponent: f64,
    pub outcome: TrialOutcome,
    pub value: Option<f64>,
    pub evidence: Option<String>,
    pub trace: Vec<LevelTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrliczVerdict {
    pub status: OrliczStatus,
    pub trials: Vec<ExponentTrial>,
}

impl OrliczVerdict {
    pub fn holds(&self) -> bool {
        matches!(self.status, OrliczStatus::Holds { .. })
    }

    pub fn fails(&self) -> bool {
        self.status == OrliczStatus::Fails
    }

    pub fn witness(&self) -> Option<f64> {
        match self.status {
            OrliczStatus::Holds { witness } => Some(witness),
            _ => None,
        }
    }

    /// Evidence strings of the divergent trials.
    pub fn divergence_evidence(&self) -> Vec<&str> {
        self.trials
            .iter()
            .filter(|t| t.outcome == TrialOutcome::Divergent)
            .filter_map(|t| t.evidence.as_deref())
            .collect()
    }
}

fn trial(exponent: f64, r: Result<Integral>) -> Result<ExponentTrial> {
    Ok(match r {
        Ok(i) => ExponentTrial {
            exponent,
            outcome: if i.converged || i.abs_error <= FINITE_RTOL * i.value.abs() {
                TrialOutcome::Converged
            } else {
                TrialOutcome::Unconverged
            },
            value: Some(i.value),
            evidence: None,
            trace: i.trace,
        },
        Err(Error::DivergentIntegral { level, evidence }) => ExponentTrial {
            exponent,
            outcome: TrialOutcome::Divergent,
            value: None,
            evidence: Some(format!("level {level}: {evidence}")),
            trace: Vec::new(),
        },
        Err(Error::ZeroDenominator { at }) => ExponentTrial {
            exponent,
            outcome: TrialOutcome::NotAbsolutelyContinuous,
            value: None,
            evidence: Some(format!("reference vanishes at {at} where the measure does not")),
            trace: Vec::new(),
        },
        Err(e) => return Err(e),
    })
}

/// Runs trials in order and stops at the first convergent one.
fn search(exponents: impl Iterator<Item = f64>, mut run: impl FnMut(f64) -> Result<Integral>) -> Result<OrliczVerdict> {
    let mut trials = Vec::new();
    for e in exponents {
        let t = trial(e, run(e))?;
        let outcome = t.outcome;
        trials.push(t);
        match outcome {
            TrialOutcome::Converged => {
                return Ok(OrliczVerdict {
                    status: OrliczStatus::Holds { witness: e },
                    trials,
                })
            }
            TrialOutcome::NotAbsolutelyContinuous => {
                return Ok(OrliczVerdict {
                    status: OrliczStatus::Fails,
                    trials,
                })
            }
            _ => {}
        }
    }
    let status = if trials.iter().any(|t| t.outcome == TrialOutcome::Unconverged) {
        OrliczStatus::Inconclusive
    } else {
        OrliczStatus::Fails
    };
    Ok(OrliczVerdict { status, trials })
}

/// `t = 1, ½, …, 2^-20`.
pub fn tangent_grid() -> impl Iterator<Item = f64> {
    (0..=TANGENT_STEPS).map(|k| 2f64.powi(-k))
}

/// `p = 2, 1.5, 1.25, …, 1 + 2^-14`.
pub fn preorder_grid() -> impl Iterator<Item = f64> {
    (0..=PREORDER_STEPS).map(|k| 1.0 + 2f64.powi(-k))
}

/// Whether `e^{t|f|} ∈ L¹(μ)` for some `t` on the tangent grid.
pub fn in_exponential_tangent(f: &dyn Fn(&Point) -> Result<f64>, mu: &Measure) -> Result<OrliczVerdict> {
    search(tangent_grid(), |t| {
        mu.integrate(|p| {
            let v = (t * f(p)?.abs()).exp();
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::DivergentIntegral {
                    level: 0,
                    evidence: format!("e^(t|f|) overflows at {p}"),
                })
            }
        })
    })
}

// ---------------------------------------------------------------------------
// Measures given by log-densities

type LnDensity = Arc<dyn Fn(&Point) -> Result<f64> + Send + Sync>;

/// A measure given by `ln(dν/d base)`; `−∞` marks points of zero density.
#[derive(Clone)]
pub struct LogMeasure {
    space: SampleSpace,
    ln_density: LnDensity,
    breaks: Vec<f64>,
}

impl std::fmt::Debug for LogMeasure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "LogMeasure on {}", self.space)
    }
}

impl LogMeasure {
    pub fn new(space: SampleSpace, ln_density: impl Fn(&Point) -> Result<f64> + Send + Sync + 'static) -> LogMeasure {
        LogMeasure {
            space,
            ln_density: Arc::new(ln_density),
            breaks: Vec::new(),
        }
    }

    pub fn with_breaks(mut self, breaks: Vec<f64>) -> LogMeasure {
        self.breaks = breaks;
        self
    }

    pub fn from_measure(mu: &Measure) -> Result<LogMeasure> {
        if mu.is_signed() {
            return Err(invalid("similarity is defined for nonnegative measures"));
        }
        let d = mu.density_fn();
        Ok(LogMeasure::new(mu.space().clone(), move |p| Ok(d(p)?.ln())).with_breaks(mu.breaks().to_vec()))
    }

    /// `p(x)` of a model, with `ln p̄` evaluated directly so that
    /// underflowing densities keep their logarithm.
    pub fn from_model(m: &ParametrizedModel, x: &[f64]) -> Result<LogMeasure> {
        m.check_x(x)?;
        let (m, x) = (m.clone(), x.to_vec());
        let breaks = m.breaks();
        Ok(LogMeasure::new(m.space().clone(), move |p| {
            let r = m.reference().density(p)?;
            if r == 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            Ok(r.ln() + m.potential().ln_value(&x, p)?)
        })
        .with_breaks(breaks))
    }

    pub fn space(&self) -> &SampleSpace {
        &self.space
    }

    pub fn ln_density(&self, p: &Point) -> Result<f64> {
        (self.ln_density)(p)
    }

    /// `ν_{λ} ∝ exp(f₀ + λ(f₁ − f₀))` against the common base measure.
    pub fn geodesic(a: &LogMeasure, b: &LogMeasure, lambda: f64) -> Result<LogMeasure> {
        if a.space != b.space {
            return Err(Error::SpaceMismatch(format!("{} vs {}", a.space, b.space)));
        }
        let (fa, fb) = (a.ln_density.clone(), b.ln_density.clone());
        let mut breaks = a.breaks.clone();
        breaks.extend_from_slice(&b.breaks);
        Ok(LogMeasure::new(a.space.clone(), move |p| {
            let (x, y) = (fa(p)?, fb(p)?);
            if lambda == 0.0 {
                Ok(x)
            } else if lambda == 1.0 {
                Ok(y)
            } else {
                Ok((1.0 - lambda) * x + lambda * y)
            }
        })
        .with_breaks(breaks))
    }
}

/// `∫ (dμ′/dμ)^p dμ`, evaluated as `∫ exp(p·ln ρ′ + (1 − p)·ln ρ)`.
pub fn ratio_power_integral(mu_prime: &LogMeasure, mu: &LogMeasure, p: f64) -> Result<Integral> {
    if mu_prime.space != mu.space {
        return Err(Error::SpaceMismatch(format!("{} vs {}", mu_prime.space, mu.space)));
    }
    let mut breaks = mu_prime.breaks.clone();
    breaks.extend_from_slice(&mu.breaks);
    let mut v = mu.space.integrate_vec(1, &breaks, |pt, out| {
        let lr_prime = mu_prime.ln_density(pt)?;
        if lr_prime == f64::NEG_INFINITY {
            return Ok(());
        }
        let lr = mu.ln_density(pt)?;
        if lr == f64::NEG_INFINITY {
            return Err(Error::ZeroDenominator { at: pt.to_string() });
        }
        let e = p * lr_prime + (1.0 - p) * lr;
        let v = e.exp();
        if !v.is_finite() {
            return Err(Error::DivergentIntegral {
                level: 0,
                evidence: format!("(dμ′/dμ)^{p} overflows at {pt} (log {e:e})"),
            });
        }
        out[0] = v;
        Ok(())
    })?;
    Ok(v.remove(0))
}

/// `μ′ ≼ μ`: `dμ′/dμ ∈ L^p(μ)` for some `p` on the preorder grid.
pub fn preceq(mu_prime: &LogMeasure, mu: &LogMeasure) -> Result<OrliczVerdict> {
    search(preorder_grid(), |p| ratio_power_integral(mu_prime, mu, p))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityVerdict {
    /// Both directions hold; the witness is the smaller of the two exponents.
    pub status: OrliczStatus,
    pub forward: OrliczVerdict,
    pub backward: OrliczVerdict,
}

impl SimilarityVerdict {
    pub fn holds(&self) -> bool {
        matches!(self.status, OrliczStatus::Holds { .. })
    }
}

/// `μ′ ∼ μ`: `μ′ ≼ μ` and `μ ≼ μ′`.
pub fn similar(mu_prime: &LogMeasure, mu: &LogMeasure) -> Result<SimilarityVerdict> {
    let forward = preceq(mu_prime, mu)?;
    let backward = preceq(mu, mu_prime)?;
    let status = match (forward.status, backward.status) {
        (OrliczStatus::Holds { witness: a }, OrliczStatus::Holds { witness: b }) => OrliczStatus::Holds { witness: a.min(b) },
        (OrliczStatus::Fails, _) | (_, OrliczStatus::Fails) => OrliczStatus::Fails,
        _ => OrliczStatus::Inconclusive,
    };
    Ok(SimilarityVerdict {
        status,
        forward,
        backward,
    })
}

/// Exponent guaranteed for `μ″ ≼ μ` from witnesses `p` of `μ′ ≼ μ` and `p′`
/// of `μ″ ≼ μ′`.
pub fn transitive_exponent(p: f64, p_prime: f64) -> f64 {
    p * p_prime / (p + p_prime - 1.0)
}

// ---------------------------------------------------------------------------
// e-convergence and segments

pub const E_CONVERGENCE_POWERS: [f64; 3] = [2.0, 4.0, 8.0];

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Entry {
    Value(f64),
    Divergent { divergent: String },
}

impl Entry {
    pub fn value(&self) -> Option<f64> {
        match self {
            Entry::Value(v) => Some(*v),
            Entry::Divergent { .. } => None,
        }
    }

    fn from(r: Result<f64>) -> Result<Entry> {
        match r {
            Ok(v) => Ok(Entry::Value(v)),
            Err(Error::DivergentIntegral { level, evidence }) => Ok(Entry::Divergent {
                divergent: format!("level {level}: {evidence}"),
            }),
            Err(e) => Err(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub n: usize,
    /// `‖g_n − g‖_{L¹(μ)}`.
    pub l1: Entry,
    /// `‖g_n/g − 1‖_{L^p(g·μ)}` for `p` in [`E_CONVERGENCE_POWERS`].
    pub forward: Vec<Entry>,
    /// `‖g/g_n − 1‖_{L^p(g·μ)}`.
    pub backward: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    /// Per column (`l1`, forward p's, backward p's): every entry finite and
    /// the second half of the sequence non-increasing.
    pub monotone_tail: Vec<bool>,
}

/// Tabulates the distances behind e-convergence of `g_n μ` to `g μ`.
/// Nothing is certified about the limit.
pub fn e_convergence_diagnostic(
    mu: &Measure,
    ln_g: &dyn Fn(&Point) -> Result<f64>,
    ln_gn: &dyn Fn(usize, &Point) -> Result<f64>,
    n_max: usize,
) -> Result<ConvergenceReport> {
    if n_max == 0 {
        return Err(invalid("need at least one sequence element"));
    }
    let mut rows = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let l1 = Entry::from(
            mu.integrate(|p| Ok((ln_gn(n, p)?.exp() - ln_g(p)?.exp()).abs()))
                .map(|i| i.value),
        )?;
        let lp = |p: f64, sign: f64| -> Result<Entry> {
            Entry::from(
                mu.integrate(|pt| {
                    let (a, b) = (ln_gn(n, pt)?, ln_g(pt)?);
                    let d = sign * (a - b);
                    let v = d.exp_m1().abs().powf(p) * b.exp();
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(Error::DivergentIntegral {
                            level: 0,
                            evidence: format!("ratio overflows at {pt}"),
                        })
                    }
                })
                .map(|i| i.value.powf(1.0 / p)),
            )
        };
        let forward = E_CONVERGENCE_POWERS.iter().map(|&p| lp(p, 1.0)).collect::<Result<_>>()?;
        let backward = E_CONVERGENCE_POWERS.iter().map(|&p| lp(p, -1.0)).collect::<Result<_>>()?;
        rows.push(ConvergenceRow { n, l1, forward, backward });
    }
    let columns = 1 + 2 * E_CONVERGENCE_POWERS.len();
    let column = |r: &ConvergenceRow, c: usize| -> Option<f64> {
        let k = E_CONVERGENCE_POWERS.len();
        match c {
            0 => r.l1.value(),
            c if c <= k => r.forward[c - 1].value(),
            c => r.backward[c - 1 - k].value(),
        }
    };
    let monotone_tail = (0..columns)
        .map(|c| {
            let vals: Option<Vec<f64>> = rows.iter().map(|r| column(r, c)).collect();
            vals.is_some_and(|v| {
                let tail = &v[v.len() / 2..];
                tail.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-300)
            })
        })
        .collect();
    Ok(ConvergenceReport { rows, monotone_tail })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentPair {
    pub lambda: f64,
    pub other: f64,
    pub verdict: SimilarityVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentEndpoint {
    pub lambda: f64,
    /// `μ_λ ≼ μ₀′`.
    pub below_start: OrliczVerdict,
    /// `μ_λ ≼ μ₁′`.
    pub below_end: OrliczVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentReport {
    pub lambdas: Vec<f64>,
    pub pairs: Vec<SegmentPair>,
    pub endpoints: Vec<SegmentEndpoint>,
    /// All interior pairs similar and every interior point below both ends.
    pub consistent: bool,
}

/// Checks similarity along `λ ↦ exp(f₀ + λ(f₁ − f₀))` for interior `λ`.
pub fn segment_similarity(start: &LogMeasure, end: &LogMeasure, lambdas: &[f64]) -> Result<SegmentReport> {
    if let Some(l) = lambdas.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
        return Err(invalid(format!("segment parameters must lie in (0, 1), got {l}")));
    }
    let measures: Vec<LogMeasure> = lambdas
        .iter()
        .map(|&l| LogMeasure::geodesic(start, end, l))
        .collect::<Result<_>>()?;
    let mut pairs = Vec::new();
    for i in 0..lambdas.len() {
        for j in i + 1..lambdas.len() {
            pairs.push(SegmentPair {
                lambda: lambdas[i],
                other: lambdas[j],
                verdict: similar(&measures[i], &measures[j])?,
            });
        }
    }
    let endpoints: Vec<SegmentEndpoint> = lambdas
        .iter()
        .zip(&measures)
        .map(|(&lambda, m)| {
            Ok(SegmentEndpoint {
                lambda,
                below_start: preceq(m, start)?,
                below_end: preceq(m, end)?,
            })
        })
        .collect::<Result<_>>()?;
    let consistent = pairs.iter().all(|p| p.verdict.holds())
        && endpoints.iter().all(|e| e.below_start.holds() && e.below_end.holds());
    Ok(SegmentReport {
        lambdas: lambdas.to_vec(),
        pairs,
        endpoints,
        consistent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> SampleSpace {
        SampleSpace::grid(0.0, 1.0).unwrap()
    }

    #[test]
    fn young_functions_vanish_at_zero_and_are_even() {
        for phi in [
            YoungFunction::cosh_minus_one(),
            YoungFunction::power_p(1.5).unwrap(),
            YoungFunction::exp_abs_minus_linear(),
            YoungFunction::cosh_minus_one().stretched(2.0).unwrap().powered(2.0).unwrap(),
        ] {
            assert_eq!(phi.eval(0.0), 0.0);
            for t in [1e-8, 0.3, 2.0] {
                assert_eq!(phi.eval(t), phi.eval(-t));
                assert!(phi.eval(t) < phi.eval(1.01 * t));
            }
        }
        assert!(YoungFunction::power_p(1.0).is_err());
        let e = YoungFunction::exp_abs_minus_linear();
        let s = 1e-5f64;
        assert!((e.eval(s) - (s * s / 2.0 + s * s * s / 6.0)).abs() < 1e-12 * s * s);
    }

    #[test]
    fn constant_cosh_norm() {
        let mu = Measure::uniform(SampleSpace::finite(4).unwrap()).unwrap();
        let c = 2.5;
        let n = orlicz_norm(&|_| Ok(c), &mu, &YoungFunction::cosh_minus_one()).unwrap();
        assert!((n - c / 2f64.acosh()).abs() < 1e-9);
        assert_eq!(orlicz_norm(&|_| Ok(0.0), &mu, &YoungFunction::cosh_minus_one()).unwrap(), 0.0);
    }

    #[test]
    fn power_norm_is_lp_norm() {
        let mu = Measure::base(unit());
        let n = orlicz_norm(&|p| Ok(p.w()[0]), &mu, &YoungFunction::power_p(3.0).unwrap()).unwrap();
        assert!((n - 0.25f64.powf(1.0 / 3.0)).abs() < 1e-9);
    }

    #[test]
    fn stretch_identity() {
        let mu = Measure::base(unit());
        let r = stretch_equivalence_check(&|p| Ok(p.w()[0]), &mu, &YoungFunction::cosh_minus_one(), 0.5).unwrap();
        assert!(r.residual <= 1e-7 * (1.0 + r.scaled_norm));
    }

    #[test]
    fn unbounded_norms_fail_to_bracket() {
        let mu = Measure::base(unit());
        for a in [-1.0 / 3.0, -0.5] {
            let r = orlicz_norm(&|p| Ok(p.w()[0].powf(a)), &mu, &YoungFunction::cosh_minus_one());
            assert!(matches!(r, Err(Error::NotInOrliczSpace { .. })), "{r:?}");
        }
        // ∫ t^{−p/2} diverges for p ≥ 2
        let r = orlicz_norm(&|p| Ok(p.w()[0].powf(-0.5)), &mu, &YoungFunction::power_p(2.0).unwrap());
        assert!(matches!(r, Err(Error::NotInOrliczSpace { .. })), "{r:?}");
    }

    #[test]
    fn tangent_membership() {
        let mu = Measure::base(unit());
        let v = in_exponential_tangent(&|p| Ok(p.w()[0].sin()), &mu).unwrap();
        assert_eq!(v.witness(), Some(1.0));
        let v = in_exponential_tangent(&|p| Ok(-p.w()[0].ln()), &mu).unwrap();
        assert_eq!(v.witness(), Some(0.5));
        let v = in_exponential_tangent(&|p| Ok(p.w()[0].powf(-1.0 / 3.0)), &mu).unwrap();
        assert!(v.fails(), "{:?}", v.status);
        assert_eq!(v.trials.len(), 21);
    }

    #[test]
    fn power_densities_preorder() {
        let dt = LogMeasure::new(unit(), |_| Ok(0.0));
        let pow = |a: f64| LogMeasure::new(unit(), move |p| Ok(a * p.w()[0].ln()));
        // ∫ t^{−0.6 p} dt < ∞ iff p < 5/3; near the edge the tail converges
        // too slowly to certify, so the search settles on a smaller witness
        let v = preceq(&pow(-0.6), &dt).unwrap();
        assert_eq!(v.trials[0].outcome, TrialOutcome::Divergent);
        assert!(v.witness().is_some_and(|p| p > 1.0 && p < 5.0 / 3.0));
        // ratio t^{0.6} is bounded
        assert_eq!(preceq(&dt, &pow(-0.6)).unwrap().witness(), Some(2.0));
        assert!(preceq(&pow(-1.5), &dt).unwrap().fails());
        let two = LogMeasure::new(unit(), |_| Ok(2f64.ln()));
        assert!(similar(&two, &dt).unwrap().holds());
    }

    #[test]
    fn absolute_continuity_is_required() {
        let s = SampleSpace::finite(2).unwrap();
        let a = LogMeasure::from_measure(&Measure::from_weights(s.clone(), vec![0.5, 0.5]).unwrap()).unwrap();
        let b = LogMeasure::from_measure(&Measure::from_weights(s, vec![1.0, 0.0]).unwrap()).unwrap();
        let v = preceq(&a, &b).unwrap();
        assert!(v.fails());
        assert_eq!(v.trials[0].outcome, TrialOutcome::NotAbsolutelyContinuous);
        assert!(preceq(&b, &a).unwrap().holds());
    }

    #[test]
    fn e_convergence_of_bounded_perturbations() {
        let mu = Measure::base(unit());
        let r = e_convergence_diagnostic(&mu, &|_| Ok(0.0), &|n, p| Ok(p.w()[0].sin() / n as f64), 6).unwrap();
        assert!(r.monotone_tail.iter().all(|&b| b));
        let last = &r.rows[5];
        assert!(last.l1.value().unwrap() < 0.1);
        let same = e_convergence_diagnostic(&mu, &|_| Ok(0.0), &|_, _| Ok(0.0), 2).unwrap();
        assert!(same.rows.iter().all(|r| r.l1 == Entry::Value(0.0)));
    }
}
