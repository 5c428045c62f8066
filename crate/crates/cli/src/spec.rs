//! JSON model specs.
//!
//! ```json
//! {
//!   "space": {"finite": 3},
//!   "reference": "base",
//!   "potential": ["x1", "(1 - x1)/2", "(1 - x1)/2"],
//!   "param_box": [[0, 1]],
//!   "statistical": true,
//!   "statistic": {"classes": [[0], [1, 2]]}
//! }
//! ```
//!
//! `param_box` bounds may be `null` for an unbounded side. Built-in families
//! carry their own space, reference and box:
//! `{"potential": {"builtin": {"name": "bernoulli"}}}`.

use std::path::Path;

use anyhow::{bail, ensure, Context};
use serde::{Deserialize, Serialize};

use infogeo::expr::Expression;
use infogeo::lattice::{Lattice, LatticeConfig, ParamBox};
use infogeo::markov::{MarkovKernel, Statistic};
use infogeo::models::{self, ParametrizedModel};
use infogeo::natgrad::{NatGradConfig, Objective};
use infogeo::orlicz::{LogMeasure, YoungFunction};
use infogeo::quadrature::QuadratureConfig;
use infogeo::spaces::{Measure, SampleSpace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<SpaceSpec>,
    #[serde(default)]
    pub reference: ReferenceSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<PotentialSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_box: Option<Vec<[Option<f64>; 2]>>,
    #[serde(default)]
    pub statistical: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub statistic: Option<StatisticSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadrature: Option<QuadratureConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<LatticeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
    /// Tangent direction for `monotonicity` and `infoloss`; all basis
    /// directions when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub natgrad: Option<NatGradSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orlicz: Option<OrliczSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chentsov: Option<ChentsovSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SpaceSpec {
    Finite(usize),
    Labeled(Vec<String>),
    Grid([f64; 2]),
    Product(Box<[SpaceSpec; 2]>),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceSpec {
    /// Counting measure or Lebesgue measure.
    #[default]
    Base,
    Uniform,
    Weights(Vec<f64>),
    /// Density in the sample variables against the base measure.
    Density(Expression),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PotentialSpec {
    Expression(Expression),
    Atoms(Vec<Expression>),
    Builtin(BuiltinWrapper),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuiltinWrapper {
    pub builtin: Builtin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum Builtin {
    Bernoulli,
    Categorical { n: usize },
    ExponentialFamily { weights: Vec<f64>, stats: Vec<Vec<f64>> },
    /// `t ↦ t·μ` for the spec's reference measure.
    Scaling,
    RootExponential { k: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum StatisticSpec {
    Identity,
    /// Class index per atom.
    Partition(Vec<usize>),
    /// Atom lists per class.
    Classes(Vec<Vec<usize>>),
    /// Interior cut points of an interval.
    Intervals(Vec<f64>),
    Project(Projection),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    First,
    Second,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    /// Row-stochastic matrix between finite spaces.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    /// Target space for density rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<SpaceSpec>,
    /// One density per source atom, in the target sample variable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub densities: Option<Vec<Expression>>,
    /// Probability measure on the target used by the kernel lift; uniform by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second_reference: Option<ReferenceSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NatGradSpec {
    pub objective: Objective,
    #[serde(default)]
    pub config: NatGradConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum YoungSpec {
    CoshMinusOne,
    PowerP(f64),
    ExpAbsMinusLinear,
}

/// A measure for the Orlicz comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LogMeasureSpec {
    /// `ln` of the density against the base measure, in the sample variables.
    LnDensity(Expression),
    /// `p(x)` of the spec's model.
    ModelAt(Vec<f64>),
    /// The spec's reference measure.
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrliczSpec {
    /// Function in the sample variables for `norm` and `tangent`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub function: Option<Expression>,
    #[serde(default = "default_young")]
    pub young: YoungSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stretch: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power: Option<f64>,
    /// Measure for `norm` and `tangent`; the reference by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<LogMeasureSpec>,
    /// `preceq` tests `first ≼ second`; `segment` runs from `first` to `second`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first: Option<LogMeasureSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second: Option<LogMeasureSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambdas: Option<Vec<f64>>,
    /// `ln g` for `econv`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ln_limit: Option<Expression>,
    /// `ln g_n` for `econv`, with `x1 = n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ln_sequence: Option<Expression>,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
}

fn default_young() -> YoungSpec {
    YoungSpec::CoshMinusOne
}

fn default_n_max() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChentsovSpec {
    /// Total masses covered, `[lo, hi)`.
    pub mass_range: [f64; 2],
    #[serde(default = "default_per_bin")]
    pub per_bin: usize,
    /// Coefficient functions of the mass (`x1`) by name: `c` for order 1,
    /// `f`, `d` for order 2 and `t`, `a1`, `a2` for order 3. Missing names are zero.
    pub candidate: std::collections::BTreeMap<String, Expression>,
}

fn default_per_bin() -> usize {
    50
}

impl ModelSpec {
    pub fn from_path(path: &Path) -> anyhow::Result<ModelSpec> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        ModelSpec::from_json(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn from_json(text: &str) -> anyhow::Result<ModelSpec> {
        let spec: ModelSpec = serde_json::from_str(text)?;
        if let Some(q) = &spec.quadrature {
            q.validate()?;
        }
        Ok(spec)
    }

    fn quadrature(&self) -> QuadratureConfig {
        self.quadrature.clone().unwrap_or_default()
    }

    pub fn sample_space(&self) -> anyhow::Result<SampleSpace> {
        match &self.space {
            Some(s) => s.build(&self.quadrature()),
            None => Ok(self.model()?.space().clone()),
        }
    }

    pub fn reference_measure(&self) -> anyhow::Result<Measure> {
        let space = match &self.space {
            Some(s) => s.build(&self.quadrature())?,
            None => return Ok(self.model()?.reference().clone()),
        };
        self.reference.build(space)
    }

    fn param_box(&self) -> anyhow::Result<ParamBox> {
        let Some(bounds) = &self.param_box else {
            bail!("`param_box` is required for expression potentials");
        };
        let lo = bounds.iter().map(|b| b[0].unwrap_or(f64::NEG_INFINITY)).collect();
        let hi = bounds.iter().map(|b| b[1].unwrap_or(f64::INFINITY)).collect();
        Ok(ParamBox::new(lo, hi)?)
    }

    pub fn model(&self) -> anyhow::Result<ParametrizedModel> {
        let Some(potential) = &self.potential else {
            bail!("this command needs a `potential`");
        };
        match potential {
            PotentialSpec::Builtin(BuiltinWrapper { builtin }) => {
                let scaling = matches!(builtin, Builtin::Scaling);
                ensure!(
                    self.param_box.is_none() && (scaling || self.space.is_none()),
                    "built-in families fix their own space and parameter box"
                );
                Ok(match builtin {
                    Builtin::Bernoulli => models::bernoulli()?,
                    Builtin::Categorical { n } => models::categorical(*n)?,
                    Builtin::ExponentialFamily { weights, stats } => {
                        models::exponential_family(weights.clone(), stats.clone())?
                    }
                    Builtin::Scaling => {
                        ensure!(self.space.is_some(), "the scaling family needs a `space`");
                        models::scaling(self.reference_measure()?)?
                    }
                    Builtin::RootExponential { k } => models::root_exponential_family(*k)?,
                })
            }
            PotentialSpec::Expression(e) => Ok(models::expression_model(
                "spec",
                self.param_box()?,
                self.reference_measure()?,
                e.clone(),
                self.statistical,
            )?),
            PotentialSpec::Atoms(exprs) => Ok(models::atom_model(
                "spec",
                self.param_box()?,
                self.reference_measure()?,
                exprs.clone(),
                self.statistical,
            )?),
        }
    }

    pub fn statistic(&self, space: &SampleSpace) -> anyhow::Result<Statistic> {
        let Some(s) = &self.statistic else {
            bail!("this command needs a `statistic`");
        };
        Ok(match s {
            StatisticSpec::Identity => Statistic::identity(space.clone()),
            StatisticSpec::Partition(c) => Statistic::partition(space.clone(), c.clone())?,
            StatisticSpec::Classes(c) => Statistic::from_classes(space.clone(), c)?,
            StatisticSpec::Intervals(c) => Statistic::intervals(space.clone(), c.clone())?,
            StatisticSpec::Project(p) => Statistic::project(
                space.clone(),
                match p {
                    Projection::First => infogeo::markov::Factor::First,
                    Projection::Second => infogeo::markov::Factor::Second,
                },
            )?,
        })
    }

    /// The kernel and the probability measure on its target.
    pub fn kernel(&self) -> anyhow::Result<(MarkovKernel, Measure)> {
        let Some(k) = &self.kernel else {
            bail!("this command needs a `kernel`");
        };
        let pi = match (&k.matrix, &k.target, &k.densities) {
            (Some(rows), None, None) => MarkovKernel::from_matrix(rows.clone())?,
            (None, Some(target), Some(rows)) => {
                MarkovKernel::from_densities(target.build(&self.quadrature())?, rows.clone())?
            }
            _ => bail!("a kernel is either a `matrix` or a `target` with `densities`"),
        };
        let mu2 = match &k.second_reference {
            Some(r) => r.build(pi.target().clone())?,
            None => Measure::uniform(pi.target().clone())?,
        };
        Ok((pi, mu2))
    }

    pub fn lattice(&self, m: &ParametrizedModel) -> anyhow::Result<Lattice> {
        Ok(Lattice::for_box(m.param_box(), &self.lattice.clone().unwrap_or_default())?)
    }

    pub fn log_measure(&self, spec: &LogMeasureSpec) -> anyhow::Result<LogMeasure> {
        Ok(match spec {
            LogMeasureSpec::LnDensity(e) => {
                let space = self.sample_space()?;
                e.check_dims(0, space.sample_dim())?;
                let e = e.clone();
                LogMeasure::new(space, move |p| Ok(e.eval(&[], p.w())?))
            }
            LogMeasureSpec::ModelAt(x) => LogMeasure::from_model(&self.model()?, x)?,
            LogMeasureSpec::Reference => LogMeasure::from_measure(&self.reference_measure()?)?,
        })
    }
}

impl SpaceSpec {
    pub fn build(&self, q: &QuadratureConfig) -> anyhow::Result<SampleSpace> {
        Ok(match self {
            SpaceSpec::Finite(n) => SampleSpace::finite(*n)?,
            SpaceSpec::Labeled(l) => SampleSpace::finite_labeled(l.clone())?,
            SpaceSpec::Grid([a, b]) => SampleSpace::grid_with(*a, *b, q.clone())?,
            SpaceSpec::Product(parts) => SampleSpace::product(parts[0].build(q)?, parts[1].build(q)?)?,
        })
    }
}

impl ReferenceSpec {
    pub fn build(&self, space: SampleSpace) -> anyhow::Result<Measure> {
        Ok(match self {
            ReferenceSpec::Base => Measure::base(space),
            ReferenceSpec::Uniform => Measure::uniform(space)?,
            ReferenceSpec::Weights(w) => Measure::from_weights(space, w.clone())?,
            ReferenceSpec::Density(e) => {
                e.check_dims(0, space.sample_dim())?;
                let e = e.clone();
                Measure::from_density(space, move |p| Ok(e.eval(&[], p.w())?))
            }
        })
    }
}

impl YoungSpec {
    pub fn build(&self, stretch: Option<f64>, power: Option<f64>) -> anyhow::Result<YoungFunction> {
        let mut phi = match *self {
            YoungSpec::CoshMinusOne => YoungFunction::cosh_minus_one(),
            YoungSpec::PowerP(p) => YoungFunction::power_p(p)?,
            YoungSpec::ExpAbsMinusLinear => YoungFunction::exp_abs_minus_linear(),
        };
        if let Some(l) = stretch {
            phi = phi.stretched(l)?;
        }
        if let Some(q) = power {
            phi = phi.powered(q)?;
        }
        Ok(phi)
    }
}
