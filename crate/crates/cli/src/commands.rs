//! One function per subcommand. Each returns a report whose `passed` flag
//! decides the exit code.

use std::path::PathBuf;

use anyhow::{bail, ensure, Context};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use infogeo::chentsov::{self, FitSample};
use infogeo::expr::Expression;
use infogeo::markov::{self, check_sufficiency_with, decompose_markov_morphism, kernel_model};
use infogeo::models::{basis_directions, check_k_integrability, ParametrizedModel};
use infogeo::natgrad;
use infogeo::orlicz::{self, LogMeasure};
use infogeo::spaces::{Measure, Point};
use infogeo::tensors::{ac_tensor, fisher_matrix, one_form};

use crate::report::Report;
use crate::spec::{LogMeasureSpec, ModelSpec};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Default,
    Strict,
}

/// Pass/fail thresholds used by the subcommands.
#[derive(Debug, Clone, Serialize)]
pub struct Tolerances {
    pub continuity_jump: f64,
    pub sufficiency: f64,
    pub invariance: f64,
    pub monotonicity_floor: f64,
    pub information_loss: f64,
    pub decomposition: f64,
    pub fit_residual: f64,
}

impl Tolerances {
    pub fn for_profile(p: Profile) -> Tolerances {
        match p {
            Profile::Default => Tolerances {
                continuity_jump: infogeo::models::DEFAULT_CONTINUITY_THRESHOLD,
                sufficiency: markov::SUFFICIENT_TOL,
                invariance: 1e-8,
                monotonicity_floor: -1e-9,
                information_loss: 1e-8,
                decomposition: 1e-10,
                fit_residual: 1e-8,
            },
            Profile::Strict => Tolerances {
                continuity_jump: 0.25,
                sufficiency: 1e-9,
                invariance: 1e-10,
                monotonicity_floor: -1e-12,
                information_loss: 1e-10,
                decomposition: 1e-12,
                fit_residual: 1e-10,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct Flags {
    pub spec: Option<PathBuf>,
    pub x: Option<Vec<f64>>,
    pub k: Option<u32>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub profile: Profile,
}

pub struct Ctx {
    pub spec: ModelSpec,
    pub flags: Flags,
    pub tol: Tolerances,
}

impl Ctx {
    pub fn load(flags: Flags) -> anyhow::Result<Ctx> {
        let path = flags.spec.clone().context("`--spec PATH` is required")?;
        let spec = ModelSpec::from_path(&path)?;
        Ok(Ctx {
            spec,
            tol: Tolerances::for_profile(flags.profile),
            flags,
        })
    }

    pub fn x(&self) -> anyhow::Result<Vec<f64>> {
        self.flags
            .x
            .clone()
            .or_else(|| self.spec.x.clone())
            .context("a parameter point is required (`--x` or `x` in the spec)")
    }

    pub fn seed(&self) -> u64 {
        self.flags.seed.or(self.spec.seed).unwrap_or(DEFAULT_SEED)
    }

    fn directions(&self, m: &ParametrizedModel) -> anyhow::Result<Vec<Vec<f64>>> {
        match &self.spec.direction {
            Some(v) => {
                ensure!(v.len() == m.dim(), "direction has {} entries, model dimension is {}", v.len(), m.dim());
                Ok(vec![v.clone()])
            }
            None => Ok(basis_directions(m.dim())),
        }
    }

    /// Spec with defaults filled in, plus the flags that shaped the run.
    fn config(&self, extra: serde_json::Value) -> anyhow::Result<serde_json::Value> {
        let mut spec = self.spec.clone();
        spec.quadrature.get_or_insert_with(Default::default);
        spec.lattice.get_or_insert_with(Default::default);
        let mut c = json!({
            "spec": spec,
            "tolerance_profile": self.flags.profile,
            "tolerances": self.tol,
        });
        if let (Some(obj), serde_json::Value::Object(more)) = (c.as_object_mut(), extra) {
            obj.extend(more);
        }
        Ok(c)
    }

    fn report(&self, command: &str, extra: serde_json::Value, passed: bool, result: impl Serialize) -> anyhow::Result<Report> {
        Report::new(command, self.config(extra)?, passed, result)
    }
}

fn sample_fn(e: &Expression, m_dim: usize) -> anyhow::Result<impl Fn(&Point) -> infogeo::Result<f64>> {
    e.check_dims(0, m_dim)?;
    let e = e.clone();
    Ok(move |p: &Point| Ok(e.eval(&[], p.w())?))
}

pub fn tensors(ctx: &Ctx) -> anyhow::Result<Report> {
    let m = ctx.spec.model()?;
    let x = ctx.x()?;
    m.check_x(&x)?;
    let dirs = basis_directions(m.dim());
    let a: Vec<f64> = dirs
        .iter()
        .map(|v| Ok(one_form(&m, &x, v)?.value))
        .collect::<anyhow::Result<_>>()?;
    let g = fisher_matrix(&m, &x)?;
    let d = m.dim();
    let mut t = Vec::new();
    for i in 0..d {
        for j in i..d {
            for k in j..d {
                let v = ac_tensor(&m, &x, &dirs[i], &dirs[j], &dirs[k])?;
                t.push(json!({"indices": [i + 1, j + 1, k + 1], "value": v.value, "abs_error": v.abs_error}));
            }
        }
    }
    let result = json!({
        "model": m.name(),
        "mass": m.mass(&x)?,
        "one_form": a,
        "fisher": g.matrix,
        "fisher_abs_error": g.abs_error,
        "fisher_eigenvalues": g.eigenvalues,
        "amari_chentsov": t,
    });
    ctx.report("tensors", json!({"x": x}), true, result)
}

pub fn integrability(ctx: &Ctx) -> anyhow::Result<Report> {
    let k = ctx.flags.k.context("`--k INT` is required")?;
    let m = ctx.spec.model()?;
    let lattice = ctx.spec.lattice(&m)?;
    let r = check_k_integrability(&m, k, &lattice, ctx.tol.continuity_jump)?;
    ctx.report("integrability", json!({"k": k, "lattice": lattice.axes}), r.passed(), &r)
}

pub fn sufficiency(ctx: &Ctx) -> anyhow::Result<Report> {
    let m = ctx.spec.model()?;
    let kappa = ctx.spec.statistic(m.space())?;
    let lattice = ctx.spec.lattice(&m)?;
    let v = check_sufficiency_with(&m, &kappa, &lattice, ctx.tol.sufficiency)?;
    ctx.report("sufficiency", json!({"lattice": lattice.axes}), v.is_sufficient(), &v)
}

pub fn invariance(ctx: &Ctx) -> anyhow::Result<Report> {
    let m = ctx.spec.model()?;
    let lattice = ctx.spec.lattice(&m)?;
    let mut result = serde_json::Map::new();
    let mut passed = true;
    ensure!(
        ctx.spec.statistic.is_some() || ctx.spec.kernel.is_some(),
        "invariance needs a `statistic` or a `kernel`"
    );
    if ctx.spec.statistic.is_some() {
        let kappa = ctx.spec.statistic(m.space())?;
        let r = chentsov::invariance_report(&m, &kappa, &lattice)?;
        passed &= r.comparison.max_abs() <= ctx.tol.invariance;
        result.insert("statistic".into(), serde_json::to_value(&r)?);
    }
    if ctx.spec.kernel.is_some() {
        let (pi, _) = ctx.spec.kernel()?;
        let image = kernel_model(&m, &pi)?;
        let c = chentsov::compare_tensors(&m, &image, &lattice)?;
        passed &= c.max_abs() <= ctx.tol.invariance;
        result.insert("kernel".into(), serde_json::to_value(&c)?);
    }
    ctx.report("invariance", json!({"lattice": lattice.axes}), passed, result)
}

pub fn monotonicity(ctx: &Ctx) -> anyhow::Result<Report> {
    let m = ctx.spec.model()?;
    let kappa = ctx.spec.statistic(m.space())?;
    let x = ctx.x()?;
    let mut rows = Vec::new();
    let mut passed = true;
    for v in ctx.directions(&m)? {
        let gap = chentsov::monotonicity_gap(&m, &kappa, &x, &v)?;
        passed &= gap >= ctx.tol.monotonicity_floor;
        rows.push(json!({"direction": v, "gap": gap}));
    }
    ctx.report("monotonicity", json!({"x": x}), passed, json!({"gaps": rows}))
}

pub fn infoloss(ctx: &Ctx) -> anyhow::Result<Report> {
    let m = ctx.spec.model()?;
    let kappa = ctx.spec.statistic(m.space())?;
    let x = ctx.x()?;
    let mut rows = Vec::new();
    let mut passed = true;
    for v in ctx.directions(&m)? {
        let l = chentsov::information_loss(&m, &kappa, &x, &v)?;
        passed &= l.residual <= ctx.tol.information_loss;
        rows.push(json!({"direction": v, "loss": l}));
    }
    ctx.report("infoloss", json!({"x": x}), passed, json!({"directions": rows}))
}

pub fn decompose_kernel(ctx: &Ctx) -> anyhow::Result<Report> {
    let m = ctx.spec.model()?;
    let (pi, mu2) = ctx.spec.kernel()?;
    let lattice = ctx.spec.lattice(&m)?;
    let d = decompose_markov_morphism(&m, &pi, &mu2, &lattice)?;
    let passed = d.residual <= ctx.tol.decomposition && d.first_projection.is_sufficient();
    let result = json!({
        "lift": d.lift.name(),
        "first_projection": d.first_projection,
        "projected": d.projected.name(),
        "residual": d.residual,
        "kernel_strictly_positive": pi.is_strictly_positive(),
    });
    ctx.report("decompose-kernel", json!({"lattice": lattice.axes}), passed, result)
}

pub fn chentsov_fit(ctx: &Ctx, order: u8) -> anyhow::Result<Report> {
    let spec = ctx.spec.chentsov.as_ref().context("chentsov-fit needs a `chentsov` block")?;
    let names: &[&str] = match order {
        1 => &["c"],
        2 => &["f", "d"],
        3 => &["t", "a1", "a2"],
        _ => bail!("order must be 1, 2 or 3"),
    };
    if let Some(bad) = spec.candidate.keys().find(|k| !names.contains(&k.as_str())) {
        bail!("unknown coefficient `{bad}` for order {order}; expected {names:?}");
    }
    for e in spec.candidate.values() {
        e.check_dims(1, 0)?;
    }
    let [lo, hi] = spec.mass_range;
    ensure!(lo > 0.0 && hi > lo, "mass range must satisfy 0 < lo < hi");
    let seed = ctx.seed();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let masses = chentsov::mass_bin_centres(lo, hi);
    let raw = chentsov::step_samples(&masses, spec.per_bin, &mut rng)?;
    let mut samples = Vec::with_capacity(raw.len());
    for s in &raw {
        let basis = match order {
            1 => s.oneform_basis(),
            2 => s.quadratic_basis(),
            _ => s.cubic_basis(),
        };
        let mut candidate = 0.0;
        for (name, b) in names.iter().zip(&basis) {
            if let Some(e) = spec.candidate.get(*name) {
                candidate += e.eval(&[s.mass], &[])? * b;
            }
        }
        samples.push(FitSample {
            mass: s.mass,
            basis,
            candidate,
        });
    }
    let fit = match order {
        1 => chentsov::fit_invariant_oneform(&samples)?,
        2 => chentsov::fit_invariant_quadratic(&samples)?,
        _ => chentsov::fit_invariant_cubic(&samples)?,
    };
    let passed = fit.max_residual <= ctx.tol.fit_residual;
    ctx.report("chentsov-fit", json!({"order": order, "seed": seed}), passed, &fit)
}

pub fn natgrad(ctx: &Ctx) -> anyhow::Result<Report> {
    let m = ctx.spec.model()?;
    let spec = ctx.spec.natgrad.as_ref().context("natgrad needs a `natgrad` block")?;
    let x0 = ctx.x()?;
    let t = natgrad::descend(&m, &x0, &spec.objective, &spec.config)?;
    if let Some(dir) = &ctx.flags.out {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("natgrad.csv");
        std::fs::write(&path, t.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    ctx.report("natgrad", json!({"x0": x0}), t.converged, &t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum OrliczMode {
    Norm,
    Tangent,
    Preceq,
    Similar,
    Econv,
    Segment,
}

fn measure_of(spec: &ModelSpec, s: Option<&LogMeasureSpec>) -> anyhow::Result<Measure> {
    Ok(match s {
        None | Some(LogMeasureSpec::Reference) => spec.reference_measure()?,
        Some(LogMeasureSpec::ModelAt(x)) => spec.model()?.density_at(x)?,
        Some(LogMeasureSpec::LnDensity(e)) => {
            let space = spec.sample_space()?;
            let f = sample_fn(e, space.sample_dim())?;
            Measure::from_density(space, move |p| Ok(f(p)?.exp()))
        }
    })
}

fn pair(ctx: &Ctx) -> anyhow::Result<(LogMeasure, LogMeasure)> {
    let o = ctx.spec.orlicz.as_ref().context("orlicz needs an `orlicz` block")?;
    let first = o.first.as_ref().context("`orlicz.first` is required")?;
    let second = o.second.as_ref().context("`orlicz.second` is required")?;
    Ok((ctx.spec.log_measure(first)?, ctx.spec.log_measure(second)?))
}

pub fn orlicz(ctx: &Ctx, mode: OrliczMode) -> anyhow::Result<Report> {
    let o = ctx.spec.orlicz.as_ref().context("orlicz needs an `orlicz` block")?;
    let command = format!("orlicz {}", format!("{mode:?}").to_lowercase());
    let (passed, result) = match mode {
        OrliczMode::Norm | OrliczMode::Tangent => {
            let mu = measure_of(&ctx.spec, o.measure.as_ref())?;
            let e = o.function.as_ref().context("`orlicz.function` is required")?;
            let f = sample_fn(e, mu.space().sample_dim())?;
            if mode == OrliczMode::Norm {
                let phi = o.young.build(o.stretch, o.power)?;
                match orlicz::orlicz_norm(&f, &mu, &phi) {
                    Ok(n) => (true, json!({"norm": n})),
                    Err(infogeo::Error::NotInOrliczSpace { limit }) => {
                        (false, json!({"norm": null, "not_in_space": {"limit": limit}}))
                    }
                    Err(e) => return Err(e.into()),
                }
            } else {
                let v = orlicz::in_exponential_tangent(&f, &mu)?;
                (v.holds(), serde_json::to_value(&v)?)
            }
        }
        OrliczMode::Preceq => {
            let (a, b) = pair(ctx)?;
            let v = orlicz::preceq(&a, &b)?;
            (v.holds(), serde_json::to_value(&v)?)
        }
        OrliczMode::Similar => {
            let (a, b) = pair(ctx)?;
            let v = orlicz::similar(&a, &b)?;
            (v.holds(), serde_json::to_value(&v)?)
        }
        OrliczMode::Segment => {
            let (a, b) = pair(ctx)?;
            let lambdas = o.lambdas.clone().unwrap_or_else(|| vec![0.25, 0.5, 0.75]);
            let r = orlicz::segment_similarity(&a, &b, &lambdas)?;
            (r.consistent, serde_json::to_value(&r)?)
        }
        OrliczMode::Econv => {
            let mu = measure_of(&ctx.spec, o.measure.as_ref())?;
            let dim = mu.space().sample_dim();
            let g = o.ln_limit.as_ref().context("`orlicz.ln_limit` is required")?;
            let gn = o.ln_sequence.as_ref().context("`orlicz.ln_sequence` is required")?;
            let ln_g = sample_fn(g, dim)?;
            gn.check_dims(1, dim)?;
            let gn = gn.clone();
            let ln_gn = move |n: usize, p: &Point| -> infogeo::Result<f64> { Ok(gn.eval(&[n as f64], p.w())?) };
            let r = orlicz::e_convergence_diagnostic(&mu, &ln_g, &ln_gn, o.n_max)?;
            // a diagnostic: nothing to fail
            (true, serde_json::to_value(&r)?)
        }
    };
    ctx.report(&command, json!({}), passed, result)
}
