//! Invariance of the canonical tensors under sufficient statistics, the
//! monotonicity gap and information loss of arbitrary statistics, and
//! least-squares fits of candidate tensor fields to the invariant span
//! `{c·A}`, `{f·g^F + d·A²}` and `{t·T^AC + a₁·A³ + a₂·A·g^F}` with
//! coefficients depending on total mass only.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::markov::{check_sufficiency, random_partition, Statistic, SufficiencyVerdict};
use crate::models::{basis_directions, make_step_model, pushforward_model, ParametrizedModel};
use crate::spaces::{Measure, Point, SampleSpace};
use crate::tensors::fisher_form;

/// Width of the mass bins used by the fits.
pub const MASS_BIN_WIDTH: f64 = 0.05;
/// Columns below this fraction of the largest column norm count as absent.
const ZERO_COLUMN_TOL: f64 = 1e-12;
/// Relative singular-value cutoff for rank decisions.
const RANK_TOL: f64 = 1e-10;

// ---------------------------------------------------------------------------
// Invariance

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TensorDeviation {
    pub max_abs: f64,
    pub max_rel: f64,
    /// Parameter point of the largest absolute deviation.
    pub worst_x: Option<Vec<f64>>,
}

impl TensorDeviation {
    fn record(&mut self, x: &[f64], a: f64, b: f64) {
        let abs = (a - b).abs();
        let scale = a.abs().max(b.abs());
        let rel = if scale == 0.0 { 0.0 } else { abs / scale };
        if abs > self.max_abs || self.worst_x.is_none() {
            self.max_abs = self.max_abs.max(abs);
            self.worst_x = Some(x.to_vec());
        }
        self.max_rel = self.max_rel.max(rel);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorComparison {
    pub points: usize,
    pub one_form: TensorDeviation,
    pub fisher: TensorDeviation,
    pub amari_chentsov: TensorDeviation,
}

impl TensorComparison {
    pub fn max_abs(&self) -> f64 {
        self.one_form.max_abs.max(self.fisher.max_abs).max(self.amari_chentsov.max_abs)
    }

    pub fn max_rel(&self) -> f64 {
        self.one_form.max_rel.max(self.fisher.max_rel).max(self.amari_chentsov.max_rel)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvarianceReport {
    pub sufficiency: SufficiencyVerdict,
    pub comparison: TensorComparison,
}

/// All components `A_i`, `g_ij` (i ≤ j) and `T_ijk` (i ≤ j ≤ k) over the
/// standard basis, in one pass.
fn basis_components(m: &ParametrizedModel, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let d = m.dim();
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|i| (i..d).map(move |j| (i, j))).collect();
    let triples: Vec<(usize, usize, usize)> = pairs
        .iter()
        .flat_map(|&(i, j)| (j..d).map(move |k| (i, j, k)))
        .collect();
    let (np, nt) = (pairs.len(), triples.len());
    let ints = m.integrate_dlogs(x, &basis_directions(d), d + np + nt, |_, dl, out| {
        out[..d].copy_from_slice(dl);
        for (o, &(i, j)) in out[d..d + np].iter_mut().zip(&pairs) {
            *o = dl[i] * dl[j];
        }
        for (o, &(i, j, k)) in out[d + np..].iter_mut().zip(&triples) {
            *o = dl[i] * dl[j] * dl[k];
        }
    })?;
    let v: Vec<f64> = ints.iter().map(|i| i.value).collect();
    Ok((v[..d].to_vec(), v[d..d + np].to_vec(), v[d + np..].to_vec()))
}

/// Compares `A`, `g^F` and `T^AC` of two models with the same parameter box.
pub fn compare_tensors(a: &ParametrizedModel, b: &ParametrizedModel, lattice: &Lattice) -> Result<TensorComparison> {
    if a.dim() != b.dim() {
        return Err(Error::SpaceMismatch(format!(
            "parameter dimensions {} and {} differ",
            a.dim(),
            b.dim()
        )));
    }
    let mut out = TensorComparison {
        points: 0,
        one_form: TensorDeviation::default(),
        fisher: TensorDeviation::default(),
        amari_chentsov: TensorDeviation::default(),
    };
    for x in lattice.points() {
        let (a1, a2, a3) = basis_components(a, &x)?;
        let (b1, b2, b3) = basis_components(b, &x)?;
        for (p, q) in a1.iter().zip(&b1) {
            out.one_form.record(&x, *p, *q);
        }
        for (p, q) in a2.iter().zip(&b2) {
            out.fisher.record(&x, *p, *q);
        }
        for (p, q) in a3.iter().zip(&b3) {
            out.amari_chentsov.record(&x, *p, *q);
        }
        out.points += 1;
    }
    Ok(out)
}

/// Tensor values of `m` against those of `x ↦ κ_*p(x)`; refuses statistics
/// that the Fisher–Neyman test does not certify as sufficient.
pub fn invariance_report(m: &ParametrizedModel, kappa: &Statistic, lattice: &Lattice) -> Result<InvarianceReport> {
    let sufficiency = check_sufficiency(m, kappa, lattice)?;
    if !sufficiency.is_sufficient() {
        return Err(Error::NotSufficient {
            deviation: sufficiency.max_deviation,
        });
    }
    let pushed = pushforward_model(m, kappa)?;
    Ok(InvarianceReport {
        sufficiency,
        comparison: compare_tensors(m, &pushed, lattice)?,
    })
}

// ---------------------------------------------------------------------------
// Monotonicity and information loss

/// `g^F(V, V) − g̃^F(V, V)` with `g̃^F` the Fisher form of `κ_*p`.
pub fn monotonicity_gap(m: &ParametrizedModel, kappa: &Statistic, x: &[f64], v: &[f64]) -> Result<f64> {
    let pushed = pushforward_model(m, kappa)?;
    Ok(fisher_form(m, x, v, v)?.value - fisher_form(&pushed, x, v, v)?.value)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InformationLoss {
    pub loss: f64,
    pub fisher: f64,
    pub pushforward_fisher: f64,
    /// `|g^F − g̃^F − loss|`.
    pub residual: f64,
}

/// Fisher information of the fiber-conditional models integrated against
/// `κ_*p(x)`.
///
/// On each fiber the conditional log-derivative is `∂_V ln p̄ − ∂_V ln κ_*p̄`,
/// so the loss is computed in two passes: the fiber mean of `∂_V ln p̄`, then
/// the second moment about it.
pub fn information_loss(m: &ParametrizedModel, kappa: &Statistic, x: &[f64], v: &[f64]) -> Result<InformationLoss> {
    m.check_x(x)?;
    let breaks = m.breaks();
    let fiber_loss = |y: &Point| -> Result<f64> {
        let first = kappa.fiber_integrate_vec(y, 2, &breaks, |p, out| {
            let d = m.density_value(x, p)?;
            if d > 0.0 {
                out[0] = d;
                out[1] = d * m.log_derivative(x, v, p)?;
            }
            Ok(())
        })?;
        let marginal = first[0].value;
        if marginal == 0.0 {
            return Err(Error::ZeroMarginal { at: y.to_string() });
        }
        let mean = first[1].value / marginal;
        let second = kappa.fiber_integrate_vec(y, 1, &breaks, |p, out| {
            let d = m.density_value(x, p)?;
            if d > 0.0 {
                let c = m.log_derivative(x, v, p)? - mean;
                out[0] = d * c * c;
            }
            Ok(())
        })?;
        Ok(second[0].value)
    };
    let loss = kappa.target().integrate(|y| fiber_loss(y))?.value;
    let fisher = fisher_form(m, x, v, v)?.value;
    let pushed = pushforward_model(m, kappa)?;
    let pushforward_fisher = fisher_form(&pushed, x, v, v)?.value;
    Ok(InformationLoss {
        loss,
        fisher,
        pushforward_fisher,
        residual: (fisher - pushforward_fisher - loss).abs(),
    })
}

// ---------------------------------------------------------------------------
// Step-model samples

/// Canonical tensor values of one step model at its anchor, along `∂_x`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepSample {
    pub mass: f64,
    /// Class masses `d_i = μ(D_i)`.
    pub class_mass: Vec<f64>,
    pub tau: Vec<f64>,
    pub one_form: f64,
    pub fisher: f64,
    pub amari_chentsov: f64,
}

impl StepSample {
    pub fn oneform_basis(&self) -> Vec<f64> {
        vec![self.one_form]
    }

    pub fn quadratic_basis(&self) -> Vec<f64> {
        vec![self.fisher, self.one_form * self.one_form]
    }

    pub fn cubic_basis(&self) -> Vec<f64> {
        let a = self.one_form;
        vec![self.amari_chentsov, a * a * a, a * self.fisher]
    }
}

/// Anchor of generated step models.
pub const STEP_ANCHOR: f64 = 0.5;

/// Random step model of total mass `mass` on `Finite(n)`, `3 ≤ n ≤ 6`, with a
/// random partition into at least two classes and `τ_i ∈ [−2, 2]`.
pub fn random_step_model<R: Rng + ?Sized>(mass: f64, rng: &mut R) -> Result<(ParametrizedModel, Statistic)> {
    let n = rng.random_range(3..=6);
    let classes = rng.random_range(2..=n);
    let space = SampleSpace::finite(n)?;
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let weights = raw.iter().map(|w| w * mass / total).collect();
    let mu = Measure::from_weights(space.clone(), weights)?;
    let kappa = Statistic::partition(space, random_partition(n, classes, rng)?)?;
    let tau = (0..classes).map(|_| rng.random_range(-2.0..2.0)).collect();
    Ok((make_step_model(&mu, &kappa, tau, STEP_ANCHOR)?, kappa))
}

/// Evaluates `A`, `g^F` and `T^AC` of a step model at its anchor.
pub fn step_sample(m: &ParametrizedModel, kappa: &Statistic, tau: &[f64]) -> Result<StepSample> {
    let x = [STEP_ANCHOR];
    let ints = m.integrate_dlogs(&x, &[vec![1.0]], 4, |_, dl, out| {
        out[0] = 1.0;
        out[1] = dl[0];
        out[2] = dl[0] * dl[0];
        out[3] = dl[0] * dl[0] * dl[0];
    })?;
    let class_mass = kappa.pushforward(m.reference())?.weights().map(<[f64]>::to_vec).unwrap_or_default();
    Ok(StepSample {
        mass: ints[0].value,
        class_mass,
        tau: tau.to_vec(),
        one_form: ints[1].value,
        fisher: ints[2].value,
        amari_chentsov: ints[3].value,
    })
}

/// `per_mass` random step-model samples at each requested total mass.
pub fn step_samples<R: Rng + ?Sized>(masses: &[f64], per_mass: usize, rng: &mut R) -> Result<Vec<StepSample>> {
    let mut out = Vec::with_capacity(masses.len() * per_mass);
    for &mass in masses {
        for _ in 0..per_mass {
            let (m, kappa) = random_step_model(mass, rng)?;
            let tau = step_taus(&m, &kappa)?;
            out.push(step_sample(&m, &kappa, &tau)?);
        }
    }
    Ok(out)
}

/// Recovers `τ` from the log-derivative on one atom of each class.
fn step_taus(m: &ParametrizedModel, kappa: &Statistic) -> Result<Vec<f64>> {
    let n = kappa.class_count().unwrap_or(0);
    let mut tau = vec![f64::NAN; n];
    for p in m.space().atoms()? {
        let c = kappa.class_index(&p)?;
        if tau[c].is_nan() {
            tau[c] = m.log_derivative(&[STEP_ANCHOR], &[1.0], &p)?;
        }
    }
    Ok(tau)
}

/// Centres of the mass bins covering `[lo, hi)`.
pub fn mass_bin_centres(lo: f64, hi: f64) -> Vec<f64> {
    let first = (lo / MASS_BIN_WIDTH).floor() as i64;
    let last = (hi / MASS_BIN_WIDTH).ceil() as i64;
    (first..last).map(|k| (k as f64 + 0.5) * MASS_BIN_WIDTH).collect()
}

// ---------------------------------------------------------------------------
// Fits

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSample {
    pub mass: f64,
    pub basis: Vec<f64>,
    pub candidate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinFit {
    pub lo: f64,
    pub hi: f64,
    pub samples: usize,
    /// `None` where the basis column vanishes on every sample of the bin.
    pub coefficients: Vec<Option<f64>>,
    /// `max |Σ c_k b_k − candidate| / max(1, max |candidate|)`.
    pub residual: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChentsovFit {
    pub coefficient_names: Vec<String>,
    pub bins: Vec<BinFit>,
    pub max_residual: f64,
}

impl ChentsovFit {
    pub fn bin_of(&self, mass: f64) -> Option<&BinFit> {
        self.bins.iter().find(|b| b.lo <= mass && mass < b.hi)
    }
}

fn fit_bins(samples: &[FitSample], names: &[&str]) -> Result<ChentsovFit> {
    let k = names.len();
    if let Some(s) = samples.iter().find(|s| s.basis.len() != k || !s.mass.is_finite()) {
        return Err(crate::error::invalid(format!(
            "fit sample at mass {} has {} basis values, expected {k}",
            s.mass,
            s.basis.len()
        )));
    }
    let mut by_bin: std::collections::BTreeMap<i64, Vec<&FitSample>> = Default::default();
    for s in samples {
        by_bin
            .entry((s.mass / MASS_BIN_WIDTH).floor() as i64)
            .or_default()
            .push(s);
    }
    let mut bins = Vec::with_capacity(by_bin.len());
    for (idx, group) in by_bin {
        let lo = idx as f64 * MASS_BIN_WIDTH;
        bins.push(fit_one_bin(lo, lo + MASS_BIN_WIDTH, &group, k)?);
    }
    let max_residual = bins.iter().map(|b| b.residual).fold(0.0, f64::max);
    Ok(ChentsovFit {
        coefficient_names: names.iter().map(|s| s.to_string()).collect(),
        bins,
        max_residual,
    })
}

fn fit_one_bin(lo: f64, hi: f64, group: &[&FitSample], k: usize) -> Result<BinFit> {
    let n = group.len();
    let col_norm = |c: usize| group.iter().map(|s| s.basis[c].abs()).fold(0.0, f64::max);
    let norms: Vec<f64> = (0..k).map(col_norm).collect();
    let top = norms.iter().copied().fold(0.0, f64::max);
    let active: Vec<usize> = (0..k).filter(|&c| norms[c] > ZERO_COLUMN_TOL * top.max(1.0)).collect();
    let y = DVector::from_iterator(n, group.iter().map(|s| s.candidate));
    let scale = y.amax().max(1.0);
    let mut coefficients = vec![None; k];
    let fitted = if active.is_empty() {
        DVector::zeros(n)
    } else {
        if n < active.len() {
            return Err(Error::IllConditioned {
                lo,
                hi,
                reason: format!("{n} samples for {} coefficients", active.len()),
            });
        }
        let x = DMatrix::from_fn(n, active.len(), |r, c| group[r].basis[active[c]]);
        let svd = x.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let rank = svd.singular_values.iter().filter(|&&s| s > RANK_TOL * smax).count();
        if rank < active.len() {
            return Err(Error::IllConditioned {
                lo,
                hi,
                reason: format!("design matrix has rank {rank} for {} coefficients", active.len()),
            });
        }
        let c = svd
            .solve(&y, RANK_TOL * smax)
            .map_err(|e| Error::IllConditioned {
                lo,
                hi,
                reason: e.to_string(),
            })?;
        for (slot, &col) in active.iter().enumerate() {
            coefficients[col] = Some(c[slot]);
        }
        x * c
    };
    let residual = (fitted - y).amax() / scale;
    Ok(BinFit {
        lo,
        hi,
        samples: n,
        degenerate: active.len() < k,
        coefficients,
        residual,
    })
}

/// Fits `candidate = c(m)·A` per mass bin.
pub fn fit_invariant_oneform(samples: &[FitSample]) -> Result<ChentsovFit> {
    fit_bins(samples, &["c"])
}

/// Fits `candidate = f(m)·g^F + d(m)·A²` per mass bin.
pub fn fit_invariant_quadratic(samples: &[FitSample]) -> Result<ChentsovFit> {
    fit_bins(samples, &["f", "d"])
}

/// Fits `candidate = t(m)·T^AC + a₁(m)·A³ + a₂(m)·A·g^F` per mass bin.
pub fn fit_invariant_cubic(samples: &[FitSample]) -> Result<ChentsovFit> {
    fit_bins(samples, &["t", "a1", "a2"])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expression;
    use crate::lattice::ParamBox;
    use crate::markov::{congruent_embedding, kernel_model};
    use crate::models::{atom_model, bernoulli};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn three_atom(exprs: [&str; 3], hi: f64) -> ParametrizedModel {
        let space = SampleSpace::finite(3).unwrap();
        let exprs = exprs.iter().map(|e| Expression::parse(e).unwrap()).collect();
        atom_model("m", ParamBox::interval(0.0, hi).unwrap(), Measure::base(space), exprs, true).unwrap()
    }

    #[test]
    fn congruent_bernoulli_keeps_its_tensors() {
        let m = bernoulli().unwrap();
        let kappa = Statistic::partition(SampleSpace::finite(3).unwrap(), vec![0, 1, 1]).unwrap();
        let pi = congruent_embedding(&kappa, &[vec![1.0], vec![0.4, 0.6]]).unwrap();
        let img = kernel_model(&m, &pi).unwrap();
        let lattice = Lattice::uniform(&[(0.1, 0.9)], 9).unwrap();
        let r = invariance_report(&img, &kappa, &lattice).unwrap();
        assert!(r.comparison.max_abs() <= 1e-10);
        let direct = compare_tensors(&m, &img, &lattice).unwrap();
        assert!(direct.max_abs() <= 1e-10);
        let x = 0.3;
        let g = fisher_form(&img, &[x], &[1.0], &[1.0]).unwrap().value;
        assert!((g - (1.0 / x + 1.0 / (1.0 - x))).abs() < 1e-10);
    }

    #[test]
    fn identity_and_permutations_are_exact() {
        let m = three_atom(["x1", "2*x1^2", "1 - x1 - 2*x1^2"], 0.5);
        let lattice = Lattice::uniform(&[(0.05, 0.45)], 5).unwrap();
        let id = Statistic::identity(m.space().clone());
        assert_eq!(invariance_report(&m, &id, &lattice).unwrap().comparison.max_abs(), 0.0);
        let perm = Statistic::partition(m.space().clone(), vec![2, 0, 1]).unwrap();
        assert!(invariance_report(&m, &perm, &lattice).unwrap().comparison.max_abs() <= 1e-12);
    }

    #[test]
    fn non_sufficient_statistics_are_refused() {
        let m = three_atom(["x1", "x1^2", "1 - x1 - x1^2"], 0.6);
        let kappa = Statistic::partition(m.space().clone(), vec![0, 0, 1]).unwrap();
        let lattice = Lattice::uniform(&[(0.1, 0.5)], 5).unwrap();
        assert!(matches!(
            invariance_report(&m, &kappa, &lattice),
            Err(Error::NotSufficient { .. })
        ));
    }

    #[test]
    fn monotonicity_examples() {
        // p = (x, x², 1 − x − x²) lumped as {1,2},{3}: gap = 1/(1 + x)
        let m = three_atom(["x1", "x1^2", "1 - x1 - x1^2"], 0.6);
        let kappa = Statistic::partition(m.space().clone(), vec![0, 0, 1]).unwrap();
        let gap = monotonicity_gap(&m, &kappa, &[0.3], &[1.0]).unwrap();
        assert!((gap - 1.0 / 1.3).abs() < 1e-6, "{gap}");
        let loss = information_loss(&m, &kappa, &[0.3], &[1.0]).unwrap();
        assert!((loss.loss - gap).abs() < 1e-8);
        assert!(loss.residual < 1e-8);
        assert_eq!(monotonicity_gap(&m, &kappa, &[0.3], &[0.0]).unwrap(), 0.0);

        let s = three_atom(["x1", "(1 - x1)/2", "(1 - x1)/2"], 1.0);
        let kappa = Statistic::partition(s.space().clone(), vec![0, 1, 1]).unwrap();
        assert!(monotonicity_gap(&s, &kappa, &[0.4], &[1.0]).unwrap().abs() <= 1e-9);
        assert!(information_loss(&s, &kappa, &[0.4], &[1.0]).unwrap().loss <= 1e-9);
    }

    #[test]
    fn step_samples_match_class_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for s in step_samples(&[0.7, 1.3], 10, &mut rng).unwrap() {
            for (n, got) in [(1, s.one_form), (2, s.fisher), (3, s.amari_chentsov)] {
                let want: f64 = s.class_mass.iter().zip(&s.tau).map(|(d, t)| d * t.powi(n)).sum();
                assert!((got - want).abs() < 1e-12 * (1.0 + want.abs()));
            }
            let total: f64 = s.class_mass.iter().sum();
            assert!((s.mass - total).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_fit_recovers_generated_members() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let masses = mass_bin_centres(0.5, 1.5);
        let samples = step_samples(&masses, 20, &mut rng).unwrap();
        let fits: Vec<FitSample> = samples
            .iter()
            .map(|s| FitSample {
                mass: s.mass,
                basis: s.quadratic_basis(),
                candidate: s.mass * s.fisher + 2.0 * s.one_form * s.one_form,
            })
            .collect();
        let fit = fit_invariant_quadratic(&fits).unwrap();
        assert_eq!(fit.bins.len(), masses.len());
        for (b, m) in fit.bins.iter().zip(&masses) {
            assert!((b.coefficients[0].unwrap() - m).abs() < 1e-6);
            assert!((b.coefficients[1].unwrap() - 2.0).abs() < 1e-6);
            assert!(b.residual <= 1e-8);
        }
    }

    #[test]
    fn vanishing_columns_are_flagged() {
        // statistical models: A ≡ 0, so d and c are unidentifiable
        let samples: Vec<FitSample> = (0..5)
            .map(|i| FitSample {
                mass: 1.0,
                basis: vec![1.0 + i as f64, 0.0],
                candidate: 1.0 + i as f64,
            })
            .collect();
        let fit = fit_invariant_quadratic(&samples).unwrap();
        let b = &fit.bins[0];
        assert!(b.degenerate);
        assert_eq!(b.coefficients[1], None);
        assert!((b.coefficients[0].unwrap() - 1.0).abs() < 1e-12);

        let zero: Vec<FitSample> = (0..3)
            .map(|_| FitSample {
                mass: 1.0,
                basis: vec![0.0],
                candidate: 0.0,
            })
            .collect();
        let fit = fit_invariant_oneform(&zero).unwrap();
        assert_eq!(fit.max_residual, 0.0);
        assert!(fit.bins[0].degenerate);
    }

    #[test]
    fn collinear_basis_is_ill_conditioned() {
        let samples: Vec<FitSample> = (1..6)
            .map(|i| FitSample {
                mass: 0.8,
                basis: vec![i as f64, 2.0 * i as f64],
                candidate: 1.0,
            })
            .collect();
        assert!(matches!(
            fit_invariant_quadratic(&samples),
            Err(Error::IllConditioned { .. })
        ));
    }
}
