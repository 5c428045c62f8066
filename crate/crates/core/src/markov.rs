//! Statistics, Markov kernels and the constructions built from them:
//! congruent embeddings, the Fisher–Neyman sufficiency test, conditional
//! distributions on products, kernel lifts of models and the decomposition
//! of a Markov morphism into a lift followed by a projection.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::expr::Expression;
use crate::lattice::Lattice;
use crate::models::{pushforward_model, ParametrizedModel, Potential};
use crate::quadrature::{level_nodes, Integral};
use crate::spaces::{Measure, Point, SampleSpace};

/// Row sums of kernels must be within this of 1.
const ROW_SUM_TOL: f64 = 1e-12;
/// Row densities on intervals must integrate to 1 within this.
const ROW_DENSITY_TOL: f64 = 1e-8;
/// Default sufficiency tolerance and the upper edge of the inconclusive band.
pub const SUFFICIENT_TOL: f64 = 1e-7;
pub const INCONCLUSIVE_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    First,
    Second,
}

#[derive(Debug, Clone, PartialEq)]
enum Map {
    Identity,
    /// Class of each atom (flat index) of a discrete source.
    Partition(Vec<usize>),
    /// Interior cut points of an interval; class `j` is `(c_{j−1}, c_j]`.
    Intervals(Vec<f64>),
    Project(Factor),
}

/// A measurable map `κ: Ω → Ω'` of one of the supported shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Statistic {
    source: SampleSpace,
    target: SampleSpace,
    map: Map,
}

impl Statistic {
    pub fn identity(space: SampleSpace) -> Statistic {
        Statistic {
            target: space.clone(),
            source: space,
            map: Map::Identity,
        }
    }

    /// `κ(ω) = classes[ω]` on a discrete space; every class `0..n` must be hit.
    pub fn partition(source: SampleSpace, classes: Vec<usize>) -> Result<Statistic> {
        let m = source
            .atom_count()
            .ok_or_else(|| Error::PartitionMismatch("partitions need a discrete source".into()))?;
        if classes.len() != m {
            return Err(Error::PartitionMismatch(format!(
                "{} class labels for {m} atoms",
                classes.len()
            )));
        }
        let n = classes.iter().max().map_or(0, |c| c + 1);
        let mut hit = vec![false; n];
        classes.iter().for_each(|&c| hit[c] = true);
        if let Some(empty) = hit.iter().position(|h| !h) {
            return Err(Error::PartitionMismatch(format!("class {} is empty", empty + 1)));
        }
        Ok(Statistic {
            source,
            target: SampleSpace::finite(n)?,
            map: Map::Partition(classes),
        })
    }

    /// Partition given as lists of (zero-based) atoms per class.
    pub fn from_classes(source: SampleSpace, classes: &[Vec<usize>]) -> Result<Statistic> {
        let m = source
            .atom_count()
            .ok_or_else(|| Error::PartitionMismatch("partitions need a discrete source".into()))?;
        let mut assignment = vec![usize::MAX; m];
        for (c, atoms) in classes.iter().enumerate() {
            for &a in atoms {
                if a >= m {
                    return Err(Error::PartitionMismatch(format!("atom {} does not exist", a + 1)));
                }
                if assignment[a] != usize::MAX {
                    return Err(Error::PartitionMismatch(format!("atom {} is in two classes", a + 1)));
                }
                assignment[a] = c;
            }
        }
        if let Some(a) = assignment.iter().position(|&c| c == usize::MAX) {
            return Err(Error::PartitionMismatch(format!("atom {} is not covered", a + 1)));
        }
        Statistic::partition(source, assignment)
    }

    /// Interval partition of a grid at increasing interior cut points.
    pub fn intervals(source: SampleSpace, cuts: Vec<f64>) -> Result<Statistic> {
        let SampleSpace::Grid { lo, hi, .. } = source else {
            return Err(Error::PartitionMismatch("interval partitions need an interval source".into()));
        };
        if cuts.iter().any(|&c| !(c > lo && c < hi)) || cuts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::PartitionMismatch(format!(
                "cuts {cuts:?} must increase strictly inside ({lo}, {hi})"
            )));
        }
        let n = cuts.len() + 1;
        Ok(Statistic {
            source,
            target: SampleSpace::finite(n)?,
            map: Map::Intervals(cuts),
        })
    }

    pub fn project(source: SampleSpace, factor: Factor) -> Result<Statistic> {
        let (a, b) = source
            .factors()
            .ok_or_else(|| Error::PartitionMismatch("projections need a product space".into()))?;
        let target = match factor {
            Factor::First => a.clone(),
            Factor::Second => b.clone(),
        };
        Ok(Statistic {
            source,
            target,
            map: Map::Project(factor),
        })
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.map, Map::Identity)
    }

    pub fn source(&self) -> &SampleSpace {
        &self.source
    }

    pub fn target(&self) -> &SampleSpace {
        &self.target
    }

    pub fn class_count(&self) -> Option<usize> {
        self.target.atom_count()
    }

    pub fn cuts(&self) -> &[f64] {
        match &self.map {
            Map::Intervals(c) => c,
            _ => &[],
        }
    }

    /// `κ(ω)` as a point of the target.
    pub fn apply(&self, p: &Point) -> Result<Point> {
        match &self.map {
            Map::Identity => Ok(*p),
            Map::Partition(_) | Map::Intervals(_) => Ok(Point::atom(self.class_index(p)?)),
            Map::Project(Factor::First) => Ok(Point::single(p.first())),
            Map::Project(Factor::Second) => p
                .second()
                .map(Point::single)
                .ok_or_else(|| invalid(format!("{p} has no second coordinate"))),
        }
    }

    /// Zero-based class of `ω` when the target is discrete.
    pub fn class_index(&self, p: &Point) -> Result<usize> {
        match &self.map {
            Map::Partition(classes) => self
                .source
                .atom_index(p)
                .map(|i| classes[i])
                .ok_or_else(|| invalid(format!("{p} is not an atom of {}", self.source))),
            Map::Intervals(cuts) => {
                let t = p.w()[0];
                Ok(cuts.iter().filter(|&&c| t > c).count())
            }
            _ => {
                let y = self.apply(p)?;
                self.target
                    .atom_index(&y)
                    .ok_or_else(|| invalid(format!("{y} is not an atom of {}", self.target)))
            }
        }
    }

    /// Integrates `f` over the fiber `κ^{-1}(y)` against the base measure,
    /// disintegrated along `κ` (for the identity this is evaluation at `y`).
    pub fn fiber_integrate_vec(
        &self,
        y: &Point,
        dim: usize,
        breaks: &[f64],
        mut f: impl FnMut(&Point, &mut [f64]) -> Result<()>,
    ) -> Result<Vec<Integral>> {
        match &self.map {
            Map::Identity => {
                let mut out = vec![0.0; dim];
                f(y, &mut out)?;
                Ok(out.iter().map(|&v| Integral::exact(v, v.abs())).collect())
            }
            Map::Partition(classes) => {
                let c = self
                    .target
                    .atom_index(y)
                    .ok_or_else(|| invalid(format!("{y} is not a class")))?;
                let mut sums = vec![0.0; dim];
                let mut abs = vec![0.0; dim];
                let mut out = vec![0.0; dim];
                for (a, p) in self.source.atoms()?.iter().enumerate() {
                    if classes[a] != c {
                        continue;
                    }
                    out.iter_mut().for_each(|o| *o = 0.0);
                    f(p, &mut out)?;
                    for k in 0..dim {
                        sums[k] += out[k];
                        abs[k] += out[k].abs();
                    }
                }
                Ok(sums.into_iter().zip(abs).map(|(s, a)| Integral::exact(s, a)).collect())
            }
            Map::Intervals(cuts) => {
                let SampleSpace::Grid { lo, hi, quadrature } = &self.source else {
                    unreachable!("interval statistics have interval sources")
                };
                let c = self
                    .target
                    .atom_index(y)
                    .ok_or_else(|| invalid(format!("{y} is not a class")))?;
                let a = if c == 0 { *lo } else { cuts[c - 1] };
                let b = if c == cuts.len() { *hi } else { cuts[c] };
                SampleSpace::grid_with(a, b, quadrature.clone())?.integrate_vec(dim, breaks, f)
            }
            Map::Project(factor) => {
                let (left, right) = self.source.factors().expect("projection source is a product");
                let fixed = y.first();
                match factor {
                    Factor::First => right.integrate_vec(dim, &[], |q, out| f(&Point::pair(fixed, q.first()), out)),
                    Factor::Second => left.integrate_vec(dim, breaks, |q, out| f(&Point::pair(q.first(), fixed), out)),
                }
            }
        }
    }

    /// `κ_*m`.
    pub fn pushforward(&self, m: &Measure) -> Result<Measure> {
        if m.space() != &self.source {
            return Err(Error::SpaceMismatch(format!("measure on {} vs statistic on {}", m.space(), self.source)));
        }
        if let Map::Identity = self.map {
            return Ok(m.clone());
        }
        let fiber_mass = |st: &Statistic, m: &Measure, y: &Point| -> Result<f64> {
            let r = st.fiber_integrate_vec(y, 1, m.breaks(), |p, out| {
                out[0] = m.density(p)?;
                Ok(())
            })?;
            Ok(r[0].value)
        };
        if self.target.is_discrete() {
            let weights = self
                .target
                .atoms()?
                .iter()
                .map(|y| fiber_mass(self, m, y))
                .collect::<Result<Vec<_>>>()?;
            return if m.is_signed() {
                Measure::signed_weights(self.target.clone(), weights)
            } else {
                Measure::from_weights(self.target.clone(), weights)
            };
        }
        let (st, mm) = (self.clone(), m.clone());
        Ok(Measure::from_density(self.target.clone(), move |y| fiber_mass(&st, &mm, y)))
    }

    /// `m × n` matrix with `L[j][c] = 1` iff `κ(j) = c`.
    pub fn lumping_matrix(&self) -> Result<Vec<Vec<f64>>> {
        let n = self
            .class_count()
            .ok_or_else(|| invalid("lumping matrices need a finite target"))?;
        self.source
            .atoms()?
            .iter()
            .map(|p| {
                let c = self.class_index(p)?;
                Ok((0..n).map(|k| if k == c { 1.0 } else { 0.0 }).collect())
            })
            .collect()
    }
}

/// Atoms of a discrete space, or the coarsest quadrature nodes otherwise.
pub fn probe_points(space: &SampleSpace) -> Vec<Point> {
    if let Ok(atoms) = space.atoms() {
        return atoms;
    }
    match space {
        SampleSpace::Grid { lo, hi, quadrature } => level_nodes(*lo, *hi, &[], quadrature, 0)
            .into_iter()
            .map(|(t, _)| Point::real(t))
            .collect(),
        _ => space.sample_points(),
    }
}

// ---------------------------------------------------------------------------
// Kernels

#[derive(Debug, Clone, PartialEq)]
enum Rows {
    Matrix(Vec<Vec<f64>>),
    /// Row densities against Lebesgue measure on an interval target.
    Densities(Vec<Expression>),
}

/// A Markov kernel from `Finite(n)` to a finite set or an interval.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovKernel {
    target: SampleSpace,
    rows: Rows,
}

impl MarkovKernel {
    /// Row-stochastic matrix kernel `Finite(n) → Finite(m)`.
    pub fn from_matrix(rows: Vec<Vec<f64>>) -> Result<MarkovKernel> {
        let m = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || m == 0 || rows.iter().any(|r| r.len() != m) {
            return Err(invalid("kernel rows must be non-empty and of equal length"));
        }
        for (i, r) in rows.iter().enumerate() {
            if r.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(invalid(format!("kernel row {} has a negative or non-finite entry", i + 1)));
            }
            let s: f64 = r.iter().sum();
            if s == 0.0 {
                return Err(Error::ZeroRow(i));
            }
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(invalid(format!("kernel row {} sums to {s}", i + 1)));
            }
        }
        Ok(MarkovKernel {
            target: SampleSpace::finite(m)?,
            rows: Rows::Matrix(rows),
        })
    }

    /// Kernel into an interval with one density expression in `w1` per row.
    pub fn from_densities(target: SampleSpace, rows: Vec<Expression>) -> Result<MarkovKernel> {
        if !matches!(target, SampleSpace::Grid { .. }) {
            return Err(invalid("density rows need an interval target"));
        }
        if rows.is_empty() {
            return Err(invalid("kernel needs at least one row"));
        }
        for (i, e) in rows.iter().enumerate() {
            e.check_dims(0, 1)?;
            let mass = target
                .integrate(|p| {
                    let v = e.eval(&[], p.w())?;
                    if v < 0.0 {
                        return Err(invalid(format!("kernel row {} density is negative", i + 1)));
                    }
                    Ok(v)
                })?
                .value;
            if mass == 0.0 {
                return Err(Error::ZeroRow(i));
            }
            if (mass - 1.0).abs() > ROW_DENSITY_TOL {
                return Err(invalid(format!("kernel row {} integrates to {mass}", i + 1)));
            }
        }
        Ok(MarkovKernel {
            target,
            rows: Rows::Densities(rows),
        })
    }

    pub fn source_size(&self) -> usize {
        match &self.rows {
            Rows::Matrix(r) => r.len(),
            Rows::Densities(r) => r.len(),
        }
    }

    pub fn source(&self) -> SampleSpace {
        SampleSpace::finite(self.source_size()).expect("kernels have at least one row")
    }

    pub fn target(&self) -> &SampleSpace {
        &self.target
    }

    pub fn matrix(&self) -> Option<&Vec<Vec<f64>>> {
        match &self.rows {
            Rows::Matrix(r) => Some(r),
            Rows::Densities(_) => None,
        }
    }

    /// `Π(i, ω₂)`: a probability on finite targets, a density on intervals.
    pub fn entry(&self, i: usize, y: &Point) -> Result<f64> {
        match &self.rows {
            Rows::Matrix(r) => {
                let j = self
                    .target
                    .atom_index(y)
                    .ok_or_else(|| invalid(format!("{y} is not a target atom")))?;
                Ok(r[i][j])
            }
            Rows::Densities(r) => Ok(r[i].eval(&[], y.w())?),
        }
    }

    /// Every entry (or row density at the probe nodes) is positive.
    pub fn is_strictly_positive(&self) -> bool {
        match &self.rows {
            Rows::Matrix(r) => r.iter().flatten().all(|v| *v > 0.0),
            Rows::Densities(_) => {
                let probes = probe_points(&self.target);
                (0..self.source_size()).all(|i| probes.iter().all(|p| self.entry(i, p).is_ok_and(|v| v > 0.0)))
            }
        }
    }
}

/// `Π_*ν`, i.e. `(Π_*ν)_j = Σ_i ν_i Π_{ij}`.
pub fn kernel_pushforward(pi: &MarkovKernel, nu: &Measure) -> Result<Measure> {
    let n = pi.source_size();
    let w = nu
        .weights()
        .filter(|w| w.len() == n && nu.space().factors().is_none())
        .ok_or_else(|| Error::SpaceMismatch(format!("kernel source Finite({n}) vs measure on {}", nu.space())))?
        .to_vec();
    match &pi.rows {
        Rows::Matrix(r) => {
            let m = pi.target.atom_count().unwrap_or(0);
            let out = (0..m).map(|j| (0..n).map(|i| w[i] * r[i][j]).sum()).collect();
            if nu.is_signed() {
                Measure::signed_weights(pi.target.clone(), out)
            } else {
                Measure::from_weights(pi.target.clone(), out)
            }
        }
        Rows::Densities(_) => {
            let k = pi.clone();
            Ok(Measure::from_density(pi.target.clone(), move |y| {
                let mut s = 0.0;
                for (i, wi) in w.iter().enumerate() {
                    s += wi * k.entry(i, y)?;
                }
                Ok(s)
            }))
        }
    }
}

/// `Π₁` followed by `Π₂`, i.e. the matrix product `Π₁Π₂`.
pub fn compose(first: &MarkovKernel, second: &MarkovKernel) -> Result<MarkovKernel> {
    let (a, b) = match (first.matrix(), second.matrix()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(invalid("composition needs finite kernels")),
    };
    if a[0].len() != b.len() {
        return Err(Error::SpaceMismatch(format!(
            "first kernel has {} targets, second has {} sources",
            a[0].len(),
            b.len()
        )));
    }
    let m = b[0].len();
    let rows = a
        .iter()
        .map(|row| {
            let mut out: Vec<f64> = (0..m).map(|j| row.iter().zip(b).map(|(x, bk)| x * bk[j]).sum()).collect();
            // absorb rounding so the row-sum invariant holds exactly enough
            let s: f64 = out.iter().sum();
            out.iter_mut().for_each(|v| *v /= s);
            out
        })
        .collect();
    MarkovKernel::from_matrix(rows)
}

/// Congruent embedding `Finite(n) → Finite(m)` subordinate to `κ: Finite(m) → Finite(n)`.
///
/// `weights[i]` is either the distribution over the fiber `κ^{-1}(i)` (in
/// atom order) or a full row of length `m` that must vanish off the fiber.
pub fn congruent_embedding(kappa: &Statistic, weights: &[Vec<f64>]) -> Result<MarkovKernel> {
    let n = kappa
        .class_count()
        .ok_or_else(|| invalid("congruent embeddings need a finite target"))?;
    let m = kappa
        .source()
        .atom_count()
        .ok_or_else(|| invalid("congruent embeddings need a finite source"))?;
    if weights.len() != n {
        return Err(invalid(format!("{} weight rows for {n} classes", weights.len())));
    }
    let atoms = kappa.source().atoms()?;
    let class_of: Vec<usize> = atoms.iter().map(|p| kappa.class_index(p)).collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(n);
    for (i, w) in weights.iter().enumerate() {
        let fiber: Vec<usize> = (0..m).filter(|&j| class_of[j] == i).collect();
        let mut row = vec![0.0; m];
        if w.len() == m {
            for j in 0..m {
                if class_of[j] != i && w[j] != 0.0 {
                    return Err(Error::SupportViolation { row: i, mass: w[j] });
                }
            }
            row.clone_from(w);
        } else if w.len() == fiber.len() {
            for (&j, &v) in fiber.iter().zip(w) {
                row[j] = v;
            }
        } else if w.len() < m {
            return Err(Error::SupportViolation {
                row: i,
                mass: w.iter().sum(),
            });
        } else {
            return Err(invalid(format!("row {} has {} weights", i + 1, w.len())));
        }
        if row.iter().any(|v| !(*v >= 0.0)) {
            return Err(invalid(format!("row {} has a negative weight", i + 1)));
        }
        let s: f64 = row.iter().sum();
        if s == 0.0 {
            return Err(Error::ZeroRow(i));
        }
        if (s - 1.0).abs() > ROW_SUM_TOL {
            return Err(invalid(format!("row {} sums to {s}", i + 1)));
        }
        rows.push(row);
    }
    MarkovKernel::from_matrix(rows)
}

/// Whether lumping by `κ` undoes `Π`: `Π·L = I` entrywise within 1e-12.
pub fn left_inverse_check(pi: &MarkovKernel, kappa: &Statistic) -> bool {
    let (Some(rows), Ok(lump)) = (pi.matrix(), kappa.lumping_matrix()) else {
        return false;
    };
    let n = rows.len();
    if lump.len() != rows[0].len() || lump[0].len() != n {
        return false;
    }
    (0..n).all(|i| {
        (0..n).all(|c| {
            let v: f64 = rows[i].iter().zip(&lump).map(|(p, l)| p * l[c]).sum();
            let target = if i == c { 1.0 } else { 0.0 };
            (v - target).abs() <= 1e-12
        })
    })
}

// ---------------------------------------------------------------------------
// Random generators (seeded by the caller)

/// Strictly positive row-stochastic `n × m` matrix.
pub fn random_positive_kernel<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Result<MarkovKernel> {
    let rows = (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..1.0)).collect();
            normalized(raw)
        })
        .collect();
    MarkovKernel::from_matrix(rows)
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    // push the rounding residue onto the largest entry
    let r = 1.0 - v.iter().sum::<f64>();
    if let Some(k) = (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])) {
        v[k] += r;
    }
    v
}

/// Surjective class assignment of `m` atoms to `n ≤ m` classes.
pub fn random_partition<R: Rng + ?Sized>(m: usize, n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n == 0 || n > m {
        return Err(invalid(format!("cannot split {m} atoms into {n} non-empty classes")));
    }
    let mut classes: Vec<usize> = (0..n).chain((n..m).map(|_| rng.random_range(0..n))).collect();
    classes.shuffle(rng);
    Ok(classes)
}

/// Congruent embedding subordinate to `κ` with random positive fiber weights.
pub fn random_congruent_embedding<R: Rng + ?Sized>(kappa: &Statistic, rng: &mut R) -> Result<MarkovKernel> {
    let n = kappa
        .class_count()
        .ok_or_else(|| invalid("congruent embeddings need a finite target"))?;
    let atoms = kappa.source().atoms()?;
    let class_of: Vec<usize> = atoms.iter().map(|p| kappa.class_index(p)).collect::<Result<_>>()?;
    let weights: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let size = class_of.iter().filter(|&&c| c == i).count();
            normalized((0..size).map(|_| rng.random_range(0.05..1.0)).collect())
        })
        .collect();
    congruent_embedding(kappa, &weights)
}

// ---------------------------------------------------------------------------
// Sufficiency

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sufficiency {
    Sufficient,
    NotSufficient,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SufficiencyWitness {
    pub x: Vec<f64>,
    pub x_prime: Vec<f64>,
    pub omega: String,
    pub r: f64,
    pub r_prime: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SufficiencyVerdict {
    pub verdict: Sufficiency,
    /// `max_ω (max_x r − min_x r) / max_x |r|` over the lattice.
    pub max_deviation: f64,
    pub tolerance: f64,
    pub witness: Option<SufficiencyWitness>,
}

impl SufficiencyVerdict {
    pub fn is_sufficient(&self) -> bool {
        self.verdict == Sufficiency::Sufficient
    }
}

/// Fisher–Neyman ratio `r(x, ω) = p̄(x, ω) / κ_*(p̄)(x, κ(ω))`.
pub fn fisher_neyman_ratio(
    m: &ParametrizedModel,
    pushed: &ParametrizedModel,
    kappa: &Statistic,
    x: &[f64],
    p: &Point,
) -> Result<f64> {
    let num = m.potential_value(x, p)?;
    let y = kappa.apply(p)?;
    let den = pushed.potential_value(x, &y)?;
    if den == 0.0 {
        return Err(Error::ZeroDenominator { at: y.to_string() });
    }
    Ok(num / den)
}

/// Decides whether `r(x, ω)` is independent of `x` on the lattice.
pub fn check_sufficiency(m: &ParametrizedModel, kappa: &Statistic, lattice: &Lattice) -> Result<SufficiencyVerdict> {
    check_sufficiency_with(m, kappa, lattice, SUFFICIENT_TOL)
}

pub fn check_sufficiency_with(
    m: &ParametrizedModel,
    kappa: &Statistic,
    lattice: &Lattice,
    tolerance: f64,
) -> Result<SufficiencyVerdict> {
    let pushed = pushforward_model(m, kappa)?;
    let points = lattice.points();
    for x in &points {
        m.check_x(x)?;
    }
    let mut worst = 0.0f64;
    let mut witness = None;
    for p in probe_points(m.space()) {
        let mut lo = (f64::INFINITY, 0usize);
        let mut hi = (f64::NEG_INFINITY, 0usize);
        let mut scale = 0.0f64;
        for (k, x) in points.iter().enumerate() {
            let r = fisher_neyman_ratio(m, &pushed, kappa, x, &p)?;
            if r < lo.0 {
                lo = (r, k);
            }
            if r > hi.0 {
                hi = (r, k);
            }
            scale = scale.max(r.abs());
        }
        if scale == 0.0 {
            continue;
        }
        let dev = (hi.0 - lo.0) / scale;
        if dev > worst {
            worst = dev;
            witness = Some(SufficiencyWitness {
                x: points[hi.1].clone(),
                x_prime: points[lo.1].clone(),
                omega: p.to_string(),
                r: hi.0,
                r_prime: lo.0,
            });
        }
    }
    let verdict = if worst <= tolerance {
        Sufficiency::Sufficient
    } else if worst <= INCONCLUSIVE_TOL {
        Sufficiency::Inconclusive
    } else {
        Sufficiency::NotSufficient
    };
    Ok(SufficiencyVerdict {
        verdict,
        max_deviation: worst,
        tolerance,
        witness: if verdict == Sufficiency::Sufficient { None } else { witness },
    })
}

// ---------------------------------------------------------------------------
// Conditional distributions

/// Normalized measure on the fiber over one point of the projection target.
#[derive(Debug, Clone)]
pub struct FiberMeasure {
    pub at: Point,
    pub marginal: f64,
    pub measure: Measure,
}

/// Conditional distributions of `p(x)` on a product given one coordinate.
///
/// Fibers are taken over the atoms of the conditioning factor, or over its
/// coarsest quadrature nodes if it is an interval.
pub fn conditional_distribution(m: &ParametrizedModel, factor: Factor, x: &[f64]) -> Result<Vec<FiberMeasure>> {
    m.check_x(x)?;
    let kappa = Statistic::project(m.space().clone(), factor)?;
    let other = match (m.space().factors(), factor) {
        (Some((_, b)), Factor::First) => b.clone(),
        (Some((a, _)), Factor::Second) => a.clone(),
        _ => unreachable!("projection checked the product"),
    };
    let breaks = m.breaks();
    let mut out = Vec::new();
    for y in probe_points(kappa.target()) {
        let marginal = kappa.fiber_integrate_vec(&y, 1, &breaks, |p, o| {
            o[0] = m.density_value(x, p)?;
            Ok(())
        })?[0]
            .value;
        if !(marginal > 0.0) {
            return Err(Error::ZeroMarginal { at: y.to_string() });
        }
        let fixed = y.first();
        let join = move |q: &Point| match factor {
            Factor::First => Point::pair(fixed, q.first()),
            Factor::Second => Point::pair(q.first(), fixed),
        };
        let measure = if let Some(_) = other.atom_count() {
            let w = other
                .atoms()?
                .iter()
                .map(|q| Ok(m.density_value(x, &join(q))? / marginal))
                .collect::<Result<Vec<_>>>()?;
            Measure::from_weights(other.clone(), w)?
        } else {
            let (mm, xx) = (m.clone(), x.to_vec());
            Measure::from_density(other.clone(), move |q| Ok(mm.density_value(&xx, &join(q))? / marginal))
        };
        out.push(FiberMeasure {
            at: y,
            marginal,
            measure,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Lifts and decomposition

/// `Π^{[p]}(x, ω₁, ω₂) = π(ω₁, ω₂)·p̄(x, ω₁)`, with `π` the density of
/// `Π(ω₁, ·)` against `μ₂`.
struct LiftPotential {
    base: ParametrizedModel,
    kernel: MarkovKernel,
    mu2: Measure,
}

impl LiftPotential {
    fn kernel_density(&self, p: &Point) -> Result<f64> {
        let i = p.first_atom().ok_or_else(|| invalid(format!("{p} has no source atom")))?;
        let y = Point::single(p.second().ok_or_else(|| invalid(format!("{p} is not a pair")))?);
        let base = self.mu2.density(&y)?;
        if base == 0.0 {
            return Err(Error::ZeroDenominator { at: y.to_string() });
        }
        Ok(self.kernel.entry(i, &y)? / base)
    }
}

impl Potential for LiftPotential {
    fn value(&self, x: &[f64], p: &Point) -> Result<f64> {
        Ok(self.kernel_density(p)? * self.base.potential_value(x, &Point::single(p.first()))?)
    }

    fn ln_value(&self, x: &[f64], p: &Point) -> Result<f64> {
        let k = self.kernel_density(p)?;
        if !(k > 0.0) {
            return Err(Error::NonPositiveDensity {
                value: k,
                at: p.to_string(),
            });
        }
        Ok(k.ln() + self.base.potential().ln_value(x, &Point::single(p.first()))?)
    }

    fn exact_dlog(&self, x: &[f64], v: &[f64], p: &Point) -> Option<Result<f64>> {
        Some(self.base.log_derivative(x, v, &Point::single(p.first())))
    }

    fn describe(&self) -> String {
        format!("kernel lift of {}", self.base.potential().describe())
    }
}

/// `μ₁ ⊗ μ₂` on the product space.
pub fn product_measure(mu1: &Measure, mu2: &Measure) -> Result<Measure> {
    let space = SampleSpace::product(mu1.space().clone(), mu2.space().clone())?;
    if let (Some(a), Some(b)) = (mu1.weights(), mu2.weights()) {
        let w = a.iter().flat_map(|x| b.iter().map(move |y| x * y)).collect();
        return Measure::from_weights(space, w);
    }
    let (f1, f2) = (mu1.density_fn(), mu2.density_fn());
    Ok(Measure::from_density(space, move |p| {
        let second = p.second().ok_or_else(|| invalid(format!("{p} is not a pair")))?;
        Ok(f1(&Point::single(p.first()))? * f2(&Point::single(second))?)
    })
    .with_breaks(mu1.breaks().to_vec()))
}

/// The lifted model `x ↦ Π^{[p]}(x)` on `Ω₁ × Ω₂` with reference `μ₁ ⊗ μ₂`.
pub fn lift_model_by_kernel(m: &ParametrizedModel, pi: &MarkovKernel, mu2: &Measure) -> Result<ParametrizedModel> {
    if m.space() != &pi.source() {
        return Err(Error::SpaceMismatch(format!("model on {} vs kernel source {}", m.space(), pi.source())));
    }
    if mu2.space() != pi.target() {
        return Err(Error::SpaceMismatch(format!("μ₂ on {} vs kernel target {}", mu2.space(), pi.target())));
    }
    if !pi.is_strictly_positive() {
        return Err(invalid("lifts need a strictly positive kernel"));
    }
    let mass = mu2.mass()?;
    if mu2.is_signed() || (mass - 1.0).abs() > 1e-10 {
        return Err(Error::NotProbability(mass));
    }
    let reference = product_measure(m.reference(), mu2)?;
    let pot = LiftPotential {
        base: m.clone(),
        kernel: pi.clone(),
        mu2: mu2.clone(),
    };
    Ok(ParametrizedModel::new(
        format!("{} (lifted)", m.name()),
        m.param_box().clone(),
        reference,
        Arc::new(pot),
        m.is_statistical(),
    )?
    .with_diff(m.diff().clone()))
}

/// `Π_*p̄(x, ω₂) = Σ_i Π(i, ω₂)·p̄(x, i)·μ_i` against the base measure of the target.
struct KernelImagePotential {
    base: ParametrizedModel,
    kernel: MarkovKernel,
    atoms: Vec<Point>,
    mu: Vec<f64>,
}

impl KernelImagePotential {
    fn moments(&self, x: &[f64], v: Option<&[f64]>, y: &Point) -> Result<(f64, f64)> {
        let (mut mass, mut moment) = (0.0, 0.0);
        for (i, (a, mu)) in self.atoms.iter().zip(&self.mu).enumerate() {
            let k = self.kernel.entry(i, y)?;
            if k == 0.0 || *mu == 0.0 {
                continue;
            }
            let w = k * mu * self.base.potential_value(x, a)?;
            mass += w;
            if let Some(v) = v {
                moment += w * self.base.log_derivative(x, v, a)?;
            }
        }
        Ok((mass, moment))
    }
}

impl Potential for KernelImagePotential {
    fn value(&self, x: &[f64], y: &Point) -> Result<f64> {
        Ok(self.moments(x, None, y)?.0)
    }

    fn exact_dlog(&self, x: &[f64], v: &[f64], y: &Point) -> Option<Result<f64>> {
        Some(self.moments(x, Some(v), y).and_then(|(mass, moment)| {
            if mass == 0.0 {
                Err(Error::ZeroDenominator { at: y.to_string() })
            } else {
                Ok(moment / mass)
            }
        }))
    }

    fn describe(&self) -> String {
        format!("kernel image of {}", self.base.potential().describe())
    }
}

/// The model `x ↦ Π_*p(x)` on the kernel target, against its base measure.
pub fn kernel_model(m: &ParametrizedModel, pi: &MarkovKernel) -> Result<ParametrizedModel> {
    if m.space() != &pi.source() {
        return Err(Error::SpaceMismatch(format!("model on {} vs kernel source {}", m.space(), pi.source())));
    }
    let atoms = m.space().atoms()?;
    let mu = atoms
        .iter()
        .map(|a| m.reference().density(a))
        .collect::<Result<Vec<_>>>()?;
    let pot = KernelImagePotential {
        base: m.clone(),
        kernel: pi.clone(),
        atoms,
        mu,
    };
    Ok(ParametrizedModel::new(
        format!("{} (kernel image)", m.name()),
        m.param_box().clone(),
        Measure::base(pi.target().clone()),
        Arc::new(pot),
        m.is_statistical(),
    )?
    .with_diff(m.diff().clone()))
}

#[derive(Debug, Clone)]
pub struct Decomposition {
    pub lift: ParametrizedModel,
    /// Sufficiency of the first projection for the lifted model.
    pub first_projection: SufficiencyVerdict,
    /// `x ↦ (π₂)_* Π^{[p]}(x)`.
    pub projected: ParametrizedModel,
    /// `max |(π₂)_* Π^{[p]}(x) − Π_* p(x)|` over lattice points and target probes.
    pub residual: f64,
}

/// Factors `x ↦ Π_* p(x)` as the kernel lift followed by the second projection.
pub fn decompose_markov_morphism(
    m: &ParametrizedModel,
    pi: &MarkovKernel,
    mu2: &Measure,
    lattice: &Lattice,
) -> Result<Decomposition> {
    let lift = lift_model_by_kernel(m, pi, mu2)?;
    let first = Statistic::project(lift.space().clone(), Factor::First)?;
    let second = Statistic::project(lift.space().clone(), Factor::Second)?;
    let first_projection = check_sufficiency(&lift, &first, lattice)?;
    let projected = pushforward_model(&lift, &second)?;
    let probes = probe_points(pi.target());
    let mut residual = 0.0f64;
    for x in lattice.points() {
        let via_lift = second.pushforward(&lift.density_at(&x)?)?;
        let direct = kernel_pushforward(pi, &m.density_at(&x)?)?;
        for y in &probes {
            residual = residual.max((via_lift.density(y)? - direct.density(y)?).abs());
        }
    }
    Ok(Decomposition {
        lift,
        first_projection,
        projected,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeConfig;
    use crate::models::{atom_model, bernoulli, scale_model};
    use crate::spaces::total_variation;
    use crate::lattice::ParamBox;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fin(n: usize) -> SampleSpace {
        SampleSpace::finite(n).unwrap()
    }

    fn three_atom(exprs: [&str; 3], hi: f64) -> ParametrizedModel {
        atom_model(
            "three",
            ParamBox::interval(0.0, hi).unwrap(),
            Measure::base(fin(3)),
            exprs.iter().map(|e| e.parse().unwrap()).collect(),
            true,
        )
        .unwrap()
    }

    #[test]
    fn pushforward_examples() {
        let m = Measure::from_weights(fin(3), vec![0.1, 0.2, 0.7]).unwrap();
        let k = Statistic::from_classes(fin(3), &[vec![0], vec![1, 2]]).unwrap();
        let p = crate::spaces::pushforward_statistic(&m, &k).unwrap();
        let w = p.weights().unwrap();
        assert!((w[0] - 0.1).abs() < 1e-15 && (w[1] - 0.9).abs() < 1e-15);
        assert_eq!(Statistic::identity(fin(3)).pushforward(&m).unwrap().weights(), m.weights());

        let g = SampleSpace::grid(0.0, 1.0).unwrap();
        let halves = Statistic::intervals(g.clone(), vec![0.5]).unwrap();
        let p = halves.pushforward(&Measure::base(g)).unwrap();
        for v in p.weights().unwrap() {
            assert!((v - 0.5).abs() < 1e-14);
        }
    }

    #[test]
    fn partitions_must_cover() {
        assert!(matches!(
            Statistic::from_classes(fin(3), &[vec![0], vec![1]]),
            Err(Error::PartitionMismatch(_))
        ));
        assert!(matches!(
            Statistic::partition(fin(3), vec![0, 2, 2]),
            Err(Error::PartitionMismatch(_))
        ));
    }

    #[test]
    fn kernel_pushforward_examples() {
        let id = MarkovKernel::from_matrix(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let nu = Measure::from_weights(fin(2), vec![2.0, 1.0]).unwrap();
        assert_eq!(kernel_pushforward(&id, &nu).unwrap().weights(), nu.weights());

        let pi = MarkovKernel::from_matrix(vec![vec![0.3, 0.7], vec![0.5, 0.5]]).unwrap();
        let e1 = Measure::from_weights(fin(2), vec![1.0, 0.0]).unwrap();
        assert_eq!(kernel_pushforward(&pi, &e1).unwrap().weights().unwrap(), &[0.3, 0.7]);

        let pi = MarkovKernel::from_matrix(vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.4, 0.6]]).unwrap();
        let out = kernel_pushforward(&pi, &nu).unwrap();
        assert_eq!(out.weights().unwrap(), &[2.0, 0.4, 0.6]);
        assert!((total_variation(&out).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn congruent_embedding_examples() {
        let k = Statistic::from_classes(fin(3), &[vec![0], vec![1, 2]]).unwrap();
        let pi = congruent_embedding(&k, &[vec![1.0], vec![0.4, 0.6]]).unwrap();
        assert_eq!(pi.matrix().unwrap(), &vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.4, 0.6]]);
        assert!(left_inverse_check(&pi, &k));

        let bad = congruent_embedding(&k, &[vec![0.5, 0.5, 0.0], vec![0.0, 0.4, 0.6]]);
        assert!(matches!(bad, Err(Error::SupportViolation { row: 0, .. })));
        let zero = congruent_embedding(&k, &[vec![1.0], vec![0.0, 0.0]]);
        assert!(matches!(zero, Err(Error::ZeroRow(1))));

        let ident = Statistic::identity(fin(3));
        let pi = congruent_embedding(&ident, &[vec![1.0], vec![1.0], vec![1.0]]).unwrap();
        assert!(left_inverse_check(&pi, &ident));

        let uniform = MarkovKernel::from_matrix(vec![vec![1.0 / 3.0; 3]; 2]).unwrap();
        assert!(!left_inverse_check(&uniform, &k));
    }

    #[test]
    fn composition_is_associative_and_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let a = random_positive_kernel(2, 3, &mut rng).unwrap();
            let b = random_positive_kernel(3, 4, &mut rng).unwrap();
            let c = random_positive_kernel(4, 2, &mut rng).unwrap();
            let left = compose(&compose(&a, &b).unwrap(), &c).unwrap();
            let right = compose(&a, &compose(&b, &c).unwrap()).unwrap();
            for (r1, r2) in left.matrix().unwrap().iter().zip(right.matrix().unwrap()) {
                for (x, y) in r1.iter().zip(r2) {
                    assert!((x - y).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn lumping_undoes_congruent_embeddings() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let classes = random_partition(5, 3, &mut rng).unwrap();
            let k = Statistic::partition(fin(5), classes).unwrap();
            let pi = random_congruent_embedding(&k, &mut rng).unwrap();
            assert!(left_inverse_check(&pi, &k));
            let nu = Measure::from_weights(fin(3), vec![0.2, 1.5, 0.3]).unwrap();
            let back = k.pushforward(&kernel_pushforward(&pi, &nu).unwrap()).unwrap();
            for (a, b) in back.weights().unwrap().iter().zip(nu.weights().unwrap()) {
                assert!((a - b).abs() < 1e-15);
            }
            let positive = random_positive_kernel(3, 5, &mut rng).unwrap();
            assert!(!left_inverse_check(&positive, &k));
        }
    }

    #[test]
    fn sufficiency_examples() {
        let lattice = Lattice::uniform(&[(0.05, 0.45)], 7).unwrap();
        let k = Statistic::from_classes(fin(3), &[vec![0], vec![1, 2]]).unwrap();
        let suff = three_atom(["x1", "(1 - x1)/2", "(1 - x1)/2"], 1.0);
        let v = check_sufficiency(&suff, &k, &lattice).unwrap();
        assert!(v.is_sufficient(), "{v:?}");

        let k2 = Statistic::from_classes(fin(3), &[vec![0, 1], vec![2]]).unwrap();
        let not = three_atom(["x1", "x1^2", "1 - x1 - x1^2"], 0.6);
        let v = check_sufficiency(&not, &k2, &lattice).unwrap();
        assert_eq!(v.verdict, Sufficiency::NotSufficient);
        assert!(v.witness.is_some());

        let v = check_sufficiency(&not, &Statistic::identity(fin(3)), &lattice).unwrap();
        assert!(v.is_sufficient());

        let scaled = scale_model(&suff).unwrap();
        let lat2 = Lattice::for_box(scaled.param_box(), &LatticeConfig::default()).unwrap();
        assert!(check_sufficiency(&scaled, &k, &lat2).unwrap().is_sufficient());
    }

    #[test]
    fn conditional_examples() {
        let sp = SampleSpace::product(fin(2), fin(2)).unwrap();
        let joint = atom_model(
            "joint",
            ParamBox::interval(0.0, 1.0).unwrap(),
            Measure::base(sp),
            ["0.1", "0.3", "0.2", "0.4"].iter().map(|e| e.parse().unwrap()).collect(),
            true,
        )
        .unwrap();
        let fibers = conditional_distribution(&joint, Factor::First, &[0.5]).unwrap();
        let w = fibers[0].measure.weights().unwrap();
        assert!((w[0] - 0.25).abs() < 1e-15 && (w[1] - 0.75).abs() < 1e-15);
        for f in &fibers {
            assert!((f.measure.mass().unwrap() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn lift_and_decomposition() {
        let b = bernoulli().unwrap();
        let pi = MarkovKernel::from_matrix(vec![vec![0.2, 0.3, 0.5], vec![0.6, 0.2, 0.2]]).unwrap();
        let mu2 = Measure::uniform(fin(3)).unwrap();
        let lattice = Lattice::uniform(&[(0.1, 0.9)], 5).unwrap();
        let d = decompose_markov_morphism(&b, &pi, &mu2, &lattice).unwrap();
        assert!(d.residual <= 1e-12, "{}", d.residual);
        assert!(d.first_projection.is_sufficient());

        // fibers of the lift are the kernel rows
        let fibers = conditional_distribution(&d.lift, Factor::First, &[0.3]).unwrap();
        for (i, f) in fibers.iter().enumerate() {
            for (a, b) in f.measure.weights().unwrap().iter().zip(&pi.matrix().unwrap()[i]) {
                assert!((a - b).abs() < 1e-15);
            }
        }
        // marginal identity
        let first = Statistic::project(d.lift.space().clone(), Factor::First).unwrap();
        let marg = first.pushforward(&d.lift.density_at(&[0.3]).unwrap()).unwrap();
        for (a, b) in marg.weights().unwrap().iter().zip(&[0.3, 0.7]) {
            assert!((a - b).abs() < 1e-12);
        }

        let not_prob = Measure::base(fin(3));
        assert!(matches!(
            lift_model_by_kernel(&b, &pi, &not_prob),
            Err(Error::NotProbability(_))
        ));
    }

    #[test]
    fn kernel_image_of_congruent_embedding_is_sufficient() {
        let m = bernoulli().unwrap();
        let kappa = Statistic::partition(fin(3), vec![0, 1, 1]).unwrap();
        let pi = congruent_embedding(&kappa, &[vec![1.0], vec![0.4, 0.6]]).unwrap();
        let img = kernel_model(&m, &pi).unwrap();
        let w = img.density_at(&[0.3]).unwrap();
        let want = [0.3, 0.28, 0.42];
        for (a, b) in w.weights().unwrap().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        let dl = img.log_derivative(&[0.3], &[1.0], &Point::atom(2)).unwrap();
        assert!((dl + 1.0 / 0.7).abs() < 1e-12);
        let lattice = Lattice::uniform(&[(0.1, 0.9)], 5).unwrap();
        assert!(check_sufficiency(&img, &kappa, &lattice).unwrap().is_sufficient());
    }

    #[test]
    fn interval_kernel_lift() {
        let b = bernoulli().unwrap();
        let g = SampleSpace::grid(0.0, 1.0).unwrap();
        let pi = MarkovKernel::from_densities(g.clone(), vec!["2 * w1".parse().unwrap(), "1".parse().unwrap()]).unwrap();
        let lattice = Lattice::uniform(&[(0.2, 0.8)], 3).unwrap();
        let d = decompose_markov_morphism(&b, &pi, &Measure::base(g), &lattice).unwrap();
        assert!(d.residual <= 1e-10, "{}", d.residual);
    }
}
