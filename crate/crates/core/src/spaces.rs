//! Sample spaces, finite measures and integration against them.
//!
//! A space is a finite labelled set, an open interval integrated by the
//! graded quadrature of [`crate::quadrature`], or a product of two such
//! spaces. Every space carries a base measure (counting measure on finite
//! sets, Lebesgue measure on intervals, the product on products) and a
//! [`Measure`] is a density against it.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::markov::Statistic;
use crate::quadrature::{integrate_levels, level_nodes, Integral, QuadratureConfig};

/// Level cap per axis when both factors of a product are intervals.
const PRODUCT_GRID_LEVELS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSpace {
    Finite {
        labels: Vec<String>,
    },
    Grid {
        lo: f64,
        hi: f64,
        quadrature: QuadratureConfig,
    },
    Product(Box<SampleSpace>, Box<SampleSpace>),
}

impl SampleSpace {
    /// `Finite(n)` with labels `1..=n`.
    pub fn finite(n: usize) -> Result<SampleSpace> {
        SampleSpace::finite_labeled((1..=n).map(|i| i.to_string()).collect())
    }

    pub fn finite_labeled(labels: Vec<String>) -> Result<SampleSpace> {
        if labels.is_empty() {
            return Err(invalid("finite space needs at least one atom"));
        }
        let mut sorted = labels.clone();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("finite space labels must be distinct"));
        }
        Ok(SampleSpace::Finite { labels })
    }

    pub fn grid(lo: f64, hi: f64) -> Result<SampleSpace> {
        SampleSpace::grid_with(lo, hi, QuadratureConfig::default())
    }

    pub fn grid_with(lo: f64, hi: f64, quadrature: QuadratureConfig) -> Result<SampleSpace> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(invalid(format!("grid interval ({lo}, {hi}) must be finite with lo < hi")));
        }
        quadrature.validate()?;
        Ok(SampleSpace::Grid { lo, hi, quadrature })
    }

    pub fn product(left: SampleSpace, right: SampleSpace) -> Result<SampleSpace> {
        if left.is_product() || right.is_product() {
            return Err(invalid("products are limited to pairs of finite sets and intervals"));
        }
        Ok(SampleSpace::Product(Box::new(left), Box::new(right)))
    }

    pub fn is_product(&self) -> bool {
        matches!(self, SampleSpace::Product(..))
    }

    /// Finite sets and products of finite sets.
    pub fn is_discrete(&self) -> bool {
        self.atom_count().is_some()
    }

    /// Number of atoms of a discrete space (row-major over products).
    pub fn atom_count(&self) -> Option<usize> {
        match self {
            SampleSpace::Finite { labels } => Some(labels.len()),
            SampleSpace::Grid { .. } => None,
            SampleSpace::Product(a, b) => Some(a.atom_count()? * b.atom_count()?),
        }
    }

    /// Number of sample coordinates (`w1`, `w2`).
    pub fn sample_dim(&self) -> usize {
        if self.is_product() {
            2
        } else {
            1
        }
    }

    pub fn factors(&self) -> Option<(&SampleSpace, &SampleSpace)> {
        match self {
            SampleSpace::Product(a, b) => Some((a, b)),
            _ => None,
        }
    }

    /// Atoms of a discrete space in flat index order.
    pub fn atoms(&self) -> Result<Vec<Point>> {
        match self {
            SampleSpace::Finite { labels } => Ok((0..labels.len()).map(Point::atom).collect()),
            SampleSpace::Product(a, b) if self.is_discrete() => {
                let (na, nb) = (a.atom_count().unwrap_or(0), b.atom_count().unwrap_or(0));
                Ok((0..na)
                    .flat_map(|i| (0..nb).map(move |j| Point::pair(Coord::Atom(i), Coord::Atom(j))))
                    .collect())
            }
            _ => Err(invalid("space has no atoms")),
        }
    }

    /// Flat atom index of a point of a discrete space.
    pub fn atom_index(&self, p: &Point) -> Option<usize> {
        match self {
            SampleSpace::Finite { labels } => p.first_atom().filter(|&i| i < labels.len() && p.dim == 1),
            SampleSpace::Product(_, b) => {
                let nb = b.atom_count()?;
                let (i, j) = (p.first_atom()?, p.second_atom()?);
                Some(i * nb + j)
            }
            SampleSpace::Grid { .. } => None,
        }
    }

    /// Spot-check points: every atom, or five interior points per interval.
    pub fn sample_points(&self) -> Vec<Point> {
        fn coords(s: &SampleSpace) -> Vec<Coord> {
            match s {
                SampleSpace::Finite { labels } => (0..labels.len()).map(Coord::Atom).collect(),
                SampleSpace::Grid { lo, hi, .. } => {
                    (1..=5).map(|k| Coord::Real(lo + (hi - lo) * k as f64 / 6.0)).collect()
                }
                SampleSpace::Product(..) => Vec::new(),
            }
        }
        match self {
            SampleSpace::Product(a, b) => {
                let (ca, cb) = (coords(a), coords(b));
                ca.iter()
                    .flat_map(|&x| cb.iter().map(move |&y| Point::pair(x, y)))
                    .collect()
            }
            s => coords(s).into_iter().map(Point::single).collect(),
        }
    }

    fn quadrature(&self) -> Option<&QuadratureConfig> {
        match self {
            SampleSpace::Grid { quadrature, .. } => Some(quadrature),
            SampleSpace::Product(a, b) => a.quadrature().or_else(|| b.quadrature()),
            SampleSpace::Finite { .. } => None,
        }
    }

    /// Integrates a vector-valued function against the base measure.
    ///
    /// `breaks` are extra panel boundaries for the first interval factor,
    /// used when the integrand has known jumps.
    pub fn integrate_vec(
        &self,
        dim: usize,
        breaks: &[f64],
        mut f: impl FnMut(&Point, &mut [f64]) -> Result<()>,
    ) -> Result<Vec<Integral>> {
        let mut out = vec![0.0; dim];
        if self.is_discrete() {
            let mut sums = vec![0.0; dim];
            let mut abs = vec![0.0; dim];
            for p in self.atoms()? {
                out.iter_mut().for_each(|o| *o = 0.0);
                f(&p, &mut out)?;
                for c in 0..dim {
                    sums[c] += out[c];
                    abs[c] += out[c].abs();
                }
            }
            for c in 0..dim {
                if !sums[c].is_finite() {
                    return Err(Error::DivergentIntegral {
                        level: 0,
                        evidence: format!("non-finite sum in component {c}"),
                    });
                }
            }
            return Ok(sums.into_iter().zip(abs).map(|(s, a)| Integral::exact(s, a)).collect());
        }

        let cfg = self.quadrature().cloned().unwrap_or_default();
        let levels = match self {
            SampleSpace::Product(a, b) if a.quadrature().is_some() && b.quadrature().is_some() => {
                cfg.levels.min(PRODUCT_GRID_LEVELS)
            }
            _ => cfg.levels,
        };
        integrate_levels(&cfg, levels, dim, |level, sums, abs| {
            let mut visit = |p: &Point, w: f64| -> Result<()> {
                out.iter_mut().for_each(|o| *o = 0.0);
                f(p, &mut out)?;
                for c in 0..dim {
                    sums[c] += w * out[c];
                    abs[c] += w * out[c].abs();
                }
                Ok(())
            };
            match self {
                SampleSpace::Grid { lo, hi, quadrature } => {
                    for (t, w) in level_nodes(*lo, *hi, breaks, quadrature, level) {
                        visit(&Point::real(t), w)?;
                    }
                }
                SampleSpace::Product(a, b) => {
                    let na = factor_nodes(a, breaks, level);
                    let nb = factor_nodes(b, &[], level);
                    for &(ca, wa) in &na {
                        for &(cb, wb) in &nb {
                            visit(&Point::pair(ca, cb), wa * wb)?;
                        }
                    }
                }
                SampleSpace::Finite { .. } => unreachable!("discrete spaces are summed exactly"),
            }
            Ok(())
        })
    }

    pub fn integrate(&self, mut f: impl FnMut(&Point) -> Result<f64>) -> Result<Integral> {
        let mut v = self.integrate_vec(1, &[], |p, out| {
            out[0] = f(p)?;
            Ok(())
        })?;
        Ok(v.remove(0))
    }
}

fn factor_nodes(s: &SampleSpace, breaks: &[f64], level: usize) -> Vec<(Coord, f64)> {
    match s {
        SampleSpace::Finite { labels } => (0..labels.len()).map(|i| (Coord::Atom(i), 1.0)).collect(),
        SampleSpace::Grid { lo, hi, quadrature } => level_nodes(*lo, *hi, breaks, quadrature, level)
            .into_iter()
            .map(|(t, w)| (Coord::Real(t), w))
            .collect(),
        SampleSpace::Product(..) => Vec::new(),
    }
}

impl fmt::Display for SampleSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SampleSpace::Finite { labels } => write!(f, "Finite({})", labels.len()),
            SampleSpace::Grid { lo, hi, .. } => write!(f, "Grid({lo}, {hi})"),
            SampleSpace::Product(a, b) => write!(f, "{a} x {b}"),
        }
    }
}

/// One coordinate of a sample point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Coord {
    /// Zero-based atom index; its sample-variable value is `index + 1`.
    Atom(usize),
    Real(f64),
}

impl Coord {
    pub fn value(self) -> f64 {
        match self {
            Coord::Atom(i) => (i + 1) as f64,
            Coord::Real(t) => t,
        }
    }
}

/// A sample point with one or two coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    coords: [Coord; 2],
    values: [f64; 2],
    dim: usize,
}

impl Point {
    pub fn single(c: Coord) -> Point {
        Point {
            coords: [c, c],
            values: [c.value(), 0.0],
            dim: 1,
        }
    }

    pub fn atom(i: usize) -> Point {
        Point::single(Coord::Atom(i))
    }

    pub fn real(t: f64) -> Point {
        Point::single(Coord::Real(t))
    }

    pub fn pair(a: Coord, b: Coord) -> Point {
        Point {
            coords: [a, b],
            values: [a.value(), b.value()],
            dim: 2,
        }
    }

    /// Sample-variable values `(w1[, w2])`.
    pub fn w(&self) -> &[f64] {
        &self.values[..self.dim]
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn first(&self) -> Coord {
        self.coords[0]
    }

    pub fn second(&self) -> Option<Coord> {
        (self.dim == 2).then_some(self.coords[1])
    }

    pub fn first_atom(&self) -> Option<usize> {
        match self.coords[0] {
            Coord::Atom(i) => Some(i),
            Coord::Real(_) => None,
        }
    }

    pub fn second_atom(&self) -> Option<usize> {
        match self.second()? {
            Coord::Atom(i) => Some(i),
            Coord::Real(_) => None,
        }
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |c: Coord| match c {
            Coord::Atom(i) => format!("atom {}", i + 1),
            Coord::Real(t) => format!("{t}"),
        };
        match self.second() {
            None => f.write_str(&show(self.first())),
            Some(s) => write!(f, "({}, {})", show(self.first()), show(s)),
        }
    }
}

pub type DensityFn = Arc<dyn Fn(&Point) -> Result<f64> + Send + Sync>;

#[derive(Clone)]
enum Repr {
    Weights(Vec<f64>),
    Density(DensityFn),
}

/// A finite measure given by its density against the base measure of its space.
#[derive(Clone)]
pub struct Measure {
    space: SampleSpace,
    repr: Repr,
    signed: bool,
    /// Extra quadrature breakpoints where the density jumps.
    breaks: Vec<f64>,
}

impl fmt::Debug for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("Measure");
        d.field("space", &self.space);
        match &self.repr {
            Repr::Weights(w) => d.field("weights", w),
            Repr::Density(_) => d.field("density", &"<fn>"),
        };
        d.field("signed", &self.signed).finish()
    }
}

impl Measure {
    /// Measure with the given atom weights on a discrete space.
    pub fn from_weights(space: SampleSpace, weights: Vec<f64>) -> Result<Measure> {
        Measure::weights_impl(space, weights, false)
    }

    pub fn signed_weights(space: SampleSpace, weights: Vec<f64>) -> Result<Measure> {
        Measure::weights_impl(space, weights, true)
    }

    fn weights_impl(space: SampleSpace, weights: Vec<f64>, signed: bool) -> Result<Measure> {
        let n = space
            .atom_count()
            .ok_or_else(|| invalid("weights need a discrete space; use a density on intervals"))?;
        if weights.len() != n {
            return Err(invalid(format!("expected {n} weights, got {}", weights.len())));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite()) {
            return Err(invalid(format!("non-finite weight {w}")));
        }
        if !signed {
            if let Some(w) = weights.iter().find(|w| **w < 0.0) {
                return Err(invalid(format!("negative weight {w} in an unsigned measure")));
            }
        }
        Ok(Measure {
            space,
            repr: Repr::Weights(weights),
            signed,
            breaks: Vec::new(),
        })
    }

    /// Measure with the given density against the base measure.
    pub fn from_density(
        space: SampleSpace,
        density: impl Fn(&Point) -> Result<f64> + Send + Sync + 'static,
    ) -> Measure {
        Measure {
            space,
            repr: Repr::Density(Arc::new(density)),
            signed: false,
            breaks: Vec::new(),
        }
    }

    pub fn signed_density(
        space: SampleSpace,
        density: impl Fn(&Point) -> Result<f64> + Send + Sync + 'static,
    ) -> Measure {
        Measure {
            signed: true,
            ..Measure::from_density(space, density)
        }
    }

    /// Counting measure on a finite set, Lebesgue measure on an interval.
    pub fn base(space: SampleSpace) -> Measure {
        match space.atom_count() {
            Some(n) => Measure {
                space,
                repr: Repr::Weights(vec![1.0; n]),
                signed: false,
                breaks: Vec::new(),
            },
            None => Measure::from_density(space, |_| Ok(1.0)),
        }
    }

    /// Uniform probability measure.
    pub fn uniform(space: SampleSpace) -> Result<Measure> {
        let m = Measure::base(space);
        let mass = m.mass()?;
        Ok(m.scaled(1.0 / mass))
    }

    pub fn with_breaks(mut self, breaks: Vec<f64>) -> Measure {
        self.breaks = breaks;
        self
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn space(&self) -> &SampleSpace {
        &self.space
    }

    pub fn is_signed(&self) -> bool {
        self.signed
    }

    pub fn weights(&self) -> Option<&[f64]> {
        match &self.repr {
            Repr::Weights(w) => Some(w),
            Repr::Density(_) => None,
        }
    }

    /// Density against the base measure at a point.
    pub fn density(&self, p: &Point) -> Result<f64> {
        let v = match &self.repr {
            Repr::Weights(w) => {
                let i = self
                    .space
                    .atom_index(p)
                    .ok_or_else(|| invalid(format!("{p} is not an atom of {}", self.space)))?;
                w[i]
            }
            Repr::Density(f) => f(p)?,
        };
        if !self.signed && v < 0.0 {
            return Err(Error::NonPositiveDensity {
                value: v,
                at: p.to_string(),
            });
        }
        Ok(v)
    }

    pub fn density_fn(&self) -> DensityFn {
        match &self.repr {
            Repr::Density(f) => f.clone(),
            Repr::Weights(_) => {
                let me = self.clone();
                Arc::new(move |p| me.density(p))
            }
        }
    }

    pub fn scaled(&self, c: f64) -> Measure {
        let repr = match &self.repr {
            Repr::Weights(w) => Repr::Weights(w.iter().map(|v| v * c).collect()),
            Repr::Density(f) => {
                let f = f.clone();
                Repr::Density(Arc::new(move |p| Ok(c * f(p)?)))
            }
        };
        Measure {
            space: self.space.clone(),
            repr,
            signed: self.signed || c < 0.0,
            breaks: self.breaks.clone(),
        }
    }

    /// `∫ f dm` for a vector-valued `f`. Points of zero density are skipped.
    pub fn integrate_vec(
        &self,
        dim: usize,
        mut f: impl FnMut(&Point, &mut [f64]) -> Result<()>,
    ) -> Result<Vec<Integral>> {
        self.space.integrate_vec(dim, &self.breaks, |p, out| {
            let d = self.density(p)?;
            if d == 0.0 {
                return Ok(());
            }
            f(p, out)?;
            out.iter_mut().for_each(|o| *o *= d);
            Ok(())
        })
    }

    pub fn integrate(&self, mut f: impl FnMut(&Point) -> Result<f64>) -> Result<Integral> {
        let mut v = self.integrate_vec(1, |p, out| {
            out[0] = f(p)?;
            Ok(())
        })?;
        Ok(v.remove(0))
    }

    /// Signed mass `m(Ω)`.
    pub fn mass(&self) -> Result<f64> {
        match &self.repr {
            Repr::Weights(w) => Ok(w.iter().sum()),
            Repr::Density(_) => Ok(self.integrate(|_| Ok(1.0))?.value),
        }
    }

    pub fn is_probability(&self, tol: f64) -> Result<bool> {
        Ok(!self.signed && (self.mass()? - 1.0).abs() <= tol)
    }
}

/// `‖m‖_TV = ∫ |dm/dμ| dμ`.
pub fn total_variation(m: &Measure) -> Result<f64> {
    match &m.repr {
        Repr::Weights(w) => Ok(w.iter().map(|v| v.abs()).sum()),
        Repr::Density(_) => Ok(m.space.integrate_vec(1, &m.breaks, |p, out| {
            out[0] = m.density(p)?.abs();
            Ok(())
        })?[0]
            .value),
    }
}

/// Pointwise ratio `dm1/dm2`. Fails with `ZeroDenominator` where `m2`
/// vanishes (eagerly on atoms, at evaluation on intervals).
pub fn radon_nikodym(m1: &Measure, m2: &Measure) -> Result<Measure> {
    if m1.space != m2.space {
        return Err(Error::SpaceMismatch(format!("{} vs {}", m1.space, m2.space)));
    }
    let signed = m1.signed || m2.signed;
    let mut breaks = m1.breaks.clone();
    breaks.extend_from_slice(&m2.breaks);
    match (&m1.repr, &m2.repr) {
        (Repr::Weights(a), Repr::Weights(b)) => {
            let atoms = m1.space.atoms()?;
            let ratio = a
                .iter()
                .zip(b)
                .zip(&atoms)
                .map(|((x, y), p)| {
                    if *y == 0.0 {
                        Err(Error::ZeroDenominator { at: p.to_string() })
                    } else {
                        Ok(x / y)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Measure {
                space: m1.space.clone(),
                repr: Repr::Weights(ratio),
                signed: signed || ratio_has_negative(a, b),
                breaks,
            })
        }
        _ => {
            let (f1, f2) = (m1.density_fn(), m2.density_fn());
            Ok(Measure {
                space: m1.space.clone(),
                repr: Repr::Density(Arc::new(move |p| {
                    let d = f2(p)?;
                    if d == 0.0 {
                        return Err(Error::ZeroDenominator { at: p.to_string() });
                    }
                    Ok(f1(p)? / d)
                })),
                signed,
                breaks,
            })
        }
    }
}

fn ratio_has_negative(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).any(|(x, y)| x / y < 0.0)
}

/// Image measure `κ_*m` on the target of the statistic.
pub fn pushforward_statistic(m: &Measure, k: &Statistic) -> Result<Measure> {
    k.pushforward(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_variation_examples() {
        let u = Measure::uniform(SampleSpace::finite(4).unwrap()).unwrap();
        assert_eq!(total_variation(&u).unwrap(), 1.0);

        let s = Measure::signed_weights(SampleSpace::finite(2).unwrap(), vec![0.2, -0.3]).unwrap();
        assert!((total_variation(&s).unwrap() - 0.5).abs() < 1e-15);

        let m = Measure::from_density(SampleSpace::grid(0.0, 1.0).unwrap(), |p| Ok(p.w()[0].powf(-0.5)));
        let tv = total_variation(&m).unwrap();
        // antiderivative 2√t on (0,1)
        assert!((tv - 2.0).abs() < 1e-9, "{tv}");
        assert!((m.mass().unwrap() - tv).abs() < 1e-15);
    }

    #[test]
    fn signed_measures_require_the_flag() {
        let sp = SampleSpace::finite(2).unwrap();
        assert!(Measure::from_weights(sp.clone(), vec![0.2, -0.3]).is_err());
        assert!(Measure::from_weights(sp, vec![0.2]).is_err());
    }

    #[test]
    fn divergent_total_variation() {
        let m = Measure::from_density(SampleSpace::grid(0.0, 1.0).unwrap(), |p| Ok(1.0 / p.w()[0]));
        assert!(matches!(total_variation(&m), Err(Error::DivergentIntegral { .. })));
    }

    #[test]
    fn radon_nikodym_examples() {
        let sp = SampleSpace::finite(2).unwrap();
        let m1 = Measure::from_weights(sp.clone(), vec![0.2, 0.8]).unwrap();
        let m2 = Measure::from_weights(sp.clone(), vec![0.5, 0.5]).unwrap();
        let r = radon_nikodym(&m1, &m2).unwrap();
        assert_eq!(r.weights().unwrap(), &[0.4, 1.6]);
        let one = radon_nikodym(&m1, &m1).unwrap();
        assert_eq!(one.weights().unwrap(), &[1.0, 1.0]);

        let zero = Measure::from_weights(sp, vec![0.5, 0.0]).unwrap();
        assert!(matches!(
            radon_nikodym(&m1, &zero),
            Err(Error::ZeroDenominator { .. })
        ));

        let g = SampleSpace::grid(0.0, 1.0).unwrap();
        let e = Measure::from_density(g.clone(), |p| Ok(p.w()[0].exp()));
        let r = radon_nikodym(&e, &Measure::base(g)).unwrap();
        for t in [0.01, 0.5, 0.99] {
            assert!((r.density(&Point::real(t)).unwrap() - t.exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn space_invariants() {
        assert!(SampleSpace::finite(0).is_err());
        assert!(SampleSpace::finite_labeled(vec!["a".into(), "a".into()]).is_err());
        assert!(SampleSpace::grid(1.0, 1.0).is_err());
        let f = SampleSpace::finite(2).unwrap();
        let p = SampleSpace::product(f.clone(), f.clone()).unwrap();
        assert!(SampleSpace::product(p, f).is_err());
    }

    #[test]
    fn product_integration() {
        let f = SampleSpace::finite(3).unwrap();
        let g = SampleSpace::grid(0.0, 2.0).unwrap();
        let p = SampleSpace::product(f.clone(), g.clone()).unwrap();
        // Σ_i ∫_0^2 i·t dt = 6·2
        let i = p.integrate(|pt| Ok(pt.w()[0] * pt.w()[1])).unwrap();
        assert!((i.value - 12.0).abs() < 1e-12);

        let gg = SampleSpace::product(g.clone(), g).unwrap();
        let i = gg.integrate(|pt| Ok(pt.w()[0] * pt.w()[1])).unwrap();
        assert!((i.value - 4.0).abs() < 1e-10, "{}", i.value);

        let ff = SampleSpace::product(f.clone(), f).unwrap();
        assert_eq!(ff.atom_count(), Some(9));
        let atoms = ff.atoms().unwrap();
        for (k, a) in atoms.iter().enumerate() {
            assert_eq!(ff.atom_index(a), Some(k));
        }
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn radon_nikodym_chain_rule(
                w in proptest::collection::vec((0.01f64..5.0, 0.01f64..5.0, 0.01f64..5.0), 1..8)
            ) {
                let n = w.len();
                let sp = SampleSpace::finite(n).unwrap();
                let m = |k: usize| Measure::from_weights(
                    sp.clone(),
                    w.iter().map(|t| [t.0, t.1, t.2][k]).collect(),
                ).unwrap();
                let (m1, m2, m3) = (m(0), m(1), m(2));
                let r13 = radon_nikodym(&m1, &m3).unwrap();
                let r12 = radon_nikodym(&m1, &m2).unwrap();
                let r23 = radon_nikodym(&m2, &m3).unwrap();
                for i in 0..n {
                    let lhs = r13.weights().unwrap()[i];
                    let rhs = r12.weights().unwrap()[i] * r23.weights().unwrap()[i];
                    prop_assert!((lhs - rhs).abs() <= 1e-14 * lhs.abs().max(1.0));
                }
            }

            #[test]
            fn total_variation_equals_mass_for_nonnegative(
                w in proptest::collection::vec(0.0f64..3.0, 1..10)
            ) {
                let sp = SampleSpace::finite(w.len()).unwrap();
                let m = Measure::from_weights(sp, w).unwrap();
                prop_assert!((total_variation(&m).unwrap() - m.mass().unwrap()).abs() < 1e-14);
            }
        }
    }
}
