//! Open parameter boxes and the rectangular lattices used to sample them.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Lattices are capped at this many points when the per-axis count is derived.
const MAX_DEFAULT_POINTS: usize = 1000;
/// Half-width of the default window on unbounded axes.
const UNBOUNDED_WINDOW: f64 = 2.0;

/// Product of open intervals `(lo_i, hi_i)`; infinite bounds are allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ParamBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<ParamBox> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(invalid("parameter box needs matching, non-empty bounds"));
        }
        if lo.len() > 8 {
            return Err(invalid("parameter dimension is limited to 8"));
        }
        for (a, b) in lo.iter().zip(&hi) {
            if a.is_nan() || b.is_nan() || a >= b {
                return Err(invalid(format!("empty parameter interval ({a}, {b})")));
            }
        }
        Ok(ParamBox { lo, hi })
    }

    pub fn interval(lo: f64, hi: f64) -> Result<ParamBox> {
        ParamBox::new(vec![lo], vec![hi])
    }

    /// `(lo, hi)^d`.
    pub fn cube(d: usize, lo: f64, hi: f64) -> Result<ParamBox> {
        ParamBox::new(vec![lo; d], vec![hi; d])
    }

    pub fn real_line(d: usize) -> Result<ParamBox> {
        ParamBox::cube(d, f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (a, b))| v.is_finite() && a < v && v < b)
    }

    pub fn check(&self, x: &[f64]) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::OutOfDomain { x: x.to_vec() })
        }
    }

    /// Closed range sampled on an axis: 5% inside finite bounds, a window of
    /// half-width 2 on unbounded sides.
    pub fn default_range(&self, axis: usize) -> (f64, f64) {
        let (a, b) = (self.lo[axis], self.hi[axis]);
        match (a.is_finite(), b.is_finite()) {
            (true, true) => {
                let m = 0.05 * (b - a);
                (a + m, b - m)
            }
            (true, false) => (a + 0.1, a + UNBOUNDED_WINDOW),
            (false, true) => (b - UNBOUNDED_WINDOW, b - 0.1),
            (false, false) => (-UNBOUNDED_WINDOW, UNBOUNDED_WINDOW),
        }
    }

    /// Projects `x` into the box, keeping a relative margin from the boundary.
    pub fn clip(&self, x: &[f64], margin: f64) -> Vec<f64> {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&v, (&a, &b))| {
                let span = if a.is_finite() && b.is_finite() { b - a } else { 1.0 };
                let lo = if a.is_finite() { a + margin * span } else { f64::NEG_INFINITY };
                let hi = if b.is_finite() { b - margin * span } else { f64::INFINITY };
                v.clamp(lo, hi)
            })
            .collect()
    }
}

/// How to build a lattice over a box. Missing ranges fall back to
/// [`ParamBox::default_range`]; a missing count is derived from the dimension.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatticeConfig {
    pub ranges: Option<Vec<[f64; 2]>>,
    pub points_per_axis: Option<usize>,
}

/// Rectangular grid of parameter points (closed ranges, endpoints included).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lattice {
    pub axes: Vec<Vec<f64>>,
}

impl Lattice {
    pub fn from_axes(axes: Vec<Vec<f64>>) -> Result<Lattice> {
        if axes.is_empty() || axes.iter().any(|a| a.is_empty()) {
            return Err(invalid("lattice axes must be non-empty"));
        }
        Ok(Lattice { axes })
    }

    pub fn single(x: &[f64]) -> Lattice {
        Lattice {
            axes: x.iter().map(|&v| vec![v]).collect(),
        }
    }

    /// `n` evenly spaced points on each closed range.
    pub fn uniform(ranges: &[(f64, f64)], n: usize) -> Result<Lattice> {
        if n == 0 {
            return Err(invalid("lattice needs at least one point per axis"));
        }
        let axes = ranges
            .iter()
            .map(|&(a, b)| {
                if n == 1 {
                    vec![0.5 * (a + b)]
                } else {
                    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
                }
            })
            .collect();
        Lattice::from_axes(axes)
    }

    pub fn for_box(pbox: &ParamBox, cfg: &LatticeConfig) -> Result<Lattice> {
        let d = pbox.dim();
        let ranges: Vec<(f64, f64)> = match &cfg.ranges {
            Some(r) => {
                if r.len() != d {
                    return Err(invalid(format!("lattice has {} ranges for a {d}-dimensional box", r.len())));
                }
                r.iter().map(|&[a, b]| (a, b)).collect()
            }
            None => (0..d).map(|i| pbox.default_range(i)).collect(),
        };
        let n = cfg.points_per_axis.unwrap_or_else(|| default_points(d));
        let lattice = Lattice::uniform(&ranges, n)?;
        for p in lattice.points() {
            pbox.check(&p)?;
        }
        Ok(lattice)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Multi-index of a flat index (last axis fastest).
    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for (k, axis) in self.axes.iter().enumerate().rev() {
            idx[k] = flat % axis.len();
            flat /= axis.len();
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.axes)
            .fold(0, |acc, (&i, axis)| acc * axis.len() + i)
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .zip(&self.axes)
            .map(|(&i, axis)| axis[i])
            .collect()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Pairs of flat indices that differ by one step along a single axis.
    pub fn neighbor_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for flat in 0..self.len() {
            let idx = self.multi_index(flat);
            for (k, axis) in self.axes.iter().enumerate() {
                if idx[k] + 1 < axis.len() {
                    let mut next = idx.clone();
                    next[k] += 1;
                    out.push((flat, self.flat_index(&next)));
                }
            }
        }
        out
    }
}

fn default_points(d: usize) -> usize {
    let mut n = 5usize;
    while n > 2 && n.pow(d as u32) > MAX_DEFAULT_POINTS {
        n -= 1;
    }
    n
}
