//! Fisher-preconditioned gradient descent with box clipping.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::expr::{central_difference, DiffConfig, Expression};
use crate::models::{basis_directions, ParametrizedModel};
use crate::tensors::assemble_fisher;

/// Iterates are kept this fraction of the axis width inside finite bounds.
const CLIP_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// An expression in the parameters `x1..xd`.
    Expression(Expression),
    /// `KL(q ‖ p(x)) = Σ q_j ln(q_j / p_j(x))` for a finite statistical model.
    KlToTarget(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NatGradConfig {
    pub step_size: f64,
    pub max_iterations: usize,
    pub damping: f64,
    /// Stop once a step moves `x` by at most this (Euclidean norm).
    pub tolerance: f64,
    /// `LeftDomain` when more than this fraction of steps needed clipping.
    pub max_clipped_fraction: f64,
}

impl Default for NatGradConfig {
    fn default() -> Self {
        NatGradConfig {
            step_size: 0.5,
            max_iterations: 200,
            damping: 1e-10,
            tolerance: 1e-12,
            max_clipped_fraction: 0.5,
        }
    }
}

impl NatGradConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.tolerance > 0.0 && self.damping >= 0.0) {
            return Err(invalid("step size and tolerance must be positive, damping nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.max_clipped_fraction) {
            return Err(invalid("clipped fraction must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Solves `(G + ρI)·dir = g` by Cholesky.
pub fn natural_direction(m: &ParametrizedModel, x: &[f64], g: &[f64], damping: f64) -> Result<Vec<f64>> {
    let d = m.dim();
    if g.len() != d {
        return Err(invalid(format!("gradient has {} entries, model dimension is {d}", g.len())));
    }
    let f = assemble_fisher(m, x)?;
    let min_eigenvalue = f.min_eigenvalue() + damping;
    if !(min_eigenvalue > 0.0) {
        return Err(Error::SingularMetric { min_eigenvalue });
    }
    let metric = f.to_dmatrix() + DMatrix::identity(d, d) * damping;
    let chol = Cholesky::new(metric).ok_or(Error::SingularMetric { min_eigenvalue })?;
    Ok(chol.solve(&DVector::from_column_slice(g)).iter().copied().collect())
}

impl Objective {
    pub fn check(&self, m: &ParametrizedModel) -> Result<()> {
        match self {
            Objective::Expression(e) => Ok(e.check_dims(m.dim(), 0)?),
            Objective::KlToTarget(q) => {
                let n = m
                    .space()
                    .atom_count()
                    .filter(|_| m.is_statistical())
                    .ok_or_else(|| invalid("KL objectives need a finite statistical model"))?;
                if q.len() != n || q.iter().any(|v| !(*v >= 0.0)) || (q.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return Err(invalid(format!("KL target must be a probability vector of length {n}")));
                }
                Ok(())
            }
        }
    }

    pub fn value(&self, m: &ParametrizedModel, x: &[f64]) -> Result<f64> {
        match self {
            Objective::Expression(e) => Ok(e.eval(x, &[])?),
            Objective::KlToTarget(q) => {
                let p = m.density_at(x)?;
                let w = p.weights().unwrap_or_default();
                Ok(q.iter()
                    .zip(w)
                    .filter(|(qj, _)| **qj > 0.0)
                    .map(|(qj, pj)| qj * (qj / pj).ln())
                    .sum())
            }
        }
    }

    /// Euclidean gradient; exact log-derivatives for KL, central differences
    /// for expressions.
    pub fn gradient(&self, m: &ParametrizedModel, x: &[f64], diff: &DiffConfig) -> Result<Vec<f64>> {
        let dirs = basis_directions(m.dim());
        match self {
            Objective::Expression(e) => dirs
                .iter()
                .map(|v| central_difference(|y| Ok(e.eval(y, &[])?), x, v, diff))
                .collect(),
            Objective::KlToTarget(q) => {
                let atoms = m.space().atoms()?;
                dirs.iter()
                    .map(|v| {
                        let mut s = 0.0;
                        for (qj, a) in q.iter().zip(&atoms) {
                            if *qj > 0.0 {
                                s -= qj * m.log_derivative(x, v, a)?;
                            }
                        }
                        Ok(s)
                    })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryStep {
    pub iteration: usize,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Distance moved by the step taken from `x`.
    pub step_norm: f64,
    pub clipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    pub final_x: Vec<f64>,
    pub final_objective: f64,
    pub converged: bool,
    pub monotone_decrease: bool,
    pub clipped_steps: usize,
}

impl Trajectory {
    /// `iteration,x1..xd,objective,step_norm` rows.
    pub fn to_csv(&self) -> String {
        let d = self.final_x.len();
        let mut out = String::from("iteration");
        for i in 1..=d {
            out.push_str(&format!(",x{i}"));
        }
        out.push_str(",objective,step_norm\n");
        for s in &self.steps {
            out.push_str(&s.iteration.to_string());
            for v in &s.x {
                out.push_str(&format!(",{v:e}"));
            }
            out.push_str(&format!(",{:e},{:e}\n", s.objective, s.step_norm));
        }
        out
    }
}

/// `x_{t+1} = clip(x_t − η·dir_t)` until the step norm falls below the
/// tolerance or the iteration budget runs out.
pub fn descend(m: &ParametrizedModel, x0: &[f64], objective: &Objective, cfg: &NatGradConfig) -> Result<Trajectory> {
    cfg.validate()?;
    objective.check(m)?;
    m.check_x(x0)?;
    let mut x = x0.to_vec();
    let mut steps = Vec::new();
    let mut converged = false;
    let mut clipped_steps = 0;
    for iteration in 0..cfg.max_iterations {
        let f = objective.value(m, &x)?;
        let g = objective.gradient(m, &x, m.diff())?;
        let dir = natural_direction(m, &x, &g, cfg.damping)?;
        let raw: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a - cfg.step_size * d).collect();
        let next = m.param_box().clip(&raw, CLIP_MARGIN);
        let clipped = next != raw || !m.param_box().contains(&next);
        if clipped {
            clipped_steps += 1;
        }
        let step_norm = x.iter().zip(&next).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        steps.push(TrajectoryStep {
            iteration,
            x: x.clone(),
            objective: f,
            step_norm,
            clipped,
        });
        if !m.param_box().contains(&next) {
            break;
        }
        x = next;
        if step_norm <= cfg.tolerance {
            converged = true;
            break;
        }
    }
    if clipped_steps as f64 > cfg.max_clipped_fraction * steps.len() as f64 {
        return Err(Error::LeftDomain {
            clipped: clipped_steps,
            steps: steps.len(),
        });
    }
    let final_objective = objective.value(m, &x)?;
    let monotone_decrease = steps
        .windows(2)
        .map(|w| (w[0].objective, w[1].objective))
        .chain(steps.last().map(|s| (s.objective, final_objective)))
        .all(|(a, b)| b <= a + 1e-14 * a.abs().max(1.0));
    Ok(Trajectory {
        steps,
        final_x: x,
        final_objective,
        converged,
        monotone_decrease,
        clipped_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::ParamBox;
    use crate::models::{bernoulli, categorical, reparametrize};
    use crate::tensors::fisher_matrix;

    #[test]
    fn bernoulli_direction_is_variance_times_gradient() {
        let m = bernoulli().unwrap();
        let d = natural_direction(&m, &[0.25], &[1.0], 0.0).unwrap();
        assert!((d[0] - 0.1875).abs() < 1e-14);
        assert_eq!(natural_direction(&m, &[0.25], &[0.0], 0.0).unwrap(), vec![0.0]);
    }

    #[test]
    fn categorical_direction_solves_the_metric() {
        let m = categorical(3).unwrap();
        let x = [0.2, 0.3];
        let kl = Objective::KlToTarget(vec![0.5, 0.25, 0.25]);
        let g = kl.gradient(&m, &x, m.diff()).unwrap();
        let d = natural_direction(&m, &x, &g, 0.0).unwrap();
        let f = fisher_matrix(&m, &x).unwrap().matrix;
        // explicit 2×2 inverse
        let det = f[0][0] * f[1][1] - f[0][1] * f[1][0];
        let want = [
            (f[1][1] * g[0] - f[0][1] * g[1]) / det,
            (-f[1][0] * g[0] + f[0][0] * g[1]) / det,
        ];
        for i in 0..2 {
            assert!((d[i] - want[i]).abs() < 1e-12);
            let gd: f64 = (0..2).map(|j| f[i][j] * d[j]).sum();
            assert!((gd - g[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn bernoulli_kl_descent() {
        let m = bernoulli().unwrap();
        let t = descend(&m, &[0.2], &Objective::KlToTarget(vec![0.7, 0.3]), &NatGradConfig::default()).unwrap();
        assert!(t.converged);
        assert!(t.steps.len() <= 200);
        assert!((t.final_x[0] - 0.7).abs() < 1e-6);
        assert!(t.monotone_decrease);
        assert!(t.to_csv().starts_with("iteration,x1,objective,step_norm\n"));

        let still = descend(&m, &[0.7], &Objective::KlToTarget(vec![0.7, 0.3]), &NatGradConfig::default()).unwrap();
        assert_eq!(still.steps.len(), 1);
        assert!(still.steps[0].step_norm < 1e-15);
    }

    #[test]
    fn expression_objectives_use_differences() {
        let m = bernoulli().unwrap();
        let obj = Objective::Expression(Expression::parse("(x1 - 0.4)^2").unwrap());
        let t = descend(&m, &[0.8], &obj, &NatGradConfig::default()).unwrap();
        assert!((t.final_x[0] - 0.4).abs() < 1e-6);
    }

    #[test]
    fn aggressive_steps_leave_the_domain() {
        let m = bernoulli().unwrap();
        let cfg = NatGradConfig {
            step_size: 50.0,
            max_iterations: 10,
            ..NatGradConfig::default()
        };
        let r = descend(&m, &[0.2], &Objective::KlToTarget(vec![0.7, 0.3]), &cfg);
        assert!(matches!(r, Err(Error::LeftDomain { .. })), "{r:?}");
    }

    #[test]
    fn direction_is_covariant_under_logistic_charts() {
        let m = bernoulli().unwrap();
        let logistic = Expression::parse("1/(1 + exp(-x1))").unwrap();
        let n = reparametrize(&m, vec![logistic.clone()], ParamBox::real_line(1).unwrap()).unwrap();
        let y = 0.4;
        let x = logistic.eval(&[y], &[]).unwrap();
        let jac = x * (1.0 - x);
        let g = 1.3;
        let dn = natural_direction(&n, &[y], &[jac * g], 0.0).unwrap()[0];
        let dm = natural_direction(&m, &[x], &[g], 0.0).unwrap()[0];
        assert!((jac * dn - dm).abs() <= 1e-4 * dm.abs());
    }
}
