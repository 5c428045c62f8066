//! Pointwise values of the canonical tensor fields of a model: the 1-form
//! `A`, the Fisher form, the Amari–Chentsov tensor and the diagonal moment
//! tensors `∫ (∂_V ln p̄)^n dp(x)`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::models::{basis_directions, ParametrizedModel};

/// Smallest admissible Fisher eigenvalue, relative to `max(1, max |G_ij|)`.
pub const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorValue {
    pub order: usize,
    pub value: f64,
    /// Quadrature error estimate; zero on finite spaces.
    pub abs_error: f64,
    pub x: Vec<f64>,
    pub directions: Vec<Vec<f64>>,
}

/// `∫ Π_i ∂_{V_i} ln p̄ dp(x)` over the given directions.
pub fn tensor(m: &ParametrizedModel, x: &[f64], dirs: &[Vec<f64>]) -> Result<TensorValue> {
    let i = m.integrate_dlogs(x, dirs, 1, |_, dl, out| {
        out[0] = dl.iter().product();
    })?;
    Ok(TensorValue {
        order: dirs.len(),
        value: i[0].value,
        abs_error: i[0].abs_error,
        x: x.to_vec(),
        directions: dirs.to_vec(),
    })
}

pub fn one_form(m: &ParametrizedModel, x: &[f64], v: &[f64]) -> Result<TensorValue> {
    tensor(m, x, &[v.to_vec()])
}

pub fn fisher_form(m: &ParametrizedModel, x: &[f64], v: &[f64], w: &[f64]) -> Result<TensorValue> {
    tensor(m, x, &[v.to_vec(), w.to_vec()])
}

pub fn ac_tensor(m: &ParametrizedModel, x: &[f64], v: &[f64], w: &[f64], u: &[f64]) -> Result<TensorValue> {
    tensor(m, x, &[v.to_vec(), w.to_vec(), u.to_vec()])
}

/// `∫ (∂_V ln p̄)^n dp(x)`.
pub fn moment_tensor(m: &ParametrizedModel, x: &[f64], v: &[f64], n: usize) -> Result<TensorValue> {
    if n == 0 {
        return Err(invalid("moment order must be at least 1"));
    }
    let i = m.integrate_dlogs(x, &[v.to_vec()], 1, |_, dl, out| {
        // repeated products so that n = 2, 3 agree bitwise with the forms
        out[0] = (0..n).fold(1.0, |acc, _| acc * dl[0]);
    })?;
    Ok(TensorValue {
        order: n,
        value: i[0].value,
        abs_error: i[0].abs_error,
        x: x.to_vec(),
        directions: vec![v.to_vec(); n],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FisherMatrix {
    pub x: Vec<f64>,
    pub matrix: Vec<Vec<f64>>,
    pub abs_error: Vec<Vec<f64>>,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
}

impl FisherMatrix {
    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        let d = self.matrix.len();
        DMatrix::from_fn(d, d, |i, j| self.matrix[i][j])
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(0.0)
    }

    /// Number of eigenvalues above `rel_tol · λ_max`; a rank deficit means
    /// the model is not immersed at `x`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let top = self.eigenvalues.last().copied().unwrap_or(0.0).max(0.0);
        self.eigenvalues.iter().filter(|&&l| l > rel_tol * top).count()
    }
}

/// Fisher matrix over the standard basis, with one pass over the sample space.
/// Fails if an eigenvalue is below `−PSD_TOL·max(1, max |G_ij|)`.
pub fn fisher_matrix(m: &ParametrizedModel, x: &[f64]) -> Result<FisherMatrix> {
    let f = assemble_fisher(m, x)?;
    let scale = f.matrix.iter().flatten().fold(1.0f64, |a, v| a.max(v.abs()));
    if f.min_eigenvalue() < -PSD_TOL * scale {
        return Err(invalid(format!(
            "Fisher matrix at {x:?} has eigenvalue {} below the PSD tolerance",
            f.min_eigenvalue()
        )));
    }
    Ok(f)
}

/// Fisher matrix without the PSD check.
pub(crate) fn assemble_fisher(m: &ParametrizedModel, x: &[f64]) -> Result<FisherMatrix> {
    let d = m.dim();
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|i| (i..d).map(move |j| (i, j))).collect();
    let ints = m.integrate_dlogs(x, &basis_directions(d), pairs.len(), |_, dl, out| {
        for (o, &(i, j)) in out.iter_mut().zip(&pairs) {
            *o = dl[i] * dl[j];
        }
    })?;
    let mut matrix = vec![vec![0.0; d]; d];
    let mut abs_error = vec![vec![0.0; d]; d];
    for (int, &(i, j)) in ints.iter().zip(&pairs) {
        matrix[i][j] = int.value;
        matrix[j][i] = int.value;
        abs_error[i][j] = int.abs_error;
        abs_error[j][i] = int.abs_error;
    }
    let g = DMatrix::from_fn(d, d, |i, j| matrix[i][j]);
    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(g).eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(f64::total_cmp);
    Ok(FisherMatrix {
        x: x.to_vec(),
        matrix,
        abs_error,
        eigenvalues,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{bernoulli, categorical, scaling};
    use crate::spaces::{Measure, SampleSpace};

    #[test]
    fn bernoulli_closed_forms() {
        let m = bernoulli().unwrap();
        for x in [0.1, 0.25, 0.5, 0.9] {
            let g = fisher_form(&m, &[x], &[1.0], &[1.0]).unwrap().value;
            assert!((g - 1.0 / (x * (1.0 - x))).abs() < 1e-10 * g);
            let t = ac_tensor(&m, &[x], &[1.0], &[1.0], &[1.0]).unwrap().value;
            let want = 1.0 / (x * x) - 1.0 / ((1.0 - x) * (1.0 - x));
            assert!((t - want).abs() < 1e-10 * want.abs().max(1.0));
        }
        let m4 = moment_tensor(&m, &[0.5], &[1.0], 4).unwrap().value;
        assert!((m4 - 16.0).abs() < 1e-12);
        assert_eq!(ac_tensor(&m, &[0.3], &[0.0], &[1.0], &[1.0]).unwrap().value, 0.0);
    }

    #[test]
    fn diagonal_consistency_is_exact() {
        let m = categorical(4).unwrap();
        let x = [0.1, 0.2, 0.3];
        let v = [0.3, -1.0, 0.7];
        assert_eq!(
            fisher_form(&m, &x, &v, &v).unwrap().value,
            moment_tensor(&m, &x, &v, 2).unwrap().value
        );
        assert_eq!(
            ac_tensor(&m, &x, &v, &v, &v).unwrap().value,
            moment_tensor(&m, &x, &v, 3).unwrap().value
        );
    }

    #[test]
    fn scaling_one_form_is_mass_derivative() {
        let mu = Measure::uniform(SampleSpace::grid(0.0, 1.0).unwrap()).unwrap();
        let m = scaling(mu).unwrap();
        let a = one_form(&m, &[1.7], &[1.0]).unwrap();
        assert!((a.value - 1.0).abs() < 1e-12);
        assert!(a.abs_error >= 0.0);
    }

    #[test]
    fn fisher_matrix_is_symmetric_psd() {
        let m = categorical(3).unwrap();
        let f = fisher_matrix(&m, &[0.2, 0.3]).unwrap();
        assert_eq!(f.matrix[0][1], f.matrix[1][0]);
        assert!(f.min_eigenvalue() > 0.0);
        assert_eq!(f.rank(1e-12), 2);
        // p = (0.2, 0.3, 0.5) with ∂_i p_i = 1 and ∂_i p_3 = −1
        assert!((f.matrix[0][0] - (1.0 / 0.2 + 1.0 / 0.5)).abs() < 1e-10);
        assert!((f.matrix[0][1] - 1.0 / 0.5).abs() < 1e-10);
    }
}
