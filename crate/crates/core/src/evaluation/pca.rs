use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Eigenvalues below this fraction of the largest count as zero variance.
pub const RANK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    /// `[T, components]` scores of the mean-centered data.
    pub projection: Array2<f64>,
    /// `[N, components]` unit principal axes.
    pub axes: Array2<f64>,
    /// Fraction of total variance per component, non-increasing.
    pub explained: Vec<f64>,
    /// Components with (numerically) zero variance.
    pub zero_variance: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// Covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    pub explained: Vec<f64>,
}

fn covariance(data: &ArrayView2<'_, f64>) -> (Vec<f64>, DMatrix<f64>) {
    let (n, t) = data.dim();
    let means: Vec<f64> = data.rows().into_iter().map(|r| r.sum() / t as f64).collect();
    let mut cov = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut acc = 0.0;
            for k in 0..t {
                acc += (data[[i, k]] - means[i]) * (data[[j, k]] - means[j]);
            }
            let v = acc / (t - 1) as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    (means, cov)
}

/// Covariance spectrum of an `[N, T]` matrix (rows are variables).
pub fn spectrum(data: &ArrayView2<'_, f64>) -> Result<Spectrum> {
    let (n, t) = data.dim();
    if n == 0 || t < 2 {
        return Err(Error::Shape(format!("PCA needs at least 1 variable and 2 samples, got [{n}, {t}]")));
    }
    let (_, cov) = covariance(data);
    let eig = SymmetricEigen::new(cov);
    let mut values: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0)).collect();
    values.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = values.iter().sum();
    let explained = values
        .iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();
    Ok(Spectrum {
        eigenvalues: values,
        explained,
    })
}

/// Projects mean-centered `[N, T]` data (typically derivative traces) onto
/// its top principal components. Axis signs are fixed so that each axis'
/// largest-magnitude entry is positive.
pub fn pca_project(data: &ArrayView2<'_, f64>, components: usize) -> Result<PcaProjection> {
    let (n, t) = data.dim();
    if components == 0 || t <= components {
        return Err(Error::Shape(format!(
            "PCA needs more samples ({t}) than components ({components})"
        )));
    }
    if components > n {
        return Err(Error::Shape(format!("{components} components requested from {n} variables")));
    }
    let (means, cov) = covariance(data);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = values.iter().sum();
    let largest = values.first().copied().unwrap_or(0.0);

    let mut axes = Array2::<f64>::zeros((n, components));
    for (c, &i) in order.iter().take(components).enumerate() {
        let col = eig.eigenvectors.column(i);
        let pivot = col.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            axes[[r, c]] = sign * col[r];
        }
    }
    let mut centered = data.to_owned();
    for (mut row, m) in centered.rows_mut().into_iter().zip(&means) {
        row -= *m;
    }
    let projection = centered.t().dot(&axes);
    let explained = values[..components]
        .iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();
    let zero_variance = values[..components]
        .iter()
        .map(|&v| v <= RANK_TOLERANCE * largest || largest == 0.0)
        .collect();
    Ok(PcaProjection {
        projection,
        axes,
        explained,
        zero_variance,
    })
}
