//! Dependencies between the series of a panel: pairwise mixed coefficients,
//! their linear time trends, eigendecompositions, and the classical
//! covariance/PCA baseline.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::basis::OrthoBasis;
use crate::error::{HcrError, Result};
use crate::estimate::clamp_unit;
use crate::marginal::{fit, normalize, Family, MarginalModel};

/// Value written on the diagonal of pair matrices.
pub const DIAGONAL_FILL: f64 = 0.0;

/// Named, time-aligned series of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelFrame {
    pub names: Vec<String>,
    pub series: Vec<Vec<f64>>,
}

impl PanelFrame {
    pub fn new(names: Vec<String>, series: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != series.len() {
            return Err(HcrError::Shape(format!(
                "{} names for {} series",
                names.len(),
                series.len()
            )));
        }
        if let Some(first) = series.first() {
            let expected = first.len();
            for (name, s) in names.iter().zip(&series) {
                if s.len() != expected {
                    return Err(HcrError::Alignment {
                        column: name.clone(),
                        expected,
                        got: s.len(),
                    });
                }
            }
        }
        Ok(PanelFrame { names, series })
    }

    pub fn k(&self) -> usize {
        self.series.len()
    }

    /// Common length of the series.
    pub fn len(&self) -> usize {
        self.series.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Fits a marginal to every series separately and maps each through its
/// own CDF.
pub fn normalize_panel(
    panel: &PanelFrame,
    family: Family,
) -> Result<(PanelFrame, Vec<MarginalModel>)> {
    let fitted: Vec<(Vec<f64>, MarginalModel)> = panel
        .series
        .par_iter()
        .map(|y| {
            let model = fit(family, y)?;
            Ok((normalize(y, &model).x, model))
        })
        .collect::<Result<_>>()?;
    let (series, models) = fitted.into_iter().unzip();
    Ok((PanelFrame::new(panel.names.clone(), series)?, models))
}

/// `k × k` matrix of pair coefficients for one basis pair `(j1, j2)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairCoeffMatrix {
    pub names: Vec<String>,
    pub j1: usize,
    pub j2: usize,
    /// Whether entries carry the extra `f_1(time)` factor.
    pub trend: bool,
    pub diagonal_fill: f64,
    /// Row-major.
    pub values: Vec<f64>,
}

impl PairCoeffMatrix {
    pub fn k(&self) -> usize {
        self.names.len()
    }

    pub fn get(&self, alpha: usize, beta: usize) -> f64 {
        self.values[alpha * self.k() + beta]
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.k(), self.k(), &self.values)
    }
}

fn pair_matrix(
    panel: &PanelFrame,
    j1: usize,
    j2: usize,
    basis: &OrthoBasis,
    trend: bool,
) -> Result<PairCoeffMatrix> {
    if j1 == 0 || j2 == 0 {
        return Err(HcrError::Config(format!(
            "pair indices ({j1}, {j2}) must both be at least 1"
        )));
    }
    if j1.max(j2) > basis.max_degree() || (trend && basis.max_degree() < 1) {
        return Err(HcrError::DegreeUnsupported {
            degree: j1.max(j2),
            max: basis.max_degree(),
        });
    }
    let n = panel.len();
    if n == 0 {
        return Err(HcrError::InsufficientData { needed: 1, got: 0 });
    }
    let eval = |j: usize| -> Vec<Vec<f64>> {
        panel
            .series
            .iter()
            .map(|s| {
                s.iter()
                    .map(|&x| basis.eval_one(j, clamp_unit(x)))
                    .collect()
            })
            .collect()
    };
    let mut left = eval(j1);
    let right = if j1 == j2 { left.clone() } else { eval(j2) };
    if trend {
        let time: Vec<f64> = (0..n)
            .map(|t| basis.eval_one(1, (t as f64 + 0.5) / n as f64))
            .collect();
        for s in left.iter_mut() {
            for (v, w) in s.iter_mut().zip(&time) {
                *v *= w;
            }
        }
    }
    let k = panel.k();
    let values: Vec<f64> = (0..k * k)
        .into_par_iter()
        .map(|idx| {
            let (a, b) = (idx / k, idx % k);
            if a == b {
                return DIAGONAL_FILL;
            }
            left[a]
                .iter()
                .zip(&right[b])
                .map(|(u, v)| u * v)
                .sum::<f64>()
                / n as f64
        })
        .collect();
    Ok(PairCoeffMatrix {
        names: panel.names.clone(),
        j1,
        j2,
        trend,
        diagonal_fill: DIAGONAL_FILL,
        values,
    })
}

/// Entry `(α, β)` is `mean_t f_{j1}(x_α^t) f_{j2}(x_β^t)`; the panel must be
/// normalized to `[0, 1]`.
pub fn pair_coeff_matrix(
    panel: &PanelFrame,
    j1: usize,
    j2: usize,
    basis: &OrthoBasis,
) -> Result<PairCoeffMatrix> {
    pair_matrix(panel, j1, j2, basis, false)
}

/// As [`pair_coeff_matrix`] with the extra factor `f_1((t + 1/2)/n)`: the
/// linear-in-time part of each coefficient.
pub fn pair_trend_matrix(
    panel: &PanelFrame,
    j1: usize,
    j2: usize,
    basis: &OrthoBasis,
) -> Result<PairCoeffMatrix> {
    pair_matrix(panel, j1, j2, basis, true)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Eigen {
    /// Descending.
    pub values: Vec<f64>,
    /// `vectors[k]` belongs to `values[k]`; largest component made positive.
    pub vectors: Vec<Vec<f64>>,
}

/// Eigenpairs of a symmetric matrix.
pub fn eigendecompose(m: &DMatrix<f64>) -> Result<Eigen> {
    if !m.is_square() {
        return Err(HcrError::Contract(format!(
            "{}x{} matrix is not square",
            m.nrows(),
            m.ncols()
        )));
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                return Err(HcrError::Contract(format!(
                    "matrix is not symmetric at ({i}, {j}): {} vs {}",
                    m[(i, j)],
                    m[(j, i)]
                )));
            }
        }
    }
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = order
        .iter()
        .map(|&k| {
            let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            let lead = v
                .iter()
                .copied()
                .fold(0.0, |acc: f64, x| if x.abs() > acc.abs() { x } else { acc });
            if lead < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    Ok(Eigen { values, vectors })
}

#[derive(Debug, Clone, Serialize)]
pub struct Pca {
    pub names: Vec<String>,
    /// Population covariance, row-major.
    pub covariance: Vec<f64>,
    pub correlation: Vec<f64>,
    /// Top `q` eigenpairs of the covariance.
    pub components: Eigen,
}

pub fn covariance_pca(panel: &PanelFrame, q: usize) -> Result<Pca> {
    let n = panel.len();
    if n < 2 {
        return Err(HcrError::InsufficientData { needed: 2, got: n });
    }
    let k = panel.k();
    let centered: Vec<Vec<f64>> = panel
        .series
        .iter()
        .map(|s| {
            let mean = s.iter().sum::<f64>() / n as f64;
            s.iter().map(|v| v - mean).collect()
        })
        .collect();
    let cov = DMatrix::from_fn(k, k, |a, b| {
        centered[a]
            .iter()
            .zip(&centered[b])
            .map(|(u, v)| u * v)
            .sum::<f64>()
            / n as f64
    });
    if let Some(a) = (0..k).find(|&a| !(cov[(a, a)] > 0.0)) {
        log::error!("series {} has zero variance", panel.names[a]);
        return Err(HcrError::DegenerateScale);
    }
    let corr = DMatrix::from_fn(k, k, |a, b| {
        if a == b {
            1.0
        } else {
            cov[(a, b)] / (cov[(a, a)] * cov[(b, b)]).sqrt()
        }
    });
    let mut components = eigendecompose(&cov)?;
    components.values.truncate(q);
    components.vectors.truncate(q);
    let row_major = |m: &DMatrix<f64>| m.transpose().iter().copied().collect();
    Ok(Pca {
        names: panel.names.clone(),
        covariance: row_major(&cov),
        correlation: row_major(&corr),
        components,
    })
}
