//! Scoring of density predictions and the baselines they are compared with.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{HcrError, Result};
use crate::optim::nelder_mead;

/// Mean `log2` of the densities at the observed values.
pub fn log_likelihood_bits(densities: &[f64]) -> Result<f64> {
    if densities.is_empty() {
        return Err(HcrError::InsufficientData { needed: 1, got: 0 });
    }
    if let Some((i, v)) = densities
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v > 0.0) || !v.is_finite())
    {
        return Err(HcrError::Contract(format!(
            "density {v} at position {i} is not a positive number; was the prediction calibrated?"
        )));
    }
    Ok(densities.iter().map(|v| v.log2()).sum::<f64>() / densities.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageCurve {
    pub sorted: Vec<f64>,
    /// Kolmogorov–Smirnov distance to the uniform distribution.
    pub ks: f64,
    /// `max |sorted_i - (i - 1/2)/n|`.
    pub max_mid_deviation: f64,
}

/// Sorted normalized values against the diagonal.
pub fn coverage_curve(x: &[f64]) -> Result<CoverageCurve> {
    if x.is_empty() {
        return Err(HcrError::InsufficientData { needed: 1, got: 0 });
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut ks = 0.0f64;
    let mut mid = 0.0f64;
    for (i, &s) in sorted.iter().enumerate() {
        let i = i as f64;
        ks = ks.max((i + 1.0) / n - s).max(s - i / n);
        mid = mid.max((s - (i + 0.5) / n).abs());
    }
    Ok(CoverageCurve {
        sorted,
        ks,
        max_mid_deviation: mid,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SortedPredictions {
    pub sorted: Vec<f64>,
    /// Share of predictions worse than the uniform density.
    pub fraction_below_one: f64,
}

pub fn sorted_prediction_curve(densities: &[f64]) -> Result<SortedPredictions> {
    if densities.is_empty() {
        return Err(HcrError::InsufficientData { needed: 1, got: 0 });
    }
    let mut sorted = densities.to_vec();
    sorted.sort_by(f64::total_cmp);
    let below = sorted.partition_point(|&v| v < 1.0);
    Ok(SortedPredictions {
        fraction_below_one: below as f64 / sorted.len() as f64,
        sorted,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub model: String,
    pub n: usize,
    pub mean_log2_density: f64,
    pub ks: f64,
    pub fraction_below_one: f64,
    pub coverage_curve: Vec<f64>,
    pub sorted_density_curve: Vec<f64>,
}

/// `densities` are the predicted densities at the observed values,
/// `coverage` the observed values mapped through the predicted CDFs.
pub fn evaluate(model: &str, densities: &[f64], coverage: &[f64]) -> Result<EvalReport> {
    let bits = log_likelihood_bits(densities)?;
    let cov = coverage_curve(coverage)?;
    let sorted = sorted_prediction_curve(densities)?;
    Ok(EvalReport {
        model: model.to_string(),
        n: densities.len(),
        mean_log2_density: bits,
        ks: cov.ks,
        fraction_below_one: sorted.fraction_below_one,
        coverage_curve: cov.sorted,
        sorted_density_curve: sorted.sorted,
    })
}

/// How the ARCH recursion is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchForm {
    /// `σ_t² = α0 + α1 e_{t-1}²`.
    #[default]
    Variance,
    /// `σ_t = α0 + α1 e_{t-1}²`.
    StdDev,
}

/// Gaussian with ARCH(0,1) scale, `e_t = y_t - mu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchModel {
    pub mu: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    pub form: ArchForm,
}

impl ArchModel {
    /// Standard deviation of the next value after observing `prev`.
    pub fn sigma(&self, prev: f64) -> f64 {
        let e2 = (prev - self.mu).powi(2);
        match self.form {
            ArchForm::Variance => (self.alpha0 + self.alpha1 * e2).sqrt(),
            ArchForm::StdDev => self.alpha0 + self.alpha1 * e2,
        }
    }

    /// Predictive densities of `y[1..]`, each given its predecessor.
    pub fn densities(&self, y: &[f64]) -> Vec<f64> {
        y.windows(2)
            .map(|w| {
                let s = self.sigma(w[0]);
                let z = (w[1] - self.mu) / s;
                (-0.5 * z * z).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
            })
            .collect()
    }

    /// `y[1..]` mapped through the predictive CDFs.
    pub fn normalize(&self, y: &[f64]) -> Vec<f64> {
        y.windows(2)
            .map(|w| {
                let z = (w[1] - self.mu) / self.sigma(w[0]);
                0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
            })
            .collect()
    }

    fn neg_log_likelihood(&self, y: &[f64]) -> f64 {
        let mut acc = 0.0;
        for w in y.windows(2) {
            let s = self.sigma(w[0]);
            if !(s > 0.0) {
                return f64::INFINITY;
            }
            let z = (w[1] - self.mu) / s;
            acc += 0.5 * z * z + s.ln();
        }
        acc + 0.5 * (2.0 * std::f64::consts::PI).ln() * (y.len() - 1) as f64
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ArchFit {
    pub model: ArchModel,
    /// Standard errors of `(alpha0, alpha1)` from the observed information;
    /// `None` when the Hessian is not positive definite.
    pub std_errors: Option<[f64; 2]>,
    /// Predictive densities of `y[1..]`.
    pub densities: Vec<f64>,
    pub iterations: usize,
}

/// Maximum-likelihood ARCH(0,1) with the mean fixed at the sample mean.
pub fn fit_arch01(y: &[f64], form: ArchForm) -> Result<ArchFit> {
    if y.len() < 50 {
        return Err(HcrError::InsufficientData {
            needed: 50,
            got: y.len(),
        });
    }
    let n = y.len() as f64;
    let mu = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(HcrError::DegenerateScale);
    }
    // Parameters: (ln α0, α1 scaled to the level of α0).
    let (level, a1_scale) = match form {
        ArchForm::Variance => (var, 1.0),
        ArchForm::StdDev => (var.sqrt(), 1.0 / var.sqrt()),
    };
    let build = |p: &[f64]| ArchModel {
        mu,
        alpha0: p[0].exp(),
        alpha1: p[1] * a1_scale,
        form,
    };
    let objective = |p: &[f64]| build(p).neg_log_likelihood(y) / n;
    let ln_level = level.ln();
    let r = nelder_mead(
        objective,
        &[ln_level, 0.1],
        &[0.5, 0.2],
        &[ln_level - 25.0, 0.0],
        &[ln_level + 5.0, 10.0],
        1e-12,
        2000,
    );
    if !r.converged || !r.value.is_finite() {
        return Err(HcrError::FitFailure {
            what: "ARCH(0,1)",
            iterations: r.iterations,
            best: vec![r.x[0].exp(), r.x[1] * a1_scale],
        });
    }
    let model = build(&r.x);
    let std_errors = arch_std_errors(&model, y);
    Ok(ArchFit {
        densities: model.densities(y),
        model,
        std_errors,
        iterations: r.iterations,
    })
}

fn arch_std_errors(model: &ArchModel, y: &[f64]) -> Option<[f64; 2]> {
    let theta = [model.alpha0, model.alpha1];
    let f = |t: [f64; 2]| {
        ArchModel {
            alpha0: t[0],
            alpha1: t[1],
            ..model.clone()
        }
        .neg_log_likelihood(y)
    };
    let h = [theta[0] * 1e-4, (theta[1].abs() * 1e-4).max(1e-6)];
    let mut hess = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let shift = |si: f64, sj: f64| {
                let mut t = theta;
                t[i] += si * h[i];
                t[j] += sj * h[j];
                f(t)
            };
            hess[i][j] = (shift(1.0, 1.0) - shift(1.0, -1.0) - shift(-1.0, 1.0)
                + shift(-1.0, -1.0))
                / (4.0 * h[i] * h[j]);
        }
    }
    let m = DMatrix::from_row_slice(2, 2, &[hess[0][0], hess[0][1], hess[1][0], hess[1][1]]);
    let inv = m.cholesky()?.inverse();
    let se = [inv[(0, 0)].sqrt(), inv[(1, 1)].sqrt()];
    se.iter().all(|v| v.is_finite()).then_some(se)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearPredictor {
    /// `β0, β1..βk`; `βi` multiplies `v[t - i]`.
    pub beta: Vec<f64>,
    /// `v[t] - prediction` for `t = k..n`.
    pub residuals: Vec<f64>,
}

impl LinearPredictor {
    /// `v[t] - prediction` for `t = k..n` of another series.
    pub fn residuals_of(&self, v: &[f64]) -> Vec<f64> {
        let k = self.beta.len() - 1;
        (k..v.len())
            .map(|t| v[t] - self.beta[0] - (1..=k).map(|i| self.beta[i] * v[t - i]).sum::<f64>())
            .collect()
    }
}

/// Least squares `v[t] ≈ β0 + Σ βi v[t-i]` through the centered normal
/// equations. Regressors that never vary get weight zero and the intercept
/// absorbs the mean; any other singular design is a rank error.
pub fn fit_linear_predictor(v: &[f64], k: usize) -> Result<LinearPredictor> {
    if v.len() <= k + 1 {
        return Err(HcrError::InsufficientData {
            needed: k + 2,
            got: v.len(),
        });
    }
    let rows = v.len() - k;
    let target: Vec<f64> = v[k..].to_vec();
    let lag = |i: usize, r: usize| v[k + r - i];
    let mean_t = target.iter().sum::<f64>() / rows as f64;
    let means: Vec<f64> = (1..=k)
        .map(|i| (0..rows).map(|r| lag(i, r)).sum::<f64>() / rows as f64)
        .collect();
    let mut gram = DMatrix::zeros(k, k);
    let mut rhs = DVector::zeros(k);
    for (r, t) in target.iter().enumerate() {
        let x: Vec<f64> = (1..=k).map(|i| lag(i, r) - means[i - 1]).collect();
        let y = t - mean_t;
        for a in 0..k {
            rhs[a] += x[a] * y;
            for b in 0..k {
                gram[(a, b)] += x[a] * x[b];
            }
        }
    }
    let slopes: Vec<f64> = if k == 0 || gram.iter().all(|&g| g == 0.0) {
        vec![0.0; k]
    } else {
        let chol = gram
            .cholesky()
            .ok_or_else(|| HcrError::Rank(format!("lagged design of order {k} is singular")))?;
        chol.solve(&rhs).iter().copied().collect()
    };
    let beta0 = mean_t - slopes.iter().zip(&means).map(|(b, m)| b * m).sum::<f64>();
    let residuals = (0..rows)
        .map(|r| target[r] - beta0 - (1..=k).map(|i| slopes[i - 1] * lag(i, r)).sum::<f64>())
        .collect();
    let mut beta = vec![beta0];
    beta.extend(slopes);
    Ok(LinearPredictor { beta, residuals })
}
