//! Conditional densities of the current value given its context, and the
//! calibration maps that turn raw (possibly negative) polynomial values into
//! proper densities.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::OrthoBasis;
use crate::error::{HcrError, Result};
use crate::estimate::{clamp_unit, CoefficientTensor, WindowSet};
use crate::marginal::UnitDensity;
use crate::optim::{golden_section, nelder_mead};
use crate::quadrature::gl16;

/// Cells used to locate the kinks of `φ(ρ(x))` before integrating.
const KINK_CELLS: usize = 256;

/// Conditional density of the current value, as a polynomial on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedDensity1D {
    /// Coefficients in the orthonormal basis; `coeffs[0] == 1`.
    pub coeffs: Vec<f64>,
    /// The same polynomial in monomial form, constant term first.
    monomial: Vec<f64>,
    /// Set when the context had nonpositive mass and `ρ ≡ 1` was substituted.
    pub uniform_fallback: bool,
}

impl PredictedDensity1D {
    pub fn from_coefficients(coeffs: Vec<f64>, basis: &OrthoBasis) -> Result<Self> {
        if coeffs.is_empty() || coeffs.len() > basis.len() {
            return Err(HcrError::DegreeUnsupported {
                degree: coeffs.len().saturating_sub(1),
                max: basis.max_degree(),
            });
        }
        let mut monomial = vec![0.0; coeffs.len()];
        for (j, &b) in coeffs.iter().enumerate() {
            for (k, &c) in basis.coefficients(j).iter().enumerate() {
                monomial[k] += b * c;
            }
        }
        Ok(PredictedDensity1D {
            coeffs,
            monomial,
            uniform_fallback: false,
        })
    }

    pub fn uniform() -> Self {
        PredictedDensity1D {
            coeffs: vec![1.0],
            monomial: vec![1.0],
            uniform_fallback: true,
        }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Raw polynomial value `Σ b_j f_j(x)`.
    #[inline]
    pub fn raw(&self, x: f64) -> f64 {
        self.monomial.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    /// Density at `x` after calibration, renormalized to unit integral. With
    /// `Calibration::None` this is the raw polynomial value.
    pub fn density_at(&self, x: f64, cal: &Calibration) -> f64 {
        match cal {
            Calibration::None => self.raw(x),
            _ => cal.apply(self.raw(x)) / calibrated_integral(self, cal, None),
        }
    }

    /// Binds a calibration, computing its normalizer once.
    pub fn calibrated(&self, cal: &Calibration) -> CalibratedDensity {
        let norm = match cal {
            Calibration::None => 1.0,
            _ => calibrated_integral(self, cal, None),
        };
        CalibratedDensity {
            poly: self.clone(),
            calibration: cal.clone(),
            norm,
        }
    }
}

/// A predicted density with its calibration and normalizer.
#[derive(Debug, Clone)]
pub struct CalibratedDensity {
    pub poly: PredictedDensity1D,
    pub calibration: Calibration,
    pub norm: f64,
}

impl CalibratedDensity {
    /// `∫₀ˣ` of the calibrated density; with `Calibration::None`, of the raw
    /// polynomial.
    pub fn cdf(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        calibrated_integral_to(&self.poly, &self.calibration, None, x) / self.norm
    }
}

impl UnitDensity for CalibratedDensity {
    fn density(&self, x: f64) -> f64 {
        self.calibration.apply(self.poly.raw(x)) / self.norm
    }
}

/// `φ`: maps raw polynomial values to nonnegative density values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Calibration {
    /// Raw values, unnormalized, possibly negative.
    None,
    /// `max(z, floor)`.
    Clamp { floor: f64 },
    /// `max(floor, min(z, slope·z + intercept))`.
    PiecewiseLinear {
        floor: f64,
        slope: f64,
        intercept: f64,
    },
    /// Monotone piecewise-linear curve through `(z, phi)` knots, constant
    /// beyond the first and last knot.
    Empirical { z: Vec<f64>, phi: Vec<f64> },
}

impl Default for Calibration {
    /// Floor 0.15, identity up to the knee at 2, slope 0.15 above it.
    fn default() -> Self {
        Calibration::PiecewiseLinear {
            floor: 0.15,
            slope: 0.15,
            intercept: 1.7,
        }
    }
}

impl Calibration {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HcrError::Config(msg));
        match self {
            Calibration::None => Ok(()),
            Calibration::Clamp { floor } if !(*floor > 0.0) => {
                bad(format!("clamp floor {floor} must be positive"))
            }
            Calibration::PiecewiseLinear { floor, slope, .. }
                if !(*floor > 0.0) || !(*slope >= 0.0) =>
            {
                bad(format!(
                    "piecewise calibration needs floor > 0 and slope >= 0 (got {floor}, {slope})"
                ))
            }
            Calibration::Empirical { z, phi } => {
                if z.is_empty() || z.len() != phi.len() {
                    return bad("empirical calibration needs matching, nonempty knots".into());
                }
                if z.windows(2).any(|w| !(w[0] < w[1])) || phi.windows(2).any(|w| w[0] > w[1]) {
                    return bad(
                        "empirical calibration must be increasing in z and nondecreasing in phi"
                            .into(),
                    );
                }
                if phi.iter().any(|&p| !(p > 0.0)) {
                    return bad("empirical calibration values must be positive".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn apply(&self, z: f64) -> f64 {
        match self {
            Calibration::None => z,
            Calibration::Clamp { floor } => z.max(*floor),
            Calibration::PiecewiseLinear {
                floor,
                slope,
                intercept,
            } => z.min(slope * z + intercept).max(*floor),
            Calibration::Empirical { z: zs, phi } => {
                let k = zs.partition_point(|&v| v <= z);
                if k == 0 {
                    phi[0]
                } else if k == zs.len() {
                    phi[zs.len() - 1]
                } else {
                    let t = (z - zs[k - 1]) / (zs[k] - zs[k - 1]);
                    phi[k - 1] + t * (phi[k] - phi[k - 1])
                }
            }
        }
    }

    /// Raw values at which `φ` changes slope, sorted.
    fn knots(&self) -> Vec<f64> {
        let mut k = match self {
            Calibration::None => vec![],
            Calibration::Clamp { floor } => vec![*floor],
            Calibration::PiecewiseLinear {
                floor,
                slope,
                intercept,
            } => {
                let mut v = vec![*floor];
                if *slope > 0.0 {
                    v.push((floor - intercept) / slope);
                }
                if *slope < 1.0 {
                    v.push(intercept / (1.0 - slope));
                }
                v
            }
            Calibration::Empirical { z, .. } => z.clone(),
        };
        k.retain(|v| v.is_finite());
        k.sort_by(f64::total_cmp);
        k.dedup();
        k
    }
}

fn grid_values(p: &PredictedDensity1D) -> Vec<f64> {
    (0..=KINK_CELLS)
        .map(|i| p.raw(i as f64 / KINK_CELLS as f64))
        .collect()
}

/// Points in `(0, 1)` where `ρ` crosses a knot of `φ`, plus both ends.
/// Crossings are located by sign changes on a fine grid and bisection.
fn kink_breaks(p: &PredictedDensity1D, cal: &Calibration, vals: &[f64]) -> Vec<f64> {
    let knots = cal.knots();
    let mut breaks = vec![0.0];
    let h = 1.0 / KINK_CELLS as f64;
    for i in 0..KINK_CELLS {
        let (v0, v1) = (vals[i], vals[i + 1]);
        let (lo, hi) = if v0 < v1 { (v0, v1) } else { (v1, v0) };
        let start = knots.partition_point(|&k| k < lo);
        for &k in knots[start..].iter().take_while(|&&k| k <= hi) {
            let x0 = i as f64 * h;
            if v0 == k {
                if i > 0 {
                    breaks.push(x0);
                }
                continue;
            }
            if v1 == k {
                continue;
            }
            let (mut a, mut b) = (x0, x0 + h);
            let sa = v0 - k;
            for _ in 0..60 {
                let mid = 0.5 * (a + b);
                if (p.raw(mid) - k) * sa > 0.0 {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            breaks.push(0.5 * (a + b));
        }
    }
    breaks.push(1.0);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    breaks
}

/// `∫₀^upper φ(ρ(x)) dx`. Between kinks the integrand is a polynomial and a
/// 16-point Gauss–Legendre rule is exact on it.
fn calibrated_integral_to(
    p: &PredictedDensity1D,
    cal: &Calibration,
    grid: Option<&[f64]>,
    upper: f64,
) -> f64 {
    if let Calibration::None = cal {
        // exact antiderivative
        return p
            .monomial
            .iter()
            .enumerate()
            .rev()
            .fold(0.0, |acc, (k, &c)| acc * upper + c / (k + 1) as f64)
            * upper;
    }
    let owned;
    let vals = match grid {
        Some(g) => g,
        None => {
            owned = grid_values(p);
            &owned
        }
    };
    let rule = gl16();
    kink_breaks(p, cal, vals)
        .windows(2)
        .map(|w| (w[0], w[1].min(upper)))
        .filter(|(a, b)| b > a)
        .map(|(a, b)| rule.integrate_on(a, b, |x| cal.apply(p.raw(x))))
        .sum()
}

fn calibrated_integral(p: &PredictedDensity1D, cal: &Calibration, grid: Option<&[f64]>) -> f64 {
    if let Calibration::None = cal {
        return p.coeffs[0];
    }
    calibrated_integral_to(p, cal, grid, 1.0)
}

/// `φ(ρ(x)) / ∫ φ(ρ)`; with `Calibration::None`, the raw value.
pub fn predicted_density_at(p: &PredictedDensity1D, x: f64, cal: &Calibration) -> f64 {
    p.density_at(x, cal)
}

fn check_context(tensor: &CoefficientTensor, context: &[f64]) -> Result<()> {
    if context.len() + 1 != tensor.d() {
        return Err(HcrError::Shape(format!(
            "context of length {} for a tensor of dimension {}",
            context.len(),
            tensor.d()
        )));
    }
    if let Some(v) = context.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(HcrError::Domain(format!(
            "context value {v} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Unnormalized conditional coefficients:
/// `b_{j1} = Σ_{j2..jd} a_j Π_{i≥2} f_{j_i}(context_{i-1})`.
pub fn condition_raw(
    tensor: &CoefficientTensor,
    basis: &OrthoBasis,
    context: &[f64],
) -> Result<Vec<f64>> {
    check_context(tensor, context)?;
    let layout = tensor.layout();
    let degrees = layout.degrees();
    let width = degrees.iter().max().copied().unwrap_or(0) + 1;
    if width > basis.len() {
        return Err(HcrError::DegreeUnsupported {
            degree: width - 1,
            max: basis.max_degree(),
        });
    }
    let d = degrees.len();
    let mut vals = vec![0.0; d.saturating_sub(1) * width];
    for (i, &c) in context.iter().enumerate() {
        basis.eval_into(clamp_unit(c), &mut vals[i * width..(i + 1) * width]);
    }
    if let Some(dense) = tensor.dense_values() {
        return Ok(condition_dense(degrees, dense, &vals, width));
    }
    let mut b = vec![0.0; degrees[0] + 1];
    let mut j = vec![0usize; d];
    for (k, a) in tensor.entries_linear() {
        j.copy_from_slice(&layout.multi(k));
        let mut p = a;
        for (i, &ji) in j.iter().enumerate().skip(1) {
            p *= vals[(i - 1) * width + ji];
        }
        b[j[0]] += p;
    }
    Ok(b)
}

/// Dense conditioning: `vals` holds the basis values of each context
/// coordinate, `width` per coordinate.
fn condition_dense(degrees: &[usize], dense: &[f64], vals: &[f64], width: usize) -> Vec<f64> {
    // weight of every context multi-index, in canonical order
    let mut weights = vec![1.0];
    for (i, &mi) in degrees.iter().enumerate().skip(1) {
        let f = &vals[(i - 1) * width..(i - 1) * width + mi + 1];
        weights = weights
            .iter()
            .flat_map(|&w| f.iter().map(move |&v| w * v))
            .collect();
    }
    let block = weights.len();
    (0..=degrees[0])
        .map(|j1| {
            dense[j1 * block..(j1 + 1) * block]
                .iter()
                .zip(&weights)
                .map(|(a, w)| a * w)
                .sum()
        })
        .collect()
}

/// [`condition_or_uniform`] on raw dense coefficients.
pub(crate) fn condition_dense_or_uniform(
    degrees: &[usize],
    dense: &[f64],
    basis: &OrthoBasis,
    context: &[f64],
) -> Result<PredictedDensity1D> {
    let width = degrees.iter().max().copied().unwrap_or(0) + 1;
    let mut vals = vec![0.0; context.len() * width];
    for (i, &c) in context.iter().enumerate() {
        basis.eval_into(clamp_unit(c), &mut vals[i * width..(i + 1) * width]);
    }
    normalize_conditional(condition_dense(degrees, dense, &vals, width), basis).or_else(|e| match e
    {
        HcrError::DegenerateContext { .. } => Ok(PredictedDensity1D::uniform()),
        other => Err(other),
    })
}

fn normalize_conditional(mut b: Vec<f64>, basis: &OrthoBasis) -> Result<PredictedDensity1D> {
    let b0 = b[0];
    if !(b0 > 0.0) {
        return Err(HcrError::DegenerateContext { b0 });
    }
    for v in b.iter_mut() {
        *v /= b0;
    }
    PredictedDensity1D::from_coefficients(b, basis)
}

/// Substitutes the context and normalizes to unit integral (`b_0 = 1`).
pub fn condition(
    tensor: &CoefficientTensor,
    basis: &OrthoBasis,
    context: &[f64],
) -> Result<PredictedDensity1D> {
    normalize_conditional(condition_raw(tensor, basis, context)?, basis)
}

/// Like [`condition`], substituting `ρ ≡ 1` for degenerate contexts.
pub fn condition_or_uniform(
    tensor: &CoefficientTensor,
    basis: &OrthoBasis,
    context: &[f64],
) -> Result<PredictedDensity1D> {
    match condition(tensor, basis, context) {
        Err(HcrError::DegenerateContext { .. }) => Ok(PredictedDensity1D::uniform()),
        other => other,
    }
}

/// Predictions for every window: the polynomial for its context and the
/// value actually observed.
#[derive(Debug, Clone)]
pub struct PredictionBatch {
    pub polys: Vec<PredictedDensity1D>,
    pub actual: Vec<f64>,
    pub contexts: Vec<Vec<f64>>,
    /// Windows whose context had nonpositive mass.
    pub fallbacks: usize,
}

impl PredictionBatch {
    pub fn len(&self) -> usize {
        self.polys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.polys.is_empty()
    }

    pub fn raw_at_actual(&self) -> Vec<f64> {
        self.polys
            .iter()
            .zip(&self.actual)
            .map(|(p, &x)| p.raw(x))
            .collect()
    }

    /// Calibrated densities at the actual values.
    pub fn calibrated_at_actual(&self, cal: &Calibration) -> Vec<f64> {
        self.polys
            .par_iter()
            .zip(&self.actual)
            .map(|(p, &x)| p.density_at(x, cal))
            .collect()
    }
}

pub fn predict_windows(
    tensor: &CoefficientTensor,
    basis: &OrthoBasis,
    windows: &WindowSet,
) -> Result<PredictionBatch> {
    if windows.d() != tensor.d() {
        return Err(HcrError::Shape(format!(
            "windows of dimension {} for a tensor of dimension {}",
            windows.d(),
            tensor.d()
        )));
    }
    let rows: Vec<&[f64]> = windows.rows().collect();
    let polys: Vec<PredictedDensity1D> = rows
        .par_iter()
        .map(|r| condition_or_uniform(tensor, basis, &r[1..]))
        .collect::<Result<_>>()?;
    let fallbacks = polys.iter().filter(|p| p.uniform_fallback).count();
    Ok(PredictionBatch {
        actual: rows.iter().map(|r| r[0]).collect(),
        contexts: rows.iter().map(|r| r[1..].to_vec()).collect(),
        polys,
        fallbacks,
    })
}

fn check_calibration_inputs(preds: &[PredictedDensity1D], actual: &[f64]) -> Result<()> {
    if preds.len() != actual.len() {
        return Err(HcrError::Shape(format!(
            "{} predictions for {} observed values",
            preds.len(),
            actual.len()
        )));
    }
    if preds.len() < 100 {
        return Err(HcrError::InsufficientData {
            needed: 100,
            got: preds.len(),
        });
    }
    Ok(())
}

/// Weighted pool-adjacent-violators: the nondecreasing sequence closest to
/// `y` in weighted least squares.
pub fn isotonic_regression(y: &[f64], w: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(y.len());
    for (&v, &wt) in y.iter().zip(w) {
        blocks.push((v, wt, 1));
        while blocks.len() > 1 {
            let (v2, w2, c2) = blocks[blocks.len() - 1];
            let (v1, w1, c1) = blocks[blocks.len() - 2];
            if v1 <= v2 {
                break;
            }
            blocks.truncate(blocks.len() - 2);
            let wt = w1 + w2;
            blocks.push(((v1 * w1 + v2 * w2) / wt, wt, c1 + c2));
        }
    }
    blocks
        .into_iter()
        .flat_map(|(v, _, c)| std::iter::repeat_n(v, c))
        .collect()
}

/// Empirical calibration curve.
///
/// Two distributions of raw values are compared: the values of each
/// predicted polynomial at the observed point, and the values of all
/// polynomials over a regular lattice of `grid` points. For a calibrated
/// predictor the first density equals `z` times the second, so their ratio
/// estimates `φ(z)`. Both are measured over shared equal-mass bins of the
/// first sample, the ratio is made monotone by isotonic regression and the
/// curve is held constant outside its support.
pub fn calibrate_empirical(
    preds: &[PredictedDensity1D],
    actual: &[f64],
    grid: usize,
) -> Result<Calibration> {
    check_calibration_inputs(preds, actual)?;
    if grid < 100 {
        return Err(HcrError::Config(format!(
            "calibration grid {grid} must be at least 100"
        )));
    }
    let n = preds.len();
    let mut at_actual: Vec<f64> = preds.iter().zip(actual).map(|(p, &x)| p.raw(x)).collect();
    at_actual.sort_by(f64::total_cmp);
    let mut lattice: Vec<f64> = preds
        .par_iter()
        .flat_map_iter(|p| (0..grid).map(move |g| p.raw((g as f64 + 0.5) / grid as f64)))
        .collect();
    lattice.par_sort_by(f64::total_cmp);
    let total2 = lattice.len() as f64;
    let mut prefix2 = Vec::with_capacity(lattice.len() + 1);
    prefix2.push(0.0);
    for &v in &lattice {
        prefix2.push(prefix2.last().unwrap() + v);
    }

    let bins = ((n as f64).sqrt().round() as usize).clamp(10, 200);
    let mut edges: Vec<f64> = (0..=bins)
        .map(|i| at_actual[((i * (n - 1)) as f64 / bins as f64).round() as usize])
        .collect();
    edges.dedup();

    let mut centers = Vec::new();
    let mut ratios = Vec::new();
    let mut weights = Vec::new();
    let mut push_bin = |lo_idx: (usize, usize), hi_idx: (usize, usize)| {
        let c1 = hi_idx.0 - lo_idx.0;
        let c2 = hi_idx.1 - lo_idx.1;
        if c1 == 0 || c2 == 0 {
            return;
        }
        let center = (prefix2[hi_idx.1] - prefix2[lo_idx.1]) / c2 as f64;
        centers.push(center);
        ratios.push((c1 as f64 / n as f64) / (c2 as f64 / total2));
        weights.push(c1 as f64);
    };
    if edges.len() == 1 {
        let v = edges[0];
        let range = |s: &[f64]| {
            (
                s.partition_point(|&x| x < v),
                s.partition_point(|&x| x <= v),
            )
        };
        let (a1, b1) = range(&at_actual);
        let (a2, b2) = range(&lattice);
        push_bin((a1, a2), (b1, b2));
    } else {
        for k in 0..edges.len() - 1 {
            let last = k + 2 == edges.len();
            let lo = edges[k];
            let hi = edges[k + 1];
            let lower = |s: &[f64]| s.partition_point(|&x| x < lo);
            let upper = |s: &[f64]| {
                if last {
                    s.partition_point(|&x| x <= hi)
                } else {
                    s.partition_point(|&x| x < hi)
                }
            };
            push_bin(
                (lower(&at_actual), lower(&lattice)),
                (upper(&at_actual), upper(&lattice)),
            );
        }
    }
    if centers.is_empty() {
        return Err(HcrError::InsufficientData { needed: 1, got: 0 });
    }
    let mut phi = isotonic_regression(&ratios, &weights);
    let floor = phi
        .iter()
        .copied()
        .filter(|&v| v > 0.0)
        .fold(f64::INFINITY, f64::min)
        .max(1e-6);
    for v in phi.iter_mut() {
        *v = v.max(floor);
    }
    // knots must be strictly increasing
    let mut z = Vec::with_capacity(centers.len());
    let mut p = Vec::with_capacity(centers.len());
    for (c, v) in centers.into_iter().zip(phi) {
        if z.last().is_some_and(|&last: &f64| c <= last) {
            let last = p.len() - 1;
            p[last] = f64::max(p[last], v);
            continue;
        }
        z.push(c);
        p.push(v);
    }
    let cal = Calibration::Empirical { z, phi: p };
    cal.validate()?;
    Ok(cal)
}

/// Parametric calibration families fitted by maximum likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CalibrationFamily {
    /// `max(z, a)`, one parameter.
    Floor,
    /// `max(a, min(z, s·z + (1 - s)·knee))`: identity up to `knee`, slope
    /// `s` above it, floor `a`. Two parameters.
    FloorSlope { knee: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MleCalibration {
    pub calibration: Calibration,
    /// Mean natural-log density at the observed values.
    pub mean_log_likelihood: f64,
    pub iterations: usize,
}

/// Mean `ln(φ(ρ_t(x_t)) / ∫φ(ρ_t))` over a batch.
pub fn calibration_log_likelihood(
    preds: &[PredictedDensity1D],
    actual: &[f64],
    cal: &Calibration,
) -> f64 {
    let grids: Vec<Vec<f64>> = preds.par_iter().map(grid_values).collect();
    log_likelihood_cached(preds, actual, &grids, cal)
}

fn log_likelihood_cached(
    preds: &[PredictedDensity1D],
    actual: &[f64],
    grids: &[Vec<f64>],
    cal: &Calibration,
) -> f64 {
    let terms: Vec<f64> = preds
        .par_iter()
        .zip(actual)
        .zip(grids)
        .map(|((p, &x), g)| {
            let v = cal.apply(p.raw(x));
            if !(v > 0.0) {
                return f64::NEG_INFINITY;
            }
            (v / calibrated_integral(p, cal, Some(g))).ln()
        })
        .collect();
    terms.iter().sum::<f64>() / terms.len() as f64
}

/// Fits a calibration family by maximizing the mean log-likelihood of the
/// renormalized calibrated densities at the observed values.
pub fn fit_calibration_mle(
    preds: &[PredictedDensity1D],
    actual: &[f64],
    family: CalibrationFamily,
) -> Result<MleCalibration> {
    check_calibration_inputs(preds, actual)?;
    let grids: Vec<Vec<f64>> = preds.par_iter().map(grid_values).collect();
    let ll = |cal: &Calibration| log_likelihood_cached(preds, actual, &grids, cal);
    match family {
        CalibrationFamily::Floor => {
            let make = |a: f64| Calibration::Clamp { floor: a };
            // Coarse grid first; among equal values the smallest floor wins.
            let mut best = (0.01, ll(&make(0.01)));
            for k in 2..=100 {
                let a = k as f64 * 0.01;
                let v = ll(&make(a));
                if v > best.1 + 1e-12 * best.1.abs().max(1.0)
                    || (best.1.is_infinite() && v > best.1)
                {
                    best = (a, v);
                }
            }
            if !best.1.is_finite() {
                return Err(HcrError::FitFailure {
                    what: "calibration floor",
                    iterations: 100,
                    best: vec![best.0],
                });
            }
            let lo = (best.0 - 0.01).max(1e-3);
            let hi = (best.0 + 0.01).min(1.0);
            let (a, neg, iters) = golden_section(|a| -ll(&make(a)), lo, hi, 1e-5, 100);
            let (a, v) = if -neg > best.1 + 1e-12 * best.1.abs().max(1.0) {
                (a, -neg)
            } else {
                best
            };
            Ok(MleCalibration {
                calibration: make(a),
                mean_log_likelihood: v,
                iterations: 100 + iters,
            })
        }
        CalibrationFamily::FloorSlope { knee } => {
            let make = |p: &[f64]| Calibration::PiecewiseLinear {
                floor: p[0],
                slope: p[1],
                intercept: (1.0 - p[1]) * knee,
            };
            let r = nelder_mead(
                |p| -ll(&make(p)),
                &[0.15, 0.15],
                &[0.1, 0.2],
                &[1e-3, 0.0],
                &[1.0, 1.0],
                1e-9,
                400,
            );
            if !r.converged || !r.value.is_finite() {
                return Err(HcrError::FitFailure {
                    what: "piecewise calibration",
                    iterations: r.iterations,
                    best: r.x,
                });
            }
            Ok(MleCalibration {
                calibration: make(&r.x),
                mean_log_likelihood: -r.value,
                iterations: r.iterations,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::{build_windows, estimate_coefficients, IndexFilter};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn poly(b: Vec<f64>, basis: &OrthoBasis) -> PredictedDensity1D {
        PredictedDensity1D::from_coefficients(b, basis).unwrap()
    }

    #[test]
    fn trivial_tensor_gives_uniform() {
        let basis = OrthoBasis::new(3).unwrap();
        let t = CoefficientTensor::from_entries(&[3, 3, 3], [(vec![0, 0, 0], 1.0)], 10).unwrap();
        let p = condition(&t, &basis, &[0.2, 0.9]).unwrap();
        assert_eq!(p.coeffs, vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(p.raw(0.37), 1.0);
    }

    #[test]
    fn independent_product_returns_marginal() {
        let basis = OrthoBasis::new(2).unwrap();
        // ρ(x1, x2) = (1 + 0.3 f1(x1) - 0.1 f2(x1)) · (1 + 0.2 f1(x2))
        let t = CoefficientTensor::from_entries(
            &[2, 2],
            [
                (vec![0, 0], 1.0),
                (vec![1, 0], 0.3),
                (vec![2, 0], -0.1),
                (vec![0, 1], 0.2),
                (vec![1, 1], 0.06),
                (vec![2, 1], -0.02),
            ],
            1,
        )
        .unwrap();
        let p = condition(&t, &basis, &[0.81]).unwrap();
        assert!((p.coeffs[1] - 0.3).abs() < 1e-14 && (p.coeffs[2] + 0.1).abs() < 1e-14);
    }

    #[test]
    fn degenerate_context_detected() {
        let basis = OrthoBasis::new(1).unwrap();
        // b0(ctx) = 1 + 0.9 f1(ctx) < 0 near ctx = 0
        let t = CoefficientTensor::from_entries(&[1, 1], [(vec![0, 0], 1.0), (vec![0, 1], 0.9)], 1)
            .unwrap();
        assert!(matches!(
            condition(&t, &basis, &[0.0]),
            Err(HcrError::DegenerateContext { .. })
        ));
        let p = condition_or_uniform(&t, &basis, &[0.0]).unwrap();
        assert!(p.uniform_fallback);
        assert!(matches!(
            condition(&t, &basis, &[0.1, 0.2]),
            Err(HcrError::Shape(_))
        ));
    }

    #[test]
    fn dense_and_sparse_conditioning_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..400).map(|_| rng.random()).collect();
        let w = build_windows(&x, 3).unwrap();
        let basis = OrthoBasis::new(3).unwrap();
        let dense = estimate_coefficients(&w, &basis, &[3, 2, 3], &IndexFilter::All).unwrap();
        let sparse = crate::estimate::prune(&dense, 0.0).unwrap();
        let ctx = [0.3, 0.77];
        let a = condition_raw(&dense, &basis, &ctx).unwrap();
        let b = condition_raw(&sparse, &basis, &ctx).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-13);
        }
    }

    #[test]
    fn calibration_formulas() {
        let cal = Calibration::default();
        assert_eq!(cal.apply(-0.5), 0.15);
        assert!((cal.apply(10.0) - 3.2).abs() < 1e-15);
        assert_eq!(cal.apply(1.0), 1.0);
        let basis = OrthoBasis::new(2).unwrap();
        let uniform = poly(vec![1.0], &basis);
        for c in [cal, Calibration::Clamp { floor: 0.2 }, Calibration::None] {
            assert!((uniform.density_at(0.3, &c) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn calibrated_integral_matches_fine_quadrature() {
        let basis = OrthoBasis::new(5).unwrap();
        let p = poly(vec![1.0, 0.9, 0.6, -0.4, 0.3, 0.5], &basis);
        assert!((0..100).any(|i| p.raw(i as f64 / 100.0) < 0.0));
        for cal in [
            Calibration::default(),
            Calibration::Clamp { floor: 0.2 },
            Calibration::Empirical {
                z: vec![-1.0, 0.0, 1.0, 2.5],
                phi: vec![0.1, 0.2, 1.0, 2.0],
            },
        ] {
            let c = p.calibrated(&cal);
            let steps = 200_000;
            let fine: f64 = (0..steps)
                .map(|i| c.density((i as f64 + 0.5) / steps as f64))
                .sum::<f64>()
                / steps as f64;
            assert!((fine - 1.0).abs() < 1e-6, "{cal:?}: {fine}");
        }
    }

    #[test]
    fn calibrated_cdf_matches_riemann_sum() {
        let basis = OrthoBasis::new(4).unwrap();
        let p = poly(vec![1.0, 0.9, -0.6, 0.4, 0.5], &basis);
        for cal in [Calibration::None, Calibration::default()] {
            let c = p.calibrated(&cal);
            assert!((c.cdf(1.0) - 1.0).abs() < 1e-12);
            assert_eq!(c.cdf(0.0), 0.0);
            let steps = 100_000;
            let x = 0.37;
            let h = x / steps as f64;
            let riemann: f64 = (0..steps)
                .map(|i| c.density((i as f64 + 0.5) * h))
                .sum::<f64>()
                * h;
            assert!((c.cdf(x) - riemann).abs() < 1e-7, "{cal:?}");
        }
    }

    #[test]
    fn pava_is_monotone_and_preserves_mean() {
        let y = [3.0, 1.0, 2.0, 0.5, 4.0];
        let w = [1.0, 2.0, 1.0, 1.0, 1.0];
        let fit = isotonic_regression(&y, &w);
        assert!(fit.windows(2).all(|p| p[0] <= p[1]));
        let m1: f64 = y.iter().zip(&w).map(|(a, b)| a * b).sum();
        let m2: f64 = fit.iter().zip(&w).map(|(a, b)| a * b).sum();
        assert!((m1 - m2).abs() < 1e-12);
    }

    #[test]
    fn empirical_calibration_constant_predictions() {
        let basis = OrthoBasis::new(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let preds: Vec<_> = (0..500).map(|_| poly(vec![1.0], &basis)).collect();
        let actual: Vec<f64> = (0..500).map(|_| rng.random()).collect();
        let cal = calibrate_empirical(&preds, &actual, 1000).unwrap();
        match &cal {
            Calibration::Empirical { phi, .. } => {
                assert!(phi.iter().all(|&v| (v - 1.0).abs() < 1e-12))
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            calibrate_empirical(&preds[..50], &actual[..50], 1000),
            Err(HcrError::InsufficientData { .. })
        ));
    }

    #[test]
    fn empirical_calibration_detects_overconfidence() {
        // Truth: x ~ ρ(x) = 1 + c·f1(x). The predictor claims 1 + 2c·f1(x),
        // so every predicted value above 1 is twice as far from 1 as the
        // truth; φ(z) = 1 + (z - 1)/2 there, slope 1/2.
        let basis = OrthoBasis::new(1).unwrap();
        let c = 0.25;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let truth = |x: f64| 1.0 + c * 3f64.sqrt() * (2.0 * x - 1.0);
        let mut actual = Vec::new();
        while actual.len() < 20_000 {
            let x: f64 = rng.random();
            if rng.random::<f64>() * 1.5 < truth(x) {
                actual.push(x);
            }
        }
        let preds: Vec<_> = actual
            .iter()
            .map(|_| poly(vec![1.0, 2.0 * c], &basis))
            .collect();
        let cal = calibrate_empirical(&preds, &actual, 200).unwrap();
        let (z1, z2) = (1.2, 1.7);
        let slope = (cal.apply(z2) - cal.apply(z1)) / (z2 - z1);
        assert!(slope < 0.75, "slope {slope}");
        assert!((slope - 0.5).abs() < 0.1, "slope {slope}");
    }

    fn negative_toy(n: usize) -> (Vec<PredictedDensity1D>, Vec<f64>) {
        // Predictions 1 + 1.2·f1: negative below x ≈ 0.26. The truth puts
        // 10% of the mass there, uniformly.
        let basis = OrthoBasis::new(1).unwrap();
        let p = poly(vec![1.0, 1.2], &basis);
        let cut = 0.5 - 1.0 / (2.0 * 1.2 * 3f64.sqrt());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let actual: Vec<f64> = (0..n)
            .map(|i| {
                if i % 10 == 0 {
                    rng.random::<f64>() * cut
                } else {
                    cut + rng.random::<f64>() * (1.0 - cut)
                }
            })
            .collect();
        (vec![p; n], actual)
    }

    #[test]
    fn mle_floor_inactive_returns_smallest_grid_value() {
        let basis = OrthoBasis::new(1).unwrap();
        // 1 + 0.25·f1 ≥ 0.56 everywhere and ≥ 1 on [0.5, 1], where all the
        // data sits: floors up to 0.56 change nothing, larger ones only
        // inflate the normalizer.
        let p = poly(vec![1.0, 0.25], &basis);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let actual: Vec<f64> = (0..400).map(|_| 0.5 + 0.5 * rng.random::<f64>()).collect();
        let fit = fit_calibration_mle(&vec![p; 400], &actual, CalibrationFamily::Floor).unwrap();
        assert_eq!(fit.calibration, Calibration::Clamp { floor: 0.01 });
    }

    #[test]
    fn mle_floor_positive_when_mass_falls_below_zero() {
        let (preds, actual) = negative_toy(2000);
        assert!(
            calibration_log_likelihood(&preds, &actual, &Calibration::Clamp { floor: 1e-300 })
                < -50.0
        );
        let fit = fit_calibration_mle(&preds, &actual, CalibrationFamily::Floor).unwrap();
        match fit.calibration {
            Calibration::Clamp { floor } => assert!(floor > 0.01, "floor {floor}"),
            ref other => panic!("{other:?}"),
        }
        let slope =
            fit_calibration_mle(&preds, &actual, CalibrationFamily::FloorSlope { knee: 2.0 })
                .unwrap();
        assert!(slope.mean_log_likelihood >= fit.mean_log_likelihood - 1e-3);
    }
}
