//! Coefficients for non-stationary series: exponentially decaying online
//! averages, and polynomial trends with time as an extra coordinate.

use serde::Serialize;

use crate::basis::OrthoBasis;
use crate::error::{HcrError, Result};
use crate::estimate::{
    clamp_unit, dense_products, estimate_coefficients, CoefficientTensor, IndexFilter, IndexLayout,
    WindowSet, DENSE_LIMIT,
};
use crate::predict::{condition_dense_or_uniform, PredictedDensity1D};

/// Learning rates used as presets; effective windows of about 1000 and 3333.
pub const LAMBDA_PRESETS: [f64; 2] = [0.999, 0.9997];

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(HcrError::Config(format!(
            "learning rate {lambda} outside (0, 1)"
        )));
    }
    Ok(())
}

/// Running coefficients `a ← λ a + (1 - λ) f(x)` over a dense index layout.
#[derive(Debug, Clone)]
pub struct AdaptiveState {
    lambda: f64,
    step: usize,
    warm: bool,
    layout: IndexLayout,
    coeffs: Vec<f64>,
    scratch: Vec<f64>,
    products: Vec<f64>,
}

impl AdaptiveState {
    /// Zero start.
    pub fn new(lambda: f64, degrees: &[usize]) -> Result<Self> {
        check_lambda(lambda)?;
        let layout = IndexLayout::new(degrees)?;
        if layout.size() > DENSE_LIMIT {
            return Err(HcrError::Config(format!(
                "adaptive layout of {} coefficients exceeds {DENSE_LIMIT}",
                layout.size()
            )));
        }
        let size = layout.size();
        Ok(AdaptiveState {
            lambda,
            step: 0,
            warm: false,
            layout,
            coeffs: vec![0.0; size],
            scratch: Vec::new(),
            products: vec![0.0; size],
        })
    }

    /// Starts from previously estimated coefficients instead of zero.
    pub fn warm_start(lambda: f64, prior: &CoefficientTensor) -> Result<Self> {
        let mut state = Self::new(lambda, prior.degrees())?;
        for (k, a) in prior.entries_linear() {
            state.coeffs[k] = a;
        }
        state.step = prior.sample_count();
        state.warm = true;
        Ok(state)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn layout(&self) -> &IndexLayout {
        &self.layout
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn get(&self, j: &[usize]) -> Result<f64> {
        Ok(self.coeffs[self.layout.linear(j)?])
    }

    /// True until the accumulated weight `1 - λ^t` reaches `1 - 1/e`, i.e.
    /// for the first `1/(1 - λ)` steps of a zero start.
    pub fn is_burn_in(&self) -> bool {
        !self.warm && self.lambda.powf(self.step as f64) > (-1.0f64).exp()
    }

    pub fn to_tensor(&self) -> Result<CoefficientTensor> {
        CoefficientTensor::from_dense(self.layout.degrees(), self.coeffs.clone(), self.step)
    }

    /// One step of the recursion with the window `(x_t, x_{t-1}, ...)`.
    pub fn update(&mut self, basis: &OrthoBasis, window: &[f64]) -> Result<()> {
        if window.len() != self.layout.d() {
            return Err(HcrError::Shape(format!(
                "window of length {} for dimension {}",
                window.len(),
                self.layout.d()
            )));
        }
        if let Some(&m) = self
            .layout
            .degrees()
            .iter()
            .find(|&&m| m > basis.max_degree())
        {
            return Err(HcrError::DegreeUnsupported {
                degree: m,
                max: basis.max_degree(),
            });
        }
        let row: Vec<f64> = window.iter().map(|&x| clamp_unit(x)).collect();
        dense_products(
            basis,
            &self.layout,
            &row,
            &mut self.scratch,
            &mut self.products,
        );
        let (l, w) = (self.lambda, 1.0 - self.lambda);
        for (a, f) in self.coeffs.iter_mut().zip(&self.products) {
            *a = l * *a + w * f;
        }
        self.step += 1;
        Ok(())
    }

    /// Conditional density of the first coordinate given `context`, from the
    /// current coefficients.
    pub fn predict(&self, basis: &OrthoBasis, context: &[f64]) -> Result<PredictedDensity1D> {
        if context.len() + 1 != self.layout.d() {
            return Err(HcrError::Shape(format!(
                "context of length {} for dimension {}",
                context.len(),
                self.layout.d()
            )));
        }
        condition_dense_or_uniform(self.layout.degrees(), &self.coeffs, basis, context)
    }
}

/// Functional form of [`AdaptiveState::update`].
pub fn adaptive_update(
    mut state: AdaptiveState,
    window: &[f64],
    basis: &OrthoBasis,
) -> Result<AdaptiveState> {
    state.update(basis, window)?;
    Ok(state)
}

#[derive(Debug, Clone)]
pub struct AdaptiveOptions {
    pub lambda: f64,
    /// Keep one snapshot every `stride` steps (and the last).
    pub stride: usize,
    /// Multi-indices recorded in the snapshots. Empty means the first four
    /// nonconstant indices.
    pub track: Vec<Vec<usize>>,
    /// Estimate a prior from this many leading windows and start there;
    /// predictions then begin after them.
    pub warm_start: usize,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        AdaptiveOptions {
            lambda: LAMBDA_PRESETS[0],
            stride: 100,
            track: Vec::new(),
            warm_start: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Snapshot {
    /// Number of updates applied.
    pub t: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AdaptiveRun {
    pub tracked: Vec<Vec<usize>>,
    pub snapshots: Vec<Snapshot>,
    /// Window index of each prediction.
    pub times: Vec<usize>,
    /// Prediction for each window, made before that window's update.
    pub predictions: Vec<PredictedDensity1D>,
    pub actual: Vec<f64>,
    pub burn_in: Vec<bool>,
    pub fallbacks: usize,
    pub final_state: AdaptiveState,
}

/// Streams the windows of `x` through the recursion. Each window's current
/// value is predicted from coefficients that have only seen earlier windows.
pub fn run_adaptive(
    x: &[f64],
    d: usize,
    degrees: &[usize],
    basis: &OrthoBasis,
    options: &AdaptiveOptions,
) -> Result<AdaptiveRun> {
    if x.len() <= d {
        return Err(HcrError::InsufficientData {
            needed: d + 1,
            got: x.len(),
        });
    }
    if degrees.len() != d {
        return Err(HcrError::Shape(format!(
            "{} degrees for dimension {d}",
            degrees.len()
        )));
    }
    let windows = crate::estimate::build_windows(x, d)?;
    let n = windows.len();
    let warm = options.warm_start.min(n);
    let mut state = if warm > 0 {
        let prior_rows: Vec<Vec<f64>> = (0..warm).map(|t| windows.row(t).to_vec()).collect();
        let prior = estimate_coefficients(
            &WindowSet::from_rows(d, &prior_rows)?,
            basis,
            degrees,
            &IndexFilter::All,
        )?;
        AdaptiveState::warm_start(options.lambda, &prior)?
    } else {
        AdaptiveState::new(options.lambda, degrees)?
    };
    let layout = state.layout().clone();
    let tracked: Vec<Vec<usize>> = if options.track.is_empty() {
        (1..layout.size().min(5)).map(|k| layout.multi(k)).collect()
    } else {
        options.track.clone()
    };
    let tracked_linear: Vec<usize> = tracked
        .iter()
        .map(|j| layout.linear(j))
        .collect::<Result<_>>()?;
    let stride = options.stride.max(1);

    let mut run = AdaptiveRun {
        tracked,
        snapshots: Vec::new(),
        times: Vec::with_capacity(n - warm),
        predictions: Vec::with_capacity(n - warm),
        actual: Vec::with_capacity(n - warm),
        burn_in: Vec::with_capacity(n - warm),
        fallbacks: 0,
        final_state: state.clone(),
    };
    let snap = |s: &AdaptiveState| Snapshot {
        t: s.step(),
        values: tracked_linear
            .iter()
            .map(|&k| s.coefficients()[k])
            .collect(),
    };
    for t in warm..n {
        let row = windows.row(t);
        let p = state.predict(basis, &row[1..])?;
        run.fallbacks += p.uniform_fallback as usize;
        run.times.push(t);
        run.burn_in.push(state.is_burn_in());
        run.predictions.push(p);
        run.actual.push(row[0]);
        state.update(basis, row)?;
        if (t + 1 - warm) % stride == 0 || t + 1 == n {
            run.snapshots.push(snap(&state));
        }
    }
    run.final_state = state;
    Ok(run)
}

/// Coefficients over `(time, x_t, x_{t-1}, ...)`, time first.
#[derive(Debug, Clone)]
pub struct TrendTensor {
    pub tensor: CoefficientTensor,
}

impl TrendTensor {
    pub fn time_degree(&self) -> usize {
        self.tensor.degrees()[0]
    }

    /// Coefficients at normalized time `s`:
    /// `a_j(s) = Σ_τ a_(τ, j) f_τ(s)`. Values of `s` outside `[0, 1]`
    /// extrapolate the polynomial and log a warning.
    pub fn at_time(&self, s: f64, basis: &OrthoBasis) -> Result<CoefficientTensor> {
        if !(0.0..=1.0).contains(&s) {
            log::warn!("time trend evaluated at {s}, outside the fitted range [0, 1]");
        }
        let degrees = self.tensor.degrees();
        let inner = &degrees[1..];
        let m0 = degrees[0];
        if m0 > basis.max_degree() {
            return Err(HcrError::DegreeUnsupported {
                degree: m0,
                max: basis.max_degree(),
            });
        }
        let ft: Vec<f64> = (0..=m0).map(|tau| basis.eval_one(tau, s)).collect();
        let inner_layout = IndexLayout::new(inner)?;
        let block = inner_layout.size();
        let mut out = vec![0.0; block];
        for (k, a) in self.tensor.entries_linear() {
            out[k % block] += a * ft[k / block];
        }
        CoefficientTensor::from_dense(inner, out, self.tensor.sample_count())
    }
}

/// Plain coefficient estimation on windows augmented with the normalized
/// time `(t + 1/2)/n` as the leading coordinate.
pub fn fit_time_trend(
    windows: &WindowSet,
    time_degree: usize,
    degrees: &[usize],
    basis: &OrthoBasis,
    filter: &IndexFilter,
) -> Result<TrendTensor> {
    if time_degree > basis.max_degree() {
        return Err(HcrError::DegreeUnsupported {
            degree: time_degree,
            max: basis.max_degree(),
        });
    }
    let n = windows.len() as f64;
    let augmented = windows.with_leading_coordinate(|t| (t as f64 + 0.5) / n);
    let mut all = Vec::with_capacity(degrees.len() + 1);
    all.push(time_degree);
    all.extend_from_slice(degrees);
    let filter = match filter {
        IndexFilter::All => IndexFilter::All,
        other => {
            // apply the filter to the data coordinates only
            let inner = other.clone();
            IndexFilter::Custom(std::sync::Arc::new(move |j: &[usize]| {
                inner.admits(&j[1..])
            }))
        }
    };
    Ok(TrendTensor {
        tensor: estimate_coefficients(&augmented, basis, &all, &filter)?,
    })
}
