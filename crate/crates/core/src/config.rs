//! Declarative pipeline configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basis::MAX_DEGREE;
use crate::error::{HcrError, Result};
use crate::estimate::IndexFilter;
use crate::eval::ArchForm;
use crate::ingest::Selector;
use crate::marginal::{EpdFitConfig, Family};
use crate::predict::{Calibration, CalibrationFamily};

/// What the input column holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    /// Levels; modelled through their log returns.
    #[default]
    Prices,
    /// Used as is.
    Returns,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub path: Option<PathBuf>,
    /// Column name or 0-based index for single-series runs.
    pub column: Option<String>,
    /// Columns of the panel for cross-series analysis; empty means all
    /// numeric columns.
    pub columns: Vec<String>,
    pub kind: InputKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarginalConfig {
    pub family: Family,
    /// Replace the series by residuals of a linear predictor on this many
    /// lags before fitting the marginal.
    pub linear_lags: usize,
    /// Search interval for the EPD shape `kappa`.
    pub kappa_range: [f64; 2],
}

impl Default for MarginalConfig {
    fn default() -> Self {
        let epd = EpdFitConfig::default();
        MarginalConfig {
            family: Family::Laplace,
            linear_lags: 0,
            kappa_range: [epd.kappa_min, epd.kappa_max],
        }
    }
}

impl MarginalConfig {
    pub fn epd(&self) -> EpdFitConfig {
        EpdFitConfig {
            kappa_min: self.kappa_range[0],
            kappa_max: self.kappa_range[1],
            ..EpdFitConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Window length: current value plus `d - 1` context values.
    pub d: usize,
    /// Degree used for every coordinate unless `degrees` is given.
    pub m: usize,
    pub degrees: Option<Vec<usize>>,
    /// `all`, `pairwise` or `total:<D>`.
    pub filter: String,
    /// Pruning threshold in units of `1/sqrt(n)`; 0 keeps everything.
    pub prune: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 4,
            m: 4,
            degrees: None,
            filter: "all".into(),
            prune: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn degrees(&self) -> Vec<usize> {
        self.degrees.clone().unwrap_or_else(|| vec![self.m; self.d])
    }

    pub fn index_filter(&self) -> Result<IndexFilter> {
        match self.filter.as_str() {
            "all" => Ok(IndexFilter::All),
            "pairwise" => Ok(IndexFilter::Pairwise),
            other => match other.strip_prefix("total:").map(str::parse::<usize>) {
                Some(Ok(d)) => Ok(IndexFilter::TotalDegree(d)),
                _ => Err(HcrError::Config(format!("unknown index filter {other:?}"))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    /// Fixed piecewise-linear map with the parameters below.
    #[default]
    Piecewise,
    None,
    Clamp,
    Empirical,
    MleFloor,
    MleFloorSlope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub mode: CalibrationMode,
    pub floor: f64,
    pub slope: f64,
    pub intercept: f64,
    /// Knee of the two-parameter fitted family.
    pub knee: f64,
    /// Lattice size for the empirical curve.
    pub grid: usize,
    /// Fraction of the training windows, taken from the start, on which
    /// fitted calibrations are estimated; 0 fits on all of them.
    pub holdout: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            mode: CalibrationMode::Piecewise,
            floor: 0.15,
            slope: 0.15,
            intercept: 1.7,
            knee: 2.0,
            grid: 1000,
            holdout: 0.0,
        }
    }
}

impl CalibrationConfig {
    /// The fixed calibration for non-fitted modes.
    pub fn fixed(&self) -> Option<Calibration> {
        match self.mode {
            CalibrationMode::Piecewise => Some(Calibration::PiecewiseLinear {
                floor: self.floor,
                slope: self.slope,
                intercept: self.intercept,
            }),
            CalibrationMode::None => Some(Calibration::None),
            CalibrationMode::Clamp => Some(Calibration::Clamp { floor: self.floor }),
            _ => None,
        }
    }

    pub fn family(&self) -> Option<CalibrationFamily> {
        match self.mode {
            CalibrationMode::MleFloor => Some(CalibrationFamily::Floor),
            CalibrationMode::MleFloorSlope => {
                Some(CalibrationFamily::FloorSlope { knee: self.knee })
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptiveConfig {
    pub lambda: f64,
    pub d: usize,
    pub m: usize,
    pub stride: usize,
    pub warm_start: usize,
    /// Degree in time of the trend tensor; 0 skips it.
    pub time_degree: usize,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig {
            lambda: 0.999,
            d: 1,
            m: 4,
            stride: 100,
            warm_start: 0,
            time_degree: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossdepsConfig {
    pub family: Family,
    pub pairs: Vec<[usize; 2]>,
    pub trend: bool,
    /// Number of covariance eigenvectors reported.
    pub pca: usize,
}

impl Default for CrossdepsConfig {
    fn default() -> Self {
        CrossdepsConfig {
            family: Family::Laplace,
            pairs: vec![[1, 1], [2, 2], [1, 2]],
            trend: true,
            pca: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Also score the plain Gaussian, Laplace and EPD marginals.
    pub baselines: bool,
    pub arch: bool,
    pub arch_form: ArchForm,
    /// Number of randomly chosen windows whose predicted densities are
    /// written out in full.
    pub samples: usize,
    /// Leading fraction of the returns that every model is fitted on; the
    /// rest is scored. 0 fits and scores the full sample.
    pub train_fraction: f64,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            baselines: true,
            arch: true,
            arch_form: ArchForm::Variance,
            samples: 10,
            train_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: InputConfig,
    pub marginal: MarginalConfig,
    pub model: ModelConfig,
    pub calibration: CalibrationConfig,
    pub adaptive: Option<AdaptiveConfig>,
    pub crossdeps: Option<CrossdepsConfig>,
    pub evaluate: EvaluateConfig,
    pub out: Option<PathBuf>,
    pub seed: u64,
    /// Worker threads; 0 lets the runtime decide.
    pub threads: usize,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HcrError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HcrError::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        // relative input paths are relative to the config file
        if let (Some(input), Some(dir)) = (cfg.input.path.as_mut(), path.parent()) {
            if input.is_relative() {
                *input = dir.join(&*input);
            }
        }
        Ok(cfg)
    }

    pub fn selector(&self) -> Option<Selector> {
        self.input.column.as_deref().map(Selector::parse)
    }

    pub fn panel_selectors(&self) -> Vec<Selector> {
        self.input
            .columns
            .iter()
            .map(|c| Selector::parse(c))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HcrError::Config(m));
        let [lo, hi] = self.marginal.kappa_range;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return bad(format!(
                "marginal.kappa_range [{lo}, {hi}] must satisfy 0 < min < max"
            ));
        }
        let m = &self.model;
        if m.d == 0 {
            return bad("model.d must be at least 1".into());
        }
        let degrees = m.degrees();
        if degrees.len() != m.d {
            return bad(format!(
                "model.degrees has {} entries for d = {}",
                degrees.len(),
                m.d
            ));
        }
        if let Some(&deg) = degrees.iter().find(|&&x| x > MAX_DEGREE) {
            return Err(HcrError::DegreeUnsupported {
                degree: deg,
                max: MAX_DEGREE,
            });
        }
        m.index_filter()?;
        if !(m.prune >= 0.0) {
            return bad(format!("model.prune {} must be nonnegative", m.prune));
        }
        let c = &self.calibration;
        if let Some(cal) = c.fixed() {
            cal.validate()?;
        }
        if c.mode == CalibrationMode::Empirical && c.grid < 100 {
            return bad(format!("calibration.grid {} must be at least 100", c.grid));
        }
        if !(0.0..1.0).contains(&c.holdout) {
            return bad(format!("calibration.holdout {} outside [0, 1)", c.holdout));
        }
        let tf = self.evaluate.train_fraction;
        if !(0.0..1.0).contains(&tf) {
            return bad(format!("evaluate.train_fraction {tf} outside [0, 1)"));
        }
        if let Some(a) = &self.adaptive {
            if !(a.lambda > 0.0 && a.lambda < 1.0) {
                return bad(format!("adaptive.lambda {} outside (0, 1)", a.lambda));
            }
            if a.d == 0 || a.m > MAX_DEGREE || a.time_degree > MAX_DEGREE {
                return bad("adaptive.d must be positive and degrees within the basis cap".into());
            }
        }
        if let Some(x) = &self.crossdeps {
            if x.pairs.iter().flatten().any(|&j| j == 0 || j > MAX_DEGREE) {
                return bad("crossdeps.pairs entries must lie in 1..=12".into());
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, leaving out the output directory
    /// and thread count, which do not affect any artifact.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        c.threads = 0;
        let json = serde_json::to_vec(&c).expect("config is plain data");
        hex::encode(Sha256::digest(json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_procedure() {
        let c = PipelineConfig::from_toml_str("").unwrap();
        assert_eq!(c.model.d, 4);
        assert_eq!(c.model.degrees(), vec![4; 4]);
        assert_eq!(c.marginal.family, Family::Laplace);
        assert_eq!(c.calibration.fixed(), Some(Calibration::default()));
        c.validate().unwrap();
    }

    #[test]
    fn parses_sections_and_rejects_unknown_keys() {
        let c = PipelineConfig::from_toml_str(
            r#"
            seed = 7
            [input]
            path = "prices.csv"
            column = "close"
            [model]
            d = 6
            m = 5
            prune = 2.0
            filter = "total:8"
            [calibration]
            mode = "mle_floor"
            [adaptive]
            lambda = 0.9997
            "#,
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert!(c.model.index_filter().unwrap().admits(&[4, 4, 0, 0, 0, 0]));
        assert_eq!(c.calibration.family(), Some(CalibrationFamily::Floor));
        assert_eq!(c.adaptive.as_ref().unwrap().lambda, 0.9997);
        c.validate().unwrap();
        assert!(PipelineConfig::from_toml_str("[model]\nq = 1").is_err());
    }

    #[test]
    fn validation_errors() {
        let mut c = PipelineConfig::default();
        c.model.m = 13;
        assert_eq!(c.validate().unwrap_err().exit_code(), 2);
        let c = PipelineConfig::from_toml_str("[marginal]\nkappa_range = [2.0, 1.0]\n").unwrap();
        assert!(c.validate().is_err());
        let c = PipelineConfig::from_toml_str(
            "[marginal]\nfamily = \"epd\"\nkappa_range = [0.5, 3.0]\n",
        )
        .unwrap();
        assert_eq!(c.marginal.epd().kappa_max, 3.0);
        let c = PipelineConfig {
            adaptive: Some(AdaptiveConfig {
                lambda: 1.5,
                ..Default::default()
            }),
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::default();
        c.model.filter = "triples".into();
        assert!(c.validate().is_err());
        let c = PipelineConfig::from_toml_str("[evaluate]\ntrain_fraction = 1.0\n").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.out = Some("elsewhere".into());
        b.threads = 3;
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
