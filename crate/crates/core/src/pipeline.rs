//! End-to-end runs: ingest, normalize, estimate, predict, calibrate,
//! evaluate, plus the adaptive and cross-series analyses. Every artifact is
//! recorded with its hash in `manifest.json`.

use std::path::{Path, PathBuf};

use rand::{seq::index::sample, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::adaptive::{fit_time_trend, run_adaptive, AdaptiveOptions};
use crate::basis::OrthoBasis;
use crate::config::{InputKind, PipelineConfig};
use crate::crossdeps::{
    covariance_pca, eigendecompose, normalize_panel, pair_coeff_matrix, pair_trend_matrix,
    PairCoeffMatrix, PanelFrame,
};
use crate::error::{HcrError, Result};
use crate::estimate::{
    build_windows, estimate_coefficients, noise_sigma, prune, CoefficientTensor,
};
use crate::eval::{evaluate, fit_arch01, fit_linear_predictor, EvalReport};
use crate::ingest::{ingest_panel, ingest_series};
use crate::marginal::{fit_with, log_returns, normalize, Family, MarginalModel, UnitDensity};
use crate::predict::{
    calibrate_empirical, fit_calibration_mle, predict_windows, Calibration, PredictionBatch,
};

/// How far a run goes; each stage includes the ones before it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    FitMarginal,
    Normalize,
    Estimate,
    Predict,
    Calibrate,
    Evaluate,
    Adapt,
    Crossdeps,
    Run,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub stage: Stage,
    pub config_hash: String,
    pub seed: u64,
    pub input: Option<FileHash>,
    pub outputs: Vec<FileHash>,
}

pub const MANIFEST: &str = "manifest.json";

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| HcrError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

struct Artifacts {
    dir: PathBuf,
    files: Vec<FileHash>,
}

impl Artifacts {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| HcrError::io(dir, e))?;
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| HcrError::io(&path, e))?;
        log::info!("wrote {}", path.display());
        self.files.push(FileHash {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    fn csv(
        &mut self,
        name: &str,
        header: &[String],
        rows: impl IntoIterator<Item = Vec<String>>,
    ) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| HcrError::Contract(e.to_string()))?;
        self.write(name, &bytes)
    }
}

fn input_path(cfg: &PipelineConfig) -> Result<&Path> {
    cfg.input
        .path
        .as_deref()
        .ok_or_else(|| HcrError::Config("no input path given".into()))
}

fn to_returns(values: &[f64], kind: InputKind, name: &str) -> Result<Vec<f64>> {
    match kind {
        InputKind::Returns => Ok(values.to_vec()),
        InputKind::Prices => log_returns(&crate::marginal::SeriesFrame::new(name, values.to_vec())),
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// Everything computed for a single series up to a stage.
struct SeriesRun {
    y: Vec<f64>,
    model: MarginalModel,
    x: Vec<f64>,
    /// Models are fitted on `y[..train]`.
    train: usize,
}

impl SeriesRun {
    fn is_split(&self) -> bool {
        self.train < self.y.len()
    }

    /// Windows whose target lies in the fitting range.
    fn train_windows(&self, d: usize) -> usize {
        (self.train + 1).saturating_sub(d)
    }
}

fn series_stage(cfg: &PipelineConfig, art: &mut Artifacts, stage: Stage) -> Result<SeriesRun> {
    let frame = ingest_series(input_path(cfg)?, cfg.selector().as_ref())?;
    let mut y = to_returns(&frame.values, cfg.input.kind, &frame.name)?;
    let mut timestamps = frame.timestamps.map(|ts| ts[ts.len() - y.len()..].to_vec());
    let mut train = match (cfg.evaluate.train_fraction * y.len() as f64).floor() as usize {
        0 => y.len(),
        s => s,
    };
    if cfg.marginal.linear_lags > 0 {
        let k = cfg.marginal.linear_lags;
        let lp = fit_linear_predictor(&y[..train], k)?;
        art.json(
            "linear_predictor.json",
            &json!({ "lags": k, "beta": lp.beta }),
        )?;
        y = lp.residuals_of(&y);
        train -= k;
        timestamps = timestamps.map(|ts| ts[k..].to_vec());
    }
    let model = fit_with(cfg.marginal.family, &y[..train], &cfg.marginal.epd())?;
    art.json(
        "marginal.json",
        &json!({ "model": model, "n": train, "series": frame.name }),
    )?;
    let x = normalize(&y, &model).x;
    if stage >= Stage::Normalize {
        let header: Vec<String> = ["t", "timestamp", "y", "x"].map(String::from).to_vec();
        art.csv(
            "normalized.csv",
            &header,
            (0..y.len()).map(|t| {
                vec![
                    t.to_string(),
                    timestamps
                        .as_ref()
                        .map_or(String::new(), |ts| ts[t].clone()),
                    num(y[t]),
                    num(x[t]),
                ]
            }),
        )?;
    }
    Ok(SeriesRun { y, model, x, train })
}

fn estimate_stage(
    cfg: &PipelineConfig,
    art: &mut Artifacts,
    x: &[f64],
    basis: &OrthoBasis,
) -> Result<CoefficientTensor> {
    let windows = build_windows(x, cfg.model.d)?;
    let degrees = cfg.model.degrees();
    let mut tensor = estimate_coefficients(&windows, basis, &degrees, &cfg.model.index_filter()?)?;
    if cfg.model.prune > 0.0 {
        tensor = prune(&tensor, cfg.model.prune)?;
    }
    art.json("basis.json", &basis.to_json())?;
    let mut t = tensor.to_json();
    t["noise_sigma"] = json!(noise_sigma(windows.len())?.sigma);
    art.json("tensor.json", &t)?;
    Ok(tensor)
}

/// Index of the first window that is scored and the window count. With a
/// train/test split only test targets are scored, otherwise everything
/// after the calibration holdout.
fn scored_range(cfg: &PipelineConfig, run: &SeriesRun, windows: usize) -> (usize, usize) {
    let skip_first = usize::from(cfg.model.d == 1);
    let train = run.train_windows(cfg.model.d);
    let first = if run.is_split() {
        train
    } else {
        (cfg.calibration.holdout * train as f64).floor() as usize
    };
    (skip_first.max(first), windows)
}

/// Fitted on the training windows, or on their leading holdout fraction.
fn fit_calibration(
    cfg: &PipelineConfig,
    batch: &PredictionBatch,
    train: usize,
) -> Result<(Calibration, Option<f64>)> {
    if let Some(cal) = cfg.calibration.fixed() {
        return Ok((cal, None));
    }
    let end = match (cfg.calibration.holdout * train as f64).floor() as usize {
        0 => train,
        h => h,
    };
    let polys = &batch.polys[..end];
    let actual = &batch.actual[..end];
    if let Some(family) = cfg.calibration.family() {
        let fit = fit_calibration_mle(polys, actual, family)?;
        Ok((fit.calibration, Some(fit.mean_log_likelihood)))
    } else {
        Ok((
            calibrate_empirical(polys, actual, cfg.calibration.grid)?,
            None,
        ))
    }
}

fn predict_stage(
    cfg: &PipelineConfig,
    art: &mut Artifacts,
    stage: Stage,
    run: &SeriesRun,
    tensor: &CoefficientTensor,
    basis: &OrthoBasis,
) -> Result<(PredictionBatch, Calibration, Vec<f64>)> {
    let windows = build_windows(&run.x, cfg.model.d)?;
    let batch = predict_windows(tensor, basis, &windows)?;
    if batch.fallbacks > 0 {
        log::warn!(
            "{} of {} contexts had nonpositive mass; predicted uniform",
            batch.fallbacks,
            batch.len()
        );
    }
    let (cal, ll) = fit_calibration(cfg, &batch, run.train_windows(cfg.model.d))?;
    if stage >= Stage::Calibrate {
        art.json(
            "calibration.json",
            &json!({ "calibration": cal, "mean_log_likelihood": ll, "holdout": cfg.calibration.holdout }),
        )?;
    }
    let calibrated = batch.calibrated_at_actual(&cal);
    let raw = batch.raw_at_actual();
    let d = cfg.model.d;
    let mut header = vec!["t".to_string()];
    header.extend((1..d).map(|i| format!("context{i}")));
    header.extend(["actual", "raw_density", "calibrated_density", "fallback"].map(String::from));
    art.csv(
        "predictions.csv",
        &header,
        (0..batch.len()).map(|w| {
            let mut r = vec![(w + d - 1).to_string()];
            r.extend(batch.contexts[w].iter().map(|&c| num(c)));
            r.push(num(batch.actual[w]));
            r.push(num(raw[w]));
            r.push(num(calibrated[w]));
            r.push(u8::from(batch.polys[w].uniform_fallback).to_string());
            r
        }),
    )?;
    if cfg.evaluate.samples > 0 && !batch.is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut picks =
            sample(&mut rng, batch.len(), cfg.evaluate.samples.min(batch.len())).into_vec();
        picks.sort_unstable();
        let header: Vec<String> = ["t", "x", "raw_density", "calibrated_density"]
            .map(String::from)
            .to_vec();
        let rows: Vec<Vec<String>> = picks
            .iter()
            .flat_map(|&w| {
                let c = batch.polys[w].calibrated(&cal);
                (0..=100).map(move |g| {
                    let x = g as f64 / 100.0;
                    vec![
                        (w + d - 1).to_string(),
                        num(x),
                        num(c.poly.raw(x)),
                        num(c.density(x)),
                    ]
                })
            })
            .collect();
        art.csv("samples.csv", &header, rows)?;
    }
    Ok((batch, cal, calibrated))
}

fn evaluate_stage(
    cfg: &PipelineConfig,
    art: &mut Artifacts,
    run: &SeriesRun,
    batch: &PredictionBatch,
    cal: &Calibration,
    unit_densities: &[f64],
) -> Result<()> {
    let d = cfg.model.d;
    let (first, end) = scored_range(cfg, run, batch.len());
    if first >= end {
        return Err(HcrError::InsufficientData {
            needed: first + 1,
            got: end,
        });
    }
    // window w predicts y[w + d - 1]
    let obs: Vec<usize> = (first..end).map(|w| w + d - 1).collect();
    let y_at = |s: usize| run.y[s];
    let mut reports: Vec<EvalReport> = Vec::new();

    let cdf_hcr: Vec<f64> = (first..end)
        .map(|w| batch.polys[w].calibrated(cal).cdf(batch.actual[w]))
        .collect();
    let hcr_unit: Vec<f64> = unit_densities[first..end].to_vec();
    let hcr_y: Vec<f64> = obs
        .iter()
        .zip(&hcr_unit)
        .map(|(&s, &u)| u * run.model.pdf(y_at(s)))
        .collect();
    let model_name = format!("{:?}", run.model.family).to_lowercase();
    reports.push(evaluate(&format!("hcr+{model_name}"), &hcr_y, &cdf_hcr)?);
    reports.push(evaluate("hcr_unit", &hcr_unit, &cdf_hcr)?);

    let marginal_report = |name: &str, m: &MarginalModel| -> Result<EvalReport> {
        let dens: Vec<f64> = obs.iter().map(|&s| m.pdf(y_at(s))).collect();
        let cov: Vec<f64> = obs.iter().map(|&s| m.cdf(y_at(s))).collect();
        evaluate(name, &dens, &cov)
    };
    reports.push(marginal_report(&model_name, &run.model)?);
    if cfg.evaluate.baselines {
        for fam in [Family::Gaussian, Family::Laplace, Family::Epd] {
            if fam != run.model.family {
                let name = format!("{fam:?}").to_lowercase();
                reports.push(marginal_report(
                    &name,
                    &fit_with(fam, &run.y[..run.train], &cfg.marginal.epd())?,
                )?);
            }
        }
    }
    let mut arch_model = None;
    if cfg.evaluate.arch {
        let fit = fit_arch01(&run.y[..run.train], cfg.evaluate.arch_form)?;
        let cov_all = fit.model.normalize(&run.y);
        let dens_all = fit.model.densities(&run.y);
        // dens_all[i] is the prediction of y[i + 1]
        let dens: Vec<f64> = obs.iter().map(|&s| dens_all[s - 1]).collect();
        let cov: Vec<f64> = obs.iter().map(|&s| cov_all[s - 1]).collect();
        reports.push(evaluate("arch01", &dens, &cov)?);
        arch_model = Some(json!({ "model": fit.model, "std_errors": fit.std_errors }));
    }

    let summary: Vec<_> = reports
        .iter()
        .map(|r| {
            json!({
                "model": r.model,
                "n": r.n,
                "mean_log2_density": r.mean_log2_density,
                "ks": r.ks,
                "fraction_below_one": r.fraction_below_one,
            })
        })
        .collect();
    art.json(
        "eval_report.json",
        &json!({
            "models": summary,
            "calibration": cal,
            "fallbacks": batch.fallbacks,
            "scored_from_t": obs[0],
            "train": run.train,
            "arch": arch_model,
        }),
    )?;
    let mut header = vec!["q".to_string()];
    for r in &reports {
        header.push(format!("{}_coverage", r.model));
        header.push(format!("{}_sorted_density", r.model));
    }
    let n = reports[0].n;
    art.csv(
        "eval_curves.csv",
        &header,
        (0..n).map(|i| {
            let mut row = vec![num((i as f64 + 0.5) / n as f64)];
            for r in &reports {
                row.push(num(r.coverage_curve[i]));
                row.push(num(r.sorted_density_curve[i]));
            }
            row
        }),
    )?;
    Ok(())
}

fn adapt_stage(
    cfg: &PipelineConfig,
    art: &mut Artifacts,
    run: &SeriesRun,
    basis: &OrthoBasis,
) -> Result<()> {
    let a = cfg.adaptive.clone().unwrap_or_default();
    let degrees = vec![a.m; a.d];
    let opts = AdaptiveOptions {
        lambda: a.lambda,
        stride: a.stride,
        track: Vec::new(),
        warm_start: a.warm_start,
    };
    let result = run_adaptive(&run.x, a.d, &degrees, basis, &opts)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=a.d).map(|i| format!("j{i}")));
    header.push("a".into());
    let rows: Vec<Vec<String>> = result
        .snapshots
        .iter()
        .flat_map(|s| {
            result.tracked.iter().zip(&s.values).map(move |(j, v)| {
                let mut r = vec![s.t.to_string()];
                r.extend(j.iter().map(usize::to_string));
                r.push(num(*v));
                r
            })
        })
        .collect();
    art.csv("adaptive_snapshots.csv", &header, rows)?;

    let cal = cfg.calibration.fixed().unwrap_or_default();
    let scored: Vec<f64> = result
        .predictions
        .iter()
        .zip(&result.actual)
        .zip(&result.burn_in)
        .filter(|(_, &b)| !b)
        .map(|((p, &x), _)| p.density_at(x, &cal))
        .collect();
    let bits = if scored.is_empty() {
        None
    } else {
        Some(crate::eval::log_likelihood_bits(&scored)?)
    };
    art.json(
        "adaptive_report.json",
        &json!({
            "lambda": a.lambda,
            "d": a.d,
            "m": a.m,
            "predictions": result.predictions.len(),
            "burn_in": result.burn_in.iter().filter(|&&b| b).count(),
            "fallbacks": result.fallbacks,
            "calibration": cal,
            "mean_log2_density_after_burn_in": bits,
        }),
    )?;
    if a.time_degree > 0 {
        let windows = build_windows(&run.x, a.d)?;
        let trend = fit_time_trend(
            &windows,
            a.time_degree,
            &degrees,
            basis,
            &crate::estimate::IndexFilter::All,
        )?;
        art.json("trend_tensor.json", &trend.tensor.to_json())?;
    }
    Ok(())
}

fn matrix_csv(art: &mut Artifacts, name: &str, m: &PairCoeffMatrix) -> Result<()> {
    let mut header = vec![String::new()];
    header.extend(m.names.iter().cloned());
    let k = m.k();
    art.csv(
        name,
        &header,
        (0..k).map(|a| {
            let mut r = vec![m.names[a].clone()];
            r.extend((0..k).map(|b| num(m.get(a, b))));
            r
        }),
    )
}

fn crossdeps_stage(cfg: &PipelineConfig, art: &mut Artifacts, basis: &OrthoBasis) -> Result<()> {
    let x = cfg.crossdeps.clone().unwrap_or_default();
    let raw = ingest_panel(input_path(cfg)?, &cfg.panel_selectors())?;
    let returns: Vec<Vec<f64>> = raw
        .names
        .iter()
        .zip(&raw.series)
        .map(|(n, s)| to_returns(s, cfg.input.kind, n))
        .collect::<Result<_>>()?;
    let returns = PanelFrame::new(raw.names.clone(), returns)?;
    let (normalized, models) = normalize_panel(&returns, x.family)?;
    let mut eigen = serde_json::Map::new();
    for &[j1, j2] in &x.pairs {
        let m = pair_coeff_matrix(&normalized, j1, j2, basis)?;
        matrix_csv(art, &format!("pair_{j1}_{j2}.csv"), &m)?;
        if j1 == j2 {
            eigen.insert(
                format!("{j1}_{j2}"),
                serde_json::to_value(eigendecompose(&m.to_matrix())?)?,
            );
        }
        if x.trend {
            let t = pair_trend_matrix(&normalized, j1, j2, basis)?;
            matrix_csv(art, &format!("pair_trend_{j1}_{j2}.csv"), &t)?;
        }
    }
    art.json("pair_eigen.json", &eigen)?;
    art.json("pca.json", &covariance_pca(&returns, x.pca)?)?;
    art.json(
        "crossdeps.json",
        &json!({
            "names": normalized.names,
            "n": normalized.len(),
            "diagonal_fill": crate::crossdeps::DIAGONAL_FILL,
            "marginals": models,
        }),
    )?;
    Ok(())
}

fn needed_degree(cfg: &PipelineConfig) -> usize {
    let mut m = cfg.model.degrees().into_iter().max().unwrap_or(0);
    if let Some(a) = &cfg.adaptive {
        m = m.max(a.m).max(a.time_degree);
    }
    if let Some(x) = &cfg.crossdeps {
        m = m.max(x.pairs.iter().flatten().copied().max().unwrap_or(1));
    }
    m.max(2)
}

fn manifest_for(cfg: &PipelineConfig, stage: Stage, outputs: Vec<FileHash>) -> Result<Manifest> {
    let input = match &cfg.input.path {
        Some(p) => Some(FileHash {
            path: p.display().to_string(),
            sha256: hash_file(p)?,
        }),
        None => None,
    };
    Ok(Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        stage,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        input,
        outputs,
    })
}

/// True when `out/manifest.json` matches this config, stage and input and
/// every listed output still has its recorded hash.
pub fn is_up_to_date(cfg: &PipelineConfig, stage: Stage, out: &Path) -> Result<bool> {
    let path = out.join(MANIFEST);
    let Ok(bytes) = std::fs::read(&path) else {
        return Ok(false);
    };
    let Ok(old) = serde_json::from_slice::<Manifest>(&bytes) else {
        return Ok(false);
    };
    let fresh = manifest_for(cfg, stage, Vec::new())?;
    if old.stage != stage
        || old.config_hash != fresh.config_hash
        || old.input != fresh.input
        || old.version != fresh.version
    {
        return Ok(false);
    }
    for f in &old.outputs {
        match hash_file(&out.join(&f.path)) {
            Ok(h) if h == f.sha256 => {}
            _ => return Ok(false),
        }
    }
    Ok(true)
}

/// Runs up to `stage` and writes artifacts plus the manifest into `out`.
pub fn run_pipeline(cfg: &PipelineConfig, stage: Stage, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let mut art = Artifacts::new(out)?;
    let basis = OrthoBasis::new(needed_degree(cfg))?;
    match stage {
        Stage::Crossdeps => crossdeps_stage(cfg, &mut art, &basis)?,
        Stage::Adapt => {
            let run = series_stage(cfg, &mut art, Stage::FitMarginal)?;
            adapt_stage(cfg, &mut art, &run, &basis)?;
        }
        _ => {
            let run = series_stage(cfg, &mut art, stage)?;
            if stage >= Stage::Estimate {
                let tensor = estimate_stage(cfg, &mut art, &run.x[..run.train], &basis)?;
                if stage >= Stage::Predict {
                    let (batch, cal, unit) =
                        predict_stage(cfg, &mut art, stage, &run, &tensor, &basis)?;
                    if stage >= Stage::Evaluate {
                        evaluate_stage(cfg, &mut art, &run, &batch, &cal, &unit)?;
                    }
                }
            }
            if stage == Stage::Run {
                if cfg.adaptive.is_some() {
                    adapt_stage(cfg, &mut art, &run, &basis)?;
                }
                if cfg.crossdeps.is_some() {
                    crossdeps_stage(cfg, &mut art, &basis)?;
                }
            }
        }
    }
    let manifest = manifest_for(cfg, stage, art.files.clone())?;
    art.json(MANIFEST, &manifest)?;
    Ok(manifest)
}
