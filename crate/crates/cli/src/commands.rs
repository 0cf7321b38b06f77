//! The subcommands. Each takes its resolved config, writes its outputs and a
//! manifest into the output directory, and returns the manifest path.

use std::path::PathBuf;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use overica::deflation::{deflate, overica, MixingMatrix};
use overica::metrics::{a_error_partial, default_recovery_angle, f_error, perfect_count};
use overica::moments::SampleMatrix;
use overica::par::derive_seed;
use overica::subspace::population_basis;
use overica::synth::{sample_ica, sample_mixing, SamplingMode, SamplingSpec, SourceLaw};
use overica::theorylab::phase_transition;

use crate::cifar::{self, Gray, PATCH_DIM, PATCH_SIDE};
use crate::config::{default_out, EstimatorConfig};
use crate::error::CliError;
use crate::formats::{container_dims, read_columns, read_matrix, write_matrix};
use crate::manifest::{ensure_dir, write_json, Manifest};
use crate::plot;

fn input_missing(command: &str, flag: &str) -> CliError {
    CliError::Input(format!("{command}: --{flag} is required"))
}

fn matrix_ext(format: &str) -> Result<&'static str, CliError> {
    match format {
        "oica" => Ok("oica"),
        "csv" => Ok("csv"),
        other => Err(CliError::Input(format!("unknown format {other:?} (expected oica or csv)"))),
    }
}

fn recovery_theta(deg: Option<f64>) -> Result<f64, CliError> {
    match deg {
        None => Ok(default_recovery_angle()),
        Some(d) if (0.0..=90.0).contains(&d) => Ok(d.to_radians()),
        Some(d) => Err(CliError::Input(format!("recovery_angle_deg must be in [0, 90], got {d}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleConfig {
    pub p: usize,
    pub k: usize,
    pub n: usize,
    pub source: String,
    pub mode: SamplingMode,
    pub coherence_cap: Option<f64>,
    /// `oica` (binary container) or `csv`.
    pub format: String,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            p: 15,
            k: 30,
            n: 10_000,
            source: "uniform".into(),
            mode: SamplingMode::Normal,
            coherence_cap: None,
            format: "oica".into(),
            seed: 0,
            out: default_out(),
        }
    }
}

pub fn sample(cfg: &SampleConfig) -> Result<PathBuf, CliError> {
    let ext = matrix_ext(&cfg.format)?;
    let law = SourceLaw::parse(&cfg.source)?;
    let mut spec = SamplingSpec::new(cfg.p, cfg.k, cfg.mode, cfg.seed);
    spec.coherence_cap = cfg.coherence_cap;
    let d = sample_mixing(&spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1));
    let x = sample_ica(&d, cfg.n, &law, &mut rng)?;
    ensure_dir(&cfg.out)?;
    let mut manifest = Manifest::new("sample", cfg.seed, cfg)?;
    let dpath = cfg.out.join(format!("mixing.{ext}"));
    let xpath = cfg.out.join(format!("samples.{ext}"));
    write_matrix(&dpath, d.matrix())?;
    write_matrix(&xpath, x.data())?;
    manifest.add_output(&dpath);
    manifest.add_output(&xpath);
    manifest.write(&cfg.out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimateConfig {
    /// Sample matrix (p×n); not needed with `population`.
    pub input: Option<PathBuf>,
    /// Latent dimension; defaults to the number of columns of `truth`.
    pub k: Option<usize>,
    /// True mixing matrix, for metrics.
    pub truth: Option<PathBuf>,
    /// Use the exact span of the true atoms instead of Step I.
    pub population: bool,
    pub recovery_angle_deg: Option<f64>,
    pub seed: u64,
    pub out: PathBuf,
    #[serde(flatten)]
    pub estimator: EstimatorConfig,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig {
            input: None,
            k: None,
            truth: None,
            population: false,
            recovery_angle_deg: None,
            seed: 0,
            out: default_out(),
            estimator: EstimatorConfig::default(),
        }
    }
}

/// Error metrics of an estimate against the truth.
pub fn metrics_json(d: &MixingMatrix, e: &MixingMatrix, theta: f64) -> Result<serde_json::Value, CliError> {
    if d.p() != e.p() {
        return Err(CliError::Input(format!(
            "truth has p = {} but the estimate has p = {}",
            d.p(),
            e.p()
        )));
    }
    if e.k() > d.k() {
        return Err(CliError::Input(format!(
            "estimate has {} columns, more than the truth's {}",
            e.k(),
            d.k()
        )));
    }
    let complete = e.k() == d.k();
    let recovered = perfect_count(d, e, theta)?;
    Ok(json!({
        "k": d.k(),
        "estimated_columns": e.k(),
        "f_error": if complete { Some(f_error(d, e, true)?) } else { None },
        "a_error": a_error_partial(d, e)?,
        "recovery_angle_deg": theta.to_degrees(),
        "recovered": recovered,
        "recovery_fraction": recovered as f64 / d.k() as f64,
    }))
}

pub fn estimate(cfg: &EstimateConfig) -> Result<PathBuf, CliError> {
    let theta = recovery_theta(cfg.recovery_angle_deg)?;
    let truth = cfg
        .truth
        .as_deref()
        .map(|p| read_matrix(p).and_then(|m| Ok(MixingMatrix::normalized(m)?)))
        .transpose()?;
    let k = cfg
        .k
        .or(truth.as_ref().map(MixingMatrix::k))
        .ok_or_else(|| input_missing("estimate", "k"))?;
    let ocfg = cfg.estimator.overica(cfg.seed)?;
    let t0 = Instant::now();
    let (mixing, partial, warnings, n) = if cfg.population {
        let d = truth
            .as_ref()
            .ok_or_else(|| CliError::Input("estimate: --population needs --truth".into()))?;
        if k != d.k() {
            return Err(CliError::Input(format!("--population needs k = {} (the truth's columns)", d.k())));
        }
        let basis = population_basis(d)?;
        let mut dcfg = ocfg.deflation.clone();
        dcfg.seed = derive_seed(cfg.seed, 0xDEF1);
        let out = deflate(&basis, k, &ocfg.solver, &dcfg)?;
        if out.atoms.is_empty() {
            return Err(overica::Error::Numerical("no atoms recovered".into()).into());
        }
        (out.mixing()?, out.partial, out.diagnostics.clone(), None)
    } else {
        let path = cfg.input.as_deref().ok_or_else(|| input_missing("estimate", "input"))?;
        let x = SampleMatrix::new(read_matrix(path)?)?;
        if let Some(d) = &truth {
            if d.p() != x.p() {
                return Err(CliError::Input(format!("truth has p = {} but samples have p = {}", d.p(), x.p())));
            }
        }
        let n = x.n();
        let r = overica(&x, k, &ocfg)?;
        (r.mixing, r.partial, r.warnings, Some(n))
    };
    let seconds = t0.elapsed().as_secs_f64();
    ensure_dir(&cfg.out)?;
    let mut manifest = Manifest::new("estimate", cfg.seed, cfg)?;
    let mpath = cfg.out.join("mixing.oica");
    write_matrix(&mpath, mixing.matrix())?;
    manifest.add_output(&mpath);
    let metrics = truth.as_ref().map(|d| metrics_json(d, &mixing, theta)).transpose()?;
    let report = json!({
        "p": mixing.p(),
        "k": k,
        "n": n,
        "population": cfg.population,
        "estimated_columns": mixing.k(),
        "partial": partial,
        "warnings": warnings,
        "metrics": metrics,
    });
    let rpath = cfg.out.join("report.json");
    write_json(&rpath, &report)?;
    manifest.add_output(&rpath);
    // Wall-clock times vary between runs, so they stay out of the manifest.
    write_json(&cfg.out.join("timings.json"), &json!({ "estimate_seconds": seconds }))?;
    manifest.write(&cfg.out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseConfig {
    pub p_values: Vec<usize>,
    pub k_values: Vec<usize>,
    pub n_rep: usize,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        PhaseConfig {
            p_values: vec![8, 10, 12],
            k_values: (5..=60).step_by(5).collect(),
            n_rep: 20,
            seed: 0,
            out: default_out(),
        }
    }
}

pub fn phase(cfg: &PhaseConfig) -> Result<PathBuf, CliError> {
    let grid = phase_transition(&cfg.p_values, &cfg.k_values, cfg.n_rep, cfg.seed)?;
    ensure_dir(&cfg.out)?;
    let mut manifest = Manifest::new("phase", cfg.seed, cfg)?;
    let csv_path = cfg.out.join("phase.csv");
    let file = std::fs::File::create(&csv_path).map_err(|e| CliError::Input(format!("{}: {e}", csv_path.display())))?;
    grid.write_csv(std::io::BufWriter::new(file))?;
    let meta_path = cfg.out.join("phase.json");
    write_json(&meta_path, &grid.metadata())?;
    let svg_path = cfg.out.join("phase.svg");
    std::fs::write(&svg_path, plot::phase_svg(&grid)).map_err(|e| CliError::Input(e.to_string()))?;
    for p in [&csv_path, &meta_path, &svg_path] {
        manifest.add_output(p);
    }
    manifest.write(&cfg.out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    N,
    K,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub sweep: Sweep,
    /// Values of the swept parameter.
    pub values: Vec<usize>,
    pub p: usize,
    /// Latent dimension when sweeping `n`.
    pub k: usize,
    /// Sample size when sweeping `k`.
    pub n: usize,
    pub trials: usize,
    pub source: String,
    pub recovery_angle_deg: Option<f64>,
    pub seed: u64,
    pub out: PathBuf,
    #[serde(flatten)]
    pub estimator: EstimatorConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            sweep: Sweep::N,
            values: (1..=10).map(|i| 1000 * i).collect(),
            p: 15,
            k: 30,
            n: 100_000,
            trials: 3,
            source: "uniform".into(),
            recovery_angle_deg: None,
            seed: 0,
            out: default_out(),
            estimator: EstimatorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub value: usize,
    pub trial: usize,
    pub seconds: f64,
    pub a_error: f64,
    pub recovered: usize,
    pub partial: bool,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Ranks starting at 1, ties averaged.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &t in &idx[i..=j] {
            r[t] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&ranks(x), &ranks(y))
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let (lx, ly): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .unzip();
    if lx.len() < 2 {
        return None;
    }
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn bench(cfg: &BenchConfig) -> Result<PathBuf, CliError> {
    if cfg.values.is_empty() {
        return Err(CliError::Input("bench: the sweep has no values".into()));
    }
    if cfg.trials == 0 {
        return Err(CliError::Input("bench: trials must be at least 1".into()));
    }
    let theta = recovery_theta(cfg.recovery_angle_deg)?;
    let law = SourceLaw::parse(&cfg.source)?;
    let mut rows = Vec::new();
    for &v in &cfg.values {
        let (n, k) = match cfg.sweep {
            Sweep::N => (v, cfg.k),
            Sweep::K => (cfg.n, v),
        };
        for trial in 0..cfg.trials {
            let seed = derive_seed(cfg.seed, trial as u64);
            let d = sample_mixing(&SamplingSpec::new(cfg.p, k, SamplingMode::Normal, seed))?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
            let x = sample_ica(&d, n, &law, &mut rng)?;
            let ocfg = cfg.estimator.overica(seed)?;
            let t0 = Instant::now();
            let r = overica(&x, k, &ocfg)?;
            let seconds = t0.elapsed().as_secs_f64();
            let row = BenchRow {
                value: v,
                trial,
                seconds,
                a_error: a_error_partial(&d, &r.mixing)?,
                recovered: perfect_count(&d, &r.mixing, theta)?,
                partial: r.partial,
            };
            log::info!("{:?}={v} trial {trial}: {seconds:.2}s a-error {:.4}", cfg.sweep, row.a_error);
            rows.push(row);
        }
    }
    let xs: Vec<f64> = cfg.values.iter().map(|&v| v as f64).collect();
    let per_value = |f: fn(&BenchRow) -> f64| -> Vec<f64> {
        cfg.values
            .iter()
            .map(|&v| median(rows.iter().filter(|r| r.value == v).map(f).collect()))
            .collect()
    };
    let med_err = per_value(|r| r.a_error);
    let med_time = per_value(|r| r.seconds);
    let summary = json!({
        "sweep": cfg.sweep,
        "values": cfg.values,
        "median_a_error": med_err,
        "median_seconds": med_time,
        "spearman_a_error": spearman(&xs, &med_err),
        "loglog_slope_seconds": loglog_slope(&xs, &med_time),
    });
    ensure_dir(&cfg.out)?;
    let mut manifest = Manifest::new("bench", cfg.seed, cfg)?;
    let csv_path = cfg.out.join("bench.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| CliError::Input(format!("{}: {e}", csv_path.display())))?;
    for r in &rows {
        w.serialize(r).map_err(anyhow::Error::from)?;
    }
    w.flush().map_err(anyhow::Error::from)?;
    let sum_path = cfg.out.join("bench.json");
    write_json(&sum_path, &summary)?;
    let label = match cfg.sweep {
        Sweep::N => "n",
        Sweep::K => "k",
    };
    let svg = plot::line_svg(
        "median a-error",
        label,
        "a-error",
        &[("a-error", xs.iter().copied().zip(med_err.iter().copied()).collect())],
    );
    let svg_path = cfg.out.join("bench.svg");
    std::fs::write(&svg_path, svg).map_err(|e| CliError::Input(e.to_string()))?;
    for p in [&csv_path, &sum_path, &svg_path] {
        manifest.add_output(p);
    }
    manifest.write(&cfg.out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CifarPatchesConfig {
    /// CIFAR-10 binary batch file.
    pub input: Option<PathBuf>,
    pub gray: Gray,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for CifarPatchesConfig {
    fn default() -> Self {
        CifarPatchesConfig {
            input: None,
            gray: Gray::Luma,
            seed: 0,
            out: default_out(),
        }
    }
}

pub fn cifar_patches(cfg: &CifarPatchesConfig) -> Result<PathBuf, CliError> {
    let input = cfg.input.as_deref().ok_or_else(|| input_missing("cifar-patches", "input"))?;
    cifar::batch_images(input)?;
    ensure_dir(&cfg.out)?;
    let mut manifest = Manifest::new("cifar-patches", cfg.seed, cfg)?;
    let path = cfg.out.join("patches.oica");
    let n = cifar::extract_patches(input, &path, cfg.gray)?;
    log::info!("wrote {n} patches of dimension {PATCH_DIM}");
    manifest.add_output(&path);
    manifest.write(&cfg.out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CifarEstimateConfig {
    /// Patch matrix written by `cifar-patches`.
    pub input: Option<PathBuf>,
    pub k: usize,
    /// Number of patches drawn (without replacement); all when unset.
    pub subsample: Option<usize>,
    /// Components per row in the mosaic image.
    pub mosaic_columns: usize,
    pub seed: u64,
    pub out: PathBuf,
    #[serde(flatten)]
    pub estimator: EstimatorConfig,
}

impl Default for CifarEstimateConfig {
    fn default() -> Self {
        CifarEstimateConfig {
            input: None,
            k: 20,
            subsample: None,
            mosaic_columns: 10,
            seed: 0,
            out: default_out(),
            estimator: EstimatorConfig::default(),
        }
    }
}

/// Flips columns to have a nonnegative inner product with the first.
pub fn sign_align(m: &mut DMatrix<f64>) {
    if m.ncols() == 0 {
        return;
    }
    let first = m.column(0).clone_owned();
    for mut c in m.column_iter_mut().skip(1) {
        if c.dot(&first) < 0.0 {
            c.neg_mut();
        }
    }
}

pub fn cifar_estimate(cfg: &CifarEstimateConfig) -> Result<PathBuf, CliError> {
    let input = cfg.input.as_deref().ok_or_else(|| input_missing("cifar-estimate", "input"))?;
    let (p, n) = container_dims(input)?;
    if p != PATCH_DIM {
        return Err(CliError::Format(format!(
            "{}: patches have dimension {p}, expected {PATCH_DIM}",
            input.display()
        )));
    }
    let m = p * (p + 1) / 2;
    if cfg.k == 0 || cfg.k > m {
        return Err(CliError::Input(format!("k = {} must lie in 1..={m} for {p}-dimensional patches", cfg.k)));
    }
    let data = match cfg.subsample {
        Some(s) if s < n => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x5AB5));
            let mut idx = rand::seq::index::sample(&mut rng, n, s).into_vec();
            idx.sort_unstable();
            read_columns(input, &idx)?
        }
        _ => read_matrix(input)?,
    };
    let x = SampleMatrix::new(data)?;
    let ocfg = cfg.estimator.overica(cfg.seed)?;
    let t0 = Instant::now();
    let r = overica(&x, cfg.k, &ocfg)?;
    let seconds = t0.elapsed().as_secs_f64();
    let mut d = r.mixing.into_matrix();
    sign_align(&mut d);
    ensure_dir(&cfg.out)?;
    let mut manifest = Manifest::new("cifar-estimate", cfg.seed, cfg)?;
    let mpath = cfg.out.join("mixing.oica");
    write_matrix(&mpath, &d)?;
    let img = cfg.out.join("components.pgm");
    std::fs::write(&img, plot::component_mosaic(&d, PATCH_SIDE, cfg.mosaic_columns))
        .map_err(|e| CliError::Input(format!("{}: {e}", img.display())))?;
    let rpath = cfg.out.join("report.json");
    write_json(
        &rpath,
        &json!({
            "p": p,
            "n": x.n(),
            "k": cfg.k,
            "estimated_columns": d.ncols(),
            "partial": r.partial,
            "warnings": r.warnings,
        }),
    )?;
    write_json(&cfg.out.join("timings.json"), &json!({ "estimate_seconds": seconds }))?;
    for path in [&mpath, &img, &rpath] {
        manifest.add_output(path);
    }
    manifest.write(&cfg.out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub truth: Option<PathBuf>,
    pub estimate: Option<PathBuf>,
    pub recovery_angle_deg: Option<f64>,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            truth: None,
            estimate: None,
            recovery_angle_deg: None,
            seed: 0,
            out: default_out(),
        }
    }
}

pub fn eval(cfg: &EvalConfig) -> Result<(PathBuf, serde_json::Value), CliError> {
    let truth = cfg.truth.as_deref().ok_or_else(|| input_missing("eval", "truth"))?;
    let est = cfg.estimate.as_deref().ok_or_else(|| input_missing("eval", "estimate"))?;
    let d = MixingMatrix::normalized(read_matrix(truth)?)?;
    let e = MixingMatrix::normalized(read_matrix(est)?)?;
    let metrics = metrics_json(&d, &e, recovery_theta(cfg.recovery_angle_deg)?)?;
    ensure_dir(&cfg.out)?;
    let mut manifest = Manifest::new("eval", cfg.seed, cfg)?;
    let path = cfg.out.join("eval.json");
    write_json(&path, &metrics)?;
    manifest.add_output(&path);
    Ok((manifest.write(&cfg.out)?, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_and_slope() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(spearman(&x, &[4.0, 3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&x, &[1.0, 1.0, 1.0, 1.0]), None);
        assert!((spearman(&x, &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-12);
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(1.5)).collect();
        assert!((loglog_slope(&x, &y).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn ties_get_average_ranks() {
        assert_eq!(ranks(&[2.0, 1.0, 2.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn sign_alignment() {
        let mut m = DMatrix::from_row_slice(2, 3, &[1.0, -1.0, 0.0, 0.0, 0.0, 1.0]);
        sign_align(&mut m);
        assert_eq!(m, DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 0.0, 0.0, 1.0]));
    }
}
