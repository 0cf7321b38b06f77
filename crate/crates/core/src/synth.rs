//! Synthetic instances: mixing matrices (normal, pruned, sparse), coherence,
//! population-case bases and finite-sample ICA data.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corela::sym_dim;
use crate::error::{Error, Result};
use crate::mixing::MixingMatrix;
use crate::moments::SampleMatrix;
use crate::par::{self, derive_seed};
use crate::subspace::{population_basis, SubspaceBasis};

/// Attempts allowed for prune and sparse resampling.
pub const SAMPLING_BUDGET: usize = 10_000;
/// Draws used to calibrate the default coherence cap.
pub const CALIBRATION_DRAWS: usize = 10_000;
const CALIBRATION_SEED: u64 = 0xC0DE_C0DE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    Normal,
    Prune,
    Sparse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub p: usize,
    pub k: usize,
    pub mode: SamplingMode,
    /// Prune-mode cap `σ̄`; `None` uses the calibrated mean coherence.
    pub coherence_cap: Option<f64>,
    pub seed: u64,
}

impl SamplingSpec {
    pub fn new(p: usize, k: usize, mode: SamplingMode, seed: u64) -> Self {
        SamplingSpec {
            p,
            k,
            mode,
            coherence_cap: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::Input("p must be at least 1".into()));
        }
        let m = sym_dim(self.p);
        if self.k == 0 || self.k > m {
            return Err(Error::Input(format!("k = {} must lie in 1..={m}", self.k)));
        }
        if let Some(c) = self.coherence_cap {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::Input(format!("coherence cap {c} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

/// `max_{i≠j} |⟨dᵢ,dⱼ⟩|`; 0 for a single column.
pub fn coherence(d: &MixingMatrix) -> f64 {
    let g = d.matrix().transpose() * d.matrix();
    let k = d.k();
    let mut c = 0.0f64;
    for i in 0..k {
        for j in i + 1..k {
            c = c.max(g[(i, j)].abs());
        }
    }
    c.min(1.0)
}

fn gaussian_columns<R: Rng>(p: usize, k: usize, rng: &mut R) -> Result<MixingMatrix> {
    MixingMatrix::normalized(DMatrix::from_fn(p, k, |_, _| rng.sample(StandardNormal)))
}

fn coherence_cache() -> &'static Mutex<HashMap<(usize, usize), f64>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), f64>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn cache_key(p: usize, k: usize) -> String {
    format!("{p}x{k}")
}

fn read_cache_file(path: &Path) -> HashMap<String, f64> {
    std::fs::read_to_string(path)
        .ok()
        .and_then(|s| serde_json::from_str(&s).ok())
        .unwrap_or_default()
}

/// Mean coherence of normal-mode draws for `(p, k)`, the default prune cap.
/// Results are kept in memory and, when `cache_file` is given, in a JSON
/// map on disk. The calibration stream is fixed, so cached and fresh values
/// agree.
pub fn mean_coherence(p: usize, k: usize, cache_file: Option<&Path>) -> Result<f64> {
    if let Some(&v) = coherence_cache().lock().expect("cache lock").get(&(p, k)) {
        return Ok(v);
    }
    if let Some(path) = cache_file {
        if let Some(&v) = read_cache_file(path).get(&cache_key(p, k)) {
            coherence_cache().lock().expect("cache lock").insert((p, k), v);
            return Ok(v);
        }
    }
    let draws = par::map_indexed(CALIBRATION_DRAWS, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(CALIBRATION_SEED, i as u64));
        gaussian_columns(p, k, &mut rng).map(|d| coherence(&d))
    });
    let mut sum = 0.0;
    for c in draws {
        sum += c?;
    }
    let mean = sum / CALIBRATION_DRAWS as f64;
    coherence_cache().lock().expect("cache lock").insert((p, k), mean);
    if let Some(path) = cache_file {
        let mut map = read_cache_file(path);
        map.insert(cache_key(p, k), mean);
        let written = serde_json::to_string_pretty(&map)
            .map_err(|e| e.to_string())
            .and_then(|s| std::fs::write(path, s).map_err(|e| e.to_string()));
        if let Err(e) = written {
            log::warn!("could not write coherence cache {}: {e}", path.display());
        }
    }
    Ok(mean)
}

fn atoms_independent(d: &MixingMatrix) -> bool {
    d.k() <= sym_dim(d.p()) && population_basis(d).is_ok()
}

/// Samples a mixing matrix per `spec`. The prune cap defaults to the
/// in-memory calibrated mean coherence.
pub fn sample_mixing(spec: &SamplingSpec) -> Result<MixingMatrix> {
    sample_mixing_cached(spec, None)
}

/// As [`sample_mixing`], persisting the calibrated cap in `cache_file`.
pub fn sample_mixing_cached(spec: &SamplingSpec, cache_file: Option<&Path>) -> Result<MixingMatrix> {
    spec.validate()?;
    let (p, k) = (spec.p, spec.k);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.mode {
        SamplingMode::Normal => gaussian_columns(p, k, &mut rng),
        SamplingMode::Prune => {
            let cap = match spec.coherence_cap {
                Some(c) => c,
                None => mean_coherence(p, k, cache_file)?,
            };
            for _ in 0..SAMPLING_BUDGET {
                let d = gaussian_columns(p, k, &mut rng)?;
                if coherence(&d) <= cap {
                    return Ok(d);
                }
            }
            Err(Error::Sampling(format!(
                "no draw with coherence ≤ {cap} in {SAMPLING_BUDGET} attempts"
            )))
        }
        SamplingMode::Sparse => {
            let total = p * k;
            for _ in 0..SAMPLING_BUDGET {
                let mut d = DMatrix::from_fn(p, k, |_, _| rng.sample::<f64, _>(StandardNormal));
                let mask: Vec<f64> = (0..total).map(|_| rng.sample(StandardNormal)).collect();
                let mut order: Vec<usize> = (0..total).collect();
                order.sort_by(|&a, &b| mask[a].total_cmp(&mask[b]));
                for &idx in &order[..total / 2] {
                    d[(idx % p, idx / p)] = 0.0;
                }
                if d.column_iter().any(|c| c.iter().all(|&x| x == 0.0)) {
                    continue;
                }
                let d = MixingMatrix::normalized(d)?;
                if atoms_independent(&d) {
                    return Ok(d);
                }
            }
            Err(Error::Sampling(format!(
                "no sparse draw with nonzero columns and independent atoms in {SAMPLING_BUDGET} attempts"
            )))
        }
    }
}

/// A scalar source distribution.
#[derive(Clone)]
pub enum SourceLaw {
    /// Uniform on `[−0.5, 0.5]`.
    Uniform,
    /// Laplace with unit variance.
    Laplace,
    /// Standard normal; rejected by [`sample_ica`] (not identifiable).
    Gaussian,
    Custom(Arc<dyn Fn(&mut dyn RngCore) -> f64 + Send + Sync>),
}

impl fmt::Debug for SourceLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourceLaw::Uniform => write!(f, "Uniform"),
            SourceLaw::Laplace => write!(f, "Laplace"),
            SourceLaw::Gaussian => write!(f, "Gaussian"),
            SourceLaw::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl SourceLaw {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "uniform" => Ok(SourceLaw::Uniform),
            "laplace" => Ok(SourceLaw::Laplace),
            "gaussian" | "normal" => Ok(SourceLaw::Gaussian),
            other => Err(Error::Input(format!(
                "unknown source law {other:?} (expected uniform, laplace or gaussian)"
            ))),
        }
    }

    pub fn draw(&self, rng: &mut dyn RngCore) -> f64 {
        match self {
            SourceLaw::Uniform => rng.random_range(-0.5..0.5),
            SourceLaw::Laplace => {
                let b = std::f64::consts::FRAC_1_SQRT_2;
                let e1: f64 = rng.sample(Exp1);
                let e2: f64 = rng.sample(Exp1);
                b * (e1 - e2)
            }
            SourceLaw::Gaussian => rng.sample(StandardNormal),
            SourceLaw::Custom(f) => f(rng),
        }
    }
}

/// Draws a `k x n` source matrix.
pub fn sample_sources<R: RngCore>(k: usize, n: usize, law: &SourceLaw, rng: &mut R) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(k, n);
    for j in 0..n {
        for i in 0..k {
            a[(i, j)] = law.draw(rng);
        }
    }
    a
}

/// `X = D A` together with the sources `A`.
pub fn sample_ica_with_sources<R: RngCore>(
    d: &MixingMatrix,
    n: usize,
    law: &SourceLaw,
    rng: &mut R,
) -> Result<(SampleMatrix, DMatrix<f64>)> {
    if n == 0 {
        return Err(Error::Input("n must be at least 1".into()));
    }
    if matches!(law, SourceLaw::Gaussian) {
        return Err(Error::Assumption(
            "Gaussian sources make the mixing matrix unidentifiable".into(),
        ));
    }
    let a = sample_sources(d.k(), n, law, rng);
    let x = d.matrix() * &a;
    Ok((SampleMatrix::new(x)?, a))
}

/// `n` observations `x = D α` with i.i.d. sources drawn from `law`.
pub fn sample_ica<R: RngCore>(d: &MixingMatrix, n: usize, law: &SourceLaw, rng: &mut R) -> Result<SampleMatrix> {
    sample_ica_with_sources(d, n, law, rng).map(|(x, _)| x)
}

/// A normal-mode mixing matrix with independent atoms and its exact basis.
pub fn population_instance(p: usize, k: usize, seed: u64) -> Result<(MixingMatrix, SubspaceBasis)> {
    let spec = SamplingSpec::new(p, k, SamplingMode::Normal, seed);
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..SAMPLING_BUDGET {
        let d = gaussian_columns(p, k, &mut rng)?;
        match population_basis(&d) {
            Ok(b) => return Ok((d, b)),
            Err(Error::Assumption(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Sampling(format!(
        "no draw with independent atoms for p = {p}, k = {k}"
    )))
}
