//! Recovering all atoms: clustering, adaptive and semi-adaptive deflation
//! around the single-atom solver, and the end-to-end estimator.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corela::{sym_dim, sym_eigen, SymMatrix};
use crate::error::{Error, Result};
use crate::moments::{cum4_flattening, default_probe_scale, gencov_stack, sample_probes, SampleMatrix};
use crate::par::{self, derive_seed};
use crate::solver::{choose_g, fista, fista_from, GMode, SolverConfig, SolverResult};
use crate::subspace::{basis_from_cum4, basis_from_stack, BasisSource, SubspaceBasis, DEFAULT_MEMBERSHIP_TOL};

pub use crate::mixing::MixingMatrix;

/// Cluster seeds closer than this (in `1 − |⟨u,v⟩|`) are merged.
pub const MERGE_RADIUS: f64 = 0.01;
/// Two atoms with `|⟨u,v⟩|` above this count as the same.
pub const DISTINCT_COS: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Clustering,
    Adaptive,
    SemiAdaptive,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DeflationConfig {
    pub strategy: Strategy,
    /// Solves per atom in the clustering pass.
    pub oversample_factor: usize,
    /// Largest mean `1 − ⟨u,c⟩²` for a cluster to be accepted.
    pub cluster_var_threshold: f64,
    pub g_mode: GMode,
    /// Re-solve each adaptively found atom on the undeflated span with
    /// `G = v vᵀ`, which snaps the biased deflated solution onto an atom.
    pub refine: bool,
    /// Extra attempts when an adaptive step returns an already found atom.
    pub max_retries: usize,
    pub seed: u64,
}

impl Default for DeflationConfig {
    fn default() -> Self {
        DeflationConfig {
            strategy: Strategy::SemiAdaptive,
            oversample_factor: 5,
            cluster_var_threshold: 0.05,
            g_mode: GMode::Random,
            refine: true,
            max_retries: 3,
            seed: 0,
        }
    }
}

impl DeflationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.oversample_factor == 0 {
            return Err(Error::Input("oversample_factor must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.cluster_var_threshold) {
            return Err(Error::Input(format!(
                "cluster_var_threshold must lie in [0, 1], got {}",
                self.cluster_var_threshold
            )));
        }
        Ok(())
    }
}

/// `1 − |⟨u,v⟩|` for unit vectors.
pub fn sign_free_distance(u: &DVector<f64>, v: &DVector<f64>) -> f64 {
    1.0 - u.dot(v).abs().min(1.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterInfo {
    pub centroid: Vec<f64>,
    pub size: usize,
    /// Mean of `1 − ⟨u,c⟩²` over members (squared normalized atom distance).
    pub variance: f64,
}

#[derive(Debug, Clone)]
pub struct ClusterOutcome {
    pub atoms: Vec<DVector<f64>>,
    pub clusters: Vec<ClusterInfo>,
    /// Fewer than `k` clusters could be formed.
    pub partial: bool,
    /// Leading-eigenvalue cutoff applied to the solves.
    pub lead_floor: f64,
}

/// Leading eigenvector of `(1/n) Σ uuᵀ`, the sign-invariant mean direction.
fn mean_direction(members: &[&DVector<f64>]) -> Result<DVector<f64>> {
    let p = members[0].len();
    let mut s = DMatrix::zeros(p, p);
    for u in members {
        s.ger(1.0, *u, *u, 1.0);
    }
    Ok(sym_eigen(&s)?.top_vector())
}

/// Clusters unit vectors into at most `k` groups under `1 − |⟨u,v⟩|`.
/// Seeds are picked greedily by neighbourhood size (points within
/// [`MERGE_RADIUS`]), skipping candidates already covered by a seed, and
/// then refined with a few assignment/centroid sweeps.
pub fn cluster_directions(points: &[DVector<f64>], k: usize) -> Result<Vec<(DVector<f64>, Vec<usize>)>> {
    if points.is_empty() || k == 0 {
        return Ok(Vec::new());
    }
    let n = points.len();
    let density: Vec<usize> = (0..n)
        .map(|i| (0..n).filter(|&j| sign_free_distance(&points[i], &points[j]) <= MERGE_RADIUS).count())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| density[b].cmp(&density[a]).then(a.cmp(&b)));
    let mut seeds: Vec<DVector<f64>> = Vec::new();
    for &i in &order {
        if seeds.len() == k {
            break;
        }
        if seeds.iter().all(|s| sign_free_distance(&points[i], s) > MERGE_RADIUS) {
            seeds.push(points[i].clone());
        }
    }
    let mut assign = vec![0usize; points.len()];
    for _ in 0..20 {
        let mut changed = false;
        for (j, u) in points.iter().enumerate() {
            let best = (0..seeds.len())
                .min_by(|&a, &b| sign_free_distance(u, &seeds[a]).total_cmp(&sign_free_distance(u, &seeds[b])))
                .expect("at least one seed");
            if best != assign[j] {
                assign[j] = best;
                changed = true;
            }
        }
        for (c, seed) in seeds.iter_mut().enumerate() {
            let members: Vec<&DVector<f64>> = points.iter().zip(&assign).filter(|(_, &a)| a == c).map(|(u, _)| u).collect();
            if !members.is_empty() {
                *seed = mean_direction(&members)?;
            }
        }
        if !changed {
            break;
        }
    }
    Ok(seeds
        .into_iter()
        .enumerate()
        .map(|(c, s)| (s, (0..points.len()).filter(|&j| assign[j] == c).collect::<Vec<_>>()))
        .filter(|(_, m)| !m.is_empty())
        .collect())
}

/// A trace-one solution counts as an atom rather than a mixture when its
/// leading eigenvalue is at least this fraction of the largest one seen in
/// the same run. With an exact basis the largest is 1; with an estimated
/// basis every solution is spread out and only the relative size is
/// informative.
pub const RANK_ONE_LEAD: f64 = 0.9;

/// Re-solves on `basis` with `G = v vᵀ`, starting at `v vᵀ`. Returns the new
/// leading eigenvector and eigenvalue.
pub fn snap(basis: &SubspaceBasis, v: &DVector<f64>, solver: &SolverConfig) -> Result<(DVector<f64>, f64)> {
    let g = SymMatrix::outer(v);
    let r = fista_from(&g, basis, solver, &g, &mut |_| {})?;
    Ok((r.top_eigvec, r.top_eigval))
}

fn solve_with_seed(basis: &SubspaceBasis, solver: &SolverConfig, mode: GMode, seed: u64) -> Result<SolverResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = choose_g(basis, mode, &mut rng)?;
    fista(&g, basis, solver)
}

/// Runs `oversample_factor · k` solves with independent random `G` (in
/// parallel) and clusters the leading eigenvectors of the rank-one
/// solutions into at most `k` groups.
pub fn cluster_deflation(
    basis: &SubspaceBasis,
    k: usize,
    solver: &SolverConfig,
    cfg: &DeflationConfig,
) -> Result<ClusterOutcome> {
    if k == 0 {
        return Err(Error::Input("k must be at least 1".into()));
    }
    cfg.validate()?;
    let solves = cfg.oversample_factor * k;
    // A single solve with k = 1 uses the deterministic choice of G.
    let mode = if solves == 1 { GMode::Deterministic } else { cfg.g_mode };
    let results = par::map_indexed(solves, |i| {
        solve_with_seed(basis, solver, mode, derive_seed(cfg.seed, i as u64))
    });
    let results: Vec<SolverResult> = results.into_iter().collect::<Result<_>>()?;
    let max_lead = results.iter().map(|r| r.top_eigval).fold(0.0, f64::max);
    let lead_floor = RANK_ONE_LEAD * max_lead;
    let mut points: Vec<DVector<f64>> = Vec::with_capacity(solves);
    let mut mixtures = 0;
    for r in results {
        if r.top_eigval >= lead_floor {
            points.push(r.top_eigvec);
        } else {
            mixtures += 1;
        }
    }
    if mixtures > 0 {
        log::debug!("{mixtures} of {solves} solves ended away from a rank-one atom");
    }
    let groups = cluster_directions(&points, k)?;
    let mut atoms = Vec::with_capacity(groups.len());
    let mut clusters = Vec::with_capacity(groups.len());
    for (centroid, members) in groups {
        let variance = members
            .iter()
            .map(|&j| 1.0 - points[j].dot(&centroid).powi(2))
            .sum::<f64>()
            / members.len() as f64;
        clusters.push(ClusterInfo {
            centroid: centroid.iter().copied().collect(),
            size: members.len(),
            variance: variance.max(0.0),
        });
        atoms.push(centroid);
    }
    let partial = atoms.len() < k;
    if partial {
        log::warn!("clustering produced {} of {k} clusters", atoms.len());
    }
    Ok(ClusterOutcome {
        atoms,
        clusters,
        partial,
        lead_floor,
    })
}

#[derive(Debug, Clone)]
pub struct AdaptiveOutcome {
    pub atoms: Vec<DVector<f64>>,
    /// Step index and reason when the procedure stopped early.
    pub failure: Option<(usize, String)>,
    pub diagnostics: Vec<String>,
}

/// Sequential deflation: after every solve the found atom is moved into the
/// complement basis. `found` atoms are deflated before the first step.
/// Removes `v vᵀ` from the current span. An atom too far from the span
/// (possible with an estimated span) is kept as a result but not deflated;
/// the distinctness check stops it from being returned twice.
fn deflate_one(current: &SubspaceBasis, v: &DVector<f64>, diagnostics: &mut Vec<String>) -> Result<SubspaceBasis> {
    match current.augment_null(&[SymMatrix::outer(v)], DEFAULT_MEMBERSHIP_TOL) {
        Err(Error::Deflation(msg)) => {
            diagnostics.push(format!("atom not deflated: {msg}"));
            Ok(current.clone())
        }
        r => r,
    }
}

pub fn adaptive_deflation(
    basis: &SubspaceBasis,
    k: usize,
    solver: &SolverConfig,
    cfg: &DeflationConfig,
    found: &[DVector<f64>],
) -> Result<AdaptiveOutcome> {
    adaptive_with_floor(basis, k, solver, cfg, found, None)
}

/// `lead_floor` is the cutoff for snapped solutions; `None` tracks
/// [`RANK_ONE_LEAD`] times the largest leading eigenvalue seen so far.
fn adaptive_with_floor(
    basis: &SubspaceBasis,
    k: usize,
    solver: &SolverConfig,
    cfg: &DeflationConfig,
    found: &[DVector<f64>],
    lead_floor: Option<f64>,
) -> Result<AdaptiveOutcome> {
    let mut max_lead = 0.0f64;
    let mut atoms: Vec<DVector<f64>> = Vec::new();
    let mut diagnostics = Vec::new();
    let mut current = basis.clone();
    for v in found {
        match deflate_one(&current, v, &mut diagnostics) {
            Ok(b) => current = b,
            Err(e) => {
                return Ok(AdaptiveOutcome {
                    atoms,
                    failure: Some((0, e.to_string())),
                    diagnostics,
                })
            }
        }
    }
    if k > current.dim() {
        return Err(Error::Input(format!(
            "{k} atoms requested but only {} dimensions remain",
            current.dim()
        )));
    }
    let p = basis.p();
    for step in 0..k {
        let mut accepted = None;
        // Highest-lead distinct candidate that missed the floor.
        let mut fallback: Option<(f64, DVector<f64>)> = None;
        let mut last_reason = String::new();
        for attempt in 0..=cfg.max_retries {
            let seed = derive_seed(cfg.seed ^ 0xADA9_71CE, (step * (cfg.max_retries + 1) + attempt) as u64);
            let mode = if k == 1 && found.is_empty() && attempt == 0 { GMode::Deterministic } else { cfg.g_mode };
            let res = match solve_with_seed(&current, solver, mode, seed) {
                Ok(r) => r,
                Err(e) => {
                    last_reason = e.to_string();
                    continue;
                }
            };
            let mut v = res.top_eigvec;
            let mut weak = None;
            if cfg.refine {
                let (snapped, lead) = snap(basis, &v, solver)?;
                max_lead = max_lead.max(lead);
                let floor = lead_floor.unwrap_or(RANK_ONE_LEAD * max_lead);
                if lead < floor {
                    weak = Some(lead);
                }
                v = snapped;
            }
            let clash = found
                .iter()
                .chain(atoms.iter())
                .map(|u| u.dot(&v).abs())
                .fold(0.0, f64::max);
            if clash > DISTINCT_COS {
                last_reason = format!("step {step} returned an atom already found (|cos| = {clash:.4})");
                diagnostics.push(last_reason.clone());
                continue;
            }
            if let Some(lead) = weak {
                last_reason = format!("step {step} converged to a non-atom (leading eigenvalue {lead:.4})");
                diagnostics.push(last_reason.clone());
                if fallback.as_ref().is_none_or(|(l, _)| lead > *l) {
                    fallback = Some((lead, v));
                }
                continue;
            }
            accepted = Some(v);
            break;
        }
        if accepted.is_none() {
            if let Some((lead, v)) = fallback {
                // With an estimated span no solve may clear the floor; the
                // leading eigenvector is still the best available estimate.
                diagnostics.push(format!(
                    "step {step} kept its best candidate (leading eigenvalue {lead:.4})"
                ));
                accepted = Some(v);
            }
        }
        let Some(v) = accepted else {
            log::warn!("adaptive deflation stopped at step {step}: {last_reason}");
            return Ok(AdaptiveOutcome {
                atoms,
                failure: Some((step, last_reason)),
                diagnostics,
            });
        };
        if step + 1 < k {
            match deflate_one(&current, &v, &mut diagnostics) {
                Ok(b) => current = b,
                Err(e) => {
                    atoms.push(v);
                    let reason = format!("cannot deflate atom from step {step}: {e}");
                    diagnostics.push(reason.clone());
                    return Ok(AdaptiveOutcome {
                        atoms,
                        failure: Some((step + 1, reason)),
                        diagnostics,
                    });
                }
            }
        }
        debug_assert_eq!(v.len(), p);
        atoms.push(v);
    }
    Ok(AdaptiveOutcome {
        atoms,
        failure: None,
        diagnostics,
    })
}

#[derive(Debug, Clone)]
pub struct DeflationOutcome {
    pub atoms: Vec<DVector<f64>>,
    /// Fewer than `k` atoms were recovered.
    pub partial: bool,
    pub clusters: Vec<ClusterInfo>,
    pub accepted_clusters: usize,
    pub diagnostics: Vec<String>,
}

impl DeflationOutcome {
    pub fn mixing(&self) -> Result<MixingMatrix> {
        MixingMatrix::from_columns(&self.atoms)
    }
}

/// Whether a cluster passes the quality filter. Singletons have zero
/// variance and pass any positive threshold; 0 rejects everything and 1
/// accepts everything.
fn good_cluster(c: &ClusterInfo, threshold: f64) -> bool {
    threshold >= 1.0 || c.variance < threshold
}

/// Clustering pass, then adaptive deflation for whatever the good clusters
/// did not cover.
pub fn semi_adaptive_deflation(
    basis: &SubspaceBasis,
    k: usize,
    solver: &SolverConfig,
    cfg: &DeflationConfig,
) -> Result<DeflationOutcome> {
    let clustered = cluster_deflation(basis, k, solver, cfg)?;
    let mut accepted: Vec<DVector<f64>> = Vec::new();
    let good: Vec<&DVector<f64>> = clustered
        .atoms
        .iter()
        .zip(&clustered.clusters)
        .filter(|(_, info)| good_cluster(info, cfg.cluster_var_threshold))
        .map(|(a, _)| a)
        .collect();
    let candidates: Vec<Option<DVector<f64>>> = if cfg.refine {
        par::map_slice(&good, |a| match snap(basis, a, solver) {
            Ok((v, lead)) if lead >= clustered.lead_floor => Some(v),
            _ => None,
        })
    } else {
        good.iter().map(|a| Some((*a).clone())).collect()
    };
    for atom in candidates.into_iter().flatten() {
        if accepted.iter().all(|u| u.dot(&atom).abs() <= DISTINCT_COS) {
            accepted.push(atom);
        }
    }
    let mut diagnostics = Vec::new();
    let accepted_clusters = accepted.len();
    let mut atoms = accepted.clone();
    if atoms.len() < k {
        let adaptive = adaptive_with_floor(
            basis,
            k - atoms.len(),
            solver,
            cfg,
            &accepted,
            Some(clustered.lead_floor),
        )?;
        diagnostics.extend(adaptive.diagnostics);
        if let Some((step, reason)) = adaptive.failure {
            diagnostics.push(format!("adaptive phase stopped at step {step}: {reason}"));
        }
        atoms.extend(adaptive.atoms);
    }
    Ok(DeflationOutcome {
        partial: atoms.len() < k,
        atoms,
        clusters: clustered.clusters,
        accepted_clusters,
        diagnostics,
    })
}

/// Runs the configured deflation strategy.
pub fn deflate(basis: &SubspaceBasis, k: usize, solver: &SolverConfig, cfg: &DeflationConfig) -> Result<DeflationOutcome> {
    cfg.validate()?;
    solver.validate()?;
    match cfg.strategy {
        Strategy::SemiAdaptive => semi_adaptive_deflation(basis, k, solver, cfg),
        Strategy::Clustering => {
            let c = cluster_deflation(basis, k, solver, cfg)?;
            let mut diagnostics = Vec::new();
            if c.partial {
                diagnostics.push(format!("only {} of {k} clusters formed", c.atoms.len()));
            }
            Ok(DeflationOutcome {
                partial: c.partial,
                accepted_clusters: c.atoms.len(),
                atoms: c.atoms,
                clusters: c.clusters,
                diagnostics,
            })
        }
        Strategy::Adaptive => {
            let a = adaptive_deflation(basis, k, solver, cfg, &[])?;
            let mut diagnostics = a.diagnostics;
            if let Some((step, reason)) = a.failure {
                diagnostics.push(format!("stopped at step {step}: {reason}"));
            }
            Ok(DeflationOutcome {
                partial: a.atoms.len() < k,
                atoms: a.atoms,
                clusters: Vec::new(),
                accepted_clusters: 0,
                diagnostics,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step1 {
    Gencov,
    Cum4,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OverIcaConfig {
    pub step1: Step1,
    /// Number of probes; `None` means `10k`.
    pub probes: Option<usize>,
    /// Probe standard deviation; `None` means the data-adaptive default.
    pub probe_scale: Option<f64>,
    pub solver: SolverConfig,
    pub deflation: DeflationConfig,
    pub seed: u64,
}

impl Default for OverIcaConfig {
    fn default() -> Self {
        OverIcaConfig {
            step1: Step1::Gencov,
            probes: None,
            probe_scale: None,
            solver: SolverConfig::default(),
            deflation: DeflationConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OverIcaResult {
    /// Recovered columns (fewer than `k` when `partial`).
    pub mixing: MixingMatrix,
    pub partial: bool,
    pub basis: SubspaceBasis,
    pub deflation: DeflationOutcome,
    pub warnings: Vec<String>,
}

/// Step I: basis of the atom span estimated from data.
pub fn estimate_subspace(x: &SampleMatrix, k: usize, cfg: &OverIcaConfig) -> Result<SubspaceBasis> {
    match cfg.step1 {
        Step1::Gencov => {
            let s = cfg.probes.unwrap_or(10 * k);
            let scale = cfg.probe_scale.unwrap_or_else(|| default_probe_scale(x));
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x9E0B_E5));
            let probes = sample_probes(x.p(), s, scale, &mut rng)?;
            let stack = gencov_stack(x, &probes)?;
            let total = stack.len();
            let usable = stack.into_usable_coords();
            let dropped = total - usable.ncols();
            let mut basis = basis_from_stack(&usable, k, BasisSource::Gencov)?;
            if dropped > 0 {
                basis.warnings.push(format!("{dropped} degenerate probes discarded"));
            }
            Ok(basis)
        }
        Step1::Cum4 => basis_from_cum4(&cum4_flattening(x)?, k),
    }
}

/// The full estimator: centering, Step I, then deflation (Step II).
pub fn overica(x: &SampleMatrix, k: usize, cfg: &OverIcaConfig) -> Result<OverIcaResult> {
    let m = sym_dim(x.p());
    if k == 0 || k > m {
        return Err(Error::Input(format!(
            "k = {k} must lie in 1..={m} for p = {}",
            x.p()
        )));
    }
    let centered = x.center().map_err(|e| e.in_stage("centering"))?;
    let basis = estimate_subspace(&centered, k, cfg).map_err(|e| e.in_stage("subspace estimation"))?;
    let mut dcfg = cfg.deflation.clone();
    dcfg.seed = derive_seed(cfg.seed, 0xDEF1);
    let deflation = deflate(&basis, k, &cfg.solver, &dcfg).map_err(|e| e.in_stage("deflation"))?;
    if deflation.atoms.is_empty() {
        return Err(Error::Numerical("no atoms recovered".into()).in_stage("deflation"));
    }
    let mixing = deflation.mixing().map_err(|e| e.in_stage("assembly"))?;
    let mut warnings = basis.warnings.clone();
    warnings.extend(deflation.diagnostics.iter().cloned());
    Ok(OverIcaResult {
        partial: deflation.partial,
        mixing,
        basis,
        deflation,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subspace::population_basis;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_mixing(p: usize, k: usize, seed: u64) -> MixingMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MixingMatrix::normalized(DMatrix::from_fn(p, k, |_, _| rng.sample(StandardNormal))).unwrap()
    }

    fn matched(d: &MixingMatrix, atoms: &[DVector<f64>], cos: f64) -> usize {
        (0..d.k())
            .filter(|&i| atoms.iter().any(|a| a.dot(&d.column(i)).abs() >= cos))
            .count()
    }

    #[test]
    fn clustering_groups_by_sign_free_direction() {
        let e = |i: usize| DVector::from_fn(3, |j, _| if i == j { 1.0 } else { 0.0 });
        let pts = vec![e(0), -e(0), e(1), e(1), -e(2), e(2)];
        let groups = cluster_directions(&pts, 3).unwrap();
        assert_eq!(groups.len(), 3);
        assert!(groups.iter().all(|(_, m)| m.len() == 2));
    }

    #[test]
    fn nearly_parallel_points_merge() {
        let a = DVector::from_vec(vec![1.0, 0.0]);
        let t: f64 = 0.999f64.acos();
        let b = DVector::from_vec(vec![t.cos(), t.sin()]);
        let groups = cluster_directions(&[a.clone(), b.clone(), a, b], 2).unwrap();
        assert_eq!(groups.len(), 1);
    }

    #[test]
    fn single_solve_passthrough() {
        let d = random_mixing(4, 1, 1);
        let basis = population_basis(&d).unwrap();
        let cfg = DeflationConfig {
            oversample_factor: 1,
            ..DeflationConfig::default()
        };
        let out = cluster_deflation(&basis, 1, &SolverConfig::default(), &cfg).unwrap();
        assert_eq!(out.atoms.len(), 1);
        assert_eq!(out.clusters[0].size, 1);
        assert!(out.atoms[0].dot(&d.column(0)).abs() > 0.9999);
    }

    #[test]
    fn adaptive_single_step_matches_single_solve() {
        let d = random_mixing(5, 1, 2);
        let basis = population_basis(&d).unwrap();
        let out = adaptive_deflation(&basis, 1, &SolverConfig::default(), &DeflationConfig::default(), &[]).unwrap();
        assert!(out.failure.is_none());
        assert!(out.atoms[0].dot(&d.column(0)).abs() > 0.9999);
    }

    #[test]
    fn corrupted_prefound_atom_is_diagnosed() {
        let d = random_mixing(6, 5, 3);
        let basis = population_basis(&d).unwrap();
        let bogus = DVector::from_fn(6, |i, _| if i == 0 { 1.0 } else { 0.0 });
        let out = adaptive_deflation(&basis, 4, &SolverConfig::default(), &DeflationConfig::default(), &[bogus]).unwrap();
        assert!(
            out.diagnostics.iter().any(|d| d.contains("not deflated") && d.contains("outside")),
            "{:?}",
            out.diagnostics
        );
    }

    #[test]
    fn semi_adaptive_small_population() {
        let d = random_mixing(6, 5, 4);
        let basis = population_basis(&d).unwrap();
        let out = semi_adaptive_deflation(&basis, 5, &SolverConfig::default(), &DeflationConfig::default()).unwrap();
        assert!(!out.partial);
        assert_eq!(matched(&d, &out.atoms, 0.99), 5);
    }

    #[test]
    fn overica_rejects_too_many_components() {
        let x = SampleMatrix::new(DMatrix::from_fn(3, 50, |i, j| ((i * 7 + j * 3) % 11) as f64)).unwrap();
        let err = overica(&x, 7, &OverIcaConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn stage_errors_are_tagged() {
        let x = SampleMatrix::new(DMatrix::from_element(3, 1, 1.0)).unwrap();
        let err = overica(&x, 2, &OverIcaConfig::default()).unwrap_err();
        assert!(err.to_string().starts_with("centering"), "{err}");
        assert_eq!(err.kind(), crate::error::ErrorKind::Input);
    }
}
