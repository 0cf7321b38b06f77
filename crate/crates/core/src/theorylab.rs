//! Numerical companions to the identifiability theory: ellipsoid fitting,
//! dual certificates for the exact program, and phase-transition grids.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corela::{singular_values, sym_dim, sym_eigen, SymMatrix};
use crate::error::{Error, Result};
use crate::mixing::MixingMatrix;
use crate::par::{self, derive_seed};
use crate::solver::solve_exact_on;
use crate::subspace::{population_basis, BasisSource, SubspaceBasis};

/// Tolerance on `λ_min` for PSD tests.
pub const PSD_TOL: f64 = -1e-8;
/// Largest residual accepted for an interpolation constraint.
pub const RESIDUAL_TOL: f64 = 1e-8;
/// Linear systems with a larger condition number count as singular.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct EllipsoidFit {
    /// `None` when the linear system was singular.
    pub y: Option<SymMatrix>,
    pub beta: Vec<f64>,
    /// `|vᵢᵀ Y vᵢ − 1|` per point.
    pub residuals: Vec<f64>,
    pub min_eig: f64,
    pub condition: f64,
    pub success: bool,
}

impl EllipsoidFit {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

fn condition_number(a: &DMatrix<f64>) -> f64 {
    let s = singular_values(a);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

/// `Y = I/p + Σ βⱼ vⱼvⱼᵀ` with `β` solving `Vβ = h`, `V_ij = ⟨vᵢ,vⱼ⟩²`,
/// `hᵢ = 1 − ‖vᵢ‖²/p`. The points are the columns of `v`.
pub fn fit_ellipsoid(v: &DMatrix<f64>) -> Result<EllipsoidFit> {
    let (p, k) = (v.nrows(), v.ncols());
    if p == 0 || k == 0 {
        return Err(Error::Input("ellipsoid fitting needs at least one point".into()));
    }
    let gram = v.transpose() * v;
    let vmat = gram.map(|x| x * x);
    let h = DVector::from_fn(k, |i, _| 1.0 - gram[(i, i)] / p as f64);
    let condition = condition_number(&vmat);
    let failed = |condition| EllipsoidFit {
        y: None,
        beta: Vec::new(),
        residuals: Vec::new(),
        min_eig: f64::NAN,
        condition,
        success: false,
    };
    if !(condition < MAX_CONDITION) {
        return Ok(failed(condition));
    }
    let Some(beta) = vmat.lu().solve(&h) else {
        return Ok(failed(f64::INFINITY));
    };
    let mut y = DMatrix::identity(p, p) / p as f64;
    for j in 0..k {
        y.ger(beta[j], &v.column(j), &v.column(j), 1.0);
    }
    let y = SymMatrix::new(y)?;
    let residuals: Vec<f64> = (0..k)
        .map(|i| {
            let c = v.column(i);
            ((c.transpose() * y.matrix() * c)[0] - 1.0).abs()
        })
        .collect();
    let min_eig = y.min_eigenvalue()?;
    let max_res = residuals.iter().copied().fold(0.0, f64::max);
    Ok(EllipsoidFit {
        success: min_eig >= PSD_TOL && max_res <= RESIDUAL_TOL,
        y: Some(y),
        beta: beta.iter().copied().collect(),
        residuals,
        min_eig,
        condition,
    })
}

/// `k` points `vᵢ = πᵢwᵢ` with `wᵢ ~ N(0, I_p)` and a scalar `πᵢ` set by
/// `1/πᵢ² = (‖wᵢ‖²/p)(1 + ξᵢ)`, `ξᵢ` uniform on `[−p^{-1/2}, p^{-1/2}]`, so
/// that `|1/πᵢ² − 1| = O(p^{-1/2})` as the fitting theorem requires.
pub fn theorem_model_points<R: Rng>(p: usize, k: usize, rng: &mut R) -> DMatrix<f64> {
    let mut v = DMatrix::from_fn(p, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let spread = 1.0 / (p as f64).sqrt();
    for mut c in v.column_iter_mut() {
        let xi = rng.random_range(-spread..=spread);
        let inv_pi2 = c.norm_squared() / p as f64 * (1.0 + xi);
        c /= inv_pi2.sqrt();
    }
    v
}

#[derive(Debug, Clone)]
pub struct DualCertificate {
    /// `None` when the linear system was singular.
    pub z: Option<SymMatrix>,
    /// Weight of the projector onto `d_j^⊥`.
    pub tau: f64,
    pub max_residual: f64,
    pub min_eig: f64,
    /// `Z ⪰ 0` and every constraint met: atom `j` is optimal. `false` is
    /// inconclusive.
    pub feasible: bool,
}

/// Searches for `Z ⪰ 0` with `dᵢᵀZdᵢ = cⱼ‖dᵢ‖² − cᵢ` (`cᵢ = dᵢᵀGdᵢ`, `i ≠ j`)
/// of the form `Z = Σ_{i≠j} γᵢ d̄ᵢd̄ᵢᵀ + τ P`, where `P = I − dⱼdⱼᵀ` and
/// `d̄ᵢ = P dᵢ`. For each `τ` the `γ` are fixed by the constraints; `τ` is
/// chosen by golden-section search to maximize `λ_min(Z)` on `dⱼ^⊥`.
pub fn dual_certificate(d: &MixingMatrix, g: &SymMatrix, j: usize) -> Result<DualCertificate> {
    let (p, k) = (d.p(), d.k());
    if j >= k {
        return Err(Error::Input(format!("atom index {j} out of range for k = {k}")));
    }
    if g.dim() != p {
        return Err(Error::Dimension(format!("G is {}x{0}, atoms are {p}-dimensional", g.dim())));
    }
    let dj = d.column(j);
    let proj = DMatrix::identity(p, p) - &dj * dj.transpose();
    let c: Vec<f64> = (0..k).map(|i| d.matrix().column(i).dot(&(g.matrix() * d.matrix().column(i)))).collect();
    let others: Vec<usize> = (0..k).filter(|&i| i != j).collect();
    let inconclusive = DualCertificate {
        z: None,
        tau: 0.0,
        max_residual: f64::INFINITY,
        min_eig: f64::NAN,
        feasible: false,
    };
    if others.is_empty() {
        // A single atom is the only feasible point.
        return Ok(DualCertificate {
            z: Some(SymMatrix::zeros(p)),
            max_residual: 0.0,
            min_eig: 0.0,
            feasible: true,
            ..inconclusive
        });
    }
    let bars: Vec<DVector<f64>> = others.iter().map(|&i| &proj * d.column(i)).collect();
    let n = others.len();
    let m = DMatrix::from_fn(n, n, |a, b| bars[a].dot(&bars[b]).powi(2));
    // Right-hand sides: constant part and the part multiplying τ.
    let rhs0 = DVector::from_fn(n, |a, _| {
        let i = others[a];
        c[j] * d.column(i).norm_squared() - c[i]
    });
    let rhs1 = DVector::from_fn(n, |a, _| -bars[a].norm_squared());
    let condition = condition_number(&m);
    let (gamma0, gamma1) = if condition < MAX_CONDITION {
        let lu = m.clone().lu();
        match (lu.solve(&rhs0), lu.solve(&rhs1)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Ok(inconclusive),
        }
    } else {
        // Least squares: the constraints are then usually not met exactly and
        // the residual check below reports the certificate as inconclusive.
        let svd = m.clone().svd(true, true);
        let tol = 1e-12 * svd.singular_values.max();
        match (svd.solve(&rhs0, tol), svd.solve(&rhs1, tol)) {
            (Ok(a), Ok(b)) => (a, b),
            _ => return Ok(inconclusive),
        }
    };
    // Orthonormal basis of dⱼ^⊥ to evaluate eigenvalues off the trivial null
    // direction.
    let eig = sym_eigen(&proj)?;
    let q = eig.vectors.columns(1, p - 1).into_owned();
    let build = |tau: f64| -> DMatrix<f64> {
        let mut z = &proj * tau;
        for a in 0..n {
            z.ger(gamma0[a] + tau * gamma1[a], &bars[a], &bars[a], 1.0);
        }
        z
    };
    let restricted_min = |tau: f64| -> f64 {
        if p == 1 {
            return 0.0;
        }
        let zr = q.transpose() * build(tau) * &q;
        sym_eigen(&zr).map(|e| e.values[0]).unwrap_or(f64::NEG_INFINITY)
    };
    let scale = 1.0 + rhs0.amax() + gamma0.amax();
    let tau = golden_max(restricted_min, -10.0 * scale, 10.0 * scale, 200);
    let mut z = build(tau);
    if restricted_min(tau) < 0.0 && condition < MAX_CONDITION && p > 1 {
        // The span family has no PSD member: look for one in the whole cone
        // on dⱼ^⊥ by alternating projections between the constraint set and
        // {S ⪰ εI}, stopping at the first constraint-exact PSD point.
        let a: Vec<DVector<f64>> = bars.iter().map(|b| q.transpose() * b).collect();
        let lu = m.lu();
        if let Some(s) = alternating_projections(q.transpose() * &z * &q, &a, &rhs0, &lu, scale) {
            z = &q * s * q.transpose();
        }
    }
    let z = SymMatrix::new(z)?;
    let max_residual = others
        .iter()
        .zip(rhs0.iter())
        .map(|(&i, &r)| {
            let di = d.column(i);
            ((di.transpose() * z.matrix() * &di)[0] - r).abs()
        })
        .fold(0.0, f64::max);
    let min_eig = z.min_eigenvalue()?;
    Ok(DualCertificate {
        feasible: max_residual <= RESIDUAL_TOL && min_eig >= PSD_TOL,
        z: Some(z),
        tau,
        max_residual,
        min_eig,
    })
}

/// Iterations allowed for the alternating-projection fallback.
const AP_ITERS: usize = 2000;

/// Finds `S ⪰ 0` with `aᵢᵀSaᵢ = rᵢ`, alternating the exact projection onto
/// the constraints (through the factorized Gram matrix `(⟨aᵢ,aₗ⟩²)`) with
/// eigenvalue clipping at a small positive margin.
fn alternating_projections(
    mut s: DMatrix<f64>,
    a: &[DVector<f64>],
    r: &DVector<f64>,
    gram: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    scale: f64,
) -> Option<DMatrix<f64>> {
    let margin = 1e-6 * scale;
    for _ in 0..AP_ITERS {
        let viol = DVector::from_fn(a.len(), |i, _| a[i].dot(&(&s * &a[i])) - r[i]);
        let nu = gram.solve(&viol)?;
        for (ai, &w) in a.iter().zip(nu.iter()) {
            s.ger(-w, ai, ai, 1.0);
        }
        s = (&s + s.transpose()) * 0.5;
        let eig = sym_eigen(&s).ok()?;
        if eig.values[0] >= 0.0 {
            return Some(s);
        }
        let clipped = eig.values.map(|x| x.max(margin));
        s = &eig.vectors * DMatrix::from_diagonal(&clipped) * eig.vectors.transpose();
    }
    None
}

/// Maximizer of a concave function on `[lo, hi]` by golden-section search.
fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - r * (hi - lo);
    let mut b = lo + r * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..iters {
        if hi - lo <= 1e-12 * (1.0 + hi.abs().max(lo.abs())) {
            break;
        }
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + r * (hi - lo);
            fb = f(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - r * (hi - lo);
            fa = f(a);
        }
    }
    if fa >= fb {
        a
    } else {
        b
    }
}

/// A symmetric matrix with i.i.d. standard normal entries on and above the
/// diagonal.
pub fn random_symmetric<R: Rng>(p: usize, rng: &mut R) -> SymMatrix {
    let mut g = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in i..p {
            let x: f64 = rng.sample(StandardNormal);
            g[(i, j)] = x;
            g[(j, i)] = x;
        }
    }
    SymMatrix::new(g).expect("square by construction")
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PhaseCell {
    pub p: usize,
    pub k: usize,
    pub n_rep: usize,
    pub successes: usize,
    /// Repetitions that errored instead of producing a solution.
    pub failures: usize,
    pub success_fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PhaseGrid {
    pub p_values: Vec<usize>,
    pub k_values: Vec<usize>,
    pub n_rep: usize,
    pub seed: u64,
    /// Row-major over `(p, k)`.
    pub cells: Vec<PhaseCell>,
}

impl PhaseGrid {
    pub fn cell(&self, p: usize, k: usize) -> Option<&PhaseCell> {
        self.cells.iter().find(|c| c.p == p && c.k == k)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Input(format!("writing phase grid: {e}"));
        w.write_record(["p", "k", "n_rep", "success_fraction"]).map_err(io)?;
        for c in &self.cells {
            w.write_record([
                c.p.to_string(),
                c.k.to_string(),
                c.n_rep.to_string(),
                c.success_fraction.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::Input(format!("writing phase grid: {e}")))?;
        Ok(())
    }

    /// Metadata for the grid, including the reference curves `k = p²/4` and
    /// `k = p(p+1)/2` evaluated at each `p`.
    pub fn metadata(&self) -> serde_json::Value {
        let curve = |f: fn(usize) -> f64| -> Vec<serde_json::Value> {
            self.p_values
                .iter()
                .map(|&p| serde_json::json!({ "p": p, "k": f(p) }))
                .collect()
        };
        serde_json::json!({
            "p_values": self.p_values,
            "k_values": self.k_values,
            "n_rep": self.n_rep,
            "seed": self.seed,
            "failed_cells": self.cells.iter().filter(|c| c.failures > 0)
                .map(|c| serde_json::json!({ "p": c.p, "k": c.k, "failures": c.failures }))
                .collect::<Vec<_>>(),
            "reference_curves": {
                "p_squared_over_4": curve(|p| (p * p) as f64 / 4.0),
                "p_p_plus_1_over_2": curve(|p| sym_dim(p) as f64),
            },
        })
    }
}

/// Whether one random instance `(D, G)` is solved by an atom.
pub fn phase_trial(p: usize, k: usize, seed: u64) -> Result<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = MixingMatrix::normalized(DMatrix::from_fn(p, k, |_, _| rng.sample(StandardNormal)))?;
    let g = random_symmetric(p, &mut rng);
    let basis = if k >= sym_dim(p) {
        SubspaceBasis::full_space(p, BasisSource::Population)
    } else {
        population_basis(&d)?
    };
    Ok(solve_exact_on(&basis, &d, &g)?.success)
}

/// Success fraction of the exact program over `n_rep` random instances per
/// `(p, k)` cell. Errors in single repetitions are counted per cell and do
/// not abort the grid.
pub fn phase_transition(p_values: &[usize], k_values: &[usize], n_rep: usize, seed: u64) -> Result<PhaseGrid> {
    if p_values.is_empty() || k_values.is_empty() {
        return Err(Error::Input("phase grid needs at least one p and one k".into()));
    }
    if n_rep == 0 {
        return Err(Error::Input("n_rep must be at least 1".into()));
    }
    if p_values.contains(&0) || k_values.contains(&0) {
        return Err(Error::Input("p and k must be positive".into()));
    }
    let jobs: Vec<(usize, usize, usize)> = p_values
        .iter()
        .flat_map(|&p| k_values.iter().flat_map(move |&k| (0..n_rep).map(move |r| (p, k, r))))
        .collect();
    let outcomes = par::map_slice(&jobs, |&(p, k, r)| {
        let cell_seed = derive_seed(seed, ((p as u64) << 40) ^ ((k as u64) << 20));
        let out = phase_trial(p, k, derive_seed(cell_seed, r as u64));
        if let Err(e) = &out {
            log::warn!("phase cell p={p} k={k} rep {r}: {e}");
        }
        out
    });
    let mut cells = Vec::new();
    for (ci, chunk) in outcomes.chunks(n_rep).enumerate() {
        let (p, k, _) = jobs[ci * n_rep];
        let successes = chunk.iter().filter(|o| matches!(o, Ok(true))).count();
        let failures = chunk.iter().filter(|o| o.is_err()).count();
        cells.push(PhaseCell {
            p,
            k,
            n_rep,
            successes,
            failures,
            success_fraction: successes as f64 / n_rep as f64,
        });
    }
    Ok(PhaseGrid {
        p_values: p_values.to_vec(),
        k_values: k_values.to_vec(),
        n_rep,
        seed,
        cells,
    })
}
