//! Penalized SDP relaxation
//!
//! ```text
//! min_B  f(B) = −⟨G,B⟩ + (μ/2) Σⱼ ⟨B,F_j⟩²   s.t.  B ⪰ 0, Tr B = 1
//! ```
//!
//! solved by FISTA with projection onto the spectraplex and
//! majorization-minimization restarts from the leading eigenvector, plus a
//! reference solver for the hard-constrained program.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corela::{project_psd_trace1_raw, read_coords, sym_dim, sym_eigen, write_coords, SymMatrix};
use crate::error::{Error, Result};
use crate::mixing::MixingMatrix;
use crate::subspace::{population_basis, SubspaceBasis};

/// Default penalty weight relative to `‖G‖_F`.
pub const DEFAULT_MU_SCALE: f64 = 1e3;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SolverConfig {
    /// Penalty weight; `None` means `DEFAULT_MU_SCALE · ‖G‖_F`.
    pub mu: Option<f64>,
    pub max_iter: usize,
    pub mm_rounds: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            mu: None,
            max_iter: 100,
            mm_rounds: 50,
            tol: 1e-9,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(mu) = self.mu {
            if !(mu.is_finite() && mu > 0.0) {
                return Err(Error::Input(format!("mu must be positive, got {mu}")));
            }
        }
        if self.max_iter == 0 || self.mm_rounds == 0 {
            return Err(Error::Input("max_iter and mm_rounds must be at least 1".into()));
        }
        if !(self.tol.is_finite() && self.tol >= 0.0) {
            return Err(Error::Input(format!("tol must be nonnegative, got {}", self.tol)));
        }
        Ok(())
    }

    /// Resolved penalty weight for objective matrix `g`.
    pub fn mu_for(&self, g: &SymMatrix) -> f64 {
        self.mu.unwrap_or_else(|| DEFAULT_MU_SCALE * g.norm().max(f64::MIN_POSITIVE))
    }
}

#[derive(Debug, Clone)]
pub struct SolverResult {
    pub b_star: SymMatrix,
    /// Best objective value after every FISTA iteration (nonincreasing).
    pub objective_trace: Vec<f64>,
    pub top_eigvec: DVector<f64>,
    pub top_eigval: f64,
    /// `λ₁ − λ₂` of `B*`.
    pub certificate_gap: f64,
    pub objective: f64,
    /// `‖P_N(B*)‖_F`, the distance of `B*` from the subspace.
    pub subspace_residual: f64,
    pub converged: bool,
    pub iterations: usize,
    pub rounds: usize,
}

/// Objective and gradient with an explicit complement basis (columns of
/// `null` in symmetric coordinates): `f(B) = −⟨G,B⟩ + (μ/2)Σⱼ⟨B,F_j⟩²`,
/// `∇f(B) = −G + μ Σⱼ⟨B,F_j⟩F_j`.
pub fn relax_objective(b: &SymMatrix, g: &SymMatrix, null: &DMatrix<f64>, mu: f64) -> Result<(f64, SymMatrix)> {
    let p = b.dim();
    if g.dim() != p || null.nrows() != sym_dim(p) {
        return Err(Error::Dimension(format!(
            "objective pieces disagree: B is {p}x{p}, G is {0}x{0}, complement has {1} rows",
            g.dim(),
            null.nrows()
        )));
    }
    let bc = b.to_coords().into_coords();
    let inner = null.transpose() * &bc;
    let value = -g.inner(b) + 0.5 * mu * inner.norm_squared();
    let pen = null * inner;
    let mut grad = DMatrix::zeros(p, p);
    read_coords(pen.as_slice(), &mut grad);
    grad = grad * mu - g.matrix();
    Ok((value, SymMatrix::new(grad)?))
}

/// Working state shared by the FISTA iterations: the penalty is evaluated as
/// `‖b − UUᵀb‖²`, which equals `Σⱼ⟨B,F_j⟩²` because `U` and `{F_j}` together
/// form an orthonormal basis.
struct Problem<'a> {
    g: &'a DMatrix<f64>,
    u: &'a DMatrix<f64>,
    mu: f64,
    coords: DVector<f64>,
    buf: DMatrix<f64>,
}

impl<'a> Problem<'a> {
    fn new(g: &'a DMatrix<f64>, u: &'a DMatrix<f64>, mu: f64) -> Self {
        let p = g.nrows();
        Problem {
            g,
            u,
            mu,
            coords: DVector::zeros(sym_dim(p)),
            buf: DMatrix::zeros(p, p),
        }
    }

    /// Writes `P_W(B)` into `self.buf` and returns `‖P_N(B)‖²`.
    fn project_w(&mut self, b: &DMatrix<f64>) -> f64 {
        write_coords(b, self.coords.as_mut_slice());
        let total = self.coords.norm_squared();
        let c = self.u.transpose() * &self.coords;
        let kept = c.norm_squared();
        let proj = self.u * c;
        read_coords(proj.as_slice(), &mut self.buf);
        (total - kept).max(0.0)
    }

    fn penalty(&mut self, b: &DMatrix<f64>) -> f64 {
        self.project_w(b)
    }

    fn objective(&mut self, b: &DMatrix<f64>) -> f64 {
        -self.g.dot(b) + 0.5 * self.mu * self.penalty(b)
    }

    /// `Proj_K(Y − ∇f(Y)/μ) = Proj_K(P_W(Y) + G/μ)`.
    fn step(&mut self, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.project_w(y);
        let mut arg = self.buf.clone();
        arg += self.g / self.mu;
        project_psd_trace1_raw(&arg)
    }
}

/// Outcome of a single FISTA run.
struct RunOutcome {
    best: DMatrix<f64>,
    best_value: f64,
    iterations: usize,
}

fn fista_run(
    prob: &mut Problem<'_>,
    init: &DMatrix<f64>,
    cfg: &SolverConfig,
    trace: &mut Vec<f64>,
    best_so_far: f64,
    observer: &mut dyn FnMut(&DMatrix<f64>),
) -> Result<RunOutcome> {
    let mut prev = init.clone();
    let mut y = init.clone();
    let mut z = 1.0f64;
    let mut best = init.clone();
    let mut best_value = prob.objective(init);
    let mut last_value = best_value;
    let mut running_best = best_so_far.min(best_value);
    let mut iterations = 0;
    for _ in 0..cfg.max_iter {
        let b = prob.step(&y)?;
        observer(&b);
        let value = prob.objective(&b);
        if !value.is_finite() {
            return Err(Error::Numerical(format!(
                "objective became non-finite after {iterations} iterations"
            )));
        }
        iterations += 1;
        if value < best_value {
            best_value = value;
            best.copy_from(&b);
        }
        running_best = running_best.min(value);
        trace.push(running_best);
        let z_next = 0.5 * (1.0 + (1.0 + 4.0 * z * z).sqrt());
        let momentum = (z - 1.0) / z_next;
        y = &b + (&b - &prev) * momentum;
        prev = b;
        z = z_next;
        let change = (value - last_value).abs();
        last_value = value;
        if change <= cfg.tol * value.abs().max(1e-300) {
            break;
        }
    }
    Ok(RunOutcome {
        best,
        best_value,
        iterations,
    })
}

/// Top eigenpair of `B` and whether it is degenerate (`λ₁ − λ₂` negligible).
fn top_pair(b: &DMatrix<f64>) -> Result<(DVector<f64>, f64, f64)> {
    let eig = sym_eigen(b)?;
    let n = eig.values.len();
    let l1 = eig.top_value();
    let gap = if n > 1 { l1 - eig.values[n - 2] } else { l1 };
    Ok((eig.top_vector(), l1, gap))
}

/// Restart point for the next majorization-minimization round: `v vᵀ` for
/// the leading unit eigenvector `v` of `B*`. The flag reports a degenerate
/// leading eigenvalue, in which case `v` is only determined up to the
/// eigensolver's deterministic tie-breaking.
pub fn mm_restart(prev: &SolverResult) -> Result<(SymMatrix, bool)> {
    let (v, l1, gap) = top_pair(prev.b_star.matrix())?;
    let degenerate = gap <= 1e-10 * l1.abs().max(1.0);
    Ok((SymMatrix::outer(&v), degenerate))
}

/// FISTA with MM restarts from the barycenter `I/p`.
pub fn fista(g: &SymMatrix, basis: &SubspaceBasis, cfg: &SolverConfig) -> Result<SolverResult> {
    let p = g.dim();
    fista_from(g, basis, cfg, &SymMatrix::identity(p).scale(1.0 / p as f64), &mut |_| {})
}

/// FISTA with MM restarts from a given initial point; `observer` sees every
/// projected iterate.
pub fn fista_from(
    g: &SymMatrix,
    basis: &SubspaceBasis,
    cfg: &SolverConfig,
    init: &SymMatrix,
    observer: &mut dyn FnMut(&DMatrix<f64>),
) -> Result<SolverResult> {
    cfg.validate()?;
    let mu = cfg.mu_for(g);
    solve_with_mu(g, basis.basis(), mu, cfg, init, observer)
}

fn solve_with_mu(
    g: &SymMatrix,
    u: &DMatrix<f64>,
    mu: f64,
    cfg: &SolverConfig,
    init: &SymMatrix,
    observer: &mut dyn FnMut(&DMatrix<f64>),
) -> Result<SolverResult> {
    let p = g.dim();
    if init.dim() != p || u.nrows() != sym_dim(p) {
        return Err(Error::Dimension(format!(
            "G is {p}x{p} but the initial point is {0}x{0} and the basis has {1} rows",
            init.dim(),
            u.nrows()
        )));
    }
    if g.matrix().iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("objective matrix G has non-finite entries".into()));
    }
    let gm = g.matrix();
    let mut prob = Problem::new(gm, u, mu);
    let mut trace = Vec::new();
    let mut start = init.matrix().clone();
    let mut best = start.clone();
    let mut best_value = prob.objective(&start);
    let mut iterations = 0;
    let mut rounds = 0;
    let mut converged = false;
    let mut last_round_value = f64::INFINITY;
    for _ in 0..cfg.mm_rounds {
        let run = fista_run(&mut prob, &start, cfg, &mut trace, best_value, observer)?;
        iterations += run.iterations;
        rounds += 1;
        if run.best_value < best_value {
            best_value = run.best_value;
            best = run.best.clone();
        }
        let round_change = (run.best_value - last_round_value).abs();
        last_round_value = run.best_value;
        if round_change <= cfg.tol * run.best_value.abs().max(1e-300) {
            converged = true;
            break;
        }
        let (v, _, _) = top_pair(&run.best)?;
        start = &v * v.transpose();
    }
    let (top_eigvec, top_eigval, certificate_gap) = top_pair(&best)?;
    let residual = prob.penalty(&best).sqrt();
    Ok(SolverResult {
        b_star: SymMatrix::new(best)?,
        objective_trace: trace,
        top_eigvec,
        top_eigval,
        certificate_gap,
        objective: best_value,
        subspace_residual: residual,
        converged,
        iterations,
        rounds,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GMode {
    Deterministic,
    Random,
}

/// Objective matrix inside the current span. Deterministic mode uses the
/// leading left singular direction of the stacked basis coordinates;
/// with an orthonormal basis every direction is singular, so the first basis
/// element is that direction. Random mode draws a Gaussian combination of the
/// basis elements. Both are normalized to unit Frobenius norm.
pub fn choose_g<R: Rng + ?Sized>(basis: &SubspaceBasis, mode: GMode, rng: &mut R) -> Result<SymMatrix> {
    if basis.is_exhausted() {
        return Err(Error::Exhausted("no directions left to draw G from".into()));
    }
    let u = basis.basis();
    let coords = match mode {
        GMode::Deterministic => u.column(0).into_owned(),
        GMode::Random => {
            let w = DVector::from_fn(u.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
            u * w
        }
    };
    let coords = coords.normalize();
    let mut m = DMatrix::zeros(basis.p(), basis.p());
    read_coords(coords.as_slice(), &mut m);
    SymMatrix::new(m)
}

/// Outcome of the hard-constrained reference solve.
#[derive(Debug, Clone)]
pub struct ReferenceResult {
    pub result: SolverResult,
    /// Residual `‖P_N(B*)‖_F` of the final iterate met the `1e-6` target.
    pub converged: bool,
    /// Index of the nearest atom and its Frobenius distance to `B*`.
    pub nearest_atom: usize,
    pub distance: f64,
    /// `B*` lies within [`REFERENCE_SUCCESS_DIST`] of an atom.
    pub success: bool,
}

pub const REFERENCE_SUCCESS_DIST: f64 = 1e-3;
pub const REFERENCE_RESIDUAL_TOL: f64 = 1e-6;
/// Penalty weights (relative to `‖G‖_F`) used in sequence by the reference
/// solver.
pub const REFERENCE_MU_SCHEDULE: [f64; 3] = [1e2, 1e3, 1e4];

/// Reference solver for `max ⟨G,B⟩ s.t. B ∈ span{dᵢdᵢᵀ}, B ⪰ 0, Tr B = 1`.
///
/// Runs FISTA over the μ schedule with warm starts, and within each stage
/// applies multiplier (augmented Lagrangian) updates `G ← G − μ P_N(B)` so the
/// subspace constraint is met to [`REFERENCE_RESIDUAL_TOL`] rather than only
/// to `O(1/μ)`.
pub fn solve_exact_reference(atoms: &MixingMatrix, g: &SymMatrix) -> Result<ReferenceResult> {
    let basis = population_basis(atoms)?;
    solve_exact_on(&basis, atoms, g)
}

/// As [`solve_exact_reference`] with a precomputed basis; atoms beyond the
/// basis dimension are allowed (the basis is then the span they generate).
pub fn solve_exact_on(basis: &SubspaceBasis, atoms: &MixingMatrix, g: &SymMatrix) -> Result<ReferenceResult> {
    let p = g.dim();
    if atoms.p() != p {
        return Err(Error::Dimension(format!("atoms are {}-dimensional, G is {p}x{p}", atoms.p())));
    }
    let gnorm = g.norm().max(f64::MIN_POSITIVE);
    let u = basis.basis();
    let cfg = SolverConfig {
        mu: None,
        max_iter: 200,
        mm_rounds: 20,
        tol: 1e-12,
        seed: 0,
    };
    let mut current = SymMatrix::identity(p).scale(1.0 / p as f64);
    let mut multiplier = DVector::zeros(sym_dim(p));
    let mut last = None;
    let mut iterations = 0;
    let mut coords = DVector::zeros(sym_dim(p));
    'stages: for &scale in REFERENCE_MU_SCHEDULE.iter() {
        let mu = scale * gnorm;
        for _ in 0..30 {
            let mut shifted = g.matrix().clone();
            let mut lam = DMatrix::zeros(p, p);
            read_coords(multiplier.as_slice(), &mut lam);
            shifted -= lam;
            let g_eff = SymMatrix::new(shifted)?;
            let res = solve_with_mu(&g_eff, u, mu, &cfg, &current, &mut |_| {})?;
            iterations += res.iterations;
            write_coords(res.b_star.matrix(), coords.as_mut_slice());
            let outside = &coords - u * (u.transpose() * &coords);
            multiplier += outside * mu;
            current = res.b_star.clone();
            let done = res.subspace_residual < REFERENCE_RESIDUAL_TOL;
            last = Some(res);
            if done {
                break 'stages;
            }
        }
    }
    let mut result = last.expect("at least one stage runs");
    result.iterations = iterations;
    // Report the objective of the original problem.
    result.objective = -g.inner(&result.b_star);
    let converged = result.subspace_residual < REFERENCE_RESIDUAL_TOL;
    let (nearest_atom, distance) = nearest_atom(&result.b_star, atoms);
    Ok(ReferenceResult {
        success: distance <= REFERENCE_SUCCESS_DIST,
        result,
        converged,
        nearest_atom,
        distance,
    })
}

/// Index and Frobenius distance of the atom closest to `b`.
pub fn nearest_atom(b: &SymMatrix, atoms: &MixingMatrix) -> (usize, f64) {
    (0..atoms.k())
        .map(|i| (i, b.sub(&atoms.atom(i)).norm()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("mixing matrices are nonempty")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_mixing(p: usize, k: usize, seed: u64) -> MixingMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MixingMatrix::normalized(DMatrix::from_fn(p, k, |_, _| rng.sample(StandardNormal))).unwrap()
    }

    fn random_sym(p: usize, rng: &mut ChaCha8Rng) -> SymMatrix {
        SymMatrix::new(DMatrix::from_fn(p, p, |_, _| rng.sample(StandardNormal))).unwrap()
    }

    #[test]
    fn objective_in_w_has_no_penalty() {
        let d = random_mixing(4, 3, 1);
        let basis = population_basis(&d).unwrap();
        let null = basis.null_basis();
        let b = d.atom(0).scale(0.3).add(&d.atom(1).scale(0.7));
        let g = d.atom(2);
        let (value, _) = relax_objective(&b, &g, &null, 100.0).unwrap();
        assert!((value + g.inner(&b)).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = random_mixing(4, 5, 3);
        let null = population_basis(&d).unwrap().null_basis();
        let f1 = {
            let mut m = DMatrix::zeros(4, 4);
            read_coords(null.column(0).as_slice(), &mut m);
            SymMatrix::new(m).unwrap()
        };
        let g = random_sym(4, &mut rng);
        let mu = 7.5;
        let (value, grad) = relax_objective(&f1, &g, &null, mu).unwrap();
        assert!((value - (-g.inner(&f1) + 0.5 * mu)).abs() < 1e-12);
        let dir = random_sym(4, &mut rng);
        let h = 1e-5;
        let (fp, _) = relax_objective(&f1.add(&dir.scale(h)), &g, &null, mu).unwrap();
        let (fm, _) = relax_objective(&f1.sub(&dir.scale(h)), &g, &null, mu).unwrap();
        let fd = (fp - fm) / (2.0 * h);
        let an = grad.inner(&dir);
        assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0));
    }

    #[test]
    fn zero_mu_gradient_is_minus_g() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = random_mixing(3, 2, 5);
        let null = population_basis(&d).unwrap().null_basis();
        let g = random_sym(3, &mut rng);
        let (_, grad) = relax_objective(&random_sym(3, &mut rng), &g, &null, 0.0).unwrap();
        assert!((grad.matrix() + g.matrix()).amax() < 1e-15);
    }

    #[test]
    fn singleton_feasible_set() {
        let d = random_mixing(5, 1, 6);
        let basis = population_basis(&d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = choose_g(&basis, GMode::Random, &mut rng).unwrap();
        let cfg = SolverConfig {
            mu: Some(1e6),
            ..SolverConfig::default()
        };
        let res = fista(&g, &basis, &cfg).unwrap();
        assert!(res.b_star.sub(&d.atom(0)).norm() < 1e-4);
    }

    #[test]
    fn atom_targeted_objective() {
        let d = random_mixing(4, 3, 8);
        let basis = population_basis(&d).unwrap();
        let res = fista(&d.atom(0), &basis, &SolverConfig::default()).unwrap();
        assert!(res.top_eigvec.dot(&d.column(0)).abs() > 0.999);
    }

    #[test]
    fn iterates_stay_in_spectraplex() {
        let d = random_mixing(6, 10, 9);
        let basis = population_basis(&d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let g = choose_g(&basis, GMode::Random, &mut rng).unwrap();
        let mut worst: f64 = 0.0;
        let mut count = 0;
        let init = SymMatrix::identity(6).scale(1.0 / 6.0);
        fista_from(&g, &basis, &SolverConfig::default(), &init, &mut |b| {
            let eig = sym_eigen(b).unwrap();
            worst = worst.max(-eig.values[0]).max((b.trace() - 1.0).abs());
            count += 1;
        })
        .unwrap();
        assert!(count > 0);
        assert!(worst <= 1e-8, "{worst}");
    }

    #[test]
    fn objective_trace_is_monotone() {
        let d = random_mixing(6, 8, 11);
        let basis = population_basis(&d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let g = choose_g(&basis, GMode::Random, &mut rng).unwrap();
        let res = fista(&g, &basis, &SolverConfig::default()).unwrap();
        assert!(res.objective_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn mm_restart_fixed_point_and_degenerate() {
        let d = random_mixing(4, 3, 13);
        let basis = population_basis(&d).unwrap();
        let res = fista(&d.atom(1), &basis, &SolverConfig::default()).unwrap();
        let rank_one = SolverResult {
            b_star: d.atom(1),
            ..res.clone()
        };
        let (next, degenerate) = mm_restart(&rank_one).unwrap();
        assert!(!degenerate);
        assert!(next.sub(&d.atom(1)).norm() < 1e-10);
        let iso = SolverResult {
            b_star: SymMatrix::identity(4).scale(0.25),
            ..res
        };
        let (a, degenerate) = mm_restart(&iso).unwrap();
        assert!(degenerate);
        let (b, _) = mm_restart(&iso).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn choose_g_lies_in_span() {
        let d = random_mixing(5, 6, 14);
        let basis = population_basis(&d).unwrap();
        for mode in [GMode::Deterministic, GMode::Random] {
            let g = choose_g(&basis, mode, &mut ChaCha8Rng::seed_from_u64(15)).unwrap();
            assert!(basis.relative_residual(&g) < 1e-10);
            assert!((g.norm() - 1.0).abs() < 1e-12);
        }
        let a = choose_g(&basis, GMode::Random, &mut ChaCha8Rng::seed_from_u64(16)).unwrap();
        let b = choose_g(&basis, GMode::Random, &mut ChaCha8Rng::seed_from_u64(16)).unwrap();
        assert_eq!(a, b);
        let one = population_basis(&random_mixing(5, 1, 17)).unwrap();
        let g = choose_g(&one, GMode::Deterministic, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!((g.inner(&one.basis_element(0)).abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reference_solver_in_the_orthogonal_case() {
        // Columns of an orthonormal basis: c_i = d_iᵀ G d_i with G = d_j d_jᵀ.
        let q = DMatrix::from_fn(5, 5, |i, j| ((i * 5 + j) as f64 * 0.7).sin()).qr().q();
        let d = MixingMatrix::normalized(q.columns(0, 4).into_owned()).unwrap();
        for j in 0..4 {
            let out = solve_exact_reference(&d, &d.atom(j)).unwrap();
            assert!(out.success, "atom {j}: distance {}", out.distance);
            assert_eq!(out.nearest_atom, j);
            assert!(out.converged);
        }
    }
}
