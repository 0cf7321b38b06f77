//! Orthonormal bases of the atom span `W = span{dᵢdᵢᵀ}` in symmetric
//! coordinates, and of its orthogonal complement.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::corela::{orthonormal_complement, orthonormalize_columns, p_from_sym_dim, read_coords, singular_values, sym_dim, SymEigen, SymMatrix};
use crate::error::{Error, Result};
use crate::mixing::MixingMatrix;
use crate::moments::Cum4Flattening;

/// σ_k/σ_{k+1} below this triggers a rank-gap warning.
pub const RANK_GAP_WARN: f64 = 2.0;
/// Gram-eigenvalue ratio below which atoms count as linearly dependent.
pub const DEPENDENT_ATOMS_TOL: f64 = 1e-10;
/// Default relative tolerance for a found atom to count as lying in `W`.
pub const DEFAULT_MEMBERSHIP_TOL: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisSource {
    Gencov,
    Cum4,
    Population,
}

/// Orthonormal basis of (the current deflated version of) `W`, as the columns
/// of an `m x dim` matrix in symmetric coordinates. The complement basis
/// `{F_j}` is derived on demand by [`SubspaceBasis::null_basis`].
#[derive(Debug, Clone)]
pub struct SubspaceBasis {
    p: usize,
    basis: DMatrix<f64>,
    /// Basis before any deflation; found atoms are checked against it.
    origin: DMatrix<f64>,
    source: BasisSource,
    /// Singular values (or |eigenvalues|) of the input, descending.
    pub spectrum: Vec<f64>,
    pub warnings: Vec<String>,
    /// Number of atoms moved to the complement by deflation.
    pub deflated: usize,
}

impl SubspaceBasis {
    /// Builds from a matrix whose columns are orthonormal symmetric coordinates.
    pub fn from_orthonormal(basis: DMatrix<f64>, source: BasisSource) -> Result<Self> {
        let p = p_from_sym_dim(basis.nrows())
            .ok_or_else(|| Error::Dimension(format!("{} is not a triangular number", basis.nrows())))?;
        if basis.ncols() > basis.nrows() {
            return Err(Error::Dimension(format!(
                "{} basis vectors exceed the dimension {}",
                basis.ncols(),
                basis.nrows()
            )));
        }
        Ok(SubspaceBasis {
            p,
            origin: basis.clone(),
            basis,
            source,
            spectrum: Vec::new(),
            warnings: Vec::new(),
            deflated: 0,
        })
    }

    /// The whole space of symmetric `p x p` matrices.
    pub fn full_space(p: usize, source: BasisSource) -> Self {
        let m = sym_dim(p);
        SubspaceBasis {
            p,
            basis: DMatrix::identity(m, m),
            origin: DMatrix::identity(m, m),
            source,
            spectrum: vec![1.0; m],
            warnings: Vec::new(),
            deflated: 0,
        }
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn m(&self) -> usize {
        sym_dim(self.p)
    }

    /// Current (effective) dimension.
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn is_exhausted(&self) -> bool {
        self.dim() == 0
    }

    pub fn source(&self) -> BasisSource {
        self.source
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Orthonormal basis of the complement, `m x (m − dim)`.
    pub fn null_basis(&self) -> DMatrix<f64> {
        orthonormal_complement(&self.basis)
    }

    pub fn basis_element(&self, i: usize) -> SymMatrix {
        coords_to_sym(self.p, self.basis.column(i).as_slice())
    }

    /// Orthogonal projection of coordinates onto the span.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.basis * (self.basis.transpose() * v)
    }

    /// `‖v − P_W v‖`.
    pub fn residual(&self, v: &DVector<f64>) -> f64 {
        (v - self.project(v)).norm()
    }

    /// `‖A − P_W A‖_F / ‖A‖_F` for a symmetric matrix.
    pub fn relative_residual(&self, a: &SymMatrix) -> f64 {
        let v = a.to_coords().into_coords();
        let nrm = v.norm();
        if nrm == 0.0 {
            0.0
        } else {
            self.residual(&v) / nrm
        }
    }

    /// Largest entry of `[U N]ᵀ[U N] − I`.
    pub fn orthonormality_defect(&self) -> f64 {
        let m = self.m();
        let null = self.null_basis();
        let mut full = DMatrix::zeros(m, m);
        full.columns_mut(0, self.dim()).copy_from(&self.basis);
        full.columns_mut(self.dim(), m - self.dim()).copy_from(&null);
        (full.transpose() * full - DMatrix::<f64>::identity(m, m)).amax()
    }

    /// The undeflated span this basis started from.
    pub fn origin(&self) -> &DMatrix<f64> {
        &self.origin
    }

    /// Moves found atoms into the complement ("adds them to the null basis"):
    /// the current span becomes its intersection with the orthogonal
    /// complement of each atom. Atoms farther than `tol` (relative) from the
    /// undeflated span, or with no component left in the current span, are
    /// rejected.
    pub fn augment_null(&self, found: &[SymMatrix], tol: f64) -> Result<SubspaceBasis> {
        let mut out = self.clone();
        for (idx, atom) in found.iter().enumerate() {
            if atom.dim() != self.p {
                return Err(Error::Dimension(format!(
                    "atom {idx} is {}x{}, basis is for p = {}",
                    atom.dim(),
                    atom.dim(),
                    self.p
                )));
            }
            if out.is_exhausted() {
                return Err(Error::Exhausted(format!(
                    "cannot remove atom {idx}: the subspace is already exhausted"
                )));
            }
            let a = atom.to_coords().into_coords();
            let nrm = a.norm();
            if nrm == 0.0 {
                return Err(Error::Deflation(format!("atom {idx} is zero")));
            }
            let rel = (&a - &self.origin * (self.origin.transpose() * &a)).norm() / nrm;
            if rel > tol {
                return Err(Error::Deflation(format!(
                    "atom {idx} lies outside the subspace (relative residual {rel:.3e} > {tol:.3e})"
                )));
            }
            let c = out.basis.transpose() * &a;
            if c.norm() < 1e-6 * nrm {
                return Err(Error::Deflation(format!(
                    "atom {idx} has no component left in the deflated subspace"
                )));
            }
            let dir = DMatrix::from_column_slice(c.len(), 1, c.normalize().as_slice());
            let keep = orthonormal_complement(&dir);
            out.basis = &out.basis * keep;
            out.deflated += 1;
        }
        if out.is_exhausted() {
            out.warnings.push("subspace exhausted after deflation".into());
        }
        Ok(out)
    }
}

fn coords_to_sym(p: usize, c: &[f64]) -> SymMatrix {
    let mut m = DMatrix::zeros(p, p);
    read_coords(c, &mut m);
    SymMatrix::new(m).expect("square by construction")
}

/// Top-`k` left singular vectors of `a` (`m x s`) and all singular values,
/// descending. Reduces to a square problem through a QR factorization first.
/// Smallest `σ_k / σ_1` for which the Gram route below is accurate enough;
/// below it the top directions come from a QR-based SVD instead.
const GRAM_MIN_RATIO: f64 = 1e-4;

/// Top-`k` left singular vectors and the full spectrum, descending.
///
/// Works on the Gram matrix of the shorter side, which needs `min(m, s)²`
/// memory instead of several `m x s` copies. The error in the returned
/// directions is about `ε σ₁² / (σ_k² − σ_{k+1}²)`, so ill-conditioned
/// inputs fall back to [`svd_left_singular`].
fn top_left_singular(a: &DMatrix<f64>, k: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let (m, s) = a.shape();
    let gram = if s <= m { a.tr_mul(a) } else { a * a.transpose() };
    if gram.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("singular values are not finite".into()));
    }
    let eig = nalgebra::SymmetricEigen::try_new(gram, 1e-15, 10_000)
        .ok_or_else(|| Error::Numerical("Gram eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let sv: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0).sqrt()).collect();
    let k = k.min(order.len());
    if k > 0 && sv[k - 1] < GRAM_MIN_RATIO * sv[0] {
        return svd_left_singular(a, k);
    }
    let mut u = DMatrix::zeros(m, k);
    for (c, &i) in order[..k].iter().enumerate() {
        let v = eig.eigenvectors.column(i);
        if s <= m {
            u.set_column(c, &(a * v / sv[c]));
        } else {
            u.set_column(c, &v);
        }
    }
    orthonormalize_columns(&mut u);
    Ok((u, sv))
}

fn svd_left_singular(a: &DMatrix<f64>, k: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let (m, s) = a.shape();
    let (u, sv) = if s <= m {
        let qr = a.clone().qr();
        let q = qr.q();
        let r = qr.r();
        let svd = r.svd(true, false);
        let ur = svd.u.ok_or_else(|| Error::Numerical("SVD failed to produce vectors".into()))?;
        (q * ur, svd.singular_values)
    } else {
        // A = (QR)ᵀ = RᵀQᵀ, so the left singular vectors of A are those of Rᵀ.
        let qr = a.transpose().qr();
        let rt = qr.r().transpose();
        let svd = rt.svd(true, false);
        let u = svd.u.ok_or_else(|| Error::Numerical("SVD failed to produce vectors".into()))?;
        (u, svd.singular_values)
    };
    if sv.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("singular values are not finite".into()));
    }
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let top = u.select_columns(&order[..k.min(order.len())]);
    Ok((top, order.iter().map(|&i| sv[i]).collect()))
}

fn rank_gap_warning(spectrum: &[f64], k: usize, m: usize) -> Option<String> {
    if k == 0 || k >= m || k >= spectrum.len() {
        return None;
    }
    let (a, b) = (spectrum[k - 1], spectrum[k]);
    if a == 0.0 || a < RANK_GAP_WARN * b {
        Some(format!(
            "weak rank gap at k = {k}: σ_k = {a:.3e}, σ_(k+1) = {b:.3e}"
        ))
    } else {
        None
    }
}

/// Span of the top-`k` left singular directions of stacked coordinates
/// (`m x s`, one column per generalized covariance).
pub fn basis_from_stack(stack: &DMatrix<f64>, k: usize, source: BasisSource) -> Result<SubspaceBasis> {
    let m = stack.nrows();
    p_from_sym_dim(m).ok_or_else(|| Error::Dimension(format!("{m} is not a triangular number")))?;
    if k == 0 || k > m {
        return Err(Error::Input(format!("k = {k} must lie in 1..={m}")));
    }
    if stack.ncols() < k {
        return Err(Error::Input(format!(
            "{} matrices cannot span a {k}-dimensional subspace",
            stack.ncols()
        )));
    }
    let (u, spectrum) = top_left_singular(stack, k)?;
    let mut out = SubspaceBasis::from_orthonormal(u, source)?;
    if let Some(w) = rank_gap_warning(&spectrum, k, m) {
        log::warn!("{w}");
        out.warnings.push(w);
    }
    out.spectrum = spectrum;
    Ok(out)
}

/// Step I from generalized covariances `H_j = C(t_j)`.
pub fn basis_from_gencovs(hs: &[SymMatrix], k: usize) -> Result<SubspaceBasis> {
    let p = hs
        .first()
        .map(|h| h.dim())
        .ok_or_else(|| Error::Input("no generalized covariances given".into()))?;
    let m = sym_dim(p);
    let mut stack = DMatrix::zeros(m, hs.len());
    for (j, h) in hs.iter().enumerate() {
        if h.dim() != p {
            return Err(Error::Dimension(format!("matrix {j} is {0}x{0}, expected {p}x{p}", h.dim())));
        }
        stack.set_column(j, h.to_coords().coords());
    }
    basis_from_stack(&stack, k, BasisSource::Gencov)
}

/// Step I from the cumulant flattening: leading `k` eigenvectors (by absolute
/// eigenvalue, since kurtoses may have either sign) of its restriction to
/// symmetric coordinates.
pub fn basis_from_cum4(c: &Cum4Flattening, k: usize) -> Result<SubspaceBasis> {
    let m = sym_dim(c.p);
    if k == 0 || k > m {
        return Err(Error::Input(format!("k = {k} must lie in 1..={m}")));
    }
    let restricted = c.sym_restriction();
    let SymEigen { values, vectors } = crate::corela::sym_eigen(&restricted)?;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| values[j].abs().total_cmp(&values[i].abs()));
    let basis = vectors.select_columns(&order[..k]);
    let spectrum: Vec<f64> = order.iter().map(|&i| values[i].abs()).collect();
    let mut out = SubspaceBasis::from_orthonormal(basis, BasisSource::Cum4)?;
    if let Some(w) = rank_gap_warning(&spectrum, k, m) {
        log::warn!("{w}");
        out.warnings.push(w);
    }
    out.spectrum = spectrum;
    Ok(out)
}

/// Exact basis of `span{dᵢdᵢᵀ}` from a known mixing matrix.
pub fn population_basis(d: &MixingMatrix) -> Result<SubspaceBasis> {
    let (p, k) = (d.p(), d.k());
    let m = sym_dim(p);
    if k > m {
        return Err(Error::Input(format!(
            "k = {k} atoms cannot be independent in dimension m = {m}"
        )));
    }
    let a = d.atom_coords();
    let sv = singular_values(&a);
    let ratio = (sv[k - 1] / sv[0]).powi(2);
    if !(ratio >= DEPENDENT_ATOMS_TOL) {
        return Err(Error::Assumption(format!(
            "atoms are linearly dependent (Gram eigenvalue ratio {ratio:.3e})"
        )));
    }
    let q = a.qr().q();
    let mut out = SubspaceBasis::from_orthonormal(q, BasisSource::Population)?;
    out.spectrum = sv;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corela::principal_angles;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_mixing(p: usize, k: usize, seed: u64) -> MixingMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MixingMatrix::normalized(DMatrix::from_fn(p, k, |_, _| rng.sample(StandardNormal))).unwrap()
    }

    fn max_atom_residual(b: &SubspaceBasis, d: &MixingMatrix) -> f64 {
        (0..d.k())
            .map(|i| b.relative_residual(&d.atom(i)))
            .fold(0.0, f64::max)
    }

    #[test]
    fn single_atom_basis() {
        let d = MixingMatrix::new(DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0])).unwrap();
        let b = population_basis(&d).unwrap();
        assert_eq!(b.dim(), 1);
        assert_eq!(b.null_basis().ncols(), 5);
        assert!((b.basis()[(0, 0)].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn population_basis_contains_atoms() {
        let d = random_mixing(10, 25, 1);
        let b = population_basis(&d).unwrap();
        assert!(max_atom_residual(&b, &d) < 1e-10);
        assert!(b.orthonormality_defect() < 1e-10);
        let null = b.null_basis();
        let atoms = d.atom_coords();
        assert!((null.transpose() * atoms).amax() < 1e-8);
    }

    #[test]
    fn duplicated_column_is_rejected() {
        let d = random_mixing(4, 3, 2);
        let mut m = d.matrix().clone();
        let c0 = m.column(0).into_owned();
        m.set_column(2, &c0);
        let d = MixingMatrix::new(m).unwrap();
        assert!(matches!(population_basis(&d), Err(Error::Assumption(_))));
    }

    #[test]
    fn full_space_boundary() {
        let d = random_mixing(4, 10, 3);
        let b = population_basis(&d).unwrap();
        assert_eq!(b.dim(), 10);
        assert_eq!(b.null_basis().ncols(), 0);
        assert!(matches!(population_basis(&random_mixing(4, 11, 3)), Err(Error::Input(_))));
    }

    #[test]
    fn gencov_basis_from_exact_atoms() {
        let d = random_mixing(5, 7, 4);
        let atoms: Vec<SymMatrix> = (0..7).map(|i| d.atom(i)).collect();
        let b = basis_from_gencovs(&atoms, 7).unwrap();
        assert!(max_atom_residual(&b, &d) < 1e-10);
        assert!(b.orthonormality_defect() < 1e-10);
        assert_eq!(b.source(), BasisSource::Gencov);
    }

    #[test]
    fn gencov_basis_from_population_covariances() {
        // C(t) = Σ ωᵢ(t) dᵢdᵢᵀ with the generalized variance of a uniform
        // source on [−1/2, 1/2]: the second derivative of log(sinh(u/2)/(u/2)).
        let (p, k) = (6, 12);
        let d = random_mixing(p, k, 5);
        let omega = |u: f64| {
            if u.abs() < 1e-4 {
                1.0 / 12.0 - u * u / 240.0
            } else {
                1.0 / (u * u) - 0.25 / (u / 2.0).sinh().powi(2)
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let hs: Vec<SymMatrix> = (0..10 * k)
            .map(|_| {
                let t = DVector::from_fn(p, |_, _| 3.0 * rng.sample::<f64, _>(StandardNormal));
                let mut h = SymMatrix::zeros(p);
                for i in 0..k {
                    h = h.add(&d.atom(i).scale(omega(d.column(i).dot(&t))));
                }
                h
            })
            .collect();
        let b = basis_from_gencovs(&hs, k).unwrap();
        assert!(max_atom_residual(&b, &d) < 1e-8);
        assert!(b.warnings.is_empty());
    }

    #[test]
    fn random_full_rank_input_has_empty_complement() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let hs: Vec<SymMatrix> = (0..12)
            .map(|_| SymMatrix::new(DMatrix::from_fn(3, 3, |_, _| rng.sample(StandardNormal))).unwrap())
            .collect();
        let b = basis_from_gencovs(&hs, 6).unwrap();
        assert_eq!(b.null_basis().ncols(), 0);
    }

    fn population_cum4(d: &MixingMatrix, kappa: &[f64]) -> Cum4Flattening {
        let a = crate::corela::khatri_rao(d.matrix(), d.matrix()).unwrap();
        let c = &a * DMatrix::from_diagonal(&DVector::from_column_slice(kappa)) * a.transpose();
        Cum4Flattening { p: d.p(), c }
    }

    #[test]
    fn cum4_basis_from_population_cumulant() {
        let d = random_mixing(4, 5, 8);
        let b = basis_from_cum4(&population_cum4(&d, &[1.0; 5]), 5).unwrap();
        assert!(max_atom_residual(&b, &d) < 1e-8);

        let mixed = [-1.2, 3.0, -1.2, 3.0, -0.5];
        let b2 = basis_from_cum4(&population_cum4(&d, &mixed), 5).unwrap();
        assert!(max_atom_residual(&b2, &d) < 1e-8);

        let b3 = basis_from_cum4(&population_cum4(&d, &[1.0; 5]), 7).unwrap();
        assert!(!b3.warnings.is_empty());
    }

    #[test]
    fn gencov_and_cum4_bases_agree() {
        let d = random_mixing(4, 6, 9);
        let atoms: Vec<SymMatrix> = (0..6).map(|i| d.atom(i).scale(1.0 + i as f64)).collect();
        let g = basis_from_gencovs(&atoms, 6).unwrap();
        let c = basis_from_cum4(&population_cum4(&d, &[1.0, -2.0, 0.5, 3.0, -1.0, 2.0]), 6).unwrap();
        let angles = principal_angles(g.basis(), c.basis());
        assert!(angles.iter().all(|&a| a < 1e-6), "{angles:?}");
    }

    #[test]
    fn too_few_matrices_is_an_input_error() {
        let d = random_mixing(3, 2, 10);
        let atoms: Vec<SymMatrix> = (0..2).map(|i| d.atom(i)).collect();
        assert!(matches!(basis_from_gencovs(&atoms, 3), Err(Error::Input(_))));
    }

    #[test]
    fn augment_null_removes_atoms() {
        let d = random_mixing(5, 6, 11);
        let b = population_basis(&d).unwrap();
        let same = b.augment_null(&[], DEFAULT_MEMBERSHIP_TOL).unwrap();
        assert_eq!(same.dim(), 6);
        assert!((same.basis() - b.basis()).amax() == 0.0);

        let one = b.augment_null(&[d.atom(0)], DEFAULT_MEMBERSHIP_TOL).unwrap();
        assert_eq!(one.dim(), 5);
        assert_eq!(one.deflated, 1);
        assert!(one.orthonormality_defect() < 1e-10);
        // The removed atom is now orthogonal to the remaining span.
        assert!(one.project(&d.atom(0).to_coords().into_coords()).norm() < 1e-10);
        // Adding it twice is inconsistent.
        assert!(matches!(
            one.augment_null(&[d.atom(0)], DEFAULT_MEMBERSHIP_TOL),
            Err(Error::Deflation(_))
        ));

        let all: Vec<SymMatrix> = (0..6).map(|i| d.atom(i)).collect();
        let empty = b.augment_null(&all, DEFAULT_MEMBERSHIP_TOL).unwrap();
        assert!(empty.is_exhausted());
        assert!(!empty.warnings.is_empty());
        assert!(matches!(empty.augment_null(&[d.atom(0)], 1.0), Err(Error::Exhausted(_))));
    }

    #[test]
    fn augment_null_rejects_outside_atom() {
        let d = random_mixing(5, 4, 12);
        let b = population_basis(&d).unwrap();
        let stranger = random_mixing(5, 1, 13).atom(0);
        assert!(b.relative_residual(&stranger) > 0.5);
        assert!(matches!(
            b.augment_null(&[stranger], DEFAULT_MEMBERSHIP_TOL),
            Err(Error::Deflation(_))
        ));
    }
}
