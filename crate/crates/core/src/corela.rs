//! Dense linear-algebra primitives: symmetric matrices and their isometric
//! coordinates, row-major flattening, Khatri-Rao products, projections onto the
//! probability simplex and the unit-trace PSD set, and linear assignment.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Dimension of the space of symmetric `p x p` matrices, `p(p+1)/2`.
pub fn sym_dim(p: usize) -> usize {
    p * (p + 1) / 2
}

/// Inverse of [`sym_dim`]; `None` when `m` is not triangular.
pub fn p_from_sym_dim(m: usize) -> Option<usize> {
    let p = (((8 * m + 1) as f64).sqrt() as usize).saturating_sub(1) / 2;
    (p..=p + 1).find(|&q| sym_dim(q) == m)
}

/// A real symmetric matrix. Construction symmetrizes as `(M + Mᵀ)/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

/// Coordinates of a symmetric matrix in an orthonormal basis of the symmetric
/// matrices: diagonal entries as-is, upper off-diagonal entries scaled by √2,
/// ordered row by row over the upper triangle. The Euclidean inner product of
/// two coordinate vectors equals the Frobenius inner product of the matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct SymBasisVector(DVector<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(Self::symmetrized(m))
    }

    pub(crate) fn symmetrized(mut m: DMatrix<f64>) -> Self {
        let p = m.nrows();
        for i in 0..p {
            for j in (i + 1)..p {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        SymMatrix(m)
    }

    pub fn zeros(p: usize) -> Self {
        SymMatrix(DMatrix::zeros(p, p))
    }

    pub fn identity(p: usize) -> Self {
        SymMatrix(DMatrix::identity(p, p))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    /// `v vᵀ`.
    pub fn outer(v: &DVector<f64>) -> Self {
        SymMatrix(v * v.transpose())
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Frobenius inner product.
    pub fn inner(&self, other: &SymMatrix) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn scale(&self, c: f64) -> SymMatrix {
        SymMatrix(&self.0 * c)
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 - &other.0)
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &other.0)
    }

    pub fn to_coords(&self) -> SymBasisVector {
        let mut out = DVector::zeros(sym_dim(self.dim()));
        write_coords(&self.0, out.as_mut_slice());
        SymBasisVector(out)
    }

    pub fn from_coords(c: &SymBasisVector) -> Result<Self> {
        let p = p_from_sym_dim(c.0.len()).ok_or_else(|| {
            Error::Dimension(format!("{} is not a triangular number", c.0.len()))
        })?;
        let mut m = DMatrix::zeros(p, p);
        read_coords(c.0.as_slice(), &mut m);
        Ok(SymMatrix(m))
    }

    /// Eigendecomposition with eigenvalues in ascending order.
    pub fn eigh(&self) -> Result<SymEigen> {
        sym_eigen(&self.0)
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(self.eigh()?.values[0])
    }
}

impl SymBasisVector {
    pub fn new(v: DVector<f64>) -> Result<Self> {
        p_from_sym_dim(v.len()).ok_or_else(|| {
            Error::Dimension(format!("{} is not a triangular number", v.len()))
        })?;
        Ok(SymBasisVector(v))
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_coords(self) -> DVector<f64> {
        self.0
    }

    pub fn dot(&self, other: &SymBasisVector) -> f64 {
        self.0.dot(&other.0)
    }
}

/// Writes the isometric coordinates of the symmetric matrix `m` into `out`.
pub fn write_coords(m: &DMatrix<f64>, out: &mut [f64]) {
    let p = m.nrows();
    let mut idx = 0;
    for i in 0..p {
        out[idx] = m[(i, i)];
        idx += 1;
        for j in (i + 1)..p {
            out[idx] = std::f64::consts::SQRT_2 * m[(i, j)];
            idx += 1;
        }
    }
}

/// Inverse of [`write_coords`]; `m` must already have the right shape.
pub fn read_coords(c: &[f64], m: &mut DMatrix<f64>) {
    let p = m.nrows();
    let mut idx = 0;
    for i in 0..p {
        m[(i, i)] = c[idx];
        idx += 1;
        for j in (i + 1)..p {
            let v = c[idx] * std::f64::consts::FRAC_1_SQRT_2;
            m[(i, j)] = v;
            m[(j, i)] = v;
            idx += 1;
        }
    }
}

/// Eigenpairs of a symmetric matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    /// Unit eigenvector of the largest eigenvalue, sign fixed so that its
    /// largest-magnitude entry is positive.
    pub fn top_vector(&self) -> DVector<f64> {
        let n = self.values.len();
        let mut v = self.vectors.column(n - 1).into_owned();
        canonical_sign(&mut v);
        v
    }

    pub fn top_value(&self) -> f64 {
        self.values[self.values.len() - 1]
    }
}

/// Flips `v` so that its largest-magnitude entry is positive.
pub fn canonical_sign(v: &mut DVector<f64>) {
    let mut best = 0.0;
    for &x in v.iter() {
        if x.abs() > best {
            best = x.abs();
        }
    }
    if let Some(&x) = v.iter().find(|x| x.abs() == best) {
        if x < 0.0 {
            v.neg_mut();
        }
    }
}

/// Symmetric eigendecomposition, ascending eigenvalue order. Ties keep the
/// order produced by the underlying solver, which is deterministic per input.
pub fn sym_eigen(m: &DMatrix<f64>) -> Result<SymEigen> {
    if !m.is_square() {
        return Err(Error::Dimension("eigendecomposition needs a square matrix".into()));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical(format!(
            "eigendecomposition of a {}x{} matrix with non-finite entries",
            m.nrows(),
            m.ncols()
        )));
    }
    let eig = SymmetricEigen::try_new(m.clone(), 1e-15, 10_000).ok_or_else(|| {
        Error::Numerical(format!(
            "symmetric eigensolver did not converge ({}x{}, max |entry| {:.3e})",
            m.nrows(),
            m.ncols(),
            m.amax()
        ))
    })?;
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(SymEigen { values, vectors })
}

/// Row-major flattening: entry `(i, j)` of a `p x q` matrix lands at `i*q + j`,
/// so that `vec(a bᵀ) == khatri_rao(a, b)`.
pub fn vec(m: &DMatrix<f64>) -> DVector<f64> {
    let (p, q) = m.shape();
    DVector::from_fn(p * q, |idx, _| m[(idx / q, idx % q)])
}

/// Inverse of [`vec`].
pub fn mat(v: &DVector<f64>, p: usize, q: usize) -> Result<DMatrix<f64>> {
    if v.len() != p * q {
        return Err(Error::Dimension(format!(
            "cannot reshape a vector of length {} into {}x{}",
            v.len(),
            p,
            q
        )));
    }
    Ok(DMatrix::from_fn(p, q, |i, j| v[i * q + j]))
}

/// Column-wise Kronecker product of `a` (`n x k`) and `b` (`m x k`).
pub fn khatri_rao(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::Dimension(format!(
            "Khatri-Rao factors need equal column counts ({} vs {})",
            a.ncols(),
            b.ncols()
        )));
    }
    let (n, k) = a.shape();
    let m = b.nrows();
    Ok(DMatrix::from_fn(n * m, k, |row, col| {
        a[(row / m, col)] * b[(row % m, col)]
    }))
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Dimension("cannot project an empty vector".into()));
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    Ok(v.iter().map(|&x| (x - theta).max(0.0)).collect())
}

/// Projection onto `{B ⪰ 0, Tr B = 1}`: eigenvalues are projected onto the
/// probability simplex, eigenvectors are kept.
pub fn project_psd_trace1(b: &SymMatrix) -> Result<SymMatrix> {
    Ok(SymMatrix(project_psd_trace1_raw(b.matrix())?))
}

pub(crate) fn project_psd_trace1_raw(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = sym_eigen(b)?;
    let lam = project_simplex(eig.values.as_slice())?;
    let p = b.nrows();
    let mut out = DMatrix::zeros(p, p);
    for (idx, &l) in lam.iter().enumerate() {
        if l > 0.0 {
            let v = eig.vectors.column(idx);
            out.ger(l, &v, &v, 1.0);
        }
    }
    Ok(SymMatrix::symmetrized(out).0)
}

/// A bijection on `0..k`; `map[i]` is the image of `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    map: Vec<usize>,
}

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let k = map.len();
        let mut seen = vec![false; k];
        for &j in &map {
            if j >= k || seen[j] {
                return Err(Error::Input(format!("{map:?} is not a permutation")));
            }
            seen[j] = true;
        }
        Ok(Permutation { map })
    }

    pub fn identity(k: usize) -> Self {
        Permutation {
            map: (0..k).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn apply(&self, i: usize) -> usize {
        self.map[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    /// `Σᵢ cost[i][σ(i)]`.
    pub fn cost(&self, cost: &DMatrix<f64>) -> f64 {
        self.map.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum()
    }
}

/// Minimum-cost perfect assignment on a square cost matrix (Hungarian method
/// with row/column potentials, `O(k³)`).
pub fn hungarian(cost: &DMatrix<f64>) -> Result<Permutation> {
    if !cost.is_square() {
        return Err(Error::Input(format!(
            "assignment needs a square cost matrix, got {}x{}",
            cost.nrows(),
            cost.ncols()
        )));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::Input("assignment costs must be finite".into()));
    }
    let n = cost.nrows();
    if n == 0 {
        return Ok(Permutation::identity(0));
    }
    // 1-based potentials; column 0 is a sentinel.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        col_owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut map = vec![0; n];
    for j in 1..=n {
        map[col_owner[j] - 1] = j - 1;
    }
    Permutation::new(map)
}

/// Orthonormal basis of the orthogonal complement of the column span of `u`,
/// which must have orthonormal columns. Computed from a full Householder QR of
/// `[u | I]`.
pub fn orthonormal_complement(u: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, k) = u.shape();
    if k >= m {
        return DMatrix::zeros(m, 0);
    }
    if k == 0 {
        return DMatrix::identity(m, m);
    }
    let mut aug = DMatrix::zeros(m, k + m);
    aug.view_mut((0, 0), (m, k)).copy_from(u);
    aug.view_mut((0, k), (m, m)).fill_with_identity();
    let q = aug.qr().q();
    let mut comp = q.columns(k, m - k).into_owned();
    // Remove the (tiny) residual overlap with u so the two sets are orthogonal
    // to working precision.
    let overlap = u.transpose() * &comp;
    comp -= u * overlap;
    orthonormalize_columns(&mut comp);
    comp
}

/// Modified Gram-Schmidt with one re-orthogonalization pass, in place.
pub fn orthonormalize_columns(a: &mut DMatrix<f64>) {
    let k = a.ncols();
    for j in 0..k {
        for _ in 0..2 {
            for i in 0..j {
                let r = a.column(i).dot(&a.column(j));
                let ci = a.column(i).into_owned();
                a.column_mut(j).axpy(-r, &ci, 1.0);
            }
        }
        let nrm = a.column(j).norm();
        if nrm > 0.0 {
            a.column_mut(j).scale_mut(1.0 / nrm);
        }
    }
}

/// Singular values of `a`, descending.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Number of singular values above `tol * σ_max`.
pub fn numerical_rank(a: &DMatrix<f64>, tol: f64) -> usize {
    let s = singular_values(a);
    match s.first() {
        Some(&smax) if smax > 0.0 => s.iter().filter(|&&x| x > tol * smax).count(),
        _ => 0,
    }
}

/// Principal angles (radians, ascending) between the column spans of two
/// matrices with orthonormal columns.
pub fn principal_angles(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Vec<f64> {
    let mut s = singular_values(&(u.transpose() * v));
    s.reverse();
    let mut angles: Vec<f64> = s.iter().map(|c| c.clamp(-1.0, 1.0).acos()).collect();
    angles.sort_by(|a, b| a.total_cmp(b));
    angles
}
