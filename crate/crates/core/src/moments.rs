//! Empirical generalized covariances (Hessians of the sample cumulant
//! generating function at probe points) and the flattened fourth-order
//! cumulant.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::corela::{read_coords, sym_dim, write_coords, SymMatrix};
use crate::error::{Error, Result};
use crate::par;

/// A weighted moment is flagged degenerate when one sample carries more than
/// this share of the total weight.
pub const DEGENERATE_WEIGHT_SHARE: f64 = 0.999;

/// Observations as columns of a `p x n` matrix.
#[derive(Debug, Clone)]
pub struct SampleMatrix {
    data: DMatrix<f64>,
    centered: bool,
}

impl SampleMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::Input(format!(
                "sample matrix must be nonempty, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Input(format!(
                "non-finite sample value at row {}, column {}",
                pos % data.nrows(),
                pos / data.nrows()
            )));
        }
        Ok(SampleMatrix {
            data,
            centered: false,
        })
    }

    pub fn p(&self) -> usize {
        self.data.nrows()
    }

    pub fn n(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<f64> {
        self.data
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn row_means(&self) -> DVector<f64> {
        let mut mean = DVector::zeros(self.p());
        for col in self.data.column_iter() {
            mean += col;
        }
        mean / self.n() as f64
    }

    /// Per-row standard deviations (1/n normalization).
    pub fn row_stds(&self) -> DVector<f64> {
        let mean = self.row_means();
        let mut var = DVector::zeros(self.p());
        for col in self.data.column_iter() {
            let d = col - &mean;
            var += d.component_mul(&d);
        }
        (var / self.n() as f64).map(f64::sqrt)
    }

    /// Subtracts the row means.
    pub fn center(&self) -> Result<SampleMatrix> {
        if self.n() < 2 {
            return Err(Error::Input(format!(
                "centering needs at least 2 samples, got {}",
                self.n()
            )));
        }
        let mean = self.row_means();
        let mut data = self.data.clone();
        for mut col in data.column_iter_mut() {
            col -= &mean;
        }
        Ok(SampleMatrix {
            data,
            centered: true,
        })
    }
}

/// Generalized covariance at a single probe.
#[derive(Debug, Clone)]
pub struct GenCov {
    pub t: DVector<f64>,
    pub mean: DVector<f64>,
    pub hessian: SymMatrix,
    /// Largest single-sample share of the exponential weights.
    pub max_weight_share: f64,
    pub degenerate: bool,
}

/// Generalized covariances for a batch of probes, kept in symmetric
/// coordinates so that a large batch never materializes `s` full matrices.
#[derive(Debug, Clone)]
pub struct GenCovStack {
    pub p: usize,
    /// `m x s`, column `j` holds the coordinates of `C(t_j)`.
    pub coords: DMatrix<f64>,
    /// `p x s`, column `j` holds `E(t_j)`.
    pub means: DMatrix<f64>,
    pub max_weight_share: Vec<f64>,
    pub degenerate: Vec<bool>,
}

impl GenCovStack {
    pub fn len(&self) -> usize {
        self.coords.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.ncols() == 0
    }

    pub fn hessian(&self, j: usize) -> SymMatrix {
        let mut m = DMatrix::zeros(self.p, self.p);
        read_coords(self.coords.column(j).as_slice(), &mut m);
        SymMatrix::new(m).expect("square by construction")
    }

    /// Coordinates of the non-degenerate probes only.
    pub fn usable_coords(&self) -> DMatrix<f64> {
        let keep: Vec<usize> = (0..self.len()).filter(|&j| !self.degenerate[j]).collect();
        self.coords.select_columns(&keep)
    }

    /// Like [`usable_coords`](Self::usable_coords) but consumes the stack,
    /// avoiding a copy when no probe is degenerate.
    pub fn into_usable_coords(self) -> DMatrix<f64> {
        if self.degenerate.iter().any(|&d| d) {
            self.usable_coords()
        } else {
            self.coords
        }
    }
}

/// Number of columns processed at once; keeps the `m x chunk` outer-product
/// buffer near 1 MiB.
fn chunk_len(m: usize) -> usize {
    (131_072 / m.max(1)).clamp(64, 4096)
}

/// Fills `z` (`m x len`) with the symmetric coordinates of `x xᵀ` for the
/// columns `start..start+len` of `data`.
fn outer_coords(data: &DMatrix<f64>, start: usize, len: usize, z: &mut DMatrix<f64>) {
    let p = data.nrows();
    let sqrt2 = std::f64::consts::SQRT_2;
    let m = z.nrows();
    let buf = z.as_mut_slice();
    for c in 0..len {
        let x = data.column(start + c);
        let out = &mut buf[c * m..(c + 1) * m];
        let mut idx = 0;
        for i in 0..p {
            let xi = x[i];
            out[idx] = xi * xi;
            idx += 1;
            let s = sqrt2 * xi;
            for j in (i + 1)..p {
                out[idx] = s * x[j];
                idx += 1;
            }
        }
    }
}

fn check_probe(x: &SampleMatrix, t: &DVector<f64>) -> Result<()> {
    if t.len() != x.p() {
        return Err(Error::Dimension(format!(
            "probe has length {} but data dimension is {}",
            t.len(),
            x.p()
        )));
    }
    if t.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("probe vector has non-finite entries".into()));
    }
    Ok(())
}

/// Kernel for a block of probes: two passes over the data, the first for the
/// log-sum-exp shift, the second accumulating weighted first and second
/// moments chunk by chunk.
fn gencov_block(x: &SampleMatrix, probes: &[DVector<f64>]) -> (DMatrix<f64>, DMatrix<f64>, Vec<f64>) {
    let p = x.p();
    let n = x.n();
    let m = sym_dim(p);
    let b = probes.len();
    let data = x.data();
    let mut tmat = DMatrix::zeros(p, b);
    for (j, t) in probes.iter().enumerate() {
        tmat.set_column(j, t);
    }
    let chunk = chunk_len(m);

    // proj[(c, j)] = t_jᵀ x_c for the current chunk.
    let mut shift = vec![f64::NEG_INFINITY; b];
    let mut proj = DMatrix::zeros(chunk, b);
    let mut start = 0;
    while start < n {
        let len = chunk.min(n - start);
        let mut pv = proj.rows_mut(0, len);
        // An explicit transpose of the thin chunk is far cheaper than gemm_tr.
        pv.gemm(1.0, &data.columns(start, len).transpose(), &tmat, 0.0);
        for j in 0..b {
            for c in 0..len {
                shift[j] = shift[j].max(pv[(c, j)]);
            }
        }
        start += len;
    }

    let mut z = DMatrix::zeros(m, chunk);
    let mut second = DMatrix::zeros(m, b);
    let mut first = DMatrix::zeros(p, b);
    let mut total = vec![0.0; b];
    let mut start = 0;
    while start < n {
        let len = chunk.min(n - start);
        let xc = data.columns(start, len);
        let mut pv = proj.rows_mut(0, len);
        pv.gemm(1.0, &xc.transpose(), &tmat, 0.0);
        for j in 0..b {
            for c in 0..len {
                let w = (pv[(c, j)] - shift[j]).exp();
                pv[(c, j)] = w;
                total[j] += w;
            }
        }
        let pv = proj.rows(0, len);
        outer_coords(data, start, len, &mut z);
        second.gemm(1.0, &z.columns(0, len), &pv, 1.0);
        first.gemm(1.0, &xc, &pv, 1.0);
        start += len;
    }

    let sqrt2 = std::f64::consts::SQRT_2;
    let mut share = vec![0.0; b];
    for j in 0..b {
        // The maximizing sample has weight exactly 1 after the shift.
        share[j] = 1.0 / total[j];
        let inv = 1.0 / total[j];
        let mut mean = first.column_mut(j);
        mean *= inv;
        let mean = mean.into_owned();
        let mut col = second.column_mut(j);
        col *= inv;
        let mut idx = 0;
        for i1 in 0..p {
            col[idx] -= mean[i1] * mean[i1];
            idx += 1;
            for i2 in (i1 + 1)..p {
                col[idx] -= sqrt2 * mean[i1] * mean[i2];
                idx += 1;
            }
        }
    }
    (second, first, share)
}

/// Probes handled together by one task in [`gencov_stack`].
const PROBE_BLOCK: usize = 128;

/// Generalized covariances `C(t_j)` and means `E(t_j)` for every probe, in
/// probe order. Blocks of probes are evaluated in parallel.
pub fn gencov_stack(x: &SampleMatrix, probes: &[DVector<f64>]) -> Result<GenCovStack> {
    for t in probes {
        check_probe(x, t)?;
    }
    let p = x.p();
    let m = sym_dim(p);
    let s = probes.len();
    // Each block writes its columns in place, so only one m x s matrix exists.
    let mut coords = DMatrix::zeros(m, s);
    let parts = par::map_chunks_mut(coords.as_mut_slice(), m * PROBE_BLOCK, |i, out| {
        let blk = &probes[i * PROBE_BLOCK..((i + 1) * PROBE_BLOCK).min(s)];
        let (second, first, share) = gencov_block(x, blk);
        out.copy_from_slice(second.as_slice());
        (first, share)
    });
    let mut means = DMatrix::zeros(p, s);
    let mut shares = Vec::with_capacity(s);
    let mut col = 0;
    for (first, share) in parts {
        let b = share.len();
        means.columns_mut(col, b).copy_from(&first);
        shares.extend(share);
        col += b;
    }
    let degenerate: Vec<bool> = shares.iter().map(|&w| w > DEGENERATE_WEIGHT_SHARE).collect();
    let flagged = degenerate.iter().filter(|&&d| d).count();
    if flagged > 0 {
        log::warn!("{flagged} of {s} probes have collapsed exponential weights");
    }
    Ok(GenCovStack {
        p,
        coords,
        means,
        max_weight_share: shares,
        degenerate,
    })
}

/// Generalized covariance at probe `t`:
/// `E(t) = Σ wᵢxᵢ / Σ wᵢ`, `C(t) = Σ wᵢxᵢxᵢᵀ / Σ wᵢ − E(t)E(t)ᵀ`, `wᵢ = exp(tᵀxᵢ)`.
pub fn gencov(x: &SampleMatrix, t: &DVector<f64>) -> Result<GenCov> {
    let stack = gencov_stack(x, std::slice::from_ref(t))?;
    Ok(GenCov {
        t: t.clone(),
        mean: stack.means.column(0).into_owned(),
        hessian: stack.hessian(0),
        max_weight_share: stack.max_weight_share[0],
        degenerate: stack.degenerate[0],
    })
}

/// Evaluates [`gencov`] for every probe.
pub fn gencov_batch(x: &SampleMatrix, probes: &[DVector<f64>]) -> Result<Vec<GenCov>> {
    let stack = gencov_stack(x, probes)?;
    Ok((0..stack.len())
        .map(|j| GenCov {
            t: probes[j].clone(),
            mean: stack.means.column(j).into_owned(),
            hessian: stack.hessian(j),
            max_weight_share: stack.max_weight_share[j],
            degenerate: stack.degenerate[j],
        })
        .collect())
}

/// Sample covariance with 1/n normalization.
pub fn sample_covariance(x: &SampleMatrix) -> SymMatrix {
    let mean = x.row_means();
    let mut cov = x.data() * x.data().transpose() / x.n() as f64;
    cov -= &mean * mean.transpose();
    SymMatrix::new(cov).expect("square by construction")
}

/// `s` i.i.d. Gaussian probes with per-coordinate standard deviation `scale`.
pub fn sample_probes<R: Rng + ?Sized>(
    p: usize,
    s: usize,
    scale: f64,
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    if s == 0 {
        return Err(Error::Input("at least one probe is required".into()));
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::Input(format!("probe scale must be positive, got {scale}")));
    }
    Ok((0..s)
        .map(|_| DVector::from_fn(p, |_, _| scale * rng.sample::<f64, _>(StandardNormal)))
        .collect())
}

/// Default probe scale `1/(√p · σ̄)` with `σ̄` the mean row standard deviation,
/// which keeps `tᵀx` of order one.
pub fn default_probe_scale(x: &SampleMatrix) -> f64 {
    let sigma = x.row_stds().mean();
    let p = x.p() as f64;
    if sigma > 0.0 {
        1.0 / (p.sqrt() * sigma)
    } else {
        1.0 / p.sqrt()
    }
}

/// Flattened fourth-order cumulant: `C[(i₁,i₂),(i₃,i₄)] = cum(x_{i₁},x_{i₂},x_{i₃},x_{i₄})`,
/// rows and columns indexed by the row-major pair index `i·p + j`.
#[derive(Debug, Clone)]
pub struct Cum4Flattening {
    pub p: usize,
    pub c: DMatrix<f64>,
}

impl Cum4Flattening {
    /// Restriction to symmetric coordinates: `SᵀCS` where `S` maps symmetric
    /// coordinates to row-major flattenings. `S` has orthonormal columns, so the
    /// column space of this `m x m` matrix is the column space of `C` expressed
    /// in symmetric coordinates.
    pub fn sym_restriction(&self) -> DMatrix<f64> {
        let p = self.p;
        let pairs = sym_pairs(p);
        let m = pairs.len();
        let sqrt2 = std::f64::consts::SQRT_2;
        DMatrix::from_fn(m, m, |a, b| {
            let (i1, i2) = pairs[a];
            let (i3, i4) = pairs[b];
            let sa = if i1 == i2 { 1.0 } else { sqrt2 };
            let sb = if i3 == i4 { 1.0 } else { sqrt2 };
            sa * sb * self.c[(i1 * p + i2, i3 * p + i4)]
        })
    }
}

/// Upper-triangle index pairs in symmetric-coordinate order.
pub fn sym_pairs(p: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(sym_dim(p));
    for i in 0..p {
        for j in i..p {
            out.push((i, j));
        }
    }
    out
}

/// Plug-in estimate of the flattened fourth-order cumulant:
/// `E[x₁x₂x₃x₄] − E[x₁x₂]E[x₃x₄] − E[x₁x₃]E[x₂x₄] − E[x₁x₄]E[x₂x₃]`.
///
/// The fourth moments are accumulated in symmetric coordinates, `E[z zᵀ]` with
/// `z` the coordinates of `x xᵀ`, which holds every distinct moment once.
pub fn cum4_flattening(x: &SampleMatrix) -> Result<Cum4Flattening> {
    let n = x.n();
    if n < 4 {
        return Err(Error::Input(format!(
            "fourth-order cumulant needs at least 4 samples, got {n}"
        )));
    }
    let p = x.p();
    let m = sym_dim(p);
    let chunk = chunk_len(m);
    let starts: Vec<usize> = (0..n).step_by(chunk).collect();
    let data = x.data();
    // Partial sums are grouped so that at most one m x m accumulator per worker
    // is alive at a time.
    let groups = par::threads().max(1);
    let per_group = starts.len().div_ceil(groups);
    let group_starts: Vec<&[usize]> = starts.chunks(per_group.max(1)).collect();
    let partials = par::map_slice(&group_starts, |group| {
        let mut acc = DMatrix::zeros(m, m);
        let mut z = DMatrix::zeros(m, chunk);
        for &start in group.iter() {
            let len = chunk.min(n - start);
            outer_coords(data, start, len, &mut z);
            let zc = z.columns(0, len);
            acc.gemm(1.0, &zc, &zc.transpose(), 1.0);
        }
        acc
    });
    let mut moments = DMatrix::zeros(m, m);
    for part in partials {
        moments += part;
    }
    moments /= n as f64;

    let cov = sample_covariance(x);
    let s = cov.matrix();
    let mean = x.row_means();
    let pairs = sym_pairs(p);
    let mut index = vec![0usize; p * p];
    for (a, &(i, j)) in pairs.iter().enumerate() {
        index[i * p + j] = a;
        index[j * p + i] = a;
    }
    let sqrt2 = std::f64::consts::SQRT_2;
    let scale = |i: usize, j: usize| if i == j { 1.0 } else { sqrt2 };
    // Second moments E[x_i x_j] (equal to the covariance for centered data).
    let second = s + &mean * mean.transpose();
    let p2 = p * p;
    let mut c = DMatrix::zeros(p2, p2);
    for col in 0..p2 {
        let (i3, i4) = (col / p, col % p);
        let b = index[col];
        let sb = scale(i3, i4);
        for row in 0..p2 {
            let (i1, i2) = (row / p, row % p);
            let a = index[row];
            let fourth = moments[(a, b)] / (scale(i1, i2) * sb);
            c[(row, col)] = fourth
                - second[(i1, i2)] * second[(i3, i4)]
                - second[(i1, i3)] * second[(i2, i4)]
                - second[(i1, i4)] * second[(i2, i3)];
        }
    }
    if !x.is_centered() && mean.amax() > 0.0 {
        log::debug!("fourth-order cumulant computed on uncentered data");
    }
    let c = SymMatrix::new(c)?.into_matrix();
    Ok(Cum4Flattening { p, c })
}

/// Symmetric coordinates of `x xᵀ` for one observation.
pub fn outer_coords_of(x: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(sym_dim(x.len()));
    write_coords(&(x * x.transpose()), out.as_mut_slice());
    out
}

/// `E[α⁴] − 3E[α²]²` with empirical moments, after removing the sample mean.
pub fn kurtosis(sample: &[f64]) -> Result<f64> {
    let n = sample.len();
    if n < 4 {
        return Err(Error::Input(format!("kurtosis needs at least 4 samples, got {n}")));
    }
    let mean = sample.iter().sum::<f64>() / n as f64;
    let (mut m2, mut m4) = (0.0, 0.0);
    for &a in sample {
        let d = (a - mean) * (a - mean);
        m2 += d;
        m4 += d * d;
    }
    m2 /= n as f64;
    m4 /= n as f64;
    Ok(m4 - 3.0 * m2 * m2)
}
