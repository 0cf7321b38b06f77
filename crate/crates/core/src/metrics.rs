//! Estimation quality: permutation-matched Frobenius and angle errors and the
//! perfect-recovery vector.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::corela::{hungarian, Permutation};
use crate::error::{Error, Result};
use crate::mixing::MixingMatrix;

/// `acos(0.99)`, about 8.1°.
pub fn default_recovery_angle() -> f64 {
    0.99f64.acos()
}

fn check_shapes(d: &MixingMatrix, e: &MixingMatrix) -> Result<()> {
    if d.p() != e.p() || d.k() != e.k() {
        return Err(Error::Input(format!(
            "shape mismatch: truth is {}x{}, estimate is {}x{}",
            d.p(),
            d.k(),
            e.p(),
            e.k()
        )));
    }
    Ok(())
}

/// `|⟨dᵢ, d̂ⱼ⟩| / (‖dᵢ‖‖d̂ⱼ‖)` for all pairs.
fn abs_cosines(d: &MixingMatrix, e: &MixingMatrix) -> DMatrix<f64> {
    let g = d.matrix().transpose() * e.matrix();
    DMatrix::from_fn(d.k(), e.k(), |i, j| {
        let nrm = d.matrix().column(i).norm() * e.matrix().column(j).norm();
        (g[(i, j)].abs() / nrm).min(1.0)
    })
}

fn angle_costs(d: &MixingMatrix, e: &MixingMatrix) -> DMatrix<f64> {
    abs_cosines(d, e).map(f64::acos)
}

/// Matching of truth columns to estimate columns, with the per-pair angles.
#[derive(Debug, Clone)]
pub struct Matching {
    pub permutation: Permutation,
    /// `acos(γ)` for each truth column under the permutation.
    pub angles: Vec<f64>,
}

/// The assignment minimizing the summed angle error.
pub fn angle_matching(d: &MixingMatrix, e: &MixingMatrix) -> Result<Matching> {
    check_shapes(d, e)?;
    let cost = angle_costs(d, e);
    let permutation = hungarian(&cost)?;
    let angles = (0..d.k()).map(|i| cost[(i, permutation.apply(i))]).collect();
    Ok(Matching { permutation, angles })
}

/// `min_σ ‖D − D̂_σ‖²_F / ‖D‖²_F`. With `sign_align` each matched column may
/// also be negated.
pub fn f_error(d: &MixingMatrix, e: &MixingMatrix, sign_align: bool) -> Result<f64> {
    check_shapes(d, e)?;
    let (dm, em) = (d.matrix(), e.matrix());
    let cost = DMatrix::from_fn(d.k(), e.k(), |i, j| {
        let plus = (dm.column(i) - em.column(j)).norm_squared();
        if sign_align {
            plus.min((dm.column(i) + em.column(j)).norm_squared())
        } else {
            plus
        }
    });
    let perm = hungarian(&cost)?;
    Ok(perm.cost(&cost) / dm.norm_squared())
}

/// `(2/(kπ)) min_σ Σᵢ acos(|⟨dᵢ, d̂_σ(i)⟩| / (‖dᵢ‖‖d̂_σ(i)‖))`, in `[0, 1]`.
pub fn a_error(d: &MixingMatrix, e: &MixingMatrix) -> Result<f64> {
    let m = angle_matching(d, e)?;
    Ok(2.0 / (d.k() as f64 * PI) * m.angles.iter().sum::<f64>())
}

/// a-error for an estimate with fewer columns than the truth (a partial
/// deflation result): unmatched truth columns count as orthogonal (π/2).
pub fn a_error_partial(d: &MixingMatrix, e: &MixingMatrix) -> Result<f64> {
    if d.p() != e.p() || e.k() > d.k() {
        return Err(Error::Input(format!(
            "estimate {}x{} cannot be matched against truth {}x{}",
            e.p(),
            e.k(),
            d.p(),
            d.k()
        )));
    }
    let k = d.k();
    let real = angle_costs(d, e);
    let cost = DMatrix::from_fn(k, k, |i, j| if j < e.k() { real[(i, j)] } else { PI / 2.0 });
    let perm = hungarian(&cost)?;
    Ok(2.0 / (k as f64 * PI) * perm.cost(&cost))
}

/// Count of truth columns recovered within `theta` under the a-error-optimal
/// matching. Estimates with fewer columns are padded with orthogonal
/// (never recovered) dummies for the matching.
pub fn perfect_count(d: &MixingMatrix, e: &MixingMatrix, theta: f64) -> Result<usize> {
    if d.p() != e.p() || e.k() > d.k() {
        return Err(Error::Input(format!(
            "estimate {}x{} cannot be matched against truth {}x{}",
            e.p(),
            e.k(),
            d.p(),
            d.k()
        )));
    }
    let k = d.k();
    let real = angle_costs(d, e);
    let cost = DMatrix::from_fn(k, k, |i, j| if j < e.k() { real[(i, j)] } else { PI / 2.0 });
    let perm = hungarian(&cost)?;
    Ok((0..k)
        .filter(|&i| {
            let j = perm.apply(i);
            j < e.k() && cost[(i, j)] <= theta
        })
        .count())
}

/// `r[i]` is the fraction of runs that recovered at least `i + 1` columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryVector {
    pub k: usize,
    pub r: Vec<f64>,
}

impl RecoveryVector {
    pub fn from_counts(k: usize, counts: &[usize]) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::Input("recovery vector needs at least one run".into()));
        }
        if let Some(&c) = counts.iter().find(|&&c| c > k) {
            return Err(Error::Input(format!("run recovered {c} of only {k} columns")));
        }
        let n = counts.len() as f64;
        let r = (1..=k)
            .map(|i| counts.iter().filter(|&&c| c >= i).count() as f64 / n)
            .collect();
        Ok(RecoveryVector { k, r })
    }
}

/// Recovery vector over repeated estimates of the same `D`.
pub fn recovery_vector(d: &MixingMatrix, runs: &[MixingMatrix], theta: f64) -> Result<RecoveryVector> {
    let counts = runs
        .iter()
        .map(|e| perfect_count(d, e, theta))
        .collect::<Result<Vec<_>>>()?;
    RecoveryVector::from_counts(d.k(), &counts)
}
