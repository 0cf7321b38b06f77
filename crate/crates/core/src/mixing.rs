use nalgebra::{DMatrix, DVector};

use crate::corela::{sym_dim, write_coords, SymMatrix};
use crate::error::{Error, Result};

/// Columns must have unit norm to within this tolerance.
pub const UNIT_NORM_TOL: f64 = 1e-12;

/// A `p x k` mixing matrix with unit-norm columns.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    d: DMatrix<f64>,
}

impl MixingMatrix {
    /// Wraps `d`, which must already have unit-norm columns.
    pub fn new(d: DMatrix<f64>) -> Result<Self> {
        if d.nrows() == 0 || d.ncols() == 0 {
            return Err(Error::Input(format!(
                "mixing matrix must be nonempty, got {}x{}",
                d.nrows(),
                d.ncols()
            )));
        }
        for (j, c) in d.column_iter().enumerate() {
            let nrm = c.norm();
            if !nrm.is_finite() || (nrm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::Input(format!(
                    "column {j} of the mixing matrix has norm {nrm}, expected 1"
                )));
            }
        }
        Ok(MixingMatrix { d })
    }

    /// Rescales every column to unit norm.
    pub fn normalized(mut d: DMatrix<f64>) -> Result<Self> {
        for (j, mut c) in d.column_iter_mut().enumerate() {
            let nrm = c.norm();
            if !(nrm.is_finite() && nrm > 0.0) {
                return Err(Error::Input(format!("column {j} has norm {nrm}, cannot normalize")));
            }
            c /= nrm;
        }
        Self::new(d)
    }

    pub fn from_columns(cols: &[DVector<f64>]) -> Result<Self> {
        if cols.is_empty() {
            return Err(Error::Input("mixing matrix needs at least one column".into()));
        }
        Self::normalized(DMatrix::from_columns(cols))
    }

    pub fn p(&self) -> usize {
        self.d.nrows()
    }

    pub fn k(&self) -> usize {
        self.d.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.d
    }

    pub fn column(&self, i: usize) -> DVector<f64> {
        self.d.column(i).into_owned()
    }

    /// The atom `dᵢdᵢᵀ`.
    pub fn atom(&self, i: usize) -> SymMatrix {
        SymMatrix::outer(&self.column(i))
    }

    /// `m x k` matrix whose columns are the symmetric coordinates of the atoms.
    pub fn atom_coords(&self) -> DMatrix<f64> {
        let p = self.p();
        let mut out = DMatrix::zeros(sym_dim(p), self.k());
        for i in 0..self.k() {
            let c = self.d.column(i);
            let atom = &c * c.transpose();
            write_coords(&atom, out.column_mut(i).as_mut_slice());
        }
        out
    }
}
