//! Matrix files: the binary container and CSV.
//!
//! Container layout (all little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "OICA"
//! 4       1     version (1)
//! 5       8     rows (u64)
//! 13      8     cols (u64)
//! 21      8·r·c entries (f64), column-major
//! ```
//!
//! Column-major order keeps each observation (a column of a sample matrix)
//! contiguous, so samples can be streamed one column at a time.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::CliError;

pub const MAGIC: &[u8; 4] = b"OICA";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: u64 = 21;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    if e.kind() == std::io::ErrorKind::NotFound {
        CliError::Input(format!("{}: file not found", path.display()))
    } else {
        CliError::Input(format!("{}: {e}", path.display()))
    }
}

/// Incremental writer for the container; columns are appended in order.
pub struct ContainerWriter {
    out: BufWriter<File>,
    rows: usize,
    cols: usize,
    written: usize,
    path: std::path::PathBuf,
}

impl ContainerWriter {
    pub fn create(path: &Path, rows: usize, cols: usize) -> Result<Self, CliError> {
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        let mut out = BufWriter::with_capacity(1 << 20, file);
        let mut header = Vec::with_capacity(HEADER_LEN as usize);
        header.extend_from_slice(MAGIC);
        header.push(VERSION);
        header.extend_from_slice(&(rows as u64).to_le_bytes());
        header.extend_from_slice(&(cols as u64).to_le_bytes());
        out.write_all(&header).map_err(|e| io_err(path, e))?;
        Ok(ContainerWriter {
            out,
            rows,
            cols,
            written: 0,
            path: path.to_path_buf(),
        })
    }

    pub fn push_column(&mut self, col: &[f64]) -> Result<(), CliError> {
        if col.len() != self.rows || self.written == self.cols {
            return Err(CliError::Other(anyhow::anyhow!(
                "container column {} of length {} does not fit a {}x{} matrix",
                self.written,
                col.len(),
                self.rows,
                self.cols
            )));
        }
        for x in col {
            self.out.write_all(&x.to_le_bytes()).map_err(|e| io_err(&self.path, e))?;
        }
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        if self.written != self.cols {
            return Err(CliError::Other(anyhow::anyhow!(
                "container closed after {} of {} columns",
                self.written,
                self.cols
            )));
        }
        self.out.flush().map_err(|e| io_err(&self.path, e))
    }
}

pub fn write_container(path: &Path, m: &DMatrix<f64>) -> Result<(), CliError> {
    let mut w = ContainerWriter::create(path, m.nrows(), m.ncols())?;
    for c in m.column_iter() {
        w.push_column(c.as_slice())?;
    }
    w.finish()
}

pub fn read_container(path: &Path) -> Result<DMatrix<f64>, CliError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let len = file.metadata().map_err(|e| io_err(path, e))?.len();
    let mut r = BufReader::with_capacity(1 << 20, file);
    let fmt = |msg: String| CliError::Format(format!("{}: {msg}", path.display()));
    if len < HEADER_LEN {
        return Err(fmt(format!("{len} bytes is shorter than the {HEADER_LEN}-byte header")));
    }
    let mut header = [0u8; HEADER_LEN as usize];
    r.read_exact(&mut header).map_err(|e| io_err(path, e))?;
    if &header[..4] != MAGIC {
        return Err(fmt("missing OICA magic bytes".into()));
    }
    if header[4] != VERSION {
        return Err(fmt(format!("unsupported container version {}", header[4])));
    }
    let rows = u64::from_le_bytes(header[5..13].try_into().expect("8 bytes"));
    let cols = u64::from_le_bytes(header[13..21].try_into().expect("8 bytes"));
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(HEADER_LEN));
    if expected != Some(len) {
        return Err(fmt(format!(
            "header declares {rows}x{cols} but the file has {len} bytes"
        )));
    }
    let n = (rows * cols) as usize;
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes).map_err(|e| io_err(path, e))?;
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    Ok(DMatrix::from_vec(rows as usize, cols as usize, data))
}

/// Reads only the dimensions of a container.
pub fn container_dims(path: &Path) -> Result<(usize, usize), CliError> {
    let mut file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut header = [0u8; HEADER_LEN as usize];
    file.read_exact(&mut header)
        .map_err(|_| CliError::Format(format!("{}: truncated header", path.display())))?;
    if &header[..4] != MAGIC {
        return Err(CliError::Format(format!("{}: missing OICA magic bytes", path.display())));
    }
    let rows = u64::from_le_bytes(header[5..13].try_into().expect("8 bytes"));
    let cols = u64::from_le_bytes(header[13..21].try_into().expect("8 bytes"));
    Ok((rows as usize, cols as usize))
}

/// Reads the given columns (strictly increasing indices) of a container
/// without loading the rest.
pub fn read_columns(path: &Path, cols: &[usize]) -> Result<DMatrix<f64>, CliError> {
    let (rows, ncols) = container_dims(path)?;
    let len = std::fs::metadata(path).map_err(|e| io_err(path, e))?.len();
    if HEADER_LEN + (rows * ncols * 8) as u64 != len {
        return Err(CliError::Format(format!(
            "{}: header declares {rows}x{ncols} but the file has {len} bytes",
            path.display()
        )));
    }
    if cols.windows(2).any(|w| w[0] >= w[1]) || cols.last().is_some_and(|&c| c >= ncols) {
        return Err(CliError::Input(format!(
            "column selection must be increasing and below {ncols}"
        )));
    }
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::with_capacity(1 << 16, file);
    let stride = (rows * 8) as i64;
    let mut pos = 0usize;
    r.seek_relative(HEADER_LEN as i64).map_err(|e| io_err(path, e))?;
    let mut data = Vec::with_capacity(rows * cols.len());
    let mut buf = vec![0u8; rows * 8];
    for &c in cols {
        r.seek_relative((c - pos) as i64 * stride).map_err(|e| io_err(path, e))?;
        r.read_exact(&mut buf).map_err(|e| io_err(path, e))?;
        data.extend(buf.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))));
        pos = c + 1;
    }
    Ok(DMatrix::from_vec(rows, cols.len(), data))
}

/// One matrix row per CSV line, no header.
pub fn write_csv(path: &Path, m: &DMatrix<f64>) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(BufWriter::new(file));
    for row in m.row_iter() {
        w.write_record(row.iter().map(|x| format!("{x:e}")))
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_csv(path: &Path) -> Result<DMatrix<f64>, CliError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let fmt = |msg: String| CliError::Format(format!("{}: {msg}", path.display()));
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| fmt(e.to_string()))?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| fmt(format!("line {}: {s:?} is not a number", i + 1))))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 {
        return Err(fmt("empty matrix".into()));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(fmt("rows have different lengths".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Reads a container, or CSV when the extension is `.csv`.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>, CliError> {
    if is_csv(path) {
        read_csv(path)
    } else {
        read_container(path)
    }
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<(), CliError> {
    if is_csv(path) {
        write_csv(path, m)
    } else {
        write_container(path, m)
    }
}
