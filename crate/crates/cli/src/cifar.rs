//! CIFAR-10 binary batches and 7×7 grayscale patch extraction.
//!
//! A record is one label byte followed by three 32×32 planes (red, green,
//! blue), each row-major. Every pixel at least three pixels from the border
//! is a patch center, giving 26×26 = 676 patches per image.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::formats::ContainerWriter;

pub const SIDE: usize = 32;
pub const RECORD_LEN: usize = 1 + 3 * SIDE * SIDE;
pub const PATCH_SIDE: usize = 7;
pub const PATCH_DIM: usize = PATCH_SIDE * PATCH_SIDE;
const HALF: usize = PATCH_SIDE / 2;
/// Patch centers per axis.
pub const CENTERS: usize = SIDE - 2 * HALF;
pub const PATCHES_PER_IMAGE: usize = CENTERS * CENTERS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gray {
    /// 0.299 R + 0.587 G + 0.114 B
    #[default]
    Luma,
    Mean,
}

/// Grayscale image in [0, 1], row-major.
pub fn to_gray(record: &[u8], gray: Gray) -> Vec<f64> {
    let plane = SIDE * SIDE;
    let (r, g, b) = (&record[1..1 + plane], &record[1 + plane..1 + 2 * plane], &record[1 + 2 * plane..]);
    (0..plane)
        .map(|i| {
            let (r, g, b) = (f64::from(r[i]), f64::from(g[i]), f64::from(b[i]));
            let y = match gray {
                Gray::Luma => 0.299 * r + 0.587 * g + 0.114 * b,
                Gray::Mean => (r + g + b) / 3.0,
            };
            y / 255.0
        })
        .collect()
}

/// Calls `emit` with each patch of a grayscale image, centers in row-major
/// order, patch pixels row-major.
pub fn for_each_patch(img: &[f64], mut emit: impl FnMut(&[f64]) -> Result<(), CliError>) -> Result<(), CliError> {
    let mut patch = [0.0; PATCH_DIM];
    for ci in HALF..SIDE - HALF {
        for cj in HALF..SIDE - HALF {
            for di in 0..PATCH_SIDE {
                let row = (ci + di - HALF) * SIDE + cj - HALF;
                patch[di * PATCH_SIDE..(di + 1) * PATCH_SIDE].copy_from_slice(&img[row..row + PATCH_SIDE]);
            }
            emit(&patch)?;
        }
    }
    Ok(())
}

/// Number of images in a batch file, checking its size.
pub fn batch_images(path: &Path) -> Result<usize, CliError> {
    let len = std::fs::metadata(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        .len();
    if len == 0 || len % RECORD_LEN as u64 != 0 {
        return Err(CliError::Format(format!(
            "{}: {len} bytes is not a positive multiple of the {RECORD_LEN}-byte CIFAR-10 record",
            path.display()
        )));
    }
    Ok((len / RECORD_LEN as u64) as usize)
}

/// Streams every patch of `input` into a container at `output`; returns the
/// number of patches written.
pub fn extract_patches(input: &Path, output: &Path, gray: Gray) -> Result<usize, CliError> {
    let images = batch_images(input)?;
    let n = images * PATCHES_PER_IMAGE;
    let file = File::open(input).map_err(|e| CliError::Input(format!("{}: {e}", input.display())))?;
    let mut r = BufReader::with_capacity(1 << 20, file);
    let mut w = ContainerWriter::create(output, PATCH_DIM, n)?;
    let mut record = vec![0u8; RECORD_LEN];
    for i in 0..images {
        r.read_exact(&mut record)
            .map_err(|e| CliError::Format(format!("{}: record {i}: {e}", input.display())))?;
        let img = to_gray(&record, gray);
        for_each_patch(&img, |p| w.push_column(p))?;
    }
    w.finish()?;
    Ok(n)
}
