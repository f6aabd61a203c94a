//! Grayscale mosaics of basis functions: one tile per atom, tiles laid out on
//! a square grid with a one-pixel separator.

use std::path::Path;

use image::{GrayImage, Luma};

use crate::error::{Error, Result};
use crate::gabor::FieldMatrix;

/// Gray level of the separators between tiles.
const SEPARATOR: u8 = 128;

/// Tile `j` holds column `j` of `fields` reshaped to `P × P`, each stretched
/// independently to `[0, 255]`. Constant atoms render mid-gray.
pub fn mosaic(fields: &FieldMatrix) -> Result<GrayImage> {
    let (pixels, atoms) = (fields.pixels(), fields.atoms());
    let p = (pixels as f64).sqrt().round() as usize;
    if p * p != pixels || atoms == 0 {
        return Err(Error::Argument(format!(
            "cannot tile {atoms} atoms of {pixels} pixels"
        )));
    }
    let cols = (atoms as f64).sqrt().ceil() as usize;
    let rows = atoms.div_ceil(cols);
    let step = p + 1;
    let mut img = GrayImage::from_pixel(
        (cols * step + 1) as u32,
        (rows * step + 1) as u32,
        Luma([SEPARATOR]),
    );
    for j in 0..atoms {
        let col = fields.values().column(j);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (ox, oy) = (1 + (j % cols) * step, 1 + (j / cols) * step);
        for (i, v) in col.iter().enumerate() {
            let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
            let level = (t * 255.0).round() as u8;
            img.put_pixel((ox + i % p) as u32, (oy + i / p) as u32, Luma([level]));
        }
    }
    Ok(img)
}

pub fn write_mosaic(fields: &FieldMatrix, path: &Path) -> Result<()> {
    mosaic(fields)?.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}
