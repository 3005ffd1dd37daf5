//! Grayscale slice export.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::CliError;

/// Maps `[lo, hi]` linearly onto 8-bit gray, clamping outside values.
pub fn to_gray(img: &[f64], lo: f64, hi: f64) -> Vec<u8> {
    let span = if hi > lo { hi - lo } else { 1.0 };
    img.iter()
        .map(|&v| (255.0 * ((v - lo) / span).clamp(0.0, 1.0)).round() as u8)
        .collect()
}

pub fn write_slice_png(
    path: &Path,
    img: &[f64],
    width: usize,
    height: usize,
    lo: f64,
    hi: f64,
) -> Result<(), CliError> {
    let w = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(w, width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let encode_err = |e: png::EncodingError| CliError::Io(std::io::Error::other(e));
    let mut writer = enc.write_header().map_err(encode_err)?;
    writer
        .write_image_data(&to_gray(img, lo, hi))
        .map_err(encode_err)?;
    writer.finish().map_err(encode_err)?;
    Ok(())
}
