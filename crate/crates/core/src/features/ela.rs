//! Error level analysis: residual between a raster and its JPEG re-encode.

use std::io::Cursor;

use image::codecs::jpeg::JpegEncoder;
use image::{ExtendedColorType, GrayImage, ImageFormat};

use super::{FeatureMap, FeatureMethodId, FeatureVector, VectorTag};
use crate::{Error, Result};

pub const DEFAULT_ELA_QUALITY: u8 = 70;

/// Encodes a single-channel raster as baseline JPEG at `quality` and decodes
/// it again.
pub fn jpeg_round_trip(image: &GrayImage, quality: u8) -> Result<GrayImage> {
    if !(1..=100).contains(&quality) {
        return Err(Error::InvalidParam(format!(
            "JPEG quality {quality} not in [1, 100]"
        )));
    }
    let mut buf = Vec::new();
    JpegEncoder::new_with_quality(&mut buf, quality)
        .encode(
            image.as_raw(),
            image.width(),
            image.height(),
            ExtendedColorType::L8,
        )
        .map_err(|e| Error::extractor("ELA", format!("encode: {e}")))?;
    let decoded = image::load(Cursor::new(&buf), ImageFormat::Jpeg)
        .map_err(|e| Error::extractor("ELA", format!("decode: {e}")))?;
    Ok(decoded.to_luma8())
}

/// Per-pixel `|original - recompressed|`.
///
/// The vector holds the raw residual. The map holds the residual amplified
/// by `255 / max(max_residual, 1)` and displays over `[0, 255]`.
pub fn extract_ela(image: &GrayImage, quality: u8) -> Result<(FeatureMap, FeatureVector)> {
    let recompressed = jpeg_round_trip(image, quality)?;
    let residual: Vec<f64> = image
        .as_raw()
        .iter()
        .zip(recompressed.as_raw())
        .map(|(&a, &b)| (a as f64 - b as f64).abs())
        .collect();
    let peak = residual.iter().copied().fold(0.0, f64::max).max(1.0);
    let gain = 255.0 / peak;
    let amplified: Vec<f64> = residual.iter().map(|r| r * gain).collect();
    let map =
        FeatureMap::new(image.width(), image.height(), 1, amplified).with_display_range(0.0, 255.0);
    Ok((
        map,
        FeatureVector::new(residual, VectorTag::Single(FeatureMethodId::Ela)),
    ))
}
