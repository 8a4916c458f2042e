//! Frequency-domain extractors: 2-D DFT log-magnitude and orthonormal DCT-II.

use image::GrayImage;
use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::{FeatureMap, FeatureMethodId, FeatureVector, VectorTag};

fn as_f64(image: &GrayImage) -> Vec<f64> {
    image.as_raw().iter().map(|&p| p as f64).collect()
}

/// Unnormalised 2-D DFT of a row-major plane.
pub fn fft2(values: &[f64], width: usize, height: usize) -> Vec<Complex64> {
    assert_eq!(values.len(), width * height);
    let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft_forward(width);
    for row in data.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_forward(height);
    let mut column = vec![Complex64::default(); height];
    for x in 0..width {
        for y in 0..height {
            column[y] = data[y * width + x];
        }
        col_fft.process(&mut column);
        for y in 0..height {
            data[y * width + x] = column[y];
        }
    }
    data
}

/// Moves the zero-frequency cell to `(width / 2, height / 2)`.
pub fn fftshift<T: Copy>(values: &[T], width: usize, height: usize) -> Vec<T> {
    let mut out = values.to_vec();
    for y in 0..height {
        let ny = (y + height / 2) % height;
        for x in 0..width {
            let nx = (x + width / 2) % width;
            out[ny * width + nx] = values[y * width + x];
        }
    }
    out
}

/// Centred log-magnitude spectrum `ln(1 + |F|)`.
pub fn extract_dft(image: &GrayImage) -> (FeatureMap, FeatureVector) {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let spectrum = fft2(&as_f64(image), w, h);
    let log_mag: Vec<f64> = spectrum.iter().map(|c| c.norm().ln_1p()).collect();
    let shifted = fftshift(&log_mag, w, h);
    let vector = FeatureVector::new(shifted.clone(), VectorTag::Single(FeatureMethodId::Dft));
    (FeatureMap::new(w as u32, h as u32, 1, shifted), vector)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DctMode {
    Whole,
    /// Independent n×n blocks; edge blocks are truncated.
    Blockwise(usize),
}

/// Orthonormal DCT-II basis, `basis[k][i]` row-major.
fn dct_matrix(n: usize) -> DMatrix<f64> {
    let scale0 = (1.0 / n as f64).sqrt();
    let scale = (2.0 / n as f64).sqrt();
    DMatrix::from_fn(n, n, |k, i| {
        let s = if k == 0 { scale0 } else { scale };
        s * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos()
    })
}

fn transform_block(block: &DMatrix<f64>, inverse: bool) -> DMatrix<f64> {
    let dh = dct_matrix(block.nrows());
    let dw = dct_matrix(block.ncols());
    if inverse {
        dh.transpose() * block * dw
    } else {
        dh * block * dw.transpose()
    }
}

fn apply(values: &[f64], width: usize, height: usize, mode: DctMode, inverse: bool) -> Vec<f64> {
    assert_eq!(values.len(), width * height);
    match mode {
        DctMode::Whole => {
            let m = DMatrix::from_row_slice(height, width, values);
            transform_block(&m, inverse).transpose().as_slice().to_vec()
        }
        DctMode::Blockwise(n) => {
            assert!(n > 0);
            let mut out = vec![0.0; values.len()];
            for by in (0..height).step_by(n) {
                let bh = n.min(height - by);
                for bx in (0..width).step_by(n) {
                    let bw = n.min(width - bx);
                    let block = DMatrix::from_fn(bh, bw, |r, c| values[(by + r) * width + bx + c]);
                    let t = transform_block(&block, inverse);
                    for r in 0..bh {
                        for c in 0..bw {
                            out[(by + r) * width + bx + c] = t[(r, c)];
                        }
                    }
                }
            }
            out
        }
    }
}

/// Forward orthonormal 2-D DCT-II of a row-major plane.
pub fn dct2(values: &[f64], width: usize, height: usize, mode: DctMode) -> Vec<f64> {
    apply(values, width, height, mode, false)
}

/// Inverse of [`dct2`] (orthonormal DCT-III).
pub fn idct2(coeffs: &[f64], width: usize, height: usize, mode: DctMode) -> Vec<f64> {
    apply(coeffs, width, height, mode, true)
}

/// `ln(1 + |C|)` of the DCT-II coefficients.
pub fn extract_dct2(image: &GrayImage, mode: DctMode) -> (FeatureMap, FeatureVector) {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let coeffs = dct2(&as_f64(image), w, h, mode);
    let log_mag: Vec<f64> = coeffs.iter().map(|c| c.abs().ln_1p()).collect();
    let vector = FeatureVector::new(log_mag.clone(), VectorTag::Single(FeatureMethodId::Dct2));
    (FeatureMap::new(w as u32, h as u32, 1, log_mag), vector)
}
