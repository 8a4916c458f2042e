use image::GrayImage;
use nalgebra::{DMatrix, SVD};

use super::{FeatureMap, FeatureMethodId, FeatureVector, VectorTag};
use crate::{Error, Result};

pub const DEFAULT_SVD_RANK: usize = 20;

const MAX_SWEEPS: usize = 100_000;

fn pixel_matrix(image: &GrayImage) -> DMatrix<f64> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    DMatrix::from_fn(h, w, |r, c| image.as_raw()[r * w + c] as f64)
}

fn decompose(a: DMatrix<f64>, vectors: bool) -> Result<SVD<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    SVD::try_new(a, vectors, vectors, f64::EPSILON, MAX_SWEEPS)
        .ok_or_else(|| Error::extractor("SVD", "decomposition did not converge"))
}

fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

/// Singular values of the pixel matrix, largest first.
pub fn singular_values(image: &GrayImage) -> Result<Vec<f64>> {
    let svd = decompose(pixel_matrix(image), false)?;
    let s = svd.singular_values.as_slice();
    Ok(descending_order(s).into_iter().map(|i| s[i]).collect())
}

/// Map: `|A - A_k|` for the rank-`k` truncation. Vector: `ln(1 + sigma_i)`
/// over the full spectrum, largest first.
pub fn extract_svd(image: &GrayImage, k: usize) -> Result<(FeatureMap, FeatureVector)> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let full = w.min(h);
    if k == 0 || k > full {
        return Err(Error::InvalidParam(format!(
            "SVD rank {k} not in [1, {full}]"
        )));
    }
    let a = pixel_matrix(image);
    let svd = decompose(a.clone(), true)?;
    let (u, vt) = match (&svd.u, &svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::extractor("SVD", "singular vectors missing")),
    };
    let sigma = svd.singular_values.as_slice();
    let order = descending_order(sigma);

    let mut approx = DMatrix::<f64>::zeros(h, w);
    for &i in order.iter().take(k) {
        approx += sigma[i] * u.column(i) * vt.row(i);
    }
    let residual: Vec<f64> = (0..h)
        .flat_map(|r| {
            let a = &a;
            let approx = &approx;
            (0..w).map(move |c| (a[(r, c)] - approx[(r, c)]).abs())
        })
        .collect();
    let spectrum: Vec<f64> = order.iter().map(|&i| sigma[i].ln_1p()).collect();
    Ok((
        FeatureMap::new(w as u32, h as u32, 1, residual),
        FeatureVector::new(spectrum, VectorTag::Single(FeatureMethodId::Svd)),
    ))
}
