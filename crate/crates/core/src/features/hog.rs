//! Histogram of oriented gradients on a fixed 10×12 cell grid, with a glyph
//! rendering of the per-cell orientation histograms.

use image::GrayImage;

use super::{FeatureMap, FeatureMethodId, FeatureVector, VectorTag};

pub const HOG_CELLS_X: usize = 10;
pub const HOG_CELLS_Y: usize = 12;
/// Unsigned orientation bins over [0°, 180°), centred at 0°, 20°, …, 160°.
pub const HOG_BINS: usize = 9;
/// Cells per block side used for normalisation.
const BLOCK: usize = 3;
const EPS: f64 = 1e-6;

fn cell_bounds(extent: usize, cells: usize) -> Vec<usize> {
    (0..=cells).map(|i| i * extent / cells).collect()
}

/// Raw per-cell orientation histograms (magnitude-weighted, linear
/// interpolation between the two nearest bin centres), cell-row-major.
pub fn hog_cell_histograms(image: &GrayImage) -> Vec<[f64; HOG_BINS]> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let px = |x: usize, y: usize| image.as_raw()[y * w + x] as f64;
    let xs = cell_bounds(w, HOG_CELLS_X);
    let ys = cell_bounds(h, HOG_CELLS_Y);
    let mut cells = vec![[0.0; HOG_BINS]; HOG_CELLS_X * HOG_CELLS_Y];
    let bin_width = 180.0 / HOG_BINS as f64;
    for cy in 0..HOG_CELLS_Y {
        for cx in 0..HOG_CELLS_X {
            let hist = &mut cells[cy * HOG_CELLS_X + cx];
            for y in ys[cy]..ys[cy + 1] {
                for x in xs[cx]..xs[cx + 1] {
                    let gx = px((x + 1).min(w - 1), y) - px(x.saturating_sub(1), y);
                    let gy = px(x, (y + 1).min(h - 1)) - px(x, y.saturating_sub(1));
                    let mag = gx.hypot(gy);
                    if mag == 0.0 {
                        continue;
                    }
                    let mut angle = gy.atan2(gx).to_degrees();
                    if angle < 0.0 {
                        angle += 180.0;
                    }
                    if angle >= 180.0 {
                        angle -= 180.0;
                    }
                    let pos = angle / bin_width;
                    let lo = pos.floor() as usize % HOG_BINS;
                    let hi = (lo + 1) % HOG_BINS;
                    let frac = pos - pos.floor();
                    hist[lo] += mag * (1.0 - frac);
                    hist[hi] += mag * frac;
                }
            }
        }
    }
    cells
}

/// Each cell histogram divided by the L2 norm of the 3×3 cell block centred
/// on it (clamped at the grid edge). Dim 10 × 12 × 9 = 1080.
fn block_normalise(cells: &[[f64; HOG_BINS]]) -> Vec<f64> {
    let r = BLOCK as isize / 2;
    let mut out = Vec::with_capacity(cells.len() * HOG_BINS);
    for cy in 0..HOG_CELLS_Y as isize {
        for cx in 0..HOG_CELLS_X as isize {
            let mut energy = 0.0;
            for by in (cy - r).max(0)..=(cy + r).min(HOG_CELLS_Y as isize - 1) {
                for bx in (cx - r).max(0)..=(cx + r).min(HOG_CELLS_X as isize - 1) {
                    energy += cells[(by * HOG_CELLS_X as isize + bx) as usize]
                        .iter()
                        .map(|v| v * v)
                        .sum::<f64>();
                }
            }
            let norm = (energy + EPS * EPS).sqrt();
            out.extend(
                cells[(cy * HOG_CELLS_X as isize + cx) as usize]
                    .iter()
                    .map(|v| v / norm),
            );
        }
    }
    out
}

/// Draws, per cell, one stroke per bin through the cell centre. A stroke
/// runs perpendicular to its gradient orientation (along the edge) and its
/// intensity is the bin weight relative to the strongest bin in the image.
fn render_glyphs(cells: &[[f64; HOG_BINS]], width: usize, height: usize) -> Vec<f64> {
    let mut canvas = vec![0.0f64; width * height];
    let peak = cells
        .iter()
        .flat_map(|c| c.iter())
        .copied()
        .fold(0.0, f64::max);
    if peak <= 0.0 {
        return canvas;
    }
    let xs = cell_bounds(width, HOG_CELLS_X);
    let ys = cell_bounds(height, HOG_CELLS_Y);
    for cy in 0..HOG_CELLS_Y {
        for cx in 0..HOG_CELLS_X {
            let (x0, x1, y0, y1) = (xs[cx], xs[cx + 1], ys[cy], ys[cy + 1]);
            if x1 <= x0 || y1 <= y0 {
                continue;
            }
            let centre = ((x0 + x1 - 1) as f64 / 2.0, (y0 + y1 - 1) as f64 / 2.0);
            let half = ((x1 - x0).min(y1 - y0) as f64 - 1.0) / 2.0;
            for (b, &v) in cells[cy * HOG_CELLS_X + cx].iter().enumerate() {
                if v <= 0.0 {
                    continue;
                }
                let strength = v / peak;
                let theta = ((b as f64) * 180.0 / HOG_BINS as f64 + 90.0).to_radians();
                let (dx, dy) = (theta.cos(), theta.sin());
                let steps = (2.0 * half).ceil() as isize * 2;
                for s in -steps..=steps {
                    let t = s as f64 * half / steps.max(1) as f64;
                    let x = (centre.0 + t * dx).round();
                    let y = (centre.1 + t * dy).round();
                    if x < x0 as f64 || y < y0 as f64 || x >= x1 as f64 || y >= y1 as f64 {
                        continue;
                    }
                    let idx = y as usize * width + x as usize;
                    canvas[idx] = canvas[idx].max(strength);
                }
            }
        }
    }
    canvas
}

/// Block-normalised descriptor (dim 1080) and glyph map.
pub fn extract_hog(image: &GrayImage) -> (FeatureMap, FeatureVector) {
    let cells = hog_cell_histograms(image);
    let descriptor = block_normalise(&cells);
    let (w, h) = (image.width() as usize, image.height() as usize);
    let glyphs = render_glyphs(&cells, w, h);
    (
        FeatureMap::new(w as u32, h as u32, 1, glyphs).with_display_range(0.0, 1.0),
        FeatureVector::new(descriptor, VectorTag::Single(FeatureMethodId::Hog)),
    )
}
