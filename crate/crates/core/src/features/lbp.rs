//! Uniform local binary patterns with P = 8 circular neighbours.

use std::sync::OnceLock;

use image::GrayImage;
use serde::{Deserialize, Serialize};

use super::{FeatureMap, FeatureMethodId, FeatureVector, VectorTag};
use crate::{Error, Result};

/// Alphabet size: 58 uniform patterns plus one shared non-uniform label.
pub const ULBP_BINS: usize = 59;
/// Label shared by every non-uniform pattern.
pub const ULBP_OTHER: u8 = 58;

const POINTS: usize = 8;
const STRIPS: usize = 8;

/// A pattern is uniform when its circular bit string has at most two
/// 0/1 transitions.
pub fn is_uniform(code: u8) -> bool {
    (code ^ code.rotate_left(1)).count_ones() <= 2
}

fn label_table() -> &'static [u8; 256] {
    static TABLE: OnceLock<[u8; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [ULBP_OTHER; 256];
        let mut next = 0u8;
        for code in 0..=255u8 {
            if is_uniform(code) {
                t[code as usize] = next;
                next += 1;
            }
        }
        debug_assert_eq!(next, 58);
        t
    })
}

/// Histogram label of an 8-bit pattern: uniform patterns are numbered
/// 0..=57 in ascending code order, the rest map to [`ULBP_OTHER`].
pub fn uniform_label(code: u8) -> u8 {
    label_table()[code as usize]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LbpParams {
    pub points: u32,
    pub radius: u32,
    pub uniform: bool,
}

impl LbpParams {
    pub fn new(radius: u32) -> Result<Self> {
        if !(1..=8).contains(&radius) {
            return Err(Error::InvalidParam(format!(
                "LBP radius {radius} not in [1, 8]"
            )));
        }
        Ok(Self {
            points: POINTS as u32,
            radius,
            uniform: true,
        })
    }
}

/// Bilinear taps `(dx, dy, weight)` for each neighbour.
fn neighbour_taps(radius: u32) -> Vec<Vec<(isize, isize, f64)>> {
    let r = radius as f64;
    (0..POINTS)
        .map(|p| {
            let theta = 2.0 * std::f64::consts::PI * p as f64 / POINTS as f64;
            let snap = |v: f64| {
                if (v - v.round()).abs() < 1e-9 {
                    v.round()
                } else {
                    v
                }
            };
            let dx = snap(r * theta.cos());
            let dy = snap(-r * theta.sin());
            let (x0, y0) = (dx.floor(), dy.floor());
            let (fx, fy) = (dx - x0, dy - y0);
            [
                (0, 0, (1.0 - fx) * (1.0 - fy)),
                (1, 0, fx * (1.0 - fy)),
                (0, 1, (1.0 - fx) * fy),
                (1, 1, fx * fy),
            ]
            .into_iter()
            .filter(|t| t.2 != 0.0)
            .map(|(ox, oy, w)| (x0 as isize + ox, y0 as isize + oy, w))
            .collect()
        })
        .collect()
}

/// Per-pixel uniform-LBP labels over the interior (a border of width R is
/// excluded, so the map is `(w - 2R) x (h - 2R)`). Bit `p` is set when the
/// neighbour at angle `2*pi*p/8` is at least the centre value.
pub fn extract_ulbp_map(image: &GrayImage, params: LbpParams) -> FeatureMap {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let r = params.radius as usize;
    let iw = w.saturating_sub(2 * r);
    let ih = h.saturating_sub(2 * r);
    let px = image.as_raw();
    let taps = neighbour_taps(params.radius);
    let mut labels = Vec::with_capacity(iw * ih);
    for y in r..r + ih {
        for x in r..r + iw {
            let c = px[y * w + x] as f64;
            let mut code = 0u8;
            for (p, tap) in taps.iter().enumerate() {
                let mut diff = 0.0;
                for &(dx, dy, wt) in tap {
                    let sx = (x as isize + dx) as usize;
                    let sy = (y as isize + dy) as usize;
                    diff += wt * (px[sy * w + sx] as f64 - c);
                }
                if diff >= 0.0 {
                    code |= 1 << p;
                }
            }
            labels.push(uniform_label(code) as f64);
        }
    }
    FeatureMap::new(iw as u32, ih as u32, 1, labels)
        .with_display_range(0.0, ULBP_OTHER as f64)
        .with_method(FeatureMethodId::Lbp81)
}

fn normalized_histogram(labels: impl Iterator<Item = f64>) -> Result<Vec<f64>> {
    let mut counts = [0usize; ULBP_BINS];
    let mut n = 0usize;
    for l in labels {
        counts[l as usize] += 1;
        n += 1;
    }
    if n == 0 {
        return Err(Error::extractor("uLBP", "empty interior region"));
    }
    Ok(counts.iter().map(|&c| c as f64 / n as f64).collect())
}

/// 59-bin histogram of a uLBP label map, normalised to sum 1.
pub fn ulbp_histogram(map: &FeatureMap) -> Result<FeatureVector> {
    let hist = normalized_histogram(map.values.iter().copied())?;
    Ok(FeatureVector::new(
        hist,
        VectorTag::Single(FeatureMethodId::Lbp81),
    ))
}

/// Concatenated histograms for radii 1..=8 (dim 472).
pub fn ulbp_fusion(image: &GrayImage) -> Result<FeatureVector> {
    let mut values = Vec::with_capacity(8 * ULBP_BINS);
    for radius in 1..=8 {
        let map = extract_ulbp_map(image, LbpParams::new(radius)?);
        values.extend(ulbp_histogram(&map)?.values);
    }
    Ok(FeatureVector::new(
        values,
        VectorTag::Single(FeatureMethodId::FusionLbp),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StripAxis {
    /// Eight bands stacked top to bottom.
    Vertical,
    /// Eight bands side by side, left to right.
    Horizontal,
}

/// Splits the image into 8 equal bands along `axis` and concatenates the
/// per-band uLBP(8,1) histograms (dim 472).
pub fn ulbp_patch_concat(image: &GrayImage, axis: StripAxis) -> Result<FeatureVector> {
    let map = extract_ulbp_map(image, LbpParams::new(1)?);
    let extent = match axis {
        StripAxis::Vertical => image.height() as usize,
        StripAxis::Horizontal => image.width() as usize,
    };
    let bounds: Vec<usize> = (0..=STRIPS).map(|i| i * extent / STRIPS).collect();
    let (mw, mh) = (map.width as usize, map.height as usize);
    let mut values = Vec::with_capacity(STRIPS * ULBP_BINS);
    for s in 0..STRIPS {
        let (lo, hi) = (bounds[s], bounds[s + 1]);
        let labels = (0..mh)
            .flat_map(|my| (0..mw).map(move |mx| (mx, my)))
            .filter_map(|(mx, my)| {
                // map coordinates are offset by the radius
                let pos = match axis {
                    StripAxis::Vertical => my + 1,
                    StripAxis::Horizontal => mx + 1,
                };
                (lo..hi).contains(&pos).then(|| map.values[my * mw + mx])
            });
        values.extend(normalized_histogram(labels)?);
    }
    let method = match axis {
        StripAxis::Vertical => FeatureMethodId::Vlbp,
        StripAxis::Horizontal => FeatureMethodId::Hlbp,
    };
    Ok(FeatureVector::new(values, VectorTag::Single(method)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Luma;

    fn noise(w: u32, h: u32, seed: u64) -> GrayImage {
        let mut s = seed
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        GrayImage::from_fn(w, h, |_, _| {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            Luma([(s >> 56) as u8])
        })
    }

    #[test]
    fn exhaustive_uniform_count() {
        let mut uniform = 0;
        for code in 0..=255u8 {
            let bits: Vec<u8> = (0..8).map(|i| (code >> i) & 1).collect();
            let transitions = (0..8).filter(|&i| bits[i] != bits[(i + 1) % 8]).count();
            assert_eq!(is_uniform(code), transitions <= 2, "code {code:08b}");
            if transitions <= 2 {
                uniform += 1;
            }
        }
        assert_eq!(uniform, 58);
        let mut labels: Vec<u8> = (0..=255u8).map(uniform_label).collect();
        labels.sort();
        labels.dedup();
        assert_eq!(labels.len(), ULBP_BINS);
    }

    #[test]
    fn constant_image_all_ones_pattern() {
        let img = GrayImage::from_pixel(20, 20, Luma([90]));
        for r in 1..=8 {
            let map = extract_ulbp_map(&img, LbpParams::new(r).unwrap());
            assert_eq!(map.width, 20 - 2 * r);
            let ones = uniform_label(0xFF) as f64;
            assert!(map.values.iter().all(|&v| v == ones));
        }
        let h = ulbp_histogram(&extract_ulbp_map(&img, LbpParams::new(1).unwrap())).unwrap();
        assert_eq!(h.dim(), 59);
        assert_eq!(h.values[uniform_label(0xFF) as usize], 1.0);
        assert_eq!(h.values.iter().sum::<f64>(), 1.0);
    }

    /// Independent 3x3 oracle for R = 1: axis neighbours are exact pixels,
    /// diagonal neighbours are bilinear blends of the 2x2 cell they fall in.
    fn oracle_code(img: &GrayImage, x: u32, y: u32) -> u8 {
        let p = |dx: i32, dy: i32| {
            img.get_pixel((x as i32 + dx) as u32, (y as i32 + dy) as u32)
                .0[0] as f64
        };
        let c = p(0, 0);
        let d = std::f64::consts::FRAC_1_SQRT_2;
        let diag = |sx: i32, sy: i32| {
            // corner (sx, sy) with fractional weights d on that side
            (1.0 - d) * (1.0 - d) * p(0, 0)
                + d * (1.0 - d) * p(sx, 0)
                + (1.0 - d) * d * p(0, sy)
                + d * d * p(sx, sy)
        };
        let neigh = [
            p(1, 0),
            diag(1, -1),
            p(0, -1),
            diag(-1, -1),
            p(-1, 0),
            diag(-1, 1),
            p(0, 1),
            diag(1, 1),
        ];
        neigh.iter().enumerate().fold(
            0u8,
            |acc, (i, &v)| if v - c >= -1e-9 { acc | 1 << i } else { acc },
        )
    }

    #[test]
    fn bright_pixel_neighbours_are_uniform() {
        let mut img = GrayImage::from_pixel(9, 9, Luma([10]));
        img.put_pixel(4, 4, Luma([250]));
        let map = extract_ulbp_map(&img, LbpParams::new(1).unwrap());
        for y in 3..=5u32 {
            for x in 3..=5u32 {
                if (x, y) == (4, 4) {
                    continue;
                }
                let code = oracle_code(&img, x, y);
                assert!(is_uniform(code), "({x},{y}) {code:08b}");
                assert_eq!(map.get(x - 1, y - 1, 0), uniform_label(code) as f64);
            }
        }
        // the bright centre sees only darker neighbours
        assert_eq!(map.get(3, 3, 0), uniform_label(0) as f64);
    }

    #[test]
    fn checkerboard_histogram_matches_oracle() {
        let img = GrayImage::from_fn(8, 8, |x, y| Luma([if (x + y) % 2 == 0 { 0 } else { 255 }]));
        let mut expected = [0.0; ULBP_BINS];
        for y in 1..7 {
            for x in 1..7 {
                expected[uniform_label(oracle_code(&img, x, y)) as usize] += 1.0 / 36.0;
            }
        }
        let h = ulbp_histogram(&extract_ulbp_map(&img, LbpParams::new(1).unwrap())).unwrap();
        for (a, b) in h.values.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        // dark centres: all neighbours brighter; bright centres: all darker
        assert!((h.values[uniform_label(0xFF) as usize] - 0.5).abs() < 1e-12);
        assert!((h.values[uniform_label(0x00) as usize] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn fusion_slices_match_single_radius() {
        let img = noise(60, 80, 3);
        let fused = ulbp_fusion(&img).unwrap();
        assert_eq!(fused.dim(), 472);
        for r in 1..=8u32 {
            let single =
                ulbp_histogram(&extract_ulbp_map(&img, LbpParams::new(r).unwrap())).unwrap();
            let start = (r as usize - 1) * 59;
            assert_eq!(&fused.values[start..start + 59], single.values.as_slice());
        }
    }

    #[test]
    fn constant_fusion_is_repeated_one_hot() {
        let fused = ulbp_fusion(&GrayImage::from_pixel(40, 40, Luma([3]))).unwrap();
        let block = &fused.values[..59];
        for r in 0..8 {
            assert_eq!(&fused.values[r * 59..(r + 1) * 59], block);
        }
        assert_eq!(block.iter().filter(|&&v| v == 1.0).count(), 1);
    }

    #[test]
    fn patch_concat_dims_and_constant() {
        let img = GrayImage::from_pixel(180, 240, Luma([128]));
        for axis in [StripAxis::Vertical, StripAxis::Horizontal] {
            let v = ulbp_patch_concat(&img, axis).unwrap();
            assert_eq!(v.dim(), 472);
            for s in 0..8 {
                assert_eq!(&v.values[s * 59..(s + 1) * 59], &v.values[..59]);
            }
        }
    }

    fn chi_square(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .filter(|(x, y)| **x + **y > 0.0)
            .map(|(x, y)| (x - y).powi(2) / (x + y))
            .sum()
    }

    #[test]
    fn vertical_strips_separate_flat_top_from_textured_bottom() {
        let tex = noise(180, 240, 11);
        let img = GrayImage::from_fn(180, 240, |x, y| {
            if y < 120 {
                Luma([20])
            } else {
                *tex.get_pixel(x, y)
            }
        });
        let v = ulbp_patch_concat(&img, StripAxis::Vertical).unwrap();
        let strip = |s: usize| &v.values[s * 59..(s + 1) * 59];
        for top in 0..3 {
            assert_eq!(strip(top), strip(0));
        }
        for top in 0..4 {
            for bottom in 4..8 {
                assert!(chi_square(strip(top), strip(bottom)) > 0.0);
            }
        }
        for s in 0..8 {
            assert!((strip(s).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn radius_bounds() {
        assert!(LbpParams::new(0).is_err());
        assert!(LbpParams::new(9).is_err());
    }
}
