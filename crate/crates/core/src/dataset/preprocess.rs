use std::path::Path;

use image::{DynamicImage, GrayImage, Luma};
use serde::{Deserialize, Serialize};

use super::manifest::{EyeLandmarks, SampleRecord};
use crate::{Error, Result, FACE_HEIGHT, FACE_WIDTH};

/// Target left-eye centre in the canonical frame.
pub const EYE_TARGET_LEFT: (f64, f64) = (58.0, 96.0);
/// Target right-eye centre in the canonical frame.
pub const EYE_TARGET_RIGHT: (f64, f64) = (122.0, 96.0);

/// A 180×240 single-channel face raster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedFace {
    id: String,
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl AlignedFace {
    pub fn new(id: impl Into<String>, image: GrayImage) -> Result<Self> {
        if image.dimensions() != (FACE_WIDTH, FACE_HEIGHT) {
            return Err(Error::InvalidParam(format!(
                "aligned face must be {FACE_WIDTH}x{FACE_HEIGHT}, got {}x{}",
                image.width(),
                image.height()
            )));
        }
        Ok(Self {
            id: id.into(),
            width: FACE_WIDTH,
            height: FACE_HEIGHT,
            pixels: image.into_raw(),
        })
    }

    /// Provenance: the id of the sample this face came from.
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("dimensions checked at construction")
    }
}

/// Output of [`preprocess_face_full`]: the canonical face plus the aligned,
/// cropped raster before the final downscale.
#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub face: AlignedFace,
    pub original: GrayImage,
}

pub fn decode_image(bytes: &[u8]) -> Result<DynamicImage> {
    image::load_from_memory(bytes).map_err(|e| Error::Decode(e.to_string()))
}

/// BT.601 luma with integer half-up rounding. Single-channel 8-bit input is
/// returned unchanged.
pub fn to_gray(image: &DynamicImage) -> GrayImage {
    if let DynamicImage::ImageLuma8(g) = image {
        return g.clone();
    }
    let rgb = image.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb
        .pixels()
        .map(|p| {
            let [r, g, b] = p.0;
            ((299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000) as u8
        })
        .collect();
    GrayImage::from_raw(w, h, data).expect("buffer size matches")
}

#[inline]
fn round_u8(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Bilinear sample with edge clamping; `(x, y)` in pixel-centre coordinates.
#[inline]
fn sample(img: &GrayImage, x: f64, y: f64) -> f64 {
    let (w, h) = img.dimensions();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as u32;
    let y0 = y.floor() as u32;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let p = |xx: u32, yy: u32| img.get_pixel(xx, yy).0[0] as f64;
    let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
    let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Bilinear resize using pixel-centre alignment. Same-size input is copied.
pub fn bilinear_resize(img: &GrayImage, width: u32, height: u32) -> GrayImage {
    if img.dimensions() == (width, height) {
        return img.clone();
    }
    let sx = img.width() as f64 / width as f64;
    let sy = img.height() as f64 / height as f64;
    GrayImage::from_fn(width, height, |x, y| {
        let src_x = (x as f64 + 0.5) * sx - 0.5;
        let src_y = (y as f64 + 0.5) * sy - 0.5;
        Luma([round_u8(sample(img, src_x, src_y))])
    })
}

/// Bilinear resize of a real-valued plane stored row-major.
pub fn bilinear_resize_plane(
    values: &[f64],
    width: u32,
    height: u32,
    out_width: u32,
    out_height: u32,
) -> Vec<f64> {
    assert_eq!(values.len(), (width * height) as usize);
    if (width, height) == (out_width, out_height) {
        return values.to_vec();
    }
    let (w, h) = (width as usize, height as usize);
    let sx = width as f64 / out_width as f64;
    let sy = height as f64 / out_height as f64;
    let mut out = Vec::with_capacity((out_width * out_height) as usize);
    for y in 0..out_height {
        let src_y = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = src_y.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = src_y - y0 as f64;
        for x in 0..out_width {
            let src_x = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = src_x.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = src_x - x0 as f64;
            let top = values[y0 * w + x0] * (1.0 - fx) + values[y0 * w + x1] * fx;
            let bottom = values[y1 * w + x0] * (1.0 - fx) + values[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Centre crop to a 3:4 (width:height) aspect ratio.
pub fn center_crop_3x4(img: &GrayImage) -> GrayImage {
    let (w, h) = img.dimensions();
    let (cw, ch) = if (w as u64) * 4 > (h as u64) * 3 {
        (((h as u64 * 3 + 2) / 4).max(1) as u32, h)
    } else {
        (w, ((w as u64 * 4 + 1) / 3).min(h as u64).max(1) as u32)
    };
    let x0 = (w - cw) / 2;
    let y0 = (h - ch) / 2;
    image::imageops::crop_imm(img, x0, y0, cw, ch).to_image()
}

/// Warps `img` so that the eyes land on the canonical targets of a
/// `width`×`height` frame (targets scale with the frame).
fn align_by_eyes(img: &GrayImage, eyes: &EyeLandmarks, width: u32, height: u32) -> GrayImage {
    let fx = width as f64 / FACE_WIDTH as f64;
    let fy = height as f64 / FACE_HEIGHT as f64;
    let dl = (EYE_TARGET_LEFT.0 * fx, EYE_TARGET_LEFT.1 * fy);
    let dr = (EYE_TARGET_RIGHT.0 * fx, EYE_TARGET_RIGHT.1 * fy);
    let (sl, sr) = (eyes.left, eyes.right);

    // dst = a * src + b in complex form; a = scale * e^{i theta}.
    let (src_dx, src_dy) = (sr.0 - sl.0, sr.1 - sl.1);
    let (dst_dx, dst_dy) = (dr.0 - dl.0, dr.1 - dl.1);
    let denom = src_dx * src_dx + src_dy * src_dy;
    let a_re = (dst_dx * src_dx + dst_dy * src_dy) / denom;
    let a_im = (dst_dy * src_dx - dst_dx * src_dy) / denom;
    // inverse: src = (dst - b) / a, with b = dl - a * sl
    let a_norm = a_re * a_re + a_im * a_im;
    let (inv_re, inv_im) = (a_re / a_norm, -a_im / a_norm);

    GrayImage::from_fn(width, height, |x, y| {
        let (ux, uy) = (x as f64 - dl.0, y as f64 - dl.1);
        let src_x = sl.0 + inv_re * ux - inv_im * uy;
        let src_y = sl.1 + inv_im * ux + inv_re * uy;
        Luma([round_u8(sample(img, src_x, src_y))])
    })
}

fn check_landmarks(img: &GrayImage, eyes: &EyeLandmarks) -> Result<()> {
    let (w, h) = img.dimensions();
    for (name, (x, y)) in [("left", eyes.left), ("right", eyes.right)] {
        if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
            return Err(Error::Landmarks(format!(
                "{name} eye ({x}, {y}) outside {w}x{h} image"
            )));
        }
    }
    let d = (eyes.right.0 - eyes.left.0).hypot(eyes.right.1 - eyes.left.1);
    if d < 1.0 {
        return Err(Error::Landmarks("eye centres coincide".into()));
    }
    Ok(())
}

/// Normalises a decoded image to the canonical aligned face.
pub fn preprocess_face(
    image: &DynamicImage,
    landmarks: Option<&EyeLandmarks>,
    id: &str,
) -> Result<AlignedFace> {
    Ok(preprocess_face_full(image, landmarks, id)?.face)
}

/// Like [`preprocess_face`], also returning the aligned raster at the
/// source resolution (never upscaled) for extractors configured to run
/// before the final resize.
pub fn preprocess_face_full(
    image: &DynamicImage,
    landmarks: Option<&EyeLandmarks>,
    id: &str,
) -> Result<Preprocessed> {
    let gray = to_gray(image);
    if gray.width() == 0 || gray.height() == 0 {
        return Err(Error::Decode("empty image".into()));
    }
    let (original, face) = match landmarks {
        Some(eyes) => {
            check_landmarks(&gray, eyes)?;
            let face = align_by_eyes(&gray, eyes, FACE_WIDTH, FACE_HEIGHT);
            let src_d = (eyes.right.0 - eyes.left.0).hypot(eyes.right.1 - eyes.left.1);
            let scale = (src_d / (EYE_TARGET_RIGHT.0 - EYE_TARGET_LEFT.0)).max(1.0);
            let ow = (FACE_WIDTH as f64 * scale).round() as u32;
            let oh = (FACE_HEIGHT as f64 * scale).round() as u32;
            let original = if (ow, oh) == (FACE_WIDTH, FACE_HEIGHT) {
                face.clone()
            } else {
                align_by_eyes(&gray, eyes, ow, oh)
            };
            (original, face)
        }
        None => {
            let crop = center_crop_3x4(&gray);
            let face = bilinear_resize(&crop, FACE_WIDTH, FACE_HEIGHT);
            (crop, face)
        }
    };
    Ok(Preprocessed {
        face: AlignedFace::new(id, face)?,
        original,
    })
}

/// Reads, decodes and normalises the image a manifest record points to.
pub fn load_face(record: &SampleRecord) -> Result<Preprocessed> {
    let bytes = read_file(&record.path)?;
    let img = decode_image(&bytes)?;
    preprocess_face_full(&img, record.landmarks.as_ref(), &record.id)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};

    fn noise(w: u32, h: u32, seed: u32) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| {
            let v = (x.wrapping_mul(2654435761) ^ y.wrapping_mul(40503) ^ seed) % 251;
            Luma([v as u8])
        })
    }

    #[test]
    fn landscape_hd_input_becomes_canonical() {
        let img = DynamicImage::ImageLuma8(noise(1280, 720, 1));
        let face = preprocess_face(&img, None, "x").unwrap();
        assert_eq!(face.to_image().dimensions(), (180, 240));
    }

    #[test]
    fn canonical_gray_input_is_identity() {
        let g = noise(180, 240, 7);
        let face = preprocess_face(&DynamicImage::ImageLuma8(g.clone()), None, "x").unwrap();
        assert_eq!(face.pixels(), g.as_raw().as_slice());
        // idempotent
        let again = preprocess_face(&DynamicImage::ImageLuma8(face.to_image()), None, "x").unwrap();
        assert_eq!(again, face);
    }

    #[test]
    fn luma_weights_round_half_up() {
        let mut rgb = RgbImage::new(3, 1);
        rgb.put_pixel(0, 0, Rgb([255, 0, 0]));
        rgb.put_pixel(1, 0, Rgb([0, 255, 0]));
        rgb.put_pixel(2, 0, Rgb([10, 20, 30]));
        let g = to_gray(&DynamicImage::ImageRgb8(rgb));
        // 76.245 -> 76, 149.685 -> 150, 2.99+11.74+3.42 = 18.15 -> 18
        assert_eq!(g.as_raw(), &vec![76, 150, 18]);
        let half = DynamicImage::ImageRgb8(RgbImage::from_pixel(1, 1, Rgb([0, 0, 5])));
        // 0.57 -> 1
        assert_eq!(to_gray(&half).as_raw(), &vec![1]);
    }

    fn dark_spot_centroid(img: &GrayImage, x_range: std::ops::Range<u32>) -> (f64, f64) {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
        for y in 0..img.height() {
            for x in x_range.clone() {
                let w = 255.0 - img.get_pixel(x, y).0[0] as f64;
                if w > 128.0 {
                    sx += w * x as f64;
                    sy += w * y as f64;
                    n += w;
                }
            }
        }
        (sx / n, sy / n)
    }

    fn eyes_image(w: u32, h: u32, l: (f64, f64), r: (f64, f64)) -> DynamicImage {
        let rgb = RgbImage::from_fn(w, h, |x, y| {
            let near = |c: (f64, f64)| (x as f64 - c.0).hypot(y as f64 - c.1) <= 4.0;
            if near(l) || near(r) {
                Rgb([0, 0, 0])
            } else {
                Rgb([230, 200, 180])
            }
        });
        DynamicImage::ImageRgb8(rgb)
    }

    #[test]
    fn level_eyes_land_on_targets() {
        let eyes = EyeLandmarks {
            left: (80.0, 120.0),
            right: (160.0, 120.0),
        };
        let img = eyes_image(240, 320, eyes.left, eyes.right);
        let face = preprocess_face(&img, Some(&eyes), "e").unwrap().to_image();
        assert_eq!(face.dimensions(), (180, 240));
        let l = dark_spot_centroid(&face, 0..90);
        let r = dark_spot_centroid(&face, 90..180);
        assert!((l.1 - r.1).abs() < 0.5, "{l:?} {r:?}");
        assert!(
            (l.0 - 58.0).abs() < 0.75 && (l.1 - 96.0).abs() < 0.75,
            "{l:?}"
        );
        assert!(
            (r.0 - 122.0).abs() < 0.75 && (r.1 - 96.0).abs() < 0.75,
            "{r:?}"
        );
    }

    #[test]
    fn tilted_eyes_are_levelled() {
        let eyes = EyeLandmarks {
            left: (70.0, 140.0),
            right: (170.0, 105.0),
        };
        let img = eyes_image(240, 320, eyes.left, eyes.right);
        let face = preprocess_face(&img, Some(&eyes), "e").unwrap().to_image();
        let l = dark_spot_centroid(&face, 0..90);
        let r = dark_spot_centroid(&face, 90..180);
        assert!((l.1 - r.1).abs() < 0.75, "{l:?} {r:?}");
    }

    #[test]
    fn landmarks_outside_image_are_rejected() {
        let img = DynamicImage::ImageLuma8(noise(100, 100, 3));
        let eyes = EyeLandmarks {
            left: (10.0, 10.0),
            right: (150.0, 10.0),
        };
        assert!(matches!(
            preprocess_face(&img, Some(&eyes), "x"),
            Err(Error::Landmarks(_))
        ));
    }

    #[test]
    fn undecodable_bytes_error() {
        assert!(matches!(
            decode_image(b"not an image"),
            Err(Error::Decode(_))
        ));
    }

    #[test]
    fn original_raster_keeps_source_resolution() {
        let img = DynamicImage::ImageLuma8(noise(1280, 720, 2));
        let p = preprocess_face_full(&img, None, "x").unwrap();
        assert_eq!(p.original.dimensions(), (540, 720));
    }

    #[test]
    fn crop_aspect_for_portrait_input() {
        let c = center_crop_3x4(&noise(300, 1000, 0));
        assert_eq!(c.dimensions(), (300, 400));
    }
}
