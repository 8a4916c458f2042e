//! Synthetic face-like corpus for tests, benchmarks and smoke runs.
//!
//! Bona fide images are rendered identities with independent sensor noise.
//! Each synthetic morph averages two identities (halving the noise
//! variance) and then adds a tool-specific artefact, so tools share a
//! common trace but differ in the details.

use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{load_manifest, LoadOptions, SourceDb, Tool};
use crate::features::jpeg_round_trip;
use crate::{DatasetManifest, Error, Label, Result, SampleRecord, FACE_HEIGHT, FACE_WIDTH};

/// Post-averaging artefact of a synthetic morphing tool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Artifact {
    /// 3×3 box blur.
    Smooth,
    /// JPEG re-compression at low quality.
    Blocky,
    /// Second identity misaligned by a few pixels.
    Ghost,
}

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub bonafide: usize,
    pub per_tool: usize,
    pub tools: Vec<(String, Artifact)>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            bonafide: 60,
            per_tool: 40,
            tools: vec![
                ("synth-smooth".into(), Artifact::Smooth),
                ("synth-blocky".into(), Artifact::Blocky),
                ("synth-ghost".into(), Artifact::Ghost),
            ],
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthSample {
    pub id: String,
    pub label: Label,
    pub tool: Tool,
    pub image: GrayImage,
}

#[derive(Debug, Clone, Copy)]
struct Identity {
    skin: f64,
    background: f64,
    face_rx: f64,
    face_ry: f64,
    cx: f64,
    eye_y: f64,
    eye_dx: f64,
    eye_r: f64,
    mouth_y: f64,
    mouth_w: f64,
    light: f64,
}

impl Identity {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        Self {
            skin: rng.random_range(140.0..200.0),
            background: rng.random_range(40.0..110.0),
            face_rx: rng.random_range(62.0..74.0),
            face_ry: rng.random_range(88.0..100.0),
            cx: 90.0 + rng.random_range(-3.0..3.0),
            eye_y: 96.0 + rng.random_range(-4.0..4.0),
            eye_dx: 32.0 + rng.random_range(-3.0..3.0),
            eye_r: rng.random_range(5.0..8.0),
            mouth_y: rng.random_range(160.0..172.0),
            mouth_w: rng.random_range(18.0..28.0),
            light: rng.random_range(-0.25..0.25),
        }
    }

    /// Noise-free intensity at `(x, y)`.
    fn shade(&self, x: f64, y: f64) -> f64 {
        let (fx, fy) = ((x - self.cx) / self.face_rx, (y - 125.0) / self.face_ry);
        let r2 = fx * fx + fy * fy;
        if r2 > 1.0 {
            return self.background + 20.0 * (y / 240.0);
        }
        let mut v = self.skin * (1.0 + self.light * fx) * (1.0 - 0.15 * r2);
        for side in [-1.0, 1.0] {
            let ex = self.cx + side * self.eye_dx;
            let d = ((x - ex).powi(2) + (y - self.eye_y).powi(2)).sqrt();
            if d < self.eye_r {
                v = 35.0;
            } else if d < self.eye_r * 1.8 {
                v *= 0.8;
            }
            let brow = (y - (self.eye_y - 16.0)).abs() < 2.5 && (x - ex).abs() < 12.0;
            if brow {
                v *= 0.55;
            }
        }
        if (y - self.mouth_y).abs() < 2.5 && (x - self.cx).abs() < self.mouth_w {
            v *= 0.6;
        }
        if (x - self.cx).abs() < 2.0 && y > self.eye_y + 10.0 && y < self.mouth_y - 25.0 {
            v *= 0.9;
        }
        v
    }
}

fn render(id: &Identity, dx: f64, dy: f64, noise_sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let noise = Normal::new(0.0, noise_sigma).expect("positive sigma");
    let (w, h) = (FACE_WIDTH as usize, FACE_HEIGHT as usize);
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            out.push(id.shade(x as f64 - dx, y as f64 - dy) + noise.sample(rng));
        }
    }
    out
}

fn to_image(values: &[f64]) -> GrayImage {
    GrayImage::from_fn(FACE_WIDTH, FACE_HEIGHT, |x, y| {
        let v = values[(y * FACE_WIDTH + x) as usize];
        Luma([v.round().clamp(0.0, 255.0) as u8])
    })
}

fn box_blur(values: &[f64]) -> Vec<f64> {
    let (w, h) = (FACE_WIDTH as isize, FACE_HEIGHT as isize);
    let mut out = vec![0.0; values.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ox, oy) in (-1..=1).flat_map(|oy| (-1..=1).map(move |ox| (ox, oy))) {
                let sx = (x + ox).clamp(0, w - 1);
                let sy = (y + oy).clamp(0, h - 1);
                acc += values[(sy * w + sx) as usize];
            }
            out[(y * w + x) as usize] = acc / 9.0;
        }
    }
    out
}

const SENSOR_NOISE: f64 = 6.0;

/// Renders the corpus in memory. Ids are `bf_NNNN` and `<tool>_NNNN`.
pub fn generate(spec: &SynthSpec) -> Result<Vec<SynthSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let identities: Vec<Identity> = (0..spec.bonafide.max(2))
        .map(|_| Identity::random(&mut rng))
        .collect();
    let mut out = Vec::with_capacity(spec.bonafide + spec.per_tool * spec.tools.len());

    for (i, ident) in identities.iter().take(spec.bonafide).enumerate() {
        let values = render(ident, 0.0, 0.0, SENSOR_NOISE, &mut rng);
        out.push(SynthSample {
            id: format!("bf_{i:04}"),
            label: Label::Bonafide,
            tool: Tool::none(),
            image: to_image(&values),
        });
    }

    for (name, artifact) in &spec.tools {
        let tool = Tool::new(name).map_err(Error::InvalidParam)?;
        for i in 0..spec.per_tool {
            let a = rng.random_range(0..identities.len());
            let b = (a + 1 + rng.random_range(0..identities.len() - 1)) % identities.len();
            let (dx, dy) = match artifact {
                Artifact::Ghost => (rng.random_range(3.0..6.0), rng.random_range(-2.0..2.0)),
                _ => (0.0, 0.0),
            };
            let fa = render(&identities[a], 0.0, 0.0, SENSOR_NOISE, &mut rng);
            let fb = render(&identities[b], dx, dy, SENSOR_NOISE, &mut rng);
            let mut values: Vec<f64> = fa.iter().zip(&fb).map(|(p, q)| (p + q) / 2.0).collect();
            let image = match artifact {
                Artifact::Smooth => {
                    values = box_blur(&values);
                    to_image(&values)
                }
                Artifact::Blocky => jpeg_round_trip(&to_image(&values), 35)?,
                Artifact::Ghost => to_image(&values),
            };
            out.push(SynthSample {
                id: format!("{}_{i:04}", tool.as_str()),
                label: Label::Morph,
                tool: tool.clone(),
                image,
            });
        }
    }
    Ok(out)
}

/// Writes `images/<id>.png` and `manifest.csv` under `dir` and returns the
/// manifest path together with the loaded manifest.
pub fn write_corpus(spec: &SynthSpec, dir: &Path) -> Result<(PathBuf, DatasetManifest)> {
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut records = Vec::new();
    for s in generate(spec)? {
        let rel = PathBuf::from("images").join(format!("{}.png", s.id));
        let path = dir.join(&rel);
        s.image
            .save(&path)
            .map_err(|e| Error::io(&path, std::io::Error::other(e)))?;
        records.push(SampleRecord {
            id: s.id,
            path: rel,
            label: s.label,
            tool: s.tool,
            source_db: SourceDb::Frll,
            landmarks: None,
        });
    }
    let manifest_path = dir.join("manifest.csv");
    let file = std::fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    DatasetManifest::new(records)?.write_csv(file)?;
    let loaded = load_manifest(&manifest_path, &LoadOptions::default())?;
    Ok((manifest_path, loaded))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            bonafide: 6,
            per_tool: 4,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn counts_and_ids() {
        let s = generate(&small()).unwrap();
        assert_eq!(s.len(), 6 + 3 * 4);
        assert_eq!(s[0].id, "bf_0000");
        assert!(s
            .iter()
            .all(|x| x.image.dimensions() == (FACE_WIDTH, FACE_HEIGHT)));
        assert_eq!(s.iter().filter(|x| x.label == Label::Morph).count(), 12);
    }

    #[test]
    fn deterministic() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image.as_raw(), y.image.as_raw());
        }
    }

    #[test]
    fn corpus_round_trips_through_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let (path, m) = write_corpus(&small(), dir.path()).unwrap();
        assert!(path.exists());
        assert_eq!(m.len(), 18);
        assert_eq!(m.morph_tools().len(), 3);
        assert!(m.records.iter().all(|r| r.path.exists()));
    }
}
