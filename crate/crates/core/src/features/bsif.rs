//! Binarized statistical image features.

use std::path::{Path, PathBuf};

use image::GrayImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::conv::correlate_zero_sum;
use super::{FeatureMap, FeatureMethodId, FeatureVector, VectorTag};
use crate::{Error, Result};

/// Bank used for classification features.
pub const DEFAULT_CLASSIFICATION_BANK: &str = "3x3_5bit";
/// Bank used for single-bank reporting and visualisation.
pub const DEFAULT_REPORTING_BANK: &str = "5x5_9bit";

const EMBEDDED: [(&str, &str); 2] = [
    (
        DEFAULT_CLASSIFICATION_BANK,
        include_str!("../../data/bsif/bsif_3x3_5bit.json"),
    ),
    (
        DEFAULT_REPORTING_BANK,
        include_str!("../../data/bsif/bsif_5x5_9bit.json"),
    ),
];

const ZERO_MEAN_TOL: f64 = 1e-6;

#[derive(Deserialize)]
#[serde(untagged)]
enum FilterLayout {
    Flat(Vec<f64>),
    Square(Vec<Vec<f64>>),
}

#[derive(Deserialize)]
struct BankFile {
    size: usize,
    bits: usize,
    filters: Vec<FilterLayout>,
    #[serde(default)]
    source_id: Option<String>,
}

/// `bits` zero-mean `size`×`size` filters; filter `i` sets bit `i` of the
/// code.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BsifFilterBank {
    pub size: usize,
    pub bits: usize,
    /// Row-major weights, one vector per filter.
    pub filters: Vec<Vec<f64>>,
    pub source_id: String,
}

impl BsifFilterBank {
    pub fn new(size: usize, bits: usize, filters: Vec<Vec<f64>>, source_id: &str) -> Result<Self> {
        let bank = Self {
            size,
            bits,
            filters,
            source_id: source_id.to_string(),
        };
        bank.validate()?;
        Ok(bank)
    }

    fn validate(&self) -> Result<()> {
        let bad = |message: String| Error::FilterBank {
            source_id: self.source_id.clone(),
            message,
        };
        if self.size == 0 || self.size.is_multiple_of(2) {
            return Err(bad(format!("filter size {} must be odd", self.size)));
        }
        if self.bits == 0 || self.bits > 16 {
            return Err(bad(format!("bits {} not in [1, 16]", self.bits)));
        }
        if self.filters.len() != self.bits {
            return Err(bad(format!(
                "expected {} filters, found {}",
                self.bits,
                self.filters.len()
            )));
        }
        let taps = self.size * self.size;
        for (i, f) in self.filters.iter().enumerate() {
            if f.len() != taps {
                return Err(bad(format!(
                    "filter {i} has {} weights, expected {taps}",
                    f.len()
                )));
            }
            if f.iter().any(|w| !w.is_finite()) {
                return Err(bad(format!("filter {i} has non-finite weights")));
            }
            let mean = f.iter().sum::<f64>() / taps as f64;
            if mean.abs() > ZERO_MEAN_TOL {
                return Err(bad(format!("filter {i} mean {mean:e} is not zero")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str, fallback_id: &str) -> Result<Self> {
        let file: BankFile = serde_json::from_str(text).map_err(|e| Error::FilterBank {
            source_id: fallback_id.to_string(),
            message: e.to_string(),
        })?;
        let filters = file
            .filters
            .into_iter()
            .map(|f| match f {
                FilterLayout::Flat(v) => v,
                FilterLayout::Square(rows) => rows.into_iter().flatten().collect(),
            })
            .collect();
        let id = file.source_id.unwrap_or_else(|| fallback_id.to_string());
        Self::new(file.size, file.bits, filters, &id)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().trim_start_matches("bsif_").to_string())
            .unwrap_or_default();
        Self::from_json(&text, &stem)
    }

    /// Directory holding the shipped bank files.
    pub fn shipped_dir() -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/bsif")
    }

    /// Ids (`{k}x{k}_{b}bit`) of every shipped bank, sorted by size then bits.
    pub fn shipped_ids() -> Vec<String> {
        let mut ids: Vec<(usize, usize, String)> = std::fs::read_dir(Self::shipped_dir())
            .into_iter()
            .flatten()
            .flatten()
            .filter_map(|e| {
                let name = e.file_name().to_string_lossy().to_string();
                let id = name
                    .strip_prefix("bsif_")?
                    .strip_suffix(".json")?
                    .to_string();
                let (k, b) = parse_id(&id)?;
                Some((k, b, id))
            })
            .collect();
        if ids.is_empty() {
            ids = EMBEDDED
                .iter()
                .filter_map(|(id, _)| parse_id(id).map(|(k, b)| (k, b, id.to_string())))
                .collect();
        }
        ids.sort();
        ids.into_iter().map(|(_, _, id)| id).collect()
    }

    /// A shipped bank id or a path to a bank file.
    pub fn resolve(id_or_path: &str) -> Result<Self> {
        if let Some((_, text)) = EMBEDDED.iter().find(|(id, _)| *id == id_or_path) {
            return Self::from_json(text, id_or_path);
        }
        if parse_id(id_or_path).is_some() {
            let path = Self::shipped_dir().join(format!("bsif_{id_or_path}.json"));
            if path.is_file() {
                return Self::load(&path);
            }
        }
        let path = Path::new(id_or_path);
        if path.is_file() {
            return Self::load(path);
        }
        Err(Error::FilterBank {
            source_id: id_or_path.to_string(),
            message: "no such shipped bank or file".into(),
        })
    }

    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("serializable");
        hex::encode(&Sha256::digest(json)[..8])
    }
}

fn parse_id(id: &str) -> Option<(usize, usize)> {
    let (dims, bits) = id.split_once('_')?;
    let (a, b) = dims.split_once('x')?;
    let k: usize = a.parse().ok()?;
    if b.parse::<usize>().ok()? != k {
        return None;
    }
    let bits: usize = bits.strip_suffix("bit")?.parse().ok()?;
    Some((k, bits))
}

#[derive(Debug, Clone)]
pub struct BsifOutput {
    /// Per-pixel code image, values in `0..2^bits`.
    pub code_map: FeatureMap,
    /// Flattened code image.
    pub code_vector: FeatureVector,
    /// Raw `2^bits`-bin histogram; sums to the pixel count.
    pub histogram: FeatureVector,
    /// Histogram normalised to sum 1.
    pub normalized_histogram: FeatureVector,
}

/// Code per pixel: bit `i` is set iff the response of filter `i` is
/// strictly positive. Borders use symmetric extension.
pub fn extract_bsif(image: &GrayImage, bank: &BsifFilterBank) -> BsifOutput {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let values: Vec<f64> = image.as_raw().iter().map(|&p| p as f64).collect();
    let mut codes = vec![0u32; w * h];
    for (i, filter) in bank.filters.iter().enumerate() {
        let response = correlate_zero_sum(&values, w, h, filter, bank.size);
        for (c, r) in codes.iter_mut().zip(response) {
            if r > 0.0 {
                *c |= 1 << i;
            }
        }
    }
    let bins = 1usize << bank.bits;
    let mut hist = vec![0.0; bins];
    for &c in &codes {
        hist[c as usize] += 1.0;
    }
    let total = (w * h) as f64;
    let norm: Vec<f64> = hist.iter().map(|c| c / total).collect();
    let code_values: Vec<f64> = codes.iter().map(|&c| c as f64).collect();
    BsifOutput {
        code_map: FeatureMap::new(w as u32, h as u32, 1, code_values.clone())
            .with_display_range(0.0, (bins - 1) as f64)
            .with_method(FeatureMethodId::BsifIm),
        code_vector: FeatureVector::new(code_values, VectorTag::Single(FeatureMethodId::BsifIm)),
        histogram: FeatureVector::new(hist, VectorTag::Single(FeatureMethodId::BsifH)),
        normalized_histogram: FeatureVector::new(norm, VectorTag::Single(FeatureMethodId::BsifNh)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Luma;

    #[test]
    fn embedded_defaults_load() {
        let a = BsifFilterBank::resolve(DEFAULT_CLASSIFICATION_BANK).unwrap();
        assert_eq!((a.size, a.bits), (3, 5));
        let b = BsifFilterBank::resolve(DEFAULT_REPORTING_BANK).unwrap();
        assert_eq!((b.size, b.bits), (5, 9));
    }

    #[test]
    fn shipped_grid_has_sixty_banks() {
        let ids = BsifFilterBank::shipped_ids();
        assert_eq!(ids.len(), 60, "{ids:?}");
        for id in ids {
            let bank = BsifFilterBank::resolve(&id).unwrap();
            assert_eq!(bank.filters.len(), bank.bits);
            for f in &bank.filters {
                assert!((f.iter().sum::<f64>() / f.len() as f64).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn constant_image_codes_zero() {
        let bank = BsifFilterBank::resolve(DEFAULT_REPORTING_BANK).unwrap();
        let out = extract_bsif(&GrayImage::from_pixel(180, 240, Luma([201])), &bank);
        assert!(out.code_map.values.iter().all(|&c| c == 0.0));
        assert_eq!(out.histogram.dim(), 512);
        assert_eq!(out.histogram.values[0], 43200.0);
        assert_eq!(out.normalized_histogram.values[0], 1.0);
    }

    #[test]
    fn histogram_lengths_and_normalisation() {
        let img = GrayImage::from_fn(50, 60, |x, y| {
            Luma([((x * 13 + y * 7 + x * y) % 256) as u8])
        });
        for id in ["3x3_5bit", "5x5_9bit", "7x7_12bit"] {
            let bank = BsifFilterBank::resolve(id).unwrap();
            let out = extract_bsif(&img, &bank);
            assert_eq!(out.histogram.dim(), 1 << bank.bits);
            assert_eq!(out.histogram.values.iter().sum::<f64>(), 3000.0);
            assert!((out.normalized_histogram.values.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(out
                .code_map
                .values
                .iter()
                .all(|&c| c < (1 << bank.bits) as f64));
        }
    }

    #[test]
    fn invariant_violations_rejected() {
        let ok = vec![vec![1.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]];
        assert!(BsifFilterBank::new(3, 1, ok.clone(), "t").is_ok());
        assert!(BsifFilterBank::new(3, 2, ok.clone(), "t").is_err());
        assert!(BsifFilterBank::new(2, 1, vec![vec![1.0, -1.0, 0.0, 0.0]], "t").is_err());
        assert!(BsifFilterBank::new(3, 1, vec![vec![1.0; 9]], "t").is_err());
        assert!(BsifFilterBank::resolve("no_such_bank").is_err());
    }

    #[test]
    fn nested_layout_accepted() {
        let text = r#"{"size": 3, "bits": 1, "filters": [[[0,1,0],[1,-4,1],[0,1,0]]]}"#;
        let bank = BsifFilterBank::from_json(text, "lap").unwrap();
        assert_eq!(bank.source_id, "lap");
        assert_eq!(bank.filters[0][4], -4.0);
    }

    #[test]
    fn single_filter_code_follows_sign_of_response() {
        // horizontal derivative: bit set where intensity rises to the right
        let bank = BsifFilterBank::new(
            3,
            1,
            vec![vec![0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0]],
            "dx",
        )
        .unwrap();
        let img = GrayImage::from_fn(6, 1, |x, _| Luma([[0, 10, 20, 20, 10, 0][x as usize]]));
        let out = extract_bsif(&img, &bank);
        assert_eq!(out.code_map.values, vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    }
}
