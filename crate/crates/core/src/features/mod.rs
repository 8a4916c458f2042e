//! Feature extractors.
//!
//! Every extractor is a pure function of a grayscale raster and its
//! parameters. Most return a [`FeatureMap`] (a visualisable grid) together
//! with a [`FeatureVector`] (the classifier input). [`extract`] dispatches by
//! [`FeatureMethodId`].

mod bsif;
mod conv;
mod ela;
mod hog;
mod intensity;
mod lbp;
mod map;
mod spectral;
mod srm;
mod svd;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use image::GrayImage;
use serde::{Deserialize, Serialize};

pub use bsif::{extract_bsif, BsifFilterBank, BsifOutput};
pub use conv::correlate_zero_sum;
pub use ela::{extract_ela, jpeg_round_trip, DEFAULT_ELA_QUALITY};
pub use hog::{extract_hog, hog_cell_histograms, HOG_BINS, HOG_CELLS_X, HOG_CELLS_Y};
pub use intensity::extract_intensity;
pub use lbp::{
    extract_ulbp_map, is_uniform, ulbp_fusion, ulbp_histogram, ulbp_patch_concat, uniform_label,
    LbpParams, StripAxis, ULBP_BINS, ULBP_OTHER,
};
pub use map::{FeatureMap, FeatureVector, VectorTag};
pub use spectral::{dct2, extract_dct2, extract_dft, fft2, fftshift, idct2, DctMode};
pub use srm::{extract_srm, SrmBank};
pub use svd::{extract_svd, singular_values, DEFAULT_SVD_RANK};

use crate::dataset::{bilinear_resize_plane, AlignedFace, Preprocessed};
use crate::{Error, Result, FACE_HEIGHT, FACE_WIDTH};

/// The fourteen feature methods, named after the result-table columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureMethodId {
    #[serde(rename = "RGB")]
    Rgb,
    #[serde(rename = "ELA")]
    Ela,
    #[serde(rename = "SRM")]
    Srm,
    #[serde(rename = "DCT2")]
    Dct2,
    #[serde(rename = "DFT")]
    Dft,
    #[serde(rename = "LBP81")]
    Lbp81,
    #[serde(rename = "FUSION_LBP")]
    FusionLbp,
    #[serde(rename = "HOG")]
    Hog,
    #[serde(rename = "SVD")]
    Svd,
    #[serde(rename = "VLBP")]
    Vlbp,
    #[serde(rename = "HLBP")]
    Hlbp,
    #[serde(rename = "BSIF_IM")]
    BsifIm,
    #[serde(rename = "BSIF_H")]
    BsifH,
    #[serde(rename = "BSIF_NH")]
    BsifNh,
}

impl FeatureMethodId {
    /// Canonical reporting order.
    pub const ALL: [FeatureMethodId; 14] = [
        Self::Rgb,
        Self::Ela,
        Self::Srm,
        Self::Dct2,
        Self::Dft,
        Self::Lbp81,
        Self::FusionLbp,
        Self::Hog,
        Self::Svd,
        Self::Vlbp,
        Self::Hlbp,
        Self::BsifIm,
        Self::BsifH,
        Self::BsifNh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Rgb => "RGB",
            Self::Ela => "ELA",
            Self::Srm => "SRM",
            Self::Dct2 => "DCT2",
            Self::Dft => "DFT",
            Self::Lbp81 => "LBP81",
            Self::FusionLbp => "FUSION_LBP",
            Self::Hog => "HOG",
            Self::Svd => "SVD",
            Self::Vlbp => "VLBP",
            Self::Hlbp => "HLBP",
            Self::BsifIm => "BSIF_IM",
            Self::BsifH => "BSIF_H",
            Self::BsifNh => "BSIF_NH",
        }
    }

    /// Whether the method yields a per-pixel map.
    pub fn has_map(self) -> bool {
        !matches!(self, Self::FusionLbp)
    }

    /// Whether the vector is the flattened per-pixel map (planar order).
    fn vector_is_plane(self) -> bool {
        matches!(
            self,
            Self::Rgb | Self::Ela | Self::Srm | Self::Dct2 | Self::Dft | Self::BsifIm
        )
    }
}

impl fmt::Display for FeatureMethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureMethodId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace(['-', ' '], "_");
        let alias = match norm.as_str() {
            "DCT" => "DCT2",
            "LBP" | "ULBP81" | "LBP8_1" => "LBP81",
            "FUSIONLBP" => "FUSION_LBP",
            "INTENSITY" | "RAW" => "RGB",
            "ULBP_VERT" => "VLBP",
            "ULBP_HOR" => "HLBP",
            other => other,
        };
        Self::ALL
            .into_iter()
            .find(|m| m.name() == alias)
            .ok_or_else(|| Error::InvalidParam(format!("unknown feature method `{s}`")))
    }
}

/// Whether extractors see the canonical face or the aligned raster before
/// the final downscale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionOrder {
    #[default]
    ResizeThenExtract,
    ExtractThenResize,
}

/// Serializable extractor parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSettings {
    pub ela_quality: u8,
    /// Shipped bank id (e.g. `3x3_5bit`) or path to a bank JSON file.
    pub bsif_bank: String,
    pub svd_k: usize,
    /// `None` for a whole-image DCT, `Some(n)` for n×n blocks.
    pub dct_block: Option<usize>,
    /// Path to an SRM kernel file; the shipped kernels when `None`.
    pub srm_kernels: Option<String>,
    pub order: ExtractionOrder,
}

impl Default for FeatureSettings {
    fn default() -> Self {
        Self {
            ela_quality: DEFAULT_ELA_QUALITY,
            bsif_bank: bsif::DEFAULT_CLASSIFICATION_BANK.to_string(),
            svd_k: DEFAULT_SVD_RANK,
            dct_block: None,
            srm_kernels: None,
            order: ExtractionOrder::ResizeThenExtract,
        }
    }
}

/// Resolved extractor configuration with loaded filter banks.
#[derive(Debug, Clone)]
pub struct FeatureConfig {
    pub settings: FeatureSettings,
    pub bsif: Arc<BsifFilterBank>,
    pub srm: Arc<SrmBank>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self::from_settings(FeatureSettings::default()).expect("shipped banks are valid")
    }
}

impl FeatureConfig {
    pub fn from_settings(settings: FeatureSettings) -> Result<Self> {
        if !(1..=100).contains(&settings.ela_quality) {
            return Err(Error::InvalidParam(format!(
                "ELA quality {} not in [1, 100]",
                settings.ela_quality
            )));
        }
        if settings.svd_k == 0 {
            return Err(Error::InvalidParam("SVD rank k must be >= 1".into()));
        }
        if settings.dct_block == Some(0) {
            return Err(Error::InvalidParam("DCT block size must be >= 1".into()));
        }
        let bsif = Arc::new(BsifFilterBank::resolve(&settings.bsif_bank)?);
        let srm = Arc::new(match &settings.srm_kernels {
            Some(path) => SrmBank::load(std::path::Path::new(path))?,
            None => SrmBank::default(),
        });
        Ok(Self {
            settings,
            bsif,
            srm,
        })
    }

    pub fn with_bank(mut self, bank: BsifFilterBank) -> Self {
        self.settings.bsif_bank = bank.source_id.clone();
        self.bsif = Arc::new(bank);
        self
    }

    fn dct_mode(&self) -> DctMode {
        match self.settings.dct_block {
            None => DctMode::Whole,
            Some(n) => DctMode::Blockwise(n),
        }
    }

    /// Stable key identifying every parameter that influences extraction.
    pub fn cache_key(&self, method: FeatureMethodId) -> String {
        let s = &self.settings;
        let params = match method {
            FeatureMethodId::Ela => format!("q{}", s.ela_quality),
            FeatureMethodId::Svd => format!("k{}", s.svd_k),
            FeatureMethodId::Dct2 => format!("b{:?}", s.dct_block),
            FeatureMethodId::Srm => format!("srm{}", self.srm.digest()),
            FeatureMethodId::BsifIm | FeatureMethodId::BsifH | FeatureMethodId::BsifNh => {
                format!("bank{}", self.bsif.digest())
            }
            _ => String::new(),
        };
        format!("{}|{:?}|{}", method.name(), s.order, params)
    }
}

/// One extractor's output.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub map: Option<FeatureMap>,
    pub vector: FeatureVector,
}

/// Runs `method` on an arbitrary grayscale raster.
pub fn extract_raster(
    image: &GrayImage,
    method: FeatureMethodId,
    config: &FeatureConfig,
) -> Result<Extraction> {
    use FeatureMethodId as M;
    let (map, vector) = match method {
        M::Rgb => {
            let (m, v) = extract_intensity(image);
            (Some(m), v)
        }
        M::Dft => {
            let (m, v) = extract_dft(image);
            (Some(m), v)
        }
        M::Dct2 => {
            let (m, v) = extract_dct2(image, config.dct_mode());
            (Some(m), v)
        }
        M::Ela => {
            let (m, v) = extract_ela(image, config.settings.ela_quality)?;
            (Some(m), v)
        }
        M::Srm => {
            let (m, v) = extract_srm(image, &config.srm);
            (Some(m), v)
        }
        M::Svd => {
            let (m, v) = extract_svd(image, config.settings.svd_k)?;
            (Some(m), v)
        }
        M::Hog => {
            let (m, v) = extract_hog(image);
            (Some(m), v)
        }
        M::Lbp81 => {
            let codes = extract_ulbp_map(image, LbpParams::new(1)?);
            let hist = ulbp_histogram(&codes)?.with_tag(VectorTag::Single(M::Lbp81));
            (Some(codes), hist)
        }
        M::FusionLbp => (None, ulbp_fusion(image)?),
        M::Vlbp | M::Hlbp => {
            let axis = if method == M::Vlbp {
                StripAxis::Vertical
            } else {
                StripAxis::Horizontal
            };
            let codes = extract_ulbp_map(image, LbpParams::new(1)?);
            (Some(codes), ulbp_patch_concat(image, axis)?)
        }
        M::BsifIm | M::BsifH | M::BsifNh => {
            let out = extract_bsif(image, &config.bsif);
            let vector = match method {
                M::BsifIm => out.code_vector,
                M::BsifH => out.histogram,
                _ => out.normalized_histogram,
            };
            (Some(out.code_map), vector)
        }
    };
    let map = map.map(|m| m.with_method(method));
    let vector = match vector.tag {
        VectorTag::Single(_) => vector.with_tag(VectorTag::Single(method)),
        VectorTag::Fused(_) => vector,
    };
    Ok(Extraction { map, vector })
}

/// Runs `method` on a canonical face.
pub fn extract(
    face: &AlignedFace,
    method: FeatureMethodId,
    config: &FeatureConfig,
) -> Result<Extraction> {
    extract_raster(&face.to_image(), method, config)
}

/// Runs `method` honouring the configured [`ExtractionOrder`]. When
/// extracting before the resize, per-pixel outputs are bilinearly resampled
/// to the canonical frame so vector dimensions stay fixed.
pub fn extract_preprocessed(
    input: &Preprocessed,
    method: FeatureMethodId,
    config: &FeatureConfig,
) -> Result<Extraction> {
    if config.settings.order == ExtractionOrder::ResizeThenExtract
        || input.original.dimensions() == (FACE_WIDTH, FACE_HEIGHT)
    {
        return extract(&input.face, method, config);
    }
    let raw = extract_raster(&input.original, method, config)?;
    let map = raw.map.map(|m| m.resized(FACE_WIDTH, FACE_HEIGHT));
    let (ow, oh) = input.original.dimensions();
    let vector = if method.vector_is_plane() {
        let plane = (ow * oh) as usize;
        let mut values = Vec::with_capacity(raw.vector.dim() / plane * 43200);
        for chunk in raw.vector.values.chunks(plane) {
            values.extend(bilinear_resize_plane(
                chunk,
                ow,
                oh,
                FACE_WIDTH,
                FACE_HEIGHT,
            ));
        }
        FeatureVector::new(values, raw.vector.tag)
    } else if method == FeatureMethodId::Svd {
        let mut values = raw.vector.values;
        values.resize(FACE_WIDTH.min(FACE_HEIGHT) as usize, 0.0);
        FeatureVector::new(values, raw.vector.tag)
    } else {
        raw.vector
    };
    Ok(Extraction { map, vector })
}

/// Extracts the vector for a single or fused tag; fused parts are
/// concatenated in tag order.
pub fn extract_tag(
    input: &Preprocessed,
    tag: &VectorTag,
    config: &FeatureConfig,
) -> Result<FeatureVector> {
    match tag {
        VectorTag::Single(m) => Ok(extract_preprocessed(input, *m, config)?.vector),
        VectorTag::Fused(ms) => {
            let parts = ms
                .iter()
                .map(|&m| Ok(extract_preprocessed(input, m, config)?.vector))
                .collect::<Result<Vec<_>>>()?;
            Ok(fuse_vectors(&parts)?.with_tag(tag.clone()))
        }
    }
}

/// Feature-level fusion: concatenation in the given order.
pub fn fuse_vectors(parts: &[FeatureVector]) -> Result<FeatureVector> {
    match parts {
        [] => Err(Error::InvalidParam("cannot fuse an empty list".into())),
        [single] => Ok(single.clone()),
        _ => {
            let mut methods = Vec::new();
            let mut values = Vec::with_capacity(parts.iter().map(|p| p.dim()).sum());
            for p in parts {
                match &p.tag {
                    VectorTag::Single(m) => methods.push(*m),
                    VectorTag::Fused(ms) => methods.extend(ms.iter().copied()),
                }
                values.extend_from_slice(&p.values);
            }
            Ok(FeatureVector::new(values, VectorTag::Fused(methods)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in FeatureMethodId::ALL {
            assert_eq!(m.name().parse::<FeatureMethodId>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.name()));
        }
        assert_eq!(
            "dct".parse::<FeatureMethodId>().unwrap(),
            FeatureMethodId::Dct2
        );
        assert!("SIFT".parse::<FeatureMethodId>().is_err());
    }

    #[test]
    fn fuse_dims_and_order() {
        let a = FeatureVector::new(vec![1.0; 59], VectorTag::Single(FeatureMethodId::Lbp81));
        let b = FeatureVector::new(
            (0..472).map(|i| i as f64).collect(),
            VectorTag::Single(FeatureMethodId::FusionLbp),
        );
        let ab = fuse_vectors(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(ab.dim(), 531);
        assert_eq!(ab.tag.to_string(), "LBP81+FUSION_LBP");
        let ba = fuse_vectors(&[b.clone(), a.clone()]).unwrap();
        let mut x = ab.values.clone();
        let mut y = ba.values.clone();
        x.sort_by(f64::total_cmp);
        y.sort_by(f64::total_cmp);
        assert_eq!(x, y);
        assert_eq!(fuse_vectors(std::slice::from_ref(&a)).unwrap(), a);
        assert!(fuse_vectors(&[]).is_err());
    }

    #[test]
    fn invalid_settings_rejected() {
        let mut s = FeatureSettings {
            ela_quality: 0,
            ..FeatureSettings::default()
        };
        assert!(FeatureConfig::from_settings(s.clone()).is_err());
        s.ela_quality = 101;
        assert!(FeatureConfig::from_settings(s).is_err());
        let s = FeatureSettings {
            svd_k: 0,
            ..Default::default()
        };
        assert!(FeatureConfig::from_settings(s).is_err());
    }
}
