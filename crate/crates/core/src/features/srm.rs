//! Steganalysis rich-model residual filters.

use std::path::Path;

use image::GrayImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::conv::correlate_zero_sum;
use super::{FeatureMap, FeatureMethodId, FeatureVector, VectorTag};
use crate::{Error, Result};

const SHIPPED_KERNELS: &str = include_str!("../../data/srm_kernels.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrmKernel {
    pub name: String,
    pub size: usize,
    pub scale: f64,
    pub weights: Vec<f64>,
}

impl SrmKernel {
    pub fn scaled(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w * self.scale).collect()
    }
}

/// Three zero-sum high-pass kernels, one per output channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrmBank {
    pub source_id: String,
    pub kernels: Vec<SrmKernel>,
}

impl Default for SrmBank {
    fn default() -> Self {
        Self::from_json(SHIPPED_KERNELS).expect("shipped SRM kernels are valid")
    }
}

impl SrmBank {
    pub fn from_json(text: &str) -> Result<Self> {
        let bank: SrmBank = serde_json::from_str(text)?;
        bank.validate()?;
        Ok(bank)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    fn validate(&self) -> Result<()> {
        let bad = |message: String| Error::FilterBank {
            source_id: self.source_id.clone(),
            message,
        };
        if self.kernels.len() != 3 {
            return Err(bad(format!(
                "expected 3 kernels, got {}",
                self.kernels.len()
            )));
        }
        for k in &self.kernels {
            if k.size % 2 == 0 || k.weights.len() != k.size * k.size {
                return Err(bad(format!("kernel `{}` is not an odd square", k.name)));
            }
            let sum: f64 = k.scaled().iter().sum();
            if sum.abs() > 1e-9 {
                return Err(bad(format!("kernel `{}` sums to {sum}, not 0", k.name)));
            }
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("serializable");
        hex::encode(&Sha256::digest(json)[..8])
    }
}

/// Applies each kernel to the raster (symmetric borders). Output is a
/// 3-channel map; the vector is all channels flattened plane by plane.
pub fn extract_srm(image: &GrayImage, bank: &SrmBank) -> (FeatureMap, FeatureVector) {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let values: Vec<f64> = image.as_raw().iter().map(|&p| p as f64).collect();
    let mut planes = Vec::with_capacity(3 * w * h);
    for k in &bank.kernels {
        planes.extend(correlate_zero_sum(&values, w, h, &k.scaled(), k.size));
    }
    let vector = FeatureVector::new(planes.clone(), VectorTag::Single(FeatureMethodId::Srm));
    (FeatureMap::new(w as u32, h as u32, 3, planes), vector)
}
