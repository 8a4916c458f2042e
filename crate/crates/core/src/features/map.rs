use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::FeatureMethodId;
use crate::dataset::bilinear_resize_plane;
use crate::{Error, Result};

/// A visualisable extractor output. Channels are stored as consecutive
/// row-major planes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub width: u32,
    pub height: u32,
    pub channels: u32,
    pub values: Vec<f64>,
    pub method: Option<FeatureMethodId>,
    /// Values mapped to black and white when rendering.
    pub display_range: (f64, f64),
}

impl FeatureMap {
    /// Builds a map with a min-max display range.
    pub fn new(width: u32, height: u32, channels: u32, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), (width * height * channels) as usize);
        debug_assert!(values.iter().all(|v| v.is_finite()));
        let range = min_max(&values);
        Self {
            width,
            height,
            channels,
            values,
            method: None,
            display_range: range,
        }
    }

    pub fn with_display_range(mut self, lo: f64, hi: f64) -> Self {
        self.display_range = (lo, hi);
        self
    }

    pub fn with_method(mut self, method: FeatureMethodId) -> Self {
        self.method = Some(method);
        self
    }

    pub fn plane(&self, channel: u32) -> &[f64] {
        let n = (self.width * self.height) as usize;
        &self.values[channel as usize * n..(channel as usize + 1) * n]
    }

    pub fn get(&self, x: u32, y: u32, channel: u32) -> f64 {
        self.plane(channel)[(y * self.width + x) as usize]
    }

    /// Bilinear resample of every channel. A min-max display range is
    /// recomputed; a fixed one is kept.
    pub fn resized(&self, width: u32, height: u32) -> FeatureMap {
        if (width, height) == (self.width, self.height) {
            return self.clone();
        }
        let mut values = Vec::with_capacity((width * height * self.channels) as usize);
        for c in 0..self.channels {
            values.extend(bilinear_resize_plane(
                self.plane(c),
                self.width,
                self.height,
                width,
                height,
            ));
        }
        let was_min_max = self.display_range == min_max(&self.values);
        let mut out = FeatureMap::new(width, height, self.channels, values);
        out.method = self.method;
        if !was_min_max {
            out.display_range = self.display_range;
        }
        out
    }

    /// 8-bit rendering of one channel using `display_range`. A degenerate
    /// range renders black.
    pub fn to_u8(&self, channel: u32) -> Vec<u8> {
        let (lo, hi) = self.display_range;
        let span = hi - lo;
        self.plane(channel)
            .iter()
            .map(|&v| {
                if span <= 0.0 {
                    0
                } else {
                    (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8
                }
            })
            .collect()
    }
}

pub(crate) fn min_max(values: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo > hi {
        (0.0, 0.0)
    } else {
        (lo, hi)
    }
}

/// Which method(s) produced a vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum VectorTag {
    Single(FeatureMethodId),
    Fused(Vec<FeatureMethodId>),
}

impl fmt::Display for VectorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VectorTag::Single(m) => f.write_str(m.name()),
            VectorTag::Fused(ms) => {
                for (i, m) in ms.iter().enumerate() {
                    if i > 0 {
                        f.write_str("+")?;
                    }
                    f.write_str(m.name())?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for VectorTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts = s
            .split('+')
            .map(FeatureMethodId::from_str)
            .collect::<Result<Vec<_>>>()?;
        match parts.as_slice() {
            [] => Err(Error::InvalidParam("empty method tag".into())),
            [one] => Ok(VectorTag::Single(*one)),
            _ => Ok(VectorTag::Fused(parts)),
        }
    }
}

impl Serialize for VectorTag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for VectorTag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Flattened descriptor consumed by the classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    #[serde(rename = "method")]
    pub tag: VectorTag,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, tag: VectorTag) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self { values, tag }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn with_tag(mut self, tag: VectorTag) -> Self {
        self.tag = tag;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn u8_rendering_uses_display_range() {
        let m = FeatureMap::new(3, 1, 1, vec![-1.0, 0.0, 1.0]);
        assert_eq!(m.to_u8(0), vec![0, 128, 255]);
        let flat = FeatureMap::new(2, 1, 1, vec![4.0, 4.0]);
        assert_eq!(flat.to_u8(0), vec![0, 0]);
    }

    #[test]
    fn tag_parsing() {
        let t: VectorTag = "DCT2+LBP81".parse().unwrap();
        assert_eq!(
            t,
            VectorTag::Fused(vec![FeatureMethodId::Dct2, FeatureMethodId::Lbp81])
        );
        assert_eq!(t.to_string(), "DCT2+LBP81");
    }
}
