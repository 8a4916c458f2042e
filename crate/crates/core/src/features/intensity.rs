use image::GrayImage;

use super::{FeatureMap, FeatureMethodId, FeatureVector, VectorTag};

/// Grayscale intensities scaled to `[0, 1]`; the vector is the row-major
/// flatten of the map.
pub fn extract_intensity(image: &GrayImage) -> (FeatureMap, FeatureVector) {
    let values: Vec<f64> = image.as_raw().iter().map(|&p| p as f64 / 255.0).collect();
    let vector = FeatureVector::new(values.clone(), VectorTag::Single(FeatureMethodId::Rgb));
    let map =
        FeatureMap::new(image.width(), image.height(), 1, values).with_display_range(0.0, 1.0);
    (map, vector)
}
