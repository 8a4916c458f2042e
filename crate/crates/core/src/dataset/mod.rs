//! Manifest ingestion, face normalisation and stratified splitting.

mod manifest;
mod preprocess;
mod split;

pub use manifest::{
    load_manifest, DatasetManifest, EyeLandmarks, Label, LoadOptions, MissingFilePolicy,
    SampleRecord, SourceDb, Tool, MANIFEST_HEADER, MANIFEST_VERSION,
};
pub use preprocess::{
    bilinear_resize, bilinear_resize_plane, center_crop_3x4, decode_image, load_face,
    preprocess_face, preprocess_face_full, to_gray, AlignedFace, Preprocessed, EYE_TARGET_LEFT,
    EYE_TARGET_RIGHT,
};
pub use split::{split_train_test, SplitPair};
