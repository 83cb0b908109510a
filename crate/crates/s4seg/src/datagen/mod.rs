//! Synthetic phantom datasets, PNG loading, and labeled/unlabeled splits.
//!
//! Phantoms are low-contrast elliptical lesions on a noisy flat background,
//! sized so that full training runs finish on a CPU. The same types also
//! carry externally loaded PNG slice/mask pairs.

mod phantom;
mod png_io;
mod split;

pub use phantom::{generate_phantoms, generate_phantoms_with_geometry, Ellipse, PhantomSpec, SliceGeometry};
pub use png_io::{export_dataset, load_manifest, load_png_dataset, DatasetManifest, SliceFlag};
pub use split::{carve_test, make_split, split_pool};

use ndarray::{Array2, ArrayView2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("invalid spec: field `{field}`: {reason}")]
    InvalidSpec { field: &'static str, reason: String },
    #[error("invalid image `{0}`")]
    InvalidImage(String),
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("missing masks for: {}", .0.join(", "))]
    MissingMasks(Vec<String>),
    #[error("size mismatch between image and mask for `{file}`")]
    SizeMismatch { file: String },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("png error for {path}: {source}")]
    Png {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("manifest error: {0}")]
    Manifest(String),
}

/// One 2D grayscale slice with intensities in `[0, 1]`.
///
/// Spatial dims must be at least 16 and divisible by 16 so four stride-2
/// discriminator layers land on integer sizes.
#[derive(Debug, Clone)]
pub struct ImageSlice {
    pixels: Array2<f32>,
    slice_id: String,
}

impl ImageSlice {
    pub fn new(pixels: Array2<f32>, slice_id: impl Into<String>) -> Result<Self, DatagenError> {
        let slice_id = slice_id.into();
        let (h, w) = pixels.dim();
        for (dim, name) in [(h, "height"), (w, "width")] {
            if dim < 16 || dim % 16 != 0 {
                return Err(DatagenError::InvalidImage(format!(
                    "{slice_id}: {name} {dim} must be >= 16 and divisible by 16"
                )));
            }
        }
        if let Some(bad) = pixels.iter().find(|v| !(**v >= 0.0 && **v <= 1.0)) {
            return Err(DatagenError::InvalidImage(format!(
                "{slice_id}: intensity {bad} outside [0,1]"
            )));
        }
        Ok(ImageSlice { pixels, slice_id })
    }

    pub fn pixels(&self) -> ArrayView2<'_, f32> {
        self.pixels.view()
    }

    pub fn slice_id(&self) -> &str {
        &self.slice_id
    }

    pub fn dim(&self) -> (usize, usize) {
        self.pixels.dim()
    }
}

/// Per-pixel hard class assignment paired with an [`ImageSlice`].
#[derive(Debug, Clone)]
pub struct MaskLabel {
    labels: Array2<u8>,
    n_classes: usize,
}

impl MaskLabel {
    pub fn new(labels: Array2<u8>, n_classes: usize) -> Result<Self, DatagenError> {
        if n_classes < 2 || n_classes > 256 {
            return Err(DatagenError::InvalidMask(format!(
                "n_classes {n_classes} out of supported range 2..=256"
            )));
        }
        if let Some(bad) = labels.iter().find(|v| **v as usize >= n_classes) {
            return Err(DatagenError::InvalidMask(format!(
                "label {bad} >= n_classes {n_classes}"
            )));
        }
        Ok(MaskLabel { labels, n_classes })
    }

    pub fn labels(&self) -> ArrayView2<'_, u8> {
        self.labels.view()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn dim(&self) -> (usize, usize) {
        self.labels.dim()
    }

    /// Count of pixels assigned to `class`.
    pub fn class_count(&self, class: u8) -> usize {
        self.labels.iter().filter(|v| **v == class).count()
    }
}

/// Labeled/unlabeled/test partition of a slice pool.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub labeled: Vec<(ImageSlice, MaskLabel)>,
    pub unlabeled: Vec<ImageSlice>,
    pub test: Vec<(ImageSlice, MaskLabel)>,
    pub labeled_ratio: f64,
    pub unlabeled_ratio: f64,
}

impl DatasetSplit {
    /// Checks pairwise slice-id disjointness of the three sets.
    pub fn is_disjoint(&self) -> bool {
        use std::collections::HashSet;
        let mut seen = HashSet::new();
        for id in self
            .labeled
            .iter()
            .map(|(s, _)| s.slice_id())
            .chain(self.unlabeled.iter().map(|s| s.slice_id()))
            .chain(self.test.iter().map(|(s, _)| s.slice_id()))
        {
            if !seen.insert(id.to_string()) {
                return false;
            }
        }
        true
    }
}
