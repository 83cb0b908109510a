//! Network definitions: the pluggable generator backbone with a reference
//! encoder-decoder implementation, the four-layer discriminator with its
//! feature-matching tap, and self-describing checkpoints.

mod checkpoint;
mod discriminator;
mod generator;

pub use checkpoint::{BlobReader, BlobWriter, CheckpointError, CheckpointSidecar};
pub use discriminator::{build_discriminator, DiscCache, Discriminator, DiscriminatorOutput};
pub use generator::{build_reference_generator, GenCache, GeneratorBackbone, RefGenerator};

use ndarray::{Array4, ArrayView4};
use thiserror::Error;

use crate::datagen::{ImageSlice, MaskLabel};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
}

impl From<crate::nn::NnError> for NetError {
    fn from(e: crate::nn::NnError) -> Self {
        match e {
            crate::nn::NnError::Shape(s) => NetError::Shape(s),
        }
    }
}

/// Stacks image slices into a `[B, 1, H, W]` batch tensor.
pub fn images_to_batch(slices: &[&ImageSlice]) -> Result<Array4<f32>, NetError> {
    if slices.is_empty() {
        return Err(NetError::Shape("empty image batch".into()));
    }
    let (h, w) = slices[0].dim();
    let mut out = Array4::<f32>::zeros((slices.len(), 1, h, w));
    for (b, slice) in slices.iter().enumerate() {
        if slice.dim() != (h, w) {
            return Err(NetError::Shape(format!(
                "slice {} is {:?}, batch expects {:?}",
                slice.slice_id(),
                slice.dim(),
                (h, w)
            )));
        }
        out.index_axis_mut(ndarray::Axis(0), b)
            .index_axis_mut(ndarray::Axis(0), 0)
            .assign(&slice.pixels());
    }
    Ok(out)
}

/// One-hot encodes hard masks into a `[B, C, H, W]` batch tensor.
pub fn masks_to_onehot(masks: &[&MaskLabel]) -> Result<Array4<f32>, NetError> {
    if masks.is_empty() {
        return Err(NetError::Shape("empty mask batch".into()));
    }
    let (h, w) = masks[0].dim();
    let c = masks[0].n_classes();
    let mut out = Array4::<f32>::zeros((masks.len(), c, h, w));
    for (b, mask) in masks.iter().enumerate() {
        if mask.dim() != (h, w) || mask.n_classes() != c {
            return Err(NetError::Shape(format!(
                "mask {b} does not match batch geometry"
            )));
        }
        let labels = mask.labels();
        for i in 0..h {
            for j in 0..w {
                out[(b, labels[(i, j)] as usize, i, j)] = 1.0;
            }
        }
    }
    Ok(out)
}

/// Concatenates an image batch with a mask batch along the channel axis:
/// image channels first, then the `C` mask channels.
pub fn concat_image_mask(
    images: &ArrayView4<f32>,
    masks: &ArrayView4<f32>,
) -> Result<Array4<f32>, NetError> {
    let (bi, _, hi, wi) = images.dim();
    let (bm, _, hm, wm) = masks.dim();
    if bi != bm || hi != hm || wi != wm {
        return Err(NetError::Shape(format!(
            "image batch {:?} does not align with mask batch {:?}",
            images.dim(),
            masks.dim()
        )));
    }
    Ok(crate::nn::concat_channels(images, masks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn concat_orders_image_channel_first() {
        let images = Array4::from_elem((2, 1, 16, 16), 0.25f32);
        let masks = Array4::from_shape_fn((2, 2, 16, 16), |(_, c, _, _)| c as f32);
        let joined = concat_image_mask(&images.view(), &masks.view()).unwrap();
        assert_eq!(joined.dim(), (2, 3, 16, 16));
        assert_eq!(joined[(0, 0, 3, 3)], 0.25);
        assert_eq!(joined[(0, 1, 3, 3)], 0.0);
        assert_eq!(joined[(0, 2, 3, 3)], 1.0);
    }

    #[test]
    fn concat_rejects_mismatched_batches() {
        let images = Array4::<f32>::zeros((2, 1, 16, 16));
        let masks = Array4::<f32>::zeros((3, 2, 16, 16));
        assert!(concat_image_mask(&images.view(), &masks.view()).is_err());
    }

    #[test]
    fn onehot_channels_sum_to_one() {
        let labels = Array2::from_shape_fn((16, 16), |(i, j)| ((i + j) % 2) as u8);
        let mask = MaskLabel::new(labels, 2).unwrap();
        let onehot = masks_to_onehot(&[&mask]).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                let s = onehot[(0, 0, i, j)] + onehot[(0, 1, i, j)];
                assert_eq!(s, 1.0);
            }
        }
    }

    #[test]
    fn batch_of_12_keeps_batch_dimension() {
        let slices: Vec<ImageSlice> = (0..12)
            .map(|k| {
                ImageSlice::new(Array2::from_elem((64, 64), 0.5f32), format!("s{k}")).unwrap()
            })
            .collect();
        let refs: Vec<&ImageSlice> = slices.iter().collect();
        let batch = images_to_batch(&refs).unwrap();
        assert_eq!(batch.dim(), (12, 1, 64, 64));
    }
}
