use std::fs;
use std::path::Path;

use image::{GrayImage, ImageReader, Luma};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{DatagenError, ImageSlice, MaskLabel, PhantomSpec, SliceGeometry};

/// Manifest written next to an exported dataset. Deterministic content:
/// regenerating with the same spec reproduces the file byte for byte.
#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub spec: PhantomSpec,
    /// Labeled/unlabeled sampling happens at slice level, not scan level.
    pub sampling_level: String,
    pub slices: Vec<SliceFlag>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SliceFlag {
    pub slice_id: String,
    pub has_lesion: bool,
}

fn io_err(path: &Path, source: std::io::Error) -> DatagenError {
    DatagenError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Loads matched PNG slice/mask pairs. Images are 8-bit grayscale divided
/// by 255; mask pixels greater than zero become class 1.
pub fn load_png_dataset(
    image_dir: &Path,
    mask_dir: &Path,
) -> Result<Vec<(ImageSlice, MaskLabel)>, DatagenError> {
    let mut names: Vec<String> = fs::read_dir(image_dir)
        .map_err(|e| io_err(image_dir, e))?
        .filter_map(|entry| {
            let entry = entry.ok()?;
            let name = entry.file_name().to_string_lossy().into_owned();
            name.ends_with(".png").then_some(name)
        })
        .collect();
    names.sort();

    let missing: Vec<String> = names
        .iter()
        .filter(|n| !mask_dir.join(n).exists())
        .map(|n| n.trim_end_matches(".png").to_string())
        .collect();
    if !missing.is_empty() {
        return Err(DatagenError::MissingMasks(missing));
    }

    let mut pairs = Vec::with_capacity(names.len());
    for name in &names {
        let img_path = image_dir.join(name);
        let mask_path = mask_dir.join(name);
        let img = read_gray(&img_path)?;
        let mask = read_gray(&mask_path)?;
        if img.dimensions() != mask.dimensions() {
            return Err(DatagenError::SizeMismatch { file: name.clone() });
        }
        let (w, h) = img.dimensions();
        let pixels = Array2::from_shape_fn((h as usize, w as usize), |(i, j)| {
            img.get_pixel(j as u32, i as u32).0[0] as f32 / 255.0
        });
        let labels = Array2::from_shape_fn((h as usize, w as usize), |(i, j)| {
            u8::from(mask.get_pixel(j as u32, i as u32).0[0] > 0)
        });
        let stem = name.trim_end_matches(".png").to_string();
        pairs.push((ImageSlice::new(pixels, stem)?, MaskLabel::new(labels, 2)?));
    }
    Ok(pairs)
}

fn read_gray(path: &Path) -> Result<GrayImage, DatagenError> {
    let img = ImageReader::open(path)
        .map_err(|e| io_err(path, e))?
        .decode()
        .map_err(|e| DatagenError::Png {
            path: path.display().to_string(),
            source: e,
        })?;
    Ok(img.into_luma8())
}

/// Writes `images/`, `masks/`, and `manifest.json` under `dir`.
/// Images quantize to 8 bits; masks use 0/255 for class 0/1.
pub fn export_dataset(
    dir: &Path,
    pairs: &[(ImageSlice, MaskLabel)],
    spec: &PhantomSpec,
    geometry: &[SliceGeometry],
) -> Result<(), DatagenError> {
    let images_dir = dir.join("images");
    let masks_dir = dir.join("masks");
    fs::create_dir_all(&images_dir).map_err(|e| io_err(&images_dir, e))?;
    fs::create_dir_all(&masks_dir).map_err(|e| io_err(&masks_dir, e))?;

    for (slice, mask) in pairs {
        let (h, w) = slice.dim();
        let mut img = GrayImage::new(w as u32, h as u32);
        for i in 0..h {
            for j in 0..w {
                let v = (slice.pixels()[(i, j)] * 255.0).round().clamp(0.0, 255.0) as u8;
                img.put_pixel(j as u32, i as u32, Luma([v]));
            }
        }
        let path = images_dir.join(format!("{}.png", slice.slice_id()));
        img.save(&path).map_err(|e| DatagenError::Png {
            path: path.display().to_string(),
            source: e,
        })?;

        let mut m = GrayImage::new(w as u32, h as u32);
        for i in 0..h {
            for j in 0..w {
                let v = if mask.labels()[(i, j)] > 0 { 255 } else { 0 };
                m.put_pixel(j as u32, i as u32, Luma([v]));
            }
        }
        let path = masks_dir.join(format!("{}.png", slice.slice_id()));
        m.save(&path).map_err(|e| DatagenError::Png {
            path: path.display().to_string(),
            source: e,
        })?;
    }

    let manifest = DatasetManifest {
        spec: spec.clone(),
        sampling_level: "slice".to_string(),
        slices: geometry
            .iter()
            .map(|g| SliceFlag {
                slice_id: g.slice_id.clone(),
                has_lesion: g.has_lesion(),
            })
            .collect(),
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| DatagenError::Manifest(e.to_string()))?;
    fs::write(&path, json).map_err(|e| io_err(&path, e))?;
    Ok(())
}

/// Reads back the manifest of an exported dataset.
pub fn load_manifest(dir: &Path) -> Result<DatasetManifest, DatagenError> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    serde_json::from_str(&text).map_err(|e| DatagenError::Manifest(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::generate_phantoms_with_geometry;

    #[test]
    fn empty_directories_load_as_empty_list() {
        let tmp = tempfile::tempdir().unwrap();
        let imgs = tmp.path().join("images");
        let masks = tmp.path().join("masks");
        fs::create_dir_all(&imgs).unwrap();
        fs::create_dir_all(&masks).unwrap();
        let pairs = load_png_dataset(&imgs, &masks).unwrap();
        assert!(pairs.is_empty());
    }

    #[test]
    fn export_then_load_roundtrips_quantized_values() {
        let spec = PhantomSpec {
            image_size: (32, 32),
            n_slices: 6,
            seed: 11,
            ..PhantomSpec::default()
        };
        let (pairs, geoms) = generate_phantoms_with_geometry(&spec).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        export_dataset(tmp.path(), &pairs, &spec, &geoms).unwrap();

        let loaded =
            load_png_dataset(&tmp.path().join("images"), &tmp.path().join("masks")).unwrap();
        assert_eq!(loaded.len(), 6);
        for ((orig_s, orig_m), (got_s, got_m)) in pairs.iter().zip(&loaded) {
            assert_eq!(orig_s.slice_id(), got_s.slice_id());
            assert_eq!(orig_m.labels(), got_m.labels());
            // loader must reproduce round(v*255)/255 exactly
            for (a, b) in orig_s.pixels().iter().zip(got_s.pixels().iter()) {
                let quant = (a * 255.0).round() / 255.0;
                assert!((quant - b).abs() < 1e-6);
            }
        }
        let manifest = load_manifest(tmp.path()).unwrap();
        assert_eq!(manifest.slices.len(), 6);
        assert_eq!(manifest.sampling_level, "slice");
        for (flag, geom) in manifest.slices.iter().zip(&geoms) {
            assert_eq!(flag.has_lesion, geom.has_lesion());
        }
    }

    #[test]
    fn missing_mask_lists_unmatched_base_names() {
        let spec = PhantomSpec {
            image_size: (32, 32),
            n_slices: 3,
            seed: 2,
            ..PhantomSpec::default()
        };
        let (pairs, geoms) = generate_phantoms_with_geometry(&spec).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        export_dataset(tmp.path(), &pairs, &spec, &geoms).unwrap();
        fs::remove_file(tmp.path().join("masks/phantom_00001.png")).unwrap();
        let err =
            load_png_dataset(&tmp.path().join("images"), &tmp.path().join("masks")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("phantom_00001"), "{msg}");
        assert!(!msg.contains("phantom_00000"), "{msg}");
    }

    #[test]
    fn size_mismatch_names_the_file() {
        let tmp = tempfile::tempdir().unwrap();
        let imgs = tmp.path().join("images");
        let masks = tmp.path().join("masks");
        fs::create_dir_all(&imgs).unwrap();
        fs::create_dir_all(&masks).unwrap();
        GrayImage::new(32, 32).save(imgs.join("a.png")).unwrap();
        GrayImage::new(16, 32).save(masks.join("a.png")).unwrap();
        let err = load_png_dataset(&imgs, &masks).unwrap_err();
        assert!(err.to_string().contains("a.png"), "{err}");
    }

    #[test]
    fn all_zero_mask_maps_to_background_class() {
        let tmp = tempfile::tempdir().unwrap();
        let imgs = tmp.path().join("images");
        let masks = tmp.path().join("masks");
        fs::create_dir_all(&imgs).unwrap();
        fs::create_dir_all(&masks).unwrap();
        let mut img = GrayImage::new(16, 16);
        for (x, y, p) in img.enumerate_pixels_mut() {
            *p = Luma([((x + y) * 7 % 256) as u8]);
        }
        img.save(imgs.join("z.png")).unwrap();
        GrayImage::new(16, 16).save(masks.join("z.png")).unwrap();
        let pairs = load_png_dataset(&imgs, &masks).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].1.class_count(1), 0);
        // intensities are exactly value/255
        assert!((pairs[0].0.pixels()[(0, 1)] - 7.0 / 255.0).abs() < 1e-7);
    }
}
