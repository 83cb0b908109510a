use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DatagenError, ImageSlice, MaskLabel};
use crate::nn::{stream_rng, StreamId};

/// Background intensity before the lesion shift and noise.
pub const BACKGROUND_LEVEL: f32 = 0.5;

/// Parameters of the synthetic lesion-phantom generator.
///
/// Defaults put lesions below the per-pixel noise floor (delta -0.08 on
/// sigma 0.05 noise would be a 1.6 sigma shift) so the segmentation task is
/// learnable but not trivial, and most pixels stay background.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PhantomSpec {
    /// (height, width); each must be >= 16 and divisible by 16.
    pub image_size: (usize, usize),
    pub n_slices: usize,
    /// Fraction of slices containing at least one lesion.
    pub lesion_probability: f64,
    /// Signed intensity offset of lesion pixels relative to background.
    pub lesion_intensity_delta: f64,
    /// Inclusive radius bounds, in pixels, for each ellipse semi-axis.
    pub lesion_radius_range: (f64, f64),
    pub max_lesions_per_slice: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            image_size: (64, 64),
            n_slices: 1000,
            lesion_probability: 0.4,
            lesion_intensity_delta: -0.08,
            lesion_radius_range: (2.5, 7.0),
            max_lesions_per_slice: 3,
            noise_sigma: 0.05,
            seed: 1,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let (h, w) = self.image_size;
        if h < 16 || h % 16 != 0 || w < 16 || w % 16 != 0 {
            return Err(DatagenError::InvalidSpec {
                field: "image_size",
                reason: format!("({h}, {w}) must be >= 16 and divisible by 16"),
            });
        }
        if self.n_slices == 0 {
            return Err(DatagenError::InvalidSpec {
                field: "n_slices",
                reason: "must be positive".into(),
            });
        }
        if !(0.0..=1.0).contains(&self.lesion_probability) {
            return Err(DatagenError::InvalidSpec {
                field: "lesion_probability",
                reason: format!("{} outside [0,1]", self.lesion_probability),
            });
        }
        let (rmin, rmax) = self.lesion_radius_range;
        let cap = (h.min(w) as f64) / 2.0;
        if !(rmin >= 1.0 && rmax >= rmin && rmax <= cap) {
            return Err(DatagenError::InvalidSpec {
                field: "lesion_radius_range",
                reason: format!("({rmin}, {rmax}) must satisfy 1 <= min <= max <= {cap}"),
            });
        }
        if self.max_lesions_per_slice == 0 {
            return Err(DatagenError::InvalidSpec {
                field: "max_lesions_per_slice",
                reason: "must be positive".into(),
            });
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(DatagenError::InvalidSpec {
                field: "noise_sigma",
                reason: format!("{} must be finite and >= 0", self.noise_sigma),
            });
        }
        if !self.lesion_intensity_delta.is_finite() {
            return Err(DatagenError::InvalidSpec {
                field: "lesion_intensity_delta",
                reason: "must be finite".into(),
            });
        }
        Ok(())
    }
}

/// Axis-aligned-after-rotation ellipse in pixel coordinates.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Ellipse {
    pub center: (f64, f64), // (row, col)
    pub radii: (f64, f64),  // (semi-axis a, semi-axis b)
    pub theta: f64,         // rotation, radians
}

impl Ellipse {
    /// True when pixel center (i, j) lies inside the ellipse.
    pub fn contains(&self, i: usize, j: usize) -> bool {
        let dy = i as f64 - self.center.0;
        let dx = j as f64 - self.center.1;
        let (st, ct) = self.theta.sin_cos();
        let u = (dx * ct + dy * st) / self.radii.0;
        let v = (-dx * st + dy * ct) / self.radii.1;
        u * u + v * v <= 1.0
    }
}

/// Lesion geometry of one generated slice; empty for background slices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SliceGeometry {
    pub slice_id: String,
    pub ellipses: Vec<Ellipse>,
}

impl SliceGeometry {
    pub fn has_lesion(&self) -> bool {
        !self.ellipses.is_empty()
    }
}

/// Generates `spec.n_slices` slice/mask pairs; deterministic per seed.
pub fn generate_phantoms(spec: &PhantomSpec) -> Result<Vec<(ImageSlice, MaskLabel)>, DatagenError> {
    Ok(generate_phantoms_with_geometry(spec)?.0)
}

/// Like [`generate_phantoms`] but also returns per-slice lesion geometry,
/// which the export manifest and the mask-consistency tests consume.
#[allow(clippy::type_complexity)]
pub fn generate_phantoms_with_geometry(
    spec: &PhantomSpec,
) -> Result<(Vec<(ImageSlice, MaskLabel)>, Vec<SliceGeometry>), DatagenError> {
    spec.validate()?;
    let (h, w) = spec.image_size;
    let mut rng = stream_rng(spec.seed, StreamId::PhantomGen);
    let noise = Normal::new(0.0f64, spec.noise_sigma).expect("validated sigma");
    let mut pairs = Vec::with_capacity(spec.n_slices);
    let mut geometries = Vec::with_capacity(spec.n_slices);

    for s in 0..spec.n_slices {
        let slice_id = format!("phantom_{s:05}");
        let mut image = Array2::<f32>::from_elem((h, w), BACKGROUND_LEVEL);
        let mut labels = Array2::<u8>::zeros((h, w));
        let mut ellipses = Vec::new();

        if rng.random::<f64>() < spec.lesion_probability {
            let count = rng.random_range(1..=spec.max_lesions_per_slice);
            for _ in 0..count {
                let center = (
                    rng.random_range(0.0..h as f64),
                    rng.random_range(0.0..w as f64),
                );
                let (rmin, rmax) = spec.lesion_radius_range;
                let radii = (
                    rng.random_range(rmin..=rmax),
                    rng.random_range(rmin..=rmax),
                );
                let theta = rng.random_range(0.0..std::f64::consts::PI);
                ellipses.push(Ellipse { center, radii, theta });
            }
            for i in 0..h {
                for j in 0..w {
                    if ellipses.iter().any(|e| e.contains(i, j)) {
                        labels[(i, j)] = 1;
                        // one shift per pixel regardless of overlap count
                        image[(i, j)] += spec.lesion_intensity_delta as f32;
                    }
                }
            }
        }

        for v in image.iter_mut() {
            *v = (*v as f64 + noise.sample(&mut rng)).clamp(0.0, 1.0) as f32;
        }

        let slice = ImageSlice::new(image, slice_id.clone())?;
        let mask = MaskLabel::new(labels, 2)?;
        pairs.push((slice, mask));
        geometries.push(SliceGeometry { slice_id, ellipses });
    }
    Ok((pairs, geometries))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> PhantomSpec {
        PhantomSpec {
            image_size: (32, 32),
            n_slices: 40,
            seed: 7,
            ..PhantomSpec::default()
        }
    }

    #[test]
    fn zero_probability_means_all_background() {
        let spec = PhantomSpec {
            lesion_probability: 0.0,
            n_slices: 25,
            ..small_spec()
        };
        let pairs = generate_phantoms(&spec).unwrap();
        assert_eq!(pairs.len(), 25);
        for (_, mask) in &pairs {
            assert_eq!(mask.class_count(1), 0);
        }
    }

    #[test]
    fn same_seed_regenerates_identical_bytes() {
        let spec = small_spec();
        let a = generate_phantoms(&spec).unwrap();
        let b = generate_phantoms(&spec).unwrap();
        assert_eq!(a.len(), b.len());
        for ((sa, ma), (sb, mb)) in a.iter().zip(&b) {
            assert_eq!(sa.slice_id(), sb.slice_id());
            assert!(sa
                .pixels()
                .iter()
                .zip(sb.pixels().iter())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
            assert_eq!(ma.labels(), mb.labels());
        }
    }

    #[test]
    fn mask_agrees_with_generated_geometry() {
        let (pairs, geoms) = generate_phantoms_with_geometry(&small_spec()).unwrap();
        for ((slice, mask), geom) in pairs.iter().zip(&geoms) {
            let (h, w) = slice.dim();
            for i in 0..h {
                for j in 0..w {
                    let inside = geom.ellipses.iter().any(|e| e.contains(i, j));
                    assert_eq!(
                        mask.labels()[(i, j)] == 1,
                        inside,
                        "slice {} pixel ({i},{j})",
                        slice.slice_id()
                    );
                }
            }
        }
    }

    #[test]
    fn intensities_stay_in_unit_interval() {
        let spec = PhantomSpec {
            noise_sigma: 0.4, // extreme noise to force clipping
            ..small_spec()
        };
        let pairs = generate_phantoms(&spec).unwrap();
        for (slice, _) in &pairs {
            assert!(slice.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn lesion_slice_count_lands_in_binomial_99_interval() {
        // oracle: exact binomial equal-tail 99% interval via pmf summation
        let spec = PhantomSpec {
            n_slices: 1000,
            lesion_probability: 0.4,
            seed: 3,
            ..PhantomSpec::default()
        };
        let (_, geoms) = generate_phantoms_with_geometry(&spec).unwrap();
        let observed = geoms.iter().filter(|g| g.has_lesion()).count();

        let (n, p) = (1000usize, 0.4f64);
        let mut log_pmf = vec![0.0f64; n + 1];
        let ln_fact: Vec<f64> = {
            let mut v = vec![0.0f64; n + 1];
            for k in 1..=n {
                v[k] = v[k - 1] + (k as f64).ln();
            }
            v
        };
        for (k, lp) in log_pmf.iter_mut().enumerate() {
            *lp = ln_fact[n] - ln_fact[k] - ln_fact[n - k]
                + k as f64 * p.ln()
                + (n - k) as f64 * (1.0 - p).ln();
        }
        let mut acc = 0.0;
        let mut lo = None;
        let mut hi = None;
        for k in 0..=n {
            acc += log_pmf[k].exp();
            if lo.is_none() && acc >= 0.005 {
                lo = Some(k);
            }
            if hi.is_none() && acc >= 0.995 {
                hi = Some(k);
            }
        }
        let (lo, hi) = (lo.unwrap(), hi.unwrap());
        assert_eq!((lo, hi), (360, 440), "frozen oracle interval");
        assert!(
            (lo..=hi).contains(&observed),
            "lesion slice count {observed} outside [{lo}, {hi}]"
        );
    }

    #[test]
    fn invalid_specs_name_the_field() {
        let bad = PhantomSpec {
            lesion_probability: 1.5,
            ..PhantomSpec::default()
        };
        let err = generate_phantoms(&bad).unwrap_err();
        assert!(err.to_string().contains("lesion_probability"), "{err}");

        let bad = PhantomSpec {
            lesion_radius_range: (0.2, 5.0),
            ..PhantomSpec::default()
        };
        let err = generate_phantoms(&bad).unwrap_err();
        assert!(err.to_string().contains("lesion_radius_range"), "{err}");

        let bad = PhantomSpec {
            image_size: (60, 64),
            ..PhantomSpec::default()
        };
        let err = generate_phantoms(&bad).unwrap_err();
        assert!(err.to_string().contains("image_size"), "{err}");
    }
}
