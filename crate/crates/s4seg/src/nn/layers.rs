use ndarray::{Array4, ArrayView4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// ReLU. The cache keeps the activation sign pattern.
pub struct Relu;

pub struct ReluCache {
    out_positive: Vec<bool>,
}

impl Relu {
    pub fn forward(x: &mut Array4<f32>) -> ReluCache {
        let xs = x.as_slice_mut().expect("contiguous");
        let mask: Vec<bool> = xs.iter().map(|v| *v > 0.0).collect();
        for (v, keep) in xs.iter_mut().zip(&mask) {
            if !keep {
                *v = 0.0;
            }
        }
        ReluCache { out_positive: mask }
    }

    pub fn backward(cache: &ReluCache, grad: &mut Array4<f32>) {
        let gs = grad.as_slice_mut().expect("contiguous");
        for (g, keep) in gs.iter_mut().zip(&cache.out_positive) {
            if !keep {
                *g = 0.0;
            }
        }
    }
}

/// Leaky ReLU with a fixed negative slope.
pub struct LeakyRelu {
    pub slope: f32,
}

impl LeakyRelu {
    pub fn forward(&self, x: &mut Array4<f32>) -> ReluCache {
        let xs = x.as_slice_mut().expect("contiguous");
        let mask: Vec<bool> = xs.iter().map(|v| *v > 0.0).collect();
        for (v, keep) in xs.iter_mut().zip(&mask) {
            if !keep {
                *v *= self.slope;
            }
        }
        ReluCache { out_positive: mask }
    }

    pub fn backward(&self, cache: &ReluCache, grad: &mut Array4<f32>) {
        let gs = grad.as_slice_mut().expect("contiguous");
        for (g, keep) in gs.iter_mut().zip(&cache.out_positive) {
            if !keep {
                *g *= self.slope;
            }
        }
    }
}

/// Inverted dropout: kept activations are scaled by 1/(1-p) at train time so
/// eval needs no rescaling. Eval mode bypasses the layer entirely and draws
/// nothing from the RNG. Keep/drop decisions come from a block of RNG bytes
/// (one u32 per element, thresholded), so the cost is one `fill_bytes` call
/// rather than per-element draws.
pub struct Dropout {
    pub p: f32,
}

pub struct DropoutCache {
    keep: Vec<u32>, // 0 or 1 per element
    scale: f32,
}

impl Dropout {
    pub fn forward(&self, x: &mut Array4<f32>, rng: &mut ChaCha8Rng) -> DropoutCache {
        let scale = 1.0 / (1.0 - self.p);
        let xs = x.as_slice_mut().expect("contiguous");
        let n = xs.len();
        let threshold = (self.p as f64 * 4294967296.0) as u64;
        let mut bytes = vec![0u8; n * 4];
        rng.fill_bytes(&mut bytes);
        let keep: Vec<u32> = bytes
            .chunks_exact(4)
            .map(|c| {
                let r = u32::from_le_bytes(c.try_into().expect("4 bytes")) as u64;
                u32::from(r >= threshold)
            })
            .collect();
        for (v, k) in xs.iter_mut().zip(&keep) {
            *v *= *k as f32 * scale;
        }
        DropoutCache { keep, scale }
    }

    pub fn backward(cache: &DropoutCache, grad: &mut Array4<f32>) {
        let gs = grad.as_slice_mut().expect("contiguous");
        for (g, k) in gs.iter_mut().zip(&cache.keep) {
            *g *= *k as f32 * cache.scale;
        }
    }
}

/// 2x2 max pooling with stride 2. Stores the argmax corner for backward.
pub struct MaxPool2;

pub struct MaxPoolCache {
    argmax: Vec<u8>, // 0..4, index into the 2x2 window, row-major
    in_dim: (usize, usize, usize, usize),
}

impl MaxPool2 {
    pub fn forward(x: &ArrayView4<f32>) -> (Array4<f32>, MaxPoolCache) {
        let (b, c, h, w) = x.dim();
        debug_assert!(h % 2 == 0 && w % 2 == 0);
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Array4::<f32>::zeros((b, c, oh, ow));
        let mut argmax = vec![0u8; b * c * oh * ow];
        let xs = x.as_slice().expect("contiguous");
        let os = out.as_slice_mut().expect("contiguous");
        for bc in 0..b * c {
            let base = bc * h * w;
            let obase = bc * oh * ow;
            for oy in 0..oh {
                let top = &xs[base + (2 * oy) * w..][..w];
                let bot = &xs[base + (2 * oy + 1) * w..][..w];
                let orow = &mut os[obase + oy * ow..][..ow];
                let arow = &mut argmax[obase + oy * ow..][..ow];
                for ox in 0..ow {
                    let vals = [top[2 * ox], top[2 * ox + 1], bot[2 * ox], bot[2 * ox + 1]];
                    let mut best = 0usize;
                    for j in 1..4 {
                        if vals[j] > vals[best] {
                            best = j;
                        }
                    }
                    orow[ox] = vals[best];
                    arow[ox] = best as u8;
                }
            }
        }
        (
            out,
            MaxPoolCache {
                argmax,
                in_dim: (b, c, h, w),
            },
        )
    }

    pub fn backward(cache: &MaxPoolCache, grad_out: &ArrayView4<f32>) -> Array4<f32> {
        let (b, c, h, w) = cache.in_dim;
        let (oh, ow) = (h / 2, w / 2);
        let mut gx = Array4::<f32>::zeros((b, c, h, w));
        let gs = gx.as_slice_mut().expect("contiguous");
        let gos = grad_out.as_slice().expect("contiguous");
        for bc in 0..b * c {
            let base = bc * h * w;
            let obase = bc * oh * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    let j = cache.argmax[obase + oy * ow + ox] as usize;
                    let (dy, dx) = (j / 2, j % 2);
                    gs[base + (2 * oy + dy) * w + 2 * ox + dx] += gos[obase + oy * ow + ox];
                }
            }
        }
        gx
    }
}

/// Nearest-neighbor 2x upsampling. Backward sums each 2x2 block.
pub struct UpsampleNearest2;

impl UpsampleNearest2 {
    pub fn forward(x: &ArrayView4<f32>) -> Array4<f32> {
        let (b, c, h, w) = x.dim();
        let mut out = Array4::<f32>::zeros((b, c, 2 * h, 2 * w));
        let xs = x.as_slice().expect("contiguous");
        let os = out.as_slice_mut().expect("contiguous");
        for bc in 0..b * c {
            let base = bc * h * w;
            let obase = bc * 4 * h * w;
            for i in 0..h {
                let src = &xs[base + i * w..][..w];
                let (row0, rest) = os[obase + (2 * i) * 2 * w..].split_at_mut(2 * w);
                let row1 = &mut rest[..2 * w];
                for (j, &v) in src.iter().enumerate() {
                    row0[2 * j] = v;
                    row0[2 * j + 1] = v;
                    row1[2 * j] = v;
                    row1[2 * j + 1] = v;
                }
            }
        }
        out
    }

    pub fn backward(grad_out: &ArrayView4<f32>) -> Array4<f32> {
        let (b, c, h2, w2) = grad_out.dim();
        let (h, w) = (h2 / 2, w2 / 2);
        let mut gx = Array4::<f32>::zeros((b, c, h, w));
        let gs = gx.as_slice_mut().expect("contiguous");
        let gos = grad_out.as_slice().expect("contiguous");
        for bc in 0..b * c {
            let base = bc * h * w;
            let obase = bc * h2 * w2;
            for i in 0..h {
                let row0 = &gos[obase + (2 * i) * w2..][..w2];
                let row1 = &gos[obase + (2 * i + 1) * w2..][..w2];
                let dst = &mut gs[base + i * w..][..w];
                for (j, d) in dst.iter_mut().enumerate() {
                    *d = row0[2 * j] + row0[2 * j + 1] + row1[2 * j] + row1[2 * j + 1];
                }
            }
        }
        gx
    }
}

/// Concatenates two tensors along the channel axis into a standard-layout
/// array (the conv layers require contiguous standard-order input).
pub fn concat_channels(a: &ArrayView4<f32>, b: &ArrayView4<f32>) -> Array4<f32> {
    let (ba, ca, h, w) = a.dim();
    let (bb, cb, hb, wb) = b.dim();
    debug_assert_eq!((ba, h, w), (bb, hb, wb));
    let mut out = Array4::<f32>::zeros((ba, ca + cb, h, w));
    out.slice_mut(ndarray::s![.., ..ca, .., ..]).assign(a);
    out.slice_mut(ndarray::s![.., ca.., .., ..]).assign(b);
    out
}

/// Splits a channel-axis gradient back into the two concatenated parts.
pub fn split_channels(grad: &ArrayView4<f32>, c_first: usize) -> (Array4<f32>, Array4<f32>) {
    let a = grad.slice(ndarray::s![.., ..c_first, .., ..]).to_owned();
    let b = grad.slice(ndarray::s![.., c_first.., .., ..]).to_owned();
    (a, b)
}

/// Per-pixel softmax over the channel axis of `[B, C, H, W]`.
pub fn channel_softmax(logits: &ArrayView4<f32>) -> Array4<f32> {
    let (b, c, h, w) = logits.dim();
    let plane = h * w;
    let mut out = logits.to_owned();
    let os = out.as_slice_mut().expect("contiguous");
    for bi in 0..b {
        let sample = &mut os[bi * c * plane..][..c * plane];
        for px in 0..plane {
            let mut m = f32::NEG_INFINITY;
            for ci in 0..c {
                m = m.max(sample[ci * plane + px]);
            }
            let mut z = 0.0f32;
            for ci in 0..c {
                let e = (sample[ci * plane + px] - m).exp();
                sample[ci * plane + px] = e;
                z += e;
            }
            let inv = 1.0 / z;
            for ci in 0..c {
                sample[ci * plane + px] *= inv;
            }
        }
    }
    out
}

/// Given dL/dprobs and the probs themselves, produces dL/dlogits:
/// dL/dz_c = p_c * (g_c - sum_c' g_c' p_c').
pub fn channel_softmax_backward(probs: &ArrayView4<f32>, grad_probs: &ArrayView4<f32>) -> Array4<f32> {
    let (b, c, h, w) = probs.dim();
    let plane = h * w;
    let mut gz = Array4::<f32>::zeros((b, c, h, w));
    let ps = probs.as_slice().expect("contiguous");
    let gps = grad_probs.as_slice().expect("contiguous");
    let gzs = gz.as_slice_mut().expect("contiguous");
    for bi in 0..b {
        let off = bi * c * plane;
        for px in 0..plane {
            let mut dot = 0.0f32;
            for ci in 0..c {
                let idx = off + ci * plane + px;
                dot += gps[idx] * ps[idx];
            }
            for ci in 0..c {
                let idx = off + ci * plane + px;
                gzs[idx] = ps[idx] * (gps[idx] - dot);
            }
        }
    }
    gz
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::SeedableRng;

    #[test]
    fn maxpool_roundtrip_gradient() {
        let x = Array4::from_shape_fn((1, 1, 4, 4), |(_, _, i, j)| (i * 4 + j) as f32);
        let (out, cache) = MaxPool2::forward(&x.view());
        assert_eq!(out[(0, 0, 0, 0)], 5.0);
        assert_eq!(out[(0, 0, 1, 1)], 15.0);
        let g = Array4::from_elem((1, 1, 2, 2), 1.0f32);
        let gx = MaxPool2::backward(&cache, &g.view());
        assert_eq!(gx.sum(), 4.0);
        assert_eq!(gx[(0, 0, 1, 1)], 1.0); // argmax of top-left window
    }

    #[test]
    fn upsample_backward_sums_blocks() {
        let x = Array4::from_shape_fn((1, 2, 2, 2), |(_, c, i, j)| (c * 4 + i * 2 + j) as f32);
        let up = UpsampleNearest2::forward(&x.view());
        assert_eq!(up.dim(), (1, 2, 4, 4));
        assert_eq!(up[(0, 1, 3, 3)], 7.0);
        assert_eq!(up[(0, 1, 2, 3)], 7.0);
        assert_eq!(up[(0, 0, 0, 1)], 0.0);
        let g = Array4::from_elem((1, 2, 4, 4), 0.5f32);
        let gx = UpsampleNearest2::backward(&g.view());
        assert!(gx.iter().all(|v| (*v - 2.0).abs() < 1e-6));
    }

    #[test]
    fn softmax_rows_sum_to_one_and_backward_is_orthogonal_to_constants() {
        let logits = Array4::from_shape_fn((2, 3, 2, 2), |(b, c, i, j)| {
            ((b + 2 * c + 3 * i + 5 * j) as f32 * 0.37).sin() * 3.0
        });
        let p = channel_softmax(&logits.view());
        for bi in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let s: f32 = (0..3).map(|c| p[(bi, c, i, j)]).sum();
                    assert!((s - 1.0).abs() < 1e-6);
                }
            }
        }
        // A constant gradient over channels must map to zero logit gradient.
        let ones = Array4::from_elem((2, 3, 2, 2), 1.0f32);
        let gz = channel_softmax_backward(&p.view(), &ones.view());
        assert!(gz.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn dropout_eval_mode_is_identity_and_train_scales() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let d = Dropout { p: 0.5 };
        let mut x = Array4::from_elem((1, 1, 16, 16), 1.0f32);
        let _ = d.forward(&mut x, &mut rng);
        // every surviving element is exactly 1/(1-p)
        assert!(x.iter().all(|v| *v == 0.0 || (*v - 2.0).abs() < 1e-6));
        let kept = x.iter().filter(|v| **v != 0.0).count();
        assert!(kept > 64 && kept < 192, "kept {kept} of 256");
    }
}
