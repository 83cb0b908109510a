use ndarray::{linalg::general_mat_mul, Array1, Array2, Array4, ArrayView2, ArrayView4};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::param::Param;
use super::NnError;

/// 2D convolution lowered to im2col + GEMM.
///
/// Weights live in `[out_c, in_c * k * k]` layout so the forward pass is a
/// single matrix product per batch. All loops are sequential; a fixed seed
/// reproduces results exactly.
pub struct Conv2d {
    pub w: Param,
    pub b: Param,
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Saved forward context: the im2col matrix and the input geometry.
pub struct ConvCache {
    cols: Array2<f32>,
    in_shape: (usize, usize, usize, usize),
    out_hw: (usize, usize),
}

impl Conv2d {
    /// He-normal initialization, biases zero.
    pub fn new(in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = in_c * k * k;
        let std = (2.0 / fan_in as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("valid std");
        let w = Array2::from_shape_fn((out_c, fan_in), |_| dist.sample(rng) as f32);
        Conv2d {
            w: Param::matrix(w),
            b: Param::vector(Array1::zeros(out_c)),
            in_c,
            out_c,
            k,
            stride,
            pad,
        }
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize), NnError> {
        let num_h = h + 2 * self.pad;
        let num_w = w + 2 * self.pad;
        if num_h < self.k || num_w < self.k {
            return Err(NnError::Shape(format!(
                "input {h}x{w} too small for kernel {}",
                self.k
            )));
        }
        if (num_h - self.k) % self.stride != 0 || (num_w - self.k) % self.stride != 0 {
            return Err(NnError::Shape(format!(
                "input {h}x{w} not compatible with kernel {} stride {} pad {}",
                self.k, self.stride, self.pad
            )));
        }
        Ok(((num_h - self.k) / self.stride + 1, (num_w - self.k) / self.stride + 1))
    }

    pub fn forward(&self, x: &ArrayView4<f32>) -> Result<(Array4<f32>, ConvCache), NnError> {
        let (bsz, c, h, w) = x.dim();
        if c != self.in_c {
            return Err(NnError::Shape(format!(
                "conv expected {} input channels, got {c}",
                self.in_c
            )));
        }
        let (oh, ow) = self.out_hw(h, w)?;
        let cols = im2col(x, self.k, self.stride, self.pad, oh, ow);
        let wmat = match &self.w {
            Param::Matrix { value, .. } => value.view(),
            _ => unreachable!(),
        };
        let bias = match &self.b {
            Param::Vector { value, .. } => value.view(),
            _ => unreachable!(),
        };
        let mut out_mat = Array2::<f32>::zeros((self.out_c, bsz * oh * ow));
        general_mat_mul(1.0, &wmat, &cols.view(), 0.0, &mut out_mat);

        let mut out = Array4::<f32>::zeros((bsz, self.out_c, oh, ow));
        let plane = oh * ow;
        let out_mat_slice = out_mat.as_slice().expect("contiguous");
        let out_slice = out.as_slice_mut().expect("contiguous");
        for co in 0..self.out_c {
            let bias_v = bias[co];
            for b in 0..bsz {
                let src = &out_mat_slice[co * bsz * plane + b * plane..][..plane];
                let dst = &mut out_slice[b * self.out_c * plane + co * plane..][..plane];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = s + bias_v;
                }
            }
        }
        Ok((
            out,
            ConvCache {
                cols,
                in_shape: (bsz, c, h, w),
                out_hw: (oh, ow),
            },
        ))
    }

    /// Full backward: accumulates weight/bias gradients and returns the
    /// input gradient.
    pub fn backward(&mut self, cache: &ConvCache, grad_out: &ArrayView4<f32>) -> Array4<f32> {
        let g_mat = self.gather_grad(cache, grad_out);
        if let Param::Matrix { grad, .. } = &mut self.w {
            general_mat_mul(1.0, &g_mat.view(), &cache.cols.t(), 1.0, grad);
        }
        if let Param::Vector { grad, .. } = &mut self.b {
            for co in 0..self.out_c {
                grad[co] += g_mat.row(co).sum();
            }
        }
        let wmat = match &self.w {
            Param::Matrix { value, .. } => value.view(),
            _ => unreachable!(),
        };
        self.input_grad_from(&wmat, &g_mat, cache)
    }

    /// Input gradient only; weight gradients are left untouched. Used when
    /// a loss reaches the generator through this network's input.
    pub fn backward_input_only(&self, cache: &ConvCache, grad_out: &ArrayView4<f32>) -> Array4<f32> {
        let g_mat = self.gather_grad(cache, grad_out);
        let wmat = match &self.w {
            Param::Matrix { value, .. } => value.view(),
            _ => unreachable!(),
        };
        self.input_grad_from(&wmat, &g_mat, cache)
    }

    /// Weight/bias gradients only, for the outermost layer of a network when
    /// the input gradient is not needed.
    pub fn backward_params_only(&mut self, cache: &ConvCache, grad_out: &ArrayView4<f32>) {
        let g_mat = self.gather_grad(cache, grad_out);
        if let Param::Matrix { grad, .. } = &mut self.w {
            general_mat_mul(1.0, &g_mat.view(), &cache.cols.t(), 1.0, grad);
        }
        if let Param::Vector { grad, .. } = &mut self.b {
            for co in 0..self.out_c {
                grad[co] += g_mat.row(co).sum();
            }
        }
    }

    /// Rearranges `[B, out_c, OH, OW]` gradients into the `[out_c, B*OH*OW]`
    /// GEMM layout.
    fn gather_grad(&self, cache: &ConvCache, grad_out: &ArrayView4<f32>) -> Array2<f32> {
        let (bsz, ..) = cache.in_shape;
        let (oh, ow) = cache.out_hw;
        let plane = oh * ow;
        let mut g_mat = Array2::<f32>::zeros((self.out_c, bsz * plane));
        let g_slice = g_mat.as_slice_mut().expect("contiguous");
        let src = grad_out.as_slice().expect("contiguous grad");
        for b in 0..bsz {
            for co in 0..self.out_c {
                let s = &src[b * self.out_c * plane + co * plane..][..plane];
                let d = &mut g_slice[co * bsz * plane + b * plane..][..plane];
                d.copy_from_slice(s);
            }
        }
        g_mat
    }

    fn input_grad_from(
        &self,
        wmat: &ArrayView2<f32>,
        g_mat: &Array2<f32>,
        cache: &ConvCache,
    ) -> Array4<f32> {
        let mut grad_cols = Array2::<f32>::zeros((self.in_c * self.k * self.k, g_mat.dim().1));
        general_mat_mul(1.0, &wmat.t(), &g_mat.view(), 0.0, &mut grad_cols);
        col2im(
            &grad_cols,
            cache.in_shape,
            self.k,
            self.stride,
            self.pad,
            cache.out_hw,
        )
    }
}

/// Valid output-x range for one kernel column: the `ox` interval whose
/// source column `ox*stride + kj - pad` lands inside `[0, w)`.
#[inline]
fn valid_ox_range(ow: usize, stride: usize, kj: usize, pad: usize, w: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(kj).div_ceil(stride);
    let hi = if w + pad > kj {
        (((w + pad - kj - 1) / stride) + 1).min(ow)
    } else {
        0
    };
    (lo.min(ow), hi)
}

/// Unfolds `[B, C, H, W]` into `[C*k*k, B*OH*OW]` with zero padding. The
/// inner loops are branch-free over the precomputed valid range.
fn im2col(
    x: &ArrayView4<f32>,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array2<f32> {
    let (bsz, c, h, w) = x.dim();
    let mut cols = Array2::<f32>::zeros((c * k * k, bsz * oh * ow));
    let cols_slice = cols.as_slice_mut().expect("contiguous");
    let x_slice = x.as_slice().expect("contiguous input");
    let n = bsz * oh * ow;
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let row_slice = &mut cols_slice[row * n..][..n];
                let (ox_lo, ox_hi) = valid_ox_range(ow, stride, kj, pad, w);
                for b in 0..bsz {
                    let x_base = (b * c + ci) * h * w;
                    for oy in 0..oh {
                        let iy = (oy * stride + ki) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue; // stays zero
                        }
                        let x_row = &x_slice[x_base + iy as usize * w..][..w];
                        let dst = &mut row_slice[b * oh * ow + oy * ow..][..ow];
                        if stride == 1 {
                            let src_off = kj as isize - pad as isize;
                            let src =
                                &x_row[(ox_lo as isize + src_off) as usize..][..ox_hi - ox_lo];
                            dst[ox_lo..ox_hi].copy_from_slice(src);
                        } else {
                            for ox in ox_lo..ox_hi {
                                let ix = (ox * stride + kj) - pad;
                                dst[ox] = x_row[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Folds column gradients back onto the input grid (scatter-add).
fn col2im(
    grad_cols: &Array2<f32>,
    in_shape: (usize, usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    out_hw: (usize, usize),
) -> Array4<f32> {
    let (bsz, c, h, w) = in_shape;
    let (oh, ow) = out_hw;
    let mut gx = Array4::<f32>::zeros((bsz, c, h, w));
    let gx_slice = gx.as_slice_mut().expect("contiguous");
    let gc_slice = grad_cols.as_slice().expect("contiguous");
    let n = bsz * oh * ow;
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let row_slice = &gc_slice[row * n..][..n];
                let (ox_lo, ox_hi) = valid_ox_range(ow, stride, kj, pad, w);
                for b in 0..bsz {
                    let gx_base = (b * c + ci) * h * w;
                    for oy in 0..oh {
                        let iy = (oy * stride + ki) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &row_slice[b * oh * ow + oy * ow..][..ow];
                        let gx_row = &mut gx_slice[gx_base + iy as usize * w..][..w];
                        for ox in ox_lo..ox_hi {
                            let ix = (ox * stride + kj) - pad;
                            gx_row[ix] += src[ox];
                        }
                    }
                }
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::SeedableRng;

    /// Direct (quadruple-loop) convolution used as an oracle for the
    /// im2col-based forward.
    fn conv_naive(x: &Array4<f32>, conv: &Conv2d) -> Array4<f32> {
        let (bsz, c, h, w) = x.dim();
        let (oh, ow) = conv.out_hw(h, w).unwrap();
        let wm = match &conv.w {
            Param::Matrix { value, .. } => value.clone(),
            _ => unreachable!(),
        };
        let bias = match &conv.b {
            Param::Vector { value, .. } => value.clone(),
            _ => unreachable!(),
        };
        let mut out = Array4::<f32>::zeros((bsz, conv.out_c, oh, ow));
        for b in 0..bsz {
            for co in 0..conv.out_c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = bias[co];
                        for ci in 0..c {
                            for ki in 0..conv.k {
                                for kj in 0..conv.k {
                                    let iy = (oy * conv.stride + ki) as isize - conv.pad as isize;
                                    let ix = (ox * conv.stride + kj) as isize - conv.pad as isize;
                                    if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                        acc += x[(b, ci, iy as usize, ix as usize)]
                                            * wm[(co, (ci * conv.k + ki) * conv.k + kj)];
                                    }
                                }
                            }
                        }
                        out[(b, co, oy, ox)] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn forward_matches_naive_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(k, stride, pad, h) in &[(3usize, 1usize, 1usize, 8usize), (4, 2, 1, 8), (1, 1, 0, 6)] {
            let conv = Conv2d::new(3, 5, k, stride, pad, &mut rng);
            let x = Array4::from_shape_fn((2, 3, h, h), |(b, c, i, j)| {
                ((b + c + i * 7 + j * 3) as f32 * 0.137).sin()
            });
            let (out, _) = conv.forward(&x.view()).unwrap();
            let expect = conv_naive(&x, &conv);
            for (a, e) in out.iter().zip(expect.iter()) {
                assert!((a - e).abs() < 1e-4, "im2col {a} vs naive {e}");
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut conv = Conv2d::new(2, 3, 4, 2, 1, &mut rng);
        let x = Array4::from_shape_fn((2, 2, 6, 6), |(b, c, i, j)| {
            ((b * 31 + c * 17 + i * 5 + j) as f32 * 0.21).cos()
        });
        // objective: 0.5 * sum(out^2)
        let (out, cache) = conv.forward(&x.view()).unwrap();
        let grad_in = conv.backward(&cache, &out.view());

        let loss = |conv: &Conv2d, x: &Array4<f32>| -> f64 {
            let (o, _) = conv.forward(&x.view()).unwrap();
            o.iter().map(|v| 0.5 * (*v as f64) * (*v as f64)).sum()
        };
        let h = 1e-3f32;
        // input gradient, spot-check a grid of positions
        for &idx in &[(0, 0, 0, 0), (1, 1, 3, 2), (0, 1, 5, 5), (1, 0, 2, 4)] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let fd = (loss(&conv, &xp) - loss(&conv, &xm)) / (2.0 * h as f64);
            let an = grad_in[idx] as f64;
            assert!(
                (fd - an).abs() <= 1e-2 * fd.abs().max(an.abs()).max(1e-3),
                "input grad {an} vs fd {fd} at {idx:?}"
            );
        }
        // weight gradient, spot-check
        let wgrad = match &conv.w {
            Param::Matrix { grad, .. } => grad.clone(),
            _ => unreachable!(),
        };
        for &widx in &[(0usize, 0usize), (2, 31), (1, 16)] {
            let orig = match &conv.w {
                Param::Matrix { value, .. } => value[widx],
                _ => unreachable!(),
            };
            let set = |conv: &mut Conv2d, v: f32| {
                if let Param::Matrix { value, .. } = &mut conv.w {
                    value[widx] = v;
                }
            };
            set(&mut conv, orig + h);
            let lp = loss(&conv, &x);
            set(&mut conv, orig - h);
            let lm = loss(&conv, &x);
            set(&mut conv, orig);
            let fd = (lp - lm) / (2.0 * h as f64);
            let an = wgrad[widx] as f64;
            assert!(
                (fd - an).abs() <= 1e-2 * fd.abs().max(an.abs()).max(1e-3),
                "weight grad {an} vs fd {fd} at {widx:?}"
            );
        }
    }

    #[test]
    fn rejects_incompatible_spatial_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = Conv2d::new(1, 4, 4, 2, 1, &mut rng);
        let x = Array4::<f32>::zeros((1, 1, 7, 7));
        assert!(conv.forward(&x.view()).is_err());
    }
}
