use ndarray::{Array4, ArrayView4};
use rand_chacha::ChaCha8Rng;

use super::NetError;
use crate::nn::{
    channel_softmax, channel_softmax_backward, concat_channels, split_channels, stream_rng,
    Conv2d, ConvCache, MaxPool2, MaxPoolCache, Param, Relu, ReluCache, StreamId,
    UpsampleNearest2,
};

/// Segmentation backbone abstraction. The trainer only needs forward passes
/// that emit per-pixel probabilities, a backward pass fed with dL/dprobs,
/// and ordered access to parameters; any architecture satisfying this
/// contract can replace the reference implementation.
pub trait GeneratorBackbone {
    type Cache;

    fn in_channels(&self) -> usize;
    fn n_classes(&self) -> usize;

    /// Forward pass returning `[B, C, H, W]` probabilities (per-pixel
    /// simplex) plus the cache needed by `backward`.
    fn forward(&self, images: &ArrayView4<f32>) -> Result<(Array4<f32>, Self::Cache), NetError>;

    /// Cache-free forward for evaluation.
    fn forward_eval(&self, images: &ArrayView4<f32>) -> Result<Array4<f32>, NetError>;

    /// Accumulates parameter gradients from dL/dprobs for the forward that
    /// produced `cache`.
    fn backward(&mut self, cache: Self::Cache, grad_probs: &ArrayView4<f32>);

    fn zero_grads(&mut self);

    /// Visits parameters in a fixed order (the checkpoint/optimizer order).
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param));

    fn param_count(&self) -> usize;

    /// Architecture hyperparameters for checkpoint sidecars.
    fn arch_meta(&self) -> serde_json::Value;
}

/// Reference encoder-decoder: three 2x downsampling stages with skip
/// connections, one 3x3 convolution per stage, and a softmax head. The
/// smallest backbone that segments the phantoms reliably; anything heavier
/// plugs in through [`GeneratorBackbone`].
pub struct RefGenerator {
    in_c: usize,
    n_classes: usize,
    base_width: usize,
    enc0: Conv2d,
    down1: Conv2d,
    down2: Conv2d,
    down3: Conv2d,
    up2: Conv2d,
    up1: Conv2d,
    up0: Conv2d,
    head: Conv2d,
}

/// Everything `backward` needs from one forward pass.
pub struct GenCache {
    c_enc0: ConvCache,
    r_enc0: ReluCache,
    p1: MaxPoolCache,
    c_d1: ConvCache,
    r_d1: ReluCache,
    p2: MaxPoolCache,
    c_d2: ConvCache,
    r_d2: ReluCache,
    p3: MaxPoolCache,
    c_d3: ConvCache,
    r_d3: ReluCache,
    c_u2: ConvCache,
    r_u2: ReluCache,
    c_u1: ConvCache,
    r_u1: ReluCache,
    c_u0: ConvCache,
    r_u0: ReluCache,
    c_head: ConvCache,
    probs: Array4<f32>,
}

/// Builds the reference generator. `seed` fixes the weight initialization.
pub fn build_reference_generator(
    in_channels: usize,
    n_classes: usize,
    base_width: usize,
    seed: u64,
) -> Result<RefGenerator, NetError> {
    RefGenerator::new(in_channels, n_classes, base_width, seed)
}

impl RefGenerator {
    pub fn new(
        in_channels: usize,
        n_classes: usize,
        base_width: usize,
        seed: u64,
    ) -> Result<Self, NetError> {
        if n_classes < 2 {
            return Err(NetError::InvalidArch(format!(
                "n_classes must be >= 2, got {n_classes}"
            )));
        }
        if base_width < 4 {
            return Err(NetError::InvalidArch(format!(
                "base_width must be >= 4, got {base_width}"
            )));
        }
        let w = base_width;
        let mut rng: ChaCha8Rng = stream_rng(seed, StreamId::GeneratorInit);
        Ok(RefGenerator {
            in_c: in_channels,
            n_classes,
            base_width,
            enc0: Conv2d::new(in_channels, w, 3, 1, 1, &mut rng),
            down1: Conv2d::new(w, 2 * w, 3, 1, 1, &mut rng),
            down2: Conv2d::new(2 * w, 4 * w, 3, 1, 1, &mut rng),
            down3: Conv2d::new(4 * w, 8 * w, 3, 1, 1, &mut rng),
            up2: Conv2d::new(8 * w + 4 * w, 4 * w, 3, 1, 1, &mut rng),
            up1: Conv2d::new(4 * w + 2 * w, 2 * w, 3, 1, 1, &mut rng),
            up0: Conv2d::new(2 * w + w, w, 3, 1, 1, &mut rng),
            head: Conv2d::new(w, n_classes, 1, 1, 0, &mut rng),
        })
    }

    pub fn base_width(&self) -> usize {
        self.base_width
    }

    fn check_input(&self, images: &ArrayView4<f32>) -> Result<(), NetError> {
        let (_, c, h, w) = images.dim();
        if c != self.in_c {
            return Err(NetError::Shape(format!(
                "generator expects {} input channels, got {c}",
                self.in_c
            )));
        }
        if h % 8 != 0 || w % 8 != 0 || h < 8 || w < 8 {
            return Err(NetError::Shape(format!(
                "generator input {h}x{w} must be divisible by 8"
            )));
        }
        Ok(())
    }

    fn forward_impl(
        &self,
        images: &ArrayView4<f32>,
    ) -> Result<(Array4<f32>, GenCache), NetError> {
        self.check_input(images)?;
        let (mut e0, c_enc0) = self.enc0.forward(images)?;
        let r_enc0 = Relu::forward(&mut e0);

        let (pool1, p1) = MaxPool2::forward(&e0.view());
        let (mut e1, c_d1) = self.down1.forward(&pool1.view())?;
        let r_d1 = Relu::forward(&mut e1);

        let (pool2, p2) = MaxPool2::forward(&e1.view());
        let (mut e2, c_d2) = self.down2.forward(&pool2.view())?;
        let r_d2 = Relu::forward(&mut e2);

        let (pool3, p3) = MaxPool2::forward(&e2.view());
        let (mut e3, c_d3) = self.down3.forward(&pool3.view())?;
        let r_d3 = Relu::forward(&mut e3);

        let up = UpsampleNearest2::forward(&e3.view());
        let joined = concat_channels(&up.view(), &e2.view());
        let (mut d2, c_u2) = self.up2.forward(&joined.view())?;
        let r_u2 = Relu::forward(&mut d2);

        let up = UpsampleNearest2::forward(&d2.view());
        let joined = concat_channels(&up.view(), &e1.view());
        let (mut d1, c_u1) = self.up1.forward(&joined.view())?;
        let r_u1 = Relu::forward(&mut d1);

        let up = UpsampleNearest2::forward(&d1.view());
        let joined = concat_channels(&up.view(), &e0.view());
        let (mut d0, c_u0) = self.up0.forward(&joined.view())?;
        let r_u0 = Relu::forward(&mut d0);

        let (logits, c_head) = self.head.forward(&d0.view())?;
        let probs = channel_softmax(&logits.view());

        let cache = GenCache {
            c_enc0,
            r_enc0,
            p1,
            c_d1,
            r_d1,
            p2,
            c_d2,
            r_d2,
            p3,
            c_d3,
            r_d3,
            c_u2,
            r_u2,
            c_u1,
            r_u1,
            c_u0,
            r_u0,
            c_head,
            probs: probs.clone(),
        };
        Ok((probs, cache))
    }
}

impl GeneratorBackbone for RefGenerator {
    type Cache = GenCache;

    fn in_channels(&self) -> usize {
        self.in_c
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn forward(&self, images: &ArrayView4<f32>) -> Result<(Array4<f32>, GenCache), NetError> {
        self.forward_impl(images)
    }

    fn forward_eval(&self, images: &ArrayView4<f32>) -> Result<Array4<f32>, NetError> {
        // no dropout anywhere in this backbone, so eval = train math
        Ok(self.forward_impl(images)?.0)
    }

    fn backward(&mut self, cache: GenCache, grad_probs: &ArrayView4<f32>) {
        let w = self.base_width;
        let gz = channel_softmax_backward(&cache.probs.view(), grad_probs);
        let mut g_d0 = self.head.backward(&cache.c_head, &gz.view());

        Relu::backward(&cache.r_u0, &mut g_d0);
        let g_join0 = self.up0.backward(&cache.c_u0, &g_d0.view());
        let (g_up0, g_e0_skip) = split_channels(&g_join0.view(), 2 * w);
        let mut g_d1 = UpsampleNearest2::backward(&g_up0.view());

        Relu::backward(&cache.r_u1, &mut g_d1);
        let g_join1 = self.up1.backward(&cache.c_u1, &g_d1.view());
        let (g_up1, g_e1_skip) = split_channels(&g_join1.view(), 4 * w);
        let mut g_d2 = UpsampleNearest2::backward(&g_up1.view());

        Relu::backward(&cache.r_u2, &mut g_d2);
        let g_join2 = self.up2.backward(&cache.c_u2, &g_d2.view());
        let (g_up2, g_e2_skip) = split_channels(&g_join2.view(), 8 * w);
        let mut g_e3 = UpsampleNearest2::backward(&g_up2.view());

        Relu::backward(&cache.r_d3, &mut g_e3);
        let g_pool3 = self.down3.backward(&cache.c_d3, &g_e3.view());
        let mut g_e2 = MaxPool2::backward(&cache.p3, &g_pool3.view());
        g_e2 += &g_e2_skip;

        Relu::backward(&cache.r_d2, &mut g_e2);
        let g_pool2 = self.down2.backward(&cache.c_d2, &g_e2.view());
        let mut g_e1 = MaxPool2::backward(&cache.p2, &g_pool2.view());
        g_e1 += &g_e1_skip;

        Relu::backward(&cache.r_d1, &mut g_e1);
        let g_pool1 = self.down1.backward(&cache.c_d1, &g_e1.view());
        let mut g_e0 = MaxPool2::backward(&cache.p1, &g_pool1.view());
        g_e0 += &g_e0_skip;

        Relu::backward(&cache.r_enc0, &mut g_e0);
        self.enc0.backward_params_only(&cache.c_enc0, &g_e0.view());
    }

    fn zero_grads(&mut self) {
        self.visit_params(&mut |_, p| p.zero_grad());
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("enc0.w", &mut self.enc0.w);
        f("enc0.b", &mut self.enc0.b);
        f("down1.w", &mut self.down1.w);
        f("down1.b", &mut self.down1.b);
        f("down2.w", &mut self.down2.w);
        f("down2.b", &mut self.down2.b);
        f("down3.w", &mut self.down3.w);
        f("down3.b", &mut self.down3.b);
        f("up2.w", &mut self.up2.w);
        f("up2.b", &mut self.up2.b);
        f("up1.w", &mut self.up1.w);
        f("up1.b", &mut self.up1.b);
        f("up0.w", &mut self.up0.w);
        f("up0.b", &mut self.up0.b);
        f("head.w", &mut self.head.w);
        f("head.b", &mut self.head.b);
    }

    fn param_count(&self) -> usize {
        [
            &self.enc0, &self.down1, &self.down2, &self.down3, &self.up2, &self.up1, &self.up0,
            &self.head,
        ]
        .iter()
        .map(|c| c.param_count())
        .sum()
    }

    fn arch_meta(&self) -> serde_json::Value {
        serde_json::json!({
            "backbone": "ref-encoder-decoder",
            "in_channels": self.in_c,
            "n_classes": self.n_classes,
            "base_width": self.base_width,
            "param_count": self.param_count(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::{Rng, SeedableRng};

    #[test]
    fn forward_output_is_a_per_pixel_simplex() {
        let g = build_reference_generator(1, 2, 8, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array4::from_shape_fn((2, 1, 64, 64), |_| rng.random::<f32>());
        let probs = g.forward_eval(&x.view()).unwrap();
        assert_eq!(probs.dim(), (2, 2, 64, 64));
        for b in 0..2 {
            for i in 0..64 {
                for j in 0..64 {
                    let s = probs[(b, 0, i, j)] + probs[(b, 1, i, j)];
                    assert!((s - 1.0).abs() < 1e-6);
                    assert!(probs[(b, 0, i, j)] > 0.0 && probs[(b, 0, i, j)] < 1.0);
                }
            }
        }
    }

    #[test]
    fn batch_of_12_stays_a_batch_of_12() {
        let g = build_reference_generator(1, 2, 4, 3).unwrap();
        let x = Array4::from_elem((12, 1, 32, 32), 0.5f32);
        let probs = g.forward_eval(&x.view()).unwrap();
        assert_eq!(probs.dim().0, 12);
    }

    #[test]
    fn rejects_dims_not_divisible_by_8() {
        let g = build_reference_generator(1, 2, 4, 3).unwrap();
        let x = Array4::from_elem((1, 1, 36, 36), 0.5f32);
        assert!(g.forward(&x.view()).is_err());
    }

    #[test]
    fn rejects_tiny_width_and_single_class() {
        assert!(build_reference_generator(1, 1, 8, 0).is_err());
        assert!(build_reference_generator(1, 2, 3, 0).is_err());
    }

    #[test]
    fn backward_matches_finite_differences_across_layers() {
        let mut g = build_reference_generator(1, 2, 4, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Array4::from_shape_fn((2, 1, 16, 16), |_| rng.random::<f32>());
        let target = Array4::from_shape_fn((2, 2, 16, 16), |(_, c, i, _)| {
            if (i < 8) == (c == 0) {
                1.0f32
            } else {
                0.0
            }
        });
        let objective = |g: &RefGenerator| -> f64 {
            let probs = g.forward_eval(&x.view()).unwrap();
            probs
                .iter()
                .zip(target.iter())
                .map(|(p, t)| ((p - t) as f64).powi(2))
                .sum()
        };
        let (probs, cache) = g.forward(&x.view()).unwrap();
        let grad = Array4::from_shape_fn(probs.raw_dim(), |idx| 2.0 * (probs[idx] - target[idx]));
        g.zero_grads();
        g.backward(cache, &grad.view());

        // pull analytic grads out, then FD-check one weight per layer
        let mut analytic: Vec<(String, f32)> = Vec::new();
        g.visit_params(&mut |name, p| {
            let (_, gr) = p.slices_mut();
            let mid = gr.len() / 2;
            analytic.push((name.to_string(), gr[mid]));
        });
        let h = 5e-3f32;
        for (name, an) in analytic {
            let nudge = |g: &mut RefGenerator, delta: f32| {
                g.visit_params(&mut |n, p| {
                    if n == name {
                        let (v, _) = p.slices_mut();
                        let mid = v.len() / 2;
                        v[mid] += delta;
                    }
                });
            };
            nudge(&mut g, h);
            let lp = objective(&g);
            nudge(&mut g, -2.0 * h);
            let lm = objective(&g);
            nudge(&mut g, h);
            let fd = (lp - lm) / (2.0 * h as f64);
            let an = an as f64;
            // biases shift entire channels across ReLU kinks, so their f32
            // finite differences are noisier than single-weight ones
            let tol = if name.ends_with(".b") { 0.12 } else { 3e-2 };
            assert!(
                (fd - an).abs() <= tol * fd.abs().max(an.abs()).max(1e-2),
                "{name}: analytic {an} vs fd {fd}"
            );
        }

        // a small step along the negative gradient must reduce the objective
        let before = objective(&g);
        let mut opt = crate::nn::Sgd::new(1e-5f32, 0.0, 0.0);
        let mut idx = 0;
        g.visit_params(&mut |_, p| {
            let (v, gr) = p.slices_mut();
            opt.step_param(idx, v, gr);
            idx += 1;
        });
        let after = objective(&g);
        assert!(after < before, "objective did not decrease: {before} -> {after}");
    }

    #[test]
    fn param_count_matches_hand_count() {
        let w = 8usize;
        let g = build_reference_generator(1, 2, w, 0).unwrap();
        let conv = |ci: usize, co: usize, k: usize| co * ci * k * k + co;
        let expect = conv(1, w, 3)
            + conv(w, 2 * w, 3)
            + conv(2 * w, 4 * w, 3)
            + conv(4 * w, 8 * w, 3)
            + conv(12 * w, 4 * w, 3)
            + conv(6 * w, 2 * w, 3)
            + conv(3 * w, w, 3)
            + conv(w, 2, 1);
        assert_eq!(g.param_count(), expect);
    }
}
