use ndarray::{Array1, Array2, Array4, ArrayView4};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::NetError;
use crate::nn::{
    stream_rng, Conv2d, ConvCache, Dropout, DropoutCache, LeakyRelu, Mode, Param, ReluCache,
    StreamId,
};

const CHANNELS: [usize; 4] = [64, 128, 256, 512];
const LEAKY_SLOPE: f32 = 0.2;
const DROPOUT_P: f32 = 0.5;

/// Four 4x4 stride-2 convolutions (channels 64, 128, 256, 512), each
/// followed by leaky ReLU then dropout, with a global-average-pool +
/// affine + sigmoid head. `features_k` is tapped after the k-th layer's
/// activation, before its dropout, so feature statistics stay clean of the
/// stochastic masking.
pub struct Discriminator {
    convs: Vec<Conv2d>,
    head_w: Param,
    head_b: Param,
    in_c: usize,
    /// 1-based layer index of the feature tap; 4 (the deepest, most
    /// semantic features) unless configured otherwise.
    pub tap_layer: usize,
}

/// Scalar real-probabilities and the tapped feature maps for one batch.
pub struct DiscriminatorOutput {
    pub prob_real: Array1<f32>,
    pub features_k: Array4<f32>,
}

pub struct DiscCache {
    conv_caches: Vec<ConvCache>,
    relu_caches: Vec<ReluCache>,
    dropout_caches: Vec<Option<DropoutCache>>,
    pooled: Array2<f32>,
    probs: Array1<f32>,
    last_spatial: (usize, usize),
    mode: Mode,
}

/// Builds the discriminator for `in_channels = 1 + C` (image plus mask
/// channels). `seed` fixes the weight initialization.
pub fn build_discriminator(in_channels: usize, seed: u64) -> Result<Discriminator, NetError> {
    Discriminator::new(in_channels, seed)
}

impl Discriminator {
    pub fn new(in_channels: usize, seed: u64) -> Result<Self, NetError> {
        if in_channels < 2 {
            return Err(NetError::InvalidArch(format!(
                "discriminator input must include image and mask channels, got {in_channels}"
            )));
        }
        let mut rng: ChaCha8Rng = stream_rng(seed, StreamId::DiscriminatorInit);
        let mut convs = Vec::with_capacity(4);
        let mut c_in = in_channels;
        for &c_out in CHANNELS.iter() {
            convs.push(Conv2d::new(c_in, c_out, 4, 2, 1, &mut rng));
            c_in = c_out;
        }
        let std = (1.0 / CHANNELS[3] as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("valid std");
        let head_w = Array1::from_shape_fn(CHANNELS[3], |_| dist.sample(&mut rng) as f32);
        Ok(Discriminator {
            convs,
            head_w: Param::vector(head_w),
            head_b: Param::vector(Array1::zeros(1)),
            in_c: in_channels,
            tap_layer: 4,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_c
    }

    /// Channel progression of the convolutional stack.
    pub fn channel_dims(&self) -> Vec<usize> {
        self.convs.iter().map(|c| c.out_c).collect()
    }

    pub fn param_count(&self) -> usize {
        self.convs.iter().map(|c| c.param_count()).sum::<usize>()
            + self.head_w.len()
            + self.head_b.len()
    }

    pub fn arch_meta(&self) -> serde_json::Value {
        serde_json::json!({
            "network": "conv4x4-stack",
            "in_channels": self.in_c,
            "channels": CHANNELS,
            "kernel": 4,
            "stride": 2,
            "padding": 1,
            "leaky_slope": LEAKY_SLOPE,
            "dropout": DROPOUT_P,
            "tap_layer": self.tap_layer,
            "param_count": self.param_count(),
        })
    }

    /// Forward pass. Train mode draws dropout masks from `rng`; eval mode
    /// is deterministic and leaves the RNG untouched.
    pub fn forward(
        &self,
        x: &ArrayView4<f32>,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<(DiscriminatorOutput, DiscCache), NetError> {
        let (bsz, c, h, w) = x.dim();
        if c != self.in_c {
            return Err(NetError::Shape(format!(
                "discriminator expects {} channels, got {c}",
                self.in_c
            )));
        }
        if h < 16 || w < 16 || h % 16 != 0 || w % 16 != 0 {
            return Err(NetError::Shape(format!(
                "discriminator input {h}x{w} must be divisible by 16"
            )));
        }
        let lrelu = LeakyRelu { slope: LEAKY_SLOPE };
        let dropout = Dropout { p: DROPOUT_P };
        let mut conv_caches = Vec::with_capacity(4);
        let mut relu_caches = Vec::with_capacity(4);
        let mut dropout_caches = Vec::with_capacity(4);
        let mut features = None;
        let mut cur = x.to_owned();
        for (li, conv) in self.convs.iter().enumerate() {
            let (mut out, cc) = conv.forward(&cur.view())?;
            conv_caches.push(cc);
            relu_caches.push(lrelu.forward(&mut out));
            if li + 1 == self.tap_layer {
                features = Some(out.clone());
            }
            let dc = match mode {
                Mode::Train => Some(dropout.forward(&mut out, rng)),
                Mode::Eval => None,
            };
            dropout_caches.push(dc);
            cur = out;
        }
        let (_, c_last, oh, ow) = cur.dim();
        let plane = oh * ow;
        let mut pooled = Array2::<f32>::zeros((bsz, c_last));
        let cur_slice = cur.as_slice().expect("contiguous");
        for b in 0..bsz {
            for ci in 0..c_last {
                let chunk = &cur_slice[(b * c_last + ci) * plane..][..plane];
                pooled[(b, ci)] = chunk.iter().sum::<f32>() / plane as f32;
            }
        }
        let head_w = match &self.head_w {
            Param::Vector { value, .. } => value,
            _ => unreachable!(),
        };
        let head_b = match &self.head_b {
            Param::Vector { value, .. } => value[0],
            _ => unreachable!(),
        };
        let mut probs = Array1::<f32>::zeros(bsz);
        for b in 0..bsz {
            let logit: f32 = pooled.row(b).dot(head_w) + head_b;
            probs[b] = 1.0 / (1.0 + (-logit).exp());
        }
        let features = features.expect("tap layer within 1..=4");
        Ok((
            DiscriminatorOutput {
                prob_real: probs.clone(),
                features_k: features,
            },
            DiscCache {
                conv_caches,
                relu_caches,
                dropout_caches,
                pooled,
                probs,
                last_spatial: (oh, ow),
                mode,
            },
        ))
    }

    /// Backward for the discriminator's own loss: accumulates parameter
    /// gradients from dL/dprob. Input gradients are not produced (the fake
    /// masks are detached during the discriminator update).
    pub fn backward_params(&mut self, cache: &DiscCache, grad_prob: &[f32]) {
        assert_eq!(cache.mode, Mode::Train, "backward needs a train-mode cache");
        let bsz = cache.probs.len();
        assert_eq!(grad_prob.len(), bsz);
        let (oh, ow) = cache.last_spatial;
        let plane = (oh * ow) as f32;
        let c_last = CHANNELS[3];

        // through sigmoid: dlogit = dprob * p * (1 - p)
        let dlogit: Vec<f32> = (0..bsz)
            .map(|b| grad_prob[b] * cache.probs[b] * (1.0 - cache.probs[b]))
            .collect();

        let head_w_val = match &self.head_w {
            Param::Vector { value, .. } => value.clone(),
            _ => unreachable!(),
        };
        if let Param::Vector { grad, .. } = &mut self.head_w {
            for b in 0..bsz {
                for ci in 0..c_last {
                    grad[ci] += dlogit[b] * cache.pooled[(b, ci)];
                }
            }
        }
        if let Param::Vector { grad, .. } = &mut self.head_b {
            grad[0] += dlogit.iter().sum::<f32>();
        }

        // spread through global average pooling
        let mut g = Array4::<f32>::zeros((bsz, c_last, oh, ow));
        let plane_n = oh * ow;
        let gs = g.as_slice_mut().expect("contiguous");
        for b in 0..bsz {
            for ci in 0..c_last {
                let v = dlogit[b] * head_w_val[ci] / plane;
                gs[(b * c_last + ci) * plane_n..][..plane_n].fill(v);
            }
        }

        for li in (0..4).rev() {
            if let Some(dc) = &cache.dropout_caches[li] {
                Dropout::backward(dc, &mut g);
            }
            let lrelu = LeakyRelu { slope: LEAKY_SLOPE };
            lrelu.backward(&cache.relu_caches[li], &mut g);
            if li == 0 {
                self.convs[0].backward_params_only(&cache.conv_caches[0], &g.view());
            } else {
                g = self.convs[li].backward(&cache.conv_caches[li], &g.view());
            }
        }
    }

    /// Backward from a gradient on the tapped features to the network
    /// input, leaving all parameter gradients untouched. This is the
    /// feature-matching route into the generator: the gradient enters at
    /// the tap (after activation k, before dropout k) and flows through
    /// layers k..1 only.
    pub fn backward_input_from_features(
        &self,
        cache: &DiscCache,
        grad_features: &ArrayView4<f32>,
    ) -> Array4<f32> {
        assert_eq!(cache.mode, Mode::Train, "backward needs a train-mode cache");
        let mut g = grad_features.to_owned();
        for li in (0..self.tap_layer).rev() {
            // the tap sits before dropout of its own layer, so dropout
            // applies only to the layers below the tap
            if li + 1 != self.tap_layer {
                if let Some(dc) = &cache.dropout_caches[li] {
                    Dropout::backward(dc, &mut g);
                }
            }
            let lrelu = LeakyRelu { slope: LEAKY_SLOPE };
            lrelu.backward(&cache.relu_caches[li], &mut g);
            g = self.convs[li].backward_input_only(&cache.conv_caches[li], &g.view());
        }
        g
    }

    pub fn zero_grads(&mut self) {
        self.visit_params(&mut |_, p| p.zero_grad());
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, conv) in self.convs.iter_mut().enumerate() {
            f(&format!("conv{}.w", i + 1), &mut conv.w);
            f(&format!("conv{}.b", i + 1), &mut conv.b);
        }
        f("head.w", &mut self.head_w);
        f("head.b", &mut self.head_b);
    }
}
