use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use ndarray::{s, Array3, Array4, Axis};
use rand_chacha::ChaCha8Rng;

use super::{save_checkpoint, BatchSampler, MetricsCsv, TrainConfig, TrainError};
use crate::datagen::{DatasetSplit, ImageSlice, MaskLabel};
use crate::eval::{compute_metrics, harden_prediction, MetricValues};
use crate::losses::{
    compute_ce_loss_with_grad, compute_total_generator_loss,
    compute_dice_loss_with_grad, compute_discriminator_loss_with_grad, compute_fm_loss_with_grad,
    compute_st_loss_with_grad, harden_pseudo_label, PseudoLabel, SoftPrediction,
};
use crate::nets::{
    build_discriminator, concat_image_mask, images_to_batch, masks_to_onehot, Discriminator,
    GeneratorBackbone,
};
use crate::nn::{stream_rng, Adam, Mode, Sgd, StreamId};

/// Lesion channel used for the Dice term and the evaluation metrics.
pub const LESION_CLASS_INDEX: usize = 1;

static INTERRUPT: AtomicBool = AtomicBool::new(false);

/// Signal handlers call this; the loop checkpoints and exits cleanly at the
/// next iteration boundary.
pub fn request_interrupt() {
    INTERRUPT.store(true, Ordering::SeqCst);
}

pub fn clear_interrupt() {
    INTERRUPT.store(false, Ordering::SeqCst);
}

fn interrupt_requested() -> bool {
    INTERRUPT.load(Ordering::SeqCst)
}

/// Sliding window over recent steps for the gated-in fraction statistic.
pub struct GateWindow {
    entries: VecDeque<(u32, u32)>,
    cap: usize,
}

impl GateWindow {
    pub fn new(cap: usize) -> Self {
        GateWindow {
            entries: VecDeque::with_capacity(cap),
            cap,
        }
    }

    pub fn push(&mut self, gated: usize, total: usize) {
        if self.entries.len() == self.cap {
            self.entries.pop_front();
        }
        self.entries.push_back((gated as u32, total as u32));
    }

    pub fn fraction(&self) -> f64 {
        let (g, t) = self
            .entries
            .iter()
            .fold((0u64, 0u64), |(g, t), &(a, b)| (g + a as u64, t + b as u64));
        if t == 0 {
            0.0
        } else {
            g as f64 / t as f64
        }
    }

    pub fn snapshot(&self) -> Vec<(u32, u32)> {
        self.entries.iter().copied().collect()
    }

    pub fn restore(cap: usize, entries: Vec<(u32, u32)>) -> Self {
        GateWindow {
            entries: entries.into_iter().collect(),
            cap,
        }
    }
}

/// Everything that evolves during training. Restoring a checkpointed state
/// and resuming reproduces the uninterrupted run exactly.
pub struct TrainState<B: GeneratorBackbone> {
    pub iteration: usize,
    pub generator: B,
    pub discriminator: Option<Discriminator>,
    pub gen_opt: Sgd<f32>,
    pub disc_opt: Adam<f32>,
    pub dropout_rng: ChaCha8Rng,
    pub labeled_sampler: BatchSampler,
    pub unlabeled_sampler: Option<BatchSampler>,
    pub gate_window: GateWindow,
}

/// Per-iteration loss record (raw, unweighted terms).
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub iteration: usize,
    pub l_ce: f64,
    pub l_dice: f64,
    pub l_fm: f64,
    pub l_st: f64,
    pub l_d: f64,
    pub gated_in: usize,
    pub unlabeled_in_batch: usize,
    pub gated_fraction_window: f64,
}

/// Outcome of a training run.
pub struct TrainOutcome {
    pub records: Vec<StepRecord>,
    pub evals: Vec<(usize, MetricValues)>,
    pub interrupted: bool,
    pub final_checkpoint: Option<PathBuf>,
}

pub(crate) const GATE_WINDOW_CAP: usize = 50;

/// Builds the initial training state. A nonempty unlabeled pool selects
/// adversarial semi-supervised mode; an empty one selects the fully
/// supervised baseline (no discriminator at all).
pub fn init_state<B: GeneratorBackbone>(
    split: &DatasetSplit,
    cfg: &TrainConfig,
    generator: B,
) -> Result<TrainState<B>, TrainError> {
    cfg.validate()?;
    if split.labeled.is_empty() {
        return Err(TrainError::EmptyLabeledSet);
    }
    let discriminator = if split.unlabeled.is_empty() {
        None
    } else {
        Some(build_discriminator(1 + generator.n_classes(), cfg.seed)?)
    };
    let unlabeled_sampler = if split.unlabeled.is_empty() {
        None
    } else {
        Some(BatchSampler::new(
            split.unlabeled.len(),
            cfg.seed,
            StreamId::UnlabeledSampler,
        ))
    };
    Ok(TrainState {
        iteration: 0,
        generator,
        discriminator,
        gen_opt: Sgd::new(
            cfg.gen_lr as f32,
            cfg.gen_momentum as f32,
            cfg.gen_weight_decay as f32,
        ),
        disc_opt: Adam::new(
            cfg.disc_lr as f32,
            cfg.disc_betas.0 as f32,
            cfg.disc_betas.1 as f32,
        ),
        dropout_rng: stream_rng(cfg.seed, StreamId::Dropout),
        labeled_sampler: BatchSampler::new(split.labeled.len(), cfg.seed, StreamId::LabeledSampler),
        unlabeled_sampler,
        gate_window: GateWindow::new(GATE_WINDOW_CAP),
    })
}

fn batch_to_preds(probs: &Array4<f32>) -> Vec<SoftPrediction<f32>> {
    (0..probs.dim().0)
        .map(|b| SoftPrediction::from_probs_unchecked(probs.index_axis(Axis(0), b).to_owned()))
        .collect()
}

fn features_to_vec(features: &Array4<f32>) -> Vec<Array3<f32>> {
    (0..features.dim().0)
        .map(|b| features.index_axis(Axis(0), b).to_owned())
        .collect()
}

fn grads_to_batch(grads: &[Array3<f32>]) -> Array4<f32> {
    let (c, h, w) = grads[0].dim();
    let mut out = Array4::<f32>::zeros((grads.len(), c, h, w));
    for (b, g) in grads.iter().enumerate() {
        out.index_axis_mut(Axis(0), b).assign(g);
    }
    out
}

fn sgd_step<B: GeneratorBackbone>(gen: &mut B, opt: &mut Sgd<f32>) {
    let mut idx = 0;
    gen.visit_params(&mut |_, p| {
        let (v, g) = p.slices_mut();
        opt.step_param(idx, v, g);
        idx += 1;
    });
}

fn adam_step(disc: &mut Discriminator, opt: &mut Adam<f32>) {
    opt.begin_step();
    let mut idx = 0;
    disc.visit_params(&mut |_, p| {
        let (v, g) = p.slices_mut();
        opt.step_param(idx, v, g);
        idx += 1;
    });
}

fn loss_err(iteration: usize) -> impl Fn(crate::losses::LossError) -> TrainError {
    move |source| TrainError::Loss { iteration, source }
}

/// One full training iteration: discriminator update on detached fakes,
/// then a generator update combining CE + Dice on the labeled batch with
/// feature matching and gated self-training on the unlabeled batch (both
/// computed against the just-updated discriminator).
pub fn train_step<B: GeneratorBackbone>(
    state: &mut TrainState<B>,
    labeled_images: &Array4<f32>,
    labeled_masks: &[MaskLabel],
    unlabeled_images: Option<&Array4<f32>>,
    cfg: &TrainConfig,
) -> Result<StepRecord, TrainError> {
    let iteration = state.iteration + 1;
    let w = &cfg.loss_weights;
    if labeled_images.dim().0 == 0 || labeled_images.dim().0 != labeled_masks.len() {
        return Err(TrainError::InvalidConfig(format!(
            "labeled batch of {} images vs {} masks",
            labeled_images.dim().0,
            labeled_masks.len()
        )));
    }

    // labeled forward + supervised terms
    let (probs_l, cache_l) = state.generator.forward(&labeled_images.view())?;
    let preds_l = batch_to_preds(&probs_l);
    let (l_ce, g_ce) =
        compute_ce_loss_with_grad(&preds_l, labeled_masks).map_err(loss_err(iteration))?;
    let (l_dice, g_dice) =
        compute_dice_loss_with_grad(&preds_l, labeled_masks, LESION_CLASS_INDEX)
            .map_err(loss_err(iteration))?;
    let mut dprobs_l = grads_to_batch(&g_ce);
    dprobs_l.mapv_inplace(|v| v * w.w_ce as f32);
    dprobs_l.scaled_add(w.w_dice as f32, &grads_to_batch(&g_dice));

    let mut l_fm = 0.0f32;
    let mut l_st = 0.0f32;
    let mut l_d = 0.0f32;
    let mut gated_in = 0usize;
    let mut unlabeled_in_batch = 0usize;
    let mut unlabeled_backward: Option<(B::Cache, Array4<f32>)> = None;

    let has_unlabeled = unlabeled_images.map(|x| x.dim().0 > 0).unwrap_or(false);
    if has_unlabeled {
        let x_u = unlabeled_images.expect("checked above");
        let disc = state.discriminator.as_mut().ok_or_else(|| {
            TrainError::InvalidConfig(
                "unlabeled batch given but the state has no discriminator".into(),
            )
        })?;
        unlabeled_in_batch = x_u.dim().0;

        let (probs_u, cache_u) = state.generator.forward(&x_u.view())?;
        let mask_refs: Vec<&MaskLabel> = labeled_masks.iter().collect();
        let onehot_l = masks_to_onehot(&mask_refs)?;
        let real_in = concat_image_mask(&labeled_images.view(), &onehot_l.view())?;
        let fake_in = concat_image_mask(&x_u.view(), &probs_u.view())?;

        // (a) discriminator update; S(x_U) enters as a constant
        let (real_out, real_cache) =
            disc.forward(&real_in.view(), Mode::Train, &mut state.dropout_rng)?;
        let (fake_out, fake_cache) =
            disc.forward(&fake_in.view(), Mode::Train, &mut state.dropout_rng)?;
        let d_real: Vec<f32> = real_out.prob_real.to_vec();
        let d_fake: Vec<f32> = fake_out.prob_real.to_vec();
        let (ld, g_real, g_fake) =
            compute_discriminator_loss_with_grad(&d_real, &d_fake).map_err(loss_err(iteration))?;
        l_d = ld;
        disc.zero_grads();
        disc.backward_params(&real_cache, &g_real);
        disc.backward_params(&fake_cache, &g_fake);
        adam_step(disc, &mut state.disc_opt);

        // (b) fresh passes through the just-updated discriminator: real
        // features for FM (constants) and fake features + confidences
        let (real_out2, _) = disc.forward(&real_in.view(), Mode::Train, &mut state.dropout_rng)?;
        let (fake_out2, fake_cache2) =
            disc.forward(&fake_in.view(), Mode::Train, &mut state.dropout_rng)?;
        let real_feats = features_to_vec(&real_out2.features_k);
        let fake_feats = features_to_vec(&fake_out2.features_k);
        let (fm, g_fm) =
            compute_fm_loss_with_grad(&real_feats, &fake_feats).map_err(loss_err(iteration))?;
        l_fm = fm;

        let preds_u = batch_to_preds(&probs_u);
        let pseudos: Vec<PseudoLabel<f32>> = preds_u
            .iter()
            .zip(fake_out2.prob_real.iter())
            .map(|(p, &c)| harden_pseudo_label(p, c))
            .collect::<Result<_, _>>()
            .map_err(loss_err(iteration))?;
        let (st, g_st, n_gated) = compute_st_loss_with_grad(&preds_u, &pseudos, cfg.tau as f32)
            .map_err(loss_err(iteration))?;
        l_st = st;
        gated_in = n_gated;

        if w.w_fm > 0.0 || w.w_st > 0.0 {
            let mut dprobs_u = Array4::<f32>::zeros(probs_u.raw_dim());
            if w.w_fm > 0.0 {
                let mut gfm4 = grads_to_batch(&g_fm);
                gfm4.mapv_inplace(|v| v * w.w_fm as f32);
                let dinput = disc.backward_input_from_features(&fake_cache2, &gfm4.view());
                dprobs_u += &dinput.slice(s![.., 1.., .., ..]);
            }
            if w.w_st > 0.0 {
                dprobs_u.scaled_add(w.w_st as f32, &grads_to_batch(&g_st));
            }
            unlabeled_backward = Some((cache_u, dprobs_u));
        }
    }

    // abort on divergence before touching generator parameters
    compute_total_generator_loss(l_ce, l_dice, l_fm, l_st, w).map_err(|e| {
        TrainError::NonFinite {
            iteration,
            term: e.to_string(),
        }
    })?;
    if !l_d.is_finite() {
        return Err(TrainError::NonFinite {
            iteration,
            term: "discriminator".into(),
        });
    }

    // generator update
    state.generator.zero_grads();
    state.generator.backward(cache_l, &dprobs_l.view());
    if let Some((cache_u, dprobs_u)) = unlabeled_backward {
        state.generator.backward(cache_u, &dprobs_u.view());
    }
    sgd_step(&mut state.generator, &mut state.gen_opt);

    state.iteration = iteration;
    state.gate_window.push(gated_in, unlabeled_in_batch);
    Ok(StepRecord {
        iteration,
        l_ce: l_ce as f64,
        l_dice: l_dice as f64,
        l_fm: l_fm as f64,
        l_st: l_st as f64,
        l_d: l_d as f64,
        gated_in,
        unlabeled_in_batch,
        gated_fraction_window: state.gate_window.fraction(),
    })
}

/// Hardened-prediction metrics of the generator on a held-out set.
pub fn eval_on_test<B: GeneratorBackbone>(
    generator: &B,
    test: &[(ImageSlice, MaskLabel)],
    batch_size: usize,
) -> Result<MetricValues, TrainError> {
    if test.is_empty() {
        return Err(TrainError::Metrics("empty test split".into()));
    }
    let targets: Vec<MaskLabel> = test.iter().map(|(_, m)| m.clone()).collect();
    let mut preds = Vec::with_capacity(test.len());
    for chunk in test.chunks(batch_size.max(1)) {
        let slices: Vec<&ImageSlice> = chunk.iter().map(|(s, _)| s).collect();
        let x = images_to_batch(&slices)?;
        let probs = generator.forward_eval(&x.view())?;
        for b in 0..chunk.len() {
            let sp =
                SoftPrediction::from_probs_unchecked(probs.index_axis(Axis(0), b).to_owned());
            preds.push(harden_prediction(&sp));
        }
    }
    compute_metrics(&preds, &targets).map_err(|e| TrainError::Metrics(e.to_string()))
}

/// Runs `cfg.iterations` steps from a fresh state; see [`resume_loop`] for
/// continuing a checkpointed state.
pub fn train<B: GeneratorBackbone>(
    split: &DatasetSplit,
    cfg: &TrainConfig,
    generator: B,
    run_dir: Option<&Path>,
) -> Result<(TrainState<B>, TrainOutcome), TrainError> {
    let mut state = init_state(split, cfg, generator)?;
    let outcome = resume_loop(&mut state, split, cfg, run_dir)?;
    Ok((state, outcome))
}

/// Continues a (possibly restored) state until `cfg.iterations`, streaming
/// metrics and checkpoints into `run_dir` when given.
pub fn resume_loop<B: GeneratorBackbone>(
    state: &mut TrainState<B>,
    split: &DatasetSplit,
    cfg: &TrainConfig,
    run_dir: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if split.labeled.is_empty() {
        return Err(TrainError::EmptyLabeledSet);
    }
    let mut csv = match run_dir {
        Some(dir) => Some(MetricsCsv::create(&dir.join("metrics.csv"))?),
        None => None,
    };
    let mut records = Vec::new();
    let mut evals = Vec::new();
    let mut interrupted = false;
    let mut final_checkpoint = None;

    while state.iteration < cfg.iterations {
        if interrupt_requested() {
            interrupted = true;
            break;
        }
        let idxs = state.labeled_sampler.next_indices(cfg.batch_size);
        let slices: Vec<&ImageSlice> = idxs.iter().map(|&i| &split.labeled[i].0).collect();
        let masks: Vec<MaskLabel> = idxs.iter().map(|&i| split.labeled[i].1.clone()).collect();
        let x_l = images_to_batch(&slices)?;
        let x_u = match state.unlabeled_sampler.as_mut() {
            Some(s) => {
                let ui = s.next_indices(cfg.batch_size);
                let us: Vec<&ImageSlice> = ui.iter().map(|&i| &split.unlabeled[i]).collect();
                Some(images_to_batch(&us)?)
            }
            None => None,
        };

        let rec = train_step(state, &x_l, &masks, x_u.as_ref(), cfg)?;
        let it = rec.iteration;

        let eval_now = !split.test.is_empty()
            && ((cfg.eval_every > 0 && it % cfg.eval_every == 0) || it == cfg.iterations);
        let eval = if eval_now {
            let m = eval_on_test(&state.generator, &split.test, cfg.batch_size)?;
            evals.push((it, m));
            Some(m)
        } else {
            None
        };

        if let Some(csv) = csv.as_mut() {
            if it % cfg.log_every.max(1) == 0 || it == cfg.iterations || eval.is_some() {
                csv.row(&rec, eval.as_ref())?;
            }
        }
        records.push(rec);

        if let Some(dir) = run_dir {
            let tagged = cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0;
            if tagged {
                save_checkpoint(state, dir, &format!("{it:06}"))?;
            }
            if it == cfg.iterations {
                final_checkpoint = Some(save_checkpoint(state, dir, "final")?);
            }
        }
    }

    if interrupted {
        if let Some(dir) = run_dir {
            final_checkpoint = Some(save_checkpoint(state, dir, "final")?);
        }
    }
    if let Some(csv) = csv.as_mut() {
        csv.flush()?;
    }
    Ok(TrainOutcome {
        records,
        evals,
        interrupted,
        final_checkpoint,
    })
}
