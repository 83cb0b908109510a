//! Mirrors one semi-supervised train_step with timers around each phase.

use ndarray::{s, Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use s4seg::datagen::MaskLabel;
use s4seg::losses::*;
use s4seg::nets::*;
use s4seg::nn::{Adam, Mode, Sgd};
use std::time::Instant;

struct Timer {
    t: Instant,
    acc: Vec<(String, f64)>,
}

impl Timer {
    fn new() -> Self {
        Timer { t: Instant::now(), acc: Vec::new() }
    }
    fn lap(&mut self, label: &str) {
        let el = self.t.elapsed().as_secs_f64();
        if let Some(e) = self.acc.iter_mut().find(|(l, _)| l == label) {
            e.1 += el;
        } else {
            self.acc.push((label.to_string(), el));
        }
        self.t = Instant::now();
    }
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut gen = build_reference_generator(1, 2, 8, 0).unwrap();
    let mut disc = build_discriminator(3, 0).unwrap();
    let mut gen_opt = Sgd::new(2.5e-4f32, 0.9, 5e-4);
    let mut disc_opt = Adam::new(1e-4f32, 0.9, 0.999);

    let x_l = Array4::from_shape_fn((6, 1, 64, 64), |_| rng.random::<f32>() * 0.2 + 0.4);
    let x_u = Array4::from_shape_fn((6, 1, 64, 64), |_| rng.random::<f32>() * 0.2 + 0.4);
    let masks: Vec<MaskLabel> = (0..6)
        .map(|_| {
            MaskLabel::new(
                ndarray::Array2::from_shape_fn((64, 64), |(i, j)| {
                    u8::from(i > 20 && i < 30 && j > 20 && j < 30)
                }),
                2,
            )
            .unwrap()
        })
        .collect();
    let w = LossWeights::default();

    let reps = 15;
    let mut tm = Timer::new();
    for _ in 0..reps {
        tm.t = Instant::now();
        let (probs_l, cache_l) = gen.forward(&x_l.view()).unwrap();
        tm.lap("G fwd labeled");
        let preds_l: Vec<SoftPrediction<f32>> = (0..6)
            .map(|b| SoftPrediction::from_probs_unchecked(probs_l.index_axis(Axis(0), b).to_owned()))
            .collect();
        let (_ce, g_ce) = compute_ce_loss_with_grad(&preds_l, &masks).unwrap();
        let (_dice, g_dice) = compute_dice_loss_with_grad(&preds_l, &masks, 1).unwrap();
        tm.lap("CE+Dice loss+grad");
        let (probs_u, cache_u) = gen.forward(&x_u.view()).unwrap();
        tm.lap("G fwd unlabeled");
        let mask_refs: Vec<&MaskLabel> = masks.iter().collect();
        let onehot = masks_to_onehot(&mask_refs).unwrap();
        let real_in = concat_image_mask(&x_l.view(), &onehot.view()).unwrap();
        let fake_in = concat_image_mask(&x_u.view(), &probs_u.view()).unwrap();
        tm.lap("concat");
        let (r_out, r_cache) = disc.forward(&real_in.view(), Mode::Train, &mut rng).unwrap();
        let (f_out, f_cache) = disc.forward(&fake_in.view(), Mode::Train, &mut rng).unwrap();
        tm.lap("D fwd x2 (update)");
        let (_ld, g_r, g_f) = compute_discriminator_loss_with_grad(
            &r_out.prob_real.to_vec(),
            &f_out.prob_real.to_vec(),
        )
        .unwrap();
        disc.zero_grads();
        disc.backward_params(&r_cache, &g_r);
        disc.backward_params(&f_cache, &g_f);
        tm.lap("D bwd params x2");
        disc_opt.begin_step();
        let mut idx = 0;
        disc.visit_params(&mut |_, p| {
            let (v, g) = p.slices_mut();
            disc_opt.step_param(idx, v, g);
            idx += 1;
        });
        tm.lap("D adam step");
        let (r2_out, _) = disc.forward(&real_in.view(), Mode::Train, &mut rng).unwrap();
        let (f2_out, f2_cache) = disc.forward(&fake_in.view(), Mode::Train, &mut rng).unwrap();
        tm.lap("D fwd x2 (fresh)");
        let rf: Vec<_> = (0..6).map(|b| r2_out.features_k.index_axis(Axis(0), b).to_owned()).collect();
        let ff: Vec<_> = (0..6).map(|b| f2_out.features_k.index_axis(Axis(0), b).to_owned()).collect();
        let (_fm, g_fm) = compute_fm_loss_with_grad(&rf, &ff).unwrap();
        tm.lap("FM loss");
        let preds_u: Vec<SoftPrediction<f32>> = (0..6)
            .map(|b| SoftPrediction::from_probs_unchecked(probs_u.index_axis(Axis(0), b).to_owned()))
            .collect();
        let pseudos: Vec<PseudoLabel<f32>> = preds_u
            .iter()
            .zip(f2_out.prob_real.iter())
            .map(|(p, &c)| harden_pseudo_label(p, c).unwrap())
            .collect();
        let (_st, g_st, _) = compute_st_loss_with_grad(&preds_u, &pseudos, 0.6).unwrap();
        tm.lap("ST harden+loss");
        let mut gfm4 = Array4::<f32>::zeros((6, 512, 4, 4));
        for (b, g) in g_fm.iter().enumerate() {
            gfm4.index_axis_mut(Axis(0), b).assign(g);
        }
        gfm4.mapv_inplace(|v| v * w.w_fm as f32);
        let dinput = disc.backward_input_from_features(&f2_cache, &gfm4.view());
        tm.lap("D input-bwd (FM)");
        let mut dprobs_u = Array4::<f32>::zeros(probs_u.raw_dim());
        dprobs_u += &dinput.slice(s![.., 1.., .., ..]);
        for (b, g) in g_st.iter().enumerate() {
            dprobs_u.index_axis_mut(Axis(0), b).scaled_add(w.w_st as f32, g);
        }
        let mut dprobs_l = Array4::<f32>::zeros(probs_l.raw_dim());
        for (b, g) in g_ce.iter().enumerate() {
            dprobs_l.index_axis_mut(Axis(0), b).scaled_add(w.w_ce as f32, g);
        }
        for (b, g) in g_dice.iter().enumerate() {
            dprobs_l.index_axis_mut(Axis(0), b).scaled_add(w.w_dice as f32, g);
        }
        tm.lap("grad assembly");
        gen.zero_grads();
        gen.backward(cache_l, &dprobs_l.view());
        tm.lap("G bwd labeled");
        gen.backward(cache_u, &dprobs_u.view());
        tm.lap("G bwd unlabeled");
        let mut idx = 0;
        gen.visit_params(&mut |_, p| {
            let (v, g) = p.slices_mut();
            gen_opt.step_param(idx, v, g);
            idx += 1;
        });
        tm.lap("G sgd step");
    }
    let total: f64 = tm.acc.iter().map(|(_, v)| v).sum();
    for (label, secs) in &tm.acc {
        println!("{label:22} {:7.1} ms ({:4.1}%)", secs / reps as f64 * 1e3, secs / total * 100.0);
    }
    println!("TOTAL                  {:7.1} ms", total / reps as f64 * 1e3);
}
