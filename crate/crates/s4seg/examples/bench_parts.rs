//! Phase-level timing of forward/backward passes.

use std::time::Instant;

use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use s4seg::nets::{build_discriminator, build_reference_generator, GeneratorBackbone};
use s4seg::nn::Mode;

fn timeit<T>(label: &str, reps: usize, mut f: impl FnMut() -> T) {
    let t = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(f());
    }
    let el = t.elapsed().as_secs_f64();
    println!("{label}: {:.1} ms", el / reps as f64 * 1e3);
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let g8 = build_reference_generator(1, 2, 8, 0).unwrap();
    let mut g8m = build_reference_generator(1, 2, 8, 0).unwrap();
    let d = build_discriminator(3, 0).unwrap();
    let mut dm = build_discriminator(3, 0).unwrap();

    let x6 = Array4::from_shape_fn((6, 1, 64, 64), |_| rng.random::<f32>());
    let x12 = Array4::from_shape_fn((12, 3, 64, 64), |_| rng.random::<f32>());
    let x6d = Array4::from_shape_fn((6, 3, 64, 64), |_| rng.random::<f32>());

    timeit("G(w8) fwd b6", 10, || g8.forward(&x6.view()).unwrap());
    let (probs, _) = g8.forward(&x6.view()).unwrap();
    timeit("G(w8) fwd+bwd b6", 10, || {
        let (_, cache) = g8m.forward(&x6.view()).unwrap();
        let grad = probs.clone();
        g8m.backward(cache, &grad.view());
    });

    timeit("D fwd b12 train", 10, || {
        d.forward(&x12.view(), Mode::Train, &mut rng).unwrap()
    });
    timeit("D fwd b12 eval", 10, || {
        d.forward(&x12.view(), Mode::Eval, &mut rng).unwrap()
    });
    let gp = vec![1.0f32; 12];
    timeit("D fwd+bwd_params b12", 10, || {
        let (_, cache) = dm.forward(&x12.view(), Mode::Train, &mut rng).unwrap();
        dm.backward_params(&cache, &gp);
    });
    timeit("D fwd b6 + input-bwd", 10, || {
        let (out, cache) = d.forward(&x6d.view(), Mode::Train, &mut rng).unwrap();
        let gf = Array4::from_elem(out.features_k.raw_dim(), 1e-4f32);
        d.backward_input_from_features(&cache, &gf.view())
    });

    // raw rng draw cost at the dropout volume
    timeit("rng 1.5M f32 draws", 10, || {
        let mut acc = 0.0f32;
        for _ in 0..1_500_000 {
            acc += rng.random::<f32>();
        }
        acc
    });
}
