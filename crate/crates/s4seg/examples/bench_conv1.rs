use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use s4seg::nn::Conv2d;
use std::time::Instant;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    // discriminator L2: 64 -> 128, 4x4 s2 p1, input 12x64x32x32
    let conv = Conv2d::new(64, 128, 4, 2, 1, &mut rng);
    let x = Array4::from_shape_fn((12, 64, 32, 32), |_| rng.random::<f32>());
    for _ in 0..3 {
        std::hint::black_box(conv.forward(&x.view()).unwrap());
    }
    let t = Instant::now();
    let reps = 20;
    for _ in 0..reps {
        std::hint::black_box(conv.forward(&x.view()).unwrap());
    }
    let per = t.elapsed().as_secs_f64() / reps as f64 * 1e3;
    println!("D-L2 conv fwd total: {per:.2} ms (gemm alone benchmarked ~8.5)");

    // backward decomposition
    let (out, cache) = conv.forward(&x.view()).unwrap();
    let mut convm = Conv2d::new(64, 128, 4, 2, 1, &mut rng);
    let t = Instant::now();
    for _ in 0..reps {
        let (_, cache) = convm.forward(&x.view()).unwrap();
        std::hint::black_box(convm.backward(&cache, &out.view()));
    }
    let per_fb = t.elapsed().as_secs_f64() / reps as f64 * 1e3;
    println!("D-L2 conv fwd+bwd: {per_fb:.2} ms");
    std::hint::black_box(&cache);
}
