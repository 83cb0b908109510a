use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use s4seg::nn::Conv2d;
use std::time::Instant;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let w = 8usize;
    // (label, cin, cout, spatial)
    let shapes = [
        ("enc0", 1, w, 64),
        ("down1", w, 2 * w, 32),
        ("down2", 2 * w, 4 * w, 16),
        ("down3", 4 * w, 8 * w, 8),
        ("up2", 12 * w, 4 * w, 16),
        ("up1", 6 * w, 2 * w, 32),
        ("up0", 3 * w, w, 64),
    ];
    let mut tot_f = 0.0;
    let mut tot_b = 0.0;
    for (label, cin, cout, hw) in shapes {
        let mut conv = Conv2d::new(cin, cout, 3, 1, 1, &mut rng);
        let x = Array4::from_shape_fn((6, cin, hw, hw), |_| rng.random::<f32>());
        let reps = 30;
        let t = Instant::now();
        for _ in 0..reps {
            std::hint::black_box(conv.forward(&x.view()).unwrap());
        }
        let f = t.elapsed().as_secs_f64() / reps as f64 * 1e3;
        let (out, cache) = conv.forward(&x.view()).unwrap();
        let t = Instant::now();
        for _ in 0..reps {
            std::hint::black_box(conv.backward(&cache, &out.view()));
        }
        let b = t.elapsed().as_secs_f64() / reps as f64 * 1e3;
        let flops = 2.0 * 6.0 * (cout * cin * 9 * hw * hw) as f64;
        println!(
            "{label:6} fwd {f:6.2} ms ({:5.1} GF/s)  bwd {b:6.2} ms",
            flops / (f / 1e3) / 1e9
        );
        tot_f += f;
        tot_b += b;
    }
    println!("G conv total: fwd {tot_f:.1} ms bwd {tot_b:.1} ms");
}
