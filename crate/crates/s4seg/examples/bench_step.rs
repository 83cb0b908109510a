//! Quick per-iteration timing of the adversarial training loop at the desk
//! profile. Run with `cargo run --release --example bench_step`.

use std::time::Instant;

use s4seg::datagen::{generate_phantoms, make_split, PhantomSpec};
use s4seg::nets::build_reference_generator;
use s4seg::trainer::{resume_loop, init_state, TrainConfig};

fn main() {
    let spec = PhantomSpec {
        n_slices: 200,
        ..PhantomSpec::default()
    };
    let pairs = generate_phantoms(&spec).unwrap();
    let split = make_split(pairs, 0.3, 1.0, 0.15, 1).unwrap();
    println!(
        "labeled {} unlabeled {} test {}",
        split.labeled.len(),
        split.unlabeled.len(),
        split.test.len()
    );

    for (label, width, iters) in [("width 8", 8usize, 40usize), ("width 16", 16, 20)] {
        let mut cfg = TrainConfig::desk_profile();
        cfg.base_width = width;
        cfg.iterations = iters;
        cfg.eval_every = 0;
        cfg.log_every = usize::MAX;
        let generator = build_reference_generator(1, 2, cfg.base_width, cfg.seed).unwrap();
        let mut state = init_state(&split, &cfg, generator).unwrap();
        // warmup
        cfg.iterations = 3;
        resume_loop(&mut state, &split, &cfg, None).unwrap();
        cfg.iterations = iters;
        let t = Instant::now();
        resume_loop(&mut state, &split, &cfg, None).unwrap();
        let el = t.elapsed().as_secs_f64();
        let per = el / (iters - 3) as f64;
        println!(
            "{label}: {:.1} ms/iter -> {:.1} min per 2000-iter run",
            per * 1e3,
            per * 2000.0 / 60.0
        );
    }
}
