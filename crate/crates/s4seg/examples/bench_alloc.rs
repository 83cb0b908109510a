use ndarray::Array2;
use std::time::Instant;

fn main() {
    // fresh zeros every call (the current conv pattern)
    let t = Instant::now();
    for _ in 0..50 {
        let a = Array2::<f32>::zeros((1024, 3072));
        std::hint::black_box(&a);
    }
    println!("fresh zeros 12.6MB: {:.2} ms/call", t.elapsed().as_secs_f64() / 50.0 * 1e3);

    // reuse + fill
    let mut a = Array2::<f32>::zeros((1024, 3072));
    let t = Instant::now();
    for _ in 0..50 {
        a.fill(0.0);
        std::hint::black_box(&a);
    }
    println!("reused fill 12.6MB: {:.2} ms/call", t.elapsed().as_secs_f64() / 50.0 * 1e3);
}
