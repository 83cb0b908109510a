//! Isolates GEMM throughput as called through ndarray.

use ndarray::linalg::general_mat_mul;
use ndarray::Array2;
use std::time::Instant;

fn main() {
    for &(m, k, n, label) in &[
        (128usize, 1024usize, 3072usize, "D-L2 fwd"),
        (512, 4096, 192, "D-L4 fwd"),
        (128, 3072, 1024, "D-L2 wgrad"),
        (1024, 128, 3072, "D-L2 igrad"),
    ] {
        let a = Array2::<f32>::from_elem((m, k), 1.0);
        let b = Array2::<f32>::from_elem((k, n), 0.5);
        let mut c = Array2::<f32>::zeros((m, n));
        let flop = 2.0 * (m * k * n) as f64;
        let reps = ((6e9 / flop).ceil() as usize).max(20);
        let t = Instant::now();
        for _ in 0..reps {
            general_mat_mul(1.0, &a.view(), &b.view(), 0.0, &mut c);
        }
        let el = t.elapsed().as_secs_f64() / reps as f64;
        println!("{label}: {:.1} GF/s ({:.2} ms)", flop / el / 1e9, el * 1e3);
        // direct matrixmultiply on the same buffers
        let (asl, bsl, csl) = (a.as_slice().unwrap(), b.as_slice().unwrap(), c.as_slice_mut().unwrap());
        let t = Instant::now();
        for _ in 0..reps {
            unsafe {
                matrixmultiply::sgemm(m, k, n, 1.0,
                    asl.as_ptr(), k as isize, 1,
                    bsl.as_ptr(), n as isize, 1,
                    0.0, csl.as_mut_ptr(), n as isize, 1);
            }
        }
        let el = t.elapsed().as_secs_f64() / reps as f64;
        println!("{label} (direct mm): {:.1} GF/s", flop / el / 1e9);

        // same through a transposed view of b (as in the wgrad path)
        let bt = Array2::<f32>::from_elem((n, k), 0.5);
        let t = Instant::now();
        for _ in 0..reps {
            general_mat_mul(1.0, &a.view(), &bt.t(), 0.0, &mut c);
        }
        let el = t.elapsed().as_secs_f64() / reps as f64;
        println!("{label} (b.t()): {:.1} GF/s", flop / el / 1e9);
    }
}
