//! Nyström KRR with all points as centers reproduces exact KRR; fewer centers
//! trade a little accuracy for a much smaller system.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;
use windcast::kernel_model::{default_centers, fit_exact, fit_nystrom, CgOptions, KernelParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let n = 1500;
    let x: DMatrix<f64> = DMatrix::from_fn(n, 4, |_, _| rng.gen_range(-2.0..2.0));
    let y = DVector::from_fn(n, |i, _| (x[(i, 0)] * x[(i, 1)]).sin() + 0.1 * rng.gen_range(-1.0..1.0));
    let x_test: DMatrix<f64> = DMatrix::from_fn(300, 4, |_, _| rng.gen_range(-2.0..2.0));
    let params = KernelParams::new(1.0, 1e-5)?;

    let t = Instant::now();
    let exact = fit_exact(&x, &y, params, true)?.predict(&x_test)?;
    println!("exact        {:>7.1} ms", t.elapsed().as_secs_f64() * 1e3);

    let tight = CgOptions { tolerance: 1e-10, ..Default::default() };
    for m in [n, default_centers(n), 100, 25] {
        let t = Instant::now();
        let model = fit_nystrom(&x, &y, params, m, &tight, 7, true)?;
        let pred = model.predict(&x_test)?;
        println!(
            "m = {m:<5} {:>7.1} ms  {:>3} iterations  max |nystrom - exact| = {:.2e}",
            t.elapsed().as_secs_f64() * 1e3,
            model.solve.iterations,
            (pred - &exact).amax()
        );
    }
    Ok(())
}
