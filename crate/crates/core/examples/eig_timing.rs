use std::time::Instant;

use rmtlab_core::ensembles::sample_goe;
use rmtlab_core::rng::derive_stream;
use rmtlab_core::spectral::{eigenvalues, eigh};

fn main() {
    for n in [200usize, 500, 1000, 2000] {
        let a = sample_goe(n, &mut derive_stream(1, 0)).unwrap();
        let t = Instant::now();
        let ev = eigenvalues(&a).unwrap();
        let t_vals = t.elapsed();
        let t = Instant::now();
        let d = if n <= 1000 { Some(eigh(&a).unwrap()) } else { None };
        println!(
            "n={n} eigenvalues {:?} eigh {:?} (lambda_max {:.4}, residual {:?})",
            t_vals,
            t.elapsed(),
            ev[n - 1],
            d.map(|d| d.residual())
        );
    }
}
