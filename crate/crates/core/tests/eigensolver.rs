use nalgebra::DMatrix;
use proptest::prelude::*;
use rmtlab_core::ensembles::{sample_goe, EnsembleSpec, SymmetricMatrix};
use rmtlab_core::rng::derive_stream;
use rmtlab_core::spectral::{eigenvalues, eigh};

fn reference_eigenvalues(a: &SymmetricMatrix) -> Vec<f64> {
    let n = a.n();
    let m = DMatrix::from_row_slice(n, n, &a.to_dense());
    let mut ev: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (k, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "eigenvalue {k}: {x} vs {y}");
    }
}

#[test]
fn goe_matches_reference() {
    for &n in &[2usize, 3, 17, 64, 300] {
        let a = sample_goe(n, &mut derive_stream(100, n as u64)).unwrap();
        let want = reference_eigenvalues(&a);
        assert_close(&eigenvalues(&a).unwrap(), &want, 1e-11);
        let d = eigh(&a).unwrap();
        assert_close(d.eigenvalues(), &want, 1e-11);
        assert!(d.reconstruction_error(&a) <= 1e-11);
        assert!(d.orthonormality_defect() <= 1e-11);
    }
}

#[test]
fn sparse_with_outlier_matches_reference() {
    let spec = EnsembleSpec::erdos_renyi(400, 0.4);
    let a = spec.sample(&mut derive_stream(101, 0)).unwrap();
    let want = reference_eigenvalues(&a);
    let got = eigenvalues(&a).unwrap();
    assert_close(&got, &want, 1e-10);
    // the rank-one mean produces a single outlier near f + 1/f
    let f = spec.mean_f();
    assert!((got[399] - (f + 1.0 / f)).abs() < 0.5, "{} vs {f}", got[399]);
    assert!(got[398] < 2.5);
}

#[test]
fn structured_inputs() {
    // repeated eigenvalues, zero blocks and a scaled identity
    let id = SymmetricMatrix::diagonal(&[3.0; 20]);
    assert_close(&eigenvalues(&id).unwrap(), &[3.0; 20], 1e-14);
    let zero = SymmetricMatrix::zeros(15);
    assert_close(&eigenvalues(&zero).unwrap(), &[0.0; 15], 0.0);
    let ones = SymmetricMatrix::zeros(10).with_entry_mean(1.0);
    let mut want = vec![0.0; 10];
    want[9] = 10.0;
    assert_close(&eigenvalues(&ones).unwrap(), &want, 1e-12);
    let d = eigh(&ones).unwrap();
    assert!(d.reconstruction_error(&ones) <= 1e-12);
}

#[test]
fn huge_and_tiny_scales() {
    let a = sample_goe(40, &mut derive_stream(102, 0)).unwrap();
    for scale in [1e-150, 1e150] {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| (0..40).map(|j| a.get(i, j) * scale).collect()).collect();
        let s = SymmetricMatrix::from_rows(&rows).unwrap();
        let got = eigenvalues(&s).unwrap();
        let base = eigenvalues(&a).unwrap();
        for (g, b) in got.iter().zip(&base) {
            assert!((g / scale - b).abs() <= 1e-11, "{scale}: {g} vs {b}");
        }
    }
}

fn symmetric_strategy() -> impl Strategy<Value = SymmetricMatrix> {
    (1usize..24).prop_flat_map(|n| {
        proptest::collection::vec(-10.0f64..10.0, n * (n + 1) / 2).prop_map(move |vals| {
            let mut it = vals.into_iter();
            SymmetricMatrix::from_upper_fn(n, |_, _| it.next().unwrap())
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eigenvalues_agree_with_reference(a in symmetric_strategy()) {
        let scale = a.max_abs().max(1.0);
        let got = eigenvalues(&a).unwrap();
        let want = reference_eigenvalues(&a);
        for (x, y) in got.iter().zip(&want) {
            prop_assert!((x - y).abs() <= 1e-12 * scale * a.n() as f64);
        }
        prop_assert!(got.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn decomposition_reconstructs(a in symmetric_strategy()) {
        let d = eigh(&a).unwrap();
        let scale = a.max_abs().max(1.0);
        prop_assert!(d.reconstruction_error(&a) <= 1e-12 * scale * a.n() as f64);
        prop_assert!(d.orthonormality_defect() <= 1e-12 * a.n() as f64);
        let trace: f64 = (0..a.n()).map(|i| a.get(i, i)).sum();
        let sum: f64 = d.eigenvalues().iter().sum();
        prop_assert!((trace - sum).abs() <= 1e-11 * scale * a.n() as f64);
    }
}
