use geoclust::dimred::{canonical_reduce, covariance, pca_fit, stacked_reduce};
use geoclust::neuralnet::{mse_loss, TrainConfig};
use geoclust::preprocess::{minmax_scale, PixelMatrix};
use geoclust::seed;
use geoclust_oracles as oracle;
use ndarray::{Array2, Axis};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Full-rank correlated data: iid normals through a random mixing matrix.
fn full_rank(s: u64, n: usize, m: usize) -> Array2<f64> {
    let mut rng = seed::rng(s);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mix = Array2::from_shape_fn((m, m), |_| rng.random_range(-1.0..1.0));
    let z = Array2::from_shape_fn((n, m), |_| normal.sample(&mut rng));
    z.dot(&mix) + 0.5
}

/// Scaled rank-2 scene: two factors mixed affinely into 8 bands.
fn rank_two_scene(s: u64, n: usize) -> Array2<f64> {
    let mut rng = seed::rng(s);
    let mix = Array2::from_shape_fn((2, 8), |_| rng.random_range(-1.0..1.0));
    let factors = Array2::from_shape_fn((n, 2), |_| rng.random_range(0.0..1.0));
    let raw = factors.dot(&mix);
    minmax_scale(&PixelMatrix::from_table(raw))
        .unwrap()
        .0
        .values
}

fn rows(x: &Array2<f64>) -> Vec<Vec<f64>> {
    x.rows().into_iter().map(|r| r.to_vec()).collect()
}

#[test]
fn explained_ratios_match_eigenvalue_oracle() {
    for s in 0..20 {
        let x = full_rank(s, 300, 2 + (s as usize % 5));
        let model = pca_fit(x.view(), 1.0).unwrap();
        let eig = oracle::symmetric_eigenvalues(&oracle::covariance(&rows(&x)));
        let total: f64 = eig.iter().sum();
        assert_eq!(model.n_components(), x.ncols());
        for (got, want) in model.explained_variance_ratio.iter().zip(&eig) {
            assert!(
                (got - want / total).abs() < 1e-9,
                "seed {s}: {got} vs {}",
                want / total
            );
        }
    }
}

#[test]
fn all_component_reconstruction_is_identity() {
    for s in 0..20 {
        let x = full_rank(100 + s, 200, 6);
        let model = pca_fit(x.view(), 1.0).unwrap();
        let z = model.transform(x.view()).unwrap();
        let back = model.inverse_transform(z.view()).unwrap();
        let err = (&back - &x).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(err < 1e-9, "seed {s}: {err}");
    }
}

#[test]
fn variance_target_selects_minimal_count() {
    for s in 0..20 {
        let x = full_rank(200 + s, 400, 7);
        let model = pca_fit(x.view(), 0.9).unwrap();
        let eig = oracle::symmetric_eigenvalues(&oracle::covariance(&rows(&x)));
        let total: f64 = eig.iter().sum();
        let cum: Vec<f64> = eig
            .iter()
            .scan(0.0, |a, v| {
                *a += v / total;
                Some(*a)
            })
            .collect();
        let m = model.n_components();
        assert!(
            cum[m - 1] >= 0.9 - 1e-12,
            "seed {s}: m={m} reaches only {}",
            cum[m - 1]
        );
        if m > 1 {
            assert!(cum[m - 2] < 0.9, "seed {s}: m={m} is not minimal");
        }
    }
}

#[test]
fn components_orthonormal_and_latents_uncorrelated() {
    let x = full_rank(7, 500, 5);
    let model = pca_fit(x.view(), 1.0).unwrap();
    let gram = model.components.dot(&model.components.t());
    for ((i, j), v) in gram.indexed_iter() {
        let want = if i == j { 1.0 } else { 0.0 };
        assert!((v - want).abs() < 1e-9);
    }
    let z = model.transform(x.view()).unwrap();
    let (_, cov) = covariance(z.view());
    let total: f64 = covariance(x.view()).1.diag().sum();
    for ((i, j), v) in cov.indexed_iter() {
        if i != j {
            assert!(v.abs() < 1e-9 * total);
        }
    }
}

#[test]
fn canonical_autoencoder_reconstructs_rank_two_data() {
    let x = rank_two_scene(21, 16384);
    let cfg = TrainConfig {
        batch_size: 8,
        seed: 4,
        ..TrainConfig::default()
    };
    let r = canonical_reduce(x.view(), 2, &cfg).unwrap();
    let mse = mse_loss(r.reconstruct(x.view()).unwrap().view(), x.view()).unwrap();
    println!("canonical rank-2 mse {mse}");
    assert!(r.losses.last().unwrap() < r.losses.first().unwrap());
    assert!(mse < 0.01, "mse {mse}");
}

#[test]
fn stacked_autoencoder_reconstructs_rank_two_data() {
    let x = rank_two_scene(21, 16384);
    let cfg = TrainConfig {
        batch_size: 8,
        seed: 4,
        ..TrainConfig::default()
    };
    let r = stacked_reduce(x.view(), (4, 2), &cfg).unwrap();
    let mse = mse_loss(r.reconstruct(x.view()).unwrap().view(), x.view()).unwrap();
    println!("stacked rank-2 mse {mse}");
    assert!(mse < 0.02, "mse {mse}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pca_latents_follow_row_permutation(s in 0u64..1000) {
        let x = full_rank(s, 60, 3);
        let order: Vec<usize> = (0..60).map(|i| (i * 17) % 60).collect();
        let xp = x.select(Axis(0), &order);
        let za = pca_fit(x.view(), 0.9).unwrap().transform(x.view()).unwrap();
        let zb = pca_fit(xp.view(), 0.9).unwrap().transform(xp.view()).unwrap();
        prop_assert_eq!(za.width(), zb.width());
        let za = za.values.select(Axis(0), &order);
        let err = (&za - &zb.values).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        prop_assert!(err < 1e-9);
    }
}
