use geoclust::neuralnet::{backward, mse_loss, Activation, DenseNetwork};
use geoclust::seed;
use geoclust_oracles::central_difference;
use ndarray::Array2;
use rand::Rng;

const H: f64 = 1e-6;
/// Denominator floor for the relative error, so near-zero gradients are
/// judged on absolute error instead of amplified round-off.
const FLOOR: f64 = 1e-4;

fn random_case(seed_value: u64) -> (DenseNetwork, Array2<f64>, Array2<f64>) {
    let mut rng = seed::rng(seed_value);
    let n_layers = rng.random_range(1..=3);
    let dims: Vec<usize> = (0..=n_layers).map(|_| rng.random_range(1..=8)).collect();
    let acts: Vec<Activation> = (0..n_layers)
        .map(|_| {
            if rng.random_bool(0.5) {
                Activation::Relu
            } else {
                Activation::Sigmoid
            }
        })
        .collect();
    let mut net = DenseNetwork::init(&dims, &acts, rng.random()).unwrap();
    // Non-zero biases so ReLU units sit away from their kink.
    for layer in net.layers_mut() {
        layer.biases.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    let batch = rng.random_range(1..=5);
    let x = Array2::from_shape_fn((batch, dims[0]), |_| rng.random_range(-1.0..1.0));
    let t = Array2::from_shape_fn((batch, dims[n_layers]), |_| rng.random_range(0.0..1.0));
    (net, x, t)
}

fn loss_of(net: &DenseNetwork, x: &Array2<f64>, t: &Array2<f64>) -> f64 {
    mse_loss(net.predict(x.view()).unwrap().view(), t.view()).unwrap()
}

/// Largest relative error between analytic and numeric gradients.
fn max_relative_error(net: &DenseNetwork, x: &Array2<f64>, t: &Array2<f64>) -> f64 {
    let acts = net.forward(x.view()).unwrap();
    let grads = backward(net, &acts, t.view()).unwrap();
    let mut worst: f64 = 0.0;
    let mut probe = net.clone();
    let mut compare = |analytic: f64, numeric: f64| {
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
        worst = worst.max(err);
    };
    for (li, g) in grads.layers.iter().enumerate() {
        for ((i, j), &a) in g.weights.indexed_iter() {
            let x0 = net.layers()[li].weights[[i, j]];
            let n = central_difference(
                |v| {
                    probe.layers_mut()[li].weights[[i, j]] = v;
                    loss_of(&probe, x, t)
                },
                x0,
                H,
            );
            probe.layers_mut()[li].weights[[i, j]] = x0;
            compare(a, n);
        }
        for (i, &a) in g.biases.indexed_iter() {
            let x0 = net.layers()[li].biases[i];
            let n = central_difference(
                |v| {
                    probe.layers_mut()[li].biases[i] = v;
                    loss_of(&probe, x, t)
                },
                x0,
                H,
            );
            probe.layers_mut()[li].biases[i] = x0;
            compare(a, n);
        }
    }
    worst
}

#[test]
fn analytic_gradients_match_central_differences() {
    let mut worst: f64 = 0.0;
    for s in 0..50 {
        let (net, x, t) = random_case(1000 + s);
        let e = max_relative_error(&net, &x, &t);
        assert!(e < 1e-6, "network {s}: relative error {e}");
        worst = worst.max(e);
    }
    println!("worst relative error {worst:e}");
}

#[test]
fn identity_output_layer_gradients_match() {
    let mut rng = seed::rng(5);
    let mut net =
        DenseNetwork::init(&[3, 4, 2], &[Activation::Sigmoid, Activation::Identity], 5).unwrap();
    for layer in net.layers_mut() {
        layer.biases.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    let x = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
    let t = Array2::from_shape_fn((4, 2), |_| rng.random_range(-1.0..1.0));
    assert!(max_relative_error(&net, &x, &t) < 1e-6);
}
