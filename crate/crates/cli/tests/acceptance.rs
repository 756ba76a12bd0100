//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use geoclust::clustering::{kmeans_fit, kneedle_detect, ElbowCurve, KMeansOptions};
use geoclust::dimred::pca_fit;
use geoclust::label_grid::{write_label_grid, LabelGrid, NODATA_LABEL};
use geoclust::metrics::{calinski_harabasz, davies_bouldin};
use geoclust::neuralnet::{backward, mse_loss, Activation, DenseNetwork};
use geoclust::pipeline::{run_pipeline, Method, PipelineConfig};
use geoclust::postprocess::{majority_filter, DEFAULT_KERNEL};
use geoclust::raster::write_raster;
use geoclust::seed;
use geoclust::synthetic::{generate_synthetic, sample_truth_points, SyntheticSceneSpec};
use geoclust::Error;
use geoclust_oracles as oracle;
use ndarray::Array2;
use rand::Rng;
use tempfile::TempDir;

type Check = Result<String, String>;
type Criterion = (u32, &'static str, Duration, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rows(x: &Array2<f64>) -> Vec<Vec<f64>> {
    x.rows().into_iter().map(|r| r.to_vec()).collect()
}

#[derive(Clone, Copy)]
enum Param {
    Weight((usize, usize)),
    Bias(usize),
}

fn param_mut(net: &mut DenseNetwork, layer: usize, p: Param) -> &mut f64 {
    let layer = &mut net.layers_mut()[layer];
    match p {
        Param::Weight(ij) => &mut layer.weights[ij],
        Param::Bias(i) => &mut layer.biases[i],
    }
}

fn gradients() -> Check {
    const H: f64 = 1e-6;
    const FLOOR: f64 = 1e-4;
    let mut worst: f64 = 0.0;
    for s in 0..50u64 {
        let mut rng = seed::rng(7000 + s);
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
        let mut net = DenseNetwork::init(&dims, &acts, rng.random()).map_err(|e| e.to_string())?;
        for layer in net.layers_mut() {
            layer.biases.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        let batch = rng.random_range(1..=5);
        let x = Array2::from_shape_fn((batch, dims[0]), |_| rng.random_range(-1.0..1.0));
        let t = Array2::from_shape_fn((batch, dims[n_layers]), |_| rng.random_range(0.0..1.0));
        let loss =
            |n: &DenseNetwork| mse_loss(n.predict(x.view()).unwrap().view(), t.view()).unwrap();

        let grads = backward(&net, &net.forward(x.view()).unwrap(), t.view()).unwrap();
        let mut probe = net.clone();
        for (li, g) in grads.layers.iter().enumerate() {
            let params = g
                .weights
                .indexed_iter()
                .map(|(ij, &a)| (Param::Weight(ij), a))
                .chain(g.biases.indexed_iter().map(|(i, &a)| (Param::Bias(i), a)));
            for (param, analytic) in params {
                let x0 = *param_mut(&mut probe, li, param);
                let numeric = oracle::central_difference(
                    |v| {
                        *param_mut(&mut probe, li, param) = v;
                        loss(&probe)
                    },
                    x0,
                    H,
                );
                *param_mut(&mut probe, li, param) = x0;
                let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
                worst = worst.max(err);
            }
        }
    }
    ensure(worst < 1e-6, || format!("max relative error {worst:e}"))?;
    Ok(format!("50 networks, max relative error {worst:.2e}"))
}

fn metric_oracles() -> Check {
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE);
    let mut worst: f64 = 0.0;
    for s in 0..100u64 {
        let mut rng = seed::rng(8000 + s);
        let n = rng.random_range(10..=200);
        let m = rng.random_range(1..=4);
        let k = rng.random_range(2..=5);
        let labels: Vec<usize> = (0..n)
            .map(|i| if i < k { i } else { rng.random_range(0..k) })
            .collect();
        let x = Array2::from_shape_fn((n, m), |(i, _)| {
            labels[i] as f64 * 3.0 + rng.random_range(-2.0..2.0)
        });
        let r = rows(&x);
        let ch = calinski_harabasz(x.view(), &labels).map_err(|e| e.to_string())?;
        let db = davies_bouldin(x.view(), &labels).map_err(|e| e.to_string())?;
        let e = rel(ch, oracle::calinski_harabasz(&r, &labels))
            .max(rel(db, oracle::davies_bouldin(&r, &labels)));
        ensure(e < 1e-9, || format!("instance {s}: relative error {e:e}"))?;
        worst = worst.max(e);
    }
    let x = Array2::from_shape_vec((4, 1), vec![0.0, 1.0, 9.0, 10.0]).unwrap();
    let ch = calinski_harabasz(x.view(), &[0, 0, 1, 1]).unwrap();
    let db = davies_bouldin(x.view(), &[0, 0, 1, 1]).unwrap();
    ensure(ch == 162.0 && db == 1.0 / 9.0, || {
        format!("hand case CH={ch} DB={db}")
    })?;
    Ok(format!(
        "100 instances, max relative error {worst:.2e}; CH=162, DB={db:.4}"
    ))
}

fn kmeans_soundness() -> Check {
    let monotone = |t: &[f64]| t.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
    let opts = KMeansOptions::default();
    let mut within = 0;
    for s in 0..100u64 {
        let mut rng = seed::rng(9000 + s);
        let n = rng.random_range(4..=12);
        let m = rng.random_range(1..=2);
        let k = rng.random_range(2..=3);
        let x = Array2::from_shape_fn((n, m), |_| rng.random_range(0.0..10.0));
        let best = oracle::optimal_wcss(&rows(&x), k);
        let model = kmeans_fit(x.view(), k, s, &opts).map_err(|e| e.to_string())?;
        ensure(model.inertia >= best * (1.0 - 1e-9) - 1e-12, || {
            format!("instance {s} beat the optimum")
        })?;
        ensure(monotone(&model.inertia_trace), || {
            format!("instance {s}: inertia rose")
        })?;
        if model.inertia <= best * 1.05 + 1e-12 {
            within += 1;
        }
    }
    for s in 0..20u64 {
        let mut rng = seed::rng(9500 + s);
        let x = Array2::from_shape_fn((300, 3), |_| rng.random_range(0.0..1.0));
        let model =
            kmeans_fit(x.view(), 2 + s as usize % 6, s, &opts).map_err(|e| e.to_string())?;
        ensure(monotone(&model.inertia_trace), || {
            format!("larger instance {s}: inertia rose")
        })?;
    }
    ensure(within >= 95, || {
        format!("only {within}/100 within 5% of the optimum")
    })?;
    Ok(format!(
        "{within}/100 within 5% of the optimum, none below it, traces monotone"
    ))
}

fn kneedle() -> Check {
    let c = ElbowCurve::new((1..=6).collect(), vec![10.0, 5.0, 2.0, 1.9, 1.8, 1.7]).unwrap();
    let k = kneedle_detect(&c).map_err(|e| e.to_string())?;
    ensure(k == 3, || format!("hand curve gave k={k}"))?;
    for (a, b) in [(100.0, -7.0), (1.0, -0.05), (3.0, -1e-3)] {
        let linear = ElbowCurve::new(
            (2..=12).collect(),
            (0..11).map(|i| a + b * i as f64).collect(),
        )
        .unwrap();
        ensure(
            matches!(kneedle_detect(&linear), Err(Error::NoElbow)),
            || "linear curve gave a knee".into(),
        )?;
    }
    for s in 0..50u64 {
        let mut rng = seed::rng(10_000 + s);
        let mut y = 100.0;
        let wcss: Vec<f64> = (0..11)
            .map(|_| {
                y *= rng.random_range(0.3..0.95);
                y
            })
            .collect();
        let base = kneedle_detect(&ElbowCurve::new((2..=12).collect(), wcss.clone()).unwrap());
        let scale = rng.random_range(1e-3..1e3);
        let shift = rng.random_range(0.0..50.0);
        let moved = ElbowCurve::new(
            (2..=12).collect(),
            wcss.iter().map(|w| w * scale + shift).collect(),
        )
        .unwrap();
        let other = kneedle_detect(&moved);
        ensure(base.as_ref().ok() == other.as_ref().ok(), || {
            format!("curve {s}: {base:?} vs {other:?}")
        })?;
    }
    Ok("hand curve k=3, linear curves raise no-elbow, 50 affine rescalings agree".into())
}

fn pca() -> Check {
    let mut worst: f64 = 0.0;
    for s in 0..20u64 {
        let mut rng = seed::rng(11_000 + s);
        let m = 2 + s as usize % 6;
        let mix = Array2::from_shape_fn((m, m), |_| rng.random_range(-1.0..1.0));
        let x = Array2::from_shape_fn((300, m), |_| rng.random_range(-1.0..1.0)).dot(&mix);
        let full = pca_fit(x.view(), 1.0).map_err(|e| e.to_string())?;
        let back = full
            .inverse_transform(full.transform(x.view()).unwrap().view())
            .unwrap();
        let recon = (&back - &x).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        ensure(recon < 1e-9, || {
            format!("seed {s}: reconstruction error {recon:e}")
        })?;
        let eig = oracle::symmetric_eigenvalues(&oracle::covariance(&rows(&x)));
        let total: f64 = eig.iter().sum();
        for (got, want) in full.explained_variance_ratio.iter().zip(&eig) {
            let e = (got - want / total).abs();
            ensure(e < 1e-9, || format!("seed {s}: ratio error {e:e}"))?;
            worst = worst.max(e);
        }
        let chosen = pca_fit(x.view(), 0.9).unwrap().n_components();
        let mut cum = 0.0;
        let minimal = eig
            .iter()
            .position(|v| {
                cum += v / total;
                cum >= 0.9 - 1e-12
            })
            .unwrap()
            + 1;
        ensure(chosen == minimal, || {
            format!("seed {s}: chose {chosen}, minimal is {minimal}")
        })?;
    }
    Ok(format!(
        "20 datasets, identity reconstruction, ratio error {worst:.2e}, minimal m at 0.90"
    ))
}

fn write_scene(dir: &Path, spec: &SyntheticSceneSpec) -> Result<(), String> {
    let (scene, truth) = generate_synthetic(spec).map_err(|e| e.to_string())?;
    write_raster(&scene, &dir.join("scene")).map_err(|e| e.to_string())?;
    write_label_grid(&truth, &dir.join("truth")).map_err(|e| e.to_string())?;
    sample_truth_points(&truth, 30, spec.seed)
        .and_then(|t| t.save(&dir.join("truth.csv")))
        .map_err(|e| e.to_string())
}

fn end_to_end() -> Check {
    let spec =
        SyntheticSceneSpec::simplex(128, 128, 8, 6, 0.02, 24, 1).map_err(|e| e.to_string())?;
    let separation = spec.min_separation() / spec.noise_sigma;
    ensure(separation >= 5.0, || {
        format!("class separation only {separation:.1} sigma")
    })?;
    let dir = TempDir::new().map_err(|e| e.to_string())?;
    write_scene(dir.path(), &spec)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| e.to_string())?;
    let mut ari = Vec::new();
    let mut summary = Vec::new();
    for method in [Method::Pca, Method::Ae, Method::Sae] {
        let config = PipelineConfig {
            input: vec![dir.path().join("scene")],
            out: dir.path().join(method.to_string()),
            method,
            seed: spec.seed,
            batch_size: 16,
            ground_truth: Some(dir.path().join("truth.csv")),
            truth_grid: Some(dir.path().join("truth")),
            ..PipelineConfig::default()
        };
        let outcome = pool
            .install(|| run_pipeline(&config))
            .map_err(|e| e.to_string())?;
        let k = outcome.clusters.k;
        let a = outcome
            .report
            .adjusted_rand_index
            .ok_or("no ARI in report")?;
        summary.push(format!("{method} k={k} ARI={a:.3}"));
        ensure((5..=7).contains(&k) && a >= 0.8, || summary.join(", "))?;
        ari.push(a);
    }
    ensure(ari[2] >= ari[1] - 0.05, || {
        format!("stacked below canonical: {}", summary.join(", "))
    })?;
    Ok(summary.join(", "))
}

fn majority() -> Check {
    ensure(DEFAULT_KERNEL == 7, || {
        format!("default kernel {DEFAULT_KERNEL}")
    })?;
    let mut speck = LabelGrid::filled(3, 3, 0).unwrap();
    speck.set(1, 1, 1);
    ensure(majority_filter(&speck, 3).unwrap().get(1, 1) == 0, || {
        "speck survived".into()
    })?;
    let tie = LabelGrid::new(3, 3, vec![0, 1, 0, 1, 1, 0, 0, 1, NODATA_LABEL]).unwrap();
    ensure(majority_filter(&tie, 3).unwrap().get(1, 1) == 1, || {
        "tie did not keep the centre".into()
    })?;
    let low = LabelGrid::new(3, 3, vec![0, 2, 0, 2, 1, 0, 0, 2, 2]).unwrap();
    ensure(majority_filter(&low, 3).unwrap().get(1, 1) == 0, || {
        "tie did not pick the lowest mode".into()
    })?;

    let nested = |g: &LabelGrid| -> Vec<Vec<Option<u16>>> {
        (0..g.rows())
            .map(|r| {
                (0..g.cols())
                    .map(|c| Some(g.get(r, c)).filter(|&l| l != NODATA_LABEL))
                    .collect()
            })
            .collect()
    };
    let threads = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap();
    for s in 0..200u64 {
        let mut rng = seed::rng(12_000 + s);
        let (r, c) = (rng.random_range(1..20), rng.random_range(1..20));
        let labels = (0..r * c)
            .map(|_| {
                if rng.random_bool(0.1) {
                    NODATA_LABEL
                } else {
                    rng.random_range(0..5)
                }
            })
            .collect();
        let g = LabelGrid::new(r, c, labels).unwrap();
        let kernel = [3, 5, 7][s as usize % 3];
        let f = majority_filter(&g, kernel).unwrap();
        ensure(
            nested(&f) == oracle::majority_filter(&nested(&g), kernel),
            || format!("grid {s}: differs from reverse-order scan"),
        )?;
        ensure(
            threads.install(|| majority_filter(&g, kernel).unwrap()) == f,
            || format!("grid {s}: thread-dependent"),
        )?;
        let invented = f.labels().iter().any(|l| !g.labels().contains(l));
        ensure(!invented, || format!("grid {s}: invented a label"))?;
    }
    Ok("speck and tie cases exact, 200 grids match a reverse-order scan, no invented labels, kernel 7".into())
}

fn reproducibility() -> Check {
    let spec = SyntheticSceneSpec::simplex(64, 64, 8, 5, 0.02, 16, 3).map_err(|e| e.to_string())?;
    let dir = TempDir::new().map_err(|e| e.to_string())?;
    write_scene(dir.path(), &spec)?;
    let files = [
        "labels_raw/labels.bin",
        "labels_filtered/labels.bin",
        "report.json",
        "map_raw.png",
        "map_filtered.png",
        "latent/bands.bin",
        "clusters.json",
    ];
    let mut runs = Vec::new();
    for (i, threads) in ["1", "1", "4"].into_iter().enumerate() {
        let out = dir.path().join(format!("run{i}"));
        let status = Command::new(env!("CARGO_BIN_EXE_geoclust"))
            .arg("pipeline")
            .arg("--input")
            .arg(dir.path().join("scene"))
            .arg("--out")
            .arg(&out)
            .args(["--method", "sae", "--batch-size", "32"])
            .arg("--ground-truth")
            .arg(dir.path().join("truth.csv"))
            .arg("--truth-grid")
            .arg(dir.path().join("truth"))
            .env("GEOCLUST_THREADS", threads)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(status.status.success(), || {
            String::from_utf8_lossy(&status.stderr).into_owned()
        })?;
        let bytes: Vec<Vec<u8>> = files
            .iter()
            .map(|f| fs::read(out.join(f)).map_err(|e| format!("{f}: {e}")))
            .collect::<Result<_, _>>()?;
        runs.push(bytes);
    }
    for (i, f) in files.iter().enumerate() {
        ensure(runs[0][i] == runs[1][i], || {
            format!("{f} differs between identical runs")
        })?;
        ensure(runs[0][i] == runs[2][i], || {
            format!("{f} differs between 1 and 4 threads")
        })?;
    }
    Ok(format!(
        "{} artifacts byte-identical over two 1-thread runs and a 4-thread run",
        files.len()
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        (
            1,
            "gradient correctness",
            Duration::from_secs(10),
            gradients,
        ),
        (2, "metric oracles", Duration::from_secs(5), metric_oracles),
        (
            3,
            "k-means soundness",
            Duration::from_secs(30),
            kmeans_soundness,
        ),
        (4, "kneedle", Duration::from_secs(1), kneedle),
        (5, "pca", Duration::from_secs(5), pca),
        (
            6,
            "end-to-end synthetic scene",
            Duration::from_secs(120),
            end_to_end,
        ),
        (7, "majority filter", Duration::MAX, majority),
        (8, "reproducibility", Duration::MAX, reproducibility),
    ];
    let mut failed = 0;
    for (n, name, budget, check) in criteria {
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let result = result.and_then(|detail| {
            if elapsed > budget {
                Err(format!("{detail}; took {elapsed:.2?}, budget {budget:.0?}"))
            } else {
                Ok(detail)
            }
        });
        match result {
            Ok(detail) => println!("PASS criterion {n} ({name}): {detail} [{elapsed:.2?}]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {n} ({name}): {detail} [{elapsed:.2?}]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
