use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use geoclust::pipeline::Manifest;
use geoclust::raster::{write_raster, RasterGrid};
use tempfile::TempDir;

fn geoclust(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geoclust"))
        .args(args)
        .env("GEOCLUST_THREADS", "1")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn ok(out: Output) -> Output {
    assert_eq!(
        code(&out),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path) -> std::path::PathBuf {
    let out = dir.join("synth");
    ok(geoclust(&[
        "synth",
        "--out",
        p(&out),
        "--rows",
        "32",
        "--cols",
        "32",
        "--bands",
        "5",
        "--classes",
        "3",
        "--sites",
        "9",
        "--seed",
        "4",
    ]));
    out
}

#[test]
fn synth_writes_scene_truth_and_spec() {
    let dir = TempDir::new().unwrap();
    let s = synth(dir.path());
    for rel in [
        "scene/header.json",
        "scene/bands.bin",
        "truth/header.json",
        "truth.csv",
        "scene_spec.json",
    ] {
        assert!(s.join(rel).is_file(), "{rel}");
    }
}

#[test]
fn pipeline_flags_override_config_file() {
    let dir = TempDir::new().unwrap();
    let s = synth(dir.path());
    let cfg = dir.path().join("config.json");
    let out = dir.path().join("run");
    let text = serde_json::json!({
        "input": s.join("scene"),
        "out": dir.path().join("ignored"),
        "seed": 5,
        "k": 4,
        "filter": "off",
    });
    fs::write(&cfg, text.to_string()).unwrap();
    ok(geoclust(&[
        "pipeline",
        "--config",
        p(&cfg),
        "--out",
        p(&out),
        "--seed",
        "7",
        "--k",
        "3",
    ]));
    let manifest = Manifest::load(&out).unwrap();
    assert_eq!(manifest.config.seed, 7);
    assert_eq!(manifest.chosen_k, 3);
    assert_eq!(manifest.config.filter.to_string(), "off");
    assert!(!dir.path().join("ignored").exists());
}

#[test]
fn config_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let s = synth(dir.path());
    let scene = s.join("scene");
    let out = dir.path().join("run");
    assert_eq!(
        code(&geoclust(&[
            "pipeline",
            "--input",
            p(&scene),
            "--out",
            p(&out),
            "--k",
            "1"
        ])),
        2
    );
    assert_eq!(
        code(&geoclust(&[
            "pipeline",
            "--config",
            p(&dir.path().join("missing.json"))
        ])),
        2
    );
    assert_eq!(
        code(&geoclust(&[
            "pipeline",
            "--input",
            p(&scene),
            "--out",
            p(&scene)
        ])),
        2
    );
    assert_eq!(
        code(&geoclust(&[
            "pipeline",
            "--input",
            p(&scene),
            "--out",
            p(&out),
            "--filter",
            "4"
        ])),
        2
    );
    assert_eq!(
        code(&geoclust(&[
            "pipeline",
            "--input",
            p(&scene),
            "--out",
            p(&out),
            "--method",
            "lda"
        ])),
        2
    );

    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"input": "x", "out": "y", "colour": 1}"#).unwrap();
    let res = geoclust(&["pipeline", "--config", p(&cfg)]);
    assert_eq!(code(&res), 2);
    assert!(String::from_utf8_lossy(&res.stderr).contains("[config]"));

    let threads = Command::new(env!("CARGO_BIN_EXE_geoclust"))
        .args(["pipeline", "--input", p(&scene), "--out", p(&out)])
        .env("GEOCLUST_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&threads), 2);
}

#[test]
fn data_errors_exit_three() {
    let dir = TempDir::new().unwrap();
    let broken = dir.path().join("broken");
    fs::create_dir_all(&broken).unwrap();
    fs::write(broken.join("header.json"), "{").unwrap();
    let out = dir.path().join("run");
    let res = geoclust(&["pipeline", "--input", p(&broken), "--out", p(&out)]);
    assert_eq!(code(&res), 3);
    assert!(String::from_utf8_lossy(&res.stderr).contains("[ingest]"));
    assert!(out.join(".partial").is_file());
}

#[test]
fn numeric_failures_exit_four() {
    let dir = TempDir::new().unwrap();
    let flat = dir.path().join("flat");
    write_raster(&RasterGrid::new(6, 6, 3, vec![0.5; 108]).unwrap(), &flat).unwrap();
    let res = geoclust(&[
        "pipeline",
        "--input",
        p(&flat),
        "--out",
        p(&dir.path().join("run")),
    ]);
    assert_eq!(
        code(&res),
        4,
        "stderr: {}",
        String::from_utf8_lossy(&res.stderr)
    );
    assert!(String::from_utf8_lossy(&res.stderr).contains("[reduce]"));
}

#[test]
fn stages_run_standalone_on_persisted_artifacts() {
    let dir = TempDir::new().unwrap();
    let s = synth(dir.path());
    let d = |name: &str| dir.path().join(name);
    ok(geoclust(&[
        "ingest",
        "--input",
        p(&s.join("scene")),
        "--crop",
        "2,3,24,20",
        "--out",
        p(&d("cropped")),
    ]));
    let header: serde_json::Value =
        serde_json::from_slice(&fs::read(d("cropped").join("header.json")).unwrap()).unwrap();
    assert_eq!(
        (header["rows"].as_u64(), header["cols"].as_u64()),
        (Some(24), Some(20))
    );
    ok(geoclust(&[
        "ingest",
        "--input",
        p(&s.join("scene")),
        "--out",
        p(&d("ingested")),
    ]));
    ok(geoclust(&[
        "reduce",
        "--input",
        p(&d("ingested")),
        "--out",
        p(&d("reduced")),
        "--method",
        "ae",
        "--epochs",
        "2",
    ]));
    let latent = d("reduced").join("latent");
    ok(geoclust(&[
        "elbow",
        "--input",
        p(&latent),
        "--out",
        p(&d("elbow.csv")),
        "--k-max",
        "6",
    ]));
    let csv = fs::read_to_string(d("elbow.csv")).unwrap();
    assert_eq!(csv.lines().skip(1).filter(|l| !l.is_empty()).count(), 5);
    ok(geoclust(&[
        "cluster",
        "--input",
        p(&latent),
        "--k",
        "3",
        "--out",
        p(&d("clusters")),
    ]));
    let labels = d("clusters").join("labels");
    ok(geoclust(&[
        "filter",
        "--input",
        p(&labels),
        "--kernel",
        "3",
        "--out",
        p(&d("filtered")),
    ]));
    ok(geoclust(&[
        "render",
        "--input",
        p(&d("filtered")),
        "--out",
        p(&d("map.png")),
    ]));
    assert_eq!(&fs::read(d("map.png")).unwrap()[1..4], b"PNG");
    ok(geoclust(&[
        "evaluate",
        "--labels",
        p(&labels),
        "--filtered",
        p(&d("filtered")),
        "--features",
        p(&latent),
        "--method",
        "ae",
        "--ground-truth",
        p(&s.join("truth.csv")),
        "--out",
        p(&d("report.json")),
    ]));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(d("report.json")).unwrap()).unwrap();
    assert_eq!(report["k"], 3);
    assert!(report["overall_accuracy"].is_number());
    assert!(report["overall_accuracy_unfiltered"].is_number());
}
