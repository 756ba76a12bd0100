use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use geoclust::clustering::{ElbowCurve, ELBOW_FILE};
use geoclust::dimred::LatentMatrix;
use geoclust::label_grid::{read_label_grid, write_label_grid, NODATA_LABEL};
use geoclust::pipeline::{
    cluster_latent, evaluate, ingest, reduce, run_pipeline, FilterPolicy, KPolicy, Method,
    PipelineConfig, PipelineError, Stage, LATENT_DIR, LATENT_NODATA, MODEL_DIR, SCALING_FILE,
};
use geoclust::postprocess::{majority_filter, palette_for, write_map, DEFAULT_KERNEL};
use geoclust::preprocess::{build_pixel_matrix, labels_to_grid, minmax_scale};
use geoclust::raster::{read_raster, write_raster};
use geoclust::synthetic::{generate_synthetic, sample_truth_points, SyntheticSceneSpec};
use geoclust::Error;

const THREADS_ENV: &str = "GEOCLUST_THREADS";

#[derive(Parser)]
#[command(
    name = "geoclust",
    version,
    about = "Unsupervised clustering of multiband rasters into unit maps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic scene with its truth map.
    Synth(SynthArgs),
    /// Read, stack and crop rasters into one.
    Ingest(IngestArgs),
    /// Scale a raster and reduce it to latent features.
    Reduce(ReduceArgs),
    /// Sweep k over a latent raster and report the elbow.
    Elbow(ElbowArgs),
    /// Fit k-means to a latent raster and write the label map.
    Cluster(ClusterArgs),
    /// Majority-filter a label map.
    Filter(FilterArgs),
    /// Score a label map against latent features and ground truth.
    Evaluate(EvaluateArgs),
    /// Render a label map to an indexed PNG.
    Render(RenderArgs),
    /// Run every stage end to end.
    Pipeline(Box<PipelineArgs>),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 128)]
    rows: usize,
    #[arg(long, default_value_t = 128)]
    cols: usize,
    #[arg(long, default_value_t = 8)]
    bands: usize,
    #[arg(long, default_value_t = 6)]
    classes: usize,
    #[arg(long, default_value_t = 0.02)]
    sigma: f64,
    #[arg(long, default_value_t = 24)]
    sites: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ground-truth points to sample into truth.csv.
    #[arg(
        long = "truth-points",
        visible_alias = "truth_points",
        default_value_t = 30
    )]
    truth_points: usize,
    /// Class spectra on a regular simplex (default) or greedily spread.
    #[arg(long, default_value = "simplex", value_parser = ["simplex", "spread"])]
    layout: String,
}

#[derive(Args)]
struct IngestArgs {
    /// Raster directories; several are resampled to a common grid and stacked.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Window as row0,col0,rows,cols.
    #[arg(long, value_parser = parse_crop)]
    crop: Option<[usize; 4]>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Default)]
struct TrainFlags {
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    #[arg(long = "variance-target", visible_alias = "variance_target")]
    variance_target: Option<f64>,
    #[arg(long = "latent-dim", visible_alias = "latent_dim")]
    latent_dim: Option<usize>,
    /// Stacked widths as h1,h2.
    #[arg(long = "hidden-dims", visible_alias = "hidden_dims", value_parser = parse_pair)]
    hidden_dims: Option<[usize; 2]>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long = "batch-size", visible_alias = "batch_size")]
    batch_size: Option<usize>,
    #[arg(long = "learning-rate", visible_alias = "learning_rate")]
    learning_rate: Option<f64>,
}

#[derive(Args, Default)]
struct KMeansFlags {
    #[arg(long = "k-min", visible_alias = "k_min")]
    k_min: Option<usize>,
    #[arg(long = "k-max", visible_alias = "k_max")]
    k_max: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long = "max-iter", visible_alias = "max_iter")]
    max_iter: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args)]
struct ReduceArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args)]
struct ElbowArgs {
    /// Latent raster directory.
    #[arg(long)]
    input: PathBuf,
    /// CSV path to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    kmeans: KMeansFlags,
}

#[derive(Args)]
struct ClusterArgs {
    /// Latent raster directory.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = parse_k)]
    k: KPolicy,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    kmeans: KMeansFlags,
}

#[derive(Args)]
struct FilterArgs {
    /// Label grid directory.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = DEFAULT_KERNEL)]
    kernel: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Unfiltered label grid directory.
    #[arg(long)]
    labels: PathBuf,
    /// Filtered label grid directory, scored alongside the unfiltered one.
    #[arg(long)]
    filtered: Option<PathBuf>,
    /// Latent raster directory the labels were clustered from.
    #[arg(long)]
    features: PathBuf,
    /// Method that produced the features, for the report.
    #[arg(long, value_parser = parse_method, default_value = "pca")]
    method: Method,
    #[arg(long = "ground-truth", visible_alias = "ground_truth")]
    ground_truth: Option<PathBuf>,
    #[arg(long = "truth-grid", visible_alias = "truth_grid")]
    truth_grid: Option<PathBuf>,
    #[arg(
        long = "silhouette-sample",
        visible_alias = "silhouette_sample",
        default_value_t = 5000
    )]
    silhouette_sample: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    /// Label grid directory.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    /// JSON config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, num_args = 1..)]
    input: Option<Vec<PathBuf>>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_crop)]
    crop: Option<[usize; 4]>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_k)]
    k: Option<KPolicy>,
    #[arg(long, value_parser = parse_filter)]
    filter: Option<FilterPolicy>,
    #[arg(long = "ground-truth", visible_alias = "ground_truth")]
    ground_truth: Option<PathBuf>,
    #[arg(long = "truth-grid", visible_alias = "truth_grid")]
    truth_grid: Option<PathBuf>,
    #[arg(long = "silhouette-sample", visible_alias = "silhouette_sample")]
    silhouette_sample: Option<usize>,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    kmeans: KMeansFlags,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_k(s: &str) -> Result<KPolicy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_filter(s: &str) -> Result<FilterPolicy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_list<const N: usize>(s: &str) -> Result<[usize; N], String> {
    let parts = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    parts
        .try_into()
        .map_err(|v: Vec<usize>| format!("expected {N} comma-separated counts, got {}", v.len()))
}

fn parse_crop(s: &str) -> Result<[usize; 4], String> {
    parse_list::<4>(s)
}

fn parse_pair(s: &str) -> Result<[usize; 2], String> {
    parse_list::<2>(s)
}

/// Failure carrying the stage it happened in.
struct Failure {
    stage: Stage,
    error: Error,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure {
            stage: e.stage,
            error: e.source,
        }
    }
}

trait At<T> {
    fn at(self, stage: Stage) -> Result<T, Failure>;
}

impl<T> At<T> for geoclust::Result<T> {
    fn at(self, stage: Stage) -> Result<T, Failure> {
        self.map_err(|error| Failure { stage, error })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: [config] {e}");
        return ExitCode::from(e.class().exit_code() as u8);
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: [{}] {}", f.stage, f.error);
            ExitCode::from(f.error.class().exit_code() as u8)
        }
    }
}

fn configure_threads() -> geoclust::Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n >= 1).ok_or_else(|| {
        Error::Config(format!(
            "{THREADS_ENV} must be a positive integer, got {raw:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Ingest(a) => {
            let grid = ingest(&a.input, a.crop).at(Stage::Ingest)?;
            write_raster(&grid, &a.out).at(Stage::Ingest)?;
            println!(
                "{} x {} x {} -> {}",
                grid.rows(),
                grid.cols(),
                grid.bands(),
                a.out.display()
            );
            Ok(())
        }
        Command::Reduce(a) => reduce_cmd(a),
        Command::Elbow(a) => elbow_cmd(a),
        Command::Cluster(a) => cluster_cmd(a),
        Command::Filter(a) => {
            let grid = read_label_grid(&a.input).at(Stage::Filter)?;
            let filtered = majority_filter(&grid, a.kernel).at(Stage::Filter)?;
            write_label_grid(&filtered, &a.out).at(Stage::Filter)?;
            println!("{} cells changed", grid.disagreement(&filtered));
            Ok(())
        }
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Render(a) => {
            let grid = read_label_grid(&a.input).at(Stage::Render)?;
            let palette = grid
                .palette
                .clone()
                .unwrap_or_else(|| palette_for(grid.label_count()));
            write_map(&grid, Some(&palette), &a.out).at(Stage::Render)?;
            Ok(())
        }
        Command::Pipeline(a) => pipeline_cmd(*a),
    }
}

fn synth(a: SynthArgs) -> Result<(), Failure> {
    let spec = if a.layout == "spread" {
        SyntheticSceneSpec::separated(a.rows, a.cols, a.bands, a.classes, a.sigma, a.sites, a.seed)
    } else {
        SyntheticSceneSpec::simplex(a.rows, a.cols, a.bands, a.classes, a.sigma, a.sites, a.seed)
            .at(Stage::Config)?
    };
    let (scene, truth) = generate_synthetic(&spec).at(Stage::Config)?;
    write_raster(&scene, &a.out.join("scene")).at(Stage::Ingest)?;
    write_label_grid(&truth, &a.out.join("truth")).at(Stage::Ingest)?;
    if a.truth_points > 0 {
        sample_truth_points(&truth, a.truth_points, a.seed)
            .and_then(|t| t.save(&a.out.join("truth.csv")))
            .at(Stage::Ingest)?;
    }
    write_json(&a.out.join("scene_spec.json"), &spec).at(Stage::Ingest)?;
    println!(
        "scene {} x {} x {}, {} classes, min separation {:.4}",
        spec.rows,
        spec.cols,
        spec.n_bands,
        spec.n_classes,
        spec.min_separation()
    );
    Ok(())
}

/// Config for a standalone stage: defaults plus the stage's own flags.
fn stage_config(
    seed: u64,
    train: &TrainFlags,
    kmeans: &KMeansFlags,
) -> Result<PipelineConfig, Failure> {
    let mut value = serde_json::to_value(PipelineConfig::default())
        .map_err(|e| Error::Config(e.to_string()))
        .at(Stage::Config)?;
    let obj = value.as_object_mut().expect("config is an object");
    obj.insert("seed".into(), json!(seed));
    train.overlay(obj);
    kmeans.overlay(obj);
    serde_json::from_value(value)
        .map_err(|e| Error::Config(e.to_string()))
        .at(Stage::Config)
}

impl TrainFlags {
    fn overlay(&self, obj: &mut Map<String, Value>) {
        set(obj, "method", self.method.map(|m| m.to_string()));
        set(obj, "variance_target", self.variance_target);
        set(obj, "latent_dim", self.latent_dim);
        set(obj, "hidden_dims", self.hidden_dims);
        set(obj, "epochs", self.epochs);
        set(obj, "batch_size", self.batch_size);
        set(obj, "learning_rate", self.learning_rate);
    }
}

impl KMeansFlags {
    fn overlay(&self, obj: &mut Map<String, Value>) {
        set(obj, "k_min", self.k_min);
        set(obj, "k_max", self.k_max);
        set(obj, "restarts", self.restarts);
        set(obj, "max_iter", self.max_iter);
        set(obj, "tol", self.tol);
    }
}

fn set<T: serde::Serialize>(obj: &mut Map<String, Value>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        obj.insert(
            key.into(),
            serde_json::to_value(v).expect("flag value serializes"),
        );
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> geoclust::Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| Error::header(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn reduce_cmd(a: ReduceArgs) -> Result<(), Failure> {
    let config = stage_config(a.seed, &a.train, &KMeansFlags::default())?;
    let grid = read_raster(&a.input).at(Stage::Ingest)?;
    let pixels = build_pixel_matrix(&grid).at(Stage::Scale)?;
    let (scaled, params) = minmax_scale(&pixels).at(Stage::Scale)?;
    fs::create_dir_all(&a.out)
        .map_err(|e| Error::io(&a.out, e))
        .at(Stage::Scale)?;
    write_json(&a.out.join(SCALING_FILE), &params).at(Stage::Scale)?;
    let reduction = reduce(&scaled, &config).at(Stage::Reduce)?;
    reduction
        .save_models(&a.out.join(MODEL_DIR), &config.train_config())
        .at(Stage::Reduce)?;
    let mut latent = scaled
        .with_values(reduction.latent.values.clone())
        .and_then(|m| m.to_raster(grid.nodata_value.unwrap_or(LATENT_NODATA)))
        .at(Stage::Reduce)?;
    latent.geotransform = grid.geotransform;
    write_raster(&latent, &a.out.join(LATENT_DIR)).at(Stage::Reduce)?;
    println!(
        "{}: {} bands -> {} latent features (PCA would keep {})",
        config.method,
        scaled.n_bands(),
        reduction.latent.width(),
        reduction.pca_components
    );
    Ok(())
}

/// Latent features of a persisted latent raster, with their grid positions.
fn read_latent(
    dir: &Path,
    method: Method,
) -> geoclust::Result<(LatentMatrix, geoclust::preprocess::PixelMatrix)> {
    let grid = read_raster(dir)?;
    let pixels = build_pixel_matrix(&grid)?;
    let latent = LatentMatrix::new(pixels.values.clone(), method.producer())?;
    Ok((latent, pixels))
}

fn elbow_cmd(a: ElbowArgs) -> Result<(), Failure> {
    let mut config = stage_config(a.seed, &TrainFlags::default(), &a.kmeans)?;
    config.k = KPolicy::Auto;
    let (latent, _) = read_latent(&a.input, Method::Pca).at(Stage::Ingest)?;
    let (model, curve) = cluster_latent(&latent, &config).at(Stage::Elbow)?;
    let curve: ElbowCurve = curve.expect("auto k yields a curve");
    let out = if a.out.is_dir() {
        a.out.join(ELBOW_FILE)
    } else {
        a.out
    };
    curve.save(&out).at(Stage::Elbow)?;
    println!("elbow at k = {}", model.k);
    Ok(())
}

fn cluster_cmd(a: ClusterArgs) -> Result<(), Failure> {
    let mut config = stage_config(a.seed, &TrainFlags::default(), &a.kmeans)?;
    config.k = a.k;
    let (latent, pixels) = read_latent(&a.input, Method::Pca).at(Stage::Ingest)?;
    let (model, curve) = cluster_latent(&latent, &config).at(Stage::Cluster)?;
    model.save(&a.out).at(Stage::Cluster)?;
    if let Some(c) = curve {
        c.save(&a.out.join(ELBOW_FILE)).at(Stage::Elbow)?;
    }
    let labels = labels_to_grid(
        &model.labels_u16(),
        &pixels.index_map,
        pixels.grid_rows,
        pixels.grid_cols,
    )
    .at(Stage::Cluster)?;
    write_label_grid(&labels, &a.out.join("labels")).at(Stage::Cluster)?;
    println!("k = {}, inertia = {}", model.k, model.inertia);
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<(), Failure> {
    let mut config = stage_config(a.seed, &TrainFlags::default(), &KMeansFlags::default())?;
    config.ground_truth = a.ground_truth;
    config.truth_grid = a.truth_grid;
    config.silhouette_sample = a.silhouette_sample;
    let (latent, pixels) = read_latent(&a.features, a.method).at(Stage::Ingest)?;
    let raw = read_label_grid(&a.labels).at(Stage::Ingest)?;
    if (raw.rows(), raw.cols()) != (pixels.grid_rows, pixels.grid_cols) {
        return Err(Error::Dimension(format!(
            "labels are {}x{} but features are {}x{}",
            raw.rows(),
            raw.cols(),
            pixels.grid_rows,
            pixels.grid_cols
        )))
        .at(Stage::Evaluate);
    }
    let labels = pixels
        .index_map
        .iter()
        .map(|&(r, c)| match raw.get(r, c) {
            NODATA_LABEL => Err(Error::InvalidInput(format!(
                "no label at feature pixel ({r}, {c})"
            ))),
            l => Ok(l as usize),
        })
        .collect::<geoclust::Result<Vec<_>>>()
        .at(Stage::Evaluate)?;
    let filtered = a
        .filtered
        .as_deref()
        .map(read_label_grid)
        .transpose()
        .at(Stage::Ingest)?;
    let report =
        evaluate(&latent, &labels, &raw, filtered.as_ref(), &config).at(Stage::Evaluate)?;
    match a.out {
        Some(path) => write_json(&path, &report).at(Stage::Evaluate)?,
        None => println!(
            "{}",
            serde_json::to_string_pretty(&report).expect("report serializes")
        ),
    }
    Ok(())
}

fn pipeline_cmd(a: PipelineArgs) -> Result<(), Failure> {
    let mut value = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))
                .at(Stage::Config)?;
            serde_json::from_str::<Value>(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
                .at(Stage::Config)?
        }
        None => json!({}),
    };
    let obj = value
        .as_object_mut()
        .ok_or_else(|| Error::Config("config must be a JSON object".into()))
        .at(Stage::Config)?;
    set(obj, "input", a.input);
    set(obj, "out", a.out);
    set(obj, "crop", a.crop);
    set(obj, "seed", a.seed);
    set(obj, "k", a.k);
    set(obj, "filter", a.filter);
    set(obj, "ground_truth", a.ground_truth);
    set(obj, "truth_grid", a.truth_grid);
    set(obj, "silhouette_sample", a.silhouette_sample);
    a.train.overlay(obj);
    a.kmeans.overlay(obj);
    let config: PipelineConfig = serde_json::from_value(value)
        .map_err(|e| Error::Config(e.to_string()))
        .at(Stage::Config)?;

    let outcome = run_pipeline(&config)?;
    let r = &outcome.report;
    println!(
        "{} k={} CH={} DB={:.4}{}{} -> {}",
        config.method,
        outcome.manifest.chosen_k,
        r.calinski_harabasz,
        r.davies_bouldin,
        r.overall_accuracy
            .map(|v| format!(" OA={v:.4}"))
            .unwrap_or_default(),
        r.adjusted_rand_index
            .map(|v| format!(" ARI={v:.4}"))
            .unwrap_or_default(),
        outcome.out_dir.display()
    );
    Ok(())
}
