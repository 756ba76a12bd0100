//! End-to-end driver: ingest, scale, reduce, choose k, cluster, filter,
//! render and evaluate, persisting every intermediate artifact.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::clustering::{
    elbow_sweep_models, kmeans_fit, kneedle_detect, ClusterModel, ElbowCurve, KMeansOptions,
    CENTROIDS_FILE, CLUSTERS_FILE, ELBOW_FILE,
};
use crate::dimred::{
    canonical_reduce, matched_widths, pca_fit, LatentMatrix, Producer, COMPONENTS_FILE, PCA_FILE,
};
use crate::error::{Error, ErrorClass, Result};
use crate::label_grid::{write_label_grid, LabelGrid, LABELS_FILE};
use crate::metrics::{
    calinski_harabasz, davies_bouldin, grid_adjusted_rand_index, overall_accuracy,
    silhouette_subsample, EvaluationReport, GroundTruthSet,
};
use crate::neuralnet::{save_model, TrainConfig, MODEL_FILE, WEIGHTS_FILE};
use crate::postprocess::{majority_filter, palette_for, write_map, DEFAULT_KERNEL};
use crate::preprocess::{
    build_pixel_matrix, labels_to_grid, minmax_scale, PixelMatrix, ScalingParams,
};
use crate::raster::{
    crop, read_raster, stack_bands, write_raster, RasterGrid, BANDS_FILE, HEADER_FILE,
};
use crate::seed::derive_seed;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_FILE: &str = "report.json";
pub const SCALING_FILE: &str = "scaling.json";
pub const PARTIAL_MARKER: &str = ".partial";
pub const LATENT_DIR: &str = "latent";
pub const MODEL_DIR: &str = "model";
pub const LABELS_RAW_DIR: &str = "labels_raw";
pub const LABELS_FILTERED_DIR: &str = "labels_filtered";
pub const MAP_RAW_FILE: &str = "map_raw.png";
pub const MAP_FILTERED_FILE: &str = "map_filtered.png";

/// Written into the latent raster for pixels that were nodata in the input.
pub const LATENT_NODATA: f64 = -9999.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pca,
    Ae,
    Sae,
}

impl Method {
    pub fn producer(self) -> Producer {
        match self {
            Method::Pca => Producer::Pca,
            Method::Ae => Producer::CanonicalAe,
            Method::Sae => Producer::StackedAe,
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pca" => Ok(Method::Pca),
            "ae" => Ok(Method::Ae),
            "sae" => Ok(Method::Sae),
            _ => Err(Error::Config(format!(
                "unknown method {s:?}; expected pca, ae or sae"
            ))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Pca => "pca",
            Method::Ae => "ae",
            Method::Sae => "sae",
        })
    }
}

/// `"auto"` or a fixed cluster count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KPolicy {
    Auto,
    Fixed(usize),
}

/// `"off"` or an odd majority-filter kernel size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterPolicy {
    Off,
    Kernel(usize),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum WordOrCount {
    Count(usize),
    Word(String),
}

impl FromStr for KPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "auto" => Ok(KPolicy::Auto),
            n => n
                .parse()
                .map(KPolicy::Fixed)
                .map_err(|_| Error::Config(format!("k must be \"auto\" or a count, got {s:?}"))),
        }
    }
}

impl FromStr for FilterPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "off" => Ok(FilterPolicy::Off),
            n => n.parse().map(FilterPolicy::Kernel).map_err(|_| {
                Error::Config(format!(
                    "filter must be \"off\" or a kernel size, got {s:?}"
                ))
            }),
        }
    }
}

impl fmt::Display for KPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KPolicy::Auto => f.write_str("auto"),
            KPolicy::Fixed(k) => write!(f, "{k}"),
        }
    }
}

impl fmt::Display for FilterPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FilterPolicy::Off => f.write_str("off"),
            FilterPolicy::Kernel(k) => write!(f, "{k}"),
        }
    }
}

macro_rules! word_or_count_serde {
    ($ty:ident, $word:ident, $count:ident) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                match self {
                    $ty::$word => s.serialize_str(&self.to_string()),
                    $ty::$count(n) => s.serialize_u64(*n as u64),
                }
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                match WordOrCount::deserialize(d)? {
                    WordOrCount::Count(n) => Ok($ty::$count(n)),
                    WordOrCount::Word(w) => w.parse().map_err(serde::de::Error::custom),
                }
            }
        }
    };
}

word_or_count_serde!(KPolicy, Auto, Fixed);
word_or_count_serde!(FilterPolicy, Off, Kernel);

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<PathBuf>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(PathBuf),
        Many(Vec<PathBuf>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(p) => vec![p],
        OneOrMany::Many(v) => v,
    })
}

/// Full run configuration, read from a JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// One raster directory, or several to be resampled and stacked.
    #[serde(deserialize_with = "one_or_many")]
    pub input: Vec<PathBuf>,
    pub out: PathBuf,
    /// `[row0, col0, rows, cols]` applied after stacking.
    pub crop: Option<[usize; 4]>,
    pub method: Method,
    pub variance_target: f64,
    /// Canonical autoencoder width; defaults to the PCA component count.
    pub latent_dim: Option<usize>,
    /// Stacked autoencoder widths; default `(ceil((n + m) / 2), m)`.
    pub hidden_dims: Option<[usize; 2]>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub k: KPolicy,
    pub k_min: usize,
    pub k_max: usize,
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub filter: FilterPolicy,
    /// Points CSV with header `row,col,class_id`.
    pub ground_truth: Option<PathBuf>,
    /// Full truth label grid, scored by ARI.
    pub truth_grid: Option<PathBuf>,
    /// Silhouette subsample size; 0 skips it.
    pub silhouette_sample: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let km = KMeansOptions::default();
        PipelineConfig {
            input: Vec::new(),
            out: PathBuf::new(),
            crop: None,
            method: Method::Pca,
            variance_target: 0.9,
            latent_dim: None,
            hidden_dims: None,
            epochs: train.epochs,
            batch_size: train.batch_size,
            learning_rate: train.learning_rate,
            seed: 0,
            k: KPolicy::Auto,
            k_min: 2,
            k_max: 12,
            restarts: km.restarts,
            max_iter: km.max_iter,
            tol: km.tol,
            filter: FilterPolicy::Kernel(DEFAULT_KERNEL),
            ground_truth: None,
            truth_grid: None,
            silhouette_sample: 5000,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PipelineConfig::from_json(&text)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: derive_seed(self.seed, "reduce"),
        }
    }

    pub fn kmeans_options(&self) -> KMeansOptions {
        KMeansOptions {
            max_iter: self.max_iter,
            tol: self.tol,
            restarts: self.restarts,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input.is_empty() {
            return bad("no input raster given".into());
        }
        if self.out.as_os_str().is_empty() {
            return bad("no output directory given".into());
        }
        let out = absolute(&self.out);
        let mut inputs = self.input.iter().map(|p| absolute(p)).collect::<Vec<_>>();
        inputs.extend(self.ground_truth.iter().map(|p| absolute(p)));
        inputs.extend(self.truth_grid.iter().map(|p| absolute(p)));
        if inputs.iter().any(|p| *p == out || p.starts_with(&out)) {
            return bad("output directory must be distinct from every input".into());
        }
        if !(self.variance_target > 0.0 && self.variance_target <= 1.0) {
            return bad(format!(
                "variance_target must lie in (0, 1], got {}",
                self.variance_target
            ));
        }
        if self.latent_dim == Some(0) {
            return bad("latent_dim must be at least 1".into());
        }
        if let Some([h1, h2]) = self.hidden_dims {
            if !(h1 >= h2 && h2 >= 1) {
                return bad(format!(
                    "hidden_dims must satisfy h1 >= h2 >= 1, got [{h1}, {h2}]"
                ));
            }
        }
        if matches!(self.method, Method::Ae | Method::Sae) {
            self.train_config().validate()?;
        }
        match self.k {
            KPolicy::Fixed(k) if !(2..=255).contains(&k) => {
                return bad(format!("k must lie in 2..=255, got {k}"));
            }
            KPolicy::Auto if self.k_min < 2 || self.k_max < self.k_min + 2 || self.k_max > 255 => {
                return bad(format!(
                    "auto k needs 2 <= k_min and k_min + 2 <= k_max <= 255, got {}..={}",
                    self.k_min, self.k_max
                ));
            }
            _ => {}
        }
        if self.restarts == 0 || self.max_iter == 0 {
            return bad("restarts and max_iter must be at least 1".into());
        }
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            return bad(format!("tol must be finite and >= 0, got {}", self.tol));
        }
        if let FilterPolicy::Kernel(k) = self.filter {
            if k < 3 || k % 2 == 0 {
                return bad(format!("filter kernel must be odd and >= 3, got {k}"));
            }
        }
        Ok(())
    }

    /// Derived per-stage seeds, keyed by stage name.
    pub fn stage_seeds(&self) -> BTreeMap<String, u64> {
        ["reduce", "elbow", "kmeans", "silhouette"]
            .into_iter()
            .map(|s| (s.to_string(), derive_seed(self.seed, s)))
            .collect()
    }
}

fn absolute(p: &Path) -> PathBuf {
    fs::canonicalize(p).unwrap_or_else(|_| {
        std::env::current_dir()
            .map(|d| d.join(p))
            .unwrap_or_else(|_| p.to_path_buf())
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Ingest,
    Scale,
    Reduce,
    Elbow,
    Cluster,
    Filter,
    Render,
    Evaluate,
    Manifest,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Scale => "scale",
            Stage::Reduce => "reduce",
            Stage::Elbow => "elbow",
            Stage::Cluster => "cluster",
            Stage::Filter => "filter",
            Stage::Render => "render",
            Stage::Evaluate => "evaluate",
            Stage::Manifest => "manifest",
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("[{stage}] {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

impl PipelineError {
    pub fn class(&self) -> ErrorClass {
        self.source.class()
    }

    pub fn exit_code(&self) -> i32 {
        self.class().exit_code()
    }
}

trait StageExt<T> {
    fn stage(self, stage: Stage) -> std::result::Result<T, PipelineError>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: Stage) -> std::result::Result<T, PipelineError> {
        self.map_err(|source| PipelineError { stage, source })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingArtifact {
    pub n_pixels: usize,
    pub n_bands: usize,
    pub nodata_pixels: usize,
    pub band_names: Option<Vec<String>>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

/// Contents of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config: PipelineConfig,
    pub seeds: BTreeMap<String, u64>,
    pub rows: usize,
    pub cols: usize,
    pub n_pixels: usize,
    pub n_bands: usize,
    pub pca_components: usize,
    pub latent_width: usize,
    /// Training epochs, for autoencoder runs.
    pub epochs: Option<usize>,
    pub k_selection: KPolicy,
    pub chosen_k: usize,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::header(&path, e.to_string()))
    }
}

/// In-memory results of a successful run.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    pub report: EvaluationReport,
    pub latent: LatentMatrix,
    pub elbow: Option<ElbowCurve>,
    pub clusters: ClusterModel,
    pub raw_labels: LabelGrid,
    pub filtered_labels: Option<LabelGrid>,
}

impl PipelineOutcome {
    /// The delivered map: filtered when filtering is on.
    pub fn final_labels(&self) -> &LabelGrid {
        self.filtered_labels.as_ref().unwrap_or(&self.raw_labels)
    }
}

/// Read, stack and crop the configured inputs.
pub fn ingest(inputs: &[PathBuf], window: Option<[usize; 4]>) -> Result<RasterGrid> {
    let grids = inputs
        .iter()
        .map(|p| read_raster(p))
        .collect::<Result<Vec<_>>>()?;
    let mut grid = if grids.len() == 1 {
        grids.into_iter().next().expect("one grid")
    } else {
        stack_bands(&grids)?
    };
    if let Some([r0, c0, rows, cols]) = window {
        grid = crop(&grid, r0, c0, rows, cols)?;
    }
    Ok(grid)
}

/// Output of the reduction stage, with whatever models produced it.
#[derive(Debug, Clone)]
pub struct Reduction {
    pub latent: LatentMatrix,
    /// Component count that reaches the variance target; always computed,
    /// since it sets the default autoencoder widths.
    pub pca_components: usize,
    pub models: ReductionModels,
}

#[derive(Debug, Clone)]
pub enum ReductionModels {
    Pca(crate::dimred::PcaModel),
    Canonical(crate::dimred::CanonicalReduction),
    Stacked(Box<crate::dimred::StackedReduction>),
}

/// Reduce scaled pixels with the configured method.
pub fn reduce(scaled: &PixelMatrix, config: &PipelineConfig) -> Result<Reduction> {
    let data = scaled.view();
    let pca = pca_fit(data, config.variance_target)?;
    let m = pca.n_components();
    let (ae_width, sae_widths) = matched_widths(scaled.n_bands(), m);
    let train = config.train_config();
    let (latent, models) = match config.method {
        Method::Pca => (pca.transform(data)?, ReductionModels::Pca(pca)),
        Method::Ae => {
            let r = canonical_reduce(data, config.latent_dim.unwrap_or(ae_width), &train)?;
            (r.latent.clone(), ReductionModels::Canonical(r))
        }
        Method::Sae => {
            let widths = config
                .hidden_dims
                .map(|[a, b]| (a, b))
                .unwrap_or(sae_widths);
            let r = crate::dimred::stacked_reduce(data, widths, &train)?;
            (r.latent.clone(), ReductionModels::Stacked(Box::new(r)))
        }
    };
    Ok(Reduction {
        latent,
        pca_components: m,
        models,
    })
}

impl Reduction {
    /// Save the fitted models under `dir`, returning the files written
    /// relative to `dir`.
    pub fn save_models(&self, dir: &Path, train: &TrainConfig) -> Result<Vec<String>> {
        match &self.models {
            ReductionModels::Pca(p) => {
                p.save(dir)?;
                Ok(vec![PCA_FILE.into(), COMPONENTS_FILE.into()])
            }
            ReductionModels::Canonical(r) => {
                save_model(&r.network, Some(train), &r.losses, dir)?;
                Ok(vec![MODEL_FILE.into(), WEIGHTS_FILE.into()])
            }
            ReductionModels::Stacked(r) => {
                save_model(&r.first, Some(train), &r.first_losses, &dir.join("stage1"))?;
                save_model(
                    &r.second,
                    Some(train),
                    &r.second_losses,
                    &dir.join("stage2"),
                )?;
                write_json(&dir.join("hidden_scaling.json"), &r.hidden_scaling)?;
                Ok(vec![
                    format!("stage1/{MODEL_FILE}"),
                    format!("stage1/{WEIGHTS_FILE}"),
                    format!("stage2/{MODEL_FILE}"),
                    format!("stage2/{WEIGHTS_FILE}"),
                    "hidden_scaling.json".into(),
                ])
            }
        }
    }
}

/// Choose k (by elbow when automatic) and fit k-means on the latent features.
pub fn cluster_latent(
    latent: &LatentMatrix,
    config: &PipelineConfig,
) -> Result<(ClusterModel, Option<ElbowCurve>)> {
    let options = config.kmeans_options();
    match config.k {
        KPolicy::Fixed(k) => Ok((
            kmeans_fit(
                latent.view(),
                k,
                derive_seed(config.seed, "kmeans"),
                &options,
            )?,
            None,
        )),
        KPolicy::Auto => {
            let (curve, models) = elbow_sweep_models(
                latent.view(),
                config.k_min,
                config.k_max,
                derive_seed(config.seed, "elbow"),
                &options,
            )?;
            let k = kneedle_detect(&curve)?;
            let model = models
                .into_iter()
                .nth(k - config.k_min)
                .expect("k in sweep range");
            Ok((model, Some(curve)))
        }
    }
}

/// Validity indices on the latent features plus optional ground-truth scores.
///
/// `labels[i]` is the cluster of latent row `i`; `raw` and `filtered` are the
/// corresponding maps.
pub fn evaluate(
    latent: &LatentMatrix,
    labels: &[usize],
    raw: &LabelGrid,
    filtered: Option<&LabelGrid>,
    config: &PipelineConfig,
) -> Result<EvaluationReport> {
    let features = latent.view();
    let silhouette = if config.silhouette_sample > 0 {
        Some(silhouette_subsample(
            features,
            labels,
            config.silhouette_sample,
            derive_seed(config.seed, "silhouette"),
        )?)
    } else {
        None
    };
    let delivered = filtered.unwrap_or(raw);
    let mut report = EvaluationReport {
        producer: latent.producer,
        k: raw.label_count(),
        calinski_harabasz: calinski_harabasz(features, labels)?,
        davies_bouldin: davies_bouldin(features, labels)?,
        silhouette,
        overall_accuracy: None,
        overall_accuracy_unfiltered: None,
        cluster_to_class: None,
        truth_points_used: None,
        truth_points_excluded: None,
        adjusted_rand_index: None,
        adjusted_rand_index_unfiltered: None,
        filtered: filtered.is_some(),
    };
    if let Some(path) = &config.ground_truth {
        let truth = GroundTruthSet::load(path)?;
        let acc = overall_accuracy(delivered, &truth)?;
        report.overall_accuracy = Some(acc.accuracy);
        report.cluster_to_class = Some(acc.cluster_to_class);
        report.truth_points_used = Some(acc.points_used);
        report.truth_points_excluded = Some(acc.points_excluded);
        if filtered.is_some() {
            report.overall_accuracy_unfiltered = Some(overall_accuracy(raw, &truth)?.accuracy);
        }
    }
    if let Some(path) = &config.truth_grid {
        let truth = crate::label_grid::read_label_grid(path)?;
        report.adjusted_rand_index = Some(grid_adjusted_rand_index(delivered, &truth)?);
        if filtered.is_some() {
            report.adjusted_rand_index_unfiltered = Some(grid_adjusted_rand_index(raw, &truth)?);
        }
    }
    Ok(report)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| Error::header(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Execute every stage and persist artifacts into `config.out`.
///
/// A `.partial` marker sits in the output directory while the run is in
/// progress; on failure it is kept, holding the stage-tagged error.
pub fn run_pipeline(
    config: &PipelineConfig,
) -> std::result::Result<PipelineOutcome, PipelineError> {
    config.validate().stage(Stage::Config)?;
    let out = config.out.clone();
    fs::create_dir_all(&out)
        .map_err(|e| Error::io(&out, e))
        .stage(Stage::Config)?;
    let marker = out.join(PARTIAL_MARKER);
    fs::write(&marker, "running\n")
        .map_err(|e| Error::io(&marker, e))
        .stage(Stage::Config)?;

    match run_stages(config, &out) {
        Ok(outcome) => {
            fs::remove_file(&marker)
                .map_err(|e| Error::io(&marker, e))
                .stage(Stage::Manifest)?;
            Ok(outcome)
        }
        Err(err) => {
            // Best effort: the original error matters more than the marker.
            let _ = fs::write(&marker, format!("{err}\n"));
            Err(err)
        }
    }
}

fn run_stages(
    config: &PipelineConfig,
    out: &Path,
) -> std::result::Result<PipelineOutcome, PipelineError> {
    let mut artifacts: Vec<String> = Vec::new();

    let grid = ingest(&config.input, config.crop).stage(Stage::Ingest)?;
    let nodata = grid.nodata_value.unwrap_or(LATENT_NODATA);

    let pixels = build_pixel_matrix(&grid).stage(Stage::Scale)?;
    let (scaled, params): (PixelMatrix, ScalingParams) =
        minmax_scale(&pixels).stage(Stage::Scale)?;
    write_json(
        &out.join(SCALING_FILE),
        &ScalingArtifact {
            n_pixels: scaled.n_pixels(),
            n_bands: scaled.n_bands(),
            nodata_pixels: grid.rows() * grid.cols() - scaled.n_pixels(),
            band_names: grid.band_names.clone(),
            min: params.min.clone(),
            max: params.max.clone(),
        },
    )
    .stage(Stage::Scale)?;
    artifacts.push(SCALING_FILE.into());

    let reduction = reduce(&scaled, config).stage(Stage::Reduce)?;
    let train = config.train_config();
    let model_dir = out.join(MODEL_DIR);
    for f in reduction
        .save_models(&model_dir, &train)
        .stage(Stage::Reduce)?
    {
        artifacts.push(format!("{MODEL_DIR}/{f}"));
    }
    let mut latent_raster = scaled
        .with_values(reduction.latent.values.clone())
        .and_then(|m| m.to_raster(nodata))
        .stage(Stage::Reduce)?;
    latent_raster.geotransform = grid.geotransform;
    write_raster(&latent_raster, &out.join(LATENT_DIR)).stage(Stage::Reduce)?;
    artifacts.push(format!("{LATENT_DIR}/{HEADER_FILE}"));
    artifacts.push(format!("{LATENT_DIR}/{BANDS_FILE}"));

    let (clusters, elbow) =
        cluster_latent(&reduction.latent, config).stage(if config.k == KPolicy::Auto {
            Stage::Elbow
        } else {
            Stage::Cluster
        })?;
    if let Some(curve) = &elbow {
        curve.save(&out.join(ELBOW_FILE)).stage(Stage::Elbow)?;
        artifacts.push(ELBOW_FILE.into());
    }
    clusters.save(out).stage(Stage::Cluster)?;
    artifacts.push(CLUSTERS_FILE.into());
    artifacts.push(CENTROIDS_FILE.into());

    let mut raw = labels_to_grid(
        &clusters.labels_u16(),
        &scaled.index_map,
        scaled.grid_rows,
        scaled.grid_cols,
    )
    .stage(Stage::Cluster)?;
    raw.geotransform = grid.geotransform;
    write_label_grid(&raw, &out.join(LABELS_RAW_DIR)).stage(Stage::Cluster)?;
    artifacts.push(format!("{LABELS_RAW_DIR}/{HEADER_FILE}"));
    artifacts.push(format!("{LABELS_RAW_DIR}/{LABELS_FILE}"));

    let filtered = match config.filter {
        FilterPolicy::Off => None,
        FilterPolicy::Kernel(kernel) => {
            let f = majority_filter(&raw, kernel).stage(Stage::Filter)?;
            write_label_grid(&f, &out.join(LABELS_FILTERED_DIR)).stage(Stage::Filter)?;
            artifacts.push(format!("{LABELS_FILTERED_DIR}/{HEADER_FILE}"));
            artifacts.push(format!("{LABELS_FILTERED_DIR}/{LABELS_FILE}"));
            Some(f)
        }
    };

    let palette = palette_for(clusters.k);
    write_map(&raw, Some(&palette), &out.join(MAP_RAW_FILE)).stage(Stage::Render)?;
    artifacts.push(MAP_RAW_FILE.into());
    if let Some(f) = &filtered {
        write_map(f, Some(&palette), &out.join(MAP_FILTERED_FILE)).stage(Stage::Render)?;
        artifacts.push(MAP_FILTERED_FILE.into());
    }

    let report = evaluate(
        &reduction.latent,
        &clusters.labels,
        &raw,
        filtered.as_ref(),
        config,
    )
    .stage(Stage::Evaluate)?;
    write_json(&out.join(REPORT_FILE), &report).stage(Stage::Evaluate)?;
    artifacts.push(REPORT_FILE.into());

    artifacts.push(MANIFEST_FILE.into());
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: config.clone(),
        seeds: config.stage_seeds(),
        rows: grid.rows(),
        cols: grid.cols(),
        n_pixels: scaled.n_pixels(),
        n_bands: scaled.n_bands(),
        pca_components: reduction.pca_components,
        latent_width: reduction.latent.width(),
        epochs: (config.method != Method::Pca).then_some(config.epochs),
        k_selection: config.k,
        chosen_k: clusters.k,
        artifacts,
    };
    write_json(&out.join(MANIFEST_FILE), &manifest).stage(Stage::Manifest)?;

    Ok(PipelineOutcome {
        out_dir: out.to_path_buf(),
        manifest,
        report,
        latent: reduction.latent,
        elbow,
        clusters,
        raw_labels: raw,
        filtered_labels: filtered,
    })
}
