use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const CLUSTERS_FILE: &str = "clusters.json";
pub const CENTROIDS_FILE: &str = "centroids.bin";

/// Rows handled per work item. Partial sums are reduced in chunk order, so
/// results do not depend on the number of worker threads.
const CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub restarts: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions {
            max_iter: 300,
            tol: 1e-6,
            restarts: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub k: usize,
    /// `k x m`.
    pub centroids: Array2<f64>,
    pub labels: Vec<usize>,
    /// Within-cluster sum of squared distances.
    pub inertia: f64,
    pub iterations_run: usize,
    pub seed: u64,
    /// Inertia after each assignment step of the winning run; the last entry
    /// equals `inertia`.
    pub inertia_trace: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ClusterMeta {
    k: usize,
    m: usize,
    seed: u64,
    inertia: f64,
    iterations: usize,
}

impl ClusterModel {
    pub fn labels_u16(&self) -> Vec<u16> {
        self.labels.iter().map(|&l| l as u16).collect()
    }

    /// Persist as `clusters.json` plus `centroids.bin` (`k x m` f64 LE).
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = ClusterMeta {
            k: self.k,
            m: self.centroids.ncols(),
            seed: self.seed,
            inertia: self.inertia,
            iterations: self.iterations_run,
        };
        let path = dir.join(CLUSTERS_FILE);
        let text =
            serde_json::to_string_pretty(&meta).map_err(|e| Error::header(&path, e.to_string()))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        let payload: Vec<u8> = self
            .centroids
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        let bin = dir.join(CENTROIDS_FILE);
        fs::write(&bin, payload).map_err(|e| Error::io(&bin, e))
    }
}

/// Centroids stored by [`ClusterModel::save`].
pub fn load_centroids(dir: &Path) -> Result<(Array2<f64>, u64, f64)> {
    let path = dir.join(CLUSTERS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: ClusterMeta =
        serde_json::from_str(&text).map_err(|e| Error::header(&path, e.to_string()))?;
    let bin = dir.join(CENTROIDS_FILE);
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if bytes.len() != meta.k * meta.m * 8 {
        return Err(Error::PayloadSize {
            expected: meta.k * meta.m * 8,
            found: bytes.len(),
        });
    }
    let flat = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let centroids = Array2::from_shape_vec((meta.k, meta.m), flat)
        .map_err(|e| Error::Dimension(e.to_string()))?;
    Ok((centroids, meta.seed, meta.inertia))
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid, ties to the lowest index.
#[inline]
fn nearest(point: &[f64], centroids: &[f64], m: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.chunks_exact(m).enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

struct Assignment {
    labels: Vec<usize>,
    dists: Vec<f64>,
    sums: Vec<f64>,
    counts: Vec<usize>,
    inertia: f64,
}

fn assign(data: &[f64], m: usize, centroids: &[f64], k: usize) -> Assignment {
    let n = data.len() / m;
    let n_chunks = n.div_ceil(CHUNK);
    let partials: Vec<_> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let rows = c * CHUNK..((c + 1) * CHUNK).min(n);
            let mut labels = Vec::with_capacity(rows.len());
            let mut dists = Vec::with_capacity(rows.len());
            let mut sums = vec![0.0; k * m];
            let mut counts = vec![0usize; k];
            let mut inertia = 0.0;
            for i in rows {
                let p = &data[i * m..(i + 1) * m];
                let (j, d) = nearest(p, centroids, m);
                labels.push(j);
                dists.push(d);
                counts[j] += 1;
                for (s, v) in sums[j * m..(j + 1) * m].iter_mut().zip(p) {
                    *s += v;
                }
                inertia += d;
            }
            (labels, dists, sums, counts, inertia)
        })
        .collect();

    let mut out = Assignment {
        labels: Vec::with_capacity(n),
        dists: Vec::with_capacity(n),
        sums: vec![0.0; k * m],
        counts: vec![0; k],
        inertia: 0.0,
    };
    for (labels, dists, sums, counts, inertia) in partials {
        out.labels.extend(labels);
        out.dists.extend(dists);
        for (a, b) in out.sums.iter_mut().zip(sums) {
            *a += b;
        }
        for (a, b) in out.counts.iter_mut().zip(counts) {
            *a += b;
        }
        out.inertia += inertia;
    }
    out
}

/// k-means++ seeding: first centre uniform, then D²-weighted draws.
pub fn kmeans_plus_plus(features: ArrayView2<'_, f64>, k: usize, seed: u64) -> Array2<f64> {
    let data = features.as_standard_layout();
    let data = data.as_slice().expect("standard layout");
    let (n, m) = features.dim();
    let mut rng = seed::rng(seed);
    let mut centroids = Vec::with_capacity(k * m);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(&data[first * m..(first + 1) * m]);

    let mut d2: Vec<f64> = data
        .par_chunks(m)
        .map(|p| sq_dist(p, &centroids[..m]))
        .collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = data[pick * m..(pick + 1) * m].to_vec();
        d2.par_iter_mut()
            .zip(data.par_chunks(m))
            .for_each(|(d, p)| *d = d.min(sq_dist(p, &c)));
        centroids.extend_from_slice(&c);
    }
    Array2::from_shape_vec((k, m), centroids).expect("k x m centroids")
}

/// Lloyd iterations from the given centroids.
pub fn lloyd(
    features: ArrayView2<'_, f64>,
    init: Array2<f64>,
    max_iter: usize,
    tol: f64,
    seed: u64,
) -> Result<ClusterModel> {
    let (n, m) = features.dim();
    let k = init.nrows();
    if init.ncols() != m {
        return Err(Error::Dimension(format!(
            "centroids have width {}, features {m}",
            init.ncols()
        )));
    }
    let data = features.as_standard_layout();
    let data = data.as_slice().expect("standard layout");
    let mut centroids = init
        .as_standard_layout()
        .as_slice()
        .expect("standard layout")
        .to_vec();
    let mut trace = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iter {
        let mut a = assign(data, m, &centroids, k);
        trace.push(a.inertia);
        iterations += 1;

        // Empty clusters take over the point farthest from its centroid.
        for j in 0..k {
            if a.counts[j] > 0 {
                continue;
            }
            let far = a
                .dists
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &d)| {
                    if d > best.1 {
                        (i, d)
                    } else {
                        best
                    }
                })
                .0;
            let old = a.labels[far];
            let p = &data[far * m..(far + 1) * m];
            if a.counts[old] > 1 {
                a.counts[old] -= 1;
                for (s, v) in a.sums[old * m..(old + 1) * m].iter_mut().zip(p) {
                    *s -= v;
                }
            }
            a.counts[j] = 1;
            a.sums[j * m..(j + 1) * m].copy_from_slice(p);
            a.labels[far] = j;
            a.dists[far] = 0.0;
        }

        let mut shift = 0.0f64;
        for j in 0..k {
            let c = &mut centroids[j * m..(j + 1) * m];
            let count = a.counts[j] as f64;
            let mut moved = 0.0;
            for (cv, s) in c.iter_mut().zip(&a.sums[j * m..(j + 1) * m]) {
                let next = s / count;
                moved += (next - *cv) * (next - *cv);
                *cv = next;
            }
            shift = shift.max(moved.sqrt());
        }
        if shift < tol {
            break;
        }
    }

    let a = assign(data, m, &centroids, k);
    trace.push(a.inertia);
    if !a.inertia.is_finite() {
        return Err(Error::Numeric(format!("k-means inertia is {}", a.inertia)));
    }
    debug_assert_eq!(a.labels.len(), n);
    Ok(ClusterModel {
        k,
        centroids: Array2::from_shape_vec((k, m), centroids).expect("k x m centroids"),
        labels: a.labels,
        inertia: a.inertia,
        iterations_run: iterations,
        seed,
        inertia_trace: trace,
    })
}

pub(crate) fn validate(features: ArrayView2<'_, f64>, k: usize) -> Result<()> {
    let (n, m) = features.dim();
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if m == 0 {
        return Err(Error::InvalidInput("features have zero width".into()));
    }
    if k > n {
        return Err(Error::InvalidInput(format!("k = {k} exceeds {n} points")));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("k-means features".into()));
    }
    Ok(())
}

/// Best of `restarts` seeded k-means++/Lloyd runs by inertia; ties go to the
/// earliest restart.
pub fn kmeans_fit(
    features: ArrayView2<'_, f64>,
    k: usize,
    seed: u64,
    options: &KMeansOptions,
) -> Result<ClusterModel> {
    validate(features, k)?;
    if options.restarts == 0 || options.max_iter == 0 {
        return Err(Error::Config(
            "restarts and max_iter must be at least 1".into(),
        ));
    }
    let runs: Vec<Result<ClusterModel>> = (0..options.restarts as u64)
        .into_par_iter()
        .map(|r| {
            let run_seed = seed::derive_indexed(seed, r);
            let init = kmeans_plus_plus(features, k, run_seed);
            lloyd(features, init, options.max_iter, options.tol, seed)
        })
        .collect();
    let mut best: Option<ClusterModel> = None;
    for run in runs {
        let run = run?;
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Sum of squared distances from each point to its labelled centroid.
pub fn inertia(
    features: ArrayView2<'_, f64>,
    centroids: ArrayView2<'_, f64>,
    labels: &[usize],
) -> f64 {
    features
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(p, &l)| {
            p.iter()
                .zip(centroids.row(l))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum()
}

/// Nearest-centroid labels for new features.
pub fn predict(
    features: ArrayView2<'_, f64>,
    centroids: ArrayView2<'_, f64>,
) -> Result<Vec<usize>> {
    let m = centroids.ncols();
    if features.ncols() != m {
        return Err(Error::Dimension(format!(
            "centroids have width {m}, features {}",
            features.ncols()
        )));
    }
    let data = features.as_standard_layout();
    let data = data.as_slice().expect("standard layout");
    let c = centroids.as_standard_layout();
    let c = c.as_slice().expect("standard layout");
    Ok(data.par_chunks(m).map(|p| nearest(p, c, m).0).collect())
}
