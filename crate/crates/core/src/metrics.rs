//! Cluster-validity indices (Calinski-Harabasz, Davies-Bouldin, silhouette),
//! partition agreement (adjusted Rand index), and overall accuracy against
//! ground-truth sample points.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::dimred::Producer;
use crate::error::{Error, Result};
use crate::label_grid::{LabelGrid, NODATA_LABEL};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthPoint {
    pub row: usize,
    pub col: usize,
    pub class_id: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruthSet {
    pub points: Vec<TruthPoint>,
    pub class_names: Option<Vec<String>>,
}

impl GroundTruthSet {
    pub fn new(points: Vec<TruthPoint>) -> Result<Self> {
        let mut seen: Vec<usize> = points.iter().map(|p| p.class_id).collect();
        seen.sort_unstable();
        seen.dedup();
        if seen.iter().enumerate().any(|(i, &c)| i != c) {
            return Err(Error::InvalidInput(format!(
                "ground-truth class ids must be contiguous from 0, found {seen:?}"
            )));
        }
        Ok(GroundTruthSet {
            points,
            class_names: None,
        })
    }

    /// Parse a `row,col,class_id` CSV.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header: Vec<String> = lines
            .next()
            .unwrap_or_default()
            .split(',')
            .map(|s| s.trim().to_string())
            .collect();
        if header != ["row", "col", "class_id"] {
            return Err(Error::InvalidInput(
                "ground-truth csv must start with header row,col,class_id".into(),
            ));
        }
        let mut points = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || Error::InvalidInput(format!("ground-truth line {}: {line:?}", i + 2));
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(bad());
            }
            let parse = |s: &str| s.parse::<usize>().map_err(|_| bad());
            points.push(TruthPoint {
                row: parse(fields[0])?,
                col: parse(fields[1])?,
                class_id: parse(fields[2])?,
            });
        }
        GroundTruthSet::new(points)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,col,class_id\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.row, p.col, p.class_id));
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn cluster_count(labels: &[usize], n: usize) -> Result<usize> {
    if labels.len() != n {
        return Err(Error::Dimension(format!(
            "{} labels for {n} points",
            labels.len()
        )));
    }
    let k = labels.iter().max().map_or(0, |&m| m + 1);
    if k < 2 {
        return Err(Error::InvalidInput(
            "validity indices need at least 2 clusters".into(),
        ));
    }
    Ok(k)
}

/// Cluster means and sizes; errors on empty clusters.
fn centroids(
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    k: usize,
) -> Result<(Array2<f64>, Vec<usize>)> {
    let m = features.ncols();
    let mut sums = Array2::<f64>::zeros((k, m));
    let mut counts = vec![0usize; k];
    for (row, &l) in features.rows().into_iter().zip(labels) {
        counts[l] += 1;
        let mut s = sums.row_mut(l);
        s += &row;
    }
    if let Some(j) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidInput(format!("cluster {j} is empty")));
    }
    for (j, mut row) in sums.rows_mut().into_iter().enumerate() {
        row /= counts[j] as f64;
    }
    Ok((sums, counts))
}

fn sq(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Between-cluster over within-cluster dispersion, each divided by its
/// degrees of freedom. Zero within-cluster scatter yields `+inf`.
pub fn calinski_harabasz(features: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    let n = features.nrows();
    let k = cluster_count(labels, n)?;
    if n <= k {
        return Err(Error::InvalidInput(format!(
            "Calinski-Harabasz needs more points than clusters ({n} <= {k})"
        )));
    }
    let (c, counts) = centroids(features, labels, k)?;
    let grand = features.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let between: f64 = c
        .rows()
        .into_iter()
        .zip(&counts)
        .map(|(row, &nj)| nj as f64 * sq(row, grand.view()))
        .sum();
    let within: f64 = features
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &l)| sq(row, c.row(l)))
        .sum();
    if within == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((between / (k - 1) as f64) / (within / (n - k) as f64))
}

/// Mean over clusters of the worst `(s_i + s_j) / d_ij` ratio.
pub fn davies_bouldin(features: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    let n = features.nrows();
    let k = cluster_count(labels, n)?;
    let (c, counts) = centroids(features, labels, k)?;
    let mut scatter = vec![0.0; k];
    for (row, &l) in features.rows().into_iter().zip(labels) {
        scatter[l] += sq(row, c.row(l)).sqrt();
    }
    for (s, &cnt) in scatter.iter_mut().zip(&counts) {
        *s /= cnt as f64;
    }
    let mut total = 0.0;
    for i in 0..k {
        let mut worst = f64::NEG_INFINITY;
        for j in (0..k).filter(|&j| j != i) {
            let d = sq(c.row(i), c.row(j)).sqrt();
            if d == 0.0 {
                return Err(Error::InvalidInput(format!(
                    "clusters {i} and {j} have coincident centroids"
                )));
            }
            worst = worst.max((scatter[i] + scatter[j]) / d);
        }
        total += worst;
    }
    Ok(total / k as f64)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Mean silhouette over `rows` of `data`. A point alone in its cluster, or
/// with `max(a, b) = 0`, scores 0.
fn silhouette_of(data: &[f64], m: usize, labels: &[usize], rows: &[usize], k: usize) -> f64 {
    let mut sizes = vec![0usize; k];
    for &r in rows {
        sizes[labels[r]] += 1;
    }
    let scores: Vec<f64> = rows
        .par_iter()
        .map(|&i| {
            let li = labels[i];
            if sizes[li] <= 1 {
                return 0.0;
            }
            let pi = &data[i * m..(i + 1) * m];
            let mut sums = vec![0.0; k];
            for &j in rows {
                if j != i {
                    sums[labels[j]] += euclid(pi, &data[j * m..(j + 1) * m]);
                }
            }
            let a = sums[li] / (sizes[li] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != li && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if !b.is_finite() || denom == 0.0 {
                0.0
            } else {
                (b - a) / denom
            }
        })
        .collect();
    scores.iter().sum::<f64>() / rows.len() as f64
}

/// Mean silhouette over a seeded uniform sample without replacement, or
/// over every point when `n <= sample_size`.
pub fn silhouette_subsample(
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    sample_size: usize,
    seed: u64,
) -> Result<f64> {
    let n = features.nrows();
    let k = cluster_count(labels, n)?;
    if sample_size < k + 1 {
        return Err(Error::InvalidInput(format!(
            "silhouette sample of {sample_size} is too small for {k} clusters"
        )));
    }
    let m = features.ncols();
    let data = features.as_standard_layout();
    let data = data.as_slice().expect("standard layout");
    let rows: Vec<usize> = if n <= sample_size {
        (0..n).collect()
    } else {
        let mut rng = seed::rng(seed);
        let mut idx = rand::seq::index::sample(&mut rng, n, sample_size).into_vec();
        idx.sort_unstable();
        idx
    };
    Ok(silhouette_of(data, m, labels, &rows, k))
}

fn choose2(x: u64) -> f64 {
    (x as f64) * (x.saturating_sub(1) as f64) / 2.0
}

/// Adjusted Rand index between two labelings of the same points.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "partitions of {} and {} points",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as u64;
    let mut table: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, u64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, u64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&v| choose2(v)).sum();
    let sum_a: f64 = rows.values().map(|&v| choose2(v)).sum();
    let sum_b: f64 = cols.values().map(|&v| choose2(v)).sum();
    let total = choose2(n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyResult {
    pub accuracy: f64,
    /// Plurality truth class of every cluster that covers a truth point.
    pub cluster_to_class: BTreeMap<u16, usize>,
    pub points_used: usize,
    pub points_excluded: usize,
}

/// Fraction of truth points whose cluster's plurality class is their own
/// class. Points on nodata cells are excluded. Plurality ties go to the
/// lowest class id.
pub fn overall_accuracy(grid: &LabelGrid, truth: &GroundTruthSet) -> Result<AccuracyResult> {
    let mut votes: BTreeMap<u16, BTreeMap<usize, usize>> = BTreeMap::new();
    let mut usable = Vec::new();
    let mut excluded = 0;
    for p in &truth.points {
        if p.row >= grid.rows() || p.col >= grid.cols() {
            return Err(Error::InvalidInput(format!(
                "truth point ({}, {}) outside a {}x{} map",
                p.row,
                p.col,
                grid.rows(),
                grid.cols()
            )));
        }
        let label = grid.get(p.row, p.col);
        if label == NODATA_LABEL {
            excluded += 1;
            continue;
        }
        *votes
            .entry(label)
            .or_default()
            .entry(p.class_id)
            .or_default() += 1;
        usable.push((label, p.class_id));
    }
    if usable.is_empty() {
        return Err(Error::InvalidInput(
            "no ground-truth point lands on a labelled pixel".into(),
        ));
    }
    let cluster_to_class: BTreeMap<u16, usize> = votes
        .into_iter()
        .map(|(cluster, counts)| {
            let class = counts
                .iter()
                .fold(
                    (usize::MAX, 0),
                    |best, (&c, &v)| if v > best.1 { (c, v) } else { best },
                )
                .0;
            (cluster, class)
        })
        .collect();
    let correct = usable
        .iter()
        .filter(|(l, c)| cluster_to_class[l] == *c)
        .count();
    Ok(AccuracyResult {
        accuracy: correct as f64 / usable.len() as f64,
        cluster_to_class,
        points_used: usable.len(),
        points_excluded: excluded,
    })
}

fn finite_or_tag<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("nan")
    }
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub producer: Producer,
    pub k: usize,
    #[serde(serialize_with = "finite_or_tag")]
    pub calinski_harabasz: f64,
    pub davies_bouldin: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub silhouette: Option<f64>,
    /// Accuracy on the map that was delivered (filtered when filtering is on).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overall_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overall_accuracy_unfiltered: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cluster_to_class: Option<BTreeMap<u16, usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth_points_used: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth_points_excluded: Option<usize>,
    /// Agreement with a full truth map, when one is supplied.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adjusted_rand_index: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adjusted_rand_index_unfiltered: Option<f64>,
    pub filtered: bool,
}

/// ARI between two label grids over cells labelled in both.
pub fn grid_adjusted_rand_index(a: &LabelGrid, b: &LabelGrid) -> Result<f64> {
    if (a.rows(), a.cols()) != (b.rows(), b.cols()) {
        return Err(Error::Dimension(format!(
            "label grids {}x{} and {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let (x, y): (Vec<usize>, Vec<usize>) = a
        .labels()
        .iter()
        .zip(b.labels())
        .filter(|(&p, &q)| p != NODATA_LABEL && q != NODATA_LABEL)
        .map(|(&p, &q)| (p as usize, q as usize))
        .unzip();
    adjusted_rand_index(&x, &y)
}
