//! Deliberately naive reference implementations. Nothing here shares code
//! with the `geoclust` library; points are plain `Vec<f64>` rows.

use nalgebra::DMatrix;

pub type Points = [Vec<f64>];

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn mean_of(points: &[&Vec<f64>]) -> Vec<f64> {
    let m = points[0].len();
    let mut out = vec![0.0; m];
    for p in points {
        for j in 0..m {
            out[j] += p[j];
        }
    }
    out.iter().map(|v| v / points.len() as f64).collect()
}

fn groups<'a>(points: &'a Points, labels: &[usize]) -> Vec<Vec<&'a Vec<f64>>> {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut g = vec![Vec::new(); k];
    for (p, &l) in points.iter().zip(labels) {
        g[l].push(p);
    }
    g.retain(|c| !c.is_empty());
    g
}

/// Between- over within-cluster dispersion, each divided by its degrees of
/// freedom, from the definition.
pub fn calinski_harabasz(points: &Points, labels: &[usize]) -> f64 {
    let n = points.len() as f64;
    let all: Vec<&Vec<f64>> = points.iter().collect();
    let grand = mean_of(&all);
    let g = groups(points, labels);
    let k = g.len() as f64;
    let mut between = 0.0;
    let mut within = 0.0;
    for c in &g {
        let cm = mean_of(c);
        between += c.len() as f64 * sq_dist(&cm, &grand);
        within += c.iter().map(|p| sq_dist(p, &cm)).sum::<f64>();
    }
    (between / (k - 1.0)) / (within / (n - k))
}

/// Mean over clusters of the worst `(s_i + s_j) / d(c_i, c_j)`, where `s` is
/// the mean Euclidean distance to the centroid.
pub fn davies_bouldin(points: &Points, labels: &[usize]) -> f64 {
    let g = groups(points, labels);
    let cents: Vec<Vec<f64>> = g.iter().map(|c| mean_of(c)).collect();
    let scatter: Vec<f64> = g
        .iter()
        .zip(&cents)
        .map(|(c, m)| c.iter().map(|p| sq_dist(p, m).sqrt()).sum::<f64>() / c.len() as f64)
        .collect();
    let mut total = 0.0;
    for i in 0..g.len() {
        let mut worst = f64::NEG_INFINITY;
        for j in 0..g.len() {
            if i != j {
                let r = (scatter[i] + scatter[j]) / sq_dist(&cents[i], &cents[j]).sqrt();
                worst = worst.max(r);
            }
        }
        total += worst;
    }
    total / g.len() as f64
}

/// Adjusted Rand index by explicit pair counting, O(n^2).
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (mut both, mut only_a, mut only_b, mut pairs) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let sa = a[i] == a[j];
            let sb = b[i] == b[j];
            pairs += 1.0;
            if sa && sb {
                both += 1.0;
            }
            if sa {
                only_a += 1.0;
            }
            if sb {
                only_b += 1.0;
            }
        }
    }
    let expected = only_a * only_b / pairs;
    let max = 0.5 * (only_a + only_b);
    if max == expected {
        return 1.0;
    }
    (both - expected) / (max - expected)
}

/// Lowest WCSS over every assignment of `points` to at most `k` clusters.
/// Exponential: keep `points.len()` small.
pub fn optimal_wcss(points: &Points, k: usize) -> f64 {
    let n = points.len();
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        let mut wcss = 0.0;
        for c in 0..k {
            let members: Vec<&Vec<f64>> = points
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == c)
                .map(|(p, _)| p)
                .collect();
            if !members.is_empty() {
                let m = mean_of(&members);
                wcss += members.iter().map(|p| sq_dist(p, &m)).sum::<f64>();
            }
        }
        best = best.min(wcss);
        // Odometer over labels[1..]; point 0 stays in cluster 0 by symmetry.
        let mut i = 1;
        loop {
            if i >= n {
                return best;
            }
            labels[i] += 1;
            if labels[i] < k {
                break;
            }
            labels[i] = 0;
            i += 1;
        }
    }
}

/// Sample covariance (n - 1 divisor) by explicit loops.
pub fn covariance(points: &Points) -> Vec<Vec<f64>> {
    let all: Vec<&Vec<f64>> = points.iter().collect();
    let mean = mean_of(&all);
    let m = mean.len();
    let mut cov = vec![vec![0.0; m]; m];
    for p in points {
        for i in 0..m {
            for j in 0..m {
                cov[i][j] += (p[i] - mean[i]) * (p[j] - mean[j]);
            }
        }
    }
    let d = (points.len() - 1) as f64;
    cov.iter()
        .map(|r| r.iter().map(|v| v / d).collect())
        .collect()
}

/// Eigenvalues of a symmetric matrix, descending, via nalgebra.
pub fn symmetric_eigenvalues(a: &[Vec<f64>]) -> Vec<f64> {
    let m = a.len();
    let mat = DMatrix::from_fn(m, m, |i, j| a[i][j]);
    let mut vals: Vec<f64> = mat.symmetric_eigen().eigenvalues.iter().copied().collect();
    vals.sort_by(|x, y| y.total_cmp(x));
    vals
}

/// Central finite difference of `f` at `x`.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Modal filter visiting pixels in reverse order and scanning each window
/// column-major, reading only from the input. `None` is nodata.
pub fn majority_filter(grid: &[Vec<Option<u16>>], kernel: usize) -> Vec<Vec<Option<u16>>> {
    let rows = grid.len();
    let cols = grid[0].len();
    let rad = (kernel / 2) as isize;
    let mut out = grid.to_vec();
    for r in (0..rows).rev() {
        for c in (0..cols).rev() {
            let Some(centre) = grid[r][c] else { continue };
            let mut counts: std::collections::HashMap<u16, usize> = Default::default();
            for dc in -rad..=rad {
                for dr in -rad..=rad {
                    let (rr, cc) = (r as isize + dr, c as isize + dc);
                    if rr < 0 || cc < 0 || rr >= rows as isize || cc >= cols as isize {
                        continue;
                    }
                    if let Some(l) = grid[rr as usize][cc as usize] {
                        *counts.entry(l).or_default() += 1;
                    }
                }
            }
            let top = *counts.values().max().unwrap();
            out[r][c] = Some(if counts[&centre] == top {
                centre
            } else {
                *counts
                    .iter()
                    .filter(|(_, &v)| v == top)
                    .map(|(l, _)| l)
                    .min()
                    .unwrap()
            });
        }
    }
    out
}
