use std::fs;
use std::path::Path;

use ndarray::{concatenate, ArrayView2, Axis};

use super::kmeans::{kmeans_fit, lloyd, validate, ClusterModel, KMeansOptions};
use crate::error::{Error, Result};
use crate::seed;

pub const ELBOW_FILE: &str = "elbow.csv";

/// Gaps at or below this count as "on the chord".
const CHORD_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ElbowCurve {
    pub k_values: Vec<usize>,
    pub wcss: Vec<f64>,
}

impl ElbowCurve {
    pub fn new(k_values: Vec<usize>, wcss: Vec<f64>) -> Result<Self> {
        if k_values.len() != wcss.len() {
            return Err(Error::Dimension(format!(
                "{} k values for {} wcss values",
                k_values.len(),
                wcss.len()
            )));
        }
        if k_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(
                "k values must be strictly increasing".into(),
            ));
        }
        if wcss.iter().any(|&w| !(w.is_finite() && w >= 0.0)) {
            return Err(Error::InvalidInput(
                "wcss values must be finite and >= 0".into(),
            ));
        }
        Ok(ElbowCurve { k_values, wcss })
    }

    pub fn len(&self) -> usize {
        self.k_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k_values.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,wcss\n");
        for (k, w) in self.k_values.iter().zip(&self.wcss) {
            out.push_str(&format!("{k},{w}\n"));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("k,wcss") {
            return Err(Error::InvalidInput(
                "elbow csv must start with header k,wcss".into(),
            ));
        }
        let mut k_values = Vec::new();
        let mut wcss = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || Error::InvalidInput(format!("elbow csv line {}: {line:?}", i + 2));
            let (k, w) = line.split_once(',').ok_or_else(bad)?;
            k_values.push(k.trim().parse().map_err(|_| bad())?);
            wcss.push(w.trim().parse().map_err(|_| bad())?);
        }
        ElbowCurve::new(k_values, wcss)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ElbowCurve::from_csv(&text)
    }
}

/// WCSS of the best k-means solution for every `k` in `k_min..=k_max`.
///
/// Each `k` takes the better of a fresh [`kmeans_fit`] and a warm start from
/// the previous `k`'s best centroids plus the point farthest from its
/// centroid. The warm start never exceeds the previous WCSS, so the curve is
/// non-increasing.
pub fn elbow_sweep_models(
    features: ArrayView2<'_, f64>,
    k_min: usize,
    k_max: usize,
    seed: u64,
    options: &KMeansOptions,
) -> Result<(ElbowCurve, Vec<ClusterModel>)> {
    if k_min == 0 {
        return Err(Error::Config("k_min must be at least 1".into()));
    }
    if k_max < k_min + 2 {
        return Err(Error::Config(format!(
            "elbow sweep needs at least 3 values of k, got {k_min}..={k_max}"
        )));
    }
    validate(features, k_max)?;

    let mut models: Vec<ClusterModel> = Vec::with_capacity(k_max - k_min + 1);
    for k in k_min..=k_max {
        let mut best = kmeans_fit(features, k, seed::derive_indexed(seed, k as u64), options)?;
        if let Some(prev) = models.last() {
            let far = prev
                .inertia_contributions(features)
                .into_iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |b, (i, d)| if d > b.1 { (i, d) } else { b },
                )
                .0;
            let init = concatenate(
                Axis(0),
                &[
                    prev.centroids.view(),
                    features.row(far).insert_axis(Axis(0)),
                ],
            )
            .map_err(|e| Error::Dimension(e.to_string()))?;
            let warm = lloyd(features, init, options.max_iter, options.tol, best.seed)?;
            if warm.inertia < best.inertia {
                best = warm;
            }
        }
        models.push(best);
    }
    let curve = ElbowCurve::new(
        (k_min..=k_max).collect(),
        models.iter().map(|m| m.inertia).collect(),
    )?;
    Ok((curve, models))
}

pub fn elbow_sweep(
    features: ArrayView2<'_, f64>,
    k_min: usize,
    k_max: usize,
    seed: u64,
    options: &KMeansOptions,
) -> Result<ElbowCurve> {
    elbow_sweep_models(features, k_min, k_max, seed, options).map(|(c, _)| c)
}

impl ClusterModel {
    fn inertia_contributions(&self, features: ArrayView2<'_, f64>) -> Vec<f64> {
        features
            .rows()
            .into_iter()
            .zip(&self.labels)
            .map(|(p, &l)| {
                p.iter()
                    .zip(self.centroids.row(l))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum()
            })
            .collect()
    }
}

/// Per-point gaps `(1 - x) - y` between the first-to-last chord and the
/// normalized curve.
pub fn chord_gaps(curve: &ElbowCurve) -> Result<Vec<f64>> {
    if curve.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "knee detection needs at least 3 points, got {}",
            curve.len()
        )));
    }
    let (k0, k1) = (
        curve.k_values[0] as f64,
        curve.k_values[curve.len() - 1] as f64,
    );
    let lo = curve.wcss.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = curve.wcss.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return Err(Error::InvalidInput("wcss curve is flat".into()));
    }
    Ok(curve
        .k_values
        .iter()
        .zip(&curve.wcss)
        .map(|(&k, &w)| {
            let x = (k as f64 - k0) / (k1 - k0);
            let y = (w - lo) / (hi - lo);
            (1.0 - x) - y
        })
        .collect())
}

/// Knee of a decreasing convex WCSS curve: the `k` with the largest gap
/// below the chord. Ties resolve to the smallest `k`.
pub fn kneedle_detect(curve: &ElbowCurve) -> Result<usize> {
    let gaps = chord_gaps(curve)?;
    let (idx, gap) = gaps
        .iter()
        .copied()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |b, (i, g)| if g > b.1 { (i, g) } else { b },
        );
    if gap <= CHORD_EPS {
        return Err(Error::NoElbow);
    }
    Ok(curve.k_values[idx])
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn curve(wcss: &[f64]) -> ElbowCurve {
        ElbowCurve::new((1..=wcss.len()).collect(), wcss.to_vec()).unwrap()
    }

    #[test]
    fn hand_curve_peaks_at_three() {
        let c = curve(&[10.0, 5.0, 2.0, 1.9, 1.8, 1.7]);
        let gaps = chord_gaps(&c).unwrap();
        assert!((gaps[2] - 0.563_855_421_686_747).abs() < 1e-12, "{gaps:?}");
        assert_eq!(kneedle_detect(&c).unwrap(), 3);
    }

    #[test]
    fn three_point_curve() {
        assert_eq!(kneedle_detect(&curve(&[4.0, 1.0, 0.5])).unwrap(), 2);
    }

    #[test]
    fn linear_and_flat_curves() {
        assert!(matches!(
            kneedle_detect(&curve(&[5.0, 4.0, 3.0, 2.0, 1.0])),
            Err(Error::NoElbow)
        ));
        assert!(kneedle_detect(&curve(&[2.0, 2.0, 2.0])).is_err());
        assert!(kneedle_detect(&curve(&[2.0, 1.0])).is_err());
        // concave: above the chord everywhere
        assert!(matches!(
            kneedle_detect(&curve(&[10.0, 9.5, 8.0, 0.0])),
            Err(Error::NoElbow)
        ));
    }

    #[test]
    fn csv_round_trip() {
        let c = ElbowCurve::new(vec![2, 3, 4], vec![10.5, 3.25, 1.0]).unwrap();
        let text = c.to_csv();
        assert!(text.starts_with("k,wcss\n2,10.5\n"));
        assert_eq!(ElbowCurve::from_csv(&text).unwrap(), c);
        assert!(ElbowCurve::from_csv("k;wcss\n").is_err());
    }

    #[test]
    fn sweep_shapes_and_errors() {
        let x = Array2::from_shape_fn((60, 2), |(i, j)| ((i * 7 + j * 3) % 10) as f64);
        let opts = KMeansOptions::default();
        let c = elbow_sweep(x.view(), 2, 4, 1, &opts).unwrap();
        assert_eq!(c.k_values, vec![2, 3, 4]);
        assert!(c.wcss.windows(2).all(|w| w[1] <= w[0]));
        assert!(elbow_sweep(x.view(), 2, 3, 1, &opts).is_err());
        let small = Array2::from_shape_fn((5, 1), |(i, _)| i as f64);
        assert!(elbow_sweep(small.view(), 2, 6, 1, &opts).is_err());
    }
}
