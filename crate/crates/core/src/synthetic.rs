//! Seeded synthetic multiband scenes with known class maps, for exercising the
//! pipeline end to end without external imagery.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label_grid::LabelGrid;
use crate::metrics::{GroundTruthSet, TruthPoint};
use crate::raster::RasterGrid;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    pub rows: usize,
    pub cols: usize,
    pub n_bands: usize,
    pub n_classes: usize,
    /// `n_classes` mean spectra, each of `n_bands` values in [0, 1].
    pub class_spectra: Vec<Vec<f64>>,
    pub noise_sigma: f64,
    pub voronoi_sites: usize,
    pub seed: u64,
}

impl SyntheticSceneSpec {
    /// Spec with class spectra spread apart by greedy farthest-point selection
    /// from a seeded pool of random spectra in [0.1, 0.9].
    pub fn separated(
        rows: usize,
        cols: usize,
        n_bands: usize,
        n_classes: usize,
        noise_sigma: f64,
        voronoi_sites: usize,
        seed: u64,
    ) -> Self {
        let mut rng = seed::rng(seed::derive_seed(seed, "spectra"));
        let pool: Vec<Vec<f64>> = (0..64 * n_classes.max(1))
            .map(|_| (0..n_bands).map(|_| rng.random_range(0.1..0.9)).collect())
            .collect();
        let dist = |a: &[f64], b: &[f64]| -> f64 {
            a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
        };
        let mut chosen = vec![pool[0].clone()];
        while chosen.len() < n_classes {
            let next = pool
                .iter()
                .max_by(|a, b| {
                    let da = chosen
                        .iter()
                        .map(|c| dist(a, c))
                        .fold(f64::INFINITY, f64::min);
                    let db = chosen
                        .iter()
                        .map(|c| dist(b, c))
                        .fold(f64::INFINITY, f64::min);
                    da.total_cmp(&db)
                })
                .expect("non-empty pool")
                .clone();
            chosen.push(next);
        }
        SyntheticSceneSpec {
            rows,
            cols,
            n_bands,
            n_classes,
            class_spectra: chosen,
            noise_sigma,
            voronoi_sites,
            seed,
        }
    }

    /// Spec whose class spectra are the vertices of a regular simplex centred
    /// on 0.5 in a seeded random orientation, scaled to fit [0.1, 0.9], so
    /// every pair of classes is equally far apart. Needs
    /// `n_classes <= n_bands + 1`.
    pub fn simplex(
        rows: usize,
        cols: usize,
        n_bands: usize,
        n_classes: usize,
        noise_sigma: f64,
        voronoi_sites: usize,
        seed: u64,
    ) -> Result<Self> {
        if n_classes < 2 || n_classes > n_bands + 1 {
            return Err(Error::Config(format!(
                "a regular simplex of {n_classes} vertices does not fit in {n_bands} bands"
            )));
        }
        let d = n_classes - 1;
        // Orthonormal basis of the simplex's (n_classes - 1)-dim span, via
        // Gram-Schmidt on centred unit vectors.
        let mut span: Vec<Vec<f64>> = Vec::with_capacity(d);
        for i in 0..d {
            let mut v: Vec<f64> = (0..n_classes)
                .map(|j| if i == j { 1.0 } else { 0.0 } - 1.0 / n_classes as f64)
                .collect();
            orthonormalize(&mut v, &span);
            span.push(v);
        }
        // Random orthonormal frame of d directions in band space.
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut rng = seed::rng(seed::derive_seed(seed, "spectra"));
        let mut frame: Vec<Vec<f64>> = Vec::with_capacity(d);
        while frame.len() < d {
            let mut v: Vec<f64> = (0..n_bands).map(|_| normal.sample(&mut rng)).collect();
            if orthonormalize(&mut v, &frame) {
                frame.push(v);
            }
        }
        let offsets: Vec<Vec<f64>> = (0..n_classes)
            .map(|c| {
                (0..n_bands)
                    .map(|b| (0..d).map(|i| span[i][c] * frame[i][b]).sum())
                    .collect()
            })
            .collect();
        let reach = offsets.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        let scale = 0.4 / reach;
        let class_spectra = offsets
            .into_iter()
            .map(|o| o.into_iter().map(|v| 0.5 + scale * v).collect())
            .collect();
        Ok(SyntheticSceneSpec {
            rows,
            cols,
            n_bands,
            n_classes,
            class_spectra,
            noise_sigma,
            voronoi_sites,
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.n_bands == 0 {
            return Err(Error::Config("scene dimensions must be at least 1".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::Config("a scene needs at least 2 classes".into()));
        }
        if self.voronoi_sites < self.n_classes {
            return Err(Error::Config(format!(
                "{} Voronoi sites cannot cover {} classes",
                self.voronoi_sites, self.n_classes
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise sigma must be finite and >= 0".into()));
        }
        if self.class_spectra.len() != self.n_classes
            || self.class_spectra.iter().any(|s| s.len() != self.n_bands)
        {
            return Err(Error::Config(format!(
                "need {} spectra of {} bands",
                self.n_classes, self.n_bands
            )));
        }
        if self
            .class_spectra
            .iter()
            .flatten()
            .any(|v| !(0.0..=1.0).contains(v))
        {
            return Err(Error::Config("class spectra must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Smallest Euclidean distance between two class mean spectra.
    pub fn min_separation(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in self.class_spectra.iter().enumerate() {
            for b in &self.class_spectra[i + 1..] {
                let d = a
                    .iter()
                    .zip(b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                best = best.min(d);
            }
        }
        best
    }
}

/// Remove the components of `v` along the (orthonormal) `basis` and
/// normalize; false when nothing is left.
fn orthonormalize(v: &mut [f64], basis: &[Vec<f64>]) -> bool {
    for u in basis {
        let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
        v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
    }
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm < 1e-9 {
        return false;
    }
    v.iter_mut().for_each(|a| *a /= norm);
    true
}

/// Voronoi partition of the grid from seeded sites (assigned to classes
/// round-robin); each pixel is its class spectrum plus iid Gaussian noise,
/// clamped to [0, 1].
pub fn generate_synthetic(spec: &SyntheticSceneSpec) -> Result<(RasterGrid, LabelGrid)> {
    spec.validate()?;
    let mut site_rng = seed::rng(seed::derive_seed(spec.seed, "sites"));
    let sites: Vec<(f64, f64)> = (0..spec.voronoi_sites)
        .map(|_| {
            (
                site_rng.random_range(0.0..spec.rows as f64),
                site_rng.random_range(0.0..spec.cols as f64),
            )
        })
        .collect();

    let n = spec.rows * spec.cols;
    let mut classes = Vec::with_capacity(n);
    for r in 0..spec.rows {
        for c in 0..spec.cols {
            let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
            let nearest = sites
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |best, (i, &(sy, sx))| {
                    let d = (y - sy) * (y - sy) + (x - sx) * (x - sx);
                    if d < best.1 {
                        (i, d)
                    } else {
                        best
                    }
                })
                .0;
            classes.push((nearest % spec.n_classes) as u16);
        }
    }

    let mut noise_rng = seed::rng(seed::derive_seed(spec.seed, "noise"));
    let normal = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut values = vec![0.0; n * spec.n_bands];
    for (p, &class) in classes.iter().enumerate() {
        let spectrum = &spec.class_spectra[class as usize];
        for (b, &mean) in spectrum.iter().enumerate() {
            let v = if spec.noise_sigma > 0.0 {
                (mean + normal.sample(&mut noise_rng)).clamp(0.0, 1.0)
            } else {
                mean
            };
            values[b * n + p] = v;
        }
    }
    let raster = RasterGrid::new(spec.rows, spec.cols, spec.n_bands, values)?
        .with_band_names((1..=spec.n_bands).map(|b| format!("B{b}")).collect())?;
    let truth = LabelGrid::new(spec.rows, spec.cols, classes)?;
    Ok((raster, truth))
}

/// `count` truth points drawn class by class in rotation, uniformly within
/// each class, so every class present in the map is represented.
pub fn sample_truth_points(truth: &LabelGrid, count: usize, seed: u64) -> Result<GroundTruthSet> {
    let n_classes = truth.label_count();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (p, &l) in truth.labels().iter().enumerate() {
        if (l as usize) < n_classes {
            members[l as usize].push(p);
        }
    }
    let present: Vec<usize> = (0..n_classes).filter(|&c| !members[c].is_empty()).collect();
    if present.is_empty() {
        return Err(Error::InvalidInput(
            "truth map has no labelled cells".into(),
        ));
    }
    let mut rng = seed::rng(seed);
    let mut points = Vec::with_capacity(count);
    for i in 0..count {
        let class = present[i % present.len()];
        let pool = &members[class];
        let p = pool[rng.random_range(0..pool.len())];
        points.push(TruthPoint {
            row: p / truth.cols(),
            col: p % truth.cols(),
            class_id: class,
        });
    }
    // Renumber so ids stay contiguous when some class is absent.
    for p in &mut points {
        p.class_id = present
            .iter()
            .position(|&c| c == p.class_id)
            .expect("present class");
    }
    GroundTruthSet::new(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(sigma: f64) -> SyntheticSceneSpec {
        SyntheticSceneSpec::separated(20, 24, 4, 3, sigma, 9, 17)
    }

    #[test]
    fn noiseless_pixels_equal_class_spectrum() {
        let s = spec(0.0);
        let (raster, truth) = generate_synthetic(&s).unwrap();
        for r in 0..s.rows {
            for c in 0..s.cols {
                let class = truth.get(r, c) as usize;
                for b in 0..s.n_bands {
                    assert_eq!(raster.value(r, c, b), s.class_spectra[class][b]);
                }
            }
        }
    }

    #[test]
    fn seeded_and_bounded() {
        let s = spec(0.05);
        let (a, ta) = generate_synthetic(&s).unwrap();
        let (b, tb) = generate_synthetic(&s).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert!(a.values().iter().all(|v| (0.0..=1.0).contains(v)));
        let (c, _) = generate_synthetic(&SyntheticSceneSpec { seed: 18, ..s }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = spec(0.01);
        s.n_classes = 1;
        assert!(generate_synthetic(&s).is_err());
        let mut s = spec(0.01);
        s.class_spectra[0][0] = 1.5;
        assert!(generate_synthetic(&s).is_err());
        let mut s = spec(0.01);
        s.noise_sigma = -1.0;
        assert!(generate_synthetic(&s).is_err());
    }

    #[test]
    fn simplex_spectra_are_equidistant_and_bounded() {
        let s = SyntheticSceneSpec::simplex(4, 4, 8, 6, 0.02, 6, 3).unwrap();
        s.validate().unwrap();
        let first = s.min_separation();
        for (i, a) in s.class_spectra.iter().enumerate() {
            for b in &s.class_spectra[i + 1..] {
                let d = a
                    .iter()
                    .zip(b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                assert!((d - first).abs() < 1e-12);
            }
        }
        assert!(s
            .class_spectra
            .iter()
            .flatten()
            .all(|v| (0.1 - 1e-12..=0.9 + 1e-12).contains(v)));
        assert!(SyntheticSceneSpec::simplex(4, 4, 3, 5, 0.02, 6, 3).is_err());
    }

    #[test]
    fn truth_points_cover_classes() {
        let (_, truth) = generate_synthetic(&spec(0.01)).unwrap();
        let pts = sample_truth_points(&truth, 30, 1).unwrap();
        assert_eq!(pts.points.len(), 30);
        for p in &pts.points {
            assert_eq!(truth.get(p.row, p.col) as usize, p.class_id);
        }
    }
}
