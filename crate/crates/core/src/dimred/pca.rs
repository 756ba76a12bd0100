use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::eigen::jacobi_eigen;
use super::{LatentMatrix, Producer};
use crate::error::{Error, Result};

pub const PCA_FILE: &str = "pca.json";
pub const COMPONENTS_FILE: &str = "components.bin";

const EIGEN_TOL: f64 = 1e-12;
/// Slack when comparing cumulative ratios against the variance target, so
/// that e.g. a target of 1.0 is met by a cumulative sum of 1 - 1e-16.
const CUMULATIVE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub means: Array1<f64>,
    /// `m x n_bands`, orthonormal rows.
    pub components: Array2<f64>,
    pub explained_variance: Array1<f64>,
    pub explained_variance_ratio: Array1<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PcaMeta {
    n_bands: usize,
    m: usize,
    means: Vec<f64>,
    explained_variance: Vec<f64>,
    explained_variance_ratio: Vec<f64>,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn n_bands(&self) -> usize {
        self.components.ncols()
    }

    pub fn transform(&self, data: ArrayView2<'_, f64>) -> Result<LatentMatrix> {
        if data.ncols() != self.n_bands() {
            return Err(Error::Dimension(format!(
                "PCA fit on {} bands, given {}",
                self.n_bands(),
                data.ncols()
            )));
        }
        let centered = &data - &self.means;
        LatentMatrix::new(centered.dot(&self.components.t()), Producer::Pca)
    }

    /// Map latent rows back to band space.
    pub fn inverse_transform(&self, latent: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if latent.ncols() != self.n_components() {
            return Err(Error::Dimension(format!(
                "PCA has {} components, latent has {}",
                self.n_components(),
                latent.ncols()
            )));
        }
        Ok(latent.dot(&self.components) + &self.means)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = PcaMeta {
            n_bands: self.n_bands(),
            m: self.n_components(),
            means: self.means.to_vec(),
            explained_variance: self.explained_variance.to_vec(),
            explained_variance_ratio: self.explained_variance_ratio.to_vec(),
        };
        let path = dir.join(PCA_FILE);
        let text =
            serde_json::to_string_pretty(&meta).map_err(|e| Error::header(&path, e.to_string()))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        let payload: Vec<u8> = self
            .components
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        let bin = dir.join(COMPONENTS_FILE);
        fs::write(&bin, payload).map_err(|e| Error::io(&bin, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(PCA_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: PcaMeta =
            serde_json::from_str(&text).map_err(|e| Error::header(&path, e.to_string()))?;
        if meta.means.len() != meta.n_bands || meta.explained_variance_ratio.len() != meta.m {
            return Err(Error::header(&path, "inconsistent PCA metadata"));
        }
        let bin = dir.join(COMPONENTS_FILE);
        let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        let expected = meta.m * meta.n_bands * 8;
        if bytes.len() != expected {
            return Err(Error::PayloadSize {
                expected,
                found: bytes.len(),
            });
        }
        let flat = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Ok(PcaModel {
            means: meta.means.into(),
            components: Array2::from_shape_vec((meta.m, meta.n_bands), flat)
                .map_err(|e| Error::Dimension(e.to_string()))?,
            explained_variance: meta.explained_variance.into(),
            explained_variance_ratio: meta.explained_variance_ratio.into(),
        })
    }
}

/// Sample covariance (divisor `n - 1`) of the columns of `data`.
pub fn covariance(data: ArrayView2<'_, f64>) -> (Array1<f64>, Array2<f64>) {
    let n = data.nrows();
    let means = data.mean_axis(Axis(0)).expect("non-empty data");
    let centered = &data - &means;
    let cov = centered.t().dot(&centered) / (n as f64 - 1.0);
    (means, cov)
}

/// Principal axes of `data`, keeping the fewest components whose cumulative
/// explained variance ratio reaches `variance_target`.
pub fn pca_fit(data: ArrayView2<'_, f64>, variance_target: f64) -> Result<PcaModel> {
    let (n, bands) = data.dim();
    if n <= bands {
        return Err(Error::InvalidInput(format!(
            "PCA needs more pixels than bands, got {n} pixels and {bands} bands"
        )));
    }
    if !(variance_target > 0.0 && variance_target <= 1.0) {
        return Err(Error::Config(format!(
            "variance target must lie in (0, 1], got {variance_target}"
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("PCA input".into()));
    }

    let (means, cov) = covariance(data);
    let total: f64 = cov.diag().sum();
    if total <= 0.0 {
        return Err(Error::Numeric("zero total variance".into()));
    }
    let eig = jacobi_eigen(&cov, EIGEN_TOL)?;
    let eigenvalues = eig.values.mapv(|v| v.max(0.0));
    let ratios = &eigenvalues / total;

    let mut cumulative = 0.0;
    let mut m = bands;
    for (i, r) in ratios.iter().enumerate() {
        cumulative += r;
        if cumulative >= variance_target - CUMULATIVE_SLACK {
            m = i + 1;
            break;
        }
    }

    let mut components = Array2::zeros((m, bands));
    for (i, mut row) in components.axis_iter_mut(Axis(0)).enumerate() {
        let v = eig.vectors.column(i);
        let pivot = v
            .iter()
            .copied()
            .enumerate()
            .fold((0, 0.0f64), |best, (j, x)| {
                if x.abs() > best.1.abs() {
                    (j, x)
                } else {
                    best
                }
            });
        let sign = if v[pivot.0] < 0.0 { -1.0 } else { 1.0 };
        row.assign(&v.mapv(|x| sign * x));
    }

    Ok(PcaModel {
        means,
        components,
        explained_variance: eigenvalues.slice(ndarray::s![..m]).to_owned(),
        explained_variance_ratio: ratios.slice(ndarray::s![..m]).to_owned(),
    })
}

pub fn pca_transform(model: &PcaModel, data: ArrayView2<'_, f64>) -> Result<LatentMatrix> {
    model.transform(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use ndarray::array;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn rank_one_line() {
        let data = Array2::from_shape_fn((50, 2), |(i, j)| {
            let t = i as f64 * 0.1 - 2.0;
            if j == 0 {
                t
            } else {
                2.0 * t
            }
        });
        let model = pca_fit(data.view(), 0.9).unwrap();
        assert_eq!(model.n_components(), 1);
        assert!((model.explained_variance_ratio[0] - 1.0).abs() < 1e-12);
        let c = model.components.row(0);
        assert!(c[1] > 0.0 && (c[1] / c[0] - 2.0).abs() < 1e-9);

        let latent = model.transform(data.view()).unwrap();
        let (_, lcov) = covariance(latent.view());
        let (_, icov) = covariance(data.view());
        assert!((lcov[[0, 0]] - icov.diag().sum()).abs() < 1e-9);
    }

    #[test]
    fn independent_equal_variance_keeps_both() {
        let mut rng = seed::rng(11);
        let data = Array2::from_shape_fn((2000, 2), |_| StandardNormal.sample(&mut rng));
        let model = pca_fit(data.view(), 0.9).unwrap();
        assert_eq!(model.n_components(), 2);
        for r in model.explained_variance_ratio.iter() {
            assert!((r - 0.5).abs() < 0.05);
        }
    }

    #[test]
    fn mean_maps_to_origin() {
        let data = array![
            [1.0, 2.0, 0.0],
            [3.0, 1.0, 1.0],
            [0.0, 0.0, 4.0],
            [2.0, 5.0, 1.0],
            [1.0, 1.0, 1.0]
        ];
        let model = pca_fit(data.view(), 1.0).unwrap();
        assert_eq!(model.n_components(), 3);
        let mean = model.means.clone().insert_axis(Axis(0));
        let z = model.transform(mean.view()).unwrap();
        assert!(z.values.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn error_paths() {
        let constant = Array2::from_elem((10, 3), 0.5);
        assert!(matches!(
            pca_fit(constant.view(), 0.9),
            Err(Error::Numeric(_))
        ));
        let tiny = Array2::zeros((3, 3));
        assert!(pca_fit(tiny.view(), 0.9).is_err());
        let data = Array2::from_shape_fn((10, 2), |(i, j)| (i * (j + 1)) as f64);
        assert!(pca_fit(data.view(), 0.0).is_err());
        assert!(pca_fit(data.view(), 1.5).is_err());
        let model = pca_fit(data.view(), 0.9).unwrap();
        assert!(model.transform(Array2::zeros((2, 3)).view()).is_err());
    }

    #[test]
    fn persistence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = Array2::from_shape_fn((20, 3), |(i, j)| ((i * 5 + j * 2) % 7) as f64);
        let model = pca_fit(data.view(), 1.0).unwrap();
        model.save(dir.path()).unwrap();
        assert_eq!(
            fs::read(dir.path().join(COMPONENTS_FILE)).unwrap().len(),
            model.n_components() * 3 * 8
        );
        assert_eq!(PcaModel::load(dir.path()).unwrap(), model);
    }
}
