//! Unsupervised mapping of multiband rasters: scaling, PCA and autoencoder
//! feature reduction, k-means with elbow-based k selection, majority
//! filtering, validity and accuracy metrics, and indexed-colour map rendering.

pub mod clustering;
pub mod dimred;
pub mod error;
pub mod label_grid;
pub mod metrics;
pub mod neuralnet;
pub mod pipeline;
pub mod postprocess;
pub mod preprocess;
pub mod raster;
pub mod seed;
pub mod synthetic;

pub use error::{Error, ErrorClass, Result};
