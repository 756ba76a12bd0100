//! k-means with k-means++ seeding and restarts, WCSS elbow sweeps, and knee
//! detection on the resulting curve.

mod elbow;
mod kmeans;

pub use elbow::{
    chord_gaps, elbow_sweep, elbow_sweep_models, kneedle_detect, ElbowCurve, ELBOW_FILE,
};
pub use kmeans::{
    inertia, kmeans_fit, kmeans_plus_plus, lloyd, load_centroids, predict, ClusterModel,
    KMeansOptions, CENTROIDS_FILE, CLUSTERS_FILE,
};
