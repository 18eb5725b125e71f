//! Post-hoc interpretability: encoder saliency maps, latent clustering
//! statistics and growth-direction traversal.

mod cluster;
mod gradcam;
mod growth;

pub use cluster::{cluster_latents, kmeans, ClusterReport, FeatureSpread, KmeansResult, MIN_CLUSTER_SIZE};
pub use gradcam::{grad_cam, mass_fraction_in_bbox, Heatmap, SaliencyTarget};
pub use growth::{growth_direction, node_area_proxy, render_traversal, GrowthDirection};
