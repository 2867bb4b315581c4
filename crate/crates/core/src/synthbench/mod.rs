//! Synthetic scenes with ground-truth colour factors, oracle metrics, and a
//! small downstream classification harness.

mod classifier;
mod corpus;
mod metrics;
mod scene;

pub use classifier::{benchmark_on_images, class_indices, run_downstream_benchmark, BenchmarkReport, Classifier, ClassifierConfig};
pub use corpus::{generate_corpus, write_corpus, SceneDomain, INK_PALETTE};
pub use metrics::{global_colour_distance, marker_fidelity, masked_perceptual_proxy, PerceptualMetric, PooledMse};
pub use scene::{generate_scene, Label, Lesion, Marker, MarkerShape, SceneRender, SceneSpec, MALIGNANT_IRREGULARITY};
