//! Model-agnostic saliency maps.
//!
//! A population of ellipse-union masks is evolved with differential
//! evolution to maximize a black-box class score minus a sparsity penalty.
//! The good part of the final population is summed into a grayscale
//! saliency map, which can then be scored with insertion/deletion curves.

pub mod aggregation;
pub mod cli;
pub mod de;
pub mod genome;
pub mod io;
pub mod metrics;
pub mod scorer;
pub mod selftest;
pub mod tensor;

pub use aggregation::{aggregate, select_candidates, SaliencyMap};
pub use de::{evolve, DeConfig, Population, RunTrace};
pub use genome::{clip_genes, mask_fraction, rasterize, BinaryMask, EllipseGene, Individual};
pub use metrics::{diff_auc, EvalReport, MetricsConfig};
pub use scorer::{Scorer, ScorerError};
pub use tensor::ImageTensor;
