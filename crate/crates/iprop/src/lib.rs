//! Attribution-map refinement by score propagation over a pixel-similarity
//! graph, plus an interpretability-metrics toolkit.
//!
//! Pipeline: decode an image, convert to CIELAB, connect every pixel to its
//! K-order neighborhood with weights −(d_s + d_c), turn each weight row
//! into transition probabilities by softmax, then solve the reward
//! propagation fixed point V = AM + γ·P·V by value iteration. The refined
//! map keeps the original attributions and adds the discounted mass that
//! flows in from similar nearby pixels.

pub mod attribution;
pub mod cli;
pub mod error;
pub mod graph;
pub mod imaging;
pub mod metrics;
pub mod predictor;
pub mod propagate;
pub mod threads;

pub use attribution::AttributionMap;
pub use error::{Error, Result};
pub use graph::{PropagationConfig, SparseStochasticMatrix, WeightedPixelGraph};
pub use imaging::{LabImage, RgbImage};
pub use metrics::{AnnotationMask, MetricCurve};
pub use propagate::{PropagationResult, run_iprop};
