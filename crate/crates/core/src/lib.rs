//! Feature-map size versus perturbation resistance, packaged as a library.
//!
//! The crate studies how the spatial size of convolutional feature maps and
//! the choice of global pooling affect a network's resistance to small input
//! perturbations, and provides the architecture tooling that goes with it:
//!
//! - [`tensor`]: dense `f64` tensors, reproducible RNG streams, and weight
//!   initialization strategies.
//! - [`nn`]: forward-only layers (strided cross-correlation, ReLU, global
//!   pooling, nearest/bilinear upsampling, linear head) and architecture
//!   specs with a fixed JSON schema.
//! - [`analysis`]: receptive fields, a flops/memory cost model, stride
//!   rewriting, and detection of the exact output duplicates caused by
//!   nearest-neighbor upsampling.
//! - [`bounds`]: closed-form tail bounds on the pooled disturbance
//!   `|P(g(x+d)) - P(g(x))|` for average and max pooling, their inversions,
//!   and an empirical tail estimator.
//! - [`experiments`]: seeded Monte Carlo runners for disturbance
//!   propagation, prediction invariance, and empirical Lipschitz lower
//!   bounds.
//! - [`presets`]: ToyCNN / AlexNet / VGG16 / ResNet18 / PreActResNet18
//!   convolutional chains in the stride-stage notation.

pub mod analysis;
pub mod bounds;
pub mod error;
pub mod experiments;
pub mod nn;
pub mod presets;
pub mod stats;
pub mod tensor;

pub use analysis::{
    cost, dims_report, receptive_field, redundancy_profile, rewrite_strides, CostReport,
    DimsReport, RFReport, RedundancyProfile, StrideConfig,
};
pub use bounds::{
    avg_pool_gamma_min, avg_pool_tail_bound, empirical_tail, evaluate_bound_query,
    max_pool_gamma_min, max_pool_tail_bound, BoundOutcome, BoundQuery, BoundResult, GivenParam,
};
pub use error::{Error, Result};
pub use experiments::{
    lipschitz_lower_bound, prediction_invariance, run_disturbance, run_disturbance_pair,
    run_init_sweep, ActivationChoice, DisturbanceReport, ExperimentConfig, InvarianceReport,
    LipschitzEstimate,
};
pub use nn::{
    conv2d, forward, forward_trace, global_pool, output_dims, relu, upsample, ArchSpec,
    ConvLayerSpec, LayerSpec, PoolKind, UpsampleMode,
};
pub use presets::Preset;
pub use tensor::{init_weights, sample_uniform_perturbation, InitStrategy, RngStream, Tensor};
