//! Bounding-box similarity metrics and label assignment for tiny object
//! detection.
//!
//! * [`geometry`]: center-form boxes and their 2D Gaussian model.
//! * [`metrics`]: IoU, GIoU, DIoU, CIoU, Gaussian Wasserstein distance and
//!   normalized Wasserstein distance (NWD), scalar and pairwise.
//! * [`assignment`]: anchor generation, the max-IoU threshold assigner and
//!   ranking-based assignment (RKA), plus batch sampling.
//! * [`diagnostics`]: metric-vs-deviation curves and per-scale positive
//!   sample statistics.
//! * [`evaluation`]: NMS, score filtering and COCO-style AP/AR with
//!   very-tiny/tiny/small/medium strata.
//! * [`data_io`]: COCO JSON files, dataset statistics, synthetic scenes, CSV.
//! * [`flat`]: flat-array entry points for foreign callers.
//!
//! Geometry, metrics, assignment and curves are generic over [`Scalar`]
//! (`f32` or `f64`); the `*64` aliases below are the default instantiation.

pub mod assignment;
pub mod data_io;
pub mod diagnostics;
pub mod error;
pub mod evaluation;
pub mod flat;
pub mod geometry;
pub mod metrics;
pub mod scalar;

pub use assignment::{
    assign, assign_rka, assign_threshold, generate_anchors, sample, AnchorConfig, AssignerConfig,
    AssignmentResult, Label, SampledIndices, Strategy,
};
pub use diagnostics::{
    deviation_curve, per_gt_positive_stats, pos_neg_totals, DeviationCurve, ScaleBucket,
};
pub use error::{Error, Result};
pub use evaluation::{evaluate, nms, score_filter, Detection, EvalParams, EvalReport};
pub use geometry::{BBox, GaussianBox};
pub use metrics::{
    ciou, diou, giou, gwd, iou, nwd, pairwise, wasserstein_sq, MetricKind, MetricMatrix,
};
pub use scalar::Scalar;

pub type Box64 = BBox<f64>;
pub type Box32 = BBox<f32>;
pub type Gaussian64 = GaussianBox<f64>;
pub type Gaussian32 = GaussianBox<f32>;
pub type Metric64 = MetricKind<f64>;
pub type Metric32 = MetricKind<f32>;
pub type MetricMatrix64 = MetricMatrix<f64>;
pub type AnchorConfig64 = AnchorConfig<f64>;
pub type AssignerConfig64 = AssignerConfig<f64>;
pub type Assignment64 = AssignmentResult<f64>;
pub type DeviationCurve64 = DeviationCurve<f64>;
