//! Flat-array entry points for foreign callers (e.g. a Python extension).
//!
//! Boxes arrive as contiguous `n x 4` row-major slices in center form
//! `(cx, cy, w, h)`. Inputs are copied into owned boxes; nothing is retained
//! between calls.

use std::path::Path;

use crate::assignment::{assign_rka, AssignerConfig};
use crate::data_io::{load_annotations, load_detections};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalParams, EvalReport};
use crate::geometry::BBox;
use crate::metrics::{pairwise, MetricKind};

/// Converts a flat `n x 4` slice into boxes. `what` names the argument in
/// error messages.
pub fn boxes_from_flat(data: &[f64], what: &str) -> Result<Vec<BBox<f64>>> {
    if !data.len().is_multiple_of(4) {
        return Err(Error::Shape(format!(
            "{what}: length {} is not divisible by 4",
            data.len()
        )));
    }
    data.chunks_exact(4)
        .enumerate()
        .map(|(i, c)| {
            BBox::new(c[0], c[1], c[2], c[3]).map_err(|e| Error::Shape(format!("{what}[{i}]: {e}")))
        })
        .collect()
}

pub fn boxes_to_flat(boxes: &[BBox<f64>]) -> Vec<f64> {
    boxes
        .iter()
        .flat_map(|b| [b.cx(), b.cy(), b.w(), b.h()])
        .collect()
}

/// Row-major `n_gt x n_anchor` metric matrix. `kind` is a metric name
/// (`iou`, `giou`, `diou`, `ciou`, `gwd`, `nwd`); `c` is used by `nwd`.
pub fn pairwise_flat(kind: &str, gts: &[f64], anchors: &[f64], c: f64) -> Result<Vec<f64>> {
    let kind = MetricKind::parse_with_c(kind, c)?;
    let gts = boxes_from_flat(gts, "gts")?;
    let anchors = boxes_from_flat(anchors, "anchors")?;
    Ok(pairwise(&kind, &gts, &anchors).into_values())
}

/// NWD ranking assignment; returns the gt index per anchor, `-1` for negatives.
pub fn assign_rka_flat(gts: &[f64], anchors: &[f64], k: usize, c: f64) -> Result<Vec<i64>> {
    let cfg = AssignerConfig::rka(k, MetricKind::nwd(c)?);
    let gts = boxes_from_flat(gts, "gts")?;
    let anchors = boxes_from_flat(anchors, "anchors")?;
    Ok(assign_rka(&cfg, &gts, &anchors)?.flat_labels())
}

/// Evaluates a COCO results file against an annotation file with the default
/// parameters (the same numbers the `evaluate` command prints).
pub fn evaluate_flat(ann_path: impl AsRef<Path>, det_path: impl AsRef<Path>) -> Result<EvalReport> {
    let gt = load_annotations(ann_path)?;
    let dets = load_detections(det_path)?;
    Ok(evaluate(&dets, &gt, &EvalParams::default()))
}
