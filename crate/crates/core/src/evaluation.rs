//! Detection post-processing and COCO-style evaluation stratified by object
//! scale.
//!
//! Matching, ignore handling and 101-point interpolation follow the COCO
//! evaluator. Scale strata are keyed on the absolute size `sqrt(w * h)` of a
//! box using half-open ranges; gts outside the stratum (and crowd gts) are
//! ignored, as are unmatched detections whose own size is outside it.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data_io::AnnotationSet;
use crate::diagnostics::ScaleBucket;
use crate::geometry::BBox;
use crate::metrics::iou;

pub const DEFAULT_NMS_IOU: f64 = 0.5;
pub const DEFAULT_MIN_SCORE: f64 = 0.05;
pub const DEFAULT_MAX_PER_IMAGE: usize = 3000;
pub const DEFAULT_MAX_DET: usize = 1500;
pub const RECALL_POINTS: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox<f64>,
    pub score: f64,
}

/// Indices ordered by descending score, input order on ties.
fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    order
}

/// Greedy non-maximum suppression within each image (and each category when
/// `per_category` is set). A detection is suppressed when its IoU with an
/// already kept one exceeds `iou_thresh`. Output is in descending score order.
pub fn nms(dets: &[Detection], iou_thresh: f64, per_category: bool) -> Vec<Detection> {
    let mut kept: Vec<Detection> = Vec::new();
    let mut kept_by_group: HashMap<(u64, Option<u64>), Vec<usize>> = HashMap::new();
    for i in score_order(dets) {
        let d = dets[i];
        let key = (d.image_id, per_category.then_some(d.category_id));
        let group = kept_by_group.entry(key).or_default();
        if group
            .iter()
            .all(|&k| iou(&kept[k].bbox, &d.bbox) <= iou_thresh)
        {
            group.push(kept.len());
            kept.push(d);
        }
    }
    kept
}

/// Drops detections scoring below `min_score`, then keeps at most
/// `max_per_image` per image by score. Survivors keep their input order.
pub fn score_filter(dets: &[Detection], min_score: f64, max_per_image: usize) -> Vec<Detection> {
    let mut per_image: HashMap<u64, usize> = HashMap::new();
    let mut keep = vec![false; dets.len()];
    for i in score_order(dets) {
        if dets[i].score < min_score {
            continue;
        }
        let n = per_image.entry(dets[i].image_id).or_insert(0);
        if *n < max_per_image {
            *n += 1;
            keep[i] = true;
        }
    }
    dets.iter()
        .zip(keep)
        .filter_map(|(d, k)| k.then_some(*d))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub category_id: u64,
    pub bbox: BBox<f64>,
    pub iscrowd: bool,
}

/// Overlap used for matching: IoU, or intersection over detection area for
/// crowd gts.
fn match_overlap(det: &BBox<f64>, gt: &GroundTruth) -> f64 {
    if gt.iscrowd {
        let (ax1, ay1, ax2, ay2) = det.corners();
        let (bx1, by1, bx2, by2) = gt.bbox.corners();
        let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
        let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
        iw * ih / det.area()
    } else {
        iou(det, &gt.bbox)
    }
}

/// Greedy matching of one image's detections, which must already be sorted
/// by descending score. `gt_ignore` must list ignored gts after all others.
/// Returns the matched gt per detection.
fn greedy_match(
    dets: &[Detection],
    gts: &[GroundTruth],
    gt_ignore: &[bool],
    overlaps: &[Vec<f64>],
    thresh: f64,
) -> Vec<Option<usize>> {
    let mut gt_taken = vec![false; gts.len()];
    let mut out = vec![None; dets.len()];
    for (d, det) in dets.iter().enumerate() {
        let mut best = thresh.min(1.0 - 1e-10);
        let mut m: Option<usize> = None;
        for (g, gt) in gts.iter().enumerate() {
            if gt.category_id != det.category_id {
                continue;
            }
            if gt_taken[g] && !gt.iscrowd {
                continue;
            }
            // a real match is never traded for an ignored one
            if let Some(mi) = m {
                if !gt_ignore[mi] && gt_ignore[g] {
                    break;
                }
            }
            let o = overlaps[d][g];
            if o < best {
                continue;
            }
            best = o;
            m = Some(g);
        }
        if let Some(g) = m {
            gt_taken[g] = true;
            out[d] = Some(g);
        }
    }
    out
}

/// One-to-one greedy matching for one image: each detection, in the given
/// (descending score) order, takes the unmatched same-category gt with the
/// highest IoU of at least `iou_thresh`. Returns the matched gt per detection;
/// `None` is a false positive.
pub fn match_detections(
    dets: &[Detection],
    gts: &[GroundTruth],
    iou_thresh: f64,
) -> Vec<Option<usize>> {
    let overlaps: Vec<Vec<f64>> = dets
        .iter()
        .map(|d| gts.iter().map(|g| match_overlap(&d.bbox, g)).collect())
        .collect();
    let mut order: Vec<usize> = (0..gts.len()).collect();
    order.sort_by_key(|&g| gts[g].iscrowd);
    let sorted: Vec<GroundTruth> = order.iter().map(|&g| gts[g]).collect();
    let ignore: Vec<bool> = sorted.iter().map(|g| g.iscrowd).collect();
    let sorted_overlaps: Vec<Vec<f64>> = overlaps
        .iter()
        .map(|row| order.iter().map(|&g| row[g]).collect())
        .collect();
    greedy_match(dets, &sorted, &ignore, &sorted_overlaps, iou_thresh)
        .into_iter()
        .map(|m| m.and_then(|g| (!sorted[g].iscrowd).then_some(order[g])))
        .collect()
}

/// 101-point interpolated average precision of scored TP/FP outcomes against
/// `num_gts` positives. `None` when there are no gts.
///
/// Outcomes are ranked by descending score; equal scores keep input order.
pub fn average_precision(outcomes: &[(f64, bool)], num_gts: usize) -> Option<f64> {
    if num_gts == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..outcomes.len()).collect();
    order.sort_by(|&a, &b| outcomes[b].0.total_cmp(&outcomes[a].0).then(a.cmp(&b)));
    let tps: Vec<bool> = order.iter().map(|&i| outcomes[i].1).collect();
    Some(interpolated_ap(&tps, num_gts).0)
}

/// Returns `(AP, final recall)` for ranked TP flags.
fn interpolated_ap(ranked_tp: &[bool], num_gts: usize) -> (f64, f64) {
    let nd = ranked_tp.len();
    let mut recall = Vec::with_capacity(nd);
    let mut precision = Vec::with_capacity(nd);
    let (mut tp, mut fp) = (0usize, 0usize);
    for &is_tp in ranked_tp {
        if is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / num_gts as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (1..nd).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let mut sum = 0.0;
    for r in 0..RECALL_POINTS {
        let threshold = r as f64 / (RECALL_POINTS - 1) as f64;
        let idx = recall.partition_point(|&rc| rc < threshold);
        if idx < nd {
            sum += precision[idx];
        }
    }
    let final_recall = recall.last().copied().unwrap_or(0.0);
    (sum / RECALL_POINTS as f64, final_recall)
}

/// Half-open absolute-size range `[lo, hi)` defining one evaluation stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeRange {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

impl SizeRange {
    pub fn all() -> Self {
        Self {
            name: "all".into(),
            lo: 0.0,
            hi: f64::INFINITY,
        }
    }

    pub fn bucket(b: ScaleBucket) -> Self {
        let (lo, hi) = b.range();
        Self {
            name: b.short_name().into(),
            lo,
            hi,
        }
    }

    #[inline]
    fn contains(&self, b: &BBox<f64>) -> bool {
        let s = b.absolute_size();
        s >= self.lo && s < self.hi
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalParams {
    pub iou_thresholds: Vec<f64>,
    pub max_det: usize,
    /// The first range is the overall one used for AP, AP50, AP75, AR and
    /// per-category APs.
    pub ranges: Vec<SizeRange>,
}

impl Default for EvalParams {
    fn default() -> Self {
        let mut ranges = vec![SizeRange::all()];
        ranges.extend(
            [
                ScaleBucket::VeryTiny,
                ScaleBucket::Tiny,
                ScaleBucket::Small,
                ScaleBucket::Medium,
            ]
            .into_iter()
            .map(SizeRange::bucket),
        );
        Self {
            iou_thresholds: coco_iou_thresholds(),
            max_det: DEFAULT_MAX_DET,
            ranges,
        }
    }
}

/// `0.50, 0.55, ..., 0.95`.
pub fn coco_iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumReport {
    pub name: String,
    pub ap: Option<f64>,
    pub ar: Option<f64>,
    pub num_gts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ap: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub ap_vt: Option<f64>,
    pub ap_t: Option<f64>,
    pub ap_s: Option<f64>,
    pub ap_m: Option<f64>,
    /// Average recall at `max_det` detections per image, over all IoU thresholds.
    pub ar: Option<f64>,
    pub max_det: usize,
    /// AP over all IoU thresholds per category id.
    pub per_category: BTreeMap<u64, Option<f64>>,
    pub strata: Vec<StratumReport>,
    /// Detections whose category is not in the annotation file.
    pub unknown_category_dets: usize,
    /// Detections on images not in the annotation file.
    pub unknown_image_dets: usize,
}

impl EvalReport {
    pub const COLUMNS: [&'static str; 8] =
        ["AP", "AP50", "AP75", "AP_vt", "AP_t", "AP_s", "AP_m", "AR"];

    pub fn values(&self) -> [Option<f64>; 8] {
        [
            self.ap, self.ap50, self.ap75, self.ap_vt, self.ap_t, self.ap_s, self.ap_m, self.ar,
        ]
    }

    /// Plain-text table with values in percent, one decimal.
    pub fn to_table(&self) -> String {
        let cells: Vec<String> = self
            .values()
            .iter()
            .map(|v| v.map_or_else(|| "-".to_string(), |x| format!("{:.1}", 100.0 * x)))
            .collect();
        let widths: Vec<usize> = Self::COLUMNS
            .iter()
            .zip(&cells)
            .map(|(h, c)| h.len().max(c.len()))
            .collect();
        let mut out = String::new();
        let line = |items: Vec<&str>| -> String {
            items
                .iter()
                .zip(&widths)
                .map(|(s, w)| format!("{s:>w$}"))
                .collect::<Vec<_>>()
                .join("  ")
        };
        let _ = writeln!(out, "{}", line(Self::COLUMNS.to_vec()));
        let _ = writeln!(out, "{}", line(cells.iter().map(String::as_str).collect()));
        out
    }
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Per (category, range) accumulated outcomes.
#[derive(Default)]
struct Cell {
    /// `(score, matched per threshold, ignored per threshold)` over all images.
    dets: Vec<(f64, Vec<bool>, Vec<bool>)>,
    num_gts: usize,
    seen: bool,
}

/// Runs the full evaluation over an annotation set.
pub fn evaluate(dets: &[Detection], gt: &AnnotationSet, params: &EvalParams) -> EvalReport {
    let n_thr = params.iou_thresholds.len();
    let categories: Vec<u64> = {
        let mut c: Vec<u64> = gt.categories.iter().map(|c| c.id).collect();
        c.sort_unstable();
        c
    };
    let known_categories: HashSet<u64> = categories.iter().copied().collect();
    let image_ids: Vec<u64> = {
        let mut ids: Vec<u64> = gt.images.iter().map(|im| im.id).collect();
        ids.sort_unstable();
        ids
    };
    let known_images: HashSet<u64> = image_ids.iter().copied().collect();

    let mut gts_by_key: HashMap<(u64, u64), Vec<GroundTruth>> = HashMap::new();
    for a in &gt.annotations {
        gts_by_key
            .entry((a.image_id, a.category_id))
            .or_default()
            .push(GroundTruth {
                category_id: a.category_id,
                bbox: a.bbox,
                iscrowd: a.iscrowd,
            });
    }

    let mut unknown_category_dets = 0;
    let mut unknown_image_dets = 0;
    let mut dets_by_key: HashMap<(u64, u64), Vec<Detection>> = HashMap::new();
    for d in dets {
        if !known_images.contains(&d.image_id) {
            unknown_image_dets += 1;
            continue;
        }
        if !known_categories.contains(&d.category_id) {
            unknown_category_dets += 1;
            continue;
        }
        dets_by_key
            .entry((d.image_id, d.category_id))
            .or_default()
            .push(*d);
    }
    if unknown_category_dets > 0 {
        log::warn!("{unknown_category_dets} detection(s) with unknown category ids");
    }
    if unknown_image_dets > 0 {
        log::warn!("{unknown_image_dets} detection(s) on unknown images");
    }

    let mut cells: Vec<Vec<Cell>> = categories
        .iter()
        .map(|_| params.ranges.iter().map(|_| Cell::default()).collect())
        .collect();

    for (ki, &cat) in categories.iter().enumerate() {
        for &img in &image_ids {
            let gts = gts_by_key.get(&(img, cat)).map_or(&[][..], Vec::as_slice);
            let mut image_dets = dets_by_key.get(&(img, cat)).cloned().unwrap_or_default();
            if gts.is_empty() && image_dets.is_empty() {
                continue;
            }
            let order = score_order(&image_dets);
            image_dets = order
                .iter()
                .take(params.max_det)
                .map(|&i| image_dets[i])
                .collect();

            for (ai, range) in params.ranges.iter().enumerate() {
                let ignore_raw: Vec<bool> = gts
                    .iter()
                    .map(|g| g.iscrowd || !range.contains(&g.bbox))
                    .collect();
                let mut gt_order: Vec<usize> = (0..gts.len()).collect();
                gt_order.sort_by_key(|&g| ignore_raw[g]);
                let sorted: Vec<GroundTruth> = gt_order.iter().map(|&g| gts[g]).collect();
                let ignore: Vec<bool> = gt_order.iter().map(|&g| ignore_raw[g]).collect();
                let overlaps: Vec<Vec<f64>> = image_dets
                    .iter()
                    .map(|d| sorted.iter().map(|g| match_overlap(&d.bbox, g)).collect())
                    .collect();

                let mut matched = vec![vec![false; n_thr]; image_dets.len()];
                let mut ignored = vec![vec![false; n_thr]; image_dets.len()];
                for (ti, &thr) in params.iou_thresholds.iter().enumerate() {
                    let m = greedy_match(&image_dets, &sorted, &ignore, &overlaps, thr);
                    for (di, mg) in m.into_iter().enumerate() {
                        match mg {
                            Some(g) => {
                                matched[di][ti] = true;
                                ignored[di][ti] = ignore[g];
                            }
                            None => ignored[di][ti] = !range.contains(&image_dets[di].bbox),
                        }
                    }
                }

                let cell = &mut cells[ki][ai];
                cell.seen = true;
                cell.num_gts += ignore.iter().filter(|&&i| !i).count();
                for (di, d) in image_dets.iter().enumerate() {
                    cell.dets.push((
                        d.score,
                        std::mem::take(&mut matched[di]),
                        std::mem::take(&mut ignored[di]),
                    ));
                }
            }
        }
    }

    // precision[ki][ai][ti] and recall[ki][ai][ti]; None when the cell has no gts
    let mut ap_cells: Vec<Vec<Option<Vec<f64>>>> = Vec::with_capacity(categories.len());
    let mut ar_cells: Vec<Vec<Option<Vec<f64>>>> = Vec::with_capacity(categories.len());
    for row in &cells {
        let mut ap_row = Vec::with_capacity(row.len());
        let mut ar_row = Vec::with_capacity(row.len());
        for cell in row {
            if !cell.seen || cell.num_gts == 0 {
                ap_row.push(None);
                ar_row.push(None);
                continue;
            }
            let mut order: Vec<usize> = (0..cell.dets.len()).collect();
            order.sort_by(|&a, &b| cell.dets[b].0.total_cmp(&cell.dets[a].0).then(a.cmp(&b)));
            let mut aps = Vec::with_capacity(n_thr);
            let mut ars = Vec::with_capacity(n_thr);
            for ti in 0..n_thr {
                let ranked: Vec<bool> = order
                    .iter()
                    .map(|&i| &cell.dets[i])
                    .filter(|d| !d.2[ti])
                    .map(|d| d.1[ti])
                    .collect();
                let (ap, rc) = interpolated_ap(&ranked, cell.num_gts);
                aps.push(ap);
                ars.push(rc);
            }
            ap_row.push(Some(aps));
            ar_row.push(Some(ars));
        }
        ap_cells.push(ap_row);
        ar_cells.push(ar_row);
    }

    let summarize =
        |table: &Vec<Vec<Option<Vec<f64>>>>, ai: usize, ti: Option<usize>| -> Option<f64> {
            mean(
                table
                    .iter()
                    .filter_map(|row| row[ai].as_ref())
                    .flat_map(|v| match ti {
                        Some(t) => vec![v[t]],
                        None => v.clone(),
                    }),
            )
        };
    let thr_index = |target: f64| {
        params
            .iou_thresholds
            .iter()
            .position(|&t| (t - target).abs() < 1e-9)
    };

    let strata: Vec<StratumReport> = params
        .ranges
        .iter()
        .enumerate()
        .map(|(ai, r)| StratumReport {
            name: r.name.clone(),
            ap: summarize(&ap_cells, ai, None),
            ar: summarize(&ar_cells, ai, None),
            num_gts: cells.iter().map(|row| row[ai].num_gts).sum(),
        })
        .collect();
    let stratum_ap = |name: &str| {
        strata
            .iter()
            .skip(1)
            .find(|s| s.name == name)
            .and_then(|s| s.ap)
    };

    let per_category = categories
        .iter()
        .enumerate()
        .map(|(ki, &cat)| {
            (
                cat,
                ap_cells[ki]
                    .first()
                    .and_then(|c| c.as_ref())
                    .and_then(|v| mean(v.iter().copied())),
            )
        })
        .collect();

    EvalReport {
        ap: summarize(&ap_cells, 0, None),
        ap50: thr_index(0.5).and_then(|t| summarize(&ap_cells, 0, Some(t))),
        ap75: thr_index(0.75).and_then(|t| summarize(&ap_cells, 0, Some(t))),
        ap_vt: stratum_ap("vt"),
        ap_t: stratum_ap("t"),
        ap_s: stratum_ap("s"),
        ap_m: stratum_ap("m"),
        ar: summarize(&ar_cells, 0, None),
        max_det: params.max_det,
        per_category,
        strata,
        unknown_category_dets,
        unknown_image_dets,
    }
}
