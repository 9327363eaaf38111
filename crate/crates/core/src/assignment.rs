//! Anchor generation and anchor label assignment.
//!
//! Two assigners are provided:
//!
//! * [`assign_threshold`]: the classic max-IoU rule with positive/negative
//!   thresholds and a per-gt compensation step that forces each gt's best
//!   anchor positive.
//! * [`assign_rka`]: ranking-based assignment. Each gt takes its top-`k`
//!   anchors by score as positives and every other anchor is negative.
//!
//! Both accept any [`MetricKind`]; scores are always compared in "larger is
//! more similar" orientation (see [`MetricKind::score`]).

use std::cmp::Ordering;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::metrics::{pairwise_scores, MetricKind, MetricMatrix};
use crate::scalar::Scalar;

pub const DEFAULT_STRIDES: [f64; 5] = [4.0, 8.0, 16.0, 32.0, 64.0];
pub const DEFAULT_ANCHOR_SCALE: f64 = 8.0;
pub const DEFAULT_RATIOS: [f64; 3] = [0.5, 1.0, 2.0];
pub const DEFAULT_THETA_P: f64 = 0.7;
pub const DEFAULT_THETA_N: f64 = 0.3;
pub const DEFAULT_MIN_POS_METRIC: f64 = 0.3;
pub const DEFAULT_K: usize = 2;
pub const DEFAULT_BATCH: usize = 256;
pub const DEFAULT_POS_FRACTION: f64 = 1.0 / 3.0;

/// Anchor layout over a feature pyramid.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorConfig<T> {
    /// Pixels per feature-map cell, one entry per pyramid level.
    pub strides: Vec<T>,
    /// Anchor side is `anchor_scale * stride` (for ratio 1).
    pub anchor_scale: T,
    /// Aspect ratios `w / h`; anchors of one cell share the same area.
    pub ratios: Vec<T>,
    /// Clip anchors to the image; anchors left empty by clipping are dropped.
    pub clip_border: bool,
}

impl<T: Scalar> Default for AnchorConfig<T> {
    fn default() -> Self {
        Self {
            strides: DEFAULT_STRIDES.iter().map(|&s| T::lit(s)).collect(),
            anchor_scale: T::lit(DEFAULT_ANCHOR_SCALE),
            ratios: DEFAULT_RATIOS.iter().map(|&r| T::lit(r)).collect(),
            clip_border: false,
        }
    }
}

impl<T: Scalar> AnchorConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.strides.is_empty() {
            return Err(Error::InvalidConfig("no anchor strides".into()));
        }
        if self
            .strides
            .iter()
            .any(|s| !(s.is_finite() && *s > T::zero()))
        {
            return Err(Error::InvalidConfig("strides must be positive".into()));
        }
        if self.strides.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig(
                "strides must be strictly increasing".into(),
            ));
        }
        if !(self.anchor_scale.is_finite() && self.anchor_scale > T::zero()) {
            return Err(Error::InvalidConfig(format!(
                "anchor scale must be positive, got {}",
                self.anchor_scale
            )));
        }
        if self.ratios.is_empty()
            || self
                .ratios
                .iter()
                .any(|r| !(r.is_finite() && *r > T::zero()))
        {
            return Err(Error::InvalidConfig(
                "ratios must be non-empty and positive".into(),
            ));
        }
        Ok(())
    }

    /// Grid dimensions `(rows, cols)` of every level for an image.
    pub fn feature_sizes(&self, image_w: T, image_h: T) -> Vec<(usize, usize)> {
        self.strides
            .iter()
            .map(|&s| {
                let rows = (image_h / s).ceil().to_usize().unwrap_or(0);
                let cols = (image_w / s).ceil().to_usize().unwrap_or(0);
                (rows, cols)
            })
            .collect()
    }
}

/// Places anchors on every pyramid level. Ordering is level-major, then
/// row-major over the grid, then by ratio.
pub fn generate_anchors<T: Scalar>(
    config: &AnchorConfig<T>,
    image_w: T,
    image_h: T,
) -> Result<Vec<BBox<T>>> {
    config.validate()?;
    if !(image_w.is_finite() && image_h.is_finite() && image_w > T::zero() && image_h > T::zero()) {
        return Err(Error::InvalidInput(format!(
            "image size must be positive, got {image_w}x{image_h}"
        )));
    }
    let shapes: Vec<(T, T)> = config
        .ratios
        .iter()
        .map(|&r| (r.sqrt(), T::one() / r.sqrt()))
        .collect();

    let sizes = config.feature_sizes(image_w, image_h);
    let total: usize = sizes.iter().map(|(r, c)| r * c * shapes.len()).sum();
    let mut anchors = Vec::with_capacity(total);
    for (&stride, &(rows, cols)) in config.strides.iter().zip(&sizes) {
        let side = config.anchor_scale * stride;
        for i in 0..rows {
            let cy = (T::lit(i as f64) + T::half()) * stride;
            for j in 0..cols {
                let cx = (T::lit(j as f64) + T::half()) * stride;
                for &(wr, hr) in &shapes {
                    let anchor = BBox::new(cx, cy, side * wr, side * hr)?;
                    if config.clip_border {
                        if let Some(clipped) = clip_to_image(&anchor, image_w, image_h) {
                            anchors.push(clipped);
                        }
                    } else {
                        anchors.push(anchor);
                    }
                }
            }
        }
    }
    Ok(anchors)
}

fn clip_to_image<T: Scalar>(b: &BBox<T>, image_w: T, image_h: T) -> Option<BBox<T>> {
    let (x1, y1, x2, y2) = b.corners();
    let clamp = |v: T, hi: T| v.max(T::zero()).min(hi);
    BBox::from_corners(
        clamp(x1, image_w),
        clamp(y1, image_h),
        clamp(x2, image_w),
        clamp(y2, image_h),
    )
    .ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Max-metric rule with positive/negative thresholds plus compensation.
    Threshold,
    /// Ranking-based assignment (top-k per gt).
    Rka,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "threshold" | "threshold-iou" | "max-iou" => Ok(Strategy::Threshold),
            "rka" | "ranking" => Ok(Strategy::Rka),
            other => Err(Error::InvalidParameter(format!(
                "unknown strategy `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Threshold => "threshold",
            Strategy::Rka => "rka",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignerConfig<T> {
    pub strategy: Strategy,
    pub metric: MetricKind<T>,
    /// Threshold assigner: anchors scoring at least this are positive.
    pub theta_p: T,
    /// Threshold assigner: anchors whose best score is below this are negative.
    pub theta_n: T,
    /// Threshold assigner: a gt's best anchor is forced positive only when
    /// its score reaches this value. Zero always compensates for the IoU
    /// family; GWD scores are negated distances and need `-inf`.
    pub min_pos_metric: T,
    /// RKA: positives per gt.
    pub k: usize,
}

impl<T: Scalar> Default for AssignerConfig<T> {
    fn default() -> Self {
        Self::rka(DEFAULT_K, MetricKind::nwd_default())
    }
}

impl<T: Scalar> AssignerConfig<T> {
    pub fn rka(k: usize, metric: MetricKind<T>) -> Self {
        Self {
            strategy: Strategy::Rka,
            metric,
            theta_p: T::lit(DEFAULT_THETA_P),
            theta_n: T::lit(DEFAULT_THETA_N),
            min_pos_metric: T::lit(DEFAULT_MIN_POS_METRIC),
            k,
        }
    }

    pub fn threshold(metric: MetricKind<T>, theta_p: T, theta_n: T) -> Self {
        Self {
            strategy: Strategy::Threshold,
            metric,
            theta_p,
            theta_n,
            min_pos_metric: T::lit(DEFAULT_MIN_POS_METRIC),
            k: DEFAULT_K,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.metric.validate()?;
        let (p, n) = (self.theta_p, self.theta_n);
        if !(T::zero() <= n && n <= p && p <= T::one()) {
            return Err(Error::InvalidConfig(format!(
                "thresholds must satisfy 0 <= theta_n <= theta_p <= 1, got theta_n={n}, theta_p={p}"
            )));
        }
        if self.min_pos_metric.is_nan() {
            return Err(Error::InvalidConfig("min_pos_metric is NaN".into()));
        }
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Positive(usize),
    Negative,
    Ignore,
}

impl Label {
    /// `gt index`, `-1` for negative, `-2` for ignore.
    pub fn to_flat(self) -> i64 {
        match self {
            Label::Positive(i) => i as i64,
            Label::Negative => -1,
            Label::Ignore => -2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult<T> {
    pub labels: Vec<Label>,
    pub pos_count_per_gt: Vec<usize>,
    /// Best score of each gt over all anchors; `-inf` when there are no anchors.
    pub max_metric_per_gt: Vec<T>,
}

impl<T: Scalar> AssignmentResult<T> {
    fn from_labels(labels: Vec<Label>, max_metric_per_gt: Vec<T>) -> Self {
        let mut pos_count_per_gt = vec![0; max_metric_per_gt.len()];
        for l in &labels {
            if let Label::Positive(i) = *l {
                pos_count_per_gt[i] += 1;
            }
        }
        Self {
            labels,
            pos_count_per_gt,
            max_metric_per_gt,
        }
    }

    pub fn num_gts(&self) -> usize {
        self.pos_count_per_gt.len()
    }

    pub fn num_positive(&self) -> usize {
        self.labels
            .iter()
            .filter(|l| matches!(l, Label::Positive(_)))
            .count()
    }

    pub fn num_negative(&self) -> usize {
        self.labels
            .iter()
            .filter(|l| **l == Label::Negative)
            .count()
    }

    pub fn num_ignored(&self) -> usize {
        self.labels.iter().filter(|l| **l == Label::Ignore).count()
    }

    pub fn positive_indices(&self) -> Vec<usize> {
        self.indices_where(|l| matches!(l, Label::Positive(_)))
    }

    pub fn negative_indices(&self) -> Vec<usize> {
        self.indices_where(|l| l == Label::Negative)
    }

    fn indices_where(&self, pred: impl Fn(Label) -> bool) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| pred(**l))
            .map(|(j, _)| j)
            .collect()
    }

    pub fn flat_labels(&self) -> Vec<i64> {
        self.labels.iter().map(|l| l.to_flat()).collect()
    }
}

/// Runs the assigner selected by `cfg.strategy`.
pub fn assign<T: Scalar>(
    cfg: &AssignerConfig<T>,
    gts: &[BBox<T>],
    anchors: &[BBox<T>],
) -> Result<AssignmentResult<T>> {
    match cfg.strategy {
        Strategy::Threshold => assign_threshold(cfg, gts, anchors),
        Strategy::Rka => assign_rka(cfg, gts, anchors),
    }
}

/// Index of the first maximum.
fn argmax<T: Scalar>(values: &[T]) -> Option<(usize, T)> {
    let mut best: Option<(usize, T)> = None;
    for (j, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((j, v)),
        }
    }
    best
}

fn row_maxima<T: Scalar>(scores: &MetricMatrix<T>) -> Vec<T> {
    (0..scores.rows())
        .map(|i| argmax(scores.row(i)).map_or(T::neg_infinity(), |(_, v)| v))
        .collect()
}

/// Threshold-based assignment.
///
/// Anchor `j` is positive for the gt that maximizes its score when that
/// maximum is at least `theta_p`, negative when the maximum is below
/// `theta_n`, and ignored otherwise. Then, in gt order, each gt's best anchor
/// (lowest index on ties) is forced positive for that gt if its score is at
/// least `min_pos_metric`; a later gt overrides an earlier one on the same
/// anchor.
pub fn assign_threshold<T: Scalar>(
    cfg: &AssignerConfig<T>,
    gts: &[BBox<T>],
    anchors: &[BBox<T>],
) -> Result<AssignmentResult<T>> {
    cfg.validate()?;
    if gts.is_empty() {
        return Ok(AssignmentResult::from_labels(
            vec![Label::Negative; anchors.len()],
            Vec::new(),
        ));
    }
    let scores = pairwise_scores(&cfg.metric, gts, anchors);

    let mut labels: Vec<Label> = (0..anchors.len())
        .map(|j| {
            let mut best_gt = 0;
            let mut best = scores.get(0, j);
            for i in 1..gts.len() {
                let v = scores.get(i, j);
                if v > best {
                    best = v;
                    best_gt = i;
                }
            }
            if best >= cfg.theta_p {
                Label::Positive(best_gt)
            } else if best < cfg.theta_n {
                Label::Negative
            } else {
                Label::Ignore
            }
        })
        .collect();

    let mut max_per_gt = Vec::with_capacity(gts.len());
    for i in 0..gts.len() {
        match argmax(scores.row(i)) {
            Some((j, v)) => {
                if v >= cfg.min_pos_metric {
                    labels[j] = Label::Positive(i);
                }
                max_per_gt.push(v);
            }
            None => max_per_gt.push(T::neg_infinity()),
        }
    }
    Ok(AssignmentResult::from_labels(labels, max_per_gt))
}

/// Orders anchor indices by descending score, lower index first on ties.
fn rank_desc<T: Scalar>(row: &[T], a: usize, b: usize) -> Ordering {
    row[b]
        .partial_cmp(&row[a])
        .unwrap_or(Ordering::Equal)
        .then(a.cmp(&b))
}

/// The `k` best anchors of a score row, best first.
fn top_k<T: Scalar>(row: &[T], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k, |&a, &b| rank_desc(row, a, b));
        idx.truncate(k);
    }
    idx.sort_unstable_by(|&a, &b| rank_desc(row, a, b));
    idx
}

/// Ranking-based assignment.
///
/// Every gt claims its `k` highest-scoring anchors (lower anchor index on
/// ties). An anchor claimed by several gts goes to the gt with the highest
/// score for it, lower gt index on ties. Unclaimed anchors are negative; there
/// is no ignore band.
///
/// A gt that loses all of its claims keeps one positive: walking its ranking
/// it takes the first anchor that is either negative or held by a gt with at
/// least two positives. With at least as many anchors as gts every gt
/// therefore ends with one or more positives.
pub fn assign_rka<T: Scalar>(
    cfg: &AssignerConfig<T>,
    gts: &[BBox<T>],
    anchors: &[BBox<T>],
) -> Result<AssignmentResult<T>> {
    cfg.validate()?;
    let scores = pairwise_scores(&cfg.metric, gts, anchors);
    let max_per_gt = row_maxima(&scores);
    let n = anchors.len();

    let mut owner: Vec<Option<(usize, T)>> = vec![None; n];
    for i in 0..gts.len() {
        let row = scores.row(i);
        for j in top_k(row, cfg.k) {
            let s = row[j];
            match owner[j] {
                Some((_, held)) if s <= held => {}
                _ => owner[j] = Some((i, s)),
            }
        }
    }

    let mut labels: Vec<Label> = owner
        .iter()
        .map(|o| o.map_or(Label::Negative, |(i, _)| Label::Positive(i)))
        .collect();
    let mut counts = vec![0usize; gts.len()];
    for l in &labels {
        if let Label::Positive(i) = *l {
            counts[i] += 1;
        }
    }

    for i in 0..gts.len() {
        if counts[i] > 0 || n == 0 {
            continue;
        }
        let row = scores.row(i);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_unstable_by(|&a, &b| rank_desc(row, a, b));
        for j in order {
            let available = match labels[j] {
                Label::Positive(o) => counts[o] >= 2,
                _ => true,
            };
            if available {
                if let Label::Positive(o) = labels[j] {
                    counts[o] -= 1;
                }
                labels[j] = Label::Positive(i);
                counts[i] += 1;
                break;
            }
        }
    }

    Ok(AssignmentResult::from_labels(labels, max_per_gt))
}

/// Anchor indices drawn for one training batch.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SampledIndices {
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

/// Draws up to `floor(batch * pos_fraction)` positives uniformly without
/// replacement, then fills the rest of the batch with negatives. Returned
/// indices are sorted.
pub fn sample<T: Scalar>(
    result: &AssignmentResult<T>,
    batch: usize,
    pos_fraction: f64,
    seed: u64,
) -> Result<SampledIndices> {
    if !(0.0..=1.0).contains(&pos_fraction) {
        return Err(Error::InvalidParameter(format!(
            "pos_fraction must lie in [0, 1], got {pos_fraction}"
        )));
    }
    let pos = result.positive_indices();
    let neg = result.negative_indices();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let pos_target = (batch as f64 * pos_fraction).floor() as usize;
    let n_pos = pos_target.min(pos.len());
    let n_neg = (batch - n_pos).min(neg.len());

    let mut draw = |pool: &[usize], amount: usize| -> Vec<usize> {
        let mut picked: Vec<usize> = index::sample(&mut rng, pool.len(), amount)
            .into_iter()
            .map(|k| pool[k])
            .collect();
        picked.sort_unstable();
        picked
    };
    let positives = draw(&pos, n_pos);
    let negatives = draw(&neg, n_neg);
    Ok(SampledIndices {
        positives,
        negatives,
    })
}
