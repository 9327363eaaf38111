//! Metric-vs-deviation curves and positive-sample statistics per scale
//! bucket.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::assignment::{AssignmentResult, Label};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::metrics::MetricKind;
use crate::scalar::Scalar;

/// Object scale bucket by absolute size `sqrt(w * h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleBucket {
    VeryTiny,
    Tiny,
    Small,
    Medium,
    Large,
}

impl ScaleBucket {
    pub const ALL: [ScaleBucket; 5] = [
        ScaleBucket::VeryTiny,
        ScaleBucket::Tiny,
        ScaleBucket::Small,
        ScaleBucket::Medium,
        ScaleBucket::Large,
    ];

    /// Half-open size range `[lo, hi)` in pixels.
    pub fn range(self) -> (f64, f64) {
        match self {
            ScaleBucket::VeryTiny => (2.0, 8.0),
            ScaleBucket::Tiny => (8.0, 16.0),
            ScaleBucket::Small => (16.0, 32.0),
            ScaleBucket::Medium => (32.0, 64.0),
            ScaleBucket::Large => (64.0, f64::INFINITY),
        }
    }

    /// Bucket of an absolute size; `None` below 2 px.
    pub fn of_size(size: f64) -> Option<ScaleBucket> {
        ScaleBucket::ALL.into_iter().find(|b| {
            let (lo, hi) = b.range();
            size >= lo && size < hi
        })
    }

    pub fn of_box<T: Scalar>(b: &BBox<T>) -> Option<ScaleBucket> {
        Self::of_size(b.absolute_size().as_f64())
    }

    pub fn short_name(self) -> &'static str {
        match self {
            ScaleBucket::VeryTiny => "vt",
            ScaleBucket::Tiny => "t",
            ScaleBucket::Small => "s",
            ScaleBucket::Medium => "m",
            ScaleBucket::Large => "l",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScaleBucket::VeryTiny => "very_tiny",
            ScaleBucket::Tiny => "tiny",
            ScaleBucket::Small => "small",
            ScaleBucket::Medium => "medium",
            ScaleBucket::Large => "large",
        }
    }
}

impl fmt::Display for ScaleBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ScaleBucket {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase();
        ScaleBucket::ALL
            .into_iter()
            .find(|b| b.name() == s || b.short_name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown scale bucket `{s}`")))
    }
}

/// Metric value between a fixed square and a second square moved along the
/// diagonal, sampled at integer deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationCurve<T> {
    pub metric: MetricKind<T>,
    pub box_scale: T,
    pub size_ratio: T,
    /// `(deviation in pixels, metric value)`, ascending deviation.
    pub points: Vec<(u32, T)>,
}

/// Box A is a square of side `scale` centered at the origin, box B a square
/// of side `scale * size_ratio` centered at `(d, d)` for `d = 0..=max_dev`.
///
/// The NWD constant comes from `metric` itself.
pub fn deviation_curve<T: Scalar>(
    metric: MetricKind<T>,
    scale: T,
    size_ratio: T,
    max_dev: u32,
) -> Result<DeviationCurve<T>> {
    metric.validate()?;
    let a = BBox::new(T::zero(), T::zero(), scale, scale)?;
    let side_b = scale * size_ratio;
    let points = (0..=max_dev)
        .map(|d| {
            let off = T::lit(d as f64);
            let b = BBox::new(off, off, side_b, side_b)?;
            Ok((d, metric.eval(&a, &b)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DeviationCurve {
        metric,
        box_scale: scale,
        size_ratio,
        points,
    })
}

/// Mean positives per gt in one scale bucket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BucketStat {
    pub gts: usize,
    pub mean_positives: f64,
}

/// Groups `pos_count_per_gt` by the scale bucket of each gt. Buckets with no
/// gts are absent from the map; gts below 2 px are not counted.
pub fn per_gt_positive_stats<T: Scalar>(
    result: &AssignmentResult<T>,
    gts: &[BBox<T>],
) -> Result<BTreeMap<ScaleBucket, BucketStat>> {
    if result.pos_count_per_gt.len() != gts.len() {
        return Err(Error::InvalidInput(format!(
            "assignment covers {} gts but {} were given",
            result.pos_count_per_gt.len(),
            gts.len()
        )));
    }
    let mut acc = PositiveStatsAccumulator::default();
    acc.add(result, gts)?;
    Ok(acc.finish())
}

/// Streaming version of [`per_gt_positive_stats`] for a pass over many images.
#[derive(Debug, Clone, Default)]
pub struct PositiveStatsAccumulator {
    sums: BTreeMap<ScaleBucket, (usize, usize)>,
}

impl PositiveStatsAccumulator {
    pub fn add<T: Scalar>(&mut self, result: &AssignmentResult<T>, gts: &[BBox<T>]) -> Result<()> {
        if result.pos_count_per_gt.len() != gts.len() {
            return Err(Error::InvalidInput(format!(
                "assignment covers {} gts but {} were given",
                result.pos_count_per_gt.len(),
                gts.len()
            )));
        }
        for (g, &count) in gts.iter().zip(&result.pos_count_per_gt) {
            if let Some(bucket) = ScaleBucket::of_box(g) {
                let e = self.sums.entry(bucket).or_insert((0, 0));
                e.0 += 1;
                e.1 += count;
            }
        }
        Ok(())
    }

    pub fn finish(&self) -> BTreeMap<ScaleBucket, BucketStat> {
        self.sums
            .iter()
            .map(|(&b, &(n, total))| {
                (
                    b,
                    BucketStat {
                        gts: n,
                        mean_positives: total as f64 / n as f64,
                    },
                )
            })
            .collect()
    }
}

/// Total positive and negative anchors over a set of assignments.
pub fn pos_neg_totals<'a, T, I>(results: I) -> (u64, u64)
where
    T: Scalar,
    I: IntoIterator<Item = &'a AssignmentResult<T>>,
{
    results.into_iter().fold((0, 0), |(p, n), r| {
        let (rp, rn) = r.labels.iter().fold((0u64, 0u64), |(p, n), l| match l {
            Label::Positive(_) => (p + 1, n),
            Label::Negative => (p, n + 1),
            Label::Ignore => (p, n),
        });
        (p + rp, n + rn)
    })
}

/// Ratio of the largest to the smallest bucket mean; infinite when some
/// bucket mean is zero.
pub fn bucket_imbalance(stats: &BTreeMap<ScaleBucket, BucketStat>) -> Option<f64> {
    let means = stats.values().map(|s| s.mean_positives);
    let max = means.clone().fold(f64::NEG_INFINITY, f64::max);
    let min = means.fold(f64::INFINITY, f64::min);
    if stats.is_empty() {
        None
    } else if min == 0.0 {
        Some(f64::INFINITY)
    } else {
        Some(max / min)
    }
}
