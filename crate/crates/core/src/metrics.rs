//! Pairwise box similarity and distance functions.
//!
//! The IoU family works on corner form. The Wasserstein-based metrics work on
//! the Gaussian model of each box (see [`crate::geometry::GaussianBox`]):
//! for axis-aligned Gaussians the squared 2-Wasserstein distance reduces to a
//! plain squared Euclidean distance between `(cx, cy, w/2, h/2)` vectors, and
//! NWD maps it into `(0, 1]` with `exp(-W2 / C)`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{BBox, GaussianBox};
use crate::scalar::Scalar;

/// NWD normalization constant: the mean absolute object size of the
/// AI-TOD-v2 trainval split.
pub const NWD_C_DEFAULT: f64 = 12.7;
/// Rounded NWD constant.
pub const NWD_C_ROUNDED: f64 = 12.0;

/// Which box metric to use, with its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricKind<T> {
    Iou,
    Giou,
    Diou,
    Ciou,
    /// Raw Gaussian Wasserstein distance. Smaller is more similar.
    Gwd,
    Nwd {
        c: T,
    },
}

impl<T: Scalar> MetricKind<T> {
    pub fn nwd(c: T) -> Result<Self> {
        check_nwd_constant(c)?;
        Ok(MetricKind::Nwd { c })
    }

    pub fn nwd_default() -> Self {
        MetricKind::Nwd {
            c: T::lit(NWD_C_DEFAULT),
        }
    }

    /// Parses a metric name; `c` is used when the name is `nwd`.
    pub fn parse_with_c(name: &str, c: T) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "iou" => Ok(MetricKind::Iou),
            "giou" => Ok(MetricKind::Giou),
            "diou" => Ok(MetricKind::Diou),
            "ciou" => Ok(MetricKind::Ciou),
            "gwd" => Ok(MetricKind::Gwd),
            "nwd" => MetricKind::nwd(c),
            other => Err(Error::InvalidParameter(format!("unknown metric `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::Iou => "iou",
            MetricKind::Giou => "giou",
            MetricKind::Diou => "diou",
            MetricKind::Ciou => "ciou",
            MetricKind::Gwd => "gwd",
            MetricKind::Nwd { .. } => "nwd",
        }
    }

    /// `false` only for GWD, where larger values mean less similar.
    pub fn is_similarity(&self) -> bool {
        !matches!(self, MetricKind::Gwd)
    }

    /// Value of `metric(a, b)` in its natural units.
    #[inline]
    pub fn eval(&self, a: &BBox<T>, b: &BBox<T>) -> T {
        match *self {
            MetricKind::Iou => iou(a, b),
            MetricKind::Giou => giou(a, b),
            MetricKind::Diou => diou(a, b),
            MetricKind::Ciou => ciou(a, b),
            MetricKind::Gwd => gwd(a, b),
            MetricKind::Nwd { c } => nwd_unchecked(a, b, c),
        }
    }

    /// Value oriented so that larger always means more similar. This is what
    /// the assigners rank and threshold on; for GWD it is the negated distance.
    #[inline]
    pub fn score(&self, a: &BBox<T>, b: &BBox<T>) -> T {
        let v = self.eval(a, b);
        if self.is_similarity() {
            v
        } else {
            -v
        }
    }

    /// Value of `metric(a, a)`.
    pub fn identity_value(&self) -> T {
        if self.is_similarity() {
            T::one()
        } else {
            T::zero()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let MetricKind::Nwd { c } = *self {
            check_nwd_constant(c)?;
        }
        Ok(())
    }
}

impl<T: Scalar> fmt::Display for MetricKind<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricKind::Nwd { c } => write!(f, "nwd(C={c})"),
            other => f.write_str(other.name()),
        }
    }
}

impl<T: Scalar> FromStr for MetricKind<T> {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse_with_c(s, T::lit(NWD_C_DEFAULT))
    }
}

fn check_nwd_constant<T: Scalar>(c: T) -> Result<()> {
    if c.is_finite() && c > T::zero() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "NWD constant C must be positive and finite, got {c}"
        )))
    }
}

/// Areas and overlap of two boxes, all computed from corner differences so
/// that `a == b` gives an intersection bit-equal to each area.
struct Overlap<T> {
    area_a: T,
    area_b: T,
    inter: T,
    // smallest enclosing box
    enc_w: T,
    enc_h: T,
}

#[inline]
fn overlap<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> Overlap<T> {
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(T::zero());
    let ih = (ay2.min(by2) - ay1.max(by1)).max(T::zero());
    Overlap {
        area_a: (ax2 - ax1) * (ay2 - ay1),
        area_b: (bx2 - bx1) * (by2 - by1),
        inter: iw * ih,
        enc_w: ax2.max(bx2) - ax1.min(bx1),
        enc_h: ay2.max(by2) - ay1.min(by1),
    }
}

impl<T: Scalar> Overlap<T> {
    #[inline]
    fn union(&self) -> T {
        self.area_a + self.area_b - self.inter
    }

    #[inline]
    fn iou(&self) -> T {
        self.inter / self.union()
    }
}

/// Intersection over union, in `[0, 1]`.
pub fn iou<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> T {
    overlap(a, b).iou()
}

/// Generalized IoU: `IoU - |C \ (A ∪ B)| / |C|` with `C` the smallest
/// enclosing box. Lies in `(-1, 1]`.
pub fn giou<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> T {
    let o = overlap(a, b);
    let union = o.union();
    let enc = o.enc_w * o.enc_h;
    o.inter / union - (enc - union) / enc
}

/// Distance IoU: `IoU - rho^2 / c^2`, where `rho` is the center distance and
/// `c` the diagonal of the enclosing box.
pub fn diou<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> T {
    let o = overlap(a, b);
    o.iou() - center_penalty(a, b, &o)
}

#[inline]
fn center_penalty<T: Scalar>(a: &BBox<T>, b: &BBox<T>, o: &Overlap<T>) -> T {
    let dx = a.cx() - b.cx();
    let dy = a.cy() - b.cy();
    let rho2 = dx * dx + dy * dy;
    let diag2 = o.enc_w * o.enc_w + o.enc_h * o.enc_h;
    rho2 / diag2
}

/// Complete IoU: DIoU minus an aspect-ratio consistency term `alpha * v`.
/// `alpha` is taken as zero when `v == 0`.
pub fn ciou<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> T {
    let o = overlap(a, b);
    let iou = o.iou();
    let diou = iou - center_penalty(a, b, &o);
    let datan = (a.w() / a.h()).atan() - (b.w() / b.h()).atan();
    let v = T::lit(4.0) / (T::PI() * T::PI()) * datan * datan;
    if v == T::zero() {
        return diou;
    }
    let alpha = v / ((T::one() - iou) + v);
    diou - alpha * v
}

/// Squared 2-Wasserstein distance between two axis-aligned Gaussians.
pub fn wasserstein_sq<T: Scalar>(a: &GaussianBox<T>, b: &GaussianBox<T>) -> T {
    let d = [
        a.mu[0] - b.mu[0],
        a.mu[1] - b.mu[1],
        a.sigma[0] - b.sigma[0],
        a.sigma[1] - b.sigma[1],
    ];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2] + d[3] * d[3]
}

/// Gaussian Wasserstein distance between the Gaussian models of two boxes.
pub fn gwd<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> T {
    wasserstein_sq(&a.to_gaussian(), &b.to_gaussian()).sqrt()
}

/// Normalized Wasserstein distance `exp(-W2 / c)`, in `(0, 1]`.
pub fn nwd<T: Scalar>(a: &BBox<T>, b: &BBox<T>, c: T) -> Result<T> {
    check_nwd_constant(c)?;
    Ok(nwd_unchecked(a, b, c))
}

#[inline]
fn nwd_unchecked<T: Scalar>(a: &BBox<T>, b: &BBox<T>, c: T) -> T {
    (-gwd(a, b) / c).exp()
}

/// Dense row-major `gts x anchors` matrix of metric values.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricMatrix<T> {
    rows: usize,
    cols: usize,
    values: Vec<T>,
}

impl<T: Scalar> MetricMatrix<T> {
    pub fn from_vec(rows: usize, cols: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.values[row * self.cols + col]
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[T] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }
}

// below this many entries the rayon split costs more than it saves
const PARALLEL_MIN_ENTRIES: usize = 1 << 14;

/// Evaluates `kind` for every `(gt, anchor)` pair. Entry `(i, j)` is exactly
/// `kind.eval(&gts[i], &anchors[j])`.
pub fn pairwise<T: Scalar>(
    kind: &MetricKind<T>,
    gts: &[BBox<T>],
    anchors: &[BBox<T>],
) -> MetricMatrix<T> {
    build_matrix(gts, anchors, |g, a| kind.eval(g, a))
}

/// Like [`pairwise`] but with values oriented so larger means more similar.
pub fn pairwise_scores<T: Scalar>(
    kind: &MetricKind<T>,
    gts: &[BBox<T>],
    anchors: &[BBox<T>],
) -> MetricMatrix<T> {
    build_matrix(gts, anchors, |g, a| kind.score(g, a))
}

fn build_matrix<T, F>(gts: &[BBox<T>], anchors: &[BBox<T>], f: F) -> MetricMatrix<T>
where
    T: Scalar,
    F: Fn(&BBox<T>, &BBox<T>) -> T + Sync,
{
    let rows = gts.len();
    let cols = anchors.len();
    let mut values = vec![T::zero(); rows * cols];
    if cols > 0 {
        let fill = |(i, row): (usize, &mut [T])| {
            let g = &gts[i];
            for (v, a) in row.iter_mut().zip(anchors) {
                *v = f(g, a);
            }
        };
        if rows * cols >= PARALLEL_MIN_ENTRIES {
            values.par_chunks_mut(cols).enumerate().for_each(fill);
        } else {
            values.chunks_mut(cols).enumerate().for_each(fill);
        }
    }
    MetricMatrix { rows, cols, values }
}
