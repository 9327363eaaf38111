//! Axis-aligned boxes and their 2D Gaussian model.
//!
//! Boxes are stored in center form `(cx, cy, w, h)`. Construction rejects
//! non-finite coordinates and non-positive extents, so every downstream
//! metric can assume a valid box.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Axis-aligned rectangle in center form, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox<T> {
    cx: T,
    cy: T,
    w: T,
    h: T,
}

impl<T: Scalar> BBox<T> {
    pub fn new(cx: T, cy: T, w: T, h: T) -> Result<Self> {
        if !(cx.is_finite() && cy.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(Error::InvalidBox(format!(
                "non-finite component in ({cx}, {cy}, {w}, {h})"
            )));
        }
        if w <= T::zero() || h <= T::zero() {
            return Err(Error::InvalidBox(format!(
                "width and height must be positive, got w={w}, h={h}"
            )));
        }
        Ok(Self { cx, cy, w, h })
    }

    /// Builds a box from its corners `(x1, y1, x2, y2)`.
    pub fn from_corners(x1: T, y1: T, x2: T, y2: T) -> Result<Self> {
        if !(x2 > x1 && y2 > y1) {
            return Err(Error::InvalidBox(format!(
                "degenerate corners ({x1}, {y1}, {x2}, {y2})"
            )));
        }
        Self::new(
            (x1 + x2) * T::half(),
            (y1 + y2) * T::half(),
            x2 - x1,
            y2 - y1,
        )
    }

    /// Builds a box from a COCO-style `[x, y, w, h]` with top-left origin.
    pub fn from_xywh(x: T, y: T, w: T, h: T) -> Result<Self> {
        Self::new(x + w * T::half(), y + h * T::half(), w, h)
    }

    #[inline]
    pub fn cx(&self) -> T {
        self.cx
    }

    #[inline]
    pub fn cy(&self) -> T {
        self.cy
    }

    #[inline]
    pub fn w(&self) -> T {
        self.w
    }

    #[inline]
    pub fn h(&self) -> T {
        self.h
    }

    /// `(x1, y1, x2, y2)`.
    #[inline]
    pub fn corners(&self) -> (T, T, T, T) {
        let hw = self.w * T::half();
        let hh = self.h * T::half();
        (self.cx - hw, self.cy - hh, self.cx + hw, self.cy + hh)
    }

    /// COCO `[x, y, w, h]` with top-left origin.
    pub fn to_xywh(&self) -> [T; 4] {
        let (x1, y1, _, _) = self.corners();
        [x1, y1, self.w, self.h]
    }

    #[inline]
    pub fn area(&self) -> T {
        self.w * self.h
    }

    /// Absolute object size, `sqrt(w * h)`.
    #[inline]
    pub fn absolute_size(&self) -> T {
        self.area().sqrt()
    }

    /// Same box moved by `(dx, dy)`.
    pub fn translated(&self, dx: T, dy: T) -> Result<Self> {
        Self::new(self.cx + dx, self.cy + dy, self.w, self.h)
    }

    pub fn to_gaussian(&self) -> GaussianBox<T> {
        GaussianBox {
            mu: [self.cx, self.cy],
            sigma: [self.w * T::half(), self.h * T::half()],
        }
    }

    pub fn cast<U: Scalar>(&self) -> BBox<U> {
        BBox {
            cx: U::lit(self.cx.as_f64()),
            cy: U::lit(self.cy.as_f64()),
            w: U::lit(self.w.as_f64()),
            h: U::lit(self.h.as_f64()),
        }
    }
}

/// Axis-aligned 2D Gaussian: mean `mu` and per-axis standard deviations
/// `sigma`. The covariance is `diag(sigma_x^2, sigma_y^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianBox<T> {
    pub mu: [T; 2],
    pub sigma: [T; 2],
}

impl<T: Scalar> GaussianBox<T> {
    /// The 2x2 covariance matrix, row-major.
    pub fn covariance(&self) -> [[T; 2]; 2] {
        [
            [self.sigma[0] * self.sigma[0], T::zero()],
            [T::zero(), self.sigma[1] * self.sigma[1]],
        ]
    }

    /// Recovers the box whose inscribed ellipse is this Gaussian's unit
    /// density contour.
    pub fn to_box(&self) -> Result<BBox<T>> {
        BBox::new(
            self.mu[0],
            self.mu[1],
            self.sigma[0] * T::two(),
            self.sigma[1] * T::two(),
        )
    }
}

/// Models a box as the Gaussian with mean at its center and covariance
/// `diag(w^2/4, h^2/4)`.
pub fn box_to_gaussian<T: Scalar>(b: &BBox<T>) -> GaussianBox<T> {
    b.to_gaussian()
}

pub fn corners_to_center<T: Scalar>(x1: T, y1: T, x2: T, y2: T) -> Result<BBox<T>> {
    BBox::from_corners(x1, y1, x2, y2)
}

pub fn center_to_corners<T: Scalar>(b: &BBox<T>) -> (T, T, T, T) {
    b.corners()
}

pub fn box_absolute_size<T: Scalar>(b: &BBox<T>) -> T {
    b.absolute_size()
}
