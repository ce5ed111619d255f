//! Corner-anchored crop rectangles and exact overlap arithmetic.
//!
//! All rectangles live in the pixel grid of the clip's Level-0 frame. A pixel
//! `(px, py)` belongs to a rectangle iff `x <= px < x + w` and `y <= py < y + h`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate crop: scale {scale} maps {width}x{height} to a zero-sized child")]
    DegenerateCrop { width: u32, height: u32, scale: f64 },
    #[error("invalid rectangle {0}: width and height must be at least 1")]
    EmptyRect(CropRect),
    #[error("rectangle {rect} does not fit inside a {width}x{height} frame")]
    OutsideFrame {
        rect: CropRect,
        width: u32,
        height: u32,
    },
    #[error("unknown corner `{0}` (expected UL, UR, BL or BR)")]
    UnknownCorner(String),
}

/// Axis-aligned crop in Level-0 pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CropRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl fmt::Display for CropRect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.x, self.y, self.w, self.h)
    }
}

impl CropRect {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    /// The whole frame.
    pub const fn full(width: u32, height: u32) -> Self {
        Self::new(0, 0, width, height)
    }

    pub fn area(&self) -> u64 {
        u64::from(self.w) * u64::from(self.h)
    }

    pub fn right(&self) -> u64 {
        u64::from(self.x) + u64::from(self.w)
    }

    pub fn bottom(&self) -> u64 {
        u64::from(self.y) + u64::from(self.h)
    }

    pub fn contains_pixel(&self, px: u32, py: u32) -> bool {
        px >= self.x
            && py >= self.y
            && u64::from(px) < self.right()
            && u64::from(py) < self.bottom()
    }

    /// `other` lies entirely within `self`.
    pub fn contains(&self, other: &CropRect) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }

    pub fn validate(&self, frame_width: u32, frame_height: u32) -> Result<(), GeometryError> {
        if self.w == 0 || self.h == 0 {
            return Err(GeometryError::EmptyRect(*self));
        }
        if self.right() > u64::from(frame_width) || self.bottom() > u64::from(frame_height) {
            return Err(GeometryError::OutsideFrame {
                rect: *self,
                width: frame_width,
                height: frame_height,
            });
        }
        Ok(())
    }

    /// Intersection rectangle, `None` when the overlap is empty.
    pub fn intersection(&self, other: &CropRect) -> Option<CropRect> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        if u64::from(x0) >= x1 || u64::from(y0) >= y1 {
            return None;
        }
        Some(CropRect::new(
            x0,
            y0,
            (x1 - u64::from(x0)) as u32,
            (y1 - u64::from(y0)) as u32,
        ))
    }
}

/// Corner at which a child crop is anchored inside its parent.
///
/// The derived ordering is UL < BL < UR < BR and is the tie-break order used
/// throughout the reduction search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Corner {
    UL,
    BL,
    UR,
    BR,
}

impl Corner {
    pub const ALL: [Corner; 4] = [Corner::UL, Corner::BL, Corner::UR, Corner::BR];

    pub fn as_str(&self) -> &'static str {
        match self {
            Corner::UL => "UL",
            Corner::BL => "BL",
            Corner::UR => "UR",
            Corner::BR => "BR",
        }
    }

    fn is_right(&self) -> bool {
        matches!(self, Corner::UR | Corner::BR)
    }

    fn is_bottom(&self) -> bool {
        matches!(self, Corner::BL | Corner::BR)
    }
}

impl fmt::Display for Corner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Corner {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "UL" => Ok(Corner::UL),
            "BL" => Ok(Corner::BL),
            "UR" => Ok(Corner::UR),
            "BR" => Ok(Corner::BR),
            other => Err(GeometryError::UnknownCorner(other.to_string())),
        }
    }
}

/// Scales a side length, rounding half away from zero.
fn scaled(len: u32, scale: f64) -> u32 {
    (f64::from(len) * scale).round() as u32
}

/// Child crop of `parent` anchored at `corner`, with each side scaled by `scale`.
pub fn child_rect(
    parent: &CropRect,
    corner: Corner,
    scale: f64,
) -> Result<CropRect, GeometryError> {
    let w = scaled(parent.w, scale);
    let h = scaled(parent.h, scale);
    if w == 0 || h == 0 {
        return Err(GeometryError::DegenerateCrop {
            width: parent.w,
            height: parent.h,
            scale,
        });
    }
    // Guard against scale > 1 requests; the child must stay inside the parent.
    let w = w.min(parent.w);
    let h = h.min(parent.h);
    let x = if corner.is_right() {
        parent.x + parent.w - w
    } else {
        parent.x
    };
    let y = if corner.is_bottom() {
        parent.y + parent.h - h
    } else {
        parent.y
    };
    Ok(CropRect::new(x, y, w, h))
}

/// Overlap quantities between two rectangles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub intersection_area: u64,
    pub iou: f64,
    /// Intersection divided by the area of the first rectangle.
    pub share_of_first: f64,
}

pub fn overlap(a: &CropRect, b: &CropRect) -> Overlap {
    let inter = a.intersection(b).map_or(0, |r| r.area());
    let union = a.area() + b.area() - inter;
    let iou = if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    };
    let share = if a.area() == 0 {
        0.0
    } else {
        inter as f64 / a.area() as f64
    };
    Overlap {
        intersection_area: inter,
        iou,
        share_of_first: share,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn child_rect_examples() {
        let p = CropRect::new(0, 0, 100, 100);
        assert_eq!(
            child_rect(&p, Corner::UL, 0.8).unwrap(),
            CropRect::new(0, 0, 80, 80)
        );
        assert_eq!(
            child_rect(&p, Corner::BR, 0.5).unwrap(),
            CropRect::new(50, 50, 50, 50)
        );
        let q = CropRect::new(10, 20, 101, 51);
        assert_eq!(
            child_rect(&q, Corner::UR, 0.8).unwrap(),
            CropRect::new(30, 20, 81, 41)
        );
    }

    #[test]
    fn child_rect_rounds_half_away_from_zero() {
        let p = CropRect::new(0, 0, 101, 3);
        let c = child_rect(&p, Corner::BL, 0.5).unwrap();
        // 50.5 -> 51, 1.5 -> 2
        assert_eq!(c, CropRect::new(0, 1, 51, 2));
    }

    #[test]
    fn degenerate_child_is_an_error() {
        let p = CropRect::new(0, 0, 1, 1);
        assert!(matches!(
            child_rect(&p, Corner::UL, 0.4),
            Err(GeometryError::DegenerateCrop { .. })
        ));
    }

    #[test]
    fn overlap_examples() {
        let a = CropRect::new(0, 0, 80, 80);
        let o = overlap(&a, &a);
        assert_eq!(o.iou, 1.0);
        assert_eq!(o.share_of_first, 1.0);

        let far = CropRect::new(200, 200, 5, 5);
        assert_eq!(overlap(&a, &far).iou, 0.0);
        assert_eq!(overlap(&a, &far).intersection_area, 0);

        let ur = CropRect::new(20, 0, 80, 80);
        let o = overlap(&a, &ur);
        assert_eq!(o.intersection_area, 4800);
        assert_eq!(o.share_of_first, 0.75);
    }

    #[test]
    fn touching_edges_do_not_intersect() {
        let a = CropRect::new(0, 0, 10, 10);
        let b = CropRect::new(10, 0, 10, 10);
        assert!(a.intersection(&b).is_none());
    }

    #[test]
    fn validate_rejects_out_of_frame() {
        assert!(CropRect::new(5, 5, 10, 10).validate(14, 20).is_err());
        assert!(CropRect::new(0, 0, 0, 10).validate(14, 20).is_err());
        assert!(CropRect::new(4, 5, 10, 10).validate(14, 20).is_ok());
    }

    #[test]
    fn corner_order() {
        let mut c = vec![Corner::BR, Corner::UR, Corner::UL, Corner::BL];
        c.sort();
        assert_eq!(c, vec![Corner::UL, Corner::BL, Corner::UR, Corner::BR]);
    }
}
