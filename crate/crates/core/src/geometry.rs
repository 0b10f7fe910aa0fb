use serde::{Deserialize, Serialize};

/// Axis-aligned box as center, width and height in image pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxXywh {
    pub x_c: f64,
    pub y_c: f64,
    pub w: f64,
    pub h: f64,
}

impl BoxXywh {
    pub fn new(x_c: f64, y_c: f64, w: f64, h: f64) -> Self {
        Self { x_c, y_c, w, h }
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            x_c: 0.5 * (x0 + x1),
            y_c: 0.5 * (y0 + y1),
            w: x1 - x0,
            h: y1 - y0,
        }
    }

    /// `(x0, y0, x1, y1)`.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.x_c - 0.5 * self.w,
            self.y_c - 0.5 * self.h,
            self.x_c + 0.5 * self.w,
            self.y_c + 0.5 * self.h,
        )
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn iou(&self, other: &BoxXywh) -> f64 {
        let (ax0, ay0, ax1, ay1) = self.corners();
        let (bx0, by0, bx1, by1) = other.corners();
        let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
        let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Clip to `[0, width] x [0, height]`; `None` if nothing remains.
    pub fn clip(&self, width: f64, height: f64) -> Option<BoxXywh> {
        let (x0, y0, x1, y1) = self.corners();
        let (x0, y0) = (x0.max(0.0), y0.max(0.0));
        let (x1, y1) = (x1.min(width), y1.min(height));
        if x1 > x0 && y1 > y0 {
            Some(BoxXywh::from_corners(x0, y0, x1, y1))
        } else {
            None
        }
    }
}

/// Tight pixel hull of a binary mask stored row-major. Pixel `(x, y)` covers
/// `[x, x + 1) x [y, y + 1)`.
pub fn mask_hull(mask: &[bool], width: usize) -> Option<BoxXywh> {
    let mut x0 = usize::MAX;
    let mut y0 = usize::MAX;
    let mut x1 = 0;
    let mut y1 = 0;
    let mut any = false;
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let (y, x) = (i / width, i % width);
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
        any = true;
    }
    any.then(|| BoxXywh::from_corners(x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_of_identical_boxes_is_one() {
        let b = BoxXywh::new(10.0, 10.0, 4.0, 6.0);
        assert_eq!(b.iou(&b), 1.0);
    }

    #[test]
    fn iou_of_half_overlap() {
        let a = BoxXywh::from_corners(0.0, 0.0, 2.0, 1.0);
        let b = BoxXywh::from_corners(1.0, 0.0, 3.0, 1.0);
        assert!((a.iou(&b) - 1.0 / 3.0).abs() < 1e-12);
        let c = BoxXywh::from_corners(5.0, 5.0, 6.0, 6.0);
        assert_eq!(a.iou(&c), 0.0);
    }

    #[test]
    fn hull_is_tight() {
        let mut m = vec![false; 5 * 4];
        m[1 * 5 + 2] = true;
        m[3 * 5 + 3] = true;
        let b = mask_hull(&m, 5).unwrap();
        assert_eq!(b.corners(), (2.0, 1.0, 4.0, 4.0));
        assert!(mask_hull(&[false; 4], 2).is_none());
    }
}
