//! Axis-aligned boxes, encodings, IoU and generalized IoU.
//!
//! The canonical encoding is corner form in pixels (`left`, `top`, `width`,
//! `height`), the layout of MOTChallenge files. Losses work on the
//! normalized center view ([`CenterBox`]).

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("image size must be positive, got {width}x{height}")]
    InvalidImageSize { width: f64, height: f64 },
    #[error("box extents must be non-negative, got width {width} height {height}")]
    NegativeExtent { width: f64, height: f64 },
}

/// Image dimensions in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageSize {
    pub width: f64,
    pub height: f64,
}

impl ImageSize {
    pub fn new(width: f64, height: f64) -> Result<Self, GeometryError> {
        if !(width > 0.0 && height > 0.0) || !width.is_finite() || !height.is_finite() {
            return Err(GeometryError::InvalidImageSize { width, height });
        }
        Ok(Self { width, height })
    }
}

/// Pixel box in corner form.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BBox {
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
}

/// Box in center form, every field normalized by the image size.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CenterBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

/// Target encoding for [`convert`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    PixelCorner,
    NormalizedCenter,
}

/// A box in either encoding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnyBox {
    Corner(BBox),
    Center(CenterBox),
}

impl BBox {
    pub const fn new(left: f64, top: f64, width: f64, height: f64) -> Self {
        Self { left, top, width, height }
    }

    /// Builds a box, rejecting negative extents.
    pub fn try_new(left: f64, top: f64, width: f64, height: f64) -> Result<Self, GeometryError> {
        if width < 0.0 || height < 0.0 || width.is_nan() || height.is_nan() {
            return Err(GeometryError::NegativeExtent { width, height });
        }
        Ok(Self::new(left, top, width, height))
    }

    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self::new(x1, y1, (x2 - x1).max(0.0), (y2 - y1).max(0.0))
    }

    pub fn right(&self) -> f64 {
        self.left + self.width
    }

    pub fn bottom(&self) -> f64 {
        self.top + self.height
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn center(&self) -> (f64, f64) {
        (self.left + 0.5 * self.width, self.top + 0.5 * self.height)
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.left, self.top, self.right(), self.bottom()]
    }

    pub fn to_center(&self, image: ImageSize) -> CenterBox {
        let (cx, cy) = self.center();
        CenterBox {
            cx: cx / image.width,
            cy: cy / image.height,
            w: self.width / image.width,
            h: self.height / image.height,
        }
    }

    /// Intersection with the image rectangle `[0, W] x [0, H]`.
    pub fn clip_to(&self, image: ImageSize) -> BBox {
        let x1 = self.left.clamp(0.0, image.width);
        let y1 = self.top.clamp(0.0, image.height);
        let x2 = self.right().clamp(0.0, image.width);
        let y2 = self.bottom().clamp(0.0, image.height);
        BBox::from_corners(x1, y1, x2, y2)
    }
}

impl CenterBox {
    pub const fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_pixels(&self, image: ImageSize) -> BBox {
        let w = self.w * image.width;
        let h = self.h * image.height;
        BBox::new(self.cx * image.width - 0.5 * w, self.cy * image.height - 0.5 * h, w, h)
    }

    pub fn corners(&self) -> [f64; 4] {
        [
            self.cx - 0.5 * self.w,
            self.cy - 0.5 * self.h,
            self.cx + 0.5 * self.w,
            self.cy + 0.5 * self.h,
        ]
    }
}

/// Re-encodes `b` into `target` for an image of the given size.
pub fn convert(b: AnyBox, target: Encoding, width: f64, height: f64) -> Result<AnyBox, GeometryError> {
    let image = ImageSize::new(width, height)?;
    Ok(match (b, target) {
        (AnyBox::Corner(c), Encoding::NormalizedCenter) => AnyBox::Center(c.to_center(image)),
        (AnyBox::Center(c), Encoding::PixelCorner) => AnyBox::Corner(c.to_pixels(image)),
        (same, _) => same,
    })
}

fn span(lo_a: f64, hi_a: f64, lo_b: f64, hi_b: f64) -> f64 {
    (hi_a.min(hi_b) - lo_a.max(lo_b)).max(0.0)
}

/// IoU of two boxes given as `[x1, y1, x2, y2]`.
pub fn iou_corners(a: [f64; 4], b: [f64; 4]) -> f64 {
    let inter = span(a[0], a[2], b[0], b[2]) * span(a[1], a[3], b[1], b[3]);
    let area_a = (a[2] - a[0]).max(0.0) * (a[3] - a[1]).max(0.0);
    let area_b = (b[2] - b[0]).max(0.0) * (b[3] - b[1]).max(0.0);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Generalized IoU of two boxes given as `[x1, y1, x2, y2]`.
pub fn giou_corners(a: [f64; 4], b: [f64; 4]) -> f64 {
    let inter = span(a[0], a[2], b[0], b[2]) * span(a[1], a[3], b[1], b[3]);
    let area_a = (a[2] - a[0]).max(0.0) * (a[3] - a[1]).max(0.0);
    let area_b = (b[2] - b[0]).max(0.0) * (b[3] - b[1]).max(0.0);
    let union = area_a + area_b - inter;
    let hull = (a[2].max(b[2]) - a[0].min(b[0])).max(0.0) * (a[3].max(b[3]) - a[1].min(b[1])).max(0.0);
    if hull <= 0.0 {
        return 0.0;
    }
    let iou = if union <= 0.0 { 0.0 } else { inter / union };
    iou - (hull - union) / hull
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    iou_corners(a.corners(), b.corners())
}

pub fn giou(a: &BBox, b: &BBox) -> f64 {
    giou_corners(a.corners(), b.corners())
}

/// GIoU of two center-form boxes and its gradient with respect to `a`.
///
/// At coincident edges the edge of `a` is taken to bound both the
/// intersection and the enclosing box, which makes the gradient vanish
/// when `a == b`.
pub fn giou_center_with_grad(a: &CenterBox, b: &CenterBox) -> (f64, [f64; 4]) {
    let [ax1, ay1, ax2, ay2] = a.corners();
    let [bx1, by1, bx2, by2] = b.corners();

    let aw = ax2 - ax1;
    let ah = ay2 - ay1;
    let area_a = aw.max(0.0) * ah.max(0.0);
    let area_b = (bx2 - bx1).max(0.0) * (by2 - by1).max(0.0);

    let ix1 = ax1.max(bx1);
    let ix2 = ax2.min(bx2);
    let iy1 = ay1.max(by1);
    let iy2 = ay2.min(by2);
    let iw = (ix2 - ix1).max(0.0);
    let ih = (iy2 - iy1).max(0.0);
    let inter = iw * ih;
    let union = area_a + area_b - inter;

    let cx1 = ax1.min(bx1);
    let cx2 = ax2.max(bx2);
    let cy1 = ay1.min(by1);
    let cy2 = ay2.max(by2);
    let cw = cx2 - cx1;
    let ch = cy2 - cy1;
    let hull = cw * ch;

    if hull <= 0.0 {
        return (0.0, [0.0; 4]);
    }
    let iou = if union <= 0.0 { 0.0 } else { inter / union };
    let value = iou - (hull - union) / hull;
    if union <= 0.0 {
        return (value, [0.0; 4]);
    }

    // d/d(ax1, ay1, ax2, ay2)
    let d_area = [-ah, -aw, ah, aw];
    let owns_ix1 = ax1 >= bx1;
    let owns_ix2 = ax2 <= bx2;
    let owns_iy1 = ay1 >= by1;
    let owns_iy2 = ay2 <= by2;
    let d_inter = if iw > 0.0 && ih > 0.0 {
        [
            if owns_ix1 { -ih } else { 0.0 },
            if owns_iy1 { -iw } else { 0.0 },
            if owns_ix2 { ih } else { 0.0 },
            if owns_iy2 { iw } else { 0.0 },
        ]
    } else {
        [0.0; 4]
    };
    let d_hull = [
        if ax1 <= bx1 { -ch } else { 0.0 },
        if ay1 <= by1 { -cw } else { 0.0 },
        if ax2 >= bx2 { ch } else { 0.0 },
        if ay2 >= by2 { cw } else { 0.0 },
    ];

    let mut d_corner = [0.0; 4];
    for k in 0..4 {
        let d_union = d_area[k] - d_inter[k];
        let d_iou = d_inter[k] / union - inter * d_union / (union * union);
        d_corner[k] = d_iou + d_union / hull - union * d_hull[k] / (hull * hull);
    }
    // corners -> center form: x1 = cx - w/2, x2 = cx + w/2
    let grad = [
        d_corner[0] + d_corner[2],
        d_corner[1] + d_corner[3],
        0.5 * (d_corner[2] - d_corner[0]),
        0.5 * (d_corner[3] - d_corner[1]),
    ];
    (value, grad)
}
