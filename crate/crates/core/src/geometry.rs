//! Box arithmetic, IoU and pixel-center raster masks.
//!
//! Boxes are axis-aligned, center form, in absolute pixels. A pixel
//! `(px, py)` belongs to a box when its center `(px + 0.5, py + 0.5)` lies in
//! the half-open rectangle `[x0, x1) × [y0, y1)`.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

/// Slack allowed when deciding whether a box already lies inside an image.
/// Keeps clamping idempotent under float rounding of the center/extent form.
pub const CLAMP_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl ImageSize {
    pub const fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// The box covering the whole image.
    pub fn full_box(&self) -> BBox {
        BBox { cx: self.width as f64 / 2.0, cy: self.height as f64 / 2.0, w: self.width as f64, h: self.height as f64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoxError {
    NonPositiveExtent,
    NonFinite,
    /// The box has no overlap with the image after clamping.
    OutsideImage,
    /// A normalized component fell outside `[0, 1]`.
    ComponentOutOfRange {
        component: usize,
        value: f64,
    },
}

impl fmt::Display for BoxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoxError::NonPositiveExtent => f.write_str("non-positive box extent"),
            BoxError::NonFinite => f.write_str("non-finite box coordinate"),
            BoxError::OutsideImage => f.write_str("box lies entirely outside the image"),
            BoxError::ComponentOutOfRange { component, value } => {
                write!(f, "normalized box component {component} = {value} outside [0, 1]")
            }
        }
    }
}

impl core::error::Error for BoxError {}

/// Corner form `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corners {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Corners {
    pub fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }
}

/// Axis-aligned box: center coordinates plus width and height, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, BoxError> {
        if !(cx.is_finite() && cy.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(BoxError::NonFinite);
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(BoxError::NonPositiveExtent);
        }
        Ok(Self { cx, cy, w, h })
    }

    /// From COCO-style `(x_min, y_min, w, h)`.
    pub fn from_corner_xywh(x_min: f64, y_min: f64, w: f64, h: f64) -> Result<Self, BoxError> {
        Self::new(x_min + w / 2.0, y_min + h / 2.0, w, h)
    }

    pub fn from_corners(c: Corners) -> Result<Self, BoxError> {
        Self::new((c.x0 + c.x1) / 2.0, (c.y0 + c.y1) / 2.0, c.x1 - c.x0, c.y1 - c.y0)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    pub fn corners(&self) -> Corners {
        Corners {
            x0: self.cx - self.w / 2.0,
            y0: self.cy - self.h / 2.0,
            x1: self.cx + self.w / 2.0,
            y1: self.cy + self.h / 2.0,
        }
    }

    pub fn area(&self) -> f64 {
        self.corners().area()
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self { cx: self.cx + dx, cy: self.cy + dy, ..*self }
    }

    pub fn is_within(&self, size: ImageSize) -> bool {
        let c = self.corners();
        c.x0 >= -CLAMP_EPSILON
            && c.y0 >= -CLAMP_EPSILON
            && c.x1 <= size.width as f64 + CLAMP_EPSILON
            && c.y1 <= size.height as f64 + CLAMP_EPSILON
    }

    /// Clamp the box corners to the image. Returns the clamped box and
    /// whether anything changed; boxes already inside (up to
    /// [`CLAMP_EPSILON`]) are returned untouched.
    pub fn clamp_to(&self, size: ImageSize) -> Result<(BBox, bool), BoxError> {
        if self.is_within(size) {
            return Ok((*self, false));
        }
        let c = self.corners();
        let clamped = Corners {
            x0: c.x0.max(0.0),
            y0: c.y0.max(0.0),
            x1: c.x1.min(size.width as f64),
            y1: c.y1.min(size.height as f64),
        };
        if clamped.x1 - clamped.x0 <= 0.0 || clamped.y1 - clamped.y0 <= 0.0 {
            return Err(BoxError::OutsideImage);
        }
        Ok((BBox::from_corners(clamped)?, true))
    }

    /// Normalize against an image size; inverse of [`denormalize_box`].
    pub fn normalize(&self, size: ImageSize) -> NormBox {
        let (w, h) = (size.width as f64, size.height as f64);
        NormBox([self.cx / w, self.cy / h, self.w / w, self.h / h])
    }
}

/// Intersection over union. Boxes touching only along an edge score 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ca = a.corners();
    let cb = b.corners();
    let iw = ca.x1.min(cb.x1) - ca.x0.max(cb.x0);
    let ih = ca.y1.min(cb.y1) - ca.y0.max(cb.y0);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = ca.area() + cb.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Box in `[0, 1]^4` relative to image width/height, as grounders return it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormBox(pub [f64; 4]);

impl NormBox {
    pub fn new(values: [f64; 4]) -> Result<Self, BoxError> {
        for (component, &value) in values.iter().enumerate() {
            if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                return Err(BoxError::ComponentOutOfRange { component, value });
            }
        }
        Ok(Self(values))
    }
}

/// Scale a normalized box to pixels and clamp it. Zero-extent axes are
/// widened to one pixel, keeping the center inside the image.
pub fn denormalize_box(nb: [f64; 4], size: ImageSize) -> Result<BBox, BoxError> {
    let [ncx, ncy, nw, nh] = NormBox::new(nb)?.0;
    let (iw, ih) = (size.width as f64, size.height as f64);
    let (mut cx, mut cy, mut w, mut h) = (ncx * iw, ncy * ih, nw * iw, nh * ih);
    if w <= 0.0 {
        w = 1.0;
        cx = cx.clamp(0.5, (iw - 0.5).max(0.5));
    }
    if h <= 0.0 {
        h = 1.0;
        cy = cy.clamp(0.5, (ih - 0.5).max(0.5));
    }
    Ok(BBox::new(cx, cy, w, h)?.clamp_to(size)?.0)
}

/// Half-open integer pixel ranges whose centers lie inside a box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
}

impl PixelRect {
    pub fn count(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..self.x1).contains(&x) && (self.y0..self.y1).contains(&y)
    }
}

fn pixel_span(lo: f64, hi: f64, limit: u32) -> (usize, usize) {
    // px + 0.5 in [lo, hi)  <=>  ceil(lo - 0.5) <= px < ceil(hi - 0.5)
    let limit = limit as f64;
    let start = libm::ceil(lo - 0.5).clamp(0.0, limit) as usize;
    let end = libm::ceil(hi - 0.5).clamp(0.0, limit) as usize;
    (start, end.max(start))
}

/// Pixels of an image whose centers fall inside `b`.
pub fn pixels_inside(size: ImageSize, b: &BBox) -> PixelRect {
    let c = b.corners();
    let (x0, x1) = pixel_span(c.x0, c.x1, size.width);
    let (y0, y1) = pixel_span(c.y0, c.y1, size.height);
    PixelRect { x0, x1, y0, y1 }
}

/// Binary row-major mask; `true` marks a pixel to regenerate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskError {
    /// Nothing outside the box: the region to regenerate is empty.
    Degenerate,
    LengthMismatch {
        expected: usize,
        actual: usize,
    },
}

impl fmt::Display for MaskError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaskError::Degenerate => f.write_str("degenerate mask: empty region outside the box"),
            MaskError::LengthMismatch { expected, actual } => {
                write!(f, "mask has {actual} bits, expected {expected}")
            }
        }
    }
}

impl core::error::Error for MaskError {}

impl RasterMask {
    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, MaskError> {
        let expected = width as usize * height as usize;
        if bits.len() != expected {
            return Err(MaskError::LengthMismatch { expected, actual: bits.len() });
        }
        Ok(Self { width, height, bits })
    }

    pub fn zeros(size: ImageSize) -> Self {
        Self { width: size.width, height: size.height, bits: vec![false; size.pixel_count()] }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn size(&self) -> ImageSize {
        ImageSize::new(self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// 8-bit grayscale rendering: 0 keeps a pixel, 255 regenerates it.
    pub fn to_luma8(&self) -> Vec<u8> {
        self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect()
    }

    /// Inverse of [`RasterMask::to_luma8`]; any nonzero byte counts as set.
    pub fn from_luma8(width: u32, height: u32, luma: &[u8]) -> Result<Self, MaskError> {
        Self::from_bits(width, height, luma.iter().map(|&v| v != 0).collect())
    }
}

/// Mask selecting every pixel whose center lies outside `b`.
pub fn outside_mask(size: ImageSize, b: &BBox) -> Result<RasterMask, MaskError> {
    let inside = pixels_inside(size, b);
    if inside.count() == size.pixel_count() {
        return Err(MaskError::Degenerate);
    }
    let width = size.width as usize;
    let bits = (0..size.pixel_count()).map(|i| !inside.contains(i % width, i / width)).collect();
    Ok(RasterMask { width: size.width, height: size.height, bits })
}
