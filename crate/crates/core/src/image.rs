//! Decoded RGB8 images and the pixel operations the pipeline needs.

use alloc::vec::Vec;
use core::fmt;

use crate::geometry::{pixels_inside, BBox, ImageSize, RasterMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DimensionMismatch {
    pub expected: ImageSize,
    pub actual: ImageSize,
}

impl fmt::Display for DimensionMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "image dimension mismatch: expected {}x{}, got {}x{}",
            self.expected.width, self.expected.height, self.actual.width, self.actual.height
        )
    }
}

impl core::error::Error for DimensionMismatch {}

/// Row-major, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    size: ImageSize,
    data: Vec<u8>,
}

impl RgbImage {
    /// Returns `None` when `data` is not exactly `3 * width * height` bytes.
    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Option<Self> {
        let size = ImageSize::new(width, height);
        (data.len() == size.pixel_count() * 3).then_some(Self { size, data })
    }

    pub fn filled(size: ImageSize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(size.pixel_count() * 3);
        for _ in 0..size.pixel_count() {
            data.extend_from_slice(&rgb);
        }
        Self { size, data }
    }

    pub fn size(&self) -> ImageSize {
        self.size
    }

    pub fn width(&self) -> u32 {
        self.size.width
    }

    pub fn height(&self) -> u32 {
        self.size.height
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = self.offset(x as usize, y as usize);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = self.offset(x as usize, y as usize);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    fn offset(&self, x: usize, y: usize) -> usize {
        (y * self.size.width as usize + x) * 3
    }

    fn check_size(&self, expected: ImageSize) -> Result<(), DimensionMismatch> {
        if self.size == expected {
            Ok(())
        } else {
            Err(DimensionMismatch { expected, actual: self.size })
        }
    }

    /// Copy with every pixel whose center lies inside `b` set to black.
    pub fn zero_inside(&self, expected: ImageSize, b: &BBox) -> Result<RgbImage, DimensionMismatch> {
        self.check_size(expected)?;
        let rect = pixels_inside(self.size, b);
        let mut out = self.clone();
        for y in rect.y0..rect.y1 {
            let start = out.offset(rect.x0, y);
            let end = out.offset(rect.x1, y);
            out.data[start..end].fill(0);
        }
        Ok(out)
    }

    /// The sub-image of pixels whose centers lie inside `b`, or `None` when
    /// no pixel center is covered.
    pub fn crop(&self, b: &BBox) -> Option<RgbImage> {
        let rect = pixels_inside(self.size, b);
        if rect.count() == 0 {
            return None;
        }
        let mut data = Vec::with_capacity(rect.count() * 3);
        for y in rect.y0..rect.y1 {
            data.extend_from_slice(&self.data[self.offset(rect.x0, y)..self.offset(rect.x1, y)]);
        }
        Some(Self { size: ImageSize::new((rect.x1 - rect.x0) as u32, (rect.y1 - rect.y0) as u32), data })
    }

    /// Overwrite every pixel of `generated` where `mask` is unset with the
    /// corresponding pixel of `self`.
    pub fn restore_unmasked(&self, generated: &RgbImage, mask: &RasterMask) -> Result<RgbImage, DimensionMismatch> {
        generated.check_size(self.size)?;
        if mask.size() != self.size {
            return Err(DimensionMismatch { expected: self.size, actual: mask.size() });
        }
        let mut out = generated.clone();
        for (i, &regenerate) in mask.bits().iter().enumerate() {
            if !regenerate {
                out.data[i * 3..i * 3 + 3].copy_from_slice(&self.data[i * 3..i * 3 + 3]);
            }
        }
        Ok(out)
    }
}
