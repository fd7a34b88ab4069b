//! PNG/JPEG decoding into [`RgbImage`] and PNG encoding of images and masks.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat};
use pobf_core::{RasterMask, RgbImage};

use crate::error::{Error, Result};
use crate::run::read_bytes;

pub fn decode(bytes: &[u8]) -> std::result::Result<RgbImage, String> {
    let rgb = image::load_from_memory(bytes).map_err(|e| e.to_string())?.into_rgb8();
    let (w, h) = rgb.dimensions();
    Ok(RgbImage::from_raw(w, h, rgb.into_raw()).expect("rgb8 buffer has 3 bytes per pixel"))
}

pub fn read_image(path: &Path) -> Result<(Vec<u8>, RgbImage)> {
    let bytes = read_bytes(path)?;
    let img = decode(&bytes).map_err(|message| Error::Image { path: path.to_path_buf(), message })?;
    Ok((bytes, img))
}

fn encode(img: DynamicImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).expect("in-memory PNG encoding");
    out.into_inner()
}

pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let buf = image::RgbImage::from_raw(img.width(), img.height(), img.as_raw().to_vec())
        .expect("buffer length matches dimensions");
    encode(DynamicImage::ImageRgb8(buf))
}

/// 8-bit grayscale PNG: 0 keeps a pixel, 255 regenerates it.
pub fn encode_mask_png(mask: &RasterMask) -> Vec<u8> {
    let buf =
        GrayImage::from_raw(mask.width(), mask.height(), mask.to_luma8()).expect("mask length matches dimensions");
    encode(DynamicImage::ImageLuma8(buf))
}

pub fn decode_mask_png(bytes: &[u8]) -> std::result::Result<RasterMask, String> {
    let luma = image::load_from_memory(bytes).map_err(|e| e.to_string())?.into_luma8();
    let (w, h) = luma.dimensions();
    RasterMask::from_luma8(w, h, luma.as_raw()).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use pobf_core::{outside_mask, BBox, ImageSize};

    #[test]
    fn png_round_trip() {
        let mut img = RgbImage::filled(ImageSize::new(5, 3), [1, 2, 3]);
        img.set_pixel(4, 2, [250, 0, 9]);
        let bytes = encode_png(&img);
        assert_eq!(decode(&bytes).unwrap(), img);
        assert_eq!(bytes, encode_png(&img));
    }

    #[test]
    fn mask_png_uses_0_and_255() {
        let mask = outside_mask(ImageSize::new(4, 4), &BBox::new(2.0, 2.0, 2.0, 2.0).unwrap()).unwrap();
        let png = encode_mask_png(&mask);
        let luma = image::load_from_memory(&png).unwrap().into_luma8();
        assert_eq!(luma.get_pixel(0, 0).0, [255]);
        assert_eq!(luma.get_pixel(1, 1).0, [0]);
        assert_eq!(decode_mask_png(&png).unwrap(), mask);
    }

    #[test]
    fn garbage_does_not_decode() {
        assert!(decode(b"not an image").is_err());
    }
}
