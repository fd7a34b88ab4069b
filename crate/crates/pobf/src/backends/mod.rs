//! Model backends: captioner, inpainter, grounder and embedder.
//!
//! Each role is a trait so the pipeline can run against the HTTP client in
//! [`http`] or the deterministic in-process mocks in [`mock`]. The free
//! functions here enforce the client-side contracts that must hold whatever
//! the backend does: cropping before captioning, pixel preservation after
//! inpainting, normalized-box validation and unit-norm embeddings.

pub mod http;
pub mod mock;
pub mod wire;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use pobf_core::geometry::pixels_inside;
use pobf_core::{BBox, NormBox, RasterMask, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imageio::{decode, encode_png};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Caption,
    Inpaint,
    Ground,
    Embed,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Caption, Role::Inpaint, Role::Ground, Role::Embed];

    pub fn name(self) -> &'static str {
        match self {
            Role::Caption => "caption",
            Role::Inpaint => "inpaint",
            Role::Ground => "ground",
            Role::Embed => "embed",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL.into_iter().find(|r| r.name() == s).ok_or_else(|| format!("unknown backend role `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("{role} backend unavailable after {attempts} attempt(s): {message}")]
    Unavailable { role: Role, attempts: u32, message: String },
    #[error("{role} backend misbehaved: {message}")]
    Misbehavior { role: Role, message: String },
    #[error("{role} backend protocol error: {message}")]
    Protocol { role: Role, message: String },
    #[error("invalid {role} request: {message}")]
    Request { role: Role, message: String },
}

/// Sampling and diffusion settings for one generation call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub strength: f64,
    pub steps: u32,
    pub guidance_scale: f64,
    pub top_p: f64,
    pub seed: u64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self { strength: 0.9, steps: 45, guidance_scale: 7.5, top_p: 0.9, seed: 0 }
    }
}

impl GenerationParams {
    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.strength > 0.0 && self.strength <= 1.0) {
            return Err(format!("strength {} outside (0, 1]", self.strength));
        }
        if self.steps == 0 {
            return Err("steps must be positive".into());
        }
        if !(self.guidance_scale > 0.0 && self.guidance_scale.is_finite()) {
            return Err(format!("guidance_scale {} must be positive", self.guidance_scale));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(format!("top_p {} outside (0, 1]", self.top_p));
        }
        Ok(())
    }
}

/// Exactly one of text or image bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedPayload<'a> {
    Text(&'a str),
    Image(&'a [u8]),
}

pub trait Captioner: Send + Sync {
    /// `image` is already cropped when `crop` is present; `crop` carries the
    /// region in the original image's pixel coordinates.
    fn caption(&self, image: &[u8], crop: Option<BBox>, params: &GenerationParams) -> Result<String, BackendError>;
}

pub trait Inpainter: Send + Sync {
    fn inpaint(
        &self,
        image: &[u8],
        mask: &RasterMask,
        prompt: &str,
        params: &GenerationParams,
    ) -> Result<Vec<u8>, BackendError>;
}

pub trait Grounder: Send + Sync {
    /// `text` may be empty.
    fn ground(&self, image: &[u8], text: &str) -> Result<NormBox, BackendError>;
}

pub trait Embedder: Send + Sync {
    fn embed(&self, payload: EmbedPayload<'_>) -> Result<Vec<f64>, BackendError>;
}

/// The backends configured for a run; any role may be absent.
#[derive(Clone, Default)]
pub struct Backends {
    pub captioner: Option<Arc<dyn Captioner>>,
    pub inpainter: Option<Arc<dyn Inpainter>>,
    pub grounder: Option<Arc<dyn Grounder>>,
    pub embedder: Option<Arc<dyn Embedder>>,
}

impl fmt::Debug for Backends {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Backends")
            .field("captioner", &self.captioner.is_some())
            .field("inpainter", &self.inpainter.is_some())
            .field("grounder", &self.grounder.is_some())
            .field("embedder", &self.embedder.is_some())
            .finish()
    }
}

/// Caption the whole image or the region covered by `crop`. A crop that
/// covers every pixel is sent exactly like no crop at all.
pub fn caption_region(
    captioner: &dyn Captioner,
    image_bytes: &[u8],
    decoded: &RgbImage,
    crop: Option<BBox>,
    params: &GenerationParams,
) -> Result<String, BackendError> {
    let crop = crop.filter(|b| pixels_inside(decoded.size(), b).count() != decoded.size().pixel_count());
    let caption = match crop {
        None => captioner.caption(image_bytes, None, params)?,
        Some(b) => {
            let region = decoded.crop(&b).ok_or_else(|| BackendError::Request {
                role: Role::Caption,
                message: "crop covers no pixel centers".into(),
            })?;
            captioner.caption(&encode_png(&region), Some(b), params)?
        }
    };
    if caption.trim().is_empty() {
        return Err(BackendError::Misbehavior { role: Role::Caption, message: "empty caption".into() });
    }
    Ok(caption)
}

/// Inpaint, then copy every unmasked pixel back from the input so the region
/// outside the mask is bit-identical whatever the backend returned. An empty
/// mask returns the input bytes without calling the backend.
pub fn inpaint_preserving(
    inpainter: &dyn Inpainter,
    image_bytes: &[u8],
    decoded: &RgbImage,
    mask: &RasterMask,
    prompt: &str,
    params: &GenerationParams,
) -> Result<Vec<u8>, BackendError> {
    let request_error = |message: String| BackendError::Request { role: Role::Inpaint, message };
    if mask.size() != decoded.size() {
        return Err(request_error(format!(
            "mask is {}x{} but image is {}x{}",
            mask.width(),
            mask.height(),
            decoded.width(),
            decoded.height()
        )));
    }
    if mask.is_empty() {
        return Ok(image_bytes.to_vec());
    }
    if prompt.trim().is_empty() {
        return Err(request_error("empty prompt".into()));
    }
    let returned = inpainter.inpaint(image_bytes, mask, prompt, params)?;
    let generated = decode(&returned)
        .map_err(|e| BackendError::Misbehavior { role: Role::Inpaint, message: format!("undecodable image: {e}") })?;
    let restored = decoded
        .restore_unmasked(&generated, mask)
        .map_err(|e| BackendError::Misbehavior { role: Role::Inpaint, message: e.to_string() })?;
    Ok(encode_png(&restored))
}

/// L2-normalize an embedding; zero or non-finite vectors are rejected.
pub fn unit_normalize(mut v: Vec<f64>) -> Result<Vec<f64>, BackendError> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if v.is_empty() || !norm.is_finite() || norm == 0.0 {
        return Err(BackendError::Misbehavior { role: Role::Embed, message: "zero or non-finite embedding".into() });
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

pub fn embed_unit(embedder: &dyn Embedder, payload: EmbedPayload<'_>) -> Result<Vec<f64>, BackendError> {
    unit_normalize(embedder.embed(payload)?)
}

pub fn check_norm_box(role: Role, values: [f64; 4]) -> Result<NormBox, BackendError> {
    NormBox::new(values).map_err(|e| BackendError::Protocol { role, message: e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use pobf_core::{outside_mask, ImageSize};
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Recording(AtomicUsize, std::sync::Mutex<Vec<Vec<u8>>>);

    impl Captioner for Recording {
        fn caption(&self, image: &[u8], _: Option<BBox>, _: &GenerationParams) -> Result<String, BackendError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            self.1.lock().unwrap().push(image.to_vec());
            Ok("a thing".into())
        }
    }

    impl Inpainter for Recording {
        fn inpaint(
            &self,
            image: &[u8],
            _: &RasterMask,
            _: &str,
            _: &GenerationParams,
        ) -> Result<Vec<u8>, BackendError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            // Overwrite everything, including pixels that must be preserved.
            let img = decode(image).unwrap();
            Ok(encode_png(&RgbImage::filled(img.size(), [7, 7, 7])))
        }
    }

    fn recording() -> Recording {
        Recording(AtomicUsize::new(0), Default::default())
    }

    #[test]
    fn full_image_crop_matches_no_crop() {
        let img = RgbImage::filled(ImageSize::new(8, 8), [1, 2, 3]);
        let bytes = encode_png(&img);
        let rec = recording();
        caption_region(&rec, &bytes, &img, None, &GenerationParams::default()).unwrap();
        caption_region(&rec, &bytes, &img, Some(img.size().full_box()), &GenerationParams::default()).unwrap();
        caption_region(&rec, &bytes, &img, Some(BBox::new(2.0, 2.0, 2.0, 2.0).unwrap()), &GenerationParams::default())
            .unwrap();
        let sent = rec.1.lock().unwrap();
        assert_eq!(sent[0], sent[1]);
        assert_eq!(decode(&sent[2]).unwrap().size(), ImageSize::new(2, 2));
    }

    #[test]
    fn empty_mask_skips_the_backend() {
        let img = RgbImage::filled(ImageSize::new(4, 4), [9, 9, 9]);
        let bytes = encode_png(&img);
        let rec = recording();
        let out =
            inpaint_preserving(&rec, &bytes, &img, &RasterMask::zeros(img.size()), "p", &GenerationParams::default())
                .unwrap();
        assert_eq!(out, bytes);
        assert_eq!(rec.0.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn preserved_pixels_are_restored() {
        let size = ImageSize::new(6, 6);
        let b = BBox::new(3.0, 3.0, 2.0, 2.0).unwrap();
        let img = RgbImage::filled(size, [100, 50, 25]);
        let mask = outside_mask(size, &b).unwrap();
        let out = inpaint_preserving(&recording(), &encode_png(&img), &img, &mask, "p", &GenerationParams::default())
            .unwrap();
        let out = decode(&out).unwrap();
        assert_eq!(out.pixel(2, 2), [100, 50, 25]);
        assert_eq!(out.pixel(0, 0), [7, 7, 7]);
    }

    #[test]
    fn mask_size_mismatch_is_a_request_error() {
        let img = RgbImage::filled(ImageSize::new(4, 4), [0, 0, 0]);
        let err = inpaint_preserving(
            &recording(),
            &encode_png(&img),
            &img,
            &RasterMask::zeros(ImageSize::new(3, 4)),
            "p",
            &GenerationParams::default(),
        )
        .unwrap_err();
        assert!(matches!(err, BackendError::Request { role: Role::Inpaint, .. }));
    }

    #[test]
    fn params_validation() {
        assert!(GenerationParams::default().validate().is_ok());
        assert!(GenerationParams { strength: 0.0, ..Default::default() }.validate().is_err());
        assert!(GenerationParams { top_p: 1.5, ..Default::default() }.validate().is_err());
        assert!(GenerationParams { steps: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn normalization_rejects_zero_vectors() {
        assert!(unit_normalize(vec![0.0, 0.0]).is_err());
        let v = unit_normalize(vec![3.0, 4.0]).unwrap();
        assert_eq!(v, vec![0.6, 0.8]);
    }
}
