//! JSON bodies of the backend HTTP protocol. Images travel as base64 PNG
//! (or the original encoded bytes), masks as base64 8-bit grayscale PNG.
//!
//! | endpoint        | request                                   | response            |
//! |-----------------|-------------------------------------------|---------------------|
//! | `POST /caption` | [`CaptionRequest`]                        | [`CaptionResponse`] |
//! | `POST /inpaint` | [`InpaintRequest`]                        | [`InpaintResponse`] |
//! | `POST /ground`  | [`GroundRequest`]                         | [`GroundResponse`]  |
//! | `POST /embed`   | [`EmbedRequest`]                          | [`EmbedResponse`]   |
//! | `GET /healthz`  |                                           | [`HealthResponse`]  |
//!
//! Errors come back as [`ErrorResponse`] with a 4xx/5xx status. Every POST
//! carries a client-generated [`REQUEST_ID_HEADER`] that stays the same
//! across retries of one logical request.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

pub const REQUEST_ID_HEADER: &str = "X-Request-Id";

pub fn b64_encode(bytes: &[u8]) -> String {
    STANDARD.encode(bytes)
}

pub fn b64_decode(s: &str) -> Result<Vec<u8>, String> {
    STANDARD.decode(s).map_err(|e| format!("invalid base64: {e}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRequest {
    pub image_b64: String,
    pub crop: Option<[f64; 4]>,
    pub top_p: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionResponse {
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InpaintRequest {
    pub image_b64: String,
    pub mask_b64: String,
    pub prompt: String,
    pub strength: f64,
    pub steps: u32,
    pub guidance_scale: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InpaintResponse {
    pub image_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundRequest {
    pub image_b64: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundResponse {
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub text: Option<String>,
    pub image_b64: Option<String>,
}

impl EmbedRequest {
    /// Exactly one payload must be present.
    pub fn validate(&self) -> Result<(), String> {
        match (&self.text, &self.image_b64) {
            (Some(_), None) | (None, Some(_)) => Ok(()),
            (Some(_), Some(_)) => Err("embed request carries both text and image".into()),
            (None, None) => Err("embed request carries neither text nor image".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub ok: bool,
    pub roles: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}
