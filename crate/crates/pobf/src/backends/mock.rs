//! Deterministic in-process backends.
//!
//! Every mock is a pure function of its request and a fixed `seed`. The
//! rules below are the reference behaviour for stub servers too; the
//! shared conformance fixture is generated from them.
//!
//! Notation: `fnv` is [`fnv1a64`], `H` is [`hash_words`], `N(a, b)` is
//! [`standard_normal`] of two hashed words.
//!
//! * caption: `h = H([seed, fnv(image), params.seed, top_p.to_bits()])`,
//!   caption `"a {ADJ[h % 8]} {NOUN[(h >> 8) % 8]} {PLACE[(h >> 16) % 8]}"`.
//! * inpaint: each masked channel byte `i` (pixel-major, RGB) becomes
//!   `round((1 - s) · orig + s · (H([seed, params.seed, fnv(prompt), i]) & 0xff))`
//!   with `s = strength`; unmasked pixels are untouched. Output is PNG.
//! * ground: see [`GroundMode`].
//! * embed: `v_i = N(H([seed, tag, fnv(payload), 2i]), H([seed, tag, fnv(payload), 2i+1]))`
//!   for `i < EMBED_DIM`, tag 0 for text and 1 for image bytes, then L2
//!   normalized.

use std::collections::HashMap;
use std::sync::Arc;

use pobf_core::seed::{fnv1a64, hash_words, standard_normal};
use pobf_core::{BBox, NormBox, RasterMask};
use sha2::{Digest, Sha256};

use super::wire::{
    b64_decode, b64_encode, CaptionRequest, CaptionResponse, EmbedRequest, EmbedResponse, ErrorResponse, GroundRequest,
    GroundResponse, HealthResponse, InpaintRequest, InpaintResponse,
};
use super::{
    check_norm_box, unit_normalize, BackendError, Backends, Captioner, EmbedPayload, Embedder, GenerationParams,
    Grounder, Inpainter, Role,
};
use crate::imageio::{decode, decode_mask_png, encode_png};

pub const EMBED_DIM: usize = 16;

const ADJECTIVES: [&str; 8] = ["red", "small", "large", "striped", "wooden", "shiny", "old", "bright"];
const NOUNS: [&str; 8] = ["bus", "dog", "chair", "person", "car", "bird", "table", "umbrella"];
const PLACES: [&str; 8] =
    ["on a street", "in a park", "near a window", "on a beach", "in a kitchen", "by a river", "in a field", "at night"];

#[derive(Debug, Clone, Copy)]
pub struct MockCaptioner {
    pub seed: u64,
}

impl Captioner for MockCaptioner {
    fn caption(&self, image: &[u8], _crop: Option<BBox>, params: &GenerationParams) -> Result<String, BackendError> {
        let h = hash_words(&[self.seed, fnv1a64(image), params.seed, params.top_p.to_bits()]);
        Ok(format!(
            "a {} {} {}",
            ADJECTIVES[(h % 8) as usize],
            NOUNS[((h >> 8) % 8) as usize],
            PLACES[((h >> 16) % 8) as usize]
        ))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MockInpainter {
    pub seed: u64,
}

impl Inpainter for MockInpainter {
    fn inpaint(
        &self,
        image: &[u8],
        mask: &RasterMask,
        prompt: &str,
        params: &GenerationParams,
    ) -> Result<Vec<u8>, BackendError> {
        let img = decode(image).map_err(|message| BackendError::Request { role: Role::Inpaint, message })?;
        if img.size() != mask.size() {
            return Err(BackendError::Request { role: Role::Inpaint, message: "mask/image size mismatch".into() });
        }
        let prompt_hash = fnv1a64(prompt.as_bytes());
        let s = params.strength;
        let mut data = img.as_raw().to_vec();
        for (p, &regenerate) in mask.bits().iter().enumerate() {
            if !regenerate {
                continue;
            }
            for c in 0..3 {
                let i = p * 3 + c;
                let noise = (hash_words(&[self.seed, params.seed, prompt_hash, i as u64]) & 0xff) as f64;
                data[i] = ((1.0 - s) * data[i] as f64 + s * noise).round().clamp(0.0, 255.0) as u8;
            }
        }
        let out = pobf_core::RgbImage::from_raw(img.width(), img.height(), data).expect("same dimensions");
        Ok(encode_png(&out))
    }
}

/// Ground-truth lookup for oracle grounders.
///
/// A query resolves, in order: empty text → `prior` when set; a known image
/// (SHA-256 of the exact request bytes) → its box; a known text → its box.
#[derive(Debug, Clone, Default)]
pub struct OracleTable {
    by_image: HashMap<[u8; 32], NormBox>,
    by_text: HashMap<String, NormBox>,
    pub prior: Option<NormBox>,
}

impl OracleTable {
    pub fn with_prior(prior: NormBox) -> Self {
        Self { prior: Some(prior), ..Self::default() }
    }

    pub fn insert_image(&mut self, image: &[u8], b: NormBox) {
        self.by_image.insert(Sha256::digest(image).into(), b);
    }

    /// First insertion of a text wins.
    pub fn insert_text(&mut self, text: &str, b: NormBox) {
        self.by_text.entry(text.to_string()).or_insert(b);
    }

    pub fn lookup(&self, image: &[u8], text: &str) -> Option<NormBox> {
        if text.is_empty() {
            if let Some(prior) = self.prior {
                return Some(prior);
            }
        }
        let digest: [u8; 32] = Sha256::digest(image).into();
        self.by_image.get(&digest).or_else(|| self.by_text.get(text)).copied()
    }
}

#[derive(Debug, Clone)]
pub enum GroundMode {
    /// Always the same box.
    Fixed(NormBox),
    /// Ground truth from the table.
    Oracle(OracleTable),
    /// Table box `b` perturbed per component:
    /// `clamp(b_i + sigma · N(H([seed, fnv(image), fnv(text), 2i]), H([.., 2i+1])), 0, 1)`.
    Noisy { table: OracleTable, sigma: f64 },
}

#[derive(Debug, Clone)]
pub struct MockGrounder {
    pub mode: GroundMode,
    pub seed: u64,
}

impl MockGrounder {
    pub fn fixed(b: NormBox) -> Self {
        Self { mode: GroundMode::Fixed(b), seed: 0 }
    }

    pub fn oracle(table: OracleTable) -> Self {
        Self { mode: GroundMode::Oracle(table), seed: 0 }
    }

    pub fn noisy(table: OracleTable, sigma: f64, seed: u64) -> Self {
        Self { mode: GroundMode::Noisy { table, sigma }, seed }
    }
}

fn lookup(table: &OracleTable, image: &[u8], text: &str) -> Result<NormBox, BackendError> {
    table.lookup(image, text).ok_or_else(|| BackendError::Misbehavior {
        role: Role::Ground,
        message: format!("oracle has no entry for this image or text `{text}`"),
    })
}

impl Grounder for MockGrounder {
    fn ground(&self, image: &[u8], text: &str) -> Result<NormBox, BackendError> {
        match &self.mode {
            GroundMode::Fixed(b) => Ok(*b),
            GroundMode::Oracle(table) => lookup(table, image, text),
            GroundMode::Noisy { table, sigma } => {
                let base = lookup(table, image, text)?.0;
                let (ih, th) = (fnv1a64(image), fnv1a64(text.as_bytes()));
                let mut out = [0.0; 4];
                for (i, v) in out.iter_mut().enumerate() {
                    let i = i as u64;
                    let z = standard_normal(
                        hash_words(&[self.seed, ih, th, 2 * i]),
                        hash_words(&[self.seed, ih, th, 2 * i + 1]),
                    );
                    *v = (base[i as usize] + sigma * z).clamp(0.0, 1.0);
                }
                check_norm_box(Role::Ground, out)
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MockEmbedder {
    pub seed: u64,
}

impl Embedder for MockEmbedder {
    fn embed(&self, payload: EmbedPayload<'_>) -> Result<Vec<f64>, BackendError> {
        let (tag, bytes) = match payload {
            EmbedPayload::Text(t) => (0u64, t.as_bytes()),
            EmbedPayload::Image(b) => (1u64, b),
        };
        let h = fnv1a64(bytes);
        let v = (0..EMBED_DIM as u64)
            .map(|i| {
                standard_normal(hash_words(&[self.seed, tag, h, 2 * i]), hash_words(&[self.seed, tag, h, 2 * i + 1]))
            })
            .collect();
        unit_normalize(v)
    }
}

/// The four mocks behind one seed, ready to plug into a pipeline.
pub fn mock_backends(seed: u64, grounder: MockGrounder) -> Backends {
    Backends {
        captioner: Some(Arc::new(MockCaptioner { seed })),
        inpainter: Some(Arc::new(MockInpainter { seed })),
        grounder: Some(Arc::new(grounder)),
        embedder: Some(Arc::new(MockEmbedder { seed })),
    }
}

/// Reference stub service: maps a wire request to a `(status, JSON body)`
/// response using the mocks. HTTP servers only need to route to this.
pub struct StubService {
    pub backends: Backends,
}

fn reply<T: serde::Serialize>(value: &T) -> (u16, String) {
    (200, serde_json::to_string(value).expect("response serializes"))
}

fn failure(status: u16, error: impl Into<String>) -> (u16, String) {
    (status, serde_json::to_string(&ErrorResponse { error: error.into() }).expect("error serializes"))
}

fn from_backend(e: BackendError) -> (u16, String) {
    match e {
        BackendError::Request { .. } | BackendError::Protocol { .. } => failure(400, e.to_string()),
        _ => failure(500, e.to_string()),
    }
}

impl StubService {
    pub fn roles(&self) -> Vec<String> {
        let b = &self.backends;
        [
            (Role::Caption, b.captioner.is_some()),
            (Role::Inpaint, b.inpainter.is_some()),
            (Role::Ground, b.grounder.is_some()),
            (Role::Embed, b.embedder.is_some()),
        ]
        .into_iter()
        .filter(|(_, present)| *present)
        .map(|(r, _)| r.name().to_string())
        .collect()
    }

    pub fn handle(&self, method: &str, path: &str, body: &[u8]) -> (u16, String) {
        match (method, path) {
            ("GET", "/healthz") => reply(&HealthResponse { ok: true, roles: self.roles() }),
            ("POST", "/caption") => self.caption(body),
            ("POST", "/inpaint") => self.inpaint(body),
            ("POST", "/ground") => self.ground(body),
            ("POST", "/embed") => self.embed(body),
            _ => failure(404, format!("no route for {method} {path}")),
        }
    }

    fn caption(&self, body: &[u8]) -> (u16, String) {
        let Some(captioner) = &self.backends.captioner else { return failure(501, "caption role not served") };
        let req: CaptionRequest = match serde_json::from_slice(body) {
            Ok(r) => r,
            Err(e) => return failure(400, e.to_string()),
        };
        let image = match b64_decode(&req.image_b64) {
            Ok(i) => i,
            Err(e) => return failure(400, e),
        };
        let crop = req.crop.and_then(|[cx, cy, w, h]| BBox::new(cx, cy, w, h).ok());
        let params = GenerationParams { top_p: req.top_p, seed: req.seed, ..Default::default() };
        match captioner.caption(&image, crop, &params) {
            Ok(caption) => reply(&CaptionResponse { caption }),
            Err(e) => from_backend(e),
        }
    }

    fn inpaint(&self, body: &[u8]) -> (u16, String) {
        let Some(inpainter) = &self.backends.inpainter else { return failure(501, "inpaint role not served") };
        let req: InpaintRequest = match serde_json::from_slice(body) {
            Ok(r) => r,
            Err(e) => return failure(400, e.to_string()),
        };
        let decoded = b64_decode(&req.image_b64).and_then(|i| {
            let mask = decode_mask_png(&b64_decode(&req.mask_b64)?)?;
            Ok((i, mask))
        });
        let (image, mask) = match decoded {
            Ok(v) => v,
            Err(e) => return failure(400, e),
        };
        let params = GenerationParams {
            strength: req.strength,
            steps: req.steps,
            guidance_scale: req.guidance_scale,
            seed: req.seed,
            ..Default::default()
        };
        match inpainter.inpaint(&image, &mask, &req.prompt, &params) {
            Ok(out) => reply(&InpaintResponse { image_b64: b64_encode(&out) }),
            Err(e) => from_backend(e),
        }
    }

    fn ground(&self, body: &[u8]) -> (u16, String) {
        let Some(grounder) = &self.backends.grounder else { return failure(501, "ground role not served") };
        let req: GroundRequest = match serde_json::from_slice(body) {
            Ok(r) => r,
            Err(e) => return failure(400, e.to_string()),
        };
        let image = match b64_decode(&req.image_b64) {
            Ok(i) => i,
            Err(e) => return failure(400, e),
        };
        match grounder.ground(&image, &req.text) {
            Ok(b) => reply(&GroundResponse { bbox: b.0 }),
            Err(e) => from_backend(e),
        }
    }

    fn embed(&self, body: &[u8]) -> (u16, String) {
        let Some(embedder) = &self.backends.embedder else { return failure(501, "embed role not served") };
        let req: EmbedRequest = match serde_json::from_slice(body) {
            Ok(r) => r,
            Err(e) => return failure(400, e.to_string()),
        };
        if let Err(e) = req.validate() {
            return failure(400, e);
        }
        let result = match (&req.text, &req.image_b64) {
            (Some(t), _) => embedder.embed(EmbedPayload::Text(t)),
            (_, Some(b)) => match b64_decode(b) {
                Ok(bytes) => embedder.embed(EmbedPayload::Image(&bytes)),
                Err(e) => return failure(400, e),
            },
            _ => unreachable!("validated above"),
        };
        match result {
            Ok(vector) => reply(&EmbedResponse { vector }),
            Err(e) => from_backend(e),
        }
    }
}
