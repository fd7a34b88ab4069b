//! Blocking HTTP client for the backend wire protocol.
//!
//! Connection failures, timeouts, 429 and 5xx responses are retried up to
//! `max_retries` times with exponential backoff; the request id header is
//! fixed per logical request so servers can deduplicate. At most
//! `parallelism` requests are in flight per client.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use log::debug;
use pobf_core::{BBox, NormBox, RasterMask};
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::wire::{
    b64_decode, b64_encode, CaptionRequest, CaptionResponse, EmbedRequest, EmbedResponse, GroundRequest,
    GroundResponse, HealthResponse, InpaintRequest, InpaintResponse, REQUEST_ID_HEADER,
};
use super::{
    check_norm_box, BackendError, Captioner, EmbedPayload, Embedder, GenerationParams, Grounder, Inpainter, Role,
};
use crate::imageio::encode_mask_png;

/// Where and how to reach one backend role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendEndpoint {
    pub base_url: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub parallelism: usize,
}

impl BackendEndpoint {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self { base_url: base_url.into(), timeout_secs: 120.0, max_retries: 3, parallelism: 4 }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.parallelism == 0 {
            return Err(format!("{}: parallelism must be at least 1", self.base_url));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(format!("{}: timeout must be positive", self.base_url));
        }
        Ok(())
    }
}

struct Semaphore {
    available: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Self { available: Mutex::new(n), freed: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap();
        while *n == 0 {
            n = self.freed.wait(n).unwrap();
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().unwrap() += 1;
        self.0.freed.notify_one();
    }
}

pub struct HttpBackend {
    endpoint: BackendEndpoint,
    client: Client,
    backoff: Duration,
    in_flight: Semaphore,
}

const MAX_BACKOFF: Duration = Duration::from_secs(5);

enum Attempt<T> {
    Done(T),
    Retry(String),
}

impl HttpBackend {
    pub fn new(endpoint: BackendEndpoint) -> Result<Self, String> {
        endpoint.validate()?;
        let client = Client::builder()
            .timeout(Duration::from_secs_f64(endpoint.timeout_secs))
            .build()
            .map_err(|e| e.to_string())?;
        Ok(Self {
            in_flight: Semaphore::new(endpoint.parallelism),
            endpoint,
            client,
            backoff: Duration::from_millis(200),
        })
    }

    /// Base delay before the first retry; doubles per attempt.
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn endpoint(&self) -> &BackendEndpoint {
        &self.endpoint
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.endpoint.base_url.trim_end_matches('/'), path)
    }

    pub fn health(&self, role: Role) -> Result<HealthResponse, BackendError> {
        let resp = self.client.get(self.url("/healthz")).send().map_err(|e| BackendError::Unavailable {
            role,
            attempts: 1,
            message: e.to_string(),
        })?;
        if !resp.status().is_success() {
            return Err(BackendError::Unavailable {
                role,
                attempts: 1,
                message: format!("healthz returned {}", resp.status()),
            });
        }
        resp.json().map_err(|e| BackendError::Protocol { role, message: e.to_string() })
    }

    pub fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        role: Role,
        path: &str,
        body: &Req,
    ) -> Result<Resp, BackendError> {
        let request_id = uuid::Uuid::new_v4().to_string();
        let body = serde_json::to_vec(body).expect("request serializes");
        let attempts = self.endpoint.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.backoff.saturating_mul(1 << (attempt - 1).min(16)).min(MAX_BACKOFF);
                debug!("{role} request {request_id}: retry {attempt} after {delay:?}: {last}");
                thread::sleep(delay);
            }
            match self.attempt(role, path, &request_id, &body)? {
                Attempt::Done(resp) => return Ok(resp),
                Attempt::Retry(message) => last = message,
            }
        }
        Err(BackendError::Unavailable { role, attempts, message: last })
    }

    fn attempt<Resp: DeserializeOwned>(
        &self,
        role: Role,
        path: &str,
        request_id: &str,
        body: &[u8],
    ) -> Result<Attempt<Resp>, BackendError> {
        let _permit = self.in_flight.acquire();
        let sent = self
            .client
            .post(self.url(path))
            .header(REQUEST_ID_HEADER, request_id)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_vec())
            .send();
        let resp = match sent {
            Ok(r) => r,
            Err(e) => return Ok(Attempt::Retry(e.to_string())),
        };
        let status = resp.status();
        if status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS {
            return Ok(Attempt::Retry(format!("status {status}")));
        }
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => return Ok(Attempt::Retry(e.to_string())),
        };
        if !status.is_success() {
            return Err(BackendError::Request { role, message: format!("status {status}: {text}") });
        }
        serde_json::from_str(&text)
            .map(Attempt::Done)
            .map_err(|e| BackendError::Protocol { role, message: format!("bad response body: {e}") })
    }
}

impl Captioner for HttpBackend {
    fn caption(&self, image: &[u8], crop: Option<BBox>, params: &GenerationParams) -> Result<String, BackendError> {
        let req = CaptionRequest {
            image_b64: b64_encode(image),
            crop: crop.map(BBox::to_array),
            top_p: params.top_p,
            seed: params.seed,
        };
        let resp: CaptionResponse = self.post(Role::Caption, "/caption", &req)?;
        Ok(resp.caption)
    }
}

impl Inpainter for HttpBackend {
    fn inpaint(
        &self,
        image: &[u8],
        mask: &RasterMask,
        prompt: &str,
        params: &GenerationParams,
    ) -> Result<Vec<u8>, BackendError> {
        let req = InpaintRequest {
            image_b64: b64_encode(image),
            mask_b64: b64_encode(&encode_mask_png(mask)),
            prompt: prompt.to_string(),
            strength: params.strength,
            steps: params.steps,
            guidance_scale: params.guidance_scale,
            seed: params.seed,
        };
        let resp: InpaintResponse = self.post(Role::Inpaint, "/inpaint", &req)?;
        b64_decode(&resp.image_b64).map_err(|message| BackendError::Protocol { role: Role::Inpaint, message })
    }
}

impl Grounder for HttpBackend {
    fn ground(&self, image: &[u8], text: &str) -> Result<NormBox, BackendError> {
        let req = GroundRequest { image_b64: b64_encode(image), text: text.to_string() };
        let resp: GroundResponse = self.post(Role::Ground, "/ground", &req)?;
        check_norm_box(Role::Ground, resp.bbox)
    }
}

impl Embedder for HttpBackend {
    fn embed(&self, payload: EmbedPayload<'_>) -> Result<Vec<f64>, BackendError> {
        let req = match payload {
            EmbedPayload::Text(t) => EmbedRequest { text: Some(t.to_string()), image_b64: None },
            EmbedPayload::Image(b) => EmbedRequest { text: None, image_b64: Some(b64_encode(b)) },
        };
        let resp: EmbedResponse = self.post(Role::Embed, "/embed", &req)?;
        Ok(resp.vector)
    }
}

/// Result of probing `/healthz` for the roles a stage needs.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct HealthCheck {
    pub url: String,
    pub role: Role,
    pub ok: bool,
    pub message: String,
}

pub fn check_health(backend: &HttpBackend, role: Role) -> HealthCheck {
    let url = backend.endpoint().base_url.clone();
    match backend.health(role) {
        Ok(h) if h.ok && h.roles.iter().any(|r| r == role.name()) => {
            HealthCheck { url, role, ok: true, message: "ok".into() }
        }
        Ok(h) => {
            HealthCheck { url, role, ok: false, message: format!("server reports ok={} roles={:?}", h.ok, h.roles) }
        }
        Err(e) => HealthCheck { url, role, ok: false, message: e.to_string() },
    }
}
