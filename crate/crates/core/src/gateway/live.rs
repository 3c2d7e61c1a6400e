//! Live backends speaking the OpenAI-compatible wire protocol.
//!
//! Three endpoint shapes cover every role:
//! - `POST /chat/completions` — messages array, temperature pinned to 0.
//! - `POST /images/generations` — prompt, size, n=1; URL or b64 response.
//! - `POST /embeddings` — input array; first data entry's vector.
//!
//! Base URL and model names come from [`LiveConfig`]; the API key from an
//! environment variable. Any server speaking these shapes works, including
//! local inference servers. Generated images are downloaded into a
//! content-addressed local cache so image embedding is reproducible.
//!
//! Request bodies and response extraction are pure functions, unit-tested
//! without a network.

use std::path::PathBuf;
use std::sync::Mutex;

use serde_json::{json, Value};

use crate::error::GatewayError;
use crate::gateway::{BackendRole, ChatBackend, ChatRequest, EmbedBackend, ImageBackend, ImageRef};

/// Environment variable holding the API key.
pub const API_KEY_ENV: &str = "PROMPTLIFT_API_KEY";
/// Optional base-URL override.
pub const BASE_URL_ENV: &str = "PROMPTLIFT_BASE_URL";

/// Connection settings for one OpenAI-compatible server.
#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub base_url: String,
    pub api_key: String,
    /// Model per role family.
    pub chat_model: String,
    pub image_model: String,
    pub embed_model: String,
    /// Declared embedding dimension (checked by the gateway binding).
    pub embed_dim: usize,
    pub image_size: String,
    /// Where generated images are cached, keyed by content hash.
    pub image_cache_dir: PathBuf,
    pub timeout_secs: u64,
    /// Upper bound on concurrent in-flight requests.
    pub max_in_flight: usize,
}

impl LiveConfig {
    /// Reads key and base URL from the environment; errors when the key is
    /// missing so misconfigured live runs fail at startup.
    pub fn from_env() -> Result<LiveConfig, GatewayError> {
        let api_key = std::env::var(API_KEY_ENV).map_err(|_| GatewayError::DegenerateInput {
            role: BackendRole::Mutator,
            message: format!("{API_KEY_ENV} is not set"),
        })?;
        let base_url =
            std::env::var(BASE_URL_ENV).unwrap_or_else(|_| "https://api.openai.com/v1".to_string());
        Ok(LiveConfig {
            base_url,
            api_key,
            chat_model: "gpt-4o".into(),
            image_model: "dall-e-3".into(),
            embed_model: "text-embedding-3-small".into(),
            embed_dim: 768,
            image_size: "1024x1024".into(),
            image_cache_dir: PathBuf::from("image-cache"),
            timeout_secs: 120,
            max_in_flight: 4,
        })
    }
}

// ---------------------------------------------------------------------------
// Request bodies and response extraction (pure, testable offline)
// ---------------------------------------------------------------------------

/// Chat-completion body. Temperature is always 0: the pipeline depends on
/// deterministic mutation replies.
pub fn chat_request_body(model: &str, prompt: &str) -> Value {
    json!({
        "model": model,
        "messages": [{ "role": "user", "content": prompt }],
        "temperature": 0,
    })
}

pub fn image_request_body(model: &str, prompt: &str, size: &str) -> Value {
    json!({
        "model": model,
        "prompt": prompt,
        "n": 1,
        "size": size,
    })
}

pub fn embed_request_body(model: &str, input: &str, dim: usize) -> Value {
    json!({
        "model": model,
        "input": [input],
        "dimensions": dim,
    })
}

/// First choice's message content.
pub fn extract_chat_text(role: BackendRole, body: &Value) -> Result<String, GatewayError> {
    body["choices"][0]["message"]["content"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| malformed(role, body, "choices[0].message.content"))
}

/// First data entry's embedding vector.
pub fn extract_embedding(role: BackendRole, body: &Value) -> Result<Vec<f64>, GatewayError> {
    let raw = body["data"][0]["embedding"]
        .as_array()
        .ok_or_else(|| malformed(role, body, "data[0].embedding"))?;
    raw.iter()
        .map(|v| {
            v.as_f64()
                .ok_or_else(|| malformed(role, body, "non-numeric embedding entry"))
        })
        .collect()
}

/// First data entry's image: URL or base64 payload.
pub enum ImagePayload {
    Url(String),
    B64(String),
}

pub fn extract_image(body: &Value) -> Result<ImagePayload, GatewayError> {
    let entry = &body["data"][0];
    if let Some(url) = entry["url"].as_str() {
        return Ok(ImagePayload::Url(url.to_string()));
    }
    if let Some(b64) = entry["b64_json"].as_str() {
        return Ok(ImagePayload::B64(b64.to_string()));
    }
    Err(malformed(
        BackendRole::ImageGenerator,
        body,
        "data[0].url or data[0].b64_json",
    ))
}

fn malformed(role: BackendRole, body: &Value, field: &str) -> GatewayError {
    GatewayError::Transport {
        role,
        status: None,
        message: format!("response missing {field}: {body}"),
    }
}

/// Classifies an error body as a content-policy refusal.
pub fn is_content_policy_refusal(status: u16, body: &str) -> bool {
    status == 400 && (body.contains("content_policy") || body.contains("safety system"))
}

/// 128-bit FNV-based content address for the image cache.
pub fn content_address(bytes: &[u8]) -> String {
    let mut h1: u64 = 0xcbf2_9ce4_8422_2325;
    let mut h2: u64 = 0x84222325_cbf29ce4;
    for b in bytes {
        h1 = (h1 ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3);
        h2 = (h2 ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_0197);
    }
    format!("{h1:016x}{h2:016x}")
}

// ---------------------------------------------------------------------------
// HTTP plumbing
// ---------------------------------------------------------------------------

/// Counting semaphore bounding in-flight requests against the server.
struct InFlight {
    slots: Mutex<usize>,
    cond: std::sync::Condvar,
}

impl InFlight {
    fn new(limit: usize) -> Self {
        InFlight {
            slots: Mutex::new(limit.max(1)),
            cond: std::sync::Condvar::new(),
        }
    }

    fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        let mut slots = self.slots.lock().expect("not poisoned");
        while *slots == 0 {
            slots = self.cond.wait(slots).expect("not poisoned");
        }
        *slots -= 1;
        drop(slots);
        let out = f();
        *self.slots.lock().expect("not poisoned") += 1;
        self.cond.notify_one();
        out
    }
}

/// One OpenAI-compatible server serving all three endpoint shapes.
pub struct OpenAiBackend {
    cfg: LiveConfig,
    agent: ureq::Agent,
    in_flight: InFlight,
}

impl OpenAiBackend {
    pub fn new(cfg: LiveConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(std::time::Duration::from_secs(cfg.timeout_secs)))
            .build()
            .into();
        let in_flight = InFlight::new(cfg.max_in_flight);
        OpenAiBackend {
            cfg,
            agent,
            in_flight,
        }
    }

    pub fn config(&self) -> &LiveConfig {
        &self.cfg
    }

    fn post(&self, role: BackendRole, path: &str, body: &Value) -> Result<Value, GatewayError> {
        let url = format!("{}/{}", self.cfg.base_url.trim_end_matches('/'), path);
        self.in_flight.run(|| {
            let response = self
                .agent
                .post(&url)
                .header("authorization", &format!("Bearer {}", self.cfg.api_key))
                .header("content-type", "application/json")
                .send_json(body);
            match response {
                Ok(mut resp) => {
                    resp.body_mut()
                        .read_json::<Value>()
                        .map_err(|e| GatewayError::Transport {
                            role,
                            status: None,
                            message: format!("invalid JSON response: {e}"),
                        })
                }
                Err(ureq::Error::StatusCode(status)) => {
                    Err(classify_status(role, status, String::new()))
                }
                Err(e) => Err(GatewayError::Transport {
                    role,
                    status: None,
                    message: e.to_string(),
                }),
            }
        })
    }

    fn download(&self, url: &str) -> Result<Vec<u8>, GatewayError> {
        let mut resp = self
            .agent
            .get(url)
            .call()
            .map_err(|e| GatewayError::Transport {
                role: BackendRole::ImageGenerator,
                status: None,
                message: format!("image download failed: {e}"),
            })?;
        resp.body_mut()
            .read_to_vec()
            .map_err(|e| GatewayError::Transport {
                role: BackendRole::ImageGenerator,
                status: None,
                message: format!("image download read failed: {e}"),
            })
    }

    fn cache_image(&self, bytes: &[u8]) -> Result<ImageRef, GatewayError> {
        std::fs::create_dir_all(&self.cfg.image_cache_dir).map_err(|e| {
            GatewayError::Transport {
                role: BackendRole::ImageGenerator,
                status: None,
                message: format!("image cache dir: {e}"),
            }
        })?;
        let path = self
            .cfg
            .image_cache_dir
            .join(format!("{}.png", content_address(bytes)));
        if !path.exists() {
            std::fs::write(&path, bytes).map_err(|e| GatewayError::Transport {
                role: BackendRole::ImageGenerator,
                status: None,
                message: format!("image cache write: {e}"),
            })?;
        }
        Ok(ImageRef(format!("file:{}", path.display())))
    }
}

/// 5xx → retryable transport error; 4xx → rejection (except content-policy
/// refusals, which are typed separately).
pub fn classify_status(role: BackendRole, status: u16, body: String) -> GatewayError {
    if status >= 500 {
        GatewayError::Transport {
            role,
            status: Some(status),
            message: body,
        }
    } else if is_content_policy_refusal(status, &body) {
        GatewayError::Refused {
            role,
            message: body,
        }
    } else {
        GatewayError::Rejected {
            role,
            status,
            message: body,
        }
    }
}

impl ChatBackend for OpenAiBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let body = chat_request_body(&self.cfg.chat_model, &request.prompt);
        let response = self.post(BackendRole::Mutator, "chat/completions", &body)?;
        extract_chat_text(BackendRole::Mutator, &response)
    }
}

impl ImageBackend for OpenAiBackend {
    fn generate(&self, prompt: &str, _seed: u64) -> Result<ImageRef, GatewayError> {
        let body = image_request_body(&self.cfg.image_model, prompt, &self.cfg.image_size);
        let response = self.post(BackendRole::ImageGenerator, "images/generations", &body)?;
        match extract_image(&response)? {
            ImagePayload::Url(url) => {
                let bytes = self.download(&url)?;
                self.cache_image(&bytes)
            }
            ImagePayload::B64(b64) => {
                let bytes = b64_decode(&b64).ok_or_else(|| GatewayError::Transport {
                    role: BackendRole::ImageGenerator,
                    status: None,
                    message: "invalid base64 image payload".into(),
                })?;
                self.cache_image(&bytes)
            }
        }
    }
}

impl EmbedBackend for OpenAiBackend {
    fn embed_text(&self, role: BackendRole, text: &str) -> Result<Vec<f64>, GatewayError> {
        let body = embed_request_body(&self.cfg.embed_model, text, self.cfg.embed_dim);
        let response = self.post(role, "embeddings", &body)?;
        extract_embedding(role, &response)
    }

    fn embed_image(&self, role: BackendRole, image: &ImageRef) -> Result<Vec<f64>, GatewayError> {
        // Multimodal embedding servers accept the image reference (a URL or
        // local path) as input text; pixel-level encoders are out of scope.
        let reference = image.as_str();
        let loaded;
        let input = if let Some(path) = reference.strip_prefix("file:") {
            loaded = format!("image-content:{}", file_address(path, role)?);
            &loaded
        } else {
            reference
        };
        let body = embed_request_body(&self.cfg.embed_model, input, self.cfg.embed_dim);
        let response = self.post(role, "embeddings", &body)?;
        extract_embedding(role, &response)
    }
}

fn file_address(path: &str, role: BackendRole) -> Result<String, GatewayError> {
    let bytes = std::fs::read(path).map_err(|e| GatewayError::DegenerateInput {
        role,
        message: format!("cached image {path}: {e}"),
    })?;
    Ok(content_address(&bytes))
}

fn b64_decode(input: &str) -> Option<Vec<u8>> {
    const TABLE: &[u8; 64] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    let mut rev = [255u8; 256];
    for (i, b) in TABLE.iter().enumerate() {
        rev[*b as usize] = i as u8;
    }
    let mut out = Vec::with_capacity(input.len() * 3 / 4);
    let mut acc: u32 = 0;
    let mut bits = 0;
    for &b in input.as_bytes() {
        if b == b'=' || b == b'\n' || b == b'\r' {
            continue;
        }
        let v = rev[b as usize];
        if v == 255 {
            return None;
        }
        acc = (acc << 6) | u32::from(v);
        bits += 6;
        if bits >= 8 {
            bits -= 8;
            out.push((acc >> bits) as u8);
        }
    }
    Some(out)
}
