//! The single seam to external models.
//!
//! Four kinds of backend sit behind role bindings: a text mutator (chat
//! completions), an image generator, and text/image embedders for the state,
//! reward and evaluation paths. No other module performs network activity;
//! binding the [`crate::simworld`] backends makes the whole pipeline run
//! offline and deterministically, binding the [`live`] backends (feature
//! `live`) points the same pipeline at any OpenAI-compatible server.
//!
//! Every logical call is metered exactly once per role — successes, content
//! refusals, and failures after retry exhaustion all count. Dollar costs are
//! tracked in integer micro-dollars so cost arithmetic is exact.

#[cfg(feature = "live")]
pub mod live;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::GatewayError;
use crate::numerics::Vector;
use crate::template::FragmentedDescription;

// ---------------------------------------------------------------------------
// Roles
// ---------------------------------------------------------------------------

/// Every distinct consumer of an external model. A run binds each role to
/// exactly one backend implementation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendRole {
    /// Chat model executing describe/summarize/mutate/normalize requests.
    Mutator,
    /// Text-to-image model ("model V").
    ImageGenerator,
    /// Text embedder producing the agent's state representation.
    TextEmbedderState,
    /// Text embedder for the reward components r1/r3.
    TextEmbedderReward,
    /// Image embedder for the reward components r1/r2.
    ImageEmbedderReward,
    /// Evaluation embedders for the five report metrics.
    EvalDino,
    EvalClipImage,
    EvalClipText,
    EvalSiglipImage,
    EvalSiglipText,
}

impl BackendRole {
    pub const ALL: [BackendRole; 10] = [
        BackendRole::Mutator,
        BackendRole::ImageGenerator,
        BackendRole::TextEmbedderState,
        BackendRole::TextEmbedderReward,
        BackendRole::ImageEmbedderReward,
        BackendRole::EvalDino,
        BackendRole::EvalClipImage,
        BackendRole::EvalClipText,
        BackendRole::EvalSiglipImage,
        BackendRole::EvalSiglipText,
    ];

    fn index(self) -> usize {
        Self::ALL
            .iter()
            .position(|r| *r == self)
            .expect("role listed")
    }

    pub fn name(self) -> &'static str {
        match self {
            BackendRole::Mutator => "mutator",
            BackendRole::ImageGenerator => "image_generator",
            BackendRole::TextEmbedderState => "text_embedder_state",
            BackendRole::TextEmbedderReward => "text_embedder_reward",
            BackendRole::ImageEmbedderReward => "image_embedder_reward",
            BackendRole::EvalDino => "eval_dino",
            BackendRole::EvalClipImage => "eval_clip_image",
            BackendRole::EvalClipText => "eval_clip_text",
            BackendRole::EvalSiglipImage => "eval_siglip_image",
            BackendRole::EvalSiglipText => "eval_siglip_text",
        }
    }
}

impl std::fmt::Display for BackendRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

// ---------------------------------------------------------------------------
// Requests
// ---------------------------------------------------------------------------

/// Opaque reference to an image: a URL, a local path, or a `synth:` /
/// `synthgen:` URI the simulator can resolve.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ImageRef(pub String);

impl ImageRef {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// Structured operands for a chat call. The live backend sends the rendered
/// `prompt`; the simulator executes the payload directly and replies in the
/// same fenced-block wire format a live model is instructed to produce, so
/// both paths exercise the identical parser.
#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub prompt: String,
    pub payload: ChatPayload,
}

#[derive(Debug, Clone)]
pub enum ChatPayload {
    Describe {
        image: ImageRef,
    },
    Summarize {
        fragments: Vec<FragmentedDescription>,
    },
    Mutate {
        action_id: usize,
        a: FragmentedDescription,
        b: FragmentedDescription,
        exemplar: Option<FragmentedDescription>,
        seed: u64,
    },
    Normalize {
        fragment: FragmentedDescription,
    },
}

// ---------------------------------------------------------------------------
// Backend traits
// ---------------------------------------------------------------------------

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError>;
}

pub trait ImageBackend: Send + Sync {
    fn generate(&self, prompt: &str, seed: u64) -> Result<ImageRef, GatewayError>;
}

pub trait EmbedBackend: Send + Sync {
    fn embed_text(&self, role: BackendRole, text: &str) -> Result<Vec<f64>, GatewayError>;
    fn embed_image(&self, role: BackendRole, image: &ImageRef) -> Result<Vec<f64>, GatewayError>;
}

// ---------------------------------------------------------------------------
// Usage metering
// ---------------------------------------------------------------------------

/// Per-role call counters and exact dollar accounting in micro-dollars.
#[derive(Debug)]
pub struct UsageMeter {
    counts: [AtomicU64; 10],
    unit_cost_micros: [u64; 10],
}

/// Default image price: $0.04 per generation. All other roles cost $0 —
/// image generation is the only billed resource in the cost model.
pub const DEFAULT_IMAGE_COST_MICROS: u64 = 40_000;

impl UsageMeter {
    pub fn new(unit_cost_micros: BTreeMap<BackendRole, u64>) -> Self {
        let mut costs = [0u64; 10];
        for (role, c) in unit_cost_micros {
            costs[role.index()] = c;
        }
        UsageMeter {
            counts: Default::default(),
            unit_cost_micros: costs,
        }
    }

    /// Image generation at $0.04, everything else free.
    pub fn with_default_costs() -> Self {
        let mut costs = BTreeMap::new();
        costs.insert(BackendRole::ImageGenerator, DEFAULT_IMAGE_COST_MICROS);
        UsageMeter::new(costs)
    }

    pub fn record(&self, role: BackendRole) {
        self.counts[role.index()].fetch_add(1, Ordering::Relaxed);
    }

    pub fn count(&self, role: BackendRole) -> u64 {
        self.counts[role.index()].load(Ordering::Relaxed)
    }

    pub fn snapshot(&self) -> UsageSnapshot {
        let mut counts = BTreeMap::new();
        let mut cost_micros = BTreeMap::new();
        let mut total = 0u64;
        for role in BackendRole::ALL {
            let n = self.count(role);
            let cost = n * self.unit_cost_micros[role.index()];
            counts.insert(role, n);
            cost_micros.insert(role, cost);
            total += cost;
        }
        UsageSnapshot {
            counts,
            cost_micros,
            total_cost_micros: total,
        }
    }
}

/// Serializable point-in-time view of the meter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageSnapshot {
    pub counts: BTreeMap<BackendRole, u64>,
    pub cost_micros: BTreeMap<BackendRole, u64>,
    pub total_cost_micros: u64,
}

impl UsageSnapshot {
    pub fn count(&self, role: BackendRole) -> u64 {
        self.counts.get(&role).copied().unwrap_or(0)
    }

    pub fn total_cost_dollars(&self) -> f64 {
        self.total_cost_micros as f64 / 1e6
    }

    /// Counts/costs accrued since `earlier`.
    pub fn delta_since(&self, earlier: &UsageSnapshot) -> UsageSnapshot {
        let counts = self
            .counts
            .iter()
            .map(|(r, n)| (*r, n - earlier.count(*r)))
            .collect();
        let cost_micros: BTreeMap<BackendRole, u64> = self
            .cost_micros
            .iter()
            .map(|(r, c)| (*r, c - earlier.cost_micros.get(r).copied().unwrap_or(0)))
            .collect();
        let total = cost_micros.values().sum();
        UsageSnapshot {
            counts,
            cost_micros,
            total_cost_micros: total,
        }
    }

    /// Exact per-template amortization in micro-dollars (floor division).
    pub fn amortized_micros(&self, templates: u64) -> u64 {
        self.total_cost_micros / templates
    }

    pub fn amortized_dollars(&self, templates: u64) -> f64 {
        self.total_cost_micros as f64 / 1e6 / templates as f64
    }
}

// ---------------------------------------------------------------------------
// Retry policy
// ---------------------------------------------------------------------------

/// Bounded retries with backoff on transport errors and 5xx. 4xx rejections,
/// refusals and contract violations are never retried.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_ms: Vec<u64>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            backoff_ms: vec![500, 1000, 2000],
        }
    }
}

impl RetryPolicy {
    /// No waiting — for tests and the simulator.
    pub fn immediate() -> Self {
        RetryPolicy {
            max_retries: 3,
            backoff_ms: vec![],
        }
    }

    pub fn should_retry(&self, error: &GatewayError, attempt: u32) -> bool {
        attempt < self.max_retries && matches!(error, GatewayError::Transport { .. })
    }

    fn wait(&self, attempt: u32) {
        if self.backoff_ms.is_empty() {
            return;
        }
        let idx = (attempt as usize).min(self.backoff_ms.len() - 1);
        let ms = self.backoff_ms[idx];
        #[cfg(not(target_arch = "wasm32"))]
        std::thread::sleep(std::time::Duration::from_millis(ms));
        #[cfg(target_arch = "wasm32")]
        let _ = ms;
    }
}

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

struct EmbedBinding {
    backend: Arc<dyn EmbedBackend>,
    dim: usize,
}

/// Role bindings plus the meter. Cheap to share behind an `Arc`.
pub struct Gateway {
    mutator: Option<Arc<dyn ChatBackend>>,
    image_generator: Option<Arc<dyn ImageBackend>>,
    embedders: BTreeMap<BackendRole, EmbedBinding>,
    meter: UsageMeter,
    retry: RetryPolicy,
}

impl Gateway {
    pub fn builder() -> GatewayBuilder {
        GatewayBuilder {
            mutator: None,
            image_generator: None,
            embedders: BTreeMap::new(),
            meter: None,
            retry: RetryPolicy::default(),
        }
    }

    /// Sends a mutation/describe/summarize/normalize request to the bound
    /// chat backend and returns its reply verbatim.
    pub fn mutate_text(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let backend = self
            .mutator
            .as_ref()
            .ok_or(GatewayError::Unbound(BackendRole::Mutator))?;
        self.metered(BackendRole::Mutator, || backend.complete(request))
    }

    /// Generates one image, counting the call and its cost whatever the outcome.
    pub fn generate_image(&self, prompt: &str, seed: u64) -> Result<ImageRef, GatewayError> {
        let backend = self
            .image_generator
            .as_ref()
            .ok_or(GatewayError::Unbound(BackendRole::ImageGenerator))?;
        if prompt.trim().is_empty() {
            return Err(GatewayError::DegenerateInput {
                role: BackendRole::ImageGenerator,
                message: "empty prompt".into(),
            });
        }
        self.metered(BackendRole::ImageGenerator, || {
            backend.generate(prompt, seed)
        })
    }

    pub fn embed_text(&self, role: BackendRole, text: &str) -> Result<Vector, GatewayError> {
        if text.trim().is_empty() {
            return Err(GatewayError::DegenerateInput {
                role,
                message: "empty text".into(),
            });
        }
        let binding = self
            .embedders
            .get(&role)
            .ok_or(GatewayError::Unbound(role))?;
        let values = self.metered(role, || binding.backend.embed_text(role, text))?;
        Self::check_dim(role, binding.dim, values)
    }

    pub fn embed_image(&self, role: BackendRole, image: &ImageRef) -> Result<Vector, GatewayError> {
        let binding = self
            .embedders
            .get(&role)
            .ok_or(GatewayError::Unbound(role))?;
        let values = self.metered(role, || binding.backend.embed_image(role, image))?;
        Self::check_dim(role, binding.dim, values)
    }

    /// Declared embedding dimension for a bound role.
    pub fn embed_dim(&self, role: BackendRole) -> Result<usize, GatewayError> {
        self.embedders
            .get(&role)
            .map(|b| b.dim)
            .ok_or(GatewayError::Unbound(role))
    }

    pub fn usage(&self) -> UsageSnapshot {
        self.meter.snapshot()
    }

    pub fn meter(&self) -> &UsageMeter {
        &self.meter
    }

    fn check_dim(
        role: BackendRole,
        expected: usize,
        values: Vec<f64>,
    ) -> Result<Vector, GatewayError> {
        if values.len() != expected {
            return Err(GatewayError::Contract {
                role,
                expected,
                got: values.len(),
            });
        }
        Vector::new(values).map_err(|_| GatewayError::DegenerateInput {
            role,
            message: "backend returned non-finite embedding".into(),
        })
    }

    /// Retry loop around one logical call. The call is counted exactly once,
    /// whether it ultimately succeeds, is refused, or exhausts its retries.
    fn metered<T>(
        &self,
        role: BackendRole,
        f: impl Fn() -> Result<T, GatewayError>,
    ) -> Result<T, GatewayError> {
        self.meter.record(role);
        let mut attempt = 0;
        loop {
            match f() {
                Err(e) if self.retry.should_retry(&e, attempt) => {
                    self.retry.wait(attempt);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

pub struct GatewayBuilder {
    mutator: Option<Arc<dyn ChatBackend>>,
    image_generator: Option<Arc<dyn ImageBackend>>,
    embedders: BTreeMap<BackendRole, EmbedBinding>,
    meter: Option<UsageMeter>,
    retry: RetryPolicy,
}

impl GatewayBuilder {
    pub fn mutator(mut self, backend: Arc<dyn ChatBackend>) -> Self {
        self.mutator = Some(backend);
        self
    }

    pub fn image_generator(mut self, backend: Arc<dyn ImageBackend>) -> Self {
        self.image_generator = Some(backend);
        self
    }

    /// Binds an embedder role with its declared output dimension.
    pub fn embedder(
        mut self,
        role: BackendRole,
        backend: Arc<dyn EmbedBackend>,
        dim: usize,
    ) -> Self {
        self.embedders.insert(role, EmbedBinding { backend, dim });
        self
    }

    pub fn meter(mut self, meter: UsageMeter) -> Self {
        self.meter = Some(meter);
        self
    }

    pub fn retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn build(self) -> Gateway {
        Gateway {
            mutator: self.mutator,
            image_generator: self.image_generator,
            embedders: self.embedders,
            meter: self.meter.unwrap_or_else(UsageMeter::with_default_costs),
            retry: self.retry,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    struct FlakyImageBackend {
        failures_before_success: Mutex<u32>,
    }

    impl ImageBackend for FlakyImageBackend {
        fn generate(&self, _prompt: &str, _seed: u64) -> Result<ImageRef, GatewayError> {
            let mut left = self.failures_before_success.lock().unwrap();
            if *left > 0 {
                *left -= 1;
                return Err(GatewayError::Transport {
                    role: BackendRole::ImageGenerator,
                    status: Some(503),
                    message: "unavailable".into(),
                });
            }
            Ok(ImageRef("ok".into()))
        }
    }

    struct RefusingImageBackend;

    impl ImageBackend for RefusingImageBackend {
        fn generate(&self, _prompt: &str, _seed: u64) -> Result<ImageRef, GatewayError> {
            Err(GatewayError::Refused {
                role: BackendRole::ImageGenerator,
                message: "content policy".into(),
            })
        }
    }

    struct WrongDimEmbedder;

    impl EmbedBackend for WrongDimEmbedder {
        fn embed_text(&self, _role: BackendRole, _text: &str) -> Result<Vec<f64>, GatewayError> {
            Ok(vec![1.0; 3])
        }
        fn embed_image(
            &self,
            _role: BackendRole,
            _image: &ImageRef,
        ) -> Result<Vec<f64>, GatewayError> {
            Ok(vec![1.0; 3])
        }
    }

    fn image_gateway(backend: Arc<dyn ImageBackend>) -> Gateway {
        Gateway::builder()
            .image_generator(backend)
            .retry(RetryPolicy::immediate())
            .build()
    }

    #[test]
    fn fresh_meter_is_all_zeros() {
        let snap = UsageMeter::with_default_costs().snapshot();
        assert!(snap.counts.values().all(|&n| n == 0));
        assert_eq!(snap.total_cost_micros, 0);
    }

    #[test]
    fn image_cost_arithmetic_is_exact() {
        let meter = UsageMeter::with_default_costs();
        for _ in 0..160 {
            meter.record(BackendRole::ImageGenerator);
        }
        let snap = meter.snapshot();
        assert_eq!(snap.count(BackendRole::ImageGenerator), 160);
        assert_eq!(snap.total_cost_micros, 6_400_000);
        assert_eq!(snap.total_cost_dollars(), 6.4);
        assert_eq!(snap.amortized_micros(50), 128_000);
    }

    #[test]
    fn twenty_five_queries_cost_one_dollar() {
        let meter = UsageMeter::with_default_costs();
        for _ in 0..25 {
            meter.record(BackendRole::ImageGenerator);
        }
        assert_eq!(meter.snapshot().total_cost_micros, 1_000_000);
    }

    #[test]
    fn retries_count_as_one_call() {
        let gw = image_gateway(Arc::new(FlakyImageBackend {
            failures_before_success: Mutex::new(2),
        }));
        gw.generate_image("a prompt", 1).unwrap();
        assert_eq!(gw.usage().count(BackendRole::ImageGenerator), 1);
    }

    #[test]
    fn exhausted_retries_still_count_once() {
        let gw = image_gateway(Arc::new(FlakyImageBackend {
            failures_before_success: Mutex::new(100),
        }));
        let err = gw.generate_image("a prompt", 1).unwrap_err();
        assert!(matches!(err, GatewayError::Transport { .. }));
        assert_eq!(gw.usage().count(BackendRole::ImageGenerator), 1);
    }

    #[test]
    fn refusals_are_counted_and_costed() {
        let gw = image_gateway(Arc::new(RefusingImageBackend));
        for _ in 0..3 {
            let _ = gw.generate_image("a prompt", 1);
        }
        let snap = gw.usage();
        assert_eq!(snap.count(BackendRole::ImageGenerator), 3);
        assert_eq!(snap.total_cost_micros, 3 * DEFAULT_IMAGE_COST_MICROS);
    }

    #[test]
    fn rejected_4xx_is_not_retried() {
        struct Reject;
        impl ImageBackend for Reject {
            fn generate(&self, _p: &str, _s: u64) -> Result<ImageRef, GatewayError> {
                Err(GatewayError::Rejected {
                    role: BackendRole::ImageGenerator,
                    status: 400,
                    message: "bad request".into(),
                })
            }
        }
        let policy = RetryPolicy::default();
        let err = GatewayError::Rejected {
            role: BackendRole::ImageGenerator,
            status: 400,
            message: String::new(),
        };
        assert!(!policy.should_retry(&err, 0));
        let gw = image_gateway(Arc::new(Reject));
        assert!(gw.generate_image("p", 0).is_err());
        assert_eq!(gw.usage().count(BackendRole::ImageGenerator), 1);
    }

    #[test]
    fn empty_text_is_degenerate_and_uncounted() {
        let gw = Gateway::builder()
            .embedder(
                BackendRole::TextEmbedderReward,
                Arc::new(WrongDimEmbedder),
                3,
            )
            .build();
        let err = gw
            .embed_text(BackendRole::TextEmbedderReward, "  ")
            .unwrap_err();
        assert!(matches!(err, GatewayError::DegenerateInput { .. }));
        assert_eq!(gw.usage().count(BackendRole::TextEmbedderReward), 0);
    }

    #[test]
    fn dim_drift_is_a_contract_error() {
        let gw = Gateway::builder()
            .embedder(BackendRole::EvalDino, Arc::new(WrongDimEmbedder), 8)
            .build();
        let err = gw
            .embed_image(BackendRole::EvalDino, &ImageRef("x".into()))
            .unwrap_err();
        assert!(matches!(
            err,
            GatewayError::Contract {
                expected: 8,
                got: 3,
                ..
            }
        ));
    }

    #[test]
    fn unbound_role_errors() {
        let gw = Gateway::builder().build();
        assert!(matches!(
            gw.generate_image("p", 0).unwrap_err(),
            GatewayError::Unbound(BackendRole::ImageGenerator)
        ));
    }

    #[test]
    fn snapshot_delta() {
        let meter = UsageMeter::with_default_costs();
        meter.record(BackendRole::Mutator);
        let before = meter.snapshot();
        meter.record(BackendRole::Mutator);
        meter.record(BackendRole::ImageGenerator);
        let delta = meter.snapshot().delta_since(&before);
        assert_eq!(delta.count(BackendRole::Mutator), 1);
        assert_eq!(delta.count(BackendRole::ImageGenerator), 1);
        assert_eq!(delta.total_cost_micros, DEFAULT_IMAGE_COST_MICROS);
    }
}
