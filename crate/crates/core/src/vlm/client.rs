use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

use super::prompts::{self, FixationListStyle};
use super::transport::{ChatRequest, TransportError, VlmTransport};
use crate::cache::{hash_fields, sha256_hex, CacheError, CacheStore};
use crate::encoding::{EncodedFixation, EncodingCondition};

pub const DEFAULT_MODEL: &str = "Qwen/Qwen3-VL-8B-Instruct";
const CACHE_KEY_VERSION: &str = "sema-vlm-v1";

#[derive(Debug, Error)]
pub enum VlmError {
    #[error("{provenance}: transport failed after {attempts} attempt(s): {source}")]
    Transport {
        provenance: String,
        attempts: u32,
        #[source]
        source: TransportError,
    },
    #[error("{provenance}: model returned an empty response")]
    EmptyResponse { provenance: String },
    #[error("{provenance}: not in cache (key {key}) and network access is disabled")]
    CacheMiss { provenance: String, key: String },
    #[error("expected a {expected} encoding, got {actual}")]
    WrongCondition { expected: &'static str, actual: String },
    #[error("descriptions must share one (condition, image, subject): {0}")]
    MixedProvenance(String),
    #[error("cannot summarize an empty description list")]
    NoDescriptions,
    #[error("invalid VLM config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Cache(#[from] CacheError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VlmConfig {
    pub endpoint_url: Option<String>,
    pub model_id: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub description_temperature: f64,
    pub summary_temperature: f64,
    pub description_max_tokens: u32,
    pub summary_max_tokens: u32,
    pub max_retries: u32,
    pub request_timeout_s: f64,
    pub max_concurrent_requests: usize,
    pub retry_base_s: f64,
    pub retry_cap_s: f64,
    pub fixation_list_style: FixationListStyle,
}

impl Default for VlmConfig {
    fn default() -> Self {
        Self {
            endpoint_url: None,
            model_id: DEFAULT_MODEL.to_string(),
            api_key: None,
            description_temperature: 0.2,
            summary_temperature: 0.3,
            description_max_tokens: 256,
            summary_max_tokens: 1024,
            max_retries: 3,
            request_timeout_s: 120.0,
            max_concurrent_requests: 4,
            retry_base_s: 1.0,
            retry_cap_s: 30.0,
            fixation_list_style: FixationListStyle::Numbered,
        }
    }
}

impl VlmConfig {
    pub fn validate(&self) -> Result<(), VlmError> {
        for (name, t) in [
            ("description_temperature", self.description_temperature),
            ("summary_temperature", self.summary_temperature),
        ] {
            if !(0.0..=2.0).contains(&t) {
                return Err(VlmError::InvalidConfig(format!("{name} {t} outside [0, 2]")));
            }
        }
        if self.max_concurrent_requests == 0 {
            return Err(VlmError::InvalidConfig(
                "max_concurrent_requests must be >= 1".into(),
            ));
        }
        if !(self.request_timeout_s > 0.0) {
            return Err(VlmError::InvalidConfig("request_timeout_s must be positive".into()));
        }
        if !(self.retry_base_s >= 0.0 && self.retry_cap_s >= 0.0) {
            return Err(VlmError::InvalidConfig("retry delays must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DescriptionProvenance {
    pub condition: String,
    pub image_id: String,
    pub subject_id: String,
    pub fixation_index: usize,
}

impl std::fmt::Display for DescriptionProvenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}/{}/{}/#{}",
            self.condition, self.image_id, self.subject_id, self.fixation_index
        )
    }
}

/// A per-fixation description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixationDescription {
    pub text: String,
    pub provenance: DescriptionProvenance,
    pub model_id: String,
    pub prompt_hash: String,
    pub cache_key: String,
}

impl FixationDescription {
    pub fn text_hash(&self) -> String {
        sha256_hex(self.text.as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SummaryProvenance {
    pub condition: String,
    pub image_id: String,
    pub subject_id: String,
}

impl std::fmt::Display for SummaryProvenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/{}/summary", self.condition, self.image_id, self.subject_id)
    }
}

/// A scanpath-level paragraph built from its fixation descriptions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanpathSummary {
    pub text: String,
    pub provenance: SummaryProvenance,
    pub model_id: String,
    pub prompt_hash: String,
    pub source_description_hashes: Vec<String>,
    pub cache_key: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseKind {
    Description,
    Summary,
}

/// On-disk cache record for one model response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedResponse {
    pub key: String,
    pub kind: ResponseKind,
    pub condition: String,
    pub image_id: String,
    pub subject_id: String,
    pub fixation_index: Option<usize>,
    pub model_id: String,
    pub prompt_hash: String,
    pub image_hash: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub source_description_hashes: Vec<String>,
}

impl CachedResponse {
    fn into_description(self) -> Option<FixationDescription> {
        Some(FixationDescription {
            provenance: DescriptionProvenance {
                condition: self.condition,
                image_id: self.image_id,
                subject_id: self.subject_id,
                fixation_index: self.fixation_index?,
            },
            text: self.text,
            model_id: self.model_id,
            prompt_hash: self.prompt_hash,
            cache_key: self.key,
        })
    }
}

/// The cache key for one model call. `slot` is the fixation index or
/// `"summary"`.
#[allow(clippy::too_many_arguments)]
pub fn response_cache_key(
    condition: &str,
    image_id: &str,
    subject_id: &str,
    slot: &str,
    model_id: &str,
    prompt_hash: &str,
    image_hash: &str,
) -> String {
    hash_fields([
        CACHE_KEY_VERSION,
        condition,
        image_id,
        subject_id,
        slot,
        model_id,
        prompt_hash,
        image_hash,
    ])
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Gate {
    available: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            available: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut n = self.available.lock().unwrap();
        while *n == 0 {
            n = self.cv.wait(n).unwrap();
        }
        *n -= 1;
        GateGuard { gate: self }
    }
}

struct GateGuard<'a> {
    gate: &'a Gate,
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.gate.available.lock().unwrap() += 1;
        self.gate.cv.notify_one();
    }
}

/// Full-jitter exponential backoff: uniform in `[0, min(cap, base * 2^attempt)]`.
pub fn backoff_delay(attempt: u32, base_s: f64, cap_s: f64, rng: &mut impl Rng) -> Duration {
    let ceiling = (base_s * 2f64.powi(attempt.min(62) as i32)).min(cap_s);
    if ceiling <= 0.0 {
        return Duration::ZERO;
    }
    Duration::from_secs_f64(rng.random_range(0.0..=ceiling))
}

/// Cached, retrying VLM client. Without a transport it serves from the
/// cache only.
pub struct VlmClient {
    cfg: VlmConfig,
    transport: Option<Arc<dyn VlmTransport>>,
    cache: CacheStore,
    gate: Gate,
    network_calls: AtomicUsize,
}

impl VlmClient {
    pub fn new(
        cfg: VlmConfig,
        transport: Option<Arc<dyn VlmTransport>>,
        cache: CacheStore,
    ) -> Result<Self, VlmError> {
        cfg.validate()?;
        let gate = Gate::new(cfg.max_concurrent_requests);
        Ok(Self {
            cfg,
            transport,
            cache,
            gate,
            network_calls: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &VlmConfig {
        &self.cfg
    }

    pub fn cache(&self) -> &CacheStore {
        &self.cache
    }

    pub fn is_offline(&self) -> bool {
        self.transport.is_none()
    }

    /// Transport calls made so far, retries included.
    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::SeqCst)
    }

    fn prompt_for(condition: &EncodingCondition) -> &'static str {
        if condition.is_patch() {
            prompts::PATCH_PROMPT
        } else {
            prompts::MARKER_PROMPT
        }
    }

    pub fn description_key(&self, enc: &EncodedFixation) -> String {
        let p = &enc.provenance;
        response_cache_key(
            &enc.condition.name(),
            &p.image_id,
            &p.subject_id,
            &p.fixation_index.to_string(),
            &self.cfg.model_id,
            &prompts::prompt_hash(Self::prompt_for(&enc.condition)),
            &sha256_hex(&enc.png),
        )
    }

    pub fn describe_patch(&self, enc: &EncodedFixation) -> Result<FixationDescription, VlmError> {
        if !enc.condition.is_patch() {
            return Err(VlmError::WrongCondition {
                expected: "patch",
                actual: enc.condition.name(),
            });
        }
        self.describe(enc)
    }

    pub fn describe_marked(&self, enc: &EncodedFixation) -> Result<FixationDescription, VlmError> {
        if enc.condition.is_patch() {
            return Err(VlmError::WrongCondition {
                expected: "marker",
                actual: enc.condition.name(),
            });
        }
        self.describe(enc)
    }

    /// Describes one encoded fixation with the prompt matching its condition.
    pub fn describe(&self, enc: &EncodedFixation) -> Result<FixationDescription, VlmError> {
        let prompt = Self::prompt_for(&enc.condition);
        let prompt_hash = prompts::prompt_hash(prompt);
        let image_hash = sha256_hex(&enc.png);
        let p = &enc.provenance;
        let condition = enc.condition.name();
        let key = response_cache_key(
            &condition,
            &p.image_id,
            &p.subject_id,
            &p.fixation_index.to_string(),
            &self.cfg.model_id,
            &prompt_hash,
            &image_hash,
        );
        let provenance = DescriptionProvenance {
            condition,
            image_id: p.image_id.clone(),
            subject_id: p.subject_id.clone(),
            fixation_index: p.fixation_index,
        };

        let text = match self.cache.get::<CachedResponse>(&key)? {
            Some(hit) => hit.text,
            None => {
                let request = ChatRequest {
                    model: self.cfg.model_id.clone(),
                    prompt: prompt.to_string(),
                    image_png: enc.png.clone(),
                    temperature: self.cfg.description_temperature,
                    max_tokens: self.cfg.description_max_tokens,
                };
                let text = self.request(&request, &provenance.to_string(), &key)?;
                self.cache.put(
                    &key,
                    &CachedResponse {
                        key: key.clone(),
                        kind: ResponseKind::Description,
                        condition: provenance.condition.clone(),
                        image_id: provenance.image_id.clone(),
                        subject_id: provenance.subject_id.clone(),
                        fixation_index: Some(provenance.fixation_index),
                        model_id: self.cfg.model_id.clone(),
                        prompt_hash: prompt_hash.clone(),
                        image_hash,
                        text: text.clone(),
                        source_description_hashes: Vec::new(),
                    },
                )?;
                text
            }
        };
        Ok(FixationDescription {
            text,
            provenance,
            model_id: self.cfg.model_id.clone(),
            prompt_hash,
            cache_key: key,
        })
    }

    /// Reads a previously stored description by key.
    pub fn load_description(&self, key: &str) -> Result<Option<FixationDescription>, VlmError> {
        Ok(self
            .cache
            .get::<CachedResponse>(key)?
            .filter(|r| r.kind == ResponseKind::Description)
            .and_then(CachedResponse::into_description))
    }

    /// Summarizes an ordered description sequence. `image_png` is the full
    /// stimulus.
    pub fn summarize_scanpath(
        &self,
        image_png: &[u8],
        descriptions: &[FixationDescription],
    ) -> Result<ScanpathSummary, VlmError> {
        let first = descriptions.first().ok_or(VlmError::NoDescriptions)?;
        let head = &first.provenance;
        for (i, d) in descriptions.iter().enumerate() {
            let p = &d.provenance;
            if p.condition != head.condition
                || p.image_id != head.image_id
                || p.subject_id != head.subject_id
            {
                return Err(VlmError::MixedProvenance(format!("{p} differs from {head}")));
            }
            if i > 0 && p.fixation_index <= descriptions[i - 1].provenance.fixation_index {
                return Err(VlmError::MixedProvenance(format!(
                    "{p} is out of fixation order"
                )));
            }
        }
        let provenance = SummaryProvenance {
            condition: head.condition.clone(),
            image_id: head.image_id.clone(),
            subject_id: head.subject_id.clone(),
        };
        let texts: Vec<&str> = descriptions.iter().map(|d| d.text.as_str()).collect();
        let prompt = prompts::render_summary_prompt(&texts, self.cfg.fixation_list_style);
        let prompt_hash = prompts::prompt_hash(&prompt);
        let image_hash = sha256_hex(image_png);
        let source_hashes: Vec<String> = descriptions.iter().map(|d| d.text_hash()).collect();
        let key = response_cache_key(
            &provenance.condition,
            &provenance.image_id,
            &provenance.subject_id,
            "summary",
            &self.cfg.model_id,
            &prompt_hash,
            &image_hash,
        );

        let text = match self.cache.get::<CachedResponse>(&key)? {
            Some(hit) => hit.text,
            None => {
                let request = ChatRequest {
                    model: self.cfg.model_id.clone(),
                    prompt,
                    image_png: image_png.to_vec(),
                    temperature: self.cfg.summary_temperature,
                    max_tokens: self.cfg.summary_max_tokens,
                };
                let text = self.request(&request, &provenance.to_string(), &key)?;
                self.cache.put(
                    &key,
                    &CachedResponse {
                        key: key.clone(),
                        kind: ResponseKind::Summary,
                        condition: provenance.condition.clone(),
                        image_id: provenance.image_id.clone(),
                        subject_id: provenance.subject_id.clone(),
                        fixation_index: None,
                        model_id: self.cfg.model_id.clone(),
                        prompt_hash: prompt_hash.clone(),
                        image_hash,
                        text: text.clone(),
                        source_description_hashes: source_hashes.clone(),
                    },
                )?;
                text
            }
        };
        Ok(ScanpathSummary {
            text,
            provenance,
            model_id: self.cfg.model_id.clone(),
            prompt_hash,
            source_description_hashes: source_hashes,
            cache_key: key,
        })
    }

    fn request(&self, req: &ChatRequest, provenance: &str, key: &str) -> Result<String, VlmError> {
        let Some(transport) = &self.transport else {
            return Err(VlmError::CacheMiss {
                provenance: provenance.to_string(),
                key: key.to_string(),
            });
        };
        let mut attempt = 0u32;
        loop {
            let result = {
                let _permit = self.gate.acquire();
                self.network_calls.fetch_add(1, Ordering::SeqCst);
                transport.chat(req)
            };
            match result {
                Ok(text) if text.trim().is_empty() => {
                    return Err(VlmError::EmptyResponse {
                        provenance: provenance.to_string(),
                    })
                }
                Ok(text) => return Ok(text),
                Err(e) if e.is_retryable() && attempt < self.cfg.max_retries => {
                    let delay = backoff_delay(
                        attempt,
                        self.cfg.retry_base_s,
                        self.cfg.retry_cap_s,
                        &mut rand::rng(),
                    );
                    debug!(%provenance, attempt, ?delay, error = %e, "retrying VLM request");
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                Err(source) => {
                    warn!(%provenance, error = %source, "VLM request failed");
                    return Err(VlmError::Transport {
                        provenance: provenance.to_string(),
                        attempts: attempt + 1,
                        source,
                    });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::FixationRef;
    use std::sync::atomic::AtomicUsize;

    struct Scripted {
        failures_left: AtomicUsize,
        calls: AtomicUsize,
        reply: String,
    }

    impl VlmTransport for Scripted {
        fn chat(&self, _req: &ChatRequest) -> Result<String, TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if self
                .failures_left
                .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
                .is_ok()
            {
                return Err(TransportError::Status {
                    status: 500,
                    body: "boom".into(),
                });
            }
            Ok(self.reply.clone())
        }
    }

    fn enc(condition: EncodingCondition, idx: usize) -> EncodedFixation {
        EncodedFixation {
            condition,
            png: vec![idx as u8, 1, 2],
            width: 1,
            height: 1,
            provenance: FixationRef {
                image_id: "img".into(),
                subject_id: "s1".into(),
                fixation_index: idx,
            },
        }
    }

    fn client(failures: usize, reply: &str, retries: u32) -> (VlmClient, Arc<Scripted>, tempfile::TempDir) {
        let dir = tempfile::tempdir().unwrap();
        let t = Arc::new(Scripted {
            failures_left: AtomicUsize::new(failures),
            calls: AtomicUsize::new(0),
            reply: reply.into(),
        });
        let cfg = VlmConfig {
            max_retries: retries,
            retry_base_s: 0.0,
            ..VlmConfig::default()
        };
        let c = VlmClient::new(cfg, Some(t.clone()), CacheStore::open(dir.path()).unwrap()).unwrap();
        (c, t, dir)
    }

    #[test]
    fn retries_then_succeeds() {
        let (c, t, _d) = client(2, "A dog's face with brown fur.", 3);
        let d = c.describe_patch(&enc(EncodingCondition::patch(96), 0)).unwrap();
        assert_eq!(d.text, "A dog's face with brown fur.");
        assert_eq!(t.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn gives_up_after_max_retries() {
        let (c, t, _d) = client(10, "x", 2);
        let err = c.describe_patch(&enc(EncodingCondition::patch(96), 0)).unwrap_err();
        assert!(matches!(err, VlmError::Transport { attempts: 3, .. }), "{err}");
        assert_eq!(t.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn empty_response_is_an_error_and_not_cached() {
        let (c, _t, _d) = client(0, "   ", 0);
        let e = enc(EncodingCondition::patch(96), 0);
        assert!(matches!(c.describe(&e), Err(VlmError::EmptyResponse { .. })));
        assert!(!c.cache().contains(&c.description_key(&e)));
    }

    #[test]
    fn condition_guard() {
        let (c, _t, _d) = client(0, "x", 0);
        assert!(matches!(
            c.describe_patch(&enc(EncodingCondition::marker(), 0)),
            Err(VlmError::WrongCondition { .. })
        ));
        assert!(matches!(
            c.describe_marked(&enc(EncodingCondition::patch(96), 0)),
            Err(VlmError::WrongCondition { .. })
        ));
    }

    #[test]
    fn summary_rejects_mixed_provenance() {
        let (c, _t, _d) = client(0, "x", 0);
        let a = c.describe(&enc(EncodingCondition::patch(96), 0)).unwrap();
        let mut b = c.describe(&enc(EncodingCondition::patch(96), 1)).unwrap();
        b.provenance.subject_id = "other".into();
        assert!(matches!(
            c.summarize_scanpath(b"png", &[a, b]),
            Err(VlmError::MixedProvenance(_))
        ));
        assert!(matches!(
            c.summarize_scanpath(b"png", &[]),
            Err(VlmError::NoDescriptions)
        ));
    }

    #[test]
    fn summary_key_ignores_temperature_but_not_prompt() {
        let (c, _t, dir) = client(0, "x", 0);
        let d = c.describe(&enc(EncodingCondition::patch(96), 0)).unwrap();
        let s1 = c.summarize_scanpath(b"png", std::slice::from_ref(&d)).unwrap();

        let hotter = VlmConfig {
            description_temperature: 0.9,
            ..c.config().clone()
        };
        let c2 = VlmClient::new(hotter, None, CacheStore::open(dir.path()).unwrap()).unwrap();
        let s2 = c2.summarize_scanpath(b"png", std::slice::from_ref(&d)).unwrap();
        assert_eq!(s1.cache_key, s2.cache_key);

        let plain = VlmConfig {
            fixation_list_style: FixationListStyle::Plain,
            ..c.config().clone()
        };
        let c3 = VlmClient::new(plain, None, CacheStore::open(dir.path()).unwrap()).unwrap();
        assert!(matches!(
            c3.summarize_scanpath(b"png", std::slice::from_ref(&d)),
            Err(VlmError::CacheMiss { .. })
        ));
    }

    #[test]
    fn backoff_respects_cap() {
        let mut rng = rand::rng();
        for attempt in 0..20 {
            let d = backoff_delay(attempt, 1.0, 30.0, &mut rng);
            assert!(d <= Duration::from_secs(30));
            assert!(d <= Duration::from_secs_f64(2f64.powi(attempt as i32)));
        }
        assert_eq!(backoff_delay(3, 0.0, 30.0, &mut rng), Duration::ZERO);
    }

    #[test]
    fn config_validation() {
        let bad = VlmConfig {
            summary_temperature: 2.5,
            ..VlmConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = VlmConfig {
            max_concurrent_requests: 0,
            ..VlmConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(VlmConfig::default().validate().is_ok());
    }
}
