use crate::cache::{CacheEntry, ResponseCache};
use crate::limiter::RateLimiter;
use crate::request::{ChatMessage, ChatRequest, TokenUsage};
use crate::transport::{HttpTransport, RawResponse, Transport};
use crate::{LlmError, ENV_API_KEY, ENV_ENDPOINT, ENV_MODEL};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub factor: f64,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay: Duration::from_secs(1),
            factor: 2.0,
            max_delay: Duration::from_secs(60),
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1`, where `attempt` counts from 1.
    pub fn delay_after(&self, attempt: u32) -> Duration {
        let exp = self.factor.powi(attempt.saturating_sub(1) as i32);
        self.base_delay.mul_f64(exp).min(self.max_delay)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClientConfig {
    pub endpoint: String,
    #[serde(skip_serializing)]
    pub api_key: String,
    pub model: String,
    pub max_tokens: u32,
    pub temperature: f64,
    /// Reuse cached replies even when sampling at non-zero temperature.
    pub cache_nonzero_temperature: bool,
    pub requests_per_minute: Option<u32>,
    pub timeout: Duration,
    pub retry: RetryPolicy,
    pub cache_dir: Option<PathBuf>,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            api_key: String::new(),
            model: String::new(),
            max_tokens: 2048,
            temperature: 0.0,
            cache_nonzero_temperature: false,
            requests_per_minute: None,
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
            cache_dir: None,
        }
    }
}

impl ClientConfig {
    /// Fill endpoint, key and model from `AGORA_LLM_*`. Missing values are
    /// left empty and reported when the client is built.
    pub fn from_env() -> Self {
        let var = |k: &str| std::env::var(k).unwrap_or_default();
        Self { endpoint: var(ENV_ENDPOINT), api_key: var(ENV_API_KEY), model: var(ENV_MODEL), ..Self::default() }
    }
}

#[derive(Debug, Clone)]
pub struct Completion {
    pub text: String,
    pub usage: TokenUsage,
    pub cached: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UsageSummary {
    pub requests: u64,
    pub network_calls: u64,
    pub cache_hits: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
    pub cache_hit_rate: f64,
}

#[derive(Default)]
struct Usage {
    requests: AtomicU64,
    network_calls: AtomicU64,
    cache_hits: AtomicU64,
    prompt_tokens: AtomicU64,
    completion_tokens: AtomicU64,
}

pub struct ChatClient {
    config: ClientConfig,
    transport: Arc<dyn Transport>,
    cache: Option<ResponseCache>,
    limiter: Option<RateLimiter>,
    usage: Usage,
}

impl std::fmt::Debug for ChatClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChatClient")
            .field("endpoint", &self.config.endpoint)
            .field("model", &self.config.model)
            .field("cache", &self.cache.as_ref().map(|c| c.dir().to_path_buf()))
            .finish()
    }
}

impl ChatClient {
    /// Build an HTTP-backed client. Endpoint, key and model are required
    /// unless every request will be served from the cache.
    pub fn new(config: ClientConfig) -> Result<Self, LlmError> {
        if config.model.is_empty() {
            return Err(LlmError::NotConfigured(format!("{ENV_MODEL} is not set")));
        }
        let transport: Arc<dyn Transport> =
            Arc::new(HttpTransport::new(config.endpoint.clone(), config.api_key.clone(), config.timeout));
        Self::with_transport(config, transport)
    }

    pub fn with_transport(config: ClientConfig, transport: Arc<dyn Transport>) -> Result<Self, LlmError> {
        let cache = match &config.cache_dir {
            Some(dir) => Some(ResponseCache::open(dir)?),
            None => None,
        };
        let limiter = config.requests_per_minute.map(RateLimiter::per_minute);
        Ok(Self { config, transport, cache, limiter, usage: Usage::default() })
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    pub fn model(&self) -> &str {
        &self.config.model
    }

    pub fn request(&self, messages: Vec<ChatMessage>) -> ChatRequest {
        ChatRequest {
            model: self.config.model.clone(),
            messages,
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
        }
    }

    fn cache_usable(&self, request: &ChatRequest) -> Option<&ResponseCache> {
        if request.temperature > 0.0 && !self.config.cache_nonzero_temperature {
            return None;
        }
        self.cache.as_ref()
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<Completion, LlmError> {
        self.usage.requests.fetch_add(1, Ordering::Relaxed);
        let key = request.request_key();
        if let Some(cache) = self.cache_usable(request) {
            if let Some(hit) = cache.get(&key)? {
                self.usage.cache_hits.fetch_add(1, Ordering::Relaxed);
                return Ok(Completion { text: hit.response, usage: hit.usage, cached: true });
            }
        }
        if self.config.endpoint.is_empty() {
            return Err(LlmError::NotConfigured(format!("{ENV_ENDPOINT} is not set and the request is not cached")));
        }

        let policy = &self.config.retry;
        let mut last = String::new();
        for attempt in 1..=policy.max_attempts.max(1) {
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            self.usage.network_calls.fetch_add(1, Ordering::Relaxed);
            match self.transport.send(request) {
                Ok(RawResponse { status: 200..=299, body }) => {
                    let (text, usage) = parse_body(&body)?;
                    self.usage.prompt_tokens.fetch_add(usage.prompt_tokens, Ordering::Relaxed);
                    self.usage.completion_tokens.fetch_add(usage.completion_tokens, Ordering::Relaxed);
                    if let Some(cache) = self.cache_usable(request) {
                        cache.put(&CacheEntry {
                            request_key: key,
                            response: text.clone(),
                            usage,
                            created_at: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
                        })?;
                    }
                    return Ok(Completion { text, usage, cached: false });
                }
                Ok(RawResponse { status: status @ (401 | 403), body }) => {
                    return Err(LlmError::Auth { status, body });
                }
                Ok(RawResponse { status, body }) if is_transient(status) => {
                    last = format!("HTTP {status}: {body}");
                }
                Ok(RawResponse { status, body }) => return Err(LlmError::Rejected { status, body }),
                Err(e) => last = e.to_string(),
            }
            if attempt < policy.max_attempts {
                std::thread::sleep(policy.delay_after(attempt));
            }
        }
        Err(LlmError::Exhausted { attempts: policy.max_attempts.max(1), last })
    }

    pub fn usage(&self) -> UsageSummary {
        let requests = self.usage.requests.load(Ordering::Relaxed);
        let cache_hits = self.usage.cache_hits.load(Ordering::Relaxed);
        let prompt_tokens = self.usage.prompt_tokens.load(Ordering::Relaxed);
        let completion_tokens = self.usage.completion_tokens.load(Ordering::Relaxed);
        UsageSummary {
            requests,
            network_calls: self.usage.network_calls.load(Ordering::Relaxed),
            cache_hits,
            prompt_tokens,
            completion_tokens,
            total_tokens: prompt_tokens + completion_tokens,
            cache_hit_rate: if requests == 0 { 0.0 } else { cache_hits as f64 / requests as f64 },
        }
    }
}

fn is_transient(status: u16) -> bool {
    matches!(status, 408 | 409 | 425 | 429) || status >= 500
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

fn parse_body(body: &str) -> Result<(String, TokenUsage), LlmError> {
    let wire: WireResponse = serde_json::from_str(body).map_err(|e| LlmError::Malformed(e.to_string()))?;
    let content = wire
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| LlmError::Malformed("no choices[0].message.content".into()))?;
    let usage = wire
        .usage
        .map(|u| TokenUsage { prompt_tokens: u.prompt_tokens, completion_tokens: u.completion_tokens })
        .unwrap_or_default();
    Ok((content, usage))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{CannedTransport, TransportError};

    fn fast_config(cache_dir: Option<PathBuf>) -> ClientConfig {
        ClientConfig {
            endpoint: "http://stub.invalid/v1/chat/completions".into(),
            api_key: "k".into(),
            model: "stub-model".into(),
            retry: RetryPolicy { base_delay: Duration::from_millis(1), ..RetryPolicy::default() },
            cache_dir,
            ..ClientConfig::default()
        }
    }

    fn client(transport: &Arc<CannedTransport>, cache_dir: Option<PathBuf>) -> ChatClient {
        ChatClient::with_transport(fast_config(cache_dir), transport.clone()).unwrap()
    }

    #[test]
    fn backoff_schedule_doubles() {
        let p = RetryPolicy::default();
        let delays: Vec<u64> = (1..5).map(|a| p.delay_after(a).as_secs()).collect();
        assert_eq!(delays, vec![1, 2, 4, 8]);
    }

    #[test]
    fn second_identical_call_is_served_from_cache() {
        let dir = tempfile::tempdir().unwrap();
        let t = Arc::new(CannedTransport::new());
        t.push_content("first");
        let c = client(&t, Some(dir.path().into()));
        let req = c.request(vec![ChatMessage::user("hi")]);
        assert_eq!(c.complete(&req).unwrap().text, "first");
        let again = c.complete(&req).unwrap();
        assert!(again.cached);
        assert_eq!(again.text, "first");
        assert_eq!(t.calls(), 1);
        let u = c.usage();
        assert_eq!((u.requests, u.cache_hits, u.network_calls), (2, 1, 1));
        assert_eq!(u.total_tokens, 30);
    }

    #[test]
    fn retries_transient_then_succeeds() {
        let t = Arc::new(CannedTransport::new());
        t.push_status(429, "slow down").push(Err(TransportError("reset".into()))).push_content("ok");
        let c = client(&t, None);
        let out = c.complete(&c.request(vec![ChatMessage::user("x")])).unwrap();
        assert_eq!(out.text, "ok");
        assert_eq!(t.calls(), 3);
    }

    #[test]
    fn auth_failure_is_not_retried() {
        let t = Arc::new(CannedTransport::new());
        t.push_status(401, "bad key").push_content("never");
        let c = client(&t, None);
        let err = c.complete(&c.request(vec![ChatMessage::user("x")])).unwrap_err();
        assert!(matches!(err, LlmError::Auth { status: 401, .. }));
        assert_eq!(t.calls(), 1);
    }

    #[test]
    fn exhausts_after_five_attempts() {
        let t = Arc::new(CannedTransport::new());
        for _ in 0..6 {
            t.push_status(503, "down");
        }
        let c = client(&t, None);
        let err = c.complete(&c.request(vec![ChatMessage::user("x")])).unwrap_err();
        assert!(matches!(err, LlmError::Exhausted { attempts: 5, .. }));
        assert_eq!(t.calls(), 5);
    }

    #[test]
    fn malformed_body_is_typed() {
        let t = Arc::new(CannedTransport::new());
        t.push_status(200, "{\"nope\": 1}");
        let c = client(&t, None);
        let err = c.complete(&c.request(vec![ChatMessage::user("x")])).unwrap_err();
        assert!(matches!(err, LlmError::Malformed(_)));
    }

    #[test]
    fn nonzero_temperature_bypasses_cache() {
        let dir = tempfile::tempdir().unwrap();
        let t = Arc::new(CannedTransport::new());
        t.push_content("a").push_content("b");
        let c = client(&t, Some(dir.path().into()));
        let mut req = c.request(vec![ChatMessage::user("x")]);
        req.temperature = 0.8;
        assert_eq!(c.complete(&req).unwrap().text, "a");
        assert_eq!(c.complete(&req).unwrap().text, "b");
        assert_eq!(t.calls(), 2);
    }

    #[test]
    fn cache_only_client_needs_no_endpoint() {
        let dir = tempfile::tempdir().unwrap();
        let t = Arc::new(CannedTransport::new());
        t.push_content("warm");
        let warm = client(&t, Some(dir.path().into()));
        let req = warm.request(vec![ChatMessage::user("x")]);
        warm.complete(&req).unwrap();

        let mut cfg = fast_config(Some(dir.path().into()));
        cfg.endpoint.clear();
        let cold = Arc::new(CannedTransport::new());
        let replay = ChatClient::with_transport(cfg, cold.clone()).unwrap();
        assert_eq!(replay.complete(&req).unwrap().text, "warm");
        assert_eq!(cold.calls(), 0);
        let miss = replay.request(vec![ChatMessage::user("other")]);
        assert!(matches!(replay.complete(&miss), Err(LlmError::NotConfigured(_))));
    }
}
