use crate::request::ChatRequest;
use parking_lot::Mutex;
use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("transport failure: {0}")]
pub struct TransportError(pub String);

/// Something that can deliver a chat request and return the raw HTTP reply.
pub trait Transport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<RawResponse, TransportError>;
}

/// chat-completions over HTTP+JSON.
pub struct HttpTransport {
    agent: ureq::Agent,
    endpoint: String,
    api_key: String,
}

impl HttpTransport {
    pub fn new(endpoint: impl Into<String>, api_key: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent, endpoint: endpoint.into(), api_key: api_key.into() }
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: &ChatRequest) -> Result<RawResponse, TransportError> {
        let body = serde_json::json!({
            "model": request.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| TransportError(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(|e| TransportError(e.to_string()))?;
        Ok(RawResponse { status, body })
    }
}

/// Replays a fixed queue of replies; useful for fault injection in tests.
#[derive(Default)]
pub struct CannedTransport {
    replies: Mutex<VecDeque<Result<RawResponse, TransportError>>>,
    requests: Mutex<Vec<ChatRequest>>,
    calls: AtomicUsize,
}

impl CannedTransport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Queue a 200 reply whose assistant content is `content`.
    pub fn push_content(&self, content: &str) -> &Self {
        let body = serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": content}}],
            "usage": {"prompt_tokens": 10, "completion_tokens": 20},
        });
        self.push(Ok(RawResponse { status: 200, body: body.to_string() }))
    }

    pub fn push_status(&self, status: u16, body: &str) -> &Self {
        self.push(Ok(RawResponse { status, body: body.into() }))
    }

    pub fn push(&self, reply: Result<RawResponse, TransportError>) -> &Self {
        self.replies.lock().push_back(reply);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().clone()
    }

    pub fn remaining(&self) -> usize {
        self.replies.lock().len()
    }
}

impl Transport for CannedTransport {
    fn send(&self, request: &ChatRequest) -> Result<RawResponse, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.requests.lock().push(request.clone());
        self.replies
            .lock()
            .pop_front()
            .unwrap_or_else(|| Err(TransportError("canned transport exhausted".into())))
    }
}
