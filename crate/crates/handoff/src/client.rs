//! Streaming chat-completion clients.

use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use futures::StreamExt;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::time::{timeout_at, Instant};

use crate::error::CloudError;

pub const DEFAULT_TIMEOUT_MS: u64 = 30_000;
pub const DEFAULT_MAX_TOKENS: u32 = 512;
pub const DEFAULT_TOKEN_ENV: &str = "MULM_CLOUD_TOKEN";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CloudEndpointConfig {
    /// Base such as `http://host:port/v1`; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token, if any.
    pub token_env: Option<String>,
    pub timeout_ms: u64,
    pub max_tokens: u32,
    /// Extra attempts after a transport error that arrives before any text.
    pub retries: u32,
}

impl Default for CloudEndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "continuator".into(),
            token_env: Some(DEFAULT_TOKEN_ENV.into()),
            timeout_ms: DEFAULT_TIMEOUT_MS,
            max_tokens: DEFAULT_MAX_TOKENS,
            retries: 1,
        }
    }
}

impl CloudEndpointConfig {
    pub fn validate(&self) -> Result<(), CloudError> {
        if self.timeout_ms == 0 {
            return Err(CloudError::Config("timeout_ms must be positive".into()));
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(CloudError::Config(format!("base_url {:?} is not an http(s) URL", self.base_url)));
        }
        Ok(())
    }

    pub fn completions_url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }

    pub fn request_body(&self, messages: &[ChatMessage]) -> Value {
        json!({
            "model": self.model,
            "messages": messages,
            "stream": true,
            "temperature": 0,
            "max_tokens": self.max_tokens,
        })
    }
}

/// What a finished stream delivered.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StreamSummary {
    pub text: String,
    pub deltas: usize,
}

/// A remote model that continues a conversation, delivering text deltas in
/// arrival order.
#[async_trait]
pub trait Continuator: Send + Sync {
    async fn continue_stream(
        &self,
        messages: &[ChatMessage],
        on_delta: &mut (dyn for<'s> FnMut(&'s str) + Send),
    ) -> Result<StreamSummary, CloudError>;
}

/// One parsed `data:` frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    Delta(String),
    Done,
}

/// Parses one SSE line; lines that carry no data yield `None`.
pub fn parse_sse_line(line: &str) -> Result<Option<Frame>, CloudError> {
    let line = line.trim_end_matches('\r');
    let Some(data) = line.strip_prefix("data:") else {
        return Ok(None);
    };
    let data = data.trim_start();
    if data == "[DONE]" {
        return Ok(Some(Frame::Done));
    }
    let v: Value = serde_json::from_str(data).map_err(|e| CloudError::Malformed(format!("{e}: {data}")))?;
    if let Some(err) = v.get("error") {
        return Err(CloudError::Malformed(format!("endpoint error frame: {err}")));
    }
    let content = v
        .pointer("/choices/0/delta/content")
        .and_then(Value::as_str)
        .unwrap_or_default();
    Ok(if content.is_empty() {
        None
    } else {
        Some(Frame::Delta(content.to_string()))
    })
}

/// Chat-completions client over HTTP with server-sent-event streaming.
pub struct HttpContinuator {
    config: CloudEndpointConfig,
    token: Option<String>,
    client: reqwest::Client,
}

impl HttpContinuator {
    pub fn new(config: CloudEndpointConfig) -> Result<Self, CloudError> {
        config.validate()?;
        let token = config
            .token_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|t| !t.is_empty());
        let client = reqwest::Client::builder()
            .build()
            .map_err(|e| CloudError::Config(e.to_string()))?;
        Ok(Self { config, token, client })
    }

    pub fn config(&self) -> &CloudEndpointConfig {
        &self.config
    }

    async fn attempt(
        &self,
        messages: &[ChatMessage],
        on_delta: &mut (dyn for<'s> FnMut(&'s str) + Send),
        summary: &mut StreamSummary,
    ) -> Result<(), CloudError> {
        let deadline = Instant::now() + Duration::from_millis(self.config.timeout_ms);
        let timed_out = |summary: &StreamSummary| CloudError::Timeout {
            timeout_ms: self.config.timeout_ms,
            partial: summary.text.clone(),
        };
        let transport = |e: reqwest::Error, summary: &StreamSummary| CloudError::Transport {
            message: e.to_string(),
            partial: summary.text.clone(),
        };

        let mut req = self
            .client
            .post(self.config.completions_url())
            .header("accept", "text/event-stream")
            .json(&self.config.request_body(messages));
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = timeout_at(deadline, req.send())
            .await
            .map_err(|_| timed_out(summary))?
            .map_err(|e| transport(e, summary))?;
        let status = resp.status();
        if !status.is_success() {
            let body = timeout_at(deadline, resp.text()).await.ok().and_then(Result::ok).unwrap_or_default();
            return Err(CloudError::Protocol {
                status: status.as_u16(),
                body,
            });
        }

        let mut stream = resp.bytes_stream();
        let mut buf: Vec<u8> = Vec::new();
        loop {
            let chunk = match timeout_at(deadline, stream.next()).await {
                Err(_) => return Err(timed_out(summary)),
                Ok(None) => break,
                Ok(Some(chunk)) => chunk.map_err(|e| transport(e, summary))?,
            };
            buf.extend_from_slice(&chunk);
            while let Some(nl) = buf.iter().position(|&b| b == b'\n') {
                let line: Vec<u8> = buf.drain(..=nl).collect();
                let line = String::from_utf8_lossy(&line[..line.len() - 1]).into_owned();
                match parse_sse_line(&line)? {
                    Some(Frame::Delta(text)) => {
                        on_delta(&text);
                        summary.text.push_str(&text);
                        summary.deltas += 1;
                    }
                    Some(Frame::Done) => return Ok(()),
                    None => {}
                }
            }
        }
        // some servers close without a terminator
        if let Some(Frame::Delta(text)) = parse_sse_line(&String::from_utf8_lossy(&buf))? {
            on_delta(&text);
            summary.text.push_str(&text);
            summary.deltas += 1;
        }
        Ok(())
    }
}

#[async_trait]
impl Continuator for HttpContinuator {
    async fn continue_stream(
        &self,
        messages: &[ChatMessage],
        on_delta: &mut (dyn for<'s> FnMut(&'s str) + Send),
    ) -> Result<StreamSummary, CloudError> {
        let mut attempts_left = self.config.retries;
        loop {
            let mut summary = StreamSummary::default();
            match self.attempt(messages, on_delta, &mut summary).await {
                Ok(()) => return Ok(summary),
                // retrying after delivered text would duplicate it
                Err(e) if e.is_retriable() && summary.deltas == 0 && attempts_left > 0 => {
                    attempts_left -= 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Replays a fixed list of deltas, optionally failing part-way.
#[derive(Debug, Default)]
pub struct ScriptedContinuator {
    deltas: Vec<String>,
    delay: Option<Duration>,
    failure: Option<(usize, CloudError)>,
    calls: Mutex<Vec<Vec<ChatMessage>>>,
}

impl ScriptedContinuator {
    pub fn new<S: Into<String>>(deltas: impl IntoIterator<Item = S>) -> Self {
        Self {
            deltas: deltas.into_iter().map(Into::into).collect(),
            ..Default::default()
        }
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = Some(delay);
        self
    }

    /// Fails with `error` after delivering `after` deltas.
    pub fn failing_after(mut self, after: usize, error: CloudError) -> Self {
        self.failure = Some((after, error));
        self
    }

    /// Message lists received so far.
    pub fn calls(&self) -> Vec<Vec<ChatMessage>> {
        self.calls.lock().expect("calls lock").clone()
    }
}

#[async_trait]
impl Continuator for ScriptedContinuator {
    async fn continue_stream(
        &self,
        messages: &[ChatMessage],
        on_delta: &mut (dyn for<'s> FnMut(&'s str) + Send),
    ) -> Result<StreamSummary, CloudError> {
        self.calls.lock().expect("calls lock").push(messages.to_vec());
        let mut summary = StreamSummary::default();
        for (i, delta) in self.deltas.iter().enumerate() {
            if let Some((after, err)) = &self.failure {
                if i == *after {
                    return Err(with_partial(err, &summary.text));
                }
            }
            if let Some(d) = self.delay {
                tokio::time::sleep(d).await;
            }
            on_delta(delta);
            summary.text.push_str(delta);
            summary.deltas += 1;
        }
        if let Some((_, err)) = &self.failure {
            return Err(with_partial(err, &summary.text));
        }
        Ok(summary)
    }
}

fn with_partial(err: &CloudError, text: &str) -> CloudError {
    match err.clone() {
        CloudError::Transport { message, .. } => CloudError::Transport {
            message,
            partial: text.to_string(),
        },
        CloudError::Timeout { timeout_ms, .. } => CloudError::Timeout {
            timeout_ms,
            partial: text.to_string(),
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sse_lines() {
        assert_eq!(
            parse_sse_line(r#"data: {"choices":[{"delta":{"content":"Hi"}}]}"#).unwrap(),
            Some(Frame::Delta("Hi".into()))
        );
        assert_eq!(parse_sse_line("data: [DONE]\r").unwrap(), Some(Frame::Done));
        assert_eq!(parse_sse_line(": keep-alive").unwrap(), None);
        assert_eq!(parse_sse_line(r#"data: {"choices":[{"delta":{"role":"assistant"}}]}"#).unwrap(), None);
        assert!(matches!(parse_sse_line("data: {nope"), Err(CloudError::Malformed(_))));
    }

    #[test]
    fn request_shape() {
        let config = CloudEndpointConfig::default();
        let body = config.request_body(&[ChatMessage::user("q")]);
        assert_eq!(body["stream"], true);
        assert_eq!(body["temperature"], 0);
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(
            CloudEndpointConfig {
                base_url: "http://h/v1/".into(),
                ..config.clone()
            }
            .completions_url(),
            "http://h/v1/chat/completions"
        );
        assert!(CloudEndpointConfig {
            timeout_ms: 0,
            ..config
        }
        .validate()
        .is_err());
    }

    #[tokio::test]
    async fn scripted_delivers_in_order() {
        let mock = ScriptedContinuator::new(["a", "b", "c"]);
        let mut seen = Vec::new();
        let summary = mock
            .continue_stream(&[ChatMessage::user("q")], &mut |d: &str| seen.push(d.to_string()))
            .await
            .unwrap();
        assert_eq!(seen, ["a", "b", "c"]);
        assert_eq!(summary.text, "abc");
        assert_eq!(mock.calls().len(), 1);
    }

    #[tokio::test]
    async fn scripted_failure_keeps_partial_text() {
        let mock = ScriptedContinuator::new(["a", "b", "c"]).failing_after(
            2,
            CloudError::Timeout {
                timeout_ms: 5,
                partial: String::new(),
            },
        );
        let err = mock.continue_stream(&[], &mut |_: &str| {}).await.unwrap_err();
        assert_eq!(err.partial(), "ab");
    }
}
