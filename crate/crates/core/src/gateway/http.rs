//! Live chat-completions endpoint with bounded retry.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{ChatMessage, ChatProvider, CompletionRequest, GatewayError, Role};
use crate::env::ToolCall;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// e.g. `https://api.example.com/v1`; `/chat/completions` is appended.
    pub base_url: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff")]
    pub initial_backoff_ms: u64,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_attempts() -> u32 {
    3
}
fn default_backoff() -> u64 {
    500
}
fn default_timeout() -> u64 {
    120
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key_env: None,
            max_attempts: default_attempts(),
            initial_backoff_ms: default_backoff(),
            timeout_secs: default_timeout(),
        }
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("transport error: {0}")]
pub struct TransportError(pub String);

pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &Value) -> Result<TransportResponse, TransportError>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::ProviderFailure {
                status: None,
                message: e.to_string(),
            })?;
        Ok(Self { client })
    }
}

impl Transport for ReqwestTransport {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &Value) -> Result<TransportResponse, TransportError> {
        let mut req = self.client.post(url).json(body);
        if let Some(token) = bearer {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| TransportError(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| TransportError(e.to_string()))?;
        Ok(TransportResponse { status, body })
    }
}

fn retryable(status: u16) -> bool {
    status == 429 || status == 408 || (500..600).contains(&status)
}

pub struct HttpProvider<T: Transport = ReqwestTransport> {
    config: HttpConfig,
    transport: T,
    sleep: Box<dyn Fn(Duration) + Send + Sync>,
}

impl HttpProvider<ReqwestTransport> {
    pub fn new(config: HttpConfig) -> Result<Self, GatewayError> {
        let transport = ReqwestTransport::new(Duration::from_secs(config.timeout_secs))?;
        Ok(Self::with_transport(config, transport))
    }
}

impl<T: Transport> HttpProvider<T> {
    pub fn with_transport(config: HttpConfig, transport: T) -> Self {
        Self {
            config,
            transport,
            sleep: Box::new(std::thread::sleep),
        }
    }

    pub fn with_sleep(mut self, sleep: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleep = Box::new(sleep);
        self
    }

    fn bearer(&self) -> Result<Option<String>, GatewayError> {
        match &self.config.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var).map(Some).map_err(|_| GatewayError::ProviderFailure {
                status: None,
                message: format!("credential variable {var} is not set"),
            }),
        }
    }
}

impl<T: Transport> ChatProvider for HttpProvider<T> {
    fn send(&self, request: &CompletionRequest) -> Result<ChatMessage, GatewayError> {
        let body = request_body(request);
        let bearer = self.bearer()?;
        let url = self.config.endpoint();
        let attempts = self.config.max_attempts.max(1);
        let mut last_status = None;
        let mut last_message = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let backoff = self.config.initial_backoff_ms.saturating_mul(1 << (attempt - 1));
                (self.sleep)(Duration::from_millis(backoff));
            }
            match self.transport.post_json(&url, bearer.as_deref(), &body) {
                Ok(resp) if (200..300).contains(&resp.status) => return parse_response(&resp.body),
                Ok(resp) => {
                    last_status = Some(resp.status);
                    last_message = resp.body;
                    if !retryable(resp.status) {
                        break;
                    }
                }
                Err(e) => {
                    last_status = None;
                    last_message = e.0;
                }
            }
            log::warn!("attempt {} of {attempts} to {url} failed: {last_status:?}", attempt + 1);
        }
        Err(GatewayError::ProviderFailure {
            status: last_status,
            message: last_message,
        })
    }
}

fn wire_message(m: &ChatMessage) -> Value {
    let role = match m.role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
        Role::Tool => "tool",
    };
    let mut out = Map::new();
    out.insert("role".into(), json!(role));
    out.insert("content".into(), json!(m.content));
    if !m.calls().is_empty() {
        let calls: Vec<Value> = m
            .calls()
            .iter()
            .map(|c| {
                json!({
                    "id": c.id,
                    "type": "function",
                    "function": {
                        "name": c.name,
                        "arguments": Value::Object(c.arguments.clone()).to_string(),
                    },
                })
            })
            .collect();
        out.insert("tool_calls".into(), Value::Array(calls));
    }
    if let Some(id) = &m.tool_call_id {
        out.insert("tool_call_id".into(), json!(id));
    }
    Value::Object(out)
}

/// Request body in the de-facto chat-completions schema.
pub fn request_body(request: &CompletionRequest) -> Value {
    let mut body = json!({
        "model": request.model,
        "messages": request.messages.iter().map(wire_message).collect::<Vec<_>>(),
        "temperature": request.temperature,
        "max_tokens": request.max_output_tokens,
    });
    if let Some(tools) = request.tools.as_ref().filter(|t| !t.is_empty()) {
        body["tools"] = tools
            .iter()
            .map(|t| {
                json!({
                    "type": "function",
                    "function": {"name": t.name, "description": t.description, "parameters": t.json_schema()},
                })
            })
            .collect();
    }
    body
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
    #[serde(default)]
    tool_calls: Option<Vec<WireToolCall>>,
}

#[derive(Deserialize)]
struct WireToolCall {
    #[serde(default)]
    id: String,
    function: WireFunction,
}

#[derive(Deserialize)]
struct WireFunction {
    name: String,
    #[serde(default)]
    arguments: String,
}

pub fn parse_response(body: &str) -> Result<ChatMessage, GatewayError> {
    let resp: WireResponse = serde_json::from_str(body)
        .map_err(|e| GatewayError::SchemaViolation(format!("unparseable completion body: {e}")))?;
    let choice = resp
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| GatewayError::SchemaViolation("completion has no choices".into()))?;
    let mut msg = ChatMessage::assistant(choice.message.content.unwrap_or_default());
    if let Some(calls) = choice.message.tool_calls.filter(|c| !c.is_empty()) {
        let parsed = calls
            .into_iter()
            .map(|c| {
                let args: Value = if c.function.arguments.trim().is_empty() {
                    json!({})
                } else {
                    serde_json::from_str(&c.function.arguments).map_err(|e| {
                        GatewayError::SchemaViolation(format!("arguments of {} are not JSON: {e}", c.function.name))
                    })?
                };
                if !args.is_object() {
                    return Err(GatewayError::SchemaViolation(format!(
                        "arguments of {} are not an object",
                        c.function.name
                    )));
                }
                Ok(ToolCall::new(c.function.name, args).with_id(c.id))
            })
            .collect::<Result<Vec<_>, _>>()?;
        msg.tool_calls = Some(parsed);
    }
    Ok(msg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::mini_retail;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::{Arc, Mutex};

    struct FakeTransport {
        responses: Mutex<Vec<Result<TransportResponse, TransportError>>>,
        calls: AtomicUsize,
    }

    impl FakeTransport {
        fn new(mut responses: Vec<Result<TransportResponse, TransportError>>) -> Self {
            responses.reverse();
            Self {
                responses: Mutex::new(responses),
                calls: AtomicUsize::new(0),
            }
        }
    }

    impl Transport for FakeTransport {
        fn post_json(&self, _: &str, _: Option<&str>, _: &Value) -> Result<TransportResponse, TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.responses.lock().unwrap().pop().expect("unexpected extra attempt")
        }
    }

    fn status(code: u16, body: &str) -> Result<TransportResponse, TransportError> {
        Ok(TransportResponse {
            status: code,
            body: body.into(),
        })
    }

    const OK_TEXT: &str = r#"{"choices":[{"message":{"role":"assistant","content":"hello"}}]}"#;

    fn provider(responses: Vec<Result<TransportResponse, TransportError>>) -> (HttpProvider<FakeTransport>, Arc<Mutex<Vec<Duration>>>) {
        let slept = Arc::new(Mutex::new(Vec::new()));
        let log = slept.clone();
        let p = HttpProvider::with_transport(HttpConfig::new("http://localhost:1/v1/"), FakeTransport::new(responses))
            .with_sleep(move |d| log.lock().unwrap().push(d));
        (p, slept)
    }

    fn request() -> CompletionRequest {
        CompletionRequest::new("m", vec![ChatMessage::user("hi")])
    }

    #[test]
    fn retries_transient_failures_with_backoff() {
        let (p, slept) = provider(vec![status(503, "busy"), Err(TransportError("reset".into())), status(200, OK_TEXT)]);
        assert_eq!(p.complete(&request()).unwrap().content, "hello");
        assert_eq!(*slept.lock().unwrap(), [Duration::from_millis(500), Duration::from_millis(1000)]);
    }

    #[test]
    fn exhausted_budget_reports_last_status() {
        let (p, _) = provider(vec![status(500, "a"), status(502, "b"), status(429, "slow down")]);
        assert_eq!(
            p.complete(&request()),
            Err(GatewayError::ProviderFailure {
                status: Some(429),
                message: "slow down".into()
            })
        );
        assert_eq!(p.transport.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (p, _) = provider(vec![status(400, "bad request")]);
        assert!(matches!(p.complete(&request()), Err(GatewayError::ProviderFailure { status: Some(400), .. })));
        assert_eq!(p.transport.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn tool_calls_are_parsed_and_validated() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":null,
            "tool_calls":[{"id":"c1","type":"function","function":{"name":"get_order","arguments":"{\"order_id\":\"o1\"}"}}]}}]}"#;
        let (p, _) = provider(vec![status(200, body)]);
        let req = request().with_tools(mini_retail::tool_specs());
        let msg = p.complete(&req).unwrap();
        assert_eq!(msg.calls()[0].name, "get_order");
        assert_eq!(msg.calls()[0].id, "c1");

        let invented = body.replace("get_order", "search_onestep_flight");
        let (p, _) = provider(vec![status(200, &invented)]);
        assert!(matches!(p.complete(&req), Err(GatewayError::SchemaViolation(_))));
    }

    #[test]
    fn request_body_uses_wire_schema() {
        let call = ToolCall::new("get_order", json!({"order_id": "o1"})).with_id("c1");
        let req = CompletionRequest::new(
            "gpt",
            vec![
                ChatMessage::system("s"),
                ChatMessage::assistant_tool_calls(vec![call]),
                ChatMessage::tool("c1", "{}"),
            ],
        )
        .with_tools(mini_retail::tool_specs());
        let body = request_body(&req);
        assert_eq!(body["messages"][1]["tool_calls"][0]["function"]["arguments"], r#"{"order_id":"o1"}"#);
        assert_eq!(body["messages"][2]["tool_call_id"], "c1");
        assert_eq!(body["tools"][0]["function"]["parameters"]["required"], json!(["name", "zip"]));
        assert_eq!(body["max_tokens"], 1024);
    }
}
