use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{FinishState, GatewayError, LlmBackend, LlmRequest, LlmResponse, Provenance};

/// Environment variable holding the bearer token for the live endpoint.
/// The token is only ever read from the environment.
pub const API_KEY_ENV: &str = "IRAC_LLM_API_KEY";

/// Live backend for an OpenAI-compatible `chat/completions` endpoint.
pub struct HttpBackend {
    endpoint: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(600))
            .build()
            .map_err(|e| GatewayError::BackendUnavailable(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into(),
            api_key,
            client,
        })
    }

    /// Reads the token from [`API_KEY_ENV`]; an unset variable means no
    /// `Authorization` header (useful for local inference servers).
    pub fn from_env(endpoint: impl Into<String>) -> Result<Self, GatewayError> {
        Self::new(endpoint, std::env::var(API_KEY_ENV).ok())
    }
}

fn classify_status(status: reqwest::StatusCode, body: &str) -> GatewayError {
    let snippet: String = body.chars().take(200).collect();
    match status.as_u16() {
        429 => GatewayError::RateLimited,
        408 | 500..=599 => GatewayError::Transient(format!("HTTP {status}: {snippet}")),
        _ => GatewayError::BackendUnavailable(format!("HTTP {status}: {snippet}")),
    }
}

impl LlmBackend for HttpBackend {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, GatewayError> {
        let body = json!({
            "model": req.model_tag,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_output,
        });
        let mut call = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let resp = call.send().map_err(|e| {
            if e.is_timeout() {
                GatewayError::Transient(e.to_string())
            } else {
                GatewayError::BackendUnavailable(e.to_string())
            }
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| GatewayError::Transient(e.to_string()))?;
        if !status.is_success() {
            return Err(classify_status(status, &text));
        }
        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|e| GatewayError::BackendUnavailable(format!("bad response body: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| GatewayError::BackendUnavailable("response has no choices".into()))?;
        let finish = match choice.finish_reason.as_deref() {
            Some("length") => FinishState::Truncated,
            Some("content_filter") => return Err(GatewayError::Refused),
            _ => FinishState::Complete,
        };
        Ok(LlmResponse::new(
            choice.message.content.unwrap_or_default(),
            finish,
            Provenance::Live,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// One-shot HTTP server answering with `status` and `body`; returns the
    /// endpoint URL and a handle yielding the raw request it saw.
    fn serve_once(status: u16, body: &'static str) -> (String, std::thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                head.push_str(&line);
                if line == "\r\n" {
                    break;
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            head + &String::from_utf8(buf).unwrap()
        });
        (format!("http://{addr}/v1/chat/completions"), handle)
    }

    #[test]
    fn parses_a_chat_completion() {
        let (url, seen) = serve_once(
            200,
            r#"{"choices":[{"message":{"role":"assistant","content":"{\"vertices_\":[]}"},"finish_reason":"stop"}]}"#,
        );
        let backend = HttpBackend::new(url, Some("secret".into())).unwrap();
        let resp = backend.complete(&LlmRequest::new("prompt text", "model-x")).unwrap();
        assert_eq!(resp.text, "{\"vertices_\":[]}");
        assert_eq!(resp.finish_state, FinishState::Complete);
        assert_eq!(resp.provenance, Provenance::Live);
        let raw = seen.join().unwrap();
        assert!(raw.to_ascii_lowercase().contains("authorization: bearer secret"));
        assert!(raw.contains("\"model\":\"model-x\""));
        assert!(raw.contains("prompt text"));
    }

    #[test]
    fn length_finish_is_truncated() {
        let (url, _h) = serve_once(
            200,
            r#"{"choices":[{"message":{"content":"{\"vert"},"finish_reason":"length"}]}"#,
        );
        let resp = HttpBackend::new(url, None)
            .unwrap()
            .complete(&LlmRequest::new("p", "m"))
            .unwrap();
        assert_eq!(resp.finish_state, FinishState::Truncated);
    }

    #[test]
    fn status_classes() {
        let (url, _h) = serve_once(429, "{}");
        let err = HttpBackend::new(url, None)
            .unwrap()
            .complete(&LlmRequest::new("p", "m"))
            .unwrap_err();
        assert_eq!(err, GatewayError::RateLimited);

        let (url, _h) = serve_once(503, "{}");
        let err = HttpBackend::new(url, None)
            .unwrap()
            .complete(&LlmRequest::new("p", "m"))
            .unwrap_err();
        assert!(err.is_transient());

        let (url, _h) = serve_once(401, "{\"error\":\"bad key\"}");
        let err = HttpBackend::new(url, None)
            .unwrap()
            .complete(&LlmRequest::new("p", "m"))
            .unwrap_err();
        assert!(matches!(err, GatewayError::BackendUnavailable(_)));
    }

    #[test]
    fn content_filter_is_refused() {
        let (url, _h) = serve_once(
            200,
            r#"{"choices":[{"message":{"content":""},"finish_reason":"content_filter"}]}"#,
        );
        let err = HttpBackend::new(url, None)
            .unwrap()
            .complete(&LlmRequest::new("p", "m"))
            .unwrap_err();
        assert_eq!(err, GatewayError::Refused);
    }
}
