//! OpenAI-compatible `POST /v1/chat/completions` transport.

use std::time::{Duration, Instant};

use serde_json::json;

use super::{ChatRequest, ChatResponse, GatewayError, Transport};

pub struct HttpTransport {
    endpoint: String,
    api_key_env: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    /// `base_url` is the server root, e.g. `http://localhost:8000`.
    pub fn new(base_url: &str, api_key_env: Option<String>, timeout: Duration) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(Self {
            endpoint: format!("{}/v1/chat/completions", base_url.trim_end_matches('/')),
            api_key_env,
            client,
        })
    }
}

fn map_reqwest(e: reqwest::Error) -> GatewayError {
    if e.is_timeout() {
        GatewayError::Timeout
    } else {
        GatewayError::Network(e.to_string())
    }
}

impl Transport for HttpTransport {
    fn send(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let body = json!({
            "model": req.model,
            "messages": req.messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        let mut builder = self.client.post(&self.endpoint).json(&body);
        if let Some(var) = &self.api_key_env {
            // read per call so a key is never held longer than a request
            let key = std::env::var(var).map_err(|_| GatewayError::MissingCredential(var.clone()))?;
            builder = builder.bearer_auth(key);
        }
        let started = Instant::now();
        let resp = builder.send().map_err(map_reqwest)?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(map_reqwest)?;
        let latency_ms = started.elapsed().as_millis() as u64;
        if !(200..300).contains(&status) {
            return Err(GatewayError::from_status(status, text));
        }
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| GatewayError::InvalidResponse(e.to_string()))?;
        let content = value
            .pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .ok_or_else(|| GatewayError::InvalidResponse("no choices[0].message.content".into()))?;
        Ok(ChatResponse {
            text: content.to_string(),
            status,
            latency_ms,
            provider: req.provider.clone(),
            model: req.model.clone(),
        })
    }
}
