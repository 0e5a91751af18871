//! OpenAI-compatible chat and embedding endpoints.

use std::time::{Duration, Instant};

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

use super::{CompletionRequest, Provider, ProviderError, ProviderReply};

pub struct OpenAiProvider {
    client: Client,
    base_url: String,
    api_key: Option<String>,
    embedding_model: String,
}

impl OpenAiProvider {
    /// `api_key` is usually read from the environment by the caller; `None`
    /// defers the failure to the first call.
    pub fn new(
        base_url: impl Into<String>,
        api_key: Option<String>,
        embedding_model: impl Into<String>,
        timeout: Duration,
    ) -> Result<Self, ProviderError> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ProviderError::Fatal(e.to_string()))?;
        Ok(OpenAiProvider {
            client,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            embedding_model: embedding_model.into(),
        })
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, ProviderError> {
        let key = self.api_key.as_deref().ok_or(ProviderError::AuthMissing)?;
        let resp = self
            .client
            .post(format!("{}{}", self.base_url, path))
            .bearer_auth(key)
            .json(body)
            .send()
            .map_err(|e| ProviderError::Transient(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| ProviderError::Transient(e.to_string()))?;
        match status {
            s if s.is_success() => {
                serde_json::from_str(&text).map_err(|e| ProviderError::Fatal(e.to_string()))
            }
            StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => Err(ProviderError::AuthMissing),
            s if s == StatusCode::TOO_MANY_REQUESTS || s.is_server_error() => {
                Err(ProviderError::Transient(format!("{s}: {text}")))
            }
            s => Err(ProviderError::Fatal(format!("{s}: {text}"))),
        }
    }
}

impl Provider for OpenAiProvider {
    fn name(&self) -> String {
        format!("openai:{}", self.base_url)
    }

    fn complete(&self, request: &CompletionRequest) -> Result<ProviderReply, ProviderError> {
        let started = Instant::now();
        let body = json!({
            "model": request.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        let v = self.post("/chat/completions", &body)?;
        let text = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| ProviderError::Fatal("response has no message content".into()))?
            .to_string();
        let usage = |k: &str| v["usage"][k].as_u64().map(|n| n as usize);
        Ok(ProviderReply {
            text,
            prompt_tokens: usage("prompt_tokens"),
            output_tokens: usage("completion_tokens"),
            latency: Some(started.elapsed().as_secs_f64()),
        })
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        let body = json!({"model": self.embedding_model, "input": texts});
        let v = self.post("/embeddings", &body)?;
        let data = v["data"]
            .as_array()
            .ok_or_else(|| ProviderError::Fatal("response has no data".into()))?;
        let mut out = vec![Vec::new(); texts.len()];
        for (pos, item) in data.iter().enumerate() {
            let idx = item["index"].as_u64().map(|i| i as usize).unwrap_or(pos);
            let values = item["embedding"]
                .as_array()
                .ok_or_else(|| ProviderError::Fatal("embedding is not an array".into()))?
                .iter()
                .map(|x| x.as_f64().unwrap_or(0.0))
                .collect();
            if let Some(slot) = out.get_mut(idx) {
                *slot = values;
            }
        }
        Ok(out)
    }
}
