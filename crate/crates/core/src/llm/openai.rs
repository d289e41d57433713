//! OpenAI-compatible HTTP backend (`/chat/completions`, `/embeddings`).
//!
//! Configured from `TWEETSIM_API_BASE`, `TWEETSIM_API_KEY`,
//! `TWEETSIM_CHAT_MODEL` and `TWEETSIM_EMBED_MODEL`.

use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

use super::{BackendError, ChatBackend, ChatReply, ChatRequest, EmbeddingBackend, Usage};

#[derive(Debug, Clone)]
pub struct OpenAiBackend {
    base: String,
    key: Option<String>,
    chat_model: String,
    embed_model: String,
    client: Client,
}

impl OpenAiBackend {
    pub fn new(base: &str, key: Option<String>, chat_model: &str, embed_model: &str) -> Result<Self, BackendError> {
        let client = Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| BackendError::Fatal(e.to_string()))?;
        Ok(OpenAiBackend {
            base: base.trim_end_matches('/').to_string(),
            key,
            chat_model: chat_model.to_string(),
            embed_model: embed_model.to_string(),
            client,
        })
    }

    pub fn from_env() -> Result<Self, BackendError> {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        let base = var("TWEETSIM_API_BASE").ok_or_else(|| BackendError::Fatal("TWEETSIM_API_BASE is not set".into()))?;
        OpenAiBackend::new(
            &base,
            var("TWEETSIM_API_KEY"),
            &var("TWEETSIM_CHAT_MODEL").unwrap_or_else(|| "gpt-4o-mini".into()),
            &var("TWEETSIM_EMBED_MODEL").unwrap_or_else(|| "text-embedding-3-small".into()),
        )
    }

    pub fn chat_model(&self) -> &str {
        &self.chat_model
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, BackendError> {
        let mut req = self.client.post(format!("{}{path}", self.base)).json(body);
        if let Some(k) = &self.key {
            req = req.bearer_auth(k);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() || e.is_connect() {
                BackendError::Transient(e.to_string())
            } else {
                BackendError::Fatal(e.to_string())
            }
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| BackendError::Transient(e.to_string()))?;
        classify(status, &text)?;
        serde_json::from_str(&text).map_err(|e| BackendError::Fatal(format!("bad response body: {e}")))
    }
}

fn classify(status: StatusCode, body: &str) -> Result<(), BackendError> {
    if status.is_success() {
        return Ok(());
    }
    let msg = format!("{status}: {}", body.chars().take(200).collect::<String>());
    Err(match status.as_u16() {
        401 | 403 => BackendError::Auth(msg),
        408 | 429 | 500..=599 => BackendError::Transient(msg),
        _ => BackendError::Fatal(msg),
    })
}

impl ChatBackend for OpenAiBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatReply, BackendError> {
        let mut body = json!({
            "model": self.chat_model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.decoding.temperature,
            "max_tokens": request.decoding.max_tokens,
        });
        if let Some(seed) = request.decoding.seed {
            body["seed"] = json!(seed);
        }
        let v = self.post("/chat/completions", &body)?;
        let text = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| BackendError::Fatal("response has no message content".into()))?
            .to_string();
        let usage = v.get("usage").map(|u| Usage {
            prompt_tokens: u["prompt_tokens"].as_u64().unwrap_or(0),
            completion_tokens: u["completion_tokens"].as_u64().unwrap_or(0),
        });
        Ok(ChatReply { text, usage })
    }
}

impl EmbeddingBackend for OpenAiBackend {
    fn model_id(&self) -> &str {
        &self.embed_model
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        let v = self.post("/embeddings", &json!({"model": self.embed_model, "input": texts}))?;
        let data = v["data"].as_array().ok_or_else(|| BackendError::Fatal("response has no data".into()))?;
        let mut out: Vec<(usize, Vec<f64>)> = data
            .iter()
            .enumerate()
            .map(|(pos, d)| {
                let idx = d["index"].as_u64().map(|i| i as usize).unwrap_or(pos);
                let vec = d["embedding"]
                    .as_array()
                    .map(|a| a.iter().filter_map(Value::as_f64).collect())
                    .unwrap_or_default();
                (idx, vec)
            })
            .collect();
        out.sort_by_key(|(i, _)| *i);
        Ok(out.into_iter().map(|(_, v)| v).collect())
    }
}
