//! OpenAI-compatible HTTP backends for chat completion and embeddings.

use std::net::TcpStream;
use std::time::Duration;

use caproute_core::sifting::{EmbedError, Embedder, EmbeddingVector};
use caproute_core::{BackendError, ChatCompletion};
use reqwest::blocking::Client;
use reqwest::Url;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

fn default_timeout_secs() -> u64 {
    30
}

/// Where and how to reach a remote model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteEndpoint {
    /// e.g. `https://api.example.com/v1`; `/chat/completions` or `/embeddings` is appended.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

struct Http {
    client: Client,
    url: Url,
    token: Option<String>,
    endpoint: RemoteEndpoint,
}

impl Http {
    fn new(endpoint: RemoteEndpoint, path: &str) -> Result<Self, String> {
        let base = endpoint.base_url.trim_end_matches('/');
        let url = Url::parse(&format!("{base}/{path}")).map_err(|e| format!("bad base_url `{}`: {e}", endpoint.base_url))?;
        let token = match &endpoint.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| format!("environment variable `{var}` is not set"))?),
            None => None,
        };
        let client = Client::builder()
            .timeout(Duration::from_secs(endpoint.timeout_secs))
            .build()
            .map_err(|e| e.to_string())?;
        Ok(Self { client, url, token, endpoint })
    }

    fn post(&self, body: &Value) -> Result<Value, BackendError> {
        let mut req = self.client.post(self.url.clone()).json(body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| BackendError::Unavailable(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(BackendError::Unavailable(format!("HTTP {status}: {}", text.chars().take(200).collect::<String>())));
        }
        resp.json().map_err(|e| BackendError::InvalidResponse(e.to_string()))
    }

    fn probe(&self) -> bool {
        let Ok(addrs) = self.url.socket_addrs(|| None) else {
            return false;
        };
        addrs.iter().any(|a| TcpStream::connect_timeout(a, Duration::from_secs(1)).is_ok())
    }
}

/// Chat backend speaking `POST {base_url}/chat/completions`.
pub struct HttpChatClient {
    http: Http,
}

impl HttpChatClient {
    pub fn new(endpoint: RemoteEndpoint) -> Result<Self, String> {
        Ok(Self { http: Http::new(endpoint, "chat/completions")? })
    }
}

impl ChatCompletion for HttpChatClient {
    fn complete(&self, system: &str, user: &str) -> Result<String, BackendError> {
        let body = json!({
            "model": self.http.endpoint.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        });
        let v = self.http.post(&body)?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::InvalidResponse("missing choices[0].message.content".into()))
    }

    fn probe(&self) -> bool {
        self.http.probe()
    }
}

/// Embedding backend speaking `POST {base_url}/embeddings`.
pub struct HttpEmbedder {
    http: Http,
    dim: usize,
}

impl HttpEmbedder {
    pub fn new(endpoint: RemoteEndpoint, dim: usize) -> Result<Self, String> {
        Ok(Self { http: Http::new(endpoint, "embeddings")?, dim })
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let body = json!({"model": self.http.endpoint.model, "input": text});
        let v = self.http.post(&body).map_err(|e| EmbedError::BackendUnavailable(e.to_string()))?;
        let values: Vec<f64> = v
            .pointer("/data/0/embedding")
            .and_then(|e| serde_json::from_value(e.clone()).ok())
            .ok_or(EmbedError::InvalidVector)?;
        if values.len() != self.dim {
            return Err(EmbedError::DimensionMismatch { expected: self.dim, actual: values.len() });
        }
        EmbeddingVector::new(values)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn tag(&self) -> String {
        format!("remote/{}@{}/dim={}", self.http.endpoint.model, self.http.endpoint.base_url, self.dim)
    }

    fn probe(&self) -> bool {
        self.http.probe()
    }
}
