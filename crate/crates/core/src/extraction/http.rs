use std::thread;
use std::time::Duration;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{ExtractionError, ExtractionRequest, Extractor, ExtractorConfig};

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

/// Client for an OpenAI-compatible chat-completions endpoint.
pub struct HttpExtractor {
    endpoint: String,
    model: String,
    temperature: f64,
    retries: u32,
    backoff: Duration,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpExtractor {
    /// Reads the credential from `config.credential_env`; an unset variable
    /// means requests go out without an `Authorization` header.
    pub fn from_config(config: &ExtractorConfig) -> Result<Self, ExtractionError> {
        config.validate()?;
        let endpoint = config.endpoint.clone().unwrap_or_default();
        let model = config.model.clone().unwrap_or_default();
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| ExtractionError::Config(e.to_string()))?;
        Ok(Self {
            endpoint,
            model,
            temperature: config.temperature,
            retries: config.retries,
            backoff: Duration::from_millis(config.backoff_ms),
            api_key: std::env::var(&config.credential_env).ok().filter(|k| !k.is_empty()),
            client,
        })
    }

    /// Fails instead of sending unauthenticated requests.
    pub fn require_credential(config: &ExtractorConfig) -> Result<Self, ExtractionError> {
        let me = Self::from_config(config)?;
        if me.api_key.is_none() {
            return Err(ExtractionError::MissingCredential(config.credential_env.clone()));
        }
        Ok(me)
    }

    fn send_once(&self, prompt: &str) -> Result<String, Attempt> {
        let body = ChatRequest {
            model: &self.model,
            messages: [ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: self.temperature,
        };
        let mut req = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Attempt::Retry(e.to_string()))?;
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Attempt::Retry(format!("status {status}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(ExtractionError::Status {
                status: status.as_u16(),
                body: text,
            }));
        }
        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|e| Attempt::Fatal(ExtractionError::Schema(format!("chat response: {e}"))))?;
        Ok(parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default())
    }
}

enum Attempt {
    Retry(String),
    Fatal(ExtractionError),
}

impl Extractor for HttpExtractor {
    fn complete(&self, request: &ExtractionRequest) -> Result<String, ExtractionError> {
        let attempts = self.retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                thread::sleep(self.backoff * 2u32.pow(attempt - 1));
            }
            match self.send_once(&request.payload) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    warn!("extraction request attempt {} of {attempts} failed: {msg}", attempt + 1);
                    last = msg;
                }
            }
        }
        Err(ExtractionError::Transport {
            attempts,
            message: last,
        })
    }

    fn name(&self) -> &str {
        "http"
    }
}
