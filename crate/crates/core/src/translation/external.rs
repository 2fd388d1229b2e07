//! Generic HTTP client for an external MT service.
//!
//! Request: `POST <url>` with `{"text", "source", "target"}`.
//! Response: `{"translation": "..."}`.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::engine::{EngineError, TranslationEngine};

pub const EXTERNAL_URL_ENV: &str = "CONNER_EXTERNAL_ENGINE_URL";

#[derive(Serialize)]
struct Request<'a> {
    text: &'a str,
    source: &'a str,
    target: &'a str,
}

#[derive(Deserialize)]
struct Response {
    translation: String,
}

pub struct ExternalEngine {
    id: String,
    url: String,
    languages: (String, String),
    agent: ureq::Agent,
    max_attempts: u32,
    backoff: Duration,
    min_interval: Duration,
    last_call: Mutex<Option<Instant>>,
}

impl ExternalEngine {
    pub fn new(url: impl Into<String>, source: &str, target: &str) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .new_agent();
        ExternalEngine {
            id: "external".to_string(),
            url: url.into(),
            languages: (source.to_string(), target.to_string()),
            agent,
            max_attempts: 3,
            backoff: Duration::from_millis(200),
            min_interval: Duration::ZERO,
            last_call: Mutex::new(None),
        }
    }

    /// Reads the endpoint from `CONNER_EXTERNAL_ENGINE_URL`.
    pub fn from_env(source: &str, target: &str) -> Option<Self> {
        std::env::var(EXTERNAL_URL_ENV)
            .ok()
            .filter(|u| !u.is_empty())
            .map(|u| Self::new(u, source, target))
    }

    pub fn with_retries(mut self, max_attempts: u32, backoff: Duration) -> Self {
        self.max_attempts = max_attempts.max(1);
        self.backoff = backoff;
        self
    }

    /// Minimum spacing between consecutive requests.
    pub fn with_rate_limit(mut self, min_interval: Duration) -> Self {
        self.min_interval = min_interval;
        self
    }

    fn throttle(&self) {
        let mut last = self.last_call.lock().expect("rate limiter poisoned");
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < self.min_interval {
                std::thread::sleep(self.min_interval - elapsed);
            }
        }
        *last = Some(Instant::now());
    }

    fn call(&self, text: &str) -> Result<String, String> {
        self.throttle();
        let body = Request {
            text,
            source: &self.languages.0,
            target: &self.languages.1,
        };
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(&body)
            .map_err(|e| e.to_string())?;
        let parsed: Response = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        Ok(parsed.translation)
    }
}

impl TranslationEngine for ExternalEngine {
    fn id(&self) -> &str {
        &self.id
    }

    fn languages(&self) -> (&str, &str) {
        (&self.languages.0, &self.languages.1)
    }

    fn translate(&self, text: &str) -> Result<String, EngineError> {
        let mut last_err = String::new();
        for attempt in 0..self.max_attempts {
            if attempt > 0 {
                std::thread::sleep(self.backoff * 2u32.pow(attempt - 1));
            }
            match self.call(text) {
                Ok(t) => return Ok(t),
                Err(e) => last_err = e,
            }
        }
        Err(EngineError::Failed {
            engine: self.id.clone(),
            request: text.to_string(),
            message: format!("{} attempts: {last_err}", self.max_attempts),
        })
    }
}
