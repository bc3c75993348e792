//! Blocking JSON client for a remote masked-LM scoring service.
//!
//! Endpoints: `GET /info`, `POST /score`, `POST /grad_sep`, and the optional
//! `GET /embedding?token=...` used to initialize a learned separator.
//! Transport failures and `503` responses are retried with exponential
//! backoff; `400` and `422` are contract violations and are not retried.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use log::{debug, warn};
use reqwest::blocking::{Client, RequestBuilder};
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    Candidates, LabeledPrompt, Oracle, OracleInfo, ScoreDistribution, Separator,
    SeparatorEmbedding,
};
use crate::domain::{Prompt, Segment};
use crate::error::{Error, Result};

/// Request and response bodies of the scoring protocol.
pub mod wire {
    use super::*;

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct WireSegment {
        pub kind: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub text: Option<String>,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    #[serde(untagged)]
    pub enum WireCandidates {
        List(Vec<String>),
        /// The literal string `"vocab"`.
        Marker(String),
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct ScoreRequest {
        pub segments: Vec<WireSegment>,
        pub candidates: WireCandidates,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub sep_embedding: Option<Vec<f64>>,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct ScoreResponse {
        pub probs: Vec<f64>,
        pub candidates: Vec<String>,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct GradItem {
        pub segments: Vec<WireSegment>,
        pub gold: String,
        pub candidates: WireCandidates,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct GradRequest {
        pub batch: Vec<GradItem>,
        pub sep_embedding: Vec<f64>,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct GradResponse {
        pub loss: f64,
        pub grad: Vec<f64>,
        pub dim: usize,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct EmbeddingResponse {
        pub dim: usize,
        pub values: Vec<f64>,
    }

    pub fn segments(prompt: &Prompt, literal_sep: Option<&str>) -> Vec<WireSegment> {
        prompt
            .segments()
            .iter()
            .map(|s| match s {
                Segment::Text(t) => WireSegment {
                    kind: "text".into(),
                    text: Some(t.clone()),
                },
                Segment::Sep => WireSegment {
                    kind: "sep".into(),
                    text: literal_sep.map(str::to_string),
                },
                Segment::Mask => WireSegment {
                    kind: "mask".into(),
                    text: None,
                },
            })
            .collect()
    }

    pub fn candidates(c: &Candidates) -> WireCandidates {
        match c {
            Candidates::Labels(l) => WireCandidates::List(l.as_ref().clone()),
            Candidates::Vocab => WireCandidates::Marker("vocab".into()),
        }
    }
}

use wire::*;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 4,
            initial_backoff_ms: 200,
            max_backoff_ms: 5_000,
        }
    }
}

impl RetryPolicy {
    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self
            .initial_backoff_ms
            .saturating_mul(1u64 << attempt.min(16))
            .min(self.max_backoff_ms);
        Duration::from_millis(ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpOracleConfig {
    pub endpoint: String,
    /// Upper bound on concurrent requests issued by one batch call.
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
}

impl Default for HttpOracleConfig {
    fn default() -> Self {
        Self::new("http://127.0.0.1:8000")
    }
}

impl HttpOracleConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            max_in_flight: 8,
            timeout_secs: 120,
            retry: RetryPolicy::default(),
        }
    }
}

pub struct HttpOracle {
    base: String,
    client: Client,
    config: HttpOracleConfig,
    info: OnceLock<OracleInfo>,
    vocab: Mutex<Option<Arc<Vec<String>>>>,
}

enum Attempt<T> {
    Done(T),
    Retry(String),
}

impl HttpOracle {
    pub fn new(config: HttpOracleConfig) -> Result<Self> {
        if config.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be at least 1".into()));
        }
        let client = Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(Self {
            base: config.endpoint.trim_end_matches('/').to_string(),
            client,
            config,
            info: OnceLock::new(),
            vocab: Mutex::new(None),
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    fn attempt<T: DeserializeOwned>(&self, request: RequestBuilder) -> Result<Attempt<Option<T>>> {
        let response = match request.send() {
            Ok(r) => r,
            Err(e) => return Ok(Attempt::Retry(e.to_string())),
        };
        let status = response.status();
        match status {
            s if s.is_success() => match response.json::<T>() {
                Ok(body) => Ok(Attempt::Done(Some(body))),
                Err(e) => Err(Error::Transport(format!("malformed reply: {e}"))),
            },
            StatusCode::NOT_FOUND => Ok(Attempt::Done(None)),
            StatusCode::BAD_REQUEST => Err(Error::Contract(format!(
                "service rejected request: {}",
                response.text().unwrap_or_default()
            ))),
            StatusCode::UNPROCESSABLE_ENTITY => Err(Error::Contract(format!(
                "gold answer not among candidates: {}",
                response.text().unwrap_or_default()
            ))),
            s if s == StatusCode::SERVICE_UNAVAILABLE || s.is_server_error() => {
                Ok(Attempt::Retry(format!("service returned {s}")))
            }
            s => Err(Error::Transport(format!("unexpected status {s}"))),
        }
    }

    /// Sends with retries. `Ok(None)` means the endpoint does not exist.
    fn send<T: DeserializeOwned>(
        &self,
        build: impl Fn() -> RequestBuilder,
    ) -> Result<Option<T>> {
        let policy = &self.config.retry;
        let mut attempt = 0;
        loop {
            match self.attempt(build())? {
                Attempt::Done(v) => return Ok(v),
                Attempt::Retry(reason) if attempt < policy.max_retries => {
                    let wait = policy.backoff(attempt);
                    debug!("retrying after {wait:?}: {reason}");
                    std::thread::sleep(wait);
                    attempt += 1;
                }
                Attempt::Retry(reason) => {
                    return Err(Error::Transport(format!(
                        "giving up after {} attempts: {reason}",
                        attempt + 1
                    )))
                }
            }
        }
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        let url = self.url(path);
        self.send(|| self.client.post(&url).json(body))?
            .ok_or_else(|| Error::Transport(format!("{path} not found on service")))
    }

    fn intern_candidates(&self, list: Vec<String>) -> Arc<Vec<String>> {
        // vocab-sized candidate lists are shared between distributions
        let mut cache = self.vocab.lock().unwrap();
        match cache.as_ref() {
            Some(v) if **v == list => v.clone(),
            _ => {
                let v = Arc::new(list);
                if v.len() > 64 {
                    *cache = Some(v.clone());
                }
                v
            }
        }
    }
}

impl Oracle for HttpOracle {
    fn info(&self) -> Result<OracleInfo> {
        if let Some(info) = self.info.get() {
            return Ok(*info);
        }
        let url = self.url("/info");
        let info: OracleInfo = self
            .send(|| self.client.get(&url))?
            .ok_or_else(|| Error::Transport("/info not found on service".into()))?;
        Ok(*self.info.get_or_init(|| info))
    }

    fn score(
        &self,
        prompt: &Prompt,
        candidates: &Candidates,
        sep: Separator<'_>,
    ) -> Result<ScoreDistribution> {
        if prompt.mask_count() != 1 {
            return Err(Error::Contract("prompt must contain exactly one mask".into()));
        }
        if let Candidates::Labels(l) = candidates {
            if l.is_empty() {
                return Err(Error::Contract("empty candidate set".into()));
            }
        }
        let (literal, embedding) = match sep {
            Separator::Literal(s) => (Some(s), None),
            Separator::Learned(e) => (None, Some(e.values().to_vec())),
        };
        let request = ScoreRequest {
            segments: segments(prompt, literal),
            candidates: wire::candidates(candidates),
            sep_embedding: embedding,
        };
        let reply: ScoreResponse = self.post("/score", &request)?;
        if let Candidates::Labels(expected) = candidates {
            if **expected != reply.candidates {
                return Err(Error::Transport(
                    "malformed reply: candidate list differs from request".into(),
                ));
            }
        }
        let list = self.intern_candidates(reply.candidates);
        ScoreDistribution::new(list, reply.probs)
            .map_err(|e| Error::Transport(format!("malformed reply: {e}")))
    }

    fn score_batch(
        &self,
        prompts: &[Prompt],
        candidates: &Candidates,
        sep: Separator<'_>,
    ) -> Result<Vec<ScoreDistribution>> {
        let workers = self.config.max_in_flight.min(prompts.len());
        if workers <= 1 {
            return prompts
                .iter()
                .map(|p| self.score(p, candidates, sep))
                .collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<ScoreDistribution>>>> =
            prompts.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= prompts.len() {
                        break;
                    }
                    let r = self.score(&prompts[i], candidates, sep);
                    let failed = r.is_err();
                    *slots[i].lock().unwrap() = Some(r);
                    if failed {
                        // stop handing out work; remaining slots stay empty
                        next.store(prompts.len(), Ordering::Relaxed);
                    }
                });
            }
        });
        let mut out = Vec::with_capacity(prompts.len());
        let mut first_err = None;
        for slot in slots {
            match slot.into_inner().unwrap() {
                Some(Ok(d)) => out.push(d),
                Some(Err(e)) => {
                    first_err.get_or_insert(e);
                }
                None => {}
            }
        }
        match first_err {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }

    fn loss_and_grad_sep(
        &self,
        batch: &[LabeledPrompt],
        sep: &SeparatorEmbedding,
    ) -> Result<(f64, Vec<f64>)> {
        let info = self.info()?;
        if !info.supports_grad {
            return Err(Error::Unsupported("separator gradient"));
        }
        if batch.is_empty() {
            return Err(Error::Contract("empty gradient batch".into()));
        }
        if sep.dim() != info.dim {
            return Err(Error::Config(format!(
                "separator dimension {} does not match service dimension {}",
                sep.dim(),
                info.dim
            )));
        }
        let request = GradRequest {
            batch: batch
                .iter()
                .map(|lp| GradItem {
                    segments: segments(&lp.prompt, None),
                    gold: lp.gold.clone(),
                    candidates: wire::candidates(&lp.candidates),
                })
                .collect(),
            sep_embedding: sep.values().to_vec(),
        };
        let reply: GradResponse = self.post("/grad_sep", &request)?;
        if reply.dim != sep.dim() || reply.grad.len() != sep.dim() || !reply.loss.is_finite() {
            return Err(Error::Transport("malformed gradient reply".into()));
        }
        Ok((reply.loss, reply.grad))
    }

    fn token_embedding(&self, token: &str) -> Result<Option<SeparatorEmbedding>> {
        let url = self.url("/embedding");
        let reply: Option<EmbeddingResponse> =
            self.send(|| self.client.get(&url).query(&[("token", token)]))?;
        match reply {
            None => {
                warn!("service has no /embedding endpoint");
                Ok(None)
            }
            Some(r) if r.values.len() != r.dim => {
                Err(Error::Transport("malformed embedding reply".into()))
            }
            Some(r) => Ok(Some(
                SeparatorEmbedding::new(r.values)
                    .map_err(|e| Error::Transport(format!("malformed embedding reply: {e}")))?,
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_shapes() {
        let seg = WireSegment {
            kind: "mask".into(),
            text: None,
        };
        assert_eq!(serde_json::to_string(&seg).unwrap(), r#"{"kind":"mask"}"#);
        let c = wire::candidates(&Candidates::Vocab);
        assert_eq!(serde_json::to_string(&c).unwrap(), r#""vocab""#);
        let c = wire::candidates(&Candidates::labels(vec!["true".into(), "false".into()]));
        assert_eq!(serde_json::to_string(&c).unwrap(), r#"["true","false"]"#);
    }

    #[test]
    fn backoff_is_capped() {
        let p = RetryPolicy {
            max_retries: 10,
            initial_backoff_ms: 100,
            max_backoff_ms: 1000,
        };
        assert_eq!(p.backoff(0), Duration::from_millis(100));
        assert_eq!(p.backoff(2), Duration::from_millis(400));
        assert_eq!(p.backoff(9), Duration::from_millis(1000));
    }

    #[test]
    fn zero_in_flight_rejected() {
        let mut c = HttpOracleConfig::new("http://127.0.0.1:1");
        c.max_in_flight = 0;
        assert!(HttpOracle::new(c).is_err());
    }
}
