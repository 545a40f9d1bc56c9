//! Client for the JSON wire protocol:
//!
//! - `POST {base}/v1/score` `{"model","prompt","candidates"}` -> `{"logprobs"}`
//! - `POST {base}/v1/complete` `{"model","prompt","top_k"}` -> `{"completions":[{"text","logprob"}]}`

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, Completion};

#[derive(Serialize)]
struct ScoreBody<'a> {
    model: &'a str,
    prompt: &'a str,
    candidates: &'a [String],
}

#[derive(Deserialize)]
struct ScoreReply {
    logprobs: Vec<f64>,
}

#[derive(Serialize)]
struct CompleteBody<'a> {
    model: &'a str,
    prompt: &'a str,
    top_k: usize,
}

#[derive(Deserialize)]
struct CompleteReply {
    completions: Vec<Completion>,
}

pub struct HttpBackend {
    base: String,
    model: String,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(base_url: &str, model: &str) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        Self {
            base: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            agent,
        }
    }

    fn post<B: Serialize, R: for<'de> Deserialize<'de>>(
        &self,
        path: &str,
        body: &B,
    ) -> Result<R, BackendError> {
        let url = format!("{}{path}", self.base);
        let mut resp = self.agent.post(&url).send_json(body).map_err(classify)?;
        resp.body_mut()
            .read_json::<R>()
            .map_err(|e| BackendError::Protocol(format!("{url}: {e}")))
    }
}

fn classify(err: ureq::Error) -> BackendError {
    match err {
        ureq::Error::StatusCode(code) if code == 429 || code >= 500 => {
            BackendError::Transient(format!("HTTP {code}"))
        }
        ureq::Error::StatusCode(code) => BackendError::Permanent(format!("HTTP {code}")),
        other => BackendError::Transient(other.to_string()),
    }
}

impl Backend for HttpBackend {
    fn score(&self, prompt: &str, candidates: &[String]) -> Result<Vec<f64>, BackendError> {
        let reply: ScoreReply = self.post(
            "/v1/score",
            &ScoreBody {
                model: &self.model,
                prompt,
                candidates,
            },
        )?;
        Ok(reply.logprobs)
    }

    fn complete(&self, prompt: &str, top_k: usize) -> Result<Vec<Completion>, BackendError> {
        let reply: CompleteReply = self.post(
            "/v1/complete",
            &CompleteBody {
                model: &self.model,
                prompt,
                top_k,
            },
        )?;
        Ok(reply.completions)
    }
}
