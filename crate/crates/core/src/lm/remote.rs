//! Client for a black-box model served over HTTP.
//!
//! ```text
//! GET  /v1/meta          -> {"vocab_size": N, "model": "<string>"}
//! POST /v1/distribution  {"contexts": [[id, ...], ...]}
//!                        -> {"vocab_size": N, "logprobs": [[...N natural logs...], ...]}
//! ```
//!
//! Responses are exponentiated and renormalized client-side.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use ureq::Agent;

use super::{Distribution, LanguageModel};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
pub struct MetaResponse {
    pub vocab_size: usize,
    pub model: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DistributionRequest {
    pub contexts: Vec<Vec<u32>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DistributionResponse {
    pub vocab_size: usize,
    pub logprobs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct RemoteLM {
    endpoint: String,
    vocab_size: usize,
    model: String,
    agent: Agent,
}

impl RemoteLM {
    /// Connects to `endpoint` (e.g. `http://127.0.0.1:8000`) and fetches
    /// its metadata.
    pub fn connect(endpoint: &str) -> Result<Self> {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(300)))
            .http_status_as_error(false)
            .build()
            .into();
        let endpoint = endpoint.trim_end_matches('/').to_string();
        let body = Self::fetch(agent.get(format!("{endpoint}/v1/meta")).call())?;
        let meta: MetaResponse = serde_json::from_str(&body)
            .map_err(|e| Error::ProtocolError(format!("bad /v1/meta payload: {e}")))?;
        if meta.vocab_size == 0 {
            return Err(Error::ProtocolError("server reports vocab_size 0".into()));
        }
        Ok(RemoteLM {
            endpoint,
            vocab_size: meta.vocab_size,
            model: meta.model,
            agent,
        })
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    fn fetch(
        result: std::result::Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    ) -> Result<String> {
        let mut resp = result.map_err(|e| Error::RemoteUnavailable(e.to_string()))?;
        let status = resp.status();
        let body = resp
            .body_mut()
            .with_config()
            .limit(u64::MAX)
            .read_to_string()
            .map_err(|e| Error::RemoteUnavailable(e.to_string()))?;
        if !status.is_success() {
            return Err(Error::ProtocolError(format!("HTTP {status}: {body}")));
        }
        Ok(body)
    }

    pub(crate) fn parse_response(
        body: &str,
        expected_rows: usize,
        vocab_size: usize,
    ) -> Result<Vec<Distribution>> {
        let resp: DistributionResponse = serde_json::from_str(body)
            .map_err(|e| Error::ProtocolError(format!("bad /v1/distribution payload: {e}")))?;
        if resp.vocab_size != vocab_size {
            return Err(Error::VocabMismatch {
                expected: vocab_size,
                actual: resp.vocab_size,
            });
        }
        if resp.logprobs.len() != expected_rows {
            return Err(Error::ProtocolError(format!(
                "asked for {expected_rows} distributions, got {}",
                resp.logprobs.len()
            )));
        }
        resp.logprobs
            .iter()
            .map(|row| {
                if row.len() != vocab_size {
                    return Err(Error::VocabMismatch {
                        expected: vocab_size,
                        actual: row.len(),
                    });
                }
                Distribution::from_log_probs(row)
            })
            .collect()
    }
}

impl LanguageModel for RemoteLM {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn describe(&self) -> String {
        format!("remote {} at {}", self.model, self.endpoint)
    }

    fn next_dist(&self, context: &[u32]) -> Result<Distribution> {
        let mut out = self.next_dists(&[context])?;
        Ok(out.remove(0))
    }

    fn next_dists(&self, contexts: &[&[u32]]) -> Result<Vec<Distribution>> {
        if contexts.is_empty() {
            return Ok(Vec::new());
        }
        let req = DistributionRequest {
            contexts: contexts.iter().map(|c| c.to_vec()).collect(),
        };
        let payload = serde_json::to_string(&req)?;
        let body = Self::fetch(
            self.agent
                .post(format!("{}/v1/distribution", self.endpoint))
                .header("content-type", "application/json")
                .send(payload.as_str()),
        )?;
        Self::parse_response(&body, contexts.len(), self.vocab_size)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_uniform() {
        let l = (0.25f64).ln();
        let body = format!(r#"{{"vocab_size":4,"logprobs":[[{l},{l},{l},{l}]]}}"#);
        let d = RemoteLM::parse_response(&body, 1, 4).unwrap();
        assert!(d[0].iter().all(|p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn parse_renormalizes_one_hot_ish() {
        let body = r#"{"vocab_size":3,"logprobs":[[-0.0001,-30.0,-30.0]]}"#;
        let d = RemoteLM::parse_response(body, 1, 3).unwrap();
        assert!((d[0].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(d[0][0] > 0.999_999);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            RemoteLM::parse_response("not json", 1, 3),
            Err(Error::ProtocolError(_))
        ));
        assert!(matches!(
            RemoteLM::parse_response(r#"{"vocab_size":3,"logprobs":[[0,0]]}"#, 1, 3),
            Err(Error::VocabMismatch { expected: 3, actual: 2 })
        ));
        assert!(matches!(
            RemoteLM::parse_response(r#"{"vocab_size":4,"logprobs":[[0,0,0,0]]}"#, 1, 3),
            Err(Error::VocabMismatch { .. })
        ));
        assert!(matches!(
            RemoteLM::parse_response(r#"{"vocab_size":2,"logprobs":[[0,0]]}"#, 2, 2),
            Err(Error::ProtocolError(_))
        ));
    }

    #[test]
    fn unreachable_endpoint() {
        // port 9 (discard) on loopback is closed in the sandbox
        let err = RemoteLM::connect("http://127.0.0.1:9").unwrap_err();
        assert!(matches!(err, Error::RemoteUnavailable(_)), "{err:?}");
    }
}
