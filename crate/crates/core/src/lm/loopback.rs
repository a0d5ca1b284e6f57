//! In-process HTTP server exposing any [`LanguageModel`] through the remote
//! wire protocol. Used to exercise [`RemoteLM`](super::RemoteLM) end to end.

use std::sync::Arc;
use std::thread::JoinHandle;

use serde_json::json;
use tiny_http::{Header, Method, Request, Response, Server};

use super::remote::{DistributionRequest, DistributionResponse, MetaResponse};
use super::LanguageModel;
use crate::error::{Error, Result};

pub struct LoopbackServer {
    server: Arc<Server>,
    url: String,
    worker: Option<JoinHandle<()>>,
}

impl LoopbackServer {
    /// Binds an ephemeral port on 127.0.0.1 and serves `model` from a
    /// background thread until dropped.
    pub fn start(model: Arc<dyn LanguageModel>, name: impl Into<String>) -> Result<Self> {
        let server = Server::http("127.0.0.1:0")
            .map_err(|e| Error::RemoteUnavailable(format!("cannot bind loopback server: {e}")))?;
        let server = Arc::new(server);
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| Error::RemoteUnavailable("loopback server has no IP address".into()))?;
        let url = format!("http://{addr}");
        let name = name.into();
        let srv = Arc::clone(&server);
        let worker = std::thread::spawn(move || {
            for req in srv.incoming_requests() {
                handle(req, model.as_ref(), &name);
            }
        });
        Ok(LoopbackServer {
            server,
            url,
            worker: Some(worker),
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl Drop for LoopbackServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

fn json_response(status: u16, body: String) -> Response<std::io::Cursor<Vec<u8>>> {
    let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
    Response::from_string(body)
        .with_status_code(status)
        .with_header(header)
}

fn error_body(code: &str, message: &str) -> String {
    json!({"error": {"code": code, "message": message}}).to_string()
}

fn handle(mut req: Request, model: &dyn LanguageModel, name: &str) {
    let resp = match (req.method(), req.url()) {
        (Method::Get, "/v1/meta") => {
            let meta = MetaResponse {
                vocab_size: model.vocab_size(),
                model: name.to_string(),
            };
            json_response(200, serde_json::to_string(&meta).expect("serializable"))
        }
        (Method::Post, "/v1/distribution") => {
            let mut body = String::new();
            match req.as_reader().read_to_string(&mut body) {
                Ok(_) => distribution(&body, model),
                Err(e) => json_response(400, error_body("bad_request", &e.to_string())),
            }
        }
        _ => json_response(404, error_body("not_found", "unknown route")),
    };
    let _ = req.respond(resp);
}

fn distribution(body: &str, model: &dyn LanguageModel) -> Response<std::io::Cursor<Vec<u8>>> {
    let parsed: DistributionRequest = match serde_json::from_str(body) {
        Ok(r) => r,
        Err(e) => return json_response(400, error_body("bad_request", &e.to_string())),
    };
    let v = model.vocab_size();
    if let Some(bad) = parsed.contexts.iter().flatten().find(|&&id| id as usize >= v) {
        return json_response(
            400,
            error_body("bad_request", &format!("token id {bad} out of range")),
        );
    }
    let contexts: Vec<&[u32]> = parsed.contexts.iter().map(Vec::as_slice).collect();
    match model.next_dists(&contexts) {
        Ok(dists) => {
            let resp = DistributionResponse {
                vocab_size: v,
                logprobs: dists
                    .iter()
                    .map(|d| d.iter().map(|p| p.ln().max(f64::MIN)).collect())
                    .collect(),
            };
            json_response(200, serde_json::to_string(&resp).expect("serializable"))
        }
        Err(e) => json_response(500, error_body("model_error", &e.to_string())),
    }
}
