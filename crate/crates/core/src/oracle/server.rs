//! Minimal `/predict` + `/healthz` service around any [`Oracle`]; used by
//! the `stub-oracle` command and by integration tests.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use ndarray::Array3;
use serde_json::json;
use tiny_http::{Header, Method, Request, Response, Server};

use super::Oracle;
use crate::attribution::ImageTensor;
use crate::error::{Error, Result};
use crate::npy;

#[derive(Debug, Clone)]
pub struct ServeOptions {
    /// Reported by `/healthz`.
    pub model_name: String,
    /// Answer this many `/predict` calls with HTTP 503 before serving
    /// normally. For exercising client retries.
    pub fail_first: usize,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            model_name: "stub".into(),
            fail_first: 0,
        }
    }
}

/// A running server; stops when dropped or on [`OracleServer::shutdown`].
pub struct OracleServer {
    server: Arc<Server>,
    addr: SocketAddr,
    worker: Option<JoinHandle<()>>,
    predict_calls: Arc<AtomicUsize>,
}

impl OracleServer {
    /// Binds `addr` (use port 0 for an ephemeral port) and serves in a
    /// background thread.
    pub fn start(addr: &str, oracle: Arc<dyn Oracle>, options: ServeOptions) -> Result<Self> {
        let server = Server::http(addr).map_err(|e| Error::OracleUnavailable(format!("cannot bind {addr}: {e}")))?;
        let bound = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| Error::OracleUnavailable(format!("{addr} is not an IP listener")))?;
        let server = Arc::new(server);
        let predict_calls = Arc::new(AtomicUsize::new(0));
        let worker = {
            let server = Arc::clone(&server);
            let calls = Arc::clone(&predict_calls);
            std::thread::spawn(move || {
                for request in server.incoming_requests() {
                    handle(request, oracle.as_ref(), &options, &calls);
                }
            })
        };
        Ok(Self {
            server,
            addr: bound,
            worker: Some(worker),
            predict_calls,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Number of `/predict` requests received so far, failed ones included.
    pub fn predict_calls(&self) -> usize {
        self.predict_calls.load(Ordering::SeqCst)
    }

    /// Blocks the calling thread until the server stops.
    pub fn wait(mut self) {
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

impl Drop for OracleServer {
    fn drop(&mut self) {
        self.stop();
    }
}

fn json_response(status: u16, body: serde_json::Value) -> Response<std::io::Cursor<Vec<u8>>> {
    Response::from_string(body.to_string())
        .with_status_code(status)
        .with_header(Header::from_bytes("Content-Type", "application/json").expect("static header"))
}

fn handle(mut request: Request, oracle: &dyn Oracle, options: &ServeOptions, calls: &AtomicUsize) {
    let url = request.url().to_string();
    let (path, query) = url.split_once('?').unwrap_or((&url, ""));
    let response = match (request.method(), path) {
        (Method::Get, "/healthz") => json_response(200, json!({"status": "ok", "model": options.model_name})),
        (Method::Post, "/predict") => {
            let n = calls.fetch_add(1, Ordering::SeqCst);
            if n < options.fail_first {
                json_response(503, json!({"error": "warming up"}))
            } else {
                let mut body = Vec::new();
                match request.as_reader().read_to_end(&mut body) {
                    Ok(_) => predict(&body, query, oracle),
                    Err(e) => json_response(400, json!({"error": format!("cannot read body: {e}")})),
                }
            }
        }
        _ => json_response(404, json!({"error": format!("no route for {path}")})),
    };
    let _ = request.respond(response);
}

fn target_class(query: &str) -> std::result::Result<Option<usize>, String> {
    for pair in query.split('&').filter(|p| !p.is_empty()) {
        let (key, value) = pair.split_once('=').unwrap_or((pair, ""));
        if key == "target_class" {
            return value
                .parse()
                .map(Some)
                .map_err(|_| format!("bad target_class '{value}'"));
        }
    }
    Ok(None)
}

fn decode_images(body: &[u8], label: usize) -> std::result::Result<Vec<ImageTensor>, String> {
    let arr = npy::decode(body, Path::new("<request>")).map_err(|e| e.to_string())?;
    let [b, c, h, w] = arr.shape[..] else {
        return Err(format!("expected a B×C×H×W array, got shape {:?}", arr.shape));
    };
    let per = c * h * w;
    (0..b)
        .map(|i| {
            let data = Array3::from_shape_vec((c, h, w), arr.data[i * per..(i + 1) * per].to_vec())
                .map_err(|e| e.to_string())?;
            ImageTensor::new(data, label).map_err(|e| e.to_string())
        })
        .collect()
}

fn predict(body: &[u8], query: &str, oracle: &dyn Oracle) -> Response<std::io::Cursor<Vec<u8>>> {
    let target = match target_class(query) {
        Ok(t) => t,
        Err(e) => return json_response(400, json!({ "error": e })),
    };
    let images = match decode_images(body, target.unwrap_or(0)) {
        Ok(im) => im,
        Err(e) => return json_response(400, json!({ "error": e })),
    };
    let result = match target {
        Some(c) => oracle.predict(&images, c).map(|s| json!({ "scores": s })),
        None => oracle
            .predict_probabilities(&images)
            .map(|p| json!({ "probabilities": p })),
    };
    match result {
        Ok(body) => json_response(200, body),
        // A stub without class distributions cannot answer an untargeted request.
        Err(Error::Oracle(msg)) if target.is_none() => json_response(400, json!({ "error": msg })),
        Err(e) => json_response(500, json!({ "error": e.to_string() })),
    }
}
