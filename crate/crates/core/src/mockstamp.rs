//! Mock timestamping service: the same wire protocol as the real
//! client target, plus a fault switch and an inspectable ledger.
//!
//! Protocol served:
//!   POST /api/stamp, body `{"hash":"<64-hex>"}`, `Authorization`
//!     header required → 200 `{"status":"submitted"}`
//!   GET /api/proof/<64-hex> → `{"status":"pending"}` until
//!     confirm_delay has passed since first submission, then
//!     `{"status":"confirmed","tx_id":"mock-<first 24 hex>",
//!     "timestamp":<unix-seconds>}`; 404 `{"status":"unknown"}` for a
//!     hash never posted
//!
//! Duplicate submissions are absorbed: the ledger keeps one entry per
//! hash with its first receipt time. The ledger lives behind an Arc so
//! a test can kill the service and restart it on the same port with
//! state intact, the way a real service outlives its clients.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use crate::httpd::{HttpServer, Request, Response, Served};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultMode {
    None,
    /// Connections are dropped without a byte; clients see transport
    /// errors, as with a dead service.
    RefuseConnections,
    /// Every request is answered 500.
    InternalError,
    /// Submissions are recorded, then the connection drops before the
    /// reply: the client must treat the attempt as failed while the
    /// service already holds the hash.
    RecordThenDrop,
}

#[derive(Debug, Clone)]
pub struct LedgerEntry {
    pub received: SystemTime,
    pub confirm_at: SystemTime,
}

/// Hash-hex → entry, one per distinct hash ever received.
#[derive(Debug, Default)]
pub struct MockLedger {
    pub entries: BTreeMap<String, LedgerEntry>,
}

pub struct MockStamper {
    server: HttpServer,
    ledger: Arc<Mutex<MockLedger>>,
    fault: Arc<Mutex<FaultMode>>,
}

impl MockStamper {
    /// Fresh ledger; port 0 picks an ephemeral port.
    pub fn start(port: u16, confirm_delay: Duration) -> std::io::Result<MockStamper> {
        MockStamper::start_with_ledger(port, confirm_delay, Arc::default())
    }

    /// Restart survivor: serve an existing ledger, typically on the
    /// port a stopped instance used.
    pub fn start_with_ledger(
        port: u16,
        confirm_delay: Duration,
        ledger: Arc<Mutex<MockLedger>>,
    ) -> std::io::Result<MockStamper> {
        let fault = Arc::new(Mutex::new(FaultMode::None));
        let handler_ledger = Arc::clone(&ledger);
        let handler_fault = Arc::clone(&fault);
        let server = HttpServer::start(port, move |req| {
            handle(&req, &handler_ledger, &handler_fault, confirm_delay)
        })?;
        Ok(MockStamper {
            server,
            ledger,
            fault,
        })
    }

    pub fn port(&self) -> u16 {
        self.server.port()
    }

    pub fn url(&self) -> String {
        format!("http://127.0.0.1:{}", self.port())
    }

    pub fn set_fault(&self, mode: FaultMode) {
        *self.fault.lock().unwrap() = mode;
    }

    /// Shared ledger handle, for restarting and for assertions.
    pub fn ledger(&self) -> Arc<Mutex<MockLedger>> {
        Arc::clone(&self.ledger)
    }

    /// The distinct hashes the service has ever received.
    pub fn received_hashes(&self) -> Vec<String> {
        self.ledger.lock().unwrap().entries.keys().cloned().collect()
    }

    pub fn stop(mut self) {
        self.server.stop();
    }
}

fn handle(
    req: &Request,
    ledger: &Mutex<MockLedger>,
    fault: &Mutex<FaultMode>,
    confirm_delay: Duration,
) -> Served {
    let mode = *fault.lock().unwrap();
    if mode == FaultMode::RefuseConnections {
        return Served::Drop;
    }
    if mode == FaultMode::InternalError {
        return Served::Reply(Response::json(500, r#"{"status":"error"}"#));
    }

    if req.method == "POST" && req.path == "/api/stamp" {
        if req.header("authorization").map_or(true, str::is_empty) {
            return Served::Reply(Response::json(401, r#"{"status":"unauthorized"}"#));
        }
        let hash = match parse_stamp_body(&req.body) {
            Some(h) => h,
            None => return Served::Reply(Response::json(400, r#"{"status":"bad-request"}"#)),
        };
        {
            let mut ledger = ledger.lock().unwrap();
            ledger.entries.entry(hash).or_insert_with(|| {
                let received = SystemTime::now();
                LedgerEntry {
                    received,
                    confirm_at: received + confirm_delay,
                }
            });
        }
        if mode == FaultMode::RecordThenDrop {
            return Served::Drop;
        }
        return Served::Reply(Response::json(200, r#"{"status":"submitted"}"#));
    }

    if req.method == "GET" {
        if let Some(hash) = req.path.strip_prefix("/api/proof/") {
            if !is_hash_hex(hash) {
                return Served::Reply(Response::json(400, r#"{"status":"bad-request"}"#));
            }
            let entry = ledger.lock().unwrap().entries.get(hash).cloned();
            return Served::Reply(match entry {
                None => Response::json(404, r#"{"status":"unknown"}"#),
                Some(e) if SystemTime::now() < e.confirm_at => {
                    Response::json(200, r#"{"status":"pending"}"#)
                }
                Some(e) => {
                    let unix = e
                        .confirm_at
                        .duration_since(UNIX_EPOCH)
                        .unwrap_or_default()
                        .as_secs();
                    Response::json(
                        200,
                        format!(
                            r#"{{"status":"confirmed","tx_id":"mock-{}","timestamp":{}}}"#,
                            &hash[..24],
                            unix
                        ),
                    )
                }
            });
        }
    }
    Served::Reply(Response::json(404, r#"{"status":"not-found"}"#))
}

fn parse_stamp_body(body: &[u8]) -> Option<String> {
    let v: serde_json::Value = serde_json::from_slice(body).ok()?;
    let hash = v.get("hash")?.as_str()?;
    if is_hash_hex(hash) {
        Some(hash.to_string())
    } else {
        None
    }
}

fn is_hash_hex(s: &str) -> bool {
    s.len() == 64 && s.chars().all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase())
}
