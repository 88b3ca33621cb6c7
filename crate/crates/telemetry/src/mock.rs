//! In-process ingestion endpoint with fault injection, for tests and demos.
//!
//! Routes:
//!
//! | method | path                      | effect                                   |
//! |--------|---------------------------|------------------------------------------|
//! | POST   | `/v1/readings`            | store a record (deduplicated by id)      |
//! | GET    | `/v1/readings`            | JSON array of stored records             |
//! | GET    | `/control/stats`          | [`MockStats`] as JSON                    |
//! | POST   | `/control/fail-next?n=N`  | answer the next N POSTs with 503         |
//! | POST   | `/control/drop-next?n=N`  | store the next N, then drop the response |
//! | POST   | `/control/fail-every?n=N` | 503 for POST number 1, N+1, 2N+1, ...    |
//! | POST   | `/control/latency?ms=M`   | delay every response by M ms             |
//! | POST   | `/control/reject?id=ID`   | answer POSTs of ID with 400              |
//! | POST   | `/control/reset`          | clear all faults                         |

use std::collections::{BTreeSet, HashMap};
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tiny_http::{Header, Method, Request, Response, Server};

use crate::error::{Result, TelemetryError};
use crate::record::ReadingRecord;
use crate::sync::READINGS_PATH;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Faults {
    pub fail_next: u64,
    pub drop_next: u64,
    pub fail_every: u64,
    pub latency_ms: u64,
    pub reject: BTreeSet<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockStats {
    /// POSTs to the readings route, whatever their outcome.
    pub posts: u64,
    /// Distinct records held.
    pub stored: usize,
    /// Valid POSTs for an id that was already stored.
    pub duplicates: u64,
    /// POSTs answered with 503.
    pub failed: u64,
    /// POSTs whose response was dropped.
    pub dropped: u64,
    /// POSTs answered with 400.
    pub rejected: u64,
}

#[derive(Debug, Default)]
struct State {
    records: Vec<ReadingRecord>,
    index: HashMap<String, usize>,
    deliveries: HashMap<String, u64>,
    faults: Faults,
    stats: MockStats,
}

enum Reply {
    Status(u16, String),
    Drop,
}

impl State {
    fn post(&mut self, body: &str) -> Reply {
        self.stats.posts += 1;
        if self.faults.fail_next > 0 {
            self.faults.fail_next -= 1;
            self.stats.failed += 1;
            return Reply::Status(503, r#"{"error":"unavailable"}"#.into());
        }
        let every = self.faults.fail_every;
        if every > 0 && (self.stats.posts - 1).is_multiple_of(every) {
            self.stats.failed += 1;
            return Reply::Status(503, r#"{"error":"unavailable"}"#.into());
        }
        let record = match ReadingRecord::from_json(body) {
            Ok(r) => r,
            Err(e) => {
                self.stats.rejected += 1;
                return Reply::Status(400, serde_json::json!({ "error": e.to_string() }).to_string());
            }
        };
        let id = record.reading_id.clone();
        if self.faults.reject.contains(&id) {
            self.stats.rejected += 1;
            return Reply::Status(400, serde_json::json!({ "error": "rejected", "reading_id": id }).to_string());
        }
        *self.deliveries.entry(id.clone()).or_default() += 1;
        if self.index.contains_key(&id) {
            self.stats.duplicates += 1;
        } else {
            self.index.insert(id.clone(), self.records.len());
            self.records.push(record);
            self.stats.stored = self.records.len();
        }
        if self.faults.drop_next > 0 {
            self.faults.drop_next -= 1;
            self.stats.dropped += 1;
            return Reply::Drop;
        }
        Reply::Status(200, serde_json::json!({ "ack": id }).to_string())
    }

    fn control(&mut self, action: &str, query: &HashMap<String, String>) -> Reply {
        let n = |key: &str| query.get(key).and_then(|v| v.parse::<u64>().ok());
        match (action, n("n"), n("ms"), query.get("id")) {
            ("fail-next", Some(n), _, _) => self.faults.fail_next = n,
            ("drop-next", Some(n), _, _) => self.faults.drop_next = n,
            ("fail-every", Some(n), _, _) => self.faults.fail_every = n,
            ("latency", _, Some(ms), _) => self.faults.latency_ms = ms,
            ("reject", _, _, Some(id)) => {
                self.faults.reject.insert(id.clone());
            }
            ("reset", _, _, _) => self.faults = Faults::default(),
            _ => return Reply::Status(400, r#"{"error":"bad control request"}"#.into()),
        }
        Reply::Status(200, serde_json::to_string(&self.faults).unwrap_or_default())
    }
}

fn parse_query(q: &str) -> HashMap<String, String> {
    q.split('&')
        .filter_map(|kv| kv.split_once('='))
        .map(|(k, v)| (k.to_owned(), v.to_owned()))
        .collect()
}

fn lock(state: &Mutex<State>) -> MutexGuard<'_, State> {
    state.lock().unwrap_or_else(|e| e.into_inner())
}

fn handle(state: &Mutex<State>, mut req: Request) {
    let url = req.url().to_owned();
    let (path, query) = url.split_once('?').unwrap_or((url.as_str(), ""));
    let query = parse_query(query);
    let mut body = String::new();
    let reply = if req.as_reader().read_to_string(&mut body).is_err() {
        Reply::Status(400, r#"{"error":"unreadable body"}"#.into())
    } else {
        let mut s = lock(state);
        match (req.method(), path) {
            (Method::Post, READINGS_PATH) => s.post(&body),
            (Method::Get, READINGS_PATH) => Reply::Status(200, serde_json::to_string(&s.records).unwrap_or_default()),
            (Method::Get, "/control/stats") => Reply::Status(200, serde_json::to_string(&s.stats).unwrap_or_default()),
            (Method::Post, p) if p.starts_with("/control/") => s.control(&p["/control/".len()..], &query),
            _ => Reply::Status(404, r#"{"error":"not found"}"#.into()),
        }
    };
    let latency = lock(state).faults.latency_ms;
    if latency > 0 {
        std::thread::sleep(Duration::from_millis(latency));
    }
    match reply {
        // The writer is dropped unused: the client never sees a response.
        Reply::Drop => drop(req.into_writer()),
        Reply::Status(code, text) => {
            let json = Header::from_bytes("content-type", "application/json").expect("static header");
            let _ = req.respond(Response::from_string(text).with_status_code(code).with_header(json));
        }
    }
}

/// A running mock endpoint; stops when dropped.
pub struct MockEndpoint {
    addr: SocketAddr,
    server: Arc<Server>,
    state: Arc<Mutex<State>>,
    worker: Option<JoinHandle<()>>,
}

impl MockEndpoint {
    /// Listens on `127.0.0.1:port`; port 0 picks a free one.
    pub fn start(port: u16) -> Result<Self> {
        Self::bind(&format!("127.0.0.1:{port}"))
    }

    pub fn bind(addr: &str) -> Result<Self> {
        let server = Server::http(addr).map_err(|e| TelemetryError::Bind {
            addr: addr.to_owned(),
            message: e.to_string(),
        })?;
        let local = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| TelemetryError::Bind {
                addr: addr.to_owned(),
                message: "not an IP listener".into(),
            })?;
        let server = Arc::new(server);
        let state = Arc::new(Mutex::new(State::default()));
        let worker = {
            let server = Arc::clone(&server);
            let state = Arc::clone(&state);
            std::thread::spawn(move || {
                for req in server.incoming_requests() {
                    handle(&state, req);
                }
            })
        };
        Ok(Self {
            addr: local,
            server,
            state,
            worker: Some(worker),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Base URL, e.g. `http://127.0.0.1:40123`.
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn fail_next(&self, n: u64) {
        lock(&self.state).faults.fail_next = n;
    }

    pub fn drop_next(&self, n: u64) {
        lock(&self.state).faults.drop_next = n;
    }

    /// Answers POST number 1, n+1, 2n+1, ... with 503; 0 disables.
    pub fn fail_every(&self, n: u64) {
        lock(&self.state).faults.fail_every = n;
    }

    pub fn set_latency(&self, latency: Duration) {
        lock(&self.state).faults.latency_ms = latency.as_millis() as u64;
    }

    pub fn reject(&self, reading_id: &str) {
        lock(&self.state).faults.reject.insert(reading_id.to_owned());
    }

    pub fn clear_faults(&self) {
        lock(&self.state).faults = Faults::default();
    }

    /// Stored records in first-arrival order.
    pub fn records(&self) -> Vec<ReadingRecord> {
        lock(&self.state).records.clone()
    }

    /// Accepted POSTs carrying `reading_id`, duplicates included.
    pub fn deliveries(&self, reading_id: &str) -> u64 {
        lock(&self.state).deliveries.get(reading_id).copied().unwrap_or(0)
    }

    pub fn stats(&self) -> MockStats {
        lock(&self.state).stats.clone()
    }

    /// Serves until the process exits.
    pub fn wait(mut self) {
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

impl Drop for MockEndpoint {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}
