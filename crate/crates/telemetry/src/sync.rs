//! Ordered, at-least-once upload of pending readings.

use std::io::Read;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TelemetryError};
use crate::queue::UploadQueue;
use crate::record::ReadingRecord;

pub const READINGS_PATH: &str = "/v1/readings";

/// Backoff between attempts at the same record: the `k`-th retry waits
/// `min(max_delay, base_delay · 2^(k-1))`, shortened by a random fraction of
/// up to `jitter`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub base_delay: Duration,
    pub max_delay: Duration,
    /// Fraction in `[0, 1]`.
    pub jitter: f64,
    /// Attempts per record before the sync gives up and leaves it pending.
    pub max_attempts: u32,
    /// Per-request timeout.
    pub timeout: Duration,
    pub seed: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_secs(5),
            jitter: 0.5,
            max_attempts: 8,
            timeout: Duration::from_secs(5),
            seed: 0,
        }
    }
}

impl RetryPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.jitter) {
            return Err(TelemetryError::InvalidConfig(format!(
                "jitter {} outside [0, 1]",
                self.jitter
            )));
        }
        if self.max_attempts == 0 {
            return Err(TelemetryError::InvalidConfig("max_attempts must be at least 1".into()));
        }
        if self.timeout.is_zero() {
            return Err(TelemetryError::InvalidConfig("timeout must be positive".into()));
        }
        Ok(())
    }

    /// Delay before retry number `retry` (1-based).
    pub fn delay<R: Rng + ?Sized>(&self, retry: u32, rng: &mut R) -> Duration {
        let exp = self
            .base_delay
            .checked_mul(1u32.checked_shl(retry.saturating_sub(1)).unwrap_or(u32::MAX))
            .unwrap_or(self.max_delay)
            .min(self.max_delay);
        let cut: f64 = rng.random::<f64>() * self.jitter;
        exp.mul_f64(1.0 - cut)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncStats {
    pub uploaded: usize,
    pub dead_lettered: usize,
    pub attempts: usize,
    pub retries: usize,
    /// Records still pending when the sync returned.
    pub remaining: usize,
    /// Last transient failure, if the sync stopped early.
    pub last_error: Option<String>,
}

impl SyncStats {
    pub fn drained(&self) -> bool {
        self.remaining == 0
    }
}

/// Result of one POST.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Acked,
    /// Worth retrying: 5xx, timeout, refused connection, garbled ack.
    Transient(String),
    /// 4xx: the endpoint will never accept this record.
    Rejected(String),
}

#[derive(Debug, Deserialize)]
struct Ack {
    ack: String,
}

pub struct SyncClient {
    agent: ureq::Agent,
    url: String,
}

/// `http://host:port` or a full `.../v1/readings` URL.
pub fn readings_url(endpoint: &str) -> Result<String> {
    let e = endpoint.trim_end_matches('/');
    if !e.starts_with("http://") || e.len() <= "http://".len() {
        return Err(TelemetryError::Endpoint(endpoint.to_owned()));
    }
    Ok(if e.ends_with(READINGS_PATH) {
        e.to_owned()
    } else {
        format!("{e}{READINGS_PATH}")
    })
}

impl SyncClient {
    pub fn new(endpoint: &str, timeout: Duration) -> Result<Self> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        Ok(Self {
            agent,
            url: readings_url(endpoint)?,
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn post(&self, r: &ReadingRecord) -> Result<Outcome> {
        let body = r.to_json_line()?;
        let mut resp = match self
            .agent
            .post(&self.url)
            .header("content-type", "application/json")
            .send(body.as_str())
        {
            Ok(resp) => resp,
            Err(e) => return Ok(Outcome::Transient(e.to_string())),
        };
        let status = resp.status().as_u16();
        let mut text = String::new();
        let read = resp.body_mut().as_reader().read_to_string(&mut text);
        Ok(match status {
            200 => match read.ok().and_then(|_| serde_json::from_str::<Ack>(&text).ok()) {
                Some(a) if a.ack == r.reading_id => Outcome::Acked,
                _ => Outcome::Transient(format!("HTTP 200 without a matching ack: {text}")),
            },
            400..=499 => Outcome::Rejected(format!("HTTP {status}: {}", text.trim())),
            _ => Outcome::Transient(format!("HTTP {status}")),
        })
    }
}

/// Uploads pending records oldest first. A record leaves the queue only
/// after the endpoint acknowledges it; rejected records go to the
/// dead-letter log and the sync moves on. When a record exhausts its
/// attempts on transient failures the sync stops, leaving it and everything
/// after it pending. The pending log is compacted once drained.
pub fn sync(queue: &UploadQueue, endpoint: &str, policy: &RetryPolicy) -> Result<SyncStats> {
    policy.validate()?;
    let client = SyncClient::new(endpoint, policy.timeout)?;
    sync_with(queue, &client, policy)
}

pub fn sync_with(queue: &UploadQueue, client: &SyncClient, policy: &RetryPolicy) -> Result<SyncStats> {
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    let mut stats = SyncStats::default();
    while let Some(r) = queue.peek() {
        let mut tries = 0;
        loop {
            tries += 1;
            stats.attempts += 1;
            match client.post(&r)? {
                Outcome::Acked => {
                    queue.ack(&r.reading_id)?;
                    stats.uploaded += 1;
                    break;
                }
                Outcome::Rejected(reason) => {
                    queue.dead_letter(&r.reading_id, &reason)?;
                    stats.dead_lettered += 1;
                    break;
                }
                Outcome::Transient(why) => {
                    if tries >= policy.max_attempts {
                        stats.remaining = queue.len();
                        stats.last_error = Some(why);
                        return Ok(stats);
                    }
                    stats.retries += 1;
                    std::thread::sleep(policy.delay(tries, &mut rng));
                }
            }
        }
    }
    queue.compact()?;
    Ok(stats)
}
