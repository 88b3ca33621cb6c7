//! Offline-tolerant upload of glucose readings.
//!
//! Readings are appended to a durable on-disk [`UploadQueue`] and pushed to
//! an HTTP endpoint by [`sync`] with retries and exponential backoff. The
//! endpoint deduplicates on `reading_id`, so at-least-once delivery yields
//! exactly one stored copy per reading. [`MockEndpoint`] implements the
//! server side in-process with fault injection.
//!
//! Wire protocol: `POST /v1/readings` with a JSON [`ReadingRecord`]. A `200`
//! response carries `{"ack": "<reading_id>"}`; `503` means retry; `400`
//! means the record is dead-lettered.

pub mod error;
pub mod mock;
pub mod queue;
pub mod record;
pub mod sync;

pub use error::{Result, TelemetryError};
pub use mock::{MockEndpoint, MockStats};
pub use queue::{DeadLetter, UploadQueue};
pub use record::{reading_id, Clock, FixedClock, ReadingRecord, SystemClock};
pub use sync::{sync, RetryPolicy, SyncStats};
