//! The reading record exchanged with the ingestion endpoint.

use chrono::{DateTime, SecondsFormat, SubsecRound, Utc};
use serde::{Deserialize, Serialize};

use iglu_core::{GlucoseKind, GlucoseValue};

use crate::error::{Result, TelemetryError};

/// Source of the current time, injectable for deterministic tests.
pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Always reports the same instant.
#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub DateTime<Utc>);

impl Clock for FixedClock {
    fn now(&self) -> DateTime<Utc> {
        self.0
    }
}

/// One glucose reading as uploaded. The serialized field names are the
/// wire format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadingRecord {
    /// Unique per device; doubles as the idempotency key.
    pub reading_id: String,
    pub patient_id: String,
    #[serde(with = "rfc3339_seconds")]
    pub timestamp_utc: DateTime<Utc>,
    pub glucose_mgdl: f64,
    pub glucose_kind: GlucoseKind,
    pub model_tag: String,
    pub device_id: String,
}

impl ReadingRecord {
    /// Builds a record, truncating the timestamp to whole seconds.
    pub fn new(
        reading_id: impl Into<String>,
        patient_id: impl Into<String>,
        timestamp: DateTime<Utc>,
        glucose: GlucoseValue,
        model_tag: impl Into<String>,
        device_id: impl Into<String>,
    ) -> Result<Self> {
        let r = Self {
            reading_id: reading_id.into(),
            patient_id: patient_id.into(),
            timestamp_utc: timestamp.trunc_subsecs(0),
            glucose_mgdl: glucose.value_mgdl(),
            glucose_kind: glucose.kind(),
            model_tag: model_tag.into(),
            device_id: device_id.into(),
        };
        r.validate()?;
        Ok(r)
    }

    pub fn glucose(&self) -> Result<GlucoseValue> {
        GlucoseValue::new(self.glucose_mgdl, self.glucose_kind)
            .map_err(|e| TelemetryError::InvalidRecord(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("reading_id", &self.reading_id),
            ("patient_id", &self.patient_id),
            ("model_tag", &self.model_tag),
            ("device_id", &self.device_id),
        ] {
            if v.trim().is_empty() {
                return Err(TelemetryError::InvalidRecord(format!("{name} is empty")));
            }
            if v.contains('\n') {
                return Err(TelemetryError::InvalidRecord(format!("{name} contains a newline")));
            }
        }
        if self.timestamp_utc.timestamp_subsec_nanos() != 0 {
            return Err(TelemetryError::InvalidRecord(
                "timestamp must have whole-second precision".into(),
            ));
        }
        self.glucose()?;
        Ok(())
    }

    /// Single-line JSON, as stored in the queue and sent on the wire.
    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: ReadingRecord = serde_json::from_str(text)?;
        r.validate()?;
        Ok(r)
    }
}

/// A UUID-shaped id derived from the device and its reading sequence
/// number, so reruns produce the same ids.
pub fn reading_id(device_id: &str, sequence: u64) -> String {
    let name = format!("{device_id}/{sequence}");
    uuid::Uuid::new_v5(&uuid::Uuid::NAMESPACE_OID, name.as_bytes()).to_string()
}

mod rfc3339_seconds {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_rfc3339_opts(SecondsFormat::Secs, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&s)
            .map(|t| t.with_timezone(&Utc))
            .map_err(de::Error::custom)
    }
}

/// Formats a timestamp the way it appears on the wire.
pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}
