//! Calibration model families: cubic multivariate polynomial regression,
//! ε-insensitive support vector regression and a sigmoid network trained by
//! Levenberg-Marquardt.

pub mod dnn;
pub mod features;
pub mod kernel;
pub mod lm;
pub mod model;
pub mod mpr3;
pub mod scaling;
pub mod svr;

use serde::{Deserialize, Serialize};

use crate::data::{ChannelVoltages, GlucoseKind, GlucoseValue};
use crate::error::{Error, Result};

/// Predictions are clamped into this range, mg/dl.
pub const PREDICTION_MIN: f64 = 10.0;
pub const PREDICTION_MAX: f64 = 600.0;

/// A model output after clamping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub value_mgdl: f64,
    /// Output before clamping.
    pub raw_mgdl: f64,
    pub clamped: bool,
}

impl Prediction {
    pub fn from_raw(raw_mgdl: f64) -> Result<Self> {
        if !raw_mgdl.is_finite() {
            return Err(Error::NonFinite("model output".into()));
        }
        let value_mgdl = raw_mgdl.clamp(PREDICTION_MIN, PREDICTION_MAX);
        Ok(Self {
            value_mgdl,
            raw_mgdl,
            clamped: value_mgdl != raw_mgdl,
        })
    }

    pub fn glucose(&self, kind: GlucoseKind) -> GlucoseValue {
        // Clamped into a strictly positive range, so this cannot fail.
        GlucoseValue::new(self.value_mgdl, kind).expect("clamped prediction is positive")
    }
}

pub(crate) fn check_input(v: &ChannelVoltages) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite("channel voltages".into()))
    }
}

/// Splits `(voltages, reference)` pairs into parallel vectors.
pub(crate) fn unzip(pairs: Vec<(ChannelVoltages, f64)>) -> (Vec<ChannelVoltages>, Vec<f64>) {
    pairs.into_iter().unzip()
}
