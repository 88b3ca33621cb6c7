use serde::{Deserialize, Serialize};

use crate::data::ChannelVoltages;
use crate::error::{Error, Result};

/// Per-channel z-score parameters (population statistics).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputScaler {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl InputScaler {
    pub fn fit(x: &[ChannelVoltages]) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::InvalidInput("cannot standardize an empty sample".into()));
        }
        let n = x.len() as f64;
        let mut mean = [0.0; 3];
        for v in x {
            for (m, c) in mean.iter_mut().zip(v.as_array()) {
                *m += c / n;
            }
        }
        let mut std = [0.0; 3];
        for v in x {
            for k in 0..3 {
                std[k] += (v.as_array()[k] - mean[k]).powi(2) / n;
            }
        }
        let std = std.map(f64::sqrt);
        Self::checked(mean, std)
    }

    pub fn identity() -> Self {
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }

    pub fn checked(mean: [f64; 3], std: [f64; 3]) -> Result<Self> {
        for k in 0..3 {
            if !(std[k] > 0.0 && std[k].is_finite() && mean[k].is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "channel {} has no usable spread (std {})",
                    k + 1,
                    std[k]
                )));
            }
        }
        Ok(Self { mean, std })
    }

    pub fn transform(&self, v: &ChannelVoltages) -> [f64; 3] {
        let a = v.as_array();
        std::array::from_fn(|k| (a[k] - self.mean[k]) / self.std[k])
    }
}

/// Z-score parameters of the response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseScaler {
    pub mean: f64,
    pub std: f64,
}

impl ResponseScaler {
    /// Falls back to unit spread when every response is identical.
    pub fn fit(y: &[f64]) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::InvalidInput("cannot standardize an empty response".into()));
        }
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        if !mean.is_finite() || !std.is_finite() {
            return Err(Error::NonFinite("response".into()));
        }
        Ok(Self { mean, std })
    }

    pub fn transform(&self, y: f64) -> f64 {
        (y - self.mean) / self.std
    }

    pub fn inverse(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}
