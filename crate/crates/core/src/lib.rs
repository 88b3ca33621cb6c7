//! Software pipeline of a three-channel NIR non-invasive glucometer.
//!
//! * [`acquisition`] simulates the optical front end: an exponential
//!   attenuation forward model, coherent averaging of raw samples and 16-bit
//!   ADC quantization.
//! * [`data`] holds samples and datasets, CSV interchange and stratified
//!   calibration/validation splits.
//! * [`regress`] fits the calibration models: a 19-term cubic polynomial
//!   regression, ε-SVR with linear/polynomial/Gaussian kernels and a deep
//!   sigmoid network trained by Levenberg-Marquardt.
//! * [`evaluation`] scores predictions with mARD, AvgE, MAD, RMSE, Pearson R
//!   and Clarke Error Grid zones.
//!
//! Batch work (dataset generation, Gram matrices, Jacobians, evaluation)
//! runs on rayon when the default `parallel` feature is enabled; see [`par`].

pub mod acquisition;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod par;
pub mod regress;

pub use data::{ChannelVoltages, Dataset, GlucoseKind, GlucoseValue, Sample, Split};
pub use error::{Error, Result};
pub use regress::model::{fit_model, ModelChoice, TrainedModel};
