//! Uniform fit/predict front end over the three model families, with a
//! versioned JSON document format.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dnn::DnnModel;
use super::kernel::KernelSpec;
use super::lm::{train_dnn_xy, LmConfig};
use super::mpr3::{Mpr3Model, Mpr3Options};
use super::svr::{SvrModel, SvrParams};
use super::{unzip, Prediction};
use crate::data::{ChannelVoltages, Dataset, GlucoseKind};
use crate::error::{Error, Result};
use crate::par::Execution;

/// Version of the serialized model document.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Which model to fit, parsed from strings such as `mpr3`, `svr:fine-gaussian`
/// or `dnn`.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelChoice {
    Mpr3(Mpr3Options),
    Svr(SvrParams),
    Dnn(LmConfig),
}

impl ModelChoice {
    pub fn family(&self) -> &'static str {
        match self {
            ModelChoice::Mpr3(_) => "mpr3",
            ModelChoice::Svr(_) => "svr",
            ModelChoice::Dnn(_) => "dnn",
        }
    }
}

impl FromStr for ModelChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (family, variant) = match s.split_once(':') {
            Some((f, v)) => (f, Some(v)),
            None => (s, None),
        };
        let kernel = |v: &str| -> Result<KernelSpec> {
            Ok(match v {
                "linear" => KernelSpec::Linear,
                "quadratic" => KernelSpec::Quadratic,
                "cubic" => KernelSpec::Cubic,
                "medium-gaussian" | "gaussian" => KernelSpec::medium_gaussian(),
                "fine-gaussian" => KernelSpec::fine_gaussian(),
                "coarse-gaussian" => KernelSpec::coarse_gaussian(),
                other => match other.strip_prefix("gaussian=") {
                    Some(scale) => KernelSpec::gaussian(scale.parse().map_err(|_| {
                        Error::InvalidInput(format!("invalid gaussian scale `{scale}`"))
                    })?)?,
                    None => return Err(Error::InvalidInput(format!("unknown kernel `{other}`"))),
                },
            })
        };
        match (family, variant) {
            ("mpr3", None) => Ok(ModelChoice::Mpr3(Mpr3Options::default())),
            ("mpr3", Some("no-intercept")) => Ok(ModelChoice::Mpr3(Mpr3Options { intercept: false })),
            ("svr", None) => Ok(ModelChoice::Svr(SvrParams::new(KernelSpec::medium_gaussian()))),
            ("svr", Some(v)) => Ok(ModelChoice::Svr(SvrParams::new(kernel(v)?))),
            ("dnn", None) => Ok(ModelChoice::Dnn(LmConfig::default())),
            _ => Err(Error::InvalidInput(format!("unknown model `{s}`"))),
        }
    }
}

impl fmt::Display for ModelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelChoice::Mpr3(o) if !o.intercept => f.write_str("mpr3:no-intercept"),
            ModelChoice::Mpr3(_) => f.write_str("mpr3"),
            ModelChoice::Svr(p) => match p.kernel {
                KernelSpec::Linear => f.write_str("svr:linear"),
                KernelSpec::Quadratic => f.write_str("svr:quadratic"),
                KernelSpec::Cubic => f.write_str("svr:cubic"),
                KernelSpec::Gaussian { scale } => {
                    let r3 = 3f64.sqrt();
                    if scale == r3 {
                        f.write_str("svr:medium-gaussian")
                    } else if scale == r3 / 4.0 {
                        f.write_str("svr:fine-gaussian")
                    } else if scale == 4.0 * r3 {
                        f.write_str("svr:coarse-gaussian")
                    } else {
                        write!(f, "svr:gaussian={scale}")
                    }
                }
            },
            ModelChoice::Dnn(_) => f.write_str("dnn"),
        }
    }
}

/// Fitted parameters of one family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ModelParams {
    Mpr3(Mpr3Model),
    Svr(SvrModel),
    Dnn(DnnModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    pub model: String,
    pub kind: GlucoseKind,
    pub seed: Option<u64>,
    pub hyperparameters: BTreeMap<String, f64>,
    pub n_train: usize,
    /// SHA-256 over the training voltages and responses, in order.
    pub training_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    pub params: ModelParams,
    pub metadata: FitMetadata,
}

impl TrainedModel {
    pub fn predict_raw(&self, v: &ChannelVoltages) -> Result<f64> {
        match &self.params {
            ModelParams::Mpr3(m) => m.predict_raw(v),
            ModelParams::Svr(m) => m.predict_raw(v),
            ModelParams::Dnn(m) => m.predict_raw(v),
        }
    }

    pub fn predict(&self, v: &ChannelVoltages) -> Result<Prediction> {
        Prediction::from_raw(self.predict_raw(v)?)
    }

    pub fn kind(&self) -> GlucoseKind {
        self.metadata.kind
    }

    /// Short label such as `mpr3/serum`.
    pub fn tag(&self) -> String {
        format!("{}/{}", self.metadata.model, self.metadata.kind)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: TrainedModel = serde_json::from_str(text)?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported model format version {}",
                m.format_version
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

fn training_hash(x: &[ChannelVoltages], y: &[f64]) -> String {
    let mut h = Sha256::new();
    for (v, y) in x.iter().zip(y) {
        for c in v.as_array() {
            h.update(c.to_le_bytes());
        }
        h.update(y.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Fits the chosen family on the `kind` references of `train`.
pub fn fit_model(choice: &ModelChoice, train: &Dataset, kind: GlucoseKind) -> Result<TrainedModel> {
    fit_model_with(choice, train, kind, Execution::default())
}

pub fn fit_model_with(
    choice: &ModelChoice,
    train: &Dataset,
    kind: GlucoseKind,
    exec: Execution,
) -> Result<TrainedModel> {
    let (x, y) = unzip(train.usable(kind));
    let mut hyper = BTreeMap::new();
    let mut seed = None;
    let params = match choice {
        ModelChoice::Mpr3(opts) => {
            hyper.insert("intercept".into(), f64::from(u8::from(opts.intercept)));
            ModelParams::Mpr3(Mpr3Model::fit_xy(&x, &y, *opts)?)
        }
        ModelChoice::Svr(p) => {
            let m = SvrModel::fit_xy_with(&x, &y, p, exec)?;
            if let Some(scale) = p.kernel.scale() {
                hyper.insert("kernel_scale".into(), scale);
            }
            hyper.insert("eps".into(), m.eps);
            hyper.insert("c".into(), m.c);
            hyper.insert("support_vectors".into(), m.support_vectors(1e-8).len() as f64);
            ModelParams::Svr(m)
        }
        ModelChoice::Dnn(cfg) => {
            seed = Some(cfg.seed);
            let (m, trace) = train_dnn_xy(&x, &y, cfg, exec)?;
            hyper.insert("hidden_layers".into(), cfg.hidden_layers as f64);
            hyper.insert("width".into(), cfg.width as f64);
            hyper.insert("lambda0".into(), cfg.lambda0);
            hyper.insert("lambda_up".into(), cfg.lambda_up);
            hyper.insert("lambda_down".into(), cfg.lambda_down);
            hyper.insert("max_iters".into(), cfg.max_iters as f64);
            hyper.insert("sse_tol".into(), cfg.sse_tol);
            hyper.insert("iterations".into(), trace.iterations as f64);
            hyper.insert("final_sse".into(), trace.final_sse());
            ModelParams::Dnn(m)
        }
    };
    Ok(TrainedModel {
        format_version: MODEL_FORMAT_VERSION,
        params,
        metadata: FitMetadata {
            model: choice.to_string(),
            kind,
            seed,
            hyperparameters: hyper,
            n_train: x.len(),
            training_hash: training_hash(&x, &y),
        },
    })
}
