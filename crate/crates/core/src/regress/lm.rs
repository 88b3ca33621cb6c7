//! Levenberg-Marquardt training of [`Network`]s on a sum-of-squares loss.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::dnn::{DnnModel, Network, DEFAULT_HIDDEN_LAYERS, DEFAULT_WIDTH};
use super::scaling::{InputScaler, ResponseScaler};
use super::unzip;
use crate::data::{ChannelVoltages, Dataset, GlucoseKind};
use crate::error::{Error, Result};
use crate::par::{self, Execution};

/// Damping above which training stops: no step can reduce the loss further.
pub const LAMBDA_LIMIT: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmConfig {
    pub hidden_layers: usize,
    pub width: usize,
    pub seed: u64,
    pub lambda0: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub max_iters: usize,
    pub sse_tol: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            hidden_layers: DEFAULT_HIDDEN_LAYERS,
            width: DEFAULT_WIDTH,
            seed: 0,
            lambda0: 1e-3,
            lambda_up: 10.0,
            lambda_down: 10.0,
            max_iters: 1000,
            sse_tol: 1e-10,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers == 0 || self.width == 0 {
            return Err(Error::InvalidInput("network needs at least one hidden unit".into()));
        }
        for (name, v) in [
            ("lambda0", self.lambda0),
            ("sse_tol", self.sse_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("lambda_up", self.lambda_up), ("lambda_down", self.lambda_down)] {
            if !(v > 1.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must exceed 1, got {v}")));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidInput("max_iters must be positive".into()));
        }
        Ok(())
    }

    /// Layer widths for `inputs` predictors.
    pub fn dims(&self, inputs: usize) -> Vec<usize> {
        let mut d = vec![inputs];
        d.extend(std::iter::repeat_n(self.width, self.hidden_layers));
        d.push(1);
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxIterations,
    SseTolerance,
    LambdaLimit,
}

/// History of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmTrace {
    /// SSE at initialization followed by the SSE after each accepted step.
    pub sse: Vec<f64>,
    /// Damping used for every attempted step, in order.
    pub lambdas: Vec<f64>,
    /// Whether the corresponding attempt in `lambdas` was accepted.
    pub accepted: Vec<bool>,
    pub iterations: usize,
    pub termination: Termination,
}

impl LmTrace {
    pub fn initial_sse(&self) -> f64 {
        self.sse[0]
    }

    pub fn final_sse(&self) -> f64 {
        self.sse[self.sse.len() - 1]
    }
}

fn residuals(net: &Network, x: &[Vec<f64>], y: &[f64], exec: Execution) -> Vec<f64> {
    par::map_range(x.len(), exec, |i| net.forward(&x[i]) - y[i])
}

fn sse(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Solves `(JᵀJ + λI) δ = Jᵀr`, through the `n × n` system `(JJᵀ + λI) u = r`,
/// `δ = Jᵀu` when there are fewer residuals than parameters.
fn damped_step(j: &DMatrix<f64>, jtj_or_jjt: &DMatrix<f64>, r: &DVector<f64>, lambda: f64) -> Option<DVector<f64>> {
    let (n, p) = j.shape();
    let mut a = jtj_or_jjt.clone();
    for d in 0..a.nrows() {
        a[(d, d)] += lambda;
    }
    let chol = a.cholesky()?;
    let step = if n < p {
        j.transpose() * chol.solve(r)
    } else {
        chol.solve(&(j.transpose() * r))
    };
    step.iter().all(|v| v.is_finite()).then_some(step)
}

/// Trains `net` in place on inputs `x` and targets `y`.
///
/// A step is accepted only when it strictly lowers the SSE; rejected steps
/// multiply λ by `lambda_up` and retry, accepted ones divide it by
/// `lambda_down`.
pub fn train_network(
    net: &mut Network,
    x: &[Vec<f64>],
    y: &[f64],
    cfg: &LmConfig,
    exec: Execution,
) -> Result<LmTrace> {
    cfg.validate()?;
    net.validate()?;
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} inputs and {} targets",
            x.len(),
            y.len()
        )));
    }

    let mut r = residuals(net, x, y, exec);
    let mut loss = sse(&r);
    if !loss.is_finite() {
        return Err(Error::NonFinite("initial loss".into()));
    }
    let mut lambda = cfg.lambda0;
    let mut trace = LmTrace {
        sse: vec![loss],
        lambdas: Vec::new(),
        accepted: Vec::new(),
        iterations: 0,
        termination: Termination::MaxIterations,
    };

    'outer: while trace.iterations < cfg.max_iters {
        if loss <= cfg.sse_tol {
            trace.termination = Termination::SseTolerance;
            break;
        }
        trace.iterations += 1;
        let j = net.jacobian(x, exec)?;
        let (n, p) = j.shape();
        let normal = if n < p { &j * j.transpose() } else { j.transpose() * &j };
        let rv = DVector::from_column_slice(&r);
        let theta = DVector::from_vec(net.params());

        loop {
            if lambda > LAMBDA_LIMIT {
                trace.termination = Termination::LambdaLimit;
                break 'outer;
            }
            trace.lambdas.push(lambda);
            let Some(step) = damped_step(&j, &normal, &rv, lambda) else {
                trace.accepted.push(false);
                lambda *= cfg.lambda_up;
                if lambda > LAMBDA_LIMIT {
                    return Err(Error::Singular { lambda });
                }
                continue;
            };
            let candidate = &theta - step;
            let mut trial = net.clone();
            trial.set_params(candidate.as_slice())?;
            let r_new = residuals(&trial, x, y, exec);
            let loss_new = sse(&r_new);
            if loss_new.is_nan() {
                return Err(Error::NonFinite("training loss".into()));
            }
            if loss_new < loss {
                trace.accepted.push(true);
                *net = trial;
                r = r_new;
                loss = loss_new;
                trace.sse.push(loss);
                lambda /= cfg.lambda_down;
                break;
            }
            trace.accepted.push(false);
            lambda *= cfg.lambda_up;
        }
    }
    Ok(trace)
}

/// Fits a sigmoid network to standardized voltages and responses.
pub fn train_dnn_xy(
    x: &[ChannelVoltages],
    y: &[f64],
    cfg: &LmConfig,
    exec: Execution,
) -> Result<(DnnModel, LmTrace)> {
    cfg.validate()?;
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Underdetermined {
            usable: x.len().min(y.len()),
            required: 1,
        });
    }
    if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training data".into()));
    }
    let x_scaler = InputScaler::fit(x)?;
    let y_scaler = ResponseScaler::fit(y)?;
    let xs: Vec<Vec<f64>> = x.iter().map(|v| x_scaler.transform(v).to_vec()).collect();
    let ys: Vec<f64> = y.iter().map(|&v| y_scaler.transform(v)).collect();
    let mut network = Network::random(&cfg.dims(3), cfg.seed)?;
    let trace = train_network(&mut network, &xs, &ys, cfg, exec)?;
    Ok((
        DnnModel {
            network,
            x_scaler,
            y_scaler,
        },
        trace,
    ))
}

pub fn train_dnn_lm(train: &Dataset, kind: GlucoseKind, cfg: &LmConfig) -> Result<(DnnModel, LmTrace)> {
    let (x, y) = unzip(train.usable(kind));
    train_dnn_xy(&x, &y, cfg, Execution::default())
}
