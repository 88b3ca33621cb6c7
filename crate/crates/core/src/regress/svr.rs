//! ε-insensitive support vector regression solved in the dual by sequential
//! minimal optimization.
//!
//! The dual
//!
//! ```text
//! max  −½ βᵀKβ + βᵀy − ε‖β‖₁   s.t.  Σβ = 0,  |βᵢ| ≤ C
//! ```
//!
//! is solved in its split form over `2n` variables `(α, α*)` with
//! `β = α − α*`, selecting working pairs by maximal violation with
//! second-order gain. Inputs are z-scored and the response standardized
//! before solving; `ε` and `C` are therefore in standardized response units.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::kernel::{check_psd, gram_matrix, KernelSpec};
use super::mpr3::canonical_order;
use super::scaling::{InputScaler, ResponseScaler};
use super::{check_input, unzip, Prediction};
use crate::data::{ChannelVoltages, Dataset, GlucoseKind};
use crate::error::{Error, Result};
use crate::par::Execution;

pub const DEFAULT_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 100_000;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvrParams {
    pub kernel: KernelSpec,
    /// Tube half-width; defaults to `iqr(y)/13.49` of the standardized response.
    pub eps: Option<f64>,
    /// Box constraint; defaults to `iqr(y)/1.349` of the standardized response.
    pub c: Option<f64>,
    pub tolerance: f64,
    pub max_iter: usize,
}

impl SvrParams {
    pub fn new(kernel: KernelSpec) -> Self {
        Self {
            kernel,
            eps: None,
            c: None,
            tolerance: DEFAULT_TOLERANCE,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Interquartile range with linear interpolation between order statistics.
pub fn iqr(y: &[f64]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    let mut s = y.to_vec();
    s.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let h = p * (s.len() - 1) as f64;
        let lo = h.floor() as usize;
        let hi = h.ceil() as usize;
        s[lo] + (h - lo as f64) * (s[hi] - s[lo])
    };
    q(0.75) - q(0.25)
}

/// Solution of the dual problem in standardized units.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    /// `βᵢ = αᵢ − αᵢ*`.
    pub beta: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    /// Final maximal KKT violation `m(α) − M(α)`.
    pub kkt_gap: f64,
}

/// Value of the dual objective `−½βᵀKβ + βᵀy − ε‖β‖₁`.
pub fn dual_objective(gram: &DMatrix<f64>, y: &[f64], beta: &[f64], eps: f64) -> f64 {
    let n = beta.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += beta[i] * gram[(i, j)] * beta[j];
        }
    }
    let lin: f64 = beta.iter().zip(y).map(|(b, y)| b * y).sum();
    let l1: f64 = beta.iter().map(|b| b.abs()).sum();
    -0.5 * quad + lin - eps * l1
}

/// Solves the ε-SVR dual for a precomputed Gram matrix.
pub fn solve_dual(
    gram: &DMatrix<f64>,
    y: &[f64],
    eps: f64,
    c: f64,
    tolerance: f64,
    max_iter: usize,
) -> Result<DualSolution> {
    let n = y.len();
    if gram.nrows() != n || gram.ncols() != n {
        return Err(Error::InvalidInput(format!(
            "Gram matrix {}x{} for {n} responses",
            gram.nrows(),
            gram.ncols()
        )));
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::InvalidInput(format!("eps must be >= 0, got {eps}")));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidInput(format!("C must be > 0, got {c}")));
    }

    let l = 2 * n;
    let sign = |t: usize| if t < n { 1.0 } else { -1.0 };
    let k = |s: usize, t: usize| gram[(s % n, t % n)];
    let mut alpha = vec![0.0; l];
    let mut grad: Vec<f64> = (0..l)
        .map(|t| if t < n { eps - y[t] } else { eps + y[t - n] })
        .collect();

    let at_upper = |a: f64| a >= c;
    let at_lower = |a: f64| a <= 0.0;

    let mut iterations = 0;
    let kkt_gap = loop {
        // Maximal violating index in I_up.
        let mut gmax = f64::NEG_INFINITY;
        let mut sel_i = None;
        for t in 0..l {
            let up = if sign(t) > 0.0 { !at_upper(alpha[t]) } else { !at_lower(alpha[t]) };
            if up {
                let v = -sign(t) * grad[t];
                if v >= gmax {
                    gmax = v;
                    sel_i = Some(t);
                }
            }
        }
        // Partner in I_low with the largest second-order gain.
        let mut gmax2 = f64::NEG_INFINITY;
        let mut sel_j = None;
        let mut best = f64::INFINITY;
        for t in 0..l {
            let low = if sign(t) > 0.0 { !at_lower(alpha[t]) } else { !at_upper(alpha[t]) };
            if !low {
                continue;
            }
            let v = sign(t) * grad[t];
            if v > gmax2 {
                gmax2 = v;
            }
            if let Some(i) = sel_i {
                let diff = gmax + v;
                if diff > 0.0 {
                    let mut quad = k(i, i) + k(t, t) - 2.0 * k(i, t);
                    if quad <= 0.0 {
                        quad = TAU;
                    }
                    let gain = -diff * diff / quad;
                    if gain <= best {
                        best = gain;
                        sel_j = Some(t);
                    }
                }
            }
        }
        let gap = gmax + gmax2;
        let (i, j) = match (sel_i, sel_j) {
            (Some(i), Some(j)) if gap >= tolerance => (i, j),
            _ => break gap.max(0.0),
        };
        if iterations >= max_iter {
            return Err(Error::NotConverged {
                iterations,
                worst_violation: gap,
            });
        }
        iterations += 1;

        let (yi, yj) = (sign(i), sign(j));
        let q_ij = yi * yj * k(i, j);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if yi != yj {
            let mut quad = k(i, i) + k(j, j) + 2.0 * q_ij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = k(i, i) + k(j, j) - 2.0 * q_ij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..l {
            let st = sign(t);
            grad[t] += st * yi * k(t, i) * di + st * yj * k(t, j) * dj;
        }
    };

    // Offset from free variables, midpoint of the feasible interval otherwise.
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut free_sum = 0.0;
    let mut free = 0usize;
    for t in 0..l {
        let yg = sign(t) * grad[t];
        if at_upper(alpha[t]) {
            if sign(t) < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if at_lower(alpha[t]) {
            if sign(t) > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            free_sum += yg;
        }
    }
    let rho = if free > 0 {
        free_sum / free as f64
    } else if ub.is_finite() && lb.is_finite() {
        0.5 * (ub + lb)
    } else if ub.is_finite() {
        ub
    } else {
        lb
    };

    let beta = (0..n).map(|i| alpha[i] - alpha[i + n]).collect();
    Ok(DualSolution {
        beta,
        bias: -rho,
        iterations,
        kkt_gap,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    pub kernel: KernelSpec,
    pub eps: f64,
    pub c: f64,
    /// Dual coefficients, one per retained training input.
    pub beta: Vec<f64>,
    pub bias: f64,
    /// Standardized training inputs.
    pub inputs: Vec<[f64; 3]>,
    pub x_scaler: InputScaler,
    pub y_scaler: ResponseScaler,
    pub iterations: usize,
    pub kkt_gap: f64,
}

impl SvrModel {
    pub fn fit_xy(x: &[ChannelVoltages], y: &[f64], params: &SvrParams) -> Result<Self> {
        Self::fit_xy_with(x, y, params, Execution::default())
    }

    pub fn fit_xy_with(
        x: &[ChannelVoltages],
        y: &[f64],
        params: &SvrParams,
        exec: Execution,
    ) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::InvalidInput(format!(
                "{} inputs but {} responses",
                x.len(),
                y.len()
            )));
        }
        if x.len() < 2 {
            return Err(Error::Underdetermined {
                usable: x.len(),
                required: 2,
            });
        }
        if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("training data".into()));
        }
        params.kernel.validate()?;

        let (x, y) = canonical_order(x, y);
        let x_scaler = InputScaler::fit(&x)?;
        let y_scaler = ResponseScaler::fit(&y)?;
        let inputs: Vec<[f64; 3]> = x.iter().map(|v| x_scaler.transform(v)).collect();
        let ys: Vec<f64> = y.iter().map(|&v| y_scaler.transform(v)).collect();

        let spread = match iqr(&ys) {
            r if r > 0.0 => r,
            _ => 1.0,
        };
        let eps = params.eps.unwrap_or(spread / 13.49);
        let c = params.c.unwrap_or(spread / 1.349);

        let gram = gram_matrix(&params.kernel, &inputs, exec);
        check_psd(&gram)?;
        let sol = solve_dual(&gram, &ys, eps, c, params.tolerance, params.max_iter)?;

        Ok(Self {
            kernel: params.kernel,
            eps,
            c,
            beta: sol.beta,
            bias: sol.bias,
            inputs,
            x_scaler,
            y_scaler,
            iterations: sol.iterations,
            kkt_gap: sol.kkt_gap,
        })
    }

    /// Decision function on a standardized input, in standardized response units.
    pub fn decision(&self, z: &[f64; 3]) -> f64 {
        self.beta
            .iter()
            .zip(&self.inputs)
            .filter(|(b, _)| **b != 0.0)
            .map(|(b, xi)| b * self.kernel.eval_unchecked(xi, z))
            .sum::<f64>()
            + self.bias
    }

    pub fn predict_raw(&self, v: &ChannelVoltages) -> Result<f64> {
        check_input(v)?;
        let z = self.x_scaler.transform(v);
        Ok(self.y_scaler.inverse(self.decision(&z)))
    }

    pub fn predict(&self, v: &ChannelVoltages) -> Result<Prediction> {
        Prediction::from_raw(self.predict_raw(v)?)
    }

    /// Indices whose coefficient magnitude exceeds `tol`.
    pub fn support_vectors(&self, tol: f64) -> Vec<usize> {
        (0..self.beta.len())
            .filter(|&i| self.beta[i].abs() > tol)
            .collect()
    }

    /// Standardized training responses recovered from the retained inputs are
    /// not stored, so callers pass them in.
    pub fn dual_objective(&self, ys: &[f64]) -> f64 {
        let gram = gram_matrix(&self.kernel, &self.inputs, Execution::Sequential);
        dual_objective(&gram, ys, &self.beta, self.eps)
    }
}

pub fn fit_svr(train: &Dataset, kind: GlucoseKind, params: &SvrParams) -> Result<SvrModel> {
    let (x, y) = unzip(train.usable(kind));
    SvrModel::fit_xy(&x, &y, params)
}

pub fn predict_svr(m: &SvrModel, v: &ChannelVoltages) -> Result<Prediction> {
    m.predict(v)
}
