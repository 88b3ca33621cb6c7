//! Cubic multivariate polynomial regression over the three channel voltages.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::features::{FeatureVector19, N_FEATURES};
use super::scaling::InputScaler;
use super::{check_input, unzip, Prediction};
use crate::data::{ChannelVoltages, Dataset, GlucoseKind};
use crate::error::{Error, Result};

/// Designs whose condition number exceeds this are rejected.
pub const CONDITION_LIMIT: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mpr3Options {
    /// Fit a constant term alongside the 19 monomials.
    pub intercept: bool,
}

impl Default for Mpr3Options {
    fn default() -> Self {
        Self { intercept: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mpr3Model {
    /// Coefficients of the 19 monomials of the standardized voltages.
    pub coefficients: [f64; N_FEATURES],
    pub intercept: f64,
    pub scaler: InputScaler,
}

impl Mpr3Model {
    pub fn required_samples(opts: Mpr3Options) -> usize {
        N_FEATURES + usize::from(opts.intercept)
    }

    /// Least-squares fit against raw responses `y`.
    pub fn fit_xy(x: &[ChannelVoltages], y: &[f64], opts: Mpr3Options) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::InvalidInput(format!(
                "{} inputs but {} responses",
                x.len(),
                y.len()
            )));
        }
        let required = Self::required_samples(opts);
        if x.len() < required {
            return Err(Error::Underdetermined {
                usable: x.len(),
                required,
            });
        }
        if let Some(bad) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("voltages of sample {bad}")));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("response".into()));
        }
        // Canonical row order makes the fit independent of storage order, bit for bit.
        let (x, y) = canonical_order(x, y);
        let scaler = InputScaler::fit(&x)?;
        let design = design_matrix(&x, &scaler, opts);
        let rhs = DVector::from_column_slice(&y);
        let beta = solve_least_squares(&design, &rhs)?;

        let mut coefficients = [0.0; N_FEATURES];
        coefficients.copy_from_slice(&beta.as_slice()[..N_FEATURES]);
        let intercept = if opts.intercept { beta[N_FEATURES] } else { 0.0 };
        Ok(Self {
            coefficients,
            intercept,
            scaler,
        })
    }

    /// Evaluates the polynomial without clamping.
    pub fn predict_raw(&self, v: &ChannelVoltages) -> Result<f64> {
        check_input(v)?;
        let t = FeatureVector19::from_array(self.scaler.transform(v));
        let sum: f64 = self
            .coefficients
            .iter()
            .zip(t.as_slice())
            .map(|(a, t)| a * t)
            .sum();
        Ok(sum + self.intercept)
    }

    pub fn predict(&self, v: &ChannelVoltages) -> Result<Prediction> {
        Prediction::from_raw(self.predict_raw(v)?)
    }
}

pub(crate) fn canonical_order(x: &[ChannelVoltages], y: &[f64]) -> (Vec<ChannelVoltages>, Vec<f64>) {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&i, &j| {
        let (a, b) = (x[i].as_array(), x[j].as_array());
        a[0].total_cmp(&b[0])
            .then(a[1].total_cmp(&b[1]))
            .then(a[2].total_cmp(&b[2]))
            .then(y[i].total_cmp(&y[j]))
    });
    (idx.iter().map(|&i| x[i]).collect(), idx.iter().map(|&i| y[i]).collect())
}

/// Rows of standardized monomials, plus a trailing column of ones with an intercept.
pub fn design_matrix(x: &[ChannelVoltages], scaler: &InputScaler, opts: Mpr3Options) -> DMatrix<f64> {
    let cols = Mpr3Model::required_samples(opts);
    let mut m = DMatrix::zeros(x.len(), cols);
    for (i, v) in x.iter().enumerate() {
        let t = FeatureVector19::from_array(scaler.transform(v));
        for (j, &tj) in t.as_slice().iter().enumerate() {
            m[(i, j)] = tj;
        }
        if opts.intercept {
            m[(i, N_FEATURES)] = 1.0;
        }
    }
    m
}

/// Minimum-residual solution by SVD with one step of iterative refinement.
fn solve_least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let s = &svd.singular_values;
    let smax = s.max();
    let smin = s.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= CONDITION_LIMIT) {
        return Err(Error::RankDeficient {
            condition,
            threshold: CONDITION_LIMIT,
        });
    }
    let solve = |rhs: &DVector<f64>| {
        svd.solve(rhs, 0.0)
            .map_err(|e| Error::InvalidInput(format!("least-squares solve: {e}")))
    };
    let mut x = solve(b)?;
    let r = b - a * &x;
    x += solve(&r)?;
    Ok(x)
}

/// Fits against the requested reference kind of every sample that carries one.
pub fn fit_mpr3(train: &Dataset, kind: GlucoseKind, opts: Mpr3Options) -> Result<Mpr3Model> {
    let (x, y) = unzip(train.usable(kind));
    Mpr3Model::fit_xy(&x, &y, opts)
}

pub fn predict_mpr3(m: &Mpr3Model, v: &ChannelVoltages) -> Result<Prediction> {
    m.predict(v)
}
