//! Kernel functions over standardized predictor vectors.

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Execution};

/// Number of predictors (channels).
pub const PREDICTORS: usize = 3;

/// Smallest Gram eigenvalue tolerated before the matrix is declared indefinite.
pub const PSD_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelSpec {
    Linear,
    /// `(1 + u·v)²`
    Quadratic,
    /// `(1 + u·v)³`
    Cubic,
    /// `exp(−‖u − v‖² / (2σ²))`
    Gaussian { scale: f64 },
}

impl KernelSpec {
    /// σ = √P.
    pub fn medium_gaussian() -> Self {
        KernelSpec::Gaussian {
            scale: (PREDICTORS as f64).sqrt(),
        }
    }

    /// σ = √P / 4.
    pub fn fine_gaussian() -> Self {
        KernelSpec::Gaussian {
            scale: (PREDICTORS as f64).sqrt() / 4.0,
        }
    }

    /// σ = 4√P.
    pub fn coarse_gaussian() -> Self {
        KernelSpec::Gaussian {
            scale: 4.0 * (PREDICTORS as f64).sqrt(),
        }
    }

    pub fn gaussian(scale: f64) -> Result<Self> {
        let k = KernelSpec::Gaussian { scale };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Gaussian { scale } if !(scale > 0.0 && scale.is_finite()) => Err(
                Error::InvalidInput(format!("gaussian kernel scale must be positive, got {scale}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn scale(&self) -> Option<f64> {
        match *self {
            KernelSpec::Gaussian { scale } => Some(scale),
            _ => None,
        }
    }

    /// Evaluates the kernel on two equal-length vectors.
    pub fn eval(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        if u.len() != v.len() {
            return Err(Error::InvalidInput(format!(
                "kernel arguments of length {} and {}",
                u.len(),
                v.len()
            )));
        }
        Ok(self.eval_unchecked(u, v))
    }

    pub(crate) fn eval_unchecked(&self, u: &[f64], v: &[f64]) -> f64 {
        match *self {
            KernelSpec::Linear => dot(u, v),
            KernelSpec::Quadratic => (1.0 + dot(u, v)).powi(2),
            KernelSpec::Cubic => (1.0 + dot(u, v)).powi(3),
            KernelSpec::Gaussian { scale } => {
                let d2: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (2.0 * scale * scale)).exp()
            }
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Linear => f.write_str("linear"),
            KernelSpec::Quadratic => f.write_str("quadratic"),
            KernelSpec::Cubic => f.write_str("cubic"),
            KernelSpec::Gaussian { scale } => write!(f, "gaussian(scale={scale})"),
        }
    }
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn kernel_eval(k: &KernelSpec, u: &[f64], v: &[f64]) -> Result<f64> {
    k.eval(u, v)
}

/// Symmetric Gram matrix of `points`, rows computed in parallel.
pub fn gram_matrix(k: &KernelSpec, points: &[[f64; PREDICTORS]], exec: Execution) -> DMatrix<f64> {
    let n = points.len();
    let rows = par::map_range(n, exec, |i| {
        (0..n)
            .map(|j| k.eval_unchecked(&points[i], &points[j]))
            .collect::<Vec<f64>>()
    });
    DMatrix::from_fn(n, n, |i, j| {
        // Mirror the upper triangle so the matrix is exactly symmetric.
        if i <= j {
            rows[i][j]
        } else {
            rows[j][i]
        }
    })
}

pub fn min_eigenvalue(gram: &DMatrix<f64>) -> f64 {
    if gram.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(gram.clone()).eigenvalues.min()
}

/// Errors when the Gram matrix has an eigenvalue below `−PSD_TOLERANCE`.
pub fn check_psd(gram: &DMatrix<f64>) -> Result<()> {
    let min_eigenvalue = min_eigenvalue(gram);
    if min_eigenvalue < -PSD_TOLERANCE {
        Err(Error::NonPsdGram { min_eigenvalue })
    } else {
        Ok(())
    }
}
