//! Lag kernels and the AR(1) plug-in bandwidth rule.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::compensated_sum;

/// Bartlett-kernel constant of the AR(1) plug-in rule.
pub const BARTLETT_CONSTANT: f64 = 1.1447;
/// Autoregressive estimates are clamped to `[-RHO_CLAMP, RHO_CLAMP]`.
pub const RHO_CLAMP: f64 = 0.97;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("kernel lag must be at least 1, got {0}")]
    InvalidLag(usize),
    #[error("bandwidth selection needs at least 3 periods, got {0}")]
    TooFewPeriods(usize),
    #[error("series rows have inconsistent dimensions")]
    RaggedSeries,
    #[error("unknown kernel '{0}' (expected 'triangular' or 'uniform')")]
    UnknownKernel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    #[default]
    Triangular,
    Uniform,
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelKind::Triangular => "triangular",
            KernelKind::Uniform => "uniform",
        })
    }
}

impl FromStr for KernelKind {
    type Err = KernelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "triangular" | "bartlett" => Ok(KernelKind::Triangular),
            "uniform" | "truncated" => Ok(KernelKind::Uniform),
            _ => Err(KernelError::UnknownKernel(s.to_string())),
        }
    }
}

/// Kernel family plus bandwidth `M`, the largest lag with nonzero weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub bandwidth: usize,
}

impl KernelSpec {
    pub fn new(kind: KernelKind, bandwidth: usize) -> Self {
        Self { kind, bandwidth }
    }

    pub fn triangular(bandwidth: usize) -> Self {
        Self::new(KernelKind::Triangular, bandwidth)
    }

    pub fn uniform(bandwidth: usize) -> Self {
        Self::new(KernelKind::Uniform, bandwidth)
    }

    /// `omega(m, M)` for `m >= 1`.
    pub fn weight(&self, m: usize) -> Result<f64, KernelError> {
        if m == 0 {
            return Err(KernelError::InvalidLag(m));
        }
        Ok(self.weight_unchecked(m))
    }

    #[inline]
    pub(crate) fn weight_unchecked(&self, m: usize) -> f64 {
        let big_m = self.bandwidth;
        match self.kind {
            KernelKind::Triangular => (1.0 - m as f64 / (big_m as f64 + 1.0)).max(0.0),
            KernelKind::Uniform => {
                if m <= big_m {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Weights for lags `1..=M`.
    pub fn weights(&self) -> Vec<f64> {
        (1..=self.bandwidth).map(|m| self.weight_unchecked(m)).collect()
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(M={})", self.kind, self.bandwidth)
    }
}

/// Outcome of the plug-in bandwidth rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthChoice {
    pub bandwidth: usize,
    /// Plug-in constant `alpha(1)` averaged over the usable coordinates.
    pub alpha1: f64,
    /// Clamped lag-1 autoregressive coefficient per coordinate (`None` for
    /// coordinates with zero variance).
    pub rho: Vec<Option<f64>>,
    /// Set when at least one coordinate had zero variance; when all did, the
    /// bandwidth falls back to 1.
    pub zero_variance: bool,
}

/// AR(1) plug-in bandwidth for the triangular kernel.
///
/// Each coordinate of the demeaned series gets a no-intercept lag-1
/// regression coefficient, clamped to `[-0.97, 0.97]`; the coordinates are
/// combined with equal weights into
/// `alpha(1) = mean 4 rho^2 / ((1 - rho)^2 (1 + rho)^2)` and the bandwidth is
/// `ceil(1.1447 (alpha(1) T)^(1/3))` clamped to `[1, T - 1]`.
pub fn andrews_bandwidth(series: &[Vec<f64>]) -> Result<BandwidthChoice, KernelError> {
    let periods = series.len();
    if periods < 3 {
        return Err(KernelError::TooFewPeriods(periods));
    }
    let dim = series[0].len();
    if series.iter().any(|row| row.len() != dim) {
        return Err(KernelError::RaggedSeries);
    }

    let mut rho = Vec::with_capacity(dim);
    let mut ratios = Vec::with_capacity(dim);
    for c in 0..dim {
        let mean = compensated_sum(series.iter().map(|row| row[c])) / periods as f64;
        let z: Vec<f64> = series.iter().map(|row| row[c] - mean).collect();
        let num = compensated_sum(z.windows(2).map(|w| w[1] * w[0]));
        let den = compensated_sum(z[..periods - 1].iter().map(|v| v * v));
        if den <= 0.0 || !den.is_finite() {
            rho.push(None);
            continue;
        }
        let r = (num / den).clamp(-RHO_CLAMP, RHO_CLAMP);
        rho.push(Some(r));
        ratios.push(ar1_alpha(r));
    }

    let zero_variance = ratios.len() < dim;
    if ratios.is_empty() {
        return Ok(BandwidthChoice {
            bandwidth: 1,
            alpha1: 0.0,
            rho,
            zero_variance,
        });
    }
    let alpha1 = ratios.iter().sum::<f64>() / ratios.len() as f64;
    Ok(BandwidthChoice {
        bandwidth: plug_in_bandwidth(alpha1, periods),
        alpha1,
        rho,
        zero_variance,
    })
}

/// `4 rho^2 / ((1 - rho)^2 (1 + rho)^2)` for one coordinate.
fn ar1_alpha(rho: f64) -> f64 {
    4.0 * rho * rho / ((1.0 - rho).powi(2) * (1.0 + rho).powi(2))
}

fn plug_in_bandwidth(alpha1: f64, periods: usize) -> usize {
    let raw = (BARTLETT_CONSTANT * (alpha1 * periods as f64).cbrt()).ceil();
    if raw.is_finite() {
        (raw.max(1.0) as usize).clamp(1, periods - 1)
    } else {
        1
    }
}
