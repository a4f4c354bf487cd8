//! Sample variance estimators for the sum of panel scores.
//!
//! All estimators return unnormalized sums of outer products. With
//! `y_t` the period aggregate of the scores:
//!
//! ```text
//! EHW = sum_i Y_i Y_i'
//! CRg = sum_g (sum_{i in g} Y_i)(...)'          CRt likewise over periods
//! CGM = CRg + CRt - sum_{(t,g)} (cell sum)(cell sum)'
//! CHS = CGM + sum_m w(m) sum_t (y_t y_{t+m}' + y_{t+m} y_t')
//!           - sum_m w(m) sum_{t,g} (c_{t,g} c_{t+m,g}' + c_{t+m,g} c_{t,g}')
//! HM  = CRg + CRt + sum_m w(m) (sum_t (y_t y_{t+m}' + y_{t+m} y_t') + 2 sum_t y_t y_t')
//! ```
//!
//! HM is positive semidefinite for nonnegative weights, and its expectation
//! bounds the kernel-truncated variance from above regardless of how the
//! observation means vary. Every estimator has a pair-sum twin in
//! [`reference`].

pub mod reference;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::KernelSpec;
use crate::numerics::{sym_eigen_min, NumericsError, OuterAccumulator, SymMatrix, VectorAccumulator};
use crate::panel::PanelIndex;

pub use reference::{brute_force, pair_weight, BRUTE_FORCE_LIMIT};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("score matrix has {scores} rows but the panel has {panel} observations")]
    DimensionMismatch { panel: usize, scores: usize },
    #[error("score rows must all have length {expected}, row {row} has {found}")]
    RaggedScores {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("scores contain non-finite values")]
    NonFiniteScores,
    #[error("bandwidth {bandwidth} must be below the number of periods {periods}")]
    BandwidthTooLarge { bandwidth: usize, periods: usize },
    #[error("kernel weight at lag {lag} is negative ({weight})")]
    NegativeKernelWeight { lag: usize, weight: f64 },
    #[error("{0} needs a kernel specification")]
    KernelRequired(Method),
    #[error("reference computation limited to {limit} observations, got {n}")]
    SizeGuard { n: usize, limit: usize },
    #[error("unknown method '{0}'")]
    UnknownMethod(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// `n x v` matrix of per-observation scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    n: usize,
    v: usize,
    data: Vec<f64>,
}

impl ScoreMatrix {
    /// Row-major data of length `n * v`.
    pub fn new(v: usize, data: Vec<f64>) -> Result<Self, EstimatorError> {
        assert!(v > 0, "score dimension must be positive");
        if !data.len().is_multiple_of(v) {
            return Err(EstimatorError::RaggedScores {
                row: data.len() / v,
                expected: v,
                found: data.len() % v,
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(EstimatorError::NonFiniteScores);
        }
        Ok(Self {
            n: data.len() / v,
            v,
            data,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, EstimatorError> {
        let v = rows.first().map_or(1, Vec::len).max(1);
        let mut data = Vec::with_capacity(rows.len() * v);
        for (row, r) in rows.iter().enumerate() {
            if r.len() != v {
                return Err(EstimatorError::RaggedScores {
                    row,
                    expected: v,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(v, data)
    }

    pub fn scalar(values: &[f64]) -> Result<Self, EstimatorError> {
        Self::new(1, values.to_vec())
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.v
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.v..(i + 1) * self.v]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.v)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            n: self.n,
            v: self.v,
            data: self.data.iter().map(|x| x * c).collect(),
        }
    }

    /// Column sums.
    pub fn total(&self) -> Vec<f64> {
        let mut acc = VectorAccumulator::new(self.v);
        for r in self.rows() {
            acc.add(r);
        }
        acc.finish()
    }

    fn sum_over(&self, obs: &[usize]) -> Vec<f64> {
        let mut acc = VectorAccumulator::new(self.v);
        for &i in obs {
            acc.add(self.row(i));
        }
        acc.finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "EHW")]
    Ehw,
    #[serde(rename = "CRg")]
    CrCluster,
    #[serde(rename = "CRt")]
    CrTime,
    #[serde(rename = "CGM")]
    Cgm,
    #[serde(rename = "CHS")]
    Chs,
    #[serde(rename = "HM")]
    Hm,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Ehw,
        Method::CrCluster,
        Method::CrTime,
        Method::Cgm,
        Method::Chs,
        Method::Hm,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::Ehw => "EHW",
            Method::CrCluster => "CRg",
            Method::CrTime => "CRt",
            Method::Cgm => "CGM",
            Method::Chs => "CHS",
            Method::Hm => "HM",
        }
    }

    pub fn uses_kernel(self) -> bool {
        matches!(self, Method::Chs | Method::Hm)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Method plus the CHS double-counting flag, addressable by a single label
/// (`"CHS-drop"` selects CHS without the within-cluster lag adjustment).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EstimatorChoice {
    pub method: Method,
    pub chs_drop_adjustment: bool,
}

impl EstimatorChoice {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            chs_drop_adjustment: false,
        }
    }

    pub fn chs_dropped() -> Self {
        Self {
            method: Method::Chs,
            chs_drop_adjustment: true,
        }
    }

    pub fn label(&self) -> String {
        if self.method == Method::Chs && self.chs_drop_adjustment {
            "CHS-drop".to_string()
        } else {
            self.method.label().to_string()
        }
    }

    /// The six standard methods: EHW, CRg, CRt, CGM, CHS, HM.
    pub fn standard_set() -> Vec<Self> {
        Method::ALL.iter().copied().map(Self::new).collect()
    }
}

impl fmt::Display for EstimatorChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for EstimatorChoice {
    type Err = EstimatorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase();
        let method = match key.as_str() {
            "ehw" => Method::Ehw,
            "crg" | "cri" => Method::CrCluster,
            "crt" => Method::CrTime,
            "cgm" => Method::Cgm,
            "chs" => Method::Chs,
            "chs-drop" | "chs_drop" => return Ok(Self::chs_dropped()),
            "hm" | "con" => Method::Hm,
            _ => return Err(EstimatorError::UnknownMethod(s.to_string())),
        };
        Ok(Self::new(method))
    }
}

impl Serialize for EstimatorChoice {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for EstimatorChoice {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EstimateFlags {
    pub chs_drop_adjustment: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateDiagnostics {
    pub min_eigenvalue: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub matrix: SymMatrix,
    pub method: Method,
    pub kernel: Option<KernelSpec>,
    pub flags: EstimateFlags,
    pub diagnostics: EstimateDiagnostics,
}

impl VarianceEstimate {
    fn new(
        matrix: SymMatrix,
        method: Method,
        kernel: Option<KernelSpec>,
        flags: EstimateFlags,
    ) -> Result<Self, EstimatorError> {
        let min_eigenvalue = sym_eigen_min(&matrix)?;
        Ok(Self {
            matrix,
            method,
            kernel,
            flags,
            diagnostics: EstimateDiagnostics { min_eigenvalue },
        })
    }

    pub fn choice(&self) -> EstimatorChoice {
        EstimatorChoice {
            method: self.method,
            chs_drop_adjustment: self.flags.chs_drop_adjustment,
        }
    }
}

/// Period aggregates `y_t`, zero for empty periods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeAggregate {
    pub y: Vec<Vec<f64>>,
}

impl TimeAggregate {
    pub fn periods(&self) -> usize {
        self.y.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterDim {
    Cluster,
    Time,
}

fn check_inputs(p: &PanelIndex, s: &ScoreMatrix) -> Result<(), EstimatorError> {
    if p.n() != s.n() {
        return Err(EstimatorError::DimensionMismatch {
            panel: p.n(),
            scores: s.n(),
        });
    }
    Ok(())
}

fn check_kernel(p: &PanelIndex, k: &KernelSpec) -> Result<(), EstimatorError> {
    if k.bandwidth >= p.num_periods() && k.bandwidth > 0 {
        return Err(EstimatorError::BandwidthTooLarge {
            bandwidth: k.bandwidth,
            periods: p.num_periods(),
        });
    }
    for (lag, w) in (1..).zip(k.weights()) {
        if w < 0.0 {
            return Err(EstimatorError::NegativeKernelWeight { lag, weight: w });
        }
    }
    Ok(())
}

pub fn time_aggregate(p: &PanelIndex, s: &ScoreMatrix) -> Result<TimeAggregate, EstimatorError> {
    check_inputs(p, s)?;
    Ok(TimeAggregate {
        y: p.periods().map(|obs| s.sum_over(obs)).collect(),
    })
}

fn add_bucket_outer<'a>(
    acc: &mut OuterAccumulator,
    s: &ScoreMatrix,
    buckets: impl Iterator<Item = &'a [usize]>,
    weight: f64,
) {
    for obs in buckets {
        let sum = s.sum_over(obs);
        acc.add_outer(&sum, &sum, weight);
    }
}

fn add_cells(acc: &mut OuterAccumulator, p: &PanelIndex, s: &ScoreMatrix, weight: f64) {
    add_bucket_outer(acc, s, p.cells().map(|(_, obs)| obs), weight);
}

/// `sum_m w(m) sum_t (y_t y_{t+m}' + y_{t+m} y_t')`, lags in increasing order.
fn add_serial_terms(acc: &mut OuterAccumulator, y: &TimeAggregate, k: &KernelSpec) {
    let periods = y.periods();
    for m in 1..=k.bandwidth.min(periods.saturating_sub(1)) {
        let w = k.weight_unchecked(m);
        for t in 0..periods - m {
            acc.add_cross(&y.y[t], &y.y[t + m], w);
        }
    }
}

/// `sum_m w(m) sum_{t,g} (c_{t,g} c_{t+m,g}' + c_{t+m,g} c_{t,g}')` over cell
/// sums of the same cluster.
fn add_within_cluster_serial(
    acc: &mut OuterAccumulator,
    p: &PanelIndex,
    s: &ScoreMatrix,
    k: &KernelSpec,
    weight: f64,
) {
    let cell_sums: BTreeMap<(usize, usize), Vec<f64>> =
        p.cells().map(|(key, obs)| (key, s.sum_over(obs))).collect();
    for m in 1..=k.bandwidth {
        let w = k.weight_unchecked(m) * weight;
        if w == 0.0 {
            continue;
        }
        for (&(t, g), c) in &cell_sums {
            if let Some(lead) = cell_sums.get(&(t + m, g)) {
                acc.add_cross(c, lead, w);
            }
        }
    }
}

/// `sum_i Y_i Y_i'`, without demeaning.
pub fn ehw(p: &PanelIndex, s: &ScoreMatrix) -> Result<VarianceEstimate, EstimatorError> {
    check_inputs(p, s)?;
    let mut acc = OuterAccumulator::new(s.dim());
    for r in s.rows() {
        acc.add_outer(r, r, 1.0);
    }
    VarianceEstimate::new(acc.finish(), Method::Ehw, None, EstimateFlags::default())
}

pub fn cr_one_way(
    p: &PanelIndex,
    s: &ScoreMatrix,
    dim: ClusterDim,
) -> Result<VarianceEstimate, EstimatorError> {
    check_inputs(p, s)?;
    let mut acc = OuterAccumulator::new(s.dim());
    let method = match dim {
        ClusterDim::Cluster => {
            add_bucket_outer(&mut acc, s, p.clusters(), 1.0);
            Method::CrCluster
        }
        ClusterDim::Time => {
            add_bucket_outer(&mut acc, s, p.periods(), 1.0);
            Method::CrTime
        }
    };
    VarianceEstimate::new(acc.finish(), method, None, EstimateFlags::default())
}

fn cgm_accumulator(p: &PanelIndex, s: &ScoreMatrix) -> OuterAccumulator {
    let mut acc = OuterAccumulator::new(s.dim());
    add_bucket_outer(&mut acc, s, p.clusters(), 1.0);
    add_bucket_outer(&mut acc, s, p.periods(), 1.0);
    add_cells(&mut acc, p, s, -1.0);
    acc
}

/// Two-way cluster estimator: `CRg + CRt - cells`.
pub fn cgm(p: &PanelIndex, s: &ScoreMatrix) -> Result<VarianceEstimate, EstimatorError> {
    check_inputs(p, s)?;
    let acc = cgm_accumulator(p, s);
    VarianceEstimate::new(acc.finish(), Method::Cgm, None, EstimateFlags::default())
}

/// Two-way cluster estimator with kernel-weighted cross-period terms. Unless
/// `drop_adjustment` is set, the lagged products of same-cluster cells (which
/// the cluster term already counts) are subtracted again.
pub fn chs(
    p: &PanelIndex,
    s: &ScoreMatrix,
    k: &KernelSpec,
    drop_adjustment: bool,
) -> Result<VarianceEstimate, EstimatorError> {
    check_inputs(p, s)?;
    check_kernel(p, k)?;
    let mut acc = cgm_accumulator(p, s);
    let y = time_aggregate(p, s)?;
    add_serial_terms(&mut acc, &y, k);
    if !drop_adjustment {
        add_within_cluster_serial(&mut acc, p, s, k, -1.0);
    }
    VarianceEstimate::new(
        acc.finish(),
        Method::Chs,
        Some(*k),
        EstimateFlags {
            chs_drop_adjustment: drop_adjustment,
        },
    )
}

/// The conservative heterogeneous-means estimator
/// `CRg + CRt + sum_m w(m) (sum_t (y_t y_{t+m}' + y_{t+m} y_t') + 2 sum_t y_t y_t')`.
///
/// No cell term is subtracted, and the own-period term is added once per lag
/// with that lag's weight.
pub fn hm_con(
    p: &PanelIndex,
    s: &ScoreMatrix,
    k: &KernelSpec,
) -> Result<VarianceEstimate, EstimatorError> {
    check_inputs(p, s)?;
    check_kernel(p, k)?;
    let mut acc = OuterAccumulator::new(s.dim());
    add_bucket_outer(&mut acc, s, p.clusters(), 1.0);
    add_bucket_outer(&mut acc, s, p.periods(), 1.0);
    let y = time_aggregate(p, s)?;
    let periods = y.periods();
    for m in 1..=k.bandwidth {
        let w = k.weight_unchecked(m);
        for t in 0..periods - m {
            acc.add_cross(&y.y[t], &y.y[t + m], w);
        }
        for yt in &y.y {
            acc.add_outer(yt, yt, 2.0 * w);
        }
    }
    VarianceEstimate::new(acc.finish(), Method::Hm, Some(*k), EstimateFlags::default())
}

/// Dispatches on `choice`; kernel methods require `kernel`.
pub fn estimate(
    p: &PanelIndex,
    s: &ScoreMatrix,
    choice: EstimatorChoice,
    kernel: Option<&KernelSpec>,
) -> Result<VarianceEstimate, EstimatorError> {
    let need = |k: Option<&KernelSpec>| k.copied().ok_or(EstimatorError::KernelRequired(choice.method));
    match choice.method {
        Method::Ehw => ehw(p, s),
        Method::CrCluster => cr_one_way(p, s, ClusterDim::Cluster),
        Method::CrTime => cr_one_way(p, s, ClusterDim::Time),
        Method::Cgm => cgm(p, s),
        Method::Chs => chs(p, s, &need(kernel)?, choice.chs_drop_adjustment),
        Method::Hm => hm_con(p, s, &need(kernel)?),
    }
}
