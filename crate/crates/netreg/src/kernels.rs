//! Kernel evaluations, bandwidth rules, and adaptive per-agent
//! bandwidths.
//!
//! Kernels are always evaluated at squared-distance-over-bandwidth
//! arguments; every estimator in this crate follows that convention.

use serde::{Deserialize, Serialize};

use crate::codegree::DistanceMatrix;
use crate::{NetregError, Result};

/// Kernel family. Only the Epanechnikov kernel is implemented; the enum
/// leaves room for others.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Kernel {
    #[default]
    Epanechnikov,
}

impl Kernel {
    /// K(u) = 3(1-u^2)/4 on |u| < 1, zero outside.
    pub fn eval(&self, u: f64) -> f64 {
        match self {
            Kernel::Epanechnikov => {
                if u * u < 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
        }
    }

    /// First derivative K'(u).
    pub fn d1(&self, u: f64) -> f64 {
        match self {
            Kernel::Epanechnikov => {
                if u * u < 1.0 {
                    -1.5 * u
                } else {
                    0.0
                }
            }
        }
    }

    /// Second derivative K''(u).
    pub fn d2(&self, u: f64) -> f64 {
        match self {
            Kernel::Epanechnikov => {
                if u * u < 1.0 {
                    -1.5
                } else {
                    0.0
                }
            }
        }
    }
}

/// Deterministic bandwidth sequence h(n) = constant * n^(-exponent).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BandwidthRule {
    pub constant: f64,
    pub exponent: f64,
}

impl BandwidthRule {
    pub fn new(constant: f64, exponent: f64) -> Result<Self> {
        if !(constant > 0.0) || !(exponent >= 0.0) {
            return Err(NetregError::validation(format!(
                "bandwidth rule needs constant > 0 and exponent >= 0, got C={constant}, rho={exponent}"
            )));
        }
        Ok(BandwidthRule { constant, exponent })
    }

    pub fn value(&self, n: usize) -> f64 {
        self.constant * (n as f64).powf(-self.exponent)
    }
}

/// Per-agent bandwidths chosen so each agent has the same number of
/// matches, with ties broken by lower index.
#[derive(Debug, Clone)]
pub struct AdaptiveBandwidths {
    h: Vec<f64>,
    m: usize,
    matches: Vec<Vec<usize>>,
}

impl AdaptiveBandwidths {
    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn match_count(&self) -> usize {
        self.m
    }

    /// The exactly-m match set of agent i (sorted by distance, then index).
    pub fn matches(&self, i: usize) -> &[usize] {
        &self.matches[i]
    }
}

/// Match count calibrated to a distance cutoff: the average over agents
/// of how many others sit within `cutoff`, rounded and clamped to
/// [1, n-1].
pub fn adaptive_match_count(d2: &DistanceMatrix, cutoff: f64) -> usize {
    let n = d2.n();
    let mut total = 0usize;
    for i in 0..n {
        for j in 0..n {
            if j != i && d2.get(i, j) <= cutoff {
                total += 1;
            }
        }
    }
    let avg = total as f64 / n as f64;
    (avg.round() as usize).clamp(1, n.saturating_sub(1))
}

/// Choose per-agent bandwidths so agent i's bandwidth admits its m
/// nearest neighbors: h_i sits just above the m-th smallest off-diagonal
/// distance in row i (half-way to the next distinct value when one
/// exists). Ties at the cutoff are resolved toward lower indices when
/// reporting match sets.
pub fn adaptive_bandwidths(d2: &DistanceMatrix, m: usize) -> Result<AdaptiveBandwidths> {
    let n = d2.n();
    if m < 1 || m > n - 1 {
        return Err(NetregError::validation(format!(
            "match count m={m} out of range [1, {}]",
            n - 1
        )));
    }
    let mut h = Vec::with_capacity(n);
    let mut matches = Vec::with_capacity(n);
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| {
            d2.get(i, a)
                .partial_cmp(&d2.get(i, b))
                .unwrap()
                .then(a.cmp(&b))
        });
        let kth = d2.get(i, order[m - 1]);
        let next_larger = order[m..].iter().map(|&j| d2.get(i, j)).find(|&v| v > kth);
        let hi = match next_larger {
            Some(next) => kth + 0.5 * (next - kth),
            None => kth * (1.0 + 1e-9) + f64::MIN_POSITIVE,
        };
        order.truncate(m);
        h.push(hi);
        matches.push(order);
    }
    Ok(AdaptiveBandwidths { h, m, matches })
}
