//! Empirical codegree distance matrices: binary, weighted/directed
//! maximum-form, and link-covariate-conditional.
//!
//! The binary squared distance between agents i and j is
//!
//! ```text
//! d2[i][j] = (1/n) sum_t [ (1/n) sum_s D_ts (D_is - D_js) ]^2
//! ```
//!
//! computed here through the codegree matrix c = D D'/n, so the triple
//! sum collapses to one matrix product plus a pairwise column-distance
//! pass: O(n^3) time, O(n^2) memory. Sums run over all indices,
//! including s,t in {i,j}; the leave-out form used inside asymptotic
//! arguments differs by O(1/n) and is not what the displayed estimators
//! use.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::kernels::Kernel;
use crate::netdata::{LinkCovariates, Network, WeightedNetwork};
use crate::{NetregError, Result};

/// Which construction produced a distance matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceKind {
    Binary,
    WeightedMax,
    Conditional,
}

/// Symmetric matrix of squared codegree distances in [0,1] with zero
/// diagonal.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    d2: DMatrix<f64>,
    kind: DistanceKind,
}

impl DistanceMatrix {
    /// Validate an externally supplied matrix of squared distances.
    pub fn from_matrix(d2: DMatrix<f64>, kind: DistanceKind) -> Result<Self> {
        let n = d2.nrows();
        if d2.ncols() != n {
            return Err(NetregError::validation("distance matrix must be square"));
        }
        for i in 0..n {
            if d2[(i, i)] != 0.0 {
                return Err(NetregError::validation(format!(
                    "distance matrix has nonzero diagonal at {i}"
                )));
            }
            for j in 0..i {
                let v = d2[(i, j)];
                if !(0.0..=1.0).contains(&v) || v != d2[(j, i)] {
                    return Err(NetregError::validation(format!(
                        "distance entry ({i},{j}) violates symmetry or [0,1] range"
                    )));
                }
            }
        }
        Ok(DistanceMatrix { d2, kind })
    }

    pub fn n(&self) -> usize {
        self.d2.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d2[(i, j)]
    }

    pub fn kind(&self) -> DistanceKind {
        self.kind
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.d2
    }
}

/// Normalized common-neighbor counts c[t][i] = (1/n) sum_s D_ts D_is.
#[derive(Debug, Clone)]
pub struct CodegreeMatrix {
    c: DMatrix<f64>,
}

impl CodegreeMatrix {
    pub fn n(&self) -> usize {
        self.c.nrows()
    }

    pub fn get(&self, t: usize, i: usize) -> f64 {
        self.c[(t, i)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.c
    }
}

/// c = D D' / n entrywise.
pub fn codegree_matrix(net: &Network) -> CodegreeMatrix {
    let n = net.n() as f64;
    let d = net.adjacency();
    let c = (d * d.transpose()) / n;
    CodegreeMatrix { c }
}

fn pairwise_column_distance(c: &DMatrix<f64>, kind: DistanceKind) -> DistanceMatrix {
    let n = c.nrows();
    let inv_n = 1.0 / n as f64;
    let mut d2 = DMatrix::zeros(n, n);
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let ci = c.column(i);
            (0..n)
                .map(|j| {
                    if j <= i {
                        return 0.0;
                    }
                    let cj = c.column(j);
                    let mut acc = 0.0;
                    for t in 0..n {
                        let g = ci[t] - cj[t];
                        acc += g * g;
                    }
                    (acc * inv_n).min(1.0)
                })
                .collect()
        })
        .collect();
    for (i, row) in rows.iter().enumerate() {
        for j in (i + 1)..n {
            d2[(i, j)] = row[j];
            d2[(j, i)] = row[j];
        }
    }
    DistanceMatrix { d2, kind }
}

/// Squared binary codegree distances, factorized through the codegree
/// matrix. Equals the literal triple sum exactly.
pub fn codegree_distance_sq(net: &Network) -> DistanceMatrix {
    let c = codegree_matrix(net);
    pairwise_column_distance(&c.c, DistanceKind::Binary)
}

/// Squared codegree distances on the matching scale used by the kernel
/// estimators: per-node sums over t of squared codegree gaps, with the
/// s1 = s2 diagonal of the codegree product removed so that identical
/// linking profiles score zero in expectation rather than at an O(1/n)
/// noise floor. Equals
///   (1/n) Σ_t (1/n) Σ_{s1 ≠ s2} D_ts1 D_ts2 (D_is1 − D_js1)(D_is2 − D_js2),
/// clamped to [0, 1]; the clamp only binds far beyond any admissible
/// bandwidth.
pub fn matching_distance_sq(net: &Network) -> DistanceMatrix {
    let n = net.n();
    let nf = n as f64;
    let d = net.adjacency();
    let c = codegree_matrix(net);
    let c = c.matrix();
    let deg: Vec<f64> = (0..n).map(|s| d.column(s).sum()).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if j <= i {
                        return 0.0;
                    }
                    let mut acc = 0.0;
                    for t in 0..n {
                        let g = c[(t, i)] - c[(t, j)];
                        acc += g * g;
                    }
                    // diagonal s1 = s2 contribution: (1/n^2) Σ_s deg_s (D_is − D_js)^2
                    let mut diag = 0.0;
                    for s in 0..n {
                        let dd = d[(i, s)] - d[(j, s)];
                        diag += deg[s] * dd * dd;
                    }
                    (acc - diag / (nf * nf)).clamp(0.0, 1.0)
                })
                .collect()
        })
        .collect();
    let mut d2 = DMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for j in (i + 1)..n {
            d2[(i, j)] = row[j];
            d2[(j, i)] = row[j];
        }
    }
    DistanceMatrix { d2, kind: DistanceKind::Binary }
}

fn quantile_thin(values: &[f64], budget: usize) -> Vec<f64> {
    if values.len() <= budget {
        return values.to_vec();
    }
    // evenly spaced quantile indices, endpoints included
    (0..budget)
        .map(|k| {
            let idx = (k as f64 * (values.len() - 1) as f64 / (budget - 1).max(1) as f64).round()
                as usize;
            values[idx]
        })
        .collect()
}

const MAX_THRESHOLDS: usize = 512;

/// Maximum codegree distance for weighted/directed (multi-layer)
/// networks: the entrywise maximum of binary codegree distances over
/// indicator networks 1{D >= x}, with thresholds x drawn from the
/// distinct observed entry values of each layer (componentwise partial
/// order across layers). The threshold grid is capped at 512 points by
/// uniform quantile thinning per layer.
pub fn max_codegree_distance_sq(wnet: &WeightedNetwork) -> Result<DistanceMatrix> {
    let n = wnet.n();
    let layer_count = wnet.layer_count();

    let mut layer_values: Vec<Vec<f64>> = Vec::with_capacity(layer_count);
    for l in 0..layer_count {
        let mut vals: Vec<f64> = Vec::new();
        let m = wnet.layer(l);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    vals.push(m[(i, j)]);
                }
            }
        }
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        vals.dedup();
        if vals.is_empty() {
            return Err(NetregError::validation("weighted network has no finite entries"));
        }
        layer_values.push(vals);
    }

    let product: usize = layer_values.iter().map(|v| v.len()).product();
    if product > MAX_THRESHOLDS {
        let per_layer = (MAX_THRESHOLDS as f64)
            .powf(1.0 / layer_count as f64)
            .floor()
            .max(1.0) as usize;
        for vals in &mut layer_values {
            *vals = quantile_thin(vals, per_layer.max(1));
        }
    }

    // Cartesian product of per-layer thresholds.
    let mut thresholds: Vec<Vec<f64>> = vec![Vec::new()];
    for vals in &layer_values {
        let mut next = Vec::with_capacity(thresholds.len() * vals.len());
        for combo in &thresholds {
            for &v in vals {
                let mut c = combo.clone();
                c.push(v);
                next.push(c);
            }
        }
        thresholds = next;
    }

    let mut best = DMatrix::zeros(n, n);
    for x in &thresholds {
        let ind = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                return 0.0;
            }
            let above = (0..layer_count).all(|l| wnet.layer(l)[(i, j)] >= x[l]);
            if above {
                1.0
            } else {
                0.0
            }
        });
        // degenerate thresholds (complete or empty indicator) carry no
        // contrast information; skipping them keeps the binary reduction
        // and the constant-weight case exact
        let links: f64 = ind.sum();
        if links == 0.0 || links == (n * (n - 1)) as f64 {
            continue;
        }
        let c = (&ind * ind.transpose()) / n as f64;
        let d2 = pairwise_column_distance(&c, DistanceKind::Binary);
        for i in 0..n {
            for j in 0..n {
                if d2.d2[(i, j)] > best[(i, j)] {
                    best[(i, j)] = d2.d2[(i, j)];
                }
            }
        }
    }
    Ok(DistanceMatrix { d2: best, kind: DistanceKind::WeightedMax })
}

/// Conditional codegree distance given link covariates:
///
/// ```text
/// d2[i][j] = (1/n) sum_t [ sum_s D_ts (D_is - D_js) w_s / sum_s w_s ]^2
/// w_s = K_z( (|z_is - z_ts| + |z_js - z_ts|) / hz )
/// ```
///
/// with the multi-layer |.| taken as the L1 norm across layers. A t-term
/// whose weight denominator is zero contributes zero.
pub fn conditional_codegree_distance_sq(
    net: &Network,
    zlinks: &LinkCovariates,
    kz: Kernel,
    hz: f64,
) -> Result<DistanceMatrix> {
    let n = net.n();
    if zlinks.n() != n {
        return Err(NetregError::validation(format!(
            "link covariates are for {} nodes, network has {n}",
            zlinks.n()
        )));
    }
    if !(hz > 0.0) {
        return Err(NetregError::validation("hz must be positive"));
    }
    let d = net.adjacency();
    let inv_n = 1.0 / n as f64;

    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if j <= i {
                        return 0.0;
                    }
                    let mut acc = 0.0;
                    for t in 0..n {
                        let mut num = 0.0;
                        let mut den = 0.0;
                        for s in 0..n {
                            let gap = (zlinks.l1_gap(i, t, s) + zlinks.l1_gap(j, t, s)) / hz;
                            let w = kz.eval(gap);
                            if w != 0.0 {
                                den += w;
                                num += d[(t, s)] * (d[(i, s)] - d[(j, s)]) * w;
                            }
                        }
                        if den > 0.0 {
                            let r = num / den;
                            acc += r * r;
                        }
                    }
                    (acc * inv_n).min(1.0)
                })
                .collect()
        })
        .collect();

    let mut d2 = DMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for j in (i + 1)..n {
            d2[(i, j)] = row[j];
            d2[(j, i)] = row[j];
        }
    }
    Ok(DistanceMatrix { d2, kind: DistanceKind::Conditional })
}
