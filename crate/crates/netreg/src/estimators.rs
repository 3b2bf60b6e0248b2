//! Point estimators built on codegree matching: the pairwise-difference
//! slope estimator, jackknife-style bias correction across bandwidths,
//! recovery of the nonparametric component λ, OLS baselines with network
//! controls, and the instrumented three-step variant.

use nalgebra::{DMatrix, DVector};

use crate::codegree::DistanceMatrix;
use crate::kernels::{AdaptiveBandwidths, Kernel};
use crate::netdata::{Network, NodeSample};
use crate::{NetregError, Result};

/// Reciprocal-condition cutoff separating identification failure from
/// round-off.
pub const RCOND_MIN: f64 = 1e-10;

/// Per-pair bandwidth policy: one global h, or agent-specific h with
/// pair bandwidth max(h_i, h_j).
#[derive(Debug, Clone)]
pub enum PairBandwidth {
    Scalar(f64),
    PerAgent(Vec<f64>),
}

impl PairBandwidth {
    pub fn pair(&self, i: usize, j: usize) -> f64 {
        match self {
            PairBandwidth::Scalar(h) => *h,
            PairBandwidth::PerAgent(h) => h[i].max(h[j]),
        }
    }
}

impl From<f64> for PairBandwidth {
    fn from(h: f64) -> Self {
        PairBandwidth::Scalar(h)
    }
}

impl From<&AdaptiveBandwidths> for PairBandwidth {
    fn from(ab: &AdaptiveBandwidths) -> Self {
        PairBandwidth::PerAgent(ab.h().to_vec())
    }
}

/// Output of one pairwise-difference fit at a fixed bandwidth policy.
#[derive(Debug, Clone)]
pub struct PairwiseFitResult {
    pub beta: DVector<f64>,
    /// Γ̂: pair-average of (x_i−x_j)'(x_i−x_j) kernel weights.
    pub gamma_hat: DMatrix<f64>,
    /// Pair-average of (x_i−x_j)'(y_i−y_j) kernel weights.
    pub numerator: DVector<f64>,
    pub h: PairBandwidth,
    pub n_active_pairs: usize,
}

fn solve_spd(gamma: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = gamma.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smax <= 0.0 || smin / smax < RCOND_MIN {
        return Err(NetregError::numerical(
            "no identifying variation within matches (singular Gamma)",
        ));
    }
    svd.solve(rhs, 0.0)
        .map_err(NetregError::numerical)
}

/// Slope estimate from kernel-weighted regression of outcome differences
/// on regressor differences over agent pairs:
///
/// ```text
/// beta = Gamma^{-1} (n choose 2)^{-1} sum_{i<j} (x_i-x_j)'(y_i-y_j) K(d2_ij/h_ij)
/// ```
pub fn pairwise_difference(
    sample: &NodeSample,
    d2: &DistanceMatrix,
    h: PairBandwidth,
    kernel: Kernel,
) -> Result<PairwiseFitResult> {
    let n = sample.n();
    let k = sample.k();
    if d2.n() != n {
        return Err(NetregError::validation(format!(
            "distance matrix is {}x{} but sample has {n} agents",
            d2.n(),
            d2.n()
        )));
    }
    let mut gamma = DMatrix::zeros(k, k);
    let mut num = DVector::zeros(k);
    let mut active = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            let w = kernel.eval(d2.get(i, j) / h.pair(i, j));
            if w == 0.0 {
                continue;
            }
            active += 1;
            let dx = sample.x.row(i) - sample.x.row(j);
            let dy = sample.y[i] - sample.y[j];
            for a in 0..k {
                num[a] += dx[a] * dy * w;
                for b in 0..k {
                    gamma[(a, b)] += dx[a] * dx[b] * w;
                }
            }
        }
    }
    if active == 0 {
        return Err(NetregError::numerical("no pair receives positive kernel weight"));
    }
    let pairs = (n * (n - 1) / 2) as f64;
    gamma /= pairs;
    num /= pairs;
    let beta = solve_spd(&gamma, &num)?;
    Ok(PairwiseFitResult { beta, gamma_hat: gamma, numerator: num, h, n_active_pairs: active })
}

/// Weights combining fits at bandwidths c_l * h so leading matching-bias
/// terms cancel.
#[derive(Debug, Clone)]
pub struct BiasCorrectionSpec {
    pub c: Vec<f64>,
    pub theta: f64,
    pub a: Vec<f64>,
}

impl BiasCorrectionSpec {
    pub fn order(&self) -> usize {
        self.c.len()
    }
}

/// Solve the L x L system: first row of ones, rows m=2..L with entries
/// c_l^(m/theta), right-hand side (1,0,...,0).
pub fn solve_bias_weights(l: usize, c: &[f64], theta: f64) -> Result<BiasCorrectionSpec> {
    if l == 0 || c.len() != l {
        return Err(NetregError::validation("order L must be >= 1 with L constants"));
    }
    if !(theta > 0.0) {
        return Err(NetregError::validation("theta must be positive"));
    }
    if c[0] != 1.0 {
        return Err(NetregError::validation("first bandwidth constant must be 1"));
    }
    for (idx, &cl) in c.iter().enumerate() {
        if !(cl > 0.0) || !cl.is_finite() {
            return Err(NetregError::validation("bandwidth constants must be positive"));
        }
        if c[..idx].contains(&cl) {
            return Err(NetregError::validation("bandwidth constants must be distinct"));
        }
    }
    let mut mat = DMatrix::zeros(l, l);
    for j in 0..l {
        mat[(0, j)] = 1.0;
    }
    for m in 2..=l {
        for j in 0..l {
            mat[(m - 1, j)] = c[j].powf(m as f64 / theta);
        }
    }
    let mut rhs = DVector::zeros(l);
    rhs[0] = 1.0;
    let a = mat
        .lu()
        .solve(&rhs)
        .ok_or_else(|| NetregError::numerical("bias-weight system is singular"))?;
    Ok(BiasCorrectionSpec { c: c.to_vec(), theta, a: a.iter().copied().collect() })
}

/// Combined estimate beta_bar = sum_l a_l * beta(c_l * h_base), together
/// with the component fits (kept for variance estimation).
pub fn bias_corrected_beta(
    sample: &NodeSample,
    d2: &DistanceMatrix,
    h_base: f64,
    spec: &BiasCorrectionSpec,
    kernel: Kernel,
) -> Result<(DVector<f64>, Vec<PairwiseFitResult>)> {
    let mut components = Vec::with_capacity(spec.order());
    for &cl in &spec.c {
        let fit = pairwise_difference(sample, d2, PairBandwidth::Scalar(cl * h_base), kernel)
            .map_err(|e| {
                NetregError::numerical(format!("component fit at c={cl} failed: {e}"))
            })?;
        components.push(fit);
    }
    let k = sample.k();
    let mut beta_bar = DVector::zeros(k);
    for (al, fit) in spec.a.iter().zip(&components) {
        beta_bar += &fit.beta * *al;
    }
    Ok((beta_bar, components))
}

/// Kernel-weighted local mean of the regression residuals; NaN where no
/// weight accrues.
#[derive(Debug, Clone)]
pub struct LambdaEstimate {
    pub values: DVector<f64>,
    /// Mean kernel weight per agent; zero marks a missing value.
    pub r_hat: DVector<f64>,
}

impl LambdaEstimate {
    pub fn is_missing(&self, i: usize) -> bool {
        self.r_hat[i] == 0.0
    }
}

/// λ̂(w_i) = Σ_t (y_t − x_t β) K(d2_it/h) / Σ_t K(d2_it/h), the sum over
/// all t including t = i.
pub fn lambda_hat(
    sample: &NodeSample,
    beta: &DVector<f64>,
    d2: &DistanceMatrix,
    h: f64,
    kernel: Kernel,
) -> Result<LambdaEstimate> {
    let n = sample.n();
    if d2.n() != n {
        return Err(NetregError::validation("distance matrix and sample sizes differ"));
    }
    let u = &sample.y - &sample.x * beta;
    let mut values = DVector::zeros(n);
    let mut r_hat = DVector::zeros(n);
    for i in 0..n {
        let mut num = 0.0;
        let mut den = 0.0;
        for t in 0..n {
            let w = kernel.eval(d2.get(i, t) / h);
            num += u[t] * w;
            den += w;
        }
        r_hat[i] = den / n as f64;
        values[i] = if den > 0.0 { num / den } else { f64::NAN };
    }
    Ok(LambdaEstimate { values, r_hat })
}

/// Least squares; errors if the design is rank deficient.
pub fn ols(y: &DVector<f64>, z: &DMatrix<f64>) -> Result<DVector<f64>> {
    if y.len() != z.nrows() {
        return Err(NetregError::validation("y and Z row counts differ"));
    }
    let svd = z.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smax <= 0.0 || smin / smax < RCOND_MIN {
        return Err(NetregError::numerical("rank-deficient design matrix"));
    }
    svd.solve(y, 0.0).map_err(NetregError::numerical)
}

/// Minimum-norm least squares via the pseudo-inverse; never errors on
/// rank deficiency.
pub fn ols_pinv(y: &DVector<f64>, z: &DMatrix<f64>) -> Result<DVector<f64>> {
    if y.len() != z.nrows() {
        return Err(NetregError::validation("y and Z row counts differ"));
    }
    let svd = z.clone().svd(true, true);
    let eps = svd.singular_values.max() * 1e-12;
    svd.solve(y, eps).map_err(NetregError::numerical)
}

fn eigencentrality(net: &Network) -> DVector<f64> {
    let n = net.n();
    let d = net.adjacency();
    if d.iter().all(|&v| v == 0.0) {
        return DVector::zeros(n);
    }
    // Power iteration on D + I: same eigenvectors, strictly dominant top
    // eigenvalue even for bipartite graphs.
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    for _ in 0..10_000 {
        let mut w = d * &v + &v;
        let norm = w.norm();
        if norm == 0.0 {
            return DVector::zeros(n);
        }
        w /= norm;
        let delta = (&w - &v).norm();
        v = w;
        if delta < 1e-13 {
            break;
        }
    }
    // sign convention: first nonzero entry nonnegative
    if let Some(first) = v.iter().find(|&&x| x != 0.0) {
        if *first < 0.0 {
            v = -v;
        }
    }
    v
}

/// Control matrix for the OLS-with-network-controls baseline: columns
/// [x, degree, eigencentrality, peer-mean of each x column]. Peer means
/// are zero for isolated agents.
pub fn network_controls(net: &Network, sample: &NodeSample) -> Result<DMatrix<f64>> {
    let n = net.n();
    if sample.n() != n {
        return Err(NetregError::validation("network and sample sizes differ"));
    }
    let k = sample.k();
    let d = net.adjacency();
    let cent = eigencentrality(net);
    let mut out = DMatrix::zeros(n, 2 * k + 2);
    for i in 0..n {
        for a in 0..k {
            out[(i, a)] = sample.x[(i, a)];
        }
        let deg: f64 = d.row(i).sum();
        out[(i, k)] = deg / n as f64;
        out[(i, k + 1)] = cent[i];
        if deg > 0.0 {
            for a in 0..k {
                let peer: f64 = (0..n).map(|j| d[(i, j)] * sample.x[(j, a)]).sum();
                out[(i, k + 2 + a)] = peer / deg;
            }
        }
    }
    Ok(out)
}

/// Instrumented estimator: project y and X linearly on (1, z), run the
/// pairwise-difference fit on the projections, then recover λ̂ from the
/// projected residuals.
pub fn iv_three_step(
    sample: &NodeSample,
    d2: &DistanceMatrix,
    h: PairBandwidth,
    lambda_h: f64,
    kernel: Kernel,
) -> Result<(PairwiseFitResult, LambdaEstimate)> {
    let z = sample
        .z
        .as_ref()
        .ok_or_else(|| NetregError::validation("instrumented fit requires z columns"))?;
    let n = sample.n();
    let mut w = DMatrix::zeros(n, z.ncols() + 1);
    for i in 0..n {
        w[(i, 0)] = 1.0;
        for c in 0..z.ncols() {
            w[(i, c + 1)] = z[(i, c)];
        }
    }
    let svd = w.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if smax <= 0.0 || svd.singular_values.min() / smax < RCOND_MIN {
        return Err(NetregError::numerical("first-stage design is rank deficient"));
    }
    let yz = {
        let coef = svd.solve(&sample.y, 0.0).map_err(NetregError::numerical)?;
        &w * coef
    };
    let mut xz = DMatrix::zeros(n, sample.k());
    for a in 0..sample.k() {
        let col = DVector::from_iterator(n, sample.x.column(a).iter().copied());
        let coef = svd.solve(&col, 0.0).map_err(NetregError::numerical)?;
        xz.set_column(a, &(&w * coef));
    }
    let projected = NodeSample::new(yz, xz, None)?;
    let fit = pairwise_difference(&projected, d2, h, kernel)?;
    let lambda = lambda_hat(&projected, &fit.beta, d2, lambda_h, kernel)?;
    Ok((fit, lambda))
}
