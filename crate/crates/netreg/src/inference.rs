//! Variance estimation for the pairwise-difference estimators and for
//! the recovered λ̂, plus confidence intervals and an undersmoothing
//! diagnostic.
//!
//! The three-term Ω̂ is a quintuple sum as displayed; computed literally
//! it costs O(n⁵). Two identities collapse it to O(n³·k):
//!
//! ```text
//! F̂_ijt = (1/n²) Σ_{s1,s2} D_ts1 D_ts2 (D_is1−D_js1)(D_is2−D_js2)
//!        = (c[t][i] − c[t][j])²                    with c = D D'/n
//! F̂′_ijs = (D_is − D_js) · (G[s][i] − G[s][j])    with G = D' c / n
//! ```
//!
//! so each of terms 2–3 becomes Σ_t of an outer product of k-vector
//! accumulators A_t(h1), A_t(h2) built in one pass over active pairs.

use nalgebra::{DMatrix, DVector};

use crate::codegree::{codegree_matrix, DistanceMatrix};
use crate::estimators::{BiasCorrectionSpec, PairBandwidth, PairwiseFitResult, RCOND_MIN};
use crate::kernels::Kernel;
use crate::netdata::{Network, NodeSample};
use crate::norm;
use crate::{NetregError, Result};

/// The three summands of Ω̂ with their displayed leading constants
/// already applied (1/n³, 1/(n⁵h₁h₂), 4/(n⁵h₁h₂) respectively).
#[derive(Debug, Clone)]
pub struct OmegaComponents {
    pub term1: DMatrix<f64>,
    pub term2: DMatrix<f64>,
    pub term3: DMatrix<f64>,
    pub h1: PairBandwidth,
    pub h2: PairBandwidth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceMethod {
    General,
    FiniteSupport,
    BiasCorrected,
}

#[derive(Debug, Clone)]
pub struct VarianceResult {
    pub v: DMatrix<f64>,
    pub se: DVector<f64>,
    pub method: VarianceMethod,
}

fn inverse_checked(gamma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = gamma.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smax <= 0.0 || smin / smax < RCOND_MIN {
        return Err(NetregError::numerical("singular Gamma in variance construction"));
    }
    svd.pseudo_inverse(0.0).map_err(NetregError::numerical)
}

/// Pair-average Γ̂ = (n choose 2)⁻¹ Σ_{i<j} (x_i−x_j)'(x_i−x_j) K(d2_ij/h_ij).
pub fn gamma_hat(
    sample: &NodeSample,
    d2: &DistanceMatrix,
    h: &PairBandwidth,
    kernel: Kernel,
) -> Result<DMatrix<f64>> {
    let n = sample.n();
    if d2.n() != n {
        return Err(NetregError::validation("distance matrix and sample sizes differ"));
    }
    let k = sample.k();
    let mut gamma = DMatrix::zeros(k, k);
    for i in 0..n {
        for j in (i + 1)..n {
            let w = kernel.eval(d2.get(i, j) / h.pair(i, j));
            if w == 0.0 {
                continue;
            }
            let dx = sample.x.row(i) - sample.x.row(j);
            for a in 0..k {
                for b in 0..k {
                    gamma[(a, b)] += dx[a] * dx[b] * w;
                }
            }
        }
    }
    gamma /= (n * (n - 1) / 2) as f64;
    Ok(gamma)
}

/// All three Ω̂ summands at bandwidths (h1, h2), factorized as described
/// in the module docs. Per-agent bandwidths enter through the pair rule
/// h_ij = max(h_i, h_j), each pair's K′ scaled by its own 1/h_ij.
pub fn omega_hat(
    sample: &NodeSample,
    beta: &DVector<f64>,
    net: &Network,
    d2: &DistanceMatrix,
    h1: PairBandwidth,
    h2: PairBandwidth,
    kernel: Kernel,
) -> Result<OmegaComponents> {
    let n = sample.n();
    let k = sample.k();
    if d2.n() != n || net.n() != n {
        return Err(NetregError::validation("network, distances, and sample sizes differ"));
    }
    let u = &sample.y - &sample.x * beta;
    let d = net.adjacency();
    let c = codegree_matrix(net);
    let c = c.matrix();
    let g = (d.transpose() * c) / n as f64;

    // delta[(i,j)] row-major upper triangle: Δ̂_ij = (x_i−x_j)'(u_i−u_j)
    let delta = |i: usize, j: usize| -> DVector<f64> {
        let du = u[i] - u[j];
        DVector::from_fn(k, |a, _| (sample.x[(i, a)] - sample.x[(j, a)]) * du)
    };

    // term1: shared-i double sum of kernel-weighted Δ̂ outer products
    let mut term1 = DMatrix::zeros(k, k);
    for i in 0..n {
        let mut s1 = DVector::zeros(k);
        let mut s2 = DVector::zeros(k);
        for j in 0..n {
            if j == i {
                continue;
            }
            let dij = delta(i, j);
            let w1 = kernel.eval(d2.get(i, j) / h1.pair(i, j));
            let w2 = kernel.eval(d2.get(i, j) / h2.pair(i, j));
            if w1 != 0.0 {
                s1 += &dij * w1;
            }
            if w2 != 0.0 {
                s2 += &dij * w2;
            }
        }
        term1 += &s1 * s2.transpose();
    }
    term1 /= (n * n * n) as f64;

    // terms 2-3: per-t accumulators over ordered active pairs, exploiting
    // symmetry of the summand in (i,j). The codegree-fluctuation factors
    // use the matching-scale convention of `matching_distance_sq`
    // (per-node sums, s1 = s2 diagonal removed):
    //   F̃_ijt  = n (c_ti − c_tj)^2 − (1/n) Σ_s D_ts (D_is − D_js)^2
    //   F̃'_ijt = n (D_it − D_jt)(G_ti − G_tj) − (1/n) deg_t (D_it − D_jt)^2
    // so that (1/n) Σ_t F̃ and (1/n) Σ_t F̃' both recover the matching
    // distance the kernels were fed. The triple product in F̃'s diagonal
    // removal is closed with one matmul after the pair loop:
    //   Σ_s D_ts (D_is − D_js)^2 = n (c_ti + c_tj) − 2 Σ_s D_ts D_is D_js.
    let nf = n as f64;
    let deg: Vec<f64> = (0..n).map(|t| d.column(t).sum()).collect();
    let mut a1: DMatrix<f64> = DMatrix::zeros(n, k);
    let mut a2: DMatrix<f64> = DMatrix::zeros(n, k);
    let mut b1: DMatrix<f64> = DMatrix::zeros(n, k);
    let mut b2: DMatrix<f64> = DMatrix::zeros(n, k);
    let mut m1: DMatrix<f64> = DMatrix::zeros(n, k);
    let mut m2: DMatrix<f64> = DMatrix::zeros(n, k);
    for i in 0..n {
        for j in (i + 1)..n {
            let dd = d2.get(i, j);
            let hp1 = h1.pair(i, j);
            let hp2 = h2.pair(i, j);
            let w1 = kernel.d1(dd / hp1) / hp1;
            let w2 = kernel.d1(dd / hp2) / hp2;
            if w1 == 0.0 && w2 == 0.0 {
                continue;
            }
            let dij = delta(i, j) * 2.0; // ordered pairs (i,j) and (j,i)
            for t in 0..n {
                let gap = c[(t, i)] - c[(t, j)];
                let f_cent = nf * gap * gap - c[(t, i)] - c[(t, j)] - dd;
                let dt = d[(i, t)] - d[(j, t)];
                let fp_cent =
                    nf * dt * (g[(t, i)] - g[(t, j)]) - deg[t] * dt * dt / nf - dd;
                let prod = d[(i, t)] * d[(j, t)];
                for a in 0..k {
                    let base = dij[a];
                    if w1 != 0.0 {
                        a1[(t, a)] += base * w1 * f_cent;
                        b1[(t, a)] += base * w1 * fp_cent;
                        if prod != 0.0 {
                            m1[(t, a)] += base * w1 * prod;
                        }
                    }
                    if w2 != 0.0 {
                        a2[(t, a)] += base * w2 * f_cent;
                        b2[(t, a)] += base * w2 * fp_cent;
                        if prod != 0.0 {
                            m2[(t, a)] += base * w2 * prod;
                        }
                    }
                }
            }
        }
    }
    a1 += d * &m1 * (2.0 / nf);
    a2 += d * &m2 * (2.0 / nf);
    let n5 = (n as f64).powi(5);
    let mut term2 = DMatrix::zeros(k, k);
    let mut term3 = DMatrix::zeros(k, k);
    for t in 0..n {
        for a in 0..k {
            for b in 0..k {
                term2[(a, b)] += a1[(t, a)] * a2[(t, b)];
                term3[(a, b)] += b1[(t, a)] * b2[(t, b)];
            }
        }
    }
    term2 /= n5;
    term3 *= 4.0 / n5;

    Ok(OmegaComponents { term1, term2, term3, h1, h2 })
}

fn finish_variance(
    v_raw: DMatrix<f64>,
    method: VarianceMethod,
) -> VarianceResult {
    let k = v_raw.nrows();
    let mut v = DMatrix::zeros(k, k);
    for a in 0..k {
        for b in 0..k {
            v[(a, b)] = 0.5 * (v_raw[(a, b)] + v_raw[(b, a)]);
        }
    }
    let mut se = DVector::zeros(k);
    for a in 0..k {
        if v[(a, a)] < 0.0 {
            eprintln!(
                "warning: variance diagonal {a} clamped to 0 (was {:.3e})",
                v[(a, a)]
            );
            v[(a, a)] = 0.0;
        }
        se[a] = v[(a, a)].sqrt();
    }
    VarianceResult { v, se, method }
}

fn omega_total(omega: &OmegaComponents) -> DMatrix<f64> {
    &omega.term1 * 4.0 + &omega.term2 + &omega.term3
}

/// Sampling variance of β̂: Γ̂⁻¹ (4·term1 + term2 + term3) Γ̂⁻¹ / n.
pub fn beta_variance(
    gamma: &DMatrix<f64>,
    omega: &OmegaComponents,
    n: usize,
) -> Result<VarianceResult> {
    let gi = inverse_checked(gamma)?;
    let v = &gi * omega_total(omega) * &gi / n as f64;
    Ok(finish_variance(v, VarianceMethod::General))
}

/// Shortcut dropping the two derivative terms, valid when match
/// distances concentrate at exact ties.
pub fn finite_support_variance(
    gamma: &DMatrix<f64>,
    omega: &OmegaComponents,
    n: usize,
) -> Result<VarianceResult> {
    let gi = inverse_checked(gamma)?;
    let v = &gi * (&omega.term1 * 4.0) * &gi / n as f64;
    Ok(finish_variance(v, VarianceMethod::FiniteSupport))
}

/// Variance of the bias-corrected combination: the double sum
/// Σ_{l1,l2} a_{l1} a_{l2} Γ̂_{l1}⁻¹ Ω̂_{l1,l2} Γ̂_{l2}⁻¹ / n.
/// `cross_omegas[l1][l2]` holds Ω̂ at bandwidths (c_{l1}h, c_{l2}h).
pub fn bias_corrected_variance(
    components: &[PairwiseFitResult],
    spec: &BiasCorrectionSpec,
    cross_omegas: &[Vec<OmegaComponents>],
    n: usize,
) -> Result<VarianceResult> {
    bias_corrected_variance_with(components, spec, cross_omegas, n, false)
}

/// As `bias_corrected_variance` but with each Ω̂ reduced to its 4·term1
/// part, the finite-support shortcut.
pub fn bias_corrected_variance_finite_support(
    components: &[PairwiseFitResult],
    spec: &BiasCorrectionSpec,
    cross_omegas: &[Vec<OmegaComponents>],
    n: usize,
) -> Result<VarianceResult> {
    bias_corrected_variance_with(components, spec, cross_omegas, n, true)
}

fn bias_corrected_variance_with(
    components: &[PairwiseFitResult],
    spec: &BiasCorrectionSpec,
    cross_omegas: &[Vec<OmegaComponents>],
    n: usize,
    finite_support: bool,
) -> Result<VarianceResult> {
    let l = spec.order();
    if components.len() != l || cross_omegas.len() != l {
        return Err(NetregError::validation("component and weight counts differ"));
    }
    let inverses: Vec<DMatrix<f64>> = components
        .iter()
        .map(|f| inverse_checked(&f.gamma_hat))
        .collect::<Result<_>>()?;
    let k = components[0].beta.len();
    let mut v = DMatrix::zeros(k, k);
    for l1 in 0..l {
        for l2 in 0..l {
            let w = spec.a[l1] * spec.a[l2];
            let om = if finite_support {
                &cross_omegas[l1][l2].term1 * 4.0
            } else {
                omega_total(&cross_omegas[l1][l2])
            };
            v += &inverses[l1] * om * &inverses[l2] * w;
        }
    }
    v /= n as f64;
    Ok(finish_variance(v, VarianceMethod::BiasCorrected))
}

/// Joint sampling variance of λ̂ at the target agents: a Gram matrix of
/// per-agent influence contributions divided by n·r̂_i·r̂_j.
pub fn lambda_variance(
    sample: &NodeSample,
    beta: &DVector<f64>,
    d2: &DistanceMatrix,
    h: f64,
    kernel: Kernel,
    targets: &[usize],
) -> Result<DMatrix<f64>> {
    let n = sample.n();
    if targets.is_empty() {
        return Err(NetregError::validation("target set must be nonempty"));
    }
    let u = &sample.y - &sample.x * beta;
    let weights: Vec<DVector<f64>> = targets
        .iter()
        .map(|&i| DVector::from_fn(n, |t, _| kernel.eval(d2.get(i, t) / h)))
        .collect();
    let r: Vec<f64> = weights.iter().map(|w| w.sum() / n as f64).collect();
    let rp: Vec<f64> = weights.iter().map(|w| w.dot(&u) / n as f64).collect();
    for (idx, &ri) in r.iter().enumerate() {
        if ri <= 0.0 {
            return Err(NetregError::numerical(format!(
                "no kernel weight at target agent {}",
                targets[idx]
            )));
        }
    }
    // influence[m][t] = (u_t K_it − r̂′_i) − (r̂′_i/r̂_i)(K_it − r̂_i)
    let m = targets.len();
    let mut v = DMatrix::zeros(m, m);
    for p in 0..m {
        for q in p..m {
            let mut acc = 0.0;
            for t in 0..n {
                let ap = (u[t] * weights[p][t] - rp[p]) - rp[p] / r[p] * (weights[p][t] - r[p]);
                let aq = (u[t] * weights[q][t] - rp[q]) - rp[q] / r[q] * (weights[q][t] - r[q]);
                acc += ap * aq;
            }
            let val = acc / n as f64 / (n as f64 * r[p] * r[q]);
            v[(p, q)] = val;
            v[(q, p)] = val;
        }
    }
    Ok(v)
}

/// Per-agent plug-in of the undersmoothing condition's bias measure,
/// n·(λ̂_i r̂_i − r̂′_i)²/r̂_i with r̂′_i = (1/n)Σ_t λ̂_t K(d2_it/h).
/// NaN where an agent accrues no kernel weight. Reported, never enforced.
pub fn undersmoothing_diagnostic(
    sample: &NodeSample,
    beta: &DVector<f64>,
    d2: &DistanceMatrix,
    h: f64,
    kernel: Kernel,
) -> Result<DVector<f64>> {
    let n = sample.n();
    let lam = crate::estimators::lambda_hat(sample, beta, d2, h, kernel)?;
    let mut out = DVector::zeros(n);
    for i in 0..n {
        if lam.is_missing(i) {
            out[i] = f64::NAN;
            continue;
        }
        let mut r = 0.0;
        let mut rp = 0.0;
        for t in 0..n {
            let w = kernel.eval(d2.get(i, t) / h);
            r += w;
            let lt = lam.values[t];
            if w > 0.0 && lt.is_finite() {
                rp += lt * w;
            }
        }
        let r = r / n as f64;
        let rp = rp / n as f64;
        let b = lam.values[i] * r - rp;
        out[i] = n as f64 * b * b / r;
    }
    Ok(out)
}

/// Two-sided normal interval est ± z_{(1+level)/2}·se per coefficient.
pub fn confidence_interval(
    est: &DVector<f64>,
    var: &VarianceResult,
    level: f64,
) -> Result<Vec<(f64, f64)>> {
    if !(0.0 < level && level < 1.0) {
        return Err(NetregError::validation("confidence level must lie in (0,1)"));
    }
    let z = norm::inv_cdf((1.0 + level) / 2.0);
    Ok(est
        .iter()
        .zip(var.se.iter())
        .map(|(&e, &s)| (e - z * s, e + z * s))
        .collect())
}
