//! Linear-in-means peer effects: regressor construction from network
//! neighborhoods, slope estimation by pairwise differencing on a
//! network distance, and recovery of the correlated effect.
//!
//! Only point estimation is supported; no standard errors are produced
//! for the peer-effects coefficient vector.

use nalgebra::{DMatrix, DVector};

use crate::codegree::DistanceMatrix;
use crate::estimators::{lambda_hat, pairwise_difference, LambdaEstimate, PairBandwidth, PairwiseFitResult};
use crate::kernels::Kernel;
use crate::netdata::{Network, NodeSample};
use crate::{NetregError, Result};

/// Stacked regressors (x_i, peer-mean x, peer-mean y) with isolation
/// flags; isolated agents carry zeros in all peer columns.
#[derive(Debug, Clone)]
pub struct PeerRegressors {
    pub xhat: DMatrix<f64>,
    pub isolated: Vec<bool>,
}

impl PeerRegressors {
    pub fn n(&self) -> usize {
        self.xhat.nrows()
    }
}

fn assemble(
    net: &Network,
    sample: &NodeSample,
    weight: impl Fn(usize, usize) -> f64,
) -> PeerRegressors {
    let n = net.n();
    let k = sample.k();
    let d = net.adjacency();
    let mut xhat = DMatrix::zeros(n, 2 * k + 1);
    let mut isolated = vec![false; n];
    for i in 0..n {
        for a in 0..k {
            xhat[(i, a)] = sample.x[(i, a)];
        }
        let mut den = 0.0;
        let mut num_x = vec![0.0; k];
        let mut num_y = 0.0;
        for j in 0..n {
            let w = d[(i, j)] * weight(i, j);
            if w == 0.0 {
                continue;
            }
            den += w;
            for a in 0..k {
                num_x[a] += sample.x[(j, a)] * w;
            }
            num_y += sample.y[j] * w;
        }
        if den > 0.0 {
            for a in 0..k {
                xhat[(i, k + a)] = num_x[a] / den;
            }
            xhat[(i, 2 * k)] = num_y / den;
        } else {
            isolated[i] = true;
        }
    }
    PeerRegressors { xhat, isolated }
}

/// X̂_i = (x_i, Σ_j x_j D_ij / Σ_j D_ij, Σ_j y_j D_ij / Σ_j D_ij).
pub fn build_peer_regressors(net: &Network, sample: &NodeSample) -> Result<PeerRegressors> {
    if net.n() != sample.n() {
        return Err(NetregError::validation("network and sample sizes differ"));
    }
    Ok(assemble(net, sample, |_, _| 1.0))
}

/// Peer means reweighted by agent-covariate proximity,
/// K_z((z_i − z_j)/hz) with the L1 norm across z columns; zero-weight
/// rows are treated as isolated.
pub fn build_peer_regressors_kz(
    net: &Network,
    sample: &NodeSample,
    kz: Kernel,
    hz: f64,
) -> Result<PeerRegressors> {
    if net.n() != sample.n() {
        return Err(NetregError::validation("network and sample sizes differ"));
    }
    if !(hz > 0.0) {
        return Err(NetregError::validation("hz must be positive"));
    }
    let z = sample
        .z
        .as_ref()
        .ok_or_else(|| NetregError::validation("kernel-weighted peer means require z"))?;
    let n = net.n();
    // bandwidth guidance, not a hard requirement
    let floor = 0.5 * (n as f64).powf(-1.0 / 3.0);
    if hz < floor {
        eprintln!(
            "warning: hz={hz:.4} is below the guidance floor {floor:.4} for n={n}; \
             peer means may be undersmoothed"
        );
    }
    Ok(assemble(net, sample, |i, j| {
        let gap: f64 = (0..z.ncols()).map(|c| (z[(i, c)] - z[(j, c)]).abs()).sum();
        kz.eval(gap / hz)
    }))
}

/// Peer-effects slope: the pairwise-difference fit with X̂ as regressors.
/// The caller picks the distance matrix — the conditional construction
/// for link covariates, or the plain one for agent covariates.
pub fn peer_theta(
    reg: &PeerRegressors,
    y: &DVector<f64>,
    d2: &DistanceMatrix,
    h: PairBandwidth,
    kernel: Kernel,
) -> Result<PairwiseFitResult> {
    let sample = NodeSample::new(y.clone(), reg.xhat.clone(), None)?;
    pairwise_difference(&sample, d2, h, kernel).map_err(|e| {
        NetregError::numerical(format!("peer-effects fit failed (no residual variation): {e}"))
    })
}

/// Correlated effect recovered from the residual variation y − X̂θ̂.
pub fn peer_lambda(
    reg: &PeerRegressors,
    y: &DVector<f64>,
    theta: &DVector<f64>,
    d2: &DistanceMatrix,
    h: f64,
    kernel: Kernel,
) -> Result<LambdaEstimate> {
    let sample = NodeSample::new(y.clone(), reg.xhat.clone(), None)?;
    lambda_hat(&sample, theta, d2, h, kernel)
}
