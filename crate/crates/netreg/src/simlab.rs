//! Monte Carlo laboratory: three network-formation designs, six
//! estimators, and bias/MAE/rMAE/size aggregation into tables.
//!
//! Replications are keyed by (master seed, replication index, stream),
//! so any subset can be regenerated independently and results do not
//! depend on execution order. Normal draws go through the inverse CDF
//! for bit-identical output across platforms.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codegree::matching_distance_sq;
use crate::estimators::{
    bias_corrected_beta, network_controls, ols, ols_pinv, pairwise_difference,
    solve_bias_weights, PairBandwidth,
};
use crate::inference::{
    bias_corrected_variance_finite_support, finite_support_variance, omega_hat,
    OmegaComponents,
};
use crate::kernels::{adaptive_bandwidths, adaptive_match_count, BandwidthRule, Kernel};
use crate::netdata::{Network, NodeSample};
use crate::norm;
use crate::{NetregError, Result};

/// Network-formation design of the simulation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    Blockmodel,
    Degree,
    Homophily,
}

impl Design {
    pub fn name(&self) -> &'static str {
        match self {
            Design::Blockmodel => "blockmodel",
            Design::Degree => "degree",
            Design::Homophily => "homophily",
        }
    }

    pub fn all() -> [Design; 3] {
        [Design::Blockmodel, Design::Degree, Design::Homophily]
    }
}

impl FromStr for Design {
    type Err = NetregError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blockmodel" => Ok(Design::Blockmodel),
            "degree" => Ok(Design::Degree),
            "homophily" => Ok(Design::Homophily),
            other => Err(NetregError::validation(format!(
                "unknown design '{other}' (expected blockmodel, degree, or homophily)"
            ))),
        }
    }
}

/// Link probability f(u, v) for a design, u and v in [0, 1].
pub fn link_function(design: Design, u: f64, v: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
        return Err(NetregError::validation("link function arguments must lie in [0,1]"));
    }
    Ok(match design {
        Design::Blockmodel => {
            let hit = (u <= 1.0 / 3.0 && v > 1.0 / 3.0)
                || (1.0 / 3.0 < u && u <= 2.0 / 3.0 && v <= 2.0 / 3.0)
                || (u > 2.0 / 3.0 && (v > 2.0 / 3.0 || v <= 1.0 / 3.0));
            if hit {
                1.0 / 3.0
            } else {
                0.0
            }
        }
        Design::Degree => {
            let e = (u + v).exp();
            e / (1.0 + e)
        }
        Design::Homophily => 1.0 - (u - v) * (u - v),
    })
}

/// One simulation study configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignSpec {
    pub design: Design,
    pub n: usize,
    pub reps: usize,
    pub beta: f64,
    pub gamma: f64,
    pub seed: u64,
    pub level: f64,
    /// Bandwidth rule for the fixed-bandwidth pairwise estimators.
    pub pairwise_bandwidth: BandwidthRule,
    /// Distance cutoff rule calibrating the adaptive match count.
    pub adaptive_target: BandwidthRule,
    /// Bandwidth constants for the bias-corrected combination.
    pub bias_c: Vec<f64>,
    pub bias_theta: f64,
    /// Which of the six estimators to run (1-based ids).
    pub estimators: Vec<usize>,
    /// Scale on the outcome noise; 1.0 reproduces the study design.
    pub eps_scale: f64,
}

impl DesignSpec {
    pub fn table_defaults(design: Design, n: usize, reps: usize, seed: u64) -> Self {
        DesignSpec {
            design,
            n,
            reps,
            beta: 1.0,
            gamma: 1.0,
            seed,
            level: 0.95,
            pairwise_bandwidth: BandwidthRule { constant: 0.1, exponent: 1.0 / 9.0 },
            adaptive_target: BandwidthRule { constant: 0.2, exponent: 1.0 / 9.0 },
            bias_c: vec![1.0, 2.0],
            bias_theta: 1.0,
            estimators: vec![1, 2, 3, 4, 5, 6],
            eps_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(NetregError::validation("n must be at least 10"));
        }
        if self.reps < 1 {
            return Err(NetregError::validation("at least one replication is required"));
        }
        if !(0.0 < self.level && self.level < 1.0) {
            return Err(NetregError::validation("level must lie in (0,1)"));
        }
        if self.estimators.is_empty()
            || self.estimators.iter().any(|&e| e < 1 || e > 6)
        {
            return Err(NetregError::validation("estimator ids must be within 1..=6"));
        }
        if !(self.eps_scale >= 0.0) {
            return Err(NetregError::validation("eps_scale must be nonnegative"));
        }
        Ok(())
    }
}

/// True parameter values and the latent λ vector of one replication.
#[derive(Debug, Clone)]
pub struct Truth {
    pub beta: f64,
    pub gamma: f64,
    pub lambda: DVector<f64>,
}

const STREAM_XI: u64 = 0;
const STREAM_EPS: u64 = 1;
const STREAM_OMEGA: u64 = 2;
const STREAM_ETA: u64 = 3;

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn stream_rng(seed: u64, rep: usize, stream: u64) -> ChaCha8Rng {
    let mut s = seed
        ^ (rep as u64).wrapping_mul(0xA0761D6478BD642F)
        ^ stream.wrapping_mul(0xE7037ED1A0B428DB);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix(&mut s).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

fn unit_open(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    norm::inv_cdf(unit_open(rng))
}

/// Draw one replication: the network, the node sample, and the latent
/// truth. Deterministic in (spec.seed, r).
pub fn gen_replication(spec: &DesignSpec, r: usize) -> Result<(Network, NodeSample, Truth)> {
    spec.validate()?;
    let n = spec.n;
    let mut rng_xi = stream_rng(spec.seed, r, STREAM_XI);
    let mut rng_eps = stream_rng(spec.seed, r, STREAM_EPS);
    let mut rng_omega = stream_rng(spec.seed, r, STREAM_OMEGA);
    let mut rng_eta = stream_rng(spec.seed, r, STREAM_ETA);

    let xi = DVector::from_fn(n, |_, _| normal(&mut rng_xi));
    let eps = DVector::from_fn(n, |_, _| normal(&mut rng_eps) * spec.eps_scale);
    let omega = DVector::from_fn(n, |_, _| normal(&mut rng_omega));

    let phi: Vec<f64> = omega.iter().map(|&w| norm::cdf(w)).collect();
    let lambda = DVector::from_fn(n, |i, _| match spec.design {
        Design::Blockmodel => (3.0 * phi[i]).ceil(),
        _ => omega[i],
    });

    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let eta = unit_open(&mut rng_eta);
            let p = link_function(spec.design, phi[i], phi[j])?;
            if eta <= p {
                d[(i, j)] = 1.0;
                d[(j, i)] = 1.0;
            }
        }
    }
    let net = Network::new(d, false)?;

    let x = DVector::from_fn(n, |i, _| xi[i] + lambda[i]);
    let y = DVector::from_fn(n, |i, _| spec.beta * x[i] + spec.gamma * lambda[i] + eps[i]);
    let sample = NodeSample::new(y, DMatrix::from_column_slice(n, 1, x.as_slice()), None)?;
    Ok((net, sample, Truth { beta: spec.beta, gamma: spec.gamma, lambda }))
}

#[derive(Debug, Clone, Copy)]
struct RepOutcome {
    est: f64,
    se: f64,
}

/// OLS point estimate with a heteroskedasticity-robust interval for one
/// coefficient; pseudo-inverse variant tolerates rank deficiency.
fn ols_outcome(
    y: &DVector<f64>,
    z: &DMatrix<f64>,
    coef: usize,
    use_pinv: bool,
) -> Option<RepOutcome> {
    let b = if use_pinv { ols_pinv(y, z) } else { ols(y, z) }.ok()?;
    let e = y - z * &b;
    let k = z.ncols();
    let ztz = z.transpose() * z;
    let bread = ztz.svd(true, true).pseudo_inverse(1e-12).ok()?;
    let mut meat = DMatrix::zeros(k, k);
    for i in 0..z.nrows() {
        let zi = z.row(i);
        let w = e[i] * e[i];
        for a in 0..k {
            for c in 0..k {
                meat[(a, c)] += zi[a] * zi[c] * w;
            }
        }
    }
    let v = &bread * meat * &bread;
    let se = v[(coef, coef)].max(0.0).sqrt();
    Some(RepOutcome { est: b[coef], se })
}

fn transpose_omega(om: &OmegaComponents) -> OmegaComponents {
    OmegaComponents {
        term1: om.term1.transpose(),
        term2: om.term2.transpose(),
        term3: om.term3.transpose(),
        h1: om.h2.clone(),
        h2: om.h1.clone(),
    }
}

fn simulate_one(spec: &DesignSpec, r: usize) -> [Option<RepOutcome>; 6] {
    let mut out: [Option<RepOutcome>; 6] = [None, None, None, None, None, None];
    let Ok((net, sample, truth)) = gen_replication(spec, r) else {
        return out;
    };
    let n = spec.n;
    let kernel = Kernel::Epanechnikov;
    let wants = |id: usize| spec.estimators.contains(&id);

    if wants(1) {
        let mut z1 = DMatrix::zeros(n, 2);
        z1.set_column(0, &DVector::from_iterator(n, sample.x.column(0).iter().copied()));
        z1.set_column(1, &truth.lambda);
        out[0] = ols_outcome(&sample.y, &z1, 0, false);
    }
    if wants(2) {
        let z2 = sample.x.clone();
        out[1] = ols_outcome(&sample.y, &z2, 0, false);
    }
    if wants(3) {
        if let Ok(controls) = network_controls(&net, &sample) {
            let mut z3 = DMatrix::zeros(n, controls.ncols() + 1);
            for i in 0..n {
                z3[(i, 0)] = 1.0;
                for c in 0..controls.ncols() {
                    z3[(i, c + 1)] = controls[(i, c)];
                }
            }
            out[2] = ols_outcome(&sample.y, &z3, 1, true);
        }
    }

    if !(wants(4) || wants(5) || wants(6)) {
        return out;
    }
    let d2 = matching_distance_sq(&net);
    let h = spec.pairwise_bandwidth.value(n);

    if wants(4) {
        out[3] = (|| {
            let fit =
                pairwise_difference(&sample, &d2, PairBandwidth::Scalar(h), kernel).ok()?;
            let om = omega_hat(
                &sample,
                &fit.beta,
                &net,
                &d2,
                PairBandwidth::Scalar(h),
                PairBandwidth::Scalar(h),
                kernel,
            )
            .ok()?;
            let var = finite_support_variance(&fit.gamma_hat, &om, n).ok()?;
            Some(RepOutcome { est: fit.beta[0], se: var.se[0] })
        })();
    }
    if wants(5) {
        out[4] = (|| {
            let bspec =
                solve_bias_weights(spec.bias_c.len(), &spec.bias_c, spec.bias_theta).ok()?;
            let (beta_bar, comps) =
                bias_corrected_beta(&sample, &d2, h, &bspec, kernel).ok()?;
            let l = bspec.order();
            let mut cross: Vec<Vec<Option<OmegaComponents>>> = vec![vec![None; l]; l];
            for l1 in 0..l {
                for l2 in l1..l {
                    let om = omega_hat(
                        &sample,
                        &beta_bar,
                        &net,
                        &d2,
                        PairBandwidth::Scalar(bspec.c[l1] * h),
                        PairBandwidth::Scalar(bspec.c[l2] * h),
                        kernel,
                    )
                    .ok()?;
                    if l1 != l2 {
                        cross[l2][l1] = Some(transpose_omega(&om));
                    }
                    cross[l1][l2] = Some(om);
                }
            }
            let cross: Vec<Vec<OmegaComponents>> = cross
                .into_iter()
                .map(|row| row.into_iter().map(Option::unwrap).collect())
                .collect();
            let var =
                bias_corrected_variance_finite_support(&comps, &bspec, &cross, n).ok()?;
            Some(RepOutcome { est: beta_bar[0], se: var.se[0] })
        })();
    }
    if wants(6) {
        out[5] = (|| {
            let target = spec.adaptive_target.value(n);
            let m = adaptive_match_count(&d2, target);
            let ab = adaptive_bandwidths(&d2, m).ok()?;
            let hb = PairBandwidth::from(&ab);
            let fit = pairwise_difference(&sample, &d2, hb.clone(), kernel).ok()?;
            let om =
                omega_hat(&sample, &fit.beta, &net, &d2, hb.clone(), hb, kernel).ok()?;
            let var = finite_support_variance(&fit.gamma_hat, &om, n).ok()?;
            Some(RepOutcome { est: fit.beta[0], se: var.se[0] })
        })();
    }
    out
}

/// Aggregated metrics for one (design, estimator, n) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub design: Design,
    pub estimator: String,
    pub n: usize,
    pub bias: f64,
    pub mae: f64,
    pub rmae: f64,
    pub size: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationReport {
    pub rows: Vec<ReportRow>,
    pub seed: u64,
    pub reps: usize,
    pub wall_secs: f64,
    /// Interval construction used for the OLS baselines.
    pub ols_variance: String,
}

pub const ESTIMATOR_NAMES: [&str; 6] =
    ["beta1", "beta2", "beta3", "beta4", "beta5", "beta6"];

/// Run the full study for one spec: per-replication estimates of the
/// selected estimators, aggregated into bias, MAE, rMAE, and size.
/// Aborts if any selected estimator fails in 2% or more of replications.
pub fn run_study(spec: &DesignSpec) -> Result<SimulationReport> {
    spec.validate()?;
    let start = Instant::now();
    let per_rep: Vec<[Option<RepOutcome>; 6]> = (0..spec.reps)
        .into_par_iter()
        .map(|r| simulate_one(spec, r))
        .collect();

    let mut rows = Vec::new();
    let mut mae1 = f64::NAN;
    for idx in 0..6 {
        let id = idx + 1;
        if !spec.estimators.contains(&id) {
            continue;
        }
        let outcomes: Vec<RepOutcome> =
            per_rep.iter().filter_map(|rep| rep[idx]).collect();
        let failures = spec.reps - outcomes.len();
        if (failures as f64) >= 0.02 * spec.reps as f64 && failures > 0 {
            return Err(NetregError::numerical(format!(
                "estimator {} failed in {failures}/{} replications (>= 2% threshold)",
                ESTIMATOR_NAMES[idx], spec.reps
            )));
        }
        let count = outcomes.len() as f64;
        let mean = outcomes.iter().map(|o| o.est).sum::<f64>() / count;
        let mae = outcomes.iter().map(|o| (o.est - spec.beta).abs()).sum::<f64>() / count;
        // size is the rejection rate of the interval against the Monte
        // Carlo mean of the estimator, i.e. the calibration of the
        // standard errors rather than the bias (the biased estimators
        // would otherwise pin every size row at 1)
        let zq = norm::inv_cdf((1.0 + spec.level) / 2.0);
        let size = outcomes
            .iter()
            .filter(|o| (o.est - mean).abs() > zq * o.se)
            .count() as f64
            / count;
        if id == 1 {
            mae1 = mae;
        }
        let rmae = if id == 1 { 1.0 } else { mae / mae1 };
        rows.push(ReportRow {
            design: spec.design,
            estimator: ESTIMATOR_NAMES[idx].to_string(),
            n: spec.n,
            bias: mean - spec.beta,
            mae,
            rmae,
            size,
            failures,
        });
    }
    Ok(SimulationReport {
        rows,
        seed: spec.seed,
        reps: spec.reps,
        wall_secs: start.elapsed().as_secs_f64(),
        ols_variance: "heteroskedasticity-robust (HC0)".to_string(),
    })
}

/// Merge reports from several specs (e.g. a grid over designs and n).
pub fn merge_reports(reports: Vec<SimulationReport>) -> SimulationReport {
    let mut rows = Vec::new();
    let mut wall = 0.0;
    let (mut seed, mut reps) = (0, 0);
    let mut ols_variance = String::new();
    for r in reports {
        rows.extend(r.rows);
        wall += r.wall_secs;
        seed = r.seed;
        reps = r.reps;
        ols_variance = r.ols_variance;
    }
    SimulationReport { rows, seed, reps, wall_secs: wall, ols_variance }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Text,
    Csv,
    Markdown,
}

impl FromStr for TableFormat {
    type Err = NetregError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(TableFormat::Text),
            "csv" => Ok(TableFormat::Csv),
            "markdown" => Ok(TableFormat::Markdown),
            other => Err(NetregError::validation(format!("unknown table format '{other}'"))),
        }
    }
}

/// Render the report: one block per (design, n) with metric rows
/// bias/MAE/rMAE/size and one column per estimator, 3 decimals.
pub fn emit_table(report: &SimulationReport, format: TableFormat) -> Result<String> {
    if report.rows.is_empty() {
        return Err(NetregError::validation("cannot render an empty report"));
    }
    if format == TableFormat::Csv {
        let mut out =
            String::from("design,n,estimator,bias,mae,rmae,size,failures\n");
        for r in &report.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.6},{:.6},{:.6},{}",
                r.design.name(), r.n, r.estimator, r.bias, r.mae, r.rmae, r.size, r.failures
            );
        }
        return Ok(out);
    }

    // group rows by (design, n) preserving first-seen order
    let mut groups: Vec<((Design, usize), Vec<&ReportRow>)> = Vec::new();
    for r in &report.rows {
        let key = (r.design, r.n);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    let metrics: [(&str, fn(&ReportRow) -> f64); 4] = [
        ("bias", |r| r.bias),
        ("MAE", |r| r.mae),
        ("rMAE", |r| r.rmae),
        ("size", |r| r.size),
    ];
    let mut out = String::new();
    for ((design, n), rows) in &groups {
        match format {
            TableFormat::Text => {
                let _ = writeln!(out, "{} n={} (R={}, seed={})", design.name(), n, report.reps, report.seed);
                let _ = write!(out, "{:>6}", "");
                for r in rows {
                    let _ = write!(out, "{:>9}", r.estimator);
                }
                out.push('\n');
                for (name, get) in &metrics {
                    let _ = write!(out, "{:>6}", name);
                    for r in rows {
                        let _ = write!(out, "{:>9.3}", get(r));
                    }
                    out.push('\n');
                }
                out.push('\n');
            }
            TableFormat::Markdown => {
                let _ = writeln!(out, "### {} n={}", design.name(), n);
                let _ = write!(out, "| metric |");
                for r in rows {
                    let _ = write!(out, " {} |", r.estimator);
                }
                out.push('\n');
                let _ = write!(out, "|---|");
                for _ in rows.iter() {
                    let _ = write!(out, "---|");
                }
                out.push('\n');
                for (name, get) in &metrics {
                    let _ = write!(out, "| {name} |");
                    for r in rows {
                        let _ = write!(out, " {:.3} |", get(r));
                    }
                    out.push('\n');
                }
                out.push('\n');
            }
            TableFormat::Csv => unreachable!(),
        }
    }
    Ok(out)
}

/// Parse a CSV table produced by [`emit_table`] back into report rows.
pub fn parse_csv_rows(text: &str) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if ln == 0 || line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 8 {
            return Err(NetregError::validation(format!(
                "csv line {} has {} fields, expected 8",
                ln + 1,
                parts.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| NetregError::validation(format!("bad number '{s}'")))
        };
        rows.push(ReportRow {
            design: parts[0].parse()?,
            n: parts[1]
                .parse()
                .map_err(|_| NetregError::validation("bad n"))?,
            estimator: parts[2].to_string(),
            bias: parse(parts[3])?,
            mae: parse(parts[4])?,
            rmae: parse(parts[5])?,
            size: parse(parts[6])?,
            failures: parts[7]
                .parse()
                .map_err(|_| NetregError::validation("bad failure count"))?,
        });
    }
    Ok(rows)
}
