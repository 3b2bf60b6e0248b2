//! Command-line front end: `distances`, `estimate`, `simulate`, `peer`.
//!
//! Exit codes are stable: 0 success, 1 validation/usage failure, 2
//! numerical failure (e.g. a singular Γ̂).

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::codegree::{
    codegree_distance_sq, conditional_codegree_distance_sq, matching_distance_sq,
    max_codegree_distance_sq,
    DistanceMatrix,
};
use crate::estimators::{
    bias_corrected_beta, iv_three_step, lambda_hat, pairwise_difference, solve_bias_weights,
    PairBandwidth,
};
use crate::inference::{
    beta_variance, bias_corrected_variance, confidence_interval, finite_support_variance,
    omega_hat, undersmoothing_diagnostic, OmegaComponents, VarianceResult,
};
use crate::kernels::{adaptive_bandwidths, BandwidthRule, Kernel};
use crate::netdata::{load_matrix, load_network, load_nodes, save_matrix, LinkCovariates, NodeSample, WeightedNetwork};
use crate::peerfx::{build_peer_regressors, build_peer_regressors_kz, peer_lambda, peer_theta};
use crate::simlab::{
    emit_table, gen_replication, merge_reports, run_study, Design, DesignSpec, TableFormat,
};
use crate::{NetregError, Result};

#[derive(Debug, Parser)]
#[command(name = "netreg", version, about = "Codegree-matching estimators for network regressions")]
pub struct Cli {
    /// Worker threads (falls back to NETREG_THREADS, then all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute a squared network-distance matrix and write it as CSV.
    Distances(DistancesArgs),
    /// Fit the pairwise-difference estimator and report inference as JSON.
    Estimate(EstimateArgs),
    /// Run the Monte Carlo study and emit a results table.
    Simulate(SimulateArgs),
    /// Estimate linear-in-means peer effects.
    Peer(PeerArgs),
}

#[derive(Debug, Args)]
pub struct DistancesArgs {
    /// Adjacency CSV (n x n, entries 0/1).
    #[arg(long)]
    pub adjacency: Option<PathBuf>,
    /// Skip the symmetry check for directed networks.
    #[arg(long)]
    pub directed: bool,
    /// Comma-separated weighted layer CSVs (maximum-form distance).
    #[arg(long, value_delimiter = ',')]
    pub weighted: Vec<PathBuf>,
    /// Comma-separated link-covariate CSVs (conditional distance).
    #[arg(long = "link-cov", value_delimiter = ',')]
    pub link_cov: Vec<PathBuf>,
    /// Covariate bandwidth for the conditional distance.
    #[arg(long)]
    pub hz: Option<f64>,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub adjacency: PathBuf,
    #[arg(long)]
    pub nodes: PathBuf,
    #[arg(long)]
    pub directed: bool,
    #[arg(long = "bandwidth-constant", default_value_t = 0.1)]
    pub bandwidth_constant: f64,
    #[arg(long = "bandwidth-exponent", default_value_t = 1.0 / 9.0)]
    pub bandwidth_exponent: f64,
    /// Bias correction "L,c2,...,cL,theta", e.g. "2,2,1".
    #[arg(long = "bias-correct")]
    pub bias_correct: Option<String>,
    /// Per-agent bandwidths with this many matches per agent.
    #[arg(long)]
    pub adaptive: Option<usize>,
    /// Use these z columns (0-based) of the node file as instruments.
    #[arg(long = "iv", value_delimiter = ',')]
    pub iv: Option<Vec<usize>>,
    #[arg(long, default_value = "general")]
    pub variance: String,
    #[arg(long = "ci-level", default_value_t = 0.95)]
    pub ci_level: f64,
    /// Where to write the per-agent λ̂ CSV.
    #[arg(long = "lambda-out", default_value = "lambda.csv")]
    pub lambda_out: PathBuf,
    /// JSON report path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub design: Option<String>,
    /// Sample sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [100usize])]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 500)]
    pub reps: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Run all three designs at n in {50,100,200}.
    #[arg(long = "all-tables")]
    pub all_tables: bool,
    #[arg(long, default_value = "csv")]
    pub format: String,
    /// Write the first replication of the first cell (adjacency.csv,
    /// nodes.csv) into this directory for downstream `estimate` runs.
    #[arg(long = "dump-rep")]
    pub dump_rep: Option<PathBuf>,
    /// Output path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PeerArgs {
    #[arg(long)]
    pub adjacency: PathBuf,
    #[arg(long)]
    pub nodes: PathBuf,
    #[arg(long)]
    pub directed: bool,
    /// "link-cov" (conditional distance) or "agent-z" (kernel-weighted
    /// peer means on the plain distance).
    #[arg(long, default_value = "link-cov")]
    pub variant: String,
    /// Comma-separated link-covariate CSVs (link-cov variant).
    #[arg(long = "link-cov", value_delimiter = ',')]
    pub link_cov: Vec<PathBuf>,
    #[arg(long)]
    pub hz: Option<f64>,
    #[arg(long = "bandwidth-constant", default_value_t = 0.1)]
    pub bandwidth_constant: f64,
    #[arg(long = "bandwidth-exponent", default_value_t = 1.0 / 9.0)]
    pub bandwidth_exponent: f64,
    #[arg(long = "lambda-out", default_value = "peer_lambda.csv")]
    pub lambda_out: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parse argv and execute; returns the process exit code.
pub fn run_from_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    init_threads(cli.threads);
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                NetregError::Numerical(_) => 2,
                _ => 1,
            }
        }
    }
}

fn init_threads(flag: Option<usize>) {
    let n = flag.or_else(|| {
        std::env::var("NETREG_THREADS").ok().and_then(|v| v.parse().ok())
    });
    if let Some(n) = n {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn write_or_print(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(NetregError::from),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn matrix_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Distances(a) => run_distances(a),
        Command::Estimate(a) => run_estimate(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Peer(a) => run_peer(a),
    }
}

fn run_distances(a: DistancesArgs) -> Result<()> {
    let modes = [!a.weighted.is_empty(), !a.link_cov.is_empty()];
    if modes.iter().filter(|&&m| m).count() > 1 {
        return Err(NetregError::validation(
            "--weighted and --link-cov are mutually exclusive",
        ));
    }
    let d2: DistanceMatrix = if !a.weighted.is_empty() {
        let layers = a
            .weighted
            .iter()
            .map(load_matrix)
            .collect::<Result<Vec<_>>>()?;
        max_codegree_distance_sq(&WeightedNetwork::new(layers)?)?
    } else {
        let adjacency = a
            .adjacency
            .as_ref()
            .ok_or_else(|| NetregError::validation("--adjacency is required"))?;
        let net = load_network(adjacency, a.directed)?;
        if a.link_cov.is_empty() {
            codegree_distance_sq(&net)
        } else {
            let hz = a
                .hz
                .ok_or_else(|| NetregError::validation("--hz is required with --link-cov"))?;
            let layers = a
                .link_cov
                .iter()
                .map(load_matrix)
                .collect::<Result<Vec<_>>>()?;
            let zl = LinkCovariates::new(layers, a.directed)?;
            conditional_codegree_distance_sq(&net, &zl, Kernel::Epanechnikov, hz)?
        }
    };
    match &a.out {
        Some(path) => save_matrix(path, d2.matrix()),
        None => {
            print!("{}", matrix_csv(d2.matrix()));
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct ConfigEcho {
    kernel_family: &'static str,
    bandwidth_constant: f64,
    bandwidth_exponent: f64,
    adaptive_match_count: Option<usize>,
}

#[derive(Serialize)]
struct DiagnosticSummary {
    min: f64,
    median: f64,
    max: f64,
}

#[derive(Serialize)]
struct EstimateReport {
    beta: Vec<f64>,
    se: Vec<f64>,
    ci: Vec<[f64; 2]>,
    ci_level: f64,
    variance: Vec<Vec<f64>>,
    variance_method: String,
    h: f64,
    n_active_pairs: usize,
    lambda_path: String,
    undersmoothing: DiagnosticSummary,
    config: ConfigEcho,
}

fn summarize(diag: &DVector<f64>) -> DiagnosticSummary {
    let mut vals: Vec<f64> = diag.iter().copied().filter(|v| v.is_finite()).collect();
    vals.sort_by(|x, y| x.partial_cmp(y).unwrap());
    if vals.is_empty() {
        return DiagnosticSummary { min: f64::NAN, median: f64::NAN, max: f64::NAN };
    }
    DiagnosticSummary {
        min: vals[0],
        median: vals[vals.len() / 2],
        max: vals[vals.len() - 1],
    }
}

fn parse_bias_correct(text: &str) -> Result<(usize, Vec<f64>, f64)> {
    let parts: Vec<&str> = text.split(',').collect();
    let parse = |s: &str| -> Result<f64> {
        s.trim()
            .parse()
            .map_err(|_| NetregError::validation(format!("bad --bias-correct number '{s}'")))
    };
    let l: usize = parts[0]
        .trim()
        .parse()
        .map_err(|_| NetregError::validation("bad --bias-correct order"))?;
    if parts.len() != l + 1 {
        return Err(NetregError::validation(
            "--bias-correct expects L, then c2..cL, then theta",
        ));
    }
    let mut c = vec![1.0];
    for p in &parts[1..l] {
        c.push(parse(p)?);
    }
    let theta = parse(parts[l])?;
    Ok((l, c, theta))
}

fn run_estimate(a: EstimateArgs) -> Result<()> {
    if a.adaptive.is_some() && a.bias_correct.is_some() {
        return Err(NetregError::validation(
            "--adaptive cannot be combined with --bias-correct",
        ));
    }
    let rule = BandwidthRule::new(a.bandwidth_constant, a.bandwidth_exponent)?;
    let net = load_network(&a.adjacency, a.directed)?;
    let sample = load_nodes(&a.nodes)?;
    if sample.n() != net.n() {
        return Err(NetregError::validation("adjacency and node file sizes differ"));
    }
    let d2 = matching_distance_sq(&net);
    let n = net.n();
    let h = rule.value(n);
    let kernel = Kernel::Epanechnikov;

    let finite_support = match a.variance.as_str() {
        "general" => false,
        "finite-support" => true,
        other => {
            return Err(NetregError::validation(format!(
                "unknown variance method '{other}'"
            )))
        }
    };
    let variance_of = |gamma: &DMatrix<f64>, om: &OmegaComponents| -> Result<VarianceResult> {
        if finite_support {
            finite_support_variance(gamma, om, n)
        } else {
            beta_variance(gamma, om, n)
        }
    };

    let (beta, var, h_used, active, lambda, sample_for_diag): (
        DVector<f64>,
        VarianceResult,
        f64,
        usize,
        crate::estimators::LambdaEstimate,
        NodeSample,
    ) = if let Some(zcols) = &a.iv {
        let z = sample
            .z
            .as_ref()
            .ok_or_else(|| NetregError::validation("node file has no z columns for --iv"))?;
        for &c in zcols {
            if c >= z.ncols() {
                return Err(NetregError::validation(format!(
                    "z column {c} out of range (file has {})",
                    z.ncols()
                )));
            }
        }
        let zsel = DMatrix::from_fn(n, zcols.len(), |i, c| z[(i, zcols[c])]);
        let iv_sample = NodeSample::new(sample.y.clone(), sample.x.clone(), Some(zsel))?;
        let (fit, lam) =
            iv_three_step(&iv_sample, &d2, PairBandwidth::Scalar(h), h, kernel)?;
        let om = omega_hat(
            &sample,
            &fit.beta,
            &net,
            &d2,
            PairBandwidth::Scalar(h),
            PairBandwidth::Scalar(h),
            kernel,
        )?;
        let var = variance_of(&fit.gamma_hat, &om)?;
        (fit.beta.clone(), var, h, fit.n_active_pairs, lam, sample.clone())
    } else if let Some(m) = a.adaptive {
        let ab = adaptive_bandwidths(&d2, m)?;
        let hb = PairBandwidth::from(&ab);
        let fit = pairwise_difference(&sample, &d2, hb.clone(), kernel)?;
        let om = omega_hat(&sample, &fit.beta, &net, &d2, hb.clone(), hb, kernel)?;
        let var = variance_of(&fit.gamma_hat, &om)?;
        let lam = lambda_hat(&sample, &fit.beta, &d2, h, kernel)?;
        (fit.beta.clone(), var, h, fit.n_active_pairs, lam, sample.clone())
    } else if let Some(spec_text) = &a.bias_correct {
        let (l, c, theta) = parse_bias_correct(spec_text)?;
        let bspec = solve_bias_weights(l, &c, theta)?;
        let (beta_bar, comps) = bias_corrected_beta(&sample, &d2, h, &bspec, kernel)?;
        let mut cross: Vec<Vec<OmegaComponents>> = Vec::with_capacity(l);
        for l1 in 0..l {
            let mut row = Vec::with_capacity(l);
            for l2 in 0..l {
                row.push(omega_hat(
                    &sample,
                    &beta_bar,
                    &net,
                    &d2,
                    PairBandwidth::Scalar(bspec.c[l1] * h),
                    PairBandwidth::Scalar(bspec.c[l2] * h),
                    kernel,
                )?);
            }
            cross.push(row);
        }
        let var = bias_corrected_variance(&comps, &bspec, &cross, n)?;
        let lam = lambda_hat(&sample, &beta_bar, &d2, h, kernel)?;
        let active = comps[0].n_active_pairs;
        (beta_bar, var, h, active, lam, sample.clone())
    } else {
        let fit = pairwise_difference(&sample, &d2, PairBandwidth::Scalar(h), kernel)?;
        let om = omega_hat(
            &sample,
            &fit.beta,
            &net,
            &d2,
            PairBandwidth::Scalar(h),
            PairBandwidth::Scalar(h),
            kernel,
        )?;
        let var = variance_of(&fit.gamma_hat, &om)?;
        let lam = lambda_hat(&sample, &fit.beta, &d2, h, kernel)?;
        (fit.beta.clone(), var, h, fit.n_active_pairs, lam, sample.clone())
    };

    let ci = confidence_interval(&beta, &var, a.ci_level)?;
    let diag = undersmoothing_diagnostic(&sample_for_diag, &beta, &d2, h, kernel)?;

    let lam_col = DMatrix::from_column_slice(lambda.values.len(), 1, lambda.values.as_slice());
    save_matrix(&a.lambda_out, &lam_col)?;

    let report = EstimateReport {
        beta: beta.iter().copied().collect(),
        se: var.se.iter().copied().collect(),
        ci: ci.iter().map(|&(lo, hi)| [lo, hi]).collect(),
        ci_level: a.ci_level,
        variance: (0..var.v.nrows())
            .map(|i| (0..var.v.ncols()).map(|j| var.v[(i, j)]).collect())
            .collect(),
        variance_method: a.variance.clone(),
        h: h_used,
        n_active_pairs: active,
        lambda_path: a.lambda_out.display().to_string(),
        undersmoothing: summarize(&diag),
        config: ConfigEcho {
            kernel_family: "epanechnikov",
            bandwidth_constant: a.bandwidth_constant,
            bandwidth_exponent: a.bandwidth_exponent,
            adaptive_match_count: a.adaptive,
        },
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| NetregError::validation(e.to_string()))?;
    write_or_print(&a.out, &format!("{json}\n"))
}

fn run_simulate(a: SimulateArgs) -> Result<()> {
    let format: TableFormat = a.format.parse()?;
    let grid: Vec<(Design, usize)> = if a.all_tables {
        Design::all()
            .into_iter()
            .flat_map(|d| [50usize, 100, 200].into_iter().map(move |n| (d, n)))
            .collect()
    } else {
        let design: Design = a
            .design
            .as_deref()
            .ok_or_else(|| NetregError::validation("--design or --all-tables is required"))?
            .parse()?;
        a.n.iter().map(|&n| (design, n)).collect()
    };
    if let Some(dir) = &a.dump_rep {
        std::fs::create_dir_all(dir)?;
        let (design, n) = grid[0];
        let spec = DesignSpec::table_defaults(design, n, a.reps, a.seed);
        let (net, sample, _) = gen_replication(&spec, 0)?;
        save_matrix(dir.join("adjacency.csv"), net.adjacency())?;
        let mut text = String::from("y");
        for c in 0..sample.k() {
            text.push_str(&format!(",x{}", c + 1));
        }
        text.push('\n');
        for i in 0..sample.n() {
            text.push_str(&format!("{}", sample.y[i]));
            for c in 0..sample.k() {
                text.push_str(&format!(",{}", sample.x[(i, c)]));
            }
            text.push('\n');
        }
        std::fs::write(dir.join("nodes.csv"), text)?;
    }
    let mut reports = Vec::new();
    for (design, n) in grid {
        eprintln!("running {} n={} R={}", design.name(), n, a.reps);
        let spec = DesignSpec::table_defaults(design, n, a.reps, a.seed);
        reports.push(run_study(&spec)?);
    }
    let merged = merge_reports(reports);
    let rendered = emit_table(&merged, format)?;
    write_or_print(&a.out, &rendered)
}

#[derive(Serialize)]
struct PeerReport {
    theta: Vec<f64>,
    standard_errors: Option<Vec<f64>>,
    note: String,
    n_active_pairs: usize,
    lambda_path: String,
}

fn run_peer(a: PeerArgs) -> Result<()> {
    let net = load_network(&a.adjacency, a.directed)?;
    let sample = load_nodes(&a.nodes)?;
    if sample.n() != net.n() {
        return Err(NetregError::validation("adjacency and node file sizes differ"));
    }
    let rule = BandwidthRule::new(a.bandwidth_constant, a.bandwidth_exponent)?;
    let h = rule.value(net.n());
    let kernel = Kernel::Epanechnikov;

    let (reg, d2) = match a.variant.as_str() {
        "link-cov" => {
            if a.link_cov.is_empty() {
                return Err(NetregError::validation(
                    "--link-cov paths are required for the link-cov variant",
                ));
            }
            let hz = a
                .hz
                .ok_or_else(|| NetregError::validation("--hz is required"))?;
            let layers = a
                .link_cov
                .iter()
                .map(load_matrix)
                .collect::<Result<Vec<_>>>()?;
            let zl = LinkCovariates::new(layers, a.directed)?;
            let d2 = conditional_codegree_distance_sq(&net, &zl, kernel, hz)?;
            (build_peer_regressors(&net, &sample)?, d2)
        }
        "agent-z" => {
            let hz = a
                .hz
                .ok_or_else(|| NetregError::validation("--hz is required"))?;
            let d2 = codegree_distance_sq(&net);
            (build_peer_regressors_kz(&net, &sample, kernel, hz)?, d2)
        }
        other => {
            return Err(NetregError::validation(format!(
                "unknown variant '{other}' (expected link-cov or agent-z)"
            )))
        }
    };

    let fit = peer_theta(&reg, &sample.y, &d2, PairBandwidth::Scalar(h), kernel)?;
    let lam = peer_lambda(&reg, &sample.y, &fit.beta, &d2, h, kernel)?;
    let lam_col = DMatrix::from_column_slice(lam.values.len(), 1, lam.values.as_slice());
    save_matrix(&a.lambda_out, &lam_col)?;

    let report = PeerReport {
        theta: fit.beta.iter().copied().collect(),
        standard_errors: None,
        note: "standard errors for the peer-effects coefficients are unavailable; \
               only consistency is established"
            .to_string(),
        n_active_pairs: fit.n_active_pairs,
        lambda_path: a.lambda_out.display().to_string(),
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| NetregError::validation(e.to_string()))?;
    write_or_print(&a.out, &format!("{json}\n"))
}
