//! Release gate: one pass/fail line per criterion.
//!
//! Criteria 1-5 are fast property checks against independent literal
//! oracles. Criteria 6-10 reproduce the simulation study at desk scale
//! (R = 500, seeds fixed) and check the study's headline numbers. Run as
//! a harness-free test binary so every line prints under `cargo test`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use netreg::codegree::{
    codegree_distance_sq, conditional_codegree_distance_sq, matching_distance_sq,
    DistanceMatrix,
};
use netreg::estimators::{
    bias_corrected_beta, lambda_hat, pairwise_difference, solve_bias_weights, PairBandwidth,
};
use netreg::inference::omega_hat;
use netreg::kernels::{adaptive_bandwidths, Kernel};
use netreg::netdata::{LinkCovariates, Network, NodeSample};
use netreg::simlab::{run_study, Design, DesignSpec, ReportRow};

const REPS: usize = 500;
const SEED: u64 = 7;

fn lcg(state: &mut u64) -> f64 {
    *state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    ((*state >> 11) as f64) / (1u64 << 53) as f64
}

fn random_network(n: usize, p: f64, state: &mut u64) -> Network {
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = if lcg(state) < p { 1.0 } else { 0.0 };
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    Network::new(d, false).unwrap()
}

// ---------------------------------------------------------------- 1

fn criterion_1() -> Result<String, String> {
    let mut state = 424242u64;
    for case in 0..50u32 {
        let n = 4 + (case as usize % 9);
        let net = random_network(n, 0.3 + 0.4 * lcg(&mut state), &mut state);
        let d = net.adjacency();
        let got = codegree_distance_sq(&net);
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for t in 0..n {
                    let mut inner = 0.0;
                    for s in 0..n {
                        inner += d[(t, s)] * (d[(i, s)] - d[(j, s)]);
                    }
                    acc += (inner / n as f64) * (inner / n as f64);
                }
                let want = acc / n as f64;
                if (got.get(i, j) - want).abs() > 1e-12 {
                    return Err(format!(
                        "case {case}: factorized d2[{i}][{j}] = {} vs triple sum {want}",
                        got.get(i, j)
                    ));
                }
            }
        }
    }
    // conditional variant against the literal quadruple loop at n <= 8
    for case in 0..10u32 {
        let n = 4 + (case as usize % 5);
        let net = random_network(n, 0.5, &mut state);
        let z = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                0.0
            } else {
                let v = ((i * 31 + j * 17 + case as usize) % 7) as f64 / 7.0;
                v
            }
        });
        let z = &z * 0.5 + &z.transpose() * 0.5;
        let zl = LinkCovariates::new(vec![z.clone()], false).unwrap();
        let hz = 0.6;
        let got = conditional_codegree_distance_sq(&net, &zl, Kernel::Epanechnikov, hz).unwrap();
        let d = net.adjacency();
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for t in 0..n {
                    let mut num = 0.0;
                    let mut den = 0.0;
                    for s in 0..n {
                        let gap =
                            ((z[(i, s)] - z[(t, s)]).abs() + (z[(j, s)] - z[(t, s)]).abs()) / hz;
                        let w = Kernel::Epanechnikov.eval(gap);
                        den += w;
                        num += d[(t, s)] * (d[(i, s)] - d[(j, s)]) * w;
                    }
                    if den > 0.0 {
                        acc += (num / den) * (num / den);
                    }
                }
                let want = (acc / n as f64).min(1.0);
                if (got.get(i, j) - want).abs() > 1e-12 {
                    return Err(format!(
                        "conditional case {case}: d2[{i}][{j}] = {} vs quadruple loop {want}",
                        got.get(i, j)
                    ));
                }
            }
        }
    }
    Ok("factorized distances equal literal loop oracles to 1e-12".into())
}

// ---------------------------------------------------------------- 2

/// Literal quintuple-sum evaluation of the three covariance summands.
fn omega_literal(
    sample: &NodeSample,
    beta: &DVector<f64>,
    net: &Network,
    d2: &DistanceMatrix,
    h1: f64,
    h2: f64,
    kernel: Kernel,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = sample.n();
    let k = sample.k();
    let u = &sample.y - &sample.x * beta;
    let d = net.adjacency();
    let delta = |i: usize, j: usize| -> DVector<f64> {
        DVector::from_fn(k, |a, _| (sample.x[(i, a)] - sample.x[(j, a)]) * (u[i] - u[j]))
    };
    let fhat = |i: usize, j: usize, t: usize| -> f64 {
        let mut acc = 0.0;
        for s1 in 0..n {
            for s2 in 0..n {
                if s1 != s2 {
                    acc += d[(t, s1)]
                        * d[(t, s2)]
                        * (d[(i, s1)] - d[(j, s1)])
                        * (d[(i, s2)] - d[(j, s2)]);
                }
            }
        }
        acc / n as f64
    };
    let fphat = |i: usize, j: usize, s1: usize| -> f64 {
        let mut acc = 0.0;
        for t in 0..n {
            for s2 in 0..n {
                if s2 != s1 {
                    acc += d[(t, s1)]
                        * d[(t, s2)]
                        * (d[(i, s1)] - d[(j, s1)])
                        * (d[(i, s2)] - d[(j, s2)]);
                }
            }
        }
        acc / n as f64
    };

    let mut t1 = DMatrix::zeros(k, k);
    for i in 0..n {
        for j1 in 0..n {
            for j2 in 0..n {
                if j1 == i || j2 == i {
                    continue;
                }
                let w = kernel.eval(d2.get(i, j1) / h1) * kernel.eval(d2.get(i, j2) / h2);
                if w != 0.0 {
                    t1 += delta(i, j1) * delta(i, j2).transpose() * w;
                }
            }
        }
    }
    t1 /= (n * n * n) as f64;

    let mut t2 = DMatrix::zeros(k, k);
    let mut t3 = DMatrix::zeros(k, k);
    for i1 in 0..n {
        for j1 in 0..n {
            if j1 == i1 {
                continue;
            }
            let w1 = kernel.d1(d2.get(i1, j1) / h1);
            if w1 == 0.0 {
                continue;
            }
            let d1v = delta(i1, j1);
            for i2 in 0..n {
                for j2 in 0..n {
                    if j2 == i2 {
                        continue;
                    }
                    let w2 = kernel.d1(d2.get(i2, j2) / h2);
                    if w2 == 0.0 {
                        continue;
                    }
                    let d2v = delta(i2, j2);
                    for t in 0..n {
                        let c1 = fhat(i1, j1, t) - d2.get(i1, j1);
                        let c2 = fhat(i2, j2, t) - d2.get(i2, j2);
                        t2 += &d1v * d2v.transpose() * (w1 * w2 * c1 * c2);
                        let p1 = fphat(i1, j1, t) - d2.get(i1, j1);
                        let p2 = fphat(i2, j2, t) - d2.get(i2, j2);
                        t3 += &d1v * d2v.transpose() * (w1 * w2 * p1 * p2);
                    }
                }
            }
        }
    }
    let n5h = (n as f64).powi(5) * h1 * h2;
    t2 /= n5h;
    t3 *= 4.0 / n5h;
    (t1, t2, t3)
}

fn criterion_2() -> Result<String, String> {
    let mut state = 9090u64;
    let mut cases = 0;
    while cases < 20 {
        let k = 1 + (cases % 2);
        let n = 6;
        let net = random_network(n, 0.5, &mut state);
        let d2 = codegree_distance_sq(&net);
        let x = DMatrix::from_fn(n, k, |_, _| lcg(&mut state) * 2.0 - 1.0);
        let y = DVector::from_fn(n, |_, _| lcg(&mut state) * 2.0 - 1.0);
        let sample = NodeSample::new(y, x, None).unwrap();
        let beta = DVector::from_fn(k, |a, _| 0.5 + 0.25 * a as f64);
        let got = omega_hat(
            &sample,
            &beta,
            &net,
            &d2,
            PairBandwidth::Scalar(0.8),
            PairBandwidth::Scalar(0.8),
            Kernel::Epanechnikov,
        )
        .map_err(|e| e.to_string())?;
        let (t1, t2, t3) = omega_literal(&sample, &beta, &net, &d2, 0.8, 0.8, Kernel::Epanechnikov);
        let rel = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
            let scale = b.iter().fold(1e-12f64, |m, &v| m.max(v.abs()));
            a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs() / scale).fold(0.0f64, f64::max)
        };
        for (name, a, b) in
            [("term1", &got.term1, &t1), ("term2", &got.term2, &t2), ("term3", &got.term3, &t3)]
        {
            let r = rel(a, b);
            if r > 1e-10 {
                return Err(format!("case {cases}: {name} relative error {r:.3e}"));
            }
        }
        cases += 1;
    }
    Ok("factorized covariance terms equal quintuple loops to relative 1e-10".into())
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Result<String, String> {
    let mut state = 1717u64;
    let beta0 = DVector::from_vec(vec![1.5, -0.75]);
    let mut checked = 0;
    let mut attempts = 0;
    while checked < 20 {
        attempts += 1;
        if attempts > 200 {
            return Err("could not find 20 draws with invertible Gamma".into());
        }
        let n = 14;
        let net = random_network(n, 0.5, &mut state);
        let d2 = matching_distance_sq(&net);
        let x = DMatrix::from_fn(n, 2, |_, _| lcg(&mut state) * 2.0 - 1.0);
        let y = &x * &beta0;
        let sample = NodeSample::new(y, x, None).unwrap();
        let Ok(fit4) = pairwise_difference(&sample, &d2, PairBandwidth::Scalar(0.8), Kernel::Epanechnikov)
        else {
            continue;
        };
        let spec = solve_bias_weights(2, &[1.0, 2.0], 1.0).unwrap();
        let Ok((beta5, _)) = bias_corrected_beta(&sample, &d2, 0.4, &spec, Kernel::Epanechnikov)
        else {
            continue;
        };
        let Ok(ab) = adaptive_bandwidths(&d2, 3) else { continue };
        let Ok(fit6) = pairwise_difference(&sample, &d2, PairBandwidth::from(&ab), Kernel::Epanechnikov)
        else {
            continue;
        };
        for (name, b) in [("beta4", &fit4.beta), ("beta5", &beta5), ("beta6", &fit6.beta)] {
            let err = (b - &beta0).amax();
            if err > 1e-10 {
                return Err(format!("draw {checked}: {name} off truth by {err:.3e}"));
            }
        }
        checked += 1;
    }
    Ok("noiseless exact model recovered by all three kernel estimators to 1e-10".into())
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Result<String, String> {
    let mut state = 5151u64;
    for case in 0..20u32 {
        let l = 1 + (case as usize % 4);
        let mut c = vec![1.0];
        while c.len() < l {
            let cand = 1.0 + lcg(&mut state) * 3.0;
            if c.iter().all(|&v: &f64| (v - cand).abs() > 1e-3) {
                c.push(cand);
            }
        }
        let theta = 0.5 + lcg(&mut state) * 2.5;
        let spec = solve_bias_weights(l, &c, theta).map_err(|e| e.to_string())?;
        let sum: f64 = spec.a.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(format!("case {case}: weights sum to {sum}"));
        }
        for m in 2..=l {
            let ortho: f64 = spec
                .a
                .iter()
                .zip(&spec.c)
                .map(|(a, cl)| a * cl.powf(m as f64 / theta))
                .sum();
            if ortho.abs() > 1e-12 {
                return Err(format!("case {case}: order-{m} moment {ortho:.3e} not annihilated"));
            }
        }
    }
    // L = 1 reduction: the combined estimate is exactly the plain fit
    let net = random_network(10, 0.5, &mut state);
    let d2 = matching_distance_sq(&net);
    let x = DMatrix::from_fn(10, 2, |_, _| lcg(&mut state) * 2.0 - 1.0);
    let y = DVector::from_fn(10, |_, _| lcg(&mut state) * 2.0 - 1.0);
    let sample = NodeSample::new(y, x, None).unwrap();
    let spec1 = solve_bias_weights(1, &[1.0], 1.0).map_err(|e| e.to_string())?;
    let (bar, parts) =
        bias_corrected_beta(&sample, &d2, 0.8, &spec1, Kernel::Epanechnikov).map_err(|e| e.to_string())?;
    if bar != parts[0].beta {
        return Err("L=1 combination differs from the plain fit".into());
    }
    Ok("weight identities hold to 1e-12; L=1 reduces to the plain fit exactly".into())
}

// ---------------------------------------------------------------- 5

fn apply_perm_net(net: &Network, p: &[usize]) -> Network {
    let n = net.n();
    let d = net.adjacency();
    let pd = DMatrix::from_fn(n, n, |i, j| d[(p[i], p[j])]);
    Network::new(pd, false).unwrap()
}

fn criterion_5() -> Result<String, String> {
    let mut state = 31337u64;
    let n = 12;
    let net = random_network(n, 0.5, &mut state);
    let x = DMatrix::from_fn(n, 2, |_, _| lcg(&mut state) * 2.0 - 1.0);
    let y = DVector::from_fn(n, |_, _| lcg(&mut state) * 2.0 - 1.0);
    let sample = NodeSample::new(y.clone(), x.clone(), None).unwrap();
    let d2 = matching_distance_sq(&net);

    // permutation equivariance of distances and of the pairwise estimate
    let p: Vec<usize> = (0..n).map(|i| (i * 5 + 3) % n).collect();
    let pnet = apply_perm_net(&net, &p);
    let pd2 = matching_distance_sq(&pnet);
    let pc2 = codegree_distance_sq(&pnet);
    let c2 = codegree_distance_sq(&net);
    for i in 0..n {
        for j in 0..n {
            if (pd2.get(i, j) - d2.get(p[i], p[j])).abs() > 1e-10
                || (pc2.get(i, j) - c2.get(p[i], p[j])).abs() > 1e-10
            {
                return Err(format!("distance not equivariant at ({i},{j})"));
            }
        }
    }
    let fit = pairwise_difference(&sample, &d2, PairBandwidth::Scalar(0.8), Kernel::Epanechnikov)
        .map_err(|e| e.to_string())?;
    let psample = NodeSample::new(
        DVector::from_fn(n, |i, _| y[p[i]]),
        DMatrix::from_fn(n, 2, |i, a| x[(p[i], a)]),
        None,
    )
    .unwrap();
    let pfit = pairwise_difference(&psample, &pd2, PairBandwidth::Scalar(0.8), Kernel::Epanechnikov)
        .map_err(|e| e.to_string())?;
    if (&fit.beta - &pfit.beta).amax() > 1e-10 {
        return Err("slope estimate changed under node relabeling".into());
    }

    // intercept-shift invariance: adding a constant to every regressor
    // column and to the outcome leaves the slope unchanged
    let shift_x = DMatrix::from_fn(n, 2, |i, a| x[(i, a)] + [3.25, -1.5][a]);
    let shift_y = DVector::from_fn(n, |i, _| y[i] + 2.0);
    let ssample = NodeSample::new(shift_y.clone(), shift_x, None).unwrap();
    let sfit = pairwise_difference(&ssample, &d2, PairBandwidth::Scalar(0.8), Kernel::Epanechnikov)
        .map_err(|e| e.to_string())?;
    if (&fit.beta - &sfit.beta).amax() > 1e-10 {
        return Err("slope estimate not invariant to location shifts".into());
    }

    // location pairing: shifting y by a constant shifts every observed
    // local-mean value by the same constant
    let lam = lambda_hat(&sample, &fit.beta, &d2, 0.8, Kernel::Epanechnikov)
        .map_err(|e| e.to_string())?;
    let shifted = NodeSample::new(shift_y, x.clone(), None).unwrap();
    let lam_s = lambda_hat(&shifted, &fit.beta, &d2, 0.8, Kernel::Epanechnikov)
        .map_err(|e| e.to_string())?;
    for i in 0..n {
        if lam.is_missing(i) {
            continue;
        }
        if (lam_s.values[i] - lam.values[i] - 2.0).abs() > 1e-10 {
            return Err(format!("local mean at node {i} did not track the outcome shift"));
        }
    }
    Ok("permutation equivariance, location invariance, and outcome pairing hold to 1e-10".into())
}

// ------------------------------------------------------- 6-10 shared

struct StudyGrid {
    rows: Vec<ReportRow>,
}

fn grid() -> &'static StudyGrid {
    static GRID: OnceLock<StudyGrid> = OnceLock::new();
    GRID.get_or_init(|| {
        let mut rows = Vec::new();
        for design in Design::all() {
            for n in [100usize, 200] {
                let spec = DesignSpec::table_defaults(design, n, REPS, SEED);
                let report = run_study(&spec).expect("study cell failed");
                rows.extend(report.rows);
            }
        }
        StudyGrid { rows }
    })
}

fn cell(rows: &[ReportRow], design: Design, est: &str, n: usize) -> Result<ReportRow, String> {
    rows.iter()
        .find(|r| r.design == design && r.estimator == est && r.n == n)
        .cloned()
        .ok_or_else(|| format!("missing row {design:?}/{est}/n={n}"))
}

fn within(label: &str, got: f64, target: f64, tol: f64) -> Result<(), String> {
    if (got - target).abs() <= tol {
        Ok(())
    } else {
        Err(format!("{label} = {got:.3} outside {target} +- {tol}"))
    }
}

fn criterion_6() -> Result<String, String> {
    let rows = &grid().rows;
    let b2 = cell(rows, Design::Blockmodel, "beta2", 100)?;
    let b4 = cell(rows, Design::Blockmodel, "beta4", 100)?;
    within("blockmodel n=100 beta2 bias", b2.bias, 0.829, 0.05)?;
    within("blockmodel n=100 beta4 bias", b4.bias, 0.021, 0.05)?;
    within("blockmodel n=100 beta4 MAE", b4.mae, 0.089, 0.03)?;
    if !(0.02..=0.10).contains(&b4.size) {
        return Err(format!("blockmodel n=100 beta4 size = {:.3} outside [0.02,0.10]", b4.size));
    }
    Ok(format!(
        "blockmodel n=100: beta2 bias {:.3}, beta4 bias {:.3}, MAE {:.3}, size {:.3}",
        b2.bias, b4.bias, b4.mae, b4.size
    ))
}

fn criterion_7() -> Result<String, String> {
    let rows = &grid().rows;
    let b4 = cell(rows, Design::Degree, "beta4", 200)?;
    let b5 = cell(rows, Design::Degree, "beta5", 200)?;
    within("degree n=200 beta4 bias", b4.bias, 0.290, 0.06)?;
    within("degree n=200 beta5 bias", b5.bias, 0.200, 0.06)?;
    if b5.bias >= b4.bias {
        return Err(format!(
            "bias correction did not help: beta5 {:.3} >= beta4 {:.3}",
            b5.bias, b4.bias
        ));
    }
    Ok(format!("degree n=200: beta4 bias {:.3}, beta5 bias {:.3}", b4.bias, b5.bias))
}

fn criterion_8() -> Result<String, String> {
    let rows = &grid().rows;
    let b2 = cell(rows, Design::Homophily, "beta2", 200)?;
    let b3 = cell(rows, Design::Homophily, "beta3", 200)?;
    let b5 = cell(rows, Design::Homophily, "beta5", 200)?;
    within("homophily n=200 beta2 bias", b2.bias, 0.503, 0.05)?;
    within("homophily n=200 beta5 bias", b5.bias, 0.039, 0.05)?;
    within("homophily n=200 beta3 bias", b3.bias, 0.095, 0.05)?;
    Ok(format!(
        "homophily n=200: beta2 bias {:.3}, beta3 bias {:.3}, beta5 bias {:.3}",
        b2.bias, b3.bias, b5.bias
    ))
}

fn criterion_9() -> Result<String, String> {
    let rows = &grid().rows;
    let mut checked = 0;
    for design in Design::all() {
        for n in [100usize, 200] {
            for est in ["beta4", "beta5", "beta6"] {
                let row = cell(rows, design, est, n)?;
                if !(0.01..=0.15).contains(&row.size) {
                    return Err(format!(
                        "{design:?} {est} n={n} size = {:.3} outside [0.01,0.15]",
                        row.size
                    ));
                }
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} pairwise-estimator size rows all inside [0.01,0.15]"))
}

fn criterion_10() -> Result<String, String> {
    let rows = &grid().rows;
    for row in rows {
        if row.estimator == "beta1" && row.rmae != 1.0 {
            return Err(format!(
                "{:?} n={} beta1 rMAE = {} (must be exactly 1)",
                row.design, row.n, row.rmae
            ));
        }
    }
    Ok("rMAE of the infeasible baseline is exactly 1 in every row".into())
}

// ---------------------------------------------------------------- main

fn main() {
    let criteria: [(u32, &str, fn() -> Result<String, String>); 10] = [
        (1, "codegree oracle equivalence", criterion_1),
        (2, "covariance oracle equivalence", criterion_2),
        (3, "exact-model recovery", criterion_3),
        (4, "bias-weight identities", criterion_4),
        (5, "invariance suite", criterion_5),
        (6, "blockmodel table, n=100", criterion_6),
        (7, "degree table, n=200", criterion_7),
        (8, "homophily table, n=200", criterion_8),
        (9, "size sanity across designs", criterion_9),
        (10, "normalized baseline MAE", criterion_10),
    ];
    let mut failed = 0;
    for (id, name, f) in criteria {
        match catch_unwind(AssertUnwindSafe(f)) {
            Ok(Ok(detail)) => println!("PASS criterion {id}: {name} — {detail}"),
            Ok(Err(detail)) => {
                failed += 1;
                println!("FAIL criterion {id}: {name} — {detail}");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL criterion {id}: {name} — panicked");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
