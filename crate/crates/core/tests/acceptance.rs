//! Acceptance suite: runs `configs/acceptance.toml` with one worker and
//! again with three, checks every criterion against pinned tolerances and
//! independent oracles, and prints one line per criterion.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use pssmp::entrance::ssel_estimate;
use pssmp::exp_functional::SampleControl;
use pssmp::runner::{run_config, ExperimentConfig, RunSummary};
use pssmp::stats::{ks_vs_cdf, TestReport};
use pssmp::{Error, LevyTriplet, Streams};

const CONFIG: &str = include_str!("../../../configs/acceptance.toml");

struct Verdict {
    ok: bool,
    detail: String,
}

fn verdict(ok: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        ok,
        detail: detail.into(),
    }
}

fn rows<'a>(s: &'a RunSummary, check: &str) -> Vec<&'a TestReport> {
    s.rows.iter().filter(|r| r.check == check).collect()
}

fn param<'a>(r: &'a TestReport, key: &str) -> &'a str {
    r.params.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str()).unwrap_or("")
}

/// Every row passes, there are `count` of them, and each was judged
/// against `threshold`.
fn all_pass(s: &RunSummary, check: &str, count: usize, threshold: f64) -> Verdict {
    let rs = rows(s, check);
    let worst = rs.iter().map(|r| r.statistic).fold(0.0, f64::max);
    let pinned = rs.iter().all(|r| (r.threshold - threshold).abs() <= 1e-12 * threshold);
    verdict(
        rs.len() == count && pinned && rs.iter().all(|r| r.pass),
        format!("{} rows, worst statistic {worst:.3e} vs {threshold:.3e}", rs.len()),
    )
}

/// `P(2/G ≤ y)` for `G ~ Gamma(3, 1)`, i.e. `P(G ≥ 2/y) = e^{-u}(1 + u + u²/2)`.
fn two_over_gamma3_cdf(y: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    let u = 2.0 / y;
    (-u).exp() * (1.0 + u + 0.5 * u * u)
}

/// For index 1/2, `S = 1/(2Z²)` with `Z` standard normal, so
/// `P(S > q² S') = P(|Z'/Z| > q) = 1 - (2/π) arctan q`.
fn rho_half(q: f64) -> f64 {
    1.0 - 2.0 / PI * q.atan()
}

fn criteria(cfg: &ExperimentConfig, s: &RunSummary, dir: &Path) -> Vec<(&'static str, Verdict)> {
    let mut out = Vec::new();

    out.push(("Lamperti roundtrip on 100 mixed paths", all_pass(s, "roundtrip", 1, 1e-9)));

    let flows = all_pass(s, "drift_flow", 3, 1e-9);
    let di = rows(s, "discrete_I");
    let di_ok = di.len() == 2
        && di.iter().all(|r| {
            let h: f64 = param(r, "h").parse().unwrap();
            // Left-point sum of e^{-s}: h / (1 - e^{-h}).
            let exact = h / (1.0 - (-h).exp());
            r.pass && (r.lhs - exact).abs() < 1e-9 && (r.lhs - 1.0).abs() <= 2.0 * h
        });
    let order = rows(s, "discrete_I_order");
    let order_ok = order.len() == 1 && (order[0].lhs / 10.0 - 1.0).abs() <= 0.05;
    out.push((
        "closed-form flows and first-order discrete functional",
        verdict(
            flows.ok && di_ok && order_ok,
            format!("{}; error ratio {:.4}", flows.detail, order.first().map_or(f64::NAN, |r| r.lhs)),
        ),
    ));

    let idx = cfg.checks.iter().position(|c| c.check.name() == "brownian_functional").unwrap();
    let dump = fs::read_to_string(dir.join(format!("{idx:02}_brownian_functional.csv"))).unwrap();
    let draws: Vec<f64> = dump.lines().skip(1).map(|l| l.parse().unwrap()).collect();
    let ks = ks_vs_cdf(&draws, two_over_gamma3_cdf).unwrap();
    let bf = all_pass(s, "brownian_functional", 1, 0.01);
    out.push((
        "Brownian functional against 2/Gamma(3)",
        verdict(bf.ok && draws.len() == 200_000 && ks < 0.01, format!("KS {ks:.4e} at N = {}", draws.len())),
    ));

    let rho = rows(s, "rho");
    let rho_ok = rho.len() == 3
        && rho.iter().all(|r| {
            let q: f64 = param(r, "q").parse().unwrap();
            let oracle = rho_half(q);
            let tol = 3.0 * (oracle * (1.0 - oracle) / r.n as f64).sqrt() + 0.005;
            r.n == 100_000 && (r.rhs - oracle).abs() < 1e-12 && (r.lhs - oracle).abs() <= tol
        })
        && (rho_half(0.25) - 0.84404).abs() < 5e-6;
    let detail: Vec<String> = rho.iter().map(|r| format!("{:.4}/{:.5}", r.lhs, r.rhs)).collect();
    out.push(("excursion sign probability", verdict(rho_ok, detail.join(", "))));

    let surv = rows(s, "embed_hill_survivors");
    let all = rows(s, "embed_hill_all");
    let embed_ok = surv.len() == 1
        && all.len() == 1
        && surv[0].n >= 20_000
        && (surv[0].lhs - surv[0].rhs).abs() <= 0.15 * surv[0].rhs
        && (all[0].lhs - 0.5).abs() <= 0.1 * 0.5
        && (surv[0].rhs - 0.5 * rho_half(0.25)).abs() < 1e-12;
    out.push((
        "embedding tail indices",
        verdict(
            embed_ok,
            format!(
                "survivors {:.4} vs {:.4} ({} lengths), all {:.4} vs 0.5",
                surv[0].lhs, surv[0].rhs, surv[0].n, all[0].lhs
            ),
        ),
    ));

    out.push(("scaling identity at 10 random (c, s)", all_pass(s, "scaling", 10, 1e-12)));
    out.push(("semigroup property, two instances, three functions", all_pass(s, "semigroup", 6, 3.0)));

    let pareto = all_pass(s, "pareto", 1, 0.02);
    let median = rows(s, "pareto")[0].lhs;
    out.push((
        "Pareto factorization",
        verdict(pareto.ok, format!("{}; median {median:.4} vs 1", pareto.detail)),
    ));
    out.push(("Beta embedding", all_pass(s, "beta_embed", 1, 0.02)));
    out.push(("jumping-in representation, CV of ratios", all_pass(s, "jumpin", 1, 0.05)));

    let qs = rows(s, "quasi_stationary");
    let qs_ok = qs.len() == 2
        && qs.iter().all(|r| {
            let se: f64 = param(r, "se").parse().unwrap();
            let target = param(r, "gamma").parse::<f64>().unwrap() / param(r, "alpha").parse::<f64>().unwrap();
            r.pass && (r.lhs - target).abs() <= 3.0 * se
        });
    let detail: Vec<String> = qs.iter().map(|r| format!("{:.4} ± {}", r.lhs, param(r, "se"))).collect();
    out.push(("quasi-stationary decay rate", verdict(qs_ok, detail.join(", "))));

    // Ψ(3) = -3 + 9/2 > 0 for ξ = W - t.
    let t = LevyTriplet::new(0.0, -1.0, 1.0);
    let psi = t.laplace_exponent(3.0).unwrap();
    let refused = matches!(
        ssel_estimate(&t, 3.0, 1.0, 1.0, 10, Streams::new(1), SampleControl::default()),
        Err(Error::Precondition(_))
    );
    let gate = all_pass(s, "nonexistence", 1, 0.5);
    out.push((
        "refusal above the Cramér boundary",
        verdict(gate.ok && refused && (psi - 1.5).abs() < 1e-12, format!("Ψ(3) = {psi}")),
    ));

    out.push(("multi-self-similar pathwise scaling", all_pass(s, "multi_scaling", 1, 1e-9)));
    let tilde = all_pass(s, "resolvent_tilde", 1, 3.0);
    let multi = all_pass(s, "resolvent_multi", 1, 3.0);
    out.push((
        "resolvent identity, bivariate and multi",
        verdict(tilde.ok && multi.ok, format!("{}; {}", tilde.detail, multi.detail)),
    ));
    out
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut cfg = ExperimentConfig::from_toml(CONFIG).expect("acceptance config");
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    cfg.workers = 1;
    let a = run_config(&cfg, dir_a.path()).expect("first run");
    let first = start.elapsed();
    cfg.workers = 3;
    let b = run_config(&cfg, dir_b.path()).expect("second run");

    let mut results = criteria(&cfg, &a, dir_a.path());
    let report_a = fs::read(&a.report_path).unwrap();
    let report_b = fs::read(&b.report_path).unwrap();
    results.push((
        "report.csv identical for 1 and 3 workers",
        verdict(
            report_a == report_b && a.errors.is_empty(),
            format!("{} bytes, {} rows", report_a.len(), a.rows.len()),
        ),
    ));

    let mut failed = 0;
    for (i, (name, v)) in results.iter().enumerate() {
        println!("criterion {:>2} {}: {} ({})", i + 1, if v.ok { "PASS" } else { "FAIL" }, name, v.detail);
        failed += usize::from(!v.ok);
    }
    let extra_fail: Vec<&TestReport> = a.rows.iter().filter(|r| !r.pass).collect();
    for r in &extra_fail {
        println!("failed row: {}", r.csv_row());
    }
    println!(
        "{} of {} criteria passed; suite took {:.0?} per run, {:.0?} total",
        results.len() - failed,
        results.len(),
        first,
        start.elapsed()
    );
    if failed == 0 && extra_fail.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
