//! Checks against exact answers: the Lamperti roundtrip, closed-form
//! deterministic flows, the Brownian exponential functional, refusal
//! outside the existence region and exact scaling identities.

use rand::Rng;
use statrs::function::gamma::gamma_ur;

use crate::entrance::{scaling_check, ssel_estimate, CheckContext, EntranceSampler};
use crate::error::{invalid, Error, Result};
use crate::exp_functional::{discrete_functional, ExpSampler, SampleControl};
use crate::extensions::multi::{multi_scaling_deviation, MultiSpec};
use crate::jump_law::JumpLaw;
use crate::lamperti::{lamperti_forward_with, lamperti_inverse, ClockRule};
use crate::levy::{LevyPath, LevyTriplet};
use crate::rng::try_par_replicas;
use crate::stats::{self, TestReport};
use crate::test_fn::TestFunction;

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn log_uniform<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    (lo.ln() + (hi.ln() - lo.ln()) * rng.random::<f64>()).exp()
}

/// A triplet from a small family mixing diffusion, both jump signs and
/// killing.
fn random_triplet<R: Rng + ?Sized>(rng: &mut R) -> LevyTriplet {
    let b = rng.random_range(-1.5..1.5);
    match rng.random_range(0..4) {
        0 => LevyTriplet::new(0.0, b, rng.random_range(0.1..2.0)),
        1 => LevyTriplet::new(rng.random_range(0.0..1.0), b, 0.5).with_jumps(
            rng.random_range(0.5..3.0),
            JumpLaw::TwoSidedExponential {
                p_up: rng.random_range(0.2..0.8),
                rate_up: rng.random_range(1.0..4.0),
                rate_down: rng.random_range(1.0..4.0),
            },
        ),
        2 => LevyTriplet::new(0.0, b, 0.0).with_jumps(
            rng.random_range(0.5..3.0),
            JumpLaw::Gaussian {
                mean: rng.random_range(-0.5..0.5),
                sd: rng.random_range(0.1..1.0),
            },
        ),
        _ => LevyTriplet::new(rng.random_range(0.0..2.0), b, 0.0),
    }
}

/// Largest discrepancy between a Lévy path and the inverse Lamperti image
/// of its forward image: absolute in `ξ`, relative in step and lifetime.
pub fn roundtrip_deviation(path: &LevyPath, x: f64, alpha: f64, rule: ClockRule) -> Result<f64> {
    let back = lamperti_inverse(&lamperti_forward_with(path, x, alpha, rule)?)?;
    if back.values.len() != path.values.len() {
        return Err(Error::Shape(format!(
            "roundtrip changed the grid length from {} to {}",
            path.values.len(),
            back.values.len()
        )));
    }
    // A path killed inside its first cell has no full cell to recover the
    // step from. Only the lifetime is compared then.
    let identified = path.values.len() > 1 || !path.killed_in_window();
    let mut dev = if identified { rel(back.step, path.step) } else { 0.0 };
    if path.killed_in_window() {
        dev = dev.max(rel(back.lifetime, path.lifetime));
    }
    for (a, b) in path.values.iter().zip(&back.values) {
        dev = dev.max((a - b).abs());
    }
    Ok(dev)
}

/// Forward then inverse transform of `paths` random paths, each from a
/// random triplet, start point and index, under both clock rules.
pub fn roundtrip_check(ctx: &CheckContext, paths: usize, horizon: f64, tol: f64) -> Result<TestReport> {
    let step = ctx.ctl.step;
    let devs = try_par_replicas(ctx.streams.named("roundtrip"), paths, |i, r| -> Result<f64> {
        let t = random_triplet(r);
        let path = t.sample_path(horizon, step, r)?;
        let x = log_uniform(0.2, 5.0, r);
        let alpha = log_uniform(0.25, 4.0, r);
        let rule = if i % 2 == 0 { ClockRule::LeftPoint } else { ClockRule::ExactLinear };
        roundtrip_deviation(&path, x, alpha, rule)
    })?;
    let worst = devs.iter().copied().fold(0.0, f64::max);
    Ok(TestReport::new("roundtrip", worst, 0.0, worst, tol, paths, ctx.seed).param("horizon", horizon))
}

/// `X_t = (x^α + αbt)^{1/α}` for the pure-drift process, up to the Lévy
/// time `horizon`, under the linear clock rule.
pub fn drift_flow_check(ctx: &CheckContext, b: f64, x: f64, alpha: f64, horizon: f64, tol: f64) -> Result<TestReport> {
    let path = LevyTriplet::new(0.0, b, 0.0).sample_path(horizon, ctx.ctl.step, &mut ctx.streams.replica(0))?;
    let p = lamperti_forward_with(&path, x, alpha, ClockRule::ExactLinear)?;
    let mut dev = 0.0f64;
    for (&t, &v) in p.times.iter().zip(&p.values) {
        let exact = (x.powf(alpha) + alpha * b * t).powf(1.0 / alpha);
        dev = dev.max(rel(v, exact));
    }
    Ok(TestReport::new("drift_flow", dev, 0.0, dev, tol, p.times.len(), ctx.seed)
        .param("b", b)
        .param("x", x)
        .param("alpha", alpha))
}

/// Grid functional `I_h` of the path `ξ_t = bt`, `b < 0`, under the
/// left-point rule, against `1 / (α|b|)`; the error is `h/2 + O(h²)`.
pub fn discrete_functional_error(b: f64, alpha: f64, step: f64) -> Result<(f64, f64)> {
    if !(b < 0.0 && alpha > 0.0) {
        return Err(invalid("need b < 0 and α > 0"));
    }
    let rate = alpha * b.abs();
    let n = (60.0 / rate / step).ceil() as usize;
    let path = LevyPath {
        step,
        values: (0..n).map(|i| b * i as f64 * step).collect(),
        lifetime: f64::INFINITY,
        tilt_index: 0.0,
    };
    let ih = discrete_functional(&path, alpha, ClockRule::LeftPoint)?;
    Ok((ih, 1.0 / rate))
}

/// One row per step with pass iff `|I_h - 1/(α|b|)| ≤ 2h`, and one row
/// comparing the ratio of successive errors with the ratio of steps.
pub fn discrete_functional_check(ctx: &CheckContext, b: f64, alpha: f64, steps: &[f64], ratio_tol: f64) -> Result<Vec<TestReport>> {
    let mut out = Vec::new();
    let mut errs = Vec::new();
    for &h in steps {
        let (ih, exact) = discrete_functional_error(b, alpha, h)?;
        let err = (ih - exact).abs();
        errs.push(err);
        out.push(
            TestReport::new("discrete_I", ih, exact, err, 2.0 * h, 0, ctx.seed)
                .param("b", b)
                .param("alpha", alpha)
                .param("h", h),
        );
    }
    for k in 1..steps.len() {
        let observed = errs[k - 1] / errs[k];
        let expected = steps[k - 1] / steps[k];
        out.push(
            TestReport::new("discrete_I_order", observed, expected, rel(observed, expected), ratio_tol, 0, ctx.seed)
                .param("h_coarse", steps[k - 1])
                .param("h_fine", steps[k]),
        );
    }
    Ok(out)
}

/// `P(I ≤ y)` for `I = ∫_0^∞ e^{α(σW_s - μs)} ds`, which is distributed as
/// `2 / (α²σ² G)` with `G ~ Gamma(2μ/(ασ²), 1)`.
pub fn brownian_functional_cdf(mu: f64, sigma2: f64, alpha: f64, y: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    let scale = alpha * alpha * sigma2;
    gamma_ur(2.0 * mu / (alpha * sigma2), 2.0 / (scale * y))
}

/// Kolmogorov distance between sampled `I` for `ξ = σW - μt` and its
/// closed-form law. Returns the draws for dumping.
pub fn brownian_functional_check(
    ctx: &CheckContext,
    mu: f64,
    sigma2: f64,
    alpha: f64,
    n: usize,
    tol: f64,
) -> Result<(TestReport, Vec<f64>)> {
    if !(mu > 0.0 && sigma2 > 0.0) {
        return Err(invalid("need μ > 0 and σ² > 0"));
    }
    let t = LevyTriplet::new(0.0, -mu, sigma2);
    let draws: Vec<f64> = ExpSampler::new(&t, alpha, ctx.ctl)?
        .sample_batch(ctx.streams.named("I"), n)?
        .iter()
        .map(|s| s.value)
        .collect();
    let ks = stats::ks_vs_cdf(&draws, |y| brownian_functional_cdf(mu, sigma2, alpha, y))?;
    let shape = 2.0 * mu / (alpha * sigma2);
    let exact_mean = if shape > 1.0 {
        2.0 / (alpha * alpha * sigma2) / (shape - 1.0)
    } else {
        f64::INFINITY
    };
    let r = TestReport::new("brownian_functional", stats::mean(&draws), exact_mean, ks, tol, n, ctx.seed)
        .param("mu", mu)
        .param("sigma2", sigma2)
        .param("alpha", alpha)
        .param("h", ctx.ctl.step);
    Ok((r, draws))
}

/// Passes iff the entrance-law estimator refuses `(t, γ)` with a
/// precondition error. Meant for `Ψ(γ) > 0`, where no such law exists.
pub fn nonexistence_check(ctx: &CheckContext, t: &LevyTriplet, gamma: f64, alpha: f64) -> Result<TestReport> {
    let psi = t.laplace_exponent(gamma)?;
    let refused = matches!(
        ssel_estimate(t, gamma, alpha, 1.0, 100, ctx.streams, ctx.ctl),
        Err(Error::Precondition(_))
    );
    let stat = if refused { 0.0 } else { 1.0 };
    Ok(TestReport::new("nonexistence", psi, 0.0, stat, 0.5, 0, ctx.seed)
        .param("gamma", gamma)
        .param("alpha", alpha))
}

/// [`scaling_check`] at `pairs` random `(c, s)`, log-uniform on
/// `[0.1, 10]²`, on one set of draws.
#[allow(clippy::too_many_arguments)]
pub fn random_scaling_checks(
    ctx: &CheckContext,
    t: &LevyTriplet,
    gamma: f64,
    alpha: f64,
    f: &TestFunction,
    pairs: usize,
    n: usize,
) -> Result<Vec<TestReport>> {
    let sample = EntranceSampler::new(t, gamma, alpha, ctx.ctl)?.draw(n, ctx.streams.named("I"))?;
    let mut rng = ctx.streams.named("pairs").replica(0);
    Ok((0..pairs)
        .map(|_| {
            let c = log_uniform(0.1, 10.0, &mut rng);
            let s = log_uniform(0.1, 10.0, &mut rng);
            scaling_check(ctx, &sample, s, c, f)
        })
        .collect())
}

/// Worst pathwise deviation of the multi-self-similar scaling identity over
/// `vectors` random scale vectors, each on fresh paths from `spec`.
pub fn multi_scaling_check(
    ctx: &CheckContext,
    spec: &MultiSpec,
    x: &[f64],
    horizon: f64,
    vectors: usize,
    tol: f64,
) -> Result<TestReport> {
    spec.validate()?;
    let ctl: SampleControl = ctx.ctl;
    let devs = try_par_replicas(ctx.streams.named("multi_scaling"), vectors, |_, r| -> Result<f64> {
        let paths = spec.sample_paths(horizon, ctl.step, r)?;
        let c: Vec<f64> = (0..spec.dim()).map(|_| log_uniform(0.1, 10.0, r)).collect();
        multi_scaling_deviation(&paths, x, &c, &spec.alpha, ctl.rule)
    })?;
    let worst = devs.iter().copied().fold(0.0, f64::max);
    Ok(TestReport::new("multi_scaling", worst, 0.0, worst, tol, vectors, ctx.seed).param("dim", spec.dim()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_flows_are_exact() {
        let ctx = CheckContext::new(3);
        assert!(roundtrip_check(&ctx, 20, 1.0, 1e-9).unwrap().pass);
        for (b, x, alpha) in [(1.0, 1.0, 1.0), (-0.5, 2.0, 0.5), (2.0, 0.3, 3.0)] {
            let r = drift_flow_check(&ctx, b, x, alpha, 1.0, 1e-9).unwrap();
            assert!(r.pass, "{}", r.csv_row());
        }
    }

    #[test]
    fn left_point_functional_error_is_half_step() {
        for h in [1e-2, 1e-3] {
            let (ih, exact) = discrete_functional_error(-1.0, 1.0, h).unwrap();
            // h / (1 - e^{-h}) - 1 = h/2 + h²/12 + O(h⁴).
            let err = h / (1.0 - (-h).exp()) - 1.0;
            assert!((ih - exact - err).abs() < 1e-9, "{ih} {exact} {err}");
        }
    }

    #[test]
    fn brownian_cdf_limits() {
        assert_eq!(brownian_functional_cdf(1.5, 1.0, 1.0, 0.0), 0.0);
        assert!(brownian_functional_cdf(1.5, 1.0, 1.0, 1e6) > 1.0 - 1e-9);
        // 2/Gamma(1) = 2/E with E ~ Exp(1): P(2/E ≤ y) = e^{-2/y}.
        let y = 3.0;
        assert!((brownian_functional_cdf(0.5, 1.0, 1.0, y) - (-2.0 / y).exp()).abs() < 1e-12);
    }

    #[test]
    fn refusal_above_cramer_boundary() {
        let ctx = CheckContext::new(1);
        let t = LevyTriplet::new(0.0, -1.0, 1.0);
        assert!(nonexistence_check(&ctx, &t, 3.0, 1.0).unwrap().pass);
        assert!(!nonexistence_check(&ctx, &t, 1.0, 1.0).unwrap().pass);
    }
}
