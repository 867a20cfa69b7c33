//! Weighted Monte Carlo estimates of self-similar entrance laws and the
//! identity checks they must pass.
//!
//! For `γ > 0` with `Ψ(γ) ≤ 0`, draws of the exponential functional `I` are
//! taken under the dual of the `γ`-tilted process and
//! `μ^γ_s f = s^{-γ/α} E[ f((s/I)^{1/α}) I^{γ/α - 1} ]`.
//! For `γ = 0` the process must drift to `+∞` and `I` is drawn under the
//! plain dual.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exp_functional::{simulate_pssmp_at, simulate_pssmp_at_times, ExpSampler, SampleControl};
use crate::lamperti::{classify, Regime};
use crate::levy::{LevyTriplet, ROOT_SNAP};
use crate::quad::CompositeRule;
use crate::rng::{try_par_replicas, Streams};
use crate::stats::{self, TestReport};
use crate::test_fn::TestFunction;

/// Pass thresholds shared by every statistical gate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub se_multiplier: f64,
    pub mass_se_multiplier: f64,
    pub pareto_ks: f64,
    pub beta_ks: f64,
    pub uniqueness_ks: f64,
    pub jumpin_cv: f64,
    pub qpot_rel: f64,
    pub scaling_tol: f64,
    pub ess_fraction: f64,
    pub min_survival: usize,
    pub truncation_warn: f64,
    pub bootstrap_resamples: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            se_multiplier: 3.0,
            mass_se_multiplier: 4.0,
            pareto_ks: 0.02,
            beta_ks: 0.02,
            uniqueness_ks: 0.03,
            jumpin_cv: 0.05,
            qpot_rel: 1e-3,
            scaling_tol: 1e-12,
            ess_fraction: 0.1,
            min_survival: 50,
            truncation_warn: 0.01,
            bootstrap_resamples: 500,
        }
    }
}

/// Everything a check needs besides its own parameters.
#[derive(Clone, Copy, Debug)]
pub struct CheckContext {
    pub seed: u64,
    pub streams: Streams,
    pub ctl: SampleControl,
    pub thresholds: Thresholds,
}

impl CheckContext {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            streams: Streams::new(seed),
            ctl: SampleControl::default(),
            thresholds: Thresholds::default(),
        }
    }

    /// A context whose streams are private to `label`.
    pub fn scoped(&self, label: &str) -> Self {
        Self {
            streams: self.streams.named(label),
            ..*self
        }
    }

    fn boot_se(&self, data: &[f64], tag: u64) -> Result<f64> {
        let mut rng = self.streams.named("bootstrap").replica(tag);
        stats::bootstrap_se(stats::mean, data, self.thresholds.bootstrap_resamples, &mut rng)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasureMeta {
    pub gamma: f64,
    pub alpha: f64,
    pub s: f64,
    pub n: usize,
    pub tilt: f64,
}

/// Atoms `(x_i, w_i)`; the measure of `f` is `(1/N) Σ w_i f(x_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedEmpiricalMeasure {
    pub atoms: Vec<(f64, f64)>,
    pub meta: MeasureMeta,
}

impl WeightedEmpiricalMeasure {
    pub fn eval<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.atoms.iter().map(|&(x, w)| w * f(x)).sum::<f64>() / self.atoms.len() as f64
    }

    pub fn total_mass(&self) -> f64 {
        self.eval(|_| 1.0)
    }

    pub fn weights(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.1).collect()
    }

    pub fn points(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.0).collect()
    }

    /// Kish effective sample size of the weights.
    pub fn ess(&self) -> f64 {
        stats::effective_sample_size(&self.weights())
    }

    /// `n` draws from the normalized measure, refusing when the effective
    /// sample size is below `min_fraction` of the atom count.
    pub fn resample<R: Rng + ?Sized>(&self, n: usize, min_fraction: f64, rng: &mut R) -> Result<Vec<f64>> {
        let ess = self.ess();
        if ess < min_fraction * self.atoms.len() as f64 {
            return Err(Error::Degenerate(format!(
                "effective sample size {ess:.0} below {min_fraction} of {}",
                self.atoms.len()
            )));
        }
        let idx = stats::resample(&self.weights(), n, rng)?;
        Ok(idx.into_iter().map(|i| self.atoms[i].0).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,w\n");
        for (x, w) in &self.atoms {
            out.push_str(&format!("{x:.12e},{w:.12e}\n"));
        }
        out
    }
}

/// Validated entrance-law sampler for `(triplet, γ, α)`.
#[derive(Clone, Debug)]
pub struct EntranceSampler {
    original: LevyTriplet,
    gamma: f64,
    alpha: f64,
    sampler: ExpSampler,
}

impl EntranceSampler {
    pub fn new(t: &LevyTriplet, gamma: f64, alpha: f64, ctl: SampleControl) -> Result<Self> {
        t.validate()?;
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(invalid(format!("alpha = {alpha} must be positive")));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(invalid(format!("gamma = {gamma} must be finite and >= 0")));
        }
        let sampling = if gamma > 0.0 {
            let psi = t.laplace_exponent(gamma).map_err(|_| {
                Error::Precondition(format!("E[exp(γξ_1), 1 < ζ] is infinite at γ = {gamma}"))
            })?;
            if psi > ROOT_SNAP {
                return Err(Error::Precondition(format!(
                    "E[exp(γξ_1), 1 < ζ] = exp({psi:.6e}) > 1 at γ = {gamma}: no finite γ-entrance law"
                )));
            }
            t.esscher_tilt(gamma)?.dual()
        } else {
            let class = classify(t, alpha);
            if class.regime != Regime::NeverHitsZero {
                return Err(Error::Precondition(format!(
                    "γ = 0 needs a process drifting to +∞, got {:?}",
                    class.regime
                )));
            }
            t.dual()
        };
        Ok(Self {
            original: t.clone(),
            gamma,
            alpha,
            sampler: ExpSampler::new(&sampling, alpha, ctl)?,
        })
    }

    pub fn original(&self) -> &LevyTriplet {
        &self.original
    }

    pub fn sampling_triplet(&self) -> &LevyTriplet {
        self.sampler.triplet()
    }

    pub fn draw(&self, n: usize, streams: Streams) -> Result<EntranceSample> {
        let draws = self.sampler.sample_batch(streams, n)?;
        Ok(EntranceSample {
            gamma: self.gamma,
            alpha: self.alpha,
            functionals: draws.iter().map(|d| d.value).collect(),
            max_tail_ratio: draws.iter().map(|d| d.tail_bound / d.value).fold(0.0, f64::max),
        })
    }
}

/// Draws of `I` from which entrance-law estimates at any time are built.
#[derive(Clone, Debug, PartialEq)]
pub struct EntranceSample {
    pub gamma: f64,
    pub alpha: f64,
    pub functionals: Vec<f64>,
    /// Largest recorded tail bound relative to its draw.
    pub max_tail_ratio: f64,
}

impl EntranceSample {
    pub fn len(&self) -> usize {
        self.functionals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functionals.is_empty()
    }

    fn atom(&self, s: f64, i: f64) -> (f64, f64) {
        let r = self.gamma / self.alpha;
        ((s / i).powf(1.0 / self.alpha), s.powf(-r) * i.powf(r - 1.0))
    }

    pub fn measure(&self, s: f64) -> WeightedEmpiricalMeasure {
        WeightedEmpiricalMeasure {
            atoms: self.functionals.iter().map(|&i| self.atom(s, i)).collect(),
            meta: MeasureMeta {
                gamma: self.gamma,
                alpha: self.alpha,
                s,
                n: self.functionals.len(),
                tilt: self.gamma,
            },
        }
    }

    /// Per-atom terms `w_i f(x_i)` at time `s`.
    pub fn contributions<F: Fn(f64) -> f64>(&self, s: f64, f: F) -> Vec<f64> {
        self.functionals
            .iter()
            .map(|&i| {
                let (x, w) = self.atom(s, i);
                w * f(x)
            })
            .collect()
    }

    pub fn eval<F: Fn(f64) -> f64>(&self, s: f64, f: F) -> f64 {
        let total: f64 = self
            .functionals
            .iter()
            .map(|&i| {
                let (x, w) = self.atom(s, i);
                w * f(x)
            })
            .sum();
        total / self.functionals.len() as f64
    }
}

pub fn ssel_estimate(
    t: &LevyTriplet,
    gamma: f64,
    alpha: f64,
    s: f64,
    n: usize,
    streams: Streams,
    ctl: SampleControl,
) -> Result<WeightedEmpiricalMeasure> {
    if !(s > 0.0) {
        return Err(invalid(format!("time s = {s} must be positive")));
    }
    Ok(EntranceSampler::new(t, gamma, alpha, ctl)?.draw(n, streams)?.measure(s))
}

fn params(r: TestReport, gamma: f64, alpha: f64) -> TestReport {
    r.param("gamma", gamma).param("alpha", alpha)
}

/// `|a - b|` in units of the combined standard error. The error is floored
/// by the sampler's bias budget `(tail_eps + h)·max(|a|, |b|)` so that
/// zero-variance instances are judged against their discretization error.
pub(crate) fn z_score(a: f64, b: f64, se: f64, ctl: &SampleControl) -> f64 {
    let diff = (a - b).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / se.max((ctl.tail_eps + ctl.step) * a.abs().max(b.abs()))
}

/// `μ_s f = c^{-γ} μ_{s c^{-α}}(H_c f)` with `H_c f(x) = f(cx)`, on one set
/// of draws. Exact up to rounding.
pub fn scaling_check(ctx: &CheckContext, sample: &EntranceSample, s: f64, c: f64, f: &TestFunction) -> TestReport {
    let lhs = sample.eval(s, |x| f.eval(x));
    let rhs = c.powf(-sample.gamma) * sample.eval(s * c.powf(-sample.alpha), |x| f.eval(c * x));
    let rel = if lhs == rhs { 0.0 } else { (lhs - rhs).abs() / lhs.abs().max(rhs.abs()) };
    params(
        TestReport::new("scaling", lhs, rhs, rel, ctx.thresholds.scaling_tol, sample.len(), ctx.seed),
        sample.gamma,
        sample.alpha,
    )
    .param("s", s)
    .param("c", c)
    .param("f", f.label())
}

/// `μ_{s+t} f` against `μ_s P_t f`, one report per test function. The two
/// sides use independent draws; the inner expectation is one fresh
/// trajectory per atom.
#[allow(clippy::too_many_arguments)]
pub fn semigroup_check(
    ctx: &CheckContext,
    t: &LevyTriplet,
    gamma: f64,
    alpha: f64,
    s: f64,
    tstep: f64,
    fs: &[TestFunction],
    n: usize,
) -> Result<Vec<TestReport>> {
    let es = EntranceSampler::new(t, gamma, alpha, ctx.ctl)?;
    let lhs_draws = es.draw(n, ctx.streams.named("lhs"))?;
    let rhs_atoms = es.draw(n, ctx.streams.named("rhs"))?.measure(s).atoms;
    let moved = try_par_replicas(ctx.streams.named("inner"), n, |i, r| {
        simulate_pssmp_at(t, alpha, rhs_atoms[i].0, tstep, &ctx.ctl, r)
    })?;
    let mut out = Vec::with_capacity(fs.len());
    for (k, f) in fs.iter().enumerate() {
        let lc = lhs_draws.contributions(s + tstep, |x| f.eval(x));
        let rc: Vec<f64> = rhs_atoms
            .iter()
            .zip(&moved)
            .map(|(&(_, w), x)| x.map_or(0.0, |x| w * f.eval(x)))
            .collect();
        let (lhs, rhs) = (stats::mean(&lc), stats::mean(&rc));
        let se = ctx.boot_se(&lc, 2 * k as u64)?.hypot(ctx.boot_se(&rc, 2 * k as u64 + 1)?);
        let r = TestReport::new(
            "semigroup",
            lhs,
            rhs,
            z_score(lhs, rhs, se, &ctx.ctl),
            ctx.thresholds.se_multiplier,
            n,
            ctx.seed,
        );
        out.push(params(r, gamma, alpha).param("s", s).param("t", tstep).param("f", f.label()));
    }
    Ok(out)
}

/// Total mass of the `γ = 0` law against the mean `m = Ψ'(0)`.
pub fn mass_check(ctx: &CheckContext, t: &LevyTriplet, alpha: f64, n: usize) -> Result<TestReport> {
    let es = EntranceSampler::new(t, 0.0, alpha, ctx.ctl)?;
    let m = t
        .mean()
        .ok_or_else(|| Error::Precondition("mass law needs a finite mean".into()))?;
    let w = es.draw(n, ctx.streams.named("mass"))?.contributions(1.0, |_| 1.0);
    let mass = stats::mean(&w);
    let se = ctx.boot_se(&w, 0)?;
    Ok(params(
        TestReport::new(
            "mass",
            mass,
            m,
            z_score(mass, m, se, &ctx.ctl),
            ctx.thresholds.mass_se_multiplier,
            n,
            ctx.seed,
        ),
        0.0,
        alpha,
    ))
}

/// Two independent estimates of the normalized `μ^γ_1` against each other.
pub fn uniqueness_check(ctx: &CheckContext, t: &LevyTriplet, gamma: f64, alpha: f64, n: usize) -> Result<TestReport> {
    let es = EntranceSampler::new(t, gamma, alpha, ctx.ctl)?;
    let a = es.draw(n, ctx.streams.named("a"))?.measure(1.0);
    let b = es.draw(n, ctx.streams.named("b"))?.measure(1.0);
    let ks = stats::ks_weighted(&a.points(), &a.weights(), &b.points(), &b.weights())?;
    Ok(params(
        TestReport::new("uniqueness", a.total_mass(), b.total_mass(), ks, ctx.thresholds.uniqueness_ks, n, ctx.seed),
        gamma,
        alpha,
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct JumpinRow {
    pub f: TestFunction,
    pub s: f64,
    pub a: f64,
    pub b: f64,
}

impl JumpinRow {
    pub fn ratio(&self) -> f64 {
        self.a / self.b
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JumpinReport {
    pub rows: Vec<JumpinRow>,
    pub cv: f64,
    /// Extrapolated mass outside the `x` range relative to the estimate,
    /// worst case over the rows.
    pub truncation: f64,
    pub truncation_warning: bool,
    pub report: TestReport,
}

/// Ratio of `∫ x^{-1-γ/α} E_x[f(X_s), s < T₀] dx` to `μ^γ_s f` across test
/// functions and times; constant when the jumping-in representation holds.
#[allow(clippy::too_many_arguments)]
pub fn jumpin_check(
    ctx: &CheckContext,
    t: &LevyTriplet,
    gamma: f64,
    alpha: f64,
    times: &[f64],
    fs: &[TestFunction],
    x_range: (f64, f64),
    n: usize,
) -> Result<JumpinReport> {
    let psi = t.laplace_exponent(gamma)?;
    if psi >= -ROOT_SNAP {
        return Err(Error::Precondition(format!(
            "jumping-in representation needs E[exp(γξ_1), 1 < ζ] < 1, got exp({psi:.3e})"
        )));
    }
    let (lo, hi) = x_range;
    if !(lo > 0.0 && hi > lo) {
        return Err(invalid(format!("bad x range ({lo}, {hi})")));
    }
    let mut ts = times.to_vec();
    ts.sort_by(f64::total_cmp);
    let (ulo, width) = (lo.ln(), (hi / lo).ln());
    let r = gamma / alpha;
    // Stratified log-uniform starting points, one trajectory each.
    let sims = try_par_replicas(ctx.streams.named("A"), n, |k, rng| {
        let x = (ulo + (k as f64 + rng.random::<f64>()) / n as f64 * width).exp();
        simulate_pssmp_at_times(t, alpha, x, &ts, &ctx.ctl, rng).map(|v| (x, v))
    })?;
    let sample = EntranceSampler::new(t, gamma, alpha, ctx.ctl)?.draw(n, ctx.streams.named("B"))?;
    let edge = (n / 100).max(1);
    let mut rows = Vec::new();
    let mut truncation = 0.0f64;
    for f in fs {
        for (j, &s) in ts.iter().enumerate() {
            let terms: Vec<f64> = sims
                .iter()
                .map(|(x, v)| v[j].map_or(0.0, |y| width * x.powf(-r) * f.eval(y)))
                .collect();
            let a = stats::mean(&terms);
            let b = sample.eval(s, |x| f.eval(x));
            if a != 0.0 {
                truncation = truncation.max(edge_tail(&terms, edge) / a.abs());
            }
            rows.push(JumpinRow { f: *f, s, a, b });
        }
    }
    let ratios: Vec<f64> = rows.iter().filter(|r| r.b != 0.0).map(JumpinRow::ratio).collect();
    let cv = if ratios.len() < 2 {
        0.0
    } else {
        let m = stats::mean(&ratios);
        let var = ratios.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / ratios.len() as f64;
        var.sqrt() / m.abs()
    };
    let mean_ratio = if ratios.is_empty() { 0.0 } else { stats::mean(&ratios) };
    let report = params(
        TestReport::new("jumpin", mean_ratio, mean_ratio, cv, ctx.thresholds.jumpin_cv, n, ctx.seed),
        gamma,
        alpha,
    )
    .param("x_lo", lo)
    .param("x_hi", hi)
    .param("cells", rows.len());
    Ok(JumpinReport {
        rows,
        cv,
        truncation,
        truncation_warning: truncation > ctx.thresholds.truncation_warn,
        report,
    })
}

/// Mass beyond both ends of a stratified sample, extrapolated geometrically
/// from the two outermost blocks of `edge` strata. Infinite when an end
/// block does not decay.
fn edge_tail(terms: &[f64], edge: usize) -> f64 {
    let n = terms.len() as f64;
    let block = |range: std::ops::Range<usize>| terms[range].iter().map(|v| v.abs()).sum::<f64>() / n;
    let len = terms.len();
    if len < 4 * edge {
        return 0.0;
    }
    let ends = [
        (block(0..edge), block(edge..2 * edge)),
        (block(len - edge..len), block(len - 2 * edge..len - edge)),
    ];
    ends.iter()
        .map(|&(outer, inner)| {
            if outer == 0.0 {
                0.0
            } else if outer >= inner {
                f64::INFINITY
            } else {
                let q = outer / inner;
                outer * q / (1.0 - q)
            }
        })
        .sum()
}

/// `I·J^α` against the Pareto law `1 - (1+y)^{-γ/α}`, with `J` resampled
/// from the normalized `μ^γ_1` and `I` drawn independently under the
/// original process.
pub fn pareto_check(ctx: &CheckContext, t: &LevyTriplet, gamma: f64, alpha: f64, n: usize) -> Result<TestReport> {
    if gamma <= 0.0 {
        return Err(invalid("Pareto factorization needs γ > 0"));
    }
    let es = EntranceSampler::new(t, gamma, alpha, ctx.ctl)?;
    let mu = es.draw(n, ctx.streams.named("J"))?.measure(1.0);
    let j = mu.resample(n, ctx.thresholds.ess_fraction, &mut ctx.streams.named("resample").replica(0))?;
    let i = ExpSampler::new(t, alpha, ctx.ctl)?.sample_batch(ctx.streams.named("I"), n)?;
    let y: Vec<f64> = i.iter().zip(&j).map(|(i, j)| i.value * j.powf(alpha)).collect();
    let theta = gamma / alpha;
    let ks = stats::ks_vs_cdf(&y, |y| 1.0 - (1.0 + y).powf(-theta))?;
    // Medians: the Pareto mean is infinite for γ ≤ α.
    let mut sorted = y.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    Ok(params(
        TestReport::new("pareto", median, 2f64.powf(1.0 / theta) - 1.0, ks, ctx.thresholds.pareto_ks, n, ctx.seed),
        gamma,
        alpha,
    )
    .param("ess", format!("{:.0}", mu.ess())))
}

/// Normalized `μ^{β'}_s` against the law of `J / B^{1/α}` with
/// `J ~ μ^β_s` normalized and `B ~ Beta(β'/α, (β-β')/α)` independent.
#[allow(clippy::too_many_arguments)]
pub fn beta_embedding_check(
    ctx: &CheckContext,
    t: &LevyTriplet,
    beta_lo: f64,
    beta: f64,
    alpha: f64,
    s: f64,
    n: usize,
) -> Result<TestReport> {
    if !(beta_lo > 0.0 && beta_lo <= beta) {
        return Err(invalid(format!("need 0 < β' <= β, got β' = {beta_lo}, β = {beta}")));
    }
    let lower = EntranceSampler::new(t, beta_lo, alpha, ctx.ctl)?.draw(n, ctx.streams.named("lower"))?.measure(s);
    let upper = EntranceSampler::new(t, beta, alpha, ctx.ctl)?.draw(n, ctx.streams.named("upper"))?.measure(s);
    if lower.ess() < ctx.thresholds.ess_fraction * n as f64 {
        return Err(Error::Degenerate(format!("effective sample size {:.0} of β' law too small", lower.ess())));
    }
    let mut rng = ctx.streams.named("resample").replica(0);
    let j = upper.resample(n, ctx.thresholds.ess_fraction, &mut rng)?;
    let scaled: Vec<f64> = if beta_lo == beta {
        j
    } else {
        let law = Beta::new(beta_lo / alpha, (beta - beta_lo) / alpha).map_err(|e| invalid(e.to_string()))?;
        let mut rng = ctx.streams.named("beta").replica(0);
        j.iter().map(|&x| x / law.sample(&mut rng).powf(1.0 / alpha)).collect()
    };
    let ones = vec![1.0; scaled.len()];
    let ks = stats::ks_weighted(&lower.points(), &lower.weights(), &scaled, &ones)?;
    Ok(TestReport::new("beta_embed", lower.total_mass(), upper.total_mass(), ks, ctx.thresholds.beta_ks, n, ctx.seed)
        .param("beta_lo", beta_lo)
        .param("beta", beta)
        .param("alpha", alpha)
        .param("s", s))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecayFit {
    pub rate: f64,
    pub se: f64,
    pub grid: Vec<f64>,
    pub survival: Vec<f64>,
}

/// Least-squares fit of `log S(u) = -rate·u` on `grid`, where `S` is the
/// empirical survival of `lifetimes`, with a bootstrap standard error.
pub fn fit_decay<R: Rng + ?Sized>(lifetimes: &[f64], min_count: usize, resamples: usize, rng: &mut R) -> Result<DecayFit> {
    let n = lifetimes.len();
    let mut v = lifetimes.to_vec();
    v.sort_by(f64::total_cmp);
    let quantile_index = ((0.95 * n as f64) as usize).min(n.saturating_sub(min_count + 1));
    let u_max = v.get(quantile_index).copied().unwrap_or(0.0);
    let points = 20;
    let grid: Vec<f64> = (1..=points).map(|k| u_max * k as f64 / points as f64).collect();
    let survival_of = |sorted: &[f64]| -> Vec<f64> {
        grid.iter()
            .map(|&u| (sorted.len() - sorted.partition_point(|&x| x <= u)) as f64)
            .collect()
    };
    let counts = survival_of(&v);
    if counts.iter().filter(|&&c| c >= min_count as f64).count() < 3 || !(u_max > 0.0) {
        return Err(Error::Size(format!("fewer than 3 grid points with {min_count} survivors")));
    }
    let fit = |counts: &[f64]| -> Result<f64> {
        let (x, y): (Vec<f64>, Vec<f64>) = grid
            .iter()
            .zip(counts)
            .filter(|(_, &c)| c >= min_count as f64)
            .map(|(&u, &c)| (u, (c / n as f64).ln()))
            .unzip();
        Ok(-stats::slope_through_origin(&x, &y)?.0)
    };
    let rate = fit(&counts)?;
    let mut buf = vec![0.0; n];
    let mut reps = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        for slot in buf.iter_mut() {
            *slot = v[rng.random_range(0..n)];
        }
        buf.sort_by(f64::total_cmp);
        reps.push(fit(&survival_of(&buf))?);
    }
    Ok(DecayFit {
        rate,
        se: stats::sample_sd(&reps),
        survival: counts.iter().map(|c| c / n as f64).collect(),
        grid,
    })
}

/// Survival of `U_u = e^{-u/α} X_{e^u - 1}` started from the normalized
/// `μ^γ_1`: `P(u < ln(1 + T₀)) = e^{-(γ/α) u}`.
pub fn quasi_stationary_check(
    ctx: &CheckContext,
    t: &LevyTriplet,
    gamma: f64,
    alpha: f64,
    n: usize,
) -> Result<(TestReport, DecayFit)> {
    let es = EntranceSampler::new(t, gamma, alpha, ctx.ctl)?;
    let starts = es
        .draw(n, ctx.streams.named("nu"))?
        .measure(1.0)
        .resample(n, ctx.thresholds.ess_fraction, &mut ctx.streams.named("resample").replica(0))?;
    let i = ExpSampler::new(t, alpha, ctx.ctl)?.sample_batch(ctx.streams.named("T0"), n)?;
    let lifetimes: Vec<f64> = starts
        .iter()
        .zip(&i)
        .map(|(x, i)| (x.powf(alpha) * i.value).ln_1p())
        .collect();
    let mut rng = ctx.streams.named("fit").replica(0);
    let fit = fit_decay(&lifetimes, ctx.thresholds.min_survival, 200, &mut rng)?;
    let target = gamma / alpha;
    let stat = (fit.rate - target).abs() / fit.se;
    let r = TestReport::new("quasi_stationary", fit.rate, target, stat, ctx.thresholds.se_multiplier, n, ctx.seed);
    Ok((params(r, gamma, alpha).param("se", format!("{:.3e}", fit.se)), fit))
}

/// Panel width, in log-time, of the composite rules below.
const QPOT_PANEL: f64 = 0.05;
const QPOT_ORDER: usize = 8;

/// `∫_0^∞ e^{-q t} μ^γ_t f dt` two ways on one set of draws: (a) a rule in
/// `u = ln t` applied to the estimator, (b) per draw, the rule in
/// `v = ln x` applied to `α ∫ f(e^v) e^{(α-γ)v} exp(-q I e^{αv}) dv`.
/// Both are restricted to the effective support of `f`.
#[allow(clippy::too_many_arguments)]
pub fn qpotential_check(
    ctx: &CheckContext,
    t: &LevyTriplet,
    gamma: f64,
    alpha: f64,
    q_lap: f64,
    f: &TestFunction,
    n: usize,
) -> Result<TestReport> {
    if !(q_lap > 0.0) {
        return Err(invalid("Laplace variable must be positive"));
    }
    let sample = EntranceSampler::new(t, gamma, alpha, ctx.ctl)?.draw(n, ctx.streams.named("I"))?;
    let (a, b) = qpotential_two_ways(&sample, q_lap, f)?;
    let rel = if a == b { 0.0 } else { (a - b).abs() / a.abs().max(b.abs()) };
    Ok(params(
        TestReport::new("qpotential", a, b, rel, ctx.thresholds.qpot_rel, n, ctx.seed),
        gamma,
        alpha,
    )
    .param("q", q_lap)
    .param("f", f.label()))
}

pub fn qpotential_two_ways(sample: &EntranceSample, q_lap: f64, f: &TestFunction) -> Result<(f64, f64)> {
    if f.is_zero() {
        return Ok((0.0, 0.0));
    }
    let (alpha, gamma) = (sample.alpha, sample.gamma);
    let (x_lo, x_hi) = f.effective_support();
    let x_lo = x_lo.max(1e-12);
    // Beyond this time e^{-q t} is negligible.
    let t_cap = 40.0 / q_lap;
    if !(x_hi.is_finite() && x_hi > x_lo) {
        return Err(invalid(format!("test function {} has no bounded effective support", f.label())));
    }
    let (i_min, i_max) = sample
        .functionals
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &i| (lo.min(i), hi.max(i)));
    let inside = |x: f64| x >= x_lo && x <= x_hi;

    let u_lo = (i_min * x_lo.powf(alpha)).ln();
    let u_hi = (i_max * x_hi.powf(alpha)).min(t_cap).ln();
    let a = if u_hi <= u_lo {
        0.0
    } else {
        let panels = ((u_hi - u_lo) / QPOT_PANEL).ceil() as usize;
        let rule = CompositeRule::new(u_lo, u_hi, panels, QPOT_ORDER);
        rule.apply(|u| {
            let tt = u.exp();
            tt * (-q_lap * tt).exp() * sample.eval(tt, |x| if inside(x) { f.eval(x) } else { 0.0 })
        })
    };

    let (v_lo, v_hi) = (x_lo.ln(), x_hi.ln());
    let panels = ((v_hi - v_lo) * alpha / QPOT_PANEL).ceil() as usize;
    let rule = CompositeRule::new(v_lo, v_hi, panels, QPOT_ORDER);
    let fv: Vec<f64> = rule.nodes.iter().map(|&v| f.eval(v.exp()) * ((alpha - gamma) * v).exp()).collect();
    let ev: Vec<f64> = rule.nodes.iter().map(|&v| (alpha * v).exp()).collect();
    let b = sample
        .functionals
        .iter()
        .map(|&i| {
            alpha
                * rule
                    .weights
                    .iter()
                    .zip(fv.iter().zip(&ev))
                    .map(|(w, (fv, ev))| w * fv * (-q_lap * i * ev).exp())
                    .sum::<f64>()
        })
        .sum::<f64>()
        / sample.len() as f64;
    Ok((a, b))
}
