//! Multi-self-similar processes on `(0, ∞)^n`: the transform
//! `X_t = x ∘ E(ξ_{τ(t / p_α(x))})`, with `τ` the inverse of
//! `∫ e^{⟨α, ξ_r⟩} dr` and `p_α(u) = Π u_i^{α_i}`, and the potential of its
//! entrance law,
//! `ν_λ f = ∫ m(dx) f(x) E[exp(-λ p_α(x) Î)]`, `Î = ∫_0^∞ e^{-⟨α, ξ_s⟩} ds`,
//! `m(dx) = Π x_i^{α_i - 1} dx`.
//!
//! Coordinates of `ξ` are independent one-dimensional triplets sharing one
//! exponential lifetime.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use super::{Estimate, ProductFunction};
use crate::entrance::CheckContext;
use crate::error::{invalid, Error, Result};
use crate::exp_functional::{ExpFunctionalSample, SampleControl};
use crate::lamperti::{cumulative_clock, exp_ratio, ClockRule};
use crate::levy::{Increments, LevyPath, LevyTriplet};
use crate::quad::CompositeRule;
use crate::rng::{try_par_replicas, Streams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiSpec {
    pub alpha: Vec<f64>,
    /// One unkilled triplet per coordinate.
    pub coords: Vec<LevyTriplet>,
    /// Kill rate of the whole vector.
    #[serde(default)]
    pub q: f64,
}

impl MultiSpec {
    pub fn new(alpha: Vec<f64>, coords: Vec<LevyTriplet>, q: f64) -> Self {
        Self { alpha, coords, q }
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_empty() || self.alpha.len() != self.coords.len() {
            return Err(invalid(format!(
                "need n ≥ 1 with one triplet per exponent, got {} exponents and {} triplets",
                self.alpha.len(),
                self.coords.len()
            )));
        }
        if self.alpha.iter().any(|a| !a.is_finite()) {
            return Err(invalid("exponents must be finite"));
        }
        if !(self.q >= 0.0 && self.q.is_finite()) {
            return Err(invalid(format!("kill rate q = {} must be finite and nonnegative", self.q)));
        }
        for (i, c) in self.coords.iter().enumerate() {
            c.validate()?;
            if c.kill_rate != 0.0 {
                return Err(invalid(format!("coordinate {i} has its own kill rate; use the shared q")));
            }
        }
        Ok(())
    }

    /// `⟨α, E[ξ_1]⟩`, when every coordinate has a mean.
    pub fn alpha_mean(&self) -> Option<f64> {
        self.alpha
            .iter()
            .zip(&self.coords)
            .try_fold(0.0, |acc, (a, c)| c.mean().map(|m| acc + a * m))
    }

    pub fn p_alpha(&self, x: &[f64]) -> f64 {
        p_alpha(&self.alpha, x)
    }

    fn lifetime<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.q > 0.0 {
            let e: f64 = Exp1.sample(rng);
            e / self.q
        } else {
            f64::INFINITY
        }
    }

    /// One grid path per coordinate, all cut at the shared lifetime.
    pub fn sample_paths<R: Rng + ?Sized>(&self, horizon: f64, step: f64, rng: &mut R) -> Result<Vec<LevyPath>> {
        self.validate()?;
        if !(step > 0.0 && horizon >= step && horizon.is_finite()) {
            return Err(invalid(format!("need 0 < step ≤ horizon < ∞, got {step}, {horizon}")));
        }
        let lifetime = self.lifetime(rng);
        let n = (horizon / step).round() as usize;
        let mut incs: Vec<Increments<'_>> = self.coords.iter().map(|c| Increments::new(c, step, rng)).collect();
        let mut values = vec![Vec::with_capacity(n + 1); self.dim()];
        let mut xi = vec![0.0; self.dim()];
        for i in 0..=n {
            if i as f64 * step >= lifetime {
                break;
            }
            for k in 0..self.dim() {
                values[k].push(xi[k]);
                xi[k] += incs[k].next(rng);
            }
        }
        Ok(values
            .into_iter()
            .map(|values| LevyPath {
                step,
                values,
                lifetime,
                tilt_index: 0.0,
            })
            .collect())
    }

    /// One draw of `Î = ∫_0^∞ e^{-⟨α, ξ_s⟩} ds`, truncated like the
    /// one-dimensional functional once `e^{-⟨α,ξ⟩}·2/⟨α,m⟩` is below
    /// `tail_eps` times the partial integral.
    pub fn sample_dual_functional<R: Rng + ?Sized>(&self, ctl: &SampleControl, rng: &mut R) -> Result<ExpFunctionalSample> {
        let rate = self.potential_rate()?;
        let h = ctl.step;
        let mut incs: Vec<Increments<'_>> = self.coords.iter().map(|c| Increments::new(c, h, rng)).collect();
        let (mut zeta, mut acc, mut scale) = (0.0f64, 0.0f64, 1.0f64);
        for i in 0..ctl.max_steps {
            let dz = incs.iter_mut().zip(&self.alpha).fold(0.0, |s, (inc, a)| s + a * inc.next(rng));
            let shape = match ctl.rule {
                ClockRule::LeftPoint => 1.0,
                ClockRule::ExactLinear => exp_ratio(-dz),
            };
            acc += scale * h * shape;
            zeta += dz;
            scale = (-zeta).exp();
            if !(scale.is_finite() && acc.is_finite()) {
                return Err(Error::Overflow(format!("e^(-⟨α,ξ⟩) overflows at Lévy time {}", i as f64 * h)));
            }
            let bound = scale / rate;
            if bound < ctl.tail_eps * acc {
                return Ok(ExpFunctionalSample {
                    value: acc,
                    truncated: true,
                    horizon_used: (i + 1) as f64 * h,
                    tail_bound: bound,
                });
            }
        }
        Err(Error::Budget(format!("no termination within {} steps of size {h}", ctl.max_steps)))
    }

    /// `⟨α, m⟩ / 2` after checking the conditions under which the potential
    /// formula applies.
    fn potential_rate(&self) -> Result<f64> {
        self.validate()?;
        if self.q > 0.0 {
            return Err(Error::Precondition("the potential formula needs an infinite lifetime".into()));
        }
        match self.alpha_mean() {
            Some(m) if m > 0.0 => Ok(0.5 * m),
            other => Err(Error::Precondition(format!(
                "⟨α, ξ_t⟩ must drift to +∞, drift is {other:?}"
            ))),
        }
    }
}

fn p_alpha(alpha: &[f64], x: &[f64]) -> f64 {
    alpha.iter().zip(x).fold(1.0, |acc, (a, v)| acc * v.powf(*a))
}

fn check_start(alpha: &[f64], x: &[f64]) -> Result<()> {
    if x.len() != alpha.len() || x.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(invalid(format!("start must be a positive vector of length {}", alpha.len())));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiPath {
    pub alpha: Vec<f64>,
    pub start: Vec<f64>,
    pub times: Vec<f64>,
    /// `values[i]` is the state on `[times[i], times[i+1])`.
    pub values: Vec<Vec<f64>>,
    /// Absorption time into the zero set, or infinity.
    pub absorption: f64,
    pub observed_until: f64,
}

impl MultiPath {
    pub fn value_at(&self, t: f64) -> Option<Vec<f64>> {
        if t >= self.absorption {
            return Some(vec![0.0; self.alpha.len()]);
        }
        if t < 0.0 || t >= self.observed_until {
            return None;
        }
        let idx = self.times.partition_point(|&s| s <= t) - 1;
        Some(self.values[idx].clone())
    }

    pub fn to_csv(&self) -> String {
        let n = self.alpha.len();
        let mut out = String::from("t");
        for k in 0..n {
            out.push_str(&format!(",X{k}"));
        }
        out.push('\n');
        for (t, v) in self.times.iter().zip(&self.values) {
            out.push_str(&format!("{t:.12e}"));
            for x in v {
                out.push_str(&format!(",{x:.12e}"));
            }
            out.push('\n');
        }
        if self.absorption.is_finite() {
            out.push_str(&format!("{:.12e}{}\n", self.absorption, ",0".repeat(n)));
        } else {
            out.push_str(&format!("inf{}\n", ",".repeat(n)));
        }
        out
    }
}

/// The transform of `n` coordinate paths on a common grid. With `n = 1`
/// this performs the same floating-point operations as the
/// one-dimensional transform.
pub fn mssmp_transform(paths: &[LevyPath], x: &[f64], alpha: &[f64], rule: ClockRule) -> Result<MultiPath> {
    check_start(alpha, x)?;
    let first = paths.first().ok_or_else(|| Error::Shape("no coordinate paths".into()))?;
    if paths.len() != alpha.len() {
        return Err(Error::Shape(format!("{} paths for {} exponents", paths.len(), alpha.len())));
    }
    if paths
        .iter()
        .any(|p| p.step != first.step || p.len() != first.len() || p.lifetime != first.lifetime)
    {
        return Err(Error::Shape("coordinate paths differ in grid or lifetime".into()));
    }
    if first.is_empty() {
        return Err(Error::Shape("Lévy path has no grid values".into()));
    }
    let m = first.len();
    let expo: Vec<f64> = (0..m)
        .map(|i| alpha.iter().zip(paths).fold(0.0, |acc, (a, p)| acc + a * p.values[i]))
        .collect();
    let clock = cumulative_clock(&expo, first.step, first.window_end(), rule)?;
    let factor = p_alpha(alpha, x);
    let times = clock[..m].iter().map(|a| factor * a).collect();
    let values = (0..m)
        .map(|i| x.iter().zip(paths).map(|(xk, p)| xk * p.values[i].exp()).collect())
        .collect();
    let end = factor * clock[m];
    Ok(MultiPath {
        alpha: alpha.to_vec(),
        start: x.to_vec(),
        times,
        values,
        absorption: if first.killed_in_window() { end } else { f64::INFINITY },
        observed_until: end,
    })
}

/// Largest relative deviation between the transform started at `c ∘ x`
/// and the coordinatewise `c`-scaling, with time sped up by
/// `p_α(c)`, of the transform started at `x`, on one set of paths.
pub fn multi_scaling_deviation(paths: &[LevyPath], x: &[f64], c: &[f64], alpha: &[f64], rule: ClockRule) -> Result<f64> {
    check_start(alpha, c)?;
    let base = mssmp_transform(paths, x, alpha, rule)?;
    let cx: Vec<f64> = x.iter().zip(c).map(|(a, b)| a * b).collect();
    let scaled = mssmp_transform(paths, &cx, alpha, rule)?;
    let pc = p_alpha(alpha, c);
    let rel = |a: f64, b: f64| if a == b { 0.0 } else { (a - b).abs() / a.abs().max(b.abs()) };
    let mut dev = rel(scaled.observed_until, pc * base.observed_until);
    for i in 0..base.times.len() {
        dev = dev.max(rel(scaled.times[i], pc * base.times[i]));
        for (k, ck) in c.iter().enumerate() {
            dev = dev.max(rel(scaled.values[i][k], ck * base.values[i][k]));
        }
    }
    Ok(dev)
}

/// State at time `t` of the process started from `x`, or `None` once
/// killed. Under the linear clock rule the time change is inverted inside
/// the final cell.
pub fn mssmp_at<R: Rng + ?Sized>(
    spec: &MultiSpec,
    x: &[f64],
    t: f64,
    ctl: &SampleControl,
    rng: &mut R,
) -> Result<Option<Vec<f64>>> {
    check_start(&spec.alpha, x)?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(invalid(format!("time t = {t} must be finite and nonnegative")));
    }
    let h = ctl.step;
    let n = spec.dim();
    let factor = spec.p_alpha(x);
    let lifetime = spec.lifetime(rng);
    // Processes drifting to the zero set are declared absorbed once the
    // remaining clock is negligible, as in one dimension.
    let tail_rate = spec.alpha_mean().filter(|m| *m < 0.0).map_or(0.0, |m| -0.5 * m);
    let mut incs: Vec<Increments<'_>> = spec.coords.iter().map(|c| Increments::new(c, h, rng)).collect();
    let mut xi = vec![0.0; n];
    let mut d = vec![0.0; n];
    let (mut zeta, mut clock) = (0.0f64, 0.0f64);
    for i in 0..ctl.max_steps {
        let t0 = i as f64 * h;
        let killed_here = t0 + h >= lifetime;
        let len = if killed_here { lifetime - t0 } else { h };
        for k in 0..n {
            d[k] = if killed_here { 0.0 } else { incs[k].next(rng) };
        }
        let dz = spec.alpha.iter().zip(&d).fold(0.0, |s, (a, v)| s + a * v);
        let linear = ctl.rule == ClockRule::ExactLinear && !killed_here;
        let scale = factor * zeta.exp();
        if !scale.is_finite() {
            return Err(Error::Overflow(format!("clock rate overflows at Lévy time {t0}")));
        }
        let width = scale * len * if linear { exp_ratio(dz) } else { 1.0 };
        if t < clock + width {
            let frac = if linear && dz != 0.0 {
                (dz * (t - clock) / (scale * h)).ln_1p() / dz
            } else if linear {
                (t - clock) / (scale * h)
            } else {
                0.0
            };
            return Ok(Some(x.iter().zip(xi.iter().zip(&d)).map(|(xk, (v, dv))| xk * (v + frac * dv).exp()).collect()));
        }
        if killed_here {
            return Ok(None);
        }
        clock += width;
        zeta += dz;
        for k in 0..n {
            xi[k] += d[k];
        }
        if tail_rate > 0.0 && factor * zeta.exp() / tail_rate < ctl.tail_eps * (t - clock) {
            return Ok(None);
        }
    }
    Err(Error::Budget(format!("clock did not reach {t} within {} steps", ctl.max_steps)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PotentialEstimate {
    pub value: f64,
    pub se: f64,
    pub n: usize,
    /// Share of the estimate contributed by the outermost unit shell of the
    /// log-box; a proxy for the mass lost outside it.
    pub truncation: f64,
    /// `truncation > 5%`.
    pub flagged: bool,
}

pub const DEFAULT_LOG_BOX: (f64, f64) = (-3.0, 3.0);
const BOX_PANEL: f64 = 0.1;
const BOX_ORDER: usize = 8;

/// Tensor nodes of the box in `u = ln x`, with weight `Π w_k e^{α_k u_k}
/// f_k(e^{u_k})` and `p_α(e^u)`; zero-weight nodes are dropped.
struct BoxNodes {
    weight: Vec<f64>,
    /// The part of `weight` from nodes in the outer unit shell.
    shell: Vec<f64>,
    p: Vec<f64>,
}

/// Beyond this many tensor nodes the weights are pooled onto a uniform grid
/// in `ln p`. The integrand depends on `x` only through `p_α(x)`, and
/// `e^{-λ p Î}` is smooth in `ln p`, so splitting each weight linearly
/// between its two neighbouring grid points moves the result by
/// `O(Δ²)` with `Δ` the grid spacing.
const MAX_NODES: usize = 4096;

impl BoxNodes {
    fn pooled(self) -> BoxNodes {
        if self.p.len() <= MAX_NODES {
            return self;
        }
        let logs: Vec<f64> = self.p.iter().map(|p| p.ln()).collect();
        let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let delta = (hi - lo) / (MAX_NODES - 1) as f64;
        let mut weight = vec![0.0; MAX_NODES];
        let mut shell = vec![0.0; MAX_NODES];
        for (j, l) in logs.iter().enumerate() {
            let pos = (l - lo) / delta;
            let i = (pos.floor() as usize).min(MAX_NODES - 2);
            let t = pos - i as f64;
            weight[i] += (1.0 - t) * self.weight[j];
            weight[i + 1] += t * self.weight[j];
            shell[i] += (1.0 - t) * self.shell[j];
            shell[i + 1] += t * self.shell[j];
        }
        let p = (0..MAX_NODES).map(|i| (lo + i as f64 * delta).exp()).collect();
        BoxNodes { weight, shell, p }
    }
}

fn box_nodes(alpha: &[f64], f: &ProductFunction, log_box: (f64, f64)) -> BoxNodes {
    let (lo, hi) = log_box;
    // Per coordinate: (weight, α u, in shell), on the part of the box where
    // the factor is not negligible so that panel ends align with its support.
    let axes: Vec<Vec<(f64, f64, bool)>> = alpha
        .iter()
        .zip(&f.factors)
        .map(|(&a, fk)| {
            let (s_lo, s_hi) = fk.effective_support();
            let (a_lo, a_hi) = (lo.max(s_lo.ln()), hi.min(s_hi.ln()));
            if !(a_hi > a_lo) {
                return Vec::new();
            }
            let panels = ((a_hi - a_lo) / BOX_PANEL).ceil() as usize;
            let rule = CompositeRule::new(a_lo, a_hi, panels, BOX_ORDER);
            rule.nodes
                .iter()
                .zip(&rule.weights)
                .map(|(&u, &w)| (w * (a * u).exp() * fk.eval(u.exp()), a * u, u < lo + 1.0 || u > hi - 1.0))
                .filter(|node| node.0 != 0.0)
                .collect()
        })
        .collect();
    let mut out = BoxNodes {
        weight: Vec::new(),
        shell: Vec::new(),
        p: Vec::new(),
    };
    if axes.iter().any(Vec::is_empty) {
        return out;
    }
    let mut idx = vec![0usize; axes.len()];
    loop {
        let (mut w, mut s, mut shell) = (1.0, 0.0, false);
        for (k, &i) in idx.iter().enumerate() {
            let (wk, sk, bk) = axes[k][i];
            w *= wk;
            s += sk;
            shell |= bk;
        }
        out.weight.push(w);
        out.shell.push(if shell { w } else { 0.0 });
        out.p.push(s.exp());
        let mut k = 0;
        loop {
            idx[k] += 1;
            if idx[k] < axes[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
            if k == axes.len() {
                return out.pooled();
            }
        }
    }
}

/// `ν_λ f` over `[e^{lo}, e^{hi}]^n`: per draw of `Î`, a tensor
/// Gauss–Legendre rule in log coordinates.
pub fn mssmp_potential_estimate(
    spec: &MultiSpec,
    lam: f64,
    f: &ProductFunction,
    log_box: (f64, f64),
    n: usize,
    streams: Streams,
    ctl: SampleControl,
) -> Result<PotentialEstimate> {
    f.validate(spec.dim())?;
    spec.potential_rate()?;
    if !(lam > 0.0 && lam.is_finite()) {
        return Err(invalid(format!("Laplace variable λ = {lam} must be positive")));
    }
    if !(log_box.0 < log_box.1 && log_box.0.is_finite() && log_box.1.is_finite()) {
        return Err(invalid(format!("bad log-box {log_box:?}")));
    }
    if n < 2 {
        return Err(Error::Size(format!("need at least 2 draws, got {n}")));
    }
    let nodes = box_nodes(&spec.alpha, f, log_box);
    let per = try_par_replicas(streams, n, |_, rng| -> Result<(f64, f64)> {
        let i_hat = spec.sample_dual_functional(&ctl, rng)?.value;
        let (mut all, mut shell) = (0.0, 0.0);
        for j in 0..nodes.weight.len() {
            let e = (-lam * nodes.p[j] * i_hat).exp();
            all += nodes.weight[j] * e;
            shell += nodes.shell[j] * e;
        }
        Ok((all, shell))
    })?;
    let (vals, shells): (Vec<f64>, Vec<f64>) = per.into_iter().unzip();
    let est = Estimate::from_draws(&vals);
    let shell_mean = crate::stats::mean(&shells);
    let truncation = if est.value == 0.0 { 0.0 } else { (shell_mean / est.value).abs() };
    Ok(PotentialEstimate {
        value: est.value,
        se: est.se,
        n,
        truncation,
        flagged: truncation > 0.05,
    })
}

/// Scale of the Laplace proposal for log-starting points.
const PROPOSAL_SCALE: f64 = 1.5;

/// Mean of `u` under `f(e^u) e^{αu} du` on a coarse grid: where the
/// proposal for `ln x` is centered.
fn log_center(f: &crate::test_fn::TestFunction, alpha: f64) -> f64 {
    let (mut sw, mut su) = (0.0, 0.0);
    for i in 0..=400 {
        let u = -10.0 + 0.05 * i as f64;
        let w = f.eval(u.exp()) * (alpha * u).exp();
        sw += w;
        su += w * u;
    }
    if sw > 0.0 && sw.is_finite() {
        su / sw
    } else {
        0.0
    }
}

/// Right side from box quadrature of `(ν_κ f - ν_λ f) / (λ - κ)`, left side
/// by importance sampling of starting points over all of `(0, ∞)^n`: `ln x`
/// is drawn from a product of Laplace laws centered on the bulk of `f`,
/// weighted by `m(dx)` over the proposal density and by
/// `E[e^{-κ p_α(x) Î}]` (one draw), and the process is read at an
/// independent `Exp(λ)` time. The box must contain the support of `f`.
pub(super) fn resolvent_sides(
    ctx: &CheckContext,
    spec: &MultiSpec,
    lam: f64,
    kappa: f64,
    f: &ProductFunction,
    n: usize,
) -> Result<(Estimate, Estimate)> {
    f.validate(spec.dim())?;
    spec.potential_rate()?;
    let ctl = ctx.ctl;
    let nodes = box_nodes(&spec.alpha, f, DEFAULT_LOG_BOX);
    let rhs = try_par_replicas(ctx.streams.named("resolvent_multi_rhs"), n, |_, rng| -> Result<f64> {
        let i_hat = spec.sample_dual_functional(&ctl, rng)?.value;
        let mut acc = 0.0;
        for j in 0..nodes.weight.len() {
            let z = nodes.p[j] * i_hat;
            acc += nodes.weight[j] * ((-kappa * z).exp() - (-lam * z).exp());
        }
        Ok(acc / (lam - kappa))
    })?;
    let centers: Vec<f64> = f.factors.iter().zip(&spec.alpha).map(|(fk, &a)| log_center(fk, a)).collect();
    let lhs = try_par_replicas(ctx.streams.named("resolvent_multi_lhs"), n, |_, rng| -> Result<f64> {
        let mut x = Vec::with_capacity(centers.len());
        let mut log_w = 0.0;
        for (k, &c) in centers.iter().enumerate() {
            let e: f64 = Exp1.sample(rng);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let u = c + sign * PROPOSAL_SCALE * e;
            // m(dx) in u is e^{α u} du; the proposal density is
            // e^{-|u - c|/s} / (2s).
            log_w += spec.alpha[k] * u + e + (2.0 * PROPOSAL_SCALE).ln();
            x.push(u.exp());
        }
        let i_hat = spec.sample_dual_functional(&ctl, rng)?.value;
        let kern = log_w.exp() * (-kappa * spec.p_alpha(&x) * i_hat).exp();
        if kern == 0.0 {
            return Ok(0.0);
        }
        let s: f64 = Exp1.sample(rng);
        Ok(match mssmp_at(spec, &x, s / lam, &ctl, rng)? {
            Some(state) => kern * f.eval(&state) / lam,
            None => 0.0,
        })
    })?;
    Ok((Estimate::from_draws(&lhs), Estimate::from_draws(&rhs)))
}
