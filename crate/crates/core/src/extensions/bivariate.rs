//! A pair of subordinators `(Z, h)` with drifts and simultaneous compound
//! Poisson jumps, the process
//! `R_t = a + x^α V_{τ(t x^{-α})}`, `H_t = x e^{h_{τ(t x^{-α})}}` with
//! `V = ∫ e^{α h_{s-}} dZ_s` and `τ` the inverse of `∫ e^{α h}`, and the
//! entrance law
//! `μ̃_t f = E[f(t Ĩ / I_h, (t / I_h)^{1/α}) / I_h]` with
//! `Ĩ = ∫ e^{-α h_s} dZ_s` and `I_h = ∫ e^{-α h_s} ds`.
//!
//! Between jumps `h` is linear, so every functional here is computed in
//! closed form along an event-driven path. In `Ĩ` a jump of `Z` is weighted
//! by the value of `h` after a simultaneous jump; in `V` by the value
//! before it. The two conventions are time reversals of each other.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use super::{Estimate, ProductFunction};
use crate::entrance::CheckContext;
use crate::error::{invalid, Error, Result};
use crate::exp_functional::SampleControl;
use crate::lamperti::exp_ratio;
use crate::quad::{self, CompositeRule};
use crate::rng::try_par_replicas;
use crate::rng::Streams;

/// Laws on `[0, ∞)` for the jump sizes of `Z` and `h`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum PositiveLaw {
    Exponential { rate: f64 },
    Dirac { value: f64 },
    /// `P(Y > y) = (y / scale)^{-index}` for `y ≥ scale`.
    Pareto { scale: f64, index: f64 },
    /// `P(Y > y) = (ln y)^{-index}` for `y ≥ e`.
    LogPareto { index: f64 },
}

impl PositiveLaw {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            PositiveLaw::Exponential { rate } => rate > 0.0 && rate.is_finite(),
            PositiveLaw::Dirac { value } => value >= 0.0 && value.is_finite(),
            PositiveLaw::Pareto { scale, index } => scale > 0.0 && scale.is_finite() && index > 0.0 && index.is_finite(),
            PositiveLaw::LogPareto { index } => index > 0.0 && index.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("bad positive jump law: {self:?}")))
        }
    }

    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            PositiveLaw::Exponential { rate } => -(-u).ln_1p() / rate,
            PositiveLaw::Dirac { value } => value,
            PositiveLaw::Pareto { scale, index } => scale * (1.0 - u).powf(-1.0 / index),
            PositiveLaw::LogPareto { index } => (1.0 - u).powf(-1.0 / index).exp(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.random::<f64>())
    }

    /// `P(Y > y)`.
    pub fn tail(&self, y: f64) -> f64 {
        match *self {
            PositiveLaw::Exponential { rate } => (-rate * y.max(0.0)).exp(),
            PositiveLaw::Dirac { value } => f64::from(u8::from(y < value)),
            PositiveLaw::Pareto { scale, index } => {
                if y < scale {
                    1.0
                } else {
                    (y / scale).powf(-index)
                }
            }
            PositiveLaw::LogPareto { index } => {
                if y < std::f64::consts::E {
                    1.0
                } else {
                    y.ln().powf(-index)
                }
            }
        }
    }

    pub fn mean(&self) -> Option<f64> {
        match *self {
            PositiveLaw::Exponential { rate } => Some(1.0 / rate),
            PositiveLaw::Dirac { value } => Some(value),
            PositiveLaw::Pareto { scale, index } if index > 1.0 => Some(index * scale / (index - 1.0)),
            _ => None,
        }
    }

    /// `E[e^{-s Y}]` for `s ≥ 0`.
    pub fn laplace(&self, s: f64) -> Result<f64> {
        match *self {
            PositiveLaw::Exponential { rate } => Ok(rate / (rate + s)),
            PositiveLaw::Dirac { value } => Ok((-s * value).exp()),
            _ if s == 0.0 => Ok(1.0),
            _ => Ok(quad::integrate(|u| (-s * self.quantile(u)).exp(), 0.0, 1.0, 1e-15, 1e-12)?.value),
        }
    }

    /// `∫_a^b P(Y > z) dz` for `0 ≤ a ≤ b < ∞`.
    pub fn tail_integral(&self, a: f64, b: f64) -> Result<f64> {
        if b <= a {
            return Ok(0.0);
        }
        let flat = |kink: f64| (b.min(kink) - a).max(0.0);
        Ok(match *self {
            PositiveLaw::Exponential { rate } => ((-rate * a).exp() - (-rate * b).exp()) / rate,
            PositiveLaw::Dirac { value } => flat(value),
            PositiveLaw::Pareto { scale, index } => {
                let lo = a.max(scale);
                let upper = if b > lo {
                    if (index - 1.0).abs() < 1e-12 {
                        scale * (b / lo).ln()
                    } else {
                        scale.powf(index) * (b.powf(1.0 - index) - lo.powf(1.0 - index)) / (1.0 - index)
                    }
                } else {
                    0.0
                };
                flat(scale) + upper
            }
            PositiveLaw::LogPareto { index } => {
                let e = std::f64::consts::E;
                let lo = a.max(e);
                let upper = if b > lo {
                    // In v = ln z: ∫ v^{-index} e^v dv.
                    quad::integrate(|v| v.powf(-index) * v.exp(), lo.ln(), b.ln(), 0.0, 1e-12)?.value
                } else {
                    0.0
                };
                flat(e) + upper
            }
        })
    }

    /// Density of `ln Y` at `w`, ignoring atoms.
    fn log_density(&self, w: f64) -> f64 {
        match *self {
            PositiveLaw::Exponential { rate } => (w - rate * w.exp()).exp(),
            PositiveLaw::Dirac { .. } => 0.0,
            PositiveLaw::Pareto { scale, index } => {
                let w0 = scale.ln();
                if w < w0 {
                    0.0
                } else {
                    index * (-index * (w - w0)).exp()
                }
            }
            PositiveLaw::LogPareto { index } => {
                if w < 1.0 {
                    0.0
                } else {
                    index * w.powf(-index - 1.0)
                }
            }
        }
    }

    /// Point where `log_density` is not smooth, if any.
    fn log_kink(&self) -> Option<f64> {
        match *self {
            PositiveLaw::Pareto { scale, .. } => Some(scale.ln()),
            PositiveLaw::LogPareto { .. } => Some(1.0),
            _ => None,
        }
    }

    fn atom(&self) -> Option<f64> {
        match *self {
            PositiveLaw::Dirac { value } => Some(value),
            _ => None,
        }
    }
}

/// How the simultaneous jumps `(ΔZ, Δh)` are coupled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "coupling", rename_all = "snake_case", deny_unknown_fields)]
pub enum JointJumpLaw {
    Independent { z: PositiveLaw, h: PositiveLaw },
    /// Both coordinates are quantile transforms of one uniform variable.
    Comonotone { z: PositiveLaw, h: PositiveLaw },
}

impl JointJumpLaw {
    pub fn marginals(&self) -> (&PositiveLaw, &PositiveLaw) {
        match self {
            JointJumpLaw::Independent { z, h } | JointJumpLaw::Comonotone { z, h } => (z, h),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        match self {
            JointJumpLaw::Independent { z, h } => (z.sample(rng), h.sample(rng)),
            JointJumpLaw::Comonotone { z, h } => {
                let u: f64 = rng.random();
                (z.quantile(u), h.quantile(u))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BivariateSubSpec {
    #[serde(default)]
    pub d_z: f64,
    #[serde(default)]
    pub d_h: f64,
    #[serde(rename = "lambda", default)]
    pub jump_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jumps: Option<JointJumpLaw>,
}

impl BivariateSubSpec {
    pub fn drifts(d_z: f64, d_h: f64) -> Self {
        Self {
            d_z,
            d_h,
            jump_rate: 0.0,
            jumps: None,
        }
    }

    pub fn with_jumps(mut self, rate: f64, law: JointJumpLaw) -> Self {
        self.jump_rate = rate;
        self.jumps = Some(law);
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("d_z", self.d_z), ("d_h", self.d_h), ("lambda", self.jump_rate)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} = {v} must be finite and nonnegative")));
            }
        }
        match &self.jumps {
            Some(law) => {
                let (z, h) = law.marginals();
                z.validate()?;
                h.validate()
            }
            None if self.jump_rate > 0.0 => Err(invalid("positive jump rate without a jump law")),
            None => Ok(()),
        }
    }

    fn active_jumps(&self) -> Option<&JointJumpLaw> {
        self.jumps.as_ref().filter(|_| self.jump_rate > 0.0)
    }

    /// Laplace exponent `Φ_h(s) = s d_h + λ(1 - E[e^{-s Δh}])` of `h`.
    pub fn h_exponent(&self, s: f64) -> Result<f64> {
        let jumps = match self.active_jumps() {
            Some(law) => self.jump_rate * (1.0 - law.marginals().1.laplace(s)?),
            None => 0.0,
        };
        Ok(s * self.d_h + jumps)
    }

    fn next_event<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<(f64, f64, f64)> {
        let law = self.active_jumps()?;
        let e: f64 = Exp1.sample(rng);
        let (dz, dh) = law.sample(rng);
        Some((e / self.jump_rate, dz, dh))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LmVerdict {
    Finite,
    Infinite,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmCheck {
    /// `∫_e^{x_max} (ln y / A_h(ln y)) Π_Z(dy)`.
    pub integral: f64,
    /// Extrapolated remainder beyond `x_max` (infinite when divergent).
    pub tail: f64,
    /// Ratio of the last two dyadic blocks in `ln y`.
    pub ratio: f64,
    pub verdict: LmVerdict,
    pub rationale: String,
}

/// Evaluates the integral condition under which `∫ e^{-αh_{s-}} dZ_s`
/// converges, up to `ln x_max = log_x_max`, on dyadic blocks
/// `[2^k, 2^{k+1}]` in `w = ln y`. The ratio `r` of the last two blocks
/// decides: `r < 0.8` is read as geometric decay with remainder
/// `I_last·r/(1-r)`, `r ≥ 0.95` as divergence, anything between as
/// inconclusive.
pub fn lindner_maller_check(spec: &BivariateSubSpec, log_x_max: f64) -> Result<LmCheck> {
    spec.validate()?;
    if !(log_x_max >= 8.0 && log_x_max.is_finite()) {
        return Err(invalid(format!("ln x_max = {log_x_max} must be at least 8")));
    }
    let Some(law) = spec.active_jumps() else {
        return Ok(LmCheck {
            integral: 0.0,
            tail: 0.0,
            ratio: 0.0,
            verdict: LmVerdict::Finite,
            rationale: "Z has no jumps".into(),
        });
    };
    let (zl, hl) = law.marginals();
    let lam = spec.jump_rate;
    let a0 = (lam * hl.tail(1.0)).max(1.0);
    let a_h = |w: f64| -> Result<f64> { Ok(a0 + lam * hl.tail_integral(1.0, w)?) };

    let blocks = log_x_max.log2().floor() as i32;
    let mut parts = Vec::with_capacity(blocks as usize);
    for k in 0..blocks {
        let (lo, hi) = (2f64.powi(k), 2f64.powi(k + 1));
        let mut cuts = vec![lo];
        if let Some(c) = zl.log_kink().filter(|&c| c > lo && c < hi) {
            cuts.push(c);
        }
        cuts.push(hi);
        let mut block = 0.0;
        for w in cuts.windows(2) {
            // A_h is continuous, so any failure surfaces here rather than
            // inside the integrand.
            a_h(w[1])?;
            let g = |v: f64| v / a_h(v).unwrap_or(f64::NAN) * zl.log_density(v);
            block += quad::integrate(g, w[0], w[1], 0.0, 1e-10)?.value;
        }
        if let Some(v) = zl.atom().filter(|&v| v > 0.0) {
            let w = v.ln();
            if w >= lo && w < hi {
                block += w / a_h(w)?;
            }
        }
        parts.push(lam * block);
    }
    let integral: f64 = parts.iter().sum();
    let (prev, last) = (parts[parts.len() - 2], parts[parts.len() - 1]);
    let ratio = if last == 0.0 { 0.0 } else { last / prev };
    let (verdict, tail, rationale) = if ratio < 0.8 {
        (
            LmVerdict::Finite,
            last * ratio / (1.0 - ratio),
            format!("dyadic blocks decay geometrically with ratio {ratio:.4}"),
        )
    } else if ratio >= 0.95 {
        (
            LmVerdict::Infinite,
            f64::INFINITY,
            format!("dyadic blocks do not decay (ratio {ratio:.4})"),
        )
    } else {
        (
            LmVerdict::Inconclusive,
            f64::NAN,
            format!("block ratio {ratio:.4} is too close to 1 to extrapolate"),
        )
    };
    Ok(LmCheck {
        integral,
        tail,
        ratio,
        verdict,
        rationale,
    })
}

/// A jump of `(Z, h)` at absolute Lévy time `time`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointEvent {
    pub time: f64,
    pub dz: f64,
    pub dh: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RhPath {
    pub times: Vec<f64>,
    pub r: Vec<f64>,
    pub h: Vec<f64>,
}

impl RhPath {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,R,H\n");
        for i in 0..self.times.len() {
            out.push_str(&format!("{:.12e},{:.12e},{:.12e}\n", self.times[i], self.r[i], self.h[i]));
        }
        out
    }
}

/// `(R_t, H_t)` at sorted times `ts`, for jumps delivered by `next` as
/// `(gap, ΔZ, Δh)`.
#[allow(clippy::too_many_arguments)]
fn rh_driver<F>(
    d_z: f64,
    d_h: f64,
    a: f64,
    x: f64,
    alpha: f64,
    ts: &[f64],
    max_events: usize,
    mut next: F,
) -> Result<Vec<(f64, f64)>>
where
    F: FnMut() -> Option<(f64, f64, f64)>,
{
    if !(x > 0.0 && x.is_finite() && a >= 0.0 && alpha > 0.0) {
        return Err(invalid(format!("need a ≥ 0, x > 0, α > 0, got a = {a}, x = {x}, α = {alpha}")));
    }
    if ts.iter().any(|&t| !(t >= 0.0 && t.is_finite())) || ts.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("times must be sorted, finite and nonnegative"));
    }
    let scale_x = x.powf(alpha);
    let mut out = Vec::with_capacity(ts.len());
    let (mut h, mut v, mut clock) = (0.0f64, 0.0f64, 0.0f64);
    let mut pending = next();
    let mut events = 0usize;
    let mut j = 0;
    while j < ts.len() {
        let e = (alpha * h).exp();
        if !e.is_finite() {
            return Err(Error::Overflow(format!("e^(αh) overflows at h = {h:.6e}")));
        }
        let gap = pending.map_or(f64::INFINITY, |p| p.0);
        let full = if gap.is_finite() { e * gap * exp_ratio(alpha * d_h * gap) } else { f64::INFINITY };
        // A target at a jump time sees the post-jump state.
        while j < ts.len() && ts[j] / scale_x < clock + full {
            let rem = ts[j] / scale_x - clock;
            let delta = if d_h > 0.0 {
                (alpha * d_h * rem / e).ln_1p() / (alpha * d_h)
            } else {
                rem / e
            };
            let hv = x * (h + d_h * delta).exp();
            if !hv.is_finite() {
                return Err(Error::Overflow(format!("H overflows at t = {}", ts[j])));
            }
            out.push((a + scale_x * (v + d_z * rem), hv));
            j += 1;
        }
        let Some((gap, dz, dh)) = pending else { break };
        events += 1;
        if events > max_events {
            return Err(Error::Budget(format!("more than {max_events} jumps before t = {}", ts[j])));
        }
        clock += full;
        v += d_z * full;
        h += d_h * gap;
        // The jump of Z is weighted by h before the simultaneous jump of h.
        v += (alpha * h).exp() * dz;
        h += dh;
        if !v.is_finite() {
            return Err(Error::Overflow("V overflows".into()));
        }
        pending = next();
    }
    Ok(out)
}

fn grid(horizon: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && horizon >= 0.0 && horizon.is_finite()) {
        return Err(invalid(format!("need step > 0 and finite horizon ≥ 0, got {step}, {horizon}")));
    }
    let n = (horizon / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| i as f64 * step).collect())
}

fn to_path(ts: Vec<f64>, pts: Vec<(f64, f64)>) -> RhPath {
    let (r, h) = pts.into_iter().unzip();
    RhPath { times: ts, r, h }
}

/// `(R, H)` under `Q_{a,x}` on the grid `0, step, …, horizon`. Time-change
/// and integrals are exact for the event-driven driver, so `step` only
/// selects the output points.
#[allow(clippy::too_many_arguments)]
pub fn simulate_rh<R: Rng + ?Sized>(
    spec: &BivariateSubSpec,
    a: f64,
    x: f64,
    alpha: f64,
    horizon: f64,
    step: f64,
    max_events: usize,
    rng: &mut R,
) -> Result<RhPath> {
    spec.validate()?;
    let ts = grid(horizon, step)?;
    let pts = rh_driver(spec.d_z, spec.d_h, a, x, alpha, &ts, max_events, || spec.next_event(rng))?;
    Ok(to_path(ts, pts))
}

/// `(R, H)` driven by drifts and the given jumps (sorted by time), read at
/// the grid `0, step, …, horizon`.
#[allow(clippy::too_many_arguments)]
pub fn rh_from_events(
    d_z: f64,
    d_h: f64,
    events: &[JointEvent],
    a: f64,
    x: f64,
    alpha: f64,
    horizon: f64,
    step: f64,
) -> Result<RhPath> {
    if events.windows(2).any(|w| w[1].time < w[0].time) || events.first().is_some_and(|e| e.time < 0.0) {
        return Err(invalid("events must be sorted by nonnegative time"));
    }
    let ts = grid(horizon, step)?;
    let mut it = events.iter();
    let mut last = 0.0;
    let pts = rh_driver(d_z, d_h, a, x, alpha, &ts, events.len(), || {
        it.next().map(|e| {
            let gap = e.time - last;
            last = e.time;
            (gap, e.dz, e.dh)
        })
    })?;
    Ok(to_path(ts, pts))
}

fn rh_at<R: Rng + ?Sized>(
    spec: &BivariateSubSpec,
    state: (f64, f64),
    alpha: f64,
    t: f64,
    max_events: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let pts = rh_driver(spec.d_z, spec.d_h, state.0, state.1, alpha, &[t], max_events, || {
        spec.next_event(rng)
    })?;
    Ok(pts[0])
}

/// One draw of `(Ĩ, I_h)` from a single path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TildeSample {
    pub tilde: f64,
    pub i_h: f64,
    pub truncated: bool,
    /// Expected remainder of `I_h` beyond the stopping point.
    pub tail_bound: f64,
}

pub struct TildeSampler {
    spec: BivariateSubSpec,
    alpha: f64,
    ctl: SampleControl,
    /// `1 / E[I_h] = Φ_h(α)`.
    phi: f64,
    /// Upper bound on `E[Ĩ]`, when finite.
    tilde_mean: Option<f64>,
}

/// Large enough that the dyadic test sees twenty blocks.
const LM_LOG_X_MAX: f64 = 1_048_576.0;

impl TildeSampler {
    /// Refuses unless `h → ∞` and the integral condition holds.
    pub fn new(spec: &BivariateSubSpec, alpha: f64, ctl: SampleControl) -> Result<Self> {
        spec.validate()?;
        ctl.validate()?;
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(invalid(format!("alpha = {alpha} must be positive")));
        }
        let phi = spec.h_exponent(alpha)?;
        if !(phi > 0.0) {
            return Err(Error::Precondition("h does not drift to infinity: I_h is infinite".into()));
        }
        let lm = lindner_maller_check(spec, LM_LOG_X_MAX)?;
        if lm.verdict != LmVerdict::Finite {
            return Err(Error::Precondition(format!(
                "integral condition not established ({:?}): {}",
                lm.verdict, lm.rationale
            )));
        }
        let jump_part = match spec.active_jumps() {
            None => Some(0.0),
            Some(JointJumpLaw::Independent { z, h }) => z.mean().map(|m| m * h.laplace(alpha).unwrap_or(1.0)),
            Some(JointJumpLaw::Comonotone { z, .. }) => z.mean(),
        };
        let tilde_mean = jump_part.map(|m| (spec.d_z + spec.jump_rate * m) / phi);
        Ok(Self {
            spec: spec.clone(),
            alpha,
            ctl,
            phi,
            tilde_mean,
        })
    }

    pub fn spec(&self) -> &BivariateSubSpec {
        &self.spec
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<TildeSample> {
        let a = self.alpha;
        let (d_z, d_h) = (self.spec.d_z, self.spec.d_h);
        let eps = self.ctl.tail_eps;
        let (mut h, mut i_h, mut tilde) = (0.0f64, 0.0f64, 0.0f64);
        for _ in 0..self.ctl.max_steps {
            let w = (-a * h).exp();
            let Some((gap, dz, dh)) = self.spec.next_event(rng) else {
                // Pure drift from here on; d_h > 0 by the precondition.
                let seg = w / (a * d_h);
                return Ok(TildeSample {
                    tilde: tilde + d_z * seg,
                    i_h: i_h + seg,
                    truncated: false,
                    tail_bound: 0.0,
                });
            };
            let seg = w * gap * exp_ratio(-a * d_h * gap);
            i_h += seg;
            tilde += d_z * seg;
            h += d_h * gap + dh;
            // Post-jump weight for the jump of Z.
            let w = (-a * h).exp();
            tilde += w * dz;
            let bound = w / self.phi;
            let tilde_ok = self.tilde_mean.is_none_or(|m| w * m <= eps * tilde);
            if bound <= eps * i_h && tilde_ok {
                return Ok(TildeSample {
                    tilde,
                    i_h,
                    truncated: true,
                    tail_bound: bound,
                });
            }
        }
        Err(Error::Budget(format!(
            "no termination within {} jumps",
            self.ctl.max_steps
        )))
    }

    pub fn draw(&self, n: usize, streams: Streams) -> Result<Vec<TildeSample>> {
        try_par_replicas(streams, n, |_, r| self.sample(r))
    }
}

fn check_f2(f: &ProductFunction) -> Result<()> {
    f.validate(2)
}

/// `μ̃_t f = E[f(t Ĩ / I_h, (t / I_h)^{1/α}) / I_h]`.
#[allow(clippy::too_many_arguments)]
pub fn entrance_tilde_estimate(
    spec: &BivariateSubSpec,
    alpha: f64,
    t: f64,
    f: &ProductFunction,
    n: usize,
    streams: Streams,
    ctl: SampleControl,
) -> Result<Estimate> {
    check_f2(f)?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(invalid(format!("time t = {t} must be positive")));
    }
    let sampler = TildeSampler::new(spec, alpha, ctl)?;
    if f.is_zero() {
        return Ok(Estimate { value: 0.0, se: 0.0, n });
    }
    let draws = sampler.draw(n, streams)?;
    let vals: Vec<f64> = draws
        .iter()
        .map(|d| {
            let u = t / d.i_h;
            f.eval(&[u * d.tilde, u.powf(1.0 / alpha)]) / d.i_h
        })
        .collect();
    Ok(Estimate::from_draws(&vals))
}

const RES_PANEL: f64 = 0.25;
const RES_ORDER: usize = 8;

/// `∫_0^∞ (e^{-κ I u} - e^{-λ I u}) / (λ - κ) · f(u Ĩ, u^{1/α}) du` for one
/// draw, by a composite rule in `ln u` over the part of the half line
/// where `f` and the kernel are not negligible.
fn resolvent_rhs_draw(d: &TildeSample, alpha: f64, lam: f64, kappa: f64, f: &ProductFunction) -> f64 {
    let (rl, rh) = f.factors[0].effective_support();
    let (yl, yh) = f.factors[1].effective_support();
    let mut u_lo = (1e-12 / (lam.max(kappa) * d.i_h)).max(yl.powf(alpha));
    let mut u_hi = (40.0 / (lam.min(kappa) * d.i_h)).min(yh.powf(alpha));
    if d.tilde > 0.0 {
        u_lo = u_lo.max(rl / d.tilde);
        u_hi = u_hi.min(rh / d.tilde);
    } else if f.factors[0].eval(0.0) == 0.0 {
        return 0.0;
    }
    if !(u_hi > u_lo) {
        return 0.0;
    }
    let (v_lo, v_hi) = (u_lo.ln(), u_hi.ln());
    let panels = ((v_hi - v_lo) / RES_PANEL).ceil().max(1.0) as usize;
    let rule = CompositeRule::new(v_lo, v_hi, panels, RES_ORDER);
    rule.apply(|v| {
        let u = v.exp();
        let k = ((-kappa * d.i_h * u).exp() - (-lam * d.i_h * u).exp()) / (lam - kappa);
        u * k * f.eval(&[u * d.tilde, u.powf(1.0 / alpha)])
    })
}

/// Both sides of the resolvent identity, per draw of `(Ĩ, I_h)`. The left
/// side draws `u ~ Exp(κ I_h)`, starts `(R, H)` at `(u Ĩ, u^{1/α})` and
/// reads it at an independent `Exp(λ)` time, so its per-draw value is
/// `f(state) / (λ κ I_h)`. The returned standard error is that of the
/// paired difference.
pub(super) fn resolvent_sides(
    ctx: &CheckContext,
    spec: &BivariateSubSpec,
    alpha: f64,
    lam: f64,
    kappa: f64,
    f: &ProductFunction,
    n: usize,
) -> Result<(Estimate, Estimate, f64)> {
    check_f2(f)?;
    let sampler = TildeSampler::new(spec, alpha, ctx.ctl)?;
    let max_events = ctx.ctl.max_steps as usize;
    let pairs = try_par_replicas(ctx.streams.named("resolvent_tilde"), n, |_, rng| -> Result<(f64, f64)> {
        let d = sampler.sample(rng)?;
        let rhs = resolvent_rhs_draw(&d, alpha, lam, kappa, f);
        let e1: f64 = Exp1.sample(rng);
        let e2: f64 = Exp1.sample(rng);
        let u = e1 / (kappa * d.i_h);
        let state = (u * d.tilde, u.powf(1.0 / alpha));
        let (r, hv) = rh_at(spec, state, alpha, e2 / lam, max_events, rng)?;
        Ok((f.eval(&[r, hv]) / (lam * kappa * d.i_h), rhs))
    })?;
    let (l, r): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    let diff: Vec<f64> = pairs.iter().map(|(a, b)| a - b).collect();
    Ok((Estimate::from_draws(&l), Estimate::from_draws(&r), Estimate::from_draws(&diff).se))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_fn::TestFunction;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn pure_drift_paths() {
        let mut rng = Streams::new(1).replica(0);
        let p = simulate_rh(&BivariateSubSpec::drifts(1.0, 0.0), 0.0, 1.0, 1.0, 5.0, 0.5, 10, &mut rng).unwrap();
        for i in 0..p.times.len() {
            assert!(close(p.r[i], p.times[i], 1e-14));
            assert_eq!(p.h[i], 1.0);
        }
        let (c, x, alpha, a) = (0.7, 1.3, 1.5, 2.0);
        let p = simulate_rh(&BivariateSubSpec::drifts(0.0, c), a, x, alpha, 4.0, 0.25, 10, &mut rng).unwrap();
        for i in 0..p.times.len() {
            assert_eq!(p.r[i], a);
            let want = (x.powf(alpha) + alpha * c * p.times[i]).powf(1.0 / alpha);
            assert!(close(p.h[i], want, 1e-12), "{} vs {want}", p.h[i]);
        }
    }

    #[test]
    fn joint_jump_uses_left_limit_of_h() {
        let ev = [
            JointEvent { time: 1.0, dz: 1.0, dh: 1.0 },
            JointEvent { time: 2.0, dz: 1.0, dh: 0.0 },
        ];
        let p = rh_from_events(0.0, 0.0, &ev, 0.0, 1.0, 1.0, 10.0, 0.5).unwrap();
        // Clock is s for s < 1, then 1 + e(s - 1), so s = 2 is reached at 1 + e.
        let end = *p.r.last().unwrap();
        assert!(close(end, 1.0 + std::f64::consts::E, 1e-14), "{end}");
        let before = p.times.iter().position(|&t| t >= 1.0).unwrap();
        assert_eq!(p.r[before - 1], 0.0);
        assert!(close(p.r[before], 1.0, 1e-14));
        assert!(close(p.h[before], std::f64::consts::E, 1e-14));
    }

    #[test]
    fn lm_verdicts() {
        let exp = PositiveLaw::Exponential { rate: 1.0 };
        let ind = |z| BivariateSubSpec::drifts(0.0, 1.0).with_jumps(1.0, JointJumpLaw::Independent { z, h: exp });
        let lm = lindner_maller_check(&ind(exp), 1e6).unwrap();
        assert_eq!(lm.verdict, LmVerdict::Finite);
        let lm = lindner_maller_check(&ind(PositiveLaw::LogPareto { index: 0.5 }), 1e6).unwrap();
        assert_eq!(lm.verdict, LmVerdict::Infinite, "{lm:?}");
        let lm = lindner_maller_check(&ind(PositiveLaw::LogPareto { index: 1.5 }), 1e6).unwrap();
        assert_eq!(lm.verdict, LmVerdict::Finite, "{lm:?}");
        let lm = lindner_maller_check(&BivariateSubSpec::drifts(1.0, 1.0), 1e6).unwrap();
        assert_eq!((lm.integral, lm.verdict), (0.0, LmVerdict::Finite));
    }

    #[test]
    fn lm_integral_matches_quadrature() {
        // Π_Z = Pareto(1, 2) jumps at rate 2, Π_h Dirac at 0.5 so A_h ≡ 1.
        let spec = BivariateSubSpec::drifts(0.0, 1.0).with_jumps(
            2.0,
            JointJumpLaw::Independent {
                z: PositiveLaw::Pareto { scale: 1.0, index: 2.0 },
                h: PositiveLaw::Dirac { value: 0.5 },
            },
        );
        let lm = lindner_maller_check(&spec, 64.0).unwrap();
        // 2 ∫_1^64 w · 2 e^{-2w} dw.
        let want = 4.0 * ((1.0f64 / 2.0 + 1.0 / 4.0) * (-2.0f64).exp() - (64.0 / 2.0 + 0.25) * (-128f64).exp());
        assert!(close(lm.integral, want, 1e-9), "{} vs {want}", lm.integral);
    }

    #[test]
    fn tail_integrals() {
        let laws = [
            PositiveLaw::Exponential { rate: 0.7 },
            PositiveLaw::Dirac { value: 2.5 },
            PositiveLaw::Pareto { scale: 1.5, index: 1.3 },
            PositiveLaw::Pareto { scale: 0.5, index: 1.0 },
            PositiveLaw::LogPareto { index: 0.5 },
        ];
        for law in laws {
            let want = quad::integrate(|z| law.tail(z), 0.2, 1.5, 0.0, 1e-12).unwrap().value
                + quad::integrate(|z| law.tail(z), 1.5, 2.5, 0.0, 1e-12).unwrap().value
                + quad::integrate(|z| law.tail(z), 2.5, std::f64::consts::E, 0.0, 1e-12).unwrap().value
                + quad::integrate(|z| law.tail(z), std::f64::consts::E, 9.0, 0.0, 1e-12).unwrap().value;
            let got = law.tail_integral(0.2, 9.0).unwrap();
            assert!(close(got, want, 1e-9), "{law:?}: {got} vs {want}");
        }
    }

    #[test]
    fn pure_drift_entrance_is_point_mass() {
        let spec = BivariateSubSpec::drifts(1.0, 1.0);
        let mut rng = Streams::new(3).replica(0);
        let d = TildeSampler::new(&spec, 1.0, SampleControl::default()).unwrap().sample(&mut rng).unwrap();
        assert!(close(d.i_h, 1.0, 1e-15) && close(d.tilde, 1.0, 1e-15));
        let f = ProductFunction::new(vec![TestFunction::PowerExp { p: 1.0 }, TestFunction::One]);
        let e = entrance_tilde_estimate(&spec, 1.0, 0.8, &f, 10, Streams::new(3), SampleControl::default()).unwrap();
        assert!(close(e.value, 0.8 * (-0.8f64).exp(), 1e-14));
        let zero = ProductFunction::new(vec![TestFunction::Zero, TestFunction::One]);
        let e = entrance_tilde_estimate(&spec, 1.0, 0.8, &zero, 10, Streams::new(3), SampleControl::default()).unwrap();
        assert_eq!(e.value, 0.0);
    }

    #[test]
    fn functional_means() {
        // E[I_h] = 1/Φ_h(α); E[Ĩ] = (d_Z + λ E[ΔZ] E[e^{-αΔh}]) / Φ_h(α).
        let spec = BivariateSubSpec::drifts(0.5, 0.5).with_jumps(
            1.0,
            JointJumpLaw::Independent {
                z: PositiveLaw::Exponential { rate: 1.0 },
                h: PositiveLaw::Exponential { rate: 2.0 },
            },
        );
        let alpha = 1.0;
        let phi = spec.h_exponent(alpha).unwrap();
        assert!(close(phi, 0.5 + 1.0 / 3.0, 1e-15));
        let ctl = SampleControl { tail_eps: 1e-8, ..SampleControl::default() };
        let draws = TildeSampler::new(&spec, alpha, ctl).unwrap().draw(40_000, Streams::new(5)).unwrap();
        let ih: Vec<f64> = draws.iter().map(|d| d.i_h).collect();
        let it: Vec<f64> = draws.iter().map(|d| d.tilde).collect();
        let (a, b) = (Estimate::from_draws(&ih), Estimate::from_draws(&it));
        assert!((a.value - 1.0 / phi).abs() < 4.0 * a.se, "{a:?}");
        let want = (0.5 + 2.0 / 3.0) / phi;
        assert!((b.value - want).abs() < 4.0 * b.se, "{b:?} vs {want}");
    }

    #[test]
    fn refuses_without_growth_or_integrability() {
        let ctl = SampleControl::default();
        assert!(matches!(
            TildeSampler::new(&BivariateSubSpec::drifts(1.0, 0.0), 1.0, ctl),
            Err(Error::Precondition(_))
        ));
        let heavy = BivariateSubSpec::drifts(0.0, 1.0).with_jumps(
            1.0,
            JointJumpLaw::Independent {
                z: PositiveLaw::LogPareto { index: 0.5 },
                h: PositiveLaw::Exponential { rate: 1.0 },
            },
        );
        assert!(matches!(TildeSampler::new(&heavy, 1.0, ctl), Err(Error::Precondition(_))));
    }

    #[test]
    fn toml_form() {
        let spec: BivariateSubSpec = toml::from_str(
            "d_z = 0.5\nd_h = 0.5\nlambda = 1.0\n[jumps]\ncoupling = \"comonotone\"\n\
             z = { name = \"exponential\", params = { rate = 1.0 } }\n\
             h = { name = \"pareto\", params = { scale = 1.0, index = 2.0 } }\n",
        )
        .unwrap();
        assert!(matches!(spec.jumps, Some(JointJumpLaw::Comonotone { .. })));
        assert!(toml::from_str::<BivariateSubSpec>("d_z = 1.0\nd_y = 1.0\n").is_err());
    }
}
