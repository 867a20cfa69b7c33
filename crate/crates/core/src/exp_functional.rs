//! Monte Carlo sampling of the exponential functional
//! `I = ∫_0^ζ e^{αξ_s} ds` with explicit control of truncation bias.
//!
//! Killed processes are simulated up to their lifetime, which gives the
//! exact grid integral. Unkilled processes drifting to `-∞` are stopped once
//! the drift bound `e^{αξ_T}·2/(α|m|)` on the remaining mass falls below
//! `tail_eps` times the partial integral; the bound is recorded.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lamperti::{classify, cumulative_clock, exp_ratio, ClockRule, Regime};
use crate::levy::{Increments, LevyPath, LevyTriplet};
use crate::rng::{self, Streams};
use crate::stats;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleControl {
    pub step: f64,
    pub tail_eps: f64,
    pub max_steps: u64,
    pub rule: ClockRule,
}

impl Default for SampleControl {
    fn default() -> Self {
        Self {
            step: 1e-3,
            tail_eps: 1e-4,
            max_steps: 50_000_000,
            rule: ClockRule::LeftPoint,
        }
    }
}

impl SampleControl {
    pub fn with_step(step: f64) -> Self {
        Self { step, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(invalid(format!("step h = {} must be positive", self.step)));
        }
        if !(self.tail_eps > 0.0 && self.tail_eps < 1.0) {
            return Err(invalid(format!("tail_eps = {} must lie in (0, 1)", self.tail_eps)));
        }
        if self.max_steps == 0 {
            return Err(invalid("max_steps must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpFunctionalSample {
    pub value: f64,
    pub truncated: bool,
    /// Lévy time simulated: the lifetime, or the stopping time.
    pub horizon_used: f64,
    pub tail_bound: f64,
}

/// Grid integral of `e^{αξ}` along a stored path, identical to the clock
/// `lamperti_forward` builds at the end of the window.
pub fn discrete_functional(path: &LevyPath, alpha: f64, rule: ClockRule) -> Result<f64> {
    let expo: Vec<f64> = path.values.iter().map(|&v| alpha * v).collect();
    Ok(*cumulative_clock(&expo, path.step, path.window_end(), rule)?.last().unwrap())
}

/// Validated sampler for one `(triplet, α, control)` combination.
#[derive(Clone, Debug)]
pub struct ExpSampler {
    triplet: LevyTriplet,
    alpha: f64,
    ctl: SampleControl,
    /// `α|m|/2`, the drift rate in the tail bound; 0 for killed processes.
    tail_rate: f64,
}

impl ExpSampler {
    pub fn new(triplet: &LevyTriplet, alpha: f64, ctl: SampleControl) -> Result<Self> {
        triplet.validate()?;
        ctl.validate()?;
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(invalid(format!("alpha = {alpha} must be positive")));
        }
        let class = classify(triplet, alpha);
        let tail_rate = match class.regime {
            Regime::HitsZeroKilled => 0.0,
            Regime::HitsZeroDrift => 0.5 * alpha * class.mean.unwrap().abs(),
            other => {
                return Err(Error::Precondition(format!(
                    "exponential functional is infinite: process is {other:?}"
                )))
            }
        };
        Ok(Self {
            triplet: triplet.clone(),
            alpha,
            ctl,
            tail_rate,
        })
    }

    pub fn triplet(&self) -> &LevyTriplet {
        &self.triplet
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ExpFunctionalSample> {
        let h = self.ctl.step;
        let a = self.alpha;
        let lifetime = self.triplet.sample_lifetime(rng);
        let mut inc = Increments::new(&self.triplet, h, rng);
        let mut xi = 0.0f64;
        let mut acc = 0.0f64;
        let mut scale = 1.0f64;
        for i in 0..self.ctl.max_steps {
            let t0 = i as f64 * h;
            if t0 + h >= lifetime {
                acc += scale * (lifetime - t0);
                return Ok(ExpFunctionalSample {
                    value: acc,
                    truncated: false,
                    horizon_used: lifetime,
                    tail_bound: 0.0,
                });
            }
            let d = inc.next(rng);
            let shape = match self.ctl.rule {
                ClockRule::LeftPoint => 1.0,
                ClockRule::ExactLinear => exp_ratio(a * d),
            };
            acc += scale * h * shape;
            xi += d;
            scale = (a * xi).exp();
            if !scale.is_finite() || !acc.is_finite() {
                return Err(Error::Overflow(format!("e^(αξ) overflows at Lévy time {t0}")));
            }
            if self.tail_rate > 0.0 {
                let bound = scale / self.tail_rate;
                if bound < self.ctl.tail_eps * acc {
                    return Ok(ExpFunctionalSample {
                        value: acc,
                        truncated: true,
                        horizon_used: t0 + h,
                        tail_bound: bound,
                    });
                }
            }
        }
        Err(Error::Budget(format!(
            "no termination within {} steps of size {h}",
            self.ctl.max_steps
        )))
    }

    /// `n` replicas on the streams of `streams`, in replica order.
    pub fn sample_batch(&self, streams: Streams, n: usize) -> Result<Vec<ExpFunctionalSample>> {
        rng::try_par_replicas(streams, n, |_, r| self.sample(r))
    }

    /// Value of `X_t` for the self-similar process started from `x`, or
    /// `None` when it is absorbed by time `t`.
    ///
    /// For unkilled paths drifting down, absorption is declared once the
    /// drift bound on the remaining clock, `x^α e^{αξ}·2/(α|m|)`, is below
    /// `tail_eps·(t - clock)`.
    pub fn pssmp_at<R: Rng + ?Sized>(&self, x: f64, t: f64, rng: &mut R) -> Result<Option<f64>> {
        Ok(pssmp_at_times(&self.triplet, self.alpha, x, &[t], self.tail_rate, &self.ctl, rng)?[0])
    }
}

/// `α|m|/2` for processes drifting to `-∞` without killing, else 0.
fn drift_tail_rate(triplet: &LevyTriplet, alpha: f64) -> f64 {
    let class = classify(triplet, alpha);
    match class.regime {
        Regime::HitsZeroDrift => 0.5 * alpha * class.mean.unwrap().abs(),
        _ => 0.0,
    }
}

/// Value at time `t` of the self-similar process with driving triplet
/// `triplet`, for any regime.
pub fn simulate_pssmp_at<R: Rng + ?Sized>(
    triplet: &LevyTriplet,
    alpha: f64,
    x: f64,
    t: f64,
    ctl: &SampleControl,
    rng: &mut R,
) -> Result<Option<f64>> {
    Ok(simulate_pssmp_at_times(triplet, alpha, x, &[t], ctl, rng)?[0])
}

/// One trajectory read off at the nondecreasing times `ts`.
pub fn simulate_pssmp_at_times<R: Rng + ?Sized>(
    triplet: &LevyTriplet,
    alpha: f64,
    x: f64,
    ts: &[f64],
    ctl: &SampleControl,
    rng: &mut R,
) -> Result<Vec<Option<f64>>> {
    pssmp_at_times(triplet, alpha, x, ts, drift_tail_rate(triplet, alpha), ctl, rng)
}

fn pssmp_at_times<R: Rng + ?Sized>(
    triplet: &LevyTriplet,
    alpha: f64,
    x: f64,
    ts: &[f64],
    tail_rate: f64,
    ctl: &SampleControl,
    rng: &mut R,
) -> Result<Vec<Option<f64>>> {
    if !(x > 0.0) || ts.iter().any(|&t| !(t >= 0.0)) || ts.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid(format!("need x > 0 and sorted nonnegative times, got x = {x}")));
    }
    let mut out = vec![None; ts.len()];
    let Some(&last) = ts.last() else {
        return Ok(out);
    };
    let h = ctl.step;
    let factor = x.powf(alpha);
    let lifetime = triplet.sample_lifetime(rng);
    let mut inc = Increments::new(triplet, h, rng);
    let mut xi = 0.0f64;
    let mut clock = 0.0f64;
    let mut scale = 1.0f64;
    let mut next = 0;
    for i in 0..ctl.max_steps {
        let t0 = i as f64 * h;
        let killed_here = t0 + h >= lifetime;
        let len = if killed_here { lifetime - t0 } else { h };
        let d = if killed_here { 0.0 } else { inc.next(rng) };
        let linear = ctl.rule == ClockRule::ExactLinear && !killed_here;
        let shape = if linear { exp_ratio(alpha * d) } else { 1.0 };
        let width = factor * scale * len * shape;
        while next < ts.len() && ts[next] < clock + width {
            let xi_t = if linear && d != 0.0 {
                // Invert the clock inside a linear cell.
                let frac = (ts[next] - clock) / (factor * scale * h);
                xi + (alpha * d * frac).ln_1p() / alpha
            } else {
                xi
            };
            out[next] = Some(x * xi_t.exp());
            next += 1;
        }
        if next == ts.len() || killed_here {
            return Ok(out);
        }
        clock += width;
        xi += d;
        scale = (alpha * xi).exp();
        if !scale.is_finite() {
            return Err(Error::Overflow(format!("e^(αξ) overflows at Lévy time {t0}")));
        }
        // The nearest unfilled target is out of reach, hence all later ones.
        if tail_rate > 0.0 && factor * scale / tail_rate < ctl.tail_eps * (ts[next] - clock) {
            return Ok(out);
        }
    }
    Err(Error::Budget(format!(
        "clock did not reach {last} within {} steps",
        ctl.max_steps
    )))
}

/// Single draw of `I`.
#[allow(non_snake_case)]
pub fn sample_I<R: Rng + ?Sized>(
    t: &LevyTriplet,
    alpha: f64,
    rng: &mut R,
    ctl: SampleControl,
) -> Result<ExpFunctionalSample> {
    ExpSampler::new(t, alpha, ctl)?.sample(rng)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentEstimate {
    pub estimate: f64,
    pub ci: (f64, f64),
    pub n: usize,
}

/// `E[I^p]` with a percentile bootstrap interval from 500 resamples.
pub fn estimate_moment(
    t: &LevyTriplet,
    alpha: f64,
    p: f64,
    n: usize,
    streams: Streams,
    ctl: SampleControl,
) -> Result<MomentEstimate> {
    if n < 100 {
        return Err(Error::Size(format!("moment estimate needs N >= 100, got {n}")));
    }
    let sampler = ExpSampler::new(t, alpha, ctl)?;
    let powers: Vec<f64> = sampler
        .sample_batch(streams.named("draws"), n)?
        .iter()
        .map(|s| s.value.powf(p))
        .collect();
    let mut boot = streams.named("bootstrap").replica(0);
    Ok(MomentEstimate {
        estimate: stats::mean(&powers),
        ci: stats::bootstrap_ci(stats::mean, &powers, 500, 0.95, &mut boot)?,
        n,
    })
}

/// CSV with one row per draw: `value,truncated,tail_bound`.
pub fn samples_to_csv(samples: &[ExpFunctionalSample]) -> String {
    let mut out = String::from("value,truncated,tail_bound\n");
    for s in samples {
        out.push_str(&format!("{:.12e},{},{:.6e}\n", s.value, s.truncated, s.tail_bound));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lamperti::lamperti_forward;

    #[test]
    fn drift_down_functional() {
        let mut rng = Streams::new(0).replica(0);
        for &h in &[1e-2, 1e-3] {
            let s = sample_I(&LevyTriplet::new(0.0, -1.0, 0.0), 2.0, &mut rng, SampleControl::with_step(h)).unwrap();
            assert!((s.value - 0.5).abs() < 2.0 * h);
            assert!(s.truncated && s.tail_bound > 0.0);
            assert!(s.tail_bound < 1e-4 * s.value);
        }
    }

    #[test]
    fn killing_only_gives_lifetime() {
        let mut rng = Streams::new(1).replica(0);
        for _ in 0..100 {
            let s = sample_I(&LevyTriplet::new(1.0, 0.0, 0.0), 1.0, &mut rng, SampleControl::default()).unwrap();
            assert!(!s.truncated);
            assert!((s.value - s.horizon_used).abs() < 1e-12 * s.value.max(1.0));
        }
    }

    #[test]
    fn non_hitting_is_rejected() {
        let mut rng = Streams::new(1).replica(0);
        for t in [LevyTriplet::new(0.0, 1.0, 1.0), LevyTriplet::new(0.0, 0.0, 1.0)] {
            assert!(matches!(
                sample_I(&t, 1.0, &mut rng, SampleControl::default()),
                Err(Error::Precondition(_))
            ));
        }
    }

    #[test]
    fn streamed_and_stored_functionals_agree() {
        let t = LevyTriplet::new(0.7, -0.3, 1.0);
        let ctl = SampleControl::with_step(0.01);
        let s = Streams::new(2);
        for i in 0..50 {
            let streamed = sample_I(&t, 1.5, &mut s.replica(i), ctl).unwrap();
            let path = t.sample_path(200.0, 0.01, &mut s.replica(i)).unwrap();
            assert!(path.killed_in_window());
            let stored = discrete_functional(&path, 1.5, ClockRule::LeftPoint).unwrap();
            assert!((streamed.value - stored).abs() <= 1e-9 * stored);
            let p = lamperti_forward(&path, 2.0, 1.5).unwrap();
            assert_eq!(p.absorption, 2f64.powf(1.5) * stored);
        }
    }

    #[test]
    fn pssmp_at_matches_stored_path() {
        let t = LevyTriplet::new(0.2, 0.4, 1.0);
        let ctl = SampleControl::with_step(0.01);
        let s = Streams::new(3);
        for i in 0..50 {
            let got = simulate_pssmp_at(&t, 1.0, 1.5, 0.8, &ctl, &mut s.replica(i)).unwrap();
            let path = t.sample_path(400.0, 0.01, &mut s.replica(i)).unwrap();
            let p = lamperti_forward(&path, 1.5, 1.0).unwrap();
            let want = p.value_at(0.8).unwrap();
            match got {
                Some(v) => assert!((v - want).abs() < 1e-9 * want),
                None => assert_eq!(want, 0.0),
            }
        }
    }

    #[test]
    fn moment_of_deterministic_functional() {
        let est = estimate_moment(
            &LevyTriplet::new(0.0, -1.0, 0.0),
            1.0,
            1.0,
            100,
            Streams::new(4),
            SampleControl { rule: ClockRule::ExactLinear, ..SampleControl::with_step(1e-3) },
        )
        .unwrap();
        assert!((est.estimate - 1.0).abs() < 2e-4);
        assert!(est.ci.1 - est.ci.0 < 1e-12);
    }
}
