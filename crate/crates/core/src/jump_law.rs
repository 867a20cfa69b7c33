//! The catalog of one-dimensional jump laws.
//!
//! Every member has a moment generating function with a known finiteness
//! domain, and the catalog is closed under exponential tilting and under
//! reflection `J -> -J`.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quad;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum JumpLaw {
    /// `a` with probability `p`, `b` with probability `1 - p`.
    TwoPoint { a: f64, b: f64, p: f64 },
    Gaussian { mean: f64, sd: f64 },
    /// Density `p_up·rate_up·e^{-rate_up·x}` on `x > 0` and
    /// `(1 - p_up)·rate_down·e^{rate_down·x}` on `x < 0`.
    TwoSidedExponential { p_up: f64, rate_up: f64, rate_down: f64 },
    /// `J = sign·Y` where `Y ≥ scale` has density proportional to
    /// `e^{-temper·y}·y^{-1-index}`. `temper = 0` is the plain Pareto law;
    /// positive tempering is what tilting a negative Pareto produces.
    ShiftedPareto {
        sign: i8,
        scale: f64,
        index: f64,
        #[serde(default)]
        temper: f64,
    },
}

/// Interval on which the moment generating function is finite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MgfDomain {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl MgfDomain {
    const ALL: MgfDomain = MgfDomain {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
        lo_closed: false,
        hi_closed: false,
    };

    pub fn contains(&self, z: f64) -> bool {
        let above = if self.lo_closed { z >= self.lo } else { z > self.lo };
        let below = if self.hi_closed { z <= self.hi } else { z < self.hi };
        above && below
    }
}

/// `∫_{scale}^∞ e^{-k y} index·scale^index·y^{-1-index} dy` for `k ≥ 0`.
fn pareto_laplace(index: f64, scale: f64, k: f64) -> f64 {
    if k == 0.0 {
        return 1.0;
    }
    // y = scale·e^u
    let ks = k * scale;
    let u_max = (745.0 / index).min((800.0 / ks).ln().max(0.0) + 2.0);
    let g = |u: f64| index * (-ks * u.exp() - index * u).exp();
    quad::integrate(g, 0.0, u_max, 1e-300, 1e-13)
        .map(|r| r.value)
        .unwrap_or(f64::NAN)
}

/// `∫_{scale}^∞ y·e^{-k y} index·scale^index·y^{-1-index} dy`.
fn pareto_first_moment(index: f64, scale: f64, k: f64) -> Option<f64> {
    if k == 0.0 {
        return (index > 1.0).then(|| index * scale / (index - 1.0));
    }
    let ks = k * scale;
    let u_max = (800.0 / ks).ln().max(0.0) + 2.0;
    let u_max = if index > 1.0 { u_max.min(745.0 / (index - 1.0)) } else { u_max };
    let g = |u: f64| index * scale * (-ks * u.exp() + (1.0 - index) * u).exp();
    quad::integrate(g, 0.0, u_max, 1e-300, 1e-13).ok().map(|r| r.value)
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

impl JumpLaw {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            JumpLaw::TwoPoint { a, b, p } => a.is_finite() && b.is_finite() && (0.0..=1.0).contains(&p),
            JumpLaw::Gaussian { mean, sd } => mean.is_finite() && sd.is_finite() && sd >= 0.0,
            JumpLaw::TwoSidedExponential { p_up, rate_up, rate_down } => {
                (0.0..=1.0).contains(&p_up) && rate_up > 0.0 && rate_down > 0.0
            }
            JumpLaw::ShiftedPareto { sign, scale, index, temper } => {
                (sign == 1 || sign == -1) && scale > 0.0 && index > 0.0 && temper >= 0.0 && temper.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("jump law parameters out of range: {self:?}")))
        }
    }

    pub fn mgf_domain(&self) -> MgfDomain {
        match *self {
            JumpLaw::TwoPoint { .. } | JumpLaw::Gaussian { .. } => MgfDomain::ALL,
            JumpLaw::TwoSidedExponential { rate_up, rate_down, .. } => MgfDomain {
                lo: -rate_down,
                hi: rate_up,
                lo_closed: false,
                hi_closed: false,
            },
            JumpLaw::ShiftedPareto { sign, temper, .. } => {
                if sign > 0 {
                    MgfDomain { lo: f64::NEG_INFINITY, hi: temper, lo_closed: false, hi_closed: true }
                } else {
                    MgfDomain { lo: -temper, hi: f64::INFINITY, lo_closed: true, hi_closed: false }
                }
            }
        }
    }

    /// `E[e^{zJ}]`, or a domain error if it is infinite.
    pub fn mgf(&self, z: f64) -> Result<f64> {
        if !self.mgf_domain().contains(z) {
            return Err(Error::Domain(format!("MGF of {self:?} is infinite at z = {z}")));
        }
        Ok(match *self {
            JumpLaw::TwoPoint { a, b, p } => p * (z * a).exp() + (1.0 - p) * (z * b).exp(),
            JumpLaw::Gaussian { mean, sd } => (z * mean + 0.5 * z * z * sd * sd).exp(),
            JumpLaw::TwoSidedExponential { p_up, rate_up, rate_down } => {
                p_up * rate_up / (rate_up - z) + (1.0 - p_up) * rate_down / (rate_down + z)
            }
            JumpLaw::ShiftedPareto { sign, scale, index, temper } => {
                let k = temper - f64::from(sign) * z;
                pareto_laplace(index, scale, k.max(0.0)) / pareto_laplace(index, scale, temper)
            }
        })
    }

    /// `E[J]`, `None` when the mean is infinite.
    pub fn mean(&self) -> Option<f64> {
        match *self {
            JumpLaw::TwoPoint { a, b, p } => Some(p * a + (1.0 - p) * b),
            JumpLaw::Gaussian { mean, .. } => Some(mean),
            JumpLaw::TwoSidedExponential { p_up, rate_up, rate_down } => {
                Some(p_up / rate_up - (1.0 - p_up) / rate_down)
            }
            JumpLaw::ShiftedPareto { sign, scale, index, temper } => pareto_first_moment(index, scale, temper)
                .map(|m1| f64::from(sign) * m1 / pareto_laplace(index, scale, temper)),
        }
    }

    /// The law of `J` under the measure `e^{θJ}/E[e^{θJ}]·P`.
    pub fn tilt(&self, theta: f64) -> Result<JumpLaw> {
        if theta == 0.0 {
            return Ok(self.clone());
        }
        self.mgf(theta)?;
        Ok(match *self {
            JumpLaw::TwoPoint { a, b, p } => {
                let la = p.ln() + theta * a;
                let lb = (1.0 - p).ln() + theta * b;
                let p_new = (la - log_sum_exp(la, lb)).exp();
                JumpLaw::TwoPoint { a, b, p: p_new }
            }
            JumpLaw::Gaussian { mean, sd } => JumpLaw::Gaussian { mean: mean + theta * sd * sd, sd },
            JumpLaw::TwoSidedExponential { p_up, rate_up, rate_down } => {
                let up = p_up * rate_up / (rate_up - theta);
                let down = (1.0 - p_up) * rate_down / (rate_down + theta);
                JumpLaw::TwoSidedExponential {
                    p_up: up / (up + down),
                    rate_up: rate_up - theta,
                    rate_down: rate_down + theta,
                }
            }
            JumpLaw::ShiftedPareto { sign, scale, index, temper } => JumpLaw::ShiftedPareto {
                sign,
                scale,
                index,
                temper: temper - f64::from(sign) * theta,
            },
        })
    }

    /// The law of `-J`.
    pub fn reflect(&self) -> JumpLaw {
        match *self {
            JumpLaw::TwoPoint { a, b, p } => JumpLaw::TwoPoint { a: -a, b: -b, p },
            JumpLaw::Gaussian { mean, sd } => JumpLaw::Gaussian { mean: -mean, sd },
            JumpLaw::TwoSidedExponential { p_up, rate_up, rate_down } => JumpLaw::TwoSidedExponential {
                p_up: 1.0 - p_up,
                rate_up: rate_down,
                rate_down: rate_up,
            },
            JumpLaw::ShiftedPareto { sign, scale, index, temper } => {
                JumpLaw::ShiftedPareto { sign: -sign, scale, index, temper }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            JumpLaw::TwoPoint { a, b, p } => {
                if rng.random::<f64>() < p {
                    a
                } else {
                    b
                }
            }
            JumpLaw::Gaussian { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            }
            JumpLaw::TwoSidedExponential { p_up, rate_up, rate_down } => {
                let e: f64 = Exp1.sample(rng);
                if rng.random::<f64>() < p_up {
                    e / rate_up
                } else {
                    -e / rate_down
                }
            }
            JumpLaw::ShiftedPareto { sign, scale, index, temper } => {
                f64::from(sign) * sample_tempered_pareto(scale, index, temper, rng)
            }
        }
    }
}

fn sample_tempered_pareto<R: Rng + ?Sized>(scale: f64, index: f64, temper: f64, rng: &mut R) -> f64 {
    let pareto = |rng: &mut R| {
        let u: f64 = 1.0 - rng.random::<f64>();
        scale * u.powf(-1.0 / index)
    };
    if temper == 0.0 {
        return pareto(rng);
    }
    if temper * scale < 1.0 {
        // Pareto proposal, accept with e^{-temper (y - scale)}.
        loop {
            let y = pareto(rng);
            if rng.random::<f64>() < (-temper * (y - scale)).exp() {
                return y;
            }
        }
    } else {
        // Shifted exponential proposal, accept with (scale / y)^{1 + index}.
        loop {
            let e: f64 = Exp1.sample(rng);
            let y = scale + e / temper;
            if rng.random::<f64>() < (scale / y).powf(1.0 + index) {
                return y;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Streams;

    fn catalog() -> Vec<JumpLaw> {
        vec![
            JumpLaw::TwoPoint { a: 1.0, b: -2.0, p: 0.3 },
            JumpLaw::Gaussian { mean: -0.2, sd: 0.7 },
            JumpLaw::TwoSidedExponential { p_up: 0.4, rate_up: 3.0, rate_down: 2.0 },
            JumpLaw::ShiftedPareto { sign: -1, scale: 0.5, index: 1.5, temper: 0.0 },
            JumpLaw::ShiftedPareto { sign: 1, scale: 0.5, index: 0.8, temper: 2.0 },
        ]
    }

    #[test]
    fn mgf_at_zero_is_one() {
        for law in catalog() {
            assert!((law.mgf(0.0).unwrap() - 1.0).abs() < 1e-12, "{law:?}");
        }
    }

    #[test]
    fn tilt_composes_mgf_ratios() {
        for law in catalog() {
            let theta = 0.4;
            let Ok(tilted) = law.tilt(theta) else { continue };
            for z in [-0.3, 0.1, 0.5] {
                let (Ok(lhs), Ok(num)) = (tilted.mgf(z), law.mgf(theta + z)) else { continue };
                let rhs = num / law.mgf(theta).unwrap();
                assert!((lhs - rhs).abs() < 1e-10 * rhs.abs().max(1.0), "{law:?} z={z}");
            }
        }
    }

    #[test]
    fn reflection_matches_spec_example() {
        let law = JumpLaw::TwoPoint { a: 1.0, b: -2.0, p: 0.25 };
        assert_eq!(law.reflect(), JumpLaw::TwoPoint { a: -1.0, b: 2.0, p: 0.25 });
        for law in catalog() {
            assert_eq!(law.reflect().reflect(), law);
            for z in [-0.2, 0.3] {
                if let (Ok(a), Ok(b)) = (law.reflect().mgf(z), law.mgf(-z)) {
                    assert!((a - b).abs() < 1e-12 * b.max(1.0));
                }
            }
        }
    }

    #[test]
    fn positive_pareto_has_no_positive_mgf() {
        let law = JumpLaw::ShiftedPareto { sign: 1, scale: 1.0, index: 2.0, temper: 0.0 };
        assert!(law.mgf(0.1).is_err());
        assert!(law.tilt(0.1).is_err());
        assert!(law.mgf(-0.1).is_ok());
    }

    #[test]
    fn sample_means_match() {
        let streams = Streams::new(5);
        for (k, law) in catalog().into_iter().enumerate() {
            let mut rng = streams.replica(k as u64);
            let n = 200_000;
            let xs: Vec<f64> = (0..n).map(|_| law.sample(&mut rng)).collect();
            let m = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
            let expected = law.mean().unwrap();
            // Pareto with index 1.5 has infinite variance: compare loosely.
            let tol = 5.0 * (var / n as f64).sqrt() + 0.02;
            assert!((m - expected).abs() < tol, "{law:?}: {m} vs {expected}");
        }
    }

    #[test]
    fn tempered_pareto_sampler_hits_mgf() {
        let law = JumpLaw::ShiftedPareto { sign: 1, scale: 0.5, index: 0.8, temper: 2.0 };
        let mut rng = Streams::new(9).replica(0);
        let n = 200_000;
        let z = -1.0;
        let emp = (0..n).map(|_| (z * law.sample(&mut rng)).exp()).sum::<f64>() / n as f64;
        assert!((emp - law.mgf(z).unwrap()).abs() < 3e-3);
        let law = JumpLaw::ShiftedPareto { sign: 1, scale: 1.0, index: 0.8, temper: 0.3 };
        let emp = (0..n).map(|_| (z * law.sample(&mut rng)).exp()).sum::<f64>() / n as f64;
        assert!((emp - law.mgf(z).unwrap()).abs() < 3e-3);
    }
}
