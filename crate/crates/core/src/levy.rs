//! Killed Lévy processes with finite jump activity: Laplace exponent,
//! Esscher tilting, Cramér index search, duality and exact-increment path
//! simulation.
//!
//! Jumps are uncompensated, so `b` is the total linear drift and
//! `Ψ(z) = -q + b z + σ² z² / 2 + λ (E[e^{zJ}] - 1)`.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::jump_law::{JumpLaw, MgfDomain};

/// Below this magnitude `Ψ(θ)` is treated as an exact root when tilting, so
/// that a numerically located Cramér index yields an unkilled tilted process.
pub const ROOT_SNAP: f64 = 1e-11;

/// Tolerance on θ for the Cramér bisection.
pub const CRAMER_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevyTriplet {
    #[serde(rename = "q", default)]
    pub kill_rate: f64,
    #[serde(rename = "b", default)]
    pub drift: f64,
    #[serde(rename = "sigma2", default)]
    pub gaussian_var: f64,
    #[serde(rename = "lambda", default)]
    pub jump_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jump_law: Option<JumpLaw>,
}

/// Outcome of the Cramér index search on `(0, z_max]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CramerClass {
    /// `Ψ(θ*) = 0` for this `θ* > 0`.
    Strict(f64),
    /// No root in `(0, z_max]`, but `Ψ ≤ 0` up to the returned supremum.
    Sub(f64),
    /// `Ψ > 0` on all of `(0, z_max]`.
    None,
}

impl LevyTriplet {
    /// A jump-free triplet.
    pub fn new(kill_rate: f64, drift: f64, gaussian_var: f64) -> Self {
        Self {
            kill_rate,
            drift,
            gaussian_var,
            jump_rate: 0.0,
            jump_law: None,
        }
    }

    pub fn with_jumps(mut self, rate: f64, law: JumpLaw) -> Self {
        self.jump_rate = rate;
        self.jump_law = Some(law);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kill_rate >= 0.0 && self.kill_rate.is_finite()) {
            return Err(invalid(format!("kill rate q = {} must be finite and >= 0", self.kill_rate)));
        }
        if !self.drift.is_finite() {
            return Err(invalid("drift b must be finite"));
        }
        if !(self.gaussian_var >= 0.0 && self.gaussian_var.is_finite()) {
            return Err(invalid(format!("sigma2 = {} must be finite and >= 0", self.gaussian_var)));
        }
        if !(self.jump_rate >= 0.0 && self.jump_rate.is_finite()) {
            return Err(invalid(format!("jump rate lambda = {} must be finite and >= 0", self.jump_rate)));
        }
        match &self.jump_law {
            Some(law) => law.validate(),
            None if self.jump_rate > 0.0 => Err(invalid("positive jump rate without a jump law")),
            None => Ok(()),
        }
    }

    fn active_jumps(&self) -> Option<&JumpLaw> {
        self.jump_law.as_ref().filter(|_| self.jump_rate > 0.0)
    }

    pub fn mgf_domain(&self) -> MgfDomain {
        match self.active_jumps() {
            Some(law) => law.mgf_domain(),
            None => MgfDomain {
                lo: f64::NEG_INFINITY,
                hi: f64::INFINITY,
                lo_closed: false,
                hi_closed: false,
            },
        }
    }

    /// `Ψ(z) = log E[e^{z ξ_1}, 1 < ζ]`.
    pub fn laplace_exponent(&self, z: f64) -> Result<f64> {
        let jumps = match self.active_jumps() {
            Some(law) => self.jump_rate * (law.mgf(z)? - 1.0),
            None => 0.0,
        };
        Ok(-self.kill_rate + self.drift * z + 0.5 * self.gaussian_var * z * z + jumps)
    }

    /// `Ψ'(z)`.
    pub fn laplace_derivative(&self, z: f64) -> Result<f64> {
        let jumps = match self.active_jumps() {
            Some(law) => {
                let m = law.mgf(z)?;
                let tilted_mean = law
                    .tilt(z)?
                    .mean()
                    .ok_or_else(|| Error::Domain(format!("jump mean infinite under tilt {z}")))?;
                self.jump_rate * m * tilted_mean
            }
            None => 0.0,
        };
        Ok(self.drift + self.gaussian_var * z + jumps)
    }

    /// `E[ξ_1]` of the unkilled process, `None` if infinite or undefined.
    pub fn mean(&self) -> Option<f64> {
        match self.active_jumps() {
            Some(law) => law.mean().map(|m| self.drift + self.jump_rate * m),
            None => Some(self.drift),
        }
    }

    pub fn cramer_index(&self, z_max: f64) -> Result<CramerClass> {
        if !(z_max > 0.0 && z_max.is_finite()) {
            return Err(invalid(format!("z_max = {z_max} must be positive")));
        }
        if !self.mgf_domain().contains(z_max) {
            return Err(Error::Domain(format!("Ψ is not finite on (0, {z_max}]")));
        }
        let psi = |z: f64| self.laplace_exponent(z);
        let at_max = psi(z_max)?;
        if at_max < 0.0 {
            return Ok(CramerClass::Sub(z_max));
        }
        if at_max == 0.0 {
            return Ok(CramerClass::Strict(z_max));
        }
        let mut lo = if self.kill_rate > 0.0 { Some(0.0) } else { None };
        if lo.is_none() {
            let mut z = z_max;
            for _ in 0..80 {
                z *= 0.5;
                if psi(z)? < 0.0 {
                    lo = Some(z);
                    break;
                }
            }
        }
        let Some(mut lo) = lo else {
            return Ok(CramerClass::None);
        };
        // Ψ convex with Ψ(lo) < 0 < Ψ(z_max): exactly one sign change.
        let mut hi = z_max;
        while hi - lo > CRAMER_TOL {
            let mid = 0.5 * (lo + hi);
            if psi(mid)? <= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(CramerClass::Strict(0.5 * (lo + hi)))
    }

    /// The triplet of `ξ` under `P^{(θ)} = e^{θ ξ_t}·P` on `F_t`.
    pub fn esscher_tilt(&self, theta: f64) -> Result<LevyTriplet> {
        if theta == 0.0 {
            return Ok(self.clone());
        }
        let psi = self.laplace_exponent(theta)?;
        if psi > ROOT_SNAP {
            return Err(Error::Precondition(format!(
                "Ψ({theta}) = {psi:.6e} > 0: the tilted measure would have mass growing in time"
            )));
        }
        let kill_rate = if psi.abs() <= ROOT_SNAP { 0.0 } else { -psi };
        let (jump_rate, jump_law) = match self.active_jumps() {
            Some(law) => (self.jump_rate * law.mgf(theta)?, Some(law.tilt(theta)?)),
            None => (self.jump_rate, self.jump_law.clone()),
        };
        Ok(LevyTriplet {
            kill_rate,
            drift: self.drift + self.gaussian_var * theta,
            gaussian_var: self.gaussian_var,
            jump_rate,
            jump_law,
        })
    }

    /// The triplet of `-ξ`.
    pub fn dual(&self) -> LevyTriplet {
        LevyTriplet {
            kill_rate: self.kill_rate,
            drift: -self.drift,
            gaussian_var: self.gaussian_var,
            jump_rate: self.jump_rate,
            jump_law: self.jump_law.as_ref().map(JumpLaw::reflect),
        }
    }

    pub fn sample_lifetime<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.kill_rate > 0.0 {
            let e: f64 = Exp1.sample(rng);
            e / self.kill_rate
        } else {
            f64::INFINITY
        }
    }

    pub fn sample_path<R: Rng + ?Sized>(&self, horizon: f64, step: f64, rng: &mut R) -> Result<LevyPath> {
        self.sample_path_tilted(horizon, step, 0.0, rng)
    }

    /// Like [`LevyTriplet::sample_path`], recording that `self` is the
    /// θ-tilt of some reference triplet.
    pub fn sample_path_tilted<R: Rng + ?Sized>(
        &self,
        horizon: f64,
        step: f64,
        tilt_index: f64,
        rng: &mut R,
    ) -> Result<LevyPath> {
        self.validate()?;
        if !(step > 0.0 && step.is_finite()) {
            return Err(invalid(format!("step h = {step} must be positive")));
        }
        if !(horizon >= step && horizon.is_finite()) {
            return Err(invalid(format!("horizon {horizon} must be finite and >= step {step}")));
        }
        let lifetime = self.sample_lifetime(rng);
        let n = (horizon / step).round() as usize;
        let mut values = Vec::with_capacity(n + 1);
        let mut inc = Increments::new(self, step, rng);
        let mut xi = 0.0;
        for i in 0..=n {
            if (i as f64) * step >= lifetime {
                break;
            }
            values.push(xi);
            xi += inc.next(rng);
        }
        Ok(LevyPath {
            step,
            values,
            lifetime,
            tilt_index,
        })
    }
}

/// Exact-in-law increments of `ξ` over consecutive grid cells of width `h`.
/// Jump epochs are drawn in continuous time, so each cell receives a
/// Poisson(λh) number of catalog jumps.
pub struct Increments<'a> {
    triplet: &'a LevyTriplet,
    h: f64,
    sd: f64,
    cell: u64,
    next_jump: f64,
}

impl<'a> Increments<'a> {
    pub fn new<R: Rng + ?Sized>(triplet: &'a LevyTriplet, h: f64, rng: &mut R) -> Self {
        let mut me = Self {
            triplet,
            h,
            sd: (triplet.gaussian_var * h).sqrt(),
            cell: 0,
            next_jump: f64::INFINITY,
        };
        me.next_jump = me.jump_gap(rng);
        me
    }

    fn jump_gap<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.triplet.jump_rate > 0.0 && self.triplet.jump_law.is_some() {
            let e: f64 = Exp1.sample(rng);
            e / self.triplet.jump_rate
        } else {
            f64::INFINITY
        }
    }

    pub fn step(&self) -> f64 {
        self.h
    }

    /// Increment over the next cell.
    pub fn next<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        self.cell += 1;
        let cell_end = self.cell as f64 * self.h;
        let mut inc = self.triplet.drift * self.h;
        if self.sd > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            inc += self.sd * z;
        }
        while self.next_jump <= cell_end {
            if let Some(law) = &self.triplet.jump_law {
                inc += law.sample(rng);
            }
            self.next_jump += self.jump_gap(rng);
        }
        inc
    }
}

/// Grid-sampled trajectory of `ξ`, started at 0, with values present for
/// grid times strictly before the lifetime.
#[derive(Clone, Debug, PartialEq)]
pub struct LevyPath {
    pub step: f64,
    pub values: Vec<f64>,
    pub lifetime: f64,
    pub tilt_index: f64,
}

impl LevyPath {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(|i| i as f64 * self.step)
    }

    /// End of the last represented cell: the lifetime if the path was killed
    /// inside the window, else one step past the last grid point.
    pub fn window_end(&self) -> f64 {
        let grid_end = self.values.len() as f64 * self.step;
        if self.killed_in_window() {
            self.lifetime
        } else {
            grid_end
        }
    }

    pub fn killed_in_window(&self) -> bool {
        self.lifetime.is_finite() && self.lifetime <= self.values.len() as f64 * self.step
    }

    /// CSV with columns `t,xi`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,xi\n");
        for (t, v) in self.times().zip(&self.values) {
            out.push_str(&format!("{t:.12e},{v:.12e}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Streams;

    fn brownian_cramer() -> LevyTriplet {
        LevyTriplet::new(0.0, -0.5, 1.0)
    }

    #[test]
    fn laplace_exponent_examples() {
        assert_eq!(brownian_cramer().laplace_exponent(1.0).unwrap(), 0.0);
        let t = LevyTriplet::new(0.3, 0.0, 0.0);
        assert_eq!(t.laplace_exponent(2.0).unwrap(), -0.3);
        let j = LevyTriplet::new(0.7, 1.3, 0.4).with_jumps(2.0, JumpLaw::Gaussian { mean: 0.1, sd: 0.3 });
        assert_eq!(j.laplace_exponent(0.0).unwrap(), -0.7);
    }

    #[test]
    fn mgf_outside_domain_is_domain_error() {
        let t = LevyTriplet::new(0.0, 0.0, 0.0).with_jumps(
            1.0,
            JumpLaw::TwoSidedExponential { p_up: 0.5, rate_up: 2.0, rate_down: 2.0 },
        );
        assert!(matches!(t.laplace_exponent(2.5), Err(Error::Domain(_))));
        assert!(matches!(t.cramer_index(3.0), Err(Error::Domain(_))));
    }

    #[test]
    fn cramer_examples() {
        let CramerClass::Strict(theta) = brownian_cramer().cramer_index(5.0).unwrap() else {
            panic!("expected strict");
        };
        assert!((theta - 1.0).abs() < 1e-11);
        assert_eq!(LevyTriplet::new(0.0, 1.0, 0.0).cramer_index(5.0).unwrap(), CramerClass::None);
        // Ψ(θ) = -0.25 - θ stays negative: no root, supremum at z_max.
        let t = LevyTriplet::new(0.25, -1.0, 0.0);
        for z in (1..=100).map(|k| k as f64 * 0.1) {
            assert!(t.laplace_exponent(z).unwrap() < 0.0);
        }
        assert_eq!(t.cramer_index(10.0).unwrap(), CramerClass::Sub(10.0));
        // Killed Brownian: -0.5 + θ²/2 has root 1.
        let CramerClass::Strict(theta) = LevyTriplet::new(0.5, 0.0, 1.0).cramer_index(4.0).unwrap() else {
            panic!();
        };
        assert!((theta - 1.0).abs() < 1e-11);
    }

    #[test]
    fn tilt_examples() {
        let tilted = brownian_cramer().esscher_tilt(1.0).unwrap();
        assert_eq!(tilted, LevyTriplet::new(0.0, 0.5, 1.0));
        let t = LevyTriplet::new(0.2, 0.0, 0.0);
        assert_eq!(t.esscher_tilt(3.7).unwrap().kill_rate, 0.2);
        assert_eq!(t.esscher_tilt(0.0).unwrap(), t);
        assert!(matches!(
            brownian_cramer().esscher_tilt(1.5),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn strict_cramer_tilt_drifts_up() {
        let t = LevyTriplet::new(0.0, -1.0, 0.5).with_jumps(0.8, JumpLaw::Gaussian { mean: 0.3, sd: 0.4 });
        let CramerClass::Strict(theta) = t.cramer_index(10.0).unwrap() else { panic!() };
        let tilted = t.esscher_tilt(theta).unwrap();
        assert_eq!(tilted.kill_rate, 0.0);
        assert!(tilted.mean().unwrap() > 0.0);
        assert!((tilted.mean().unwrap() - t.laplace_derivative(theta).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn dual_examples() {
        assert_eq!(brownian_cramer().dual(), LevyTriplet::new(0.0, 0.5, 1.0));
        let t = LevyTriplet::new(0.1, 0.3, 0.2).with_jumps(1.0, JumpLaw::TwoPoint { a: 1.0, b: -2.0, p: 0.4 });
        assert_eq!(t.dual().dual(), t);
        assert_eq!(t.dual().jump_law, Some(JumpLaw::TwoPoint { a: -1.0, b: 2.0, p: 0.4 }));
    }

    #[test]
    fn pure_drift_path() {
        let mut rng = Streams::new(0).replica(0);
        let p = LevyTriplet::new(0.0, 1.0, 0.0).sample_path(1.0, 0.25, &mut rng).unwrap();
        assert_eq!(p.values, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(p.lifetime.is_infinite());
    }

    #[test]
    fn killed_path_truncated_at_lifetime() {
        let t = LevyTriplet::new(2.0, 0.0, 1.0);
        let mut rng = Streams::new(1).replica(0);
        for _ in 0..50 {
            let p = t.sample_path(3.0, 0.01, &mut rng).unwrap();
            let last = (p.len() - 1) as f64 * p.step;
            assert!(last < p.lifetime);
            if p.lifetime < 3.0 {
                assert!(last + p.step >= p.lifetime);
                assert!(p.killed_in_window());
            }
        }
    }

    #[test]
    fn invalid_parameters_rejected() {
        let mut rng = Streams::new(0).replica(0);
        assert!(LevyTriplet::new(-1.0, 0.0, 0.0).validate().is_err());
        assert!(LevyTriplet::new(0.0, 0.0, 1.0).sample_path(0.1, 0.5, &mut rng).is_err());
        let mut t = LevyTriplet::new(0.0, 0.0, 0.0);
        t.jump_rate = 1.0;
        assert!(t.validate().is_err());
    }

    #[test]
    fn triplet_toml_roundtrip_and_rejects_unknown_keys() {
        let src = "q = 0.1\nb = -0.5\nsigma2 = 1.0\nlambda = 2.0\njump_law = { name = \"gaussian\", params = { mean = 0.0, sd = 0.5 } }\n";
        let t: LevyTriplet = toml::from_str(src).unwrap();
        assert_eq!(t.jump_law, Some(JumpLaw::Gaussian { mean: 0.0, sd: 0.5 }));
        let back: LevyTriplet = toml::from_str(&toml::to_string(&t).unwrap()).unwrap();
        assert_eq!(back, t);
        let err = toml::from_str::<LevyTriplet>("q = 0.1\nbee = 1.0\n").unwrap_err();
        assert!(err.to_string().contains("bee"));
        let err = toml::from_str::<LevyTriplet>(
            "jump_law = { name = \"gaussian\", params = { mean = 0.0, sd = 0.5, skew = 1.0 } }\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("skew"), "{err}");
    }
}
