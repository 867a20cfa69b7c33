//! The Lamperti bijection between Lévy paths and positive self-similar
//! paths, the hitting-time classifier and the Ornstein–Uhlenbeck-type
//! transform.
//!
//! A Lévy path is read as piecewise constant on its grid, so the additive
//! functional `A(s) = ∫_0^s e^{αξ_r} dr` is a finite sum and its inverse is
//! exact. The output grid is the image of the input grid under
//! `t = x^α A(s)`, hence nonuniform.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::levy::{LevyPath, LevyTriplet};

/// How `e^{αξ}` is integrated over one grid cell.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockRule {
    /// `ξ` constant on each cell (the path is càdlàg on its grid).
    #[default]
    LeftPoint,
    /// `ξ` linear between consecutive grid values, which makes pure-drift
    /// flows exact. The last cell, having no right neighbour, is constant.
    ExactLinear,
}

/// `(e^d - 1) / d`, stable near 0.
pub(crate) fn exp_ratio(d: f64) -> f64 {
    if d.abs() < 1e-5 {
        1.0 + d * (0.5 + d / 6.0)
    } else {
        d.exp_m1() / d
    }
}

/// Cumulative clock `A_0 = 0, A_{i+1} = A_i + w_i` for cells with left
/// exponents `expo[i]`, where the final cell ends at `window_end`.
pub(crate) fn cumulative_clock(expo: &[f64], step: f64, window_end: f64, rule: ClockRule) -> Result<Vec<f64>> {
    let n = expo.len();
    let mut clock = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    clock.push(acc);
    for i in 0..n {
        let scale = expo[i].exp();
        if !scale.is_finite() {
            return Err(Error::Overflow(format!(
                "e^{{{:.6e}}} overflows at grid index {i}",
                expo[i]
            )));
        }
        let start = i as f64 * step;
        let len = if i + 1 == n { window_end - start } else { step };
        let shape = match rule {
            ClockRule::ExactLinear if i + 1 < n => exp_ratio(expo[i + 1] - expo[i]),
            _ => 1.0,
        };
        acc += scale * len * shape;
        if !acc.is_finite() {
            return Err(Error::Overflow(format!("clock overflows at grid index {i}")));
        }
        clock.push(acc);
    }
    Ok(clock)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PssmpPath {
    pub alpha: f64,
    pub start: f64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// `T₀`, or infinity when the process is not absorbed inside the window.
    pub absorption: f64,
    /// Self-similar time up to which the path is represented.
    pub observed_until: f64,
    pub rule: ClockRule,
}

impl PssmpPath {
    /// `X_t`, or 0 at and after absorption. `None` outside the window.
    pub fn value_at(&self, t: f64) -> Option<f64> {
        if t >= self.absorption {
            return Some(0.0);
        }
        if t < 0.0 || t >= self.observed_until {
            return None;
        }
        let idx = self.times.partition_point(|&s| s <= t) - 1;
        Some(self.values[idx])
    }

    /// CSV with columns `t,X`, ending with the absorption row `T₀,0`
    /// (`inf,` when not absorbed in the window).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,X\n");
        for (t, v) in self.times.iter().zip(&self.values) {
            out.push_str(&format!("{t:.12e},{v:.12e}\n"));
        }
        if self.absorption.is_finite() {
            out.push_str(&format!("{:.12e},0\n", self.absorption));
        } else {
            out.push_str("inf,\n");
        }
        out
    }
}

fn check_alpha_start(x: f64, alpha: f64) -> Result<()> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(invalid(format!("start x = {x} must be positive")));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(invalid(format!("alpha = {alpha} must be positive")));
    }
    Ok(())
}

pub fn lamperti_forward(path: &LevyPath, x: f64, alpha: f64) -> Result<PssmpPath> {
    lamperti_forward_with(path, x, alpha, ClockRule::LeftPoint)
}

pub fn lamperti_forward_with(path: &LevyPath, x: f64, alpha: f64, rule: ClockRule) -> Result<PssmpPath> {
    check_alpha_start(x, alpha)?;
    if path.is_empty() {
        return Err(Error::Shape("Lévy path has no grid values".into()));
    }
    let expo: Vec<f64> = path.values.iter().map(|&v| alpha * v).collect();
    let clock = cumulative_clock(&expo, path.step, path.window_end(), rule)?;
    let factor = x.powf(alpha);
    let n = path.len();
    let times = clock[..n].iter().map(|a| factor * a).collect();
    let values = path.values.iter().map(|&v| x * v.exp()).collect();
    let end = factor * clock[n];
    Ok(PssmpPath {
        alpha,
        start: x,
        times,
        values,
        absorption: if path.killed_in_window() { end } else { f64::INFINITY },
        observed_until: end,
        rule,
    })
}

/// Lévy time elapsed at each point of `p`, i.e. `∫_0^t X_u^{-α} du` for the
/// piecewise-constant path.
pub fn levy_clock(p: &PssmpPath) -> Vec<f64> {
    let mut s = Vec::with_capacity(p.times.len());
    let mut acc = 0.0;
    for i in 0..p.times.len() {
        s.push(acc);
        let next = p.times.get(i + 1).copied().unwrap_or(p.observed_until);
        acc += (next - p.times[i]) * p.values[i].powf(-p.alpha);
    }
    s
}

pub fn lamperti_inverse(p: &PssmpPath) -> Result<LevyPath> {
    check_alpha_start(p.start, p.alpha)?;
    let n = p.times.len();
    if n == 0 || n != p.values.len() {
        return Err(Error::Shape("times and values must be nonempty and of equal length".into()));
    }
    if p.times[0] != 0.0 || p.values[0] != p.start {
        return Err(Error::Shape("path must start at time 0 from its start point".into()));
    }
    if let Some(i) = p.values.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::Shape(format!("X vanishes at index {i}, before the recorded absorption")));
    }
    let absorbed = p.absorption.is_finite();
    if absorbed && (p.absorption - p.observed_until).abs() > 1e-12 * p.absorption.max(1.0) {
        return Err(Error::Shape("absorption time disagrees with the end of the window".into()));
    }
    let factor = p.start.powf(p.alpha);
    let xi: Vec<f64> = p.values.iter().map(|&v| (v / p.start).ln()).collect();
    let mut ends: Vec<f64> = p.times[1..].to_vec();
    ends.push(p.observed_until);
    // Lévy-time length of each cell, with the rounding error of the time
    // difference it is computed from.
    let cell = |i: usize| {
        let shape = match p.rule {
            ClockRule::ExactLinear if i + 1 < n => exp_ratio(p.alpha * (xi[i + 1] - xi[i])),
            _ => 1.0,
        };
        let rate = factor * (p.alpha * xi[i]).exp() * shape;
        ((ends[i] - p.times[i]) / rate, 4.0 * f64::EPSILON * ends[i] / rate)
    };
    let cell_len = |i: usize| cell(i).0;
    let full = if absorbed { n - 1 } else { n };
    let lens: Vec<(f64, f64)> = (0..full).map(cell).collect();
    let step = if lens.is_empty() {
        // Killed before the first grid point: the step is not recorded
        // anywhere, so the partial cell stands in for it.
        cell_len(n - 1)
    } else {
        // Weighted by precision, so cells whose time difference has lost its
        // digits to a large accumulated clock barely count.
        let w = |l: f64, err: f64| 1.0 / (err + 1e-15 * l).powi(2);
        let (num, den) = lens
            .iter()
            .fold((0.0, 0.0), |(a, b), &(l, err)| (a + w(l, err) * l, b + w(l, err)));
        let h = num / den;
        if let Some(bad) = lens.iter().find(|&&(l, err)| (l - h).abs() > 1e-6 * h + err) {
            return Err(Error::Shape(format!("nonuniform Lévy step: cell of length {} vs mean {h}", bad.0)));
        }
        h
    };
    let lifetime = if absorbed {
        (n - 1) as f64 * step + cell_len(n - 1)
    } else {
        f64::INFINITY
    };
    Ok(LevyPath {
        step,
        values: xi,
        lifetime,
        tilt_index: 0.0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    HitsZeroKilled,
    HitsZeroDrift,
    NeverHitsZero,
    Oscillating,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Classification {
    pub regime: Regime,
    /// `E[ξ_1]`; `None` flags an infinite or undefined jump mean, in which
    /// case an unkilled process is reported as oscillating.
    pub mean: Option<f64>,
}

impl Classification {
    pub fn hits_zero(&self) -> bool {
        matches!(self.regime, Regime::HitsZeroKilled | Regime::HitsZeroDrift)
    }
}

/// The hitting-time trichotomy. It does not depend on `α`, which is taken
/// only so that call sites read like the model they describe.
pub fn classify(t: &LevyTriplet, alpha: f64) -> Classification {
    let _ = alpha;
    let mean = t.mean();
    let regime = if t.kill_rate > 0.0 {
        Regime::HitsZeroKilled
    } else {
        match mean {
            Some(m) if m < 0.0 => Regime::HitsZeroDrift,
            Some(m) if m > 0.0 => Regime::NeverHitsZero,
            _ => Regime::Oscillating,
        }
    };
    Classification { regime, mean }
}

/// `U_u = e^{-u/α} X_{e^u - 1}` read off at the images `u = ln(1 + t)` of the
/// path's grid.
#[derive(Clone, Debug, PartialEq)]
pub struct OuPath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub lifetime: f64,
}

/// The exponent is `-u/α`, the one compatible with the `s^{-γ/α}` and
/// `x ↦ x s^{1/α}` scaling of self-similar entrance laws; with it the pure
/// unit-drift flow `(1+t)^{1/α}` maps to the constant 1.
pub fn ou_transform(p: &PssmpPath) -> OuPath {
    let times: Vec<f64> = p.times.iter().map(|t| t.ln_1p()).collect();
    let values = p
        .times
        .iter()
        .zip(&p.values)
        .map(|(t, x)| x * (-t.ln_1p() / p.alpha).exp())
        .collect();
    OuPath {
        times,
        values,
        lifetime: p.absorption.ln_1p(),
    }
}
