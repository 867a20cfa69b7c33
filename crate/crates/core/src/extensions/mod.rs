//! Two generalizations of the one-dimensional entrance law: the process
//! `(R, H)` driven by a pair of subordinators, and multi-self-similar
//! processes on `(0, ∞)^n`.
//!
//! Neither comes with a closed-form `μ_t` to compare against, so both are
//! checked through the resolvent identity
//! `ν_κ(R_λ f) = (ν_κ f - ν_λ f) / (λ - κ)`, where `ν_λ f = ∫ e^{-λt} μ_t f dt`.

pub mod bivariate;
pub mod multi;

use serde::{Deserialize, Serialize};

use crate::entrance::CheckContext;
use crate::error::{invalid, Error, Result};
use crate::stats::{self, TestReport};
use crate::test_fn::TestFunction;

pub use bivariate::{
    entrance_tilde_estimate, lindner_maller_check, rh_from_events, simulate_rh, BivariateSubSpec, JointEvent,
    JointJumpLaw, LmCheck, LmVerdict, PositiveLaw, RhPath, TildeSample, TildeSampler,
};
pub use multi::{mssmp_at, mssmp_potential_estimate, mssmp_transform, MultiPath, MultiSpec, PotentialEstimate};

/// `f(x_1, …, x_n) = Π f_i(x_i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductFunction {
    pub factors: Vec<TestFunction>,
}

impl ProductFunction {
    pub fn new(factors: Vec<TestFunction>) -> Self {
        Self { factors }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.factors.len() != dim {
            return Err(invalid(format!(
                "test function has {} factors, state space has dimension {dim}",
                self.factors.len()
            )));
        }
        self.factors.iter().try_for_each(TestFunction::validate)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut acc = 1.0;
        for (f, &v) in self.factors.iter().zip(x) {
            acc *= f.eval(v);
            if acc == 0.0 {
                break;
            }
        }
        acc
    }

    pub fn is_zero(&self) -> bool {
        self.factors.iter().any(TestFunction::is_zero)
    }

    pub fn label(&self) -> String {
        let parts: Vec<String> = self.factors.iter().map(TestFunction::label).collect();
        parts.join("*")
    }
}

/// Monte Carlo mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_draws(draws: &[f64]) -> Self {
        let n = draws.len();
        let se = if n > 1 { stats::sample_sd(draws) / (n as f64).sqrt() } else { 0.0 };
        Self {
            value: stats::mean(draws),
            se,
            n,
        }
    }
}

/// Which construction supplies the potentials in a resolvent check.
#[derive(Clone, Copy, Debug)]
pub enum PotentialSource<'a> {
    Tilde { spec: &'a BivariateSubSpec, alpha: f64 },
    Multi { spec: &'a MultiSpec },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResolventReport {
    pub lhs: Estimate,
    pub rhs: Estimate,
    pub combined_se: f64,
    pub report: TestReport,
}

/// Checks `ν_κ(R_λ f) = (ν_κ f - ν_λ f) / (λ - κ)` to within
/// `se_multiplier` combined standard errors.
pub fn resolvent_identity_check(
    ctx: &CheckContext,
    source: PotentialSource<'_>,
    lam: f64,
    kappa: f64,
    f: &ProductFunction,
    n: usize,
) -> Result<ResolventReport> {
    if !(lam > 0.0 && kappa > 0.0 && lam.is_finite() && kappa.is_finite()) || lam == kappa {
        return Err(invalid(format!("need distinct positive λ, κ, got {lam}, {kappa}")));
    }
    if n < 2 {
        return Err(Error::Size(format!("resolvent check needs at least 2 draws, got {n}")));
    }
    let (lhs, rhs, combined_se, name) = match source {
        PotentialSource::Tilde { spec, alpha } => {
            let (lhs, rhs, se) = bivariate::resolvent_sides(ctx, spec, alpha, lam, kappa, f, n)?;
            (lhs, rhs, se, "resolvent_tilde")
        }
        PotentialSource::Multi { spec } => {
            let (lhs, rhs) = multi::resolvent_sides(ctx, spec, lam, kappa, f, n)?;
            let se = lhs.se.hypot(rhs.se);
            (lhs, rhs, se, "resolvent_multi")
        }
    };
    let stat = crate::entrance::z_score(lhs.value, rhs.value, combined_se, &ctx.ctl);
    let report = TestReport::new(name, lhs.value, rhs.value, stat, ctx.thresholds.se_multiplier, n, ctx.seed)
        .param("lambda", lam)
        .param("kappa", kappa)
        .param("f", f.label());
    Ok(ResolventReport {
        lhs,
        rhs,
        combined_se,
        report,
    })
}
