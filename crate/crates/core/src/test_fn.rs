//! A fixed catalog of test functions on `(0, ∞)` against which measures are
//! evaluated.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunction {
    /// `1_{(a, b]}`; `b` may be infinite.
    Indicator { a: f64, b: f64 },
    /// `x^p e^{-x}`.
    PowerExp { p: f64 },
    /// `e^{-λ x^α}`.
    StretchedExp { lambda: f64, alpha: f64 },
    /// Smooth bump supported on `(center - width, center + width)`, equal to
    /// 1 at the center.
    Bump { center: f64, width: f64 },
    One,
    Zero,
}

impl TestFunction {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            TestFunction::Indicator { a, b } => a >= 0.0 && b >= a,
            TestFunction::PowerExp { p } => p.is_finite() && p >= 0.0,
            TestFunction::StretchedExp { lambda, alpha } => lambda > 0.0 && alpha > 0.0,
            TestFunction::Bump { center, width } => width > 0.0 && center - width >= 0.0,
            TestFunction::One | TestFunction::Zero => true,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("bad test function parameters: {self:?}")))
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            TestFunction::Indicator { a, b } => {
                if x > a && x <= b {
                    1.0
                } else {
                    0.0
                }
            }
            TestFunction::PowerExp { p } => x.powf(p) * (-x).exp(),
            TestFunction::StretchedExp { lambda, alpha } => (-lambda * x.powf(alpha)).exp(),
            TestFunction::Bump { center, width } => {
                let r = (x - center) / width;
                if r.abs() < 1.0 {
                    (1.0 - 1.0 / (1.0 - r * r)).exp()
                } else {
                    0.0
                }
            }
            TestFunction::One => 1.0,
            TestFunction::Zero => 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            TestFunction::Zero => true,
            TestFunction::Indicator { a, b } => a == b,
            _ => false,
        }
    }

    /// Whether the function is smooth, so that quadrature in `x` converges
    /// at the rate of the rule.
    pub fn is_smooth(&self) -> bool {
        !matches!(self, TestFunction::Indicator { .. })
    }

    /// An interval of `x` outside which the function is below `1e-16`
    /// relative to its scale, or exactly zero.
    pub fn effective_support(&self) -> (f64, f64) {
        match *self {
            TestFunction::Indicator { a, b } => (a, b),
            TestFunction::PowerExp { p } => {
                let lo = if p > 0.0 { 1e-16f64.powf(1.0 / p) } else { 0.0 };
                (lo, 40.0 + 2.0 * p * (1.0 + p).ln() + 3.0 * p)
            }
            TestFunction::StretchedExp { lambda, alpha } => (0.0, (37.0 / lambda).powf(1.0 / alpha)),
            TestFunction::Bump { center, width } => (center - width, center + width),
            TestFunction::One => (0.0, f64::INFINITY),
            TestFunction::Zero => (1.0, 1.0),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            TestFunction::Indicator { a, b } => format!("ind({a}:{b})"),
            TestFunction::PowerExp { p } => format!("powexp({p})"),
            TestFunction::StretchedExp { lambda, alpha } => format!("strexp({lambda}:{alpha})"),
            TestFunction::Bump { center, width } => format!("bump({center}:{width})"),
            TestFunction::One => "one".into(),
            TestFunction::Zero => "zero".into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values() {
        let ind = TestFunction::Indicator { a: 0.5, b: 2.0 };
        assert_eq!(ind.eval(0.5), 0.0);
        assert_eq!(ind.eval(2.0), 1.0);
        assert_eq!(TestFunction::Indicator { a: 1.0, b: f64::INFINITY }.eval(1e300), 1.0);
        assert_eq!(TestFunction::Bump { center: 1.0, width: 0.5 }.eval(1.0), 1.0);
        assert_eq!(TestFunction::Bump { center: 1.0, width: 0.5 }.eval(1.5), 0.0);
        assert!((TestFunction::PowerExp { p: 1.0 }.eval(1.0) - (-1f64).exp()).abs() < 1e-16);
        assert!(TestFunction::Indicator { a: 1.0, b: 1.0 }.is_zero());
    }

    #[test]
    fn effective_support_is_negligible_outside() {
        for f in [
            TestFunction::PowerExp { p: 1.0 },
            TestFunction::PowerExp { p: 3.0 },
            TestFunction::StretchedExp { lambda: 2.0, alpha: 1.5 },
        ] {
            let (lo, hi) = f.effective_support();
            assert!(f.eval(hi) < 1e-15, "{f:?}");
            if lo > 0.0 {
                assert!(f.eval(lo) <= 1e-15, "{f:?}");
            }
        }
    }

    #[test]
    fn toml_form() {
        #[derive(Deserialize)]
        struct W {
            f: Vec<TestFunction>,
        }
        let w: W = toml::from_str("f = [{ kind = \"indicator\", a = 1.0, b = inf }, { kind = \"one\" }]").unwrap();
        assert_eq!(w.f[1], TestFunction::One);
        assert!(toml::from_str::<W>("f = [{ kind = \"bump\", center = 1.0, width = 0.5, x = 1 }]").is_err());
    }
}
