//! Statistics shared by the checks: Kolmogorov–Smirnov distances, the Hill
//! estimator, percentile bootstrap, effective sample size, resampling and
//! the report row every check emits.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{Error, Result};

fn need(n: usize, min: usize, what: &str) -> Result<()> {
    if n < min {
        return Err(Error::Size(format!("{what} needs at least {min} samples, got {n}")));
    }
    Ok(())
}

fn sorted(a: &[f64]) -> Vec<f64> {
    let mut v = a.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Sup-distance between the empirical CDFs of `a` and `b`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    need(a.len(), 50, "ks_two_sample")?;
    need(b.len(), 50, "ks_two_sample")?;
    let wa = vec![1.0; a.len()];
    let wb = vec![1.0; b.len()];
    ks_weighted(a, &wa, b, &wb)
}

/// Two-sample distance between weighted empirical laws, each normalized to
/// total mass one.
pub fn ks_weighted(a: &[f64], wa: &[f64], b: &[f64], wb: &[f64]) -> Result<f64> {
    need(a.len(), 50, "ks_weighted")?;
    need(b.len(), 50, "ks_weighted")?;
    let prep = |x: &[f64], w: &[f64]| -> Result<Vec<(f64, f64)>> {
        let total: f64 = w.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Degenerate("weights must have positive finite total".into()));
        }
        let mut v: Vec<(f64, f64)> = x.iter().zip(w).map(|(&x, &w)| (x, w / total)).collect();
        v.sort_by(|p, q| p.0.total_cmp(&q.0));
        Ok(v)
    };
    let (a, b) = (prep(a, wa)?, prep(b, wb)?);
    let (mut i, mut j) = (0, 0);
    let (mut fa, mut fb, mut d) = (0.0f64, 0.0f64, 0.0f64);
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(p), Some(q)) => p.0.min(q.0),
            (Some(p), None) => p.0,
            (None, Some(q)) => q.0,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i].0 == x {
            fa += a[i].1;
            i += 1;
        }
        while j < b.len() && b[j].0 == x {
            fb += b[j].1;
            j += 1;
        }
        d = d.max((fa - fb).abs());
    }
    Ok(d.min(1.0))
}

/// Sup-distance between the empirical CDF of `a` and the CDF `cdf`.
pub fn ks_vs_cdf<F: Fn(f64) -> f64>(a: &[f64], cdf: F) -> Result<f64> {
    need(a.len(), 50, "ks_vs_cdf")?;
    let v = sorted(a);
    let n = v.len() as f64;
    let mut d = 0.0f64;
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j < v.len() && v[j] == v[i] {
            j += 1;
        }
        let f = cdf(v[i]);
        d = d.max((f - i as f64 / n).abs()).max((j as f64 / n - f).abs());
        i = j;
    }
    Ok(d)
}

/// Asymptotic 95% critical value of the two-sample statistic.
pub fn ks_critical_two_sample(n: usize, m: usize) -> f64 {
    1.358 * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HillEstimate {
    pub index: f64,
    pub se: f64,
}

/// Hill tail index from the top `k` order statistics.
pub fn hill_estimator(a: &[f64], k: usize) -> Result<HillEstimate> {
    if k < 50 || k > a.len() / 10 {
        return Err(Error::Size(format!("Hill needs 50 <= k <= n/10, got k = {k}, n = {}", a.len())));
    }
    if a.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::InvalidParameter("Hill estimator needs positive samples".into()));
    }
    let mut v = a.to_vec();
    // Only the top k + 1 order statistics matter.
    let pivot = v.len() - k - 1;
    v.select_nth_unstable_by(pivot, f64::total_cmp);
    let threshold = v[pivot].ln();
    let mean_log: f64 = v[pivot + 1..].iter().map(|x| x.ln() - threshold).sum::<f64>() / k as f64;
    let index = 1.0 / mean_log;
    Ok(HillEstimate {
        index,
        se: index / (k as f64).sqrt(),
    })
}

/// Percentile bootstrap interval for `stat`.
pub fn bootstrap_ci<F, R>(stat: F, data: &[f64], resamples: usize, level: f64, rng: &mut R) -> Result<(f64, f64)>
where
    F: Fn(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    let reps = bootstrap_replicates(&stat, data, resamples, rng)?;
    Ok(percentile_interval(reps, level))
}

/// Standard deviation of the bootstrap replicates of `stat`.
pub fn bootstrap_se<F, R>(stat: F, data: &[f64], resamples: usize, rng: &mut R) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    let reps = bootstrap_replicates(&stat, data, resamples, rng)?;
    Ok(sample_sd(&reps))
}

fn bootstrap_replicates<F, R>(stat: &F, data: &[f64], resamples: usize, rng: &mut R) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    need(data.len(), 100, "bootstrap")?;
    let n = data.len();
    let mut buf = vec![0.0; n];
    Ok((0..resamples)
        .map(|_| {
            for slot in buf.iter_mut() {
                *slot = data[rng.random_range(0..n)];
            }
            stat(&buf)
        })
        .collect())
}

fn percentile_interval(mut reps: Vec<f64>, level: f64) -> (f64, f64) {
    reps.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - level);
    let at = |p: f64| {
        let pos = p * (reps.len() - 1) as f64;
        let (lo, frac) = (pos.floor() as usize, pos - pos.floor());
        let hi = (lo + 1).min(reps.len() - 1);
        reps[lo] + frac * (reps[hi] - reps[lo])
    };
    (at(tail), at(1.0 - tail))
}

pub fn mean(a: &[f64]) -> f64 {
    a.iter().sum::<f64>() / a.len() as f64
}

pub fn sample_sd(a: &[f64]) -> f64 {
    let m = mean(a);
    (a.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (a.len() as f64 - 1.0)).sqrt()
}

/// Kish effective sample size `(Σw)² / Σw²`.
pub fn effective_sample_size(w: &[f64]) -> f64 {
    let s: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|x| x * x).sum();
    if s2 > 0.0 {
        s * s / s2
    } else {
        0.0
    }
}

/// Multinomial resampling of `n` indices proportional to `w`.
pub fn resample<R: Rng + ?Sized>(w: &[f64], n: usize, rng: &mut R) -> Result<Vec<usize>> {
    let dist = WeightedIndex::new(w).map_err(|e| Error::Degenerate(format!("resampling weights: {e}")))?;
    Ok((0..n).map(|_| dist.sample(rng)).collect())
}

/// Least-squares slope through the origin with its standard error.
pub fn slope_through_origin(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    need(x.len(), 2, "slope fit")?;
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let slope = sxy / sxx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a).powi(2)).sum();
    let se = (rss / (x.len() as f64 - 1.0) / sxx).sqrt();
    Ok((slope, se))
}

pub const REPORT_HEADER: &str = "check,params,lhs,rhs,statistic,threshold,pass,n,seed";

/// One row of `report.csv`. `pass` is `statistic <= threshold` by
/// construction.
#[derive(Clone, Debug, PartialEq)]
pub struct TestReport {
    pub check: String,
    pub params: Vec<(String, String)>,
    pub lhs: f64,
    pub rhs: f64,
    pub statistic: f64,
    pub threshold: f64,
    pub pass: bool,
    pub n: usize,
    pub seed: u64,
}

impl TestReport {
    pub fn new(check: &str, lhs: f64, rhs: f64, statistic: f64, threshold: f64, n: usize, seed: u64) -> Self {
        Self {
            check: check.to_string(),
            params: Vec::new(),
            lhs,
            rhs,
            statistic,
            threshold,
            pass: statistic <= threshold,
            n,
            seed,
        }
    }

    pub fn param(mut self, key: &str, value: impl ToString) -> Self {
        self.params.push((key.to_string(), value.to_string()));
        self
    }

    pub fn csv_row(&self) -> String {
        let params: Vec<String> = self.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!(
            "{},{},{:.12e},{:.12e},{:.12e},{:.12e},{},{},{}",
            self.check,
            params.join(";"),
            self.lhs,
            self.rhs,
            self.statistic,
            self.threshold,
            self.pass,
            self.n,
            self.seed
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Streams;
    use rand_distr::StandardNormal;

    fn uniforms(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = Streams::new(seed).replica(0);
        (0..n).map(|_| rng.random::<f64>()).collect()
    }

    #[test]
    fn ks_trivia() {
        let a = uniforms(1, 200);
        assert_eq!(ks_two_sample(&a, &a).unwrap(), 0.0);
        let b: Vec<f64> = a.iter().map(|x| x + 2.0).collect();
        assert_eq!(ks_two_sample(&a, &b).unwrap(), 1.0);
        assert_eq!(ks_vs_cdf(&b, |x| x.clamp(0.0, 1.0)).unwrap(), 1.0);
        assert!(matches!(ks_two_sample(&a[..10], &a), Err(Error::Size(_))));
    }

    #[test]
    fn ks_uniform_streams_under_critical_value() {
        let n = 10_000;
        let mut passes = 0;
        for rep in 0..20 {
            let a = uniforms(100 + 2 * rep, n);
            let b = uniforms(101 + 2 * rep, n);
            if ks_two_sample(&a, &b).unwrap() < ks_critical_two_sample(n, n) {
                passes += 1;
            }
        }
        assert!(passes >= 16);
        assert!(ks_vs_cdf(&uniforms(9, n), |x| x).unwrap() < 1.36 / (n as f64).sqrt() * 1.3);
    }

    #[test]
    fn hill_on_pareto_and_scale_invariance() {
        let a: Vec<f64> = uniforms(3, 100_000).iter().map(|u| (1.0 - u).powf(-0.5)).collect();
        let h = hill_estimator(&a, 1000).unwrap();
        assert!((h.index - 2.0).abs() < 3.0 * 2.0 / 1000f64.sqrt());
        let scaled: Vec<f64> = a.iter().map(|x| 8.0 * x).collect();
        let h2 = hill_estimator(&scaled, 1000).unwrap();
        assert!((h.index - h2.index).abs() < 1e-9 * h.index);
        assert!(hill_estimator(&a, 20).is_err());
    }

    #[test]
    fn bootstrap_width_and_degenerate() {
        let mut rng = Streams::new(4).replica(0);
        let c = vec![2.5; 200];
        assert_eq!(bootstrap_ci(mean, &c, 100, 0.95, &mut rng).unwrap(), (2.5, 2.5));
        let z: Vec<f64> = (0..10_000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let (lo, hi) = bootstrap_ci(mean, &z, 500, 0.95, &mut rng).unwrap();
        let expected = 2.0 * 1.96 / 100.0;
        assert!(((hi - lo) - expected).abs() < 0.2 * expected);
    }

    #[test]
    fn weighted_ks_matches_unweighted_with_unit_weights() {
        let a = uniforms(5, 300);
        let b = uniforms(6, 400);
        let d = ks_two_sample(&a, &b).unwrap();
        let dw = ks_weighted(&a, &vec![3.0; 300], &b, &vec![0.5; 400]).unwrap();
        assert!((d - dw).abs() < 1e-12);
    }

    #[test]
    fn report_pass_rule() {
        let r = TestReport::new("x", 1.0, 1.0, 0.5, 0.5, 10, 1).param("a", 1);
        assert!(r.pass);
        assert!(r.csv_row().starts_with("x,a=1,"));
        assert!(!TestReport::new("x", 0.0, 0.0, f64::NAN, 1.0, 1, 1).pass);
    }
}
