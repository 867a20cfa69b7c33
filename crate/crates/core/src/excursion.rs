//! Zero-set level excursion theory: the marked Poisson point process of
//! excursion lengths, its gluing into an inverse local time, the deletion
//! time change that keeps only excursions straddling a new running maximum
//! of the signed walk, and the positivity parameter of the resulting stable
//! process.
//!
//! Excursion shapes are never sampled; every statistic here is a function
//! of lengths and marks.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{invalid, Error, Result};
use crate::quad;
use crate::rng::{par_replicas, Streams};
use crate::stats::{self, TestReport};

/// A stable subordinator with Lévy measure `scale·x^{-1-index} dx`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StableSubSpec {
    pub index: f64,
    pub scale: f64,
}

impl StableSubSpec {
    pub fn new(index: f64, scale: f64) -> Result<Self> {
        if !(index > 0.0 && index < 1.0) {
            return Err(Error::Domain(format!("stable index {index} must lie in (0, 1)")));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(invalid(format!("scale {scale} must be positive")));
        }
        Ok(Self { index, scale })
    }

    /// The scale for which `E[e^{-λσ_1}] = e^{-λ^a}`, i.e. `φ(1) = 1`.
    pub fn unit(index: f64) -> Result<Self> {
        Self::new(index, index / gamma(1.0 - index))
    }

    /// One draw of `σ_1`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let a = self.index;
        (self.scale * gamma(1.0 - a) / a).powf(1.0 / a) * positive_stable(a, rng)
    }
}

/// Positive `a`-stable variable with `E[e^{-λS}] = e^{-λ^a}`, by Kanter's
/// representation.
pub fn positive_stable<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    let u = PI * (1.0 - rng.random::<f64>());
    let e: f64 = Exp1.sample(rng);
    let left = (a * u).sin() / u.sin().powf(1.0 / a);
    let right = (((1.0 - a) * u).sin() / e).powf((1.0 - a) / a);
    left * right
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExcursionAtom {
    pub local_time: f64,
    pub length: f64,
    /// `+1` (red) or `-1` (blue).
    pub mark: i8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExcursionSkeleton {
    /// In increasing local time.
    pub atoms: Vec<ExcursionAtom>,
    pub cutoff: f64,
    pub horizon: f64,
    pub index: f64,
    pub scale: f64,
}

impl ExcursionSkeleton {
    pub fn expected_count(index: f64, scale: f64, horizon: f64, cutoff: f64) -> f64 {
        horizon * scale / index * cutoff.powf(-index)
    }

    pub fn lengths(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.length).collect()
    }

    pub fn to_csv(&self, deletion: Option<&Deletion>) -> String {
        let mut survived = vec![None; self.atoms.len()];
        if let Some(d) = deletion {
            for s in &d.survivors {
                survived[s.atom] = Some(s.observed);
            }
        }
        let mut out = String::from("length,mark,survived,observed_length\n");
        for (a, s) in self.atoms.iter().zip(&survived) {
            out.push_str(&format!(
                "{:.12e},{},{},{:.12e}\n",
                a.length,
                a.mark,
                s.is_some(),
                s.unwrap_or(0.0)
            ));
        }
        out
    }
}

/// Length intensity `scale·ℓ^{-1-β/α}` on `(cutoff, ∞)`, fair marks.
pub fn sample_skeleton<R: Rng + ?Sized>(
    alpha: f64,
    beta: f64,
    horizon: f64,
    cutoff: f64,
    scale: f64,
    rng: &mut R,
) -> Result<ExcursionSkeleton> {
    let spec = StableSubSpec::new(beta / alpha, scale)?;
    if !(cutoff > 0.0 && horizon > 0.0) {
        return Err(invalid("cutoff and horizon must be positive"));
    }
    let a = spec.index;
    let mean = ExcursionSkeleton::expected_count(a, scale, horizon, cutoff);
    let count = if mean > 0.0 {
        Poisson::new(mean).map_err(|e| invalid(e.to_string()))?.sample(rng) as usize
    } else {
        0
    };
    let mut atoms: Vec<ExcursionAtom> = (0..count)
        .map(|_| ExcursionAtom {
            local_time: horizon * rng.random::<f64>(),
            length: cutoff * (1.0 - rng.random::<f64>()).powf(-1.0 / a),
            mark: if rng.random::<bool>() { 1 } else { -1 },
        })
        .collect();
    atoms.sort_by(|p, q| p.local_time.total_cmp(&q.local_time));
    Ok(ExcursionSkeleton {
        atoms,
        cutoff,
        horizon,
        index: a,
        scale,
    })
}

/// The subordinator `σ_t = Σ_{s ≤ t} ℓ_s` at the atom local times.
#[derive(Clone, Debug, PartialEq)]
pub struct GluedZeroSet {
    pub local_times: Vec<f64>,
    pub sigma: Vec<f64>,
    pub horizon: f64,
}

impl GluedZeroSet {
    pub fn sigma_at(&self, t: f64) -> f64 {
        let k = self.local_times.partition_point(|&s| s <= t);
        if k == 0 {
            0.0
        } else {
            self.sigma[k - 1]
        }
    }

    /// `L_y = inf{t : σ_t ≥ y}`, capped at the horizon.
    pub fn local_time_at(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        let k = self.sigma.partition_point(|&v| v < y);
        self.local_times.get(k).copied().unwrap_or(self.horizon)
    }
}

pub fn glue(sk: &ExcursionSkeleton) -> GluedZeroSet {
    let mut acc = 0.0;
    GluedZeroSet {
        local_times: sk.atoms.iter().map(|a| a.local_time).collect(),
        sigma: sk
            .atoms
            .iter()
            .map(|a| {
                acc += a.length;
                acc
            })
            .collect(),
        horizon: sk.horizon,
    }
}

/// `∫_ε^∞ (1 - e^{-λs}) c s^{-1-a} ds`.
pub fn truncated_laplace_exponent(index: f64, scale: f64, cutoff: f64, lambda: f64) -> Result<f64> {
    // In u = ln(s/ε) the integrand decays like e^{-a u}.
    let upper = (1.0 / (lambda * cutoff)).ln().max(0.0) + 60.0 / index;
    let r = quad::integrate(
        |u: f64| {
            let s = cutoff * u.exp();
            -(-lambda * s).exp_m1() * scale * s.powf(-index)
        },
        0.0,
        upper,
        1e-14,
        1e-12,
    )?;
    Ok(r.value)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Survivor {
    /// Index into the skeleton's atoms.
    pub atom: usize,
    pub length: f64,
    /// Part above the previous running maximum.
    pub observed: f64,
    /// Part below it, removed by the time change.
    pub deleted_prefix: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Deletion {
    pub survivors: Vec<Survivor>,
    pub red_total: f64,
    pub red_count: usize,
}

/// Walk `Z` with red steps `+ℓ` and blue steps `-q^{α/β}ℓ`; a red step that
/// passes the running maximum `M` survives with observed length
/// `Z_after - M` and deleted prefix `M - Z_before`.
pub fn deletion_time_change(sk: &ExcursionSkeleton, q: f64, alpha: f64, beta: f64) -> Result<Deletion> {
    if !(q > 0.0) {
        return Err(invalid(format!("q = {q} must be positive")));
    }
    let blue_scale = q.powf(alpha / beta);
    // Drawdown D = M - Z ≥ 0.
    let mut drawdown = 0.0f64;
    let mut survivors = Vec::new();
    let (mut red_total, mut red_count) = (0.0, 0);
    for (k, a) in sk.atoms.iter().enumerate() {
        if a.mark > 0 {
            red_total += a.length;
            red_count += 1;
            if a.length > drawdown {
                survivors.push(Survivor {
                    atom: k,
                    length: a.length,
                    observed: a.length - drawdown,
                    deleted_prefix: drawdown,
                });
                drawdown = 0.0;
            } else {
                drawdown -= a.length;
            }
        } else {
            drawdown += blue_scale * a.length;
        }
    }
    Ok(Deletion {
        survivors,
        red_total,
        red_count,
    })
}

/// `ρ = 1/2 + (α/(πβ)) arctan(((1-q)/(1+q)) tan(πβ/(2α)))`.
pub fn rho_formula(alpha: f64, beta: f64, q: f64) -> Result<f64> {
    let a = beta / alpha;
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::Domain(format!("β/α = {a} must lie in (0, 1)")));
    }
    if !(q > 0.0 && q.is_finite()) {
        return Err(invalid(format!("q = {q} must be positive")));
    }
    Ok(0.5 + ((1.0 - q) / (1.0 + q) * (PI * a / 2.0).tan()).atan() / (PI * a))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RhoEstimate {
    pub rho: f64,
    pub se: f64,
    pub n: usize,
}

/// `P(S - q^{1/a} S' > 0)` for independent positive `a`-stable `S, S'`.
pub fn rho_empirical(a: f64, q: f64, n: usize, streams: Streams) -> Result<RhoEstimate> {
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::Domain(format!("index {a} must lie in (0, 1)")));
    }
    if !(q > 0.0) || n == 0 {
        return Err(invalid("need q > 0 and n > 0"));
    }
    let c = q.powf(1.0 / a);
    let positive = par_replicas(streams, n, |_, r| {
        let s = positive_stable(a, r);
        let sp = positive_stable(a, r);
        s > c * sp
    })
    .into_iter()
    .filter(|&b| b)
    .count();
    let rho = positive as f64 / n as f64;
    Ok(RhoEstimate {
        rho,
        se: (rho * (1.0 - rho) / n as f64).sqrt(),
        n,
    })
}

pub fn rho_check(seed: u64, alpha: f64, beta: f64, q: f64, n: usize, streams: Streams) -> Result<TestReport> {
    let exact = rho_formula(alpha, beta, q)?;
    let est = rho_empirical(beta / alpha, q, n, streams)?;
    let tol = 3.0 * (exact * (1.0 - exact) / n as f64).sqrt() + 0.005;
    Ok(TestReport::new("rho", est.rho, exact, (est.rho - exact).abs(), tol, n, seed)
        .param("alpha", alpha)
        .param("beta", beta)
        .param("q", q))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSample {
    /// Observed lengths of survivors at least `10·cutoff`.
    pub survivors: Vec<f64>,
    pub all_lengths: Vec<f64>,
}

/// Run `replicas` independent skeletons over local time `horizon` each and
/// pool their lengths and surviving observed lengths.
#[allow(clippy::too_many_arguments)]
pub fn embedding_sample(
    alpha: f64,
    beta: f64,
    q: f64,
    cutoff: f64,
    horizon: f64,
    replicas: usize,
    streams: Streams,
) -> Result<EmbeddingSample> {
    let spec = StableSubSpec::unit(beta / alpha)?;
    let parts = par_replicas(streams, replicas, |_, r| -> Result<(Vec<f64>, Vec<f64>)> {
        let sk = sample_skeleton(alpha, beta, horizon, cutoff, spec.scale, r)?;
        let del = deletion_time_change(&sk, q, alpha, beta)?;
        let kept = del
            .survivors
            .iter()
            .map(|s| s.observed)
            .filter(|&o| o >= 10.0 * cutoff)
            .collect();
        Ok((kept, sk.lengths()))
    });
    let mut out = EmbeddingSample {
        survivors: Vec::new(),
        all_lengths: Vec::new(),
    };
    for p in parts {
        let (kept, all) = p?;
        out.survivors.extend(kept);
        out.all_lengths.extend(all);
    }
    Ok(out)
}

/// Hill indices of survivor observed lengths against `βρ/α` (15%) and of
/// all lengths against `β/α` (10%), each from the top tenth.
pub fn embedding_check(seed: u64, alpha: f64, beta: f64, q: f64, sample: &EmbeddingSample) -> Result<[TestReport; 2]> {
    let a = beta / alpha;
    let target = a * rho_formula(alpha, beta, q)?;
    let ks = sample.survivors.len() / 10;
    let ka = sample.all_lengths.len() / 10;
    let hs = stats::hill_estimator(&sample.survivors, ks)?;
    let ha = stats::hill_estimator(&sample.all_lengths, ka)?;
    let survivors = TestReport::new(
        "embed_hill_survivors",
        hs.index,
        target,
        (hs.index - target).abs() / target,
        0.15,
        sample.survivors.len(),
        seed,
    );
    let all = TestReport::new(
        "embed_hill_all",
        ha.index,
        a,
        (ha.index - a).abs() / a,
        0.10,
        sample.all_lengths.len(),
        seed,
    );
    let tag = |r: TestReport| r.param("alpha", alpha).param("beta", beta).param("q", q);
    Ok([tag(survivors), tag(all)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rho_formula_values() {
        assert!((rho_formula(1.0, 0.5, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((rho_formula(1.0, 0.5, 0.25).unwrap() - (0.5 + 2.0 / PI * 0.6f64.atan())).abs() < 1e-15);
        assert!((rho_formula(1.0, 0.5, 0.25).unwrap() - 0.84404).abs() < 1e-5);
        assert!((rho_formula(1.0, 0.5, 1e-12).unwrap() - 1.0).abs() < 1e-9);
        assert!(matches!(rho_formula(1.0, 1.0, 0.5), Err(Error::Domain(_))));
        let mut prev = 1.0;
        for k in 1..50 {
            let r = rho_formula(2.0, 1.3, k as f64 * 0.2).unwrap();
            assert!(r < prev);
            prev = r;
        }
    }

    #[test]
    fn kanter_stable_laplace_transform() {
        let mut rng = Streams::new(1).replica(0);
        let a = 0.6;
        let s: Vec<f64> = (0..100_000).map(|_| positive_stable(a, &mut rng)).collect();
        for lambda in [0.3f64, 1.0, 2.5] {
            let v: Vec<f64> = s.iter().map(|x| (-lambda * x).exp()).collect();
            let m = stats::mean(&v);
            let se = stats::sample_sd(&v) / (v.len() as f64).sqrt();
            assert!((m - (-lambda.powf(a)).exp()).abs() < 4.0 * se);
        }
    }

    #[test]
    fn skeleton_counts_and_marks() {
        assert!((ExcursionSkeleton::expected_count(0.5, 1.0, 1.0, 1e-4) - 200.0).abs() < 1e-9);
        let mut rng = Streams::new(2).replica(0);
        let sk = sample_skeleton(1.0, 0.5, 500.0, 1e-4, 1.0, &mut rng).unwrap();
        let n = sk.atoms.len() as f64;
        assert!((n - 1e5).abs() < 4.0 * 1e5f64.sqrt());
        let red = sk.atoms.iter().filter(|a| a.mark > 0).count() as f64;
        assert!((red / n - 0.5).abs() < 4.0 * (0.25 / n).sqrt());
        assert!(sk.atoms.windows(2).all(|w| w[0].local_time < w[1].local_time));
        let h = stats::hill_estimator(&sk.lengths(), 5_000).unwrap();
        assert!((h.index - 0.5).abs() < 0.05);
    }

    #[test]
    fn glue_single_atom() {
        let sk = ExcursionSkeleton {
            atoms: vec![ExcursionAtom { local_time: 0.5, length: 2.0, mark: 1 }],
            cutoff: 1e-3,
            horizon: 1.0,
            index: 0.5,
            scale: 1.0,
        };
        let g = glue(&sk);
        assert_eq!(g.sigma_at(0.49), 0.0);
        assert_eq!(g.sigma_at(0.5), 2.0);
        assert_eq!(g.sigma_at(0.9), 2.0);
        assert_eq!(g.local_time_at(g.sigma_at(0.5)), 0.5);
        assert_eq!(g.local_time_at(1.0), 0.5);
        assert_eq!(g.local_time_at(3.0), 1.0);
    }

    #[test]
    fn glue_inverse_at_atom_times() {
        let mut rng = Streams::new(3).replica(0);
        let sk = sample_skeleton(1.0, 0.7, 2.0, 1e-3, 1.0, &mut rng).unwrap();
        let g = glue(&sk);
        for a in &sk.atoms {
            assert_eq!(g.local_time_at(g.sigma_at(a.local_time)), a.local_time);
        }
    }

    #[test]
    fn deletion_basics() {
        let atom = |mark, length| ExcursionAtom { local_time: 0.0, length, mark };
        let mut sk = ExcursionSkeleton {
            atoms: vec![atom(1, 2.0)],
            cutoff: 1e-3,
            horizon: 1.0,
            index: 0.5,
            scale: 1.0,
        };
        let d = deletion_time_change(&sk, 0.5, 1.0, 0.5).unwrap();
        assert_eq!(d.survivors[0].deleted_prefix, 0.0);
        assert_eq!(d.survivors[0].observed, 2.0);
        // red 2, blue 1 (scaled by q² = 0.25), red 1: crosses the maximum by 0.75.
        sk.atoms = vec![atom(1, 2.0), atom(-1, 1.0), atom(1, 1.0), atom(1, 0.1)];
        let d = deletion_time_change(&sk, 0.5, 1.0, 0.5).unwrap();
        assert_eq!(d.survivors.len(), 3);
        assert!((d.survivors[1].observed - 0.75).abs() < 1e-15);
        assert!((d.survivors[1].deleted_prefix - 0.25).abs() < 1e-15);
        for s in &d.survivors {
            assert!((s.observed + s.deleted_prefix - s.length).abs() < 1e-15);
        }
    }

    #[test]
    fn survivors_monotone_in_q_and_all_red_survive_as_q_vanishes() {
        let mut rng = Streams::new(4).replica(0);
        let sk = sample_skeleton(1.0, 0.5, 20.0, 1e-4, 1.0, &mut rng).unwrap();
        let mut prev = usize::MAX;
        for q in [1e-300, 0.1, 0.25, 0.5, 1.0, 2.0] {
            let d = deletion_time_change(&sk, q, 1.0, 0.5).unwrap();
            let total: f64 = d.survivors.iter().map(|s| s.observed).sum();
            assert!(total <= d.red_total);
            if q == 1e-300 {
                assert_eq!(d.survivors.len(), d.red_count);
            }
            assert!(d.survivors.len() <= prev);
            prev = d.survivors.len();
        }
    }

    #[test]
    fn empirical_laplace_exponent_of_glued_subordinator() {
        let (a, c, eps) = (0.5, 1.0, 1e-3);
        let lambda = 2.0;
        let samples = par_replicas(Streams::new(5), 20_000, |_, r| {
            let sk = sample_skeleton(1.0, a, 1.0, eps, c, r).unwrap();
            (-lambda * glue(&sk).sigma_at(1.0)).exp()
        });
        let m = stats::mean(&samples);
        let se = stats::sample_sd(&samples) / (samples.len() as f64).sqrt();
        let expected = (-truncated_laplace_exponent(a, c, eps, lambda).unwrap()).exp();
        assert!((m - expected).abs() < 4.0 * se, "{m} vs {expected} ± {se}");
    }

    #[test]
    fn rho_swap_symmetry() {
        let s = Streams::new(6);
        let r1 = rho_empirical(0.5, 4.0, 100_000, s.named("a")).unwrap();
        let r2 = rho_empirical(0.5, 0.25, 100_000, s.named("b")).unwrap();
        assert!((r1.rho + r2.rho - 1.0).abs() < 4.0 * r1.se.hypot(r2.se));
        let half = rho_empirical(0.3, 1.0, 100_000, s.named("c")).unwrap();
        assert!((half.rho - 0.5).abs() < 3.0 * (0.25f64 / 1e5).sqrt());
    }
}
