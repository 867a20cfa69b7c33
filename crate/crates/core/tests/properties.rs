use std::sync::OnceLock;

use proptest::prelude::*;

use pssmp::calibration::roundtrip_deviation;
use pssmp::entrance::{scaling_check, CheckContext, EntranceSample, EntranceSampler};
use pssmp::exp_functional::SampleControl;
use pssmp::extensions::{mssmp_transform, rh_from_events, JointEvent};
use pssmp::lamperti::{lamperti_forward_with, ClockRule};
use pssmp::levy::Increments;
use pssmp::rng::par_replicas;
use pssmp::test_fn::TestFunction;
use pssmp::{JumpLaw, LevyTriplet, Streams};

fn jump_law() -> impl Strategy<Value = Option<JumpLaw>> {
    prop_oneof![
        Just(None),
        (-1.0..1.0f64, 0.1..1.0f64).prop_map(|(mean, sd)| Some(JumpLaw::Gaussian { mean, sd })),
        (0.1..0.9f64, 2.5..5.0f64, 2.5..5.0f64).prop_map(|(p_up, rate_up, rate_down)| Some(
            JumpLaw::TwoSidedExponential {
                p_up,
                rate_up,
                rate_down
            }
        )),
        (0.2..0.8f64, -1.0..0.0f64, 0.0..1.0f64).prop_map(|(p, a, b)| Some(JumpLaw::TwoPoint { a, b, p })),
    ]
}

fn triplet() -> impl Strategy<Value = LevyTriplet> {
    (0.0..1.0f64, -2.0..2.0f64, 0.0..2.0f64, 0.1..3.0f64, jump_law()).prop_map(|(q, b, s2, rate, law)| {
        let t = LevyTriplet::new(q, b, s2);
        match law {
            Some(law) => t.with_jumps(rate, law),
            None => t,
        }
    })
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn laplace_exponent_is_convex(t in triplet(), z1 in -2.0..2.0f64, z2 in -2.0..2.0f64) {
        let mid = t.laplace_exponent(0.5 * (z1 + z2)).unwrap();
        let avg = 0.5 * (t.laplace_exponent(z1).unwrap() + t.laplace_exponent(z2).unwrap());
        prop_assert!(mid <= avg + 1e-10 * (1.0 + avg.abs()));
    }

    #[test]
    fn tilt_shifts_the_exponent(t in triplet(), theta in -1.5..1.5f64, z in -0.5..0.5f64) {
        let psi = t.laplace_exponent(theta).unwrap();
        prop_assume!(psi <= 0.0);
        let tilted = t.esscher_tilt(theta).unwrap();
        prop_assert!(close(tilted.laplace_exponent(z).unwrap(), t.laplace_exponent(z + theta).unwrap(), 1e-9));
        prop_assert!(close(tilted.kill_rate, -psi, 1e-9) || psi.abs() <= 1e-11);
    }

    #[test]
    fn dual_reflects_the_exponent(t in triplet(), z in -2.0..2.0f64) {
        prop_assert!(close(t.dual().laplace_exponent(z).unwrap(), t.laplace_exponent(-z).unwrap(), 1e-12));
    }

    #[test]
    fn lamperti_roundtrip(t in triplet(), x in 0.1..10.0f64, alpha in 0.3..3.0f64, linear in any::<bool>(), seed in any::<u64>()) {
        let path = t.sample_path(2.0, 1e-2, &mut Streams::new(seed).replica(0)).unwrap();
        let rule = if linear { ClockRule::ExactLinear } else { ClockRule::LeftPoint };
        prop_assert!(roundtrip_deviation(&path, x, alpha, rule).unwrap() <= 1e-9);
    }

    #[test]
    fn one_coordinate_multi_transform_is_lamperti(t in triplet(), x in 0.1..10.0f64, alpha in 0.3..3.0f64, seed in any::<u64>()) {
        let path = t.sample_path(1.0, 1e-2, &mut Streams::new(seed).replica(0)).unwrap();
        let one = lamperti_forward_with(&path, x, alpha, ClockRule::LeftPoint).unwrap();
        let multi = mssmp_transform(std::slice::from_ref(&path), &[x], &[alpha], ClockRule::LeftPoint).unwrap();
        prop_assert_eq!(&one.times, &multi.times);
        let first: Vec<f64> = multi.values.iter().map(|v| v[0]).collect();
        prop_assert_eq!(one.values, first);
    }

    #[test]
    fn entrance_scaling_is_exact(c in 0.05..20.0f64, s in 0.05..20.0f64, p in 0.0..3.0f64) {
        let ctx = CheckContext::new(0);
        let r = scaling_check(&ctx, shared_sample(), s, c, &TestFunction::PowerExp { p });
        prop_assert!(r.statistic <= 1e-12, "{}", r.csv_row());
    }

    #[test]
    fn drift_only_rh_is_monotone(d_z in 0.1..2.0f64, d_h in 0.1..2.0f64, x in 0.2..5.0f64, alpha in 0.5..2.0f64) {
        // Both drifts are positive, so both coordinates increase.
        let none: [JointEvent; 0] = [];
        let p = rh_from_events(d_z, d_h, &none, 0.0, x, alpha, 1.0, 0.1).unwrap();
        prop_assert!(p.h.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!(p.r.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!(p.h.iter().all(|&h| h > 0.0));
    }
}

fn shared_sample() -> &'static EntranceSample {
    static SAMPLE: OnceLock<EntranceSample> = OnceLock::new();
    SAMPLE.get_or_init(|| {
        let t = LevyTriplet::new(0.0, -1.0, 1.0);
        EntranceSampler::new(&t, 1.0, 1.0, SampleControl::with_step(1e-2))
            .unwrap()
            .draw(2000, Streams::new(11))
            .unwrap()
    })
}

/// `E[e^{θξ_t} f(ξ_t); t < ζ]` sampled directly agrees with `E[f(ξ_t)]`
/// under the tilted triplet.
#[test]
fn tilt_weights_agree_statistically() {
    let t = LevyTriplet::new(0.3, -0.4, 0.6).with_jumps(
        1.5,
        JumpLaw::TwoSidedExponential {
            p_up: 0.4,
            rate_up: 3.0,
            rate_down: 2.0,
        },
    );
    let theta = 0.7;
    assert!(t.laplace_exponent(theta).unwrap() < 0.0);
    let tilted = t.esscher_tilt(theta).unwrap();
    let f = |x: f64| 1.0 / (1.0 + x * x);
    let (h, steps, n) = (0.05, 20, 100_000);
    let endpoint = |tr: &LevyTriplet, streams: Streams| {
        par_replicas(streams, n, |_, r| {
            let alive = tr.sample_lifetime(r) > h * steps as f64;
            let mut inc = Increments::new(tr, h, r);
            let xi: f64 = (0..steps).map(|_| inc.next(r)).sum();
            if alive {
                Some(xi)
            } else {
                None
            }
        })
    };
    let direct: Vec<f64> = endpoint(&t, Streams::new(1))
        .into_iter()
        .map(|x| x.map_or(0.0, |x| (theta * x).exp() * f(x)))
        .collect();
    let under: Vec<f64> = endpoint(&tilted, Streams::new(2)).into_iter().map(|x| x.map_or(0.0, f)).collect();
    let stats = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        (m, (var / v.len() as f64).sqrt())
    };
    let (a, sa) = stats(&direct);
    let (b, sb) = stats(&under);
    let z = (a - b).abs() / sa.hypot(sb);
    assert!(z < 4.0, "direct {a} ± {sa}, tilted {b} ± {sb}");
}
