//! Property tests of cross-module invariants.

use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;
use rug::Float;

use siegel::boundary::{BoundarySpectrum, Component};
use siegel::cfrac::{approximation_error, convergents, CfeWord, RotationNumber};
use siegel::clp::clp_norms;
use siegel::geometry::{aitken, area};
use siegel::maps::{boundary_critical_point, f_eval, f_prime, MapKind, MapSpec};
use siegel::mp::MpComplex;
use siegel::phasestats::{histogram_of, ks_normality_of};

fn rotation() -> impl Strategy<Value = RotationNumber> {
    (prop::collection::vec(1u32..7, 0..3), prop::collection::vec(1u32..7, 1..3)).prop_map(|(h, p)| {
        let head = CfeWord::new(h).unwrap();
        let period = CfeWord::new(p).unwrap();
        siegel::cfrac::quadratic_value(&head, &period).unwrap()
    })
}

fn map_kind() -> impl Strategy<Value = MapKind> {
    prop_oneof![
        Just(MapKind::Quadratic),
        (0u32..6, 1.5f64..4.0, 0.0f64..6.28).prop_map(|(m, r, t)| MapKind::Fmb {
            m,
            beta: Complex64::from_polar(r, t)
        }),
    ]
}

fn spectrum(level: u32) -> impl Strategy<Value = BoundarySpectrum> {
    let len = 1usize << level;
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), len).prop_map(move |v| {
        // Decaying coefficients so the function is reasonably smooth.
        let coeffs = v
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| {
                let k = if i < len / 2 { i } else { len - i } as f64;
                Complex64::new(a, b) / (1.0 + k).powf(1.5)
            })
            .collect();
        BoundarySpectrum::from_coeffs(level, coeffs)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn convergents_are_best_approximations(rot in rotation()) {
        let convs = convergents(&rot, 12);
        let errs: Vec<Float> = convs.iter().map(|c| approximation_error(&rot, c, 512)).collect();
        for w in errs.windows(2) {
            prop_assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn value_is_stable_under_rounding(rot in rotation(), p in 53u32..400) {
        let lo = rot.value(p);
        let hi = Float::with_val(p, rot.value(2 * p));
        prop_assert_eq!(lo, hi);
    }

    #[test]
    fn gauss_map_recovers_quotients(rot in rotation()) {
        let got = rot.expand_numeric(30, 1024);
        let mut want: Vec<u32> = rot.head().entries().to_vec();
        while want.len() < 30 {
            want.extend_from_slice(rot.period().entries());
        }
        want.truncate(30);
        prop_assert_eq!(got, want);
    }

    #[test]
    fn fixed_point_and_multiplier(kind in map_kind(), rot in rotation()) {
        let spec = MapSpec::new(kind, rot).unwrap();
        let prec = 256;
        let zero = MpComplex::zero(prec);
        prop_assert!(f_eval(&spec, &zero, prec).to_c64().norm() < 1e-70);
        let d = f_prime(&spec, &zero, prec).sub(&spec.multiplier(prec));
        prop_assert!(d.to_c64().norm() < 1e-70);
    }

    #[test]
    fn derivative_matches_central_differences(kind in map_kind(), x in -0.9f64..0.9, y in -0.9f64..0.9) {
        let spec = MapSpec::new(kind, ":1".parse().unwrap()).unwrap();
        let prec = 192;
        let h = Float::with_val(prec, Float::i_exp(1, -(prec as i32) / 3));
        let z = MpComplex::from_f64(prec, x, y);
        let mut zp = z.clone();
        zp.re += &h;
        let mut zm = z.clone();
        zm.re -= &h;
        let mut diff = f_eval(&spec, &zp, prec).sub(&f_eval(&spec, &zm, prec));
        let two_h = Float::with_val(prec, &h * 2u32);
        diff.re /= &two_h;
        diff.im /= &two_h;
        let exact = f_prime(&spec, &z, prec);
        let err = diff.sub(&exact).to_c64().norm();
        prop_assert!(err < 1e-30 * (1.0 + exact.to_c64().norm()), "err {err:e}");
    }

    #[test]
    fn critical_order_from_local_growth(kind in map_kind()) {
        let spec = MapSpec::new(kind, ":1".parse().unwrap()).unwrap();
        let prec = 512;
        let c = boundary_critical_point(&spec, prec);
        let fc = f_eval(&spec, &c.location, prec);
        let logs: Vec<(f64, f64)> = [10, 20]
            .iter()
            .map(|&e| {
                let mut z = c.location.clone();
                z.re += Float::with_val(prec, Float::i_exp(1, -e));
                let d = f_eval(&spec, &z, prec).sub(&fc).abs().to_f64();
                (-(e as f64) * 2f64.ln(), d.ln())
            })
            .collect();
        let slope = (logs[1].1 - logs[0].1) / (logs[1].0 - logs[0].0);
        prop_assert!((slope - (c.order + 1) as f64).abs() < 0.05, "slope {slope} order {}", c.order);
    }

    #[test]
    fn parseval(sp in spectrum(8)) {
        let energy: f64 = sp.coeffs.iter().map(|c| c.norm_sqr()).sum();
        let g = &sp.grid;
        let ms = g.re.iter().zip(&g.im).map(|(a, b)| a * a + b * b).sum::<f64>() / g.len() as f64;
        prop_assert!((energy - ms).abs() <= 1e-10 * ms);
    }

    #[test]
    fn clp_scale_equivariance_and_monotonicity(sp in spectrum(9), scale in 0.01f64..100.0, eta in 1u32..7) {
        let taus: Vec<f64> = (0..20).map(|i| 10f64.powf(-2.0 + 0.08 * i as f64)).collect();
        let scaled = BoundarySpectrum::from_coeffs(sp.level, sp.coeffs.iter().map(|c| c * scale).collect());
        for comp in Component::BOTH {
            let a = clp_norms(&sp, comp, eta, &taus).unwrap();
            let b = clp_norms(&scaled, comp, eta, &taus).unwrap();
            for (x, y) in a.norms.iter().zip(&b.norms) {
                prop_assert!((y / x - scale).abs() <= 1e-12 * scale);
            }
            for w in a.norms.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn area_partial_sums_nondecrease(sp in spectrum(10)) {
        let convs = convergents(&":1".parse().unwrap(), 20);
        let rep = area(&sp, &convs);
        for w in rep.partial_sums.windows(2) {
            prop_assert!(w[1].sum >= w[0].sum);
        }
        prop_assert!(rep.full_sum >= rep.partial_sums.last().unwrap().sum);
    }

    #[test]
    fn aitken_exact_on_geometric(a in -5.0f64..5.0, b in 0.1f64..3.0, r in 0.05f64..0.9) {
        let seq: Vec<f64> = (0..6).map(|n| a + b * r.powi(n)).collect();
        let res = aitken(&seq).unwrap();
        prop_assert!((res.value - a).abs() < 1e-9 * (1.0 + a.abs() + b));
    }

    #[test]
    fn histogram_counts_and_qq_monotone(v in prop::collection::vec(-PI..PI, 40..400), bins in 2usize..64) {
        let h = histogram_of(&v, Some(bins)).unwrap();
        prop_assert_eq!(h.total(), v.len() as u64);
        let ks = ks_normality_of(&v).unwrap();
        for w in ks.qq.windows(2) {
            prop_assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn orbit_is_deterministic(kind in map_kind(), n in 10u64..500) {
        let spec = MapSpec::new(kind, ":2".parse().unwrap()).unwrap();
        let a = siegel::orbit::iterate_critical(&spec, n, 128);
        let b = siegel::orbit::iterate_critical(&spec, n, 128);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                prop_assert!(a.values().iter().zip(b.values()).all(|(x, y)| x.re.to_bits() == y.re.to_bits() && x.im.to_bits() == y.im.to_bits()));
                prop_assert_eq!(a.checkpoint(), b.checkpoint());
            }
            (Err(a), Err(b)) => prop_assert_eq!(a.to_string(), b.to_string()),
            _ => prop_assert!(false, "runs disagree"),
        }
    }

    #[test]
    fn cache_rejects_mismatched_digest(prec in 64u32..200, other in 200u32..400) {
        let dir = tempfile::tempdir().unwrap();
        let spec = MapSpec::quadratic(":1".parse().unwrap());
        let orbit = siegel::orbit::iterate_critical(&spec, 100, prec).unwrap();
        let path = dir.path().join("o.sgo");
        siegel::cache::save_orbit(&path, &orbit).unwrap();
        prop_assert!(siegel::cache::load_orbit(&path, Some((&spec, prec))).is_ok());
        let err = siegel::cache::load_orbit(&path, Some((&spec, other))).unwrap_err();
        prop_assert!(matches!(err, siegel::Error::CacheMismatch(_)));
        let silver = MapSpec::quadratic(":2".parse().unwrap());
        prop_assert!(siegel::cache::load_orbit(&path, Some((&silver, prec))).is_err());
    }
}
