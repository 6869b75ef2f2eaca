//! Statistics of the phases `arg c_k` over self-similarity windows
//! `I_j = [σ^{-j}, σ^{-j-1}]`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::boundary::BoundarySpectrum;
use crate::cfrac::RotationNumber;
use crate::error::{Error, Result};
use crate::stats::{mean, quantile_sorted, variance};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSample {
    pub j_lo: u32,
    pub j_hi: u32,
    /// Integer frequencies `k_lo..=k_hi`.
    pub k_lo: u64,
    pub k_hi: u64,
    /// `arg c_k ∈ (−π, π]`, in order of increasing `k`.
    pub phases: Vec<f64>,
}

impl PhaseSample {
    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }
}

/// `atan2` mapped onto `(−π, π]`.
pub fn principal_arg(re: f64, im: f64) -> f64 {
    let a = im.atan2(re);
    if a <= -PI {
        PI
    } else {
        a
    }
}

/// Phases of `c_k` for integer `k` in `I_{j_lo} ∪ … ∪ I_{j_hi}`.
pub fn extract_phases(spectrum: &BoundarySpectrum, j_lo: u32, j_hi: u32, rot: &RotationNumber) -> Result<PhaseSample> {
    if j_hi < j_lo {
        return Err(Error::OutOfRange(format!("empty window range {j_lo}..={j_hi}")));
    }
    let sigma = rot.value_f64();
    let k_lo = sigma.powi(-(j_lo as i32)).ceil() as u64;
    let k_hi = sigma.powi(-(j_hi as i32) - 1).floor() as u64;
    let k_max = spectrum.k_max() as u64;
    if k_hi > k_max {
        return Err(Error::OutOfRange(format!(
            "windows {j_lo}..={j_hi} reach k={k_hi} beyond the computed k_max={k_max}; increase M"
        )));
    }
    let phases = (k_lo..=k_hi)
        .map(|k| {
            let c = spectrum.coeff(k as i64);
            principal_arg(c.re, c.im)
        })
        .collect();
    Ok(PhaseSample { j_lo, j_hi, k_lo, k_hi, phases })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges from `−π` to `π`.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Freedman–Diaconis bin count for data on `(−π, π]`.
pub fn freedman_diaconis_bins(values: &[f64]) -> usize {
    let mut s = values.to_vec();
    s.sort_unstable_by(f64::total_cmp);
    if s.len() < 2 {
        return 2;
    }
    let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
    let h = 2.0 * iqr * (s.len() as f64).powf(-1.0 / 3.0);
    if h <= 0.0 {
        return 2;
    }
    ((2.0 * PI / h).ceil() as usize).clamp(2, 10_000)
}

/// Equal-width bins `(−π + iw, −π + (i+1)w]`; `bins = None` uses
/// Freedman–Diaconis.
pub fn histogram(sample: &PhaseSample, bins: Option<usize>) -> Result<Histogram> {
    histogram_of(&sample.phases, bins)
}

pub fn histogram_of(phases: &[f64], bins: Option<usize>) -> Result<Histogram> {
    let bins = bins.unwrap_or_else(|| freedman_diaconis_bins(phases));
    if bins < 2 {
        return Err(Error::OutOfRange("histogram needs >= 2 bins".into()));
    }
    let w = 2.0 * PI / bins as f64;
    let edges = (0..=bins).map(|i| -PI + w * i as f64).collect();
    let mut counts = vec![0u64; bins];
    for &p in phases {
        let i = (((p + PI) / w).ceil() as isize - 1).clamp(0, bins as isize - 1) as usize;
        counts[i] += 1;
    }
    Ok(Histogram { edges, counts })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsReport {
    pub n: usize,
    /// Kolmogorov–Smirnov distance to the fitted normal law.
    pub d: f64,
    pub mean: f64,
    pub std_dev: f64,
    /// `(theoretical normal quantile, standardized ordered sample)`; large,
    /// so written to CSV rather than JSON.
    #[serde(skip)]
    pub qq: Vec<(f64, f64)>,
    /// Largest QQ deviation for theoretical quantiles in `[−1.5, 1.5]`.
    pub central_qq_deviation: f64,
    /// Largest QQ deviation outside that range.
    pub edge_qq_deviation: f64,
    /// More than twice the mass the fitted normal predicts lies within
    /// `0.1π` of `±π`.
    pub edge_excess: bool,
}

/// KS distance of the standardized sample to `N(0, 1)`, with QQ pairs.
pub fn ks_normality(sample: &PhaseSample) -> Result<KsReport> {
    ks_normality_of(&sample.phases)
}

pub fn ks_normality_of(values: &[f64]) -> Result<KsReport> {
    let n = values.len();
    if n < 30 {
        return Err(Error::InsufficientData(format!("KS test needs >= 30 values, have {n}")));
    }
    let mu = mean(values);
    let sd = variance(values).sqrt();
    if !(sd > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let mut z: Vec<f64> = values.iter().map(|v| (v - mu) / sd).collect();
    z.sort_unstable_by(f64::total_cmp);
    let std_normal = Normal::standard();
    let d = ks_distance(&z, |x| std_normal.cdf(x));
    let nf = n as f64;
    let qq: Vec<(f64, f64)> = z
        .iter()
        .enumerate()
        .map(|(i, &v)| (std_normal.inverse_cdf((i as f64 + 0.5) / nf), v))
        .collect();
    let (mut central, mut edge) = (0.0f64, 0.0f64);
    for &(t, e) in &qq {
        let dev = (e - t).abs();
        if t.abs() <= 1.5 {
            central = central.max(dev);
        } else {
            edge = edge.max(dev);
        }
    }
    let fitted = Normal::new(mu, sd).map_err(|e| Error::InsufficientData(e.to_string()))?;
    let band = 0.1 * PI;
    let expected = nf * (fitted.cdf(-PI + band) + (1.0 - fitted.cdf(PI - band)));
    let observed = values.iter().filter(|v| v.abs() > PI - band).count() as f64;
    Ok(KsReport {
        n,
        d,
        mean: mu,
        std_dev: sd,
        qq,
        central_qq_deviation: central,
        edge_qq_deviation: edge,
        edge_excess: observed > 2.0 * expected.max(5.0),
    })
}

/// KS distance of the sample to the uniform law on `(−π, π]`.
pub fn ks_uniform(values: &[f64]) -> f64 {
    let mut s = values.to_vec();
    s.sort_unstable_by(f64::total_cmp);
    ks_distance(&s, |x| ((x + PI) / (2.0 * PI)).clamp(0.0, 1.0))
}

/// `sup |F_n − F|` over sorted data.
fn ks_distance(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let nf = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (((i + 1) as f64 / nf) - f).max(f - i as f64 / nf)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal as RNormal};
    use statrs::distribution::ChiSquared;

    fn spectrum_with(level: u32, f: impl Fn(usize) -> Complex64) -> BoundarySpectrum {
        let n = 1usize << level;
        let coeffs = (0..n).map(|i| if i == 0 { Complex64::new(0.0, 0.0) } else { f(i) }).collect();
        BoundarySpectrum::from_coeffs(level, coeffs)
    }

    #[test]
    fn golden_windows_24_25_count() {
        let golden: RotationNumber = ":1".parse().unwrap();
        let sp = spectrum_with(20, |k| Complex64::new(1.0 / k as f64, 0.0));
        let s = extract_phases(&sp, 24, 25, &golden).unwrap();
        assert_eq!(s.k_lo, 103682);
        // φ^26 = 271442.99999…
        assert_eq!(s.k_hi, 271442);
        assert_eq!(s.len() as u64, s.k_hi - s.k_lo + 1);
        assert!((s.len() as f64 - 1.7e5).abs() < 0.05 * 1.7e5);
        assert!(s.phases.iter().all(|&p| p == 0.0));
        assert!(extract_phases(&sp, 24, 27, &golden).is_err());
    }

    #[test]
    fn conjugation_negates_phases() {
        let golden: RotationNumber = ":1".parse().unwrap();
        let f = |k: usize| Complex64::from_polar(1.0, (k as f64 * 0.37).sin() * 3.0);
        let a = spectrum_with(12, f);
        let b = spectrum_with(12, |k| f(k).conj());
        let pa = extract_phases(&a, 5, 8, &golden).unwrap();
        let pb = extract_phases(&b, 5, 8, &golden).unwrap();
        for (x, y) in pa.phases.iter().zip(&pb.phases) {
            assert!((x + y).abs() < 1e-15 || (x.abs() - PI).abs() < 1e-12);
        }
    }

    #[test]
    fn principal_arg_range() {
        assert_eq!(principal_arg(-1.0, -0.0), PI);
        assert_eq!(principal_arg(-1.0, 0.0), PI);
        assert_eq!(principal_arg(1.0, 0.0), 0.0);
    }

    #[test]
    fn uniform_phases_give_flat_histogram() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        let v: Vec<f64> = (0..100_000).map(|_| rng.random_range(-PI..PI)).collect();
        let h = histogram_of(&v, Some(50)).unwrap();
        assert_eq!(h.total(), 100_000);
        let e = 100_000.0 / 50.0;
        let chi2: f64 = h.counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        let crit = ChiSquared::new(49.0).unwrap().inverse_cdf(0.99);
        assert!(chi2 < crit, "chi2 {chi2} crit {crit}");
    }

    #[test]
    fn zero_phases_fill_one_bin() {
        let h = histogram_of(&vec![0.0; 100], Some(8)).unwrap();
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(h.counts[3], 100);
        let h = histogram_of(&[PI, -PI + 1e-12], Some(4)).unwrap();
        assert_eq!(h.counts, vec![1, 0, 0, 1]);
        assert!(histogram_of(&[0.0], Some(1)).is_err());
    }

    #[test]
    fn ks_calibration() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(2024);
        let g = RNormal::new(0.3, 0.8).unwrap();
        let v: Vec<f64> = (0..100_000).map(|_| g.sample(&mut rng)).collect();
        let r = ks_normality_of(&v).unwrap();
        assert!(r.d < 0.006, "D = {}", r.d);
        assert!(r.qq.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));

        let u: Vec<f64> = (0..100_000).map(|_| rng.random_range(-PI..PI)).collect();
        let ru = ks_normality_of(&u).unwrap();
        assert!(ru.d > 0.05, "D = {}", ru.d);
        assert!(ks_uniform(&u) < 0.01);
        assert!(ks_uniform(&v) > 3.0 * r.d);
    }

    #[test]
    fn edge_mass_is_flagged() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(5);
        let g = RNormal::new(0.0, 1.0).unwrap();
        let mut v: Vec<f64> = (0..20_000).map(|_| g.sample(&mut rng)).collect();
        assert!(!ks_normality_of(&v).unwrap().edge_excess);
        v.extend((0..1000).map(|i| if i % 2 == 0 { PI - 0.05 } else { -PI + 0.05 }));
        let r = ks_normality_of(&v).unwrap();
        assert!(r.edge_excess);
        assert!(r.edge_qq_deviation > r.central_qq_deviation);
    }

    #[test]
    fn degenerate_samples() {
        assert!(matches!(ks_normality_of(&[1.0; 50]), Err(Error::ZeroVariance)));
        assert!(ks_normality_of(&[1.0; 10]).is_err());
    }

    proptest! {
        #[test]
        fn ks_is_affine_invariant(seed in any::<u64>(), a in 0.1f64..10.0, b in -5.0f64..5.0) {
            let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
            let v: Vec<f64> = (0..500).map(|_| rng.random_range(-1.0..1.0f64).powi(3)).collect();
            let w: Vec<f64> = v.iter().map(|x| a * x + b).collect();
            let d1 = ks_normality_of(&v).unwrap().d;
            let d2 = ks_normality_of(&w).unwrap().d;
            prop_assert!((d1 - d2).abs() < 1e-9);
        }

        #[test]
        fn rotation_shifts_histogram_circularly(seed in any::<u64>(), shift in 0usize..16) {
            let bins = 16;
            let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
            // Phases at bin centres so a rotation by whole bins is exact.
            let w = 2.0 * PI / bins as f64;
            let idx: Vec<usize> = (0..300).map(|_| rng.random_range(0..bins)).collect();
            let p: Vec<f64> = idx.iter().map(|&i| -PI + w * (i as f64 + 0.5)).collect();
            let q: Vec<f64> = idx.iter().map(|&i| -PI + w * (((i + shift) % bins) as f64 + 0.5)).collect();
            let h1 = histogram_of(&p, Some(bins)).unwrap();
            let h2 = histogram_of(&q, Some(bins)).unwrap();
            for i in 0..bins {
                prop_assert_eq!(h1.counts[i], h2.counts[(i + shift) % bins]);
            }
        }
    }
}
