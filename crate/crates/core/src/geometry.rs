//! Siegel radius, disk area and the scaling bound on the regularity.

use serde::{Deserialize, Serialize};

use crate::boundary::BoundarySpectrum;
use crate::cfrac::{tail_scale, Convergent, RotationNumber};
use crate::error::{Error, Result};
use crate::maps::{taylor_coeff2, MapSpec};

/// Relative size below which an Aitken denominator counts as vanishing.
const AITKEN_GUARD: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AitkenResult {
    /// Last accelerated value (or the last safe value when a pass degenerates).
    pub value: f64,
    /// Row 0 is the input; each further row is one Δ² pass.
    pub triangle: Vec<Vec<f64>>,
    /// A pass stopped early on a vanishing second difference.
    pub degenerate: bool,
}

/// One Aitken Δ² pass.
pub fn aitken(seq: &[f64]) -> Result<AitkenResult> {
    aitken_passes(seq, 1)
}

/// `passes` repeated Δ² passes, each needing at least three inputs.
pub fn aitken_passes(seq: &[f64], passes: usize) -> Result<AitkenResult> {
    if seq.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "Aitken extrapolation needs >= 3 terms, have {}",
            seq.len()
        )));
    }
    let mut triangle = vec![seq.to_vec()];
    let mut degenerate = false;
    for _ in 0..passes {
        let prev = triangle.last().unwrap();
        if prev.len() < 3 {
            break;
        }
        let mut row = Vec::with_capacity(prev.len() - 2);
        for w in prev.windows(3) {
            let (s0, s1, s2) = (w[0], w[1], w[2]);
            let den = s2 - 2.0 * s1 + s0;
            if den.abs() <= AITKEN_GUARD * s2.abs().max(f64::MIN_POSITIVE) {
                degenerate = true;
                break;
            }
            row.push(s2 - (s2 - s1) * (s2 - s1) / den);
        }
        if row.is_empty() {
            break;
        }
        let short = degenerate;
        triangle.push(row);
        if short {
            break;
        }
    }
    let value = match triangle.len() {
        1 => *seq.last().unwrap(),
        _ => *triangle.last().unwrap().last().unwrap(),
    };
    Ok(AitkenResult { value, triangle, degenerate })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusEstimate {
    /// `|c_1|`
    pub first: f64,
    /// `sqrt(|a−1| |c_2| / |f_2|)`
    pub second: Option<f64>,
    pub relative_difference: Option<f64>,
    pub warnings: Vec<String>,
}

/// Two estimators of the Siegel radius from the boundary coefficients.
///
/// With `h(0)=0, h'(0)=1` the boundary coefficients are `c_k = h_k r_S^k`
/// (up to a phase), and `h_2 = f_2 / (a(a−1))`.
pub fn siegel_radius(spectrum: &BoundarySpectrum, spec: &MapSpec) -> RadiusEstimate {
    let first = spectrum.coeff(1).norm();
    let c2 = spectrum.coeff(2).norm();
    let a = spec.multiplier(128).to_c64();
    let f2 = taylor_coeff2(spec, 128).to_c64().norm();
    let mut warnings = Vec::new();
    let second = if c2 <= 1e-14 * first || f2 == 0.0 {
        warnings.push("|c_2| is numerically zero; second radius estimator unavailable".into());
        None
    } else {
        Some(((a - 1.0).norm() * c2 / f2).sqrt())
    };
    RadiusEstimate {
        first,
        second,
        relative_difference: second.map(|s| (first - s).abs() / first),
        warnings,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartialSum {
    pub m: usize,
    pub q: u64,
    /// `π Σ_{k=1}^{Q} k |c_k|²`
    pub sum: f64,
    /// The radius-weighted variant `π Σ k r_S^{-2k} |c_k|²`, kept for audit;
    /// `None` once it overflows.
    pub radius_weighted: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AreaReport {
    pub area: f64,
    pub extrapolated: bool,
    pub partial_sums: Vec<PartialSum>,
    pub aitken: Option<AitkenResult>,
    /// Extrapolation of the radius-weighted sums, when finite.
    pub radius_weighted_area: Option<f64>,
    /// Sum over every positive frequency of the spectrum.
    pub full_sum: f64,
    pub warnings: Vec<String>,
}

/// Area of the disk via the area theorem applied to the boundary
/// coefficients: `Area = π Σ_{k≥1} k |c_k|²`.
///
/// Partial sums are taken at convergent denominators `Q_n` below the
/// Nyquist index and accelerated with one Aitken Δ² pass.
pub fn area(spectrum: &BoundarySpectrum, convergents: &[Convergent]) -> AreaReport {
    let half = spectrum.len() / 2;
    let r_s = spectrum.coeff(1).norm();
    let ln_r = r_s.ln();
    let mut cumulative = Vec::with_capacity(half);
    let mut weighted = Vec::with_capacity(half);
    let (mut acc, mut wacc) = (0.0f64, 0.0f64);
    for k in 1..half {
        let c2 = spectrum.coeff(k as i64).norm_sqr();
        acc += k as f64 * c2;
        wacc += k as f64 * (c2.ln() - 2.0 * k as f64 * ln_r).exp();
        cumulative.push(acc);
        weighted.push(wacc);
    }
    let pi = std::f64::consts::PI;
    let full_sum = pi * acc;
    let partial_sums: Vec<PartialSum> = convergents
        .iter()
        .filter_map(|c| c.q_u64().map(|q| (c.index, q)))
        .filter(|&(_, q)| q >= 1 && (q as usize) < half)
        .map(|(m, q)| {
            let w = pi * weighted[q as usize - 1];
            PartialSum {
                m,
                q,
                sum: pi * cumulative[q as usize - 1],
                radius_weighted: w.is_finite().then_some(w),
            }
        })
        .collect();

    let mut warnings = Vec::new();
    let sums: Vec<f64> = partial_sums.iter().map(|p| p.sum).collect();
    let (area, aitken_res, extrapolated) = match aitken(&sums) {
        Ok(res) => (res.value, Some(res), true),
        Err(_) => {
            warnings.push(format!(
                "only {} partial sums available; returning the raw sum without extrapolation",
                sums.len()
            ));
            (full_sum, None, false)
        }
    };
    let wsums: Option<Vec<f64>> = partial_sums.iter().map(|p| p.radius_weighted).collect();
    let radius_weighted_area = wsums.and_then(|w| aitken(&w).ok()).map(|r| r.value);
    AreaReport {
        area,
        extrapolated,
        partial_sums,
        aitken: aitken_res,
        radius_weighted_area,
        full_sum,
        warnings,
    }
}

/// Upper bound `log|α| / log σ` on the Hölder exponent, with `σ` the
/// per-period scale of the tail (`σ` itself for `⟨k^∞⟩`).
pub fn kappa_max(alpha_modulus: f64, rot: &RotationNumber) -> f64 {
    alpha_modulus.ln() / tail_scale(rot).ln()
}

/// Large-order asymptotics `κ_max ≈ A_σ / (|log σ| d)`.
pub fn kappa_max_asymptotic(a_sigma: f64, rot: &RotationNumber, d: u32) -> f64 {
    a_sigma / (tail_scale(rot).ln().abs() * d as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub radius: RadiusEstimate,
    pub area: AreaReport,
    pub kappa_max: Option<f64>,
}

pub fn geometry_report(
    spectrum: &BoundarySpectrum,
    spec: &MapSpec,
    convergents: &[Convergent],
    alpha_modulus: Option<f64>,
) -> GeometryReport {
    GeometryReport {
        radius: siegel_radius(spectrum, spec),
        area: area(spectrum, convergents),
        kappa_max: alpha_modulus.map(|a| kappa_max(a, &spec.rot)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::{fft_spectrum, DyadicGrid};
    use crate::cfrac::convergents;
    use std::f64::consts::PI;

    fn circle_spectrum(r: f64, level: u32) -> BoundarySpectrum {
        let n = 1usize << level;
        let (re, im) = (0..n)
            .map(|m| {
                let t = 2.0 * PI * m as f64 / n as f64;
                (r * t.cos(), r * t.sin())
            })
            .unzip();
        fft_spectrum(DyadicGrid::from_samples(level, re, im))
    }

    #[test]
    fn aitken_is_exact_on_geometric_series() {
        let r = aitken(&[1.0, 1.5, 1.75]).unwrap();
        assert!((r.value - 2.0).abs() < 1e-15);
        let sums: Vec<f64> = (1..8).map(|n| (0..n).map(|k| 0.5f64.powi(k)).sum()).collect();
        let r = aitken(&sums).unwrap();
        assert!(r.triangle[1].iter().all(|v| (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn aitken_improves_basel_sums() {
        let partial = |n: usize| (1..=n).map(|k| 1.0 / (k * k) as f64).sum::<f64>();
        let s = [partial(10), partial(20), partial(40)];
        let exact = PI * PI / 6.0;
        let acc = aitken(&s).unwrap().value;
        assert!((acc - exact).abs() < (s[2] - exact).abs());
    }

    #[test]
    fn aitken_degenerate_inputs() {
        let r = aitken(&[3.0, 3.0, 3.0, 3.0]).unwrap();
        assert_eq!(r.value, 3.0);
        assert!(r.degenerate);
        assert!(aitken(&[1.0, 2.0]).is_err());
        let r = aitken_passes(&[1.0, 1.5, 1.75, 1.875, 1.9375], 2).unwrap();
        assert!((r.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn kappa_max_values() {
        let golden: RotationNumber = ":1".parse().unwrap();
        assert!((kappa_max(0.74193223170, &golden) - 0.6203).abs() < 5e-5);
        assert!((kappa_max(0.81215810740, &golden) - 0.4324).abs() < 5e-5);
        let sigma = golden.value_f64();
        assert_eq!(kappa_max(sigma, &golden), 1.0);
    }

    #[test]
    fn asymptotic_kappa_max_at_large_order() {
        let golden: RotationNumber = ":1".parse().unwrap();
        let exact = kappa_max(0.993638, &golden);
        let approx = kappa_max_asymptotic(0.646, &golden, 100);
        assert!((approx - exact).abs() / exact < 0.10);
    }

    #[test]
    fn identity_conjugacy_radius_and_area() {
        let spec = MapSpec::quadratic(":1".parse().unwrap());
        let sp = circle_spectrum(0.3, 10);
        let rad = siegel_radius(&sp, &spec);
        assert!((rad.first - 0.3).abs() < 1e-14);
        assert!(rad.second.is_none());

        let conv = convergents(&spec.rot, 12);
        let rep = area(&sp, &conv);
        assert!((rep.full_sum - PI * 0.09).abs() < 1e-14);
        assert!((rep.area - PI * 0.09).abs() < 1e-12);
    }

    #[test]
    fn quadratic_second_estimator_uses_unit_f2() {
        // c_1 = r, c_2 = r²/(a(a−1)): both estimators give r.
        let spec = MapSpec::quadratic(":1".parse().unwrap());
        let a = spec.multiplier(128).to_c64();
        let r = 0.4;
        let c2 = r * r / (a * (a - 1.0));
        let n = 256usize;
        let (re, im): (Vec<f64>, Vec<f64>) = (0..n)
            .map(|m| {
                let t = 2.0 * PI * m as f64 / n as f64;
                let z = num_complex::Complex64::from_polar(r, t)
                    + c2 * num_complex::Complex64::from_polar(1.0, 2.0 * t);
                (z.re, z.im)
            })
            .unzip();
        let sp = fft_spectrum(DyadicGrid::from_samples(8, re, im));
        let rad = siegel_radius(&sp, &spec);
        assert!((rad.second.unwrap() - r).abs() < 1e-12);
        assert!(rad.relative_difference.unwrap() < 1e-12);
    }

    #[test]
    fn too_few_partial_sums_falls_back() {
        let sp = circle_spectrum(0.5, 4);
        let conv = convergents(&":1".parse().unwrap(), 3);
        let rep = area(&sp, &conv[..2]);
        assert!(!rep.extrapolated);
        assert_eq!(rep.warnings.len(), 1);
        assert!((rep.area - PI * 0.25).abs() < 1e-12);
    }
}
