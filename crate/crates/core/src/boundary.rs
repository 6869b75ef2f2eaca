//! Dyadic-grid samples of the boundary parameterization `χ` and its Fourier
//! spectrum.
//!
//! `χ(nσ) = f^n(c)`, so the orbit values are samples of `χ` at the
//! irregular points `frac(nσ)`. They are interpolated onto `t_m = m 2^{-M}`
//! and transformed with `χ(t) ≈ Σ c_k e^{2πikt}`.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::orbit::{turns_to_f64, OrbitStore};
use crate::par::{self, Exec};
use crate::stats::{linear_fit, quantile_sorted};

/// Orbit angles closer than this (in turns) to a grid point are treated as
/// coincident.
const KNOT_TOLERANCE_TURNS: u64 = 1 << 12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterpScheme {
    #[default]
    Linear,
    Lagrange4,
}

impl fmt::Display for InterpScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InterpScheme::Linear => "linear",
            InterpScheme::Lagrange4 => "lagrange4",
        })
    }
}

impl FromStr for InterpScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(InterpScheme::Linear),
            "lagrange4" => Ok(InterpScheme::Lagrange4),
            _ => Err(Error::Config(format!("unknown interpolation scheme {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResampleOptions {
    /// Required `N / 2^M`.
    pub oversample: f64,
    pub scheme: InterpScheme,
    pub exec: Exec,
}

impl Default for ResampleOptions {
    fn default() -> Self {
        Self { oversample: 4.0, scheme: InterpScheme::Linear, exec: Exec::default() }
    }
}

/// `2^M` samples of `Re χ` and `Im χ` at `t_m = m 2^{-M}`.
#[derive(Clone, Debug, PartialEq)]
pub struct DyadicGrid {
    pub level: u32,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    /// Largest bracketing gap between orbit angles, in turns.
    pub max_gap: f64,
    pub scheme: InterpScheme,
}

impl DyadicGrid {
    /// Wraps externally produced samples.
    pub fn from_samples(level: u32, re: Vec<f64>, im: Vec<f64>) -> Self {
        assert_eq!(re.len(), 1usize << level, "grid length must be 2^level");
        assert_eq!(im.len(), re.len());
        Self { level, re, im, max_gap: 0.0, scheme: InterpScheme::Linear }
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    /// Periodic linear interpolation of the grid at `t` (turns).
    pub fn eval_linear(&self, t: f64) -> Complex64 {
        let n = self.len();
        let x = t.rem_euclid(1.0) * n as f64;
        let i = (x.floor() as usize).min(n - 1);
        let w = x - i as f64;
        let j = (i + 1) % n;
        Complex64::new(
            self.re[i] * (1.0 - w) + self.re[j] * w,
            self.im[i] * (1.0 - w) + self.im[j] * w,
        )
    }
}

/// Orbit indices ordered by angle.
///
/// A counting sort on the leading angle bits followed by sorting inside
/// each bucket; equivalent to sorting `(angle, index)` pairs, but linear
/// for the equidistributed angles of an irrational rotation.
pub struct SortedOrbit<'a> {
    angles: &'a [u64],
    values: &'a [Complex64],
    order: Vec<u32>,
}

impl<'a> SortedOrbit<'a> {
    pub fn new(orbit: &'a OrbitStore) -> Self {
        Self::from_slices(orbit.angle_turns(), orbit.values(), None)
    }

    /// Sorts `angles` (with matching `values`), skipping indices for which
    /// `exclude` returns true.
    pub fn from_slices(
        angles: &'a [u64],
        values: &'a [Complex64],
        exclude: Option<&dyn Fn(usize) -> bool>,
    ) -> Self {
        assert_eq!(angles.len(), values.len());
        assert!(angles.len() < u32::MAX as usize);
        let keep = |i: usize| exclude.is_none_or(|f| !f(i));
        let n = angles.len();
        let bits = (usize::BITS - n.max(2).leading_zeros()).clamp(1, 28);
        let shift = 64 - bits;
        let mut start = vec![0u32; (1usize << bits) + 1];
        for (i, &a) in angles.iter().enumerate() {
            if keep(i) {
                start[(a >> shift) as usize + 1] += 1;
            }
        }
        for b in 1..start.len() {
            start[b] += start[b - 1];
        }
        let total = start[start.len() - 1] as usize;
        let mut fill = start.clone();
        let mut order = vec![0u32; total];
        for (i, &a) in angles.iter().enumerate() {
            if keep(i) {
                let b = (a >> shift) as usize;
                order[fill[b] as usize] = i as u32;
                fill[b] += 1;
            }
        }
        for b in 0..start.len() - 1 {
            let (lo, hi) = (start[b] as usize, start[b + 1] as usize);
            if hi - lo > 1 {
                order[lo..hi].sort_unstable_by_key(|&i| (angles[i as usize], i));
            }
        }
        Self { angles, values, order }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Orbit indices in increasing angle order.
    pub fn order(&self) -> &[u32] {
        &self.order
    }

    fn angle_at(&self, pos: usize) -> u64 {
        self.angles[self.order[pos % self.len()] as usize]
    }

    fn value_at(&self, pos: usize) -> Complex64 {
        self.values[self.order[pos % self.len()] as usize]
    }

    /// First sorted position whose angle is `>= t`, or `len` if none.
    fn lower_bound(&self, t: u64) -> usize {
        self.order.partition_point(|&i| self.angles[i as usize] < t)
    }

    /// Interpolated value at `t` given `p = lower_bound(t)`, plus the
    /// bracketing gap in turns.
    fn interpolate(&self, t: u64, p: usize, scheme: InterpScheme) -> (Complex64, u64) {
        let n = self.len();
        let upper = p % n;
        let lower = (p + n - 1) % n;
        let (a_lo, a_hi) = (self.angle_at(lower), self.angle_at(upper));
        let gap = if n == 1 { u64::MAX } else { a_hi.wrapping_sub(a_lo) };
        let d_hi = a_hi.wrapping_sub(t);
        let d_lo = t.wrapping_sub(a_lo);
        if d_hi <= KNOT_TOLERANCE_TURNS {
            return (self.value_at(upper), gap);
        }
        if d_lo <= KNOT_TOLERANCE_TURNS {
            return (self.value_at(lower), gap);
        }
        let v = match scheme {
            InterpScheme::Linear => {
                let w = d_lo as f64 / gap as f64;
                self.value_at(lower) * (1.0 - w) + self.value_at(upper) * w
            }
            InterpScheme::Lagrange4 if n >= 4 => {
                let pos = [lower + n - 1, lower, upper, upper + 1];
                // Signed offsets relative to t, in turns.
                let x: Vec<f64> = pos
                    .iter()
                    .map(|&q| self.angle_at(q).wrapping_sub(t) as i64 as f64 * 2f64.powi(-64))
                    .collect();
                let mut acc = Complex64::new(0.0, 0.0);
                for i in 0..4 {
                    let mut l = 1.0;
                    for j in 0..4 {
                        if i != j {
                            l *= x[j] / (x[j] - x[i]);
                        }
                    }
                    acc += self.value_at(pos[i]) * l;
                }
                acc
            }
            InterpScheme::Lagrange4 => return self.interpolate(t, p, InterpScheme::Linear),
        };
        (v, gap)
    }

    /// Interpolated value at an arbitrary angle in turns.
    pub fn eval_turns(&self, t: u64, scheme: InterpScheme) -> (Complex64, f64) {
        let p = self.lower_bound(t);
        let (v, gap) = self.interpolate(t, p, scheme);
        (v, turns_to_f64(gap))
    }
}

/// Interpolates the orbit onto the dyadic grid of level `M`.
pub fn resample_to_dyadic(orbit: &OrbitStore, level: u32, opts: &ResampleOptions) -> Result<DyadicGrid> {
    if !(1..=30).contains(&level) {
        return Err(Error::OutOfRange(format!("dyadic level M={level} outside 1..=30")));
    }
    let len = 1usize << level;
    let n = orbit.iterations();
    if (n as f64) < opts.oversample * len as f64 {
        return Err(Error::OrbitTooShort {
            level,
            gap: f64::NAN,
            bound: opts.oversample * len as f64,
        });
    }
    let sorted = SortedOrbit::new(orbit);
    resample_sorted(&sorted, level, opts, n as f64)
}

fn resample_sorted(sorted: &SortedOrbit<'_>, level: u32, opts: &ResampleOptions, n: f64) -> Result<DyadicGrid> {
    let len = 1usize << level;
    let step = 1u64 << (64 - level);
    let mut re = vec![0.0f64; len];
    let mut im = vec![0.0f64; len];
    let chunk = (len / 64).max(1024);
    let gaps = std::sync::Mutex::new(0u64);
    par::for_each_chunk_pair_mut(opts.exec, &mut re, &mut im, chunk, |off, cre, cim| {
        let mut local_gap = 0u64;
        let mut p = sorted.lower_bound(off as u64 * step);
        for (i, (r, m)) in cre.iter_mut().zip(cim.iter_mut()).enumerate() {
            let t = (off + i) as u64 * step;
            while p < sorted.len() && sorted.angle_at(p) < t {
                p += 1;
            }
            let (v, gap) = sorted.interpolate(t, p, opts.scheme);
            local_gap = local_gap.max(gap);
            *r = v.re;
            *m = v.im;
        }
        let mut g = gaps.lock().unwrap();
        *g = (*g).max(local_gap);
    });
    let max_gap = turns_to_f64(gaps.into_inner().unwrap());
    let bound = 4.0 / n;
    if max_gap > bound {
        return Err(Error::OrbitTooShort { level, gap: max_gap, bound });
    }
    Ok(DyadicGrid { level, re, im, max_gap, scheme: opts.scheme })
}

/// Fourier coefficients of `χ` on the dyadic grid.
#[derive(Clone, Debug)]
pub struct BoundarySpectrum {
    pub level: u32,
    /// FFT order: index `i` holds `c_k` with `k ≡ i (mod 2^M)`.
    pub coeffs: Vec<Complex64>,
    /// Grid samples, already reflected if the orientation was flipped.
    pub grid: DyadicGrid,
    pub orientation_flipped: bool,
    pub orbit_digest: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Re,
    Im,
}

impl Component {
    pub const BOTH: [Component; 2] = [Component::Re, Component::Im];
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Component::Re => "re",
            Component::Im => "im",
        })
    }
}

impl BoundarySpectrum {
    /// Spectrum given directly by its coefficients (FFT order); the grid is
    /// reconstructed by the inverse transform. No orientation change.
    pub fn from_coeffs(level: u32, coeffs: Vec<Complex64>) -> Self {
        let len = 1usize << level;
        assert_eq!(coeffs.len(), len, "need 2^level coefficients");
        let mut buf = coeffs.clone();
        FftPlanner::<f64>::new().plan_fft_inverse(len).process(&mut buf);
        let (re, im) = buf.iter().map(|z| (z.re, z.im)).unzip();
        let grid = DyadicGrid::from_samples(level, re, im);
        BoundarySpectrum { level, coeffs, grid, orientation_flipped: false, orbit_digest: None }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// `c_k` for any integer `k` (indices taken mod `2^M`).
    pub fn coeff(&self, k: i64) -> Complex64 {
        self.coeffs[k.rem_euclid(self.coeffs.len() as i64) as usize]
    }

    /// Fourier coefficient of the real function `Re χ` or `Im χ`.
    pub fn component_coeff(&self, comp: Component, k: i64) -> Complex64 {
        let (a, b) = (self.coeff(k), self.coeff(-k).conj());
        match comp {
            Component::Re => (a + b) * 0.5,
            Component::Im => (a - b) * Complex64::new(0.0, -0.5),
        }
    }

    pub fn scheme(&self) -> InterpScheme {
        self.grid.scheme
    }

    /// Largest positive frequency below Nyquist.
    pub fn k_max(&self) -> usize {
        self.len() / 2 - 1
    }
}

/// Forward FFT of the grid with `1/L` normalization and orientation fix.
pub fn fft_spectrum(grid: DyadicGrid) -> BoundarySpectrum {
    fft_spectrum_with_digest(grid, None)
}

pub fn fft_spectrum_with_digest(mut grid: DyadicGrid, orbit_digest: Option<String>) -> BoundarySpectrum {
    let len = grid.len();
    assert!(len.is_power_of_two(), "grid length must be a power of two");
    let mut buf: Vec<Complex64> = grid.re.iter().zip(&grid.im).map(|(&r, &i)| Complex64::new(r, i)).collect();
    FftPlanner::<f64>::new().plan_fft_forward(len).process(&mut buf);
    let scale = 1.0 / len as f64;
    buf.iter_mut().for_each(|c| *c *= scale);

    let flipped = len > 2 && buf[len - 1].norm() > buf[1].norm();
    if flipped {
        buf[1..].reverse();
        grid.re[1..].reverse();
        grid.im[1..].reverse();
    }
    BoundarySpectrum { level: grid.level, coeffs: buf, grid, orientation_flipped: flipped, orbit_digest }
}

/// One row of the spectrum table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub k: u64,
    pub log10_k: f64,
    pub log10_abs_c: f64,
    pub log10_abs_kc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub rows: Vec<SpectrumRow>,
    /// Frequencies of the detected peaks of `|k c_k|`, increasing.
    pub peaks: Vec<u64>,
    pub threshold: f64,
    /// Mean spacing of consecutive peaks in `log10 k`; `None` with < 2 peaks.
    pub mean_peak_spacing: Option<f64>,
}

/// Peak-detection settings for [`spectrum_report`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PeakOptions {
    /// Quantile of `|k c_k|` a peak must exceed.
    pub quantile: f64,
    /// A peak must reach this fraction of the largest `|k c_k|` within
    /// `neighbourhood` decades on either side.
    pub dominance: f64,
    pub neighbourhood: f64,
    /// Peaks closer than this in `log10 k` are merged, keeping the taller.
    pub merge: f64,
    /// Peaks below this fraction of `|c_1|` are treated as round-off.
    pub noise_floor: f64,
}

impl Default for PeakOptions {
    fn default() -> Self {
        Self { quantile: 0.999, dominance: 0.85, neighbourhood: 0.75, merge: 0.02, noise_floor: 1e-10 }
    }
}

pub fn spectrum_report(spectrum: &BoundarySpectrum) -> SpectrumReport {
    spectrum_report_with(spectrum, &PeakOptions::default())
}

/// Tables of `log10 |c_k|`, `log10 |k c_k|` and the high peaks of `|k c_k|`.
///
/// Candidates are local maxima above the `quantile` of `|k c_k|`; of those
/// only the ones that dominate their log-neighbourhood are kept, which
/// leaves one peak per self-similarity window. The spacing is the
/// least-squares slope of `log10 k_peak` against the peak index.
pub fn spectrum_report_with(spectrum: &BoundarySpectrum, opts: &PeakOptions) -> SpectrumReport {
    let k_max = spectrum.k_max();
    let kc: Vec<f64> = (0..=k_max)
        .map(|k| if k == 0 { 0.0 } else { k as f64 * spectrum.coeff(k as i64).norm() })
        .collect();
    let rows: Vec<SpectrumRow> = (1..=k_max)
        .map(|k| {
            let c = spectrum.coeff(k as i64).norm();
            SpectrumRow {
                k: k as u64,
                log10_k: (k as f64).log10(),
                log10_abs_c: c.log10(),
                log10_abs_kc: kc[k].log10(),
            }
        })
        .collect();

    let mut sorted: Vec<f64> = kc[1..].to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let threshold = quantile_sorted(&sorted, opts.quantile).max(opts.noise_floor * kc[1]);

    // k = 1 carries the radius, not the window structure.
    let lk: Vec<f64> = (0..=k_max).map(|k| (k.max(1) as f64).log10()).collect();
    let mut peaks: Vec<usize> = Vec::new();
    for k in 2..k_max {
        if !(kc[k] > threshold && kc[k] >= kc[k - 1] && kc[k] >= kc[k + 1]) {
            continue;
        }
        let lo = lk.partition_point(|&v| v < lk[k] - opts.neighbourhood).max(2);
        let hi = lk.partition_point(|&v| v <= lk[k] + opts.neighbourhood);
        let local = kc[lo..hi].iter().cloned().fold(0.0, f64::max);
        if kc[k] < opts.dominance * local {
            continue;
        }
        match peaks.last_mut() {
            Some(last) if lk[k] - lk[*last] < opts.merge => {
                if kc[k] > kc[*last] {
                    *last = k;
                }
            }
            _ => peaks.push(k),
        }
    }
    let mean_peak_spacing = (peaks.len() >= 2).then(|| {
        let idx: Vec<f64> = (0..peaks.len()).map(|i| i as f64).collect();
        let y: Vec<f64> = peaks.iter().map(|&k| lk[k]).collect();
        linear_fit(&idx, &y).map(|f| f.slope).unwrap_or(f64::NAN)
    });
    SpectrumReport {
        rows,
        peaks: peaks.into_iter().map(|k| k as u64).collect(),
        threshold,
        mean_peak_spacing,
    }
}

/// Max over `indices` of `|χ(frac(nσ)+σ) − f^{n+1}(c)|` with `χ` the linear
/// interpolant of the grid.
pub fn conjugacy_residual(spectrum: &BoundarySpectrum, orbit: &OrbitStore, indices: &[usize]) -> f64 {
    let sigma = orbit.spec().rot.value_f64();
    let values = orbit.values();
    let sign = if spectrum.orientation_flipped { -1.0 } else { 1.0 };
    indices
        .iter()
        .filter(|&&n| n + 1 < values.len())
        .map(|&n| {
            let t = sign * (orbit.angle(n) + sigma);
            (spectrum.grid.eval_linear(t) - values[n + 1]).norm()
        })
        .fold(0.0, f64::max)
}

/// Leave-out interpolation check: every `stride`-th sample is withheld,
/// the rest are sorted, and the withheld ones are predicted from their
/// neighbours. Returns `(bracketing gap, error)` per withheld sample.
pub fn held_out_errors(orbit: &OrbitStore, stride: usize, scheme: InterpScheme) -> Vec<(f64, f64)> {
    assert!(stride >= 2);
    let exclude = |i: usize| i % stride == 0;
    let sorted = SortedOrbit::from_slices(orbit.angle_turns(), orbit.values(), Some(&exclude));
    (0..orbit.values().len())
        .step_by(stride)
        .map(|i| {
            let (v, gap) = sorted.eval_turns(orbit.angle_turns()[i], scheme);
            (gap, (v - orbit.values()[i]).norm())
        })
        .collect()
}
