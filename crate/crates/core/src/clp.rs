//! Continuous Littlewood-Paley regularity estimates.
//!
//! For a real periodic `φ` with coefficients `φ_k`,
//! `N_η(τ) = ‖ Σ (2π|k|)^η e^{-2πτ|k|} φ_k e^{2πikt} ‖_∞`, and
//! `φ ∈ C^κ` (non-integer `κ`) iff `N_η(τ) ≤ C τ^{κ−η}` as `τ → 0`.
//! The multiplier is real and even, so one complex inverse FFT of the
//! spectrum of `χ` yields the images of `Re χ` and `Im χ` at once.

use std::ops::Range;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::boundary::{BoundarySpectrum, Component};
use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::stats::{linear_fit, log_space, mean, variance, LineFit};

/// Multiplier ratio below which coefficients are dropped.
const MULTIPLIER_CUTOFF: f64 = 1e-17;
/// Minimum grid points per `τ` when the inverse transform is shortened.
const POINTS_PER_TAU: f64 = 64.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClpCurve {
    pub eta: u32,
    pub component: Component,
    pub taus: Vec<f64>,
    pub norms: Vec<f64>,
    /// `2π 2^{-M}`; norms at smaller `τ` are dominated by truncation.
    pub nyquist_floor: f64,
}

impl ClpCurve {
    pub fn log10_taus(&self) -> Vec<f64> {
        self.taus.iter().map(|t| t.log10()).collect()
    }

    pub fn log10_norms(&self) -> Vec<f64> {
        self.norms.iter().map(|n| n.log10()).collect()
    }

    /// Number of `τ` values below the Nyquist floor.
    pub fn below_floor(&self) -> usize {
        self.taus.iter().filter(|&&t| t < self.nyquist_floor).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClpOptions {
    pub etas: Vec<u32>,
    pub n_taus: usize,
    pub tau_min: f64,
    pub tau_max: f64,
    /// Shorten the inverse FFT when the multiplier has decayed.
    pub truncate: bool,
    pub exec: Exec,
}

impl Default for ClpOptions {
    fn default() -> Self {
        Self {
            etas: (1..=6).collect(),
            n_taus: 400,
            tau_min: 1e-7,
            tau_max: 10f64.powf(-0.5),
            truncate: true,
            exec: Exec::default(),
        }
    }
}

/// The default `τ` grid clipped to the Nyquist floor of the spectrum.
pub fn tau_grid(spectrum: &BoundarySpectrum, opts: &ClpOptions) -> Vec<f64> {
    let floor = nyquist_floor(spectrum.level);
    log_space(opts.tau_min.max(floor), opts.tau_max, opts.n_taus)
}

pub fn nyquist_floor(level: u32) -> f64 {
    2.0 * std::f64::consts::PI * 2f64.powi(-(level as i32))
}

/// Evaluates `N_η(τ)` for `Re χ` and `Im χ` together.
struct Evaluator<'a> {
    spectrum: &'a BoundarySpectrum,
    plans: Vec<Arc<dyn Fft<f64>>>,
    truncate: bool,
}

impl<'a> Evaluator<'a> {
    fn new(spectrum: &'a BoundarySpectrum, truncate: bool) -> Self {
        let mut planner = FftPlanner::new();
        let plans = (0..=spectrum.level).map(|l| planner.plan_fft_inverse(1usize << l)).collect();
        Self { spectrum, plans, truncate }
    }

    /// Transform length used at `τ`, and the largest `|k|` kept.
    fn size_for(&self, eta: u32, tau: f64) -> (usize, usize) {
        let len = self.spectrum.len();
        let half = len / 2;
        if !self.truncate {
            return (len, half);
        }
        // Beyond x = k / k*, with k* = η/(2πτ) the multiplier peak, the
        // multiplier ratio is x^η e^{-η(x−1)}.
        let e = eta as f64;
        let target = -MULTIPLIER_CUTOFF.ln() / e;
        let mut x = 2.0f64;
        while x - 1.0 - x.ln() < target {
            x *= 1.1;
        }
        let k_cut = (x * e / (2.0 * std::f64::consts::PI * tau)).ceil();
        let need = (4.0 * k_cut).max(POINTS_PER_TAU / tau);
        if need >= len as f64 {
            return (len, half);
        }
        let l = (need as usize).next_power_of_two().max(16);
        (l, (l / 2 - 1).min(k_cut as usize))
    }

    /// `(‖T Re χ‖_∞, ‖T Im χ‖_∞)` for the multiplier at `(η, τ)`.
    fn norms(&self, eta: u32, tau: f64, buf: &mut Vec<Complex64>) -> (f64, f64) {
        let (len, k_keep) = self.size_for(eta, tau);
        buf.clear();
        buf.resize(len, Complex64::new(0.0, 0.0));
        let two_pi = 2.0 * std::f64::consts::PI;
        let full = self.spectrum.len();
        let coeffs = &self.spectrum.coeffs;
        let nyq = full / 2;
        // k = 0 is annihilated by |k|^η.
        const BLOCK: usize = 512;
        let mut k = 1usize;
        while k <= k_keep {
            let end = (k + BLOCK).min(k_keep + 1);
            let mut decay = (-two_pi * tau * k as f64).exp();
            let step = (-two_pi * tau).exp();
            for kk in k..end {
                let w = (two_pi * kk as f64).powi(eta as i32) * decay;
                decay *= step;
                let pos = coeffs[kk];
                // The Nyquist bin stands for both ±N/2.
                let neg = if kk == nyq { Complex64::new(0.0, 0.0) } else { coeffs[full - kk] };
                buf[kk] = pos * w;
                if kk < len - kk {
                    buf[len - kk] = neg * w;
                } else if kk == len - kk {
                    buf[kk] += neg * w;
                }
            }
            k = end;
        }
        let plan = &self.plans[len.trailing_zeros() as usize];
        plan.process(buf);
        buf.iter().fold((0.0f64, 0.0f64), |(r, i), z| (r.max(z.re.abs()), i.max(z.im.abs())))
    }
}

/// `N_η(τ)` of one component on the given `τ` values.
pub fn clp_norms(spectrum: &BoundarySpectrum, comp: Component, eta: u32, taus: &[f64]) -> Result<ClpCurve> {
    let opts = ClpOptions { etas: vec![eta], ..Default::default() };
    let (re, im) = clp_curves_for_eta(spectrum, eta, taus, &opts)?;
    Ok(match comp {
        Component::Re => re,
        Component::Im => im,
    })
}

fn check_inputs(eta: u32, taus: &[f64]) -> Result<()> {
    if eta < 1 {
        return Err(Error::OutOfRange("eta must be >= 1".into()));
    }
    if taus.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
        return Err(Error::OutOfRange("tau values must be positive".into()));
    }
    Ok(())
}

fn clp_curves_for_eta(
    spectrum: &BoundarySpectrum,
    eta: u32,
    taus: &[f64],
    opts: &ClpOptions,
) -> Result<(ClpCurve, ClpCurve)> {
    check_inputs(eta, taus)?;
    let ev = Evaluator::new(spectrum, opts.truncate);
    let pairs = par::map_init(opts.exec, taus, Vec::new, |buf, &tau| ev.norms(eta, tau, buf));
    Ok(build_pair(spectrum, eta, taus, pairs))
}

fn build_pair(spectrum: &BoundarySpectrum, eta: u32, taus: &[f64], pairs: Vec<(f64, f64)>) -> (ClpCurve, ClpCurve) {
    let floor = nyquist_floor(spectrum.level);
    let (re, im): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let mk = |component, norms| ClpCurve { eta, component, taus: taus.to_vec(), norms, nyquist_floor: floor };
    let below = taus.iter().filter(|&&t| t < floor).count();
    if below > 0 {
        log::warn!("{below} tau values below the Nyquist floor {floor:.3e}; norms there reflect truncation");
    }
    (mk(Component::Re, re), mk(Component::Im, im))
}

/// All curves (every `η`, both components) on one shared `τ` grid.
pub fn clp_all(spectrum: &BoundarySpectrum, taus: &[f64], opts: &ClpOptions) -> Result<Vec<ClpCurve>> {
    for &eta in &opts.etas {
        check_inputs(eta, taus)?;
    }
    let ev = Evaluator::new(spectrum, opts.truncate);
    let jobs: Vec<(u32, f64)> =
        opts.etas.iter().flat_map(|&e| taus.iter().map(move |&t| (e, t))).collect();
    let results = par::map_init(opts.exec, &jobs, Vec::new, |buf, &(eta, tau)| ev.norms(eta, tau, buf));
    let mut out = Vec::with_capacity(2 * opts.etas.len());
    for (i, &eta) in opts.etas.iter().enumerate() {
        let pairs = results[i * taus.len()..(i + 1) * taus.len()].to_vec();
        let (re, im) = build_pair(spectrum, eta, taus, pairs);
        out.push(re);
        out.push(im);
    }
    Ok(out)
}

/// Consecutive differences of `log10 N_η`.
pub fn first_differences(curve: &ClpCurve) -> Result<Vec<f64>> {
    if curve.norms.len() < 2 {
        return Err(Error::InsufficientData("first differences need >= 2 points".into()));
    }
    let y = curve.log10_norms();
    Ok(y.windows(2).map(|w| w[1] - w[0]).collect())
}

/// Settings for [`select_tau_window`].
#[derive(Clone, Debug, PartialEq)]
pub struct WindowOptions {
    /// Minimum accepted width, decades.
    pub min_decades: f64,
    /// Width of the sliding sub-windows, decades.
    pub sub_decades: f64,
    /// Log-period of the oscillations, `|log10 σ|`; sub-windows are
    /// widened to 1.5 periods when that is larger.
    pub period_decades: Option<f64>,
    /// Maximum ratio of sub-window variances of the detrended differences.
    pub max_variance_ratio: f64,
    /// Largest allowed deviation of a sub-window slope from the window slope.
    pub max_slope_deviation: f64,
    /// Manual override `[log10 τ_lo, log10 τ_hi]`.
    pub manual: Option<(f64, f64)>,
}

impl Default for WindowOptions {
    fn default() -> Self {
        Self {
            min_decades: 1.0,
            sub_decades: 1.0,
            period_decades: None,
            max_variance_ratio: 4.0,
            max_slope_deviation: 0.05,
            manual: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauWindow {
    pub log10_tau_lo: f64,
    pub log10_tau_hi: f64,
    /// Index range into the `τ` grid.
    pub start: usize,
    pub end: usize,
    pub manual: bool,
}

impl TauWindow {
    pub fn decades(&self) -> f64 {
        self.log10_tau_hi - self.log10_tau_lo
    }

    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }
}

/// Prefix sums for O(1) least-squares slopes over index ranges.
struct Prefix {
    sx: Vec<f64>,
    sy: Vec<f64>,
    sxx: Vec<f64>,
    sxy: Vec<f64>,
}

impl Prefix {
    fn new(x: &[f64], y: &[f64]) -> Self {
        let mut p = Prefix { sx: vec![0.0], sy: vec![0.0], sxx: vec![0.0], sxy: vec![0.0] };
        for (&a, &b) in x.iter().zip(y) {
            p.sx.push(p.sx.last().unwrap() + a);
            p.sy.push(p.sy.last().unwrap() + b);
            p.sxx.push(p.sxx.last().unwrap() + a * a);
            p.sxy.push(p.sxy.last().unwrap() + a * b);
        }
        p
    }

    fn slope(&self, r: Range<usize>) -> f64 {
        let n = (r.end - r.start) as f64;
        let sx = self.sx[r.end] - self.sx[r.start];
        let sy = self.sy[r.end] - self.sy[r.start];
        let sxx = self.sxx[r.end] - self.sxx[r.start];
        let sxy = self.sxy[r.end] - self.sxy[r.start];
        (n * sxy - sx * sy) / (n * sxx - sx * sx)
    }
}

struct CurveDiag {
    prefix: Prefix,
    /// Detrended first differences.
    diffs: Vec<f64>,
}

/// Chooses the widest `log τ` interval on which every curve behaves like a
/// power law with regular oscillations.
///
/// A candidate `[i, j)` passes when, for every curve, (1) the least-squares
/// slopes over all sliding sub-windows stay within `max_slope_deviation` of
/// the slope over the whole candidate (no trend break) and (2) the variance
/// of the detrended first differences over those sub-windows varies by less
/// than `max_variance_ratio`.
pub fn select_tau_window(curves: &[ClpCurve], opts: &WindowOptions) -> Result<TauWindow> {
    let first = curves.first().ok_or_else(|| Error::InsufficientData("no curves".into()))?;
    let x = first.log10_taus();
    let n = x.len();
    if curves.iter().any(|c| c.taus != first.taus) {
        return Err(Error::InsufficientData("curves must share one tau grid".into()));
    }
    if let Some((lo, hi)) = opts.manual {
        let start = x.partition_point(|&v| v < lo - 1e-12);
        let end = x.partition_point(|&v| v <= hi + 1e-12);
        if end < start + 3 {
            return Err(Error::NoScalingWindow);
        }
        return Ok(TauWindow { log10_tau_lo: x[start], log10_tau_hi: x[end - 1], start, end, manual: true });
    }
    if n < 100 {
        return Err(Error::InsufficientData(format!("window selection needs >= 100 tau points, have {n}")));
    }
    let spacing = (x[n - 1] - x[0]) / (n - 1) as f64;
    let sub_decades = opts.sub_decades.max(1.5 * opts.period_decades.unwrap_or(0.0));
    let sub = ((sub_decades / spacing).round() as usize).max(5);
    let min_len = (opts.min_decades / spacing).round() as usize + 1;

    let diags: Vec<CurveDiag> = curves
        .iter()
        .map(|c| {
            let y = c.log10_norms();
            let d: Vec<f64> = y.windows(2).map(|w| w[1] - w[0]).collect();
            CurveDiag { prefix: Prefix::new(&x, &y), diffs: d }
        })
        .collect();
    if diags.iter().any(|d| d.diffs.iter().any(|v| !v.is_finite())) {
        return Err(Error::NoScalingWindow);
    }

    let passes = |i: usize, j: usize| -> bool {
        let sub = sub.min((j - i) / 2);
        diags.iter().all(|d| {
            let s = d.prefix.slope(i..j);
            let mut vmin = f64::INFINITY;
            let mut vmax = 0.0f64;
            let mut k = i;
            while k + sub <= j {
                if (d.prefix.slope(k..k + sub) - s).abs() > opts.max_slope_deviation {
                    return false;
                }
                // Differences inside [k, k+sub) detrended by the window slope.
                let seg: Vec<f64> = d.diffs[k..k + sub - 1].iter().map(|v| v - s * spacing).collect();
                let v = variance(&seg);
                vmin = vmin.min(v);
                vmax = vmax.max(v);
                k += 1;
            }
            vmax <= opts.max_variance_ratio * vmin.max(f64::MIN_POSITIVE) || vmax < 1e-20
        })
    };

    for len in (min_len.max(10)..=n).rev() {
        // Among equally wide windows prefer the one reaching smallest τ.
        if let Some(i) = (0..=n - len).find(|&i| passes(i, i + len)) {
            return Ok(TauWindow {
                log10_tau_lo: x[i],
                log10_tau_hi: x[i + len - 1],
                start: i,
                end: i + len,
                manual: false,
            });
        }
    }
    Err(Error::NoScalingWindow)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaEstimate {
    pub eta: u32,
    pub component: Component,
    /// Fitted slope `κ − η`.
    pub slope: f64,
    pub stderr: f64,
    pub kappa: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub kappa: f64,
    /// `max − min` of the per-curve estimates.
    pub spread: f64,
    pub kappa_re: Option<f64>,
    pub kappa_im: Option<f64>,
    pub per_eta: Vec<EtaEstimate>,
    pub window: TauWindow,
    /// Fit lies within 0.01 of an integer.
    pub near_integer: bool,
    pub warnings: Vec<String>,
}

/// Per-curve slopes over `window`; `κ` is their unweighted mean.
pub fn fit_regularity(curves: &[ClpCurve], window: &TauWindow) -> Result<RegularityReport> {
    if curves.is_empty() {
        return Err(Error::InsufficientData("no curves".into()));
    }
    let mut per_eta = Vec::with_capacity(curves.len());
    for c in curves {
        let r = window.range();
        if r.end > c.taus.len() {
            return Err(Error::OutOfRange("window exceeds tau grid".into()));
        }
        let x: Vec<f64> = c.taus[r.clone()].iter().map(|t| t.log10()).collect();
        let y: Vec<f64> = c.norms[r].iter().map(|v| v.log10()).collect();
        let LineFit { slope, slope_stderr, .. } = linear_fit(&x, &y)?;
        per_eta.push(EtaEstimate {
            eta: c.eta,
            component: c.component,
            slope,
            stderr: slope_stderr,
            kappa: slope + c.eta as f64,
        });
    }
    let ks: Vec<f64> = per_eta.iter().map(|e| e.kappa).collect();
    let kappa = mean(&ks);
    let spread = ks.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - ks.iter().cloned().fold(f64::INFINITY, f64::min);
    let comp_mean = |comp| {
        let v: Vec<f64> = per_eta.iter().filter(|e| e.component == comp).map(|e| e.kappa).collect();
        (!v.is_empty()).then(|| mean(&v))
    };
    let mut warnings = Vec::new();
    if spread > 0.05 {
        let msg = format!("inconsistent CLP estimates: spread {spread:.4} over eta and components");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let near_integer = (kappa - kappa.round()).abs() < 0.01;
    if near_integer {
        warnings.push(format!("kappa={kappa:.4} is within 0.01 of an integer; the CLP characterization does not apply"));
    }
    Ok(RegularityReport {
        kappa,
        spread,
        kappa_re: comp_mean(Component::Re),
        kappa_im: comp_mean(Component::Im),
        per_eta,
        window: window.clone(),
        near_integer,
        warnings,
    })
}

/// Curves, automatic window and fit in one call.
pub fn regularity(spectrum: &BoundarySpectrum, clp: &ClpOptions, win: &WindowOptions) -> Result<(Vec<ClpCurve>, RegularityReport)> {
    let taus = tau_grid(spectrum, clp);
    let curves = clp_all(spectrum, &taus, clp)?;
    let window = select_tau_window(&curves, win)?;
    let report = fit_regularity(&curves, &window)?;
    Ok((curves, report))
}

/// Mean of the detrended differences' dominant periodic component relative
/// to their standard deviation: `max_f |DFT(d)_f| / (√n σ_d)`.
pub fn periodicity_strength(diffs: &[f64]) -> f64 {
    let n = diffs.len();
    if n < 4 {
        return 0.0;
    }
    let m = mean(diffs);
    let d: Vec<f64> = diffs.iter().map(|v| v - m).collect();
    let sd = variance(&d).sqrt();
    if sd == 0.0 {
        return 0.0;
    }
    let mut best = 0.0f64;
    for f in 1..n / 2 {
        let w = 2.0 * std::f64::consts::PI * f as f64 / n as f64;
        let (mut c, mut s) = (0.0, 0.0);
        for (i, v) in d.iter().enumerate() {
            c += v * (w * i as f64).cos();
            s += v * (w * i as f64).sin();
        }
        best = best.max((c * c + s * s).sqrt());
    }
    best / ((n as f64).sqrt() * sd)
}
