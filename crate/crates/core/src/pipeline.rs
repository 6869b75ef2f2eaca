//! End-to-end runs: critical point, orbit, interpolation, spectrum, CLP fit,
//! then scaling, geometry and phase statistics, with every intermediate
//! written to the output directory as soon as it exists.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::boundary::{fft_spectrum_with_digest, resample_to_dyadic, spectrum_report, BoundarySpectrum, InterpScheme, ResampleOptions};
use crate::cache::{cache_dir_from_env, cache_file_name, find_cached, load_orbit, save_orbit};
use crate::cfrac::{convergents_up_to, tail_scale, RotationNumber};
use crate::clp::{clp_all, fit_regularity, select_tau_window, tau_grid, ClpCurve, ClpOptions, RegularityReport, TauWindow, WindowOptions};
use crate::error::{Error, Result};
use crate::geometry::{geometry_report, kappa_max, GeometryReport};
use crate::maps::{boundary_critical_point, MapKind, MapSpec};
use crate::orbit::{iterate_critical, scaling_exponent_auto, EscalationOptions, OrbitStore, ScalingResult};
use crate::output::{self, SpectrumMeta};
use crate::par::Exec;
use crate::phasestats::{extract_phases, histogram, ks_normality, ks_uniform, Histogram, KsReport, PhaseSample};

pub const REPORT_SCHEMA: &str = "siegel.report/1";
pub const SWEEP_SCHEMA: &str = "siegel.sweep/1";
/// Map template used by sweeps; `{d}` is replaced by the critical order.
pub const DEFAULT_TEMPLATE: &str = "fmb:m={d}:beta=1+3i";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingConfig {
    /// Largest convergent denominator used.
    pub q_max: u64,
    pub start_bits: u32,
    pub max_bits: u32,
    pub tolerance: f64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        let e = EscalationOptions::default();
        Self { q_max: 2_000_000, start_bits: e.start_bits, max_bits: e.max_bits, tolerance: e.tolerance }
    }
}

impl ScalingConfig {
    pub fn escalation(&self) -> EscalationOptions {
        EscalationOptions { start_bits: self.start_bits, max_bits: self.max_bits, tolerance: self.tolerance }
    }
}

/// Which analyses a run performs. Orbit and spectrum are computed whenever
/// regularity, geometry or phases are requested.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stages {
    pub spectrum: bool,
    pub regularity: bool,
    pub scaling: bool,
    pub geometry: bool,
    pub phases: bool,
}

impl Default for Stages {
    fn default() -> Self {
        Self { spectrum: true, regularity: true, scaling: true, geometry: true, phases: true }
    }
}

impl Stages {
    pub fn needs_spectrum(&self) -> bool {
        self.spectrum || self.regularity || self.geometry || self.phases
    }
}

/// One run, as read from a TOML file; CLI flags override fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub map: String,
    pub rot: String,
    /// Grid level `M`; the spectrum has `2^M` coefficients.
    pub level: u32,
    /// Orbit length; `None` means `oversample · 2^M`.
    pub iterations: Option<u64>,
    pub oversample: f64,
    /// Orbit precision in bits.
    pub prec_bits: u32,
    pub scheme: InterpScheme,
    pub etas: Vec<u32>,
    pub n_taus: usize,
    pub tau_min: f64,
    pub tau_max: f64,
    /// Manual fit window `[log10 τ_lo, log10 τ_hi]`.
    pub tau_window: Option<[f64; 2]>,
    pub scaling: ScalingConfig,
    /// Phase windows `[j_lo, j_hi]`; `None` picks the two highest that fit.
    pub phase_windows: Option<[u32; 2]>,
    pub phase_bins: Option<usize>,
    pub stages: Stages,
    pub out_dir: PathBuf,
    /// Overrides `SIEGEL_CACHE_DIR`.
    pub cache_dir: Option<PathBuf>,
    /// Seed for the synthetic self-checks; recorded for reproducibility.
    pub seed: u64,
    pub sequential: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let clp = ClpOptions::default();
        Self {
            map: "quad".into(),
            rot: ":1".into(),
            level: 20,
            iterations: None,
            oversample: 4.0,
            prec_bits: 256,
            scheme: InterpScheme::Linear,
            etas: clp.etas,
            n_taus: clp.n_taus,
            tau_min: clp.tau_min,
            tau_max: clp.tau_max,
            tau_window: None,
            scaling: ScalingConfig::default(),
            phase_windows: None,
            phase_bins: None,
            stages: Stages::default(),
            out_dir: PathBuf::from("siegel-out"),
            cache_dir: None,
            seed: 0,
            sequential: false,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn map_spec(&self) -> Result<MapSpec> {
        let kind: MapKind = self.map.parse()?;
        let rot: RotationNumber = self.rot.parse()?;
        MapSpec::new(kind, rot)
    }

    pub fn exec(&self) -> Exec {
        if self.sequential {
            Exec::Sequential
        } else {
            Exec::Parallel
        }
    }

    pub fn orbit_length(&self) -> u64 {
        self.iterations.unwrap_or((self.oversample * (1u64 << self.level) as f64).ceil() as u64)
    }

    pub fn cache_dir(&self) -> Option<PathBuf> {
        self.cache_dir.clone().or_else(cache_dir_from_env)
    }

    pub fn clp_options(&self) -> ClpOptions {
        ClpOptions {
            etas: self.etas.clone(),
            n_taus: self.n_taus,
            tau_min: self.tau_min,
            tau_max: self.tau_max,
            truncate: true,
            exec: self.exec(),
        }
    }

    pub fn window_options(&self, rot: &RotationNumber) -> WindowOptions {
        WindowOptions {
            period_decades: Some(tail_scale(rot).log10().abs()),
            manual: self.tau_window.map(|[a, b]| (a, b)),
            ..WindowOptions::default()
        }
    }

    /// Checks everything that can be checked without computing.
    pub fn validate(&self) -> Result<MapSpec> {
        let spec = self.map_spec()?;
        let bad = |msg: String| Err(Error::Config(msg));
        if !(4..=30).contains(&self.level) {
            return bad(format!("level {} outside 4..=30", self.level));
        }
        if !(self.oversample >= 4.0) {
            return bad(format!("oversample {} must be at least 4", self.oversample));
        }
        let min_n = 4u64 << self.level;
        if self.orbit_length() < min_n {
            return bad(format!("iterations {} below 4·2^M = {min_n}", self.orbit_length()));
        }
        if !(64..=1 << 20).contains(&self.prec_bits) {
            return bad(format!("prec_bits {} outside 64..=2^20", self.prec_bits));
        }
        if self.etas.is_empty() || self.etas.contains(&0) {
            return bad("etas must be a non-empty list of positive integers".into());
        }
        if !(self.tau_min > 0.0 && self.tau_min < self.tau_max && self.tau_max.is_finite()) {
            return bad(format!("need 0 < tau_min < tau_max, got {} and {}", self.tau_min, self.tau_max));
        }
        if self.n_taus < 100 {
            return bad(format!("n_taus {} below 100", self.n_taus));
        }
        if let Some([lo, hi]) = self.tau_window {
            if !(lo < hi) {
                return bad(format!("tau window [{lo}, {hi}] is empty"));
            }
        }
        if let Some([lo, hi]) = self.phase_windows {
            if lo > hi {
                return bad(format!("phase windows [{lo}, {hi}] are reversed"));
            }
        }
        if matches!(self.phase_bins, Some(b) if b < 2) {
            return bad("phase_bins must be at least 2".into());
        }
        if self.scaling.start_bits < 64 || self.scaling.max_bits < self.scaling.start_bits {
            return bad("scaling precision range is invalid".into());
        }
        check_writable(&self.out_dir)?;
        if let Some(dir) = self.cache_dir() {
            check_writable(&dir)?;
        }
        Ok(spec)
    }

    /// Human-readable plan printed by `--dry-run`.
    pub fn plan(&self) -> Result<Vec<String>> {
        let spec = self.validate()?;
        let st = &self.stages;
        let mut steps = vec![format!("map {} with rotation {} (σ = {:.15})", spec.kind, spec.rot, spec.rot.value_f64())];
        if st.needs_spectrum() {
            steps.push(format!("orbit: {} iterations at {} bits", self.orbit_length(), self.prec_bits));
            match self.cache_dir() {
                Some(d) => steps.push(format!("orbit cache: {}", d.join(cache_file_name(&spec, self.prec_bits, self.orbit_length())).display())),
                None => steps.push("orbit cache: disabled".into()),
            }
            steps.push(format!("interpolation: {} onto 2^{} points", self.scheme, self.level));
            steps.push("spectrum: FFT, orientation check, peak table".into());
        }
        if st.regularity {
            steps.push(format!("regularity: {} taus, eta in {:?}, window {}", self.n_taus, self.etas, match self.tau_window {
                Some([a, b]) => format!("[{a}, {b}]"),
                None => "automatic".into(),
            }));
        }
        if st.scaling {
            steps.push(format!(
                "scaling: Q up to {}, precision {}..{} bits",
                self.scaling.q_max, self.scaling.start_bits, self.scaling.max_bits
            ));
        }
        if st.geometry {
            steps.push("geometry: radius estimators, area partial sums with Aitken".into());
        }
        if st.phases {
            steps.push(match self.phase_windows {
                Some([a, b]) => format!("phases: windows {a}..{b}"),
                None => "phases: two highest windows below Nyquist".into(),
            });
        }
        steps.push(format!("outputs under {}", self.out_dir.display()));
        Ok(steps)
    }
}

fn check_writable(dir: &Path) -> Result<()> {
    let mut probe = dir;
    loop {
        if probe.exists() {
            let meta = std::fs::metadata(probe)?;
            if !meta.is_dir() {
                return Err(Error::Config(format!("{} is not a directory", probe.display())));
            }
            if meta.permissions().readonly() {
                return Err(Error::Config(format!("{} is not writable", probe.display())));
            }
            return Ok(());
        }
        match probe.parent() {
            Some(p) if !p.as_os_str().is_empty() => probe = p,
            _ => return Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Config,
    CriticalPoint,
    Orbit,
    Interpolation,
    Spectrum,
    Clp,
    Window,
    Scaling,
    Geometry,
    Phases,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("stage serializes");
        f.write_str(s.as_str().unwrap_or("?"))
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        self.source.exit_code()
    }
}

trait Tag<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, PipelineError>;
}

impl<T> Tag<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, PipelineError> {
        self.map_err(|source| PipelineError { stage, source })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrbitSource {
    Computed,
    Loaded,
    Extended,
}

/// Loads the orbit from the cache when possible (extending a shorter cached
/// orbit if needed), otherwise computes it; new orbits are written back.
pub fn obtain_orbit(spec: &MapSpec, n: u64, prec_bits: u32, cache: Option<&Path>) -> Result<(OrbitStore, OrbitSource)> {
    let Some(dir) = cache else {
        return Ok((iterate_critical(spec, n, prec_bits)?, OrbitSource::Computed));
    };
    std::fs::create_dir_all(dir)?;
    let (orbit, source) = match find_cached(dir, spec, prec_bits, n) {
        Some((path, have)) => {
            let mut orbit = load_orbit(&path, Some((spec, prec_bits)))?;
            if have == n {
                log::info!("orbit loaded from {}", path.display());
                return Ok((orbit, OrbitSource::Loaded));
            }
            log::info!("extending cached orbit {} from {have} to {n}", path.display());
            orbit.extend_to(n)?;
            (orbit, OrbitSource::Extended)
        }
        None => (iterate_critical(spec, n, prec_bits)?, OrbitSource::Computed),
    };
    save_orbit(&dir.join(cache_file_name(spec, prec_bits, n)), &orbit)?;
    Ok((orbit, source))
}

/// Interpolation onto the dyadic grid followed by the FFT.
pub fn spectrum_from_orbit(orbit: &OrbitStore, level: u32, scheme: InterpScheme, exec: Exec) -> Result<BoundarySpectrum> {
    let opts = ResampleOptions { scheme, exec, ..ResampleOptions::default() };
    let grid = resample_to_dyadic(orbit, level, &opts)?;
    Ok(fft_spectrum_with_digest(grid, Some(orbit.digest().to_string())))
}

/// The two highest self-similarity windows `[σ^{-j}, σ^{-j-2}]` that lie
/// below the largest computed frequency.
pub fn default_phase_windows(spectrum: &BoundarySpectrum, rot: &RotationNumber) -> Option<(u32, u32)> {
    let s = rot.value_f64();
    let top = (spectrum.k_max() as f64).ln() / (-s.ln());
    let j_hi = (top.floor() as i64) - 1;
    (j_hi >= 1).then(|| (j_hi as u32 - 1, j_hi as u32))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub j_lo: u32,
    pub j_hi: u32,
    pub k_lo: u64,
    pub k_hi: u64,
    pub count: usize,
    pub histogram: Histogram,
    pub ks: KsReport,
    /// KS distance of the raw phases to the uniform law on `(−π, π]`.
    pub d_uniform: f64,
}

pub fn phase_analysis(
    spectrum: &BoundarySpectrum,
    rot: &RotationNumber,
    windows: Option<(u32, u32)>,
    bins: Option<usize>,
) -> Result<(PhaseSample, PhaseReport)> {
    let (j_lo, j_hi) = match windows {
        Some(w) => w,
        None => default_phase_windows(spectrum, rot)
            .ok_or_else(|| Error::OutOfRange("spectrum too short for any phase window".into()))?,
    };
    let sample = extract_phases(spectrum, j_lo, j_hi, rot)?;
    let hist = histogram(&sample, bins)?;
    let ks = ks_normality(&sample)?;
    let report = PhaseReport {
        j_lo,
        j_hi,
        k_lo: sample.k_lo,
        k_hi: sample.k_hi,
        count: sample.len(),
        histogram: hist,
        ks,
        d_uniform: ks_uniform(&sample.phases),
    };
    Ok((sample, report))
}

/// CLP curves on the configured grid, automatic or manual window, fit.
pub fn regularity_analysis(
    spectrum: &BoundarySpectrum,
    clp: &ClpOptions,
    win: &WindowOptions,
) -> std::result::Result<(Vec<ClpCurve>, RegularityReport), PipelineError> {
    let taus = tau_grid(spectrum, clp);
    let curves = clp_all(spectrum, &taus, clp).at(Stage::Clp)?;
    let window: TauWindow = select_tau_window(&curves, win).at(Stage::Window)?;
    let report = fit_regularity(&curves, &window).at(Stage::Window)?;
    Ok((curves, report))
}

pub fn scaling_analysis(spec: &MapSpec, cfg: &ScalingConfig) -> Result<ScalingResult> {
    let convs = convergents_up_to(&spec.rot, cfg.q_max);
    scaling_exponent_auto(spec, &convs, &cfg.escalation())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub level: u32,
    pub iterations: u64,
    pub prec_bits: u32,
    pub orbit_digest: String,
    pub orientation_flipped: bool,
    pub max_gap: f64,
    pub peaks: Vec<u64>,
    pub mean_peak_spacing: Option<f64>,
    /// `|log10 σ|`, the spacing the peaks should have.
    pub expected_peak_spacing: f64,
    pub beta_min_distance: Option<f64>,
    pub orbit_warnings: Vec<String>,
}

/// Everything a run produces; written as `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: String,
    pub map: String,
    pub rot: String,
    pub sigma: f64,
    pub boundary_order: u32,
    pub critical_point: Complex64,
    pub spectrum: Option<SpectrumSummary>,
    pub regularity: Option<RegularityReport>,
    pub scaling: Option<ScalingResult>,
    pub kappa_max: Option<f64>,
    /// `|κ − κ_max| / κ_max`
    pub saturation: Option<f64>,
    pub geometry: Option<GeometryReport>,
    pub phases: Option<PhaseReport>,
    pub config: RunConfig,
}

/// File names inside the output directory.
pub mod files {
    pub const REPORT: &str = "report.json";
    pub const SPECTRUM: &str = "spectrum.csv";
    pub const SPECTRUM_TABLE: &str = "spectrum_table.csv";
    pub const CURVES: &str = "curves.csv";
    pub const REGULARITY: &str = "regularity.json";
    pub const SCALING: &str = "scaling.json";
    pub const GEOMETRY: &str = "geometry.json";
    pub const PARTIAL_SUMS: &str = "partial_sums.csv";
    pub const PHASES: &str = "phases.csv";
    pub const HISTOGRAM: &str = "histogram.csv";
    pub const QQ: &str = "qq.csv";
    pub const PHASE_REPORT: &str = "phases.json";
}

fn write_phase_files(dir: &Path, sample: &PhaseSample, report: &PhaseReport, rot: &RotationNumber) -> Result<()> {
    output::write_histogram(&dir.join(files::HISTOGRAM), &report.histogram)?;
    output::write_qq(&dir.join(files::QQ), &report.ks)?;
    output::write_json(&dir.join(files::PHASE_REPORT), report)?;
    let inv = -rot.value_f64().ln();
    let mut w = csv::Writer::from_path(dir.join(files::PHASES))?;
    w.write_record(["k", "window", "phase"])?;
    for (i, p) in sample.phases.iter().enumerate() {
        let k = sample.k_lo + i as u64;
        let j = ((k as f64).ln() / inv).floor() as u64;
        w.write_record([k.to_string(), j.to_string(), p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Runs every requested stage. Outputs of finished stages stay on disk when
/// a later stage fails.
pub fn run_pipeline(cfg: &RunConfig) -> std::result::Result<RunReport, PipelineError> {
    let spec = cfg.validate().at(Stage::Config)?;
    let dir = cfg.out_dir.as_path();
    std::fs::create_dir_all(dir).map_err(Error::from).at(Stage::Config)?;
    let exec = cfg.exec();
    let cp = boundary_critical_point(&spec, cfg.prec_bits);
    let mut report = RunReport {
        schema: REPORT_SCHEMA.into(),
        map: spec.kind.to_string(),
        rot: spec.rot.to_string(),
        sigma: spec.rot.value_f64(),
        boundary_order: spec.boundary_order(),
        critical_point: cp.location.to_c64(),
        spectrum: None,
        regularity: None,
        scaling: None,
        kappa_max: None,
        saturation: None,
        geometry: None,
        phases: None,
        config: cfg.clone(),
    };

    let mut spectrum = None;
    if cfg.stages.needs_spectrum() {
        let n = cfg.orbit_length();
        let (orbit, source) = obtain_orbit(&spec, n, cfg.prec_bits, cfg.cache_dir().as_deref()).at(Stage::Orbit)?;
        log::info!("orbit {source:?}: {} iterations", orbit.iterations());
        let sp = spectrum_from_orbit(&orbit, cfg.level, cfg.scheme, exec).at(Stage::Interpolation)?;
        let rep = spectrum_report(&sp);
        let mut meta = SpectrumMeta::new(&sp, &report.map, &report.rot);
        meta.iterations = Some(orbit.iterations());
        meta.prec_bits = Some(orbit.prec_bits());
        output::write_spectrum(&dir.join(files::SPECTRUM), &sp, &meta).at(Stage::Output)?;
        output::write_spectrum_table(&dir.join(files::SPECTRUM_TABLE), &rep).at(Stage::Output)?;
        report.spectrum = Some(SpectrumSummary {
            level: sp.level,
            iterations: orbit.iterations(),
            prec_bits: orbit.prec_bits(),
            orbit_digest: orbit.digest().to_string(),
            orientation_flipped: sp.orientation_flipped,
            max_gap: sp.grid.max_gap,
            peaks: rep.peaks,
            mean_peak_spacing: rep.mean_peak_spacing,
            expected_peak_spacing: tail_scale(&spec.rot).log10().abs(),
            beta_min_distance: orbit.diagnostics().beta_min_distance,
            orbit_warnings: orbit.diagnostics().warnings.clone(),
        });
        spectrum = Some(sp);
    }

    if cfg.stages.regularity {
        let sp = spectrum.as_ref().expect("spectrum computed");
        let (curves, reg) = regularity_analysis(sp, &cfg.clp_options(), &cfg.window_options(&spec.rot))?;
        output::write_curves(&dir.join(files::CURVES), &curves).at(Stage::Output)?;
        output::write_json(&dir.join(files::REGULARITY), &reg).at(Stage::Output)?;
        report.regularity = Some(reg);
    }

    if cfg.stages.scaling {
        let sc = scaling_analysis(&spec, &cfg.scaling).at(Stage::Scaling)?;
        output::write_json(&dir.join(files::SCALING), &sc).at(Stage::Output)?;
        report.kappa_max = Some(kappa_max(sc.best(), &spec.rot));
        report.scaling = Some(sc);
    }
    if let (Some(k), Some(reg)) = (report.kappa_max, &report.regularity) {
        report.saturation = Some((reg.kappa - k).abs() / k);
    }

    if cfg.stages.geometry {
        let sp = spectrum.as_ref().expect("spectrum computed");
        let convs = convergents_up_to(&spec.rot, sp.k_max() as u64);
        let alpha = report.scaling.as_ref().map(|s| s.best());
        let geo = geometry_report(sp, &spec, &convs, alpha);
        if !(geo.area.area.is_finite() && geo.area.area > 0.0) {
            return Err(PipelineError {
                stage: Stage::Geometry,
                source: Error::InsufficientData(format!("area {} is not positive", geo.area.area)),
            });
        }
        output::write_partial_sums(&dir.join(files::PARTIAL_SUMS), &geo.area).at(Stage::Output)?;
        output::write_json(&dir.join(files::GEOMETRY), &geo).at(Stage::Output)?;
        report.geometry = Some(geo);
    }

    if cfg.stages.phases {
        let sp = spectrum.as_ref().expect("spectrum computed");
        let windows = cfg.phase_windows.map(|[a, b]| (a, b));
        let (sample, ph) = phase_analysis(sp, &spec.rot, windows, cfg.phase_bins).at(Stage::Phases)?;
        write_phase_files(dir, &sample, &ph, &spec.rot).at(Stage::Output)?;
        report.phases = Some(ph);
    }

    output::write_json(&dir.join(files::REPORT), &report).at(Stage::Output)?;
    Ok(report)
}

/// Quantity tabulated by a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quantity {
    Kappa,
    Alpha,
    Area,
    KappaMax,
}

impl FromStr for Quantity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kappa" => Ok(Quantity::Kappa),
            "alpha" => Ok(Quantity::Alpha),
            "area" => Ok(Quantity::Area),
            "kappa-max" => Ok(Quantity::KappaMax),
            _ => Err(Error::Config(format!("unknown quantity {s:?}; use kappa, alpha, area or kappa-max"))),
        }
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Quantity::Kappa => "kappa",
            Quantity::Alpha => "alpha",
            Quantity::Area => "area",
            Quantity::KappaMax => "kappa-max",
        })
    }
}

/// Reference values: rows are critical orders `d`, columns are
/// `σ = ⟨k^∞⟩` for `k = 1..=5`.
pub mod reference {
    pub type Row = (u32, [f64; 5]);

    pub const KAPPA: &[Row] = &[
        (1, [0.621, 0.617, 0.607, 0.596, 0.578]),
        (2, [0.432, 0.427, 0.417, 0.404, 0.388]),
        (3, [0.328, 0.324, 0.313, 0.300, 0.291]),
        (4, [0.263, 0.260, 0.252, 0.244, 0.232]),
        (5, [0.220, 0.217, 0.210, 0.203, 0.193]),
        (6, [0.189, 0.186, 0.180, 0.174, 0.163]),
        (10, [0.121, 0.120, 0.115, 0.111, 0.105]),
        (15, [0.084, 0.082, 0.079, 0.077, 0.074]),
        (20, [0.064, 0.063, 0.061, 0.058, 0.055]),
    ];

    pub const ALPHA: &[Row] = &[
        (1, [0.74193223170, 0.5811130545, 0.484541021, 0.424632459, 0.385769294]),
        (2, [0.81215810740, 0.686013947, 0.607281233, 0.55822367, 0.5268809]),
        (3, [0.853450202, 0.7508249, 0.6852424, 0.6441419, 0.6179964]),
        (4, [0.88014575, 0.793968, 0.738015, 0.7027580, 0.680345]),
        (5, [0.8987131, 0.824557, 0.775859, 0.7450319, 0.725425]),
        (6, [0.912340, 0.847314, 0.804246, 0.7768796, 0.759458]),
        (10, [0.943087, 0.89962, 0.87026, 0.851416, 0.839375]),
        (15, [0.960463, 0.92977, 0.90881, 0.895266, 0.88658]),
        (20, [0.969717, 0.94601, 0.92971, 0.919149, 0.91236]),
        (40, [0.984450, 0.97211, 0.96356, 0.9579, 0.9544]),
        (60, [0.989504, 0.981138, 0.975314, 0.97151, 0.96906]),
        (80, [0.9920788, 0.98575, 0.981334, 0.97845, 0.97658]),
        (100, [0.993638, 0.98854, 0.98499, 0.98267, 0.98116]),
        (200, [0.996793, 0.99422, 0.99242, 0.991241, 0.99048]),
        (300, [0.997857, 0.99613, 0.99493, 0.994140, 0.99363]),
    ];

    /// For `f_{d, ⟨k^∞⟩, 1+3i}`.
    pub const AREA: &[Row] = &[
        (1, [1.3603361, 1.3586530, 1.3611085, 1.3652030, 1.3693337]),
        (2, [0.895659, 0.893442, 0.893605, 0.89408, 0.89367]),
        (3, [0.65986, 0.65766, 0.65664, 0.6553, 0.65308]),
        (4, [0.5190, 0.5170, 0.51550, 0.5133, 0.5104]),
        (5, [0.4262, 0.4244, 0.4226, 0.4200, 0.4170]),
        (6, [0.3607, 0.3591, 0.3573, 0.354, 0.3515]),
        (10, [0.2214, 0.2203, 0.2187, 0.2163, 0.2137]),
        (15, [0.148, 0.147, 0.146, 0.144, 0.1421]),
        (20, [0.111, 0.110, 0.109, 0.107, 0.106]),
    ];

    pub const KAPPA_MAX: &[Row] = &[
        (1, [0.6203, 0.6159, 0.6064, 0.5933, 0.5783]),
        (2, [0.4324, 0.4276, 0.4175, 0.4039, 0.3890]),
        (3, [0.3293, 0.3252, 0.3164, 0.3047, 0.2922]),
        (4, [0.2653, 0.2618, 0.2543, 0.2443, 0.2338]),
        (5, [0.2219, 0.2189, 0.2124, 0.2039, 0.1949]),
        (6, [0.1906, 0.1880, 0.1823, 0.1749, 0.1670]),
        (10, [0.1218, 0.1200, 0.1163, 0.1114, 0.1063]),
        (15, [0.0838, 0.0826, 0.0800, 0.0766, 0.0731]),
        (20, [0.0639, 0.0630, 0.0610, 0.0584, 0.0557]),
    ];

    pub fn table(q: super::Quantity) -> &'static [Row] {
        match q {
            super::Quantity::Kappa => KAPPA,
            super::Quantity::Alpha => ALPHA,
            super::Quantity::Area => AREA,
            super::Quantity::KappaMax => KAPPA_MAX,
        }
    }

    /// Value for order `d` and `⟨k^∞⟩`, if tabulated.
    pub fn lookup(q: super::Quantity, d: u32, k: u32) -> Option<f64> {
        let col = (k as usize).checked_sub(1).filter(|&c| c < 5)?;
        table(q).iter().find(|r| r.0 == d).map(|r| r.1[col])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub quantity: Quantity,
    pub cells: Vec<(u32, u32)>,
    /// Map text with `{d}` standing for the critical order.
    pub template: String,
    /// Settings shared by all cells; `map`, `rot`, `stages` and `out_dir`
    /// are overwritten per cell.
    pub base: RunConfig,
    pub jobs: usize,
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub d: u32,
    pub k: u32,
    pub map: String,
    pub rot: String,
    pub value: Option<f64>,
    pub reference: Option<f64>,
    pub delta: Option<f64>,
    pub loaded: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub schema: String,
    pub quantity: Quantity,
    pub cells: Vec<SweepCell>,
}

/// `(d, k)` grid in row-major order.
pub fn cells(ds: &[u32], ks: &[u32]) -> Vec<(u32, u32)> {
    ds.iter().flat_map(|&d| ks.iter().map(move |&k| (d, k))).collect()
}

pub fn cell_config(sweep: &SweepConfig, d: u32, k: u32) -> RunConfig {
    let mut cfg = sweep.base.clone();
    cfg.map = sweep.template.replace("{d}", &d.to_string());
    cfg.rot = format!(":{k}");
    cfg.out_dir = sweep.out_dir.join(format!("d{d}-k{k}"));
    cfg.stages = match sweep.quantity {
        Quantity::Kappa => Stages { spectrum: true, regularity: true, scaling: false, geometry: false, phases: false },
        Quantity::Alpha | Quantity::KappaMax => {
            Stages { spectrum: false, regularity: false, scaling: true, geometry: false, phases: false }
        }
        Quantity::Area => Stages { spectrum: true, regularity: false, scaling: false, geometry: true, phases: false },
    };
    cfg
}

fn extract(q: Quantity, r: &RunReport) -> Option<f64> {
    match q {
        Quantity::Kappa => r.regularity.as_ref().map(|x| x.kappa),
        Quantity::Alpha => r.scaling.as_ref().map(|s| s.best()),
        Quantity::KappaMax => r.kappa_max,
        Quantity::Area => r.geometry.as_ref().map(|g| g.area.area),
    }
}

fn run_cell(sweep: &SweepConfig, d: u32, k: u32) -> SweepCell {
    let cfg = cell_config(sweep, d, k);
    let reference = reference::lookup(sweep.quantity, d, k);
    let mut cell = SweepCell {
        d,
        k,
        map: cfg.map.clone(),
        rot: cfg.rot.clone(),
        value: None,
        reference,
        delta: None,
        loaded: false,
        error: None,
    };
    let previous: Option<RunReport> = output::read_json(&cfg.out_dir.join(files::REPORT)).ok();
    let result = match previous {
        Some(r) if r.config == cfg => {
            cell.loaded = true;
            Ok(r)
        }
        _ => run_pipeline(&cfg),
    };
    match result {
        Ok(r) => {
            cell.value = extract(sweep.quantity, &r);
            cell.delta = cell.value.zip(reference).map(|(v, r)| v - r);
        }
        Err(e) => {
            log::warn!("cell d={d} k={k}: {e}");
            cell.error = Some(e.to_string());
        }
    }
    cell
}

/// Runs (or reloads) every cell on a pool of `jobs` workers. Failed cells
/// are recorded and the sweep continues.
pub fn table_sweep(sweep: &SweepConfig) -> SweepTable {
    let n = sweep.cells.len();
    let slots: Mutex<Vec<Option<SweepCell>>> = Mutex::new(vec![None; n]);
    let next = AtomicUsize::new(0);
    let workers = sweep.jobs.clamp(1, n.max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let (d, k) = sweep.cells[i];
                let cell = run_cell(sweep, d, k);
                slots.lock().expect("sweep slots")[i] = Some(cell);
            });
        }
    });
    let cells = slots.into_inner().expect("sweep slots").into_iter().map(|c| c.expect("cell ran")).collect();
    SweepTable { schema: SWEEP_SCHEMA.into(), quantity: sweep.quantity, cells }
}

/// Long table: one row per cell with reference value and delta.
pub fn write_sweep_csv(path: &Path, table: &SweepTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["d", "k", "map", "rot", "value", "reference", "delta", "error"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for c in &table.cells {
        w.write_record([
            c.d.to_string(),
            c.k.to_string(),
            c.map.clone(),
            c.rot.clone(),
            opt(c.value),
            opt(c.reference),
            opt(c.delta),
            c.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Wide table shaped like the reference: one row per `d`, one column per `k`.
pub fn write_sweep_grid(path: &Path, table: &SweepTable) -> Result<()> {
    let mut ds: Vec<u32> = table.cells.iter().map(|c| c.d).collect();
    let mut ks: Vec<u32> = table.cells.iter().map(|c| c.k).collect();
    ds.sort_unstable();
    ds.dedup();
    ks.sort_unstable();
    ks.dedup();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["d".to_string()];
    for k in &ks {
        header.push(format!("k{k}"));
        header.push(format!("k{k}_reference"));
    }
    w.write_record(&header)?;
    for d in &ds {
        let mut row = vec![d.to_string()];
        for k in &ks {
            let c = table.cells.iter().find(|c| c.d == *d && c.k == *k);
            row.push(c.and_then(|c| c.value).map(|v| v.to_string()).unwrap_or_default());
            row.push(c.and_then(|c| c.reference).map(|v| v.to_string()).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
