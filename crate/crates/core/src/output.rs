//! On-disk formats for spectra, curves and reports.
//!
//! All doubles are written with Rust's shortest round-trip formatting, so a
//! CSV read back reproduces the exact bits. Reports, sweeps and spectrum
//! sidecars carry a `schema` field; see `docs/formats.md`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::boundary::{BoundarySpectrum, InterpScheme, SpectrumReport};
use crate::clp::ClpCurve;
use crate::error::{Error, Result};
use crate::geometry::AreaReport;
use crate::orbit::ClosestReturn;
use crate::phasestats::{Histogram, KsReport};

pub const SPECTRUM_SCHEMA: &str = "siegel.spectrum/1";

/// Sidecar describing a spectrum CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumMeta {
    pub schema: String,
    pub level: u32,
    pub map: String,
    pub rot: String,
    pub orientation_flipped: bool,
    pub orbit_digest: Option<String>,
    pub scheme: InterpScheme,
    pub iterations: Option<u64>,
    pub prec_bits: Option<u32>,
}

impl SpectrumMeta {
    pub fn new(spectrum: &BoundarySpectrum, map: &str, rot: &str) -> Self {
        Self {
            schema: SPECTRUM_SCHEMA.into(),
            level: spectrum.level,
            map: map.into(),
            rot: rot.into(),
            orientation_flipped: spectrum.orientation_flipped,
            orbit_digest: spectrum.orbit_digest.clone(),
            scheme: spectrum.scheme(),
            iterations: None,
            prec_bits: None,
        }
    }
}

/// `<path>.meta.json`
pub fn meta_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Writes via a temporary sibling and renames, so readers never see a
/// half-written file.
fn atomic_write<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        body(&mut w)?;
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    atomic_write(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?)
}

fn write_csv<F>(path: &Path, header: &[&str], rows: F) -> Result<()>
where
    F: FnOnce(&mut csv::Writer<&mut BufWriter<File>>) -> Result<()>,
{
    atomic_write(path, |w| {
        let mut cw = csv::Writer::from_writer(w);
        cw.write_record(header)?;
        rows(&mut cw)?;
        cw.flush()?;
        Ok(())
    })
}

/// Full complex spectrum, one row per signed frequency `k ∈ [−L/2, L/2)`,
/// plus the sidecar.
pub fn write_spectrum(path: &Path, spectrum: &BoundarySpectrum, meta: &SpectrumMeta) -> Result<()> {
    let half = (spectrum.len() / 2) as i64;
    write_csv(path, &["k", "re", "im"], |cw| {
        for k in -half..half {
            let c = spectrum.coeff(k);
            cw.write_record([k.to_string(), c.re.to_string(), c.im.to_string()])?;
        }
        Ok(())
    })?;
    write_json(&meta_path(path), meta)
}

/// Reads a spectrum written by [`write_spectrum`].
pub fn read_spectrum(path: &Path) -> Result<(BoundarySpectrum, SpectrumMeta)> {
    let meta: SpectrumMeta = read_json(&meta_path(path))?;
    if meta.schema != SPECTRUM_SCHEMA {
        return Err(Error::Format(format!("unsupported spectrum schema {:?}", meta.schema)));
    }
    if meta.level > 40 {
        return Err(Error::Format(format!("level {} out of range", meta.level)));
    }
    let len = 1usize << meta.level;
    let mut coeffs = vec![Complex64::new(f64::NAN, f64::NAN); len];
    let mut seen = 0usize;
    let mut rd = csv::Reader::from_path(path)?;
    for rec in rd.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).ok_or_else(|| Error::Format("short spectrum row".into()));
        let k: i64 = field(0)?.parse().map_err(|e| Error::Format(format!("bad k: {e}")))?;
        let re: f64 = field(1)?.parse().map_err(|e| Error::Format(format!("bad re: {e}")))?;
        let im: f64 = field(2)?.parse().map_err(|e| Error::Format(format!("bad im: {e}")))?;
        if k < -(len as i64) / 2 || k >= len as i64 / 2 {
            return Err(Error::Format(format!("frequency {k} outside the level-{} range", meta.level)));
        }
        coeffs[k.rem_euclid(len as i64) as usize] = Complex64::new(re, im);
        seen += 1;
    }
    if seen != len || coeffs.iter().any(|c| c.re.is_nan()) {
        return Err(Error::Format(format!("expected {len} spectrum rows, found {seen}")));
    }
    let mut spectrum = BoundarySpectrum::from_coeffs(meta.level, coeffs);
    spectrum.orientation_flipped = meta.orientation_flipped;
    spectrum.orbit_digest = meta.orbit_digest.clone();
    spectrum.grid.scheme = meta.scheme;
    Ok((spectrum, meta))
}

/// Gnuplot-ready log table of `|c_k|` and `|k c_k|`.
pub fn write_spectrum_table(path: &Path, report: &SpectrumReport) -> Result<()> {
    write_csv(path, &["k", "log10_k", "log10_abs_c", "log10_abs_kc"], |cw| {
        for r in &report.rows {
            cw.write_record([
                r.k.to_string(),
                r.log10_k.to_string(),
                r.log10_abs_c.to_string(),
                r.log10_abs_kc.to_string(),
            ])?;
        }
        Ok(())
    })
}

/// One column per curve, named `eta<η>_<re|im>`; values are `log10 N_η(τ)`.
pub fn write_curves(path: &Path, curves: &[ClpCurve]) -> Result<()> {
    let Some(first) = curves.first() else {
        return write_csv(path, &["log10_tau"], |_| Ok(()));
    };
    if curves.iter().any(|c| c.taus != first.taus) {
        return Err(Error::Format("curves must share one tau grid".into()));
    }
    let names: Vec<String> = curves.iter().map(|c| format!("eta{}_{}", c.eta, c.component)).collect();
    let mut header = vec!["log10_tau"];
    header.extend(names.iter().map(String::as_str));
    let logs: Vec<Vec<f64>> = curves.iter().map(|c| c.log10_norms()).collect();
    write_csv(path, &header, |cw| {
        for (i, t) in first.taus.iter().enumerate() {
            let mut row = vec![t.log10().to_string()];
            row.extend(logs.iter().map(|l| l[i].to_string()));
            cw.write_record(&row)?;
        }
        Ok(())
    })
}

pub fn write_partial_sums(path: &Path, area: &AreaReport) -> Result<()> {
    let accelerated = area.aitken.as_ref().and_then(|a| a.triangle.get(1));
    write_csv(path, &["m", "q", "sum", "aitken", "radius_weighted"], |cw| {
        for (i, p) in area.partial_sums.iter().enumerate() {
            // Row i of one Δ² pass uses inputs i..i+2; align it with its last input.
            let acc = i.checked_sub(2).and_then(|j| accelerated.and_then(|a| a.get(j)));
            cw.write_record([
                p.m.to_string(),
                p.q.to_string(),
                p.sum.to_string(),
                acc.map(f64::to_string).unwrap_or_default(),
                p.radius_weighted.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        Ok(())
    })
}

pub fn write_returns(path: &Path, returns: &[ClosestReturn]) -> Result<()> {
    write_csv(path, &["m", "q", "re", "im", "abs"], |cw| {
        for r in returns {
            cw.write_record([
                r.m.to_string(),
                r.q.to_string(),
                r.displacement.re.to_string(),
                r.displacement.im.to_string(),
                r.displacement.norm().to_string(),
            ])?;
        }
        Ok(())
    })
}

pub fn write_histogram(path: &Path, hist: &Histogram) -> Result<()> {
    write_csv(path, &["bin_center", "count"], |cw| {
        for (c, n) in hist.centers().iter().zip(&hist.counts) {
            cw.write_record([c.to_string(), n.to_string()])?;
        }
        Ok(())
    })
}

pub fn write_qq(path: &Path, ks: &KsReport) -> Result<()> {
    write_csv(path, &["theoretical", "empirical"], |cw| {
        for (t, e) in &ks.qq {
            cw.write_record([t.to_string(), e.to_string()])?;
        }
        Ok(())
    })
}
