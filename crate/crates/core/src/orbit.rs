//! Extended-precision orbit of the boundary critical point, closest returns
//! and the scaling exponent `α`.
//!
//! Iterates are computed at the requested MPFR precision and stored rounded
//! to `f64`; the full-precision state of the last iterate is kept as a
//! checkpoint so an orbit can be extended bit-for-bit later.

use num_complex::Complex64;
use rug::Float;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cfrac::{Convergent, RotationNumber};
use crate::error::{Error, Result};
use crate::geometry::aitken;
use crate::hexfloat;
use crate::maps::{boundary_critical_point, MapSpec};
use crate::mp::MpComplex;
use crate::stats::{linear_fit, LineFit};

/// Iterates with `|z|` above this are treated as escaped.
pub const ESCAPE_RADIUS: f64 = 1e6;
/// Default warning margin for the distance between the orbit and `β`.
pub const DEFAULT_BETA_MARGIN: f64 = 1e-3;
pub const DEFAULT_PREC_BITS: u32 = 512;

/// Hex digest identifying (map, rotation number, precision).
pub fn orbit_digest(spec: &MapSpec, prec_bits: u32) -> String {
    let mut h = Sha256::new();
    h.update(format!("map={};rot={};prec={}", spec.kind, spec.rot, prec_bits).as_bytes());
    hex::encode(h.finalize())
}

/// `frac(n σ)` as a 64-bit fixed-point fraction of a turn.
///
/// Uses `σ` scaled to 128 bits and exact modular integer multiplication, so
/// the error is below `n · 2^-129` regardless of `n`.
#[derive(Clone, Copy, Debug)]
pub struct AngleGenerator {
    sigma_fixed: u128,
}

impl AngleGenerator {
    pub fn new(rot: &RotationNumber) -> Self {
        Self { sigma_fixed: rot.fixed_point_u128() }
    }

    pub fn turns(&self, n: u64) -> u64 {
        ((n as u128).wrapping_mul(self.sigma_fixed) >> 64) as u64
    }

    pub fn sigma_turns(&self) -> u64 {
        (self.sigma_fixed >> 64) as u64
    }
}

pub fn turns_to_f64(t: u64) -> f64 {
    t as f64 * 2f64.powi(-64)
}

/// Full-precision state of the last computed iterate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub index: u64,
    pub prec_bits: u32,
    /// MPFR radix-16 strings, exact.
    pub re: String,
    pub im: String,
    pub digest: String,
}

impl Checkpoint {
    fn new(index: u64, z: &MpComplex, digest: &str) -> Self {
        Self {
            index,
            prec_bits: z.prec(),
            re: hexfloat::format_mp(&z.re),
            im: hexfloat::format_mp(&z.im),
            digest: digest.to_string(),
        }
    }

    pub fn state(&self) -> Result<MpComplex> {
        Ok(MpComplex {
            re: hexfloat::parse_mp(&self.re, self.prec_bits)?,
            im: hexfloat::parse_mp(&self.im, self.prec_bits)?,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OrbitDiagnostics {
    /// Minimum distance from the orbit to the free critical point `β`.
    pub beta_min_distance: Option<f64>,
    pub warnings: Vec<String>,
}

/// `values[n] = f^n(c)` for `n = 0..=N`, rounded to `f64`.
#[derive(Clone, Debug)]
pub struct OrbitStore {
    spec: MapSpec,
    prec_bits: u32,
    values: Vec<Complex64>,
    angles: Vec<u64>,
    checkpoint: Checkpoint,
    diagnostics: OrbitDiagnostics,
    beta_margin: f64,
}

impl OrbitStore {
    pub fn spec(&self) -> &MapSpec {
        &self.spec
    }

    pub fn prec_bits(&self) -> u32 {
        self.prec_bits
    }

    /// Number of iterations `N`; there are `N + 1` stored values.
    pub fn iterations(&self) -> u64 {
        self.values.len() as u64 - 1
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    /// `frac(nσ)` in 64-bit fixed point.
    pub fn angle_turns(&self) -> &[u64] {
        &self.angles
    }

    pub fn angle(&self, n: usize) -> f64 {
        turns_to_f64(self.angles[n])
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.checkpoint
    }

    pub fn diagnostics(&self) -> &OrbitDiagnostics {
        &self.diagnostics
    }

    pub fn digest(&self) -> &str {
        &self.checkpoint.digest
    }

    /// Reassembles a store from cached values; angles are recomputed.
    pub(crate) fn from_parts(
        spec: MapSpec,
        prec_bits: u32,
        values: Vec<Complex64>,
        checkpoint: Checkpoint,
    ) -> Result<Self> {
        if values.is_empty() || checkpoint.index + 1 != values.len() as u64 {
            return Err(Error::Format("checkpoint index does not match record count".into()));
        }
        let gen = AngleGenerator::new(&spec.rot);
        let angles = (0..values.len() as u64).map(|n| gen.turns(n)).collect();
        let mut store = Self {
            spec,
            prec_bits,
            values,
            angles,
            checkpoint,
            diagnostics: OrbitDiagnostics::default(),
            beta_margin: DEFAULT_BETA_MARGIN,
        };
        store.refresh_diagnostics();
        Ok(store)
    }

    /// Continues the orbit from its checkpoint up to `n_total` iterations.
    pub fn extend_to(&mut self, n_total: u64) -> Result<()> {
        let start = self.iterations();
        if n_total <= start {
            return Ok(());
        }
        let mut z = self.checkpoint.state()?;
        let mut ev = self.spec.evaluator(self.prec_bits);
        let gen = AngleGenerator::new(&self.spec.rot);
        self.values.reserve((n_total - start) as usize);
        self.angles.reserve((n_total - start) as usize);
        for n in start + 1..=n_total {
            ev.step(&mut z);
            let v = z.to_c64();
            if !(v.norm_sqr() <= ESCAPE_RADIUS * ESCAPE_RADIUS) {
                return Err(Error::OrbitEscaped { index: n, modulus: v.norm() });
            }
            self.values.push(v);
            self.angles.push(gen.turns(n));
        }
        self.checkpoint = Checkpoint::new(n_total, &z, &self.checkpoint.digest);
        self.refresh_diagnostics();
        Ok(())
    }

    fn refresh_diagnostics(&mut self) {
        let mut diag = OrbitDiagnostics::default();
        if let Some(beta) = self.spec.free_critical_point() {
            let d = self
                .values
                .iter()
                .map(|v| (v - beta).norm())
                .fold(f64::INFINITY, f64::min);
            diag.beta_min_distance = Some(d);
            if d < self.beta_margin {
                let msg = format!(
                    "orbit passes within {d:.3e} of the free critical point beta={beta}; \
                     beta may lie on the disk closure"
                );
                log::warn!("{msg}");
                diag.warnings.push(msg);
            }
        }
        self.diagnostics = diag;
    }
}

/// Iterates the boundary critical point `N` times at `prec_bits`.
pub fn iterate_critical(spec: &MapSpec, n: u64, prec_bits: u32) -> Result<OrbitStore> {
    iterate_critical_with_margin(spec, n, prec_bits, DEFAULT_BETA_MARGIN)
}

pub fn iterate_critical_with_margin(
    spec: &MapSpec,
    n: u64,
    prec_bits: u32,
    beta_margin: f64,
) -> Result<OrbitStore> {
    if n < 1 {
        return Err(Error::InsufficientData("need at least one iteration".into()));
    }
    if prec_bits < 64 {
        return Err(Error::InsufficientData(format!("precision {prec_bits} < 64 bits")));
    }
    let c = boundary_critical_point(spec, prec_bits).location;
    let digest = orbit_digest(spec, prec_bits);
    let mut store = OrbitStore {
        spec: spec.clone(),
        prec_bits,
        values: vec![c.to_c64()],
        angles: vec![0],
        checkpoint: Checkpoint::new(0, &c, &digest),
        diagnostics: OrbitDiagnostics::default(),
        beta_margin,
    };
    store.extend_to(n)?;
    Ok(store)
}

/// Displacement of the orbit from `c` at a convergent denominator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosestReturn {
    pub m: usize,
    pub q: u64,
    /// `f^{Q_m}(c) − c`
    pub displacement: Complex64,
}

fn check_monotone(returns: &[ClosestReturn]) -> Result<()> {
    for w in returns.windows(2) {
        if !(w[1].displacement.norm() < w[0].displacement.norm()) {
            return Err(Error::PrecisionExhausted { m: w[1].m });
        }
    }
    Ok(())
}

fn denominators(convergents: &[Convergent], limit: u64) -> Result<Vec<(usize, u64)>> {
    convergents
        .iter()
        .map(|c| match c.q_u64() {
            Some(q) if q <= limit => Ok((c.index, q)),
            _ => Err(Error::InsufficientData(format!(
                "Q_{} = {} exceeds the orbit length {limit}",
                c.index, c.q
            ))),
        })
        .collect()
}

/// Closest returns read from a stored orbit.
pub fn closest_returns(orbit: &OrbitStore, convergents: &[Convergent]) -> Result<Vec<ClosestReturn>> {
    let c = orbit.values[0];
    let out: Vec<ClosestReturn> = denominators(convergents, orbit.iterations())?
        .into_iter()
        .map(|(m, q)| ClosestReturn { m, q, displacement: orbit.values[q as usize] - c })
        .collect();
    check_monotone(&out)?;
    Ok(out)
}

/// Closest returns computed on the fly without storing the orbit; the
/// displacement is formed at full precision before rounding.
pub fn closest_returns_streaming(
    spec: &MapSpec,
    convergents: &[Convergent],
    prec_bits: u32,
) -> Result<Vec<ClosestReturn>> {
    let targets = denominators(convergents, u64::MAX)?;
    let Some(&(_, last)) = targets.last() else {
        return Ok(Vec::new());
    };
    let c = boundary_critical_point(spec, prec_bits).location;
    let mut z = c.clone();
    let mut ev = spec.evaluator(prec_bits);
    let mut out = Vec::with_capacity(targets.len());
    let mut next = targets.iter().peekable();
    let esc2 = Float::with_val(64, ESCAPE_RADIUS * ESCAPE_RADIUS);
    for n in 1..=last {
        ev.step(&mut z);
        if n & 0xfff == 0 && z.norm_sqr() > esc2 {
            return Err(Error::OrbitEscaped { index: n, modulus: z.to_c64().norm() });
        }
        while let Some(&&(m, q)) = next.peek() {
            if q != n {
                break;
            }
            out.push(ClosestReturn { m, q, displacement: z.sub(&c).to_c64() });
            next.next();
        }
    }
    check_monotone(&out)?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionAudit {
    pub prec_bits: u32,
    pub alpha_at_prec: f64,
    pub doubled_prec_bits: u32,
    pub alpha_at_doubled: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingResult {
    /// Indices `m` of the ratios: `ratios[i] = disp(m_{i+1}) / disp(m_i)`.
    pub ms: Vec<usize>,
    pub ratios: Vec<Complex64>,
    /// `|ratio|` at the largest `m`.
    pub alpha_modulus: f64,
    /// Aitken Δ² limit of the trailing `|ratio|` sequence.
    pub alpha_accelerated: Option<f64>,
    /// `|alpha_accelerated − alpha_modulus|`, or the last step change.
    pub error_proxy: f64,
    /// Argument of the last ratio; meaningful only for period length 1.
    pub alpha_arg: f64,
    pub arg_canonical: bool,
    pub m_used: usize,
    /// Log-linear fit of `|disp_m|` against `m`: slope `log|α|`, intercept `log C₂`.
    pub displacement_fit: Option<LineFit>,
    pub audit: Option<PrecisionAudit>,
}

impl ScalingResult {
    /// Accelerated value when available, else the last ratio modulus.
    pub fn best(&self) -> f64 {
        self.alpha_accelerated.unwrap_or(self.alpha_modulus)
    }
}

/// Scaling exponent from a list of closest returns.
pub fn scaling_from_returns(returns: &[ClosestReturn], period_len: usize) -> Result<ScalingResult> {
    if returns.len() < 6 {
        return Err(Error::InsufficientData(format!(
            "need at least 6 closest returns, have {}",
            returns.len()
        )));
    }
    let ratios: Vec<Complex64> =
        returns.windows(2).map(|w| w[1].displacement / w[0].displacement).collect();
    let moduli: Vec<f64> = ratios.iter().map(|r| r.norm()).collect();
    let last = *ratios.last().unwrap();
    let alpha_modulus = last.norm();

    let tail = &moduli[moduli.len().saturating_sub(6)..];
    let accelerated = aitken(tail).ok().map(|a| a.value).filter(|v| v.is_finite() && *v > 0.0 && *v < 1.0);
    let step = (moduli[moduli.len() - 1] - moduli[moduli.len() - 2]).abs();
    let error_proxy = match accelerated {
        Some(a) => (a - alpha_modulus).abs().max(f64::EPSILON),
        None => step,
    };

    let xs: Vec<f64> = returns.iter().map(|r| r.m as f64).collect();
    let ys: Vec<f64> = returns.iter().map(|r| r.displacement.norm().ln()).collect();
    let half = xs.len() / 2;
    let displacement_fit = linear_fit(&xs[half..], &ys[half..]).ok();

    Ok(ScalingResult {
        ms: returns.iter().skip(1).map(|r| r.m).collect(),
        ratios,
        alpha_modulus,
        alpha_accelerated: accelerated,
        error_proxy,
        alpha_arg: last.arg(),
        arg_canonical: period_len == 1,
        m_used: returns.last().unwrap().m,
        displacement_fit,
        audit: None,
    })
}

/// Scaling exponent from a stored orbit.
pub fn scaling_exponent(orbit: &OrbitStore, convergents: &[Convergent]) -> Result<ScalingResult> {
    let returns = closest_returns(orbit, convergents)?;
    scaling_from_returns(&returns, orbit.spec.rot.period().len())
}

#[derive(Clone, Debug)]
pub struct EscalationOptions {
    pub start_bits: u32,
    pub max_bits: u32,
    /// Relative agreement required between consecutive precisions.
    pub tolerance: f64,
}

impl Default for EscalationOptions {
    fn default() -> Self {
        Self { start_bits: DEFAULT_PREC_BITS, max_bits: 8192, tolerance: 1e-6 }
    }
}

/// Scaling exponent with a posteriori precision control: the precision is
/// doubled until two consecutive runs agree on the last ratio modulus.
pub fn scaling_exponent_auto(
    spec: &MapSpec,
    convergents: &[Convergent],
    opts: &EscalationOptions,
) -> Result<ScalingResult> {
    let period = spec.rot.period().len();
    let mut prec = opts.start_bits;
    let mut current = scaling_from_returns(&closest_returns_streaming(spec, convergents, prec)?, period)?;
    while prec * 2 <= opts.max_bits {
        let doubled =
            scaling_from_returns(&closest_returns_streaming(spec, convergents, prec * 2)?, period)?;
        let rel = (doubled.alpha_modulus - current.alpha_modulus).abs() / doubled.alpha_modulus;
        let audit = PrecisionAudit {
            prec_bits: prec,
            alpha_at_prec: current.alpha_modulus,
            doubled_prec_bits: prec * 2,
            alpha_at_doubled: doubled.alpha_modulus,
        };
        if rel <= opts.tolerance {
            current.audit = Some(audit);
            return Ok(current);
        }
        current = doubled;
        prec *= 2;
    }
    Err(Error::PrecisionNotConverged { max_bits: opts.max_bits })
}

/// Fits `1/(1 − |α|) = b + d/A` over `(d, |α|)` pairs and returns `A`.
pub fn fit_asymptotic_a(pairs: &[(u32, f64)]) -> Result<f64> {
    if pairs.len() < 3 {
        return Err(Error::InsufficientData(format!("need >= 3 pairs, have {}", pairs.len())));
    }
    let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
    let y: Vec<f64> = pairs.iter().map(|p| 1.0 / (1.0 - p.1)).collect();
    let fit = linear_fit(&x, &y)?;
    if fit.slope.abs() < f64::EPSILON {
        return Err(Error::SingularFit("zero slope".into()));
    }
    Ok(1.0 / fit.slope)
}
