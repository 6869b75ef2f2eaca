//! The two map families: `f(z) = a z + z²` and
//! `f(z) = (a/β)[g_{m+1}(z) − (1−β) g_m(z)]` with
//! `g_m(z) = (1 − (1−z)^{m+1}) / (m+1)` and `a = e^{2πiσ}`.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rug::Float;

use crate::cfrac::RotationNumber;
use crate::error::{Error, Result};
use crate::mp::{MpComplex, MulScratch, PowScratch};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    Quadratic,
    Fmb,
}

/// Map family and parameters, without a rotation number.
#[derive(Clone, Debug, PartialEq)]
pub enum MapKind {
    Quadratic,
    Fmb { m: u32, beta: Complex64 },
}

impl MapKind {
    pub fn family(&self) -> Family {
        match self {
            MapKind::Quadratic => Family::Quadratic,
            MapKind::Fmb { .. } => Family::Fmb,
        }
    }
}

impl fmt::Display for MapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MapKind::Quadratic => f.write_str("quad"),
            MapKind::Fmb { m, beta } => {
                let sign = if beta.im.is_sign_negative() { '-' } else { '+' };
                write!(f, "fmb:m={m}:beta={}{sign}{}i", beta.re, beta.im.abs())
            }
        }
    }
}

impl FromStr for MapKind {
    type Err = Error;

    /// `"quad"` or `"fmb:m=<int>:beta=<re>+<im>i"`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "quad" {
            return Ok(MapKind::Quadratic);
        }
        let rest = s
            .strip_prefix("fmb:")
            .ok_or_else(|| Error::InvalidMap(format!("unknown map {s:?}")))?;
        let mut m = None;
        let mut beta = None;
        for part in rest.split(':') {
            let (key, val) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidMap(format!("expected key=value, got {part:?}")))?;
            match key.trim() {
                "m" => {
                    m = Some(val.trim().parse::<u32>().map_err(|e| {
                        Error::InvalidMap(format!("bad order parameter {val:?}: {e}"))
                    })?)
                }
                "beta" => beta = Some(parse_complex(val)?),
                other => return Err(Error::InvalidMap(format!("unknown key {other:?}"))),
            }
        }
        let m = m.ok_or_else(|| Error::InvalidMap("missing m".into()))?;
        let beta = beta.ok_or_else(|| Error::InvalidMap("missing beta".into()))?;
        Ok(MapKind::Fmb { m, beta })
    }
}

/// Parses `a+bi`, `a-bi`, `a`, `bi`.
pub fn parse_complex(s: &str) -> Result<Complex64> {
    let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    let bad = || Error::InvalidMap(format!("bad complex number {s:?}"));
    let num = |t: &str| t.parse::<f64>().map_err(|_| bad());
    let Some(body) = s.strip_suffix('i') else {
        return Ok(Complex64::new(num(&s)?, 0.0));
    };
    // Split at the last sign that is not the leading one or part of an exponent.
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&i| (bytes[i] == b'+' || bytes[i] == b'-') && !matches!(bytes[i - 1], b'e' | b'E'));
    let (re, im) = match split {
        Some(i) => (num(&body[..i])?, &body[i..]),
        None => (0.0, body),
    };
    let im = match im {
        "" | "+" => 1.0,
        "-" => -1.0,
        t => num(t)?,
    };
    Ok(Complex64::new(re, im))
}

/// One member of the studied families.
#[derive(Clone, Debug, PartialEq)]
pub struct MapSpec {
    pub kind: MapKind,
    pub rot: RotationNumber,
}

impl MapSpec {
    pub fn new(kind: MapKind, rot: RotationNumber) -> Result<Self> {
        if let MapKind::Fmb { beta, .. } = &kind {
            if *beta == Complex64::new(0.0, 0.0) {
                return Err(Error::InvalidMap("beta = 0 is not allowed".into()));
            }
            if !beta.re.is_finite() || !beta.im.is_finite() {
                return Err(Error::InvalidMap("beta must be finite".into()));
            }
        }
        Ok(Self { kind, rot })
    }

    pub fn quadratic(rot: RotationNumber) -> Self {
        Self { kind: MapKind::Quadratic, rot }
    }

    pub fn fmb(m: u32, beta: Complex64, rot: RotationNumber) -> Result<Self> {
        Self::new(MapKind::Fmb { m, beta }, rot)
    }

    pub fn family(&self) -> Family {
        self.kind.family()
    }

    /// `a = e^{2πiσ}` at `prec` bits.
    pub fn multiplier(&self, prec: u32) -> MpComplex {
        MpComplex::unit_turn(prec, &self.rot.value(prec + 32))
    }

    /// Order `d` of the critical point on the disk boundary.
    pub fn boundary_order(&self) -> u32 {
        match self.kind {
            MapKind::Quadratic => 1,
            MapKind::Fmb { m, beta } if beta == Complex64::new(1.0, 0.0) => m + 1,
            MapKind::Fmb { m: 0, .. } => 1,
            MapKind::Fmb { m, .. } => m,
        }
    }

    /// Second critical point `β` when it is distinct from the boundary one.
    pub fn free_critical_point(&self) -> Option<Complex64> {
        match self.kind {
            MapKind::Fmb { m, beta } if m > 0 && beta != Complex64::new(1.0, 0.0) => Some(beta),
            _ => None,
        }
    }

    pub fn evaluator(&self, prec: u32) -> MapEvaluator {
        MapEvaluator::new(self, prec)
    }
}

impl fmt::Display for MapSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} @ {}", self.kind, self.rot)
    }
}

/// Precomputed constants for evaluating one map at a fixed precision.
#[derive(Debug)]
pub struct MapEvaluator {
    kind: MapKind,
    prec: u32,
    a: MpComplex,
    /// `a/β`
    a_over_beta: MpComplex,
    /// `1 − β`
    one_minus_beta: MpComplex,
    one: MpComplex,
    w: MpComplex,
    pw: MpComplex,
    t: MpComplex,
    mul: MulScratch,
    pow: PowScratch,
}

impl MapEvaluator {
    fn new(spec: &MapSpec, prec: u32) -> Self {
        let a = spec.multiplier(prec);
        let (a_over_beta, one_minus_beta) = match spec.kind {
            MapKind::Quadratic => (MpComplex::zero(prec), MpComplex::zero(prec)),
            MapKind::Fmb { beta, .. } => {
                let b = MpComplex::from_c64(prec, beta);
                let one = MpComplex::from_f64(prec, 1.0, 0.0);
                (a.div(&b), one.sub(&b))
            }
        };
        Self {
            kind: spec.kind.clone(),
            prec,
            a,
            a_over_beta,
            one_minus_beta,
            one: MpComplex::from_f64(prec, 1.0, 0.0),
            w: MpComplex::zero(prec),
            pw: MpComplex::zero(prec),
            t: MpComplex::zero(prec),
            mul: MulScratch::new(prec),
            pow: PowScratch::new(prec),
        }
    }

    pub fn prec(&self) -> u32 {
        self.prec
    }

    pub fn a(&self) -> &MpComplex {
        &self.a
    }

    /// `z ← f(z)` without allocating.
    pub fn step(&mut self, z: &mut MpComplex) {
        match self.kind {
            MapKind::Quadratic => {
                // a z + z² = z (z + a)
                self.t.set(z);
                self.t.add_assign(&self.a);
                self.mul.mul_assign(z, &self.t);
            }
            MapKind::Fmb { m, .. } => {
                // w = 1 − z; f = (a/β)[(1 − w^{m+2})/(m+2) − (1−β)(1 − w^{m+1})/(m+1)]
                self.w.set(&self.one);
                self.w.sub_assign(z);
                self.pow.powu_into(&mut self.pw, &self.w, m + 1);
                // t = (1 − w^{m+1}) / (m+1)
                self.t.set(&self.one);
                self.t.sub_assign(&self.pw);
                self.t.re /= m + 1;
                self.t.im /= m + 1;
                self.mul.mul_assign(&mut self.t, &self.one_minus_beta);
                // z = (1 − w^{m+2}) / (m+2)
                self.mul.mul_assign(&mut self.pw, &self.w);
                z.set(&self.one);
                z.sub_assign(&self.pw);
                z.re /= m + 2;
                z.im /= m + 2;
                z.sub_assign(&self.t);
                self.mul.mul_assign(z, &self.a_over_beta);
            }
        }
    }

    pub fn eval(&mut self, z: &MpComplex) -> MpComplex {
        let mut out = z.clone();
        self.step(&mut out);
        out
    }

    /// Closed-form derivative.
    pub fn derivative(&mut self, z: &MpComplex) -> MpComplex {
        match self.kind {
            MapKind::Quadratic => {
                let mut out = z.clone();
                out.re <<= 1;
                out.im <<= 1;
                out.add_assign(&self.a);
                out
            }
            MapKind::Fmb { m, beta } => {
                // a (1−z)^m (1 − z/β)
                let w = self.one.sub(z);
                let wm = w.powu(m);
                let b = MpComplex::from_c64(self.prec, beta);
                let lin = self.one.sub(&z.div(&b));
                self.a.mul(&wm).mul(&lin)
            }
        }
    }
}

/// `g_m(z) = (1 − (1−z)^{m+1}) / (m+1)`.
pub fn g_eval(m: u32, z: &MpComplex, prec: u32) -> MpComplex {
    let one = MpComplex::from_f64(prec, 1.0, 0.0);
    let mut zz = MpComplex::zero(prec);
    zz.set(z);
    let w = one.sub(&zz);
    let mut out = one.sub(&w.powu(m + 1));
    out.re /= m + 1;
    out.im /= m + 1;
    out
}

pub fn f_eval(spec: &MapSpec, z: &MpComplex, prec: u32) -> MpComplex {
    let mut zz = MpComplex::zero(prec);
    zz.set(z);
    spec.evaluator(prec).eval(&zz)
}

pub fn f_prime(spec: &MapSpec, z: &MpComplex, prec: u32) -> MpComplex {
    let mut zz = MpComplex::zero(prec);
    zz.set(z);
    spec.evaluator(prec).derivative(&zz)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriticalPoint {
    pub location: MpComplex,
    pub order: u32,
    /// The critical point lying on the Siegel disk boundary.
    pub on_boundary: bool,
}

/// Critical points with multiplicities; exactly one is flagged as the boundary point.
pub fn critical_points(spec: &MapSpec, prec: u32) -> Vec<CriticalPoint> {
    match spec.kind {
        MapKind::Quadratic => {
            let mut c = spec.multiplier(prec);
            c.neg_assign();
            c.re >>= 1;
            c.im >>= 1;
            vec![CriticalPoint { location: c, order: 1, on_boundary: true }]
        }
        MapKind::Fmb { m, beta } => {
            let one = MpComplex::from_f64(prec, 1.0, 0.0);
            if beta == Complex64::new(1.0, 0.0) {
                return vec![CriticalPoint { location: one, order: m + 1, on_boundary: true }];
            }
            let b = CriticalPoint {
                location: MpComplex::from_c64(prec, beta),
                order: 1,
                on_boundary: m == 0,
            };
            if m == 0 {
                vec![b]
            } else {
                vec![CriticalPoint { location: one, order: m, on_boundary: true }, b]
            }
        }
    }
}

/// The critical point whose orbit traces the disk boundary.
pub fn boundary_critical_point(spec: &MapSpec, prec: u32) -> CriticalPoint {
    critical_points(spec, prec)
        .into_iter()
        .find(|c| c.on_boundary)
        .expect("every map has a flagged boundary critical point")
}

/// Second Taylor coefficient `f_2 = f''(0)/2`.
pub fn taylor_coeff2(spec: &MapSpec, prec: u32) -> MpComplex {
    match spec.kind {
        MapKind::Quadratic => MpComplex::from_f64(prec, 1.0, 0.0),
        MapKind::Fmb { m, beta } => {
            // −a (1 + βm) / (2β)
            let a = spec.multiplier(prec);
            let b = MpComplex::from_c64(prec, beta);
            let mut num = b.clone();
            num.scale_assign(&Float::with_val(prec, m));
            num.re += 1;
            let mut den = b;
            den.re <<= 1;
            den.im <<= 1;
            let mut out = a.mul(&num).div(&den);
            out.neg_assign();
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: u32 = 256;

    fn golden() -> RotationNumber {
        ":1".parse().unwrap()
    }

    fn c(z: Complex64) -> MpComplex {
        MpComplex::from_c64(P, z)
    }

    fn near(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn parse_and_display() {
        assert_eq!("quad".parse::<MapKind>().unwrap(), MapKind::Quadratic);
        let k: MapKind = "fmb:m=1:beta=1+3i".parse().unwrap();
        assert_eq!(k, MapKind::Fmb { m: 1, beta: Complex64::new(1.0, 3.0) });
        assert_eq!(k.to_string(), "fmb:m=1:beta=1+3i");
        let k: MapKind = "fmb:m=0:beta=1".parse().unwrap();
        assert_eq!(k, MapKind::Fmb { m: 0, beta: Complex64::new(1.0, 0.0) });
        assert_eq!(k.to_string().parse::<MapKind>().unwrap(), k);
        let k: MapKind = "fmb:m=2:beta=-0.5-2.5e-1i".parse().unwrap();
        assert_eq!(k, MapKind::Fmb { m: 2, beta: Complex64::new(-0.5, -0.25) });
        assert!("cubic".parse::<MapKind>().is_err());
        assert!("fmb:m=1".parse::<MapKind>().is_err());
    }

    #[test]
    fn zero_beta_rejected() {
        assert!(MapSpec::fmb(1, Complex64::new(0.0, 0.0), golden()).is_err());
    }

    #[test]
    fn g_values() {
        let z = Complex64::new(0.3, -0.7);
        assert!(near(g_eval(0, &c(z), P).to_c64(), z, 1e-15));
        assert!(near(g_eval(1, &c(Complex64::new(1.0, 0.0)), P).to_c64(), Complex64::new(0.5, 0.0), 1e-16));
        assert!(near(g_eval(2, &c(Complex64::new(1.0, 0.0)), P).to_c64(), Complex64::new(1.0 / 3.0, 0.0), 1e-16));
    }

    #[test]
    fn f_values() {
        let spec = MapSpec::fmb(0, Complex64::new(1.0, 0.0), golden()).unwrap();
        let a = spec.multiplier(P).to_c64();
        let f1 = f_eval(&spec, &c(Complex64::new(1.0, 0.0)), P).to_c64();
        assert!(near(f1, a / 2.0, 1e-15));
        let z = Complex64::new(0.2, 0.4);
        assert!(near(f_eval(&spec, &c(z), P).to_c64(), a * (z - z * z / 2.0), 1e-15));

        for s in [
            MapSpec::quadratic(golden()),
            MapSpec::fmb(3, Complex64::new(1.0, 3.0), golden()).unwrap(),
        ] {
            assert!(f_eval(&s, &MpComplex::zero(P), P).is_zero());
        }

        let quad = MapSpec::quadratic(golden());
        let a = quad.multiplier(P).to_c64();
        let cp = boundary_critical_point(&quad, P).location;
        assert!(near(f_eval(&quad, &cp, P).to_c64(), -a * a / 4.0, 1e-15));
    }

    #[test]
    fn derivatives() {
        let spec = MapSpec::fmb(2, Complex64::new(1.0, 3.0), golden()).unwrap();
        let a = spec.multiplier(P).to_c64();
        assert!(near(f_prime(&spec, &MpComplex::zero(P), P).to_c64(), a, 1e-15));
        assert!(f_prime(&spec, &c(Complex64::new(1.0, 0.0)), P).is_zero());

        let quad = MapSpec::quadratic(golden());
        let cp = boundary_critical_point(&quad, P).location;
        assert!(f_prime(&quad, &cp, P).to_c64().norm() < 1e-70);
    }

    #[test]
    fn derivative_matches_central_difference() {
        let prec = 192u32;
        let h = 2f64.powi(-(prec as i32) / 3);
        let specs = [
            MapSpec::quadratic(golden()),
            MapSpec::fmb(1, Complex64::new(1.0, 3.0), golden()).unwrap(),
            MapSpec::fmb(5, Complex64::new(1.0, 0.0), ":2".parse().unwrap()).unwrap(),
        ];
        let points = [
            Complex64::new(0.1, 0.2),
            Complex64::new(-0.4, 0.3),
            Complex64::new(0.7, -0.6),
            Complex64::new(1.1, 0.05),
            Complex64::new(-0.2, -0.9),
            Complex64::new(0.5, 0.5),
            Complex64::new(0.9, 0.1),
            Complex64::new(-0.6, -0.1),
            Complex64::new(0.05, -0.35),
            Complex64::new(0.3, 0.8),
        ];
        for spec in &specs {
            let mut ev = spec.evaluator(prec);
            for &z in &points {
                let mut zp = MpComplex::from_c64(prec, z);
                let mut zm = zp.clone();
                zp.re += h;
                zm.re -= h;
                let (zp, zm) = (ev.eval(&zp), ev.eval(&zm));
                let mut diff = zp.sub(&zm);
                diff.re /= 2.0 * h;
                diff.im /= 2.0 * h;
                let exact = ev.derivative(&MpComplex::from_c64(prec, z)).to_c64();
                let err = (diff.to_c64() - exact).norm();
                assert!(err < 1e-30 * (1.0 + exact.norm()), "{spec}: err {err} at {z}");
            }
        }
    }

    #[test]
    fn critical_point_lists() {
        let beta = Complex64::new(1.0, 3.0);
        let cps = critical_points(&MapSpec::fmb(1, beta, golden()).unwrap(), P);
        let summary: Vec<(Complex64, u32, bool)> =
            cps.iter().map(|c| (c.location.to_c64(), c.order, c.on_boundary)).collect();
        assert_eq!(summary, vec![(Complex64::new(1.0, 0.0), 1, true), (beta, 1, false)]);

        let cps = critical_points(&MapSpec::fmb(0, Complex64::new(1.0, 0.0), golden()).unwrap(), P);
        assert_eq!(cps.len(), 1);
        assert_eq!((cps[0].location.to_c64(), cps[0].order), (Complex64::new(1.0, 0.0), 1));

        let spec = MapSpec::fmb(5, beta, golden()).unwrap();
        assert_eq!(boundary_critical_point(&spec, P).order, 5);
        assert_eq!(spec.boundary_order(), 5);
        assert_eq!(MapSpec::fmb(5, Complex64::new(1.0, 0.0), golden()).unwrap().boundary_order(), 6);
    }

    #[test]
    fn critical_orders_hold_numerically() {
        // |f(c+ε) − f(c)| = O(ε^{d+1}): slope of log|Δf| against log ε.
        let prec = 512;
        for spec in [
            MapSpec::quadratic(golden()),
            MapSpec::fmb(1, Complex64::new(1.0, 3.0), golden()).unwrap(),
            MapSpec::fmb(4, Complex64::new(1.0, 3.0), golden()).unwrap(),
            MapSpec::fmb(2, Complex64::new(1.0, 0.0), golden()).unwrap(),
        ] {
            let d = spec.boundary_order() as f64;
            let cp = boundary_critical_point(&spec, prec).location;
            let mut ev = spec.evaluator(prec);
            let fc = ev.eval(&cp);
            let sample = |k: i32, ev: &mut MapEvaluator| {
                let mut z = cp.clone();
                z.re += Float::with_val(prec, Float::i_exp(1, -k));
                let diff = ev.eval(&z).sub(&fc);
                diff.abs().to_f64().ln()
            };
            let (lo, hi) = (10, 20);
            let slope = (sample(hi, &mut ev) - sample(lo, &mut ev)) / (-(hi - lo) as f64 * 2f64.ln());
            assert!((slope - (d + 1.0)).abs() < 0.05, "{spec}: slope {slope}, d={d}");
        }
    }

    #[test]
    fn second_taylor_coefficient() {
        let quad = MapSpec::quadratic(golden());
        assert!(near(taylor_coeff2(&quad, P).to_c64(), Complex64::new(1.0, 0.0), 0.0));
        let s0 = MapSpec::fmb(0, Complex64::new(1.0, 0.0), golden()).unwrap();
        let a = s0.multiplier(P).to_c64();
        assert!(near(taylor_coeff2(&s0, P).to_c64(), -a / 2.0, 1e-16));
        let s1 = MapSpec::fmb(1, Complex64::new(1.0, 0.0), golden()).unwrap();
        assert!(near(taylor_coeff2(&s1, P).to_c64(), -a, 1e-16));

        // Against a second central difference of f at 0.
        let spec = MapSpec::fmb(3, Complex64::new(0.5, -2.0), ":3".parse().unwrap()).unwrap();
        let prec = 256;
        let h = 1e-20;
        let mut ev = spec.evaluator(prec);
        let fp = ev.eval(&MpComplex::from_f64(prec, h, 0.0));
        let fm = ev.eval(&MpComplex::from_f64(prec, -h, 0.0));
        let mut sum = fp.add(&fm);
        sum.re /= 2.0 * h * h;
        sum.im /= 2.0 * h * h;
        assert!(near(sum.to_c64(), taylor_coeff2(&spec, prec).to_c64(), 1e-12));
    }

    #[test]
    fn multiplier_is_unimodular() {
        let spec = MapSpec::quadratic(":3".parse().unwrap());
        let a = spec.multiplier(512);
        let err = Float::with_val(512, a.norm_sqr() - 1u32).abs();
        assert!(err < Float::with_val(64, Float::i_exp(1, -500)));
        assert!(f_prime(&spec, &MpComplex::zero(512), 512).sub(&a).is_zero());
    }
}
