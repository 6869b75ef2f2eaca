//! Exact text encodings: C99 hex-floats for `f64`, MPFR radix-16 strings
//! for multiprecision values.

use rug::Float;

use crate::error::{Error, Result};

/// `f64` as a C99 hex-float (`0x1.8p+1`, `-0x0p+0`, `inf`, `nan`).
pub fn format_f64(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    let sign = if x.is_sign_negative() { "-" } else { "" };
    if x.is_infinite() {
        return format!("{sign}inf");
    }
    let bits = x.to_bits();
    let exp_bits = ((bits >> 52) & 0x7ff) as i64;
    let mut mant = bits & ((1u64 << 52) - 1);
    if exp_bits == 0 && mant == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, exp) = if exp_bits == 0 { (0, -1022) } else { (1, exp_bits - 1023) };
    let mut digits = 13;
    while digits > 0 && mant & 0xf == 0 {
        mant >>= 4;
        digits -= 1;
    }
    if digits == 0 {
        format!("{sign}0x{lead}p{exp:+}")
    } else {
        format!("{sign}0x{lead}.{mant:0digits$x}p{exp:+}")
    }
}

pub fn parse_f64(s: &str) -> Result<f64> {
    let bad = || Error::Format(format!("bad hex-float {s:?}"));
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let value = match body {
        "inf" => f64::INFINITY,
        "nan" => f64::NAN,
        _ => {
            let body = body.strip_prefix("0x").ok_or_else(bad)?;
            let (mant, exp) = body.split_once('p').ok_or_else(bad)?;
            let exp: i32 = exp.parse().map_err(|_| bad())?;
            let (int, frac) = mant.split_once('.').unwrap_or((mant, ""));
            if frac.len() > 13 || int.len() != 1 {
                return Err(bad());
            }
            let lead = u64::from_str_radix(int, 16).map_err(|_| bad())?;
            let frac_bits = if frac.is_empty() {
                0
            } else {
                u64::from_str_radix(frac, 16).map_err(|_| bad())? << (4 * (13 - frac.len()))
            };
            match (lead, exp) {
                (0, _) if frac_bits == 0 => 0.0,
                (0, -1022) => f64::from_bits(frac_bits),
                (1, -1022..=1023) => f64::from_bits((((exp + 1023) as u64) << 52) | frac_bits),
                _ => return Err(bad()),
            }
        }
    };
    Ok(if neg { -value } else { value })
}

/// Exact radix-16 rendering of an MPFR float, `@`-separated binary exponent
/// in hex digits as MPFR prints it.
pub fn format_mp(x: &Float) -> String {
    x.to_string_radix(16, None)
}

pub fn parse_mp(s: &str, prec: u32) -> Result<Float> {
    let parsed = Float::parse_radix(s, 16).map_err(|e| Error::Format(format!("bad mp float {s:?}: {e}")))?;
    Ok(Float::with_val(prec, parsed))
}
