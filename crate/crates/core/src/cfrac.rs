//! Exact continued-fraction arithmetic for preperiodic rotation numbers.
//!
//! A rotation number is written `⟨A B^∞⟩`: a finite head `A` followed by the
//! period `B` repeated forever. Such numbers are quadratic irrationals; this
//! module keeps their defining integer quadratic and evaluates the selected
//! root at any requested precision.

use std::fmt;
use std::str::FromStr;

use rug::{Float, Integer};

use crate::error::{Error, Result};

/// Guard bits used when rounding a quadratic root to a requested precision.
const GUARD_BITS: u32 = 64;

/// A finite word of partial quotients, every entry at least 1.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct CfeWord(Vec<u32>);

impl CfeWord {
    pub fn new(entries: Vec<u32>) -> Result<Self> {
        if let Some(pos) = entries.iter().position(|&a| a == 0) {
            return Err(Error::InvalidCfe(format!(
                "partial quotient at position {pos} is 0; quotients must be >= 1"
            )));
        }
        Ok(Self(entries))
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn entries(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for CfeWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

/// Exact value `⟨b_1 … b_q⟩` as a reduced fraction `(P, Q)`.
///
/// Backward recurrence through the Möbius maps `x ↦ 1/(b + x)`; every step
/// has determinant ±1, so the result is already in lowest terms.
pub fn cfe_eval(word: &CfeWord) -> Result<(Integer, Integer)> {
    if word.is_empty() {
        return Err(Error::EmptyCfe);
    }
    let mut p = Integer::from(0);
    let mut q = Integer::from(1);
    for &b in word.entries().iter().rev() {
        // 1/(b + p/q) = q/(b q + p)
        let next_q = Integer::from(&q * b) + &p;
        p = std::mem::replace(&mut q, next_q);
    }
    Ok((p, q))
}

/// Integer 2x2 matrix acting as a Möbius map `x ↦ (a x + b)/(c x + d)`.
#[derive(Clone, Debug)]
struct Mobius {
    a: Integer,
    b: Integer,
    c: Integer,
    d: Integer,
}

impl Mobius {
    fn identity() -> Self {
        Self { a: 1.into(), b: 0.into(), c: 0.into(), d: 1.into() }
    }

    /// Composition `self ∘ F_q` with `F_q(x) = 1/(q + x)`, i.e. right-multiplying
    /// by `[[0, 1], [1, q]]`.
    fn then_quotient(&self, q: u32) -> Self {
        Self {
            a: self.b.clone(),
            b: Integer::from(&self.a + &self.b * q),
            c: self.d.clone(),
            d: Integer::from(&self.c + &self.d * q),
        }
    }

    fn of_word(word: &CfeWord) -> Self {
        word.entries().iter().fold(Self::identity(), |m, &q| m.then_quotient(q))
    }
}

/// Coefficients of `p x² + q x + r = 0`, reduced, with `p > 0`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Quadratic {
    pub p: Integer,
    pub q: Integer,
    pub r: Integer,
}

impl Quadratic {
    fn normalized(mut p: Integer, mut q: Integer, mut r: Integer) -> Self {
        let g = Integer::from(p.gcd_ref(&q)).gcd(&r);
        if g > 1 {
            p /= &g;
            q /= &g;
            r /= &g;
        }
        if p < 0 {
            p = -p;
            q = -q;
            r = -r;
        }
        Self { p, q, r }
    }

    pub fn discriminant(&self) -> Integer {
        Integer::from(self.q.square_ref()) - Integer::from(4) * &self.p * &self.r
    }

    /// Root `(-q + sign·√D) / (2p)` at `prec` bits.
    fn root(&self, sign: i8, prec: u32) -> Float {
        let work = prec + GUARD_BITS;
        let sqrt_d = Float::with_val(work, &self.discriminant()).sqrt();
        let num = if sign >= 0 {
            sqrt_d - &self.q
        } else {
            -sqrt_d - &self.q
        };
        let den = Float::with_val(work, Integer::from(&self.p * 2));
        Float::with_val(prec, num / den)
    }

    fn eval(&self, x: &Float) -> Float {
        let prec = x.prec();
        let mut acc = Float::with_val(prec, &self.p);
        acc *= x;
        acc += &self.q;
        acc *= x;
        acc += &self.r;
        acc
    }
}

/// A preperiodic continued fraction `⟨head period^∞⟩` and its exact quadratic.
///
/// Construction canonicalizes the period to its least repeating block and
/// absorbs any head suffix that is a rotation of the period, so two numbers
/// have the same tail exactly when their periods are cyclic rotations.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RotationNumber {
    head: CfeWord,
    period: CfeWord,
    quadratic: Quadratic,
    /// Sign of the square root selecting the value among the two roots.
    root_sign: i8,
}

impl RotationNumber {
    pub fn head(&self) -> &CfeWord {
        &self.head
    }

    pub fn period(&self) -> &CfeWord {
        &self.period
    }

    pub fn quadratic(&self) -> &Quadratic {
        &self.quadratic
    }

    /// Value at `prec` bits, correctly rounded up to guard-bit accuracy.
    pub fn value(&self, prec: u32) -> Float {
        self.quadratic.root(self.root_sign, prec)
    }

    pub fn value_f64(&self) -> f64 {
        self.value(128).to_f64()
    }

    /// `σ · 2^128` rounded to nearest, as a fixed-point fraction of a turn.
    pub fn fixed_point_u128(&self) -> u128 {
        let mut scaled = self.value(256);
        scaled <<= 128;
        let int = scaled.to_integer().expect("finite rotation number");
        int.to_u128().expect("rotation number lies in (0,1)")
    }

    /// Gauss-map expansion of the numeric value: the first `count` quotients.
    pub fn expand_numeric(&self, count: usize, prec: u32) -> Vec<u32> {
        let mut x = self.value(prec);
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            if x.is_zero() {
                break;
            }
            x.recip_mut();
            let a = Float::with_val(prec, x.floor_ref());
            out.push(a.to_u32_saturating().unwrap_or(u32::MAX));
            x -= &a;
        }
        out
    }
}

/// Builds the rotation number `⟨head period^∞⟩`.
///
/// The purely periodic tail `y = ⟨B^∞⟩` solves `y = F_B(y)`; pulling that
/// quadratic back through the head's Möbius map gives the quadratic of the
/// full number. The correct root is chosen by comparing against a
/// high-precision evaluation of the head map at the tail root.
pub fn quadratic_value(head: &CfeWord, period: &CfeWord) -> Result<RotationNumber> {
    if period.is_empty() {
        return Err(Error::InvalidCfe("period must be nonempty".into()));
    }
    let (head, period) = canonicalize(head, period);

    // Tail: y = (A y + B)/(C y + D)  =>  C y² + (D − A) y − B = 0.
    let mb = Mobius::of_word(&period);
    let tail = Quadratic::normalized(
        mb.c.clone(),
        Integer::from(&mb.d - &mb.a),
        Integer::from(-&mb.b),
    );
    // The purely periodic value is the positive root; its conjugate is < −1.
    let tail_sign = 1i8;

    let mh = Mobius::of_word(&head);
    // σ = (E y + F)/(G y + H)  =>  y = (H σ − F)/(E − G σ) = u/v.
    let (e, f, g, h) = (&mh.a, &mh.b, &mh.c, &mh.d);
    let u1 = h.clone();
    let u0 = Integer::from(-f);
    let v1 = Integer::from(-g);
    let v0 = e.clone();
    // C u² + (D−A) u v − B v², where (C, D−A, −B) = tail coefficients.
    let (tc, tq, tr) = (&tail.p, &tail.q, &tail.r);
    let p = Integer::from(tc * Integer::from(u1.square_ref()))
        + Integer::from(tq * Integer::from(&u1 * &v1))
        + Integer::from(tr * Integer::from(v1.square_ref()));
    let q = Integer::from(tc * Integer::from(&u1 * &u0)) * 2
        + Integer::from(tq * (Integer::from(&u1 * &v0) + Integer::from(&u0 * &v1)))
        + Integer::from(tr * Integer::from(&v1 * &v0)) * 2;
    let r = Integer::from(tc * Integer::from(u0.square_ref()))
        + Integer::from(tq * Integer::from(&u0 * &v0))
        + Integer::from(tr * Integer::from(v0.square_ref()));
    let quadratic = Quadratic::normalized(p, q, r);

    let prec = 256;
    let y = tail.root(tail_sign, prec);
    debug_assert!(y > 0 && y < 1);
    let mut num = Float::with_val(prec, &y * e);
    num += f;
    let mut den = Float::with_val(prec, &y * g);
    den += h;
    let sigma = num / den;

    let plus = quadratic.root(1, prec);
    let minus = quadratic.root(-1, prec);
    let d_plus = Float::with_val(prec, &plus - &sigma).abs();
    let d_minus = Float::with_val(prec, &minus - &sigma).abs();
    let root_sign = if d_plus <= d_minus { 1 } else { -1 };

    let rot = RotationNumber { head, period, quadratic, root_sign };
    let v = rot.value(prec);
    if !(v > 0 && v < 1) {
        return Err(Error::InvalidCfe(format!("value {} outside (0,1)", v.to_f64())));
    }
    debug_assert!(rot.quadratic.eval(&v).abs() < 1e-60);
    Ok(rot)
}

/// Least repeating block of `period`, then head suffixes folded into the tail.
fn canonicalize(head: &CfeWord, period: &CfeWord) -> (CfeWord, CfeWord) {
    let p = period.entries();
    let n = p.len();
    let block = (1..=n)
        .find(|&len| n % len == 0 && (0..n).all(|i| p[i] == p[i % len]))
        .unwrap_or(n);
    let mut per: Vec<u32> = p[..block].to_vec();
    let mut hd: Vec<u32> = head.entries().to_vec();
    while let (Some(&h), Some(&last)) = (hd.last(), per.last()) {
        if h != last {
            break;
        }
        hd.pop();
        per.rotate_right(1);
    }
    (CfeWord(hd), CfeWord(per))
}

impl fmt::Display for RotationNumber {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.head, self.period)
    }
}

impl FromStr for RotationNumber {
    type Err = Error;

    /// Parses `"h1,h2,...:p1,p2,..."`; the head may be empty (`":1"`).
    fn from_str(s: &str) -> Result<Self> {
        let (h, p) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidCfe(format!("expected 'head:period', got {s:?}")))?;
        let parse = |part: &str| -> Result<CfeWord> {
            let part = part.trim();
            if part.is_empty() {
                return Ok(CfeWord::empty());
            }
            let entries = part
                .split(',')
                .map(|x| {
                    x.trim()
                        .parse::<u32>()
                        .map_err(|e| Error::InvalidCfe(format!("bad quotient {x:?}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            CfeWord::new(entries)
        };
        quadratic_value(&parse(h)?, &parse(p)?)
    }
}

/// `P_m / Q_m = ⟨A B^m⟩` in lowest terms.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Convergent {
    pub index: usize,
    pub p: Integer,
    pub q: Integer,
}

impl Convergent {
    /// Denominator as `u64`, or `None` once it exceeds the machine range.
    pub fn q_u64(&self) -> Option<u64> {
        self.q.to_u64()
    }
}

/// Convergents `⟨A B^m⟩` for `m_max + 1` consecutive values of `m`.
///
/// The first index is `m = 0` when the head is nonempty and `m = 1` for a
/// purely periodic number, since the empty word has no value.
pub fn convergents(rot: &RotationNumber, m_max: usize) -> Vec<Convergent> {
    let first = if rot.head.is_empty() { 1 } else { 0 };
    // Standard recurrence for [0; a_1, a_2, ...].
    let (mut p_prev, mut p) = (Integer::from(1), Integer::from(0));
    let (mut q_prev, mut q) = (Integer::from(0), Integer::from(1));
    let push = |a: u32, p: &mut Integer, p_prev: &mut Integer| {
        let next = Integer::from(&*p * a) + &*p_prev;
        *p_prev = std::mem::replace(p, next);
    };
    let mut out = Vec::with_capacity(m_max + 1);
    for &a in rot.head.entries() {
        push(a, &mut p, &mut p_prev);
        push(a, &mut q, &mut q_prev);
    }
    let mut m = 0;
    loop {
        if m >= first {
            out.push(Convergent { index: m, p: p.clone(), q: q.clone() });
            if out.len() > m_max {
                break;
            }
        }
        for &a in rot.period.entries() {
            push(a, &mut p, &mut p_prev);
            push(a, &mut q, &mut q_prev);
        }
        m += 1;
    }
    out
}

/// Convergents whose denominators do not exceed `q_max`.
pub fn convergents_up_to(rot: &RotationNumber, q_max: u64) -> Vec<Convergent> {
    let mut m_max = 8;
    loop {
        let all = convergents(rot, m_max);
        if all.last().is_some_and(|c| c.q > q_max) {
            return all.into_iter().take_while(|c| c.q <= q_max).collect();
        }
        m_max *= 2;
    }
}

/// Limit of `Q_m / Q_{m+1}`: the factor by which closest-return scales
/// shrink per period block. Equals `σ` for `⟨k^∞⟩` and depends only on the
/// tail.
pub fn tail_scale(rot: &RotationNumber) -> f64 {
    let c = convergents(rot, 64);
    let (a, b) = (&c[c.len() - 2].q, &c[c.len() - 1].q);
    (Float::with_val(128, a) / Float::with_val(128, b)).to_f64()
}

/// Same tail: periods equal up to a cyclic rotation (periods are canonical).
pub fn tails_equivalent(r1: &RotationNumber, r2: &RotationNumber) -> bool {
    let (a, b) = (r1.period.entries(), r2.period.entries());
    if a.len() != b.len() {
        return false;
    }
    (0..a.len()).any(|shift| (0..a.len()).all(|i| a[(i + shift) % a.len()] == b[i]))
}

/// `|Q σ − P|` at `prec` bits.
pub fn approximation_error(rot: &RotationNumber, c: &Convergent, prec: u32) -> Float {
    let mut x = rot.value(prec);
    x *= &c.q;
    x -= &c.p;
    x.abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tail_scale_depends_on_tail_only() {
        let golden: RotationNumber = ":1".parse().unwrap();
        assert!((tail_scale(&golden) - golden.value_f64()).abs() < 1e-15);
        let headed: RotationNumber = "5:1".parse().unwrap();
        assert!((tail_scale(&headed) - golden.value_f64()).abs() < 1e-15);
        let silver: RotationNumber = ":2".parse().unwrap();
        assert!((tail_scale(&silver) - silver.value_f64()).abs() < 1e-15);
        // ⟨(1,2)^∞⟩: Q grows by the product of the two shifted values per block.
        let two: RotationNumber = ":1,2".parse().unwrap();
        let shifted: RotationNumber = ":2,1".parse().unwrap();
        let expect = two.value_f64() * shifted.value_f64();
        assert!((tail_scale(&two) - expect).abs() < 1e-14);
    }

    fn word(v: &[u32]) -> CfeWord {
        CfeWord::new(v.to_vec()).unwrap()
    }

    fn rot(s: &str) -> RotationNumber {
        s.parse().unwrap()
    }

    #[test]
    fn eval_small_words() {
        assert_eq!(cfe_eval(&word(&[2])).unwrap(), (1.into(), 2.into()));
        assert_eq!(cfe_eval(&word(&[1, 1, 1])).unwrap(), (2.into(), 3.into()));
        assert!(matches!(cfe_eval(&CfeWord::empty()), Err(Error::EmptyCfe)));
    }

    #[test]
    fn zero_quotient_rejected() {
        assert!(CfeWord::new(vec![1, 0]).is_err());
        assert!("1,0:1".parse::<RotationNumber>().is_err());
        assert!("1:".parse::<RotationNumber>().is_err());
    }

    #[test]
    fn golden_mean_and_friends() {
        let golden = rot(":1");
        let expect = (5f64.sqrt() - 1.0) / 2.0;
        assert!((golden.value_f64() - expect).abs() < 1e-16);
        assert!((golden.value_f64() - 0.6180339887).abs() < 1e-10);

        let five = rot(":5");
        assert!((five.value_f64() - (29f64.sqrt() - 5.0) / 2.0).abs() < 1e-15);

        let five_one = rot("5:1");
        assert!((five_one.value_f64() - (9.0 - 5f64.sqrt()) / 38.0).abs() < 1e-16);
        // The conjugate (9+√5)/38 also lies in (0,1); root choice must not rely on the interval.
        let q = five_one.quadratic();
        assert_eq!((q.p.clone(), q.q.clone(), q.r.clone()), (19.into(), (-9).into(), 1.into()));
    }

    #[test]
    fn value_matches_quadratic_at_high_precision() {
        for s in [":1", ":2", ":3,7", "5:1", "2,3:1,2", "1:4,1,1"] {
            let r = rot(s);
            let x = r.value(2048);
            let res = r.quadratic().eval(&x).abs();
            assert!(res < Float::with_val(64, Float::i_exp(1, -2000)), "{s}: residual {res}");
        }
    }

    #[test]
    fn canonical_forms() {
        let r = rot("1,1:1");
        assert!(r.head().is_empty());
        assert_eq!(r.period().entries(), &[1]);

        let r = rot(":1,2,1,2");
        assert_eq!(r.period().entries(), &[1, 2]);

        // ⟨3 1 2 1 2 ...⟩ = ⟨3 (1 2)^∞⟩; ⟨2 (1 2)^∞⟩ folds to ⟨(2 1)^∞⟩.
        let r = rot("2:1,2");
        assert!(r.head().is_empty());
        assert_eq!(r.period().entries(), &[2, 1]);
        assert!((r.value_f64() - rot(":2,1").value_f64()).abs() < 1e-16);
    }

    #[test]
    fn convergent_sequences() {
        let qs: Vec<u64> = convergents(&rot(":1"), 4).iter().map(|c| c.q_u64().unwrap()).collect();
        assert_eq!(qs, vec![1, 2, 3, 5, 8]);

        let c = convergents(&rot(":1"), 4);
        assert_eq!(c[2].index, 3);
        assert_eq!((c[2].p.clone(), c[2].q.clone()), (2.into(), 3.into()));

        let pq: Vec<(u64, u64)> = convergents(&rot(":2"), 2)
            .iter()
            .map(|c| (c.p.to_u64().unwrap(), c.q_u64().unwrap()))
            .collect();
        assert_eq!(pq, vec![(1, 2), (2, 5), (5, 12)]);

        let c0 = &convergents(&rot("5:1"), 0)[0];
        assert_eq!((c0.index, c0.p.clone(), c0.q.clone()), (0, 1.into(), 5.into()));
    }

    #[test]
    fn convergents_match_backward_evaluation() {
        let r = rot("3,1:2,5");
        for c in convergents(&r, 6) {
            let mut w = r.head().entries().to_vec();
            for _ in 0..c.index {
                w.extend_from_slice(r.period().entries());
            }
            let (p, q) = cfe_eval(&word(&w)).unwrap();
            assert_eq!((p, q), (c.p.clone(), c.q.clone()));
            assert_eq!(Integer::from(c.p.gcd_ref(&c.q)), 1);
        }
    }

    #[test]
    fn big_convergents_do_not_wrap() {
        let c = convergents(&rot(":1"), 200);
        // Fibonacci numbers: Q_200 = F_201 has 42 digits.
        assert!(c[199].q.significant_bits() > 128);
        for w in c.windows(2) {
            assert!(w[1].q > w[0].q);
        }
    }

    #[test]
    fn convergents_up_to_bound() {
        let c = convergents_up_to(&rot(":1"), 100);
        assert_eq!(c.last().unwrap().q_u64(), Some(89));
    }

    #[test]
    fn tail_equivalence() {
        assert!(tails_equivalent(&rot(":1"), &rot("5:1")));
        assert!(!tails_equivalent(&rot(":1"), &rot(":2")));
        assert!(tails_equivalent(&rot(":1,2"), &rot(":2,1")));
        assert!(tails_equivalent(&rot(":1,2"), &rot("7:1,2,1,2")));
        assert!(!tails_equivalent(&rot(":1,2"), &rot(":1,3")));
    }

    #[test]
    fn display_round_trip() {
        for s in [":1", "5:1", "2,3:1,4"] {
            assert_eq!(rot(s).to_string(), s);
        }
    }

    #[test]
    fn fixed_point_is_accurate() {
        let r = rot(":1");
        let fp = r.fixed_point_u128();
        let approx = fp as f64 / 2f64.powi(128);
        assert!((approx - r.value_f64()).abs() < 1e-16);
    }
}
