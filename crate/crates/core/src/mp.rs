//! Multiprecision complex numbers on top of MPFR floats.
//!
//! Only the handful of operations the map evaluators need. Every value
//! carries its own precision; nothing here reads a global default.

use num_complex::Complex64;
use rug::ops::NegAssign;
use rug::{Assign, Float};

#[derive(Clone, Debug, PartialEq)]
pub struct MpComplex {
    pub re: Float,
    pub im: Float,
}

impl MpComplex {
    pub fn zero(prec: u32) -> Self {
        Self { re: Float::new(prec), im: Float::new(prec) }
    }

    pub fn from_f64(prec: u32, re: f64, im: f64) -> Self {
        Self { re: Float::with_val(prec, re), im: Float::with_val(prec, im) }
    }

    pub fn from_c64(prec: u32, z: Complex64) -> Self {
        Self::from_f64(prec, z.re, z.im)
    }

    pub fn real(x: Float) -> Self {
        let prec = x.prec();
        Self { re: x, im: Float::new(prec) }
    }

    /// `e^{2πi x}` for real `x` at `prec` bits.
    pub fn unit_turn(prec: u32, x: &Float) -> Self {
        let work = prec + 32;
        let mut angle = Float::with_val(work, rug::float::Constant::Pi);
        angle *= 2;
        angle *= x;
        let (s, c) = angle.sin_cos(Float::new(work));
        Self { re: Float::with_val(prec, c), im: Float::with_val(prec, s) }
    }

    pub fn prec(&self) -> u32 {
        self.re.prec()
    }

    pub fn to_c64(&self) -> Complex64 {
        Complex64::new(self.re.to_f64(), self.im.to_f64())
    }

    pub fn is_zero(&self) -> bool {
        self.re.is_zero() && self.im.is_zero()
    }

    pub fn norm_sqr(&self) -> Float {
        let mut out = Float::with_val(self.prec(), self.re.square_ref());
        out += Float::with_val(self.prec(), self.im.square_ref());
        out
    }

    pub fn abs(&self) -> Float {
        self.norm_sqr().sqrt()
    }

    pub fn set(&mut self, other: &MpComplex) {
        self.re.assign(&other.re);
        self.im.assign(&other.im);
    }

    pub fn add_assign(&mut self, other: &MpComplex) {
        self.re += &other.re;
        self.im += &other.im;
    }

    pub fn sub_assign(&mut self, other: &MpComplex) {
        self.re -= &other.re;
        self.im -= &other.im;
    }

    pub fn neg_assign(&mut self) {
        self.re.neg_assign();
        self.im.neg_assign();
    }

    pub fn scale_assign(&mut self, x: &Float) {
        self.re *= x;
        self.im *= x;
    }

    pub fn add(&self, other: &MpComplex) -> MpComplex {
        let mut out = self.clone();
        out.add_assign(other);
        out
    }

    pub fn sub(&self, other: &MpComplex) -> MpComplex {
        let mut out = self.clone();
        out.sub_assign(other);
        out
    }

    pub fn mul(&self, other: &MpComplex) -> MpComplex {
        let mut out = MpComplex::zero(self.prec());
        let mut scratch = MulScratch::new(self.prec());
        scratch.mul_into(&mut out, self, other);
        out
    }

    pub fn div(&self, other: &MpComplex) -> MpComplex {
        let den = other.norm_sqr();
        let mut conj = other.clone();
        conj.im.neg_assign();
        let mut out = self.mul(&conj);
        out.re /= &den;
        out.im /= &den;
        out
    }

    pub fn square(&self) -> MpComplex {
        self.mul(self)
    }

    /// `self^n` by binary exponentiation.
    pub fn powu(&self, n: u32) -> MpComplex {
        let mut out = MpComplex::from_f64(self.prec(), 1.0, 0.0);
        let mut scratch = PowScratch::new(self.prec());
        scratch.powu_into(&mut out, self, n);
        out
    }
}

/// Temporaries for allocation-free complex products.
#[derive(Debug)]
pub struct MulScratch {
    t1: Float,
    t2: Float,
}

impl MulScratch {
    pub fn new(prec: u32) -> Self {
        Self { t1: Float::new(prec), t2: Float::new(prec) }
    }

    /// `out = x · y`; `out` may alias neither input.
    pub fn mul_into(&mut self, out: &mut MpComplex, x: &MpComplex, y: &MpComplex) {
        self.t1.assign(&x.re * &y.re);
        self.t2.assign(&x.im * &y.im);
        out.re.assign(&self.t1 - &self.t2);
        self.t1.assign(&x.re * &y.im);
        self.t2.assign(&x.im * &y.re);
        out.im.assign(&self.t1 + &self.t2);
    }

    /// `x ← x · y`.
    pub fn mul_assign(&mut self, x: &mut MpComplex, y: &MpComplex) {
        self.t1.assign(&x.re * &y.re);
        self.t2.assign(&x.im * &y.im);
        self.t1 -= &self.t2;
        self.t2.assign(&x.re * &y.im);
        x.im *= &y.re;
        x.im += &self.t2;
        std::mem::swap(&mut x.re, &mut self.t1);
    }

    /// `x ← x²`.
    pub fn square_assign(&mut self, x: &mut MpComplex) {
        self.t1.assign(x.re.square_ref());
        self.t2.assign(x.im.square_ref());
        self.t1 -= &self.t2;
        x.im *= &x.re;
        x.im <<= 1;
        std::mem::swap(&mut x.re, &mut self.t1);
    }
}

/// Temporaries for repeated integer powers.
#[derive(Debug)]
pub struct PowScratch {
    base: MpComplex,
    mul: MulScratch,
}

impl PowScratch {
    pub fn new(prec: u32) -> Self {
        Self { base: MpComplex::zero(prec), mul: MulScratch::new(prec) }
    }

    /// `out = x^n` by left-to-right binary exponentiation.
    pub fn powu_into(&mut self, out: &mut MpComplex, x: &MpComplex, n: u32) {
        out.re.assign(1);
        out.im.assign(0);
        if n == 0 {
            return;
        }
        self.base.set(x);
        let top = 31 - n.leading_zeros();
        out.set(x);
        for bit in (0..top).rev() {
            self.mul.square_assign(out);
            if n >> bit & 1 == 1 {
                self.mul.mul_assign(out, &self.base);
            }
        }
    }
}
