//! Floating-point precision policy.
//!
//! The recursion runs in hardware `f64` by default and escalates to MPFR
//! software floats when increments shrink toward rounding noise: within
//! `1e-6` of the critical probability, or past `1e6` steps on a plateau.
//! `precision_bits` counts mantissa bits: 53 selects `f64`, larger values
//! select MPFR at that precision, smaller values are rejected.

use num_traits::ToPrimitive;
use rug::Float;

use crate::error::{Error, Result};
use crate::ratpoly::{Rat, RatPoly};

/// Mantissa bits of a hardware double.
pub const F64_BITS: u32 = 53;

/// Escalated precision used by the automatic policy. Chosen above the
/// 113-bit quad-float threshold with headroom.
pub const ESCALATED_BITS: u32 = 128;

/// Gap `q_c - q` below which iteration escalates precision.
pub const ESCALATION_GAP: f64 = 1e-6;

/// Plateau length beyond which iteration escalates precision.
pub const ESCALATION_STEPS: u64 = 1_000_000;

/// Selected arithmetic for the iteration loops.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F64,
    Mpfr(u32),
}

impl Precision {
    /// Maps a mantissa-bit request to an arithmetic; below 53 is refused.
    pub fn from_bits(bits: u32) -> Result<Precision> {
        match bits {
            b if b < F64_BITS => Err(Error::InvalidArgument(format!(
                "precision_bits must be at least {F64_BITS}, got {b}"
            ))),
            F64_BITS => Ok(Precision::F64),
            b => Ok(Precision::Mpfr(b)),
        }
    }

    pub fn bits(&self) -> u32 {
        match self {
            Precision::F64 => F64_BITS,
            Precision::Mpfr(b) => *b,
        }
    }

    /// The automatic escalation of this precision, never below 128 bits.
    pub fn escalated(&self) -> Precision {
        Precision::Mpfr(self.bits().max(ESCALATED_BITS))
    }
}

/// Scalar usable in the generic iteration loops: `f64` or `rug::Float`.
pub trait RealScalar: Clone + PartialOrd {
    fn zero(bits: u32) -> Self;
    fn from_rat(r: &Rat, bits: u32) -> Self;
    fn from_f64(v: f64, bits: u32) -> Self;
    fn to_f64(&self) -> f64;
    fn add_ref(&self, o: &Self) -> Self;
    fn sub_ref(&self, o: &Self) -> Self;
    fn mul_ref(&self, o: &Self) -> Self;
    fn abs_val(&self) -> Self;
}

impl RealScalar for f64 {
    fn zero(_bits: u32) -> Self {
        0.0
    }

    fn from_rat(r: &Rat, _bits: u32) -> Self {
        r.to_f64().unwrap_or(f64::NAN)
    }

    fn from_f64(v: f64, _bits: u32) -> Self {
        v
    }

    fn to_f64(&self) -> f64 {
        *self
    }

    fn add_ref(&self, o: &Self) -> Self {
        self + o
    }

    fn sub_ref(&self, o: &Self) -> Self {
        self - o
    }

    fn mul_ref(&self, o: &Self) -> Self {
        self * o
    }

    fn abs_val(&self) -> Self {
        self.abs()
    }
}

impl RealScalar for Float {
    fn zero(bits: u32) -> Self {
        Float::with_val(bits, 0)
    }

    fn from_rat(r: &Rat, bits: u32) -> Self {
        Float::with_val(bits, rat_to_rug(r))
    }

    fn from_f64(v: f64, bits: u32) -> Self {
        Float::with_val(bits, v)
    }

    fn to_f64(&self) -> f64 {
        Float::to_f64(self)
    }

    fn add_ref(&self, o: &Self) -> Self {
        Float::with_val(self.prec(), self + o)
    }

    fn sub_ref(&self, o: &Self) -> Self {
        Float::with_val(self.prec(), self - o)
    }

    fn mul_ref(&self, o: &Self) -> Self {
        Float::with_val(self.prec(), self * o)
    }

    fn abs_val(&self) -> Self {
        self.clone().abs()
    }
}

/// Exact conversion of a `num` rational into a `rug` rational, via
/// hexadecimal digit strings (no precision is lost here; rounding happens
/// only at the final `Float` conversion).
pub fn rat_to_rug(r: &Rat) -> rug::Rational {
    let s = format!("{}/{}", r.numer().to_str_radix(16), r.denom().to_str_radix(16));
    rug::Rational::from_str_radix(&s, 16).expect("radix-16 integers always parse")
}

/// Polynomial with coefficients pre-converted to a scalar type, for fast
/// Horner evaluation inside iteration loops.
#[derive(Clone, Debug)]
pub struct PolyEval<T> {
    coeffs: Vec<T>,
    bits: u32,
}

impl<T: RealScalar> PolyEval<T> {
    pub fn new(p: &RatPoly, bits: u32) -> Self {
        PolyEval {
            coeffs: p.coeffs().iter().map(|c| T::from_rat(c, bits)).collect(),
            bits,
        }
    }

    pub fn eval(&self, x: &T) -> T {
        let mut acc = T::zero(self.bits);
        for c in self.coeffs.iter().rev() {
            acc = acc.mul_ref(x).add_ref(c);
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ratpoly::{rat, RatPoly};

    #[test]
    fn from_bits_policy() {
        assert!(Precision::from_bits(52).is_err());
        assert_eq!(Precision::from_bits(53).unwrap(), Precision::F64);
        assert_eq!(Precision::from_bits(128).unwrap(), Precision::Mpfr(128));
        assert_eq!(Precision::F64.escalated(), Precision::Mpfr(128));
        assert_eq!(Precision::Mpfr(200).escalated(), Precision::Mpfr(200));
    }

    #[test]
    fn rat_to_rug_is_exact() {
        for r in [rat(1, 3), rat(-7, 16), rat(123456789, 987654321)] {
            let g = rat_to_rug(&r);
            let back = format!("{}/{}", g.numer(), g.denom());
            assert_eq!(back, format!("{}/{}", r.numer(), r.denom()));
        }
    }

    #[test]
    fn horner_matches_exact_eval() {
        let p = RatPoly::from_coeffs(vec![rat(13, 9), rat(1, 9), rat(-5, 9)]);
        let x = rat(7, 10);
        let exact = p.eval(&x);

        // p(7/10) = (1300 + 70 - 245)/900 = 5/4.
        assert_eq!(exact, rat(5, 4));
        let pf: PolyEval<f64> = PolyEval::new(&p, 53);
        let vf = pf.eval(&0.7);
        assert!((vf - 1.25).abs() < 1e-15);

        let pm: PolyEval<Float> = PolyEval::new(&p, 128);
        let xm = Float::from_rat(&x, 128);
        let vm = pm.eval(&xm);
        let exact_m = Float::with_val(192, rat_to_rug(&exact));
        let diff = Float::with_val(128, &vm - &exact_m).abs();
        assert!(diff.to_f64() < 1e-36, "mpfr eval error {diff}");
    }

    #[test]
    fn mpfr_tracks_tiny_increments_f64_cannot() {
        // x(1-x) decrement at x = 1e-20 from 1: f64 sees no change in 1 - x
        // arithmetic of this shape; 128-bit floats must.
        let one = Float::with_val(128, 1);
        let tiny = Float::with_val(128, 1e-20);
        let diff = Float::with_val(128, &one - &tiny);
        assert!(diff < one);
    }
}
