//! Exact rational polynomial arithmetic.
//!
//! Everything downstream that claims exactness (critical q, transition
//! classification, design certificates) reduces to operations implemented
//! here: arithmetic over `BigRational` coefficients, real-root isolation
//! with multiplicities, rigorous interval evaluation, and the mixed
//! `{g_k} ∪ {x^j}` basis with its triangular change-of-basis matrix.

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

/// Exact scalar used throughout the crate.
pub type Rat = BigRational;

/// Shorthand for small rational literals in code and tests.
pub fn rat(num: i64, den: i64) -> Rat {
    Rat::new(BigInt::from(num), BigInt::from(den))
}

pub fn rat_int(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

/// Binomial coefficient as an exact integer.
pub fn binomial(n: u64, k: u64) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    num_integer::binomial(BigInt::from(n), BigInt::from(k))
}

/// Dense univariate polynomial with exact rational coefficients.
///
/// Invariant: `coeffs` is empty (the zero polynomial) or its last entry is
/// nonzero. `coeffs[i]` is the coefficient of `x^i`.
#[derive(Clone, PartialEq, Eq)]
pub struct RatPoly {
    coeffs: Vec<Rat>,
}

impl RatPoly {
    pub fn zero() -> Self {
        RatPoly { coeffs: Vec::new() }
    }

    pub fn one() -> Self {
        RatPoly::constant(Rat::one())
    }

    pub fn constant(c: Rat) -> Self {
        RatPoly::from_coeffs(vec![c])
    }

    /// `c * x^deg`.
    pub fn monomial(deg: usize, c: Rat) -> Self {
        let mut coeffs = vec![Rat::zero(); deg + 1];
        coeffs[deg] = c;
        RatPoly::from_coeffs(coeffs)
    }

    /// The polynomial `x`.
    pub fn x() -> Self {
        RatPoly::monomial(1, Rat::one())
    }

    /// Builds from `x^0, x^1, ...` coefficients, trimming trailing zeros.
    pub fn from_coeffs(mut coeffs: Vec<Rat>) -> Self {
        while coeffs.last().is_some_and(|c| c.is_zero()) {
            coeffs.pop();
        }
        RatPoly { coeffs }
    }

    pub fn coeffs(&self) -> &[Rat] {
        &self.coeffs
    }

    /// Coefficient of `x^i` (zero beyond the degree).
    pub fn coeff(&self, i: usize) -> Rat {
        self.coeffs.get(i).cloned().unwrap_or_else(Rat::zero)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn is_constant(&self) -> bool {
        self.coeffs.len() <= 1
    }

    /// `None` for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn leading_coeff(&self) -> Rat {
        self.coeffs.last().cloned().unwrap_or_else(Rat::zero)
    }

    /// Horner evaluation, exact.
    pub fn eval(&self, x: &Rat) -> Rat {
        let mut acc = Rat::zero();
        for c in self.coeffs.iter().rev() {
            acc = acc * x + c;
        }
        acc
    }

    pub fn eval_f64(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for c in self.coeffs.iter().rev() {
            acc = acc * x + c.to_f64().unwrap_or(f64::NAN);
        }
        acc
    }

    /// Sign of `p(x)`: -1, 0, or 1.
    pub fn sign_at(&self, x: &Rat) -> i32 {
        let v = self.eval(x);
        if v.is_zero() {
            0
        } else if v.is_positive() {
            1
        } else {
            -1
        }
    }

    pub fn derivative(&self) -> RatPoly {
        if self.coeffs.len() <= 1 {
            return RatPoly::zero();
        }
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, c)| c * Rat::from_integer(BigInt::from(i)))
            .collect();
        RatPoly::from_coeffs(coeffs)
    }

    pub fn scale(&self, c: &Rat) -> RatPoly {
        if c.is_zero() {
            return RatPoly::zero();
        }
        RatPoly::from_coeffs(self.coeffs.iter().map(|a| a * c).collect())
    }

    pub fn neg(&self) -> RatPoly {
        RatPoly::from_coeffs(self.coeffs.iter().map(|a| -a.clone()).collect())
    }

    pub fn add(&self, other: &RatPoly) -> RatPoly {
        let n = self.coeffs.len().max(other.coeffs.len());
        let coeffs = (0..n).map(|i| self.coeff(i) + other.coeff(i)).collect();
        RatPoly::from_coeffs(coeffs)
    }

    pub fn sub(&self, other: &RatPoly) -> RatPoly {
        let n = self.coeffs.len().max(other.coeffs.len());
        let coeffs = (0..n).map(|i| self.coeff(i) - other.coeff(i)).collect();
        RatPoly::from_coeffs(coeffs)
    }

    pub fn mul(&self, other: &RatPoly) -> RatPoly {
        if self.is_zero() || other.is_zero() {
            return RatPoly::zero();
        }
        let mut coeffs = vec![Rat::zero(); self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (j, b) in other.coeffs.iter().enumerate() {
                coeffs[i + j] += a * b;
            }
        }
        RatPoly::from_coeffs(coeffs)
    }

    pub fn pow(&self, n: u32) -> RatPoly {
        let mut acc = RatPoly::one();
        for _ in 0..n {
            acc = acc.mul(self);
        }
        acc
    }

    /// Quotient and remainder with `deg(rem) < deg(d)`. Panics on zero divisor.
    pub fn div_rem(&self, d: &RatPoly) -> (RatPoly, RatPoly) {
        assert!(!d.is_zero(), "division by the zero polynomial");
        let dd = d.degree().unwrap();
        let dlead = d.leading_coeff();
        let mut rem = self.coeffs.clone();
        if rem.len() <= dd {
            return (RatPoly::zero(), self.clone());
        }
        let mut quot = vec![Rat::zero(); rem.len() - dd];
        for i in (dd..rem.len()).rev() {
            if rem[i].is_zero() {
                continue;
            }
            let f = &rem[i] / &dlead;
            rem[i] = Rat::zero();
            for j in 0..dd {
                let sub = &f * &d.coeffs[j];
                rem[i - dd + j] -= sub;
            }
            quot[i - dd] = f;
        }
        (RatPoly::from_coeffs(quot), RatPoly::from_coeffs(rem))
    }

    /// Exact quotient, or `None` when the remainder is nonzero.
    pub fn divide_exact(&self, d: &RatPoly) -> Option<RatPoly> {
        let (q, r) = self.div_rem(d);
        r.is_zero().then_some(q)
    }

    /// Divides out `x^k`; `None` when any of the lowest `k` coefficients is
    /// nonzero.
    pub fn divide_by_power_of_x(&self, k: usize) -> Option<RatPoly> {
        if self.is_zero() {
            return Some(RatPoly::zero());
        }
        if self.coeffs.len() < k || self.coeffs[..k].iter().any(|c| !c.is_zero()) {
            return None;
        }
        Some(RatPoly::from_coeffs(self.coeffs[k..].to_vec()))
    }

    pub fn monic(&self) -> RatPoly {
        if self.is_zero() {
            return RatPoly::zero();
        }
        let lead = self.leading_coeff();
        self.scale(&(Rat::one() / lead))
    }

    /// Divides by the largest positive rational making all coefficients
    /// integers with gcd 1. Positive scaling only, so signs are preserved.
    fn normalize_content(&self) -> RatPoly {
        if self.is_zero() {
            return RatPoly::zero();
        }
        let mut den_lcm = BigInt::one();
        for c in &self.coeffs {
            den_lcm = num_integer::lcm(den_lcm, c.denom().clone());
        }
        let mut num_gcd = BigInt::zero();
        for c in &self.coeffs {
            let scaled = c.numer() * (&den_lcm / c.denom());
            num_gcd = num_integer::gcd(num_gcd, scaled);
        }
        let factor = Rat::new(den_lcm, num_gcd.abs());
        self.scale(&factor)
    }

    /// Monic gcd, by the Euclidean algorithm with content normalization.
    pub fn gcd(&self, other: &RatPoly) -> RatPoly {
        let mut a = self.normalize_content();
        let mut b = other.normalize_content();
        while !b.is_zero() {
            let (_, r) = a.div_rem(&b);
            a = b;
            b = r.normalize_content();
        }
        a.monic()
    }

    /// `p / gcd(p, p')`: same roots, all simple.
    pub fn square_free_part(&self) -> RatPoly {
        if self.is_constant() {
            return self.clone();
        }
        let g = self.gcd(&self.derivative());
        self.divide_exact(&g)
            .expect("gcd divides its argument")
            .monic()
    }

    /// Yun decomposition: pairwise-coprime square-free `f_i` with
    /// `p = lead * prod f_i^{m_i}`. Constant factors are dropped.
    pub fn square_free_decomposition(&self) -> Vec<(RatPoly, u32)> {
        if self.is_constant() {
            return Vec::new();
        }
        let p = self.monic();
        let dp = p.derivative();
        let a0 = p.gcd(&dp);
        let mut b = p.divide_exact(&a0).unwrap();
        let mut c = dp.divide_exact(&a0).unwrap();
        let mut out = Vec::new();
        let mut mult = 1u32;
        loop {
            let d = c.sub(&b.derivative());
            if d.is_zero() {
                if !b.is_constant() {
                    out.push((b.monic(), mult));
                }
                break;
            }
            let f = b.gcd(&d);
            if !f.is_constant() {
                out.push((f.monic(), mult));
            }
            b = b.divide_exact(&f).unwrap();
            c = d.divide_exact(&f).unwrap();
            if b.is_constant() {
                break;
            }
            mult += 1;
        }
        out
    }

    /// `p(x + a)` by repeated synthetic division: the output coefficients
    /// are the Taylor coefficients of `p` at `a`.
    pub fn shifted(&self, a: &Rat) -> RatPoly {
        if self.is_zero() {
            return RatPoly::zero();
        }
        let n = self.coeffs.len();
        let mut work = self.coeffs.clone();
        let mut out = Vec::with_capacity(n);
        while !work.is_empty() {
            // One synthetic division by (x - a): the final accumulator is
            // the remainder p(a); the intermediate accumulators, left in
            // place, are the quotient shifted down one slot.
            let mut acc = Rat::zero();
            for c in work.iter_mut().rev() {
                acc = &acc * a + &*c;
                *c = acc.clone();
            }
            out.push(work.remove(0));
        }
        RatPoly::from_coeffs(out)
    }

    /// Rigorous enclosure of `p([lo, hi])` by interval Horner evaluation.
    /// Exact rational endpoints, so the enclosure is valid (not tight).
    pub fn eval_interval(&self, lo: &Rat, hi: &Rat) -> (Rat, Rat) {
        assert!(lo <= hi);
        let (mut alo, mut ahi) = (Rat::zero(), Rat::zero());
        for c in self.coeffs.iter().rev() {
            // [alo, ahi] * [lo, hi] + c
            let cands = [&alo * lo, &alo * hi, &ahi * lo, &ahi * hi];
            let mut nlo = cands[0].clone();
            let mut nhi = cands[0].clone();
            for v in &cands[1..] {
                if *v < nlo {
                    nlo = v.clone();
                }
                if *v > nhi {
                    nhi = v.clone();
                }
            }
            alo = nlo + c;
            ahi = nhi + c;
        }
        (alo, ahi)
    }
}

impl fmt::Debug for RatPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for RatPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut first = true;
        for (i, c) in self.coeffs.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            if first {
                write!(f, "{c}")?;
            } else if c.is_positive() {
                write!(f, " + {c}")?;
            } else {
                write!(f, " - {}", -c.clone())?;
            }
            match i {
                0 => {}
                1 => write!(f, "*x")?,
                _ => write!(f, "*x^{i}")?,
            }
            first = false;
        }
        Ok(())
    }
}

/// The descendant polynomial `g_k` for offspring count `k` and threshold `r`:
///
///   g_k(x) = sum_{i=0}^{r-1} C(k,i) (1-x)^i x^{k-i-1}
///
/// so that `q * x * g_k(x)` equals `q * P[Bin(k, 1-x) <= r-1]`, the chance
/// that a vertex with `k` children (each independently still healthy with
/// probability `x`) sees fewer than `r` infected children. Degree `k-1`;
/// lowest monomial `C(k,r-1) x^{k-r}`; `g_k(1) = 1`.
pub fn gk_poly(k: u32, r: u32) -> Result<RatPoly> {
    if r < 1 || k < r {
        return Err(Error::InvalidArgument(format!(
            "g_k needs k >= r >= 1, got k={k}, r={r}"
        )));
    }
    let mut coeffs = vec![Rat::zero(); k as usize];
    for i in 0..r {
        let cki = binomial(k as u64, i as u64);
        // (1-x)^i expands to sum_j C(i,j) (-1)^j x^j.
        for j in 0..=i {
            let term = &cki * binomial(i as u64, j as u64);
            let sign = if j % 2 == 0 { 1 } else { -1 };
            let deg = (k - i - 1 + j) as usize;
            coeffs[deg] += Rat::from_integer(term * BigInt::from(sign));
        }
    }
    Ok(RatPoly::from_coeffs(coeffs))
}

// ---------------------------------------------------------------------------
// Root isolation
// ---------------------------------------------------------------------------

/// One real root of a polynomial on an interval.
///
/// Either pinned exactly (`exact` set, `lo == hi == root`) or bracketed by an
/// open interval on which the owning square-free factor changes sign.
/// Multiplicity is with respect to the original polynomial.
#[derive(Clone, Debug)]
pub struct IsolatedRoot {
    pub lo: Rat,
    pub hi: Rat,
    pub multiplicity: u32,
    pub exact: Option<Rat>,
}

impl IsolatedRoot {
    pub fn width(&self) -> Rat {
        &self.hi - &self.lo
    }

    pub fn midpoint(&self) -> Rat {
        (&self.lo + &self.hi) / rat_int(2)
    }

    pub fn midpoint_f64(&self) -> f64 {
        self.midpoint().to_f64().unwrap_or(f64::NAN)
    }
}

/// Sturm chain of a square-free polynomial, content-normalized (positive
/// scaling only, so sign variation counts are unchanged).
fn sturm_chain(p: &RatPoly) -> Vec<RatPoly> {
    let mut chain = vec![p.clone(), p.derivative()];
    loop {
        let n = chain.len();
        if chain[n - 1].is_zero() {
            chain.pop();
            break;
        }
        if chain[n - 1].is_constant() {
            break;
        }
        let (_, r) = chain[n - 2].div_rem(&chain[n - 1]);
        let r = r.neg().normalize_content();
        if r.is_zero() {
            break;
        }
        chain.push(r);
    }
    chain
}

fn sign_variations(chain: &[RatPoly], x: &Rat) -> usize {
    let mut count = 0;
    let mut last = 0i32;
    for p in chain {
        let s = p.sign_at(x);
        if s != 0 {
            if last != 0 && s != last {
                count += 1;
            }
            last = s;
        }
    }
    count
}

/// Number of distinct roots of the (square-free) chain owner in `(a, b]`.
/// Requires `a` not to be a root.
fn sturm_count(chain: &[RatPoly], a: &Rat, b: &Rat) -> usize {
    sign_variations(chain, a) - sign_variations(chain, b)
}

/// The unique smallest-denominator rational in the open interval `(a, b)`.
///
/// Used to recognize exact rational roots from isolating intervals: once an
/// interval around a rational root `p/q` has width below `1/q^2`, that root
/// is the simplest rational inside, so testing the returned value against
/// the polynomial identifies it exactly.
pub fn simplest_in_interval(a: &Rat, b: &Rat) -> Rat {
    assert!(a < b, "empty interval");
    if a.is_negative() && b.is_positive() {
        return Rat::zero();
    }
    if !a.is_negative() {
        simplest_nonneg(a, &Some(b.clone()))
    } else {
        -simplest_nonneg(&-b.clone(), &Some(-a.clone()))
    }
}

/// Simplest rational in the open interval above `a >= 0`; `None` bound means
/// unbounded above.
fn simplest_nonneg(a: &Rat, b: &Option<Rat>) -> Rat {
    let fa = a.floor();
    let next_int = &fa + Rat::one();
    let inside = match b {
        Some(b) => &next_int < b,
        None => true,
    };
    if inside {
        return next_int;
    }
    // No integer in the interval: both bounds share the integer part fa.
    // Recurse on reciprocals of the fractional parts (order swaps). When a
    // sits exactly on the integer fa the upper reciprocal is unbounded.
    let frac_a = a - &fa;
    let frac_b = b.as_ref().expect("unbounded interval contains an integer") - &fa;
    let inv_lo = Rat::one() / frac_b;
    let inv_hi = if frac_a.is_zero() {
        None
    } else {
        Some(Rat::one() / frac_a)
    };
    fa + Rat::one() / simplest_nonneg(&inv_lo, &inv_hi)
}

/// Isolates every real root of `p` in the closed interval `[lo, hi]`.
///
/// Multiple roots are handled through the square-free decomposition, so each
/// root is reported once with its multiplicity. Rational roots are returned
/// exactly whenever their denominator is at most `1/sqrt(width)` (simplest-
/// rational reconstruction inside the refined bracket); others come as open
/// sign-change brackets of width at most `width`. The results are sorted,
/// each bracket isolates against the full polynomial, and brackets are
/// pairwise strictly disjoint.
pub fn isolate_roots(p: &RatPoly, lo: &Rat, hi: &Rat, width: &Rat) -> Result<Vec<IsolatedRoot>> {
    if lo > hi {
        return Err(Error::InvalidArgument(format!(
            "root isolation interval is empty: [{lo}, {hi}]"
        )));
    }
    if !width.is_positive() {
        return Err(Error::InvalidArgument(
            "target width must be positive".into(),
        ));
    }
    if p.is_zero() {
        return Err(Error::InvalidArgument(
            "cannot isolate roots of the zero polynomial".into(),
        ));
    }
    // Per-factor isolation first; brackets from different factors may still
    // overlap each other at this point.
    let mut items: Vec<(RatPoly, IsolatedRoot)> = Vec::new();
    for (factor, mult) in p.square_free_decomposition() {
        for mut root in isolate_square_free(&factor, lo, hi, width)? {
            root.multiplicity = mult;
            items.push((factor.clone(), root));
        }
    }
    // Global disjointness: refine each bracket against its own factor until
    // consecutive intervals are strictly separated. Distinct roots have a
    // positive gap, and every pass at least quarters an offending bracket,
    // so this terminates.
    loop {
        items.sort_by(|a, b| (a.1.lo.cmp(&b.1.lo)).then(a.1.hi.cmp(&b.1.hi)));
        let mut offender = None;
        for i in 0..items.len().saturating_sub(1) {
            if items[i].1.hi >= items[i + 1].1.lo
                && !(items[i].1.exact.is_some() && items[i + 1].1.exact.is_some())
            {
                offender = Some(i);
                break;
            }
        }
        let Some(i) = offender else { break };
        for idx in [i, i + 1] {
            let (factor, root) = &items[idx];
            if root.exact.is_none() {
                let target = root.width() / rat_int(4);
                items[idx].1 = refine_bracket(&factor.clone(), root.lo.clone(), root.hi.clone(), &target);
            }
        }
    }
    Ok(items.into_iter().map(|(_, r)| r).collect())
}

/// Root isolation for a square-free polynomial (all roots simple).
fn isolate_square_free(
    p: &RatPoly,
    lo: &Rat,
    hi: &Rat,
    width: &Rat,
) -> Result<Vec<IsolatedRoot>> {
    let mut exact_roots: Vec<Rat> = Vec::new();
    let mut work = p.clone();
    // Endpoints are rational: peel them off so Sturm counting on half-open
    // intervals covers the closed interval.
    for endpoint in [lo, hi] {
        if work.is_constant() {
            break;
        }
        if work.sign_at(endpoint) == 0 {
            exact_roots.push(endpoint.clone());
            let lin = RatPoly::from_coeffs(vec![-endpoint.clone(), Rat::one()]);
            work = work.divide_exact(&lin).unwrap();
        }
    }
    let mut brackets: Vec<(Rat, Rat)> = Vec::new();
    if !work.is_constant() && lo < hi {
        let chain = sturm_chain(&work);
        let total = sturm_count(&chain, lo, hi);
        let mut stack = vec![(lo.clone(), hi.clone(), total)];
        while let Some((a, b, count)) = stack.pop() {
            match count {
                0 => {}
                1 => brackets.push((a, b)),
                _ => {
                    let mid = (&a + &b) / rat_int(2);
                    if work.sign_at(&mid) == 0 {
                        // Midpoint landed on a root: extract it exactly,
                        // reduce, and restart on the smaller polynomial.
                        exact_roots.push(mid.clone());
                        let lin = RatPoly::from_coeffs(vec![-mid, Rat::one()]);
                        work = work.divide_exact(&lin).unwrap();
                        return isolate_with_known(&work, lo, hi, width, exact_roots);
                    }
                    let left = sturm_count(&chain, &a, &mid);
                    if left > 0 {
                        stack.push((a, mid.clone(), left));
                    }
                    if count - left > 0 {
                        stack.push((mid, b, count - left));
                    }
                }
            }
        }
    }
    let mut out: Vec<IsolatedRoot> = exact_roots
        .into_iter()
        .filter(|r| r >= lo && r <= hi)
        .map(exact_root)
        .collect();
    for (a, b) in brackets {
        out.push(refine_bracket(&work, a, b, width));
    }
    out.sort_by(|a, b| a.lo.cmp(&b.lo));
    Ok(out)
}

fn exact_root(r: Rat) -> IsolatedRoot {
    IsolatedRoot {
        lo: r.clone(),
        hi: r.clone(),
        multiplicity: 1,
        exact: Some(r),
    }
}

fn isolate_with_known(
    p: &RatPoly,
    lo: &Rat,
    hi: &Rat,
    width: &Rat,
    known: Vec<Rat>,
) -> Result<Vec<IsolatedRoot>> {
    let mut out = isolate_square_free(p, lo, hi, width)?;
    for r in known {
        if r >= *lo && r <= *hi {
            out.push(exact_root(r));
        }
    }
    out.sort_by(|a, b| a.lo.cmp(&b.lo));
    Ok(out)
}

/// Bisects a sign-change bracket of `p` down to `width`, recognizing
/// rational roots by simplest-rational reconstruction at the end.
fn refine_bracket(p: &RatPoly, mut a: Rat, mut b: Rat, width: &Rat) -> IsolatedRoot {
    let sa = p.sign_at(&a);
    debug_assert!(sa != 0 && p.sign_at(&b) != 0 && sa != p.sign_at(&b));
    while &(&b - &a) > width {
        let mid = (&a + &b) / rat_int(2);
        let sm = p.sign_at(&mid);
        if sm == 0 {
            return exact_root(mid);
        }
        if sm == sa {
            a = mid;
        } else {
            b = mid;
        }
    }
    // Inside a bracket of width w, a rational root with denominator q is
    // the simplest rational once w < 1/q^2; test that candidate exactly.
    let candidate = simplest_in_interval(&a, &b);
    if p.sign_at(&candidate) == 0 {
        return exact_root(candidate);
    }
    IsolatedRoot {
        lo: a,
        hi: b,
        multiplicity: 1,
        exact: None,
    }
}

/// Further bisection of an already-isolating bracket (no-op for exact
/// roots). Valid only for brackets produced by [`isolate_roots`], whose
/// global disjointness guarantees the square-free part changes sign on the
/// bracket.
pub fn refine_root(p: &RatPoly, root: &IsolatedRoot, width: &Rat) -> IsolatedRoot {
    if root.exact.is_some() || &root.width() <= width {
        return root.clone();
    }
    let sf = p.square_free_part();
    let refined = refine_bracket(&sf, root.lo.clone(), root.hi.clone(), width);
    IsolatedRoot {
        multiplicity: root.multiplicity,
        ..refined
    }
}

// ---------------------------------------------------------------------------
// Rigorous extrema
// ---------------------------------------------------------------------------

/// A location where a polynomial attains its maximum over an interval.
#[derive(Clone, Debug)]
pub enum Argmax {
    Exact(Rat),
    Bracket { lo: Rat, hi: Rat },
}

impl Argmax {
    pub fn approx_f64(&self) -> f64 {
        match self {
            Argmax::Exact(r) => r.to_f64().unwrap_or(f64::NAN),
            Argmax::Bracket { lo, hi } => ((lo + hi) / rat_int(2)).to_f64().unwrap_or(f64::NAN),
        }
    }

    pub fn exact(&self) -> Option<&Rat> {
        match self {
            Argmax::Exact(r) => Some(r),
            Argmax::Bracket { .. } => None,
        }
    }
}

/// Rigorous maximum of a polynomial over an interval.
#[derive(Clone, Debug)]
pub struct MaxEnclosure {
    /// Certified bounds: `value_lo <= max <= value_hi`. Equal iff exact.
    pub value_lo: Rat,
    pub value_hi: Rat,
    /// Every point (up to enclosure resolution) attaining the maximum.
    pub argmax: Vec<Argmax>,
}

impl MaxEnclosure {
    pub fn is_exact(&self) -> bool {
        self.value_lo == self.value_hi
    }
}

/// Computes a rigorous enclosure of `max_{[lo,hi]} p` with the attaining set.
///
/// Candidates are the endpoints plus the critical points of `p`. Rational
/// candidates are compared exactly; irrational ones through interval
/// refinement until every comparison is strict or the value uncertainty
/// drops below `value_tol`. Refinement is capped; a tie still unresolved at
/// the cap (exactly equal critical values) is reported conservatively with
/// all contenders kept in the argmax set, provided the enclosure is already
/// inside `value_tol` — otherwise it is an error.
pub fn enclose_max(p: &RatPoly, lo: &Rat, hi: &Rat, value_tol: &Rat) -> Result<MaxEnclosure> {
    if lo > hi {
        return Err(Error::InvalidArgument("empty interval".into()));
    }
    if p.is_constant() {
        let v = p.coeff(0);
        return Ok(MaxEnclosure {
            value_lo: v.clone(),
            value_hi: v,
            argmax: vec![Argmax::Bracket {
                lo: lo.clone(),
                hi: hi.clone(),
            }],
        });
    }
    let dp = p.derivative();
    let start_width = rat(1, 1 << 20);
    let crits = isolate_roots(&dp, lo, hi, &start_width)?;
    let mut exact_pts: Vec<Rat> = vec![lo.clone(), hi.clone()];
    let mut brackets: Vec<IsolatedRoot> = Vec::new();
    for c in crits {
        match c.exact {
            Some(v) => exact_pts.push(v),
            None => brackets.push(c),
        }
    }
    exact_pts.sort();
    exact_pts.dedup();
    let best_val = exact_pts.iter().map(|pt| p.eval(pt)).max().unwrap();
    let best_points: Vec<Rat> = exact_pts
        .iter()
        .filter(|pt| p.eval(pt) == best_val)
        .cloned()
        .collect();

    // Interval candidates carry a value enclosure that tightens as the
    // bracket shrinks.
    struct Cand {
        root: IsolatedRoot,
        vlo: Rat,
        vhi: Rat,
    }
    impl Cand {
        fn update(&mut self, p: &RatPoly) {
            let (vlo, vhi) = match &self.root.exact {
                Some(v) => {
                    let val = p.eval(v);
                    (val.clone(), val)
                }
                None => p.eval_interval(&self.root.lo, &self.root.hi),
            };
            self.vlo = vlo;
            self.vhi = vhi;
        }
    }
    let sf = dp.square_free_part();
    let mut cands: Vec<Cand> = brackets
        .into_iter()
        .map(|root| {
            let mut c = Cand {
                root,
                vlo: Rat::zero(),
                vhi: Rat::zero(),
            };
            c.update(p);
            c
        })
        .collect();

    const MAX_REFINE: u32 = 240;
    let mut rounds = 0u32;
    loop {
        // Drop candidates certifiably below the best exact value or below
        // some other candidate's guaranteed floor.
        let cap = cands
            .iter()
            .map(|c| c.vlo.clone())
            .chain(std::iter::once(best_val.clone()))
            .max()
            .unwrap();
        cands.retain(|c| c.vhi >= cap);
        let needs_work: Vec<usize> = (0..cands.len())
            .filter(|&i| &(&cands[i].vhi - &cands[i].vlo) > value_tol)
            .collect();
        if needs_work.is_empty() {
            break;
        }
        if rounds >= MAX_REFINE {
            return Err(Error::TieUnresolved(format!(
                "max enclosure did not separate after {MAX_REFINE} refinement rounds"
            )));
        }
        rounds += 1;
        for i in needs_work {
            let c = &mut cands[i];
            let target = c.root.width() / rat_int(4);
            c.root = refine_bracket(&sf, c.root.lo.clone(), c.root.hi.clone(), &target);
            c.update(p);
        }
    }

    if cands.is_empty() {
        return Ok(MaxEnclosure {
            value_lo: best_val.clone(),
            value_hi: best_val,
            argmax: best_points.into_iter().map(Argmax::Exact).collect(),
        });
    }
    // Some interval candidate survived: the max may exceed every rational
    // candidate, or tie with one inside tolerance.
    let value_lo = cands
        .iter()
        .map(|c| c.vlo.clone())
        .chain(std::iter::once(best_val.clone()))
        .max()
        .unwrap();
    let value_hi = cands
        .iter()
        .map(|c| c.vhi.clone())
        .chain(std::iter::once(best_val.clone()))
        .max()
        .unwrap();
    let mut argmax: Vec<Argmax> = Vec::new();
    if best_val >= value_lo {
        argmax.extend(best_points.into_iter().map(Argmax::Exact));
    }
    for c in &cands {
        if c.vhi >= value_lo {
            match &c.root.exact {
                Some(v) => argmax.push(Argmax::Exact(v.clone())),
                None => argmax.push(Argmax::Bracket {
                    lo: c.root.lo.clone(),
                    hi: c.root.hi.clone(),
                }),
            }
        }
    }
    Ok(MaxEnclosure {
        value_lo,
        value_hi,
        argmax,
    })
}

// ---------------------------------------------------------------------------
// Mixed basis and exact linear algebra
// ---------------------------------------------------------------------------

/// The mixed basis `{g_r, ..., g_m, x^{m-r+1}, ..., x^{m-1}}` of the space
/// of polynomials of degree < m.
///
/// Element `i` (0-based) has lowest monomial degree exactly `i` — the g-block
/// entry `g_{r+i}` starts at degree `i`, and the monomial block continues
/// seamlessly at degree `m-r+1` — so the change-of-basis matrix is
/// triangular with nonzero diagonal.
#[derive(Clone, Debug)]
pub struct PolyBasis {
    pub r: u32,
    pub m: u32,
    elements: Vec<RatPoly>,
}

/// Builds the mixed basis for given `r >= 2` and `m >= r`.
pub fn mixed_basis(r: u32, m: u32) -> Result<PolyBasis> {
    if r < 2 {
        return Err(Error::InvalidArgument(format!("need r >= 2, got r={r}")));
    }
    if m < r {
        return Err(Error::InvalidArgument(format!(
            "need m >= r, got m={m}, r={r}"
        )));
    }
    let mut elements = Vec::with_capacity(m as usize);
    for k in r..=m {
        elements.push(gk_poly(k, r)?);
    }
    for j in (m - r + 1)..m {
        elements.push(RatPoly::monomial(j as usize, Rat::one()));
    }
    Ok(PolyBasis { r, m, elements })
}

impl PolyBasis {
    pub fn elements(&self) -> &[RatPoly] {
        &self.elements
    }

    /// Number of g-block elements (`g_r..g_m`).
    pub fn g_block_len(&self) -> usize {
        (self.m - self.r + 1) as usize
    }

    /// Rows are the basis elements in monomial coordinates; `m x m`,
    /// triangular (entry (i, j) vanishes for j < i) with nonzero diagonal.
    pub fn matrix(&self) -> RatMatrix {
        let m = self.m as usize;
        let mut mat = RatMatrix::zeros(m, m);
        for (i, e) in self.elements.iter().enumerate() {
            for (j, c) in e.coeffs().iter().enumerate() {
                mat.set(i, j, c.clone());
            }
        }
        mat
    }

    pub fn inverse_matrix(&self) -> RatMatrix {
        self.matrix()
            .inverse()
            .expect("triangular with nonzero diagonal")
    }

    /// Coordinates of `p` (degree < m) in this basis, by forward
    /// substitution against the triangular structure.
    pub fn express(&self, p: &RatPoly) -> Result<Vec<Rat>> {
        let m = self.m as usize;
        if p.degree().is_some_and(|d| d >= m) {
            return Err(Error::InvalidArgument(format!(
                "degree {} polynomial does not lie in the span (need < {m})",
                p.degree().unwrap()
            )));
        }
        let mut coords = vec![Rat::zero(); m];
        let mut residual: Vec<Rat> = (0..m).map(|j| p.coeff(j)).collect();
        for i in 0..m {
            let e = &self.elements[i];
            let diag = e.coeff(i);
            debug_assert!(!diag.is_zero());
            let c = &residual[i] / &diag;
            if !c.is_zero() {
                for (j, ec) in e.coeffs().iter().enumerate() {
                    residual[j] -= &c * ec;
                }
            }
            coords[i] = c;
        }
        debug_assert!(residual.iter().all(|v| v.is_zero()));
        Ok(coords)
    }

    /// Linear combination with the given coordinates.
    pub fn combine(&self, coords: &[Rat]) -> Result<RatPoly> {
        if coords.len() != self.elements.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} coordinates, got {}",
                self.elements.len(),
                coords.len()
            )));
        }
        let mut acc = RatPoly::zero();
        for (c, e) in coords.iter().zip(&self.elements) {
            if !c.is_zero() {
                acc = acc.add(&e.scale(c));
            }
        }
        Ok(acc)
    }
}

/// Dense exact matrix, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RatMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Rat>,
}

impl RatMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        RatMatrix {
            rows,
            cols,
            data: vec![Rat::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = RatMatrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, Rat::one());
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> &Rat {
        &self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Rat) {
        self.data[i * self.cols + j] = v;
    }

    pub fn mul(&self, other: &RatMatrix) -> RatMatrix {
        assert_eq!(self.cols, other.rows);
        let mut out = RatMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a.is_zero() {
                    continue;
                }
                for j in 0..other.cols {
                    let add = a * other.get(k, j);
                    let cur = out.get(i, j) + add;
                    out.set(i, j, cur);
                }
            }
        }
        out
    }

    /// Exact inverse by Gauss-Jordan elimination; `None` when singular.
    pub fn inverse(&self) -> Option<RatMatrix> {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = RatMatrix::identity(n);
        for col in 0..n {
            let pivot = (col..n).find(|&r| !a.get(r, col).is_zero())?;
            if pivot != col {
                a.swap_rows(pivot, col);
                inv.swap_rows(pivot, col);
            }
            let pv = a.get(col, col).clone();
            for j in 0..n {
                let av = a.get(col, j) / &pv;
                a.set(col, j, av);
                let iv = inv.get(col, j) / &pv;
                inv.set(col, j, iv);
            }
            for r in 0..n {
                if r == col || a.get(r, col).is_zero() {
                    continue;
                }
                let f = a.get(r, col).clone();
                for j in 0..n {
                    let na = a.get(r, j) - &f * a.get(col, j);
                    a.set(r, j, na);
                    let ni = inv.get(r, j) - &f * inv.get(col, j);
                    inv.set(r, j, ni);
                }
            }
        }
        Some(inv)
    }

    /// Solves `A x = rhs` exactly; `None` when singular.
    #[allow(clippy::needless_range_loop)]
    pub fn solve(&self, rhs: &[Rat]) -> Option<Vec<Rat>> {
        assert_eq!(self.rows, self.cols);
        assert_eq!(rhs.len(), self.rows);
        let n = self.rows;
        let mut a = self.clone();
        let mut b = rhs.to_vec();
        for col in 0..n {
            let pivot = (col..n).find(|&r| !a.get(r, col).is_zero())?;
            if pivot != col {
                a.swap_rows(pivot, col);
                b.swap(pivot, col);
            }
            let pv = a.get(col, col).clone();
            for r in (col + 1)..n {
                if a.get(r, col).is_zero() {
                    continue;
                }
                let f = a.get(r, col) / &pv;
                for j in col..n {
                    let v = a.get(r, j) - &f * a.get(col, j);
                    a.set(r, j, v);
                }
                b[r] = &b[r] - &f * &b[col];
            }
        }
        let mut x = vec![Rat::zero(); n];
        for i in (0..n).rev() {
            let mut acc = b[i].clone();
            for j in (i + 1)..n {
                acc -= a.get(i, j) * &x[j];
            }
            x[i] = acc / a.get(i, i);
        }
        Some(x)
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for j in 0..self.cols {
            self.data.swap(a * self.cols + j, b * self.cols + j);
        }
    }
}
