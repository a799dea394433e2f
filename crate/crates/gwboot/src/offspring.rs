//! Offspring distributions and their generating objects.
//!
//! An `OffspringDistribution` is a law `ξ` on child counts `k >= r`
//! together with the infection threshold `r`. The recursion for the
//! healthy-root probability is driven by
//!
//!   h_ξ(x) = q · x · g_ξ(x),   g_ξ(x) = Σ_k ξ_k g_k(x),
//!
//! with `g_k` the descendant polynomial of [`crate::ratpoly::gk_poly`].
//! Finite-support laws carry `g_ξ` as an exact polynomial. The one
//! infinite-support law built in is `ξ_k = (r-1)/(k(k-1))` for all `k >= r`,
//! whose partial sums have the exact tail mass `T(N) = (r-1)/N`; its g-series
//! sums to the constant 1 on all of [0, 1].

use std::collections::BTreeMap;

use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::ratio_serde::{parse_rat, rat_to_string};
use crate::ratpoly::{gk_poly, rat_int, Rat, RatPoly};

/// Support of an offspring law.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Support {
    /// Exact weights on finitely many child counts, all `>= r`.
    Finite(BTreeMap<u32, Rat>),
    /// `ξ_k = (r-1)/(k(k-1))` for every `k >= r`: infinite support and
    /// infinite mean, with exact tail mass `(r-1)/N` beyond `N`.
    Claim39Tail,
}

/// An offspring law `ξ` with its infection threshold `r`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OffspringDistribution {
    r: u32,
    support: Support,
}

/// Weights before normalization, as produced by the designer. `new`
/// enforces nonnegativity; `candidate` defers that to the caller's
/// positivity certificate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnnormalizedWeights {
    pub r: u32,
    pub weights: BTreeMap<u32, Rat>,
}

impl UnnormalizedWeights {
    pub fn new(r: u32, weights: BTreeMap<u32, Rat>) -> Result<Self> {
        for (&k, w) in &weights {
            if w.is_negative() {
                return Err(Error::InvalidArgument(format!(
                    "negative weight {w} on k={k}"
                )));
            }
        }
        UnnormalizedWeights::candidate(r, weights)
    }

    /// Solver output whose signs have not been certified yet. The support
    /// threshold is still enforced; positivity is the caller's check.
    pub fn candidate(r: u32, weights: BTreeMap<u32, Rat>) -> Result<Self> {
        check_r(r)?;
        for &k in weights.keys() {
            if k < r {
                return Err(Error::InvalidArgument(format!(
                    "weight on k={k} below threshold r={r}"
                )));
            }
        }
        Ok(UnnormalizedWeights { r, weights })
    }

    /// Exact total mass.
    pub fn mass(&self) -> Rat {
        self.weights.values().sum()
    }

    /// Divides by the total mass; zero mass is rejected.
    pub fn normalize(&self) -> Result<OffspringDistribution> {
        let mass = self.mass();
        if !mass.is_positive() {
            return Err(Error::InvalidArgument(format!(
                "cannot normalize weights of total mass {mass}"
            )));
        }
        let weights = self
            .weights
            .iter()
            .map(|(&k, w)| (k, w / &mass))
            .collect();
        OffspringDistribution::finite(self.r, weights)
    }
}

/// The finitely-supported weights `χ_k = (r-1)/(k(k-1))`, `r <= k <= ν+r-1`.
/// Normalizing them realizes a continuous transition with exponent `ν`.
pub fn chi_weights(r: u32, nu: u32) -> Result<UnnormalizedWeights> {
    check_r(r)?;
    if nu < 1 {
        return Err(Error::InvalidArgument("need ν >= 1".into()));
    }
    let weights = (r..=nu + r - 1)
        .map(|k| (k, claim39_weight(r, k)))
        .collect();
    UnnormalizedWeights::new(r, weights)
}

fn check_r(r: u32) -> Result<()> {
    if r < 2 {
        return Err(Error::InvalidArgument(format!("need r >= 2, got r={r}")));
    }
    Ok(())
}

fn claim39_weight(r: u32, k: u32) -> Rat {
    debug_assert!(k >= r && r >= 2);
    Rat::new(
        (r - 1).into(),
        (u64::from(k) * u64::from(k - 1)).into(),
    )
}

impl OffspringDistribution {
    /// Builds a finite-support law. Weights must sit on `k >= r`, be
    /// nonnegative, and sum to 1 exactly; zero weights are dropped.
    pub fn finite(r: u32, weights: BTreeMap<u32, Rat>) -> Result<Self> {
        let w = UnnormalizedWeights::new(r, weights)?;
        let mass = w.mass();
        if !mass.is_one() {
            return Err(Error::InvalidArgument(format!(
                "offspring weights must sum to 1 exactly, got {mass}"
            )));
        }
        let weights = w.weights.into_iter().filter(|(_, v)| !v.is_zero()).collect();
        Ok(OffspringDistribution {
            r,
            support: Support::Finite(weights),
        })
    }

    /// Point mass on a single child count `k >= r`.
    pub fn dirac(r: u32, k: u32) -> Result<Self> {
        OffspringDistribution::finite(r, BTreeMap::from([(k, Rat::one())]))
    }

    /// The built-in infinite law `ξ_k = (r-1)/(k(k-1))`, `k >= r`.
    pub fn claim39(r: u32) -> Result<Self> {
        check_r(r)?;
        Ok(OffspringDistribution {
            r,
            support: Support::Claim39Tail,
        })
    }

    pub fn r(&self) -> u32 {
        self.r
    }

    pub fn support(&self) -> &Support {
        &self.support
    }

    pub fn is_finite(&self) -> bool {
        matches!(self.support, Support::Finite(_))
    }

    pub fn finite_weights(&self) -> Option<&BTreeMap<u32, Rat>> {
        match &self.support {
            Support::Finite(w) => Some(w),
            Support::Claim39Tail => None,
        }
    }

    /// Largest supported child count; `None` for infinite support.
    pub fn max_k(&self) -> Option<u32> {
        self.finite_weights()
            .and_then(|w| w.keys().next_back().copied())
    }

    /// Exact mean child count; `None` when infinite.
    pub fn mean(&self) -> Option<Rat> {
        match &self.support {
            Support::Finite(w) => Some(
                w.iter()
                    .map(|(&k, v)| rat_int(k as i64) * v)
                    .sum(),
            ),
            // Σ k (r-1)/(k(k-1)) = (r-1) Σ 1/(k-1) diverges.
            Support::Claim39Tail => None,
        }
    }

    /// Monte Carlo needs finite expected generation sizes.
    pub fn simulation_safe(&self) -> bool {
        self.mean().is_some()
    }

    /// Exact mass beyond `n`: `Σ_{k>n} ξ_k`.
    pub fn tail_mass(&self, n: u32) -> Rat {
        match &self.support {
            Support::Finite(w) => w.iter().filter(|(&k, _)| k > n).map(|(_, v)| v).sum(),
            Support::Claim39Tail => {
                // Σ_{k>n} (r-1)/(k(k-1)) telescopes to (r-1)/n.
                let n = n.max(self.r - 1);
                Rat::new((self.r - 1).into(), n.into())
            }
        }
    }

    /// `g_ξ` as an exact polynomial; unsupported for infinite support.
    pub fn g_poly(&self) -> Result<RatPoly> {
        match &self.support {
            Support::Finite(w) => {
                let mut acc = RatPoly::zero();
                for (&k, v) in w {
                    acc = acc.add(&gk_poly(k, self.r)?.scale(v));
                }
                Ok(acc)
            }
            Support::Claim39Tail => Err(Error::Unsupported(
                "g_ξ of the infinite-support law is not a polynomial; use partial sums".into(),
            )),
        }
    }

    /// `h_ξ(x) = q · x · g_ξ(x)` as an exact polynomial.
    pub fn h_poly(&self, q: &Rat) -> Result<RatPoly> {
        check_prob(q)?;
        Ok(self.g_poly()?.mul(&RatPoly::x()).scale(q))
    }

    /// Exact partial sum `Σ_{r <= k <= n} ξ_k g_k` as a polynomial.
    pub fn g_partial_poly(&self, n: u32) -> Result<RatPoly> {
        if n < self.r {
            return Err(Error::InvalidArgument(format!(
                "partial sum bound n={n} below r={}",
                self.r
            )));
        }
        let mut acc = RatPoly::zero();
        match &self.support {
            Support::Finite(w) => {
                for (&k, v) in w.range(..=n) {
                    acc = acc.add(&gk_poly(k, self.r)?.scale(v));
                }
            }
            Support::Claim39Tail => {
                for k in self.r..=n {
                    acc = acc.add(&gk_poly(k, self.r)?.scale(&claim39_weight(self.r, k)));
                }
            }
        }
        Ok(acc)
    }

    /// Smallest truncation `N` with `T(N)/x_min <= tol`, using the uniform
    /// bound `g_k(x) <= 1/x` on `(0, 1]`.
    pub fn truncation_n(&self, tol: f64, x_min: f64) -> Result<u64> {
        if !(tol > 0.0) || !(x_min > 0.0 && x_min <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need tol > 0 and 0 < x_min <= 1, got tol={tol}, x_min={x_min}"
            )));
        }
        match &self.support {
            Support::Finite(w) => Ok(u64::from(*w.keys().next_back().unwrap())),
            Support::Claim39Tail => {
                let n = (f64::from(self.r - 1) / (tol * x_min)).ceil();
                if !n.is_finite() || n > 4e9 {
                    return Err(Error::Unsupported(format!(
                        "truncation for tol={tol} at x={x_min} needs N={n}, beyond reach"
                    )));
                }
                Ok((n as u64).max(u64::from(self.r)))
            }
        }
    }

    /// Evaluates `g_ξ(x)` to absolute accuracy `tol` (exact polynomial path
    /// for finite support, truncated series otherwise). `x = 0` uses the
    /// polynomial limit, which for the infinite law is the analytic value 1.
    pub fn eval_g(&self, x: f64, tol: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::InvalidArgument(format!("need 0 <= x <= 1, got {x}")));
        }
        match &self.support {
            Support::Finite(_) => Ok(self.g_poly()?.eval_f64(x)),
            Support::Claim39Tail => {
                if x == 0.0 {
                    // ξ_r g_r(0) = (r-1)/(r(r-1)) · r = 1; every other term
                    // vanishes at 0.
                    return Ok(1.0);
                }
                let n = self.truncation_n(tol, x)?;
                Ok(self.claim39_partial_sum_f64(n, x))
            }
        }
    }

    /// `h_ξ(x) = q x g_ξ(x)` to absolute accuracy `q·x·tol <= tol`.
    pub fn eval_h(&self, q: f64, x: f64, tol: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::InvalidArgument(format!("need 0 <= q <= 1, got {q}")));
        }
        Ok(q * x * self.eval_g(x, tol)?)
    }

    /// Floating partial sum `S_N(x) = Σ_{r <= k <= N} ξ_k g_k(x)` of the
    /// infinite law, streamed without building the degree-N polynomial.
    pub fn claim39_partial_sum_f64(&self, n: u64, x: f64) -> f64 {
        assert!(matches!(self.support, Support::Claim39Tail));
        assert!(x > 0.0 && x <= 1.0);
        let r = self.r as u64;
        let y = 1.0 - x;
        // Per k, g_k(x) = Σ_{i<r} C(k,i) y^i x^{k-i-1}. Maintain the powers
        // x^{k-i-1} and the binomials across k.
        let mut pow = vec![0.0f64; r as usize]; // pow[i] = x^{k-i-1}
        let mut binom = vec![0.0f64; r as usize]; // binom[i] = C(k,i)
        let mut ypow = vec![0.0f64; r as usize]; // ypow[i] = y^i
        for i in 0..r as usize {
            pow[i] = x.powi((r as i32) - (i as i32) - 1);
            binom[i] = crate::ratpoly::binomial(r, i as u64)
                .to_f64()
                .unwrap_or(f64::INFINITY);
            ypow[i] = y.powi(i as i32);
        }
        let mut total = 0.0f64;
        let mut k = r;
        loop {
            let mut gk = 0.0;
            for i in 0..r as usize {
                gk += binom[i] * ypow[i] * pow[i];
            }
            total += (r as f64 - 1.0) / ((k * (k - 1)) as f64) * gk;
            if k == n {
                break;
            }
            k += 1;
            for i in 0..r as usize {
                pow[i] *= x;
                // C(k, i) = C(k-1, i) * k / (k - i)
                binom[i] *= k as f64 / (k - i as u64) as f64;
            }
        }
        total
    }

    /// Exact partial sum of the infinite law at a rational point.
    pub fn claim39_partial_sum_exact(&self, n: u32, x: &Rat) -> Result<Rat> {
        assert!(matches!(self.support, Support::Claim39Tail));
        if x.is_negative() || x > &Rat::one() {
            return Err(Error::InvalidArgument(format!("need 0 <= x <= 1, got {x}")));
        }
        let mut acc = Rat::zero();
        for k in self.r..=n {
            let gk = gk_poly(k, self.r)?;
            acc += gk.eval(x) * claim39_weight(self.r, k);
        }
        Ok(acc)
    }
}

/// Exact `h_k(x) = q · x · g_k(x)`, the single-offspring-count kernel.
pub fn eval_h_k(k: u32, r: u32, q: &Rat, x: &Rat) -> Result<Rat> {
    check_prob(q)?;
    check_prob(x)?;
    let g = gk_poly(k, r)?;
    Ok(q * x * g.eval(x))
}

fn check_prob(v: &Rat) -> Result<()> {
    if v.is_negative() || v > &Rat::one() {
        return Err(Error::InvalidArgument(format!(
            "probability out of range: {v}"
        )));
    }
    Ok(())
}

/// `g_ξ` packaged with its evaluation strategy: the exact polynomial when
/// the support is finite, otherwise the truncated-series rule.
#[derive(Clone, Debug)]
pub struct GFunction {
    source: OffspringDistribution,
    exact_poly: Option<RatPoly>,
}

impl GFunction {
    pub fn new(source: &OffspringDistribution) -> Result<Self> {
        let exact_poly = source.is_finite().then(|| source.g_poly()).transpose()?;
        Ok(GFunction {
            source: source.clone(),
            exact_poly,
        })
    }

    pub fn exact_poly(&self) -> Option<&RatPoly> {
        self.exact_poly.as_ref()
    }

    pub fn eval(&self, x: f64, tol: f64) -> Result<f64> {
        match &self.exact_poly {
            Some(p) => Ok(p.eval_f64(x)),
            None => self.source.eval_g(x, tol),
        }
    }

    /// Truncation level needed for accuracy `tol` down to `x_min`.
    pub fn truncation_bound(&self, tol: f64, x_min: f64) -> Result<u64> {
        self.source.truncation_n(tol, x_min)
    }
}

// JSON form: {"r": 2, "support": {"2": "13/18", "3": "5/18"}}
// or {"r": 2, "family": "claim39"}.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Repr {
    r: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    support: Option<BTreeMap<String, String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    family: Option<String>,
}

impl Serialize for OffspringDistribution {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = match &self.support {
            Support::Finite(w) => Repr {
                r: self.r,
                support: Some(
                    w.iter()
                        .map(|(k, v)| (k.to_string(), rat_to_string(v)))
                        .collect(),
                ),
                family: None,
            },
            Support::Claim39Tail => Repr {
                r: self.r,
                support: None,
                family: Some("claim39".into()),
            },
        };
        repr.serialize(s)
    }
}

impl<'de> Deserialize<'de> for OffspringDistribution {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = Repr::deserialize(d)?;
        match (repr.support, repr.family) {
            (Some(w), None) => {
                let mut weights = BTreeMap::new();
                for (k, v) in w {
                    let k: u32 = k
                        .trim()
                        .parse()
                        .map_err(|_| D::Error::custom(format!("bad child count key {k:?}")))?;
                    weights.insert(k, parse_rat(&v).map_err(D::Error::custom)?);
                }
                OffspringDistribution::finite(repr.r, weights).map_err(D::Error::custom)
            }
            (None, Some(f)) if f == "claim39" => {
                OffspringDistribution::claim39(repr.r).map_err(D::Error::custom)
            }
            (None, Some(f)) => Err(D::Error::custom(format!("unknown family {f:?}"))),
            _ => Err(D::Error::custom(
                "exactly one of \"support\" and \"family\" is required",
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ratpoly::rat;

    fn fin(r: u32, pairs: &[(u32, (i64, i64))]) -> OffspringDistribution {
        let w = pairs.iter().map(|&(k, (n, d))| (k, rat(n, d))).collect();
        OffspringDistribution::finite(r, w).unwrap()
    }

    #[test]
    fn h_k_kernel_values() {
        // k=r=2 at q = x = 9/10: 0.9 (1 - 0.01) = 0.891.
        assert_eq!(
            eval_h_k(2, 2, &rat(9, 10), &rat(9, 10)).unwrap(),
            rat(891, 1000)
        );
        // x = 1 gives q for any (k, r).
        for (k, r) in [(2u32, 2u32), (5, 2), (7, 4)] {
            assert_eq!(eval_h_k(k, r, &rat(3, 7), &rat(1, 1)).unwrap(), rat(3, 7));
        }
        // q = 0 gives 0.
        assert_eq!(eval_h_k(4, 3, &rat(0, 1), &rat(1, 2)).unwrap(), rat(0, 1));
        assert!(eval_h_k(2, 2, &rat(3, 2), &rat(1, 2)).is_err());
    }

    #[test]
    fn chi_weight_tables() {
        let w = chi_weights(2, 1).unwrap();
        assert_eq!(w.weights, BTreeMap::from([(2, rat(1, 2))]));
        assert_eq!(w.mass(), rat(1, 2));

        let w = chi_weights(2, 2).unwrap();
        assert_eq!(w.weights, BTreeMap::from([(2, rat(1, 2)), (3, rat(1, 6))]));
        assert_eq!(w.mass(), rat(2, 3));

        let w = chi_weights(3, 1).unwrap();
        assert_eq!(w.weights, BTreeMap::from([(3, rat(1, 3))]));
        assert_eq!(w.mass(), rat(1, 3));
    }

    #[test]
    fn normalization() {
        let w = chi_weights(2, 2).unwrap();
        let xi = w.normalize().unwrap();
        assert_eq!(
            xi.finite_weights().unwrap(),
            &BTreeMap::from([(2, rat(3, 4)), (3, rat(1, 4))])
        );

        let w = UnnormalizedWeights::new(
            2,
            BTreeMap::from([(2, rat(130, 261)), (3, rat(50, 261))]),
        )
        .unwrap();
        let xi = w.normalize().unwrap();
        assert_eq!(
            xi.finite_weights().unwrap(),
            &BTreeMap::from([(2, rat(13, 18)), (3, rat(5, 18))])
        );

        let w = UnnormalizedWeights::new(2, BTreeMap::from([(2, rat(1, 1))])).unwrap();
        assert_eq!(w.normalize().unwrap(), OffspringDistribution::dirac(2, 2).unwrap());

        let empty = UnnormalizedWeights::new(2, BTreeMap::new()).unwrap();
        assert!(empty.normalize().is_err());
    }

    #[test]
    fn finite_validation() {
        assert!(OffspringDistribution::finite(2, BTreeMap::from([(2, rat(1, 2))])).is_err());
        assert!(OffspringDistribution::finite(3, BTreeMap::from([(2, rat(1, 1))])).is_err());
        assert!(OffspringDistribution::finite(
            2,
            BTreeMap::from([(2, rat(3, 2)), (3, rat(-1, 2))])
        )
        .is_err());
        assert!(OffspringDistribution::finite(1, BTreeMap::from([(2, rat(1, 1))])).is_err());
        // Zero weights are dropped from the support.
        let xi = fin(2, &[(2, (1, 1)), (5, (0, 1))]);
        assert_eq!(xi.max_k(), Some(2));
    }

    #[test]
    fn g_evaluation_finite() {
        let d2 = OffspringDistribution::dirac(2, 2).unwrap();
        assert_eq!(d2.g_poly().unwrap().eval(&rat(1, 2)), rat(3, 2));
        // The two-atom law (3/5, 2/5) on {2, 5} has g(0) = 6/5.
        let m = fin(2, &[(2, (3, 5)), (5, (2, 5))]);
        assert_eq!(m.g_poly().unwrap().eval(&rat(0, 1)), rat(6, 5));
        assert_eq!(m.eval_g(0.0, 1e-12).unwrap(), 1.2);
        // Normalization anchor: g(1) = 1.
        assert_eq!(m.g_poly().unwrap().eval(&rat(1, 1)), rat(1, 1));
    }

    #[test]
    fn h_poly_matches_q_x_g() {
        let xi = fin(2, &[(2, (13, 18)), (3, (5, 18))]);
        let q = rat(20, 29);
        let h = xi.h_poly(&q).unwrap();
        let g = xi.g_poly().unwrap();
        for x in [rat(0, 1), rat(1, 10), rat(1, 2), rat(1, 1)] {
            assert_eq!(h.eval(&x), &q * &x * g.eval(&x));
        }
    }

    #[test]
    fn claim39_tail_and_partial_sums() {
        for r in [2u32, 3, 4] {
            let xi = OffspringDistribution::claim39(r).unwrap();
            // Tail telescopes exactly.
            assert_eq!(xi.tail_mass(50), Rat::new((r - 1).into(), 50.into()));
            // At x = 1 every g_k(1) = 1, so 1 - S_N(1) is exactly the tail.
            let s = xi.claim39_partial_sum_exact(50, &rat(1, 1)).unwrap();
            assert_eq!(Rat::one() - s, xi.tail_mass(50));
            // Away from 1 the partial sum approaches 1 within T(N)/x.
            let x = rat(1, 4);
            let s = xi.claim39_partial_sum_exact(200, &x).unwrap();
            let bound = xi.tail_mass(200) / &x;
            assert!((Rat::one() - &s).abs() <= bound);
            assert!(s <= Rat::one());
        }
    }

    #[test]
    fn claim39_eval_g_is_one_within_tol() {
        let xi = OffspringDistribution::claim39(2).unwrap();
        assert_eq!(xi.eval_g(0.0, 1e-9).unwrap(), 1.0);
        for x in [0.05, 0.3, 0.7, 1.0] {
            let v = xi.eval_g(x, 1e-6).unwrap();
            assert!((v - 1.0).abs() <= 1e-6 + 1e-9, "g({x}) = {v}");
        }
    }

    #[test]
    fn claim39_float_partial_sum_matches_exact() {
        let xi = OffspringDistribution::claim39(3).unwrap();
        let exact = xi
            .claim39_partial_sum_exact(300, &rat(3, 10))
            .unwrap()
            .to_f64()
            .unwrap();
        let float = xi.claim39_partial_sum_f64(300, 0.3);
        assert!((exact - float).abs() < 1e-12);
    }

    #[test]
    fn truncation_rule() {
        let xi = OffspringDistribution::claim39(2).unwrap();
        assert_eq!(xi.truncation_n(1e-3, 0.5).unwrap(), 2000);
        assert_eq!(xi.truncation_n(0.5, 1.0).unwrap(), 2);
        assert!(xi.truncation_n(1e-12, 1e-6).is_err());
        let fin_max = fin(2, &[(2, (3, 5)), (5, (2, 5))]);
        assert_eq!(fin_max.truncation_n(1e-9, 0.01).unwrap(), 5);
    }

    #[test]
    fn means_and_simulation_safety() {
        assert_eq!(
            OffspringDistribution::dirac(2, 2).unwrap().mean(),
            Some(rat(2, 1))
        );
        assert_eq!(fin(2, &[(2, (13, 18)), (3, (5, 18))]).mean(), Some(rat(41, 18)));
        let c = OffspringDistribution::claim39(2).unwrap();
        assert_eq!(c.mean(), None);
        assert!(!c.simulation_safe());
        assert!(fin(2, &[(2, (1, 1))]).simulation_safe());
    }

    #[test]
    fn json_round_trip() {
        let xi = fin(2, &[(2, (13, 18)), (3, (5, 18))]);
        let js = serde_json::to_string(&xi).unwrap();
        assert_eq!(js, r#"{"r":2,"support":{"2":"13/18","3":"5/18"}}"#);
        assert_eq!(serde_json::from_str::<OffspringDistribution>(&js).unwrap(), xi);

        let c = OffspringDistribution::claim39(3).unwrap();
        let js = serde_json::to_string(&c).unwrap();
        assert_eq!(js, r#"{"r":3,"family":"claim39"}"#);
        assert_eq!(serde_json::from_str::<OffspringDistribution>(&js).unwrap(), c);
    }

    #[test]
    fn json_rejects_malformed() {
        for js in [
            r#"{"r":2}"#,
            r#"{"r":2,"support":{"2":"1"},"family":"claim39"}"#,
            r#"{"r":2,"family":"zeta"}"#,
            r#"{"r":2,"support":{"2":"1"},"extra":1}"#,
            r#"{"r":2,"support":{"1":"1"}}"#,
            r#"{"r":2,"support":{"2":"1/3"}}"#,
        ] {
            assert!(
                serde_json::from_str::<OffspringDistribution>(js).is_err(),
                "{js} should be rejected"
            );
        }
    }

    #[test]
    fn gfunction_wraps_both_paths() {
        let xi = fin(2, &[(2, (3, 5)), (5, (2, 5))]);
        let g = GFunction::new(&xi).unwrap();
        assert!(g.exact_poly().is_some());
        assert!((g.eval(0.0, 1e-9).unwrap() - 1.2).abs() < 1e-15);

        let c = OffspringDistribution::claim39(2).unwrap();
        let g = GFunction::new(&c).unwrap();
        assert!(g.exact_poly().is_none());
        assert!((g.eval(0.5, 1e-6).unwrap() - 1.0).abs() < 2e-6);
        assert_eq!(g.truncation_bound(1e-3, 0.5).unwrap(), 2000);
    }
}
