//! Constructing offspring laws with a prescribed transition shape.
//!
//! Both constructions produce exact rational weights together with a
//! factored polynomial identity and positivity certificates:
//!
//! * continuous: `g_χ = 1 - x^ν · P(x)` with `P > 0` on [0, 1], giving a
//!   continuous transition of exponent ν;
//! * metastable: `g_χ̄ = 1 - Π(x - x_i)^{2ν_i} · P̄(x)` with `P̄ > 0` on
//!   [0, 1] and every `χ̄_k > 0`, giving plateaus of orders ν_i at the x_i.
//!
//! The linear algebra runs in the mixed basis {g_r, …, g_m, x^{ν}, …,
//! x^{m-1}} (m = ν + r - 1, ν = Σ2ν_i): membership of `1 - M·P̄` in the
//! g-span is exactly the vanishing of its monomial-block coordinates,
//! which is an (r-1)-dimensional exact linear system in P̄'s coefficients.

use std::collections::BTreeMap;

use num_traits::{One, Signed, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::offspring::{chi_weights, OffspringDistribution, UnnormalizedWeights};
use crate::ratio_serde::{rat_string, rat_string_opt, rat_string_vec};
use crate::ratpoly::{binomial, isolate_roots, mixed_basis, rat, rat_int, Rat, RatMatrix, RatPoly};

/// Exact evidence that the designed weights satisfy the strict conditions.
#[derive(Clone, Debug, Serialize)]
pub struct PositivityCertificate {
    /// Smallest designed weight; positive iff `chi_positive`.
    #[serde(with = "rat_string")]
    pub chi_min: Rat,
    pub chi_positive: bool,
    /// Value of the cofactor polynomial at 0.
    #[serde(with = "rat_string")]
    pub p_at_zero: Rat,
    /// Number of roots of the cofactor in [0, 1]; 0 plus `p_at_zero > 0`
    /// proves strict positivity on the whole interval.
    pub p_roots_in_unit_interval: usize,
    /// Exact lower bound for min of the cofactor on [0, 1], when the
    /// enclosure resolved to a positive bound.
    #[serde(with = "rat_string_opt")]
    pub p_min_lower_bound: Option<Rat>,
    pub certified: bool,
}

/// The exact factored identity realized by a design.
#[derive(Clone, Debug, Serialize)]
pub struct FactoredIdentity {
    /// `g_χ = Σ χ_k g_k`, expanded.
    pub g_chi: Vec<String>,
    /// The factored complement `x^ν·P` or `Π(x - x_i)^{2ν_i}·P̄`, expanded.
    pub product_part: Vec<String>,
    /// Whether `g_chi + product_part` expanded to the constant 1 exactly.
    pub verified: bool,
}

/// A designed offspring law with its exact supporting evidence.
#[derive(Clone, Debug, Serialize)]
pub struct DesignResult {
    pub xi: OffspringDistribution,
    #[serde(with = "rat_string")]
    pub q_c: Rat,
    /// Realized plateau locations (empty in continuous mode).
    #[serde(with = "rat_string_vec")]
    pub x_list: Vec<Rat>,
    pub nu_list: Vec<u32>,
    /// Coefficients of `P` (continuous) or `P̄` (metastable), low to high.
    #[serde(with = "rat_string_vec")]
    pub p_coeffs: Vec<Rat>,
    pub factored_identity: FactoredIdentity,
    pub certificate: PositivityCertificate,
}

impl DesignResult {
    pub fn p_poly(&self) -> RatPoly {
        RatPoly::from_coeffs(self.p_coeffs.clone())
    }
}

fn g_chi_poly(chi: &UnnormalizedWeights) -> Result<RatPoly> {
    let mut g = RatPoly::zero();
    for (&k, w) in &chi.weights {
        g = g.add(&crate::ratpoly::gk_poly(k, chi.r)?.scale(w));
    }
    Ok(g)
}

/// Certifies `p > 0` on [0, 1] by exact root isolation: no roots in the
/// closed interval and `p(0) > 0`. Also resolves an exact positive lower
/// bound for the minimum when the certificate holds.
fn certify_positive(p: &RatPoly) -> Result<(Rat, usize, Option<Rat>, bool)> {
    let at_zero = p.eval(&Rat::zero());
    if p.is_zero() {
        return Ok((at_zero, 0, None, false));
    }
    let roots = isolate_roots(p, &Rat::zero(), &Rat::one(), &rat(1, 1024))?;
    let n_roots = roots.len();
    let certified = n_roots == 0 && at_zero.is_positive();
    let mut min_bound = None;
    if certified {
        // min p = -max(-p); the enclosure converges, so some tolerance
        // resolves a positive bound. Widths shrink fast; 24 rounds reach
        // 1e-9/1000^24, far below any minimum a rational polynomial with
        // these coefficients can attain on [0, 1].
        let neg = p.neg();
        let mut tol = rat(1, 1_000_000_000);
        for _ in 0..24 {
            let m = crate::ratpoly::enclose_max(&neg, &Rat::zero(), &Rat::one(), &tol)?;
            let bound = -m.value_hi;
            if bound.is_positive() {
                min_bound = Some(bound);
                break;
            }
            tol /= rat_int(1000);
        }
    }
    Ok((at_zero, n_roots, min_bound, certified))
}

fn build_certificate(chi: &UnnormalizedWeights, p: &RatPoly) -> Result<PositivityCertificate> {
    let chi_min = chi
        .weights
        .values()
        .min()
        .cloned()
        .unwrap_or_else(Rat::zero);
    let chi_positive = chi_min.is_positive();
    let (p_at_zero, n_roots, min_bound, p_certified) = certify_positive(p)?;
    Ok(PositivityCertificate {
        chi_min,
        chi_positive,
        p_at_zero,
        p_roots_in_unit_interval: n_roots,
        p_min_lower_bound: min_bound,
        certified: chi_positive && p_certified,
    })
}

fn assemble(
    chi: UnnormalizedWeights,
    x_list: Vec<Rat>,
    nu_list: Vec<u32>,
    p: RatPoly,
    product: RatPoly,
    certificate: PositivityCertificate,
) -> Result<DesignResult> {
    let g_chi = g_chi_poly(&chi)?;
    let verified = g_chi.add(&product) == RatPoly::one();
    // The identity holds by construction; failure here is a library bug.
    assert!(verified, "factored identity failed to expand to 1");
    let q_c = chi.mass();
    let xi = chi.normalize()?;
    Ok(DesignResult {
        xi,
        q_c,
        x_list,
        nu_list,
        p_coeffs: p.coeffs().to_vec(),
        factored_identity: FactoredIdentity {
            g_chi: g_chi
                .coeffs()
                .iter()
                .map(crate::ratio_serde::rat_to_string)
                .collect(),
            product_part: product
                .coeffs()
                .iter()
                .map(crate::ratio_serde::rat_to_string)
                .collect(),
            verified,
        },
        certificate,
    })
}

/// Builds a law with a continuous transition of exponent ν:
/// `g_χ = 1 - x^ν P(x)` from the truncated tail weights
/// `χ_k = (r-1)/(k(k-1))`, k = r … ν+r-1.
///
/// `P` has degree ≤ r-2 and `P(0) = (r-1)/((ν+r)(ν+r-1))·C(ν+r, r-1) > 0`;
/// positivity on [0, 1] is certified by root isolation.
pub fn design_continuous(r: u32, nu: u32) -> Result<DesignResult> {
    let chi = chi_weights(r, nu)?;
    let g_chi = g_chi_poly(&chi)?;
    let complement = RatPoly::one().sub(&g_chi);
    // 1 - g_χ is divisible by x^ν: its ν lowest coefficients vanish.
    for j in 0..nu as usize {
        assert!(
            complement.coeff(j).is_zero(),
            "1 - g_χ must vanish to order ν at 0"
        );
    }
    let p = RatPoly::from_coeffs(complement.coeffs()[nu as usize..].to_vec());
    let p0_expected = rat_int(i64::from(r) - 1)
        / (rat_int(i64::from(nu + r)) * rat_int(i64::from(nu + r - 1)))
        * binomial((nu + r) as u64, (r - 1) as u64);
    assert!(p.coeff(0) == p0_expected, "P(0) formula mismatch");
    let certificate = build_certificate(&chi, &p)?;
    if !certificate.certified {
        return Err(Error::CertificateFailure(format!(
            "continuous design (r={r}, ν={nu}): cofactor not strictly positive on [0,1]"
        )));
    }
    let product = RatPoly::monomial(nu as usize, Rat::one()).mul(&p);
    assemble(chi, Vec::new(), vec![nu], p, product, certificate)
}

/// `Π (x - x_i)^{2ν_i}`, expanded exactly.
fn vanishing_product(nu_list: &[u32], x_list: &[Rat]) -> RatPoly {
    let mut m = RatPoly::one();
    for (nu, x) in nu_list.iter().zip(x_list) {
        let factor = RatPoly::from_coeffs(vec![-x.clone(), Rat::one()]);
        for _ in 0..2 * nu {
            m = m.mul(&factor);
        }
    }
    m
}

fn validate_request(r: u32, nu_list: &[u32], x_list: &[Rat]) -> Result<()> {
    if r < 2 {
        return Err(Error::InvalidArgument(format!("need r >= 2, got {r}")));
    }
    if nu_list.is_empty() || nu_list.iter().any(|&nu| nu < 1) {
        return Err(Error::InvalidArgument(
            "need a nonempty list of ν_i >= 1".into(),
        ));
    }
    if x_list.len() != nu_list.len() {
        return Err(Error::InvalidArgument(format!(
            "{} locations for {} plateau orders",
            x_list.len(),
            nu_list.len()
        )));
    }
    let all_zero = x_list.iter().all(|x| x.is_zero());
    if all_zero {
        // Degenerate reduction to the continuous construction.
        return Ok(());
    }
    for w in x_list.windows(2) {
        if w[1] >= w[0] {
            return Err(Error::InvalidArgument(
                "plateau locations must be strictly decreasing".into(),
            ));
        }
    }
    if x_list
        .iter()
        .any(|x| !x.is_positive() || x >= &Rat::one())
    {
        return Err(Error::InvalidArgument(
            "plateau locations must lie in (0, 1), or all be 0".into(),
        ));
    }
    Ok(())
}

/// Solves for the cofactor `P̄` of degree ≤ r-2 making
/// `1 - Π(x - x_i)^{2ν_i}·P̄` a combination of g_r … g_m, and reads the
/// combination's weights off the g-block coordinates.
///
/// The system is exact and (r-1)-dimensional; a singular projection at
/// the given x_i is reported for the caller to shrink.
pub fn projection_solve(
    r: u32,
    nu_list: &[u32],
    x_list: &[Rat],
) -> Result<(RatPoly, UnnormalizedWeights)> {
    validate_request(r, nu_list, x_list)?;
    let nu: u32 = nu_list.iter().map(|&v| 2 * v).sum();
    let m = nu + r - 1;
    let basis = mixed_basis(r, m)?;
    let g_len = basis.g_block_len();
    let mono_len = (r - 1) as usize;
    let mprod = vanishing_product(nu_list, x_list);

    // Monomial-block rows of M·x^j, j = 0 … r-2, against those of 1.
    let mut a = RatMatrix::zeros(mono_len, mono_len);
    for j in 0..mono_len {
        let col = basis.express(&mprod.mul(&RatPoly::monomial(j, Rat::one())))?;
        for b in 0..mono_len {
            a.set(b, j, col[g_len + b].clone());
        }
    }
    let rhs_full = basis.express(&RatPoly::one())?;
    let rhs: Vec<Rat> = rhs_full[g_len..].to_vec();
    let p_coeffs = a.solve(&rhs).ok_or_else(|| Error::SingularProjection {
        at: format!(
            "x = ({})",
            x_list
                .iter()
                .map(crate::ratio_serde::rat_to_string)
                .collect::<Vec<_>>()
                .join(", ")
        ),
    })?;
    let pbar = RatPoly::from_coeffs(p_coeffs);

    let g_chi = RatPoly::one().sub(&mprod.mul(&pbar));
    let coords = basis.express(&g_chi)?;
    for (b, c) in coords[g_len..].iter().enumerate() {
        assert!(c.is_zero(), "monomial coordinate {b} must vanish");
    }
    // Zero coordinates are kept: the certificate must see them, since a
    // genuine plateau design requires every weight strictly positive.
    let mut weights = BTreeMap::new();
    for (i, c) in coords[..g_len].iter().enumerate() {
        weights.insert(r + i as u32, c.clone());
    }
    Ok((pbar, UnnormalizedWeights::candidate(r, weights)?))
}

/// Attempts of the autosearch before giving up.
pub const MAX_SHRINK_STEPS: u32 = 64;

/// Builds a law whose transition has plateaus of orders ν_1 … ν_n.
///
/// With explicit locations the projection is solved there and both
/// positivity certificates must pass exactly. Without locations, seeds
/// `x_i = (n+1-i)/(10n)` are shrunk geometrically (halving) until the
/// certificates pass; the construction is proven feasible near 0, and the
/// search is deterministic.
pub fn design_metastable(
    r: u32,
    nu_list: &[u32],
    x_list: Option<&[Rat]>,
) -> Result<DesignResult> {
    match x_list {
        Some(xs) => {
            let (pbar, chi) = projection_solve(r, nu_list, xs)?;
            let certificate = build_certificate(&chi, &pbar)?;
            let all_zero = xs.iter().all(|x| x.is_zero());
            // The reduction to the continuous construction allows zero
            // weights; genuine plateaus need every χ̄_k strictly positive.
            let chi_ok = if all_zero {
                !chi.mass().is_zero()
            } else {
                certificate.chi_positive
            };
            if !(chi_ok && certificate.p_roots_in_unit_interval == 0
                && certificate.p_at_zero.is_positive())
            {
                return Err(Error::CertificateFailure(describe_failure(&certificate)));
            }
            let product = vanishing_product(nu_list, xs).mul(&pbar);
            assemble(
                chi,
                xs.to_vec(),
                nu_list.to_vec(),
                pbar,
                product,
                certificate,
            )
        }
        None => autosearch(r, nu_list, None),
    }
}

/// Autosearch with a caller-chosen starting spread instead of the default
/// `(n+1-i)/(10n)`. The seed must be strictly decreasing in (0, 1).
pub fn design_metastable_seeded(r: u32, nu_list: &[u32], seed: &[Rat]) -> Result<DesignResult> {
    autosearch(r, nu_list, Some(seed))
}

fn autosearch(r: u32, nu_list: &[u32], seed: Option<&[Rat]>) -> Result<DesignResult> {
    let n = nu_list.len() as i64;
    if n == 0 {
        return Err(Error::InvalidArgument(
            "need a nonempty list of ν_i >= 1".into(),
        ));
    }
    let seed: Vec<Rat> = match seed {
        Some(s) => {
            validate_request(r, nu_list, s)?;
            if s.iter().all(|x| x.is_zero()) {
                return Err(Error::InvalidArgument(
                    "search seed must be strictly positive".into(),
                ));
            }
            s.to_vec()
        }
        None => (1..=n).map(|i| rat(n + 1 - i, 10 * n)).collect(),
    };
    let mut scale = Rat::one();
    for _ in 0..=MAX_SHRINK_STEPS {
        let xs: Vec<Rat> = seed.iter().map(|x| x * &scale).collect();
        match projection_solve(r, nu_list, &xs) {
            Ok((pbar, chi)) => {
                let certificate = build_certificate(&chi, &pbar)?;
                if certificate.certified {
                    let product = vanishing_product(nu_list, &xs).mul(&pbar);
                    return assemble(chi, xs, nu_list.to_vec(), pbar, product, certificate);
                }
            }
            Err(Error::SingularProjection { .. }) => {}
            Err(e) => return Err(e),
        }
        scale /= rat_int(2);
    }
    Err(Error::SearchExhausted {
        tried: MAX_SHRINK_STEPS + 1,
    })
}

fn describe_failure(c: &PositivityCertificate) -> String {
    let mut parts = Vec::new();
    if !c.chi_positive {
        parts.push(format!("smallest weight χ̄ = {} is not positive", c.chi_min));
    }
    if c.p_roots_in_unit_interval > 0 {
        parts.push(format!(
            "cofactor has {} root(s) in [0,1]",
            c.p_roots_in_unit_interval
        ));
    }
    if !c.p_at_zero.is_positive() {
        parts.push(format!("cofactor value at 0 is {}", c.p_at_zero));
    }
    parts.join("; ")
}
