//! The healthy-root recursion and everything read off from it.
//!
//! For an offspring law `ξ` with threshold `r` and initial healthy
//! probability `q`, the probability that the root of the depth-`t` tree is
//! still healthy satisfies
//!
//!   φ_0 = q,   φ_{t+1} = h_ξ(φ_t) = q · φ_t · g_ξ(φ_t),
//!
//! a nonincreasing sequence in [0, 1]. This module iterates the recursion
//! at selectable precision, extracts its limit and critical probability
//! exactly where the inputs are rational, classifies the phase transition
//! (continuous, discontinuous with plateaus, or critical only at q = 1),
//! measures plateau scaling on ε-grids, fits the critical decay exponent,
//! and maps every discontinuity of `q ↦ φ_∞(q)`.

use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fitting::LeastSquares;
use crate::offspring::{OffspringDistribution, Support};
use crate::precision::{
    PolyEval, Precision, RealScalar, ESCALATION_GAP, ESCALATION_STEPS, F64_BITS,
};
use crate::ratio_serde::rat_string_opt;
use crate::ratpoly::{isolate_roots, rat, refine_root, Argmax, IsolatedRoot, Rat, RatPoly};

/// Hard cap on trace length when a stopping rule supplies none of its own:
/// bounds memory (8 bytes per step) and guards non-terminating Below runs.
pub const DEFAULT_STEP_CAP: u64 = 20_000_000;

/// Stopping rule for [`iterate`]. Every rule carries a step cap; hitting
/// the cap stops with [`StopReason::MaxSteps`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StopRule {
    /// Stop once successive values differ by at most `tol`.
    Converged { tol: f64, cap: u64 },
    /// Stop at the first value strictly below `threshold`.
    Below { threshold: f64, cap: u64 },
    /// Run exactly `steps` iterations.
    MaxSteps { steps: u64 },
}

impl StopRule {
    pub fn converged(tol: f64) -> Self {
        StopRule::Converged {
            tol,
            cap: DEFAULT_STEP_CAP,
        }
    }

    pub fn below(threshold: f64) -> Self {
        StopRule::Below {
            threshold,
            cap: DEFAULT_STEP_CAP,
        }
    }

    pub fn max_steps(steps: u64) -> Self {
        StopRule::MaxSteps { steps }
    }

    pub fn with_cap(self, new_cap: u64) -> Self {
        match self {
            StopRule::Converged { tol, .. } => StopRule::Converged { tol, cap: new_cap },
            StopRule::Below { threshold, .. } => StopRule::Below {
                threshold,
                cap: new_cap,
            },
            StopRule::MaxSteps { .. } => StopRule::MaxSteps { steps: new_cap },
        }
    }

    fn cap(&self) -> u64 {
        match self {
            StopRule::Converged { cap, .. } | StopRule::Below { cap, .. } => *cap,
            StopRule::MaxSteps { steps } => *steps,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            StopRule::Converged { tol, .. } if !(*tol > 0.0) => Err(Error::InvalidArgument(
                format!("convergence tolerance must be positive, got {tol}"),
            )),
            StopRule::Below { threshold, .. } if !threshold.is_finite() => Err(
                Error::InvalidArgument(format!("exit threshold must be finite, got {threshold}")),
            ),
            _ => Ok(()),
        }
    }
}

/// Why a trace ended.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum StopReason {
    Converged { tol: f64 },
    Exited { threshold: f64 },
    MaxSteps,
}

/// The sequence φ_0, φ_1, …, φ_T at one value of `q`.
///
/// Values are `f64` snapshots even when the iteration ran at higher
/// precision; the internal state never passes through `f64` between steps.
#[derive(Clone, Debug, Serialize)]
pub struct PhiTrace {
    pub q: f64,
    pub precision_bits: u32,
    pub values: Vec<f64>,
    pub stop_reason: StopReason,
}

impl PhiTrace {
    /// Wraps precomputed values (for analyzing imported or synthetic
    /// sequences). Enforces the trace invariants.
    pub fn synthetic(values: Vec<f64>, stop_reason: StopReason) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("empty trace".into()));
        }
        for w in values.windows(2) {
            if !(w[1] <= w[0]) {
                return Err(Error::InvalidArgument(format!(
                    "trace must be nonincreasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("trace values must lie in [0,1]".into()));
        }
        Ok(PhiTrace {
            q: values[0],
            precision_bits: F64_BITS,
            values,
            stop_reason,
        })
    }

    /// Number of iterations performed (`values` holds one more entry, φ_0).
    pub fn steps(&self) -> u64 {
        (self.values.len() - 1) as u64
    }

    pub fn last(&self) -> f64 {
        *self.values.last().unwrap()
    }
}

/// Runs the recursion φ_{t+1} = q · φ_t · g_ξ(φ_t) from φ_0 = q.
///
/// `q` is taken as an exact rational so that runs at the critical
/// probability are exactly critical; the polynomial `h_ξ` is built exactly
/// and only then rounded into the working precision. Infinite-support laws
/// are iterated through the truncated series (f64 only). Rounding can never
/// break the analytic monotonicity: each step is clamped into [0, φ_t].
pub fn iterate(
    xi: &OffspringDistribution,
    q: &Rat,
    stop: StopRule,
    precision: Precision,
) -> Result<PhiTrace> {
    check_prob_rat(q)?;
    stop.validate()?;
    match xi.support() {
        Support::Finite(_) => {
            let h = xi.h_poly(q)?;
            match precision {
                Precision::F64 => Ok(run_loop::<f64>(&h, q, stop, F64_BITS)),
                Precision::Mpfr(bits) => Ok(run_loop::<rug::Float>(&h, q, stop, bits)),
            }
        }
        Support::Claim39Tail => {
            if precision != Precision::F64 {
                return Err(Error::Unsupported(
                    "extended precision needs the exact polynomial; the infinite-support law has none".into(),
                ));
            }
            run_tail_loop(q, stop)
        }
    }
}

fn check_prob_rat(q: &Rat) -> Result<()> {
    if q.is_negative() || q > &Rat::one() {
        return Err(Error::InvalidArgument(format!(
            "probability out of range: {q}"
        )));
    }
    Ok(())
}

fn run_loop<T: RealScalar>(h: &RatPoly, q: &Rat, stop: StopRule, bits: u32) -> PhiTrace {
    let heval: PolyEval<T> = PolyEval::new(h, bits);
    let mut cur = T::from_rat(q, bits);
    let zero = T::zero(bits);
    let mut values = Vec::with_capacity(1024.min(stop.cap() as usize + 1));
    values.push(cur.to_f64());
    let mut reason = StopReason::MaxSteps;
    let cap = stop.cap();
    let mut t = 0u64;
    while t < cap {
        let mut next = heval.eval(&cur);
        if next > cur {
            next = cur.clone();
        }
        if next < zero {
            next = zero.clone();
        }
        values.push(next.to_f64());
        t += 1;
        match stop {
            StopRule::Converged { tol, .. } => {
                if cur.sub_ref(&next).to_f64() <= tol {
                    reason = StopReason::Converged { tol };
                    break;
                }
            }
            StopRule::Below { threshold, .. } => {
                if next.to_f64() < threshold {
                    reason = StopReason::Exited { threshold };
                    break;
                }
            }
            StopRule::MaxSteps { .. } => {}
        }
        cur = next;
    }
    PhiTrace {
        q: q.to_f64().unwrap(),
        precision_bits: bits,
        values,
        stop_reason: reason,
    }
}

// The heavy-tail family has g ≡ 1 identically on [0,1] (certified by the
// truncated series with its exact tail bound; see offspring::eval_g), so
// its recursion is exactly φ_{t+1} = q·φ_t. Iterating the partial sums
// instead would cost (r-1)/(tol·φ_t) terms per step with a systematic
// downward bias growing as φ_t shrinks, approximating a constant the
// module has already certified.
fn run_tail_loop(q: &Rat, stop: StopRule) -> Result<PhiTrace> {
    let qf = q.to_f64().unwrap();
    let mut cur = qf;
    let mut values = vec![cur];
    let mut reason = StopReason::MaxSteps;
    let cap = stop.cap();
    let mut t = 0u64;
    while t < cap {
        let next = (qf * cur).clamp(0.0, cur);
        values.push(next);
        t += 1;
        match stop {
            StopRule::Converged { tol, .. } => {
                if cur - next <= tol {
                    reason = StopReason::Converged { tol };
                    break;
                }
            }
            StopRule::Below { threshold, .. } => {
                if next < threshold {
                    reason = StopReason::Exited { threshold };
                    break;
                }
            }
            StopRule::MaxSteps { .. } => {}
        }
        cur = next;
    }
    Ok(PhiTrace {
        q: qf,
        precision_bits: F64_BITS,
        values,
        stop_reason: reason,
    })
}

/// The critical probability `q_c = 1 / max_{[0,1]} g_ξ` with its attaining
/// set.
#[derive(Clone, Debug, Serialize)]
pub struct CriticalQ {
    pub q_c: f64,
    /// Present when the maximum is attained at rational points only.
    #[serde(with = "rat_string_opt")]
    pub q_c_exact: Option<Rat>,
    /// Maximizers of g on [0, 1], exact points or brackets of width ≤ tol.
    pub argmax: Vec<ArgmaxPoint>,
}

/// One maximizer, serialized with both exact and floating forms.
#[derive(Clone, Debug, Serialize)]
pub struct ArgmaxPoint {
    pub x: f64,
    #[serde(with = "rat_string_opt")]
    pub x_exact: Option<Rat>,
}

impl ArgmaxPoint {
    fn from_argmax(a: &Argmax) -> Self {
        ArgmaxPoint {
            x: a.approx_f64(),
            x_exact: a.exact().cloned(),
        }
    }
}

/// Computes `q_c` with every maximizer located to width `tol`.
///
/// Exact for finite support: the maximum of the polynomial `g_ξ` is
/// enclosed by root isolation of `g′`, and `q_c` comes back as an exact
/// rational whenever the maximum value is rational. The infinite-support
/// law has `g ≡ 1`, maximal everywhere: `q_c = 1` with the whole interval
/// as argmax.
pub fn critical_q(xi: &OffspringDistribution, tol: f64) -> Result<CriticalQ> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tol must be positive".into()));
    }
    if let Support::Claim39Tail = xi.support() {
        // g ≡ 1: maximal everywhere at once. The attaining set is the whole
        // interval, which the point list cannot express; it is left empty.
        return Ok(CriticalQ {
            q_c: 1.0,
            q_c_exact: Some(Rat::one()),
            argmax: Vec::new(),
        });
    }
    let g = xi.g_poly()?;
    let tol_rat = rat_from_f64(tol)?;
    let m = crate::ratpoly::enclose_max(&g, &Rat::zero(), &Rat::one(), &tol_rat)?;
    // Max ≥ g(1) = 1, so inverting the enclosure only shrinks widths.
    let q_c_exact = m.is_exact().then(|| Rat::one() / &m.value_lo);
    let q_c = match &q_c_exact {
        Some(v) => v.to_f64().unwrap(),
        None => 2.0 / (m.value_lo.to_f64().unwrap() + m.value_hi.to_f64().unwrap()),
    };
    let dg = g.derivative();
    let argmax = m
        .argmax
        .iter()
        .map(|a| match a {
            Argmax::Exact(_) => ArgmaxPoint::from_argmax(a),
            Argmax::Bracket { lo, hi } => {
                let root = IsolatedRoot {
                    lo: lo.clone(),
                    hi: hi.clone(),
                    multiplicity: 1,
                    exact: None,
                };
                let refined = refine_root(&dg, &root, &tol_rat);
                ArgmaxPoint {
                    x: refined.midpoint_f64(),
                    x_exact: refined.exact,
                }
            }
        })
        .collect();
    Ok(CriticalQ {
        q_c,
        q_c_exact,
        argmax,
    })
}

fn rat_from_f64(v: f64) -> Result<Rat> {
    Rat::from_float(v).ok_or_else(|| Error::InvalidArgument(format!("not a finite number: {v}")))
}

/// The limit φ_∞ = lim φ_t.
#[derive(Clone, Debug, Serialize)]
pub struct PhiInfinity {
    pub value: f64,
    #[serde(with = "rat_string_opt")]
    pub exact: Option<Rat>,
}

/// The maximal root of `g_ξ(x) = 1/q` in [0, 1], or 0 when none exists.
pub fn phi_infinity(xi: &OffspringDistribution, q: &Rat, tol: f64) -> Result<PhiInfinity> {
    check_prob_rat(q)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tol must be positive".into()));
    }
    if q.is_zero() {
        return Ok(PhiInfinity {
            value: 0.0,
            exact: Some(Rat::zero()),
        });
    }
    if let Support::Claim39Tail = xi.support() {
        // g ≡ 1: the fixed-point equation has solutions only at q = 1,
        // where every x works and the limit from φ_0 = 1 is 1.
        let one = q.is_one();
        return Ok(PhiInfinity {
            value: if one { 1.0 } else { 0.0 },
            exact: Some(if one { Rat::one() } else { Rat::zero() }),
        });
    }
    let g = xi.g_poly()?;
    let level = Rat::one() / q;
    let p = g.sub(&RatPoly::constant(level));
    let width = rat_from_f64(tol)?;
    let roots = isolate_roots(&p, &Rat::zero(), &Rat::one(), &width)?;
    match roots.last() {
        None => Ok(PhiInfinity {
            value: 0.0,
            exact: Some(Rat::zero()),
        }),
        Some(r) => Ok(PhiInfinity {
            value: r.midpoint_f64(),
            exact: r.exact.clone(),
        }),
    }
}

/// Which of the three transition shapes `q ↦ φ_∞` takes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    /// Maximum of g attained at 1: critical only at `q_c = 1`.
    QcIsOne,
    /// Maximum attained at 0 alone: continuous transition.
    Continuous,
    /// Interior maximizers: discontinuous transition with plateaus.
    Discontinuous,
}

/// One plateau of a discontinuous transition: location, half the order of
/// tangency, and the curvature coefficient of
/// `g(x_i + u) = 1/q_c - C_i u^{2ν_i} + o(u^{2ν_i})`.
#[derive(Clone, Debug, Serialize)]
pub struct Plateau {
    pub x: f64,
    #[serde(with = "rat_string_opt")]
    pub x_exact: Option<Rat>,
    pub nu: u32,
    pub c: f64,
    #[serde(with = "rat_string_opt")]
    pub c_exact: Option<Rat>,
}

/// Continuous-case expansion `g(x) = 1/q_c - C x^ν + o(x^ν)`.
#[derive(Clone, Debug, Serialize)]
pub struct ContinuousExponent {
    pub nu: u32,
    pub c: f64,
    #[serde(with = "rat_string_opt")]
    pub c_exact: Option<Rat>,
}

/// Full classification of the transition.
#[derive(Clone, Debug, Serialize)]
pub struct TransitionClass {
    pub case: Case,
    pub q_c: f64,
    #[serde(with = "rat_string_opt")]
    pub q_c_exact: Option<Rat>,
    /// Interior plateaus, ordered x_1 > … > x_n; empty unless discontinuous.
    pub plateaus: Vec<Plateau>,
    pub continuous_exponent: Option<ContinuousExponent>,
    /// Set when the maximum is also attained at 0 alongside interior
    /// maximizers; the boundary asymptotics are then not classified.
    pub max_also_at_zero: bool,
}

// Separation tolerance for classification argmax enclosures. Far below
// any curvature scale in play; ties at this width are genuine.
const CLASSIFY_TOL: (i64, i64) = (1, 1_000_000_000_000_000_000);

/// Classifies the transition per the maximizer set of `g_ξ`.
///
/// Finite support runs fully exactly: maximizers from root isolation,
/// tangency orders from derivative multiplicities, curvatures from exact
/// Taylor shifts at rational maximizers (floating evaluation of the exact
/// derivative otherwise). The infinite-support law has constant g, its
/// maximum attained everywhere at once; no case of the trichotomy applies
/// and a degenerate-classification error is raised.
pub fn classify(xi: &OffspringDistribution) -> Result<TransitionClass> {
    if let Support::Claim39Tail = xi.support() {
        return Err(Error::DegenerateClassification {
            value: "g ≡ 1 attains its maximum everywhere in [0,1] simultaneously".into(),
        });
    }
    let g = xi.g_poly()?;
    let tol = rat(CLASSIFY_TOL.0, CLASSIFY_TOL.1);
    let m = crate::ratpoly::enclose_max(&g, &Rat::zero(), &Rat::one(), &tol)?;
    let q_c_exact = m.is_exact().then(|| Rat::one() / &m.value_lo);
    let q_c = match &q_c_exact {
        Some(v) => v.to_f64().unwrap(),
        None => 2.0 / (m.value_lo.to_f64().unwrap() + m.value_hi.to_f64().unwrap()),
    };

    let at_one = m.argmax.iter().any(|a| matches!(a, Argmax::Exact(v) if v.is_one()));
    if at_one {
        return Ok(TransitionClass {
            case: Case::QcIsOne,
            q_c: 1.0,
            q_c_exact: Some(Rat::one()),
            plateaus: Vec::new(),
            continuous_exponent: None,
            max_also_at_zero: false,
        });
    }
    let at_zero = m.argmax.iter().any(|a| matches!(a, Argmax::Exact(v) if v.is_zero()));
    let interior: Vec<&Argmax> = m
        .argmax
        .iter()
        .filter(|a| !matches!(a, Argmax::Exact(v) if v.is_zero() || v.is_one()))
        .collect();

    if interior.is_empty() {
        if !at_zero {
            return Err(Error::DegenerateClassification {
                value: "maximizer set of g is empty".into(),
            });
        }
        // g(x) = g(0) - C x^ν + …: read ν and C off the exact coefficients.
        let (nu, c_exact) = lowest_drop(&g, 0)?;
        return Ok(TransitionClass {
            case: Case::Continuous,
            q_c,
            q_c_exact,
            plateaus: Vec::new(),
            continuous_exponent: Some(ContinuousExponent {
                nu,
                c: c_exact.to_f64().unwrap(),
                c_exact: Some(c_exact),
            }),
            max_also_at_zero: false,
        });
    }

    // Interior maximizers: one plateau each.
    let dg = g.derivative();
    let mut plateaus = Vec::new();
    for a in interior {
        let plateau = match a {
            Argmax::Exact(x) => {
                // Taylor expansion at the exact point: first nonzero
                // coefficient past the constant has even index 2ν by
                // maximality, with negative value -C.
                let s = g.shifted(x);
                let j = (1..s.coeffs().len())
                    .find(|&j| !s.coeff(j).is_zero())
                    .ok_or_else(|| Error::DegenerateClassification {
                        value: "g is constant around an interior maximizer".into(),
                    })?;
                if j % 2 != 0 || s.coeff(j).is_positive() {
                    return Err(Error::DegenerateClassification {
                        value: format!("interior point {x} is not a local maximum of g"),
                    });
                }
                let c_exact = -s.coeff(j);
                Plateau {
                    x: x.to_f64().unwrap(),
                    x_exact: Some(x.clone()),
                    nu: (j / 2) as u32,
                    c: c_exact.to_f64().unwrap(),
                    c_exact: Some(c_exact),
                }
            }
            Argmax::Bracket { lo, hi } => {
                // Tangency order from the multiplicity of the g′ root the
                // bracket isolates; curvature evaluated in floating point.
                let roots = isolate_roots(&dg, lo, hi, &(hi - lo))?;
                let root = roots
                    .iter()
                    .find(|r| r.exact.is_none())
                    .or_else(|| roots.first())
                    .ok_or_else(|| Error::DegenerateClassification {
                        value: format!("no critical point inside maximizer bracket [{lo}, {hi}]"),
                    })?;
                let order = root.multiplicity + 1;
                if order % 2 != 0 {
                    return Err(Error::DegenerateClassification {
                        value: format!(
                            "odd derivative order {order} at maximizer near {}",
                            root.midpoint_f64()
                        ),
                    });
                }
                let nu = order / 2;
                let mut deriv = g.clone();
                let mut factorial = 1.0f64;
                for i in 1..=order {
                    deriv = deriv.derivative();
                    factorial *= i as f64;
                }
                let mid = root.midpoint_f64();
                Plateau {
                    x: mid,
                    x_exact: None,
                    nu,
                    c: -deriv.eval_f64(mid) / factorial,
                    c_exact: None,
                }
            }
        };
        plateaus.push(plateau);
    }
    plateaus.sort_by(|a, b| b.x.partial_cmp(&a.x).unwrap());
    Ok(TransitionClass {
        case: Case::Discontinuous,
        q_c,
        q_c_exact,
        plateaus,
        continuous_exponent: None,
        max_also_at_zero: at_zero,
    })
}

/// First index `j > at` with a nonzero Taylor coefficient, with its negated
/// value; errors if the polynomial is constant past `at`.
fn lowest_drop(p: &RatPoly, at: usize) -> Result<(u32, Rat)> {
    let j = ((at + 1)..p.coeffs().len())
        .find(|&j| !p.coeff(j).is_zero())
        .ok_or_else(|| Error::DegenerateClassification {
            value: "g has no nonconstant term".into(),
        })?;
    let c = p.coeff(j);
    if c.is_positive() {
        return Err(Error::DegenerateClassification {
            value: "g increases away from its boundary maximizer".into(),
        });
    }
    Ok(((j - at) as u32, -c))
}

/// δ-entrance and δ-exit of one plateau level inside a trace.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct PlateauMeasurement {
    pub x: f64,
    pub delta: f64,
    /// `q_c - q` for the trace measured, when known.
    pub epsilon: Option<f64>,
    pub tau_minus: u64,
    pub tau_plus: u64,
    pub plateau_length: u64,
}

/// First times the trace drops strictly below `x + δ` and `x - δ`.
///
/// Comparisons are strict, mirroring the definition of the entrance and
/// exit times; equality does not count as a crossing.
pub fn entrance_exit(trace: &PhiTrace, x: f64, delta: f64) -> Result<PlateauMeasurement> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "window half-width must be positive, got {delta}"
        )));
    }
    let upper = x + delta;
    let lower = x - delta;
    let tau_minus = trace.values.iter().position(|&v| v < upper);
    let tau_plus = trace.values.iter().position(|&v| v < lower);
    match (tau_minus, tau_plus) {
        (Some(tm), Some(tp)) => Ok(PlateauMeasurement {
            x,
            delta,
            epsilon: None,
            tau_minus: tm as u64,
            tau_plus: tp as u64,
            plateau_length: (tp - tm) as u64,
        }),
        _ => Err(Error::NotExited {
            threshold: lower,
            last: trace.last(),
        }),
    }
}

/// Per-plateau scaling extracted from an ε-grid of near-critical runs.
#[derive(Clone, Debug, Serialize)]
pub struct PlateauScaling {
    pub x: f64,
    pub nu: u32,
    pub expected_slope: f64,
    pub fitted_slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// One measurement per completed grid point, largest ε first.
    pub measurements: Vec<PlateauMeasurement>,
    /// Leading-order step count predicted by the continuum approximation,
    /// per completed grid point (ν = 1 plateaus only).
    pub predicted_lengths: Vec<Option<f64>>,
}

/// Metastability measurement across an ε-grid.
#[derive(Clone, Debug, Serialize)]
pub struct MetastabilityReport {
    pub classification: TransitionClass,
    pub delta: f64,
    /// Grid points actually completed (trace exited below δ within t_max).
    pub eps_completed: Vec<f64>,
    /// Grid points that hit t_max before exiting.
    pub eps_incomplete: Vec<f64>,
    pub precision_bits_used: Vec<u32>,
    pub plateaus: Vec<PlateauScaling>,
    /// Entrance time of the first plateau per completed ε.
    pub entrance_times: Vec<u64>,
    /// Gap i holds τ⁻ of level i+1 minus τ⁺ of level i (the level after
    /// the last plateau is 0, entered when the trace drops below δ).
    pub gaps: Vec<Vec<u64>>,
    pub entrance_bounded: bool,
    pub gaps_bounded: bool,
    pub incomplete: bool,
}

/// Half-width cap for the default plateau window.
pub const DEFAULT_DELTA_CAP: f64 = 0.05;

/// Default window half-width: half the smallest gap between consecutive
/// critical elements 1 > x_1 > … > x_n > 0, capped at 0.05.
pub fn default_delta(plateaus: &[Plateau]) -> f64 {
    let mut pts = vec![1.0];
    pts.extend(plateaus.iter().map(|p| p.x));
    pts.push(0.0);
    let min_gap = pts
        .windows(2)
        .map(|w| w[0] - w[1])
        .fold(f64::INFINITY, f64::min);
    (min_gap / 2.0).min(DEFAULT_DELTA_CAP)
}

/// Leading-order plateau length of a ν = 1 plateau from the continuum
/// limit of the recursion: crossing `u' = -(c_eff u² + ε_eff)` through a
/// window of half-width δ takes
///
///   2 · arctan(δ · sqrt(c_eff/ε_eff)) / sqrt(c_eff · ε_eff)
///
/// steps (the full-line count π/sqrt(c_eff·ε_eff) as δ/sqrt(ε) → ∞).
pub fn ode_plateau_prediction(nu: u32, c_eff: f64, eps_eff: f64, delta: f64) -> Option<f64> {
    if nu != 1 || !(c_eff > 0.0) || !(eps_eff > 0.0) {
        return None;
    }
    Some(2.0 * (delta * (c_eff / eps_eff).sqrt()).atan() / (c_eff * eps_eff).sqrt())
}

/// Runs the recursion at `q = q_c - ε` across the grid and measures every
/// plateau: entrance and exit times, window-crossing lengths, the
/// log-length vs log-ε slope per plateau, and the boundedness checks on
/// entrance times and inter-plateau gaps.
///
/// Precision per grid point follows the escalation policy unless
/// `precision_bits` pins it. Grid points whose trace fails to exit below δ
/// within `t_max` steps are reported incomplete and excluded from fits.
pub fn measure_metastability(
    xi: &OffspringDistribution,
    delta: Option<f64>,
    eps_grid: &[f64],
    t_max: u64,
    precision_bits: Option<u32>,
) -> Result<MetastabilityReport> {
    let class = classify(xi)?;
    if class.case != Case::Discontinuous {
        return Err(Error::InvalidArgument(
            "metastability measurement needs a discontinuous transition with plateaus".into(),
        ));
    }
    let q_c = class
        .q_c_exact
        .clone()
        .ok_or_else(|| Error::Unsupported("irrational q_c in measurement".into()))?;
    if eps_grid.is_empty() || eps_grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument(
            "ε grid must be nonempty and strictly decreasing".into(),
        ));
    }
    let delta = match delta {
        Some(d) => d,
        None => default_delta(&class.plateaus),
    };
    // Windows stay disjoint iff δ is at most half the smallest gap between
    // consecutive critical elements (the 0.05 cap binds the default only).
    let mut pts = vec![1.0];
    pts.extend(class.plateaus.iter().map(|p| p.x));
    pts.push(0.0);
    let half_gap = pts
        .windows(2)
        .map(|w| (w[0] - w[1]) / 2.0)
        .fold(f64::INFINITY, f64::min);
    if !(delta > 0.0) || delta > half_gap {
        return Err(Error::InvalidArgument(format!(
            "δ = {delta} outside (0, {half_gap:.6}]: plateau windows must stay disjoint"
        )));
    }
    let pinned = precision_bits.map(Precision::from_bits).transpose()?;
    if eps_grid.iter().any(|&e| !(e > 0.0) || q_c.to_f64().unwrap() - e < 0.0) {
        return Err(Error::InvalidArgument(
            "every ε must satisfy 0 < ε ≤ q_c".into(),
        ));
    }

    // One independent run per grid point.
    struct RunOut {
        eps: f64,
        bits: u32,
        trace: Option<PhiTrace>,
    }
    let runs: Vec<Result<RunOut>> = eps_grid
        .par_iter()
        .map(|&eps| {
            let eps_rat = rat_from_f64(eps)?;
            let q = &q_c - &eps_rat;
            let mut precision = pinned.unwrap_or(if eps < ESCALATION_GAP {
                Precision::F64.escalated()
            } else {
                Precision::F64
            });
            let stop = StopRule::below(delta).with_cap(t_max);
            let mut trace = iterate(xi, &q, stop, precision)?;
            // Plateau-length escalation: a run that crawled past the step
            // threshold in f64 is redone at high precision.
            if pinned.is_none()
                && precision == Precision::F64
                && trace.steps() > ESCALATION_STEPS
            {
                precision = Precision::F64.escalated();
                trace = iterate(xi, &q, stop, precision)?;
            }
            let exited = matches!(trace.stop_reason, StopReason::Exited { .. });
            Ok(RunOut {
                eps,
                bits: precision.bits(),
                trace: exited.then_some(trace),
            })
        })
        .collect();

    let mut eps_completed = Vec::new();
    let mut eps_incomplete = Vec::new();
    let mut precision_bits_used = Vec::new();
    let mut entrance_times = Vec::new();
    let mut gaps: Vec<Vec<u64>> = Vec::new();
    let n = class.plateaus.len();
    let mut per_plateau: Vec<Vec<PlateauMeasurement>> = vec![Vec::new(); n];
    for run in runs {
        let run = run?;
        precision_bits_used.push(run.bits);
        let Some(trace) = run.trace else {
            eps_incomplete.push(run.eps);
            continue;
        };
        eps_completed.push(run.eps);
        let mut measurements = Vec::with_capacity(n);
        for (i, p) in class.plateaus.iter().enumerate() {
            let mut m = entrance_exit(&trace, p.x, delta)?;
            m.epsilon = Some(run.eps);
            per_plateau[i].push(m);
            measurements.push(m);
        }
        entrance_times.push(measurements[0].tau_minus);
        // Entrance below δ marks reaching the level x_{n+1} = 0.
        let tau_zero = trace
            .values
            .iter()
            .position(|&v| v < delta)
            .expect("trace exited below δ") as u64;
        let mut g = Vec::with_capacity(n);
        for i in 0..n {
            let next_entry = if i + 1 < n {
                measurements[i + 1].tau_minus
            } else {
                tau_zero
            };
            g.push(next_entry.saturating_sub(measurements[i].tau_plus));
        }
        gaps.push(g);
    }

    if eps_completed.is_empty() {
        return Err(Error::NotExited {
            threshold: delta,
            last: f64::NAN,
        });
    }

    let q_c_f = class.q_c;
    let mut plateaus_out = Vec::with_capacity(n);
    for (i, p) in class.plateaus.iter().enumerate() {
        let mut fit = LeastSquares::new();
        for m in &per_plateau[i] {
            if m.plateau_length > 0 {
                fit.push(m.epsilon.unwrap().ln(), (m.plateau_length as f64).ln());
            }
        }
        let f = fit.fit();
        let predicted = per_plateau[i]
            .iter()
            .map(|m| {
                let eps_eff = (p.x / q_c_f) * m.epsilon.unwrap();
                let c_eff = p.c * q_c_f * p.x;
                ode_plateau_prediction(p.nu, c_eff, eps_eff, delta)
            })
            .collect();
        plateaus_out.push(PlateauScaling {
            x: p.x,
            nu: p.nu,
            expected_slope: -1.0 + 1.0 / (2.0 * p.nu as f64),
            fitted_slope: f.map_or(f64::NAN, |f| f.slope),
            intercept: f.map_or(f64::NAN, |f| f.intercept),
            r_squared: f.map_or(f64::NAN, |f| f.r_squared),
            measurements: per_plateau[i].clone(),
            predicted_lengths: predicted,
        });
    }

    // Boundedness, observed as stabilization across the two smallest
    // completed ε.
    let k = eps_completed.len();
    let entrance_bounded = k >= 2 && entrance_times[k - 1] == entrance_times[k - 2];
    let gaps_bounded = k >= 2 && gaps[k - 1] == gaps[k - 2];
    Ok(MetastabilityReport {
        classification: class,
        delta,
        eps_completed,
        eps_incomplete: eps_incomplete.clone(),
        precision_bits_used,
        plateaus: plateaus_out,
        entrance_times,
        gaps,
        entrance_bounded,
        gaps_bounded,
        incomplete: !eps_incomplete.is_empty(),
    })
}

/// Fitted decay of φ_t at exact criticality.
#[derive(Clone, Debug, Serialize)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: u64,
    pub q_c: f64,
    pub precision_bits: u32,
    /// Set when q_c was irrational and the run bracketed it instead:
    /// slopes at q_c ∓ 10⁻¹².
    pub bracket_slopes: Option<(f64, f64)>,
}

/// Runs the recursion at `q = q_c` and fits `log φ_t` against `log t` over
/// the last decade `[t_max/10, t_max]`.
///
/// For a continuous transition with exponent ν the slope tends to `-1/ν`.
/// `q_c` is used as an exact rational; the (theoretically impossible for
/// rational finite-support laws, but guarded) irrational case brackets it
/// within 10⁻¹² and reports both slopes.
pub fn critical_decay(
    xi: &OffspringDistribution,
    t_max: u64,
    precision_bits: Option<u32>,
) -> Result<DecayFit> {
    if t_max < 100 {
        return Err(Error::InsufficientRange {
            t_max,
            why: "need at least one decade of t above 10 to fit".into(),
        });
    }
    let class = classify(xi)?;
    if class.case != Case::Continuous {
        return Err(Error::InvalidArgument(
            "critical decay fitting needs a continuous transition".into(),
        ));
    }
    // At exact criticality the gap is zero, so the policy escalates unless
    // the caller pinned a precision.
    let precision = match precision_bits {
        Some(bits) => Precision::from_bits(bits)?,
        None => Precision::F64.escalated(),
    };
    match class.q_c_exact {
        Some(q_c) => {
            let trace = iterate(xi, &q_c, StopRule::max_steps(t_max), precision)?;
            let f = fit_last_decade(&trace, t_max)?;
            Ok(DecayFit {
                slope: f.slope,
                intercept: f.intercept,
                r_squared: f.r_squared,
                points: f.n,
                q_c: class.q_c,
                precision_bits: precision.bits(),
                bracket_slopes: None,
            })
        }
        None => {
            let tol = 1e-12;
            let run = |q: f64| -> Result<crate::fitting::Fit> {
                let trace = iterate(xi, &rat_from_f64(q)?, StopRule::max_steps(t_max), precision)?;
                fit_last_decade(&trace, t_max)
            };
            let lo = run(class.q_c - tol)?;
            let hi = run(class.q_c + tol)?;
            Ok(DecayFit {
                slope: lo.slope,
                intercept: lo.intercept,
                r_squared: lo.r_squared,
                points: lo.n,
                q_c: class.q_c,
                precision_bits: precision.bits(),
                bracket_slopes: Some((lo.slope, hi.slope)),
            })
        }
    }
}

fn fit_last_decade(trace: &PhiTrace, t_max: u64) -> Result<crate::fitting::Fit> {
    let mut fit = LeastSquares::new();
    for t in (t_max / 10).max(1)..=trace.steps() {
        let v = trace.values[t as usize];
        if v > 0.0 {
            fit.push((t as f64).ln(), v.ln());
        }
    }
    fit.fit().ok_or_else(|| Error::InsufficientRange {
        t_max,
        why: "trace hit zero before the fitting window".into(),
    })
}

/// How `φ_∞` changes at one critical value of q.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionKind {
    /// Onset at q_c with φ_∞ rising continuously from 0.
    ContinuousOnset,
    /// Jump discontinuity driven by a local maximum of g.
    Discontinuous,
}

/// One transition of the phase diagram `q ↦ φ_∞(q)`.
#[derive(Clone, Debug, Serialize)]
pub struct PhaseTransition {
    pub q: f64,
    #[serde(with = "rat_string_opt")]
    pub q_exact: Option<Rat>,
    /// Location of the maximizer of g driving this transition.
    pub x: f64,
    #[serde(with = "rat_string_opt")]
    pub x_exact: Option<Rat>,
    /// Size of the jump of φ_∞ at q (0 for a continuous onset).
    pub jump: f64,
    #[serde(with = "rat_string_opt")]
    pub jump_exact: Option<Rat>,
    pub kind: TransitionKind,
}

// Bracket refinement width for irrational maximizers in the phase diagram.
// Value enclosures through these brackets are far tighter than any reported
// digit.
const PHASE_WIDTH: (i64, i64) = (1, 1_000_000_000_000);

/// Finds every transition of `q ↦ φ_∞`.
///
/// φ_∞(q) is the maximal root of `g = 1/q` (0 when none), so transitions
/// sit exactly where the falling level `1/q` passes a value `v = g(x*)`
/// that is a right-record: a local maximum of g on (0, 1] whose value
/// strictly exceeds g everywhere to its right (including g(1) = 1). Each
/// such level yields `q* = 1/v` with a jump from the limit below —
/// the largest root of `g = v + 0⁺` left of `x*`, or 0 when the level
/// clears g entirely — up to `x*`. A global maximum at 0 adds the
/// continuous onset at `q_c` with jump 0.
///
/// Rational maximizers give exact `q*` and jumps; irrational ones are
/// enclosed far below the reported precision.
pub fn phase_diagram(xi: &OffspringDistribution) -> Result<Vec<PhaseTransition>> {
    if let Support::Claim39Tail = xi.support() {
        return Err(Error::DegenerateClassification {
            value: "g ≡ 1: φ_∞ is 0 below q = 1 with no isolated transitions to map".into(),
        });
    }
    let g = xi.g_poly()?;
    let dg = g.derivative();
    let width = rat(PHASE_WIDTH.0, PHASE_WIDTH.1);
    let coarse = rat(1, 1 << 16);
    let roots = isolate_roots(&dg, &Rat::zero(), &Rat::one(), &coarse)?;

    // Sign of g′ between consecutive critical points decides which are
    // interior local maxima. Gaps are root-free, so any interior rational
    // sample carries the sign of the whole gap.
    let mut maxima: Vec<IsolatedRoot> = Vec::new();
    for (i, root) in roots.iter().enumerate() {
        if root.exact.as_ref().is_some_and(|x| x.is_zero() || x.is_one()) {
            continue;
        }
        let left_bound = if i == 0 {
            Rat::zero()
        } else {
            roots[i - 1].hi.clone()
        };
        let right_bound = if i + 1 < roots.len() {
            roots[i + 1].lo.clone()
        } else {
            Rat::one()
        };
        let lp = (&left_bound + &root.lo) / rat(2, 1);
        let rp = (&root.hi + &right_bound) / rat(2, 1);
        if dg.sign_at(&lp) > 0 && dg.sign_at(&rp) < 0 {
            maxima.push(refine_root(&dg, root, &width));
        }
    }

    // Right-record filter: scan maxima right to left, keeping those whose
    // value exceeds the running supremum of g to their right. The running
    // supremum starts at g(1) = 1. Overlapping enclosures are refined until
    // they separate; an exact tie is a genuine non-record and is dropped.
    let mut transitions = Vec::new();
    let mut sup_lo = Rat::one();
    let mut sup_hi = Rat::one();
    for root in maxima.iter().rev() {
        let mut root = root.clone();
        let (mut vlo, mut vhi) = value_enclosure(&g, &root);
        let mut rounds = 0;
        while vlo <= sup_hi && vhi > sup_lo {
            if vlo == vhi {
                break;
            }
            if rounds > 120 {
                return Err(Error::TieUnresolved(format!(
                    "local maximum near {} stays within the running supremum enclosure",
                    root.midpoint_f64()
                )));
            }
            root = refine_root(&dg, &root, &(root.width() / rat(4, 1)));
            (vlo, vhi) = value_enclosure(&g, &root);
            rounds += 1;
        }
        if vlo > sup_hi {
            transitions.push(transition_at_local_max(&g, &root, &vlo, &vhi)?);
        }
        if vlo > sup_lo {
            sup_lo = vlo;
        }
        if vhi > sup_hi {
            sup_hi = vhi;
        }
    }

    let cq = critical_q(xi, 1e-9)?;
    let at_zero = cq
        .argmax
        .iter()
        .any(|a| a.x_exact.as_ref().is_some_and(|x| x.is_zero()));
    if at_zero {
        transitions.push(PhaseTransition {
            q: cq.q_c,
            q_exact: cq.q_c_exact.clone(),
            x: 0.0,
            x_exact: Some(Rat::zero()),
            jump: 0.0,
            jump_exact: Some(Rat::zero()),
            kind: TransitionKind::ContinuousOnset,
        });
    }
    let at_one = cq
        .argmax
        .iter()
        .any(|a| a.x_exact.as_ref().is_some_and(|x| x.is_one()));
    if at_one {
        // Maximum value g(1) = 1 attained at the right endpoint: φ_∞
        // jumps to 1 at q = 1.
        let one_root = IsolatedRoot {
            lo: Rat::one(),
            hi: Rat::one(),
            multiplicity: 1,
            exact: Some(Rat::one()),
        };
        let v = Rat::one();
        transitions.push(transition_at_local_max(&g, &one_root, &v, &v)?);
    }
    transitions.sort_by(|a, b| a.q.partial_cmp(&b.q).unwrap());
    Ok(transitions)
}

fn value_enclosure(g: &RatPoly, root: &IsolatedRoot) -> (Rat, Rat) {
    match &root.exact {
        Some(x) => {
            let v = g.eval(x);
            (v.clone(), v)
        }
        None => g.eval_interval(&root.lo, &root.hi),
    }
}

/// φ_∞ just below the level's critical q: the largest root of `g = v + 0⁺`
/// strictly left of the maximizer. A root of `g - v` attracts roots of
/// levels just above v exactly when `g - v` is positive on an adjacent
/// root-free gap; tangencies from below (other maximizers of the same
/// value) are skipped by that test.
fn lower_limit_exact(g: &RatPoly, v: &Rat, x_star: &Rat, width: &Rat) -> Result<Option<IsolatedRoot>> {
    let level = g.sub(&RatPoly::constant(v.clone()));
    let roots = isolate_roots(&level, &Rat::zero(), x_star, width)?;
    // Gap sample points: gaps[i] sits left of roots[i]; one more gap would
    // end at x_star, whose sign never matters for roots below it.
    let mut best: Option<&IsolatedRoot> = None;
    for (i, r) in roots.iter().enumerate() {
        if r.exact.as_ref() == Some(x_star) || r.lo >= *x_star {
            continue;
        }
        let left_edge = if i == 0 {
            Rat::zero()
        } else {
            roots[i - 1].hi.clone()
        };
        let right_edge = if i + 1 < roots.len() {
            roots[i + 1].lo.clone()
        } else {
            x_star.clone()
        };
        let lp = (&left_edge + &r.lo) / rat(2, 1);
        let rp = (&r.hi + &right_edge) / rat(2, 1);
        if level.sign_at(&lp) > 0 || level.sign_at(&rp) > 0 {
            best = Some(r);
        }
    }
    Ok(best.cloned())
}

fn transition_at_local_max(
    g: &RatPoly,
    root: &IsolatedRoot,
    vlo: &Rat,
    vhi: &Rat,
) -> Result<PhaseTransition> {
    let width = rat(PHASE_WIDTH.0, PHASE_WIDTH.1);
    match &root.exact {
        Some(x) => {
            let v = vlo;
            let q_exact = Rat::one() / v;
            let lower = lower_limit_exact(g, v, x, &width)?;
            let (jump, jump_exact) = match &lower {
                None => (x.to_f64().unwrap(), Some(x.clone())),
                Some(r) => match &r.exact {
                    Some(y) => ((x - y).to_f64().unwrap(), Some(x - y)),
                    None => (x.to_f64().unwrap() - r.midpoint_f64(), None),
                },
            };
            Ok(PhaseTransition {
                q: q_exact.to_f64().unwrap(),
                q_exact: Some(q_exact),
                x: x.to_f64().unwrap(),
                x_exact: Some(x.clone()),
                jump,
                jump_exact,
                kind: TransitionKind::Discontinuous,
            })
        }
        None => {
            // Irrational maximizer: cut the level at the certified upper
            // bound vhi > v. That level has no roots near x* and its
            // largest root left of the bracket is within
            // (vhi - vlo)/|g′(x_low)| of the true limit, negligible
            // against the bracket width.
            let q = 2.0 / (vlo.to_f64().unwrap() + vhi.to_f64().unwrap());
            let level = g.sub(&RatPoly::constant(vhi.clone()));
            let below = isolate_roots(&level, &Rat::zero(), &root.lo, &width)?;
            let x_mid = root.midpoint_f64();
            let jump = match below.last() {
                None => x_mid,
                Some(r) => x_mid - r.midpoint_f64(),
            };
            Ok(PhaseTransition {
                q,
                q_exact: None,
                x: x_mid,
                x_exact: None,
                jump,
                jump_exact: None,
                kind: TransitionKind::Discontinuous,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::offspring::OffspringDistribution;

    fn fin(r: u32, pairs: &[(u32, (i64, i64))]) -> OffspringDistribution {
        let w = pairs.iter().map(|&(k, (n, d))| (k, rat(n, d))).collect();
        OffspringDistribution::finite(r, w).unwrap()
    }

    fn designed_pair() -> OffspringDistribution {
        fin(2, &[(2, (13, 18)), (3, (5, 18))])
    }

    fn two_atom() -> OffspringDistribution {
        fin(2, &[(2, (3, 5)), (5, (2, 5))])
    }

    #[test]
    fn iterate_first_steps_match_closed_forms() {
        let d2 = OffspringDistribution::dirac(2, 2).unwrap();
        let tr = iterate(&d2, &rat(9, 10), StopRule::max_steps(2), Precision::F64).unwrap();
        assert_eq!(tr.values[0], 0.9);
        assert!((tr.values[1] - 0.891).abs() < 1e-15);

        // φ_{t+1} = φ - φ³/3 at q = 2/3: φ_1 = 46/81.
        let xi = fin(2, &[(2, (3, 4)), (3, (1, 4))]);
        let tr = iterate(&xi, &rat(2, 3), StopRule::max_steps(1), Precision::F64).unwrap();
        assert!((tr.values[1] - 46.0 / 81.0).abs() < 1e-15);
        let tr = iterate(&xi, &rat(2, 3), StopRule::max_steps(1), Precision::Mpfr(128)).unwrap();
        assert!((tr.values[1] - 46.0 / 81.0).abs() < 1e-15);
    }

    #[test]
    fn iterate_at_zero_q_is_identically_zero() {
        let d2 = OffspringDistribution::dirac(2, 2).unwrap();
        let tr = iterate(&d2, &rat(0, 1), StopRule::max_steps(5), Precision::F64).unwrap();
        assert!(tr.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn iterate_traces_are_monotone_in_range() {
        for q in [rat(1, 3), rat(20, 29), rat(99, 100)] {
            let tr = iterate(
                &designed_pair(),
                &q,
                StopRule::max_steps(500),
                Precision::F64,
            )
            .unwrap();
            assert!(tr.values.windows(2).all(|w| w[1] <= w[0]));
            assert!(tr.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn iterate_infinite_support_runs_series() {
        // g ≡ 1 collapses the recursion to φ_{t+1} = q φ_t.
        let c = OffspringDistribution::claim39(2).unwrap();
        let tr = iterate(&c, &rat(1, 2), StopRule::max_steps(5), Precision::F64).unwrap();
        for (t, v) in tr.values.iter().enumerate() {
            assert!((v - 0.5f64.powi(t as i32 + 1)).abs() < 1e-9, "t={t} v={v}");
        }
        assert!(iterate(&c, &rat(1, 2), StopRule::max_steps(1), Precision::Mpfr(128)).is_err());
    }

    #[test]
    fn iterate_stop_reasons_are_truthful() {
        let d2 = OffspringDistribution::dirac(2, 2).unwrap();
        let tr = iterate(&d2, &rat(2, 5), StopRule::converged(1e-12), Precision::F64).unwrap();
        assert!(matches!(tr.stop_reason, StopReason::Converged { .. }));
        let tr = iterate(&d2, &rat(2, 5), StopRule::below(0.2), Precision::F64).unwrap();
        assert!(matches!(tr.stop_reason, StopReason::Exited { .. }));
        assert!(tr.last() < 0.2);
        let tr = iterate(&d2, &rat(9, 10), StopRule::max_steps(3), Precision::F64).unwrap();
        assert_eq!(tr.stop_reason, StopReason::MaxSteps);
        assert_eq!(tr.steps(), 3);
    }

    #[test]
    fn critical_q_exact_cases() {
        let cq = critical_q(&OffspringDistribution::dirac(2, 2).unwrap(), 1e-9).unwrap();
        assert_eq!(cq.q_c_exact, Some(rat(1, 2)));
        assert_eq!(cq.argmax.len(), 1);
        assert_eq!(cq.argmax[0].x_exact, Some(rat(0, 1)));

        let cq = critical_q(&two_atom(), 1e-9).unwrap();
        assert_eq!(cq.q_c_exact, Some(rat(5, 6)));
        assert_eq!(cq.argmax[0].x_exact, Some(rat(0, 1)));

        let cq = critical_q(&designed_pair(), 1e-9).unwrap();
        assert_eq!(cq.q_c_exact, Some(rat(20, 29)));
        assert_eq!(cq.argmax.len(), 1);
        assert_eq!(cq.argmax[0].x_exact, Some(rat(1, 10)));

        let cq = critical_q(&OffspringDistribution::claim39(2).unwrap(), 1e-9).unwrap();
        assert_eq!(cq.q_c_exact, Some(rat(1, 1)));
    }

    #[test]
    fn phi_infinity_solves_fixed_point() {
        let d2 = OffspringDistribution::dirac(2, 2).unwrap();
        let p = phi_infinity(&d2, &rat(9, 10), 1e-9).unwrap();
        assert_eq!(p.exact, Some(rat(8, 9)));
        let p = phi_infinity(&d2, &rat(2, 5), 1e-9).unwrap();
        assert_eq!(p.exact, Some(rat(0, 1)));
        let p = phi_infinity(&designed_pair(), &rat(20, 29), 1e-9).unwrap();
        assert_eq!(p.exact, Some(rat(1, 10)));
        let p = phi_infinity(&d2, &rat(0, 1), 1e-9).unwrap();
        assert_eq!(p.exact, Some(rat(0, 1)));
    }

    #[test]
    fn phi_infinity_agrees_with_iteration_limit() {
        let xi = designed_pair();
        for q in [rat(1, 2), rat(7, 10), rat(3, 4), rat(9, 10)] {
            let p = phi_infinity(&xi, &q, 1e-10).unwrap();
            let tr = iterate(&xi, &q, StopRule::converged(1e-13), Precision::F64).unwrap();
            assert!(
                (p.value - tr.last()).abs() < 1e-5,
                "q={q}: {} vs {}",
                p.value,
                tr.last()
            );
        }
    }

    #[test]
    fn classify_continuous_cases() {
        let c = classify(&OffspringDistribution::dirac(2, 2).unwrap()).unwrap();
        assert_eq!(c.case, Case::Continuous);
        assert_eq!(c.q_c_exact, Some(rat(1, 2)));
        let e = c.continuous_exponent.unwrap();
        assert_eq!((e.nu, e.c_exact), (1, Some(rat(1, 1))));

        let c = classify(&fin(2, &[(2, (3, 4)), (3, (1, 4))])).unwrap();
        assert_eq!(c.case, Case::Continuous);
        assert_eq!(c.q_c_exact, Some(rat(2, 3)));
        let e = c.continuous_exponent.unwrap();
        assert_eq!((e.nu, e.c_exact), (2, Some(rat(1, 2))));

        // The two-atom law's max sits at 0 despite interior wiggles.
        let c = classify(&two_atom()).unwrap();
        assert_eq!(c.case, Case::Continuous);
        assert_eq!(c.q_c_exact, Some(rat(5, 6)));
        let e = c.continuous_exponent.unwrap();
        assert_eq!((e.nu, e.c_exact), (1, Some(rat(3, 5))));
    }

    #[test]
    fn classify_discontinuous_designed_case() {
        let c = classify(&designed_pair()).unwrap();
        assert_eq!(c.case, Case::Discontinuous);
        assert_eq!(c.q_c_exact, Some(rat(20, 29)));
        assert!(!c.max_also_at_zero);
        assert_eq!(c.plateaus.len(), 1);
        let p = &c.plateaus[0];
        assert_eq!(p.x_exact, Some(rat(1, 10)));
        assert_eq!(p.nu, 1);
        assert_eq!(p.c_exact, Some(rat(5, 9)));
    }

    #[test]
    fn classify_rejects_degenerate_law() {
        let e = classify(&OffspringDistribution::claim39(2).unwrap()).unwrap_err();
        assert!(matches!(e, Error::DegenerateClassification { .. }));
    }

    #[test]
    fn entrance_exit_on_synthetic_trace() {
        let values: Vec<f64> = (0..=100).map(|t| 1.0 - t as f64 / 100.0).collect();
        let tr = PhiTrace::synthetic(values, StopReason::MaxSteps).unwrap();
        let m = entrance_exit(&tr, 0.5, 0.1).unwrap();
        assert_eq!((m.tau_minus, m.tau_plus, m.plateau_length), (41, 61, 20));
        // Immediate entrance when φ_0 already sits below x + δ.
        let m = entrance_exit(&tr, 0.95, 0.1).unwrap();
        assert_eq!(m.tau_minus, 0);
        // Never crossing is an error carrying the last value.
        let tr = PhiTrace::synthetic(vec![0.9, 0.8, 0.7], StopReason::MaxSteps).unwrap();
        match entrance_exit(&tr, 0.5, 0.1) {
            Err(Error::NotExited { threshold, last }) => {
                assert_eq!(threshold, 0.4);
                assert_eq!(last, 0.7);
            }
            other => panic!("expected NotExited, got {other:?}"),
        }
    }

    #[test]
    fn default_delta_respects_gaps() {
        let p = |x: f64| Plateau {
            x,
            x_exact: None,
            nu: 1,
            c: 1.0,
            c_exact: None,
        };
        // Single plateau at 0.1: gap to 0 is the binding one.
        assert!((default_delta(&[p(0.1)]) - 0.05).abs() < 1e-12);
        assert!((default_delta(&[p(0.3), p(0.24)]) - 0.03).abs() < 1e-12);
        assert!((default_delta(&[p(0.5)]) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn measure_metastability_designed_case_quick() {
        let rep = measure_metastability(
            &designed_pair(),
            Some(0.03),
            &[1e-2, 1e-3],
            200_000,
            None,
        )
        .unwrap();
        assert!(!rep.incomplete);
        assert_eq!(rep.eps_completed, vec![1e-2, 1e-3]);
        assert_eq!(rep.plateaus.len(), 1);
        let p = &rep.plateaus[0];
        assert_eq!(p.measurements.len(), 2);
        // Lengths grow as ε shrinks; the continuum prediction tracks them.
        assert!(p.measurements[1].plateau_length > p.measurements[0].plateau_length);
        for (m, pred) in p.measurements.iter().zip(&p.predicted_lengths) {
            let pred = pred.unwrap();
            let rel = (m.plateau_length as f64 - pred).abs() / pred;
            assert!(rel < 0.25, "length {} vs predicted {pred}", m.plateau_length);
        }
        assert_eq!(p.expected_slope, -0.5);
        assert!(p.fitted_slope.is_finite());
    }

    #[test]
    fn measure_metastability_rejects_continuous() {
        let e =
            measure_metastability(&OffspringDistribution::dirac(2, 2).unwrap(), None, &[1e-3], 1000, None);
        assert!(e.is_err());
    }

    #[test]
    fn measure_metastability_flags_incomplete_runs() {
        let rep = measure_metastability(
            &designed_pair(),
            Some(0.03),
            &[1e-2, 1e-5],
            2_000,
            None,
        )
        .unwrap();
        assert!(rep.incomplete);
        assert_eq!(rep.eps_completed, vec![1e-2]);
        assert_eq!(rep.eps_incomplete, vec![1e-5]);
    }

    #[test]
    fn critical_decay_guard_and_quick_fit() {
        let d2 = OffspringDistribution::dirac(2, 2).unwrap();
        assert!(matches!(
            critical_decay(&d2, 10, None),
            Err(Error::InsufficientRange { .. })
        ));
        // At q = 1/2: φ_{t+1} = φ - φ²/2 decays like 2/t: slope near -1
        // already at modest t.
        let f = critical_decay(&d2, 20_000, Some(53)).unwrap();
        assert!((f.slope + 1.0).abs() < 0.02, "slope {}", f.slope);
        assert!(f.r_squared > 0.999);
    }

    #[test]
    fn phase_diagram_single_continuous_onset() {
        let t = phase_diagram(&OffspringDistribution::dirac(2, 2).unwrap()).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].q_exact, Some(rat(1, 2)));
        assert_eq!(t[0].kind, TransitionKind::ContinuousOnset);
        assert_eq!(t[0].jump, 0.0);
    }

    #[test]
    fn phase_diagram_designed_case_single_jump() {
        let t = phase_diagram(&designed_pair()).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].q_exact, Some(rat(20, 29)));
        assert_eq!(t[0].x_exact, Some(rat(1, 10)));
        assert_eq!(t[0].jump_exact, Some(rat(1, 10)));
        assert_eq!(t[0].kind, TransitionKind::Discontinuous);
    }

    #[test]
    fn phase_diagram_two_atom_has_onset_and_interior_jump() {
        let t = phase_diagram(&two_atom()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].q_exact, Some(rat(5, 6)));
        assert_eq!(t[0].kind, TransitionKind::ContinuousOnset);
        let d = &t[1];
        assert_eq!(d.kind, TransitionKind::Discontinuous);
        assert!((d.q - 0.918_357_574_762_174_8).abs() < 1e-6, "q* = {}", d.q);
        assert!((d.x - 0.785_593_981_360_914_8).abs() < 1e-6, "x* = {}", d.x);
        assert!(
            (d.jump - 0.574_298_638_325_233_2).abs() < 1e-6,
            "jump = {}",
            d.jump
        );
    }
}
