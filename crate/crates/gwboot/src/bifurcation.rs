//! Scalar maps near a tangency: decay bounds, perturbed exit times, and
//! the envelope integrals that bound them.
//!
//! Two regimes share one harness. In *tangency* mode the map decrements by
//! roughly `c (y - y0)^e` above a fixed point `y0` and the orbit decays
//! polynomially toward it. In *perturbed* mode a constant `ε` is added to
//! the decrement, the fixed point disappears, and the orbit crosses the
//! former tangency in a long but finite plateau whose length rescales as
//! `N ε^{1 - 1/(2α)}` and converges to an explicit integral.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::precision::{PolyEval, Precision, RealScalar, ESCALATED_BITS, F64_BITS};
use crate::ratpoly::RatPoly;

/// Points per side in the numeric envelope check for non-closed-form maps.
const ENVELOPE_GRID: usize = 10_000;

/// Relative headroom in envelope comparisons, covering evaluation rounding.
const ENVELOPE_ROUNDING: f64 = 1e-9;

/// Escalate to software floats when the perturbation is at or below this.
const EPS_ESCALATION: f64 = 1e-6;

/// Relative error target of the adaptive envelope-integral quadrature.
const QUAD_REL_ERROR: f64 = 1e-8;

/// How the map is evaluated.
#[derive(Clone)]
pub enum MapForm {
    /// `f(y) = y - c (y - y0)^e - ε` exactly.
    PowerLaw { c: f64 },
    /// `f(y) = p(y)`; the envelope is checked numerically on a grid.
    Poly(RatPoly),
    /// Arbitrary map, evaluated in `f64` only; envelope checked on a grid.
    Callback(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for MapForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MapForm::PowerLaw { c } => write!(f, "PowerLaw {{ c: {c} }}"),
            MapForm::Poly(p) => write!(f, "Poly({p:?})"),
            MapForm::Callback(_) => write!(f, "Callback(..)"),
        }
    }
}

/// Which envelope regime a `ScalarMapSpec` asserts for its map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum MapMode {
    /// Decrement vanishes at `y0`: exponent `α ≥ 2`, no constant term.
    Tangency,
    /// Constant `ε` added to the decrement: exponent `2α`, orbit exits.
    Perturbed,
}

/// A scalar map together with the envelope constants it is asserted to
/// satisfy near `y0`.
///
/// Tangency mode asserts `c_min s^e ≤ y - f(y) ≤ c_max s^e` for
/// `s = y - y0 ∈ (0, δ)`; perturbed mode asserts
/// `c_min s^e + ε ≤ y - f(y) ≤ c_max s^e + ε` for `|s| < δ`, where the
/// constant term may carry a relative slack `eps_slack` when the map is
/// known only up to `o(ε)`. Always `0 < c_min ≤ c_max < δ^{-(e-1)}` and
/// `0 < δ < 1`.
#[derive(Clone, Debug)]
pub struct ScalarMapSpec {
    pub form: MapForm,
    pub mode: MapMode,
    pub y0: f64,
    /// Map exponent: `α` in tangency mode, `2α` in perturbed mode.
    pub exponent: u32,
    /// Smallest decrement coefficient (the slow side).
    pub c_min: f64,
    /// Largest decrement coefficient (the fast side).
    pub c_max: f64,
    pub delta: f64,
    /// Constant decrement term; zero in tangency mode.
    pub eps: f64,
    /// Validity ceiling for `eps` in perturbed mode.
    pub eps0: f64,
    /// Relative slack on the constant term admitted by the envelope check;
    /// zero demands the exact constant.
    pub eps_slack: f64,
    pub x0: f64,
    /// Pinned working precision; `None` derives it from `eps`.
    pub precision_bits: Option<u32>,
}

impl ScalarMapSpec {
    /// Power-law map in tangency mode with exact constants.
    pub fn tangency(c: f64, alpha: u32, y0: f64, delta: f64, x0: f64) -> Self {
        ScalarMapSpec {
            form: MapForm::PowerLaw { c },
            mode: MapMode::Tangency,
            y0,
            exponent: alpha,
            c_min: c,
            c_max: c,
            delta,
            eps: 0.0,
            eps0: 1.0,
            eps_slack: 0.0,
            x0,
            precision_bits: None,
        }
    }

    /// Power-law map in perturbed mode with exact constants.
    pub fn perturbed(c: f64, alpha: u32, y0: f64, delta: f64, eps: f64, eps0: f64, x0: f64) -> Self {
        ScalarMapSpec {
            form: MapForm::PowerLaw { c },
            mode: MapMode::Perturbed,
            y0,
            exponent: 2 * alpha,
            c_min: c,
            c_max: c,
            delta,
            eps,
            eps0,
            eps_slack: 0.0,
            x0,
            precision_bits: None,
        }
    }

    /// `α`: the exponent itself in tangency mode, half of it in perturbed.
    pub fn alpha(&self) -> u32 {
        match self.mode {
            MapMode::Tangency => self.exponent,
            MapMode::Perturbed => self.exponent / 2,
        }
    }

    /// Working mantissa bits: pinned if requested, otherwise escalated to
    /// software floats once `ε` is small enough that plateau steps shrink
    /// toward the `f64` resolution.
    pub fn working_bits(&self) -> Result<u32> {
        if let Some(b) = self.precision_bits {
            Precision::from_bits(b)?;
            if b > F64_BITS && matches!(self.form, MapForm::Callback(_)) {
                return Err(Error::Unsupported(
                    "callback maps evaluate in f64; extended precision needs a polynomial or power-law form".into(),
                ));
            }
            return Ok(b);
        }
        if matches!(self.form, MapForm::Callback(_)) {
            return Ok(F64_BITS);
        }
        if self.mode == MapMode::Perturbed && self.eps > 0.0 && self.eps <= EPS_ESCALATION {
            Ok(ESCALATED_BITS)
        } else {
            Ok(F64_BITS)
        }
    }

    /// The map evaluated in `f64`, used by the envelope grid check.
    fn map_f64(&self, y: f64) -> f64 {
        match &self.form {
            MapForm::PowerLaw { c } => {
                y - c * (y - self.y0).powi(self.exponent as i32) - self.eps
            }
            MapForm::Poly(p) => PolyEval::<f64>::new(p, F64_BITS).eval(&y),
            MapForm::Callback(f) => f(y),
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("y0", self.y0),
            ("c_min", self.c_min),
            ("c_max", self.c_max),
            ("delta", self.delta),
            ("eps", self.eps),
            ("eps0", self.eps0),
            ("eps_slack", self.eps_slack),
            ("x0", self.x0),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be finite, got {v}")));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "window half-width must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if self.exponent < 2 {
            return Err(Error::InvalidArgument(format!(
                "map exponent must be at least 2, got {}",
                self.exponent
            )));
        }
        if !(self.c_min > 0.0 && self.c_min <= self.c_max) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < c_min ≤ c_max, got [{}, {}]",
                self.c_min, self.c_max
            )));
        }
        let ceiling = self.delta.powi(-(self.exponent as i32 - 1));
        if self.c_max >= ceiling {
            return Err(Error::InvalidArgument(format!(
                "c_max = {} must stay below δ^(1-e) = {ceiling}",
                self.c_max
            )));
        }
        if !(0.0..1.0).contains(&self.eps_slack) {
            return Err(Error::InvalidArgument(format!(
                "constant-term slack must lie in [0, 1), got {}",
                self.eps_slack
            )));
        }
        if let MapForm::PowerLaw { c } = self.form {
            if !(c.is_finite() && self.c_min <= c && c <= self.c_max) {
                return Err(Error::InvalidArgument(format!(
                    "power-law coefficient {c} outside the envelope band [{}, {}]",
                    self.c_min, self.c_max
                )));
            }
        }
        match self.mode {
            MapMode::Tangency => {
                if self.eps != 0.0 {
                    return Err(Error::InvalidArgument(
                        "tangency mode has no constant decrement term".into(),
                    ));
                }
                // x0 = y0 is the fixed point itself and is allowed.
                if !(self.x0 >= self.y0 && self.x0 - self.y0 < self.delta) {
                    return Err(Error::InvalidArgument(format!(
                        "start {} outside [y0, y0 + δ) = [{}, {})",
                        self.x0,
                        self.y0,
                        self.y0 + self.delta
                    )));
                }
            }
            MapMode::Perturbed => {
                if !self.exponent.is_multiple_of(2) {
                    return Err(Error::InvalidArgument(format!(
                        "perturbed mode needs an even exponent 2α, got {}",
                        self.exponent
                    )));
                }
                if !(self.eps0 > 0.0 && self.eps >= 0.0 && self.eps < self.eps0) {
                    return Err(Error::InvalidArgument(format!(
                        "need 0 ≤ ε < ε₀, got ε = {} with ε₀ = {}",
                        self.eps, self.eps0
                    )));
                }
                if !(self.x0 > self.y0 && self.x0 - self.y0 < self.delta) {
                    return Err(Error::InvalidArgument(format!(
                        "start {} outside (y0, y0 + δ) = ({}, {})",
                        self.x0,
                        self.y0,
                        self.y0 + self.delta
                    )));
                }
            }
        }
        Ok(())
    }

    /// Envelope check: closed-form for power laws, a grid scan otherwise.
    fn check_envelope(&self) -> Result<()> {
        if matches!(self.form, MapForm::PowerLaw { .. }) {
            // Validation already pinned c inside [c_min, c_max]; the
            // envelope is then an algebraic identity.
            return Ok(());
        }
        let n = ENVELOPE_GRID as f64;
        let e = self.exponent as i32;
        let lo_eps = self.eps * (1.0 - self.eps_slack);
        let hi_eps = self.eps * (1.0 + self.eps_slack);
        let check = |s: f64| -> Result<()> {
            let y = self.y0 + s;
            let dec = y - self.map_f64(y);
            let pow = s.abs().powi(e);
            let lo = self.c_min * pow + lo_eps;
            let hi = self.c_max * pow + hi_eps;
            let pad = ENVELOPE_ROUNDING * hi.abs().max(1e-300);
            if dec < lo - pad || dec > hi + pad {
                return Err(Error::Refused(format!(
                    "envelope violated at y = {y}: decrement {dec:e} outside [{lo:e}, {hi:e}]"
                )));
            }
            Ok(())
        };
        match self.mode {
            MapMode::Tangency => {
                for j in 1..=ENVELOPE_GRID {
                    check(self.delta * j as f64 / (n + 1.0))?;
                }
            }
            MapMode::Perturbed => {
                for j in 1..=ENVELOPE_GRID {
                    let s = self.delta * j as f64 / (n + 1.0);
                    check(s)?;
                    check(-s)?;
                }
            }
        }
        Ok(())
    }
}

/// Map evaluator with constants pre-converted to the working scalar type.
enum Eval<T> {
    Power { y0: T, c: T, e: u32, eps: T },
    Poly(PolyEval<T>),
    Callback(Arc<dyn Fn(f64) -> f64 + Send + Sync>, u32),
}

impl<T: RealScalar> Eval<T> {
    fn new(spec: &ScalarMapSpec, bits: u32) -> Self {
        match &spec.form {
            MapForm::PowerLaw { c } => Eval::Power {
                y0: T::from_f64(spec.y0, bits),
                c: T::from_f64(*c, bits),
                e: spec.exponent,
                eps: T::from_f64(spec.eps, bits),
            },
            MapForm::Poly(p) => Eval::Poly(PolyEval::new(p, bits)),
            MapForm::Callback(f) => Eval::Callback(f.clone(), bits),
        }
    }

    fn step(&self, y: &T) -> T {
        match self {
            Eval::Power { y0, c, e, eps } => {
                let s = y.sub_ref(y0);
                let mut pow = s.clone();
                for _ in 1..*e {
                    pow = pow.mul_ref(&s);
                }
                y.sub_ref(&c.mul_ref(&pow)).sub_ref(eps)
            }
            Eval::Poly(p) => p.eval(y),
            Eval::Callback(f, bits) => T::from_f64(f(y.to_f64()), *bits),
        }
    }
}

/// Raw outcome of one orbit run.
struct RunData {
    values: Vec<f64>,
    exit_step: Option<u64>,
    window_steps: u64,
}

fn run_generic<T: RealScalar>(
    spec: &ScalarMapSpec,
    n_max: u64,
    bits: u32,
    collect: bool,
    window: Option<f64>,
    observe: &mut dyn FnMut(u64, f64) -> Result<()>,
) -> Result<RunData> {
    let eval: Eval<T> = Eval::new(spec, bits);
    let y0 = T::from_f64(spec.y0, bits);
    let exit_level = T::from_f64(spec.y0 - spec.delta, bits);
    let at_fixed_point = spec.mode == MapMode::Tangency && spec.x0 == spec.y0;

    let mut cur = T::from_f64(spec.x0, bits);
    let mut data = RunData {
        values: Vec::new(),
        exit_step: None,
        window_steps: 0,
    };
    let count_window = |v: &T, data: &mut RunData| {
        if let Some(w) = window {
            if v.sub_ref(&y0).abs_val().to_f64() <= w {
                data.window_steps += 1;
            }
        }
    };
    if collect {
        data.values.push(cur.to_f64());
    }
    count_window(&cur, &mut data);
    observe(0, cur.to_f64())?;

    for n in 1..=n_max {
        let next = eval.step(&cur);
        match spec.mode {
            MapMode::Tangency => {
                if at_fixed_point {
                    if next != cur {
                        return Err(Error::EnvelopeViolated {
                            step: n,
                            detail: format!("left the fixed point: {}", next.to_f64()),
                        });
                    }
                } else if !(next < cur) {
                    return Err(Error::EnvelopeViolated {
                        step: n,
                        detail: format!(
                            "orbit not strictly decreasing: {} -> {}",
                            cur.to_f64(),
                            next.to_f64()
                        ),
                    });
                } else if !(next > y0) {
                    return Err(Error::EnvelopeViolated {
                        step: n,
                        detail: format!("orbit fell to or below y0: {}", next.to_f64()),
                    });
                }
            }
            MapMode::Perturbed => {
                if !(next < cur) {
                    return Err(Error::EnvelopeViolated {
                        step: n,
                        detail: format!(
                            "orbit not strictly decreasing before exit: {} -> {}",
                            cur.to_f64(),
                            next.to_f64()
                        ),
                    });
                }
            }
        }
        cur = next;
        if collect {
            data.values.push(cur.to_f64());
        }
        observe(n, cur.to_f64())?;
        if cur < exit_level {
            data.exit_step = Some(n);
            break;
        }
        count_window(&cur, &mut data);
    }
    Ok(data)
}

fn run_map(
    spec: &ScalarMapSpec,
    n_max: u64,
    collect: bool,
    window: Option<f64>,
    observe: &mut dyn FnMut(u64, f64) -> Result<()>,
) -> Result<(RunData, u32)> {
    spec.validate()?;
    spec.check_envelope()?;
    let bits = spec.working_bits()?;
    let data = if bits <= F64_BITS {
        run_generic::<f64>(spec, n_max, bits, collect, window, observe)?
    } else {
        run_generic::<rug::Float>(spec, n_max, bits, collect, window, observe)?
    };
    Ok((data, bits))
}

/// Orbit of the map from `x0`, stopping at `n_max` steps or on exit below
/// `y0 - δ` (perturbed mode only; a tangency orbit never exits).
#[derive(Clone, Debug, Serialize)]
pub struct MapTrace {
    pub values: Vec<f64>,
    /// Step index of the first value below `y0 - δ`, if reached.
    pub exit_step: Option<u64>,
    pub precision_bits: u32,
}

/// Iterates the map, asserting the qualitative envelope consequences at
/// every step: strict decrease (and staying above `y0` in tangency mode).
pub fn iterate_map(spec: &ScalarMapSpec, n_max: u64) -> Result<MapTrace> {
    let (data, bits) = run_map(spec, n_max, true, None, &mut |_, _| Ok(()))?;
    Ok(MapTrace {
        values: data.values,
        exit_step: data.exit_step,
        precision_bits: bits,
    })
}

/// Polynomial decay constants and the observed margins of the two-sided
/// bound `y0 + a_lower (n + n0)^{-1/(α-1)} ≤ x_n ≤ y0 + a_upper n^{-1/(α-1)}`.
#[derive(Clone, Debug, Serialize)]
pub struct DecayBoundsReport {
    pub a_upper: f64,
    pub a_lower: f64,
    pub n0: f64,
    pub steps_checked: u64,
    /// Smallest observed `(upper bound) - x_n` over `n ≥ 1`.
    pub min_upper_margin: f64,
    /// Smallest observed `x_n - (lower bound)` over `n ≥ 1`.
    pub min_lower_margin: f64,
}

/// Runs a tangency orbit for `n_max` steps and checks it against the
/// two-sided polynomial decay bounds, which hold from `n = 1` on.
///
/// The slow envelope side `c_min` governs the upper bound
/// `a_upper = ((α-1) c_min)^{-1/(α-1)}`; the fast side governs the lower
/// one through `(1-δ)^{-α} c_max`, with the start entering only via
/// `n0 = (x0-y0)^{1-α} / ((α-1)(1-δ)^{-α} c_max)`.
pub fn decay_bounds_check(spec: &ScalarMapSpec, n_max: u64) -> Result<DecayBoundsReport> {
    if spec.mode != MapMode::Tangency {
        return Err(Error::InvalidArgument(
            "decay bounds apply to tangency-mode maps".into(),
        ));
    }
    if spec.x0 == spec.y0 {
        return Err(Error::InvalidArgument(
            "decay bounds need a start strictly above the fixed point".into(),
        ));
    }
    let a = spec.exponent as f64;
    let inv = -1.0 / (a - 1.0);
    let fast = (1.0 - spec.delta).powf(-a) * spec.c_max;
    let a_upper = ((a - 1.0) * spec.c_min).powf(inv);
    let a_lower = ((a - 1.0) * fast).powf(inv);
    let n0 = (spec.x0 - spec.y0).powf(1.0 - a) / ((a - 1.0) * fast);

    let mut min_upper = f64::INFINITY;
    let mut min_lower = f64::INFINITY;
    let y0 = spec.y0;
    let (data, _) = run_map(spec, n_max, false, None, &mut |n, x| {
        if n == 0 {
            return Ok(());
        }
        let nf = n as f64;
        let upper = y0 + a_upper * nf.powf(inv);
        let lower = y0 + a_lower * (nf + n0).powf(inv);
        if x > upper {
            return Err(Error::EnvelopeViolated {
                step: n,
                detail: format!("decay upper bound {upper} exceeded by x_n = {x}"),
            });
        }
        if x < lower {
            return Err(Error::EnvelopeViolated {
                step: n,
                detail: format!("decay lower bound {lower} undercut by x_n = {x}"),
            });
        }
        min_upper = min_upper.min(upper - x);
        min_lower = min_lower.min(x - lower);
        Ok(())
    })?;
    debug_assert!(data.exit_step.is_none());
    Ok(DecayBoundsReport {
        a_upper,
        a_lower,
        n0,
        steps_checked: n_max,
        min_upper_margin: min_upper,
        min_lower_margin: min_lower,
    })
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    fm: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson_rec(f, a, m, fa, fm, flm, left, 0.5 * tol, depth - 1)
            + simpson_rec(f, m, b, fm, fb, frm, right, 0.5 * tol, depth - 1)
    }
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(f, a, b, fa, fb, fm, whole, rel * whole.abs(), 48)
}

/// Full-line envelope integral `∫ du / (c u^{2α} + 1)`.
///
/// Substituting `u = tan θ` turns the integrand into
/// `cos^{2α-2}θ / (c sin^{2α}θ + cos^{2α}θ)`, finite on all of
/// `[-π/2, π/2]`, which an adaptive Simpson rule then resolves to relative
/// error `1e-8`.
pub fn envelope_integral(c: f64, alpha: u32) -> Result<f64> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "integral needs a positive coefficient, got {c}"
        )));
    }
    if alpha < 1 {
        return Err(Error::InvalidArgument("integral needs α ≥ 1".into()));
    }
    let m = alpha as i32;
    let g = move |th: f64| {
        let (s, co) = th.sin_cos();
        co.powi(2 * m - 2) / (c * s.powi(2 * m) + co.powi(2 * m))
    };
    let half = std::f64::consts::FRAC_PI_2;
    // Split at 0 so the seed interval never straddles the peak.
    Ok(adaptive_simpson(&g, -half, 0.0, QUAD_REL_ERROR) + adaptive_simpson(&g, 0.0, half, QUAD_REL_ERROR))
}

/// Finite-window correction `κ = 2α δ^{2α-1}` entering the exit-time
/// bounds; they are vacuous once `κ ≥ 1`.
pub fn window_correction(delta: f64, alpha: u32) -> f64 {
    2.0 * alpha as f64 * delta.powi(2 * alpha as i32 - 1)
}

/// Error-amplification constant of the comparison argument behind the
/// exit-time bounds, from the exact chain
/// `C₁ = (1 - cδ^{2α-1})^{-1}`, `C₂ = c C₁^{2α}`,
/// `C₃ = (1 + C₂ ε₀^{2α-1})^{2α} + C₁^{2α}`,
/// `C₄ = (1 + C₂ ε₀^{2α-1}) C₃`.
///
/// Defined only when `c δ^{2α-1} < 1`.
pub fn amplification_constant(c: f64, delta: f64, alpha: u32, eps0: f64) -> Option<f64> {
    let p = 2 * alpha as i32 - 1;
    let root = c * delta.powi(p);
    if !(root < 1.0) {
        return None;
    }
    let c1 = 1.0 / (1.0 - root);
    let c2 = c * c1.powi(2 * alpha as i32);
    let grow = 1.0 + c2 * eps0.powi(p);
    let c3 = grow.powi(2 * alpha as i32) + c1.powi(2 * alpha as i32);
    Some(grow * c3)
}

/// Coarse closed form `(3 + 4^α c)^{4α}` dominating the amplification
/// constant whenever `ε₀ < 1` and `c δ^{2α-1} < 1/2`.
pub fn amplification_constant_coarse(c: f64, alpha: u32) -> f64 {
    (3.0 + 4f64.powi(alpha as i32) * c).powi(4 * alpha as i32)
}

/// Exit time of one perturbed orbit against the rescaled integral bounds.
#[derive(Clone, Debug, Serialize)]
pub struct ExitReport {
    pub eps: f64,
    /// First step with `x_n < y0 - δ`.
    pub n_delta: u64,
    /// `n_delta · ε^{1 - 1/(2α)}`.
    pub rescaled: f64,
    /// Full-line integral with the slow coefficient; dominates the limit.
    pub i_upper: f64,
    /// Full-line integral with the fast coefficient.
    pub i_lower: f64,
    /// Finite-window correction `2α δ^{2α-1}` used in the bounds.
    pub kappa: f64,
    /// Sharper ε-dependent correction `max(C₄ ε^{2α-1}, κ)`, when the
    /// amplification chain is defined.
    pub kappa_at_eps: Option<f64>,
    /// `i_lower / (2 (1 + κ))`, valid for any admissible start.
    pub lower: f64,
    /// `i_lower / (1 + κ)`; the factor 2 drops once the start sits far
    /// above the window on the ε-scale, `(x0 - y0) ε^{-1/(2α)} → ∞`.
    pub lower_unhalved: f64,
    /// `i_upper / (1 - κ)`; undefined once `κ ≥ 1`.
    pub upper: Option<f64>,
    /// Whether `rescaled ∈ [lower, upper]`; `None` when `κ ≥ 1`.
    pub within_bounds: Option<bool>,
    /// The integral bounds are asserted for `α ≥ 2` only; smaller α still
    /// runs but carries this flag.
    pub outside_stated_exponent: bool,
    pub precision_bits: u32,
}

fn rescale_exponent(alpha: u32) -> f64 {
    1.0 - 1.0 / (2.0 * alpha as f64)
}

/// Runs a perturbed orbit to its exit below `y0 - δ` and compares the
/// rescaled exit time `N ε^{1-1/(2α)}` with its integral bounds.
///
/// Fails with a range error if the orbit has not exited after `n_max`
/// steps, and demands `ε > 0`.
pub fn exit_time(spec: &ScalarMapSpec, n_max: u64) -> Result<ExitReport> {
    if spec.mode != MapMode::Perturbed {
        return Err(Error::InvalidArgument(
            "exit times apply to perturbed-mode maps".into(),
        ));
    }
    if !(spec.eps > 0.0) {
        return Err(Error::InvalidArgument(
            "exit times need a strictly positive ε".into(),
        ));
    }
    let (data, bits) = run_map(spec, n_max, false, None, &mut |_, _| Ok(()))?;
    let n_delta = data.exit_step.ok_or(Error::InsufficientRange {
        t_max: n_max,
        why: format!("orbit still above y0 - δ after {n_max} steps"),
    })?;

    let alpha = spec.alpha();
    let rescaled = n_delta as f64 * spec.eps.powf(rescale_exponent(alpha));
    let i_upper = envelope_integral(spec.c_min, alpha)?;
    let i_lower = envelope_integral(spec.c_max, alpha)?;
    let kappa = window_correction(spec.delta, alpha);
    let kappa_at_eps = amplification_constant(spec.c_max, spec.delta, alpha, spec.eps0)
        .map(|c4| (c4 * spec.eps.powi(2 * alpha as i32 - 1)).max(kappa));
    let lower = i_lower / (2.0 * (1.0 + kappa));
    let lower_unhalved = i_lower / (1.0 + kappa);
    let (upper, within) = if kappa < 1.0 {
        let up = i_upper / (1.0 - kappa);
        (Some(up), Some(rescaled >= lower && rescaled <= up))
    } else {
        (None, None)
    };
    Ok(ExitReport {
        eps: spec.eps,
        n_delta,
        rescaled,
        i_upper,
        i_lower,
        kappa,
        kappa_at_eps,
        lower,
        lower_unhalved,
        upper,
        within_bounds: within,
        outside_stated_exponent: alpha < 2,
        precision_bits: bits,
    })
}

/// One ε of an exit-time limit scan.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct LimitPoint {
    pub eps: f64,
    /// Shrinking window half-width `min(1/|ln ε|, δ)`.
    pub delta_eps: f64,
    /// States of the orbit with `|x_n - y0| ≤ delta_eps`.
    pub window_steps: u64,
    /// Full exit time below `y0 - δ`.
    pub exit_steps: u64,
    /// `window_steps · ε^{1 - 1/(2α)}`.
    pub rescaled: f64,
}

/// Exit-time limit scan across an ε grid.
#[derive(Clone, Debug, Serialize)]
pub struct LimitReport {
    pub alpha: u32,
    pub c: f64,
    /// Full-line envelope integral: the predicted limit.
    pub integral: f64,
    /// Largest ε first.
    pub points: Vec<LimitPoint>,
    /// Rescaled window count at the smallest ε.
    pub limit: f64,
    /// `|limit - integral| / integral`.
    pub rel_dev: f64,
    pub outside_stated_exponent: bool,
}

/// Measures, across a decreasing ε grid, the rescaled time spent inside a
/// window around `y0` that shrinks like `1/|ln ε|`, and compares the
/// smallest-ε value with the full-line envelope integral.
///
/// Counting inside the shrinking window isolates the plateau bottleneck:
/// the approach and departure phases contribute only a vanishing share
/// after rescaling, so the count converges to the integral itself rather
/// than to a window-corrected band. Requires an exact power-law family
/// (`c_min = c = c_max`); α = 1 families run flagged.
pub fn exit_time_limit(spec: &ScalarMapSpec, eps_grid: &[f64]) -> Result<LimitReport> {
    if spec.mode != MapMode::Perturbed {
        return Err(Error::InvalidArgument(
            "exit-time limits apply to perturbed-mode maps".into(),
        ));
    }
    let c = match spec.form {
        MapForm::PowerLaw { c } if spec.c_min == c && spec.c_max == c => c,
        _ => {
            return Err(Error::InvalidArgument(
                "the limit scan needs an exact power-law family with c_min = c = c_max".into(),
            ))
        }
    };
    if eps_grid.is_empty() {
        return Err(Error::InvalidArgument("ε grid must be nonempty".into()));
    }
    let mut grid = eps_grid.to_vec();
    grid.sort_by(|a, b| b.partial_cmp(a).expect("finite grid"));
    grid.dedup();
    if grid.iter().any(|&e| !(e > 0.0 && e < spec.eps0)) {
        return Err(Error::InvalidArgument(format!(
            "every grid ε must lie in (0, ε₀ = {})",
            spec.eps0
        )));
    }

    let alpha = spec.alpha();
    let integral = envelope_integral(c, alpha)?;
    let kappa = window_correction(spec.delta, alpha);
    let resc = rescale_exponent(alpha);
    let points = grid
        .iter()
        .map(|&eps| {
            let mut sub = spec.clone();
            sub.eps = eps;
            let delta_eps = (1.0 / eps.ln().abs()).min(spec.delta);
            // Guard: ten times the predicted bulk plus the polynomial
            // approach from the window edge.
            let bulk = integral / (1.0 - kappa).max(0.05) * eps.powf(-resc);
            let edge = delta_eps.powi(1 - 2 * alpha as i32) / (c * (2.0 * alpha as f64 - 1.0));
            let n_max = (10.0 * (bulk + edge) + 1000.0) as u64;
            let (data, _) = run_map(&sub, n_max, false, Some(delta_eps), &mut |_, _| Ok(()))?;
            let exit_steps = data.exit_step.ok_or(Error::InsufficientRange {
                t_max: n_max,
                why: format!("orbit at ε = {eps} still above y0 - δ after {n_max} steps"),
            })?;
            Ok(LimitPoint {
                eps,
                delta_eps,
                window_steps: data.window_steps,
                exit_steps,
                rescaled: data.window_steps as f64 * eps.powf(resc),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let limit = points.last().expect("nonempty grid").rescaled;
    Ok(LimitReport {
        alpha,
        c,
        integral,
        points,
        limit,
        rel_dev: (limit - integral).abs() / integral,
        outside_stated_exponent: alpha < 2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics;
    use crate::ratpoly::rat;
    use num_bigint::BigInt;
    use num_rational::Ratio;

    #[test]
    fn two_hand_steps_of_a_cubic_tangency() {
        let spec = ScalarMapSpec::tangency(1.0, 3, 0.0, 0.6, 0.5);
        let trace = iterate_map(&spec, 2).unwrap();
        assert_eq!(trace.values, vec![0.5, 0.375, 0.322265625]);
        assert_eq!(trace.exit_step, None);
        assert_eq!(trace.precision_bits, 53);
    }

    #[test]
    fn fixed_point_start_stays_constant() {
        let spec = ScalarMapSpec::tangency(1.0, 2, 0.2, 0.5, 0.2);
        let trace = iterate_map(&spec, 50).unwrap();
        assert!(trace.values.iter().all(|&v| v == 0.2));
        assert_eq!(trace.values.len(), 51);
    }

    #[test]
    fn perturbed_run_is_decreasing_and_exits() {
        let spec = ScalarMapSpec::perturbed(1.0, 2, 0.0, 0.4, 1e-4, 1e-2, 0.3);
        let trace = iterate_map(&spec, 200_000).unwrap();
        let n = trace.exit_step.expect("orbit must exit");
        assert_eq!(trace.values.len() as u64, n + 1);
        assert!(*trace.values.last().unwrap() < -0.4);
        assert!(trace.values.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn decay_bounds_sandwich_quadratic() {
        // f(y) = y - y^2 started at 0.4.
        let spec = ScalarMapSpec::tangency(1.0, 2, 0.0, 0.5, 0.4);
        let rep = decay_bounds_check(&spec, 1_000_000).unwrap();
        assert_eq!(rep.a_upper, 1.0);
        assert_eq!(rep.a_lower, 0.25);
        assert!((rep.n0 - 0.625).abs() < 1e-15);
        assert!(rep.min_upper_margin > 0.0);
        assert!(rep.min_lower_margin > 0.0);
    }

    #[test]
    fn decay_bounds_sandwich_cubic() {
        let spec = ScalarMapSpec::tangency(1.0, 3, 0.0, 0.5, 0.4);
        let rep = decay_bounds_check(&spec, 10_000).unwrap();
        assert!((rep.a_upper - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(rep.a_lower, 0.25);
        assert!((rep.n0 - 0.390625).abs() < 1e-15);
        assert!(rep.min_upper_margin > 0.0);
        assert!(rep.min_lower_margin > 0.0);
    }

    #[test]
    fn quadrature_matches_closed_forms() {
        // Closed form: c^{-1/(2m)} π / (m sin(π/(2m))).
        let closed = |c: f64, m: f64| {
            c.powf(-1.0 / (2.0 * m)) * std::f64::consts::PI
                / (m * (std::f64::consts::PI / (2.0 * m)).sin())
        };
        let quartic = envelope_integral(1.0, 2).unwrap();
        assert!((quartic - 2.221441469079183).abs() < 1e-8 * quartic);
        assert!((quartic - closed(1.0, 2.0)).abs() < 1e-8 * quartic);

        let quadratic = envelope_integral(1.0, 1).unwrap();
        assert!((quadratic - std::f64::consts::PI).abs() < 1e-8 * quadratic);

        let designed = envelope_integral(10.0 / 261.0, 1).unwrap();
        assert!((designed - 16.04981853070097).abs() < 1e-7 * designed);

        let sextic = envelope_integral(1.0, 3).unwrap();
        assert!((sextic - closed(1.0, 3.0)).abs() < 1e-8 * sextic);
    }

    #[test]
    fn quadrature_scales_as_a_power_of_c() {
        for m in [1u32, 2, 3] {
            let base = envelope_integral(1.0, m).unwrap();
            let doubled = envelope_integral(2.0, m).unwrap();
            let expected = base * 2f64.powf(-1.0 / (2.0 * m as f64));
            assert!(
                (doubled - expected).abs() < 1e-7 * base,
                "α = {m}: {doubled} vs {expected}"
            );
        }
    }

    #[test]
    fn amplification_chain_matches_hand_computation() {
        // c = 1, δ = 0.1, α = 2, ε₀ = 1e-6: C₁ = 1/0.999, C₂ = 0.999^{-4},
        // C₃ ≈ 1 + C₁^4, C₄ ≈ 2.0040.
        let c4 = amplification_constant(1.0, 0.1, 2, 1e-6).unwrap();
        assert!((c4 - 2.004).abs() < 1e-3, "C4 = {c4}");
        // Coarse form (3 + 4^α c)^{4α} = 19^8.
        let coarse = amplification_constant_coarse(1.0, 2);
        assert_eq!(coarse, 19f64.powi(8));
        assert!(c4 < coarse);
        // Chain undefined once c δ^{2α-1} reaches 1.
        assert!(amplification_constant(1000.0, 0.1, 1, 0.5).is_none());
    }

    #[test]
    fn exit_time_quartic_lands_inside_its_bounds() {
        let spec = ScalarMapSpec::perturbed(1.0, 2, 0.0, 0.1, 1e-8, 1e-3, 0.09);
        let rep = exit_time(&spec, 10_000_000).unwrap();
        assert_eq!(rep.precision_bits, 128);
        assert!((rep.kappa - 0.004).abs() < 1e-15);
        // The sharper ε-dependent correction degenerates to κ here.
        assert_eq!(rep.kappa_at_eps, Some(rep.kappa));
        assert!((rep.lower - 1.1062955523302704).abs() < 1e-10);
        assert!((rep.upper.unwrap() - 2.230362920762232).abs() < 1e-10);
        assert!(!rep.outside_stated_exponent);
        assert_eq!(rep.within_bounds, Some(true));
        // Frozen run: N(1e-8) from x0 = 0.09 at 128 bits.
        assert_eq!(rep.n_delta, 2220652);
        assert!((rep.rescaled - 2.220652).abs() < 1e-9);
    }

    #[test]
    fn exit_time_is_monotone_in_eps() {
        let mut last = None;
        for eps in [1e-4, 3e-5, 1e-5] {
            let spec = ScalarMapSpec::perturbed(1.0, 2, 0.0, 0.1, eps, 1e-3, 0.09);
            let rep = exit_time(&spec, 10_000_000).unwrap();
            if let Some(prev) = last {
                assert!(rep.n_delta >= prev, "N must grow as ε shrinks");
            }
            last = Some(rep.n_delta);
        }
    }

    #[test]
    fn exit_time_far_start_clears_unhalved_lower_bound() {
        // Start far above the window on the ε-scale: x0 ε^{-1/(2α)} ≈ 9.5.
        let spec = ScalarMapSpec::perturbed(1.0, 2, 0.0, 0.4, 1e-6, 1e-2, 0.3);
        let rep = exit_time(&spec, 10_000_000).unwrap();
        assert_eq!(rep.within_bounds, Some(true));
        assert!(rep.rescaled >= rep.lower_unhalved);
    }

    #[test]
    fn exit_limit_quartic_approaches_envelope_integral() {
        let spec = ScalarMapSpec::perturbed(1.0, 2, 0.0, 0.1, 1e-5, 1e-3, 0.09);
        let rep = exit_time_limit(&spec, &[1e-5, 1e-6, 1e-8]).unwrap();
        assert_eq!(rep.points.len(), 3);
        assert!(!rep.outside_stated_exponent);
        assert!((rep.integral - 2.221441469079183).abs() < 1e-7);
        assert!(rep.rel_dev < 0.05, "limit {} vs {}", rep.limit, rep.integral);
        // Rescaled counts approach the integral from below as the window
        // widens on the ε^{1/(2α)} scale.
        let devs: Vec<f64> = rep
            .points
            .iter()
            .map(|p| (p.rescaled - rep.integral).abs())
            .collect();
        assert!(devs[2] <= devs[0]);
    }

    #[test]
    fn quadratic_family_limit_is_flagged_and_near_pi() {
        // f(y) = y - y^2 - ε: exponent 2, so α = 1 and the stated-α flag
        // trips while the measured limit still lands on π.
        let spec = ScalarMapSpec::perturbed(1.0, 1, 0.0, 0.1, 1e-6, 1e-2, 0.09);
        let rep = exit_time_limit(&spec, &[1e-6, 1e-8]).unwrap();
        assert!(rep.outside_stated_exponent);
        assert!((rep.integral - std::f64::consts::PI).abs() < 1e-7);
        assert!(rep.rel_dev < 0.05, "limit {} vs π", rep.limit);

        // Same family through exit_time: report flagged, bounds still
        // reported (κ = 2·0.1 = 0.2 < 1).
        let mut one = spec.clone();
        one.eps = 1e-6;
        let er = exit_time(&one, 10_000_000).unwrap();
        assert!(er.outside_stated_exponent);
        assert_eq!(er.kappa, 0.2);
    }

    #[test]
    fn callback_envelope_check_refuses_mismatched_constants() {
        let fast = Arc::new(|y: f64| y - 1.5 * y * y);
        let mut spec = ScalarMapSpec::tangency(1.0, 2, 0.0, 0.5, 0.4);
        spec.form = MapForm::Callback(fast);
        match iterate_map(&spec, 10) {
            Err(Error::Refused(msg)) => assert!(msg.contains("envelope violated")),
            other => panic!("expected refusal, got {other:?}"),
        }

        // A matching callback reproduces the power-law orbit exactly.
        let exact = Arc::new(|y: f64| y - y * y);
        let mut cb = ScalarMapSpec::tangency(1.0, 2, 0.0, 0.5, 0.4);
        cb.form = MapForm::Callback(exact);
        let a = iterate_map(&cb, 100).unwrap();
        let b = iterate_map(&ScalarMapSpec::tangency(1.0, 2, 0.0, 0.5, 0.4), 100).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn working_precision_follows_eps() {
        let mut spec = ScalarMapSpec::perturbed(1.0, 2, 0.0, 0.1, 1e-7, 1e-3, 0.09);
        assert_eq!(spec.working_bits().unwrap(), 128);
        spec.eps = 1e-4;
        assert_eq!(spec.working_bits().unwrap(), 53);
        spec.precision_bits = Some(256);
        assert_eq!(spec.working_bits().unwrap(), 256);

        spec.form = MapForm::Callback(Arc::new(|y: f64| y - y * y * y * y - 1e-4));
        assert!(matches!(spec.working_bits(), Err(Error::Unsupported(_))));
        spec.precision_bits = None;
        assert_eq!(spec.working_bits().unwrap(), 53);
    }

    #[test]
    fn request_validation_rejects_bad_envelopes() {
        // ε at or above its ceiling.
        let spec = ScalarMapSpec::perturbed(1.0, 2, 0.0, 0.1, 1e-2, 1e-2, 0.09);
        assert!(matches!(exit_time(&spec, 100), Err(Error::InvalidArgument(_))));

        // Start outside the window.
        let spec = ScalarMapSpec::perturbed(1.0, 2, 0.0, 0.1, 1e-4, 1e-2, 0.2);
        assert!(iterate_map(&spec, 10).is_err());

        // Odd exponent in perturbed mode.
        let mut spec = ScalarMapSpec::perturbed(1.0, 2, 0.0, 0.1, 1e-4, 1e-2, 0.09);
        spec.exponent = 3;
        assert!(iterate_map(&spec, 10).is_err());

        // Misordered band.
        let mut spec = ScalarMapSpec::tangency(1.0, 2, 0.0, 0.5, 0.4);
        spec.c_min = 2.0;
        assert!(iterate_map(&spec, 10).is_err());

        // Coefficient ceiling c_max < δ^{1-e}.
        let spec = ScalarMapSpec::tangency(5.0, 2, 0.0, 0.5, 0.4);
        assert!(iterate_map(&spec, 10).is_err());

        // Tangency mode never exits, so exit_time refuses it.
        let spec = ScalarMapSpec::tangency(1.0, 2, 0.0, 0.5, 0.4);
        assert!(matches!(exit_time(&spec, 100), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn designed_map_window_matches_plateau_measurement() {
        // The designed two-atom law with a plateau at 1/10: iterating its
        // density map just below the critical density must spend the same
        // number of steps crossing the window as the quadratic envelope
        // model predicts.
        let design = crate::designer::design_metastable(2, &[1], Some(&[rat(1, 10)])).unwrap();
        let eps = 5e-7;
        let eps_rat = Ratio::<BigInt>::from_float(eps).unwrap();
        let q = design.q_c.clone() - eps_rat;
        let h = design.xi.h_poly(&q).unwrap();

        // Expansion constants at the plateau: c = C q_c x = 10/261 and an
        // effective perturbation (x/q_c) ε, with the remaining y-dependence
        // absorbed by the band and the constant-term slack.
        let c_eff = 10.0 / 261.0;
        let eps_eff = 0.145 * eps;
        let spec = ScalarMapSpec {
            form: MapForm::Poly(h),
            mode: MapMode::Perturbed,
            y0: 0.1,
            exponent: 2,
            c_min: 0.75 * c_eff,
            c_max: 1.25 * c_eff,
            delta: 0.02,
            eps: eps_eff,
            eps0: 1e-4,
            eps_slack: 0.3,
            x0: 0.12 - 1e-5,
            precision_bits: None,
        };
        let map_rep = exit_time(&spec, 10_000_000).unwrap();
        assert_eq!(map_rep.precision_bits, 128);

        let dyn_rep =
            dynamics::measure_metastability(&design.xi, Some(0.02), &[eps], 300_000, None).unwrap();
        let plateau = &dyn_rep.plateaus[0].measurements[0];
        let n_dyn = plateau.plateau_length as f64;
        let n_map = map_rep.n_delta as f64;
        let rel = (n_map - n_dyn).abs() / n_dyn;
        assert!(rel < 0.10, "map {n_map} vs trajectory {n_dyn}");

        // Both rescaled counts near the truncated envelope integral.
        let rescaled_dyn = n_dyn * eps_eff.sqrt();
        assert!((map_rep.rescaled - rescaled_dyn).abs() / rescaled_dyn < 0.10);
    }
}
