//! Command dispatch, report assembly, and artifact emission.

use std::io::Write;
use std::path::Path;

use gwboot::bifurcation::{
    decay_bounds_check, exit_time, exit_time_limit, iterate_map, ScalarMapSpec,
};
use gwboot::designer::{design_continuous, design_metastable, design_metastable_seeded};
use gwboot::dynamics::{
    classify, critical_decay, critical_q, iterate, measure_metastability, phase_diagram, StopRule,
};
use gwboot::mcsim::{estimate_phi, prevalence, prevalence_agreement};
use gwboot::precision::Precision;
use gwboot::ratio_serde::rat_to_string;
use num_traits::ToPrimitive;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use crate::config::{CommandKind, Format, Manifest, Params, RunConfig, PRECISION_ENV, SCHEMA};

/// Failure classes, in exit-code order: input problems exit 2,
/// computation failures exit 3 (serialized to the report target),
/// I/O failures exit 4.
#[derive(Debug)]
pub enum Failure {
    Input(String),
    Compute(gwboot::Error),
    Io(String),
}

impl From<gwboot::Error> for Failure {
    fn from(e: gwboot::Error) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Compute(e)
        }
    }
}

impl From<String> for Failure {
    fn from(msg: String) -> Self {
        Failure::Input(msg)
    }
}

struct Report {
    json: Value,
    /// Tabular export, for the commands that have one.
    csv: Option<String>,
}

impl Report {
    fn json_only<T: Serialize>(value: &T) -> Result<Report, Failure> {
        Ok(Report {
            json: to_json(value)?,
            csv: None,
        })
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<Value, Failure> {
    serde_json::to_value(value).map_err(|e| Failure::Io(format!("serialization failed: {e}")))
}

/// Executes one resolved run end to end: dispatch, report, manifest.
pub fn execute(config: RunConfig) -> Result<(), Failure> {
    let precision_bits = match config.precision_bits {
        Some(b) => Some(b),
        None => match std::env::var(PRECISION_ENV) {
            Ok(s) => Some(s.trim().parse::<u32>().map_err(|_| {
                Failure::Input(format!("{PRECISION_ENV}: expected an integer, got {s:?}"))
            })?),
            Err(_) => None,
        },
    };
    let seed = config.seed.unwrap_or(0);
    let format = config.output.as_ref().map(|o| o.format).unwrap_or_default();

    let mut params = Params::new(&config.parameters);
    let outcome = dispatch(config.command, &mut params, seed, precision_bits, format);
    // A precise parameter error beats the leftover-key report (the reader
    // stops consuming keys at the first failure); unknown keys beat any
    // computation failure.
    let canonical = params.finish();
    let (report, canonical) = match (outcome, canonical) {
        (Err(Failure::Input(msg)), _) => return Err(Failure::Input(msg)),
        (_, Err(msg)) => return Err(Failure::Input(msg)),
        (Err(f), Ok(_)) => return emit_failure(&config, f),
        (Ok(r), Ok(c)) => (r, c),
    };

    let manifest = Manifest {
        schema: SCHEMA.into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config: RunConfig {
            command: config.command,
            parameters: canonical,
            output: config.output.clone(),
            seed: if uses_seed(config.command) {
                Some(seed)
            } else {
                config.seed
            },
            precision_bits,
        },
    };

    let body = match format {
        Format::Json => render_json(&with_schema(report.json)?)?,
        Format::Csv => report.csv.ok_or_else(|| {
            Failure::Input(format!(
                "command {:?} has no tabular export; use format json",
                manifest.config.command
            ))
        })?,
    };
    emit(&config, &body, &manifest)
}

fn uses_seed(cmd: CommandKind) -> bool {
    matches!(cmd, CommandKind::Simulate | CommandKind::Prevalence)
}

/// On a computation failure the failure object itself is the report.
fn emit_failure(config: &RunConfig, failure: Failure) -> Result<(), Failure> {
    let e = match failure {
        Failure::Compute(e) => e,
        other => return Err(other),
    };
    let body = render_json(&serde_json::json!({
        "schema": SCHEMA,
        "error": { "kind": error_kind(&e), "message": e.to_string() },
    }))?;
    let manifest = Manifest {
        schema: SCHEMA.into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config: config.clone(),
    };
    emit(config, &body, &manifest)?;
    Err(Failure::Compute(e))
}

fn error_kind(e: &gwboot::Error) -> &'static str {
    use gwboot::Error::*;
    match e {
        InvalidArgument(_) => "invalid_argument",
        Unsupported(_) => "unsupported",
        Refused(_) => "refused",
        NotExited { .. } => "not_exited",
        InsufficientDepth { .. } => "insufficient_depth",
        InsufficientRange { .. } => "insufficient_range",
        SingularProjection { .. } => "singular_projection",
        CertificateFailure(_) => "certificate_failure",
        SearchExhausted { .. } => "search_exhausted",
        DegenerateClassification { .. } => "degenerate_classification",
        EnvelopeViolated { .. } => "envelope_violated",
        TieUnresolved(_) => "tie_unresolved",
    }
}

fn with_schema(v: Value) -> Result<Value, Failure> {
    match v {
        Value::Object(mut m) => {
            m.insert("schema".into(), Value::String(SCHEMA.into()));
            Ok(Value::Object(m))
        }
        other => Ok(serde_json::json!({ "schema": SCHEMA, "report": other })),
    }
}

fn render_json(v: &Value) -> Result<String, Failure> {
    serde_json::to_string_pretty(v)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| Failure::Io(format!("serialization failed: {e}")))
}

fn emit(config: &RunConfig, body: &str, manifest: &Manifest) -> Result<(), Failure> {
    let manifest_json = render_json(&to_json(manifest)?)?;
    match &config.output {
        // An empty path selects stdout while keeping the format choice.
        Some(out) if !out.path.is_empty() => {
            write_atomic(Path::new(&out.path), body.as_bytes())?;
            let manifest_path = format!("{}.manifest.json", out.path);
            write_atomic(Path::new(&manifest_path), manifest_json.as_bytes())?;
        }
        _ => {
            print!("{body}");
            // The metadata channel: stdout carries only the report.
            eprint!("{manifest_json}");
        }
    }
    Ok(())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let io = |e: std::io::Error| Failure::Io(format!("writing {}: {e}", path.display()));
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.persist(path)
        .map_err(|e| Failure::Io(format!("writing {}: {}", path.display(), e.error)))?;
    Ok(())
}

fn dispatch(
    cmd: CommandKind,
    p: &mut Params,
    seed: u64,
    precision_bits: Option<u32>,
    format: Format,
) -> Result<Report, Failure> {
    let want_csv = format == Format::Csv;
    match cmd {
        CommandKind::Gk => run_gk(p),
        CommandKind::Eval => run_eval(p, want_csv),
        CommandKind::Iterate => run_iterate(p, precision_bits, want_csv),
        CommandKind::Qc => run_qc(p),
        CommandKind::Classify => run_classify(p),
        CommandKind::Design => run_design(p),
        CommandKind::Metastability => run_metastability(p, precision_bits, want_csv),
        CommandKind::PhaseDiagram => run_phase_diagram(p),
        CommandKind::Simulate => run_simulate(p, seed),
        CommandKind::Prevalence => run_prevalence(p, seed),
        CommandKind::Bifurcation => run_bifurcation(p, precision_bits, want_csv),
        CommandKind::Decay => run_decay(p, precision_bits),
    }
}

#[derive(Serialize)]
struct GkReport {
    r: u32,
    k: u32,
    degree: usize,
    /// Coefficients of g_k, constant term first, as exact rationals.
    coeffs: Vec<String>,
}

fn run_gk(p: &mut Params) -> Result<Report, Failure> {
    let k = p.u32_required("k")?;
    let r = p.u32_or("r", 2)?;
    let poly = gwboot::ratpoly::gk_poly(k, r)?;
    Report::json_only(&GkReport {
        r,
        k,
        degree: poly.degree().unwrap_or(0),
        coeffs: poly.coeffs().iter().map(rat_to_string).collect(),
    })
}

#[derive(Serialize)]
struct EvalPoint {
    x: f64,
    g: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    h: Option<f64>,
}

#[derive(Serialize)]
struct EvalReport {
    tol: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    q: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    q_exact: Option<String>,
    /// Horizontal reference line 1/q for plots of g against it.
    #[serde(skip_serializing_if = "Option::is_none")]
    inv_q: Option<f64>,
    points: Vec<EvalPoint>,
}

fn run_eval(p: &mut Params, want_csv: bool) -> Result<Report, Failure> {
    let xi = p.xi()?;
    let q = p.rat_opt("q")?;
    let xs = p.rat_list_opt("x")?;
    let grid = p.u32_opt("grid")?;
    let tol = p.f64_or("tol", 1e-12)?;

    let xs: Vec<f64> = match (xs, grid) {
        (Some(_), Some(_)) => {
            return Err(Failure::Input("give either x or grid, not both".into()))
        }
        (Some(list), None) => list
            .iter()
            .map(|r| r.to_f64().unwrap_or(f64::NAN))
            .collect(),
        (None, Some(n)) if n >= 1 => (0..=n).map(|i| i as f64 / n as f64).collect(),
        (None, Some(_)) => return Err(Failure::Input("grid: need at least 1".into())),
        (None, None) => return Err(Failure::Input("missing required parameter: x or grid".into())),
    };

    let qf = q.as_ref().map(|r| r.to_f64().unwrap());
    let mut points = Vec::with_capacity(xs.len());
    for &x in &xs {
        let g = xi.eval_g(x, tol)?;
        let h = qf.map(|q| q * x * g);
        points.push(EvalPoint { x, g, h });
    }
    let inv_q = qf.filter(|&q| q > 0.0).map(|q| 1.0 / q);
    let report = EvalReport {
        tol,
        q: qf,
        q_exact: q.as_ref().map(rat_to_string),
        inv_q,
        points,
    };

    let csv = want_csv.then(|| {
        let mut s = String::new();
        if qf.is_some() {
            s.push_str("x,g,h,inv_q\n");
            let inv = inv_q.map(fmt_f64).unwrap_or_default();
            for pt in &report.points {
                s.push_str(&format!(
                    "{},{},{},{}\n",
                    fmt_f64(pt.x),
                    fmt_f64(pt.g),
                    fmt_f64(pt.h.unwrap()),
                    inv
                ));
            }
        } else {
            s.push_str("x,g\n");
            for pt in &report.points {
                s.push_str(&format!("{},{}\n", fmt_f64(pt.x), fmt_f64(pt.g)));
            }
        }
        s
    });
    Ok(Report {
        json: to_json(&report)?,
        csv,
    })
}

fn precision_of(bits: Option<u32>) -> Precision {
    match bits {
        None => Precision::F64,
        Some(b) => Precision::Mpfr(b),
    }
}

fn run_iterate(p: &mut Params, bits: Option<u32>, want_csv: bool) -> Result<Report, Failure> {
    let xi = p.xi()?;
    let q = p.rat_required("q")?;
    let t = p.u64_opt("t")?;
    let tol = p.f64_opt("tol")?;
    let below = p.f64_opt("below")?;

    let stop = match (tol, below, t) {
        (Some(tol), None, cap) => {
            let rule = StopRule::converged(tol);
            cap.map_or(rule, |c| rule.with_cap(c))
        }
        (None, Some(th), cap) => {
            let rule = StopRule::below(th);
            cap.map_or(rule, |c| rule.with_cap(c))
        }
        (None, None, Some(steps)) => StopRule::max_steps(steps),
        (None, None, None) => {
            return Err(Failure::Input(
                "missing stopping rule: give t, tol, or below".into(),
            ))
        }
        (Some(_), Some(_), _) => {
            return Err(Failure::Input("give either tol or below, not both".into()))
        }
    };

    let trace = iterate(&xi, &q, stop, precision_of(bits))?;
    let mut json = to_json(&trace)?;
    if let Value::Object(m) = &mut json {
        m.insert("q_exact".into(), Value::String(rat_to_string(&q)));
    }
    let csv = want_csv.then(|| {
        let mut s = String::from("t,phi\n");
        for (t, v) in trace.values.iter().enumerate() {
            s.push_str(&format!("{},{}\n", t, fmt_f64(*v)));
        }
        s
    });
    Ok(Report { json, csv })
}

#[derive(Serialize)]
struct QcReport {
    /// Exact critical probability when available, else its decimal form.
    q_c: String,
    q_c_float: f64,
    /// Locations where g attains its maximum.
    argmax: Vec<f64>,
    argmax_exact: Vec<Option<String>>,
}

fn run_qc(p: &mut Params) -> Result<Report, Failure> {
    let xi = p.xi()?;
    let tol = p.f64_or("tol", 1e-9)?;
    let cq = critical_q(&xi, tol)?;
    Report::json_only(&QcReport {
        q_c: cq
            .q_c_exact
            .as_ref()
            .map(rat_to_string)
            .unwrap_or_else(|| fmt_f64(cq.q_c)),
        q_c_float: cq.q_c,
        argmax: cq.argmax.iter().map(|a| a.x).collect(),
        argmax_exact: cq
            .argmax
            .iter()
            .map(|a| a.x_exact.as_ref().map(rat_to_string))
            .collect(),
    })
}

fn run_classify(p: &mut Params) -> Result<Report, Failure> {
    let xi = p.xi()?;
    Report::json_only(&classify(&xi)?)
}

fn run_design(p: &mut Params) -> Result<Report, Failure> {
    let r = p.u32_required("r")?;
    let nus = p.u32_list_required("nus")?;
    let xs = p.rat_list_opt("xs")?;
    let seed_xs = p.rat_list_opt("seed_xs")?;
    let continuous = p.bool_or("continuous", false)?;

    let result = if continuous {
        if nus.len() != 1 || xs.is_some() || seed_xs.is_some() {
            return Err(Failure::Input(
                "continuous mode takes exactly one nu and no xs".into(),
            ));
        }
        design_continuous(r, nus[0])?
    } else if let Some(xs) = &xs {
        design_metastable(r, &nus, Some(xs))?
    } else if let Some(seed) = &seed_xs {
        design_metastable_seeded(r, &nus, seed)?
    } else {
        design_metastable(r, &nus, None)?
    };
    Report::json_only(&result)
}

fn run_metastability(p: &mut Params, bits: Option<u32>, want_csv: bool) -> Result<Report, Failure> {
    let xi = p.xi()?;
    let eps = p.f64_list_required("eps")?;
    let delta = p.f64_opt("delta")?;
    let t_max = p.u64_or("t_max", 200_000)?;

    let report = measure_metastability(&xi, delta, &eps, t_max, bits)?;
    let csv = want_csv.then(|| {
        let mut s = String::from("plateau_x,log_eps,log_length,fit_slope,fit_intercept\n");
        for plateau in &report.plateaus {
            for m in &plateau.measurements {
                s.push_str(&format!(
                    "{},{},{},{},{}\n",
                    fmt_f64(plateau.x),
                    m.epsilon.map(|e| fmt_f64(e.ln())).unwrap_or_default(),
                    fmt_f64((m.plateau_length as f64).ln()),
                    fmt_f64(plateau.fitted_slope),
                    fmt_f64(plateau.intercept),
                ));
            }
        }
        s
    });
    Ok(Report {
        json: to_json(&report)?,
        csv,
    })
}

#[derive(Serialize)]
struct PhaseDiagramReport {
    transitions: Vec<gwboot::dynamics::PhaseTransition>,
}

fn run_phase_diagram(p: &mut Params) -> Result<Report, Failure> {
    let xi = p.xi()?;
    Report::json_only(&PhaseDiagramReport {
        transitions: phase_diagram(&xi)?,
    })
}

fn run_simulate(p: &mut Params, seed: u64) -> Result<Report, Failure> {
    let xi = p.xi()?;
    let q = p.rat_required("q")?;
    let t = p.u32_required("t")?;
    let n = p.u64_or("n", 10_000)?;
    let est = estimate_phi(&xi, &q, t, n, seed)?;
    let mut json = to_json(&est)?;
    if let Value::Object(m) = &mut json {
        m.insert("seed".into(), Value::from(seed));
    }
    Ok(Report { json, csv: None })
}

fn run_prevalence(p: &mut Params, seed: u64) -> Result<Report, Failure> {
    let xi = p.xi()?;
    let q = p.rat_required("q")?;
    let radius = p.u32_required("radius")?;
    let t = p.u32_required("t")?;
    let w = p.u32_opt("w")?;
    let trials = p.u32_opt("trials")?;
    let node_cap = p.u64_opt("node_cap")?;

    match trials {
        Some(trials) => {
            let tol = p.f64_or("tol", 0.01)?;
            if node_cap.is_some() {
                return Err(Failure::Input(
                    "node_cap applies to single-tree runs, not agreement trials".into(),
                ));
            }
            let rep = prevalence_agreement(&xi, &q, radius, t, w, seed, trials, tol)?;
            let mut json = to_json(&rep)?;
            if let Value::Object(m) = &mut json {
                m.insert("seed0".into(), Value::from(seed));
            }
            Ok(Report { json, csv: None })
        }
        None => Report::json_only(&prevalence(&xi, &q, radius, t, w, seed, node_cap)?),
    }
}

#[derive(Serialize)]
struct ExitGridReport {
    task: &'static str,
    alpha: u32,
    c: f64,
    eps0: f64,
    rows: Vec<gwboot::bifurcation::ExitReport>,
}

fn run_bifurcation(p: &mut Params, bits: Option<u32>, want_csv: bool) -> Result<Report, Failure> {
    let task = p.string_or("task", "exit")?;
    let c = p.f64_required("c")?;
    let alpha = p.u32_required("alpha")?;
    let y0 = p.f64_required("y0")?;
    let delta = p.f64_required("delta")?;
    let x0 = p.f64_required("x0")?;

    match task.as_str() {
        "trace" => {
            let eps = p.f64_list_opt("eps")?;
            let n_max = p.u64_or("n_max", 1_000)?;
            let mut spec = match eps.as_deref() {
                None => ScalarMapSpec::tangency(c, alpha, y0, delta, x0),
                Some([e]) => {
                    let eps0 = p.f64_or("eps0", 10.0 * e)?;
                    ScalarMapSpec::perturbed(c, alpha, y0, delta, *e, eps0, x0)
                }
                Some(_) => {
                    return Err(Failure::Input(
                        "trace takes a single eps; use the exit task for grids".into(),
                    ))
                }
            };
            spec.precision_bits = bits;
            Report::json_only(&iterate_map(&spec, n_max)?)
        }
        "sandwich" => {
            let n_max = p.u64_or("n_max", 1_000_000)?;
            let mut spec = ScalarMapSpec::tangency(c, alpha, y0, delta, x0);
            spec.precision_bits = bits;
            Report::json_only(&decay_bounds_check(&spec, n_max)?)
        }
        "exit" => {
            let eps = p.f64_list_required("eps")?;
            let top = eps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let eps0 = p.f64_or("eps0", 10.0 * top)?;
            let n_max = p.u64_or("n_max", 100_000_000)?;
            let rows: Vec<_> = eps
                .par_iter()
                .map(|&e| {
                    let mut spec = ScalarMapSpec::perturbed(c, alpha, y0, delta, e, eps0, x0);
                    spec.precision_bits = bits;
                    exit_time(&spec, n_max)
                })
                .collect::<Result<_, _>>()?;
            let report = ExitGridReport {
                task: "exit",
                alpha,
                c,
                eps0,
                rows,
            };
            let csv = want_csv.then(|| {
                let mut s = String::from("epsilon,N,rescaled,lower,upper,within\n");
                for r in &report.rows {
                    s.push_str(&format!(
                        "{},{},{},{},{},{}\n",
                        fmt_f64(r.eps),
                        r.n_delta,
                        fmt_f64(r.rescaled),
                        fmt_f64(r.lower),
                        r.upper.map(fmt_f64).unwrap_or_default(),
                        r.within_bounds.map(|b| b.to_string()).unwrap_or_default(),
                    ));
                }
                s
            });
            Ok(Report {
                json: to_json(&report)?,
                csv,
            })
        }
        "limit" => {
            let eps = p.f64_list_required("eps")?;
            let top = eps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let eps0 = p.f64_or("eps0", 10.0 * top)?;
            let mut spec = ScalarMapSpec::perturbed(c, alpha, y0, delta, top, eps0, x0);
            spec.precision_bits = bits;
            let report = exit_time_limit(&spec, &eps)?;
            let csv = want_csv.then(|| {
                let mut s = String::from("epsilon,delta_eps,window_steps,exit_steps,rescaled\n");
                for pt in &report.points {
                    s.push_str(&format!(
                        "{},{},{},{},{}\n",
                        fmt_f64(pt.eps),
                        fmt_f64(pt.delta_eps),
                        pt.window_steps,
                        pt.exit_steps,
                        fmt_f64(pt.rescaled),
                    ));
                }
                s
            });
            Ok(Report {
                json: to_json(&report)?,
                csv,
            })
        }
        other => Err(Failure::Input(format!(
            "task: expected trace, sandwich, exit, or limit, got {other:?}"
        ))),
    }
}

fn run_decay(p: &mut Params, bits: Option<u32>) -> Result<Report, Failure> {
    let xi = p.xi()?;
    let t_max = p.u64_or("t_max", 1_000_000)?;
    Report::json_only(&critical_decay(&xi, t_max, bits)?)
}

/// Shortest representation that round-trips; stable across runs.
fn fmt_f64(f: f64) -> String {
    format!("{f}")
}
