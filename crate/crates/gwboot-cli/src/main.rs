//! Command-line frontend: every subcommand builds the same RunConfig a
//! config file would supply, so flag runs and file runs share one
//! execution path and one manifest format.

mod config;
mod run;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::Value;

use config::{CommandKind, Format, Manifest, OutputSpec, RunConfig};
use run::Failure;

#[derive(Parser)]
#[command(
    name = "gwboot",
    version,
    about = "Bootstrap percolation on Galton-Watson trees: exact critical \
             probabilities, metastable plateau design and measurement, \
             Monte Carlo checks, and scalar-map exit-time analysis"
)]
struct Cli {
    /// Run from a RunConfig or manifest JSON file instead of a subcommand.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Report destination; stdout when omitted. A manifest is written to
    /// <path>.manifest.json (or to stderr for stdout runs).
    #[arg(long, global = true, value_name = "FILE")]
    output: Option<String>,

    /// Report format (csv only for commands with tabular exports).
    #[arg(long, global = true, value_enum)]
    format: Option<FormatArg>,

    /// RNG seed for simulation commands (default 0).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Working precision in bits; also read from GWBOOT_PRECISION_BITS.
    #[arg(long, global = true)]
    precision_bits: Option<u32>,

    #[command(subcommand)]
    command: Option<Cmd>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Format {
        match f {
            FormatArg::Json => Format::Json,
            FormatArg::Csv => Format::Csv,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Exact coefficients of one child-count block g_k.
    Gk {
        #[arg(long)]
        k: u32,
        /// Infection threshold.
        #[arg(long, default_value_t = 2)]
        r: u32,
    },
    /// Evaluate g (and h when q is given) on a list or grid of points.
    Eval {
        /// Law: δk shorthand, claim39, or a JSON object.
        #[arg(long)]
        xi: String,
        /// Comma-separated points in [0, 1].
        #[arg(long)]
        x: Option<String>,
        /// Evaluate at i/N for i = 0..=N instead of an explicit list.
        #[arg(long, value_name = "N")]
        grid: Option<u32>,
        /// Healthy-start density; adds the h column and the 1/q reference.
        #[arg(long)]
        q: Option<String>,
        /// Partial-sum tolerance for the infinite-support law.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Run the recursion φ_{t+1} = q φ_t g(φ_t) from φ_0 = q.
    Iterate {
        #[arg(long)]
        xi: String,
        #[arg(long)]
        q: String,
        /// Step count (alone), or a cap when tol/below is given.
        #[arg(long)]
        t: Option<u64>,
        /// Stop when successive values differ by at most this.
        #[arg(long)]
        tol: Option<f64>,
        /// Stop at the first value below this threshold.
        #[arg(long)]
        below: Option<f64>,
    },
    /// Exact critical probability q_c = 1/max g.
    Qc {
        #[arg(long)]
        xi: String,
        /// Argmax separation tolerance.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Transition class of a law: continuous exponent or plateau list.
    Classify {
        #[arg(long)]
        xi: String,
    },
    /// Construct a law realizing requested plateau orders.
    Design {
        #[arg(long)]
        r: u32,
        /// Plateau orders ν_1,…,ν_n (one value in continuous mode).
        #[arg(long, value_delimiter = ',')]
        nus: Vec<u32>,
        /// Plateau locations; autosearch when omitted.
        #[arg(long, value_delimiter = ',')]
        xs: Option<Vec<String>>,
        /// Autosearch starting spread.
        #[arg(long, value_delimiter = ',')]
        seed_xs: Option<Vec<String>>,
        /// Use the continuous construction g_χ = 1 - x^ν P(x).
        #[arg(long)]
        continuous: bool,
    },
    /// Plateau lengths and scaling across an ε-grid at q = q_c - ε.
    Metastability {
        #[arg(long)]
        xi: String,
        /// Comma-separated ε grid.
        #[arg(long, value_delimiter = ',')]
        eps: Vec<f64>,
        /// Plateau window half-width; derived from the gaps when omitted.
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        t_max: Option<u64>,
    },
    /// All transitions of φ_∞ as a function of q.
    PhaseDiagram {
        #[arg(long)]
        xi: String,
    },
    /// Monte Carlo estimate of φ_t over sampled trees.
    Simulate {
        #[arg(long)]
        xi: String,
        #[arg(long)]
        q: String,
        #[arg(long)]
        t: u32,
        /// Number of sampled trees.
        #[arg(long)]
        n: Option<u64>,
    },
    /// Infected fraction of a ball (or annulus) on one sampled tree.
    Prevalence {
        #[arg(long)]
        xi: String,
        #[arg(long)]
        q: String,
        #[arg(long)]
        radius: u32,
        #[arg(long)]
        t: u32,
        /// Annulus width; full ball when omitted.
        #[arg(long)]
        w: Option<u32>,
        /// Run this many consecutive seeds and report the agreement rate
        /// against 1 - φ_t instead of a single measurement.
        #[arg(long)]
        trials: Option<u32>,
        /// Agreement tolerance.
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        node_cap: Option<u64>,
    },
    /// Scalar-map analysis near a tangency: orbit trace, two-sided decay
    /// sandwich, exit-time grid, or the shrinking-window limit.
    Bifurcation {
        /// trace | sandwich | exit | limit.
        #[arg(long, default_value = "exit")]
        task: String,
        /// Leading coefficient of the power-law map y - c (y-y0)^e - ε.
        #[arg(long)]
        c: f64,
        /// Tangency order: exponent α (trace/sandwich) or half the even
        /// exponent 2α (exit/limit).
        #[arg(long)]
        alpha: u32,
        #[arg(long)]
        y0: f64,
        /// Exit window half-width.
        #[arg(long)]
        delta: f64,
        /// Starting point.
        #[arg(long)]
        x0: f64,
        /// Perturbation sizes (grid for exit/limit, single for trace).
        #[arg(long, value_delimiter = ',')]
        eps: Option<Vec<f64>>,
        /// Validity ceiling for ε; defaults to 10x the largest ε.
        #[arg(long)]
        eps0: Option<f64>,
        #[arg(long)]
        n_max: Option<u64>,
    },
    /// Fit the critical decay exponent of φ_t at q = q_c.
    Decay {
        #[arg(long)]
        xi: String,
        #[arg(long)]
        t_max: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match build_config(cli) {
        Err(f) => fail(f),
        Ok(config) => match run::execute(config) {
            Ok(()) => ExitCode::SUCCESS,
            Err(f) => fail(f),
        },
    }
}

fn fail(f: Failure) -> ExitCode {
    match f {
        Failure::Input(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Failure::Compute(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
        Failure::Io(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(4)
        }
    }
}

fn build_config(cli: Cli) -> Result<RunConfig, Failure> {
    let mut config = match (cli.config, cli.command) {
        (Some(_), Some(_)) => {
            return Err(Failure::Input(
                "give a subcommand or --config, not both".into(),
            ))
        }
        (None, None) => {
            return Err(Failure::Input(
                "nothing to run: give a subcommand or --config (see --help)".into(),
            ))
        }
        (Some(path), None) => load_config(&path)?,
        (None, Some(cmd)) => from_flags(cmd),
    };

    // Flags override file values so a manifest can be rerun with, say, a
    // different output path.
    if let Some(path) = cli.output {
        let format = config.output.as_ref().map(|o| o.format).unwrap_or_default();
        config.output = Some(OutputSpec { path, format });
    }
    if let Some(f) = cli.format {
        match &mut config.output {
            Some(out) => out.format = f.into(),
            None => {
                config.output = None;
                if matches!(f, FormatArg::Csv) {
                    // CSV to stdout: carried through a format-only spec.
                    config.output = Some(OutputSpec {
                        path: String::new(),
                        format: Format::Csv,
                    });
                }
            }
        }
    }
    // An empty path means stdout; normalize it back to None but keep csv.
    if let Some(out) = &config.output {
        if out.path.is_empty() && out.format == Format::Json {
            config.output = None;
        }
    }
    if cli.seed.is_some() {
        config.seed = cli.seed;
    }
    if cli.precision_bits.is_some() {
        config.precision_bits = cli.precision_bits;
    }
    Ok(config)
}

fn load_config(path: &PathBuf) -> Result<RunConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Io(format!("reading {}: {e}", path.display())))?;
    // A manifest wraps the config; accept either form.
    if let Ok(manifest) = serde_json::from_str::<Manifest>(&text) {
        return Ok(manifest.config);
    }
    serde_json::from_str::<RunConfig>(&text)
        .map_err(|e| Failure::Input(format!("config {} does not parse: {e}", path.display())))
}

fn from_flags(cmd: Cmd) -> RunConfig {
    let mut p: BTreeMap<String, Value> = BTreeMap::new();
    let command = match cmd {
        Cmd::Gk { k, r } => {
            p.insert("k".into(), k.into());
            p.insert("r".into(), r.into());
            CommandKind::Gk
        }
        Cmd::Eval { xi, x, grid, q, tol } => {
            p.insert("xi".into(), xi.into());
            opt(&mut p, "x", x);
            opt(&mut p, "grid", grid);
            opt(&mut p, "q", q);
            opt(&mut p, "tol", tol);
            CommandKind::Eval
        }
        Cmd::Iterate { xi, q, t, tol, below } => {
            p.insert("xi".into(), xi.into());
            p.insert("q".into(), q.into());
            opt(&mut p, "t", t);
            opt(&mut p, "tol", tol);
            opt(&mut p, "below", below);
            CommandKind::Iterate
        }
        Cmd::Qc { xi, tol } => {
            p.insert("xi".into(), xi.into());
            opt(&mut p, "tol", tol);
            CommandKind::Qc
        }
        Cmd::Classify { xi } => {
            p.insert("xi".into(), xi.into());
            CommandKind::Classify
        }
        Cmd::Design { r, nus, xs, seed_xs, continuous } => {
            p.insert("r".into(), r.into());
            p.insert("nus".into(), nus.into());
            opt(&mut p, "xs", xs.map(strings));
            opt(&mut p, "seed_xs", seed_xs.map(strings));
            if continuous {
                p.insert("continuous".into(), true.into());
            }
            CommandKind::Design
        }
        Cmd::Metastability { xi, eps, delta, t_max } => {
            p.insert("xi".into(), xi.into());
            p.insert("eps".into(), eps.into());
            opt(&mut p, "delta", delta);
            opt(&mut p, "t_max", t_max);
            CommandKind::Metastability
        }
        Cmd::PhaseDiagram { xi } => {
            p.insert("xi".into(), xi.into());
            CommandKind::PhaseDiagram
        }
        Cmd::Simulate { xi, q, t, n } => {
            p.insert("xi".into(), xi.into());
            p.insert("q".into(), q.into());
            p.insert("t".into(), t.into());
            opt(&mut p, "n", n);
            CommandKind::Simulate
        }
        Cmd::Prevalence { xi, q, radius, t, w, trials, tol, node_cap } => {
            p.insert("xi".into(), xi.into());
            p.insert("q".into(), q.into());
            p.insert("radius".into(), radius.into());
            p.insert("t".into(), t.into());
            opt(&mut p, "w", w);
            opt(&mut p, "trials", trials);
            opt(&mut p, "tol", tol);
            opt(&mut p, "node_cap", node_cap);
            CommandKind::Prevalence
        }
        Cmd::Bifurcation { task, c, alpha, y0, delta, x0, eps, eps0, n_max } => {
            p.insert("task".into(), task.into());
            p.insert("c".into(), c.into());
            p.insert("alpha".into(), alpha.into());
            p.insert("y0".into(), y0.into());
            p.insert("delta".into(), delta.into());
            p.insert("x0".into(), x0.into());
            opt(&mut p, "eps", eps);
            opt(&mut p, "eps0", eps0);
            opt(&mut p, "n_max", n_max);
            CommandKind::Bifurcation
        }
        Cmd::Decay { xi, t_max } => {
            p.insert("xi".into(), xi.into());
            opt(&mut p, "t_max", t_max);
            CommandKind::Decay
        }
    };
    RunConfig {
        command,
        parameters: p,
        output: None,
        seed: None,
        precision_bits: None,
    }
}

fn opt<T: Into<Value>>(p: &mut BTreeMap<String, Value>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        p.insert(key.into(), v.into());
    }
}

fn strings(v: Vec<String>) -> Value {
    Value::Array(v.into_iter().map(Value::String).collect())
}
