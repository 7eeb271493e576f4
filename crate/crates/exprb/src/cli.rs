//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 for input errors (arguments, I/O, parse
//! failures), 3 for numerical failures (floating nodes, singular matrices,
//! step-size collapse).

use std::ffi::OsString;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use exprb_core::integrate::{cost_report, transient, StepControl};
use exprb_core::{Error as CoreError, Method, MnaSystem};
use serde::Serialize;

use crate::bench::{run_bench, BenchSpec};
use crate::generate::{generate, GenKind, GeneratorParams};
use crate::matstats::{matrices, matstats};
use crate::netlist::{build_mna, parse_netlist, NetlistDoc};
use crate::output::{
    select_columns, write_matrix_market, write_records_jsonl, write_trace_csv, write_waveform_csv,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "exprb",
    version,
    about = "Exponential Rosenbrock-Euler transient circuit simulator"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// Krylov residual tolerance.
    #[arg(long, global = true)]
    pub eps: Option<f64>,
    /// Local error budget (infinity norm).
    #[arg(long, global = true)]
    pub errbudget: Option<f64>,
    #[arg(long, global = true)]
    pub hmax: Option<f64>,
    #[arg(long, global = true)]
    pub hmin: Option<f64>,
    /// Krylov dimension cap.
    #[arg(long, global = true)]
    pub mmax: Option<usize>,
    /// Generator seed.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output file (directory for `bench`); standard output when omitted.
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    /// Write the per-iteration Krylov convergence trace (CSV) here.
    #[arg(long, global = true)]
    pub trace_krylov: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Benr,
    Er,
    Erc,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Benr => Method::Benr,
            MethodArg::Er => Method::Er,
            MethodArg::Erc => Method::Erc,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a transient analysis and write the waveform CSV.
    Simulate {
        deck: PathBuf,
        #[arg(long, value_enum, default_value = "er")]
        method: MethodArg,
        /// Nodes to record (default: all).
        #[arg(long, value_delimiter = ',')]
        nodes: Vec<String>,
        /// Run summary JSON (default: next to the CSV, or standard error).
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Step records as JSON lines.
        #[arg(long)]
        records: Option<PathBuf>,
        /// Overrides the .TRAN stop time.
        #[arg(long)]
        tstop: Option<f64>,
        /// Overrides the .TRAN step hint.
        #[arg(long)]
        step: Option<f64>,
    },
    /// Compare methods against a fixed-step BENR reference.
    Bench {
        #[arg(long, conflicts_with = "gen")]
        deck: Option<PathBuf>,
        #[arg(long)]
        gen: Option<String>,
        #[arg(long, default_value_t = 10)]
        stages: usize,
        #[arg(long, default_value_t = 0.0)]
        density: f64,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "benr,er,erc")]
        methods: Vec<MethodArg>,
        #[arg(long)]
        tstop: Option<f64>,
        #[arg(long)]
        step: Option<f64>,
        /// Reference step (default: a hundredth of the step hint).
        #[arg(long)]
        href: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        nodes: Vec<String>,
        /// Run methods concurrently; timings are re-measured serially.
        #[arg(long)]
        parallel: bool,
    },
    /// Write a generated benchmark deck.
    Gen {
        kind: String,
        #[arg(long, default_value_t = 10)]
        stages: usize,
        #[arg(long, default_value_t = 0.0)]
        density: f64,
    },
    /// Report nnz and LU fill of C, G and C/h + G as JSON.
    Matstats {
        deck: PathBuf,
        #[arg(long, default_value_t = 1e-12)]
        h: f64,
        /// Also dump C.mtx, G.mtx and CG.mtx (Matrix Market) into this directory.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
}

/// A failure mapped to an exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        let code = match e {
            CoreError::InvalidCircuit(_) | CoreError::InvalidArgument(_) => EXIT_INPUT,
            _ => EXIT_NUMERIC,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> Failure + '_ {
    move |e| Failure::input(format!("{}: {e}", path.display()))
}

/// Parses arguments, runs the command and returns the exit code. Diagnostics
/// go to standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), Failure> {
    let g = &cli.global;
    match &cli.command {
        Command::Simulate {
            deck,
            method,
            nodes,
            summary,
            records,
            tstop,
            step,
        } => simulate(
            g,
            deck,
            (*method).into(),
            nodes,
            summary.as_deref(),
            records.as_deref(),
            *tstop,
            *step,
        ),
        Command::Bench {
            deck,
            gen,
            stages,
            density,
            methods,
            tstop,
            step,
            href,
            nodes,
            parallel,
        } => {
            let doc = match (deck, gen) {
                (Some(path), _) => load(path)?,
                (None, Some(kind)) => {
                    let kind: GenKind = kind.parse().map_err(Failure::input)?;
                    generated(g, kind, *stages, *density)?
                }
                (None, None) => return Err(Failure::input("bench needs --deck or --gen")),
            };
            let sys = build_mna(&doc)?;
            let (t_stop, h_hint) = horizon(&doc, *tstop, *step)?;
            let cols = select_columns(&sys, nodes).map_err(Failure::input)?;
            let spec = BenchSpec {
                methods: methods.iter().map(|&m| m.into()).collect(),
                t_stop,
                h_hint,
                ctl: control(g, &doc),
                h_ref: href.unwrap_or(h_hint / 100.0),
                nodes: cols.iter().map(|c| c.1).collect(),
                parallel: *parallel,
            };
            let rep = run_bench(&sys, &spec).map_err(|m| Failure {
                code: EXIT_NUMERIC,
                message: m,
            })?;
            let dir = g
                .output
                .clone()
                .unwrap_or_else(|| PathBuf::from("bench_out"));
            rep.write_dir(&dir).map_err(io_err(&dir))?;
            print!("{rep}");
            Ok(())
        }
        Command::Gen {
            kind,
            stages,
            density,
        } => {
            let kind: GenKind = kind.parse().map_err(Failure::input)?;
            let doc = generated(g, kind, *stages, *density)?;
            emit(g.output.as_deref(), doc.to_string().as_bytes())
        }
        Command::Matstats { deck, h, dump } => {
            let doc = load(deck)?;
            let sys = MnaSystem::assemble(&doc.circuit())?;
            let stats = matstats(&sys, *h)?;
            if let Some(dir) = dump {
                fs::create_dir_all(dir).map_err(io_err(dir))?;
                let mats = matrices(&sys, *h)?;
                for (name, m) in ["C.mtx", "G.mtx", "CG.mtx"].iter().zip(&mats) {
                    let path = dir.join(name);
                    let f = fs::File::create(&path).map_err(io_err(&path))?;
                    write_matrix_market(BufWriter::new(f), m).map_err(io_err(&path))?;
                }
            }
            let mut json = serde_json::to_string_pretty(&stats).expect("stats serialize");
            json.push('\n');
            emit(g.output.as_deref(), json.as_bytes())
        }
    }
}

fn load(path: &Path) -> Result<NetlistDoc, Failure> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_netlist(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn generated(
    g: &GlobalOpts,
    kind: GenKind,
    stages: usize,
    density: f64,
) -> Result<NetlistDoc, Failure> {
    let mut p = GeneratorParams::new(kind, stages);
    p.coupling_density = density;
    p.seed = g.seed;
    generate(&p).map_err(Failure::input)
}

fn horizon(doc: &NetlistDoc, tstop: Option<f64>, step: Option<f64>) -> Result<(f64, f64), Failure> {
    let t_stop = tstop.or(doc.tran.map(|t| t.stop));
    let step = step.or(doc.tran.map(|t| t.step));
    match (t_stop, step) {
        (Some(t), Some(h)) if t > 0.0 && h > 0.0 => Ok((t, h)),
        (Some(t), None) if t > 0.0 => Ok((t, t / 100.0)),
        (None, _) => Err(Failure::input("deck has no .TRAN and no --tstop was given")),
        _ => Err(Failure::input("stop time and step must be positive")),
    }
}

/// Step control from the deck options, overridden by command-line flags.
pub fn control(g: &GlobalOpts, doc: &NetlistDoc) -> StepControl {
    let mut ctl = StepControl::from_options(&doc.options);
    if let Some(e) = g.eps {
        ctl.krylov.eps = e;
    }
    if let Some(b) = g.errbudget {
        ctl.err_budget = b;
    }
    if let Some(m) = g.mmax {
        ctl.krylov.m_max = m;
    }
    if g.hmax.is_some() {
        ctl.hmax = g.hmax;
    }
    if g.hmin.is_some() {
        ctl.hmin = g.hmin;
    }
    ctl.krylov.trace = g.trace_krylov.is_some();
    ctl
}

fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, bytes).map_err(io_err(p)),
        None => io::stdout()
            .write_all(bytes)
            .map_err(|e| Failure::input(e.to_string())),
    }
}

#[derive(Debug, Serialize)]
struct RunSummary {
    method: &'static str,
    unknowns: usize,
    t_stop: f64,
    steps: usize,
    lu_total: usize,
    m_avg: f64,
    nr_avg: f64,
    rejects: usize,
    wall_s: f64,
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    g: &GlobalOpts,
    deck: &Path,
    method: Method,
    nodes: &[String],
    summary: Option<&Path>,
    records: Option<&Path>,
    tstop: Option<f64>,
    step: Option<f64>,
) -> Result<(), Failure> {
    let doc = load(deck)?;
    let sys = build_mna(&doc)?;
    let (t_stop, h_hint) = horizon(&doc, tstop, step)?;
    let cols = select_columns(&sys, nodes).map_err(Failure::input)?;
    let ctl = control(g, &doc);
    let start = Instant::now();
    let res = transient(&sys, method, &ctl, t_stop, h_hint)?;
    let wall_s = start.elapsed().as_secs_f64();
    let cost = cost_report(&res.records)?;

    let mut csv = Vec::new();
    write_waveform_csv(&mut csv, &res, &cols).map_err(|e| Failure::input(e.to_string()))?;
    emit(g.output.as_deref(), &csv)?;

    let s = RunSummary {
        method: method.name(),
        unknowns: sys.n(),
        t_stop,
        steps: cost.steps,
        lu_total: cost.lu_total,
        m_avg: cost.m_avg,
        nr_avg: cost.nr_avg,
        rejects: cost.rejects,
        wall_s,
    };
    let json = serde_json::to_string(&s).expect("summary serialize");
    let summary_path = summary
        .map(Path::to_path_buf)
        .or_else(|| g.output.as_ref().map(|o| o.with_extension("json")));
    match summary_path {
        Some(p) => fs::write(&p, format!("{json}\n")).map_err(io_err(&p))?,
        None => eprintln!("{json}"),
    }
    if let Some(p) = records {
        let f = fs::File::create(p).map_err(io_err(p))?;
        write_records_jsonl(BufWriter::new(f), &res.records).map_err(io_err(p))?;
    }
    if let Some(p) = &g.trace_krylov {
        let f = fs::File::create(p).map_err(io_err(p))?;
        write_trace_csv(BufWriter::new(f), &res.records).map_err(io_err(p))?;
    }
    Ok(())
}
