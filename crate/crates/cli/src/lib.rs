//! Commands behind the `ccmpc` binary.

use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use ccmpc::contraction::{synthesize, verify, VerificationGrid, VerificationReport};
use ccmpc::par::{init_workers, Execution};
use ccmpc::scenario::ScenarioConfig;
use ccmpc::sim::{benchmark, run_closed_loop, write_benchmark_csv, BenchmarkRow, SimulationTrace};
use ccmpc::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_SYNTHESIS: i32 = 2;
pub const EXIT_ABORT: i32 = 3;

pub const TRACE_FILE: &str = "trace.csv";
pub const PLOT_FILE: &str = "plot_trace.gp";
pub const BENCH_FILE: &str = "benchmark.csv";

/// Per-point verification grid used by `synthesize` and `verify`.
pub const VERIFY_STATE_POINTS: usize = 41;
pub const VERIFY_INPUT_POINTS: usize = 9;

#[derive(Debug, Clone, Default)]
pub struct Options {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub quiet: bool,
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::SynthesisFailed { .. } => EXIT_SYNTHESIS,
            Error::FallbackInfeasible(_) => EXIT_ABORT,
            _ => EXIT_CONFIG,
        };
        Self::new(code, e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

struct Context {
    config: ScenarioConfig,
    out: PathBuf,
    execution: Execution,
    quiet: bool,
}

impl Context {
    fn load(opts: &Options) -> CliResult<Self> {
        let mut config = ScenarioConfig::load(&opts.config)?;
        if let Some(seed) = opts.seed {
            config.seed = seed;
        }
        let out = match &opts.out {
            Some(o) => o.clone(),
            None => config.resolve(&config.output_dir),
        };
        Ok(Self {
            config,
            out,
            execution: init_workers(Execution::workers_from_env()),
            quiet: opts.quiet,
        })
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    fn out_dir(&self) -> CliResult<&Path> {
        fs::create_dir_all(&self.out)
            .map_err(|e| CliError::new(EXIT_CONFIG, format!("{}: {e}", self.out.display())))?;
        Ok(&self.out)
    }
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::new(EXIT_CONFIG, format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents)
        .map_err(|e| CliError::new(EXIT_CONFIG, format!("{}: {e}", path.display())))
}

fn failed_verification(tau: f64, report: &VerificationReport) -> CliError {
    let p = report.worst_point();
    CliError::new(
        EXIT_SYNTHESIS,
        format!(
            "certificate for tau {tau} fails verification: margin {:e} at state {:?}, input {:?}",
            p.margin,
            p.state.as_slice(),
            p.input.as_slice()
        ),
    )
}

/// Synthesizes every configured certificate, writes it next to its
/// verification report, and fails with exit 2 on the first failure.
pub fn cmd_synthesize(opts: &Options) -> CliResult<Vec<PathBuf>> {
    let ctx = Context::load(opts)?;
    let plant = ctx.config.plant()?;
    let out = ctx.out_dir()?.to_path_buf();
    let mut written = Vec::new();
    for spec in &ctx.config.certificates {
        let problem = ctx
            .config
            .synthesis_problem(spec, plant.as_ref(), ctx.execution)?;
        let start = std::time::Instant::now();
        let cert = synthesize(&problem)?;
        let elapsed = start.elapsed().as_secs_f64();
        let grid = VerificationGrid::for_certificate(
            &cert,
            plant.as_ref(),
            VERIFY_STATE_POINTS,
            VERIFY_INPUT_POINTS,
        );
        let report = verify(&cert, plant.as_ref(), &grid, spec.eta, ctx.execution);
        let path = ctx.config.certificate_path(spec, &out);
        cert.save(&path)?;
        write_file(&path.with_extension("report.txt"), &report.to_string())?;
        ctx.say(format!(
            "tau {}: degree {}, synthesized in {elapsed:.1} s -> {}\n{report}",
            spec.tau,
            cert.degree().as_u32(),
            path.display()
        ));
        if !report.passed {
            return Err(failed_verification(spec.tau, &report));
        }
        written.push(path);
    }
    Ok(written)
}

/// Re-checks the configured certificates on the dense grid.
pub fn cmd_verify(opts: &Options) -> CliResult<Vec<VerificationReport>> {
    let ctx = Context::load(opts)?;
    let plant = ctx.config.plant()?;
    let certs = ctx.config.certificates(plant.as_ref(), ctx.execution)?;
    let mut reports = Vec::new();
    for (spec, cert) in ctx.config.certificates.iter().zip(&certs) {
        let grid = VerificationGrid::for_certificate(
            cert,
            plant.as_ref(),
            VERIFY_STATE_POINTS,
            VERIFY_INPUT_POINTS,
        );
        let report = verify(cert, plant.as_ref(), &grid, spec.eta, ctx.execution);
        ctx.say(format!("tau {}:\n{report}", spec.tau));
        if !report.passed {
            return Err(failed_verification(spec.tau, &report));
        }
        reports.push(report);
    }
    Ok(reports)
}

/// gnuplot script plotting levels, inputs and references from the trace.
pub fn plot_script(trace_file: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# gnuplot {PLOT_FILE}");
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set key autotitle columnhead");
    let _ = writeln!(s, "set terminal pngcairo size 900,700");
    let _ = writeln!(s, "set output 'trace.png'");
    let _ = writeln!(s, "set multiplot layout 2,1");
    let _ = writeln!(s, "set ylabel 'level [cm]'");
    let _ = writeln!(
        s,
        "plot '{trace_file}' using 1:2 with lines, '' using 1:3 with lines, \\\n     '' using 1:5 with lines dt 2, '' using 1:6 with lines dt 2"
    );
    let _ = writeln!(s, "set xlabel 't [s]'");
    let _ = writeln!(s, "set ylabel 'pump [V]'");
    let _ = writeln!(
        s,
        "plot '{trace_file}' using 1:4 with steps, '' using 1:7 with steps dt 2"
    );
    let _ = writeln!(s, "unset multiplot");
    s
}

fn write_trace(path: &Path, trace: &SimulationTrace) -> CliResult<()> {
    let file = fs::File::create(path)
        .map_err(|e| CliError::new(EXIT_CONFIG, format!("{}: {e}", path.display())))?;
    trace
        .write_csv(BufWriter::new(file))
        .map_err(|e| CliError::new(EXIT_CONFIG, format!("{}: {e}", path.display())))
}

/// Closed-loop run; the trace is written even when the run aborts.
pub fn cmd_run(opts: &Options) -> CliResult<SimulationTrace> {
    let ctx = Context::load(opts)?;
    let plant = ctx.config.plant()?;
    let certs = ctx.config.certificates(plant.as_ref(), ctx.execution)?;
    let mut solver = ctx.config.solver.clone();
    solver.execution = ctx.execution;
    let controller = ctx
        .config
        .problem(plant.clone(), &certs)?
        .with_options(solver);
    let trace = run_closed_loop(plant.as_ref(), &controller, &ctx.config.sim_options())?;
    let out = ctx.out_dir()?;
    write_trace(&out.join(TRACE_FILE), &trace)?;
    write_file(&out.join(PLOT_FILE), &plot_script(TRACE_FILE))?;
    let infeasible = trace
        .statuses
        .iter()
        .filter(|s| s.as_str() == "infeasible")
        .count();
    ctx.say(format!(
        "{} steps, rms error {:.4} cm, input energy {:.4}, {infeasible} least-violation steps -> {}",
        trace.steps(),
        trace.rms_error(),
        trace.input_energy(),
        out.join(TRACE_FILE).display()
    ));
    if let Some(reason) = &trace.aborted {
        return Err(CliError::new(EXIT_ABORT, format!("simulation aborted: {reason}")));
    }
    Ok(trace)
}

/// Table with the columns Method, Predicted Steps, Ave. Comp. Time.
pub fn format_table(rows: &[BenchmarkRow]) -> String {
    let cells: Vec<[String; 3]> = rows
        .iter()
        .map(|r| {
            let time = match &r.failure {
                None => format!("{:.4} s", r.mean_ms / 1e3),
                Some(f) => format!("failed ({f})"),
            };
            [r.label.clone(), r.k_hat.to_string(), time]
        })
        .collect();
    let head = ["Method", "Predicted Steps", "Ave. Comp. Time"];
    let mut width = head.map(str::len);
    for c in &cells {
        for (w, s) in width.iter_mut().zip(c) {
            *w = (*w).max(s.len());
        }
    }
    let mut s = String::new();
    let line = |s: &mut String, c: [&str; 3]| {
        let _ = writeln!(
            s,
            "{:<w0$}  {:>w1$}  {:>w2$}",
            c[0],
            c[1],
            c[2],
            w0 = width[0],
            w1 = width[1],
            w2 = width[2]
        );
    };
    line(&mut s, head);
    let _ = writeln!(s, "{}", "-".repeat(width.iter().sum::<usize>() + 4));
    for c in &cells {
        line(&mut s, [&c[0], &c[1], &c[2]]);
    }
    s
}

/// Times every configured variant. Succeeds when at least one variant ran
/// to completion.
pub fn cmd_bench(opts: &Options) -> CliResult<Vec<BenchmarkRow>> {
    let ctx = Context::load(opts)?;
    let Some(bench) = ctx.config.bench.clone() else {
        return Err(CliError::new(EXIT_CONFIG, "configuration has no [bench] section"));
    };
    let plant = ctx.config.plant()?;
    let certs = ctx.config.certificates(plant.as_ref(), ctx.execution)?;
    let variants = ctx.config.bench_variants(plant.clone(), &certs)?;
    let mut sim = ctx.config.sim_options();
    if let Some(h) = bench.horizon {
        sim.horizon = h;
    }
    let rows = benchmark(&variants, plant.as_ref(), &sim, bench.repetitions, ctx.execution)?;
    let out = ctx.out_dir()?;
    let path = out.join(BENCH_FILE);
    let file = fs::File::create(&path)
        .map_err(|e| CliError::new(EXIT_CONFIG, format!("{}: {e}", path.display())))?;
    write_benchmark_csv(&rows, BufWriter::new(file))
        .map_err(|e| CliError::new(EXIT_CONFIG, format!("{}: {e}", path.display())))?;
    ctx.say(format_table(&rows));
    if rows.iter().all(|r| r.failure.is_some()) {
        return Err(CliError::new(EXIT_ABORT, "every benchmark variant failed"));
    }
    Ok(rows)
}
