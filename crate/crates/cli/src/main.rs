use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hwoffload::accel::{parse_workload, run_dse, DseOutcome, Placement};
use hwoffload::bench::{comparison_table, detail_table, report_table, run_bench};
use hwoffload::config::RunConfig;
use hwoffload::cosim::compile;
use hwoffload::fixtures;
use hwoffload::fuzz::run_fuzz;
use hwoffload::jir::{
    interpret_sized, parse_program, validate, ArgValue, Linked, Program, QualName,
};

#[derive(Parser)]
#[command(
    name = "hwoffload",
    version,
    about = "Offload stack-machine methods to modeled hardware"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    /// key = value configuration file applied over the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Single configuration override, `key=value`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,
    /// Print the per-cycle simulation trace.
    #[arg(long, global = true)]
    trace: bool,
    /// Disable burst coalescing of bus reads.
    #[arg(long, global = true)]
    no_coalesce: bool,
    /// Fuzzing seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse and validate a program.
    Check {
        /// Program path or shipped fixture name.
        file: String,
    },
    /// Lower a method to a kernel and write it with its estimates.
    Compile {
        /// Program path or shipped fixture name.
        file: String,
        /// Method to use instead of the declared entry, `Class.method`.
        #[arg(long)]
        entry: Option<String>,
        /// Output directory (default: `<name>.out`).
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Execute a method in software or on the simulated kernel.
    Run {
        /// Program path or shipped fixture name.
        file: String,
        /// Method to use instead of the declared entry, `Class.method`.
        #[arg(long)]
        entry: Option<String>,
        /// Run on the simulated kernel.
        #[arg(long, conflicts_with = "sw")]
        hw: bool,
        /// Run on the reference interpreter (default).
        #[arg(long)]
        sw: bool,
        /// Arguments: integers, `null` or `[1,2,3]`.
        #[arg(allow_negative_numbers = true)]
        args: Vec<String>,
    },
    /// Run the four benchmark kernels and print the report.
    Bench {
        /// Render a comparison table from a CSV file instead
        /// (`Function,<left>,<right>` header, then `name,a,l,a,l` rows).
        #[arg(long, value_name = "CSV")]
        compare: Option<PathBuf>,
    },
    /// Run the reconfiguration loop over a workload trace.
    Dse {
        /// Program path or shipped fixture name.
        file: String,

        /// Workload trace (default: `<file>.trace` beside the program).
        #[arg(long)]
        workload: Option<String>,
        /// Monitoring windows to run (default: `dse.steps`).
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Differential fuzzing of the offload pipeline.
    Fuzz {
        /// Cases to generate (default: `fuzz.count`).
        #[arg(long)]
        count: Option<u64>,
        /// Directory receiving failing programs.
        #[arg(long, default_value = "fuzz-failures")]
        out: PathBuf,
    },
}

enum Fail {
    /// Exit 1.
    Domain(String),
    /// Exit 2.
    Usage(String),
}

type CmdResult = Result<(), Fail>;

fn io_err(path: &Path, e: std::io::Error) -> Fail {
    Fail::Usage(format!("{}: {e}", path.display()))
}

/// Reads a path, falling back to a shipped fixture of that name.
fn read_source(name: &str) -> Result<String, Fail> {
    let path = Path::new(name);
    match fs::read_to_string(path) {
        Ok(t) => Ok(t),
        Err(e) => match fixtures::by_name(name) {
            Some(t) if !path.exists() => Ok(t.to_string()),
            _ => Err(io_err(path, e)),
        },
    }
}

fn load(name: &str) -> Result<Program, Fail> {
    let text = read_source(name)?;
    let p = parse_program(&text).map_err(|ds| {
        let lines: Vec<String> = ds.iter().map(|d| format!("{name}:{d}")).collect();
        Fail::Domain(lines.join("\n"))
    })?;
    let report = validate(&p);
    if !report.is_clean() {
        let lines: Vec<String> = report
            .errors
            .iter()
            .map(|e| format!("{name}:{e}"))
            .collect();
        return Err(Fail::Domain(lines.join("\n")));
    }
    Ok(p)
}

fn entry_of(p: &Program, entry: &Option<String>) -> Result<QualName, Fail> {
    match entry {
        Some(e) => QualName::try_from(e.clone()).map_err(Fail::Usage),
        None => p
            .entry
            .clone()
            .ok_or_else(|| Fail::Usage("program declares no entry; pass --entry".into())),
    }
}

fn load_config(g: &Global) -> Result<RunConfig, Fail> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &g.config {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        cfg.apply(&text)
            .map_err(|e| Fail::Usage(format!("{}:{}: {}", path.display(), e.line, e.message)))?;
    }
    for o in &g.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Fail::Usage(format!("--set expects KEY=VALUE, got `{o}`")))?;
        cfg.set(k.trim(), v.trim()).map_err(Fail::Usage)?;
    }
    if g.no_coalesce {
        cfg.transform.coalesce = false;
    }
    if g.trace {
        cfg.sim.trace = true;
    }
    if let Some(s) = g.seed {
        cfg.fuzz_seed = s;
    }
    Ok(cfg)
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("records serialize")
}

fn cmd_check(file: &str) -> CmdResult {
    load(file).map(|_| ())
}

fn cmd_compile(
    g: &Global,
    cfg: &RunConfig,
    file: &str,
    entry: &Option<String>,
    out: &Option<PathBuf>,
) -> CmdResult {
    let p = load(file)?;
    let root = entry_of(&p, entry)?;
    let c = compile(&p, &root, cfg).map_err(|e| Fail::Domain(e.to_string()))?;
    let report = c.report(cfg);
    let dir = out.clone().unwrap_or_else(|| {
        let stem = Path::new(file)
            .file_stem()
            .map_or("kernel".into(), |s| s.to_string_lossy().into_owned());
        PathBuf::from(format!("{stem}.out"))
    });
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let lowered = dir.join("lowered.jir");
    fs::write(&lowered, c.lowered.to_text()).map_err(|e| io_err(&lowered, e))?;
    let rpath = dir.join("report.json");
    fs::write(&rpath, json(&report) + "\n").map_err(|e| io_err(&rpath, e))?;
    if g.json {
        println!("{}", json(&report));
    } else {
        println!(
            "kernel {} ({} methods, {} syscalls)",
            report.root,
            report.methods.len(),
            report.syscalls.len()
        );
        println!(
            "area {} AU (arithmetic {}, multiplexers {}, bus {}, control {})",
            report.area.total,
            report.area.arithmetic,
            report.area.multiplexers,
            report.area.bus,
            report.area.control
        );
        match report.latency.exact() {
            Some(n) => println!("latency exact {n} cycles"),
            None => println!("latency input-dependent"),
        }
        println!("wrote {} and {}", lowered.display(), rpath.display());
    }
    Ok(())
}

fn cmd_run(
    g: &Global,
    cfg: &RunConfig,
    file: &str,
    entry: &Option<String>,
    hw: bool,
    raw: &[String],
) -> CmdResult {
    let p = load(file)?;
    let root = entry_of(&p, entry)?;
    let args: Vec<ArgValue> = raw
        .iter()
        .map(|a| ArgValue::parse(a).map_err(Fail::Usage))
        .collect::<Result<_, _>>()?;
    if hw {
        let c = compile(&p, &root, cfg).map_err(|e| Fail::Domain(e.to_string()))?;
        let r = c
            .run(&p, &args, cfg)
            .map_err(|e| Fail::Domain(e.to_string()))?;
        if g.json {
            println!("{}", json(&r));
            return Ok(());
        }
        if cfg.sim.trace {
            print!("{}", r.trace_text());
        }
        match (r.value, &r.trap) {
            (_, Some(t)) => println!("trap: {} at cycle {}", t.kind.name(), t.cycle),
            (Some(v), None) => println!("value: {v}"),
            (None, None) => println!("value: void"),
        }
        let k = &r.counters;
        println!("cycles: {}", r.total_cycles);
        println!("compute cycles: {}", k.compute_cycles);
        println!(
            "bus: {} transactions, {} cycles",
            k.bus_transactions, k.bus_cycles
        );
        println!("syscalls: {}, {} cycles", k.syscalls, k.syscall_cycles);
    } else {
        let linked = Linked::new(&p).map_err(Fail::Domain)?;
        let r = interpret_sized(&p, &linked, &root, &args, cfg.sim.host_fuel, cfg.heap_words)
            .map_err(|e| Fail::Domain(e.to_string()))?;
        if g.json {
            println!("{}", r.to_json());
            return Ok(());
        }
        match (r.value, &r.trap) {
            (_, Some(t)) => println!("trap: {} in {} at {}", t.kind.name(), t.method, t.pc),
            (Some(v), None) => println!("value: {v}"),
            (None, None) => println!("value: void"),
        }
        println!("instructions: {}", r.instructions);
    }
    Ok(())
}

fn cmd_bench(g: &Global, cfg: &RunConfig, compare: &Option<PathBuf>) -> CmdResult {
    if let Some(path) = compare {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        print!("{}", parse_comparison(&text).map_err(Fail::Usage)?);
        return Ok(());
    }
    let rows = run_bench(cfg).map_err(|e| Fail::Domain(e.to_string()))?;
    if g.json {
        println!("{}", json(&rows));
    } else {
        print!("{}", report_table(&rows).render());
        println!();
        print!("{}", detail_table(&rows).render());
    }
    Ok(())
}

fn parse_comparison(text: &str) -> Result<String, String> {
    let mut lines = text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    let header: Vec<&str> = lines
        .next()
        .ok_or("empty comparison file")?
        .split(',')
        .map(str::trim)
        .collect();
    let [_, left, right] = header[..] else {
        return Err("header must be `Function,<left>,<right>`".into());
    };
    let mut rows = Vec::new();
    for l in lines {
        let cells: Vec<&str> = l.split(',').map(str::trim).collect();
        let [name, a, b, c, d] = cells[..] else {
            return Err(format!("expected 5 cells in `{l}`"));
        };
        let mut v = [0u64; 4];
        for (slot, s) in v.iter_mut().zip([a, b, c, d]) {
            *slot = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
        }
        rows.push((name, v));
    }
    Ok(comparison_table(left, right, &rows).render())
}

fn render_dse(o: &DseOutcome) -> String {
    let mut s = String::new();
    for h in &o.history {
        let what = h.candidate.as_deref().unwrap_or("-");
        let decision = match h.decision {
            hwoffload::accel::Decision::Accepted => "accepted",
            hwoffload::accel::Decision::Refused => "refused",
            hwoffload::accel::Decision::NoCandidates => "no candidates",
        };
        s.push_str(&format!(
            "window {}: objective {} -> {}, {decision}: {what} (timeline {})\n",
            h.window, h.objective_before, h.objective_after, h.timeline
        ));
    }
    s.push_str(&format!("reconfigurations: {}\n", o.state.reconfigurations));
    s.push_str("final deployment:\n");
    for (l, p) in o.locales.iter().zip(&o.state.deployment.placements) {
        match p {
            Placement::Cpu(n) => s.push_str(&format!("  {}: cpu {n}\n", l.name)),
            Placement::Fpga { region, kernels } => {
                let ks: Vec<String> = kernels.iter().map(ToString::to_string).collect();
                s.push_str(&format!(
                    "  {}: region {region} [{}]\n",
                    l.name,
                    ks.join(", ")
                ));
            }
        }
    }
    s
}

fn cmd_dse(
    g: &Global,
    cfg: &RunConfig,
    file: &str,
    workload: &Option<String>,
    steps: Option<u64>,
) -> CmdResult {
    let p = load(file)?;
    let trace_name = workload.clone().unwrap_or_else(|| {
        let base = file.strip_suffix(".jir").unwrap_or(file);
        format!("{base}.trace")
    });
    let trace = match fs::read_to_string(&trace_name) {
        Ok(t) => t,
        Err(_)
            if workload.is_none()
                && !Path::new(file).exists()
                && fixtures::by_name(file) == Some(fixtures::DSE_HOT) =>
        {
            fixtures::DSE_HOT_TRACE.to_string()
        }
        Err(e) => return Err(io_err(Path::new(&trace_name), e)),
    };
    let w = parse_workload(&trace, &p).map_err(|e| Fail::Domain(format!("{trace_name}: {e}")))?;
    let o = run_dse(&p, &w, cfg, steps.unwrap_or(cfg.dse.steps))
        .map_err(|e| Fail::Domain(e.to_string()))?;
    if g.json {
        println!("{}", json(&o));
    } else {
        print!("{}", render_dse(&o));
    }
    Ok(())
}

fn cmd_fuzz(g: &Global, cfg: &RunConfig, count: Option<u64>, out: &Path) -> CmdResult {
    let s = run_fuzz(cfg.fuzz_seed, count.unwrap_or(cfg.fuzz_count), cfg);
    if !s.failures.is_empty() {
        fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
        for f in &s.failures {
            let base = out.join(format!("case-{}", f.case.index));
            let prog = base.with_extension("jir");
            fs::write(&prog, &f.case.program).map_err(|e| io_err(&prog, e))?;
            let meta = base.with_extension("json");
            fs::write(&meta, json(f) + "\n").map_err(|e| io_err(&meta, e))?;
        }
    }
    if g.json {
        println!("{}", json(&s));
    } else {
        println!(
            "seed {}: {}/{} passed ({} trapped, {} with exact latency, {} dispatching)",
            s.seed, s.passed, s.count, s.trapped, s.exact_checked, s.dispatching
        );
        println!("corpus {}", s.corpus_digest);
        for f in &s.failures {
            println!("case {}: {}", f.case.index, f.reason);
        }
        if !s.failures.is_empty() {
            println!("failing programs written to {}", out.display());
        }
    }
    if s.ok() {
        Ok(())
    } else {
        Err(Fail::Domain(format!(
            "{} fuzz cases failed",
            s.failures.len()
        )))
    }
}

fn main() -> ExitCode {
    // Exit quietly when the reader of stdout goes away (`| head`).
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let g = &cli.global;
    let result = load_config(g).and_then(|cfg| match &cli.cmd {
        Cmd::Check { file } => cmd_check(file),
        Cmd::Compile { file, entry, out } => cmd_compile(g, &cfg, file, entry, out),
        Cmd::Run {
            file,
            entry,
            hw,
            args,
            ..
        } => cmd_run(g, &cfg, file, entry, *hw, args),
        Cmd::Bench { compare } => cmd_bench(g, &cfg, compare),
        Cmd::Dse {
            file,
            workload,
            steps,
        } => cmd_dse(g, &cfg, file, workload, *steps),
        Cmd::Fuzz { count, out } => cmd_fuzz(g, &cfg, *count, out),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail::Domain(m)) => {
            eprintln!("{m}");
            ExitCode::from(1)
        }
        Err(Fail::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
