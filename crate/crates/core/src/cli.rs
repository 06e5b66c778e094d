//! Command-line surface: `analyze`, `infer`, `fuzz`, `bench`, `minimize`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::{CampaignConfig, Mode};
use crate::distance::{write_distance_map, Analysis, TargetSite};
use crate::engine::{find_target, minimize_poc, plan_campaign, run_campaign, CampaignResult};
use crate::graph::{CallGraph, Program, Resolution};
use crate::inference::{
    infer_all, DispatchFrames, InferredSyscall, KnowledgeBase, NrTable, StackTrace, TraceEvidence,
};
use crate::input::Input;
use crate::sim::{load_scenario, Scenario};
use crate::stats::{compare, render_csv, render_table, Alternative, ReportRow, TteSample};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NOT_HIT: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("target not hit within the budget")]
    NotHit,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::NotHit => EXIT_NOT_HIT,
        }
    }
}

fn input_err(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "gfz", version, about = "Directed syscall-sequence fuzzing against a simulated kernel")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Reachability and block distances for one target.
    Analyze(AnalyzeArgs),
    /// Syscalls inferred for a target, with the rule that found each.
    Infer(InferArgs),
    /// One directed campaign.
    Fuzz(FuzzArgs),
    /// Repeated campaigns per mode, compared against the undirected baseline.
    Bench(BenchArgs),
    /// Shrink a proof of concept.
    Minimize(MinimizeArgs),
}

/// Flags that override the resolved configuration.
#[derive(Debug, Default, Args)]
pub struct ConfigArgs {
    /// TOML config; defaults to $GFZ_CONFIG, then built-in defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub p_max: Option<f64>,
    #[arg(long)]
    pub p_min: Option<f64>,
    #[arg(long)]
    pub t_a_secs: Option<f64>,
    #[arg(long)]
    pub t_b_secs: Option<f64>,
    #[arg(long)]
    pub timeout_secs: Option<f64>,
    #[arg(long)]
    pub rng_seed: Option<u64>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Resolve direct calls only.
    #[arg(long)]
    pub no_indirect: bool,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<CampaignConfig, CliError> {
        let mut c = CampaignConfig::resolve(self.config.as_deref()).map_err(input_err)?;
        if let Some(v) = self.mode {
            c.mode = v;
        }
        if let Some(v) = self.p_max {
            c.p_max = v;
        }
        if let Some(v) = self.p_min {
            c.p_min = v;
        }
        if let Some(v) = self.t_a_secs {
            c.t_a_secs = v;
        }
        if let Some(v) = self.t_b_secs {
            c.t_b_secs = v;
        }
        if let Some(v) = self.timeout_secs {
            c.timeout_secs = v;
        }
        if let Some(v) = self.rng_seed {
            c.rng_seed = v;
        }
        if let Some(v) = self.reps {
            c.repetitions = v;
        }
        if let Some(v) = self.workers {
            c.workers = v;
        }
        if self.no_indirect {
            c.indirect_resolution = false;
        }
        c.validate().map_err(input_err)?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Graph or scenario file.
    pub graph: PathBuf,
    /// Target as a scenario target name or `function:block`.
    #[arg(long)]
    pub target: String,
    #[arg(long)]
    pub no_indirect: bool,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Graph or scenario file.
    pub graph: PathBuf,
    #[arg(long)]
    pub target: String,
    /// Knowledge base JSON; the bundled rules when absent.
    #[arg(long)]
    pub kb: Option<PathBuf>,
    /// Stack trace of a known crash.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub no_indirect: bool,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct FuzzArgs {
    pub scenario: PathBuf,
    #[arg(long)]
    pub target: String,
    #[arg(long)]
    pub kb: Option<PathBuf>,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Scenario files, optionally `path@target`; without a target every
    /// named target of the scenario is benched.
    #[arg(required = true)]
    pub cases: Vec<String>,
    /// Modes to compare; undirected is always run as the baseline.
    #[arg(long, value_delimiter = ',', default_values_t = vec![Mode::Gfuzz])]
    pub modes: Vec<Mode>,
    #[arg(long)]
    pub kb: Option<PathBuf>,
    #[arg(long)]
    pub two_sided: bool,
    /// Run repetitions on separate threads.
    #[arg(long)]
    pub parallel: bool,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct MinimizeArgs {
    pub scenario: PathBuf,
    pub poc: PathBuf,
    #[arg(long)]
    pub target: String,
    /// Output file; defaults to `<poc>.min`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Run a parsed command line, returning the process exit code.
pub fn run(cli: Cli) -> i32 {
    let res = match cli.command {
        Command::Analyze(a) => cmd_analyze(&a).map(|_| ()),
        Command::Infer(a) => cmd_infer(&a).map(|_| ()),
        Command::Fuzz(a) => cmd_fuzz(&a).and_then(|r| if r.hit { Ok(()) } else { Err(CliError::NotHit) }),
        Command::Bench(a) => cmd_bench(&a).map(|_| ()),
        Command::Minimize(a) => cmd_minimize(&a).map(|_| ()),
    };
    match res {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("gfz: {e}");
            e.exit_code()
        }
    }
}

/// A scenario file, or a bare graph file.
fn load_program(path: &Path) -> Result<(Program, Option<Scenario>), CliError> {
    let text = fs::read_to_string(path).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
    if value.get("syscalls").is_some() {
        let sc = Scenario::from_json(&text).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
        Ok((sc.program.clone(), Some(sc)))
    } else {
        let p = Program::from_json(&text).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
        Ok((p, None))
    }
}

fn target_site(program: &Program, sc: Option<&Scenario>, spec: &str) -> Result<TargetSite, CliError> {
    if let Some(t) = sc.and_then(|s| s.target(spec)) {
        return TargetSite::new(program, t.block).map_err(input_err);
    }
    TargetSite::parse(program, spec).map_err(input_err)
}

fn out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| input_err(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| input_err(format!("{}: {e}", path.display())))
}

fn resolution(no_indirect: bool) -> Resolution {
    if no_indirect {
        Resolution::DirectOnly
    } else {
        Resolution::Rta
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReachableReport {
    pub target: String,
    pub functions: Vec<String>,
    pub function_count: usize,
    pub reachable_function_ratio: f64,
    pub reachable_blocks: usize,
    pub total_blocks: usize,
    pub visited_blocks: usize,
    pub entry_syscalls: BTreeMap<String, u32>,
}

pub fn cmd_analyze(a: &AnalyzeArgs) -> Result<ReachableReport, CliError> {
    let (program, sc) = load_program(&a.graph)?;
    let site = target_site(&program, sc.as_ref(), &a.target)?;
    let cg = CallGraph::build(&program, resolution(a.no_indirect));
    let an = Analysis::run(&program, &cg, site);
    out_dir(&a.out_dir)?;
    write_distance_map(&an.distances, &program, a.out_dir.join("distances.tsv")).map_err(input_err)?;
    let report = ReachableReport {
        target: a.target.clone(),
        functions: an.reachable.functions.iter().map(|&f| program.name(f).to_string()).collect(),
        function_count: program.function_count(),
        reachable_function_ratio: an.reachable.function_ratio(&program),
        reachable_blocks: an.reachable.block_count(&program),
        total_blocks: program.total_blocks(),
        visited_blocks: an.icfg.node_count(),
        entry_syscalls: an.reachable.entry_syscalls.clone(),
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_file(&a.out_dir.join("reachable.json"), &json)?;
    println!(
        "reachable functions: {}/{} ({:.2}%), blocks visited: {}/{}",
        report.functions.len(),
        report.function_count,
        report.reachable_function_ratio * 100.0,
        report.visited_blocks,
        report.total_blocks
    );
    Ok(report)
}

fn load_kb(path: Option<&Path>) -> Result<KnowledgeBase, CliError> {
    match path {
        Some(p) => KnowledgeBase::load(p).map_err(input_err),
        None => Ok(KnowledgeBase::bundled()),
    }
}

fn load_trace(path: Option<&Path>) -> Result<Option<StackTrace>, CliError> {
    path.map(|p| StackTrace::load(p).map_err(input_err)).transpose()
}

pub fn cmd_infer(a: &InferArgs) -> Result<Vec<InferredSyscall>, CliError> {
    let (program, sc) = load_program(&a.graph)?;
    let site = target_site(&program, sc.as_ref(), &a.target)?;
    let cg = CallGraph::build(&program, resolution(a.no_indirect));
    let an = Analysis::run(&program, &cg, site);
    let kb = load_kb(a.kb.as_deref())?;
    let trace = load_trace(a.trace.as_deref())?;
    let (nr, dispatch) = (NrTable::x86_64(), DispatchFrames::default());
    let evidence = trace.as_ref().map(|t| TraceEvidence {
        trace: t,
        nr_table: &nr,
        dispatch: &dispatch,
    });
    let variants = sc.as_ref().map(|s| s.variant_table()).unwrap_or_default();
    let inferred = infer_all(&program, &an, &variants, &kb, evidence);
    out_dir(&a.out_dir)?;
    let json = serde_json::to_string_pretty(&inferred).expect("inferred set serializes");
    write_file(&a.out_dir.join("inferred.json"), &json)?;
    for s in &inferred {
        println!("{}\t{}", s.name, s.source_rule);
    }
    Ok(inferred)
}

pub fn cmd_fuzz(a: &FuzzArgs) -> Result<CampaignResult, CliError> {
    let sc = load_scenario(&a.scenario).map_err(input_err)?;
    let cfg = a.config.resolve()?;
    let kb = load_kb(a.kb.as_deref())?;
    let trace = load_trace(a.trace.as_deref())?;
    let (nr, dispatch) = (NrTable::x86_64(), DispatchFrames::default());
    let evidence = trace.as_ref().map(|t| TraceEvidence {
        trace: t,
        nr_table: &nr,
        dispatch: &dispatch,
    });
    let plan = plan_campaign(&sc, &a.target, &cfg, &kb, evidence).map_err(input_err)?;
    let result = run_campaign(&sc, &plan, &cfg).map_err(input_err)?;
    out_dir(&a.out_dir)?;
    write_file(&a.out_dir.join("report.json"), &result.to_json())?;
    if let Some(poc) = &result.poc {
        poc.save(a.out_dir.join("poc.txt")).map_err(input_err)?;
    }
    println!(
        "{}: {} after {} executions ({:.0}s virtual)",
        plan.target.name,
        if result.hit { "hit" } else { "not hit" },
        result.executions,
        result.tte_secs
    );
    Ok(result)
}

fn parse_case(spec: &str) -> Result<(Scenario, Vec<String>), CliError> {
    let (path, target) = match spec.rsplit_once('@') {
        Some((p, t)) => (p, Some(t.to_string())),
        None => (spec, None),
    };
    let sc = load_scenario(path).map_err(input_err)?;
    let targets = match target {
        Some(t) => vec![t],
        None => sc.targets().iter().map(|t| t.name.clone()).collect(),
    };
    if targets.is_empty() {
        return Err(input_err(format!("{path}: no targets")));
    }
    Ok((sc, targets))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchTable {
    pub scenario: String,
    pub target: String,
    pub rows: Vec<ReportRow>,
}

/// Repetition `i` of `mode` uses seed `rng_seed + i`.
fn repeat(sc: &Scenario, target: &str, base: &CampaignConfig, mode: Mode, kb: &KnowledgeBase, parallel: bool) -> Result<Vec<CampaignResult>, CliError> {
    let cfg = CampaignConfig { mode, ..base.clone() };
    let plan = plan_campaign(sc, target, &cfg, kb, None).map_err(input_err)?;
    let one = |i: usize| {
        let c = CampaignConfig {
            rng_seed: cfg.repetition_seed(i),
            ..cfg.clone()
        };
        run_campaign(sc, &plan, &c).map_err(input_err)
    };
    if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..cfg.repetitions).map(|i| s.spawn(move || one(i))).collect();
            handles.into_iter().map(|h| h.join().expect("repetition panicked")).collect()
        })
    } else {
        (0..cfg.repetitions).map(one).collect()
    }
}

fn tte_sample(results: &[CampaignResult], timeout: f64) -> Result<TteSample, CliError> {
    let values = results.iter().map(|r| r.tte_secs).collect();
    let hits: Vec<bool> = results.iter().map(|r| r.hit).collect();
    TteSample::with_hits(values, &hits, timeout).map_err(input_err)
}

pub fn cmd_bench(a: &BenchArgs) -> Result<Vec<BenchTable>, CliError> {
    let cfg = a.config.resolve()?;
    let kb = load_kb(a.kb.as_deref())?;
    let alt = if a.two_sided { Alternative::TwoSided } else { Alternative::Less };
    let mut modes: Vec<Mode> = a.modes.iter().copied().filter(|&m| m != Mode::Undirected).collect();
    modes.dedup();
    let mut tables = Vec::new();
    for spec in &a.cases {
        let (sc, targets) = parse_case(spec)?;
        for target in targets {
            let baseline = repeat(&sc, &target, &cfg, Mode::Undirected, &kb, a.parallel)?;
            let base = tte_sample(&baseline, cfg.timeout_secs)?;
            let mut rows = Vec::new();
            for &mode in &modes {
                let runs = repeat(&sc, &target, &cfg, mode, &kb, a.parallel)?;
                rows.push(compare(mode.as_str(), &tte_sample(&runs, cfg.timeout_secs)?, &base, alt).map_err(input_err)?);
            }
            rows.push(compare(Mode::Undirected.as_str(), &base, &base, alt).map_err(input_err)?);
            tables.push(BenchTable {
                scenario: sc.name.clone(),
                target,
                rows,
            });
        }
    }
    out_dir(&a.out_dir)?;
    let mut text = String::new();
    let mut csv = String::new();
    for t in &tables {
        text.push_str(&format!("# {} / {}\n{}\n", t.scenario, t.target, render_table(&t.rows)));
        csv.push_str(&format!("# {} / {}\n{}", t.scenario, t.target, render_csv(&t.rows)));
    }
    write_file(&a.out_dir.join("bench.txt"), &text)?;
    write_file(&a.out_dir.join("bench.csv"), &csv)?;
    let json = serde_json::to_string_pretty(&tables).expect("tables serialize");
    write_file(&a.out_dir.join("bench.json"), &json)?;
    print!("{text}");
    Ok(tables)
}

pub fn cmd_minimize(a: &MinimizeArgs) -> Result<Input, CliError> {
    let sc = load_scenario(&a.scenario).map_err(input_err)?;
    let target = find_target(&sc, &a.target).map_err(input_err)?;
    let poc = Input::load(&a.poc).map_err(input_err)?;
    let min = minimize_poc(&poc, &sc, target.block).map_err(input_err)?;
    let out = a.out.clone().unwrap_or_else(|| {
        let mut p = a.poc.clone().into_os_string();
        p.push(".min");
        PathBuf::from(p)
    });
    min.save(&out).map_err(input_err)?;
    println!("{} -> {} calls, written to {}", poc.len(), min.len(), out.display());
    Ok(min)
}
