//! Command-line entry point. Exit codes: 0 on success, 1 on a domain error
//! (invalid knowledge base or query, engine failure, divergence), 2 on I/O
//! and usage errors.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use thiserror::Error;

use crate::bench::{bench_chain, bench_planning, BenchRow};
use crate::compile::{compile, ImplicationGraph};
use crate::factor::WeightVector;
use crate::infer::{marginals, CaseSplitOptions, Engine, Schedule};
use crate::kb::{parse_kb, validate_kb, KnowledgeBase};
use crate::learn::{best, fit_weights, parse_candidates, parse_training_data, rescore_parses, FitOptions, LearnError};
use crate::query::{answer, parse_query, AnswerOptions, EngineChoice};
use crate::random::{has_cycle, random_loopy};

#[derive(Debug, Parser)]
#[command(name = "hornbp", version, about = "Probabilistic Horn-clause reasoning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and validate a knowledge base.
    Check {
        #[arg(long)]
        kb: PathBuf,
    },
    /// Print the compiled implication graph.
    Compile {
        #[arg(long)]
        kb: PathBuf,
        /// Write the implication graph as DOT.
        #[arg(long)]
        export_dot: Option<PathBuf>,
    },
    /// Answer a query file against a knowledge base.
    Query(QueryArgs),
    /// Compare belief propagation with exact enumeration.
    Compare(CompareArgs),
    /// Fit rule weights to JSONL training data.
    Train(TrainArgs),
    /// Rescore candidate parses by their logical prior.
    Rescore(RescoreArgs),
    /// Time grounding and inference on generated knowledge bases (CSV).
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Text,
}

/// Inference settings; these override options given in a query file.
#[derive(Debug, Clone, Default, Args)]
pub struct EngineArgs {
    /// bp, oracle, case-split or auto.
    #[arg(long)]
    pub engine: Option<EngineChoice>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// sequential or synchronous.
    #[arg(long)]
    pub schedule: Option<Schedule>,
    #[arg(long)]
    pub damping: Option<f64>,
    #[arg(long)]
    pub depth_limit: Option<usize>,
    /// Prior of propositions with neither a fact nor a rule.
    #[arg(long)]
    pub open_world_prior: Option<f64>,
    #[arg(long)]
    pub branch_cap: Option<u64>,
}

impl EngineArgs {
    fn apply(&self, opts: &mut AnswerOptions) -> Result<(), CliError> {
        let usage = |m: String| Err(CliError::Usage(m));
        if let Some(e) = self.engine {
            opts.engine = e;
        }
        if let Some(t) = self.tol {
            if !(t > 0.0 && t.is_finite()) {
                return usage(format!("--tol {t} must be positive"));
            }
            opts.bp.tol = t;
        }
        if let Some(n) = self.max_iters {
            if n == 0 {
                return usage("--max-iters must be at least 1".into());
            }
            opts.bp.max_iters = n;
        }
        if let Some(s) = self.schedule {
            opts.bp.schedule = s;
        }
        if let Some(d) = self.damping {
            if !(0.0..1.0).contains(&d) {
                return usage(format!("--damping {d} must be in [0, 1)"));
            }
            opts.bp.damping = d;
        }
        if let Some(d) = self.depth_limit {
            if d == 0 {
                return usage("--depth-limit must be at least 1".into());
            }
            opts.ground.depth_limit = d;
        }
        if let Some(p) = self.open_world_prior {
            if !(0.0..=1.0).contains(&p) {
                return usage(format!("--open-world-prior {p} must be in [0, 1]"));
            }
            opts.ground.default_prior = p;
        }
        if let Some(c) = self.branch_cap {
            if c == 0 {
                return usage("--branch-cap must be at least 1".into());
            }
            opts.branch_cap = c;
        }
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub kb: PathBuf,
    #[arg(long)]
    pub query: PathBuf,
    #[command(flatten)]
    pub engine: EngineArgs,
    /// JSON object mapping feature ids to weights.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
    /// Write the factor graph as DOT.
    #[arg(long)]
    pub export_dot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long, requires = "query", conflicts_with = "random")]
    pub kb: Option<PathBuf>,
    #[arg(long, requires = "kb")]
    pub query: Option<PathBuf>,
    /// Compare on this many random loopy graphs instead of a query.
    #[arg(long)]
    pub random: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Optional; links in the data are checked against its rule ids.
    #[arg(long)]
    pub kb: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Weights file; printed to standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = FitOptions::default().lr)]
    pub lr: f64,
    #[arg(long, default_value_t = FitOptions::default().epochs)]
    pub epochs: usize,
    #[arg(long, default_value_t = FitOptions::default().l2)]
    pub l2: f64,
    /// Keep the step size fixed even when a step lowers the objective.
    #[arg(long)]
    pub no_safeguard: bool,
}

#[derive(Debug, Args)]
pub struct RescoreArgs {
    #[arg(long)]
    pub kb: PathBuf,
    /// JSONL or JSON array of {id, score, assume, ask}.
    #[arg(long)]
    pub candidates: PathBuf,
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Chain lengths; defaults to 1000,2000,...,10000 unless only
    /// --planning is given.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// Numbers of independent disjunctions.
    #[arg(long, value_delimiter = ',')]
    pub planning: Option<Vec<usize>>,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long)]
    pub branch_cap: Option<u64>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    /// Malformed input data (JSON, JSONL).
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Domain(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Domain(_) => 1,
            _ => 2,
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

fn stdout_err(source: io::Error) -> CliError {
    CliError::Io {
        path: PathBuf::from("<stdout>"),
        source,
    }
}

/// Parses a knowledge base; validation diagnostics go to `err`.
fn load_kb(path: &Path, err: &mut dyn Write) -> Result<KnowledgeBase, CliError> {
    let text = read(path)?;
    let kb = parse_kb(&text).map_err(|e| CliError::Domain(format!("{}:{e}", path.display())))?;
    let diags = validate_kb(&kb);
    for d in &diags {
        let _ = writeln!(err, "{}: {d}", path.display());
    }
    if diags.is_empty() {
        Ok(kb)
    } else {
        Err(CliError::Domain(format!(
            "{}: {} diagnostic(s)",
            path.display(),
            diags.len()
        )))
    }
}

fn load_weights(path: Option<&PathBuf>) -> Result<Option<WeightVector>, CliError> {
    let Some(path) = path else { return Ok(None) };
    let w: WeightVector =
        serde_json::from_str(&read(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    if !w.is_finite() {
        return Err(CliError::Input(format!("{}: weights must be finite", path.display())));
    }
    Ok(Some(w))
}

fn domain(e: impl std::fmt::Display) -> CliError {
    CliError::Domain(e.to_string())
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return 2;
            }
            let _ = write!(out, "{e}");
            return 0;
        }
    };
    match execute(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Check { kb } => {
            let parsed = load_kb(&kb, err)?;
            writeln!(
                out,
                "ok: {} predicates, {} facts, {} rules",
                parsed.predicates().count(),
                parsed.facts().count(),
                parsed.rules().len()
            )
            .map_err(stdout_err)
        }
        Command::Compile { kb, export_dot } => {
            let ig = compile(&load_kb(&kb, err)?);
            if let Some(path) = export_dot {
                write_file(&path, &ig.to_dot())?;
            }
            out.write_all(describe(&ig).as_bytes()).map_err(stdout_err)
        }
        Command::Query(args) => cmd_query(args, out, err),
        Command::Compare(args) => cmd_compare(args, out, err),
        Command::Train(args) => cmd_train(args, out, err),
        Command::Rescore(args) => cmd_rescore(args, out, err),
        Command::Bench(args) => cmd_bench(args, out),
    }
}

fn describe(ig: &ImplicationGraph) -> String {
    let mut s = String::new();
    for link in ig.links() {
        let premise: Vec<String> = link
            .clauses
            .iter()
            .map(|c| {
                let atoms: Vec<String> = c.atoms.iter().map(ToString::to_string).collect();
                format!("{} [{}]", atoms.join(", "), c.source)
            })
            .collect();
        s.push_str(&format!(
            "{} <- {}\t{}\n",
            link.conclusion_pattern,
            premise.join(" | "),
            link.fragment
        ));
    }
    for r in &ig.planning_rules {
        s.push_str(&format!("{r}\tplanning\n"));
    }
    s
}

fn cmd_query(args: QueryArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let kb = load_kb(&args.kb, err)?;
    let query =
        parse_query(&read(&args.query)?).map_err(|e| CliError::Domain(format!("{}:{e}", args.query.display())))?;
    let weights = load_weights(args.weights.as_ref())?;
    let mut opts = AnswerOptions::default();
    query.options.apply(&mut opts);
    args.engine.apply(&mut opts)?;
    let ig = compile(&kb);
    let ans = answer(&kb, &ig, &query, weights.as_ref(), &opts).map_err(domain)?;
    if let Some(path) = &args.export_dot {
        write_file(path, &ans.factor_graph.to_dot())?;
    }
    let text = match args.format {
        Format::Json => ans.to_json() + "\n",
        Format::Text => ans.to_text(),
    };
    out.write_all(text.as_bytes()).map_err(stdout_err)
}

fn cmd_compare(args: CompareArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let mut opts = AnswerOptions::default();
    if let Some(n) = args.random {
        args.engine.apply(&mut opts)?;
        return compare_random(n, args.seed, &opts, args.format, out);
    }
    let (Some(kb_path), Some(query_path)) = (&args.kb, &args.query) else {
        return Err(CliError::Usage("compare needs --kb and --query, or --random".into()));
    };
    let kb = load_kb(kb_path, err)?;
    let query =
        parse_query(&read(query_path)?).map_err(|e| CliError::Domain(format!("{}:{e}", query_path.display())))?;
    let weights = load_weights(args.weights.as_ref())?;
    query.options.apply(&mut opts);
    args.engine.apply(&mut opts)?;
    let ig = compile(&kb);
    let run = |engine| {
        let mut o = opts.clone();
        o.engine = engine;
        answer(&kb, &ig, &query, weights.as_ref(), &o).map_err(domain)
    };
    let bp = run(EngineChoice::Bp)?;
    let exact = run(EngineChoice::Oracle)?;
    let rows: Vec<(String, f64, f64)> = bp
        .answers
        .iter()
        .zip(&exact.answers)
        .map(|((prop, a), (_, b))| (prop.to_string(), *a, *b))
        .collect();
    let max = rows.iter().map(|r| (r.1 - r.2).abs()).fold(0.0, f64::max);
    let text = match args.format {
        Format::Json => {
            let answers: Vec<_> = rows
                .iter()
                .map(|(prop, a, b)| json!({"prop": prop, "bp": a, "oracle": b, "diff": (a - b).abs()}))
                .collect();
            let v = json!({
                "answers": answers,
                "max_abs_diff": max,
                "converged": bp.marginals.converged,
                "iterations": bp.marginals.iterations,
            });
            format!("{v}\n")
        }
        Format::Text => {
            let mut s = String::from("prop\tbp\toracle\tdiff\n");
            for (prop, a, b) in &rows {
                s.push_str(&format!("{prop}\t{a}\t{b}\t{:e}\n", (a - b).abs()));
            }
            s.push_str(&format!(
                "# max_abs_diff {max:e} converged {} iterations {}\n",
                bp.marginals.converged, bp.marginals.iterations
            ));
            s
        }
    };
    out.write_all(text.as_bytes()).map_err(stdout_err)
}

fn compare_random(
    n: usize,
    seed: u64,
    opts: &AnswerOptions,
    format: Format,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let fg = random_loopy(&mut rng, 15, 1.0).factor_graph();
        let bp = marginals(&fg, Engine::Bp, &opts.bp, opts.oracle_cap).map_err(domain)?;
        let exact = marginals(&fg, Engine::Oracle, &opts.bp, opts.oracle_cap).map_err(domain)?;
        rows.push((
            i,
            fg.num_variables(),
            has_cycle(&fg),
            bp.converged,
            bp.iterations,
            bp.max_abs_diff(&exact),
        ));
    }
    let text = match format {
        Format::Json => {
            let items: Vec<_> = rows
                .iter()
                .map(|&(i, vars, cyclic, conv, iters, diff)| {
                    json!({"instance": i, "variables": vars, "cyclic": cyclic, "converged": conv,
                           "iterations": iters, "max_abs_diff": diff})
                })
                .collect();
            let max = rows.iter().map(|r| r.5).fold(0.0, f64::max);
            format!("{}\n", json!({"seed": seed, "instances": items, "max_abs_diff": max}))
        }
        Format::Text => {
            let mut s = String::from("instance\tvariables\tcyclic\tconverged\titerations\tmax_abs_diff\n");
            for (i, vars, cyclic, conv, iters, diff) in rows {
                s.push_str(&format!("{i}\t{vars}\t{cyclic}\t{conv}\t{iters}\t{diff:e}\n"));
            }
            s
        }
    };
    out.write_all(text.as_bytes()).map_err(stdout_err)
}

fn cmd_train(args: TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let kb = args.kb.as_ref().map(|p| load_kb(p, err)).transpose()?;
    let data = parse_training_data(&read(&args.data)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.data.display())))?;
    if let Some(kb) = &kb {
        let mut unknown: Vec<&str> = data
            .iter()
            .flat_map(|ex| ex.groups.iter().map(|(link, _)| link.as_str()))
            .filter(|link| kb.rule(link).is_none())
            .collect();
        unknown.sort_unstable();
        unknown.dedup();
        for link in unknown {
            let _ = writeln!(err, "warning: link {link} is not a rule of the knowledge base");
        }
    }
    let opts = FitOptions {
        lr: args.lr,
        epochs: args.epochs,
        l2: args.l2,
        safeguard: !args.no_safeguard,
    };
    let report = fit_weights(&data, &opts).map_err(|e| match e {
        LearnError::InvalidOption(m) => CliError::Usage(m),
        e => domain(e),
    })?;
    let json = serde_json::to_string_pretty(&report.weights).expect("weights serialize") + "\n";
    let summary = format!("mean_log_likelihood {}\n", report.log_likelihood);
    match &args.out {
        Some(path) => {
            write_file(path, &json)?;
            out.write_all(summary.as_bytes()).map_err(stdout_err)
        }
        None => {
            let _ = err.write_all(summary.as_bytes());
            out.write_all(json.as_bytes()).map_err(stdout_err)
        }
    }
}

fn cmd_rescore(args: RescoreArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let kb = load_kb(&args.kb, err)?;
    let candidates = parse_candidates(&read(&args.candidates)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.candidates.display())))?;
    let weights = load_weights(args.weights.as_ref())?;
    let mut opts = AnswerOptions::default();
    args.engine.apply(&mut opts)?;
    let ig = compile(&kb);
    let rescored = rescore_parses(&candidates, &kb, &ig, weights.as_ref(), &opts).map_err(domain)?;
    let top = best(&rescored).map(|i| rescored[i].id.clone());
    let text = match args.format {
        Format::Json => {
            let items: Vec<_> = rescored
                .iter()
                .map(|r| json!({"id": r.id, "score": r.score, "logical_prior": r.logical_prior, "posterior": r.posterior}))
                .collect();
            format!("{}\n", json!({"candidates": items, "best": top}))
        }
        Format::Text => {
            let mut s = String::from("id\tscore\tlogical_prior\tposterior\n");
            for r in &rescored {
                s.push_str(&format!(
                    "{}\t{}\t{}\t{}\n",
                    r.id, r.score, r.logical_prior, r.posterior
                ));
            }
            if let Some(id) = top {
                s.push_str(&format!("# best {id}\n"));
            }
            s
        }
    };
    out.write_all(text.as_bytes()).map_err(stdout_err)
}

fn cmd_bench(args: BenchArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let sizes = match (&args.sizes, &args.planning) {
        (Some(s), _) => s.clone(),
        (None, Some(_)) => Vec::new(),
        (None, None) => (1..=10).map(|i| i * 1000).collect(),
    };
    let planning = args.planning.clone().unwrap_or_default();
    if sizes.iter().chain(&planning).any(|&n| n == 0) {
        return Err(CliError::Usage("bench sizes must be positive".into()));
    }
    if args.repeats == 0 {
        return Err(CliError::Usage("--repeats must be at least 1".into()));
    }
    let mut cs = CaseSplitOptions::default();
    if let Some(c) = args.branch_cap {
        cs.branch_cap = c;
    }
    writeln!(out, "{}", BenchRow::CSV_HEADER).map_err(stdout_err)?;
    for n in sizes {
        writeln!(out, "{}", bench_chain(n, args.repeats).to_csv()).map_err(stdout_err)?;
    }
    for k in planning {
        let row = bench_planning(k, &cs).map_err(domain)?;
        writeln!(out, "{}", row.to_csv()).map_err(stdout_err)?;
    }
    Ok(())
}
