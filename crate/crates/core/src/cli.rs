//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 when an allocation or color map fails
//! verification, 2 on usage and input errors. Log verbosity comes from
//! `REGALLOC_RL_LOG` (e.g. `REGALLOC_RL_LOG=debug`).

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufReader, BufWriter};
use std::net::TcpListener;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::baselines::{brute_force_color, greedy_allocate, random_policy_step, GreedyOptions};
use crate::embeddings::{generate_triplets, train_transe, TransEConfig, Vocabulary};
use crate::env::{run_episode, EnvConfig, Episode, Transcript};
use crate::igraph::build_interference_graph;
use crate::liveness::compute_liveness;
use crate::machine::{load_machine_description, MachineDescription};
use crate::mir::{generate_random_function, interpret, interpret_with_machine, parse_function, GenParams, MachineFunction, DEFAULT_FUEL};
use crate::protocol::{drive_remote, run_session, serve_tcp, ServerContext};
use crate::transforms::{materialize, verify_allocation, Color, ColorMap, TransformError};

/// Like `println!`, but a closed stdout (e.g. piping into `head`) ends the
/// process quietly instead of panicking.
macro_rules! out {
    ($($t:tt)*) => {
        emit(format_args!($($t)*))
    };
}

fn emit(args: std::fmt::Arguments<'_>) {
    use std::io::Write;
    let mut s = io::stdout().lock();
    if let Err(e) = s.write_fmt(args).and_then(|_| s.write_all(b"\n")) {
        if e.kind() == io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        panic!("failed printing to stdout: {e}");
    }
}

#[derive(Parser, Debug)]
#[command(name = "marl-regalloc", version, about = "Register allocation environment over a toy machine IR")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Allocate one function and print a cost and spill summary.
    Alloc(AllocArgs),
    /// Check a color map against a function.
    Verify(VerifyArgs),
    /// Generate random functions.
    Gen(GenArgs),
    /// Instruction embedding vocabulary.
    #[command(subcommand)]
    Embed(EmbedCommand),
    /// Serve episodes to a learner over TCP or stdio.
    Serve(ServeArgs),
    /// Per-function vertex, interference and pressure counts.
    Stats(StatsArgs),
    /// Compare policies over a corpus by cost and spilled weight.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Policy {
    Greedy,
    /// Greedy without live-range splitting.
    NoSplit,
    Random,
    Oracle,
    Remote(String),
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "greedy" => Ok(Policy::Greedy),
            "nosplit" => Ok(Policy::NoSplit),
            "random" => Ok(Policy::Random),
            "oracle" => Ok(Policy::Oracle),
            _ => match s.strip_prefix("remote:") {
                Some(addr) if addr.rsplit_once(':').is_some_and(|(h, p)| !h.is_empty() && p.parse::<u16>().is_ok()) => {
                    Ok(Policy::Remote(addr.to_string()))
                }
                _ => Err(format!(
                    "unknown policy `{s}`; expected greedy, nosplit, random, oracle or remote:HOST:PORT"
                )),
            },
        }
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Policy::Greedy => f.write_str("greedy"),
            Policy::NoSplit => f.write_str("nosplit"),
            Policy::Random => f.write_str("random"),
            Policy::Oracle => f.write_str("oracle"),
            Policy::Remote(a) => write!(f, "remote:{a}"),
        }
    }
}

#[derive(Args, Debug)]
pub struct AllocArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Built-in machine name or path to a TOML description.
    #[arg(long, default_value = "x86like")]
    pub machine: String,
    #[arg(long, default_value = "greedy")]
    pub policy: Policy,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also compare program output before and after allocation.
    #[arg(long)]
    pub verify: bool,
    #[arg(long)]
    pub dump_liveness: bool,
    #[arg(long)]
    pub dump_graph: bool,
    /// Write the episode transcript (random and remote policies).
    #[arg(long)]
    pub record: Option<PathBuf>,
    /// Write the allocated function here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the color map (registers and SPILL marks) as JSON.
    #[arg(long)]
    pub colors: Option<PathBuf>,
    /// Embedding vocabulary for observations; untrained vectors otherwise.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "x86like")]
    pub machine: String,
    /// JSON object from vreg name to register or "SPILL".
    #[arg(long)]
    pub colors: PathBuf,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub count: u64,
    /// Directory for `gen<seed>.mir` files; stdout otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "x86like")]
    pub machine: String,
    /// TOML file with generator parameters.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub instrs: Option<usize>,
    #[arg(long)]
    pub vregs: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum EmbedCommand {
    /// Train a TransE vocabulary on a corpus.
    TrainVocab(TrainVocabArgs),
}

#[derive(Args, Debug, Clone)]
pub struct CorpusArgs {
    /// Directory of `.mir` files.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Generate this many functions instead, seeds starting at `--seed`.
    #[arg(long)]
    pub generate: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainVocabArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long, default_value_t = 100)]
    pub dim: usize,
    #[arg(long, default_value_t = 1000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1.0)]
    pub margin: f64,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Machine used to name physical-register operand tokens.
    #[arg(long)]
    pub machine: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, conflicts_with = "stdio")]
    pub port: Option<u16>,
    #[arg(long)]
    pub stdio: bool,
    #[arg(long, default_value = "x86like")]
    pub machine: String,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Dimension of the untrained vocabulary used without `--vocab`.
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Accepted seeds, `A..B`.
    #[arg(long, value_parser = parse_range)]
    pub seed_range: Option<Range<u64>>,
    /// Stop after this many TCP connections.
    #[arg(long)]
    pub max_sessions: Option<usize>,
    #[arg(long, default_value_t = 4)]
    pub min_vertices: usize,
    #[arg(long, default_value_t = 200)]
    pub max_vertices: usize,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "x86like")]
    pub machine: String,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "x86like")]
    pub machine: String,
    #[arg(long, value_delimiter = ',', default_value = "greedy,nosplit,random,oracle")]
    pub policies: Vec<Policy>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

fn parse_range(s: &str) -> Result<Range<u64>, String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected A..B, got `{s}`"))?;
    let a: u64 = a.trim().parse().map_err(|e| format!("bad range start: {e}"))?;
    let b: u64 = b.trim().parse().map_err(|e| format!("bad range end: {e}"))?;
    if a >= b {
        return Err(format!("empty range {a}..{b}"));
    }
    Ok(a..b)
}

/// Failure of a subcommand, carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub error: anyhow::Error,
}

impl From<anyhow::Error> for CliError {
    fn from(error: anyhow::Error) -> Self {
        CliError { code: 2, error }
    }
}

fn verification_failure(error: anyhow::Error) -> CliError {
    CliError { code: 1, error }
}

pub fn load_machine(spec: &str) -> anyhow::Result<MachineDescription> {
    let p = Path::new(spec);
    if p.is_file() {
        let text = fs::read_to_string(p).with_context(|| format!("reading {spec}"))?;
        return load_machine_description(&text).with_context(|| format!("loading machine {spec}"));
    }
    MachineDescription::builtin(spec).map_err(|_| {
        anyhow!(
            "`{spec}` is neither a file nor a built-in machine ({})",
            MachineDescription::builtin_names().join(", ")
        )
    })
}

pub fn load_function(path: &Path) -> anyhow::Result<MachineFunction> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_function(&text).with_context(|| format!("parsing {}", path.display()))
}

/// All `.mir` files of a directory, in file-name order.
pub fn load_corpus(dir: &Path) -> anyhow::Result<Vec<MachineFunction>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading corpus {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "mir"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .mir files in {}", dir.display());
    }
    paths.iter().map(|p| load_function(p)).collect()
}

fn corpus_from(args: &CorpusArgs, seed: u64, md: &MachineDescription) -> anyhow::Result<Vec<MachineFunction>> {
    match (&args.corpus, args.generate) {
        (Some(dir), None) => load_corpus(dir),
        (None, Some(n)) => {
            let p = GenParams::for_machine(md);
            Ok((seed..seed + n).map(|s| generate_random_function(s, &p)).collect())
        }
        _ => bail!("give exactly one of --corpus DIR or --generate N"),
    }
}

fn load_vocab(path: Option<&Path>, dim: usize, seed: u64) -> anyhow::Result<Vocabulary> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Vocabulary::from_json(&text).with_context(|| format!("loading vocabulary {}", p.display()))
        }
        None => Ok(Vocabulary::untrained(dim, seed)),
    }
}

/// Result of allocating one function with some policy.
#[derive(Debug, Clone)]
pub struct Allocation {
    pub function: MachineFunction,
    pub decisions: ColorMap,
    pub cost: u64,
    pub greedy_cost: u64,
    pub spilled: Vec<String>,
    pub cascaded: Vec<String>,
    pub splits: usize,
    pub spilled_weight: f64,
    pub transcript: Option<Transcript>,
    pub global_reward: Option<f64>,
}

/// Allocates `f` with `policy`. Random and remote policies run an episode;
/// functions outside the episode size range fall back to greedy.
pub fn allocate(
    f: &MachineFunction,
    md: &MachineDescription,
    policy: &Policy,
    seed: u64,
    vocab: &Arc<Vocabulary>,
    config: &EnvConfig,
) -> anyhow::Result<Allocation> {
    md.check_function(f)?;
    let greedy = |split| greedy_allocate(f, md, GreedyOptions { split });
    match policy {
        Policy::Greedy | Policy::NoSplit => {
            let r = greedy(*policy == Policy::Greedy)?;
            Ok(Allocation {
                function: r.materialized.function,
                spilled: r.materialized.spilled,
                cascaded: r.materialized.cascaded,
                decisions: r.decisions,
                cost: r.cost,
                greedy_cost: r.cost,
                splits: r.splits.len(),
                spilled_weight: r.spilled_weight,
                transcript: None,
                global_reward: None,
            })
        }
        Policy::Oracle => {
            let info = compute_liveness(f);
            let g = build_interference_graph(f, &info);
            let cmap = brute_force_color(&g, md)?;
            let m = materialize(f, md, &cmap)?;
            let cost = md.estimate_throughput(&m.function)?;
            Ok(Allocation {
                spilled_weight: m.all_spilled().map(|v| info.weight(v)).fold(0.0, |a, b| a + b),
                function: m.function,
                spilled: m.spilled,
                cascaded: m.cascaded,
                decisions: cmap,
                cost,
                greedy_cost: greedy(true)?.cost,
                splits: 0,
                transcript: None,
                global_reward: None,
            })
        }
        Policy::Random | Policy::Remote(_) => {
            let mut ep = Episode::reset(f, Arc::new(md.clone()), vocab.clone(), config.clone())?;
            let fin = match policy {
                Policy::Remote(addr) => drive_remote(addr.as_str(), &mut ep)?,
                _ => run_episode(&mut ep, |o, step| random_policy_step(&o.mask, seed, step).expect("masks are non-empty"))?,
            };
            let spilled: Vec<String> = fin
                .decisions
                .iter()
                .filter(|(_, c)| **c == Color::Spill)
                .map(|(v, _)| v.clone())
                .collect();
            let weights = if fin.routed {
                compute_liveness(f)
            } else {
                ep.liveness().clone()
            };
            Ok(Allocation {
                spilled_weight: spilled.iter().chain(&fin.cascaded).map(|v| weights.weight(v)).fold(0.0, |a, b| a + b),
                transcript: Some(ep.transcript(Some(&fin))),
                global_reward: Some(fin.global_reward),
                function: fin.function,
                decisions: fin.decisions,
                cost: fin.cost_rl,
                greedy_cost: fin.cost_greedy,
                spilled,
                cascaded: fin.cascaded,
                splits: ep.splits(),
            })
        }
    }
}

/// Input vectors used to compare program output, fixed by `seed`.
pub fn probe_inputs(arity: usize, seed: u64, count: usize) -> Vec<Vec<i64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![vec![0; arity]];
    while out.len() < count {
        out.push((0..arity).map(|_| rng.gen_range(-100..=100)).collect());
    }
    out
}

fn write_or_print(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            out!("{text}");
            Ok(())
        }
    }
}

fn cmd_alloc(a: &AllocArgs) -> Result<(), CliError> {
    let md = load_machine(&a.machine)?;
    let f = load_function(&a.input)?;
    let info = compute_liveness(&f);
    if a.dump_liveness {
        out!("{}", info.report());
    }
    if a.dump_graph {
        out!("{}", build_interference_graph(&f, &info).dump(None));
    }
    let vocab = Arc::new(load_vocab(a.vocab.as_deref(), 32, a.seed)?);
    let r = match allocate(&f, &md, &a.policy, a.seed, &vocab, &EnvConfig::default()) {
        Ok(r) => r,
        Err(e) => {
            let verification = e
                .chain()
                .any(|c| matches!(c.downcast_ref::<TransformError>(), Some(TransformError::Verification(_))));
            return Err(if verification { verification_failure(e) } else { e.into() });
        }
    };
    out!(
        "policy {}: cost {} (greedy {}), spilled {} (weight {}), cascaded {}, splits {}",
        a.policy,
        r.cost,
        r.greedy_cost,
        r.spilled.len(),
        r.spilled_weight,
        r.cascaded.len(),
        r.splits
    );
    if let Some(g) = r.global_reward {
        out!("global reward {g}");
    }
    if a.verify {
        for input in probe_inputs(f.params.len(), a.seed, 8) {
            let want = interpret(&f, &input, DEFAULT_FUEL);
            let got = interpret_with_machine(&r.function, &md, &input, DEFAULT_FUEL);
            if want != got {
                return Err(verification_failure(anyhow!(
                    "output differs on input {input:?}: expected {want:?}, got {got:?}"
                )));
            }
        }
        out!("verified: allocation is legal and output matches on 8 inputs");
    }
    if let Some(p) = &a.colors {
        let text = serde_json::to_string_pretty(&r.decisions).context("encoding colors")?;
        fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = &a.record {
        let t = r
            .transcript
            .as_ref()
            .ok_or_else(|| anyhow!("--record needs an episode-driven policy (random or remote)"))?;
        fs::write(p, t.to_json()).with_context(|| format!("writing {}", p.display()))?;
    }
    write_or_print(a.out.as_deref(), &r.function.to_string())?;
    Ok(())
}

fn cmd_verify(a: &VerifyArgs) -> Result<(), CliError> {
    let md = load_machine(&a.machine)?;
    let f = load_function(&a.input)?;
    let text = fs::read_to_string(&a.colors).with_context(|| format!("reading {}", a.colors.display()))?;
    let cmap: ColorMap = serde_json::from_str(&text).with_context(|| format!("parsing {}", a.colors.display()))?;
    let info = compute_liveness(&f);
    match verify_allocation(&f, &info, &cmap, &md) {
        Ok(()) => {
            out!("ok: {} vregs", info.ranges.len());
            Ok(())
        }
        Err(vs) => {
            for v in &vs {
                out!("violation {v}");
            }
            Err(verification_failure(anyhow!("{} violation(s)", vs.len())))
        }
    }
}

fn cmd_gen(a: &GenArgs) -> Result<(), CliError> {
    let md = load_machine(&a.machine)?;
    let mut p = match &a.params {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => GenParams::for_machine(&md),
    };
    if let Some(b) = a.blocks {
        p.blocks = b;
    }
    if let Some(n) = a.instrs {
        p.instrs = n;
    }
    if let Some(n) = a.vregs {
        p.vregs = n;
    }
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    for seed in a.seed..a.seed + a.count {
        let f = generate_random_function(seed, &p);
        match &a.out {
            Some(dir) => {
                let path = dir.join(format!("{}.mir", f.name));
                fs::write(&path, format!("{f}\n")).with_context(|| format!("writing {}", path.display()))?;
            }
            None => out!("{f}\n"),
        }
    }
    Ok(())
}

fn cmd_train_vocab(a: &TrainVocabArgs) -> Result<(), CliError> {
    let md = a.machine.as_deref().map(load_machine).transpose()?;
    let gen_md = md.clone().unwrap_or_else(MachineDescription::x86like);
    let corpus = corpus_from(&a.corpus, a.seed, &gen_md)?;
    let triplets = generate_triplets(&corpus, md.as_ref());
    let cfg = TransEConfig {
        dim: a.dim,
        epochs: a.epochs,
        margin: a.margin,
        lr: a.lr,
        seed: a.seed,
    };
    let v = train_transe(&triplets, &cfg).context("training")?;
    fs::write(&a.out, v.to_json()).with_context(|| format!("writing {}", a.out.display()))?;
    let first = v.meta.losses.first().copied().unwrap_or(f64::NAN);
    let last = v.meta.losses.last().copied().unwrap_or(f64::NAN);
    out!(
        "{} functions, {} triplets, {} facts, {} entities; loss {first:.6} -> {last:.6}",
        corpus.len(),
        triplets.len(),
        v.meta.facts,
        v.entities.len()
    );
    Ok(())
}

fn cmd_serve(a: &ServeArgs) -> Result<(), CliError> {
    let md = Arc::new(load_machine(&a.machine)?);
    let vocab = Arc::new(load_vocab(a.vocab.as_deref(), a.dim, 0)?);
    let config = EnvConfig {
        min_vertices: a.min_vertices,
        max_vertices: a.max_vertices,
        ..EnvConfig::default()
    };
    let mut ctx = ServerContext::new(md, vocab, config);
    if let Some(dir) = &a.corpus {
        ctx.corpus = load_corpus(dir)?;
    }
    ctx.seed_range = a.seed_range.clone();
    if a.stdio {
        run_session(BufReader::new(io::stdin().lock()), BufWriter::new(io::stdout().lock()), &ctx)
            .map_err(|e| anyhow!("session: {e}"))?;
        return Ok(());
    }
    let port = a.port.ok_or_else(|| anyhow!("give --port P or --stdio"))?;
    let listener = TcpListener::bind(("127.0.0.1", port)).with_context(|| format!("binding port {port}"))?;
    info!("listening on {}", listener.local_addr().context("local address")?);
    eprintln!("listening on {}", listener.local_addr().context("local address")?);
    serve_tcp(listener, Arc::new(ctx), a.max_sessions).map_err(|e| anyhow!("serving: {e}"))?;
    Ok(())
}

/// Pearson correlation; `None` when either series is constant.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len().min(ys.len()) as f64;
    if n < 2.0 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

fn fmt_corr(r: Option<f64>) -> String {
    r.map_or("undefined".to_string(), |r| format!("{r:.4}"))
}

fn cmd_stats(a: &StatsArgs) -> Result<(), CliError> {
    let md = load_machine(&a.machine)?;
    let corpus = corpus_from(&a.corpus, a.seed, &md)?;
    let rows: Vec<(String, usize, usize, u32)> = corpus
        .par_iter()
        .map(|f| {
            let info = compute_liveness(f);
            let g = build_interference_graph(f, &info);
            (f.name.clone(), g.len(), g.num_edges(), info.pressure)
        })
        .collect();
    let mut csv = String::from("function,vertices,edges,pressure\n");
    out!("{:<24} {:>8} {:>8} {:>8}", "function", "|V|", "|E|", "pressure");
    for (name, v, e, p) in &rows {
        out!("{name:<24} {v:>8} {e:>8} {p:>8}");
        let _ = writeln!(csv, "{name},{v},{e},{p}");
    }
    let vs: Vec<f64> = rows.iter().map(|r| r.1 as f64).collect();
    let es: Vec<f64> = rows.iter().map(|r| r.2 as f64).collect();
    let ps: Vec<f64> = rows.iter().map(|r| r.3 as f64).collect();
    out!("pearson(|V|, |E|) = {}", fmt_corr(pearson(&vs, &es)));
    out!("pearson(pressure, |E|) = {}", fmt_corr(pearson(&ps, &es)));
    if let Some(p) = &a.csv {
        fs::write(p, csv).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Default)]
struct BenchRow {
    functions: usize,
    failures: usize,
    cost: u64,
    spilled_weight: f64,
    ratio_sum: f64,
}

fn cmd_bench(a: &BenchArgs) -> Result<(), CliError> {
    let md = load_machine(&a.machine)?;
    let corpus = corpus_from(&a.corpus, a.seed, &md)?;
    if a.policies.iter().any(|p| matches!(p, Policy::Remote(_))) {
        return Err(anyhow!("bench does not drive remote policies").into());
    }
    let vocab = Arc::new(Vocabulary::untrained(8, a.seed));
    let config = EnvConfig::default();
    let results: Vec<Vec<Option<(u64, u64, f64)>>> = corpus
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            a.policies
                .iter()
                .map(|p| {
                    allocate(f, &md, p, a.seed.wrapping_add(i as u64), &vocab, &config)
                        .ok()
                        .map(|r| (r.cost, r.greedy_cost, r.spilled_weight))
                })
                .collect()
        })
        .collect();
    let mut rows = vec![BenchRow::default(); a.policies.len()];
    for per_fn in &results {
        for (row, r) in rows.iter_mut().zip(per_fn) {
            match r {
                Some((cost, greedy, w)) => {
                    row.functions += 1;
                    row.cost += cost;
                    row.spilled_weight += w;
                    row.ratio_sum += if *greedy == 0 { 1.0 } else { *cost as f64 / *greedy as f64 };
                }
                None => row.failures += 1,
            }
        }
    }
    let mut csv = String::from("policy,functions,skipped,total_cost,spilled_weight,mean_cost_ratio\n");
    out!(
        "{:<10} {:>9} {:>8} {:>12} {:>14} {:>10}",
        "policy", "functions", "skipped", "total cost", "spilled weight", "vs greedy"
    );
    for (p, row) in a.policies.iter().zip(&rows) {
        let ratio = if row.functions == 0 { f64::NAN } else { row.ratio_sum / row.functions as f64 };
        out!(
            "{:<10} {:>9} {:>8} {:>12} {:>14} {:>10.4}",
            p.to_string(),
            row.functions,
            row.failures,
            row.cost,
            row.spilled_weight,
            ratio
        );
        let _ = writeln!(
            csv,
            "{p},{},{},{},{},{ratio}",
            row.functions, row.failures, row.cost, row.spilled_weight
        );
    }
    if let Some(path) = &a.csv {
        fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

pub fn init_logging() {
    let env = env_logger::Env::new().filter_or("REGALLOC_RL_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).try_init();
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Alloc(a) => cmd_alloc(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Gen(a) => cmd_gen(a),
        Command::Embed(EmbedCommand::TrainVocab(a)) => cmd_train_vocab(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            e.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_parsing() {
        assert_eq!("greedy".parse::<Policy>(), Ok(Policy::Greedy));
        assert_eq!("remote:127.0.0.1:9000".parse::<Policy>(), Ok(Policy::Remote("127.0.0.1:9000".into())));
        assert!("remote:nohost".parse::<Policy>().is_err());
        assert!("best".parse::<Policy>().is_err());
    }

    #[test]
    fn seed_ranges() {
        assert_eq!(parse_range("3..10"), Ok(3..10));
        assert!(parse_range("10..3").is_err());
        assert!(parse_range("5").is_err());
    }

    #[test]
    fn correlation() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson(&xs, &[2.0, 4.0, 6.0, 8.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&xs, &[8.0, 6.0, 4.0, 2.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&xs, &[1.0; 4]), None);
    }

    #[test]
    fn probe_inputs_start_with_zeros() {
        let p = probe_inputs(2, 7, 4);
        assert_eq!(p.len(), 4);
        assert_eq!(p[0], vec![0, 0]);
        assert_eq!(p, probe_inputs(2, 7, 4));
    }
}
