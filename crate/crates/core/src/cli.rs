//! The `cfglab` command line.
//!
//! Every subcommand writes into `--out DIR`, starting with `manifest.json`
//! (command, arguments, seeds, input hashes, tool version, timing). Running
//! the same manifest again reproduces every other file byte for byte; see
//! [`replay`].

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attention::{end_targeting_grid, end_to_end_by_distance, end_to_end_grid, position_profile};
use crate::corpus::{pack_corpus, write_corpus};
use crate::evaluation::{
    diversity_table, filter_grammatical, generation_accuracy, marginal_diff, marginal_table, read_completions,
    truth_records, extract_prefixes, write_completions, CompletionRecord,
};
use crate::grammar::{parse_grammar_text, render_grammar_text, validate_cfg, Cfg, CfgSynthSpec, GrammarFamily};
use crate::implicit::{
    build_observable_vocab, embedding_correlation, membership_observable, sample_observable, ObservableVocab, VocabSpec,
};
use crate::parser::{annotate, membership, ParseError};
use crate::perturbation::{
    apply_fraction, corrupt_prefix, perturb_nt_level, perturb_t_level, NtMode, Permutation, PerturbConfig, PerturbKind,
};
use crate::probe::{
    probe_eval, probe_train, read_model, trace_csv, write_model, ProbeConfig, ProbeDataset, ProbeMask, ProbeTarget,
};
use crate::rng::stream_rng;
use crate::sampler::file::{read_annotated, read_sequences, write_annotated, write_sequences, AnnotatedSample};
use crate::sampler::{sample_corpus, Derivation};
use crate::tensor::{
    read_dump, synthesize_fixture, write_dump, AttentionProfile, FixtureSpec, HiddenProfile, TensorDump,
};

pub const MANIFEST: &str = "manifest.json";

/// Stream reserved for draws that are not tied to one item.
const GLOBAL_STREAM: u64 = u64::MAX;

#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T>(message: impl Into<String>) -> Result<T> {
    Err(UsageError(message.into()).into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub flag: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, exactly as given.
    pub argv: Vec<String>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<InputRecord>,
    pub version: String,
    pub started_unix: f64,
    pub wall_clock_seconds: Option<f64>,
    pub status: String,
    pub outputs: Vec<String>,
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Argument list that reruns `manifest` into `out`, with its seed pinned.
pub fn replay_args(manifest: &RunManifest, out: &Path) -> Vec<OsString> {
    let mut args = Vec::new();
    let mut skip = false;
    for a in &manifest.argv {
        if skip {
            skip = false;
            continue;
        }
        if a == "--out" || a == "--seed" {
            skip = true;
            continue;
        }
        if a.starts_with("--out=") || a.starts_with("--seed=") {
            continue;
        }
        args.push(OsString::from(a));
    }
    if let Some(seed) = manifest.seeds.get("seed") {
        args.push("--seed".into());
        args.push(seed.to_string().into());
    }
    args.push("--out".into());
    args.push(out.as_os_str().to_owned());
    args
}

/// Reruns the command recorded in `manifest_path` into `out` after checking
/// that every input still has its recorded hash. Returns the exit code.
pub fn replay(manifest_path: &Path, out: &Path) -> Result<i32> {
    let manifest = read_manifest(manifest_path)?;
    for input in &manifest.inputs {
        let found = sha256_file(Path::new(&input.path))?;
        if found != input.sha256 {
            bail!("input {} changed since the recorded run", input.path);
        }
    }
    let mut argv = vec![OsString::from("cfglab")];
    argv.extend(replay_args(&manifest, out));
    Ok(dispatch(argv))
}

#[derive(Parser, Debug)]
#[command(name = "cfglab", version, about = "Leveled context-free grammar laboratory")]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Out {
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct Seed {
    #[arg(long, env = "CFGLAB_SEED")]
    seed: u64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a random grammar.
    Synth(SynthArgs),
    /// Check a grammar file's structural invariants.
    Validate(ValidateArgs),
    /// Sample annotated strings.
    Sample(SampleArgs),
    /// Report membership of each sequence in a file.
    Check(CheckArgs),
    /// Annotate member strings with their lexicographically least parse.
    Annotate(AnnotateArgs),
    /// Pack samples into fixed-length training windows.
    Pack(PackArgs),
    /// Generation accuracy of a completion file.
    EvalGen(EvalGenArgs),
    /// Per-nonterminal collision counts.
    Diversity(DiversityArgs),
    /// Per-position symbol marginals, optionally compared with a second pool.
    Marginal(MarginalArgs),
    /// Perturb a sample file.
    Perturb(PerturbArgs),
    /// Emit observable strings through token bags.
    ImplicitSample(ImplicitSampleArgs),
    /// Membership of observable strings.
    ImplicitCheck(ImplicitCheckArgs),
    /// Correlation of token embeddings grouped by bag label.
    EmbedCorr(EmbedCorrArgs),
    /// Validate a tensor dump.
    ValidateDump(ValidateDumpArgs),
    /// Write a synthetic tensor dump with known structure.
    Fixture(FixtureArgs),
    /// Train a multi-head linear probe.
    ProbeTrain(ProbeTrainArgs),
    /// Evaluate a trained probe.
    ProbeEval(ProbeEvalArgs),
    /// Position-centered attention statistics.
    AttnStats(AttnStatsArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Validate(_) => "validate",
            Command::Sample(_) => "sample",
            Command::Check(_) => "check",
            Command::Annotate(_) => "annotate",
            Command::Pack(_) => "pack",
            Command::EvalGen(_) => "eval-gen",
            Command::Diversity(_) => "diversity",
            Command::Marginal(_) => "marginal",
            Command::Perturb(_) => "perturb",
            Command::ImplicitSample(_) => "implicit-sample",
            Command::ImplicitCheck(_) => "implicit-check",
            Command::EmbedCorr(_) => "embed-corr",
            Command::ValidateDump(_) => "validate-dump",
            Command::Fixture(_) => "fixture",
            Command::ProbeTrain(_) => "probe-train",
            Command::ProbeEval(_) => "probe-eval",
            Command::AttnStats(_) => "attn-stats",
        }
    }

    fn out(&self) -> &Path {
        match self {
            Command::Synth(a) => &a.out.out,
            Command::Validate(a) => &a.out.out,
            Command::Sample(a) => &a.out.out,
            Command::Check(a) => &a.out.out,
            Command::Annotate(a) => &a.out.out,
            Command::Pack(a) => &a.out.out,
            Command::EvalGen(a) => &a.out.out,
            Command::Diversity(a) => &a.out.out,
            Command::Marginal(a) => &a.out.out,
            Command::Perturb(a) => &a.out.out,
            Command::ImplicitSample(a) => &a.out.out,
            Command::ImplicitCheck(a) => &a.out.out,
            Command::EmbedCorr(a) => &a.out.out,
            Command::ValidateDump(a) => &a.out.out,
            Command::Fixture(a) => &a.out.out,
            Command::ProbeTrain(a) => &a.out.out,
            Command::ProbeEval(a) => &a.out.out,
            Command::AttnStats(a) => &a.out.out,
        }
    }

    fn seed(&self) -> Option<u64> {
        match self {
            Command::Synth(a) => Some(a.seed.seed),
            Command::Sample(a) => Some(a.seed.seed),
            Command::Pack(a) => Some(a.seed.seed),
            Command::Perturb(a) => Some(a.seed.seed),
            Command::ImplicitSample(a) => Some(a.seed.seed),
            Command::Fixture(a) => Some(a.seed.seed),
            Command::ProbeTrain(a) => Some(a.seed.seed),
            _ => None,
        }
    }

    fn inputs(&self) -> Vec<(&'static str, &Path)> {
        let mut v: Vec<(&'static str, Option<&PathBuf>)> = Vec::new();
        match self {
            Command::Synth(_) => {}
            Command::Validate(a) => v.push(("--grammar", Some(&a.grammar))),
            Command::Sample(a) => v.push(("--grammar", Some(&a.grammar))),
            Command::Check(a) => {
                v.push(("--grammar", Some(&a.grammar)));
                v.push(("--input", Some(&a.input)));
            }
            Command::Annotate(a) => {
                v.push(("--grammar", Some(&a.grammar)));
                v.push(("--input", Some(&a.input)));
            }
            Command::Pack(a) => {
                v.push(("--grammar", Some(&a.grammar)));
                v.push(("--input", Some(&a.input)));
            }
            Command::EvalGen(a) => {
                v.push(("--grammar", Some(&a.grammar)));
                v.push(("--completions", Some(&a.completions)));
            }
            Command::Diversity(a) => {
                v.push(("--grammar", Some(&a.grammar)));
                v.push(("--input", a.input.as_ref()));
                v.push(("--completions", a.completions.as_ref()));
            }
            Command::Marginal(a) => {
                v.push(("--grammar", Some(&a.grammar)));
                v.push(("--input", Some(&a.input)));
                v.push(("--compare", a.compare.as_ref()));
            }
            Command::Perturb(a) => {
                v.push(("--grammar", Some(&a.grammar)));
                v.push(("--input", Some(&a.input)));
            }
            Command::ImplicitSample(a) => {
                v.push(("--grammar", Some(&a.grammar)));
                v.push(("--input", Some(&a.input)));
                v.push(("--vocab", a.vocab.as_ref()));
            }
            Command::ImplicitCheck(a) => {
                v.push(("--grammar", Some(&a.grammar)));
                v.push(("--vocab", Some(&a.vocab)));
                v.push(("--input", Some(&a.input)));
            }
            Command::EmbedCorr(a) => {
                v.push(("--grammar", Some(&a.grammar)));
                v.push(("--vocab", Some(&a.vocab)));
                v.push(("--dump", Some(&a.dump)));
            }
            Command::ValidateDump(a) => {
                v.push(("--dump", Some(&a.dump)));
                v.push(("--grammar", a.grammar.as_ref()));
            }
            Command::Fixture(a) => v.push(("--grammar", Some(&a.grammar))),
            Command::ProbeTrain(a) => {
                v.push(("--grammar", Some(&a.data.grammar)));
                v.push(("--dump", Some(&a.data.dump)));
                v.push(("--samples", Some(&a.data.samples)));
            }
            Command::ProbeEval(a) => {
                v.push(("--grammar", Some(&a.data.grammar)));
                v.push(("--dump", Some(&a.data.dump)));
                v.push(("--samples", Some(&a.data.samples)));
                v.push(("--model", Some(&a.model)));
            }
            Command::AttnStats(a) => {
                v.push(("--grammar", Some(&a.data.grammar)));
                v.push(("--dump", Some(&a.data.dump)));
                v.push(("--samples", Some(&a.data.samples)));
            }
        }
        v.into_iter().filter_map(|(flag, p)| p.map(|p| (flag, p.as_path()))).collect()
    }

    fn run(&self, o: &mut Output) -> Result<()> {
        match self {
            Command::Synth(a) => synth(a, o),
            Command::Validate(a) => validate(a, o),
            Command::Sample(a) => sample(a, o),
            Command::Check(a) => check(a, o),
            Command::Annotate(a) => annotate_cmd(a, o),
            Command::Pack(a) => pack(a, o),
            Command::EvalGen(a) => eval_gen(a, o),
            Command::Diversity(a) => diversity(a, o),
            Command::Marginal(a) => marginal(a, o),
            Command::Perturb(a) => perturb(a, o),
            Command::ImplicitSample(a) => implicit_sample(a, o),
            Command::ImplicitCheck(a) => implicit_check(a, o),
            Command::EmbedCorr(a) => embed_corr(a, o),
            Command::ValidateDump(a) => validate_dump(a, o),
            Command::Fixture(a) => fixture(a, o),
            Command::ProbeTrain(a) => probe_train_cmd(a, o),
            Command::ProbeEval(a) => probe_eval_cmd(a, o),
            Command::AttnStats(a) => attn_stats(a, o),
        }
    }
}

struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

impl Output {
    fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(name.to_string());
        Ok(())
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code: 0 on success, 1 on a domain error, 2 on a usage error.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(&cli, args) {
        Ok(()) => 0,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn execute(cli: &Cli, argv: Vec<String>) -> Result<()> {
    let command = &cli.command;
    let dir = command.out().to_path_buf();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut inputs = Vec::new();
    for (flag, path) in command.inputs() {
        inputs.push(InputRecord {
            flag: flag.to_string(),
            path: path.to_string_lossy().into_owned(),
            sha256: sha256_file(path)?,
        });
    }
    let mut manifest = RunManifest {
        command: command.name().to_string(),
        argv,
        seeds: command.seed().map(|s| ("seed".to_string(), s)).into_iter().collect(),
        inputs,
        version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0),
        wall_clock_seconds: None,
        status: "running".into(),
        outputs: Vec::new(),
    };
    let manifest_path = dir.join(MANIFEST);
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;

    let started = Instant::now();
    let mut out = Output { dir, files: Vec::new() };
    let result = match cli.jobs {
        Some(0) => usage("--jobs must be positive"),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build()?;
            pool.install(|| command.run(&mut out))
        }
        None => command.run(&mut out),
    };
    manifest.wall_clock_seconds = Some(started.elapsed().as_secs_f64());
    manifest.status = if result.is_ok() { "ok" } else { "error" }.into();
    manifest.outputs = out.files;
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    result
}

fn load_grammar(path: &Path) -> Result<Cfg> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_grammar_text(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_samples(cfg: &Cfg, path: &Path) -> Result<Vec<AnnotatedSample>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let annotated = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .is_some_and(|l| l.starts_with("sample "));
    if !annotated {
        let seqs = read_sequences(&text).with_context(|| format!("parsing {}", path.display()))?;
        return Ok(seqs
            .into_iter()
            .enumerate()
            .map(|(index, tokens)| AnnotatedSample {
                index,
                grammar_hash: cfg.content_hash_hex(),
                tokens,
                derivation: None,
                perturbed: None,
            })
            .collect());
    }
    let samples = read_annotated(&text).with_context(|| format!("parsing {}", path.display()))?;
    let hash = cfg.content_hash_hex();
    if let Some(s) = samples.iter().find(|s| s.grammar_hash != hash) {
        bail!("{}: sample {} was made for grammar {}, expected {hash}", path.display(), s.index, s.grammar_hash);
    }
    Ok(samples)
}

/// Derivations for every sample, parsing those stored without one.
fn load_derivations(cfg: &Cfg, path: &Path) -> Result<Vec<Derivation>> {
    load_samples(cfg, path)?
        .into_par_iter()
        .map(|s| match s.derivation {
            Some(d) => Ok(d),
            None => annotate(cfg, &s.tokens).with_context(|| format!("sample {}", s.index)),
        })
        .collect()
}

fn load_dump(cfg: Option<&Cfg>, path: &Path) -> Result<TensorDump> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let dump = read_dump(&bytes).with_context(|| format!("reading dump {}", path.display()))?;
    if let Some(cfg) = cfg {
        dump.header.check_grammar(&cfg.content_hash())?;
    }
    Ok(dump)
}

fn is_member(cfg: &Cfg, x: &[u32]) -> Result<bool> {
    match membership(cfg, x) {
        Ok(m) => Ok(m),
        Err(ParseError::UnknownSymbol { .. }) => Ok(false),
        Err(e) => Err(e.into()),
    }
}

fn verdict_lines(verdicts: &[bool]) -> String {
    verdicts
        .iter()
        .enumerate()
        .map(|(i, &m)| format!("{i} {}\n", if m { "member" } else { "nonmember" }))
        .collect()
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Symbols per level, root first.
    #[arg(long, value_delimiter = ',', required_unless_present = "family", conflicts_with = "family")]
    sizes: Option<Vec<usize>>,
    /// Named grammar family.
    #[arg(long)]
    family: Option<GrammarFamily>,
    /// Allowed rule counts per nonterminal.
    #[arg(long, value_delimiter = ',', default_value = "2")]
    degrees: Vec<usize>,
    /// Allowed rule body lengths.
    #[arg(long, value_delimiter = ',', default_value = "2,3")]
    rule_lengths: Vec<usize>,
    /// No repeated adjacent body symbols and no duplicate rules per head.
    #[arg(long)]
    distinct: bool,
    /// Prefix-free bodies per level (unambiguous grammars).
    #[arg(long)]
    prefix_free: bool,
    #[command(flatten)]
    seed: Seed,
    #[command(flatten)]
    out: Out,
}

fn synth(a: &SynthArgs, o: &mut Output) -> Result<()> {
    let spec = match (&a.family, &a.sizes) {
        (Some(f), _) => f.spec(a.seed.seed),
        (None, Some(sizes)) => CfgSynthSpec::new(sizes.clone(), a.degrees.clone())
            .rule_lengths(a.rule_lengths.clone())
            .distinct(a.distinct)
            .prefix_free(a.prefix_free)
            .seed(a.seed.seed),
        (None, None) => return usage("--sizes or --family is required"),
    };
    let cfg = spec.synthesize()?;
    let report = validate_cfg(&cfg);
    if !report.is_empty() {
        bail!("synthesized grammar violates {} invariants", report.violations.len());
    }
    o.write("grammar.txt", render_grammar_text(&cfg))?;
    println!("grammar {}", cfg.content_hash_hex());
    Ok(())
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long)]
    grammar: PathBuf,
    #[command(flatten)]
    out: Out,
}

fn validate(a: &ValidateArgs, o: &mut Output) -> Result<()> {
    let cfg = load_grammar(&a.grammar)?;
    let report = validate_cfg(&cfg);
    let mut text = String::new();
    for v in &report.violations {
        text.push_str(&format!("{v}\n"));
    }
    if report.is_empty() {
        text.push_str("ok\n");
    }
    o.write("report.txt", &text)?;
    print!("{text}");
    if !report.is_empty() {
        bail!("{} violations", report.violations.len());
    }
    Ok(())
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    grammar: PathBuf,
    #[arg(long)]
    count: usize,
    /// Also write prefixes of this length and the true continuations.
    #[arg(long)]
    cut: Option<usize>,
    #[command(flatten)]
    seed: Seed,
    #[command(flatten)]
    out: Out,
}

fn sample(a: &SampleArgs, o: &mut Output) -> Result<()> {
    let cfg = load_grammar(&a.grammar)?;
    let pool = sample_corpus(&cfg, a.seed.seed, a.count);
    let hash = cfg.content_hash_hex();
    if let Some(cut) = a.cut {
        o.write("prefixes.txt", write_completions(&extract_prefixes(&pool, cut)))?;
        o.write("truth.txt", write_completions(&truth_records(&pool, cut)))?;
    }
    let samples: Vec<AnnotatedSample> =
        pool.into_iter().enumerate().map(|(i, d)| AnnotatedSample::from_derivation(i, &hash, d)).collect();
    o.write("samples.txt", write_annotated(&samples))?;
    println!("{} samples", samples.len());
    Ok(())
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[arg(long)]
    grammar: PathBuf,
    /// Annotated-sample or plain token file.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    out: Out,
}

fn check(a: &CheckArgs, o: &mut Output) -> Result<()> {
    let cfg = load_grammar(&a.grammar)?;
    let text = fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let seqs = read_sequences(&text)?;
    let verdicts: Vec<bool> = seqs.par_iter().map(|x| is_member(&cfg, x)).collect::<Result<_>>()?;
    o.write("verdicts.txt", verdict_lines(&verdicts))?;
    let members = verdicts.iter().filter(|&&m| m).count();
    println!("{members}/{} members", verdicts.len());
    Ok(())
}

#[derive(Args, Debug)]
struct AnnotateArgs {
    #[arg(long)]
    grammar: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    out: Out,
}

fn annotate_cmd(a: &AnnotateArgs, o: &mut Output) -> Result<()> {
    let cfg = load_grammar(&a.grammar)?;
    let text = fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let seqs = read_sequences(&text)?;
    let hash = cfg.content_hash_hex();
    let samples: Vec<AnnotatedSample> = seqs
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            annotate(&cfg, x)
                .map(|d| AnnotatedSample::from_derivation(i, &hash, d))
                .with_context(|| format!("sequence {i}"))
        })
        .collect::<Result<_>>()?;
    o.write("annotated.txt", write_annotated(&samples))?;
    println!("{} annotated", samples.len());
    Ok(())
}

#[derive(Args, Debug)]
struct PackArgs {
    #[arg(long)]
    grammar: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = crate::corpus::DEFAULT_WINDOW)]
    window: usize,
    #[command(flatten)]
    seed: Seed,
    #[command(flatten)]
    out: Out,
}

fn pack(a: &PackArgs, o: &mut Output) -> Result<()> {
    let cfg = load_grammar(&a.grammar)?;
    let seqs: Vec<Vec<u32>> = load_samples(&cfg, &a.input)?.into_iter().map(|s| s.tokens).collect();
    let (corpus, stats) = pack_corpus(&cfg, &seqs, a.window, &mut stream_rng(a.seed.seed, GLOBAL_STREAM))?;
    o.write("corpus.bin", write_corpus(&corpus))?;
    o.write(
        "pack.csv",
        format!(
            "samples,window,windows,offset,stream_tokens,dropped_tail\n{},{},{},{},{},{}\n",
            seqs.len(),
            a.window,
            corpus.windows.len(),
            stats.offset,
            stats.stream_tokens,
            stats.dropped_tail
        ),
    )?;
    println!("{} windows of {}", corpus.windows.len(), a.window);
    Ok(())
}

#[derive(Args, Debug)]
struct EvalGenArgs {
    #[arg(long)]
    grammar: PathBuf,
    #[arg(long)]
    completions: PathBuf,
    /// Also keep the first M grammatical records.
    #[arg(long)]
    filter: Option<usize>,
    #[command(flatten)]
    out: Out,
}

fn read_completion_file(path: &Path) -> Result<Vec<CompletionRecord>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let source = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    read_completions(&text, &source).with_context(|| format!("parsing {}", path.display()))
}

fn eval_gen(a: &EvalGenArgs, o: &mut Output) -> Result<()> {
    let cfg = load_grammar(&a.grammar)?;
    let records = read_completion_file(&a.completions)?;
    let accuracy = generation_accuracy(&cfg, &records)?;
    o.write("eval.csv", format!("records,accuracy\n{},{accuracy}\n", records.len()))?;
    println!("accuracy {accuracy}");
    if let Some(m) = a.filter {
        let (kept, consumed) = filter_grammatical(&cfg, &records, m)?;
        o.write("filtered.txt", write_completions(&kept))?;
        println!("kept {} of {consumed} consumed", kept.len());
    }
    Ok(())
}

#[derive(Args, Debug)]
struct DiversityArgs {
    #[arg(long)]
    grammar: PathBuf,
    /// Sample file.
    #[arg(long, required_unless_present = "completions", conflicts_with = "completions")]
    input: Option<PathBuf>,
    /// Completion file; only grammatical full strings are used.
    #[arg(long)]
    completions: Option<PathBuf>,
    /// Use exactly the first M grammatical completions.
    #[arg(long, requires = "completions")]
    filter: Option<usize>,
    #[command(flatten)]
    out: Out,
}

fn diversity(a: &DiversityArgs, o: &mut Output) -> Result<()> {
    let cfg = load_grammar(&a.grammar)?;
    let pool: Vec<Derivation> = match (&a.input, &a.completions) {
        (Some(input), _) => load_derivations(&cfg, input)?,
        (None, Some(path)) => {
            let records = read_completion_file(path)?;
            let records = match a.filter {
                Some(m) => filter_grammatical(&cfg, &records, m)?.0,
                None => records,
            };
            let parsed: Vec<Option<Derivation>> = records.par_iter().map(|r| annotate(&cfg, &r.full()).ok()).collect();
            let dropped = parsed.iter().filter(|d| d.is_none()).count();
            println!("{dropped} ungrammatical completions skipped");
            parsed.into_iter().flatten().collect()
        }
        (None, None) => return usage("--input or --completions is required"),
    };
    let table = diversity_table(&cfg, &pool);
    o.write("diversity.csv", table.to_csv(&cfg))?;
    println!("{} strings", pool.len());
    Ok(())
}

#[derive(Args, Debug)]
struct MarginalArgs {
    #[arg(long)]
    grammar: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Second pool to compare against.
    #[arg(long)]
    compare: Option<PathBuf>,
    #[command(flatten)]
    out: Out,
}

fn marginal(a: &MarginalArgs, o: &mut Output) -> Result<()> {
    let cfg = load_grammar(&a.grammar)?;
    let table = marginal_table(&cfg, &load_derivations(&cfg, &a.input)?)?;
    o.write("marginal.csv", table.to_csv())?;
    if let Some(path) = &a.compare {
        let other = marginal_table(&cfg, &load_derivations(&cfg, path)?)?;
        o.write("marginal_compare.csv", other.to_csv())?;
        let diff = marginal_diff(&table, &other)?;
        o.write("diff.csv", diff.to_csv())?;
        println!("max abs difference {}", diff.max_abs);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, ValueEnum)]
#[value(rename_all = "snake_case")]
enum PerturbChoice {
    TRandom,
    NtRandom,
    NtDeterministic,
    /// Corrupt the first `--cut` symbols of every sample.
    Prefix,
}

#[derive(Args, Debug)]
struct PerturbArgs {
    #[arg(long)]
    grammar: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    kind: PerturbChoice,
    /// Per-symbol perturbation rate; defaults to the kind's standard rate.
    #[arg(long)]
    rate: Option<f64>,
    /// Fraction of samples perturbed.
    #[arg(long, default_value_t = 0.1)]
    gamma: f64,
    /// Per-symbol corruption rate for `prefix`.
    #[arg(long, default_value_t = 0.15)]
    rho: f64,
    /// Prefix length for `prefix`.
    #[arg(long, default_value_t = 50)]
    cut: usize,
    /// Permutation for `nt_deterministic`: `next` or `random`.
    #[arg(long, default_value = "random")]
    permutation: String,
    #[command(flatten)]
    seed: Seed,
    #[command(flatten)]
    out: Out,
}

fn perturb(a: &PerturbArgs, o: &mut Output) -> Result<()> {
    let cfg = load_grammar(&a.grammar)?;
    let seed = a.seed.seed;
    if let PerturbChoice::Prefix = a.kind {
        if !(0.0..=1.0).contains(&a.rho) {
            return usage(format!("--rho {} is outside [0, 1]", a.rho));
        }
        let samples = load_samples(&cfg, &a.input)?;
        let records: Vec<CompletionRecord> = samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| CompletionRecord {
                prefix: corrupt_prefix(&cfg, &s.tokens, a.cut, a.rho, &mut stream_rng(seed, i as u64)),
                completion: Vec::new(),
                source: "corrupted".into(),
            })
            .collect();
        o.write("prefixes.txt", write_completions(&records))?;
        println!("{} corrupted prefixes", records.len());
        return Ok(());
    }
    let kind = match a.kind {
        PerturbChoice::TRandom => PerturbKind::TRandom,
        PerturbChoice::NtRandom => PerturbKind::NtRandom,
        PerturbChoice::NtDeterministic => PerturbKind::NtDeterministic,
        PerturbChoice::Prefix => unreachable!(),
    };
    let mut config = PerturbConfig::new(kind, seed);
    config.gamma = a.gamma;
    config.rate = a.rate.unwrap_or(kind.default_rate());
    if kind == PerturbKind::NtDeterministic {
        let symbols = cfg.symbols(cfg.depth() - 1);
        config.permutation = Some(match a.permutation.as_str() {
            "next" => Permutation::next_symbol(symbols),
            "random" => Permutation::random(symbols, &mut stream_rng(seed, GLOBAL_STREAM - 1)),
            other => return usage(format!("--permutation `{other}` (expected next | random)")),
        });
    }
    if let Err(e) = config.validate() {
        return usage(e.to_string());
    }
    let samples = load_samples(&cfg, &a.input)?;
    let derivations: Vec<Option<Derivation>> = samples
        .par_iter()
        .map(|s| match (&s.derivation, kind) {
            (_, PerturbKind::TRandom) => Ok(s.derivation.clone()),
            (Some(d), _) => Ok(Some(d.clone())),
            (None, _) => annotate(&cfg, &s.tokens).map(Some).with_context(|| format!("sample {}", s.index)),
        })
        .collect::<Result<_>>()?;
    let items: Vec<(AnnotatedSample, Option<Derivation>)> = samples.into_iter().zip(derivations).collect();
    let rate = config.rate;
    let permutation = config.permutation.clone();
    let flagged = apply_fraction(items, config.gamma, seed, |(mut s, d), rng| {
        s.tokens = match kind {
            PerturbKind::TRandom => perturb_t_level(&cfg, &s.tokens, rate, rng),
            PerturbKind::NtRandom => perturb_nt_level(&cfg, d.as_ref().unwrap(), rate, NtMode::Random, rng).terminals,
            PerturbKind::NtDeterministic => {
                let mode = NtMode::Deterministic(permutation.as_ref().unwrap());
                perturb_nt_level(&cfg, d.as_ref().unwrap(), rate, mode, rng).terminals
            }
        };
        s.derivation = None;
        (s, d)
    })?;
    let mut changed = 0;
    let out: Vec<AnnotatedSample> = flagged
        .into_iter()
        .map(|f| {
            let mut s = f.item.0;
            s.perturbed = Some(f.perturbed);
            changed += usize::from(f.perturbed);
            s
        })
        .collect();
    o.write("perturbed.txt", write_annotated(&out))?;
    println!("{changed} of {} samples perturbed ({})", out.len(), kind.name());
    Ok(())
}

#[derive(Args, Debug)]
struct ImplicitSampleArgs {
    #[arg(long)]
    grammar: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Reuse an existing vocab file instead of building one.
    #[arg(long, conflicts_with_all = ["tokens", "disjoint", "uniform", "overlap"])]
    vocab: Option<PathBuf>,
    /// Observable vocabulary size.
    #[arg(long, required_unless_present = "vocab")]
    tokens: Option<usize>,
    #[arg(long)]
    disjoint: bool,
    /// Uniform emission weights instead of Zipf-like ones.
    #[arg(long)]
    uniform: bool,
    #[arg(long)]
    overlap: Option<f64>,
    #[command(flatten)]
    seed: Seed,
    #[command(flatten)]
    out: Out,
}

fn implicit_sample(a: &ImplicitSampleArgs, o: &mut Output) -> Result<()> {
    let cfg = load_grammar(&a.grammar)?;
    let seed = a.seed.seed;
    let vocab = match (&a.vocab, a.tokens) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ObservableVocab::from_text(&cfg, &text)?
        }
        (None, Some(tokens)) => {
            let mut spec = VocabSpec::new(tokens, a.disjoint, a.uniform);
            if let Some(overlap) = a.overlap {
                spec.overlap = overlap;
            }
            build_observable_vocab(&cfg, &spec, &mut stream_rng(seed, GLOBAL_STREAM))?
        }
        (None, None) => return usage("--tokens or --vocab is required"),
    };
    let seqs: Vec<Vec<u32>> = load_samples(&cfg, &a.input)?.into_iter().map(|s| s.tokens).collect();
    let observed: Vec<Vec<u32>> = seqs
        .par_iter()
        .enumerate()
        .map(|(i, x)| sample_observable(x, &vocab, &mut stream_rng(seed, i as u64)))
        .collect();
    o.write("vocab.txt", vocab.to_text())?;
    o.write("observable.txt", write_sequences(&observed))?;
    println!("{} observable strings over {} tokens", observed.len(), vocab.num_tokens());
    Ok(())
}

#[derive(Args, Debug)]
struct ImplicitCheckArgs {
    #[arg(long)]
    grammar: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Observable token sequences, one per line.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    out: Out,
}

fn load_vocab(cfg: &Cfg, path: &Path) -> Result<ObservableVocab> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    ObservableVocab::from_text(cfg, &text).with_context(|| format!("parsing {}", path.display()))
}

fn implicit_check(a: &ImplicitCheckArgs, o: &mut Output) -> Result<()> {
    let cfg = load_grammar(&a.grammar)?;
    let vocab = load_vocab(&cfg, &a.vocab)?;
    let text = fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let seqs = read_sequences(&text)?;
    let verdicts: Vec<bool> = seqs.par_iter().map(|y| membership_observable(&cfg, &vocab, y)).collect();
    o.write("verdicts.txt", verdict_lines(&verdicts))?;
    println!("{}/{} members", verdicts.iter().filter(|&&m| m).count(), verdicts.len());
    Ok(())
}

#[derive(Args, Debug)]
struct EmbedCorrArgs {
    #[arg(long)]
    grammar: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Dump whose first sequence lists every observable token once; its
    /// hidden rows are the token embeddings.
    #[arg(long)]
    dump: PathBuf,
    #[arg(long, default_value_t = 0)]
    layer: usize,
    #[command(flatten)]
    out: Out,
}

fn embed_corr(a: &EmbedCorrArgs, o: &mut Output) -> Result<()> {
    let cfg = load_grammar(&a.grammar)?;
    let vocab = load_vocab(&cfg, &a.vocab)?;
    let dump = load_dump(Some(&cfg), &a.dump)?;
    let h = &dump.header;
    if a.layer >= h.layers {
        return usage(format!("--layer {} not in a {}-layer dump", a.layer, h.layers));
    }
    let s = dump.sequences.first().ok_or_else(|| anyhow!("dump has no sequences"))?;
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; vocab.num_tokens()];
    for (k, &t) in s.tokens.iter().enumerate() {
        let slot = rows
            .get_mut(t as usize)
            .ok_or_else(|| anyhow!("embedding token {t} is outside the {}-token vocabulary", vocab.num_tokens()))?;
        *slot = Some(s.hidden_row(h, a.layer, k).iter().map(|&v| f64::from(v)).collect());
    }
    let rows: Vec<Vec<f64>> = rows
        .into_iter()
        .enumerate()
        .map(|(t, r)| r.ok_or_else(|| anyhow!("no embedding for token {t}")))
        .collect::<Result<_>>()?;
    let m = embedding_correlation(&rows, &vocab.labels())?;
    o.write("correlation.csv", m.to_csv())?;
    println!(
        "{} tokens in {} groups; {} degenerate, {} unlabeled",
        m.order.len(),
        m.groups.len(),
        m.degenerate.len(),
        m.unlabeled.len()
    );
    Ok(())
}

#[derive(Args, Debug)]
struct ValidateDumpArgs {
    #[arg(long)]
    dump: PathBuf,
    /// Also require the dump to name this grammar.
    #[arg(long)]
    grammar: Option<PathBuf>,
    #[command(flatten)]
    out: Out,
}

fn validate_dump(a: &ValidateDumpArgs, o: &mut Output) -> Result<()> {
    let cfg = a.grammar.as_deref().map(load_grammar).transpose()?;
    let bytes = fs::read(&a.dump).with_context(|| format!("reading {}", a.dump.display()))?;
    let outcome = read_dump(&bytes).and_then(|d| {
        if let Some(cfg) = &cfg {
            d.header.check_grammar(&cfg.content_hash())?;
        }
        Ok(d)
    });
    let report = match &outcome {
        Ok(d) => format!(
            "pass\nsequences {}\nlayers {}\nheads {}\ndim {}\nmax_len {}\ngrammar {}\n",
            d.sequences.len(),
            d.header.layers,
            d.header.heads,
            d.header.dim,
            d.header.max_len,
            d.header.grammar_hash_hex()
        ),
        Err(e) => format!("fail\n{e}\n"),
    };
    o.write("report.txt", &report)?;
    print!("{report}");
    outcome.map(|_| ()).map_err(Into::into)
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum HiddenChoice {
    Planted,
    Random,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
#[value(rename_all = "snake_case")]
enum AttentionChoice {
    UniformWindow,
    UniformCausal,
    EndMass,
    AdjacentEnd,
}

#[derive(Args, Debug)]
struct FixtureArgs {
    #[arg(long)]
    grammar: PathBuf,
    #[arg(long)]
    sequences: usize,
    #[arg(long, value_enum, default_value = "planted")]
    hidden: HiddenChoice,
    /// Gaussian noise added to planted states.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Position `k` carries the labels of `k + shift`.
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    shift: isize,
    /// Width of random hidden states.
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, value_enum, default_value = "uniform_window")]
    attention: AttentionChoice,
    /// Extra weight on end keys for `end_mass`.
    #[arg(long, default_value_t = 4.0)]
    boost: f64,
    /// Mass on adjacent ends for `adjacent_end`.
    #[arg(long, default_value_t = 0.6)]
    mass: f64,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[command(flatten)]
    seed: Seed,
    #[command(flatten)]
    out: Out,
}

fn fixture(a: &FixtureArgs, o: &mut Output) -> Result<()> {
    let cfg = load_grammar(&a.grammar)?;
    if !(0.0..=1.0).contains(&a.mass) {
        return usage(format!("--mass {} is outside [0, 1]", a.mass));
    }
    if a.layers == 0 || a.heads == 0 {
        return usage("--layers and --heads must be positive");
    }
    let hidden = match a.hidden {
        HiddenChoice::Planted => HiddenProfile::Planted {
            noise: a.noise,
            shift: a.shift,
        },
        HiddenChoice::Random => HiddenProfile::Random { dim: a.dim },
    };
    let attention = match a.attention {
        AttentionChoice::UniformWindow => AttentionProfile::UniformWindow,
        AttentionChoice::UniformCausal => AttentionProfile::UniformCausal,
        AttentionChoice::EndMass => AttentionProfile::EndMass { boost: a.boost },
        AttentionChoice::AdjacentEnd => AttentionProfile::AdjacentEnd { mass: a.mass },
    };
    let mut spec = FixtureSpec::new(a.sequences, hidden, attention);
    spec.layers = a.layers;
    spec.heads = a.heads;
    let f = synthesize_fixture(&cfg, &spec, a.seed.seed);
    let hash = cfg.content_hash_hex();
    let samples: Vec<AnnotatedSample> = f
        .derivations
        .into_iter()
        .enumerate()
        .map(|(i, d)| AnnotatedSample::from_derivation(i, &hash, d))
        .collect();
    o.write("dump.bin", write_dump(&f.dump)?)?;
    o.write("samples.txt", write_annotated(&samples))?;
    println!("{} sequences, dim {}", samples.len(), f.dump.header.dim);
    Ok(())
}

#[derive(Args, Debug)]
struct ProbeData {
    #[arg(long)]
    grammar: PathBuf,
    #[arg(long)]
    dump: PathBuf,
    /// Annotated samples aligned with the dump's sequences.
    #[arg(long)]
    samples: PathBuf,
    /// Hidden-state layer to read.
    #[arg(long, default_value_t = 0)]
    layer: usize,
}

impl ProbeData {
    /// The dataset and the dump's declared maximum length.
    fn load(&self, target: ProbeTarget) -> Result<(ProbeDataset, usize)> {
        let cfg = load_grammar(&self.grammar)?;
        let dump = load_dump(Some(&cfg), &self.dump)?;
        let ders = load_derivations(&cfg, &self.samples)?;
        let data = ProbeDataset::from_dump(&cfg, &dump, &ders, self.layer, target)?;
        Ok((data, dump.header.max_len))
    }
}

#[derive(Args, Debug)]
struct ProbeTrainArgs {
    #[command(flatten)]
    data: ProbeData,
    #[arg(long, default_value = "ancestors")]
    target: ProbeTarget,
    /// `none` or a window half-width.
    #[arg(long, default_value = "none")]
    mask: ProbeMask,
    /// Restrict attention to earlier positions.
    #[arg(long)]
    causal: bool,
    #[arg(long, default_value_t = 16)]
    heads: usize,
    #[arg(long, default_value_t = 1024)]
    pos_dim: usize,
    #[arg(long, default_value_t = 0.003)]
    lr: f64,
    #[arg(long, default_value_t = 0.001)]
    weight_decay: f64,
    #[arg(long, default_value_t = 60)]
    batch: usize,
    #[arg(long, default_value_t = 30_000)]
    iterations: usize,
    #[arg(long, default_value_t = 100)]
    log_every: usize,
    /// Position capacity; defaults to the dump's maximum length.
    #[arg(long)]
    max_len: Option<usize>,
    /// Hold out the last N sequences for evaluation.
    #[arg(long, default_value_t = 0)]
    holdout: usize,
    #[command(flatten)]
    seed: Seed,
    #[command(flatten)]
    out: Out,
}

fn probe_train_cmd(a: &ProbeTrainArgs, o: &mut Output) -> Result<()> {
    if a.heads == 0 || a.pos_dim == 0 || a.batch == 0 || a.log_every == 0 {
        return usage("--heads, --pos-dim, --batch and --log-every must be positive");
    }
    let (data, max_len) = a.data.load(a.target)?;
    let n = data.examples.len();
    if a.holdout >= n {
        return usage(format!("--holdout {} leaves no training sequences out of {n}", a.holdout));
    }
    let train = data.subset(0..n - a.holdout);
    let config = ProbeConfig {
        heads: a.heads,
        pos_dim: a.pos_dim,
        target: a.target,
        mask: a.mask,
        causal: a.causal,
        lr: a.lr,
        weight_decay: a.weight_decay,
        batch: a.batch,
        iterations: a.iterations,
        layer: a.data.layer,
        log_every: a.log_every,
        max_len: Some(a.max_len.unwrap_or(max_len)),
    };
    let outcome = probe_train(&config, &train, a.seed.seed)?;
    o.write("model.bin", write_model(&outcome.model))?;
    o.write("trace.csv", trace_csv(&outcome.trace))?;
    let table = probe_eval(&outcome.model, &train)?;
    o.write("train_accuracy.csv", table.to_csv())?;
    println!("train min accuracy {}", table.min_accuracy());
    if a.holdout > 0 {
        let held = probe_eval(&outcome.model, &data.subset(n - a.holdout..n))?;
        o.write("holdout_accuracy.csv", held.to_csv())?;
        println!("holdout min accuracy {}", held.min_accuracy());
    }
    Ok(())
}

#[derive(Args, Debug)]
struct ProbeEvalArgs {
    #[command(flatten)]
    data: ProbeData,
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    out: Out,
}

fn probe_eval_cmd(a: &ProbeEvalArgs, o: &mut Output) -> Result<()> {
    let bytes = fs::read(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    let model = read_model(&bytes)?;
    let (data, _) = a.data.load(model.target)?;
    let table = probe_eval(&model, &data)?;
    o.write("accuracy.csv", table.to_csv())?;
    println!("min accuracy {}", table.min_accuracy());
    Ok(())
}

#[derive(Args, Debug)]
struct AttnStatsArgs {
    #[command(flatten)]
    data: ProbeData,
    /// Largest NT distance in the distance table.
    #[arg(long, default_value_t = 8)]
    max_r: usize,
    /// Also write SVG heatmaps averaged over layers and heads.
    #[arg(long)]
    svg: bool,
    #[command(flatten)]
    out: Out,
}

fn attn_stats(a: &AttnStatsArgs, o: &mut Output) -> Result<()> {
    let cfg = load_grammar(&a.data.grammar)?;
    let dump = load_dump(Some(&cfg), &a.data.dump)?;
    let ders = load_derivations(&cfg, &a.data.samples)?;
    let profile = position_profile(&dump)?;
    o.write("profile.csv", profile.to_csv())?;
    let mut grids = vec![("targeting".to_string(), end_targeting_grid(&dump, &profile, &ders)?)];
    for level in 1..cfg.depth() {
        grids.push((format!("end_to_end_l{level}"), end_to_end_grid(&dump, &profile, &ders, level)?));
    }
    grids.push(("distance".to_string(), end_to_end_by_distance(&dump, &profile, &ders, a.max_r)?));
    for (name, grid) in &grids {
        o.write(&format!("{name}.csv"), grid.to_csv())?;
        if a.svg {
            o.write(&format!("{name}.svg"), grid.to_svg(None))?;
        }
    }
    println!("{} grids over {} sequences", grids.len(), dump.sequences.len());
    Ok(())
}
