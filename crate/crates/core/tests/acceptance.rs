//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the report.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use cfglab::attention::{end_targeting_grid, position_profile, residual_means, TARGET_OFFSETS};
use cfglab::cli::{dispatch, read_manifest, replay, sha256_file, MANIFEST};
use cfglab::corpus::{pack_corpus, read_corpus, write_corpus, CorpusError};
use cfglab::evaluation::{diversity_table, marginal_diff, marginal_table, Multiset};
use cfglab::grammar::{parse_grammar_text, render_grammar_text, Cfg, CfgSynthSpec, GrammarError, GrammarFamily, SymbolId};
use cfglab::parser::{annotate, count_parses, membership};
use cfglab::probe::{
    loss_and_gradient, probe_eval, probe_train, ProbeConfig, ProbeDataset, ProbeExample, ProbeMask, ProbeModel, ProbeTarget,
};
use cfglab::rng::seeded;
use cfglab::sampler::{sample_corpus, string_length_bounds, Derivation};
use cfglab::tensor::{
    read_dump, synthesize_fixture, write_dump, AttentionProfile, DumpError, FixtureSpec, HiddenProfile, TensorDump,
};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

const ORACLE_GRAMMARS: usize = 50;
const ORACLE_MAX_LEN: usize = 8;
const ORACLE_BUDGET: Duration = Duration::from_secs(300);
const SOUNDNESS_SAMPLES: usize = 10_000;
const LENGTH_BOUND: usize = 729;
const ROW_SUM_TOLERANCE: f64 = 1e-9;
const MARGINAL_POOL: usize = 10_000;
const MARGINAL_MAX_ABS: f64 = 0.05;
const GRADIENT_STEP: f64 = 1e-5;
const GRADIENT_REL_ERROR: f64 = 1e-4;
const LOGISTIC_AGREEMENT: f64 = 0.01;
const PLANTED_ACCURACY: f64 = 0.99;
const PLANTED_ITERATIONS: usize = 2000;
const PLANTED_BUDGET: Duration = Duration::from_secs(120);
const CENTERING_TOLERANCE: f64 = 1e-6;
const CLOSED_FORM_TOLERANCE: f64 = 1e-6;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

/// Every string of length at most `max_len` derivable from `symbol`,
/// by direct expansion.
fn oracle_language(cfg: &Cfg, symbol: SymbolId, max_len: usize, memo: &mut BTreeMap<SymbolId, BTreeSet<Vec<SymbolId>>>) -> BTreeSet<Vec<SymbolId>> {
    if cfg.is_terminal(symbol) {
        return [vec![symbol]].into_iter().collect();
    }
    if let Some(done) = memo.get(&symbol) {
        return done.clone();
    }
    let mut out = BTreeSet::new();
    for rule in cfg.rules(symbol) {
        let mut partial: BTreeSet<Vec<SymbolId>> = [Vec::new()].into_iter().collect();
        for &b in &rule.body {
            let child = oracle_language(cfg, b, max_len, memo);
            let mut next = BTreeSet::new();
            for p in &partial {
                for c in &child {
                    if p.len() + c.len() <= max_len {
                        let mut s = p.clone();
                        s.extend_from_slice(c);
                        next.insert(s);
                    }
                }
            }
            partial = next;
        }
        out.extend(partial);
    }
    memo.insert(symbol, out.clone());
    out
}

fn all_strings(alphabet: &[SymbolId], max_len: usize) -> Vec<Vec<SymbolId>> {
    let mut out = Vec::new();
    let mut layer: Vec<Vec<SymbolId>> = vec![Vec::new()];
    for _ in 0..max_len {
        layer = layer
            .iter()
            .flat_map(|p| {
                alphabet.iter().map(move |&t| {
                    let mut s = p.clone();
                    s.push(t);
                    s
                })
            })
            .collect();
        out.extend(layer.iter().cloned());
    }
    out
}

fn parser_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded(2024);
    let mut grammars = Vec::new();
    let mut seed = 0;
    while grammars.len() < ORACLE_GRAMMARS {
        seed += 1;
        let depth = rng.random_range(2..=4);
        let mut sizes = vec![1];
        sizes.extend((1..depth).map(|_| rng.random_range(1..=3)));
        let degrees: Vec<usize> = (1..=rng.random_range(1..=3)).collect();
        if let Ok(g) = CfgSynthSpec::new(sizes, degrees).seed(seed).synthesize() {
            grammars.push(g);
        }
    }
    let results: Vec<(usize, usize, usize)> = grammars
        .par_iter()
        .map(|g| {
            let language = oracle_language(g, g.root(), ORACLE_MAX_LEN, &mut BTreeMap::new());
            let alphabet: Vec<SymbolId> = g.terminals().collect();
            let strings = all_strings(&alphabet, ORACLE_MAX_LEN);
            let disagreements = strings
                .iter()
                .filter(|x| membership(g, x).unwrap() != language.contains(*x))
                .count();
            (strings.len(), language.len(), disagreements)
        })
        .collect();
    let elapsed = start.elapsed();
    let checked: usize = results.iter().map(|r| r.0).sum();
    let members: usize = results.iter().map(|r| r.1).sum();
    let disagreements: usize = results.iter().map(|r| r.2).sum();
    ensure!(members > 0, "oracle languages are all empty");
    ensure!(disagreements == 0, "{disagreements} disagreements over {checked} strings");
    ensure!(elapsed < ORACLE_BUDGET, "took {elapsed:?}");
    Ok(format!("{ORACLE_GRAMMARS} grammars, {checked} strings ({members} members), 0 disagreements in {elapsed:.1?}"))
}

fn sampler_soundness() -> Outcome {
    let families = [GrammarFamily::Cfg3b, GrammarFamily::Cfg3i, GrammarFamily::Cfg3h, GrammarFamily::Cfg3g, GrammarFamily::Cfg3f];
    let mut rejected = 0;
    let mut unique_checked = 0;
    for (k, f) in families.iter().enumerate() {
        let g = f.spec(k as u64 + 1).synthesize().map_err(|e| e.to_string())?;
        let pool = sample_corpus(&g, 100 + k as u64, SOUNDNESS_SAMPLES);
        ensure!(pool.iter().all(|d| d.depth() == 7), "{} sampled a derivation of the wrong depth", f.name());
        rejected += pool.par_iter().filter(|d| !membership(&g, d.terminals()).unwrap()).count();
        // Strings with exactly one parse must be annotated exactly as sampled.
        let unique: Vec<&Derivation> = pool[..200].iter().filter(|d| count_parses(&g, d.terminals()).unwrap() == 1).collect();
        let mismatched = unique.par_iter().filter(|d| annotate(&g, d.terminals()).as_ref() != Ok(**d)).count();
        ensure!(mismatched == 0, "{}: {mismatched} unique-parse strings annotated differently", f.name());
        unique_checked += unique.len();
    }
    ensure!(rejected == 0, "{rejected} sampled strings rejected");
    let mut exact = 0;
    for seed in 0..3 {
        let g = CfgSynthSpec::new(vec![1, 3, 3, 3, 3, 3, 3], vec![2])
            .prefix_free(true)
            .seed(seed)
            .synthesize()
            .map_err(|e| e.to_string())?;
        let pool = sample_corpus(&g, seed, 2000);
        let bad = pool.par_iter().filter(|d| annotate(&g, d.terminals()).as_ref() != Ok(*d)).count();
        ensure!(bad == 0, "prefix-free grammar {seed}: {bad} annotations differ from the sampler");
        exact += pool.len();
    }
    Ok(format!(
        "{} samples accepted; {exact} prefix-free round trips and {unique_checked} unique-parse strings annotated exactly",
        families.len() * SOUNDNESS_SAMPLES
    ))
}

/// Longest string from each symbol, computed bottom-up.
fn oracle_max_length(cfg: &Cfg) -> usize {
    let mut longest = vec![0usize; cfg.num_symbols() + 1];
    for level in (1..=cfg.depth()).rev() {
        for a in cfg.symbols(level) {
            longest[a as usize] = if cfg.is_terminal(a) {
                1
            } else {
                cfg.rules(a).iter().map(|r| r.body.iter().map(|&b| longest[b as usize]).sum()).max().unwrap()
            };
        }
    }
    longest[cfg.root() as usize]
}

fn length_bound() -> Outcome {
    let mut grammars: Vec<Cfg> = GrammarFamily::ALL.iter().map(|f| f.spec(1).synthesize().unwrap()).collect();
    for seed in 0..20 {
        grammars.push(CfgSynthSpec::new(vec![1, 3, 3, 3, 3, 3, 3], vec![1, 2, 3]).seed(seed).synthesize().unwrap());
    }
    let mut largest = 0;
    for g in &grammars {
        let (_, max) = string_length_bounds(g);
        ensure!(max == oracle_max_length(g), "bound {max} differs from the bottom-up maximum {}", oracle_max_length(g));
        ensure!(max <= LENGTH_BOUND, "bound {max} exceeds {LENGTH_BOUND}");
        largest = largest.max(max);
    }
    Ok(format!("{} depth-7 grammars, largest maximum length {largest}", grammars.len()))
}

fn collision_arithmetic() -> Outcome {
    let m: Multiset<u32> = [1, 2, 2, 3].into_iter().collect();
    ensure!(m.collisions() == 1, "collisions of [1,2,2,3] = {}", m.collisions());
    let g = GrammarFamily::Cfg3i.spec(5).synthesize().unwrap();
    let d = sample_corpus(&g, 3, 1).remove(0);
    let single = diversity_table(&g, std::slice::from_ref(&d));
    let mut once = 0;
    let mut cells = 0;
    for n in [2usize, 5, 17] {
        let pool = vec![d.clone(); n];
        let table = diversity_table(&g, &pool);
        for (key, cell) in table.cells() {
            let base = single.cell(key.0, key.1).ok_or("cell missing from the single-copy table")?;
            // n copies multiply every multiplicity by n.
            ensure!(cell.distinct() == base.distinct(), "cell {key:?}: distinct changed with duplication");
            ensure!(cell.total() == n * base.total(), "cell {key:?}: total not scaled by {n}");
            if base.total() == 1 {
                ensure!(cell.collisions() == n - 1, "cell {key:?}: {} collisions for {n} copies", cell.collisions());
                once += 1;
            }
            cells += 1;
        }
    }
    ensure!(once > 0, "no cell has a single occurrence per copy");
    Ok(format!(
        "[1,2,2,3] -> 1; {once} single-occurrence cells give n-1, all {cells} cells scale by n"
    ))
}

fn marginal_normalization() -> Outcome {
    let g = CfgSynthSpec::new(vec![1, 3, 3, 3], vec![2]).rule_lengths(vec![3]).seed(8).synthesize().unwrap();
    let a_pool = sample_corpus(&g, 1, MARGINAL_POOL);
    let b_pool = sample_corpus(&g, 2, MARGINAL_POOL);
    let mut worst: f64 = 0.0;
    for (pool, table) in [(&a_pool, marginal_table(&g, &a_pool).unwrap()), (&b_pool, marginal_table(&g, &b_pool).unwrap())] {
        for level in 1..=g.depth() {
            for pos in 0..table.positions() {
                if table.support(pos) == 0 {
                    continue;
                }
                let sum: f64 = g.symbols(level).map(|s| table.probability(level, s, pos)).sum();
                worst = worst.max((sum - 1.0).abs());
                // Direct count on the pool.
                let s = pool[0].ancestor_symbol(level, pos.min(pool[0].len() - 1));
                let hits = pool.iter().filter(|d| pos < d.len() && d.ancestor_symbol(level, pos) == s).count();
                let direct = hits as f64 / table.support(pos) as f64;
                if pos < pool[0].len() {
                    ensure!((direct - table.probability(level, s, pos)).abs() < 1e-12, "probability differs from direct count");
                }
            }
        }
    }
    ensure!(worst <= ROW_SUM_TOLERANCE, "row sum off by {worst}");
    let a = marginal_table(&g, &a_pool).unwrap();
    let b = marginal_table(&g, &b_pool).unwrap();
    let diff = marginal_diff(&a, &b).unwrap();
    ensure!(diff.max_abs < MARGINAL_MAX_ABS, "max-abs difference {}", diff.max_abs);
    Ok(format!("worst row-sum error {worst:.1e}; two {MARGINAL_POOL}-sample pools differ by {:.4}", diff.max_abs))
}

fn small_instance(target: ProbeTarget, seed: u64) -> ProbeDataset {
    let mut rng = seeded(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let (n, d) = (3, 4);
    let groups = match target {
        ProbeTarget::Ancestors => vec![3, 2],
        ProbeTarget::Boundaries => vec![1, 1],
    };
    let examples = (0..2)
        .map(|_| ProbeExample {
            hidden: (0..n * d).map(|_| normal.sample(&mut rng)).collect(),
            classes: groups
                .iter()
                .map(|&c| (0..n).map(|_| rng.random_range(0..c.max(2)) as u32).collect())
                .collect(),
        })
        .collect();
    ProbeDataset::new(target, groups, d, examples).unwrap()
}

fn gradient_check() -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for target in [ProbeTarget::Ancestors, ProbeTarget::Boundaries] {
        let data = small_instance(target, 7);
        let refs: Vec<&ProbeExample> = data.examples.iter().collect();
        for mask in [ProbeMask::Full, ProbeMask::Local(1)] {
            let config = ProbeConfig {
                heads: 2,
                pos_dim: 3,
                mask,
                ..ProbeConfig::default()
            };
            let mut rng = seeded(9);
            let mut model = ProbeModel::init(&config, &data, 3, &mut rng);
            let normal = Normal::new(0.0, 0.5).unwrap();
            model.weights_mut().iter_mut().for_each(|w| *w = normal.sample(&mut rng));
            model.positions_mut().iter_mut().for_each(|p| *p = normal.sample(&mut rng));
            let (_, gw, gp) = loss_and_gradient(&model, &refs).map_err(|e| e.to_string())?;
            let loss = |m: &ProbeModel| loss_and_gradient(m, &refs).unwrap().0;
            for (which, analytic) in [(0, &gw), (1, &gp)] {
                for k in 0..analytic.len() {
                    let (mut plus, mut minus) = (model.clone(), model.clone());
                    let (p, m) = if which == 0 {
                        (&mut plus.weights_mut()[k], &mut minus.weights_mut()[k])
                    } else {
                        (&mut plus.positions_mut()[k], &mut minus.positions_mut()[k])
                    };
                    *p += GRADIENT_STEP;
                    *m -= GRADIENT_STEP;
                    let fd = (loss(&plus) - loss(&minus)) / (2.0 * GRADIENT_STEP);
                    let err = (fd - analytic[k]).abs() / fd.abs().max(analytic[k].abs()).max(1e-6);
                    worst = worst.max(err);
                }
            }
        }
    }
    Ok(worst)
}

/// Plain multinomial logistic regression without bias, one softmax per
/// group, trained by full-batch gradient descent. Returns accuracy per group
/// on `test`.
fn logistic_regression(train: &ProbeDataset, test: &ProbeDataset) -> Vec<f64> {
    let d = train.dim;
    let rows = |data: &ProbeDataset| -> Vec<(Vec<f64>, Vec<u32>)> {
        data.examples
            .iter()
            .flat_map(|e| (0..e.len()).map(move |i| (e.hidden[i * d..(i + 1) * d].to_vec(), e.classes.iter().map(|c| c[i]).collect())))
            .collect()
    };
    let (train_rows, test_rows) = (rows(train), rows(test));
    let mut accuracy = Vec::new();
    for (g, &classes) in train.groups.iter().enumerate() {
        let k = classes.max(2);
        let mut w = vec![0.0; k * d];
        let logits = |w: &[f64], x: &[f64]| -> Vec<f64> {
            (0..k).map(|c| w[c * d..(c + 1) * d].iter().zip(x).map(|(a, b)| a * b).sum()).collect()
        };
        for _ in 0..1500 {
            let mut grad = vec![0.0; k * d];
            for (x, y) in &train_rows {
                let z = logits(&w, x);
                let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
                let s: f64 = e.iter().sum();
                for c in 0..k {
                    let coef = e[c] / s - f64::from(u8::from(c as u32 == y[g]));
                    for (gj, xj) in grad[c * d..(c + 1) * d].iter_mut().zip(x) {
                        *gj += coef * xj;
                    }
                }
            }
            let scale = 0.5 / train_rows.len() as f64;
            for (wi, gi) in w.iter_mut().zip(&grad) {
                *wi -= scale * gi;
            }
        }
        let correct = test_rows
            .iter()
            .filter(|(x, y)| {
                let z = logits(&w, x);
                let best = (0..k).max_by(|&a, &b| z[a].total_cmp(&z[b]).then(b.cmp(&a))).unwrap();
                best as u32 == y[g]
            })
            .count();
        accuracy.push(correct as f64 / test_rows.len() as f64);
    }
    accuracy
}

fn probe_correctness() -> Outcome {
    let worst = gradient_check()?;
    ensure!(worst <= GRADIENT_REL_ERROR, "finite-difference relative error {worst:.2e}");

    let g = GrammarFamily::Cfg3i.spec(4).synthesize().unwrap();
    let spec = FixtureSpec::new(24, HiddenProfile::Planted { noise: 0.8, shift: 0 }, AttentionProfile::UniformCausal);
    let f = synthesize_fixture(&g, &spec, 5);
    let data = ProbeDataset::from_dump(&g, &f.dump, &f.derivations, 0, ProbeTarget::Ancestors).unwrap();
    let (train, test) = (data.subset(0..16), data.subset(16..24));
    let config = ProbeConfig {
        heads: 2,
        pos_dim: 4,
        mask: ProbeMask::Local(0),
        lr: 0.01,
        weight_decay: 0.0,
        batch: 16,
        iterations: 1500,
        max_len: Some(data.max_len()),
        ..ProbeConfig::default()
    };
    let probe = probe_eval(&probe_train(&config, &train, 1).unwrap().model, &test).unwrap();
    let reference = logistic_regression(&train, &test);
    let gap = probe
        .levels
        .iter()
        .zip(&reference)
        .map(|(l, r)| (l.accuracy - r).abs())
        .fold(0.0, f64::max);
    ensure!(gap <= LOGISTIC_AGREEMENT, "delta=0 probe differs from logistic regression by {gap:.4}");

    let start = Instant::now();
    let spec = FixtureSpec::new(48, HiddenProfile::Planted { noise: 0.0, shift: 0 }, AttentionProfile::UniformCausal);
    let f = synthesize_fixture(&g, &spec, 6);
    let data = ProbeDataset::from_dump(&g, &f.dump, &f.derivations, 0, ProbeTarget::Ancestors).unwrap();
    let config = ProbeConfig {
        heads: 4,
        pos_dim: 64,
        mask: ProbeMask::Local(0),
        lr: 0.01,
        batch: 8,
        iterations: PLANTED_ITERATIONS,
        max_len: Some(data.max_len()),
        ..ProbeConfig::default()
    };
    let model = probe_train(&config, &data.subset(0..40), 2).unwrap().model;
    let planted = probe_eval(&model, &data.subset(40..48)).unwrap().min_accuracy();
    let elapsed = start.elapsed();
    ensure!(planted >= PLANTED_ACCURACY, "planted fixture reached only {planted:.4}");
    ensure!(elapsed < PLANTED_BUDGET, "planted training took {elapsed:?}");
    Ok(format!(
        "gradient rel. error {worst:.1e}; delta=0 vs logistic regression gap {gap:.4}; planted min accuracy {planted:.4} in {elapsed:.1?}"
    ))
}

fn attention_fixture(profile: AttentionProfile, sequences: usize, seed: u64) -> (TensorDump, Vec<Derivation>) {
    let g = GrammarFamily::Cfg3i.spec(3).synthesize().unwrap();
    let mut spec = FixtureSpec::new(sequences, HiddenProfile::Random { dim: 1 }, profile);
    spec.layers = 2;
    spec.heads = 4;
    let f = synthesize_fixture(&g, &spec, seed);
    (f.dump, f.derivations)
}

fn attention_identities() -> Outcome {
    let mut centering: f64 = 0.0;
    for profile in [AttentionProfile::EndMass { boost: 3.0 }, AttentionProfile::AdjacentEnd { mass: 0.5 }, AttentionProfile::UniformCausal] {
        let (dump, _) = attention_fixture(profile, 12, 1);
        let p = position_profile(&dump).unwrap();
        centering = residual_means(&dump, &p).into_iter().map(f64::abs).fold(centering, f64::max);
    }
    ensure!(centering <= CENTERING_TOLERANCE, "pool-mean residual {centering:.2e}");

    let (dump, _) = attention_fixture(AttentionProfile::UniformWindow, 10, 2);
    let p = position_profile(&dump).unwrap();
    let mut closed: f64 = 0.0;
    for head in 0..dump.header.heads {
        let window = (1usize << (head + 1)) - 1;
        for dist in 0..p.distances() {
            let (mut sum, mut count) = (0.0, 0usize);
            for s in &dump.sequences {
                for j in dist..s.len() {
                    sum += if dist < window { 1.0 / (j + 1).min(window) as f64 } else { 0.0 };
                    count += 1;
                }
            }
            if count > 0 {
                for layer in 0..dump.header.layers {
                    closed = closed.max((p.mean(layer, head, dist) - sum / count as f64).abs());
                }
            }
        }
    }
    ensure!(closed <= CLOSED_FORM_TOLERANCE, "uniform-window profile off its closed form by {closed:.2e}");

    let (dump, ders) = attention_fixture(AttentionProfile::EndMass { boost: 4.0 }, 20, 3);
    let p = position_profile(&dump).unwrap();
    let grid = end_targeting_grid(&dump, &p, &ders).unwrap();
    let zero = TARGET_OFFSETS.iter().position(|&o| o == 0).unwrap();
    let mut rows = 0;
    for r in 0..grid.rows.len() {
        let Some(peak) = grid.aggregate(None, r, zero).mean() else { continue };
        for c in (0..grid.cols.len()).filter(|&c| c != zero) {
            if let Some(m) = grid.aggregate(None, r, c).mean() {
                ensure!(peak > m, "level {}: offset {} has mean {m} >= {peak}", grid.rows[r], grid.cols[c]);
            }
        }
        rows += 1;
    }
    ensure!(rows > 0, "no populated level");
    Ok(format!(
        "centering {centering:.1e}; closed form {closed:.1e}; end-mass grid peaks at offset 0 on all {rows} populated levels"
    ))
}

fn format_round_trips() -> Outcome {
    let g = GrammarFamily::Cfg3e1.spec(2).synthesize().unwrap();
    let text = render_grammar_text(&g);
    let back = parse_grammar_text(&text).map_err(|e| e.to_string())?;
    ensure!(back == g && render_grammar_text(&back) == text, "grammar text round trip differs");
    ensure!(
        matches!(parse_grammar_text("cfg 2 1 2\n1 -> 2 x\n"), Err(GrammarError::Parse { line: 2, .. })),
        "malformed rule not reported as a parse error on line 2"
    );
    ensure!(
        matches!(parse_grammar_text("cfg 3 1 1 2\n1 -> 2 2\n2 -> 2 3\n"), Err(GrammarError::Level { .. })),
        "symbol at the wrong level not reported as a level error"
    );

    let samples: Vec<Vec<u32>> = sample_corpus(&g, 1, 50).iter().map(|d| d.terminals().to_vec()).collect();
    let (corpus, _) = pack_corpus(&g, &samples, 128, &mut seeded(3)).unwrap();
    let bytes = write_corpus(&corpus);
    let back = read_corpus(&bytes).map_err(|e| e.to_string())?;
    ensure!(back == corpus && write_corpus(&back) == bytes, "corpus round trip differs");
    let mut bad = bytes.clone();
    bad[0] = b'X';
    ensure!(matches!(read_corpus(&bad), Err(CorpusError::Format(_))), "bad corpus magic accepted");
    ensure!(matches!(read_corpus(&bytes[..bytes.len() - 1]), Err(CorpusError::Format(_))), "truncated corpus accepted");

    let f = synthesize_fixture(&g, &FixtureSpec::new(3, HiddenProfile::Random { dim: 2 }, AttentionProfile::UniformCausal), 4);
    let bytes = write_dump(&f.dump).map_err(|e| e.to_string())?;
    let back = read_dump(&bytes).map_err(|e| e.to_string())?;
    ensure!(back == f.dump && write_dump(&back).unwrap() == bytes, "dump round trip differs");
    let h = f.dump.header;
    let n = f.dump.sequences[0].len();
    let hidden_at = 60 + 4 + 4 * n;
    let attention_at = hidden_at + 4 * h.layers * n * h.dim;
    let mut bad = bytes.clone();
    bad[attention_at..attention_at + 4].copy_from_slice(&0.5f32.to_le_bytes());
    ensure!(matches!(read_dump(&bad), Err(DumpError::Stochasticity { row: 0, .. })), "non-stochastic row accepted");
    let mut bad = bytes.clone();
    bad[hidden_at..hidden_at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
    ensure!(matches!(read_dump(&bad), Err(DumpError::NonFinite { .. })), "NaN hidden state accepted");
    let mut bad = bytes.clone();
    bad[0] = b'X';
    ensure!(matches!(read_dump(&bad), Err(DumpError::Format(_))), "bad dump magic accepted");
    let other = GrammarFamily::Cfg3b.spec(2).synthesize().unwrap();
    ensure!(
        matches!(back.header.check_grammar(&other.content_hash()), Err(DumpError::HashMismatch { .. })),
        "dump accepted for the wrong grammar"
    );
    Ok("grammar text, corpus and dump round-trip byte-exactly; all malformed inputs rejected with their error class".into())
}

fn run_cli(args: &[String]) -> i32 {
    dispatch(std::iter::once("cfglab".to_string()).chain(args.iter().cloned()))
}

fn outputs_digest(dir: &Path) -> Result<BTreeMap<String, String>, String> {
    let manifest = read_manifest(&dir.join(MANIFEST)).map_err(|e| e.to_string())?;
    let mut on_disk: Vec<String> = fs::read_dir(dir)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n != MANIFEST)
        .collect();
    on_disk.sort();
    let mut listed = manifest.outputs.clone();
    listed.sort();
    if on_disk != listed {
        return Err(format!("{}: manifest lists {listed:?}, directory has {on_disk:?}", dir.display()));
    }
    on_disk.into_iter().map(|n| Ok((n.clone(), sha256_file(&dir.join(&n)).map_err(|e| e.to_string())?))).collect()
}

/// Writes a single-sequence dump whose hidden rows are token embeddings.
fn embedding_dump(cfg: &Cfg, tokens: usize, path: &Path) {
    let dim = 6;
    let mut rng = seeded(12);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let hidden: Vec<f32> = (0..tokens * dim).map(|_| normal.sample(&mut rng) as f32).collect();
    let attention: Vec<f32> = (0..tokens).flat_map(|j| vec![1.0 / (j + 1) as f32; j + 1]).collect();
    let dump = TensorDump {
        header: cfglab::tensor::DumpHeader {
            grammar_hash: cfg.content_hash(),
            layers: 1,
            heads: 1,
            dim,
            max_len: tokens,
        },
        sequences: vec![cfglab::tensor::SequenceDump {
            tokens: (0..tokens as u32).collect(),
            hidden,
            attention,
        }],
    };
    fs::write(path, write_dump(&dump).unwrap()).unwrap();
}

fn cli_determinism() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = root.path().join("first");
    let p = |rel: &str| -> String { first.join(rel).to_string_lossy().into_owned() };
    let emb: PathBuf = root.path().join("embedding.bin");
    let steps: Vec<(&str, Vec<String>)> = vec![
        ("synth", "synth --sizes 1,3,3,3,3,3,3 --degrees 2 --distinct --seed 7".into()),
        ("validate", format!("validate --grammar {}", p("synth/grammar.txt"))),
        ("sample", format!("sample --grammar {} --count 40 --cut 30 --seed 1", p("synth/grammar.txt"))),
        ("check", format!("check --grammar {} --input {}", p("synth/grammar.txt"), p("sample/samples.txt"))),
        ("annotate", format!("annotate --grammar {} --input {}", p("synth/grammar.txt"), p("sample/samples.txt"))),
        ("pack", format!("pack --grammar {} --input {} --window 64 --seed 2", p("synth/grammar.txt"), p("sample/samples.txt"))),
        ("eval-gen", format!("eval-gen --grammar {} --completions {} --filter 10", p("synth/grammar.txt"), p("sample/truth.txt"))),
        ("diversity", format!("diversity --grammar {} --input {}", p("synth/grammar.txt"), p("sample/samples.txt"))),
        ("marginal", format!("marginal --grammar {} --input {} --compare {}", p("synth/grammar.txt"), p("sample/samples.txt"), p("annotate/annotated.txt"))),
        ("perturb", format!("perturb --grammar {} --input {} --kind nt_random --gamma 0.5 --seed 3", p("synth/grammar.txt"), p("sample/samples.txt"))),
        ("perturb-t", format!("perturb --grammar {} --input {} --kind t_random --gamma 0.5 --seed 3", p("synth/grammar.txt"), p("sample/samples.txt"))),
        ("perturb-prefix", format!("perturb --grammar {} --input {} --kind prefix --cut 20 --seed 3", p("synth/grammar.txt"), p("sample/samples.txt"))),
        ("implicit-sample", format!("implicit-sample --grammar {} --input {} --tokens 20 --seed 4", p("synth/grammar.txt"), p("sample/samples.txt"))),
        ("implicit-check", format!("implicit-check --grammar {} --vocab {} --input {}", p("synth/grammar.txt"), p("implicit-sample/vocab.txt"), p("implicit-sample/observable.txt"))),
        ("embed-corr", format!("embed-corr --grammar {} --vocab {} --dump {}", p("synth/grammar.txt"), p("implicit-sample/vocab.txt"), emb.display())),
        ("fixture", format!("fixture --grammar {} --sequences 12 --attention end_mass --noise 0.2 --seed 5", p("synth/grammar.txt"))),
        ("validate-dump", format!("validate-dump --dump {} --grammar {}", p("fixture/dump.bin"), p("synth/grammar.txt"))),
        ("probe-train", format!("probe-train --grammar {} --dump {} --samples {} --heads 2 --pos-dim 8 --iterations 40 --batch 4 --holdout 2 --seed 6 --jobs 3", p("synth/grammar.txt"), p("fixture/dump.bin"), p("fixture/samples.txt"))),
        ("probe-eval", format!("probe-eval --grammar {} --dump {} --samples {} --model {}", p("synth/grammar.txt"), p("fixture/dump.bin"), p("fixture/samples.txt"), p("probe-train/model.bin"))),
        ("attn-stats", format!("attn-stats --grammar {} --dump {} --samples {} --svg", p("synth/grammar.txt"), p("fixture/dump.bin"), p("fixture/samples.txt"))),
    ]
    .into_iter()
    .map(|(name, cmd)| {
        let mut args: Vec<String> = cmd.split_whitespace().map(String::from).collect();
        args.push("--out".into());
        args.push(p(name));
        (name, args)
    })
    .collect();
    let mut commands = BTreeSet::new();
    for (name, args) in &steps {
        if *name == "embed-corr" {
            let cfg = parse_grammar_text(&fs::read_to_string(p("synth/grammar.txt")).unwrap()).unwrap();
            embedding_dump(&cfg, 20, &emb);
        }
        let code = run_cli(args);
        ensure!(code == 0, "{name} exited with {code}");
        commands.insert(args[0].clone());
    }
    ensure!(commands.len() == 18, "only {} of 18 subcommands exercised", commands.len());
    let mut files = 0;
    for (name, _) in &steps {
        let original = first.join(name);
        let again = root.path().join("replay").join(name);
        let code = replay(&original.join(MANIFEST), &again).map_err(|e| e.to_string())?;
        ensure!(code == 0, "replay of {name} exited with {code}");
        let (a, b) = (outputs_digest(&original)?, outputs_digest(&again)?);
        ensure!(!a.is_empty(), "{name} wrote no outputs");
        ensure!(a == b, "{name}: replayed outputs differ");
        files += a.len();
    }
    Ok(format!("{} runs over all 18 subcommands replayed from their manifests; {files} outputs byte-identical", steps.len()))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("parser-oracle equivalence", parser_oracle_equivalence),
        ("sampler soundness and round trip", sampler_soundness),
        ("length bound", length_bound),
        ("collision arithmetic", collision_arithmetic),
        ("marginal normalization and concentration", marginal_normalization),
        ("probe correctness", probe_correctness),
        ("attention-statistics identities", attention_identities),
        ("format round trips", format_round_trips),
        ("CLI determinism", cli_determinism),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1}s]"),
            Err(why) => {
                println!("FAIL  {name}: {why} [{secs:.1}s]");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
