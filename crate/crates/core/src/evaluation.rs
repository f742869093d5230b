//! Scoring completions, diversity multisets and marginal symbol statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::grammar::{Cfg, SymbolId};
use crate::parser::{membership, ParseError};
use crate::sampler::Derivation;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("no completion records")]
    Empty,
    #[error("only {found} grammatical records, {wanted} requested")]
    Exhausted { found: usize, wanted: usize },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("tables were built for different grammars")]
    Mismatch,
}

/// A prefix of length `c` and the completion generated for it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionRecord {
    pub prefix: Vec<SymbolId>,
    pub completion: Vec<SymbolId>,
    pub source: String,
}

impl CompletionRecord {
    pub fn full(&self) -> Vec<SymbolId> {
        let mut x = self.prefix.clone();
        x.extend_from_slice(&self.completion);
        x
    }
}

/// Prefixes `x[..c]` of each sample with empty completions, ready to hand to
/// an external generator.
pub fn extract_prefixes(pool: &[Derivation], cut: usize) -> Vec<CompletionRecord> {
    pool.iter()
        .map(|d| {
            let x = d.terminals();
            CompletionRecord {
                prefix: x[..cut.min(x.len())].to_vec(),
                completion: Vec::new(),
                source: "prefix".into(),
            }
        })
        .collect()
}

/// Records whose completion is the rest of the sampled string itself.
pub fn truth_records(pool: &[Derivation], cut: usize) -> Vec<CompletionRecord> {
    pool.iter()
        .map(|d| {
            let x = d.terminals();
            let c = cut.min(x.len());
            CompletionRecord {
                prefix: x[..c].to_vec(),
                completion: x[c..].to_vec(),
                source: "truth".into(),
            }
        })
        .collect()
}

fn join(items: &[SymbolId]) -> String {
    items.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ")
}

/// One record per line: `c=<len>\t<prefix ids>\t<completion ids>`.
pub fn write_completions(records: &[CompletionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        writeln!(out, "c={}\t{}\t{}", r.prefix.len(), join(&r.prefix), join(&r.completion)).unwrap();
    }
    out
}

pub fn read_completions(text: &str, source: &str) -> Result<Vec<CompletionRecord>, EvalError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fail = |message: &str| EvalError::Format {
            line,
            message: message.to_string(),
        };
        let mut fields = raw.split('\t');
        let c: usize = fields
            .next()
            .and_then(|f| f.trim().strip_prefix("c="))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| fail("expected `c=<int>` as the first field"))?;
        let parse = |f: Option<&str>| -> Result<Vec<SymbolId>, EvalError> {
            f.unwrap_or("")
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| fail("expected integer token ids")))
                .collect()
        };
        let prefix = parse(fields.next())?;
        let completion = parse(fields.next())?;
        if fields.next().is_some() {
            return Err(fail("too many fields"));
        }
        if prefix.len() != c {
            return Err(fail("prefix length disagrees with `c=`"));
        }
        out.push(CompletionRecord {
            prefix,
            completion,
            source: source.to_string(),
        });
    }
    Ok(out)
}

/// Fraction of records whose `prefix ∘ completion` is in the language.
pub fn generation_accuracy(cfg: &Cfg, records: &[CompletionRecord]) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let verdicts: Vec<bool> = records
        .par_iter()
        .map(|r| membership(cfg, &r.full()))
        .collect::<Result<_, _>>()?;
    Ok(verdicts.iter().filter(|&&v| v).count() as f64 / records.len() as f64)
}

/// Keeps the first `m` grammatical records of the stream and reports how many
/// records were consumed to find them.
pub fn filter_grammatical(
    cfg: &Cfg,
    records: &[CompletionRecord],
    m: usize,
) -> Result<(Vec<CompletionRecord>, usize), EvalError> {
    let mut kept = Vec::with_capacity(m);
    if m == 0 {
        return Ok((kept, 0));
    }
    for (i, r) in records.iter().enumerate() {
        if membership(cfg, &r.full())? {
            kept.push(r.clone());
            if kept.len() == m {
                return Ok((kept, i + 1));
            }
        }
    }
    Err(EvalError::Exhausted {
        found: kept.len(),
        wanted: m,
    })
}

/// A multiset stored as element → multiplicity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Multiset<T: Ord> {
    counts: BTreeMap<T, usize>,
    total: usize,
}

impl<T: Ord> Default for Multiset<T> {
    fn default() -> Self {
        Multiset {
            counts: BTreeMap::new(),
            total: 0,
        }
    }
}

impl<T: Ord> Multiset<T> {
    pub fn insert(&mut self, item: T) {
        *self.counts.entry(item).or_insert(0) += 1;
        self.total += 1;
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    /// Total multiplicity minus the number of distinct elements.
    pub fn collisions(&self) -> usize {
        self.total - self.counts.len()
    }

    pub fn count(&self, item: &T) -> usize {
        self.counts.get(item).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&T, usize)> {
        self.counts.iter().map(|(k, &v)| (k, v))
    }

    pub fn merge(&mut self, other: Multiset<T>) {
        for (k, v) in other.counts {
            *self.counts.entry(k).or_insert(0) += v;
            self.total += v;
        }
    }
}

impl<T: Ord> FromIterator<T> for Multiset<T> {
    fn from_iter<I: IntoIterator<Item = T>>(iter: I) -> Self {
        let mut m = Multiset::default();
        for x in iter {
            m.insert(x);
        }
        m
    }
}

/// For each nonterminal `a` and each level `ℓ₂` at or below it, the multiset
/// of level-ℓ₂ symbol sequences that `a` rewrote into across the pool.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DiversityTable {
    cells: BTreeMap<(SymbolId, usize), Multiset<Vec<SymbolId>>>,
}

impl DiversityTable {
    pub fn cell(&self, symbol: SymbolId, to_level: usize) -> Option<&Multiset<Vec<SymbolId>>> {
        self.cells.get(&(symbol, to_level))
    }

    /// Cells keyed by `(symbol, to_level)` in ascending order.
    pub fn cells(&self) -> impl Iterator<Item = (&(SymbolId, usize), &Multiset<Vec<SymbolId>>)> {
        self.cells.iter()
    }

    pub fn merge(&mut self, other: DiversityTable) {
        for (k, v) in other.cells {
            self.cells.entry(k).or_default().merge(v);
        }
    }

    pub fn to_csv(&self, cfg: &Cfg) -> String {
        let mut out = String::from("symbol,level,to_level,total,distinct,collisions\n");
        for (&(a, l2), m) in &self.cells {
            let l1 = cfg.level_of(a).unwrap_or(0);
            writeln!(out, "{a},{l1},{l2},{},{},{}", m.total(), m.distinct(), m.collisions()).unwrap();
        }
        out
    }
}

fn diversity_of(cfg: &Cfg, d: &Derivation) -> DiversityTable {
    let mut table = DiversityTable::default();
    let n = d.len();
    let depth = cfg.depth();
    for l1 in 1..depth {
        let p1 = d.ancestor_indices(l1);
        let mut start = 0;
        while start < n {
            let mut end = start;
            while end + 1 < n && p1[end + 1] == p1[start] {
                end += 1;
            }
            let a = d.ancestor_symbol(l1, start);
            for l2 in l1..=depth {
                let p2 = d.ancestor_indices(l2);
                let seq: Vec<SymbolId> = (start..=end)
                    .filter(|&k| k == start || p2[k] != p2[k - 1])
                    .map(|k| d.ancestor_symbol(l2, k))
                    .collect();
                table.cells.entry((a, l2)).or_default().insert(seq);
            }
            start = end + 1;
        }
    }
    table
}

/// Diversity multisets aggregated over a pool of derivations.
pub fn diversity_table(cfg: &Cfg, pool: &[Derivation]) -> DiversityTable {
    pool.par_iter()
        .map(|d| diversity_of(cfg, d))
        .reduce(DiversityTable::default, |mut a, b| {
            a.merge(b);
            a
        })
}

/// Empirical `p(a, i)`: probability that the level-ℓ ancestor of position
/// `i` is `a`. Positions at or beyond the 99.9th-percentile length are
/// pooled into a per-level tail row.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalTable {
    sizes: Vec<usize>,
    firsts: Vec<SymbolId>,
    /// `counts[ℓ-1][i][local symbol]`
    counts: Vec<Vec<Vec<u64>>>,
    /// Samples long enough to reach each position.
    support: Vec<u64>,
    tail: Vec<Vec<u64>>,
    tail_support: u64,
}

impl MarginalTable {
    pub fn positions(&self) -> usize {
        self.support.len()
    }

    pub fn depth(&self) -> usize {
        self.sizes.len()
    }

    pub fn support(&self, position: usize) -> u64 {
        self.support.get(position).copied().unwrap_or(0)
    }

    /// `p(a, i)` for `a` on `level`; 0 outside the table.
    pub fn probability(&self, level: usize, symbol: SymbolId, position: usize) -> f64 {
        let n = self.support(position);
        if n == 0 {
            return 0.0;
        }
        let local = (symbol - self.firsts[level - 1]) as usize;
        self.counts[level - 1][position][local] as f64 / n as f64
    }

    /// Pooled probability of `a` over the tail positions.
    pub fn tail_probability(&self, level: usize, symbol: SymbolId) -> f64 {
        if self.tail_support == 0 {
            return 0.0;
        }
        let local = (symbol - self.firsts[level - 1]) as usize;
        self.tail[level - 1][local] as f64 / self.tail_support as f64
    }

    pub fn tail_support(&self) -> u64 {
        self.tail_support
    }

    pub fn symbols(&self, level: usize) -> impl Iterator<Item = SymbolId> {
        let first = self.firsts[level - 1];
        first..first + self.sizes[level - 1] as SymbolId
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,symbol,position,probability,count\n");
        for level in 1..=self.depth() {
            for i in 0..self.positions() {
                for a in self.symbols(level) {
                    let local = (a - self.firsts[level - 1]) as usize;
                    writeln!(
                        out,
                        "{level},{a},{i},{},{}",
                        self.probability(level, a, i),
                        self.counts[level - 1][i][local]
                    )
                    .unwrap();
                }
            }
            for a in self.symbols(level) {
                let local = (a - self.firsts[level - 1]) as usize;
                writeln!(out, "{level},{a},tail,{},{}", self.tail_probability(level, a), self.tail[level - 1][local]).unwrap();
            }
        }
        out
    }
}

fn percentile_999(lengths: &mut [usize]) -> usize {
    lengths.sort_unstable();
    let rank = ((lengths.len() as f64) * 0.999).ceil() as usize;
    lengths[rank.clamp(1, lengths.len()) - 1]
}

pub fn marginal_table(cfg: &Cfg, pool: &[Derivation]) -> Result<MarginalTable, EvalError> {
    if pool.is_empty() {
        return Err(EvalError::Empty);
    }
    let depth = cfg.depth();
    let sizes = cfg.sizes().to_vec();
    let firsts: Vec<SymbolId> = (1..=depth).map(|l| *cfg.symbols(l).start()).collect();
    let mut lengths: Vec<usize> = pool.iter().map(Derivation::len).collect();
    let cutoff = percentile_999(&mut lengths);
    let mut counts: Vec<Vec<Vec<u64>>> = sizes.iter().map(|&s| vec![vec![0; s]; cutoff]).collect();
    let mut tail: Vec<Vec<u64>> = sizes.iter().map(|&s| vec![0; s]).collect();
    let mut support = vec![0u64; cutoff];
    let mut tail_support = 0u64;
    for d in pool {
        for i in 0..d.len() {
            if i < cutoff {
                support[i] += 1;
            } else {
                tail_support += 1;
            }
            for level in 1..=depth {
                let local = (d.ancestor_symbol(level, i) - firsts[level - 1]) as usize;
                if i < cutoff {
                    counts[level - 1][i][local] += 1;
                } else {
                    tail[level - 1][local] += 1;
                }
            }
        }
    }
    Ok(MarginalTable {
        sizes,
        firsts,
        counts,
        support,
        tail,
        tail_support,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginalDiffEntry {
    pub level: usize,
    pub symbol: SymbolId,
    pub position: usize,
    pub diff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginalDiff {
    pub entries: Vec<MarginalDiffEntry>,
    pub max_abs: f64,
}

impl MarginalDiff {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,symbol,position,difference\n");
        for e in &self.entries {
            writeln!(out, "{},{},{},{}", e.level, e.symbol, e.position, e.diff).unwrap();
        }
        out
    }
}

/// `a - b` over the union of both tables' positions; missing entries are 0.
pub fn marginal_diff(a: &MarginalTable, b: &MarginalTable) -> Result<MarginalDiff, EvalError> {
    if a.sizes != b.sizes || a.firsts != b.firsts {
        return Err(EvalError::Mismatch);
    }
    let positions = a.positions().max(b.positions());
    let mut entries = Vec::new();
    let mut max_abs: f64 = 0.0;
    for level in 1..=a.depth() {
        for i in 0..positions {
            for s in a.symbols(level) {
                let diff = a.probability(level, s, i) - b.probability(level, s, i);
                max_abs = max_abs.max(diff.abs());
                entries.push(MarginalDiffEntry {
                    level,
                    symbol: s,
                    position: i,
                    diff,
                });
            }
        }
    }
    Ok(MarginalDiff { entries, max_abs })
}
