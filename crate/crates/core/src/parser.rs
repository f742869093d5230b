//! Chart parsing for leveled grammars.
//!
//! `DP(i, j, a)` records whether symbol `a` derives the span `x[i..=j]`.
//! Because every body sits exactly one level below its head, the chart is
//! filled level by level from `L - 1` up to the root, and rules of length
//! three are handled directly with two split points. Each level keeps a
//! bitset for constant-time cell lookups and, per `(symbol, start)`, the sorted
//! list of span ends that are true; fills enumerate those lists, so the work
//! done is proportional to the number of true child combinations.

use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

use crate::grammar::{Cfg, SymbolId};
use crate::sampler::Derivation;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("position {position}: symbol {symbol} is not a terminal of the grammar")]
    UnknownSymbol { position: usize, symbol: SymbolId },
    #[error("string is not in the language of the grammar")]
    NotInLanguage,
    #[error("enumeration exceeded the budget of {cap} sentential forms")]
    BudgetExceeded { cap: usize },
}

struct LevelChart {
    first: SymbolId,
    width: usize,
    bits: Vec<u64>,
    ends: Vec<Vec<u32>>,
}

impl LevelChart {
    fn new(first: SymbolId, width: usize, n: usize) -> Self {
        LevelChart {
            first,
            width,
            bits: vec![0; (width * n * n).div_ceil(64)],
            ends: vec![Vec::new(); width * n],
        }
    }
}

/// A filled parse chart for one input.
pub struct Chart {
    n: usize,
    levels: Vec<LevelChart>,
}

impl Chart {
    /// Fills the chart for an input of length `n` whose position `i` may be
    /// read as terminal `t` exactly when `leaf(i, t)` holds.
    pub fn build<F>(cfg: &Cfg, n: usize, leaf: F) -> Chart
    where
        F: Fn(usize, SymbolId) -> bool,
    {
        let depth = cfg.depth();
        let mut levels: Vec<LevelChart> = (1..=depth)
            .map(|l| {
                let syms = cfg.symbols(l);
                LevelChart::new(*syms.start(), cfg.sizes()[l - 1], n)
            })
            .collect();
        let mut chart = Chart { n, levels: Vec::new() };
        {
            let leaves = &mut levels[depth - 1];
            for i in 0..n {
                for t in cfg.terminals() {
                    if leaf(i, t) {
                        Self::set(leaves, n, t, i, i);
                    }
                }
            }
        }
        for level in (1..depth).rev() {
            let (upper, lower) = levels.split_at_mut(level);
            let target = &mut upper[level - 1];
            let below = &lower[0];
            let ends = |s: SymbolId, i: usize| -> &[u32] {
                if i >= n {
                    return &[];
                }
                &below.ends[(s - below.first) as usize * n + i]
            };
            for a in cfg.symbols(level) {
                for rule in cfg.rules(a) {
                    // Bodies on the wrong level are ignored; validation reports them.
                    if rule.body.iter().any(|&b| cfg.level_of(b) != Some(level + 1)) {
                        continue;
                    }
                    match *rule.body.as_slice() {
                        [b, c] => {
                            for i in 0..n {
                                for &k1 in ends(b, i) {
                                    for &j in ends(c, k1 as usize + 1) {
                                        Self::set(target, n, a, i, j as usize);
                                    }
                                }
                            }
                        }
                        [b, c, d] => {
                            for i in 0..n {
                                for &k1 in ends(b, i) {
                                    for &k2 in ends(c, k1 as usize + 1) {
                                        for &j in ends(d, k2 as usize + 1) {
                                            Self::set(target, n, a, i, j as usize);
                                        }
                                    }
                                }
                            }
                        }
                        _ => {}
                    }
                }
            }
            for list in &mut target.ends {
                list.sort_unstable();
            }
        }
        chart.levels = levels;
        chart
    }

    fn set(level: &mut LevelChart, n: usize, symbol: SymbolId, i: usize, j: usize) {
        let s = (symbol - level.first) as usize;
        let bit = (s * n + i) * n + j;
        let (word, mask) = (bit / 64, 1u64 << (bit % 64));
        if level.bits[word] & mask == 0 {
            level.bits[word] |= mask;
            level.ends[s * n + i].push(j as u32);
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn level_index(&self, symbol: SymbolId) -> Option<usize> {
        self.levels
            .iter()
            .position(|l| symbol >= l.first && ((symbol - l.first) as usize) < l.width)
    }

    /// `DP(i, j, symbol)` with inclusive 0-based span bounds.
    pub fn cell(&self, symbol: SymbolId, i: usize, j: usize) -> bool {
        if i > j || j >= self.n {
            return false;
        }
        let Some(l) = self.level_index(symbol) else {
            return false;
        };
        let level = &self.levels[l];
        let bit = (((symbol - level.first) as usize) * self.n + i) * self.n + j;
        level.bits[bit / 64] & (1 << (bit % 64)) != 0
    }

    /// Sorted ends `j` with `DP(i, j, symbol)` true.
    pub fn ends(&self, symbol: SymbolId, i: usize) -> &[u32] {
        if i >= self.n {
            return &[];
        }
        match self.level_index(symbol) {
            Some(l) => &self.levels[l].ends[(symbol - self.levels[l].first) as usize * self.n + i],
            None => &[],
        }
    }

    /// Number of true cells, summed over all levels.
    pub fn true_cells(&self) -> usize {
        self.levels.iter().flat_map(|l| &l.ends).map(Vec::len).sum()
    }

    /// Lexicographically least witness of a true cell: the smallest rule
    /// index, then the smallest first split, then the smallest second split.
    /// Returns the rule index and the child spans.
    pub fn witness(&self, cfg: &Cfg, a: SymbolId, i: usize, j: usize) -> Option<(usize, Vec<(SymbolId, usize, usize)>)> {
        if !self.cell(a, i, j) {
            return None;
        }
        for rule in cfg.rules(a) {
            match *rule.body.as_slice() {
                [b, c] => {
                    for &k1 in self.ends(b, i) {
                        let k1 = k1 as usize;
                        if k1 >= j {
                            break;
                        }
                        if self.cell(c, k1 + 1, j) {
                            return Some((rule.index, vec![(b, i, k1), (c, k1 + 1, j)]));
                        }
                    }
                }
                [b, c, d] => {
                    for &k1 in self.ends(b, i) {
                        let k1 = k1 as usize;
                        if k1 + 1 >= j {
                            break;
                        }
                        for &k2 in self.ends(c, k1 + 1) {
                            let k2 = k2 as usize;
                            if k2 >= j {
                                break;
                            }
                            if self.cell(d, k2 + 1, j) {
                                return Some((rule.index, vec![(b, i, k1), (c, k1 + 1, k2), (d, k2 + 1, j)]));
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        None
    }

    /// Number of distinct derivation trees of `symbol` over `x[i..=j]`,
    /// saturating at `u128::MAX`.
    pub fn count_derivations(&self, cfg: &Cfg, symbol: SymbolId, i: usize, j: usize) -> u128 {
        let mut memo = HashMap::new();
        self.count_rec(cfg, symbol, i, j, &mut memo)
    }

    fn count_rec(
        &self,
        cfg: &Cfg,
        a: SymbolId,
        i: usize,
        j: usize,
        memo: &mut HashMap<(SymbolId, usize, usize), u128>,
    ) -> u128 {
        if !self.cell(a, i, j) {
            return 0;
        }
        if cfg.is_terminal(a) {
            return 1;
        }
        if let Some(&c) = memo.get(&(a, i, j)) {
            return c;
        }
        let mut total: u128 = 0;
        for rule in cfg.rules(a) {
            match *rule.body.as_slice() {
                [b, c] => {
                    for &k1 in self.ends(b, i) {
                        let k1 = k1 as usize;
                        if k1 >= j {
                            break;
                        }
                        if self.cell(c, k1 + 1, j) {
                            let left = self.count_rec(cfg, b, i, k1, memo);
                            let right = self.count_rec(cfg, c, k1 + 1, j, memo);
                            total = total.saturating_add(left.saturating_mul(right));
                        }
                    }
                }
                [b, c, d] => {
                    for &k1 in self.ends(b, i) {
                        let k1 = k1 as usize;
                        if k1 + 1 >= j {
                            break;
                        }
                        for &k2 in self.ends(c, k1 + 1) {
                            let k2 = k2 as usize;
                            if k2 >= j {
                                break;
                            }
                            if self.cell(d, k2 + 1, j) {
                                let x = self.count_rec(cfg, b, i, k1, memo);
                                let y = self.count_rec(cfg, c, k1 + 1, k2, memo);
                                let z = self.count_rec(cfg, d, k2 + 1, j, memo);
                                total = total.saturating_add(x.saturating_mul(y).saturating_mul(z));
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        memo.insert((a, i, j), total);
        total
    }
}

fn check_terminals(cfg: &Cfg, x: &[SymbolId]) -> Result<(), ParseError> {
    match x.iter().position(|&t| !cfg.is_terminal(t)) {
        Some(position) => Err(ParseError::UnknownSymbol {
            position,
            symbol: x[position],
        }),
        None => Ok(()),
    }
}

/// Chart for a terminal string.
pub fn parse_chart(cfg: &Cfg, x: &[SymbolId]) -> Result<Chart, ParseError> {
    check_terminals(cfg, x)?;
    Ok(Chart::build(cfg, x.len(), |i, t| x[i] == t))
}

/// Whether `x ∈ L(cfg)`.
pub fn membership(cfg: &Cfg, x: &[SymbolId]) -> Result<bool, ParseError> {
    if x.is_empty() {
        check_terminals(cfg, x)?;
        return Ok(false);
    }
    let chart = parse_chart(cfg, x)?;
    Ok(chart.cell(cfg.root(), 0, x.len() - 1))
}

/// Number of derivation trees of `x` (0 for non-members).
pub fn count_parses(cfg: &Cfg, x: &[SymbolId]) -> Result<u128, ParseError> {
    if x.is_empty() {
        return Ok(0);
    }
    let chart = parse_chart(cfg, x)?;
    Ok(chart.count_derivations(cfg, cfg.root(), 0, x.len() - 1))
}

/// Rebuilds the full derivation annotations of a chart, choosing the
/// lexicographically least witness at every cell from the root down.
pub fn derivation_from_chart(cfg: &Cfg, chart: &Chart) -> Result<Derivation, ParseError> {
    let n = chart.len();
    if n == 0 || !chart.cell(cfg.root(), 0, n - 1) {
        return Err(ParseError::NotInLanguage);
    }
    let mut spans = vec![(cfg.root(), 0usize, n - 1)];
    let mut levels = vec![vec![cfg.root()]];
    let mut parents = vec![Vec::new()];
    for _ in 1..cfg.depth() {
        let mut next = Vec::with_capacity(spans.len() * 3);
        let mut par = Vec::with_capacity(spans.len() * 3);
        for (k, &(a, i, j)) in spans.iter().enumerate() {
            let (_, children) = chart
                .witness(cfg, a, i, j)
                .expect("every true cell has a witness");
            for child in children {
                next.push(child);
                par.push(k);
            }
        }
        levels.push(next.iter().map(|c| c.0).collect());
        parents.push(par);
        spans = next;
    }
    Ok(Derivation::from_levels(levels, parents).expect("chart derivations are consistent"))
}

/// Canonical (lexicographically least) derivation of `x`.
pub fn annotate(cfg: &Cfg, x: &[SymbolId]) -> Result<Derivation, ParseError> {
    let chart = parse_chart(cfg, x)?;
    derivation_from_chart(cfg, &chart)
}

/// Exhaustively enumerates `{x ∈ L(cfg) : len(x) ≤ max_len}` by expanding
/// every rule choice, level by level. Fails once more than `cap` sentential
/// forms have been produced.
pub fn brute_force_language(cfg: &Cfg, max_len: usize, cap: usize) -> Result<BTreeSet<Vec<SymbolId>>, ParseError> {
    // Shortest yield of each symbol, by direct recursion over the rules.
    fn shortest(cfg: &Cfg, s: SymbolId, memo: &mut HashMap<SymbolId, usize>) -> usize {
        if cfg.is_terminal(s) {
            return 1;
        }
        if let Some(&m) = memo.get(&s) {
            return m;
        }
        let m = cfg
            .rules(s)
            .iter()
            .map(|r| r.body.iter().map(|&b| shortest(cfg, b, memo)).sum::<usize>())
            .min()
            .unwrap_or(usize::MAX / 4);
        memo.insert(s, m);
        m
    }
    let mut memo = HashMap::new();
    let mut produced = 0usize;
    let mut forms: BTreeSet<Vec<SymbolId>> = BTreeSet::new();
    forms.insert(vec![cfg.root()]);
    for _ in 1..cfg.depth() {
        let mut next = BTreeSet::new();
        for form in &forms {
            let mut partial: Vec<Vec<SymbolId>> = vec![Vec::new()];
            for (pos, &sym) in form.iter().enumerate() {
                let rest: usize = form[pos + 1..].iter().map(|&s| shortest(cfg, s, &mut memo)).sum();
                let mut grown = Vec::new();
                for prefix in &partial {
                    for rule in cfg.rules(sym) {
                        let mut p = prefix.clone();
                        p.extend_from_slice(&rule.body);
                        let lower: usize = p.iter().map(|&s| shortest(cfg, s, &mut memo)).sum();
                        if lower + rest <= max_len {
                            produced += 1;
                            if produced > cap {
                                return Err(ParseError::BudgetExceeded { cap });
                            }
                            grown.push(p);
                        }
                    }
                }
                partial = grown;
            }
            next.extend(partial);
        }
        forms = next;
    }
    Ok(forms.into_iter().filter(|f| f.len() <= max_len).collect())
}
