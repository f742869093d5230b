//! Leveled context-free grammars.
//!
//! A grammar of depth `L` has symbol levels `1..=L`. Level 1 holds the single
//! root, level `L` holds the terminals, and every rule rewrites a symbol at
//! level `ℓ` into two or three symbols at level `ℓ + 1`. Symbol ids are dense
//! integers assigned level by level starting at 1, so the level of a symbol is
//! a function of its id and the level sizes.
//!
//! Rule order within a head is significant: it is the order used for
//! lexicographic tie-breaking by the chart parser.

use std::collections::HashSet;
use std::fmt;
use std::ops::RangeInclusive;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Identifier of a grammar symbol. Ids are positive and unique across levels.
pub type SymbolId = u32;

/// Maximum number of rejection-sampling attempts spent on one head during
/// synthesis before giving up.
pub const SYNTHESIS_ATTEMPTS_PER_HEAD: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GrammarError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: symbol {symbol} belongs to level {declared} but is used at level {used}")]
    Level {
        line: usize,
        symbol: SymbolId,
        declared: usize,
        used: usize,
    },
    #[error("unknown symbol {0}")]
    UnknownSymbol(SymbolId),
    #[error("synthesis exhausted after {attempts} attempts on head {head}")]
    SynthesisExhausted { head: SymbolId, attempts: usize },
    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),
}

/// One production `head -> body`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Rule {
    pub head: SymbolId,
    pub body: Vec<SymbolId>,
    /// Ordinal of this rule among the rules of `head`, in file order.
    pub index: usize,
}

/// A leveled context-free grammar.
///
/// Values are immutable once built. Use [`validate_cfg`] to check the
/// structural invariants; the constructors only reject out-of-range ids so
/// that malformed grammars can still be inspected and reported on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cfg {
    sizes: Vec<usize>,
    /// `offsets[ℓ - 1]` is the id immediately before the first symbol of level ℓ.
    offsets: Vec<SymbolId>,
    /// Rules indexed by head id; slot 0 is unused.
    rules: Vec<Vec<Rule>>,
}

impl Cfg {
    /// Builds a grammar from level sizes and `(head, body)` pairs. Rule
    /// indices are assigned per head in the order given.
    pub fn from_rules<I>(sizes: Vec<usize>, rules: I) -> Result<Self, GrammarError>
    where
        I: IntoIterator<Item = (SymbolId, Vec<SymbolId>)>,
    {
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut next: SymbolId = 0;
        for &size in &sizes {
            offsets.push(next);
            next += size as SymbolId;
        }
        let total = next as usize;
        let mut by_head: Vec<Vec<Rule>> = vec![Vec::new(); total + 1];
        for (head, body) in rules {
            if head == 0 || head as usize > total {
                return Err(GrammarError::UnknownSymbol(head));
            }
            if let Some(&bad) = body.iter().find(|&&s| s == 0 || s as usize > total) {
                return Err(GrammarError::UnknownSymbol(bad));
            }
            let slot = &mut by_head[head as usize];
            let index = slot.len();
            slot.push(Rule { head, body, index });
        }
        Ok(Cfg {
            sizes,
            offsets,
            rules: by_head,
        })
    }

    /// Number of levels `L`, including the terminal level.
    pub fn depth(&self) -> usize {
        self.sizes.len()
    }

    /// Level sizes `(|NT₁|, …, |NT_L|)`; the last entry is `|T|`.
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn num_symbols(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn root(&self) -> SymbolId {
        1
    }

    /// Ids of the symbols at `level` (1-based).
    pub fn symbols(&self, level: usize) -> RangeInclusive<SymbolId> {
        let first = self.offsets[level - 1] + 1;
        first..=self.offsets[level - 1] + self.sizes[level - 1] as SymbolId
    }

    pub fn terminals(&self) -> RangeInclusive<SymbolId> {
        self.symbols(self.depth())
    }

    /// Level (1-based) of a symbol id, or `None` when the id is out of range.
    pub fn level_of(&self, symbol: SymbolId) -> Option<usize> {
        if symbol == 0 {
            return None;
        }
        (1..=self.depth()).find(|&l| self.symbols(l).contains(&symbol))
    }

    /// Position of `symbol` within its level (0-based).
    pub fn local_index(&self, symbol: SymbolId) -> usize {
        let level = self.level_of(symbol).expect("symbol out of range");
        (symbol - self.offsets[level - 1] - 1) as usize
    }

    pub fn is_terminal(&self, symbol: SymbolId) -> bool {
        self.terminals().contains(&symbol)
    }

    /// Rules headed by `symbol`, in index order.
    pub fn rules(&self, symbol: SymbolId) -> &[Rule] {
        self.rules
            .get(symbol as usize)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn all_rules(&self) -> impl Iterator<Item = &Rule> {
        self.rules.iter().flatten()
    }

    /// SHA-256 of the canonical text rendering.
    pub fn content_hash(&self) -> [u8; 32] {
        Sha256::digest(render_grammar_text(self).as_bytes()).into()
    }

    pub fn content_hash_hex(&self) -> String {
        hex::encode(self.content_hash())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    TooFewLevels,
    RootLevelSize,
    EmptyLevel,
    RuleLengthOutOfRange,
    BodyLevelMismatch,
    TerminalHasRules,
    UnproductiveNonterminal,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViolationKind::TooFewLevels => "grammar needs at least two levels",
            ViolationKind::RootLevelSize => "root level must hold exactly one symbol",
            ViolationKind::EmptyLevel => "empty level",
            ViolationKind::RuleLengthOutOfRange => "rule length out of range",
            ViolationKind::BodyLevelMismatch => "body symbol not on the next level",
            ViolationKind::TerminalHasRules => "terminal has rules",
            ViolationKind::UnproductiveNonterminal => "unproductive nonterminal",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub level: usize,
    pub symbol: Option<SymbolId>,
    pub rule: Option<usize>,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "level {}", self.level)?;
        if let Some(s) = self.symbol {
            write!(f, " symbol {s}")?;
        }
        if let Some(r) = self.rule {
            write!(f, " rule {r}")?;
        }
        write!(f, ": {}", self.kind)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }
}

/// Checks every structural invariant of a leveled grammar. Violations are
/// collected, never raised.
pub fn validate_cfg(cfg: &Cfg) -> ValidationReport {
    let mut violations = Vec::new();
    let depth = cfg.depth();
    if depth < 2 {
        violations.push(Violation {
            level: depth,
            symbol: None,
            rule: None,
            kind: ViolationKind::TooFewLevels,
        });
    }
    if cfg.sizes.first().copied() != Some(1) {
        violations.push(Violation {
            level: 1,
            symbol: None,
            rule: None,
            kind: ViolationKind::RootLevelSize,
        });
    }
    for (i, &size) in cfg.sizes.iter().enumerate() {
        if size == 0 {
            violations.push(Violation {
                level: i + 1,
                symbol: None,
                rule: None,
                kind: ViolationKind::EmptyLevel,
            });
        }
    }
    for level in 1..=depth {
        for symbol in cfg.symbols(level) {
            let rules = cfg.rules(symbol);
            if level == depth {
                if !rules.is_empty() {
                    violations.push(Violation {
                        level,
                        symbol: Some(symbol),
                        rule: None,
                        kind: ViolationKind::TerminalHasRules,
                    });
                }
                continue;
            }
            if rules.is_empty() {
                violations.push(Violation {
                    level,
                    symbol: Some(symbol),
                    rule: None,
                    kind: ViolationKind::UnproductiveNonterminal,
                });
            }
            for rule in rules {
                if !(2..=3).contains(&rule.body.len()) {
                    violations.push(Violation {
                        level,
                        symbol: Some(symbol),
                        rule: Some(rule.index),
                        kind: ViolationKind::RuleLengthOutOfRange,
                    });
                }
                if rule.body.iter().any(|&b| cfg.level_of(b) != Some(level + 1)) {
                    violations.push(Violation {
                        level,
                        symbol: Some(symbol),
                        rule: Some(rule.index),
                        kind: ViolationKind::BodyLevelMismatch,
                    });
                }
            }
        }
    }
    ValidationReport { violations }
}

/// Constraints for random grammar synthesis.
#[derive(Debug, Clone, PartialEq)]
pub struct CfgSynthSpec {
    pub sizes: Vec<usize>,
    /// Allowed values of `|R(a)|`; each nonterminal draws one uniformly.
    pub degree_set: Vec<usize>,
    /// Allowed body lengths, drawn uniformly per rule.
    pub rule_lengths: Vec<usize>,
    /// Forbid equal adjacent body symbols and duplicate rules under one head.
    pub distinct_consecutive: bool,
    /// Require the bodies of each level to form a prefix-free code with no
    /// repeats across heads. Such grammars are unambiguous.
    pub prefix_free: bool,
    pub seed: u64,
}

impl CfgSynthSpec {
    pub fn new(sizes: Vec<usize>, degree_set: Vec<usize>) -> Self {
        CfgSynthSpec {
            sizes,
            degree_set,
            rule_lengths: vec![2, 3],
            distinct_consecutive: false,
            prefix_free: false,
            seed: 0,
        }
    }

    pub fn distinct(mut self, on: bool) -> Self {
        self.distinct_consecutive = on;
        self
    }

    pub fn prefix_free(mut self, on: bool) -> Self {
        self.prefix_free = on;
        self
    }

    pub fn rule_lengths(mut self, lengths: Vec<usize>) -> Self {
        self.rule_lengths = lengths;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Synthesizes with a generator seeded from `self.seed`.
    pub fn synthesize(&self) -> Result<Cfg, GrammarError> {
        synthesize_cfg(self, &mut ChaCha8Rng::seed_from_u64(self.seed))
    }

    fn check(&self) -> Result<(), GrammarError> {
        let bad = |m: &str| Err(GrammarError::InvalidSpec(m.to_string()));
        if self.sizes.len() < 2 {
            return bad("at least two levels are required");
        }
        if self.sizes[0] != 1 {
            return bad("the root level must have size 1");
        }
        if self.sizes.contains(&0) {
            return bad("level sizes must be positive");
        }
        if self.degree_set.is_empty() || self.degree_set.contains(&0) {
            return bad("degree set must be nonempty and positive");
        }
        if self.rule_lengths.is_empty() || self.rule_lengths.iter().any(|l| !(2..=3).contains(l)) {
            return bad("rule lengths must be 2 or 3");
        }
        Ok(())
    }
}

/// The grammar families used for the depth-7 experiments. Exact production
/// tables are not published, so each family is a synthesis recipe matching
/// its stated constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrammarFamily {
    Cfg3b,
    Cfg3i,
    Cfg3h,
    Cfg3g,
    Cfg3f,
    Cfg3e1,
    Cfg3e2,
}

impl GrammarFamily {
    pub const ALL: [GrammarFamily; 7] = [
        GrammarFamily::Cfg3b,
        GrammarFamily::Cfg3i,
        GrammarFamily::Cfg3h,
        GrammarFamily::Cfg3g,
        GrammarFamily::Cfg3f,
        GrammarFamily::Cfg3e1,
        GrammarFamily::Cfg3e2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GrammarFamily::Cfg3b => "cfg3b",
            GrammarFamily::Cfg3i => "cfg3i",
            GrammarFamily::Cfg3h => "cfg3h",
            GrammarFamily::Cfg3g => "cfg3g",
            GrammarFamily::Cfg3f => "cfg3f",
            GrammarFamily::Cfg3e1 => "cfg3e1",
            GrammarFamily::Cfg3e2 => "cfg3e2",
        }
    }

    pub fn spec(self, seed: u64) -> CfgSynthSpec {
        let base = vec![1, 3, 3, 3, 3, 3, 3];
        let spec = match self {
            GrammarFamily::Cfg3b => CfgSynthSpec::new(base, vec![2]).distinct(true),
            GrammarFamily::Cfg3i => CfgSynthSpec::new(base, vec![2]),
            GrammarFamily::Cfg3h => CfgSynthSpec::new(base, vec![2, 3]),
            GrammarFamily::Cfg3g => CfgSynthSpec::new(base, vec![3]),
            GrammarFamily::Cfg3f => CfgSynthSpec::new(base, vec![3, 4]),
            GrammarFamily::Cfg3e1 => CfgSynthSpec::new(vec![1, 3, 9, 27, 81, 27, 9], vec![2, 3]),
            GrammarFamily::Cfg3e2 => CfgSynthSpec::new(vec![1, 3, 9, 27, 27, 9, 4], vec![2, 3]),
        };
        spec.seed(seed)
    }
}

impl std::str::FromStr for GrammarFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GrammarFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| format!("unknown grammar family `{s}`"))
    }
}

fn is_prefix(a: &[SymbolId], b: &[SymbolId]) -> bool {
    a.len() <= b.len() && b[..a.len()] == *a
}

/// Draws a random grammar satisfying `spec`, using `rng` for every choice.
pub fn synthesize_cfg<R: Rng + ?Sized>(spec: &CfgSynthSpec, rng: &mut R) -> Result<Cfg, GrammarError> {
    spec.check()?;
    let mut offsets = Vec::with_capacity(spec.sizes.len());
    let mut next: SymbolId = 0;
    for &size in &spec.sizes {
        offsets.push(next);
        next += size as SymbolId;
    }
    let mut rules = Vec::new();
    for level in 1..spec.sizes.len() {
        let children: Vec<SymbolId> =
            (offsets[level] + 1..=offsets[level] + spec.sizes[level] as SymbolId).collect();
        let mut level_bodies: Vec<Vec<SymbolId>> = Vec::new();
        for head in offsets[level - 1] + 1..=offsets[level - 1] + spec.sizes[level - 1] as SymbolId {
            let degree = *spec.degree_set.choose(rng).expect("nonempty degree set");
            let mut own: Vec<Vec<SymbolId>> = Vec::with_capacity(degree);
            let mut attempts = 0;
            while own.len() < degree {
                if attempts == SYNTHESIS_ATTEMPTS_PER_HEAD {
                    return Err(GrammarError::SynthesisExhausted { head, attempts });
                }
                attempts += 1;
                let len = *spec.rule_lengths.choose(rng).expect("nonempty lengths");
                let body: Vec<SymbolId> = (0..len).map(|_| *children.choose(rng).unwrap()).collect();
                if spec.distinct_consecutive
                    && (body.windows(2).any(|w| w[0] == w[1]) || own.contains(&body))
                {
                    continue;
                }
                if spec.prefix_free
                    && level_bodies
                        .iter()
                        .any(|b| is_prefix(b, &body) || is_prefix(&body, b))
                {
                    continue;
                }
                level_bodies.push(body.clone());
                own.push(body);
            }
            rules.extend(own.into_iter().map(|b| (head, b)));
        }
    }
    Cfg::from_rules(spec.sizes.clone(), rules)
}

/// Renders the canonical text form: a `cfg` header followed by the rules of
/// each head in id order and index order.
pub fn render_grammar_text(cfg: &Cfg) -> String {
    let mut out = String::from("cfg ");
    out.push_str(&cfg.depth().to_string());
    for s in &cfg.sizes {
        out.push(' ');
        out.push_str(&s.to_string());
    }
    out.push('\n');
    for rule in cfg.all_rules() {
        out.push_str(&rule.head.to_string());
        out.push_str(" ->");
        for b in &rule.body {
            out.push(' ');
            out.push_str(&b.to_string());
        }
        out.push('\n');
    }
    out
}

fn parse_ints(line: usize, tokens: &str) -> Result<Vec<u64>, GrammarError> {
    tokens
        .split_whitespace()
        .map(|t| {
            t.parse::<u64>().map_err(|_| GrammarError::Parse {
                line,
                message: format!("expected an integer, found `{t}`"),
            })
        })
        .collect()
}

/// Parses the grammar text format.
///
/// ```text
/// # comment
/// cfg 3 1 2 2
/// 1 -> 2 3
/// 2 -> 4 4
/// 2 -> 4 5
/// 3 -> 5 5
/// ```
pub fn parse_grammar_text(text: &str) -> Result<Cfg, GrammarError> {
    let mut sizes: Option<Vec<usize>> = None;
    let mut rules = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some(sizes) = sizes.as_ref() else {
            let rest = content.strip_prefix("cfg").ok_or_else(|| GrammarError::Parse {
                line,
                message: "expected `cfg <L> <size1> ... <sizeL>` header".into(),
            })?;
            let nums = parse_ints(line, rest)?;
            if nums.is_empty() || nums[0] as usize != nums.len() - 1 {
                return Err(GrammarError::Parse {
                    line,
                    message: "level count does not match the number of sizes".into(),
                });
            }
            sizes = Some(nums[1..].iter().map(|&n| n as usize).collect());
            continue;
        };
        let (head, body) = content.split_once("->").ok_or_else(|| GrammarError::Parse {
            line,
            message: "expected `<head> -> <body>`".into(),
        })?;
        let head = parse_ints(line, head)?;
        let body = parse_ints(line, body)?;
        if head.len() != 1 {
            return Err(GrammarError::Parse {
                line,
                message: "rule must have exactly one head symbol".into(),
            });
        }
        if !(2..=3).contains(&body.len()) {
            return Err(GrammarError::Parse {
                line,
                message: format!("rule body must have 2 or 3 symbols, found {}", body.len()),
            });
        }
        let total: u64 = sizes.iter().map(|&s| s as u64).sum();
        let level_of = |s: u64| -> Option<usize> {
            if s == 0 || s > total {
                return None;
            }
            let mut acc = 0u64;
            for (l, &size) in sizes.iter().enumerate() {
                acc += size as u64;
                if s <= acc {
                    return Some(l + 1);
                }
            }
            None
        };
        let head = head[0];
        let head_level = level_of(head).ok_or_else(|| GrammarError::Parse {
            line,
            message: format!("unknown symbol {head}"),
        })?;
        if head_level == sizes.len() {
            return Err(GrammarError::Level {
                line,
                symbol: head as SymbolId,
                declared: head_level,
                used: head_level - 1,
            });
        }
        for &b in &body {
            let declared = level_of(b).ok_or_else(|| GrammarError::Parse {
                line,
                message: format!("unknown symbol {b}"),
            })?;
            if declared != head_level + 1 {
                return Err(GrammarError::Level {
                    line,
                    symbol: b as SymbolId,
                    declared,
                    used: head_level + 1,
                });
            }
        }
        seen.insert(head);
        rules.push((head as SymbolId, body.into_iter().map(|b| b as SymbolId).collect()));
    }
    let sizes = sizes.ok_or(GrammarError::Parse {
        line: 0,
        message: "missing `cfg` header".into(),
    })?;
    Cfg::from_rules(sizes, rules)
}
