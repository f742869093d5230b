//! Implicit grammars: each terminal is a bag of observable tokens.
//!
//! A string of observable tokens belongs to the implicit language when some
//! choice of terminals, one per position with the token in that terminal's
//! bag, is a string of the base grammar.

use std::fmt::Write as _;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::grammar::{Cfg, SymbolId};
use crate::parser::Chart;

pub type TokenId = u32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ImplicitError {
    #[error("disjoint bags need at least {terminals} observable tokens, got {tokens}")]
    InfeasibleSpec { terminals: usize, tokens: usize },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("terminal {terminal}: {message}")]
    InvalidBag { terminal: SymbolId, message: String },
    #[error("expected {expected} embedding rows, got {found}")]
    Shape { expected: usize, found: usize },
}

/// Construction parameters for [`build_observable_vocab`].
#[derive(Debug, Clone, PartialEq)]
pub struct VocabSpec {
    pub tokens: usize,
    pub disjoint: bool,
    pub uniform: bool,
    /// Expected extra bag mass when bags overlap: each token joins each bag
    /// with probability `(1 + overlap) / |T|`.
    pub overlap: f64,
}

impl VocabSpec {
    pub fn new(tokens: usize, disjoint: bool, uniform: bool) -> Self {
        VocabSpec {
            tokens,
            disjoint,
            uniform,
            overlap: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservableVocab {
    tokens: usize,
    first_terminal: SymbolId,
    bags: Vec<Vec<TokenId>>,
    weights: Vec<Vec<f64>>,
}

impl ObservableVocab {
    /// Checks bags against the grammar's terminals. `weights` of `None` means
    /// uniform over each bag.
    pub fn new(
        cfg: &Cfg,
        tokens: usize,
        bags: Vec<Vec<TokenId>>,
        weights: Option<Vec<Vec<f64>>>,
    ) -> Result<Self, ImplicitError> {
        let first_terminal = *cfg.terminals().start();
        let count = cfg.terminals().count();
        if bags.len() != count {
            return Err(ImplicitError::InvalidBag {
                terminal: first_terminal + bags.len() as SymbolId,
                message: format!("expected {count} bags, got {}", bags.len()),
            });
        }
        let weights = weights.unwrap_or_else(|| bags.iter().map(|b| vec![1.0 / b.len() as f64; b.len()]).collect());
        for (k, (bag, w)) in bags.iter().zip(&weights).enumerate() {
            let terminal = first_terminal + k as SymbolId;
            let bad = |message: &str| ImplicitError::InvalidBag {
                terminal,
                message: message.to_string(),
            };
            if bag.is_empty() {
                return Err(bad("empty bag"));
            }
            if bag.iter().any(|&t| t as usize >= tokens) {
                return Err(bad("token outside the observable range"));
            }
            let mut sorted = bag.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != bag.len() {
                return Err(bad("repeated token"));
            }
            if w.len() != bag.len() || w.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
                return Err(bad("weights must be positive, one per token"));
            }
            if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(bad("weights must sum to 1"));
            }
        }
        if weights.len() != bags.len() {
            return Err(ImplicitError::InvalidBag {
                terminal: first_terminal,
                message: "one weight row per bag".into(),
            });
        }
        Ok(ObservableVocab {
            tokens,
            first_terminal,
            bags,
            weights,
        })
    }

    pub fn num_tokens(&self) -> usize {
        self.tokens
    }

    pub fn bag(&self, terminal: SymbolId) -> &[TokenId] {
        &self.bags[(terminal - self.first_terminal) as usize]
    }

    pub fn weights(&self, terminal: SymbolId) -> &[f64] {
        &self.weights[(terminal - self.first_terminal) as usize]
    }

    pub fn terminals(&self) -> impl Iterator<Item = SymbolId> + '_ {
        (0..self.bags.len()).map(|k| self.first_terminal + k as SymbolId)
    }

    pub fn is_uniform(&self) -> bool {
        self.weights
            .iter()
            .all(|w| w.iter().all(|&p| (p - 1.0 / w.len() as f64).abs() < 1e-12))
    }

    /// For each token, the membership bit per terminal (terminal order).
    pub fn labels(&self) -> Vec<BagLabel> {
        let mut labels = vec![BagLabel(vec![false; self.bags.len()]); self.tokens];
        for (k, bag) in self.bags.iter().enumerate() {
            for &t in bag {
                labels[t as usize].0[k] = true;
            }
        }
        labels
    }

    /// `bag <t>: …` and `weights <t>: …` lines under a `tokens <N>` header.
    pub fn to_text(&self) -> String {
        let mut out = format!("tokens {}\n", self.tokens);
        let uniform = self.is_uniform();
        for t in self.terminals() {
            let ids: Vec<String> = self.bag(t).iter().map(|x| x.to_string()).collect();
            writeln!(out, "bag {t}: {}", ids.join(" ")).unwrap();
            if !uniform {
                let ws: Vec<String> = self.weights(t).iter().map(|x| format!("{x:?}")).collect();
                writeln!(out, "weights {t}: {}", ws.join(" ")).unwrap();
            }
        }
        out
    }

    pub fn from_text(cfg: &Cfg, text: &str) -> Result<Self, ImplicitError> {
        let first = *cfg.terminals().start();
        let count = cfg.terminals().count();
        let mut tokens: Option<usize> = None;
        let mut bags: Vec<Option<Vec<TokenId>>> = vec![None; count];
        let mut weights: Vec<Option<Vec<f64>>> = vec![None; count];
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let fail = |message: String| ImplicitError::Format { line, message };
            if let Some(n) = content.strip_prefix("tokens ") {
                tokens = Some(n.trim().parse().map_err(|_| fail("bad token count".into()))?);
                continue;
            }
            let (head, values) = content.split_once(':').ok_or_else(|| fail(format!("unrecognized line `{content}`")))?;
            let mut words = head.split_whitespace();
            let (kind, terminal) = match (words.next(), words.next().and_then(|t| t.parse::<SymbolId>().ok()), words.next()) {
                (Some(k @ ("bag" | "weights")), Some(t), None) => (k, t),
                _ => return Err(fail("expected `bag <t>:` or `weights <t>:`".into())),
            };
            if !cfg.is_terminal(terminal) {
                return Err(fail(format!("{terminal} is not a terminal")));
            }
            let k = (terminal - first) as usize;
            let slot_taken = if kind == "bag" {
                let ids = values
                    .split_whitespace()
                    .map(|v| v.parse().map_err(|_| fail(format!("bad token `{v}`"))))
                    .collect::<Result<Vec<TokenId>, _>>()?;
                bags[k].replace(ids).is_some()
            } else {
                let ws = values
                    .split_whitespace()
                    .map(|v| v.parse().map_err(|_| fail(format!("bad weight `{v}`"))))
                    .collect::<Result<Vec<f64>, _>>()?;
                weights[k].replace(ws).is_some()
            };
            if slot_taken {
                return Err(fail(format!("duplicate `{kind} {terminal}`")));
            }
        }
        let bags = bags
            .into_iter()
            .enumerate()
            .map(|(k, b)| {
                b.ok_or(ImplicitError::InvalidBag {
                    terminal: first + k as SymbolId,
                    message: "missing bag".into(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let tokens = tokens.unwrap_or_else(|| bags.iter().flatten().map(|&t| t as usize + 1).max().unwrap_or(0));
        let weights = if weights.iter().all(Option::is_none) {
            None
        } else {
            Some(
                weights
                    .into_iter()
                    .zip(&bags)
                    .map(|(w, b)| w.unwrap_or_else(|| vec![1.0 / b.len() as f64; b.len()]))
                    .collect(),
            )
        };
        ObservableVocab::new(cfg, tokens, bags, weights)
    }
}

/// Membership pattern of one observable token across the terminals.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BagLabel(pub Vec<bool>);

impl BagLabel {
    pub fn popcount(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    fn set_bits(&self) -> Vec<usize> {
        self.0.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
    }

    /// Fewer terminals first, then by the positions of the set bits, so
    /// `100, 010, 001, 110, 101, 011, 111`.
    pub fn group_order(&self, other: &Self) -> std::cmp::Ordering {
        self.popcount()
            .cmp(&other.popcount())
            .then_with(|| self.set_bits().cmp(&other.set_bits()))
    }
}

impl std::fmt::Display for BagLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

fn zipf_weights(len: usize) -> Vec<f64> {
    let raw: Vec<f64> = (1..=len).map(|k| 1.0 / k as f64).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

pub fn build_observable_vocab<R: Rng + ?Sized>(cfg: &Cfg, spec: &VocabSpec, rng: &mut R) -> Result<ObservableVocab, ImplicitError> {
    let terminals = cfg.terminals().count();
    if spec.tokens == 0 || (spec.disjoint && spec.tokens < terminals) {
        return Err(ImplicitError::InfeasibleSpec {
            terminals,
            tokens: spec.tokens,
        });
    }
    let mut bags: Vec<Vec<TokenId>> = vec![Vec::new(); terminals];
    if spec.disjoint {
        let mut order: Vec<TokenId> = (0..spec.tokens as TokenId).collect();
        order.shuffle(rng);
        for (k, bag) in bags.iter_mut().enumerate() {
            let lo = k * spec.tokens / terminals;
            let hi = (k + 1) * spec.tokens / terminals;
            bag.extend_from_slice(&order[lo..hi]);
        }
    } else {
        let p = ((1.0 + spec.overlap) / terminals as f64).clamp(0.0, 1.0);
        for t in 0..spec.tokens as TokenId {
            for bag in bags.iter_mut() {
                if rng.random_bool(p) {
                    bag.push(t);
                }
            }
        }
        for bag in bags.iter_mut().filter(|b| b.is_empty()) {
            bag.push(rng.random_range(0..spec.tokens as TokenId));
        }
    }
    for bag in bags.iter_mut() {
        bag.sort_unstable();
    }
    let weights = if spec.uniform {
        None
    } else {
        Some(
            bags.iter_mut()
                .map(|bag| {
                    bag.shuffle(rng);
                    zipf_weights(bag.len())
                })
                .collect(),
        )
    };
    ObservableVocab::new(cfg, spec.tokens, bags, weights)
}

/// Draws `y_i` from the bag distribution of `x_i`, independently per position.
pub fn sample_observable<R: Rng + ?Sized>(x: &[SymbolId], vocab: &ObservableVocab, rng: &mut R) -> Vec<TokenId> {
    x.iter()
        .map(|&t| {
            let bag = vocab.bag(t);
            let dist = WeightedIndex::new(vocab.weights(t)).expect("validated weights");
            bag[dist.sample(rng)]
        })
        .collect()
}

/// Whether some bag-consistent terminal reading of `y` is in `L(cfg)`.
/// Tokens outside every bag make the answer false.
pub fn membership_observable(cfg: &Cfg, vocab: &ObservableVocab, y: &[TokenId]) -> bool {
    if y.is_empty() {
        return false;
    }
    let labels = vocab.labels();
    let first = *cfg.terminals().start();
    let mut readings: Vec<&[bool]> = Vec::with_capacity(y.len());
    for &tok in y {
        match labels.get(tok as usize) {
            Some(l) if l.popcount() > 0 => readings.push(&l.0),
            _ => return false,
        }
    }
    let chart = Chart::build(cfg, y.len(), |i, t| readings[i][(t - first) as usize]);
    chart.cell(cfg.root(), 0, y.len() - 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelGroup {
    pub label: BagLabel,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    /// Token id of each row/column.
    pub order: Vec<TokenId>,
    pub values: Vec<Vec<f64>>,
    pub groups: Vec<LabelGroup>,
    /// Tokens whose centered embedding is zero; their similarities are 0.
    pub degenerate: Vec<TokenId>,
    /// Tokens in no bag, left out of the matrix.
    pub unlabeled: Vec<TokenId>,
}

impl CorrelationMatrix {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("token_row,label_row,token_col,label_col,similarity\n");
        let label_of = |k: usize| {
            self.groups
                .iter()
                .find(|g| (g.start..g.end).contains(&k))
                .map(|g| g.label.to_string())
                .unwrap_or_default()
        };
        for (a, row) in self.values.iter().enumerate() {
            for (b, v) in row.iter().enumerate() {
                writeln!(out, "{},{},{},{},{v}", self.order[a], label_of(a), self.order[b], label_of(b)).unwrap();
            }
        }
        out
    }
}

/// Cosine similarity between mean-centered embedding rows, ordered so that
/// tokens sharing a label pattern are contiguous.
pub fn embedding_correlation(rows: &[Vec<f64>], labels: &[BagLabel]) -> Result<CorrelationMatrix, ImplicitError> {
    if rows.len() != labels.len() {
        return Err(ImplicitError::Shape {
            expected: labels.len(),
            found: rows.len(),
        });
    }
    let mut order: Vec<TokenId> = (0..rows.len() as TokenId).filter(|&t| labels[t as usize].popcount() > 0).collect();
    let unlabeled: Vec<TokenId> = (0..rows.len() as TokenId).filter(|&t| labels[t as usize].popcount() == 0).collect();
    order.sort_by(|&a, &b| labels[a as usize].group_order(&labels[b as usize]).then(a.cmp(&b)));

    let centered: Vec<Option<Vec<f64>>> = order
        .iter()
        .map(|&t| {
            let row = &rows[t as usize];
            let mean = row.iter().sum::<f64>() / row.len().max(1) as f64;
            let c: Vec<f64> = row.iter().map(|v| v - mean).collect();
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            (norm > 1e-12).then(|| c.into_iter().map(|v| v / norm).collect())
        })
        .collect();
    let degenerate: Vec<TokenId> = order
        .iter()
        .zip(&centered)
        .filter(|(_, c)| c.is_none())
        .map(|(&t, _)| t)
        .collect();
    let values: Vec<Vec<f64>> = centered
        .iter()
        .map(|a| {
            centered
                .iter()
                .map(|b| match (a, b) {
                    (Some(a), Some(b)) => a.iter().zip(b).map(|(x, y)| x * y).sum(),
                    _ => 0.0,
                })
                .collect()
        })
        .collect();

    let mut groups: Vec<LabelGroup> = Vec::new();
    for (k, &t) in order.iter().enumerate() {
        let label = &labels[t as usize];
        match groups.last_mut() {
            Some(g) if &g.label == label => g.end = k + 1,
            _ => groups.push(LabelGroup {
                label: label.clone(),
                start: k,
                end: k + 1,
            }),
        }
    }
    Ok(CorrelationMatrix {
        order,
        values,
        groups,
        degenerate,
        unlabeled,
    })
}
