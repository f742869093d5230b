//! Annotated sampling from a leveled grammar.
//!
//! Expansion is breadth-first: the whole sequence of level ℓ is rewritten
//! before level ℓ + 1, each symbol choosing one of its rules uniformly.

mod derivation;
pub mod file;

use rand::Rng;
use rayon::prelude::*;

use crate::grammar::{Cfg, SymbolId};
use crate::rng::stream_rng;

pub use derivation::{boundaries, boundaries_from_indices, BoundaryProfile, Derivation, DerivationError};

/// Samples one string with its derivation annotations.
pub fn sample_derivation<R: Rng + ?Sized>(cfg: &Cfg, rng: &mut R) -> Derivation {
    let depth = cfg.depth();
    let mut levels: Vec<Vec<SymbolId>> = Vec::with_capacity(depth);
    let mut parents: Vec<Vec<usize>> = Vec::with_capacity(depth);
    levels.push(vec![cfg.root()]);
    parents.push(Vec::new());
    for l in 1..depth {
        let above = &levels[l - 1];
        let mut row = Vec::with_capacity(above.len() * 3);
        let mut par = Vec::with_capacity(above.len() * 3);
        for (k, &symbol) in above.iter().enumerate() {
            let rules = cfg.rules(symbol);
            let rule = &rules[rng.random_range(0..rules.len())];
            row.extend_from_slice(&rule.body);
            par.extend(std::iter::repeat_n(k, rule.body.len()));
        }
        levels.push(row);
        parents.push(par);
    }
    Derivation::from_levels(levels, parents).expect("sampled derivations are consistent")
}

/// Samples `count` derivations, item `i` drawing from stream `i` of `seed`.
/// Output order is the item order whatever the thread count.
pub fn sample_corpus(cfg: &Cfg, seed: u64, count: usize) -> Vec<Derivation> {
    (0..count)
        .into_par_iter()
        .map(|i| sample_derivation(cfg, &mut stream_rng(seed, i as u64)))
        .collect()
}

/// Exact `(min, max)` terminal-string length derivable from every symbol,
/// indexed by symbol id (slot 0 unused). Saturates instead of overflowing.
pub fn symbol_length_bounds(cfg: &Cfg) -> Vec<(usize, usize)> {
    let mut bounds = vec![(0usize, 0usize); cfg.num_symbols() + 1];
    for t in cfg.terminals() {
        bounds[t as usize] = (1, 1);
    }
    for level in (1..cfg.depth()).rev() {
        for a in cfg.symbols(level) {
            let mut lo = usize::MAX;
            let mut hi = 0usize;
            for rule in cfg.rules(a) {
                let (rlo, rhi) = rule.body.iter().fold((0usize, 0usize), |(x, y), &b| {
                    let (blo, bhi) = bounds[b as usize];
                    (x.saturating_add(blo), y.saturating_add(bhi))
                });
                lo = lo.min(rlo);
                hi = hi.max(rhi);
            }
            bounds[a as usize] = (if lo == usize::MAX { 0 } else { lo }, hi);
        }
    }
    bounds
}

/// Exact minimum and maximum length of the strings of `L(cfg)`.
pub fn string_length_bounds(cfg: &Cfg) -> (usize, usize) {
    symbol_length_bounds(cfg)[cfg.root() as usize]
}
