//! Prefix corruption and training-data perturbations.

use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::grammar::{Cfg, SymbolId};
use crate::rng::stream_rng;
use crate::sampler::Derivation;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PerturbError {
    #[error("{name} = {value} is outside [0, 1]")]
    Probability { name: &'static str, value: String },
    #[error("permutation is not a bijection on the level's symbols")]
    NotBijection,
    #[error("nt_deterministic perturbation needs a permutation")]
    MissingPermutation,
    #[error("unknown perturbation kind `{0}`")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbKind {
    TRandom,
    NtRandom,
    NtDeterministic,
}

impl PerturbKind {
    pub fn name(self) -> &'static str {
        match self {
            PerturbKind::TRandom => "t_random",
            PerturbKind::NtRandom => "nt_random",
            PerturbKind::NtDeterministic => "nt_deterministic",
        }
    }

    /// Per-element rate used for this kind in the reference experiments.
    pub fn default_rate(self) -> f64 {
        match self {
            PerturbKind::TRandom => 0.15,
            PerturbKind::NtRandom => 0.10,
            PerturbKind::NtDeterministic => 0.05,
        }
    }
}

impl fmt::Display for PerturbKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PerturbKind {
    type Err = PerturbError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "t_random" => Ok(PerturbKind::TRandom),
            "nt_random" => Ok(PerturbKind::NtRandom),
            "nt_deterministic" => Ok(PerturbKind::NtDeterministic),
            other => Err(PerturbError::UnknownKind(other.to_string())),
        }
    }
}

/// A bijection on the symbols of one level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    first: SymbolId,
    image: Vec<SymbolId>,
}

impl Permutation {
    /// `image[k]` is where the `k`-th symbol of `symbols` goes.
    pub fn new(symbols: std::ops::RangeInclusive<SymbolId>, image: Vec<SymbolId>) -> Result<Self, PerturbError> {
        let first = *symbols.start();
        let n = symbols.clone().count();
        if image.len() != n {
            return Err(PerturbError::NotBijection);
        }
        let mut seen = vec![false; n];
        for &s in &image {
            if !symbols.contains(&s) || std::mem::replace(&mut seen[(s - first) as usize], true) {
                return Err(PerturbError::NotBijection);
            }
        }
        Ok(Permutation { first, image })
    }

    pub fn identity(symbols: std::ops::RangeInclusive<SymbolId>) -> Self {
        Permutation {
            first: *symbols.start(),
            image: symbols.collect(),
        }
    }

    /// Each symbol to the next one, cyclically.
    pub fn next_symbol(symbols: std::ops::RangeInclusive<SymbolId>) -> Self {
        let mut image: Vec<SymbolId> = symbols.clone().collect();
        image.rotate_left(1);
        Permutation {
            first: *symbols.start(),
            image,
        }
    }

    pub fn random<R: Rng + ?Sized>(symbols: std::ops::RangeInclusive<SymbolId>, rng: &mut R) -> Self {
        let mut image: Vec<SymbolId> = symbols.clone().collect();
        image.shuffle(rng);
        Permutation {
            first: *symbols.start(),
            image,
        }
    }

    pub fn apply(&self, s: SymbolId) -> SymbolId {
        self.image[(s - self.first) as usize]
    }

    pub fn image(&self) -> &[SymbolId] {
        &self.image
    }

    pub fn is_derangement(&self) -> bool {
        self.image.iter().enumerate().all(|(k, &s)| s != self.first + k as SymbolId)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbConfig {
    pub rho: f64,
    pub gamma: f64,
    pub kind: PerturbKind,
    pub rate: f64,
    pub permutation: Option<Permutation>,
    pub seed: u64,
}

impl PerturbConfig {
    pub fn new(kind: PerturbKind, seed: u64) -> Self {
        PerturbConfig {
            rho: 0.15,
            gamma: 0.1,
            kind,
            rate: kind.default_rate(),
            permutation: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), PerturbError> {
        for (name, value) in [("rho", self.rho), ("gamma", self.gamma), ("rate", self.rate)] {
            check_probability(name, value)?;
        }
        if self.kind == PerturbKind::NtDeterministic && self.permutation.is_none() {
            return Err(PerturbError::MissingPermutation);
        }
        Ok(())
    }
}

fn check_probability(name: &'static str, value: f64) -> Result<(), PerturbError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(PerturbError::Probability {
            name,
            value: value.to_string(),
        })
    }
}

/// Returns the redrawn sequence and how many positions were selected.
fn redraw_terminals<R: Rng + ?Sized>(cfg: &Cfg, x: &[SymbolId], rate: f64, rng: &mut R) -> (Vec<SymbolId>, usize) {
    let terminals = cfg.terminals();
    let mut selected = 0;
    let y = x
        .iter()
        .map(|&t| {
            if rng.random_bool(rate) {
                selected += 1;
                rng.random_range(terminals.clone())
            } else {
                t
            }
        })
        .collect();
    (y, selected)
}

/// The first `cut` symbols of `x`, each independently replaced w.p. `rho`
/// by a uniform terminal (possibly the original one).
pub fn corrupt_prefix<R: Rng + ?Sized>(cfg: &Cfg, x: &[SymbolId], cut: usize, rho: f64, rng: &mut R) -> Vec<SymbolId> {
    redraw_terminals(cfg, &x[..cut.min(x.len())], rho, rng).0
}

/// Replaces each terminal w.p. `rate` by a uniform terminal.
pub fn perturb_t_level<R: Rng + ?Sized>(cfg: &Cfg, x: &[SymbolId], rate: f64, rng: &mut R) -> Vec<SymbolId> {
    redraw_terminals(cfg, x, rate, rng).0
}

#[derive(Debug, Clone, Copy)]
pub enum NtMode<'a> {
    Random,
    Deterministic(&'a Permutation),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NtPerturbation {
    /// The level-(L−1) sequence after perturbation.
    pub symbols: Vec<SymbolId>,
    pub terminals: Vec<SymbolId>,
    pub changed: usize,
}

/// Perturbs each level-(L−1) ancestor w.p. `rate`, then rewrites the whole
/// level-(L−1) sequence into terminals with fresh uniform rule choices.
pub fn perturb_nt_level<R: Rng + ?Sized>(
    cfg: &Cfg,
    d: &Derivation,
    rate: f64,
    mode: NtMode<'_>,
    rng: &mut R,
) -> NtPerturbation {
    let level = cfg.depth() - 1;
    let pool = cfg.symbols(level);
    let mut changed = 0;
    let symbols: Vec<SymbolId> = d
        .level(level)
        .iter()
        .map(|&s| {
            if !rng.random_bool(rate) {
                return s;
            }
            let t = match mode {
                NtMode::Random => rng.random_range(pool.clone()),
                NtMode::Deterministic(pi) => pi.apply(s),
            };
            changed += usize::from(t != s);
            t
        })
        .collect();
    let mut terminals = Vec::with_capacity(symbols.len() * 3);
    for &s in &symbols {
        let rules = cfg.rules(s);
        terminals.extend_from_slice(&rules[rng.random_range(0..rules.len())].body);
    }
    NtPerturbation {
        symbols,
        terminals,
        changed,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Flagged<T> {
    pub item: T,
    pub perturbed: bool,
}

/// Perturbs exactly `round(gamma · N)` items chosen uniformly without
/// replacement. The selection draws from stream `u64::MAX` of `seed` and
/// item `i` from stream `i`, so results are independent of scheduling.
pub fn apply_fraction<T, F>(items: Vec<T>, gamma: f64, seed: u64, perturb: F) -> Result<Vec<Flagged<T>>, PerturbError>
where
    T: Send,
    F: Fn(T, &mut crate::rng::RandomSource) -> T + Sync,
{
    check_probability("gamma", gamma)?;
    let n = items.len();
    let k = ((gamma * n as f64).round() as usize).min(n);
    let mut flags = vec![false; n];
    for i in index::sample(&mut stream_rng(seed, u64::MAX), n, k) {
        flags[i] = true;
    }
    Ok(items
        .into_par_iter()
        .zip(flags.into_par_iter())
        .enumerate()
        .map(|(i, (item, flag))| {
            if flag {
                Flagged {
                    item: perturb(item, &mut stream_rng(seed, i as u64)),
                    perturbed: true,
                }
            } else {
                Flagged { item, perturbed: false }
            }
        })
        .collect())
}
