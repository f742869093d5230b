//! Line-oriented annotated-sample files.
//!
//! One block per sample, blocks separated by blank lines:
//!
//! ```text
//! sample 0 grammar 3f1c…
//! x: 4 4 5 5
//! p1: 0 0 0 0
//! s1: 1 1 1 1
//! p2: 0 0 1 1
//! s2: 2 2 3 3
//! p3: 0 1 2 3
//! s3: 4 4 5 5
//! b: 3 2 3 1
//! ```
//!
//! Indices are 0-based. A block may carry a `perturbed: 0|1` line; perturbed
//! blocks usually carry only `x:` because their strings have no derivation.
//! Files holding one whitespace-separated token sequence per line are also
//! accepted by [`read_sequences`].

use std::fmt::Write as _;

use thiserror::Error;

use super::{boundaries, Derivation};
use crate::grammar::SymbolId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SampleFileError {
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedSample {
    pub index: usize,
    pub grammar_hash: String,
    pub tokens: Vec<SymbolId>,
    pub derivation: Option<Derivation>,
    pub perturbed: Option<bool>,
}

impl AnnotatedSample {
    pub fn from_derivation(index: usize, grammar_hash: &str, derivation: Derivation) -> Self {
        AnnotatedSample {
            index,
            grammar_hash: grammar_hash.to_string(),
            tokens: derivation.terminals().to_vec(),
            derivation: Some(derivation),
            perturbed: None,
        }
    }
}

fn join<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn write_annotated(samples: &[AnnotatedSample]) -> String {
    let mut out = String::new();
    for (k, s) in samples.iter().enumerate() {
        if k > 0 {
            out.push('\n');
        }
        writeln!(out, "sample {} grammar {}", s.index, s.grammar_hash).unwrap();
        writeln!(out, "x: {}", join(&s.tokens)).unwrap();
        if let Some(d) = &s.derivation {
            for level in 1..=d.depth() {
                writeln!(out, "p{level}: {}", join(d.ancestor_indices(level))).unwrap();
                writeln!(out, "s{level}: {}", join(d.ancestor_symbols(level))).unwrap();
            }
            if let Ok(b) = boundaries(d) {
                writeln!(out, "b: {}", join(b.deepest_all())).unwrap();
            }
        }
        if let Some(p) = s.perturbed {
            writeln!(out, "perturbed: {}", u8::from(p)).unwrap();
        }
    }
    out
}

fn numbers<T: std::str::FromStr>(line: usize, text: &str) -> Result<Vec<T>, SampleFileError> {
    text.split_whitespace()
        .map(|t| {
            t.parse().map_err(|_| SampleFileError::Format {
                line,
                message: format!("expected an integer, found `{t}`"),
            })
        })
        .collect()
}

#[derive(Default)]
struct Block {
    start: usize,
    header: Option<(usize, String)>,
    x: Option<Vec<SymbolId>>,
    p: Vec<(usize, Vec<usize>)>,
    s: Vec<(usize, Vec<SymbolId>)>,
    b: Option<Vec<usize>>,
    perturbed: Option<bool>,
}

impl Block {
    fn finish(self) -> Result<AnnotatedSample, SampleFileError> {
        let err = |message: String| SampleFileError::Format {
            line: self.start,
            message,
        };
        let (index, grammar_hash) = self.header.clone().ok_or_else(|| err("missing `sample` header".into()))?;
        let tokens = self.x.clone().ok_or_else(|| err("missing `x:` line".into()))?;
        let derivation = if self.p.is_empty() && self.s.is_empty() {
            None
        } else {
            let depth = self.p.len();
            if self.s.len() != depth
                || self.p.iter().enumerate().any(|(i, (l, _))| *l != i + 1)
                || self.s.iter().enumerate().any(|(i, (l, _))| *l != i + 1)
            {
                return Err(err("annotation levels must run p1/s1 … pL/sL".into()));
            }
            let d = Derivation::from_annotations(
                self.p.iter().map(|(_, r)| r.clone()).collect(),
                self.s.iter().map(|(_, r)| r.clone()).collect(),
            )
            .map_err(|e| err(e.to_string()))?;
            if d.terminals() != tokens.as_slice() {
                return Err(err("`x:` disagrees with the terminal-level symbols".into()));
            }
            if let Some(b) = &self.b {
                let computed = boundaries(&d).map_err(|e| err(e.to_string()))?;
                if computed.deepest_all() != b.as_slice() {
                    return Err(err("`b:` disagrees with the ancestor indices".into()));
                }
            }
            Some(d)
        };
        Ok(AnnotatedSample {
            index,
            grammar_hash,
            tokens,
            derivation,
            perturbed: self.perturbed,
        })
    }
}

pub fn read_annotated(text: &str) -> Result<Vec<AnnotatedSample>, SampleFileError> {
    let mut out = Vec::new();
    let mut block: Option<Block> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.trim();
        if content.is_empty() {
            if let Some(b) = block.take() {
                out.push(b.finish()?);
            }
            continue;
        }
        let fail = |message: String| SampleFileError::Format { line, message };
        if let Some(rest) = content.strip_prefix("sample ") {
            if let Some(b) = block.take() {
                out.push(b.finish()?);
            }
            let mut parts = rest.split_whitespace();
            let index = parts
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| fail("bad sample index".into()))?;
            let hash = match (parts.next(), parts.next()) {
                (Some("grammar"), Some(h)) => h.to_string(),
                _ => return Err(fail("expected `sample <index> grammar <hash>`".into())),
            };
            block = Some(Block {
                start: line,
                header: Some((index, hash)),
                ..Block::default()
            });
            continue;
        }
        let b = block.as_mut().ok_or_else(|| fail("record line outside a sample block".into()))?;
        let (key, value) = content
            .split_once(':')
            .ok_or_else(|| fail(format!("unrecognized line `{content}`")))?;
        match key {
            "x" => b.x = Some(numbers(line, value)?),
            "b" => b.b = Some(numbers(line, value)?),
            "perturbed" => {
                b.perturbed = Some(match value.trim() {
                    "0" => false,
                    "1" => true,
                    _ => return Err(fail("perturbed flag must be 0 or 1".into())),
                })
            }
            k if k.starts_with('p') || k.starts_with('s') => {
                let level: usize = k[1..].parse().map_err(|_| fail(format!("bad key `{k}`")))?;
                if k.starts_with('p') {
                    b.p.push((level, numbers(line, value)?));
                } else {
                    b.s.push((level, numbers(line, value)?));
                }
            }
            other => return Err(fail(format!("unknown key `{other}`"))),
        }
    }
    if let Some(b) = block.take() {
        out.push(b.finish()?);
    }
    Ok(out)
}

/// Token sequences from either an annotated-sample file or a plain file with
/// one sequence per line.
pub fn read_sequences(text: &str) -> Result<Vec<Vec<SymbolId>>, SampleFileError> {
    let annotated = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .is_some_and(|l| l.starts_with("sample "));
    if annotated {
        return Ok(read_annotated(text)?.into_iter().map(|s| s.tokens).collect());
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| numbers(i + 1, l))
        .collect()
}

pub fn write_sequences(sequences: &[Vec<SymbolId>]) -> String {
    let mut out = String::new();
    for s in sequences {
        out.push_str(&join(s));
        out.push('\n');
    }
    out
}
