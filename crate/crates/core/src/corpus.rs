//! Fixed-window training corpora.
//!
//! Every sample becomes `BOS x EOS`; samples are concatenated in order, the
//! first `offset` tokens of the stream are dropped, and the rest is cut into
//! consecutive windows. A trailing partial window is discarded.
//!
//! Binary layout (little-endian): magic `CFGC`, `u32` version (1), `u32`
//! window length, `u32` window count, `u32` vocabulary size, then every window
//! as `u16` token ids. BOS and EOS are the two ids directly above the largest
//! terminal id, so the vocabulary size is `max_terminal + 3`.

use rand::Rng;
use thiserror::Error;

use crate::grammar::{Cfg, SymbolId};

pub const CORPUS_MAGIC: &[u8; 4] = b"CFGC";
pub const CORPUS_VERSION: u32 = 1;
pub const DEFAULT_WINDOW: usize = 512;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CorpusError {
    #[error("corpus format error: {0}")]
    Format(String),
    #[error("window length must be at least 2, got {0}")]
    Window(usize),
    #[error("token {0} is not a terminal of the grammar or does not fit in 16 bits")]
    Token(SymbolId),
}

/// Reserved ids for a grammar's terminal vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenMap {
    pub bos: u16,
    pub eos: u16,
    pub vocab_size: u32,
}

impl TokenMap {
    pub fn for_grammar(cfg: &Cfg) -> Result<Self, CorpusError> {
        let max = *cfg.terminals().end();
        if max + 2 > u16::MAX as u32 {
            return Err(CorpusError::Token(max));
        }
        Ok(Self::from_vocab_size(max + 3))
    }

    pub fn from_vocab_size(vocab_size: u32) -> Self {
        TokenMap {
            bos: (vocab_size - 2) as u16,
            eos: (vocab_size - 1) as u16,
            vocab_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedCorpus {
    pub window_length: usize,
    pub vocab_size: u32,
    pub windows: Vec<Vec<u16>>,
}

impl PackedCorpus {
    pub fn tokens(&self) -> TokenMap {
        TokenMap::from_vocab_size(self.vocab_size)
    }
}

/// Bookkeeping of one packing run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PackStats {
    pub offset: usize,
    pub stream_tokens: usize,
    pub dropped_tail: usize,
}

/// Packs with a uniformly random cut offset in `[0, window_length)`.
pub fn pack_corpus<R: Rng + ?Sized>(
    cfg: &Cfg,
    samples: &[Vec<SymbolId>],
    window_length: usize,
    rng: &mut R,
) -> Result<(PackedCorpus, PackStats), CorpusError> {
    if window_length < 2 {
        return Err(CorpusError::Window(window_length));
    }
    let offset = rng.random_range(0..window_length);
    pack_corpus_at(cfg, samples, window_length, offset)
}

pub fn pack_corpus_at(
    cfg: &Cfg,
    samples: &[Vec<SymbolId>],
    window_length: usize,
    offset: usize,
) -> Result<(PackedCorpus, PackStats), CorpusError> {
    if window_length < 2 {
        return Err(CorpusError::Window(window_length));
    }
    let map = TokenMap::for_grammar(cfg)?;
    let mut stream: Vec<u16> = Vec::with_capacity(samples.iter().map(|s| s.len() + 2).sum());
    for sample in samples {
        stream.push(map.bos);
        for &t in sample {
            if !cfg.is_terminal(t) {
                return Err(CorpusError::Token(t));
            }
            stream.push(t as u16);
        }
        stream.push(map.eos);
    }
    let stream_tokens = stream.len();
    let body = stream.get(offset..).unwrap_or(&[]);
    let windows: Vec<Vec<u16>> = body.chunks_exact(window_length).map(<[u16]>::to_vec).collect();
    let dropped_tail = body.len() % window_length;
    Ok((
        PackedCorpus {
            window_length,
            vocab_size: map.vocab_size,
            windows,
        },
        PackStats {
            offset,
            stream_tokens,
            dropped_tail,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnpackedSample {
    pub tokens: Vec<SymbolId>,
    /// The sample lost its BOS or EOS to the stream boundaries.
    pub partial: bool,
}

/// Splits the concatenated windows back into samples.
pub fn unpack_stream(corpus: &PackedCorpus) -> Result<Vec<UnpackedSample>, CorpusError> {
    let map = corpus.tokens();
    let mut out = Vec::new();
    // (tokens, saw BOS)
    let mut current: Option<(Vec<SymbolId>, bool)> = None;
    for &tok in corpus.windows.iter().flatten() {
        if tok == map.bos {
            if let Some((tokens, _)) = current.take() {
                out.push(UnpackedSample { tokens, partial: true });
            }
            current = Some((Vec::new(), true));
        } else if tok == map.eos {
            let (tokens, opened) = current.take().unwrap_or((Vec::new(), false));
            out.push(UnpackedSample {
                tokens,
                partial: !opened,
            });
        } else if tok == 0 || u32::from(tok) >= map.vocab_size {
            return Err(CorpusError::Format(format!("token id {tok} is outside the vocabulary")));
        } else {
            current.get_or_insert_with(|| (Vec::new(), false)).0.push(u32::from(tok));
        }
    }
    if let Some((tokens, _)) = current {
        out.push(UnpackedSample { tokens, partial: true });
    }
    Ok(out)
}

pub fn write_corpus(corpus: &PackedCorpus) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + corpus.windows.len() * corpus.window_length * 2);
    out.extend_from_slice(CORPUS_MAGIC);
    out.extend_from_slice(&CORPUS_VERSION.to_le_bytes());
    out.extend_from_slice(&(corpus.window_length as u32).to_le_bytes());
    out.extend_from_slice(&(corpus.windows.len() as u32).to_le_bytes());
    out.extend_from_slice(&corpus.vocab_size.to_le_bytes());
    for w in &corpus.windows {
        for t in w {
            out.extend_from_slice(&t.to_le_bytes());
        }
    }
    out
}

pub fn read_corpus(bytes: &[u8]) -> Result<PackedCorpus, CorpusError> {
    let fail = |m: &str| CorpusError::Format(m.to_string());
    if bytes.len() < 20 {
        return Err(fail("truncated header"));
    }
    if &bytes[..4] != CORPUS_MAGIC {
        return Err(fail("bad magic"));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[4 * k..4 * k + 4].try_into().unwrap());
    if word(1) != CORPUS_VERSION {
        return Err(fail("unsupported version"));
    }
    let window_length = word(2) as usize;
    let count = word(3) as usize;
    let vocab_size = word(4);
    if window_length < 2 {
        return Err(CorpusError::Window(window_length));
    }
    if vocab_size < 3 {
        return Err(fail("vocabulary too small"));
    }
    let body = &bytes[20..];
    if body.len() != count * window_length * 2 {
        return Err(fail("body length does not match the header"));
    }
    let tokens: Vec<u16> = body
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    if let Some(t) = tokens.iter().find(|&&t| u32::from(t) >= vocab_size) {
        return Err(CorpusError::Format(format!("token id {t} is outside the vocabulary")));
    }
    Ok(PackedCorpus {
        window_length,
        vocab_size,
        windows: tokens.chunks_exact(window_length).map(<[u16]>::to_vec).collect(),
    })
}
