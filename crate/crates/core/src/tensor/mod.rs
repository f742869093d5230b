//! Binary interchange format for hidden states and attention matrices.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "CFGT"  version:u32  grammar_hash:[u8; 32]
//! sequences:u32  layers:u32  heads:u32  dim:u32  max_len:u32
//! per sequence:
//!     n:u32  tokens:[u32; n]
//!     hidden:[f32; layers * n * dim]                 [layer][position][dim]
//!     attention:[f32; layers * heads * n(n+1)/2]     [layer][head][query j][key i ≤ j]
//! ```
//!
//! Attention is stored as packed lower triangles; entries above the diagonal
//! are implicitly zero.

mod fixture;

use rayon::prelude::*;
use thiserror::Error;

pub use fixture::{
    fixture_from_derivations, planted_dim, synthesize_fixture, AttentionProfile, LOCAL_WINDOW, Fixture, FixtureSpec, HiddenProfile,
};

pub const DUMP_MAGIC: &[u8; 4] = b"CFGT";
pub const DUMP_VERSION: u32 = 1;
pub const ROW_SUM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DumpError {
    #[error("format error: {0}")]
    Format(String),
    #[error("sequence {sequence} layer {layer} head {head} row {row}: attention sums to {sum}")]
    Stochasticity {
        sequence: usize,
        layer: usize,
        head: usize,
        row: usize,
        sum: f64,
    },
    #[error("sequence {sequence}: non-finite value in the {block} block")]
    NonFinite { sequence: usize, block: &'static str },
    #[error("dump was made for grammar {found}, expected {expected}")]
    HashMismatch { expected: String, found: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DumpHeader {
    pub grammar_hash: [u8; 32],
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub max_len: usize,
}

impl DumpHeader {
    pub fn grammar_hash_hex(&self) -> String {
        hex::encode(self.grammar_hash)
    }

    /// Errors unless the dump was produced for the grammar with this hash.
    pub fn check_grammar(&self, expected: &[u8; 32]) -> Result<(), DumpError> {
        if &self.grammar_hash == expected {
            Ok(())
        } else {
            Err(DumpError::HashMismatch {
                expected: hex::encode(expected),
                found: self.grammar_hash_hex(),
            })
        }
    }
}

fn triangle(n: usize) -> usize {
    n * (n + 1) / 2
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDump {
    pub tokens: Vec<u32>,
    /// `[layer][position][dim]`
    pub hidden: Vec<f32>,
    /// `[layer][head][j][i ≤ j]`
    pub attention: Vec<f32>,
}

impl SequenceDump {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn hidden_row(&self, header: &DumpHeader, layer: usize, position: usize) -> &[f32] {
        let start = (layer * self.len() + position) * header.dim;
        &self.hidden[start..start + header.dim]
    }

    /// Weights of query `j` over keys `0..=j`.
    pub fn attention_row(&self, header: &DumpHeader, layer: usize, head: usize, j: usize) -> &[f32] {
        let block = (layer * header.heads + head) * triangle(self.len());
        let start = block + triangle(j);
        &self.attention[start..=start + j]
    }

    /// `A_{layer,head,j→i}`; zero when `i > j`.
    pub fn attention(&self, header: &DumpHeader, layer: usize, head: usize, j: usize, i: usize) -> f32 {
        if i > j {
            0.0
        } else {
            self.attention_row(header, layer, head, j)[i]
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorDump {
    pub header: DumpHeader,
    pub sequences: Vec<SequenceDump>,
}

impl TensorDump {
    fn check_sequence(&self, index: usize, s: &SequenceDump) -> Result<(), DumpError> {
        let h = &self.header;
        let n = s.len();
        if n > h.max_len {
            return Err(DumpError::Format(format!("sequence {index} has length {n} > max_len {}", h.max_len)));
        }
        if s.hidden.len() != h.layers * n * h.dim || s.attention.len() != h.layers * h.heads * triangle(n) {
            return Err(DumpError::Format(format!("sequence {index}: block sizes disagree with the header")));
        }
        if s.hidden.iter().any(|v| !v.is_finite()) {
            return Err(DumpError::NonFinite { sequence: index, block: "hidden" });
        }
        if s.attention.iter().any(|v| !v.is_finite()) {
            return Err(DumpError::NonFinite {
                sequence: index,
                block: "attention",
            });
        }
        for layer in 0..h.layers {
            for head in 0..h.heads {
                for j in 0..n {
                    let sum: f64 = s.attention_row(h, layer, head, j).iter().map(|&v| f64::from(v)).sum();
                    if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                        return Err(DumpError::Stochasticity {
                            sequence: index,
                            layer,
                            head,
                            row: j,
                            sum,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Shape, finiteness and row-stochasticity checks; the first failing
    /// sequence in order is reported.
    pub fn validate(&self) -> Result<(), DumpError> {
        let results: Vec<Result<(), DumpError>> = self
            .sequences
            .par_iter()
            .enumerate()
            .map(|(k, s)| self.check_sequence(k, s))
            .collect();
        results.into_iter().collect()
    }
}

fn put(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

/// Serializes a dump after validating it.
pub fn write_dump(dump: &TensorDump) -> Result<Vec<u8>, DumpError> {
    dump.validate()?;
    let h = &dump.header;
    let mut out = Vec::new();
    out.extend_from_slice(DUMP_MAGIC);
    out.extend_from_slice(&DUMP_VERSION.to_le_bytes());
    out.extend_from_slice(&h.grammar_hash);
    for v in [dump.sequences.len(), h.layers, h.heads, h.dim, h.max_len] {
        put(&mut out, v);
    }
    for s in &dump.sequences {
        put(&mut out, s.len());
        for &t in &s.tokens {
            out.extend_from_slice(&t.to_le_bytes());
        }
        for v in s.hidden.iter().chain(&s.attention) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], DumpError> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| DumpError::Format(format!("truncated while reading {what} at byte {}", self.at)))?;
        let slice = &self.bytes[self.at..end];
        self.at = end;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32, DumpError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, count: usize, what: &str) -> Result<Vec<f32>, DumpError> {
        let bytes = self.take(count.checked_mul(4).ok_or_else(|| DumpError::Format("size overflow".into()))?, what)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

/// Parses and validates a dump.
pub fn read_dump(bytes: &[u8]) -> Result<TensorDump, DumpError> {
    let mut c = Cursor { bytes, at: 0 };
    if c.take(4, "magic")? != DUMP_MAGIC {
        return Err(DumpError::Format("bad magic".into()));
    }
    let version = c.u32("version")?;
    if version != DUMP_VERSION {
        return Err(DumpError::Format(format!("unsupported version {version}")));
    }
    let grammar_hash: [u8; 32] = c.take(32, "grammar hash")?.try_into().unwrap();
    let count = c.u32("sequence count")? as usize;
    let layers = c.u32("layer count")? as usize;
    let heads = c.u32("head count")? as usize;
    let dim = c.u32("hidden dim")? as usize;
    let max_len = c.u32("max length")? as usize;
    let header = DumpHeader {
        grammar_hash,
        layers,
        heads,
        dim,
        max_len,
    };
    let mut sequences = Vec::with_capacity(count.min(1 << 16));
    for k in 0..count {
        let n = c.u32("sequence length")? as usize;
        if n > max_len {
            return Err(DumpError::Format(format!("sequence {k} has length {n} > max_len {max_len}")));
        }
        let tokens = c
            .take(4 * n, "tokens")?
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let hidden = c.f32s(layers * n * dim, "hidden block")?;
        let attention = c.f32s(layers * heads * triangle(n), "attention block")?;
        sequences.push(SequenceDump {
            tokens,
            hidden,
            attention,
        });
    }
    if c.at != bytes.len() {
        return Err(DumpError::Format(format!("{} trailing bytes", bytes.len() - c.at)));
    }
    let dump = TensorDump { header, sequences };
    dump.validate()?;
    Ok(dump)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> TensorDump {
        let header = DumpHeader {
            grammar_hash: [7; 32],
            layers: 2,
            heads: 1,
            dim: 2,
            max_len: 3,
        };
        let seq = SequenceDump {
            tokens: vec![4, 5, 5],
            hidden: (0..12).map(|v| v as f32 * 0.5).collect(),
            attention: vec![1.0, 0.5, 0.5, 0.2, 0.3, 0.5, 1.0, 0.0, 1.0, 0.1, 0.1, 0.8],
        };
        TensorDump {
            header,
            sequences: vec![seq],
        }
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let d = tiny();
        let bytes = write_dump(&d).unwrap();
        let back = read_dump(&bytes).unwrap();
        assert_eq!(back, d);
        assert_eq!(write_dump(&back).unwrap(), bytes);
        assert_eq!(bytes.len(), 4 + 4 + 32 + 20 + 4 + 12 + 48 + 48);
    }

    #[test]
    fn accessors() {
        let d = tiny();
        let h = &d.header;
        let s = &d.sequences[0];
        assert_eq!(s.attention_row(h, 0, 0, 2), &[0.2, 0.3, 0.5]);
        assert_eq!(s.attention(h, 1, 0, 1, 1), 1.0);
        assert_eq!(s.attention(h, 1, 0, 0, 2), 0.0);
        assert_eq!(s.hidden_row(h, 1, 0), &[3.0, 3.5]);
    }

    #[test]
    fn invalid_inputs() {
        let mut d = tiny();
        d.sequences[0].attention[3] = 0.0;
        assert!(matches!(
            write_dump(&d),
            Err(DumpError::Stochasticity { layer: 0, row: 2, .. })
        ));

        let bytes = write_dump(&tiny()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_dump(&bad), Err(DumpError::Format(_))));
        assert!(matches!(read_dump(&bytes[..bytes.len() - 6]), Err(DumpError::Format(_))));

        let mut row = bytes.clone();
        let at = bytes.len() - 48 + 12;
        row[at..at + 4].copy_from_slice(&0.1f32.to_le_bytes());
        assert!(matches!(read_dump(&row), Err(DumpError::Stochasticity { .. })));

        let mut nan = bytes.clone();
        nan[64 + 12..64 + 16].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(read_dump(&nan), Err(DumpError::NonFinite { block: "hidden", .. })));

        let h = tiny().header;
        assert!(h.check_grammar(&[7; 32]).is_ok());
        assert!(matches!(h.check_grammar(&[0; 32]), Err(DumpError::HashMismatch { .. })));
    }
}
