//! Synthetic dumps with known structure, standing in for a trained model.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::{DumpHeader, SequenceDump, TensorDump};
use crate::grammar::Cfg;
use crate::rng::stream_rng;
use crate::sampler::{boundaries, sample_corpus, BoundaryProfile, Derivation};

#[derive(Debug, Clone, PartialEq)]
pub enum HiddenProfile {
    /// One-hot ancestor symbols for every level followed by the `L` boundary
    /// bits, plus Gaussian noise. Position `k` carries the labels of
    /// position `k + shift` (zeros when that falls outside the sequence).
    Planted { noise: f64, shift: isize },
    /// Features independent of the labels: per-dimension Gaussian around a
    /// fixed nonzero mean.
    Random { dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttentionProfile {
    /// Head `h` (numbered from 1) attends uniformly over the last
    /// `2^h − 1` positions up to and including the query.
    UniformWindow,
    UniformCausal,
    /// Uniform over the last `LOCAL_WINDOW` positions up to and including
    /// the query, except that keys ending some nonterminal get `1 + boost`
    /// times the weight of other keys.
    EndMass { boost: f64 },
    /// A distance-only window over the last `LOCAL_WINDOW` positions plus `mass` split evenly over the
    /// adjacent ends: for every level `ℓ`, the last position of the level-ℓ
    /// nonterminal just before the query's own level-ℓ ancestor. Whatever
    /// the window and the ends leave over goes to the query itself.
    AdjacentEnd { mass: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSpec {
    pub sequences: usize,
    pub layers: usize,
    pub heads: usize,
    pub hidden: HiddenProfile,
    pub attention: AttentionProfile,
}

impl FixtureSpec {
    pub fn new(sequences: usize, hidden: HiddenProfile, attention: AttentionProfile) -> Self {
        FixtureSpec {
            sequences,
            layers: 2,
            heads: 4,
            hidden,
            attention,
        }
    }
}

pub struct Fixture {
    pub dump: TensorDump,
    pub derivations: Vec<Derivation>,
}

/// Width of planted hidden states: one slot per grammar symbol plus one
/// boundary bit per level.
pub fn planted_dim(cfg: &Cfg) -> usize {
    cfg.num_symbols() + cfg.depth()
}

fn labels_at(cfg: &Cfg, d: &Derivation, b: &BoundaryProfile, i: usize, out: &mut [f32]) {
    let depth = cfg.depth();
    for level in 1..=depth {
        out[(d.ancestor_symbol(level, i) - 1) as usize] = 1.0;
    }
    let base = cfg.num_symbols();
    for level in 1..depth {
        if b.is_end(level, i) {
            out[base + level - 1] = 1.0;
        }
    }
    out[base + depth - 1] = 1.0;
}

fn hidden_block<R: Rng>(cfg: &Cfg, d: &Derivation, b: &BoundaryProfile, profile: &HiddenProfile, dim: usize, rng: &mut R) -> Vec<f32> {
    let n = d.len();
    let mut block = vec![0f32; n * dim];
    match *profile {
        HiddenProfile::Planted { noise, shift } => {
            for k in 0..n {
                let source = k as isize + shift;
                if (0..n as isize).contains(&source) {
                    labels_at(cfg, d, b, source as usize, &mut block[k * dim..(k + 1) * dim]);
                }
            }
            if noise > 0.0 {
                let normal = Normal::new(0.0, noise).expect("finite noise");
                for v in block.iter_mut() {
                    *v += normal.sample(rng) as f32;
                }
            }
        }
        HiddenProfile::Random { .. } => {
            let normal = Normal::new(0.0, 1.0).unwrap();
            for k in 0..n {
                for (c, v) in block[k * dim..(k + 1) * dim].iter_mut().enumerate() {
                    *v = random_mean(c) + normal.sample(rng) as f32;
                }
            }
        }
    }
    block
}

/// Fixed per-dimension offsets so a bias-free linear readout can still
/// express the majority class.
fn random_mean(c: usize) -> f32 {
    1.0 + (c % 3) as f32 * 0.5
}

/// `starts[ℓ-1][i]`: first position under the level-ℓ ancestor of `i`.
fn ancestor_starts(d: &Derivation) -> Vec<Vec<usize>> {
    (1..d.depth())
        .map(|l| {
            let p = d.ancestor_indices(l);
            let mut row = vec![0; p.len()];
            for i in 1..p.len() {
                row[i] = if p[i] == p[i - 1] { row[i - 1] } else { i };
            }
            row
        })
        .collect()
}

pub const LOCAL_WINDOW: usize = 8;

fn attention_row(profile: AttentionProfile, head: usize, j: usize, b: &BoundaryProfile, starts: &[Vec<usize>], row: &mut [f32]) {
    let depth = b.depth();
    let weights: Vec<f64> = match profile {
        AttentionProfile::UniformWindow => {
            let window = 1usize.checked_shl(head as u32 + 1).map_or(usize::MAX, |w| w - 1);
            (0..=j).map(|i| f64::from(u8::from(j - i < window))).collect()
        }
        AttentionProfile::UniformCausal => vec![1.0; j + 1],
        AttentionProfile::EndMass { boost } => (0..=j)
            .map(|i| match (j - i < LOCAL_WINDOW, b.deepest(i) < depth) {
                (false, _) => 0.0,
                (true, true) => 1.0 + boost,
                (true, false) => 1.0,
            })
            .collect(),
        AttentionProfile::AdjacentEnd { mass } => {
            let mut w = vec![0.0; j + 1];
            for (i, v) in w.iter_mut().enumerate().take(j) {
                if j - i < LOCAL_WINDOW {
                    *v = (1.0 - mass) / LOCAL_WINDOW as f64;
                }
            }
            let mut ends: Vec<usize> = starts.iter().filter(|l| l[j] > 0).map(|l| l[j] - 1).collect();
            ends.sort_unstable();
            ends.dedup();
            for &i in &ends {
                w[i] += mass / ends.len() as f64;
            }
            w[j] = 1.0 - w.iter().sum::<f64>();
            w
        }
    };
    let total: f64 = weights.iter().sum();
    for (slot, w) in row.iter_mut().zip(weights) {
        *slot = (w / total) as f32;
    }
}

fn attention_block(profile: AttentionProfile, layers: usize, heads: usize, d: &Derivation, b: &BoundaryProfile) -> Vec<f32> {
    let n = b.len();
    let starts = ancestor_starts(d);
    let tri = n * (n + 1) / 2;
    let mut block = vec![0f32; layers * heads * tri];
    for layer in 0..layers {
        for head in 0..heads {
            let base = (layer * heads + head) * tri;
            for j in 0..n {
                let start = base + j * (j + 1) / 2;
                attention_row(profile, head, j, b, &starts, &mut block[start..=start + j]);
            }
        }
    }
    block
}

/// Builds a dump over the given derivations; sequence `k` draws its noise
/// from stream `k` of `seed`.
pub fn fixture_from_derivations(cfg: &Cfg, derivations: &[Derivation], spec: &FixtureSpec, seed: u64) -> TensorDump {
    let dim = match spec.hidden {
        HiddenProfile::Planted { .. } => planted_dim(cfg),
        HiddenProfile::Random { dim } => dim,
    };
    let sequences: Vec<SequenceDump> = derivations
        .par_iter()
        .enumerate()
        .map(|(k, d)| {
            let b = boundaries(d).expect("sampled derivations are consistent");
            let mut rng = stream_rng(seed, k as u64);
            let layer = hidden_block(cfg, d, &b, &spec.hidden, dim, &mut rng);
            let hidden = layer.repeat(spec.layers);
            SequenceDump {
                tokens: d.terminals().to_vec(),
                hidden,
                attention: attention_block(spec.attention, spec.layers, spec.heads, d, &b),
            }
        })
        .collect();
    TensorDump {
        header: DumpHeader {
            grammar_hash: cfg.content_hash(),
            layers: spec.layers,
            heads: spec.heads,
            dim,
            max_len: derivations.iter().map(Derivation::len).max().unwrap_or(0),
        },
        sequences,
    }
}

/// Samples `spec.sequences` derivations (stream `k` of `seed` for item `k`)
/// and builds a dump over them. Noise uses streams of `seed + 1`.
pub fn synthesize_fixture(cfg: &Cfg, spec: &FixtureSpec, seed: u64) -> Fixture {
    let derivations = sample_corpus(cfg, seed, spec.sequences);
    let dump = fixture_from_derivations(cfg, &derivations, spec, seed.wrapping_add(1));
    Fixture { dump, derivations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::tests::toy;
    use crate::grammar::GrammarFamily;
    use crate::tensor::{read_dump, write_dump};

    #[test]
    fn uniform_window_rows() {
        let g = GrammarFamily::Cfg3b.spec(1).synthesize().unwrap();
        let spec = FixtureSpec::new(2, HiddenProfile::Random { dim: 3 }, AttentionProfile::UniformWindow);
        let f = synthesize_fixture(&g, &spec, 0);
        let h = &f.dump.header;
        let s = &f.dump.sequences[0];
        for j in 0..s.len() {
            assert_eq!(s.attention(h, 0, 0, j, j), 1.0);
            let row = s.attention_row(h, 1, 2, j);
            let window = (j + 1).min(7);
            for (i, &v) in row.iter().enumerate() {
                let expected = if j - i < 7 { 1.0 / window as f32 } else { 0.0 };
                assert_eq!(v, expected);
            }
        }
        f.dump.validate().unwrap();
    }

    #[test]
    fn planted_states_encode_labels() {
        let g = toy();
        let spec = FixtureSpec::new(3, HiddenProfile::Planted { noise: 0.0, shift: 0 }, AttentionProfile::UniformCausal);
        let f = synthesize_fixture(&g, &spec, 4);
        let h = &f.dump.header;
        assert_eq!(h.dim, 5 + 3);
        for (d, s) in f.derivations.iter().zip(&f.dump.sequences) {
            let b = boundaries(d).unwrap();
            for i in 0..d.len() {
                let row = s.hidden_row(h, 1, i);
                for level in 1..=3 {
                    assert_eq!(row[(d.ancestor_symbol(level, i) - 1) as usize], 1.0);
                }
                assert_eq!(row.iter().take(5).sum::<f32>(), 3.0);
                assert_eq!(row[5] == 1.0, b.is_end(1, i));
                assert_eq!(row[6] == 1.0, b.is_end(2, i));
                assert_eq!(row[7], 1.0);
            }
        }
    }

    #[test]
    fn shifted_labels() {
        let g = toy();
        let base = synthesize_fixture(&g, &FixtureSpec::new(1, HiddenProfile::Planted { noise: 0.0, shift: 0 }, AttentionProfile::UniformCausal), 2);
        let shifted = synthesize_fixture(&g, &FixtureSpec::new(1, HiddenProfile::Planted { noise: 0.0, shift: 1 }, AttentionProfile::UniformCausal), 2);
        let h = &base.dump.header;
        let (a, b) = (&base.dump.sequences[0], &shifted.dump.sequences[0]);
        for k in 0..3 {
            assert_eq!(b.hidden_row(h, 0, k), a.hidden_row(h, 0, k + 1));
        }
        assert!(b.hidden_row(h, 0, 3).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn end_profiles_favor_ends() {
        let g = GrammarFamily::Cfg3i.spec(1).synthesize().unwrap();
        for profile in [AttentionProfile::EndMass { boost: 4.0 }, AttentionProfile::AdjacentEnd { mass: 0.8 }] {
            let f = synthesize_fixture(&g, &FixtureSpec::new(3, HiddenProfile::Random { dim: 2 }, profile), 9);
            let bytes = write_dump(&f.dump).unwrap();
            assert_eq!(read_dump(&bytes).unwrap(), f.dump);
            let b = boundaries(&f.derivations[0]).unwrap();
            let s = &f.dump.sequences[0];
            let j = s.len() - 1;
            let row = s.attention_row(&f.dump.header, 0, 0, j);
            let best = (0..=j).max_by(|&x, &y| row[x].total_cmp(&row[y]).then(y.cmp(&x))).unwrap();
            assert!(b.deepest(best) < g.depth());
        }
    }
}
