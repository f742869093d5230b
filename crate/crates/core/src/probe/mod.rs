//! Position-attention linear probes for ancestor and boundary annotations.
//!
//! For hidden states `E_k` of one sequence the probe outputs
//!
//! ```text
//! G_i = (1/H) Σ_r Σ_k w_{r,i→k} · W_r E_k
//! w_{r,i→·} = softmax over the support of i of ⟨P_{i,r}, P_{k,r}⟩
//! ```
//!
//! so `G` is linear in `E` for fixed parameters. The support is every
//! position, optionally only `k ≤ i`, and can be narrowed to `|i − k| ≤ δ`.
//! Ancestor targets use one softmax group per level; boundary targets use
//! one logistic output per level.

mod optim;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::grammar::Cfg;
use crate::rng::seeded;
use crate::sampler::{boundaries, Derivation};
use crate::tensor::TensorDump;

pub use optim::AdamW;

pub const MODEL_MAGIC: &[u8; 4] = b"CFGP";
pub const MODEL_VERSION: u32 = 1;

/// Examples per gradient shard. Shards are reduced in batch order, so the
/// result does not depend on the thread count.
const SHARD: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbeError {
    #[error("sequence of length {len} exceeds the probe's {capacity} positions")]
    LengthExceeded { len: usize, capacity: usize },
    #[error("loss became non-finite at iteration {iteration}")]
    Divergence { iteration: usize },
    #[error("annotations do not match the dump: {0}")]
    Misaligned(String),
    #[error("invalid probe data: {0}")]
    Shape(String),
    #[error("model file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeTarget {
    Ancestors,
    Boundaries,
}

impl fmt::Display for ProbeTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProbeTarget::Ancestors => "ancestors",
            ProbeTarget::Boundaries => "boundaries",
        })
    }
}

impl FromStr for ProbeTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ancestors" => Ok(ProbeTarget::Ancestors),
            "boundaries" => Ok(ProbeTarget::Boundaries),
            other => Err(format!("unknown target `{other}` (ancestors | boundaries)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeMask {
    Full,
    /// Only keys with `|i − k| ≤ δ`.
    Local(usize),
}

impl fmt::Display for ProbeMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProbeMask::Full => f.write_str("none"),
            ProbeMask::Local(d) => write!(f, "{d}"),
        }
    }
}

impl FromStr for ProbeMask {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(ProbeMask::Full),
            other => other
                .parse()
                .map(ProbeMask::Local)
                .map_err(|_| format!("unknown mask `{other}` (none | <delta>)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub heads: usize,
    pub pos_dim: usize,
    pub target: ProbeTarget,
    pub mask: ProbeMask,
    pub causal: bool,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub iterations: usize,
    pub layer: usize,
    pub log_every: usize,
    /// Position capacity; defaults to the longest training sequence.
    pub max_len: Option<usize>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            heads: 16,
            pos_dim: 1024,
            target: ProbeTarget::Ancestors,
            mask: ProbeMask::Full,
            causal: false,
            lr: 0.003,
            weight_decay: 0.001,
            batch: 60,
            iterations: 30_000,
            layer: 0,
            log_every: 100,
            max_len: None,
        }
    }
}

/// Hidden states of one sequence and its per-group class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeExample {
    /// `[position][dim]`
    pub hidden: Vec<f64>,
    /// `classes[group][position]`; boundary groups use 0/1.
    pub classes: Vec<Vec<u32>>,
}

impl ProbeExample {
    pub fn len(&self) -> usize {
        self.classes.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeDataset {
    pub target: ProbeTarget,
    /// Output width of each group: level sizes for ancestors, 1 per level
    /// for boundaries.
    pub groups: Vec<usize>,
    pub dim: usize,
    pub examples: Vec<ProbeExample>,
}

impl ProbeDataset {
    pub fn new(target: ProbeTarget, groups: Vec<usize>, dim: usize, examples: Vec<ProbeExample>) -> Result<Self, ProbeError> {
        for (k, e) in examples.iter().enumerate() {
            let n = e.len();
            let bad = |m: &str| ProbeError::Shape(format!("example {k}: {m}"));
            if e.classes.len() != groups.len() || e.classes.iter().any(|c| c.len() != n) {
                return Err(bad("one label row per group, one label per position"));
            }
            if e.hidden.len() != n * dim {
                return Err(bad("hidden block does not match the label length"));
            }
            for (g, row) in e.classes.iter().enumerate() {
                let classes = if target == ProbeTarget::Boundaries { 2 } else { groups[g] };
                if row.iter().any(|&c| c as usize >= classes) {
                    return Err(bad("label outside its group"));
                }
            }
        }
        Ok(ProbeDataset {
            target,
            groups,
            dim,
            examples,
        })
    }

    /// Pairs dump sequence `k` with derivation `k`, reading hidden states of
    /// `layer`.
    pub fn from_dump(
        cfg: &Cfg,
        dump: &TensorDump,
        derivations: &[Derivation],
        layer: usize,
        target: ProbeTarget,
    ) -> Result<Self, ProbeError> {
        let h = &dump.header;
        if layer >= h.layers {
            return Err(ProbeError::Shape(format!("layer {layer} not in a {}-layer dump", h.layers)));
        }
        if dump.sequences.len() != derivations.len() {
            return Err(ProbeError::Misaligned(format!(
                "{} sequences vs {} annotated samples",
                dump.sequences.len(),
                derivations.len()
            )));
        }
        let depth = cfg.depth();
        let groups = match target {
            ProbeTarget::Ancestors => cfg.sizes().to_vec(),
            ProbeTarget::Boundaries => vec![1; depth],
        };
        let examples = dump
            .sequences
            .iter()
            .zip(derivations)
            .enumerate()
            .map(|(k, (s, d))| {
                if s.tokens != d.terminals() {
                    return Err(ProbeError::Misaligned(format!("sequence {k} tokens differ from its annotation")));
                }
                let n = s.len();
                let start = layer * n * h.dim;
                let hidden = s.hidden[start..start + n * h.dim].iter().map(|&v| f64::from(v)).collect();
                let classes = match target {
                    ProbeTarget::Ancestors => (1..=depth)
                        .map(|l| (0..n).map(|i| cfg.local_index(d.ancestor_symbol(l, i)) as u32).collect())
                        .collect(),
                    ProbeTarget::Boundaries => {
                        let b = boundaries(d).map_err(|e| ProbeError::Misaligned(e.to_string()))?;
                        (1..=depth)
                            .map(|l| (0..n).map(|i| u32::from(l == depth || b.is_end(l, i))).collect())
                            .collect()
                    }
                };
                Ok(ProbeExample { hidden, classes })
            })
            .collect::<Result<Vec<_>, _>>()?;
        ProbeDataset::new(target, groups, h.dim, examples)
    }

    pub fn max_len(&self) -> usize {
        self.examples.iter().map(ProbeExample::len).max().unwrap_or(0)
    }

    /// The examples in `range`, same target and groups.
    pub fn subset(&self, range: Range<usize>) -> ProbeDataset {
        ProbeDataset {
            target: self.target,
            groups: self.groups.clone(),
            dim: self.dim,
            examples: self.examples[range].to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    pub heads: usize,
    pub pos_dim: usize,
    pub in_dim: usize,
    pub max_len: usize,
    pub target: ProbeTarget,
    pub groups: Vec<usize>,
    pub mask: ProbeMask,
    pub causal: bool,
    /// `f_r` as `[head][output][input]`.
    weights: Vec<f64>,
    /// `P` as `[position][head][pos_dim]`.
    positions: Vec<f64>,
}

/// Attention rows of one head: for each query, the first key of its support
/// and the weights over the support.
type HeadRows = Vec<(usize, Vec<f64>)>;

struct Forward {
    /// `[head][position][output]`
    mapped: Vec<f64>,
    rows: Vec<HeadRows>,
    /// `[position][output]`
    logits: Vec<f64>,
}

impl ProbeModel {
    /// Zero linear maps and `P ~ N(0, 1/pos_dim)`.
    pub fn init<R: Rng + ?Sized>(config: &ProbeConfig, dataset: &ProbeDataset, max_len: usize, rng: &mut R) -> Self {
        let out: usize = dataset.groups.iter().sum();
        let normal = Normal::new(0.0, (1.0 / config.pos_dim as f64).sqrt()).unwrap();
        ProbeModel {
            heads: config.heads,
            pos_dim: config.pos_dim,
            in_dim: dataset.dim,
            max_len,
            target: dataset.target,
            groups: dataset.groups.clone(),
            mask: config.mask,
            causal: config.causal,
            weights: vec![0.0; config.heads * out * dataset.dim],
            positions: (0..max_len * config.heads * config.pos_dim).map(|_| normal.sample(rng)).collect(),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.groups.iter().sum()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn positions_mut(&mut self) -> &mut [f64] {
        &mut self.positions
    }

    /// Keys attended by query `i` in a sequence of length `n`.
    pub fn support(&self, n: usize, i: usize) -> Range<usize> {
        let (lo, mut hi) = match self.mask {
            ProbeMask::Full => (0, n),
            ProbeMask::Local(d) => (i.saturating_sub(d), (i + d + 1).min(n)),
        };
        if self.causal {
            hi = hi.min(i + 1);
        }
        lo..hi
    }

    fn p(&self, i: usize, r: usize) -> &[f64] {
        let at = (i * self.heads + r) * self.pos_dim;
        &self.positions[at..at + self.pos_dim]
    }

    fn head_rows(&self, n: usize, r: usize) -> HeadRows {
        (0..n)
            .map(|i| {
                let s = self.support(n, i);
                if s.len() == 1 {
                    return (s.start, vec![1.0]);
                }
                let pi = self.p(i, r);
                let scores: Vec<f64> = s.clone().map(|k| dot(pi, self.p(k, r))).collect();
                (s.start, softmax(&scores))
            })
            .collect()
    }

    /// Attention rows of head `r` for a sequence of length `n`.
    pub fn attention(&self, n: usize, r: usize) -> Result<Vec<(usize, Vec<f64>)>, ProbeError> {
        self.check_len(n)?;
        Ok(self.head_rows(n, r))
    }

    fn check_len(&self, n: usize) -> Result<(), ProbeError> {
        if n > self.max_len {
            Err(ProbeError::LengthExceeded {
                len: n,
                capacity: self.max_len,
            })
        } else {
            Ok(())
        }
    }

    fn run(&self, hidden: &[f64], n: usize) -> Forward {
        let (h, d, out) = (self.heads, self.in_dim, self.out_dim());
        let mut mapped = vec![0.0; h * n * out];
        for r in 0..h {
            let w = &self.weights[r * out * d..(r + 1) * out * d];
            for k in 0..n {
                let e = &hidden[k * d..(k + 1) * d];
                let dst = &mut mapped[(r * n + k) * out..(r * n + k + 1) * out];
                for (o, slot) in dst.iter_mut().enumerate() {
                    *slot = dot(&w[o * d..(o + 1) * d], e);
                }
            }
        }
        let rows: Vec<HeadRows> = (0..h).map(|r| self.head_rows(n, r)).collect();
        let mut logits = vec![0.0; n * out];
        let scale = 1.0 / h as f64;
        for (r, head) in rows.iter().enumerate() {
            for (i, (lo, w)) in head.iter().enumerate() {
                let g = &mut logits[i * out..(i + 1) * out];
                for (t, &wk) in w.iter().enumerate() {
                    let f = &mapped[(r * n + lo + t) * out..(r * n + lo + t + 1) * out];
                    for o in 0..out {
                        g[o] += scale * wk * f[o];
                    }
                }
            }
        }
        Forward { mapped, rows, logits }
    }

    /// Logits `G_i` as `[position][output]` for hidden states `[position][dim]`.
    pub fn forward(&self, hidden: &[f64]) -> Result<Vec<f64>, ProbeError> {
        if self.in_dim == 0 || !hidden.len().is_multiple_of(self.in_dim) {
            return Err(ProbeError::Shape("hidden block is not a whole number of rows".into()));
        }
        let n = hidden.len() / self.in_dim;
        self.check_len(n)?;
        Ok(self.run(hidden, n).logits)
    }

    fn group_offsets(&self) -> Vec<usize> {
        self.groups
            .iter()
            .scan(0, |acc, &s| {
                let o = *acc;
                *acc += s;
                Some(o)
            })
            .collect()
    }

    /// Predicted class per group and position.
    pub fn predict(&self, example: &ProbeExample) -> Result<Vec<Vec<u32>>, ProbeError> {
        let n = example.len();
        let logits = self.forward(&example.hidden)?;
        let out = self.out_dim();
        let offsets = self.group_offsets();
        Ok(self
            .groups
            .iter()
            .zip(&offsets)
            .map(|(&size, &off)| {
                (0..n)
                    .map(|i| {
                        let z = &logits[i * out + off..i * out + off + size];
                        match self.target {
                            ProbeTarget::Ancestors => argmax(z) as u32,
                            ProbeTarget::Boundaries => u32::from(z[0] > 0.0),
                        }
                    })
                    .collect()
            })
            .collect())
    }

    fn param_count(&self) -> (usize, usize) {
        (self.weights.len(), self.positions.len())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = k;
        }
    }
    best
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Summed loss and gradients over a set of examples; positions beyond the
/// longest example have zero gradient and are not stored.
struct Accumulated {
    loss: f64,
    positions_seen: usize,
    correct: usize,
    weights: Vec<f64>,
    positions: Vec<f64>,
}

impl Accumulated {
    fn zero(model: &ProbeModel, max_n: usize) -> Self {
        Accumulated {
            loss: 0.0,
            positions_seen: 0,
            correct: 0,
            weights: vec![0.0; model.weights.len()],
            positions: vec![0.0; max_n * model.heads * model.pos_dim],
        }
    }

    fn absorb(&mut self, other: Accumulated) {
        self.loss += other.loss;
        self.positions_seen += other.positions_seen;
        self.correct += other.correct;
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.positions.iter_mut().zip(&other.positions) {
            *a += b;
        }
    }
}

fn accumulate_example(model: &ProbeModel, e: &ProbeExample, acc: &mut Accumulated) {
    let n = e.len();
    let (h, d, out, dp) = (model.heads, model.in_dim, model.out_dim(), model.pos_dim);
    let fwd = model.run(&e.hidden, n);
    let offsets = model.group_offsets();

    // dL/dG
    let mut dg = vec![0.0; n * out];
    for (g, (&size, &off)) in model.groups.iter().zip(&offsets).enumerate() {
        for i in 0..n {
            let y = e.classes[g][i] as usize;
            let z = &fwd.logits[i * out + off..i * out + off + size];
            let grad = &mut dg[i * out + off..i * out + off + size];
            match model.target {
                ProbeTarget::Ancestors => {
                    let p = softmax(z);
                    acc.loss -= p[y].max(f64::MIN_POSITIVE).ln();
                    acc.correct += usize::from(argmax(z) == y);
                    for (k, slot) in grad.iter_mut().enumerate() {
                        *slot = p[k] - f64::from(u8::from(k == y));
                    }
                }
                ProbeTarget::Boundaries => {
                    let yf = y as f64;
                    acc.loss += softplus(z[0]) - yf * z[0];
                    acc.correct += usize::from((z[0] > 0.0) == (y == 1));
                    grad[0] = sigmoid(z[0]) - yf;
                }
            }
        }
    }
    acc.positions_seen += n;

    let scale = 1.0 / h as f64;
    for r in 0..h {
        // dL/dF_r[k] and dL/dw_r[i, k]
        let mut dmapped = vec![0.0; n * out];
        let f = &fwd.mapped[r * n * out..(r + 1) * n * out];
        for (i, (lo, w)) in fwd.rows[r].iter().enumerate() {
            let gi = &dg[i * out..(i + 1) * out];
            let dw: Vec<f64> = (0..w.len()).map(|t| scale * dot(gi, &f[(lo + t) * out..(lo + t + 1) * out])).collect();
            for (t, &wk) in w.iter().enumerate() {
                let dst = &mut dmapped[(lo + t) * out..(lo + t + 1) * out];
                for o in 0..out {
                    dst[o] += scale * wk * gi[o];
                }
            }
            if w.len() > 1 {
                let mean: f64 = w.iter().zip(&dw).map(|(a, b)| a * b).sum();
                let pi_at = (i * h + r) * dp;
                for (t, &wk) in w.iter().enumerate() {
                    let ds = wk * (dw[t] - mean);
                    if ds == 0.0 {
                        continue;
                    }
                    let k = lo + t;
                    let pk_at = (k * h + r) * dp;
                    for c in 0..dp {
                        let pk = model.positions[pk_at + c];
                        let pi = model.positions[pi_at + c];
                        acc.positions[pi_at + c] += ds * pk;
                        acc.positions[pk_at + c] += ds * pi;
                    }
                }
            }
        }
        let gw = &mut acc.weights[r * out * d..(r + 1) * out * d];
        for k in 0..n {
            let ek = &e.hidden[k * d..(k + 1) * d];
            let dk = &dmapped[k * out..(k + 1) * out];
            for o in 0..out {
                if dk[o] == 0.0 {
                    continue;
                }
                let row = &mut gw[o * d..(o + 1) * d];
                for c in 0..d {
                    row[c] += dk[o] * ek[c];
                }
            }
        }
    }
}

fn accumulate(model: &ProbeModel, batch: &[&ProbeExample]) -> Accumulated {
    let shards: Vec<Accumulated> = batch
        .par_chunks(SHARD)
        .map(|chunk| {
            let max_n = chunk.iter().map(|e| e.len()).max().unwrap_or(0);
            let mut acc = Accumulated::zero(model, max_n);
            for e in chunk {
                accumulate_example(model, e, &mut acc);
            }
            acc
        })
        .collect();
    let max_n = batch.iter().map(|e| e.len()).max().unwrap_or(0);
    let mut total = Accumulated::zero(model, max_n);
    for s in shards {
        let mut padded = s;
        padded.positions.resize(total.positions.len(), 0.0);
        total.absorb(padded);
    }
    total
}

/// Mean per-position loss (summed over groups) and its gradient with respect
/// to the linear maps and the position embeddings.
pub fn loss_and_gradient(model: &ProbeModel, examples: &[&ProbeExample]) -> Result<(f64, Vec<f64>, Vec<f64>), ProbeError> {
    for e in examples {
        model.check_len(e.len())?;
    }
    let acc = accumulate(model, examples);
    let denom = acc.positions_seen.max(1) as f64;
    let gw = acc.weights.into_iter().map(|v| v / denom).collect();
    let mut gp: Vec<f64> = acc.positions.into_iter().map(|v| v / denom).collect();
    gp.resize(model.positions.len(), 0.0);
    Ok((acc.loss / denom, gw, gp))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub loss: f64,
    /// Fraction of correct (position, group) predictions in the batch.
    pub accuracy: f64,
}

pub struct TrainOutcome {
    pub model: ProbeModel,
    pub trace: Vec<TraceRow>,
}

pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("iteration,loss,batch_accuracy\n");
    for t in trace {
        out.push_str(&format!("{},{},{}\n", t.iteration, t.loss, t.accuracy));
    }
    out
}

/// Trains a probe. Batches are drawn with replacement unless the batch size
/// covers the whole dataset, in which case every step is full-batch.
pub fn probe_train(config: &ProbeConfig, dataset: &ProbeDataset, seed: u64) -> Result<TrainOutcome, ProbeError> {
    if config.heads == 0 || config.pos_dim == 0 || config.batch == 0 {
        return Err(ProbeError::Shape("heads, pos_dim and batch must be positive".into()));
    }
    if dataset.examples.is_empty() {
        return Err(ProbeError::Shape("empty training set".into()));
    }
    let mut rng = seeded(seed);
    let capacity = config.max_len.unwrap_or(0).max(dataset.max_len());
    let mut model = ProbeModel::init(config, dataset, capacity, &mut rng);
    let (nw, np) = model.param_count();
    let mut opt_w = AdamW::new(nw, config.lr, config.weight_decay);
    let mut opt_p = AdamW::new(np, config.lr, config.weight_decay);
    let full = config.batch >= dataset.examples.len();
    let mut trace = Vec::new();
    let group_count = dataset.groups.len();
    for it in 1..=config.iterations {
        let batch: Vec<&ProbeExample> = if full {
            dataset.examples.iter().collect()
        } else {
            (0..config.batch)
                .map(|_| &dataset.examples[rng.random_range(0..dataset.examples.len())])
                .collect()
        };
        let acc = accumulate(&model, &batch);
        let denom = acc.positions_seen.max(1) as f64;
        let loss = acc.loss / denom;
        if !loss.is_finite() {
            return Err(ProbeError::Divergence { iteration: it });
        }
        if config.log_every > 0 && (it == 1 || it % config.log_every == 0 || it == config.iterations) {
            trace.push(TraceRow {
                iteration: it,
                loss,
                accuracy: acc.correct as f64 / (denom * group_count as f64),
            });
        }
        let gw: Vec<f64> = acc.weights.iter().map(|v| v / denom).collect();
        let mut gp: Vec<f64> = acc.positions.iter().map(|v| v / denom).collect();
        gp.resize(np, 0.0);
        opt_w.update(&mut model.weights, &gw);
        opt_p.update(&mut model.positions, &gp);
        if model.weights.iter().any(|v| !v.is_finite()) || model.positions.iter().any(|v| !v.is_finite()) {
            return Err(ProbeError::Divergence { iteration: it });
        }
    }
    Ok(TrainOutcome { model, trace })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelAccuracy {
    pub level: usize,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    /// Frequency of the most common label at this level.
    pub majority_rate: f64,
    /// Fraction of positions that are NT-ends (boundary targets only).
    pub positive_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyTable {
    pub target: ProbeTarget,
    pub levels: Vec<LevelAccuracy>,
}

impl AccuracyTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,accuracy,correct,total,majority_rate,positive_rate\n");
        for l in &self.levels {
            let pos = l.positive_rate.map(|p| p.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                l.level, l.accuracy, l.correct, l.total, l.majority_rate, pos
            ));
        }
        out
    }

    pub fn min_accuracy(&self) -> f64 {
        self.levels.iter().map(|l| l.accuracy).fold(f64::INFINITY, f64::min)
    }
}

/// Per-level accuracy of `model` on `dataset`.
pub fn probe_eval(model: &ProbeModel, dataset: &ProbeDataset) -> Result<AccuracyTable, ProbeError> {
    let predictions: Vec<Vec<Vec<u32>>> = dataset
        .examples
        .par_iter()
        .map(|e| model.predict(e))
        .collect::<Result<_, _>>()?;
    let levels = (0..dataset.groups.len())
        .map(|g| {
            let classes = if dataset.target == ProbeTarget::Boundaries { 2 } else { dataset.groups[g] };
            let mut counts = vec![0usize; classes];
            let mut correct = 0;
            let mut total = 0;
            for (e, p) in dataset.examples.iter().zip(&predictions) {
                for (y, yhat) in e.classes[g].iter().zip(&p[g]) {
                    counts[*y as usize] += 1;
                    correct += usize::from(y == yhat);
                    total += 1;
                }
            }
            let rate = |c: usize| if total == 0 { 0.0 } else { c as f64 / total as f64 };
            LevelAccuracy {
                level: g + 1,
                correct,
                total,
                accuracy: rate(correct),
                majority_rate: rate(counts.iter().copied().max().unwrap_or(0)),
                positive_rate: (dataset.target == ProbeTarget::Boundaries).then(|| rate(counts[1])),
            }
        })
        .collect();
    Ok(AccuracyTable {
        target: dataset.target,
        levels,
    })
}

fn put(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

/// `CFGP`, version, then u32 fields (target, mask, causal, heads, pos_dim,
/// in_dim, max_len, group count, group sizes) and the f64 parameters.
pub fn write_model(model: &ProbeModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    put(&mut out, usize::from(model.target == ProbeTarget::Boundaries));
    put(
        &mut out,
        match model.mask {
            ProbeMask::Full => 0,
            ProbeMask::Local(d) => d + 1,
        },
    );
    put(&mut out, usize::from(model.causal));
    for v in [model.heads, model.pos_dim, model.in_dim, model.max_len, model.groups.len()] {
        put(&mut out, v);
    }
    for &g in &model.groups {
        put(&mut out, g);
    }
    for v in model.weights.iter().chain(&model.positions) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_model(bytes: &[u8]) -> Result<ProbeModel, ProbeError> {
    let fail = |m: &str| ProbeError::Format(m.to_string());
    if bytes.len() < 8 || &bytes[..4] != MODEL_MAGIC {
        return Err(fail("bad magic"));
    }
    let mut at = 4;
    let mut word = || -> Result<usize, ProbeError> {
        let w = bytes.get(at..at + 4).ok_or_else(|| fail("truncated header"))?;
        at += 4;
        Ok(u32::from_le_bytes(w.try_into().unwrap()) as usize)
    };
    if word()? != MODEL_VERSION as usize {
        return Err(fail("unsupported version"));
    }
    let target = match word()? {
        0 => ProbeTarget::Ancestors,
        1 => ProbeTarget::Boundaries,
        _ => return Err(fail("bad target code")),
    };
    let mask = match word()? {
        0 => ProbeMask::Full,
        d => ProbeMask::Local(d - 1),
    };
    let causal = word()? != 0;
    let heads = word()?;
    let pos_dim = word()?;
    let in_dim = word()?;
    let max_len = word()?;
    let group_count = word()?;
    let groups = (0..group_count).map(|_| word()).collect::<Result<Vec<_>, _>>()?;
    let out: usize = groups.iter().sum();
    let nw = heads * out * in_dim;
    let np = max_len * heads * pos_dim;
    let body = &bytes[at..];
    if body.len() != (nw + np) * 8 {
        return Err(fail("parameter block does not match the header"));
    }
    let values: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(fail("non-finite parameter"));
    }
    Ok(ProbeModel {
        heads,
        pos_dim,
        in_dim,
        max_len,
        target,
        groups,
        mask,
        causal,
        weights: values[..nw].to_vec(),
        positions: values[nw..].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::tests::toy;
    use crate::tensor::{synthesize_fixture, AttentionProfile, FixtureSpec, HiddenProfile};

    fn small_dataset(target: ProbeTarget) -> ProbeDataset {
        let mut rng = seeded(3);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let examples = (0..2)
            .map(|_| {
                let n = 3;
                ProbeExample {
                    hidden: (0..n * 4).map(|_| normal.sample(&mut rng)).collect(),
                    classes: match target {
                        ProbeTarget::Ancestors => vec![
                            (0..n).map(|_| rng.random_range(0..3)).collect(),
                            (0..n).map(|_| rng.random_range(0..2)).collect(),
                        ],
                        ProbeTarget::Boundaries => (0..2).map(|_| (0..n).map(|_| rng.random_range(0..2)).collect()).collect(),
                    },
                }
            })
            .collect();
        let groups = match target {
            ProbeTarget::Ancestors => vec![3, 2],
            ProbeTarget::Boundaries => vec![1, 1],
        };
        ProbeDataset::new(target, groups, 4, examples).unwrap()
    }

    fn random_model(data: &ProbeDataset, mask: ProbeMask, causal: bool) -> ProbeModel {
        let config = ProbeConfig {
            heads: 2,
            pos_dim: 3,
            mask,
            causal,
            ..ProbeConfig::default()
        };
        let mut rng = seeded(11);
        let mut m = ProbeModel::init(&config, data, 3, &mut rng);
        let normal = Normal::new(0.0, 0.7).unwrap();
        for w in m.weights_mut() {
            *w = normal.sample(&mut rng);
        }
        for p in m.positions_mut() {
            *p = normal.sample(&mut rng);
        }
        m
    }

    fn gradient_error(model: &ProbeModel, data: &ProbeDataset) -> f64 {
        let refs: Vec<&ProbeExample> = data.examples.iter().collect();
        let (_, gw, gp) = loss_and_gradient(model, &refs).unwrap();
        let step = 1e-5;
        let mut worst: f64 = 0.0;
        let numeric = |m: &ProbeModel| loss_and_gradient(m, &refs).unwrap().0;
        for (which, analytic) in [(0, &gw), (1, &gp)] {
            for k in 0..analytic.len() {
                let mut plus = model.clone();
                let mut minus = model.clone();
                if which == 0 {
                    plus.weights_mut()[k] += step;
                    minus.weights_mut()[k] -= step;
                } else {
                    plus.positions_mut()[k] += step;
                    minus.positions_mut()[k] -= step;
                }
                let fd = (numeric(&plus) - numeric(&minus)) / (2.0 * step);
                let err = (fd - analytic[k]).abs() / fd.abs().max(analytic[k].abs()).max(1e-6);
                worst = worst.max(err);
            }
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        for target in [ProbeTarget::Ancestors, ProbeTarget::Boundaries] {
            let data = small_dataset(target);
            for (mask, causal) in [(ProbeMask::Full, false), (ProbeMask::Full, true), (ProbeMask::Local(1), false)] {
                let m = random_model(&data, mask, causal);
                let err = gradient_error(&m, &data);
                assert!(err <= 1e-4, "{target} {mask} causal={causal}: {err}");
            }
        }
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let data = small_dataset(ProbeTarget::Ancestors);
        for mask in [ProbeMask::Full, ProbeMask::Local(0), ProbeMask::Local(1)] {
            for causal in [false, true] {
                let m = random_model(&data, mask, causal);
                for r in 0..2 {
                    for (i, (lo, w)) in m.attention(3, r).unwrap().iter().enumerate() {
                        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                        if let ProbeMask::Local(d) = mask {
                            assert!(i - lo <= d && lo + w.len() - 1 <= i + d);
                        }
                        if causal {
                            assert!(lo + w.len() <= i + 1);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn delta_zero_is_the_mean_of_head_maps() {
        let data = small_dataset(ProbeTarget::Ancestors);
        let m = random_model(&data, ProbeMask::Local(0), false);
        let e = &data.examples[0];
        let g = m.forward(&e.hidden).unwrap();
        let out = m.out_dim();
        for i in 0..3 {
            for o in 0..out {
                let expected: f64 = (0..2)
                    .map(|r| dot(&m.weights()[(r * out + o) * 4..(r * out + o + 1) * 4], &e.hidden[i * 4..(i + 1) * 4]))
                    .sum::<f64>()
                    / 2.0;
                assert!((g[i * out + o] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_is_linear_in_hidden_states() {
        let data = small_dataset(ProbeTarget::Ancestors);
        let m = random_model(&data, ProbeMask::Full, false);
        let a = &data.examples[0].hidden;
        let b = &data.examples[1].hidden;
        let sum: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + y).collect();
        let (ga, gb, gs) = (m.forward(a).unwrap(), m.forward(b).unwrap(), m.forward(&sum).unwrap());
        for k in 0..gs.len() {
            assert!((gs[k] - ga[k] - gb[k]).abs() < 1e-10);
        }
        assert!(matches!(m.forward(&[0.0; 16]), Err(ProbeError::LengthExceeded { len: 4, capacity: 3 })));
    }

    #[test]
    fn zero_maps_give_uniform_posteriors() {
        let data = small_dataset(ProbeTarget::Ancestors);
        let config = ProbeConfig {
            heads: 2,
            pos_dim: 3,
            ..ProbeConfig::default()
        };
        let m = ProbeModel::init(&config, &data, 3, &mut seeded(0));
        assert!(m.forward(&data.examples[0].hidden).unwrap().iter().all(|&v| v == 0.0));
        let refs: Vec<&ProbeExample> = data.examples.iter().collect();
        let (loss, _, _) = loss_and_gradient(&m, &refs).unwrap();
        assert!((loss - (3f64.ln() + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn planted_toy_is_learned() {
        let g = toy();
        let spec = FixtureSpec::new(40, HiddenProfile::Planted { noise: 0.0, shift: 0 }, AttentionProfile::UniformCausal);
        let f = synthesize_fixture(&g, &spec, 1);
        for target in [ProbeTarget::Ancestors, ProbeTarget::Boundaries] {
            let data = ProbeDataset::from_dump(&g, &f.dump, &f.derivations, 0, target).unwrap();
            let config = ProbeConfig {
                heads: 2,
                pos_dim: 8,
                mask: ProbeMask::Local(0),
                target,
                iterations: 300,
                batch: 16,
                lr: 0.05,
                ..ProbeConfig::default()
            };
            let out = probe_train(&config, &data, 5).unwrap();
            let table = probe_eval(&out.model, &data).unwrap();
            assert_eq!(table.min_accuracy(), 1.0, "{target}: {table:?}");
            assert!(out.trace.last().unwrap().loss < out.trace[0].loss);
        }
    }

    #[test]
    fn training_is_deterministic_and_the_model_round_trips() {
        let data = small_dataset(ProbeTarget::Boundaries);
        let config = ProbeConfig {
            heads: 2,
            pos_dim: 3,
            iterations: 20,
            batch: 1,
            ..ProbeConfig::default()
        };
        let a = probe_train(&config, &data, 9).unwrap();
        let b = probe_train(&config, &data, 9).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.trace, b.trace);
        let bytes = write_model(&a.model);
        assert_eq!(read_model(&bytes).unwrap(), a.model);
        assert!(read_model(&bytes[..bytes.len() - 1]).is_err());
        assert!(read_model(b"nope").is_err());
    }

    #[test]
    fn eval_reports_base_rates() {
        let data = small_dataset(ProbeTarget::Boundaries);
        let config = ProbeConfig {
            heads: 1,
            pos_dim: 2,
            target: ProbeTarget::Boundaries,
            ..ProbeConfig::default()
        };
        // Zero maps predict "not an end" everywhere.
        let m = ProbeModel::init(&config, &data, 3, &mut seeded(0));
        let t = probe_eval(&m, &data).unwrap();
        for l in &t.levels {
            let pos = l.positive_rate.unwrap();
            assert!((l.accuracy - (1.0 - pos)).abs() < 1e-12);
        }
        assert!(t.to_csv().starts_with("level,accuracy"));
    }

    #[test]
    fn divergence_is_reported() {
        let data = small_dataset(ProbeTarget::Ancestors);
        let config = ProbeConfig {
            heads: 1,
            pos_dim: 2,
            lr: f64::INFINITY,
            iterations: 3,
            ..ProbeConfig::default()
        };
        assert!(matches!(probe_train(&config, &data, 0), Err(ProbeError::Divergence { .. })));
    }
}
