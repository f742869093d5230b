//! Attention diagnostics over a pool of dumped sequences.
//!
//! The position profile `Ā_{l,h,p}` is the mean attention from a query to
//! the key `p` positions before it. The residual
//! `B_{l,h,j→i} = A_{l,h,j→i} − Ā_{l,h,j−i}` removes that position effect, and
//! the grids below average `B` over pairs selected by NT-end annotations.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::sampler::{boundaries, BoundaryProfile, Derivation};
use crate::tensor::{SequenceDump, TensorDump};

/// Cells with fewer pairs are flagged as low-support.
pub const MIN_SUPPORT: u64 = 10;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AttentionError {
    #[error("the sequence pool is empty")]
    EmptyPool,
    #[error("annotations do not match the dump: {0}")]
    Misaligned(String),
    #[error("level {level} has no NT-ends (valid levels are 1..{depth})")]
    InvalidLevel { level: usize, depth: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionProfile {
    layers: usize,
    heads: usize,
    /// Number of distances `p = 0..len`.
    len: usize,
    /// `Ā` as `[layer][head][p]`.
    mean: Vec<f64>,
    /// Mean over rows of the attention mass within distance `p`.
    cumulative: Vec<f64>,
    pairs: Vec<u64>,
    pool: usize,
}

impl PositionProfile {
    fn at(&self, layer: usize, head: usize, p: usize) -> usize {
        (layer * self.heads + head) * self.len + p
    }

    /// `Ā_{l,h,p}`; 0 beyond the longest sequence.
    pub fn mean(&self, layer: usize, head: usize, p: usize) -> f64 {
        if p < self.len {
            self.mean[self.at(layer, head, p)]
        } else {
            0.0
        }
    }

    /// Mean over all rows of `Σ_{p' ≤ p} A_{j→j−p'}`; rows shorter than `p`
    /// contribute their full mass 1.
    pub fn cumulative(&self, layer: usize, head: usize, p: usize) -> f64 {
        if p < self.len {
            self.cumulative[self.at(layer, head, p)]
        } else {
            1.0
        }
    }

    /// Query–key pairs at distance `p` across the pool.
    pub fn pairs(&self, p: usize) -> u64 {
        self.pairs.get(p).copied().unwrap_or(0)
    }

    pub fn distances(&self) -> usize {
        self.len
    }

    pub fn pool_size(&self) -> usize {
        self.pool
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,head,distance,mean,cumulative,pairs\n");
        for l in 0..self.layers {
            for h in 0..self.heads {
                for p in 0..self.len {
                    writeln!(out, "{l},{h},{p},{},{},{}", self.mean(l, h, p), self.cumulative(l, h, p), self.pairs(p)).unwrap();
                }
            }
        }
        out
    }
}

struct ProfileSums {
    sums: Vec<f64>,
    cum: Vec<f64>,
    finished: Vec<f64>,
    pairs: Vec<u64>,
    rows: u64,
}

fn profile_sums(dump: &TensorDump, s: &SequenceDump, len: usize) -> ProfileSums {
    let h = &dump.header;
    let slots = h.layers * h.heads * len;
    let mut out = ProfileSums {
        sums: vec![0.0; slots],
        cum: vec![0.0; slots],
        finished: vec![0.0; slots + 1],
        pairs: vec![0; len],
        rows: s.len() as u64,
    };
    let n = s.len();
    for p in 0..n {
        out.pairs[p] = (n - p) as u64;
    }
    for l in 0..h.layers {
        for head in 0..h.heads {
            let base = (l * h.heads + head) * len;
            for j in 0..n {
                let row = s.attention_row(h, l, head, j);
                let mut partial = 0.0;
                for p in 0..=j {
                    let a = f64::from(row[j - p]);
                    out.sums[base + p] += a;
                    partial += a;
                    out.cum[base + p] += partial;
                }
                // Distances past j see the full row.
                if j + 1 < len {
                    out.finished[base + j + 1] += 1.0;
                }
            }
        }
    }
    out
}

/// `Ā` over every sequence of the dump.
pub fn position_profile(dump: &TensorDump) -> Result<PositionProfile, AttentionError> {
    if dump.sequences.is_empty() {
        return Err(AttentionError::EmptyPool);
    }
    let h = &dump.header;
    let len = dump.sequences.iter().map(SequenceDump::len).max().unwrap_or(0);
    let parts: Vec<ProfileSums> = dump.sequences.par_iter().map(|s| profile_sums(dump, s, len)).collect();
    let slots = h.layers * h.heads * len;
    let mut sums = vec![0.0; slots];
    let mut cum = vec![0.0; slots];
    let mut finished = vec![0.0; slots + 1];
    let mut pairs = vec![0u64; len];
    let mut rows = 0u64;
    for part in parts {
        for k in 0..slots {
            sums[k] += part.sums[k];
            cum[k] += part.cum[k];
            finished[k] += part.finished[k];
        }
        for p in 0..len {
            pairs[p] += part.pairs[p];
        }
        rows += part.rows;
    }
    let mut mean = vec![0.0; slots];
    let mut cumulative = vec![0.0; slots];
    for block in 0..h.layers * h.heads {
        let mut done = 0.0;
        for p in 0..len {
            let k = block * len + p;
            mean[k] = if pairs[p] > 0 { sums[k] / pairs[p] as f64 } else { 0.0 };
            done += finished[k];
            cumulative[k] = (cum[k] + done) / rows as f64;
        }
    }
    Ok(PositionProfile {
        layers: h.layers,
        heads: h.heads,
        len,
        mean,
        cumulative,
        pairs,
        pool: dump.sequences.len(),
    })
}

/// `B_{l,h,j→i}` for one sequence.
pub fn residual(dump: &TensorDump, s: &SequenceDump, profile: &PositionProfile, layer: usize, head: usize, j: usize, i: usize) -> f64 {
    f64::from(s.attention(&dump.header, layer, head, j, i)) - profile.mean(layer, head, j - i)
}

/// Pool mean of `B` at each `(layer, head, p)`, computed sequence by sequence.
pub fn residual_means(dump: &TensorDump, profile: &PositionProfile) -> Vec<f64> {
    let h = &dump.header;
    let len = profile.len;
    let parts: Vec<Vec<f64>> = dump
        .sequences
        .par_iter()
        .map(|s| {
            let mut sums = vec![0.0; h.layers * h.heads * len];
            for l in 0..h.layers {
                for head in 0..h.heads {
                    for j in 0..s.len() {
                        for i in 0..=j {
                            sums[(l * h.heads + head) * len + j - i] += residual(dump, s, profile, l, head, j, i);
                        }
                    }
                }
            }
            sums
        })
        .collect();
    let mut total = vec![0.0; h.layers * h.heads * len];
    for part in parts {
        for (a, b) in total.iter_mut().zip(part) {
            *a += b;
        }
    }
    for (k, v) in total.iter_mut().enumerate() {
        let pairs = profile.pairs(k % len.max(1));
        if pairs > 0 {
            *v /= pairs as f64;
        }
    }
    total
}

/// Running sum and count of residuals.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Cell {
    pub sum: f64,
    pub count: u64,
}

impl Cell {
    fn add(&mut self, v: f64) {
        self.sum += v;
        self.count += 1;
    }

    fn merge(&mut self, other: &Cell) {
        self.sum += other.sum;
        self.count += other.count;
    }

    /// `None` for an empty cell.
    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }

    pub fn status(&self) -> &'static str {
        match self.count {
            0 => "empty",
            c if c < MIN_SUPPORT => "low_support",
            _ => "ok",
        }
    }
}

/// Mean residual per `(layer, head, row, column)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub layers: usize,
    pub heads: usize,
    pub row_name: String,
    pub col_name: String,
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    cells: Vec<Cell>,
}

impl Grid {
    fn new(layers: usize, heads: usize, row_name: &str, col_name: &str, rows: Vec<String>, cols: Vec<String>) -> Self {
        let size = layers * heads * rows.len() * cols.len();
        Grid {
            layers,
            heads,
            row_name: row_name.into(),
            col_name: col_name.into(),
            rows,
            cols,
            cells: vec![Cell::default(); size],
        }
    }

    fn index(&self, layer: usize, head: usize, row: usize, col: usize) -> usize {
        ((layer * self.heads + head) * self.rows.len() + row) * self.cols.len() + col
    }

    fn add(&mut self, layer: usize, head: usize, row: usize, col: usize, v: f64) {
        let k = self.index(layer, head, row, col);
        self.cells[k].add(v);
    }

    fn merge(&mut self, other: &Grid) {
        for (a, b) in self.cells.iter_mut().zip(&other.cells) {
            a.merge(b);
        }
    }

    pub fn cell(&self, layer: usize, head: usize, row: usize, col: usize) -> Cell {
        self.cells[self.index(layer, head, row, col)]
    }

    /// Pooled over the given layer (all layers when `None`) and all heads.
    pub fn aggregate(&self, layer: Option<usize>, row: usize, col: usize) -> Cell {
        let mut c = Cell::default();
        for l in (0..self.layers).filter(|&l| layer.is_none_or(|x| x == l)) {
            for h in 0..self.heads {
                c.merge(&self.cell(l, h, row, col));
            }
        }
        c
    }

    /// One line per (layer, head) cell, then per-layer and all-layer
    /// aggregates with `all` in the pooled columns.
    pub fn to_csv(&self) -> String {
        let mut out = format!("layer,head,{},{},mean,count,status\n", self.row_name, self.col_name);
        let mut line = |layer: &str, head: &str, r: usize, c: usize, cell: Cell| {
            let mean = cell.mean().map(|m| m.to_string()).unwrap_or_default();
            writeln!(out, "{layer},{head},{},{},{mean},{},{}", self.rows[r], self.cols[c], cell.count, cell.status()).unwrap();
        };
        for l in 0..self.layers {
            for h in 0..self.heads {
                for r in 0..self.rows.len() {
                    for c in 0..self.cols.len() {
                        line(&l.to_string(), &h.to_string(), r, c, self.cell(l, h, r, c));
                    }
                }
            }
        }
        for l in 0..self.layers {
            for r in 0..self.rows.len() {
                for c in 0..self.cols.len() {
                    line(&l.to_string(), "all", r, c, self.aggregate(Some(l), r, c));
                }
            }
        }
        for r in 0..self.rows.len() {
            for c in 0..self.cols.len() {
                line("all", "all", r, c, self.aggregate(None, r, c));
            }
        }
        out
    }

    /// Heatmap of the pooled means (one layer, or all layers when `None`);
    /// empty cells are crossed out.
    pub fn to_svg(&self, layer: Option<usize>) -> String {
        let (cw, ch, left, top) = (48.0, 28.0, 90.0, 40.0);
        let width = left + cw * self.cols.len() as f64 + 10.0;
        let height = top + ch * self.rows.len() as f64 + 10.0;
        let cells: Vec<Vec<Cell>> = (0..self.rows.len())
            .map(|r| (0..self.cols.len()).map(|c| self.aggregate(layer, r, c)).collect())
            .collect();
        let scale = cells
            .iter()
            .flatten()
            .filter_map(Cell::mean)
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1e-12);
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"11\">\n"
        );
        let title = layer.map_or("all layers".to_string(), |l| format!("layer {l}"));
        writeln!(svg, "<text x=\"4\" y=\"14\">{} × {} ({title})</text>", self.row_name, self.col_name).unwrap();
        for (c, name) in self.cols.iter().enumerate() {
            writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{name}</text>", left + cw * (c as f64 + 0.5), top - 6.0).unwrap();
        }
        for (r, name) in self.rows.iter().enumerate() {
            let y = top + ch * r as f64;
            writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{name}</text>", left - 6.0, y + ch * 0.65).unwrap();
            for (c, cell) in cells[r].iter().enumerate() {
                let x = left + cw * c as f64;
                match cell.mean() {
                    Some(m) => {
                        let t = (m / scale).clamp(-1.0, 1.0);
                        let (red, blue) = if t >= 0.0 {
                            (255.0, 255.0 * (1.0 - t))
                        } else {
                            (255.0 * (1.0 + t), 255.0)
                        };
                        let green = 255.0 * (1.0 - t.abs());
                        writeln!(
                            svg,
                            "<rect x=\"{x}\" y=\"{y}\" width=\"{cw}\" height=\"{ch}\" fill=\"rgb({},{},{})\" stroke=\"#888\"/>",
                            red as u8, green as u8, blue as u8
                        )
                        .unwrap();
                        writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{m:.3}</text>", x + cw / 2.0, y + ch * 0.65).unwrap();
                    }
                    None => {
                        writeln!(svg, "<rect x=\"{x}\" y=\"{y}\" width=\"{cw}\" height=\"{ch}\" fill=\"#eee\" stroke=\"#888\"/>").unwrap();
                        writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">×</text>", x + cw / 2.0, y + ch * 0.65).unwrap();
                    }
                }
            }
        }
        svg.push_str("</svg>\n");
        svg
    }
}

fn check_alignment(dump: &TensorDump, derivations: &[Derivation]) -> Result<Vec<BoundaryProfile>, AttentionError> {
    if dump.sequences.is_empty() {
        return Err(AttentionError::EmptyPool);
    }
    if dump.sequences.len() != derivations.len() {
        return Err(AttentionError::Misaligned(format!(
            "{} sequences vs {} annotated samples",
            dump.sequences.len(),
            derivations.len()
        )));
    }
    dump.sequences
        .iter()
        .zip(derivations)
        .enumerate()
        .map(|(k, (s, d))| {
            if s.len() != d.len() {
                return Err(AttentionError::Misaligned(format!("sequence {k} has length {} vs {}", s.len(), d.len())));
            }
            boundaries(d).map_err(|e| AttentionError::Misaligned(e.to_string()))
        })
        .collect()
}

fn pooled<F>(dump: &TensorDump, template: &Grid, per_sequence: F) -> Grid
where
    F: Fn(usize, &SequenceDump, &mut Grid) + Sync,
{
    let parts: Vec<Grid> = dump
        .sequences
        .par_iter()
        .enumerate()
        .map(|(k, s)| {
            let mut g = template.clone();
            per_sequence(k, s, &mut g);
            g
        })
        .collect();
    let mut total = template.clone();
    for g in &parts {
        total.merge(g);
    }
    total
}

pub const TARGET_OFFSETS: [isize; 5] = [-2, -1, 0, 1, 2];
pub const END_OFFSETS: [isize; 3] = [-1, 0, 1];

fn shifted(i: usize, delta: isize, n: usize) -> Option<usize> {
    let k = i as isize + delta;
    (0..n as isize).contains(&k).then_some(k as usize)
}

/// Mean `B` over pairs `i ≤ j` whose key shifted by `δ` is a deepest NT-end
/// at level `ℓ`. Rows are levels `1..L`, columns `δ ∈ −2..=2`.
pub fn end_targeting_grid(dump: &TensorDump, profile: &PositionProfile, derivations: &[Derivation]) -> Result<Grid, AttentionError> {
    let bounds = check_alignment(dump, derivations)?;
    let depth = bounds[0].depth();
    let h = &dump.header;
    let template = Grid::new(
        h.layers,
        h.heads,
        "level",
        "delta",
        (1..depth).map(|l| l.to_string()).collect(),
        TARGET_OFFSETS.iter().map(|d| d.to_string()).collect(),
    );
    Ok(pooled(dump, &template, |k, s, g| {
        let b = &bounds[k];
        let n = s.len();
        for l in 0..h.layers {
            for head in 0..h.heads {
                for j in 0..n {
                    for i in 0..=j {
                        let res = residual(dump, s, profile, l, head, j, i);
                        for (c, &delta) in TARGET_OFFSETS.iter().enumerate() {
                            if let Some(key) = shifted(i, delta, n) {
                                let level = b.deepest(key);
                                if level < depth {
                                    g.add(l, head, level - 1, c, res);
                                }
                            }
                        }
                    }
                }
            }
        }
    }))
}

/// Mean `B` over pairs `i < j` with `i + δ₁` and `j + δ₂` both ends at
/// `level`. Rows are `δ₁`, columns `δ₂`, each in `−1..=1`.
pub fn end_to_end_grid(
    dump: &TensorDump,
    profile: &PositionProfile,
    derivations: &[Derivation],
    level: usize,
) -> Result<Grid, AttentionError> {
    let bounds = check_alignment(dump, derivations)?;
    let depth = bounds[0].depth();
    if level == 0 || level >= depth {
        return Err(AttentionError::InvalidLevel { level, depth });
    }
    let h = &dump.header;
    let names: Vec<String> = END_OFFSETS.iter().map(|d| d.to_string()).collect();
    let template = Grid::new(h.layers, h.heads, "delta_key", "delta_query", names.clone(), names);
    Ok(pooled(dump, &template, |k, s, g| {
        let b = &bounds[k];
        let n = s.len();
        let end = |p: usize, d: isize| shifted(p, d, n).is_some_and(|q| b.is_end(level, q));
        for l in 0..h.layers {
            for head in 0..h.heads {
                for j in 0..n {
                    for i in 0..j {
                        let res = residual(dump, s, profile, l, head, j, i);
                        for (r, &d1) in END_OFFSETS.iter().enumerate() {
                            if !end(i, d1) {
                                continue;
                            }
                            for (c, &d2) in END_OFFSETS.iter().enumerate() {
                                if end(j, d2) {
                                    g.add(l, head, r, c, res);
                                }
                            }
                        }
                    }
                }
            }
        }
    }))
}

/// Mean `B` over pairs `i < j` where both are NT-end tokens, keyed by
/// `ℓ′ = 𝔟♯(j)`, `ℓ = 𝔟♯(i)` and `r = 𝔭_ℓ(j) − 𝔭_ℓ(i)` for `r ≤ max_r`.
/// Rows are `ℓ′→ℓ`, columns `r`.
pub fn end_to_end_by_distance(
    dump: &TensorDump,
    profile: &PositionProfile,
    derivations: &[Derivation],
    max_r: usize,
) -> Result<Grid, AttentionError> {
    let bounds = check_alignment(dump, derivations)?;
    let depth = bounds[0].depth();
    let h = &dump.header;
    let mut rows = Vec::new();
    let mut row_of = BTreeMap::new();
    for lq in 1..depth {
        for lk in 1..depth {
            row_of.insert((lq, lk), rows.len());
            rows.push(format!("{lq}->{lk}"));
        }
    }
    let template = Grid::new(h.layers, h.heads, "levels", "r", rows, (0..=max_r).map(|r| r.to_string()).collect());
    Ok(pooled(dump, &template, |k, s, g| {
        let b = &bounds[k];
        let d = &derivations[k];
        let n = s.len();
        for j in 0..n {
            let lq = b.deepest(j);
            if lq == depth {
                continue;
            }
            for i in 0..j {
                let lk = b.deepest(i);
                if lk == depth {
                    continue;
                }
                let r = d.ancestor_index(lk, j) - d.ancestor_index(lk, i);
                if r > max_r {
                    continue;
                }
                let row = row_of[&(lq, lk)];
                for l in 0..h.layers {
                    for head in 0..h.heads {
                        g.add(l, head, row, r, residual(dump, s, profile, l, head, j, i));
                    }
                }
            }
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::tests::toy;
    use crate::grammar::GrammarFamily;
    use crate::parser::annotate;
    use crate::tensor::{fixture_from_derivations, synthesize_fixture, AttentionProfile, FixtureSpec, HiddenProfile};

    fn fixture(profile: AttentionProfile, n: usize) -> (TensorDump, Vec<Derivation>) {
        let g = GrammarFamily::Cfg3i.spec(2).synthesize().unwrap();
        let mut spec = FixtureSpec::new(n, HiddenProfile::Random { dim: 1 }, profile);
        spec.layers = 1;
        spec.heads = 2;
        let f = synthesize_fixture(&g, &spec, 3);
        (f.dump, f.derivations)
    }

    #[test]
    fn single_sequence_profile() {
        let (dump, _) = fixture(AttentionProfile::EndMass { boost: 2.0 }, 1);
        let p = position_profile(&dump).unwrap();
        let s = &dump.sequences[0];
        let n = s.len();
        for dist in [0, 1, 5] {
            let direct: f64 = (dist..n).map(|j| f64::from(s.attention(&dump.header, 0, 1, j, j - dist))).sum::<f64>() / (n - dist) as f64;
            assert!((p.mean(0, 1, dist) - direct).abs() < 1e-12);
        }
        assert!((p.cumulative(0, 0, n - 1) - 1.0).abs() < 1e-6);
        for dist in 1..n {
            assert!(p.cumulative(0, 0, dist) >= p.cumulative(0, 0, dist - 1) - 1e-6);
        }
    }

    #[test]
    fn centering_identity() {
        let (dump, _) = fixture(AttentionProfile::AdjacentEnd { mass: 0.5 }, 12);
        let p = position_profile(&dump).unwrap();
        assert!(residual_means(&dump, &p).iter().all(|m| m.abs() < 1e-6));
        let empty = TensorDump {
            header: dump.header,
            sequences: Vec::new(),
        };
        assert_eq!(position_profile(&empty), Err(AttentionError::EmptyPool));
    }

    #[test]
    fn distance_only_attention_has_zero_residual() {
        let g = toy();
        let d = annotate(&g, &[4, 4, 5, 5]).unwrap();
        let pool = vec![d.clone(), d.clone(), d];
        let mut spec = FixtureSpec::new(3, HiddenProfile::Random { dim: 1 }, AttentionProfile::UniformWindow);
        spec.layers = 1;
        spec.heads = 1;
        let dump = fixture_from_derivations(&g, &pool, &spec, 0);
        let p = position_profile(&dump).unwrap();
        for s in &dump.sequences {
            for j in 0..4 {
                for i in 0..=j {
                    assert_eq!(residual(&dump, s, &p, 0, 0, j, i), 0.0);
                }
            }
        }
        let grid = end_targeting_grid(&dump, &p, &pool).unwrap();
        assert_eq!(grid.rows, vec!["1", "2"]);
        assert!((0..2).all(|r| (0..5).all(|c| grid.aggregate(None, r, c).mean().is_none_or(|m| m == 0.0))));
    }

    #[test]
    fn end_mass_peaks_at_zero_offset() {
        let (dump, ders) = fixture(AttentionProfile::EndMass { boost: 4.0 }, 20);
        let p = position_profile(&dump).unwrap();
        let grid = end_targeting_grid(&dump, &p, &ders).unwrap();
        for r in 0..grid.rows.len() {
            let at_zero = grid.aggregate(None, r, 2);
            let Some(m0) = at_zero.mean() else { continue };
            for c in [0, 1, 3, 4] {
                if let Some(m) = grid.aggregate(None, r, c).mean() {
                    assert!(m0 > m, "level {} delta {}: {m0} vs {m}", grid.rows[r], grid.cols[c]);
                }
            }
        }
    }

    #[test]
    fn toy_distance_cell() {
        let g = toy();
        let d = annotate(&g, &[4, 4, 5, 5]).unwrap();
        let mut spec = FixtureSpec::new(1, HiddenProfile::Random { dim: 1 }, AttentionProfile::UniformCausal);
        spec.layers = 1;
        spec.heads = 1;
        let dump = fixture_from_derivations(&g, std::slice::from_ref(&d), &spec, 0);
        let p = position_profile(&dump).unwrap();
        let t = end_to_end_by_distance(&dump, &p, std::slice::from_ref(&d), 3).unwrap();
        // Only the pair (j = 3, i = 1) qualifies: 𝔟♯ = (3, 2, 3, 1).
        let row = t.rows.iter().position(|r| r == "1->2").unwrap();
        assert_eq!(t.cell(0, 0, row, 1).count, 1);
        let total: u64 = (0..t.rows.len()).flat_map(|r| (0..4).map(move |c| (r, c))).map(|(r, c)| t.cell(0, 0, r, c).count).sum();
        assert_eq!(total, 1);
        for r in 0..t.rows.len() {
            assert_eq!(t.cell(0, 0, r, 0).count, 0);
        }
        assert!(t.to_csv().contains("0,0,1->2,1,"));
        assert!(t.to_svg(None).contains("×"));
    }

    #[test]
    fn adjacent_end_peaks_at_smallest_distance() {
        let (dump, ders) = fixture(AttentionProfile::AdjacentEnd { mass: 0.6 }, 20);
        let p = position_profile(&dump).unwrap();
        let t = end_to_end_by_distance(&dump, &p, &ders, 6).unwrap();
        let mut checked = 0;
        for r in 0..t.rows.len() {
            let means: Vec<Option<f64>> = (0..=6).map(|c| t.aggregate(None, r, c).mean()).collect();
            let Some(best) = means[1] else { continue };
            checked += 1;
            for m in means.iter().skip(2).flatten() {
                assert!(best > *m, "row {}: {means:?}", t.rows[r]);
            }
        }
        assert!(checked > 10);
    }

    #[test]
    fn end_to_end_levels_and_alignment() {
        let (dump, ders) = fixture(AttentionProfile::UniformCausal, 4);
        let p = position_profile(&dump).unwrap();
        assert!(matches!(end_to_end_grid(&dump, &p, &ders, 7), Err(AttentionError::InvalidLevel { .. })));
        assert!(matches!(end_targeting_grid(&dump, &p, &ders[..2]), Err(AttentionError::Misaligned(_))));
        let g = end_to_end_grid(&dump, &p, &ders, 6).unwrap();
        assert!(g.aggregate(None, 1, 1).count > 0);
    }
}
