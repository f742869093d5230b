use thiserror::Error;

use crate::grammar::SymbolId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DerivationError {
    #[error("inconsistent derivation: {0}")]
    Inconsistent(String),
}

/// A terminal string together with its full derivation annotations.
///
/// Levels are numbered `1..=L` as in the grammar; positions and indices into
/// level sequences are 0-based. For every terminal position `i` and level `ℓ`,
/// `ancestor_index(ℓ, i)` is the index of the level-ℓ symbol whose subtree
/// contains `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Derivation {
    levels: Vec<Vec<SymbolId>>,
    parents: Vec<Vec<usize>>,
    ancestors: Vec<Vec<usize>>,
}

impl Derivation {
    /// Builds a derivation from the symbol sequence of every level and the
    /// parent links of levels `2..=L` (`parents[0]` must be empty).
    pub fn from_levels(levels: Vec<Vec<SymbolId>>, parents: Vec<Vec<usize>>) -> Result<Self, DerivationError> {
        let depth = levels.len();
        if depth < 2 || parents.len() != depth {
            return Err(DerivationError::Inconsistent("level count mismatch".into()));
        }
        if levels[0].len() != 1 || !parents[0].is_empty() {
            return Err(DerivationError::Inconsistent("level 1 must hold exactly the root".into()));
        }
        for l in 1..depth {
            if parents[l].len() != levels[l].len() {
                return Err(DerivationError::Inconsistent(format!("parent links of level {}", l + 1)));
            }
            if parents[l].iter().any(|&p| p >= levels[l - 1].len()) {
                return Err(DerivationError::Inconsistent(format!("parent out of range on level {}", l + 1)));
            }
        }
        let n = levels[depth - 1].len();
        let mut ancestors = vec![Vec::new(); depth];
        ancestors[depth - 1] = (0..n).collect();
        for l in (0..depth - 1).rev() {
            ancestors[l] = ancestors[l + 1].iter().map(|&k| parents[l + 1][k]).collect();
        }
        Ok(Derivation {
            levels,
            parents,
            ancestors,
        })
    }

    /// Rebuilds a derivation from its per-position ancestor indices and
    /// symbols (`indices[ℓ-1][i]`, `symbols[ℓ-1][i]`). Monotonicity of the
    /// indices is not checked here; [`super::boundaries`] reports it.
    pub fn from_annotations(indices: Vec<Vec<usize>>, symbols: Vec<Vec<SymbolId>>) -> Result<Self, DerivationError> {
        let depth = indices.len();
        let bad = |m: String| Err(DerivationError::Inconsistent(m));
        if depth < 2 || symbols.len() != depth {
            return bad("level count mismatch".into());
        }
        let n = indices[depth - 1].len();
        if indices.iter().any(|r| r.len() != n) || symbols.iter().any(|r| r.len() != n) {
            return bad("annotation rows differ in length".into());
        }
        if indices[depth - 1].iter().enumerate().any(|(i, &p)| p != i) {
            return bad("terminal-level indices must be the positions".into());
        }
        if indices[0].iter().any(|&p| p != 0) {
            return bad("root-level indices must all be 0".into());
        }
        let mut levels: Vec<Vec<SymbolId>> = Vec::with_capacity(depth);
        let mut parents: Vec<Vec<usize>> = vec![Vec::new(); depth];
        for l in 0..depth {
            let width = indices[l].iter().max().map_or(0, |&m| m + 1);
            let mut row: Vec<Option<SymbolId>> = vec![None; width];
            for i in 0..n {
                let slot = &mut row[indices[l][i]];
                match *slot {
                    None => *slot = Some(symbols[l][i]),
                    Some(s) if s != symbols[l][i] => {
                        return bad(format!("level {} index {} has two symbols", l + 1, indices[l][i]))
                    }
                    _ => {}
                }
            }
            let row: Option<Vec<SymbolId>> = row.into_iter().collect();
            let Some(row) = row else {
                return bad(format!("level {} has unused indices", l + 1));
            };
            if l > 0 {
                let mut par: Vec<Option<usize>> = vec![None; row.len()];
                for i in 0..n {
                    let slot = &mut par[indices[l][i]];
                    match *slot {
                        None => *slot = Some(indices[l - 1][i]),
                        Some(p) if p != indices[l - 1][i] => {
                            return bad(format!("level {} index {} has two parents", l + 1, indices[l][i]))
                        }
                        _ => {}
                    }
                }
                parents[l] = par.into_iter().map(|p| p.unwrap()).collect();
            }
            levels.push(row);
        }
        Ok(Derivation {
            levels,
            parents,
            ancestors: indices,
        })
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn len(&self) -> usize {
        self.levels[self.depth() - 1].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The terminal string `x`.
    pub fn terminals(&self) -> &[SymbolId] {
        &self.levels[self.depth() - 1]
    }

    /// The symbol sequence `s_ℓ` of a level.
    pub fn level(&self, level: usize) -> &[SymbolId] {
        &self.levels[level - 1]
    }

    /// Parent index (into level `level - 1`) of each symbol on `level`.
    pub fn parents(&self, level: usize) -> &[usize] {
        &self.parents[level - 1]
    }

    pub fn ancestor_indices(&self, level: usize) -> &[usize] {
        &self.ancestors[level - 1]
    }

    pub fn ancestor_index(&self, level: usize, position: usize) -> usize {
        self.ancestors[level - 1][position]
    }

    pub fn ancestor_symbol(&self, level: usize, position: usize) -> SymbolId {
        self.levels[level - 1][self.ancestors[level - 1][position]]
    }

    pub fn ancestor_symbols(&self, level: usize) -> Vec<SymbolId> {
        self.ancestors[level - 1]
            .iter()
            .map(|&k| self.levels[level - 1][k])
            .collect()
    }
}

/// NT-end indicators and the deepest NT-end level of every position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryProfile {
    /// `ends[ℓ-1][i]` for `ℓ ∈ 1..L`.
    ends: Vec<Vec<bool>>,
    /// Level in `1..=L`; `L` means no nonterminal ends at the position.
    deepest: Vec<usize>,
}

impl BoundaryProfile {
    /// Grammar depth `L` (the sentinel value of [`Self::deepest`]).
    pub fn depth(&self) -> usize {
        self.ends.len() + 1
    }

    pub fn len(&self) -> usize {
        self.deepest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deepest.is_empty()
    }

    /// Whether position `i` is the last terminal of its level-`level` ancestor,
    /// for `level ∈ 1..L`.
    pub fn is_end(&self, level: usize, i: usize) -> bool {
        self.ends[level - 1][i]
    }

    pub fn ends(&self, level: usize) -> &[bool] {
        &self.ends[level - 1]
    }

    /// Closest-to-root level whose subtree ends at `i`, or `L` if none does.
    pub fn deepest(&self, i: usize) -> usize {
        self.deepest[i]
    }

    pub fn deepest_all(&self) -> &[usize] {
        &self.deepest
    }
}

/// Computes boundaries from ancestor indices alone (`indices[ℓ-1][i]`).
pub fn boundaries_from_indices(indices: &[Vec<usize>]) -> Result<BoundaryProfile, DerivationError> {
    let depth = indices.len();
    let n = indices.last().map_or(0, Vec::len);
    let mut ends = Vec::with_capacity(depth.saturating_sub(1));
    for (l, row) in indices.iter().enumerate().take(depth.saturating_sub(1)) {
        if row.len() != n {
            return Err(DerivationError::Inconsistent("annotation rows differ in length".into()));
        }
        if let Some(i) = (1..n).find(|&i| row[i] < row[i - 1]) {
            return Err(DerivationError::Inconsistent(format!(
                "ancestor indices of level {} decrease at position {i}",
                l + 1
            )));
        }
        ends.push((0..n).map(|i| i + 1 == n || row[i] != row[i + 1]).collect::<Vec<bool>>());
    }
    let deepest = (0..n)
        .map(|i| {
            (0..ends.len())
                .find(|&l| ends[l][i])
                .map_or(depth, |l| l + 1)
        })
        .collect();
    Ok(BoundaryProfile { ends, deepest })
}

/// NT-end boundary profile of a derivation.
pub fn boundaries(d: &Derivation) -> Result<BoundaryProfile, DerivationError> {
    boundaries_from_indices(&d.ancestors)
}
