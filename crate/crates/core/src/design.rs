//! Design matrices and expanded model matrices for two-level factorial designs.
//!
//! Rows are treatment combinations `j = 0..2^K` (files and reports show them
//! 1-based). Column 0 of a [`ModelMatrix`] is the mean column; the remaining
//! columns are the factorial effects, ordered as: the `K` main effects, then
//! the two-way interactions, then three-way, and so on, each group sorted
//! lexicographically by factor position.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest factor count accepted by [`DesignSpec::new`].
pub const DEFAULT_MAX_FACTORS: usize = 20;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunOrder {
    /// First column flips slowest; first row is all low levels.
    #[default]
    Lexicographic,
    /// Lexicographic columns in reverse order: the first factor alternates fastest.
    Yates,
}

impl RunOrder {
    /// Bit of the (0-based) row index that carries the level of factor `k`.
    fn row_bit(self, k: usize, factors: usize) -> usize {
        match self {
            RunOrder::Lexicographic => factors - 1 - k,
            RunOrder::Yates => k,
        }
    }
}

/// A balanced `2^K` design with `r` replicates per treatment combination.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DesignSpec {
    factors: usize,
    replicates: usize,
    order: RunOrder,
    names: Vec<String>,
}

impl DesignSpec {
    pub fn new(factors: usize, replicates: usize) -> Result<Self> {
        Self::with_cap(factors, replicates, DEFAULT_MAX_FACTORS)
    }

    /// Like [`DesignSpec::new`] with a custom upper bound on `K`.
    pub fn with_cap(factors: usize, replicates: usize, max_factors: usize) -> Result<Self> {
        let cap = max_factors.min(31);
        if factors == 0 || factors > cap {
            return Err(Error::InvalidDesign(format!(
                "factor count {factors} outside 1..={cap}"
            )));
        }
        if replicates == 0 {
            return Err(Error::InvalidDesign("replicates must be at least 1".into()));
        }
        replicates
            .checked_mul(1usize << factors)
            .ok_or_else(|| Error::InvalidDesign("unit count overflows".into()))?;
        Ok(Self {
            factors,
            replicates,
            order: RunOrder::Lexicographic,
            names: default_factor_names(factors),
        })
    }

    pub fn with_order(mut self, order: RunOrder) -> Self {
        self.order = order;
        self
    }

    pub fn with_factor_names<S: AsRef<str>>(mut self, names: &[S]) -> Result<Self> {
        if names.len() != self.factors {
            return Err(Error::DimensionMismatch {
                what: "factor names",
                expected: self.factors,
                found: names.len(),
            });
        }
        let mut seen = std::collections::HashSet::new();
        for name in names {
            let name = name.as_ref();
            if name.is_empty() || name.contains([':', ',', '\t', ' ']) {
                return Err(Error::InvalidDesign(format!("invalid factor name `{name}`")));
            }
            if name == "mean" || !seen.insert(name.to_string()) {
                return Err(Error::InvalidDesign(format!("duplicate factor name `{name}`")));
            }
        }
        self.names = names.iter().map(|s| s.as_ref().to_string()).collect();
        Ok(self)
    }

    pub fn factors(&self) -> usize {
        self.factors
    }

    pub fn replicates(&self) -> usize {
        self.replicates
    }

    pub fn order(&self) -> RunOrder {
        self.order
    }

    pub fn factor_names(&self) -> &[String] {
        &self.names
    }

    /// Number of treatment combinations, `2^K`.
    pub fn combinations(&self) -> usize {
        1 << self.factors
    }

    /// Total number of units, `n = r * 2^K`.
    pub fn units(&self) -> usize {
        self.replicates * self.combinations()
    }
}

fn default_factor_names(k: usize) -> Vec<String> {
    (0..k)
        .map(|i| {
            if i < 26 {
                ((b'A' + i as u8) as char).to_string()
            } else {
                format!("F{}", i + 1)
            }
        })
        .collect()
}

/// The `2^K x K` matrix of factor levels, one row per treatment combination.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DesignMatrix {
    factors: usize,
    order: RunOrder,
    names: Vec<String>,
    entries: Vec<i8>,
}

impl DesignMatrix {
    pub fn factors(&self) -> usize {
        self.factors
    }

    pub fn order(&self) -> RunOrder {
        self.order
    }

    pub fn factor_names(&self) -> &[String] {
        &self.names
    }

    pub fn rows(&self) -> usize {
        1 << self.factors
    }

    pub fn get(&self, row: usize, factor: usize) -> i8 {
        self.entries[row * self.factors + factor]
    }

    pub fn row(&self, row: usize) -> &[i8] {
        &self.entries[row * self.factors..(row + 1) * self.factors]
    }

    pub fn column(&self, factor: usize) -> Vec<i8> {
        (0..self.rows()).map(|j| self.get(j, factor)).collect()
    }
}

pub fn build_design_matrix(spec: &DesignSpec) -> DesignMatrix {
    let k = spec.factors();
    let rows = spec.combinations();
    let mut entries = Vec::with_capacity(rows * k);
    for j in 0..rows {
        for f in 0..k {
            let bit = spec.order().row_bit(f, k);
            entries.push(if (j >> bit) & 1 == 1 { 1 } else { -1 });
        }
    }
    DesignMatrix {
        factors: k,
        order: spec.order(),
        names: spec.factor_names().to_vec(),
        entries,
    }
}

/// One labelled column of the model matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Effect {
    pub name: String,
    /// Bit `k` set when factor `k` participates.
    pub factor_mask: u32,
}

impl Effect {
    /// Interaction order; 0 for the mean column, 1 for main effects.
    pub fn order(&self) -> usize {
        self.factor_mask.count_ones() as usize
    }
}

/// The `2^K x 2^K` matrix of +/-1 contrasts with named effect columns.
///
/// Entries are derived from the row and column bit patterns rather than held
/// densely, so the type stays small for large `K`; [`ModelMatrix::to_dense`]
/// materialises the signed 8-bit table.
#[derive(Clone, Debug)]
pub struct ModelMatrix {
    factors: usize,
    order: RunOrder,
    factor_names: Vec<String>,
    effects: Vec<Effect>,
    row_masks: Vec<u32>,
    by_mask: HashMap<u32, usize>,
}

impl PartialEq for ModelMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.factors == other.factors
            && self.order == other.order
            && self.factor_names == other.factor_names
    }
}

pub fn expand_model_matrix(g: &DesignMatrix) -> ModelMatrix {
    let k = g.factors();
    let single_char = g.factor_names().iter().all(|n| n.chars().count() == 1);
    let mut effects = vec![Effect {
        name: "mean".into(),
        factor_mask: 0,
    }];
    for size in 1..=k {
        for combo in Combinations::new(k, size) {
            let mask = combo.iter().fold(0u32, |m, &f| m | (1 << f));
            let parts: Vec<&str> = combo.iter().map(|&f| g.factor_names()[f].as_str()).collect();
            let name = if single_char { parts.concat() } else { parts.join(":") };
            effects.push(Effect {
                name,
                factor_mask: mask,
            });
        }
    }
    let row_masks = effects
        .iter()
        .map(|e| {
            (0..k)
                .filter(|&f| e.factor_mask & (1 << f) != 0)
                .fold(0u32, |m, f| m | (1 << g.order().row_bit(f, k)))
        })
        .collect();
    let by_mask = effects
        .iter()
        .enumerate()
        .map(|(i, e)| (e.factor_mask, i))
        .collect();
    ModelMatrix {
        factors: k,
        order: g.order(),
        factor_names: g.factor_names().to_vec(),
        effects,
        row_masks,
        by_mask,
    }
}

impl ModelMatrix {
    /// Shorthand for `expand_model_matrix(&build_design_matrix(spec))`.
    pub fn for_design(spec: &DesignSpec) -> Self {
        expand_model_matrix(&build_design_matrix(spec))
    }

    pub fn factors(&self) -> usize {
        self.factors
    }

    pub fn order(&self) -> RunOrder {
        self.order
    }

    pub fn factor_names(&self) -> &[String] {
        &self.factor_names
    }

    /// `2^K`: both the row and the column count.
    pub fn size(&self) -> usize {
        1 << self.factors
    }

    pub fn effects(&self) -> &[Effect] {
        &self.effects
    }

    pub fn label(&self, f: usize) -> &str {
        &self.effects[f].name
    }

    /// Indices `1..2^K` of every factorial effect.
    pub fn effect_ids(&self) -> std::ops::Range<usize> {
        1..self.size()
    }

    pub fn effects_of_order(&self, order: usize) -> Vec<usize> {
        self.effect_ids()
            .filter(|&f| self.effects[f].order() == order)
            .collect()
    }

    /// Bit pattern over row indices: `entry(j, f) = (-1)^order * (-1)^popcount(j & mask)`.
    pub(crate) fn row_mask(&self, f: usize) -> u32 {
        self.row_masks[f]
    }

    #[inline]
    pub fn entry(&self, j: usize, f: usize) -> i8 {
        let parity = (j as u32 & self.row_masks[f]).count_ones() + self.effects[f].factor_mask.count_ones();
        if parity % 2 == 0 {
            1
        } else {
            -1
        }
    }

    pub fn row(&self, j: usize) -> Vec<i8> {
        (0..self.size()).map(|f| self.entry(j, f)).collect()
    }

    pub fn column(&self, f: usize) -> Vec<i8> {
        (0..self.size()).map(|j| self.entry(j, f)).collect()
    }

    /// Row-major signed table.
    pub fn to_dense(&self) -> Vec<i8> {
        let s = self.size();
        let mut out = Vec::with_capacity(s * s);
        for j in 0..s {
            for f in 0..s {
                out.push(self.entry(j, f));
            }
        }
        out
    }

    /// Row index of the combination with every factor level flipped.
    pub fn mirror_row(&self, j: usize) -> usize {
        (self.size() - 1) ^ j
    }

    /// Column index for an effect name such as `"AB"` (or `"x:y"` when factor
    /// names are longer than one character). Factor order within the name is
    /// irrelevant.
    pub fn effect_index(&self, name: &str) -> Result<usize> {
        let name = name.trim();
        if name.is_empty() {
            return Err(Error::EmptyEffectName);
        }
        let single_char = self.factor_names.iter().all(|n| n.chars().count() == 1);
        let parts: Vec<String> = if name.contains(':') || !single_char {
            name.split(':').map(|s| s.trim().to_string()).collect()
        } else {
            name.chars().map(|c| c.to_string()).collect()
        };
        let mut mask = 0u32;
        for part in &parts {
            let k = self
                .factor_names
                .iter()
                .position(|n| n == part)
                .ok_or_else(|| Error::UnknownFactor {
                    name: name.to_string(),
                    factor: part.clone(),
                })?;
            if mask & (1 << k) != 0 {
                return Err(Error::DuplicateFactor {
                    name: name.to_string(),
                    factor: part.clone(),
                });
            }
            mask |= 1 << k;
        }
        Ok(self.by_mask[&mask])
    }

    /// Resolves a list of names, or every effect when `names` is empty.
    pub fn resolve_effects<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<usize>> {
        if names.is_empty() {
            return Ok(self.effect_ids().collect());
        }
        names.iter().map(|n| self.effect_index(n.as_ref())).collect()
    }

    /// Plain comma-separated table: a `j` column (1-based) followed by one
    /// column per labelled effect, entries written as `+1`/`-1`.
    pub fn to_table(&self) -> String {
        let mut out = String::from("j");
        for e in &self.effects {
            out.push(',');
            out.push_str(&e.name);
        }
        out.push('\n');
        for j in 0..self.size() {
            let _ = write!(out, "{}", j + 1);
            for f in 0..self.size() {
                out.push_str(if self.entry(j, f) > 0 { ",+1" } else { ",-1" });
            }
            out.push('\n');
        }
        out
    }

    pub fn write_table<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_table().as_bytes())?;
        Ok(())
    }
}

/// k-subsets of `0..n` in lexicographic order.
struct Combinations {
    n: usize,
    current: Option<Vec<usize>>,
}

impl Combinations {
    fn new(n: usize, k: usize) -> Self {
        Self {
            n,
            current: (k <= n).then(|| (0..k).collect()),
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let out = self.current.clone()?;
        let k = out.len();
        let mut next = out.clone();
        let mut i = k;
        loop {
            if i == 0 {
                self.current = None;
                break;
            }
            i -= 1;
            if next[i] < self.n - k + i {
                next[i] += 1;
                for t in i + 1..k {
                    next[t] = next[t - 1] + 1;
                }
                self.current = Some(next);
                break;
            }
        }
        Some(out)
    }
}
