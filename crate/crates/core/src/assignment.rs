//! Balanced random allocations and their expanded signed assignment matrices.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::design::{build_design_matrix, DesignSpec, ModelMatrix};
use crate::error::{Error, Result};

/// Where a drawn allocation came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DrawOrigin {
    pub seed: u64,
    /// Global draw index (0-based) within the seeded sequence.
    pub draw_index: u64,
}

/// Unit-to-combination map. Combination indices are 0-based internally and
/// 1-based in files.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Allocation {
    spec: DesignSpec,
    combos: Vec<u32>,
    origin: Option<DrawOrigin>,
}

impl Allocation {
    /// Validates length and balance.
    pub fn from_combinations(spec: &DesignSpec, combos: Vec<u32>) -> Result<Self> {
        if combos.len() != spec.units() {
            return Err(Error::DimensionMismatch {
                what: "allocation length",
                expected: spec.units(),
                found: combos.len(),
            });
        }
        let mut counts = vec![0usize; spec.combinations()];
        for &c in &combos {
            let slot = counts.get_mut(c as usize).ok_or_else(|| {
                Error::UnbalancedAllocation(format!("combination index {} out of range", c + 1))
            })?;
            *slot += 1;
        }
        if let Some(j) = counts.iter().position(|&c| c != spec.replicates()) {
            return Err(Error::UnbalancedAllocation(format!(
                "combination {} has {} units, expected {}",
                j + 1,
                counts[j],
                spec.replicates()
            )));
        }
        Ok(Self {
            spec: spec.clone(),
            combos,
            origin: None,
        })
    }

    pub(crate) fn from_parts_unchecked(spec: &DesignSpec, combos: Vec<u32>, origin: Option<DrawOrigin>) -> Self {
        Self {
            spec: spec.clone(),
            combos,
            origin,
        }
    }

    pub fn with_origin(mut self, origin: DrawOrigin) -> Self {
        self.origin = Some(origin);
        self
    }

    pub fn spec(&self) -> &DesignSpec {
        &self.spec
    }

    pub fn combinations(&self) -> &[u32] {
        &self.combos
    }

    pub fn origin(&self) -> Option<DrawOrigin> {
        self.origin
    }

    pub fn units(&self) -> usize {
        self.combos.len()
    }

    /// Maps every unit to the combination with all factor levels flipped.
    ///
    /// This negates every odd-order column of the expanded matrix and leaves
    /// even-order columns unchanged. Every `M_f` is invariant under it.
    pub fn negate(&self, mm: &ModelMatrix) -> Allocation {
        self.flip_factors(mm, (1u32 << mm.factors()) - 1)
    }

    /// Flips the levels of the factors in `factor_mask` for every unit. The
    /// columns of effects that contain an odd number of flipped factors change
    /// sign; all others are unchanged.
    pub fn flip_factors(&self, mm: &ModelMatrix, factor_mask: u32) -> Allocation {
        let row_flip = (0..mm.factors())
            .filter(|&k| factor_mask & (1 << k) != 0)
            .fold(0u32, |m, k| m | mm.row_mask(mm.effect_index_of_mask(1 << k)));
        Allocation {
            spec: self.spec.clone(),
            combos: self.combos.iter().map(|&c| c ^ row_flip).collect(),
            origin: None,
        }
    }

    /// Delimited export: `unit_id,combination_index,<factor...>` with 1-based
    /// ids and indices and factor levels written as `+1`/`-1`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let g = build_design_matrix(&self.spec);
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["unit_id".to_string(), "combination_index".to_string()];
        header.extend(self.spec.factor_names().iter().cloned());
        wtr.write_record(&header)?;
        for (i, &c) in self.combos.iter().enumerate() {
            let mut rec = vec![(i + 1).to_string(), (c + 1).to_string()];
            rec.extend(
                g.row(c as usize)
                    .iter()
                    .map(|&v| if v > 0 { "+1".to_string() } else { "-1".to_string() }),
            );
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads the format written by [`Allocation::write_csv`]. Rows may come
    /// in any order; factor columns must agree with the combination index.
    pub fn read_csv<R: Read>(spec: &DesignSpec, r: R) -> Result<Allocation> {
        let g = build_design_matrix(spec);
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let header = rdr.headers()?.clone();
        let expected_cols = 2 + spec.factors();
        if header.len() != expected_cols {
            return Err(Error::DimensionMismatch {
                what: "allocation columns",
                expected: expected_cols,
                found: header.len(),
            });
        }
        for (k, name) in spec.factor_names().iter().enumerate() {
            if &header[2 + k] != name {
                return Err(Error::Parse(format!(
                    "allocation column {} is `{}`, expected factor `{name}`",
                    k + 3,
                    &header[2 + k]
                )));
            }
        }
        let n = spec.units();
        let mut combos: Vec<Option<u32>> = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let unit: usize = parse_int(&rec[0], line)?;
            let combo: usize = parse_int(&rec[1], line)?;
            if combo == 0 || combo > spec.combinations() {
                return Err(Error::Parse(format!(
                    "row {}: combination index {combo} outside 1..={}",
                    line + 2,
                    spec.combinations()
                )));
            }
            for k in 0..spec.factors() {
                let level = parse_level(&rec[2 + k], line)?;
                if level != g.get(combo - 1, k) {
                    return Err(Error::Parse(format!(
                        "row {}: factor `{}` level disagrees with combination {combo}",
                        line + 2,
                        spec.factor_names()[k]
                    )));
                }
            }
            if unit == 0 {
                return Err(Error::Parse(format!("row {}: unit ids start at 1", line + 2)));
            }
            if combos.len() < unit {
                combos.resize(unit, None);
            }
            if combos[unit - 1].replace((combo - 1) as u32).is_some() {
                return Err(Error::Parse(format!("unit {unit} listed twice")));
            }
        }
        if combos.len() != n || combos.iter().any(Option::is_none) {
            return Err(Error::DimensionMismatch {
                what: "allocation units",
                expected: n,
                found: combos.iter().filter(|c| c.is_some()).count(),
            });
        }
        Allocation::from_combinations(spec, combos.into_iter().map(Option::unwrap).collect())
    }
}

fn parse_int(s: &str, line: usize) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::Parse(format!("row {}: `{s}` is not a positive integer", line + 2)))
}

fn parse_level(s: &str, line: usize) -> Result<i8> {
    match s {
        "+1" | "1" => Ok(1),
        "-1" => Ok(-1),
        _ => Err(Error::Parse(format!("row {}: `{s}` is not a factor level", line + 2))),
    }
}

/// Uniform draw over all `n! / (r!)^(2^K)` balanced allocations.
pub fn random_allocation<R: Rng + ?Sized>(spec: &DesignSpec, rng: &mut R) -> Allocation {
    let mut combos = balanced_multiset(spec);
    combos.shuffle(rng);
    Allocation::from_parts_unchecked(spec, combos, None)
}

/// `r` copies of each combination index, in order.
pub(crate) fn balanced_multiset(spec: &DesignSpec) -> Vec<u32> {
    (0..spec.combinations() as u32)
        .flat_map(|j| std::iter::repeat_n(j, spec.replicates()))
        .collect()
}

/// The `n x 2^K` matrix whose row `i` is the model-matrix row of unit `i`'s
/// combination.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AssignmentMatrix {
    units: usize,
    cols: usize,
    entries: Vec<i8>,
}

pub fn expand_assignment(alloc: &Allocation, mm: &ModelMatrix) -> Result<AssignmentMatrix> {
    if alloc.spec().factors() != mm.factors() {
        return Err(Error::DimensionMismatch {
            what: "factor count",
            expected: mm.factors(),
            found: alloc.spec().factors(),
        });
    }
    let cols = mm.size();
    let rows: Vec<Vec<i8>> = (0..cols).map(|j| mm.row(j)).collect();
    let mut entries = Vec::with_capacity(alloc.units() * cols);
    for &c in alloc.combinations() {
        entries.extend_from_slice(&rows[c as usize]);
    }
    Ok(AssignmentMatrix {
        units: alloc.units(),
        cols,
        entries,
    })
}

impl AssignmentMatrix {
    pub fn units(&self) -> usize {
        self.units
    }

    pub fn columns(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, f: usize) -> i8 {
        self.entries[i * self.cols + f]
    }

    pub fn row(&self, i: usize) -> &[i8] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, f: usize) -> impl Iterator<Item = i8> + '_ {
        (0..self.units).map(move |i| self.get(i, f))
    }

    /// `-W` on the effect columns; the mean column stays `+1`. The result is
    /// generally not the expansion of any allocation when `K >= 2`, but the
    /// balance and acceptance functions are defined on it.
    pub fn negated(&self) -> AssignmentMatrix {
        let mut out = self.clone();
        for i in 0..self.units {
            for f in 1..self.cols {
                out.entries[i * self.cols + f] = -self.entries[i * self.cols + f];
            }
        }
        out
    }
}

impl ModelMatrix {
    pub(crate) fn effect_index_of_mask(&self, factor_mask: u32) -> usize {
        self.effects()
            .iter()
            .position(|e| e.factor_mask == factor_mask)
            .expect("every factor subset has a column")
    }
}
