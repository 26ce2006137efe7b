//! Pairwise conditional vectors and training-by-sampling.
//!
//! A condition picks two categorical columns uniformly at random and then one
//! observed category combination of that pair. During training combinations
//! are drawn with weight `ln(1 + count)`, which lifts rare combinations; at
//! generation time they follow the raw joint counts.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::DataTable;
use crate::error::{Error, Result};

/// Position of one categorical column inside the condition vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionBlock {
    /// Column index in the table schema.
    pub column: usize,
    pub offset: usize,
    pub width: usize,
}

/// Observed joint counts of one unordered pair of categorical columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCounts {
    /// Block indices (not schema indices), `first < second`.
    pub first: usize,
    pub second: usize,
    /// Observed combinations `(category of first, category of second, count)`,
    /// every count at least 1.
    pub cells: Vec<(usize, usize, u64)>,
}

impl PairCounts {
    fn cumulative(&self, weight: impl Fn(u64) -> f64) -> Vec<f64> {
        let mut acc = 0.0;
        self.cells
            .iter()
            .map(|&(_, _, c)| {
                acc += weight(c);
                acc
            })
            .collect()
    }
}

fn pick<R: Rng + ?Sized>(cumulative: &[f64], rng: &mut R) -> usize {
    let total = *cumulative.last().expect("non-empty");
    let u = rng.random::<f64>() * total;
    cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1)
}

/// Joint count tables for every pair of categorical columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "FrequencyRepr", into = "FrequencyRepr")]
pub struct PairFrequencyTable {
    blocks: Vec<ConditionBlock>,
    pairs: Vec<PairCounts>,
    n_rows: usize,
    width: usize,
    log_cumulative: Vec<Vec<f64>>,
    raw_cumulative: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct FrequencyRepr {
    blocks: Vec<ConditionBlock>,
    pairs: Vec<PairCounts>,
    n_rows: usize,
}

impl From<FrequencyRepr> for PairFrequencyTable {
    fn from(r: FrequencyRepr) -> Self {
        PairFrequencyTable::from_parts(r.blocks, r.pairs, r.n_rows)
    }
}

impl From<PairFrequencyTable> for FrequencyRepr {
    fn from(t: PairFrequencyTable) -> Self {
        FrequencyRepr { blocks: t.blocks, pairs: t.pairs, n_rows: t.n_rows }
    }
}

/// Log-frequency weight used for training-time sampling.
pub fn log_weight(count: u64) -> f64 {
    (count as f64).ln_1p()
}

impl PairFrequencyTable {
    fn from_parts(blocks: Vec<ConditionBlock>, pairs: Vec<PairCounts>, n_rows: usize) -> Self {
        let width = blocks.iter().map(|b| b.width).sum();
        let log_cumulative = pairs.iter().map(|p| p.cumulative(log_weight)).collect();
        let raw_cumulative = pairs.iter().map(|p| p.cumulative(|c| c as f64)).collect();
        PairFrequencyTable { blocks, pairs, n_rows, width, log_cumulative, raw_cumulative }
    }

    pub fn blocks(&self) -> &[ConditionBlock] {
        &self.blocks
    }

    pub fn pairs(&self) -> &[PairCounts] {
        &self.pairs
    }

    /// Width of a condition vector (sum of all categorical widths).
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    fn condition(&self, pair: usize, cell: usize) -> ConditionVector {
        let p = &self.pairs[pair];
        let (ca, cb, _) = p.cells[cell];
        let (ba, bb) = (self.blocks[p.first], self.blocks[p.second]);
        ConditionVector {
            width: self.width,
            pair,
            cell,
            active_columns: [ba.column, bb.column],
            active_categories: [ca, cb],
            offsets: [ba.offset, bb.offset],
        }
    }

    /// Condition for an explicit pair of schema columns and categories.
    pub fn condition_for(&self, columns: [usize; 2], categories: [usize; 2]) -> Option<ConditionVector> {
        let ia = self.blocks.iter().position(|b| b.column == columns[0])?;
        let ib = self.blocks.iter().position(|b| b.column == columns[1])?;
        let (first, second, cats) = if ia < ib {
            (ia, ib, categories)
        } else {
            (ib, ia, [categories[1], categories[0]])
        };
        let pair = self.pairs.iter().position(|p| p.first == first && p.second == second)?;
        let cell = self.pairs[pair]
            .cells
            .iter()
            .position(|&(a, b, _)| a == cats[0] && b == cats[1])?;
        Some(self.condition(pair, cell))
    }
}

/// Build joint counts for all unordered pairs of categorical columns.
pub fn build_frequency_table(data: &DataTable) -> Result<PairFrequencyTable> {
    let schema = data.schema();
    let cat_cols = schema.categorical_indices();
    if cat_cols.len() < 2 {
        return Err(Error::Data(format!(
            "pair conditioning needs at least 2 categorical columns, found {}",
            cat_cols.len()
        )));
    }
    let mut blocks = Vec::with_capacity(cat_cols.len());
    let mut offset = 0;
    for &c in &cat_cols {
        let width = schema.columns[c].categories.len();
        blocks.push(ConditionBlock { column: c, offset, width });
        offset += width;
    }
    let columns: Vec<Vec<usize>> = cat_cols.iter().map(|&c| data.categorical_column(c)).collect();
    let mut pairs = Vec::new();
    for a in 0..blocks.len() {
        for b in a + 1..blocks.len() {
            let (wa, wb) = (blocks[a].width, blocks[b].width);
            let mut dense = vec![0u64; wa * wb];
            for (&x, &y) in columns[a].iter().zip(&columns[b]) {
                dense[x * wb + y] += 1;
            }
            let cells = dense
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(i, &c)| (i / wb, i % wb, c))
                .collect();
            pairs.push(PairCounts { first: a, second: b, cells });
        }
    }
    Ok(PairFrequencyTable::from_parts(blocks, pairs, data.n_rows()))
}

/// Concatenated categorical one-hot mask with exactly two active segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConditionVector {
    pub width: usize,
    /// Index into the table's pair list.
    pub pair: usize,
    /// Index of the combination within the pair's observed cells.
    pub cell: usize,
    /// Schema indices of the two conditioned columns.
    pub active_columns: [usize; 2],
    pub active_categories: [usize; 2],
    offsets: [usize; 2],
}

impl ConditionVector {
    /// Positions of the two set bits.
    pub fn hot_positions(&self) -> [usize; 2] {
        [
            self.offsets[0] + self.active_categories[0],
            self.offsets[1] + self.active_categories[1],
        ]
    }

    /// Write the bits into `out` (length `width`), clearing it first.
    pub fn write_bits(&self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.width);
        out.fill(0.0);
        for p in self.hot_positions() {
            out[p] = 1.0;
        }
    }

    pub fn bits(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.width];
        self.write_bits(&mut v);
        v
    }
}

/// Training-time condition: uniform pair, combination weighted by `ln(1+count)`.
pub fn sample_condition_pair<R: Rng + ?Sized>(table: &PairFrequencyTable, rng: &mut R) -> ConditionVector {
    let pair = rng.random_range(0..table.pairs.len());
    let cell = pick(&table.log_cumulative[pair], rng);
    table.condition(pair, cell)
}

/// Generation-time condition: uniform pair, combination weighted by raw count.
pub fn sample_generation_condition<R: Rng + ?Sized>(
    table: &PairFrequencyTable,
    rng: &mut R,
) -> ConditionVector {
    let pair = rng.random_range(0..table.pairs.len());
    let cell = pick(&table.raw_cumulative[pair], rng);
    table.condition(pair, cell)
}

/// Row lists for every observed combination of every pair.
#[derive(Debug, Clone)]
pub struct MatchIndex {
    /// `rows[pair][cell]` lists matching row indices.
    rows: Vec<Vec<Vec<usize>>>,
}

impl MatchIndex {
    pub fn build(data: &DataTable, table: &PairFrequencyTable) -> Self {
        let rows = table
            .pairs
            .iter()
            .map(|p| {
                let (ba, bb) = (table.blocks[p.first], table.blocks[p.second]);
                let wb = bb.width;
                let mut lookup = vec![usize::MAX; ba.width * wb];
                for (i, &(a, b, _)) in p.cells.iter().enumerate() {
                    lookup[a * wb + b] = i;
                }
                let mut lists = vec![Vec::new(); p.cells.len()];
                for (r, row) in data.rows().iter().enumerate() {
                    let a = row[ba.column].category().expect("categorical");
                    let b = row[bb.column].category().expect("categorical");
                    lists[lookup[a * wb + b]].push(r);
                }
                lists
            })
            .collect();
        MatchIndex { rows }
    }

    pub fn matching(&self, cond: &ConditionVector, table: &PairFrequencyTable) -> &[usize] {
        debug_assert_eq!(
            (table.pairs[cond.pair].cells[cond.cell].0, table.pairs[cond.pair].cells[cond.cell].1),
            (cond.active_categories[0], cond.active_categories[1])
        );
        &self.rows[cond.pair][cond.cell]
    }
}

/// Draw `batch` row indices uniformly, with replacement, among rows matching
/// both active categories of `cond`.
pub fn sample_matching_rows<R: Rng + ?Sized>(
    index: &MatchIndex,
    table: &PairFrequencyTable,
    cond: &ConditionVector,
    batch: usize,
    rng: &mut R,
) -> Vec<usize> {
    let rows = index.matching(cond, table);
    (0..batch).map(|_| rows[rng.random_range(0..rows.len())]).collect()
}
