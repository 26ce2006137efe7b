//! Disclosure-risk audits. Records are compared with a per-column average
//! of Hamming (categorical) and scaled Euclidean (continuous) distance.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{applicable, check_tables};
use crate::data::{Cell, DataTable, TableSchema};
use crate::par;
use crate::{Error, Result};

pub const KNN_NEIGHBORS: usize = 5;
pub const REPETITIONS: usize = 3;
/// A continuous guess counts as correct within this fraction of the column range.
pub const CONTINUOUS_TOLERANCE: f64 = 0.1;
pub const KNOWN_SET_SIZES: [Option<usize>; 3] = [Some(3), Some(6), None];
/// Continuous targets are only scored when the schema has at least this many.
pub const MIN_CONTINUOUS_TARGETS: usize = 3;

/// Min-max ranges of the continuous columns of the reference data.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceScaler {
    ranges: Vec<Option<(f64, f64)>>,
}

impl DistanceScaler {
    pub fn fit(tables: &[&DataTable]) -> Self {
        let schema = tables[0].schema();
        let ranges = (0..schema.len())
            .map(|j| {
                (!schema.columns[j].is_categorical()).then(|| {
                    let (lo, hi) = tables
                        .iter()
                        .flat_map(|t| t.rows().iter().map(move |r| r[j].value().unwrap_or(0.0)))
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
                    (lo, hi - lo)
                })
            })
            .collect();
        DistanceScaler { ranges }
    }

    /// Min-max scaled value; values outside the reference range land outside
    /// `[0, 1]`. Constant columns use a unit span.
    pub fn scale(&self, col: usize, v: f64) -> f64 {
        match self.ranges[col] {
            Some((lo, span)) if span > 0.0 => (v - lo) / span,
            Some((lo, _)) => v - lo,
            None => 0.0,
        }
    }

    fn len(&self) -> usize {
        self.ranges.len()
    }
}

/// Distance over a subset of columns, normalized by the subset size.
pub fn distance_on(a: &[Cell], b: &[Cell], cols: &[usize], scaler: &DistanceScaler) -> f64 {
    let mut hamming = 0.0;
    let mut sq = 0.0;
    for &j in cols {
        match (a[j], b[j]) {
            (Cell::Category(x), Cell::Category(y)) => hamming += f64::from(u8::from(x != y)),
            (Cell::Value(x), Cell::Value(y)) => {
                let d = scaler.scale(j, x) - scaler.scale(j, y);
                sq += d * d;
            }
            _ => unreachable!("rows share a schema"),
        }
    }
    (hamming + sq.sqrt()) / cols.len() as f64
}

/// `(Hamming count + scaled Euclidean norm) / column count`, in `[0, 1]`.
pub fn record_distance(a: &[Cell], b: &[Cell], schema: &TableSchema, scaler: &DistanceScaler) -> Result<f64> {
    if a.len() != schema.len() || b.len() != schema.len() || scaler.len() != schema.len() {
        return Err(Error::Schema("record width does not match the schema".into()));
    }
    for ((x, y), spec) in a.iter().zip(b).zip(&schema.columns) {
        let ok = match (x, y) {
            (Cell::Category(p), Cell::Category(q)) => spec.is_categorical() && *p.max(q) < spec.categories.len(),
            (Cell::Value(_), Cell::Value(_)) => !spec.is_categorical(),
            _ => false,
        };
        if !ok {
            return Err(Error::Schema(format!("cell kinds disagree with column {}", spec.name)));
        }
    }
    let cols: Vec<usize> = (0..schema.len()).collect();
    Ok(distance_on(a, b, &cols, scaler))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
}

impl IdentityReport {
    pub fn from_counts(threshold: f64, tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if a + b == 0 { 0.0 } else { a as f64 / (a + b) as f64 };
        IdentityReport { threshold, tp, fp, tn, fn_, precision: ratio(tp, fp), recall: ratio(tp, fn_) }
    }
}

/// Distance from each `real` row to its nearest `synth` row (∞ if `synth` is empty).
pub fn nearest_distances(real: &DataTable, synth: &DataTable, scaler: &DistanceScaler) -> Vec<f64> {
    let cols: Vec<usize> = (0..real.n_cols()).collect();
    par::map_slice(real.rows(), |r| {
        synth.rows().iter().map(|s| distance_on(r, s, &cols, scaler)).fold(f64::INFINITY, f64::min)
    })
}

/// Flags a real record as a training member when some synthetic record lies
/// within `threshold`; compares the flags with true membership.
pub fn identity_disclosure(
    train: &DataTable,
    holdout: &DataTable,
    synth: &DataTable,
    threshold: f64,
) -> Result<IdentityReport> {
    check_tables(&[train, holdout, synth])?;
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument(format!("identity threshold must be positive, got {threshold}")));
    }
    let scaler = DistanceScaler::fit(&[train, holdout]);
    let flagged = |t: &DataTable| nearest_distances(t, synth, &scaler).iter().filter(|&&d| d <= threshold).count();
    let tp = flagged(train);
    let fp = flagged(holdout);
    Ok(IdentityReport::from_counts(threshold, tp, fp, holdout.n_rows() - fp, train.n_rows() - tp))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeEntry {
    /// `"3"`, `"6"` or `"rest"`.
    pub known: String,
    pub known_columns: usize,
    #[serde(with = "applicable")]
    pub categorical: Option<f64>,
    #[serde(with = "applicable")]
    pub continuous: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeReport {
    pub neighbors: usize,
    pub repetitions: usize,
    pub continuous_tolerance: f64,
    pub entries: Vec<AttributeEntry>,
    #[serde(with = "applicable")]
    pub aggregate: Option<f64>,
}

/// Posterior of the true class among the nearest synthetic rows. Rows tied
/// at the cut-off distance share the remaining votes, so the result does not
/// depend on row order.
fn knn_posterior(distances: &[f64], labels: &[usize], truth: usize, k: usize) -> f64 {
    let k = k.min(distances.len());
    let mut sorted = distances.to_vec();
    let cut = *sorted.select_nth_unstable_by(k - 1, f64::total_cmp).1;
    let (mut below, mut below_hit, mut at, mut at_hit) = (0usize, 0usize, 0usize, 0usize);
    for (&d, &l) in distances.iter().zip(labels) {
        if d < cut {
            below += 1;
            below_hit += usize::from(l == truth);
        } else if d == cut {
            at += 1;
            at_hit += usize::from(l == truth);
        }
    }
    (below_hit as f64 + (k - below) as f64 * at_hit as f64 / at as f64) / k as f64
}

/// Design matrix for a linear model on the known columns: intercept,
/// one-hot categoricals, scaled continuous values.
fn design(table: &DataTable, known: &[usize], scaler: &DistanceScaler) -> DMatrix<f64> {
    let schema = table.schema();
    let width = 1 + known.iter().map(|&j| schema.columns[j].categories.len().max(1)).sum::<usize>();
    let mut x = DMatrix::zeros(table.n_rows(), width);
    for (r, row) in table.rows().iter().enumerate() {
        x[(r, 0)] = 1.0;
        let mut off = 1;
        for &j in known {
            match row[j] {
                Cell::Category(c) => {
                    x[(r, off + c)] = 1.0;
                    off += schema.columns[j].categories.len();
                }
                Cell::Value(v) => {
                    x[(r, off)] = scaler.scale(j, v);
                    off += 1;
                }
            }
        }
    }
    x
}

/// Least-squares fit on `synth`, then the fraction of `real` rows predicted
/// within the tolerance band.
fn regression_hit_rate(real: &DataTable, synth: &DataTable, known: &[usize], target: usize, scaler: &DistanceScaler) -> f64 {
    let xs = design(synth, known, scaler);
    let ys = DVector::from_vec(synth.continuous_column(target));
    let gram = xs.transpose() * &xs;
    let rhs = xs.transpose() * ys;
    let beta = gram.svd(true, true).solve(&rhs, 1e-10).expect("SVD was computed with U and V");
    let pred = design(real, known, scaler) * beta;
    let truth = real.continuous_column(target);
    let (lo, hi) = truth.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let band = CONTINUOUS_TOLERANCE * (hi - lo);
    truth.iter().zip(pred.iter()).filter(|&(&t, &p)| (t - p).abs() <= band).count() as f64 / truth.len() as f64
}

fn knn_hit_rate(real: &DataTable, synth: &DataTable, known: &[usize], target: usize, scaler: &DistanceScaler) -> f64 {
    let labels = synth.categorical_column(target);
    let posts = par::map_slice(real.rows(), |r| {
        let d: Vec<f64> = synth.rows().iter().map(|s| distance_on(r, s, known, scaler)).collect();
        knn_posterior(&d, &labels, r[target].category().expect("categorical target"), KNN_NEIGHBORS)
    });
    posts.iter().sum::<f64>() / posts.len() as f64
}

/// Known-column sets per repetition for one known-set size.
fn known_sets(n_cols: usize, size: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<(Vec<usize>, Vec<usize>)> {
    match size {
        Some(k) if k < n_cols - 1 => (0..REPETITIONS)
            .map(|_| {
                let mut known = rand::seq::index::sample(rng, n_cols, k).into_vec();
                known.sort_unstable();
                let targets = (0..n_cols).filter(|j| !known.contains(j)).collect();
                (known, targets)
            })
            .collect(),
        // every column in turn, with all others known
        _ => (0..n_cols).map(|t| ((0..n_cols).filter(|&j| j != t).collect(), vec![t])).collect(),
    }
}

/// Attacker who knows some columns of a real record and infers the rest from
/// the synthetic table. Scores are `1 − P_attr` per known-set size.
pub fn attribute_disclosure(real: &DataTable, synth: &DataTable, seed: u64) -> Result<AttributeReport> {
    check_tables(&[real, synth])?;
    let schema = real.schema();
    let n_cols = schema.len();
    if n_cols < 4 {
        return Err(Error::InvalidArgument("attribute disclosure needs at least 4 columns".into()));
    }
    if synth.is_empty() || real.is_empty() {
        return Err(Error::Data("attribute disclosure needs non-empty tables".into()));
    }
    let continuous_ok = schema.continuous_indices().len() >= MIN_CONTINUOUS_TARGETS;
    let scaler = DistanceScaler::fit(&[real]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for size in KNOWN_SET_SIZES {
        let sets = known_sets(n_cols, size, &mut rng);
        let (mut cat, mut con) = (Vec::new(), Vec::new());
        for (known, targets) in &sets {
            for &t in targets {
                if schema.columns[t].is_categorical() {
                    cat.push(knn_hit_rate(real, synth, known, t, &scaler));
                } else if continuous_ok {
                    con.push(regression_hit_rate(real, synth, known, t, &scaler));
                }
            }
        }
        let score = |v: &[f64]| (!v.is_empty()).then(|| 1.0 - v.iter().sum::<f64>() / v.len() as f64);
        entries.push(AttributeEntry {
            known: size.map_or_else(|| "rest".to_string(), |k| k.to_string()),
            known_columns: sets[0].0.len(),
            categorical: score(&cat),
            continuous: score(&con),
        });
    }
    let all: Vec<f64> = entries.iter().flat_map(|e| e.categorical.into_iter().chain(e.continuous)).collect();
    let aggregate = (!all.is_empty()).then(|| all.iter().sum::<f64>() / all.len() as f64);
    Ok(AttributeReport {
        neighbors: KNN_NEIGHBORS,
        repetitions: REPETITIONS,
        continuous_tolerance: CONTINUOUS_TOLERANCE,
        entries,
        aggregate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ColumnSpec;

    fn two_col() -> (TableSchema, DistanceScaler) {
        let schema =
            TableSchema::new(vec![ColumnSpec::categorical("c", ["a", "b"]), ColumnSpec::continuous("x")], None).unwrap();
        let t = DataTable::new(schema.clone(), vec![vec![Cell::Category(0), Cell::Value(0.0)], vec![Cell::Category(1), Cell::Value(10.0)]])
            .unwrap();
        (schema, DistanceScaler::fit(&[&t]))
    }

    #[test]
    fn distance_closed_forms() {
        let (schema, scaler) = two_col();
        let a = [Cell::Category(0), Cell::Value(2.0)];
        assert_eq!(record_distance(&a, &a, &schema, &scaler).unwrap(), 0.0);
        let b = [Cell::Category(0), Cell::Value(5.0)];
        assert!((record_distance(&a, &b, &schema, &scaler).unwrap() - 0.15).abs() < 1e-12);
        let c = [Cell::Category(1), Cell::Value(2.0)];
        assert_eq!(record_distance(&a, &c, &schema, &scaler).unwrap(), 0.5);
        assert!(record_distance(&a, &[Cell::Value(1.0), Cell::Value(2.0)], &schema, &scaler).is_err());
    }

    #[test]
    fn knn_ties_share_votes() {
        // k=2: one hit below the cut-off, three rows tied at it share the last slot
        let p = knn_posterior(&[0.1, 0.2, 0.2, 0.2, 0.9], &[1, 1, 0, 0, 1], 1, 2);
        assert!((p - (1.0 + 1.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(knn_posterior(&[0.3], &[2], 2, 5), 1.0);
    }

    #[test]
    fn precision_recall_zero_denominators() {
        let r = IdentityReport::from_counts(0.1, 0, 0, 5, 5);
        assert_eq!((r.precision, r.recall), (0.0, 0.0));
    }
}
