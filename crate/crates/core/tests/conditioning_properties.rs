mod common;

use dpcgans_core::conditioning::{
    build_frequency_table, log_weight, sample_condition_pair, sample_generation_condition, sample_matching_rows,
    MatchIndex,
};
use dpcgans_core::data::{Cell, ColumnSpec, DataTable, TableSchema};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const DRAWS: usize = 100_000;

/// Column `A` with counts {100, 10, 1}; `B` constant.
fn skewed() -> DataTable {
    let schema = TableSchema::new(
        vec![ColumnSpec::categorical("A", ["x", "y", "z"]), ColumnSpec::categorical("B", ["u", "v"])],
        None,
    )
    .unwrap();
    let rows = [(0, 100), (1, 10), (2, 1)]
        .iter()
        .flat_map(|&(a, n)| std::iter::repeat_n(vec![Cell::Category(a), Cell::Category(0)], n))
        .collect();
    DataTable::new(schema, rows).unwrap()
}

fn frequencies(draws: impl Iterator<Item = usize>, k: usize) -> Vec<f64> {
    let mut f = vec![0.0; k];
    for d in draws {
        f[d] += 1.0 / DRAWS as f64;
    }
    f
}

fn tv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 2.0
}

#[test]
fn training_draws_follow_log_counts() {
    let table = build_frequency_table(&skewed()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let got = frequencies((0..DRAWS).map(|_| sample_condition_pair(&table, &mut rng).active_categories[0]), 3);
    let w: Vec<f64> = [100, 10, 1].iter().map(|&c| log_weight(c)).collect();
    let total: f64 = w.iter().sum();
    let want: Vec<f64> = w.iter().map(|x| x / total).collect();
    assert!((want[0] - 0.5989).abs() < 1e-4 && (want[1] - 0.3112).abs() < 1e-4 && (want[2] - 0.0899).abs() < 1e-4);
    assert!(tv(&got, &want) <= 0.02, "{got:?} vs {want:?}");
}

#[test]
fn generation_draws_follow_raw_counts() {
    let table = build_frequency_table(&skewed()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let got = frequencies((0..DRAWS).map(|_| sample_generation_condition(&table, &mut rng).active_categories[0]), 3);
    let want = [100.0 / 111.0, 10.0 / 111.0, 1.0 / 111.0];
    assert!(tv(&got, &want) <= 0.02, "{got:?}");
}

#[test]
fn column_pairs_are_uniform() {
    let data = common::random_mixed_table(300, 3);
    let table = build_frequency_table(&data).unwrap();
    assert_eq!(table.pairs().len(), 3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let got = frequencies((0..DRAWS).map(|_| sample_condition_pair(&table, &mut rng).pair), 3);
    assert!(tv(&got, &[1.0 / 3.0; 3]) <= 0.02, "{got:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conditions_and_matches_are_consistent(n in 1usize..200, seed in any::<u64>()) {
        let data = common::random_mixed_table(n, seed);
        let table = build_frequency_table(&data).unwrap();
        for p in table.pairs() {
            prop_assert_eq!(p.cells.iter().map(|c| c.2).sum::<u64>(), n as u64);
            prop_assert!(p.cells.iter().all(|c| c.2 >= 1));
        }
        let index = MatchIndex::build(&data, &table);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..50 {
            let cond = sample_condition_pair(&table, &mut rng);
            let bits = cond.bits();
            prop_assert_eq!(bits.len(), table.width());
            prop_assert_eq!(bits.iter().sum::<f64>(), 2.0);
            for block in table.blocks() {
                let ones = bits[block.offset..block.offset + block.width].iter().sum::<f64>();
                let active = cond.active_columns.contains(&block.column);
                prop_assert_eq!(ones, if active { 1.0 } else { 0.0 });
            }
            for r in sample_matching_rows(&index, &table, &cond, 20, &mut rng) {
                for (&col, &cat) in cond.active_columns.iter().zip(&cond.active_categories) {
                    prop_assert_eq!(data.row(r)[col], Cell::Category(cat));
                }
            }
        }
    }
}
