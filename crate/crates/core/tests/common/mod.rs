#![allow(dead_code)]

pub mod oracles;

use dpcgans_core::data::{Cell, ColumnSpec, DataTable, TableSchema};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Two dependent categoricals (`P(B=b1|A=a1)=0.9`, `P(B=b1|A=a2)=0.1`) and a
/// bimodal continuous column.
pub fn dependent_pair_table(n: usize, seed: u64) -> DataTable {
    let schema = TableSchema::new(
        vec![
            ColumnSpec::categorical("A", ["a1", "a2"]),
            ColumnSpec::categorical("B", ["b1", "b2"]),
            ColumnSpec::continuous("X"),
        ],
        None,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let low = Normal::new(0.0, 1.0).unwrap();
    let high = Normal::new(10.0, 1.0).unwrap();
    let rows = (0..n)
        .map(|_| {
            let a = usize::from(rng.random::<f64>() >= 0.6);
            let p_b1 = if a == 0 { 0.9 } else { 0.1 };
            let b = usize::from(rng.random::<f64>() >= p_b1);
            let x = if rng.random::<bool>() { low.sample(&mut rng) } else { high.sample(&mut rng) };
            vec![Cell::Category(a), Cell::Category(b), Cell::Value(x)]
        })
        .collect();
    DataTable::new(schema, rows).unwrap()
}

use dpcgans_core::nn::{
    Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, Grads, OutputSpan, Params,
};
use ndarray::Array2;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-5;

/// Relative error with a small absolute floor so exact zeros compare cleanly.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Central differences of `loss` over every parameter of `net`.
pub fn numeric_grads<P: Params + Clone>(net: &P, loss: impl Fn(&P) -> f64) -> Grads {
    let mut out = net.zero_grads();
    let sizes: Vec<usize> = net.param_slices().iter().map(|s| s.len()).collect();
    for (t, &len) in sizes.iter().enumerate() {
        for i in 0..len {
            let mut plus = net.clone();
            plus.param_slices_mut()[t][i] += FD_STEP;
            let mut minus = net.clone();
            minus.param_slices_mut()[t][i] -= FD_STEP;
            out.0[t][i] = (loss(&plus) - loss(&minus)) / (2.0 * FD_STEP);
        }
    }
    out
}

pub fn max_rel(a: &Grads, b: &Grads) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b.iter()).map(|(&x, &y)| rel_err(x, y)).fold(0.0, f64::max)
}

/// Generator and critic with 8 hidden units, pac 2, over a 7-wide encoded
/// row (scalar, 2 modes, two 2-way categoricals) and a 4-wide condition.
pub struct TinyNets {
    pub generator: Generator,
    pub critic: Discriminator,
    pub real: Array2<f64>,
    pub cond: Array2<f64>,
    /// Encoded column offsets of the two categorical segments.
    pub segments: [usize; 2],
}

pub fn tiny_nets(seed: u64, batch: usize) -> (TinyNets, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gen_cfg = GeneratorConfig {
        noise_dim: 4,
        cond_dim: 4,
        hidden: vec![8, 8],
        output_dim: 7,
        spans: vec![
            OutputSpan::Tanh { offset: 0 },
            OutputSpan::Softmax { offset: 1, width: 2 },
            OutputSpan::Softmax { offset: 3, width: 2 },
            OutputSpan::Softmax { offset: 5, width: 2 },
        ],
        tau: 0.2,
    };
    let mut generator = Generator::new(gen_cfg, &mut rng).unwrap();
    for (_, bn) in &mut generator.hidden {
        bn.gamma.mapv_inplace(|_| rng.random_range(0.5..1.5));
        bn.beta.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    let critic_cfg = DiscriminatorConfig { pac: 2, ..DiscriminatorConfig::new(11, vec![8, 8]) };
    let critic = Discriminator::new(critic_cfg, &mut rng).unwrap();
    let mut real = Array2::zeros((batch, 7));
    let mut cond = Array2::zeros((batch, 4));
    for i in 0..batch {
        let (a, b) = (rng.random_range(0..2), rng.random_range(0..2));
        real[[i, 0]] = rng.random_range(-0.9..0.9);
        real[[i, 1 + rng.random_range(0..2)]] = 1.0;
        real[[i, 3 + a]] = 1.0;
        real[[i, 5 + b]] = 1.0;
        cond[[i, a]] = 1.0;
        cond[[i, 2 + b]] = 1.0;
    }
    let _ = rng.sample::<f64, _>(StandardNormal);
    (TinyNets { generator, critic, real, cond, segments: [3, 5] }, rng)
}

impl TinyNets {
    /// BCE targets on both categorical segments, taken from the condition.
    pub fn targets(&self) -> dpcgans_core::gan::step::ConditionTargets {
        let n = self.cond.nrows();
        let mut targets = Array2::zeros((n, 7));
        let mut entries = Vec::new();
        for i in 0..n {
            for (block, &seg) in self.segments.iter().enumerate() {
                for k in 0..2 {
                    targets[[i, seg + k]] = self.cond[[i, 2 * block + k]];
                    entries.push((i, seg + k));
                }
            }
        }
        dpcgans_core::gan::step::ConditionTargets { targets, entries }
    }
}

/// Random table with 3 categorical columns (2, 3, 4 categories) and 2
/// continuous columns; the second continuous column is correlated with the first.
pub fn random_mixed_table(n: usize, seed: u64) -> DataTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schema = TableSchema::new(
        vec![
            ColumnSpec::categorical("c2", ["a", "b"]),
            ColumnSpec::categorical("c3", ["p", "q", "r"]),
            ColumnSpec::categorical("c4", ["w", "x", "y", "z"]),
            ColumnSpec::continuous("u"),
            ColumnSpec::continuous("v"),
        ],
        None,
    )
    .unwrap();
    let rows = (0..n)
        .map(|_| {
            let a = rng.random_range(0..2);
            let b = if rng.random::<f64>() < 0.5 { a } else { rng.random_range(0..3) };
            let u: f64 = rng.sample(StandardNormal);
            let noise: f64 = rng.sample(StandardNormal);
            vec![
                Cell::Category(a),
                Cell::Category(b),
                Cell::Category(rng.random_range(0..4)),
                Cell::Value(u),
                Cell::Value(0.7 * u + noise),
            ]
        })
        .collect();
    DataTable::new(schema, rows).unwrap()
}

/// Same table with rows in a seeded random order.
pub fn shuffled(t: &DataTable, seed: u64) -> DataTable {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..t.n_rows()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    t.select(&idx)
}
