//! Train-on-synthetic / test-on-real classifiers. Features are one-hot
//! categoricals and min-max scaled continuous values, fit on the real
//! training table and reused unchanged for the synthetic one.

use ndarray::{Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::check_tables;
use crate::data::{Cell, DataTable};
use crate::nn::{AdamConfig, AdamState, Grads, Linear, Params};
use crate::{Error, Result};

pub const MLP_HIDDEN: usize = 64;
pub const TRAIN_ITERATIONS: usize = 500;
pub const LEARNING_RATE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "logistic-regression")]
    LogisticRegression,
    #[serde(rename = "mlp")]
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficacyEntry {
    pub model: ModelKind,
    pub auc: f64,
    pub f1: f64,
    pub baseline_auc: f64,
    pub baseline_f1: f64,
}

/// Feature map fit on one table, applied to any table of the same schema.
#[derive(Debug, Clone)]
pub struct FeatureEncoder {
    target: usize,
    columns: Vec<(usize, FeatureKind)>,
    width: usize,
}

#[derive(Debug, Clone)]
enum FeatureKind {
    OneHot { offset: usize },
    Scaled { offset: usize, min: f64, span: f64 },
}

impl FeatureEncoder {
    pub fn fit(table: &DataTable, target: usize) -> Self {
        let mut columns = Vec::new();
        let mut offset = 0;
        for (j, spec) in table.schema().columns.iter().enumerate() {
            if j == target {
                continue;
            }
            if spec.is_categorical() {
                columns.push((j, FeatureKind::OneHot { offset }));
                offset += spec.categories.len();
            } else {
                let v = table.continuous_column(j);
                let min = v.iter().copied().fold(f64::INFINITY, f64::min);
                let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                columns.push((j, FeatureKind::Scaled { offset, min, span: max - min }));
                offset += 1;
            }
        }
        FeatureEncoder { target, columns, width: offset }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn features(&self, table: &DataTable) -> Array2<f64> {
        let mut x = Array2::zeros((table.n_rows(), self.width));
        for (r, row) in table.rows().iter().enumerate() {
            for (j, kind) in &self.columns {
                match (kind, row[*j]) {
                    (FeatureKind::OneHot { offset }, Cell::Category(c)) => x[[r, offset + c]] = 1.0,
                    (FeatureKind::Scaled { offset, min, span }, Cell::Value(v)) => {
                        x[[r, *offset]] = if *span > 0.0 { (v - min) / span } else { 0.0 }
                    }
                    _ => unreachable!("schema checked"),
                }
            }
        }
        x
    }

    pub fn labels(&self, table: &DataTable) -> Vec<usize> {
        table.categorical_column(self.target)
    }
}

/// Softmax classifier with an optional ReLU hidden layer.
#[derive(Debug, Clone)]
pub struct Classifier {
    hidden: Option<Linear>,
    output: Linear,
}

impl Params for Classifier {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = self.hidden.iter().flat_map(|l| l.slices()).collect();
        v.extend(self.output.slices());
        v
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = self.hidden.iter_mut().flat_map(|l| l.slices_mut()).collect();
        v.extend(self.output.slices_mut());
        v
    }
}

impl Classifier {
    pub fn new(kind: ModelKind, inputs: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match kind {
            ModelKind::LogisticRegression => Classifier { hidden: None, output: Linear::zeros(inputs, classes) },
            ModelKind::Mlp => Classifier {
                hidden: Some(Linear::new(inputs, MLP_HIDDEN, &mut rng)),
                output: Linear::new(MLP_HIDDEN, classes, &mut rng),
            },
        }
    }

    fn hidden_act(&self, x: ArrayView2<f64>) -> Option<Array2<f64>> {
        self.hidden.as_ref().map(|h| h.forward(x).mapv(|v| v.max(0.0)))
    }

    pub fn probabilities(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let h = self.hidden_act(x);
        softmax_rows(self.output.forward(h.as_ref().map_or(x, |h| h.view())))
    }

    /// Full-batch Adam on mean softmax cross-entropy.
    pub fn train(&mut self, x: ArrayView2<f64>, y: &[usize], iterations: usize) -> Result<()> {
        let config = AdamConfig { lr: LEARNING_RATE, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        let mut adam = AdamState::new(config, self);
        let n = x.nrows() as f64;
        for _ in 0..iterations {
            let h = self.hidden_act(x);
            let top_in = h.as_ref().map_or(x, |h| h.view());
            let mut d = softmax_rows(self.output.forward(top_in));
            for (mut row, &label) in d.rows_mut().into_iter().zip(y) {
                row[label] -= 1.0;
            }
            d /= n;
            let (dw, db, dh) = self.output.backward(top_in, d.view(), self.hidden.is_some());
            let mut grads = Vec::new();
            if let (Some(layer), Some(h), Some(mut dh)) = (&self.hidden, &h, dh) {
                dh.zip_mut_with(h, |g, &a| {
                    if a <= 0.0 {
                        *g = 0.0
                    }
                });
                let (hw, hb, _) = layer.backward(x, dh.view(), false);
                grads.push(hw.into_raw_vec_and_offset().0);
                grads.push(hb.to_vec());
            }
            grads.push(dw.into_raw_vec_and_offset().0);
            grads.push(db.to_vec());
            adam.step(self, &Grads(grads))?;
        }
        Ok(())
    }
}

fn softmax_rows(mut z: Array2<f64>) -> Array2<f64> {
    for mut row in z.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    z
}

/// Rank-based ROC AUC (ties get mid-ranks). `None` if one class is absent.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += (i..=j).filter(|&k| positive[idx[k]]).count() as f64 * mid;
        i = j + 1;
    }
    let np = n_pos as f64;
    Some((rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

fn f1_for(truth: &[usize], pred: &[usize], class: usize) -> f64 {
    let tp = truth.iter().zip(pred).filter(|&(&t, &p)| t == class && p == class).count() as f64;
    let fp = truth.iter().zip(pred).filter(|&(&t, &p)| t != class && p == class).count() as f64;
    let fn_ = truth.iter().zip(pred).filter(|&(&t, &p)| t == class && p != class).count() as f64;
    if tp == 0.0 {
        0.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fn_)
    }
}

/// Binary F1 on class 1 for two classes, macro F1 over observed labels otherwise.
pub fn f1_score(truth: &[usize], pred: &[usize], classes: usize) -> f64 {
    if classes == 2 {
        return f1_for(truth, pred, 1);
    }
    let labels: Vec<usize> = (0..classes).filter(|c| truth.contains(c) || pred.contains(c)).collect();
    labels.iter().map(|&c| f1_for(truth, pred, c)).sum::<f64>() / labels.len().max(1) as f64
}

/// Binary AUC on class 1, or the one-vs-rest mean over classes present in `truth`.
pub fn auc_score(probs: ArrayView2<f64>, truth: &[usize]) -> f64 {
    let classes = probs.ncols();
    let per_class = |c: usize| {
        let pos: Vec<bool> = truth.iter().map(|&t| t == c).collect();
        roc_auc(&probs.column(c).to_vec(), &pos)
    };
    if classes == 2 {
        return per_class(1).unwrap_or(0.5);
    }
    let aucs: Vec<f64> = (0..classes).filter_map(per_class).collect();
    if aucs.is_empty() {
        0.5
    } else {
        aucs.iter().sum::<f64>() / aucs.len() as f64
    }
}

fn argmax_rows(p: &Array2<f64>) -> Vec<usize> {
    p.axis_iter(Axis(0))
        .map(|row| row.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b }).0)
        .collect()
}

/// `(AUC, F1)` on the test table after training on `train`.
pub fn evaluate_model(
    kind: ModelKind,
    encoder: &FeatureEncoder,
    train: &DataTable,
    test: &DataTable,
    classes: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let y = encoder.labels(train);
    let distinct = y.iter().collect::<std::collections::BTreeSet<_>>().len();
    if distinct < 2 {
        return Err(Error::Data("target has a single class in the training table".into()));
    }
    let mut model = Classifier::new(kind, encoder.width(), classes, seed);
    model.train(encoder.features(train).view(), &y, TRAIN_ITERATIONS)?;
    let probs = model.probabilities(encoder.features(test).view());
    let truth = encoder.labels(test);
    Ok((auc_score(probs.view(), &truth), f1_score(&truth, &argmax_rows(&probs), classes)))
}

/// Baseline (trained on real) and synthetic-trained scores for LR and MLP.
pub fn ml_efficacy(
    real_train: &DataTable,
    real_test: &DataTable,
    synth: &DataTable,
    target: &str,
    seed: u64,
) -> Result<Vec<EfficacyEntry>> {
    check_tables(&[real_train, real_test, synth])?;
    let schema = real_train.schema();
    let t = schema.column_index(target).ok_or_else(|| Error::InvalidArgument(format!("unknown target column {target}")))?;
    if !schema.columns[t].is_categorical() {
        return Err(Error::InvalidArgument(format!("target column {target} is not categorical")));
    }
    if synth.n_rows() != real_train.n_rows() {
        return Err(Error::InvalidArgument(format!(
            "synthetic table has {} rows, real training table has {}",
            synth.n_rows(),
            real_train.n_rows()
        )));
    }
    if real_test.is_empty() {
        return Err(Error::Data("empty test table".into()));
    }
    let classes = schema.columns[t].categories.len();
    let encoder = FeatureEncoder::fit(real_train, t);
    [ModelKind::LogisticRegression, ModelKind::Mlp]
        .into_iter()
        .map(|kind| {
            let (baseline_auc, baseline_f1) = evaluate_model(kind, &encoder, real_train, real_test, classes, seed)?;
            let (auc, f1) = evaluate_model(kind, &encoder, synth, real_test, classes, seed)?;
            Ok(EfficacyEntry { model: kind, auc, f1, baseline_auc, baseline_f1 })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_ranks_with_ties() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]), Some(1.0));
        assert_eq!(roc_auc(&[0.5, 0.5], &[false, true]), Some(0.5));
        assert_eq!(roc_auc(&[0.9, 0.1], &[false, true]), Some(0.0));
        assert_eq!(roc_auc(&[0.1], &[true]), None);
    }

    #[test]
    fn f1_binary_and_macro() {
        assert_eq!(f1_score(&[1, 1, 0, 0], &[1, 0, 0, 0], 2), 2.0 / 3.0);
        let m = f1_score(&[0, 1, 2], &[0, 1, 1], 3);
        assert!((m - (1.0 + 2.0 / 3.0 + 0.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn logistic_regression_separates_toy_data() {
        let x = Array2::from_shape_fn((40, 1), |(i, _)| i as f64 / 39.0);
        let y: Vec<usize> = (0..40).map(|i| usize::from(i >= 20)).collect();
        let mut lr = Classifier::new(ModelKind::LogisticRegression, 1, 2, 0);
        lr.train(x.view(), &y, TRAIN_ITERATIONS).unwrap();
        let p = lr.probabilities(x.view());
        assert_eq!(auc_score(p.view(), &y), 1.0);
        assert_eq!(argmax_rows(&p), y);
    }

    #[test]
    fn mlp_gradient_descends() {
        let x = Array2::from_shape_fn((30, 2), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 10.0);
        let y: Vec<usize> = (0..30).map(|i| usize::from(x[[i, 0]] + x[[i, 1]] > 1.0)).collect();
        let mut m = Classifier::new(ModelKind::Mlp, 2, 2, 1);
        let loss = |m: &Classifier| {
            let p = m.probabilities(x.view());
            -y.iter().enumerate().map(|(i, &c)| p[[i, c]].ln()).sum::<f64>() / 30.0
        };
        let before = loss(&m);
        m.train(x.view(), &y, 100).unwrap();
        assert!(loss(&m) < before);
    }
}
