//! Independent reference computations used to check the library.

use dpcgans_core::data::{Cell, DataTable};

/// Plain maximum-likelihood EM for a two-component 1-D Gaussian mixture,
/// started from the lower and upper quartiles. Returns sorted means.
pub fn em_two_means(x: &[f64]) -> [f64; 2] {
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let mut mu = [sorted[x.len() / 4], sorted[3 * x.len() / 4]];
    let mut var = [1.0, 1.0];
    let mut w = [0.5, 0.5];
    for _ in 0..500 {
        let mut r0 = vec![0.0; x.len()];
        for (i, &v) in x.iter().enumerate() {
            let p: Vec<f64> = (0..2)
                .map(|k| w[k] * (-(v - mu[k]).powi(2) / (2.0 * var[k])).exp() / var[k].sqrt())
                .collect();
            r0[i] = p[0] / (p[0] + p[1]);
        }
        for k in 0..2 {
            let r: Vec<f64> = r0.iter().map(|&a| if k == 0 { a } else { 1.0 - a }).collect();
            let nk: f64 = r.iter().sum();
            mu[k] = r.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() / nk;
            var[k] = r.iter().zip(x).map(|(a, v)| a * (v - mu[k]).powi(2)).sum::<f64>() / nk;
            w[k] = nk / n;
        }
    }
    if mu[0] > mu[1] {
        mu.swap(0, 1);
    }
    mu
}

/// RDP of the Poisson-subsampled Gaussian mechanism by numerical
/// integration of `E_{z~N(0,σ²)}[((1-q) + q·exp((2z-1)/(2σ²)))^α]`.
pub fn rdp_quadrature(q: f64, sigma: f64, alpha: f64) -> f64 {
    let lo = -14.0 * sigma - 1.0;
    let hi = alpha + 14.0 * sigma + 1.0;
    let h = sigma / 500.0;
    let steps = ((hi - lo) / h).ceil() as usize;
    let s2 = 2.0 * sigma * sigma;
    let log_norm = -(std::f64::consts::TAU.ln() / 2.0 + sigma.ln());
    let log_base = |z: f64| {
        let e = (2.0 * z - 1.0) / s2;
        // log((1-q) + q e^e), stable for large e
        if e > 0.0 {
            e + q.ln() + ((1.0 - q) * (-e).exp() / q).ln_1p()
        } else {
            (q * e.exp_m1()).ln_1p()
        }
    };
    let weight = |i: usize| -> f64 { if i == 0 || i == steps { 0.5 } else { 1.0 } };
    // log-space estimate of log A
    let terms: Vec<f64> = (0..=steps)
        .map(|i| {
            let z = lo + i as f64 * h;
            weight(i).ln() + log_norm - z * z / s2 + alpha * log_base(z)
        })
        .collect();
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_a = m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln() + h.ln();
    if log_a > 1.0 {
        return log_a / (alpha - 1.0);
    }
    // small values: integrate A - 1 directly to keep relative accuracy
    let excess: f64 = (0..=steps)
        .map(|i| {
            let z = lo + i as f64 * h;
            weight(i) * (log_norm - z * z / s2).exp() * (alpha * log_base(z)).exp_m1()
        })
        .sum::<f64>()
        * h;
    excess.ln_1p() / (alpha - 1.0)
}

/// All-pairs membership counting `(tp, fp, tn, fn)` with its own min-max scaling.
pub fn identity_oracle(train: &DataTable, holdout: &DataTable, synth: &DataTable, d: f64) -> (usize, usize, usize, usize) {
    let width = train.n_cols();
    let mut lo = vec![f64::INFINITY; width];
    let mut hi = vec![f64::NEG_INFINITY; width];
    for row in train.rows().iter().chain(holdout.rows()) {
        for (j, c) in row.iter().enumerate() {
            if let Cell::Value(v) = c {
                lo[j] = lo[j].min(*v);
                hi[j] = hi[j].max(*v);
            }
        }
    }
    let scaled = |j: usize, v: f64| if hi[j] > lo[j] { (v - lo[j]) / (hi[j] - lo[j]) } else { v - lo[j] };
    let dist = |a: &[Cell], b: &[Cell]| {
        let mut ham = 0.0;
        let mut sq = 0.0;
        for j in 0..a.len() {
            match (a[j], b[j]) {
                (Cell::Category(x), Cell::Category(y)) if x != y => ham += 1.0,
                (Cell::Value(x), Cell::Value(y)) => sq += (scaled(j, x) - scaled(j, y)).powi(2),
                _ => {}
            }
        }
        (ham + sq.sqrt()) / a.len() as f64
    };
    let member = |r: &Vec<Cell>| synth.rows().iter().any(|s| dist(r, s) <= d);
    let tp = train.rows().iter().filter(|r| member(r)).count();
    let fp = holdout.rows().iter().filter(|r| member(r)).count();
    (tp, fp, holdout.n_rows() - fp, train.n_rows() - tp)
}
