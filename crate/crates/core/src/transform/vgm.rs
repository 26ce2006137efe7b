//! One-dimensional variational Gaussian mixture with a truncated
//! stick-breaking (Dirichlet process) prior on the weights and Normal-Gamma
//! priors on each component's mean and precision. Fitted by coordinate ascent;
//! the evidence lower bound is tracked exactly so convergence is monotone.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VgmConfig {
    pub max_components: usize,
    pub weight_concentration_prior: f64,
    pub weight_threshold: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for VgmConfig {
    fn default() -> Self {
        VgmConfig {
            max_components: 10,
            weight_concentration_prior: 1e-3,
            weight_threshold: 1e-3,
            tol: 1e-4,
            max_iter: 200,
            seed: 0,
        }
    }
}

/// Kept mixture components, already renormalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixtureFit {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub weights: Vec<f64>,
    /// Index of each kept component in the truncated stick-breaking order.
    pub kept_components: Vec<usize>,
}

impl GaussianMixtureFit {
    pub fn n_components(&self) -> usize {
        self.means.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.means.len();
        if k == 0 || k != self.stds.len() || k != self.weights.len() || k != self.kept_components.len() {
            return Err(Error::ModelFormat("inconsistent mixture component arrays".into()));
        }
        if self.stds.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::ModelFormat("mixture stds must be positive".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::ModelFormat(format!("mixture weights sum to {total}")));
        }
        Ok(())
    }

    /// Log of `pi_k * N(x; mu_k, sigma_k)` for every kept component.
    pub fn log_weighted_densities(&self, x: f64) -> Vec<f64> {
        self.means
            .iter()
            .zip(&self.stds)
            .zip(&self.weights)
            .map(|((&mu, &sd), &w)| {
                let z = (x - mu) / sd;
                w.ln() - sd.ln() - 0.5 * (2.0 * PI).ln() - 0.5 * z * z
            })
            .collect()
    }

    /// Posterior probability of each component having produced `x`.
    pub fn responsibilities(&self, x: f64) -> Vec<f64> {
        let mut l = self.log_weighted_densities(x);
        softmax_in_place(&mut l);
        l
    }
}

/// Result of a fit together with the per-iteration lower bound.
#[derive(Debug, Clone)]
pub struct VgmTrace {
    pub fit: GaussianMixtureFit,
    pub lower_bounds: Vec<f64>,
    pub converged: bool,
    /// Expected weights of all truncated components, before thresholding.
    pub raw_weights: Vec<f64>,
}

fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

pub fn sigma_floor(values: &[f64]) -> f64 {
    let (lo, hi) = min_max(values);
    let range = hi - lo;
    1e-6 * if range > 0.0 { range } else { 1.0 }
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Fit the mixture and keep components whose expected weight reaches the
/// threshold.
pub fn fit_vgm(values: &[f64], config: &VgmConfig) -> Result<GaussianMixtureFit> {
    fit_vgm_traced(values, config).map(|t| t.fit)
}

struct Prior {
    concentration: f64,
    mean: f64,
    mean_precision: f64,
    shape: f64,
    rate: f64,
}

/// Variational factors: Beta sticks and Normal-Gamma components.
struct Posterior {
    stick_a: Vec<f64>,
    stick_b: Vec<f64>,
    mean: Vec<f64>,
    mean_precision: Vec<f64>,
    shape: Vec<f64>,
    rate: Vec<f64>,
}

struct Stats {
    count: Vec<f64>,
    mean: Vec<f64>,
    scatter: Vec<f64>,
}

fn sufficient_stats(x: &[f64], resp: &[f64], k: usize, fallback_mean: f64) -> Stats {
    let mut count = vec![0.0; k];
    let mut sum = vec![0.0; k];
    for (n, &xn) in x.iter().enumerate() {
        for j in 0..k {
            let r = resp[n * k + j];
            count[j] += r;
            sum[j] += r * xn;
        }
    }
    let mean: Vec<f64> = (0..k)
        .map(|j| if count[j] > 1e-12 { sum[j] / count[j] } else { fallback_mean })
        .collect();
    let mut scatter = vec![0.0; k];
    for (n, &xn) in x.iter().enumerate() {
        for j in 0..k {
            let d = xn - mean[j];
            scatter[j] += resp[n * k + j] * d * d;
        }
    }
    Stats { count, mean, scatter }
}

fn m_step(stats: &Stats, prior: &Prior) -> Posterior {
    let k = stats.count.len();
    let mut stick_a = vec![1.0; k];
    let mut stick_b = vec![prior.concentration; k];
    let mut tail = 0.0;
    for j in (0..k).rev() {
        stick_a[j] = 1.0 + stats.count[j];
        stick_b[j] = prior.concentration + tail;
        tail += stats.count[j];
    }
    let mut post = Posterior {
        stick_a,
        stick_b,
        mean: vec![0.0; k],
        mean_precision: vec![0.0; k],
        shape: vec![0.0; k],
        rate: vec![0.0; k],
    };
    for j in 0..k {
        let nk = stats.count[j];
        let beta = prior.mean_precision + nk;
        let dm = stats.mean[j] - prior.mean;
        post.mean_precision[j] = beta;
        post.mean[j] = (prior.mean_precision * prior.mean + nk * stats.mean[j]) / beta;
        post.shape[j] = prior.shape + 0.5 * nk;
        post.rate[j] =
            prior.rate + 0.5 * (stats.scatter[j] + prior.mean_precision * nk * dm * dm / beta);
    }
    post
}

/// `E[log pi_k]` under the truncated stick-breaking posterior (last stick is 1).
fn expected_log_weights(post: &Posterior) -> Vec<f64> {
    let k = post.stick_a.len();
    let mut out = vec![0.0; k];
    let mut acc = 0.0;
    for j in 0..k {
        if j + 1 < k {
            let (a, b) = (post.stick_a[j], post.stick_b[j]);
            let dab = digamma(a + b);
            out[j] = acc + digamma(a) - dab;
            acc += digamma(b) - dab;
        } else {
            out[j] = acc;
        }
    }
    out
}

fn expected_weights(post: &Posterior) -> Vec<f64> {
    let k = post.stick_a.len();
    let mut out = vec![0.0; k];
    let mut rest = 1.0;
    for j in 0..k {
        if j + 1 < k {
            let (a, b) = (post.stick_a[j], post.stick_b[j]);
            out[j] = rest * a / (a + b);
            rest *= b / (a + b);
        } else {
            out[j] = rest;
        }
    }
    out
}

fn e_step(x: &[f64], post: &Posterior) -> Vec<f64> {
    let k = post.mean.len();
    let log_w = expected_log_weights(post);
    let e_log_prec: Vec<f64> = (0..k)
        .map(|j| digamma(post.shape[j]) - post.rate[j].ln())
        .collect();
    let mut resp = vec![0.0; x.len() * k];
    for (n, &xn) in x.iter().enumerate() {
        let row = &mut resp[n * k..(n + 1) * k];
        for j in 0..k {
            let d = xn - post.mean[j];
            let e_quad = 1.0 / post.mean_precision[j] + post.shape[j] / post.rate[j] * d * d;
            row[j] = log_w[j] + 0.5 * e_log_prec[j] - 0.5 * (2.0 * PI).ln() - 0.5 * e_quad;
        }
        softmax_in_place(row);
    }
    resp
}

fn ln_beta_fn(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Exact evidence lower bound for responsibilities `resp` and factors `post`.
fn lower_bound(x: &[f64], resp: &[f64], post: &Posterior, prior: &Prior) -> f64 {
    let k = post.mean.len();
    let stats = sufficient_stats(x, resp, k, prior.mean);
    let log_w = expected_log_weights(post);
    let ln2pi = (2.0 * PI).ln();
    let mut elbo = 0.0;
    for j in 0..k {
        let (a, b, beta, m) = (post.shape[j], post.rate[j], post.mean_precision[j], post.mean[j]);
        let e_log_prec = digamma(a) - b.ln();
        let e_prec = a / b;
        let nk = stats.count[j];
        // likelihood
        let quad = stats.scatter[j] + nk * (stats.mean[j] - m).powi(2);
        elbo += 0.5 * nk * (e_log_prec - ln2pi) - 0.5 * (nk / beta + e_prec * quad);
        // assignments
        elbo += nk * log_w[j];
        // Normal-Gamma prior minus posterior
        let e_prior_mean = 0.5 * (prior.mean_precision.ln() - ln2pi + e_log_prec)
            - 0.5 * prior.mean_precision * (1.0 / beta + e_prec * (m - prior.mean).powi(2));
        let e_prior_prec = prior.shape * prior.rate.ln() - ln_gamma(prior.shape)
            + (prior.shape - 1.0) * e_log_prec
            - prior.rate * e_prec;
        let e_q_mean = 0.5 * (beta.ln() - ln2pi + e_log_prec) - 0.5;
        let e_q_prec = a * b.ln() - ln_gamma(a) + (a - 1.0) * e_log_prec - a;
        elbo += e_prior_mean + e_prior_prec - e_q_mean - e_q_prec;
        // sticks
        if j + 1 < k {
            let (sa, sb) = (post.stick_a[j], post.stick_b[j]);
            let dab = digamma(sa + sb);
            let e_log_v = digamma(sa) - dab;
            let e_log_1mv = digamma(sb) - dab;
            let e_prior = -ln_beta_fn(1.0, prior.concentration) + (prior.concentration - 1.0) * e_log_1mv;
            let e_q = -ln_beta_fn(sa, sb) + (sa - 1.0) * e_log_v + (sb - 1.0) * e_log_1mv;
            elbo += e_prior - e_q;
        }
    }
    let entropy: f64 = resp
        .iter()
        .filter(|&&r| r > 0.0)
        .map(|&r| -r * r.ln())
        .sum();
    elbo + entropy
}

/// k-means++ seeding followed by Lloyd iterations; returns hard assignments.
fn kmeans_labels(x: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = x.len();
    let mut centers = Vec::with_capacity(k);
    centers.push(x[rng.random_range(0..n)]);
    let mut d2: Vec<f64> = x.iter().map(|&v| (v - centers[0]).powi(2)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            x[pick]
        } else {
            x[rng.random_range(0..n)]
        };
        centers.push(next);
        for (d, &v) in d2.iter_mut().zip(x) {
            *d = d.min((v - next).powi(2));
        }
    }
    let mut labels = vec![0usize; n];
    for _ in 0..100 {
        let mut changed = false;
        for (i, &v) in x.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| (v - centers[a]).abs().total_cmp(&(v - centers[b]).abs()))
                .unwrap();
            if best != labels[i] {
                labels[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (&l, &v) in labels.iter().zip(x) {
            sums[l] += v;
            counts[l] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j] / counts[j] as f64;
            }
        }
        if !changed {
            break;
        }
    }
    labels
}

/// Component indices ordered by decreasing expected count (stable).
fn size_order(count: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..count.len()).collect();
    order.sort_by(|&a, &b| count[b].total_cmp(&count[a]));
    order
}

/// Column `j` of the result is column `order[j]` of `resp`.
fn permute_columns(resp: &[f64], order: &[usize]) -> Vec<f64> {
    let k = order.len();
    let mut out = vec![0.0; resp.len()];
    for (src, dst) in resp.chunks_exact(k).zip(out.chunks_exact_mut(k)) {
        for (j, &o) in order.iter().enumerate() {
            dst[j] = src[o];
        }
    }
    out
}

/// Full fit, returning the lower-bound trace for diagnostics.
pub fn fit_vgm_traced(values: &[f64], config: &VgmConfig) -> Result<VgmTrace> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("cannot fit a mixture to an empty column".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("mixture input contains non-finite values".into()));
    }
    if config.max_components == 0 {
        return Err(Error::InvalidArgument("max_components must be at least 1".into()));
    }
    let floor = sigma_floor(values);
    let (lo, hi) = min_max(values);
    if lo == hi {
        return Ok(VgmTrace {
            fit: GaussianMixtureFit {
                means: vec![lo],
                stds: vec![floor],
                weights: vec![1.0],
                kept_components: vec![0],
            },
            lower_bounds: Vec::new(),
            converged: true,
            raw_weights: vec![1.0],
        });
    }

    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let prior = Prior {
        concentration: config.weight_concentration_prior,
        mean,
        mean_precision: 1.0,
        shape: 0.5,
        rate: 0.5 * var,
    };

    let k = config.max_components.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let labels = kmeans_labels(values, k, &mut rng);
    let mut resp = vec![0.0; n * k];
    for (i, &l) in labels.iter().enumerate() {
        resp[i * k + l] = 1.0;
    }
    let init_counts = sufficient_stats(values, &resp, k, mean).count;
    let resp = permute_columns(&resp, &size_order(&init_counts));
    let mut post = m_step(&sufficient_stats(values, &resp, k, mean), &prior);
    let mut lower_bounds = Vec::new();
    let mut converged = false;
    for _ in 0..config.max_iter {
        let resp = e_step(values, &post);
        let stats = sufficient_stats(values, &resp, k, mean);
        post = m_step(&stats, &prior);
        let mut lb = lower_bound(values, &resp, &post, &prior);
        // Truncated stick-breaking favours large components first; try the
        // size-sorted relabelling and keep it only if the bound improves.
        let order = size_order(&stats.count);
        if order.iter().enumerate().any(|(i, &j)| i != j) {
            let permuted = permute_columns(&resp, &order);
            let post_sorted = m_step(&sufficient_stats(values, &permuted, k, mean), &prior);
            let lb_sorted = lower_bound(values, &permuted, &post_sorted, &prior);
            if lb_sorted > lb {
                post = post_sorted;
                lb = lb_sorted;
            }
        }
        let done = lower_bounds.last().is_some_and(|&prev: &f64| (lb - prev).abs() < config.tol);
        lower_bounds.push(lb);
        if done {
            converged = true;
            break;
        }
    }

    let raw_weights = expected_weights(&post);
    let kept: Vec<usize> = (0..k)
        .filter(|&j| raw_weights[j] >= config.weight_threshold)
        .collect();
    let kept = if kept.is_empty() {
        let best = (0..k).max_by(|&a, &b| raw_weights[a].total_cmp(&raw_weights[b])).unwrap();
        vec![best]
    } else {
        kept
    };
    let total: f64 = kept.iter().map(|&j| raw_weights[j]).sum();
    let fit = GaussianMixtureFit {
        means: kept.iter().map(|&j| post.mean[j]).collect(),
        stds: kept
            .iter()
            .map(|&j| (post.rate[j] / post.shape[j]).sqrt().max(floor))
            .collect(),
        weights: kept.iter().map(|&j| raw_weights[j] / total).collect(),
        kept_components: kept,
    };
    Ok(VgmTrace {
        fit,
        lower_bounds,
        converged,
        raw_weights,
    })
}
