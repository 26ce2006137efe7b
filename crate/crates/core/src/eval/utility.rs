//! Marginal similarity scores and pairwise dependency differences.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;

use super::{applicable, check_tables};
use crate::data::{ColumnKind, DataTable};
use crate::par;
use crate::{Error, Result};

pub const KL_BINS: usize = 20;
pub const KL_SMOOTHING: f64 = 1e-8;
/// Proportion floor for categories the real column never shows.
pub const CS_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScore {
    pub column: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub columns: [String; 2],
    pub real: f64,
    pub synthetic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityReport {
    pub kl_bins: usize,
    pub kl_categorical: Vec<ColumnScore>,
    #[serde(with = "applicable")]
    pub kl_categorical_mean: Option<f64>,
    pub kl_continuous: Vec<ColumnScore>,
    #[serde(with = "applicable")]
    pub kl_continuous_mean: Option<f64>,
    /// Per-column chi-square p-values on relative frequencies.
    pub cs_columns: Vec<ColumnScore>,
    #[serde(with = "applicable")]
    pub cs_score: Option<f64>,
    /// Per-column `1 − D` for the two-sample KS statistic `D`.
    pub ks_columns: Vec<ColumnScore>,
    #[serde(with = "applicable")]
    pub ks_score: Option<f64>,
    pub cramers_v: Vec<PairScore>,
    #[serde(with = "applicable")]
    pub cramers_v_diff: Option<f64>,
    pub pearson: Vec<PairScore>,
    #[serde(with = "applicable")]
    pub pearson_diff: Option<f64>,
}

fn counts(col: &[usize], k: usize) -> Vec<f64> {
    let mut c = vec![0.0; k];
    for &v in col {
        c[v] += 1.0;
    }
    c
}

fn smoothed(counts: &[f64]) -> Vec<f64> {
    let n: f64 = counts.iter().sum();
    let p: Vec<f64> = counts.iter().map(|&c| if n > 0.0 { c / n } else { 0.0 } + KL_SMOOTHING).collect();
    let z: f64 = p.iter().sum();
    p.into_iter().map(|v| v / z).collect()
}

/// `KL(P ‖ Q)` of two count vectors after additive smoothing.
pub fn kl_divergence(p_counts: &[f64], q_counts: &[f64]) -> f64 {
    let p = smoothed(p_counts);
    let q = smoothed(q_counts);
    p.iter().zip(&q).map(|(&a, &b)| a * (a / b).ln()).sum::<f64>().max(0.0)
}

pub fn kl_score_categorical(real: &[usize], synth: &[usize], categories: usize) -> f64 {
    1.0 / (1.0 + kl_divergence(&counts(real, categories), &counts(synth, categories)))
}

/// Equal-width histogram over `[lo, hi]`; the last bin is closed.
fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    let width = (hi - lo) / bins as f64;
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        h[b] += 1.0;
    }
    h
}

pub fn kl_score_continuous(real: &[f64], synth: &[f64]) -> f64 {
    let (lo, hi) = real.iter().chain(synth).fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if !(hi > lo) {
        return 1.0;
    }
    let kl = kl_divergence(&histogram(real, lo, hi, KL_BINS), &histogram(synth, lo, hi, KL_BINS));
    1.0 / (1.0 + kl)
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Per-column KL scores `(categorical, continuous)`.
pub fn kl_scores(real: &DataTable, synth: &DataTable) -> Result<(Vec<ColumnScore>, Vec<ColumnScore>)> {
    check_nonempty(real, synth)?;
    let schema = real.schema();
    let mut cat = Vec::new();
    let mut con = Vec::new();
    for (j, spec) in schema.columns.iter().enumerate() {
        match spec.kind {
            ColumnKind::Categorical => cat.push(ColumnScore {
                column: spec.name.clone(),
                score: kl_score_categorical(&real.categorical_column(j), &synth.categorical_column(j), spec.categories.len()),
            }),
            ColumnKind::Continuous => con.push(ColumnScore {
                column: spec.name.clone(),
                score: kl_score_continuous(&real.continuous_column(j), &synth.continuous_column(j)),
            }),
        }
    }
    Ok((cat, con))
}

fn check_nonempty(real: &DataTable, synth: &DataTable) -> Result<()> {
    check_tables(&[real, synth])?;
    if real.is_empty() || synth.is_empty() {
        return Err(Error::Data("metrics need non-empty tables".into()));
    }
    Ok(())
}

/// Upper tail of the chi-square distribution with `dof` degrees of freedom.
pub fn chi_square_sf(stat: f64, dof: usize) -> f64 {
    if dof == 0 || stat <= 0.0 {
        return 1.0;
    }
    gamma_ur(dof as f64 / 2.0, stat / 2.0)
}

/// Chi-square statistic of the synthetic sample against the real
/// proportions, over the categories seen in either sample. Observed and
/// expected values are scaled to a sample of size `scale`.
fn chi_square_stat(rc: &[f64], sc: &[f64], scale: f64) -> (f64, usize) {
    let n_real: f64 = rc.iter().sum();
    let n_synth: f64 = sc.iter().sum();
    let support: Vec<usize> = (0..rc.len()).filter(|&k| rc[k] > 0.0 || sc[k] > 0.0).collect();
    let floored = support.iter().any(|&k| rc[k] == 0.0);
    let z: f64 = if floored { support.iter().map(|&k| (rc[k] / n_real).max(CS_FLOOR)).sum() } else { 1.0 };
    let stat = support
        .iter()
        .map(|&k| {
            let e = if floored { scale * (rc[k] / n_real).max(CS_FLOOR) / z } else { scale * rc[k] / n_real };
            let o = if scale == n_synth { sc[k] } else { scale * sc[k] / n_synth };
            (o - e) * (o - e) / e
        })
        .sum();
    (stat, support.len().saturating_sub(1))
}

/// Pearson goodness-of-fit p-value on raw synthetic counts. Grows
/// arbitrarily strict with the synthetic sample size.
pub fn chi_square_p_counts(real: &[usize], synth: &[usize], categories: usize) -> f64 {
    let sc = counts(synth, categories);
    let n: f64 = sc.iter().sum();
    let (stat, dof) = chi_square_stat(&counts(real, categories), &sc, n);
    chi_square_sf(stat, dof)
}

/// Pearson goodness-of-fit p-value on relative frequencies (observed and
/// expected both sum to 1), the convention behind `cs_score`.
pub fn chi_square_p(real: &[usize], synth: &[usize], categories: usize) -> f64 {
    let (stat, dof) = chi_square_stat(&counts(real, categories), &counts(synth, categories), 1.0);
    chi_square_sf(stat, dof)
}

/// Per-column chi-square p-values and their mean.
pub fn cs_score(real: &DataTable, synth: &DataTable) -> Result<(Vec<ColumnScore>, f64)> {
    check_nonempty(real, synth)?;
    let cols = real.schema().categorical_indices();
    if cols.is_empty() {
        return Err(Error::InvalidArgument("CS test needs a categorical column".into()));
    }
    let scores: Vec<ColumnScore> = cols
        .iter()
        .map(|&j| {
            let spec = &real.schema().columns[j];
            ColumnScore {
                column: spec.name.clone(),
                score: chi_square_p(&real.categorical_column(j), &synth.categorical_column(j), spec.categories.len()),
            }
        })
        .collect();
    let m = mean(&scores.iter().map(|s| s.score).collect::<Vec<_>>()).unwrap_or(1.0);
    Ok((scores, m))
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

pub fn ks_score(real: &DataTable, synth: &DataTable) -> Result<(Vec<ColumnScore>, f64)> {
    check_nonempty(real, synth)?;
    let cols = real.schema().continuous_indices();
    if cols.is_empty() {
        return Err(Error::InvalidArgument("KS test needs a continuous column".into()));
    }
    let scores: Vec<ColumnScore> = cols
        .iter()
        .map(|&j| ColumnScore {
            column: real.schema().columns[j].name.clone(),
            score: 1.0 - ks_statistic(&real.continuous_column(j), &synth.continuous_column(j)),
        })
        .collect();
    let m = mean(&scores.iter().map(|s| s.score).collect::<Vec<_>>()).unwrap_or(1.0);
    Ok((scores, m))
}

/// Cramér's V of two categorical columns over observed categories.
pub fn cramers_v(a: &[usize], b: &[usize], ka: usize, kb: usize) -> f64 {
    let n = a.len() as f64;
    let mut table = vec![vec![0.0; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1.0;
    }
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..kb).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let r = rows.iter().filter(|&&v| v > 0.0).count();
    let c = cols.iter().filter(|&&v| v > 0.0).count();
    let k = r.min(c);
    if k < 2 {
        return 0.0;
    }
    let mut chi2 = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &o) in row.iter().enumerate() {
            let e = rows[i] * cols[j] / n;
            if e > 0.0 {
                chi2 += (o - e) * (o - e) / e;
            }
        }
    }
    (chi2 / (n * (k - 1) as f64)).sqrt().min(1.0)
}

fn pairs(cols: &[usize]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, &a) in cols.iter().enumerate() {
        for &b in &cols[i + 1..] {
            out.push((a, b));
        }
    }
    out
}

fn pair_name(real: &DataTable, a: usize, b: usize) -> [String; 2] {
    let c = &real.schema().columns;
    [c[a].name.clone(), c[b].name.clone()]
}

/// Per-pair Cramér's V and the mean absolute real/synthetic difference.
pub fn cramers_v_diff(real: &DataTable, synth: &DataTable) -> Result<(Vec<PairScore>, f64)> {
    check_nonempty(real, synth)?;
    let cols = real.schema().categorical_indices();
    if cols.len() < 2 {
        return Err(Error::InvalidArgument("Cramér's V needs two categorical columns".into()));
    }
    let k = |j: usize| real.schema().columns[j].categories.len();
    let scores = par::map_slice(&pairs(&cols), |&(a, b)| {
        let v = |t: &DataTable| cramers_v(&t.categorical_column(a), &t.categorical_column(b), k(a), k(b));
        PairScore { columns: pair_name(real, a, b), real: v(real), synthetic: v(synth) }
    });
    let diff = scores.iter().map(|p| (p.real - p.synthetic).abs()).sum::<f64>() / scores.len() as f64;
    Ok((scores, diff))
}

/// Pearson correlation; zero when either side has no variance.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Mean over pairs of `|r_real − r_synth| / 2`.
pub fn pearson_diff(real: &DataTable, synth: &DataTable) -> Result<(Vec<PairScore>, f64)> {
    check_nonempty(real, synth)?;
    let cols = real.schema().continuous_indices();
    if cols.len() < 2 {
        return Err(Error::InvalidArgument("Pearson correlation needs two continuous columns".into()));
    }
    let scores = par::map_slice(&pairs(&cols), |&(a, b)| {
        let r = |t: &DataTable| pearson(&t.continuous_column(a), &t.continuous_column(b));
        PairScore { columns: pair_name(real, a, b), real: r(real), synthetic: r(synth) }
    });
    let diff = scores.iter().map(|p| (p.real - p.synthetic).abs() / 2.0).sum::<f64>() / scores.len() as f64;
    Ok((scores, diff))
}

/// Every applicable similarity metric; inapplicable ones are `None`.
pub fn utility_report(real: &DataTable, synth: &DataTable) -> Result<UtilityReport> {
    let (kl_cat, kl_con) = kl_scores(real, synth)?;
    let schema = real.schema();
    let n_cat = schema.categorical_indices().len();
    let n_con = schema.continuous_indices().len();
    let (cs_columns, cs) = if n_cat > 0 { cs_score(real, synth).map(|(c, m)| (c, Some(m)))? } else { (vec![], None) };
    let (ks_columns, ks) = if n_con > 0 { ks_score(real, synth).map(|(c, m)| (c, Some(m)))? } else { (vec![], None) };
    let (cramers_v, cv) =
        if n_cat > 1 { cramers_v_diff(real, synth).map(|(c, m)| (c, Some(m)))? } else { (vec![], None) };
    let (pearson, pd) = if n_con > 1 { pearson_diff(real, synth).map(|(c, m)| (c, Some(m)))? } else { (vec![], None) };
    Ok(UtilityReport {
        kl_bins: KL_BINS,
        kl_categorical_mean: mean(&kl_cat.iter().map(|s| s.score).collect::<Vec<_>>()),
        kl_continuous_mean: mean(&kl_con.iter().map(|s| s.score).collect::<Vec<_>>()),
        kl_categorical: kl_cat,
        kl_continuous: kl_con,
        cs_columns,
        cs_score: cs,
        ks_columns,
        ks_score: ks,
        cramers_v,
        cramers_v_diff: cv,
        pearson,
        pearson_diff: pd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_two_point_example() {
        let real = [0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        let synth = [0, 0, 0, 0, 0, 0, 0, 0, 0, 1];
        let score = kl_score_categorical(&real, &synth, 2);
        let kl = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert!((score - 1.0 / (1.0 + kl)).abs() < 1e-6);
        assert!((score - 0.6619).abs() < 1e-4);
    }

    #[test]
    fn chi_square_example() {
        let real: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let synth: Vec<usize> = (0..100).map(|i| usize::from(i >= 90)).collect();
        let p = chi_square_p_counts(&real, &synth, 2);
        // P(χ²₁ > 64) = erfc(√32)
        let oracle = statrs::function::erf::erfc(32f64.sqrt());
        assert!((p - oracle).abs() <= 1e-6 * oracle, "{p} vs {oracle}");
        assert!(p < 1e-14);
        assert_eq!(chi_square_p_counts(&real, &real, 2), 1.0);
        // on frequencies the same samples give χ² = 0.64
        let oracle = statrs::function::erf::erfc(0.32f64.sqrt());
        let p = chi_square_p(&real, &synth, 2);
        assert!((p - oracle).abs() < 1e-9, "{p} vs {oracle}");
        assert_eq!(chi_square_p(&real, &real, 2), 1.0);
    }

    #[test]
    fn ks_extremes() {
        assert_eq!(ks_statistic(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]), 0.0);
        assert_eq!(ks_statistic(&[1.0, 2.0], &[5.0, 6.0, 7.0]), 1.0);
        assert!((ks_statistic(&[1.0, 2.0], &[2.0, 3.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cramers_v_extremes() {
        let a = [0, 0, 1, 1];
        assert!((cramers_v(&a, &a, 2, 2) - 1.0).abs() < 1e-12);
        assert_eq!(cramers_v(&a, &[0, 0, 0, 0], 2, 3), 0.0);
        assert_eq!(cramers_v(&[0, 1, 0, 1], &[0, 0, 1, 1], 2, 2), 0.0);
    }

    #[test]
    fn pearson_extremes() {
        let x = [1.0, 2.0, 3.0];
        assert!((pearson(&x, &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-12);
        assert!((pearson(&x, &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&x, &[1.0, 1.0, 1.0]), 0.0);
    }

    #[test]
    fn degenerate_continuous_range_scores_one() {
        assert_eq!(kl_score_continuous(&[2.0, 2.0], &[2.0]), 1.0);
    }
}
