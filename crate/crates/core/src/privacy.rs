//! Rényi-DP accounting for the subsampled Gaussian mechanism applied to each
//! noised discriminator update, conversion to (ε, δ), noise calibration and
//! the budget gate used by the trainer.

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};
use crate::par;

pub const DEFAULT_DELTA: f64 = 1e-5;
pub const DEFAULT_CLIP: f64 = 0.01;
/// Largest noise multiplier considered by [`calibrate_sigma`].
pub const MAX_SIGMA: f64 = 1e6;
/// Relative width of the final bisection bracket in [`calibrate_sigma`].
pub const CALIBRATION_TOL: f64 = 1e-6;

/// The fixed grid of Rényi orders.
pub fn default_orders() -> Vec<f64> {
    let mut orders = vec![1.25, 1.5, 1.75];
    orders.extend((2..=64).map(f64::from));
    orders.extend([80.0, 96.0, 128.0, 256.0, 512.0]);
    orders
}

/// Privacy parameters of a training run. `target_epsilon == inf` disables
/// both clipping and noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacySpec {
    #[serde(with = "crate::serde_f64")]
    pub target_epsilon: f64,
    pub delta: f64,
    pub noise_multiplier: f64,
    pub clip: f64,
    pub sampling_rate: f64,
}

impl PrivacySpec {
    pub fn non_private(sampling_rate: f64) -> Self {
        PrivacySpec {
            target_epsilon: f64::INFINITY,
            delta: DEFAULT_DELTA,
            noise_multiplier: 0.0,
            clip: DEFAULT_CLIP,
            sampling_rate,
        }
    }

    pub fn is_private(&self) -> bool {
        self.target_epsilon.is_finite()
    }

    /// Per-coordinate sensitivity bound of a value-clipped gradient: the width
    /// of the clipping interval.
    pub fn gradient_bound(&self) -> f64 {
        2.0 * self.clip
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidArgument(format!("delta must lie in (0,1), got {}", self.delta)));
        }
        if !(self.noise_multiplier >= 0.0) || !self.noise_multiplier.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise multiplier must be finite and non-negative, got {}",
                self.noise_multiplier
            )));
        }
        if !(self.sampling_rate > 0.0 && self.sampling_rate <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "sampling rate must lie in (0,1], got {}",
                self.sampling_rate
            )));
        }
        if !(self.target_epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "target epsilon must be positive or inf, got {}",
                self.target_epsilon
            )));
        }
        if !(self.clip > 0.0) {
            return Err(Error::InvalidArgument(format!("clip constant must be positive, got {}", self.clip)));
        }
        if self.is_private() && self.noise_multiplier == 0.0 {
            return Err(Error::Privacy("a finite epsilon requires a positive noise multiplier".into()));
        }
        Ok(())
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `log A_α` for integer α ≥ 1, where
/// `A_α = Σ_k C(α,k) (1-q)^(α-k) q^k exp((k²-k)/(2σ²))`.
fn log_moment_int(q: f64, sigma: f64, alpha: u64) -> f64 {
    let (lq, l1q) = (q.ln(), (-q).ln_1p());
    let s2 = 2.0 * sigma * sigma;
    (0..=alpha).fold(f64::NEG_INFINITY, |acc, k| {
        let kf = k as f64;
        let term = ln_binomial(alpha, k) + (alpha - k) as f64 * l1q + kf * lq + (kf * kf - kf) / s2;
        log_add(acc, term)
    })
}

/// RDP of one application of the Poisson-subsampled Gaussian mechanism at
/// order `alpha`. Integer orders use the exact binomial expansion; fractional
/// orders interpolate `log A_α` linearly between the bracketing integers,
/// which upper-bounds the true value because `log A_α` is convex in α.
pub fn rdp_per_step(q: f64, sigma: f64, alpha: f64) -> f64 {
    assert!(alpha > 1.0, "Rényi order must exceed 1");
    if q == 0.0 {
        return 0.0;
    }
    if sigma == 0.0 {
        return f64::INFINITY;
    }
    if q == 1.0 {
        return alpha / (2.0 * sigma * sigma);
    }
    let lo = alpha.floor();
    let log_a = if lo == alpha {
        log_moment_int(q, sigma, alpha as u64)
    } else {
        let hi = lo + 1.0;
        let at_lo = if lo <= 1.0 { 0.0 } else { log_moment_int(q, sigma, lo as u64) };
        let at_hi = log_moment_int(q, sigma, hi as u64);
        (hi - alpha) * at_lo + (alpha - lo) * at_hi
    };
    (log_a / (alpha - 1.0)).max(0.0)
}

/// Accumulated RDP per order and the number of accounted steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountantState {
    pub orders: Vec<f64>,
    #[serde(with = "crate::serde_f64::vec")]
    pub rdp: Vec<f64>,
    pub steps: u64,
}

impl Default for AccountantState {
    fn default() -> Self {
        Self::new(default_orders())
    }
}

impl AccountantState {
    pub fn new(orders: Vec<f64>) -> Self {
        let rdp = vec![0.0; orders.len()];
        AccountantState { orders, rdp, steps: 0 }
    }

    /// Per-order RDP cost of one step under `spec`.
    pub fn step_cost(&self, spec: &PrivacySpec) -> Vec<f64> {
        par::map_slice(&self.orders, |&a| rdp_per_step(spec.sampling_rate, spec.noise_multiplier, a))
    }

    /// Compose one more step (RDP adds across steps).
    pub fn accumulate(&mut self, spec: &PrivacySpec) {
        let cost = self.step_cost(spec);
        self.add_cost(&cost);
    }

    pub(crate) fn add_cost(&mut self, cost: &[f64]) {
        for (r, c) in self.rdp.iter_mut().zip(cost) {
            *r += c;
        }
        self.steps += 1;
    }

    /// Accumulate `steps` identical steps at once.
    pub fn accumulate_many(&mut self, spec: &PrivacySpec, steps: u64) {
        let cost = self.step_cost(spec);
        for (r, c) in self.rdp.iter_mut().zip(&cost) {
            *r += c * steps as f64;
        }
        self.steps += steps;
    }

    pub fn to_eps(&self, delta: f64) -> f64 {
        eps_from_rdp(&self.orders, &self.rdp, delta)
    }
}

/// `min_α RDP(α) + ln(1/δ)/(α−1)`.
pub fn eps_from_rdp(orders: &[f64], rdp: &[f64], delta: f64) -> f64 {
    let log_inv_delta = -delta.ln();
    orders
        .iter()
        .zip(rdp)
        .map(|(&a, &r)| r + log_inv_delta / (a - 1.0))
        .fold(f64::INFINITY, f64::min)
}

/// ε after `steps` steps at sampling rate `q` and noise `sigma`.
pub fn epsilon_after(q: f64, sigma: f64, steps: u64, delta: f64) -> f64 {
    let orders = default_orders();
    let rdp = par::map_slice(&orders, |&a| rdp_per_step(q, sigma, a) * steps as f64);
    eps_from_rdp(&orders, &rdp, delta)
}

/// Smallest noise multiplier (within [`CALIBRATION_TOL`] relative) such that
/// `planned_steps` steps stay within `target_epsilon`. Infinite targets map to
/// zero noise.
pub fn calibrate_sigma(target_epsilon: f64, delta: f64, planned_steps: u64, q: f64) -> Result<f64> {
    if target_epsilon == f64::INFINITY {
        return Ok(0.0);
    }
    if !(target_epsilon > 0.0) || !target_epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!("invalid target epsilon {target_epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) || !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidArgument(format!("invalid delta {delta} or sampling rate {q}")));
    }
    let eps = |s: f64| epsilon_after(q, s, planned_steps, delta);
    if eps(MAX_SIGMA) > target_epsilon {
        return Err(Error::Privacy(format!(
            "epsilon {target_epsilon} is unreachable for {planned_steps} steps at q={q} with sigma <= {MAX_SIGMA}"
        )));
    }
    let mut lo = 1e-3;
    if eps(lo) <= target_epsilon {
        return Ok(lo);
    }
    let mut hi = MAX_SIGMA;
    while hi / lo - 1.0 > CALIBRATION_TOL {
        let mid = (lo * hi).sqrt();
        if eps(mid) <= target_epsilon {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// True once the spent ε exceeds the target (never for an infinite target).
pub fn budget_exceeded(state: &AccountantState, spec: &PrivacySpec) -> bool {
    spec.is_private() && state.to_eps(spec.delta) > spec.target_epsilon
}

/// True if one more step under `spec` would push ε past the target.
pub fn next_step_exceeds(state: &AccountantState, spec: &PrivacySpec) -> bool {
    if !spec.is_private() {
        return false;
    }
    let mut next = state.clone();
    next.accumulate(spec);
    budget_exceeded(&next, spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(q: f64, sigma: f64, eps: f64) -> PrivacySpec {
        PrivacySpec {
            target_epsilon: eps,
            delta: 1e-5,
            noise_multiplier: sigma,
            clip: DEFAULT_CLIP,
            sampling_rate: q,
        }
    }

    #[test]
    fn unsampled_gaussian_closed_form() {
        assert!((rdp_per_step(1.0, 5.0, 2.0) - 0.04).abs() < 1e-15);
        for &a in &default_orders() {
            let v = rdp_per_step(1.0, 1.7, a);
            assert!((v - a / (2.0 * 1.7 * 1.7)).abs() <= 1e-12 * v);
        }
    }

    #[test]
    fn integer_sum_matches_closed_form_near_one() {
        // q -> 1 from below must approach the closed form
        let v = rdp_per_step(1.0 - 1e-12, 2.0, 8.0);
        assert!((v - 8.0 / 8.0).abs() < 1e-6, "{v}");
    }

    #[test]
    fn vanishing_sampling_rate() {
        assert_eq!(rdp_per_step(0.0, 1.0, 8.0), 0.0);
        assert!(rdp_per_step(1e-8, 1.0, 8.0) < 1e-12);
        assert_eq!(rdp_per_step(0.5, 0.0, 2.0), f64::INFINITY);
    }

    #[test]
    fn additive_composition() {
        let mut st = AccountantState::default();
        let s = spec(1.0, 5.0, f64::INFINITY);
        for _ in 0..100 {
            st.accumulate(&s);
        }
        let i = st.orders.iter().position(|&a| a == 2.0).unwrap();
        assert!((st.rdp[i] - 4.0).abs() < 1e-12);
        assert_eq!(st.steps, 100);
        let fresh = AccountantState::default();
        assert!(fresh.rdp.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn interleaved_specs_add() {
        let (a, b) = (spec(0.1, 1.0, 10.0), spec(0.3, 2.0, 10.0));
        let mut mixed = AccountantState::default();
        let mut only_a = AccountantState::default();
        let mut only_b = AccountantState::default();
        for _ in 0..5 {
            mixed.accumulate(&a);
            mixed.accumulate(&b);
            only_a.accumulate(&a);
            only_b.accumulate(&b);
        }
        for i in 0..mixed.rdp.len() {
            let sum = only_a.rdp[i] + only_b.rdp[i];
            assert!((mixed.rdp[i] - sum).abs() <= 1e-12 * sum.max(1.0));
        }
    }

    #[test]
    fn eps_matches_grid_sweep() {
        let mut st = AccountantState::default();
        st.accumulate_many(&spec(1.0, 5.0, f64::INFINITY), 100);
        let sweep = default_orders()
            .iter()
            .map(|&a| 100.0 * a / 50.0 + (1e5f64).ln() / (a - 1.0))
            .fold(f64::INFINITY, f64::min);
        assert!((st.to_eps(1e-5) - sweep).abs() < 1e-12);
        // order 4 alone gives 11.837; the grid does better
        let at4 = 8.0 + (1e5f64).ln() / 3.0;
        assert!((at4 - 11.8376).abs() < 1e-4);
        assert!(st.to_eps(1e-5) <= at4);
    }

    #[test]
    fn empty_state_baseline() {
        let st = AccountantState::default();
        let expected = default_orders()
            .iter()
            .map(|&a| (1e5f64).ln() / (a - 1.0))
            .fold(f64::INFINITY, f64::min);
        assert_eq!(st.to_eps(1e-5), expected);
        assert!(!budget_exceeded(&st, &spec(0.1, 1.0, expected)));
    }

    #[test]
    fn calibration_post_check() {
        for &target in &[0.5, 1.0, 4.0, 8.0] {
            let (q, steps) = (0.05, 400);
            let s = calibrate_sigma(target, 1e-5, steps, q).unwrap();
            assert!(epsilon_after(q, s, steps, 1e-5) <= target);
            assert!(epsilon_after(q, s * (1.0 - 2.0 * CALIBRATION_TOL), steps, 1e-5) > target);
        }
        let s1 = calibrate_sigma(1.0, 1e-5, 400, 0.05).unwrap();
        let s2 = calibrate_sigma(2.0, 1e-5, 400, 0.05).unwrap();
        assert!(s2 <= s1);
        assert_eq!(calibrate_sigma(f64::INFINITY, 1e-5, 400, 0.05).unwrap(), 0.0);
        assert!(matches!(calibrate_sigma(1e-4, 1e-5, 400, 0.05), Err(Error::Privacy(_))));
    }

    #[test]
    fn gate_trips_one_step_past_horizon() {
        let (q, steps) = (0.1, 40);
        let sigma = calibrate_sigma(1.0, 1e-5, steps, q).unwrap();
        let sp = spec(q, sigma, 1.0);
        let mut st = AccountantState::default();
        st.accumulate_many(&sp, steps);
        assert!(!budget_exceeded(&st, &sp));
        assert!(next_step_exceeds(&st, &sp));
        st.accumulate(&sp);
        assert!(budget_exceeded(&st, &sp));
        assert!(!budget_exceeded(&st, &spec(q, sigma, f64::INFINITY)));
    }

    #[test]
    fn spec_validation() {
        assert!(spec(0.1, 1.0, 1.0).validate().is_ok());
        assert!(spec(0.1, 0.0, 1.0).validate().is_err());
        assert!(spec(0.1, 0.0, f64::INFINITY).validate().is_ok());
        assert!(spec(0.0, 1.0, 1.0).validate().is_err());
        assert!(PrivacySpec { delta: 1.0, ..spec(0.1, 1.0, 1.0) }.validate().is_err());
    }
}
