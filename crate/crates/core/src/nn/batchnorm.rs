use ndarray::{Array1, Array2, ArrayView2, Axis};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-feature batch normalization with affine parameters and running
/// statistics for eval mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

/// Batch statistics retained for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
    pub mean: Array1<f64>,
    /// Biased batch variance.
    pub var: Array1<f64>,
}

impl BatchNorm {
    pub fn new(features: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(features),
            beta: Array1::zeros(features),
            running_mean: Array1::zeros(features),
            running_var: Array1::ones(features),
        }
    }

    pub fn forward_train(&self, x: ArrayView2<f64>) -> (Array2<f64>, BnCache) {
        let n = x.nrows() as f64;
        let mean = x.sum_axis(Axis(0)) / n;
        let mut xhat = x.as_standard_layout().into_owned();
        let mut var = Array1::<f64>::zeros(mean.len());
        for mut row in xhat.rows_mut() {
            let (row, mean, var) = (row.as_slice_mut().unwrap(), mean.as_slice().unwrap(), var.as_slice_mut().unwrap());
            for ((v, &m), s) in row.iter_mut().zip(mean).zip(var.iter_mut()) {
                *v -= m;
                *s += *v * *v;
            }
        }
        var /= n;
        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
        let mut y = Array2::zeros(xhat.raw_dim());
        for (mut xr, mut yr) in xhat.rows_mut().into_iter().zip(y.rows_mut()) {
            let (xr, yr) = (xr.as_slice_mut().unwrap(), yr.as_slice_mut().unwrap());
            let params = inv_std.iter().zip(&self.gamma).zip(&self.beta);
            for ((xv, yv), ((&is, &g), &b)) in xr.iter_mut().zip(yr.iter_mut()).zip(params) {
                *xv *= is;
                *yv = *xv * g + b;
            }
        }
        (y, BnCache { xhat, inv_std, mean, var })
    }

    pub fn forward_eval(&self, x: ArrayView2<f64>) -> Array2<f64> {
        // y = x * scale + shift with the running statistics folded in
        let scale: Vec<f64> =
            self.running_var.iter().zip(&self.gamma).map(|(&v, &g)| g / (v + BN_EPS).sqrt()).collect();
        let shift: Vec<f64> =
            self.running_mean.iter().zip(&scale).zip(&self.beta).map(|((&m, &s), &b)| b - m * s).collect();
        let mut y = x.as_standard_layout().into_owned();
        for mut row in y.rows_mut() {
            for ((v, &s), &t) in row.as_slice_mut().unwrap().iter_mut().zip(&scale).zip(&shift) {
                *v = *v * s + t;
            }
        }
        y
    }

    /// Fold one training batch into the running statistics (unbiased variance).
    pub fn update_running(&mut self, cache: &BnCache, batch: usize) {
        let n = batch as f64;
        let unbiased = if batch > 1 { &cache.var * (n / (n - 1.0)) } else { cache.var.clone() };
        self.running_mean = &self.running_mean * (1.0 - BN_MOMENTUM) + &cache.mean * BN_MOMENTUM;
        self.running_var = &self.running_var * (1.0 - BN_MOMENTUM) + unbiased * BN_MOMENTUM;
    }

    /// Full backward through the batch statistics. Returns `(dx, dγ, dβ)`.
    pub fn backward(&self, cache: &BnCache, dy: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
        let n = dy.nrows() as f64;
        let width = self.gamma.len();
        let dy = dy.as_standard_layout();
        let mut dgamma = vec![0.0; width];
        let mut dbeta = vec![0.0; width];
        for (d, x) in dy.rows().into_iter().zip(cache.xhat.rows()) {
            for (((g, b), &dv), &xv) in dgamma.iter_mut().zip(dbeta.iter_mut()).zip(d.as_slice().unwrap()).zip(x.as_slice().unwrap()) {
                *g += dv * xv;
                *b += dv;
            }
        }
        // dx = γ·inv_std/n · (n·dy − Σdy − x̂·Σ(dy·x̂))
        let coef: Vec<f64> = self.gamma.iter().zip(&cache.inv_std).map(|(&g, &s)| g * s / n).collect();
        let mut dx = Array2::zeros(dy.raw_dim());
        for ((d, x), mut out) in dy.rows().into_iter().zip(cache.xhat.rows()).zip(dx.rows_mut()) {
            let cols = d.as_slice().unwrap().iter().zip(x.as_slice().unwrap()).zip(out.as_slice_mut().unwrap());
            for ((((&dv, &xv), o), &c), (&sg, &sb)) in cols.zip(&coef).zip(dgamma.iter().zip(&dbeta)) {
                *o = c * (n * dv - sb - xv * sg);
            }
        }
        (dx, Array1::from(dgamma), Array1::from(dbeta))
    }
}
