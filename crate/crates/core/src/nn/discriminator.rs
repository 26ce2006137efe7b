use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::functional::{leaky_relu, leaky_relu_grad, LEAKY_SLOPE};
use super::{Grads, Linear, Params};
use crate::{Error, Result};

pub const DEFAULT_PAC: usize = 10;
pub const DEFAULT_DROPOUT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    /// Width of one unpacked row (data ‖ condition).
    pub row_dim: usize,
    pub pac: usize,
    pub hidden: Vec<usize>,
    pub slope: f64,
    pub dropout: f64,
}

impl DiscriminatorConfig {
    pub fn new(row_dim: usize, hidden: Vec<usize>) -> Self {
        DiscriminatorConfig { row_dim, pac: DEFAULT_PAC, hidden, slope: LEAKY_SLOPE, dropout: DEFAULT_DROPOUT }
    }

    pub fn input_dim(&self) -> usize {
        self.pac * self.row_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.row_dim == 0 || self.pac == 0 || self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::InvalidArgument("discriminator dimensions must be nonzero".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

/// `x → [Linear → LeakyReLU → Dropout]* → Linear(1)` over packs of `pac` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    pub hidden: Vec<Linear>,
    pub output: Linear,
}

/// Inverted-dropout multipliers (0 or 1/(1−p)) per hidden layer.
#[derive(Debug, Clone)]
pub struct DropoutMasks(pub Vec<Array2<f64>>);

impl DropoutMasks {
    /// Row-wise concatenation, matching stacked packed inputs.
    pub fn stack(parts: &[&DropoutMasks]) -> Self {
        let layers = parts.first().map_or(0, |p| p.0.len());
        DropoutMasks(
            (0..layers)
                .map(|l| {
                    let views: Vec<_> = parts.iter().map(|p| p.0[l].view()).collect();
                    ndarray::concatenate(Axis(0), &views).expect("equal widths")
                })
                .collect(),
        )
    }

    pub fn sample<R: Rng + ?Sized>(net: &Discriminator, packs: usize, rng: &mut R) -> Self {
        let p = net.config.dropout;
        let keep = 1.0 / (1.0 - p);
        DropoutMasks(
            net.config
                .hidden
                .iter()
                .map(|&h| Array2::from_shape_simple_fn((packs, h), || if rng.random::<f64>() < p { 0.0 } else { keep }))
                .collect(),
        )
    }
}

/// Forward state. `derivs[l]` is the diagonal of the activation-times-dropout
/// Jacobian of hidden layer `l`, which is all the input-gradient chain needs.
#[derive(Debug, Clone)]
pub struct DiscCache {
    input: Array2<f64>,
    acts: Vec<Array2<f64>>,
    derivs: Vec<Array2<f64>>,
    scores: Array1<f64>,
}

impl DiscCache {
    pub fn scores(&self) -> &Array1<f64> {
        &self.scores
    }

    pub fn packs(&self) -> usize {
        self.input.nrows()
    }

    /// The cache restricted to packs `range`.
    pub fn select(&self, range: std::ops::Range<usize>) -> DiscCache {
        let rows = |a: &Array2<f64>| a.slice(ndarray::s![range.clone(), ..]).to_owned();
        DiscCache {
            input: rows(&self.input),
            acts: self.acts.iter().map(rows).collect(),
            derivs: self.derivs.iter().map(rows).collect(),
            scores: self.scores.slice(ndarray::s![range.clone()]).to_owned(),
        }
    }
}

/// Value and parameter gradient of `λ · mean_p (‖∇ₓD(x_p)‖ − 1)²`.
#[derive(Debug, Clone)]
pub struct PenaltyOutput {
    pub value: f64,
    pub grads: Grads,
    pub input_grad: Array2<f64>,
}

/// Stack consecutive groups of `pac` rows side by side.
pub fn pack(rows: ArrayView2<f64>, pac: usize) -> Result<Array2<f64>> {
    let (n, d) = rows.dim();
    if pac == 0 || n % pac != 0 {
        return Err(Error::Shape(format!("{n} rows cannot be packed in groups of {pac}")));
    }
    Ok(rows.as_standard_layout().into_owned().into_shape_with_order((n / pac, pac * d)).expect("sizes agree"))
}

/// Inverse of [`pack`].
pub fn unpack(packed: Array2<f64>, pac: usize) -> Array2<f64> {
    let (np, w) = packed.dim();
    let packed = packed.as_standard_layout().into_owned();
    packed.into_shape_with_order((np * pac, w / pac)).expect("sizes agree")
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(config: DiscriminatorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut width = config.input_dim();
        let mut hidden = Vec::with_capacity(config.hidden.len());
        for &h in &config.hidden {
            hidden.push(Linear::new(width, h, rng));
            width = h;
        }
        let output = Linear::new(width, 1, rng);
        Ok(Discriminator { config, hidden, output })
    }

    /// Scores for packed input. `masks = None` is eval mode (no dropout).
    pub fn forward(&self, packed: ArrayView2<f64>, masks: Option<&DropoutMasks>) -> Result<DiscCache> {
        let np = packed.nrows();
        if packed.ncols() != self.config.input_dim() {
            return Err(Error::Shape(format!(
                "discriminator expects width {}, got {}",
                self.config.input_dim(),
                packed.ncols()
            )));
        }
        if let Some(m) = masks {
            let ok = m.0.len() == self.hidden.len() && m.0.iter().zip(&self.hidden).all(|(a, l)| a.dim() == (np, l.output_dim()));
            if !ok {
                return Err(Error::Shape("dropout masks do not match the packed batch".into()));
            }
        }
        let slope = self.config.slope;
        let input = packed.to_owned();
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(self.hidden.len());
        let mut derivs = Vec::with_capacity(self.hidden.len());
        for (l, linear) in self.hidden.iter().enumerate() {
            let prev = acts.last().unwrap_or(&input);
            let pre = linear.forward(prev.view());
            let mut act = Array2::zeros(pre.raw_dim());
            let mut deriv = Array2::zeros(pre.raw_dim());
            match masks {
                Some(m) => Zip::from(&mut act).and(&mut deriv).and(&pre).and(&m.0[l]).for_each(|a, d, &p, &k| {
                    *a = leaky_relu(p, slope) * k;
                    *d = leaky_relu_grad(p, slope) * k;
                }),
                None => Zip::from(&mut act).and(&mut deriv).and(&pre).for_each(|a, d, &p| {
                    *a = leaky_relu(p, slope);
                    *d = leaky_relu_grad(p, slope);
                }),
            }
            acts.push(act);
            derivs.push(deriv);
        }
        let last = acts.last().unwrap_or(&input);
        let scores = self.output.forward(last.view()).column(0).to_owned();
        Ok(DiscCache { input, acts, derivs, scores })
    }

    fn check_cache(&self, cache: &DiscCache) -> Result<()> {
        if cache.input.ncols() != self.config.input_dim()
            || cache.acts.len() != self.hidden.len()
            || cache.acts.iter().zip(&self.hidden).any(|(a, l)| a.ncols() != l.output_dim())
        {
            return Err(Error::Shape("discriminator cache does not match the network".into()));
        }
        Ok(())
    }

    /// Parameter gradients and packed-input gradient for `Σ_p d_scores[p] · D(x_p)`.
    pub fn backward(&self, cache: &DiscCache, d_scores: ArrayView1<f64>) -> Result<(Grads, Array2<f64>)> {
        let (g, dx) = self.backward_impl(cache, d_scores, true)?;
        Ok((g, dx.expect("requested")))
    }

    /// As [`Discriminator::backward`] without the input gradient.
    pub fn param_gradients(&self, cache: &DiscCache, d_scores: ArrayView1<f64>) -> Result<Grads> {
        Ok(self.backward_impl(cache, d_scores, false)?.0)
    }

    fn backward_impl(
        &self,
        cache: &DiscCache,
        d_scores: ArrayView1<f64>,
        need_input: bool,
    ) -> Result<(Grads, Option<Array2<f64>>)> {
        self.check_cache(cache)?;
        if d_scores.len() != cache.packs() {
            return Err(Error::Shape("upstream gradient length differs from pack count".into()));
        }
        let dy = d_scores.insert_axis(Axis(1));
        let last = cache.acts.last().unwrap_or(&cache.input);
        let (dw, db, dx) = self.output.backward(last.view(), dy, true);
        let mut tail = vec![dw.into_raw_vec_and_offset().0, db.to_vec()];
        let mut upstream = dx;
        let mut layers = Vec::with_capacity(self.hidden.len());
        for (l, linear) in self.hidden.iter().enumerate().rev() {
            let mut d = upstream.take().expect("upstream gradient present");
            d *= &cache.derivs[l];
            let prev = if l == 0 { &cache.input } else { &cache.acts[l - 1] };
            let (dw, db, dx) = linear.backward(prev.view(), d.view(), l > 0 || need_input);
            layers.push([dw.into_raw_vec_and_offset().0, db.to_vec()]);
            upstream = dx;
        }
        let mut flat: Vec<Vec<f64>> = layers.into_iter().rev().flatten().collect();
        flat.append(&mut tail);
        Ok((Grads(flat), upstream))
    }

    /// Chain `s_L = w_out ⊙ D_L`, `t_l = s_l W_l`, `s_{l−1} = t_l ⊙ D_{l−1}`;
    /// returns all `s_l` and the input gradient `t_1`.
    fn input_chain(&self, cache: &DiscCache) -> (Vec<Array2<f64>>, Array2<f64>) {
        let depth = self.hidden.len();
        let w_out = self.output.weight.row(0);
        let mut s = vec![Array2::zeros((0, 0)); depth];
        let mut cur = &cache.derivs[depth - 1] * &w_out;
        for l in (0..depth).rev() {
            let t = cur.dot(&self.hidden[l].weight);
            s[l] = cur;
            if l == 0 {
                return (s, t);
            }
            cur = t * &cache.derivs[l - 1];
        }
        unreachable!("depth is at least one")
    }

    /// `∇ₓ D(x)` for each pack, with masks and activation slopes fixed by the cache.
    pub fn input_gradient(&self, cache: &DiscCache) -> Result<Array2<f64>> {
        self.check_cache(cache)?;
        Ok(self.input_chain(cache).1)
    }

    /// Gradient penalty and its exact parameter gradient. LeakyReLU is
    /// piecewise linear, so only the weight matrices carry a derivative.
    pub fn gradient_penalty(&self, cache: &DiscCache, lambda: f64) -> Result<PenaltyOutput> {
        self.check_cache(cache)?;
        let np = cache.packs();
        let (s, g) = self.input_chain(cache);
        let mut value = 0.0;
        let mut r = Array2::zeros(g.raw_dim());
        for (gp, mut rp) in g.rows().into_iter().zip(r.rows_mut()) {
            let norm = gp.dot(&gp).sqrt();
            value += (norm - 1.0).powi(2);
            if norm > 0.0 {
                rp.assign(&(&gp * (lambda / np as f64 * 2.0 * (norm - 1.0) / norm)));
            }
        }
        value *= lambda / np as f64;

        let depth = self.hidden.len();
        let mut grads = self.zero_grads();
        let mut dt = r;
        for l in 0..depth {
            let dw = s[l].t().dot(&dt);
            grads.0[2 * l].copy_from_slice(dw.as_slice().expect("standard layout"));
            let ds = super::linear::matmul_t(dt.view(), &self.hidden[l].weight);
            if l + 1 < depth {
                dt = ds * &cache.derivs[l];
            } else {
                let dw_out = (ds * &cache.derivs[l]).sum_axis(Axis(0));
                grads.0[2 * depth].copy_from_slice(dw_out.as_slice().unwrap());
                break;
            }
        }
        Ok(PenaltyOutput { value, grads, input_grad: g })
    }
}

impl Params for Discriminator {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.hidden.iter().flat_map(Linear::slices).collect();
        out.extend(self.output.slices());
        out
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.hidden.iter_mut().flat_map(Linear::slices_mut).collect();
        out.extend(self.output.slices_mut());
        out
    }
}
