use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::batchnorm::{BatchNorm, BnCache};
use super::functional::{gumbel_softmax, gumbel_softmax_backward};
use super::{Grads, Linear, Mode, Params};
use crate::transform::{Layout, SegmentKind};
use crate::{Error, Result};

pub const DEFAULT_TAU: f64 = 0.2;
pub const DEFAULT_NOISE_DIM: usize = 128;
pub const DEFAULT_HIDDEN: usize = 256;

/// Output head applied to a slice of the generator's final linear layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "head", rename_all = "lowercase")]
pub enum OutputSpan {
    Tanh { offset: usize },
    Softmax { offset: usize, width: usize },
}

impl OutputSpan {
    pub fn offset(&self) -> usize {
        match *self {
            OutputSpan::Tanh { offset } | OutputSpan::Softmax { offset, .. } => offset,
        }
    }

    pub fn width(&self) -> usize {
        match *self {
            OutputSpan::Tanh { .. } => 1,
            OutputSpan::Softmax { width, .. } => width,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub noise_dim: usize,
    pub cond_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub spans: Vec<OutputSpan>,
    pub tau: f64,
}

impl GeneratorConfig {
    pub fn from_layout(layout: &Layout, noise_dim: usize, cond_dim: usize, hidden: Vec<usize>) -> Self {
        let spans = layout
            .segments
            .iter()
            .map(|seg| match seg.kind {
                SegmentKind::Scalar => OutputSpan::Tanh { offset: seg.offset },
                SegmentKind::Mode | SegmentKind::Category => OutputSpan::Softmax { offset: seg.offset, width: seg.width },
            })
            .collect();
        GeneratorConfig { noise_dim, cond_dim, hidden, output_dim: layout.width, spans, tau: DEFAULT_TAU }
    }

    pub fn input_dim(&self) -> usize {
        self.noise_dim + self.cond_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.noise_dim == 0 || self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::InvalidArgument("generator needs noise and nonzero hidden widths".into()));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("temperature must be positive, got {}", self.tau)));
        }
        let mut next = 0;
        for span in &self.spans {
            if span.offset() != next || span.width() == 0 {
                return Err(Error::InvalidArgument("output spans must tile the output".into()));
            }
            next += span.width();
        }
        if next != self.output_dim {
            return Err(Error::InvalidArgument(format!(
                "output spans cover {next} columns, output width is {}",
                self.output_dim
            )));
        }
        Ok(())
    }
}

/// `(z‖cond) → [Linear → BN → ReLU]* → Linear → tanh / Gumbel-softmax heads`.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub hidden: Vec<(Linear, BatchNorm)>,
    pub output: Linear,
}

#[derive(Debug, Clone)]
struct HiddenCache {
    /// Batch-norm output before the ReLU.
    normed: Array2<f64>,
    bn: Option<BnCache>,
    act: Array2<f64>,
}

/// Activations retained from a forward pass.
#[derive(Debug, Clone)]
pub struct GeneratorCache {
    input: Array2<f64>,
    layers: Vec<HiddenCache>,
    logits: Array2<f64>,
    output: Array2<f64>,
    mode: Mode,
}

impl GeneratorCache {
    /// Soft encoded rows (tanh scalars, relaxed one-hots).
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    /// Pre-activation logits of the final layer.
    pub fn logits(&self) -> &Array2<f64> {
        &self.logits
    }

    pub fn batch(&self) -> usize {
        self.input.nrows()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(config: GeneratorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut width = config.input_dim();
        let mut hidden = Vec::with_capacity(config.hidden.len());
        for &h in &config.hidden {
            hidden.push((Linear::new(width, h, rng), BatchNorm::new(h)));
            width = h;
        }
        let output = Linear::new(width, config.output_dim, rng);
        Ok(Generator { config, hidden, output })
    }

    /// Forward pass. `gumbel` holds one Gumbel(0,1) draw per output column
    /// (entries at tanh heads are ignored).
    pub fn forward(
        &self,
        z: ArrayView2<f64>,
        cond: ArrayView2<f64>,
        gumbel: ArrayView2<f64>,
        mode: Mode,
    ) -> Result<GeneratorCache> {
        let n = z.nrows();
        let cfg = &self.config;
        if z.ncols() != cfg.noise_dim || cond.ncols() != cfg.cond_dim || cond.nrows() != n {
            return Err(Error::Shape(format!(
                "generator expects noise {}x{} and condition {}x{}, got {:?} and {:?}",
                n,
                cfg.noise_dim,
                n,
                cfg.cond_dim,
                z.shape(),
                cond.shape()
            )));
        }
        if gumbel.shape() != [n, cfg.output_dim] {
            return Err(Error::Shape(format!("gumbel noise must be {n}x{}, got {:?}", cfg.output_dim, gumbel.shape())));
        }
        if mode == Mode::Train && n < 2 {
            return Err(Error::InvalidArgument("batch norm needs at least 2 rows in train mode".into()));
        }
        let input = concatenate(Axis(1), &[z, cond]).expect("row counts checked").as_standard_layout().into_owned();
        let mut layers = Vec::with_capacity(self.hidden.len());
        for (linear, bn) in &self.hidden {
            let prev = layers.last().map_or(&input, |c: &HiddenCache| &c.act);
            let pre = linear.forward(prev.view());
            let (normed, cache) = match mode {
                Mode::Train => {
                    let (y, c) = bn.forward_train(pre.view());
                    (y, Some(c))
                }
                Mode::Eval => (bn.forward_eval(pre.view()), None),
            };
            let act = normed.mapv(super::functional::relu);
            layers.push(HiddenCache { normed, bn: cache, act });
        }
        let last = layers.last().map_or(&input, |c| &c.act);
        let logits = self.output.forward(last.view());
        let output = self.apply_heads(&logits, gumbel);
        Ok(GeneratorCache { input, layers, logits, output, mode })
    }

    fn apply_heads(&self, logits: &Array2<f64>, gumbel: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(logits.raw_dim());
        for span in &self.config.spans {
            match *span {
                OutputSpan::Tanh { offset } => {
                    out.column_mut(offset).assign(&logits.column(offset).mapv(f64::tanh));
                }
                OutputSpan::Softmax { offset, width } => {
                    let cols = s![.., offset..offset + width];
                    for ((l, g), o) in logits
                        .slice(cols)
                        .rows()
                        .into_iter()
                        .zip(gumbel.slice(cols).rows())
                        .zip(out.slice_mut(cols).rows_mut())
                    {
                        gumbel_softmax(l, g, self.config.tau, o);
                    }
                }
            }
        }
        out
    }

    /// Fold the batch statistics of a train-mode forward into the running
    /// statistics used in eval mode.
    pub fn commit_batch_stats(&mut self, cache: &GeneratorCache) {
        let n = cache.batch();
        for ((_, bn), layer) in self.hidden.iter_mut().zip(&cache.layers) {
            if let Some(c) = &layer.bn {
                bn.update_running(c, n);
            }
        }
    }

    /// Parameter gradients for upstream `d_output` on the soft outputs plus
    /// an optional direct gradient on the logits.
    pub fn backward(
        &self,
        cache: &GeneratorCache,
        d_output: ArrayView2<f64>,
        d_logits: Option<ArrayView2<f64>>,
    ) -> Result<Grads> {
        if cache.mode != Mode::Train {
            return Err(Error::InvalidArgument("backward needs a train-mode forward".into()));
        }
        if cache.layers.len() != self.hidden.len()
            || cache.input.ncols() != self.config.input_dim()
            || d_output.shape() != cache.output.shape()
            || d_logits.is_some_and(|d| d.shape() != cache.logits.shape())
        {
            return Err(Error::Shape("generator cache or upstream gradient does not match the network".into()));
        }
        let tau = self.config.tau;
        let mut dl = match d_logits {
            Some(d) => d.to_owned(),
            None => Array2::zeros(cache.logits.raw_dim()),
        };
        for span in &self.config.spans {
            match *span {
                OutputSpan::Tanh { offset } => {
                    let y = cache.output.column(offset);
                    let mut col = dl.column_mut(offset);
                    for ((d, &yi), &g) in col.iter_mut().zip(y).zip(d_output.column(offset)) {
                        *d += g * (1.0 - yi * yi);
                    }
                }
                OutputSpan::Softmax { offset, width } => {
                    let cols = s![.., offset..offset + width];
                    let mut buf = ndarray::Array1::zeros(width);
                    for ((y, dy), mut d) in cache
                        .output
                        .slice(cols)
                        .rows()
                        .into_iter()
                        .zip(d_output.slice(cols).rows())
                        .zip(dl.slice_mut(cols).rows_mut())
                    {
                        gumbel_softmax_backward(y, dy, tau, buf.view_mut());
                        d += &buf;
                    }
                }
            }
        }

        let mut grads = Vec::with_capacity(4 * self.hidden.len() + 2);
        let last = cache.layers.last().map_or(&cache.input, |c| &c.act);
        let (dw, db, dx) = self.output.backward(last.view(), dl.view(), !self.hidden.is_empty());
        let mut tail = vec![dw.into_raw_vec_and_offset().0, db.to_vec()];
        let mut upstream = dx;
        for (i, ((linear, bn), layer)) in self.hidden.iter().zip(&cache.layers).enumerate().rev() {
            let mut d = upstream.take().expect("upstream gradient present");
            ndarray::Zip::from(&mut d).and(&layer.normed).for_each(|g, &v| {
                if v <= 0.0 {
                    *g = 0.0;
                }
            });
            let bn_cache = layer.bn.as_ref().expect("train-mode cache");
            let (dpre, dgamma, dbeta) = bn.backward(bn_cache, d.view());
            let prev = if i == 0 { &cache.input } else { &cache.layers[i - 1].act };
            let (dw, db, dx) = linear.backward(prev.view(), dpre.view(), i > 0);
            upstream = dx;
            grads.push(vec![dw.into_raw_vec_and_offset().0, db.to_vec(), dgamma.to_vec(), dbeta.to_vec()]);
        }
        let mut flat: Vec<Vec<f64>> = grads.into_iter().rev().flatten().collect();
        flat.append(&mut tail);
        Ok(Grads(flat))
    }

    /// Running statistics, in hidden-layer order as `(mean, var)`.
    pub fn running_stats(&self) -> Vec<(&[f64], &[f64])> {
        self.hidden
            .iter()
            .map(|(_, bn)| (bn.running_mean.as_slice().unwrap(), bn.running_var.as_slice().unwrap()))
            .collect()
    }
}

impl Params for Generator {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for (linear, bn) in &self.hidden {
            out.extend(linear.slices());
            out.push(bn.gamma.as_slice().unwrap());
            out.push(bn.beta.as_slice().unwrap());
        }
        out.extend(self.output.slices());
        out
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for (linear, bn) in &mut self.hidden {
            out.extend(linear.slices_mut());
            out.push(bn.gamma.as_slice_mut().unwrap());
            out.push(bn.beta.as_slice_mut().unwrap());
        }
        out.extend(self.output.slices_mut());
        out
    }
}
