//! Loss evaluation for one critic or generator update with every random input
//! passed in explicitly, so the exact gradients can be checked numerically.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::conditioning::ConditionVector;
use crate::nn::discriminator::{pack, unpack};
use crate::nn::functional::{gumbel_matrix, masked_bce};
use crate::nn::{Discriminator, DropoutMasks, Generator, GeneratorCache, Grads, Mode};
use crate::privacy::PrivacySpec;
use crate::transform::Layout;
use crate::{Error, Result};

/// Random inputs of one critic update.
#[derive(Debug, Clone)]
pub struct CriticNoise {
    pub z: Array2<f64>,
    pub gumbel: Array2<f64>,
    pub masks_real: DropoutMasks,
    pub masks_fake: DropoutMasks,
    pub masks_mixed: DropoutMasks,
    /// Interpolation weight per pack.
    pub u: Array1<f64>,
}

impl CriticNoise {
    pub fn sample<R: Rng + ?Sized>(generator: &Generator, critic: &Discriminator, batch: usize, rng: &mut R) -> Self {
        let packs = batch / critic.config.pac;
        CriticNoise {
            z: Array2::from_shape_simple_fn((batch, generator.config.noise_dim), || rng.sample(StandardNormal)),
            gumbel: gumbel_matrix(batch, generator.config.output_dim, rng),
            masks_real: DropoutMasks::sample(critic, packs, rng),
            masks_fake: DropoutMasks::sample(critic, packs, rng),
            masks_mixed: DropoutMasks::sample(critic, packs, rng),
            u: Array1::from_shape_simple_fn(packs, || rng.random::<f64>()),
        }
    }
}

/// Random inputs of one generator update.
#[derive(Debug, Clone)]
pub struct GeneratorNoise {
    pub z: Array2<f64>,
    pub gumbel: Array2<f64>,
    pub masks: DropoutMasks,
}

impl GeneratorNoise {
    pub fn sample<R: Rng + ?Sized>(generator: &Generator, critic: &Discriminator, batch: usize, rng: &mut R) -> Self {
        GeneratorNoise {
            z: Array2::from_shape_simple_fn((batch, generator.config.noise_dim), || rng.sample(StandardNormal)),
            gumbel: gumbel_matrix(batch, generator.config.output_dim, rng),
            masks: DropoutMasks::sample(critic, batch / critic.config.pac, rng),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CriticLoss {
    pub loss: f64,
    /// `mean D(fake) − mean D(real)`.
    pub wasserstein: f64,
    pub penalty: f64,
    pub grads: Grads,
}

#[derive(Debug, Clone)]
pub struct GeneratorLoss {
    pub loss: f64,
    pub adversarial: f64,
    pub conditional: f64,
    pub grads: Grads,
}

/// BCE targets for the conditioned categorical segments of each row.
#[derive(Debug, Clone)]
pub struct ConditionTargets {
    pub targets: Array2<f64>,
    pub entries: Vec<(usize, usize)>,
}

impl ConditionTargets {
    pub fn none(rows: usize, width: usize) -> Self {
        ConditionTargets { targets: Array2::zeros((rows, width)), entries: Vec::new() }
    }

    pub fn from_conditions(conds: &[ConditionVector], layout: &Layout) -> Self {
        let mut targets = Array2::zeros((conds.len(), layout.width));
        let mut entries = Vec::new();
        for (r, cond) in conds.iter().enumerate() {
            for (&col, &cat) in cond.active_columns.iter().zip(&cond.active_categories) {
                let seg = layout.category_segment(col).expect("conditioned column is categorical");
                for k in 0..seg.width {
                    entries.push((r, seg.offset + k));
                }
                targets[[r, seg.offset + cat]] = 1.0;
            }
        }
        ConditionTargets { targets, entries }
    }
}

/// Stack condition bits for a list of conditions (zero columns when unconditional).
pub fn condition_matrix(conds: &[ConditionVector], width: usize) -> Array2<f64> {
    let mut m = Array2::zeros((conds.len(), width));
    for (mut row, c) in m.rows_mut().into_iter().zip(conds) {
        c.write_bits(row.as_slice_mut().expect("standard layout"));
    }
    m
}

fn join(data: ArrayView2<f64>, cond: ArrayView2<f64>) -> Array2<f64> {
    concatenate(Axis(1), &[data, cond]).expect("row counts agree").as_standard_layout().into_owned()
}

/// WGAN-GP critic loss and its exact gradient w.r.t. critic parameters.
/// Returns the generator cache so the caller can fold its batch statistics.
pub fn critic_loss(
    generator: &Generator,
    critic: &Discriminator,
    real: ArrayView2<f64>,
    cond: ArrayView2<f64>,
    noise: &CriticNoise,
    lambda: f64,
) -> Result<(CriticLoss, GeneratorCache)> {
    let gen = generator.forward(noise.z.view(), cond, noise.gumbel.view(), Mode::Train)?;
    let masks = [&noise.masks_real, &noise.masks_fake, &noise.masks_mixed];
    let loss = critic_objective(critic, real, gen.output().view(), cond, Some(masks), noise.u.view(), lambda)?;
    Ok((loss, gen))
}

/// `mean D(fake) − mean D(real) + λ·mean_p (‖∇D(x̂_p)‖ − 1)²` on given real and
/// fake rows. `masks` holds the real, fake and interpolated dropout masks;
/// `None` evaluates the critic without dropout.
pub fn critic_objective(
    critic: &Discriminator,
    real: ArrayView2<f64>,
    fake: ArrayView2<f64>,
    cond: ArrayView2<f64>,
    masks: Option<[&DropoutMasks; 3]>,
    u: ArrayView1<f64>,
    lambda: f64,
) -> Result<CriticLoss> {
    let pac = critic.config.pac;
    let real_packed = pack(join(real, cond).view(), pac)?;
    let fake_packed = pack(join(fake, cond).view(), pac)?;
    let np = real_packed.nrows();
    if u.len() != np {
        return Err(Error::Shape(format!("{} interpolation weights for {np} packs", u.len())));
    }

    // one stacked forward over real, fake and interpolated packs
    let with_penalty = lambda > 0.0;
    let mixed = if with_penalty {
        let u = u.insert_axis(Axis(1));
        &real_packed * &u + &fake_packed * &u.mapv(|v| 1.0 - v)
    } else {
        Array2::zeros((0, real_packed.ncols()))
    };
    let stacked = concatenate(Axis(0), &[real_packed.view(), fake_packed.view(), mixed.view()]).expect("equal widths");
    let stacked_masks = masks.map(|m| DropoutMasks::stack(if with_penalty { &m[..] } else { &m[..2] }));
    let cache = critic.forward(stacked.view(), stacked_masks.as_ref())?;
    let scores = cache.scores();
    let real_mean = scores.slice(s![..np]).mean().unwrap_or(0.0);
    let fake_mean = scores.slice(s![np..2 * np]).mean().unwrap_or(0.0);
    let wasserstein = fake_mean - real_mean;

    let scale = 1.0 / np as f64;
    let mut d_scores = Array1::zeros(scores.len());
    d_scores.slice_mut(s![..np]).fill(-scale);
    d_scores.slice_mut(s![np..2 * np]).fill(scale);
    let mut grads = critic.param_gradients(&cache, d_scores.view())?;

    let mut penalty = 0.0;
    if with_penalty {
        let gp = critic.gradient_penalty(&cache.select(2 * np..3 * np), lambda)?;
        penalty = gp.value;
        grads.add_assign(&gp.grads);
    }
    Ok(CriticLoss { loss: wasserstein + penalty, wasserstein, penalty, grads })
}

/// Generator loss `−mean D(fake) + w · BCE(conditioned logits, C)` and its
/// exact gradient w.r.t. generator parameters.
pub fn generator_loss(
    generator: &Generator,
    critic: &Discriminator,
    cond: ArrayView2<f64>,
    targets: &ConditionTargets,
    noise: &GeneratorNoise,
    cond_weight: f64,
) -> Result<(GeneratorLoss, GeneratorCache)> {
    let pac = critic.config.pac;
    let data_width = generator.config.output_dim;
    let gen = generator.forward(noise.z.view(), cond, noise.gumbel.view(), Mode::Train)?;
    let fake_packed = pack(join(gen.output().view(), cond).view(), pac)?;
    let np = fake_packed.nrows();
    let cache = critic.forward(fake_packed.view(), Some(&noise.masks))?;
    let adversarial = -cache.scores().mean().unwrap_or(0.0);
    let (_, d_packed) = critic.backward(&cache, Array1::from_elem(np, -1.0 / np as f64).view())?;
    let d_rows = unpack(d_packed, pac);
    let d_output = d_rows.slice(s![.., ..data_width]);

    let (bce, mut d_logits) = masked_bce(gen.logits().view(), targets.targets.view(), &targets.entries);
    d_logits *= cond_weight;
    let grads = generator.backward(&gen, d_output, Some(d_logits.view()))?;
    let conditional = bce;
    Ok((
        GeneratorLoss { loss: adversarial + cond_weight * conditional, adversarial, conditional, grads },
        gen,
    ))
}

/// Value-clip every coordinate to `[−C_p, C_p]` and add `N(0, σ²C_g²)` noise.
/// A zero noise multiplier leaves the gradient untouched.
pub fn privatize<R: Rng + ?Sized>(grads: &mut Grads, spec: &PrivacySpec, rng: &mut R) {
    if spec.noise_multiplier <= 0.0 {
        return;
    }
    clip_gradients(grads, spec.clip);
    let normal = Normal::new(0.0, spec.noise_multiplier * spec.gradient_bound()).expect("finite scale");
    for g in grads.iter_mut() {
        *g += normal.sample(rng);
    }
}

/// Clip only; exposed so the pre-noise bound can be checked deterministically.
pub fn clip_gradients(grads: &mut Grads, clip: f64) {
    for g in grads.iter_mut() {
        *g = g.clamp(-clip, clip);
    }
}
