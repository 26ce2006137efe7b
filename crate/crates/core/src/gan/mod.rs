//! Differentially private conditional GAN training and sampling.

mod persist;
pub mod step;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::conditioning::{
    build_frequency_table, sample_condition_pair, sample_generation_condition, sample_matching_rows, ConditionVector,
    MatchIndex, PairFrequencyTable,
};
use crate::data::DataTable;
use crate::nn::functional::gumbel_matrix;
use crate::nn::generator::{DEFAULT_HIDDEN, DEFAULT_NOISE_DIM};
use crate::nn::{AdamConfig, AdamState, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, Mode};
use crate::privacy::{calibrate_sigma, AccountantState, PrivacySpec, DEFAULT_CLIP, DEFAULT_DELTA};
use crate::transform::vgm::VgmConfig;
use crate::transform::TransformModel;
use crate::{Error, Result};
use step::{
    condition_matrix, critic_loss, generator_loss, privatize, ConditionTargets, CriticLoss, CriticNoise, GeneratorLoss,
    GeneratorNoise,
};

pub use persist::{load_model, save_model};

/// Requested privacy level. The noise multiplier is calibrated from the
/// planned number of critic updates unless given explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyConfig {
    #[serde(with = "crate::serde_f64")]
    pub epsilon: f64,
    pub delta: f64,
    pub clip: f64,
    pub noise_multiplier: Option<f64>,
}

impl Default for PrivacyConfig {
    fn default() -> Self {
        PrivacyConfig { epsilon: f64::INFINITY, delta: DEFAULT_DELTA, clip: DEFAULT_CLIP, noise_multiplier: None }
    }
}

impl PrivacyConfig {
    pub fn with_epsilon(epsilon: f64) -> Self {
        PrivacyConfig { epsilon, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub critic_steps: usize,
    pub pac: usize,
    pub noise_dim: usize,
    pub generator_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub adam: AdamConfig,
    pub conditional_weight: f64,
    pub privacy: PrivacyConfig,
    pub vgm: VgmConfig,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 2000,
            batch_size: 500,
            lambda: 10.0,
            critic_steps: 5,
            pac: 10,
            noise_dim: DEFAULT_NOISE_DIM,
            generator_hidden: vec![DEFAULT_HIDDEN; 2],
            discriminator_hidden: vec![DEFAULT_HIDDEN; 2],
            adam: AdamConfig::default(),
            conditional_weight: 1.0,
            privacy: PrivacyConfig::default(),
            vgm: VgmConfig::default(),
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.pac == 0 || self.batch_size == 0 || self.batch_size % self.pac != 0 {
            return bad(format!("batch size {} must be a positive multiple of pac {}", self.batch_size, self.pac));
        }
        if !(self.lambda >= 0.0) || !(self.conditional_weight >= 0.0) {
            return bad("penalty weights must be non-negative".into());
        }
        if self.critic_steps == 0 {
            return bad("critic steps must be at least 1".into());
        }
        let p = &self.privacy;
        if !(p.epsilon > 0.0) {
            return bad(format!("epsilon must be positive or inf, got {}", p.epsilon));
        }
        if !(p.delta > 0.0 && p.delta < 1.0) || !(p.clip > 0.0) {
            return bad("delta must lie in (0,1) and the clip constant must be positive".into());
        }
        if p.noise_multiplier.is_some_and(|s| !(s >= 0.0) || !s.is_finite()) {
            return bad("noise multiplier must be finite and non-negative".into());
        }
        Ok(())
    }

    /// Largest pac multiple not above the configured batch or `rows`.
    pub fn effective_batch(&self, rows: usize) -> usize {
        self.batch_size.min(rows) / self.pac * self.pac
    }
}

/// Averages over the updates completed in one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub discriminator_loss: f64,
    pub generator_loss: f64,
    pub conditional_penalty: f64,
    #[serde(with = "crate::serde_f64")]
    pub epsilon: f64,
    /// Cumulative critic updates at the end of the epoch.
    pub discriminator_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    pub halted_by_budget: bool,
    pub planned_discriminator_steps: u64,
    pub batch_size: usize,
}

/// Everything needed to sample, evaluate or resume: both networks, the
/// fitted transform, the condition table, the accountant and the history.
#[derive(Debug, Clone, PartialEq)]
pub struct GanModel {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub transform: TransformModel,
    pub conditions: Option<PairFrequencyTable>,
    pub config: TrainingConfig,
    pub privacy: PrivacySpec,
    pub accountant: AccountantState,
    pub history: TrainingHistory,
}

impl GanModel {
    pub fn condition_width(&self) -> usize {
        self.conditions.as_ref().map_or(0, PairFrequencyTable::width)
    }

    pub fn epsilon(&self) -> f64 {
        if self.privacy.noise_multiplier > 0.0 {
            self.accountant.to_eps(self.privacy.delta)
        } else {
            f64::INFINITY
        }
    }

    pub fn validate(&self) -> Result<()> {
        let data_width = self.transform.width();
        let cond_width = self.condition_width();
        let g = &self.generator.config;
        let d = &self.discriminator.config;
        if g.output_dim != data_width || g.cond_dim != cond_width || d.row_dim != data_width + cond_width {
            return Err(Error::ModelFormat(format!(
                "inconsistent widths: data {data_width}, condition {cond_width}, generator {}+{}→{}, discriminator row {}",
                g.noise_dim, g.cond_dim, g.output_dim, d.row_dim
            )));
        }
        Ok(())
    }

    /// Sample `n` synthetic rows: generation-time condition, Gaussian noise,
    /// eval-mode forward, argmax decode, inverse transform.
    pub fn generate(&self, n: usize, seed: u64) -> Result<DataTable> {
        if n == 0 {
            return Err(Error::InvalidArgument("number of rows to generate must be at least 1".into()));
        }
        const CHUNK: usize = 1000;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = &self.generator.config;
        let mut blocks = Vec::new();
        let mut left = n;
        while left > 0 {
            let m = left.min(CHUNK);
            let conds: Vec<ConditionVector> = match &self.conditions {
                Some(t) => (0..m).map(|_| sample_generation_condition(t, &mut rng)).collect(),
                None => Vec::new(),
            };
            let cond = if self.conditions.is_some() { condition_matrix(&conds, cfg.cond_dim) } else { Array2::zeros((m, 0)) };
            let z = Array2::from_shape_simple_fn((m, cfg.noise_dim), || rng.sample(StandardNormal));
            let gumbel = gumbel_matrix(m, cfg.output_dim, &mut rng);
            let out = self.generator.forward(z.view(), cond.view(), gumbel.view(), Mode::Eval)?;
            blocks.push(out.output().clone());
            left -= m;
        }
        let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
        let all = ndarray::concatenate(Axis(0), &views).expect("equal widths");
        self.transform.inverse(all.view())
    }
}

/// Losses of one epoch, accumulated update by update.
#[derive(Default)]
struct EpochTotals {
    critic: f64,
    critic_n: usize,
    generator: f64,
    conditional: f64,
    generator_n: usize,
}

/// Mutable training state: the model under training, optimizer moments, the
/// encoded data and the random stream.
pub struct Trainer {
    model: GanModel,
    encoded: Array2<f64>,
    index: Option<MatchIndex>,
    generator_opt: AdamState,
    critic_opt: AdamState,
    rng: ChaCha8Rng,
    batch: usize,
    steps_per_epoch: usize,
    step_cost: Vec<f64>,
}

impl Trainer {
    pub fn new(data: &DataTable, config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        let n = data.n_rows();
        if n == 0 {
            return Err(Error::Data("training data has no rows".into()));
        }
        let batch = config.effective_batch(n);
        if batch == 0 {
            return Err(Error::Data(format!("{n} rows cannot fill a single pack of {}", config.pac)));
        }
        let steps_per_epoch = (n / batch).max(1);
        let planned = (config.epochs * steps_per_epoch * config.critic_steps) as u64;
        let q = batch as f64 / n as f64;
        let p = config.privacy;
        let sigma = match p.noise_multiplier {
            _ if p.epsilon == f64::INFINITY => 0.0,
            Some(s) => s,
            None => calibrate_sigma(p.epsilon, p.delta, planned, q)?,
        };
        let privacy = PrivacySpec {
            target_epsilon: p.epsilon,
            delta: p.delta,
            noise_multiplier: sigma,
            clip: p.clip,
            sampling_rate: q,
        };
        privacy.validate()?;

        let transform = TransformModel::fit(data, &VgmConfig { seed: config.seed, ..config.vgm })?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let encoded = transform.transform(data, rng.random())?.values;
        let conditions = if data.schema().categorical_indices().len() >= 2 {
            Some(build_frequency_table(data)?)
        } else {
            None
        };
        let index = conditions.as_ref().map(|t| MatchIndex::build(data, t));
        let cond_width = conditions.as_ref().map_or(0, PairFrequencyTable::width);

        let gen_cfg = GeneratorConfig::from_layout(&transform.layout, config.noise_dim, cond_width, config.generator_hidden.clone());
        let generator = Generator::new(gen_cfg, &mut rng)?;
        let disc_cfg = DiscriminatorConfig {
            pac: config.pac,
            ..DiscriminatorConfig::new(transform.width() + cond_width, config.discriminator_hidden.clone())
        };
        let discriminator = Discriminator::new(disc_cfg, &mut rng)?;
        let generator_opt = AdamState::new(config.adam, &generator);
        let critic_opt = AdamState::new(config.adam, &discriminator);
        let accountant = AccountantState::default();
        let step_cost = if sigma > 0.0 { accountant.step_cost(&privacy) } else { Vec::new() };
        let history = TrainingHistory { planned_discriminator_steps: planned, batch_size: batch, ..Default::default() };
        let model = GanModel {
            generator,
            discriminator,
            transform,
            conditions,
            config,
            privacy,
            accountant,
            history,
        };
        Ok(Trainer { model, encoded, index, generator_opt, critic_opt, rng, batch, steps_per_epoch, step_cost })
    }

    pub fn model(&self) -> &GanModel {
        &self.model
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    /// Condition matrix plus the condition vectors for one batch (training
    /// distribution). Unconditional models get a zero-width matrix.
    pub fn sample_conditions(&mut self) -> (Array2<f64>, Vec<ConditionVector>) {
        match &self.model.conditions {
            Some(t) => {
                let conds: Vec<ConditionVector> = (0..self.batch).map(|_| sample_condition_pair(t, &mut self.rng)).collect();
                (condition_matrix(&conds, t.width()), conds)
            }
            None => (Array2::zeros((self.batch, 0)), Vec::new()),
        }
    }

    /// Encoded real rows, row `i` matching condition `i`.
    pub fn sample_real(&mut self, conds: &[ConditionVector]) -> Array2<f64> {
        let rows: Vec<usize> = match (&self.model.conditions, &self.index) {
            (Some(t), Some(idx)) => conds
                .iter()
                .map(|c| sample_matching_rows(idx, t, c, 1, &mut self.rng)[0])
                .collect(),
            _ => (0..self.batch).map(|_| self.rng.random_range(0..self.encoded.nrows())).collect(),
        };
        self.encoded.select(Axis(0), &rows)
    }

    /// True if one more noised critic update would overspend the budget.
    pub fn budget_blocks_next_step(&self) -> bool {
        if self.step_cost.is_empty() {
            return false;
        }
        let spec = &self.model.privacy;
        let mut next = self.model.accountant.clone();
        next.add_cost(&self.step_cost);
        next.to_eps(spec.delta) > spec.target_epsilon
    }

    /// One critic update on `real` rows matching `cond`. Refused when the
    /// budget gate trips.
    pub fn discriminator_step(&mut self, real: &Array2<f64>, cond: &Array2<f64>) -> Result<CriticLoss> {
        if self.budget_blocks_next_step() {
            return Err(Error::Privacy("privacy budget exhausted; critic update refused".into()));
        }
        let m = &self.model;
        let noise = CriticNoise::sample(&m.generator, &m.discriminator, real.nrows(), &mut self.rng);
        let (mut loss, gen_cache) = critic_loss(&m.generator, &m.discriminator, real.view(), cond.view(), &noise, m.config.lambda)?;
        self.model.generator.commit_batch_stats(&gen_cache);
        privatize(&mut loss.grads, &self.model.privacy, &mut self.rng);
        self.critic_opt.step(&mut self.model.discriminator, &loss.grads)?;
        if !self.step_cost.is_empty() {
            self.model.accountant.add_cost(&self.step_cost);
        } else {
            self.model.accountant.steps += 1;
        }
        Ok(loss)
    }

    /// One generator update for the given conditions.
    pub fn generator_step(&mut self, cond: &Array2<f64>, conds: &[ConditionVector]) -> Result<GeneratorLoss> {
        let m = &self.model;
        let targets = if m.conditions.is_some() {
            ConditionTargets::from_conditions(conds, &m.transform.layout)
        } else {
            ConditionTargets::none(cond.nrows(), m.transform.width())
        };
        let noise = GeneratorNoise::sample(&m.generator, &m.discriminator, cond.nrows(), &mut self.rng);
        let (loss, cache) =
            generator_loss(&m.generator, &m.discriminator, cond.view(), &targets, &noise, m.config.conditional_weight)?;
        self.model.generator.commit_batch_stats(&cache);
        self.generator_opt.step(&mut self.model.generator, &loss.grads)?;
        Ok(loss)
    }

    fn flush(&mut self, epoch: usize, totals: &EpochTotals) {
        let avg = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
        let record = EpochRecord {
            epoch,
            discriminator_loss: avg(totals.critic, totals.critic_n),
            generator_loss: avg(totals.generator, totals.generator_n),
            conditional_penalty: avg(totals.conditional, totals.generator_n),
            epsilon: self.model.epsilon(),
            discriminator_steps: self.model.accountant.steps,
        };
        self.model.history.epochs.push(record);
    }

    /// Run all epochs, stopping before the first critic update that would
    /// exceed the privacy budget.
    pub fn run(mut self) -> Result<GanModel> {
        self.run_with(|_| {})?;
        Ok(self.model)
    }

    /// As [`Trainer::run`] but reports every finished epoch record.
    pub fn run_with(&mut self, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<()> {
        let epochs = self.model.config.epochs;
        let critic_steps = self.model.config.critic_steps;
        for epoch in 1..=epochs {
            let mut totals = EpochTotals::default();
            for _ in 0..self.steps_per_epoch {
                for _ in 0..critic_steps {
                    if self.budget_blocks_next_step() {
                        self.model.history.halted_by_budget = true;
                        if totals.critic_n > 0 {
                            self.flush(epoch, &totals);
                            on_epoch(self.model.history.epochs.last().unwrap());
                        }
                        return Ok(());
                    }
                    let (cond, conds) = self.sample_conditions();
                    let real = self.sample_real(&conds);
                    let loss = self.discriminator_step(&real, &cond)?;
                    totals.critic += loss.loss;
                    totals.critic_n += 1;
                }
                let (cond, conds) = self.sample_conditions();
                let loss = self.generator_step(&cond, &conds)?;
                totals.generator += loss.loss;
                totals.conditional += loss.conditional;
                totals.generator_n += 1;
            }
            self.flush(epoch, &totals);
            on_epoch(self.model.history.epochs.last().unwrap());
        }
        Ok(())
    }

    pub fn into_model(self) -> GanModel {
        self.model
    }
}

/// Train a model on `data` (which must follow its own schema).
pub fn fit(data: &DataTable, config: TrainingConfig) -> Result<GanModel> {
    Trainer::new(data, config)?.run()
}
