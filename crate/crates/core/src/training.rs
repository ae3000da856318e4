//! The adversarial training loop: alternating discriminator and generator
//! updates over sliding condition windows, plus a self-contained toy task
//! (matching a 1-D Gaussian) used to sanity-check the whole optimisation
//! stack at small scale.
//!
//! # Determinism
//!
//! A training run is a pure function of (model parameters, training set,
//! config). Three independent ChaCha8 streams are derived from the config
//! seed by tag — `shuffle`, `noise`, and `dropout` — and consumed in a
//! fixed order:
//!
//! * `shuffle`: one permutation of the pair indices per epoch;
//! * `noise`: per batch, first the discriminator step's fake-candidate
//!   noise (`d_steps × batch × noise_dim` standard-normal draws), then the
//!   generator step's noise (`batch × noise_dim`), row by row;
//! * `dropout`: the discriminator's dropout masks, one forward pass at a
//!   time, in update order (discriminator steps, then the generator step).
//!
//! Changing any draw order is a breaking change to reproducibility.

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{AdamConfig, AdamState, Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::gan::{
    bind_discriminator, bind_generator, build_condition_channels, build_condition_steps,
    discriminator_forward, generator_forward, uniform_tensor, DiscriminatorConfig, GanModel,
    GeneratorConfig, FEATURES, PRICE_FIELDS,
};
use crate::market_data::{Column, OhlcvSeries, RawFrame};
use crate::numeric::{mean, population_std, subseed};
use crate::preprocess::{fit_transform, FittedPipeline, Frame, Recipe};

/// How the learning dynamics are damped over training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttenuationMode {
    /// The attenuation factor becomes Adam's first-moment decay β₁ and the
    /// learning rate stays constant. This is the default reading of a
    /// single "attenuation rate" hyperparameter.
    AdamBeta1,
    /// Conventional β₁ = 0.9; the learning rate is instead multiplied by
    /// the attenuation factor after every epoch.
    LrDecay,
}

/// Which objective the generator minimises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorLossMode {
    /// `mean(log(1 - D(G(z))))` — descending the two-player value directly.
    Saturating,
    /// `-mean(log D(G(z)))` — same fixed points, stronger gradient when the
    /// discriminator wins early.
    NonSaturating,
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Meaning depends on `attenuation_mode`; see [`AttenuationMode`].
    pub attenuation: f64,
    pub attenuation_mode: AttenuationMode,
    pub beta2: f64,
    pub epsilon: f64,
    /// Discriminator updates per generator update.
    pub d_steps: usize,
    pub gen_loss: GeneratorLossMode,
    /// Seeds the shuffle/noise/dropout streams.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 64,
            lr: 0.0002,
            attenuation: 0.5,
            attenuation_mode: AttenuationMode::AdamBeta1,
            beta2: 0.999,
            epsilon: 1e-8,
            // The discriminator needs a head start at this learning rate:
            // with 1:1 updates its scores stay near 0.5 and the generator
            // chases leftover initialisation noise instead of the data.
            d_steps: 5,
            gen_loss: GeneratorLossMode::NonSaturating,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.d_steps == 0 {
            return Err(Error::config(
                "epochs, batch_size, and d_steps must all be at least 1",
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr {} must be positive", self.lr)));
        }
        match self.attenuation_mode {
            AttenuationMode::AdamBeta1 => {
                if !(0.0..1.0).contains(&self.attenuation) {
                    return Err(Error::config(format!(
                        "attenuation {} must be in [0, 1) when used as adam beta1",
                        self.attenuation
                    )));
                }
            }
            AttenuationMode::LrDecay => {
                if !(self.attenuation > 0.0 && self.attenuation <= 1.0) {
                    return Err(Error::config(format!(
                        "attenuation {} must be in (0, 1] when used as an lr decay factor",
                        self.attenuation
                    )));
                }
            }
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config(format!(
                "beta2 {} must be in [0, 1)",
                self.beta2
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config(format!(
                "epsilon {} must be positive",
                self.epsilon
            )));
        }
        Ok(())
    }

    fn adam_config(&self) -> AdamConfig {
        let beta1 = match self.attenuation_mode {
            AttenuationMode::AdamBeta1 => self.attenuation,
            AttenuationMode::LrDecay => 0.9,
        };
        AdamConfig {
            lr: self.lr,
            beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// One supervised example: a window of transformed rows and the
/// transformed OHLC of the day that followed it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainPair {
    /// `window` consecutive transformed rows, `[volume, o, h, l, c]` each.
    pub condition: Vec<[f64; FEATURES]>,
    /// Transformed `[open, high, low, close]` of the next day.
    pub target: [f64; PRICE_FIELDS],
    /// Transformed volume of the window's last day (the discriminator
    /// reuses it as the candidate row's volume slot).
    pub last_volume: f64,
    /// Calendar date of the target row.
    pub target_date: NaiveDate,
    /// Index of the target row in the *raw* frame; rows before it form the
    /// context for mapping predictions back to price space.
    pub target_raw_index: usize,
}

/// Everything the trainer needs: the raw data, its fitted preprocessing,
/// the transformed frame, and the sliding-window pairs cut from it.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub raw: RawFrame,
    pub pipeline: FittedPipeline,
    pub transformed: Frame,
    pub pairs: Vec<TrainPair>,
    pub window: usize,
    /// Price-space closes aligned with the *raw* rows (the pipeline's own
    /// inversion, which restores differenced-away rows from its seeds;
    /// interpolated cells stay interpolated).
    pub price_close: Vec<f64>,
}

/// Fits `recipe` on the series, transforms it, and cuts every sliding
/// (window → next day) pair.
pub fn make_training_set(
    series: &OhlcvSeries,
    recipe: &Recipe,
    window: usize,
) -> Result<TrainingSet> {
    if window == 0 {
        return Err(Error::config("condition window must be at least 1"));
    }
    let raw = series.to_frame();
    let (pipeline, transformed) = fit_transform(recipe, &raw)?;
    let shrinkage = pipeline.row_shrinkage();
    if transformed.len() <= window {
        return Err(Error::insufficient(format!(
            "{} transformed rows cannot fill a {window}-day window plus a target; \
             the series needs at least {} rows",
            transformed.len(),
            window + 1 + shrinkage
        )));
    }
    let price = pipeline.invert(&transformed)?;
    let mut pairs = Vec::with_capacity(transformed.len() - window);
    for t in 0..transformed.len() - window {
        let condition: Vec<[f64; FEATURES]> = (t..t + window).map(|i| transformed.row(i)).collect();
        let target_row = transformed.row(t + window);
        pairs.push(TrainPair {
            last_volume: condition[window - 1][0],
            condition,
            target: [target_row[1], target_row[2], target_row[3], target_row[4]],
            target_date: transformed.dates[t + window],
            target_raw_index: t + window + shrinkage,
        });
    }
    Ok(TrainingSet {
        raw,
        pipeline,
        transformed,
        pairs,
        window,
        price_close: price.columns[Column::Close.index()].clone(),
    })
}

fn head_frame(raw: &RawFrame, n: usize) -> RawFrame {
    RawFrame {
        dates: raw.dates[..n].to_vec(),
        columns: std::array::from_fn(|i| raw.columns[i][..n].to_vec()),
    }
}

/// Mean squared error, in price space, of the generator's zero-noise close
/// predictions over every pair in the set. Each transformed prediction is
/// inverted against the raw rows preceding its target day, exactly as the
/// forecaster does, so this metric tracks usable accuracy rather than
/// transformed-space fit.
pub fn price_space_close_mse(model: &GanModel, data: &TrainingSet) -> Result<f64> {
    if data.pairs.is_empty() {
        return Err(Error::insufficient("training set has no pairs"));
    }
    let conditions: Vec<Vec<[f64; FEATURES]>> =
        data.pairs.iter().map(|p| p.condition.clone()).collect();
    let zeros = vec![vec![0.0; model.gen_cfg.noise_dim]; conditions.len()];
    let preds = model.generate_batch(&conditions, &zeros)?;
    let mut acc = 0.0;
    for (pair, pred) in data.pairs.iter().zip(&preds) {
        let context = head_frame(&data.raw, pair.target_raw_index);
        let price = data.pipeline.invert_next_row(
            &context,
            pair.target_date,
            &[Column::Close],
            &[pred[3]],
        )?[0];
        let actual = data.price_close[pair.target_raw_index];
        acc += (price - actual) * (price - actual);
    }
    Ok(acc / preds.len() as f64)
}

/// Per-epoch training diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// Cumulative epoch count on the model (continues across resumed runs).
    pub epoch: u32,
    /// Mean discriminator loss (binary cross-entropy over real+fake).
    pub d_loss: f64,
    /// Mean generator loss under the configured mode.
    pub g_loss: f64,
    /// Mean two-player value `E[log D(real)] + E[log(1-D(fake))]`.
    pub value: f64,
    /// Zero-noise close MSE in price space after this epoch's updates.
    pub price_mse: f64,
    /// Learning rate in force during the epoch.
    pub lr: f64,
}

/// Renders epoch records as CSV. Floats use the shortest representation
/// that round-trips, so identical runs serialize identically.
pub fn records_to_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,d_loss,g_loss,value,price_mse,lr\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch, r.d_loss, r.g_loss, r.value, r.price_mse, r.lr
        ));
    }
    out
}

fn sample_noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Converts numerical blowups (which surface as domain errors inside the
/// graph) into a divergence report with the epoch/batch position.
fn guard<T>(r: Result<T>, epoch: u32, batch: usize) -> Result<T> {
    match r {
        Err(Error::Domain { message }) => Err(Error::TrainingDiverged {
            epoch: epoch as usize,
            batch,
            message,
        }),
        other => other,
    }
}

fn diverged(epoch: u32, batch: usize, message: impl Into<String>) -> Error {
    Error::TrainingDiverged {
        epoch: epoch as usize,
        batch,
        message: message.into(),
    }
}

/// One discriminator update on a batch: fakes come from the current
/// generator (detached), real rows from the pairs, and both halves share
/// one forward pass. Returns the batch loss.
fn discriminator_update(
    model: &mut GanModel,
    dis_cfg: &DiscriminatorConfig,
    batch: &[TrainPair],
    noise_rng: &mut ChaCha8Rng,
    dropout_rng: &mut ChaCha8Rng,
    adam: &mut AdamState,
) -> Result<f64> {
    let b = batch.len();
    let noise_dim = model.gen_cfg.noise_dim;
    let conditions: Vec<Vec<[f64; FEATURES]>> =
        batch.iter().map(|p| p.condition.clone()).collect();
    let noises: Vec<Vec<f64>> = (0..b).map(|_| sample_noise(noise_rng, noise_dim)).collect();
    let fakes = model.generate_batch(&conditions, &noises)?;

    let mut g = Graph::new();
    let binding = bind_discriminator(&mut g, model, true)?;
    // Real rows occupy the first half of the batch, fakes the second.
    let mut windows = Vec::with_capacity(2 * b);
    windows.extend(conditions.iter().cloned());
    windows.extend(conditions);
    let cond = build_condition_channels(&mut g, &windows)?;
    let mut cand = Vec::with_capacity(2 * b * PRICE_FIELDS);
    for p in batch {
        cand.extend_from_slice(&p.target);
    }
    for f in &fakes {
        cand.extend_from_slice(f);
    }
    let cand = g.constant(vec![2 * b, PRICE_FIELDS], cand)?;
    let mut volumes: Vec<f64> = batch.iter().map(|p| p.last_volume).collect();
    volumes.extend(batch.iter().map(|p| p.last_volume));
    let volumes = g.constant(vec![2 * b, 1], volumes)?;
    let scores = discriminator_forward(
        &mut g, dis_cfg, &binding, cond, cand, volumes, true, dropout_rng,
    )?;
    let mut targets = vec![1.0; b];
    targets.extend(vec![0.0; b]);
    let targets = g.constant(vec![2 * b, 1], targets)?;
    let loss = g.bce(scores, targets)?;
    let loss_value = g.value(loss)[0];
    g.backward(loss)?;
    let ids = binding.ids();
    let mut pairs: Vec<(NodeId, &mut Tensor)> = ids
        .into_iter()
        .zip(model.discriminator_tensors_mut())
        .collect();
    g.write_grads(&mut pairs)?;
    drop(pairs);
    adam.step(&mut model.discriminator_tensors_mut())?;
    Ok(loss_value)
}

/// One generator update on a batch: fresh noise through the trainable
/// generator, scored by the frozen discriminator. Returns the batch loss.
#[allow(clippy::too_many_arguments)]
fn generator_update(
    model: &mut GanModel,
    gen_cfg: &GeneratorConfig,
    dis_cfg: &DiscriminatorConfig,
    mode: GeneratorLossMode,
    batch: &[TrainPair],
    noise_rng: &mut ChaCha8Rng,
    dropout_rng: &mut ChaCha8Rng,
    adam: &mut AdamState,
) -> Result<f64> {
    let b = batch.len();
    let mut g = Graph::new();
    let gen_binding = bind_generator(&mut g, model, true)?;
    let dis_binding = bind_discriminator(&mut g, model, false)?;
    let windows: Vec<Vec<[f64; FEATURES]>> = batch.iter().map(|p| p.condition.clone()).collect();
    let steps = build_condition_steps(&mut g, &windows)?;
    let mut noise = Vec::with_capacity(b * gen_cfg.noise_dim);
    for _ in 0..b {
        noise.extend(sample_noise(noise_rng, gen_cfg.noise_dim));
    }
    let z = g.constant(vec![b, gen_cfg.noise_dim], noise)?;
    let fake = generator_forward(&mut g, gen_cfg, &gen_binding, &steps, z)?;
    let cond = build_condition_channels(&mut g, &windows)?;
    let volumes: Vec<f64> = batch.iter().map(|p| p.last_volume).collect();
    let volumes = g.constant(vec![b, 1], volumes)?;
    let scores = discriminator_forward(
        &mut g,
        dis_cfg,
        &dis_binding,
        cond,
        fake,
        volumes,
        true,
        dropout_rng,
    )?;
    let loss = match mode {
        GeneratorLossMode::Saturating => {
            let zeros = g.constant(vec![b, 1], vec![0.0; b])?;
            let flipped = g.bce(scores, zeros)?;
            g.neg(flipped)?
        }
        GeneratorLossMode::NonSaturating => {
            let ones = g.constant(vec![b, 1], vec![1.0; b])?;
            g.bce(scores, ones)?
        }
    };
    let loss_value = g.value(loss)[0];
    g.backward(loss)?;
    let ids = gen_binding.ids();
    let mut pairs: Vec<(NodeId, &mut Tensor)> = ids
        .into_iter()
        .zip(model.generator_tensors_mut())
        .collect();
    g.write_grads(&mut pairs)?;
    drop(pairs);
    adam.step(&mut model.generator_tensors_mut())?;
    Ok(loss_value)
}

/// Trains the model in place, alternating `d_steps` discriminator updates
/// with one generator update per batch. Returns one record per epoch.
///
/// Numerical blowups (saturated probabilities, non-finite losses or
/// metrics) abort with [`Error::TrainingDiverged`] rather than silently
/// producing NaN parameters.
pub fn train(
    model: &mut GanModel,
    data: &TrainingSet,
    cfg: &TrainConfig,
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if data.pairs.is_empty() {
        return Err(Error::insufficient("training set has no pairs"));
    }
    if data.window != model.gen_cfg.condition_window {
        return Err(Error::config(format!(
            "training set windows span {} days, the generator conditions on {}",
            data.window, model.gen_cfg.condition_window
        )));
    }
    let gen_cfg = model.gen_cfg;
    let dis_cfg = model.dis_cfg.clone();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(subseed(cfg.seed, "shuffle"));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(subseed(cfg.seed, "noise"));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(subseed(cfg.seed, "dropout"));
    let adam_cfg = cfg.adam_config();
    let mut gen_adam = AdamState::new(adam_cfg, &model.generator_param_sizes())?;
    let mut dis_adam = AdamState::new(adam_cfg, &model.discriminator_param_sizes())?;

    let mut records = Vec::with_capacity(cfg.epochs);
    let mut indices: Vec<usize> = (0..data.pairs.len()).collect();
    for epoch_offset in 0..cfg.epochs {
        let epoch = model.trained_epochs + 1;
        let lr = match cfg.attenuation_mode {
            AttenuationMode::AdamBeta1 => cfg.lr,
            AttenuationMode::LrDecay => cfg.lr * cfg.attenuation.powi(epoch_offset as i32),
        };
        if matches!(cfg.attenuation_mode, AttenuationMode::LrDecay) {
            gen_adam.set_lr(lr)?;
            dis_adam.set_lr(lr)?;
        }
        indices.shuffle(&mut shuffle_rng);

        let mut d_losses = Vec::new();
        let mut g_losses = Vec::new();
        for (batch_idx, chunk) in indices.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<TrainPair> = chunk.iter().map(|&i| data.pairs[i].clone()).collect();
            for _ in 0..cfg.d_steps {
                let d_loss = guard(
                    discriminator_update(
                        model,
                        &dis_cfg,
                        &batch,
                        &mut noise_rng,
                        &mut dropout_rng,
                        &mut dis_adam,
                    ),
                    epoch,
                    batch_idx,
                )?;
                if !d_loss.is_finite() {
                    return Err(diverged(
                        epoch,
                        batch_idx,
                        format!("discriminator loss is {d_loss}"),
                    ));
                }
                d_losses.push(d_loss);
            }
            let g_loss = guard(
                generator_update(
                    model,
                    &gen_cfg,
                    &dis_cfg,
                    cfg.gen_loss,
                    &batch,
                    &mut noise_rng,
                    &mut dropout_rng,
                    &mut gen_adam,
                ),
                epoch,
                batch_idx,
            )?;
            if !g_loss.is_finite() {
                return Err(diverged(
                    epoch,
                    batch_idx,
                    format!("generator loss is {g_loss}"),
                ));
            }
            g_losses.push(g_loss);
        }

        let batches = g_losses.len();
        let price_mse = guard(price_space_close_mse(model, data), epoch, batches)?;
        if !price_mse.is_finite() {
            return Err(diverged(
                epoch,
                batches,
                format!("post-epoch price-space mse is {price_mse}"),
            ));
        }
        model.trained_epochs = epoch;
        let d_loss = mean(&d_losses);
        records.push(EpochRecord {
            epoch,
            d_loss,
            g_loss: mean(&g_losses),
            // One discriminator pass covers B real + B fake rows, so its
            // cross-entropy is exactly -value/2.
            value: -2.0 * d_loss,
            price_mse,
            lr,
        });
    }
    Ok(records)
}

/// Configuration of the toy task: make a two-layer generator turn standard
/// normal noise into samples from `N(target_mean, target_std²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyGanConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub hidden: usize,
    pub noise_dim: usize,
    pub target_mean: f64,
    pub target_std: f64,
    /// Sample count for the post-training estimates.
    pub eval_samples: usize,
    pub seed: u64,
}

impl Default for ToyGanConfig {
    fn default() -> Self {
        ToyGanConfig {
            steps: 2000,
            batch: 64,
            lr: 1e-3,
            beta1: 0.5,
            hidden: 16,
            noise_dim: 4,
            target_mean: 1.5,
            target_std: 1.0,
            eval_samples: 4096,
            seed: 0,
        }
    }
}

/// Post-training estimates from the toy task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyGanOutcome {
    /// Sample mean of fresh generator outputs.
    pub gen_mean: f64,
    /// Population standard deviation of fresh generator outputs.
    pub gen_std: f64,
    /// Mean discriminator score on fresh real samples. Near 0.5 when the
    /// generator has genuinely confused it.
    pub d_real_mean: f64,
}

fn toy_generator(g: &mut Graph, ids: &[NodeId; 4], z: NodeId) -> Result<NodeId> {
    let h = g.matmul(z, ids[0])?;
    let h = g.add(h, ids[1])?;
    let h = g.tanh(h)?;
    let out = g.matmul(h, ids[2])?;
    g.add(out, ids[3])
}

fn toy_discriminator(g: &mut Graph, ids: &[NodeId; 4], x: NodeId) -> Result<NodeId> {
    let h = g.matmul(x, ids[0])?;
    let h = g.add(h, ids[1])?;
    let h = g.tanh(h)?;
    let out = g.matmul(h, ids[2])?;
    let out = g.add(out, ids[3])?;
    g.sigmoid(out)
}

/// Runs the toy adversarial task end to end and reports how closely the
/// generated distribution matches the target Gaussian.
///
/// The generator uses the non-saturating loss (the saturating form stalls
/// at this scale when the discriminator wins early). RNG streams `toy-init`,
/// `toy-data`, and `toy-noise` are derived from the seed; real draws come
/// from the data stream and noise from the noise stream, batch by batch,
/// with the evaluation draws after all training draws.
pub fn train_toy_gaussian(cfg: &ToyGanConfig) -> Result<ToyGanOutcome> {
    if cfg.steps == 0 || cfg.batch == 0 || cfg.hidden == 0 || cfg.noise_dim == 0 {
        return Err(Error::config(
            "steps, batch, hidden, and noise_dim must all be at least 1",
        ));
    }
    if !(cfg.target_std > 0.0) {
        return Err(Error::config(format!(
            "target_std {} must be positive",
            cfg.target_std
        )));
    }
    if cfg.eval_samples < 2 {
        return Err(Error::config("eval_samples must be at least 2"));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(subseed(cfg.seed, "toy-init"));
    let mut gen_params = [
        uniform_tensor(&mut init_rng, vec![cfg.noise_dim, cfg.hidden], cfg.noise_dim),
        uniform_tensor(&mut init_rng, vec![cfg.hidden], cfg.noise_dim),
        uniform_tensor(&mut init_rng, vec![cfg.hidden, 1], cfg.hidden),
        uniform_tensor(&mut init_rng, vec![1], cfg.hidden),
    ];
    let mut dis_params = [
        uniform_tensor(&mut init_rng, vec![1, cfg.hidden], 1),
        uniform_tensor(&mut init_rng, vec![cfg.hidden], 1),
        uniform_tensor(&mut init_rng, vec![cfg.hidden, 1], cfg.hidden),
        uniform_tensor(&mut init_rng, vec![1], cfg.hidden),
    ];
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        beta1: cfg.beta1,
        ..AdamConfig::default()
    };
    let sizes =
        |ps: &[Tensor; 4]| -> Vec<usize> { ps.iter().map(|t| t.numel()).collect() };
    let mut gen_adam = AdamState::new(adam_cfg, &sizes(&gen_params))?;
    let mut dis_adam = AdamState::new(adam_cfg, &sizes(&dis_params))?;
    let mut data_rng = ChaCha8Rng::seed_from_u64(subseed(cfg.seed, "toy-data"));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(subseed(cfg.seed, "toy-noise"));

    let sample_real = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
        (0..n)
            .map(|_| cfg.target_mean + cfg.target_std * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };
    let bind4 = |g: &mut Graph, ps: &[Tensor; 4], trainable: bool| -> Result<[NodeId; 4]> {
        let mut ids = Vec::with_capacity(4);
        for t in ps {
            ids.push(if trainable { g.param(t)? } else { g.freeze(t)? });
        }
        Ok([ids[0], ids[1], ids[2], ids[3]])
    };

    for step in 0..cfg.steps {
        let real = sample_real(&mut data_rng, cfg.batch);
        let fake_noise = sample_noise(&mut noise_rng, cfg.batch * cfg.noise_dim);

        // Discriminator update: detached fakes, combined real/fake batch.
        let run = (|| -> Result<()> {
            let mut g = Graph::new();
            let frozen_gen = bind4(&mut g, &gen_params, false)?;
            let z = g.constant(vec![cfg.batch, cfg.noise_dim], fake_noise.clone())?;
            let fake = toy_generator(&mut g, &frozen_gen, z)?;
            let fake_values = g.value(fake).to_vec();

            let mut g = Graph::new();
            let dis = bind4(&mut g, &dis_params, true)?;
            let mut x = real.clone();
            x.extend(fake_values);
            let x = g.constant(vec![2 * cfg.batch, 1], x)?;
            let scores = toy_discriminator(&mut g, &dis, x)?;
            let mut targets = vec![1.0; cfg.batch];
            targets.extend(vec![0.0; cfg.batch]);
            let targets = g.constant(vec![2 * cfg.batch, 1], targets)?;
            let loss = g.bce(scores, targets)?;
            g.backward(loss)?;
            let mut pairs: Vec<(NodeId, &mut Tensor)> =
                dis.into_iter().zip(dis_params.iter_mut()).collect();
            g.write_grads(&mut pairs)?;
            drop(pairs);
            let mut refs: Vec<&mut Tensor> = dis_params.iter_mut().collect();
            dis_adam.step(&mut refs)?;

            // Generator update with fresh noise through the frozen critic.
            let gen_noise = sample_noise(&mut noise_rng, cfg.batch * cfg.noise_dim);
            let mut g = Graph::new();
            let gen = bind4(&mut g, &gen_params, true)?;
            let dis = bind4(&mut g, &dis_params, false)?;
            let z = g.constant(vec![cfg.batch, cfg.noise_dim], gen_noise)?;
            let fake = toy_generator(&mut g, &gen, z)?;
            let scores = toy_discriminator(&mut g, &dis, fake)?;
            let ones = g.constant(vec![cfg.batch, 1], vec![1.0; cfg.batch])?;
            let loss = g.bce(scores, ones)?;
            g.backward(loss)?;
            let mut pairs: Vec<(NodeId, &mut Tensor)> =
                gen.into_iter().zip(gen_params.iter_mut()).collect();
            g.write_grads(&mut pairs)?;
            drop(pairs);
            let mut refs: Vec<&mut Tensor> = gen_params.iter_mut().collect();
            gen_adam.step(&mut refs)?;
            Ok(())
        })();
        guard(run, 1, step)?;
    }

    // Post-training estimates on fresh draws.
    let eval_noise = sample_noise(&mut noise_rng, cfg.eval_samples * cfg.noise_dim);
    let mut g = Graph::new();
    let gen = bind4(&mut g, &gen_params, false)?;
    let z = g.constant(vec![cfg.eval_samples, cfg.noise_dim], eval_noise)?;
    let fake = toy_generator(&mut g, &gen, z)?;
    let samples = g.value(fake).to_vec();

    let real = sample_real(&mut data_rng, cfg.eval_samples);
    let mut g = Graph::new();
    let dis = bind4(&mut g, &dis_params, false)?;
    let x = g.constant(vec![cfg.eval_samples, 1], real)?;
    let scores = toy_discriminator(&mut g, &dis, x)?;
    let d_real_mean = mean(g.value(scores));

    Ok(ToyGanOutcome {
        gen_mean: mean(&samples),
        gen_std: population_std(&samples),
        d_real_mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gan::ConvSpec;
    use crate::market_data::{generate_synthetic, SyntheticConfig};

    fn tiny_synthetic(days: usize) -> OhlcvSeries {
        generate_synthetic(&SyntheticConfig {
            days,
            missing_volume_rate: 0.05,
            seed: 7,
            ..SyntheticConfig::default()
        })
        .unwrap()
    }

    fn tiny_model(seed: u64) -> GanModel {
        GanModel::init(
            GeneratorConfig {
                condition_window: 3,
                hidden: 6,
                noise_dim: 2,
            },
            DiscriminatorConfig {
                conv_layers: vec![ConvSpec {
                    out_channels: 4,
                    kernel: 2,
                    stride: 1,
                }],
                dropout: 0.2,
            },
            seed,
        )
        .unwrap()
    }

    fn tiny_train_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 8,
            lr: 1e-3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_set_cuts_consistent_pairs() {
        let series = tiny_synthetic(40);
        let set = make_training_set(&series, &Recipe::default_daily(), 5).unwrap();
        // One first difference removes one row; every remaining row past
        // the window yields a pair. The inverted closes cover all raw rows.
        assert_eq!(set.transformed.len(), 39);
        assert_eq!(set.pairs.len(), 34);
        assert_eq!(set.price_close.len(), 40);
        for (t, pair) in set.pairs.iter().enumerate() {
            assert_eq!(pair.condition.len(), 5);
            for (i, row) in pair.condition.iter().enumerate() {
                assert_eq!(*row, set.transformed.row(t + i));
            }
            let target_row = set.transformed.row(t + 5);
            assert_eq!(pair.target, target_row[1..5]);
            assert_eq!(pair.last_volume, pair.condition[4][0]);
            assert_eq!(pair.target_date, set.transformed.dates[t + 5]);
            assert_eq!(pair.target_raw_index, t + 6);
            assert_eq!(set.raw.dates[pair.target_raw_index], pair.target_date);
        }
    }

    #[test]
    fn training_set_needs_enough_rows() {
        // 6 rows -> 5 transformed rows -> no room for a 5-window target.
        let series = tiny_synthetic(6);
        let err = make_training_set(&series, &Recipe::default_daily(), 5).unwrap_err();
        assert!(matches!(err, Error::InsufficientData { .. }), "{err}");
    }

    #[test]
    fn price_mse_agrees_with_the_unbatched_path() {
        let series = tiny_synthetic(20);
        let set = make_training_set(&series, &Recipe::default_daily(), 3).unwrap();
        let model = tiny_model(1);
        let batched = price_space_close_mse(&model, &set).unwrap();
        let mut acc = 0.0;
        for pair in &set.pairs {
            let z = vec![0.0; model.gen_cfg.noise_dim];
            let pred = model.generate(&pair.condition, &z).unwrap();
            let context = head_frame(&set.raw, pair.target_raw_index);
            let price = set
                .pipeline
                .invert_next_row(&context, pair.target_date, &[Column::Close], &[pred[3]])
                .unwrap()[0];
            let actual = set.price_close[pair.target_raw_index];
            acc += (price - actual) * (price - actual);
        }
        let manual = acc / set.pairs.len() as f64;
        assert!((batched - manual).abs() < 1e-12, "{batched} vs {manual}");
        assert!(batched.is_finite());
    }

    #[test]
    fn training_is_deterministic_and_advances_the_epoch_count() {
        let series = tiny_synthetic(25);
        let set = make_training_set(&series, &Recipe::default_daily(), 3).unwrap();
        let cfg = tiny_train_config(2);

        let mut a = tiny_model(5);
        let rec_a = train(&mut a, &set, &cfg).unwrap();
        let mut b = tiny_model(5);
        let rec_b = train(&mut b, &set, &cfg).unwrap();
        assert_eq!(rec_a, rec_b);
        assert_eq!(a, b);
        assert_eq!(a.trained_epochs, 2);
        assert_eq!(rec_a.len(), 2);
        assert_eq!(rec_a[0].epoch, 1);
        assert_eq!(rec_a[1].epoch, 2);
        for r in &rec_a {
            assert!(r.d_loss.is_finite() && r.g_loss.is_finite() && r.price_mse.is_finite());
            assert!((r.value - (-2.0 * r.d_loss)).abs() < 1e-15);
            assert_eq!(r.lr, cfg.lr);
        }

        // A different stream seed must change the run.
        let mut c = tiny_model(5);
        let rec_c = train(&mut c, &set, &TrainConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(rec_a, rec_c);

        // Resuming continues the epoch numbering.
        let more = train(&mut a, &set, &tiny_train_config(1)).unwrap();
        assert_eq!(more[0].epoch, 3);
        assert_eq!(a.trained_epochs, 3);
    }

    #[test]
    fn lr_decay_halves_per_epoch_while_beta1_mode_stays_flat() {
        let series = tiny_synthetic(25);
        let set = make_training_set(&series, &Recipe::default_daily(), 3).unwrap();
        let cfg = TrainConfig {
            attenuation_mode: AttenuationMode::LrDecay,
            ..tiny_train_config(3)
        };
        let mut model = tiny_model(2);
        let records = train(&mut model, &set, &cfg).unwrap();
        assert_eq!(records[0].lr, 1e-3);
        assert_eq!(records[1].lr, 5e-4);
        assert_eq!(records[2].lr, 2.5e-4);
    }

    #[test]
    fn absurd_learning_rate_reports_divergence() {
        let series = tiny_synthetic(25);
        let set = make_training_set(&series, &Recipe::default_daily(), 3).unwrap();
        let cfg = TrainConfig {
            lr: 1e15,
            ..tiny_train_config(5)
        };
        let mut model = tiny_model(3);
        let err = train(&mut model, &set, &cfg).unwrap_err();
        assert!(matches!(err, Error::TrainingDiverged { .. }), "{err}");
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            attenuation: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err(), "beta1 mode needs attenuation < 1");
        let ok = TrainConfig {
            attenuation: 1.0,
            attenuation_mode: AttenuationMode::LrDecay,
            ..TrainConfig::default()
        };
        assert!(ok.validate().is_ok(), "decay factor 1.0 means no decay");
        let bad = TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn window_mismatch_is_rejected() {
        let series = tiny_synthetic(25);
        let set = make_training_set(&series, &Recipe::default_daily(), 4).unwrap();
        let mut model = tiny_model(1); // conditions on 3 days
        let err = train(&mut model, &set, &tiny_train_config(1)).unwrap_err();
        assert!(matches!(err, Error::Config { .. }), "{err}");
    }

    #[test]
    fn epoch_records_serialize_stably() {
        let records = vec![EpochRecord {
            epoch: 1,
            d_loss: 0.6931471805599453,
            g_loss: 0.7,
            value: -1.3862943611198906,
            price_mse: 0.25,
            lr: 0.0002,
        }];
        let csv = records_to_csv(&records);
        assert_eq!(
            csv,
            "epoch,d_loss,g_loss,value,price_mse,lr\n\
             1,0.6931471805599453,0.7,-1.3862943611198906,0.25,0.0002\n"
        );
    }

    /// Regression test: the score must depend on the candidate row so the
    /// adversarial gradient reaches the generator. A conv stack whose stride
    /// truncation drops the final time step makes the score constant in the
    /// candidate, silently freezing the generator while the rest of the loop
    /// runs without error.
    #[test]
    fn adversarial_gradient_reaches_the_generator() {
        let series = tiny_synthetic(30);

        // Graph-level: grads through a frozen discriminator are nonzero on
        // every generator tensor.
        let set = make_training_set(&series, &Recipe::default_daily(), 3).unwrap();
        let model = tiny_model(5);
        let batch: Vec<TrainPair> = set.pairs[..4].to_vec();
        let mut g = Graph::new();
        let gen_binding = bind_generator(&mut g, &model, true).unwrap();
        let dis_binding = bind_discriminator(&mut g, &model, false).unwrap();
        let windows: Vec<Vec<[f64; FEATURES]>> =
            batch.iter().map(|p| p.condition.clone()).collect();
        let steps = build_condition_steps(&mut g, &windows).unwrap();
        let z = g.constant(vec![4, 2], vec![0.1; 8]).unwrap();
        let fake = generator_forward(&mut g, &model.gen_cfg, &gen_binding, &steps, z).unwrap();
        let cond = build_condition_channels(&mut g, &windows).unwrap();
        let volumes: Vec<f64> = batch.iter().map(|p| p.last_volume).collect();
        let volumes = g.constant(vec![4, 1], volumes).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let scores = discriminator_forward(
            &mut g,
            &model.dis_cfg,
            &dis_binding,
            cond,
            fake,
            volumes,
            true,
            &mut rng,
        )
        .unwrap();
        let ones = g.constant(vec![4, 1], vec![1.0; 4]).unwrap();
        let loss = g.bce(scores, ones).unwrap();
        g.backward(loss).unwrap();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm(g.grad(fake).unwrap()) > 0.0, "candidate grad vanished");
        for (name, id) in [
            ("w_ih", gen_binding.w_ih),
            ("w_hh", gen_binding.w_hh),
            ("b", gen_binding.b),
            ("head_w", gen_binding.head_w),
            ("head_b", gen_binding.head_b),
        ] {
            assert!(norm(g.grad(id).unwrap()) > 0.0, "{name} grad vanished");
        }

        // Update-level, default architecture: one generator step must move
        // every generator tensor.
        let set = make_training_set(&series, &Recipe::default_daily(), 5).unwrap();
        let mut model = GanModel::init(
            GeneratorConfig::default(),
            DiscriminatorConfig::default(),
            5,
        )
        .unwrap();
        let batch: Vec<TrainPair> = set.pairs[..4].to_vec();
        let before: Vec<Vec<f64>> = model
            .named_params()
            .iter()
            .filter(|(n, _)| n.starts_with("generator."))
            .map(|(_, t)| t.values().to_vec())
            .collect();
        let mut noise_rng = ChaCha8Rng::seed_from_u64(1);
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(2);
        let mut adam =
            AdamState::new(AdamConfig::default(), &model.generator_param_sizes()).unwrap();
        let gen_cfg = model.gen_cfg;
        let dis_cfg = model.dis_cfg.clone();
        generator_update(
            &mut model,
            &gen_cfg,
            &dis_cfg,
            GeneratorLossMode::Saturating,
            &batch,
            &mut noise_rng,
            &mut dropout_rng,
            &mut adam,
        )
        .unwrap();
        let after: Vec<(String, Vec<f64>)> = model
            .named_params()
            .iter()
            .filter(|(n, _)| n.starts_with("generator."))
            .map(|(n, t)| (n.clone(), t.values().to_vec()))
            .collect();
        for (old, (name, new)) in before.iter().zip(&after) {
            assert_ne!(old, new, "{name} did not move");
        }
    }

    #[test]
    fn toy_task_runs_deterministically() {
        let cfg = ToyGanConfig {
            steps: 30,
            eval_samples: 256,
            ..ToyGanConfig::default()
        };
        let a = train_toy_gaussian(&cfg).unwrap();
        let b = train_toy_gaussian(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.gen_mean.is_finite() && a.gen_std.is_finite());
        assert!(0.0 < a.d_real_mean && a.d_real_mean < 1.0);
        let c = train_toy_gaussian(&ToyGanConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a, c);
    }
}
