//! REINFORCE with a greedy-rollout baseline. The baseline parameters are
//! frozen between epochs and replaced only when a one-sided paired t-test
//! says the trained policy is better on a fixed evaluation set.

use std::io::{Read, Write};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::autodiff::{adam_step, AdamState};
use crate::instance_gen::{generate, GenConfig, GenError};
use crate::maam::{rollout, rollout_with_gradients, DecodeMode, ModelConfig, ModelError, ModelParams};
use crate::problem::Instance;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Generation(#[from] GenError),
    #[error("non-finite loss in epoch {epoch}, batch {batch} (instance seed {seed})")]
    NonFinite { epoch: usize, batch: usize, seed: u64 },
    #[error("rollout failed on batch instance {index}: {source}")]
    Rollout { index: usize, source: ModelError },
    #[error("training log: {0}")]
    Log(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub instances_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Significance level of the baseline-replacement test.
    pub ttest_alpha: f64,
    pub eval_set_size: usize,
    pub gen_config: GenConfig,
    pub model: ModelConfig,
    /// Rescale the averaged gradient to at most this global norm.
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl TrainConfig {
    /// Desk-scale defaults for a generator preset: 64-dim embeddings, two
    /// layers, four heads, learning rate 1e-4, 256 evaluation instances.
    pub fn desk(preset: &str, seed: u64) -> Result<Self, TrainError> {
        let gen_config = GenConfig::preset(preset)?;
        let model = ModelConfig::new(64, 2, 4, gen_config.fleet_size, gen_config.window_horizon);
        Ok(Self {
            epochs: 20,
            instances_per_epoch: 2000,
            batch_size: 64,
            learning_rate: 1e-4,
            ttest_alpha: 0.05,
            eval_set_size: 256,
            gen_config,
            model,
            grad_clip: None,
            seed,
        })
    }

    /// The published budget: 100 epochs of 1,280,000 instances in batches of 512
    /// with 128-dim embeddings, three layers and eight heads.
    pub fn paper_scale(preset: &str, seed: u64) -> Result<Self, TrainError> {
        let mut cfg = Self::desk(preset, seed)?;
        cfg.epochs = 100;
        cfg.instances_per_epoch = 1_280_000;
        cfg.batch_size = 512;
        cfg.eval_set_size = 1000;
        cfg.model = ModelConfig::new(128, 3, 8, cfg.gen_config.fleet_size, cfg.gen_config.window_horizon);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.instances_per_epoch == 0 || self.batch_size == 0 || self.eval_set_size == 0 {
            return Err(TrainError::InvalidConfig(
                "instance, batch and eval counts must be positive".into(),
            ));
        }
        if !(self.ttest_alpha > 0.0 && self.ttest_alpha < 1.0) {
            return Err(TrainError::InvalidConfig(format!(
                "ttest_alpha must lie in (0, 1), got {}",
                self.ttest_alpha
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::InvalidConfig("learning rate must be positive".into()));
        }
        if self.model.fleet_size != self.gen_config.fleet_size {
            return Err(TrainError::InvalidConfig(format!(
                "model built for {} vehicles, generator produces {}",
                self.model.fleet_size, self.gen_config.fleet_size
            )));
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return Err(TrainError::InvalidConfig("grad_clip must be positive".into()));
        }
        self.gen_config.validate()?;
        self.model.validate()?;
        Ok(())
    }
}

/// RNG for one purpose within a training run.
fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const EVAL_STREAM: u64 = 1;
const EPOCH_STREAM: u64 = 2;
/// Per-instance sampling streams start here: `SAMPLE_STREAM + epoch << 32 + index`.
const SAMPLE_STREAM: u64 = 1 << 62;

fn sample_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    stream_rng(seed, SAMPLE_STREAM + ((epoch as u64) << 32) + index as u64).gen()
}

/// Result of one REINFORCE batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutcome {
    /// Gradient of the batch loss per parameter tensor, in storage order.
    pub gradients: Vec<Vec<f64>>,
    /// `mean((cost - baseline_cost) * log_prob)`.
    pub loss: f64,
    pub sample_costs: Vec<f64>,
    pub baseline_costs: Vec<f64>,
    pub log_probs: Vec<f64>,
    /// Actions of each sampled rollout.
    pub actions: Vec<Vec<usize>>,
}

/// One sampled rollout under `theta` and one greedy rollout under
/// `baseline` per instance; `seeds[i]` drives the sampling of instance `i`.
/// The gradient is that of `mean((cost - baseline_cost) * log_prob)`, with
/// both costs treated as constants.
pub fn reinforce_batch(
    batch: &[Instance],
    theta: &ModelParams,
    baseline: &ModelParams,
    seeds: &[u64],
) -> Result<BatchOutcome, TrainError> {
    assert_eq!(batch.len(), seeds.len(), "one seed per instance");
    if theta.config() != baseline.config() {
        return Err(TrainError::InvalidConfig(
            "policy and baseline architectures differ".into(),
        ));
    }
    let per_instance: Vec<_> = batch
        .par_iter()
        .zip(seeds)
        .enumerate()
        .map(|(index, (inst, &seed))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let wrap = |source| TrainError::Rollout { index, source };
            let (sampled, grads) = rollout_with_gradients(inst, theta, &DecodeMode::Sample, &mut rng).map_err(wrap)?;
            let greedy = rollout(inst, baseline, &DecodeMode::Greedy, &mut rng).map_err(wrap)?;
            Ok((sampled, greedy.solution.cost.total, grads))
        })
        .collect::<Result<_, TrainError>>()?;

    let scale = 1.0 / batch.len() as f64;
    let mut gradients: Vec<Vec<f64>> = theta.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
    let mut out = BatchOutcome {
        gradients: Vec::new(),
        loss: 0.0,
        sample_costs: Vec::with_capacity(batch.len()),
        baseline_costs: Vec::with_capacity(batch.len()),
        log_probs: Vec::with_capacity(batch.len()),
        actions: Vec::with_capacity(batch.len()),
    };
    for (sampled, bl_cost, grads) in per_instance {
        let cost = sampled.solution.cost.total;
        let advantage = cost - bl_cost;
        out.loss += scale * advantage * sampled.log_prob;
        for (tag, g) in grads.tagged() {
            for (acc, x) in gradients[*tag].iter_mut().zip(g) {
                *acc += scale * advantage * x;
            }
        }
        out.sample_costs.push(cost);
        out.baseline_costs.push(bl_cost);
        out.log_probs.push(sampled.log_prob);
        out.actions.push(sampled.actions);
    }
    out.gradients = gradients;
    Ok(out)
}

/// `mean(advantage_i * log p(actions_i))` for fixed actions and advantages.
pub fn surrogate_loss(
    batch: &[Instance],
    params: &ModelParams,
    actions: &[Vec<usize>],
    advantages: &[f64],
) -> Result<f64, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut total = 0.0;
    for ((inst, acts), adv) in batch.iter().zip(actions).zip(advantages) {
        let r = rollout(inst, params, &DecodeMode::Forced(acts.clone()), &mut rng)?;
        total += adv * r.log_prob;
    }
    Ok(total / batch.len() as f64)
}

/// Outcome of a one-sided paired t-test of `candidate < baseline`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    /// Mean of `candidate - baseline`.
    pub mean_diff: f64,
    pub t: f64,
    pub p_value: f64,
}

/// Paired t-test on per-instance costs with alternative "candidate mean is
/// lower". With zero spread the result is decided by the sign of the mean
/// difference alone (p = 0 if negative, else 1); fewer than two pairs give p = 1.
pub fn paired_ttest(candidate: &[f64], baseline: &[f64]) -> TTest {
    assert_eq!(candidate.len(), baseline.len(), "paired samples");
    let n = candidate.len();
    let diffs: Vec<f64> = candidate.iter().zip(baseline).map(|(c, b)| c - b).collect();
    let mean = if n == 0 {
        0.0
    } else {
        diffs.iter().sum::<f64>() / n as f64
    };
    if n < 2 {
        return TTest {
            mean_diff: mean,
            t: f64::NAN,
            p_value: 1.0,
        };
    }
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if sd == 0.0 {
        let (t, p_value) = if mean < 0.0 {
            (f64::NEG_INFINITY, 0.0)
        } else {
            (f64::NAN, 1.0)
        };
        return TTest {
            mean_diff: mean,
            t,
            p_value,
        };
    }
    let t = mean / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive degrees of freedom");
    TTest {
        mean_diff: mean,
        t,
        p_value: dist.cdf(t),
    }
}

/// Greedy total cost of `params` on every instance, in order.
pub fn greedy_costs(params: &ModelParams, instances: &[Instance]) -> Result<Vec<f64>, ModelError> {
    instances
        .par_iter()
        .map(|inst| {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            rollout(inst, params, &DecodeMode::Greedy, &mut rng).map(|r| r.solution.cost.total)
        })
        .collect()
}

/// Greedy-decode both models on `eval_set`; copy `theta` into `baseline`
/// and return true if `theta` is significantly better at level `alpha`.
pub fn paired_ttest_update(
    theta: &ModelParams,
    baseline: &mut ModelParams,
    eval_set: &[Instance],
    alpha: f64,
) -> Result<bool, ModelError> {
    let cand = greedy_costs(theta, eval_set)?;
    let base = greedy_costs(baseline, eval_set)?;
    let replace = paired_ttest(&cand, &base).p_value < alpha;
    if replace {
        baseline.copy_from(theta);
    }
    Ok(replace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_cost_mean: f64,
    pub eval_cost_mean: f64,
    pub baseline_replaced: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    /// Greedy evaluation cost of the untrained parameters.
    pub initial_eval_cost: f64,
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    /// CSV with columns epoch, train_cost_mean, eval_cost_mean,
    /// baseline_replaced, seconds. The untrained evaluation is row epoch 0
    /// (train cost empty); trained epochs count from 1.
    pub fn write_csv(&self, w: impl Write) -> Result<(), TrainError> {
        let mut out = csv::Writer::from_writer(w);
        let err = |e: csv::Error| TrainError::Log(e.to_string());
        out.write_record([
            "epoch",
            "train_cost_mean",
            "eval_cost_mean",
            "baseline_replaced",
            "seconds",
        ])
        .map_err(err)?;
        out.write_record(["0", "", &self.initial_eval_cost.to_string(), "false", "0"])
            .map_err(err)?;
        for r in &self.records {
            out.write_record([
                r.epoch.to_string(),
                r.train_cost_mean.to_string(),
                r.eval_cost_mean.to_string(),
                r.baseline_replaced.to_string(),
                r.seconds.to_string(),
            ])
            .map_err(err)?;
        }
        out.flush().map_err(|e| TrainError::Log(e.to_string()))
    }

    pub fn read_csv(r: impl Read) -> Result<Self, TrainError> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut log = TrainLog::default();
        for (i, row) in rdr.records().enumerate() {
            let row = row.map_err(|e| TrainError::Log(e.to_string()))?;
            let field = |k: usize| {
                row.get(k)
                    .ok_or_else(|| TrainError::Log(format!("row {} too short", i + 1)))
            };
            let bad = |k: usize| TrainError::Log(format!("row {}: bad field {k}", i + 1));
            let num = |k: usize| -> Result<f64, TrainError> { field(k)?.parse().map_err(|_| bad(k)) };
            if i == 0 {
                log.initial_eval_cost = num(2)?;
                continue;
            }
            log.records.push(EpochRecord {
                epoch: field(0)?.parse().map_err(|_| bad(0))?,
                train_cost_mean: num(1)?,
                eval_cost_mean: num(2)?,
                baseline_replaced: field(3)?.parse().map_err(|_| bad(3))?,
                seconds: num(4)?,
            });
        }
        Ok(log)
    }
}

/// Trained parameters and their history.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest evaluation cost over the trained epochs
    /// (the initial parameters when no epoch ran).
    pub best: ModelParams,
    /// Parameters after the last epoch.
    pub last: ModelParams,
    pub log: TrainLog,
}

/// The fixed evaluation set of a training run.
pub fn eval_set(cfg: &TrainConfig) -> Result<Vec<Instance>, TrainError> {
    let seed = stream_rng(cfg.seed, EVAL_STREAM).gen();
    Ok(generate(&cfg.gen_config.clone().with_seed(seed), cfg.eval_set_size)?)
}

pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_with_progress(cfg, |_| {})
}

/// [`train`], calling `progress` after every epoch.
pub fn train_with_progress(
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let mut theta = ModelParams::init(cfg.model.clone(), cfg.seed)?;
    let mut baseline = theta.clone();
    let mut adam = AdamState::new(theta.tensors(), cfg.learning_rate);
    let eval = eval_set(cfg)?;
    let mut baseline_costs = greedy_costs(&baseline, &eval)?;
    let mut log = TrainLog {
        initial_eval_cost: mean(&baseline_costs),
        records: Vec::new(),
    };
    let mut best = theta.clone();
    let mut best_cost = f64::INFINITY;

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let gen_seed = stream_rng(cfg.seed, EPOCH_STREAM + ((epoch as u64) << 8)).gen();
        let instances = generate(&cfg.gen_config.clone().with_seed(gen_seed), cfg.instances_per_epoch)?;
        let mut train_costs = Vec::with_capacity(instances.len());
        for (b, chunk) in instances.chunks(cfg.batch_size).enumerate() {
            let first = b * cfg.batch_size;
            let seeds: Vec<u64> = (0..chunk.len())
                .map(|i| sample_seed(cfg.seed, epoch, first + i))
                .collect();
            let outcome = reinforce_batch(chunk, &theta, &baseline, &seeds)?;
            let finite = outcome.loss.is_finite() && outcome.gradients.iter().flatten().all(|g| g.is_finite());
            if !finite {
                return Err(TrainError::NonFinite {
                    epoch,
                    batch: b,
                    seed: seeds[0],
                });
            }
            let mut grads = outcome.gradients;
            if let Some(limit) = cfg.grad_clip {
                let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
                if norm > limit {
                    grads.iter_mut().flatten().for_each(|g| *g *= limit / norm);
                }
            }
            theta.zero_grad();
            for (t, g) in theta.tensors_mut().iter_mut().zip(&grads) {
                t.accumulate_grad(g).map_err(ModelError::from)?;
            }
            adam_step(theta.tensors_mut(), &mut adam).map_err(ModelError::from)?;
            train_costs.extend(outcome.sample_costs);
        }
        theta.zero_grad();

        let eval_costs = greedy_costs(&theta, &eval)?;
        let replaced = paired_ttest(&eval_costs, &baseline_costs).p_value < cfg.ttest_alpha;
        if replaced {
            baseline.copy_from(&theta);
            baseline_costs = eval_costs.clone();
        }
        let eval_cost = mean(&eval_costs);
        if eval_cost < best_cost {
            best_cost = eval_cost;
            best.copy_from(&theta);
        }
        let record = EpochRecord {
            epoch,
            train_cost_mean: mean(&train_costs),
            eval_cost_mean: eval_cost,
            baseline_replaced: replaced,
            seconds: start.elapsed().as_secs_f64(),
        };
        progress(&record);
        log.records.push(record);
    }
    best.zero_grad();
    Ok(TrainOutcome { best, last: theta, log })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
