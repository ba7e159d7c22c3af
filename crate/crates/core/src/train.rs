//! Shared optimization loop used by baseline training, pruning and distillation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::amp::{unscale_and_check, AmpConfig, LossScaler};
use crate::data::EncodedExample;
use crate::distill;
use crate::error::{Error, Result};
use crate::model::{TokenBatch, TransformerClassifier};
use crate::pruning::PruningState;
use crate::tensor::{AdamState, Dtype, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 3,
            batch_size: 32,
            learning_rate: 2e-3,
            seed: 0,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive"));
        }
        Ok(())
    }
}

/// What a training step minimizes.
pub enum Objective<'t> {
    CrossEntropy,
    /// Distillation against a frozen teacher.
    Distill {
        teacher: &'t TransformerClassifier,
        temperature: f64,
        alpha: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    /// The temperature-scaled KL term, for distillation steps.
    pub kd_term: Option<f64>,
    /// Overflow under loss scaling; nothing was updated.
    pub skipped: bool,
}

/// Shuffled mini-batches, reshuffled at every epoch boundary.
pub struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if n == 0 || batch_size == 0 {
            return Err(Error::invalid(
                "sampler needs examples and a positive batch size",
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Ok(BatchSampler {
            order,
            cursor: 0,
            batch_size,
            rng,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    pub fn next_indices(&mut self) -> Vec<usize> {
        if self.cursor >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let idx = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        idx
    }

    pub fn next_batch(&mut self, data: &[EncodedExample]) -> Result<(TokenBatch, Vec<usize>)> {
        let idx = self.next_indices();
        batch_of(data, &idx)
    }
}

pub fn batch_of(data: &[EncodedExample], idx: &[usize]) -> Result<(TokenBatch, Vec<usize>)> {
    let rows: Vec<Vec<usize>> = idx.iter().map(|&i| data[i].ids.clone()).collect();
    let labels = idx.iter().map(|&i| data[i].label).collect();
    Ok((TokenBatch::new(&rows)?, labels))
}

fn dropout_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15)
}

/// One optimizer step.
///
/// With a `scaler` the pass runs in emulated fp16 against the model's master
/// weights; an overflowing step updates the scaler and nothing else.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    model: &mut TransformerClassifier,
    pruning: Option<&mut PruningState>,
    train_scores: bool,
    batch: &TokenBatch,
    labels: &[usize],
    objective: &Objective<'_>,
    adam: &mut AdamState,
    scaler: Option<&mut LossScaler>,
    rng: Option<&mut ChaCha8Rng>,
    step: usize,
) -> Result<StepOutcome> {
    let amp = scaler.is_some();
    if amp && model.dtype() == Dtype::F16e {
        return Err(Error::invalid("mixed precision needs f32 master weights"));
    }
    let precision = if amp { Dtype::F16e } else { model.dtype() };
    let scale = scaler.as_ref().map_or(1.0, |s| s.scale);
    let teacher_logits = match objective {
        Objective::Distill { teacher, .. } => Some(teacher.logits(batch)?),
        Objective::CrossEntropy => None,
    };

    let (loss, kd_term, mut grads, mut score_grads) = {
        let mut tape = Tape::new(precision);
        let out = model.forward(&mut tape, batch, pruning.as_deref(), train_scores, rng)?;
        let (loss, kl) = match objective {
            Objective::CrossEntropy => (tape.cross_entropy(out.logits, labels)?, None),
            &Objective::Distill {
                temperature, alpha, ..
            } => {
                let t = teacher_logits.as_ref().expect("computed above");
                let kd = distill::kd_loss_on_tape(
                    &mut tape,
                    out.logits,
                    t.data(),
                    labels,
                    temperature,
                    alpha,
                )?;
                (kd.loss, Some(kd.scaled_kl))
            }
        };
        let loss_value = tape.value(loss)[0];
        if !amp && !loss_value.is_finite() {
            return Err(Error::Divergence {
                step,
                msg: format!("loss is {loss_value}"),
            });
        }
        let g = tape.backward_scaled(loss, scale)?;
        let collect = |v| g.get_or_zeros(v, tape.value(v).len());
        let grads: Vec<Vec<f64>> = out.params.iter().map(|&v| collect(v)).collect();
        let score_grads: Vec<Vec<f64>> = out.scores.iter().flatten().map(|&v| collect(v)).collect();
        (loss_value, kl.map(|v| tape.value(v)[0]), grads, score_grads)
    };

    if let Some(s) = scaler {
        let overflow = !loss.is_finite()
            || grads
                .iter()
                .chain(&score_grads)
                .flatten()
                .any(|g| !g.is_finite());
        if !s.update(overflow) {
            return Ok(StepOutcome {
                loss,
                kd_term,
                skipped: true,
            });
        }
        unscale_and_check(&mut grads, scale);
        unscale_and_check(&mut score_grads, scale);
    }

    let mut params: Vec<&mut Tensor> = model.params_mut();
    for (p, g) in params.iter_mut().zip(grads) {
        p.grad = Some(g);
    }
    if train_scores {
        if let Some(state) = pruning {
            for (s, g) in state.groups.iter_mut().zip(score_grads) {
                s.scores.grad = Some(g);
            }
            params.extend(state.scores_mut());
        }
    }
    adam.step(&mut params)?;
    let finite = params
        .iter()
        .all(|p| p.data().iter().all(|v| v.is_finite()));
    params.into_iter().for_each(|p| p.zero_grad());
    if !finite {
        return Err(Error::Divergence {
            step,
            msg: "non-finite parameter after update".into(),
        });
    }
    Ok(StepOutcome {
        loss,
        kd_term,
        skipped: false,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub step_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
    pub skipped_steps: usize,
}

impl TrainLog {
    pub(crate) fn record(&mut self, out: &StepOutcome) {
        self.step_losses.push(out.loss);
        if out.skipped {
            self.skipped_steps += 1;
        }
    }

    pub(crate) fn close_epoch(&mut self, steps: usize) {
        let n = steps.min(self.step_losses.len());
        let tail = &self.step_losses[self.step_losses.len() - n..];
        self.epoch_losses
            .push(tail.iter().sum::<f64>() / n.max(1) as f64);
    }
}

/// Plain supervised fine-tuning with cross-entropy.
pub fn fine_tune(
    model: &mut TransformerClassifier,
    data: &[EncodedExample],
    opts: &TrainOptions,
    amp: &AmpConfig,
) -> Result<TrainLog> {
    opts.validate()?;
    amp.validate()?;
    let mut sampler = BatchSampler::new(data.len(), opts.batch_size, opts.seed)?;
    let mut adam = AdamState::new(opts.learning_rate)?;
    let mut scaler = amp.enabled.then(LossScaler::default);
    let mut rng = dropout_rng(opts.seed);
    let mut log = TrainLog::default();
    let per_epoch = sampler.batches_per_epoch();
    for _ in 0..opts.epochs {
        for _ in 0..per_epoch {
            let (batch, labels) = sampler.next_batch(data)?;
            let out = train_step(
                model,
                None,
                false,
                &batch,
                &labels,
                &Objective::CrossEntropy,
                &mut adam,
                scaler.as_mut(),
                Some(&mut rng),
                log.step_losses.len(),
            )?;
            log.record(&out);
        }
        log.close_epoch(per_epoch);
    }
    Ok(log)
}

/// Fixed number of cross-entropy steps; used where step counts matter more than epochs.
pub fn train_steps(
    model: &mut TransformerClassifier,
    data: &[EncodedExample],
    steps: usize,
    opts: &TrainOptions,
    amp: &AmpConfig,
) -> Result<TrainLog> {
    opts.validate()?;
    amp.validate()?;
    let mut sampler = BatchSampler::new(data.len(), opts.batch_size, opts.seed)?;
    let mut adam = AdamState::new(opts.learning_rate)?;
    let mut scaler = amp.enabled.then(LossScaler::default);
    let mut rng = dropout_rng(opts.seed);
    let mut log = TrainLog::default();
    for step in 0..steps {
        let (batch, labels) = sampler.next_batch(data)?;
        let out = train_step(
            model,
            None,
            false,
            &batch,
            &labels,
            &Objective::CrossEntropy,
            &mut adam,
            scaler.as_mut(),
            Some(&mut rng),
            step,
        )?;
        log.record(&out);
    }
    log.close_epoch(steps);
    Ok(log)
}

pub(crate) fn seeded_dropout(seed: u64) -> ChaCha8Rng {
    dropout_rng(seed)
}
