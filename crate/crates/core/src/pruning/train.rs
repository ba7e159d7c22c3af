use serde::{Deserialize, Serialize};

use super::state::{attach_scores, PruningState, SparsityReport};
use super::{threshold_at, Criterion, PruneConfig};
use crate::amp::{AmpConfig, LossScaler};
use crate::data::EncodedExample;
use crate::error::{Error, Result};
use crate::model::TransformerClassifier;
use crate::tensor::AdamState;
use crate::train::{seeded_dropout, train_step, BatchSampler, Objective, TrainOptions};

#[derive(Clone, Debug)]
pub struct PruneOutcome {
    pub state: PruningState,
    pub report: SparsityReport,
    pub log: PruneLog,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PruneLog {
    pub losses: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub skipped_steps: usize,
}

/// Fine-tune `model` under a block mask whose retained fraction follows the
/// schedule in `config`. Masks are refreshed before every step and once more
/// at `total_steps`, so the returned masks sit exactly at the final threshold.
///
/// Only `train_opts.batch_size`, `learning_rate` and `seed` are used; the
/// step count comes from the schedule.
pub fn prune_train(
    model: &mut TransformerClassifier,
    data: &[EncodedExample],
    config: &PruneConfig,
    train_opts: &TrainOptions,
    amp: &AmpConfig,
) -> Result<PruneOutcome> {
    config.validate()?;
    train_opts.validate()?;
    amp.validate()?;
    let mut state = attach_scores(model, config)?;
    let learn_scores = config.criterion == Criterion::Movement;
    let mut sampler = BatchSampler::new(data.len(), train_opts.batch_size, train_opts.seed)?;
    let mut adam = AdamState::new(train_opts.learning_rate)?;
    let mut scaler = amp.enabled.then(LossScaler::default);
    let mut rng = seeded_dropout(train_opts.seed);
    let mut log = PruneLog::default();

    for step in 0..config.total_steps {
        let fraction = threshold_at(step, config)?;
        state.refresh(fraction, model)?;
        let (batch, labels) = sampler.next_batch(data)?;
        let out = train_step(
            model,
            Some(&mut state),
            learn_scores,
            &batch,
            &labels,
            &Objective::CrossEntropy,
            &mut adam,
            scaler.as_mut(),
            Some(&mut rng),
            step,
        )?;
        if out.skipped {
            log.skipped_steps += 1;
        }
        log.losses.push(out.loss);
        log.thresholds.push(fraction);
    }
    state.refresh(threshold_at(config.total_steps, config)?, model)?;
    if state
        .groups
        .iter()
        .any(|g| g.scores.data().iter().any(|s| !s.is_finite()))
    {
        return Err(Error::Divergence {
            step: config.total_steps,
            msg: "non-finite block score".into(),
        });
    }
    let report = state.report();
    Ok(PruneOutcome { state, report, log })
}
