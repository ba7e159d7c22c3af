//! Knowledge distillation from a frozen teacher into a (pruned) student.
//!
//! Loss: `alpha · CE(student, labels) + (1 − alpha) · T² · KL(p_T ‖ q_T)`
//! with `p_T = softmax(teacher / T)` and `q_T = softmax(student / T)`.

use serde::{Deserialize, Serialize};

use crate::amp::{AmpConfig, LossScaler};
use crate::data::EncodedExample;
use crate::error::{Error, Result};
use crate::model::TransformerClassifier;
use crate::pruning::PruningState;
use crate::tensor::{AdamState, Dtype, Tape, Tensor, Var};
use crate::train::{seeded_dropout, train_step, BatchSampler, Objective};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub temperature: f64,
    /// Weight on the hard-label cross-entropy.
    pub alpha: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            temperature: 2.0,
            alpha: 0.5,
            epochs: 2,
            learning_rate: 1e-3,
            batch_size: 32,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        check_temperature(self.temperature)?;
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config(format!(
                "alpha must be in [0, 1], got {}",
                self.alpha
            )));
        }
        if self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::config(
                "distill batch_size and learning_rate must be positive",
            ));
        }
        Ok(())
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "temperature must be positive, got {t}"
        )))
    }
}

/// softmax(logits / T) along the class axis.
pub fn soft_targets(teacher_logits: &Tensor, temperature: f64) -> Result<Tensor> {
    check_temperature(temperature)?;
    let (b, k) = teacher_logits.dims2()?;
    let scaled = teacher_logits
        .data()
        .iter()
        .map(|z| z / temperature)
        .collect();
    Tensor::new(vec![b, k], scaled, Dtype::F64)?.softmax(1)
}

pub(crate) struct KdVars {
    pub loss: Var,
    /// T² · KL, the soft term before the (1 − alpha) weight.
    pub scaled_kl: Var,
}

pub(crate) fn kd_loss_on_tape(
    tape: &mut Tape<'_>,
    student: Var,
    teacher_logits: &[f64],
    labels: &[usize],
    temperature: f64,
    alpha: f64,
) -> Result<KdVars> {
    check_temperature(temperature)?;
    let shape = tape.shape(student).to_vec();
    if teacher_logits.len() != shape.iter().product::<usize>() {
        return Err(Error::Shape {
            op: "kd_loss",
            lhs: shape,
            rhs: vec![teacher_logits.len()],
        });
    }
    let teacher = Tensor::new(shape, teacher_logits.to_vec(), Dtype::F64)?;
    let target = soft_targets(&teacher, temperature)?;
    let ce = tape.cross_entropy(student, labels)?;
    let softened = tape.scale(student, 1.0 / temperature);
    let kl = tape.kl_div(softened, target.data())?;
    let scaled_kl = tape.scale(kl, temperature * temperature);
    let hard = tape.scale(ce, alpha);
    let soft = tape.scale(scaled_kl, 1.0 - alpha);
    let loss = tape.add(hard, soft)?;
    Ok(KdVars { loss, scaled_kl })
}

/// Distillation loss value for fixed logits.
pub fn kd_loss(
    student_logits: &Tensor,
    teacher_logits: &Tensor,
    labels: &[usize],
    temperature: f64,
    alpha: f64,
) -> Result<f64> {
    if student_logits.shape() != teacher_logits.shape() {
        return Err(Error::Shape {
            op: "kd_loss",
            lhs: student_logits.shape().to_vec(),
            rhs: teacher_logits.shape().to_vec(),
        });
    }
    let mut tape = Tape::new(Dtype::F64);
    let s = tape.constant(student_logits.to_dtype(Dtype::F64));
    let kd = kd_loss_on_tape(
        &mut tape,
        s,
        teacher_logits.data(),
        labels,
        temperature,
        alpha,
    )?;
    Ok(tape.value(kd.loss)[0])
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DistillLog {
    pub losses: Vec<f64>,
    /// T² · KL per step.
    pub kd_terms: Vec<f64>,
    pub skipped_steps: usize,
}

/// Train `student` against the frozen `teacher`. Student masks, if any, stay
/// fixed; the teacher is only ever run for inference.
pub fn distill_train(
    teacher: &TransformerClassifier,
    student: &mut TransformerClassifier,
    student_masks: Option<&mut PruningState>,
    data: &[EncodedExample],
    config: &DistillConfig,
    amp: &AmpConfig,
    seed: u64,
) -> Result<DistillLog> {
    config.validate()?;
    amp.validate()?;
    let (tc, sc) = (teacher.config(), student.config());
    if tc.n_classes != sc.n_classes {
        return Err(Error::invalid(format!(
            "teacher has {} classes, student {}",
            tc.n_classes, sc.n_classes
        )));
    }
    if tc.vocab_size != sc.vocab_size {
        return Err(Error::invalid(
            "teacher and student must share a vocabulary",
        ));
    }
    let mut log = DistillLog::default();
    if config.epochs == 0 {
        return Ok(log);
    }
    let mut sampler = BatchSampler::new(data.len(), config.batch_size, seed)?;
    let mut adam = AdamState::new(config.learning_rate)?;
    let mut scaler = amp.enabled.then(LossScaler::default);
    let mut rng = seeded_dropout(seed);
    let objective = Objective::Distill {
        teacher,
        temperature: config.temperature,
        alpha: config.alpha,
    };
    let mut masks = student_masks;
    let steps = config.epochs * sampler.batches_per_epoch();
    for step in 0..steps {
        let (batch, labels) = sampler.next_batch(data)?;
        let out = train_step(
            student,
            masks.as_deref_mut(),
            false,
            &batch,
            &labels,
            &objective,
            &mut adam,
            scaler.as_mut(),
            Some(&mut rng),
            step,
        )?;
        log.losses.push(out.loss);
        log.kd_terms.push(out.kd_term.unwrap_or(0.0));
        if out.skipped {
            log.skipped_steps += 1;
        }
    }
    Ok(log)
}
