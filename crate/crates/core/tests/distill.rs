mod common;

use common::tiny_config;
use slimbert::amp::AmpConfig;
use slimbert::data::EncodedExample;
use slimbert::distill::{distill_train, kd_loss, soft_targets, DistillConfig};
use slimbert::model::{ModelConfig, TokenBatch, TransformerClassifier};
use slimbert::pruning::{attach_scores, PruneConfig};
use slimbert::tensor::{cross_entropy, Dtype, Tensor};

fn data(cfg: &ModelConfig, n: usize) -> Vec<EncodedExample> {
    (0..n)
        .map(|i| {
            let ids: Vec<usize> = (0..cfg.max_seq_len)
                .map(|j| 2 + (i * 7 + j * 3) % (cfg.vocab_size - 2))
                .collect();
            EncodedExample {
                label: ids[0] % cfg.n_classes,
                ids,
            }
        })
        .collect()
}

fn logits(rows: &[&[f64]]) -> Tensor {
    Tensor::from_vec(&[rows.len(), rows[0].len()], rows.concat()).unwrap()
}

#[test]
fn soft_targets_examples() {
    let p = soft_targets(&logits(&[&[4f64.ln(), 0.0]]), 1.0).unwrap();
    assert!((p.data()[0] - 0.8).abs() < 1e-12 && (p.data()[1] - 0.2).abs() < 1e-12);

    let l = logits(&[&[3.0, -1.0, 0.5], &[0.0, 10.0, -4.0]]);
    let flat = soft_targets(&l, 1e6).unwrap();
    assert!(flat.data().iter().all(|&q| (q - 1.0 / 3.0).abs() < 1e-4));
    for row in soft_targets(&l, 0.7).unwrap().data().chunks(3) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    assert!(soft_targets(&l, 0.0).is_err());
    assert!(soft_targets(&l, -1.0).is_err());
}

#[test]
fn kd_loss_examples() {
    let teacher = logits(&[&[4f64.ln(), 0.0]]);
    let uniform = logits(&[&[0.0, 0.0]]);
    let want = 0.8 * 1.6f64.ln() + 0.2 * 0.4f64.ln();
    assert!((kd_loss(&uniform, &teacher, &[0], 1.0, 0.0).unwrap() - want).abs() < 1e-12);
    assert!((want - 0.1927).abs() < 1e-4);

    let s = logits(&[&[1.0, -2.0, 0.5], &[0.3, 0.2, 0.1]]);
    let t = logits(&[&[0.0, 1.0, 2.0], &[-1.0, 0.0, 3.0]]);
    let labels = [2, 0];
    let ce = cross_entropy(&s, &labels).unwrap();
    assert_eq!(kd_loss(&s, &t, &labels, 2.0, 1.0).unwrap(), ce);
    assert!((kd_loss(&s, &s, &labels, 2.0, 0.3).unwrap() - 0.3 * ce).abs() < 1e-12);
    assert!(kd_loss(&s, &logits(&[&[1.0, 2.0, 3.0]]), &labels[..1], 2.0, 0.5).is_err());
}

#[test]
fn zero_epochs_leave_the_student_alone() {
    let cfg = tiny_config();
    let teacher = TransformerClassifier::new(cfg.clone(), Dtype::F32, 1).unwrap();
    let mut student = TransformerClassifier::new(cfg.clone(), Dtype::F32, 2).unwrap();
    let before = student.clone();
    let config = DistillConfig {
        epochs: 0,
        ..DistillConfig::default()
    };
    let log = distill_train(
        &teacher,
        &mut student,
        None,
        &data(&cfg, 16),
        &config,
        &AmpConfig::default(),
        0,
    )
    .unwrap();
    assert!(log.losses.is_empty());
    let same = student
        .named_params()
        .iter()
        .zip(before.named_params())
        .all(|(a, b)| a.tensor.data() == b.tensor.data());
    assert!(same);
}

#[test]
fn mismatched_teacher_is_rejected() {
    let cfg = tiny_config();
    let teacher = TransformerClassifier::new(
        ModelConfig {
            n_classes: 4,
            ..cfg.clone()
        },
        Dtype::F32,
        1,
    )
    .unwrap();
    let mut student = TransformerClassifier::new(cfg.clone(), Dtype::F32, 2).unwrap();
    let err = distill_train(
        &teacher,
        &mut student,
        None,
        &data(&cfg, 8),
        &DistillConfig::default(),
        &AmpConfig::default(),
        0,
    );
    assert!(err.is_err());

    let teacher = TransformerClassifier::new(
        ModelConfig {
            vocab_size: 20,
            ..cfg.clone()
        },
        Dtype::F32,
        1,
    )
    .unwrap();
    let err = distill_train(
        &teacher,
        &mut student,
        None,
        &data(&cfg, 8),
        &DistillConfig::default(),
        &AmpConfig::default(),
        0,
    );
    assert!(err.is_err());
}

#[test]
fn student_equal_to_teacher_has_no_kd_term() {
    let cfg = tiny_config();
    let teacher = TransformerClassifier::new(cfg.clone(), Dtype::F64, 1).unwrap();
    let mut student = teacher.clone();
    let config = DistillConfig {
        epochs: 1,
        batch_size: 64,
        ..DistillConfig::default()
    };
    let log = distill_train(
        &teacher,
        &mut student,
        None,
        &data(&cfg, 16),
        &config,
        &AmpConfig::default(),
        0,
    )
    .unwrap();
    assert_eq!(log.kd_terms.len(), 1);
    assert!(log.kd_terms[0].abs() < 1e-12, "{}", log.kd_terms[0]);
}

#[test]
fn masks_stay_frozen_and_teacher_untouched() {
    let cfg = ModelConfig {
        dropout_rate: 0.0,
        ..tiny_config()
    };
    let teacher = TransformerClassifier::new(cfg.clone(), Dtype::F32, 1).unwrap();
    let teacher_before = teacher.clone();
    let mut student = TransformerClassifier::new(cfg.clone(), Dtype::F32, 2).unwrap();
    let mut masks = attach_scores(&student, &PruneConfig::default()).unwrap();
    for g in &mut masks.groups {
        let n = g.scores.numel();
        g.scores
            .assign(&(0..n).map(|i| (i * 5 % n) as f64).collect::<Vec<_>>())
            .unwrap();
    }
    masks.refresh(0.5, &student).unwrap();
    let frozen = masks.clone();
    let config = DistillConfig {
        epochs: 2,
        batch_size: 8,
        ..DistillConfig::default()
    };
    let log = distill_train(
        &teacher,
        &mut student,
        Some(&mut masks),
        &data(&cfg, 24),
        &config,
        &AmpConfig::default(),
        3,
    )
    .unwrap();
    assert_eq!(log.losses.len(), 6);
    assert_eq!(masks, frozen);
    assert_eq!(
        teacher
            .named_params()
            .iter()
            .map(|p| p.tensor.clone())
            .collect::<Vec<_>>(),
        teacher_before
            .named_params()
            .iter()
            .map(|p| p.tensor.clone())
            .collect::<Vec<_>>()
    );
    // masked units keep producing nothing, so the masked logits ignore them
    let rows: Vec<Vec<usize>> = data(&cfg, 3).into_iter().map(|e| e.ids).collect();
    let batch = TokenBatch::new(&rows).unwrap();
    assert!(student
        .logits_masked(&batch, Some(&masks))
        .unwrap()
        .data()
        .iter()
        .all(|v| v.is_finite()));
}

#[test]
fn distillation_moves_student_towards_teacher() {
    let cfg = ModelConfig {
        dropout_rate: 0.0,
        ..tiny_config()
    };
    let teacher = TransformerClassifier::new(cfg.clone(), Dtype::F32, 1).unwrap();
    let mut student = TransformerClassifier::new(cfg.clone(), Dtype::F32, 2).unwrap();
    let train = data(&cfg, 32);
    let config = DistillConfig {
        epochs: 30,
        alpha: 0.0,
        batch_size: 8,
        learning_rate: 3e-3,
        ..DistillConfig::default()
    };
    let log = distill_train(
        &teacher,
        &mut student,
        None,
        &train,
        &config,
        &AmpConfig::default(),
        1,
    )
    .unwrap();
    let head: f64 = log.kd_terms[..4].iter().sum();
    let tail: f64 = log.kd_terms[log.kd_terms.len() - 4..].iter().sum();
    assert!(tail < 0.5 * head, "kd term {head} -> {tail}");
}
