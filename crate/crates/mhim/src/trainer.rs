//! Teacher-student training loop: EMA momentum teacher, masked hard instance
//! mining, classification + consistency losses, Adam with a cosine learning
//! rate schedule, early stopping on validation AUC, and pretrained
//! initialization of teacher and student projection head.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::data::{resolve_ids, Bag, Split};
use crate::masking::{
    self, decay_ratio, random_mask, randomized_ham, topk_mask, union_and_apply, Direction,
    MaskFlags, MaskRatios,
};
use crate::metrics::{self, EvalResult};
use crate::models::{MilModel, ModelConfig, ModelError};
use crate::rng;
use crate::tensor::{ParameterSet, Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at epoch {epoch}, bag {bag_id}")]
    NonFiniteLoss { epoch: usize, bag_id: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Mask(#[from] masking::MaskError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// How the teacher network is constructed and updated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TeacherMode {
    /// No teacher at all: the vanilla baseline.
    None,
    /// The teacher is the student itself, re-read every iteration (no EMA
    /// state is allocated).
    StudentCopy,
    /// EMA teacher without pretrained initialization.
    Momentum,
    /// Pretrained teacher frozen for the whole run (lambda forced to 1).
    Init,
    /// Pretrained teacher with EMA updates: the full scheme.
    InitMomentum,
}

impl std::fmt::Display for TeacherMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TeacherMode::None => "none",
            TeacherMode::StudentCopy => "student-copy",
            TeacherMode::Momentum => "momentum",
            TeacherMode::Init => "init",
            TeacherMode::InitMomentum => "init-momentum",
        };
        write!(f, "{}", s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub lambda_ema: f64,
    pub tau: f64,
    pub alpha: f64,
    pub lr0: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub pretrain_epochs: usize,
    pub mask: MaskRatios,
    pub teacher: TeacherMode,
    pub seed: u64,
    /// Extra RNG stream key component; distinct per ablation cell so cells
    /// never share streams.
    pub salt: String,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            lambda_ema: 0.9999,
            tau: 0.1,
            alpha: 0.5,
            lr0: 2e-4,
            weight_decay: 1e-5,
            max_epochs: 200,
            patience: 30,
            pretrain_epochs: 10,
            mask: MaskRatios::default(),
            teacher: TeacherMode::InitMomentum,
            seed: 0,
            salt: String::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub cls: f64,
    pub con: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean: LossBreakdown,
    pub val_auc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub test: EvalResult,
    pub seed: u64,
    pub config_echo: String,
}

/// Negative log-likelihood of a Bernoulli bag label; the probability is
/// clamped to [1e-12, 1-1e-12] before the log.
pub fn classification_loss(probability: f64, label: u8) -> f64 {
    let p = probability.clamp(1e-12, 1.0 - 1e-12);
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Differentiable counterpart of [`classification_loss`].
pub fn classification_loss_t(tape: &Tape, probability: &Tensor, label: u8) -> Result<Tensor> {
    let p = if label == 1 {
        probability.clone()
    } else {
        let one = Tensor::scalar(1.0);
        tape.sub(&one, probability)?
    };
    let clamped = tape.clamp(&p, 1e-12, 1.0 - 1e-12);
    Ok(tape.scale(&tape.ln(&clamped), -1.0))
}

fn softmax_plain(x: &[f64], tau: f64) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| ((v - m) / tau).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Cross-entropy between the temperature-softened teacher embedding and the
/// student embedding distribution. The temperature applies to the teacher
/// only; the teacher side is already detached.
pub fn consistency_loss(f_t: &[f64], f_s: &[f64], tau: f64) -> Result<f64> {
    if tau <= 0.0 {
        return Err(TensorError::NonPositiveTemperature(tau).into());
    }
    let p_t = softmax_plain(f_t, tau);
    let log_s = {
        let m = f_s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + f_s.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
        f_s.iter().map(|&v| v - lse).collect::<Vec<f64>>()
    };
    Ok(-p_t.iter().zip(&log_s).map(|(p, l)| p * l).sum::<f64>())
}

/// Differentiable counterpart of [`consistency_loss`]; gradients flow only
/// into the student embedding.
pub fn consistency_loss_t(tape: &Tape, f_t: &[f64], f_s: &Tensor, tau: f64) -> Result<Tensor> {
    if tau <= 0.0 {
        return Err(TensorError::NonPositiveTemperature(tau).into());
    }
    let p_t = Tensor::constant(1, f_t.len(), softmax_plain(f_t, tau));
    let log_s = tape.row_log_softmax(f_s);
    let prod = tape.mul(&p_t, &log_s)?;
    Ok(tape.scale(&tape.sum(&prod), -1.0))
}

/// EMA update: theta_t <- lambda * theta_t + (1 - lambda) * theta_s.
/// With lambda = 1 the teacher is left bitwise untouched.
pub fn ema_update(
    teacher: &ParameterSet,
    student: &ParameterSet,
    lambda: f64,
) -> std::result::Result<(), TensorError> {
    teacher.compatible_with(student)?;
    if lambda == 1.0 {
        return Ok(());
    }
    for (name, t) in teacher.iter() {
        let s = student.get(name).unwrap().data_clone();
        t.update_data(|i, v| *v = lambda * *v + (1.0 - lambda) * s[i]);
    }
    Ok(())
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Classic Adam with bias correction; weight decay enters as an additive
/// g <- g + wd * theta term before the moment updates.
pub struct AdamState {
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParameterSet) -> Self {
        let m = params
            .iter()
            .map(|(n, t)| (n.clone(), vec![0.0; t.len()]))
            .collect();
        let v = params
            .iter()
            .map(|(n, t)| (n.clone(), vec![0.0; t.len()]))
            .collect();
        AdamState { m, v, t: 0 }
    }

    pub fn step(
        &mut self,
        params: &ParameterSet,
        lr: f64,
        weight_decay: f64,
    ) -> std::result::Result<(), TensorError> {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for (name, tensor) in params.iter() {
            let grad = tensor
                .grad()
                .ok_or_else(|| TensorError::ShapeMismatch(format!("{} has no gradient", name)))?;
            let m = self.m.get_mut(name).ok_or_else(|| {
                TensorError::IncompatibleParameterSets(format!("unknown parameter {}", name))
            })?;
            let v = self.v.get_mut(name).unwrap();
            tensor.update_data(|i, theta| {
                let g = grad[i] + weight_decay * *theta;
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *theta -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            });
        }
        Ok(())
    }
}

/// Cosine learning-rate schedule, lr0 at epoch 0 down to 0 at the end.
pub fn cosine_lr(lr0: f64, epoch: usize, total_epochs: usize) -> f64 {
    assert!(epoch <= total_epochs && total_epochs >= 1);
    (lr0 * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / total_epochs as f64).cos())).max(0.0)
}

fn shuffled_order(n: usize, seed: u64, salt: &str, label: &str, epoch: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[salt, label, &epoch.to_string()]));
    order
}

/// One vanilla (no-teacher, no-masking) training pass over the given bags,
/// mutating `model` in place. Used for pretraining.
fn vanilla_epochs(
    model: &MilModel,
    bags: &[&Bag],
    epochs: usize,
    cfg: &TrainerConfig,
    shuffle_label: &str,
) -> Result<()> {
    let mut adam = AdamState::new(model.params());
    for epoch in 0..epochs {
        let lr = cosine_lr(cfg.lr0, epoch, epochs);
        for idx in shuffled_order(bags.len(), cfg.seed, &cfg.salt, shuffle_label, epoch) {
            let bag = bags[idx];
            let tape = Tape::new();
            model.params().zero_grads();
            let out = model.forward(&tape, &bag.features)?;
            let loss = classification_loss_t(&tape, &out.probability, bag.label)?;
            if !loss.item().is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    bag_id: bag.id.clone(),
                });
            }
            tape.backward(&loss)?;
            adam.step(model.params(), lr, cfg.weight_decay)?;
        }
    }
    Ok(())
}

/// Score bags with the student on full (unmasked) input.
pub fn score_bags(model: &MilModel, bags: &[&Bag]) -> Result<(Vec<f64>, Vec<u8>)> {
    let mut scores = Vec::with_capacity(bags.len());
    let mut labels = Vec::with_capacity(bags.len());
    for bag in bags {
        let tape = Tape::new();
        let out = model.forward(&tape, &bag.features)?;
        scores.push(out.probability.item());
        labels.push(bag.label);
    }
    Ok((scores, labels))
}

/// Pretrained initialization: train a vanilla model of the same kind for
/// `pretrain_epochs`, copy it wholesale into the teacher, and seed the
/// student's projection head from it (rest freshly initialized).
///
/// With pretrain_epochs = 0 this degrades to: teacher = the fresh random
/// initialization, student identical to it.
pub fn pretrain_init(
    bags: &[&Bag],
    model_cfg: &ModelConfig,
    cfg: &TrainerConfig,
) -> Result<(ParameterSet, MilModel, MilModel)> {
    let fresh = |salt_parts: &[&str]| -> Result<MilModel> {
        Ok(MilModel::new(
            model_cfg,
            &mut rng::stream(cfg.seed, salt_parts),
        )?)
    };
    // The vanilla model starts from the same fresh initialization as the
    // student, so pretrain_epochs = 0 leaves them identical.
    let vanilla = fresh(&[&cfg.salt, "init"])?;
    if cfg.pretrain_epochs > 0 {
        vanilla_epochs(&vanilla, bags, cfg.pretrain_epochs, cfg, "pretrain-shuffle")?;
    }
    let f_p = vanilla.params().deep_clone_detached();

    let mut teacher = fresh(&[&cfg.salt, "init"])?;
    teacher.set_params(f_p.deep_clone_detached());

    let student = fresh(&[&cfg.salt, "init"])?;
    for (name, t) in student.params().iter() {
        if name.starts_with("proj.") {
            t.overwrite(&f_p.get(name).unwrap().data_clone());
        }
    }
    Ok((f_p, student, teacher))
}

/// Everything a run produces: the report plus final parameter sets.
pub struct TrainOutcome {
    pub report: TrainReport,
    pub best_params: ParameterSet,
    pub f_p: ParameterSet,
    pub teacher_params: Option<ParameterSet>,
}

/// Full MHIM training per the Siamese scheme: per bag, teacher forward on the
/// full bag, mask construction, student forward on the masked bag, combined
/// loss, Adam step, EMA update. Validation and test always use full bags and
/// the student only.
pub fn train(
    bags: &[Bag],
    split: &Split,
    model_cfg: &ModelConfig,
    cfg: &TrainerConfig,
) -> Result<TrainOutcome> {
    let train_bags = resolve_ids(bags, &split.train);
    let val_bags = resolve_ids(bags, &split.val);
    let test_bags = resolve_ids(bags, &split.test);

    let (f_p, student, teacher) = pretrain_init(&train_bags, model_cfg, cfg)?;
    let teacher_active = cfg.teacher != TeacherMode::None;
    let uses_ema_model = matches!(
        cfg.teacher,
        TeacherMode::Momentum | TeacherMode::Init | TeacherMode::InitMomentum
    );
    let effective_lambda = match cfg.teacher {
        TeacherMode::Init => 1.0,
        _ => cfg.lambda_ema,
    };

    let mut adam = AdamState::new(student.params());
    let mut records: Vec<EpochRecord> = Vec::new();
    let mut best_auc = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params = student.params().deep_clone_detached();
    let mut stopped_epoch = 0usize;

    for epoch in 0..cfg.max_epochs {
        let lr = cosine_lr(cfg.lr0, epoch, cfg.max_epochs);
        let beta_h = if cfg.mask.decay_high {
            decay_ratio(cfg.mask.beta_h, epoch, cfg.max_epochs)
        } else {
            cfg.mask.beta_h
        };

        let mut sums = LossBreakdown {
            cls: 0.0,
            con: 0.0,
            total: 0.0,
        };
        for idx in shuffled_order(train_bags.len(), cfg.seed, &cfg.salt, "shuffle", epoch) {
            let bag = train_bags[idx];

            // Teacher pass on the full bag; masks from its attention.
            let mut student_input = None;
            let mut teacher_embedding = None;
            if teacher_active {
                let t_tape = Tape::new();
                let t_out = match cfg.teacher {
                    TeacherMode::StudentCopy => student.forward(&t_tape, &bag.features)?,
                    _ => teacher.forward(&t_tape, &bag.features)?,
                };
                teacher_embedding = Some(t_out.bag_embedding.data_clone());
                let attn = &t_out.attention;
                let mut mask_rng = rng::stream(
                    cfg.seed,
                    &[&cfg.salt, "mask", &epoch.to_string(), &bag.id],
                );
                let mut masks: Vec<MaskFlags> = Vec::new();
                if beta_h > 0.0 {
                    masks.push(if cfg.mask.randomized_ham {
                        randomized_ham(attn, beta_h, &mut mask_rng)?
                    } else {
                        topk_mask(attn, beta_h, Direction::Highest)?
                    });
                }
                if cfg.mask.beta_l > 0.0 {
                    masks.push(topk_mask(attn, cfg.mask.beta_l, Direction::Lowest)?);
                }
                if cfg.mask.beta_r > 0.0 {
                    masks.push(random_mask(
                        bag.features.rows,
                        cfg.mask.beta_r,
                        &mut mask_rng,
                    )?);
                }
                if !masks.is_empty() {
                    let refs: Vec<&MaskFlags> = masks.iter().collect();
                    student_input = Some(union_and_apply(&bag.features, &refs)?.features);
                }
            }
            let features = student_input.as_ref().unwrap_or(&bag.features);

            let tape = Tape::new();
            student.params().zero_grads();
            let out = student.forward(&tape, features)?;
            let cls_t = classification_loss_t(&tape, &out.probability, bag.label)?;
            let (con_val, total_t) = match (&teacher_embedding, cfg.alpha > 0.0) {
                (Some(f_t), true) => {
                    let con_t = consistency_loss_t(&tape, f_t, &out.bag_embedding, cfg.tau)?;
                    let scaled = tape.scale(&con_t, cfg.alpha);
                    (con_t.item(), tape.add(&cls_t, &scaled)?)
                }
                _ => (0.0, cls_t.clone()),
            };
            let breakdown = LossBreakdown {
                cls: cls_t.item(),
                con: con_val,
                total: total_t.item(),
            };
            if !breakdown.total.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    bag_id: bag.id.clone(),
                });
            }
            tape.backward(&total_t)?;
            adam.step(student.params(), lr, cfg.weight_decay)?;
            if uses_ema_model {
                ema_update(teacher.params(), student.params(), effective_lambda)?;
            }
            sums.cls += breakdown.cls;
            sums.con += breakdown.con;
            sums.total += breakdown.total;
        }

        let n = train_bags.len() as f64;
        let (val_scores, val_labels) = score_bags(&student, &val_bags)?;
        let val_auc = metrics::auc(&val_scores, &val_labels)?;
        records.push(EpochRecord {
            epoch,
            mean: LossBreakdown {
                cls: sums.cls / n,
                con: sums.con / n,
                total: sums.total / n,
            },
            val_auc,
        });
        stopped_epoch = epoch;
        if val_auc > best_auc {
            best_auc = val_auc;
            best_epoch = epoch;
            best_params = student.params().deep_clone_detached();
        }
        if epoch - best_epoch >= cfg.patience {
            break;
        }
    }

    // Test metrics at the best-validation checkpoint.
    student.params().copy_values_from(&best_params)?;
    let (test_scores, test_labels) = score_bags(&student, &test_bags)?;
    let test = metrics::evaluate(&test_scores, &test_labels)?;

    let report = TrainReport {
        epochs: records,
        best_epoch,
        stopped_epoch,
        test,
        seed: cfg.seed,
        config_echo: String::new(),
    };
    Ok(TrainOutcome {
        report,
        best_params,
        f_p,
        teacher_params: uses_ema_model.then(|| teacher.params().deep_clone_detached()),
    })
}

/// Line-delimited report: one record per epoch plus a final summary record.
/// Config echo lines are prefixed with '#'.
pub fn render_report(report: &TrainReport) -> String {
    let mut out = String::new();
    for line in report.config_echo.lines() {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    for r in &report.epochs {
        out.push_str(&format!(
            "epoch={} loss_cls={} loss_con={} loss_total={} val_auc={}\n",
            r.epoch, r.mean.cls, r.mean.con, r.mean.total, r.val_auc
        ));
    }
    let t = &report.test;
    out.push_str(&format!(
        "summary seed={} best_epoch={} stopped_epoch={} test_auc={} test_accuracy={} \
         test_f1={} threshold={} n_pos={} n_neg={}\n",
        report.seed,
        report.best_epoch,
        report.stopped_epoch,
        t.auc,
        t.accuracy,
        t.f1,
        t.threshold,
        t.n_pos,
        t.n_neg
    ));
    out
}
