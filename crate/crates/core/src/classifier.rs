//! Rectified linear-softmax classification over tabular or precomputed features.
//!
//! Logits are `F W Z + F Z + b = F (I + W) Z + b`: one bias-free linear map `Z`
//! applied to the rectified and the raw features, with a single class bias.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CfrError, Result};
use crate::regressors::{GradScale, WUpdateLoss};
use crate::rectifier::{reconstruction_grad, sgd_step_w, RectifierWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierTrainConfig {
    pub lr_model: f64,
    pub lr_w: f64,
    pub epochs: usize,
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub grad_scale: GradScale,
    pub w_update_loss: WUpdateLoss,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        ClassifierTrainConfig {
            lr_model: 0.1,
            lr_w: 5e-6,
            epochs: 350,
            lr_decay_epochs: vec![150, 160],
            lr_decay_factor: 0.1,
            batch_size: Some(128),
            seed: 47,
            grad_scale: GradScale::Mean,
            w_update_loss: WUpdateLoss::ReconstructionOnly,
        }
    }
}

impl ClassifierTrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [("lr_model", self.lr_model), ("lr_w", self.lr_w)] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(CfrError::Config(format!("{name} must be finite and >= 0, got {lr}")));
            }
        }
        if self.epochs == 0 {
            return Err(CfrError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == Some(0) {
            return Err(CfrError::Config("batch_size must be positive".into()));
        }
        if !self.lr_decay_epochs.windows(2).all(|w| w[0] < w[1]) {
            return Err(CfrError::Config("lr_decay_epochs must be strictly increasing".into()));
        }
        if self.lr_decay_epochs.last().is_some_and(|&e| e >= self.epochs) {
            return Err(CfrError::Config(format!(
                "lr_decay_epochs {:?} must all be below epochs = {}",
                self.lr_decay_epochs, self.epochs
            )));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor.is_finite()) {
            return Err(CfrError::Config("lr_decay_factor must be positive".into()));
        }
        Ok(())
    }

    /// Multiplier applied to both learning rates during `epoch` (1-based).
    pub fn lr_multiplier(&self, epoch: usize) -> f64 {
        let passed = self.lr_decay_epochs.iter().filter(|&&e| epoch > e).count();
        self.lr_decay_factor.powi(passed as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfrClassifier {
    pub z_weights: DMatrix<f64>,
    pub class_bias: DVector<f64>,
    pub weights: RectifierWeights,
    /// Full-data cross-entropy after each epoch.
    pub history: Vec<f64>,
}

impl CfrClassifier {
    pub fn zeros(p: usize, classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(CfrError::Config(format!("need at least 2 classes, got {classes}")));
        }
        Ok(CfrClassifier {
            z_weights: DMatrix::zeros(p, classes),
            class_bias: DVector::zeros(classes),
            weights: RectifierWeights::zeros(p),
            history: Vec::new(),
        })
    }

    pub fn p(&self) -> usize {
        self.z_weights.nrows()
    }

    pub fn classes(&self) -> usize {
        self.z_weights.ncols()
    }

    fn check(&self) -> Result<()> {
        if self.weights.p() != self.p() || self.class_bias.len() != self.classes() {
            return Err(CfrError::Consistency(format!(
                "classifier parts disagree: z {}x{}, bias {}, rectifier {}",
                self.p(),
                self.classes(),
                self.class_bias.len(),
                self.weights.p()
            )));
        }
        if self.classes() < 2 {
            return Err(CfrError::Config("classifier needs at least 2 classes".into()));
        }
        Ok(())
    }
}

fn add_bias(mut logits: DMatrix<f64>, bias: &DVector<f64>) -> DMatrix<f64> {
    for mut row in logits.row_iter_mut() {
        for (c, v) in row.iter_mut().enumerate() {
            *v += bias[c];
        }
    }
    logits
}

/// Plain linear classifier logits `F Z + b`.
pub fn linear_logits(features: &DMatrix<f64>, z: &DMatrix<f64>, bias: &DVector<f64>) -> Result<DMatrix<f64>> {
    if features.ncols() != z.nrows() {
        return Err(CfrError::dim("linear_logits", z.nrows(), features.ncols()));
    }
    if bias.len() != z.ncols() {
        return Err(CfrError::dim("linear_logits bias", z.ncols(), bias.len()));
    }
    Ok(add_bias(features * z, bias))
}

/// `F (I + W) Z + b`.
pub fn cfr_logits(features: &DMatrix<f64>, clf: &CfrClassifier) -> Result<DMatrix<f64>> {
    clf.check()?;
    if features.ncols() != clf.p() {
        return Err(CfrError::dim("cfr_logits", clf.p(), features.ncols()));
    }
    let rectified = features * clf.weights.augmented();
    linear_logits(&rectified, &clf.z_weights, &clf.class_bias)
}

fn check_labels(logits: &DMatrix<f64>, labels: &[usize]) -> Result<()> {
    if logits.nrows() != labels.len() {
        return Err(CfrError::dim("ce_loss labels", logits.nrows(), labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= logits.ncols()) {
        return Err(CfrError::Consistency(format!(
            "label {bad} out of range for {} classes",
            logits.ncols()
        )));
    }
    Ok(())
}

/// Summed negative log-softmax at the true class, max-shifted for stability.
pub fn ce_loss(logits: &DMatrix<f64>, labels: &[usize]) -> Result<f64> {
    check_labels(logits, labels)?;
    let mut total = 0.0;
    for (row, &label) in logits.row_iter().zip(labels) {
        let max = row.max();
        let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        total += lse - row[label];
    }
    Ok(total)
}

/// `softmax(logits) - onehot(labels)`: gradient of [`ce_loss`] with respect to the logits.
fn ce_logit_grad(logits: &DMatrix<f64>, labels: &[usize]) -> DMatrix<f64> {
    let mut g = logits.clone();
    for (mut row, &label) in g.row_iter_mut().zip(labels) {
        let max = row.max();
        row.iter_mut().for_each(|v| *v = (*v - max).exp());
        let sum = row.sum();
        row.iter_mut().for_each(|v| *v /= sum);
        row[label] -= 1.0;
    }
    g
}

/// Gradients of the summed cross-entropy with respect to `(Z, b, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierGrads {
    pub z_weights: DMatrix<f64>,
    pub class_bias: DVector<f64>,
    pub w: DMatrix<f64>,
}

pub fn classifier_grads(features: &DMatrix<f64>, labels: &[usize], clf: &CfrClassifier) -> Result<ClassifierGrads> {
    let logits = cfr_logits(features, clf)?;
    check_labels(&logits, labels)?;
    let g = ce_logit_grad(&logits, labels);
    let rectified = features * clf.weights.augmented();
    let z_grad = rectified.tr_mul(&g);
    let bias_grad = DVector::from_iterator(g.ncols(), g.column_iter().map(|c| c.sum()));
    let mut w_grad = features.tr_mul(&g) * clf.z_weights.transpose();
    w_grad.fill_diagonal(0.0);
    Ok(ClassifierGrads {
        z_weights: z_grad,
        class_bias: bias_grad,
        w: w_grad,
    })
}

/// Row-wise argmax of [`cfr_logits`]; ties go to the lowest class index.
pub fn predict_labels(features: &DMatrix<f64>, clf: &CfrClassifier) -> Result<Vec<usize>> {
    let logits = cfr_logits(features, clf)?;
    Ok(argmax_rows(&logits))
}

pub(crate) fn argmax_rows(logits: &DMatrix<f64>) -> Vec<usize> {
    logits
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for c in 1..row.len() {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

pub fn infer_classes(labels: &[usize]) -> Result<usize> {
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    if classes < 2 {
        return Err(CfrError::Config(format!(
            "labels must span at least 2 classes, found {classes}"
        )));
    }
    Ok(classes)
}

pub fn train_cfr_classifier(
    features: &DMatrix<f64>,
    labels: &[usize],
    cfg: &ClassifierTrainConfig,
    rng: &mut impl Rng,
) -> Result<CfrClassifier> {
    train(features, labels, cfg, rng, true)
}

/// The unrectified baseline: identical training with `W` held at zero.
pub fn train_linear_classifier(
    features: &DMatrix<f64>,
    labels: &[usize],
    cfg: &ClassifierTrainConfig,
    rng: &mut impl Rng,
) -> Result<CfrClassifier> {
    train(features, labels, cfg, rng, false)
}

fn train(
    features: &DMatrix<f64>,
    labels: &[usize],
    cfg: &ClassifierTrainConfig,
    rng: &mut impl Rng,
    rectify: bool,
) -> Result<CfrClassifier> {
    cfg.validate()?;
    let (n, p) = features.shape();
    if labels.len() != n {
        return Err(CfrError::dim("train_cfr_classifier labels", n, labels.len()));
    }
    if n == 0 {
        return Err(CfrError::Empty {
            context: "train_cfr_classifier",
            needed: 1,
            got: 0,
        });
    }
    if rectify && p < 2 {
        return Err(CfrError::dim("train_cfr_classifier", "p >= 2", p));
    }
    let classes = infer_classes(labels)?;
    let mut clf = CfrClassifier::zeros(p, classes)?;
    let batch = cfg.batch_size.unwrap_or(n).min(n);
    let mut order: Vec<usize> = (0..n).collect();

    let diverged = |epoch: usize, detail: &str| CfrError::Divergence {
        epoch,
        lr_w: cfg.lr_w,
        lr_model: cfg.lr_model,
        detail: detail.to_string(),
    };

    for epoch in 1..=cfg.epochs {
        let mult = cfg.lr_multiplier(epoch);
        let (lr_model, lr_w) = (cfg.lr_model * mult, cfg.lr_w * mult);
        if batch < n {
            order.shuffle(rng);
        }
        for rows in order.chunks(batch) {
            let fb = features.select_rows(rows);
            let lb: Vec<usize> = rows.iter().map(|&i| labels[i]).collect();
            let scale = match cfg.grad_scale {
                GradScale::Sum => 1.0,
                GradScale::Mean => 1.0 / rows.len() as f64,
            };
            if rectify {
                let mut gw = reconstruction_grad(&fb, &clf.weights)?;
                if cfg.w_update_loss == WUpdateLoss::Joint {
                    gw += classifier_grads(&fb, &lb, &clf)?.w;
                }
                gw *= scale;
                clf.weights = sgd_step_w(&clf.weights, &gw, lr_w)
                    .map_err(|_| diverged(epoch, "non-finite rectifier update"))?;
            }
            let g = classifier_grads(&fb, &lb, &clf)?;
            clf.z_weights -= g.z_weights * (lr_model * scale);
            clf.class_bias -= g.class_bias * (lr_model * scale);
            if clf.z_weights.iter().any(|v| !v.is_finite()) {
                return Err(diverged(epoch, "non-finite classifier weights"));
            }
        }
        let loss = ce_loss(&cfr_logits(features, &clf)?, labels)?;
        if !loss.is_finite() {
            return Err(diverged(epoch, "non-finite cross-entropy"));
        }
        clf.history.push(loss);
    }
    Ok(clf)
}
