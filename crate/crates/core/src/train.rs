//! Mini-batch training loop with validation-driven scheduling, plus
//! evaluation with confusion matrices.

use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::model::Model;
use crate::optim::{adamw_step, AdamWState, EarlyStopper, PlateauScheduler};
use crate::rng::RngState;
use crate::tensor::Tensor;
use crate::textures::TextureDataset;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// epochs without val-loss improvement before the lr halves
    pub plateau_patience: usize,
    /// epochs without val-loss improvement before training stops
    pub early_stop_patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            weight_decay: 5e-4,
            batch_size: 64,
            max_epochs: 80,
            plateau_patience: 5,
            early_stop_patience: 12,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Param("lr must be positive, weight decay non-negative".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Param("batch_size and max_epochs must be >= 1".into()));
        }
        if self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return Err(Error::Param("patience values must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-epoch trace: losses, validation accuracy, and the lr in effect.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    pub lr: Vec<f64>,
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,val_acc,lr\n");
        for e in 0..self.epochs() {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                e, self.train_loss[e], self.val_loss[e], self.val_accuracy[e], self.lr[e]
            ));
        }
        s
    }
}

/// Mean cross-entropy over the batch and its gradient at the logits,
/// (softmax - onehot) / batch.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (batch, k) = match logits.shape() {
        [b, k] => (*b, *k),
        s => return Err(Error::Shape(format!("logits must be 2-D, got {s:?}"))),
    };
    if labels.len() != batch {
        return Err(Error::Shape(format!(
            "{} labels for batch of {batch}",
            labels.len()
        )));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; batch * k];
    for s in 0..batch {
        let row = &logits.data()[s * k..(s + 1) * k];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for &v in row {
            denom += (v - max).exp();
        }
        let log_denom = denom.ln() + max;
        let target = labels[s];
        if target >= k {
            return Err(Error::Param(format!("label {target} outside 0..{k}")));
        }
        loss += log_denom - row[target];
        let g = &mut grad[s * k..(s + 1) * k];
        for (j, &v) in row.iter().enumerate() {
            g[j] = ((v - max).exp() / denom - f64::from(j == target)) / batch as f64;
        }
    }
    Ok((loss / batch as f64, Tensor::new(vec![batch, k], grad)?))
}

fn flat_param_sizes(model: &mut Model) -> Vec<usize> {
    model
        .layers
        .iter()
        .flat_map(|l| l.param_slices())
        .map(|s| s.len())
        .collect()
}

/// Loss and accuracy over a dataset in eval mode, batched.
pub fn eval_loss(
    model: &mut Model,
    set: &TextureDataset,
    batch_size: usize,
    rng: &mut RngState,
) -> Result<(f64, f64)> {
    if set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = set.len();
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let mut i = 0;
    while i < n {
        let hi = (i + batch_size).min(n);
        let idx: Vec<usize> = (i..hi).collect();
        let (x, y) = set.batch(&idx)?;
        let logits = model.forward(&x, Mode::Eval, rng)?;
        let (loss, _) = softmax_cross_entropy(&logits, &y)?;
        loss_sum += loss * idx.len() as f64;
        for (s, &label) in y.iter().enumerate() {
            if argmax_row(&logits, s) == label {
                correct += 1;
            }
        }
        i = hi;
    }
    Ok((loss_sum / n as f64, correct as f64 / n as f64))
}

fn argmax_row(logits: &Tensor, row: usize) -> usize {
    let k = logits.shape()[1];
    let r = &logits.data()[row * k..(row + 1) * k];
    let mut best = 0;
    for (j, &v) in r.iter().enumerate() {
        if v > r[best] {
            best = j;
        }
    }
    best
}

/// Trains in place, restoring the best-validation snapshot before returning.
/// Deterministic for a fixed config seed. Non-finite loss aborts with the
/// failing epoch.
pub fn train(
    model: &mut Model,
    train_set: &TextureDataset,
    val_set: &TextureDataset,
    config: &TrainConfig,
) -> Result<TrainHistory> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = RngState::substream(config.seed, &[0x7261696e]);
    let sizes = flat_param_sizes(model);
    let mut adam = AdamWState::new(&sizes);
    let mut scheduler = PlateauScheduler::new(config.lr, config.plateau_patience);
    let mut stopper = EarlyStopper::new(config.early_stop_patience);
    let mut history = TrainHistory::default();
    let mut indices: Vec<usize> = (0..train_set.len()).collect();
    let mut best_snapshot = model.snapshot();
    let mut lr = config.lr;

    for epoch in 0..config.max_epochs {
        rng.shuffle(&mut indices);
        let mut loss_sum = 0.0;
        for chunk in indices.chunks(config.batch_size) {
            let (x, y) = train_set.batch(chunk)?;
            let (logits, caches) = model.forward_cached(&x, Mode::Train, &mut rng)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &y)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            loss_sum += loss * chunk.len() as f64;
            let (_, layer_grads) = model.backward(&caches, &grad, false)?;
            let flat_grads: Vec<Vec<f64>> = layer_grads.into_iter().flatten().collect();
            let mut params: Vec<&mut Vec<f64>> = model
                .layers
                .iter_mut()
                .flat_map(|l| l.param_vecs())
                .collect();
            adamw_step(&mut params, &flat_grads, &mut adam, lr, config.weight_decay)?;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let (val_loss, val_acc) = eval_loss(model, val_set, config.batch_size, &mut rng)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        history.train_loss.push(train_loss);
        history.val_loss.push(val_loss);
        history.val_accuracy.push(val_acc);
        history.lr.push(lr);
        lr = scheduler.observe(val_loss);
        let stop = stopper.observe(val_loss);
        if stopper.improved_last_epoch() {
            best_snapshot = model.snapshot();
        }
        if stop {
            break;
        }
    }
    model.restore(&best_snapshot)?;
    history.best_epoch = stopper.best_epoch();
    Ok(history)
}

/// Accuracy and a true-class by predicted-class count matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    pub accuracy: f64,
    /// row = true class, column = predicted class
    pub confusion: Vec<Vec<usize>>,
}

pub fn evaluate(model: &mut Model, set: &TextureDataset, classes: usize) -> Result<EvalResult> {
    if set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = RngState::seeded(0); // eval path draws nothing
    let mut confusion = vec![vec![0usize; classes]; classes];
    let n = set.len();
    let mut i = 0;
    while i < n {
        let hi = (i + 256).min(n);
        let idx: Vec<usize> = (i..hi).collect();
        let (x, y) = set.batch(&idx)?;
        let logits = model.forward(&x, Mode::Eval, &mut rng)?;
        for (s, &label) in y.iter().enumerate() {
            let pred = argmax_row(&logits, s);
            confusion[label][pred] += 1;
        }
        i = hi;
    }
    let trace: usize = (0..classes).map(|k| confusion[k][k]).sum();
    Ok(EvalResult {
        accuracy: trace as f64 / n as f64,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{Layer, Linear};
    use crate::model::Model;

    fn toy_dataset(n_per_class: usize, seed: u64) -> TextureDataset {
        // two linearly separable classes on 4x4 images: left-half bright vs
        // right-half bright
        let mut rng = RngState::seeded(seed);
        let mut pixels = Vec::new();
        let mut labels = Vec::new();
        for class in 0..2u8 {
            for _ in 0..n_per_class {
                for r in 0..4 {
                    for c in 0..4 {
                        let bright = if class == 0 { c < 2 } else { c >= 2 };
                        let noise = rng.uniform() < 0.1;
                        let v = u8::from(bright != noise);
                        let _ = r;
                        pixels.push(v);
                    }
                }
                labels.push(class);
            }
        }
        TextureDataset {
            height: 4,
            width: 4,
            channels: 1,
            pixels,
            labels,
            split: "train".into(),
        }
    }

    fn toy_model(seed: u64) -> Model {
        let mut rng = RngState::seeded(seed);
        Model {
            layers: vec![Layer::Flatten, Layer::Linear(Linear::new(16, 2, &mut rng))],
        }
    }

    #[test]
    fn cross_entropy_matches_finite_differences() {
        let logits = Tensor::new(vec![2, 3], vec![0.2, -0.7, 1.1, 0.0, 0.3, -0.2]).unwrap();
        let labels = [2usize, 0];
        let (loss, grad) = softmax_cross_entropy(&logits, &labels).unwrap();
        assert!(loss > 0.0);
        let h = 1e-6;
        for i in 0..6 {
            let mut lp = logits.clone();
            lp.data_mut()[i] += h;
            let mut lm = logits.clone();
            lm.data_mut()[i] -= h;
            let (fp, _) = softmax_cross_entropy(&lp, &labels).unwrap();
            let (fm, _) = softmax_cross_entropy(&lm, &labels).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - grad.data()[i]).abs() < 1e-6, "logit {i}");
        }
        // analytic form: (softmax - onehot)/batch
        let row = &logits.data()[0..3];
        let denom: f64 = row.iter().map(|v| v.exp()).sum();
        let want = (row[0].exp() / denom) / 2.0;
        assert!((grad.data()[0] - want).abs() < 1e-12);
    }

    #[test]
    fn toy_problem_reaches_full_train_accuracy() {
        let tr = toy_dataset(8, 1);
        let val = toy_dataset(4, 2);
        let mut model = toy_model(3);
        let config = TrainConfig {
            max_epochs: 200,
            batch_size: 4,
            weight_decay: 0.0,
            seed: 5,
            ..TrainConfig::default()
        };
        train(&mut model, &tr, &val, &config).unwrap();
        let result = evaluate(&mut model, &tr, 2).unwrap();
        assert_eq!(result.accuracy, 1.0, "confusion {:?}", result.confusion);
    }

    #[test]
    fn training_is_deterministic_given_seed() {
        let tr = toy_dataset(8, 1);
        let va = toy_dataset(4, 2);
        let config = TrainConfig {
            max_epochs: 12,
            batch_size: 4,
            seed: 9,
            ..TrainConfig::default()
        };
        let mut m1 = toy_model(7);
        let h1 = train(&mut m1, &tr, &va, &config).unwrap();
        let mut m2 = toy_model(7);
        let h2 = train(&mut m2, &tr, &va, &config).unwrap();
        assert_eq!(h1.val_loss, h2.val_loss);
        assert_eq!(m1.snapshot(), m2.snapshot()); // bit-for-bit
    }

    #[test]
    fn lr_trace_is_non_increasing() {
        let tr = toy_dataset(8, 1);
        let va = toy_dataset(4, 2);
        let config = TrainConfig {
            max_epochs: 40,
            batch_size: 4,
            plateau_patience: 2,
            early_stop_patience: 38,
            seed: 3,
            ..TrainConfig::default()
        };
        let mut m = toy_model(11);
        let h = train(&mut m, &tr, &va, &config).unwrap();
        for w in h.lr.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn evaluate_trivial_cases() {
        // a perfect two-class predictor gives a diagonal confusion matrix
        let set = toy_dataset(10, 4);
        let mut model = toy_model(5);
        let config = TrainConfig {
            max_epochs: 120,
            batch_size: 4,
            weight_decay: 0.0,
            seed: 6,
            ..TrainConfig::default()
        };
        train(&mut model, &set, &set, &config).unwrap();
        let r = evaluate(&mut model, &set, 2).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.confusion[0][1], 0);
        assert_eq!(r.confusion[1][0], 0);
        assert_eq!(r.confusion[0][0] + r.confusion[1][1], 20);
        // accuracy equals trace/total by definition
        let trace = r.confusion[0][0] + r.confusion[1][1];
        assert_eq!(r.accuracy, trace as f64 / 20.0);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let set = TextureDataset {
            height: 4,
            width: 4,
            channels: 1,
            pixels: vec![],
            labels: vec![],
            split: "test".into(),
        };
        let mut model = toy_model(1);
        assert!(matches!(
            evaluate(&mut model, &set, 2),
            Err(Error::EmptyDataset)
        ));
    }
}
