//! AdamW with decoupled weight decay, plateau-driven learning-rate halving,
//! and early stopping on validation loss.

use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment estimates, one pair per parameter vector.
#[derive(Debug, Clone)]
pub struct AdamWState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamWState {
    pub fn new(sizes: &[usize]) -> Self {
        AdamWState {
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One AdamW update:
///   theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
pub fn adamw_step(
    params: &mut [&mut Vec<f64>],
    grads: &[Vec<f64>],
    state: &mut AdamWState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adamw: {} params, {} grads, {} state slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        if p.len() != g.len() {
            return Err(Error::Shape("adamw: param/grad length mismatch".into()));
        }
        for i in 0..p.len() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + weight_decay * p[i]);
        }
    }
    Ok(())
}

/// Halves the learning rate after `patience` epochs without a validation-loss
/// improvement; the counter resets on improvement and after each cut.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    best: f64,
    since_best: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, patience: usize) -> Self {
        PlateauScheduler {
            lr,
            factor: 0.5,
            patience,
            best: f64::INFINITY,
            since_best: 0,
        }
    }

    /// Feed one epoch's validation loss; returns the lr to use next.
    pub fn observe(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best {
            self.best = val_loss;
            self.since_best = 0;
        } else {
            self.since_best += 1;
            if self.since_best >= self.patience {
                self.lr *= self.factor;
                self.since_best = 0;
            }
        }
        self.lr
    }
}

/// Signals a stop after `patience` epochs without validation improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    pub patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
    epoch: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
            epoch: 0,
        }
    }

    /// Feed one epoch's validation loss; true means stop now. Tracks the
    /// best epoch so the caller can restore that snapshot.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        let improved = val_loss < self.best;
        if improved {
            self.best = val_loss;
            self.best_epoch = self.epoch;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        self.epoch += 1;
        self.since_best >= self.patience
    }

    pub fn improved_last_epoch(&self) -> bool {
        self.since_best == 0 && self.epoch > 0
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_scalar(theta: f64, g: f64, state: &mut AdamWState, lr: f64, wd: f64) -> f64 {
        let mut p = vec![theta];
        let mut params = [&mut p];
        adamw_step(&mut params, &[vec![g]], state, lr, wd).unwrap();
        p[0]
    }

    #[test]
    fn zero_gradient_no_decay_leaves_params() {
        let mut state = AdamWState::new(&[1]);
        let mut theta = 0.37;
        for _ in 0..5 {
            theta = step_scalar(theta, 0.0, &mut state, 0.001, 0.0);
        }
        assert_eq!(theta, 0.37);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        // g=1, theta=0: m_hat = 1, v_hat = 1 at t=1, so step ~ -lr
        let mut state = AdamWState::new(&[1]);
        let theta = step_scalar(0.0, 1.0, &mut state, 0.001, 0.0);
        assert!((theta + 0.001).abs() < 1e-6, "theta={theta}");
    }

    #[test]
    fn decoupled_decay_shrinks_geometrically() {
        let mut state = AdamWState::new(&[1]);
        let lr = 0.01;
        let wd = 0.1;
        let mut theta = 1.0;
        for k in 1..=3 {
            theta = step_scalar(theta, 0.0, &mut state, lr, wd);
            let want = (1.0 - lr * wd).powi(k);
            assert!((theta - want).abs() < 1e-12, "step {k}: {theta} vs {want}");
        }
    }

    #[test]
    fn plateau_constant_lr_while_improving() {
        let mut s = PlateauScheduler::new(0.001, 5);
        for k in 0..20 {
            let lr = s.observe(1.0 / (k + 1) as f64);
            assert_eq!(lr, 0.001);
        }
    }

    #[test]
    fn plateau_halves_once_after_patience_plus_one_flat_epochs() {
        let mut s = PlateauScheduler::new(0.001, 5);
        let mut lr = 0.0;
        for _ in 0..6 {
            lr = s.observe(1.0);
        }
        assert_eq!(lr, 0.0005);
        assert_eq!(s.observe(1.0), 0.0005); // counter restarted
    }

    #[test]
    fn plateau_two_plateaus_quarter_lr() {
        let mut s = PlateauScheduler::new(0.001, 5);
        let mut lr = 0.0;
        for _ in 0..11 {
            lr = s.observe(1.0);
        }
        assert_eq!(lr, 0.00025);
    }

    #[test]
    fn early_stop_on_flat_run() {
        let mut e = EarlyStopper::new(3);
        assert!(!e.observe(1.0));
        assert!(!e.observe(1.0));
        assert!(!e.observe(1.0));
        assert!(e.observe(1.0)); // patience+1 total epochs
        assert_eq!(e.best_epoch(), 0);
    }

    #[test]
    fn early_stop_never_fires_while_improving() {
        let mut e = EarlyStopper::new(3);
        for k in 0..50 {
            assert!(!e.observe(-(k as f64)));
        }
        assert_eq!(e.best_epoch(), 49);
    }
}
