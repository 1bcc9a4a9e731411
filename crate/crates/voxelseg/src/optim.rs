//! Adam optimization with plateau-driven learning-rate decay and early
//! stopping. Moment state is kept in f64 regardless of parameter precision.

use crate::error::{Error, Result};
use crate::nn::Scalar;

pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    lr: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            lr,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update over all parameter tensors, visited in the
    /// caller's canonical order. Moment buffers allocate on first use and
    /// must keep their shapes afterwards.
    pub fn step<F: Scalar>(&mut self, items: &mut [(&mut [F], &[F])]) -> Result<()> {
        if self.m.is_empty() {
            self.m = items.iter().map(|(p, _)| vec![0.0; p.len()]).collect();
            self.v = items.iter().map(|(p, _)| vec![0.0; p.len()]).collect();
        }
        if self.m.len() != items.len() {
            return Err(Error::Config(format!(
                "optimizer tracks {} parameter tensors, step got {}",
                self.m.len(),
                items.len()
            )));
        }
        for (i, (p, g)) in items.iter().enumerate() {
            if p.len() != self.m[i].len() || g.len() != p.len() {
                return Err(Error::Config(format!(
                    "parameter tensor {i} changed size: state {}, param {}, grad {}",
                    self.m[i].len(),
                    p.len(),
                    g.len()
                )));
            }
        }

        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (p, g)) in items.iter_mut().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for j in 0..p.len() {
                let gj = g[j].to_f64();
                if !gj.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "gradient element {j} of parameter tensor {i}"
                    )));
                }
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                let updated = p[j].to_f64() - self.lr * mhat / (vhat.sqrt() + self.eps);
                p[j] = F::from_f64(updated);
            }
        }
        Ok(())
    }
}

/// Drops the learning rate by `factor` after `patience` consecutive epochs
/// without strict improvement of the observed loss, never below `min_lr`.
/// The non-improvement counter resets after each drop.
pub struct PlateauSchedule {
    factor: f64,
    patience: usize,
    min_lr: f64,
    best: f64,
    since_best: usize,
}

impl PlateauSchedule {
    pub fn new(factor: f64, patience: usize, min_lr: f64) -> Self {
        PlateauSchedule {
            factor,
            patience,
            min_lr,
            best: f64::INFINITY,
            since_best: 0,
        }
    }

    /// Observe one epoch's loss; returns the learning rate to use next.
    pub fn observe(&mut self, loss: f64, lr: f64) -> f64 {
        if loss < self.best {
            self.best = loss;
            self.since_best = 0;
            return lr;
        }
        self.since_best += 1;
        if self.since_best >= self.patience {
            self.since_best = 0;
            (lr * self.factor).max(self.min_lr)
        } else {
            lr
        }
    }
}

/// Signals exhaustion after `patience` consecutive epochs without strict
/// improvement over the running best loss.
pub struct EarlyStop {
    patience: usize,
    best: f64,
    since_best: usize,
}

impl EarlyStop {
    pub fn new(patience: usize) -> Self {
        EarlyStop {
            patience,
            best: f64::INFINITY,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.since_best = 0;
            return false;
        }
        self.since_best += 1;
        self.since_best >= self.patience
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_matches_hand_computed_update() {
        let mut adam = Adam::new(1e-3, 0.9, 0.999, 1e-8);
        let mut p = vec![1.0f64];
        let g = vec![1.0f64];
        adam.step(&mut [(&mut p[..], &g[..])]).unwrap();
        // bias correction cancels: update = lr / (1 + eps)
        let expect = 1.0 - 1e-3 / (1.0 + 1e-8);
        assert!((p[0] - expect).abs() < 1e-12, "got {}", p[0]);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut adam = Adam::new(1e-3, 0.9, 0.999, 1e-8);
        let mut p = vec![0.5f32, -2.0, 0.0];
        let before = p.clone();
        let g = vec![0.0f32; 3];
        adam.step(&mut [(&mut p[..], &g[..])]).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn identical_runs_take_identical_trajectories() {
        let run = || {
            let mut adam = Adam::new(1e-2, 0.9, 0.999, 1e-8);
            let mut p = vec![1.0f32, -1.0];
            for step in 0..50 {
                let g = vec![(step as f32 * 0.3).sin(), (step as f32 * 0.7).cos()];
                adam.step(&mut [(&mut p[..], &g[..])]).unwrap();
            }
            p.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut adam = Adam::new(1e-3, 0.9, 0.999, 1e-8);
        let mut p = vec![1.0f64];
        let g = vec![f64::NAN];
        assert!(matches!(
            adam.step(&mut [(&mut p[..], &g[..])]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn plateau_drops_after_exactly_fifteen_stale_epochs() {
        let mut sched = PlateauSchedule::new(0.1, 15, 1e-5);
        let mut lr = 1e-3;
        lr = sched.observe(1.0, lr);
        for i in 1..=15 {
            lr = sched.observe(1.0, lr);
            if i < 15 {
                assert_eq!(lr, 1e-3, "dropped early at stale epoch {i}");
            }
        }
        assert!((lr - 1e-4).abs() < 1e-12, "lr after 15 stale epochs: {lr}");
    }

    #[test]
    fn improvement_resets_the_plateau_window() {
        let mut sched = PlateauSchedule::new(0.1, 15, 1e-5);
        let mut lr = 1e-3;
        lr = sched.observe(1.0, lr);
        for _ in 0..14 {
            lr = sched.observe(1.0, lr);
        }
        lr = sched.observe(0.9, lr);
        assert_eq!(lr, 1e-3);
        for _ in 0..14 {
            lr = sched.observe(0.9, lr);
            assert_eq!(lr, 1e-3);
        }
        lr = sched.observe(0.9, lr);
        assert!((lr - 1e-4).abs() < 1e-12);
    }

    #[test]
    fn learning_rate_floors_at_minimum() {
        let mut sched = PlateauSchedule::new(0.1, 2, 1e-5);
        let mut lr = 1e-4;
        lr = sched.observe(1.0, lr);
        for _ in 0..20 {
            lr = sched.observe(1.0, lr);
        }
        assert_eq!(lr, 1e-5);
    }

    #[test]
    fn early_stop_fires_after_exactly_patience_stale_epochs() {
        let mut es = EarlyStop::new(100);
        assert!(!es.observe(0.5));
        // flat for 99 epochs: still going
        for _ in 0..99 {
            assert!(!es.observe(0.5));
        }
        // the 100th stale epoch trips it
        assert!(es.observe(0.5));
    }

    #[test]
    fn monotone_improvement_never_stops() {
        let mut es = EarlyStop::new(3);
        for i in 0..200 {
            assert!(!es.observe(1.0 / (i + 1) as f64));
        }
    }

    #[test]
    fn short_history_never_stops() {
        let mut es = EarlyStop::new(100);
        for _ in 0..50 {
            assert!(!es.observe(1.0));
        }
    }
}
