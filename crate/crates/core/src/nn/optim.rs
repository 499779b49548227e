use serde::{Deserialize, Serialize};

use super::layer::ParamTensor;
use super::NnError;

/// SGD with heavy-ball momentum, L2 weight decay and a multi-step schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Epochs at which the rate is multiplied by `decay_factor`.
    pub milestones: Vec<usize>,
    pub decay_factor: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            milestones: vec![60, 80],
            decay_factor: 0.1,
        }
    }
}

impl SgdConfig {
    /// Plain SGD: no momentum, no decay, constant rate.
    pub fn plain(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            momentum: 0.0,
            weight_decay: 0.0,
            milestones: Vec::new(),
            decay_factor: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::Validation(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be non-negative");
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad("decay_factor must lie in (0, 1]");
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return bad("milestones must be strictly increasing");
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| epoch >= m).count();
        self.learning_rate * self.decay_factor.powi(passed as i32)
    }
}

#[derive(Debug, Clone)]
pub struct Sgd {
    config: SgdConfig,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(config: SgdConfig) -> Result<Self, NnError> {
        config.validate()?;
        Ok(Self {
            config,
            velocity: Vec::new(),
        })
    }

    pub fn config(&self) -> &SgdConfig {
        &self.config
    }

    /// `v <- momentum*v + grad + wd*param; param <- param - lr(epoch)*v`.
    ///
    /// Velocity buffers are matched to `params` by position, so callers must
    /// pass parameters in the same order on every step.
    pub fn step(&mut self, params: &mut [&mut ParamTensor], epoch: usize) -> Result<(), NnError> {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(NnError::State(format!(
                "optimizer tracks {} tensors, got {}",
                self.velocity.len(),
                params.len()
            )));
        }
        let lr = self.config.lr_at(epoch);
        let (mu, wd) = (self.config.momentum, self.config.weight_decay);
        for (p, v) in params.iter_mut().zip(self.velocity.iter_mut()) {
            if v.len() != p.len() {
                return Err(NnError::State("parameter size changed between steps".into()));
            }
            for ((w, g), vi) in p.values.iter_mut().zip(&p.grad).zip(v.iter_mut()) {
                *vi = mu * *vi + g + wd * *w;
                *w -= lr * *vi;
            }
            if p.values.iter().any(|w| !w.is_finite()) {
                return Err(NnError::NonFinite(format!(
                    "parameter became non-finite at epoch {epoch}"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_step() {
        let mut p = ParamTensor::from_values(&[1], vec![0.5]).unwrap();
        p.grad[0] = 1.0;
        let mut opt = Sgd::new(SgdConfig::plain(0.1)).unwrap();
        opt.step(&mut [&mut p], 0).unwrap();
        assert!((p.values[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn multistep_schedule() {
        let cfg = SgdConfig {
            learning_rate: 0.1,
            milestones: vec![60, 80],
            decay_factor: 0.1,
            ..SgdConfig::default()
        };
        assert!((cfg.lr_at(85) - 0.001).abs() < 1e-15);
        assert_eq!(cfg.lr_at(59), 0.1);
        assert!((cfg.lr_at(60) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn zero_grad_is_fixed_point() {
        let mut p = ParamTensor::from_values(&[3], vec![0.3, -1.0, 2.0]).unwrap();
        let before = p.values.clone();
        let mut opt = Sgd::new(SgdConfig {
            weight_decay: 0.0,
            ..SgdConfig::default()
        })
        .unwrap();
        for e in 0..5 {
            opt.step(&mut [&mut p], e).unwrap();
        }
        assert_eq!(p.values, before);
    }

    #[test]
    fn momentum_accumulates() {
        let mut p = ParamTensor::from_values(&[1], vec![0.0]).unwrap();
        p.grad[0] = 1.0;
        let mut opt = Sgd::new(SgdConfig {
            learning_rate: 1.0,
            momentum: 0.5,
            weight_decay: 0.0,
            milestones: vec![],
            decay_factor: 1.0,
        })
        .unwrap();
        opt.step(&mut [&mut p], 0).unwrap();
        opt.step(&mut [&mut p], 0).unwrap();
        // v1 = 1, v2 = 1.5
        assert!((p.values[0] + 2.5).abs() < 1e-15);
    }

    #[test]
    fn invalid_configs() {
        let c = SgdConfig {
            milestones: vec![80, 60],
            ..SgdConfig::default()
        };
        assert!(c.validate().is_err());
        let c = SgdConfig {
            momentum: 1.0,
            ..SgdConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn non_finite_detected() {
        let mut p = ParamTensor::from_values(&[1], vec![1.0]).unwrap();
        p.grad[0] = f64::INFINITY;
        let mut opt = Sgd::new(SgdConfig::plain(0.1)).unwrap();
        assert!(matches!(
            opt.step(&mut [&mut p], 3),
            Err(NnError::NonFinite(_))
        ));
    }
}
