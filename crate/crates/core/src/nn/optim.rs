use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Learning-rate schedule and momentum for local SGD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lr: f64,
    /// Classical (heavy-ball) momentum coefficient; 0 is plain SGD.
    pub momentum: f64,
    /// Multiplicative decay applied once per communication round.
    pub lr_decay: f64,
}

impl OptimizerConfig {
    pub fn new(lr: f64, momentum: f64, lr_decay: f64) -> Result<Self> {
        let cfg = OptimizerConfig {
            lr,
            momentum,
            lr_decay,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::config(format!("lr must be >= 0, got {}", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::config(format!(
                "momentum must lie in [0, 1], got {}",
                self.momentum
            )));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::config(format!(
                "lr-decay must lie in (0, 1], got {}",
                self.lr_decay
            )));
        }
        Ok(())
    }

    /// `lr * lr_decay^round`.
    pub fn effective_lr(&self, round: usize) -> f64 {
        self.lr * self.lr_decay.powi(round as i32)
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    config: OptimizerConfig,
    effective_lr: f64,
    velocity: Vec<f64>,
}

impl OptimizerState {
    /// Fresh state (zero velocity) for training during `round`.
    pub fn for_round(config: OptimizerConfig, len: usize, round: usize) -> Result<Self> {
        config.validate()?;
        Ok(OptimizerState {
            effective_lr: config.effective_lr(round),
            config,
            velocity: vec![0.0; len],
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn effective_lr(&self) -> f64 {
        self.effective_lr
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }
}

/// One SGD step in place.
///
/// With momentum `β > 0`: `v ← βv + g`, `w ← w − η v`. With `β = 0` the
/// velocity buffer is left untouched and `w ← w − η g`.
pub fn sgd_step(params: &mut [f64], grad: &[f64], opt: &mut OptimizerState) -> Result<()> {
    if params.len() != grad.len() || params.len() != opt.velocity.len() {
        return Err(Error::internal(format!(
            "sgd_step length mismatch: params {}, grad {}, velocity {}",
            params.len(),
            grad.len(),
            opt.velocity.len()
        )));
    }
    let lr = opt.effective_lr;
    let beta = opt.config.momentum;
    if beta == 0.0 {
        for (w, g) in params.iter_mut().zip(grad) {
            *w -= lr * g;
        }
    } else {
        for ((w, g), v) in params.iter_mut().zip(grad).zip(opt.velocity.iter_mut()) {
            *v = beta * *v + g;
            *w -= lr * *v;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_step() {
        let cfg = OptimizerConfig::new(0.1, 0.0, 1.0).unwrap();
        let mut opt = OptimizerState::for_round(cfg, 1, 0).unwrap();
        let mut w = [1.0];
        sgd_step(&mut w, &[0.5], &mut opt).unwrap();
        assert_eq!(w[0], 0.95);
    }

    #[test]
    fn zero_gradient_scales_velocity_only() {
        let cfg = OptimizerConfig::new(0.1, 0.5, 1.0).unwrap();
        let mut opt = OptimizerState::for_round(cfg, 2, 0).unwrap();
        let mut w = [1.0, 2.0];
        sgd_step(&mut w, &[1.0, -2.0], &mut opt).unwrap();
        let after_first = w;
        sgd_step(&mut w, &[0.0, 0.0], &mut opt).unwrap();
        assert_eq!(opt.velocity(), &[0.5, -1.0]);
        // params still move by the decayed velocity
        assert_eq!(w, [after_first[0] - 0.05, after_first[1] + 0.1]);

        let cfg = OptimizerConfig::new(0.1, 0.0, 1.0).unwrap();
        let mut opt = OptimizerState::for_round(cfg, 2, 0).unwrap();
        let mut w = [1.0, 2.0];
        sgd_step(&mut w, &[0.0, 0.0], &mut opt).unwrap();
        assert_eq!(w, [1.0, 2.0]);
    }

    #[test]
    fn two_momentum_steps_match_hand_recursion() {
        // v1 = g1, w1 = w0 - η v1; v2 = β v1 + g2, w2 = w1 - η v2
        let (eta, beta) = (0.05, 0.9);
        let (w0, g1, g2) = (0.7, 0.3, -0.2);
        let v1 = g1;
        let w1 = w0 - eta * v1;
        let v2 = beta * v1 + g2;
        let w2 = w1 - eta * v2;

        let cfg = OptimizerConfig::new(eta, beta, 1.0).unwrap();
        let mut opt = OptimizerState::for_round(cfg, 1, 0).unwrap();
        let mut w = [w0];
        sgd_step(&mut w, &[g1], &mut opt).unwrap();
        sgd_step(&mut w, &[g2], &mut opt).unwrap();
        assert_eq!(w[0], w2);
        assert_eq!(opt.velocity()[0], v2);
    }

    #[test]
    fn decay_is_per_round() {
        let cfg = OptimizerConfig::new(0.01, 0.0, 0.98).unwrap();
        assert_eq!(cfg.effective_lr(0), 0.01);
        assert!((cfg.effective_lr(3) - 0.01 * 0.98f64.powi(3)).abs() < 1e-18);
        let opt = OptimizerState::for_round(cfg, 4, 3).unwrap();
        assert_eq!(opt.effective_lr(), cfg.effective_lr(3));
    }

    #[test]
    fn zero_lr_is_identity() {
        let cfg = OptimizerConfig::new(0.0, 0.9, 1.0).unwrap();
        let mut opt = OptimizerState::for_round(cfg, 3, 0).unwrap();
        let mut w = [0.1, -0.2, 3.0];
        sgd_step(&mut w, &[5.0, 1.0, -7.0], &mut opt).unwrap();
        assert_eq!(w, [0.1, -0.2, 3.0]);
    }

    #[test]
    fn rejects_bad_config_and_lengths() {
        assert!(OptimizerConfig::new(0.1, 1.5, 1.0).is_err());
        assert!(OptimizerConfig::new(0.1, 0.5, 0.0).is_err());
        assert!(OptimizerConfig::new(-0.1, 0.5, 1.0).is_err());
        let cfg = OptimizerConfig::new(0.1, 0.0, 1.0).unwrap();
        let mut opt = OptimizerState::for_round(cfg, 2, 0).unwrap();
        let mut w = [1.0, 2.0];
        assert!(matches!(
            sgd_step(&mut w, &[1.0], &mut opt),
            Err(Error::Internal(_))
        ));
    }
}
