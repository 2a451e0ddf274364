//! Local training and the server/peer aggregation rules.

mod aggregate;
mod ring;
mod scaffold;

use crate::data::{ClientShard, Dataset};
use crate::error::{Error, Result};
use crate::nn::{sgd_step, Model, OptimizerState, ParamVector};

pub use aggregate::{fedavg_aggregate, weighted_aggregate};
pub use ring::{check_gamma, ring_exchange, ExchangeConfig, ExchangeSemantics};
pub use scaffold::{scaffold_server_update, ScaffoldState};

/// Parameters a client hands back after local training.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub params: ParamVector,
    /// Size of the client's shard. Zero only for clients holding no data.
    pub num_examples: usize,
    /// SGD steps taken during this call.
    pub steps: usize,
    /// Change of the client control variate (SCAFFOLD only).
    pub control_delta: Option<ParamVector>,
}

/// Local objective. The extra terms enter as gradient corrections.
#[derive(Debug, Clone, Copy)]
pub enum LocalObjective<'a> {
    Plain,
    /// Adds `mu * (w - anchor)`, the gradient of `mu/2 * |w - anchor|^2`.
    Prox { mu: f64, anchor: &'a ParamVector },
    /// Adds `server_control - client_control` and reports the control update.
    Scaffold {
        server_control: &'a ParamVector,
        client_control: &'a ParamVector,
    },
}

/// Which epochs of which round a [`local_train`] call covers.
///
/// `first_epoch` lets RingFed continue the epoch numbering across periods so
/// that the batch sequence depends only on the round-local epoch index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalSchedule {
    pub round: usize,
    pub first_epoch: usize,
    pub epochs: usize,
    pub batch_size: usize,
}

enum Correction<'a> {
    None,
    Prox { mu: f64, anchor: &'a [f64] },
    Fixed(Vec<f64>),
}

impl Correction<'_> {
    fn apply(&self, w: &[f64], grad: &mut [f64]) {
        match self {
            Correction::None => {}
            Correction::Prox { mu, anchor } => {
                for ((g, x), a) in grad.iter_mut().zip(w).zip(*anchor) {
                    *g += mu * (x - a);
                }
            }
            Correction::Fixed(c) => {
                for (g, &d) in grad.iter_mut().zip(c) {
                    // skip exact zeros so a vanishing correction is bitwise inert
                    if d != 0.0 {
                        *g += d;
                    }
                }
            }
        }
    }
}

/// Runs `schedule.epochs` passes of mini-batch SGD over the client's shard.
///
/// `opt` is advanced in place, so momentum carries over between successive
/// calls for the same client within a round. A client with an empty shard
/// returns its starting parameters unchanged.
pub fn local_train(
    model: &Model,
    data: &Dataset,
    shard: &ClientShard,
    params: ParamVector,
    opt: &mut OptimizerState,
    objective: LocalObjective<'_>,
    schedule: &LocalSchedule,
) -> Result<ClientUpdate> {
    if schedule.epochs < 1 {
        return Err(Error::config("local epochs must be at least 1"));
    }
    params.check_len(model.param_count(), "local_train")?;
    let correction = match objective {
        LocalObjective::Plain => Correction::None,
        LocalObjective::Prox { mu: 0.0, .. } => Correction::None,
        LocalObjective::Prox { mu, anchor } => {
            anchor.check_len(params.len(), "proximal anchor")?;
            Correction::Prox { mu, anchor }
        }
        LocalObjective::Scaffold {
            server_control,
            client_control,
        } => {
            server_control.check_len(params.len(), "server control")?;
            client_control.check_len(params.len(), "client control")?;
            Correction::Fixed(
                server_control
                    .iter()
                    .zip(client_control.iter())
                    .map(|(c, ci)| c - ci)
                    .collect(),
            )
        }
    };

    let start = matches!(objective, LocalObjective::Scaffold { .. }).then(|| params.clone());
    let mut w = params;
    let mut grad = vec![0.0; w.len()];
    let mut steps = 0;
    if !shard.is_empty() {
        for epoch in schedule.first_epoch..schedule.first_epoch + schedule.epochs {
            for idx in shard.sample_batches(schedule.batch_size, schedule.round, epoch)? {
                let batch = data.batch(&idx)?;
                model.loss_and_grad_into(&w, &batch, &mut grad)?;
                correction.apply(&w, &mut grad);
                sgd_step(&mut w, &grad, opt)?;
                steps += 1;
            }
        }
    }
    if !w.is_finite() {
        return Err(Error::internal(format!(
            "client {}: parameters diverged to non-finite values",
            shard.client_id()
        )));
    }

    let control_delta = match (objective, start) {
        (
            LocalObjective::Scaffold {
                server_control, ..
            },
            Some(x),
        ) => {
            let lr = opt.effective_lr();
            let mut delta = ParamVector::zeros(w.len());
            if steps > 0 && lr > 0.0 {
                // c_i+ = c_i - c + (x - y) / (steps * lr); report c_i+ - c_i
                let scale = 1.0 / (steps as f64 * lr);
                for (((d, c), xv), yv) in delta.iter_mut().zip(server_control.iter()).zip(x.iter()).zip(w.iter()) {
                    *d = (xv - yv) * scale - c;
                }
            }
            Some(delta)
        }
        _ => None,
    };

    Ok(ClientUpdate {
        client_id: shard.client_id(),
        params: w,
        num_examples: shard.len(),
        steps,
        control_delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::OptimizerConfig;

    fn toy() -> (Model, Dataset, ClientShard) {
        let feats = vec![0.1, 0.9, 0.8, 0.2, 0.5, 0.5, 0.0, 1.0];
        let ds = Dataset::new(feats, vec![0, 1, 0, 1], 2, 2).unwrap();
        let shard = ClientShard::new(4, vec![0, 1, 2, 3], 17).unwrap();
        (Model::logistic(2, 2).unwrap(), ds, shard)
    }

    fn opt(len: usize, momentum: f64) -> OptimizerState {
        OptimizerState::for_round(OptimizerConfig::new(0.1, momentum, 1.0).unwrap(), len, 0)
            .unwrap()
    }

    fn full_batch(epochs: usize) -> LocalSchedule {
        LocalSchedule {
            round: 0,
            first_epoch: 0,
            epochs,
            batch_size: 4,
        }
    }

    #[test]
    fn one_full_batch_epoch_is_one_sgd_step() {
        let (m, ds, shard) = toy();
        let w0 = m.init_params(2);
        let mut o = opt(w0.len(), 0.0);
        let up = local_train(&m, &ds, &shard, w0.clone(), &mut o, LocalObjective::Plain, &full_batch(1)).unwrap();
        assert_eq!(up.steps, 1);
        assert_eq!(up.num_examples, 4);
        assert_eq!(up.client_id, 4);

        let order = shard.epoch_order(0, 0);
        let g = m.backward(&w0, &ds.batch(&order).unwrap()).unwrap();
        let expected: Vec<f64> = w0.iter().zip(g.iter()).map(|(w, g)| w - 0.1 * g).collect();
        assert_eq!(up.params.as_slice(), expected.as_slice());
    }

    #[test]
    fn prox_with_zero_mu_is_plain() {
        let (m, ds, shard) = toy();
        let w0 = m.init_params(9);
        let anchor = m.init_params(10);
        let sched = LocalSchedule { batch_size: 3, ..full_batch(3) };
        let plain = local_train(&m, &ds, &shard, w0.clone(), &mut opt(w0.len(), 0.9), LocalObjective::Plain, &sched).unwrap();
        let prox = local_train(&m, &ds, &shard, w0.clone(), &mut opt(w0.len(), 0.9), LocalObjective::Prox { mu: 0.0, anchor: &anchor }, &sched).unwrap();
        assert!(plain.params.bits_eq(&prox.params));

        let pulled = local_train(&m, &ds, &shard, w0.clone(), &mut opt(w0.len(), 0.9), LocalObjective::Prox { mu: 1.0, anchor: &anchor }, &sched).unwrap();
        assert!(!plain.params.bits_eq(&pulled.params));
    }

    #[test]
    fn prox_term_matches_hand_step() {
        let (m, ds, shard) = toy();
        let w0 = m.init_params(1);
        let anchor = ParamVector::zeros(w0.len());
        let mu = 0.5;
        let up = local_train(&m, &ds, &shard, w0.clone(), &mut opt(w0.len(), 0.0), LocalObjective::Prox { mu, anchor: &anchor }, &full_batch(1)).unwrap();
        let g = m.backward(&w0, &ds.batch(&shard.epoch_order(0, 0)).unwrap()).unwrap();
        for ((y, w), g) in up.params.iter().zip(w0.iter()).zip(g.iter()) {
            assert!((y - (w - 0.1 * (g + mu * w))).abs() < 1e-15);
        }
    }

    #[test]
    fn scaffold_with_zero_controls_is_plain() {
        let (m, ds, shard) = toy();
        let w0 = m.init_params(5);
        let zero = ParamVector::zeros(w0.len());
        let plain = local_train(&m, &ds, &shard, w0.clone(), &mut opt(w0.len(), 0.0), LocalObjective::Plain, &full_batch(1)).unwrap();
        let sc = local_train(&m, &ds, &shard, w0.clone(), &mut opt(w0.len(), 0.0), LocalObjective::Scaffold { server_control: &zero, client_control: &zero }, &full_batch(1)).unwrap();
        assert!(plain.params.bits_eq(&sc.params));
        assert!(plain.control_delta.is_none());
        assert!(sc.control_delta.is_some());
    }

    #[test]
    fn single_step_scaffold_control_becomes_start_gradient() {
        // y = x - lr (g + c - ci), so ci+ = ci - c + (x - y)/lr = g(x).
        let (m, ds, shard) = toy();
        let x = m.init_params(3);
        let c = ParamVector::from(vec![0.01, -0.02, 0.03, 0.0, 0.05, -0.01]);
        let ci = ParamVector::from(vec![0.0, 0.01, -0.01, 0.02, 0.0, 0.0]);
        let up = local_train(&m, &ds, &shard, x.clone(), &mut opt(x.len(), 0.0), LocalObjective::Scaffold { server_control: &c, client_control: &ci }, &full_batch(1)).unwrap();
        let g = m.backward(&x, &ds.batch(&shard.epoch_order(0, 0)).unwrap()).unwrap();
        let delta = up.control_delta.unwrap();
        for ((d, ci), g) in delta.iter().zip(ci.iter()).zip(g.iter()) {
            assert!((ci + d - g).abs() < 1e-12, "{} vs {}", ci + d, g);
        }
    }

    #[test]
    fn empty_shard_returns_input() {
        let (m, ds, _) = toy();
        let empty = ClientShard::new(1, vec![], 0).unwrap();
        let w0 = m.init_params(4);
        let up = local_train(&m, &ds, &empty, w0.clone(), &mut opt(w0.len(), 0.0), LocalObjective::Plain, &full_batch(2)).unwrap();
        assert!(up.params.bits_eq(&w0));
        assert_eq!((up.steps, up.num_examples), (0, 0));
    }

    #[test]
    fn zero_epochs_rejected() {
        let (m, ds, shard) = toy();
        let w0 = m.init_params(4);
        let err = local_train(&m, &ds, &shard, w0.clone(), &mut opt(w0.len(), 0.0), LocalObjective::Plain, &full_batch(0));
        assert!(matches!(err, Err(Error::Config(_))));
    }
}
