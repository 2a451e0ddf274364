use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamVector;

/// How a ring pass reads its inputs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExchangeSemantics {
    /// Every client mixes with its predecessor's pre-exchange parameters.
    #[default]
    Snapshot,
    /// In-place pass `k = 0..K-2` followed by the wraparound, so later
    /// clients absorb already-mixed values.
    Sequential,
}

pub fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::config(format!("gamma must lie in [0, 1], got {gamma}")));
    }
    Ok(())
}

/// Validated mixing factor plus the ring order of the round's clients.
#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeConfig {
    gamma: f64,
    ring_order: Vec<usize>,
}

impl ExchangeConfig {
    pub fn new(gamma: f64, ring_order: Vec<usize>) -> Result<Self> {
        check_gamma(gamma)?;
        let mut sorted = ring_order.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("ring order lists a client twice"));
        }
        Ok(ExchangeConfig { gamma, ring_order })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Client ids in ring position order; position `k` receives from `k - 1`.
    pub fn ring_order(&self) -> &[usize] {
        &self.ring_order
    }
}

fn mix(gamma: f64, incoming: &[f64], own: &[f64]) -> ParamVector {
    incoming
        .iter()
        .zip(own)
        .map(|(a, b)| gamma * a + (1.0 - gamma) * b)
        .collect::<Vec<f64>>()
        .into()
}

/// One ring pass over parameters listed in ring position order:
/// `new[k+1] = γ·old[k] + (1−γ)·old[k+1]` and `new[0] = γ·old[K−1] + (1−γ)·old[0]`.
///
/// `γ = 0` returns the input and, with snapshot reads, `γ = 1` is an exact
/// rotation by one position. Rings shorter than two are returned unchanged.
pub fn ring_exchange(
    params: &[ParamVector],
    gamma: f64,
    semantics: ExchangeSemantics,
) -> Result<Vec<ParamVector>> {
    check_gamma(gamma)?;
    let k = params.len();
    if k < 2 {
        info!("ring of {k} client(s): exchange skipped");
        return Ok(params.to_vec());
    }
    let len = params[0].len();
    for p in params {
        p.check_len(len, "ring_exchange")?;
    }
    if gamma == 0.0 {
        return Ok(params.to_vec());
    }
    Ok(match semantics {
        ExchangeSemantics::Snapshot if gamma == 1.0 => {
            (0..k).map(|i| params[(i + k - 1) % k].clone()).collect()
        }
        ExchangeSemantics::Snapshot => (0..k)
            .map(|i| mix(gamma, &params[(i + k - 1) % k], &params[i]))
            .collect(),
        ExchangeSemantics::Sequential => {
            let mut w = params.to_vec();
            for i in 0..k - 1 {
                w[i + 1] = mix(gamma, &w[i], &w[i + 1]);
            }
            w[0] = mix(gamma, &w[k - 1], &w[0]);
            w
        }
    })
}
