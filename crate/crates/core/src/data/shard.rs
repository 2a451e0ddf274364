use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed::{self, tag};

/// One client's slice of the training set plus the seed its local sampling
/// streams are derived from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientShard {
    client_id: usize,
    indices: Vec<usize>,
    seed: u64,
}

impl ClientShard {
    pub fn new(client_id: usize, indices: Vec<usize>, seed: u64) -> Result<Self> {
        let mut sorted = indices.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config(format!(
                "client {client_id}: shard indices must be unique"
            )));
        }
        Ok(ClientShard {
            client_id,
            indices,
            seed,
        })
    }

    /// Shard whose sampling seed is derived from a partition seed.
    pub(crate) fn derived(client_id: usize, indices: Vec<usize>, partition_seed: u64) -> Self {
        ClientShard {
            client_id,
            indices,
            seed: seed::derive_seed(partition_seed, &[tag::SHARD, client_id as u64]),
        }
    }

    pub fn client_id(&self) -> usize {
        self.client_id
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The shard's indices in the order visited during local epoch `epoch`
    /// of communication round `round`.
    pub fn epoch_order(&self, round: usize, epoch: usize) -> Vec<usize> {
        let mut order = self.indices.clone();
        let s = seed::derive_seed(self.seed, &[tag::EPOCH, round as u64, epoch as u64]);
        order.shuffle(&mut seed::rng_from(s));
        order
    }

    /// Consecutive mini-batches over this epoch's order; the last batch may
    /// be short.
    pub fn sample_batches(
        &self,
        batch_size: usize,
        round: usize,
        epoch: usize,
    ) -> Result<Vec<Vec<usize>>> {
        if batch_size < 1 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if self.is_empty() {
            return Err(Error::config(format!(
                "client {} has an empty shard",
                self.client_id
            )));
        }
        Ok(self
            .epoch_order(round, epoch)
            .chunks(batch_size)
            .map(<[usize]>::to_vec)
            .collect())
    }
}
