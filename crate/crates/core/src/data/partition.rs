//! Client partitioners: IID, label-sorted shards, and per-class Dirichlet.

use std::collections::BTreeSet;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::{ClientShard, Dataset};
use crate::error::{Error, Result};
use crate::seed::{self, tag, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum PartitionScheme {
    Iid,
    Pathological { shards_per_client: usize },
    Dirichlet { alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub scheme: PartitionScheme,
    pub num_clients: usize,
    pub seed: u64,
}

impl PartitionSpec {
    pub fn apply(&self, ds: &Dataset) -> Result<Vec<ClientShard>> {
        match self.scheme {
            PartitionScheme::Iid => partition_iid(ds.len(), self.num_clients, self.seed),
            PartitionScheme::Pathological { shards_per_client } => partition_pathological(
                ds.labels(),
                self.num_clients,
                shards_per_client,
                self.seed,
            ),
            PartitionScheme::Dirichlet { alpha } => partition_dirichlet(
                ds.labels(),
                ds.num_classes(),
                self.num_clients,
                alpha,
                self.seed,
            ),
        }
    }
}

fn stream(seed: u64, parts: &[u64]) -> SimRng {
    let mut path = vec![tag::PARTITION];
    path.extend_from_slice(parts);
    seed::rng_from(seed::derive_seed(seed, &path))
}

fn check_clients(num_clients: usize) -> Result<()> {
    if num_clients == 0 {
        return Err(Error::config("number of clients must be positive"));
    }
    Ok(())
}

/// Random equal split. The last `n mod num_clients` indices of the
/// permutation are dropped so every client holds exactly `n / num_clients`.
pub fn partition_iid(n: usize, num_clients: usize, seed: u64) -> Result<Vec<ClientShard>> {
    check_clients(num_clients)?;
    if num_clients > n {
        return Err(Error::config(format!(
            "cannot split {n} examples across {num_clients} clients"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream(seed, &[0]));
    let per = n / num_clients;
    Ok(perm
        .chunks_exact(per)
        .take(num_clients)
        .enumerate()
        .map(|(c, block)| {
            let mut idx = block.to_vec();
            idx.sort_unstable();
            ClientShard::derived(c, idx, seed)
        })
        .collect())
}

/// Label-sorted sharding: indices sorted by `(label, index)` are cut into
/// `num_clients * shards_per_client` equal consecutive shards and dealt out
/// in seeded random order.
///
/// Shards straddling a class boundary carry two labels. Such a shard is
/// dealt together with shards drawn only from its own labels, so that no
/// client ends up with more than `shards_per_client` distinct labels. If the
/// pool runs dry the bound is relaxed for that client and a warning logged.
pub fn partition_pathological(
    labels: &[usize],
    num_clients: usize,
    shards_per_client: usize,
    seed: u64,
) -> Result<Vec<ClientShard>> {
    check_clients(num_clients)?;
    if shards_per_client == 0 {
        return Err(Error::config("shards-per-client must be positive"));
    }
    let n = labels.len();
    let total = num_clients * shards_per_client;
    if n == 0 || n % total != 0 {
        return Err(Error::config(format!(
            "{total} shards ({num_clients} clients x {shards_per_client}) do not divide {n} examples"
        )));
    }
    let shard_size = n / total;
    let mut sorted: Vec<usize> = (0..n).collect();
    sorted.sort_by_key(|&i| labels[i]);
    let shards: Vec<&[usize]> = sorted.chunks_exact(shard_size).collect();
    let shard_labels: Vec<BTreeSet<usize>> = shards
        .iter()
        .map(|s| s.iter().map(|&i| labels[i]).collect())
        .collect();

    let mut rng = stream(seed, &[1]);
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut rng);

    // Multi-label shards seed their groups first, while single-label
    // partners are still plentiful.
    let mut seeds = order.clone();
    seeds.sort_by_key(|&s| shard_labels[s].len() == 1);

    let mut taken = vec![false; total];
    let mut groups: Vec<Vec<usize>> = Vec::with_capacity(num_clients);
    for &first in &seeds {
        if taken[first] {
            continue;
        }
        taken[first] = true;
        let mut group = vec![first];
        let mut seen = shard_labels[first].clone();
        while group.len() < shards_per_client {
            let budget = shards_per_client.saturating_sub(seen.len());
            let fits = order.iter().copied().find(|&s| {
                !taken[s] && shard_labels[s].difference(&seen).count() <= budget
            });
            let pick = match fits {
                Some(s) => s,
                None => {
                    let s = order
                        .iter()
                        .copied()
                        .find(|&s| !taken[s])
                        .expect("shard count is a multiple of the group size");
                    warn!(
                        "pathological partition: no shard keeps client within \
                         {shards_per_client} labels; relaxing bound"
                    );
                    s
                }
            };
            taken[pick] = true;
            seen.extend(shard_labels[pick].iter().copied());
            group.push(pick);
        }
        groups.push(group);
    }
    groups.shuffle(&mut rng);

    Ok(groups
        .into_iter()
        .enumerate()
        .map(|(c, group)| {
            let mut idx: Vec<usize> = group.iter().flat_map(|&s| shards[s].iter().copied()).collect();
            idx.sort_unstable();
            ClientShard::derived(c, idx, seed)
        })
        .collect())
}

/// Draw of `Dir(alpha, ..., alpha)` over `k` components.
///
/// Gamma variates are handled in log space: for `alpha < 1`,
/// `Gamma(alpha) = Gamma(alpha + 1) * U^(1/alpha)` underflows to zero for
/// tiny `alpha`, while its logarithm stays representable.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: f64, k: usize, rng: &mut R) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::config(format!("alpha must be positive, got {alpha}")));
    }
    let shape = if alpha < 1.0 { alpha + 1.0 } else { alpha };
    let gamma = Gamma::new(shape, 1.0).map_err(|e| Error::config(e.to_string()))?;
    let logs: Vec<f64> = (0..k)
        .map(|_| {
            let g: f64 = gamma.sample(rng);
            if alpha < 1.0 {
                let u = 1.0 - rng.random::<f64>();
                g.ln() + u.ln() / alpha
            } else {
                g.ln()
            }
        })
        .collect();
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / total).collect())
}

/// Integer counts summing to `total`, as close as possible to
/// `proportions * total` (largest-remainder method, ties to lower index).
pub fn largest_remainder(proportions: &[f64], total: usize) -> Vec<usize> {
    let exact: Vec<f64> = proportions.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    if assigned > total {
        // Only reachable through rounding noise when proportions sum above 1.
        let mut excess = assigned - total;
        for c in counts.iter_mut().rev() {
            let d = excess.min(*c);
            *c -= d;
            excess -= d;
        }
        return counts;
    }
    let mut by_frac: Vec<usize> = (0..counts.len()).collect();
    by_frac.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &k in by_frac.iter().cycle().take(total - assigned) {
        counts[k] += 1;
    }
    counts
}

/// Per-class client proportions and the integer allocation derived from them.
#[derive(Debug, Clone)]
pub struct ClassAllocation {
    pub proportions: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Draws, for each class, a `Dir(alpha)` proportion vector over clients.
pub fn dirichlet_allocation(
    class_sizes: &[usize],
    num_clients: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<ClassAllocation>> {
    check_clients(num_clients)?;
    class_sizes
        .iter()
        .enumerate()
        .map(|(c, &size)| {
            let mut rng = stream(seed, &[2, c as u64]);
            let proportions = sample_dirichlet(alpha, num_clients, &mut rng)?;
            let counts = largest_remainder(&proportions, size);
            Ok(ClassAllocation {
                proportions,
                counts,
            })
        })
        .collect()
}

/// Label-skewed partition: each class's examples are shuffled and dealt to
/// clients in the proportions of an independent `Dir(alpha)` draw. Client
/// sizes are not equal and some clients may receive nothing.
pub fn partition_dirichlet(
    labels: &[usize],
    num_classes: usize,
    num_clients: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<ClientShard>> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class
            .get_mut(y)
            .ok_or_else(|| Error::config(format!("label {y} out of range")))?
            .push(i);
    }
    let sizes: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let allocation = dirichlet_allocation(&sizes, num_clients, alpha, seed)?;
    let mut per_client: Vec<Vec<usize>> = vec![Vec::new(); num_clients];
    for (c, (mut members, alloc)) in by_class.into_iter().zip(allocation).enumerate() {
        members.shuffle(&mut stream(seed, &[3, c as u64]));
        let mut rest = members.as_slice();
        for (client, &count) in alloc.counts.iter().enumerate() {
            let (head, tail) = rest.split_at(count);
            per_client[client].extend_from_slice(head);
            rest = tail;
        }
    }
    Ok(per_client
        .into_iter()
        .enumerate()
        .map(|(c, mut idx)| {
            idx.sort_unstable();
            ClientShard::derived(c, idx, seed)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_exact_cover(shards: &[ClientShard], n: usize) {
        let mut all: Vec<usize> = shards.iter().flat_map(|s| s.indices().to_vec()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn iid_equal_blocks() {
        let shards = partition_iid(100, 10, 5).unwrap();
        assert_eq!(shards.len(), 10);
        assert!(shards.iter().all(|s| s.len() == 10));
        assert_exact_cover(&shards, 100);
        assert_eq!(shards, partition_iid(100, 10, 5).unwrap());
        assert_ne!(shards, partition_iid(100, 10, 6).unwrap());
    }

    #[test]
    fn iid_drops_remainder_and_rejects_too_many_clients() {
        let shards = partition_iid(103, 10, 1).unwrap();
        assert!(shards.iter().all(|s| s.len() == 10));
        assert!(matches!(partition_iid(5, 6, 1), Err(Error::Config(_))));
        assert!(partition_iid(5, 0, 1).is_err());
    }

    #[test]
    fn pathological_two_class_toy() {
        let labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let shards = partition_pathological(&labels, 2, 1, 3).unwrap();
        for s in &shards {
            let distinct: BTreeSet<usize> = s.indices().iter().map(|&i| labels[i]).collect();
            assert_eq!(distinct.len(), 1);
            assert_eq!(s.len(), 10);
        }
        assert_exact_cover(&shards, 20);
    }

    #[test]
    fn pathological_pairs_boundary_shards_with_their_labels() {
        // Class sizes 7, 9, 8 with shard size 4 put boundaries mid-shard.
        let mut labels = vec![0; 7];
        labels.extend(vec![1; 9]);
        labels.extend(vec![2; 8]);
        for seed in 0..50 {
            let shards = partition_pathological(&labels, 3, 2, seed).unwrap();
            assert_exact_cover(&shards, 24);
            for s in &shards {
                assert_eq!(s.len(), 8);
                let distinct: BTreeSet<usize> = s.indices().iter().map(|&i| labels[i]).collect();
                assert!(distinct.len() <= 2, "seed {seed}: {distinct:?}");
            }
        }
    }

    #[test]
    fn pathological_divisibility() {
        let labels = vec![0; 10];
        assert!(matches!(
            partition_pathological(&labels, 3, 1, 0),
            Err(Error::Config(_))
        ));
        assert!(partition_pathological(&labels, 5, 0, 0).is_err());
    }

    #[test]
    fn largest_remainder_conserves_totals() {
        assert_eq!(largest_remainder(&[0.5, 0.25, 0.25], 10), vec![5, 3, 2]);
        assert_eq!(largest_remainder(&[1.0 / 3.0; 3], 10), vec![4, 3, 3]);
        assert_eq!(largest_remainder(&[0.0, 1.0], 0), vec![0, 0]);
    }

    #[test]
    fn dirichlet_draws_are_normalized_even_for_tiny_alpha() {
        let mut rng = seed::rng_from(4);
        for alpha in [1e-3, 0.5, 1.0, 100.0, 1e6] {
            let p = sample_dirichlet(alpha, 50, &mut rng).unwrap();
            assert!(p.iter().all(|v| v.is_finite() && *v >= 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(sample_dirichlet(0.0, 3, &mut rng).is_err());
        assert!(sample_dirichlet(f64::NAN, 3, &mut rng).is_err());
    }

    #[test]
    fn dirichlet_partition_covers_everything() {
        let labels: Vec<usize> = (0..300).map(|i| i % 3).collect();
        for alpha in [1e-3, 0.3, 10.0] {
            let shards = partition_dirichlet(&labels, 3, 7, alpha, 11).unwrap();
            assert_eq!(shards.len(), 7);
            assert_exact_cover(&shards, 300);
        }
    }
}
