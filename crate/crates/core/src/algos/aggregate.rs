use super::ClientUpdate;
use crate::error::{Error, Result};
use crate::nn::ParamVector;

/// Unweighted mean of the uploaded parameters.
///
/// Summation runs in ascending `client_id` order regardless of input order,
/// which makes the result bitwise reproducible. Each coordinate is clamped
/// into the `[min, max]` range of the inputs, which the exact mean always
/// satisfies but a rounded sum may overshoot by an ulp.
pub fn fedavg_aggregate(updates: &[ClientUpdate]) -> Result<ParamVector> {
    combine(updates, false)
}

/// Mean weighted by each client's example count.
pub fn weighted_aggregate(updates: &[ClientUpdate]) -> Result<ParamVector> {
    combine(updates, true)
}

pub(crate) fn sorted_by_client(updates: &[ClientUpdate]) -> Result<Vec<&ClientUpdate>> {
    if updates.is_empty() {
        return Err(Error::protocol("cannot aggregate an empty set of updates"));
    }
    let mut sorted: Vec<&ClientUpdate> = updates.iter().collect();
    sorted.sort_by_key(|u| u.client_id);
    if let Some(w) = sorted.windows(2).find(|w| w[0].client_id == w[1].client_id) {
        return Err(Error::protocol(format!(
            "client {} uploaded more than once",
            w[0].client_id
        )));
    }
    let len = sorted[0].params.len();
    for u in &sorted {
        u.params.check_len(len, "aggregate")?;
    }
    Ok(sorted)
}

fn combine(updates: &[ClientUpdate], weighted: bool) -> Result<ParamVector> {
    let sorted = sorted_by_client(updates)?;
    let len = sorted[0].params.len();
    let mut sum = vec![0.0; len];
    let mut lo = sorted[0].params.to_vec();
    let mut hi = lo.clone();
    let mut total = 0.0;
    for u in &sorted {
        let weight = if weighted { u.num_examples as f64 } else { 1.0 };
        if weight == 0.0 {
            continue;
        }
        total += weight;
        for (k, &v) in u.params.iter().enumerate() {
            sum[k] += if weighted { weight * v } else { v };
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
    }
    if total == 0.0 {
        return Err(Error::protocol("weighted aggregate over clients holding no data"));
    }
    Ok(sum
        .into_iter()
        .zip(lo.iter().zip(&hi))
        .map(|(s, (&l, &h))| (s / total).clamp(l, h))
        .collect::<Vec<f64>>()
        .into())
}
