use std::borrow::Cow;
use std::collections::BTreeMap;

use super::aggregate::{fedavg_aggregate, sorted_by_client};
use super::ClientUpdate;
use crate::error::{Error, Result};
use crate::nn::ParamVector;

/// Server and per-client control variates. Clients that have never
/// participated implicitly hold the zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaffoldState {
    server_control: ParamVector,
    client_controls: BTreeMap<usize, ParamVector>,
}

impl ScaffoldState {
    pub fn new(len: usize) -> Self {
        ScaffoldState {
            server_control: ParamVector::zeros(len),
            client_controls: BTreeMap::new(),
        }
    }

    pub fn server_control(&self) -> &ParamVector {
        &self.server_control
    }

    pub fn client_control(&self, client_id: usize) -> Cow<'_, ParamVector> {
        match self.client_controls.get(&client_id) {
            Some(c) => Cow::Borrowed(c),
            None => Cow::Owned(ParamVector::zeros(self.server_control.len())),
        }
    }
}

/// Server step: `x ← x + lr_server·mean(y_i − x)`,
/// `c ← c + (K/total_clients)·mean(Δc_i)`, `c_i ← c_i + Δc_i`.
///
/// With `lr_server == 1` the new global is computed directly as the
/// aggregate of the `y_i`, which is the same quantity without the
/// cancellation in `x + (mean(y) − x)`.
pub fn scaffold_server_update(
    global: &ParamVector,
    state: &ScaffoldState,
    updates: &[ClientUpdate],
    lr_server: f64,
    total_clients: usize,
) -> Result<(ParamVector, ScaffoldState)> {
    if !(lr_server > 0.0 && lr_server.is_finite()) {
        return Err(Error::config(format!("server lr must be positive, got {lr_server}")));
    }
    let sorted = sorted_by_client(updates)?;
    if total_clients < sorted.len() {
        return Err(Error::protocol(format!(
            "{} updates from a population of {total_clients}",
            sorted.len()
        )));
    }
    global.check_len(state.server_control.len(), "scaffold global")?;
    let mean_y = fedavg_aggregate(updates)?;
    mean_y.check_len(global.len(), "scaffold update")?;
    let params: ParamVector = if lr_server == 1.0 {
        mean_y
    } else {
        global
            .iter()
            .zip(mean_y.iter())
            .map(|(x, y)| x + lr_server * (y - x))
            .collect::<Vec<f64>>()
            .into()
    };

    let mut next = state.clone();
    let mut delta_sum = vec![0.0; global.len()];
    for u in &sorted {
        let delta = u.control_delta.as_ref().ok_or_else(|| {
            Error::protocol(format!("client {} sent no control update", u.client_id))
        })?;
        delta.check_len(global.len(), "control delta")?;
        for (s, d) in delta_sum.iter_mut().zip(delta.iter()) {
            *s += d;
        }
        let ci = next
            .client_controls
            .entry(u.client_id)
            .or_insert_with(|| ParamVector::zeros(global.len()));
        for (c, d) in ci.iter_mut().zip(delta.iter()) {
            *c += d;
        }
    }
    let k = sorted.len() as f64;
    let scale = k / total_clients as f64;
    for (c, s) in next.server_control.iter_mut().zip(&delta_sum) {
        *c += scale * (s / k);
    }
    Ok((params, next))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn up(id: usize, y: f64, dc: f64) -> ClientUpdate {
        ClientUpdate {
            client_id: id,
            params: vec![y].into(),
            num_examples: 1,
            steps: 1,
            control_delta: Some(vec![dc].into()),
        }
    }

    #[test]
    fn zero_deltas_leave_everything_unchanged() {
        let x = ParamVector::from(vec![0.3]);
        let state = ScaffoldState::new(1);
        let (p, s) = scaffold_server_update(&x, &state, &[up(0, 0.3, 0.0), up(5, 0.3, 0.0)], 0.7, 10).unwrap();
        assert!(p.bits_eq(&x));
        assert!(s.server_control().bits_eq(&state.server_control));
    }

    #[test]
    fn single_client_unit_lr_takes_its_params() {
        let x = ParamVector::from(vec![0.1, 0.2]);
        let u = ClientUpdate {
            client_id: 2,
            params: vec![0.3, -0.7].into(),
            num_examples: 4,
            steps: 3,
            control_delta: Some(ParamVector::zeros(2)),
        };
        let (p, _) = scaffold_server_update(&x, &ScaffoldState::new(2), std::slice::from_ref(&u), 1.0, 1).unwrap();
        assert!(p.bits_eq(&u.params));
    }

    #[test]
    fn two_client_recursion() {
        // hand-unrolled: x=1, c=0.5, c1=0.2, c2=-0.1, y=(0.4, 1.2),
        // dc=(0.3, -0.5), lr_s=0.5, population 4
        let mut state = ScaffoldState::new(1);
        state.server_control = vec![0.5].into();
        state.client_controls.insert(1, vec![0.2].into());
        state.client_controls.insert(2, vec![-0.1].into());
        let x = ParamVector::from(vec![1.0]);
        let (p, s) = scaffold_server_update(&x, &state, &[up(2, 1.2, -0.5), up(1, 0.4, 0.3)], 0.5, 4).unwrap();
        let x_next = 1.0 + 0.5 * ((0.4 + 1.2) / 2.0 - 1.0);
        let c_next = 0.5 + (2.0 / 4.0) * ((0.3 - 0.5) / 2.0);
        assert!((p[0] - x_next).abs() < 1e-15);
        assert!((s.server_control()[0] - c_next).abs() < 1e-15);
        assert!((s.client_control(1)[0] - 0.5).abs() < 1e-15);
        assert!((s.client_control(2)[0] + 0.6).abs() < 1e-15);
        assert_eq!(s.client_control(9)[0], 0.0);
    }

    #[test]
    fn errors() {
        let x = ParamVector::from(vec![1.0]);
        let st = ScaffoldState::new(1);
        assert!(matches!(scaffold_server_update(&x, &st, &[], 1.0, 3), Err(Error::Protocol(_))));
        let mut missing = up(0, 1.0, 0.0);
        missing.control_delta = None;
        assert!(matches!(scaffold_server_update(&x, &st, &[missing], 1.0, 3), Err(Error::Protocol(_))));
        assert!(scaffold_server_update(&x, &st, &[up(0, 1.0, 0.0)], 0.0, 3).is_err());
    }
}
