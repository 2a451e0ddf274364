use rand::distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::{Batch, ParamVector};
use crate::error::{Error, Result};
use crate::seed;

/// Classifier architecture. The MLP hidden layer uses ReLU.
///
/// Weight matrices are stored input-major (`w[i * out_dim + o]`) so that
/// both the forward pass and the weight gradient walk contiguous rows and
/// can skip zero-valued inputs. Layout is `[W, b]` for logistic regression
/// and `[W1, b1, W2, b2]` for the MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    LogisticRegression {
        input_dim: usize,
        num_classes: usize,
    },
    Mlp {
        input_dim: usize,
        hidden_dim: usize,
        num_classes: usize,
    },
}

impl Model {
    pub fn logistic(input_dim: usize, num_classes: usize) -> Result<Self> {
        let m = Model::LogisticRegression {
            input_dim,
            num_classes,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn mlp(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Result<Self> {
        let m = Model::Mlp {
            input_dim,
            hidden_dim,
            num_classes,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let (d, h, c) = self.dims();
        if d == 0 || h == Some(0) {
            return Err(Error::config(format!("{self:?}: layer sizes must be positive")));
        }
        if c < 2 {
            return Err(Error::config(format!("{self:?}: need at least two classes")));
        }
        Ok(())
    }

    fn dims(&self) -> (usize, Option<usize>, usize) {
        match *self {
            Model::LogisticRegression {
                input_dim,
                num_classes,
            } => (input_dim, None, num_classes),
            Model::Mlp {
                input_dim,
                hidden_dim,
                num_classes,
            } => (input_dim, Some(hidden_dim), num_classes),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.dims().0
    }

    pub fn num_classes(&self) -> usize {
        self.dims().2
    }

    pub fn param_count(&self) -> usize {
        match self.dims() {
            (d, None, c) => d * c + c,
            (d, Some(h), c) => d * h + h + h * c + c,
        }
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = seed::rng_from(seed::derive_seed(seed, &[seed::tag::INIT]));
        let mut p = ParamVector::zeros(self.param_count());
        let mut fill = |w: &mut [f64], fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            for v in w {
                *v = dist.sample(&mut rng);
            }
        };
        match self.dims() {
            (d, None, c) => fill(&mut p[..d * c], d),
            (d, Some(h), c) => {
                fill(&mut p[..d * h], d);
                let w2 = d * h + h;
                fill(&mut p[w2..w2 + h * c], h);
            }
        }
        p
    }

    fn check(&self, params: &[f64], batch: &Batch<'_>) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::internal(format!(
                "parameter vector has {} entries, model needs {}",
                params.len(),
                self.param_count()
            )));
        }
        let (d, _, c) = self.dims();
        for (x, y) in batch.iter() {
            if x.len() != d {
                return Err(Error::config(format!(
                    "feature dimension {} does not match model input dimension {d}",
                    x.len()
                )));
            }
            if y >= c {
                return Err(Error::config(format!(
                    "label {y} out of range for {c} classes"
                )));
            }
        }
        Ok(())
    }

    /// Class probabilities for a single input.
    pub fn probabilities(&self, params: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        let batch = Batch::new(vec![x], vec![0])?;
        self.check(params, &batch)?;
        let mut scratch = Scratch::new(self);
        self.logits(params, x, &mut scratch);
        let lse = log_sum_exp(&scratch.logits);
        Ok(scratch.logits.iter().map(|z| (z - lse).exp()).collect())
    }

    /// Mean cross-entropy over the batch and the number of argmax hits.
    pub fn forward_loss(&self, params: &[f64], batch: &Batch<'_>) -> Result<(f64, usize)> {
        self.check(params, batch)?;
        let mut scratch = Scratch::new(self);
        let mut total = 0.0;
        let mut correct = 0;
        for (x, y) in batch.iter() {
            self.logits(params, x, &mut scratch);
            total += log_sum_exp(&scratch.logits) - scratch.logits[y];
            if argmax(&scratch.logits) == y {
                correct += 1;
            }
        }
        Ok((total / batch.len() as f64, correct))
    }

    /// Gradient of the mean batch cross-entropy.
    pub fn backward(&self, params: &[f64], batch: &Batch<'_>) -> Result<ParamVector> {
        let mut grad = ParamVector::zeros(self.param_count());
        self.loss_and_grad_into(params, batch, &mut grad)?;
        Ok(grad)
    }

    /// Overwrites `grad` with the mean-loss gradient and returns the mean loss.
    pub fn loss_and_grad_into(
        &self,
        params: &[f64],
        batch: &Batch<'_>,
        grad: &mut [f64],
    ) -> Result<f64> {
        self.check(params, batch)?;
        if grad.len() != params.len() {
            return Err(Error::internal("gradient buffer length mismatch"));
        }
        grad.fill(0.0);
        let mut scratch = Scratch::new(self);
        let mut total = 0.0;
        let (d, h, c) = self.dims();
        for (x, y) in batch.iter() {
            self.logits(params, x, &mut scratch);
            let lse = log_sum_exp(&scratch.logits);
            total += lse - scratch.logits[y];
            // dL/dz = softmax(z) - onehot(y)
            for z in scratch.logits.iter_mut() {
                *z = (*z - lse).exp();
            }
            scratch.logits[y] -= 1.0;
            let dz = &scratch.logits;
            match h {
                None => {
                    let (gw, gb) = grad.split_at_mut(d * c);
                    accumulate_outer(gw, x, dz);
                    add_into(gb, dz);
                }
                Some(h) => {
                    let (gw1, rest) = grad.split_at_mut(d * h);
                    let (gb1, rest) = rest.split_at_mut(h);
                    let (gw2, gb2) = rest.split_at_mut(h * c);
                    accumulate_outer(gw2, &scratch.hidden, dz);
                    add_into(gb2, dz);
                    let w2 = &params[d * h + h..d * h + h + h * c];
                    for (j, dh) in scratch.dhidden.iter_mut().enumerate() {
                        *dh = if scratch.hidden[j] > 0.0 {
                            dot(&w2[j * c..(j + 1) * c], dz)
                        } else {
                            0.0
                        };
                    }
                    accumulate_outer(gw1, x, &scratch.dhidden);
                    add_into(gb1, &scratch.dhidden);
                }
            }
        }
        let inv = 1.0 / batch.len() as f64;
        for g in grad.iter_mut() {
            *g *= inv;
        }
        Ok(total * inv)
    }

    fn logits(&self, params: &[f64], x: &[f64], s: &mut Scratch) {
        match self.dims() {
            (d, None, c) => affine(&params[..d * c], &params[d * c..], x, &mut s.logits),
            (d, Some(h), c) => {
                let (w1, rest) = params.split_at(d * h);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(h * c);
                affine(w1, b1, x, &mut s.hidden);
                for a in s.hidden.iter_mut() {
                    *a = a.max(0.0);
                }
                affine(w2, b2, &s.hidden, &mut s.logits);
            }
        }
    }
}

struct Scratch {
    hidden: Vec<f64>,
    dhidden: Vec<f64>,
    logits: Vec<f64>,
}

impl Scratch {
    fn new(model: &Model) -> Self {
        let (_, h, c) = model.dims();
        let h = h.unwrap_or(0);
        Scratch {
            hidden: vec![0.0; h],
            dhidden: vec![0.0; h],
            logits: vec![0.0; c],
        }
    }
}

/// `out = b + Wᵀx` with `W` stored input-major.
fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n = out.len();
    out.copy_from_slice(b);
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (o, &wv) in out.iter_mut().zip(&w[i * n..(i + 1) * n]) {
            *o += xi * wv;
        }
    }
}

/// `g[i, :] += x[i] * d` for every nonzero `x[i]`.
fn accumulate_outer(g: &mut [f64], x: &[f64], d: &[f64]) {
    let n = d.len();
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (gv, &dv) in g[i * n..(i + 1) * n].iter_mut().zip(d) {
            *gv += xi * dv;
        }
    }
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Index of the first maximum.
fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate().skip(1) {
        if v > z[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(data: &[Vec<f64>]) -> Vec<&[f64]> {
        data.iter().map(|r| r.as_slice()).collect()
    }

    #[test]
    fn param_counts() {
        assert_eq!(Model::logistic(4, 3).unwrap().param_count(), 15);
        assert_eq!(Model::mlp(784, 64, 10).unwrap().param_count(), 50_890);
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let m = Model::logistic(4, 3).unwrap();
        let a = m.init_params(7);
        assert_eq!(a.len(), 15);
        assert!(a.bits_eq(&m.init_params(7)));
        assert!(!a.bits_eq(&m.init_params(8)));
        assert!(a[12..].iter().all(|&b| b == 0.0));
        assert!(a[..12].iter().all(|w| w.abs() <= 0.5));

        let mlp = Model::mlp(784, 64, 10).unwrap();
        let p = mlp.init_params(1);
        assert_eq!(p.len(), 50_890);
        assert!(p.bits_eq(&mlp.init_params(1)));
        let b1 = 784 * 64;
        assert!(p[b1..b1 + 64].iter().all(|&b| b == 0.0));
        assert!(p[p.len() - 10..].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn uniform_prediction_gives_log_c() {
        let m = Model::logistic(3, 5).unwrap();
        let params = ParamVector::zeros(m.param_count());
        let data = vec![vec![0.3, -1.0, 2.0], vec![1.0, 1.0, 1.0]];
        let batch = Batch::new(rows(&data), vec![1, 4]).unwrap();
        let (loss, _) = m.forward_loss(&params, &batch).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn confident_correct_prediction_has_zero_loss() {
        let m = Model::logistic(1, 2).unwrap();
        // Bias of 800 on class 1 saturates softmax to exactly 1.0.
        let params = ParamVector::from(vec![0.0, 0.0, 0.0, 800.0]);
        let data = vec![vec![1.0]];
        let batch = Batch::new(rows(&data), vec![1]).unwrap();
        let (loss, correct) = m.forward_loss(&params, &batch).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(correct, 1);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let m = Model::mlp(5, 4, 3).unwrap();
        let params = m.init_params(3);
        let p = m.probabilities(&params, &[0.1, 0.9, 0.0, 0.5, 0.2]).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let m = Model::logistic(4, 3).unwrap();
        let params = m.init_params(0);
        let data = vec![vec![1.0, 2.0]];
        let batch = Batch::new(rows(&data), vec![0]).unwrap();
        assert!(matches!(
            m.forward_loss(&params, &batch),
            Err(Error::Config(_))
        ));
        assert!(matches!(m.backward(&params, &batch), Err(Error::Config(_))));
        let data = vec![vec![1.0, 2.0, 3.0, 4.0]];
        let batch = Batch::new(rows(&data), vec![3]).unwrap();
        assert!(matches!(m.backward(&params, &batch), Err(Error::Config(_))));
    }

    #[test]
    fn duplicated_batch_gives_same_gradient() {
        let m = Model::mlp(3, 4, 2).unwrap();
        let params = m.init_params(11);
        let data = vec![vec![0.2, 0.4, 0.6], vec![0.9, 0.1, 0.0]];
        let single = Batch::new(rows(&data), vec![0, 1]).unwrap();
        let twice_rows = vec![&data[0][..], &data[0][..], &data[1][..], &data[1][..]];
        let double = Batch::new(twice_rows, vec![0, 0, 1, 1]).unwrap();
        let g1 = m.backward(&params, &single).unwrap();
        let g2 = m.backward(&params, &double).unwrap();
        for (a, b) in g1.iter().zip(g2.iter()) {
            assert!((a - b).abs() <= 1e-15 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn symmetric_data_gives_equal_bias_gradients() {
        // Zero weights, one example per class, features identical across
        // examples: each class's bias gradient is (1/C - 1/C) averaged.
        let m = Model::logistic(2, 3).unwrap();
        let params = ParamVector::zeros(m.param_count());
        let data = vec![vec![0.5, 0.5]; 3];
        let batch = Batch::new(rows(&data), vec![0, 1, 2]).unwrap();
        let g = m.backward(&params, &batch).unwrap();
        let bias = &g[6..];
        assert!(bias.iter().all(|&b| (b - bias[0]).abs() < 1e-15));
    }
}
