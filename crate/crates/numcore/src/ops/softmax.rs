use crate::error::{Error, Result};
use crate::scalar::Float;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

fn softmax_row<T: Float>(row: &[T], out: &mut Vec<T>) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let start = out.len();
    let mut total = T::zero();
    for &v in row {
        let e = (v - max).exp();
        total += e;
        out.push(e);
    }
    let inv = T::one() / total;
    out[start..].iter_mut().for_each(|v| *v *= inv);
}

impl<T: Float> Tape<T> {
    /// Softmax over the last axis.
    pub fn softmax(&self, x: &Var<T>) -> Result<Var<T>> {
        let Some(&k) = x.shape().last() else {
            return Err(Error::shape("softmax", "scalar input"));
        };
        let mut out = Vec::with_capacity(x.value().len());
        for row in x.data().chunks_exact(k) {
            softmax_row(row, &mut out);
        }
        let y = out.clone();
        let value = Tensor::from_parts(x.shape().to_vec(), out);
        Ok(self.record(value, &[x], move |g, _| {
            let mut gx = Vec::with_capacity(g.len());
            for (gr, yr) in g.chunks_exact(k).zip(y.chunks_exact(k)) {
                let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                gx.extend(gr.iter().zip(yr).map(|(&a, &b)| b * (a - dot)));
            }
            vec![Some(gx)]
        }))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    /// `logits` is `[N, K]`; every label must lie in `[0, K)`.
    pub fn cross_entropy(&self, logits: &Var<T>, labels: &[usize]) -> Result<Var<T>> {
        let s = logits.shape();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::shape("cross_entropy", format!("logits {s:?} with {} labels", labels.len())));
        }
        let (n, k) = (s[0], s[1]);
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
            return Err(Error::invalid("cross_entropy", format!("label {l} at position {i} outside [0, {k})")));
        }
        let mut probs = Vec::with_capacity(n * k);
        let mut total = 0f64;
        for (row, &l) in logits.data().chunks_exact(k).zip(labels) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            total += (lse - row[l]).to_f64_lossy();
            softmax_row(row, &mut probs);
        }
        let loss = T::from_f64_lossy(total / n as f64);
        let labels = labels.to_vec();
        Ok(self.record(Tensor::scalar(loss), &[logits], move |g, _| {
            let scale = g[0] / T::from_usize(n).unwrap();
            let mut gx = probs;
            for (row, &l) in gx.chunks_exact_mut(k).zip(&labels) {
                row[l] -= T::one();
                row.iter_mut().for_each(|v| *v *= scale);
            }
            vec![Some(gx)]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_uniform_probabilities() {
        let tape = Tape::<f64>::no_grad();
        let y = tape.softmax(&tape.constant(Tensor::zeros(&[2, 7]))).unwrap();
        assert!(y.data().iter().all(|&v| (v - 1.0 / 7.0).abs() < 1e-15));
    }

    #[test]
    fn zero_logits_loss_is_ln_k() {
        let tape = Tape::<f64>::no_grad();
        let loss = tape.cross_entropy(&tape.constant(Tensor::zeros(&[3, 10])), &[0, 5, 9]).unwrap();
        assert!((loss.value().item() - 10f64.ln()).abs() < 1e-15);
        assert!((loss.value().item() - 2.302585).abs() < 1e-6);
    }

    #[test]
    fn row_shift_does_not_change_loss() {
        let tape = Tape::<f64>::no_grad();
        let base = Tensor::from_fn(&[2, 4], |i| (i as f64 * 0.9).sin() * 3.0);
        let shifted = Tensor::from_fn(&[2, 4], |i| base.data()[i] + if i < 4 { 17.0 } else { -5.5 });
        let a = tape.cross_entropy(&tape.constant(base), &[1, 3]).unwrap();
        let b = tape.cross_entropy(&tape.constant(shifted), &[1, 3]).unwrap();
        assert!((a.value().item() - b.value().item()).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_label_rejected() {
        let tape = Tape::<f32>::no_grad();
        let logits = tape.constant(Tensor::zeros(&[2, 10]));
        assert!(tape.cross_entropy(&logits, &[3, 10]).is_err());
    }

    #[test]
    fn large_logits_stay_finite() {
        let tape = Tape::<f32>::no_grad();
        let y = tape.softmax(&tape.constant(Tensor::new(&[1, 3], vec![1000.0, 999.0, -1000.0]).unwrap())).unwrap();
        assert!(y.data().iter().all(|v| v.is_finite()));
        assert!((y.data().iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }
}
