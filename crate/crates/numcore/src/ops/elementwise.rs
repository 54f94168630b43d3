use crate::error::{Error, Result};
use crate::scalar::Float;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

fn same_shape<T: Float>(op: &'static str, a: &Var<T>, b: &Var<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

impl<T: Float> Tape<T> {
    pub fn add(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        same_shape("add", a, b)?;
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::from_parts(a.shape().to_vec(), data);
        Ok(self.record(out, &[a, b], |g, need| {
            vec![need[0].then(|| g.to_vec()), need[1].then(|| g.to_vec())]
        }))
    }

    pub fn sub(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        same_shape("sub", a, b)?;
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x - y).collect();
        let out = Tensor::from_parts(a.shape().to_vec(), data);
        Ok(self.record(out, &[a, b], |g, need| {
            vec![need[0].then(|| g.to_vec()), need[1].then(|| g.iter().map(|&v| -v).collect())]
        }))
    }

    pub fn mul(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        same_shape("mul", a, b)?;
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::from_parts(a.shape().to_vec(), data);
        let (av, bv) = (a.shared(), b.shared());
        Ok(self.record(out, &[a, b], move |g, need| {
            let ga = need[0].then(|| g.iter().zip(bv.data()).map(|(&g, &y)| g * y).collect());
            let gb = need[1].then(|| g.iter().zip(av.data()).map(|(&g, &x)| g * x).collect());
            vec![ga, gb]
        }))
    }

    /// `a + b` where `b`'s shape is a trailing suffix of `a`'s shape; `b` is
    /// repeated over the leading axes.
    pub fn add_broadcast(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let (sa, sb) = (a.shape(), b.shape());
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::shape("add_broadcast", format!("{sb:?} is not a suffix of {sa:?}")));
        }
        let inner = b.value().len();
        let mut data = a.data().to_vec();
        for chunk in data.chunks_exact_mut(inner) {
            for (x, &y) in chunk.iter_mut().zip(b.data()) {
                *x += y;
            }
        }
        let out = Tensor::from_parts(sa.to_vec(), data);
        Ok(self.record(out, &[a, b], move |g, need| {
            let gb = need[1].then(|| {
                let mut acc = vec![T::zero(); inner];
                for chunk in g.chunks_exact(inner) {
                    for (s, &v) in acc.iter_mut().zip(chunk) {
                        *s += v;
                    }
                }
                acc
            });
            vec![need[0].then(|| g.to_vec()), gb]
        }))
    }

    /// Repeat `x` along a new leading axis of extent `n`.
    pub fn expand_leading(&self, x: &Var<T>, n: usize) -> Result<Var<T>> {
        if n == 0 {
            return Err(Error::invalid("expand_leading", "extent must be positive"));
        }
        let inner = x.value().len();
        let mut data = Vec::with_capacity(n * inner);
        for _ in 0..n {
            data.extend_from_slice(x.data());
        }
        let mut shape = vec![n];
        shape.extend_from_slice(x.shape());
        let out = Tensor::from_parts(shape, data);
        Ok(self.record(out, &[x], move |g, _| {
            let mut acc = vec![T::zero(); inner];
            for chunk in g.chunks_exact(inner) {
                for (s, &v) in acc.iter_mut().zip(chunk) {
                    *s += v;
                }
            }
            vec![Some(acc)]
        }))
    }

    /// Multiply `x` by `s[c]` along `axis`, where `s` has one entry per index
    /// of that axis.
    pub fn channel_scale(&self, x: &Var<T>, s: &Var<T>, axis: usize) -> Result<Var<T>> {
        let shape = x.shape();
        if axis >= shape.len() || s.shape() != [shape[axis]] {
            return Err(Error::shape(
                "channel_scale",
                format!("scale {:?} does not match axis {axis} of {:?}", s.shape(), shape),
            ));
        }
        let c = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut data = x.data().to_vec();
        for (i, chunk) in data.chunks_exact_mut(inner).enumerate() {
            let f = s.data()[i % c];
            chunk.iter_mut().for_each(|v| *v *= f);
        }
        let out = Tensor::from_parts(shape.to_vec(), data);
        let (xv, sv) = (x.shared(), s.shared());
        Ok(self.record(out, &[x, s], move |g, need| {
            let gx = need[0].then(|| {
                let mut gx = g.to_vec();
                for (i, chunk) in gx.chunks_exact_mut(inner).enumerate() {
                    let f = sv.data()[i % c];
                    chunk.iter_mut().for_each(|v| *v *= f);
                }
                gx
            });
            let gs = need[1].then(|| {
                let mut gs = vec![T::zero(); c];
                for (i, (gc, xc)) in g.chunks_exact(inner).zip(xv.data().chunks_exact(inner)).enumerate() {
                    gs[i % c] += gc.iter().zip(xc).map(|(&a, &b)| a * b).sum::<T>();
                }
                gs
            });
            vec![gx, gs]
        }))
    }

    pub fn scale(&self, x: &Var<T>, factor: T) -> Var<T> {
        let out = x.value().map(|v| v * factor);
        self.record(out, &[x], move |g, _| vec![Some(g.iter().map(|&v| v * factor).collect())])
    }

    pub fn square(&self, x: &Var<T>) -> Var<T> {
        let out = x.value().map(|v| v * v);
        let xv = x.shared();
        self.record(out, &[x], move |g, _| {
            let two = T::one() + T::one();
            vec![Some(g.iter().zip(xv.data()).map(|(&g, &x)| two * x * g).collect())]
        })
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&self, x: &Var<T>) -> Var<T> {
        let n = x.value().len();
        let out = Tensor::scalar(x.value().sum());
        self.record(out, &[x], move |g, _| vec![Some(vec![g[0]; n])])
    }

    pub fn mean(&self, x: &Var<T>) -> Var<T> {
        let n = x.value().len();
        let inv = T::one() / T::from_usize(n).unwrap();
        let out = Tensor::scalar(x.value().sum() * inv);
        self.record(out, &[x], move |g, _| vec![Some(vec![g[0] * inv; n])])
    }

    pub fn relu(&self, x: &Var<T>) -> Var<T> {
        let out = x.value().map(|v| if v > T::zero() { v } else { T::zero() });
        let xv = x.shared();
        self.record(out, &[x], move |g, _| {
            let gx = g
                .iter()
                .zip(xv.data())
                .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                .collect();
            vec![Some(gx)]
        })
    }

    pub fn sigmoid(&self, x: &Var<T>) -> Var<T> {
        let out = x.value().map(sigmoid);
        let yv: Vec<T> = out.data().to_vec();
        self.record(out, &[x], move |g, _| {
            vec![Some(g.iter().zip(&yv).map(|(&g, &y)| g * y * (T::one() - y)).collect())]
        })
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&self, x: &Var<T>) -> Var<T> {
        let half = T::from_f64(0.5).unwrap();
        let inv_sqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2).unwrap();
        let out = x.value().map(|v| half * v * (T::one() + (v * inv_sqrt2).erf()));
        let xv = x.shared();
        self.record(out, &[x], move |g, _| {
            let inv_sqrt_2pi = T::from_f64(0.398_942_280_401_432_7).unwrap();
            let gx = g
                .iter()
                .zip(xv.data())
                .map(|(&g, &x)| {
                    let cdf = half * (T::one() + (x * inv_sqrt2).erf());
                    let pdf = inv_sqrt_2pi * (-half * x * x).exp();
                    g * (cdf + x * pdf)
                })
                .collect();
            vec![Some(gx)]
        })
    }
}

pub(crate) fn sigmoid<T: Float>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_identity_abs() {
        let tape = Tape::<f64>::no_grad();
        let x = Tensor::from_fn(&[17], |i| (i as f64 - 8.3) * 0.7);
        let pos = tape.relu(&tape.constant(x.clone()));
        let neg = tape.relu(&tape.constant(x.map(|v| -v)));
        let s = tape.add(&pos, &neg).unwrap();
        for (a, b) in s.data().iter().zip(x.data()) {
            assert_eq!(*a, b.abs());
        }
    }

    #[test]
    fn sum_gradient_is_ones() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(&[2, 3, 4], |i| i as f64), true);
        let loss = tape.sum(&x);
        let g = tape.backward(&loss).unwrap().get(&x).unwrap();
        assert!(g.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn half_sum_of_squares_gradient_is_input() {
        let tape = Tape::<f64>::new();
        let x0 = Tensor::from_fn(&[5, 2], |i| (i as f64).cos());
        let x = tape.leaf(x0.clone(), true);
        let loss = tape.scale(&tape.sum(&tape.mul(&x, &x).unwrap()), 0.5);
        let g = tape.backward(&loss).unwrap().get(&x).unwrap();
        assert!(g.max_abs_diff(&x0) < 1e-15);
    }

    #[test]
    fn add_broadcast_rejects_non_suffix() {
        let tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3, 4]));
        let b = tape.constant(Tensor::zeros(&[3]));
        assert!(tape.add_broadcast(&a, &b).is_err());
        let b = tape.constant(Tensor::zeros(&[3, 4]));
        assert_eq!(tape.add_broadcast(&a, &b).unwrap().shape(), &[2, 3, 4]);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-1000.0f64), 0.0);
        assert_eq!(sigmoid(1000.0f64), 1.0);
        assert_eq!(sigmoid(0.0f32), 0.5);
    }
}
