use crate::error::{Error, Result};
use crate::scalar::Float;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Gather `src` (of `shape`) into the axis order `perm`.
fn permute_data<T: Float>(src: &[T], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<T>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let step: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = src.len();
    let mut out = Vec::with_capacity(n);
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        out.push(src[off]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += step[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= step[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    (out_shape, out)
}

impl<T: Float> Tape<T> {
    pub fn reshape(&self, x: &Var<T>, shape: &[usize]) -> Result<Var<T>> {
        let n: usize = shape.iter().product();
        if n != x.value().len() || shape.contains(&0) {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", x.shape())));
        }
        let out = Tensor::from_parts(shape.to_vec(), x.data().to_vec());
        Ok(self.record(out, &[x], |g, _| vec![Some(g.to_vec())]))
    }

    pub fn permute(&self, x: &Var<T>, perm: &[usize]) -> Result<Var<T>> {
        let rank = x.shape().len();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::invalid("permute", format!("{perm:?} is not a permutation of rank {rank}")));
        }
        let (shape, data) = permute_data(x.data(), x.shape(), perm);
        let mut inverse = vec![0; rank];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let out_shape = shape.clone();
        let out = Tensor::from_parts(shape, data);
        Ok(self.record(out, &[x], move |g, _| {
            vec![Some(permute_data(g, &out_shape, &inverse).1)]
        }))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(&self, parts: &[&Var<T>], axis: usize) -> Result<Var<T>> {
        let Some(first) = parts.first() else {
            return Err(Error::invalid("concat", "no inputs"));
        };
        let base = first.shape();
        if axis >= base.len() {
            return Err(Error::invalid("concat", format!("axis {axis} out of range for {base:?}")));
        }
        for p in parts {
            let s = p.shape();
            if s.len() != base.len() || s.iter().zip(base).enumerate().any(|(i, (a, b))| i != axis && a != b) {
                return Err(Error::shape("concat", format!("{s:?} incompatible with {base:?} on axis {axis}")));
            }
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = base.to_vec();
        shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
        let out = Tensor::from_parts(shape, data);
        Ok(self.record(out, parts, move |g, need| {
            let mut offset = 0;
            let mut res = Vec::with_capacity(widths.len());
            for (i, &w) in widths.iter().enumerate() {
                res.push(need[i].then(|| {
                    let mut gi = Vec::with_capacity(outer * w);
                    for o in 0..outer {
                        let start = o * total + offset;
                        gi.extend_from_slice(&g[start..start + w]);
                    }
                    gi
                }));
                offset += w;
            }
            res
        }))
    }

    /// `len` consecutive indices of `axis` starting at `start`.
    pub fn slice(&self, x: &Var<T>, axis: usize, start: usize, len: usize) -> Result<Var<T>> {
        let shape = x.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::invalid(
                "slice",
                format!("[{start}, {}) on axis {axis} of {shape:?}", start + len),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis] * inner;
        let w = len * inner;
        let mut data = Vec::with_capacity(outer * w);
        for o in 0..outer {
            let s = o * full + start * inner;
            data.extend_from_slice(&x.data()[s..s + w]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let out = Tensor::from_parts(out_shape, data);
        Ok(self.record(out, &[x], move |g, _| {
            let mut gx = vec![T::zero(); outer * full];
            for o in 0..outer {
                let s = o * full + start * inner;
                gx[s..s + w].copy_from_slice(&g[o * w..(o + 1) * w]);
            }
            vec![Some(gx)]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_matches_index_formula() {
        let tape = Tape::<f64>::no_grad();
        let x = tape.constant(Tensor::from_fn(&[2, 3, 4], |i| i as f64));
        let y = tape.permute(&x, &[2, 0, 1]).unwrap();
        assert_eq!(y.shape(), &[4, 2, 3]);
        for a in 0..2 {
            for b in 0..3 {
                for c in 0..4 {
                    assert_eq!(y.value().at(&[c, a, b]), x.value().at(&[a, b, c]));
                }
            }
        }
    }

    #[test]
    fn concat_then_slice_recovers_parts() {
        let tape = Tape::<f64>::no_grad();
        let a = tape.constant(Tensor::from_fn(&[2, 1, 3], |i| i as f64));
        let b = tape.constant(Tensor::from_fn(&[2, 2, 3], |i| 100.0 + i as f64));
        let c = tape.concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[2, 3, 3]);
        let back = tape.slice(&c, 1, 1, 2).unwrap();
        assert_eq!(back.value(), b.value());
    }

    #[test]
    fn rejects_bad_permutation() {
        let tape = Tape::<f32>::no_grad();
        let x = tape.constant(Tensor::zeros(&[2, 2]));
        assert!(tape.permute(&x, &[0, 0]).is_err());
        assert!(tape.reshape(&x, &[3]).is_err());
    }
}
