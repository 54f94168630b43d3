use crate::error::{Error, Result};
use crate::scalar::{gemm, Float, MatRef};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

fn mat<T: Float>(data: &[T], rows: usize, cols: usize, transposed: bool) -> MatRef<'_, T> {
    if transposed {
        MatRef::transposed(data, rows, cols)
    } else {
        MatRef::new(data, rows, cols)
    }
}

impl<T: Float> Tape<T> {
    /// Batched matrix product over the last two axes.
    ///
    /// `a` is `[.., m, k]` (or `[.., k, m]` with `trans_a`), `b` is
    /// `[.., k, n]` (or `[.., n, k]` with `trans_b`). Leading axes must match,
    /// or `b` may be rank 2 and is then shared by every batch entry.
    pub fn matmul(&self, a: &Var<T>, b: &Var<T>, trans_a: bool, trans_b: bool) -> Result<Var<T>> {
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::shape("matmul", format!("rank < 2: {sa:?} x {sb:?}")));
        }
        let lead = &sa[..sa.len() - 2];
        let shared_b = sb.len() == 2 && !lead.is_empty();
        if !shared_b && sb[..sb.len() - 2] != *lead {
            return Err(Error::shape("matmul", format!("batch axes differ: {sa:?} x {sb:?}")));
        }
        let (ar, ac) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (br, bc) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let (m, k) = if trans_a { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner extents {k} vs {k2} ({sa:?}{} x {sb:?}{})", if trans_a { "ᵀ" } else { "" }, if trans_b { "ᵀ" } else { "" }),
            ));
        }
        let batch: usize = lead.iter().product();
        let (asz, bsz, csz) = (m * k, k * n, m * n);
        let mut out = vec![T::zero(); batch * csz];
        for i in 0..batch {
            let bo = if shared_b { 0 } else { i * bsz };
            gemm(
                T::one(),
                mat(&a.data()[i * asz..(i + 1) * asz], m, k, trans_a),
                mat(&b.data()[bo..bo + bsz], k, n, trans_b),
                T::zero(),
                &mut out[i * csz..(i + 1) * csz],
            );
        }
        let mut shape = lead.to_vec();
        shape.extend_from_slice(&[m, n]);
        let (av, bv) = (a.shared(), b.shared());
        Ok(self.record(Tensor::from_parts(shape, out), &[a, b], move |g, need| {
            let ga = need[0].then(|| {
                let mut ga = vec![T::zero(); batch * asz];
                for i in 0..batch {
                    let bo = if shared_b { 0 } else { i * bsz };
                    let bm = &bv.data()[bo..bo + bsz];
                    let gc = &g[i * csz..(i + 1) * csz];
                    let dst = &mut ga[i * asz..(i + 1) * asz];
                    if trans_a {
                        // dA[k,m] = op(B) dCᵀ
                        gemm(T::one(), mat(bm, k, n, trans_b), MatRef::transposed(gc, n, m), T::zero(), dst);
                    } else {
                        // dA[m,k] = dC op(B)ᵀ
                        gemm(T::one(), MatRef::new(gc, m, n), mat(bm, n, k, !trans_b), T::zero(), dst);
                    }
                }
                ga
            });
            let gb = need[1].then(|| {
                let mut gbuf = vec![T::zero(); if shared_b { bsz } else { batch * bsz }];
                for i in 0..batch {
                    let am = &av.data()[i * asz..(i + 1) * asz];
                    let gc = &g[i * csz..(i + 1) * csz];
                    let (dst, beta) = if shared_b {
                        (&mut gbuf[..], if i == 0 { T::zero() } else { T::one() })
                    } else {
                        (&mut gbuf[i * bsz..(i + 1) * bsz], T::zero())
                    };
                    if trans_b {
                        // dB[n,k] = dCᵀ op(A)
                        gemm(T::one(), MatRef::transposed(gc, n, m), mat(am, m, k, trans_a), beta, dst);
                    } else {
                        // dB[k,n] = op(A)ᵀ dC
                        gemm(T::one(), mat(am, k, m, !trans_a), MatRef::new(gc, m, n), beta, dst);
                    }
                }
                gbuf
            });
            vec![ga, gb]
        }))
    }

    /// `x Wᵀ + b` over the last axis. `weight` is `[out, in]`.
    pub fn linear(&self, x: &Var<T>, weight: &Var<T>, bias: Option<&Var<T>>) -> Result<Var<T>> {
        let sx = x.shape();
        let sw = weight.shape();
        if sx.is_empty() || sw.len() != 2 || sw[1] != sx[sx.len() - 1] {
            return Err(Error::shape("linear", format!("input {sx:?} with weight {sw:?}")));
        }
        let (fo, fi) = (sw[0], sw[1]);
        if let Some(b) = bias {
            if b.shape() != [fo] {
                return Err(Error::shape("linear", format!("bias {:?} for {fo} outputs", b.shape())));
            }
        }
        let rows = x.value().len() / fi;
        let mut out = vec![T::zero(); rows * fo];
        if let Some(b) = bias {
            for row in out.chunks_exact_mut(fo) {
                row.copy_from_slice(b.data());
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        gemm(T::one(), MatRef::new(x.data(), rows, fi), MatRef::transposed(weight.data(), fi, fo), beta, &mut out);
        let mut shape = sx.to_vec();
        *shape.last_mut().unwrap() = fo;
        let (xv, wv) = (x.shared(), weight.shared());
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        Ok(self.record(Tensor::from_parts(shape, out), &inputs, move |g, need| {
            let gx = need[0].then(|| {
                let mut gx = vec![T::zero(); rows * fi];
                gemm(T::one(), MatRef::new(g, rows, fo), MatRef::new(wv.data(), fo, fi), T::zero(), &mut gx);
                gx
            });
            let gw = need[1].then(|| {
                let mut gw = vec![T::zero(); fo * fi];
                gemm(T::one(), MatRef::transposed(g, fo, rows), MatRef::new(xv.data(), rows, fi), T::zero(), &mut gw);
                gw
            });
            let mut res = vec![gx, gw];
            if need.len() == 3 {
                res.push(need[2].then(|| {
                    let mut gb = vec![T::zero(); fo];
                    for row in g.chunks_exact(fo) {
                        for (s, &v) in gb.iter_mut().zip(row) {
                            *s += v;
                        }
                    }
                    gb
                }));
            }
            res
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_matches_loops() {
        let tape = Tape::<f64>::no_grad();
        let x = tape.constant(Tensor::from_fn(&[3, 4], |i| (i as f64 * 0.37).sin()));
        let w = tape.constant(Tensor::from_fn(&[2, 4], |i| (i as f64 * 0.11).cos()));
        let b = tape.constant(Tensor::new(&[2], vec![0.5, -1.0]).unwrap());
        let y = tape.linear(&x, &w, Some(&b)).unwrap();
        for r in 0..3 {
            for o in 0..2 {
                let want: f64 = (0..4).map(|i| x.value().at(&[r, i]) * w.value().at(&[o, i])).sum::<f64>() + b.data()[o];
                assert!((y.value().at(&[r, o]) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let tape = Tape::<f32>::no_grad();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[4, 2]));
        assert!(tape.matmul(&a, &b, false, false).is_err());
        assert_eq!(tape.matmul(&a, &b, false, true).unwrap_err().to_string().contains("inner"), true);
        assert_eq!(tape.matmul(&a, &b, true, true).unwrap().shape(), &[3, 4]);
    }
}
