use crate::error::{Error, Result};
use crate::scalar::Float;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Statistics source for [`Tape::batch_norm2d`].
pub enum BatchNormMode<'a, T> {
    /// Normalize with the statistics of the current batch.
    Train,
    /// Normalize with stored running statistics.
    Eval { mean: &'a [T], var: &'a [T] },
}

/// Per-channel statistics of a training batch; `var` is the unbiased
/// estimate, as used for running-variance updates.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

const LANES: usize = 8;

/// Sum of `f(v)` with independent partial sums so the loop vectorizes.
fn lane_sum<T: Float>(xs: &[T], f: impl Fn(T) -> f64) -> f64 {
    let mut acc = [0f64; LANES];
    let chunks = xs.chunks_exact(LANES);
    let tail: f64 = chunks.remainder().iter().map(|&v| f(v)).sum();
    for ch in chunks {
        for l in 0..LANES {
            acc[l] += f(ch[l]);
        }
    }
    acc.iter().sum::<f64>() + tail
}

impl<T: Float> Tape<T> {
    /// Batch normalization over `[N, C, H, W]` with per-channel affine
    /// `gamma`, `beta`. Returns the batch statistics in training mode.
    pub fn batch_norm2d(
        &self,
        x: &Var<T>,
        gamma: &Var<T>,
        beta: &Var<T>,
        mode: BatchNormMode<'_, T>,
        eps: f64,
    ) -> Result<(Var<T>, Option<BatchStats<T>>)> {
        let s = x.shape();
        if s.len() != 4 {
            return Err(Error::shape("batch_norm2d", format!("expected [N,C,H,W], got {s:?}")));
        }
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(Error::shape(
                "batch_norm2d",
                format!("affine {:?}/{:?} for {c} channels", gamma.shape(), beta.shape()),
            ));
        }
        let m = n * hw;
        let (mean, var_biased, stats) = match mode {
            BatchNormMode::Train => {
                if m < 2 {
                    return Err(Error::invalid("batch_norm2d", "training mode needs more than one value per channel"));
                }
                let mut mean = vec![0f64; c];
                for (i, plane) in x.data().chunks_exact(hw).enumerate() {
                    mean[i % c] += lane_sum(plane, |v| v.to_f64_lossy());
                }
                mean.iter_mut().for_each(|v| *v /= m as f64);
                let mut var = vec![0f64; c];
                for (i, plane) in x.data().chunks_exact(hw).enumerate() {
                    let mu = mean[i % c];
                    var[i % c] += lane_sum(plane, |v| {
                        let d = v.to_f64_lossy() - mu;
                        d * d
                    });
                }
                var.iter_mut().for_each(|v| *v /= m as f64);
                let unbiased = var.iter().map(|v| T::from_f64_lossy(v * m as f64 / (m - 1) as f64)).collect();
                let stats = BatchStats { mean: mean.iter().map(|&v| T::from_f64_lossy(v)).collect(), var: unbiased };
                (mean, var, Some(stats))
            }
            BatchNormMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::shape("batch_norm2d", format!("running stats of length {} for {c} channels", mean.len())));
                }
                (mean.iter().map(|v| v.to_f64_lossy()).collect(), var.iter().map(|v| v.to_f64_lossy()).collect(), None)
            }
        };
        let training = stats.is_some();
        let inv: Vec<T> = var_biased.iter().map(|&v| T::from_f64_lossy(1.0 / (v + eps).sqrt())).collect();
        let mu: Vec<T> = mean.iter().map(|&v| T::from_f64_lossy(v)).collect();
        let mut xhat = vec![T::zero(); x.value().len()];
        let mut out = vec![T::zero(); x.value().len()];
        let planes = x.data().chunks_exact(hw).zip(xhat.chunks_exact_mut(hw)).zip(out.chunks_exact_mut(hw));
        for (i, ((plane, xp), op)) in planes.enumerate() {
            let ch = i % c;
            let (mc, ic, gc, bc) = (mu[ch], inv[ch], gamma.data()[ch], beta.data()[ch]);
            for ((&v, xh), o) in plane.iter().zip(xp.iter_mut()).zip(op.iter_mut()) {
                *xh = (v - mc) * ic;
                *o = gc * *xh + bc;
            }
        }
        let gv = gamma.shared();
        let value = Tensor::from_parts(s.to_vec(), out);
        let var = self.record(value, &[x, gamma, beta], move |g, need| {
            let mut dbeta = vec![T::zero(); c];
            let mut dgamma = vec![T::zero(); c];
            for (i, (gp, xp)) in g.chunks_exact(hw).zip(xhat.chunks_exact(hw)).enumerate() {
                let ch = i % c;
                dbeta[ch] += T::from_f64_lossy(lane_sum(gp, |v| v.to_f64_lossy()));
                let mut sg = [0f64; LANES];
                let (gb, gt) = gp.split_at(gp.len() - gp.len() % LANES);
                let xb = &xp[..gb.len()];
                for (gc, xc) in gb.chunks_exact(LANES).zip(xb.chunks_exact(LANES)) {
                    for l in 0..LANES {
                        sg[l] += (gc[l] * xc[l]).to_f64_lossy();
                    }
                }
                let tail: f64 = gt.iter().zip(&xp[gb.len()..]).map(|(&a, &b)| (a * b).to_f64_lossy()).sum();
                dgamma[ch] += T::from_f64_lossy(sg.iter().sum::<f64>() + tail);
            }
            let gx = need[0].then(|| {
                let mut gx = vec![T::zero(); g.len()];
                let mf = T::from_usize(m).unwrap();
                let planes = g.chunks_exact(hw).zip(xhat.chunks_exact(hw)).zip(gx.chunks_exact_mut(hw));
                for (i, ((gp, xp), op)) in planes.enumerate() {
                    let ch = i % c;
                    let scale = gv.data()[ch] * inv[ch];
                    if training {
                        let k = scale / mf;
                        let (db, dg) = (dbeta[ch], dgamma[ch]);
                        for ((&gv, &xh), o) in gp.iter().zip(xp).zip(op.iter_mut()) {
                            *o = k * (mf * gv - db - xh * dg);
                        }
                    } else {
                        for (&gv, o) in gp.iter().zip(op.iter_mut()) {
                            *o = gv * scale;
                        }
                    }
                }
                gx
            });
            vec![gx, need[1].then_some(dgamma), need[2].then_some(dbeta)]
        });
        Ok((var, stats))
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&self, x: &Var<T>, gamma: &Var<T>, beta: &Var<T>, eps: f64) -> Result<Var<T>> {
        let s = x.shape();
        let Some(&d) = s.last() else {
            return Err(Error::shape("layer_norm", "scalar input"));
        };
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(Error::shape("layer_norm", format!("affine {:?}/{:?} for width {d}", gamma.shape(), beta.shape())));
        }
        let rows = x.value().len() / d;
        let mut xhat = Vec::with_capacity(x.value().len());
        let mut inv = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(x.value().len());
        for row in x.data().chunks_exact(d) {
            let mean = row.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v.to_f64_lossy() - mean).powi(2)).sum::<f64>() / d as f64;
            let iv = T::from_f64_lossy(1.0 / (var + eps).sqrt());
            let mu = T::from_f64_lossy(mean);
            inv.push(iv);
            for ((&v, &gm), &bt) in row.iter().zip(gamma.data()).zip(beta.data()) {
                let xh = (v - mu) * iv;
                xhat.push(xh);
                out.push(gm * xh + bt);
            }
        }
        let gv = gamma.shared();
        let value = Tensor::from_parts(s.to_vec(), out);
        Ok(self.record(value, &[x, gamma, beta], move |g, need| {
            let mut dgamma = vec![T::zero(); d];
            let mut dbeta = vec![T::zero(); d];
            for (gr, xr) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                for j in 0..d {
                    dgamma[j] += gr[j] * xr[j];
                    dbeta[j] += gr[j];
                }
            }
            let gx = need[0].then(|| {
                let df = T::from_usize(d).unwrap();
                let mut gx = Vec::with_capacity(g.len());
                let mut dxh = vec![T::zero(); d];
                for ((gr, xr), &iv) in g.chunks_exact(d).zip(xhat.chunks_exact(d)).zip(&inv) {
                    let mut s1 = T::zero();
                    let mut s2 = T::zero();
                    for j in 0..d {
                        dxh[j] = gr[j] * gv.data()[j];
                        s1 += dxh[j];
                        s2 += dxh[j] * xr[j];
                    }
                    let k = iv / df;
                    for j in 0..d {
                        gx.push(k * (df * dxh[j] - s1 - xr[j] * s2));
                    }
                }
                gx
            });
            vec![gx, need[1].then_some(dgamma), need[2].then_some(dbeta)]
        }))
    }
}
