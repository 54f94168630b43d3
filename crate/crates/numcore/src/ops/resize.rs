use crate::error::{Error, Result};
use crate::scalar::Float;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Source taps for one output index along one axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tap {
    pub lo: usize,
    pub hi: usize,
    /// Weight of `hi`; `lo` gets `1 - frac`.
    pub frac: f64,
}

/// Half-pixel-centre sampling positions: output index `i` reads source
/// coordinate `(i + 0.5) * src / dst - 0.5`, clamped to `[0, src - 1]`.
pub fn taps(src: usize, dst: usize) -> Vec<Tap> {
    (0..dst)
        .map(|i| {
            let x = ((i as f64 + 0.5) * src as f64) / dst as f64 - 0.5;
            let x = x.clamp(0.0, (src - 1) as f64);
            let lo = x.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            Tap { lo, hi, frac: x - lo as f64 }
        })
        .collect()
}

impl<T: Float> Tape<T> {
    /// Bilinear resize of the last two axes to `out_h x out_w`.
    ///
    /// Per output pixel: `top = a*(1-fx) + b*fx`, `bottom = c*(1-fx) + d*fx`,
    /// `out = top*(1-fy) + bottom*fy`, with taps from [`taps`].
    pub fn bilinear_resize(&self, x: &Var<T>, out_h: usize, out_w: usize) -> Result<Var<T>> {
        let s = x.shape();
        if s.len() < 2 {
            return Err(Error::shape("bilinear_resize", format!("need at least two axes, got {s:?}")));
        }
        if out_h == 0 || out_w == 0 {
            return Err(Error::invalid("bilinear_resize", "output extents must be positive"));
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        let ty = taps(h, out_h);
        let tx = taps(w, out_w);
        let wy: Vec<(T, T)> = ty.iter().map(|t| (T::from_f64_lossy(1.0 - t.frac), T::from_f64_lossy(t.frac))).collect();
        let wx: Vec<(T, T)> = tx.iter().map(|t| (T::from_f64_lossy(1.0 - t.frac), T::from_f64_lossy(t.frac))).collect();
        let mut out = Vec::with_capacity(x.value().len() / (h * w) * out_h * out_w);
        for plane in x.data().chunks_exact(h * w) {
            for (yt, &(ay, by)) in ty.iter().zip(&wy) {
                let r0 = &plane[yt.lo * w..(yt.lo + 1) * w];
                let r1 = &plane[yt.hi * w..(yt.hi + 1) * w];
                for (xt, &(ax, bx)) in tx.iter().zip(&wx) {
                    let top = r0[xt.lo] * ax + r0[xt.hi] * bx;
                    let bottom = r1[xt.lo] * ax + r1[xt.hi] * bx;
                    out.push(top * ay + bottom * by);
                }
            }
        }
        let mut shape = s.to_vec();
        let rank = shape.len();
        shape[rank - 2] = out_h;
        shape[rank - 1] = out_w;
        let planes = x.value().len() / (h * w);
        Ok(self.record(Tensor::from_parts(shape, out), &[x], move |g, _| {
            let mut gx = vec![T::zero(); planes * h * w];
            for (gp, dst) in g.chunks_exact(out_h * out_w).zip(gx.chunks_exact_mut(h * w)) {
                for (oy, (yt, &(ay, by))) in ty.iter().zip(&wy).enumerate() {
                    for (ox, (xt, &(ax, bx))) in tx.iter().zip(&wx).enumerate() {
                        let gv = gp[oy * out_w + ox];
                        let (gt, gb) = (gv * ay, gv * by);
                        dst[yt.lo * w + xt.lo] += gt * ax;
                        dst[yt.lo * w + xt.hi] += gt * bx;
                        dst[yt.hi * w + xt.lo] += gb * ax;
                        dst[yt.hi * w + xt.hi] += gb * bx;
                    }
                }
            }
            vec![Some(gx)]
        }))
    }
}
