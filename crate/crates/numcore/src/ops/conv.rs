use crate::error::{Error, Result};
use crate::scalar::{gemm, Float, MatRef};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Upper bound on the im2col buffer, in elements.
const MAX_COLS: usize = 1 << 22;

#[derive(Clone, Copy, Debug)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    /// Output columns `[lo, hi)` whose input column `ox*stride + kj - pad` lies inside the image.
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let (s, pad, w) = (self.stride, self.pad as isize, self.w as isize);
        let off = kj as isize - pad;
        let lo = if off >= 0 { 0 } else { ((-off) as usize).div_ceil(s) };
        let hi_excl = w - off; // need ox*s < w - off
        let hi = if hi_excl <= 0 { 0 } else { (hi_excl as usize).div_ceil(s).min(self.wo) };
        (lo.min(hi), hi)
    }
}

/// Unfold one `[C,H,W]` sample into rows of `cols` (row stride `ld`) starting at column `col_off`.
fn im2col<T: Float>(x: &[T], g: &Geometry, cols: &mut [T], ld: usize, col_off: usize) {
    let p = g.p();
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * ld + col_off..row * ld + col_off + p];
                let (lo, hi) = g.valid_cols(kj);
                for oy in 0..g.ho {
                    let drow = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize || lo >= hi {
                        drow.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    drow[..lo].fill(T::zero());
                    drow[hi..].fill(T::zero());
                    if g.stride == 1 {
                        let s0 = lo + kj - g.pad;
                        drow[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                    } else {
                        for ox in lo..hi {
                            drow[ox] = src[ox * g.stride + kj - g.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into a `[C,H,W]` sample.
fn col2im<T: Float>(cols: &[T], g: &Geometry, ld: usize, col_off: usize, dx: &mut [T]) {
    let p = g.p();
    for ci in 0..g.c {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * ld + col_off..row * ld + col_off + p];
                let (lo, hi) = g.valid_cols(kj);
                if lo >= hi {
                    continue;
                }
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let drow = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let srow = &src[oy * g.wo..(oy + 1) * g.wo];
                    if g.stride == 1 {
                        let d0 = lo + kj - g.pad;
                        for (d, &v) in drow[d0..d0 + (hi - lo)].iter_mut().zip(&srow[lo..hi]) {
                            *d += v;
                        }
                    } else {
                        for ox in lo..hi {
                            drow[ox * g.stride + kj - g.pad] += srow[ox];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Float> Tape<T> {
    /// 2-D cross-correlation with zero padding.
    ///
    /// `x` is `[N, Cin, H, W]`, `weight` is `[Cout, Cin, kh, kw]`.
    pub fn conv2d(
        &self,
        x: &Var<T>,
        weight: &Var<T>,
        bias: Option<&Var<T>>,
        stride: usize,
        padding: usize,
    ) -> Result<Var<T>> {
        let (sx, sw) = (x.shape(), weight.shape());
        if sx.len() != 4 || sw.len() != 4 {
            return Err(Error::shape("conv2d", format!("expected rank-4 input and weight, got {sx:?} and {sw:?}")));
        }
        if sx[1] != sw[1] {
            return Err(Error::shape(
                "conv2d",
                format!("input has {} channels but weight {sw:?} expects {}", sx[1], sw[1]),
            ));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be at least 1"));
        }
        let (n, cin, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let (cout, kh, kw) = (sw[0], sw[2], sw[3]);
        if kh > h + 2 * padding || kw > w + 2 * padding {
            return Err(Error::shape("conv2d", format!("kernel {kh}x{kw} larger than padded input {h}x{w} (pad {padding})")));
        }
        if let Some(b) = bias {
            if b.shape() != [cout] {
                return Err(Error::shape("conv2d", format!("bias {:?} for {cout} output channels", b.shape())));
            }
        }
        let ho = (h + 2 * padding - kh) / stride + 1;
        let wo = (w + 2 * padding - kw) / stride + 1;
        let geo = Geometry { c: cin, h, w, kh, kw, stride, pad: padding, ho, wo };
        let (k, p) = (geo.k(), geo.p());
        let nb = (MAX_COLS / (k * p).max(1)).clamp(1, n);
        let in_sz = cin * h * w;
        let out_sz = cout * p;

        let mut out = vec![T::zero(); n * out_sz];
        let mut cols = vec![T::zero(); k * nb * p];
        let mut tmp = vec![T::zero(); cout * nb * p];
        for start in (0..n).step_by(nb) {
            let cnt = nb.min(n - start);
            let ld = cnt * p;
            for s in 0..cnt {
                let xs = &x.data()[(start + s) * in_sz..(start + s + 1) * in_sz];
                im2col(xs, &geo, &mut cols, ld, s * p);
            }
            gemm(T::one(), MatRef::new(weight.data(), cout, k), MatRef::new(&cols[..k * ld], k, ld), T::zero(), &mut tmp[..cout * ld]);
            for s in 0..cnt {
                let dst = &mut out[(start + s) * out_sz..(start + s + 1) * out_sz];
                for co in 0..cout {
                    let src = &tmp[co * ld + s * p..co * ld + (s + 1) * p];
                    let d = &mut dst[co * p..(co + 1) * p];
                    match bias {
                        Some(b) => {
                            let bv = b.data()[co];
                            for (o, &v) in d.iter_mut().zip(src) {
                                *o = v + bv;
                            }
                        }
                        None => d.copy_from_slice(src),
                    }
                }
            }
        }
        drop(cols);
        drop(tmp);

        let (xv, wv) = (x.shared(), weight.shared());
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        let value = Tensor::from_parts(vec![n, cout, ho, wo], out);
        Ok(self.record(value, &inputs, move |g, need| {
            let (need_x, need_w) = (need[0], need[1]);
            let mut gx = need_x.then(|| vec![T::zero(); n * in_sz]);
            let mut gw = need_w.then(|| vec![T::zero(); cout * k]);
            let mut cols = vec![T::zero(); k * nb * p];
            let mut gtmp = vec![T::zero(); cout * nb * p];
            for start in (0..n).step_by(nb) {
                let cnt = nb.min(n - start);
                let ld = cnt * p;
                for s in 0..cnt {
                    let src = &g[(start + s) * out_sz..(start + s + 1) * out_sz];
                    for co in 0..cout {
                        gtmp[co * ld + s * p..co * ld + (s + 1) * p].copy_from_slice(&src[co * p..(co + 1) * p]);
                    }
                }
                if let Some(gw) = gw.as_mut() {
                    for s in 0..cnt {
                        let xs = &xv.data()[(start + s) * in_sz..(start + s + 1) * in_sz];
                        im2col(xs, &geo, &mut cols, ld, s * p);
                    }
                    gemm(T::one(), MatRef::new(&gtmp[..cout * ld], cout, ld), MatRef::transposed(&cols[..k * ld], ld, k), T::one(), gw);
                }
                if let Some(gx) = gx.as_mut() {
                    gemm(T::one(), MatRef::transposed(wv.data(), k, cout), MatRef::new(&gtmp[..cout * ld], cout, ld), T::zero(), &mut cols[..k * ld]);
                    for s in 0..cnt {
                        col2im(&cols, &geo, ld, s * p, &mut gx[(start + s) * in_sz..(start + s + 1) * in_sz]);
                    }
                }
            }
            let mut res = vec![gx, gw];
            if need.len() == 3 {
                res.push(need[2].then(|| {
                    let mut gb = vec![T::zero(); cout];
                    for sample in g.chunks_exact(out_sz) {
                        for (co, plane) in sample.chunks_exact(p).enumerate() {
                            gb[co] += plane.iter().copied().sum::<T>();
                        }
                    }
                    gb
                }));
            }
            res
        }))
    }

    /// Non-overlapping `k x k` max pooling (stride `k`, floor on the borders).
    /// Ties resolve to the first maximum in row-major window order.
    pub fn max_pool2d(&self, x: &Var<T>, k: usize) -> Result<Var<T>> {
        let s = x.shape();
        if s.len() != 4 || k == 0 || s[2] < k || s[3] < k {
            return Err(Error::shape("max_pool2d", format!("window {k} on input {s:?}")));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (ho, wo) = (h / k, w / k);
        let planes = n * c;
        let mut out = Vec::with_capacity(planes * ho * wo);
        let mut arg = Vec::with_capacity(planes * ho * wo);
        for plane in x.data().chunks_exact(h * w) {
            if k == 2 {
                pool2_plane(plane, w, ho, wo, &mut out, &mut arg);
                continue;
            }
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = oy * k * w + ox * k;
                    let mut bv = plane[best];
                    for dy in 0..k {
                        for dx in 0..k {
                            let idx = (oy * k + dy) * w + ox * k + dx;
                            if plane[idx] > bv {
                                bv = plane[idx];
                                best = idx;
                            }
                        }
                    }
                    out.push(bv);
                    arg.push(best as u32);
                }
            }
        }
        let value = Tensor::from_parts(vec![n, c, ho, wo], out);
        Ok(self.record(value, &[x], move |g, _| {
            let mut gx = vec![T::zero(); planes * h * w];
            for (pi, (gp, ap)) in g.chunks_exact(ho * wo).zip(arg.chunks_exact(ho * wo)).enumerate() {
                let base = pi * h * w;
                for (&gv, &a) in gp.iter().zip(ap) {
                    gx[base + a as usize] += gv;
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Adaptive average pooling to `1 x 1`: `[N,C,H,W] -> [N,C,1,1]`.
    pub fn global_avg_pool2d(&self, x: &Var<T>) -> Result<Var<T>> {
        let s = x.shape();
        if s.len() != 4 {
            return Err(Error::shape("global_avg_pool2d", format!("expected rank 4, got {s:?}")));
        }
        let hw = s[2] * s[3];
        let inv = T::one() / T::from_usize(hw).unwrap();
        let out: Vec<T> = x.data().chunks_exact(hw).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        let value = Tensor::from_parts(vec![s[0], s[1], 1, 1], out);
        Ok(self.record(value, &[x], move |g, _| {
            let mut gx = Vec::with_capacity(g.len() * hw);
            for &gv in g {
                gx.extend(std::iter::repeat(gv * inv).take(hw));
            }
            vec![Some(gx)]
        }))
    }
}


/// 2x2 max pooling of one plane; ties keep the first position in
/// row-major window order.
fn pool2_plane<T: Float>(plane: &[T], w: usize, ho: usize, wo: usize, out: &mut Vec<T>, arg: &mut Vec<u32>) {
    for oy in 0..ho {
        let r0 = 2 * oy * w;
        let top = &plane[r0..r0 + 2 * wo];
        let bot = &plane[r0 + w..r0 + w + 2 * wo];
        for ox in 0..wo {
            let c = 2 * ox;
            let mut best = r0 + c;
            let mut bv = top[c];
            if top[c + 1] > bv {
                bv = top[c + 1];
                best = r0 + c + 1;
            }
            if bot[c] > bv {
                bv = bot[c];
                best = r0 + w + c;
            }
            if bot[c + 1] > bv {
                bv = bot[c + 1];
                best = r0 + w + c + 1;
            }
            out.push(bv);
            arg.push(best as u32);
        }
    }
}
