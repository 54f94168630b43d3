use crate::error::{Error, Result};
use crate::scalar::Float;
use crate::tape::{Tape, Var};

/// Projection weights of a multi-head self-attention layer.
pub struct AttentionWeights<'a, T: Float> {
    /// `[3D, D]`, rows ordered query, key, value.
    pub qkv_weight: &'a Var<T>,
    pub qkv_bias: Option<&'a Var<T>>,
    /// `[D, D]`.
    pub out_weight: &'a Var<T>,
    pub out_bias: Option<&'a Var<T>>,
}

impl<T: Float> Tape<T> {
    /// Scaled dot-product self-attention over `x: [N, L, D]` with `heads`
    /// heads of width `D / heads`.
    pub fn multi_head_attention(&self, x: &Var<T>, w: &AttentionWeights<'_, T>, heads: usize) -> Result<Var<T>> {
        let s = x.shape();
        if s.len() != 3 {
            return Err(Error::shape("multi_head_attention", format!("expected [N, L, D], got {s:?}")));
        }
        let (n, l, d) = (s[0], s[1], s[2]);
        if heads == 0 || d % heads != 0 {
            return Err(Error::invalid("multi_head_attention", format!("width {d} not divisible by {heads} heads")));
        }
        let dh = d / heads;
        let qkv = self.linear(x, w.qkv_weight, w.qkv_bias)?;
        if qkv.shape()[2] != 3 * d {
            return Err(Error::shape("multi_head_attention", format!("qkv projection yields {:?}", qkv.shape())));
        }
        let qkv = self.reshape(&qkv, &[n, l, 3, heads, dh])?;
        let qkv = self.permute(&qkv, &[2, 0, 3, 1, 4])?; // [3, N, H, L, dh]
        let pick = |i: usize| -> Result<Var<T>> {
            let part = self.slice(&qkv, 0, i, 1)?;
            self.reshape(&part, &[n, heads, l, dh])
        };
        let (q, k, v) = (pick(0)?, pick(1)?, pick(2)?);
        let scores = self.matmul(&q, &k, false, true)?;
        let scores = self.scale(&scores, T::one() / T::from_usize(dh).unwrap().sqrt());
        let attn = self.softmax(&scores)?;
        let ctx = self.matmul(&attn, &v, false, false)?; // [N, H, L, dh]
        let ctx = self.permute(&ctx, &[0, 2, 1, 3])?;
        let ctx = self.reshape(&ctx, &[n, l, d])?;
        self.linear(&ctx, w.out_weight, w.out_bias)
    }
}
