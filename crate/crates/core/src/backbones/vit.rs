use numcore::{AttentionWeights, ParamId, ParamKind, ParamStore, Var};

use crate::error::Result;
use crate::nn::{Conv2d, Ctx, Init, LayerNorm, Linear};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VitSpec {
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub patch: usize,
    pub mlp_ratio: usize,
}

impl VitSpec {
    /// The tiny configuration, with the patch size chosen from the input
    /// resolution (7 for 28x28, 4 otherwise).
    pub fn tiny(resolution: usize) -> Self {
        VitSpec { embed_dim: 192, depth: 12, heads: 3, patch: if resolution == 28 { 7 } else { 4 }, mlp_ratio: 4 }
    }

    pub fn tokens(&self, resolution: usize) -> usize {
        (resolution / self.patch).pow(2) + 1
    }
}

#[derive(Clone, Debug)]
struct Block {
    norm1: LayerNorm,
    qkv: Linear,
    proj: Linear,
    norm2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

/// Pre-norm vision transformer with a class token and learned positions.
#[derive(Clone, Debug)]
pub struct VitTiny {
    spec: VitSpec,
    patch_embed: Conv2d,
    cls_token: ParamId,
    pos_embed: ParamId,
    blocks: Vec<Block>,
    norm: LayerNorm,
    head: Linear,
}

impl VitTiny {
    pub fn build(
        store: &mut ParamStore<f32>,
        init: &Init,
        spec: VitSpec,
        in_channels: usize,
        resolution: usize,
        classes: usize,
    ) -> Result<Self> {
        let d = spec.embed_dim;
        let patch_embed = Conv2d::new(store, init, "patch_embed", in_channels, d, spec.patch, spec.patch, 0, true)?;
        let cls_token = store.add("cls_token", init.normal("cls_token", &[1, d], 0.02), ParamKind::Trainable)?;
        let t = spec.tokens(resolution);
        let pos_embed = store.add("pos_embed", init.normal("pos_embed", &[t, d], 0.02), ParamKind::Trainable)?;
        let hidden = d * spec.mlp_ratio;
        let mut blocks = Vec::new();
        for i in 0..spec.depth {
            let n = format!("blocks.{i}");
            blocks.push(Block {
                norm1: LayerNorm::new(store, &format!("{n}.norm1"), d)?,
                qkv: Linear::new(store, init, &format!("{n}.attn.qkv"), d, 3 * d)?,
                proj: Linear::new(store, init, &format!("{n}.attn.proj"), d, d)?,
                norm2: LayerNorm::new(store, &format!("{n}.norm2"), d)?,
                fc1: Linear::new(store, init, &format!("{n}.mlp.fc1"), d, hidden)?,
                fc2: Linear::new(store, init, &format!("{n}.mlp.fc2"), hidden, d)?,
            });
        }
        let norm = LayerNorm::new(store, "norm", d)?;
        let head = Linear::new(store, init, "head", d, classes)?;
        Ok(VitTiny { spec, patch_embed, cls_token, pos_embed, blocks, norm, head })
    }

    pub fn spec(&self) -> VitSpec {
        self.spec
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: &Var<f32>) -> Result<Var<f32>> {
        let t = ctx.tape;
        let d = self.spec.embed_dim;
        let n = x.shape()[0];
        let patches = self.patch_embed.forward(ctx, x)?; // [N, D, g, g]
        let g2 = patches.shape()[2] * patches.shape()[3];
        let tokens = t.permute(&t.reshape(&patches, &[n, d, g2])?, &[0, 2, 1])?;
        let cls = t.expand_leading(&ctx.p(self.cls_token), n)?;
        let mut h = t.add_broadcast(&t.concat(&[&cls, &tokens], 1)?, &ctx.p(self.pos_embed))?;
        for b in &self.blocks {
            let a = b.norm1.forward(ctx, &h)?;
            let (qw, qb) = (ctx.p(b.qkv.weight), ctx.p(b.qkv.bias));
            let (pw, pb) = (ctx.p(b.proj.weight), ctx.p(b.proj.bias));
            let w = AttentionWeights { qkv_weight: &qw, qkv_bias: Some(&qb), out_weight: &pw, out_bias: Some(&pb) };
            let a = t.multi_head_attention(&a, &w, self.spec.heads)?;
            h = t.add(&h, &a)?;
            let m = b.norm2.forward(ctx, &h)?;
            let m = t.gelu(&b.fc1.forward(ctx, &m)?);
            let m = b.fc2.forward(ctx, &m)?;
            h = t.add(&h, &m)?;
        }
        let h = self.norm.forward(ctx, &h)?;
        let cls_out = t.reshape(&t.slice(&h, 1, 0, 1)?, &[n, d])?;
        self.head.forward(ctx, &cls_out)
    }
}
