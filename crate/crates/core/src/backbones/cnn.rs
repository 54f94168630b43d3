use numcore::{ParamStore, Var};

use crate::error::Result;
use crate::nn::{BatchNorm2d, Conv2d, Ctx, Init, Linear};

const WIDTHS: [usize; 4] = [32, 64, 128, 256];

/// Four `conv3x3 -> batchnorm -> relu -> maxpool2x2` blocks, global average
/// pooling and a linear classifier.
#[derive(Clone, Debug)]
pub struct Cnn4 {
    blocks: Vec<(Conv2d, BatchNorm2d)>,
    head: Linear,
}

impl Cnn4 {
    pub fn build(store: &mut ParamStore<f32>, init: &Init, in_channels: usize, classes: usize) -> Result<Self> {
        let mut blocks = Vec::new();
        let mut cin = in_channels;
        for (i, &cout) in WIDTHS.iter().enumerate() {
            let name = format!("block{}", i + 1);
            let conv = Conv2d::new(store, init, &format!("{name}.conv"), cin, cout, 3, 1, 1, true)?;
            let bn = BatchNorm2d::new(store, &format!("{name}.bn"), cout)?;
            blocks.push((conv, bn));
            cin = cout;
        }
        let head = Linear::new(store, init, "head", cin, classes)?;
        Ok(Cnn4 { blocks, head })
    }

    pub fn layer_names() -> Vec<String> {
        (1..=4).map(|i| format!("block{i}")).collect()
    }

    /// Capture points `block{i}` are the post-relu, pre-pool activations.
    pub fn forward(&self, ctx: &mut Ctx<'_>, x: &Var<f32>) -> Result<Var<f32>> {
        let mut h = x.clone();
        for (i, (conv, bn)) in self.blocks.iter().enumerate() {
            h = conv.forward(ctx, &h)?;
            h = bn.forward(ctx, &h)?;
            h = ctx.tape.relu(&h);
            ctx.tap(&format!("block{}", i + 1), &h);
            h = ctx.tape.max_pool2d(&h, 2)?;
        }
        let pooled = ctx.tape.global_avg_pool2d(&h)?;
        let n = pooled.shape()[0];
        let flat = ctx.tape.reshape(&pooled, &[n, WIDTHS[3]])?;
        self.head.forward(ctx, &flat)
    }
}
