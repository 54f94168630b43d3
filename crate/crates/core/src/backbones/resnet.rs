use numcore::{ParamStore, Var};

use crate::error::Result;
use crate::nn::{BatchNorm2d, Conv2d, Ctx, Init, Linear};

#[derive(Clone, Debug)]
struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    downsample: Option<(Conv2d, BatchNorm2d)>,
}

impl BasicBlock {
    fn build(store: &mut ParamStore<f32>, init: &Init, name: &str, cin: usize, cout: usize, stride: usize) -> Result<Self> {
        let conv1 = Conv2d::new(store, init, &format!("{name}.conv1"), cin, cout, 3, stride, 1, false)?;
        let bn1 = BatchNorm2d::new(store, &format!("{name}.bn1"), cout)?;
        let conv2 = Conv2d::new(store, init, &format!("{name}.conv2"), cout, cout, 3, 1, 1, false)?;
        let bn2 = BatchNorm2d::new(store, &format!("{name}.bn2"), cout)?;
        let downsample = if stride != 1 || cin != cout {
            Some((
                Conv2d::new(store, init, &format!("{name}.downsample.conv"), cin, cout, 1, stride, 0, false)?,
                BatchNorm2d::new(store, &format!("{name}.downsample.bn"), cout)?,
            ))
        } else {
            None
        };
        Ok(BasicBlock { conv1, bn1, conv2, bn2, downsample })
    }

    fn forward(&self, ctx: &mut Ctx<'_>, x: &Var<f32>) -> Result<Var<f32>> {
        let h = self.conv1.forward(ctx, x)?;
        let h = self.bn1.forward(ctx, &h)?;
        let h = ctx.tape.relu(&h);
        let h = self.conv2.forward(ctx, &h)?;
        let h = self.bn2.forward(ctx, &h)?;
        let shortcut = match &self.downsample {
            Some((conv, bn)) => {
                let s = conv.forward(ctx, x)?;
                bn.forward(ctx, &s)?
            }
            None => x.clone(),
        };
        Ok(ctx.tape.relu(&ctx.tape.add(&h, &shortcut)?))
    }
}

/// ResNet-18 for small inputs: a stride-1 3x3 stem without max pooling,
/// then four stages of two basic blocks.
#[derive(Clone, Debug)]
pub struct ResNet18 {
    stem: (Conv2d, BatchNorm2d),
    stages: Vec<Vec<BasicBlock>>,
    head: Linear,
}

impl ResNet18 {
    pub fn build(store: &mut ParamStore<f32>, init: &Init, in_channels: usize, classes: usize) -> Result<Self> {
        let stem = (
            Conv2d::new(store, init, "stem.conv", in_channels, 64, 3, 1, 1, false)?,
            BatchNorm2d::new(store, "stem.bn", 64)?,
        );
        let mut stages = Vec::new();
        let mut cin = 64;
        for (s, &cout) in [64, 128, 256, 512].iter().enumerate() {
            let stride = if s == 0 { 1 } else { 2 };
            let name = format!("stage{}", s + 1);
            let first = BasicBlock::build(store, init, &format!("{name}.0"), cin, cout, stride)?;
            let second = BasicBlock::build(store, init, &format!("{name}.1"), cout, cout, 1)?;
            stages.push(vec![first, second]);
            cin = cout;
        }
        let head = Linear::new(store, init, "head", 512, classes)?;
        Ok(ResNet18 { stem, stages, head })
    }

    pub fn layer_names() -> Vec<String> {
        std::iter::once("stem".to_string()).chain((1..=4).map(|i| format!("stage{i}"))).collect()
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: &Var<f32>) -> Result<Var<f32>> {
        let h = self.stem.0.forward(ctx, x)?;
        let h = self.stem.1.forward(ctx, &h)?;
        let mut h = ctx.tape.relu(&h);
        ctx.tap("stem", &h);
        for (s, stage) in self.stages.iter().enumerate() {
            for block in stage {
                h = block.forward(ctx, &h)?;
            }
            ctx.tap(&format!("stage{}", s + 1), &h);
        }
        let pooled = ctx.tape.global_avg_pool2d(&h)?;
        let n = pooled.shape()[0];
        let flat = ctx.tape.reshape(&pooled, &[n, 512])?;
        self.head.forward(ctx, &flat)
    }
}
