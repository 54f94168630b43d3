//! Parameterized layers over a [`ParamStore`].

use numcore::{BatchNormMode, BatchStats, ParamId, ParamKind, ParamStore, Tape, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::prng::{self, Purpose};

pub const BN_MOMENTUM: f32 = 0.1;
pub const BN_EPS: f64 = 1e-5;
pub const LN_EPS: f64 = 1e-6;

/// Seeded initializer. Each parameter draws from its own stream keyed by
/// its name, so registering extra parameters never changes existing ones.
pub struct Init {
    pub seed: u64,
}

impl Init {
    fn rng(&self, name: &str) -> prng::Prng {
        prng::stream(self.seed, Purpose::Init, 0, prng::fnv1a(name.as_bytes()))
    }

    /// Uniform on `±sqrt(6 / fan_in)` (Kaiming, ReLU gain).
    pub fn kaiming_uniform(&self, name: &str, shape: &[usize], fan_in: usize) -> Tensor<f32> {
        let bound = (6.0 / fan_in as f64).sqrt();
        let mut rng = self.rng(name);
        Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound) as f32)
    }

    pub fn normal(&self, name: &str, shape: &[usize], std: f64) -> Tensor<f32> {
        let dist = Normal::new(0.0, std).expect("finite std");
        let mut rng = self.rng(name);
        Tensor::from_fn(shape, |_| dist.sample(&mut rng) as f32)
    }
}

/// Running-statistics update produced by a training-mode batch norm.
#[derive(Debug)]
pub struct BnUpdate {
    pub mean: ParamId,
    pub var: ParamId,
    pub stats: BatchStats<f32>,
}

/// State threaded through one forward pass.
pub struct Ctx<'a> {
    pub tape: &'a Tape<f32>,
    pub store: &'a ParamStore<f32>,
    pub train: bool,
    pub bn_updates: Vec<BnUpdate>,
    capture: Option<&'a str>,
    pub captured: Option<Var<f32>>,
}

impl<'a> Ctx<'a> {
    pub fn new(tape: &'a Tape<f32>, store: &'a ParamStore<f32>, train: bool, capture: Option<&'a str>) -> Self {
        Ctx { tape, store, train, bn_updates: Vec::new(), capture, captured: None }
    }

    pub fn p(&self, id: ParamId) -> Var<f32> {
        self.store.bind(self.tape, id)
    }

    /// Record `v` if it is the activation named for capture.
    pub fn tap(&mut self, name: &str, v: &Var<f32>) {
        if self.capture == Some(name) {
            self.captured = Some(v.clone());
        }
    }
}

/// Apply running-statistics updates: `r = (1 - m) r + m * batch`.
pub fn apply_bn_updates(store: &mut ParamStore<f32>, updates: Vec<BnUpdate>) {
    for u in updates {
        for (id, batch) in [(u.mean, u.stats.mean), (u.var, u.stats.var)] {
            for (r, b) in store.value_mut(id).data_mut().iter_mut().zip(batch) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore<f32>,
        init: &Init,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Self> {
        let wname = format!("{name}.weight");
        let weight = store.add(&wname, init.kaiming_uniform(&wname, &[cout, cin, k, k], cin * k * k), ParamKind::Trainable)?;
        let bias = if bias { Some(store.add(format!("{name}.bias"), Tensor::zeros(&[cout]), ParamKind::Trainable)?) } else { None };
        Ok(Conv2d { weight, bias, stride, padding })
    }

    pub fn forward(&self, ctx: &Ctx<'_>, x: &Var<f32>) -> Result<Var<f32>> {
        let b = self.bias.map(|id| ctx.p(id));
        Ok(ctx.tape.conv2d(x, &ctx.p(self.weight), b.as_ref(), self.stride, self.padding)?)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore<f32>, name: &str, c: usize) -> Result<Self> {
        Ok(BatchNorm2d {
            gamma: store.add(format!("{name}.weight"), Tensor::ones(&[c]), ParamKind::Trainable)?,
            beta: store.add(format!("{name}.bias"), Tensor::zeros(&[c]), ParamKind::Trainable)?,
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(&[c]), ParamKind::Buffer)?,
            running_var: store.add(format!("{name}.running_var"), Tensor::ones(&[c]), ParamKind::Buffer)?,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: &Var<f32>) -> Result<Var<f32>> {
        let (g, b) = (ctx.p(self.gamma), ctx.p(self.beta));
        if ctx.train {
            let (y, stats) = ctx.tape.batch_norm2d(x, &g, &b, BatchNormMode::Train, BN_EPS)?;
            let stats = stats.expect("training mode yields statistics");
            ctx.bn_updates.push(BnUpdate { mean: self.running_mean, var: self.running_var, stats });
            Ok(y)
        } else {
            let mean = ctx.store.value(self.running_mean).data();
            let var = ctx.store.value(self.running_var).data();
            Ok(ctx.tape.batch_norm2d(x, &g, &b, BatchNormMode::Eval { mean, var }, BN_EPS)?.0)
        }
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore<f32>, init: &Init, name: &str, fin: usize, fout: usize) -> Result<Self> {
        let wname = format!("{name}.weight");
        Ok(Linear {
            weight: store.add(&wname, init.kaiming_uniform(&wname, &[fout, fin], fin), ParamKind::Trainable)?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[fout]), ParamKind::Trainable)?,
        })
    }

    pub fn forward(&self, ctx: &Ctx<'_>, x: &Var<f32>) -> Result<Var<f32>> {
        Ok(ctx.tape.linear(x, &ctx.p(self.weight), Some(&ctx.p(self.bias)))?)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore<f32>, name: &str, d: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: store.add(format!("{name}.weight"), Tensor::ones(&[d]), ParamKind::Trainable)?,
            beta: store.add(format!("{name}.bias"), Tensor::zeros(&[d]), ParamKind::Trainable)?,
        })
    }

    pub fn forward(&self, ctx: &Ctx<'_>, x: &Var<f32>) -> Result<Var<f32>> {
        Ok(ctx.tape.layer_norm(x, &ctx.p(self.gamma), &ctx.p(self.beta), LN_EPS)?)
    }
}
