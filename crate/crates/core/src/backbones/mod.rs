//! The three classification backbones and the prompt-wrapped model.

mod cnn;
mod resnet;
mod vit;

use std::fmt;
use std::str::FromStr;

use numcore::{ParamStore, Tape, Tensor, Var};

pub use cnn::Cnn4;
pub use resnet::ResNet18;
pub use vit::{VitSpec, VitTiny};

use crate::error::{Error, Result};
use crate::msvp::{Msvp, MsvpConfig, PREFIX};
use crate::nn::{self, BnUpdate, Ctx, Init};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Cnn4,
    ResNet18Small,
    VitTiny,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Cnn4, Family::ResNet18Small, Family::VitTiny];

    pub fn key(self) -> &'static str {
        match self {
            Family::Cnn4 => "cnn4",
            Family::ResNet18Small => "resnet18_small",
            Family::VitTiny => "vit_tiny",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Family::Cnn4 => "CNN",
            Family::ResNet18Small => "ResNet-18",
            Family::VitTiny => "ViT-Tiny",
        }
    }

    /// Default GradCAM layer, or `None` where GradCAM is not offered.
    pub fn gradcam_layer(self) -> Option<&'static str> {
        match self {
            Family::Cnn4 => Some("block4"),
            Family::ResNet18Small => Some("stage4"),
            Family::VitTiny => None,
        }
    }

    pub fn layer_names(self) -> Vec<String> {
        match self {
            Family::Cnn4 => Cnn4::layer_names(),
            Family::ResNet18Small => ResNet18::layer_names(),
            Family::VitTiny => Vec::new(),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cnn4" | "cnn" => Ok(Family::Cnn4),
            "resnet18_small" | "resnet18" | "resnet-18" => Ok(Family::ResNet18Small),
            "vit_tiny" | "vit" | "vit-tiny" => Ok(Family::VitTiny),
            other => Err(format!("unknown backbone `{other}` (expected cnn4, resnet18_small or vit_tiny)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BackboneSpec {
    pub family: Family,
    pub in_channels: usize,
    pub resolution: usize,
    pub num_classes: usize,
    pub vit: VitSpec,
}

impl BackboneSpec {
    pub fn new(family: Family, in_channels: usize, resolution: usize) -> Self {
        BackboneSpec { family, in_channels, resolution, num_classes: 10, vit: VitSpec::tiny(resolution) }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.in_channels == 1 || self.in_channels == 3) {
            return Err(format!("in_channels must be 1 or 3, got {}", self.in_channels));
        }
        if self.resolution < 16 {
            return Err(format!("resolution {} is too small for four 2x2 pooling stages", self.resolution));
        }
        if self.family == Family::VitTiny {
            let v = &self.vit;
            if v.patch == 0 || self.resolution % v.patch != 0 {
                return Err(format!("vit patch {} does not divide resolution {}", v.patch, self.resolution));
            }
            if v.heads == 0 || v.embed_dim % v.heads != 0 {
                return Err(format!("vit embed_dim {} is not divisible by {} heads", v.embed_dim, v.heads));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum Net {
    Cnn4(Cnn4),
    ResNet(ResNet18),
    Vit(VitTiny),
}

/// Output of one forward pass.
pub struct Forward {
    pub logits: Var<f32>,
    pub bn_updates: Vec<BnUpdate>,
    /// The activation requested for capture, if it was reached.
    pub captured: Option<Var<f32>>,
    /// The (possibly prompt-fused) input seen by the backbone.
    pub fused: Var<f32>,
}

/// A backbone, optionally preceded by the prompt module, together with its
/// parameter registry. Backbone parameters are registered first and keep
/// their values when prompts are added.
#[derive(Clone, Debug)]
pub struct Model {
    pub spec: BackboneSpec,
    net: Net,
    pub msvp: Option<Msvp>,
    pub store: ParamStore<f32>,
}

impl Model {
    pub fn build(spec: BackboneSpec, msvp: Option<MsvpConfig>, seed: u64) -> Result<Self> {
        spec.validate().map_err(Error::Config)?;
        let mut store = ParamStore::new();
        let init = Init { seed };
        let (c, r, k) = (spec.in_channels, spec.resolution, spec.num_classes);
        let net = match spec.family {
            Family::Cnn4 => Net::Cnn4(Cnn4::build(&mut store, &init, c, k)?),
            Family::ResNet18Small => Net::ResNet(ResNet18::build(&mut store, &init, c, k)?),
            Family::VitTiny => Net::Vit(VitTiny::build(&mut store, &init, spec.vit, c, r, k)?),
        };
        let msvp = msvp.map(|cfg| Msvp::register(&mut store, c, r, r, cfg, seed)).transpose()?;
        Ok(Model { spec, net, msvp, store })
    }

    pub fn family(&self) -> Family {
        self.spec.family
    }

    pub fn count_params(&self) -> usize {
        self.store.count_trainable()
    }

    pub fn count_msvp_params(&self) -> usize {
        self.store.count_trainable_with_prefix(PREFIX)
    }

    pub fn forward(&self, tape: &Tape<f32>, x: &Var<f32>, train: bool, capture: Option<&str>) -> Result<Forward> {
        let s = x.shape();
        let r = self.spec.resolution;
        if s.len() != 4 || s[1] != self.spec.in_channels || s[2] != r || s[3] != r {
            return Err(Error::Config(format!(
                "{} expects [N, {}, {r}, {r}] input, got {s:?}",
                self.spec.family, self.spec.in_channels
            )));
        }
        let mut ctx = Ctx::new(tape, &self.store, train, capture);
        let fused = match &self.msvp {
            Some(m) => m.fuse(tape, &self.store, x)?,
            None => x.clone(),
        };
        let logits = match &self.net {
            Net::Cnn4(n) => n.forward(&mut ctx, &fused)?,
            Net::ResNet(n) => n.forward(&mut ctx, &fused)?,
            Net::Vit(n) => n.forward(&mut ctx, &fused)?,
        };
        Ok(Forward { logits, bn_updates: ctx.bn_updates, captured: ctx.captured, fused })
    }

    pub fn apply_bn_updates(&mut self, updates: Vec<BnUpdate>) {
        nn::apply_bn_updates(&mut self.store, updates);
    }

    /// Eval-mode logits without gradient tracking.
    pub fn logits(&self, x: Tensor<f32>) -> Result<Tensor<f32>> {
        let tape = Tape::no_grad();
        let xv = tape.constant(x);
        Ok(self.forward(&tape, &xv, false, None)?.logits.value().clone())
    }
}
