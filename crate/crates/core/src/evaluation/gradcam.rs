use std::path::{Path, PathBuf};

use numcore::{Tape, Tensor};

use crate::backbones::{Family, Model};
use crate::error::{Error, Result};
use crate::msvp::grid_text;

#[derive(Clone, Debug)]
pub struct GradCamMap {
    /// `height * width` values in `[0, 1]`, row-major.
    pub heat: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub layer: String,
    pub target_class: usize,
}

impl GradCamMap {
    /// Binary PGM with `heat * 255` rounded.
    pub fn pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.heat.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
        out
    }

    pub fn write(&self, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let pgm = dir.join(format!("{stem}.pgm"));
        let txt = dir.join(format!("{stem}.txt"));
        std::fs::write(&pgm, self.pgm()).map_err(|e| Error::io(&pgm, e))?;
        std::fs::write(&txt, grid_text(&self.heat, 1, self.height, self.width)).map_err(|e| Error::io(&txt, e))?;
        Ok(vec![pgm, txt])
    }
}

/// GradCAM of `target_class` for one normalized `[1, C, H, W]` image.
/// `layer` defaults to the family's last convolutional stage.
pub fn gradcam(model: &Model, image: Tensor<f32>, target_class: usize, layer: Option<&str>) -> Result<GradCamMap> {
    let family = model.family();
    if family == Family::VitTiny {
        return Err(Error::Unsupported("GradCAM is only available for cnn4 and resnet18_small".into()));
    }
    let layer = layer.or(family.gradcam_layer()).expect("convolutional families have a default layer");
    if !family.layer_names().iter().any(|n| n == layer) {
        return Err(Error::Config(format!(
            "layer `{layer}` not found in {family} (available: {})",
            family.layer_names().join(", ")
        )));
    }
    if target_class >= model.spec.num_classes {
        return Err(Error::Config(format!("target class {target_class} outside [0, {})", model.spec.num_classes)));
    }
    let s = image.shape().to_vec();
    if s.len() != 4 || s[0] != 1 {
        return Err(Error::Config(format!("GradCAM expects a single image [1, C, H, W], got {s:?}")));
    }
    let (h, w) = (s[2], s[3]);
    let tape = Tape::new();
    let x = tape.constant(image);
    let fwd = model.forward(&tape, &x, false, Some(layer))?;
    let act = fwd.captured.ok_or_else(|| Error::Config(format!("layer `{layer}` was not reached")))?;
    let target = tape.sum(&tape.slice(&fwd.logits, 1, target_class, 1)?);
    let grads = tape.backward_retaining(&target, &[&act])?;
    let zeros;
    let g = match grads.get_slice(&act) {
        Some(g) => g,
        None => {
            zeros = vec![0f32; act.value().len()];
            &zeros
        }
    };
    let a = act.shape();
    let heat = cam(act.data(), g, a[1], a[2], a[3], h, w)?;
    Ok(GradCamMap { heat, height: h, width: w, layer: layer.to_string(), target_class })
}

/// Heat map from one sample's activation and gradient, both `[K, h, w]`:
/// `relu(sum_k mean(grad_k) * act_k)`, bilinearly upsampled to
/// `out_h x out_w`, then min-max scaled. A flat map becomes all zeros.
pub fn cam(act: &[f32], grad: &[f32], k: usize, h: usize, w: usize, out_h: usize, out_w: usize) -> Result<Vec<f64>> {
    let hw = h * w;
    if act.len() != k * hw || grad.len() != k * hw {
        return Err(Error::Config(format!("activation/gradient sizes {}/{} for [{k}, {h}, {w}]", act.len(), grad.len())));
    }
    let mut small = vec![0f64; hw];
    for (ap, gp) in act.chunks_exact(hw).zip(grad.chunks_exact(hw)) {
        let alpha = gp.iter().map(|&v| v as f64).sum::<f64>() / hw as f64;
        for (s, &v) in small.iter_mut().zip(ap) {
            *s += alpha * v as f64;
        }
    }
    small.iter_mut().for_each(|v| *v = v.max(0.0));
    let tape = Tape::<f64>::no_grad();
    let up = tape.bilinear_resize(&tape.constant(Tensor::new(&[1, h, w], small)?), out_h, out_w)?;
    let mut heat = up.data().to_vec();
    let (lo, hi) = heat.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi > lo {
        heat.iter_mut().for_each(|v| *v = (*v - lo) / (hi - lo));
    } else {
        heat.iter_mut().for_each(|v| *v = 0.0);
    }
    Ok(heat)
}
