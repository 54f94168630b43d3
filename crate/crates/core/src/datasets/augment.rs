//! Training-time augmentation on raw (pre-normalization) planar images.
//!
//! Steps run in a fixed order: zero-padded random crop, rotation about the
//! image centre with bilinear resampling and zero fill, horizontal flip.

use rand::Rng;

use crate::prng::Prng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentPolicy {
    pub pad_crop: usize,
    /// Maximum rotation magnitude in degrees; 0 disables rotation.
    pub rotation_deg: f64,
    pub hflip_prob: f64,
}

/// The random choices for one image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentDraw {
    /// Crop offset into the padded image, in `[0, 2 * pad_crop]`.
    pub crop_y: usize,
    pub crop_x: usize,
    pub angle_deg: f64,
    pub flip: bool,
}

impl AugmentPolicy {
    pub fn none() -> Self {
        AugmentPolicy { pad_crop: 0, rotation_deg: 0.0, hflip_prob: 0.0 }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.rotation_deg >= 0.0 && self.rotation_deg.is_finite()) {
            return Err(format!("rotation_deg must be a nonnegative number, got {}", self.rotation_deg));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(format!("hflip_prob must lie in [0, 1], got {}", self.hflip_prob));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.pad_crop == 0 && self.rotation_deg == 0.0 && self.hflip_prob == 0.0
    }

    /// Draw crop offsets, then the angle, then the flip; disabled steps
    /// consume no randomness.
    pub fn draw(&self, rng: &mut Prng) -> AugmentDraw {
        let (crop_y, crop_x) = if self.pad_crop > 0 {
            (rng.gen_range(0..=2 * self.pad_crop), rng.gen_range(0..=2 * self.pad_crop))
        } else {
            (0, 0)
        };
        let angle_deg = if self.rotation_deg > 0.0 { rng.gen_range(-self.rotation_deg..=self.rotation_deg) } else { 0.0 };
        let flip = self.hflip_prob > 0.0 && rng.gen_bool(self.hflip_prob);
        AugmentDraw { crop_y, crop_x, angle_deg, flip }
    }
}

/// Apply `draw` to a planar `[c, h, w]` image.
pub fn apply(image: &[f32], c: usize, h: usize, w: usize, pad: usize, draw: &AugmentDraw) -> Vec<f32> {
    let mut out = crop(image, c, h, w, pad, draw.crop_y, draw.crop_x);
    if draw.angle_deg != 0.0 {
        out = rotate(&out, c, h, w, draw.angle_deg);
    }
    if draw.flip {
        for row in out.chunks_exact_mut(w) {
            row.reverse();
        }
    }
    out
}

pub fn augment(image: &[f32], c: usize, h: usize, w: usize, policy: &AugmentPolicy, rng: &mut Prng) -> Vec<f32> {
    let draw = policy.draw(rng);
    apply(image, c, h, w, policy.pad_crop, &draw)
}

/// Crop `h x w` at `(oy, ox)` from the image zero-padded by `pad`.
fn crop(image: &[f32], c: usize, h: usize, w: usize, pad: usize, oy: usize, ox: usize) -> Vec<f32> {
    let mut out = vec![0f32; c * h * w];
    for ch in 0..c {
        let src = &image[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            let sy = (y + oy) as isize - pad as isize;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for x in 0..w {
                let sx = (x + ox) as isize - pad as isize;
                if sx >= 0 && sx < w as isize {
                    dst[y * w + x] = src[sy as usize * w + sx as usize];
                }
            }
        }
    }
    out
}

/// Rotate counter-clockwise by `deg` about the centre using the inverse map
/// and bilinear sampling; samples outside the image read as zero.
pub fn rotate(image: &[f32], c: usize, h: usize, w: usize, deg: f64) -> Vec<f32> {
    let (sin, cos) = deg.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = vec![0f32; c * h * w];
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            let sx = cos * dx - sin * dy + cx;
            let sy = sin * dx + cos * dy + cy;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            for ch in 0..c {
                let plane = &image[ch * h * w..(ch + 1) * h * w];
                let at = |yy: isize, xx: isize| -> f64 {
                    if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                        plane[yy as usize * w + xx as usize] as f64
                    } else {
                        0.0
                    }
                };
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
                let bottom = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
                out[ch * h * w + y * w + x] = (top * (1.0 - fy) + bottom * fy) as f32;
            }
        }
    }
    out
}
