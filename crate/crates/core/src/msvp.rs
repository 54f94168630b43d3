//! Multi-scale pixel-space prompts fused with the input image.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use numcore::{Float, ParamId, ParamKind, ParamStore, Tape, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};
use crate::prng::{self, Purpose};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scale {
    Global,
    Mid,
    Local,
}

impl Scale {
    pub const ALL: [Scale; 3] = [Scale::Global, Scale::Mid, Scale::Local];

    pub fn letter(self) -> char {
        match self {
            Scale::Global => 'g',
            Scale::Mid => 'm',
            Scale::Local => 'l',
        }
    }
}

/// Which prompt scales are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ScaleSet {
    pub global: bool,
    pub mid: bool,
    pub local: bool,
}

impl ScaleSet {
    pub const FULL: ScaleSet = ScaleSet { global: true, mid: true, local: true };
    pub const GLOBAL: ScaleSet = ScaleSet { global: true, mid: false, local: false };
    pub const GLOBAL_MID: ScaleSet = ScaleSet { global: true, mid: true, local: false };

    pub fn contains(&self, s: Scale) -> bool {
        match s {
            Scale::Global => self.global,
            Scale::Mid => self.mid,
            Scale::Local => self.local,
        }
    }

    pub fn iter(self) -> impl Iterator<Item = Scale> {
        Scale::ALL.into_iter().filter(move |&s| self.contains(s))
    }

    pub fn len(&self) -> usize {
        self.iter().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every nonempty subset, in a fixed order.
    pub fn all_nonempty() -> Vec<ScaleSet> {
        (1u8..8)
            .map(|b| ScaleSet { global: b & 1 != 0, mid: b & 2 != 0, local: b & 4 != 0 })
            .collect()
    }
}

impl fmt::Display for ScaleSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.iter().map(|s| s.letter().to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for ScaleSet {
    type Err = String;

    /// Accepts comma-separated letters or names (`g,m,l`, `global,mid`) or `full`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.trim() == "full" {
            return Ok(ScaleSet::FULL);
        }
        let mut set = ScaleSet { global: false, mid: false, local: false };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "g" | "global" => set.global = true,
                "m" | "mid" => set.mid = true,
                "l" | "local" => set.local = true,
                other => return Err(format!("unknown prompt scale `{other}` (expected g, m or l)")),
            }
        }
        if set.is_empty() {
            return Err("at least one prompt scale must be enabled".into());
        }
        Ok(set)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FusionKind {
    Addition,
    Concatenation,
    Gated,
}

impl FusionKind {
    pub const ALL: [FusionKind; 3] = [FusionKind::Addition, FusionKind::Concatenation, FusionKind::Gated];

    pub fn key(self) -> &'static str {
        match self {
            FusionKind::Addition => "addition",
            FusionKind::Concatenation => "concatenation",
            FusionKind::Gated => "gated",
        }
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for FusionKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "addition" | "add" => Ok(FusionKind::Addition),
            "concatenation" | "concat" => Ok(FusionKind::Concatenation),
            "gated" | "gate" => Ok(FusionKind::Gated),
            other => Err(format!("unknown fusion `{other}` (expected addition, concatenation or gated)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MsvpConfig {
    pub s_mid: usize,
    pub s_local: usize,
    pub enabled: ScaleSet,
    pub fusion: FusionKind,
    /// Weight of `mean((x' - x)^2)`.
    pub drift_weight: f64,
    /// Weight of the squared norm of the prompt maps.
    pub l2_weight: f64,
}

impl Default for MsvpConfig {
    fn default() -> Self {
        MsvpConfig {
            s_mid: 4,
            s_local: 8,
            enabled: ScaleSet::FULL,
            fusion: FusionKind::Addition,
            drift_weight: 0.0,
            l2_weight: 0.0,
        }
    }
}

impl MsvpConfig {
    pub fn with_fusion(fusion: FusionKind) -> Self {
        MsvpConfig { fusion, ..Default::default() }
    }

    pub fn side(&self, s: Scale) -> usize {
        match s {
            Scale::Global => 1,
            Scale::Mid => self.s_mid,
            Scale::Local => self.s_local,
        }
    }

    /// Checks scale ordering against an `h x w` input.
    pub fn validate(&self, h: usize, w: usize) -> std::result::Result<(), String> {
        let limit = h.min(w);
        if self.enabled.is_empty() {
            return Err("msvp: at least one prompt scale must be enabled".into());
        }
        if !(1 <= self.s_mid && self.s_mid <= self.s_local && self.s_local <= limit) {
            return Err(format!(
                "msvp: scales must satisfy 1 <= s_mid ({}) <= s_local ({}) <= {limit} for a {h}x{w} input",
                self.s_mid, self.s_local
            ));
        }
        if self.drift_weight < 0.0 || self.l2_weight < 0.0 {
            return Err("msvp: penalty weights must be nonnegative".into());
        }
        Ok(())
    }
}

/// Trainable scalars added by the prompt module for `c` input channels.
pub fn count_msvp_params(c: usize, cfg: &MsvpConfig) -> usize {
    let k = cfg.enabled.len();
    let prompts: usize = cfg.enabled.iter().map(|s| c * cfg.side(s) * cfg.side(s)).sum();
    prompts
        + match cfg.fusion {
            FusionKind::Addition => 0,
            FusionKind::Gated => c,
            FusionKind::Concatenation => (1 + k) * c * c + c,
        }
}

pub const PREFIX: &str = "msvp.";

/// Registered prompt parameters and the fusion applied to inputs.
#[derive(Clone, Debug)]
pub struct Msvp {
    pub config: MsvpConfig,
    pub channels: usize,
    prompts: Vec<(Scale, ParamId)>,
    projection: Option<(ParamId, ParamId)>,
    gate: Option<ParamId>,
}

impl Msvp {
    /// Add the prompt parameters to `store`. Prompts and gate start at zero.
    /// The concatenation projection passes the input channels through and
    /// gives the prompt channels Kaiming-uniform weights drawn from `seed`,
    /// so every fusion kind is the identity at initialization while the
    /// prompts still receive gradient.
    pub fn register<T: Float>(
        store: &mut ParamStore<T>,
        channels: usize,
        h: usize,
        w: usize,
        config: MsvpConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate(h, w).map_err(Error::Config)?;
        let c = channels;
        let mut prompts = Vec::new();
        for s in config.enabled.iter() {
            let side = config.side(s);
            let id = store.add(format!("{PREFIX}prompt_{}", s.letter()), Tensor::zeros(&[c, side, side]), ParamKind::Trainable)?;
            prompts.push((s, id));
        }
        let mut projection = None;
        let mut gate = None;
        match config.fusion {
            FusionKind::Addition => {}
            FusionKind::Gated => {
                gate = Some(store.add(format!("{PREFIX}gate"), Tensor::zeros(&[c]), ParamKind::Trainable)?);
            }
            FusionKind::Concatenation => {
                let cin = (1 + config.enabled.len()) * c;
                let name = format!("{PREFIX}proj.weight");
                let bound = (6.0 / cin as f64).sqrt();
                let mut rng = prng::stream(seed, Purpose::Init, 0, prng::fnv1a(name.as_bytes()));
                let weight = Tensor::from_fn(&[c, cin, 1, 1], |i| {
                    let (o, j) = (i / cin, i % cin);
                    let r = rng.gen_range(-bound..bound);
                    if j >= c {
                        T::from_f64_lossy(r)
                    } else if o == j {
                        T::one()
                    } else {
                        T::zero()
                    }
                });
                let w = store.add(name, weight, ParamKind::Trainable)?;
                let b = store.add(format!("{PREFIX}proj.bias"), Tensor::zeros(&[c]), ParamKind::Trainable)?;
                projection = Some((w, b));
            }
        }
        Ok(Msvp { config, channels, prompts, projection, gate })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.prompts.iter().map(|p| p.1).collect();
        if let Some((w, b)) = self.projection {
            ids.extend([w, b]);
        }
        ids.extend(self.gate);
        ids
    }

    pub fn prompt_ids(&self) -> &[(Scale, ParamId)] {
        &self.prompts
    }

    pub fn gate_id(&self) -> Option<ParamId> {
        self.gate
    }

    fn upsampled<T: Float>(&self, tape: &Tape<T>, store: &ParamStore<T>, h: usize, w: usize) -> Result<Vec<Var<T>>> {
        self.prompts
            .iter()
            .map(|&(_, id)| Ok(tape.bilinear_resize(&store.bind(tape, id), h, w)?))
            .collect()
    }

    /// `(1/k) * sum` of the enabled prompts upsampled to `h x w`; `[C, h, w]`.
    pub fn combined_prompt<T: Float>(&self, tape: &Tape<T>, store: &ParamStore<T>, h: usize, w: usize) -> Result<Var<T>> {
        let ups = self.upsampled(tape, store, h, w)?;
        let mut acc = ups[0].clone();
        for u in &ups[1..] {
            acc = tape.add(&acc, u)?;
        }
        Ok(tape.scale(&acc, T::one() / T::from_usize(ups.len()).unwrap()))
    }

    /// Apply the prompts to a batch `x: [N, C, H, W]`.
    pub fn fuse<T: Float>(&self, tape: &Tape<T>, store: &ParamStore<T>, x: &Var<T>) -> Result<Var<T>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.channels {
            return Err(Error::Config(format!("msvp expects [N, {}, H, W] input, got {s:?}", self.channels)));
        }
        let (n, h, w) = (s[0], s[2], s[3]);
        match self.config.fusion {
            FusionKind::Addition => {
                let p = self.combined_prompt(tape, store, h, w)?;
                Ok(tape.add_broadcast(x, &p)?)
            }
            FusionKind::Gated => {
                let p = self.combined_prompt(tape, store, h, w)?;
                let g = tape.sigmoid(&store.bind(tape, self.gate.expect("gated fusion has a gate")));
                let gp = tape.channel_scale(&p, &g, 0)?;
                Ok(tape.add_broadcast(x, &gp)?)
            }
            FusionKind::Concatenation => {
                let (wid, bid) = self.projection.expect("concatenation fusion has a projection");
                let mut parts = vec![x.clone()];
                for u in self.upsampled(tape, store, h, w)? {
                    parts.push(tape.expand_leading(&u, n)?);
                }
                let refs: Vec<&Var<T>> = parts.iter().collect();
                let u = tape.concat(&refs, 1)?;
                Ok(tape.conv2d(&u, &store.bind(tape, wid), Some(&store.bind(tape, bid)), 1, 0)?)
            }
        }
    }

    /// `weight * sum over enabled prompts of ||P||^2`.
    pub fn l2_penalty<T: Float>(&self, tape: &Tape<T>, store: &ParamStore<T>, weight: f64) -> Result<Var<T>> {
        let mut total: Option<Var<T>> = None;
        for &(_, id) in &self.prompts {
            let sq = tape.sum(&tape.square(&store.bind(tape, id)));
            total = Some(match total {
                None => sq,
                Some(t) => tape.add(&t, &sq)?,
            });
        }
        Ok(tape.scale(&total.expect("at least one prompt"), T::from_f64_lossy(weight)))
    }
}

/// `weight * mean((fused - x)^2)`.
pub fn drift_penalty<T: Float>(tape: &Tape<T>, x: &Var<T>, fused: &Var<T>, weight: f64) -> Result<Var<T>> {
    let d = tape.sub(fused, x)?;
    Ok(tape.scale(&tape.mean(&tape.square(&d)), T::from_f64_lossy(weight)))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Binary PGM of one map, min-max scaled to 0..=255. A flat map is mid-gray.
pub fn pgm_bytes(values: &[f64], h: usize, w: usize) -> Vec<u8> {
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    if !(hi > lo) {
        out.extend(std::iter::repeat(128u8).take(h * w));
    } else {
        out.extend(values.iter().map(|&v| ((v - lo) / (hi - lo) * 255.0).round() as u8));
    }
    out
}

/// Text grid: `# channel c` headers, then one row per line with values in
/// scientific notation carrying nine significant digits.
pub fn grid_text(values: &[f64], c: usize, h: usize, w: usize) -> String {
    let mut s = String::new();
    for ch in 0..c {
        s.push_str(&format!("# channel {ch}\n"));
        for row in values[ch * h * w..(ch + 1) * h * w].chunks(w) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.8e}")).collect();
            s.push_str(&cells.join(" "));
            s.push('\n');
        }
    }
    s
}

/// Inverse of [`grid_text`]: values in file order.
pub fn parse_grid(text: &str) -> std::result::Result<Vec<f64>, String> {
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .flat_map(|l| l.split_whitespace())
        .map(|v| v.parse::<f64>().map_err(|e| format!("bad grid value `{v}`: {e}")))
        .collect()
}

/// Write every enabled prompt map and the combined upsampled prompt at
/// `h x w` as text grids and per-channel PGMs. Returns the files written.
pub fn export_prompts<T: Float>(msvp: &Msvp, store: &ParamStore<T>, dir: &Path, h: usize, w: usize) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let c = msvp.channels;
    let mut written = Vec::new();
    let mut emit = |tag: &str, values: Vec<f64>, mh: usize, mw: usize| -> Result<()> {
        let path = dir.join(format!("prompt_{tag}.txt"));
        write_file(&path, grid_text(&values, c, mh, mw).as_bytes())?;
        written.push(path);
        for ch in 0..c {
            let path = dir.join(format!("prompt_{tag}_c{ch}.pgm"));
            write_file(&path, &pgm_bytes(&values[ch * mh * mw..(ch + 1) * mh * mw], mh, mw))?;
            written.push(path);
        }
        Ok(())
    };
    for &(scale, id) in &msvp.prompts {
        let side = msvp.config.side(scale);
        let values = store.value(id).data().iter().map(|v| v.to_f64_lossy()).collect();
        emit(&scale.letter().to_string(), values, side, side)?;
    }
    let tape = Tape::<T>::no_grad();
    let combined = msvp.combined_prompt(&tape, store, h, w)?;
    emit("combined", combined.data().iter().map(|v| v.to_f64_lossy()).collect(), h, w)?;
    Ok(written)
}
