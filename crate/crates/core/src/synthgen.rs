//! Procedural multi-attribute scenes: glyphs of one shape and hue, repeated `count`
//! times over a grayscale textured background. Each attribute can serve as a context.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::{embed_images, EncoderPair, FrozenVit, Lexicon};
use crate::datamodel::{
    sample_labeled, split_known_novel, ContextColumn, ContextSpec, Item, MultiContextDataset, Payload, SplitConfig,
};
use crate::error::{Error, Result};
use crate::image::{ImageTensor, RgbImage};
use crate::tensor::Mat;

/// Attribute palettes. Names are unique across attributes so one lexicon can hold them all.
pub const COLORS: [(&str, f64); 12] = [
    ("red", 0.0),
    ("orange", 30.0),
    ("yellow", 60.0),
    ("lime", 90.0),
    ("green", 120.0),
    ("teal", 150.0),
    ("cyan", 180.0),
    ("azure", 210.0),
    ("blue", 240.0),
    ("violet", 270.0),
    ("magenta", 300.0),
    ("rose", 330.0),
];
pub const SHAPES: [&str; 12] = [
    "circle", "square", "triangle", "diamond", "cross", "ring", "frame", "hbar", "vbar", "saltire", "semicircle", "tee",
];
pub const COUNTS: [&str; 8] = ["one", "two", "three", "four", "five", "six", "seven", "eight"];
pub const TEXTURES: [&str; 12] = [
    "plain", "hstripes", "vstripes", "checker", "dots", "grid", "bigchecker", "thickhstripes", "diagonal", "antidiagonal",
    "gradient", "thickvstripes",
];

pub const DEFAULT_TEXTURE_CONTRAST: u8 = 20;
pub const DEFAULT_BACKGROUND_JITTER: u8 = 5;
const BACKGROUND_BASE: u8 = 60;

/// Minimum empty pixels between two glyph bounding boxes.
const GLYPH_GAP: usize = 2;
const GLYPH_TRIES: usize = 50;
const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Attribute {
    Color,
    Shape,
    Count,
    Texture,
}

impl Attribute {
    pub const ALL: [Attribute; 4] = [Attribute::Color, Attribute::Shape, Attribute::Count, Attribute::Texture];

    pub fn palette(self) -> Vec<&'static str> {
        match self {
            Attribute::Color => COLORS.iter().map(|c| c.0).collect(),
            Attribute::Shape => SHAPES.to_vec(),
            Attribute::Count => COUNTS.to_vec(),
            Attribute::Texture => TEXTURES.to_vec(),
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Attribute::Color => "color",
            Attribute::Shape => "shape",
            Attribute::Count => "count",
            Attribute::Texture => "texture",
        })
    }
}

impl FromStr for Attribute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "color" => Ok(Attribute::Color),
            "shape" => Ok(Attribute::Shape),
            "count" => Ok(Attribute::Count),
            "texture" => Ok(Attribute::Texture),
            _ => Err(Error::Synth(format!("unknown attribute {s:?}"))),
        }
    }
}

/// One value per attribute.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SceneAttrs {
    pub color: String,
    pub shape: String,
    pub count: usize,
    pub texture: String,
}

impl SceneAttrs {
    pub fn get(&self, a: Attribute) -> String {
        match a {
            Attribute::Color => self.color.clone(),
            Attribute::Shape => self.shape.clone(),
            Attribute::Count => COUNTS[self.count - 1].to_string(),
            Attribute::Texture => self.texture.clone(),
        }
    }

    fn set(&mut self, a: Attribute, value: &str) -> Result<()> {
        if !a.palette().contains(&value) {
            return Err(Error::Synth(format!("{value:?} is not a renderable {a}")));
        }
        match a {
            Attribute::Color => self.color = value.to_string(),
            Attribute::Shape => self.shape = value.to_string(),
            Attribute::Count => self.count = COUNTS.iter().position(|c| *c == value).expect("validated") + 1,
            Attribute::Texture => self.texture = value.to_string(),
        }
        Ok(())
    }

    fn defaults() -> Self {
        Self { color: "red".into(), shape: "circle".into(), count: 1, texture: "plain".into() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub image_size: usize,
    /// Glyph bounding-box side in pixels; `0` selects `5 · image_size / 16`.
    pub glyph_size: usize,
    pub contexts: Vec<(Attribute, Vec<String>)>,
    pub n_images: usize,
    pub probe_per_class: usize,
    pub seed: u64,
    /// Draw non-context attributes independently per glyph instead of holding them at
    /// their defaults.
    pub per_object_variation: bool,
    /// Candidate vocabulary size as a multiple of the novel class count (capped by the
    /// palette).
    pub vocab_multiplier: usize,
    /// Gray-level difference between the two tones of a background texture.
    pub texture_contrast: u8,
    /// Half-width of the per-image jitter of the background base gray level.
    pub background_jitter: u8,
    pub split: SplitConfig,
}

impl Default for GenConfig {
    fn default() -> Self {
        let take = |a: Attribute, n: usize| (a, a.palette()[..n].iter().map(|s| s.to_string()).collect());
        Self {
            image_size: 32,
            glyph_size: 0,
            contexts: vec![take(Attribute::Color, 4), take(Attribute::Shape, 4), take(Attribute::Count, 4)],
            n_images: 400,
            probe_per_class: 8,
            seed: 1,
            per_object_variation: false,
            vocab_multiplier: 4,
            texture_contrast: DEFAULT_TEXTURE_CONTRAST,
            background_jitter: DEFAULT_BACKGROUND_JITTER,
            split: SplitConfig { known_fraction: 0.5, labeled_per_class: 16, seed: 1 },
        }
    }
}

impl GenConfig {
    pub fn glyph_px(&self) -> usize {
        if self.glyph_size == 0 {
            (5 * self.image_size / 16).max(3)
        } else {
            self.glyph_size
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.contexts.is_empty() {
            return Err(Error::Synth("no contexts configured".into()));
        }
        let mut seen = BTreeSet::new();
        for (a, classes) in &self.contexts {
            if !seen.insert(*a) {
                return Err(Error::Synth(format!("attribute {a} listed twice")));
            }
            if classes.len() < 2 {
                return Err(Error::Synth(format!("context {a} needs at least two classes")));
            }
            let palette = a.palette();
            for c in classes {
                if !palette.contains(&c.as_str()) {
                    return Err(Error::Synth(format!("{c:?} is not a renderable {a}")));
                }
            }
            if self.n_images < classes.len() {
                return Err(Error::Synth(format!("{} images cannot cover {} {a} classes", self.n_images, classes.len())));
            }
        }
        Ok(())
    }
}

/// Held-out lexicon-calibration images, grouped by the class name they exemplify.
#[derive(Clone, Debug, Default)]
pub struct ProbeSet {
    pub names: Vec<String>,
    pub images: Vec<Vec<RgbImage>>,
}

fn mix(seed: u64, stream: u64, index: u64) -> u64 {
    // splitmix64 over the combined key
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ index.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const STREAM_IMAGE: u64 = 1;
const STREAM_PROBE: u64 = 2;
const STREAM_LABELS: u64 = 3;
const STREAM_VOCAB: u64 = 4;

fn hue_to_rgb(hue_deg: f64) -> [u8; 3] {
    let h = (hue_deg.rem_euclid(360.0)) / 60.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    let c = |v: f64| (v * 255.0).round() as u8;
    [c(r), c(g), c(b)]
}

pub fn color_hue(name: &str) -> Option<f64> {
    COLORS.iter().find(|c| c.0 == name).map(|c| c.1)
}

/// Whether local coordinates `(x, y) ∈ [-1, 1]²` (y pointing down) fall inside a glyph.
fn glyph_contains(shape: &str, x: f64, y: f64) -> bool {
    let (ax, ay) = (x.abs(), y.abs());
    match shape {
        "circle" => x * x + y * y <= 1.0,
        "square" => ax <= 0.8 && ay <= 0.8,
        "triangle" => y <= 0.9 && y >= -0.9 && ax <= (y + 0.9) / 1.8,
        "diamond" => ax + ay <= 1.0,
        "cross" => (ax <= 0.3 && ay <= 1.0) || (ay <= 0.3 && ax <= 1.0),
        "ring" => {
            let r2 = x * x + y * y;
            (0.3..=1.0).contains(&r2)
        }
        "frame" => {
            let m = ax.max(ay);
            (0.5..=0.95).contains(&m)
        }
        "hbar" => ay <= 0.35 && ax <= 1.0,
        "vbar" => ax <= 0.35 && ay <= 1.0,
        "saltire" => (ax - ay).abs() <= 0.4 && ax <= 1.0 && ay <= 1.0,
        "semicircle" => x * x + y * y <= 1.0 && y <= 0.15,
        "tee" => (y <= -0.4 && y >= -1.0 && ax <= 1.0) || (ax <= 0.3 && y >= -1.0 && y <= 1.0),
        _ => false,
    }
}

/// Rasterised glyph mask of side `size`.
pub fn glyph_mask(shape: &str, size: usize) -> Vec<bool> {
    let mut mask = vec![false; size * size];
    for py in 0..size {
        for px in 0..size {
            let x = 2.0 * (px as f64 + 0.5) / size as f64 - 1.0;
            let y = 2.0 * (py as f64 + 0.5) / size as f64 - 1.0;
            mask[py * size + px] = glyph_contains(shape, x, y);
        }
    }
    mask
}

fn texture_value(texture: &str, x: usize, y: usize, size: usize) -> bool {
    match texture {
        "plain" => false,
        "hstripes" => (y / 2) % 2 == 0,
        "vstripes" => (x / 2) % 2 == 0,
        "checker" => (x / 2 + y / 2) % 2 == 0,
        "dots" => x % 4 == 1 && y % 4 == 1,
        "diagonal" => (x + y) % 4 < 2,
        "antidiagonal" => (x + size - y) % 4 < 2,
        "grid" => x % 4 == 0 || y % 4 == 0,
        "gradient" => x * 2 >= size,
        "bigchecker" => (x / 4 + y / 4) % 2 == 0,
        "thickhstripes" => (y / 4) % 2 == 0,
        "thickvstripes" => (x / 4) % 2 == 0,
        _ => false,
    }
}

/// Places `count` glyph boxes of side `glyph` in a `size` canvas without overlap.
fn place_glyphs(count: usize, glyph: usize, size: usize, rng: &mut ChaCha8Rng) -> Result<Vec<(usize, usize)>> {
    if glyph > size {
        return Err(Error::Synth(format!("glyph of {glyph}px does not fit a {size}px image")));
    }
    if count == 1 {
        let off = (size - glyph) / 2;
        return Ok(vec![(off, off)]);
    }
    let span = size - glyph;
    let clear = |p: (usize, usize), q: &(usize, usize)| p.0.abs_diff(q.0) >= glyph + GLYPH_GAP || p.1.abs_diff(q.1) >= glyph + GLYPH_GAP;
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let mut boxes: Vec<(usize, usize)> = Vec::with_capacity(count);
        for _ in 0..count * GLYPH_TRIES {
            let p = (rng.random_range(0..=span), rng.random_range(0..=span));
            if boxes.iter().all(|q| clear(p, q)) {
                boxes.push(p);
                if boxes.len() == count {
                    return Ok(boxes);
                }
            }
        }
    }
    Err(Error::Synth(format!(
        "cannot place {count} glyphs of {glyph}px in a {size}px image within {MAX_PLACEMENT_ATTEMPTS} attempts"
    )))
}

/// Renders one scene. `glyph_size` of `0` selects the default for the image size.
pub fn render_image(attrs: &SceneAttrs, size: usize, glyph_size: usize, seed: u64) -> Result<RgbImage> {
    render_scene(attrs, size, glyph_size, seed, None, Style::default())
}

/// Per-object overrides of color/shape for scenes with per-object variation.
type ObjectOverrides = Vec<(String, String)>;

/// Background tone settings shared by every image of a dataset.
#[derive(Clone, Copy, Debug)]
struct Style {
    texture_contrast: u8,
    background_jitter: u8,
}

impl Default for Style {
    fn default() -> Self {
        Self { texture_contrast: DEFAULT_TEXTURE_CONTRAST, background_jitter: DEFAULT_BACKGROUND_JITTER }
    }
}

impl From<&GenConfig> for Style {
    fn from(cfg: &GenConfig) -> Self {
        Self { texture_contrast: cfg.texture_contrast, background_jitter: cfg.background_jitter }
    }
}

fn render_scene(
    attrs: &SceneAttrs,
    size: usize,
    glyph_size: usize,
    seed: u64,
    overrides: Option<&ObjectOverrides>,
    style: Style,
) -> Result<RgbImage> {
    let hue = color_hue(&attrs.color).ok_or_else(|| Error::Synth(format!("{:?} is not a renderable color", attrs.color)))?;
    if !SHAPES.contains(&attrs.shape.as_str()) {
        return Err(Error::Synth(format!("{:?} is not a renderable shape", attrs.shape)));
    }
    if !TEXTURES.contains(&attrs.texture.as_str()) {
        return Err(Error::Synth(format!("{:?} is not a renderable texture", attrs.texture)));
    }
    if attrs.count == 0 || attrs.count > COUNTS.len() {
        return Err(Error::Synth(format!("count {} outside 1..={}", attrs.count, COUNTS.len())));
    }
    let glyph = if glyph_size == 0 { (5 * size / 16).max(3) } else { glyph_size };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // per-image background levels keep otherwise identical scenes distinct
    let jitter = style.background_jitter.min(BACKGROUND_BASE);
    let base: u8 = rng.random_range(BACKGROUND_BASE - jitter..=BACKGROUND_BASE + jitter);
    let accent: u8 = base.saturating_add(style.texture_contrast);
    let boxes = place_glyphs(attrs.count, glyph, size, &mut rng)?;

    let mut img = RgbImage::new(size, size);
    for y in 0..size {
        for x in 0..size {
            let v = if texture_value(&attrs.texture, x, y, size) { accent } else { base };
            img.put(x, y, [v, v, v]);
        }
    }
    for (k, &(ox, oy)) in boxes.iter().enumerate() {
        let (fill, shape) = match overrides.and_then(|o| o.get(k)) {
            Some((c, s)) => (hue_to_rgb(color_hue(c).unwrap_or(hue)), s.as_str()),
            None => (hue_to_rgb(hue), attrs.shape.as_str()),
        };
        let mask = glyph_mask(shape, glyph);
        for gy in 0..glyph {
            for gx in 0..glyph {
                if mask[gy * glyph + gx] {
                    img.put(ox + gx, oy + gy, fill);
                }
            }
        }
    }
    Ok(img)
}

/// Scene attributes for the non-context attributes when each glyph varies independently.
fn object_overrides(cfg: &GenConfig, attrs: &SceneAttrs, rng: &mut ChaCha8Rng) -> Option<ObjectOverrides> {
    if !cfg.per_object_variation {
        return None;
    }
    let vary_color = !cfg.contexts.iter().any(|(a, _)| *a == Attribute::Color);
    let vary_shape = !cfg.contexts.iter().any(|(a, _)| *a == Attribute::Shape);
    Some(
        (0..attrs.count)
            .map(|_| {
                let c = if vary_color { COLORS[rng.random_range(0..COLORS.len())].0.to_string() } else { attrs.color.clone() };
                let s = if vary_shape { SHAPES[rng.random_range(0..SHAPES.len())].to_string() } else { attrs.shape.clone() };
                (c, s)
            })
            .collect(),
    )
}

fn image_id(i: usize) -> String {
    format!("images/{i:05}.ppm")
}

/// Builds the dataset and its held-out probe set. The dataset carries its known/novel
/// split (candidate vocabularies include distractor names drawn from unused palette
/// values) and sampled labeled pools.
pub fn generate_dataset(cfg: &GenConfig) -> Result<(MultiContextDataset, ProbeSet)> {
    cfg.validate()?;
    let n = cfg.n_images;
    let glyph = cfg.glyph_px();

    // balanced labels: an independent permutation per context, classes assigned cyclically
    let mut assignments: Vec<Vec<String>> = Vec::with_capacity(cfg.contexts.len());
    for (k, (_, classes)) in cfg.contexts.iter().enumerate() {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(cfg.seed, STREAM_LABELS, k as u64)));
        assignments.push(perm.iter().map(|&p| classes[p % classes.len()].clone()).collect());
    }

    let mut items = Vec::with_capacity(n);
    for i in 0..n {
        let mut attrs = SceneAttrs::defaults();
        for (k, (a, _)) in cfg.contexts.iter().enumerate() {
            attrs.set(*a, &assignments[k][i])?;
        }
        let img_seed = mix(cfg.seed, STREAM_IMAGE, i as u64);
        let mut orng = ChaCha8Rng::seed_from_u64(img_seed ^ 0x5151);
        let overrides = object_overrides(cfg, &attrs, &mut orng);
        let img = render_scene(&attrs, cfg.image_size, glyph, img_seed, overrides.as_ref(), cfg.into())?;
        items.push(Item { id: image_id(i), payload: Payload::Image(img) });
    }
    let contexts = cfg
        .contexts
        .iter()
        .zip(assignments)
        .map(|((a, _), labels)| ContextColumn {
            id: a.to_string(),
            labels: labels.into_iter().map(Some).collect(),
            spec: None,
            labeled: BTreeSet::new(),
        })
        .collect();
    let mut ds = MultiContextDataset { items, contexts, split_seed: None };

    let probes = generate_probes(cfg)?;
    let class_lists: Vec<(String, Vec<String>)> = cfg.contexts.iter().map(|(a, c)| (a.to_string(), c.clone())).collect();
    let splits = split_known_novel(&class_lists, &cfg.split)?;
    for (k, ((a, classes), (known, novel))) in cfg.contexts.iter().zip(splits).enumerate() {
        let mut distractors: Vec<String> =
            a.palette()
            .into_iter()
            .filter(|p| !classes.iter().any(|c| c == p) && probes.names.iter().any(|n| n == p))
            .map(str::to_string)
            .collect();
        distractors.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(cfg.seed, STREAM_VOCAB, k as u64)));
        let budget = (cfg.vocab_multiplier.max(1) * novel.len()).saturating_sub(novel.len());
        let mut candidates: Vec<String> = novel.iter().cloned().chain(distractors.into_iter().take(budget)).collect();
        candidates.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(cfg.seed, STREAM_VOCAB, 100 + k as u64)));
        ds.set_spec(ContextSpec::new(a.to_string(), known, novel.len(), candidates)?)?;
    }
    let ds = sample_labeled(&ds, &cfg.split)?;
    Ok((ds, probes))
}

/// Probe images for every palette value of every context attribute. Other context
/// attributes are drawn from their configured class lists.
pub fn generate_probes(cfg: &GenConfig) -> Result<ProbeSet> {
    let glyph = cfg.glyph_px();
    let mut set = ProbeSet::default();
    let mut counter: u64 = 0;
    for (k, (a, _)) in cfg.contexts.iter().enumerate() {
        for value in a.palette() {
            let mut imgs = Vec::with_capacity(cfg.probe_per_class);
            for _ in 0..cfg.probe_per_class {
                let seed = mix(cfg.seed, STREAM_PROBE, counter);
                counter += 1;
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5);
                let mut attrs = SceneAttrs::defaults();
                for (j, (b, classes)) in cfg.contexts.iter().enumerate() {
                    if j == k {
                        attrs.set(*b, value)?;
                    } else {
                        attrs.set(*b, &classes[rng.random_range(0..classes.len())])?;
                    }
                }
                let overrides = object_overrides(cfg, &attrs, &mut rng);
                match render_scene(&attrs, cfg.image_size, glyph, seed, overrides.as_ref(), cfg.into()) {
                    Ok(img) => imgs.push(img),
                    // palette values that cannot be drawn at this size get no lexicon entry
                    Err(Error::Synth(_)) if *a == Attribute::Count => break,
                    Err(e) => return Err(e),
                }
            }
            if imgs.len() == cfg.probe_per_class && !imgs.is_empty() {
                set.names.push(value.to_string());
                set.images.push(imgs);
            }
        }
    }
    Ok(set)
}

/// Normalised mean of each class's probe embeddings.
pub fn lexicon_from_embeddings(names: &[String], groups: &[Mat]) -> Result<Lexicon> {
    let Some(first) = groups.first() else {
        return Lexicon::new(Vec::new(), Mat::zeros(0, 0));
    };
    let d = first.cols();
    let mut rows = Vec::with_capacity(groups.len());
    for (name, g) in names.iter().zip(groups) {
        if g.rows() == 0 {
            return Err(Error::Synth(format!("no probes for class {name:?}")));
        }
        let mut mean = vec![0.0; d];
        for r in 0..g.rows() {
            for (m, v) in mean.iter_mut().zip(g.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= g.rows() as f64);
        let nrm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nrm < 1e-8 {
            return Err(Error::Synth(format!("degenerate lexicon: probe mean for {name:?} has norm {nrm:e}")));
        }
        rows.push(mean.into_iter().map(|v| v / nrm).collect());
    }
    Lexicon::new(names.to_vec(), Mat::from_rows(&rows))
}

/// Lexicon from frozen-backbone (zero-token) embeddings of the probes.
pub fn calibrate_lexicon(vit: &FrozenVit, probes: &ProbeSet) -> Result<Lexicon> {
    let empty = Mat::zeros(0, vit.width());
    let mut groups = Vec::with_capacity(probes.names.len());
    for imgs in &probes.images {
        let tensors: Vec<ImageTensor> = imgs.iter().map(RgbImage::to_tensor).collect();
        let refs: Vec<&ImageTensor> = tensors.iter().collect();
        groups.push(embed_images(vit, &refs, &empty)?);
    }
    lexicon_from_embeddings(&probes.names, &groups)
}

/// Convenience: frozen encoder plus its calibrated lexicon.
pub fn build_encoder_pair(vit: FrozenVit, probes: &ProbeSet) -> Result<EncoderPair> {
    let lexicon = calibrate_lexicon(&vit, probes)?;
    EncoderPair::new(vit, lexicon)
}

/// Independent pixel-level reading of a rendered scene: the hue class of the saturated
/// pixels and the number of 8-connected saturated components.
pub fn pixel_oracle(img: &RgbImage) -> (Option<&'static str>, usize) {
    let (w, h) = (img.width, img.height);
    let saturated = |x: usize, y: usize| {
        let [r, g, b] = img.pixel(x, y);
        r.max(g).max(b) - r.min(g).min(b) > 60
    };
    let mut hist = [0usize; 12];
    let mut seen = vec![false; w * h];
    let mut components = 0;
    for y in 0..h {
        for x in 0..w {
            if !saturated(x, y) {
                continue;
            }
            let [r, g, b] = img.pixel(x, y);
            let hue = rgb_hue(r, g, b);
            let bucket = ((hue + 15.0).rem_euclid(360.0) / 30.0) as usize % 12;
            hist[bucket] += 1;
            if seen[y * w + x] {
                continue;
            }
            components += 1;
            let mut stack = vec![(x, y)];
            seen[y * w + x] = true;
            while let Some((cx, cy)) = stack.pop() {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let nx = cx as i64 + dx;
                        let ny = cy as i64 + dy;
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let (nx, ny) = (nx as usize, ny as usize);
                        if !seen[ny * w + nx] && saturated(nx, ny) {
                            seen[ny * w + nx] = true;
                            stack.push((nx, ny));
                        }
                    }
                }
            }
        }
    }
    let color = hist.iter().enumerate().max_by_key(|(i, c)| (**c, std::cmp::Reverse(*i))).filter(|(_, c)| **c > 0).map(|(i, _)| COLORS[i].0);
    (color, components)
}

fn rgb_hue(r: u8, g: u8, b: u8) -> f64 {
    let (r, g, b) = (f64::from(r), f64::from(g), f64::from(b));
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let c = max - min;
    if c == 0.0 {
        return 0.0;
    }
    let h = if max == r {
        ((g - b) / c).rem_euclid(6.0)
    } else if max == g {
        (b - r) / c + 2.0
    } else {
        (r - g) / c + 4.0
    };
    h * 60.0
}
