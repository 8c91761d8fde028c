//! Gradient-weighted attention rollout: which patches the class token draws on under a
//! given set of context tokens.

use std::fmt::Write as _;
use std::path::Path;

use crate::backbone::{ContextTokens, FrozenVit, Lexicon};
use crate::error::{Error, IoContext, Result};
use crate::image::{GrayImage, ImageTensor};
use crate::tensor::Mat;

/// Per-patch relevance on the patch grid, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RelevanceMap {
    pub grid_h: usize,
    pub grid_w: usize,
    pub weights: Vec<f64>,
    pub normalized: bool,
}

impl RelevanceMap {
    pub fn at(&self, gx: usize, gy: usize) -> f64 {
        self.weights[gy * self.grid_w + gx]
    }

    /// Nearest-neighbour upsampling to `width × height`, scaled so the largest weight maps
    /// to 255.
    pub fn to_heatmap(&self, width: usize, height: usize) -> GrayImage {
        let max = self.weights.iter().copied().fold(0.0, f64::max);
        let mut data = vec![0u8; width * height];
        for y in 0..height {
            for x in 0..width {
                let gx = x * self.grid_w / width;
                let gy = y * self.grid_h / height;
                let v = if max > 0.0 { self.at(gx, gy) / max } else { 0.0 };
                data[y * width + x] = (v * 255.0).round().clamp(0.0, 255.0) as u8;
            }
        }
        GrayImage { width, height, data }
    }

    /// One grid row per line, tab-separated, full precision.
    pub fn weights_text(&self) -> String {
        let mut out = String::new();
        for gy in 0..self.grid_h {
            let row: Vec<String> = (0..self.grid_w).map(|gx| format!("{:e}", self.at(gx, gy))).collect();
            let _ = writeln!(out, "{}", row.join("\t"));
        }
        out
    }

    /// Writes `<stem>.pgm` and `<stem>.txt` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str, image_size: usize) -> Result<()> {
        std::fs::create_dir_all(dir).at(dir)?;
        let pgm = dir.join(format!("{stem}.pgm"));
        std::fs::write(&pgm, self.to_heatmap(image_size, image_size).encode_pgm()).at(&pgm)?;
        let txt = dir.join(format!("{stem}.txt"));
        std::fs::write(&txt, self.weights_text()).at(&txt)?;
        Ok(())
    }
}

/// Rollout over attention probabilities and their gradients, each laid out per layer as
/// `heads × seq × seq`. Row 0 is the class token and rows `1..=n_patches` the patches;
/// any later rows (context tokens) take part in propagation and are dropped at the end.
pub fn rollout(
    attention: &[&[f64]],
    grads: &[&[f64]],
    heads: usize,
    seq: usize,
    n_patches: usize,
    grid: (usize, usize),
) -> Result<RelevanceMap> {
    if attention.len() != grads.len() {
        return Err(Error::Saliency(format!("{} attention layers but {} gradient layers", attention.len(), grads.len())));
    }
    if n_patches + 1 > seq || grid.0 * grid.1 != n_patches {
        return Err(Error::Saliency(format!("{n_patches} patches do not fit sequence {seq} and grid {grid:?}")));
    }
    let tt = seq * seq;
    let mut r = Mat::identity(seq);
    for (a, g) in attention.iter().zip(grads) {
        if a.len() != heads * tt || g.len() != heads * tt {
            return Err(Error::Saliency("attention block has the wrong size".into()));
        }
        let mut abar = Mat::zeros(seq, seq);
        for h in 0..heads {
            for (o, (&p, &d)) in abar.as_mut_slice().iter_mut().zip(a[h * tt..(h + 1) * tt].iter().zip(&g[h * tt..(h + 1) * tt])) {
                *o += (p * d).max(0.0) / heads as f64;
            }
        }
        let step = abar.matmul(&r);
        r.add_assign(&step);
    }
    let mut weights: Vec<f64> = r.row(0)[1..=n_patches].to_vec();
    let total: f64 = weights.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::Saliency("no positive relevance reaches the patches".into()));
    }
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(RelevanceMap { grid_h: grid.0, grid_w: grid.1, weights, normalized: true })
}

/// Relevance of each patch for one image under tokens `z`. A named target uses the
/// cosine to its lexicon vector as the explained scalar; an empty target uses the norm of
/// the class-token output.
pub fn relevance_map(vit: &FrozenVit, lexicon: &Lexicon, image: &ImageTensor, z: &ContextTokens, target: &str) -> Result<RelevanceMap> {
    let d = vit.width();
    let cache = vit.forward(&[image], &z.to_mat())?;
    let (_, grads) = if target.is_empty() {
        vit.backward_norm_with_attention(&cache)
    } else {
        let t = lexicon.vector(target).map_err(|_| Error::Saliency(format!("target {target:?} is not in the lexicon")))?;
        vit.backward_with_attention(&cache, &Mat::from_vec(1, d, t.to_vec()))
    };
    let cfg = vit.config();
    let heads = cfg.heads;
    let seq = cache.seq_len();
    let mut attn = Vec::with_capacity(cfg.depth);
    let mut g = Vec::with_capacity(cfg.depth);
    for l in 0..cfg.depth {
        let nq = cache.query_rows(l);
        attn.push(square(cache.attention(l, 0, heads), heads, nq, seq));
        g.push(square(&grads.per_layer[l], heads, nq, seq));
    }
    let attn: Vec<&[f64]> = attn.iter().map(Vec::as_slice).collect();
    let g: Vec<&[f64]> = g.iter().map(Vec::as_slice).collect();
    rollout(&attn, &g, heads, seq, cfg.num_patches(), (cfg.grid(), cfg.grid()))
}

/// Pads `heads × nq × seq` blocks to `heads × seq × seq` with zero rows.
fn square(rows: &[f64], heads: usize, nq: usize, seq: usize) -> Vec<f64> {
    let mut out = vec![0.0; heads * seq * seq];
    for h in 0..heads {
        out[h * seq * seq..h * seq * seq + nq * seq].copy_from_slice(&rows[h * nq * seq..(h + 1) * nq * seq]);
    }
    out
}

/// L1 distance between two maps on the same grid.
pub fn l1_distance(a: &RelevanceMap, b: &RelevanceMap) -> f64 {
    a.weights.iter().zip(&b.weights).map(|(x, y)| (x - y).abs()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{init_context_tokens, VitConfig};

    fn uniform(heads: usize, seq: usize) -> Vec<f64> {
        vec![1.0 / seq as f64; heads * seq * seq]
    }

    #[test]
    fn uniform_attention_gives_a_uniform_map() {
        let (heads, seq) = (2, 1 + 4 + 3);
        let a = uniform(heads, seq);
        let g = vec![1.0; heads * seq * seq];
        let map = rollout(&[&a, &a], &[&g, &g], heads, seq, 4, (2, 2)).unwrap();
        for w in &map.weights {
            assert!((w - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn saturating_attention_concentrates_on_its_patch() {
        let (heads, seq, hot) = (1, 1 + 4, 3);
        let mut a = vec![0.0; seq * seq];
        for i in 0..seq {
            for j in 0..seq {
                a[i * seq + j] = if j == hot { 0.96 } else { 0.01 };
            }
        }
        let g = vec![1.0; seq * seq];
        let map = rollout(&[&a, &a], &[&g, &g], heads, seq, 4, (2, 2)).unwrap();
        assert!(map.weights[hot - 1] >= 0.9, "{:?}", map.weights);
    }

    #[test]
    fn negative_gradients_are_clipped() {
        let (heads, seq) = (1, 3);
        let a = uniform(heads, seq);
        let g = vec![1.0, -1.0, 1.0, 1.0, -1.0, 1.0, 1.0, -1.0, 1.0];
        let map = rollout(&[&a], &[&g], heads, seq, 2, (1, 2)).unwrap();
        assert_eq!(map.weights, vec![0.0, 1.0]);
    }

    #[test]
    fn layer_count_mismatch_is_an_error() {
        let a = uniform(1, 3);
        assert!(rollout(&[&a, &a], &[&a], 1, 3, 2, (1, 2)).is_err());
    }

    fn setup() -> (FrozenVit, Lexicon, ImageTensor) {
        let vit = FrozenVit::new(VitConfig { image_size: 16, patch_size: 4, depth: 2, width: 16, heads: 2, mlp_ratio: 2, seed: 3 }).unwrap();
        let img = ImageTensor { width: 16, height: 16, data: (0..768).map(|i| ((i * 37 % 101) as f64) / 100.0).collect() };
        let e = crate::backbone::embed_images(&vit, &[&img], &Mat::zeros(0, 16)).unwrap();
        let lex = Lexicon::new(vec!["self".into()], e).unwrap();
        (vit, lex, img)
    }

    #[test]
    fn maps_are_normalized_and_deterministic() {
        let (vit, lex, img) = setup();
        let z = init_context_tokens("c", 3, 16, 1).unwrap();
        for target in ["", "self"] {
            let a = relevance_map(&vit, &lex, &img, &z, target).unwrap();
            let b = relevance_map(&vit, &lex, &img, &z, target).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.weights.len(), 16);
            assert!(a.weights.iter().all(|w| *w >= 0.0));
            assert!((a.weights.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn swapping_tokens_changes_the_map() {
        let (vit, lex, img) = setup();
        for seed in 0..5 {
            let za = init_context_tokens("a", 4, 16, 2 * seed).unwrap();
            let zb = init_context_tokens("b", 4, 16, 2 * seed + 1).unwrap();
            let a = relevance_map(&vit, &lex, &img, &za, "").unwrap();
            let b = relevance_map(&vit, &lex, &img, &zb, "").unwrap();
            assert!(l1_distance(&a, &b) > 1e-6);
        }
    }

    #[test]
    fn unknown_target_is_rejected() {
        let (vit, lex, img) = setup();
        let z = ContextTokens::empty("c", 16);
        assert!(matches!(relevance_map(&vit, &lex, &img, &z, "nope"), Err(Error::Saliency(_))));
    }

    #[test]
    fn heatmap_scales_the_peak_to_white() {
        let map = RelevanceMap { grid_h: 1, grid_w: 2, weights: vec![0.25, 0.75], normalized: true };
        let h = map.to_heatmap(4, 2);
        assert_eq!(h.data, vec![85, 85, 255, 255, 85, 85, 255, 255]);
        assert_eq!(map.weights_text().lines().count(), 1);
    }
}
