//! A small pre-norm vision transformer whose weights are drawn once from a seed and never
//! updated. Extra input tokens may be appended after the patch tokens; gradients are
//! propagated back to those tokens only.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::tensor::{gemm, gemm_raw, softmax_inplace, Mat};

const LN_EPS: f64 = 1e-5;
const PIXEL_MEAN: f64 = 0.5;
const PIXEL_STD: f64 = 0.25;

/// Architecture and weight seed of the frozen encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VitConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub depth: usize,
    pub width: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub seed: u64,
}

impl Default for VitConfig {
    fn default() -> Self {
        Self { image_size: 32, patch_size: 8, depth: 4, width: 64, heads: 4, mlp_ratio: 4, seed: 0 }
    }
}

impl VitConfig {
    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn patch_dim(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.image_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(Error::Backbone(format!(
                "image size {} is not divisible by patch size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.depth == 0 || self.width == 0 || self.heads == 0 || self.width % self.heads != 0 {
            return Err(Error::Backbone(format!(
                "width {} must be a positive multiple of heads {}",
                self.width, self.heads
            )));
        }
        if self.mlp_ratio == 0 {
            return Err(Error::Backbone("mlp ratio must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Block {
    ln1_g: Vec<f64>,
    ln1_b: Vec<f64>,
    w_qkv: Mat,
    b_qkv: Vec<f64>,
    w_out: Mat,
    b_out: Vec<f64>,
    ln2_g: Vec<f64>,
    ln2_b: Vec<f64>,
    w_fc: Mat,
    b_fc: Vec<f64>,
    w_proj: Mat,
    b_proj: Vec<f64>,
}

/// Frozen patch transformer. There is no API that mutates the weights after construction.
#[derive(Clone, Debug)]
pub struct FrozenVit {
    cfg: VitConfig,
    w_patch: Mat,
    b_patch: Vec<f64>,
    cls: Vec<f64>,
    pos: Mat,
    blocks: Vec<Block>,
    lnf_g: Vec<f64>,
    lnf_b: Vec<f64>,
    digest: [u8; 32],
}

struct LnCache {
    xhat: Mat,
    rstd: Vec<f64>,
}

struct BlockCache {
    /// Query rows per item: the whole sequence, or only the class token in the last block.
    nq: usize,
    ln1: LnCache,
    qkv: Mat,
    /// Softmax probabilities, `batch × heads × nq × T`.
    attn: Vec<f64>,
    ln2: LnCache,
    /// MLP pre-activations.
    fc: Mat,
}

/// Everything the backward pass needs from one batched forward pass.
pub struct ForwardCache {
    batch: usize,
    seq: usize,
    n_tokens: usize,
    blocks: Vec<BlockCache>,
    lnf: LnCache,
    pooled_norm: Vec<f64>,
    embeddings: Mat,
}

impl ForwardCache {
    pub fn embeddings(&self) -> &Mat {
        &self.embeddings
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn seq_len(&self) -> usize {
        self.seq
    }

    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    /// Number of query rows kept for `layer`. The last block only updates the class
    /// token, so it keeps a single row.
    pub fn query_rows(&self, layer: usize) -> usize {
        self.blocks[layer].nq
    }

    /// Attention probabilities of one layer for one batch item, `heads × query_rows × T`.
    pub fn attention(&self, layer: usize, item: usize, heads: usize) -> &[f64] {
        let ts = self.blocks[layer].nq * self.seq;
        &self.blocks[layer].attn[item * heads * ts..(item + 1) * heads * ts]
    }
}

/// Gradients of the attention probabilities collected during a backward pass, laid out
/// like [`ForwardCache::attention`].
pub struct AttentionGrads {
    pub per_layer: Vec<Vec<f64>>,
}

impl FrozenVit {
    pub fn new(cfg: VitConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.width;
        let hidden = d * cfg.mlp_ratio;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut gauss = |rows: usize, cols: usize, std: f64| -> Mat {
            let normal = Normal::new(0.0, std).expect("finite std");
            Mat::from_vec(rows, cols, (0..rows * cols).map(|_| normal.sample(&mut rng)).collect())
        };
        let fan = |n: usize| 1.0 / (n as f64).sqrt();

        let w_patch = gauss(cfg.patch_dim(), d, fan(cfg.patch_dim()));
        let cls = gauss(1, d, 1.0).into_vec();
        let pos = gauss(cfg.num_patches() + 1, d, 0.5);
        let mut blocks = Vec::with_capacity(cfg.depth);
        for _ in 0..cfg.depth {
            blocks.push(Block {
                ln1_g: vec![1.0; d],
                ln1_b: vec![0.0; d],
                w_qkv: gauss(d, 3 * d, fan(d)),
                b_qkv: vec![0.0; 3 * d],
                w_out: gauss(d, d, fan(d)),
                b_out: vec![0.0; d],
                ln2_g: vec![1.0; d],
                ln2_b: vec![0.0; d],
                w_fc: gauss(d, hidden, fan(d)),
                b_fc: vec![0.0; hidden],
                w_proj: gauss(hidden, d, fan(hidden)),
                b_proj: vec![0.0; d],
            });
        }
        let mut vit = Self {
            cfg,
            w_patch,
            b_patch: vec![0.0; d],
            cls,
            pos,
            blocks,
            lnf_g: vec![1.0; d],
            lnf_b: vec![0.0; d],
            digest: [0; 32],
        };
        vit.digest = vit.compute_digest();
        Ok(vit)
    }

    pub fn config(&self) -> &VitConfig {
        &self.cfg
    }

    pub fn width(&self) -> usize {
        self.cfg.width
    }

    /// Digest recorded at construction.
    pub fn digest(&self) -> [u8; 32] {
        self.digest
    }

    pub fn digest_hex(&self) -> String {
        hex(&self.digest)
    }

    /// Recomputes SHA-256 over the architecture and every weight.
    pub fn compute_digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        let c = &self.cfg;
        for v in [c.image_size, c.patch_size, c.depth, c.width, c.heads, c.mlp_ratio] {
            h.update((v as u64).to_le_bytes());
        }
        h.update(c.seed.to_le_bytes());
        let mut feed = |xs: &[f64]| {
            for x in xs {
                h.update(x.to_le_bytes());
            }
        };
        feed(self.w_patch.as_slice());
        feed(&self.b_patch);
        feed(&self.cls);
        feed(self.pos.as_slice());
        for b in &self.blocks {
            for part in [&b.ln1_g, &b.ln1_b, &b.b_qkv, &b.b_out, &b.ln2_g, &b.ln2_b, &b.b_fc, &b.b_proj] {
                feed(part);
            }
            for part in [&b.w_qkv, &b.w_out, &b.w_fc, &b.w_proj] {
                feed(part.as_slice());
            }
        }
        feed(&self.lnf_g);
        feed(&self.lnf_b);
        h.finalize().into()
    }

    /// Re-hashes the weights and compares against the construction-time digest.
    pub fn verify_integrity(&self) -> Result<()> {
        if self.compute_digest() != self.digest {
            return Err(Error::Integrity("backbone weights changed since construction".into()));
        }
        Ok(())
    }

    fn patchify(&self, images: &[&ImageTensor]) -> Result<Mat> {
        let p = self.cfg.patch_size;
        let g = self.cfg.grid();
        let n = self.cfg.num_patches();
        let mut out = Mat::zeros(images.len() * n, self.cfg.patch_dim());
        for (b, img) in images.iter().enumerate() {
            if img.width != self.cfg.image_size || img.height != self.cfg.image_size {
                return Err(Error::Backbone(format!(
                    "image is {}x{}, encoder expects {}x{}",
                    img.width, img.height, self.cfg.image_size, self.cfg.image_size
                )));
            }
            for gy in 0..g {
                for gx in 0..g {
                    let row = out.row_mut(b * n + gy * g + gx);
                    let mut k = 0;
                    for c in 0..3 {
                        for dy in 0..p {
                            for dx in 0..p {
                                let v = img.at(gx * p + dx, gy * p + dy, c);
                                row[k] = (v - PIXEL_MEAN) / PIXEL_STD;
                                k += 1;
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Batched forward pass over `[cls, patches, tokens]`. Returns the unit-norm pooled
    /// embeddings together with the activation cache.
    pub fn forward(&self, images: &[&ImageTensor], tokens: &Mat) -> Result<ForwardCache> {
        let d = self.cfg.width;
        if tokens.cols() != d && tokens.rows() > 0 {
            return Err(Error::Backbone(format!("context tokens have width {}, encoder width is {d}", tokens.cols())));
        }
        let bsz = images.len();
        let np = self.cfg.num_patches();
        let m = tokens.rows();
        let seq = 1 + np + m;

        let patch_emb = self.patchify(images)?.matmul(&self.w_patch);
        let mut x = Mat::zeros(bsz * seq, d);
        for b in 0..bsz {
            let base = b * seq;
            let row = x.row_mut(base);
            for j in 0..d {
                row[j] = self.cls[j] + self.pos.get(0, j);
            }
            for i in 0..np {
                let src = patch_emb.row(b * np + i);
                let pos = self.pos.row(i + 1);
                let dst = x.row_mut(base + 1 + i);
                for j in 0..d {
                    dst[j] = src[j] + self.b_patch[j] + pos[j];
                }
            }
            for t in 0..m {
                x.row_mut(base + 1 + np + t).copy_from_slice(tokens.row(t));
            }
        }

        let mut caches = Vec::with_capacity(self.blocks.len());
        let last = self.blocks.len() - 1;
        for (li, block) in self.blocks.iter().enumerate() {
            let nq = if li == last { 1 } else { seq };
            let (next, cache) = self.block_forward(block, &x, bsz, seq, nq);
            if !next.is_finite() {
                return Err(Error::Numeric(format!("block {li}")));
            }
            x = next;
            caches.push(cache);
        }

        // after the last block only the class-token rows remain
        let (lnf_out, lnf) = layer_norm(&x, &self.lnf_g, &self.lnf_b);
        let mut embeddings = lnf_out;
        let mut pooled_norm = Vec::with_capacity(bsz);
        for b in 0..bsz {
            let row = embeddings.row_mut(b);
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(n.is_finite() && n > 0.0) {
                return Err(Error::Numeric("pooled embedding".into()));
            }
            row.iter_mut().for_each(|v| *v /= n);
            pooled_norm.push(n);
        }
        Ok(ForwardCache { batch: bsz, seq, n_tokens: m, blocks: caches, lnf, pooled_norm, embeddings })
    }

    /// One block. Only the first `nq` rows of each item are updated and returned; every
    /// row still serves as a key and value.
    fn block_forward(&self, blk: &Block, x: &Mat, bsz: usize, seq: usize, nq: usize) -> (Mat, BlockCache) {
        let d = self.cfg.width;
        let heads = self.cfg.heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let (ln1_out, ln1) = layer_norm(x, &blk.ln1_g, &blk.ln1_b);
        let mut qkv = ln1_out.matmul(&blk.w_qkv);
        qkv.add_row_vector(&blk.b_qkv);

        let ts = nq * seq;
        let mut attn = vec![0.0; bsz * heads * ts];
        let mut attn_out = Mat::zeros(bsz * nq, d);
        let q3 = 3 * d;
        for b in 0..bsz {
            let qkv_b = &qkv.as_slice()[b * seq * q3..(b + 1) * seq * q3];
            for h in 0..heads {
                let a = &mut attn[(b * heads + h) * ts..(b * heads + h + 1) * ts];
                // scores = Q Kᵀ · scale
                gemm_raw(scale, &qkv_b[h * dh..], (nq, dh), (q3, 1), &qkv_b[d + h * dh..], seq, (1, q3), 0.0, a, seq);
                for row in a.chunks_exact_mut(seq) {
                    softmax_inplace(row);
                }
                let out = &mut attn_out.as_mut_slice()[b * nq * d + h * dh..];
                gemm_raw(1.0, a, (nq, seq), (seq, 1), &qkv_b[2 * d + h * dh..], dh, (q3, 1), 0.0, out, d);
            }
        }

        let mut hres = attn_out.matmul(&blk.w_out);
        hres.add_row_vector(&blk.b_out);
        for b in 0..bsz {
            for i in 0..nq {
                for (o, v) in hres.row_mut(b * nq + i).iter_mut().zip(x.row(b * seq + i)) {
                    *o += v;
                }
            }
        }

        let (ln2_out, ln2) = layer_norm(&hres, &blk.ln2_g, &blk.ln2_b);
        let mut fc = ln2_out.matmul(&blk.w_fc);
        fc.add_row_vector(&blk.b_fc);
        let act = Mat::from_vec(fc.rows(), fc.cols(), fc.as_slice().iter().map(|&v| gelu(v)).collect());
        let mut out = act.matmul(&blk.w_proj);
        out.add_row_vector(&blk.b_proj);
        out.add_assign(&hres);

        (out, BlockCache { nq, ln1, qkv, attn, ln2, fc })
    }

    /// Gradient of `Σ_b ⟨d_emb[b], emb[b]⟩` with respect to the appended tokens, summed
    /// over the batch in index order.
    pub fn backward_tokens(&self, cache: &ForwardCache, d_emb: &Mat) -> Mat {
        self.backward(cache, Some(d_emb), false).0
    }

    /// Like [`backward_tokens`](Self::backward_tokens) but also returns the gradient of
    /// the scalar with respect to every attention probability.
    pub fn backward_with_attention(&self, cache: &ForwardCache, d_emb: &Mat) -> (Mat, AttentionGrads) {
        let (dz, grads) = self.backward(cache, Some(d_emb), true);
        (dz, AttentionGrads { per_layer: grads })
    }

    /// Gradients of `Σ_b |y_b|`, the norm of the class-token output before the final
    /// L2 normalisation, with respect to the tokens and the attention probabilities.
    pub fn backward_norm_with_attention(&self, cache: &ForwardCache) -> (Mat, AttentionGrads) {
        let (dz, grads) = self.backward(cache, None, true);
        (dz, AttentionGrads { per_layer: grads })
    }

    fn backward(&self, cache: &ForwardCache, d_emb: Option<&Mat>, keep_attn: bool) -> (Mat, Vec<Vec<f64>>) {
        let d = self.cfg.width;
        let bsz = cache.batch;
        let seq = cache.seq;

        // through the final normalisation e = y / |y|
        let mut dy = Mat::zeros(bsz, d);
        match d_emb {
            Some(d_emb) => {
                assert_eq!((d_emb.rows(), d_emb.cols()), (bsz, d), "embedding gradient shape");
                for b in 0..bsz {
                    let e = cache.embeddings.row(b);
                    let g = d_emb.row(b);
                    let proj: f64 = e.iter().zip(g).map(|(a, b)| a * b).sum();
                    let inv = 1.0 / cache.pooled_norm[b];
                    for (o, (gi, ei)) in dy.row_mut(b).iter_mut().zip(g.iter().zip(e)) {
                        *o = (gi - ei * proj) * inv;
                    }
                }
            }
            None => dy.as_mut_slice().copy_from_slice(cache.embeddings.as_slice()),
        }
        let mut dx = layer_norm_backward(&dy, &cache.lnf, &self.lnf_g);

        let mut attn_grads = Vec::new();
        for (blk, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            let (next, da) = self.block_backward(blk, bc, &dx, bsz, seq, keep_attn);
            dx = next;
            if keep_attn {
                attn_grads.push(da);
            }
        }
        attn_grads.reverse();

        let np = self.cfg.num_patches();
        let m = cache.n_tokens;
        let mut dz = Mat::zeros(m, d);
        for b in 0..bsz {
            for t in 0..m {
                let src = dx.row(b * seq + 1 + np + t);
                for (o, s) in dz.row_mut(t).iter_mut().zip(src) {
                    *o += s;
                }
            }
        }
        (dz, attn_grads)
    }

    fn block_backward(
        &self,
        blk: &Block,
        bc: &BlockCache,
        dout: &Mat,
        bsz: usize,
        seq: usize,
        keep_attn: bool,
    ) -> (Mat, Vec<f64>) {
        let d = self.cfg.width;
        let heads = self.cfg.heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let nq = bc.nq;
        let qrows = bsz * nq;

        // MLP branch
        let mut dact = Mat::zeros(qrows, blk.w_proj.rows());
        gemm(1.0, dout, false, &blk.w_proj, true, 0.0, &mut dact);
        for (g, &u) in dact.as_mut_slice().iter_mut().zip(bc.fc.as_slice()) {
            *g *= gelu_grad(u);
        }
        let mut dln2 = Mat::zeros(qrows, d);
        gemm(1.0, &dact, false, &blk.w_fc, true, 0.0, &mut dln2);
        let mut dh_res = layer_norm_backward(&dln2, &bc.ln2, &blk.ln2_g);
        dh_res.add_assign(dout);

        // attention branch
        let mut dattn_out = Mat::zeros(qrows, d);
        gemm(1.0, &dh_res, false, &blk.w_out, true, 0.0, &mut dattn_out);
        let q3 = 3 * d;
        let ts = nq * seq;
        let mut dqkv = Mat::zeros(bsz * seq, q3);
        let mut da_all = if keep_attn { vec![0.0; bsz * heads * ts] } else { Vec::new() };
        let mut da = vec![0.0; ts];
        for b in 0..bsz {
            let qkv_b = &bc.qkv.as_slice()[b * seq * q3..(b + 1) * seq * q3];
            let dout_b = &dattn_out.as_slice()[b * nq * d..(b + 1) * nq * d];
            for h in 0..heads {
                let a = &bc.attn[(b * heads + h) * ts..(b * heads + h + 1) * ts];
                // dA = dO · Vᵀ
                gemm_raw(1.0, &dout_b[h * dh..], (nq, dh), (d, 1), &qkv_b[2 * d + h * dh..], seq, (1, q3), 0.0, &mut da, seq);
                if keep_attn {
                    da_all[(b * heads + h) * ts..(b * heads + h + 1) * ts].copy_from_slice(&da);
                }
                let dqkv_b = &mut dqkv.as_mut_slice()[b * seq * q3..(b + 1) * seq * q3];
                // dV = Aᵀ · dO
                gemm_raw(1.0, a, (seq, nq), (1, seq), &dout_b[h * dh..], dh, (d, 1), 0.0, &mut dqkv_b[2 * d + h * dh..], q3);
                // softmax backward, folded with the score scale
                for (arow, grow) in a.chunks_exact(seq).zip(da.chunks_exact_mut(seq)) {
                    let s: f64 = arow.iter().zip(grow.iter()).map(|(p, g)| p * g).sum();
                    for (g, p) in grow.iter_mut().zip(arow) {
                        *g = p * (*g - s) * scale;
                    }
                }
                // dQ = dS · K ; dK = dSᵀ · Q
                gemm_raw(1.0, &da, (nq, seq), (seq, 1), &qkv_b[d + h * dh..], dh, (q3, 1), 0.0, &mut dqkv_b[h * dh..], q3);
                gemm_raw(1.0, &da, (seq, nq), (1, seq), &qkv_b[h * dh..], dh, (q3, 1), 0.0, &mut dqkv_b[d + h * dh..], q3);
            }
        }
        let mut dln1 = Mat::zeros(bsz * seq, d);
        gemm(1.0, &dqkv, false, &blk.w_qkv, true, 0.0, &mut dln1);
        let mut dx = layer_norm_backward(&dln1, &bc.ln1, &blk.ln1_g);
        for b in 0..bsz {
            for i in 0..nq {
                for (o, v) in dx.row_mut(b * seq + i).iter_mut().zip(dh_res.row(b * nq + i)) {
                    *o += v;
                }
            }
        }
        (dx, da_all)
    }
}

fn layer_norm(x: &Mat, g: &[f64], b: &[f64]) -> (Mat, LnCache) {
    let d = x.cols();
    let mut xhat = Mat::zeros(x.rows(), d);
    let mut out = Mat::zeros(x.rows(), d);
    let mut rstd = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd.push(r);
        let xh = xhat.row_mut(i);
        for j in 0..d {
            xh[j] = (row[j] - mean) * r;
        }
        let o = out.row_mut(i);
        for j in 0..d {
            o[j] = xhat.get(i, j) * g[j] + b[j];
        }
    }
    (out, LnCache { xhat, rstd })
}

fn layer_norm_backward(dout: &Mat, cache: &LnCache, g: &[f64]) -> Mat {
    let d = dout.cols();
    let mut dx = Mat::zeros(dout.rows(), d);
    let mut dxhat = vec![0.0; d];
    for i in 0..dout.rows() {
        let go = dout.row(i);
        let xh = cache.xhat.row(i);
        for j in 0..d {
            dxhat[j] = go[j] * g[j];
        }
        let mean_g = dxhat.iter().sum::<f64>() / d as f64;
        let mean_gx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        let r = cache.rstd[i];
        let o = dx.row_mut(i);
        for j in 0..d {
            o[j] = r * (dxhat[j] - mean_g - xh[j] * mean_gx);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[inline]
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> VitConfig {
        VitConfig { image_size: 8, patch_size: 4, depth: 2, width: 8, heads: 2, mlp_ratio: 2, seed: 3 }
    }

    fn image(seed: u64, size: usize) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = rand_distr::Uniform::new(0.0, 1.0).unwrap();
        ImageTensor { width: size, height: size, data: (0..size * size * 3).map(|_| u.sample(&mut rng)).collect() }
    }

    fn tokens(seed: u64, m: usize, d: usize) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 0.5).unwrap();
        Mat::from_vec(m, d, (0..m * d).map(|_| n.sample(&mut rng)).collect())
    }

    #[test]
    fn gelu_grad_matches_difference_quotient() {
        for x in [-3.0, -0.7, 0.0, 0.4, 2.5] {
            let fd = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn embeddings_are_unit_norm() {
        let vit = FrozenVit::new(tiny()).unwrap();
        let imgs = [image(1, 8), image(2, 8)];
        let refs: Vec<_> = imgs.iter().collect();
        let cache = vit.forward(&refs, &tokens(0, 3, 8)).unwrap();
        for b in 0..2 {
            let n: f64 = cache.embeddings().row(b).iter().map(|v| v * v).sum();
            assert!((n.sqrt() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn token_gradient_matches_central_differences() {
        let vit = FrozenVit::new(tiny()).unwrap();
        let imgs = [image(4, 8), image(5, 8)];
        let refs: Vec<_> = imgs.iter().collect();
        let z = tokens(9, 2, 8);
        let probe = tokens(11, 2, 8);
        let objective = |z: &Mat| -> f64 {
            let c = vit.forward(&refs, z).unwrap();
            c.embeddings().as_slice().iter().zip(probe.as_slice()).map(|(a, b)| a * b).sum()
        };
        let cache = vit.forward(&refs, &z).unwrap();
        let grad = vit.backward_tokens(&cache, &probe);
        let h = 1e-5;
        for k in 0..z.as_slice().len() {
            let mut zp = z.clone();
            zp.as_mut_slice()[k] += h;
            let mut zm = z.clone();
            zm.as_mut_slice()[k] -= h;
            let fd = (objective(&zp) - objective(&zm)) / (2.0 * h);
            let an = grad.as_slice()[k];
            assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "k={k} fd={fd} an={an}");
        }
    }

    #[test]
    fn batched_forward_equals_per_item_forward() {
        let vit = FrozenVit::new(tiny()).unwrap();
        let imgs = [image(1, 8), image(2, 8), image(3, 8)];
        let refs: Vec<_> = imgs.iter().collect();
        let z = tokens(7, 2, 8);
        let all = vit.forward(&refs, &z).unwrap();
        for (i, img) in imgs.iter().enumerate() {
            let one = vit.forward(&[img], &z).unwrap();
            for (a, b) in one.embeddings().row(0).iter().zip(all.embeddings().row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn digest_is_seed_dependent_and_stable() {
        let a = FrozenVit::new(tiny()).unwrap();
        let b = FrozenVit::new(tiny()).unwrap();
        let c = FrozenVit::new(VitConfig { seed: 4, ..tiny() }).unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
        a.verify_integrity().unwrap();
    }

    #[test]
    fn indivisible_patch_size_is_rejected() {
        assert!(FrozenVit::new(VitConfig { image_size: 10, patch_size: 4, ..tiny() }).is_err());
    }
}
