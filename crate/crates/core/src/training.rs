//! Per-context optimisation of the context tokens: epoch-wise pseudo-labels, SGD with
//! momentum under a cosine schedule, checkpoints, and ablation switches.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::augment::{augment, AugmentConfig};
use crate::backbone::{embed_images, init_context_tokens, ContextTokens, EncoderPair, FrozenVit, Lexicon, DEFAULT_TOKEN_COUNT};
use crate::container::{decode_meta, encode_meta, Container, TAG_CONTEXT, TAG_META, TAG_VELOCITY};
use crate::datamodel::MultiContextDataset;
use crate::discovery::{assign_pseudo_labels, ss_kmeans_mat, ClusterModel, KMeansConfig};
use crate::error::{Error, IoContext, Result};
use crate::evaluation::cluster_accuracy;
use crate::image::ImageTensor;
use crate::objectives::{gcd_loss, oak_loss, LossConfig, ViewBatch};
use crate::tensor::Mat;

/// Labeled items guaranteed in every minibatch.
pub const LABELED_FLOOR: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub min_lr_multiplier: f64,
    pub loss: LossConfig,
    pub use_context_tokens: bool,
    pub use_text_guidance: bool,
    pub n_tokens: usize,
    pub n_init: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            epochs: 50,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-5,
            min_lr_multiplier: 1e-3,
            loss: LossConfig::default(),
            use_context_tokens: true,
            use_text_guidance: true,
            n_tokens: DEFAULT_TOKEN_COUNT,
            n_init: 10,
            seed: 0,
        }
    }
}

const CONFIG_KEYS: [&str; 17] = [
    "batch_size",
    "epochs",
    "lr",
    "momentum",
    "weight_decay",
    "min_lr_multiplier",
    "lambda_balance",
    "lambda_text_labeled",
    "lambda_text_unlabeled",
    "tau_selfcon",
    "tau_supcon",
    "logit_scale_text",
    "use_context_tokens",
    "use_text_guidance",
    "n_tokens",
    "n_init",
    "seed",
];

impl TrainConfig {
    /// Small datasets train with smaller batches for fewer epochs.
    pub fn for_dataset_size(n_items: usize) -> Self {
        let mut c = Self::default();
        if n_items < 2000 {
            c.batch_size = 32;
            c.epochs = 30;
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.n_init == 0 {
            return Err(Error::Config("batch_size, epochs and n_init must be positive".into()));
        }
        for (k, v) in [("lr", self.lr), ("momentum", self.momentum), ("weight_decay", self.weight_decay), ("min_lr_multiplier", self.min_lr_multiplier)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{k} must be finite and nonnegative, got {v}")));
            }
        }
        if self.lr == 0.0 {
            return Err(Error::Config("lr must be positive".into()));
        }
        self.loss.validate().map_err(|e| Error::Config(e.to_string()))
    }

    /// Loss weights after the text-guidance switch.
    pub fn effective_loss(&self) -> LossConfig {
        if self.use_text_guidance {
            self.loss
        } else {
            self.loss.without_text()
        }
    }

    /// Sets one `key=value` entry.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
        }
        fn flag(key: &str, v: &str) -> Result<bool> {
            match v {
                "true" | "1" => Ok(true),
                "false" | "0" => Ok(false),
                _ => Err(Error::Config(format!("{key}: expected true or false, got {v:?}"))),
            }
        }
        match key {
            "batch_size" => self.batch_size = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "momentum" => self.momentum = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "min_lr_multiplier" => self.min_lr_multiplier = num(key, value)?,
            "lambda_balance" => self.loss.lambda_balance = num(key, value)?,
            "lambda_text_labeled" => self.loss.lambda_text_labeled = num(key, value)?,
            "lambda_text_unlabeled" => self.loss.lambda_text_unlabeled = num(key, value)?,
            "tau_selfcon" => self.loss.tau_selfcon = num(key, value)?,
            "tau_supcon" => self.loss.tau_supcon = num(key, value)?,
            "logit_scale_text" => self.loss.logit_scale_text = num(key, value)?,
            "use_context_tokens" => self.use_context_tokens = flag(key, value)?,
            "use_text_guidance" => self.use_text_guidance = flag(key, value)?,
            "n_tokens" => self.n_tokens = num(key, value)?,
            "n_init" => self.n_init = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown training key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines over `self`. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", ln + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        let l = &self.loss;
        let vals: [String; 17] = [
            self.batch_size.to_string(),
            self.epochs.to_string(),
            self.lr.to_string(),
            self.momentum.to_string(),
            self.weight_decay.to_string(),
            self.min_lr_multiplier.to_string(),
            l.lambda_balance.to_string(),
            l.lambda_text_labeled.to_string(),
            l.lambda_text_unlabeled.to_string(),
            l.tau_selfcon.to_string(),
            l.tau_supcon.to_string(),
            l.logit_scale_text.to_string(),
            self.use_context_tokens.to_string(),
            self.use_text_guidance.to_string(),
            self.n_tokens.to_string(),
            self.n_init.to_string(),
            self.seed.to_string(),
        ];
        let mut s = String::new();
        for (k, v) in CONFIG_KEYS.iter().zip(vals) {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn is_training_key(key: &str) -> bool {
        CONFIG_KEYS.contains(&key)
    }
}

/// Cosine decay from `lr` to `lr · min_lr_multiplier` over the run.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch >= cfg.epochs {
        return Err(Error::Training(format!("epoch {epoch} outside 0..{}", cfg.epochs)));
    }
    let max = cfg.lr;
    let min = cfg.lr * cfg.min_lr_multiplier;
    Ok(min + (max - min) * (1.0 + (PI * epoch as f64 / cfg.epochs as f64).cos()) / 2.0)
}

/// Everything needed to continue a run: tokens, momentum buffer, completed epochs and the
/// digest of the backbone the run started from.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub tokens: ContextTokens,
    pub velocity: Vec<f32>,
    pub epoch: usize,
    pub seed: u64,
    pub backbone_digest: String,
}

impl TrainState {
    pub fn fresh(context_id: &str, vit: &FrozenVit, cfg: &TrainConfig) -> Result<Self> {
        let m = if cfg.use_context_tokens { cfg.n_tokens } else { 0 };
        let tokens = init_context_tokens(context_id, m, vit.width(), cfg.seed)?;
        let velocity = vec![0.0; tokens.values().len()];
        Ok(Self { tokens, velocity, epoch: 0, seed: cfg.seed, backbone_digest: vit.digest_hex() })
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(self.tokens.len(), self.tokens.dim(), self.tokens.values().to_vec());
        c.push_section(TAG_CONTEXT, self.tokens.context_id.as_bytes().to_vec());
        c.push_section(TAG_VELOCITY, self.velocity.iter().flat_map(|v| v.to_le_bytes()).collect());
        c.push_section(
            TAG_META,
            encode_meta(&[
                ("epoch", self.epoch.to_string()),
                ("seed", self.seed.to_string()),
                ("backbone_digest", self.backbone_digest.clone()),
            ]),
        );
        c
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    /// Loads a checkpoint and checks it was written against `vit`.
    pub fn load(path: &Path, vit: &FrozenVit) -> Result<Self> {
        let c = Container::load(path)?;
        let state = Self::from_container(&c)?;
        if state.backbone_digest != vit.digest_hex() {
            return Err(Error::Integrity(format!(
                "checkpoint {} was written against backbone {}, current backbone is {}",
                path.display(),
                state.backbone_digest,
                vit.digest_hex()
            )));
        }
        Ok(state)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let tokens = ContextTokens::from_container(c)?;
        let raw = c.section(TAG_VELOCITY).ok_or_else(|| Error::Format("checkpoint has no momentum buffer".into()))?;
        if raw.len() != 4 * tokens.values().len() {
            return Err(Error::Format("momentum buffer size does not match tokens".into()));
        }
        let velocity = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        let meta = decode_meta(&c.text_section(TAG_META)?.unwrap_or_default());
        let get = |k: &str| {
            meta.iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| Error::Format(format!("checkpoint is missing {k}")))
        };
        let epoch = get("epoch")?.parse().map_err(|_| Error::Format("bad epoch in checkpoint".into()))?;
        let seed = get("seed")?.parse().map_err(|_| Error::Format("bad seed in checkpoint".into()))?;
        Ok(Self { tokens, velocity, epoch, seed, backbone_digest: get("backbone_digest")? })
    }
}

/// Per-epoch record.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub step_losses: Vec<f64>,
    /// Clustering accuracy on the unlabeled evaluation pool at the start of the epoch.
    pub cluster_acc: Option<f64>,
}

impl EpochLog {
    pub fn mean_loss(&self) -> f64 {
        if self.step_losses.is_empty() {
            0.0
        } else {
            self.step_losses.iter().sum::<f64>() / self.step_losses.len() as f64
        }
    }
}

pub fn render_log(logs: &[EpochLog]) -> String {
    let mut s = String::from("epoch\tlr\tmean_loss\tsteps\tcluster_acc\n");
    for l in logs {
        let acc = l.cluster_acc.map_or_else(|| "NA".to_string(), |a| format!("{a:.6}"));
        let _ = writeln!(s, "{}\t{:.6e}\t{:.6}\t{}\t{acc}", l.epoch, l.lr, l.mean_loss(), l.step_losses.len());
    }
    s
}

/// Which objective drives the token updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    /// Contrastive mixture plus text guidance (weights from the config).
    Oak,
    /// Contrastive mixture only, computed directly.
    GcdOnly,
}

/// Dataset, context and encoder bound together for one training run.
pub struct ContextRun<'a> {
    pub ds: &'a MultiContextDataset,
    pub context_id: String,
    pub encoder: &'a EncoderPair,
    images: Vec<ImageTensor>,
    labeled: Vec<(usize, usize)>,
    unlabeled: Vec<usize>,
    known: Vec<String>,
    vocab: Vec<String>,
    text: Lexicon,
    k: usize,
}

fn epoch_rng(seed: u64, epoch: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(purpose);
    rng
}

const STREAM_BATCH: u64 = 1;
const STREAM_AUGMENT: u64 = 2;

impl<'a> ContextRun<'a> {
    pub fn new(ds: &'a MultiContextDataset, context_id: &str, encoder: &'a EncoderPair) -> Result<Self> {
        let col = ds.context(context_id)?;
        let spec = col.spec()?;
        let vocab = spec.extended_vocab();
        let text = encoder.lexicon.subset(&vocab).map_err(|e| Error::Training(format!("lexicon does not cover the vocabulary: {e}")))?;
        let (lab, unlabeled) = col.training_pools();
        let mut labeled = Vec::with_capacity(lab.len());
        for (i, name) in lab {
            let c = spec
                .known_classes
                .iter()
                .position(|k| *k == name)
                .ok_or_else(|| Error::Training(format!("labeled item {i} has non-known class {name:?}")))?;
            labeled.push((i, c));
        }
        let mut images = Vec::with_capacity(ds.len());
        for i in 0..ds.len() {
            images.push(ds.image(i)?.to_tensor());
        }
        Ok(Self {
            ds,
            context_id: context_id.to_string(),
            encoder,
            images,
            labeled,
            unlabeled,
            known: spec.known_classes.clone(),
            vocab,
            text,
            k: spec.total_classes(),
        })
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    /// Embeddings of every dataset item under `tokens`, without augmentation.
    pub fn embed_all(&self, tokens: &ContextTokens) -> Result<Mat> {
        let refs: Vec<&ImageTensor> = self.images.iter().collect();
        embed_images(&self.encoder.image_encoder, &refs, &tokens.to_mat())
    }

    fn pins(&self) -> Vec<Option<usize>> {
        let mut pins = vec![None; self.ds.len()];
        for &(i, c) in &self.labeled {
            pins[i] = Some(c);
        }
        pins
    }

    /// Semi-supervised clustering of all items under the given embeddings.
    pub fn cluster(&self, emb: &Mat, seed: u64, n_init: usize) -> Result<ClusterModel> {
        let ids: Vec<String> = self.ds.items.iter().map(|it| it.id.clone()).collect();
        let kcfg = KMeansConfig { n_init, seed, ..Default::default() };
        ss_kmeans_mat(emb, &ids, &self.pins(), &self.known, self.k, &kcfg)
    }

    /// Joint-matched accuracy of a clustering on the unlabeled evaluation pool.
    pub fn eval_accuracy(&self, model: &ClusterModel) -> Option<f64> {
        let col = self.ds.context(&self.context_id).ok()?;
        let items = col.unlabeled_eval();
        if items.is_empty() {
            return None;
        }
        let pred: Vec<usize> = items.iter().map(|&i| model.assignment[i]).collect();
        let gt: Vec<&str> = items.iter().map(|&i| col.labels[i].as_deref().unwrap_or_default()).collect();
        cluster_accuracy(&pred, &gt, &BTreeSet::new()).ok().map(|m| m.accuracy.overall)
    }

    /// Minibatches of one epoch: item indices, with labeled items first. Each batch holds at
    /// least [`LABELED_FLOOR`] labeled items (fewer only if the pool is smaller), the rest
    /// in proportion to the pool sizes.
    fn batches(&self, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<(Vec<usize>, usize)> {
        let n = self.labeled.len() + self.unlabeled.len();
        let mut lab: Vec<usize> = (0..self.labeled.len()).collect();
        let mut unl = self.unlabeled.clone();
        lab.shuffle(rng);
        unl.shuffle(rng);
        let prop = (batch_size as f64 * self.labeled.len() as f64 / n.max(1) as f64).round() as usize;
        let n_lab = prop.max(LABELED_FLOOR).min(self.labeled.len()).min(batch_size);
        let n_unl = batch_size - n_lab;
        let steps = if n_unl == 0 { self.labeled.len().div_ceil(batch_size.max(1)) } else { unl.len().div_ceil(n_unl) }.max(1);
        let mut out = Vec::with_capacity(steps);
        let mut lab_pos = 0;
        for s in 0..steps {
            let mut items: Vec<usize> = Vec::with_capacity(batch_size);
            while items.len() < n_lab {
                if lab_pos == lab.len() {
                    lab.shuffle(rng);
                    lab_pos = 0;
                }
                let l = lab[lab_pos];
                lab_pos += 1;
                if !items.contains(&l) {
                    items.push(l);
                }
            }
            let labeled_count = items.len();
            let mut ds_items: Vec<usize> = items.iter().map(|&l| self.labeled[l].0).collect();
            let start = s * n_unl;
            ds_items.extend(unl.iter().skip(start).take(n_unl));
            out.push((ds_items, labeled_count));
        }
        out
    }

    /// One optimisation step's loss and token gradient. `batch` lists dataset indices with
    /// the first `n_labeled` drawn from the labeled pool.
    #[allow(clippy::too_many_arguments)]
    fn step_loss(
        &self,
        tokens: &Mat,
        batch: &[usize],
        n_labeled: usize,
        pseudo: Option<&[usize]>,
        loss: &LossConfig,
        objective: Objective,
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, Mat)> {
        let aug = AugmentConfig::default();
        let b = batch.len();
        let mut views: Vec<ImageTensor> = Vec::with_capacity(2 * b);
        for &i in batch {
            views.push(augment(&self.images[i], &aug, rng));
        }
        for &i in batch {
            views.push(augment(&self.images[i], &aug, rng));
        }
        let refs: Vec<&ImageTensor> = views.iter().collect();
        let vit = &self.encoder.image_encoder;
        let cache = vit.forward(&refs, tokens)?;
        let label_of: std::collections::HashMap<usize, usize> = self.labeled.iter().copied().collect();
        let mut class = vec![None; 2 * b];
        let mut target = vec![None; 2 * b];
        for (slot, &i) in batch.iter().enumerate() {
            let c = if slot < n_labeled { label_of.get(&i).copied() } else { None };
            let t = match c {
                Some(c) => Some(c),
                None => pseudo.map(|p| p[i]),
            };
            class[slot] = c;
            class[slot + b] = c;
            target[slot] = t;
            target[slot + b] = t;
        }
        let vb = ViewBatch {
            embeddings: cache.embeddings().clone(),
            partner: crate::objectives::stacked_partners(b),
            class,
            text_target: target,
        };
        let lg = match objective {
            Objective::Oak => oak_loss(&vb, self.text.vectors(), loss)?,
            Objective::GcdOnly => gcd_loss(&vb, loss)?,
        };
        let dz = if tokens.rows() > 0 { vit.backward_tokens(&cache, &lg.grad) } else { Mat::zeros(0, tokens.cols()) };
        Ok((lg.value, dz))
    }

    /// Runs epochs `state.epoch..until` (capped at `cfg.epochs`).
    pub fn train_epochs(&self, state: &mut TrainState, cfg: &TrainConfig, until: usize, objective: Objective) -> Result<Vec<EpochLog>> {
        cfg.validate()?;
        let vit = &self.encoder.image_encoder;
        if state.backbone_digest != vit.digest_hex() {
            return Err(Error::Integrity("training state belongs to a different backbone".into()));
        }
        let loss = cfg.effective_loss();
        let text_on = objective == Objective::Oak && (loss.lambda_text_labeled > 0.0 || loss.lambda_text_unlabeled > 0.0);
        let until = until.min(cfg.epochs);
        let mut logs = Vec::new();
        while state.epoch < until {
            let epoch = state.epoch;
            let lr = lr_at(epoch, cfg)?;
            if state.tokens.is_empty() {
                logs.push(EpochLog { epoch, lr, step_losses: Vec::new(), cluster_acc: None });
                state.epoch += 1;
                continue;
            }
            let emb = self.embed_all(&state.tokens)?;
            let model = self.cluster(&emb, cfg.seed ^ (epoch as u64).wrapping_mul(0x2545_f491_4f6c_dd1d), cfg.n_init)?;
            let cluster_acc = self.eval_accuracy(&model);
            let pseudo: Option<Vec<usize>> = if text_on {
                let names = assign_pseudo_labels(&model, &self.text)?;
                Some(names.iter().map(|n| self.vocab.iter().position(|v| v == n).expect("named from vocab")).collect())
            } else {
                None
            };

            let mut brng = epoch_rng(cfg.seed, epoch, STREAM_BATCH);
            let mut arng = epoch_rng(cfg.seed, epoch, STREAM_AUGMENT);
            let batches = self.batches(cfg.batch_size, &mut brng);
            let mut step_losses = Vec::with_capacity(batches.len());
            for (step, (batch, n_lab)) in batches.iter().enumerate() {
                let z = state.tokens.to_mat();
                let (value, grad) = self.step_loss(&z, batch, *n_lab, pseudo.as_deref(), &loss, objective, &mut arng)?;
                if !value.is_finite() || !grad.is_finite() {
                    return Err(Error::Training(format!("non-finite loss at epoch {epoch}, step {step}")));
                }
                step_losses.push(value);
                let mut next = Vec::with_capacity(state.velocity.len());
                for ((v, &zv), g) in state.velocity.iter_mut().zip(state.tokens.values()).zip(grad.as_slice()) {
                    let zf = f64::from(zv);
                    let vel = cfg.momentum * f64::from(*v) + g + cfg.weight_decay * zf;
                    *v = vel as f32;
                    next.push((zf - lr * f64::from(*v)) as f32);
                }
                state.tokens = ContextTokens::new(state.tokens.context_id.clone(), state.tokens.len(), state.tokens.dim(), next)?;
            }
            logs.push(EpochLog { epoch, lr, step_losses, cluster_acc });
            state.epoch += 1;
        }
        vit.verify_integrity()?;
        if vit.digest_hex() != state.backbone_digest {
            return Err(Error::Integrity("backbone digest changed during training".into()));
        }
        Ok(logs)
    }
}

/// Outcome of a full training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub tokens: ContextTokens,
    pub state: TrainState,
    pub log: Vec<EpochLog>,
}

/// Trains one context's tokens from scratch with the OAK objective (text guidance subject
/// to the config switch).
pub fn train_context(ds: &MultiContextDataset, context_id: &str, encoder: &EncoderPair, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_context_with(ds, context_id, encoder, cfg, Objective::Oak)
}

pub fn train_context_with(
    ds: &MultiContextDataset,
    context_id: &str,
    encoder: &EncoderPair,
    cfg: &TrainConfig,
    objective: Objective,
) -> Result<TrainOutcome> {
    let run = ContextRun::new(ds, context_id, encoder)?;
    let mut state = TrainState::fresh(context_id, &encoder.image_encoder, cfg)?;
    let log = run.train_epochs(&mut state, cfg, cfg.epochs, objective)?;
    Ok(TrainOutcome { tokens: state.tokens.clone(), state, log })
}

/// Writes `path` atomically enough for a single writer: temp file then rename.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    state.save(&tmp)?;
    std::fs::rename(&tmp, path).at(path)
}

pub fn load_checkpoint(path: &Path, vit: &FrozenVit) -> Result<TrainState> {
    TrainState::load(path, vit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::VitConfig;
    use crate::datamodel::SplitConfig;
    use crate::synthgen::{build_encoder_pair, generate_dataset, Attribute, GenConfig};

    #[test]
    fn lr_schedule_points() {
        let cfg = TrainConfig { epochs: 50, lr: 0.1, ..Default::default() };
        assert_eq!(lr_at(0, &cfg).unwrap(), 0.1);
        let min = 0.1 * 1e-3;
        assert!((lr_at(25, &cfg).unwrap() - (0.1 + min) / 2.0).abs() < 1e-15);
        let last = lr_at(49, &cfg).unwrap();
        // formula: min + (max-min)(1+cos(49π/50))/2
        let expect = min + (0.1 - min) * (1.0 + (49.0 * PI / 50.0).cos()) / 2.0;
        assert!((last - expect).abs() < 1e-15);
        assert!(last < 0.1 * 0.01 + min);
        assert!(lr_at(50, &cfg).is_err());
    }

    #[test]
    fn config_defaults_and_file_round_trip() {
        let d = TrainConfig::default();
        assert_eq!((d.batch_size, d.epochs, d.lr, d.momentum, d.weight_decay, d.min_lr_multiplier), (128, 50, 0.1, 0.9, 5e-5, 1e-3));
        assert_eq!(d.loss.lambda_balance, 0.35);
        let desk = TrainConfig::for_dataset_size(500);
        assert_eq!((desk.batch_size, desk.epochs), (32, 30));
        let mut c = TrainConfig::default();
        c.apply_text("# run\nepochs = 7\nuse_text_guidance=false\nlogit_scale_text=12.5\n").unwrap();
        assert_eq!((c.epochs, c.use_text_guidance, c.loss.logit_scale_text), (7, false, 12.5));
        let mut back = TrainConfig::default();
        back.apply_text(&c.render()).unwrap();
        assert_eq!(back, c);
        assert!(c.apply_text("bogus=1").is_err());
    }

    pub(crate) fn tiny_setup(n_images: usize) -> (MultiContextDataset, EncoderPair) {
        let gen = GenConfig {
            image_size: 16,
            contexts: vec![
                (Attribute::Color, vec!["red".into(), "green".into(), "blue".into(), "yellow".into()]),
                (Attribute::Shape, vec!["circle".into(), "square".into(), "cross".into(), "ring".into()]),
            ],
            n_images,
            probe_per_class: 2,
            seed: 3,
            split: SplitConfig { known_fraction: 0.5, labeled_per_class: 3, seed: 3 },
            ..Default::default()
        };
        let (ds, probes) = generate_dataset(&gen).unwrap();
        let vit = FrozenVit::new(VitConfig { image_size: 16, patch_size: 8, depth: 2, width: 16, heads: 2, mlp_ratio: 2, seed: 5 }).unwrap();
        (ds, build_encoder_pair(vit, &probes).unwrap())
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig { batch_size: 12, epochs: 3, n_tokens: 2, n_init: 2, lr: 0.05, ..Default::default() }
    }

    #[test]
    fn training_is_deterministic_and_keeps_backbone() {
        let (ds, enc) = tiny_setup(40);
        let before = enc.image_encoder.digest_hex();
        let a = train_context(&ds, "color", &enc, &tiny_cfg()).unwrap();
        let b = train_context(&ds, "color", &enc, &tiny_cfg()).unwrap();
        assert_eq!(a.tokens, b.tokens);
        assert_eq!(enc.image_encoder.digest_hex(), before);
        assert_ne!(a.tokens, TrainState::fresh("color", &enc.image_encoder, &tiny_cfg()).unwrap().tokens);
    }

    #[test]
    fn resume_matches_straight_run() {
        let (ds, enc) = tiny_setup(40);
        let cfg = tiny_cfg();
        let straight = train_context(&ds, "color", &enc, &cfg).unwrap();
        let run = ContextRun::new(&ds, "color", &enc).unwrap();
        let mut state = TrainState::fresh("color", &enc.image_encoder, &cfg).unwrap();
        run.train_epochs(&mut state, &cfg, 1, Objective::Oak).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.bin");
        save_checkpoint(&state, &p).unwrap();
        let mut resumed = load_checkpoint(&p, &enc.image_encoder).unwrap();
        assert_eq!(resumed, state);
        run.train_epochs(&mut resumed, &cfg, cfg.epochs, Objective::Oak).unwrap();
        assert_eq!(resumed.tokens, straight.tokens);
    }

    #[test]
    fn checkpoint_against_other_backbone_is_rejected() {
        let (_, enc) = tiny_setup(40);
        let state = TrainState::fresh("color", &enc.image_encoder, &tiny_cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.bin");
        save_checkpoint(&state, &p).unwrap();
        let mut other_cfg = *enc.image_encoder.config();
        other_cfg.seed += 1;
        let other = FrozenVit::new(other_cfg).unwrap();
        assert!(matches!(load_checkpoint(&p, &other), Err(Error::Integrity(_))));
    }

    #[test]
    fn text_off_matches_direct_gcd_trajectory() {
        let (ds, enc) = tiny_setup(40);
        let cfg = TrainConfig { use_text_guidance: false, ..tiny_cfg() };
        let a = train_context_with(&ds, "shape", &enc, &cfg, Objective::Oak).unwrap();
        let b = train_context_with(&ds, "shape", &enc, &cfg, Objective::GcdOnly).unwrap();
        let ta: Vec<f64> = a.log.iter().flat_map(|l| l.step_losses.clone()).collect();
        let tb: Vec<f64> = b.log.iter().flat_map(|l| l.step_losses.clone()).collect();
        assert!(!ta.is_empty());
        assert_eq!(ta, tb);
        assert_eq!(a.tokens, b.tokens);
    }

    #[test]
    fn tokens_off_freezes_an_empty_token_matrix() {
        let (ds, enc) = tiny_setup(40);
        let cfg = TrainConfig { use_context_tokens: false, ..tiny_cfg() };
        let out = train_context(&ds, "color", &enc, &cfg).unwrap();
        assert!(out.tokens.is_empty());
        assert!(out.log.iter().all(|l| l.step_losses.is_empty()));
    }

    #[test]
    fn batches_mix_pools_with_labeled_floor() {
        let (ds, enc) = tiny_setup(40);
        let run = ContextRun::new(&ds, "color", &enc).unwrap();
        let mut rng = epoch_rng(0, 0, STREAM_BATCH);
        let batches = run.batches(12, &mut rng);
        let col = ds.context("color").unwrap();
        let mut covered = BTreeSet::new();
        for (b, n_lab) in &batches {
            assert!(*n_lab >= LABELED_FLOOR);
            for (k, i) in b.iter().enumerate() {
                assert_eq!(k < *n_lab, col.labeled.contains(i));
                covered.insert(*i);
            }
        }
        let (_, unl) = col.training_pools();
        assert!(unl.iter().all(|i| covered.contains(i)));
    }
}
