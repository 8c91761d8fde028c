//! Datasets with one label per context, known/novel splits, labeled exemplar sampling, and
//! the manifest / split / vocabulary text formats.
//!
//! Manifest (`manifest.tsv`): a header `item<TAB>ctx1<TAB>ctx2...`, then one row per item
//! with the item id (a path relative to the manifest, for image datasets) and one class
//! name per context. `-` marks a missing label.
//!
//! Split sidecar (`split.tsv`), one record per line, tab separated:
//!
//! ```text
//! seed         <u64>
//! known        <context> <class>...
//! novel_count  <context> <n>
//! candidates   <context> <class>...
//! labeled      <context> <item id>...
//! ```

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, IoContext, Result};
use crate::image::RgbImage;

/// Sentinel for a label that is absent in one context.
pub const MISSING: &str = "-";

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const SPLIT_FILE: &str = "split.tsv";

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    None,
    Image(RgbImage),
    Features(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Item {
    pub id: String,
    pub payload: Payload,
}

/// Class structure of one context as seen by a learner.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContextSpec {
    pub context_id: String,
    pub known_classes: Vec<String>,
    pub novel_class_count: usize,
    pub candidate_vocab: Vec<String>,
}

impl ContextSpec {
    pub fn new(
        context_id: impl Into<String>,
        known_classes: Vec<String>,
        novel_class_count: usize,
        candidate_vocab: Vec<String>,
    ) -> Result<Self> {
        let context_id = context_id.into();
        if known_classes.is_empty() {
            return Err(Error::Data(format!("context {context_id}: no known classes")));
        }
        let mut seen = HashSet::new();
        for k in &known_classes {
            if !seen.insert(k) {
                return Err(Error::Data(format!("context {context_id}: duplicate known class {k:?}")));
            }
        }
        if novel_class_count == 0 {
            return Err(Error::Data(format!("context {context_id}: novel class count must be positive")));
        }
        if let Some(c) = candidate_vocab.iter().find(|c| seen.contains(c)) {
            return Err(Error::Data(format!("context {context_id}: candidate {c:?} is also a known class")));
        }
        if candidate_vocab.len() < novel_class_count {
            return Err(Error::Data(format!(
                "context {context_id}: {} candidate names for {novel_class_count} novel classes",
                candidate_vocab.len()
            )));
        }
        Ok(Self { context_id, known_classes, novel_class_count, candidate_vocab })
    }

    pub fn total_classes(&self) -> usize {
        self.known_classes.len() + self.novel_class_count
    }

    pub fn is_known(&self, class: &str) -> bool {
        self.known_classes.iter().any(|k| k == class)
    }

    /// Known classes followed by the candidate vocabulary.
    pub fn extended_vocab(&self) -> Vec<String> {
        self.known_classes.iter().chain(&self.candidate_vocab).cloned().collect()
    }
}

/// One context's labels, split and labeled subset.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextColumn {
    pub id: String,
    /// Indexed by item position; `None` is the missing sentinel.
    pub labels: Vec<Option<String>>,
    pub spec: Option<ContextSpec>,
    /// Item positions forming the labeled pool.
    pub labeled: BTreeSet<usize>,
}

impl ContextColumn {
    /// Distinct non-missing class names, sorted.
    pub fn classes(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.labels.iter().flatten().collect();
        set.into_iter().cloned().collect()
    }

    pub fn spec(&self) -> Result<&ContextSpec> {
        self.spec.as_ref().ok_or_else(|| Error::Data(format!("context {} has no known/novel split", self.id)))
    }

    /// Items with a label in this context that are not in the labeled pool: the
    /// evaluation pool.
    pub fn unlabeled_eval(&self) -> Vec<usize> {
        (0..self.labels.len()).filter(|i| self.labels[*i].is_some() && !self.labeled.contains(i)).collect()
    }

    /// Items with a non-missing label.
    pub fn evaluable(&self) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i].is_some()).collect()
    }

    /// Training view: labeled items with their class, and every other item (including
    /// those whose label is missing here) without one.
    pub fn training_pools(&self) -> (Vec<(usize, String)>, Vec<usize>) {
        let labeled = self
            .labeled
            .iter()
            .map(|&i| (i, self.labels[i].clone().expect("labeled items carry labels")))
            .collect();
        let unlabeled = (0..self.labels.len()).filter(|i| !self.labeled.contains(i)).collect();
        (labeled, unlabeled)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiContextDataset {
    pub items: Vec<Item>,
    pub contexts: Vec<ContextColumn>,
    pub split_seed: Option<u64>,
}

impl MultiContextDataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn context_ids(&self) -> Vec<String> {
        self.contexts.iter().map(|c| c.id.clone()).collect()
    }

    pub fn context(&self, id: &str) -> Result<&ContextColumn> {
        self.contexts.iter().find(|c| c.id == id).ok_or_else(|| Error::Data(format!("unknown context {id:?}")))
    }

    fn context_mut(&mut self, id: &str) -> Result<&mut ContextColumn> {
        self.contexts.iter_mut().find(|c| c.id == id).ok_or_else(|| Error::Data(format!("unknown context {id:?}")))
    }

    pub fn item_index(&self) -> HashMap<&str, usize> {
        self.items.iter().enumerate().map(|(i, it)| (it.id.as_str(), i)).collect()
    }

    /// Items labeled (non-missing) in every context and unlabeled in every context.
    pub fn shared_eval_items(&self) -> Vec<usize> {
        (0..self.items.len())
            .filter(|&i| self.contexts.iter().all(|c| c.labels[i].is_some() && !c.labeled.contains(&i)))
            .collect()
    }

    pub fn image(&self, i: usize) -> Result<&RgbImage> {
        match &self.items[i].payload {
            Payload::Image(img) => Ok(img),
            _ => Err(Error::Data(format!("item {:?} has no image payload", self.items[i].id))),
        }
    }

    /// Checks the labeled-pool invariants.
    pub fn validate(&self) -> Result<()> {
        for c in &self.contexts {
            if c.labels.len() != self.items.len() {
                return Err(Error::Data(format!("context {} has {} labels for {} items", c.id, c.labels.len(), self.items.len())));
            }
            if c.labeled.is_empty() {
                continue;
            }
            let spec = c.spec()?;
            for &i in &c.labeled {
                match c.labels.get(i).and_then(Option::as_ref) {
                    Some(y) if spec.is_known(y) => {}
                    Some(y) => {
                        return Err(Error::Data(format!(
                            "context {}: labeled item {:?} has non-known class {y:?}",
                            c.id, self.items[i].id
                        )))
                    }
                    None => {
                        return Err(Error::Data(format!(
                            "context {}: labeled item {:?} has a missing label",
                            c.id,
                            self.items.get(i).map_or("?", |it| it.id.as_str())
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    /// Installs per-context known/novel structure. Candidate vocabularies are given per
    /// context; the labeled pool is cleared.
    pub fn set_spec(&mut self, spec: ContextSpec) -> Result<()> {
        let col = self.context_mut(&spec.context_id)?;
        col.spec = Some(spec);
        col.labeled.clear();
        Ok(())
    }

    /// Loads image payloads for every item whose id names a `.ppm` file under `root`.
    pub fn load_images(&mut self, root: &Path) -> Result<()> {
        for item in &mut self.items {
            if item.id.ends_with(".ppm") {
                item.payload = Payload::Image(RgbImage::load_ppm(&root.join(&item.id))?);
            }
        }
        Ok(())
    }

    pub fn manifest_text(&self) -> String {
        let mut out = String::from("item");
        for c in &self.contexts {
            out.push('\t');
            out.push_str(&c.id);
        }
        out.push('\n');
        for (i, item) in self.items.iter().enumerate() {
            out.push_str(&item.id);
            for c in &self.contexts {
                out.push('\t');
                out.push_str(c.labels[i].as_deref().unwrap_or(MISSING));
            }
            out.push('\n');
        }
        out
    }

    pub fn split_text(&self) -> String {
        let mut out = String::new();
        if let Some(seed) = self.split_seed {
            out.push_str(&format!("seed\t{seed}\n"));
        }
        for c in &self.contexts {
            let Some(spec) = &c.spec else { continue };
            let join = |v: &[String]| v.iter().map(|s| format!("\t{s}")).collect::<String>();
            out.push_str(&format!("known\t{}{}\n", c.id, join(&spec.known_classes)));
            out.push_str(&format!("novel_count\t{}\t{}\n", c.id, spec.novel_class_count));
            out.push_str(&format!("candidates\t{}{}\n", c.id, join(&spec.candidate_vocab)));
            let ids: Vec<String> = c.labeled.iter().map(|&i| self.items[i].id.clone()).collect();
            out.push_str(&format!("labeled\t{}{}\n", c.id, join(&ids)));
        }
        out
    }

    /// Writes `manifest.tsv` and `split.tsv` into `dir`. Image payloads are not written.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).at(dir)?;
        let m = dir.join(MANIFEST_FILE);
        fs::write(&m, self.manifest_text()).at(&m)?;
        let s = dir.join(SPLIT_FILE);
        fs::write(&s, self.split_text()).at(&s)
    }

    /// Reads a dataset directory written by [`save`](Self::save), loading `.ppm`
    /// payloads that sit next to the manifest.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = dir.join(MANIFEST_FILE);
        let header = read_header(&manifest)?;
        let ctx: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut ds = load_manifest(&manifest, &ctx)?;
        let split = dir.join(SPLIT_FILE);
        if split.exists() {
            apply_split_file(&mut ds, &split)?;
        }
        ds.load_images(dir)?;
        ds.validate()?;
        Ok(ds)
    }
}

fn read_header(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).at(path)?;
    let first = text.lines().next().ok_or_else(|| Error::Parse { path: path.into(), line: 1, msg: "missing header".into() })?;
    Ok(first.split('\t').skip(1).map(str::to_string).collect())
}

/// Configuration of the known/novel split and labeled sampling.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitConfig {
    pub known_fraction: f64,
    pub labeled_per_class: usize,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { known_fraction: 0.5, labeled_per_class: 16, seed: 0 }
    }
}

/// Reads the requested context columns of a manifest.
pub fn load_manifest(path: &Path, contexts: &[&str]) -> Result<MultiContextDataset> {
    load_manifest_inner(path, contexts, None)
}

/// Like [`load_manifest`], rejecting class names outside a closed per-context vocabulary.
pub fn load_manifest_with_vocab(
    path: &Path,
    contexts: &[&str],
    vocab: &HashMap<String, Vec<String>>,
) -> Result<MultiContextDataset> {
    load_manifest_inner(path, contexts, Some(vocab))
}

fn load_manifest_inner(
    path: &Path,
    contexts: &[&str],
    vocab: Option<&HashMap<String, Vec<String>>>,
) -> Result<MultiContextDataset> {
    let text = fs::read_to_string(path).at(path)?;
    let parse_err = |line: usize, msg: String| Error::Parse { path: PathBuf::from(path), line, msg };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "missing header".into()))?;
    let columns: Vec<&str> = header.split('\t').collect();
    let mut col_index = Vec::with_capacity(contexts.len());
    for c in contexts {
        let j = columns
            .iter()
            .skip(1)
            .position(|h| h == c)
            .ok_or_else(|| parse_err(1, format!("header does not name context {c:?}")))?;
        col_index.push(j + 1);
    }
    let closed: Vec<Option<HashSet<&str>>> = contexts
        .iter()
        .map(|c| vocab.and_then(|v| v.get(*c)).map(|names| names.iter().map(String::as_str).collect()))
        .collect();

    let mut items = Vec::new();
    let mut labels: Vec<Vec<Option<String>>> = vec![Vec::new(); contexts.len()];
    let mut seen = HashSet::new();
    for (ln, line) in lines {
        let line_no = ln + 1;
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != columns.len() {
            return Err(parse_err(line_no, format!("expected {} columns, found {}", columns.len(), cells.len())));
        }
        let id = cells[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::Data(format!("duplicate item id {id:?} (line {line_no})")));
        }
        for (k, &j) in col_index.iter().enumerate() {
            let cell = cells[j];
            let label = if cell == MISSING { None } else { Some(cell.to_string()) };
            if let (Some(y), Some(set)) = (&label, &closed[k]) {
                if !set.contains(y.as_str()) {
                    return Err(Error::Data(format!(
                        "line {line_no}: class {y:?} is not in the vocabulary of context {:?}",
                        contexts[k]
                    )));
                }
            }
            labels[k].push(label);
        }
        items.push(Item { id, payload: Payload::None });
    }
    let contexts = contexts
        .iter()
        .zip(labels)
        .map(|(c, labels)| ContextColumn { id: c.to_string(), labels, spec: None, labeled: BTreeSet::new() })
        .collect();
    Ok(MultiContextDataset { items, contexts, split_seed: None })
}

fn apply_split_file(ds: &mut MultiContextDataset, path: &Path) -> Result<()> {
    let text = fs::read_to_string(path).at(path)?;
    let parse_err = |line: usize, msg: String| Error::Parse { path: PathBuf::from(path), line, msg };
    let mut known: HashMap<String, Vec<String>> = HashMap::new();
    let mut novel: HashMap<String, usize> = HashMap::new();
    let mut cands: HashMap<String, Vec<String>> = HashMap::new();
    let mut labeled: HashMap<String, Vec<String>> = HashMap::new();
    let mut order = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        let rest = |from: usize| cells[from..].iter().map(|s| s.to_string()).collect::<Vec<_>>();
        match cells[0] {
            "seed" if cells.len() == 2 => {
                ds.split_seed = Some(cells[1].parse().map_err(|_| parse_err(ln + 1, "bad seed".into()))?);
            }
            "known" if cells.len() >= 2 => {
                order.push(cells[1].to_string());
                known.insert(cells[1].into(), rest(2));
            }
            "novel_count" if cells.len() == 3 => {
                let n = cells[2].parse().map_err(|_| parse_err(ln + 1, "bad novel count".into()))?;
                novel.insert(cells[1].into(), n);
            }
            "candidates" if cells.len() >= 2 => {
                cands.insert(cells[1].into(), rest(2));
            }
            "labeled" if cells.len() >= 2 => {
                labeled.insert(cells[1].into(), rest(2));
            }
            _ => return Err(parse_err(ln + 1, format!("unrecognised record {:?}", cells[0]))),
        }
    }
    let index: HashMap<String, usize> = ds.item_index().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    for ctx in order {
        let spec = ContextSpec::new(
            ctx.clone(),
            known.remove(&ctx).unwrap_or_default(),
            novel.get(&ctx).copied().unwrap_or(0),
            cands.remove(&ctx).unwrap_or_default(),
        )?;
        ds.set_spec(spec)?;
        let col = ds.context_mut(&ctx)?;
        for id in labeled.remove(&ctx).unwrap_or_default() {
            let i = *index.get(&id).ok_or_else(|| Error::Data(format!("split names unknown item {id:?}")))?;
            col.labeled.insert(i);
        }
    }
    Ok(())
}

/// Stable 64-bit FNV-1a, used to derive per-context random streams.
pub(crate) fn stable_hash(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub(crate) fn context_rng(seed: u64, context: &str, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_hash(context).rotate_left(17));
    rng.set_stream(purpose);
    rng
}

const STREAM_SPLIT: u64 = 1;
const STREAM_LABELED: u64 = 2;

/// Partitions each context's classes into known and novel sets. `classes` pairs a context
/// id with its class list; output order follows the input.
pub fn split_known_novel(classes: &[(String, Vec<String>)], cfg: &SplitConfig) -> Result<Vec<(Vec<String>, Vec<String>)>> {
    if !(cfg.known_fraction > 0.0 && cfg.known_fraction <= 1.0) {
        return Err(Error::Data(format!("known fraction {} outside (0, 1]", cfg.known_fraction)));
    }
    let mut out = Vec::with_capacity(classes.len());
    for (ctx, list) in classes {
        let mut sorted = list.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() < 2 {
            return Err(Error::Data(format!("context {ctx}: need at least 2 classes, found {}", sorted.len())));
        }
        let n_known = (cfg.known_fraction * sorted.len() as f64).round() as usize;
        if n_known == 0 || n_known >= sorted.len() {
            return Err(Error::Data(format!(
                "context {ctx}: {} classes cannot give a nonempty known and novel set at fraction {}",
                sorted.len(),
                cfg.known_fraction
            )));
        }
        let mut shuffled = sorted.clone();
        shuffled.shuffle(&mut context_rng(cfg.seed, ctx, STREAM_SPLIT));
        let known_set: HashSet<&String> = shuffled[..n_known].iter().collect();
        let (known, novel): (Vec<String>, Vec<String>) = sorted.iter().cloned().partition(|c| known_set.contains(c));
        out.push((known, novel));
    }
    Ok(out)
}

/// Draws `labeled_per_class` items uniformly per known class into each context's labeled
/// pool. Contexts without a split are left untouched.
pub fn sample_labeled(ds: &MultiContextDataset, cfg: &SplitConfig) -> Result<MultiContextDataset> {
    let mut out = ds.clone();
    for col in &mut out.contexts {
        let Some(spec) = &col.spec else { continue };
        let mut rng = context_rng(cfg.seed, &col.id, STREAM_LABELED);
        let mut chosen = BTreeSet::new();
        for class in &spec.known_classes {
            let mut pool: Vec<usize> = (0..col.labels.len()).filter(|&i| col.labels[i].as_ref() == Some(class)).collect();
            if pool.len() < cfg.labeled_per_class {
                return Err(Error::Data(format!(
                    "context {}: class {class:?} has {} items, {} requested",
                    col.id,
                    pool.len(),
                    cfg.labeled_per_class
                )));
            }
            pool.shuffle(&mut rng);
            chosen.extend(pool.into_iter().take(cfg.labeled_per_class));
        }
        col.labeled = chosen;
    }
    out.split_seed = Some(cfg.seed);
    out.validate()?;
    Ok(out)
}

/// Known names and candidate names read from a vocabulary file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VocabFile {
    pub known: Vec<String>,
    pub candidates: Vec<String>,
    pub duplicates_dropped: usize,
    pub overlaps_dropped: usize,
}

impl VocabFile {
    pub fn into_spec(self, context_id: &str, novel_class_count: usize) -> Result<ContextSpec> {
        ContextSpec::new(context_id, self.known, novel_class_count, self.candidates)
    }
}

fn clean_name(line: &str) -> &str {
    line.trim().trim_matches(|c| c == '"' || c == '\'').trim()
}

/// Parses a vocabulary file: known names, a blank line, then candidate names.
pub fn parse_vocab(text: &str) -> Result<VocabFile> {
    let mut known = Vec::new();
    let mut candidates = Vec::new();
    let mut in_candidates = false;
    for line in text.lines() {
        if line.trim().is_empty() {
            in_candidates = true;
            continue;
        }
        let name = clean_name(line).to_string();
        if name.is_empty() {
            continue;
        }
        if in_candidates {
            candidates.push(name);
        } else {
            known.push(name);
        }
    }
    if known.is_empty() {
        return Err(Error::Data("vocabulary file has an empty known section".into()));
    }
    let mut seen_known = HashSet::new();
    known.retain(|k| seen_known.insert(k.clone()));
    let mut duplicates = 0;
    let mut overlaps = 0;
    let mut seen = HashSet::new();
    candidates.retain(|c| {
        if seen_known.contains(c) {
            overlaps += 1;
            false
        } else if !seen.insert(c.clone()) {
            duplicates += 1;
            false
        } else {
            true
        }
    });
    Ok(VocabFile { known, candidates, duplicates_dropped: duplicates, overlaps_dropped: overlaps })
}

pub fn load_vocab(path: &Path) -> Result<VocabFile> {
    parse_vocab(&fs::read_to_string(path).at(path)?)
}

pub fn render_vocab(known: &[String], candidates: &[String]) -> String {
    let mut out = String::new();
    for k in known {
        out.push_str(k);
        out.push('\n');
    }
    out.push('\n');
    for c in candidates {
        out.push_str(c);
        out.push('\n');
    }
    out
}
