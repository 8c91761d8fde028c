//! The `oak` command line: dataset generation, training, evaluation, naming, saliency,
//! seed aggregation and sweeps. Every run writes into its own directory together with a
//! `run.manifest` holding the exact argument list, so any run can be replayed.
//!
//! Dataset directory layout written by `gen`:
//!
//! ```text
//! manifest.tsv  split.tsv  images/*.ppm  lexicon.emb  backbone.cfg  gen.cfg
//! vocab/<context>.txt  prompts/<context>.txt  run.manifest
//! ```
//!
//! Training runs default to `<dataset>/runs/<context>/<method>/seed-<s>/` and evaluation
//! reports to `<dataset>/reports/<method>/seed-<s>/`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::backbone::{ContextTokens, EncoderPair, FrozenVit, Lexicon, VitConfig};
use crate::datamodel::{render_vocab, MultiContextDataset, Payload};
use crate::discovery::{name_clusters, zero_shot_classify, ClusterModel};
use crate::error::{Error, IoContext, Result};
use crate::evaluation::{build_report, cluster_accuracy, parse_report_tsv, ContextPrediction, EvalReport};
use crate::image::ImageTensor;
use crate::saliency::relevance_map;
use crate::synthgen::{calibrate_lexicon, generate_dataset, Attribute, GenConfig};
use crate::training::{render_log, save_checkpoint, ContextRun, Objective, TrainConfig, TrainOutcome, TrainState};

pub const VOCAB_PROMPT: &str = include_str!("../assets/vocab_prompt.txt");
pub const RUN_MANIFEST: &str = "run.manifest";
pub const LEXICON_FILE: &str = "lexicon.emb";
pub const BACKBONE_FILE: &str = "backbone.cfg";
pub const GEN_FILE: &str = "gen.cfg";

/// Baseline and method taxonomy. Each tag fixes the ablation switches it implies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, ValueEnum)]
pub enum Method {
    Oak,
    Gcd,
    SsKmeans,
    ZeroShot,
    ZeroShotVocab,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Oak, Method::Gcd, Method::SsKmeans, Method::ZeroShot, Method::ZeroShotVocab];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Oak => "oak",
            Method::Gcd => "gcd",
            Method::SsKmeans => "ss-kmeans",
            Method::ZeroShot => "zero-shot",
            Method::ZeroShotVocab => "zero-shot-vocab",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.tag() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }

    /// Methods that learn context tokens.
    pub fn trains(self) -> bool {
        matches!(self, Method::Oak | Method::Gcd)
    }

    /// Methods that cluster the unlabeled pool rather than classify it.
    pub fn clusters(self) -> bool {
        matches!(self, Method::Oak | Method::Gcd | Method::SsKmeans)
    }

    /// The training switches implied by the tag.
    pub fn configure(self, cfg: &mut TrainConfig) {
        match self {
            Method::Oak => cfg.use_text_guidance = true,
            Method::Gcd => cfg.use_text_guidance = false,
            _ => {}
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// What was run, with which inputs, and where the outputs went.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub method: Option<Method>,
    /// Full argument list after the program name.
    pub argv: Vec<String>,
}

impl RunManifest {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "command={}", self.command);
        let _ = writeln!(s, "config={}", self.config.as_ref().map_or("-".to_string(), |p| p.display().to_string()));
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(s, "seeds={}", seeds.join(","));
        let _ = writeln!(s, "out={}", self.out.display());
        let _ = writeln!(s, "method={}", self.method.map_or("-", Method::tag));
        let _ = writeln!(s, "argv={}", self.argv.join("\t"));
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let kv: BTreeMap<String, String> = parse_kv(text)?.into_iter().collect();
        let get = |k: &str| kv.get(k).cloned().ok_or_else(|| Error::Config(format!("run manifest lacks {k:?}")));
        let config = get("config")?;
        let method = get("method")?;
        let seeds = get("seeds")?;
        Ok(Self {
            command: get("command")?,
            config: (config != "-").then(|| PathBuf::from(config)),
            seeds: if seeds.is_empty() { Vec::new() } else { parse_seed_list(&seeds)? },
            out: PathBuf::from(get("out")?),
            method: if method == "-" { None } else { Some(Method::parse(&method)?) },
            argv: get("argv")?.split('\t').map(str::to_string).collect(),
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).at(dir)?;
        let p = dir.join(RUN_MANIFEST);
        fs::write(&p, self.render()).at(&p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).at(path)?)
    }
}

/// Re-executes the command recorded in a run manifest.
pub fn replay(manifest: &Path) -> Result<i32> {
    let m = RunManifest::load(manifest)?;
    let mut argv = vec!["oak".to_string()];
    argv.extend(m.argv);
    Ok(dispatch(argv))
}

/// `key=value` lines; blank lines and `#` comments skipped. Keys keep file order.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected key=value", ln + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// `a..b` (inclusive) or a comma list.
pub fn parse_seed_list(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("cannot parse seed list {s:?}"));
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if b < a {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect()
}

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

/// Generator plus backbone settings read from one `key=value` file.
///
/// Keys: `image_size glyph_size n_images probe_per_class seed per_object_variation
/// vocab_multiplier texture_contrast background_jitter known_fraction labeled_per_class
/// split_seed contexts` and the backbone keys `patch_size depth width heads mlp_ratio
/// backbone_seed`. `contexts` takes `attr:n` entries (the first `n` palette values) or
/// `attr:v1/v2/...` explicit lists, comma separated.
#[derive(Clone, Debug, PartialEq)]
pub struct GenFile {
    pub gen: GenConfig,
    pub vit: VitConfig,
}

impl Default for GenFile {
    fn default() -> Self {
        let gen = GenConfig::default();
        Self { vit: VitConfig { image_size: gen.image_size, ..VitConfig::default() }, gen }
    }
}

impl GenFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut f = Self::default();
        let mut split_seed = None;
        for (k, v) in parse_kv(text)? {
            let g = &mut f.gen;
            match k.as_str() {
                "image_size" => g.image_size = num(&k, &v)?,
                "glyph_size" => g.glyph_size = num(&k, &v)?,
                "n_images" => g.n_images = num(&k, &v)?,
                "probe_per_class" => g.probe_per_class = num(&k, &v)?,
                "seed" => g.seed = num(&k, &v)?,
                "per_object_variation" => g.per_object_variation = flag(&k, &v)?,
                "vocab_multiplier" => g.vocab_multiplier = num(&k, &v)?,
                "texture_contrast" => g.texture_contrast = num(&k, &v)?,
                "background_jitter" => g.background_jitter = num(&k, &v)?,
                "known_fraction" => g.split.known_fraction = num(&k, &v)?,
                "labeled_per_class" => g.split.labeled_per_class = num(&k, &v)?,
                "split_seed" => split_seed = Some(num(&k, &v)?),
                "contexts" => g.contexts = parse_contexts(&v)?,
                "patch_size" => f.vit.patch_size = num(&k, &v)?,
                "depth" => f.vit.depth = num(&k, &v)?,
                "width" => f.vit.width = num(&k, &v)?,
                "heads" => f.vit.heads = num(&k, &v)?,
                "mlp_ratio" => f.vit.mlp_ratio = num(&k, &v)?,
                "backbone_seed" => f.vit.seed = num(&k, &v)?,
                _ => return Err(Error::Config(format!("unknown generator key {k:?}"))),
            }
        }
        f.gen.split.seed = split_seed.unwrap_or(f.gen.seed);
        f.vit.image_size = f.gen.image_size;
        f.gen.validate()?;
        f.vit.validate()?;
        Ok(f)
    }

    pub fn render(&self) -> String {
        let g = &self.gen;
        let v = &self.vit;
        let ctx: Vec<String> = g.contexts.iter().map(|(a, cs)| format!("{a}:{}", cs.join("/"))).collect();
        let mut s = String::new();
        for (k, val) in [
            ("image_size", g.image_size.to_string()),
            ("glyph_size", g.glyph_size.to_string()),
            ("n_images", g.n_images.to_string()),
            ("probe_per_class", g.probe_per_class.to_string()),
            ("seed", g.seed.to_string()),
            ("per_object_variation", g.per_object_variation.to_string()),
            ("vocab_multiplier", g.vocab_multiplier.to_string()),
            ("texture_contrast", g.texture_contrast.to_string()),
            ("background_jitter", g.background_jitter.to_string()),
            ("known_fraction", g.split.known_fraction.to_string()),
            ("labeled_per_class", g.split.labeled_per_class.to_string()),
            ("split_seed", g.split.seed.to_string()),
            ("contexts", ctx.join(",")),
            ("patch_size", v.patch_size.to_string()),
            ("depth", v.depth.to_string()),
            ("width", v.width.to_string()),
            ("heads", v.heads.to_string()),
            ("mlp_ratio", v.mlp_ratio.to_string()),
            ("backbone_seed", v.seed.to_string()),
        ] {
            let _ = writeln!(s, "{k}={val}");
        }
        s
    }
}

fn parse_contexts(v: &str) -> Result<Vec<(Attribute, Vec<String>)>> {
    let mut out = Vec::new();
    for entry in v.split(',').map(str::trim).filter(|e| !e.is_empty()) {
        let (a, rest) = entry.split_once(':').ok_or_else(|| Error::Config(format!("context entry {entry:?} needs attr:classes")))?;
        let attr: Attribute = a.trim().parse()?;
        let classes: Vec<String> = match rest.trim().parse::<usize>() {
            Ok(n) => {
                let p = attr.palette();
                if n > p.len() {
                    return Err(Error::Config(format!("{attr} has only {} values, {n} requested", p.len())));
                }
                p[..n].iter().map(|s| s.to_string()).collect()
            }
            Err(_) => rest.split('/').map(|s| s.trim().to_string()).collect(),
        };
        out.push((attr, classes));
    }
    Ok(out)
}

pub fn render_vit_config(v: &VitConfig) -> String {
    format!(
        "image_size={}\npatch_size={}\ndepth={}\nwidth={}\nheads={}\nmlp_ratio={}\nseed={}\n",
        v.image_size, v.patch_size, v.depth, v.width, v.heads, v.mlp_ratio, v.seed
    )
}

pub fn parse_vit_config(text: &str) -> Result<VitConfig> {
    let mut v = VitConfig::default();
    for (k, val) in parse_kv(text)? {
        match k.as_str() {
            "image_size" => v.image_size = num(&k, &val)?,
            "patch_size" => v.patch_size = num(&k, &val)?,
            "depth" => v.depth = num(&k, &val)?,
            "width" => v.width = num(&k, &val)?,
            "heads" => v.heads = num(&k, &val)?,
            "mlp_ratio" => v.mlp_ratio = num(&k, &val)?,
            "seed" => v.seed = num(&k, &val)?,
            _ => return Err(Error::Config(format!("unknown backbone key {k:?}"))),
        }
    }
    v.validate()?;
    Ok(v)
}

/// The LLM vocabulary prompt with its placeholders filled in.
pub fn render_vocab_prompt(known: &[String], novel_count: usize) -> String {
    let quoted: Vec<String> = known.iter().map(|k| format!("\"{k}\"")).collect();
    VOCAB_PROMPT
        .replace("[KNOWN_CLASSES]", &quoted.join(", "))
        .replace("[NUMBER_OF_NOVEL_CLASSES]", &novel_count.to_string())
}

/// A generated dataset directory with its frozen encoder.
pub struct Bundle {
    pub dir: PathBuf,
    pub ds: MultiContextDataset,
    pub encoder: EncoderPair,
}

impl Bundle {
    pub fn load(dir: &Path) -> Result<Self> {
        let ds = MultiContextDataset::load(dir)?;
        let bp = dir.join(BACKBONE_FILE);
        let vit = FrozenVit::new(parse_vit_config(&fs::read_to_string(&bp).at(&bp)?)?)?;
        let lexicon = Lexicon::load(&dir.join(LEXICON_FILE))?;
        Ok(Self { dir: dir.to_path_buf(), ds, encoder: EncoderPair::new(vit, lexicon)? })
    }

    pub fn run_dir(&self, context: &str, method: Method, seed: u64) -> PathBuf {
        self.dir.join("runs").join(context).join(method.tag()).join(format!("seed-{seed}"))
    }

    pub fn report_dir(&self, method: Method, seed: u64) -> PathBuf {
        self.dir.join("reports").join(method.tag()).join(format!("seed-{seed}"))
    }

    pub fn train_config(&self, config: Option<&Path>, method: Method, seed: u64) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::for_dataset_size(self.ds.len());
        if let Some(p) = config {
            cfg.apply_text(&fs::read_to_string(p).at(p)?)?;
        }
        cfg.seed = seed;
        method.configure(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Generates the dataset, probes and lexicon and writes the dataset directory.
pub fn generate(file: &GenFile, out: &Path) -> Result<Bundle> {
    let (ds, probes) = generate_dataset(&file.gen)?;
    let vit = FrozenVit::new(file.vit)?;
    let lexicon = calibrate_lexicon(&vit, &probes)?;
    fs::create_dir_all(out.join("images")).at(out)?;
    for item in &ds.items {
        if let Payload::Image(img) = &item.payload {
            img.save_ppm(&out.join(&item.id))?;
        }
    }
    ds.save(out)?;
    lexicon.save(&out.join(LEXICON_FILE))?;
    let bp = out.join(BACKBONE_FILE);
    fs::write(&bp, render_vit_config(&file.vit)).at(&bp)?;
    let gp = out.join(GEN_FILE);
    fs::write(&gp, file.render()).at(&gp)?;
    for dir in ["vocab", "prompts"] {
        fs::create_dir_all(out.join(dir)).at(out.join(dir))?;
    }
    for col in &ds.contexts {
        let spec = col.spec()?;
        let vp = out.join("vocab").join(format!("{}.txt", col.id));
        fs::write(&vp, render_vocab(&spec.known_classes, &spec.candidate_vocab)).at(&vp)?;
        let pp = out.join("prompts").join(format!("{}.txt", col.id));
        fs::write(&pp, render_vocab_prompt(&spec.known_classes, spec.novel_class_count)).at(&pp)?;
    }
    Ok(Bundle { dir: out.to_path_buf(), ds, encoder: EncoderPair::new(vit, lexicon)? })
}

/// Trains one context and writes `tokens.emb`, `checkpoint.bin`, `log.tsv` and `train.cfg`
/// into `out`.
pub fn train(bundle: &Bundle, context: &str, cfg: &TrainConfig, out: &Path) -> Result<TrainOutcome> {
    let run = ContextRun::new(&bundle.ds, context, &bundle.encoder)?;
    let mut state = TrainState::fresh(context, &bundle.encoder.image_encoder, cfg)?;
    let log = run.train_epochs(&mut state, cfg, cfg.epochs, Objective::Oak)?;
    fs::create_dir_all(out).at(out)?;
    state.tokens.save(&out.join("tokens.emb"))?;
    save_checkpoint(&state, &out.join("checkpoint.bin"))?;
    let lp = out.join("log.tsv");
    fs::write(&lp, render_log(&log)).at(&lp)?;
    let cp = out.join("train.cfg");
    fs::write(&cp, cfg.render()).at(&cp)?;
    Ok(TrainOutcome { tokens: state.tokens.clone(), state, log })
}

/// One context's predictions for `method`, plus the clustering when the method clusters.
pub fn predict_context(
    bundle: &Bundle,
    context: &str,
    method: Method,
    tokens: &ContextTokens,
    seed: u64,
    n_init: usize,
) -> Result<(ContextPrediction, Option<ClusterModel>)> {
    let col = bundle.ds.context(context)?;
    let spec = col.spec()?;
    let known: BTreeSet<String> = spec.known_classes.iter().cloned().collect();
    let items = col.unlabeled_eval();
    let truth: Vec<String> = items.iter().map(|&i| col.labels[i].clone().unwrap_or_default()).collect();
    let run = ContextRun::new(&bundle.ds, context, &bundle.encoder)?;
    let emb = run.embed_all(tokens)?;
    let (predicted, model) = if method.clusters() {
        let model = run.cluster(&emb, seed, n_init)?;
        let pred: Vec<usize> = items.iter().map(|&i| model.assignment[i]).collect();
        let m = cluster_accuracy(&pred, &truth, &known)?;
        let names = pred.iter().map(|c| m.mapping.get(c).cloned().unwrap_or_else(|| format!("#cluster{c}"))).collect();
        (names, Some(model))
    } else {
        let vocab = if method == Method::ZeroShot { spec.known_classes.clone() } else { spec.extended_vocab() };
        let lex = bundle.encoder.lexicon.subset(&vocab)?;
        let mut sub = crate::tensor::Mat::zeros(items.len(), emb.cols());
        for (r, &i) in items.iter().enumerate() {
            sub.row_mut(r).copy_from_slice(emb.row(i));
        }
        (zero_shot_classify(&sub, &lex)?, None)
    };
    let pred = ContextPrediction {
        context: context.to_string(),
        items,
        predicted,
        truth,
        known_classes: known,
        novel_applicable: method != Method::ZeroShot,
    };
    Ok((pred, model))
}

/// Tokens a method evaluates with: the trained run's tokens, or none.
pub fn method_tokens(bundle: &Bundle, context: &str, method: Method, seed: u64, explicit: Option<&Path>) -> Result<ContextTokens> {
    let d = bundle.encoder.image_encoder.width();
    match (explicit, method.trains()) {
        (Some(p), _) => ContextTokens::load(p),
        (None, true) => ContextTokens::load(&bundle.run_dir(context, method, seed).join("tokens.emb")),
        (None, false) => Ok(ContextTokens::empty(context, d)),
    }
}

/// Full report over `contexts` for one method and seed.
pub fn evaluate(
    bundle: &Bundle,
    method: Method,
    seed: u64,
    contexts: &[String],
    tokens: &BTreeMap<String, PathBuf>,
    n_init: usize,
) -> Result<EvalReport> {
    let mut preds = Vec::with_capacity(contexts.len());
    for c in contexts {
        let z = method_tokens(bundle, c, method, seed, tokens.get(c).map(PathBuf::as_path))?;
        preds.push(predict_context(bundle, c, method, &z, seed, n_init)?.0);
    }
    build_report(method.tag(), seed, &preds, contexts)
}

/// Per-metric mean and sample standard deviation over several `report.tsv` files.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub method: Option<String>,
    pub n_reports: usize,
    /// `(context, split) → (mean, std)`; `None` where the metric is not applicable.
    pub rows: Vec<((String, String), Option<(f64, f64)>)>,
}

pub fn aggregate_seeds(reports: &[String]) -> Result<Aggregate> {
    if reports.len() < 2 {
        return Err(Error::Evaluation(format!("aggregation needs at least two reports, got {}", reports.len())));
    }
    let parsed: Vec<_> = reports.iter().map(|r| parse_report_tsv(r)).collect::<Result<_>>()?;
    let method_of = |r: &str| r.lines().find_map(|l| l.strip_prefix("#method\t").map(str::to_string));
    let method = method_of(&reports[0]);
    let keys: Vec<(String, String)> = parsed[0].iter().map(|(k, _)| k.clone()).collect();
    for (i, p) in parsed.iter().enumerate().skip(1) {
        let ks: Vec<(String, String)> = p.iter().map(|(k, _)| k.clone()).collect();
        if ks != keys {
            return Err(Error::Evaluation(format!("report {} has a different schema from report 1", i + 1)));
        }
        if method_of(&reports[i]) != method {
            return Err(Error::Evaluation(format!("report {} comes from a different method", i + 1)));
        }
    }
    let n = parsed.len() as f64;
    let mut rows = Vec::with_capacity(keys.len());
    for (j, key) in keys.into_iter().enumerate() {
        let vals: Vec<Option<f64>> = parsed.iter().map(|p| p[j].1).collect();
        let row = if vals.iter().all(Option::is_none) {
            None
        } else if vals.iter().any(Option::is_none) {
            return Err(Error::Evaluation(format!("{}/{} is applicable in some reports only", key.0, key.1)));
        } else {
            let v: Vec<f64> = vals.into_iter().flatten().collect();
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            Some((mean, var.sqrt()))
        };
        rows.push((key, row));
    }
    Ok(Aggregate { method, n_reports: parsed.len(), rows })
}

impl Aggregate {
    pub fn get(&self, context: &str, split: &str) -> Option<(f64, f64)> {
        self.rows.iter().find(|((c, s), _)| c == context && s == split).and_then(|(_, v)| *v)
    }

    pub fn render_tsv(&self) -> String {
        let mut s = String::new();
        if let Some(m) = &self.method {
            let _ = writeln!(s, "#method\t{m}");
        }
        let _ = writeln!(s, "#reports\t{}", self.n_reports);
        let _ = writeln!(s, "context\tsplit\tmean\tstd");
        for ((c, sp), v) in &self.rows {
            match v {
                Some((m, sd)) => {
                    let _ = writeln!(s, "{c}\t{sp}\t{m:.6}\t{sd:.6}");
                }
                None => {
                    let _ = writeln!(s, "{c}\t{sp}\tNA\tNA");
                }
            }
        }
        s
    }

    /// Percent table, `mean±std` per cell.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "method {}  reports {}", self.method.as_deref().unwrap_or("-"), self.n_reports);
        let _ = writeln!(s, "{:<16} {:>14} {:>14} {:>14}", "context", "known", "novel", "all");
        let mut contexts: Vec<&str> = Vec::new();
        for ((c, _), _) in &self.rows {
            if !contexts.contains(&c.as_str()) {
                contexts.push(c);
            }
        }
        let cell = |c: &str, sp: &str| match self.get(c, sp) {
            Some((m, sd)) => format!("{:.1}±{:.1}", 100.0 * m, 100.0 * sd),
            None => "-".to_string(),
        };
        for c in contexts {
            let _ = writeln!(s, "{:<16} {:>14} {:>14} {:>14}", c, cell(c, "known"), cell(c, "novel"), cell(c, "all"));
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).at(dir)?;
        let t = dir.join("aggregate.tsv");
        fs::write(&t, self.render_tsv()).at(&t)?;
        let x = dir.join("aggregate.txt");
        fs::write(&x, self.render_text()).at(&x)
    }
}

/// Cluster names for one context, one line per cluster: id, name, size, majority truth.
pub fn naming_table(bundle: &Bundle, context: &str, model: &ClusterModel, names: &[String]) -> Result<String> {
    let col = bundle.ds.context(context)?;
    let mut s = String::from("cluster\tname\tsize\tmajority\n");
    for (c, members) in model.members().iter().enumerate() {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for &i in members {
            if let Some(l) = col.labels[i].as_deref() {
                *counts.entry(l).or_default() += 1;
            }
        }
        let majority = counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map_or("-", |(k, _)| *k);
        let _ = writeln!(s, "{c}\t{}\t{}\t{majority}", names[c], members.len());
    }
    Ok(s)
}

fn threads_from_env() -> Result<usize> {
    match std::env::var("OAK_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!("OAK_THREADS must be a positive integer, got {v:?}"))),
        },
    }
}

#[derive(Parser, Debug)]
#[command(name = "oak", version, about = "Open ad-hoc categorization with per-context tokens on a frozen encoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic multi-context dataset with its lexicon
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one context's tokens
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        context: String,
        #[arg(long, value_enum, default_value = "oak")]
        method: Method,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a method on every context and write report.txt / report.tsv
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated contexts; all by default
        #[arg(long)]
        context: Option<String>,
        /// Token files as context=path, repeatable
        #[arg(long)]
        tokens: Vec<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cluster one context and name its clusters
    Name {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        context: String,
        #[arg(long, value_enum, default_value = "oak")]
        method: Method,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        tokens: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Relevance heatmaps for a few items under a context's tokens
    Saliency {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        context: String,
        #[arg(long, value_enum, default_value = "oak")]
        method: Method,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        tokens: Option<PathBuf>,
        /// Class name whose similarity is explained; empty for the norm proxy
        #[arg(long, default_value = "")]
        target: String,
        /// Comma-separated dataset indices; the first four evaluation items by default
        #[arg(long)]
        items: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate report.tsv files into mean and standard deviation
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate several methods over several seeds
    Sweep {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "oak,gcd,ss-kmeans,zero-shot,zero-shot-vocab")]
        methods: Vec<Method>,
        #[arg(long, default_value = "0..2")]
        seeds: String,
        #[arg(long)]
        context: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `argv` (program name first), runs the command and returns the exit code:
/// 0 on success, 2 for usage errors, 1 for errors raised by a module.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli, argv.get(1..).unwrap_or_default().to_vec()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn contexts_arg(bundle: &Bundle, arg: Option<&str>) -> Result<Vec<String>> {
    match arg {
        None => Ok(bundle.ds.context_ids()),
        Some(s) => {
            let list: Vec<String> = s.split(',').map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect();
            for c in &list {
                bundle.ds.context(c)?;
            }
            Ok(list)
        }
    }
}

fn n_init_for(bundle: &Bundle, config: Option<&Path>, method: Method, seed: u64) -> Result<usize> {
    Ok(bundle.train_config(config, method, seed)?.n_init)
}

fn run(cli: Cli, args: Vec<String>) -> Result<()> {
    threads_from_env()?;
    let manifest = |command: &str, config: &Option<PathBuf>, seeds: Vec<u64>, out: &Path, method: Option<Method>| RunManifest {
        command: command.to_string(),
        config: config.clone(),
        seeds,
        out: out.to_path_buf(),
        method,
        argv: args.clone(),
    };
    match cli.command {
        Command::Gen { config, out } => {
            let file = match &config {
                Some(p) => GenFile::parse(&fs::read_to_string(p).at(p)?)?,
                None => GenFile::default(),
            };
            let b = generate(&file, &out)?;
            manifest("gen", &config, vec![file.gen.seed], &out, None).save(&out)?;
            println!("{} items, {} contexts, lexicon of {} names -> {}", b.ds.len(), b.ds.contexts.len(), b.encoder.lexicon.len(), out.display());
        }
        Command::Train { dataset, context, method, seed, config, out } => {
            if !method.trains() {
                return Err(Error::Config(format!("method {method} has no training step")));
            }
            let b = Bundle::load(&dataset)?;
            let cfg = b.train_config(config.as_deref(), method, seed)?;
            let out = out.unwrap_or_else(|| b.run_dir(&context, method, seed));
            let o = train(&b, &context, &cfg, &out)?;
            manifest("train", &config, vec![seed], &out, Some(method)).save(&out)?;
            let last = o.log.last().map_or(f64::NAN, |l| l.mean_loss());
            println!("{context}/{method}/seed {seed}: {} epochs, final mean loss {last:.4} -> {}", o.log.len(), out.display());
        }
        Command::Eval { dataset, method, seed, context, tokens, config, out } => {
            let b = Bundle::load(&dataset)?;
            let contexts = contexts_arg(&b, context.as_deref())?;
            let mut tok = BTreeMap::new();
            for t in &tokens {
                let (c, p) = t.split_once('=').ok_or_else(|| Error::Config(format!("--tokens expects context=path, got {t:?}")))?;
                tok.insert(c.to_string(), PathBuf::from(p));
            }
            let n_init = n_init_for(&b, config.as_deref(), method, seed)?;
            let report = evaluate(&b, method, seed, &contexts, &tok, n_init)?;
            let out = out.unwrap_or_else(|| b.report_dir(method, seed));
            report.write(&out)?;
            manifest("eval", &config, vec![seed], &out, Some(method)).save(&out)?;
            print!("{}", report.render_text());
        }
        Command::Name { dataset, context, method, seed, tokens, config, out } => {
            if !method.clusters() {
                return Err(Error::Config(format!("method {method} does not cluster")));
            }
            let b = Bundle::load(&dataset)?;
            let z = method_tokens(&b, &context, method, seed, tokens.as_deref())?;
            let n_init = n_init_for(&b, config.as_deref(), method, seed)?;
            let (_, model) = predict_context(&b, &context, method, &z, seed, n_init)?;
            let model = model.expect("clustering method");
            let vocab = b.ds.context(&context)?.spec()?.extended_vocab();
            let names = name_clusters(&model, &b.encoder.lexicon.subset(&vocab)?)?;
            let out = out.unwrap_or_else(|| b.run_dir(&context, method, seed).join("names"));
            fs::create_dir_all(&out).at(&out)?;
            let table = naming_table(&b, &context, &model, &names)?;
            let p = out.join("names.tsv");
            fs::write(&p, &table).at(&p)?;
            manifest("name", &config, vec![seed], &out, Some(method)).save(&out)?;
            print!("{table}");
        }
        Command::Saliency { dataset, context, method, seed, tokens, target, items, out } => {
            let b = Bundle::load(&dataset)?;
            let z = method_tokens(&b, &context, method, seed, tokens.as_deref())?;
            let col = b.ds.context(&context)?;
            let idx: Vec<usize> = match items {
                Some(s) => s.split(',').map(|x| num::<usize>("items", x.trim())).collect::<Result<_>>()?,
                None => col.unlabeled_eval().into_iter().take(4).collect(),
            };
            let out = out.unwrap_or_else(|| b.run_dir(&context, method, seed).join("saliency"));
            let size = b.encoder.image_encoder.config().image_size;
            for i in idx {
                let img: ImageTensor = b.ds.image(i)?.to_tensor();
                let map = relevance_map(&b.encoder.image_encoder, &b.encoder.lexicon, &img, &z, &target)?;
                map.save(&out, &format!("item-{i:05}"), size)?;
            }
            manifest("saliency", &None, vec![seed], &out, Some(method)).save(&out)?;
            println!("heatmaps -> {}", out.display());
        }
        Command::Report { inputs, out } => {
            let texts: Vec<String> = inputs.iter().map(|p| fs::read_to_string(p).at(p)).collect::<Result<_>>()?;
            let agg = aggregate_seeds(&texts)?;
            agg.write(&out)?;
            manifest("report", &None, Vec::new(), &out, None).save(&out)?;
            print!("{}", agg.render_text());
        }
        Command::Sweep { dataset, methods, seeds, context, config, out } => {
            let seeds = parse_seed_list(&seeds)?;
            let b = Bundle::load(&dataset)?;
            let contexts = contexts_arg(&b, context.as_deref())?;
            let mut summary = String::new();
            for &method in &methods {
                let mut reports = Vec::with_capacity(seeds.len());
                for &seed in &seeds {
                    let cfg = b.train_config(config.as_deref(), method, seed)?;
                    let mut tok = BTreeMap::new();
                    if method.trains() {
                        for c in &contexts {
                            let rd = out.join("runs").join(c).join(method.tag()).join(format!("seed-{seed}"));
                            train(&b, c, &cfg, &rd)?;
                            tok.insert(c.clone(), rd.join("tokens.emb"));
                        }
                    }
                    let report = evaluate(&b, method, seed, &contexts, &tok, cfg.n_init)?;
                    let rd = out.join("reports").join(method.tag()).join(format!("seed-{seed}"));
                    report.write(&rd)?;
                    reports.push(report.render_tsv());
                }
                let md = out.join("reports").join(method.tag());
                if reports.len() >= 2 {
                    let agg = aggregate_seeds(&reports)?;
                    agg.write(&md)?;
                    summary.push_str(&agg.render_text());
                } else {
                    let p = md.join(format!("seed-{}", seeds[0])).join("report.txt");
                    summary.push_str(&fs::read_to_string(&p).at(&p)?);
                }
                summary.push('\n');
            }
            let sp = out.join("summary.txt");
            fs::create_dir_all(&out).at(&out)?;
            fs::write(&sp, &summary).at(&sp)?;
            manifest("sweep", &config, seeds, &out, None).save(&out)?;
            print!("{summary}");
        }
    }
    Ok(())
}
