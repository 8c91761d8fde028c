//! Clustering accuracy under Hungarian matching, Omni accuracy, silhouette, and reports.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::discovery::hungarian_match;
use crate::error::{Error, IoContext, Result};
use crate::tensor::{sq_dist, Mat};

/// Accuracy on the whole evaluation set and on its known/novel subsets. A subset with no
/// items has no value.
#[derive(Clone, Debug, PartialEq)]
pub struct Accuracy {
    pub known: Option<f64>,
    pub novel: Option<f64>,
    pub overall: f64,
}

/// Cluster id → class produced by the joint match.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterMatch {
    pub accuracy: Accuracy,
    pub mapping: BTreeMap<usize, String>,
}

fn split_accuracy(correct: &[bool], is_known: &[bool]) -> Accuracy {
    let frac = |sel: &dyn Fn(usize) -> bool| {
        let idx: Vec<usize> = (0..correct.len()).filter(|&i| sel(i)).collect();
        if idx.is_empty() {
            None
        } else {
            Some(idx.iter().filter(|&&i| correct[i]).count() as f64 / idx.len() as f64)
        }
    };
    Accuracy {
        known: frac(&|i| is_known[i]),
        novel: frac(&|i| !is_known[i]),
        overall: frac(&|_| true).unwrap_or(0.0),
    }
}

/// One Hungarian match between predicted cluster ids and true classes over every item,
/// maximising agreement; accuracies are read off the matched predictions.
pub fn cluster_accuracy<S: AsRef<str>>(pred: &[usize], gt: &[S], known: &BTreeSet<String>) -> Result<ClusterMatch> {
    if pred.len() != gt.len() {
        return Err(Error::Evaluation(format!("{} predictions for {} ground-truth labels", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(Error::Evaluation("empty evaluation set".into()));
    }
    let clusters: Vec<usize> = pred.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let classes: Vec<&str> = gt.iter().map(AsRef::as_ref).collect::<BTreeSet<_>>().into_iter().collect();
    let n = clusters.len().max(classes.len());
    let ci: HashMap<usize, usize> = clusters.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let yi: HashMap<&str, usize> = classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut cost = Mat::zeros(n, n);
    for (p, g) in pred.iter().zip(gt) {
        let (a, b) = (ci[p], yi[g.as_ref()]);
        cost.set(a, b, cost.get(a, b) - 1.0);
    }
    let m = hungarian_match(&cost)?;
    let mut mapping = BTreeMap::new();
    for (a, &c) in clusters.iter().enumerate() {
        if let Some(&y) = classes.get(m.row_to_col[a]) {
            mapping.insert(c, y.to_string());
        }
    }
    let correct: Vec<bool> = pred.iter().zip(gt).map(|(p, g)| mapping.get(p).is_some_and(|y| y == g.as_ref())).collect();
    let is_known: Vec<bool> = gt.iter().map(|g| known.contains(g.as_ref())).collect();
    Ok(ClusterMatch { accuracy: split_accuracy(&correct, &is_known), mapping })
}

/// Item-keyed form; both maps must cover the same items.
pub fn cluster_accuracy_by_id(pred: &BTreeMap<String, usize>, gt: &BTreeMap<String, String>, known: &BTreeSet<String>) -> Result<ClusterMatch> {
    if pred.len() != gt.len() || pred.keys().any(|k| !gt.contains_key(k)) {
        return Err(Error::Evaluation("predictions and ground truth cover different items".into()));
    }
    let p: Vec<usize> = pred.values().copied().collect();
    let g: Vec<&str> = pred.keys().map(|k| gt[k].as_str()).collect();
    cluster_accuracy(&p, &g, known)
}

/// Accuracy of named predictions by plain equality.
pub fn name_accuracy<S: AsRef<str>, T: AsRef<str>>(pred: &[S], gt: &[T], known: &BTreeSet<String>) -> Result<Accuracy> {
    if pred.len() != gt.len() {
        return Err(Error::Evaluation(format!("{} predictions for {} ground-truth labels", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(Error::Evaluation("empty evaluation set".into()));
    }
    let correct: Vec<bool> = pred.iter().zip(gt).map(|(p, g)| p.as_ref() == g.as_ref()).collect();
    let is_known: Vec<bool> = gt.iter().map(|g| known.contains(g.as_ref())).collect();
    Ok(split_accuracy(&correct, &is_known))
}

/// Fraction of items predicted correctly in every context. `preds[c][i]` and `gts[c][i]`
/// refer to the same item `i` in context `c`.
pub fn omni_accuracy<S: AsRef<str>, T: AsRef<str>>(preds: &[Vec<S>], gts: &[Vec<T>]) -> Result<f64> {
    if preds.len() != gts.len() || preds.is_empty() {
        return Err(Error::Evaluation(format!("{} prediction columns for {} label columns", preds.len(), gts.len())));
    }
    let n = gts[0].len();
    if n == 0 {
        return Err(Error::Evaluation("omni accuracy unreliable: no item is labeled in every context".into()));
    }
    if preds.iter().any(|p| p.len() != n) || gts.iter().any(|g| g.len() != n) {
        return Err(Error::Evaluation("omni accuracy needs every context to cover the same items".into()));
    }
    let hits = (0..n)
        .filter(|&i| preds.iter().zip(gts).all(|(p, g)| p[i].as_ref() == g[i].as_ref()))
        .count();
    Ok(hits as f64 / n as f64)
}

/// Mean silhouette with Euclidean distance. Items alone in their cluster score zero.
pub fn silhouette(x: &Mat, assignment: &[usize]) -> Result<f64> {
    let n = x.rows();
    if assignment.len() != n {
        return Err(Error::Evaluation(format!("{} assignments for {n} embeddings", assignment.len())));
    }
    let labels: Vec<usize> = assignment.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if labels.len() < 2 {
        return Err(Error::Evaluation("silhouette needs at least two clusters".into()));
    }
    let idx: HashMap<usize, usize> = labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let k = labels.len();
    let mut sizes = vec![0usize; k];
    assignment.iter().for_each(|a| sizes[idx[a]] += 1);
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                sums[idx[&assignment[j]]] += sq_dist(x.row(i), x.row(j)).sqrt();
            }
        }
        let own = idx[&assignment[i]];
        if sizes[own] == 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k).filter(|&c| c != own).map(|c| sums[c] / sizes[c] as f64).fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

/// Predictions of one method in one context, already expressed as class names.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextPrediction {
    pub context: String,
    /// Dataset indices of the evaluated (unlabeled) items.
    pub items: Vec<usize>,
    pub predicted: Vec<String>,
    pub truth: Vec<String>,
    pub known_classes: BTreeSet<String>,
    /// False for methods that cannot name novel classes; their novel accuracy is not
    /// applicable.
    pub novel_applicable: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContextResult {
    pub context: String,
    pub accuracy: Accuracy,
    pub n_eval: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub method: String,
    pub seed: u64,
    pub contexts: Vec<ContextResult>,
    pub omni: Option<Accuracy>,
    pub n_shared: usize,
}

/// Per-context accuracies plus Omni accuracy over the items every context evaluates.
/// Omni known/novel restrict to items whose class is known (novel) in every context.
pub fn build_report(method: &str, seed: u64, preds: &[ContextPrediction], context_order: &[String]) -> Result<EvalReport> {
    let mut ordered = Vec::with_capacity(context_order.len());
    for c in context_order {
        ordered.push(
            preds
                .iter()
                .find(|p| &p.context == c)
                .ok_or_else(|| Error::Evaluation(format!("missing result for context {c:?}")))?,
        );
    }
    let mut contexts = Vec::new();
    for p in &ordered {
        let mut acc = name_accuracy(&p.predicted, &p.truth, &p.known_classes)?;
        if !p.novel_applicable {
            acc.novel = None;
        }
        contexts.push(ContextResult { context: p.context.clone(), accuracy: acc, n_eval: p.items.len() });
    }

    let mut shared: BTreeSet<usize> = ordered.first().map(|p| p.items.iter().copied().collect()).unwrap_or_default();
    for p in &ordered[1.min(ordered.len())..] {
        let s: BTreeSet<usize> = p.items.iter().copied().collect();
        shared = shared.intersection(&s).copied().collect();
    }
    let lookup: Vec<HashMap<usize, usize>> = ordered.iter().map(|p| p.items.iter().enumerate().map(|(k, &i)| (i, k)).collect()).collect();
    let shared: Vec<usize> = shared.into_iter().collect();
    let omni = if shared.is_empty() {
        None
    } else {
        let col = |c: usize, f: &dyn Fn(&ContextPrediction) -> &Vec<String>, sel: &[usize]| -> Vec<String> {
            sel.iter().map(|i| f(ordered[c])[lookup[c][i]].clone()).collect()
        };
        let omni_on = |sel: &[usize]| -> Result<Option<f64>> {
            if sel.is_empty() {
                return Ok(None);
            }
            let ps: Vec<Vec<String>> = (0..ordered.len()).map(|c| col(c, &|p| &p.predicted, sel)).collect();
            let gs: Vec<Vec<String>> = (0..ordered.len()).map(|c| col(c, &|p| &p.truth, sel)).collect();
            omni_accuracy(&ps, &gs).map(Some)
        };
        let all_known: Vec<usize> = shared
            .iter()
            .copied()
            .filter(|i| (0..ordered.len()).all(|c| ordered[c].known_classes.contains(&ordered[c].truth[lookup[c][i]])))
            .collect();
        let all_novel: Vec<usize> = shared
            .iter()
            .copied()
            .filter(|i| (0..ordered.len()).all(|c| !ordered[c].known_classes.contains(&ordered[c].truth[lookup[c][i]])))
            .collect();
        let overall = omni_on(&shared)?.expect("nonempty");
        // conjunction can never beat any single context on the same items
        for c in 0..ordered.len() {
            let hits = shared.iter().filter(|i| ordered[c].predicted[lookup[c][i]] == ordered[c].truth[lookup[c][i]]).count();
            let per = hits as f64 / shared.len() as f64;
            if overall > per + 1e-12 {
                return Err(Error::Evaluation(format!("omni accuracy {overall} exceeds context {} accuracy {per}", ordered[c].context)));
            }
        }
        let novel_ok = ordered.iter().all(|p| p.novel_applicable);
        Some(Accuracy {
            known: omni_on(&all_known)?,
            novel: if novel_ok { omni_on(&all_novel)? } else { None },
            overall,
        })
    };
    Ok(EvalReport { method: method.to_string(), seed, contexts, omni, n_shared: shared.len() })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.1}", 100.0 * x))
}

fn tsv_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

impl EvalReport {
    /// Fixed-width table: one row per context plus Omni, columns known/novel/all in percent.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "method {}  seed {}", self.method, self.seed);
        let _ = writeln!(s, "{:<16} {:>8} {:>8} {:>8} {:>6}", "context", "known", "novel", "all", "n");
        for c in &self.contexts {
            let a = &c.accuracy;
            let _ = writeln!(s, "{:<16} {:>8} {:>8} {:>8} {:>6}", c.context, fmt_opt(a.known), fmt_opt(a.novel), fmt_opt(Some(a.overall)), c.n_eval);
        }
        match &self.omni {
            Some(a) => {
                let _ = writeln!(s, "{:<16} {:>8} {:>8} {:>8} {:>6}", "omni", fmt_opt(a.known), fmt_opt(a.novel), fmt_opt(Some(a.overall)), self.n_shared);
            }
            None => {
                let _ = writeln!(s, "{:<16} {:>8} {:>8} {:>8} {:>6}", "omni", "-", "-", "-", 0);
            }
        }
        s
    }

    /// One metric per line: `context<TAB>split<TAB>value`, `NA` where not applicable.
    pub fn render_tsv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "#method\t{}", self.method);
        let _ = writeln!(s, "#seed\t{}", self.seed);
        for c in &self.contexts {
            let a = &c.accuracy;
            let _ = writeln!(s, "{}\tknown\t{}", c.context, tsv_opt(a.known));
            let _ = writeln!(s, "{}\tnovel\t{}", c.context, tsv_opt(a.novel));
            let _ = writeln!(s, "{}\tall\t{}", c.context, tsv_opt(Some(a.overall)));
        }
        let o = self.omni.as_ref();
        let _ = writeln!(s, "omni\tknown\t{}", tsv_opt(o.and_then(|a| a.known)));
        let _ = writeln!(s, "omni\tnovel\t{}", tsv_opt(o.and_then(|a| a.novel)));
        let _ = writeln!(s, "omni\tall\t{}", tsv_opt(o.map(|a| a.overall)));
        s
    }

    /// Writes `report.txt` and `report.tsv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).at(dir)?;
        let txt = dir.join("report.txt");
        std::fs::write(&txt, self.render_text()).at(&txt)?;
        let tsv = dir.join("report.tsv");
        std::fs::write(&tsv, self.render_tsv()).at(&tsv)
    }
}

/// Metric lines of a `report.tsv`, in file order. `None` marks not-applicable values.
pub fn parse_report_tsv(text: &str) -> Result<Vec<((String, String), Option<f64>)>> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(Error::Evaluation(format!("report line {}: expected 3 fields", ln + 1)));
        }
        let v = if f[2] == "NA" {
            None
        } else {
            Some(f[2].parse::<f64>().map_err(|_| Error::Evaluation(format!("report line {}: bad value {:?}", ln + 1, f[2])))?)
        };
        out.push(((f[0].to_string(), f[1].to_string()), v));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(v: &[&str]) -> BTreeSet<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn identity_and_permuted_predictions_score_one() {
        let gt = ["a", "b", "c", "a"];
        let m = cluster_accuracy(&[0, 1, 2, 0], &gt, &set(&["a"])).unwrap();
        assert_eq!(m.accuracy, Accuracy { known: Some(1.0), novel: Some(1.0), overall: 1.0 });
        let p = cluster_accuracy(&[7, 3, 5, 7], &gt, &set(&["a"])).unwrap();
        assert_eq!(p.accuracy.overall, 1.0);
        assert_eq!(p.mapping[&7], "a");
    }

    #[test]
    fn one_misassigned_of_eight() {
        let gt = ["x", "x", "x", "x", "y", "y", "y", "y"];
        let pred = [0, 0, 0, 1, 1, 1, 1, 1];
        let m = cluster_accuracy(&pred, &gt, &set(&[])).unwrap();
        // brute force over both bijections
        let score = |map: [&str; 2]| pred.iter().zip(gt).filter(|(p, g)| map[**p] == *g).count();
        let best = score(["x", "y"]).max(score(["y", "x"]));
        assert_eq!(m.accuracy.overall, best as f64 / 8.0);
        assert_eq!(m.accuracy.overall, 0.875);
    }

    #[test]
    fn disjoint_items_are_an_error() {
        let p: BTreeMap<String, usize> = [("a".to_string(), 0)].into();
        let g: BTreeMap<String, String> = [("b".to_string(), "x".to_string())].into();
        assert!(cluster_accuracy_by_id(&p, &g, &set(&[])).is_err());
    }

    #[test]
    fn omni_examples() {
        let all = omni_accuracy(&[vec!["a", "b", "c"]], &[vec!["a", "b", "c"]]).unwrap();
        assert_eq!(all, 1.0);
        let half = omni_accuracy(&[vec!["a", "b"], vec!["p", "q"]], &[vec!["a", "b"], vec!["p", "z"]]).unwrap();
        assert_eq!(half, 0.5);
        let two = omni_accuracy(
            &[vec!["x", "a", "a", "a"], vec!["b", "x", "b", "b"]],
            &[vec!["a", "a", "a", "a"], vec!["b", "b", "b", "b"]],
        )
        .unwrap();
        assert_eq!(two, 0.5);
        let empty: Vec<Vec<&str>> = vec![vec![]];
        assert!(omni_accuracy(&empty, &empty).is_err());
    }

    #[test]
    fn silhouette_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut rows = Vec::new();
        let mut a = Vec::new();
        for i in 0..20 {
            let c = if i < 10 { -100.0 } else { 100.0 };
            rows.push(vec![c + rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01)]);
            a.push(usize::from(i >= 10));
        }
        assert!(silhouette(&Mat::from_rows(&rows), &a).unwrap() > 0.9);

        let singletons = Mat::from_rows(&[vec![0.0], vec![1.0], vec![5.0]]);
        assert_eq!(silhouette(&singletons, &[0, 1, 2]).unwrap(), 0.0);

        let blob: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect();
        let rand_a: Vec<usize> = (0..200).map(|_| rng.random_range(0..2)).collect();
        assert!(silhouette(&Mat::from_rows(&blob), &rand_a).unwrap().abs() < 0.2);

        assert!(silhouette(&singletons, &[0, 0, 0]).is_err());
    }

    fn prediction(ctx: &str, items: Vec<usize>, predicted: &[&str], truth: &[&str], known: &[&str]) -> ContextPrediction {
        ContextPrediction {
            context: ctx.into(),
            items,
            predicted: predicted.iter().map(|s| s.to_string()).collect(),
            truth: truth.iter().map(|s| s.to_string()).collect(),
            known_classes: set(known),
            novel_applicable: true,
        }
    }

    #[test]
    fn two_context_report_shape_and_determinism() {
        let a = prediction("A", vec![0, 1, 2, 3], &["k", "n", "n", "k"], &["k", "n", "k", "k"], &["k"]);
        let b = prediction("B", vec![0, 1, 2, 3], &["u", "v", "v", "v"], &["u", "v", "v", "u"], &["u"]);
        let order = vec!["A".to_string(), "B".to_string()];
        let r = build_report("oak", 0, &[a.clone(), b.clone()], &order).unwrap();
        assert_eq!(r.contexts.len(), 2);
        let tsv = r.render_tsv();
        assert_eq!(parse_report_tsv(&tsv).unwrap().len(), 9);
        let o = r.omni.as_ref().unwrap();
        assert_eq!(o.overall, 0.5);
        for c in &r.contexts {
            assert!(o.overall <= c.accuracy.overall);
        }
        let r2 = build_report("oak", 0, &[b, a], &order).unwrap();
        assert_eq!(r.render_text(), r2.render_text());
        assert_eq!(tsv, r2.render_tsv());
        assert!(build_report("oak", 0, &[], &order).is_err());
    }

    fn brute_max(pred: &[usize], gt: &[usize], k: usize) -> usize {
        fn perms(n: usize) -> Vec<Vec<usize>> {
            if n == 0 {
                return vec![vec![]];
            }
            let mut out = Vec::new();
            for p in perms(n - 1) {
                for pos in 0..=p.len() {
                    let mut q = p.clone();
                    q.insert(pos, n - 1);
                    out.push(q);
                }
            }
            out
        }
        perms(k).iter().map(|p| pred.iter().zip(gt).filter(|(a, b)| p[**a] == **b).count()).max().unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn cluster_accuracy_is_the_permutation_maximum(k in 1usize..=6, seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1..40);
            let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let gt: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let names: Vec<String> = gt.iter().map(|g| format!("c{g}")).collect();
            let acc = cluster_accuracy(&pred, &names, &BTreeSet::new()).unwrap().accuracy.overall;
            prop_assert_eq!(acc, brute_max(&pred, &gt, k) as f64 / n as f64);
            // relabeling clusters changes nothing
            let shifted: Vec<usize> = pred.iter().map(|p| (p + 3) % k + 10).collect();
            prop_assert_eq!(cluster_accuracy(&shifted, &names, &BTreeSet::new()).unwrap().accuracy.overall, acc);
        }

        #[test]
        fn omni_is_the_conjunction_and_bounded_by_contexts(c in 1usize..4, seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1..30);
            let gts: Vec<Vec<String>> = (0..c).map(|_| (0..n).map(|_| format!("y{}", rng.random_range(0..3))).collect()).collect();
            let preds: Vec<Vec<String>> = (0..c).map(|_| (0..n).map(|_| format!("y{}", rng.random_range(0..3))).collect()).collect();
            let omni = omni_accuracy(&preds, &gts).unwrap();
            let mut hits = 0;
            for i in 0..n {
                let mut ok = true;
                for k in 0..c {
                    ok &= preds[k][i] == gts[k][i];
                }
                hits += usize::from(ok);
            }
            prop_assert_eq!(omni, hits as f64 / n as f64);
            let ctx: Vec<ContextPrediction> = (0..c).map(|k| ContextPrediction {
                context: format!("c{k}"),
                items: (0..n).collect(),
                predicted: preds[k].clone(),
                truth: gts[k].clone(),
                known_classes: set(&["y0"]),
                novel_applicable: true,
            }).collect();
            let order: Vec<String> = (0..c).map(|k| format!("c{k}")).collect();
            let r = build_report("m", 0, &ctx, &order).unwrap();
            let o = r.omni.unwrap();
            for cr in &r.contexts {
                prop_assert!(o.overall <= cr.accuracy.overall + 1e-12);
            }
        }
    }
}
