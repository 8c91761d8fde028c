//! Semi-supervised k-means, Hungarian assignment, and naming of clusters from a lexicon.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::{EmbeddingBatch, Lexicon};
use crate::container::{decode_meta, encode_meta, Container, TAG_META};
use crate::error::{Error, IoContext, Result};
use crate::tensor::{cosine, dot, sq_dist, Mat};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KMeansConfig {
    pub n_init: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { n_init: 10, tol: 1e-4, max_iter: 200, seed: 0 }
    }
}

/// Result of one semi-supervised clustering.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterModel {
    pub item_ids: Vec<String>,
    pub centroids: Mat,
    pub assignment: Vec<usize>,
    /// Cluster of each pinned (labeled) item.
    pub pinned: Vec<Option<usize>>,
    /// Known class name carried by each cluster that holds pinned items.
    pub pinned_names: Vec<Option<String>>,
    /// Within-cluster sum of squares of the returned assignment.
    pub inertia: f64,
    /// Objective after each assignment step of the winning restart.
    pub trace: Vec<f64>,
    /// The same trace for every restart, in restart order.
    pub restart_traces: Vec<Vec<f64>>,
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    /// Items of each cluster.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.k()];
        for (i, &c) in self.assignment.iter().enumerate() {
            m[c].push(i);
        }
        m
    }

    /// Centroid matrix plus a tab-separated `item_id, cluster, name` table.
    pub fn save(&self, centroid_path: &Path, table_path: &Path, names: &[String]) -> Result<()> {
        let labels: Vec<String> = self.pinned_names.iter().map(|n| n.clone().unwrap_or_default()).collect();
        let mut c = Container::from_mat(&self.centroids).with_names(&labels);
        c.push_section(TAG_META, encode_meta(&[("inertia", format!("{:e}", self.inertia))]));
        c.save(centroid_path)?;
        std::fs::write(table_path, self.table(names)).at(table_path)
    }

    pub fn table(&self, names: &[String]) -> String {
        let mut s = String::from("item_id\tcluster\tname\tpinned\n");
        for (i, id) in self.item_ids.iter().enumerate() {
            let c = self.assignment[i];
            let name = names.get(c).map_or("", String::as_str);
            s.push_str(&format!("{id}\t{c}\t{name}\t{}\n", u8::from(self.pinned[i].is_some())));
        }
        s
    }

    /// Reads a model written by [`ClusterModel::save`]; also returns the cluster names.
    pub fn load(centroid_path: &Path, table_path: &Path) -> Result<(Self, Vec<String>)> {
        let c = Container::load(centroid_path)?;
        let centroids = c.to_mat();
        let k = centroids.rows();
        let pinned_names: Vec<Option<String>> = c
            .names()?
            .unwrap_or_else(|| vec![String::new(); k])
            .into_iter()
            .map(|n| if n.is_empty() { None } else { Some(n) })
            .collect();
        let meta = c.text_section(TAG_META)?.map(|t| decode_meta(&t)).unwrap_or_default();
        let inertia = meta.iter().find(|(k, _)| k == "inertia").and_then(|(_, v)| v.parse().ok()).unwrap_or(f64::NAN);
        let text = std::fs::read_to_string(table_path).at(table_path)?;
        let mut names = vec![String::new(); k];
        let (mut item_ids, mut assignment, mut pinned) = (Vec::new(), Vec::new(), Vec::new());
        for (ln, line) in text.lines().enumerate().skip(1) {
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse { path: table_path.to_path_buf(), line: ln + 1, msg };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(parse_err(format!("expected 4 fields, found {}", f.len())));
            }
            let cl: usize = f[1].parse().map_err(|_| parse_err(format!("bad cluster index {:?}", f[1])))?;
            if cl >= k {
                return Err(parse_err(format!("cluster {cl} outside 0..{k}")));
            }
            names[cl] = f[2].to_string();
            item_ids.push(f[0].to_string());
            assignment.push(cl);
            pinned.push(if f[3] == "1" { Some(cl) } else { None });
        }
        let model = ClusterModel { item_ids, centroids, assignment, pinned, pinned_names, inertia, trace: Vec::new(), restart_traces: Vec::new() };
        Ok((model, names))
    }
}

fn nearest(x: &[f64], centroids: &Mat) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for k in 0..centroids.rows() {
        let d = sq_dist(x, centroids.row(k));
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn objective(x: &Mat, centroids: &Mat, assignment: &[usize]) -> f64 {
    assignment.iter().enumerate().map(|(i, &c)| sq_dist(x.row(i), centroids.row(c))).sum()
}

struct Restart {
    centroids: Mat,
    assignment: Vec<usize>,
    inertia: f64,
    trace: Vec<f64>,
}

fn run_restart(x: &Mat, pins: &[Option<usize>], pinned_clusters: &[bool], k: usize, cfg: &KMeansConfig, rng: &mut ChaCha8Rng) -> Restart {
    let (n, d) = (x.rows(), x.cols());
    let unpinned: Vec<usize> = (0..n).filter(|&i| pins[i].is_none()).collect();

    // pinned clusters start at their labeled means
    let mut centroids = Mat::zeros(k, d);
    let mut counts = vec![0usize; k];
    for (i, p) in pins.iter().enumerate() {
        if let Some(c) = *p {
            counts[c] += 1;
            for (a, b) in centroids.row_mut(c).iter_mut().zip(x.row(i)) {
                *a += b;
            }
        }
    }
    let mut chosen: Vec<usize> = Vec::new();
    for c in 0..k {
        if pinned_clusters[c] {
            let inv = 1.0 / counts[c] as f64;
            centroids.row_mut(c).iter_mut().for_each(|v| *v *= inv);
            chosen.push(c);
        }
    }
    // k-means++ for the rest, seeded against the pinned centroids
    let pool: Vec<usize> = if unpinned.is_empty() { (0..n).collect() } else { unpinned.clone() };
    let mut dist: Vec<f64> = pool
        .iter()
        .map(|&i| chosen.iter().map(|&c| sq_dist(x.row(i), centroids.row(c))).fold(f64::INFINITY, f64::min))
        .collect();
    for c in (0..k).filter(|&c| !pinned_clusters[c]) {
        let total: f64 = dist.iter().filter(|v| v.is_finite()).sum();
        let pick = if chosen.is_empty() || total <= 0.0 || !total.is_finite() {
            rng.random_range(0..pool.len())
        } else {
            let mut r = rng.random_range(0.0..total);
            let mut idx = pool.len() - 1;
            for (j, &w) in dist.iter().enumerate() {
                if r < w {
                    idx = j;
                    break;
                }
                r -= w;
            }
            idx
        };
        centroids.row_mut(c).copy_from_slice(x.row(pool[pick]));
        chosen.push(c);
        for (j, &i) in pool.iter().enumerate() {
            dist[j] = dist[j].min(sq_dist(x.row(i), centroids.row(c)));
        }
    }

    let mut assignment: Vec<usize> = pins.iter().map(|p| p.unwrap_or(0)).collect();
    let mut trace = Vec::new();
    for _ in 0..cfg.max_iter {
        for &i in &unpinned {
            assignment[i] = nearest(x.row(i), &centroids).0;
        }
        // reseed empty clusters with the farthest unpinned point of a cluster with ≥2 members
        let mut sizes = vec![0usize; k];
        assignment.iter().for_each(|&c| sizes[c] += 1);
        for c in 0..k {
            if sizes[c] > 0 {
                continue;
            }
            let far = unpinned
                .iter()
                .copied()
                .filter(|&i| sizes[assignment[i]] >= 2)
                .map(|i| (i, sq_dist(x.row(i), centroids.row(assignment[i]))))
                .fold(None::<(usize, f64)>, |best, (i, dd)| match best {
                    Some((_, bd)) if bd >= dd => best,
                    _ => Some((i, dd)),
                });
            if let Some((i, _)) = far {
                sizes[assignment[i]] -= 1;
                assignment[i] = c;
                sizes[c] += 1;
                centroids.row_mut(c).copy_from_slice(x.row(i));
            }
        }
        trace.push(objective(x, &centroids, &assignment));

        let mut next = Mat::zeros(k, d);
        for (i, &c) in assignment.iter().enumerate() {
            for (a, b) in next.row_mut(c).iter_mut().zip(x.row(i)) {
                *a += b;
            }
        }
        let mut shift = 0.0;
        for c in 0..k {
            if sizes[c] == 0 {
                next.row_mut(c).copy_from_slice(centroids.row(c));
                continue;
            }
            let inv = 1.0 / sizes[c] as f64;
            next.row_mut(c).iter_mut().for_each(|v| *v *= inv);
            shift += sq_dist(next.row(c), centroids.row(c));
        }
        centroids = next;
        if shift <= cfg.tol {
            break;
        }
    }
    // final assignment against the final centroids
    for &i in &unpinned {
        assignment[i] = nearest(x.row(i), &centroids).0;
    }
    let inertia = objective(x, &centroids, &assignment);
    trace.push(inertia);
    Restart { centroids, assignment, inertia, trace }
}

/// Lloyd iterations with labeled items held in their class's cluster. Known class `j` is
/// cluster `j`; the remaining `k − |known|` clusters are free. Best of `n_init` restarts by
/// inertia, ties to the earlier restart.
pub fn ss_kmeans(emb: &EmbeddingBatch, pins: &[Option<usize>], known_names: &[String], k: usize, cfg: &KMeansConfig) -> Result<ClusterModel> {
    ss_kmeans_mat(&emb.matrix, &emb.item_ids, pins, known_names, k, cfg)
}

pub fn ss_kmeans_mat(
    x: &Mat,
    item_ids: &[String],
    pins: &[Option<usize>],
    known_names: &[String],
    k: usize,
    cfg: &KMeansConfig,
) -> Result<ClusterModel> {
    let n = x.rows();
    if pins.len() != n || item_ids.len() != n {
        return Err(Error::Discovery(format!("{n} embeddings with {} pins and {} ids", pins.len(), item_ids.len())));
    }
    if k == 0 {
        return Err(Error::Discovery("cluster count must be positive".into()));
    }
    if k > n {
        return Err(Error::Discovery(format!("cannot form {k} clusters from {n} items")));
    }
    if known_names.len() > k {
        return Err(Error::Discovery(format!("{} known classes exceed {k} clusters", known_names.len())));
    }
    let mut pinned_clusters = vec![false; k];
    for p in pins.iter().flatten() {
        if *p >= known_names.len() {
            return Err(Error::Discovery(format!("pin to unknown class index {p}")));
        }
        pinned_clusters[*p] = true;
    }
    if !x.is_finite() {
        return Err(Error::Discovery("non-finite embedding".into()));
    }
    if k > 1 && (1..n).all(|i| x.row(i) == x.row(0)) {
        return Err(Error::Discovery(format!("degenerate data: all {n} points identical but {k} clusters requested")));
    }
    let mut best: Option<Restart> = None;
    let mut restart_traces = Vec::with_capacity(cfg.n_init.max(1));
    for r in 0..cfg.n_init.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(r as u64);
        let run = run_restart(x, pins, &pinned_clusters, k, cfg, &mut rng);
        restart_traces.push(run.trace.clone());
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");
    let pinned_names = (0..k).map(|c| if pinned_clusters[c] { Some(known_names[c].clone()) } else { None }).collect();
    Ok(ClusterModel {
        item_ids: item_ids.to_vec(),
        centroids: best.centroids,
        assignment: best.assignment,
        pinned: pins.to_vec(),
        pinned_names,
        inertia: best.inertia,
        trace: best.trace,
        restart_traces,
    })
}

/// Injective row → column map with its total cost.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub row_to_col: Vec<usize>,
    pub cost: f64,
}

/// Minimum-cost assignment of every row to a distinct column (`rows ≤ cols`), by
/// shortest augmenting paths with dual potentials.
pub fn hungarian_match(cost: &Mat) -> Result<Assignment> {
    let (r, c) = (cost.rows(), cost.cols());
    if r > c {
        return Err(Error::Discovery(format!("cost matrix {r}x{c} has more rows than columns")));
    }
    if !cost.is_finite() {
        return Err(Error::Discovery("non-finite entry in cost matrix".into()));
    }
    if r == 0 {
        return Ok(Assignment { row_to_col: Vec::new(), cost: 0.0 });
    }
    // 1-based arrays; column 0 is the virtual start
    let mut u = vec![0.0; r + 1];
    let mut v = vec![0.0; c + 1];
    let mut p = vec![0usize; c + 1];
    let mut way = vec![0usize; c + 1];
    for i in 1..=r {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; c + 1];
        let mut used = vec![false; c + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=c {
                if used[j] {
                    continue;
                }
                let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=c {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; r];
    for j in 1..=c {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    let total = row_to_col.iter().enumerate().map(|(i, &j)| cost.get(i, j)).sum();
    Ok(Assignment { row_to_col, cost: total })
}

/// Name of every cluster. Clusters holding pinned items keep their known class name; the
/// rest are matched to the remaining lexicon names by minimum total `1 − cosine`.
pub fn name_clusters(model: &ClusterModel, lexicon: &Lexicon) -> Result<Vec<String>> {
    let k = model.k();
    if lexicon.len() < k {
        return Err(Error::Discovery(format!("lexicon has {} names for {k} clusters", lexicon.len())));
    }
    let mut names: Vec<Option<String>> = model.pinned_names.clone();
    names.resize(k, None);
    let free: Vec<usize> = (0..k).filter(|&c| names[c].is_none()).collect();
    let taken: Vec<&String> = names.iter().flatten().collect();
    let remaining: Vec<usize> = (0..lexicon.len()).filter(|&y| !taken.contains(&&lexicon.names()[y])).collect();
    if remaining.len() < free.len() {
        return Err(Error::Discovery(format!("{} unclaimed names for {} unpinned clusters", remaining.len(), free.len())));
    }
    let mut cost = Mat::zeros(free.len(), remaining.len());
    for (a, &c) in free.iter().enumerate() {
        for (b, &y) in remaining.iter().enumerate() {
            cost.set(a, b, 1.0 - cosine(model.centroids.row(c), lexicon.vectors().row(y)));
        }
    }
    let m = hungarian_match(&cost)?;
    for (a, &c) in free.iter().enumerate() {
        names[c] = Some(lexicon.names()[remaining[m.row_to_col[a]]].clone());
    }
    Ok(names.into_iter().map(|n| n.expect("every cluster named")).collect())
}

/// Every item inherits its cluster's name.
pub fn assign_pseudo_labels(model: &ClusterModel, lexicon: &Lexicon) -> Result<Vec<String>> {
    let names = name_clusters(model, lexicon)?;
    Ok(model.assignment.iter().map(|&c| names[c].clone()).collect())
}

/// Nearest lexicon name by cosine similarity; ties go to the earlier name.
pub fn zero_shot_classify(emb: &Mat, lexicon: &Lexicon) -> Result<Vec<String>> {
    if lexicon.is_empty() {
        return Err(Error::Discovery("zero-shot classification needs a nonempty lexicon".into()));
    }
    Ok((0..emb.rows())
        .map(|i| {
            let x = emb.row(i);
            let nx = dot(x, x).sqrt();
            let mut best = (0, f64::NEG_INFINITY);
            for y in 0..lexicon.len() {
                let s = if nx == 0.0 { 0.0 } else { dot(x, lexicon.vectors().row(y)) / nx };
                if s > best.1 {
                    best = (y, s);
                }
            }
            lexicon.names()[best.0].clone()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("i{i}")).collect()
    }

    fn col(v: &[f64]) -> Mat {
        Mat::from_vec(v.len(), 1, v.to_vec())
    }

    fn known() -> Vec<String> {
        vec!["A".into(), "B".into()]
    }

    #[test]
    fn separated_means_with_two_pins() {
        let x = col(&[0.0, 10.0, 0.1, 9.9]);
        let m = ss_kmeans_mat(&x, &ids(4), &[Some(0), Some(1), None, None], &known(), 2, &KMeansConfig::default()).unwrap();
        assert_eq!(m.assignment, vec![0, 1, 0, 1]);
    }

    fn sse(x: &Mat, a: &[usize], k: usize) -> f64 {
        let mut total = 0.0;
        for c in 0..k {
            let m: Vec<usize> = (0..a.len()).filter(|&i| a[i] == c).collect();
            if m.is_empty() {
                continue;
            }
            let mean = m.iter().map(|&i| x.get(i, 0)).sum::<f64>() / m.len() as f64;
            total += m.iter().map(|&i| (x.get(i, 0) - mean).powi(2)).sum::<f64>();
        }
        total
    }

    #[test]
    fn novel_cluster_matches_exhaustive_search() {
        let x = col(&[0.0, 10.0, 0.1, 9.9, 49.9, 50.1]);
        let pins = [Some(0), Some(1), None, None, None, None];
        let m = ss_kmeans_mat(&x, &ids(6), &pins, &known(), 3, &KMeansConfig::default()).unwrap();
        // enumerate all 3^4 assignments of the unpinned items
        let mut best = (f64::INFINITY, vec![]);
        for code in 0..81usize {
            let mut a = vec![0, 1, 0, 0, 0, 0];
            let mut c = code;
            for slot in a.iter_mut().skip(2) {
                *slot = c % 3;
                c /= 3;
            }
            let s = sse(&x, &a, 3);
            if s < best.0 {
                best = (s, a);
            }
        }
        assert_eq!(m.assignment, best.1);
        assert_eq!(m.assignment, vec![0, 1, 0, 1, 2, 2]);
        assert!((m.inertia - best.0).abs() < 1e-9);
    }

    #[test]
    fn all_pinned_gives_class_means() {
        let x = col(&[0.0, 1.0, 10.0, 12.0]);
        let m = ss_kmeans_mat(&x, &ids(4), &[Some(0), Some(0), Some(1), Some(1)], &known(), 2, &KMeansConfig::default()).unwrap();
        assert_eq!(m.centroids.as_slice(), &[0.5, 11.0]);
    }

    #[test]
    fn too_many_clusters_and_identical_points_are_errors() {
        let x = col(&[1.0, 2.0]);
        assert!(ss_kmeans_mat(&x, &ids(2), &[None, None], &[], 3, &KMeansConfig::default()).is_err());
        let same = col(&[3.0, 3.0, 3.0]);
        assert!(matches!(
            ss_kmeans_mat(&same, &ids(3), &[None; 3], &[], 2, &KMeansConfig::default()),
            Err(Error::Discovery(_))
        ));
    }

    #[test]
    fn hungarian_examples() {
        let a = hungarian_match(&Mat::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]])).unwrap();
        assert_eq!((a.row_to_col, a.cost), (vec![0, 1], 0.0));
        let b = hungarian_match(&Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]])).unwrap();
        assert_eq!((b.row_to_col, b.cost), (vec![1, 0], 0.0));
        let c = hungarian_match(&Mat::from_rows(&[vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]])).unwrap();
        assert_eq!((c.row_to_col, c.cost), (vec![1, 0, 2], 5.0));
        assert!(hungarian_match(&Mat::from_rows(&[vec![f64::NAN]])).is_err());
        assert!(hungarian_match(&Mat::zeros(2, 1)).is_err());
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    fn unit(v: &[f64]) -> Vec<f64> {
        let n = dot(v, v).sqrt();
        v.iter().map(|x| x / n).collect()
    }

    fn lexicon(names: &[&str], rows: &[Vec<f64>]) -> Lexicon {
        Lexicon::new(names.iter().map(|s| s.to_string()).collect(), Mat::from_rows(&rows.iter().map(|r| unit(r)).collect::<Vec<_>>())).unwrap()
    }

    fn model(centroids: Mat, pinned_names: Vec<Option<String>>) -> ClusterModel {
        let k = centroids.rows();
        ClusterModel {
            item_ids: ids(k),
            centroids,
            assignment: (0..k).collect(),
            pinned: vec![None; k],
            pinned_names,
            inertia: 0.0,
            trace: vec![],
            restart_traces: vec![],
        }
    }

    #[test]
    fn centroid_on_a_lexicon_vector_takes_its_name() {
        let lex = lexicon(&["x", "y", "z"], &[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
        let m = model(Mat::from_rows(&[vec![0.0, 1.0, 0.0]]), vec![None]);
        assert_eq!(assign_pseudo_labels(&m, &lex).unwrap(), vec!["y"]);
    }

    #[test]
    fn crossing_assignment_is_recovered() {
        let lex = lexicon(&["p", "q"], &[vec![1.0, 0.2], vec![0.2, 1.0]]);
        let m = model(Mat::from_rows(&[vec![0.1, 1.0], vec![1.0, 0.1]]), vec![None, None]);
        let names = name_clusters(&m, &lex).unwrap();
        // brute force over both permutations
        let score = |a: &str, b: &str| {
            let c = |k: usize, n: &str| 1.0 - cosine(m.centroids.row(k), lex.vector(n).unwrap());
            c(0, a) + c(1, b)
        };
        let expect = if score("p", "q") < score("q", "p") { ["p", "q"] } else { ["q", "p"] };
        assert_eq!(names, expect);
        assert_eq!(names, ["q", "p"]);
    }

    #[test]
    fn rectangular_vocabulary_uses_k_names() {
        let rows: Vec<Vec<f64>> = (0..12).map(|i| (0..12).map(|j| if i == j { 1.0 } else { 0.05 }).collect()).collect();
        let names: Vec<String> = (0..12).map(|i| format!("n{i}")).collect();
        let lex = Lexicon::new(names, Mat::from_rows(&rows.iter().map(|r| unit(r)).collect::<Vec<_>>())).unwrap();
        let m = model(Mat::from_rows(&[rows[3].clone(), rows[7].clone(), rows[10].clone()]), vec![None; 3]);
        let out = name_clusters(&m, &lex).unwrap();
        assert_eq!(out, ["n3", "n7", "n10"]);
    }

    #[test]
    fn pinned_clusters_keep_known_names_and_short_lexicon_fails() {
        let lex = lexicon(&["cat", "dog", "eel"], &[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
        // cluster 0 sits on "dog" but is pinned to "cat"
        let m = model(Mat::from_rows(&[vec![0.0, 1.0], vec![0.0, 1.0]]), vec![Some("cat".into()), None]);
        let names = name_clusters(&m, &lex).unwrap();
        assert_eq!(names, ["cat", "dog"]);
        assert_eq!(assign_pseudo_labels(&m, &lex).unwrap(), names);
        let small = lexicon(&["cat"], &[vec![1.0, 0.0]]);
        assert!(name_clusters(&m, &small).is_err());
    }

    #[test]
    fn oracle_centroid_lexicon_names_everything_correctly() {
        let x = Mat::from_rows(&[
            unit(&[1.0, 0.0, 0.0]),
            unit(&[0.9, 0.1, 0.0]),
            unit(&[0.0, 1.0, 0.0]),
            unit(&[0.1, 0.9, 0.0]),
            unit(&[0.0, 0.1, 1.0]),
            unit(&[0.0, 0.0, 1.0]),
        ]);
        let truth = ["a", "a", "b", "b", "c", "c"];
        let pins = [Some(0), None, None, None, None, None];
        let m = ss_kmeans_mat(&x, &ids(6), &pins, &["a".to_string()], 3, &KMeansConfig::default()).unwrap();
        let class_mean = |c: &str| {
            let rows: Vec<usize> = (0..6).filter(|&i| truth[i] == c).collect();
            unit(&(0..3).map(|k| rows.iter().map(|&i| x.get(i, k)).sum::<f64>()).collect::<Vec<_>>())
        };
        let lex = Lexicon::new(vec!["a".into(), "b".into(), "c".into(), "d".into()], Mat::from_rows(&[class_mean("a"), class_mean("b"), class_mean("c"), unit(&[-1.0, -1.0, -1.0])])).unwrap();
        assert_eq!(assign_pseudo_labels(&m, &lex).unwrap(), truth);
    }

    #[test]
    fn zero_shot_examples() {
        let lex = lexicon(&["u", "v"], &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let e = Mat::from_rows(&[vec![0.0, 1.0], unit(&[1.0, 1.0]), vec![0.8, -0.6]]);
        let out = zero_shot_classify(&e, &lex).unwrap();
        assert_eq!(out, ["v", "u", "u"]);
        // brute force
        for i in 0..3 {
            let s: Vec<f64> = (0..2).map(|y| cosine(e.row(i), lex.vectors().row(y))).collect();
            let best = if s[1] > s[0] { "v" } else { "u" };
            assert_eq!(out[i], best);
        }
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let x = col(&[0.0, 10.0, 0.1, 9.9]);
        let m = ss_kmeans_mat(&x, &ids(4), &[Some(0), Some(1), None, None], &known(), 2, &KMeansConfig::default()).unwrap();
        let (cp, tp) = (dir.path().join("c.emb"), dir.path().join("c.tsv"));
        let names = vec!["A".to_string(), "B".to_string()];
        m.save(&cp, &tp, &names).unwrap();
        let (back, back_names) = ClusterModel::load(&cp, &tp).unwrap();
        assert_eq!(back_names, names);
        assert_eq!(back.assignment, m.assignment);
        assert_eq!(back.pinned, m.pinned);
        assert_eq!(back.pinned_names, m.pinned_names);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn hungarian_is_optimal(n in 1usize..=7, vals in proptest::collection::vec(-10.0f64..10.0, 49)) {
            let cost = Mat::from_vec(n, n, vals[..n * n].to_vec());
            let a = hungarian_match(&cost).unwrap();
            let brute = permutations(n)
                .iter()
                .map(|p| p.iter().enumerate().map(|(i, &j)| cost.get(i, j)).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            prop_assert!((a.cost - brute).abs() < 1e-9);
            let mut seen = a.row_to_col.clone();
            seen.sort_unstable();
            seen.dedup();
            prop_assert_eq!(seen.len(), n);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn pins_hold_and_objective_never_increases(seed in 0u64..1000, vals in proptest::collection::vec(-5.0f64..5.0, 60)) {
            let x = Mat::from_vec(30, 2, vals);
            let pins: Vec<Option<usize>> = (0..30).map(|i| if i < 6 { Some(i % 2) } else { None }).collect();
            let m = ss_kmeans_mat(&x, &ids(30), &pins, &known(), 4, &KMeansConfig { seed, n_init: 3, ..Default::default() }).unwrap();
            for i in 0..6 {
                prop_assert_eq!(m.assignment[i], i % 2);
            }
            prop_assert!(m.assignment.iter().all(|&c| c < 4));
            for w in m.trace.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9, "{:?}", m.trace);
            }
        }

        #[test]
        fn names_follow_centroids_not_indices(rot in 0usize..3, vals in proptest::collection::vec(-1.0f64..1.0, 9)) {
            let lex = lexicon(&["r", "s", "t"], &[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
            let cents = Mat::from_vec(3, 3, vals);
            let m = model(cents.clone(), vec![None; 3]);
            let perm: Vec<usize> = (0..3).map(|i| (i + rot) % 3).collect();
            let pc = Mat::from_rows(&perm.iter().map(|&i| cents.row(i).to_vec()).collect::<Vec<_>>());
            let mut pm = model(pc, vec![None; 3]);
            // items keep their centroid: item j was in cluster j, now in cluster perm⁻¹(j)
            pm.assignment = (0..3).map(|j| perm.iter().position(|&p| p == j).unwrap()).collect();
            let permuted = assign_pseudo_labels(&pm, &lex).unwrap();
            let orig = assign_pseudo_labels(&m, &lex).unwrap();
            // permutation invariance holds whenever the optimum is unique
            let costs: Vec<f64> = permutations(3).iter().map(|p| (0..3).map(|i| 1.0 - cosine(cents.row(i), lex.vectors().row(p[i]))).sum()).collect();
            let mut sorted = costs.clone();
            sorted.sort_by(f64::total_cmp);
            prop_assume!(sorted[1] - sorted[0] > 1e-9);
            prop_assert_eq!(permuted, orig);
        }
    }
}
