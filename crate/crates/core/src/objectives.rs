//! Contrastive and text-guidance losses with analytic gradients w.r.t. the embeddings.

use crate::backbone::Lexicon;
use crate::error::{Error, Result};
use crate::tensor::{dot, Mat};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub lambda_balance: f64,
    pub lambda_text_labeled: f64,
    pub lambda_text_unlabeled: f64,
    pub tau_selfcon: f64,
    pub tau_supcon: f64,
    pub logit_scale_text: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_balance: 0.35,
            lambda_text_labeled: 1.0,
            lambda_text_unlabeled: 1.0,
            tau_selfcon: 1.0,
            tau_supcon: 1.0,
            logit_scale_text: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("lambda_balance", self.lambda_balance),
            ("lambda_text_labeled", self.lambda_text_labeled),
            ("lambda_text_unlabeled", self.lambda_text_unlabeled),
            ("tau_selfcon", self.tau_selfcon),
            ("tau_supcon", self.tau_supcon),
            ("logit_scale_text", self.logit_scale_text),
        ];
        for (k, v) in all {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Objective(format!("{k} must be finite and nonnegative, got {v}")));
            }
        }
        if self.lambda_balance > 1.0 {
            return Err(Error::Objective(format!("lambda_balance {} exceeds 1", self.lambda_balance)));
        }
        for (k, v) in [("tau_selfcon", self.tau_selfcon), ("tau_supcon", self.tau_supcon), ("logit_scale_text", self.logit_scale_text)] {
            if v == 0.0 {
                return Err(Error::Objective(format!("{k} must be positive")));
            }
        }
        Ok(())
    }

    /// Without text guidance the objective is the plain contrastive mixture.
    pub fn without_text(mut self) -> Self {
        self.lambda_text_labeled = 0.0;
        self.lambda_text_unlabeled = 0.0;
        self
    }
}

/// A loss value and its gradient with respect to each embedding row.
#[derive(Clone, Debug)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Mat,
}

impl LossGrad {
    fn zero(rows: usize, cols: usize) -> Self {
        Self { value: 0.0, grad: Mat::zeros(rows, cols) }
    }

    fn accumulate(&mut self, w: f64, other: &LossGrad) {
        self.value += w * other.value;
        for (g, o) in self.grad.as_mut_slice().iter_mut().zip(other.grad.as_slice()) {
            *g += w * o;
        }
    }
}

/// Softmax-over-others contrastive term shared by both contrastive losses. For every
/// anchor in `anchors` the loss is `LSE_{j≠i}(s_ij/τ) − mean_{p∈P(i)} s_ip/τ`, averaged over
/// anchors. `rows` restricts the candidate set.
fn contrastive(z: &Mat, rows: &[usize], positives: &[Vec<usize>], tau: f64) -> LossGrad {
    let d = z.cols();
    let mut out = LossGrad::zero(z.rows(), d);
    let anchors: Vec<usize> = (0..rows.len()).filter(|&a| !positives[a].is_empty()).collect();
    if anchors.is_empty() {
        return out;
    }
    let inv_n = 1.0 / anchors.len() as f64;
    let mut logits = vec![0.0; rows.len()];
    let mut coef = vec![0.0; rows.len()];
    for &a in &anchors {
        let i = rows[a];
        let zi = z.row(i);
        let mut max = f64::NEG_INFINITY;
        for (b, &j) in rows.iter().enumerate() {
            if b == a {
                continue;
            }
            logits[b] = dot(zi, z.row(j)) / tau;
            max = max.max(logits[b]);
        }
        let mut sum = 0.0;
        for b in 0..rows.len() {
            if b != a {
                sum += (logits[b] - max).exp();
            }
        }
        let lse = max + sum.ln();
        let pos = &positives[a];
        let inv_p = 1.0 / pos.len() as f64;
        let mut loss = lse;
        for &p in pos {
            loss -= logits[p] * inv_p;
        }
        out.value += loss * inv_n;
        for b in 0..rows.len() {
            coef[b] = if b == a { 0.0 } else { (logits[b] - lse).exp() };
        }
        for &p in pos {
            coef[p] -= inv_p;
        }
        // d loss / d s_ij = coef_j / τ, and s_ij = z_i·z_j
        for (b, &j) in rows.iter().enumerate() {
            let c = coef[b] * inv_n / tau;
            if c == 0.0 {
                continue;
            }
            let zj = z.row(j).to_vec();
            let zi = z.row(i).to_vec();
            for k in 0..d {
                out.grad.as_mut_slice()[i * d + k] += c * zj[k];
                out.grad.as_mut_slice()[j * d + k] += c * zi[k];
            }
        }
    }
    out
}

/// Row pairing for a `2n` view matrix whose first `n` rows are first views and last `n`
/// rows the matching second views.
pub fn stacked_partners(n: usize) -> Vec<usize> {
    (0..2 * n).map(|i| if i < n { i + n } else { i - n }).collect()
}

/// InfoNCE over two views per item: the positive of each anchor is its partner view and
/// every other row is a negative.
pub fn self_con_loss(views: &Mat, partner: &[usize], tau: f64) -> Result<LossGrad> {
    let rows = views.rows();
    if rows % 2 != 0 || partner.len() != rows {
        return Err(Error::Objective(format!("{rows} views with {} partner entries; need two views per item", partner.len())));
    }
    if rows < 4 {
        return Err(Error::Objective(format!("self-contrastive loss needs at least 2 items, got {}", rows / 2)));
    }
    for (i, &p) in partner.iter().enumerate() {
        if p >= rows || p == i || partner[p] != i {
            return Err(Error::Objective(format!("view {i} has an invalid partner {p}")));
        }
    }
    let idx: Vec<usize> = (0..rows).collect();
    let positives: Vec<Vec<usize>> = partner.iter().map(|&p| vec![p]).collect();
    Ok(contrastive(views, &idx, &positives, tau))
}

/// Supervised contrastive loss: positives share the label. Anchors with no positive are
/// left out of the mean.
pub fn sup_con_loss(embeddings: &Mat, labels: &[usize], tau: f64) -> Result<LossGrad> {
    let idx: Vec<usize> = (0..embeddings.rows()).collect();
    sup_con_rows(embeddings, &idx, labels, tau)
}

fn sup_con_rows(z: &Mat, rows: &[usize], labels: &[usize], tau: f64) -> Result<LossGrad> {
    if labels.len() != rows.len() {
        return Err(Error::Objective(format!("{} labels for {} embeddings", labels.len(), rows.len())));
    }
    let positives: Vec<Vec<usize>> = (0..rows.len())
        .map(|a| (0..rows.len()).filter(|&b| b != a && labels[b] == labels[a]).collect())
        .collect();
    if positives.iter().all(Vec::is_empty) {
        return Err(Error::Objective("supervised contrastive loss undefined: no anchor has a positive".into()));
    }
    Ok(contrastive(z, rows, &positives, tau))
}

/// Views of one batch. Rows `i` and `partner[i]` are two augmentations of one item.
#[derive(Clone, Debug)]
pub struct ViewBatch {
    pub embeddings: Mat,
    pub partner: Vec<usize>,
    /// Ground-truth class id of labeled views.
    pub class: Vec<Option<usize>>,
    /// Row in the text matrix each view is pulled towards: ground truth for labeled views,
    /// pseudo-label for the rest.
    pub text_target: Vec<Option<usize>>,
}

impl ViewBatch {
    fn check(&self) -> Result<()> {
        let r = self.embeddings.rows();
        if self.partner.len() != r || self.class.len() != r || self.text_target.len() != r {
            return Err(Error::Objective(format!("view batch with {r} rows has mismatched annotations")));
        }
        Ok(())
    }
}

/// `(1−λ)·selfcon(all views) + λ·supcon(labeled views)`. A component whose weight is zero
/// is not evaluated.
pub fn gcd_loss(batch: &ViewBatch, cfg: &LossConfig) -> Result<LossGrad> {
    batch.check()?;
    let lam = cfg.lambda_balance;
    let mut out = LossGrad::zero(batch.embeddings.rows(), batch.embeddings.cols());
    if lam < 1.0 {
        let s = self_con_loss(&batch.embeddings, &batch.partner, cfg.tau_selfcon)?;
        out.accumulate(1.0 - lam, &s);
    }
    if lam > 0.0 {
        let (rows, labels): (Vec<usize>, Vec<usize>) =
            batch.class.iter().enumerate().filter_map(|(i, c)| c.map(|c| (i, c))).unzip();
        let s = sup_con_rows(&batch.embeddings, &rows, &labels, cfg.tau_supcon)?;
        out.accumulate(lam, &s);
    }
    Ok(out)
}

/// Cross-entropy of `softmax(s · eᵀ t_k)` against each row's target. Labeled and unlabeled
/// rows are averaged within their pools and weighted separately; an empty pool adds zero.
pub fn text_guidance_indexed(
    embeddings: &Mat,
    targets: &[Option<usize>],
    labeled: &[bool],
    text: &Mat,
    scale: f64,
    weights: (f64, f64),
) -> Result<LossGrad> {
    let (n, d) = (embeddings.rows(), embeddings.cols());
    if targets.len() != n || labeled.len() != n {
        return Err(Error::Objective(format!("{n} embeddings with {} targets and {} flags", targets.len(), labeled.len())));
    }
    if text.cols() != d && text.rows() > 0 {
        return Err(Error::Objective(format!("text width {} differs from embedding width {d}", text.cols())));
    }
    let mut out = LossGrad::zero(n, d);
    let n_lab = (0..n).filter(|&i| labeled[i] && targets[i].is_some()).count();
    let n_unl = (0..n).filter(|&i| !labeled[i] && targets[i].is_some()).count();
    let k = text.rows();
    let logits_all = embeddings.matmul_t(text);
    for i in 0..n {
        let Some(t) = targets[i] else { continue };
        if t >= k {
            return Err(Error::Objective(format!("text target {t} outside a {k}-way vocabulary")));
        }
        let (w, pool) = if labeled[i] { (weights.0, n_lab) } else { (weights.1, n_unl) };
        if w == 0.0 {
            continue;
        }
        let wi = w / pool as f64;
        let mut p: Vec<f64> = logits_all.row(i).iter().map(|v| v * scale).collect();
        let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + p.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        out.value += wi * (lse - p[t]);
        for (c, v) in p.iter_mut().enumerate() {
            *v = (*v - lse).exp() - if c == t { 1.0 } else { 0.0 };
        }
        let g = out.grad.row_mut(i);
        for c in 0..k {
            let coef = wi * scale * p[c];
            for (gk, tk) in g.iter_mut().zip(text.row(c)) {
                *gk += coef * tk;
            }
        }
    }
    Ok(out)
}

/// Name-level form: the softmax runs over `vocab` (known names plus predicted novel names).
pub fn text_guidance_loss<S: AsRef<str>>(
    embeddings: &Mat,
    targets: &[Option<S>],
    labeled: &[bool],
    lexicon: &Lexicon,
    vocab: &[String],
    cfg: &LossConfig,
) -> Result<LossGrad> {
    let text = lexicon.subset(vocab).map_err(|e| Error::Objective(e.to_string()))?;
    let mut idx = Vec::with_capacity(targets.len());
    for t in targets {
        idx.push(match t {
            None => None,
            Some(name) => Some(
                vocab
                    .iter()
                    .position(|v| v == name.as_ref())
                    .ok_or_else(|| Error::Objective(format!("label {:?} is not in the text vocabulary", name.as_ref())))?,
            ),
        });
    }
    text_guidance_indexed(
        embeddings,
        &idx,
        labeled,
        text.vectors(),
        cfg.logit_scale_text,
        (cfg.lambda_text_labeled, cfg.lambda_text_unlabeled),
    )
}

/// Contrastive mixture plus text guidance over the same views. With both text weights at
/// zero the result is exactly [`gcd_loss`].
pub fn oak_loss(batch: &ViewBatch, text: &Mat, cfg: &LossConfig) -> Result<LossGrad> {
    let mut out = gcd_loss(batch, cfg)?;
    if cfg.lambda_text_labeled == 0.0 && cfg.lambda_text_unlabeled == 0.0 {
        return Ok(out);
    }
    let labeled: Vec<bool> = batch.class.iter().map(Option::is_some).collect();
    let t = text_guidance_indexed(
        &batch.embeddings,
        &batch.text_target,
        &labeled,
        text,
        cfg.logit_scale_text,
        (cfg.lambda_text_labeled, cfg.lambda_text_unlabeled),
    )?;
    out.accumulate(1.0, &t);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_rows(rows: &[Vec<f64>]) -> Mat {
        let mut m = Mat::from_rows(rows);
        for i in 0..m.rows() {
            let n = crate::tensor::norm(m.row(i));
            m.row_mut(i).iter_mut().for_each(|v| *v /= n);
        }
        m
    }

    #[test]
    fn identical_views_give_ln_three() {
        let z = unit_rows(&vec![vec![1.0, 0.0]; 4]);
        let l = self_con_loss(&z, &stacked_partners(2), 1.0).unwrap();
        assert!((l.value - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_items_value() {
        // rows: A1, B1, A2, B2
        let z = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
        let l = self_con_loss(&z, &stacked_partners(2), 1.0).unwrap();
        let e = std::f64::consts::E;
        let expect = -(e / (e + 2.0)).ln();
        assert!((l.value - expect).abs() < 1e-12);
        assert!((l.value - 0.5514).abs() < 1e-4);
    }

    #[test]
    fn self_con_increases_with_temperature_here() {
        let z = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
        let v: Vec<f64> = [0.5, 1.0, 2.0].iter().map(|&t| self_con_loss(&z, &stacked_partners(2), t).unwrap().value).collect();
        assert!(v[0] < v[1] && v[1] < v[2], "{v:?}");
    }

    #[test]
    fn self_con_needs_two_items() {
        let z = unit_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]);
        assert!(self_con_loss(&z, &stacked_partners(1), 1.0).is_err());
    }

    #[test]
    fn sup_con_identical_same_label_is_ln_two() {
        let z = unit_rows(&vec![vec![0.3, 0.4]; 3]);
        let l = sup_con_loss(&z, &[0, 0, 0], 1.0).unwrap();
        assert!((l.value - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn sup_con_without_positives_is_an_error() {
        let z = unit_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(sup_con_loss(&z, &[0, 1], 1.0).is_err());
    }

    fn toy_batch() -> ViewBatch {
        let z = unit_rows(&[
            vec![1.0, 0.2, 0.1],
            vec![0.1, 1.0, -0.3],
            vec![0.5, 0.5, 0.5],
            vec![0.9, 0.3, 0.0],
            vec![0.2, 0.8, -0.1],
            vec![0.4, 0.6, 0.4],
        ]);
        ViewBatch {
            embeddings: z,
            partner: stacked_partners(3),
            class: vec![Some(0), Some(1), None, Some(0), Some(1), None],
            text_target: vec![Some(0), Some(1), Some(2), Some(0), Some(1), Some(2)],
        }
    }

    fn text3() -> Mat {
        unit_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]])
    }

    #[test]
    fn gcd_boundaries_are_the_components() {
        let b = toy_batch();
        let s = self_con_loss(&b.embeddings, &b.partner, 1.0).unwrap().value;
        let rows = [0, 1, 3, 4];
        let sup = sup_con_rows(&b.embeddings, &rows, &[0, 1, 0, 1], 1.0).unwrap().value;
        let at = |lam: f64| gcd_loss(&b, &LossConfig { lambda_balance: lam, ..Default::default() }).unwrap().value;
        assert_eq!(at(0.0), s);
        assert_eq!(at(1.0), sup);
        assert!((at(0.35) - (0.65 * s + 0.35 * sup)).abs() < 1e-12);
        // affine identity with components 1 and 2
        assert!((0.65 * 1.0 + 0.35 * 2.0 - 1.35f64).abs() < 1e-12);
    }

    #[test]
    fn text_loss_matched_class_value() {
        let e = Mat::from_rows(&[vec![1.0, 0.0]]);
        let t = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let l = text_guidance_indexed(&e, &[Some(0)], &[true], &t, 1.0, (1.0, 1.0)).unwrap();
        let e1 = std::f64::consts::E;
        assert!((l.value - -(e1 / (e1 + 1.0)).ln()).abs() < 1e-12);
        assert!((l.value - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn text_loss_equidistant_is_ln_k() {
        let e = unit_rows(&[vec![1.0, 1.0, 1.0, 0.0]]);
        let t = unit_rows(&[vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 0.0]]);
        let l = text_guidance_indexed(&e, &[Some(2)], &[false], &t, 1.0, (1.0, 1.0)).unwrap();
        assert!((l.value - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_unlabeled_pool_reduces_to_labeled_term() {
        let e = unit_rows(&[vec![1.0, 0.2, 0.0], vec![0.1, 1.0, 0.3]]);
        let t = text3();
        let only = text_guidance_indexed(&e, &[Some(0), Some(1)], &[true, true], &t, 2.0, (0.7, 5.0)).unwrap();
        let lab = text_guidance_indexed(&e, &[Some(0), Some(1)], &[true, true], &t, 2.0, (0.7, 0.0)).unwrap();
        assert_eq!(only.value, lab.value);
    }

    #[test]
    fn text_loss_by_name_rejects_missing_entries() {
        let lex = Lexicon::new(vec!["a".into(), "b".into()], Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]])).unwrap();
        let e = Mat::from_rows(&[vec![1.0, 0.0]]);
        let vocab = vec!["a".to_string(), "b".to_string()];
        let cfg = LossConfig::default();
        assert!(text_guidance_loss(&e, &[Some("a")], &[true], &lex, &vocab, &cfg).is_ok());
        assert!(text_guidance_loss(&e, &[Some("c")], &[true], &lex, &vocab, &cfg).is_err());
        let bad_vocab = vec!["a".to_string(), "zebra".to_string()];
        assert!(text_guidance_loss(&e, &[Some("a")], &[true], &lex, &bad_vocab, &cfg).is_err());
    }

    #[test]
    fn zero_text_weights_give_exactly_gcd() {
        let b = toy_batch();
        let cfg = LossConfig::default().without_text();
        let g = gcd_loss(&b, &cfg).unwrap();
        let o = oak_loss(&b, &text3(), &cfg).unwrap();
        assert_eq!(g.value, o.value);
        assert_eq!(g.grad, o.grad);
    }

    #[test]
    fn oak_is_gcd_plus_text() {
        let b = toy_batch();
        let cfg = LossConfig { logit_scale_text: 3.0, ..Default::default() };
        let g = gcd_loss(&b, &cfg).unwrap().value;
        let labeled: Vec<bool> = b.class.iter().map(Option::is_some).collect();
        let t = text_guidance_indexed(&b.embeddings, &b.text_target, &labeled, &text3(), 3.0, (1.0, 1.0)).unwrap().value;
        assert!((oak_loss(&b, &text3(), &cfg).unwrap().value - (g + t)).abs() < 1e-12);
    }

    fn fd_check(f: &dyn Fn(&Mat) -> LossGrad, z: &Mat) {
        let base = f(z);
        let h = 1e-6;
        for idx in 0..z.as_slice().len() {
            let mut p = z.clone();
            p.as_mut_slice()[idx] += h;
            let mut m = z.clone();
            m.as_mut_slice()[idx] -= h;
            let fd = (f(&p).value - f(&m).value) / (2.0 * h);
            let an = base.grad.as_slice()[idx];
            assert!((fd - an).abs() < 1e-6 * (1.0 + an.abs()), "entry {idx}: fd {fd} analytic {an}");
        }
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let b = toy_batch();
        let cfg = LossConfig { logit_scale_text: 2.5, tau_selfcon: 0.7, tau_supcon: 0.5, ..Default::default() };
        let t = text3();
        fd_check(&|z| self_con_loss(z, &b.partner, 0.7).unwrap(), &b.embeddings);
        fd_check(&|z| sup_con_loss(z, &[0, 1, 2, 0, 1, 2], 0.5).unwrap(), &b.embeddings);
        fd_check(&|z| oak_loss(&ViewBatch { embeddings: z.clone(), ..b.clone() }, &t, &cfg).unwrap(), &b.embeddings);
    }

    fn rotation(d: usize, seed: u64) -> Mat {
        // product of Givens rotations
        let mut r = Mat::zeros(d, d);
        for i in 0..d {
            r.set(i, i, 1.0);
        }
        let mut s = seed as f64;
        for i in 0..d {
            for j in i + 1..d {
                s += 0.7;
                let (sn, cs) = s.sin_cos();
                for k in 0..d {
                    let a = r.get(k, i);
                    let b = r.get(k, j);
                    r.set(k, i, cs * a - sn * b);
                    r.set(k, j, sn * a + cs * b);
                }
            }
        }
        r
    }

    proptest! {
        #[test]
        fn losses_are_nonnegative_and_permutation_invariant(
            vals in proptest::collection::vec(-1.0f64..1.0, 24),
            shift in 1usize..3,
        ) {
            let rows: Vec<Vec<f64>> = vals.chunks(3).map(|c| vec![c[0] + 1.5, c[1], c[2]]).collect();
            let z = unit_rows(&rows);
            let labels = [0, 1, 0, 1, 0, 1, 0, 1];
            let p = stacked_partners(4);
            let s = self_con_loss(&z, &p, 1.0).unwrap().value;
            let sc = sup_con_loss(&z, &labels, 1.0).unwrap().value;
            prop_assert!(s >= 0.0 && sc >= 0.0);
            // rotate item order by `shift` within each view block
            let perm: Vec<usize> = (0..8).map(|i| if i < 4 { (i + shift) % 4 } else { 4 + (i - 4 + shift) % 4 }).collect();
            let zp = Mat::from_rows(&perm.iter().map(|&i| z.row(i).to_vec()).collect::<Vec<_>>());
            let lp: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
            prop_assert!((self_con_loss(&zp, &p, 1.0).unwrap().value - s).abs() < 1e-12);
            prop_assert!((sup_con_loss(&zp, &lp, 1.0).unwrap().value - sc).abs() < 1e-12);
        }

        #[test]
        fn gcd_is_affine_in_lambda(lam in 0.0f64..=1.0) {
            let b = toy_batch();
            let at = |l: f64| gcd_loss(&b, &LossConfig { lambda_balance: l, ..Default::default() }).unwrap().value;
            let (a0, a1) = (at(0.0), at(1.0));
            prop_assert!((at(lam) - ((1.0 - lam) * a0 + lam * a1)).abs() < 1e-12);
        }

        #[test]
        fn text_loss_is_rotation_invariant(seed in 0u64..1000, scale in 0.5f64..20.0) {
            let b = toy_batch();
            let t = text3();
            let r = rotation(3, seed);
            let labeled: Vec<bool> = b.class.iter().map(Option::is_some).collect();
            let base = text_guidance_indexed(&b.embeddings, &b.text_target, &labeled, &t, scale, (1.0, 0.5)).unwrap().value;
            let rot = text_guidance_indexed(&b.embeddings.matmul(&r), &b.text_target, &labeled, &t.matmul(&r), scale, (1.0, 0.5)).unwrap().value;
            prop_assert!((base - rot).abs() < 1e-9);
        }
    }
}
