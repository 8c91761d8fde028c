use std::collections::HashMap;
use std::path::Path;

use crate::container::Container;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::tensor::{norm, Mat};

use super::tokens::ContextTokens;
use super::vit::FrozenVit;

/// Images embedded per forward pass when no gradient is needed.
const EMBED_CHUNK: usize = 64;

/// Frozen class-name embeddings living in the image embedding space.
#[derive(Clone, Debug, PartialEq)]
pub struct Lexicon {
    names: Vec<String>,
    vectors: Mat,
    index: HashMap<String, usize>,
}

impl Lexicon {
    /// Builds a lexicon from unit vectors. Names must be unique.
    pub fn new(names: Vec<String>, vectors: Mat) -> Result<Self> {
        if names.len() != vectors.rows() {
            return Err(Error::Backbone(format!("{} names for {} vectors", names.len(), vectors.rows())));
        }
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(Error::Backbone(format!("duplicate lexicon entry {n:?}")));
            }
            let nv = norm(vectors.row(i));
            if (nv - 1.0).abs() > 1e-5 {
                return Err(Error::Backbone(format!("lexicon vector for {n:?} has norm {nv}")));
            }
        }
        Ok(Self { names, vectors, index })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn vectors(&self) -> &Mat {
        &self.vectors
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn vector(&self, name: &str) -> Result<&[f64]> {
        self.index_of(name)
            .map(|i| self.vectors.row(i))
            .ok_or_else(|| Error::Backbone(format!("class name {name:?} is not in the lexicon")))
    }

    /// Restricts to `names`, in that order.
    pub fn subset<S: AsRef<str>>(&self, names: &[S]) -> Result<Lexicon> {
        let mut rows = Vec::with_capacity(names.len());
        for n in names {
            rows.push(self.vector(n.as_ref())?.to_vec());
        }
        let vectors = if rows.is_empty() { Mat::zeros(0, self.dim()) } else { Mat::from_rows(&rows) };
        Lexicon::new(names.iter().map(|n| n.as_ref().to_string()).collect(), vectors)
    }

    pub fn to_container(&self) -> Container {
        Container::from_mat(&self.vectors).with_names(&self.names)
    }

    /// Vectors are renormalised after the `f32` round trip.
    pub fn from_container(c: &Container) -> Result<Self> {
        let names = c.names()?.ok_or_else(|| Error::Format("lexicon file has no name table".into()))?;
        let mut m = c.to_mat();
        for i in 0..m.rows() {
            let n = norm(m.row(i));
            if n == 0.0 {
                return Err(Error::Format(format!("zero lexicon vector for {:?}", names.get(i))));
            }
            m.row_mut(i).iter_mut().for_each(|v| *v /= n);
        }
        Lexicon::new(names, m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

/// Unit-norm embeddings with the item ids of their rows.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingBatch {
    pub item_ids: Vec<String>,
    pub matrix: Mat,
}

impl EmbeddingBatch {
    pub fn new(item_ids: Vec<String>, matrix: Mat) -> Result<Self> {
        if item_ids.len() != matrix.rows() {
            return Err(Error::Backbone(format!("{} ids for {} embeddings", item_ids.len(), matrix.rows())));
        }
        for i in 0..matrix.rows() {
            let n = norm(matrix.row(i));
            if (n - 1.0).abs() > 1e-5 {
                return Err(Error::Backbone(format!("embedding row {i} has norm {n}")));
            }
        }
        Ok(Self { item_ids, matrix })
    }

    pub fn len(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }

    pub fn to_container(&self) -> Container {
        Container::from_mat(&self.matrix).with_names(&self.item_ids)
    }
}

/// Frozen image encoder plus the frozen lexicon that stands in for a text tower.
#[derive(Clone, Debug)]
pub struct EncoderPair {
    pub image_encoder: FrozenVit,
    pub lexicon: Lexicon,
}

impl EncoderPair {
    pub fn new(image_encoder: FrozenVit, lexicon: Lexicon) -> Result<Self> {
        if !lexicon.is_empty() && lexicon.dim() != image_encoder.width() {
            return Err(Error::Backbone(format!(
                "lexicon width {} differs from encoder width {}",
                lexicon.dim(),
                image_encoder.width()
            )));
        }
        Ok(Self { image_encoder, lexicon })
    }

    /// Embedding of one image under the given context tokens.
    pub fn encode_image(&self, x: &ImageTensor, z: &ContextTokens) -> Result<Vec<f64>> {
        let cache = self.image_encoder.forward(&[x], &z.to_mat())?;
        Ok(cache.embeddings().row(0).to_vec())
    }

    pub fn encode_text(&self, name: &str) -> Result<&[f64]> {
        self.lexicon.vector(name)
    }
}

/// Embeds many images under one token matrix, in fixed-size chunks.
pub fn embed_images(vit: &FrozenVit, images: &[&ImageTensor], tokens: &Mat) -> Result<Mat> {
    let d = vit.width();
    let mut out = Mat::zeros(images.len(), d);
    for (c, chunk) in images.chunks(EMBED_CHUNK).enumerate() {
        let cache = vit.forward(chunk, tokens)?;
        let start = c * EMBED_CHUNK;
        out.as_mut_slice()[start * d..(start + chunk.len()) * d].copy_from_slice(cache.embeddings().as_slice());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{init_context_tokens, VitConfig};

    fn lex() -> Lexicon {
        Lexicon::new(vec!["a".into(), "b".into()], Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]])).unwrap()
    }

    #[test]
    fn lookup_and_missing_name() {
        let l = lex();
        assert_eq!(l.vector("b").unwrap(), &[0.0, 1.0]);
        assert!(l.vector("c").is_err());
        for n in l.names() {
            assert!((norm(l.vector(n).unwrap()) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicate_and_non_unit_entries_are_rejected() {
        assert!(Lexicon::new(vec!["a".into(), "a".into()], Mat::from_rows(&[vec![1.0], vec![1.0]])).is_err());
        assert!(Lexicon::new(vec!["a".into()], Mat::from_rows(&[vec![2.0]])).is_err());
    }

    #[test]
    fn lexicon_file_round_trip() {
        let l = lex();
        let back = Lexicon::from_container(&Container::decode(&l.to_container().encode()).unwrap()).unwrap();
        assert_eq!(back, l);
    }

    fn pair() -> EncoderPair {
        let cfg = VitConfig { image_size: 8, patch_size: 4, depth: 2, width: 8, heads: 2, mlp_ratio: 2, seed: 1 };
        EncoderPair::new(FrozenVit::new(cfg).unwrap(), Lexicon::new(vec![], Mat::zeros(0, 8)).unwrap()).unwrap()
    }

    fn img(v: f64) -> ImageTensor {
        ImageTensor {
            width: 8,
            height: 8,
            data: (0..192).map(|i| ((i as f64 * 0.37 + v).sin() + 1.0) / 2.0).collect(),
        }
    }

    #[test]
    fn empty_tokens_give_plain_backbone_embedding() {
        let p = pair();
        let x = img(0.3);
        let plain = p.image_encoder.forward(&[&x], &Mat::zeros(0, 8)).unwrap();
        let z = init_context_tokens("c", 0, 8, 0).unwrap();
        assert_eq!(p.encode_image(&x, &z).unwrap(), plain.embeddings().row(0));
    }

    #[test]
    fn encoding_is_deterministic_and_token_dependent() {
        let p = pair();
        let x = img(1.1);
        let z1 = init_context_tokens("c", 2, 8, 1).unwrap();
        let z2 = init_context_tokens("c", 2, 8, 2).unwrap();
        let a = p.encode_image(&x, &z1).unwrap();
        assert_eq!(a, p.encode_image(&x, &z1).unwrap());
        let b = p.encode_image(&x, &z2).unwrap();
        let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff > 1e-6);
    }

    #[test]
    fn chunked_embedding_matches_single_pass() {
        let p = pair();
        let imgs: Vec<ImageTensor> = (0..70).map(|i| img(i as f64 * 0.1)).collect();
        let refs: Vec<&ImageTensor> = imgs.iter().collect();
        let z = init_context_tokens("c", 1, 8, 3).unwrap().to_mat();
        let all = embed_images(&p.image_encoder, &refs, &z).unwrap();
        let last = p.image_encoder.forward(&[refs[69]], &z).unwrap();
        for (a, b) in all.row(69).iter().zip(last.embeddings().row(0)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
