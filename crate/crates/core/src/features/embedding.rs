use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::neuralcore::Tensor;
use crate::scalar::Scalar;
use crate::textproc::{is_stopword, StopwordList, Vocabulary, PAD_INDEX};

use super::{FeatureError, FeatureResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    SelfTrained,
    Pretrained,
}

/// `(|V|+1) × k` table; row 0 is the padding vector and always zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix<F> {
    pub vectors: Tensor<F>,
    pub source: EmbeddingSource,
}

impl<F: Scalar> EmbeddingMatrix<F> {
    pub fn zeros(vocab_len: usize, dim: usize, source: EmbeddingSource) -> Self {
        EmbeddingMatrix {
            vectors: Tensor::zeros(&[vocab_len + 1, dim]),
            source,
        }
    }

    pub fn dim(&self) -> usize {
        self.vectors.row_len()
    }

    pub fn rows(&self) -> usize {
        self.vectors.rows()
    }

    pub fn row(&self, index: usize) -> &[F] {
        self.vectors.row(index)
    }

    /// Zeroes the rows of every stopword in the vocabulary.
    pub fn zero_stopwords(&mut self, vocab: &Vocabulary, stopwords: &StopwordList) {
        for (i, t, _) in vocab.iter() {
            if is_stopword(t, stopwords) && i < self.rows() {
                self.vectors.row_mut(i).fill(F::zero());
            }
        }
    }

    /// Row 0 zero and every entry finite.
    pub fn check(&self) -> FeatureResult<()> {
        if self.rows() == 0 || self.row(PAD_INDEX).iter().any(|v| *v != F::zero()) {
            return Err(FeatureError::Config("padding row is not zero".into()));
        }
        if !self.vectors.all_finite() {
            return Err(FeatureError::Config("embedding contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn cast<G: Scalar>(&self) -> EmbeddingMatrix<G> {
        EmbeddingMatrix {
            vectors: self.vectors.cast(),
            source: self.source,
        }
    }
}

/// Fixed-length token indices, padding (0) only as a prefix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceExample {
    pub indices: Vec<u32>,
}

impl SequenceExample {
    /// Number of leading padding positions.
    pub fn pad_len(&self) -> usize {
        self.indices.iter().take_while(|&&i| i == 0).count()
    }
}

/// Maps tokens to indices (unknown tokens dropped), keeps the last `n` and
/// front-pads with 0.
pub fn encode_word_sequence<S: AsRef<str>>(doc: &[S], n: usize, vocab: &Vocabulary) -> SequenceExample {
    let known: Vec<u32> = doc.iter().filter_map(|t| vocab.index(t.as_ref())).map(|i| i as u32).collect();
    let keep = &known[known.len().saturating_sub(n)..];
    let mut indices = vec![0u32; n - keep.len()];
    indices.extend_from_slice(keep);
    SequenceExample { indices }
}

/// Mean vector over the document's in-vocabulary tokens; zero when there
/// are none. Sums run in vocabulary-index order, so any reordering of the
/// tokens gives the same bits.
pub fn average_embedding<F: Scalar, S: AsRef<str>>(doc: &[S], vocab: &Vocabulary, emb: &EmbeddingMatrix<F>) -> Vec<F> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for t in doc {
        if let Some(i) = vocab.index(t.as_ref()) {
            *counts.entry(i).or_default() += 1;
        }
    }
    let mut sum = vec![F::zero(); emb.dim()];
    let mut total = 0usize;
    for (&i, &c) in &counts {
        let w = F::of_usize(c);
        for (s, &v) in sum.iter_mut().zip(emb.row(i)) {
            *s += w * v;
        }
        total += c;
    }
    if total > 0 {
        let c = F::of_usize(total);
        sum.iter_mut().for_each(|s| *s /= c);
    }
    sum
}

pub fn average_embedding_matrix<F: Scalar, D, S>(docs: &[D], vocab: &Vocabulary, emb: &EmbeddingMatrix<F>) -> Tensor<F>
where
    D: AsRef<[S]>,
    S: AsRef<str>,
{
    let k = emb.dim();
    let mut out = Tensor::zeros(&[docs.len(), k]);
    for (i, d) in docs.iter().enumerate() {
        out.row_mut(i).copy_from_slice(&average_embedding(d.as_ref(), vocab, emb));
    }
    out
}

/// Parses word2vec text: a `count dim` header, then `token v1 … v_dim`.
/// Returns the dimension and the entries in file order.
pub fn read_word2vec_text<R: BufRead>(r: R) -> FeatureResult<(usize, Vec<(String, Vec<f64>)>)> {
    let mut lines = r.lines();
    let header = lines.next().ok_or(FeatureError::Format {
        line: 1,
        msg: "missing header".into(),
    })??;
    let bad_header = || FeatureError::Format {
        line: 1,
        msg: format!("header {header:?} is not \"count dim\""),
    };
    let mut h = header.split_whitespace();
    let (Some(count), Some(dim), None) = (h.next(), h.next(), h.next()) else {
        return Err(bad_header());
    };
    let count: usize = count.parse().map_err(|_| bad_header())?;
    let dim: usize = dim.parse().map_err(|_| bad_header())?;
    if dim == 0 {
        return Err(bad_header());
    }
    let mut entries = Vec::with_capacity(count);
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = n + 2;
        let mut parts = line.split_whitespace();
        let token = parts.next().expect("non-empty line").to_string();
        let values: Vec<f64> = parts
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| FeatureError::Format {
                        line: lineno,
                        msg: format!("bad value {v:?}"),
                    })
            })
            .collect::<FeatureResult<_>>()?;
        if values.len() != dim {
            return Err(FeatureError::Format {
                line: lineno,
                msg: format!("{} values, header says {dim}", values.len()),
            });
        }
        entries.push((token, values));
    }
    if entries.len() != count {
        warn!("embedding header announces {count} vectors, file has {}", entries.len());
    }
    Ok((dim, entries))
}

/// Result of reading pretrained vectors against a vocabulary.
#[derive(Debug, Clone)]
pub struct PretrainedLoad<F> {
    pub matrix: EmbeddingMatrix<F>,
    /// Share of vocabulary tokens that received a vector.
    pub coverage: f64,
    /// Tokens seen more than once in the file (first occurrence kept).
    pub duplicates: Vec<String>,
}

/// Fills the rows of vocabulary tokens found in the file; the rest stay zero.
pub fn load_pretrained_embeddings<F: Scalar, R: BufRead>(r: R, vocab: &Vocabulary) -> FeatureResult<PretrainedLoad<F>> {
    let (dim, entries) = read_word2vec_text(r)?;
    let mut m = EmbeddingMatrix::zeros(vocab.len(), dim, EmbeddingSource::Pretrained);
    let mut seen: HashMap<String, ()> = HashMap::new();
    let mut duplicates = Vec::new();
    let mut filled = 0usize;
    for (tok, values) in entries {
        if seen.insert(tok.clone(), ()).is_some() {
            warn!("token {tok:?} repeated in embedding file; keeping the first vector");
            duplicates.push(tok);
            continue;
        }
        if let Some(i) = vocab.index(&tok) {
            for (o, v) in m.vectors.row_mut(i).iter_mut().zip(values) {
                *o = F::of(v);
            }
            filled += 1;
        }
    }
    let coverage = if vocab.is_empty() {
        0.0
    } else {
        filled as f64 / vocab.len() as f64
    };
    Ok(PretrainedLoad {
        matrix: m,
        coverage,
        duplicates,
    })
}

/// Writes every vocabulary row (not the padding row) in word2vec text form.
pub fn write_word2vec_text<F: Scalar, W: Write>(emb: &EmbeddingMatrix<F>, vocab: &Vocabulary, mut w: W) -> FeatureResult<()> {
    writeln!(w, "{} {}", vocab.len(), emb.dim())?;
    for (i, t, _) in vocab.iter() {
        write!(w, "{t}")?;
        for v in emb.row(i) {
            write!(w, " {}", v.to_f64_lossy())?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(tokens: &[&str]) -> Vocabulary {
        Vocabulary::from_entries(tokens.iter().map(|t| (t.to_string(), 1)).collect()).unwrap()
    }

    fn emb(rows: &[&[f64]]) -> EmbeddingMatrix<f64> {
        let dim = rows[0].len();
        let mut data = vec![0.0; dim];
        for r in rows {
            data.extend_from_slice(r);
        }
        EmbeddingMatrix {
            vectors: Tensor::from_vec(&[rows.len() + 1, dim], data).unwrap(),
            source: EmbeddingSource::SelfTrained,
        }
    }

    #[test]
    fn averaging() {
        let v = vocab(&["x", "y"]);
        let e = emb(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(average_embedding(&["x", "y"], &v, &e), [0.5, 0.5]);
        assert_eq!(average_embedding(&["q", "r"], &v, &e), [0.0, 0.0]);
        assert_eq!(average_embedding(&["y"], &v, &e), [0.0, 1.0]);
    }

    #[test]
    fn sequences() {
        let v = vocab(&["a", "b", "c", "d", "e", "f", "g"]);
        assert_eq!(encode_word_sequence(&["a", "b", "c"], 5, &v).indices, [0, 0, 1, 2, 3]);
        let long = ["a", "b", "c", "d", "e", "f", "g"];
        assert_eq!(encode_word_sequence(&long, 5, &v).indices, [3, 4, 5, 6, 7]);
        assert_eq!(encode_word_sequence::<&str>(&[], 5, &v).indices, [0; 5]);
        assert_eq!(encode_word_sequence(&["a", "zz", "b"], 3, &v).indices, [0, 1, 2]);
    }

    #[test]
    fn pretrained_coverage() {
        let v = vocab(&["a", "b", "c"]);
        let file = "2 2\na 1 2\nc 3 4\n";
        let l: PretrainedLoad<f64> = load_pretrained_embeddings(file.as_bytes(), &v).unwrap();
        assert!((l.coverage - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(l.matrix.row(2), [0.0, 0.0]);
        assert_eq!(l.matrix.row(3), [3.0, 4.0]);
        l.matrix.check().unwrap();
    }

    #[test]
    fn pretrained_dimension_mismatch() {
        let v = vocab(&["a"]);
        let mut file = String::from("1 200\na");
        for i in 0..199 {
            file.push_str(&format!(" {i}"));
        }
        let r = load_pretrained_embeddings::<f64, _>(file.as_bytes(), &v);
        assert!(matches!(r, Err(FeatureError::Format { line: 2, .. })));
        assert!(load_pretrained_embeddings::<f64, _>("x y\n".as_bytes(), &v).is_err());
    }

    #[test]
    fn pretrained_duplicate_first_wins() {
        let v = vocab(&["a"]);
        let l: PretrainedLoad<f64> = load_pretrained_embeddings("2 1\na 1\na 2\n".as_bytes(), &v).unwrap();
        assert_eq!(l.matrix.row(1), [1.0]);
        assert_eq!(l.duplicates, ["a"]);
    }

    #[test]
    fn word2vec_round_trip() {
        let v = vocab(&["a", "b"]);
        let e = emb(&[&[0.5, -1.0], &[2.0, 0.25]]);
        let mut buf = Vec::new();
        write_word2vec_text(&e, &v, &mut buf).unwrap();
        let l: PretrainedLoad<f64> = load_pretrained_embeddings(buf.as_slice(), &v).unwrap();
        assert_eq!(l.matrix.vectors, e.vectors);
    }

    #[test]
    fn stopword_rows_zeroed() {
        let v = vocab(&["the", "heart"]);
        let mut e = emb(&[&[1.0], &[2.0]]);
        e.zero_stopwords(&v, &StopwordList::english());
        assert_eq!(e.row(1), [0.0]);
        assert_eq!(e.row(2), [2.0]);
    }
}
