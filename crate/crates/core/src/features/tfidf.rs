use std::collections::HashMap;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::neuralcore::SparseRows;
use crate::scalar::Scalar;
use crate::textproc::{build_vocabulary, VocabOptions, Vocabulary};

use super::{FeatureError, FeatureResult};

/// `idf(w) = ln(n_d / df(w)) + 1`, indexed like the vocabulary (slot 0
/// unused).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdfTable {
    pub idf: Vec<f64>,
    pub n_docs: usize,
}

impl IdfTable {
    pub fn get(&self, index: usize) -> f64 {
        self.idf.get(index).copied().unwrap_or(0.0)
    }
}

/// Document frequencies are recounted from `docs`; vocabulary tokens absent
/// from every document get idf 0 and never contribute.
pub fn compute_idf<D, S>(docs: &[D], vocab: &Vocabulary) -> IdfTable
where
    D: AsRef<[S]>,
    S: AsRef<str>,
{
    let mut df = vec![0u64; vocab.len() + 1];
    let mut seen = vec![usize::MAX; vocab.len() + 1];
    for (d, doc) in docs.iter().enumerate() {
        for t in doc.as_ref() {
            if let Some(i) = vocab.index(t.as_ref()) {
                if seen[i] != d {
                    seen[i] = d;
                    df[i] += 1;
                }
            }
        }
    }
    let n = docs.len() as f64;
    let idf = df
        .iter()
        .enumerate()
        .map(|(i, &f)| if i == 0 || f == 0 { 0.0 } else { (n / f as f64).ln() + 1.0 })
        .collect();
    IdfTable {
        idf,
        n_docs: docs.len(),
    }
}

/// `raw count · idf` for every in-vocabulary token, as `(column, value)`
/// pairs sorted by column. Column `c` is vocabulary index `c + 1`.
pub fn tfidf_vectorize<S: AsRef<str>>(doc: &[S], vocab: &Vocabulary, idf: &IdfTable) -> Vec<(u32, f64)> {
    let mut counts: HashMap<usize, u64> = HashMap::new();
    for t in doc {
        if let Some(i) = vocab.index(t.as_ref()) {
            *counts.entry(i).or_insert(0) += 1;
        }
    }
    let mut row: Vec<(u32, f64)> = counts
        .into_iter()
        .map(|(i, c)| ((i - 1) as u32, c as f64 * idf.get(i)))
        .collect();
    row.sort_by_key(|&(c, _)| c);
    row
}

pub fn tfidf_matrix<F: Scalar, D, S>(docs: &[D], vocab: &Vocabulary, idf: &IdfTable) -> SparseRows<F>
where
    D: AsRef<[S]>,
    S: AsRef<str>,
{
    SparseRows {
        cols: vocab.len(),
        rows: docs
            .iter()
            .map(|d| {
                tfidf_vectorize(d.as_ref(), vocab, idf)
                    .into_iter()
                    .map(|(c, v)| (c, F::of(v)))
                    .collect()
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TfidfConfig {
    /// Top 40,000 tokens by summed training tfidf.
    Top40k,
    /// Document frequency between 10 and 80% of documents.
    MinDf20k,
}

impl TfidfConfig {
    pub fn name(self) -> &'static str {
        match self {
            TfidfConfig::Top40k => "tfidf40k",
            TfidfConfig::MinDf20k => "tfidf20k",
        }
    }
}

/// Vocabulary selection for the tfidf track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfParams {
    /// Rank tokens by summed training tfidf instead of document frequency.
    pub rank_by_score: bool,
    pub cap: Option<usize>,
    pub min_doc_freq: u64,
    pub max_doc_frac: Ratio<u64>,
}

pub fn select_tfidf_config(name: &str) -> FeatureResult<(TfidfConfig, TfidfParams)> {
    match name {
        "tfidf40k" => Ok((
            TfidfConfig::Top40k,
            TfidfParams {
                rank_by_score: true,
                cap: Some(40_000),
                min_doc_freq: 1,
                max_doc_frac: Ratio::from_integer(1),
            },
        )),
        "tfidf20k" => Ok((
            TfidfConfig::MinDf20k,
            TfidfParams {
                rank_by_score: false,
                cap: None,
                min_doc_freq: 10,
                max_doc_frac: Ratio::new(4, 5),
            },
        )),
        other => Err(FeatureError::UnknownConfig(other.to_string())),
    }
}

/// Builds the tfidf vocabulary and idf table from the training documents.
/// With `rank_by_score`, tokens are ordered by summed tfidf (ties
/// lexicographic) and cut at `cap`.
pub fn build_tfidf_vocabulary<D, S>(docs: &[D], params: &TfidfParams) -> FeatureResult<(Vocabulary, IdfTable)>
where
    D: AsRef<[S]>,
    S: AsRef<str>,
{
    let base = build_vocabulary(
        docs,
        &VocabOptions {
            min_doc_freq: params.min_doc_freq,
            max_doc_frac: params.max_doc_frac,
            max_size: if params.rank_by_score { None } else { params.cap },
        },
    )?;
    let idf = compute_idf(docs, &base);
    if !params.rank_by_score {
        return Ok((base, idf));
    }
    let mut score = vec![0.0f64; base.len() + 1];
    for doc in docs {
        for t in doc.as_ref() {
            if let Some(i) = base.index(t.as_ref()) {
                score[i] += idf.get(i);
            }
        }
    }
    let mut ranked: Vec<(usize, &str, u64)> = base.iter().collect();
    ranked.sort_by(|a, b| score[b.0].total_cmp(&score[a.0]).then_with(|| a.1.cmp(b.1)));
    if let Some(cap) = params.cap {
        ranked.truncate(cap);
    }
    let vocab = Vocabulary::from_entries(ranked.iter().map(|&(_, t, d)| (t.to_string(), d)).collect())?;
    let idf = compute_idf(docs, &vocab);
    Ok((vocab, idf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textproc::tokenize;

    fn vocab(tokens: &[&str]) -> Vocabulary {
        Vocabulary::from_entries(tokens.iter().map(|t| (t.to_string(), 1)).collect()).unwrap()
    }

    #[test]
    fn idf_values() {
        let v = vocab(&["a"]);
        let docs: Vec<Vec<String>> = (0..4).map(|_| tokenize("a")).collect();
        assert_eq!(compute_idf(&docs, &v).get(1), 1.0);
        let mut docs: Vec<Vec<String>> = (0..10).map(|_| tokenize("a")).collect();
        docs.extend((0..90).map(|_| tokenize("b")));
        assert!((compute_idf(&docs, &v).get(1) - (10f64.ln() + 1.0)).abs() < 1e-12);
        assert_eq!(compute_idf(&[tokenize("a")], &v).get(1), 1.0);
    }

    #[test]
    fn vectorize_counts() {
        let v = vocab(&["pain", "chest"]);
        let idf = IdfTable {
            idf: vec![0.0, 1.0, 2.0],
            n_docs: 1,
        };
        assert_eq!(
            tfidf_vectorize(&["pain", "pain", "chest"], &v, &idf),
            vec![(0, 2.0), (1, 2.0)]
        );
        assert!(tfidf_vectorize(&["zzz"], &v, &idf).is_empty());
        assert!(tfidf_vectorize::<&str>(&[], &v, &idf).is_empty());
    }

    #[test]
    fn config_names() {
        assert_eq!(select_tfidf_config("tfidf40k").unwrap().1.cap, Some(40_000));
        let b = select_tfidf_config("tfidf20k").unwrap().1;
        assert_eq!((b.min_doc_freq, b.max_doc_frac), (10, Ratio::new(4, 5)));
        assert!(matches!(select_tfidf_config("bm25"), Err(FeatureError::UnknownConfig(_))));
    }

    #[test]
    fn score_ranking() {
        // "b" is in fewer documents but repeated, so it outranks "a"
        let docs: Vec<Vec<String>> = ["a b b b", "a", "a c"].iter().map(|s| tokenize(s)).collect();
        let p = TfidfParams {
            rank_by_score: true,
            cap: Some(2),
            min_doc_freq: 1,
            max_doc_frac: Ratio::from_integer(1),
        };
        let (v, idf) = build_tfidf_vocabulary(&docs, &p).unwrap();
        assert_eq!(v.iter().map(|(_, t, _)| t).collect::<Vec<_>>(), ["b", "a"]);
        assert!((idf.get(1) - (3f64.ln() + 1.0)).abs() < 1e-12);
    }
}
