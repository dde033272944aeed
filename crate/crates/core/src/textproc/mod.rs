//! Tokenization, stopwords and vocabulary construction.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use num_rational::Ratio;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TextError {
    #[error("vocabulary is empty after filtering")]
    EmptyVocabulary,
    #[error("no documents given")]
    NoDocuments,
    #[error("vocabulary file line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type TextResult<T> = Result<T, TextError>;

/// Digit runs longer than this are dropped by [`tokenize`].
pub const MAX_DIGIT_TOKEN_LEN: usize = 4;

/// Lowercases, splits on every non-alphanumeric character and drops empty
/// tokens and all-digit tokens longer than four characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .filter(|t| !(t.len() > MAX_DIGIT_TOKEN_LEN && t.chars().all(|c| c.is_ascii_digit())))
        .map(str::to_lowercase)
        .collect()
}

const DEFAULT_STOPWORDS: &str = include_str!("../../data/stopwords_en.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StopwordList {
    tokens: HashSet<String>,
}

impl StopwordList {
    /// The bundled English list.
    pub fn english() -> Self {
        Self::from_words(DEFAULT_STOPWORDS.lines())
    }

    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let tokens = words
            .into_iter()
            .map(|w| w.as_ref().trim().to_lowercase())
            .filter(|w| !w.is_empty() && !w.contains(char::is_whitespace))
            .collect();
        StopwordList { tokens }
    }

    pub fn empty() -> Self {
        StopwordList { tokens: HashSet::new() }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

pub fn is_stopword(token: &str, list: &StopwordList) -> bool {
    !token.is_empty() && list.tokens.contains(&token.to_lowercase())
}

/// Index 0 is reserved for padding and never names a token.
pub const PAD_INDEX: usize = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    token_to_index: HashMap<String, usize>,
    /// Slot 0 holds an empty placeholder for the padding index.
    index_to_token: Vec<String>,
    doc_freq: Vec<u64>,
}

impl Vocabulary {
    /// Builds from `(token, doc_freq)` pairs; indices follow the given order
    /// starting at 1.
    pub fn from_entries(entries: Vec<(String, u64)>) -> TextResult<Self> {
        if entries.is_empty() {
            return Err(TextError::EmptyVocabulary);
        }
        let mut v = Vocabulary {
            token_to_index: HashMap::with_capacity(entries.len()),
            index_to_token: Vec::with_capacity(entries.len() + 1),
            doc_freq: Vec::with_capacity(entries.len() + 1),
        };
        v.index_to_token.push(String::new());
        v.doc_freq.push(0);
        for (tok, df) in entries {
            if v.token_to_index.contains_key(&tok) {
                continue;
            }
            v.token_to_index.insert(tok.clone(), v.index_to_token.len());
            v.index_to_token.push(tok);
            v.doc_freq.push(df);
        }
        Ok(v)
    }

    /// Number of real tokens (excluding the padding slot).
    pub fn len(&self) -> usize {
        self.index_to_token.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, token: &str) -> Option<usize> {
        self.token_to_index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        (index != PAD_INDEX)
            .then(|| self.index_to_token.get(index).map(String::as_str))
            .flatten()
    }

    pub fn doc_freq(&self, index: usize) -> u64 {
        self.doc_freq.get(index).copied().unwrap_or(0)
    }

    /// `(index, token, doc_freq)` in index order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &str, u64)> {
        self.index_to_token
            .iter()
            .zip(&self.doc_freq)
            .enumerate()
            .skip(1)
            .map(|(i, (t, &d))| (i, t.as_str(), d))
    }

    /// One `index<TAB>token<TAB>doc_freq` line per token.
    pub fn write<W: Write>(&self, mut w: W) -> TextResult<()> {
        for (i, t, d) in self.iter() {
            writeln!(w, "{i}\t{t}\t{d}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> TextResult<Self> {
        let mut entries = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            let bad = |msg: &str| TextError::Format {
                line: n + 1,
                msg: msg.to_string(),
            };
            let mut parts = line.split('\t');
            let (Some(i), Some(t), Some(d), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
                return Err(bad("expected three tab-separated fields"));
            };
            let i: usize = i.parse().map_err(|_| bad("bad index"))?;
            if i != entries.len() + 1 {
                return Err(bad("indices must run 1, 2, 3, ..."));
            }
            entries.push((t.to_string(), d.parse().map_err(|_| bad("bad document frequency"))?));
        }
        Self::from_entries(entries)
    }
}

/// Filters for [`build_vocabulary`].
#[derive(Debug, Clone, PartialEq)]
pub struct VocabOptions {
    pub min_doc_freq: u64,
    /// Tokens in more than this fraction of documents are dropped.
    pub max_doc_frac: Ratio<u64>,
    pub max_size: Option<usize>,
}

impl Default for VocabOptions {
    fn default() -> Self {
        VocabOptions {
            min_doc_freq: 1,
            max_doc_frac: Ratio::from_integer(1),
            max_size: None,
        }
    }
}

/// Document frequency of every token.
pub fn document_frequencies<D, S>(docs: &[D]) -> HashMap<String, u64>
where
    D: AsRef<[S]>,
    S: AsRef<str>,
{
    let mut df: HashMap<String, u64> = HashMap::new();
    let mut seen: HashSet<&str> = HashSet::new();
    for d in docs {
        seen.clear();
        for t in d.as_ref() {
            seen.insert(t.as_ref());
        }
        for t in &seen {
            *df.entry((*t).to_string()).or_insert(0) += 1;
        }
    }
    df
}

/// Keeps tokens with `min_doc_freq ≤ df ≤ max_doc_frac · n_docs`, optionally
/// capped at the `max_size` highest-df tokens. Indices run from 1 in
/// descending df order, ties broken lexicographically.
pub fn build_vocabulary<D, S>(docs: &[D], opts: &VocabOptions) -> TextResult<Vocabulary>
where
    D: AsRef<[S]>,
    S: AsRef<str>,
{
    if docs.is_empty() {
        return Err(TextError::NoDocuments);
    }
    let n = docs.len() as u64;
    let (num, den) = (*opts.max_doc_frac.numer(), *opts.max_doc_frac.denom());
    let mut kept: Vec<(String, u64)> = document_frequencies(docs)
        .into_iter()
        .filter(|(_, df)| *df >= opts.min_doc_freq && u128::from(*df) * u128::from(den) <= u128::from(num) * u128::from(n))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    if let Some(cap) = opts.max_size {
        kept.truncate(cap);
    }
    Vocabulary::from_entries(kept)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(spec: &[&str]) -> Vec<Vec<String>> {
        spec.iter().map(|s| tokenize(s)).collect()
    }

    #[test]
    fn tokenizer_examples() {
        assert_eq!(tokenize("Chest Pain, severe."), ["chest", "pain", "severe"]);
        assert_eq!(tokenize("BP 140/90"), ["bp", "140", "90"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("code 40191 and 4019"), ["code", "and", "4019"]);
        assert_eq!(tokenize("x2 A1c"), ["x2", "a1c"]);
    }

    #[test]
    fn stopwords() {
        let list = StopwordList::english();
        assert!(is_stopword("The", &list));
        assert!(!is_stopword("fibrillation", &list));
        assert!(!is_stopword("", &list));
        assert!((120..=200).contains(&list.len()));
    }

    #[test]
    fn max_doc_frac_excludes() {
        let mut d: Vec<Vec<String>> = (0..9).map(|_| vec!["common".to_string(), "x".into()]).collect();
        d.push(vec!["rare".into()]);
        let opts = VocabOptions {
            max_doc_frac: Ratio::new(4, 5),
            ..Default::default()
        };
        let v = build_vocabulary(&d, &opts).unwrap();
        assert!(v.index("common").is_none());
        assert!(v.index("rare").is_some());
    }

    #[test]
    fn min_doc_freq_inclusive() {
        let mut d: Vec<Vec<String>> = (0..10).map(|_| vec!["t".to_string()]).collect();
        d.extend((0..90).map(|i| vec![format!("u{i}")]));
        let opts = VocabOptions {
            min_doc_freq: 10,
            max_doc_frac: Ratio::new(4, 5),
            max_size: None,
        };
        let v = build_vocabulary(&d, &opts).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v.index("t"), Some(1));
    }

    #[test]
    fn size_cap_tie_break() {
        let d = docs(&["a b c", "a b c", "c b a", "a", "a"]);
        let v = build_vocabulary(
            &d,
            &VocabOptions {
                max_size: Some(2),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(v.iter().map(|(_, t, _)| t).collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(v.doc_freq(1), 5);
    }

    #[test]
    fn empty_vocabulary_error() {
        let d = docs(&["a"]);
        let opts = VocabOptions {
            min_doc_freq: 2,
            ..Default::default()
        };
        assert!(matches!(build_vocabulary(&d, &opts), Err(TextError::EmptyVocabulary)));
    }

    #[test]
    fn file_round_trip() {
        let v = build_vocabulary(&docs(&["pain chest", "pain"]), &Default::default()).unwrap();
        let mut buf = Vec::new();
        v.write(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "1\tpain\t2\n2\tchest\t1\n");
        assert_eq!(Vocabulary::read(buf.as_slice()).unwrap(), v);
        assert_eq!(v.token(0), None);
    }
}
