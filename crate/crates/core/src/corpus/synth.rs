use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::textproc::tokenize;

use super::{dotted_form, CorpusError, CorpusResult, DiagnosisRecord, Note, DISCHARGE_CATEGORY};

/// Token that switches labels off in order-sensitive corpora.
pub const NEGATION: &str = "no";

/// The ten most frequent MIMIC-III codes; synthetic labels borrow them
/// first so catalogs look familiar.
const FAMILIAR_CODES: [&str; 10] = [
    "4019", "4280", "42731", "41401", "5849", "25000", "2724", "51881", "5990", "53081",
];

const FUNCTION_WORDS: [&str; 8] = ["the", "of", "and", "was", "with", "to", "in", "patient"];

/// Generator settings. Every label owns a keyword lexicon and a set of
/// topic words that surround its keywords.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_admissions: usize,
    pub k: usize,
    pub keywords_per_label: usize,
    pub topic_words_per_label: usize,
    pub filler_vocab: usize,
    /// Inclusive range of filler tokens per note.
    pub note_len: (usize, usize),
    /// Chance that each label other than the primary one is also active.
    pub extra_label_rate: f64,
    /// Share of admissions carrying only out-of-catalog codes.
    pub unlabeled_rate: f64,
    /// Share of admissions that also get a radiology note.
    pub other_note_rate: f64,
    /// Chance that an active label's code is written into the text.
    pub code_mention_rate: f64,
    /// A label fires only when one of its keywords precedes the first
    /// negation token; otherwise presence alone decides.
    pub order_sensitive: bool,
    /// Order-sensitive mode: chance that an inactive label's keyword is
    /// placed after the negation.
    pub decoy_rate: f64,
    /// Explicit lexicons replacing the generated keywords.
    pub lexicons: Option<Vec<Vec<String>>>,
}

impl SynthSpec {
    /// Small keyword-separable corpus.
    pub fn keyword(n_admissions: usize, k: usize) -> Self {
        SynthSpec {
            n_admissions,
            k,
            keywords_per_label: 3,
            topic_words_per_label: 4,
            filler_vocab: 400,
            note_len: (40, 80),
            extra_label_rate: 0.15,
            unlabeled_rate: 0.1,
            other_note_rate: 0.2,
            code_mention_rate: 0.1,
            order_sensitive: false,
            decoy_rate: 0.0,
            lexicons: None,
        }
    }

    /// Corpus where every inactive label's keyword still appears, after the
    /// negation, so only word order separates the classes.
    pub fn order(n_admissions: usize, k: usize) -> Self {
        SynthSpec {
            order_sensitive: true,
            decoy_rate: 1.0,
            keywords_per_label: 2,
            topic_words_per_label: 3,
            note_len: (60, 120),
            unlabeled_rate: 0.0,
            code_mention_rate: 0.0,
            ..Self::keyword(n_admissions, k)
        }
    }

    fn validate(&self) -> CorpusResult<()> {
        let bad = |m: &str| Err(CorpusError::Config(m.to_string()));
        if self.k == 0 || self.k > 290 {
            return bad("k must lie in 1..=290");
        }
        if self.n_admissions == 0 {
            return bad("n_admissions must be positive");
        }
        if self.note_len.0 > self.note_len.1 || self.note_len.1 == 0 {
            return bad("note_len must be a non-empty range");
        }
        if self.filler_vocab == 0 {
            return bad("filler vocabulary is empty");
        }
        match &self.lexicons {
            Some(l) => {
                if l.len() != self.k || l.iter().any(|x| x.is_empty()) {
                    return bad("every label needs a non-empty lexicon");
                }
                for w in l.iter().flatten() {
                    if tokenize(w) != [w.clone()] || w == NEGATION {
                        return bad("lexicon entries must be single lowercase tokens other than the negation");
                    }
                }
            }
            None if self.keywords_per_label == 0 => return bad("empty keyword lexicon"),
            None => {}
        }
        for r in [
            self.extra_label_rate,
            self.unlabeled_rate,
            self.other_note_rate,
            self.code_mention_rate,
            self.decoy_rate,
        ] {
            if !(0.0..=1.0).contains(&r) {
                return bad("rates must lie in [0, 1]");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpus {
    pub notes: Vec<Note>,
    pub diagnoses: Vec<DiagnosisRecord>,
    /// Catalog code of each label.
    pub codes: Vec<String>,
    pub lexicons: Vec<Vec<String>>,
    pub topic_words: Vec<Vec<String>>,
}

/// Labels implied by the order rule: label `j` is on iff a keyword of `j`
/// occurs before the first negation token (anywhere, if there is none).
pub fn order_rule_labels(tokens: &[String], lexicons: &[Vec<String>]) -> Vec<bool> {
    let cut = tokens.iter().position(|t| t == NEGATION).unwrap_or(tokens.len());
    let before: HashSet<&str> = tokens[..cut].iter().map(String::as_str).collect();
    lexicons
        .iter()
        .map(|lex| lex.iter().any(|w| before.contains(w.as_str())))
        .collect()
}

fn presence_labels(tokens: &[String], lexicons: &[Vec<String>]) -> Vec<bool> {
    let all: HashSet<&str> = tokens.iter().map(String::as_str).collect();
    lexicons
        .iter()
        .map(|lex| lex.iter().any(|w| all.contains(w.as_str())))
        .collect()
}

const ONSETS: [&str; 16] = [
    "b", "d", "f", "g", "k", "l", "m", "p", "r", "s", "t", "v", "z", "br", "tr", "pl",
];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

fn pseudo_word(rng: &mut ChaCha8Rng, taken: &mut HashSet<String>) -> String {
    loop {
        let syllables = rng.random_range(2..=4);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS.choose(rng).expect("non-empty"));
            w.push_str(VOWELS.choose(rng).expect("non-empty"));
        }
        if taken.insert(w.clone()) {
            return w;
        }
    }
}

fn label_code(j: usize) -> String {
    match FAMILIAR_CODES.get(j) {
        Some(c) => c.to_string(),
        None => format!("{}{}", 700 + j, j % 10),
    }
}

/// Generates a reproducible corpus in the MIMIC-III note and diagnosis
/// schemas. Every labeled note is checked against the labeling rule before
/// it is emitted.
pub fn generate_synthetic_corpus(spec: &SynthSpec, seed: u64) -> CorpusResult<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taken: HashSet<String> = FUNCTION_WORDS.iter().map(|s| s.to_string()).collect();
    taken.insert(NEGATION.to_string());
    if let Some(l) = &spec.lexicons {
        taken.extend(l.iter().flatten().cloned());
    }
    let lexicons: Vec<Vec<String>> = match &spec.lexicons {
        Some(l) => l.clone(),
        None => (0..spec.k)
            .map(|_| (0..spec.keywords_per_label).map(|_| pseudo_word(&mut rng, &mut taken)).collect())
            .collect(),
    };
    let topic_words: Vec<Vec<String>> = (0..spec.k)
        .map(|_| (0..spec.topic_words_per_label).map(|_| pseudo_word(&mut rng, &mut taken)).collect())
        .collect();
    let mut filler: Vec<String> = (0..spec.filler_vocab).map(|_| pseudo_word(&mut rng, &mut taken)).collect();
    filler.extend(FUNCTION_WORDS.iter().map(|s| s.to_string()));
    let codes: Vec<String> = (0..spec.k).map(label_code).collect();
    let distractors: Vec<String> = (0..100).map(|i| format!("V{:02}{}", 10 + i / 10, i % 10)).collect();
    // mild frequency skew: label 0 is the most common primary label
    let weights: Vec<f64> = (0..spec.k).map(|j| 1.0 / (1.0 + j as f64 / spec.k as f64)).collect();
    let wsum: f64 = weights.iter().sum();

    let mut notes = Vec::new();
    let mut diagnoses = Vec::new();
    let mut row_id = 1u64;
    for a in 0..spec.n_admissions {
        let hadm_id = 100_000 + a as u64;
        let subject_id = 10_000 + (a / 2) as u64;
        let unlabeled = rng.random_bool(spec.unlabeled_rate);
        let mut active = vec![false; spec.k];
        if !unlabeled {
            let mut u = rng.random_range(0.0..wsum);
            let mut primary = spec.k - 1;
            for (j, w) in weights.iter().enumerate() {
                if u < *w {
                    primary = j;
                    break;
                }
                u -= w;
            }
            active[primary] = true;
            for (j, on) in active.iter_mut().enumerate() {
                if j != primary && rng.random_bool(spec.extra_label_rate) {
                    *on = true;
                }
            }
        }
        let len = rng.random_range(spec.note_len.0..=spec.note_len.1);
        let fill = |rng: &mut ChaCha8Rng, n: usize| -> Vec<String> {
            (0..n).map(|_| filler.choose(rng).expect("filler").clone()).collect()
        };
        let phrase = |rng: &mut ChaCha8Rng, j: usize| -> Vec<String> {
            let mut p = Vec::with_capacity(3);
            if let Some(t) = topic_words[j].choose(rng) {
                p.push(t.clone());
            }
            p.push(lexicons[j].choose(rng).expect("lexicon").clone());
            if let Some(t) = topic_words[j].choose(rng) {
                p.push(t.clone());
            }
            p
        };
        let insert = |rng: &mut ChaCha8Rng, seq: &mut Vec<String>, p: Vec<String>| {
            let at = rng.random_range(0..=seq.len());
            seq.splice(at..at, p);
        };
        let tokens: Vec<String> = if spec.order_sensitive {
            let head_len = rng.random_range(len * 2 / 5..=len / 2);
            let mut head = fill(&mut rng, head_len);
            let mut tail = fill(&mut rng, len - head_len);
            for j in 0..spec.k {
                if active[j] {
                    let p = phrase(&mut rng, j);
                    insert(&mut rng, &mut head, p);
                } else if rng.random_bool(spec.decoy_rate) {
                    let p = phrase(&mut rng, j);
                    insert(&mut rng, &mut tail, p);
                }
            }
            head.push(NEGATION.to_string());
            head.extend(tail);
            head
        } else {
            let mut seq = fill(&mut rng, len);
            for j in (0..spec.k).filter(|&j| active[j]) {
                let p = phrase(&mut rng, j);
                insert(&mut rng, &mut seq, p);
            }
            seq
        };
        let want = if spec.order_sensitive {
            order_rule_labels(&tokens, &lexicons)
        } else {
            presence_labels(&tokens, &lexicons)
        };
        if want != active {
            return Err(CorpusError::Config(format!(
                "generator self-check failed for admission {hadm_id}"
            )));
        }
        let mut text = String::new();
        for (i, t) in tokens.iter().enumerate() {
            if i > 0 {
                text.push(if i % 12 == 0 { '\n' } else { ' ' });
            }
            text.push_str(t);
        }
        for j in (0..spec.k).filter(|&j| active[j]) {
            if rng.random_bool(spec.code_mention_rate) {
                let c = &codes[j];
                let form = dotted_form(c).filter(|_| rng.random_bool(0.5)).unwrap_or_else(|| c.clone());
                text.push_str(&format!("\ndx {form}."));
            }
        }
        notes.push(Note {
            row_id,
            subject_id,
            hadm_id,
            category: DISCHARGE_CATEGORY.to_string(),
            text,
        });
        row_id += 1;
        if rng.random_bool(spec.other_note_rate) {
            let t = fill(&mut rng, 20).join(" ");
            notes.push(Note {
                row_id,
                subject_id,
                hadm_id,
                category: "Radiology".to_string(),
                text: t,
            });
            row_id += 1;
        }
        let mut seq = 1u32;
        let mut push = |code: String| {
            diagnoses.push(DiagnosisRecord {
                subject_id,
                hadm_id,
                seq_num: Some(seq),
                icd9_code: code,
            });
            seq += 1;
        };
        for j in (0..spec.k).filter(|&j| active[j]) {
            push(codes[j].clone());
        }
        if unlabeled || rng.random_bool(0.3) {
            push(distractors.choose(&mut rng).expect("distractors").clone());
        }
    }
    Ok(SyntheticCorpus {
        notes,
        diagnoses,
        codes,
        lexicons,
        topic_words,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{write_diagnoses_csv, write_noteevents_csv};

    #[test]
    fn byte_identical_csvs() {
        let spec = SynthSpec::keyword(50, 5);
        let csv = |seed| {
            let c = generate_synthetic_corpus(&spec, seed).unwrap();
            let (mut a, mut b) = (Vec::new(), Vec::new());
            write_noteevents_csv(&c.notes, &mut a).unwrap();
            write_diagnoses_csv(&c.diagnoses, &mut b).unwrap();
            (a, b)
        };
        assert_eq!(csv(9), csv(9));
        assert_ne!(csv(9), csv(10));
    }

    #[test]
    fn order_rule() {
        let lex = vec![vec!["fever".to_string()]];
        let toks = |s: &str| tokenize(s);
        assert_eq!(order_rule_labels(&toks("no fever today"), &lex), [false]);
        assert_eq!(order_rule_labels(&toks("fever but no cough"), &lex), [true]);
        assert_eq!(order_rule_labels(&toks("fever"), &lex), [true]);
    }

    #[test]
    fn keyword_mode_is_presence() {
        let spec = SynthSpec::keyword(80, 4);
        let c = generate_synthetic_corpus(&spec, 1).unwrap();
        for n in c.notes.iter().filter(|n| n.category == DISCHARGE_CATEGORY) {
            let present = presence_labels(&tokenize(&n.text), &c.lexicons);
            let codes: HashSet<&str> = c
                .diagnoses
                .iter()
                .filter(|d| d.hadm_id == n.hadm_id)
                .map(|d| d.icd9_code.as_str())
                .collect();
            for (j, p) in present.iter().enumerate() {
                assert_eq!(*p, codes.contains(c.codes[j].as_str()));
            }
        }
    }

    #[test]
    fn order_mode_scan_matches_diagnoses() {
        let c = generate_synthetic_corpus(&SynthSpec::order(60, 5), 4).unwrap();
        for n in &c.notes {
            if n.category != DISCHARGE_CATEGORY {
                continue;
            }
            let toks = tokenize(&n.text);
            let on = order_rule_labels(&toks, &c.lexicons);
            // every label's keyword is present, so presence alone is uninformative
            assert!(presence_labels(&toks, &c.lexicons).iter().all(|b| *b));
            for (j, v) in on.iter().enumerate() {
                let has = c.diagnoses.iter().any(|d| d.hadm_id == n.hadm_id && d.icd9_code == c.codes[j]);
                assert_eq!(*v, has);
            }
        }
    }

    #[test]
    fn degenerate_specs_rejected() {
        let mut s = SynthSpec::keyword(10, 2);
        s.keywords_per_label = 0;
        assert!(generate_synthetic_corpus(&s, 0).is_err());
        let mut s = SynthSpec::keyword(10, 2);
        s.lexicons = Some(vec![vec!["a".into()], vec![]]);
        assert!(generate_synthetic_corpus(&s, 0).is_err());
    }
}
