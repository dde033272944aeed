use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{CorpusError, CorpusResult, DiagnosisRecord};

/// Checks the undotted MIMIC code forms: `[0-9]{3,5}`, `V[0-9]{2,4}`,
/// `E[0-9]{3,4}`.
pub fn validate_code(code: &str) -> CorpusResult<()> {
    let digits = |s: &str, lo: usize, hi: usize| (lo..=hi).contains(&s.len()) && s.bytes().all(|b| b.is_ascii_digit());
    let ok = match code.as_bytes().first() {
        Some(b'V') => digits(&code[1..], 2, 4),
        Some(b'E') => digits(&code[1..], 3, 4),
        Some(_) => digits(code, 3, 5),
        None => false,
    };
    if ok {
        Ok(())
    } else {
        Err(CorpusError::InvalidCode(code.to_string()))
    }
}

/// Numeric and V codes keep 3 characters, E codes keep 4.
pub fn code_to_category(code: &str) -> CorpusResult<String> {
    validate_code(code)?;
    let n = if code.starts_with('E') { 4 } else { 3 };
    Ok(code[..n].to_string())
}

/// The dotted spelling of a code, or `None` when it has no decimal part
/// (including every category).
pub fn dotted_form(code: &str) -> Option<String> {
    let split = if code.starts_with('E') { 4 } else { 3 };
    (code.len() > split).then(|| format!("{}.{}", &code[..split], &code[split..]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    Code,
    Category,
}

impl LabelMode {
    pub fn map(self, code: &str) -> CorpusResult<String> {
        match self {
            LabelMode::Code => {
                validate_code(code)?;
                Ok(code.to_string())
            }
            LabelMode::Category => code_to_category(code),
        }
    }
}

impl fmt::Display for LabelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelMode::Code => "code",
            LabelMode::Category => "category",
        })
    }
}

impl FromStr for LabelMode {
    type Err = CorpusError;

    fn from_str(s: &str) -> CorpusResult<Self> {
        match s {
            "code" => Ok(LabelMode::Code),
            "category" => Ok(LabelMode::Category),
            _ => Err(CorpusError::Config(format!("unknown label mode {s:?}"))),
        }
    }
}

/// Ordered top-k labels with their admission counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCatalog {
    pub mode: LabelMode,
    pub labels: Vec<(String, u64)>,
}

impl LabelCatalog {
    pub fn k(&self) -> usize {
        self.labels.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.labels.iter().map(|(l, _)| l.clone()).collect()
    }

    pub fn index_map(&self) -> HashMap<&str, usize> {
        self.labels.iter().enumerate().map(|(i, (l, _))| (l.as_str(), i)).collect()
    }
}

/// Counts distinct admissions per label and keeps the `k` most frequent,
/// ties in label order. With `admissions`, only those admissions count.
/// Codes that fail validation are skipped with a warning.
pub fn select_top_labels(
    diagnoses: &[DiagnosisRecord],
    k: usize,
    mode: LabelMode,
    admissions: Option<&HashSet<u64>>,
) -> CorpusResult<LabelCatalog> {
    if k == 0 {
        return Err(CorpusError::Config("k must be at least 1".into()));
    }
    let mut pairs: HashSet<(String, u64)> = HashSet::new();
    let mut invalid = 0usize;
    for d in diagnoses {
        if admissions.is_some_and(|a| !a.contains(&d.hadm_id)) {
            continue;
        }
        match mode.map(&d.icd9_code) {
            Ok(label) => {
                pairs.insert((label, d.hadm_id));
            }
            Err(_) => invalid += 1,
        }
    }
    if invalid > 0 {
        warn!("{invalid} diagnosis rows with malformed codes ignored");
    }
    let mut counts: HashMap<String, u64> = HashMap::new();
    for (label, _) in pairs {
        *counts.entry(label).or_insert(0) += 1;
    }
    let found = counts.len();
    if found < k {
        return Err(CorpusError::InsufficientLabels { k, found });
    }
    let mut labels: Vec<(String, u64)> = counts.into_iter().collect();
    labels.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    labels.truncate(k);
    Ok(LabelCatalog { mode, labels })
}

fn is_token_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '.'
}

/// Removes whole-token mentions of catalog labels in undotted and dotted
/// form. A token is a maximal run of ASCII letters, digits and dots, with
/// leading and trailing dots treated as punctuation.
pub fn sanitize_note(text: &str, catalog: &LabelCatalog) -> String {
    let mut forms: HashSet<String> = HashSet::new();
    for (l, _) in &catalog.labels {
        forms.insert(l.to_ascii_uppercase());
        if let Some(d) = dotted_form(l) {
            forms.insert(d.to_ascii_uppercase());
        }
    }
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find(is_token_char) {
        out.push_str(&rest[..start]);
        rest = &rest[start..];
        let end = rest.find(|c: char| !is_token_char(c)).unwrap_or(rest.len());
        let span = &rest[..end];
        let core = span.trim_matches('.');
        if core.is_empty() || !forms.contains(&core.to_ascii_uppercase()) {
            out.push_str(span);
        } else {
            let lead = span.len() - span.trim_start_matches('.').len();
            let trail = span.len() - span.trim_end_matches('.').len();
            out.push_str(&span[..lead]);
            out.push_str(&span[span.len() - trail..]);
        }
        rest = &rest[end..];
    }
    out.push_str(rest);
    out
}
