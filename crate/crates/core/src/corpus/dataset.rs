use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::BitMatrix;

use super::{CorpusError, CorpusResult, DiagnosisRecord, LabelCatalog, LabelMode, Note};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub hadm_id: u64,
    pub text: String,
    pub labels: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub examples: Vec<Example>,
    pub catalog: LabelCatalog,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn label_matrix(&self) -> BitMatrix {
        let rows: Vec<Vec<bool>> = self.examples.iter().map(|e| e.labels.clone()).collect();
        if rows.is_empty() {
            return BitMatrix::zeros(0, self.catalog.k());
        }
        BitMatrix::from_rows(&rows).expect("equal-length label vectors")
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.examples.iter().map(|e| e.text.as_str())
    }

    fn subset(&self, idx: &[usize]) -> LabeledDataset {
        LabeledDataset {
            examples: idx.iter().map(|&i| self.examples[i].clone()).collect(),
            catalog: self.catalog.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildStats {
    /// Discharge-summary admissions offered to the join.
    pub discharge_admissions: usize,
    /// Admissions with at least one catalog label.
    pub kept: usize,
}

impl BuildStats {
    pub fn coverage(&self) -> f64 {
        if self.discharge_admissions == 0 {
            0.0
        } else {
            self.kept as f64 / self.discharge_admissions as f64
        }
    }
}

/// Joins notes to diagnoses on the admission id. Admissions whose label
/// vector is all zero are dropped.
pub fn build_dataset(
    notes: &[Note],
    diagnoses: &[DiagnosisRecord],
    catalog: &LabelCatalog,
) -> CorpusResult<(LabeledDataset, BuildStats)> {
    let index = catalog.index_map();
    let wanted: HashSet<u64> = notes.iter().map(|n| n.hadm_id).collect();
    let mut by_hadm: HashMap<u64, Vec<bool>> = HashMap::new();
    for d in diagnoses {
        if !wanted.contains(&d.hadm_id) {
            continue;
        }
        let Ok(label) = catalog.mode.map(&d.icd9_code) else {
            continue;
        };
        if let Some(&j) = index.get(label.as_str()) {
            by_hadm.entry(d.hadm_id).or_insert_with(|| vec![false; catalog.k()])[j] = true;
        }
    }
    let examples: Vec<Example> = notes
        .iter()
        .filter_map(|n| {
            by_hadm.get(&n.hadm_id).map(|labels| Example {
                hadm_id: n.hadm_id,
                text: n.text.clone(),
                labels: labels.clone(),
            })
        })
        .collect();
    if examples.is_empty() {
        return Err(CorpusError::EmptyDataset);
    }
    let stats = BuildStats {
        discharge_admissions: wanted.len(),
        kept: examples.len(),
    };
    Ok((
        LabeledDataset {
            examples,
            catalog: catalog.clone(),
        },
        stats,
    ))
}

/// Train/validation/test fractions (exact rationals summing to one) and the
/// shuffle seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Ratio<u64>,
    pub val: Ratio<u64>,
    pub test: Ratio<u64>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: Ratio<u64>, val: Ratio<u64>, test: Ratio<u64>, seed: u64) -> CorpusResult<Self> {
        let zero = Ratio::from_integer(0);
        if train <= zero || val <= zero || test <= zero {
            return Err(CorpusError::Config("split fractions must be positive".into()));
        }
        if train + val + test != Ratio::from_integer(1) {
            return Err(CorpusError::Config(format!("split fractions {train} + {val} + {test} do not sum to 1")));
        }
        Ok(SplitSpec { train, val, test, seed })
    }

    /// 50-25-25.
    pub fn half_quarter_quarter(seed: u64) -> Self {
        Self::new(Ratio::new(1, 2), Ratio::new(1, 4), Ratio::new(1, 4), seed).expect("valid fractions")
    }
}

/// Seeded shuffle, then `floor(n·val)` validation and `floor(n·test)` test
/// examples; the remainder goes to training.
pub fn split_dataset(
    dataset: &LabeledDataset,
    spec: &SplitSpec,
) -> CorpusResult<(LabeledDataset, LabeledDataset, LabeledDataset)> {
    let n = dataset.len();
    if n < 4 {
        return Err(CorpusError::TooSmall(n));
    }
    SplitSpec::new(spec.train, spec.val, spec.test, spec.seed)?;
    let size = |f: Ratio<u64>| (f * Ratio::from_integer(n as u64)).floor().to_integer() as usize;
    let (n_val, n_test) = (size(spec.val), size(spec.test));
    let n_train = n - n_val - n_test;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    Ok((
        dataset.subset(&idx[..n_train]),
        dataset.subset(&idx[n_train..n_train + n_val]),
        dataset.subset(&idx[n_train + n_val..]),
    ))
}

/// `key = value` summary stored next to the split files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub mode: LabelMode,
    pub k: usize,
    pub seed: u64,
    pub coverage: f64,
    pub discharge_admissions: usize,
    pub kept: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

impl DatasetManifest {
    fn to_text(&self) -> String {
        format!(
            "mode = {}\nk = {}\nseed = {}\ncoverage = {}\ndischarge_admissions = {}\nkept = {}\nn_train = {}\nn_val = {}\nn_test = {}\n",
            self.mode, self.k, self.seed, self.coverage, self.discharge_admissions, self.kept, self.n_train, self.n_val, self.n_test
        )
    }

    fn parse(text: &str) -> CorpusResult<Self> {
        let mut kv = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CorpusError::Format(format!("manifest line {line:?}")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| kv.get(k).ok_or_else(|| CorpusError::Format(format!("manifest lacks {k}")));
        let num = |k: &str| -> CorpusResult<usize> {
            get(k)?.parse().map_err(|_| CorpusError::Format(format!("manifest {k} not an integer")))
        };
        Ok(DatasetManifest {
            mode: get("mode")?.parse()?,
            k: num("k")?,
            seed: num("seed")? as u64,
            coverage: get("coverage")?
                .parse()
                .map_err(|_| CorpusError::Format("manifest coverage".into()))?,
            discharge_admissions: num("discharge_admissions")?,
            kept: num("kept")?,
            n_train: num("n_train")?,
            n_val: num("n_val")?,
            n_test: num("n_test")?,
        })
    }
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('t') => out.push('\t'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

fn write_split<W: Write>(ds: &LabeledDataset, mut w: W) -> CorpusResult<()> {
    for e in &ds.examples {
        let bits: String = e.labels.iter().map(|&b| if b { '1' } else { '0' }).collect();
        writeln!(w, "{}\t{}\t{}", e.hadm_id, bits, escape(&e.text))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `hadm_id<TAB>bits<TAB>escaped text` file.
pub fn read_split_file(path: &Path, catalog: &LabelCatalog) -> CorpusResult<LabeledDataset> {
    let r = BufReader::new(fs::File::open(path)?);
    let mut examples = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let bad = |m: &str| CorpusError::Format(format!("{}:{}: {m}", path.display(), n + 1));
        let mut parts = line.splitn(3, '\t');
        let (Some(id), Some(bits), Some(text)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(bad("expected three tab-separated fields"));
        };
        if bits.len() != catalog.k() || !bits.bytes().all(|b| b == b'0' || b == b'1') {
            return Err(bad("label bits do not match the catalog"));
        }
        examples.push(Example {
            hadm_id: id.parse().map_err(|_| bad("bad admission id"))?,
            labels: bits.bytes().map(|b| b == b'1').collect(),
            text: unescape(text),
        });
    }
    Ok(LabeledDataset {
        examples,
        catalog: catalog.clone(),
    })
}

/// Writes `manifest.txt`, `catalog.tsv` and one file per split.
pub fn write_dataset_dir(
    dir: &Path,
    manifest: &DatasetManifest,
    train: &LabeledDataset,
    val: &LabeledDataset,
    test: &LabeledDataset,
) -> CorpusResult<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("manifest.txt"), manifest.to_text())?;
    let mut cat = String::new();
    for (l, c) in &train.catalog.labels {
        cat.push_str(&format!("{l}\t{c}\n"));
    }
    fs::write(dir.join("catalog.tsv"), cat)?;
    for (name, ds) in [("train.tsv", train), ("val.tsv", val), ("test.tsv", test)] {
        write_split(ds, std::io::BufWriter::new(fs::File::create(dir.join(name))?))?;
    }
    Ok(())
}

/// Manifest and label catalog of a dataset directory, without the splits.
pub fn read_catalog(dir: &Path) -> CorpusResult<(DatasetManifest, LabelCatalog)> {
    let manifest = DatasetManifest::parse(&fs::read_to_string(dir.join("manifest.txt"))?)?;
    let mut labels = Vec::new();
    for line in fs::read_to_string(dir.join("catalog.tsv"))?.lines() {
        let (l, c) = line
            .split_once('\t')
            .ok_or_else(|| CorpusError::Format(format!("catalog line {line:?}")))?;
        labels.push((
            l.to_string(),
            c.parse().map_err(|_| CorpusError::Format(format!("catalog count {c:?}")))?,
        ));
    }
    let catalog = LabelCatalog {
        mode: manifest.mode,
        labels,
    };
    Ok((manifest, catalog))
}

pub fn read_dataset_dir(
    dir: &Path,
) -> CorpusResult<(DatasetManifest, LabeledDataset, LabeledDataset, LabeledDataset)> {
    let (manifest, catalog) = read_catalog(dir)?;
    let train = read_split_file(&dir.join("train.tsv"), &catalog)?;
    let val = read_split_file(&dir.join("val.tsv"), &catalog)?;
    let test = read_split_file(&dir.join("test.tsv"), &catalog)?;
    Ok((manifest, train, val, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn note(hadm: u64) -> Note {
        Note {
            row_id: hadm,
            subject_id: 1,
            hadm_id: hadm,
            category: "Discharge summary".into(),
            text: format!("note {hadm}"),
        }
    }

    fn diag(hadm: u64, code: &str) -> DiagnosisRecord {
        DiagnosisRecord {
            subject_id: 1,
            hadm_id: hadm,
            seq_num: None,
            icd9_code: code.into(),
        }
    }

    fn catalog(k: usize) -> LabelCatalog {
        LabelCatalog {
            mode: LabelMode::Code,
            labels: (0..k).map(|i| (format!("{}", 100 + i), 1)).collect(),
        }
    }

    fn dataset(n: usize) -> LabeledDataset {
        LabeledDataset {
            examples: (0..n)
                .map(|i| Example {
                    hadm_id: i as u64,
                    text: String::new(),
                    labels: vec![true],
                })
                .collect(),
            catalog: catalog(1),
        }
    }

    #[test]
    fn single_match() {
        let (ds, stats) = build_dataset(&[note(1)], &[diag(1, "102")], &catalog(10)).unwrap();
        assert_eq!(ds.examples[0].labels.iter().filter(|b| **b).count(), 1);
        assert!(ds.examples[0].labels[2]);
        assert_eq!(stats.coverage(), 1.0);
    }

    #[test]
    fn coverage_quarter() {
        let notes: Vec<Note> = (1..=20).map(note).collect();
        let mut d: Vec<DiagnosisRecord> = (1..=5).map(|h| diag(h, "100")).collect();
        d.extend((6..=20).map(|h| diag(h, "999")));
        let (ds, stats) = build_dataset(&notes, &d, &catalog(3)).unwrap();
        assert_eq!(ds.len(), 5);
        assert_eq!(stats.coverage(), 0.25);
    }

    #[test]
    fn out_of_catalog_dropped() {
        assert!(matches!(
            build_dataset(&[note(1)], &[diag(1, "999")], &catalog(3)),
            Err(CorpusError::EmptyDataset)
        ));
    }

    #[test]
    fn split_sizes() {
        let spec = SplitSpec::half_quarter_quarter(3);
        for (n, want) in [(100, (50, 25, 25)), (101, (51, 25, 25)), (4, (2, 1, 1))] {
            let (a, b, c) = split_dataset(&dataset(n), &spec).unwrap();
            assert_eq!((a.len(), b.len(), c.len()), want);
        }
        assert!(matches!(split_dataset(&dataset(3), &spec), Err(CorpusError::TooSmall(3))));
    }

    #[test]
    fn bad_fractions() {
        assert!(SplitSpec::new(Ratio::new(1, 2), Ratio::new(1, 4), Ratio::new(1, 5), 0).is_err());
        assert!(SplitSpec::new(Ratio::new(1, 1), Ratio::new(0, 1), Ratio::new(0, 1), 0).is_err());
    }

    #[test]
    fn escape_round_trip() {
        for s in ["a\nb", "tab\there", "back\\slash\\n", "\r\n", ""] {
            assert_eq!(unescape(&escape(s)), s);
            assert!(!escape(s).contains('\n'));
        }
    }

    #[test]
    fn dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = dataset(8);
        ds.examples[0].text = "multi\nline\ttext".into();
        let (a, b, c) = split_dataset(&ds, &SplitSpec::half_quarter_quarter(1)).unwrap();
        let m = DatasetManifest {
            mode: LabelMode::Code,
            k: 1,
            seed: 1,
            coverage: 0.75,
            discharge_admissions: 8,
            kept: 6,
            n_train: a.len(),
            n_val: b.len(),
            n_test: c.len(),
        };
        write_dataset_dir(dir.path(), &m, &a, &b, &c).unwrap();
        let (m2, a2, b2, c2) = read_dataset_dir(dir.path()).unwrap();
        assert_eq!((m2, a2, b2, c2), (m, a, b, c));
    }
}
