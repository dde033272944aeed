use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use csv::StringRecord;
use log::warn;
use serde::{Deserialize, Serialize};

use super::{CorpusError, CorpusResult};

pub const DISCHARGE_CATEGORY: &str = "Discharge summary";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Note {
    pub row_id: u64,
    pub subject_id: u64,
    pub hadm_id: u64,
    pub category: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosisRecord {
    pub subject_id: u64,
    pub hadm_id: u64,
    pub seq_num: Option<u32>,
    pub icd9_code: String,
}

fn column(headers: &StringRecord, file: &str, name: &'static str) -> CorpusResult<usize> {
    headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case(name))
        .ok_or(CorpusError::Schema {
            file: file.to_string(),
            column: name,
        })
}

fn row_number(rec: &StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn record_error(file: &str, err: csv::Error) -> CorpusError {
    let row = err.position().map_or(0, |p| p.line());
    CorpusError::Record {
        file: file.to_string(),
        row,
        msg: err.to_string(),
    }
}

fn parse_id(file: &str, rec: &StringRecord, idx: usize, what: &str) -> CorpusResult<u64> {
    let raw = rec.get(idx).unwrap_or("").trim();
    raw.parse().map_err(|_| CorpusError::Record {
        file: file.to_string(),
        row: row_number(rec),
        msg: format!("{what} {raw:?} is not an integer"),
    })
}

/// Streaming reader over a NOTEEVENTS export. Rows with an empty HADM_ID are
/// skipped and counted.
pub struct NoteReader<R> {
    file: String,
    rdr: csv::Reader<R>,
    cols: [usize; 5],
    record: StringRecord,
    skipped: usize,
}

impl NoteReader<File> {
    pub fn from_path(path: &Path) -> CorpusResult<Self> {
        let name = path.display().to_string();
        Self::from_reader(File::open(path)?, &name)
    }
}

impl<R: Read> NoteReader<R> {
    pub fn from_reader(r: R, name: &str) -> CorpusResult<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(r);
        let headers = rdr.headers().map_err(|e| record_error(name, e))?.clone();
        let cols = [
            column(&headers, name, "ROW_ID")?,
            column(&headers, name, "SUBJECT_ID")?,
            column(&headers, name, "HADM_ID")?,
            column(&headers, name, "CATEGORY")?,
            column(&headers, name, "TEXT")?,
        ];
        Ok(NoteReader {
            file: name.to_string(),
            rdr,
            cols,
            record: StringRecord::new(),
            skipped: 0,
        })
    }

    /// Rows skipped so far for lacking an admission id.
    pub fn skipped(&self) -> usize {
        self.skipped
    }
}

impl<R: Read> Iterator for NoteReader<R> {
    type Item = CorpusResult<Note>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            match self.rdr.read_record(&mut self.record) {
                Ok(false) => return None,
                Err(e) => return Some(Err(record_error(&self.file, e))),
                Ok(true) => {}
            }
            let rec = &self.record;
            let [c_row, c_subj, c_hadm, c_cat, c_text] = self.cols;
            if rec.get(c_hadm).unwrap_or("").trim().is_empty() {
                self.skipped += 1;
                continue;
            }
            let note = (|| {
                Ok(Note {
                    row_id: parse_id(&self.file, rec, c_row, "ROW_ID")?,
                    subject_id: parse_id(&self.file, rec, c_subj, "SUBJECT_ID")?,
                    hadm_id: parse_id(&self.file, rec, c_hadm, "HADM_ID")?,
                    category: rec.get(c_cat).unwrap_or("").to_string(),
                    text: rec.get(c_text).unwrap_or("").to_string(),
                })
            })();
            return Some(note);
        }
    }
}

pub fn load_noteevents(path: &Path) -> CorpusResult<NoteReader<File>> {
    NoteReader::from_path(path)
}

/// Streaming reader over a DIAGNOSES_ICD export. Rows without an admission
/// id or a code are skipped and counted; codes are trimmed but not
/// validated here.
pub struct DiagnosisReader<R> {
    file: String,
    rdr: csv::Reader<R>,
    cols: [usize; 4],
    record: StringRecord,
    skipped: usize,
}

impl DiagnosisReader<File> {
    pub fn from_path(path: &Path) -> CorpusResult<Self> {
        let name = path.display().to_string();
        Self::from_reader(File::open(path)?, &name)
    }
}

impl<R: Read> DiagnosisReader<R> {
    pub fn from_reader(r: R, name: &str) -> CorpusResult<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let headers = rdr.headers().map_err(|e| record_error(name, e))?.clone();
        let cols = [
            column(&headers, name, "SUBJECT_ID")?,
            column(&headers, name, "HADM_ID")?,
            column(&headers, name, "SEQ_NUM")?,
            column(&headers, name, "ICD9_CODE")?,
        ];
        Ok(DiagnosisReader {
            file: name.to_string(),
            rdr,
            cols,
            record: StringRecord::new(),
            skipped: 0,
        })
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }
}

impl<R: Read> Iterator for DiagnosisReader<R> {
    type Item = CorpusResult<DiagnosisRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            match self.rdr.read_record(&mut self.record) {
                Ok(false) => return None,
                Err(e) => return Some(Err(record_error(&self.file, e))),
                Ok(true) => {}
            }
            let rec = &self.record;
            let [c_subj, c_hadm, c_seq, c_code] = self.cols;
            let code = rec.get(c_code).unwrap_or("").trim();
            if rec.get(c_hadm).unwrap_or("").trim().is_empty() || code.is_empty() {
                self.skipped += 1;
                continue;
            }
            let seq = rec.get(c_seq).unwrap_or("").trim();
            let d = (|| {
                Ok(DiagnosisRecord {
                    subject_id: parse_id(&self.file, rec, c_subj, "SUBJECT_ID")?,
                    hadm_id: parse_id(&self.file, rec, c_hadm, "HADM_ID")?,
                    seq_num: if seq.is_empty() {
                        None
                    } else {
                        Some(parse_id(&self.file, rec, c_seq, "SEQ_NUM")? as u32)
                    },
                    icd9_code: code.to_string(),
                })
            })();
            return Some(d);
        }
    }
}

pub fn load_diagnoses(path: &Path) -> CorpusResult<DiagnosisReader<File>> {
    DiagnosisReader::from_path(path)
}

/// Keeps discharge summaries (category compared trimmed and
/// case-insensitively), one per admission: the one with the largest row id.
/// Output is ordered by admission id.
pub fn filter_discharge_summaries<I>(notes: I) -> CorpusResult<Vec<Note>>
where
    I: IntoIterator<Item = CorpusResult<Note>>,
{
    let mut best: HashMap<u64, Note> = HashMap::new();
    let mut duplicates = 0usize;
    for n in notes {
        let n = n?;
        if !n.category.trim().eq_ignore_ascii_case(DISCHARGE_CATEGORY) {
            continue;
        }
        match best.get(&n.hadm_id) {
            Some(prev) => {
                duplicates += 1;
                if n.row_id > prev.row_id {
                    best.insert(n.hadm_id, n);
                }
            }
            None => {
                best.insert(n.hadm_id, n);
            }
        }
    }
    if duplicates > 0 {
        warn!("{duplicates} extra discharge summaries dropped (latest row kept per admission)");
    }
    let mut out: Vec<Note> = best.into_values().collect();
    out.sort_by_key(|n| n.hadm_id);
    Ok(out)
}

const NOTE_HEADER: [&str; 11] = [
    "ROW_ID",
    "SUBJECT_ID",
    "HADM_ID",
    "CHARTDATE",
    "CHARTTIME",
    "STORETIME",
    "CATEGORY",
    "DESCRIPTION",
    "CGID",
    "ISERROR",
    "TEXT",
];

/// Writes notes with the full NOTEEVENTS column layout; unused columns are
/// left empty.
pub fn write_noteevents_csv<W: Write>(notes: &[Note], out: W) -> CorpusResult<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(NOTE_HEADER)?;
    for n in notes {
        let (row, subj, hadm) = (n.row_id.to_string(), n.subject_id.to_string(), n.hadm_id.to_string());
        w.write_record([
            row.as_str(),
            subj.as_str(),
            hadm.as_str(),
            "",
            "",
            "",
            n.category.as_str(),
            "Report",
            "",
            "",
            n.text.as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_diagnoses_csv<W: Write>(diagnoses: &[DiagnosisRecord], out: W) -> CorpusResult<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(["ROW_ID", "SUBJECT_ID", "HADM_ID", "SEQ_NUM", "ICD9_CODE"])?;
    for (i, d) in diagnoses.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            d.subject_id.to_string(),
            d.hadm_id.to_string(),
            d.seq_num.map(|s| s.to_string()).unwrap_or_default(),
            d.icd9_code.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
