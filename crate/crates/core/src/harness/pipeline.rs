use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use log::info;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    build_dataset, filter_discharge_summaries, generate_synthetic_corpus, load_diagnoses, load_noteevents,
    read_catalog, read_dataset_dir, read_split_file, sanitize_note, select_top_labels, split_dataset,
    write_dataset_dir, CorpusResult, DatasetManifest, LabeledDataset, SplitSpec, SynthSpec, SyntheticCorpus,
};
use crate::features::{
    average_embedding_matrix, build_tfidf_vocabulary, encode_word_sequence, load_pretrained_embeddings, read_dense,
    read_sequences, read_sparse, select_tfidf_config, tfidf_matrix, train_word2vec_cbow, write_dense,
    write_sequences, write_sparse, EmbeddingMatrix, EmbeddingSource, SequenceExample,
};
use crate::metrics::{report_with_curves, write_pr_csv, MetricsReport, PredictionRun};
use crate::models::{fit, EpochRecord, Features, LabeledFeatures, TrainedModel};
use crate::neuralcore::{read_tensor, write_tensor, Tensor};
use crate::scalar::Scalar;
use crate::textproc::{build_vocabulary, is_stopword, tokenize, StopwordList, VocabOptions};

use super::config::{DataSource, EmbeddingChoice, ExperimentConfig, ScalarKind, StopwordPolicy, SynthTask, Track};
use super::{in_stage, HarnessError, HarnessResult, Stage};

const KEY_FILE: &str = "key.txt";
const DONE_FILE: &str = "complete";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageOutput {
    pub dir: PathBuf,
    pub cached: bool,
}

fn cache_dir(out: &Path, kind: &str, hash: &str) -> PathBuf {
    out.join("cache").join(format!("{kind}-{}", &hash[..16]))
}

/// A completed entry is reusable only when its stored key is the full
/// requested hash.
fn cached(dir: &Path, hash: &str) -> HarnessResult<bool> {
    if !dir.join(DONE_FILE).exists() {
        return Ok(false);
    }
    let found = fs::read_to_string(dir.join(KEY_FILE)).unwrap_or_default();
    if found.trim() != hash {
        return Err(HarnessError::CacheKey {
            path: dir.display().to_string(),
            found: found.trim().to_string(),
            wanted: hash.to_string(),
        });
    }
    Ok(true)
}

fn begin_entry(dir: &Path, hash: &str) -> HarnessResult<()> {
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir)?;
    fs::write(dir.join(KEY_FILE), format!("{hash}\n"))?;
    Ok(())
}

fn finish_entry(dir: &Path) -> HarnessResult<()> {
    fs::write(dir.join(DONE_FILE), "")?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> HarnessResult<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> HarnessResult<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| HarnessError::Missing(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn reader(path: &Path) -> HarnessResult<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).map_err(|e| HarnessError::Missing(format!("{}: {e}", path.display())))?,
    ))
}

fn writer(path: &Path) -> HarnessResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// The synthetic corpus a config describes.
pub fn synthesize(task: SynthTask, n: usize, k: usize, seed: u64) -> CorpusResult<SyntheticCorpus> {
    let spec = match task {
        SynthTask::Keyword => SynthSpec::keyword(n, k),
        SynthTask::Order => SynthSpec::order(n, k),
    };
    generate_synthetic_corpus(&spec, seed)
}

/// Builds (or reuses) the labeled, sanitized and split dataset.
pub fn prepare(cfg: &ExperimentConfig, out: &Path) -> HarnessResult<StageOutput> {
    let hash = cfg.dataset_hash();
    let dir = cache_dir(out, "dataset", &hash);
    if cached(&dir, &hash)? {
        info!("prepare: reusing cached dataset {}", dir.display());
        return Ok(StageOutput { dir, cached: true });
    }
    let d = &cfg.dataset;
    let (notes, diagnoses) = match &d.source {
        DataSource::Synthetic { task, n, seed } => {
            let c = synthesize(*task, *n, d.k, *seed)?;
            (filter_discharge_summaries(c.notes.into_iter().map(Ok))?, c.diagnoses)
        }
        DataSource::Mimic { notes, diagnoses } => (
            filter_discharge_summaries(load_noteevents(notes)?)?,
            load_diagnoses(diagnoses)?.collect::<CorpusResult<Vec<_>>>()?,
        ),
    };
    let admissions: HashSet<u64> = notes.iter().map(|n| n.hadm_id).collect();
    let catalog = select_top_labels(&diagnoses, d.k, d.mode, Some(&admissions))?;
    let (mut ds, stats) = build_dataset(&notes, &diagnoses, &catalog)?;
    for e in &mut ds.examples {
        e.text = sanitize_note(&e.text, &catalog);
    }
    let [a, b, c] = d.split;
    let (train, val, test) = split_dataset(&ds, &SplitSpec::new(a, b, c, d.split_seed)?)?;
    let manifest = DatasetManifest {
        mode: d.mode,
        k: d.k,
        seed: d.split_seed,
        coverage: stats.coverage(),
        discharge_admissions: stats.discharge_admissions,
        kept: stats.kept,
        n_train: train.len(),
        n_val: val.len(),
        n_test: test.len(),
    };
    begin_entry(&dir, &hash)?;
    write_dataset_dir(&dir, &manifest, &train, &val, &test)?;
    finish_entry(&dir)?;
    info!(
        "prepare: {} admissions, coverage {:.4}, split {}/{}/{}",
        stats.kept, manifest.coverage, manifest.n_train, manifest.n_val, manifest.n_test
    );
    Ok(StageOutput { dir, cached: false })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FeatureMeta {
    track: String,
    /// Feature columns (tfidf, averaged embeddings) or sequence length.
    width: usize,
    vocab_size: usize,
    embedding_source: Option<EmbeddingSource>,
    coverage: Option<f64>,
    cbow_losses: Vec<f64>,
}

fn split_tokens(ds: &LabeledDataset, drop_stopwords: bool, stop: &StopwordList) -> Vec<Vec<String>> {
    ds.texts()
        .map(|t| {
            let mut toks = tokenize(t);
            if drop_stopwords {
                toks.retain(|w| !is_stopword(w, stop));
            }
            toks
        })
        .collect()
}

const SPLITS: [&str; 3] = ["train", "val", "test"];

fn feature_file(dir: &Path, split: &str, track: Track) -> PathBuf {
    let ext = match track {
        Track::Tfidf40k | Track::Tfidf20k => "sparse",
        Track::W2vAvg => "dense",
        Track::WordSeq => "seq",
    };
    dir.join(format!("{split}.{ext}"))
}

/// Vectorizes every split with a vocabulary (and idf table or embedding)
/// fitted on the training split only.
pub fn featurize(cfg: &ExperimentConfig, out: &Path, dataset_dir: &Path) -> HarnessResult<StageOutput> {
    let hash = cfg.features_hash();
    let dir = cache_dir(out, "features", &hash);
    if cached(&dir, &hash)? {
        info!("featurize: reusing cached features {}", dir.display());
        return Ok(StageOutput { dir, cached: true });
    }
    let f = &cfg.features;
    let (_, train, val, test) = read_dataset_dir(dataset_dir)?;
    let stop = StopwordList::english();
    let drop = match f.stopwords {
        StopwordPolicy::Remove => true,
        StopwordPolicy::Zero => !f.track.uses_embeddings(),
        StopwordPolicy::Keep => false,
    };
    let docs: Vec<Vec<Vec<String>>> = [&train, &val, &test].iter().map(|d| split_tokens(d, drop, &stop)).collect();
    begin_entry(&dir, &hash)?;
    let meta = match f.track {
        Track::Tfidf40k | Track::Tfidf20k => {
            let (_, mut params) = select_tfidf_config(f.track.name())?;
            if let Some(c) = f.tfidf_cap {
                params.cap = Some(c);
            }
            if let Some(m) = f.tfidf_min_df {
                params.min_doc_freq = m;
            }
            if let Some(r) = f.tfidf_max_df {
                params.max_doc_frac = r;
            }
            let (vocab, idf) = build_tfidf_vocabulary(&docs[0], &params)?;
            vocab.write(writer(&dir.join("vocab.txt"))?)?;
            write_json(&dir.join("idf.json"), &idf)?;
            for (split, d) in SPLITS.iter().zip(&docs) {
                let m = tfidf_matrix::<f64, _, _>(d, &vocab, &idf);
                let mut w = writer(&feature_file(&dir, split, f.track))?;
                write_sparse(&m, &mut w)?;
                w.flush()?;
            }
            FeatureMeta {
                track: f.track.name().into(),
                width: vocab.len(),
                vocab_size: vocab.len(),
                embedding_source: None,
                coverage: None,
                cbow_losses: Vec::new(),
            }
        }
        Track::W2vAvg | Track::WordSeq => {
            let vocab = build_vocabulary(&docs[0], &VocabOptions::default())?;
            vocab.write(writer(&dir.join("vocab.txt"))?)?;
            let (mut emb, coverage, losses) = match &f.embedding {
                EmbeddingChoice::SelfTrained => {
                    let (emb, rep) = train_word2vec_cbow(&docs[0], &vocab, &f.w2v)?;
                    (emb, None, rep.epoch_losses)
                }
                EmbeddingChoice::Pretrained(p) => {
                    let load = load_pretrained_embeddings::<f64, _>(reader(p)?, &vocab)?;
                    (load.matrix, Some(load.coverage), Vec::new())
                }
            };
            if f.stopwords == StopwordPolicy::Zero {
                emb.zero_stopwords(&vocab, &stop);
            }
            emb.check()?;
            let mut w = writer(&dir.join("embedding.bin"))?;
            write_tensor(&mut w, &emb.vectors)?;
            w.flush()?;
            for (split, d) in SPLITS.iter().zip(&docs) {
                let mut w = writer(&feature_file(&dir, split, f.track))?;
                if f.track == Track::W2vAvg {
                    write_dense(&average_embedding_matrix(d, &vocab, &emb), &mut w)?;
                } else {
                    let seqs: Vec<SequenceExample> =
                        d.iter().map(|doc| encode_word_sequence(doc, f.seq_len, &vocab)).collect();
                    write_sequences(&seqs, &mut w)?;
                }
                w.flush()?;
            }
            FeatureMeta {
                track: f.track.name().into(),
                width: if f.track == Track::W2vAvg { emb.dim() } else { f.seq_len },
                vocab_size: vocab.len(),
                embedding_source: Some(emb.source),
                coverage,
                cbow_losses: losses,
            }
        }
    };
    write_json(&dir.join("meta.json"), &meta)?;
    finish_entry(&dir)?;
    info!("featurize: {} track, vocabulary {}", meta.track, meta.vocab_size);
    Ok(StageOutput { dir, cached: false })
}

fn load_features<F: Scalar>(dir: &Path, split: &str, track: Track) -> HarnessResult<Features<F>> {
    let r = reader(&feature_file(dir, split, track))?;
    Ok(match track {
        Track::Tfidf40k | Track::Tfidf20k => Features::Sparse(read_sparse(r)?),
        Track::W2vAvg => Features::Dense(read_dense(r)?),
        Track::WordSeq => Features::Sequence(read_sequences(r)?),
    })
}

fn load_embedding<F: Scalar>(dir: &Path) -> HarnessResult<EmbeddingMatrix<F>> {
    let meta: FeatureMeta = read_json(&dir.join("meta.json"))?;
    let vectors: Tensor<f64> = read_tensor(&mut reader(&dir.join("embedding.bin"))?)?;
    let e = EmbeddingMatrix {
        vectors,
        source: meta.embedding_source.unwrap_or(EmbeddingSource::SelfTrained),
    };
    Ok(e.cast())
}

/// Where a run's inputs live; written by `train`, read by later stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunManifest {
    config_hash: String,
    dataset_hash: String,
    features_hash: String,
    dataset_dir: PathBuf,
    features_dir: PathBuf,
    model: String,
    family: String,
    track: String,
    scalar: String,
    threshold: f64,
    started_at: u64,
    n_train: usize,
    n_val: usize,
    n_test: usize,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn track_of(name: &str) -> HarnessResult<Track> {
    name.parse()
}

fn run_dir(out: &Path, cfg: &ExperimentConfig) -> PathBuf {
    out.join("runs").join(&cfg.config_hash()[..16])
}

/// Fits the configured model and scores it on its own training split.
pub fn train(cfg: &ExperimentConfig, out: &Path, dataset_dir: &Path, features_dir: &Path) -> HarnessResult<PathBuf> {
    let dir = run_dir(out, cfg);
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.txt"), cfg.canonical())?;
    let (ds_manifest, _) = read_catalog(dataset_dir)?;
    let manifest = RunManifest {
        config_hash: cfg.config_hash(),
        dataset_hash: cfg.dataset_hash(),
        features_hash: cfg.features_hash(),
        dataset_dir: dataset_dir.to_path_buf(),
        features_dir: features_dir.to_path_buf(),
        model: cfg.model.name.clone(),
        family: cfg.model.family.to_string(),
        track: cfg.features.track.name().into(),
        scalar: match cfg.scalar {
            ScalarKind::F32 => "f32",
            ScalarKind::F64 => "f64",
        }
        .into(),
        threshold: cfg.training.threshold,
        started_at: now(),
        n_train: ds_manifest.n_train,
        n_val: ds_manifest.n_val,
        n_test: ds_manifest.n_test,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    match cfg.scalar {
        ScalarKind::F32 => train_typed::<f32>(cfg, &dir, dataset_dir, features_dir)?,
        ScalarKind::F64 => train_typed::<f64>(cfg, &dir, dataset_dir, features_dir)?,
    }
    Ok(dir)
}

fn train_typed<F: Scalar>(cfg: &ExperimentConfig, dir: &Path, dataset_dir: &Path, features_dir: &Path) -> HarnessResult<()> {
    let track = cfg.features.track;
    let (_, catalog) = read_catalog(dataset_dir)?;
    let train_ds = read_split_file(&dataset_dir.join("train.tsv"), &catalog)?;
    let val_ds = read_split_file(&dataset_dir.join("val.tsv"), &catalog)?;
    let train = LabeledFeatures::new(load_features::<F>(features_dir, "train", track)?, train_ds.label_matrix())?;
    let val = LabeledFeatures::new(load_features::<F>(features_dir, "val", track)?, val_ds.label_matrix())?;
    let embedding = if track.is_sequence() {
        Some(load_embedding::<F>(features_dir)?)
    } else {
        None
    };
    let mut model = fit(&cfg.model, &train, &val, &cfg.training, embedding.as_ref())?;
    model.save(&dir.join("model"))?;
    let probs = model.predict_proba(&train.features)?;
    let mut w = writer(&dir.join("train_probs.dense"))?;
    write_dense(&probs, &mut w)?;
    w.flush()?;
    info!(
        "train: {} stopped at epoch {}, best epoch {}",
        cfg.model.name, model.stopped_epoch, model.best_epoch
    );
    Ok(())
}

/// Scores the test split. Reads only the test features and test labels.
pub fn evaluate(run: &Path) -> HarnessResult<MetricsReport> {
    let m: RunManifest = read_json(&run.join("manifest.json"))?;
    match m.scalar.as_str() {
        "f32" => evaluate_typed::<f32>(run, &m),
        _ => evaluate_typed::<f64>(run, &m),
    }
}

fn evaluate_typed<F: Scalar>(run: &Path, m: &RunManifest) -> HarnessResult<MetricsReport> {
    let track = track_of(&m.track)?;
    let mut model = TrainedModel::<F>::load(&run.join("model"))?;
    let x = load_features::<F>(&m.features_dir, "test", track)?;
    let probs = model.predict_proba(&x)?;
    let mut w = writer(&run.join("test_probs.dense"))?;
    write_dense(&probs, &mut w)?;
    w.flush()?;
    let (_, catalog) = read_catalog(&m.dataset_dir)?;
    let test = read_split_file(&m.dataset_dir.join("test.tsv"), &catalog)?;
    let pr = PredictionRun::from_probs(probs, test.label_matrix(), catalog.names(), m.threshold)?;
    let (rep, _) = report_with_curves(&pr)?;
    write_json(&run.join("test_metrics.json"), &rep)?;
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub dataset_hash: String,
    pub features_hash: String,
    pub model: String,
    pub family: String,
    pub track: String,
    pub started_at: u64,
    pub finished_at: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub history: Vec<EpochRecord>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    pub train: MetricsReport,
    pub test: MetricsReport,
    pub artifacts: BTreeMap<String, String>,
}

impl RunRecord {
    /// The record with timestamps cleared, for reproducibility checks.
    pub fn without_timestamps(&self) -> RunRecord {
        RunRecord {
            started_at: 0,
            finished_at: 0,
            ..self.clone()
        }
    }

    /// Plain-text metric table, train and test side by side.
    pub fn summary_text(&self) -> String {
        let mut s = format!(
            "model {} ({}), track {}, config {}\nexamples train {} / val {} / test {}\n\n",
            self.model,
            self.family,
            self.track,
            &self.config_hash[..16],
            self.n_train,
            self.n_val,
            self.n_test
        );
        s.push_str(&format!("{:<14}{:>10}{:>10}\n", "metric", "train", "test"));
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        let rows: [(&str, Option<f64>, Option<f64>); 8] = [
            ("precision", Some(self.train.precision), Some(self.test.precision)),
            ("recall", Some(self.train.recall), Some(self.test.recall)),
            ("f1", Some(self.train.f1), Some(self.test.f1)),
            ("accuracy", Some(self.train.accuracy), Some(self.test.accuracy)),
            ("hamming_loss", Some(self.train.hamming_loss), Some(self.test.hamming_loss)),
            ("macro_auc", Some(self.train.macro_auc), Some(self.test.macro_auc)),
            ("precision@5", self.train.precision_at_5, self.test.precision_at_5),
            ("mean_ap", Some(self.train.mean_ap), Some(self.test.mean_ap)),
        ];
        for (name, a, b) in rows {
            s.push_str(&format!("{:<14}{:>10}{:>10}\n", name, opt(a), opt(b)));
        }
        s.push_str(&format!("\nstopped at epoch {}, best epoch {}\n", self.stopped_epoch, self.best_epoch));
        s
    }
}

fn split_report<F: Scalar>(probs: Tensor<F>, truth: &LabeledDataset, threshold: f64) -> HarnessResult<(MetricsReport, Vec<crate::metrics::PrCurve>)> {
    let pr = PredictionRun::from_probs(probs, truth.label_matrix(), truth.catalog.names(), threshold)?;
    Ok(report_with_curves(&pr)?)
}

/// Writes `metrics.json` (test), `train_metrics.json`, PR curve CSVs, the
/// text summary and `record.json` from a run directory.
pub fn report(run: &Path) -> HarnessResult<RunRecord> {
    let m: RunManifest = read_json(&run.join("manifest.json"))?;
    let (_, catalog) = read_catalog(&m.dataset_dir)?;
    let train_ds = read_split_file(&m.dataset_dir.join("train.tsv"), &catalog)?;
    let test_ds = read_split_file(&m.dataset_dir.join("test.tsv"), &catalog)?;
    let train_probs: Tensor<f64> = read_dense(reader(&run.join("train_probs.dense"))?)?;
    let test_probs: Tensor<f64> = read_dense(reader(&run.join("test_probs.dense"))?)?;
    let (train_rep, train_curves) = split_report(train_probs, &train_ds, m.threshold)?;
    let (test_rep, test_curves) = split_report(test_probs, &test_ds, m.threshold)?;
    write_json(&run.join("metrics.json"), &test_rep)?;
    write_json(&run.join("train_metrics.json"), &train_rep)?;
    write_pr_csv(&test_curves, writer(&run.join("pr_test.csv"))?)?;
    write_pr_csv(&train_curves, writer(&run.join("pr_train.csv"))?)?;

    #[derive(Deserialize)]
    struct ModelHead {
        history: Vec<EpochRecord>,
        stopped_epoch: usize,
        best_epoch: usize,
    }
    let head: ModelHead = read_json(&run.join("model").join("model.json"))?;
    let mut artifacts = BTreeMap::new();
    for name in [
        "config.txt",
        "manifest.json",
        "model",
        "metrics.json",
        "train_metrics.json",
        "pr_test.csv",
        "pr_train.csv",
        "summary.txt",
        "test_probs.dense",
        "train_probs.dense",
    ] {
        artifacts.insert(name.to_string(), run.join(name).display().to_string());
    }
    artifacts.insert("dataset".into(), m.dataset_dir.display().to_string());
    artifacts.insert("features".into(), m.features_dir.display().to_string());
    let record = RunRecord {
        config_hash: m.config_hash,
        dataset_hash: m.dataset_hash,
        features_hash: m.features_hash,
        model: m.model,
        family: m.family,
        track: m.track,
        started_at: m.started_at,
        finished_at: now(),
        n_train: m.n_train,
        n_val: m.n_val,
        n_test: m.n_test,
        history: head.history,
        stopped_epoch: head.stopped_epoch,
        best_epoch: head.best_epoch,
        train: train_rep,
        test: test_rep,
        artifacts,
    };
    fs::write(run.join("summary.txt"), record.summary_text())?;
    write_json(&run.join("record.json"), &record)?;
    Ok(record)
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub record: RunRecord,
    pub run_dir: PathBuf,
    /// Stages served from the cache.
    pub cache_hits: Vec<Stage>,
}

/// Runs every stage for `cfg` under `out`, reusing cached dataset and
/// feature artifacts whose config hashes match.
pub fn run_pipeline(cfg: &ExperimentConfig, out: &Path) -> HarnessResult<RunOutcome> {
    cfg.validate()?;
    let mut cache_hits = Vec::new();
    let ds = in_stage(Stage::Prepare, prepare(cfg, out))?;
    if ds.cached {
        cache_hits.push(Stage::Prepare);
    }
    let feats = in_stage(Stage::Featurize, featurize(cfg, out, &ds.dir))?;
    if feats.cached {
        cache_hits.push(Stage::Featurize);
    }
    let run_dir = in_stage(Stage::Train, train(cfg, out, &ds.dir, &feats.dir))?;
    in_stage(Stage::Evaluate, evaluate(&run_dir))?;
    let record = in_stage(Stage::Report, report(&run_dir))?;
    Ok(RunOutcome {
        record,
        run_dir,
        cache_hits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(extra: &str) -> ExperimentConfig {
        ExperimentConfig::from_text(&format!(
            "dataset.synthetic.n = 80\ndataset.k = 4\nfeatures.track = tfidf20k\nfeatures.tfidf.min_df = 2\n\
             model.preset = logreg\nmodel.iterations = 30\n{extra}"
        ))
        .unwrap()
    }

    #[test]
    fn pipeline_caches_and_records() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small("");
        let a = run_pipeline(&cfg, tmp.path()).unwrap();
        assert!(a.cache_hits.is_empty());
        assert_eq!(a.record.n_val, a.record.n_test);
        assert!(a.record.n_train >= 2 * a.record.n_val);
        assert!(a.run_dir.join("metrics.json").exists());
        assert!(a.run_dir.join("pr_test.csv").exists());
        assert!(a.run_dir.join("summary.txt").exists());
        let b = run_pipeline(&cfg, tmp.path()).unwrap();
        assert_eq!(b.cache_hits, vec![Stage::Prepare, Stage::Featurize]);
        assert_eq!(a.record.without_timestamps(), b.record.without_timestamps());
        let c = run_pipeline(&small("training.seed = 9"), tmp.path()).unwrap();
        assert_eq!(c.cache_hits, vec![Stage::Prepare, Stage::Featurize]);
        assert_ne!(c.run_dir, a.run_dir);
    }

    #[test]
    fn foreign_cache_entry_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small("");
        let ds = prepare(&cfg, tmp.path()).unwrap();
        fs::write(ds.dir.join(KEY_FILE), "0".repeat(64)).unwrap();
        let err = prepare(&cfg, tmp.path()).unwrap_err();
        assert!(matches!(err, HarnessError::CacheKey { .. }));
    }

    #[test]
    fn evaluate_ignores_training_labels() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small("");
        let out = run_pipeline(&cfg, tmp.path()).unwrap();
        let ds = cache_dir(tmp.path(), "dataset", &cfg.dataset_hash());
        let before = fs::read(out.run_dir.join("test_metrics.json")).unwrap();
        fs::write(ds.join("train.tsv"), "garbage").unwrap();
        fs::write(ds.join("val.tsv"), "garbage").unwrap();
        let rep = evaluate(&out.run_dir).unwrap();
        assert_eq!(rep, out.record.test);
        assert_eq!(fs::read(out.run_dir.join("test_metrics.json")).unwrap(), before);
    }

    #[test]
    fn stage_named_on_failure() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = small("");
        cfg.dataset.k = 500;
        let err = run_pipeline(&cfg, tmp.path()).unwrap_err();
        assert_eq!(err.stage(), Some(Stage::Prepare));
        assert!(err.to_string().contains("prepare"));
    }
}
