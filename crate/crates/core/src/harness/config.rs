use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use log::warn;
use num_rational::Ratio;
use sha2::{Digest, Sha256};

use crate::corpus::LabelMode;
use crate::features::CbowConfig;
use crate::models::{preset, InputKind, ModelSpec, TrainConfig};
use crate::neuralcore::OptimizerKind;

use super::{HarnessError, HarnessResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthTask {
    /// Labels follow keyword presence.
    Keyword,
    /// Labels follow keyword order relative to a negation token.
    Order,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic { task: SynthTask, n: usize, seed: u64 },
    Mimic { notes: PathBuf, diagnoses: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub source: DataSource,
    pub mode: LabelMode,
    pub k: usize,
    /// Train, validation and test fractions.
    pub split: [Ratio<u64>; 3],
    pub split_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Track {
    Tfidf40k,
    Tfidf20k,
    W2vAvg,
    WordSeq,
}

impl Track {
    pub fn name(self) -> &'static str {
        match self {
            Track::Tfidf40k => "tfidf40k",
            Track::Tfidf20k => "tfidf20k",
            Track::W2vAvg => "w2v-avg",
            Track::WordSeq => "wordseq",
        }
    }

    pub fn is_sequence(self) -> bool {
        self == Track::WordSeq
    }

    pub fn input_kind(self) -> InputKind {
        match self {
            Track::Tfidf40k | Track::Tfidf20k => InputKind::Sparse,
            Track::W2vAvg => InputKind::Dense,
            Track::WordSeq => InputKind::Sequence,
        }
    }

    pub fn uses_embeddings(self) -> bool {
        matches!(self, Track::W2vAvg | Track::WordSeq)
    }
}

impl FromStr for Track {
    type Err = HarnessError;

    fn from_str(s: &str) -> HarnessResult<Self> {
        Ok(match s {
            "tfidf40k" => Track::Tfidf40k,
            "tfidf20k" => Track::Tfidf20k,
            "w2v-avg" => Track::W2vAvg,
            "wordseq" => Track::WordSeq,
            _ => return Err(HarnessError::Config(format!("unknown feature track {s:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopwordPolicy {
    /// Drop stopwords from every token stream.
    Remove,
    /// Keep them in sequences but zero their embedding rows.
    Zero,
    Keep,
}

impl StopwordPolicy {
    fn name(self) -> &'static str {
        match self {
            StopwordPolicy::Remove => "remove",
            StopwordPolicy::Zero => "zero",
            StopwordPolicy::Keep => "keep",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingChoice {
    SelfTrained,
    Pretrained(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub track: Track,
    pub stopwords: StopwordPolicy,
    pub seq_len: usize,
    pub embedding: EmbeddingChoice,
    pub w2v: CbowConfig,
    /// Overrides for scaled-down tfidf variants.
    pub tfidf_cap: Option<usize>,
    pub tfidf_min_df: Option<u64>,
    pub tfidf_max_df: Option<Ratio<u64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarKind {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub features: FeatureConfig,
    pub model: ModelSpec,
    /// Path of an explicit model spec (JSON) used instead of a preset.
    pub model_spec_path: Option<PathBuf>,
    pub training: TrainConfig,
    pub scalar: ScalarKind,
}

fn parse<T: FromStr>(key: &str, v: &str) -> HarnessResult<T> {
    v.parse()
        .map_err(|_| HarnessError::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> HarnessResult<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(HarnessError::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

/// Decimal (`0.8`) or fraction (`4/5`) parsed to an exact ratio.
pub fn parse_ratio(key: &str, v: &str) -> HarnessResult<Ratio<u64>> {
    let bad = || HarnessError::Config(format!("{key}: cannot parse {v:?} as a fraction"));
    if let Some((a, b)) = v.split_once('/') {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if b == 0 {
            return Err(bad());
        }
        return Ok(Ratio::new(a, b));
    }
    let (int, frac) = v.split_once('.').unwrap_or((v, ""));
    if frac.len() > 18 || !frac.chars().all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let den = 10u64.pow(frac.len() as u32);
    let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
    let f: u64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
    Ok(Ratio::new(int * den + f, den))
}

fn parse_split(v: &str) -> HarnessResult<[Ratio<u64>; 3]> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    let [a, b, c] = parts.as_slice() else {
        return Err(HarnessError::Config(format!("dataset.split: expected three fractions, got {v:?}")));
    };
    let r = [parse_ratio("dataset.split", a)?, parse_ratio("dataset.split", b)?, parse_ratio("dataset.split", c)?];
    if r.iter().any(|x| *x.numer() == 0) || r[0] + r[1] + r[2] != Ratio::from_integer(1) {
        return Err(HarnessError::Config(format!("dataset.split: {v:?} must be positive and sum to 1")));
    }
    Ok(r)
}

/// Reads `key = value` lines; `#` starts a comment.
pub fn parse_key_values(text: &str) -> HarnessResult<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("line {}: expected key = value", n + 1)))?;
        if out.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(HarnessError::Config(format!("line {}: duplicate key {}", n + 1, k.trim())));
        }
    }
    Ok(out)
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> HarnessResult<Self> {
        Self::from_map(parse_key_values(text)?)
    }

    pub fn from_map(mut kv: BTreeMap<String, String>) -> HarnessResult<Self> {
        let mut take = |k: &str| kv.remove(k);

        let source = match take("dataset.source").as_deref().unwrap_or("synthetic") {
            "synthetic" => DataSource::Synthetic {
                task: match take("dataset.synthetic.task").as_deref().unwrap_or("keyword") {
                    "keyword" => SynthTask::Keyword,
                    "order" => SynthTask::Order,
                    t => return Err(HarnessError::Config(format!("unknown synthetic task {t:?}"))),
                },
                n: take("dataset.synthetic.n").map_or(Ok(400), |v| parse("dataset.synthetic.n", &v))?,
                seed: take("dataset.synthetic.seed").map_or(Ok(1), |v| parse("dataset.synthetic.seed", &v))?,
            },
            "mimic" => DataSource::Mimic {
                notes: take("dataset.notes")
                    .ok_or_else(|| HarnessError::Config("dataset.notes is required for mimic".into()))?
                    .into(),
                diagnoses: take("dataset.diagnoses")
                    .ok_or_else(|| HarnessError::Config("dataset.diagnoses is required for mimic".into()))?
                    .into(),
            },
            s => return Err(HarnessError::Config(format!("unknown dataset.source {s:?}"))),
        };
        let mode = match take("dataset.mode") {
            Some(v) => v.parse().map_err(|_| HarnessError::Config(format!("dataset.mode: {v:?}")))?,
            None => LabelMode::Code,
        };
        let dataset = DatasetConfig {
            source,
            mode,
            k: take("dataset.k").map_or(Ok(10), |v| parse("dataset.k", &v))?,
            split: match take("dataset.split") {
                Some(v) => parse_split(&v)?,
                None => [Ratio::new(1, 2), Ratio::new(1, 4), Ratio::new(1, 4)],
            },
            split_seed: take("dataset.split_seed").map_or(Ok(0), |v| parse("dataset.split_seed", &v))?,
        };

        let track: Track = take("features.track").as_deref().unwrap_or("wordseq").parse()?;
        let stopwords = match take("features.stopwords").as_deref().unwrap_or("remove") {
            "remove" => StopwordPolicy::Remove,
            "zero" => StopwordPolicy::Zero,
            "keep" => StopwordPolicy::Keep,
            s => return Err(HarnessError::Config(format!("unknown features.stopwords {s:?}"))),
        };
        let embedding = match take("features.embedding").as_deref().unwrap_or("self") {
            "self" => EmbeddingChoice::SelfTrained,
            "pretrained" => EmbeddingChoice::Pretrained(
                take("features.pretrained_path")
                    .ok_or_else(|| HarnessError::Config("features.pretrained_path is required".into()))?
                    .into(),
            ),
            s => return Err(HarnessError::Config(format!("unknown features.embedding {s:?}"))),
        };
        let d = CbowConfig::default();
        let w2v = CbowConfig {
            dim: take("features.w2v.dim").map_or(Ok(d.dim), |v| parse("features.w2v.dim", &v))?,
            window: take("features.w2v.window").map_or(Ok(d.window), |v| parse("features.w2v.window", &v))?,
            negative: take("features.w2v.negative").map_or(Ok(d.negative), |v| parse("features.w2v.negative", &v))?,
            epochs: take("features.w2v.epochs").map_or(Ok(d.epochs), |v| parse("features.w2v.epochs", &v))?,
            learning_rate: take("features.w2v.learning_rate")
                .map_or(Ok(d.learning_rate), |v| parse("features.w2v.learning_rate", &v))?,
            min_count: take("features.w2v.min_count").map_or(Ok(d.min_count), |v| parse("features.w2v.min_count", &v))?,
            seed: take("features.w2v.seed").map_or(Ok(d.seed), |v| parse("features.w2v.seed", &v))?,
        };
        let features = FeatureConfig {
            track,
            stopwords,
            seq_len: take("features.seq_len").map_or(Ok(1500), |v| parse("features.seq_len", &v))?,
            embedding,
            w2v,
            tfidf_cap: take("features.tfidf.cap").map(|v| parse("features.tfidf.cap", &v)).transpose()?,
            tfidf_min_df: take("features.tfidf.min_df").map(|v| parse("features.tfidf.min_df", &v)).transpose()?,
            tfidf_max_df: take("features.tfidf.max_df").map(|v| parse_ratio("features.tfidf.max_df", &v)).transpose()?,
        };

        let model_spec_path: Option<PathBuf> = take("model.spec").map(Into::into);
        let mut model = match &model_spec_path {
            Some(p) => serde_json::from_str::<ModelSpec>(&std::fs::read_to_string(p)?)?,
            None => preset(take("model.preset").as_deref().unwrap_or("gru-desk"))?,
        };
        if model_spec_path.is_some() {
            take("model.preset");
        }
        if let Some(v) = take("model.bidirectional") {
            model.bidirectional = parse_bool("model.bidirectional", &v)?;
        }
        let b = &mut model.baseline;
        if let Some(v) = take("model.iterations") {
            b.iterations = parse("model.iterations", &v)?;
        }
        if let Some(v) = take("model.learning_rate") {
            b.learning_rate = parse("model.learning_rate", &v)?;
        }
        if let Some(v) = take("model.n_trees") {
            b.n_trees = parse("model.n_trees", &v)?;
        }
        if let Some(v) = take("model.max_depth") {
            b.max_depth = parse("model.max_depth", &v)?;
        }
        if let Some(v) = take("model.allow_dense_blowup") {
            b.allow_dense_blowup = parse_bool("model.allow_dense_blowup", &v)?;
        }

        let mut training = TrainConfig::for_family(model.family, 0);
        if let Some(v) = take("training.max_epochs") {
            training.max_epochs = parse("training.max_epochs", &v)?;
        }
        if let Some(v) = take("training.patience") {
            training.patience = parse("training.patience", &v)?;
        }
        if let Some(v) = take("training.batch_size") {
            training.batch_size = parse("training.batch_size", &v)?;
        }
        if let Some(v) = take("training.threshold") {
            training.threshold = parse("training.threshold", &v)?;
        }
        if let Some(v) = take("training.seed") {
            training.seed = parse("training.seed", &v)?;
        }
        let lr = take("training.learning_rate").map(|v| parse::<f64>("training.learning_rate", &v)).transpose()?;
        training.optimizer = match (take("training.optimizer").as_deref(), lr) {
            (None, None) => training.optimizer,
            (None, Some(lr)) => match training.optimizer {
                OptimizerKind::Sgd { .. } => OptimizerKind::sgd(lr),
                OptimizerKind::RmsProp { .. } => OptimizerKind::rmsprop(lr),
            },
            (Some("sgd"), lr) => OptimizerKind::sgd(lr.unwrap_or(0.01)),
            (Some("rmsprop"), lr) => OptimizerKind::rmsprop(lr.unwrap_or(0.001)),
            (Some(o), _) => return Err(HarnessError::Config(format!("unknown training.optimizer {o:?}"))),
        };
        let scalar = match take("training.scalar").as_deref().unwrap_or("f32") {
            "f32" => ScalarKind::F32,
            "f64" => ScalarKind::F64,
            s => return Err(HarnessError::Config(format!("unknown training.scalar {s:?}"))),
        };
        if let Some(k) = kv.keys().next() {
            return Err(HarnessError::Config(format!("unknown key {k}")));
        }
        if features.track.is_sequence() == model.family.wants_sequences() {
            model.input = features.track.input_kind();
        }
        let cfg = ExperimentConfig {
            dataset,
            features,
            model,
            model_spec_path,
            training,
            scalar,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Rejects incompatible feature/model pairings before any work starts.
    pub fn validate(&self) -> HarnessResult<()> {
        self.model.validate()?;
        self.training.validate()?;
        self.features.w2v.validate()?;
        let fam = self.model.family;
        if self.features.track.is_sequence() != fam.wants_sequences() {
            return Err(HarnessError::Config(format!(
                "feature track {} is incompatible with model family {fam}",
                self.features.track.name()
            )));
        }
        if self.features.seq_len == 0 {
            return Err(HarnessError::Config("features.seq_len must be positive".into()));
        }
        if self.dataset.k == 0 {
            return Err(HarnessError::Config("dataset.k must be positive".into()));
        }
        if !matches!(self.dataset.k, 10 | 50) {
            warn!("dataset.k = {} differs from the published settings (10, 50)", self.dataset.k);
        }
        Ok(())
    }

    fn dataset_lines(&self) -> Vec<(String, String)> {
        let d = &self.dataset;
        let mut v = Vec::new();
        match &d.source {
            DataSource::Synthetic { task, n, seed } => {
                v.push(("dataset.source".into(), "synthetic".into()));
                v.push((
                    "dataset.synthetic.task".into(),
                    match task {
                        SynthTask::Keyword => "keyword",
                        SynthTask::Order => "order",
                    }
                    .into(),
                ));
                v.push(("dataset.synthetic.n".into(), n.to_string()));
                v.push(("dataset.synthetic.seed".into(), seed.to_string()));
            }
            DataSource::Mimic { notes, diagnoses } => {
                v.push(("dataset.source".into(), "mimic".into()));
                v.push(("dataset.notes".into(), notes.display().to_string()));
                v.push(("dataset.diagnoses".into(), diagnoses.display().to_string()));
            }
        }
        v.push(("dataset.mode".into(), d.mode.to_string()));
        v.push(("dataset.k".into(), d.k.to_string()));
        v.push((
            "dataset.split".into(),
            d.split.iter().map(|r| format!("{}/{}", r.numer(), r.denom())).collect::<Vec<_>>().join(","),
        ));
        v.push(("dataset.split_seed".into(), d.split_seed.to_string()));
        v
    }

    fn feature_lines(&self) -> Vec<(String, String)> {
        let f = &self.features;
        let mut v = vec![
            ("features.track".to_string(), f.track.name().to_string()),
            ("features.stopwords".into(), f.stopwords.name().into()),
            ("features.seq_len".into(), f.seq_len.to_string()),
        ];
        match &f.embedding {
            EmbeddingChoice::SelfTrained => v.push(("features.embedding".into(), "self".into())),
            EmbeddingChoice::Pretrained(p) => {
                v.push(("features.embedding".into(), "pretrained".into()));
                v.push(("features.pretrained_path".into(), p.display().to_string()));
            }
        }
        let w = &f.w2v;
        v.push(("features.w2v.dim".into(), w.dim.to_string()));
        v.push(("features.w2v.window".into(), w.window.to_string()));
        v.push(("features.w2v.negative".into(), w.negative.to_string()));
        v.push(("features.w2v.epochs".into(), w.epochs.to_string()));
        v.push(("features.w2v.learning_rate".into(), w.learning_rate.to_string()));
        v.push(("features.w2v.min_count".into(), w.min_count.to_string()));
        v.push(("features.w2v.seed".into(), w.seed.to_string()));
        if let Some(c) = f.tfidf_cap {
            v.push(("features.tfidf.cap".into(), c.to_string()));
        }
        if let Some(m) = f.tfidf_min_df {
            v.push(("features.tfidf.min_df".into(), m.to_string()));
        }
        if let Some(r) = f.tfidf_max_df {
            v.push(("features.tfidf.max_df".into(), format!("{}/{}", r.numer(), r.denom())));
        }
        v
    }

    fn model_lines(&self) -> Vec<(String, String)> {
        let t = &self.training;
        let (opt, lr) = match t.optimizer {
            OptimizerKind::Sgd { lr } => ("sgd", lr),
            OptimizerKind::RmsProp { lr, .. } => ("rmsprop", lr),
        };
        vec![
            (
                "model.spec_json".to_string(),
                serde_json::to_string(&self.model).expect("spec serializes"),
            ),
            ("training.max_epochs".into(), t.max_epochs.to_string()),
            ("training.patience".into(), t.patience.to_string()),
            ("training.batch_size".into(), t.batch_size.to_string()),
            ("training.optimizer".into(), opt.into()),
            ("training.learning_rate".into(), lr.to_string()),
            ("training.threshold".into(), t.threshold.to_string()),
            ("training.seed".into(), t.seed.to_string()),
            (
                "training.scalar".into(),
                match self.scalar {
                    ScalarKind::F32 => "f32",
                    ScalarKind::F64 => "f64",
                }
                .into(),
            ),
        ]
    }

    /// Fully resolved configuration, one sorted `key = value` per line.
    pub fn canonical(&self) -> String {
        let mut all: Vec<(String, String)> = self.dataset_lines();
        all.extend(self.feature_lines());
        all.extend(self.model_lines());
        all.sort();
        let mut s = String::new();
        for (k, v) in all {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn dataset_hash(&self) -> String {
        hash_lines(&self.dataset_lines())
    }

    pub fn features_hash(&self) -> String {
        let mut l = self.dataset_lines();
        l.extend(self.feature_lines());
        hash_lines(&l)
    }

    pub fn config_hash(&self) -> String {
        let mut l = self.dataset_lines();
        l.extend(self.feature_lines());
        l.extend(self.model_lines());
        hash_lines(&l)
    }
}

fn hash_lines(lines: &[(String, String)]) -> String {
    let mut sorted = lines.to_vec();
    sorted.sort();
    let mut h = Sha256::new();
    for (k, v) in sorted {
        h.update(k.as_bytes());
        h.update(b"=");
        h.update(v.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_hash_stability() {
        let a = ExperimentConfig::from_text("").unwrap();
        let b = ExperimentConfig::from_text("# nothing\nfeatures.track = wordseq\n").unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
        assert_eq!(a.canonical(), b.canonical());
        let c = ExperimentConfig::from_text("training.seed = 3").unwrap();
        assert_ne!(a.config_hash(), c.config_hash());
        assert_eq!(a.features_hash(), c.features_hash());
        assert_eq!(a.dataset_hash(), c.dataset_hash());
    }

    #[test]
    fn incompatible_pairing_rejected() {
        let e = ExperimentConfig::from_text("features.track = tfidf20k\nmodel.preset = lstm-best").unwrap_err();
        assert!(e.to_string().contains("incompatible"));
        assert!(ExperimentConfig::from_text("features.track = tfidf20k\nmodel.preset = fnn-desk").is_ok());
    }

    #[test]
    fn unknown_keys_and_values() {
        assert!(ExperimentConfig::from_text("dataset.kk = 3").is_err());
        assert!(ExperimentConfig::from_text("features.track = bow").is_err());
        assert!(ExperimentConfig::from_text("dataset.k = 10\ndataset.k = 50").is_err());
    }

    #[test]
    fn ratios() {
        assert_eq!(parse_ratio("x", "0.8").unwrap(), Ratio::new(4, 5));
        assert_eq!(parse_ratio("x", "4/5").unwrap(), Ratio::new(4, 5));
        assert_eq!(parse_ratio("x", "1").unwrap(), Ratio::new(1, 1));
        assert!(parse_ratio("x", "a").is_err());
    }

    #[test]
    fn optimizer_override() {
        let c = ExperimentConfig::from_text("training.learning_rate = 0.01").unwrap();
        assert_eq!(c.training.optimizer, OptimizerKind::rmsprop(0.01));
        let c = ExperimentConfig::from_text("training.optimizer = sgd\nmodel.preset = gru-desk").unwrap();
        assert_eq!(c.training.optimizer, OptimizerKind::sgd(0.01));
    }
}
