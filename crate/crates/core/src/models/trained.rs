use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::features::{EmbeddingMatrix, EmbeddingSource};
use crate::metrics::BitMatrix;
use crate::neuralcore::{read_tensor, write_tensor, Tensor};
use crate::scalar::Scalar;

use super::data::{Features, InputShape};
use super::forest::{ForestOvr, RandomForest};
use super::linear::{LogisticRegression, LogregOvr};
use super::network::Network;
use super::spec::{ModelFamily, ModelSpec};
use super::train::EpochRecord;
use super::{ModelError, ModelResult};

pub enum ModelBody<F> {
    Logreg(LogregOvr),
    Forest(ForestOvr),
    Network(Network<F>),
}

pub struct TrainedModel<F> {
    pub spec: ModelSpec,
    pub k: usize,
    pub input: InputShape,
    pub history: Vec<EpochRecord>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    /// Label columns that were constant in training.
    pub degenerate_labels: Vec<usize>,
    pub body: ModelBody<F>,
}

/// `bit = 1` iff `p ≥ threshold`.
pub fn predict<F: Scalar>(probs: &Tensor<F>, threshold: f64) -> BitMatrix {
    BitMatrix::threshold(probs, threshold)
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    scalar: String,
    spec: ModelSpec,
    k: usize,
    input: InputShape,
    history: Vec<EpochRecord>,
    stopped_epoch: usize,
    best_epoch: usize,
    degenerate_labels: Vec<usize>,
    embedding_source: Option<EmbeddingSource>,
}

fn label_file(dir: &Path, j: usize) -> std::path::PathBuf {
    dir.join("labels").join(format!("{j:04}.json"))
}

impl<F: Scalar> TrainedModel<F> {
    /// `[n × k]` probabilities.
    pub fn predict_proba(&mut self, x: &Features<F>) -> ModelResult<Tensor<F>> {
        let p = match &mut self.body {
            ModelBody::Logreg(m) => m.predict_proba(x)?,
            ModelBody::Forest(m) => m.predict_proba(x, self.spec.baseline.allow_dense_blowup)?,
            ModelBody::Network(n) => n.predict_proba(x, 64)?,
        };
        if p.row_len() != self.k && x.len() > 0 {
            return Err(ModelError::Shape("model output width differs from k".into()));
        }
        Ok(p)
    }

    pub fn predict(&mut self, x: &Features<F>, threshold: f64) -> ModelResult<BitMatrix> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(ModelError::Spec(format!("threshold {threshold} outside (0, 1)")));
        }
        Ok(predict(&self.predict_proba(x)?, threshold))
    }

    pub fn sub_model_count(&self) -> usize {
        match &self.body {
            ModelBody::Logreg(m) => m.models.len(),
            ModelBody::Forest(m) => m.forests.len(),
            ModelBody::Network(_) => 1,
        }
    }

    /// Writes `model.json` plus either `labels/NNNN.json` (one-vs-rest
    /// families) or `params.bin`/`embedding.bin` (networks).
    pub fn save(&self, dir: &Path) -> ModelResult<()> {
        fs::create_dir_all(dir)?;
        let embedding_source = match &self.body {
            ModelBody::Network(n) => n.embedding().map(|e| e.source),
            _ => None,
        };
        let manifest = Manifest {
            scalar: F::NAME.to_string(),
            spec: self.spec.clone(),
            k: self.k,
            input: self.input,
            history: self.history.clone(),
            stopped_epoch: self.stopped_epoch,
            best_epoch: self.best_epoch,
            degenerate_labels: self.degenerate_labels.clone(),
            embedding_source,
        };
        fs::write(dir.join("model.json"), serde_json::to_string_pretty(&manifest)?)?;
        match &self.body {
            ModelBody::Logreg(m) => {
                fs::create_dir_all(dir.join("labels"))?;
                for (j, sub) in m.models.iter().enumerate() {
                    fs::write(label_file(dir, j), serde_json::to_string(sub)?)?;
                }
            }
            ModelBody::Forest(m) => {
                fs::create_dir_all(dir.join("labels"))?;
                for (j, sub) in m.forests.iter().enumerate() {
                    fs::write(label_file(dir, j), serde_json::to_string(sub)?)?;
                }
            }
            ModelBody::Network(n) => {
                let mut w = BufWriter::new(File::create(dir.join("params.bin"))?);
                n.write_params(&mut w)?;
                w.flush()?;
                if let Some(e) = n.embedding() {
                    let mut w = BufWriter::new(File::create(dir.join("embedding.bin"))?);
                    write_tensor(&mut w, &e.vectors)?;
                    w.flush()?;
                }
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> ModelResult<Self> {
        let m: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("model.json"))?)?;
        let body = match m.spec.family {
            ModelFamily::Logreg => {
                let models = (0..m.k)
                    .map(|j| Ok(serde_json::from_str::<LogisticRegression>(&fs::read_to_string(label_file(dir, j))?)?))
                    .collect::<ModelResult<_>>()?;
                ModelBody::Logreg(LogregOvr { models })
            }
            ModelFamily::Rforest => {
                let forests = (0..m.k)
                    .map(|j| Ok(serde_json::from_str::<RandomForest>(&fs::read_to_string(label_file(dir, j))?)?))
                    .collect::<ModelResult<_>>()?;
                ModelBody::Forest(ForestOvr { forests })
            }
            _ => {
                let embedding = match m.embedding_source {
                    Some(source) => {
                        let mut r = BufReader::new(File::open(dir.join("embedding.bin"))?);
                        Some(EmbeddingMatrix {
                            vectors: read_tensor::<F, _>(&mut r)?,
                            source,
                        })
                    }
                    None => None,
                };
                let mut net = Network::new(&m.spec, m.input, m.k, embedding, 0)?;
                let mut r = BufReader::new(File::open(dir.join("params.bin"))?);
                net.read_params(&mut r)?;
                ModelBody::Network(net)
            }
        };
        Ok(TrainedModel {
            spec: m.spec,
            k: m.k,
            input: m.input,
            history: m.history,
            stopped_epoch: m.stopped_epoch,
            best_epoch: m.best_epoch,
            degenerate_labels: m.degenerate_labels,
            body,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thresholding() {
        let p = Tensor::<f64>::from_f64(&[1, 3], &[0.6, 0.4, 0.5]).unwrap();
        assert_eq!(predict(&p, 0.5).row(0), [true, false, true]);
        assert_eq!(predict(&p, 0.99).row(0), [false, false, false]);
    }
}
