use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::neuralcore::{Activation, CellKind, OptimizerKind};

use super::{ModelError, ModelResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Logreg,
    Rforest,
    Fnn,
    Cnn,
    RnnSimple,
    Lstm,
    Gru,
}

impl ModelFamily {
    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::Logreg => "logreg",
            ModelFamily::Rforest => "rforest",
            ModelFamily::Fnn => "fnn",
            ModelFamily::Cnn => "cnn",
            ModelFamily::RnnSimple => "rnn_simple",
            ModelFamily::Lstm => "lstm",
            ModelFamily::Gru => "gru",
        }
    }

    pub fn is_neural(self) -> bool {
        !matches!(self, ModelFamily::Logreg | ModelFamily::Rforest)
    }

    pub fn is_recurrent(self) -> bool {
        matches!(self, ModelFamily::RnnSimple | ModelFamily::Lstm | ModelFamily::Gru)
    }

    pub fn wants_sequences(self) -> bool {
        self.is_recurrent() || self == ModelFamily::Cnn
    }

    pub fn accepts(self, input: InputKind) -> bool {
        match input {
            InputKind::Sequence => self.wants_sequences(),
            InputKind::Sparse | InputKind::Dense => !self.wants_sequences(),
        }
    }

    pub fn cell(self) -> Option<CellKind> {
        match self {
            ModelFamily::RnnSimple => Some(CellKind::Simple),
            ModelFamily::Lstm => Some(CellKind::Lstm),
            ModelFamily::Gru => Some(CellKind::Gru),
            _ => None,
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelFamily {
    type Err = ModelError;

    fn from_str(s: &str) -> ModelResult<Self> {
        Ok(match s {
            "logreg" => ModelFamily::Logreg,
            "rforest" => ModelFamily::Rforest,
            "fnn" => ModelFamily::Fnn,
            "cnn" => ModelFamily::Cnn,
            "rnn_simple" | "rnn" => ModelFamily::RnnSimple,
            "lstm" => ModelFamily::Lstm,
            "gru" => ModelFamily::Gru,
            _ => return Err(ModelError::Spec(format!("unknown model family {s:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    Sparse,
    Dense,
    Sequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { units: usize, activation: Activation },
    Conv { filters: usize, width: usize, activation: Activation },
    MaxPool { size: usize },
    GlobalMaxPool,
    Recurrent { units: usize, return_sequences: bool },
    Dropout { rate: f64 },
}

/// Hyperparameters of the one-vs-rest baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineParams {
    pub iterations: usize,
    pub learning_rate: f64,
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    /// Lets the forest densify sparse input.
    pub allow_dense_blowup: bool,
}

impl Default for BaselineParams {
    fn default() -> Self {
        BaselineParams {
            iterations: 100,
            learning_rate: 1.0,
            n_trees: 50,
            max_depth: 10,
            min_samples_split: 2,
            allow_dense_blowup: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub family: ModelFamily,
    /// Hidden layers; the sigmoid output layer with `k` units is implicit.
    pub layers: Vec<LayerSpec>,
    pub bidirectional: bool,
    pub input: InputKind,
    pub baseline: BaselineParams,
}

const PRESETS: &[&str] = &[
    "logreg",
    "rforest",
    "fnn-best",
    "cnn-best",
    "rnn-best",
    "lstm-best",
    "gru-best",
    "fnn-desk",
    "cnn-desk",
    "rnn-desk",
    "lstm-desk",
    "gru-desk",
];

pub fn preset_names() -> &'static [&'static str] {
    PRESETS
}

fn dense(units: usize) -> LayerSpec {
    LayerSpec::Dense {
        units,
        activation: Activation::Relu,
    }
}

fn conv(filters: usize, width: usize) -> LayerSpec {
    LayerSpec::Conv {
        filters,
        width,
        activation: Activation::Relu,
    }
}

fn recurrent_stack(first: usize, second: usize, rate: f64) -> Vec<LayerSpec> {
    vec![
        LayerSpec::Recurrent {
            units: first,
            return_sequences: true,
        },
        LayerSpec::Dropout { rate },
        LayerSpec::Recurrent {
            units: second,
            return_sequences: false,
        },
        LayerSpec::Dropout { rate },
    ]
}

/// Named architectures. `*-best` are the published best configurations,
/// `*-desk` the same shapes at widths that train on one core.
pub fn preset(name: &str) -> ModelResult<ModelSpec> {
    let (family, input, layers) = match name {
        "logreg" => (ModelFamily::Logreg, InputKind::Dense, vec![]),
        "rforest" => (ModelFamily::Rforest, InputKind::Dense, vec![]),
        "fnn-best" => (ModelFamily::Fnn, InputKind::Sparse, vec![dense(5000), dense(500), dense(100)]),
        "fnn-desk" => (ModelFamily::Fnn, InputKind::Sparse, vec![dense(512), dense(128), dense(64)]),
        "cnn-best" => (
            ModelFamily::Cnn,
            InputKind::Sequence,
            vec![
                conv(128, 5),
                LayerSpec::MaxPool { size: 5 },
                conv(128, 5),
                LayerSpec::MaxPool { size: 5 },
                conv(128, 5),
                LayerSpec::MaxPool { size: 35 },
                dense(128),
            ],
        ),
        "cnn-desk" => (
            ModelFamily::Cnn,
            InputKind::Sequence,
            vec![
                conv(32, 5),
                LayerSpec::MaxPool { size: 5 },
                conv(32, 5),
                LayerSpec::GlobalMaxPool,
                dense(32),
            ],
        ),
        "rnn-best" => (ModelFamily::RnnSimple, InputKind::Sequence, recurrent_stack(256, 64, 0.5)),
        "lstm-best" => (ModelFamily::Lstm, InputKind::Sequence, recurrent_stack(256, 64, 0.5)),
        "gru-best" => (ModelFamily::Gru, InputKind::Sequence, recurrent_stack(256, 64, 0.5)),
        "rnn-desk" => (ModelFamily::RnnSimple, InputKind::Sequence, recurrent_stack(32, 16, 0.1)),
        "lstm-desk" => (ModelFamily::Lstm, InputKind::Sequence, recurrent_stack(32, 16, 0.1)),
        "gru-desk" => (ModelFamily::Gru, InputKind::Sequence, recurrent_stack(32, 16, 0.1)),
        _ => return Err(ModelError::Spec(format!("unknown preset {name:?}"))),
    };
    Ok(ModelSpec {
        name: name.to_string(),
        family,
        layers,
        bidirectional: false,
        input,
        baseline: BaselineParams::default(),
    })
}

impl ModelSpec {
    pub fn validate(&self) -> ModelResult<()> {
        if !self.family.accepts(self.input) && !(self.family == ModelFamily::Rforest && self.input == InputKind::Sparse) {
            return Err(ModelError::Spec(format!(
                "{} cannot consume {:?} input",
                self.family, self.input
            )));
        }
        if self.bidirectional && !self.family.is_recurrent() {
            return Err(ModelError::Spec("bidirectional applies to recurrent families only".into()));
        }
        if !self.family.is_neural() {
            if !self.layers.is_empty() {
                return Err(ModelError::Spec(format!("{} takes no layer plan", self.family)));
            }
            let b = &self.baseline;
            if b.n_trees == 0 || b.max_depth == 0 || !(b.learning_rate > 0.0) {
                return Err(ModelError::Spec("baseline parameters must be positive".into()));
            }
            return Ok(());
        }
        let mut sequential = self.input == InputKind::Sequence;
        for (i, l) in self.layers.iter().enumerate() {
            let ok = match *l {
                LayerSpec::Dense { units, .. } => {
                    sequential = false;
                    units > 0
                }
                LayerSpec::Conv { filters, width, .. } => sequential && filters > 0 && width > 0,
                LayerSpec::MaxPool { size } => sequential && size > 0,
                LayerSpec::GlobalMaxPool => {
                    let s = sequential;
                    sequential = false;
                    s
                }
                LayerSpec::Recurrent {
                    units,
                    return_sequences,
                } => {
                    let s = sequential && units > 0 && self.family.is_recurrent();
                    sequential = return_sequences;
                    s
                }
                LayerSpec::Dropout { rate } => (0.0..1.0).contains(&rate),
            };
            if !ok {
                return Err(ModelError::Spec(format!("layer {i} ({l:?}) is invalid at that position")));
            }
        }
        if self.family.is_recurrent() && sequential {
            return Err(ModelError::Spec("last recurrent layer must return only the last step".into()));
        }
        Ok(())
    }
}

/// Training-loop settings for the neural families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub threshold: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// 500 epochs, patience 10, RMSprop 0.001.
    pub fn cnn_regime(seed: u64) -> Self {
        TrainConfig {
            max_epochs: 500,
            patience: 10,
            batch_size: 32,
            optimizer: OptimizerKind::rmsprop(0.001),
            threshold: 0.5,
            seed,
        }
    }

    /// 200 epochs, patience 5, RMSprop 0.001.
    pub fn rnn_regime(seed: u64) -> Self {
        TrainConfig {
            max_epochs: 200,
            patience: 5,
            ..Self::cnn_regime(seed)
        }
    }

    /// Same stopping rule as the CNN regime, plain SGD at 0.01.
    pub fn fnn_regime(seed: u64) -> Self {
        TrainConfig {
            optimizer: OptimizerKind::sgd(0.01),
            ..Self::cnn_regime(seed)
        }
    }

    pub fn for_family(family: ModelFamily, seed: u64) -> Self {
        match family {
            f if f.is_recurrent() => Self::rnn_regime(seed),
            ModelFamily::Cnn => Self::cnn_regime(seed),
            _ => Self::fnn_regime(seed),
        }
    }

    pub fn validate(&self) -> ModelResult<()> {
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(ModelError::Spec("max_epochs and batch_size must be positive".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(ModelError::Spec(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        self.optimizer.validate()?;
        Ok(())
    }
}
