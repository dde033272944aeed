use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::neuralcore::Tensor;
use crate::scalar::sigmoid;
use crate::textproc::Vocabulary;

use super::embedding::{EmbeddingMatrix, EmbeddingSource};
use super::{FeatureError, FeatureResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbowConfig {
    pub dim: usize,
    /// Context radius: up to `window` tokens on each side.
    pub window: usize,
    pub negative: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub min_count: u64,
    pub seed: u64,
}

impl Default for CbowConfig {
    fn default() -> Self {
        CbowConfig {
            dim: 100,
            window: 2,
            negative: 5,
            epochs: 5,
            learning_rate: 0.05,
            min_count: 1,
            seed: 0,
        }
    }
}

impl CbowConfig {
    pub fn validate(&self) -> FeatureResult<()> {
        if self.dim == 0 || self.window == 0 || self.negative == 0 || self.epochs == 0 || self.min_count == 0 {
            return Err(FeatureError::Config(
                "cbow dim, window, negative, epochs and min_count must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(FeatureError::Config("cbow learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbowReport {
    /// Mean negative-sampling loss per trained position, one entry per epoch.
    pub epoch_losses: Vec<f64>,
    pub trained_tokens: usize,
    pub positions_per_epoch: usize,
}

/// Positions `[pos-window, pos+window] \ {pos}` clipped to the sentence.
pub fn context_window(len: usize, pos: usize, window: usize) -> Vec<usize> {
    let lo = pos.saturating_sub(window);
    let hi = (pos + window + 1).min(len);
    (lo..hi).filter(|&i| i != pos).collect()
}

/// True when the moving average of `losses` (width `width`) never rises by
/// more than `tol` relative to its predecessor.
pub fn loss_trend_ok(losses: &[f64], width: usize, tol: f64) -> bool {
    let width = width.max(1);
    if losses.len() <= width {
        return losses.windows(2).all(|w| w[1] <= w[0] * (1.0 + tol));
    }
    let avg: Vec<f64> = losses.windows(width).map(|w| w.iter().sum::<f64>() / width as f64).collect();
    avg.windows(2).all(|w| w[1] <= w[0] * (1.0 + tol))
}

/// CBOW with negative sampling. Tokens outside `vocab` are skipped, tokens
/// seen fewer than `min_count` times keep zero rows. Single-threaded and
/// deterministic for a given seed.
pub fn train_word2vec_cbow<D, S>(
    docs: &[D],
    vocab: &Vocabulary,
    cfg: &CbowConfig,
) -> FeatureResult<(EmbeddingMatrix<f64>, CbowReport)>
where
    D: AsRef<[S]>,
    S: AsRef<str>,
{
    cfg.validate()?;
    let v = vocab.len();
    let mut counts = vec![0u64; v + 1];
    for d in docs {
        for t in d.as_ref() {
            if let Some(i) = vocab.index(t.as_ref()) {
                counts[i] += 1;
            }
        }
    }
    let keep: Vec<bool> = counts.iter().enumerate().map(|(i, &c)| i > 0 && c >= cfg.min_count).collect();
    let sentences: Vec<Vec<usize>> = docs
        .iter()
        .map(|d| {
            d.as_ref()
                .iter()
                .filter_map(|t| vocab.index(t.as_ref()))
                .filter(|&i| keep[i])
                .collect::<Vec<_>>()
        })
        .filter(|s| s.len() >= 2)
        .collect();
    let positions: usize = sentences.iter().map(Vec::len).sum();
    if positions == 0 {
        return Err(FeatureError::EmptyVocabulary);
    }
    let noise_weights: Vec<f64> = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| if keep[i] { (c as f64).powf(0.75) } else { 0.0 })
        .collect();
    let noise = WeightedIndex::new(&noise_weights).map_err(|_| FeatureError::EmptyVocabulary)?;

    let k = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut syn0 = vec![0.0f64; (v + 1) * k];
    for i in 1..=v {
        if keep[i] {
            for x in &mut syn0[i * k..(i + 1) * k] {
                *x = (rng.random::<f64>() - 0.5) / k as f64;
            }
        }
    }
    let mut syn1 = vec![0.0f64; (v + 1) * k];
    let mut h = vec![0.0f64; k];
    let mut neu1e = vec![0.0f64; k];
    let total = (positions * cfg.epochs) as f64;
    let mut seen = 0usize;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        let mut loss = 0.0;
        let mut trained = 0usize;
        for sent in &sentences {
            for pos in 0..sent.len() {
                let lr = (cfg.learning_rate * (1.0 - seen as f64 / total)).max(cfg.learning_rate * 1e-4);
                seen += 1;
                let ctx = context_window(sent.len(), pos, cfg.window);
                h.fill(0.0);
                for &c in &ctx {
                    let row = &syn0[sent[c] * k..(sent[c] + 1) * k];
                    h.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                let inv = 1.0 / ctx.len() as f64;
                h.iter_mut().for_each(|a| *a *= inv);
                neu1e.fill(0.0);
                let target = sent[pos];
                for d in 0..=cfg.negative {
                    let (word, label) = if d == 0 {
                        (target, 1.0)
                    } else {
                        let w = noise.sample(&mut rng);
                        if w == target {
                            continue;
                        }
                        (w, 0.0)
                    };
                    let out = &mut syn1[word * k..(word + 1) * k];
                    let f: f64 = h.iter().zip(out.iter()).map(|(a, b)| a * b).sum();
                    let p = sigmoid(f);
                    loss -= if label == 1.0 { p.max(1e-12).ln() } else { (1.0 - p).max(1e-12).ln() };
                    let g = (label - p) * lr;
                    for j in 0..k {
                        neu1e[j] += g * out[j];
                        out[j] += g * h[j];
                    }
                }
                for &c in &ctx {
                    let row = &mut syn0[sent[c] * k..(sent[c] + 1) * k];
                    row.iter_mut().zip(&neu1e).for_each(|(a, b)| *a += b);
                }
                trained += 1;
            }
        }
        epoch_losses.push(loss / trained as f64);
    }

    if syn0.iter().any(|x| !x.is_finite()) {
        return Err(FeatureError::Config("cbow training diverged".into()));
    }
    let vectors = Tensor::from_vec(&[v + 1, k], syn0).expect("shape matches buffer");
    Ok((
        EmbeddingMatrix {
            vectors,
            source: EmbeddingSource::SelfTrained,
        },
        CbowReport {
            epoch_losses,
            trained_tokens: keep.iter().filter(|&&b| b).count(),
            positions_per_epoch: positions,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textproc::{build_vocabulary, tokenize, VocabOptions};

    #[test]
    fn window_definition() {
        assert_eq!(context_window(3, 1, 2), [0, 2]);
        assert_eq!(context_window(5, 0, 2), [1, 2]);
        assert_eq!(context_window(6, 3, 1), [2, 4]);
    }

    #[test]
    fn trend_tolerance() {
        assert!(loss_trend_ok(&[3.0, 2.0, 2.05, 1.5], 1, 0.05));
        assert!(!loss_trend_ok(&[3.0, 2.0, 2.5], 1, 0.05));
    }

    fn corpus() -> Vec<Vec<String>> {
        (0..40)
            .map(|i| tokenize(if i % 2 == 0 { "alpha beta gamma delta alpha gamma" } else { "omega sigma tau rho tau omega" }))
            .collect()
    }

    #[test]
    fn shape_and_determinism() {
        let docs = corpus();
        let vocab = build_vocabulary(&docs, &VocabOptions::default()).unwrap();
        let cfg = CbowConfig {
            dim: 8,
            epochs: 2,
            ..CbowConfig::default()
        };
        let (a, ra) = train_word2vec_cbow(&docs, &vocab, &cfg).unwrap();
        let (b, _) = train_word2vec_cbow(&docs, &vocab, &cfg).unwrap();
        assert_eq!(a.vectors.shape(), [vocab.len() + 1, 8]);
        assert!(a.row(0).iter().all(|&x| x == 0.0));
        assert_eq!(a.vectors, b.vectors);
        assert_eq!(ra.epoch_losses.len(), 2);
        a.check().unwrap();
    }

    #[test]
    fn min_count_filters_everything() {
        let docs = corpus();
        let vocab = build_vocabulary(&docs, &VocabOptions::default()).unwrap();
        let cfg = CbowConfig {
            min_count: 1000,
            ..CbowConfig::default()
        };
        assert!(matches!(train_word2vec_cbow(&docs, &vocab, &cfg), Err(FeatureError::EmptyVocabulary)));
    }

    #[test]
    fn rejects_zero_window() {
        let cfg = CbowConfig {
            window: 0,
            ..CbowConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
