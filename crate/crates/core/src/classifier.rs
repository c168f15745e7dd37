//! Trained models behind a common per-instance probability interface.

use crate::convnet::ConvModel;
use crate::corpus::{instances, Tweet};
use crate::error::Result;
use crate::featurize::{index_sequence, vectorize, Vocabulary};
use crate::linmodel::LinearModel;

pub trait Classifier {
    /// Probability of the positive class for one normalized token sequence.
    fn probability(&self, tokens: &[String]) -> Result<f64>;

    /// Maximum probability over the tweet's (entity, tweet) instances; a tweet
    /// without entities is scored once on its whole text.
    fn tweet_probability(&self, tweet: &Tweet) -> Result<f64> {
        let mut best = f64::NEG_INFINITY;
        for inst in instances(tweet)? {
            best = best.max(self.probability(&inst.tokens)?);
        }
        Ok(best)
    }
}

pub struct LinearClassifier {
    pub model: LinearModel,
    pub vocab: Vocabulary,
}

impl Classifier for LinearClassifier {
    fn probability(&self, tokens: &[String]) -> Result<f64> {
        self.model.predict(&vectorize(tokens, &self.vocab))
    }
}

pub struct ConvClassifier {
    pub model: ConvModel,
    pub vocab: Vocabulary,
    pub max_len: usize,
}

impl Classifier for ConvClassifier {
    fn probability(&self, tokens: &[String]) -> Result<f64> {
        let len = self.max_len.max(self.model.arch.max_width());
        self.model.predict(&index_sequence(tokens, &self.vocab, len))
    }
}
