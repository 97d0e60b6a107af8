use serde::{Deserialize, Serialize};

/// One source sentence, its machine translation and the human quality label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentencePair {
    pub src: String,
    pub mt: String,
    pub lang_pair: String,
    /// Mean direct-assessment score on the 0–100 scale.
    pub da_mean: f64,
    /// `da_mean` standardised with the training statistics of `lang_pair`.
    pub da_z: f64,
}

impl SentencePair {
    pub fn new(src: impl Into<String>, mt: impl Into<String>, lang: impl Into<String>, da_mean: f64) -> Self {
        Self {
            src: src.into(),
            mt: mt.into(),
            lang_pair: lang.into(),
            da_mean,
            da_z: 0.0,
        }
    }
}

/// Train / dev / test partition of one corpus.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<SentencePair>,
    pub dev: Vec<SentencePair>,
    pub test: Vec<SentencePair>,
}

impl Splits {
    pub fn all(&self) -> impl Iterator<Item = &SentencePair> {
        self.train.iter().chain(&self.dev).chain(&self.test)
    }

    pub fn all_mut(&mut self) -> impl Iterator<Item = &mut SentencePair> {
        self.train
            .iter_mut()
            .chain(self.dev.iter_mut())
            .chain(self.test.iter_mut())
    }

    /// Language tags present in the training split, sorted.
    pub fn languages(&self) -> Vec<String> {
        let mut langs: Vec<String> = self.train.iter().map(|p| p.lang_pair.clone()).collect();
        langs.sort();
        langs.dedup();
        langs
    }

    /// The pairs of one language direction, in their original order.
    pub fn filter_lang(&self, lang: &str) -> Splits {
        let pick = |v: &[SentencePair]| v.iter().filter(|p| p.lang_pair == lang).cloned().collect();
        Splits {
            train: pick(&self.train),
            dev: pick(&self.dev),
            test: pick(&self.test),
        }
    }
}
