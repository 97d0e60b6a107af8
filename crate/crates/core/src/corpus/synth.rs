//! Synthetic translation-quality corpus with a known labelling function.
//!
//! A "translation" is its source with some tokens corrupted: a corrupted
//! token is either replaced (two thirds of events) or dropped (one third).
//! Sources draw from the head of the language's word band; replacements come
//! from a reserved tail that sources never use, so a substitute can never
//! coincide with a source word. The realised corruption
//! rate `ρ` sets the label, `da = clamp(100·(1−ρ) + ε, 0, 100)` with
//! `ε ~ N(0, noise_std)`, so the noiseless label can be recounted from the
//! pair alone.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{SentencePair, Splits};
use crate::error::{QeError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub lang: String,
    /// First word id of this language's vocabulary band.
    pub band_start: usize,
    pub band_size: usize,
    /// Fraction of the band reserved for substitute words.
    pub substitute_share: f64,
    pub min_len: usize,
    pub max_len: usize,
    /// Per-pair target corruption rate is drawn uniformly from this range.
    pub min_corruption: f64,
    pub max_corruption: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_train: 5000,
            n_dev: 1000,
            n_test: 1000,
            lang: "s0".into(),
            band_start: 0,
            band_size: 200,
            substitute_share: 0.25,
            min_len: 4,
            max_len: 12,
            min_corruption: 0.0,
            max_corruption: 0.8,
            noise_std: 2.0,
            seed: 7,
        }
    }
}

impl SynthSpec {
    /// `n` languages with disjoint vocabulary bands and distinct seeds.
    pub fn languages(&self, n: usize) -> Vec<SynthSpec> {
        (0..n)
            .map(|i| SynthSpec {
                lang: format!("s{i}"),
                band_start: self.band_start + i * self.band_size,
                seed: self.seed.wrapping_add(1_000_003 * i as u64),
                ..self.clone()
            })
            .collect()
    }

    pub fn word(&self, offset: usize) -> String {
        format!("w{}", self.band_start + offset)
    }

    /// Words `0..n` of the band may appear in sources, `n..band_size` only as substitutes.
    pub fn source_words(&self) -> usize {
        let reserved = (self.band_size as f64 * self.substitute_share).round() as usize;
        self.band_size - reserved.clamp(1, self.band_size)
    }

    pub fn validate(&self) -> Result<()> {
        if self.band_size == 0 {
            return Err(QeError::Config("synthetic vocabulary band is empty".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(QeError::Config(format!(
                "invalid sentence length range {}..={}",
                self.min_len, self.max_len
            )));
        }
        if !(self.substitute_share > 0.0 && self.substitute_share < 1.0) || self.source_words() == 0 {
            return Err(QeError::Config(format!(
                "band of {} words cannot be split into source and substitute words at share {}",
                self.band_size, self.substitute_share
            )));
        }
        let ok = |r: f64| (0.0..=1.0).contains(&r);
        if !ok(self.min_corruption) || !ok(self.max_corruption) || self.min_corruption > self.max_corruption {
            return Err(QeError::Config("corruption range must lie within [0, 1]".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(QeError::Config("noise_std must be non-negative".into()));
        }
        Ok(())
    }
}

/// Label for a sentence of `len` tokens of which `corrupted` were corrupted.
pub fn da_from_corruption(len: usize, corrupted: usize, noise: f64) -> f64 {
    let rho = corrupted as f64 / len as f64;
    (100.0 * (1.0 - rho) + noise).clamp(0.0, 100.0)
}

fn sample_pair(spec: &SynthSpec, rng: &mut ChaCha8Rng, noise: Option<&Normal<f64>>) -> SentencePair {
    let len = rng.random_range(spec.min_len..=spec.max_len);
    let n_src = spec.source_words();
    let src: Vec<usize> = (0..len).map(|_| rng.random_range(0..n_src)).collect();
    let target = if spec.max_corruption > spec.min_corruption {
        rng.random_range(spec.min_corruption..=spec.max_corruption)
    } else {
        spec.min_corruption
    };
    let mut mt = Vec::with_capacity(len);
    let mut corrupted = 0;
    for &tok in &src {
        if rng.random::<f64>() < target {
            corrupted += 1;
            if rng.random::<f64>() < 2.0 / 3.0 {
                mt.push(rng.random_range(n_src..spec.band_size));
            }
        } else {
            mt.push(tok);
        }
    }
    let eps = noise.map_or(0.0, |n| n.sample(rng));
    let render = |ids: &[usize]| ids.iter().map(|&i| spec.word(i)).collect::<Vec<_>>().join(" ");
    SentencePair::new(render(&src), render(&mt), spec.lang.clone(), da_from_corruption(len, corrupted, eps))
}

/// Draws `n_train + n_dev + n_test` distinct pairs and partitions them with
/// a seeded shuffle, so no (source, translation) pair spans two splits.
pub fn synthesize_corpus(spec: &SynthSpec) -> Result<Splits> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = (spec.noise_std > 0.0).then(|| Normal::new(0.0, spec.noise_std).expect("valid std"));
    let total = spec.n_train + spec.n_dev + spec.n_test;
    let mut seen = HashSet::with_capacity(total);
    let mut pairs = Vec::with_capacity(total);
    let mut attempts = 0usize;
    while pairs.len() < total {
        attempts += 1;
        if attempts > 100 * total + 1000 {
            return Err(QeError::Config(format!(
                "could only draw {} distinct pairs out of {total}",
                pairs.len()
            )));
        }
        let p = sample_pair(spec, &mut rng, noise.as_ref());
        if seen.insert((p.src.clone(), p.mt.clone())) {
            pairs.push(p);
        }
    }
    pairs.shuffle(&mut rng);
    let test = pairs.split_off(spec.n_train + spec.n_dev);
    let dev = pairs.split_off(spec.n_train);
    Ok(Splits {
        train: pairs,
        dev,
        test,
    })
}

/// Concatenates per-language splits and shuffles each split with `seed`.
/// Language tags are kept so results can still be broken down per direction.
pub fn concat_multilingual(per_lang: Vec<Splits>, seed: u64) -> Result<Splits> {
    if per_lang.is_empty() {
        return Err(QeError::Config("no language splits to concatenate".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Splits::default();
    for s in per_lang {
        out.train.extend(s.train);
        out.dev.extend(s.dev);
        out.test.extend(s.test);
    }
    out.train.shuffle(&mut rng);
    out.dev.shuffle(&mut rng);
    out.test.shuffle(&mut rng);
    Ok(out)
}
