use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::SentencePair;
use crate::error::{QeError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LangStats {
    pub mean: f64,
    pub std: f64,
}

/// Per-language mean and (population) standard deviation of training DA scores.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub per_lang: BTreeMap<String, LangStats>,
}

impl NormStats {
    pub fn get(&self, lang: &str) -> Result<LangStats> {
        self.per_lang
            .get(lang)
            .copied()
            .ok_or_else(|| QeError::UnknownLanguage(lang.to_string()))
    }

    pub fn fit(pairs: &[SentencePair]) -> Result<Self> {
        let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for p in pairs {
            groups.entry(p.lang_pair.as_str()).or_default().push(p.da_mean);
        }
        if groups.is_empty() {
            return Err(QeError::Degenerate("no training pairs to normalise".into()));
        }
        let mut per_lang = BTreeMap::new();
        for (lang, scores) in groups {
            let n = scores.len() as f64;
            let mean = scores.iter().sum::<f64>() / n;
            let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            if !(std > 0.0) {
                return Err(QeError::Degenerate(format!(
                    "DA scores of `{lang}` have zero variance"
                )));
            }
            per_lang.insert(lang.to_string(), LangStats { mean, std });
        }
        Ok(Self { per_lang })
    }

    pub fn to_z(&self, lang: &str, raw: f64) -> Result<f64> {
        let s = self.get(lang)?;
        Ok((raw - s.mean) / s.std)
    }

    /// Maps a z-space value back to the 0–100 DA scale.
    pub fn inverse_z(&self, lang: &str, z: f64) -> Result<f64> {
        let s = self.get(lang)?;
        Ok(z * s.std + s.mean)
    }
}

/// Sets `da_z` on every pair. Without `stats` the pairs are treated as a
/// training split and the statistics are fitted on them first.
pub fn z_normalize(pairs: &mut [SentencePair], stats: Option<&NormStats>) -> Result<NormStats> {
    let stats = match stats {
        Some(s) => s.clone(),
        None => NormStats::fit(pairs)?,
    };
    for p in pairs.iter_mut() {
        p.da_z = stats.to_z(&p.lang_pair, p.da_mean)?;
    }
    Ok(stats)
}
