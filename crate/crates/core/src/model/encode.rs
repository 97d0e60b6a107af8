use serde::{Deserialize, Serialize};

use crate::corpus::{SentencePair, Vocab, CLS, PAD, SEP};

/// `[CLS] src [SEP] mt [SEP]`, unpadded. Padding happens when inputs are
/// collated into a [`Batch`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedInput {
    pub input_ids: Vec<usize>,
}

impl EncodedInput {
    pub const CLS_POSITION: usize = 0;

    pub fn len(&self) -> usize {
        self.input_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input_ids.is_empty()
    }

    /// Ids padded with PAD to `len`, together with the attention mask.
    pub fn padded(&self, len: usize) -> (Vec<usize>, Vec<u8>) {
        let mut ids = self.input_ids.clone();
        let mut mask = vec![1u8; ids.len()];
        ids.resize(len.max(ids.len()), PAD);
        mask.resize(ids.len(), 0);
        (ids, mask)
    }
}

/// Lays out a pair within `max_positions` tokens. When too long, one token
/// at a time is cut from the end of whichever segment is currently longer
/// (the source on ties).
pub fn encode_pair(src: &[usize], mt: &[usize], max_positions: usize) -> EncodedInput {
    let budget = max_positions.saturating_sub(3);
    let (mut ls, mut lm) = (src.len(), mt.len());
    while ls + lm > budget {
        if ls >= lm {
            ls -= 1;
        } else {
            lm -= 1;
        }
    }
    let mut ids = Vec::with_capacity(ls + lm + 3);
    ids.push(CLS);
    ids.extend_from_slice(&src[..ls]);
    ids.push(SEP);
    ids.extend_from_slice(&mt[..lm]);
    ids.push(SEP);
    EncodedInput { input_ids: ids }
}

pub fn encode_text(vocab: &Vocab, pair: &SentencePair, max_positions: usize) -> EncodedInput {
    encode_pair(&vocab.encode(&pair.src), &vocab.encode(&pair.mt), max_positions)
}

/// Inputs padded to a common length, flattened row-major as `[batch·seq]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
    pub batch: usize,
    pub seq: usize,
}

impl Batch {
    pub fn collate(inputs: &[&EncodedInput]) -> Batch {
        let seq = inputs.iter().map(|x| x.len()).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(inputs.len() * seq);
        let mut mask = Vec::with_capacity(inputs.len() * seq);
        for x in inputs {
            ids.extend_from_slice(&x.input_ids);
            mask.extend(std::iter::repeat_n(true, x.len()));
            ids.extend(std::iter::repeat_n(PAD, seq - x.len()));
            mask.extend(std::iter::repeat_n(false, seq - x.len()));
        }
        Batch {
            ids,
            mask,
            batch: inputs.len(),
            seq,
        }
    }

    pub fn single(x: &EncodedInput) -> Batch {
        Self::collate(&[x])
    }

    /// Number of real tokens of example `b`.
    pub fn real_len(&self, b: usize) -> usize {
        self.mask[b * self.seq..(b + 1) * self.seq].iter().filter(|&&m| m).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout() {
        let x = encode_pair(&[10, 11], &[12], 128);
        assert_eq!(x.input_ids, vec![CLS, 10, 11, SEP, 12, SEP]);
        let e = encode_pair(&[], &[], 128);
        assert_eq!(e.input_ids, vec![CLS, SEP, SEP]);
    }

    #[test]
    fn truncation_trims_the_longer_segment() {
        // 100 + 35 tokens plus three specials is 10 over a budget of 128.
        let src: Vec<usize> = (0..100).map(|i| 4 + i).collect();
        let mt: Vec<usize> = (0..35).map(|i| 500 + i).collect();
        let x = encode_pair(&src, &mt, 128);
        assert_eq!(x.len(), 128);
        let sep = x.input_ids.iter().position(|&t| t == SEP).unwrap();
        assert_eq!(sep - 1, 90);
        assert_eq!(&x.input_ids[1..sep], &src[..90]);
        assert_eq!(&x.input_ids[sep + 1..127], &mt[..]);
        assert_eq!(x.input_ids[0], CLS);
        assert_eq!(x.input_ids[127], SEP);
    }

    #[test]
    fn collate_pads_and_masks() {
        let a = encode_pair(&[5], &[], 16);
        let b = encode_pair(&[5, 6, 7], &[8], 16);
        let batch = Batch::collate(&[&a, &b]);
        assert_eq!((batch.batch, batch.seq), (2, 7));
        assert_eq!(&batch.ids[..7], &[CLS, 5, SEP, SEP, PAD, PAD, PAD]);
        assert_eq!(batch.real_len(0), 4);
        assert_eq!(batch.real_len(1), 7);
        let (ids, mask) = a.padded(6);
        assert_eq!(ids.len(), 6);
        assert_eq!(mask, vec![1, 1, 1, 1, 0, 0]);
    }
}
