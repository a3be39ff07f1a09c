use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{data_err, Result};

/// Character or byte tokenizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CharVocab {
    /// Space plus `a`–`z`; space is id 0.
    Text27,
    /// Raw bytes.
    Bytes256,
}

impl CharVocab {
    pub fn size(self) -> usize {
        match self {
            CharVocab::Text27 => 27,
            CharVocab::Bytes256 => 256,
        }
    }

    pub fn encode(self, text: &[u8]) -> Result<Vec<usize>> {
        text.iter()
            .enumerate()
            .map(|(pos, &b)| match (self, b) {
                (CharVocab::Bytes256, _) => Ok(usize::from(b)),
                (CharVocab::Text27, b' ') => Ok(0),
                (CharVocab::Text27, b'a'..=b'z') => Ok(usize::from(b - b'a') + 1),
                (CharVocab::Text27, _) => data_err(format!("byte {b:#04x} at position {pos} is not in [ a-z]")),
            })
            .collect()
    }

    pub fn decode(self, ids: &[usize]) -> Result<Vec<u8>> {
        ids.iter()
            .enumerate()
            .map(|(pos, &id)| match (self, id) {
                (_, id) if id >= self.size() => data_err(format!("id {id} at position {pos} outside vocabulary")),
                (CharVocab::Bytes256, id) => Ok(id as u8),
                (CharVocab::Text27, 0) => Ok(b' '),
                (CharVocab::Text27, id) => Ok(b'a' + (id - 1) as u8),
            })
            .collect()
    }
}

/// Contiguous train/validation/test split of one corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSplits {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

/// Splits a token stream 90/5/5 by position.
pub fn split_stream(tokens: Vec<usize>) -> CorpusSplits {
    let n = tokens.len();
    let train_end = n * 90 / 100;
    let valid_end = n * 95 / 100;
    CorpusSplits {
        train: tokens[..train_end].to_vec(),
        valid: tokens[train_end..valid_end].to_vec(),
        test: tokens[valid_end..].to_vec(),
    }
}

/// Reads a raw text/byte file and splits it 90/5/5 by position.
pub fn load_text_corpus(path: &Path, vocab: CharVocab) -> Result<CorpusSplits> {
    let bytes = std::fs::read(path)?;
    Ok(split_stream(vocab.encode(&bytes)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text27_roundtrip_and_errors() {
        let ids = CharVocab::Text27.encode(b"hello world").unwrap();
        assert_eq!(ids[0], 8);
        assert_eq!(ids[5], 0);
        assert_eq!(CharVocab::Text27.decode(&ids).unwrap(), b"hello world");
        assert!(CharVocab::Text27.encode(b"Hello").is_err());
        assert!(CharVocab::Text27.decode(&[27]).is_err());
    }

    #[test]
    fn split_proportions() {
        let s = split_stream((0..1000).collect());
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (900, 50, 50));
        assert_eq!(s.valid[0], 900);
    }

    proptest::proptest! {
        #[test]
        fn bytes_roundtrip(data in proptest::collection::vec(proptest::num::u8::ANY, 0..200)) {
            let ids = CharVocab::Bytes256.encode(&data).unwrap();
            proptest::prop_assert_eq!(CharVocab::Bytes256.decode(&ids).unwrap(), data);
        }

        #[test]
        fn text_roundtrip(s in "[ a-z]{0,100}") {
            let ids = CharVocab::Text27.encode(s.as_bytes()).unwrap();
            proptest::prop_assert!(ids.iter().all(|&i| i < 27));
            proptest::prop_assert_eq!(CharVocab::Text27.decode(&ids).unwrap(), s.into_bytes());
        }
    }
}
