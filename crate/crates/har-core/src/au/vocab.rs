//! Token vocabulary over `sensor=state` composite keys.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ingest::SensorEvent;

/// Index of the reserved mask token.
pub const MASK_ID: u32 = 0;
/// Index of the reserved unknown token.
pub const UNK_ID: u32 = 1;

/// Bijective mapping between composite token keys and dense indices.
/// Indices 0 and 1 are reserved for MASK and UNK. Serialized as the bare
/// token list; the lookup index is rebuilt on load.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, u32>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let mut v = Vocabulary {
            tokens,
            index: BTreeMap::new(),
        };
        v.rebuild_index();
        v
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

pub fn token_key(event: &SensorEvent) -> String {
    format!("{}={}", event.sensor_id, event.state)
}

impl Vocabulary {
    /// Builds a vocabulary from token keys; ordering is sorted-unique so the
    /// mapping is independent of input order.
    pub fn build<'a>(keys: impl IntoIterator<Item = &'a str>) -> Self {
        let mut uniq: Vec<&str> = keys.into_iter().collect();
        uniq.sort_unstable();
        uniq.dedup();
        let mut tokens = vec!["<MASK>".to_string(), "<UNK>".to_string()];
        tokens.extend(uniq.into_iter().map(str::to_string));
        let mut vocab = Vocabulary {
            tokens,
            index: BTreeMap::new(),
        };
        vocab.rebuild_index();
        vocab
    }

    /// Restores the lookup index after deserialization.
    pub fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    /// Number of non-reserved tokens.
    pub fn real_tokens(&self) -> usize {
        self.tokens.len() - 2
    }

    /// Encodes a key; unknown keys map to [`UNK_ID`].
    pub fn encode(&self, key: &str) -> u32 {
        self.index.get(key).copied().unwrap_or(UNK_ID)
    }

    pub fn decode(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode_identity_over_vocabulary() {
        let vocab = Vocabulary::build(["M1=ON", "M1=OFF", "D2=OPEN"]);
        assert_eq!(vocab.real_tokens(), 3);
        for id in 0..vocab.len() as u32 {
            let key = vocab.decode(id).to_string();
            assert_eq!(vocab.encode(&key), id);
        }
    }

    #[test]
    fn unknown_maps_to_unk() {
        let vocab = Vocabulary::build(["M1=ON"]);
        assert_eq!(vocab.encode("nope"), UNK_ID);
        assert_eq!(vocab.decode(MASK_ID), "<MASK>");
    }

    #[test]
    fn build_is_order_independent() {
        let a = Vocabulary::build(["b", "a", "c"]);
        let b = Vocabulary::build(["c", "a", "b", "a"]);
        assert_eq!(a, b);
    }

    #[test]
    fn serde_round_trip_rebuilds_index() {
        let vocab = Vocabulary::build(["M1=ON", "M2=OFF"]);
        let json = serde_json::to_string(&vocab).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, vocab);
        assert_eq!(back.encode("M1=ON"), vocab.encode("M1=ON"));
    }
}
