//! Rule-driven deterministic backend. Every operation is a pure function of
//! its inputs and the [`MockRules`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Backend, Valence, ValenceJudgment};
use crate::error::Result;
use crate::text::{contains_phrase, normalize_value_name, split_sentences, tokenize};

pub const MOCK_EMBEDDING_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockRules {
    /// Seed mixed into the embedding hash.
    pub seed: u64,
    /// A sentence becomes a perception when it contains one of these phrases.
    /// Empty means every sentence is kept.
    pub perception_keywords: Vec<String>,
    /// Keyword phrase -> values the generator emits when it appears.
    pub generation: BTreeMap<String, Vec<String>>,
    /// Value -> extra cue phrases that make a perception relevant to it. The
    /// value name itself is always a cue.
    pub cues: BTreeMap<String, Vec<String>>,
    /// Tokens that flip a relevant perception to "opposes".
    pub negations: Vec<String>,
    /// Normalized text -> fixed embedding, for planting exact similarities.
    pub embedding_overrides: BTreeMap<String, Vec<f64>>,
}

impl Default for MockRules {
    fn default() -> Self {
        Self {
            seed: 0,
            perception_keywords: Vec::new(),
            generation: BTreeMap::new(),
            cues: BTreeMap::new(),
            negations: ["not", "never", "no", "against", "oppose", "reject", "avoid", "without"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            embedding_overrides: BTreeMap::new(),
        }
    }
}

pub struct MockBackend {
    rules: MockRules,
    keyword_tokens: Vec<Vec<String>>,
    generation_tokens: Vec<(Vec<String>, Vec<String>)>,
}

impl MockBackend {
    pub fn new(rules: MockRules) -> Self {
        let keyword_tokens = rules
            .perception_keywords
            .iter()
            .map(|k| tokenize(k))
            .filter(|k| !k.is_empty())
            .collect();
        let generation_tokens = rules
            .generation
            .iter()
            .map(|(k, v)| (tokenize(k), v.clone()))
            .filter(|(k, _)| !k.is_empty())
            .collect();
        Self {
            rules,
            keyword_tokens,
            generation_tokens,
        }
    }

    pub fn rules(&self) -> &MockRules {
        &self.rules
    }

    fn is_relevant(&self, tokens: &[String], value: &str) -> bool {
        if contains_phrase(tokens, &tokenize(value)) {
            return true;
        }
        self.rules
            .cues
            .get(&normalize_value_name(value))
            .into_iter()
            .flatten()
            .any(|cue| contains_phrase(tokens, &tokenize(cue)))
    }
}

impl Backend for MockBackend {
    fn parse_perceptions(&self, text: &str) -> Result<Vec<String>> {
        Ok(split_sentences(text)
            .into_iter()
            .filter(|s| {
                if self.keyword_tokens.is_empty() {
                    return true;
                }
                let toks = tokenize(s);
                self.keyword_tokens.iter().any(|k| contains_phrase(&toks, k))
            })
            .collect())
    }

    fn generate_values(&self, perception: &str) -> Result<Vec<String>> {
        let toks = tokenize(perception);
        let mut out: Vec<String> = Vec::new();
        for (keyword, values) in &self.generation_tokens {
            if contains_phrase(&toks, keyword) {
                for v in values {
                    if !out.contains(v) {
                        out.push(v.clone());
                    }
                }
            }
        }
        Ok(out)
    }

    fn evaluate_valence(&self, perception: &str, value: &str) -> Result<ValenceJudgment> {
        let toks = tokenize(perception);
        if !self.is_relevant(&toks, value) {
            return Ok(ValenceJudgment::irrelevant(1.0));
        }
        let negated = toks.iter().any(|t| self.rules.negations.contains(t));
        let valence = if negated {
            Valence::Opposes
        } else {
            Valence::Supports
        };
        Ok(ValenceJudgment::relevant(valence, 1.0))
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        if let Some(v) = self.rules.embedding_overrides.get(&normalize_value_name(text)) {
            return Ok(v.clone());
        }
        Ok(mock_embedding(self.rules.seed, text))
    }

    fn generate_eliciting_prompt(&self, value: &str) -> Result<String> {
        Ok(format!(
            "I am facing a choice where \"{}\" pulls me one way and my own convenience pulls me the other. What should I do?",
            normalize_value_name(value)
        ))
    }
}

/// Token-hash bag-of-words embedding.
///
/// Each token `t` of [`tokenize`]`(text)` is hashed with 64-bit FNV-1a over the
/// little-endian bytes of `seed` followed by the UTF-8 bytes of `t`. The hash
/// seeds a SplitMix64 stream; its first 64 outputs `x` contribute
/// `(x >> 11) * 2^-53 * 2 - 1` to the corresponding coordinates. The summed
/// vector is L2-normalized. Texts sharing tokens therefore share directions.
pub fn mock_embedding(seed: u64, text: &str) -> Vec<f64> {
    let mut v = vec![0.0; MOCK_EMBEDDING_DIM];
    for token in tokenize(text) {
        let mut state = fnv1a(seed, token.as_bytes());
        for slot in v.iter_mut() {
            let x = splitmix64(&mut state);
            *slot += (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64) * 2.0 - 1.0;
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    } else {
        // Text without alphanumeric tokens still needs a unit vector.
        v[0] = 1.0;
    }
    v
}

pub(crate) fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(bytes) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub(crate) fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
