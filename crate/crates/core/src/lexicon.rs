//! Value lexicon construction: frequency tally, similarity-based
//! de-duplication with frequency priority, and a coverage audit.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusRecord;
use crate::error::{Error, Result};
use crate::gateway::{cosine, Gateway};
use crate::text::{normalize_value_name, tokenize};

/// Two values are duplicates when either similarity reaches its threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DedupThresholds {
    pub rouge_l: f64,
    pub cosine: f64,
}

impl Default for DedupThresholds {
    fn default() -> Self {
        Self {
            rouge_l: 0.7,
            cosine: 0.53,
        }
    }
}

impl DedupThresholds {
    fn validate(&self) -> Result<()> {
        let ok = |t: f64| t > 0.0 && t <= 1.0;
        if ok(self.rouge_l) && ok(self.cosine) {
            Ok(())
        } else {
            Err(Error::invalid("dedup thresholds must lie in (0, 1]"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub value_name: String,
    pub frequency: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedValue {
    pub value_name: String,
    pub frequency: u64,
    /// The retained value it duplicated.
    pub duplicate_of: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueLexicon {
    /// Sorted by frequency descending, ties by name.
    pub entries: Vec<LexiconEntry>,
    pub thresholds: DedupThresholds,
    pub dropped: Vec<DroppedValue>,
}

impl ValueLexicon {
    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.value_name.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["value_name", "frequency"])?;
        for e in &self.entries {
            w.write_record([e.value_name.as_str(), &e.frequency.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a `value_name,frequency` CSV. The thresholds that produced the
    /// file live in the run config, not in the CSV.
    pub fn read_csv(input: impl Read, thresholds: DedupThresholds) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut entries = Vec::new();
        for row in r.deserialize() {
            let e: LexiconEntry = row?;
            entries.push(e);
        }
        if entries.is_empty() {
            return Err(Error::invalid("lexicon file has no entries"));
        }
        Ok(Self {
            entries,
            thresholds,
            dropped: Vec::new(),
        })
    }
}

/// ROUGE-L F1 over lowercase word tokens.
pub fn rouge_l(a: &str, b: &str) -> Result<f64> {
    if a.trim().is_empty() || b.trim().is_empty() {
        return Err(Error::invalid("rouge_l needs two non-empty texts"));
    }
    let ta = tokenize(a);
    let tb = tokenize(b);
    if ta.is_empty() || tb.is_empty() {
        return Ok(0.0);
    }
    let lcs = lcs_len(&ta, &tb) as f64;
    if lcs == 0.0 {
        return Ok(0.0);
    }
    let p = lcs / ta.len() as f64;
    let r = lcs / tb.len() as f64;
    Ok(2.0 * p * r / (p + r))
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Sums frequencies of names that normalize identically.
pub fn merge_exact(raw: &[(String, u64)]) -> BTreeMap<String, u64> {
    let mut merged = BTreeMap::new();
    for (name, f) in raw {
        let n = normalize_value_name(name);
        if !n.is_empty() {
            *merged.entry(n).or_insert(0) += f;
        }
    }
    merged
}

/// Greedy frequency-priority de-duplication.
///
/// Names are merged exactly first, then visited by descending frequency (ties
/// by name). A candidate is dropped when its ROUGE-L or embedding cosine with
/// any already retained value reaches the corresponding threshold.
pub fn dedup<E>(raw: &[(String, u64)], thresholds: DedupThresholds, embed: E) -> Result<ValueLexicon>
where
    E: Fn(&str) -> Result<Vec<f64>> + Sync,
{
    if raw.is_empty() {
        return Err(Error::invalid("dedup needs at least one value"));
    }
    if raw.iter().any(|(_, f)| *f == 0) {
        return Err(Error::invalid("value frequencies must be at least 1"));
    }
    thresholds.validate()?;

    let mut ordered: Vec<(String, u64)> = merge_exact(raw).into_iter().collect();
    ordered.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let embeddings: Vec<Vec<f64>> = ordered
        .par_iter()
        .map(|(name, _)| embed(name))
        .collect::<Result<_>>()?;

    let mut kept: Vec<usize> = Vec::new();
    let mut dropped = Vec::new();
    for (i, (name, freq)) in ordered.iter().enumerate() {
        let hit = kept.par_iter().find_first(|&&k| {
            let r = rouge_l(name, &ordered[k].0).unwrap_or(0.0);
            r >= thresholds.rouge_l || cosine(&embeddings[i], &embeddings[k]) >= thresholds.cosine
        });
        match hit {
            Some(&k) => dropped.push(DroppedValue {
                value_name: name.clone(),
                frequency: *freq,
                duplicate_of: ordered[k].0.clone(),
            }),
            None => kept.push(i),
        }
    }
    let entries = kept
        .into_iter()
        .map(|i| LexiconEntry {
            value_name: ordered[i].0.clone(),
            frequency: ordered[i].1,
        })
        .collect();
    Ok(ValueLexicon {
        entries,
        thresholds,
        dropped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub per_conversation: Vec<usize>,
    pub mean_unique: f64,
    pub min_unique: usize,
    /// Fraction of conversations with at least one relevant lexicon value.
    pub covered_fraction: f64,
}

/// Counts, per conversation, the distinct lexicon values the evaluator deems
/// relevant to at least one of its perceptions.
pub fn coverage_report(
    lexicon: &ValueLexicon,
    conversations: &[CorpusRecord],
    gateway: &Gateway,
) -> Result<CoverageReport> {
    if lexicon.is_empty() {
        return Err(Error::invalid("coverage needs a non-empty lexicon"));
    }
    if conversations.is_empty() {
        return Err(Error::invalid("coverage needs at least one conversation"));
    }
    let names = lexicon.names();
    let per_conversation: Vec<usize> = conversations
        .par_iter()
        .map(|rec| -> Result<usize> {
            let mut hit = BTreeSet::new();
            for p in gateway.parse_perceptions(&rec.response_text)? {
                for (j, v) in names.iter().enumerate() {
                    if !hit.contains(&j) && gateway.evaluate_valence(&p, v)?.is_relevant() {
                        hit.insert(j);
                    }
                }
            }
            Ok(hit.len())
        })
        .collect::<Result<_>>()?;
    let n = per_conversation.len() as f64;
    Ok(CoverageReport {
        mean_unique: per_conversation.iter().sum::<usize>() as f64 / n,
        min_unique: per_conversation.iter().copied().min().unwrap_or(0),
        covered_fraction: per_conversation.iter().filter(|&&c| c > 0).count() as f64 / n,
        per_conversation,
    })
}
