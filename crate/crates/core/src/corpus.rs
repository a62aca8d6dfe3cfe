//! Append-only store of value-laden corpora: response records, the perceptions
//! parsed out of them, and the value annotations generated for each perception.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{normalize_value_name, split_sentences};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub source: String,
    #[serde(default)]
    pub prompt: Option<String>,
    pub response_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perception {
    pub id: String,
    pub record_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueAnnotation {
    pub perception_id: String,
    pub value_name: String,
    /// Rows without a weight (e.g. bare lexicon entries) count once.
    #[serde(default = "default_weight")]
    pub weight: u64,
}

fn default_weight() -> u64 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowFormat {
    Records,
    Perceptions,
    Annotations,
}

impl RowFormat {
    pub fn file_name(self) -> &'static str {
        match self {
            RowFormat::Records => "records.jsonl",
            RowFormat::Perceptions => "perceptions.jsonl",
            RowFormat::Annotations => "annotations.jsonl",
        }
    }
}

impl std::str::FromStr for RowFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "records" => Ok(RowFormat::Records),
            "perceptions" => Ok(RowFormat::Perceptions),
            "annotations" => Ok(RowFormat::Annotations),
            other => Err(Error::Config(format!("unknown row format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SourceStats {
    pub records: usize,
    pub perceptions: usize,
    /// Total annotation weight.
    pub values: u64,
    pub unique_values: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub per_source: BTreeMap<String, SourceStats>,
    pub total: SourceStats,
}

/// In-memory index over the JSONL files of one corpus directory.
///
/// Ingestion takes `&mut self`, so a store has a single writer; once loaded it
/// can be shared by reference between reader threads.
#[derive(Debug, Default)]
pub struct CorpusStore {
    dir: Option<PathBuf>,
    records: Vec<CorpusRecord>,
    record_index: HashMap<String, usize>,
    perceptions: Vec<Perception>,
    perception_index: HashMap<String, usize>,
    annotations: Vec<ValueAnnotation>,
}

impl CorpusStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (creating if needed) a store directory and loads whatever rows it
    /// already holds. Later ingests append to the directory's files.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir)?;
        let mut store = Self::default();
        for format in [
            RowFormat::Records,
            RowFormat::Perceptions,
            RowFormat::Annotations,
        ] {
            let path = dir.join(format.file_name());
            if path.exists() {
                store.ingest(&path, format)?;
            }
        }
        store.dir = Some(dir);
        Ok(store)
    }

    pub fn records(&self) -> &[CorpusRecord] {
        &self.records
    }

    pub fn perceptions(&self) -> &[Perception] {
        &self.perceptions
    }

    pub fn annotations(&self) -> &[ValueAnnotation] {
        &self.annotations
    }

    pub fn record(&self, id: &str) -> Option<&CorpusRecord> {
        self.record_index.get(id).map(|&i| &self.records[i])
    }

    pub fn perception(&self, id: &str) -> Option<&Perception> {
        self.perception_index.get(id).map(|&i| &self.perceptions[i])
    }

    pub fn ingest(&mut self, path: impl AsRef<Path>, format: RowFormat) -> Result<usize> {
        let path = path.as_ref();
        let file = File::open(path)?;
        self.ingest_reader(&path.display().to_string(), file, format)
    }

    /// Parses and validates every row before touching the store: either the
    /// whole file is accepted or nothing is.
    pub fn ingest_reader(
        &mut self,
        source_name: &str,
        reader: impl Read,
        format: RowFormat,
    ) -> Result<usize> {
        let lines = read_rows(source_name, reader)?;
        match format {
            RowFormat::Records => {
                let rows = parse_rows::<CorpusRecord>(source_name, &lines)?;
                self.add_records(source_name, rows)
            }
            RowFormat::Perceptions => {
                let rows = parse_rows::<Perception>(source_name, &lines)?;
                self.add_perceptions(source_name, rows)
            }
            RowFormat::Annotations => {
                let rows = parse_rows::<ValueAnnotation>(source_name, &lines)?;
                self.add_annotations(source_name, rows)
            }
        }
    }

    pub fn add_records(
        &mut self,
        source_name: &str,
        rows: Vec<(usize, CorpusRecord)>,
    ) -> Result<usize> {
        let mut seen = BTreeSet::new();
        let mut accepted = Vec::with_capacity(rows.len());
        for (line, mut rec) in rows {
            rec.source = rec.source.trim().to_lowercase();
            if rec.id.trim().is_empty() {
                return Err(row_error(source_name, line, "empty id"));
            }
            if rec.source.is_empty() {
                return Err(row_error(source_name, line, "empty source"));
            }
            if rec.response_text.trim().is_empty() {
                return Err(row_error(source_name, line, "empty response_text"));
            }
            if self.record_index.contains_key(&rec.id) || !seen.insert(rec.id.clone()) {
                return Err(Error::DuplicateId(rec.id));
            }
            accepted.push(rec);
        }
        self.persist(RowFormat::Records, &accepted)?;
        let n = accepted.len();
        for rec in accepted {
            self.record_index.insert(rec.id.clone(), self.records.len());
            self.records.push(rec);
        }
        Ok(n)
    }

    pub fn add_perceptions(
        &mut self,
        source_name: &str,
        rows: Vec<(usize, Perception)>,
    ) -> Result<usize> {
        let mut seen = BTreeSet::new();
        let mut accepted = Vec::with_capacity(rows.len());
        for (line, mut p) in rows {
            p.text = p.text.trim().to_string();
            if p.text.is_empty() {
                return Err(row_error(source_name, line, "empty perception text"));
            }
            if split_sentences(&p.text).len() > 1 {
                return Err(row_error(
                    source_name,
                    line,
                    "perception text holds more than one sentence",
                ));
            }
            if !self.record_index.contains_key(&p.record_id) {
                return Err(row_error(
                    source_name,
                    line,
                    format!("unknown record_id `{}`", p.record_id),
                ));
            }
            if self.perception_index.contains_key(&p.id) || !seen.insert(p.id.clone()) {
                return Err(Error::DuplicateId(p.id));
            }
            accepted.push(p);
        }
        self.persist(RowFormat::Perceptions, &accepted)?;
        let n = accepted.len();
        for p in accepted {
            self.perception_index
                .insert(p.id.clone(), self.perceptions.len());
            self.perceptions.push(p);
        }
        Ok(n)
    }

    pub fn add_annotations(
        &mut self,
        source_name: &str,
        rows: Vec<(usize, ValueAnnotation)>,
    ) -> Result<usize> {
        let mut accepted = Vec::with_capacity(rows.len());
        for (line, mut a) in rows {
            a.value_name = normalize_value_name(&a.value_name);
            if a.value_name.is_empty() {
                return Err(row_error(source_name, line, "empty value_name"));
            }
            if a.weight == 0 {
                return Err(row_error(source_name, line, "weight must be at least 1"));
            }
            if !self.perception_index.contains_key(&a.perception_id) {
                return Err(row_error(
                    source_name,
                    line,
                    format!("unknown perception_id `{}`", a.perception_id),
                ));
            }
            accepted.push(a);
        }
        self.persist(RowFormat::Annotations, &accepted)?;
        let n = accepted.len();
        self.annotations.extend(accepted);
        Ok(n)
    }

    fn persist<T: Serialize>(&self, format: RowFormat, rows: &[T]) -> Result<()> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        if rows.is_empty() {
            return Ok(());
        }
        let mut buf = Vec::new();
        for row in rows {
            serde_json::to_writer(&mut buf, row)?;
            buf.push(b'\n');
        }
        crate::atomic::append_atomic(&dir.join(format.file_name()), &buf)?;
        Ok(())
    }

    fn source_of_perception(&self, perception_id: &str) -> Option<&str> {
        let p = self.perception(perception_id)?;
        self.record(&p.record_id).map(|r| r.source.as_str())
    }

    pub fn stats(&self) -> CorpusStats {
        let mut per_source: BTreeMap<String, SourceStats> = BTreeMap::new();
        let mut unique: BTreeMap<String, BTreeSet<&str>> = BTreeMap::new();
        let mut all_unique = BTreeSet::new();
        for r in &self.records {
            per_source.entry(r.source.clone()).or_default().records += 1;
        }
        for p in &self.perceptions {
            if let Some(r) = self.record(&p.record_id) {
                per_source.entry(r.source.clone()).or_default().perceptions += 1;
            }
        }
        for a in &self.annotations {
            let Some(src) = self.source_of_perception(&a.perception_id) else {
                continue;
            };
            per_source.entry(src.to_string()).or_default().values += a.weight;
            unique
                .entry(src.to_string())
                .or_default()
                .insert(a.value_name.as_str());
            all_unique.insert(a.value_name.as_str());
        }
        let mut total = SourceStats::default();
        for (src, s) in per_source.iter_mut() {
            s.unique_values = unique.get(src).map_or(0, BTreeSet::len);
            total.records += s.records;
            total.perceptions += s.perceptions;
            total.values += s.values;
        }
        total.unique_values = all_unique.len();
        CorpusStats { per_source, total }
    }

    /// Summed annotation weight per normalized value name, sorted by name.
    pub fn value_frequencies(&self) -> Vec<(String, u64)> {
        let mut freq: BTreeMap<&str, u64> = BTreeMap::new();
        for a in &self.annotations {
            *freq.entry(a.value_name.as_str()).or_default() += a.weight;
        }
        freq.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}

fn row_error(source_name: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        source_name: source_name.to_string(),
        line,
        message: message.into(),
    }
}

/// Non-blank lines with their 1-based line numbers.
fn read_rows(source_name: &str, reader: impl Read) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| row_error(source_name, i + 1, e.to_string()))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

fn parse_rows<T: for<'de> Deserialize<'de>>(
    source_name: &str,
    lines: &[(usize, String)],
) -> Result<Vec<(usize, T)>> {
    lines
        .iter()
        .map(|(n, line)| {
            serde_json::from_str(line)
                .map(|row| (*n, row))
                .map_err(|e| row_error(source_name, *n, e.to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ingest_str(store: &mut CorpusStore, text: &str, format: RowFormat) -> Result<usize> {
        store.ingest_reader("mem", text.as_bytes(), format)
    }

    const RECORDS: &str = r#"{"id":"r1","source":"gpv","prompt":"q","response_text":"Honesty matters."}
{"id":"r2","source":"gpv","prompt":null,"response_text":"Fairness is key."}
{"id":"r3","source":"beavertails","response_text":"Be bold."}
"#;

    #[test]
    fn ingests_well_formed_records() {
        let mut store = CorpusStore::in_memory();
        assert_eq!(ingest_str(&mut store, RECORDS, RowFormat::Records).unwrap(), 3);
        assert_eq!(store.records().len(), 3);
    }

    #[test]
    fn empty_response_names_line() {
        let mut store = CorpusStore::in_memory();
        let bad = "{\"id\":\"a\",\"source\":\"gpv\",\"response_text\":\"ok\"}\n{\"id\":\"b\",\"source\":\"gpv\",\"response_text\":\"   \"}\n";
        match ingest_str(&mut store, bad, RowFormat::Records) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(store.records().is_empty(), "rejected file must not be half-ingested");
    }

    #[test]
    fn malformed_json_names_line() {
        let mut store = CorpusStore::in_memory();
        let bad = "{\"id\":\"a\",\"source\":\"gpv\",\"response_text\":\"ok\"}\n\n{not json\n";
        match ingest_str(&mut store, bad, RowFormat::Records) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_is_named() {
        let mut store = CorpusStore::in_memory();
        ingest_str(&mut store, RECORDS, RowFormat::Records).unwrap();
        let dup = "{\"id\":\"r2\",\"source\":\"gpv\",\"response_text\":\"again\"}\n";
        match ingest_str(&mut store, dup, RowFormat::Records) {
            Err(Error::DuplicateId(id)) => assert_eq!(id, "r2"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn stats_count_unique_normalized_values() {
        let mut store = CorpusStore::in_memory();
        ingest_str(&mut store, RECORDS, RowFormat::Records).unwrap();
        ingest_str(
            &mut store,
            "{\"id\":\"p1\",\"record_id\":\"r1\",\"text\":\"Honesty matters.\"}\n",
            RowFormat::Perceptions,
        )
        .unwrap();
        ingest_str(
            &mut store,
            "{\"perception_id\":\"p1\",\"value_name\":\"a\",\"weight\":1}\n{\"perception_id\":\"p1\",\"value_name\":\" A \"}\n{\"perception_id\":\"p1\",\"value_name\":\"b\",\"weight\":1}\n",
            RowFormat::Annotations,
        )
        .unwrap();
        let stats = store.stats();
        assert_eq!(stats.total.unique_values, 2);
        assert_eq!(stats.total.values, 3);
        assert_eq!(stats.per_source["gpv"].perceptions, 1);
        assert_eq!(stats.per_source["beavertails"].values, 0);
    }

    #[test]
    fn empty_store_reports_zeros() {
        let stats = CorpusStore::in_memory().stats();
        assert_eq!(stats.total, SourceStats::default());
        assert!(stats.per_source.is_empty());
    }

    #[test]
    fn rejects_multi_sentence_perception_and_dangling_refs() {
        let mut store = CorpusStore::in_memory();
        ingest_str(&mut store, RECORDS, RowFormat::Records).unwrap();
        let two = "{\"id\":\"p1\",\"record_id\":\"r1\",\"text\":\"One. Two.\"}\n";
        assert!(ingest_str(&mut store, two, RowFormat::Perceptions).is_err());
        let dangling = "{\"id\":\"p1\",\"record_id\":\"zz\",\"text\":\"One.\"}\n";
        assert!(ingest_str(&mut store, dangling, RowFormat::Perceptions).is_err());
        let orphan = "{\"perception_id\":\"nope\",\"value_name\":\"x\"}\n";
        assert!(ingest_str(&mut store, orphan, RowFormat::Annotations).is_err());
    }

    #[test]
    fn persists_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut store = CorpusStore::open(dir.path()).unwrap();
            ingest_str(&mut store, RECORDS, RowFormat::Records).unwrap();
        }
        let store = CorpusStore::open(dir.path()).unwrap();
        assert_eq!(store.records().len(), 3);
        assert_eq!(store.record("r3").unwrap().source, "beavertails");
    }
}
