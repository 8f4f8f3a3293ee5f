//! JSONL log store: one history entry per line, optional cached ranking
//! vector per line, embedder identity in a `<store>.meta.json` sidecar.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use caproute_core::model::{label_set, parse_difficulty, ExecutionRecord, ModelError, ProfileWire};
use caproute_core::sifting::{embed_for_ranking, EmbedError, Embedder, EmbeddingVector, LibraryError};
use caproute_core::{CapabilityProfile, Deconstructor, HistoryEntry, Library};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("line {line}: malformed JSON: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate id `{id}`")]
    DuplicateId { id: String, line: usize },
    #[error("line {line}: invalid `{field}`: {message}")]
    InvariantViolation { line: usize, field: String, message: String },
    #[error("store has cached vectors but no embedder tag in {}", .0.display())]
    MissingEmbedderTag(PathBuf),
    #[error("vector cache is `{store}`, not `{given}`")]
    EmbedderMismatch { store: String, given: String },
    #[error("all {skipped} raw records failed augmentation")]
    AllRecordsFailed { skipped: usize },
    #[error(transparent)]
    Library(#[from] LibraryError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

/// On-disk form of one store line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct EntryLine {
    pub id: String,
    pub query: String,
    pub profile: ProfileWire,
    pub records: Vec<ExecutionRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<Vec<f64>>,
}

fn violation(line: usize, field: impl Into<String>, e: impl std::fmt::Display) -> StoreError {
    StoreError::InvariantViolation { line, field: field.into(), message: e.to_string() }
}

fn check_records(records: &[ExecutionRecord], line: usize) -> Result<(), StoreError> {
    if records.is_empty() {
        return Err(violation(line, "records", "must not be empty"));
    }
    for (i, r) in records.iter().enumerate() {
        match r.validate() {
            Ok(()) => {}
            Err(ModelError::InvalidField(f)) => {
                return Err(violation(line, format!("records[{i}].{f}"), ModelError::InvalidField(f)))
            }
            Err(e) => return Err(violation(line, format!("records[{i}]"), e)),
        }
        if records[..i].iter().any(|p| p.model == r.model) {
            return Err(violation(line, format!("records[{i}].model"), ModelError::DuplicateModel(r.model.clone())));
        }
    }
    Ok(())
}

fn check_profile(w: ProfileWire, line: usize) -> Result<CapabilityProfile, StoreError> {
    let skills = label_set(&w.skills).map_err(|e| violation(line, "profile.S", e))?;
    let knowledge = label_set(&w.knowledge).map_err(|e| violation(line, "profile.K", e))?;
    let difficulty = parse_difficulty(&w.difficulty).map_err(|e| violation(line, "profile.D", e))?;
    CapabilityProfile::new(skills, w.skills_reason, knowledge, w.knowledge_reason, difficulty, w.difficulty_reason)
        .map_err(|e| {
            let field = if e == ModelError::EmptySet("skills") { "profile.S" } else { "profile.K" };
            violation(line, field, e)
        })
}

impl EntryLine {
    pub(crate) fn parse(text: &str, line: usize) -> Result<Self, StoreError> {
        serde_json::from_str(text).map_err(|e| StoreError::Parse { line, message: e.to_string() })
    }

    pub(crate) fn into_entry(self, line: usize) -> Result<(HistoryEntry, Option<EmbeddingVector>), StoreError> {
        if self.id.trim().is_empty() {
            return Err(violation(line, "id", "must not be empty"));
        }
        check_records(&self.records, line)?;
        let profile = check_profile(self.profile, line)?;
        let vector = self
            .vector
            .map(EmbeddingVector::new)
            .transpose()
            .map_err(|e| violation(line, "vector", e))?;
        Ok((HistoryEntry { id: self.id, query: self.query, profile, records: self.records }, vector))
    }

    pub(crate) fn from_entry(entry: &HistoryEntry, vector: Option<&EmbeddingVector>) -> Self {
        Self {
            id: entry.id.clone(),
            query: entry.query.clone(),
            profile: entry.profile.clone().into(),
            records: entry.records.clone(),
            vector: vector.map(|v| v.values().to_vec()),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreMeta {
    embedder_tag: String,
}

/// `<store>.meta.json` next to the store file.
pub fn meta_path(store: &Path) -> PathBuf {
    let mut name = store.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    store.with_file_name(name)
}

/// Non-blank lines with their 1-based line numbers.
pub(crate) fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, StoreError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

/// The augmented history library as persisted on disk.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LogStore {
    entries: BTreeMap<String, HistoryEntry>,
    vectors: BTreeMap<String, EmbeddingVector>,
    embedder_tag: Option<String>,
}

impl LogStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries<I: IntoIterator<Item = HistoryEntry>>(entries: I) -> Result<Self, StoreError> {
        let mut store = Self::new();
        for entry in entries {
            store.insert(entry, None)?;
        }
        Ok(store)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&HistoryEntry> {
        self.entries.get(id)
    }

    /// Entries in id order.
    pub fn entries(&self) -> impl Iterator<Item = &HistoryEntry> {
        self.entries.values()
    }

    pub fn vectors(&self) -> &BTreeMap<String, EmbeddingVector> {
        &self.vectors
    }

    pub fn embedder_tag(&self) -> Option<&str> {
        self.embedder_tag.as_deref()
    }

    fn insert(&mut self, entry: HistoryEntry, vector: Option<EmbeddingVector>) -> Result<(), StoreError> {
        let line = self.len() + 1;
        if self.entries.contains_key(&entry.id) {
            return Err(StoreError::DuplicateId { id: entry.id, line });
        }
        check_records(&entry.records, line)?;
        if entry.id.trim().is_empty() {
            return Err(violation(line, "id", "must not be empty"));
        }
        if let Some(v) = vector {
            self.vectors.insert(entry.id.clone(), v);
        }
        self.entries.insert(entry.id.clone(), entry);
        Ok(())
    }

    /// Recomputes the whole vector cache with `embedder`.
    pub fn embed_all(&mut self, embedder: &dyn Embedder) -> Result<(), StoreError> {
        let mut vectors = BTreeMap::new();
        for e in self.entries.values() {
            vectors.insert(e.id.clone(), embed_for_ranking(&e.query, &e.profile, embedder)?);
        }
        self.vectors = vectors;
        self.embedder_tag = Some(embedder.tag());
        Ok(())
    }

    pub fn clear_vectors(&mut self) {
        self.vectors.clear();
        self.embedder_tag = None;
    }

    /// Ids whose cached vector differs from a fresh embedding by `embedder`.
    pub fn stale_vectors(&self, embedder: &dyn Embedder) -> Result<Vec<String>, StoreError> {
        let tag = embedder.tag();
        match self.embedder_tag.as_deref() {
            None => return Ok(Vec::new()),
            Some(t) if t != tag => return Err(StoreError::EmbedderMismatch { store: t.to_string(), given: tag }),
            Some(_) => {}
        }
        let mut stale = Vec::new();
        for (id, cached) in &self.vectors {
            let e = &self.entries[id];
            if embed_for_ranking(&e.query, &e.profile, embedder)? != *cached {
                stale.push(id.clone());
            }
        }
        Ok(stale)
    }

    /// Appends one entry to `path` and to the in-memory snapshot.
    ///
    /// A vectorized store also needs the entry's vector from the tagged embedder.
    pub fn append_entry(&mut self, path: &Path, entry: HistoryEntry, embedder: Option<&dyn Embedder>) -> Result<(), StoreError> {
        let line = self.len() + 1;
        if self.entries.contains_key(&entry.id) {
            return Err(StoreError::DuplicateId { id: entry.id, line });
        }
        let vector = match (&self.embedder_tag, embedder) {
            (None, _) => None,
            (Some(tag), Some(e)) if *tag == e.tag() => Some(embed_for_ranking(&entry.query, &entry.profile, e)?),
            (Some(tag), e) => {
                return Err(StoreError::EmbedderMismatch {
                    store: tag.clone(),
                    given: e.map(|e| e.tag()).unwrap_or_else(|| "none".into()),
                })
            }
        };
        let mut text = serde_json::to_string(&EntryLine::from_entry(&entry, vector.as_ref())).expect("entry serializes");
        text.push('\n');
        let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
        file.write_all(text.as_bytes()).map_err(io_err(path))?;
        self.insert(entry, vector)
    }

    /// Routing view of the store.
    pub fn to_library(&self) -> Result<Library, StoreError> {
        let index = caproute_core::InvertedIndex::build(self.entries.values().cloned()).map_err(LibraryError::from)?;
        Ok(match &self.embedder_tag {
            Some(tag) => Library::with_vectors(index, self.vectors.clone(), tag.clone())?,
            None => Library::new(index),
        })
    }

    /// Canonical JSONL text, in id order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in self.entries.values() {
            let line = EntryLine::from_entry(e, self.vectors.get(&e.id));
            out.push_str(&serde_json::to_string(&line).expect("entry serializes"));
            out.push('\n');
        }
        out
    }
}

pub fn load_store(path: &Path) -> Result<LogStore, StoreError> {
    let mut store = LogStore::new();
    let mut with_vectors = None;
    let mut dim = None;
    for (n, text) in read_lines(path)? {
        let (entry, vector) = EntryLine::parse(&text, n)?.into_entry(n)?;
        if store.entries.contains_key(&entry.id) {
            return Err(StoreError::DuplicateId { id: entry.id, line: n });
        }
        let has = vector.is_some();
        if *with_vectors.get_or_insert(has) != has {
            return Err(violation(n, "vector", "either every line or no line carries a vector"));
        }
        if let Some(v) = &vector {
            if *dim.get_or_insert(v.dim()) != v.dim() {
                return Err(violation(n, "vector", format!("dimension {} differs from {}", v.dim(), dim.unwrap())));
            }
        }
        store.insert(entry, vector)?;
    }
    if with_vectors == Some(true) {
        let meta = meta_path(path);
        let text = fs::read_to_string(&meta).map_err(|_| StoreError::MissingEmbedderTag(meta.clone()))?;
        let meta: StoreMeta = serde_json::from_str(&text).map_err(|_| StoreError::MissingEmbedderTag(meta.clone()))?;
        store.embedder_tag = Some(meta.embedder_tag);
    }
    Ok(store)
}

/// Writes `text` via a temporary file and rename, so readers never see a partial file.
pub(crate) fn write_atomic(path: &Path, text: &str) -> Result<(), StoreError> {
    let mut tmp = path.as_os_str().to_os_string();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, text).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn save_store(store: &LogStore, path: &Path) -> Result<(), StoreError> {
    write_atomic(path, &store.to_jsonl())?;
    let meta = meta_path(path);
    match &store.embedder_tag {
        Some(tag) => {
            let text = serde_json::to_string_pretty(&StoreMeta { embedder_tag: tag.clone() }).expect("meta serializes");
            write_atomic(&meta, &(text + "\n"))
        }
        None => match fs::remove_file(&meta) {
            Err(e) if e.kind() != io::ErrorKind::NotFound => Err(io_err(&meta)(e)),
            _ => Ok(()),
        },
    }
}

/// A historical query with outcomes but no profile yet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawLogRecord {
    pub id: String,
    pub query: String,
    pub records: Vec<ExecutionRecord>,
}

pub fn load_raw(path: &Path) -> Result<Vec<RawLogRecord>, StoreError> {
    let mut seen = BTreeMap::new();
    let mut out = Vec::new();
    for (n, text) in read_lines(path)? {
        let raw: RawLogRecord = serde_json::from_str(&text).map_err(|e| StoreError::Parse { line: n, message: e.to_string() })?;
        if raw.id.trim().is_empty() {
            return Err(violation(n, "id", "must not be empty"));
        }
        check_records(&raw.records, n)?;
        if seen.insert(raw.id.clone(), n).is_some() {
            return Err(StoreError::DuplicateId { id: raw.id, line: n });
        }
        out.push(raw);
    }
    Ok(out)
}

#[derive(Debug)]
pub struct Augmented {
    pub store: LogStore,
    /// `(id, reason)` for every record that was left out.
    pub skipped: Vec<(String, String)>,
}

/// Attaches profiles (and, given an embedder, ranking vectors) to raw logs.
/// Records whose deconstruction or embedding fails are skipped and reported.
pub fn augment_logs(
    raw: &[RawLogRecord],
    deconstructor: &dyn Deconstructor,
    embedder: Option<&dyn Embedder>,
) -> Result<Augmented, StoreError> {
    let mut store = LogStore::new();
    let mut skipped = Vec::new();
    for r in raw {
        let profile = match deconstructor.deconstruct(&r.query) {
            Ok(p) => p,
            Err(e) => {
                skipped.push((r.id.clone(), e.to_string()));
                continue;
            }
        };
        let vector = match embedder.map(|e| embed_for_ranking(&r.query, &profile, e)).transpose() {
            Ok(v) => v,
            Err(e) => {
                skipped.push((r.id.clone(), e.to_string()));
                continue;
            }
        };
        store.insert(HistoryEntry { id: r.id.clone(), query: r.query.clone(), profile, records: r.records.clone() }, vector)?;
    }
    if store.is_empty() {
        return Err(StoreError::AllRecordsFailed { skipped: skipped.len() });
    }
    store.embedder_tag = embedder.map(|e| e.tag());
    Ok(Augmented { store, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use caproute_core::deconstruct::{keyword_rule, KeywordRules, KeywordRulesSpec, ProfileTemplate};
    use caproute_core::{DeconstructError, DifficultyLevel, TokenHashEmbedder};

    const LINE: &str = r#"{"id":"a","query":"q","profile":{"S":["x"],"S_reason":"","K":["none"],"K_reason":"","D":"D1","D_reason":""},"records":[{"model":"m","score":0.5,"cost":1.0}]}"#;

    fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn loads_and_reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let three = [LINE, &LINE.replace("\"a\"", "\"b\""), &LINE.replace("\"a\"", "\"c\"")].join("\n");
        assert_eq!(load_store(&write(&dir, "ok.jsonl", &three)).unwrap().len(), 3);

        let dup = format!("{LINE}\n{LINE}\n");
        assert!(matches!(load_store(&write(&dir, "dup.jsonl", &dup)), Err(StoreError::DuplicateId { line: 2, .. })));

        let bad = LINE.replace("0.5", "1.3");
        match load_store(&write(&dir, "bad.jsonl", &bad)) {
            Err(StoreError::InvariantViolation { line: 1, field, .. }) => assert_eq!(field, "records[0].score"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(load_store(&write(&dir, "junk.jsonl", "{\n")), Err(StoreError::Parse { line: 1, .. })));
        let d9 = LINE.replace("D1", "D9");
        assert!(matches!(load_store(&write(&dir, "d9.jsonl", &d9)), Err(StoreError::InvariantViolation { field, .. }) if field == "profile.D"));
    }

    #[test]
    fn append_then_reload() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "s.jsonl", &format!("{LINE}\n"));
        let mut store = load_store(&path).unwrap();
        let mut e = store.get("a").unwrap().clone();
        assert!(matches!(store.append_entry(&path, e.clone(), None), Err(StoreError::DuplicateId { .. })));
        e.id = "z".into();
        store.append_entry(&path, e.clone(), None).unwrap();
        assert_eq!(store.len(), 2);
        assert_eq!(load_store(&path).unwrap().get("z"), Some(&e));
    }

    #[test]
    fn vectors_need_their_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "s.jsonl", &format!("{LINE}\n"));
        let mut store = load_store(&path).unwrap();
        let emb = TokenHashEmbedder::new(8);
        store.embed_all(&emb).unwrap();
        save_store(&store, &path).unwrap();
        let back = load_store(&path).unwrap();
        assert_eq!(back, store);
        assert!(back.stale_vectors(&emb).unwrap().is_empty());
        fs::remove_file(meta_path(&path)).unwrap();
        assert!(matches!(load_store(&path), Err(StoreError::MissingEmbedderTag(_))));
    }

    struct Failing;

    impl Deconstructor for Failing {
        fn deconstruct(&self, _: &str) -> Result<CapabilityProfile, DeconstructError> {
            Err(DeconstructError::DeconstructionFailed { attempts: 3, last_error: "bad json".into() })
        }
    }

    #[test]
    fn augmentation_skips_and_counts() {
        let rules = KeywordRules::new(KeywordRulesSpec {
            rules: vec![keyword_rule("sum", &["arithmetic"], &["math"], DifficultyLevel::D1)],
            default: ProfileTemplate { skills: vec!["chat".into()], knowledge: vec!["none".into()], difficulty: DifficultyLevel::D0 },
        })
        .unwrap();
        let raw = vec![
            RawLogRecord { id: "1".into(), query: "sum these".into(), records: vec![ExecutionRecord::new("m", 1.0, 1.0).unwrap()] },
            RawLogRecord { id: "2".into(), query: "hello".into(), records: vec![ExecutionRecord::new("m", 0.0, 1.0).unwrap()] },
        ];
        let out = augment_logs(&raw, &rules, None).unwrap();
        assert_eq!(out.store.get("1").unwrap().profile.difficulty(), DifficultyLevel::D1);
        assert_eq!(out.store.get("2").unwrap().profile.skills().iter().next().unwrap().as_str(), "chat");
        assert!(out.skipped.is_empty());
        assert!(matches!(augment_logs(&raw, &Failing, None), Err(StoreError::AllRecordsFailed { skipped: 2 })));
    }
}
