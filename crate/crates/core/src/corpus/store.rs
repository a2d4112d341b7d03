use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io_util::open_lines;

/// Default query length cap in tokens.
pub const QUERY_CAP: usize = 30;
/// Default passage length cap in tokens.
pub const PASSAGE_CAP: usize = 200;

/// Lowercases, replaces every non-alphanumeric character with a space and
/// splits on whitespace.
///
/// Idempotent on its own output: `tokenize(&tokenize(s).join(" "))` returns
/// the same tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let normalized: String = text
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    normalized.split_whitespace().map(str::to_owned).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextRecord {
    pub id: String,
    pub tokens: Vec<String>,
}

/// Immutable id → token sequence store. Insertion order is the file order
/// and is what every downstream consumer iterates over.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TextStore {
    records: Vec<TextRecord>,
    index: HashMap<String, usize>,
    cap: usize,
}

impl TextStore {
    pub fn new(cap: usize) -> Self {
        Self {
            records: Vec::new(),
            index: HashMap::new(),
            cap,
        }
    }

    /// Builds a store from already tokenized records, applying the cap.
    pub fn from_records(records: impl IntoIterator<Item = TextRecord>, cap: usize) -> Result<Self> {
        let mut store = Self::new(cap);
        for r in records {
            store.insert(r.id, r.tokens)?;
        }
        Ok(store)
    }

    fn insert(&mut self, id: String, mut tokens: Vec<String>) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::invalid(format!("record `{id}` has no tokens")));
        }
        if self.index.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        tokens.truncate(self.cap);
        self.index.insert(id.clone(), self.records.len());
        self.records.push(TextRecord { id, tokens });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn get(&self, id: &str) -> Option<&TextRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn records(&self) -> &[TextRecord] {
        &self.records
    }

    pub fn iter(&self) -> std::slice::Iter<'_, TextRecord> {
        self.records.iter()
    }

    /// Restricts the store to the given ids, in the order given.
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut out = Self::new(self.cap);
        for id in ids {
            let r = self.get(id).ok_or_else(|| Error::UnknownId(id.to_owned()))?;
            out.insert(r.id.clone(), r.tokens.clone())?;
        }
        Ok(out)
    }
}

impl<'a> IntoIterator for &'a TextStore {
    type Item = &'a TextRecord;
    type IntoIter = std::slice::Iter<'a, TextRecord>;

    fn into_iter(self) -> Self::IntoIter {
        self.records.iter()
    }
}

fn load_tsv_store(path: &Path, cap: usize) -> Result<TextStore> {
    let mut store = TextStore::new(cap);
    for (line_no, line) in open_lines(path)? {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (id, text) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, line_no, "expected `id<TAB>text`"))?;
        if id.is_empty() {
            return Err(Error::parse(path, line_no, "empty id"));
        }
        let tokens = tokenize(text);
        if tokens.is_empty() {
            log::warn!("{}:{line_no}: skipping `{id}` with empty text", path.display());
            continue;
        }
        store.insert(id.to_owned(), tokens).map_err(|e| match e {
            Error::DuplicateId(id) => Error::parse(path, line_no, format!("duplicate id `{id}`")),
            other => other,
        })?;
    }
    Ok(store)
}

/// Loads a passage collection (`id<TAB>text` per line).
pub fn load_collection(path: &Path, passage_cap: usize) -> Result<TextStore> {
    load_tsv_store(path, passage_cap)
}

/// Loads a query file (`id<TAB>text` per line).
pub fn load_queries(path: &Path, query_cap: usize) -> Result<TextStore> {
    load_tsv_store(path, query_cap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn tsv(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn tokenizer_strips_punctuation() {
        assert_eq!(tokenize("The Cat. Sat!"), vec!["the", "cat", "sat"]);
        assert_eq!(tokenize("  e-mail\tO'Neil  "), vec!["e", "mail", "o", "neil"]);
        assert!(tokenize("?!").is_empty());
    }

    #[test]
    fn collection_row() {
        let f = tsv("7\tThe Cat. Sat!\n");
        let store = load_collection(f.path(), PASSAGE_CAP).unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(store.get("7").unwrap().tokens, vec!["the", "cat", "sat"]);
    }

    #[test]
    fn long_passage_keeps_prefix() {
        let text: Vec<String> = (0..250).map(|i| format!("w{i}")).collect();
        let f = tsv(&format!("p\t{}\n", text.join(" ")));
        let store = load_collection(f.path(), 200).unwrap();
        let toks = &store.get("p").unwrap().tokens;
        assert_eq!(toks.len(), 200);
        assert_eq!(toks[..], text[..200]);
    }

    #[test]
    fn empty_file_gives_empty_store() {
        let f = tsv("");
        assert!(load_collection(f.path(), 200).unwrap().is_empty());
    }

    #[test]
    fn queries_cap_and_count() {
        let f = tsv("q1\twhat is a corporation\n");
        assert_eq!(
            load_queries(f.path(), QUERY_CAP)
                .unwrap()
                .get("q1")
                .unwrap()
                .tokens
                .len(),
            4
        );

        let long: Vec<String> = (0..35).map(|i| format!("t{i}")).collect();
        let f = tsv(&format!("q2\t{}\n", long.join(" ")));
        assert_eq!(
            load_queries(f.path(), QUERY_CAP)
                .unwrap()
                .get("q2")
                .unwrap()
                .tokens
                .len(),
            30
        );
    }

    #[test]
    fn duplicate_query_id_is_error() {
        let f = tsv("q1\ta b\nq1\tc d\n");
        let err = load_queries(f.path(), QUERY_CAP).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn malformed_row_reports_line() {
        let f = tsv("1\tok\nbroken row\n");
        match load_collection(f.path(), 200).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn empty_text_is_skipped() {
        let f = tsv("1\t...\n2\tfine\n");
        let s = load_collection(f.path(), 200).unwrap();
        assert_eq!(s.len(), 1);
        assert!(s.contains("2"));
    }

    #[test]
    fn ingest_is_deterministic() {
        let f = tsv("a\tOne two\nb\tthree, four\n");
        assert_eq!(
            load_collection(f.path(), 200).unwrap(),
            load_collection(f.path(), 200).unwrap()
        );
    }
}
