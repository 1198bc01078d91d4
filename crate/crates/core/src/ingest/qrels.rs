use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, LineError, Result};

/// Relevance judgments: query id -> doc id -> grade.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, i32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Later inserts overwrite earlier ones.
    pub fn insert(&mut self, query_id: impl Into<String>, doc_id: impl Into<String>, grade: i32) {
        self.judgments
            .entry(query_id.into())
            .or_default()
            .insert(doc_id.into(), grade);
    }

    pub fn get(&self, query_id: &str, doc_id: &str) -> Option<i32> {
        self.judgments.get(query_id)?.get(doc_id).copied()
    }

    /// Grade with unjudged docs treated as 0.
    pub fn grade(&self, query_id: Option<&str>, doc_id: &str) -> i32 {
        query_id.and_then(|q| self.get(q, doc_id)).unwrap_or(0)
    }

    pub fn for_query(&self, query_id: &str) -> Option<&BTreeMap<String, i32>> {
        self.judgments.get(query_id)
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn query_count(&self) -> usize {
        self.judgments.len()
    }

    pub fn len(&self) -> usize {
        self.judgments.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, i32)> {
        self.judgments
            .iter()
            .flat_map(|(q, docs)| docs.iter().map(move |(d, g)| (q.as_str(), d.as_str(), *g)))
    }
}

/// Parse TREC qrels (`qid iter docid grade`, whitespace separated).
pub fn parse_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_qrels_str(&text)
}

pub fn parse_qrels_str(text: &str) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    let mut errors = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            errors.push(LineError {
                line: i + 1,
                message: format!("expected 4 fields, found {}", fields.len()),
            });
            continue;
        }
        match fields[3].parse::<i32>() {
            Ok(grade) => qrels.insert(fields[0], fields[2], grade),
            Err(_) => errors.push(LineError {
                line: i + 1,
                message: format!("grade {:?} is not an integer", fields[3]),
            }),
        }
    }
    if errors.is_empty() {
        Ok(qrels)
    } else {
        Err(Error::Parse { errors })
    }
}

pub fn write_qrels(qrels: &Qrels, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for (q, d, g) in qrels.iter() {
        writeln!(f, "{q} 0 {d} {g}").map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_mapping() {
        let q = parse_qrels_str("q1 0 d1 2\n").unwrap();
        assert_eq!(q.get("q1", "d1"), Some(2));
        assert_eq!(q.len(), 1);
    }

    #[test]
    fn last_duplicate_wins_and_negatives_kept() {
        let q = parse_qrels_str("q1 0 d1 1\nq1 0 d1 2\nq2 0 d9 -1\n").unwrap();
        assert_eq!(q.get("q1", "d1"), Some(2));
        assert_eq!(q.get("q2", "d9"), Some(-1));
    }

    #[test]
    fn empty_input() {
        assert!(parse_qrels_str("").unwrap().is_empty());
    }

    #[test]
    fn malformed_line_reports_number() {
        match parse_qrels_str("q1 0 d1 1\nq1 d2 x\n") {
            Err(Error::Parse { errors }) => assert_eq!(errors[0].line, 2),
            other => panic!("{other:?}"),
        }
    }
}
