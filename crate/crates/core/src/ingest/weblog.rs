//! AOL-style tab-separated query logs.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use chrono::NaiveDateTime;

use super::sessionize::RawLogRecord;
use crate::error::{Error, LineError, Result};

const TIME_FORMAT: &str = "%Y-%m-%d %H:%M:%S";
const KNOWN_COLUMNS: [&str; 6] = ["AnonID", "Query", "QueryTime", "ItemRank", "ClickURL", "SessionID"];

/// Output of [`parse_weblog_tsv`]: the good rows plus an account of the bad ones.
#[derive(Debug, Clone, Default)]
pub struct WeblogParse {
    pub records: Vec<RawLogRecord>,
    pub data_rows: u64,
    pub errors: Vec<LineError>,
    /// Header columns that have no canonical representation.
    pub dropped_fields: Vec<String>,
}

pub fn parse_weblog_tsv(path: impl AsRef<Path>) -> Result<WeblogParse> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_weblog_tsv_from(BufReader::new(f)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn parse_weblog_tsv_from<R: BufRead>(reader: R) -> Result<WeblogParse> {
    let mut out = WeblogParse::default();
    let mut lines = reader.lines().enumerate();

    let cols = loop {
        match lines.next() {
            None => return Ok(out),
            Some((_, line)) => {
                let line = line.map_err(|e| Error::io("<reader>", e))?;
                if !line.trim().is_empty() {
                    break Columns::from_header(&line, &mut out.dropped_fields);
                }
            }
        }
    };

    for (idx, line) in lines {
        let line = line.map_err(|e| Error::io("<reader>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.data_rows += 1;
        match cols.parse_row(&line) {
            Ok(r) => out.records.push(r),
            Err(message) => out.errors.push(LineError {
                line: idx + 1,
                message,
            }),
        }
    }
    Ok(out)
}

struct Columns {
    user: usize,
    query: usize,
    time: usize,
    rank: Option<usize>,
    url: Option<usize>,
    session: Option<usize>,
}

impl Columns {
    fn from_header(header: &str, dropped: &mut Vec<String>) -> Columns {
        let names: Vec<&str> = header.trim_end_matches(['\r', '\n']).split('\t').collect();
        let find = |n: &str| names.iter().position(|c| c.trim() == n);
        for n in &names {
            let n = n.trim();
            if !KNOWN_COLUMNS.contains(&n) && !n.is_empty() {
                dropped.push(n.to_string());
            }
        }
        Columns {
            user: find("AnonID").unwrap_or(0),
            query: find("Query").unwrap_or(1),
            time: find("QueryTime").unwrap_or(2),
            rank: find("ItemRank").or(Some(3)),
            url: find("ClickURL").or(Some(4)),
            session: find("SessionID"),
        }
    }

    fn parse_row(&self, line: &str) -> std::result::Result<RawLogRecord, String> {
        let fields: Vec<&str> = line.trim_end_matches(['\r', '\n']).split('\t').collect();
        let get = |i: usize| fields.get(i).map(|s| s.trim()).unwrap_or("");
        let opt = |i: Option<usize>| i.map(get).filter(|s| !s.is_empty());

        let user = get(self.user);
        if user.is_empty() {
            return Err("empty AnonID".into());
        }
        let time = get(self.time);
        let ts = NaiveDateTime::parse_from_str(time, TIME_FORMAT)
            .map_err(|e| format!("bad QueryTime {time:?}: {e}"))?
            .and_utc()
            .timestamp_millis();

        let (clicked_doc, clicked_rank) = match (opt(self.rank), opt(self.url)) {
            (None, None) => (None, None),
            (Some(r), Some(u)) => {
                let rank: u32 = r.parse().map_err(|_| format!("bad ItemRank {r:?}"))?;
                if rank == 0 {
                    return Err("ItemRank 0".into());
                }
                (Some(u.to_string()), Some(rank))
            }
            (Some(_), None) => return Err("ItemRank without ClickURL".into()),
            (None, Some(_)) => return Err("ClickURL without ItemRank".into()),
        };

        Ok(RawLogRecord {
            user_key: user.to_string(),
            query_text: get(self.query).to_string(),
            ts_ms: ts,
            clicked_doc,
            clicked_rank,
            session_key: opt(self.session).map(str::to_string),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "AnonID\tQuery\tQueryTime\tItemRank\tClickURL\n";

    #[test]
    fn query_only_row() {
        let p = parse_weblog_tsv_from(format!("{HEADER}1\thotels\t2006-03-01 07:17:12\t\t\n").as_bytes()).unwrap();
        assert_eq!(p.records.len(), 1);
        let r = &p.records[0];
        assert_eq!(r.clicked_doc, None);
        assert_eq!(r.clicked_rank, None);
        assert_eq!(r.ts_ms, 1_141_197_432_000);
    }

    #[test]
    fn click_row() {
        let p = parse_weblog_tsv_from(
            format!("{HEADER}1\thotels\t2006-03-01 07:17:12\t2\thttp://a.com\n").as_bytes(),
        )
        .unwrap();
        assert_eq!(p.records[0].clicked_rank, Some(2));
        assert_eq!(p.records[0].clicked_doc.as_deref(), Some("http://a.com"));
    }

    #[test]
    fn malformed_rows_are_counted() {
        let body = [
            "1\ta\t2006-03-01 07:17:12",
            "1\tb\t2006-03-01 07:18:12\t1\thttp://x",
            "2\tc\tyesterday",
            "3\td\t2006-03-02 00:00:00",
            "4\te\t2006-03-02 00:00:01\t\t",
        ]
        .join("\n");
        let p = parse_weblog_tsv_from(format!("{HEADER}{body}\n").as_bytes()).unwrap();
        assert_eq!(p.data_rows, 5);
        assert_eq!(p.records.len(), 4);
        assert_eq!(p.errors.len(), 1);
        assert_eq!(p.errors[0].line, 4);
    }

    #[test]
    fn unknown_columns_are_reported() {
        let p = parse_weblog_tsv_from("AnonID\tQuery\tQueryTime\tItemRank\tClickURL\tBrowser\n".as_bytes()).unwrap();
        assert_eq!(p.dropped_fields, vec!["Browser"]);
    }
}
