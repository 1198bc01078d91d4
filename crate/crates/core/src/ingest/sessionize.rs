//! Inactivity-timeout sessionization of per-user query rows.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{config_hash_of, DropReason, LossManifest, SessionizationParams};
use crate::schema::{validate_session, Event, Payload, SerpResult, Session};

/// One row of a generic web query log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawLogRecord {
    pub user_key: String,
    pub query_text: String,
    pub ts_ms: i64,
    pub clicked_doc: Option<String>,
    pub clicked_rank: Option<u32>,
    /// Source-declared session boundary, when the log has one.
    pub session_key: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionizeConfig {
    pub dataset_id: String,
    pub dataset_version: String,
    /// Gaps strictly greater than this split a session. 30 for web logs, 60 for academic search.
    pub timeout_minutes: f64,
    /// Sessions with fewer query actions are dropped as BELOW_MIN_LENGTH.
    pub min_session_events: usize,
    /// Depth of the padded SERP synthesized for click rows.
    pub serp_depth: u32,
    pub timestamp_resolution_ms: u64,
}

impl Default for SessionizeConfig {
    fn default() -> Self {
        SessionizeConfig {
            dataset_id: "weblog".into(),
            dataset_version: "unversioned".into(),
            timeout_minutes: 30.0,
            min_session_events: 2,
            serp_depth: 10,
            timestamp_resolution_ms: 1000,
        }
    }
}

/// A query plus the clicks logged against it.
struct QueryAction<'a> {
    ts_ms: i64,
    text: &'a str,
    clicks: Vec<(&'a str, u32)>,
}

impl QueryAction<'_> {
    fn conflicts(&self, doc: &str, rank: u32) -> bool {
        self.clicks
            .iter()
            .any(|&(d, r)| (d == doc) != (r == rank))
    }
}

/// Split records into sessions and account for every candidate.
///
/// Records are grouped by `user_key` and ordered by timestamp, with ties broken
/// by record content so the result does not depend on input order. A gap
/// strictly greater than the timeout, or a change of source session key,
/// starts a new session.
pub fn sessionize(records: &[RawLogRecord], cfg: &SessionizeConfig) -> (Vec<Session>, LossManifest) {
    let mut by_user: BTreeMap<&str, Vec<&RawLogRecord>> = BTreeMap::new();
    for r in records {
        by_user.entry(r.user_key.as_str()).or_default().push(r);
    }
    let timeout_ms = cfg.timeout_minutes * 60_000.0;

    let per_user: Vec<UserOutcome> = by_user
        .into_par_iter()
        .map(|(user, mut rows)| {
            rows.sort_by(|a, b| {
                (a.ts_ms, &a.session_key, &a.query_text, a.clicked_rank, &a.clicked_doc).cmp(&(
                    b.ts_ms,
                    &b.session_key,
                    &b.query_text,
                    b.clicked_rank,
                    &b.clicked_doc,
                ))
            });
            sessionize_user(user, &rows, timeout_ms, cfg)
        })
        .collect();

    let mut manifest = LossManifest::new(cfg.dataset_id.clone());
    manifest.dataset_version = cfg.dataset_version.clone();
    manifest.input_record_count = records.len() as u64;
    manifest.timestamp_resolution_ms = cfg.timestamp_resolution_ms;
    manifest.sessionization = Some(SessionizationParams {
        timeout_minutes: cfg.timeout_minutes,
        min_session_events: cfg.min_session_events,
    });
    manifest.config_hash = config_hash_of(cfg).unwrap_or_default();

    let mut sessions = Vec::new();
    for outcome in per_user {
        manifest.candidate_session_count += outcome.candidates;
        manifest.add_drop(DropReason::BelowMinLength, outcome.below_min);
        manifest.add_drop(DropReason::ValidationFailed, outcome.invalid);
        sessions.extend(outcome.sessions);
    }
    manifest.finish(&sessions);
    (sessions, manifest)
}

struct UserOutcome {
    sessions: Vec<Session>,
    candidates: u64,
    below_min: u64,
    invalid: u64,
}

fn sessionize_user(user: &str, rows: &[&RawLogRecord], timeout_ms: f64, cfg: &SessionizeConfig) -> UserOutcome {
    let user_hash = short_hash(user, 16);
    let mut out = UserOutcome {
        sessions: Vec::new(),
        candidates: 0,
        below_min: 0,
        invalid: 0,
    };

    let mut groups: Vec<&[&RawLogRecord]> = Vec::new();
    let mut start = 0;
    for i in 1..rows.len() {
        let gap = (rows[i].ts_ms - rows[i - 1].ts_ms) as f64;
        if gap > timeout_ms || rows[i].session_key != rows[i - 1].session_key {
            groups.push(&rows[start..i]);
            start = i;
        }
    }
    if !rows.is_empty() {
        groups.push(&rows[start..]);
    }

    for (k, group) in groups.into_iter().enumerate() {
        out.candidates += 1;
        let actions = query_actions(group);
        if actions.len() < cfg.min_session_events {
            out.below_min += 1;
            continue;
        }
        let session_id = format!("{}-{}-{:04}", cfg.dataset_id, &user_hash[..12], k);
        let mut session = Session::real(session_id, cfg.dataset_id.clone(), build_events(&actions, cfg.serp_depth));
        session.user_hash = Some(user_hash.clone());
        if validate_session(&session).is_empty() {
            out.sessions.push(session);
        } else {
            out.invalid += 1;
        }
    }
    out
}

/// Merge consecutive rows logging the same query at the same time into one action.
fn query_actions<'a>(rows: &[&'a RawLogRecord]) -> Vec<QueryAction<'a>> {
    let mut actions: Vec<QueryAction<'a>> = Vec::new();
    for r in rows {
        let click = r.clicked_doc.as_deref().zip(r.clicked_rank);
        if let Some(last) = actions.last_mut() {
            if last.ts_ms == r.ts_ms && last.text == r.query_text {
                match click {
                    None => continue,
                    Some((doc, rank)) if !last.conflicts(doc, rank) => {
                        if !last.clicks.contains(&(doc, rank)) {
                            last.clicks.push((doc, rank));
                        }
                        continue;
                    }
                    Some(_) => {}
                }
            }
        }
        actions.push(QueryAction {
            ts_ms: r.ts_ms,
            text: &r.query_text,
            clicks: click.into_iter().collect(),
        });
    }
    actions
}

fn build_events(actions: &[QueryAction<'_>], depth: u32) -> Vec<Event> {
    let mut events = Vec::new();
    for a in actions {
        let qid = format!("q{}", short_hash(&a.text.trim().to_lowercase(), 12));
        events.push(Event::query(a.ts_ms, qid.clone(), a.text));
        if a.clicks.is_empty() {
            continue;
        }
        let mut clicks = a.clicks.clone();
        clicks.sort_by_key(|&(_, r)| r);
        let n = clicks.iter().map(|&(_, r)| r).max().unwrap_or(0).max(depth);
        let placed: HashMap<u32, &str> = clicks.iter().map(|&(d, r)| (r, d)).collect();
        let results = (1..=n)
            .map(|rank| SerpResult {
                doc_id: placed
                    .get(&rank)
                    .map(|d| d.to_string())
                    .unwrap_or_else(|| format!("pad:{qid}:{rank}")),
                rank,
            })
            .collect();
        events.push(Event::new(
            a.ts_ms,
            Some(qid.clone()),
            Payload::SerpView {
                results,
                synthetic: true,
            },
        ));
        for (doc, rank) in clicks {
            events.push(Event::click(a.ts_ms, qid.clone(), doc, rank));
        }
    }
    events
}

pub(crate) fn short_hash(s: &str, len: usize) -> String {
    let mut h = hex::encode(Sha256::digest(s.as_bytes()));
    h.truncate(len);
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::EventType;

    fn rec(user: &str, minute: i64, q: &str) -> RawLogRecord {
        RawLogRecord {
            user_key: user.into(),
            query_text: q.into(),
            ts_ms: minute * 60_000,
            clicked_doc: None,
            clicked_rank: None,
            session_key: None,
        }
    }

    fn cfg(min: usize) -> SessionizeConfig {
        SessionizeConfig {
            min_session_events: min,
            ..Default::default()
        }
    }

    #[test]
    fn split_on_gap_over_timeout() {
        let rows = vec![rec("u", 0, "a"), rec("u", 10, "b"), rec("u", 45, "c")];
        let (sessions, m) = sessionize(&rows, &cfg(1));
        assert_eq!(sessions.len(), 2);
        assert_eq!(sessions[0].count(EventType::Query), 2);
        assert_eq!(sessions[1].count(EventType::Query), 1);
        assert!(m.reconciles());
    }

    #[test]
    fn boundary_gap_keeps_session() {
        let rows = vec![rec("u", 0, "a"), rec("u", 30, "b")];
        let (sessions, _) = sessionize(&rows, &cfg(1));
        assert_eq!(sessions.len(), 1);
    }

    #[test]
    fn single_query_users_dropped() {
        let rows = vec![rec("a", 0, "x"), rec("b", 0, "y"), rec("c", 0, "z")];
        let (sessions, m) = sessionize(&rows, &cfg(2));
        assert!(sessions.is_empty());
        assert_eq!(m.dropped_sessions_by_reason[&DropReason::BelowMinLength], 3);
        assert_eq!(m.candidate_session_count, 3);
        assert!(m.reconciles());
    }

    #[test]
    fn clicks_get_a_padded_serp() {
        let mut c1 = rec("u", 0, "hotels");
        c1.clicked_doc = Some("http://a".into());
        c1.clicked_rank = Some(12);
        let mut c2 = c1.clone();
        c2.clicked_doc = Some("http://b".into());
        c2.clicked_rank = Some(2);
        let rows = vec![c1, c2, rec("u", 5, "cheap hotels")];
        let (sessions, m) = sessionize(&rows, &cfg(2));
        assert_eq!(sessions.len(), 1);
        let s = &sessions[0];
        assert!(validate_session(s).is_empty());
        assert_eq!(s.count(EventType::Query), 2);
        assert_eq!(s.count(EventType::Click), 2);
        let serp_len = s
            .events
            .iter()
            .find_map(|e| match &e.payload {
                Payload::SerpView { results, synthetic } => {
                    assert!(synthetic);
                    Some(results.len())
                }
                _ => None,
            })
            .unwrap();
        assert_eq!(serp_len, 12);
        assert_eq!(m.synthetic_serp_count, 1);
        assert_eq!(m.missingness["serp_results"], 1.0);
    }

    #[test]
    fn source_session_key_splits() {
        let mut a = rec("u", 0, "a");
        a.session_key = Some("1".into());
        let mut b = rec("u", 1, "b");
        b.session_key = Some("2".into());
        let (sessions, _) = sessionize(&[a, b], &cfg(1));
        assert_eq!(sessions.len(), 2);
    }

    #[test]
    fn input_order_does_not_matter() {
        let mut rows: Vec<RawLogRecord> = (0..40)
            .map(|i| rec(&format!("u{}", i % 5), (i * 7 % 23) as i64 * 11, &format!("q{}", i % 3)))
            .collect();
        let (a, _) = sessionize(&rows, &cfg(1));
        rows.reverse();
        rows.swap(3, 17);
        let (b, _) = sessionize(&rows, &cfg(1));
        assert_eq!(a, b);
    }
}
