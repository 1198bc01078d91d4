//! Seeded synthetic search logs for desk-scale experiments.

use rand::Rng;
use rand_distr::{Distribution, Exp, LogNormal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{config_hash, LossManifest, Qrels};
use crate::derive_stream;
use crate::error::{Error, Result};
use crate::schema::{validate_session, Event, Payload, SerpResult, Session, SessionCorpus};

/// Generation parameters. Every field is recorded in the output manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub dataset_id: String,
    pub n_sessions: usize,
    pub serp_depth: u32,
    pub vocab_size: usize,
    /// Probability of issuing another query after each query.
    pub continue_prob: f64,
    pub max_queries: usize,
    /// Mean tokens per fresh query (at least one token).
    pub query_len_mean: f64,
    /// Probability that each token of the previous query survives a reformulation.
    pub reformulation_keep: f64,
    /// Per-rank click probability (index 0 = rank 1). Must cover `serp_depth`.
    pub click_propensities: Vec<f64>,
    pub relevance: Option<SynthRelevance>,
    pub dwell_log_mean: f64,
    pub dwell_log_sd: f64,
    /// Mean gap between consecutive events, ms (exponential).
    pub inter_event_ms: f64,
    pub user_hash_fraction: f64,
}

/// Relevance-aware clicking: a doc at rank r is relevant with
/// `p_relevant_by_rank[r-1]`; clicks on non-relevant docs are scaled down.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRelevance {
    pub p_relevant_by_rank: Vec<f64>,
    pub nonrelevant_click_scale: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            dataset_id: "synth".into(),
            n_sessions: 100,
            serp_depth: 10,
            vocab_size: 500,
            continue_prob: 0.5,
            max_queries: 8,
            query_len_mean: 2.5,
            reformulation_keep: 0.6,
            click_propensities: (1..=10).map(|r| 0.6 / r as f64).collect(),
            relevance: None,
            dwell_log_mean: 10.3,
            dwell_log_sd: 1.0,
            inter_event_ms: 8000.0,
            user_hash_fraction: 1.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if self.serp_depth == 0 {
            return bad("serp_depth must be >= 1".into());
        }
        if self.vocab_size == 0 {
            return bad("vocab_size must be >= 1".into());
        }
        if self.max_queries == 0 {
            return bad("max_queries must be >= 1".into());
        }
        if self.click_propensities.len() < self.serp_depth as usize {
            return bad(format!(
                "click_propensities has {} entries, serp_depth is {}",
                self.click_propensities.len(),
                self.serp_depth
            ));
        }
        if !self.click_propensities.iter().all(|&p| prob(p)) {
            return bad("click_propensities must lie in [0,1]".into());
        }
        for (name, p) in [
            ("continue_prob", self.continue_prob),
            ("reformulation_keep", self.reformulation_keep),
            ("user_hash_fraction", self.user_hash_fraction),
        ] {
            if !prob(p) {
                return bad(format!("{name} must lie in [0,1]"));
            }
        }
        if !(self.query_len_mean >= 1.0) || !(self.inter_event_ms > 0.0) || !(self.dwell_log_sd >= 0.0) {
            return bad("query_len_mean >= 1, inter_event_ms > 0, dwell_log_sd >= 0 required".into());
        }
        if let Some(rel) = &self.relevance {
            if rel.p_relevant_by_rank.len() < self.serp_depth as usize
                || !rel.p_relevant_by_rank.iter().all(|&p| prob(p))
                || !prob(rel.nonrelevant_click_scale)
            {
                return bad("relevance probabilities must cover serp_depth and lie in [0,1]".into());
            }
        }
        Ok(())
    }
}

/// A synthetic corpus plus binary qrels for its SERP documents (empty when
/// the spec has no relevance model).
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub corpus: SessionCorpus,
    pub qrels: Qrels,
}

pub fn generate_synthetic_log(spec: &SynthSpec, seed: u64) -> Result<SessionCorpus> {
    Ok(generate_synthetic_dataset(spec, seed)?.corpus)
}

pub fn generate_synthetic_dataset(spec: &SynthSpec, seed: u64) -> Result<SyntheticDataset> {
    spec.validate()?;
    let generated: Vec<(Session, Vec<(String, String)>)> = (0..spec.n_sessions)
        .into_par_iter()
        .map(|i| generate_session(spec, seed, i))
        .collect();

    let mut qrels = Qrels::new();
    let mut sessions = Vec::with_capacity(generated.len());
    for (s, rel) in generated {
        debug_assert!(validate_session(&s).is_empty());
        for (q, d) in rel {
            qrels.insert(q, d, 1);
        }
        sessions.push(s);
    }

    let params = serde_json::json!({ "spec": spec, "seed": seed });
    let mut manifest = LossManifest::new(spec.dataset_id.clone());
    manifest.dataset_version = "synthetic-v1".into();
    manifest.seed = seed;
    manifest.config_hash = config_hash(&params);
    manifest.input_record_count = spec.n_sessions as u64;
    manifest.candidate_session_count = spec.n_sessions as u64;
    manifest.generator = Some(params);
    manifest.finish(&sessions);
    Ok(SyntheticDataset {
        corpus: SessionCorpus::new(sessions, manifest)?,
        qrels,
    })
}

fn generate_session(spec: &SynthSpec, seed: u64, index: usize) -> (Session, Vec<(String, String)>) {
    let mut rng = derive_stream!(seed; "synth", spec.dataset_id.as_str(), index);
    let gap = Exp::new(1.0 / spec.inter_event_ms).expect("positive rate");
    let dwell = LogNormal::new(spec.dwell_log_mean, spec.dwell_log_sd).expect("valid lognormal");
    let extra_tokens = Poisson::new(spec.query_len_mean - 1.0).ok();

    let sid = format!("{}-s{:06}", spec.dataset_id, index);
    let mut ts: i64 = 1_600_000_000_000 + rng.random_range(0..86_400_000);
    let mut step = |rng: &mut crate::rng::Stream| {
        ts += 1 + gap.sample(rng) as i64;
        ts
    };

    let mut events = Vec::new();
    let mut relevant = Vec::new();
    let mut prev_tokens: Vec<usize> = Vec::new();
    let mut k = 0;
    loop {
        let qid = format!("{sid}-q{k}");
        let target_len = 1 + extra_tokens.map_or(0, |p| p.sample(&mut rng) as usize);
        let mut tokens: Vec<usize> = prev_tokens
            .iter()
            .copied()
            .filter(|_| rng.random_bool(spec.reformulation_keep))
            .collect();
        while tokens.len() < target_len {
            tokens.push(rng.random_range(0..spec.vocab_size));
        }
        if !prev_tokens.is_empty() && tokens == prev_tokens {
            tokens.push(rng.random_range(0..spec.vocab_size));
        }
        let text = tokens.iter().map(|t| format!("w{t}")).collect::<Vec<_>>().join(" ");
        events.push(Event::query(step(&mut rng), qid.clone(), text));

        let results: Vec<SerpResult> = (1..=spec.serp_depth)
            .map(|rank| SerpResult {
                doc_id: format!("{qid}-d{rank}"),
                rank,
            })
            .collect();
        let mut clicks = Vec::new();
        for r in &results {
            let idx = r.rank as usize - 1;
            let mut p = spec.click_propensities[idx];
            if let Some(rel) = &spec.relevance {
                if rng.random_bool(rel.p_relevant_by_rank[idx]) {
                    relevant.push((qid.clone(), r.doc_id.clone()));
                } else {
                    p *= rel.nonrelevant_click_scale;
                }
            }
            if rng.random_bool(p) {
                clicks.push((r.doc_id.clone(), r.rank));
            }
        }
        events.push(Event::new(
            step(&mut rng),
            Some(qid.clone()),
            Payload::SerpView {
                results,
                synthetic: false,
            },
        ));
        for (doc, rank) in clicks {
            events.push(Event::click(step(&mut rng), qid.clone(), doc.clone(), rank));
            events.push(Event::dwell(step(&mut rng), qid.clone(), doc, dwell.sample(&mut rng).round() as u64));
        }

        prev_tokens = tokens;
        k += 1;
        if k >= spec.max_queries || !rng.random_bool(spec.continue_prob) {
            break;
        }
    }

    let mut session = Session::real(sid, spec.dataset_id.clone(), events);
    if rng.random_bool(spec.user_hash_fraction) {
        session.user_hash = Some(format!("u{:016x}", rng.random::<u64>()));
    }
    (session, relevant)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::EventType;

    #[test]
    fn deterministic_given_seed() {
        let spec = SynthSpec::default();
        let a = generate_synthetic_log(&spec, 7).unwrap();
        let b = generate_synthetic_log(&spec, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 100);
        assert_ne!(a.sessions, generate_synthetic_log(&spec, 8).unwrap().sessions);
    }

    #[test]
    fn sessions_are_valid_and_bounded() {
        let corpus = generate_synthetic_log(&SynthSpec::default(), 3).unwrap();
        for s in &corpus.sessions {
            assert!(validate_session(s).is_empty());
            assert!(s.click_ranks().all(|r| (1..=10).contains(&r)));
        }
        assert!(corpus.manifest.reconciles());
        assert!(corpus.manifest.generator.is_some());
    }

    #[test]
    fn zero_propensities_give_no_clicks() {
        let spec = SynthSpec {
            click_propensities: vec![0.0; 10],
            ..Default::default()
        };
        let corpus = generate_synthetic_log(&spec, 1).unwrap();
        assert_eq!(corpus.sessions.iter().map(|s| s.count(EventType::Click)).sum::<usize>(), 0);
    }

    #[test]
    fn relevance_model_emits_qrels() {
        let spec = SynthSpec {
            relevance: Some(SynthRelevance {
                p_relevant_by_rank: vec![0.5; 10],
                nonrelevant_click_scale: 0.1,
            }),
            ..Default::default()
        };
        let ds = generate_synthetic_dataset(&spec, 1).unwrap();
        assert!(!ds.qrels.is_empty());
    }

    #[test]
    fn invalid_specs_rejected() {
        let too_short = SynthSpec {
            click_propensities: vec![0.5; 3],
            ..Default::default()
        };
        assert!(generate_synthetic_log(&too_short, 1).is_err());
        let bad_prob = SynthSpec {
            continue_prob: 1.5,
            ..Default::default()
        };
        assert!(generate_synthetic_log(&bad_prob, 1).is_err());
    }
}
