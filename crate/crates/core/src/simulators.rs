//! Reference click simulators that replay real SERPs and re-sample clicks.
//!
//! Every simulator keeps the source session's QUERY, SERP_VIEW and
//! conversational events, drops its CLICK/DWELL events, and inserts newly
//! sampled CLICK+DWELL pairs after each SERP_VIEW. Inserted events are spaced
//! by the source session's median inter-event gap.

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{config_hash_of, LossManifest, Qrels};
use crate::rng::Stream;
use crate::schema::{validate_session, Event, Label, Payload, SerpResult, Session, SessionCorpus};

/// Fallback spacing for inserted events when the source has no usable gap.
pub const FALLBACK_GAP_MS: i64 = 5000;

/// Suffix separating a simulated session id from its source session id.
pub const PAIR_SEPARATOR: &str = "::";

const PARAPHRASE_VOCAB: [&str; 12] = [
    "please", "find", "detailed", "information", "about", "explain", "comprehensive", "overview",
    "regarding", "specifically", "related", "examples",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimulatorKind {
    Pbm,
    Dbn,
    Heuristic,
    #[serde(alias = "llm_sim", alias = "llm-sim")]
    Llm,
}

impl SimulatorKind {
    pub fn default_id(self) -> &'static str {
        match self {
            SimulatorKind::Pbm => "pbm",
            SimulatorKind::Dbn => "dbn",
            SimulatorKind::Heuristic => "heuristic",
            SimulatorKind::Llm => "llm-sim",
        }
    }
}

impl std::str::FromStr for SimulatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pbm" => Ok(SimulatorKind::Pbm),
            "dbn" => Ok(SimulatorKind::Dbn),
            "heuristic" => Ok(SimulatorKind::Heuristic),
            "llm" | "llm-sim" | "llm_sim" => Ok(SimulatorKind::Llm),
            other => Err(Error::InvalidConfig(format!("unknown simulator kind {other:?}"))),
        }
    }
}

/// Position-based model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PbmParams {
    pub attract_nonrel: f64,
    pub attract_rel: f64,
    /// Examination probability per rank (index 0 = rank 1). `None` means 1/r.
    /// Ranks past the end reuse the last entry.
    pub examination_curve: Option<Vec<f64>>,
}

impl Default for PbmParams {
    fn default() -> Self {
        PbmParams {
            attract_nonrel: 0.05,
            attract_rel: 0.55,
            examination_curve: None,
        }
    }
}

impl PbmParams {
    pub fn examination(&self, rank: u32) -> f64 {
        let rank = rank.max(1);
        match &self.examination_curve {
            Some(curve) if !curve.is_empty() => {
                let i = (rank as usize - 1).min(curve.len() - 1);
                curve[i]
            }
            _ => 1.0 / rank as f64,
        }
    }
}

/// Cascade model parameters. Only `gamma` has a literature value; the
/// satisfaction pair is a local default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DbnParams {
    pub attract_nonrel: f64,
    pub attract_rel: f64,
    pub satisfy_nonrel: f64,
    pub satisfy_rel: f64,
    pub gamma: f64,
}

impl Default for DbnParams {
    fn default() -> Self {
        DbnParams {
            attract_nonrel: 0.05,
            attract_rel: 0.55,
            satisfy_nonrel: 0.1,
            satisfy_rel: 0.7,
            gamma: 0.20,
        }
    }
}

/// How many clicks the rank heuristic places on a SERP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ClickCount {
    /// Copy the number of clicks the source session logged on that SERP.
    CopyReal,
    /// K ~ Geometric(p) on {0, 1, ...}; mean (1-p)/p.
    Geometric { p: f64 },
    Fixed { k: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeuristicParams {
    pub click_count: ClickCount,
    /// Click volume used when presented with synthetic testbed SERPs, which
    /// carry no source clicks to copy.
    pub testbed_click_count: ClickCount,
}

impl Default for HeuristicParams {
    fn default() -> Self {
        HeuristicParams {
            click_count: ClickCount::CopyReal,
            testbed_click_count: ClickCount::Geometric { p: 0.5 },
        }
    }
}

/// Stylization knobs for the LLM-style simulator (local defaults).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmParams {
    pub depth_shift_p: f64,
    pub dwell_multiplier: f64,
    pub paraphrase_prob: f64,
}

impl Default for LlmParams {
    fn default() -> Self {
        LlmParams {
            depth_shift_p: 0.5,
            dwell_multiplier: 1.8,
            paraphrase_prob: 0.3,
        }
    }
}

/// Log-normal dwell model, `ln(dwell_ms) ~ N(log_mean, log_sd²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DwellModel {
    pub log_mean: f64,
    pub log_sd: f64,
}

impl Default for DwellModel {
    fn default() -> Self {
        DwellModel {
            log_mean: 10.3,
            log_sd: 1.0,
        }
    }
}

impl DwellModel {
    /// Maximum-likelihood fit to a corpus's positive DWELL values; the default
    /// model when fewer than two are available.
    pub fn fit(corpus: &SessionCorpus) -> Self {
        let logs: Vec<f64> = corpus
            .sessions
            .iter()
            .flat_map(|s| s.dwell_times())
            .filter(|&d| d > 0)
            .map(|d| (d as f64).ln())
            .collect();
        if logs.len() < 2 {
            return DwellModel::default();
        }
        let n = logs.len() as f64;
        let mean = logs.iter().sum::<f64>() / n;
        let var = logs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        DwellModel {
            log_mean: mean,
            log_sd: var.sqrt(),
        }
    }

    pub fn sample(&self, rng: &mut Stream) -> f64 {
        LogNormal::new(self.log_mean, self.log_sd)
            .map(|d| d.sample(rng))
            .unwrap_or_else(|_| self.log_mean.exp())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulatorConfig {
    pub kind: SimulatorKind,
    /// Defaults to the kind's canonical id.
    pub id: Option<String>,
    pub pbm: PbmParams,
    pub dbn: DbnParams,
    pub heuristic: HeuristicParams,
    pub llm: LlmParams,
    /// Docs with grade strictly above this count as relevant.
    pub relevance_threshold: i32,
    /// Dwell model; `None` fits one to the real corpus in `simulate_corpus`.
    pub dwell: Option<DwellModel>,
    pub seed: u64,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        SimulatorConfig {
            kind: SimulatorKind::Pbm,
            id: None,
            pbm: PbmParams::default(),
            dbn: DbnParams::default(),
            heuristic: HeuristicParams::default(),
            llm: LlmParams::default(),
            relevance_threshold: 0,
            dwell: None,
            seed: 0,
        }
    }
}

impl SimulatorConfig {
    pub fn of_kind(kind: SimulatorKind) -> Self {
        SimulatorConfig {
            kind,
            ..Default::default()
        }
    }

    pub fn simulator_id(&self) -> String {
        self.id.clone().unwrap_or_else(|| self.kind.default_id().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name}={p} is not a probability")))
            }
        };
        prob("pbm.attract_nonrel", self.pbm.attract_nonrel)?;
        prob("pbm.attract_rel", self.pbm.attract_rel)?;
        if let Some(curve) = &self.pbm.examination_curve {
            for &p in curve {
                prob("pbm.examination_curve", p)?;
            }
            if curve.windows(2).any(|w| w[1] > w[0]) {
                return Err(Error::InvalidConfig("examination_curve must be non-increasing".into()));
            }
        }
        prob("dbn.attract_nonrel", self.dbn.attract_nonrel)?;
        prob("dbn.attract_rel", self.dbn.attract_rel)?;
        prob("dbn.satisfy_nonrel", self.dbn.satisfy_nonrel)?;
        prob("dbn.satisfy_rel", self.dbn.satisfy_rel)?;
        prob("dbn.gamma", self.dbn.gamma)?;
        prob("llm.paraphrase_prob", self.llm.paraphrase_prob)?;
        if !(self.llm.depth_shift_p > 0.0 && self.llm.depth_shift_p <= 1.0) {
            return Err(Error::InvalidConfig("llm.depth_shift_p must lie in (0,1]".into()));
        }
        if !(self.llm.dwell_multiplier >= 0.0) {
            return Err(Error::InvalidConfig("llm.dwell_multiplier must be >= 0".into()));
        }
        for c in [self.heuristic.click_count, self.heuristic.testbed_click_count] {
            if let ClickCount::Geometric { p } = c {
                if !(p > 0.0 && p <= 1.0) {
                    return Err(Error::InvalidConfig("geometric click count needs p in (0,1]".into()));
                }
            }
        }
        Ok(())
    }
}

/// Anything that turns a source session into a simulated one.
///
/// Output must pass [`validate_session`], carry `label = SIMULATED` and a
/// simulator id, and reuse the source's QUERY/SERP_VIEW events.
pub trait SimulatorAdapter: Send + Sync {
    fn id(&self) -> &str;
    fn simulate(&self, real: &Session, relevance: &Qrels, rng: &mut Stream) -> Session;
}

/// The four reference simulators behind one configuration.
#[derive(Debug, Clone)]
pub struct ClickSimulator {
    cfg: SimulatorConfig,
    id: String,
    dwell: DwellModel,
    testbed_mode: bool,
}

impl ClickSimulator {
    pub fn new(cfg: SimulatorConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(ClickSimulator {
            id: cfg.simulator_id(),
            dwell: cfg.dwell.unwrap_or_default(),
            cfg,
            testbed_mode: false,
        })
    }

    pub fn with_dwell(mut self, dwell: DwellModel) -> Self {
        self.dwell = dwell;
        self
    }

    /// Use the testbed click volume for the rank heuristic.
    pub fn for_testbed(mut self) -> Self {
        self.testbed_mode = true;
        self
    }

    pub fn config(&self) -> &SimulatorConfig {
        &self.cfg
    }

    pub fn dwell_model(&self) -> DwellModel {
        self.dwell
    }

    fn is_relevant(&self, qrels: &Qrels, query_id: Option<&str>, doc: &str) -> bool {
        qrels.grade(query_id, doc) > self.cfg.relevance_threshold
    }

    /// Sample clicked ranks (1-based, ascending) for one SERP.
    pub fn sample_clicks(&self, rel: &[bool], real_clicks: usize, rng: &mut Stream) -> Vec<u32> {
        match self.cfg.kind {
            SimulatorKind::Pbm => pbm_clicks(&self.cfg.pbm, rel, None, rng),
            SimulatorKind::Llm => pbm_clicks(&self.cfg.pbm, rel, Some(self.cfg.llm.depth_shift_p), rng),
            SimulatorKind::Dbn => dbn_scan(&self.cfg.dbn, rel, rng).clicks,
            SimulatorKind::Heuristic => {
                let mode = if self.testbed_mode {
                    self.cfg.heuristic.testbed_click_count
                } else {
                    self.cfg.heuristic.click_count
                };
                let k = match mode {
                    ClickCount::CopyReal => real_clicks,
                    ClickCount::Geometric { p } => geometric(p, rng) as usize,
                    ClickCount::Fixed { k } => k as usize,
                };
                heuristic_clicks(rel.len(), k, rng)
            }
        }
    }

    fn dwell_ms(&self, rng: &mut Stream) -> u64 {
        let mut d = self.dwell.sample(rng);
        if self.cfg.kind == SimulatorKind::Llm {
            d *= self.cfg.llm.dwell_multiplier;
        }
        d.round().max(0.0) as u64
    }

    fn paraphrase(&self, text: &str, rng: &mut Stream) -> Option<String> {
        let p = self.cfg.llm.paraphrase_prob;
        if self.cfg.kind != SimulatorKind::Llm || p <= 0.0 || !rng.random_bool(p) {
            return None;
        }
        let extra = rng.random_range(2..=4);
        let mut out = text.to_string();
        for _ in 0..extra {
            out.push(' ');
            out.push_str(PARAPHRASE_VOCAB[rng.random_range(0..PARAPHRASE_VOCAB.len())]);
        }
        Some(out)
    }
}

impl SimulatorAdapter for ClickSimulator {
    fn id(&self) -> &str {
        &self.id
    }

    fn simulate(&self, real: &Session, relevance: &Qrels, rng: &mut Stream) -> Session {
        let gap = median_gap(real);
        let mut events = Vec::with_capacity(real.events.len());
        let mut cur = i64::MIN;
        let mut queries_seen = 0usize;

        for (i, e) in real.events.iter().enumerate() {
            match &e.payload {
                Payload::Click { .. } | Payload::Dwell { .. } => continue,
                Payload::Query { query_text } => {
                    let mut ev = e.clone();
                    if queries_seen > 0 {
                        if let Some(p) = self.paraphrase(query_text, rng) {
                            ev.payload = Payload::Query { query_text: p };
                        }
                    }
                    queries_seen += 1;
                    cur = cur.max(e.ts_ms);
                    ev.ts_ms = cur;
                    events.push(ev);
                }
                Payload::SerpView { results, .. } => {
                    cur = cur.max(e.ts_ms);
                    let mut ev = e.clone();
                    ev.ts_ms = cur;
                    events.push(ev);

                    let ordered = ordered_results(results);
                    let qid = e.query_id.as_deref();
                    let rel: Vec<bool> = ordered
                        .iter()
                        .map(|r| self.is_relevant(relevance, qid, &r.doc_id))
                        .collect();
                    let real_clicks = clicks_after(real, i);
                    for rank in self.sample_clicks(&rel, real_clicks, rng) {
                        let doc = &ordered[rank as usize - 1].doc_id;
                        cur += gap;
                        events.push(Event::new(
                            cur,
                            e.query_id.clone(),
                            Payload::Click {
                                doc_id: doc.clone(),
                                rank,
                            },
                        ));
                        cur += gap;
                        events.push(Event::new(
                            cur,
                            e.query_id.clone(),
                            Payload::Dwell {
                                doc_id: doc.clone(),
                                dwell_ms: self.dwell_ms(rng),
                            },
                        ));
                    }
                }
                Payload::ConvUser { .. } | Payload::ConvSystem { .. } => {
                    cur = cur.max(e.ts_ms);
                    let mut ev = e.clone();
                    ev.ts_ms = cur;
                    events.push(ev);
                }
            }
        }

        Session {
            schema_version: real.schema_version.clone(),
            session_id: paired_id(&real.session_id, &self.id),
            dataset_id: real.dataset_id.clone(),
            user_hash: real.user_hash.clone(),
            label: Label::Simulated,
            simulator_id: Some(self.id.clone()),
            events,
        }
    }
}

pub fn paired_id(real_id: &str, simulator_id: &str) -> String {
    format!("{real_id}{PAIR_SEPARATOR}{simulator_id}")
}

/// The source session id of a simulated session, if it follows the pairing convention.
pub fn source_id(sim_id: &str) -> Option<&str> {
    sim_id.rsplit_once(PAIR_SEPARATOR).map(|(src, _)| src)
}

fn ordered_results(results: &[SerpResult]) -> Vec<&SerpResult> {
    let mut v: Vec<&SerpResult> = results.iter().collect();
    v.sort_by_key(|r| r.rank);
    v
}

/// Clicks the source logged against the SERP at `serp_idx` (until the next SERP or query).
fn clicks_after(s: &Session, serp_idx: usize) -> usize {
    let qid = &s.events[serp_idx].query_id;
    s.events[serp_idx + 1..]
        .iter()
        .take_while(|e| !matches!(e.payload, Payload::SerpView { .. } | Payload::Query { .. }))
        .filter(|e| matches!(e.payload, Payload::Click { .. }) && &e.query_id == qid)
        .count()
}

fn median_gap(s: &Session) -> i64 {
    let mut gaps: Vec<i64> = s.events.windows(2).map(|w| w[1].ts_ms - w[0].ts_ms).collect();
    if gaps.is_empty() {
        return FALLBACK_GAP_MS;
    }
    gaps.sort_unstable();
    let m = gaps.len() / 2;
    let med = if gaps.len() % 2 == 1 {
        gaps[m]
    } else {
        (gaps[m - 1] + gaps[m]) / 2
    };
    if med > 0 {
        med
    } else {
        FALLBACK_GAP_MS
    }
}

/// Failures before the first success; 0 without consuming randomness when p >= 1.
fn geometric(p: f64, rng: &mut Stream) -> u64 {
    if p >= 1.0 {
        return 0;
    }
    let u: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
    (u.ln() / (1.0 - p).ln()).floor() as u64
}

/// Independent Bernoulli click per rank with p = examination(r) * attract(rel).
/// With `depth_shift`, each rank's examination is read at `r - G`,
/// `G ~ Geometric(depth_shift)`, which flattens the curve toward deeper ranks.
pub fn pbm_clicks(params: &PbmParams, rel: &[bool], depth_shift: Option<f64>, rng: &mut Stream) -> Vec<u32> {
    let mut out = Vec::new();
    for (i, &is_rel) in rel.iter().enumerate() {
        let rank = i as u32 + 1;
        let exam_rank = match depth_shift {
            Some(p) => rank.saturating_sub(geometric(p, rng) as u32).max(1),
            None => rank,
        };
        let attract = if is_rel { params.attract_rel } else { params.attract_nonrel };
        if rng.random::<f64>() < params.examination(exam_rank) * attract {
            out.push(rank);
        }
    }
    out
}

/// What one cascade scan did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DbnTrace {
    pub clicks: Vec<u32>,
    /// Deepest rank examined (0 for an empty SERP).
    pub examined_depth: u32,
    pub satisfied: bool,
}

/// Cascade from rank 1: click with attract(rel); a click satisfies with
/// satisfy(rel) and ends the scan; otherwise continue with probability gamma.
pub fn dbn_scan(params: &DbnParams, rel: &[bool], rng: &mut Stream) -> DbnTrace {
    let mut trace = DbnTrace {
        clicks: Vec::new(),
        examined_depth: 0,
        satisfied: false,
    };
    for (i, &is_rel) in rel.iter().enumerate() {
        trace.examined_depth = i as u32 + 1;
        let attract = if is_rel { params.attract_rel } else { params.attract_nonrel };
        if rng.random::<f64>() < attract {
            trace.clicks.push(i as u32 + 1);
            let satisfy = if is_rel { params.satisfy_rel } else { params.satisfy_nonrel };
            if rng.random::<f64>() < satisfy {
                trace.satisfied = true;
                break;
            }
        }
        if i + 1 == rel.len() || rng.random::<f64>() >= params.gamma {
            break;
        }
    }
    trace
}

/// Selection weights of the rank heuristic, normalized over a SERP of `n` results.
pub fn heuristic_weights(n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (1..=n).map(|r| 1.0 / r as f64).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// K distinct ranks drawn without replacement with probability ∝ 1/r, ascending.
pub fn heuristic_clicks(n: usize, k: usize, rng: &mut Stream) -> Vec<u32> {
    let k = k.min(n);
    let mut weights: Vec<f64> = (1..=n).map(|r| 1.0 / r as f64).collect();
    let mut picked = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut choice = None;
        for (i, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            choice = Some(i);
            if u < w {
                break;
            }
            u -= w;
        }
        let i = choice.expect("k <= n leaves a positive weight");
        weights[i] = 0.0;
        picked.push(i as u32 + 1);
    }
    picked.sort_unstable();
    picked
}

/// Simulate one session per real session. Each session draws from a stream
/// keyed by `(cfg.seed, simulator id, session id)`.
pub fn simulate_corpus(real: &SessionCorpus, relevance: &Qrels, cfg: &SimulatorConfig) -> Result<SessionCorpus> {
    let mut sim = ClickSimulator::new(cfg.clone())?;
    if cfg.dwell.is_none() {
        sim = sim.with_dwell(DwellModel::fit(real));
    }
    let params = serde_json::json!({ "simulator": cfg, "dwell_model": sim.dwell_model() });
    simulate_inner(real, relevance, &sim, cfg.seed, params)
}

pub fn simulate_corpus_with<S: SimulatorAdapter>(
    real: &SessionCorpus,
    relevance: &Qrels,
    sim: &S,
    seed: u64,
) -> Result<SessionCorpus> {
    let params = serde_json::json!({ "simulator_id": sim.id(), "seed": seed });
    simulate_inner(real, relevance, sim, seed, params)
}

fn simulate_inner<S: SimulatorAdapter>(
    real: &SessionCorpus,
    relevance: &Qrels,
    sim: &S,
    seed: u64,
    params: serde_json::Value,
) -> Result<SessionCorpus> {
    let sessions: Vec<Session> = real
        .sessions
        .par_iter()
        .map(|s| {
            let mut rng = derive_stream!(seed; "simulate", sim.id(), s.session_id.as_str());
            let out = sim.simulate(s, relevance, &mut rng);
            let violations = validate_session(&out);
            if violations.is_empty() {
                Ok(out)
            } else {
                Err(Error::InvalidSimulatorOutput {
                    simulator: sim.id().to_string(),
                    session_id: out.session_id.clone(),
                    codes: violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
                })
            }
        })
        .collect::<Result<_>>()?;

    let mut manifest = LossManifest::new(real.manifest.dataset_id.clone());
    manifest.dataset_version = real.manifest.dataset_version.clone();
    manifest.seed = seed;
    manifest.input_record_count = real.len() as u64;
    manifest.candidate_session_count = real.len() as u64;
    manifest.config_hash = config_hash_of(&params)?;
    manifest.generator = Some(params);
    manifest.finish(&sessions);
    SessionCorpus::new(sessions, manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::EventType;

    fn rng(seed: u64) -> Stream {
        derive_stream!(seed; "test")
    }

    fn session_with(docs: &[&str], clicks: &[(usize, &str)]) -> Session {
        let mut events = vec![Event::query(0, "q1", "a b"), Event::serp(1000, "q1", docs.iter().copied())];
        let mut t = 2000;
        for &(rank, doc) in clicks {
            events.push(Event::click(t, "q1", doc, rank as u32));
            events.push(Event::dwell(t + 1000, "q1", doc, 20_000));
            t += 2000;
        }
        events.push(Event::query(t, "q2", "a c"));
        events.push(Event::serp(t + 1000, "q2", docs.iter().map(|d| format!("{d}x"))));
        Session::real("s1", "test", events)
    }

    fn qrels(pairs: &[(&str, &str, i32)]) -> Qrels {
        let mut q = Qrels::new();
        for &(a, b, g) in pairs {
            q.insert(a, b, g);
        }
        q
    }

    #[test]
    fn pbm_top_relevant_click_rate() {
        let params = PbmParams::default();
        let mut r = rng(1);
        let n = 10_000;
        let hits = (0..n)
            .filter(|_| pbm_clicks(&params, &[true], None, &mut r) == vec![1])
            .count();
        let rate = hits as f64 / n as f64;
        assert!((rate - 0.55).abs() <= 0.02, "rate {rate}");
    }

    #[test]
    fn pbm_zero_examination_never_clicks() {
        let params = PbmParams {
            examination_curve: Some(vec![0.0]),
            ..Default::default()
        };
        let mut r = rng(2);
        for _ in 0..1000 {
            assert!(pbm_clicks(&params, &[false; 10], None, &mut r).is_empty());
        }
    }

    #[test]
    fn simulators_are_deterministic_and_valid() {
        let real = session_with(&["d1", "d2", "d3"], &[(2, "d2")]);
        let q = qrels(&[("q1", "d1", 1)]);
        for kind in [SimulatorKind::Pbm, SimulatorKind::Dbn, SimulatorKind::Heuristic, SimulatorKind::Llm] {
            let sim = ClickSimulator::new(SimulatorConfig::of_kind(kind)).unwrap();
            for seed in 0..50 {
                let a = sim.simulate(&real, &q, &mut rng(seed));
                let b = sim.simulate(&real, &q, &mut rng(seed));
                assert_eq!(a, b);
                assert!(validate_session(&a).is_empty(), "{kind:?}: {:?}", validate_session(&a));
                assert_eq!(a.label, Label::Simulated);
                assert_eq!(a.count(EventType::Query), 2);
                assert_eq!(a.count(EventType::SerpView), 2);
                assert_eq!(source_id(&a.session_id), Some("s1"));
            }
        }
    }

    #[test]
    fn dbn_gamma_zero_clicks_only_rank_one() {
        let params = DbnParams {
            gamma: 0.0,
            attract_nonrel: 1.0,
            satisfy_nonrel: 0.0,
            ..Default::default()
        };
        let mut r = rng(3);
        for _ in 0..200 {
            let t = dbn_scan(&params, &[false; 5], &mut r);
            assert_eq!(t.examined_depth, 1);
            assert!(t.clicks.iter().all(|&c| c == 1));
        }
    }

    #[test]
    fn dbn_certain_click_and_satisfaction() {
        let params = DbnParams {
            attract_rel: 1.0,
            attract_nonrel: 1.0,
            satisfy_rel: 1.0,
            satisfy_nonrel: 1.0,
            ..Default::default()
        };
        let t = dbn_scan(&params, &[false, true, true], &mut rng(4));
        assert_eq!(t.clicks, vec![1]);
        assert!(t.satisfied);
    }

    #[test]
    fn dbn_examination_decays_as_gamma_power() {
        let params = DbnParams {
            attract_nonrel: 0.0,
            attract_rel: 0.0,
            ..Default::default()
        };
        let mut r = rng(5);
        let n = 100_000;
        let reached = (0..n)
            .filter(|_| dbn_scan(&params, &[false; 5], &mut r).examined_depth >= 3)
            .count();
        let rate = reached as f64 / n as f64;
        assert!((rate - 0.04).abs() <= 0.004, "rate {rate}");
    }

    #[test]
    fn dbn_never_clicks_after_satisfaction() {
        let params = DbnParams {
            gamma: 0.9,
            ..Default::default()
        };
        let mut r = rng(6);
        for _ in 0..2000 {
            let t = dbn_scan(&params, &[true; 10], &mut r);
            if t.satisfied {
                assert_eq!(*t.clicks.last().unwrap(), t.examined_depth);
            }
        }
    }

    #[test]
    fn heuristic_single_draw_probabilities() {
        let w = heuristic_weights(3);
        for (got, want) in w.iter().zip([6.0 / 11.0, 3.0 / 11.0, 2.0 / 11.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        let mut r = rng(7);
        let n = 60_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[heuristic_clicks(3, 1, &mut r)[0] as usize - 1] += 1;
        }
        for (c, want) in counts.iter().zip(w) {
            let p = *c as f64 / n as f64;
            let sd = (want * (1.0 - want) / n as f64).sqrt();
            assert!((p - want).abs() < 4.0 * sd, "{p} vs {want}");
        }
    }

    #[test]
    fn heuristic_copies_click_volume_and_ignores_relevance() {
        let sim = ClickSimulator::new(SimulatorConfig::of_kind(SimulatorKind::Heuristic)).unwrap();
        let none = session_with(&["d1", "d2", "d3"], &[]);
        let out = sim.simulate(&none, &Qrels::new(), &mut rng(8));
        assert_eq!(out.count(EventType::Click), 0);

        let two = session_with(&["d1", "d2", "d3", "d4"], &[(1, "d1"), (3, "d3")]);
        let qa = qrels(&[("q1", "d1", 2), ("q1", "d4", 0)]);
        let qb = qrels(&[("q1", "d4", 2), ("q1", "d1", 0)]);
        for seed in 0..30 {
            let a = sim.simulate(&two, &qa, &mut rng(seed));
            let b = sim.simulate(&two, &qb, &mut rng(seed));
            assert_eq!(a, b);
            assert_eq!(a.count(EventType::Click), 2);
        }
    }

    #[test]
    fn llm_with_stylization_off_matches_pbm() {
        let mut cfg = SimulatorConfig::of_kind(SimulatorKind::Llm);
        cfg.id = Some("pbm".into());
        cfg.llm = LlmParams {
            depth_shift_p: 1.0,
            dwell_multiplier: 1.0,
            paraphrase_prob: 0.0,
        };
        let llm = ClickSimulator::new(cfg).unwrap();
        let pbm = ClickSimulator::new(SimulatorConfig::of_kind(SimulatorKind::Pbm)).unwrap();
        let real = session_with(&["d1", "d2", "d3", "d4", "d5"], &[(1, "d1")]);
        let q = qrels(&[("q1", "d1", 1), ("q1", "d3", 1), ("q2", "d2x", 1)]);
        for seed in 0..100 {
            assert_eq!(llm.simulate(&real, &q, &mut rng(seed)), pbm.simulate(&real, &q, &mut rng(seed)));
        }
    }

    #[test]
    fn llm_paraphrases_follow_up_queries() {
        let mut cfg = SimulatorConfig::of_kind(SimulatorKind::Llm);
        cfg.llm.paraphrase_prob = 1.0;
        let sim = ClickSimulator::new(cfg).unwrap();
        let real = session_with(&["d1", "d2"], &[]);
        let out = sim.simulate(&real, &Qrels::new(), &mut rng(9));
        let src: Vec<&str> = real.query_texts().collect();
        let got: Vec<&str> = out.query_texts().collect();
        assert_eq!(got[0], src[0]);
        assert!(got[1].len() > src[1].len());
        assert!(got[1].starts_with(src[1]));
    }

    #[test]
    fn llm_dwell_scales_mean() {
        let base = DwellModel {
            log_mean: 9.0,
            log_sd: 0.8,
        };
        let mut cfg = SimulatorConfig::of_kind(SimulatorKind::Llm);
        cfg.llm.dwell_multiplier = 1.8;
        let sim = ClickSimulator::new(cfg).unwrap().with_dwell(base);
        let mut r = rng(10);
        let n = 200_000;
        let sum: f64 = (0..n).map(|_| sim.dwell_ms(&mut r) as f64).sum();
        let source_mean = (base.log_mean + base.log_sd * base.log_sd / 2.0).exp();
        let ratio = sum / n as f64 / source_mean;
        assert!((ratio - 1.8).abs() / 1.8 < 0.05, "ratio {ratio}");
    }

    #[test]
    fn dwell_fit_recovers_parameters() {
        let spec = crate::ingest::SynthSpec {
            n_sessions: 3000,
            ..Default::default()
        };
        let corpus = crate::ingest::generate_synthetic_log(&spec, 11).unwrap();
        let fit = DwellModel::fit(&corpus);
        assert!((fit.log_mean - spec.dwell_log_mean).abs() < 0.05, "{fit:?}");
        assert!((fit.log_sd - spec.dwell_log_sd).abs() < 0.05, "{fit:?}");
    }

    #[test]
    fn corpus_simulation_is_order_independent() {
        let real = crate::ingest::generate_synthetic_log(&Default::default(), 5).unwrap();
        let cfg = SimulatorConfig {
            seed: 42,
            ..SimulatorConfig::of_kind(SimulatorKind::Dbn)
        };
        let a = simulate_corpus(&real, &Qrels::new(), &cfg).unwrap();
        let mut reversed = real.clone();
        reversed.sessions.reverse();
        let mut b = simulate_corpus(&reversed, &Qrels::new(), &cfg).unwrap();
        b.sessions.reverse();
        assert_eq!(a.sessions, b.sessions);

        let empty = SessionCorpus::new(vec![], LossManifest::new("x")).unwrap();
        assert!(simulate_corpus(&empty, &Qrels::new(), &cfg).unwrap().is_empty());
    }

    #[test]
    fn rejects_bad_probabilities() {
        let mut cfg = SimulatorConfig::default();
        cfg.pbm.attract_rel = 1.2;
        assert!(ClickSimulator::new(cfg).is_err());
        let mut cfg = SimulatorConfig::default();
        cfg.pbm.examination_curve = Some(vec![0.5, 0.9]);
        assert!(ClickSimulator::new(cfg).is_err());
    }
}
