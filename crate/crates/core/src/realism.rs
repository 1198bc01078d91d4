//! Marginal, sequential and representation-level distances between a real
//! and a simulated corpus, with session-bootstrap confidence intervals.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{auc, run_audit, AuditConfig, AuditResult, Variant, Verdict};
use crate::embeddings::{embed_sessions, EmbedLayout};
use crate::error::{Error, Result};
use crate::schema::{EventType, Session};
use crate::simulators::source_id;

pub const DWELL_BINS: usize = 50;

/// Marginal per-corpus features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Feature {
    SessionLength,
    ClickDepth,
    DwellTime,
    QueryLength,
}

impl Feature {
    pub const ALL: [Feature; 4] = [Feature::SessionLength, Feature::ClickDepth, Feature::DwellTime, Feature::QueryLength];

    pub fn slug(self) -> &'static str {
        match self {
            Feature::SessionLength => "session_length",
            Feature::ClickDepth => "click_depth",
            Feature::DwellTime => "dwell",
            Feature::QueryLength => "query_length",
        }
    }

    /// Values contributed by one session.
    pub fn extract(self, s: &Session) -> Vec<f64> {
        match self {
            Feature::SessionLength => vec![s.events.len() as f64],
            Feature::ClickDepth => s.click_ranks().map(f64::from).collect(),
            Feature::DwellTime => s.dwell_times().map(|d| d as f64).collect(),
            Feature::QueryLength => s.query_texts().map(|q| q.split_whitespace().count() as f64).collect(),
        }
    }

    pub fn extract_all(self, sessions: &[Session]) -> Vec<f64> {
        sessions.iter().flat_map(|s| self.extract(s)).collect()
    }
}

/// Base-2 Jensen–Shannon divergence of two histograms on the same bins.
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch(p.len(), q.len()));
    }
    let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
    if !(sp > 0.0) || !(sq > 0.0) {
        return Err(Error::EmptyDistribution);
    }
    let mut js = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let (a, b) = (a / sp, b / sq);
        let m = 0.5 * (a + b);
        if a > 0.0 {
            js += 0.5 * a * (a / m).log2();
        }
        if b > 0.0 {
            js += 0.5 * b * (b / m).log2();
        }
    }
    Ok(js.clamp(0.0, 1.0))
}

/// Unit-bin histograms over the union of integer-valued samples.
pub fn unit_histograms(xs: &[f64], ys: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let all = xs.iter().chain(ys);
    let lo = all.clone().fold(f64::INFINITY, |a, &b| a.min(b.round()));
    let hi = all.fold(f64::NEG_INFINITY, |a, &b| a.max(b.round()));
    if !lo.is_finite() {
        return (vec![], vec![]);
    }
    let n = (hi - lo) as usize + 1;
    let fill = |v: &[f64]| {
        let mut h = vec![0.0; n];
        for &x in v {
            h[(x.round() - lo) as usize] += 1.0;
        }
        h
    };
    (fill(xs), fill(ys))
}

/// `bins` equal-width bins in ln(1+x) over the pooled range.
pub fn log_histograms(xs: &[f64], ys: &[f64], bins: usize) -> (Vec<f64>, Vec<f64>) {
    let t = |x: f64| x.max(0.0).ln_1p();
    let all = xs.iter().chain(ys);
    let lo = all.clone().fold(f64::INFINITY, |a, &b| a.min(t(b)));
    let hi = all.fold(f64::NEG_INFINITY, |a, &b| a.max(t(b)));
    if !lo.is_finite() {
        return (vec![], vec![]);
    }
    let width = (hi - lo) / bins as f64;
    let fill = |v: &[f64]| {
        let mut h = vec![0.0; bins];
        for &x in v {
            let i = if width > 0.0 { ((t(x) - lo) / width) as usize } else { 0 };
            h[i.min(bins - 1)] += 1.0;
        }
        h
    };
    (fill(xs), fill(ys))
}

fn feature_histograms(f: Feature, xs: &[f64], ys: &[f64]) -> (Vec<f64>, Vec<f64>) {
    match f {
        Feature::DwellTime => log_histograms(xs, ys, DWELL_BINS),
        _ => unit_histograms(xs, ys),
    }
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Area between the two empirical CDFs.
pub fn wasserstein1(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    let (a, b) = (sorted(xs), sorted(ys));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut prev = a[0].min(b[0]);
    let mut area = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        area += (i as f64 / na - j as f64 / nb).abs() * (next - prev);
        while i < a.len() && a[i] == next {
            i += 1;
        }
        while j < b.len() && b[j] == next {
            j += 1;
        }
        prev = next;
    }
    Ok(area)
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_statistic(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    let (a, b) = (sorted(xs), sorted(ys));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] == x {
            i += 1;
        }
        while j < b.len() && b[j] == x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Counts of consecutive event-type pairs, indexed `from * 6 + to`.
pub fn bigram_counts(s: &Session) -> [f64; 36] {
    let mut c = [0.0; 36];
    for w in s.events.windows(2) {
        c[w[0].kind().code() * EventType::COUNT + w[1].kind().code()] += 1.0;
    }
    c
}

fn pooled_bigrams<'a>(sessions: impl Iterator<Item = &'a Session>) -> [f64; 36] {
    let mut total = [0.0; 36];
    for s in sessions {
        for (t, c) in total.iter_mut().zip(bigram_counts(s)) {
            *t += c;
        }
    }
    total
}

pub fn action_bigram_js(real: &[Session], sim: &[Session]) -> Result<f64> {
    js_divergence(&pooled_bigrams(real.iter()), &pooled_bigrams(sim.iter()))
}

pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn type_sequence(s: &Session) -> Vec<EventType> {
    s.event_types().collect()
}

pub fn normalized_levenshtein_pair(a: &Session, b: &Session) -> f64 {
    let (x, y) = (type_sequence(a), type_sequence(b));
    let m = x.len().max(y.len());
    if m == 0 {
        0.0
    } else {
        levenshtein(&x, &y) as f64 / m as f64
    }
}

/// For each simulated session, the index of its source among `real`.
/// A simulated id `<real>::<sim>` pairs with `<real>`; otherwise equal ids pair.
pub fn pair_sessions(real: &[Session], sim: &[Session]) -> Result<Vec<usize>> {
    let by_id: HashMap<&str, usize> = real.iter().enumerate().map(|(i, s)| (s.session_id.as_str(), i)).collect();
    let found: Vec<Option<usize>> = sim
        .iter()
        .map(|s| {
            source_id(&s.session_id)
                .and_then(|id| by_id.get(id))
                .or_else(|| by_id.get(s.session_id.as_str()))
                .copied()
        })
        .collect();
    let missing = found.iter().filter(|f| f.is_none()).count();
    if missing > 0 {
        return Err(Error::UnpairedSessions(missing));
    }
    Ok(found.into_iter().flatten().collect())
}

pub fn normalized_levenshtein(real: &[Session], sim: &[Session]) -> Result<f64> {
    let pairs = pair_sessions(real, sim)?;
    if pairs.is_empty() {
        return Err(Error::UnpairedSessions(0));
    }
    let total: f64 = sim
        .iter()
        .zip(&pairs)
        .map(|(s, &r)| normalized_levenshtein_pair(&real[r], s))
        .sum();
    Ok(total / pairs.len() as f64)
}

pub fn token_jaccard(a: &str, b: &str) -> f64 {
    let ta: std::collections::BTreeSet<String> = a.split_whitespace().map(str::to_lowercase).collect();
    let tb: std::collections::BTreeSet<String> = b.split_whitespace().map(str::to_lowercase).collect();
    let union = ta.union(&tb).count();
    if union == 0 {
        1.0
    } else {
        ta.intersection(&tb).count() as f64 / union as f64
    }
}

/// Mean consecutive-query Jaccard of one session; `None` with fewer than two queries.
pub fn session_reformulation(s: &Session) -> Option<f64> {
    let q: Vec<&str> = s.query_texts().collect();
    if q.len() < 2 {
        return None;
    }
    Some(q.windows(2).map(|w| token_jaccard(w[0], w[1])).sum::<f64>() / (q.len() - 1) as f64)
}

pub fn reformulation_similarity(sessions: &[Session]) -> Result<f64> {
    let v: Vec<f64> = sessions.iter().filter_map(session_reformulation).collect();
    if v.is_empty() {
        return Err(Error::NoMultiQuerySessions);
    }
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmdEstimate {
    /// max(0, raw)
    pub value: f64,
    pub raw: f64,
    pub bandwidth: f64,
    pub degenerate_bandwidth: bool,
}

/// Pooled RBF kernel matrix over X ∪ Y with a median-heuristic bandwidth.
#[derive(Debug, Clone)]
pub struct PooledKernel {
    k: DMatrix<f64>,
    n_x: usize,
    pub bandwidth: f64,
    pub degenerate: bool,
}

impl PooledKernel {
    pub fn new(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<Self> {
        if x.ncols() != y.ncols() {
            return Err(Error::DimensionMismatch(x.ncols(), y.ncols()));
        }
        let n = x.nrows() + y.nrows();
        let row = |i: usize| if i < x.nrows() { x.row(i) } else { y.row(i - x.nrows()) };
        let d2: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| (0..n).map(|j| (row(i) - row(j)).norm_squared()).collect())
            .collect();
        let mut dists: Vec<f64> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).map(|(i, j)| d2[i][j].sqrt()).collect();
        dists.sort_by(f64::total_cmp);
        let mut bandwidth = median_sorted(&dists);
        if !(bandwidth > 0.0) {
            let nz: Vec<f64> = dists.iter().copied().filter(|&d| d > 0.0).collect();
            bandwidth = median_sorted(&nz);
        }
        let degenerate = !(bandwidth > 0.0);
        let gamma = if degenerate { 0.0 } else { 1.0 / (2.0 * bandwidth * bandwidth) };
        let k = DMatrix::from_fn(n, n, |i, j| (-gamma * d2[i][j]).exp());
        Ok(PooledKernel {
            k,
            n_x: x.nrows(),
            bandwidth: if degenerate { 0.0 } else { bandwidth },
            degenerate,
        })
    }

    /// MMD² over index multisets into X (0-based) and Y (0-based).
    pub fn mmd2(&self, ix: &[usize], iy: &[usize], unbiased: bool) -> f64 {
        let kx = |a: usize, b: usize| self.k[(ix[a], ix[b])];
        let ky = |a: usize, b: usize| self.k[(self.n_x + iy[a], self.n_x + iy[b])];
        let (m, n) = (ix.len() as f64, iy.len() as f64);
        let within = |len: usize, f: &dyn Fn(usize, usize) -> f64| {
            let mut s = 0.0;
            for a in 0..len {
                for b in 0..len {
                    if !unbiased || a != b {
                        s += f(a, b);
                    }
                }
            }
            s
        };
        let sxx = within(ix.len(), &kx);
        let syy = within(iy.len(), &ky);
        let mut sxy = 0.0;
        for &a in ix {
            for &b in iy {
                sxy += self.k[(a, self.n_x + b)];
            }
        }
        if unbiased {
            sxx / (m * (m - 1.0)) + syy / (n * (n - 1.0)) - 2.0 * sxy / (m * n)
        } else {
            sxx / (m * m) + syy / (n * n) - 2.0 * sxy / (m * n)
        }
    }

    pub fn estimate(&self, ix: &[usize], iy: &[usize], unbiased: bool) -> MmdEstimate {
        let raw = if self.degenerate { 0.0 } else { self.mmd2(ix, iy, unbiased) };
        MmdEstimate {
            value: raw.max(0.0),
            raw,
            bandwidth: self.bandwidth,
            degenerate_bandwidth: self.degenerate,
        }
    }
}

fn median_sorted(v: &[f64]) -> f64 {
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// RBF-kernel MMD² (unbiased by default) with median-heuristic bandwidth.
pub fn mmd2(x: &DMatrix<f64>, y: &DMatrix<f64>, unbiased: bool) -> Result<MmdEstimate> {
    if x.nrows() < 2 || y.nrows() < 2 {
        return Err(Error::InsufficientSessions {
            needed: 2,
            have: x.nrows().min(y.nrows()),
        });
    }
    let k = PooledKernel::new(x, y)?;
    let ix: Vec<usize> = (0..x.nrows()).collect();
    let iy: Vec<usize> = (0..y.nrows()).collect();
    Ok(k.estimate(&ix, &iy, unbiased))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrechetEstimate {
    pub value: f64,
    /// Sum of |λ| over negative covariance eigenvalues set to zero.
    pub clamp_magnitude: f64,
    /// Fewer samples than dimensions on either side.
    pub high_variance: bool,
}

fn moments(rows: &[&[f64]]) -> (DVector<f64>, DMatrix<f64>) {
    let n = rows.len();
    let d = rows[0].len();
    let mut mu = DVector::zeros(d);
    for r in rows {
        for j in 0..d {
            mu[j] += r[j];
        }
    }
    mu /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for r in rows {
        for a in 0..d {
            let da = r[a] - mu[a];
            if da == 0.0 {
                continue;
            }
            for b in a..d {
                cov[(a, b)] += da * (r[b] - mu[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            cov[(a, b)] /= (n - 1) as f64;
            cov[(b, a)] = cov[(a, b)];
        }
    }
    (mu, cov)
}

fn psd_sqrt(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let eig = SymmetricEigen::new(m.clone());
    let mut clamped = 0.0;
    let roots = eig.eigenvalues.map(|l| {
        if l < 0.0 {
            clamped += -l;
            0.0
        } else {
            l.sqrt()
        }
    });
    let v = &eig.eigenvectors;
    (v * DMatrix::from_diagonal(&roots) * v.transpose(), clamped)
}

/// Fréchet distance between Gaussian fits (sample covariance, n−1).
///
/// The trace term Tr((Σx^½ Σy Σx^½)^½) is evaluated as the nuclear norm of
/// Σx^½ Σy^½, which is the same quantity without squaring the conditioning.
pub fn frechet_rows(x: &[&[f64]], y: &[&[f64]]) -> Result<FrechetEstimate> {
    if x.len() < 2 || y.len() < 2 {
        return Err(Error::InsufficientSessions {
            needed: 2,
            have: x.len().min(y.len()),
        });
    }
    let d = x[0].len();
    if y[0].len() != d {
        return Err(Error::DimensionMismatch(d, y[0].len()));
    }
    let (mx, cx) = moments(x);
    let (my, cy) = moments(y);
    if !cx.iter().chain(cy.iter()).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("covariance"));
    }
    let (sx, clamp_x) = psd_sqrt(&cx);
    let (sy, clamp_y) = psd_sqrt(&cy);
    let cross = nuclear_norm(&sx * &sy);
    let value = (&mx - &my).norm_squared() + cx.trace() + cy.trace() - 2.0 * cross;
    Ok(FrechetEstimate {
        value: value.max(0.0),
        clamp_magnitude: clamp_x + clamp_y,
        high_variance: x.len() <= d || y.len() <= d,
    })
}

/// Sum of singular values. Falls back to sqrt(eig(AᵀA)) if SVD does not converge.
fn nuclear_norm(a: DMatrix<f64>) -> f64 {
    match nalgebra::SVD::try_new(a.clone(), false, false, f64::EPSILON, 10_000) {
        Some(svd) => svd.singular_values.sum(),
        None => SymmetricEigen::new(a.transpose() * a).eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum(),
    }
}

pub fn frechet_distance(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<FrechetEstimate> {
    let rx: Vec<Vec<f64>> = x.row_iter().map(|r| r.iter().copied().collect()).collect();
    let ry: Vec<Vec<f64>> = y.row_iter().map(|r| r.iter().copied().collect()).collect();
    let bx: Vec<&[f64]> = rx.iter().map(Vec::as_slice).collect();
    let by: Vec<&[f64]> = ry.iter().map(Vec::as_slice).collect();
    frechet_rows(&bx, &by)
}

// ---------------------------------------------------------------------------
// B1

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct B1Config {
    pub resamples: usize,
    pub seed: u64,
    pub mmd_unbiased: bool,
    pub classifier: bool,
    pub audit: AuditConfig,
    /// Restrict to these metric ids; empty runs everything applicable.
    pub metrics: Vec<String>,
}

impl Default for B1Config {
    fn default() -> Self {
        B1Config {
            resamples: 1000,
            seed: 0,
            mmd_unbiased: true,
            classifier: true,
            audit: AuditConfig::default(),
            metrics: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    /// 95% percentile-bootstrap interval; absent when resamples = 0.
    pub ci: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealismReport {
    pub layout_id: String,
    pub config_hash: String,
    pub n_real: usize,
    pub n_sim: usize,
    pub metrics: BTreeMap<String, MetricValue>,
    /// metric id -> reason
    pub inapplicable: BTreeMap<String, String>,
    pub audit: Option<AuditResult>,
    /// Values withheld from the headline block (e.g. main AUC under leakage).
    pub diagnostics: BTreeMap<String, MetricValue>,
    pub binning: BTreeMap<String, String>,
    pub mmd: Option<MmdEstimate>,
    pub frechet: Option<FrechetEstimate>,
    pub local_definitions: Vec<String>,
}

/// Percentile interval (linear interpolation) of `values`.
pub fn percentile_interval(values: &mut [f64], level: f64) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let h = (values.len() - 1) as f64 * p;
        let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
        values[lo] + (h - lo as f64) * (values[hi] - values[lo])
    };
    let a = (1.0 - level) / 2.0;
    Some((q(a), q(1.0 - a)))
}

fn resample(n: usize, rng: &mut crate::rng::Stream) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

struct Ctx<'a> {
    real: &'a [Session],
    sim: &'a [Session],
    cfg: &'a B1Config,
}

impl Ctx<'_> {
    fn wanted(&self, id: &str) -> bool {
        self.cfg.metrics.is_empty() || self.cfg.metrics.iter().any(|m| m == id)
    }

    /// Bootstrap a statistic over session indices (real, sim), widening the
    /// interval to contain the point estimate when needed.
    fn with_ci<F>(&self, id: &str, point: f64, stat: F) -> MetricValue
    where
        F: Fn(&[usize], &[usize]) -> Option<f64> + Sync,
    {
        let mut flags = Vec::new();
        if self.cfg.resamples == 0 {
            return MetricValue { value: point, ci: None, flags };
        }
        let mut vals: Vec<f64> = (0..self.cfg.resamples)
            .into_par_iter()
            .filter_map(|b| {
                let mut rng = derive_stream!(self.cfg.seed; "b1-bootstrap", id, b);
                let ir = resample(self.real.len(), &mut rng);
                let is = resample(self.sim.len(), &mut rng);
                stat(&ir, &is)
            })
            .collect();
        let dropped = self.cfg.resamples - vals.len();
        if dropped * 10 > self.cfg.resamples {
            flags.push(format!("CI_DROPPED_RESAMPLES={dropped}"));
        }
        let ci = percentile_interval(&mut vals, 0.95).map(|(lo, hi)| {
            if point < lo || point > hi {
                flags.push("CI_WIDENED_TO_POINT".into());
            }
            (lo.min(point), hi.max(point))
        });
        MetricValue { value: point, ci, flags }
    }
}


/// Every applicable realism metric, the leakage audit, and bootstrap CIs.
pub fn run_b1(real: &[Session], sim: &[Session], layout: &EmbedLayout, cfg: &B1Config) -> Result<RealismReport> {
    if real.is_empty() && sim.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    let ctx = Ctx { real, sim, cfg };
    let mut report = RealismReport {
        layout_id: layout.layout_id(),
        config_hash: crate::ingest::config_hash_of(cfg)?,
        n_real: real.len(),
        n_sim: sim.len(),
        metrics: BTreeMap::new(),
        inapplicable: BTreeMap::new(),
        audit: None,
        diagnostics: BTreeMap::new(),
        binning: BTreeMap::new(),
        mmd: None,
        frechet: None,
        local_definitions: vec![
            "reform_sim: mean token-Jaccard between consecutive queries".into(),
            format!("layout: {}", layout.layout_id()),
        ],
    };
    for f in Feature::ALL {
        report.binning.insert(
            f.slug().into(),
            match f {
                Feature::DwellTime => format!("{DWELL_BINS} equal-width bins in ln(1+x) over pooled range"),
                _ => "unit bins over union support".into(),
            },
        );
    }
    let skip = |id: String, reason: &str, report: &mut RealismReport| {
        report.inapplicable.insert(id, reason.to_string());
    };

    // Marginal features: per-session value lists let the bootstrap resample sessions.
    for f in Feature::ALL {
        let per_real: Vec<Vec<f64>> = real.iter().map(|s| f.extract(s)).collect();
        let per_sim: Vec<Vec<f64>> = sim.iter().map(|s| f.extract(s)).collect();
        let flat = |per: &[Vec<f64>], idx: Option<&[usize]>| -> Vec<f64> {
            match idx {
                None => per.iter().flatten().copied().collect(),
                Some(ix) => ix.iter().flat_map(|&i| per[i].iter().copied()).collect(),
            }
        };
        let (xr, xs) = (flat(&per_real, None), flat(&per_sim, None));
        let reason = match f {
            Feature::ClickDepth => "NO_CLICK_EVENTS",
            Feature::DwellTime => "NO_DWELL_EVENTS",
            Feature::QueryLength => "NO_QUERY_EVENTS",
            Feature::SessionLength => "EMPTY_CORPUS",
        };
        type Stat = fn(Feature, &[f64], &[f64]) -> Result<f64>;
        let stats: [(&str, Stat); 3] = [
            ("js", |f, a, b| {
                let (p, q) = feature_histograms(f, a, b);
                js_divergence(&p, &q)
            }),
            ("w1", |_, a, b| wasserstein1(a, b)),
            ("ks", |_, a, b| ks_statistic(a, b)),
        ];
        for (name, stat) in stats {
            let id = format!("{name}_{}", f.slug());
            if !ctx.wanted(&id) {
                continue;
            }
            if xr.is_empty() || xs.is_empty() {
                skip(id, reason, &mut report);
                continue;
            }
            let point = stat(f, &xr, &xs)?;
            let mv = ctx.with_ci(&id, point, |ir, is| {
                stat(f, &flat(&per_real, Some(ir)), &flat(&per_sim, Some(is))).ok()
            });
            report.metrics.insert(id, mv);
        }
    }

    if ctx.wanted("bigram_js") {
        match action_bigram_js(real, sim) {
            Ok(point) => {
                let br: Vec<[f64; 36]> = real.iter().map(bigram_counts).collect();
                let bs: Vec<[f64; 36]> = sim.iter().map(bigram_counts).collect();
                let sum = |v: &[[f64; 36]], idx: &[usize]| {
                    let mut t = [0.0; 36];
                    for &i in idx {
                        for k in 0..36 {
                            t[k] += v[i][k];
                        }
                    }
                    t
                };
                let mv = ctx.with_ci("bigram_js", point, |ir, is| js_divergence(&sum(&br, ir), &sum(&bs, is)).ok());
                report.metrics.insert("bigram_js".into(), mv);
            }
            Err(_) => skip("bigram_js".into(), "FEWER_THAN_TWO_EVENTS", &mut report),
        }
    }

    if ctx.wanted("nlev") {
        match pair_sessions(real, sim) {
            Ok(pairs) if !pairs.is_empty() => {
                let d: Vec<f64> = sim
                    .iter()
                    .zip(&pairs)
                    .map(|(s, &r)| normalized_levenshtein_pair(&real[r], s))
                    .collect();
                let point = d.iter().sum::<f64>() / d.len() as f64;
                let mv = ctx.with_ci("nlev", point, |_, is| Some(is.iter().map(|&i| d[i]).sum::<f64>() / is.len() as f64));
                report.metrics.insert("nlev".into(), mv);
            }
            _ => skip("nlev".into(), "UNPAIRED_SESSIONS", &mut report),
        }
    }

    let reform_r: Vec<Option<f64>> = real.iter().map(session_reformulation).collect();
    let reform_s: Vec<Option<f64>> = sim.iter().map(session_reformulation).collect();
    let mean_of = |v: &[Option<f64>], idx: Option<&[usize]>| -> Option<f64> {
        let vals: Vec<f64> = match idx {
            None => v.iter().flatten().copied().collect(),
            Some(ix) => ix.iter().filter_map(|&i| v[i]).collect(),
        };
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    if ctx.wanted("reform_sim") {
        match mean_of(&reform_s, None) {
            Some(point) => {
                let mv = ctx.with_ci("reform_sim", point, |_, is| mean_of(&reform_s, Some(is)));
                report.metrics.insert("reform_sim".into(), mv);
            }
            None => skip("reform_sim".into(), "NO_MULTI_QUERY_SESSIONS", &mut report),
        }
    }
    if ctx.wanted("reform_abs_diff") {
        match (mean_of(&reform_r, None), mean_of(&reform_s, None)) {
            (Some(a), Some(b)) => {
                let mv = ctx.with_ci("reform_abs_diff", (a - b).abs(), |ir, is| {
                    Some((mean_of(&reform_r, Some(ir))? - mean_of(&reform_s, Some(is))?).abs())
                });
                report.metrics.insert("reform_abs_diff".into(), mv);
            }
            _ => skip("reform_abs_diff".into(), "NO_MULTI_QUERY_SESSIONS", &mut report),
        }
    }

    let need_embed = ctx.wanted("mmd2") || ctx.wanted("frechet");
    if need_embed && (real.len() < 2 || sim.len() < 2) {
        for id in ["mmd2", "frechet"] {
            if ctx.wanted(id) {
                skip(id.into(), "INSUFFICIENT_SESSIONS", &mut report);
            }
        }
    } else if need_embed {
        let ex = embed_sessions(real, layout)?;
        let ey = embed_sessions(sim, layout)?;
        if ctx.wanted("mmd2") {
            let kernel = PooledKernel::new(&ex, &ey)?;
            let ix: Vec<usize> = (0..real.len()).collect();
            let iy: Vec<usize> = (0..sim.len()).collect();
            let est = kernel.estimate(&ix, &iy, cfg.mmd_unbiased);
            let mut mv = ctx.with_ci("mmd2", est.value, |ir, is| Some(kernel.estimate(ir, is, cfg.mmd_unbiased).value));
            if est.degenerate_bandwidth {
                mv.flags.push("DEGENERATE_BANDWIDTH".into());
            }
            report.metrics.insert("mmd2".into(), mv);
            report.mmd = Some(est);
        }
        if ctx.wanted("frechet") {
            let rx: Vec<Vec<f64>> = ex.row_iter().map(|r| r.iter().copied().collect()).collect();
            let ry: Vec<Vec<f64>> = ey.row_iter().map(|r| r.iter().copied().collect()).collect();
            let est = frechet_distance(&ex, &ey)?;
            let mut mv = ctx.with_ci("frechet", est.value, |ir, is| {
                let a: Vec<&[f64]> = ir.iter().map(|&i| rx[i].as_slice()).collect();
                let b: Vec<&[f64]> = is.iter().map(|&i| ry[i].as_slice()).collect();
                frechet_rows(&a, &b).ok().map(|e| e.value)
            });
            if est.high_variance {
                mv.flags.push("HIGH_VARIANCE".into());
            }
            report.metrics.insert("frechet".into(), mv);
            report.frechet = Some(est);
        }
    }

    if cfg.classifier {
        let mut audit_cfg = cfg.audit.clone();
        audit_cfg.seed = cfg.seed;
        match run_audit(real, sim, layout, &audit_cfg) {
            Ok(audit) => {
                for v in Variant::ALL {
                    let id = v.metric_id();
                    let res = &audit.variants[&v];
                    let pos: Vec<f64> = res.oof.iter().filter(|o| o.0).map(|o| o.1).collect();
                    let neg: Vec<f64> = res.oof.iter().filter(|o| !o.0).map(|o| o.1).collect();
                    let mv = bootstrap_auc(id, res.auc, &neg, &pos, cfg);
                    if v == Variant::Main && audit.verdict == Verdict::LeakageSuspected {
                        let mut mv = mv;
                        mv.flags.push("LEAKAGE_SUSPECTED".into());
                        report.diagnostics.insert(id.into(), mv);
                    } else {
                        report.metrics.insert(id.into(), mv);
                    }
                }
                report.audit = Some(audit);
            }
            Err(Error::InsufficientSessions { .. }) => {
                for v in Variant::ALL {
                    skip(v.metric_id().into(), "INSUFFICIENT_SESSIONS", &mut report);
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(report)
}

/// Bootstrap CI of a pooled out-of-fold AUC by resampling scores within each class.
fn bootstrap_auc(id: &str, point: f64, neg: &[f64], pos: &[f64], cfg: &B1Config) -> MetricValue {
    let mut flags = Vec::new();
    if cfg.resamples == 0 || neg.is_empty() || pos.is_empty() {
        return MetricValue { value: point, ci: None, flags };
    }
    let mut vals: Vec<f64> = (0..cfg.resamples)
        .into_par_iter()
        .filter_map(|b| {
            let mut rng = derive_stream!(cfg.seed; "b1-bootstrap", id, b);
            let mut scores: Vec<f64> = resample(neg.len(), &mut rng).into_iter().map(|i| neg[i]).collect();
            scores.extend(resample(pos.len(), &mut rng).into_iter().map(|i| pos[i]));
            let labels: Vec<bool> = (0..scores.len()).map(|i| i >= neg.len()).collect();
            auc(&scores, &labels)
        })
        .collect();
    let ci = percentile_interval(&mut vals, 0.95).map(|(lo, hi)| {
        if point < lo || point > hi {
            flags.push("CI_WIDENED_TO_POINT".into());
        }
        (lo.min(point), hi.max(point))
    });
    MetricValue { value: point, ci, flags }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::Event;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn js_examples() {
        assert_eq!(js_divergence(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        close(js_divergence(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0, 1e-12);
        // 0.5·KL((.5,.5)‖(.75,.25)) + 0.5·KL((1,0)‖(.75,.25))
        let want = 0.5 * (0.5 * (0.5f64 / 0.75).log2() + 0.5 * (0.5f64 / 0.25).log2()) + 0.5 * (1.0f64 / 0.75).log2();
        close(js_divergence(&[0.5, 0.5], &[1.0, 0.0]).unwrap(), want, 1e-12);
        close(want, 0.3113, 1e-4);
        assert!(matches!(js_divergence(&[0.0], &[1.0]), Err(Error::EmptyDistribution)));
    }

    #[test]
    fn w1_and_ks_examples() {
        assert_eq!(wasserstein1(&[1.0, 2.0], &[2.0, 1.0]).unwrap(), 0.0);
        close(wasserstein1(&[1.0; 4], &[3.0; 2]).unwrap(), 2.0, 1e-12);
        close(wasserstein1(&[0.0, 2.0], &[1.0, 3.0]).unwrap(), 1.0, 1e-12);
        assert_eq!(ks_statistic(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(ks_statistic(&[1.0, 2.0], &[5.0, 6.0]).unwrap(), 1.0);
        close(ks_statistic(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]).unwrap(), 1.0 / 3.0, 1e-12);
        assert!(wasserstein1(&[], &[1.0]).is_err());
    }

    #[test]
    fn levenshtein_examples() {
        assert_eq!(levenshtein(b"QSC", b"QS"), 1);
        assert_eq!(levenshtein(b"kitten", b"sitting"), 3);
        assert_eq!(levenshtein(b"", b"abc"), 3);
    }

    #[test]
    fn jaccard_examples() {
        assert_eq!(token_jaccard("a b", "a b"), 1.0);
        assert_eq!(token_jaccard("a b", "c d"), 0.0);
        close(token_jaccard("a b", "b c"), 1.0 / 3.0, 1e-12);
        let single = Session::real("s", "d", vec![Event::query(0, "q", "x")]);
        assert!(matches!(reformulation_similarity(&[single]), Err(Error::NoMultiQuerySessions)));
    }

    #[test]
    fn frechet_closed_forms() {
        let col = |v: &[f64]| DMatrix::from_column_slice(v.len(), 1, v);
        let a = col(&[-1.0, 1.0]);
        let b = col(&[1.0, 3.0]);
        let s2 = 2f64.sqrt();
        close(frechet_distance(&a, &b).unwrap().value, 4.0, 1e-12);
        let c = col(&[-s2, s2]);
        let sd_a = 2f64.sqrt();
        let sd_c = 2.0;
        close(frechet_distance(&a, &c).unwrap().value, (sd_a - sd_c).powi(2), 1e-12);
        assert_eq!(frechet_distance(&a, &a).unwrap().value, 0.0);
    }

    #[test]
    fn mmd_self_and_shift() {
        let x = DMatrix::from_fn(30, 3, |i, j| ((i * 7 + j * 3) % 11) as f64 / 5.0);
        let biased = mmd2(&x, &x, false).unwrap();
        assert!(biased.raw.abs() < 1e-12);
        let unbiased = mmd2(&x, &x, true).unwrap();
        assert_eq!(unbiased.value, 0.0);
        let y = x.map(|v| v + 10.0);
        assert!(mmd2(&x, &y, true).unwrap().value > 0.1);
        let same = DMatrix::from_element(5, 2, 1.0);
        assert!(mmd2(&same, &same, true).unwrap().degenerate_bandwidth);
    }

    #[test]
    fn b1_self_distance_and_inapplicable_dwell() {
        let corpus = crate::ingest::generate_synthetic_log(
            &crate::ingest::SynthSpec {
                n_sessions: 60,
                ..Default::default()
            },
            3,
        )
        .unwrap();
        let cfg = B1Config {
            resamples: 50,
            ..Default::default()
        };
        let r = run_b1(&corpus.sessions, &corpus.sessions, &EmbedLayout::ActSeqV1, &cfg).unwrap();
        for (id, m) in &r.metrics {
            if !id.starts_with("clf_") && id != "reform_sim" {
                assert!(m.value.abs() < 1e-9, "{id} = {}", m.value);
            }
            if let Some((lo, hi)) = m.ci {
                assert!(lo <= m.value && m.value <= hi, "{id}");
            }
        }
        assert!(r.inapplicable.is_empty(), "{:?}", r.inapplicable);

        let mut no_dwell = corpus.sessions.clone();
        for s in &mut no_dwell {
            s.events.retain(|e| e.kind() != EventType::Dwell);
        }
        let r = run_b1(&no_dwell, &no_dwell, &EmbedLayout::ActSeqV1, &cfg).unwrap();
        for id in ["js_dwell", "w1_dwell", "ks_dwell"] {
            assert_eq!(r.inapplicable[id], "NO_DWELL_EVENTS");
            assert!(!r.metrics.contains_key(id));
        }
        let again = run_b1(&no_dwell, &no_dwell, &EmbedLayout::ActSeqV1, &cfg).unwrap();
        assert_eq!(serde_json::to_string(&r).unwrap(), serde_json::to_string(&again).unwrap());
    }
}
