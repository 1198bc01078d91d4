//! Real-vs-simulated discriminator with leakage baselines.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embeddings::{act_seq, embed_sessions, EmbedLayout, EVENT_COUNT, QUERY_COUNT};
use crate::error::{Error, Result};
use crate::schema::{EventType, Session};
use crate::simulators::source_id;

pub const DEFAULT_LEAKAGE_AUC: f64 = 0.55;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Variant {
    Main,
    MetadataOnly,
    StructuralOnly,
    MaskedLength,
    Permutation,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Main,
        Variant::MetadataOnly,
        Variant::StructuralOnly,
        Variant::MaskedLength,
        Variant::Permutation,
    ];

    /// Metric id used in realism reports.
    pub fn metric_id(self) -> &'static str {
        match self {
            Variant::Main => "clf_auc",
            Variant::MetadataOnly => "clf_auc_metadata",
            Variant::StructuralOnly => "clf_auc_structural",
            Variant::MaskedLength => "clf_auc_masked",
            Variant::Permutation => "clf_auc_permutation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Valid,
    LeakageSuspected,
}

/// The validity rule: both the metadata and permutation baselines must stay below the threshold.
pub fn verdict(auc_metadata: f64, auc_permutation: f64, threshold: f64) -> Verdict {
    if auc_metadata < threshold && auc_permutation < threshold {
        Verdict::Valid
    } else {
        Verdict::LeakageSuspected
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditConfig {
    pub folds: usize,
    pub seed: u64,
    pub l2: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub leakage_auc: f64,
    /// Adds log session duration and log mean inter-event gap to MAIN.
    pub include_timestamps: bool,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            folds: 5,
            seed: 0,
            l2: 1.0,
            tol: 1e-8,
            max_iter: 200,
            leakage_auc: DEFAULT_LEAKAGE_AUC,
            include_timestamps: false,
        }
    }
}

/// Presence indicators of optional schema content.
pub fn metadata_features(s: &Session) -> [f64; 4] {
    let any = |t: EventType| s.event_types().any(|k| k == t);
    let b = |x: bool| if x { 1.0 } else { 0.0 };
    [
        b(s.user_hash.is_some()),
        b(any(EventType::Dwell)),
        b(any(EventType::ConvUser) || any(EventType::ConvSystem)),
        b(s.has_synthetic_serp()),
    ]
}

fn timestamp_features(s: &Session) -> [f64; 2] {
    let n = s.events.len();
    if n < 2 {
        return [0.0, 0.0];
    }
    let span = (s.events[n - 1].ts_ms - s.events[0].ts_ms).max(0) as f64;
    [(1.0 + span).ln(), (1.0 + span / (n - 1) as f64).ln()]
}

fn variant_matrix(variant: Variant, sessions: &[Session], layout: &EmbedLayout, cfg: &AuditConfig) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = match variant {
        Variant::Main | Variant::Permutation => {
            let m = embed_sessions(sessions, layout)?;
            (0..m.nrows())
                .map(|i| {
                    let mut r: Vec<f64> = m.row(i).iter().copied().collect();
                    if cfg.include_timestamps {
                        r.extend(timestamp_features(&sessions[i]));
                    }
                    r
                })
                .collect()
        }
        Variant::MetadataOnly => sessions.iter().map(|s| metadata_features(s).to_vec()).collect(),
        Variant::StructuralOnly => sessions.iter().map(|s| act_seq(s)[..EVENT_COUNT].to_vec()).collect(),
        Variant::MaskedLength => sessions
            .iter()
            .map(|s| {
                act_seq(s)
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != EVENT_COUNT && i != QUERY_COUNT)
                    .map(|(_, &x)| x)
                    .collect()
            })
            .collect(),
    };
    let d = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
}

/// L2-penalized logistic regression; the intercept is unpenalized.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub intercept: f64,
    pub weights: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl LogisticModel {
    pub fn decision(&self, x: &DMatrix<f64>) -> DVector<f64> {
        x * &self.weights + DVector::from_element(x.nrows(), self.intercept)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Penalized negative log-likelihood at `beta = [intercept, weights..]`.
pub fn penalized_nll(x: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>, l2: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..x.nrows() {
        let z = beta[0] + (0..x.ncols()).map(|j| x[(i, j)] * beta[j + 1]).sum::<f64>();
        // log(1 + e^z) - y z, computed stably
        let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
        total += softplus - y[i] * z;
    }
    total + 0.5 * l2 * beta.rows(1, x.ncols()).norm_squared()
}

/// Gradient of [`penalized_nll`].
pub fn penalized_nll_grad(x: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>, l2: f64) -> DVector<f64> {
    let d = x.ncols();
    let mut g = DVector::zeros(d + 1);
    for i in 0..x.nrows() {
        let z = beta[0] + (0..d).map(|j| x[(i, j)] * beta[j + 1]).sum::<f64>();
        let r = sigmoid(z) - y[i];
        g[0] += r;
        for j in 0..d {
            g[j + 1] += r * x[(i, j)];
        }
    }
    for j in 0..d {
        g[j + 1] += l2 * beta[j + 1];
    }
    g
}

/// Newton / IRLS fit. Stops when the largest parameter change is below `tol`.
pub fn fit_logistic(x: &DMatrix<f64>, y: &[f64], l2: f64, tol: f64, max_iter: usize) -> LogisticModel {
    let (n, d) = x.shape();
    let mut design = DMatrix::from_element(n, d + 1, 1.0);
    design.view_mut((0, 1), (n, d)).copy_from(x);
    let yv = DVector::from_column_slice(y);
    let mut beta = DVector::zeros(d + 1);
    let mut penalty = DMatrix::identity(d + 1, d + 1) * l2;
    // Guards the intercept direction when a train split is single-class.
    penalty[(0, 0)] = 1e-10;

    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let z = &design * &beta;
        let p = z.map(sigmoid);
        let w = p.map(|pi| (pi * (1.0 - pi)).max(1e-12));
        let mut grad = design.transpose() * (&p - &yv);
        let mut pen_beta = beta.clone() * l2;
        pen_beta[0] = 0.0;
        grad += pen_beta;
        let mut weighted = design.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= w[i];
        }
        let hess = design.transpose() * weighted + &penalty;
        let step = match hess.clone().cholesky() {
            Some(c) => c.solve(&grad),
            None => match hess.lu().solve(&grad) {
                Some(s) => s,
                None => break,
            },
        };
        beta -= &step;
        if step.amax() < tol {
            converged = true;
            break;
        }
    }
    LogisticModel {
        intercept: beta[0],
        weights: beta.rows(1, d).into_owned(),
        iterations,
        converged,
    }
}

/// Rank-sum AUC; ties count half. `None` when either class is absent.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return None;
    }
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    Some((rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

/// Standardize with train-fold moments; zero-variance columns become 0.
fn standardize(train: &DMatrix<f64>, test: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = train.nrows() as f64;
    let d = train.ncols();
    let mut mean = vec![0.0; d];
    let mut sd = vec![0.0; d];
    for j in 0..d {
        let col = train.column(j);
        mean[j] = col.sum() / n;
        sd[j] = (col.iter().map(|x| (x - mean[j]).powi(2)).sum::<f64>() / n).sqrt();
    }
    let apply = |m: &DMatrix<f64>| {
        DMatrix::from_fn(m.nrows(), d, |i, j| if sd[j] > 1e-12 { (m[(i, j)] - mean[j]) / sd[j] } else { 0.0 })
    };
    (apply(train), apply(test))
}

/// Balanced, stratified fold assignment. Simulated sessions share the fold of
/// their source session when it is present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    /// Indices into the real corpus kept after balancing.
    pub real: Vec<usize>,
    pub sim: Vec<usize>,
    pub real_fold: Vec<usize>,
    pub sim_fold: Vec<usize>,
    pub folds: usize,
    /// (real, sim) sizes before downsampling.
    pub original_sizes: (usize, usize),
}

pub fn plan_folds(real: &[Session], sim: &[Session], folds: usize, seed: u64) -> Result<FoldPlan> {
    let per_class = real.len().min(sim.len());
    if folds < 2 || per_class < folds {
        return Err(Error::InsufficientSessions {
            needed: folds.max(2),
            have: per_class,
        });
    }
    let mut rng = derive_stream!(seed; "audit-folds");
    let mut real_idx: Vec<usize> = (0..real.len()).collect();
    let mut sim_idx: Vec<usize> = (0..sim.len()).collect();
    // Prefer keeping pairs intact when downsampling.
    let real_pos: HashMap<&str, usize> = real.iter().enumerate().map(|(i, s)| (s.session_id.as_str(), i)).collect();
    let source_of = |s: &Session| {
        source_id(&s.session_id)
            .and_then(|id| real_pos.get(id))
            .or_else(|| real_pos.get(s.session_id.as_str()))
            .copied()
    };
    real_idx.shuffle(&mut rng);
    sim_idx.shuffle(&mut rng);
    real_idx.truncate(per_class);
    let kept_real: HashMap<usize, usize> = real_idx.iter().enumerate().map(|(pos, &i)| (i, pos)).collect();
    sim_idx.sort_by_key(|&j| match source_of(&sim[j]) {
        Some(r) if kept_real.contains_key(&r) => 0,
        _ => 1,
    });
    sim_idx.truncate(per_class);

    let real_fold: Vec<usize> = (0..per_class).map(|pos| pos % folds).collect();
    let mut counts = vec![0usize; folds];
    let mut sim_fold = vec![usize::MAX; per_class];
    for (k, &j) in sim_idx.iter().enumerate() {
        if let Some(&pos) = source_of(&sim[j]).and_then(|r| kept_real.get(&r)) {
            sim_fold[k] = real_fold[pos];
            counts[real_fold[pos]] += 1;
        }
    }
    for f in sim_fold.iter_mut().filter(|f| **f == usize::MAX) {
        let target = (0..folds).min_by_key(|&c| (counts[c], c)).unwrap();
        *f = target;
        counts[target] += 1;
    }
    Ok(FoldPlan {
        real: real_idx,
        sim: sim_idx,
        real_fold,
        sim_fold,
        folds,
        original_sizes: (real.len(), sim.len()),
    })
}

/// Out-of-fold result for one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub auc: f64,
    pub fold_aucs: Vec<Option<f64>>,
    /// Pooled out-of-fold (label, score); label true = simulated.
    #[serde(skip)]
    pub oof: Vec<(bool, f64)>,
}

pub fn train_eval_classifier(
    real: &[Session],
    sim: &[Session],
    variant: Variant,
    layout: &EmbedLayout,
    cfg: &AuditConfig,
) -> Result<VariantResult> {
    let plan = plan_folds(real, sim, cfg.folds, cfg.seed)?;
    eval_variant(real, sim, &plan, variant, layout, cfg)
}

fn eval_variant(
    real: &[Session],
    sim: &[Session],
    plan: &FoldPlan,
    variant: Variant,
    layout: &EmbedLayout,
    cfg: &AuditConfig,
) -> Result<VariantResult> {
    let mut sessions: Vec<Session> = plan.real.iter().map(|&i| real[i].clone()).collect();
    sessions.extend(plan.sim.iter().map(|&j| sim[j].clone()));
    let mut labels: Vec<bool> = (0..sessions.len()).map(|i| i >= plan.real.len()).collect();
    let fold_of: Vec<usize> = plan.real_fold.iter().chain(&plan.sim_fold).copied().collect();
    if variant == Variant::Permutation {
        let mut rng = derive_stream!(cfg.seed; "audit-permutation");
        labels.shuffle(&mut rng);
    }
    let x = variant_matrix(variant, &sessions, layout, cfg)?;
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("classifier features"));
    }

    let per_fold: Vec<(Vec<usize>, Vec<f64>)> = (0..plan.folds)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..sessions.len()).filter(|&i| fold_of[i] != f).collect();
            let test: Vec<usize> = (0..sessions.len()).filter(|&i| fold_of[i] == f).collect();
            debug_assert!(test.iter().all(|i| !train.contains(i)));
            let xt = x.select_rows(&train);
            let xe = x.select_rows(&test);
            let (xt, xe) = standardize(&xt, &xe);
            let y: Vec<f64> = train.iter().map(|&i| if labels[i] { 1.0 } else { 0.0 }).collect();
            let model = fit_logistic(&xt, &y, cfg.l2, cfg.tol, cfg.max_iter);
            (test, model.decision(&xe).iter().copied().collect())
        })
        .collect();

    let mut scores = vec![f64::NAN; sessions.len()];
    let mut fold_aucs = Vec::with_capacity(plan.folds);
    for (test, s) in &per_fold {
        for (&i, &v) in test.iter().zip(s) {
            scores[i] = v;
        }
        let l: Vec<bool> = test.iter().map(|&i| labels[i]).collect();
        fold_aucs.push(auc(s, &l));
    }
    assert!(scores.iter().all(|s| !s.is_nan()), "every session scored out of fold");
    let pooled = auc(&scores, &labels).ok_or(Error::InsufficientSessions { needed: 1, have: 0 })?;
    Ok(VariantResult {
        auc: pooled,
        fold_aucs,
        oof: labels.into_iter().zip(scores).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditResult {
    pub auc_main: f64,
    pub auc_metadata: f64,
    pub auc_structural: f64,
    pub auc_masked: f64,
    pub auc_permutation: f64,
    pub variants: BTreeMap<Variant, VariantResult>,
    pub verdict: Verdict,
    pub leakage_threshold: f64,
    pub folds: usize,
    pub sessions_per_class: usize,
    /// (real, sim) sizes before the larger class was downsampled.
    pub original_sizes: (usize, usize),
    pub layout_id: String,
}

pub fn run_audit(real: &[Session], sim: &[Session], layout: &EmbedLayout, cfg: &AuditConfig) -> Result<AuditResult> {
    let plan = plan_folds(real, sim, cfg.folds, cfg.seed)?;
    let results: Vec<(Variant, VariantResult)> = Variant::ALL
        .par_iter()
        .map(|&v| eval_variant(real, sim, &plan, v, layout, cfg).map(|r| (v, r)))
        .collect::<Result<_>>()?;
    let variants: BTreeMap<Variant, VariantResult> = results.into_iter().collect();
    let a = |v: Variant| variants[&v].auc;
    Ok(AuditResult {
        auc_main: a(Variant::Main),
        auc_metadata: a(Variant::MetadataOnly),
        auc_structural: a(Variant::StructuralOnly),
        auc_masked: a(Variant::MaskedLength),
        auc_permutation: a(Variant::Permutation),
        verdict: verdict(a(Variant::MetadataOnly), a(Variant::Permutation), cfg.leakage_auc),
        leakage_threshold: cfg.leakage_auc,
        folds: cfg.folds,
        sessions_per_class: plan.real.len(),
        original_sizes: plan.original_sizes,
        layout_id: layout.layout_id(),
        variants,
    })
}
