//! Ranking agreement between testers, consensus re-weighting, and
//! leave-one-out sensitivity.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(Error::InsufficientSessions { needed: 2, have: a.len() });
    }
    if is_constant(a) || is_constant(b) {
        return Err(Error::ConstantVector);
    }
    Ok(())
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|&x| x == v[0])
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Kendall τ-b.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.len();
    let (mut s, mut ties_a, mut ties_b, mut pairs) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for i in 0..n {
        for j in (i + 1)..n {
            let da = sign(a[i] - a[j]);
            let db = sign(b[i] - b[j]);
            s += da * db;
            pairs += 1.0;
            if da == 0.0 {
                ties_a += 1.0;
            }
            if db == 0.0 {
                ties_b += 1.0;
            }
        }
    }
    Ok((s / ((pairs - ties_a) * (pairs - ties_b)).sqrt()).clamp(-1.0, 1.0))
}

pub fn pearson_r(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::ConstantVector);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks, ties get the average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            ranks[k] = (i + j) as f64 / 2.0 + 1.0;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman_rho(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    pearson_r(&average_ranks(a), &average_ranks(b))
}

/// Item order by descending score; ties keep index order.
fn order_desc(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    idx
}

/// Directed τ_AP: walk the reference ranking from position 2 and, for each
/// item, take the fraction of reference-higher items the other ranking also
/// puts above it (ties half); average and rescale to [−1, 1].
pub fn tau_ap_directed(reference: &[f64], other: &[f64]) -> Result<f64> {
    check_pair(reference, other)?;
    let order = order_desc(reference);
    let n = order.len();
    let mut total = 0.0;
    for i in 1..n {
        let item = order[i];
        let above: f64 = order[..i]
            .iter()
            .map(|&h| {
                if other[h] > other[item] {
                    1.0
                } else if other[h] == other[item] {
                    0.5
                } else {
                    0.0
                }
            })
            .sum();
        total += above / i as f64;
    }
    Ok(2.0 * total / (n - 1) as f64 - 1.0)
}

/// Symmetrized τ_AP (mean of both directions).
pub fn tau_ap(truth: &[f64], tester: &[f64]) -> Result<f64> {
    Ok(0.5 * (tau_ap_directed(truth, tester)? + tau_ap_directed(tester, truth)?))
}

/// Fraction of unordered pairs ordered the same way; a tie on either side counts 0.5.
pub fn pairwise_concordance(truth: &[f64], tester: &[f64]) -> Result<f64> {
    if truth.len() != tester.len() {
        return Err(Error::LengthMismatch(truth.len(), tester.len()));
    }
    let n = truth.len();
    if n < 2 {
        return Err(Error::InsufficientSessions { needed: 2, have: n });
    }
    let (mut agree, mut pairs) = (0.0, 0.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (sign(truth[i] - truth[j]), sign(tester[i] - tester[j]));
            agree += if a == 0.0 || b == 0.0 {
                0.5
            } else if a == b {
                1.0
            } else {
                0.0
            };
            pairs += 1.0;
        }
    }
    Ok(agree / pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    KendallTau,
    SpearmanRho,
    PearsonR,
    TauAp,
    PairwiseConcordance,
}

impl Statistic {
    pub const ALL: [Statistic; 5] = [
        Statistic::KendallTau,
        Statistic::SpearmanRho,
        Statistic::PearsonR,
        Statistic::TauAp,
        Statistic::PairwiseConcordance,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Statistic::KendallTau => "kendall_tau",
            Statistic::SpearmanRho => "spearman_rho",
            Statistic::PearsonR => "pearson_r",
            Statistic::TauAp => "tau_ap",
            Statistic::PairwiseConcordance => "pairwise_concordance",
        }
    }

    pub fn compute(self, truth: &[f64], tester: &[f64]) -> Result<f64> {
        match self {
            Statistic::KendallTau => kendall_tau(truth, tester),
            Statistic::SpearmanRho => spearman_rho(truth, tester),
            Statistic::PearsonR => pearson_r(truth, tester),
            Statistic::TauAp => tau_ap(truth, tester),
            Statistic::PairwiseConcordance => pairwise_concordance(truth, tester),
        }
    }
}

/// Per-query scores, `values[system][query]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub systems: Vec<String>,
    pub queries: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl ScoreMatrix {
    pub fn system_means(&self) -> Vec<f64> {
        self.values.iter().map(|r| r.iter().sum::<f64>() / r.len().max(1) as f64).collect()
    }

    fn means_over(&self, cols: &[usize]) -> Vec<f64> {
        self.values
            .iter()
            .map(|r| cols.iter().map(|&c| r[c]).sum::<f64>() / cols.len() as f64)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub lo: f64,
    pub hi: f64,
    pub resamples: usize,
    pub dropped: usize,
    /// More than 10% of resamples were dropped.
    pub flagged: bool,
}

/// Resample query columns with replacement, recompute system means and the
/// statistic; 2.5/97.5 percentiles. Resamples with a constant vector are dropped.
pub fn bootstrap_ci(
    stat: Statistic,
    truth: &ScoreMatrix,
    tester: &ScoreMatrix,
    resamples: usize,
    seed: u64,
) -> Result<BootstrapCi> {
    let q = truth.queries.len();
    if q != tester.queries.len() || truth.systems.len() != tester.systems.len() {
        return Err(Error::DimensionMismatch(q, tester.queries.len()));
    }
    let point = stat.compute(&truth.system_means(), &tester.system_means());
    if q <= 1 {
        let p = point?;
        return Ok(BootstrapCi {
            lo: p,
            hi: p,
            resamples: 0,
            dropped: 0,
            flagged: false,
        });
    }
    let vals: Vec<Option<f64>> = (0..resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = derive_stream!(seed; "query-bootstrap", b);
            let cols: Vec<usize> = (0..q).map(|_| rng.random_range(0..q)).collect();
            stat.compute(&truth.means_over(&cols), &tester.means_over(&cols)).ok()
        })
        .collect();
    let mut ok: Vec<f64> = vals.into_iter().flatten().collect();
    let dropped = resamples - ok.len();
    let (lo, hi) = crate::realism::percentile_interval(&mut ok, 0.95).unwrap_or((f64::NAN, f64::NAN));
    Ok(BootstrapCi {
        lo,
        hi,
        resamples,
        dropped,
        flagged: dropped * 10 > resamples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementResult {
    pub kendall_tau: f64,
    pub spearman_rho: f64,
    pub pearson_r: f64,
    pub tau_ap: f64,
    pub pairwise_concordance: f64,
    pub ci95: BTreeMap<Statistic, BootstrapCi>,
}

/// All agreement statistics plus CIs; a constant score vector is [`Error::ConstantVector`].
pub fn agreement(truth: &ScoreMatrix, tester: &ScoreMatrix, resamples: usize, seed: u64) -> Result<AgreementResult> {
    let (a, b) = (truth.system_means(), tester.system_means());
    let mut ci95 = BTreeMap::new();
    for s in Statistic::ALL {
        ci95.insert(s, bootstrap_ci(s, truth, tester, resamples, seed)?);
    }
    Ok(AgreementResult {
        kendall_tau: kendall_tau(&a, &b)?,
        spearman_rho: spearman_rho(&a, &b)?,
        pearson_r: pearson_r(&a, &b)?,
        tau_ap: tau_ap(&a, &b)?,
        pairwise_concordance: pairwise_concordance(&a, &b)?,
        ci95,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RateConfig {
    pub max_iter: usize,
    pub tol: f64,
    pub eps: f64,
}

impl Default for RateConfig {
    fn default() -> Self {
        RateConfig {
            max_iter: 10,
            tol: 1e-6,
            eps: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateResult {
    pub weights: BTreeMap<String, f64>,
    pub consensus_scores: Vec<f64>,
    pub consensus_ranking: Vec<String>,
    pub iterations: usize,
    pub converged: bool,
    /// Testers whose scores were constant.
    pub constant_testers: Vec<String>,
    /// Weights after each iteration.
    pub history: Vec<BTreeMap<String, f64>>,
}

impl RateResult {
    pub fn top_system(&self) -> &str {
        &self.consensus_ranking[0]
    }
}

fn min_max(v: &[f64]) -> Option<Vec<f64>> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (hi > lo).then(|| v.iter().map(|x| (x - lo) / (hi - lo)).collect())
}

/// Consensus re-weighting. Each tester's scores are min-max normalized; the
/// consensus is their weighted mean; each weight becomes max(τ(tester,
/// consensus), eps). Stops when no weight moves by `tol` or after `max_iter`.
pub fn rate_aggregate(testers: &BTreeMap<String, Vec<f64>>, systems: &[String], cfg: &RateConfig) -> Result<RateResult> {
    if testers.len() < 2 {
        return Err(Error::InvalidConfig("RATE needs at least two testers".into()));
    }
    if systems.len() < 2 {
        return Err(Error::InvalidConfig("RATE needs at least two systems".into()));
    }
    let mut constant = Vec::new();
    let mut norm: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (id, scores) in testers {
        if scores.len() != systems.len() {
            return Err(Error::LengthMismatch(scores.len(), systems.len()));
        }
        match min_max(scores) {
            Some(n) => {
                norm.insert(id, n);
            }
            None => {
                constant.push(id.clone());
                norm.insert(id, vec![0.0; systems.len()]);
            }
        }
    }
    let mut w: BTreeMap<&str, f64> = norm
        .keys()
        .map(|&k| (k, if constant.iter().any(|c| c == k) { cfg.eps } else { 1.0 }))
        .collect();
    let consensus_of = |w: &BTreeMap<&str, f64>| -> Vec<f64> {
        let total: f64 = w.values().sum();
        (0..systems.len())
            .map(|s| norm.iter().map(|(k, v)| w[k] * v[s]).sum::<f64>() / total)
            .collect()
    };

    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iter {
        iterations += 1;
        let consensus = consensus_of(&w);
        let next: BTreeMap<&str, f64> = norm
            .iter()
            .map(|(&k, v)| {
                let r = if constant.iter().any(|c| c == k) {
                    cfg.eps
                } else {
                    kendall_tau(v, &consensus).unwrap_or(cfg.eps)
                };
                (k, r.max(cfg.eps))
            })
            .collect();
        let delta = next.iter().map(|(k, v)| (v - w[k]).abs()).fold(0.0, f64::max);
        w = next;
        history.push(w.iter().map(|(k, v)| (k.to_string(), *v)).collect());
        if delta < cfg.tol {
            converged = true;
            break;
        }
    }
    let consensus = consensus_of(&w);
    let mut order: Vec<usize> = (0..systems.len()).collect();
    order.sort_by(|&a, &b| consensus[b].total_cmp(&consensus[a]).then_with(|| systems[a].cmp(&systems[b])));
    Ok(RateResult {
        weights: w.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        consensus_ranking: order.iter().map(|&i| systems[i].clone()).collect(),
        consensus_scores: consensus,
        iterations,
        converged,
        constant_testers: constant,
        history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaveOneOut {
    pub dropped: String,
    pub top_system: String,
    pub consensus_ranking: Vec<String>,
    pub top_changed: bool,
    /// Systems whose consensus position moved.
    pub moved: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityResult {
    pub baseline_top: String,
    pub entries: Vec<LeaveOneOut>,
    pub fragile: bool,
    pub fragile_testers: Vec<String>,
}

/// Re-run RATE without each tester; fragile iff any removal changes the top system.
pub fn leave_one_out(testers: &BTreeMap<String, Vec<f64>>, systems: &[String], cfg: &RateConfig) -> Result<SensitivityResult> {
    if testers.len() < 3 {
        return Err(Error::InvalidConfig("leave-one-out needs at least three testers".into()));
    }
    let base = rate_aggregate(testers, systems, cfg)?;
    let entries: Vec<LeaveOneOut> = testers
        .keys()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&drop| {
            let mut rest = testers.clone();
            rest.remove(drop);
            let r = rate_aggregate(&rest, systems, cfg)?;
            let moved = r
                .consensus_ranking
                .iter()
                .zip(&base.consensus_ranking)
                .filter(|(a, b)| a != b)
                .map(|(a, _)| a.clone())
                .collect();
            Ok(LeaveOneOut {
                dropped: drop.clone(),
                top_changed: r.top_system() != base.top_system(),
                top_system: r.top_system().to_string(),
                consensus_ranking: r.consensus_ranking,
                moved,
            })
        })
        .collect::<Result<_>>()?;
    let fragile_testers: Vec<String> = entries.iter().filter(|e| e.top_changed).map(|e| e.dropped.clone()).collect();
    Ok(SensitivityResult {
        baseline_top: base.top_system().to_string(),
        fragile: !fragile_testers.is_empty(),
        fragile_testers,
        entries,
    })
}

/// Pearson r with a two-sided t-test p-value, t = r·√((n−2)/(1−r²)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    pub p: f64,
    pub n: usize,
}

pub fn pearson_test(a: &[f64], b: &[f64]) -> Result<Correlation> {
    let r = pearson_r(a, b)?;
    let n = a.len();
    Ok(Correlation { r, p: pearson_p_value(r, n), n })
}

/// Two-sided p of H0: ρ = 0; P(|T| > |t|) = I_{ν/(ν+t²)}(ν/2, 1/2), ν = n − 2.
pub fn pearson_p_value(r: f64, n: usize) -> f64 {
    if n < 3 {
        return f64::NAN;
    }
    let nu = (n - 2) as f64;
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let t2 = r * r * nu / (1.0 - r * r);
    statrs::function::beta::beta_reg(nu / 2.0, 0.5, nu / (nu + t2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn tau_examples() {
        close(kendall_tau(&[1., 2., 3.], &[1., 2., 3.]).unwrap(), 1.0);
        close(kendall_tau(&[1., 2., 3.], &[3., 2., 1.]).unwrap(), -1.0);
        close(kendall_tau(&[1., 2., 3.], &[2., 1., 3.]).unwrap(), 1.0 / 3.0);
        assert!(matches!(kendall_tau(&[1., 1., 1.], &[1., 2., 3.]), Err(Error::ConstantVector)));
    }

    #[test]
    fn rho_and_r_examples() {
        close(spearman_rho(&[1., 2., 3., 4.], &[1., 3., 2., 4.]).unwrap(), 0.8);
        close(pearson_r(&[1., 2., 3.], &[2., 4., 6.]).unwrap(), 1.0);
        close(pearson_r(&[1., 2., 3.], &[6., 4., 2.]).unwrap(), -1.0);
    }

    #[test]
    fn tau_ap_examples() {
        let truth = [5., 4., 3., 2., 1.];
        close(tau_ap(&truth, &truth).unwrap(), 1.0);
        close(tau_ap(&truth, &[1., 2., 3., 4., 5.]).unwrap(), -1.0);
        let top_swap = tau_ap(&truth, &[4., 5., 3., 2., 1.]).unwrap();
        let bottom_swap = tau_ap(&truth, &[5., 4., 3., 1., 2.]).unwrap();
        assert!(top_swap < bottom_swap);
    }

    #[test]
    fn concordance_examples() {
        close(pairwise_concordance(&[1., 2., 3.], &[1., 2., 3.]).unwrap(), 1.0);
        close(pairwise_concordance(&[1., 2., 3.], &[3., 2., 1.]).unwrap(), 0.0);
        close(pairwise_concordance(&[1., 2., 3.], &[2., 1., 3.]).unwrap(), 2.0 / 3.0);
        assert!(pairwise_concordance(&[1.], &[1.]).is_err());
    }

    fn matrix(values: Vec<Vec<f64>>) -> ScoreMatrix {
        ScoreMatrix {
            systems: (0..values.len()).map(|i| format!("s{i}")).collect(),
            queries: (0..values[0].len()).map(|i| format!("q{i}")).collect(),
            values,
        }
    }

    #[test]
    fn bootstrap_examples() {
        let m = matrix(vec![vec![0.1], vec![0.5], vec![0.9]]);
        let ci = bootstrap_ci(Statistic::KendallTau, &m, &m, 100, 1).unwrap();
        assert_eq!((ci.lo, ci.hi), (1.0, 1.0));
        let m = matrix(vec![vec![0.1, 0.2, 0.3], vec![0.5, 0.4, 0.6], vec![0.9, 0.7, 0.8]]);
        let ci = bootstrap_ci(Statistic::KendallTau, &m, &m, 200, 1).unwrap();
        assert_eq!((ci.lo, ci.hi), (1.0, 1.0));
        assert_eq!(bootstrap_ci(Statistic::TauAp, &m, &m, 200, 7).unwrap(), bootstrap_ci(Statistic::TauAp, &m, &m, 200, 7).unwrap());
    }

    fn systems(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn rate_identical_testers() {
        let t: BTreeMap<String, Vec<f64>> = ["a", "b", "c"].iter().map(|k| (k.to_string(), vec![0.1, 0.4, 0.3])).collect();
        let r = rate_aggregate(&t, &systems(3), &RateConfig::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 1);
        assert!(r.weights.values().all(|&w| w == 1.0));
        assert_eq!(r.consensus_ranking, vec!["s1", "s2", "s0"]);
    }

    #[test]
    fn rate_reversed_tester_is_floored() {
        let mut t = BTreeMap::new();
        t.insert("a".to_string(), vec![1., 2., 3., 4.]);
        t.insert("b".to_string(), vec![1., 2., 3., 4.]);
        t.insert("rev".to_string(), vec![4., 3., 2., 1.]);
        let r = rate_aggregate(&t, &systems(4), &RateConfig::default()).unwrap();
        assert_eq!(r.weights["rev"], 0.01);
        assert_eq!(r.consensus_ranking, vec!["s3", "s2", "s1", "s0"]);
        assert_eq!(r.iterations, 2);
        assert!(r.converged);
    }

    #[test]
    fn rate_is_scale_and_order_invariant() {
        let mut t = BTreeMap::new();
        t.insert("x".to_string(), vec![0.3, 0.1, 0.5, 0.2]);
        t.insert("y".to_string(), vec![0.2, 0.1, 0.6, 0.3]);
        t.insert("z".to_string(), vec![0.1, 0.4, 0.2, 0.3]);
        let base = rate_aggregate(&t, &systems(4), &RateConfig::default()).unwrap();
        let mut scaled = t.clone();
        scaled.get_mut("z").unwrap().iter_mut().for_each(|v| *v *= 40.0);
        let r = rate_aggregate(&scaled, &systems(4), &RateConfig::default()).unwrap();
        assert_eq!(base.consensus_ranking, r.consensus_ranking);
        assert_eq!(base.weights, r.weights);
    }

    #[test]
    fn constant_tester_flagged() {
        let mut t = BTreeMap::new();
        t.insert("a".to_string(), vec![1., 2., 3.]);
        t.insert("flat".to_string(), vec![2., 2., 2.]);
        let r = rate_aggregate(&t, &systems(3), &RateConfig::default()).unwrap();
        assert_eq!(r.constant_testers, vec!["flat"]);
        assert_eq!(r.weights["flat"], 0.01);
    }

    #[test]
    fn leave_one_out_cases() {
        let clone: BTreeMap<String, Vec<f64>> =
            ["a", "b", "c"].iter().map(|k| (k.to_string(), vec![0.1, 0.4, 0.3, 0.9])).collect();
        let r = leave_one_out(&clone, &systems(4), &RateConfig::default()).unwrap();
        assert!(!r.fragile);
        assert_eq!(r.entries.len(), 3);

        // Two testers disagree on the top pair; the third decides it.
        let mut adv = BTreeMap::new();
        adv.insert("a".to_string(), vec![1.0, 0.9, 0.3, 0.0]);
        adv.insert("b".to_string(), vec![0.5, 1.0, 0.3, 0.0]);
        adv.insert("c".to_string(), vec![1.0, 0.5, 0.3, 0.0]);
        let r = leave_one_out(&adv, &systems(4), &RateConfig::default()).unwrap();
        assert!(r.fragile);
        assert_eq!(r.baseline_top, "s0");
        assert_eq!(r.fragile_testers, vec!["c"]);
    }

    #[test]
    fn leave_one_out_mid_rank_moves_are_recorded() {
        let mut t = BTreeMap::new();
        t.insert("a".to_string(), vec![1.0, 0.6, 0.5, 0.0]);
        t.insert("b".to_string(), vec![1.0, 0.5, 0.6, 0.0]);
        t.insert("c".to_string(), vec![1.0, 0.4, 0.5, 0.0]);
        let r = leave_one_out(&t, &systems(4), &RateConfig::default()).unwrap();
        assert!(!r.fragile);
        assert!(r.entries.iter().any(|e| !e.moved.is_empty()));
    }

    #[test]
    fn p_value_matches_reference() {
        // r = 0.5, n = 10: t = 1.63299, two-sided p = 0.14113 (t-table value).
        let p = pearson_p_value(0.5, 10);
        assert!((p - 0.141_13).abs() < 1e-4, "{p}");
        assert_eq!(pearson_p_value(1.0, 10), 0.0);
        assert!((pearson_p_value(0.0, 10) - 1.0).abs() < 1e-12);
    }
}
