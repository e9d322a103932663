//! Edge/cloud routing simulation.
//!
//! A sample stays on the edge iff its score is `≥ δ`; otherwise it is
//! appealed to the cloud. Metrics per threshold:
//!
//! - `SR = (1/N) Σ 𝟙(score ≥ δ)`, `AR = 1 − SR`
//! - overall accuracy: edge samples scored by the small net's argmax, cloud
//!   samples by the big model's (the oracle is always right)
//! - `AccI = (Acc_sys − Acc(f₁)) / (Acc(f₀) − Acc(f₁))`, undefined when the
//!   two standalone accuracies coincide
//! - `AD = Acc(f₀) − Acc_sys`
//! - `cost = SR·c₁ + (1 − SR)·c₀`

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{contract, Error, Result};
use crate::losses::baseline_scores;
use crate::models::{argmax, count_flops, ArchSpec, BigModel, Task, TwoHeadNet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScoreSource {
    #[serde(rename = "q")]
    PredictorQ,
    #[serde(rename = "msp")]
    Msp,
    #[serde(rename = "sm")]
    ScoreMargin,
    #[serde(rename = "entropy")]
    Entropy,
}

impl ScoreSource {
    pub const ALL: [ScoreSource; 4] = [
        ScoreSource::PredictorQ,
        ScoreSource::Msp,
        ScoreSource::ScoreMargin,
        ScoreSource::Entropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScoreSource::PredictorQ => "q",
            ScoreSource::Msp => "msp",
            ScoreSource::ScoreMargin => "sm",
            ScoreSource::Entropy => "entropy",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|src| src.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown score source {s:?} (expected q, msp, sm or entropy)")))
    }

    /// Range a score of this kind can take for `k` classes.
    pub fn range(self, k: usize) -> (f64, f64) {
        match self {
            ScoreSource::Entropy => (-(k.max(2) as f64).ln(), 0.0),
            _ => (0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoutingPolicy {
    pub source: ScoreSource,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Route {
    Edge,
    Cloud,
}

/// Edge iff `score ≥ delta`; ties stay on the edge.
pub fn route(score: f64, delta: f64) -> Route {
    if score >= delta {
        Route::Edge
    } else {
        Route::Cloud
    }
}

/// Per-path costs. `c1` covers predictor + small net, `c0` predictor + big net
/// + communication; `budget` lies strictly between them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    pub c1: f64,
    pub c0: f64,
    pub budget: f64,
}

impl CostModel {
    pub fn new(c1: f64, c0: f64, budget: f64) -> Result<Self> {
        let m = Self { c1, c0, budget };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c1 > 0.0 && self.c0 > self.c1) {
            return contract(format!("need c0 > c1 > 0, got c1={} c0={}", self.c1, self.c0));
        }
        if !(self.budget > self.c1 && self.budget < self.c0) {
            return contract(format!(
                "budget {} outside ({}, {})",
                self.budget, self.c1, self.c0
            ));
        }
        Ok(())
    }

    /// Costs from counted FLOPs: `c1` = small net with predictor, `c0` =
    /// predictor + big net + `comm_surcharge`. The budget defaults to the
    /// midpoint.
    pub fn from_flops(small: &ArchSpec, big_flops: f64, comm_surcharge: f64) -> Result<Self> {
        let c1 = count_flops(small, true) as f64;
        let predictor = c1 - count_flops(small, false) as f64;
        let c0 = predictor + big_flops + comm_surcharge;
        Self::new(c1, c0, 0.5 * (c1 + c0))
    }

    pub fn overall_cost(&self, sr: f64) -> f64 {
        sr * self.c1 + (1.0 - sr) * self.c0
    }
}

/// `b̂ = (c₀ − b)/(c₀ − c₁)`: the minimum fraction of inputs the edge must
/// keep to stay within budget.
pub fn budget_fraction(cost: &CostModel) -> Result<f64> {
    cost.validate()?;
    Ok((cost.c0 - cost.budget) / (cost.c0 - cost.c1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub delta: f64,
    pub sr: f64,
    pub ar: f64,
    pub overall_accuracy: f64,
    pub acc_small: f64,
    pub acc_big: f64,
    /// `None` when `acc_big == acc_small`.
    pub acc_i: Option<f64>,
    pub ad: f64,
    pub overall_cost: f64,
    pub n_samples: usize,
}

/// Everything routing needs, computed once per (net, big, dataset): scores
/// for every source and per-sample correctness of both paths.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcomes {
    pub q: Vec<f64>,
    /// Baseline scores, absent for regression.
    pub msp: Option<Vec<f64>>,
    pub sm: Option<Vec<f64>>,
    pub entropy: Option<Vec<f64>>,
    pub small_correct: Vec<bool>,
    pub big_correct: Vec<bool>,
    pub num_classes: Option<usize>,
}

impl Outcomes {
    /// Classification outcomes of `net` and `big` on `data`.
    pub fn classify(net: &TwoHeadNet, big: &BigModel, data: &Dataset) -> Result<Self> {
        let labels = data
            .labels()
            .ok_or_else(|| Error::Contract("classification evaluation needs class labels".into()))?;
        if data.is_empty() {
            return contract("evaluation needs a nonempty dataset");
        }
        let (probs, q) = net.predict(&data.feature_tensor())?;
        let n = data.len();
        let mut msp = Vec::with_capacity(n);
        let mut sm = Vec::with_capacity(n);
        let mut entropy = Vec::with_capacity(n);
        let mut small_correct = Vec::with_capacity(n);
        for i in 0..n {
            let row = probs.row(i);
            let s = baseline_scores(row);
            msp.push(s.msp);
            sm.push(s.sm);
            entropy.push(s.entropy_score);
            small_correct.push(argmax(row) == labels[i]);
        }
        Ok(Self {
            q,
            msp: Some(msp),
            sm: Some(sm),
            entropy: Some(entropy),
            small_correct,
            big_correct: big.correct(data)?,
            num_classes: data.num_classes(),
        })
    }

    /// Regression outcomes with an oracle big model: the small net is correct
    /// iff `RMSE(pred, target) < err_threshold`.
    pub fn regress(net: &TwoHeadNet, data: &Dataset, err_threshold: f64) -> Result<Self> {
        if !(err_threshold > 0.0) {
            return contract(format!("err_threshold must be positive, got {err_threshold}"));
        }
        if net.arch().task != Task::Regression || data.labels().is_some() {
            return contract("regression evaluation needs a regression network and dataset");
        }
        if data.is_empty() {
            return contract("evaluation needs a nonempty dataset");
        }
        let (pred, q) = net.predict(&data.feature_tensor())?;
        let small_correct = (0..data.len())
            .map(|i| rmse(pred.row(i), data.target_row(i).unwrap()) < err_threshold)
            .collect();
        Ok(Self {
            q,
            msp: None,
            sm: None,
            entropy: None,
            small_correct,
            big_correct: vec![true; data.len()],
            num_classes: None,
        })
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn scores(&self, source: ScoreSource) -> Result<&[f64]> {
        let s = match source {
            ScoreSource::PredictorQ => Some(&self.q),
            ScoreSource::Msp => self.msp.as_ref(),
            ScoreSource::ScoreMargin => self.sm.as_ref(),
            ScoreSource::Entropy => self.entropy.as_ref(),
        };
        s.map(Vec::as_slice)
            .ok_or_else(|| Error::Contract(format!("score source {} is unavailable for regression", source.name())))
    }

    pub fn evaluate(&self, policy: RoutingPolicy, cost: &CostModel) -> Result<EvalReport> {
        evaluate_scores(self.scores(policy.source)?, &self.small_correct, &self.big_correct, policy.delta, cost)
    }
}

/// Root of the mean squared coordinate error.
pub fn rmse(pred: &[f64], target: &[f64]) -> f64 {
    let sq: f64 = pred.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum();
    (sq / pred.len() as f64).sqrt()
}

/// Metric suite for one threshold over precomputed scores and correctness.
pub fn evaluate_scores(
    scores: &[f64],
    small_correct: &[bool],
    big_correct: &[bool],
    delta: f64,
    cost: &CostModel,
) -> Result<EvalReport> {
    let n = scores.len();
    if n == 0 {
        return contract("evaluation needs a nonempty dataset");
    }
    if small_correct.len() != n || big_correct.len() != n {
        return Err(Error::Dimension {
            op: "evaluate",
            left: vec![n],
            right: vec![small_correct.len(), big_correct.len()],
        });
    }
    let mut edge = 0usize;
    let mut sys_correct = 0usize;
    for i in 0..n {
        let ok = match route(scores[i], delta) {
            Route::Edge => {
                edge += 1;
                small_correct[i]
            }
            Route::Cloud => big_correct[i],
        };
        sys_correct += usize::from(ok);
    }
    let nf = n as f64;
    let sr = edge as f64 / nf;
    let ar = 1.0 - sr;
    let overall_accuracy = sys_correct as f64 / nf;
    let acc_small = small_correct.iter().filter(|&&c| c).count() as f64 / nf;
    let acc_big = big_correct.iter().filter(|&&c| c).count() as f64 / nf;
    let gap = acc_big - acc_small;
    let acc_i = (gap != 0.0).then(|| (overall_accuracy - acc_small) / gap);
    Ok(EvalReport {
        delta,
        sr,
        ar,
        overall_accuracy,
        acc_small,
        acc_big,
        acc_i,
        ad: acc_big - overall_accuracy,
        overall_cost: cost.overall_cost(sr),
        n_samples: n,
    })
}

/// Relative accuracy improvement from the three accuracies; `None` when the
/// standalone accuracies coincide.
pub fn acc_improvement(acc_sys: f64, acc_small: f64, acc_big: f64) -> Option<f64> {
    let gap = acc_big - acc_small;
    (gap != 0.0).then(|| (acc_sys - acc_small) / gap)
}

pub fn evaluate(net: &TwoHeadNet, big: &BigModel, data: &Dataset, policy: RoutingPolicy, cost: &CostModel) -> Result<EvalReport> {
    Outcomes::classify(net, big, data)?.evaluate(policy, cost)
}

pub fn evaluate_regression(
    net: &TwoHeadNet,
    data: &Dataset,
    err_threshold: f64,
    policy: RoutingPolicy,
    cost: &CostModel,
) -> Result<EvalReport> {
    Outcomes::regress(net, data, err_threshold)?.evaluate(policy, cost)
}

/// One report per threshold, in input order. Thresholds are evaluated in
/// parallel; results match a sequential loop exactly.
pub fn sweep_thresholds(outcomes: &Outcomes, source: ScoreSource, cost: &CostModel, deltas: &[f64]) -> Result<Vec<EvalReport>> {
    if deltas.windows(2).any(|w| !(w[0] <= w[1])) {
        return contract("sweep thresholds must be sorted ascending");
    }
    let scores = outcomes.scores(source)?;
    deltas
        .par_iter()
        .map(|&d| evaluate_scores(scores, &outcomes.small_correct, &outcomes.big_correct, d, cost))
        .collect()
}

/// Evenly spaced thresholds over `[lo, hi]`, inclusive.
pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..points)
            .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyTarget {
    /// `AD ≤ x`
    MaxAd(f64),
    /// `AccI ≥ x`; an undefined AccI never meets the target.
    MinAccI(f64),
}

/// Slack for comparing count ratios against targets such as `AD ≤ 0.01`.
pub const TARGET_TOLERANCE: f64 = 1e-12;

impl AccuracyTarget {
    pub fn met_by(&self, r: &EvalReport) -> bool {
        match *self {
            AccuracyTarget::MaxAd(x) => r.ad <= x + TARGET_TOLERANCE,
            AccuracyTarget::MinAccI(x) => r.acc_i.is_some_and(|a| a >= x - TARGET_TOLERANCE),
        }
    }
}

/// Candidate thresholds for [`find_delta_for_target`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaGrid {
    /// `points` evenly spaced values over the source's empirical score range.
    Uniform { points: usize },
    /// Every distinct observed score.
    Distinct,
}

/// Threshold grid for `scores`: the chosen candidates plus one value above the
/// maximum score (all-cloud).
pub fn delta_grid(scores: &[f64], grid: DeltaGrid) -> Vec<f64> {
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut deltas = match grid {
        DeltaGrid::Uniform { points } => linspace(lo, hi, points.max(2)),
        DeltaGrid::Distinct => {
            let mut v = scores.to_vec();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        }
    };
    deltas.push(hi + 1.0);
    deltas
}

/// The grid threshold that keeps the most samples on the edge while meeting
/// `target`; among thresholds with the same SR the smallest wins.
pub fn find_delta_for_target(
    outcomes: &Outcomes,
    source: ScoreSource,
    target: AccuracyTarget,
    grid: DeltaGrid,
    cost: &CostModel,
) -> Result<(f64, EvalReport)> {
    let deltas = delta_grid(outcomes.scores(source)?, grid);
    let reports = sweep_thresholds(outcomes, source, cost, &deltas)?;
    let mut best: Option<EvalReport> = None;
    for r in reports {
        if target.met_by(&r) && best.as_ref().is_none_or(|b| r.sr > b.sr) {
            best = Some(r);
        }
    }
    best.map(|r| (r.delta, r))
        .ok_or_else(|| Error::Unattainable(format!("{target:?} is not met even with every input appealed")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub bin_left: Vec<f64>,
    pub correct: Vec<usize>,
    pub incorrect: Vec<usize>,
}

/// Equal-width histograms of scores over `[lo, hi]`, split by whether the
/// small net is right. Values outside the range land in the edge bins.
pub fn histogram(scores: &[f64], correct: &[bool], lo: f64, hi: f64, bins: usize) -> Result<Histogram> {
    if bins < 2 {
        return contract(format!("need at least 2 bins, got {bins}"));
    }
    if !(hi > lo) {
        return contract(format!("empty histogram range [{lo}, {hi}]"));
    }
    let width = (hi - lo) / bins as f64;
    let mut h = Histogram {
        lo,
        hi,
        bin_left: (0..bins).map(|b| lo + b as f64 * width).collect(),
        correct: vec![0; bins],
        incorrect: vec![0; bins],
    };
    for (&s, &ok) in scores.iter().zip(correct) {
        let b = (((s - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        if ok {
            h.correct[b] += 1;
        } else {
            h.incorrect[b] += 1;
        }
    }
    Ok(h)
}

/// Histogram of one score source over its natural range: `[0, 1]` for q,
/// MSP and score margin, `[-ln K, 0]` for the entropy score.
pub fn score_histogram(outcomes: &Outcomes, source: ScoreSource, bins: usize) -> Result<Histogram> {
    let (lo, hi) = source.range(outcomes.num_classes.unwrap_or(2));
    histogram(outcomes.scores(source)?, &outcomes.small_correct, lo, hi, bins)
}

/// Probability that a random correct-sample score exceeds a random
/// incorrect-sample score (ties count ½), via mid-ranks.
pub fn auroc(scores_correct: &[f64], scores_incorrect: &[f64]) -> Result<f64> {
    if scores_correct.is_empty() || scores_incorrect.is_empty() {
        return contract("auroc needs both score lists nonempty");
    }
    let mut all: Vec<(f64, bool)> = scores_correct
        .iter()
        .map(|&s| (s, true))
        .chain(scores_incorrect.iter().map(|&s| (s, false)))
        .collect();
    if all.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::NonFinite("auroc scores".into()));
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * all[i..=j].iter().filter(|e| e.1).count() as f64;
        i = j + 1;
    }
    let n_pos = scores_correct.len() as f64;
    let n_neg = scores_incorrect.len() as f64;
    Ok((rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

/// AUROC of a score source for separating small-net-correct from incorrect
/// samples.
pub fn separation_auroc(outcomes: &Outcomes, source: ScoreSource) -> Result<f64> {
    let scores = outcomes.scores(source)?;
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for (&s, &ok) in scores.iter().zip(&outcomes.small_correct) {
        if ok {
            pos.push(s);
        } else {
            neg.push(s);
        }
    }
    auroc(&pos, &neg)
}

/// Provenance stamped on every exported row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportMeta {
    pub config_hash: String,
    pub seed: u64,
}

pub const REPORT_CSV_HEADER: [&str; 14] = [
    "source",
    "delta",
    "sr",
    "ar",
    "overall_accuracy",
    "acc_small",
    "acc_big",
    "acc_i",
    "ad",
    "overall_cost",
    "n_samples",
    "config_hash",
    "seed",
    "format_version",
];

pub const EXPORT_VERSION: u32 = 1;

/// Writes `(source, report)` rows. An undefined AccI is written as `undefined`.
pub fn write_reports_csv<W: Write>(w: W, rows: &[(ScoreSource, EvalReport)], meta: &ExportMeta) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(REPORT_CSV_HEADER)?;
    for (src, r) in rows {
        w.write_record([
            src.name().to_string(),
            r.delta.to_string(),
            r.sr.to_string(),
            r.ar.to_string(),
            r.overall_accuracy.to_string(),
            r.acc_small.to_string(),
            r.acc_big.to_string(),
            r.acc_i.map_or_else(|| "undefined".to_string(), |a| a.to_string()),
            r.ad.to_string(),
            r.overall_cost.to_string(),
            r.n_samples.to_string(),
            meta.config_hash.clone(),
            meta.seed.to_string(),
            EXPORT_VERSION.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub source: ScoreSource,
    #[serde(flatten)]
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportExport {
    pub format_version: u32,
    #[serde(flatten)]
    pub meta: ExportMeta,
    pub rows: Vec<ReportRow>,
}

pub fn reports_json(rows: &[(ScoreSource, EvalReport)], meta: &ExportMeta) -> Result<String> {
    let export = ReportExport {
        format_version: EXPORT_VERSION,
        meta: meta.clone(),
        rows: rows
            .iter()
            .map(|(s, r)| ReportRow {
                source: *s,
                report: r.clone(),
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&export)?)
}

pub fn write_histogram_csv<W: Write>(w: W, h: &Histogram, meta: &ExportMeta) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["bin_left", "correct_count", "incorrect_count", "config_hash", "seed"])?;
    for i in 0..h.bin_left.len() {
        w.write_record([
            h.bin_left[i].to_string(),
            h.correct[i].to_string(),
            h.incorrect[i].to_string(),
            meta.config_hash.clone(),
            meta.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
