//! Ranking and operating-point metrics.
//!
//! A pair is classified as a match iff `score >= threshold`.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::sampling::{GroupTags, PairLabel, SessionPair};
use crate::session::{AgeBand, Gender};
use crate::{Error, Result};

/// Offset above the top negative when no negative may be flagged.
pub const THRESHOLD_DELTA: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub pair: SessionPair,
    pub score: f64,
}

/// Mann–Whitney AUROC with ties counted as one half.
///
/// Sorts once and sweeps tie groups in ascending score order, accumulating
/// twice the U statistic in integers so the result is exact.
pub fn auroc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() {
        return Err(Error::EmptySide("positive"));
    }
    if neg.is_empty() {
        return Err(Error::EmptySide("negative"));
    }
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&s| (s, true)).chain(neg.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        let (mut p, mut n) = (0u128, 0u128);
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                p += 1;
            } else {
                n += 1;
            }
            j += 1;
        }
        twice_u += 2 * p * neg_below + p * n;
        neg_below += n;
        i = j;
    }
    Ok(twice_u as f64 / (2.0 * pos.len() as f64 * neg.len() as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: f64,
    pub fpr_target: f64,
    /// Split the threshold was calibrated on.
    pub calibrated_on: String,
    pub method: String,
    pub n_negatives: usize,
    /// Fewer than `ceil(1 / fpr_target)` negatives were available.
    pub undersampled: bool,
}

/// Picks the threshold whose FPR on `neg_scores` is at most `fpr_target`.
///
/// With `m = floor(fpr_target * N)` the cut sits midway between the m-th and
/// (m+1)-th largest negatives. If that boundary falls inside a block of tied
/// scores the cut moves up past the block; with nothing left to flag the
/// threshold is the top negative plus [`THRESHOLD_DELTA`].
pub fn calibrate_threshold(neg_scores: &[f64], fpr_target: f64) -> Result<Threshold> {
    if neg_scores.is_empty() {
        return Err(Error::EmptyNegatives);
    }
    if !(fpr_target > 0.0 && fpr_target < 1.0) {
        return Err(Error::InvalidArgument("fpr_target must lie in (0, 1)".into()));
    }
    if neg_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let n = neg_scores.len();
    let mut sorted = neg_scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));

    let mut m = libm::floor(fpr_target * n as f64) as usize;
    // Guard the floor against representation error in fpr_target * n.
    while m < n && (m + 1) as f64 / n as f64 <= fpr_target {
        m += 1;
    }
    while m > 0 && m as f64 / n as f64 > fpr_target {
        m -= 1;
    }
    let mut k = m.min(n - 1);
    while k > 0 && sorted[k - 1] == sorted[k] {
        k -= 1;
    }
    let value = if k == 0 {
        sorted[0] + THRESHOLD_DELTA
    } else {
        let mid = sorted[k - 1] / 2.0 + sorted[k] / 2.0;
        if mid > sorted[k] {
            mid
        } else {
            sorted[k - 1]
        }
    };
    Ok(Threshold {
        value,
        fpr_target,
        calibrated_on: String::new(),
        method: String::new(),
        n_negatives: n,
        undersampled: (n as f64) < libm::ceil(1.0 / fpr_target),
    })
}

/// Fraction of `scores` at or above `threshold`.
pub fn rate_at_or_above(scores: &[f64], threshold: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().filter(|&&s| s >= threshold).count() as f64 / scores.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub method: String,
    pub auroc: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub threshold: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

pub fn split_scores(pairs: &[ScoredPair]) -> (Vec<f64>, Vec<f64>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for p in pairs {
        match p.pair.label {
            PairLabel::Positive => pos.push(p.score),
            PairLabel::Negative => neg.push(p.score),
        }
    }
    (pos, neg)
}

pub fn evaluate(method: &str, pairs: &[ScoredPair], threshold: f64) -> Result<EvaluationReport> {
    if pairs.iter().any(|p| !p.score.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let (pos, neg) = split_scores(pairs);
    let auroc = auroc(&pos, &neg)?;
    Ok(EvaluationReport {
        method: method.into(),
        auroc,
        fpr: rate_at_or_above(&neg, threshold),
        fnr: pos.iter().filter(|&&s| s < threshold).count() as f64 / pos.len() as f64,
        threshold,
        n_pos: pos.len(),
        n_neg: neg.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    Gender,
    AgeBand,
    Region,
}

impl GroupBy {
    pub fn as_str(self) -> &'static str {
        match self {
            GroupBy::Gender => "gender",
            GroupBy::AgeBand => "age_band",
            GroupBy::Region => "region",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gender" => Some(GroupBy::Gender),
            "age_band" | "age" => Some(GroupBy::AgeBand),
            "region" => Some(GroupBy::Region),
            _ => None,
        }
    }

    /// The group tag of one side, `None` when unknown.
    fn tag(self, g: &GroupTags) -> Option<String> {
        match self {
            GroupBy::Gender => (g.gender != Gender::Unknown).then(|| g.gender.as_str().into()),
            GroupBy::AgeBand => (g.age_band != AgeBand::Unknown).then(|| g.age_band.as_str().into()),
            GroupBy::Region => (!g.region.is_empty()).then(|| g.region.clone()),
        }
    }

    fn order(self, tag: &str) -> usize {
        match self {
            GroupBy::Gender => Gender::KNOWN.iter().position(|g| g.as_str() == tag).unwrap_or(usize::MAX),
            GroupBy::AgeBand => AgeBand::KNOWN.iter().position(|b| b.as_str() == tag).unwrap_or(usize::MAX),
            GroupBy::Region => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairnessRow {
    pub attribute: GroupBy,
    pub group: String,
    pub pairs: usize,
    /// Share of all negative pairs that touch this group.
    pub ratio: f64,
    pub tnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub rows: Vec<FairnessRow>,
    pub overall_tnr: f64,
    pub total_pairs: usize,
    pub threshold: f64,
}

impl FairnessReport {
    pub fn rows_for(&self, attribute: GroupBy) -> impl Iterator<Item = &FairnessRow> {
        self.rows.iter().filter(move |r| r.attribute == attribute)
    }

    pub fn ratio_sum(&self, attribute: GroupBy) -> f64 {
        self.rows_for(attribute).map(|r| r.ratio).sum()
    }
}

/// Per-group true negative rate over negative pairs.
///
/// A pair belongs to every group either of its users belongs to, so a
/// cross-group pair counts in both and ratios can sum past 1. Unknown tags
/// get no row but their pairs still count toward the totals. Positive pairs
/// in the input are ignored.
pub fn fairness_audit(pairs: &[ScoredPair], threshold: f64, group_by: &[GroupBy]) -> Result<FairnessReport> {
    let negatives: Vec<&ScoredPair> = pairs.iter().filter(|p| p.pair.label == PairLabel::Negative).collect();
    if negatives.is_empty() {
        return Err(Error::NoNegativePairs);
    }
    let total = negatives.len();
    let rejected_total = negatives.iter().filter(|p| p.score < threshold).count();

    let mut rows = Vec::new();
    for &attr in group_by {
        let mut tally: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for p in &negatives {
            let [a, b] = &p.pair.groups;
            let ta = attr.tag(a);
            let tb = attr.tag(b);
            let correct = p.score < threshold;
            let mut bump = |tag: &String| {
                let e = tally.entry(tag.clone()).or_default();
                e.0 += 1;
                if correct {
                    e.1 += 1;
                }
            };
            if let Some(t) = &ta {
                bump(t);
            }
            if let Some(t) = &tb {
                if ta.as_ref() != Some(t) {
                    bump(t);
                }
            }
        }
        let mut attr_rows: Vec<FairnessRow> = tally
            .into_iter()
            .map(|(group, (count, correct))| FairnessRow {
                attribute: attr,
                group,
                pairs: count,
                ratio: count as f64 / total as f64,
                tnr: correct as f64 / count as f64,
            })
            .collect();
        attr_rows.sort_by(|x, y| attr.order(&x.group).cmp(&attr.order(&y.group)).then_with(|| x.group.cmp(&y.group)));
        rows.extend(attr_rows);
    }
    Ok(FairnessReport { rows, overall_tnr: rejected_total as f64 / total as f64, total_pairs: total, threshold })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.9, 0.8], &[0.1, 0.2]), Ok(1.0));
        assert_eq!(auroc(&[0.5], &[0.5]), Ok(0.5));
        assert_eq!(auroc(&[0.8, 0.4], &[0.6, 0.2]), Ok(0.75));
        assert_eq!(auroc(&[], &[0.1]), Err(Error::EmptySide("positive")));
    }

    #[test]
    fn calibration_examples() {
        let t = calibrate_threshold(&[0.1, 0.2, 0.3, 0.9], 0.25).unwrap();
        assert!((t.value - 0.6).abs() < 1e-15);
        assert_eq!(rate_at_or_above(&[0.1, 0.2, 0.3, 0.9], t.value), 0.25);

        let t = calibrate_threshold(&[0.1, 0.2, 0.3, 0.9], 0.1).unwrap();
        assert_eq!(t.value, 0.9 + THRESHOLD_DELTA);
        assert!(t.undersampled);

        let t = calibrate_threshold(&[0.5; 4], 0.25).unwrap();
        assert!(t.value > 0.5);
        assert_eq!(rate_at_or_above(&[0.5; 4], t.value), 0.0);

        assert_eq!(calibrate_threshold(&[], 0.01), Err(Error::EmptyNegatives));
    }

    #[test]
    fn tie_block_below_the_cut_is_kept_out() {
        // m = 2 would split the 0.7 block; the cut moves above it.
        let neg = [0.9, 0.7, 0.7, 0.7, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1];
        let t = calibrate_threshold(&neg, 0.2).unwrap();
        assert!((t.value - 0.8).abs() < 1e-15);
        assert_eq!(rate_at_or_above(&neg, t.value), 0.1);
    }
}
