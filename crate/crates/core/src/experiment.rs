//! In-memory experiment steps: split, train, calibrate, evaluate.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::eval::{calibrate_threshold, split_scores, ScoredPair, Threshold};
use crate::features::{build_digraph_vocab, extract, DigraphVocabulary, FeatureSet};
use crate::math::mix_seed;
use crate::methods::{Prepared, Scorer};
use crate::nn::{Network, NetworkConfig};
use crate::sampling::{
    eligible_pair_counts, sample_negative_pairs, sample_positive_pairs, split_users, CorpusSplit, SessionMeta,
    SessionPair, SplitName, DEFAULT_EVAL_PAIRS,
};
use crate::session::{SessionRecord, ValidationPolicy};
use crate::train::{train, TrainConfig, TrainOutcome};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub ratios: (f64, f64, f64),
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { ratios: (0.6, 0.2, 0.2), seed: 0 }
    }
}

pub fn split_corpus(sessions: &[SessionRecord], cfg: &SplitConfig) -> Result<CorpusSplit> {
    let users: Vec<&str> = sessions.iter().map(|s| s.user_id.as_str()).collect();
    split_users(&users, cfg.ratios, cfg.seed)
}

/// Feature vectors of every usable session, grouped by user in id order.
/// Sessions lacking the data for `set` are skipped.
pub fn grouped_features(
    set: FeatureSet,
    sessions: &[&SessionRecord],
    vocab: &DigraphVocabulary,
    policy: &ValidationPolicy,
) -> Vec<Vec<Vec<f64>>> {
    let mut by_user: BTreeMap<&str, Vec<Vec<f64>>> = BTreeMap::new();
    for s in sessions {
        if let Ok(v) = extract(set, s, vocab, policy) {
            by_user.entry(&s.user_id).or_default().push(v);
        }
    }
    by_user.into_values().collect()
}

/// Builds the vocabulary from `train_sessions` and trains a network for `set`.
pub fn train_for(
    set: FeatureSet,
    train_sessions: &[&SessionRecord],
    policy: &ValidationPolicy,
    net_seed: u64,
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let vocab = if set.needs_keystrokes() {
        build_digraph_vocab(train_sessions.iter().copied(), policy)?
    } else {
        DigraphVocabulary::empty()
    };
    let users = grouped_features(set, train_sessions, &vocab, policy);
    train(&users, &vocab, &NetworkConfig::for_features(set, net_seed), train_cfg)
}

/// Positive and negative pairs over `sessions`, each label capped at the
/// number of distinct eligible pairs so no pair repeats.
pub fn eval_pairs(sessions: &[&SessionRecord], per_label: usize, seed: u64) -> Result<Vec<SessionPair>> {
    let meta: Vec<SessionMeta> = sessions.iter().map(|s| SessionMeta::from(*s)).collect();
    let (n_pos, n_neg) = eligible_pair_counts(&meta);
    let mut pairs = sample_positive_pairs(&meta, per_label.min(n_pos), mix_seed(seed, 1, 0))?;
    pairs.extend(sample_negative_pairs(&meta, per_label.min(n_neg), mix_seed(seed, 2, 0))?);
    Ok(pairs)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub scored: Vec<ScoredPair>,
    /// Pairs dropped because a side could not be prepared or compared.
    pub skipped: usize,
}

/// Scores `pairs`, preparing each referenced session once.
pub fn score_pairs<S: Scorer>(scorer: &S, sessions: &[&SessionRecord], pairs: &[SessionPair]) -> Result<ScoreSummary> {
    let by_id: BTreeMap<&str, &SessionRecord> = sessions.iter().map(|s| (s.session_id.as_str(), *s)).collect();
    let mut prepared: BTreeMap<&str, Option<Prepared>> = BTreeMap::new();
    let mut out = ScoreSummary::default();
    for p in pairs {
        for id in [p.session_a.as_str(), p.session_b.as_str()] {
            if !prepared.contains_key(id) {
                let s = by_id.get(id).ok_or_else(|| Error::UnknownSession(id.into()))?;
                prepared.insert(id, scorer.prepare(s).ok());
            }
        }
        let score = match (&prepared[p.session_a.as_str()], &prepared[p.session_b.as_str()]) {
            (Some(a), Some(b)) => scorer.compare(a, b),
            _ => None,
        };
        match score {
            Some(score) => out.scored.push(ScoredPair { pair: p.clone(), score }),
            None => out.skipped += 1,
        }
    }
    Ok(out)
}

/// Calibrates on the negatives of already-scored validation pairs.
pub fn calibrate_on(scored: &[ScoredPair], fpr_target: f64, method: &str) -> Result<Threshold> {
    let (_, neg) = split_scores(scored);
    let mut t = calibrate_threshold(&neg, fpr_target)?;
    t.calibrated_on = String::from(SplitName::Validation.as_str());
    t.method = method.into();
    Ok(t)
}

/// Settings of a full split/train/calibrate/evaluate run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub split: SplitConfig,
    pub train: TrainConfig,
    pub net_seed: u64,
    pub pair_seed: u64,
    pub eval_pairs: usize,
    pub fpr_target: f64,
    pub policy: ValidationPolicy,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            split: SplitConfig::default(),
            train: TrainConfig::default(),
            net_seed: 0,
            pair_seed: 0,
            eval_pairs: DEFAULT_EVAL_PAIRS,
            fpr_target: 0.01,
            policy: ValidationPolicy::default(),
        }
    }
}

/// Trained networks keyed by feature set.
pub type Networks = BTreeMap<FeatureSet, Network>;

/// Validation and test pairs drawn with independent seeds.
pub fn split_pairs(
    sessions: &[SessionRecord],
    split: &CorpusSplit,
    cfg: &ExperimentConfig,
) -> Result<(Vec<SessionPair>, Vec<SessionPair>)> {
    let val = eval_pairs(&split.sessions(SplitName::Validation, sessions), cfg.eval_pairs, mix_seed(cfg.pair_seed, 10, 0))?;
    let test = eval_pairs(&split.sessions(SplitName::Test, sessions), cfg.eval_pairs, mix_seed(cfg.pair_seed, 11, 0))?;
    Ok((val, test))
}
