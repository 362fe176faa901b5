//! User-level splits and pair construction.
//!
//! Positive pairs are two sessions of one user. Negative pairs are sessions
//! of two different users that share keyboard layout *and* mouse kind, or
//! share a region. All sampling is driven by explicit seeds.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::session::{AgeBand, DeviceContext, Demographics, Gender, SessionRecord};
use crate::{Error, Result};

/// Default number of pairs of each label for validation and test.
pub const DEFAULT_EVAL_PAIRS: usize = 6000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: BTreeSet<String>,
    pub validation: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
            SplitName::Test => "test",
        }
    }
}

impl CorpusSplit {
    pub fn users(&self, which: SplitName) -> &BTreeSet<String> {
        match which {
            SplitName::Train => &self.train,
            SplitName::Validation => &self.validation,
            SplitName::Test => &self.test,
        }
    }

    pub fn sessions<'a>(&self, which: SplitName, sessions: &'a [SessionRecord]) -> Vec<&'a SessionRecord> {
        let users = self.users(which);
        sessions.iter().filter(|s| users.contains(&s.user_id)).collect()
    }
}

/// Shuffles the distinct users with `seed`, then cuts validation and test
/// sizes rounded to nearest; the remainder goes to train.
pub fn split_users<S: AsRef<str>>(users: &[S], ratios: (f64, f64, f64), seed: u64) -> Result<CorpusSplit> {
    let unique: BTreeSet<&str> = users.iter().map(AsRef::as_ref).collect();
    let n = unique.len();
    if n < 5 {
        return Err(Error::TooFewUsers { needed: 5, got: n });
    }
    let (r_train, r_val, r_test) = ratios;
    let sum = r_train + r_val + r_test;
    if !(sum > 0.0) || r_train < 0.0 || r_val < 0.0 || r_test < 0.0 {
        return Err(Error::InvalidArgument("split ratios must be non-negative with a positive sum".into()));
    }
    let n_val = libm::round(r_val / sum * n as f64) as usize;
    let n_test = libm::round(r_test / sum * n as f64) as usize;
    let n_val = n_val.min(n);
    let n_test = n_test.min(n - n_val);

    let mut order: Vec<&str> = unique.into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |xs: &[&str]| xs.iter().map(|s| String::from(*s)).collect::<BTreeSet<_>>();
    Ok(CorpusSplit {
        validation: take(&order[..n_val]),
        test: take(&order[n_val..n_val + n_test]),
        train: take(&order[n_val + n_test..]),
    })
}

/// The session metadata pair construction needs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub session_id: String,
    pub user_id: String,
    pub device: DeviceContext,
    pub demographics: Demographics,
}

impl From<&SessionRecord> for SessionMeta {
    fn from(s: &SessionRecord) -> Self {
        Self {
            session_id: s.session_id.clone(),
            user_id: s.user_id.clone(),
            device: s.device.clone(),
            demographics: s.demographics,
        }
    }
}

/// Demographic group membership of one side of a pair.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupTags {
    pub gender: Gender,
    pub age_band: AgeBand,
    pub region: String,
}

impl From<&SessionMeta> for GroupTags {
    fn from(m: &SessionMeta) -> Self {
        Self { gender: m.demographics.gender, age_band: m.demographics.age_band, region: m.device.region.clone() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairLabel {
    Positive,
    Negative,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionPair {
    pub session_a: String,
    pub session_b: String,
    pub label: PairLabel,
    pub groups: [GroupTags; 2],
}

impl SessionPair {
    fn new(a: &SessionMeta, b: &SessionMeta, label: PairLabel) -> Self {
        Self {
            session_a: a.session_id.clone(),
            session_b: b.session_id.clone(),
            label,
            groups: [GroupTags::from(a), GroupTags::from(b)],
        }
    }
}

/// Whether two sessions of different users qualify as a hard negative.
pub fn negative_eligible(a: &SessionMeta, b: &SessionMeta) -> bool {
    a.user_id != b.user_id
        && ((a.device.keyboard_layout == b.device.keyboard_layout && a.device.mouse_kind == b.device.mouse_kind)
            || a.device.region == b.device.region)
}

/// Draws `n` items from `pool`: without replacement while the pool lasts,
/// uniformly with replacement after that.
fn draw<T: Copy>(pool: &mut [T], n: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    pool.shuffle(rng);
    let mut out: Vec<T> = pool.iter().copied().take(n).collect();
    while out.len() < n {
        out.push(pool[rng.random_range(0..pool.len())]);
    }
    out
}

pub fn sample_positive_pairs(sessions: &[SessionMeta], n: usize, seed: u64) -> Result<Vec<SessionPair>> {
    let mut by_user: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in sessions.iter().enumerate() {
        by_user.entry(&s.user_id).or_default().push(i);
    }
    let mut combos = Vec::new();
    for idx in by_user.values() {
        for (k, &i) in idx.iter().enumerate() {
            for &j in &idx[k + 1..] {
                combos.push((i, j));
            }
        }
    }
    if combos.is_empty() {
        return Err(Error::NoEligibleUsers);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(draw(&mut combos, n, &mut rng)
        .into_iter()
        .map(|(i, j)| SessionPair::new(&sessions[i], &sessions[j], PairLabel::Positive))
        .collect())
}

pub fn sample_negative_pairs(sessions: &[SessionMeta], n: usize, seed: u64) -> Result<Vec<SessionPair>> {
    let mut combos = Vec::new();
    for i in 0..sessions.len() {
        for j in i + 1..sessions.len() {
            if negative_eligible(&sessions[i], &sessions[j]) {
                combos.push((i, j));
            }
        }
    }
    if combos.is_empty() {
        return Err(Error::NoEligiblePairs);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(draw(&mut combos, n, &mut rng)
        .into_iter()
        .map(|(i, j)| SessionPair::new(&sessions[i], &sessions[j], PairLabel::Negative))
        .collect())
}

/// Count of eligible positive combinations and negative pairs, used to cap
/// evaluation pair counts at what the corpus supports.
pub fn eligible_pair_counts(sessions: &[SessionMeta]) -> (usize, usize) {
    let mut per_user: BTreeMap<&str, usize> = BTreeMap::new();
    for s in sessions {
        *per_user.entry(&s.user_id).or_default() += 1;
    }
    let pos = per_user.values().map(|&k| k * k.saturating_sub(1) / 2).sum();
    let mut neg = 0;
    for i in 0..sessions.len() {
        for j in i + 1..sessions.len() {
            if negative_eligible(&sessions[i], &sessions[j]) {
                neg += 1;
            }
        }
    }
    (pos, neg)
}

/// Draws training batches: `B` distinct users, two distinct sessions each.
///
/// Items are opaque indices grouped per user; users with fewer than two items
/// are ignored.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    groups: Vec<Vec<usize>>,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(groups: Vec<Vec<usize>>, seed: u64) -> Self {
        let groups = groups.into_iter().filter(|g| g.len() >= 2).collect();
        Self { groups, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn eligible_users(&self) -> usize {
        self.groups.len()
    }

    /// `(anchors, positives)`; `anchors[i]` and `positives[i]` belong to the
    /// same user and no user appears twice.
    pub fn next_batch(&mut self, batch_users: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        if batch_users < 2 {
            return Err(Error::BatchTooSmall(batch_users));
        }
        if self.groups.len() < batch_users {
            return Err(Error::InsufficientUsers { needed: batch_users, found: self.groups.len() });
        }
        let users = index::sample(&mut self.rng, self.groups.len(), batch_users);
        let mut anchors = Vec::with_capacity(batch_users);
        let mut positives = Vec::with_capacity(batch_users);
        for u in users.iter() {
            let group = &self.groups[u];
            let pick = index::sample(&mut self.rng, group.len(), 2);
            anchors.push(group[pick.index(0)]);
            positives.push(group[pick.index(1)]);
        }
        Ok((anchors, positives))
    }
}

/// One training batch drawn directly from session records.
pub fn sample_training_batch<'a>(
    sessions: &'a [SessionRecord],
    batch_users: usize,
    seed: u64,
) -> Result<(Vec<&'a SessionRecord>, Vec<&'a SessionRecord>)> {
    let mut by_user: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in sessions.iter().enumerate() {
        by_user.entry(&s.user_id).or_default().push(i);
    }
    let mut sampler = BatchSampler::new(by_user.into_values().collect(), seed);
    let (a, p) = sampler.next_batch(batch_users)?;
    Ok((a.into_iter().map(|i| &sessions[i]).collect(), p.into_iter().map(|i| &sessions[i]).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;

    fn meta(session: &str, user: &str, kb: &str, mouse: &str, region: &str) -> SessionMeta {
        SessionMeta {
            session_id: session.into(),
            user_id: user.into(),
            device: DeviceContext { keyboard_layout: kb.into(), mouse_kind: mouse.into(), region: region.into() },
            demographics: Demographics::default(),
        }
    }

    fn users(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("u{i:02}")).collect()
    }

    #[test]
    fn split_sizes() {
        let s = split_users(&users(10), (0.6, 0.2, 0.2), 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (6, 2, 2));
        let s = split_users(&users(11), (0.6, 0.2, 0.2), 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (7, 2, 2));
        assert!(matches!(split_users(&users(4), (0.6, 0.2, 0.2), 1), Err(Error::TooFewUsers { .. })));
    }

    #[test]
    fn split_is_seeded() {
        let u = users(40);
        assert_eq!(split_users(&u, (0.6, 0.2, 0.2), 9), split_users(&u, (0.6, 0.2, 0.2), 9));
        assert_ne!(split_users(&u, (0.6, 0.2, 0.2), 9), split_users(&u, (0.6, 0.2, 0.2), 10));
    }

    #[test]
    fn one_positive_pair_per_two_session_user() {
        let sessions: Vec<_> = (0..5)
            .flat_map(|u| {
                let user = format!("u{u}");
                [meta(&format!("{user}a"), &user, "us", "o", "r"), meta(&format!("{user}b"), &user, "us", "o", "r")]
            })
            .collect();
        let pairs = sample_positive_pairs(&sessions, 5, 3).unwrap();
        let mut seen: Vec<_> = pairs.iter().map(|p| p.session_a.clone()).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 5);
        assert!(pairs.iter().all(|p| p.label == PairLabel::Positive));
    }

    #[test]
    fn single_session_users_contribute_nothing() {
        let sessions = vec![meta("a", "u1", "us", "o", "r"), meta("b", "u2", "us", "o", "r")];
        assert_eq!(sample_positive_pairs(&sessions, 3, 0), Err(Error::NoEligibleUsers));
    }

    #[test]
    fn negative_constraint() {
        let disjoint = vec![meta("a", "u1", "us", "optical", "eu"), meta("b", "u2", "de", "touchpad", "asia")];
        assert_eq!(sample_negative_pairs(&disjoint, 1, 0), Err(Error::NoEligiblePairs));
        let region_only = vec![meta("a", "u1", "us", "optical", "eu"), meta("b", "u2", "de", "touchpad", "eu")];
        assert_eq!(sample_negative_pairs(&region_only, 1, 0).unwrap().len(), 1);
        let keyboard_only = vec![meta("a", "u1", "us", "optical", "eu"), meta("b", "u2", "us", "touchpad", "asia")];
        assert_eq!(sample_negative_pairs(&keyboard_only, 1, 0), Err(Error::NoEligiblePairs));
    }

    #[test]
    fn exhausted_pool_switches_to_replacement() {
        let sessions = vec![meta("a", "u1", "us", "o", "r"), meta("b", "u1", "us", "o", "r")];
        let pairs = sample_positive_pairs(&sessions, 4, 0).unwrap();
        assert_eq!(pairs.len(), 4);
    }

    #[test]
    fn full_batch_uses_every_user() {
        let groups: Vec<Vec<usize>> = (0..6).map(|u| vec![2 * u, 2 * u + 1]).collect();
        let mut sampler = BatchSampler::new(groups, 5);
        let (a, p) = sampler.next_batch(6).unwrap();
        let mut users: Vec<_> = a.iter().map(|i| i / 2).collect();
        users.sort();
        assert_eq!(users, (0..6).collect::<Vec<_>>());
        assert!(a.iter().zip(&p).all(|(x, y)| x / 2 == y / 2 && x != y));
        assert!(matches!(sampler.next_batch(7), Err(Error::InsufficientUsers { .. })));
    }
}
