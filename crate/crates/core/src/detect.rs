//! Online ring detection over a growing gallery of enrolled sessions.
//!
//! Each new session is compared against earlier sessions of other users.
//! Any comparison at or above the threshold flags the new session for human
//! review, listing the matching sessions as candidates.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::methods::{Prepared, Scorer};
use crate::session::{validate_session, Demographics, DeviceContext, SessionRecord};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GalleryEntry {
    pub session_id: String,
    pub user_id: String,
    pub started_at_ms: i64,
    pub enrolled_at_ms: i64,
    pub device: DeviceContext,
    pub demographics: Demographics,
    pub thumbnail_ref: Option<String>,
    /// Whether each channel met the scorer's validation policy.
    pub keystroke_available: bool,
    pub mouse_available: bool,
    /// `None` when the session lacked the data the scorer needs; such
    /// entries are kept for lookup but never compared.
    pub features: Option<Prepared>,
    /// Why the session could not be scored.
    pub note: Option<String>,
}

impl GalleryEntry {
    pub fn usable(&self) -> bool {
        self.features.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchCandidate {
    pub session_id: String,
    pub user_id: String,
    pub similarity: f64,
    /// 1-based position in the ranked list.
    pub rank: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagStatus {
    Pending,
    Confirmed,
    Cleared,
}

impl FlagStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            FlagStatus::Pending => "pending",
            FlagStatus::Confirmed => "confirmed",
            FlagStatus::Cleared => "cleared",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Confirmed,
    Cleared,
}

impl Verdict {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "confirmed" | "confirm" => Some(Verdict::Confirmed),
            "cleared" | "clear" => Some(Verdict::Cleared),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlagRecord {
    pub session_id: String,
    pub user_id: String,
    pub matches: Vec<MatchCandidate>,
    pub created_at_ms: i64,
    pub status: FlagStatus,
    pub note: Option<String>,
    pub reviewed_at_ms: Option<i64>,
}

impl FlagRecord {
    pub fn top_similarity(&self) -> f64 {
        self.matches.first().map_or(f64::NEG_INFINITY, |m| m.similarity)
    }
}

/// Serializable detector state.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GalleryState {
    /// In enrollment order.
    pub entries: Vec<GalleryEntry>,
    /// Keyed by session id.
    pub flags: BTreeMap<String, FlagRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub threshold: f64,
    /// Only compare against sessions that started at most this long before
    /// or after the new one. `None` compares against the full history.
    pub window_ms: Option<i64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnrollOutcome {
    pub session_id: String,
    pub usable: bool,
    pub note: Option<String>,
    pub flagged: bool,
    pub matches: Vec<MatchCandidate>,
}

pub struct Detector<S> {
    scorer: S,
    config: DetectorConfig,
    state: GalleryState,
    index: BTreeMap<String, usize>,
}

/// Descending similarity, then earlier start, then session id.
fn rank_order(a: &(f64, &GalleryEntry), b: &(f64, &GalleryEntry)) -> Ordering {
    b.0.total_cmp(&a.0)
        .then(a.1.started_at_ms.cmp(&b.1.started_at_ms))
        .then_with(|| a.1.session_id.cmp(&b.1.session_id))
}

fn ranked(mut scored: Vec<(f64, &GalleryEntry)>, limit: Option<usize>) -> Vec<MatchCandidate> {
    scored.sort_by(rank_order);
    if let Some(k) = limit {
        scored.truncate(k);
    }
    scored
        .into_iter()
        .enumerate()
        .map(|(i, (similarity, e))| MatchCandidate {
            session_id: e.session_id.clone(),
            user_id: e.user_id.clone(),
            similarity,
            rank: i + 1,
        })
        .collect()
}

impl<S: Scorer> Detector<S> {
    pub fn new(scorer: S, config: DetectorConfig) -> Result<Self> {
        Self::from_state(scorer, config, GalleryState::default())
    }

    pub fn from_state(scorer: S, config: DetectorConfig, state: GalleryState) -> Result<Self> {
        if !config.threshold.is_finite() {
            return Err(Error::NonFiniteInput);
        }
        let mut index = BTreeMap::new();
        for (i, e) in state.entries.iter().enumerate() {
            if index.insert(e.session_id.clone(), i).is_some() {
                return Err(Error::DuplicateSessionId(e.session_id.clone()));
            }
        }
        Ok(Self { scorer, config, state, index })
    }

    pub fn scorer(&self) -> &S {
        &self.scorer
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn state(&self) -> &GalleryState {
        &self.state
    }

    pub fn into_state(self) -> GalleryState {
        self.state
    }

    pub fn len(&self) -> usize {
        self.state.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.state.entries.is_empty()
    }

    pub fn entry(&self, session_id: &str) -> Option<&GalleryEntry> {
        self.index.get(session_id).map(|&i| &self.state.entries[i])
    }

    pub fn flag(&self, session_id: &str) -> Option<&FlagRecord> {
        self.state.flags.get(session_id)
    }

    fn in_window(&self, a: &GalleryEntry, started_at_ms: i64) -> bool {
        self.config.window_ms.is_none_or(|w| (a.started_at_ms - started_at_ms).abs() <= w)
    }

    /// Adds a session to the gallery and flags it if it matches an earlier
    /// session of a different user.
    pub fn enroll(&mut self, s: &SessionRecord, thumbnail_ref: Option<String>, now_ms: i64) -> Result<EnrollOutcome> {
        if self.index.contains_key(&s.session_id) {
            return Err(Error::DuplicateSessionId(s.session_id.clone()));
        }
        let availability = validate_session(s, &self.scorer.policy());
        let (features, note) = match self.scorer.prepare(s) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let entry = GalleryEntry {
            session_id: s.session_id.clone(),
            user_id: s.user_id.clone(),
            started_at_ms: s.started_at_ms,
            enrolled_at_ms: now_ms,
            device: s.device.clone(),
            demographics: s.demographics,
            thumbnail_ref,
            keystroke_available: availability.usable_for_keystroke,
            mouse_available: availability.usable_for_mouse,
            features,
            note,
        };
        let matches = match &entry.features {
            Some(f) => {
                let hits: Vec<(f64, &GalleryEntry)> = self
                    .state
                    .entries
                    .iter()
                    .filter(|e| e.user_id != entry.user_id && self.in_window(e, entry.started_at_ms))
                    .filter_map(|e| {
                        let sim = self.scorer.compare(f, e.features.as_ref()?)?;
                        (sim >= self.config.threshold).then_some((sim, e))
                    })
                    .collect();
                ranked(hits, None)
            }
            None => Vec::new(),
        };
        let outcome = EnrollOutcome {
            session_id: entry.session_id.clone(),
            usable: entry.usable(),
            note: entry.note.clone(),
            flagged: !matches.is_empty(),
            matches: matches.clone(),
        };
        if outcome.flagged {
            self.state.flags.insert(
                entry.session_id.clone(),
                FlagRecord {
                    session_id: entry.session_id.clone(),
                    user_id: entry.user_id.clone(),
                    matches,
                    created_at_ms: now_ms,
                    status: FlagStatus::Pending,
                    note: None,
                    reviewed_at_ms: None,
                },
            );
        }
        self.index.insert(entry.session_id.clone(), self.state.entries.len());
        self.state.entries.push(entry);
        Ok(outcome)
    }

    /// The most similar sessions of other users, regardless of threshold,
    /// enrollment order, or window. Empty for an unscorable session.
    pub fn find_related(&self, session_id: &str, top_k: usize) -> Result<Vec<MatchCandidate>> {
        let query = self.entry(session_id).ok_or_else(|| Error::UnknownSession(session_id.into()))?;
        let Some(f) = &query.features else {
            return Ok(Vec::new());
        };
        let scored: Vec<(f64, &GalleryEntry)> = self
            .state
            .entries
            .iter()
            .filter(|e| e.user_id != query.user_id)
            .filter_map(|e| Some((self.scorer.compare(f, e.features.as_ref()?)?, e)))
            .collect();
        Ok(ranked(scored, Some(top_k)))
    }

    pub fn record_review(&mut self, session_id: &str, verdict: Verdict, note: Option<String>, now_ms: i64) -> Result<&FlagRecord> {
        let flag = self.state.flags.get_mut(session_id).ok_or_else(|| Error::UnknownFlag(session_id.into()))?;
        if flag.status != FlagStatus::Pending {
            return Err(Error::AlreadyReviewed(format!("{session_id} is {}", flag.status.as_str())));
        }
        flag.status = match verdict {
            Verdict::Confirmed => FlagStatus::Confirmed,
            Verdict::Cleared => FlagStatus::Cleared,
        };
        flag.note = note;
        flag.reviewed_at_ms = Some(now_ms);
        Ok(flag)
    }

    /// Pending flags, strongest match first, then oldest flag, then id.
    pub fn pending_queue(&self, limit: usize) -> Vec<&FlagRecord> {
        let mut pending: Vec<&FlagRecord> = self.state.flags.values().filter(|f| f.status == FlagStatus::Pending).collect();
        pending.sort_by(|a, b| {
            b.top_similarity()
                .total_cmp(&a.top_similarity())
                .then(a.created_at_ms.cmp(&b.created_at_ms))
                .then_with(|| a.session_id.cmp(&b.session_id))
        });
        pending.truncate(limit);
        pending
    }
}
