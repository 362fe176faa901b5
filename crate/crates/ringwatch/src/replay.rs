//! Chronological replay of a corpus through a detector, and ring-detection
//! statistics against generator ground truth.

use std::collections::{BTreeMap, BTreeSet};

use ringwatch_core::detect::{Detector, EnrollOutcome};
use ringwatch_core::methods::Scorer;
use ringwatch_core::session::SessionRecord;
use ringwatch_core::synth::RingScenario;
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Sessions by start time, then id.
pub fn chronological(sessions: &[SessionRecord]) -> Vec<&SessionRecord> {
    let mut order: Vec<&SessionRecord> = sessions.iter().collect();
    order.sort_by(|a, b| a.started_at_ms.cmp(&b.started_at_ms).then_with(|| a.session_id.cmp(&b.session_id)));
    order
}

/// Enrolls every session in chronological order, using the start time as
/// the enrollment clock.
pub fn replay<S: Scorer>(detector: &mut Detector<S>, sessions: &[SessionRecord]) -> Result<Vec<EnrollOutcome>> {
    chronological(sessions)
        .into_iter()
        .map(|s| Ok(detector.enroll(s, None, s.started_at_ms)?))
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RingReplayStats {
    /// Ring sessions enrolled once their operator had used a second identity.
    pub ring_sessions_eligible: usize,
    /// Eligible sessions flagged with a candidate from the same operator.
    pub ring_detected: usize,
    /// Eligible sessions flagged for any reason.
    pub ring_flagged: usize,
    pub ring_recall: f64,
    pub honest_sessions: usize,
    pub honest_flagged: usize,
    pub honest_flag_rate: f64,
}

/// Scores a replay against ground truth. `outcomes` must be in enrollment
/// order.
pub fn ring_stats(outcomes: &[EnrollOutcome], sessions: &[SessionRecord], scenario: &RingScenario) -> RingReplayStats {
    let user_of: BTreeMap<&str, &str> = sessions.iter().map(|s| (s.session_id.as_str(), s.user_id.as_str())).collect();
    let controller = scenario.controller_of();
    let mut identities_seen: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    let mut st = RingReplayStats::default();
    for o in outcomes {
        let user = user_of[o.session_id.as_str()];
        match controller.get(user) {
            Some(&op) => {
                let seen = identities_seen.entry(op).or_default();
                seen.insert(user);
                if seen.len() < 2 {
                    continue;
                }
                st.ring_sessions_eligible += 1;
                st.ring_flagged += usize::from(o.flagged);
                let same_operator = o.matches.iter().any(|m| controller.get(m.user_id.as_str()) == Some(&op));
                st.ring_detected += usize::from(same_operator);
            }
            None => {
                st.honest_sessions += 1;
                st.honest_flagged += usize::from(o.flagged);
            }
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    st.ring_recall = ratio(st.ring_detected, st.ring_sessions_eligible);
    st.honest_flag_rate = ratio(st.honest_flagged, st.honest_sessions);
    st
}
