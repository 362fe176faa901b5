//! The t-test keystroke baseline.
//!
//! Each session is reduced to its digraph latency samples. Two sessions are
//! compared with one Welch test per shared digraph; the similarity is the
//! count-weighted fraction of digraphs where "same typist" is *not* rejected
//! at [`ALPHA`].

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::features::{digraph_latencies, DIGRAPH_MIN_COUNT};
use crate::session::{match_keystrokes, SessionRecord, ValidationPolicy};
use crate::stats::welch_t;
use crate::{Error, Result};

pub const ALPHA: f64 = 0.01;
pub const MIN_SHARED_DIGRAPHS: usize = 5;

/// Digraph → clipped down-down latency samples. Only digraphs with at least
/// [`DIGRAPH_MIN_COUNT`] samples are kept.
pub type DigraphSampleMap = BTreeMap<String, Vec<f64>>;

pub fn digraph_samples(s: &SessionRecord, policy: &ValidationPolicy) -> Result<DigraphSampleMap> {
    let (strokes, _) = match_keystrokes(&s.key_events);
    if strokes.len() < policy.min_keystrokes {
        return Err(Error::InsufficientKeystrokeData);
    }
    let mut map = digraph_latencies(s);
    map.retain(|_, v| v.len() >= DIGRAPH_MIN_COUNT);
    Ok(map)
}

/// Similarity in `[0, 1]` between two prepared sample maps.
pub fn sample_map_similarity(a: &DigraphSampleMap, b: &DigraphSampleMap) -> Result<f64> {
    let mut shared = 0;
    let mut kept = 0.0;
    let mut total = 0.0;
    for (digraph, sa) in a {
        let Some(sb) = b.get(digraph) else { continue };
        shared += 1;
        let weight = sa.len().min(sb.len()) as f64;
        let test = welch_t(sa, sb)?;
        total += weight;
        if test.p_value > ALPHA {
            kept += weight;
        }
    }
    if shared < MIN_SHARED_DIGRAPHS {
        return Err(Error::InsufficientOverlap { shared, needed: MIN_SHARED_DIGRAPHS });
    }
    Ok(kept / total)
}

pub fn ttest_similarity(sa: &SessionRecord, sb: &SessionRecord, policy: &ValidationPolicy) -> Result<f64> {
    sample_map_similarity(&digraph_samples(sa, policy)?, &digraph_samples(sb, policy)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::{DeviceContext, Demographics, KeyEvent};
    use alloc::vec;

    fn typed(codes: &[&str], gap: u64) -> SessionRecord {
        let mut key_events = Vec::new();
        for (i, c) in codes.iter().enumerate() {
            let t = i as u64 * gap;
            key_events.push(KeyEvent::down(t, *c));
            key_events.push(KeyEvent::up(t + gap / 2, *c));
        }
        SessionRecord {
            session_id: "s".into(),
            user_id: "u".into(),
            started_at_ms: 0,
            device: DeviceContext {
                keyboard_layout: "us".into(),
                mouse_kind: "optical".into(),
                region: "eu".into(),
            },
            demographics: Demographics::default(),
            key_events,
            mouse_events: vec![],
        }
    }

    const LOOSE: ValidationPolicy = ValidationPolicy { min_keystrokes: 1, min_mouse_moves: 1 };

    #[test]
    fn abab_keeps_only_frequent_digraphs() {
        let s = typed(&["KeyA", "KeyB", "KeyA", "KeyB", "KeyA", "KeyB"], 100);
        let map = digraph_samples(&s, &LOOSE).unwrap();
        assert_eq!(map.len(), 1);
        assert_eq!(map["KeyA→KeyB"], vec![100.0; 3]);
    }

    #[test]
    fn unrepeated_digraphs_give_empty_map() {
        let s = typed(&["KeyA", "KeyB", "KeyC", "KeyD"], 100);
        assert!(digraph_samples(&s, &LOOSE).unwrap().is_empty());
    }

    #[test]
    fn requires_usable_session() {
        let s = typed(&["KeyA", "KeyB"], 100);
        assert_eq!(
            digraph_samples(&s, &ValidationPolicy::default()),
            Err(Error::InsufficientKeystrokeData)
        );
    }

    #[test]
    fn overlap_minimum() {
        let mut a = DigraphSampleMap::new();
        for d in ["a", "b", "c", "d"] {
            a.insert(d.into(), vec![1.0, 2.0, 3.0]);
        }
        assert_eq!(
            sample_map_similarity(&a, &a),
            Err(Error::InsufficientOverlap { shared: 4, needed: 5 })
        );
        a.insert("e".into(), vec![1.0, 2.0, 3.0]);
        assert_eq!(sample_map_similarity(&a, &a), Ok(1.0));
    }

    #[test]
    fn weights_use_smaller_count() {
        let mut a = DigraphSampleMap::new();
        let mut b = DigraphSampleMap::new();
        for d in ["a", "b", "c", "d"] {
            a.insert(d.into(), vec![10.0, 11.0, 12.0, 13.0]);
            b.insert(d.into(), vec![10.0, 11.0, 12.0]);
        }
        // one rejected digraph with weight 10 vs four kept with weight 3
        a.insert("z".into(), (0..10).map(|i| 100.0 + i as f64 * 0.1).collect());
        b.insert("z".into(), (0..12).map(|i| 900.0 + i as f64 * 0.1).collect());
        let s = sample_map_similarity(&a, &b).unwrap();
        assert!((s - 12.0 / 22.0).abs() < 1e-15);
    }
}
