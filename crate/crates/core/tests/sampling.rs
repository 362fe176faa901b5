use std::collections::BTreeSet;

use proptest::prelude::*;
use ringwatch_core::sampling::{
    eligible_pair_counts, negative_eligible, sample_negative_pairs, sample_positive_pairs, split_users, BatchSampler,
    PairLabel, SessionMeta, SplitName,
};
use ringwatch_core::session::DeviceContext;

fn metas() -> impl Strategy<Value = Vec<SessionMeta>> {
    prop::collection::vec((0usize..12, 0usize..2, 0usize..2, 0usize..3), 2..60).prop_map(|raw| {
        raw.into_iter()
            .enumerate()
            .map(|(i, (u, kb, mouse, region))| SessionMeta {
                session_id: format!("s{i}"),
                user_id: format!("u{u}"),
                device: DeviceContext {
                    keyboard_layout: format!("kb{kb}"),
                    mouse_kind: format!("m{mouse}"),
                    region: format!("r{region}"),
                },
                demographics: Default::default(),
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn positive_pairs_join_two_sessions_of_one_user(m in metas(), n in 1usize..80, seed in any::<u64>()) {
        let (n_pos, _) = eligible_pair_counts(&m);
        match sample_positive_pairs(&m, n, seed) {
            Ok(pairs) => {
                prop_assert_eq!(pairs.len(), n);
                let by_id = |id: &str| m.iter().find(|s| s.session_id == id).unwrap();
                for p in &pairs {
                    prop_assert_eq!(p.label, PairLabel::Positive);
                    prop_assert_ne!(&p.session_a, &p.session_b);
                    prop_assert_eq!(&by_id(&p.session_a).user_id, &by_id(&p.session_b).user_id);
                }
                let distinct: BTreeSet<_> = pairs.iter().map(|p| (&p.session_a, &p.session_b)).collect();
                prop_assert_eq!(distinct.len(), n.min(n_pos));
                prop_assert_eq!(sample_positive_pairs(&m, n, seed).unwrap(), pairs);
            }
            Err(_) => prop_assert_eq!(n_pos, 0),
        }
    }

    #[test]
    fn negative_pairs_are_eligible_and_distinct(m in metas(), n in 1usize..80, seed in any::<u64>()) {
        let (_, n_neg) = eligible_pair_counts(&m);
        match sample_negative_pairs(&m, n, seed) {
            Ok(pairs) => {
                let by_id = |id: &str| m.iter().find(|s| s.session_id == id).unwrap();
                for p in &pairs {
                    prop_assert_eq!(p.label, PairLabel::Negative);
                    let (a, b) = (by_id(&p.session_a), by_id(&p.session_b));
                    prop_assert!(negative_eligible(a, b));
                    prop_assert_ne!(&a.user_id, &b.user_id);
                    prop_assert!(a.device.region == b.device.region
                        || (a.device.keyboard_layout == b.device.keyboard_layout && a.device.mouse_kind == b.device.mouse_kind));
                }
                let distinct: BTreeSet<_> = pairs.iter().map(|p| (&p.session_a, &p.session_b)).collect();
                prop_assert_eq!(distinct.len(), n.min(n_neg));
            }
            Err(_) => prop_assert_eq!(n_neg, 0),
        }
    }

    #[test]
    fn user_split_is_a_partition(n_users in 5usize..300, seed in any::<u64>()) {
        let users: Vec<String> = (0..n_users).flat_map(|u| [format!("u{u}"), format!("u{u}")]).collect();
        let split = split_users(&users, (0.6, 0.2, 0.2), seed).unwrap();
        let (tr, va, te) = (split.users(SplitName::Train), split.users(SplitName::Validation), split.users(SplitName::Test));
        prop_assert_eq!(tr.len() + va.len() + te.len(), n_users);
        prop_assert!(tr.is_disjoint(va) && tr.is_disjoint(te) && va.is_disjoint(te));
        let expect = |r: f64| (r * n_users as f64).round() as usize;
        prop_assert_eq!(va.len(), expect(0.2));
        prop_assert_eq!(te.len(), expect(0.2));
    }

    #[test]
    fn batches_pair_sessions_of_distinct_users(
        sizes in prop::collection::vec(1usize..5, 2..40), b in 2usize..10, seed in any::<u64>(),
    ) {
        let mut next = 0;
        let groups: Vec<Vec<usize>> = sizes.iter().map(|&k| { let g = (next..next + k).collect(); next += k; g }).collect();
        let owner = |i: usize| groups.iter().position(|g| g.contains(&i)).unwrap();
        let mut sampler = BatchSampler::new(groups.clone(), seed);
        let eligible = sizes.iter().filter(|&&k| k >= 2).count();
        prop_assert_eq!(sampler.eligible_users(), eligible);
        match sampler.next_batch(b) {
            Ok((a, p)) => {
                prop_assert_eq!(a.len(), b);
                let users: BTreeSet<usize> = a.iter().map(|&i| owner(i)).collect();
                prop_assert_eq!(users.len(), b);
                for (x, y) in a.iter().zip(&p) {
                    prop_assert_ne!(x, y);
                    prop_assert_eq!(owner(*x), owner(*y));
                }
            }
            Err(_) => prop_assert!(eligible < b),
        }
    }
}
