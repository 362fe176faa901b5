use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ringwatch_core::baseline::{digraph_samples, ttest_similarity};
use ringwatch_core::eval::auroc;
use ringwatch_core::features::{
    build_digraph_vocab, digraph_key, extract_keystroke_features, extract_mouse_features, fit_norm_stats,
    DigraphVocabulary, FeatureSet, CLIP_MAX_MS, CLIP_MIN_MS, DIGRAPH_MIN_COUNT, EPS_STD, VOCAB_SIZE,
};
use ringwatch_core::methods::SessionScorer;
use ringwatch_core::nn::{init_network, NetworkConfig};
use ringwatch_core::session::{
    match_keystrokes, validate_session, DeviceContext, KeyEvent, KeyKind, MouseButton, MouseEvent, MouseKind,
    SessionRecord, ValidationPolicy,
};
use ringwatch_core::synth::{gen_population, gen_session, GeneratorConfig, SessionLength};

const CODES: [&str; 5] = ["KeyA", "KeyB", "KeyC", "Space", "KeyE"];

fn session(key_events: Vec<KeyEvent>, mouse_events: Vec<MouseEvent>) -> SessionRecord {
    SessionRecord {
        session_id: "s".into(),
        user_id: "u".into(),
        started_at_ms: 0,
        device: DeviceContext::default(),
        demographics: Default::default(),
        key_events,
        mouse_events,
    }
}

/// Random key stream: mostly well-formed presses with stray downs and ups.
fn key_stream() -> impl Strategy<Value = Vec<KeyEvent>> {
    prop::collection::vec((0..CODES.len(), 1u64..400, 0u8..10), 0..120).prop_map(|raw| {
        let mut t = 0;
        let mut out = Vec::new();
        for (c, gap, kind) in raw {
            t += gap;
            let code = CODES[c];
            match kind {
                0 => out.push(KeyEvent::down(t, code)),
                1 => out.push(KeyEvent::up(t, code)),
                _ => {
                    out.push(KeyEvent::down(t, code));
                    out.push(KeyEvent::up(t + gap / 2 + 1, code));
                }
            }
        }
        out.sort_by_key(|e| e.t_ms);
        out
    })
}

fn mouse_stream() -> impl Strategy<Value = Vec<MouseEvent>> {
    prop::collection::vec((1u64..900, 0u32..500, 0u32..500, 0u8..12), 2..150).prop_map(|raw| {
        let mut t = 0;
        let mut out = Vec::new();
        for (dt, x, y, kind) in raw {
            t += dt;
            match kind {
                0 => out.push(MouseEvent::button(t, MouseKind::ButtonDown, x, y, MouseButton::Left)),
                1 => out.push(MouseEvent::button(t, MouseKind::ButtonUp, x, y, MouseButton::Left)),
                _ => out.push(MouseEvent::moved(t, x, y)),
            }
        }
        out
    })
}

/// Independent matching rule: a key_down matches iff the next event with the
/// same code is a key_up; every other key event is dropped.
fn oracle_match(events: &[KeyEvent]) -> (Vec<(String, u64, u64)>, usize) {
    let mut matched = Vec::new();
    let mut used = vec![false; events.len()];
    for (i, e) in events.iter().enumerate() {
        if e.kind != KeyKind::KeyDown {
            continue;
        }
        if let Some(j) = (i + 1..events.len()).find(|&j| events[j].code == e.code) {
            if events[j].kind == KeyKind::KeyUp {
                matched.push((e.code.clone(), e.t_ms, events[j].t_ms));
                used[i] = true;
                used[j] = true;
            }
        }
    }
    (matched, used.iter().filter(|u| !**u).count())
}

const LOOSE: ValidationPolicy = ValidationPolicy { min_keystrokes: 2, min_mouse_moves: 2 };

proptest! {
    #[test]
    fn keystroke_matching_equals_oracle(events in key_stream()) {
        let (got, dropped) = match_keystrokes(&events);
        let got: Vec<(String, u64, u64)> = got.iter().map(|k| (k.code.to_string(), k.down_ms, k.up_ms)).collect();
        let (want, want_dropped) = oracle_match(&events);
        prop_assert_eq!(got, want);
        prop_assert_eq!(dropped, want_dropped);
        let s = session(events, vec![]);
        prop_assert_eq!(validate_session(&s, &LOOSE), validate_session(&s, &LOOSE));
    }

    #[test]
    fn keystroke_features_ignore_time_translation(events in key_stream(), shift in 0u64..10_000_000) {
        let vocab = DigraphVocabulary::from_entries(
            CODES.iter().flat_map(|a| CODES.iter().map(move |b| Some(digraph_key(a, b)))).take(VOCAB_SIZE).collect(),
        ).unwrap();
        let a = session(events.clone(), vec![]);
        let b = session(events.into_iter().map(|mut e| { e.t_ms += shift; e }).collect(), vec![]);
        match extract_keystroke_features(&a, &vocab, &LOOSE) {
            Ok(fa) => {
                let fb = extract_keystroke_features(&b, &vocab, &LOOSE).unwrap();
                prop_assert_eq!(&fa, &fb);
                for range in [8..28, 28..48] {
                    let sum: f64 = fa.0[range].iter().sum();
                    prop_assert!(sum == 0.0 || (sum - 1.0).abs() < 1e-9);
                }
            }
            Err(_) => prop_assert!(extract_keystroke_features(&b, &vocab, &LOOSE).is_err()),
        }
    }

    #[test]
    fn mouse_features_ignore_screen_and_time_translation(
        events in mouse_stream(), dx in 0u32..3000, dy in 0u32..3000, shift in 0u64..10_000_000,
    ) {
        let a = session(vec![], events.clone());
        let b = session(vec![], events.into_iter().map(|mut e| { e.x += dx; e.y += dy; e.t_ms += shift; e }).collect());
        match extract_mouse_features(&a, &LOOSE) {
            Ok(fa) => {
                let fb = extract_mouse_features(&b, &LOOSE).unwrap();
                prop_assert_eq!(&fa, &fb);
                for range in [20..36, 36..52, 52..68] {
                    let sum: f64 = fa.0[range].iter().sum();
                    prop_assert!(sum == 0.0 || (sum - 1.0).abs() < 1e-9);
                }
            }
            Err(_) => prop_assert!(extract_mouse_features(&b, &LOOSE).is_err()),
        }
    }

    #[test]
    fn digraph_samples_equal_adjacent_grouping(events in key_stream()) {
        let s = session(events, vec![]);
        let Ok(got) = digraph_samples(&s, &LOOSE) else { return Ok(()) };
        let (strokes, _) = oracle_match(&s.key_events);
        let mut want: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for w in strokes.windows(2) {
            let lat = ((w[1].1 - w[0].1) as f64).clamp(CLIP_MIN_MS, CLIP_MAX_MS);
            want.entry(digraph_key(&w[0].0, &w[1].0)).or_default().push(lat);
        }
        want.retain(|_, v| v.len() >= DIGRAPH_MIN_COUNT);
        prop_assert_eq!(got, want);
    }

    #[test]
    fn auroc_invariant_under_increasing_transforms(
        pos in prop::collection::vec(0u32..1000, 1..60),
        neg in prop::collection::vec(0u32..1000, 1..60),
    ) {
        let p: Vec<f64> = pos.iter().map(|&v| v as f64 / 1000.0).collect();
        let n: Vec<f64> = neg.iter().map(|&v| v as f64 / 1000.0).collect();
        let base = auroc(&p, &n).unwrap();
        let transforms: [fn(f64) -> f64; 3] = [|x| (3.0 * x).exp(), |x| x * x * x - 7.0, |x| (x + 1.0).ln() * 100.0];
        for f in transforms {
            let pt: Vec<f64> = p.iter().map(|&x| f(x)).collect();
            let nt: Vec<f64> = n.iter().map(|&x| f(x)).collect();
            prop_assert_eq!(auroc(&pt, &nt).unwrap(), base);
        }
        prop_assert!((auroc(&p, &n).unwrap() + auroc(&n, &p).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn vocabulary_equals_exhaustive_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let letters: Vec<String> = (b'a'..=b'h').map(|c| format!("Key{}", (c as char).to_ascii_uppercase())).collect();
    let corpus: Vec<SessionRecord> = (0..12)
        .map(|_| {
            let mut keys = Vec::new();
            let mut t = 0;
            for _ in 0..rng.random_range(40..160) {
                // skewed code choice so counts differ
                let i = (rng.random_range(0.0_f64..1.0).powi(2) * letters.len() as f64) as usize;
                keys.push(KeyEvent::down(t, letters[i].clone()));
                keys.push(KeyEvent::up(t + 60, letters[i].clone()));
                t += 150;
            }
            session(keys, vec![])
        })
        .collect();
    let policy = ValidationPolicy { min_keystrokes: 50, min_mouse_moves: 0 };
    let vocab = build_digraph_vocab(&corpus, &policy).unwrap();

    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for s in corpus.iter().filter(|s| validate_session(s, &policy).usable_for_keystroke) {
        let (strokes, _) = oracle_match(&s.key_events);
        for w in strokes.windows(2) {
            *counts.entry(digraph_key(&w[0].0, &w[1].0)).or_default() += 1;
        }
    }
    assert!(counts.len() > VOCAB_SIZE);
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let want: Vec<Option<String>> = ranked.into_iter().take(VOCAB_SIZE).map(|(d, _)| Some(d)).collect();
    assert_eq!(vocab.entries(), want.as_slice());
}

#[test]
fn single_digraph_corpus_pads_the_vocabulary() {
    let keys: Vec<KeyEvent> = (0..60)
        .flat_map(|i| {
            let code = if i % 2 == 0 { "KeyA" } else { "KeyB" };
            [KeyEvent::down(i * 200, code), KeyEvent::up(i * 200 + 50, code)]
        })
        .collect();
    // only "KeyA→KeyB" and "KeyB→KeyA" occur; keep the first
    let mut s = session(keys, vec![]);
    s.key_events.truncate(4);
    let vocab = build_digraph_vocab([&s], &ValidationPolicy { min_keystrokes: 2, min_mouse_moves: 0 }).unwrap();
    assert_eq!(vocab.present().collect::<Vec<_>>(), ["KeyA→KeyB"]);
    assert_eq!(vocab.entries().iter().filter(|e| e.is_none()).count(), VOCAB_SIZE - 1);
}

#[test]
fn norm_stats_match_two_pass_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let vectors: Vec<Vec<f64>> = (0..100).map(|_| (0..20).map(|_| rng.random_range(-10.0..10.0)).collect()).collect();
    let stats = fit_norm_stats(&vectors).unwrap();
    for d in 0..20 {
        let mean = vectors.iter().map(|v| v[d]).sum::<f64>() / 100.0;
        let var = vectors.iter().map(|v| (v[d] - mean).powi(2)).sum::<f64>() / 100.0;
        assert!((stats.mean[d] - mean).abs() <= 1e-12);
        assert!((stats.std[d] - var.sqrt().max(EPS_STD)).abs() <= 1e-12);
    }
    let v: Vec<f64> = (0..20).map(|_| rng.random_range(-50.0..50.0)).collect();
    let back = stats.denormalize(&stats.normalize(&v).unwrap()).unwrap();
    assert!(v.iter().zip(&back).all(|(a, b)| (a - b).abs() <= 1e-9));
    assert!(stats.normalize(&stats.mean).unwrap().iter().all(|&z| z == 0.0));

    let same = fit_norm_stats(&[vec![3.0, 4.0], vec![3.0, 4.0]]).unwrap();
    assert_eq!(same.std, vec![EPS_STD, EPS_STD]);
    let hand = fit_norm_stats(&[vec![0.0], vec![2.0]]).unwrap();
    assert_eq!((hand.mean[0], hand.std[0]), (1.0, 1.0));
}

fn synthetic_sessions(n: usize) -> Vec<SessionRecord> {
    let cfg = GeneratorConfig { n_users: n, ..GeneratorConfig::default() };
    let length = SessionLength { keystrokes: 400, mouse_moves: 600 };
    gen_population(&cfg).unwrap().iter().enumerate().map(|(i, p)| gen_session(p, i as u64, length)).collect()
}

#[test]
fn similarity_scores_are_symmetric_and_self_maximal() {
    let sessions = synthetic_sessions(6);
    let policy = ValidationPolicy::default();
    let mut scorers = vec![SessionScorer::ttest(policy)];
    for set in [FeatureSet::Keystroke, FeatureSet::Mouse, FeatureSet::Combined] {
        let mut net = init_network(&NetworkConfig::for_features(set, 1)).unwrap();
        net.vocab = build_digraph_vocab(&sessions, &policy).unwrap();
        scorers.push(SessionScorer::deep(net, policy).unwrap());
    }
    for sc in &scorers {
        for a in &sessions {
            let own = sc.score_sessions(a, a).unwrap().unwrap();
            assert_eq!(own, 1.0);
            for b in &sessions {
                let ab = sc.score_sessions(a, b).unwrap();
                assert_eq!(ab, sc.score_sessions(b, a).unwrap());
                if let Some(v) = ab {
                    assert!((0.0..=own).contains(&v));
                }
            }
        }
    }
    for a in &sessions {
        assert_eq!(ttest_similarity(a, a, &policy).unwrap(), 1.0);
    }
}
