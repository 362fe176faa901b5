//! Fixed-length behavioral feature vectors.
//!
//! Keystroke vector (112 values):
//!
//! | range     | content                                                   |
//! |-----------|-----------------------------------------------------------|
//! | `0..4`    | dwell mean, std, median, IQR (ms)                         |
//! | `4..8`    | down-down flight mean, std, median, IQR (ms)              |
//! | `8..28`   | dwell histogram, 20 log bins over 10 ms .. 1 s            |
//! | `28..48`  | flight histogram, 20 log bins over 10 ms .. 2 s           |
//! | `48..80`  | mean latency per vocabulary digraph (0 when absent)       |
//! | `80..112` | presence flag per vocabulary digraph                      |
//!
//! Mouse vector (68 values): mean/std/median/IQR of speed (px/s),
//! acceleration (px/s²), curvature (rad/px), pause duration (ms) and click
//! hold (ms), then 16-bin speed, direction and curvature histograms.
//!
//! Timing samples are clipped to `[1, 5000]` ms. Every statistic is computed
//! from differences, so a uniform shift of timestamps or screen coordinates
//! leaves the vectors unchanged.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::math::{log_histogram, sqrt, summary4};
use crate::session::{click_holds, match_keystrokes, validate_session, MouseKind, SessionRecord, ValidationPolicy};
use crate::{Error, Result};

pub const KEYSTROKE_DIM: usize = 112;
pub const MOUSE_DIM: usize = 68;
pub const COMBINED_DIM: usize = KEYSTROKE_DIM + MOUSE_DIM;
pub const VOCAB_SIZE: usize = 32;
/// Occurrences needed before a digraph counts as present.
pub const DIGRAPH_MIN_COUNT: usize = 3;
pub const CLIP_MIN_MS: f64 = 1.0;
pub const CLIP_MAX_MS: f64 = 5000.0;
/// Gap between consecutive moves that counts as a pause.
pub const PAUSE_MS: u64 = 500;
pub const EPS_STD: f64 = 1e-6;

const TIME_BINS: usize = 20;
const MOUSE_BINS: usize = 16;

/// The three input configurations the embedding networks are trained on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    Keystroke,
    Mouse,
    Combined,
}

impl FeatureSet {
    pub fn dim(self) -> usize {
        match self {
            FeatureSet::Keystroke => KEYSTROKE_DIM,
            FeatureSet::Mouse => MOUSE_DIM,
            FeatureSet::Combined => COMBINED_DIM,
        }
    }

    pub fn from_dim(dim: usize) -> Option<Self> {
        match dim {
            KEYSTROKE_DIM => Some(FeatureSet::Keystroke),
            MOUSE_DIM => Some(FeatureSet::Mouse),
            COMBINED_DIM => Some(FeatureSet::Combined),
            _ => None,
        }
    }

    pub fn needs_keystrokes(self) -> bool {
        matches!(self, FeatureSet::Keystroke | FeatureSet::Combined)
    }

    pub fn needs_mouse(self) -> bool {
        matches!(self, FeatureSet::Mouse | FeatureSet::Combined)
    }
}

pub fn digraph_key(first: &str, second: &str) -> String {
    format!("{first}→{second}")
}

pub(crate) fn clip_ms(v: f64) -> f64 {
    v.clamp(CLIP_MIN_MS, CLIP_MAX_MS)
}

/// Down-down latencies of adjacent matched keystrokes grouped by digraph.
/// Samples are clipped to the timing bounds.
pub(crate) fn digraph_latencies(s: &SessionRecord) -> BTreeMap<String, Vec<f64>> {
    let (strokes, _) = match_keystrokes(&s.key_events);
    let mut map: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for w in strokes.windows(2) {
        let latency = (w[1].down_ms - w[0].down_ms) as f64;
        map.entry(digraph_key(w[0].code, w[1].code)).or_default().push(clip_ms(latency));
    }
    map
}

/// The digraphs whose latencies feed the keystroke vector. Slots beyond the
/// digraphs seen in the training corpus are `None` and always read as absent.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DigraphVocabulary {
    entries: Vec<Option<String>>,
}

impl DigraphVocabulary {
    /// Builds a vocabulary from explicit slots; missing slots are padded.
    pub fn from_entries(mut entries: Vec<Option<String>>) -> Result<Self> {
        if entries.len() > VOCAB_SIZE {
            return Err(Error::DimensionMismatch { expected: VOCAB_SIZE, got: entries.len() });
        }
        entries.resize(VOCAB_SIZE, None);
        Ok(Self { entries })
    }

    pub fn empty() -> Self {
        Self { entries: alloc::vec![None; VOCAB_SIZE] }
    }

    pub fn entries(&self) -> &[Option<String>] {
        &self.entries
    }

    pub fn present(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().flatten().map(String::as_str)
    }
}

/// Top [`VOCAB_SIZE`] digraphs by total occurrence over the usable keystroke
/// sessions of `corpus`, ties broken by the lexicographically smaller pair.
pub fn build_digraph_vocab<'a>(
    corpus: impl IntoIterator<Item = &'a SessionRecord>,
    policy: &ValidationPolicy,
) -> Result<DigraphVocabulary> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut usable = 0;
    for s in corpus {
        if !validate_session(s, policy).usable_for_keystroke {
            continue;
        }
        usable += 1;
        for (digraph, samples) in digraph_latencies(s) {
            *counts.entry(digraph).or_default() += samples.len();
        }
    }
    if usable == 0 {
        return Err(Error::EmptyCorpus);
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    // BTreeMap iteration is already lexicographic; a stable sort on count keeps it as the tie-break.
    ranked.sort_by(|a, b| b.1.cmp(&a.1));
    DigraphVocabulary::from_entries(ranked.into_iter().take(VOCAB_SIZE).map(|(d, _)| Some(d)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeystrokeFeatures(pub Vec<f64>);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MouseFeatures(pub Vec<f64>);

pub fn extract_keystroke_features(
    s: &SessionRecord,
    vocab: &DigraphVocabulary,
    policy: &ValidationPolicy,
) -> Result<KeystrokeFeatures> {
    let (strokes, _) = match_keystrokes(&s.key_events);
    if strokes.len() < policy.min_keystrokes {
        return Err(Error::InsufficientKeystrokeData);
    }
    let dwell: Vec<f64> = strokes.iter().map(|k| clip_ms(k.dwell_ms() as f64)).collect();
    let flight: Vec<f64> = strokes
        .windows(2)
        .map(|w| clip_ms((w[1].down_ms - w[0].down_ms) as f64))
        .collect();

    let mut v = Vec::with_capacity(KEYSTROKE_DIM);
    v.extend_from_slice(&summary4(&dwell));
    v.extend_from_slice(&summary4(&flight));
    v.extend(log_histogram(&dwell, 10.0, 1000.0, TIME_BINS));
    v.extend(log_histogram(&flight, 10.0, 2000.0, TIME_BINS));

    let latencies = digraph_latencies(s);
    let mut flags = Vec::with_capacity(VOCAB_SIZE);
    for slot in vocab.entries() {
        match slot.as_ref().and_then(|d| latencies.get(d)) {
            Some(samples) if samples.len() >= DIGRAPH_MIN_COUNT => {
                v.push(samples.iter().sum::<f64>() / samples.len() as f64);
                flags.push(1.0);
            }
            _ => {
                v.push(0.0);
                flags.push(0.0);
            }
        }
    }
    v.extend(flags);
    debug_assert_eq!(v.len(), KEYSTROKE_DIM);
    Ok(KeystrokeFeatures(v))
}

#[derive(Clone, Copy)]
struct Segment {
    dt_ms: f64,
    len: f64,
    speed: f64,
    heading: Option<f64>,
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a;
    while a > PI {
        a -= 2.0 * PI;
    }
    while a <= -PI {
        a += 2.0 * PI;
    }
    a
}

fn direction_histogram(angles: &[f64]) -> Vec<f64> {
    let mut hist = alloc::vec![0.0; MOUSE_BINS];
    if angles.is_empty() {
        return hist;
    }
    for &a in angles {
        let idx = libm::floor((a + PI) / (2.0 * PI) * MOUSE_BINS as f64) as usize;
        // atan2 can return exactly +pi, which is the same direction as -pi.
        hist[idx % MOUSE_BINS] += 1.0;
    }
    let n = angles.len() as f64;
    hist.iter_mut().for_each(|h| *h /= n);
    hist
}

pub fn extract_mouse_features(s: &SessionRecord, policy: &ValidationPolicy) -> Result<MouseFeatures> {
    if s.move_count() < policy.min_mouse_moves {
        return Err(Error::InsufficientMouseData);
    }
    let mut speeds = Vec::new();
    let mut accels = Vec::new();
    let mut curvatures = Vec::new();
    let mut headings = Vec::new();
    let mut pauses = Vec::new();

    let mut prev_point: Option<(u64, f64, f64)> = None;
    let mut prev_seg: Option<Segment> = None;
    for ev in s.mouse_events.iter().filter(|e| e.kind == MouseKind::Move) {
        let (x, y) = (ev.x as f64, ev.y as f64);
        if let Some((pt, px, py)) = prev_point {
            let dt = ev.t_ms - pt;
            if dt > PAUSE_MS {
                pauses.push(dt as f64);
                prev_seg = None;
            } else if dt > 0 {
                let (dx, dy) = (x - px, y - py);
                let len = sqrt(dx * dx + dy * dy);
                let seg = Segment {
                    dt_ms: dt as f64,
                    len,
                    speed: len / (dt as f64 / 1000.0),
                    heading: (len > 0.0).then(|| libm::atan2(dy, dx)),
                };
                speeds.push(seg.speed);
                if let Some(h) = seg.heading {
                    headings.push(h);
                }
                if let Some(p) = prev_seg {
                    let dt_mid = (p.dt_ms + seg.dt_ms) / 2.0 / 1000.0;
                    accels.push((seg.speed - p.speed) / dt_mid);
                    if let (Some(h0), Some(h1)) = (p.heading, seg.heading) {
                        curvatures.push(wrap_angle(h1 - h0).abs() / ((p.len + seg.len) / 2.0));
                    }
                }
                prev_seg = Some(seg);
            }
        }
        prev_point = Some((ev.t_ms, x, y));
    }
    let holds = click_holds(&s.mouse_events);

    let mut v = Vec::with_capacity(MOUSE_DIM);
    for channel in [&speeds, &accels, &curvatures, &pauses, &holds] {
        v.extend_from_slice(&summary4(channel));
    }
    v.extend(log_histogram(&speeds, 10.0, 10_000.0, MOUSE_BINS));
    v.extend(direction_histogram(&headings));
    v.extend(log_histogram(&curvatures, 1e-4, 1.0, MOUSE_BINS));
    debug_assert_eq!(v.len(), MOUSE_DIM);
    Ok(MouseFeatures(v))
}

/// Raw (unnormalized) vector for one input configuration.
pub fn extract(
    set: FeatureSet,
    s: &SessionRecord,
    vocab: &DigraphVocabulary,
    policy: &ValidationPolicy,
) -> Result<Vec<f64>> {
    Ok(match set {
        FeatureSet::Keystroke => extract_keystroke_features(s, vocab, policy)?.0,
        FeatureSet::Mouse => extract_mouse_features(s, policy)?.0,
        FeatureSet::Combined => {
            let mut v = extract_keystroke_features(s, vocab, policy)?.0;
            v.extend(extract_mouse_features(s, policy)?.0);
            v
        }
    })
}

/// Per-dimension mean and population standard deviation, frozen after
/// fitting on the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Mean 0, std 1: normalization is the identity.
    pub fn identity(dim: usize) -> Self {
        Self { mean: alloc::vec![0.0; dim], std: alloc::vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check(v)?;
        Ok(v.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| (x - m) / s).collect())
    }

    pub fn denormalize(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check(v)?;
        Ok(v.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| x * s + m).collect())
    }

    fn check(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: v.len() });
        }
        Ok(())
    }
}

/// Single-pass (Welford) per-dimension statistics; `std` is clamped to
/// [`EPS_STD`].
pub fn fit_norm_stats<V: AsRef<[f64]>>(vectors: &[V]) -> Result<NormStats> {
    if vectors.len() < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: vectors.len() });
    }
    let dim = vectors[0].as_ref().len();
    let mut mean = alloc::vec![0.0; dim];
    let mut m2 = alloc::vec![0.0; dim];
    for (n, v) in vectors.iter().enumerate() {
        let v = v.as_ref();
        if v.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: v.len() });
        }
        let count = (n + 1) as f64;
        for ((x, m), s) in v.iter().zip(mean.iter_mut()).zip(m2.iter_mut()) {
            let delta = x - *m;
            *m += delta / count;
            *s += delta * (x - *m);
        }
    }
    let n = vectors.len() as f64;
    let std = m2.iter().map(|s| sqrt(s / n).max(EPS_STD)).collect();
    Ok(NormStats { mean, std })
}
